use moe_core::association::{correlated, extract_signal, spatial_filter_weights};
use moe_core::channel::{mix, sample_scenario, synthesize_blocks, ScenarioConfig};
use moe_core::covariance::{estimate_covariance, temporal_smooth, CovarianceMatrix};
use moe_core::dataset::{generate_dataset, read_dataset};
use moe_core::label::encode_label;
use moe_core::manifold::ArrayGeometry;
use moe_core::music::{estimate_doas, mean_doa_error, mirror_to_upper, GridSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn coherent_pair(seed: u64) -> (moe_core::channel::Scenario, Vec<CovarianceMatrix>, Vec<moe_core::channel::Snapshot>) {
    let geom = ArrayGeometry::dense_uca();
    let config = ScenarioConfig {
        snr_range: (10.0, 10.0),
        delay_range: (0, 0),
        ..ScenarioConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scenario = sample_scenario(&mut rng, &config, Some(encode_label(1, 2, 2).unwrap())).unwrap();
    let blocks = synthesize_blocks(&scenario, &geom, 5, mix(seed, 9)).unwrap();
    let covs = blocks.iter().map(|b| estimate_covariance(b).unwrap()).collect();
    (scenario, covs, blocks)
}

#[test]
fn smoothing_restores_direction_finding_for_coherent_paths() {
    let geom = ArrayGeometry::dense_uca();
    let grid = GridSpec::for_geometry(&geom);
    let (mut raw_err, mut smooth_err) = (Vec::new(), Vec::new());
    for seed in 0..30 {
        let (scenario, covs, _) = coherent_pair(seed);
        let truth: Vec<_> = scenario.directions().iter().map(mirror_to_upper).collect();
        let raw = estimate_doas(&covs[0], 2, &geom, &grid).unwrap();
        let smooth = estimate_doas(&temporal_smooth(&covs, 3).unwrap(), 2, &geom, &grid).unwrap();
        raw_err.push(mean_doa_error(&truth, &raw.directions()).unwrap_or(f64::INFINITY).to_degrees());
        smooth_err.push(mean_doa_error(&truth, &smooth.directions()).unwrap_or(f64::INFINITY).to_degrees());
    }
    let median = |v: &mut Vec<f64>| {
        v.sort_by(f64::total_cmp);
        v[v.len() / 2]
    };
    let (r, s) = (median(&mut raw_err), median(&mut smooth_err));
    assert!(s < 3.0, "smoothed median {s}");
    assert!(s < r, "smoothed {s} vs raw {r}");
}

#[test]
fn filtered_paths_of_one_source_correlate() {
    let geom = ArrayGeometry::dense_uca();
    let mut hits = 0;
    for seed in 0..20 {
        let (scenario, covs, blocks) = coherent_pair(100 + seed);
        let smoothed = temporal_smooth(&covs, 3).unwrap();
        let signals: Vec<_> = scenario
            .directions()
            .iter()
            .map(|d| {
                let w = spatial_filter_weights(&smoothed, &geom.steer(d)).unwrap();
                extract_signal(&w, &blocks[0]).unwrap()
            })
            .collect();
        hits += usize::from(correlated(&signals[0], &signals[1], 0.6).0);
    }
    assert!(hits >= 18, "{hits}/20");
}

#[test]
fn datasets_survive_a_file_round_trip() {
    let dir = tempfile::TempDir::new().unwrap();
    let path = dir.path().join("d.bin");
    let geom = ArrayGeometry::default_ura();
    let config = ScenarioConfig::default();
    let summary = generate_dataset(&config, &geom, "ura", 25, 3, &path).unwrap();
    assert_eq!(summary.count, 25);
    assert_eq!(summary.class_counts.iter().sum::<usize>(), 25);
    let (header, records) = read_dataset(&path).unwrap();
    assert_eq!((header.elements, header.count, header.seed), (6, 25, 3));
    assert_eq!(header.config, config);
    let again = moe_core::dataset::generate_records(&config, &geom, 25, 3).unwrap();
    assert_eq!(records.len(), again.len());
    for (a, b) in records.iter().zip(&again) {
        assert_eq!(a.class18, b.class18);
        assert_eq!(a.seed, b.seed);
        assert_eq!(a.feature, b.feature);
    }
}
