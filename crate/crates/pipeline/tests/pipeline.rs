use moe_core::channel::{mix, synthesize_blocks, ScenarioConfig};
use moe_core::label::encode_label;
use moe_core::manifold::{ArrayGeometry, DirectionPair};
use moe_core::moe::Criterion;
use moe_neural::build_rcnn;
use moe_pipeline::eval::{doa_error_deg, eval_doa_errors, quantiles, score_trial};
use moe_pipeline::pipeline::{required_blocks, MAX_BLOCKS};
use moe_pipeline::{
    run_pipeline, simulate_scenario, Error, ModelOrderEstimator, PipelineOptions, PredictedOrder,
};

fn config(snr: f64) -> ScenarioConfig {
    ScenarioConfig {
        snr_range: (snr, snr),
        ..ScenarioConfig::default()
    }
}

#[test]
fn single_path_scenario_takes_the_simplest_route() {
    let geom = ArrayGeometry::dense_uca();
    let options = PipelineOptions::for_geometry(&geom);
    let (scenario, blocks) = simulate_scenario(&config(10.0), &geom, Some(1), 3, MAX_BLOCKS).unwrap();
    let report = run_pipeline(&blocks, &geom, &mut ModelOrderEstimator::Oracle, Some(&scenario.label), &options).unwrap();
    assert_eq!(report.smoothing_blocks, Some(2));
    assert_eq!(report.doas.len(), 1);
    let a = report.association.as_ref().unwrap();
    assert_eq!(a.partition, vec![vec![0]]);
    assert_eq!(a.correlation_count, 0);
    assert!(doa_error_deg(&geom, &options, &scenario, &report) < 3.0);
    assert!(!report.to_text().is_empty());
}

#[test]
fn overloaded_scenes_skip_direction_finding() {
    let geom = ArrayGeometry::default_uca();
    let options = PipelineOptions::for_geometry(&geom);
    let (scenario, blocks) = simulate_scenario(&config(10.0), &geom, Some(19), 5, 1).unwrap();
    assert!(scenario.label.is_overloaded());
    let report = run_pipeline(&blocks, &geom, &mut ModelOrderEstimator::Oracle, Some(&scenario.label), &options).unwrap();
    assert!(report.is_overloaded());
    assert!(report.doas.is_empty() && report.association.is_none() && report.smoothing_blocks.is_none());
    assert!(report.to_text().contains("overloaded"));
}

#[test]
fn missing_blocks_are_requested() {
    let geom = ArrayGeometry::default_uca();
    let options = PipelineOptions::for_geometry(&geom);
    let class = encode_label(1, 3, 3).unwrap();
    let (scenario, blocks) = simulate_scenario(&config(10.0), &geom, Some(class), 1, 5).unwrap();
    let err = run_pipeline(&blocks, &geom, &mut ModelOrderEstimator::Oracle, Some(&scenario.label), &options).unwrap_err();
    assert!(matches!(err, Error::InsufficientBlocks { required: 7, available: 5 }), "{err}");
    assert_eq!(err.kind(), "insufficient-blocks");
    assert!(run_pipeline(&[], &geom, &mut ModelOrderEstimator::Oracle, None, &options).is_err());
    let err = run_pipeline(&blocks, &geom, &mut ModelOrderEstimator::Oracle, None, &options).unwrap_err();
    assert!(matches!(err, Error::Usage(_)));
}

#[test]
fn smoothing_depth_follows_the_predicted_path_count() {
    let geom = ArrayGeometry::dense_uca();
    let options = PipelineOptions::for_geometry(&geom);
    for class in 1..=18u8 {
        let (scenario, blocks) = simulate_scenario(&config(10.0), &geom, Some(class), u64::from(class), MAX_BLOCKS).unwrap();
        let l = scenario.label;
        let report = run_pipeline(&blocks, &geom, &mut ModelOrderEstimator::Oracle, Some(&l), &options).unwrap();
        let b = report.smoothing_blocks.unwrap();
        assert_eq!(b, l.n_p as usize + 1);
        assert!(2 * b - 1 <= required_blocks(l.n_p) && required_blocks(l.n_p) <= MAX_BLOCKS);
        assert!(report.doas.len() <= l.n_m as usize);
        let a = report.association.unwrap();
        let mut covered: Vec<usize> = a.partition.concat();
        covered.sort_unstable();
        assert_eq!(covered, (0..report.doas.len()).collect::<Vec<_>>());
    }
}

#[test]
fn classical_and_network_estimators_drive_the_pipeline() {
    let geom = ArrayGeometry::default_uca();
    let options = PipelineOptions::for_geometry(&geom);
    let (_, blocks) = simulate_scenario(&config(10.0), &geom, Some(3), 8, MAX_BLOCKS).unwrap();

    let mut mdl = ModelOrderEstimator::Classical(Criterion::Mdl);
    let report = run_pipeline(&blocks, &geom, &mut mdl, None, &options).unwrap();
    let PredictedOrder::Regular { n_s, n_m, n_p, .. } = report.predicted else {
        panic!("two paths cannot overload six elements");
    };
    assert_eq!((n_s, n_p), (n_m, 1));

    let mut net = ModelOrderEstimator::Network(Box::new(build_rcnn(19, 6, 0).unwrap()));
    let report = run_pipeline(&blocks, &geom, &mut net, None, &options).unwrap();
    assert!((1..=19).contains(&report.predicted.class()));

    let mut wrong = ModelOrderEstimator::Network(Box::new(build_rcnn(18, 12, 0).unwrap()));
    assert!(run_pipeline(&blocks, &geom, &mut wrong, None, &options).is_err());
}

#[test]
fn noiseless_grid_aligned_source_is_found_exactly() {
    let geom = ArrayGeometry::dense_uca();
    let options = PipelineOptions::for_geometry(&geom);
    let mut errors = Vec::new();
    for k in 0..20u64 {
        let (mut scenario, _) = simulate_scenario(&config(10.0), &geom, Some(1), k, 1).unwrap();
        let el = 10.0 + (k * 4) as f64;
        let az = (k * 17 % 360) as f64;
        scenario.sources[0].paths[0].direction = DirectionPair::from_degrees(el, az).unwrap();
        let scenario = scenario.with_noise_variance(0.0);
        let blocks = synthesize_blocks(&scenario, &geom, 3, mix(k, 1)).unwrap();
        let report =
            run_pipeline(&blocks, &geom, &mut ModelOrderEstimator::Oracle, Some(&scenario.label), &options).unwrap();
        errors.push(doa_error_deg(&geom, &options, &scenario, &report));
    }
    let p90 = quantiles(&errors, &[0.9]).unwrap()[0];
    assert!(p90 < 1.0, "{p90}");
}

#[test]
fn order_estimation_failure_degrades_coherent_doas() {
    // zero relative delay: the paths are fully coherent and MDL sees one
    let geom = ArrayGeometry::dense_uca();
    let options = PipelineOptions::for_geometry(&geom);
    let cfg = ScenarioConfig {
        delay_range: (0, 0),
        ..config(10.0)
    };
    let class = encode_label(1, 3, 3).unwrap();
    let recovered = |est: &mut ModelOrderEstimator| {
        let mut hits = 0;
        for k in 0..60u64 {
            let (scenario, blocks) = simulate_scenario(&cfg, &geom, Some(class), mix(21, k), MAX_BLOCKS).unwrap();
            let report = run_pipeline(&blocks, &geom, est, Some(&scenario.label), &options).unwrap();
            if score_trial(&geom, &options, &scenario, &report, 5.0).all_within {
                hits += 1;
            }
        }
        hits
    };
    let oracle = recovered(&mut ModelOrderEstimator::Oracle);
    let mdl = recovered(&mut ModelOrderEstimator::Classical(Criterion::Mdl));
    assert!(mdl < oracle, "mdl {mdl} vs oracle {oracle}");
}

#[test]
fn evaluation_is_reproducible() {
    let geom = ArrayGeometry::dense_uca();
    let options = PipelineOptions::for_geometry(&geom);
    let run = || eval_doa_errors(&config(5.0), &geom, None, 8, 4, &mut ModelOrderEstimator::Oracle, &options).unwrap();
    assert_eq!(run(), run());
}
