//! Block-fading coherent-multipath channel: scenario sampling and per-block
//! synthesis of array snapshots.

use std::f64::consts::{PI, TAU};

use ndarray::Array2;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::label::{path_groups, ModelOrderLabel, NUM_CLASSES, OVERLOADED_CLASS};
use crate::manifold::{ArrayGeometry, DirectionPair, DEFAULT_CARRIER_HZ, SPEED_OF_LIGHT};
use crate::waveform::{shaped_qpsk, SAMPLES_PER_SYMBOL};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    /// LOS SNR interval in dB.
    pub snr_range: (f64, f64),
    pub samples_per_block: usize,
    /// Multipath power relative to LOS, dB.
    pub multipath_power_range: (f64, f64),
    /// Inclusive multipath delay interval, samples.
    pub delay_range: (usize, usize),
    /// Radians.
    pub cone_half_angle: f64,
    pub carrier_hz: f64,
    /// m/s.
    pub max_velocity: f64,
    pub samples_per_symbol: usize,
    pub overloaded_fraction: f64,
    /// Regular classes drawn uniformly when no class is forced.
    pub classes: Vec<u8>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            snr_range: (-10.0, 10.0),
            samples_per_block: 200,
            multipath_power_range: (-3.0, 0.0),
            delay_range: (1, 20),
            cone_half_angle: 15f64.to_radians(),
            carrier_hz: DEFAULT_CARRIER_HZ,
            max_velocity: 100.0,
            samples_per_symbol: SAMPLES_PER_SYMBOL,
            overloaded_fraction: 0.0,
            classes: (1..=NUM_CLASSES).collect(),
        }
    }
}

impl ScenarioConfig {
    /// Seconds.
    pub fn coherence_time(&self) -> f64 {
        SPEED_OF_LIGHT / (self.max_velocity * self.carrier_hz)
    }

    pub fn validate(&self, elements: usize) -> Result<()> {
        let bad = |what: &'static str, value: String| Err(Error::OutOfRange { what, value });
        let (lo, hi) = self.snr_range;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return bad("snr range", format!("{lo}..{hi}"));
        }
        let (lo, hi) = self.multipath_power_range;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return bad("multipath power range", format!("{lo}..{hi}"));
        }
        if self.delay_range.0 > self.delay_range.1 {
            return bad("delay range", format!("{:?}", self.delay_range));
        }
        if !(self.cone_half_angle.is_finite() && (0.0..=PI).contains(&self.cone_half_angle)) {
            return bad("cone half angle", self.cone_half_angle.to_string());
        }
        if self.samples_per_block < elements.max(1) {
            return bad("samples per block", self.samples_per_block.to_string());
        }
        if self.samples_per_symbol == 0 {
            return bad("samples per symbol", "0".into());
        }
        if !(self.carrier_hz > 0.0 && self.max_velocity > 0.0) {
            return bad("carrier/velocity", format!("{} / {}", self.carrier_hz, self.max_velocity));
        }
        if !(0.0..=1.0).contains(&self.overloaded_fraction) {
            return bad("overloaded fraction", self.overloaded_fraction.to_string());
        }
        if self.classes.is_empty() {
            return Err(Error::EmptyInput("class list"));
        }
        if let Some(c) = self.classes.iter().find(|c| !(1..=NUM_CLASSES).contains(c)) {
            return bad("class", c.to_string());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Path {
    pub direction: DirectionPair,
    /// Samples; zero for the LOS path.
    pub delay: usize,
    /// dB relative to the source's LOS path.
    pub power_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Source {
    /// Seed of the source waveform.
    pub waveform_seed: u64,
    /// `paths[0]` is the LOS path.
    pub paths: Vec<Path>,
}

/// Ground-truth multipath state. Gains and waveforms of block `b` are pure
/// functions of the stored seeds and `b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub label: ModelOrderLabel,
    pub sources: Vec<Source>,
    pub los_snr_db: f64,
    pub noise_variance: f64,
    pub gain_seed: u64,
    pub samples_per_block: usize,
    pub samples_per_symbol: usize,
}

impl Scenario {
    pub fn paths(&self) -> impl Iterator<Item = &Path> {
        self.sources.iter().flat_map(|s| s.paths.iter())
    }

    /// All path directions, source by source.
    pub fn directions(&self) -> Vec<DirectionPair> {
        self.paths().map(|p| p.direction).collect()
    }

    /// Source index of every path, in `directions` order.
    pub fn path_sources(&self) -> Vec<usize> {
        self.sources
            .iter()
            .enumerate()
            .flat_map(|(s, src)| std::iter::repeat_n(s, src.paths.len()))
            .collect()
    }

    pub fn with_noise_variance(mut self, variance: f64) -> Self {
        self.noise_variance = variance;
        self
    }

    /// Unit-variance circular complex Gaussian gains of block `b`, one per
    /// path in `directions` order.
    pub fn path_gains(&self, block: usize) -> Vec<Complex64> {
        let mut rng = stream_rng(self.gain_seed, block as u64);
        self.paths().map(|_| complex_gaussian(&mut rng, 1.0)).collect()
    }

    pub fn max_delay(&self) -> usize {
        self.paths().map(|p| p.delay).max().unwrap_or(0)
    }

    /// Waveform segment of source `s` for block `b`, `N + max_delay` samples
    /// long. Output sample `t` of a path with delay `δ` reads index
    /// `t + max_delay − δ`.
    pub fn waveform(&self, s: usize, block: usize) -> Vec<Complex64> {
        let seed = mix(self.sources[s].waveform_seed, block as u64);
        shaped_qpsk(seed, self.samples_per_block + self.max_delay(), self.samples_per_symbol)
    }
}

/// E×N samples of one block.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    samples: Array2<Complex64>,
    block_index: usize,
}

impl Snapshot {
    pub fn new(samples: Array2<Complex64>, block_index: usize) -> Result<Self> {
        if samples.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::InvalidInput("non-finite snapshot sample".into()));
        }
        Ok(Self {
            samples,
            block_index,
        })
    }

    pub fn samples(&self) -> &Array2<Complex64> {
        &self.samples
    }

    pub fn block_index(&self) -> usize {
        self.block_index
    }

    pub fn elements(&self) -> usize {
        self.samples.nrows()
    }

    pub fn len(&self) -> usize {
        self.samples.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// SplitMix64 finalizer over `a ⊕ φ·b`.
pub fn mix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent generator for stream `stream` of `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R, variance: f64) -> Complex64 {
    let s = (variance / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re * s, im * s)
}

/// Direction uniform over the sphere: elevation density ∝ sin(elevation).
pub fn uniform_direction<R: Rng + ?Sized>(rng: &mut R) -> DirectionPair {
    let u: f64 = rng.random();
    let el = (1.0 - 2.0 * u).clamp(-1.0, 1.0).acos();
    let az = rng.random_range(0.0..TAU);
    DirectionPair::wrapped(el, az)
}

/// Direction uniform over the spherical cap of half-angle `half` around
/// `center`.
pub fn direction_in_cone<R: Rng + ?Sized>(rng: &mut R, center: &DirectionPair, half: f64) -> DirectionPair {
    let cos_a = rng.random_range(half.cos()..=1.0);
    let sin_a = (1.0 - cos_a * cos_a).max(0.0).sqrt();
    let beta = rng.random_range(0.0..TAU);
    let u = center.unit_vector();
    // orthonormal pair perpendicular to u
    let helper = if u[2].abs() < 0.9 { [0.0, 0.0, 1.0] } else { [1.0, 0.0, 0.0] };
    let e1 = normalize(cross(u, helper));
    let e2 = cross(u, e1);
    let (sb, cb) = beta.sin_cos();
    let v = [0, 1, 2].map(|k| cos_a * u[k] + sin_a * (cb * e1[k] + sb * e2[k]));
    DirectionPair::from_unit_vector(v)
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn normalize(v: [f64; 3]) -> [f64; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    v.map(|x| x / n)
}

/// Path counts per source of an overloaded scene: 6..=8 paths split over
/// 1..=5 sources, uniform over compositions.
fn overloaded_groups<R: Rng + ?Sized>(rng: &mut R) -> Vec<u8> {
    let n_m: usize = rng.random_range(6..=8);
    let n_s: usize = rng.random_range(1..=5);
    let mut cuts: Vec<usize> = (1..n_m).collect();
    // partial Fisher–Yates: the first n_s − 1 entries become a uniform subset
    for i in 0..n_s - 1 {
        let j = rng.random_range(i..cuts.len());
        cuts.swap(i, j);
    }
    let mut chosen: Vec<usize> = cuts[..n_s - 1].to_vec();
    chosen.sort_unstable();
    let mut groups = Vec::with_capacity(n_s);
    let mut prev = 0;
    for c in chosen.into_iter().chain(std::iter::once(n_m)) {
        groups.push((c - prev) as u8);
        prev = c;
    }
    groups
}

pub fn sample_scenario<R: Rng + ?Sized>(
    rng: &mut R,
    config: &ScenarioConfig,
    forced_class18: Option<u8>,
) -> Result<Scenario> {
    let class = match forced_class18 {
        Some(c) if (1..=OVERLOADED_CLASS).contains(&c) => c,
        Some(c) => {
            return Err(Error::OutOfRange {
                what: "forced class",
                value: c.to_string(),
            })
        }
        None => {
            if config.overloaded_fraction > 0.0 && rng.random::<f64>() < config.overloaded_fraction {
                OVERLOADED_CLASS
            } else {
                config.classes[rng.random_range(0..config.classes.len())]
            }
        }
    };
    let (label, groups) = if class == OVERLOADED_CLASS {
        let groups = overloaded_groups(rng);
        (ModelOrderLabel::overloaded(&groups)?, groups)
    } else {
        (ModelOrderLabel::from_class(class)?, path_groups(class)?.to_vec())
    };

    let (snr_lo, snr_hi) = config.snr_range;
    let los_snr_db = if snr_lo < snr_hi { rng.random_range(snr_lo..snr_hi) } else { snr_lo };
    let (p_lo, p_hi) = config.multipath_power_range;
    let (d_lo, d_hi) = config.delay_range;

    let sources = groups
        .iter()
        .map(|&count| {
            let los = uniform_direction(rng);
            let mut paths = vec![Path {
                direction: los,
                delay: 0,
                power_db: 0.0,
            }];
            for _ in 1..count {
                let direction = direction_in_cone(rng, &los, config.cone_half_angle);
                let power_db = if p_lo < p_hi { rng.random_range(p_lo..=p_hi) } else { p_lo };
                let delay = rng.random_range(d_lo..=d_hi);
                paths.push(Path {
                    direction,
                    delay,
                    power_db,
                });
            }
            Source {
                waveform_seed: rng.random(),
                paths,
            }
        })
        .collect();

    Ok(Scenario {
        label,
        sources,
        los_snr_db,
        noise_variance: 10f64.powf(-los_snr_db / 10.0),
        gain_seed: rng.random(),
        samples_per_block: config.samples_per_block,
        samples_per_symbol: config.samples_per_symbol,
    })
}

/// `X_b = Σ_s Σ_p h_{s,p}[b]·a(ψ_{s,p})·S_s(n − δ_{s,p}) + w`.
///
/// Each source is scaled so that its LOS path delivers unit average power
/// per element; `rng` drives the noise only.
pub fn synthesize_block<R: Rng + ?Sized>(
    scenario: &Scenario,
    geom: &ArrayGeometry,
    block_index: usize,
    rng: &mut R,
) -> Result<Snapshot> {
    let e = geom.elements();
    let n = scenario.samples_per_block;
    let max_delay = scenario.max_delay();
    let gains = scenario.path_gains(block_index);
    let mut x = Array2::<Complex64>::zeros((e, n));
    let mut k = 0;
    for (s, src) in scenario.sources.iter().enumerate() {
        let wave = scenario.waveform(s, block_index);
        let los = geom.steer(&src.paths[0].direction);
        let norm2: f64 = los.iter().map(|z| z.norm_sqr()).sum();
        let source_amp = (e as f64 / norm2).sqrt();
        for path in &src.paths {
            let a = geom.steer(&path.direction);
            let amp = source_amp * 10f64.powf(path.power_db / 20.0);
            let g = gains[k] * amp;
            k += 1;
            let offset = max_delay - path.delay;
            for i in 0..e {
                let ai = a[i] * g;
                let mut row = x.row_mut(i);
                for (t, v) in row.iter_mut().enumerate() {
                    *v += ai * wave[t + offset];
                }
            }
        }
    }
    if scenario.noise_variance > 0.0 {
        for v in x.iter_mut() {
            *v += complex_gaussian(rng, scenario.noise_variance);
        }
    }
    Snapshot::new(x, block_index)
}

/// Blocks `0..count` with noise drawn from `stream_rng(noise_seed, b)`.
pub fn synthesize_blocks(
    scenario: &Scenario,
    geom: &ArrayGeometry,
    count: usize,
    noise_seed: u64,
) -> Result<Vec<Snapshot>> {
    (0..count)
        .map(|b| synthesize_block(scenario, geom, b, &mut stream_rng(noise_seed, b as u64)))
        .collect()
}
