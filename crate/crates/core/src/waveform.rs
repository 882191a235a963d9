//! Pulse-shaped QPSK source waveforms.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const SAMPLES_PER_SYMBOL: usize = 32;
pub const ROLL_OFF: f64 = 0.35;
pub const SPAN_SYMBOLS: usize = 8;

/// Root-raised-cosine taps sampled at `sps` samples per symbol over `span`
/// symbols, scaled so that a unit-power symbol stream filtered by them has
/// unit average power.
pub fn rrc_taps(sps: usize, span: usize, beta: f64) -> Vec<f64> {
    let len = sps * span + 1;
    let center = (len / 2) as f64;
    let mut taps: Vec<f64> = (0..len)
        .map(|k| {
            let t = (k as f64 - center) / sps as f64;
            rrc_value(t, beta)
        })
        .collect();
    let energy: f64 = taps.iter().map(|h| h * h).sum();
    let scale = (sps as f64 / energy).sqrt();
    taps.iter_mut().for_each(|h| *h *= scale);
    taps
}

fn rrc_value(t: f64, beta: f64) -> f64 {
    if t.abs() < 1e-12 {
        return 1.0 - beta + 4.0 * beta / PI;
    }
    let singular = 1.0 / (4.0 * beta);
    if (t.abs() - singular).abs() < 1e-9 {
        let a = PI / (4.0 * beta);
        return beta / 2f64.sqrt() * ((1.0 + 2.0 / PI) * a.sin() + (1.0 - 2.0 / PI) * a.cos());
    }
    let num = (PI * t * (1.0 - beta)).sin() + 4.0 * beta * t * (PI * t * (1.0 + beta)).cos();
    let den = PI * t * (1.0 - (4.0 * beta * t).powi(2));
    num / den
}

/// Unit-average-power QPSK stream, root-raised-cosine shaped at
/// [`SAMPLES_PER_SYMBOL`] samples per symbol. Deterministic per seed.
pub fn gen_source_symbols(seed: u64, n_samples: usize) -> Vec<Complex64> {
    shaped_qpsk(seed, n_samples, SAMPLES_PER_SYMBOL)
}

pub fn shaped_qpsk(seed: u64, n_samples: usize, sps: usize) -> Vec<Complex64> {
    let taps = rrc_taps(sps, SPAN_SYMBOLS, ROLL_OFF);
    let last = taps.len() - 1;
    let n_symbols = (n_samples + last).div_ceil(sps) + 1;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let symbols: Vec<Complex64> = (0..n_symbols)
        .map(|_| {
            let bits: u8 = rng.random_range(0..4);
            let re = if bits & 1 == 0 { FRAC_1_SQRT_2 } else { -FRAC_1_SQRT_2 };
            let im = if bits & 2 == 0 { FRAC_1_SQRT_2 } else { -FRAC_1_SQRT_2 };
            Complex64::new(re, im)
        })
        .collect();

    // y[n] = Σ_q s[q] h[n + last - q·sps]; starting at n = 0 every output
    // sample sees a fully populated filter window.
    (0..n_samples)
        .map(|n| {
            let hi = n + last;
            let q_min = n.div_ceil(sps);
            let q_max = hi / sps;
            (q_min..=q_max)
                .map(|q| symbols[q] * taps[hi - q * sps])
                .sum()
        })
        .collect()
}
