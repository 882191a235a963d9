//! Central finite-difference gradient checks.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::layers::{Layer, Mode};
use crate::loss::{batch_loss, LossSpec};
use crate::tensor::Tensor;

/// Gradients whose analytic and numeric magnitudes are both below this are
/// compared absolutely rather than relatively.
pub const MAGNITUDE_FLOOR: f64 = 1e-6;

/// Scalar objective on a layer's output.
#[derive(Debug, Clone)]
pub enum Objective {
    /// `Σ r ⊙ y` with standard-normal `r` drawn from the seed.
    Projection(u64),
    /// Mean cross-entropy of N×C logits against one-based classes.
    CrossEntropy(Vec<u8>),
}

impl Objective {
    fn value_and_grad(&self, y: &Tensor) -> Result<(f64, Tensor)> {
        match self {
            Objective::Projection(seed) => {
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                let r: Vec<f64> = (0..y.len()).map(|_| StandardNormal.sample(&mut rng)).collect();
                let v = r.iter().zip(y.data()).map(|(a, b)| a * b).sum();
                Ok((v, Tensor::new(y.shape().to_vec(), r)?))
            }
            Objective::CrossEntropy(classes) => batch_loss(y, classes, &LossSpec::standard()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// Parameter name or `"input"` of the worst entry.
    pub worst: String,
    pub checked: usize,
}

fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(MAGNITUDE_FLOOR)
}

/// Compares backpropagated gradients of every trainable parameter and of
/// the input with central differences of step `eps`. Differences are taken
/// in replay mode, so dropout masks, ReLU gates and pooling winners stay
/// those of the analytic pass.
pub fn check_gradients(
    layer: &mut dyn Layer,
    input: &Tensor,
    objective: &Objective,
    eps: f64,
) -> Result<GradCheckReport> {
    layer.visit_mut(&mut |p| p.grad.iter_mut().for_each(|g| *g = 0.0));
    let y = layer.forward(input, Mode::Train)?;
    let (_, dy) = objective.value_and_grad(&y)?;
    let dx = layer.backward(&dy)?;

    let mut analytic: Vec<(String, Vec<f64>)> = Vec::new();
    layer.visit(&mut |p| {
        if p.trainable {
            analytic.push((p.name.clone(), p.grad.clone()));
        }
    });

    let eval = |layer: &mut dyn Layer, x: &Tensor| -> Result<f64> {
        let y = layer.forward(x, Mode::Replay)?;
        Ok(objective.value_and_grad(&y)?.0)
    };

    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst: String::new(),
        checked: 0,
    };
    let mut record = |name: &str, a: f64, n: f64| {
        let e = relative_error(a, n);
        if !e.is_finite() || e > report.max_relative_error {
            report.max_relative_error = if e.is_finite() { e } else { f64::INFINITY };
            report.worst = name.to_string();
        }
        report.checked += 1;
    };

    for (k, (name, grads)) in analytic.iter().enumerate() {
        for (i, &a) in grads.iter().enumerate() {
            let mut numeric = 0.0;
            for sign in [1.0, -1.0] {
                nudge(layer, k, i, sign * eps);
                numeric += sign * eval(layer, input)?;
                nudge(layer, k, i, -sign * eps);
            }
            record(name, a, numeric / (2.0 * eps));
        }
    }
    let mut x = input.clone();
    for i in 0..x.len() {
        let orig = x.data()[i];
        x.data_mut()[i] = orig + eps;
        let up = eval(layer, &x)?;
        x.data_mut()[i] = orig - eps;
        let down = eval(layer, &x)?;
        x.data_mut()[i] = orig;
        record("input", dx.data()[i], (up - down) / (2.0 * eps));
    }
    if report.checked == 0 {
        return Err(Error::EmptyInput("gradient entries"));
    }
    Ok(report)
}

/// Adds `delta` to entry `i` of the `k`-th trainable parameter.
fn nudge(layer: &mut dyn Layer, k: usize, i: usize, delta: f64) {
    let mut seen = 0;
    layer.visit_mut(&mut |p| {
        if p.trainable {
            if seen == k {
                p.value[i] += delta;
            }
            seen += 1;
        }
    });
}
