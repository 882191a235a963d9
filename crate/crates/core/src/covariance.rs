//! Sample covariance, the real/imaginary feature tensor, and temporal
//! smoothing across fading-independent blocks.

use ndarray::Array2;
use num_complex::Complex64;

use crate::channel::Snapshot;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceMatrix {
    entries: Array2<Complex64>,
    snapshots: usize,
    blocks: usize,
}

impl CovarianceMatrix {
    /// Wraps an existing matrix. Checks squareness, finiteness and Hermitian
    /// symmetry to a relative tolerance of 1e-10.
    pub fn new(entries: Array2<Complex64>, snapshots: usize, blocks: usize) -> Result<Self> {
        let (r, c) = entries.dim();
        if r != c || r == 0 {
            return Err(Error::InvalidInput(format!("covariance must be square, got {r}×{c}")));
        }
        if entries.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::InvalidInput("non-finite covariance entry".into()));
        }
        let cov = Self {
            entries,
            snapshots,
            blocks,
        };
        if cov.hermitian_defect() > 1e-10 {
            return Err(Error::InvalidInput("covariance is not Hermitian".into()));
        }
        Ok(cov)
    }

    /// `R = X·Xᴴ / N` for an `E × N` sample matrix.
    pub fn from_samples(samples: &Array2<Complex64>) -> Result<Self> {
        let (e, n) = samples.dim();
        if e == 0 || n == 0 {
            return Err(Error::EmptyInput("snapshot samples"));
        }
        if samples.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::InvalidInput("non-finite sample".into()));
        }
        let mut r = Array2::<Complex64>::zeros((e, e));
        for i in 0..e {
            let xi = samples.row(i);
            for j in i..e {
                let xj = samples.row(j);
                let acc: Complex64 = xi.iter().zip(xj.iter()).map(|(a, b)| a * b.conj()).sum();
                let v = acc / n as f64;
                r[[i, j]] = v;
                r[[j, i]] = v.conj();
            }
            r[[i, i]].im = 0.0;
        }
        Ok(Self {
            entries: r,
            snapshots: n,
            blocks: 1,
        })
    }

    pub fn entries(&self) -> &Array2<Complex64> {
        &self.entries
    }

    pub fn into_entries(self) -> Array2<Complex64> {
        self.entries
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    /// Samples per block behind the estimate.
    pub fn snapshots(&self) -> usize {
        self.snapshots
    }

    /// Number of blocks averaged (1 for a raw estimate).
    pub fn blocks(&self) -> usize {
        self.blocks
    }

    pub fn trace(&self) -> f64 {
        self.entries.diag().iter().map(|z| z.re).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.entries.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// `‖R − Rᴴ‖_F / ‖R‖_F` (0 for the zero matrix).
    pub fn hermitian_defect(&self) -> f64 {
        let norm = self.frobenius_norm();
        if norm == 0.0 {
            return 0.0;
        }
        let e = self.dim();
        let mut acc = 0.0;
        for i in 0..e {
            for j in 0..e {
                acc += (self.entries[[i, j]] - self.entries[[j, i]].conj()).norm_sqr();
            }
        }
        acc.sqrt() / norm
    }

    /// Multiplies every entry by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            entries: self.entries.mapv(|z| z * factor),
            snapshots: self.snapshots,
            blocks: self.blocks,
        }
    }
}

pub fn estimate_covariance(snapshot: &Snapshot) -> Result<CovarianceMatrix> {
    CovarianceMatrix::from_samples(snapshot.samples())
}

/// Real-valued `E × E × 2` feature: channel 0 holds the real part, channel 1
/// the imaginary part. Stored row-major as `(i, j, channel)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Feature {
    elements: usize,
    values: Vec<f64>,
}

impl Feature {
    pub fn from_values(elements: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != elements * elements * 2 {
            return Err(Error::InvalidInput(format!(
                "feature needs {} values, got {}",
                elements * elements * 2,
                values.len()
            )));
        }
        Ok(Self { elements, values })
    }

    pub fn elements(&self) -> usize {
        self.elements
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn at(&self, i: usize, j: usize, channel: usize) -> f64 {
        self.values[(i * self.elements + j) * 2 + channel]
    }

    /// Channel-major `(channel, i, j)` copy, the layout networks consume.
    pub fn channels_first(&self) -> Vec<f64> {
        let e = self.elements;
        let mut out = vec![0.0; 2 * e * e];
        for c in 0..2 {
            for i in 0..e {
                for j in 0..e {
                    out[(c * e + i) * e + j] = self.at(i, j, c);
                }
            }
        }
        out
    }

    /// Reassembles the complex matrix.
    pub fn to_matrix(&self) -> Array2<Complex64> {
        let e = self.elements;
        Array2::from_shape_fn((e, e), |(i, j)| Complex64::new(self.at(i, j, 0), self.at(i, j, 1)))
    }
}

pub fn to_feature(cov: &CovarianceMatrix) -> Feature {
    let e = cov.dim();
    let mut values = Vec::with_capacity(e * e * 2);
    for z in cov.entries().iter() {
        values.push(z.re);
        values.push(z.im);
    }
    Feature { elements: e, values }
}

/// Averages the odd-indexed block covariances `R_1, R_3, …, R_{2B−1}`.
/// `blocks[0]` is `R_1`, so at least `2B − 1` entries are needed.
pub fn temporal_smooth(blocks: &[CovarianceMatrix], b: usize) -> Result<CovarianceMatrix> {
    if b == 0 {
        return Err(Error::OutOfRange {
            what: "smoothing block count",
            value: "0".into(),
        });
    }
    let required = 2 * b - 1;
    if blocks.len() < required {
        return Err(Error::InsufficientBlocks {
            required,
            available: blocks.len(),
        });
    }
    let e = blocks[0].dim();
    let mut acc = Array2::<Complex64>::zeros((e, e));
    for cov in blocks.iter().step_by(2).take(b) {
        if cov.dim() != e {
            return Err(Error::InvalidInput("block covariances differ in size".into()));
        }
        acc += cov.entries();
    }
    acc.mapv_inplace(|z| z / b as f64);
    Ok(CovarianceMatrix {
        entries: acc,
        snapshots: blocks[0].snapshots,
        blocks: b,
    })
}
