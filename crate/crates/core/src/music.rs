//! 2-D MUSIC pseudo-spectrum over an elevation × azimuth grid, peak
//! extraction and DoA error scoring.

use std::f64::consts::{PI, TAU};
use std::fmt::Write as _;

use ndarray::Array2;
use num_complex::Complex64;

use crate::covariance::CovarianceMatrix;
use crate::eigen::hermitian_eigen;
use crate::error::{Error, Result};
use crate::manifold::{ArrayGeometry, DirectionPair};

const DENOMINATOR_FLOOR: f64 = 1e-12;
const LOW_SCORE_RATIO: f64 = 0.1;

/// Grid resolution in degrees. Axes start at zero and cover `[0°, 180°)`
/// and `[0°, 360°)`; with `upper_hemisphere` the elevation axis covers
/// `[0°, 90°]` instead.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub elevation_step_deg: f64,
    pub azimuth_step_deg: f64,
    pub upper_hemisphere: bool,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            elevation_step_deg: 1.0,
            azimuth_step_deg: 1.0,
            upper_hemisphere: false,
        }
    }
}

impl GridSpec {
    /// Default grid for `geom`. Planar arrays respond identically to a
    /// direction and its mirror through the array plane, so they search the
    /// upper hemisphere only.
    pub fn for_geometry(geom: &ArrayGeometry) -> Self {
        Self {
            upper_hemisphere: geom.is_planar(),
            ..Self::default()
        }
    }

    fn counts(&self) -> Result<(usize, usize)> {
        let ok = |s: f64| s.is_finite() && s > 0.0 && s <= 90.0;
        if !ok(self.elevation_step_deg) || !ok(self.azimuth_step_deg) {
            return Err(Error::OutOfRange {
                what: "grid step",
                value: format!("{} × {}", self.elevation_step_deg, self.azimuth_step_deg),
            });
        }
        let n_el = if self.upper_hemisphere {
            (90.0 / self.elevation_step_deg).floor() as usize + 1
        } else {
            (180.0 / self.elevation_step_deg).ceil() as usize
        };
        let n_az = (360.0 / self.azimuth_step_deg).ceil() as usize;
        Ok((n_el, n_az))
    }
}

/// Pseudo-spectrum samples; `values[[i, j]]` sits at elevation
/// `i·elevation_step`, azimuth `j·azimuth_step` (radians).
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumGrid {
    pub elevation_step: f64,
    pub azimuth_step: f64,
    pub values: Array2<f64>,
}

impl SpectrumGrid {
    pub fn elevation_at(&self, i: usize) -> f64 {
        i as f64 * self.elevation_step
    }

    pub fn azimuth_at(&self, j: usize) -> f64 {
        j as f64 * self.azimuth_step
    }

    /// Cell with the largest value.
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = ((0, 0), f64::MIN);
        for ((i, j), &v) in self.values.indexed_iter() {
            if v > best.1 {
                best = ((i, j), v);
            }
        }
        best.0
    }

    /// CSV dump: a header row of azimuths in degrees, then one row per
    /// elevation led by the elevation in degrees.
    pub fn to_text(&self) -> String {
        let (n_el, n_az) = self.values.dim();
        let mut out = String::from("elevation_deg\\azimuth_deg");
        for j in 0..n_az {
            write!(out, ",{}", fmt_deg(self.azimuth_at(j))).expect("string write");
        }
        out.push('\n');
        for i in 0..n_el {
            out.push_str(&fmt_deg(self.elevation_at(i)));
            for j in 0..n_az {
                write!(out, ",{:.6e}", self.values[[i, j]]).expect("string write");
            }
            out.push('\n');
        }
        out
    }
}

fn fmt_deg(rad: f64) -> String {
    let d = rad.to_degrees();
    if (d - d.round()).abs() < 1e-9 {
        format!("{}", d.round() as i64)
    } else {
        format!("{d:.4}")
    }
}

/// Eigenvectors of the `E − n_m` smallest eigenvalues, as columns.
pub fn noise_subspace(cov: &CovarianceMatrix, n_m: usize) -> Result<Array2<Complex64>> {
    let e = cov.dim();
    if n_m >= e {
        return Err(Error::ModelOrderTooLarge { order: n_m, elements: e });
    }
    if n_m == 0 {
        return Err(Error::OutOfRange {
            what: "model order",
            value: "0".into(),
        });
    }
    let eig = hermitian_eigen(cov)?;
    Ok(eig.eigenvectors().slice(ndarray::s![.., n_m..]).to_owned())
}

/// Rows of `Enᴴ`, so that each projection coefficient is a dot product.
struct NoiseProjector(Vec<Vec<Complex64>>);

impl NoiseProjector {
    fn new(cov: &CovarianceMatrix, n_m: usize) -> Result<Self> {
        let en = noise_subspace(cov, n_m)?;
        Ok(Self(en.columns().into_iter().map(|c| c.iter().map(|z| z.conj()).collect()).collect()))
    }

    fn value(&self, geom: &ArrayGeometry, dir: &DirectionPair, a: &mut [Complex64]) -> f64 {
        geom.steer_into(dir, a);
        let denom: f64 = self
            .0
            .iter()
            .map(|row| row.iter().zip(a.iter()).map(|(u, v)| u * v).sum::<Complex64>().norm_sqr())
            .sum();
        1.0 / denom.max(DENOMINATOR_FLOOR)
    }
}

pub fn music_spectrum(
    cov: &CovarianceMatrix,
    n_m: usize,
    geom: &ArrayGeometry,
    grid: &GridSpec,
) -> Result<SpectrumGrid> {
    if cov.dim() != geom.elements() {
        return Err(Error::InvalidInput(format!(
            "covariance is {0}×{0} but the array has {1} elements",
            cov.dim(),
            geom.elements()
        )));
    }
    let (n_el, n_az) = grid.counts()?;
    let enh = NoiseProjector::new(cov, n_m)?;
    let el_step = grid.elevation_step_deg.to_radians();
    let az_step = grid.azimuth_step_deg.to_radians();
    let mut values = Array2::<f64>::zeros((n_el, n_az));
    let mut a = vec![Complex64::new(0.0, 0.0); geom.elements()];
    for i in 0..n_el {
        let el = (i as f64 * el_step).min(PI * (1.0 - f64::EPSILON));
        for j in 0..n_az {
            let az = (j as f64 * az_step).min(TAU * (1.0 - f64::EPSILON));
            let dir = DirectionPair::new(el, az)?;
            values[[i, j]] = enh.value(geom, &dir, &mut a);
        }
    }
    Ok(SpectrumGrid {
        elevation_step: el_step,
        azimuth_step: az_step,
        values,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Peak {
    pub direction: DirectionPair,
    /// Spectrum value at the peak cell.
    pub score: f64,
    /// Score below a tenth of the strongest peak.
    pub low_score: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DoaEstimate {
    /// Strongest first.
    pub peaks: Vec<Peak>,
    /// Fewer local maxima than requested.
    pub short: bool,
}

impl DoaEstimate {
    pub fn directions(&self) -> Vec<DirectionPair> {
        self.peaks.iter().map(|p| p.direction).collect()
    }
}

/// Local maxima of the spectrum over the 8-neighborhood, azimuth wrapping.
/// Plateaus yield the first cell in row-major order.
pub fn local_maxima(grid: &SpectrumGrid) -> Vec<(usize, usize)> {
    let (n_el, n_az) = grid.values.dim();
    let v = &grid.values;
    let mut out = Vec::new();
    for i in 0..n_el {
        for j in 0..n_az {
            let c = v[[i, j]];
            let mut is_max = true;
            'nb: for di in -1i64..=1 {
                let ii = i as i64 + di;
                if ii < 0 || ii >= n_el as i64 {
                    continue;
                }
                for dj in -1i64..=1 {
                    if di == 0 && dj == 0 {
                        continue;
                    }
                    let jj = (j as i64 + dj).rem_euclid(n_az as i64) as usize;
                    let ii = ii as usize;
                    if (ii, jj) == (i, j) {
                        continue;
                    }
                    let n = v[[ii, jj]];
                    let earlier = (ii, jj) < (i, j);
                    if n > c || (earlier && n == c) {
                        is_max = false;
                        break 'nb;
                    }
                }
            }
            if is_max {
                out.push((i, j));
            }
        }
    }
    out
}

/// Vertex offset of a parabola through three log-magnitude samples,
/// clamped to half a cell.
fn parabolic_offset(left: f64, center: f64, right: f64) -> f64 {
    let (l, c, r) = (left.ln(), center.ln(), right.ln());
    let den = l - 2.0 * c + r;
    if den >= 0.0 || !den.is_finite() {
        return 0.0;
    }
    (0.5 * (l - r) / den).clamp(-0.5, 0.5)
}

fn refine(grid: &SpectrumGrid, i: usize, j: usize) -> DirectionPair {
    let (n_el, n_az) = grid.values.dim();
    let v = &grid.values;
    let c = v[[i, j]];
    let di = if i > 0 && i + 1 < n_el {
        parabolic_offset(v[[i - 1, j]], c, v[[i + 1, j]])
    } else {
        0.0
    };
    let dj = parabolic_offset(v[[i, (j + n_az - 1) % n_az]], c, v[[i, (j + 1) % n_az]]);
    let el = ((i as f64 + di) * grid.elevation_step).clamp(0.0, PI * (1.0 - f64::EPSILON));
    let az = (j as f64 + dj) * grid.azimuth_step;
    DirectionPair::wrapped(el, az)
}

/// Strongest `n_m` local maxima of the spectrum, refined per axis by
/// parabolic interpolation.
pub fn peaks_from_spectrum(grid: &SpectrumGrid, n_m: usize) -> DoaEstimate {
    let mut cells = local_maxima(grid);
    cells.sort_by(|a, b| grid.values[[b.0, b.1]].total_cmp(&grid.values[[a.0, a.1]]));
    let top = cells.first().map(|&(i, j)| grid.values[[i, j]]).unwrap_or(0.0);
    let short = cells.len() < n_m;
    let peaks = cells
        .into_iter()
        .take(n_m)
        .map(|(i, j)| {
            let score = grid.values[[i, j]];
            Peak {
                direction: refine(grid, i, j),
                score,
                low_score: score < LOW_SCORE_RATIO * top,
            }
        })
        .collect();
    DoaEstimate { peaks, short }
}

/// Top `n_m` local maxima, each refined per axis and scored by the
/// pseudo-spectrum at its refined direction.
pub fn estimate_doas(
    cov: &CovarianceMatrix,
    n_m: usize,
    geom: &ArrayGeometry,
    grid: &GridSpec,
) -> Result<DoaEstimate> {
    let spectrum = music_spectrum(cov, n_m, geom, grid)?;
    let enh = NoiseProjector::new(cov, n_m)?;
    let mut a = vec![Complex64::new(0.0, 0.0); geom.elements()];
    // Grid values undersample narrow peaks, so ridge maxima between close
    // sources can outrank a true peak; rank on the refined direction.
    let mut peaks: Vec<Peak> = local_maxima(&spectrum)
        .into_iter()
        .map(|(i, j)| {
            let direction = refine(&spectrum, i, j);
            Peak {
                direction,
                score: enh.value(geom, &direction, &mut a),
                low_score: false,
            }
        })
        .collect();
    peaks.sort_by(|p, q| q.score.total_cmp(&p.score));
    let short = peaks.len() < n_m;
    peaks.truncate(n_m);
    let top = peaks.first().map_or(0.0, |p| p.score);
    for p in &mut peaks {
        p.low_score = p.score < LOW_SCORE_RATIO * top;
    }
    Ok(DoaEstimate { peaks, short })
}

/// Reflection of `dir` into the upper hemisphere.
pub fn mirror_to_upper(dir: &DirectionPair) -> DirectionPair {
    if dir.elevation() > PI / 2.0 {
        DirectionPair::wrapped(PI - dir.elevation(), dir.azimuth())
    } else {
        *dir
    }
}

/// Greedy nearest-pair matching: repeatedly pairs the closest unmatched
/// truth/estimate. Returns `(truth index, estimate index, radians)`.
pub fn match_directions(truth: &[DirectionPair], estimates: &[DirectionPair]) -> Vec<(usize, usize, f64)> {
    let mut pairs: Vec<(usize, usize, f64)> = truth
        .iter()
        .enumerate()
        .flat_map(|(i, t)| estimates.iter().enumerate().map(move |(j, e)| (i, j, t.angular_distance(e))))
        .collect();
    pairs.sort_by(|a, b| a.2.total_cmp(&b.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));
    let mut used_t = vec![false; truth.len()];
    let mut used_e = vec![false; estimates.len()];
    let mut out = Vec::new();
    for (i, j, d) in pairs {
        if !used_t[i] && !used_e[j] {
            used_t[i] = true;
            used_e[j] = true;
            out.push((i, j, d));
        }
    }
    out.sort_by_key(|p| p.0);
    out
}

/// Mean great-circle error over matched pairs, radians; `None` when nothing
/// matched.
pub fn mean_doa_error(truth: &[DirectionPair], estimates: &[DirectionPair]) -> Option<f64> {
    let m = match_directions(truth, estimates);
    if m.is_empty() {
        None
    } else {
        Some(m.iter().map(|p| p.2).sum::<f64>() / m.len() as f64)
    }
}
