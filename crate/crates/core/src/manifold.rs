//! Array geometries and steering vectors.
//!
//! Angles follow one convention for every array: `elevation` is the polar
//! angle from the array zenith in `[0, π)` and is the factor that enters the
//! URA/UCA exponents through `sin(elevation)`; `azimuth` is the in-plane
//! angle in `[0, 2π)`.

use std::f64::consts::{FRAC_PI_4, PI, TAU};
use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
pub const DEFAULT_CARRIER_HZ: f64 = 2.7e9;

/// A direction of arrival.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DirectionPair {
    elevation: f64,
    azimuth: f64,
}

impl DirectionPair {
    pub fn new(elevation: f64, azimuth: f64) -> Result<Self> {
        if !elevation.is_finite() || !(0.0..PI).contains(&elevation) {
            return Err(Error::OutOfRange {
                what: "elevation",
                value: elevation.to_string(),
            });
        }
        if !azimuth.is_finite() || !(0.0..TAU).contains(&azimuth) {
            return Err(Error::OutOfRange {
                what: "azimuth",
                value: azimuth.to_string(),
            });
        }
        Ok(Self { elevation, azimuth })
    }

    pub fn from_degrees(elevation: f64, azimuth: f64) -> Result<Self> {
        Self::new(elevation.to_radians(), azimuth.to_radians())
    }

    /// Folds arbitrary finite angles back into the canonical ranges.
    ///
    /// Elevation is reflected at the poles (with the azimuth turned by π), the
    /// azimuth is wrapped modulo 2π.
    pub fn wrapped(elevation: f64, azimuth: f64) -> Self {
        let mut el = elevation.rem_euclid(TAU);
        let mut az = azimuth;
        if el >= PI {
            el = TAU - el;
            az += PI;
        }
        if el >= PI {
            // TAU - el can round back up to PI
            el = PI - f64::EPSILON * PI;
        }
        let mut az = az.rem_euclid(TAU);
        if az >= TAU {
            az = 0.0;
        }
        Self {
            elevation: el,
            azimuth: az,
        }
    }

    pub fn elevation(&self) -> f64 {
        self.elevation
    }

    pub fn azimuth(&self) -> f64 {
        self.azimuth
    }

    /// Unit propagation-direction vector (x, y, z) with z along the zenith.
    pub fn unit_vector(&self) -> [f64; 3] {
        let (se, ce) = self.elevation.sin_cos();
        let (sa, ca) = self.azimuth.sin_cos();
        [se * ca, se * sa, ce]
    }

    pub fn from_unit_vector(v: [f64; 3]) -> Self {
        let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        let z = (v[2] / norm).clamp(-1.0, 1.0);
        let el = z.acos();
        let az = v[1].atan2(v[0]);
        Self::wrapped(el, az)
    }

    /// Great-circle distance in radians.
    pub fn angular_distance(&self, other: &DirectionPair) -> f64 {
        let a = self.unit_vector();
        let b = other.unit_vector();
        // atan2 form stays accurate for tiny and near-antipodal separations
        let cross = [
            a[1] * b[2] - a[2] * b[1],
            a[2] * b[0] - a[0] * b[2],
            a[0] * b[1] - a[1] * b[0],
        ];
        let sin = (cross[0] * cross[0] + cross[1] * cross[1] + cross[2] * cross[2]).sqrt();
        let cos = a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
        sin.atan2(cos)
    }
}

impl fmt::Display for DirectionPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "(el {:.2}°, az {:.2}°)",
            self.elevation.to_degrees(),
            self.azimuth.to_degrees()
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ArrayKind {
    Ura,
    Uca,
    VectorSensor,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ArrayLayout {
    /// `rows × cols` grid; row index pairs with `spacing_w`, column index with
    /// `spacing_l`.
    Ura {
        rows: usize,
        cols: usize,
        spacing_l: f64,
        spacing_w: f64,
    },
    Uca { radius: f64 },
    /// Six-component electromagnetic vector sensor with fixed polarization.
    VectorSensor { gamma: f64, eta: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArrayGeometry {
    layout: ArrayLayout,
    elements: usize,
    wavelength: f64,
}

fn positive(what: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidGeometry(format!("{what} must be positive, got {v}")))
    }
}

impl ArrayGeometry {
    pub fn ura(
        rows: usize,
        cols: usize,
        spacing_l: f64,
        spacing_w: f64,
        wavelength: f64,
    ) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidGeometry("URA needs at least one row and column".into()));
        }
        positive("URA spacing d_L", spacing_l)?;
        positive("URA spacing d_W", spacing_w)?;
        positive("wavelength", wavelength)?;
        Ok(Self {
            layout: ArrayLayout::Ura {
                rows,
                cols,
                spacing_l,
                spacing_w,
            },
            elements: rows * cols,
            wavelength,
        })
    }

    pub fn uca(elements: usize, radius: f64, wavelength: f64) -> Result<Self> {
        if elements == 0 {
            return Err(Error::InvalidGeometry("UCA needs at least one element".into()));
        }
        positive("UCA radius", radius)?;
        positive("wavelength", wavelength)?;
        Ok(Self {
            layout: ArrayLayout::Uca { radius },
            elements,
            wavelength,
        })
    }

    pub fn vector_sensor(gamma: f64, eta: f64) -> Result<Self> {
        if !gamma.is_finite() || !eta.is_finite() {
            return Err(Error::InvalidGeometry("polarization angles must be finite".into()));
        }
        Ok(Self {
            layout: ArrayLayout::VectorSensor { gamma, eta },
            elements: 6,
            // the vector sensor is a point sensor; the wavelength never enters
            wavelength: SPEED_OF_LIGHT / DEFAULT_CARRIER_HZ,
        })
    }

    /// 2×3 URA with 0.1 m spacing at 2.7 GHz.
    pub fn default_ura() -> Self {
        Self::ura(2, 3, 0.1, 0.1, SPEED_OF_LIGHT / DEFAULT_CARRIER_HZ).expect("valid preset")
    }

    /// Six-element UCA of radius 0.2 m at 2.7 GHz.
    pub fn default_uca() -> Self {
        Self::uca(6, 0.2, SPEED_OF_LIGHT / DEFAULT_CARRIER_HZ).expect("valid preset")
    }

    /// Twelve-element UCA of radius 0.2 m at 2.7 GHz.
    pub fn dense_uca() -> Self {
        Self::uca(12, 0.2, SPEED_OF_LIGHT / DEFAULT_CARRIER_HZ).expect("valid preset")
    }

    /// Vector sensor with γ = π/4, η = 0.
    pub fn default_vector_sensor() -> Self {
        Self::vector_sensor(FRAC_PI_4, 0.0).expect("valid preset")
    }

    pub fn kind(&self) -> ArrayKind {
        match self.layout {
            ArrayLayout::Ura { .. } => ArrayKind::Ura,
            ArrayLayout::Uca { .. } => ArrayKind::Uca,
            ArrayLayout::VectorSensor { .. } => ArrayKind::VectorSensor,
        }
    }

    /// URA and UCA lie in the xy-plane and cannot tell elevation θ from π − θ.
    pub fn is_planar(&self) -> bool {
        matches!(self.layout, ArrayLayout::Ura { .. } | ArrayLayout::Uca { .. })
    }

    pub fn layout(&self) -> &ArrayLayout {
        &self.layout
    }

    pub fn elements(&self) -> usize {
        self.elements
    }

    pub fn wavelength(&self) -> f64 {
        self.wavelength
    }

    /// Steering vector for `dir`, dispatched on the array kind.
    pub fn steer(&self, dir: &DirectionPair) -> Array1<Complex64> {
        match self.layout {
            ArrayLayout::Ura {
                rows,
                cols,
                spacing_l,
                spacing_w,
            } => ura_vector(rows, cols, spacing_l, spacing_w, self.wavelength, dir),
            ArrayLayout::Uca { radius } => uca_vector(self.elements, radius, self.wavelength, dir),
            ArrayLayout::VectorSensor { gamma, eta } => vs_vector(gamma, eta, dir),
        }
    }

    /// Writes the steering vector into `out` without allocating.
    pub fn steer_into(&self, dir: &DirectionPair, out: &mut [Complex64]) {
        debug_assert_eq!(out.len(), self.elements);
        let v = self.steer(dir);
        out.copy_from_slice(v.as_slice().expect("contiguous"));
    }
}

impl FromStr for ArrayGeometry {
    type Err = Error;

    /// Parses the preset names `ura`, `uca6`, `uca12` and `vs`.
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ura" => Ok(Self::default_ura()),
            "uca" | "uca6" => Ok(Self::default_uca()),
            "uca12" => Ok(Self::dense_uca()),
            "vs" | "vector-sensor" => Ok(Self::default_vector_sensor()),
            other => Err(Error::InvalidGeometry(format!("unknown array preset `{other}`"))),
        }
    }
}

fn ura_vector(
    rows: usize,
    cols: usize,
    spacing_l: f64,
    spacing_w: f64,
    wavelength: f64,
    dir: &DirectionPair,
) -> Array1<Complex64> {
    let st = dir.elevation.sin();
    let (sp, cp) = dir.azimuth.sin_cos();
    let mut out = Array1::zeros(rows * cols);
    for i in 0..rows {
        for j in 0..cols {
            let phase = TAU
                * st
                * (cp * i as f64 * spacing_w / wavelength + sp * j as f64 * spacing_l / wavelength);
            out[i * cols + j] = Complex64::from_polar(1.0, phase);
        }
    }
    out
}

fn uca_vector(elements: usize, radius: f64, wavelength: f64, dir: &DirectionPair) -> Array1<Complex64> {
    let st = dir.elevation.sin();
    Array1::from_iter((0..elements).map(|i| {
        let offset = TAU * i as f64 / elements as f64;
        let phase = TAU * (radius / wavelength) * st * (dir.azimuth - offset).cos();
        Complex64::from_polar(1.0, phase)
    }))
}

fn vs_vector(gamma: f64, eta: f64, dir: &DirectionPair) -> Array1<Complex64> {
    let (st, ct) = dir.elevation.sin_cos();
    let (sp, cp) = dir.azimuth.sin_cos();
    // Electric then magnetic field components for the two polarization bases.
    let first = [ct * cp, ct * sp, -st, -sp, cp, 0.0];
    let second = [-sp, cp, 0.0, -ct * cp, -ct * sp, st];
    let p1 = Complex64::from_polar(gamma.sin(), eta);
    let p2 = Complex64::new(gamma.cos(), 0.0);
    Array1::from_iter((0..6).map(|k| p1 * first[k] + p2 * second[k]))
}

fn expect_kind(geom: &ArrayGeometry, kind: ArrayKind) -> Result<()> {
    if geom.kind() == kind {
        Ok(())
    } else {
        Err(Error::InvalidGeometry(format!(
            "expected a {kind:?} geometry, got {:?}",
            geom.kind()
        )))
    }
}

pub fn steer_ura(geom: &ArrayGeometry, dir: &DirectionPair) -> Result<Array1<Complex64>> {
    expect_kind(geom, ArrayKind::Ura)?;
    Ok(geom.steer(dir))
}

pub fn steer_uca(geom: &ArrayGeometry, dir: &DirectionPair) -> Result<Array1<Complex64>> {
    expect_kind(geom, ArrayKind::Uca)?;
    Ok(geom.steer(dir))
}

pub fn steer_vs(geom: &ArrayGeometry, dir: &DirectionPair) -> Result<Array1<Complex64>> {
    expect_kind(geom, ArrayKind::VectorSensor)?;
    Ok(geom.steer(dir))
}

/// `E × n` matrix whose columns are the steering vectors of `dirs`.
pub fn steering_matrix(geom: &ArrayGeometry, dirs: &[DirectionPair]) -> Result<Array2<Complex64>> {
    if dirs.is_empty() {
        return Err(Error::EmptyInput("direction list"));
    }
    let mut a = Array2::zeros((geom.elements(), dirs.len()));
    for (k, d) in dirs.iter().enumerate() {
        a.column_mut(k).assign(&geom.steer(d));
    }
    Ok(a)
}
