//! Sensor-array geometry, directions of arrival, steering vectors and the
//! projection statistics (e, d) consumed by every solver.

use nalgebra::{DMatrix, DVector, Vector3};
use serde::Deserialize;
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::C64;

/// Known sensor positions and the carrier wavelength, in the same length unit.
#[derive(Debug, Clone, PartialEq)]
pub struct ArrayGeometry {
    positions: Vec<Vector3<f64>>,
    wavelength: f64,
}

impl ArrayGeometry {
    /// Validates N >= 2, a positive finite wavelength and finite positions.
    pub fn new(positions: Vec<Vector3<f64>>, wavelength: f64) -> Result<Self> {
        if positions.len() < 2 {
            return Err(Error::Geometry(format!(
                "need at least 2 sensors, got {}",
                positions.len()
            )));
        }
        if !(wavelength > 0.0 && wavelength.is_finite()) {
            return Err(Error::Geometry(format!(
                "wavelength must be positive and finite, got {wavelength}"
            )));
        }
        if positions.iter().any(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(Error::Geometry("positions must be finite".into()));
        }
        Ok(Self { positions, wavelength })
    }

    /// Uniform linear array along x with half-wavelength spacing: p_n = [λ/2·(n−1), 0, 0].
    pub fn ula(sensors: usize, wavelength: f64) -> Result<Self> {
        let positions = (0..sensors)
            .map(|n| Vector3::new(0.5 * wavelength * n as f64, 0.0, 0.0))
            .collect();
        Self::new(positions, wavelength)
    }

    /// Parses `{"wavelength": w, "positions": [[x,y,z],...]}`.
    pub fn from_json(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct GeometryFile {
            wavelength: f64,
            positions: Vec<[f64; 3]>,
        }
        let raw: GeometryFile = serde_json::from_str(text)?;
        Self::new(
            raw.positions
                .into_iter()
                .map(|p| Vector3::new(p[0], p[1], p[2]))
                .collect(),
            raw.wavelength,
        )
    }

    pub fn sensors(&self) -> usize {
        self.positions.len()
    }

    pub fn positions(&self) -> &[Vector3<f64>] {
        &self.positions
    }

    pub fn wavelength(&self) -> f64 {
        self.wavelength
    }
}

/// A direction of arrival; canonical ranges elevation ∈ [0, π], azimuth ∈ [0, 2π).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Direction {
    elevation: f64,
    azimuth: f64,
}

impl Direction {
    /// Canonicalizes arbitrary finite angles onto the same unit direction.
    pub fn new(elevation: f64, azimuth: f64) -> Result<Self> {
        if !elevation.is_finite() || !azimuth.is_finite() {
            return Err(Error::Domain(format!(
                "direction angles must be finite, got elevation {elevation}, azimuth {azimuth}"
            )));
        }
        let mut el = elevation.rem_euclid(2.0 * PI);
        let mut az = azimuth;
        // Folding elevation past π flips the azimuth half-plane; the unit vector is unchanged.
        if el > PI {
            el = 2.0 * PI - el;
            az += PI;
        }
        let az = az.rem_euclid(2.0 * PI);
        Ok(Self { elevation: el, azimuth: az })
    }

    pub fn from_degrees(elevation_deg: f64, azimuth_deg: f64) -> Result<Self> {
        Self::new(elevation_deg.to_radians(), azimuth_deg.to_radians())
    }

    pub fn elevation(&self) -> f64 {
        self.elevation
    }

    pub fn azimuth(&self) -> f64 {
        self.azimuth
    }

    pub fn azimuth_degrees(&self) -> f64 {
        self.azimuth.to_degrees()
    }

    /// q = [sin(el)cos(az), sin(el)sin(az), cos(el)], unit Euclidean norm.
    pub fn unit_vector(&self) -> Vector3<f64> {
        let (sin_el, cos_el) = self.elevation.sin_cos();
        let (sin_az, cos_az) = self.azimuth.sin_cos();
        Vector3::new(sin_el * cos_az, sin_el * sin_az, cos_el)
    }
}

/// Unit-modulus array response a(θ); a^H a = N.
#[derive(Debug, Clone, PartialEq)]
pub struct SteeringVector(DVector<C64>);

impl SteeringVector {
    pub fn entries(&self) -> &DVector<C64> {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> DVector<C64> {
        self.0
    }
}

/// Entry n is exp(j·ψ_n) with ψ_n = −(2π/λ)·p_n^T q.
pub fn steering_vector(geom: &ArrayGeometry, dir: Direction) -> SteeringVector {
    let q = dir.unit_vector();
    let k = -2.0 * PI / geom.wavelength();
    let entries = DVector::from_iterator(
        geom.sensors(),
        geom.positions().iter().map(|p| {
            let psi = k * p.dot(&q);
            C64::new(psi.cos(), psi.sin())
        }),
    );
    SteeringVector(entries)
}

/// N×M matrix whose columns are the steering vectors of `dirs`.
pub fn steering_matrix(geom: &ArrayGeometry, dirs: &[Direction]) -> DMatrix<C64> {
    let n = geom.sensors();
    let mut a = DMatrix::<C64>::zeros(n, dirs.len());
    for (m, dir) in dirs.iter().enumerate() {
        a.set_column(m, steering_vector(geom, *dir).entries());
    }
    a
}

/// Energy split of a covariance across the rank-one steering projector.
///
/// `e` is the energy along a(θ) and `d` the residual; e + d = Tr{R}.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectionStats {
    pub e: f64,
    pub d: f64,
}

/// Max |R_ij − conj(R_ji)| over all entries.
pub(crate) fn max_asymmetry(r: &DMatrix<C64>) -> f64 {
    let n = r.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in i..n {
            let asym = (r[(i, j)] - r[(j, i)].conj()).norm();
            if asym > worst {
                worst = asym;
            }
        }
    }
    worst
}

pub(crate) fn check_hermitian(r: &DMatrix<C64>) -> Result<()> {
    if r.nrows() != r.ncols() {
        return Err(Error::Dimension(format!(
            "expected square matrix, got {}x{}",
            r.nrows(),
            r.ncols()
        )));
    }
    let scale = r.iter().fold(0.0f64, |acc, z| acc.max(z.norm()));
    let tolerance = 1e-8 * scale;
    let max_asymmetry = max_asymmetry(r);
    if max_asymmetry > tolerance {
        return Err(Error::NotHermitian { max_asymmetry, tolerance });
    }
    Ok(())
}

/// Real trace of a Hermitian matrix.
pub(crate) fn trace_re(r: &DMatrix<C64>) -> f64 {
    (0..r.nrows()).map(|i| r[(i, i)].re).sum()
}

/// Splits Tr{R} into e = (1/N)·a^H R a along dir and the residual d = Tr{R} − e.
///
/// R must be Hermitian PSD; only Hermitian symmetry is checked, PSD is the
/// caller's obligation (tolerance: min eigenvalue ≥ −1e-8·Tr{R}).
pub fn projection_stats(
    geom: &ArrayGeometry,
    dir: Direction,
    r: &DMatrix<C64>,
) -> Result<ProjectionStats> {
    if r.nrows() != geom.sensors() {
        return Err(Error::Dimension(format!(
            "covariance is {}x{} but the array has {} sensors",
            r.nrows(),
            r.ncols(),
            geom.sensors()
        )));
    }
    check_hermitian(r)?;
    let a = steering_vector(geom, dir);
    let ra = r * a.entries();
    let quad = a.entries().dotc(&ra);
    let n = geom.sensors() as f64;
    debug_assert!(
        quad.im.abs() <= 1e-10 * (quad.re.abs() + 1.0),
        "quadratic form of a Hermitian matrix must be real, got imaginary part {}",
        quad.im
    );
    let e = (quad.re / n).max(0.0);
    let d = (trace_re(r) - e).max(0.0);
    Ok(ProjectionStats { e, d })
}
