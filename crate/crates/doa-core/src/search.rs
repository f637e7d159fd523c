//! One-dimensional azimuth search maximizing g(φ) = a(φ)^H R a(φ) by gradient
//! ascent with a backtracking (Armijo) line search, plus a coarse-grid
//! initializer. Elevation is held fixed during a search.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::array::ArrayGeometry;
use crate::error::{Error, Result};
use crate::C64;

/// Backtracking line-search parameters and stopping thresholds.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct LineSearchParams {
    /// Fraction of the distance to the interval boundary used as first step; in (0,1).
    pub rho: f64,
    /// Armijo sufficient-increase coefficient; in (0, 0.5).
    pub eta: f64,
    /// Step shrink factor per backtrack; in (0,1).
    pub gamma: f64,
    /// Gradient-magnitude stopping tolerance; > 0.
    pub tol: f64,
    /// Cap on gradient steps; reaching it is a flagged, non-error return.
    pub max_gradient_steps: usize,
}

impl Default for LineSearchParams {
    fn default() -> Self {
        Self { rho: 0.1, eta: 0.3, gamma: 0.5, tol: 1e-3, max_gradient_steps: 500 }
    }
}

impl LineSearchParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(Error::Config(format!("rho must lie in (0,1), got {}", self.rho)));
        }
        if !(self.eta > 0.0 && self.eta < 0.5) {
            return Err(Error::Config(format!("eta must lie in (0,0.5), got {}", self.eta)));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::Config(format!("gamma must lie in (0,1), got {}", self.gamma)));
        }
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(Error::Config(format!("tol must be positive, got {}", self.tol)));
        }
        if self.max_gradient_steps == 0 {
            return Err(Error::Config("max_gradient_steps must be at least 1".into()));
        }
        Ok(())
    }
}

/// g(φ) = a^H R a and its exact derivative in φ, at the given fixed elevation.
///
/// R must be Hermitian (not checked here: this sits in the solver hot loop and
/// every caller passes a symmetrized surrogate).
pub fn objective_and_gradient(
    geom: &ArrayGeometry,
    elevation: f64,
    r: &DMatrix<C64>,
    azimuth: f64,
) -> (f64, f64) {
    let n = geom.sensors();
    assert_eq!(r.nrows(), n, "covariance size must match the sensor count");
    assert_eq!(r.ncols(), n, "covariance must be square");
    let k = -2.0 * PI / geom.wavelength();
    let (sin_el, cos_el) = elevation.sin_cos();
    let (sin_az, cos_az) = azimuth.sin_cos();
    let (qx, qy, qz) = (sin_el * cos_az, sin_el * sin_az, cos_el);
    // ∂q/∂φ = [−sin(el)sin(φ), sin(el)cos(φ), 0]
    let (dqx, dqy) = (-sin_el * sin_az, sin_el * cos_az);

    let mut a = DVector::<C64>::zeros(n);
    let mut dpsi = vec![0.0f64; n];
    for (i, p) in geom.positions().iter().enumerate() {
        let psi = k * (p.x * qx + p.y * qy + p.z * qz);
        a[i] = C64::new(psi.cos(), psi.sin());
        dpsi[i] = k * (p.x * dqx + p.y * dqy);
    }
    let ra = r * &a;
    let mut g = 0.0;
    let mut gp = 0.0;
    for i in 0..n {
        // c_i = conj(a_i)·(Ra)_i; g = Σ Re c_i, g' = 2 Σ ψ'_i·Im c_i.
        let c = a[i].conj() * ra[i];
        g += c.re;
        gp += dpsi[i] * c.im;
    }
    (g, 2.0 * gp)
}

/// Outcome of a gradient ascent run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AscendResult {
    pub azimuth: f64,
    pub objective: f64,
    /// False only when the gradient-step cap was hit with |g'| still above tol.
    pub converged: bool,
    pub gradient_steps: usize,
}

const INTERIOR_MARGIN: f64 = 1e-12;

/// Gradient ascent from `azim_init`, confined to (0, π).
///
/// The first trial step t = ρ(π−φ)/g' (or ρ(−φ)/g' for descent directions)
/// keeps every iterate strictly inside (0, π); each accepted step satisfies
/// the Armijo condition g(φ + t·g') ≥ g(φ) + η·t·|g'|². If 100 halvings never
/// satisfy it the point is treated as stationary.
pub fn ascend(
    geom: &ArrayGeometry,
    elevation: f64,
    r: &DMatrix<C64>,
    azim_init: f64,
    params: &LineSearchParams,
) -> AscendResult {
    debug_assert!(
        azim_init > 0.0 && azim_init < PI,
        "initial azimuth {azim_init} must lie strictly inside (0, π)"
    );
    let mut phi = azim_init.clamp(INTERIOR_MARGIN, PI - INTERIOR_MARGIN);
    let (mut g, mut gp) = objective_and_gradient(geom, elevation, r, phi);
    for step in 0..params.max_gradient_steps {
        if gp.abs() <= params.tol {
            return AscendResult { azimuth: phi, objective: g, converged: true, gradient_steps: step };
        }
        let mut t = if gp > 0.0 {
            params.rho * (PI - phi) / gp
        } else {
            params.rho * (0.0 - phi) / gp
        };
        let mut accepted = false;
        for _ in 0..100 {
            let cand = phi + t * gp;
            let (gc, gpc) = objective_and_gradient(geom, elevation, r, cand);
            if gc >= g + params.eta * t * gp * gp {
                phi = cand;
                g = gc;
                gp = gpc;
                accepted = true;
                break;
            }
            t *= params.gamma;
        }
        if !accepted {
            // No acceptable increase at line-search resolution: stationary.
            return AscendResult {
                azimuth: phi,
                objective: g,
                converged: true,
                gradient_steps: step + 1,
            };
        }
        debug_assert!(phi > 0.0 && phi < PI, "iterate {phi} left (0, π)");
    }
    AscendResult {
        azimuth: phi,
        objective: g,
        converged: false,
        gradient_steps: params.max_gradient_steps,
    }
}

/// Best grid point of g over {resolution, 2·resolution, ...} ∩ (0, π);
/// ties break toward the smallest angle.
pub fn grid_init(
    geom: &ArrayGeometry,
    elevation: f64,
    r: &DMatrix<C64>,
    resolution: f64,
) -> f64 {
    assert!(
        resolution > 0.0 && resolution < PI,
        "grid resolution {resolution} must lie in (0, π)"
    );
    let mut best_phi = resolution;
    let mut best_g = f64::NEG_INFINITY;
    let mut k = 1usize;
    loop {
        let phi = k as f64 * resolution;
        if phi >= PI {
            break;
        }
        let (g, _) = objective_and_gradient(geom, elevation, r, phi);
        if g > best_g {
            best_g = g;
            best_phi = phi;
        }
        k += 1;
    }
    best_phi
}

/// Top-`count` separated local maxima of g on the grid, ascending by angle.
/// Convenience initializer for multi-source runs without configured starts.
pub fn grid_init_multi(
    geom: &ArrayGeometry,
    elevation: f64,
    r: &DMatrix<C64>,
    resolution: f64,
    count: usize,
) -> Vec<f64> {
    assert!(
        resolution > 0.0 && resolution < PI,
        "grid resolution {resolution} must lie in (0, π)"
    );
    let mut grid = Vec::new();
    let mut k = 1usize;
    loop {
        let phi = k as f64 * resolution;
        if phi >= PI {
            break;
        }
        grid.push((phi, objective_and_gradient(geom, elevation, r, phi).0));
        k += 1;
    }
    // Local maxima first (boundary points count), strongest first.
    let mut candidates: Vec<(f64, f64)> = grid
        .iter()
        .enumerate()
        .filter(|(i, (_, g))| {
            let left_ok = *i == 0 || grid[*i - 1].1 <= *g;
            let right_ok = *i + 1 == grid.len() || grid[*i + 1].1 < *g;
            left_ok && right_ok
        })
        .map(|(_, pair)| *pair)
        .collect();
    candidates.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.total_cmp(&b.0)));

    let min_separation = 2.0 * resolution;
    let mut picked: Vec<f64> = Vec::with_capacity(count);
    for (phi, _) in &candidates {
        if picked.len() == count {
            break;
        }
        if picked.iter().all(|p| (p - phi).abs() >= min_separation) {
            picked.push(*phi);
        }
    }
    // Degenerate spectra may not offer enough separated peaks; fall back to
    // the strongest remaining grid points.
    if picked.len() < count {
        let mut rest = grid;
        rest.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.total_cmp(&b.0)));
        for (phi, _) in rest {
            if picked.len() == count {
                break;
            }
            if picked.iter().all(|p| (p - phi).abs() > 1e-12) {
                picked.push(phi);
            }
        }
    }
    picked.sort_by(f64::total_cmp);
    picked
}
