//! MEM iterations: each source carries its own noise variance σ_m, estimated
//! jointly with the source parameters; the physical uniform noise level is
//! their sum. The per-source split removes the fixed α weighting of EM.

use nalgebra::{Cholesky, DMatrix};

use crate::array::{
    projection_stats, steering_matrix, steering_vector, trace_re, ArrayGeometry, Direction,
};
use crate::error::{Error, Result};
use crate::search::{ascend, LineSearchParams};
use crate::sim::SnapshotMatrix;
use crate::surrogate::{conditional_rhat, det_complete_data, rank1_plus_diag, CompleteDataStats};
use crate::C64;

/// Per-source noise variances σ_m > 0 together with their sum.
#[derive(Debug, Clone, PartialEq)]
pub struct PerSourceNoise {
    sigmas: Vec<f64>,
    total: f64,
}

impl PerSourceNoise {
    pub fn new(sigmas: Vec<f64>) -> Result<Self> {
        if sigmas.is_empty() {
            return Err(Error::Domain("per-source noise needs at least one source".into()));
        }
        if let Some(s) = sigmas.iter().find(|s| !(**s > 0.0 && s.is_finite())) {
            return Err(Error::Domain(format!(
                "per-source noise variances must be positive, got {s}"
            )));
        }
        let total = sigmas.iter().sum();
        Ok(Self { sigmas, total })
    }

    /// Even split of a total variance across sources.
    pub fn uniform(total: f64, sources: usize) -> Result<Self> {
        if sources == 0 {
            return Err(Error::Domain("per-source noise needs at least one source".into()));
        }
        Self::new(vec![total / sources as f64; sources])
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }

    /// Sum of the per-source variances; the uniform-model noise level.
    pub fn total(&self) -> f64 {
        self.total
    }

    pub fn len(&self) -> usize {
        self.sigmas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigmas.is_empty()
    }

    /// Implied noise shares σ_m/σ.
    pub fn shares(&self) -> Vec<f64> {
        self.sigmas.iter().map(|s| s / self.total).collect()
    }
}

/// Deterministic-model iterate with per-source noise.
#[derive(Debug, Clone)]
pub struct MemDetState {
    pub dirs: Vec<Direction>,
    /// M×T waveform estimates.
    pub signals: DMatrix<C64>,
    pub noise: PerSourceNoise,
    pub iter: usize,
    pub loglik_trace: Vec<f64>,
}

/// Stochastic-model iterate with per-source noise.
#[derive(Debug, Clone)]
pub struct MemStoState {
    pub dirs: Vec<Direction>,
    pub powers: Vec<f64>,
    pub noise: PerSourceNoise,
    pub iter: usize,
    pub loglik_trace: Vec<f64>,
}

/// E-step for the deterministic model: complete-data snapshots
/// x_m = (σ_m/σ)·(Y − A S) + a_m s_m and the per-source constants
/// c_m = N·σ_m·(1 − σ_m/σ) carrying the previous noise iterate.
pub fn mem_det_estep(
    y: &SnapshotMatrix,
    state: &MemDetState,
    geom: &ArrayGeometry,
) -> Result<(Vec<CompleteDataStats>, Vec<f64>)> {
    if y.sensors() != geom.sensors() {
        return Err(Error::Dimension(format!(
            "snapshots have {} sensors, array has {}",
            y.sensors(),
            geom.sensors()
        )));
    }
    if state.dirs.len() != state.noise.len() || state.signals.nrows() != state.dirs.len() {
        return Err(Error::Dimension(format!(
            "inconsistent source counts: {} directions, {} signal rows, {} noise variances",
            state.dirs.len(),
            state.signals.nrows(),
            state.noise.len()
        )));
    }
    if state.signals.ncols() != y.snapshots() {
        return Err(Error::Dimension(format!(
            "signals hold {} snapshots but data holds {}",
            state.signals.ncols(),
            y.snapshots()
        )));
    }
    let a = steering_matrix(geom, &state.dirs);
    let residual = y.data() - &a * &state.signals;
    let n = geom.sensors() as f64;
    let total = state.noise.total();
    let mut surrogates = Vec::with_capacity(state.dirs.len());
    let mut constants = Vec::with_capacity(state.dirs.len());
    for (m, sigma_m) in state.noise.sigmas().iter().enumerate() {
        let ratio = sigma_m / total;
        surrogates.push(det_complete_data(
            &residual,
            &a.column(m).clone_owned(),
            &state.signals.row(m).clone_owned(),
            ratio,
        ));
        constants.push(n * sigma_m * (1.0 - ratio));
    }
    Ok((surrogates, constants))
}

/// M-step for the deterministic model: per-source warm-started searches,
/// s_m = (1/N)·a_m^H x_m, and σ_m = (c_m + d_m)/N.
pub fn mem_det_mstep(
    surrogates: &[CompleteDataStats],
    c: &[f64],
    state: &MemDetState,
    geom: &ArrayGeometry,
    search: &LineSearchParams,
) -> Result<MemDetState> {
    let n = geom.sensors() as f64;
    let mut dirs = Vec::with_capacity(state.dirs.len());
    let mut signals = state.signals.clone();
    let mut sigmas = Vec::with_capacity(state.dirs.len());
    for (idx, surr) in surrogates.iter().enumerate() {
        let prev = state.dirs[idx];
        let out = ascend(geom, prev.elevation(), &surr.rhat, prev.azimuth(), search);
        let dir = Direction::new(prev.elevation(), out.azimuth)?;
        let a = steering_vector(geom, dir);
        let row = a.entries().adjoint() * &surr.snapshots / C64::new(n, 0.0);
        signals.set_row(idx, &row);
        let stats = projection_stats(geom, dir, &surr.rhat)?;
        let sigma_m = (c[idx] + stats.d) / n;
        if !(sigma_m > 0.0 && sigma_m.is_finite()) {
            return Err(Error::Invariant(format!(
                "per-source noise variance left its domain: {sigma_m}"
            )));
        }
        sigmas.push(sigma_m);
        dirs.push(dir);
    }
    Ok(MemDetState {
        dirs,
        signals,
        noise: PerSourceNoise::new(sigmas)?,
        iter: state.iter + 1,
        loglik_trace: state.loglik_trace.clone(),
    })
}

/// E-step for the stochastic model: conditional covariance surrogates with
/// C_m = P_m a_m a_m^H + σ_m I.
pub fn mem_sto_estep(
    ry: &DMatrix<C64>,
    state: &MemStoState,
    geom: &ArrayGeometry,
) -> Result<Vec<DMatrix<C64>>> {
    let n = geom.sensors();
    if ry.nrows() != n || ry.ncols() != n {
        return Err(Error::Dimension(format!(
            "covariance is {}x{} but the array has {n} sensors",
            ry.nrows(),
            ry.ncols()
        )));
    }
    if state.dirs.len() != state.noise.len() || state.powers.len() != state.dirs.len() {
        return Err(Error::Dimension(format!(
            "inconsistent source counts: {} directions, {} powers, {} noise variances",
            state.dirs.len(),
            state.powers.len(),
            state.noise.len()
        )));
    }
    let cms: Vec<DMatrix<C64>> = state
        .dirs
        .iter()
        .zip(&state.powers)
        .zip(state.noise.sigmas())
        .map(|((dir, p), sigma_m)| {
            let sv = steering_vector(geom, *dir);
            rank1_plus_diag(sv.entries(), *p, *sigma_m)
        })
        .collect();
    let mut cy = DMatrix::<C64>::zeros(n, n);
    for cm in &cms {
        cy += cm;
    }
    let chol = Cholesky::new(cy).ok_or(Error::Singular)?;
    Ok(cms.iter().map(|cm| conditional_rhat(ry, &chol, cm)).collect())
}

/// M-step for the stochastic model. Per source, with t̄ = Tr{R̂_m}/N at the
/// searched direction: if e > t̄ then σ_m = d/(N−1) and P_m = (e − t̄)/(N−1);
/// otherwise the direction is retained, σ_m = t̄ and P_m = 0.
pub fn mem_sto_mstep(
    surrogates: &[DMatrix<C64>],
    state: &MemStoState,
    geom: &ArrayGeometry,
    search: &LineSearchParams,
) -> Result<MemStoState> {
    let n = geom.sensors() as f64;
    let mut dirs = Vec::with_capacity(state.dirs.len());
    let mut powers = Vec::with_capacity(state.dirs.len());
    let mut sigmas = Vec::with_capacity(state.dirs.len());
    for (idx, rhat) in surrogates.iter().enumerate() {
        let prev = state.dirs[idx];
        let out = ascend(geom, prev.elevation(), rhat, prev.azimuth(), search);
        let cand = Direction::new(prev.elevation(), out.azimuth)?;
        let stats = projection_stats(geom, cand, rhat)?;
        let mean = trace_re(rhat) / n;
        let (dir, sigma_m, p) = if stats.e > mean {
            (cand, stats.d / (n - 1.0), (stats.e - mean) / (n - 1.0))
        } else {
            // Zero power leaves the direction indeterminate; keep the previous iterate.
            (prev, mean, 0.0)
        };
        if !(sigma_m > 0.0 && sigma_m.is_finite()) {
            return Err(Error::Invariant(format!(
                "per-source noise variance left its domain: {sigma_m}"
            )));
        }
        if !p.is_finite() {
            return Err(Error::Invariant(format!("source power left its domain: {p}")));
        }
        dirs.push(dir);
        sigmas.push(sigma_m);
        powers.push(p);
    }
    Ok(MemStoState {
        dirs,
        powers,
        noise: PerSourceNoise::new(sigmas)?,
        iter: state.iter + 1,
        loglik_trace: state.loglik_trace.clone(),
    })
}
