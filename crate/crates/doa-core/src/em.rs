//! EM iterations with an estimated uniform noise variance: a full EM step for
//! the deterministic signal model and a conditional-maximization split for the
//! stochastic signal model. Each iteration never decreases the incomplete-data
//! log-likelihood.

use nalgebra::{Cholesky, DMatrix};

use crate::array::{
    projection_stats, steering_matrix, steering_vector, ArrayGeometry, Direction,
};
use crate::error::{Error, Result};
use crate::search::{ascend, LineSearchParams};
use crate::sim::SnapshotMatrix;
use crate::surrogate::{conditional_rhat, det_complete_data, rank1_plus_diag, CompleteDataStats};
use crate::C64;

/// Fixed split of the observation noise across sources: α_m > 0, Σ α_m = 1.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSplit(Vec<f64>);

impl NoiseSplit {
    pub fn new(alpha: Vec<f64>) -> Result<Self> {
        if alpha.is_empty() {
            return Err(Error::Config("noise split needs at least one source".into()));
        }
        if let Some(a) = alpha.iter().find(|a| !(**a > 0.0 && a.is_finite())) {
            return Err(Error::Config(format!("noise shares must be positive, got {a}")));
        }
        let sum: f64 = alpha.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!("noise shares must sum to 1, got {sum}")));
        }
        Ok(Self(alpha))
    }

    /// α_m = 1/M for every source.
    pub fn uniform(sources: usize) -> Self {
        assert!(sources >= 1, "need at least one source");
        Self(vec![1.0 / sources as f64; sources])
    }

    pub fn weights(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Deterministic-model iterate: directions, waveforms, noise variance.
#[derive(Debug, Clone)]
pub struct EmDetState {
    pub dirs: Vec<Direction>,
    /// M×T waveform estimates.
    pub signals: DMatrix<C64>,
    pub sigma: f64,
    pub iter: usize,
    pub loglik_trace: Vec<f64>,
}

/// Stochastic-model iterate: directions, source powers, noise variance.
#[derive(Debug, Clone)]
pub struct EmStoState {
    pub dirs: Vec<Direction>,
    pub powers: Vec<f64>,
    pub sigma: f64,
    pub iter: usize,
    pub loglik_trace: Vec<f64>,
}

fn check_det_dims(
    y: &SnapshotMatrix,
    dirs: &[Direction],
    signals: &DMatrix<C64>,
    split_len: usize,
    geom: &ArrayGeometry,
) -> Result<()> {
    if y.sensors() != geom.sensors() {
        return Err(Error::Dimension(format!(
            "snapshots have {} sensors, array has {}",
            y.sensors(),
            geom.sensors()
        )));
    }
    if dirs.len() != split_len || signals.nrows() != dirs.len() {
        return Err(Error::Dimension(format!(
            "inconsistent source counts: {} directions, {} signal rows, {} noise shares",
            dirs.len(),
            signals.nrows(),
            split_len
        )));
    }
    if signals.ncols() != y.snapshots() {
        return Err(Error::Dimension(format!(
            "signals hold {} snapshots but data holds {}",
            signals.ncols(),
            y.snapshots()
        )));
    }
    Ok(())
}

/// E-step for the deterministic model: complete-data snapshots
/// x_m = α_m·(Y − A S) + a_m s_m, their covariances, and the surrogate
/// constant c = N(M−1)σ that carries the previous noise iterate.
pub fn em_det_estep(
    y: &SnapshotMatrix,
    state: &EmDetState,
    alpha: &NoiseSplit,
    geom: &ArrayGeometry,
) -> Result<(Vec<CompleteDataStats>, f64)> {
    check_det_dims(y, &state.dirs, &state.signals, alpha.len(), geom)?;
    let a = steering_matrix(geom, &state.dirs);
    let residual = y.data() - &a * &state.signals;
    let surrogates = state
        .dirs
        .iter()
        .enumerate()
        .map(|(m, _)| {
            det_complete_data(
                &residual,
                &a.column(m).clone_owned(),
                &state.signals.row(m).clone_owned(),
                alpha.weights()[m],
            )
        })
        .collect();
    let n = geom.sensors() as f64;
    let m = state.dirs.len() as f64;
    Ok((surrogates, n * (m - 1.0) * state.sigma))
}

/// M-step for the deterministic model: per-source warm-started searches,
/// s_m = (1/N)·a_m^H x_m, and σ = [c + Σ_m d_m/α_m] / (M·N).
pub fn em_det_mstep(
    surrogates: &[CompleteDataStats],
    c: f64,
    state: &EmDetState,
    alpha: &NoiseSplit,
    geom: &ArrayGeometry,
    search: &LineSearchParams,
) -> Result<EmDetState> {
    let n = geom.sensors() as f64;
    let m = state.dirs.len();
    let mut dirs = Vec::with_capacity(m);
    let mut signals = state.signals.clone();
    let mut d_over_alpha = 0.0;
    for (idx, surr) in surrogates.iter().enumerate() {
        let prev = state.dirs[idx];
        let out = ascend(geom, prev.elevation(), &surr.rhat, prev.azimuth(), search);
        let dir = Direction::new(prev.elevation(), out.azimuth)?;
        let a = steering_vector(geom, dir);
        let row = a.entries().adjoint() * &surr.snapshots / C64::new(n, 0.0);
        signals.set_row(idx, &row);
        let stats = projection_stats(geom, dir, &surr.rhat)?;
        d_over_alpha += stats.d / alpha.weights()[idx];
        dirs.push(dir);
    }
    let sigma = (c + d_over_alpha) / (m as f64 * n);
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::Invariant(format!(
            "noise variance left its domain: {sigma}"
        )));
    }
    Ok(EmDetState {
        dirs,
        signals,
        sigma,
        iter: state.iter + 1,
        loglik_trace: state.loglik_trace.clone(),
    })
}

/// E-step for the stochastic model: conditional covariance surrogates with
/// C_m = P_m a_m a_m^H + α_m σ I.
pub fn em_sto_estep(
    ry: &DMatrix<C64>,
    state: &EmStoState,
    alpha: &NoiseSplit,
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
    if state.dirs.len() != alpha.len() || state.powers.len() != state.dirs.len() {
        return Err(Error::Dimension(format!(
            "inconsistent source counts: {} directions, {} powers, {} noise shares",
            state.dirs.len(),
            state.powers.len(),
            alpha.len()
        )));
    }
    let cms: Vec<DMatrix<C64>> = state
        .dirs
        .iter()
        .zip(&state.powers)
        .zip(alpha.weights())
        .map(|((dir, p), a)| {
            let sv = steering_vector(geom, *dir);
            rank1_plus_diag(sv.entries(), *p, a * state.sigma)
        })
        .collect();
    let mut cy = DMatrix::<C64>::zeros(n, n);
    for cm in &cms {
        cy += cm;
    }
    let chol = Cholesky::new(cy).ok_or(Error::Singular)?;
    Ok(cms.iter().map(|cm| conditional_rhat(ry, &chol, cm)).collect())
}

/// First CM-step holds σ fixed: warm-started searches and
/// P_m = max{(e_m − α_m σ)/N, 0}, retaining the previous direction when the
/// power clamps to zero; second CM-step σ = σ/N + (1/MN)·Σ_m d_m/α_m.
pub fn em_sto_mstep(
    surrogates: &[DMatrix<C64>],
    state: &EmStoState,
    alpha: &NoiseSplit,
    geom: &ArrayGeometry,
    search: &LineSearchParams,
) -> Result<EmStoState> {
    let n = geom.sensors() as f64;
    let m = state.dirs.len();
    let mut dirs = Vec::with_capacity(m);
    let mut powers = Vec::with_capacity(m);
    let mut d_over_alpha = 0.0;
    for (idx, rhat) in surrogates.iter().enumerate() {
        let prev = state.dirs[idx];
        let a_m = alpha.weights()[idx];
        let out = ascend(geom, prev.elevation(), rhat, prev.azimuth(), search);
        let cand = Direction::new(prev.elevation(), out.azimuth)?;
        let stats = projection_stats(geom, cand, rhat)?;
        let p = (stats.e - a_m * state.sigma) / n;
        let (dir, d) = if p > 0.0 {
            (cand, stats.d)
        } else {
            // Zero power leaves the direction indeterminate; keep the previous iterate.
            (prev, projection_stats(geom, prev, rhat)?.d)
        };
        if !p.is_finite() {
            return Err(Error::Invariant(format!("source power left its domain: {p}")));
        }
        powers.push(p.max(0.0));
        d_over_alpha += d / a_m;
        dirs.push(dir);
    }
    let sigma = state.sigma / n + d_over_alpha / (m as f64 * n);
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::Invariant(format!(
            "noise variance left its domain: {sigma}"
        )));
    }
    Ok(EmStoState {
        dirs,
        powers,
        sigma,
        iter: state.iter + 1,
        loglik_trace: state.loglik_trace.clone(),
    })
}
