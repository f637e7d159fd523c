//! Uniform stepping interface over the six estimator/model combinations, so
//! the Monte Carlo runner can drive any of them through one trait.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::array::{ArrayGeometry, Direction};
use crate::em::{
    em_det_estep, em_det_mstep, em_sto_estep, em_sto_mstep, EmDetState, EmStoState, NoiseSplit,
};
use crate::error::{Error, Result};
use crate::likelihood::{loglik_det, loglik_sto, DetParams, StoParams};
use crate::mem::{
    mem_det_estep, mem_det_mstep, mem_sto_estep, mem_sto_mstep, MemDetState, MemStoState,
    PerSourceNoise,
};
use crate::sage::{
    sage_det_iteration, sage_sto_iteration, SageDetState, SageStoState, SageSubstepIndex,
};
use crate::search::LineSearchParams;
use crate::sim::{sample_covariance, SnapshotMatrix};
use crate::C64;

/// Iterative estimator family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Em,
    Mem,
    Sage,
}

impl Algorithm {
    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::Em => "em",
            Algorithm::Mem => "mem",
            Algorithm::Sage => "sage",
        }
    }
}

/// Source-signal model the estimator assumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SignalModel {
    Deterministic,
    Stochastic,
}

impl SignalModel {
    pub fn name(&self) -> &'static str {
        match self {
            SignalModel::Deterministic => "det",
            SignalModel::Stochastic => "sto",
        }
    }
}

/// State of one iterate as reported to the runner: iteration number, azimuth
/// estimates in degrees, uniform-model noise level, optional per-source noise
/// split and powers, and the incomplete-data log-likelihood.
#[derive(Debug, Clone, Serialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub azimuths_deg: Vec<f64>,
    pub sigma: f64,
    pub sigma_split: Option<Vec<f64>>,
    pub powers: Option<Vec<f64>>,
    pub loglik: f64,
}

/// Starting point accepted by every solver; pieces an estimator does not use
/// are ignored (EM ignores the noise split, SAGE ignores alpha, and so on).
#[derive(Debug, Clone)]
pub struct StartPoint {
    pub dirs: Vec<Direction>,
    /// M×T initial waveforms for the deterministic-model estimators.
    pub signals: DMatrix<C64>,
    /// Initial source powers for the stochastic-model estimators.
    pub powers: Vec<f64>,
    /// Initial uniform noise level.
    pub sigma: f64,
    /// Initial per-source noise variances for MEM.
    pub sigma_split: Vec<f64>,
    /// Fixed noise shares for EM.
    pub alpha: NoiseSplit,
}

/// One iterative estimator bound to a data set and ready to advance.
pub trait Solver {
    /// Record of the current iterate without advancing.
    fn record(&self) -> Result<IterationRecord>;
    /// Advance one full iteration and return the new iterate's record.
    fn step(&mut self) -> Result<IterationRecord>;
}

/// Instantiate the solver for an algorithm/model pair over one sample set.
pub fn build_solver<'a>(
    algorithm: Algorithm,
    model: SignalModel,
    y: &'a SnapshotMatrix,
    geom: &'a ArrayGeometry,
    start: &StartPoint,
    search: LineSearchParams,
) -> Result<Box<dyn Solver + 'a>> {
    let m = start.dirs.len();
    if m == 0 {
        return Err(Error::Config("need at least one source".into()));
    }
    if start.signals.nrows() != m
        || start.powers.len() != m
        || start.sigma_split.len() != m
        || start.alpha.len() != m
    {
        return Err(Error::Config(format!(
            "start point is inconsistent: {m} directions, {} signal rows, {} powers, {} noise variances, {} shares",
            start.signals.nrows(),
            start.powers.len(),
            start.sigma_split.len(),
            start.alpha.len()
        )));
    }
    if !(start.sigma > 0.0 && start.sigma.is_finite()) {
        return Err(Error::Config(format!(
            "initial noise variance must be positive, got {}",
            start.sigma
        )));
    }
    Ok(match (algorithm, model) {
        (Algorithm::Em, SignalModel::Deterministic) => Box::new(EmDetSolver {
            y,
            geom,
            alpha: start.alpha.clone(),
            search,
            state: EmDetState {
                dirs: start.dirs.clone(),
                signals: start.signals.clone(),
                sigma: start.sigma,
                iter: 0,
                loglik_trace: Vec::new(),
            },
        }),
        (Algorithm::Em, SignalModel::Stochastic) => Box::new(EmStoSolver {
            ry: sample_covariance(y),
            snapshots: y.snapshots(),
            geom,
            alpha: start.alpha.clone(),
            search,
            state: EmStoState {
                dirs: start.dirs.clone(),
                powers: start.powers.clone(),
                sigma: start.sigma,
                iter: 0,
                loglik_trace: Vec::new(),
            },
        }),
        (Algorithm::Mem, SignalModel::Deterministic) => Box::new(MemDetSolver {
            y,
            geom,
            search,
            state: MemDetState {
                dirs: start.dirs.clone(),
                signals: start.signals.clone(),
                noise: PerSourceNoise::new(start.sigma_split.clone())?,
                iter: 0,
                loglik_trace: Vec::new(),
            },
        }),
        (Algorithm::Mem, SignalModel::Stochastic) => Box::new(MemStoSolver {
            ry: sample_covariance(y),
            snapshots: y.snapshots(),
            geom,
            search,
            state: MemStoState {
                dirs: start.dirs.clone(),
                powers: start.powers.clone(),
                noise: PerSourceNoise::new(start.sigma_split.clone())?,
                iter: 0,
                loglik_trace: Vec::new(),
            },
        }),
        (Algorithm::Sage, SignalModel::Deterministic) => Box::new(SageDetSolver {
            y,
            geom,
            search,
            state: SageDetState {
                dirs: start.dirs.clone(),
                signals: start.signals.clone(),
                sigma: start.sigma,
                substep: SageSubstepIndex { k: 0, i: 0 },
                loglik_trace: Vec::new(),
            },
        }),
        (Algorithm::Sage, SignalModel::Stochastic) => Box::new(SageStoSolver {
            ry: sample_covariance(y),
            snapshots: y.snapshots(),
            geom,
            search,
            state: SageStoState {
                dirs: start.dirs.clone(),
                powers: start.powers.clone(),
                sigma: start.sigma,
                phat: start.powers.clone(),
                substep: SageSubstepIndex { k: 0, i: 0 },
                loglik_trace: Vec::new(),
            },
        }),
    })
}

fn azimuths_deg(dirs: &[Direction]) -> Vec<f64> {
    dirs.iter().map(Direction::azimuth_degrees).collect()
}

struct EmDetSolver<'a> {
    y: &'a SnapshotMatrix,
    geom: &'a ArrayGeometry,
    alpha: NoiseSplit,
    search: LineSearchParams,
    state: EmDetState,
}

impl Solver for EmDetSolver<'_> {
    fn record(&self) -> Result<IterationRecord> {
        let loglik = loglik_det(
            self.y,
            &DetParams {
                dirs: &self.state.dirs,
                signals: &self.state.signals,
                sigma: self.state.sigma,
            },
            self.geom,
        )?;
        Ok(IterationRecord {
            iteration: self.state.iter,
            azimuths_deg: azimuths_deg(&self.state.dirs),
            sigma: self.state.sigma,
            sigma_split: None,
            powers: None,
            loglik,
        })
    }

    fn step(&mut self) -> Result<IterationRecord> {
        let (surrogates, c) = em_det_estep(self.y, &self.state, &self.alpha, self.geom)?;
        self.state =
            em_det_mstep(&surrogates, c, &self.state, &self.alpha, self.geom, &self.search)?;
        let rec = self.record()?;
        self.state.loglik_trace.push(rec.loglik);
        Ok(rec)
    }
}

struct EmStoSolver<'a> {
    ry: DMatrix<C64>,
    snapshots: usize,
    geom: &'a ArrayGeometry,
    alpha: NoiseSplit,
    search: LineSearchParams,
    state: EmStoState,
}

impl Solver for EmStoSolver<'_> {
    fn record(&self) -> Result<IterationRecord> {
        let loglik = loglik_sto(
            &self.ry,
            &StoParams {
                dirs: &self.state.dirs,
                powers: &self.state.powers,
                sigma: self.state.sigma,
            },
            self.geom,
            self.snapshots,
        )?;
        Ok(IterationRecord {
            iteration: self.state.iter,
            azimuths_deg: azimuths_deg(&self.state.dirs),
            sigma: self.state.sigma,
            sigma_split: None,
            powers: Some(self.state.powers.clone()),
            loglik,
        })
    }

    fn step(&mut self) -> Result<IterationRecord> {
        let surrogates = em_sto_estep(&self.ry, &self.state, &self.alpha, self.geom)?;
        self.state =
            em_sto_mstep(&surrogates, &self.state, &self.alpha, self.geom, &self.search)?;
        let rec = self.record()?;
        self.state.loglik_trace.push(rec.loglik);
        Ok(rec)
    }
}

struct MemDetSolver<'a> {
    y: &'a SnapshotMatrix,
    geom: &'a ArrayGeometry,
    search: LineSearchParams,
    state: MemDetState,
}

impl Solver for MemDetSolver<'_> {
    fn record(&self) -> Result<IterationRecord> {
        let loglik = loglik_det(
            self.y,
            &DetParams {
                dirs: &self.state.dirs,
                signals: &self.state.signals,
                sigma: self.state.noise.total(),
            },
            self.geom,
        )?;
        Ok(IterationRecord {
            iteration: self.state.iter,
            azimuths_deg: azimuths_deg(&self.state.dirs),
            sigma: self.state.noise.total(),
            sigma_split: Some(self.state.noise.sigmas().to_vec()),
            powers: None,
            loglik,
        })
    }

    fn step(&mut self) -> Result<IterationRecord> {
        let (surrogates, c) = mem_det_estep(self.y, &self.state, self.geom)?;
        self.state = mem_det_mstep(&surrogates, &c, &self.state, self.geom, &self.search)?;
        let rec = self.record()?;
        self.state.loglik_trace.push(rec.loglik);
        Ok(rec)
    }
}

struct MemStoSolver<'a> {
    ry: DMatrix<C64>,
    snapshots: usize,
    geom: &'a ArrayGeometry,
    search: LineSearchParams,
    state: MemStoState,
}

impl Solver for MemStoSolver<'_> {
    fn record(&self) -> Result<IterationRecord> {
        let loglik = loglik_sto(
            &self.ry,
            &StoParams {
                dirs: &self.state.dirs,
                powers: &self.state.powers,
                sigma: self.state.noise.total(),
            },
            self.geom,
            self.snapshots,
        )?;
        Ok(IterationRecord {
            iteration: self.state.iter,
            azimuths_deg: azimuths_deg(&self.state.dirs),
            sigma: self.state.noise.total(),
            sigma_split: Some(self.state.noise.sigmas().to_vec()),
            powers: Some(self.state.powers.clone()),
            loglik,
        })
    }

    fn step(&mut self) -> Result<IterationRecord> {
        let surrogates = mem_sto_estep(&self.ry, &self.state, self.geom)?;
        self.state = mem_sto_mstep(&surrogates, &self.state, self.geom, &self.search)?;
        let rec = self.record()?;
        self.state.loglik_trace.push(rec.loglik);
        Ok(rec)
    }
}

struct SageDetSolver<'a> {
    y: &'a SnapshotMatrix,
    geom: &'a ArrayGeometry,
    search: LineSearchParams,
    state: SageDetState,
}

impl Solver for SageDetSolver<'_> {
    fn record(&self) -> Result<IterationRecord> {
        // The deterministic sub-step admits sigma = 0; floor it for the log.
        let loglik = loglik_det(
            self.y,
            &DetParams {
                dirs: &self.state.dirs,
                signals: &self.state.signals,
                sigma: self.state.sigma.max(1e-300),
            },
            self.geom,
        )?;
        Ok(IterationRecord {
            iteration: self.state.substep.k,
            azimuths_deg: azimuths_deg(&self.state.dirs),
            sigma: self.state.sigma,
            sigma_split: None,
            powers: None,
            loglik,
        })
    }

    fn step(&mut self) -> Result<IterationRecord> {
        self.state = sage_det_iteration(self.y, &self.state, self.geom, &self.search)?;
        let rec = self.record()?;
        self.state.loglik_trace.push(rec.loglik);
        Ok(rec)
    }
}

struct SageStoSolver<'a> {
    ry: DMatrix<C64>,
    snapshots: usize,
    geom: &'a ArrayGeometry,
    search: LineSearchParams,
    state: SageStoState,
}

impl Solver for SageStoSolver<'_> {
    fn record(&self) -> Result<IterationRecord> {
        let loglik = loglik_sto(
            &self.ry,
            &StoParams {
                dirs: &self.state.dirs,
                powers: &self.state.powers,
                sigma: self.state.sigma,
            },
            self.geom,
            self.snapshots,
        )?;
        Ok(IterationRecord {
            iteration: self.state.substep.k,
            azimuths_deg: azimuths_deg(&self.state.dirs),
            sigma: self.state.sigma,
            sigma_split: None,
            powers: Some(self.state.powers.clone()),
            loglik,
        })
    }

    fn step(&mut self) -> Result<IterationRecord> {
        self.state = sage_sto_iteration(&self.ry, &self.state, self.geom, &self.search)?;
        let rec = self.record()?;
        self.state.loglik_trace.push(rec.loglik);
        Ok(rec)
    }
}
