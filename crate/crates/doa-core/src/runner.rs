//! Experiment configuration, the azimuth-change stopping rule, Monte Carlo
//! orchestration over seeded realizations, and wanted-point classification.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use nalgebra::DMatrix;

use crate::array::{ArrayGeometry, Direction};
use crate::em::NoiseSplit;
use crate::error::{Error, Result};
use crate::search::{grid_init_multi, LineSearchParams};
use crate::sim::{gen_stochastic, sample_covariance, RngStream, SnapshotMatrix};
use crate::solver::{build_solver, Algorithm, IterationRecord, SignalModel, StartPoint};
use crate::C64;

/// 10^(dB/10).
pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Sensor layout, either a half-wavelength line or explicit coordinates.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum GeometrySpec {
    Ula { sensors: usize, wavelength: f64 },
    Explicit { positions: Vec<[f64; 3]>, wavelength: f64 },
}

impl Default for GeometrySpec {
    fn default() -> Self {
        GeometrySpec::Ula { sensors: 10, wavelength: 1.0 }
    }
}

impl GeometrySpec {
    pub fn build(&self) -> Result<ArrayGeometry> {
        match self {
            GeometrySpec::Ula { sensors, wavelength } => ArrayGeometry::ula(*sensors, *wavelength),
            GeometrySpec::Explicit { positions, wavelength } => ArrayGeometry::new(
                positions.iter().map(|p| nalgebra::Vector3::new(p[0], p[1], p[2])).collect(),
                *wavelength,
            ),
        }
    }
}

/// One estimator/model pairing to run on a realization's samples.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(deny_unknown_fields)]
pub struct SolverSpec {
    pub algorithm: Algorithm,
    pub model: SignalModel,
}

/// Starting-point configuration; absent pieces take the documented defaults.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct InitConfig {
    /// Initial azimuths in degrees; omit to scan a coarse grid of the sample
    /// covariance for peaks.
    pub azimuths_deg: Option<Vec<f64>>,
    /// Grid spacing in degrees for the scan-based initializer.
    pub grid_resolution_deg: f64,
    /// Initial uniform noise variance (linear scale).
    pub sigma: f64,
    /// Initial source powers (linear scale); default all ones.
    pub powers: Option<Vec<f64>>,
    /// Initial per-source noise variances; default sigma/M each.
    pub sigma_split: Option<Vec<f64>>,
    /// Complex value filling the initial waveform matrix, as [re, im].
    pub signal_value: [f64; 2],
}

impl Default for InitConfig {
    fn default() -> Self {
        Self {
            azimuths_deg: None,
            grid_resolution_deg: 1.0,
            sigma: 1.0,
            powers: None,
            sigma_split: None,
            signal_value: [1.0, 0.0],
        }
    }
}

/// Full description of one experiment: scene, data size, estimators, starting
/// point, stopping rule, and Monte Carlo scope.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub algorithm: Algorithm,
    pub model: SignalModel,
    /// Extra estimator/model pairs run on the same samples; when nonempty it
    /// replaces the single algorithm/model pair above.
    pub solvers: Vec<SolverSpec>,
    pub geometry: GeometrySpec,
    /// True source azimuths in degrees, inside (0, 180).
    pub true_azimuths_deg: Vec<f64>,
    /// Common elevation in degrees.
    pub elevation_deg: f64,
    /// True source powers in dB.
    pub powers_db: Vec<f64>,
    /// True noise variance in dB.
    pub sigma_db: f64,
    /// Snapshot count T.
    pub snapshots: usize,
    pub init: InitConfig,
    /// Fixed noise shares for EM; default uniform.
    pub alpha: Option<Vec<f64>>,
    /// Stopping threshold on the Euclidean azimuth change, degrees.
    pub epsilon_deg: f64,
    pub max_iterations: usize,
    pub realizations: usize,
    pub master_seed: u64,
    /// Per-azimuth error bound for counting an estimate as wanted, degrees.
    pub wanted_tolerance_deg: f64,
    pub search: LineSearchParams,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::Em,
            model: SignalModel::Deterministic,
            solvers: Vec::new(),
            geometry: GeometrySpec::default(),
            true_azimuths_deg: Vec::new(),
            elevation_deg: 90.0,
            powers_db: Vec::new(),
            sigma_db: 0.0,
            snapshots: 20,
            init: InitConfig::default(),
            alpha: None,
            epsilon_deg: 0.001,
            max_iterations: 2000,
            realizations: 1,
            master_seed: 0,
            wanted_tolerance_deg: 5.0,
            search: LineSearchParams::default(),
        }
    }
}

fn check_azimuths_deg(label: &str, azimuths: &[f64]) -> Result<()> {
    for az in azimuths {
        if !(*az > 0.0 && *az < 180.0) {
            return Err(Error::Config(format!(
                "{label} azimuths must lie strictly inside (0, 180) degrees, got {az}"
            )));
        }
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: Self =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("bad config: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry.build()?;
        let m = self.true_azimuths_deg.len();
        if m == 0 {
            return Err(Error::Config("true_azimuths_deg must name at least one source".into()));
        }
        check_azimuths_deg("true", &self.true_azimuths_deg)?;
        if self.powers_db.len() != m {
            return Err(Error::Config(format!(
                "powers_db has {} entries for {m} sources",
                self.powers_db.len()
            )));
        }
        if !(self.elevation_deg > 0.0 && self.elevation_deg <= 180.0) {
            return Err(Error::Config(format!(
                "elevation_deg must lie in (0, 180], got {}",
                self.elevation_deg
            )));
        }
        if self.snapshots == 0 {
            return Err(Error::Config("snapshots must be at least 1".into()));
        }
        if !(self.epsilon_deg > 0.0) {
            return Err(Error::Config(format!(
                "epsilon_deg must be positive, got {}",
                self.epsilon_deg
            )));
        }
        if self.max_iterations == 0 {
            return Err(Error::Config("max_iterations must be at least 1".into()));
        }
        if self.realizations == 0 {
            return Err(Error::Config("realizations must be at least 1".into()));
        }
        if !(self.wanted_tolerance_deg > 0.0 && self.wanted_tolerance_deg.is_finite()) {
            return Err(Error::Config(format!(
                "wanted_tolerance_deg must be positive, got {}",
                self.wanted_tolerance_deg
            )));
        }
        self.search.validate()?;
        if let Some(az) = &self.init.azimuths_deg {
            if az.len() != m {
                return Err(Error::Config(format!(
                    "init.azimuths_deg has {} entries for {m} sources",
                    az.len()
                )));
            }
            check_azimuths_deg("initial", az)?;
        }
        if !(self.init.grid_resolution_deg > 0.0 && self.init.grid_resolution_deg < 180.0) {
            return Err(Error::Config(format!(
                "init.grid_resolution_deg must lie in (0, 180), got {}",
                self.init.grid_resolution_deg
            )));
        }
        if !(self.init.sigma > 0.0 && self.init.sigma.is_finite()) {
            return Err(Error::Config(format!(
                "init.sigma must be positive, got {}",
                self.init.sigma
            )));
        }
        if let Some(p) = &self.init.powers {
            if p.len() != m {
                return Err(Error::Config(format!(
                    "init.powers has {} entries for {m} sources",
                    p.len()
                )));
            }
            if let Some(bad) = p.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
                return Err(Error::Config(format!(
                    "init.powers must be nonnegative, got {bad}"
                )));
            }
        }
        if let Some(s) = &self.init.sigma_split {
            if s.len() != m {
                return Err(Error::Config(format!(
                    "init.sigma_split has {} entries for {m} sources",
                    s.len()
                )));
            }
            if let Some(bad) = s.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
                return Err(Error::Config(format!(
                    "init.sigma_split must be positive, got {bad}"
                )));
            }
        }
        if !self.init.signal_value.iter().all(|v| v.is_finite()) {
            return Err(Error::Config(format!(
                "init.signal_value must be finite, got {:?}",
                self.init.signal_value
            )));
        }
        if let Some(a) = &self.alpha {
            if a.len() != m {
                return Err(Error::Config(format!(
                    "alpha has {} entries for {m} sources",
                    a.len()
                )));
            }
            NoiseSplit::new(a.clone())?;
        }
        Ok(())
    }

    /// Estimator/model pairs to run: the explicit list, or the single pair.
    pub fn solver_specs(&self) -> Vec<SolverSpec> {
        if self.solvers.is_empty() {
            vec![SolverSpec { algorithm: self.algorithm, model: self.model }]
        } else {
            self.solvers.clone()
        }
    }

    pub fn sources(&self) -> usize {
        self.true_azimuths_deg.len()
    }

    pub fn true_directions(&self) -> Result<Vec<Direction>> {
        self.true_azimuths_deg
            .iter()
            .map(|az| Direction::from_degrees(self.elevation_deg, *az))
            .collect()
    }

    pub fn powers_linear(&self) -> Vec<f64> {
        self.powers_db.iter().map(|db| db_to_linear(*db)).collect()
    }

    pub fn sigma_linear(&self) -> f64 {
        db_to_linear(self.sigma_db)
    }

    /// Draw the sample set of one realization from its dedicated RNG stream.
    pub fn draw_samples(&self, geom: &ArrayGeometry, realization: usize) -> Result<SnapshotMatrix> {
        let mut rng = RngStream::new(self.master_seed, realization as u64);
        gen_stochastic(
            geom,
            &self.true_directions()?,
            &self.powers_linear(),
            self.sigma_linear(),
            self.snapshots,
            &mut rng,
        )
    }

    /// Materialize the starting point, scanning the sample covariance for
    /// initial azimuths when none are configured.
    pub fn build_start(&self, geom: &ArrayGeometry, y: &SnapshotMatrix) -> Result<StartPoint> {
        let m = self.sources();
        let elevation = self.elevation_deg.to_radians();
        let dirs: Vec<Direction> = match &self.init.azimuths_deg {
            Some(az) => az
                .iter()
                .map(|a| Direction::from_degrees(self.elevation_deg, *a))
                .collect::<Result<_>>()?,
            None => {
                let ry = sample_covariance(y);
                grid_init_multi(geom, elevation, &ry, self.init.grid_resolution_deg.to_radians(), m)
                    .into_iter()
                    .map(|az| Direction::new(elevation, az))
                    .collect::<Result<_>>()?
            }
        };
        let fill = C64::new(self.init.signal_value[0], self.init.signal_value[1]);
        let signals = DMatrix::from_element(m, self.snapshots, fill);
        let powers = self.init.powers.clone().unwrap_or_else(|| vec![1.0; m]);
        let sigma = self.init.sigma;
        let sigma_split =
            self.init.sigma_split.clone().unwrap_or_else(|| vec![sigma / m as f64; m]);
        let alpha = match &self.alpha {
            Some(a) => NoiseSplit::new(a.clone())?,
            None => NoiseSplit::uniform(m),
        };
        Ok(StartPoint { dirs, signals, powers, sigma, sigma_split, alpha })
    }
}

/// Outcome of one estimator on one sample set.
#[derive(Debug, Clone, Serialize)]
pub struct RealizationResult {
    pub algorithm: Algorithm,
    pub model: SignalModel,
    pub final_azimuths_deg: Vec<f64>,
    /// Iterations actually executed (the trace also holds iteration 0).
    pub iterations: usize,
    /// True when the run stopped at max_iterations without meeting ε.
    pub capped: bool,
    /// True when every azimuth error is within tolerance under some pairing.
    pub wanted: bool,
    /// Diagnostic when the run aborted on a numerical failure.
    pub aborted: Option<String>,
    pub records: Vec<IterationRecord>,
}

/// Run the configured single estimator on one sample set.
pub fn run_solver(config: &ExperimentConfig, y: &SnapshotMatrix) -> RealizationResult {
    run_solver_combo(config, config.algorithm, config.model, y)
}

/// Run one estimator/model pair on one sample set; numerical failures are
/// reported in the result rather than returned as errors.
pub fn run_solver_combo(
    config: &ExperimentConfig,
    algorithm: Algorithm,
    model: SignalModel,
    y: &SnapshotMatrix,
) -> RealizationResult {
    match run_to_convergence(config, algorithm, model, y) {
        Ok(result) => result,
        Err(e) => RealizationResult {
            algorithm,
            model,
            final_azimuths_deg: Vec::new(),
            iterations: 0,
            capped: false,
            wanted: false,
            aborted: Some(e.to_string()),
            records: Vec::new(),
        },
    }
}

fn run_to_convergence(
    config: &ExperimentConfig,
    algorithm: Algorithm,
    model: SignalModel,
    y: &SnapshotMatrix,
) -> Result<RealizationResult> {
    config.validate()?;
    let geom = config.geometry.build()?;
    let start = config.build_start(&geom, y)?;
    let mut solver = build_solver(algorithm, model, y, &geom, &start, config.search)?;
    let first = solver.record()?;
    if !first.loglik.is_finite() {
        return Err(Error::Invariant(format!(
            "non-finite log-likelihood at the starting point: {}",
            first.loglik
        )));
    }
    let mut records = vec![first];
    let mut capped = true;
    for _ in 0..config.max_iterations {
        let rec = solver.step()?;
        if !rec.loglik.is_finite() || rec.azimuths_deg.iter().any(|a| !a.is_finite()) {
            return Err(Error::Invariant(format!(
                "non-finite iterate at iteration {}",
                rec.iteration
            )));
        }
        let prev = &records[records.len() - 1];
        let delta = rec
            .azimuths_deg
            .iter()
            .zip(&prev.azimuths_deg)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        records.push(rec);
        if delta <= config.epsilon_deg {
            capped = false;
            break;
        }
    }
    let last = records.last().expect("at least the starting record exists");
    let final_azimuths_deg = last.azimuths_deg.clone();
    let wanted = classify_wanted(
        &final_azimuths_deg,
        &config.true_azimuths_deg,
        config.wanted_tolerance_deg,
    );
    Ok(RealizationResult {
        algorithm,
        model,
        final_azimuths_deg,
        iterations: records.len() - 1,
        capped,
        wanted,
        aborted: None,
        records,
    })
}

/// True when some source-to-estimate pairing puts every azimuth error within
/// the tolerance; source order never affects the outcome.
pub fn classify_wanted(estimates_deg: &[f64], truth_deg: &[f64], tolerance_deg: f64) -> bool {
    if estimates_deg.len() != truth_deg.len() || truth_deg.is_empty() {
        return false;
    }
    fn assign(i: usize, used: &mut [bool], est: &[f64], truth: &[f64], tol: f64) -> bool {
        if i == truth.len() {
            return true;
        }
        for j in 0..est.len() {
            if !used[j] && (truth[i] - est[j]).abs() <= tol {
                used[j] = true;
                if assign(i + 1, used, est, truth, tol) {
                    return true;
                }
                used[j] = false;
            }
        }
        false
    }
    let mut used = vec![false; estimates_deg.len()];
    assign(0, &mut used, estimates_deg, truth_deg, tolerance_deg)
}

/// All estimator outcomes on one realization's shared sample set.
#[derive(Debug, Clone, Serialize)]
pub struct RealizationSet {
    pub realization: usize,
    /// Checksum of the sample set every estimator in this set consumed.
    pub checksum: u64,
    pub results: Vec<RealizationResult>,
}

/// Aggregate counts for one estimator across a Monte Carlo batch.
#[derive(Debug, Clone, Serialize)]
pub struct SolverSummary {
    pub algorithm: Algorithm,
    pub model: SignalModel,
    pub realizations: usize,
    pub wanted_count: usize,
    pub capped_count: usize,
    pub aborted_count: usize,
    /// Mean over clean, uncapped runs; NaN when there are none.
    pub mean_iterations: f64,
}

/// Full Monte Carlo output: per-realization detail plus per-estimator counts.
#[derive(Debug, Clone, Serialize)]
pub struct MonteCarloOutput {
    pub sets: Vec<RealizationSet>,
    pub summaries: Vec<SolverSummary>,
}

/// Run every configured estimator on each realization's shared samples.
/// Realizations execute in parallel; output order is by realization index.
pub fn monte_carlo(config: &ExperimentConfig) -> Result<MonteCarloOutput> {
    config.validate()?;
    let geom = config.geometry.build()?;
    let specs = config.solver_specs();
    let sets: Vec<RealizationSet> = (0..config.realizations)
        .into_par_iter()
        .map(|r| {
            let y = config.draw_samples(&geom, r)?;
            let results = specs
                .iter()
                .map(|s| run_solver_combo(config, s.algorithm, s.model, &y))
                .collect();
            Ok(RealizationSet { realization: r, checksum: y.checksum(), results })
        })
        .collect::<Result<Vec<_>>>()?;
    if sets.iter().all(|set| set.results.iter().all(|r| r.aborted.is_some())) {
        let first = sets
            .first()
            .and_then(|set| set.results.first())
            .and_then(|r| r.aborted.clone())
            .unwrap_or_else(|| "no results".into());
        return Err(Error::AllAborted(first));
    }
    let summaries = specs
        .iter()
        .enumerate()
        .map(|(idx, spec)| {
            let runs: Vec<&RealizationResult> =
                sets.iter().map(|set| &set.results[idx]).collect();
            let clean: Vec<&&RealizationResult> =
                runs.iter().filter(|r| r.aborted.is_none() && !r.capped).collect();
            let mean_iterations = if clean.is_empty() {
                f64::NAN
            } else {
                clean.iter().map(|r| r.iterations as f64).sum::<f64>() / clean.len() as f64
            };
            SolverSummary {
                algorithm: spec.algorithm,
                model: spec.model,
                realizations: runs.len(),
                wanted_count: runs.iter().filter(|r| r.wanted).count(),
                capped_count: runs.iter().filter(|r| r.capped).count(),
                aborted_count: runs.iter().filter(|r| r.aborted.is_some()).count(),
                mean_iterations,
            }
        })
        .collect();
    Ok(MonteCarloOutput { sets, summaries })
}
