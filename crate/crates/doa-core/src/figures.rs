//! Canned experiment presets that emit plot-ready CSV files, one preset per
//! figure name, each with a JSON sidecar recording the exact configuration.

use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::runner::{monte_carlo, ExperimentConfig, InitConfig, MonteCarloOutput, SolverSpec};
use crate::solver::{Algorithm, SignalModel};

/// Per-iteration trace row for the convergence figures.
#[derive(Debug, Serialize)]
struct TraceRow {
    k: usize,
    algorithm: &'static str,
    loglik: f64,
    phi1_deg: f64,
    phi2_deg: f64,
}

/// Final-estimate row for the single-model scatter figures.
#[derive(Debug, Serialize)]
struct ScatterRow {
    realization: usize,
    algorithm: &'static str,
    phi1_hat_deg: f64,
    phi2_hat_deg: f64,
    wanted: bool,
}

/// Final-estimate row for the cross-model scatter figure.
#[derive(Debug, Serialize)]
struct ComboRow {
    algorithm: &'static str,
    model: &'static str,
    phi1_hat: f64,
    phi2_hat: f64,
}

/// Iteration counts of the four cross-model estimators on shared samples.
#[derive(Debug, Serialize)]
struct IterationRow {
    realization: usize,
    em_det_iters: usize,
    em_sto_iters: usize,
    sage_det_iters: usize,
    sage_sto_iters: usize,
}

fn spec(algorithm: Algorithm, model: SignalModel) -> SolverSpec {
    SolverSpec { algorithm, model }
}

fn all_of(model: SignalModel) -> Vec<SolverSpec> {
    vec![
        spec(Algorithm::Em, model),
        spec(Algorithm::Mem, model),
        spec(Algorithm::Sage, model),
    ]
}

/// EM and SAGE under both signal models, the pairing the last two figures use.
fn cross_model() -> Vec<SolverSpec> {
    vec![
        spec(Algorithm::Em, SignalModel::Deterministic),
        spec(Algorithm::Em, SignalModel::Stochastic),
        spec(Algorithm::Sage, SignalModel::Deterministic),
        spec(Algorithm::Sage, SignalModel::Stochastic),
    ]
}

fn scene(
    truth: [f64; 2],
    powers_db: [f64; 2],
    init_az: [f64; 2],
    solvers: Vec<SolverSpec>,
    realizations: usize,
    master_seed: u64,
) -> ExperimentConfig {
    ExperimentConfig {
        solvers,
        true_azimuths_deg: truth.to_vec(),
        powers_db: powers_db.to_vec(),
        sigma_db: 4.0,
        init: InitConfig { azimuths_deg: Some(init_az.to_vec()), ..Default::default() },
        realizations,
        master_seed,
        ..Default::default()
    }
}

/// Two well-separated sources traced by the three deterministic-model
/// estimators on one sample set.
pub fn fig1_config() -> ExperimentConfig {
    scene([20.0, 80.0], [-2.0, 4.0], [24.0, 84.0], all_of(SignalModel::Deterministic), 1, 101)
}

/// Deterministic-model scatter, separated sources, distant start.
pub fn fig2_config() -> ExperimentConfig {
    scene([25.0, 75.0], [-4.0, 2.0], [40.0, 60.0], all_of(SignalModel::Deterministic), 200, 102)
}

/// Deterministic-model scatter, closely spaced sources.
pub fn fig3_config() -> ExperimentConfig {
    scene([70.0, 78.0], [-2.0, 4.0], [50.0, 58.0], all_of(SignalModel::Deterministic), 200, 103)
}

/// Stochastic-model counterpart of the first trace figure.
pub fn fig4_config() -> ExperimentConfig {
    scene([20.0, 80.0], [-4.0, 4.0], [24.0, 84.0], all_of(SignalModel::Stochastic), 1, 104)
}

/// Stochastic-model scatter, separated sources.
pub fn fig5_config() -> ExperimentConfig {
    scene([25.0, 75.0], [-4.0, 2.0], [40.0, 60.0], all_of(SignalModel::Stochastic), 200, 105)
}

/// Stochastic-model scatter, closely spaced weak sources.
pub fn fig6_config() -> ExperimentConfig {
    scene([70.0, 78.0], [-2.0, -1.0], [55.0, 63.0], all_of(SignalModel::Stochastic), 200, 106)
}

/// Cross-model scatter: EM and SAGE under both models on shared samples.
pub fn fig7_config() -> ExperimentConfig {
    scene([50.0, 100.0], [-4.0, 4.0], [55.0, 95.0], cross_model(), 50, 107)
}

/// Iteration counts for the cross-model batch; shares the previous figure's
/// seed so the two files describe the same runs.
pub fn fig8_config() -> ExperimentConfig {
    fig7_config()
}

/// Write the named figure's data files into `out_dir`, returning their paths.
pub fn reproduce_figure(name: &str, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let plan = match name {
        "fig1" => (fig1_config(), FigureKind::Trace, "fig1_trace.csv"),
        "fig2" => (fig2_config(), FigureKind::Scatter, "fig2_scatter.csv"),
        "fig3" => (fig3_config(), FigureKind::Scatter, "fig3_scatter.csv"),
        "fig4" => (fig4_config(), FigureKind::Trace, "fig4_trace.csv"),
        "fig5" => (fig5_config(), FigureKind::Scatter, "fig5_scatter.csv"),
        "fig6" => (fig6_config(), FigureKind::Scatter, "fig6_scatter.csv"),
        "fig7" => (fig7_config(), FigureKind::ComboScatter, "fig7_scatter.csv"),
        "fig8" => (fig8_config(), FigureKind::Iterations, "fig8_iterations.csv"),
        other => return Err(Error::UnknownFigure(other.to_string())),
    };
    std::fs::create_dir_all(out_dir)?;
    let (config, kind, file_name) = plan;
    let sidecar = out_dir.join(format!("{name}_config.json"));
    let mut text = serde_json::to_string_pretty(&config)?;
    text.push('\n');
    std::fs::write(&sidecar, text)?;
    let data = out_dir.join(file_name);
    let output = monte_carlo(&config)?;
    let mut writer = csv::Writer::from_path(&data)?;
    match kind {
        FigureKind::Trace => write_trace(&mut writer, &output)?,
        FigureKind::Scatter => write_scatter(&mut writer, &output)?,
        FigureKind::ComboScatter => write_combo_scatter(&mut writer, &output)?,
        FigureKind::Iterations => write_iterations(&mut writer, &output)?,
    }
    writer.flush()?;
    Ok(vec![data, sidecar])
}

enum FigureKind {
    Trace,
    Scatter,
    ComboScatter,
    Iterations,
}

fn write_trace<W: std::io::Write>(
    writer: &mut csv::Writer<W>,
    output: &MonteCarloOutput,
) -> Result<()> {
    for set in &output.sets {
        for result in &set.results {
            for rec in &result.records {
                writer.serialize(TraceRow {
                    k: rec.iteration,
                    algorithm: result.algorithm.name(),
                    loglik: rec.loglik,
                    phi1_deg: rec.azimuths_deg[0],
                    phi2_deg: rec.azimuths_deg[1],
                })?;
            }
        }
    }
    Ok(())
}

fn write_scatter<W: std::io::Write>(
    writer: &mut csv::Writer<W>,
    output: &MonteCarloOutput,
) -> Result<()> {
    for set in &output.sets {
        for result in &set.results {
            if result.aborted.is_some() {
                continue;
            }
            writer.serialize(ScatterRow {
                realization: set.realization,
                algorithm: result.algorithm.name(),
                phi1_hat_deg: result.final_azimuths_deg[0],
                phi2_hat_deg: result.final_azimuths_deg[1],
                wanted: result.wanted,
            })?;
        }
    }
    Ok(())
}

fn write_combo_scatter<W: std::io::Write>(
    writer: &mut csv::Writer<W>,
    output: &MonteCarloOutput,
) -> Result<()> {
    for set in &output.sets {
        for result in &set.results {
            if result.aborted.is_some() {
                continue;
            }
            writer.serialize(ComboRow {
                algorithm: result.algorithm.name(),
                model: result.model.name(),
                phi1_hat: result.final_azimuths_deg[0],
                phi2_hat: result.final_azimuths_deg[1],
            })?;
        }
    }
    Ok(())
}

fn write_iterations<W: std::io::Write>(
    writer: &mut csv::Writer<W>,
    output: &MonteCarloOutput,
) -> Result<()> {
    // Column order matches the cross-model solver list.
    for set in &output.sets {
        if set.results.iter().any(|r| r.aborted.is_some()) {
            continue;
        }
        writer.serialize(IterationRow {
            realization: set.realization,
            em_det_iters: set.results[0].iterations,
            em_sto_iters: set.results[1].iterations,
            sage_det_iters: set.results[2].iterations,
            sage_sto_iters: set.results[3].iterations,
        })?;
    }
    Ok(())
}
