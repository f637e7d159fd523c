//! `doa`: simulate array snapshots, run the estimators, and regenerate the
//! canned experiment data files.

use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use doa_core::figures::reproduce_figure;
use doa_core::runner::{
    monte_carlo, run_solver_combo, ExperimentConfig, GeometrySpec, RealizationSet, SolverSpec,
};
use doa_core::solver::{Algorithm, SignalModel};
use doa_core::Error;

#[derive(Parser)]
#[command(
    name = "doa",
    version,
    about = "Direction-of-arrival estimation with EM, MEM and SAGE iterations"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw one realization's snapshot matrix and write it out.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Realization index within the master seed's stream family.
        #[arg(long, default_value_t = 0)]
        realization: usize,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the configured estimators on one realization's samples.
    Solve {
        #[command(flatten)]
        common: Common,
        /// Realization index within the master seed's stream family.
        #[arg(long, default_value_t = 0)]
        realization: usize,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Keep full per-iteration traces in the output.
        #[arg(long)]
        traces: bool,
    },
    /// Run the full Monte Carlo batch and report per-estimator counts.
    Montecarlo {
        #[command(flatten)]
        common: Common,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Keep full per-iteration traces in the output.
        #[arg(long)]
        traces: bool,
    },
    /// Regenerate a named figure's data files (fig1..fig8).
    #[command(name = "reproduce-fig")]
    ReproduceFig {
        /// Figure name, fig1 through fig8.
        name: String,
        /// Directory receiving the CSV and config sidecar.
        #[arg(long, default_value = "figures")]
        out_dir: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

/// Configuration file plus per-field overrides; flags win over the file.
#[derive(Args)]
struct Common {
    /// Experiment configuration JSON file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Estimator: em, mem or sage.
    #[arg(long)]
    algorithm: Option<String>,
    /// Signal model: det or sto.
    #[arg(long)]
    model: Option<String>,
    /// Estimator/model pairs run on the same samples, e.g. em:det,sage:sto.
    #[arg(long, value_delimiter = ',')]
    solvers: Option<Vec<String>>,
    /// True source azimuths in degrees.
    #[arg(long, value_delimiter = ',')]
    true_azimuths_deg: Option<Vec<f64>>,
    /// Common elevation in degrees.
    #[arg(long)]
    elevation_deg: Option<f64>,
    /// True source powers in dB.
    #[arg(long, value_delimiter = ',')]
    powers_db: Option<Vec<f64>>,
    /// True noise variance in dB.
    #[arg(long)]
    sigma_db: Option<f64>,
    /// Snapshot count.
    #[arg(long)]
    snapshots: Option<usize>,
    /// Initial azimuths in degrees; omit to scan a coarse grid.
    #[arg(long, value_delimiter = ',')]
    init_azimuths_deg: Option<Vec<f64>>,
    /// Initial noise variance, linear scale.
    #[arg(long)]
    init_sigma: Option<f64>,
    /// Grid spacing in degrees for the scan-based initializer.
    #[arg(long)]
    grid_resolution_deg: Option<f64>,
    /// Fixed noise shares for the EM iterations.
    #[arg(long, value_delimiter = ',')]
    alpha: Option<Vec<f64>>,
    /// Stopping threshold on the azimuth change, degrees.
    #[arg(long)]
    epsilon_deg: Option<f64>,
    #[arg(long)]
    max_iterations: Option<usize>,
    #[arg(long)]
    realizations: Option<usize>,
    #[arg(long)]
    master_seed: Option<u64>,
    /// Per-azimuth error bound for wanted classification, degrees.
    #[arg(long)]
    wanted_tolerance_deg: Option<f64>,
    /// Sensor count of a uniform linear array.
    #[arg(long)]
    sensors: Option<usize>,
    /// Carrier wavelength.
    #[arg(long)]
    wavelength: Option<f64>,
}

#[derive(Debug)]
enum CliError {
    /// Bad configuration, arguments or I/O: exit code 1.
    Config(String),
    /// Every requested realization aborted numerically: exit code 2.
    Numerical(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::AllAborted(msg) => CliError::Numerical(msg),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Config(format!("I/O error: {e}"))
    }
}

fn parse_algorithm(text: &str) -> Result<Algorithm, CliError> {
    match text {
        "em" => Ok(Algorithm::Em),
        "mem" => Ok(Algorithm::Mem),
        "sage" => Ok(Algorithm::Sage),
        other => Err(CliError::Config(format!(
            "unknown algorithm {other:?} (expected em, mem or sage)"
        ))),
    }
}

fn parse_model(text: &str) -> Result<SignalModel, CliError> {
    match text {
        "det" | "deterministic" => Ok(SignalModel::Deterministic),
        "sto" | "stochastic" => Ok(SignalModel::Stochastic),
        other => Err(CliError::Config(format!(
            "unknown signal model {other:?} (expected det or sto)"
        ))),
    }
}

fn parse_solver_spec(text: &str) -> Result<SolverSpec, CliError> {
    let (alg, model) = text.split_once(':').ok_or_else(|| {
        CliError::Config(format!(
            "solver spec {text:?} must look like algorithm:model, e.g. em:det"
        ))
    })?;
    Ok(SolverSpec { algorithm: parse_algorithm(alg)?, model: parse_model(model)? })
}

impl Common {
    fn build_config(&self) -> Result<ExperimentConfig, CliError> {
        let mut config = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| {
                    CliError::Config(format!("cannot read {}: {e}", path.display()))
                })?;
                serde_json::from_str(&text).map_err(|e| {
                    CliError::Config(format!("bad config {}: {e}", path.display()))
                })?
            }
            None => ExperimentConfig::default(),
        };
        if let Some(a) = &self.algorithm {
            config.algorithm = parse_algorithm(a)?;
        }
        if let Some(m) = &self.model {
            config.model = parse_model(m)?;
        }
        if let Some(solvers) = &self.solvers {
            config.solvers =
                solvers.iter().map(|s| parse_solver_spec(s)).collect::<Result<_, _>>()?;
        }
        if let Some(az) = &self.true_azimuths_deg {
            config.true_azimuths_deg = az.clone();
        }
        if let Some(el) = self.elevation_deg {
            config.elevation_deg = el;
        }
        if let Some(p) = &self.powers_db {
            config.powers_db = p.clone();
        }
        if let Some(s) = self.sigma_db {
            config.sigma_db = s;
        }
        if let Some(t) = self.snapshots {
            config.snapshots = t;
        }
        if let Some(az) = &self.init_azimuths_deg {
            config.init.azimuths_deg = Some(az.clone());
        }
        if let Some(s) = self.init_sigma {
            config.init.sigma = s;
        }
        if let Some(g) = self.grid_resolution_deg {
            config.init.grid_resolution_deg = g;
        }
        if let Some(a) = &self.alpha {
            config.alpha = Some(a.clone());
        }
        if let Some(e) = self.epsilon_deg {
            config.epsilon_deg = e;
        }
        if let Some(k) = self.max_iterations {
            config.max_iterations = k;
        }
        if let Some(r) = self.realizations {
            config.realizations = r;
        }
        if let Some(seed) = self.master_seed {
            config.master_seed = seed;
        }
        if let Some(tol) = self.wanted_tolerance_deg {
            config.wanted_tolerance_deg = tol;
        }
        if self.sensors.is_some() || self.wavelength.is_some() {
            config.geometry = match (&config.geometry, self.sensors) {
                (GeometrySpec::Ula { sensors, wavelength }, _) => GeometrySpec::Ula {
                    sensors: self.sensors.unwrap_or(*sensors),
                    wavelength: self.wavelength.unwrap_or(*wavelength),
                },
                (GeometrySpec::Explicit { .. }, Some(sensors)) => GeometrySpec::Ula {
                    sensors,
                    wavelength: self.wavelength.unwrap_or(1.0),
                },
                (GeometrySpec::Explicit { positions, wavelength }, None) => {
                    GeometrySpec::Explicit {
                        positions: positions.clone(),
                        wavelength: self.wavelength.unwrap_or(*wavelength),
                    }
                }
            };
        }
        config.validate()?;
        Ok(config)
    }
}

/// Write to the file when given, stdout otherwise.
fn emit(out: &Option<PathBuf>, bytes: &[u8]) -> Result<(), CliError> {
    match out {
        Some(path) => fs::write(path, bytes).map_err(|e| {
            CliError::Config(format!("cannot write {}: {e}", path.display()))
        }),
        None => {
            std::io::stdout().write_all(bytes)?;
            Ok(())
        }
    }
}

fn simulate(
    common: &Common,
    realization: usize,
    format: Format,
    out: &Option<PathBuf>,
) -> Result<(), CliError> {
    let config = common.build_config()?;
    let geom = config.geometry.build()?;
    let y = config.draw_samples(&geom, realization)?;
    let mut bytes = Vec::new();
    match format {
        Format::Csv => y.write_csv(&mut bytes)?,
        Format::Json => y.to_json(&mut bytes)?,
    }
    emit(out, &bytes)
}

fn solve(
    common: &Common,
    realization: usize,
    out: &Option<PathBuf>,
    traces: bool,
) -> Result<(), CliError> {
    let config = common.build_config()?;
    let geom = config.geometry.build()?;
    let y = config.draw_samples(&geom, realization)?;
    let mut results: Vec<_> = config
        .solver_specs()
        .iter()
        .map(|s| run_solver_combo(&config, s.algorithm, s.model, &y))
        .collect();
    if results.iter().all(|r| r.aborted.is_some()) {
        let msg = results[0].aborted.clone().unwrap_or_else(|| "no results".into());
        return Err(CliError::Numerical(msg));
    }
    if !traces {
        for r in &mut results {
            r.records.clear();
        }
    }
    let set = RealizationSet { realization, checksum: y.checksum(), results };
    let mut text = serde_json::to_string_pretty(&set)
        .map_err(|e| CliError::Config(format!("cannot encode result: {e}")))?;
    text.push('\n');
    emit(out, text.as_bytes())
}

fn run_montecarlo(common: &Common, out: &Option<PathBuf>, traces: bool) -> Result<(), CliError> {
    let config = common.build_config()?;
    let mut output = monte_carlo(&config)?;
    if !traces {
        for set in &mut output.sets {
            for r in &mut set.results {
                r.records.clear();
            }
        }
    }
    let mut text = serde_json::to_string_pretty(&output)
        .map_err(|e| CliError::Config(format!("cannot encode result: {e}")))?;
    text.push('\n');
    emit(out, text.as_bytes())
}

fn reproduce(name: &str, out_dir: &PathBuf) -> Result<(), CliError> {
    let files = reproduce_figure(name, out_dir)?;
    let mut stdout = std::io::stdout();
    for file in files {
        writeln!(stdout, "{}", file.display())?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Simulate { common, realization, format, out } => {
            simulate(common, *realization, *format, out)
        }
        Command::Solve { common, realization, out, traces } => {
            solve(common, *realization, out, *traces)
        }
        Command::Montecarlo { common, out, traces } => run_montecarlo(common, out, *traces),
        Command::ReproduceFig { name, out_dir } => reproduce(name, out_dir),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests are successes; everything else is a
            // configuration error, never the numerical-abort code.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Numerical(msg)) => {
            eprintln!("error: every realization aborted: {msg}");
            ExitCode::from(2)
        }
    }
}
