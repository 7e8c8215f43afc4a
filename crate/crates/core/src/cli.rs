//! Command-line interface. Data goes to stdout or `--out`, diagnostics to
//! stderr. Exit codes: 0 on success, 1 on usage errors, 2 when a model,
//! evidence or config file is unreadable or invalid.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use crate::exact::ExactOracle;
use crate::experiment::{
    fmt_sig9, reference_network, run_experiment, write_block_rows, write_cross_section_csv,
    ExperimentConfig, DEFAULT_HORIZON, DEFAULT_RUNS, DEFAULT_SAMPLE_COUNTS, FULL_SAMPLE_COUNTS,
    SERIES_HEADER,
};
use crate::format::{evidence_to_json, load_evidence, load_model, FormatError, NetworkFile};
use crate::gauss2d::{
    kalman_oracle, particle_track_2d_with, simulate_truth_2d, write_snapshot_rows, write_track_csv,
    Gauss2dModel, SNAPSHOT_HEADER,
};
use crate::model::{generate_truth_and_evidence, DpnModel, SliceKind};
use crate::reversal::ReversedModel;
use crate::rng::{derive_seed, stream, tag};
use crate::sampler::{Algorithm, MarginalEstimate, Monitor};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_INVALID: i32 = 2;

/// Name accepted wherever a model path is expected to select the built-in
/// reference network.
pub const BUILTIN_R1: &str = "r1";

#[derive(Debug, Parser)]
#[command(
    name = "dpnsim",
    version,
    about = "Stochastic simulation for dynamic probabilistic networks"
)]
pub struct Cli {
    /// Worker threads (0 = all cores). Output does not depend on this.
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a network file and report every violation.
    Validate(ModelArgs),
    /// Exact filtered marginals for an evidence file.
    Exact(ExactArgs),
    /// Run one sampler over an evidence file and print its marginal estimates.
    Run(RunArgs),
    /// Error-vs-time experiment grid against the exact filter.
    Experiment(ExperimentArgs),
    /// Print the evidence-reversed network as a network file.
    ReverseDump(ModelArgs),
    /// 2-D random-walk tracking demo with a Kalman reference.
    Track2d(Track2dArgs),
    /// Sample an evidence sequence (and optionally the hidden states) from a model.
    Simulate(SimulateArgs),
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// Network file, or "r1" for the built-in reference network.
    #[arg(long)]
    pub model: String,
}

#[derive(Debug, Args)]
pub struct ExactArgs {
    /// Network file, or "r1" for the built-in reference network.
    #[arg(long)]
    pub model: String,
    #[arg(long)]
    pub evidence: PathBuf,
    /// Output file (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// lw, er, sof or ersof.
    #[arg(long)]
    pub algorithm: Algorithm,
    /// Network file, or "r1" for the built-in reference network.
    #[arg(long)]
    pub model: String,
    #[arg(long)]
    pub evidence: PathBuf,
    #[arg(long, default_value_t = 1000)]
    pub samples: usize,
    #[arg(long)]
    pub seed: u64,
    /// Output file (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    /// JSON config with optional keys model, algorithms, sample_counts,
    /// horizon, runs and master_seed. Without it the desk-scale grid is used.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Master seed; overrides the config's master_seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Per-(algorithm, N, t) CSV (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write the t = T cross-section CSV here.
    #[arg(long)]
    pub cross_section: Option<PathBuf>,
    /// Use N in {25, 100, 1000, 10000} instead of the configured sample counts.
    #[arg(long)]
    pub full_grid: bool,
}

#[derive(Debug, Args)]
pub struct Track2dArgs {
    /// lw, sof or ersof.
    #[arg(long, default_value = "ersof")]
    pub algorithm: Algorithm,
    /// Per-axis standard deviation of a random-walk step.
    #[arg(long, default_value_t = 1.0)]
    pub q: f64,
    /// Per-axis standard deviation of the sensor noise.
    #[arg(long, default_value_t = 0.05)]
    pub r: f64,
    #[arg(long, default_value_t = 100)]
    pub samples: usize,
    /// Horizon T; slices 0..=T are reported.
    #[arg(long, default_value_t = 20)]
    pub steps: usize,
    #[arg(long)]
    pub seed: u64,
    /// Output file (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write every particle of every slice to this CSV.
    #[arg(long)]
    pub snapshots: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Network file, or "r1" for the built-in reference network.
    #[arg(long)]
    pub model: String,
    /// Horizon T; slices 0..=T are generated.
    #[arg(long, default_value_t = DEFAULT_HORIZON)]
    pub horizon: usize,
    #[arg(long)]
    pub seed: u64,
    /// Evidence file to write (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write the hidden state sequence in the evidence-file format.
    #[arg(long)]
    pub truth: Option<PathBuf>,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Invalid(String),
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Invalid(_) => EXIT_INVALID,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Invalid(m) => m,
        }
    }
}

impl From<FormatError> for CliError {
    fn from(e: FormatError) -> Self {
        CliError::Invalid(e.to_string())
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Invalid(format!("i/o error: {e}"))
    }
}

fn invalid(e: impl std::fmt::Display) -> CliError {
    CliError::Invalid(e.to_string())
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, stdout: &mut (dyn Write + Send), stderr: &mut (dyn Write + Send)) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            if e.use_stderr() {
                let _ = write!(stderr, "{}", e.render());
                return EXIT_USAGE;
            }
            let _ = write!(stdout, "{}", e.render());
            return EXIT_OK;
        }
    };
    let pool = match rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build()
    {
        Ok(p) => p,
        Err(e) => {
            let _ = writeln!(stderr, "error: cannot start thread pool: {e}");
            return EXIT_USAGE;
        }
    };
    match pool.install(|| dispatch(cli.command, stdout, stderr)) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(stderr, "error: {}", e.message());
            e.exit_code()
        }
    }
}

pub fn main_from_env() -> i32 {
    let mut out = BufWriter::new(io::stdout());
    let code = run(std::env::args_os(), &mut out, &mut io::stderr());
    let _ = out.flush();
    code
}

fn dispatch(
    command: Command,
    stdout: &mut (dyn Write + Send),
    stderr: &mut (dyn Write + Send),
) -> Result<(), CliError> {
    match command {
        Command::Validate(a) => validate(&a, stdout),
        Command::Exact(a) => exact(&a, stdout),
        Command::Run(a) => run_sampler(&a, stdout),
        Command::Experiment(a) => experiment(&a, stdout, stderr),
        Command::ReverseDump(a) => reverse_dump(&a, stdout, stderr),
        Command::Track2d(a) => track2d(&a, stdout),
        Command::Simulate(a) => simulate(&a, stdout),
    }
}

fn resolve_model(spec: &str) -> Result<DpnModel, CliError> {
    if spec == BUILTIN_R1 && !Path::new(spec).exists() {
        Ok(reference_network())
    } else {
        Ok(load_model(Path::new(spec))?)
    }
}

/// Runs `body` against the `--out` file if given, else stdout.
fn with_output(
    path: Option<&Path>,
    stdout: &mut (dyn Write + Send),
    body: impl FnOnce(&mut (dyn Write + Send)) -> io::Result<()>,
) -> Result<(), CliError> {
    match path {
        Some(p) => {
            let mut w = BufWriter::new(File::create(p)?);
            body(&mut w)?;
            w.flush()?;
        }
        None => body(stdout)?,
    }
    Ok(())
}

fn validate(a: &ModelArgs, stdout: &mut (dyn Write + Send)) -> Result<(), CliError> {
    let m = resolve_model(&a.model)?;
    writeln!(
        stdout,
        "ok: {} variables ({} state, {} evidence), {} joint states",
        m.num_vars(),
        m.state_vars().len(),
        m.evidence_vars().len(),
        m.state_space_size()
    )?;
    Ok(())
}

fn exact(a: &ExactArgs, stdout: &mut (dyn Write + Send)) -> Result<(), CliError> {
    let model = resolve_model(&a.model)?;
    let evidence = load_evidence(&model, &a.evidence)?;
    let oracle = ExactOracle::new(&model).map_err(invalid)?;
    let marginals = oracle.marginals(&evidence).map_err(invalid)?;
    with_output(a.out.as_deref(), stdout, |w| {
        writeln!(w, "t,variable,value,probability")?;
        for (t, slice) in marginals.iter().enumerate() {
            for (&v, probs) in model.state_vars().iter().zip(slice) {
                for (value, p) in probs.iter().enumerate() {
                    writeln!(w, "{t},{},{value},{}", model.variable(v).name, fmt_sig9(*p))?;
                }
            }
        }
        Ok(())
    })
}

fn run_sampler(a: &RunArgs, stdout: &mut (dyn Write + Send)) -> Result<(), CliError> {
    if a.samples == 0 {
        return Err(CliError::Usage("--samples must be at least 1".into()));
    }
    let model = resolve_model(&a.model)?;
    let evidence = load_evidence(&model, &a.evidence)?;
    let monitor = Monitor::new(&model, a.algorithm).map_err(invalid)?;
    let estimates = monitor.run(&evidence, a.samples, a.seed);
    with_output(a.out.as_deref(), stdout, |w| {
        writeln!(w, "t,variable,value,estimate,extinct")?;
        for (t, est) in estimates.iter().enumerate() {
            match est {
                MarginalEstimate::Extinct => {
                    for &v in model.state_vars() {
                        for value in 0..model.cards()[v] {
                            writeln!(w, "{t},{},{value},,1", model.variable(v).name)?;
                        }
                    }
                }
                MarginalEstimate::Marginals(m) => {
                    for (&v, probs) in model.state_vars().iter().zip(m) {
                        for (value, p) in probs.iter().enumerate() {
                            writeln!(
                                w,
                                "{t},{},{value},{},0",
                                model.variable(v).name,
                                fmt_sig9(*p)
                            )?;
                        }
                    }
                }
            }
        }
        Ok(())
    })
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    model: Option<String>,
    algorithms: Option<Vec<String>>,
    sample_counts: Option<Vec<usize>>,
    horizon: Option<usize>,
    runs: Option<usize>,
    master_seed: Option<u64>,
}

fn load_config(path: &Path) -> Result<ConfigFile, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| invalid(format!("cannot read {}: {e}", path.display())))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de)
        .map_err(|e| invalid(format!("{}: {}: {}", path.display(), e.path(), e.inner())))
}

fn experiment(
    a: &ExperimentArgs,
    stdout: &mut (dyn Write + Send),
    stderr: &mut (dyn Write + Send),
) -> Result<(), CliError> {
    let file = match &a.config {
        Some(p) => load_config(p)?,
        None => ConfigFile::default(),
    };
    let master_seed = a.seed.or(file.master_seed).ok_or_else(|| {
        CliError::Usage(
            "experiment needs a seed: pass --seed or set master_seed in the config".into(),
        )
    })?;
    let model = match file.model.as_deref() {
        None | Some(BUILTIN_R1) => reference_network(),
        Some(p) => {
            // Relative model paths are resolved against the config's directory.
            let base = a
                .config
                .as_deref()
                .and_then(Path::parent)
                .unwrap_or(Path::new(""));
            resolve_model(&base.join(p).to_string_lossy())?
        }
    };
    let algorithms = match &file.algorithms {
        None => Algorithm::ALL.to_vec(),
        Some(names) => names
            .iter()
            .map(|n| n.parse::<Algorithm>())
            .collect::<Result<_, _>>()
            .map_err(invalid)?,
    };
    let sample_counts = if a.full_grid {
        FULL_SAMPLE_COUNTS.to_vec()
    } else {
        file.sample_counts
            .clone()
            .unwrap_or_else(|| DEFAULT_SAMPLE_COUNTS.to_vec())
    };
    let config = ExperimentConfig {
        algorithms,
        sample_counts,
        horizon: file.horizon.unwrap_or(DEFAULT_HORIZON),
        runs: file.runs.unwrap_or(DEFAULT_RUNS),
        master_seed,
    };
    config.validate().map_err(invalid)?;

    let series = with_writer(a.out.as_deref(), stdout, |w| {
        writeln!(w, "{SERIES_HEADER}")?;
        let series = run_experiment(&model, &config, |block| {
            writeln!(stderr, "done: {} N={}", block.algorithm, block.n_samples)?;
            write_block_rows(w, block)?;
            w.flush()
        })
        .map_err(invalid)?;
        Ok(series)
    })?;
    if let Some(p) = &a.cross_section {
        let mut w = BufWriter::new(File::create(p)?);
        write_cross_section_csv(&mut w, &series)?;
        w.flush()?;
    }
    Ok(())
}

/// Like [`with_output`] but lets the body return a value and a `CliError`.
fn with_writer<T>(
    path: Option<&Path>,
    stdout: &mut (dyn Write + Send),
    body: impl FnOnce(&mut (dyn Write + Send)) -> Result<T, CliError>,
) -> Result<T, CliError> {
    match path {
        Some(p) => {
            let mut w = BufWriter::new(File::create(p)?);
            let v = body(&mut w)?;
            w.flush()?;
            Ok(v)
        }
        None => body(stdout),
    }
}

fn reverse_dump(
    a: &ModelArgs,
    stdout: &mut (dyn Write + Send),
    stderr: &mut (dyn Write + Send),
) -> Result<(), CliError> {
    let model = resolve_model(&a.model)?;
    let reversed = ReversedModel::build(&model).map_err(invalid)?;
    for kind in [SliceKind::Prior, SliceKind::Transition] {
        for &(v, row) in &reversed.slice(kind).unreachable_rows {
            writeln!(
                stderr,
                "note: {kind} CPT of {} row {row} is unreachable (filled uniform)",
                model.variable(v).name
            )?;
        }
    }
    let file = NetworkFile::from_parts(
        model.variables(),
        &reversed.prior.cpts.cpts,
        &reversed.transition.cpts.cpts,
    );
    writeln!(stdout, "{}", file.to_json())?;
    Ok(())
}

fn track2d(a: &Track2dArgs, stdout: &mut (dyn Write + Send)) -> Result<(), CliError> {
    if a.algorithm == Algorithm::Er {
        return Err(CliError::Usage("track2d supports lw, sof and ersof".into()));
    }
    if a.samples == 0 {
        return Err(CliError::Usage("--samples must be at least 1".into()));
    }
    let model = Gauss2dModel::new(a.q, a.r).map_err(|e| CliError::Usage(e.to_string()))?;
    let truth = simulate_truth_2d(&model, a.steps, &mut stream(a.seed, &[tag::EVIDENCE]));
    let kalman = kalman_oracle(&model, &truth.observations);
    let sampler_seed = derive_seed(a.seed, &[tag::SAMPLER]);

    let mut snapshots = match &a.snapshots {
        Some(p) => {
            let mut w = BufWriter::new(File::create(p)?);
            writeln!(w, "{SNAPSHOT_HEADER}")?;
            Some(w)
        }
        None => None,
    };
    let mut snapshot_error = None;
    let track = particle_track_2d_with(
        a.algorithm,
        &model,
        &truth.observations,
        a.samples,
        sampler_seed,
        |snap| {
            if let (Some(w), None) = (snapshots.as_mut(), &snapshot_error) {
                if let Err(e) = write_snapshot_rows(w, &snap) {
                    snapshot_error = Some(e);
                }
            }
        },
    )
    .map_err(|e| CliError::Usage(e.to_string()))?;
    if let Some(e) = snapshot_error {
        return Err(e.into());
    }
    if let Some(mut w) = snapshots {
        w.flush()?;
    }
    with_output(a.out.as_deref(), stdout, |w| {
        write_track_csv(w, &truth, &track, &kalman)
    })
}

fn simulate(a: &SimulateArgs, stdout: &mut (dyn Write + Send)) -> Result<(), CliError> {
    let model = resolve_model(&a.model)?;
    let (states, evidence) =
        generate_truth_and_evidence(&model, a.horizon, &mut stream(a.seed, &[tag::EVIDENCE]));
    with_output(a.out.as_deref(), stdout, |w| {
        writeln!(w, "{}", evidence_to_json(&model, &evidence))
    })?;
    if let Some(p) = &a.truth {
        let rows: Vec<serde_json::Map<String, serde_json::Value>> = states
            .iter()
            .map(|s| {
                model
                    .state_vars()
                    .iter()
                    .map(|&v| {
                        (
                            model.variable(v).name.clone(),
                            s.get(v).expect("state sampled").into(),
                        )
                    })
                    .collect()
            })
            .collect();
        fs::write(
            p,
            serde_json::to_string_pretty(&rows).expect("truth serializes") + "\n",
        )?;
    }
    Ok(())
}
