//! Reference network, error metric and trial protocol for error-vs-time
//! experiments.
//!
//! Trial `i` of an experiment derives its seed from `(master seed, i)`. The
//! evidence sequence and the exact marginals depend only on that seed, so
//! every algorithm and every sample count is scored on identical evidence
//! (a paired design).

use std::io::{self, Write};

use rayon::prelude::*;
use thiserror::Error;

use crate::exact::{ExactOracle, OracleError};
use crate::model::{
    generate_truth_and_evidence, Cpt, DpnModel, EvidenceSequence, ParentRef, Role, SliceAssignment,
    Variable,
};
use crate::reversal::{ReversalError, ReversedModel};
use crate::rng::{derive_seed, stream, tag, trial_seed};
use crate::sampler::{Algorithm, MarginalEstimate, Monitor};

pub const FULL_SAMPLE_COUNTS: [usize; 4] = [25, 100, 1000, 10_000];
pub const DEFAULT_SAMPLE_COUNTS: [usize; 3] = [25, 100, 1000];
pub const DEFAULT_HORIZON: usize = 50;
pub const DEFAULT_RUNS: usize = 50;

/// Reference network R1: one 4-valued state variable `X` observed by one
/// 4-valued sensor `E`.
///
/// Sensor row i puts 0.6 on observation i, 0 on observation (i + 1) mod 4
/// and 0.2 on each of the other two. The transition keeps the state with
/// probability 0.7 and moves to each other state with probability 0.1. The
/// prior is uniform.
pub fn reference_network() -> DpnModel {
    const K: usize = 4;
    let sensor: Vec<Vec<f64>> = (0..K)
        .map(|i| {
            (0..K)
                .map(|o| {
                    if o == i {
                        0.6
                    } else if o == (i + 1) % K {
                        0.0
                    } else {
                        0.2
                    }
                })
                .collect()
        })
        .collect();
    let transition: Vec<Vec<f64>> = (0..K)
        .map(|i| (0..K).map(|j| if i == j { 0.7 } else { 0.1 }).collect())
        .collect();
    let variables = vec![
        Variable::new(0, "X", Role::State, K),
        Variable::new(1, "E", Role::Evidence, K),
    ];
    let prior = vec![
        Cpt::root(0, vec![1.0 / K as f64; K]),
        Cpt::new(1, vec![ParentRef::current(0)], sensor.clone()),
    ];
    let trans = vec![
        Cpt::new(0, vec![ParentRef::previous(0)], transition),
        Cpt::new(1, vec![ParentRef::current(0)], sensor),
    ];
    DpnModel::new(variables, prior, trans).expect("reference network is valid")
}

/// Mean of |estimate - exact| over every (state variable, value) pair, or
/// exactly 1.0 for an extinct estimate.
pub fn average_abs_error(estimate: &MarginalEstimate, exact: &[Vec<f64>]) -> f64 {
    let Some(est) = estimate.marginals() else {
        return 1.0;
    };
    assert_eq!(
        est.len(),
        exact.len(),
        "estimate and exact marginals cover different variables"
    );
    let mut sum = 0.0;
    let mut count = 0usize;
    for (e, x) in est.iter().zip(exact) {
        assert_eq!(e.len(), x.len(), "cardinality mismatch");
        for (a, b) in e.iter().zip(x) {
            sum += (a - b).abs();
            count += 1;
        }
    }
    sum / count as f64
}

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid experiment configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Reversal(#[from] ReversalError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Evidence and ground truth shared by every algorithm for one trial.
#[derive(Debug, Clone)]
pub struct TrialData {
    pub seed: u64,
    pub truth: Vec<SliceAssignment>,
    pub evidence: EvidenceSequence,
    /// Exact marginals per slice, per state variable.
    pub exact: Vec<Vec<Vec<f64>>>,
}

impl TrialData {
    pub fn generate(
        model: &DpnModel,
        oracle: &ExactOracle<'_>,
        horizon: usize,
        seed: u64,
    ) -> Result<Self, OracleError> {
        let (truth, evidence) = trial_evidence(model, horizon, seed);
        let exact = oracle.marginals(&evidence)?;
        Ok(TrialData {
            seed,
            truth,
            evidence,
            exact,
        })
    }

    /// Seed of the sampler stream for this trial.
    pub fn sampler_seed(&self) -> u64 {
        derive_seed(self.seed, &[tag::SAMPLER])
    }
}

/// Ground truth and evidence for slices 0..=horizon from the trial's
/// evidence stream. Longer horizons extend shorter ones.
pub fn trial_evidence(
    model: &DpnModel,
    horizon: usize,
    seed: u64,
) -> (Vec<SliceAssignment>, EvidenceSequence) {
    generate_truth_and_evidence(model, horizon, &mut stream(seed, &[tag::EVIDENCE]))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialResult {
    pub errors: Vec<f64>,
    pub extinct: Vec<bool>,
}

impl TrialResult {
    /// First slice whose estimate was extinct.
    pub fn first_extinction(&self) -> Option<usize> {
        self.extinct.iter().position(|&e| e)
    }
}

pub fn score_trial(monitor: &Monitor<'_>, data: &TrialData, n: usize) -> TrialResult {
    let estimates = monitor.run(&data.evidence, n, data.sampler_seed());
    let errors = estimates
        .iter()
        .zip(&data.exact)
        .map(|(e, x)| average_abs_error(e, x))
        .collect();
    let extinct = estimates.iter().map(MarginalEstimate::is_extinct).collect();
    TrialResult { errors, extinct }
}

/// One trial: generate evidence from `trial_seed`, filter it exactly and
/// with the sampler, and report the error at every slice 0..=horizon.
pub fn run_trial(
    algorithm: Algorithm,
    model: &DpnModel,
    n: usize,
    horizon: usize,
    trial_seed: u64,
) -> Result<TrialResult, ExperimentError> {
    let oracle = ExactOracle::new(model)?;
    let data = TrialData::generate(model, &oracle, horizon, trial_seed)?;
    let monitor = Monitor::new(model, algorithm)?;
    Ok(score_trial(&monitor, &data, n))
}

/// First slice at which every LW particle has weight zero, following the
/// trial's evidence for up to `max_horizon` slices.
pub fn lw_extinction_time(
    model: &DpnModel,
    n: usize,
    max_horizon: usize,
    trial_seed: u64,
) -> Option<usize> {
    let (_, evidence) = trial_evidence(model, max_horizon, trial_seed);
    let monitor = Monitor::with_reversed(model, Algorithm::Lw, None);
    let mut set = monitor.init(n);
    let seed = derive_seed(trial_seed, &[tag::SAMPLER]);
    evidence
        .records()
        .iter()
        .position(|e| monitor.step(&mut set, e, seed).is_extinct())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub algorithms: Vec<Algorithm>,
    pub sample_counts: Vec<usize>,
    pub horizon: usize,
    pub runs: usize,
    pub master_seed: u64,
}

impl ExperimentConfig {
    /// The desk-scale grid: all four algorithms, N in {25, 100, 1000},
    /// T = 50, 50 runs.
    pub fn desk_scale(master_seed: u64) -> Self {
        ExperimentConfig {
            algorithms: Algorithm::ALL.to_vec(),
            sample_counts: DEFAULT_SAMPLE_COUNTS.to_vec(),
            horizon: DEFAULT_HORIZON,
            runs: DEFAULT_RUNS,
            master_seed,
        }
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.runs < 1 {
            return Err(ExperimentError::Config("runs must be at least 1".into()));
        }
        if self.horizon < 1 {
            return Err(ExperimentError::Config("horizon must be at least 1".into()));
        }
        if self.sample_counts.is_empty() || self.sample_counts.contains(&0) {
            return Err(ExperimentError::Config(
                "sample counts must be non-empty and at least 1".into(),
            ));
        }
        if self.algorithms.is_empty() {
            return Err(ExperimentError::Config("no algorithms selected".into()));
        }
        Ok(())
    }
}

/// Aggregates for one (algorithm, N) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesBlock {
    pub algorithm: Algorithm,
    pub n_samples: usize,
    pub trials: Vec<TrialResult>,
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
    pub extinct_fraction: Vec<f64>,
}

impl SeriesBlock {
    pub fn from_trials(algorithm: Algorithm, n_samples: usize, trials: Vec<TrialResult>) -> Self {
        let runs = trials.len();
        let len = trials.first().map_or(0, |r| r.errors.len());
        let mut mean = vec![0.0; len];
        let mut stderr = vec![0.0; len];
        let mut extinct_fraction = vec![0.0; len];
        for t in 0..len {
            let m = trials.iter().map(|r| r.errors[t]).sum::<f64>() / runs as f64;
            mean[t] = m;
            if runs > 1 {
                let var = trials
                    .iter()
                    .map(|r| (r.errors[t] - m).powi(2))
                    .sum::<f64>()
                    / (runs - 1) as f64;
                stderr[t] = (var / runs as f64).sqrt();
            }
            extinct_fraction[t] =
                trials.iter().filter(|r| r.extinct[t]).count() as f64 / runs as f64;
        }
        SeriesBlock {
            algorithm,
            n_samples,
            trials,
            mean,
            stderr,
            extinct_fraction,
        }
    }

    pub fn horizon(&self) -> usize {
        self.mean.len().saturating_sub(1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorSeries {
    pub horizon: usize,
    pub blocks: Vec<SeriesBlock>,
}

impl ErrorSeries {
    pub fn block(&self, algorithm: Algorithm, n_samples: usize) -> Option<&SeriesBlock> {
        self.blocks
            .iter()
            .find(|b| b.algorithm == algorithm && b.n_samples == n_samples)
    }

    /// Error at t = T per (algorithm, N): (algorithm, N, mean, stderr).
    pub fn final_cross_section(&self) -> Vec<(Algorithm, usize, f64, f64)> {
        self.blocks
            .iter()
            .map(|b| {
                (
                    b.algorithm,
                    b.n_samples,
                    b.mean[self.horizon],
                    b.stderr[self.horizon],
                )
            })
            .collect()
    }
}

/// Runs every (algorithm, N) pair over `config.runs` paired trials.
/// `on_block` sees each block as soon as it completes.
pub fn run_experiment(
    model: &DpnModel,
    config: &ExperimentConfig,
    mut on_block: impl FnMut(&SeriesBlock) -> io::Result<()>,
) -> Result<ErrorSeries, ExperimentError> {
    config.validate()?;
    let oracle = ExactOracle::new(model)?;
    let trials: Vec<TrialData> = (0..config.runs)
        .into_par_iter()
        .map(|i| {
            TrialData::generate(
                model,
                &oracle,
                config.horizon,
                trial_seed(config.master_seed, i),
            )
        })
        .collect::<Result<_, _>>()?;
    let reversed = if config.algorithms.iter().any(|a| a.uses_reversal()) {
        Some(ReversedModel::build(model)?)
    } else {
        None
    };
    let mut blocks = Vec::new();
    for &algorithm in &config.algorithms {
        let monitor = Monitor::with_reversed(
            model,
            algorithm,
            reversed.clone().filter(|_| algorithm.uses_reversal()),
        );
        for &n in &config.sample_counts {
            let results: Vec<TrialResult> = trials
                .par_iter()
                .map(|d| score_trial(&monitor, d, n))
                .collect();
            let block = SeriesBlock::from_trials(algorithm, n, results);
            on_block(&block)?;
            blocks.push(block);
        }
    }
    Ok(ErrorSeries {
        horizon: config.horizon,
        blocks,
    })
}

/// Formats a float with 9 significant digits, in the style of C's `%.9g`.
pub fn fmt_sig9(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let sci = format!("{x:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    let trim = |s: &str| -> String {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s.to_string()
        }
    };
    if (-5..9).contains(&exp) {
        let decimals = (8 - exp).max(0) as usize;
        trim(&format!("{x:.decimals$}"))
    } else {
        format!("{}e{exp}", trim(mantissa))
    }
}

pub const SERIES_HEADER: &str = "algorithm,n_samples,t,mean_abs_error,stderr,extinct_fraction";
pub const CROSS_SECTION_HEADER: &str = "algorithm,n_samples,mean_abs_error_at_T,stderr";

pub fn write_block_rows<W: Write + ?Sized>(w: &mut W, block: &SeriesBlock) -> io::Result<()> {
    for t in 0..block.mean.len() {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            block.algorithm,
            block.n_samples,
            t,
            fmt_sig9(block.mean[t]),
            fmt_sig9(block.stderr[t]),
            fmt_sig9(block.extinct_fraction[t])
        )?;
    }
    Ok(())
}

pub fn write_series_csv<W: Write + ?Sized>(w: &mut W, series: &ErrorSeries) -> io::Result<()> {
    writeln!(w, "{SERIES_HEADER}")?;
    for b in &series.blocks {
        write_block_rows(w, b)?;
    }
    Ok(())
}

pub fn write_cross_section_csv<W: Write + ?Sized>(
    w: &mut W,
    series: &ErrorSeries,
) -> io::Result<()> {
    writeln!(w, "{CROSS_SECTION_HEADER}")?;
    for (alg, n, mean, se) in series.final_cross_section() {
        writeln!(w, "{alg},{n},{},{}", fmt_sig9(mean), fmt_sig9(se))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{validate_model, SliceKind};

    #[test]
    fn reference_network_shape() {
        let m = reference_network();
        assert!(validate_model(&m).is_empty());
        for kind in [SliceKind::Prior, SliceKind::Transition] {
            let sensor = m.cpt(kind, 1);
            for (i, row) in sensor.table.iter().enumerate() {
                assert_eq!(row.iter().filter(|&&x| x == 0.0).count(), 1);
                assert_eq!(row[(i + 1) % 4], 0.0);
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
        for row in &m.cpt(SliceKind::Transition, 0).table {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn error_metric_examples() {
        let exact = vec![vec![0.3, 0.7]];
        assert_eq!(
            average_abs_error(&MarginalEstimate::Marginals(exact.clone()), &exact),
            0.0
        );
        assert_eq!(average_abs_error(&MarginalEstimate::Extinct, &exact), 1.0);
        assert_eq!(
            average_abs_error(
                &MarginalEstimate::Marginals(vec![vec![1.0, 0.0]]),
                &[vec![0.0, 1.0]]
            ),
            1.0
        );
    }

    #[test]
    #[should_panic]
    fn error_metric_rejects_shape_mismatch() {
        average_abs_error(
            &MarginalEstimate::Marginals(vec![vec![1.0, 0.0]]),
            &[vec![0.0, 0.5, 0.5]],
        );
    }

    #[test]
    fn sig9_formatting() {
        assert_eq!(fmt_sig9(0.0), "0");
        assert_eq!(fmt_sig9(1.0), "1");
        assert_eq!(fmt_sig9(0.1), "0.1");
        assert_eq!(fmt_sig9(1.0 / 3.0), "0.333333333");
        assert_eq!(fmt_sig9(2.0 / 3.0), "0.666666667");
        assert_eq!(fmt_sig9(123456.789), "123456.789");
        assert_eq!(fmt_sig9(1.23456789012e-7), "1.23456789e-7");
        assert_eq!(fmt_sig9(-0.00012345678912), "-0.000123456789");
        assert_eq!(fmt_sig9(1e10), "1e10");
    }

    #[test]
    fn single_run_has_zero_stderr() {
        let m = reference_network();
        let cfg = ExperimentConfig {
            algorithms: vec![Algorithm::Sof],
            sample_counts: vec![50],
            horizon: 5,
            runs: 1,
            master_seed: 3,
        };
        let series = run_experiment(&m, &cfg, |_| Ok(())).unwrap();
        let b = &series.blocks[0];
        let single = run_trial(Algorithm::Sof, &m, 50, 5, trial_seed(3, 0)).unwrap();
        assert_eq!(b.mean, single.errors);
        assert!(b.stderr.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn config_validation() {
        let mut cfg = ExperimentConfig::desk_scale(1);
        cfg.runs = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::desk_scale(1);
        cfg.horizon = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::desk_scale(1);
        cfg.sample_counts = vec![0];
        assert!(cfg.validate().is_err());
    }
}
