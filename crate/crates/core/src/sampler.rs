//! Monitoring by stochastic simulation: likelihood weighting (LW), evidence
//! reversal (ER), survival of the fittest (SOF) and the ER/SOF hybrid.
//!
//! Each algorithm is a step function that absorbs the evidence of the next
//! slice into a [`SampleSet`] and returns the marginal estimate for that
//! slice. Weights are kept as natural logarithms; a particle is extinct only
//! when its weight is exactly zero (log weight `-inf`).
//!
//! Particle `i` at slice `t` draws from its own stream derived from
//! `(run seed, t, i)`, and resampling at slice `t` draws from a stream
//! derived from `(run seed, t)`, so results do not depend on how rayon
//! schedules the particles.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::model::{
    likelihood, sample_states_clamped, DpnModel, EvidenceSequence, SliceAssignment, SliceKind,
};
use crate::reversal::{ReversalError, ReversedModel};
use crate::rng::{particle_stream, resample_stream, StreamRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Algorithm {
    Lw,
    Er,
    Sof,
    ErSof,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [
        Algorithm::Lw,
        Algorithm::Er,
        Algorithm::Sof,
        Algorithm::ErSof,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Lw => "LW",
            Algorithm::Er => "ER",
            Algorithm::Sof => "SOF",
            Algorithm::ErSof => "ERSOF",
        }
    }

    pub fn uses_reversal(self) -> bool {
        matches!(self, Algorithm::Er | Algorithm::ErSof)
    }

    pub fn resamples(self) -> bool {
        matches!(self, Algorithm::Sof | Algorithm::ErSof)
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("unknown algorithm {0:?}; expected one of lw, er, sof, ersof")]
pub struct ParseAlgorithmError(pub String);

impl FromStr for Algorithm {
    type Err = ParseAlgorithmError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace(['/', '-', '_'], "").as_str() {
            "lw" => Ok(Algorithm::Lw),
            "er" => Ok(Algorithm::Er),
            "sof" => Ok(Algorithm::Sof),
            "ersof" => Ok(Algorithm::ErSof),
            _ => Err(ParseAlgorithmError(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Particle {
    /// State variables of the most recently absorbed slice.
    pub state: SliceAssignment,
    pub log_weight: f64,
}

impl Particle {
    pub fn weight(&self) -> f64 {
        self.log_weight.exp()
    }

    pub fn is_extinct(&self) -> bool {
        self.log_weight == f64::NEG_INFINITY
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub particles: Vec<Particle>,
    /// Last absorbed slice; `None` before slice 0.
    pub t: Option<usize>,
    pub algorithm: Algorithm,
    /// Slices at which every weight was zero at resampling time.
    pub extinctions: Vec<usize>,
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn next_t(&self) -> usize {
        self.t.map_or(0, |t| t + 1)
    }

    pub fn log_weights(&self) -> Vec<f64> {
        self.particles.iter().map(|p| p.log_weight).collect()
    }

    /// Weights rescaled so the largest is 1; all zeros when extinct.
    pub fn relative_weights(&self) -> Vec<f64> {
        relative_weights(&self.log_weights())
    }

    pub fn is_extinct(&self) -> bool {
        self.particles.iter().all(Particle::is_extinct)
    }

    /// (Σw)²/Σw² of the current weights; 0 when extinct.
    pub fn effective_sample_size(&self) -> f64 {
        effective_sample_size(&self.relative_weights())
    }
}

fn relative_weights(log_weights: &[f64]) -> Vec<f64> {
    let max = log_weights
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return vec![0.0; log_weights.len()];
    }
    log_weights.iter().map(|&lw| (lw - max).exp()).collect()
}

pub fn effective_sample_size(weights: &[f64]) -> f64 {
    let sum: f64 = weights.iter().sum();
    let sum_sq: f64 = weights.iter().map(|w| w * w).sum();
    if sum_sq == 0.0 {
        0.0
    } else {
        sum * sum / sum_sq
    }
}

/// Per-state-variable marginals aligned with `DpnModel::state_vars`, or the
/// extinct flag when the total weight is zero.
#[derive(Debug, Clone, PartialEq)]
pub enum MarginalEstimate {
    Extinct,
    Marginals(Vec<Vec<f64>>),
}

impl MarginalEstimate {
    pub fn is_extinct(&self) -> bool {
        matches!(self, MarginalEstimate::Extinct)
    }

    pub fn marginals(&self) -> Option<&[Vec<f64>]> {
        match self {
            MarginalEstimate::Extinct => None,
            MarginalEstimate::Marginals(m) => Some(m),
        }
    }
}

pub fn init_samples(algorithm: Algorithm, model: &DpnModel, n: usize) -> SampleSet {
    assert!(n >= 1, "sample count must be at least 1");
    let particle = Particle {
        state: SliceAssignment::empty(model.num_vars()),
        log_weight: 0.0,
    };
    SampleSet {
        particles: vec![particle; n],
        t: None,
        algorithm,
        extinctions: Vec::new(),
    }
}

/// Weighted score of each state value, normalized by the total weight.
pub fn estimate_marginals(model: &DpnModel, set: &SampleSet) -> MarginalEstimate {
    let weights = set.relative_weights();
    marginals_from_weights(model, &set.particles, &weights)
}

fn marginals_from_weights(
    model: &DpnModel,
    particles: &[Particle],
    weights: &[f64],
) -> MarginalEstimate {
    let total: f64 = weights.iter().sum();
    if total.is_nan() || total <= 0.0 {
        return MarginalEstimate::Extinct;
    }
    let cards = model.cards();
    let state_vars = model.state_vars();
    let mut out: Vec<Vec<f64>> = state_vars.iter().map(|&v| vec![0.0; cards[v]]).collect();
    for (p, &w) in particles.iter().zip(weights) {
        if w == 0.0 {
            continue;
        }
        for (k, &v) in state_vars.iter().enumerate() {
            out[k][p.state.get(v).expect("particle state assigned")] += w;
        }
    }
    for m in &mut out {
        for x in m.iter_mut() {
            *x /= total;
        }
    }
    MarginalEstimate::Marginals(out)
}

#[derive(Debug, Error, PartialEq)]
pub enum ResampleError {
    #[error("all resampling weights are zero")]
    AllZero,
    #[error("resampling weight {0} is negative or not finite")]
    InvalidWeight(f64),
}

/// Multinomial resampling: `n` independent draws from the categorical
/// distribution proportional to `weights`.
pub fn resample<R: Rng + ?Sized>(
    weights: &[f64],
    n: usize,
    rng: &mut R,
) -> Result<Vec<usize>, ResampleError> {
    let mut cumulative = Vec::with_capacity(weights.len());
    let mut acc = 0.0;
    let mut last_positive = None;
    for (i, &w) in weights.iter().enumerate() {
        if !w.is_finite() || w < 0.0 {
            return Err(ResampleError::InvalidWeight(w));
        }
        if w > 0.0 {
            last_positive = Some(i);
        }
        acc += w;
        cumulative.push(acc);
    }
    let last_positive = last_positive.ok_or(ResampleError::AllZero)?;
    Ok((0..n)
        .map(|_| {
            let u = rng.random::<f64>() * acc;
            let idx = cumulative.partition_point(|&c| c <= u);
            idx.min(last_positive)
        })
        .collect())
}

fn previous(t: usize, p: &Particle) -> Option<&SliceAssignment> {
    (t > 0).then_some(&p.state)
}

fn strip_evidence(model: &DpnModel, mut s: SliceAssignment) -> SliceAssignment {
    for &e in model.evidence_vars() {
        s.unset(e);
    }
    s
}

fn propagate<F>(particles: &[Particle], seed: u64, t: usize, f: F) -> Vec<Particle>
where
    F: Fn(&Particle, &mut StreamRng) -> Particle + Sync,
{
    particles
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let mut rng = particle_stream(seed, t, i);
            f(p, &mut rng)
        })
        .collect()
}

/// Forward-samples each particle's next slice and weights it by the
/// evidence likelihood. Particles with weight zero keep weight zero.
fn forward_and_weight(
    model: &DpnModel,
    set: &SampleSet,
    evidence: &SliceAssignment,
    seed: u64,
    accumulate: bool,
) -> Vec<Particle> {
    let t = set.next_t();
    let kind = SliceKind::for_time(t);
    propagate(&set.particles, seed, t, |p, rng| {
        let prev = previous(t, p);
        let sample = sample_states_clamped(model, prev, evidence, rng);
        let lik = likelihood(model, kind, prev, evidence, &sample)
            .expect("evidence and parents assigned");
        let base = if accumulate { p.log_weight } else { 0.0 };
        Particle {
            state: strip_evidence(model, sample),
            log_weight: base + lik.ln(),
        }
    })
}

/// Likelihood weighting: extend each particle by the original model and
/// multiply its weight by Likelihood(E_t | particle).
pub fn lw_step(
    model: &DpnModel,
    set: &mut SampleSet,
    evidence: &SliceAssignment,
    seed: u64,
) -> MarginalEstimate {
    let t = set.next_t();
    set.particles = forward_and_weight(model, set, evidence, seed, true);
    set.t = Some(t);
    estimate_marginals(model, set)
}

/// Evidence reversal: multiply each weight by P(E_t | slice t-1 state) from
/// the reversed evidence CPTs, then draw slice t from the reversed state
/// CPTs with the evidence clamped.
pub fn er_step(
    model: &DpnModel,
    reversed: &ReversedModel,
    set: &mut SampleSet,
    evidence: &SliceAssignment,
    seed: u64,
) -> MarginalEstimate {
    let t = set.next_t();
    let slice = reversed.slice(SliceKind::for_time(t));
    set.particles = propagate(&set.particles, seed, t, |p, rng| {
        let prev = previous(t, p);
        let w = slice.evidence_probability(prev, evidence);
        let sample = slice.sample_states(prev, evidence, rng);
        Particle {
            state: strip_evidence(model, sample),
            log_weight: p.log_weight + w.ln(),
        }
    });
    set.t = Some(t);
    estimate_marginals(model, set)
}

fn repopulate(set: &mut SampleSet, weights: &[f64], t: usize, seed: u64) -> bool {
    let n = set.len();
    let mut rng = resample_stream(seed, t);
    let (indices, extinct) = match resample(weights, n, &mut rng) {
        Ok(idx) => (idx, false),
        Err(_) => (
            resample(&vec![1.0; n], n, &mut rng).expect("uniform weights"),
            true,
        ),
    };
    set.particles = indices
        .into_iter()
        .map(|i| Particle {
            state: set.particles[i].state.clone(),
            log_weight: 0.0,
        })
        .collect();
    if extinct {
        set.extinctions.push(t);
    }
    extinct
}

/// Survival of the fittest: extend each particle, set its weight to the
/// likelihood of this slice's evidence alone, score the marginals, then
/// resample N particles and reset the weights to one.
///
/// If every weight is zero the population is resampled uniformly, an
/// extinction is recorded, and the returned estimate is extinct.
pub fn sof_step(
    model: &DpnModel,
    set: &mut SampleSet,
    evidence: &SliceAssignment,
    seed: u64,
) -> MarginalEstimate {
    debug_assert!(
        set.particles.iter().all(|p| p.log_weight == 0.0),
        "SOF expects uniform incoming weights"
    );
    let t = set.next_t();
    set.particles = forward_and_weight(model, set, evidence, seed, false);
    set.t = Some(t);
    let estimate = estimate_marginals(model, set);
    let weights = set.relative_weights();
    repopulate(set, &weights, t, seed);
    estimate
}

/// ER/SOF: weight the slice t-1 particles by P(E_t | state), resample by
/// those weights, and propagate the survivors through the reversed state
/// CPTs. The marginals are scored on the propagated, uniformly weighted
/// population.
pub fn er_sof_step(
    model: &DpnModel,
    reversed: &ReversedModel,
    set: &mut SampleSet,
    evidence: &SliceAssignment,
    seed: u64,
) -> MarginalEstimate {
    debug_assert!(
        set.particles.iter().all(|p| p.log_weight == 0.0),
        "ER/SOF expects uniform incoming weights"
    );
    let t = set.next_t();
    let slice = reversed.slice(SliceKind::for_time(t));
    let weights: Vec<f64> = set
        .particles
        .iter()
        .map(|p| slice.evidence_probability(previous(t, p), evidence))
        .collect();
    let extinct = repopulate(set, &weights, t, seed);
    set.particles = propagate(&set.particles, seed, t, |p, rng| {
        let sample = slice.sample_states(previous(t, p), evidence, rng);
        Particle {
            state: strip_evidence(model, sample),
            log_weight: 0.0,
        }
    });
    set.t = Some(t);
    if extinct {
        MarginalEstimate::Extinct
    } else {
        estimate_marginals(model, set)
    }
}

/// A model bound to one algorithm, with the reversed slices built once.
#[derive(Debug, Clone)]
pub struct Monitor<'m> {
    model: &'m DpnModel,
    algorithm: Algorithm,
    reversed: Option<ReversedModel>,
}

impl<'m> Monitor<'m> {
    pub fn new(model: &'m DpnModel, algorithm: Algorithm) -> Result<Self, ReversalError> {
        let reversed = if algorithm.uses_reversal() {
            Some(ReversedModel::build(model)?)
        } else {
            None
        };
        Ok(Monitor {
            model,
            algorithm,
            reversed,
        })
    }

    pub fn with_reversed(
        model: &'m DpnModel,
        algorithm: Algorithm,
        reversed: Option<ReversedModel>,
    ) -> Self {
        Monitor {
            model,
            algorithm,
            reversed,
        }
    }

    pub fn algorithm(&self) -> Algorithm {
        self.algorithm
    }

    pub fn init(&self, n: usize) -> SampleSet {
        init_samples(self.algorithm, self.model, n)
    }

    pub fn step(
        &self,
        set: &mut SampleSet,
        evidence: &SliceAssignment,
        seed: u64,
    ) -> MarginalEstimate {
        let rev = || {
            self.reversed
                .as_ref()
                .expect("reversed model built for ER variants")
        };
        match self.algorithm {
            Algorithm::Lw => lw_step(self.model, set, evidence, seed),
            Algorithm::Er => er_step(self.model, rev(), set, evidence, seed),
            Algorithm::Sof => sof_step(self.model, set, evidence, seed),
            Algorithm::ErSof => er_sof_step(self.model, rev(), set, evidence, seed),
        }
    }

    /// Runs slices 0..=T and returns one estimate per slice.
    pub fn run(&self, evidence: &EvidenceSequence, n: usize, seed: u64) -> Vec<MarginalEstimate> {
        let mut set = self.init(n);
        evidence
            .records()
            .iter()
            .map(|e| self.step(&mut set, e, seed))
            .collect()
    }
}

pub fn run_monitor(
    algorithm: Algorithm,
    model: &DpnModel,
    evidence: &EvidenceSequence,
    n: usize,
    seed: u64,
) -> Result<Vec<MarginalEstimate>, ReversalError> {
    Ok(Monitor::new(model, algorithm)?.run(evidence, n, seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Cpt, ParentRef, Role, Variable};
    use crate::rng::stream;

    fn model_with_sensor(sensor: Vec<Vec<f64>>, prior: Vec<f64>) -> DpnModel {
        let vars = vec![
            Variable::new(0, "X", Role::State, 2),
            Variable::new(1, "E", Role::Evidence, 2),
        ];
        let p = vec![
            Cpt::root(0, prior),
            Cpt::new(1, vec![ParentRef::current(0)], sensor.clone()),
        ];
        let t = vec![
            Cpt::new(
                0,
                vec![ParentRef::previous(0)],
                vec![vec![0.8, 0.2], vec![0.3, 0.7]],
            ),
            Cpt::new(1, vec![ParentRef::current(0)], sensor),
        ];
        DpnModel::new(vars, p, t).unwrap()
    }

    fn ev(e: usize) -> SliceAssignment {
        SliceAssignment::from_options(vec![None, Some(e)])
    }

    #[test]
    fn init_sets_unit_weights() {
        let m = model_with_sensor(vec![vec![0.5, 0.5]; 2], vec![0.5, 0.5]);
        let s = init_samples(Algorithm::Lw, &m, 1);
        assert_eq!(s.len(), 1);
        assert_eq!(s.particles[0].weight(), 1.0);
        let s = init_samples(Algorithm::Sof, &m, 100);
        let total: f64 = s.particles.iter().map(Particle::weight).sum();
        assert_eq!(total, 100.0);
    }

    #[test]
    fn deterministic_prior_gives_one_state() {
        let m = model_with_sensor(vec![vec![0.5, 0.5]; 2], vec![0.0, 1.0]);
        let mut s = init_samples(Algorithm::Lw, &m, 50);
        lw_step(&m, &mut s, &ev(0), 3);
        assert!(s.particles.iter().all(|p| p.state.get(0) == Some(1)));
    }

    #[test]
    fn uninformative_evidence_leaves_weights_at_one() {
        let m = model_with_sensor(vec![vec![1.0, 0.0]; 2], vec![0.5, 0.5]);
        let mut s = init_samples(Algorithm::Lw, &m, 200);
        let est = lw_step(&m, &mut s, &ev(0), 9);
        assert!(s.particles.iter().all(|p| p.log_weight == 0.0));
        let ones = s
            .particles
            .iter()
            .filter(|p| p.state.get(0) == Some(1))
            .count();
        let m0 = est.marginals().unwrap();
        assert!((m0[0][1] - ones as f64 / 200.0).abs() < 1e-12);
    }

    #[test]
    fn impossible_observation_kills_particle_forever() {
        // X = 1 can never emit E = 0.
        let m = model_with_sensor(vec![vec![0.5, 0.5], vec![0.0, 1.0]], vec![0.5, 0.5]);
        let mut s = init_samples(Algorithm::Lw, &m, 64);
        lw_step(&m, &mut s, &ev(0), 1);
        let dead: Vec<usize> = (0..64).filter(|&i| s.particles[i].is_extinct()).collect();
        assert!(!dead.is_empty());
        for e in [1, 1, 0, 1] {
            lw_step(&m, &mut s, &ev(e), 1);
            for &i in &dead {
                assert!(s.particles[i].is_extinct());
            }
        }
    }

    #[test]
    fn estimate_examples() {
        let m = model_with_sensor(vec![vec![0.5, 0.5]; 2], vec![0.5, 0.5]);
        let mut s = init_samples(Algorithm::Lw, &m, 2);
        s.particles[0].state = SliceAssignment::from_options(vec![Some(0), None]);
        s.particles[1].state = SliceAssignment::from_options(vec![Some(1), None]);
        s.particles[0].log_weight = 1f64.ln();
        s.particles[1].log_weight = 3f64.ln();
        let est = estimate_marginals(&m, &s);
        let v = &est.marginals().unwrap()[0];
        assert!((v[0] - 0.25).abs() < 1e-15 && (v[1] - 0.75).abs() < 1e-15);

        for p in &mut s.particles {
            p.log_weight = f64::NEG_INFINITY;
        }
        assert_eq!(estimate_marginals(&m, &s), MarginalEstimate::Extinct);

        for p in &mut s.particles {
            p.log_weight = 0.0;
        }
        assert_eq!(
            estimate_marginals(&m, &s),
            MarginalEstimate::Marginals(vec![vec![0.5, 0.5]])
        );
    }

    #[test]
    fn resample_examples() {
        let mut rng = stream(5, &[]);
        assert_eq!(
            resample(&[1.0, 0.0, 0.0, 0.0], 10, &mut rng).unwrap(),
            vec![0; 10]
        );
        assert_eq!(
            resample(&[0.0, 0.0], 3, &mut rng),
            Err(ResampleError::AllZero)
        );
        assert!(matches!(
            resample(&[1.0, -1.0], 3, &mut rng),
            Err(ResampleError::InvalidWeight(_))
        ));
        assert!(matches!(
            resample(&[1.0, f64::NAN], 3, &mut rng),
            Err(ResampleError::InvalidWeight(_))
        ));

        let draws = 1_000_000;
        let zeros = (0..draws)
            .filter(|_| resample(&[3.0, 1.0], 1, &mut rng).unwrap()[0] == 0)
            .count();
        assert!((zeros as f64 / draws as f64 - 0.75).abs() < 0.01);

        let k = 5;
        let mut counts = vec![0usize; k];
        for _ in 0..draws {
            counts[resample(&vec![1.0; k], 1, &mut rng).unwrap()[0]] += 1;
        }
        for c in counts {
            assert!((c as f64 / draws as f64 - 1.0 / k as f64).abs() < 0.01);
        }
    }

    #[test]
    fn sof_with_single_live_particle_clones_it() {
        let m = model_with_sensor(vec![vec![0.5, 0.5], vec![0.0, 1.0]], vec![0.5, 0.5]);
        let mut s = init_samples(Algorithm::Sof, &m, 8);
        for (i, p) in s.particles.iter_mut().enumerate() {
            p.state = SliceAssignment::from_options(vec![Some(usize::from(i != 3)), None]);
        }
        let weights: Vec<f64> = (0..8).map(|i| if i == 3 { 1.0 } else { 0.0 }).collect();
        repopulate(&mut s, &weights, 0, 1);
        assert!(s
            .particles
            .iter()
            .all(|p| p.state.get(0) == Some(0) && p.log_weight == 0.0));
    }

    #[test]
    fn sof_extinction_repopulates_and_flags() {
        // E = 0 is impossible from every state.
        let m = model_with_sensor(vec![vec![0.0, 1.0], vec![0.0, 1.0]], vec![0.5, 0.5]);
        let mut s = init_samples(Algorithm::Sof, &m, 10);
        let est = sof_step(&m, &mut s, &ev(0), 2);
        assert!(est.is_extinct());
        assert_eq!(s.extinctions, vec![0]);
        assert_eq!(s.len(), 10);
        assert!(s.particles.iter().all(|p| p.log_weight == 0.0));
        let est = sof_step(&m, &mut s, &ev(1), 2);
        assert!(!est.is_extinct());
    }

    #[test]
    fn deterministic_sensor_pins_er_particles() {
        let m = model_with_sensor(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![0.5, 0.5]);
        for alg in [Algorithm::Er, Algorithm::ErSof] {
            let mon = Monitor::new(&m, alg).unwrap();
            let mut s = mon.init(7);
            for e in [1, 0, 0, 1, 1] {
                let est = mon.step(&mut s, &ev(e), 4);
                assert!(s.particles.iter().all(|p| p.state.get(0) == Some(e)));
                let mut point = vec![0.0; 2];
                point[e] = 1.0;
                assert_eq!(est, MarginalEstimate::Marginals(vec![point]));
            }
        }
    }

    #[test]
    fn algorithm_names_round_trip() {
        for a in Algorithm::ALL {
            assert_eq!(a.name().parse::<Algorithm>().unwrap(), a);
        }
        assert_eq!("ER/SOF".parse::<Algorithm>().unwrap(), Algorithm::ErSof);
        assert!("pf".parse::<Algorithm>().is_err());
    }
}
