//! Exact recursive filtering over the joint state space of a slice.
//!
//! The belief state is a dense vector indexed in mixed radix over the state
//! variables in ascending id order, the lowest id being the most significant
//! digit. This is only meant for the small networks used as ground truth.

use thiserror::Error;

use crate::model::{
    row_index_of, DpnModel, EvidenceSequence, SliceAssignment, SliceKind, SliceRef,
};

pub const DEFAULT_STATE_CAP: usize = 1_000_000;

#[derive(Debug, Error, PartialEq)]
pub enum OracleError {
    #[error("joint state space has {size} assignments, above the cap of {cap}")]
    TooLarge { size: usize, cap: usize },
    #[error("evidence at slice {t} has probability zero")]
    ImpossibleEvidence { t: usize },
    #[error("belief has {found} entries, model state space has {expected}")]
    ShapeMismatch { expected: usize, found: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeliefState {
    pub probabilities: Vec<f64>,
    /// State variable ids, in digit order.
    pub vars: Vec<usize>,
    /// Cardinalities aligned with `vars`.
    pub radix: Vec<usize>,
}

impl BeliefState {
    pub fn len(&self) -> usize {
        self.probabilities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probabilities.is_empty()
    }

    /// Digits of joint index `idx`, aligned with `vars`.
    pub fn decode(&self, idx: usize) -> Vec<usize> {
        decode(&self.radix, idx)
    }
}

fn decode(radix: &[usize], mut idx: usize) -> Vec<usize> {
    let mut digits = vec![0; radix.len()];
    for i in (0..radix.len()).rev() {
        digits[i] = idx % radix[i];
        idx /= radix[i];
    }
    digits
}

/// Exact filter for one model with a fixed state-space cap.
#[derive(Debug, Clone)]
pub struct ExactOracle<'m> {
    model: &'m DpnModel,
    vars: Vec<usize>,
    radix: Vec<usize>,
    /// Full slice value vectors (evidence entries unset) for each joint index.
    states: Vec<Vec<usize>>,
}

impl<'m> ExactOracle<'m> {
    pub fn new(model: &'m DpnModel) -> Result<Self, OracleError> {
        Self::with_cap(model, DEFAULT_STATE_CAP)
    }

    pub fn with_cap(model: &'m DpnModel, cap: usize) -> Result<Self, OracleError> {
        let vars = model.state_vars().to_vec();
        let radix: Vec<usize> = vars.iter().map(|&v| model.cards()[v]).collect();
        let size = radix
            .iter()
            .try_fold(1usize, |acc, &r| acc.checked_mul(r))
            .unwrap_or(usize::MAX);
        if size > cap {
            return Err(OracleError::TooLarge { size, cap });
        }
        let states = (0..size)
            .map(|idx| {
                let mut full = vec![0; model.num_vars()];
                for (&v, d) in vars.iter().zip(decode(&radix, idx)) {
                    full[v] = d;
                }
                full
            })
            .collect();
        Ok(ExactOracle {
            model,
            vars,
            radix,
            states,
        })
    }

    pub fn state_space_size(&self) -> usize {
        self.states.len()
    }

    /// Product of every CPT entry of the slice with evidence clamped, i.e.
    /// P(x_t, e_t | x_{t-1}).
    fn slice_factor(
        &self,
        kind: SliceKind,
        prev: Option<&[usize]>,
        cur: &mut [usize],
        evidence: &SliceAssignment,
    ) -> f64 {
        for &e in self.model.evidence_vars() {
            cur[e] = evidence.get(e).expect("evidence assigned");
        }
        let cards = self.model.cards();
        let mut product = 1.0;
        for cpt in self.model.cpts(kind) {
            let row = row_index_of(&cpt.parents, cards, |p| match p.slice {
                SliceRef::Current => cur[p.var],
                SliceRef::Previous => prev.expect("previous slice")[p.var],
            });
            product *= cpt.table[row][cur[cpt.child]];
            if product == 0.0 {
                break;
            }
        }
        product
    }

    fn normalized(&self, mut probs: Vec<f64>, t: usize) -> Result<BeliefState, OracleError> {
        let total: f64 = probs.iter().sum();
        if total.is_nan() || total <= 0.0 {
            return Err(OracleError::ImpossibleEvidence { t });
        }
        for p in &mut probs {
            *p /= total;
        }
        Ok(BeliefState {
            probabilities: probs,
            vars: self.vars.clone(),
            radix: self.radix.clone(),
        })
    }

    /// P(X_0 | e_0).
    pub fn prior(&self, evidence: &SliceAssignment) -> Result<BeliefState, OracleError> {
        let probs = self
            .states
            .iter()
            .map(|s| {
                let mut cur = s.clone();
                self.slice_factor(SliceKind::Prior, None, &mut cur, evidence)
            })
            .collect();
        self.normalized(probs, 0)
    }

    /// P(X_t | e_{0:t}) from P(X_{t-1} | e_{0:t-1}). `t` is only used in
    /// error reports.
    pub fn step(
        &self,
        belief: &BeliefState,
        evidence: &SliceAssignment,
        t: usize,
    ) -> Result<BeliefState, OracleError> {
        if belief.len() != self.states.len() {
            return Err(OracleError::ShapeMismatch {
                expected: self.states.len(),
                found: belief.len(),
            });
        }
        let mut probs = vec![0.0; self.states.len()];
        let mut cur = vec![0; self.model.num_vars()];
        for (prev_idx, &mass) in belief.probabilities.iter().enumerate() {
            if mass == 0.0 {
                continue;
            }
            let prev = &self.states[prev_idx];
            for (idx, s) in self.states.iter().enumerate() {
                cur.copy_from_slice(s);
                probs[idx] +=
                    mass * self.slice_factor(SliceKind::Transition, Some(prev), &mut cur, evidence);
            }
        }
        self.normalized(probs, t)
    }

    /// Beliefs for every slice of the sequence.
    pub fn filter(&self, evidence: &EvidenceSequence) -> Result<Vec<BeliefState>, OracleError> {
        let mut out: Vec<BeliefState> = Vec::with_capacity(evidence.len());
        for (t, e) in evidence.records().iter().enumerate() {
            let next = match out.last() {
                None => self.prior(e)?,
                Some(b) => self.step(b, e, t)?,
            };
            out.push(next);
        }
        Ok(out)
    }

    /// Per-state-variable marginals for every slice, aligned with
    /// `DpnModel::state_vars`.
    pub fn marginals(
        &self,
        evidence: &EvidenceSequence,
    ) -> Result<Vec<Vec<Vec<f64>>>, OracleError> {
        Ok(self.filter(evidence)?.iter().map(all_marginals).collect())
    }
}

pub fn exact_prior(
    model: &DpnModel,
    evidence: &SliceAssignment,
) -> Result<BeliefState, OracleError> {
    ExactOracle::new(model)?.prior(evidence)
}

pub fn exact_filter_step(
    model: &DpnModel,
    belief: &BeliefState,
    evidence: &SliceAssignment,
) -> Result<BeliefState, OracleError> {
    ExactOracle::new(model)?.step(belief, evidence, 1)
}

/// Marginal of state variable `var` (an id, which must appear in `belief.vars`).
pub fn exact_marginal(belief: &BeliefState, var: usize) -> Vec<f64> {
    let k = belief
        .vars
        .iter()
        .position(|&v| v == var)
        .expect("var is a state variable of the belief");
    let mut out = vec![0.0; belief.radix[k]];
    // Stride of digit k in the mixed-radix index.
    let stride: usize = belief.radix[k + 1..].iter().product();
    for (idx, &p) in belief.probabilities.iter().enumerate() {
        out[(idx / stride) % belief.radix[k]] += p;
    }
    out
}

pub fn all_marginals(belief: &BeliefState) -> Vec<Vec<f64>> {
    belief
        .vars
        .iter()
        .map(|&v| exact_marginal(belief, v))
        .collect()
}
