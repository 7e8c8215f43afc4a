//! Shachter arc reversal on discrete CPTs and the evidence-reversed slice.
//!
//! Reversing every state-to-evidence arc inside a slice turns the evidence
//! variables into ancestors of the state variables. The reversed slice then
//! gives two things per particle: the predictive weight P(e_t | x_{t-1})
//! from the evidence CPTs, and a proposal for x_t that already conditions on
//! e_t from the state CPTs.

use std::collections::BTreeMap;

use rand::Rng;
use thiserror::Error;

use crate::model::{
    kahn_order, row_index_of, sample_unassigned, Cpt, DpnModel, ParentRef, SliceAssignment,
    SliceKind, SliceRef,
};

#[derive(Debug, Error, PartialEq)]
pub enum ReversalError {
    #[error("no arc {from} -> {to} in the slice")]
    NoSuchArc { from: usize, to: usize },
    #[error("reversing {from} -> {to} would create a cycle: another directed path connects them")]
    WouldCycle { from: usize, to: usize },
    #[error(
        "unsupported slice structure: evidence variable {var} has non-state ancestor {ancestor}"
    )]
    UnsupportedStructure { var: String, ancestor: String },
    #[error("slice contains a directed cycle")]
    Cyclic,
}

/// The CPTs of one slice, `cpts[v].child == v`, with the cardinalities of
/// every variable (previous-slice parents share them).
#[derive(Debug, Clone, PartialEq)]
pub struct CptCollection {
    pub cards: Vec<usize>,
    pub cpts: Vec<Cpt>,
}

impl CptCollection {
    pub fn from_model(model: &DpnModel, kind: SliceKind) -> Self {
        CptCollection {
            cards: model.cards().to_vec(),
            cpts: model.cpts(kind).to_vec(),
        }
    }

    /// Product of every CPT entry for a full slice assignment `cur` given the
    /// previous slice `prev`.
    pub fn joint(&self, prev: Option<&[usize]>, cur: &[usize]) -> f64 {
        self.cpts
            .iter()
            .map(|cpt| {
                let row = row_index_of(&cpt.parents, &self.cards, |p| match p.slice {
                    SliceRef::Current => cur[p.var],
                    SliceRef::Previous => prev.expect("previous slice assigned")[p.var],
                });
                cpt.table[row][cur[cpt.child]]
            })
            .product()
    }

    fn children(&self, var: usize) -> impl Iterator<Item = usize> + '_ {
        self.cpts
            .iter()
            .filter(move |c| c.has_parent(ParentRef::current(var)))
            .map(|c| c.child)
    }

    /// True when a directed path `from -> ... -> to` exists that does not use
    /// the direct arc.
    fn has_indirect_path(&self, from: usize, to: usize) -> bool {
        let mut stack: Vec<usize> = self.children(from).filter(|&c| c != to).collect();
        let mut seen = vec![false; self.cpts.len()];
        while let Some(v) = stack.pop() {
            if v == to {
                return true;
            }
            if std::mem::replace(&mut seen[v], true) {
                continue;
            }
            stack.extend(self.children(v));
        }
        false
    }

    pub fn order(&self) -> Result<Vec<usize>, ReversalError> {
        kahn_order(self.cpts.len(), &self.cpts).map_err(|_| ReversalError::Cyclic)
    }
}

/// Result of a single reversal: the rows of the new `from` CPT whose
/// conditioning context has probability zero (filled uniform).
#[derive(Debug, Clone, PartialEq)]
pub struct ArcReversal {
    pub cpts: CptCollection,
    pub unreachable_rows: Vec<usize>,
}

fn sorted_union(a: &[ParentRef], b: &[ParentRef], exclude: &[ParentRef]) -> Vec<ParentRef> {
    let mut out: Vec<ParentRef> = a
        .iter()
        .chain(b)
        .copied()
        .filter(|p| !exclude.contains(p))
        .collect();
    out.sort();
    out.dedup();
    out
}

/// Reverses the same-slice arc `from -> to`, preserving the joint.
///
/// Afterwards `to` has parents U = pa(from) ∪ pa(to) \ {from} and `from` has
/// parents U ∪ {to}, each sorted previous-slice first, then ascending id.
pub fn reverse_arc(
    cpts: &CptCollection,
    from: usize,
    to: usize,
) -> Result<ArcReversal, ReversalError> {
    let from_ref = ParentRef::current(from);
    let to_ref = ParentRef::current(to);
    if !cpts.cpts[to].has_parent(from_ref) {
        return Err(ReversalError::NoSuchArc { from, to });
    }
    if cpts.has_indirect_path(from, to) {
        return Err(ReversalError::WouldCycle { from, to });
    }
    let cards = &cpts.cards;
    let old_from = &cpts.cpts[from];
    let old_to = &cpts.cpts[to];
    let union = sorted_union(&old_from.parents, &old_to.parents, &[from_ref, to_ref]);
    let mut from_parents = union.clone();
    from_parents.push(to_ref);
    from_parents.sort();

    let from_card = cards[from];
    let to_card = cards[to];
    let union_rows: usize = union.iter().map(|p| cards[p.var]).product();
    let mut to_table = vec![vec![0.0; to_card]; union_rows];
    let mut from_table = vec![vec![0.0; from_card]; union_rows * to_card];
    let mut unreachable = Vec::new();

    // Values of the union parents, keyed by position in `union`.
    let mut digits = vec![0usize; union.len()];
    let lookup = |digits: &[usize], p: ParentRef| -> Option<usize> {
        union.iter().position(|q| *q == p).map(|i| digits[i])
    };
    let mut joint = vec![0.0; from_card * to_card];
    for (u, to_out) in to_table.iter_mut().enumerate() {
        let mut rem = u;
        for i in (0..union.len()).rev() {
            digits[i] = rem % cards[union[i].var];
            rem /= cards[union[i].var];
        }
        let from_row = row_index_of(&old_from.parents, cards, |p| {
            lookup(&digits, p).expect("parent in union")
        });
        for v in 0..from_card {
            let p_from = old_from.table[from_row][v];
            let to_row = row_index_of(&old_to.parents, cards, |p| {
                if p == from_ref {
                    v
                } else {
                    lookup(&digits, p).expect("parent in union")
                }
            });
            for w in 0..to_card {
                joint[v * to_card + w] = p_from * old_to.table[to_row][w];
            }
        }
        for w in 0..to_card {
            // Fixed summation order over `from` values.
            let marginal: f64 = (0..from_card).map(|v| joint[v * to_card + w]).sum();
            to_out[w] = marginal;
            let row = row_index_of(&from_parents, cards, |p| {
                if p == to_ref {
                    w
                } else {
                    lookup(&digits, p).expect("parent in union")
                }
            });
            if marginal > 0.0 {
                for v in 0..from_card {
                    from_table[row][v] = joint[v * to_card + w] / marginal;
                }
            } else {
                from_table[row].fill(1.0 / from_card as f64);
                unreachable.push(row);
            }
        }
    }
    unreachable.sort_unstable();

    let mut out = cpts.clone();
    out.cpts[to] = Cpt::new(to, union, to_table);
    out.cpts[from] = Cpt::new(from, from_parents, from_table);
    Ok(ArcReversal {
        cpts: out,
        unreachable_rows: unreachable,
    })
}

/// One slice with every state-to-evidence arc reversed.
#[derive(Debug, Clone, PartialEq)]
pub struct ReversedSlice {
    pub kind: SliceKind,
    pub cpts: CptCollection,
    /// Topological order of the reversed slice.
    pub order: Vec<usize>,
    /// Evidence variables in sampling order.
    pub evidence_order: Vec<usize>,
    /// State variables in sampling order.
    pub state_order: Vec<usize>,
    /// (variable, row) pairs filled uniform because their context is impossible.
    pub unreachable_rows: Vec<(usize, usize)>,
}

impl ReversedSlice {
    pub fn evidence_cpts(&self) -> impl Iterator<Item = &Cpt> {
        self.evidence_order.iter().map(|&v| &self.cpts.cpts[v])
    }

    pub fn state_cpts(&self) -> impl Iterator<Item = &Cpt> {
        self.state_order.iter().map(|&v| &self.cpts.cpts[v])
    }

    /// P(E_t = evidence | previous state), chained over the reversed
    /// evidence CPTs.
    pub fn evidence_probability(
        &self,
        prev: Option<&SliceAssignment>,
        evidence: &SliceAssignment,
    ) -> f64 {
        let cards = &self.cpts.cards;
        let mut product = 1.0;
        for cpt in self.evidence_cpts() {
            let row = row_index_of(&cpt.parents, cards, |p| match p.slice {
                SliceRef::Current => evidence.get(p.var).expect("evidence assigned"),
                SliceRef::Previous => prev
                    .and_then(|s| s.get(p.var))
                    .expect("previous state assigned"),
            });
            product *= cpt.table[row][evidence.get(cpt.child).expect("evidence assigned")];
            if product == 0.0 {
                break;
            }
        }
        product
    }

    /// Draws the slice's state variables from the reversed state CPTs with
    /// the evidence clamped. The result also carries the evidence values.
    pub fn sample_states<R: Rng + ?Sized>(
        &self,
        prev: Option<&SliceAssignment>,
        evidence: &SliceAssignment,
        rng: &mut R,
    ) -> SliceAssignment {
        let mut out = evidence.restricted_to(&self.evidence_order);
        sample_unassigned(
            &self.cpts.cpts,
            &self.cpts.cards,
            &self.state_order,
            prev,
            &mut out,
            rng,
        );
        out
    }
}

/// Reverses arcs within one slice of the model until no evidence variable
/// has a same-slice state parent.
///
/// Evidence variables are processed in reverse topological order of the
/// original slice, each fully detached before the next. For the variable at
/// hand, the state parent that comes last in the current topological order
/// is reversed first; no other directed path can lead from it into the
/// evidence variable, so every reversal is legal.
pub fn build_reversed_slice(
    model: &DpnModel,
    kind: SliceKind,
) -> Result<ReversedSlice, ReversalError> {
    let vars = model.variables();
    let mut cpts = CptCollection::from_model(model, kind);
    check_supported(model, &cpts)?;
    let original_order = cpts.order()?;
    let mut flagged: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &e in original_order
        .iter()
        .rev()
        .filter(|&&v| vars[v].is_evidence())
    {
        loop {
            let order = cpts.order()?;
            let position = |v: usize| order.iter().position(|&x| x == v).expect("in order");
            let latest_state_parent = cpts.cpts[e]
                .parents
                .iter()
                .filter(|p| p.slice == SliceRef::Current && vars[p.var].is_state())
                .map(|p| p.var)
                .max_by_key(|&v| position(v));
            let Some(from) = latest_state_parent else {
                break;
            };
            let step = reverse_arc(&cpts, from, e)?;
            flagged.remove(&e);
            flagged.insert(from, step.unreachable_rows);
            cpts = step.cpts;
        }
    }
    let order = cpts.order()?;
    let evidence_order = order
        .iter()
        .copied()
        .filter(|&v| vars[v].is_evidence())
        .collect();
    let state_order = order
        .iter()
        .copied()
        .filter(|&v| vars[v].is_state())
        .collect();
    let unreachable = flagged
        .into_iter()
        .flat_map(|(v, rows)| rows.into_iter().map(move |r| (v, r)))
        .collect();
    Ok(ReversedSlice {
        kind,
        cpts,
        order,
        evidence_order,
        state_order,
        unreachable_rows: unreachable,
    })
}

/// Every same-slice ancestor of an evidence variable must be a state variable.
fn check_supported(model: &DpnModel, cpts: &CptCollection) -> Result<(), ReversalError> {
    let vars = model.variables();
    for e in model.evidence_vars() {
        let mut stack: Vec<usize> = Vec::new();
        let mut seen = vec![false; vars.len()];
        stack.extend(
            cpts.cpts[*e]
                .parents
                .iter()
                .filter(|p| p.slice == SliceRef::Current)
                .map(|p| p.var),
        );
        while let Some(v) = stack.pop() {
            if std::mem::replace(&mut seen[v], true) {
                continue;
            }
            if !vars[v].is_state() {
                return Err(ReversalError::UnsupportedStructure {
                    var: vars[*e].name.clone(),
                    ancestor: vars[v].name.clone(),
                });
            }
            stack.extend(
                cpts.cpts[v]
                    .parents
                    .iter()
                    .filter(|p| p.slice == SliceRef::Current)
                    .map(|p| p.var),
            );
        }
    }
    Ok(())
}

/// Reversed prior and transition slices of a model; built once and reused
/// for every time step.
#[derive(Debug, Clone, PartialEq)]
pub struct ReversedModel {
    pub prior: ReversedSlice,
    pub transition: ReversedSlice,
}

impl ReversedModel {
    pub fn build(model: &DpnModel) -> Result<Self, ReversalError> {
        Ok(ReversedModel {
            prior: build_reversed_slice(model, SliceKind::Prior)?,
            transition: build_reversed_slice(model, SliceKind::Transition)?,
        })
    }

    pub fn slice(&self, kind: SliceKind) -> &ReversedSlice {
        match kind {
            SliceKind::Prior => &self.prior,
            SliceKind::Transition => &self.transition,
        }
    }
}
