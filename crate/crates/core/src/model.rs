//! Discrete dynamic probabilistic networks as two-slice stationary templates.
//!
//! A [`DpnModel`] holds one CPT per variable for the prior slice (slice 0) and
//! one CPT per variable for the transition slice, which is reused at every
//! t >= 1. Transition CPTs may read state variables of slice t-1 through
//! [`SliceRef::Previous`] parents.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::fmt;

use rand::Rng;
use thiserror::Error;

/// Rows must sum to one within this tolerance; failing rows are rejected.
pub const ROW_SUM_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Role {
    State,
    Evidence,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Variable {
    pub id: usize,
    pub name: String,
    pub role: Role,
    pub cardinality: usize,
}

impl Variable {
    pub fn new(id: usize, name: impl Into<String>, role: Role, cardinality: usize) -> Self {
        Variable {
            id,
            name: name.into(),
            role,
            cardinality,
        }
    }

    pub fn is_state(&self) -> bool {
        self.role == Role::State
    }

    pub fn is_evidence(&self) -> bool {
        self.role == Role::Evidence
    }
}

/// Which slice a parent lives in, relative to the CPT's child.
///
/// `Previous` orders before `Current` so that a sorted parent list puts
/// previous-slice parents first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SliceRef {
    Previous,
    Current,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParentRef {
    pub slice: SliceRef,
    pub var: usize,
}

impl ParentRef {
    pub fn current(var: usize) -> Self {
        ParentRef {
            slice: SliceRef::Current,
            var,
        }
    }

    pub fn previous(var: usize) -> Self {
        ParentRef {
            slice: SliceRef::Previous,
            var,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SliceKind {
    Prior,
    Transition,
}

impl SliceKind {
    pub fn name(self) -> &'static str {
        match self {
            SliceKind::Prior => "prior",
            SliceKind::Transition => "transition",
        }
    }

    pub fn for_time(t: usize) -> Self {
        if t == 0 {
            SliceKind::Prior
        } else {
            SliceKind::Transition
        }
    }
}

impl fmt::Display for SliceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A conditional probability table.
///
/// `table` has one row per joint parent assignment, enumerated row-major in
/// the declared parent order (the first parent is the most significant
/// digit), and one column per child value.
#[derive(Debug, Clone, PartialEq)]
pub struct Cpt {
    pub child: usize,
    pub parents: Vec<ParentRef>,
    pub table: Vec<Vec<f64>>,
}

impl Cpt {
    pub fn new(child: usize, parents: Vec<ParentRef>, table: Vec<Vec<f64>>) -> Self {
        Cpt {
            child,
            parents,
            table,
        }
    }

    /// A parentless CPT with a single row.
    pub fn root(child: usize, probs: Vec<f64>) -> Self {
        Cpt {
            child,
            parents: Vec::new(),
            table: vec![probs],
        }
    }

    /// Row index for the parent values returned by `value`, or `None` if a
    /// parent is unassigned.
    #[inline]
    pub fn row_index(
        &self,
        cards: &[usize],
        mut value: impl FnMut(ParentRef) -> Option<usize>,
    ) -> Option<usize> {
        let mut idx = 0;
        for &p in &self.parents {
            idx = idx * cards[p.var] + value(p)?;
        }
        Some(idx)
    }

    pub fn row(&self, idx: usize) -> &[f64] {
        &self.table[idx]
    }

    pub fn has_parent(&self, p: ParentRef) -> bool {
        self.parents.contains(&p)
    }
}

/// Row-major row index of a parent list under an arbitrary value lookup.
#[inline]
pub fn row_index_of(
    parents: &[ParentRef],
    cards: &[usize],
    mut value: impl FnMut(ParentRef) -> usize,
) -> usize {
    parents
        .iter()
        .fold(0, |idx, &p| idx * cards[p.var] + value(p))
}

/// Values of one slice, indexed by variable id; `None` means unassigned.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct SliceAssignment {
    values: Vec<Option<usize>>,
}

impl SliceAssignment {
    pub fn empty(num_vars: usize) -> Self {
        SliceAssignment {
            values: vec![None; num_vars],
        }
    }

    pub fn full(values: &[usize]) -> Self {
        SliceAssignment {
            values: values.iter().map(|&v| Some(v)).collect(),
        }
    }

    pub fn from_options(values: Vec<Option<usize>>) -> Self {
        SliceAssignment { values }
    }

    #[inline]
    pub fn get(&self, var: usize) -> Option<usize> {
        self.values.get(var).copied().flatten()
    }

    #[inline]
    pub fn set(&mut self, var: usize, value: usize) {
        self.values[var] = Some(value);
    }

    pub fn unset(&mut self, var: usize) {
        self.values[var] = None;
    }

    pub fn is_assigned(&self, var: usize) -> bool {
        self.get(var).is_some()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[Option<usize>] {
        &self.values
    }

    /// Copy keeping only the listed variables assigned.
    pub fn restricted_to(&self, vars: &[usize]) -> SliceAssignment {
        let mut out = SliceAssignment::empty(self.values.len());
        for &v in vars {
            out.values[v] = self.values[v];
        }
        out
    }
}

/// One fully-assigned evidence record per slice, t = 0..=T.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvidenceSequence {
    records: Vec<SliceAssignment>,
}

impl EvidenceSequence {
    pub fn new(model: &DpnModel, records: Vec<SliceAssignment>) -> Result<Self, ModelError> {
        for (t, rec) in records.iter().enumerate() {
            for v in model.evidence_vars() {
                match rec.get(*v) {
                    None => {
                        return Err(ModelError::MissingEvidence {
                            t,
                            var: model.variables[*v].name.clone(),
                        })
                    }
                    Some(x) if x >= model.cards[*v] => {
                        return Err(ModelError::ValueOutOfRange {
                            var: model.variables[*v].name.clone(),
                            value: x,
                            cardinality: model.cards[*v],
                        })
                    }
                    Some(_) => {}
                }
            }
        }
        Ok(EvidenceSequence { records })
    }

    pub fn records(&self) -> &[SliceAssignment] {
        &self.records
    }

    pub fn get(&self, t: usize) -> &SliceAssignment {
        &self.records[t]
    }

    /// Number of records, T + 1.
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn horizon(&self) -> usize {
        self.records.len().saturating_sub(1)
    }
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("model is invalid:\n{}", format_violations(.0))]
    Invalid(Vec<Violation>),
    #[error("{kind} slice contains a directed cycle through {vars:?}")]
    Cycle { kind: SliceKind, vars: Vec<String> },
    #[error("parent {var} of {child} is unassigned")]
    Unassigned { child: String, var: String },
    #[error("evidence record {t} does not assign {var}")]
    MissingEvidence { t: usize, var: String },
    #[error("value {value} of {var} is out of range (cardinality {cardinality})")]
    ValueOutOfRange {
        var: String,
        value: usize,
        cardinality: usize,
    },
}

fn format_violations(v: &[Violation]) -> String {
    v.iter()
        .map(|v| format!("  {v}"))
        .collect::<Vec<_>>()
        .join("\n")
}

/// One failed model invariant. `path` locates the offending field in the
/// network-file layout, e.g. `transition[1].table[2]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub path: String,
    pub kind: ViolationKind,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.kind)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ViolationKind {
    #[error("variable id {found} at position {expected}; ids must be contiguous")]
    NonContiguousId { expected: usize, found: usize },
    #[error("variable {name} has cardinality {cardinality}; at least 2 required")]
    Cardinality { name: String, cardinality: usize },
    #[error("duplicate variable name {name}")]
    DuplicateName { name: String },
    #[error("no CPT for variable {name}")]
    MissingCpt { name: String },
    #[error("more than one CPT for variable {name}")]
    DuplicateCpt { name: String },
    #[error("CPT child id {child} is out of range")]
    UnknownChild { child: usize },
    #[error("CPT for {child} names unknown parent id {parent}")]
    UnknownParent { child: String, parent: usize },
    #[error("CPT for {child} lists parent {parent} more than once")]
    DuplicateParent { child: String, parent: String },
    #[error("prior CPT for {child} has a previous-slice parent {parent}")]
    PreviousParentInPrior { child: String, parent: String },
    #[error("previous-slice parent {parent} of {child} is not a state variable")]
    PreviousEvidenceParent { child: String, parent: String },
    #[error("evidence variable {name} has no parents")]
    ParentlessEvidence { name: String },
    #[error("CPT for {child} has {found} rows, expected {expected}")]
    RowCount {
        child: String,
        expected: usize,
        found: usize,
    },
    #[error("row {row} of {child} has {found} entries, expected {expected}")]
    RowWidth {
        child: String,
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("row {row} of {child} has entry {value} outside [0, 1]")]
    EntryRange {
        child: String,
        row: usize,
        value: f64,
    },
    #[error("row {row} of {child} sums to {sum}, expected 1")]
    RowSum { child: String, row: usize, sum: f64 },
    #[error("same-slice arcs form a cycle through {vars:?}")]
    Cycle { vars: Vec<String> },
}

#[derive(Debug, Clone, PartialEq)]
struct Compiled {
    prior_order: Vec<usize>,
    transition_order: Vec<usize>,
    state_vars: Vec<usize>,
    evidence_vars: Vec<usize>,
}

/// The two-slice template. Construct with [`DpnModel::new`] to get a
/// validated, sampling-ready model; [`DpnModel::from_parts`] keeps arbitrary
/// (possibly invalid) content for diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct DpnModel {
    variables: Vec<Variable>,
    prior: Vec<Cpt>,
    transition: Vec<Cpt>,
    cards: Vec<usize>,
    compiled: Option<Compiled>,
}

impl DpnModel {
    pub fn from_parts(variables: Vec<Variable>, prior: Vec<Cpt>, transition: Vec<Cpt>) -> Self {
        let cards = variables.iter().map(|v| v.cardinality).collect();
        DpnModel {
            variables,
            prior,
            transition,
            cards,
            compiled: None,
        }
    }

    pub fn new(
        variables: Vec<Variable>,
        prior: Vec<Cpt>,
        transition: Vec<Cpt>,
    ) -> Result<Self, ModelError> {
        let mut model = DpnModel::from_parts(variables, prior, transition);
        let violations = validate_model(&model);
        if !violations.is_empty() {
            return Err(ModelError::Invalid(violations));
        }
        model.prior.sort_by_key(|c| c.child);
        model.transition.sort_by_key(|c| c.child);
        let prior_order = topological_order(&model, SliceKind::Prior)?;
        let transition_order = topological_order(&model, SliceKind::Transition)?;
        let state_vars = model
            .variables
            .iter()
            .filter(|v| v.is_state())
            .map(|v| v.id)
            .collect();
        let evidence_vars = model
            .variables
            .iter()
            .filter(|v| v.is_evidence())
            .map(|v| v.id)
            .collect();
        model.compiled = Some(Compiled {
            prior_order,
            transition_order,
            state_vars,
            evidence_vars,
        });
        Ok(model)
    }

    pub fn into_parts(self) -> (Vec<Variable>, Vec<Cpt>, Vec<Cpt>) {
        (self.variables, self.prior, self.transition)
    }

    pub fn is_validated(&self) -> bool {
        self.compiled.is_some()
    }

    fn compiled(&self) -> &Compiled {
        self.compiled
            .as_ref()
            .expect("model must be constructed with DpnModel::new")
    }

    pub fn variables(&self) -> &[Variable] {
        &self.variables
    }

    pub fn variable(&self, id: usize) -> &Variable {
        &self.variables[id]
    }

    pub fn variable_by_name(&self, name: &str) -> Option<&Variable> {
        self.variables.iter().find(|v| v.name == name)
    }

    pub fn num_vars(&self) -> usize {
        self.variables.len()
    }

    pub fn cards(&self) -> &[usize] {
        &self.cards
    }

    pub fn cpts(&self, kind: SliceKind) -> &[Cpt] {
        match kind {
            SliceKind::Prior => &self.prior,
            SliceKind::Transition => &self.transition,
        }
    }

    /// CPT of `var` in the given slice. Requires a validated model.
    pub fn cpt(&self, kind: SliceKind, var: usize) -> &Cpt {
        &self.cpts(kind)[var]
    }

    pub fn order(&self, kind: SliceKind) -> &[usize] {
        match kind {
            SliceKind::Prior => &self.compiled().prior_order,
            SliceKind::Transition => &self.compiled().transition_order,
        }
    }

    /// State variable ids in ascending order.
    pub fn state_vars(&self) -> &[usize] {
        &self.compiled().state_vars
    }

    pub fn evidence_vars(&self) -> &[usize] {
        &self.compiled().evidence_vars
    }

    /// Number of joint assignments of one slice's state variables.
    pub fn state_space_size(&self) -> usize {
        self.state_vars().iter().map(|&v| self.cards[v]).product()
    }
}

/// Checks every model and CPT invariant, returning one entry per failure.
pub fn validate_model(model: &DpnModel) -> Vec<Violation> {
    let mut out = Vec::new();
    let vars = &model.variables;
    let mut seen = std::collections::HashSet::new();
    for (i, v) in vars.iter().enumerate() {
        let path = format!("variables[{i}]");
        if v.id != i {
            out.push(Violation {
                path: path.clone(),
                kind: ViolationKind::NonContiguousId {
                    expected: i,
                    found: v.id,
                },
            });
        }
        if v.cardinality < 2 {
            out.push(Violation {
                path: format!("{path}.cardinality"),
                kind: ViolationKind::Cardinality {
                    name: v.name.clone(),
                    cardinality: v.cardinality,
                },
            });
        }
        if !seen.insert(v.name.as_str()) {
            out.push(Violation {
                path: format!("{path}.name"),
                kind: ViolationKind::DuplicateName {
                    name: v.name.clone(),
                },
            });
        }
    }
    for kind in [SliceKind::Prior, SliceKind::Transition] {
        validate_slice(model, kind, &mut out);
    }
    out
}

fn validate_slice(model: &DpnModel, kind: SliceKind, out: &mut Vec<Violation>) {
    let vars = &model.variables;
    let cards = &model.cards;
    let name = |id: usize| {
        vars.get(id)
            .map(|v| v.name.clone())
            .unwrap_or_else(|| format!("#{id}"))
    };
    let cpts = model.cpts(kind);
    let mut count = vec![0usize; vars.len()];
    let mut structurally_ok = true;
    for (ci, cpt) in cpts.iter().enumerate() {
        let path = format!("{kind}[{ci}]");
        if cpt.child >= vars.len() {
            out.push(Violation {
                path: format!("{path}.child"),
                kind: ViolationKind::UnknownChild { child: cpt.child },
            });
            structurally_ok = false;
            continue;
        }
        count[cpt.child] += 1;
        let child = name(cpt.child);
        let mut parents_ok = true;
        for (pi, p) in cpt.parents.iter().enumerate() {
            let ppath = format!("{path}.parents[{pi}]");
            if p.var >= vars.len() {
                out.push(Violation {
                    path: ppath,
                    kind: ViolationKind::UnknownParent {
                        child: child.clone(),
                        parent: p.var,
                    },
                });
                parents_ok = false;
                continue;
            }
            if cpt.parents[..pi].contains(p) {
                out.push(Violation {
                    path: ppath.clone(),
                    kind: ViolationKind::DuplicateParent {
                        child: child.clone(),
                        parent: name(p.var),
                    },
                });
            }
            if p.slice == SliceRef::Previous {
                if kind == SliceKind::Prior {
                    out.push(Violation {
                        path: ppath.clone(),
                        kind: ViolationKind::PreviousParentInPrior {
                            child: child.clone(),
                            parent: name(p.var),
                        },
                    });
                } else if !vars[p.var].is_state() {
                    out.push(Violation {
                        path: ppath.clone(),
                        kind: ViolationKind::PreviousEvidenceParent {
                            child: child.clone(),
                            parent: name(p.var),
                        },
                    });
                }
            }
        }
        if vars[cpt.child].is_evidence() && cpt.parents.is_empty() {
            out.push(Violation {
                path: format!("{path}.parents"),
                kind: ViolationKind::ParentlessEvidence {
                    name: child.clone(),
                },
            });
        }
        if !parents_ok {
            structurally_ok = false;
            continue;
        }
        let expected_rows: usize = cpt.parents.iter().map(|p| cards[p.var]).product();
        if cpt.table.len() != expected_rows {
            out.push(Violation {
                path: format!("{path}.table"),
                kind: ViolationKind::RowCount {
                    child: child.clone(),
                    expected: expected_rows,
                    found: cpt.table.len(),
                },
            });
        }
        let width = cards[cpt.child];
        for (ri, row) in cpt.table.iter().enumerate() {
            let rpath = format!("{path}.table[{ri}]");
            if row.len() != width {
                out.push(Violation {
                    path: rpath,
                    kind: ViolationKind::RowWidth {
                        child: child.clone(),
                        row: ri,
                        expected: width,
                        found: row.len(),
                    },
                });
                continue;
            }
            if let Some(&bad) = row.iter().find(|x| !(0.0..=1.0).contains(*x)) {
                out.push(Violation {
                    path: rpath.clone(),
                    kind: ViolationKind::EntryRange {
                        child: child.clone(),
                        row: ri,
                        value: bad,
                    },
                });
            }
            let sum: f64 = row.iter().sum();
            if sum.is_nan() || (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                out.push(Violation {
                    path: rpath,
                    kind: ViolationKind::RowSum {
                        child: child.clone(),
                        row: ri,
                        sum,
                    },
                });
            }
        }
    }
    for (id, &n) in count.iter().enumerate() {
        if n == 0 {
            out.push(Violation {
                path: kind.name().to_string(),
                kind: ViolationKind::MissingCpt { name: name(id) },
            });
            structurally_ok = false;
        } else if n > 1 {
            out.push(Violation {
                path: kind.name().to_string(),
                kind: ViolationKind::DuplicateCpt { name: name(id) },
            });
            structurally_ok = false;
        }
    }
    if structurally_ok {
        if let Err(cycle) = kahn_order(vars.len(), cpts) {
            out.push(Violation {
                path: kind.name().to_string(),
                kind: ViolationKind::Cycle {
                    vars: cycle.into_iter().map(name).collect(),
                },
            });
        }
    }
}

/// Kahn's algorithm over same-slice arcs, smallest ready id first. On a cycle
/// returns the ids that could not be ordered.
pub(crate) fn kahn_order(num_vars: usize, cpts: &[Cpt]) -> Result<Vec<usize>, Vec<usize>> {
    let mut indegree = vec![0usize; num_vars];
    let mut children = vec![Vec::new(); num_vars];
    for cpt in cpts {
        for p in &cpt.parents {
            if p.slice == SliceRef::Current {
                indegree[cpt.child] += 1;
                children[p.var].push(cpt.child);
            }
        }
    }
    let mut ready: BinaryHeap<Reverse<usize>> = (0..num_vars)
        .filter(|&v| indegree[v] == 0)
        .map(Reverse)
        .collect();
    let mut order = Vec::with_capacity(num_vars);
    while let Some(Reverse(v)) = ready.pop() {
        order.push(v);
        for &c in &children[v] {
            indegree[c] -= 1;
            if indegree[c] == 0 {
                ready.push(Reverse(c));
            }
        }
    }
    if order.len() == num_vars {
        Ok(order)
    } else {
        Err((0..num_vars).filter(|v| indegree[*v] > 0).collect())
    }
}

/// Deterministic topological order of one slice, ties broken by ascending id.
pub fn topological_order(model: &DpnModel, kind: SliceKind) -> Result<Vec<usize>, ModelError> {
    kahn_order(model.num_vars(), model.cpts(kind)).map_err(|stuck| ModelError::Cycle {
        kind,
        vars: stuck
            .into_iter()
            .map(|v| model.variables[v].name.clone())
            .collect(),
    })
}

/// Draws an index from a probability row by inversion of one uniform.
///
/// Zero-probability entries are never returned, even when the row sums to
/// slightly less than one.
#[inline]
pub fn sample_categorical<R: Rng + ?Sized>(row: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &p) in row.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last_positive = i;
            if u < acc {
                return i;
            }
        }
    }
    last_positive
}

/// Samples every unassigned variable of `out` in `order`, reading
/// previous-slice parents from `prev`.
pub(crate) fn sample_unassigned<R: Rng + ?Sized>(
    cpts: &[Cpt],
    cards: &[usize],
    order: &[usize],
    prev: Option<&SliceAssignment>,
    out: &mut SliceAssignment,
    rng: &mut R,
) {
    for &v in order {
        if out.is_assigned(v) {
            continue;
        }
        let cpt = &cpts[v];
        let row = row_index_of(&cpt.parents, cards, |p| match p.slice {
            SliceRef::Current => out
                .get(p.var)
                .expect("same-slice parent sampled before child"),
            SliceRef::Previous => prev
                .and_then(|s| s.get(p.var))
                .expect("previous-slice parent assigned"),
        });
        let value = sample_categorical(cpt.row(row), rng);
        out.set(v, value);
    }
}

/// Forward-samples every variable of one slice. `prev` is `None` for the
/// prior slice and the slice t-1 assignment otherwise.
pub fn ancestral_sample<R: Rng + ?Sized>(
    model: &DpnModel,
    prev: Option<&SliceAssignment>,
    rng: &mut R,
) -> SliceAssignment {
    let kind = if prev.is_some() {
        SliceKind::Transition
    } else {
        SliceKind::Prior
    };
    let mut out = SliceAssignment::empty(model.num_vars());
    sample_unassigned(
        model.cpts(kind),
        model.cards(),
        model.order(kind),
        prev,
        &mut out,
        rng,
    );
    out
}

/// Samples the state variables of one slice with the evidence variables
/// clamped to `evidence`. Evidence values feed any evidence-to-state arcs.
pub fn sample_states_clamped<R: Rng + ?Sized>(
    model: &DpnModel,
    prev: Option<&SliceAssignment>,
    evidence: &SliceAssignment,
    rng: &mut R,
) -> SliceAssignment {
    let kind = if prev.is_some() {
        SliceKind::Transition
    } else {
        SliceKind::Prior
    };
    let mut out = evidence.restricted_to(model.evidence_vars());
    sample_unassigned(
        model.cpts(kind),
        model.cards(),
        model.order(kind),
        prev,
        &mut out,
        rng,
    );
    out
}

/// Product over evidence variables of P(observed value | parents), with
/// same-slice parents read from `sample` (falling back to `evidence`) and
/// previous-slice parents from `prev`.
pub fn likelihood(
    model: &DpnModel,
    kind: SliceKind,
    prev: Option<&SliceAssignment>,
    evidence: &SliceAssignment,
    sample: &SliceAssignment,
) -> Result<f64, ModelError> {
    let cards = model.cards();
    let mut product = 1.0;
    for &e in model.evidence_vars() {
        let cpt = model.cpt(kind, e);
        let mut missing = None;
        let row = cpt.row_index(cards, |p| {
            let v = match p.slice {
                SliceRef::Current => sample.get(p.var).or_else(|| evidence.get(p.var)),
                SliceRef::Previous => prev.and_then(|s| s.get(p.var)),
            };
            if v.is_none() {
                missing = Some(p.var);
            }
            v
        });
        let (Some(row), Some(observed)) = (row, evidence.get(e)) else {
            let var = missing.unwrap_or(e);
            return Err(ModelError::Unassigned {
                child: model.variable(e).name.clone(),
                var: model.variable(var).name.clone(),
            });
        };
        product *= cpt.row(row)[observed];
    }
    Ok(product)
}

/// Ground-truth state trajectory and evidence sequence for slices 0..=T,
/// forward-sampled from the model.
pub fn generate_truth_and_evidence<R: Rng + ?Sized>(
    model: &DpnModel,
    horizon: usize,
    rng: &mut R,
) -> (Vec<SliceAssignment>, EvidenceSequence) {
    let mut states = Vec::with_capacity(horizon + 1);
    let mut records = Vec::with_capacity(horizon + 1);
    let mut prev: Option<SliceAssignment> = None;
    for _ in 0..=horizon {
        let full = ancestral_sample(model, prev.as_ref(), rng);
        let state = full.restricted_to(model.state_vars());
        records.push(full.restricted_to(model.evidence_vars()));
        states.push(state.clone());
        prev = Some(state);
    }
    (states, EvidenceSequence { records })
}
