//! JSON network and evidence files.
//!
//! A network file lists `variables` (ids are list positions) and the
//! `prior` and `transition` CPT lists. Parents name a variable and a slice,
//! `"t"` or `"t-1"`; table rows are enumerated row-major in parent order.
//! An evidence file is a list with one object per slice mapping evidence
//! variable names to value indices.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    Cpt, DpnModel, EvidenceSequence, ModelError, ParentRef, Role, SliceAssignment, SliceKind,
    SliceRef, Variable, Violation,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkFile {
    pub variables: Vec<VariableEntry>,
    pub prior: Vec<CptEntry>,
    pub transition: Vec<CptEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariableEntry {
    pub name: String,
    pub role: RoleName,
    pub cardinality: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RoleName {
    State,
    Evidence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CptEntry {
    pub child: String,
    #[serde(default)]
    pub parents: Vec<ParentEntry>,
    pub table: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParentEntry {
    pub name: String,
    pub slice: SliceName,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SliceName {
    #[serde(rename = "t")]
    Current,
    #[serde(rename = "t-1")]
    Previous,
}

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("{path}: unknown variable {name:?}")]
    UnknownVariable { path: String, name: String },
    #[error("{path}: {message}")]
    Evidence { path: String, message: String },
    #[error("model is invalid:\n{}", .0.iter().map(|v| format!("  {v}")).collect::<Vec<_>>().join("\n"))]
    Invalid(Vec<Violation>),
    #[error(transparent)]
    Model(ModelError),
}

impl FormatError {
    pub fn violations(&self) -> Option<&[Violation]> {
        match self {
            FormatError::Invalid(v) => Some(v),
            _ => None,
        }
    }
}

fn parse_json<T: serde::de::DeserializeOwned>(text: &str) -> Result<T, FormatError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        FormatError::Parse {
            path,
            message: e.into_inner().to_string(),
        }
    })
}

fn read(path: &Path) -> Result<String, FormatError> {
    fs::read_to_string(path).map_err(|source| FormatError::Io {
        path: path.display().to_string(),
        source,
    })
}

impl NetworkFile {
    pub fn parse(text: &str) -> Result<Self, FormatError> {
        parse_json(text)
    }

    /// Resolves names into a model without checking CPT invariants.
    pub fn to_unchecked_model(&self) -> Result<DpnModel, FormatError> {
        let variables: Vec<Variable> = self
            .variables
            .iter()
            .enumerate()
            .map(|(id, v)| {
                let role = match v.role {
                    RoleName::State => Role::State,
                    RoleName::Evidence => Role::Evidence,
                };
                Variable::new(id, v.name.clone(), role, v.cardinality)
            })
            .collect();
        let lookup = |path: String, name: &str| -> Result<usize, FormatError> {
            variables
                .iter()
                .position(|v| v.name == name)
                .ok_or_else(|| FormatError::UnknownVariable {
                    path,
                    name: name.to_string(),
                })
        };
        let convert = |key: &str, entries: &[CptEntry]| -> Result<Vec<Cpt>, FormatError> {
            entries
                .iter()
                .enumerate()
                .map(|(i, c)| {
                    let child = lookup(format!("{key}[{i}].child"), &c.child)?;
                    let parents = c
                        .parents
                        .iter()
                        .enumerate()
                        .map(|(j, p)| {
                            let var = lookup(format!("{key}[{i}].parents[{j}].name"), &p.name)?;
                            Ok(match p.slice {
                                SliceName::Current => ParentRef::current(var),
                                SliceName::Previous => ParentRef::previous(var),
                            })
                        })
                        .collect::<Result<Vec<_>, FormatError>>()?;
                    Ok(Cpt::new(child, parents, c.table.clone()))
                })
                .collect()
        };
        let prior = convert("prior", &self.prior)?;
        let transition = convert("transition", &self.transition)?;
        Ok(DpnModel::from_parts(variables, prior, transition))
    }

    pub fn to_model(&self) -> Result<DpnModel, FormatError> {
        let (vars, prior, transition) = self.to_unchecked_model()?.into_parts();
        DpnModel::new(vars, prior, transition).map_err(|e| match e {
            ModelError::Invalid(v) => FormatError::Invalid(v),
            other => FormatError::Model(other),
        })
    }

    /// File representation of a variable list plus prior and transition CPTs.
    pub fn from_parts(variables: &[Variable], prior: &[Cpt], transition: &[Cpt]) -> Self {
        let entries = |cpts: &[Cpt]| -> Vec<CptEntry> {
            cpts.iter()
                .map(|c| CptEntry {
                    child: variables[c.child].name.clone(),
                    parents: c
                        .parents
                        .iter()
                        .map(|p| ParentEntry {
                            name: variables[p.var].name.clone(),
                            slice: match p.slice {
                                SliceRef::Current => SliceName::Current,
                                SliceRef::Previous => SliceName::Previous,
                            },
                        })
                        .collect(),
                    table: c.table.clone(),
                })
                .collect()
        };
        NetworkFile {
            variables: variables
                .iter()
                .map(|v| VariableEntry {
                    name: v.name.clone(),
                    role: match v.role {
                        Role::State => RoleName::State,
                        Role::Evidence => RoleName::Evidence,
                    },
                    cardinality: v.cardinality,
                })
                .collect(),
            prior: entries(prior),
            transition: entries(transition),
        }
    }

    pub fn from_model(model: &DpnModel) -> Self {
        Self::from_parts(
            model.variables(),
            model.cpts(SliceKind::Prior),
            model.cpts(SliceKind::Transition),
        )
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("network file serializes")
    }
}

pub fn parse_model(text: &str) -> Result<DpnModel, FormatError> {
    NetworkFile::parse(text)?.to_model()
}

pub fn load_model(path: &Path) -> Result<DpnModel, FormatError> {
    parse_model(&read(path)?)
}

pub fn parse_evidence(model: &DpnModel, text: &str) -> Result<EvidenceSequence, FormatError> {
    let raw: Vec<BTreeMap<String, usize>> = parse_json(text)?;
    let mut records = Vec::with_capacity(raw.len());
    for (t, entry) in raw.iter().enumerate() {
        let mut rec = SliceAssignment::empty(model.num_vars());
        for (name, &value) in entry {
            let path = format!("[{t}].{name}");
            let var = model
                .variable_by_name(name)
                .ok_or_else(|| FormatError::UnknownVariable {
                    path: path.clone(),
                    name: name.clone(),
                })?;
            if !var.is_evidence() {
                return Err(FormatError::Evidence {
                    path,
                    message: format!("{name} is not an evidence variable"),
                });
            }
            if value >= var.cardinality {
                return Err(FormatError::Evidence {
                    path,
                    message: format!(
                        "value {value} out of range for cardinality {}",
                        var.cardinality
                    ),
                });
            }
            rec.set(var.id, value);
        }
        for &e in model.evidence_vars() {
            if !rec.is_assigned(e) {
                return Err(FormatError::Evidence {
                    path: format!("[{t}]"),
                    message: format!("missing evidence variable {}", model.variable(e).name),
                });
            }
        }
        records.push(rec);
    }
    if records.is_empty() {
        return Err(FormatError::Evidence {
            path: String::new(),
            message: "evidence file has no slices".into(),
        });
    }
    EvidenceSequence::new(model, records).map_err(FormatError::Model)
}

pub fn load_evidence(model: &DpnModel, path: &Path) -> Result<EvidenceSequence, FormatError> {
    parse_evidence(model, &read(path)?)
}

pub fn evidence_to_json(model: &DpnModel, evidence: &EvidenceSequence) -> String {
    let raw: Vec<BTreeMap<String, usize>> = evidence
        .records()
        .iter()
        .map(|r| {
            model
                .evidence_vars()
                .iter()
                .map(|&e| {
                    (
                        model.variable(e).name.clone(),
                        r.get(e).expect("evidence assigned"),
                    )
                })
                .collect()
        })
        .collect();
    serde_json::to_string_pretty(&raw).expect("evidence serializes")
}
