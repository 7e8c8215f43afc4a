//! Random small networks in the supported structure class: state variables
//! form an arbitrary DAG within the slice, every evidence variable reads at
//! least one same-slice state variable, and transition CPTs may read any
//! state variable of the previous slice.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::model::{Cpt, DpnModel, ParentRef, Role, Variable};
use crate::rng::stream;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelShape {
    pub state_vars: usize,
    pub evidence_vars: usize,
    pub max_cardinality: usize,
    /// Chance that a CPT entry is forced to zero (one entry per row always
    /// stays positive).
    pub zero_probability: f64,
}

impl Default for ModelShape {
    fn default() -> Self {
        ModelShape {
            state_vars: 2,
            evidence_vars: 1,
            max_cardinality: 3,
            zero_probability: 0.15,
        }
    }
}

fn random_row<R: Rng>(card: usize, zero_p: f64, rng: &mut R) -> Vec<f64> {
    let keep = rng.random_range(0..card);
    let mut row: Vec<f64> = (0..card)
        .map(|i| {
            if i != keep && rng.random::<f64>() < zero_p {
                0.0
            } else {
                rng.random_range(0.05..1.0)
            }
        })
        .collect();
    let sum: f64 = row.iter().sum();
    for x in &mut row {
        *x /= sum;
    }
    row
}

fn random_cpt<R: Rng>(
    child: usize,
    mut parents: Vec<ParentRef>,
    cards: &[usize],
    zero_p: f64,
    rng: &mut R,
) -> Cpt {
    parents.sort();
    let rows: usize = parents.iter().map(|p| cards[p.var]).product();
    let table = (0..rows)
        .map(|_| random_row(cards[child], zero_p, rng))
        .collect();
    Cpt::new(child, parents, table)
}

/// Draws a random valid model of the given shape from `seed`.
pub fn random_model(seed: u64, shape: ModelShape) -> DpnModel {
    assert!(shape.state_vars >= 1 && shape.max_cardinality >= 2);
    let mut rng = stream(seed, &[0x4d4f_4445]);
    let n = shape.state_vars + shape.evidence_vars;
    // Ids are a random permutation so that id order and topological order
    // disagree.
    let mut ids: Vec<usize> = (0..n).collect();
    ids.shuffle(&mut rng);
    let state_ids = &ids[..shape.state_vars];
    let evidence_ids = &ids[shape.state_vars..];

    let mut variables: Vec<Variable> = (0..n)
        .map(|id| {
            let card = rng.random_range(2..=shape.max_cardinality);
            Variable::new(id, "", Role::State, card)
        })
        .collect();
    for (k, &id) in state_ids.iter().enumerate() {
        variables[id].name = format!("X{k}");
    }
    for (k, &id) in evidence_ids.iter().enumerate() {
        variables[id].name = format!("E{k}");
        variables[id].role = Role::Evidence;
    }
    let cards: Vec<usize> = variables.iter().map(|v| v.cardinality).collect();

    // Same-slice state arcs follow the hidden order state_ids[0..].
    let mut intra: Vec<Vec<ParentRef>> = vec![Vec::new(); n];
    for i in 0..state_ids.len() {
        for j in 0..i {
            if rng.random::<f64>() < 0.5 {
                intra[state_ids[i]].push(ParentRef::current(state_ids[j]));
            }
        }
    }
    for &e in evidence_ids {
        for &s in state_ids {
            if rng.random::<f64>() < 0.5 {
                intra[e].push(ParentRef::current(s));
            }
        }
        if intra[e].is_empty() {
            let s = state_ids[rng.random_range(0..state_ids.len())];
            intra[e].push(ParentRef::current(s));
        }
    }

    let zp = shape.zero_probability;
    let prior: Vec<Cpt> = (0..n)
        .map(|v| random_cpt(v, intra[v].clone(), &cards, zp, &mut rng))
        .collect();
    let transition: Vec<Cpt> = (0..n)
        .map(|v| {
            let mut parents = intra[v].clone();
            for &s in state_ids {
                let p = if variables[v].is_state() {
                    if s == v {
                        0.85
                    } else {
                        0.3
                    }
                } else {
                    0.2
                };
                if rng.random::<f64>() < p {
                    parents.push(ParentRef::previous(s));
                }
            }
            random_cpt(v, parents, &cards, zp, &mut rng)
        })
        .collect();
    DpnModel::new(variables, prior, transition).expect("generated model is valid")
}

/// Shapes covering the small-model suite: up to 3 state and 2 evidence
/// variables with cardinality at most 3.
pub fn small_shapes() -> Vec<ModelShape> {
    let mut out = Vec::new();
    for state_vars in 1..=3 {
        for evidence_vars in 0..=2 {
            out.push(ModelShape {
                state_vars,
                evidence_vars,
                max_cardinality: 3,
                zero_probability: 0.15,
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::validate_model;

    #[test]
    fn generated_models_validate() {
        for (i, shape) in small_shapes().into_iter().enumerate() {
            for seed in 0..10 {
                let m = random_model(seed * 31 + i as u64, shape);
                assert!(validate_model(&m).is_empty());
                assert_eq!(m.state_vars().len(), shape.state_vars);
                assert_eq!(m.evidence_vars().len(), shape.evidence_vars);
            }
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let s = ModelShape::default();
        assert_eq!(random_model(4, s), random_model(4, s));
        assert_ne!(random_model(4, s), random_model(5, s));
    }
}
