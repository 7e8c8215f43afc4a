#![allow(dead_code)]

use dpnsim::model::{Cpt, SliceRef};

/// Every assignment of the given cardinalities, last position fastest.
pub fn assignments(cards: &[usize]) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for &c in cards {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                (0..c).map(move |v| {
                    let mut p = prefix.clone();
                    p.push(v);
                    p
                })
            })
            .collect();
    }
    out
}

/// Row of `cpt` for full assignments of both slices, first parent most
/// significant.
pub fn row_of(cpt: &Cpt, cards: &[usize], prev: Option<&[usize]>, cur: &[usize]) -> usize {
    cpt.parents.iter().fold(0, |acc, p| {
        let v = match p.slice {
            SliceRef::Current => cur[p.var],
            SliceRef::Previous => prev.unwrap()[p.var],
        };
        acc * cards[p.var] + v
    })
}

pub fn joint_of(cpts: &[Cpt], cards: &[usize], prev: Option<&[usize]>, cur: &[usize]) -> f64 {
    cpts.iter()
        .map(|c| c.table[row_of(c, cards, prev, cur)][cur[c.child]])
        .product()
}
