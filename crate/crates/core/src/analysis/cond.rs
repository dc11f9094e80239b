use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::rules::{roles, Role};
use crate::corpus::{ArgPos, Corpus};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    /// One unit per (relation, argument) pair, both arguments of every relation.
    Role,
    /// One unit per relation type.
    Relation,
}

/// Conditional co-occurrence of roles (or relations) on the same entity.
///
/// `probs[a][b] = P(entity bears b | entity bears a)`, estimated over all
/// entities of a corpus; rows for units no entity bears are NaN. The display
/// copy replaces every cell whose co-occurrence count is zero with −1.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CondMatrix {
    pub labels: Vec<String>,
    /// Entities bearing both `a` and `b`.
    pub counts: Vec<Vec<usize>>,
    /// Entities bearing `a`.
    pub totals: Vec<usize>,
    pub probs: Vec<Vec<f64>>,
    pub display: Vec<Vec<f64>>,
}

impl CondMatrix {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row_is_empty(&self, a: usize) -> bool {
        self.totals[a] == 0
    }

    /// Row `a` rescaled to sum 1, or `None` for an empty row.
    pub fn normalized_row(&self, a: usize) -> Option<Vec<f64>> {
        if self.row_is_empty(a) {
            return None;
        }
        let s: f64 = self.probs[a].iter().sum();
        Some(self.probs[a].iter().map(|p| p / s).collect())
    }
}

pub fn conditional_matrix(corpus: &Corpus, granularity: Granularity) -> CondMatrix {
    let schema = &corpus.schema;
    let units: Vec<Role> = roles(schema, false);
    let (n, labels): (usize, Vec<String>) = match granularity {
        Granularity::Role => (
            units.len(),
            units.iter().map(|r| r.display(schema).to_string()).collect(),
        ),
        Granularity::Relation => (
            schema.num_relations(),
            schema.relations().iter().map(|r| r.name.clone()).collect(),
        ),
    };
    let unit_of = |role: Role| -> usize {
        match granularity {
            Granularity::Role => role.rel.index() * 2 + role.arg.index(),
            Granularity::Relation => role.rel.index(),
        }
    };
    let mut counts = vec![vec![0usize; n]; n];
    let mut totals = vec![0usize; n];
    for doc in &corpus.documents {
        let mut bears: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); doc.m()];
        for (i, j, r) in doc.gold.positives() {
            bears[i].insert(unit_of(Role::new(r, ArgPos::Arg0)));
            bears[j].insert(unit_of(Role::new(r, ArgPos::Arg1)));
        }
        for set in &bears {
            for &a in set {
                totals[a] += 1;
                for &b in set {
                    counts[a][b] += 1;
                }
            }
        }
    }
    let probs: Vec<Vec<f64>> = (0..n)
        .map(|a| {
            (0..n)
                .map(|b| {
                    if totals[a] == 0 {
                        f64::NAN
                    } else {
                        counts[a][b] as f64 / totals[a] as f64
                    }
                })
                .collect()
        })
        .collect();
    let display = (0..n)
        .map(|a| {
            (0..n)
                .map(|b| if counts[a][b] == 0 { -1.0 } else { probs[a][b] })
                .collect()
        })
        .collect();
    CondMatrix {
        labels,
        counts,
        totals,
        probs,
        display,
    }
}

/// Index of `role` in a role-granularity matrix.
pub fn role_index(role: Role) -> usize {
    role.rel.index() * 2 + role.arg.index()
}
