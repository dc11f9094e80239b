use serde::{Deserialize, Serialize};

use super::rules::roles;
use super::AnalysisError;
use crate::corpus::TypeSchema;

/// How role combinations of size k are enumerated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Convention {
    /// k-subsets of distinct roles, symmetric relations collapsed to one role.
    DistinctRolesMerged,
    /// k-multisets over all roles (both arguments of every relation).
    MultisetAllRoles,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct InvalidCount {
    pub invalid: u64,
    pub total: u64,
}

impl InvalidCount {
    pub fn percent(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            100.0 * self.invalid as f64 / self.total as f64
        }
    }
}

/// Counts role combinations of size `k` whose admissible type sets have an
/// empty common intersection.
pub fn invalid_count(schema: &TypeSchema, k: usize, convention: Convention) -> Result<InvalidCount, AnalysisError> {
    let rs = match convention {
        Convention::DistinctRolesMerged => roles(schema, true),
        Convention::MultisetAllRoles => roles(schema, false),
    };
    if k == 0 {
        return Err(AnalysisError::Invalid("k must be at least 1".into()));
    }
    if convention == Convention::DistinctRolesMerged && k > rs.len() {
        return Err(AnalysisError::Invalid(format!(
            "k = {k} exceeds the {} distinct roles",
            rs.len()
        )));
    }
    let masks: Vec<u64> = rs.iter().map(|r| r.type_mask(schema)).collect();
    let repeat = convention == Convention::MultisetAllRoles;
    let mut count = InvalidCount { invalid: 0, total: 0 };
    enumerate(&masks, k, 0, u64::MAX, repeat, &mut count);
    Ok(count)
}

fn enumerate(masks: &[u64], left: usize, from: usize, acc: u64, repeat: bool, count: &mut InvalidCount) {
    if left == 0 {
        count.total += 1;
        if acc == 0 {
            count.invalid += 1;
        }
        return;
    }
    for i in from..masks.len() {
        let next = if repeat { i } else { i + 1 };
        enumerate(masks, left - 1, next, acc & masks[i], repeat, count);
    }
}

/// Percentage of invalid role combinations of size `k`.
pub fn invalid_fraction(schema: &TypeSchema, k: usize, convention: Convention) -> Result<f64, AnalysisError> {
    Ok(invalid_count(schema, k, convention)?.percent())
}
