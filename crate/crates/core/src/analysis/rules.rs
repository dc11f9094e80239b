use std::fmt;

use serde::Serialize;

use crate::corpus::{ArgPos, RelId, TypeSchema};

/// A (relation type, argument position) pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Role {
    pub rel: RelId,
    pub arg: ArgPos,
}

impl Role {
    pub fn new(rel: RelId, arg: ArgPos) -> Self {
        Self { rel, arg }
    }

    pub fn display<'a>(&self, schema: &'a TypeSchema) -> RoleName<'a> {
        RoleName {
            schema,
            role: *self,
        }
    }

    /// Bit set of admissible entity types.
    pub(crate) fn type_mask(&self, schema: &TypeSchema) -> u64 {
        schema
            .valid_args(self.rel, self.arg)
            .iter()
            .fold(0, |m, t| m | 1u64 << t.0)
    }
}

pub struct RoleName<'a> {
    schema: &'a TypeSchema,
    role: Role,
}

impl fmt::Display for RoleName<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.schema.relation(self.role.rel).name, self.role.arg.name())
    }
}

/// Roles in schema order. With `merge_symmetric`, a symmetric relation
/// contributes only its arg0 role.
pub fn roles(schema: &TypeSchema, merge_symmetric: bool) -> Vec<Role> {
    let mut out = Vec::new();
    for rel in schema.relation_ids() {
        out.push(Role::new(rel, ArgPos::Arg0));
        if !(merge_symmetric && schema.relation(rel).symmetric) {
            out.push(Role::new(rel, ArgPos::Arg1));
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct RuleRecord {
    pub a: String,
    pub b: String,
}

/// Role pairs no single entity can fill together, because their admissible
/// entity-type sets are disjoint. Pairs are `(earlier, later)` in role order.
pub fn derive_incompatibility_rules(schema: &TypeSchema, merge_symmetric: bool) -> Vec<(Role, Role)> {
    assert!(schema.entity_types().len() <= 64, "type masks hold at most 64 entity types");
    let rs = roles(schema, merge_symmetric);
    let masks: Vec<u64> = rs.iter().map(|r| r.type_mask(schema)).collect();
    let mut rules = Vec::new();
    for a in 0..rs.len() {
        for b in a + 1..rs.len() {
            if masks[a] & masks[b] == 0 {
                rules.push((rs[a], rs[b]));
            }
        }
    }
    rules
}

pub fn rule_records(schema: &TypeSchema, rules: &[(Role, Role)]) -> Vec<RuleRecord> {
    rules
        .iter()
        .map(|(a, b)| RuleRecord {
            a: a.display(schema).to_string(),
            b: b.display(schema).to_string(),
        })
        .collect()
}
