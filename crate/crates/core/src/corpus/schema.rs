use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::CorpusError;

/// Reserved label name for "no relation".
pub const NO_RELATION: &str = "NO_RELATION";

/// Index of an entity type within a [`TypeSchema`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EntityTypeId(pub u16);

/// Index of a relation type within a [`TypeSchema`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RelId(pub u16);

impl RelId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ArgPos {
    Arg0,
    Arg1,
}

impl ArgPos {
    pub fn index(self) -> usize {
        match self {
            ArgPos::Arg0 => 0,
            ArgPos::Arg1 => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ArgPos::Arg0 => "arg0",
            ArgPos::Arg1 => "arg1",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RelationType {
    pub name: String,
    pub symmetric: bool,
}

/// Entity types, relation types, and the entity types each argument slot admits.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TypeSchema {
    entity_types: Vec<String>,
    relations: Vec<RelationType>,
    valid_args: Vec<[BTreeSet<EntityTypeId>; 2]>,
}

/// On-disk schema layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SchemaFile {
    pub entity_types: Vec<String>,
    pub relations: Vec<RelationSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelationSpec {
    pub name: String,
    pub symmetric: bool,
    pub arg0_types: Vec<String>,
    pub arg1_types: Vec<String>,
}

const ACE05_SCHEMA: &str = include_str!("../../../../data/ace05.json");

impl TypeSchema {
    pub fn from_file_spec(spec: &SchemaFile) -> Result<Self, CorpusError> {
        let invalid = |msg: String| CorpusError::Schema(msg);
        let mut type_ids = HashMap::new();
        for (i, name) in spec.entity_types.iter().enumerate() {
            if name.is_empty() {
                return Err(invalid("empty entity type name".into()));
            }
            if type_ids.insert(name.as_str(), EntityTypeId(i as u16)).is_some() {
                return Err(invalid(format!("duplicate entity type {name:?}")));
            }
        }
        let mut seen = BTreeSet::new();
        let mut relations = Vec::new();
        let mut valid_args = Vec::new();
        for r in &spec.relations {
            if r.name.is_empty() || r.name == NO_RELATION {
                return Err(invalid(format!("invalid relation name {:?}", r.name)));
            }
            if !seen.insert(r.name.as_str()) {
                return Err(invalid(format!("duplicate relation {:?}", r.name)));
            }
            let resolve = |names: &[String]| -> Result<BTreeSet<EntityTypeId>, CorpusError> {
                let mut set = BTreeSet::new();
                for n in names {
                    let id = type_ids
                        .get(n.as_str())
                        .ok_or_else(|| invalid(format!("relation {:?} names unknown type {n:?}", r.name)))?;
                    set.insert(*id);
                }
                if set.is_empty() {
                    return Err(invalid(format!("relation {:?} has an empty argument type set", r.name)));
                }
                Ok(set)
            };
            let a0 = resolve(&r.arg0_types)?;
            let a1 = resolve(&r.arg1_types)?;
            if r.symmetric && a0 != a1 {
                return Err(invalid(format!(
                    "symmetric relation {:?} must admit the same types in both arguments",
                    r.name
                )));
            }
            relations.push(RelationType {
                name: r.name.clone(),
                symmetric: r.symmetric,
            });
            valid_args.push([a0, a1]);
        }
        if relations.len() >= u16::MAX as usize {
            return Err(invalid("too many relation types".into()));
        }
        Ok(Self {
            entity_types: spec.entity_types.clone(),
            relations,
            valid_args,
        })
    }

    pub fn to_file_spec(&self) -> SchemaFile {
        SchemaFile {
            entity_types: self.entity_types.clone(),
            relations: self
                .relations
                .iter()
                .zip(&self.valid_args)
                .map(|(r, args)| RelationSpec {
                    name: r.name.clone(),
                    symmetric: r.symmetric,
                    arg0_types: args[0].iter().map(|t| self.entity_type_name(*t).to_string()).collect(),
                    arg1_types: args[1].iter().map(|t| self.entity_type_name(*t).to_string()).collect(),
                })
                .collect(),
        }
    }

    pub fn from_json_str(s: &str) -> Result<Self, CorpusError> {
        let spec: SchemaFile = serde_json::from_str(s).map_err(|e| CorpusError::Schema(e.to_string()))?;
        Self::from_file_spec(&spec)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&self.to_file_spec()).expect("schema serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CorpusError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| CorpusError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        Self::from_json_str(&text)
    }

    /// The six ACE 2005 relation types with their argument type constraints;
    /// Per-Soc is the only symmetric relation.
    pub fn ace05() -> Self {
        Self::from_json_str(ACE05_SCHEMA).expect("bundled ACE05 schema is valid")
    }

    pub fn entity_types(&self) -> &[String] {
        &self.entity_types
    }

    pub fn relations(&self) -> &[RelationType] {
        &self.relations
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    /// Number of label classes including NO_RELATION.
    pub fn num_classes(&self) -> usize {
        self.relations.len() + 1
    }

    pub fn relation(&self, id: RelId) -> &RelationType {
        &self.relations[id.index()]
    }

    pub fn relation_ids(&self) -> impl Iterator<Item = RelId> {
        (0..self.relations.len()).map(|i| RelId(i as u16))
    }

    pub fn entity_type_ids(&self) -> impl Iterator<Item = EntityTypeId> {
        (0..self.entity_types.len()).map(|i| EntityTypeId(i as u16))
    }

    pub fn entity_type_name(&self, id: EntityTypeId) -> &str {
        &self.entity_types[id.0 as usize]
    }

    pub fn entity_type_id(&self, name: &str) -> Option<EntityTypeId> {
        self.entity_types
            .iter()
            .position(|t| t == name)
            .map(|i| EntityTypeId(i as u16))
    }

    pub fn relation_id(&self, name: &str) -> Option<RelId> {
        self.relations
            .iter()
            .position(|r| r.name == name)
            .map(|i| RelId(i as u16))
    }

    pub fn valid_args(&self, rel: RelId, arg: ArgPos) -> &BTreeSet<EntityTypeId> {
        &self.valid_args[rel.index()][arg.index()]
    }

    /// Replaces one argument's admissible type set.
    pub fn set_valid_args(
        &mut self,
        rel: RelId,
        arg: ArgPos,
        types: BTreeSet<EntityTypeId>,
    ) -> Result<(), CorpusError> {
        if types.is_empty() {
            return Err(CorpusError::Schema("argument type set must be nonempty".into()));
        }
        self.valid_args[rel.index()][arg.index()] = types;
        if self.relations[rel.index()].symmetric {
            let other = match arg {
                ArgPos::Arg0 => ArgPos::Arg1,
                ArgPos::Arg1 => ArgPos::Arg0,
            };
            let copy = self.valid_args[rel.index()][arg.index()].clone();
            self.valid_args[rel.index()][other.index()] = copy;
        }
        Ok(())
    }

    pub fn admits(&self, rel: RelId, arg0: EntityTypeId, arg1: EntityTypeId) -> bool {
        self.valid_args(rel, ArgPos::Arg0).contains(&arg0) && self.valid_args(rel, ArgPos::Arg1).contains(&arg1)
    }
}
