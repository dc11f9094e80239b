//! Synthetic corpora with planted type constraints, symmetry and correlated
//! relation counts.
//!
//! Each entity is rendered as a type marker token (`[PER]`) followed by an
//! identifier token (`w17`). Every relation instance gets a slot number `k` and
//! leaves a link token after each argument mention: `r{k}.a.{Type}` after arg0
//! and `r{k}.b.{Type}` after arg1. With probability `1 - cue_prob` the type is
//! withheld (`r{k}.a.?`), so the label of that pair has to be inferred from the
//! argument types and from the other relations of the document.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Corpus, CorpusError, Document, Entity, EntityTypeId, Label, RelId, RelationMatrix, TypeSchema};

/// Target Pearson correlation between the per-document counts of two relation types.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CountCorrelation {
    pub a: String,
    pub b: String,
    pub r: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub docs: usize,
    pub min_entities: usize,
    pub max_entities: usize,
    /// Number of distinct identifier tokens.
    pub vocab_size: usize,
    /// Mean number of instances of each relation type per document.
    pub density: f64,
    /// Standard deviation of the latent per-type count.
    pub count_std: f64,
    /// Write symmetric relations into both `(i, j)` and `(j, i)`.
    pub symmetry: bool,
    pub correlations: Vec<CountCorrelation>,
    /// Probability that a link token names the relation type.
    pub cue_prob: f64,
    /// Probability of attaching an argument to an existing entity of a valid type.
    pub reuse_prob: f64,
    /// Maximum number of filler tokens before each mention.
    pub max_filler: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            docs: 100,
            min_entities: 4,
            max_entities: 12,
            vocab_size: 200,
            density: 0.8,
            count_std: 1.0,
            symmetry: true,
            correlations: Vec::new(),
            cue_prob: 1.0,
            reuse_prob: 0.5,
            max_filler: 2,
        }
    }
}

const FILLER: usize = 20;
const PLACEMENT_ATTEMPTS: usize = 32;

impl SynthConfig {
    fn validate(&self, schema: &TypeSchema) -> Result<Vec<Vec<f64>>, CorpusError> {
        let bad = |m: String| Err(CorpusError::Infeasible(m));
        if self.min_entities == 0 || self.min_entities > self.max_entities {
            return bad(format!(
                "entity range [{}, {}] is empty",
                self.min_entities, self.max_entities
            ));
        }
        if self.vocab_size == 0 {
            return bad("vocab_size must be positive".into());
        }
        if !(self.density >= 0.0 && self.count_std >= 0.0) {
            return bad("density and count_std must be nonnegative".into());
        }
        if !(0.0..=1.0).contains(&self.cue_prob) || !(0.0..=1.0).contains(&self.reuse_prob) {
            return bad("probabilities must lie in [0, 1]".into());
        }
        let k = schema.num_relations();
        let cells = self.max_entities * (self.max_entities - 1);
        let expected: f64 = schema
            .relations()
            .iter()
            .map(|r| if r.symmetric && self.symmetry { 2.0 } else { 1.0 } * self.density)
            .sum();
        if expected > 0.0 && expected > cells as f64 {
            return bad(format!(
                "{expected:.1} expected relation cells per document exceed the {cells} off-diagonal cells of {} entities",
                self.max_entities
            ));
        }
        let mut corr = vec![vec![0.0; k]; k];
        for (i, row) in corr.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        for c in &self.correlations {
            let a = schema.relation_id(&c.a);
            let b = schema.relation_id(&c.b);
            let (Some(a), Some(b)) = (a, b) else {
                return bad(format!("correlation names unknown relation {:?} or {:?}", c.a, c.b));
            };
            if a == b || !(-1.0..=1.0).contains(&c.r) {
                return bad(format!("invalid correlation {} ~ {} = {}", c.a, c.b, c.r));
            }
            corr[a.index()][b.index()] = c.r;
            corr[b.index()][a.index()] = c.r;
        }
        cholesky(&corr).ok_or_else(|| CorpusError::Infeasible("count correlation matrix is not positive definite".into()))
    }
}

/// Lower-triangular factor of a symmetric positive-definite matrix.
fn cholesky(a: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let n = a.len();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
            if i == j {
                let d = a[i][i] - s;
                if d <= 1e-12 {
                    return None;
                }
                l[i][j] = d.sqrt();
            } else {
                l[i][j] = (a[i][j] - s) / l[j][j];
            }
        }
    }
    Some(l)
}

/// Generates `cfg.docs` documents. Document `n` draws from its own ChaCha
/// stream `n` under `seed`, so output is independent of generation order.
pub fn generate_synthetic(schema: &TypeSchema, cfg: &SynthConfig, seed: u64) -> Result<Corpus, CorpusError> {
    let chol = cfg.validate(schema)?;
    let mut dropped = 0;
    let docs = (0..cfg.docs)
        .map(|n| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(n as u64);
            let (doc, d) = generate_document(schema, cfg, &chol, format!("synth-{seed}-{n:05}"), &mut rng);
            dropped += d;
            doc
        })
        .collect();
    if dropped > 0 {
        log::warn!("synthesis dropped {dropped} relation instances that found no free cell");
    }
    Ok(Corpus::new(schema.clone(), docs))
}

#[derive(Clone, Copy)]
enum Pick {
    Existing(usize),
    New(EntityTypeId),
}

struct Instance {
    rel: RelId,
    arg0: usize,
    arg1: usize,
}

fn pick_arg(
    rng: &mut ChaCha8Rng,
    types: &[EntityTypeId],
    valid: &[EntityTypeId],
    exclude: Option<usize>,
    cfg: &SynthConfig,
    pending_new: usize,
) -> Option<Pick> {
    let existing: Vec<usize> = (0..types.len())
        .filter(|&e| Some(e) != exclude && valid.contains(&types[e]))
        .collect();
    let room = types.len() + pending_new < cfg.max_entities;
    if !existing.is_empty() && (!room || rng.random::<f64>() < cfg.reuse_prob) {
        return Some(Pick::Existing(existing[rng.random_range(0..existing.len())]));
    }
    room.then(|| Pick::New(valid[rng.random_range(0..valid.len())]))
}

fn generate_document(
    schema: &TypeSchema,
    cfg: &SynthConfig,
    chol: &[Vec<f64>],
    doc_id: String,
    rng: &mut ChaCha8Rng,
) -> (Document, usize) {
    let k = schema.num_relations();
    let g: Vec<f64> = (0..k).map(|_| rng.sample(StandardNormal)).collect();
    let mut wanted = Vec::new();
    for (r, row) in chol.iter().enumerate() {
        let z: f64 = row.iter().zip(&g).map(|(l, x)| l * x).sum();
        let n = (cfg.density + cfg.count_std * z).round().max(0.0) as usize;
        wanted.extend(std::iter::repeat_n(RelId(r as u16), n));
    }
    wanted.shuffle(rng);

    let target_m = rng.random_range(cfg.min_entities..=cfg.max_entities);
    let mut types: Vec<EntityTypeId> = Vec::new();
    let mut occupied = std::collections::HashSet::new();
    let mut instances = Vec::new();
    let mut dropped = 0;
    for rel in wanted {
        let sym = schema.relation(rel).symmetric && cfg.symmetry;
        let valid0: Vec<_> = schema.valid_args(rel, super::ArgPos::Arg0).iter().copied().collect();
        let valid1: Vec<_> = schema.valid_args(rel, super::ArgPos::Arg1).iter().copied().collect();
        let mut placed = false;
        for _ in 0..PLACEMENT_ATTEMPTS {
            let Some(p0) = pick_arg(rng, &types, &valid0, None, cfg, 0) else {
                break;
            };
            let ex = match p0 {
                Pick::Existing(e) => Some(e),
                Pick::New(_) => None,
            };
            let pending = usize::from(ex.is_none());
            let Some(p1) = pick_arg(rng, &types, &valid1, ex, cfg, pending) else {
                continue;
            };
            if let (Pick::Existing(a), Pick::Existing(b)) = (p0, p1) {
                if occupied.contains(&(a, b)) || (sym && occupied.contains(&(b, a))) {
                    continue;
                }
            }
            let mut materialize = |p: Pick| match p {
                Pick::Existing(e) => e,
                Pick::New(t) => {
                    types.push(t);
                    types.len() - 1
                }
            };
            let a = materialize(p0);
            let b = materialize(p1);
            occupied.insert((a, b));
            if sym {
                occupied.insert((b, a));
            }
            instances.push(Instance { rel, arg0: a, arg1: b });
            placed = true;
            break;
        }
        if !placed {
            dropped += 1;
        }
    }
    let all_types: Vec<EntityTypeId> = schema.entity_type_ids().collect();
    while types.len() < target_m {
        types.push(all_types[rng.random_range(0..all_types.len())]);
    }

    // Shuffle entity order so that arg0 is not systematically mentioned first.
    let m = types.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.shuffle(rng);
    let mut new_id = vec![0; m];
    for (pos, &old) in order.iter().enumerate() {
        new_id[old] = pos;
    }

    let mut gold = RelationMatrix::new(m);
    let mut links: Vec<Vec<String>> = vec![Vec::new(); m];
    for (slot, inst) in instances.iter().enumerate() {
        let (a, b) = (new_id[inst.arg0], new_id[inst.arg1]);
        let label = Label::relation(inst.rel);
        gold.set(a, b, label);
        if schema.relation(inst.rel).symmetric && cfg.symmetry {
            gold.set(b, a, label);
        }
        let cue = if rng.random::<f64>() < cfg.cue_prob {
            schema.relation(inst.rel).name.as_str()
        } else {
            "?"
        };
        links[a].push(format!("r{slot}.a.{cue}"));
        links[b].push(format!("r{slot}.b.{cue}"));
    }

    let mut tokens = Vec::new();
    let mut entities = Vec::with_capacity(m);
    for (pos, &old) in order.iter().enumerate() {
        for _ in 0..rng.random_range(0..=cfg.max_filler) {
            tokens.push(format!("f{}", rng.random_range(0..FILLER)));
        }
        let start = tokens.len();
        tokens.push(format!("[{}]", schema.entity_type_name(types[old])));
        tokens.push(format!("w{}", rng.random_range(0..cfg.vocab_size)));
        entities.push(Entity {
            id: pos,
            start,
            end: tokens.len(),
            etype: types[old],
        });
        tokens.append(&mut links[pos]);
    }
    for _ in 0..rng.random_range(0..=cfg.max_filler) {
        tokens.push(format!("f{}", rng.random_range(0..FILLER)));
    }
    (
        Document {
            doc_id,
            tokens,
            entities,
            gold,
        },
        dropped,
    )
}
