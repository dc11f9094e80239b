//! Relation-matrix transformer: full self-attention over the `M²` relation
//! cells with learned row and column encodings.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::layers::{linear, Dropout};
use crate::numerics::params::Bound;
use crate::numerics::{init, NumericsError, ParamStore, Scalar, Tape, Var};

#[derive(Debug, Error)]
pub enum MultirorError {
    #[error("document has {m} entities, more than the transformer's max_m = {max_m}")]
    TooManyEntities { m: usize, max_m: usize },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MtConfig {
    pub layers: usize,
    pub heads: usize,
    pub ffn_hidden: usize,
    pub max_m: usize,
    pub ln_eps: f64,
}

impl Default for MtConfig {
    fn default() -> Self {
        Self {
            layers: 4,
            heads: 8,
            ffn_hidden: 4096,
            max_m: 32,
            ln_eps: 1e-5,
        }
    }
}

pub fn init_params<T: Scalar, R: Rng + ?Sized>(store: &mut ParamStore<T>, cfg: &MtConfig, d: usize, rng: &mut R) {
    store.insert("mt.row", init::normal(&[cfg.max_m, d], 0.02, rng));
    store.insert("mt.col", init::normal(&[cfg.max_m, d], 0.02, rng));
    for l in 0..cfg.layers {
        let p = format!("mt.layer{l}");
        for ln in ["ln1", "ln2"] {
            store.insert(format!("{p}.{ln}.g"), init::ones(&[d]));
            store.insert(format!("{p}.{ln}.b"), init::zeros(&[d]));
        }
        for w in ["q", "k", "v", "o"] {
            store.insert(format!("{p}.attn.w{w}"), init::xavier_uniform(d, d, rng));
            store.insert(format!("{p}.attn.b{w}"), init::zeros(&[d]));
        }
        store.insert(format!("{p}.ffn1.w"), init::xavier_uniform(d, cfg.ffn_hidden, rng));
        store.insert(format!("{p}.ffn1.b"), init::zeros(&[cfg.ffn_hidden]));
        store.insert(format!("{p}.ffn2.w"), init::xavier_uniform(cfg.ffn_hidden, d, rng));
        store.insert(format!("{p}.ffn2.b"), init::zeros(&[d]));
    }
    store.insert("mt.ln_f.g", init::ones(&[d]));
    store.insert("mt.ln_f.b", init::zeros(&[d]));
    store.insert("mt.out.w", init::xavier_uniform(d, d, rng));
    store.insert("mt.out.b", init::zeros(&[d]));
}

/// `out[i·M + j] = rels[i·M + j] + row[i] + col[j]`.
pub fn add_position<T: Scalar>(
    tape: &mut Tape<T>,
    params: &Bound,
    cfg: &MtConfig,
    rels: Var,
    m: usize,
) -> Result<Var, MultirorError> {
    if m > cfg.max_m {
        return Err(MultirorError::TooManyEntities { m, max_m: cfg.max_m });
    }
    let rows: Vec<usize> = (0..m * m).map(|c| c / m).collect();
    let cols: Vec<usize> = (0..m * m).map(|c| c % m).collect();
    let r = tape.gather_rows(params.var("mt.row")?, &rows)?;
    let c = tape.gather_rows(params.var("mt.col")?, &cols)?;
    let x = tape.add(rels, r)?;
    Ok(tape.add(x, c)?)
}

fn layer_norm<T: Scalar>(
    tape: &mut Tape<T>,
    params: &Bound,
    prefix: &str,
    x: Var,
    eps: f64,
) -> Result<Var, NumericsError> {
    let g = params.var(&format!("{prefix}.g"))?;
    let b = params.var(&format!("{prefix}.b"))?;
    tape.layer_norm(x, g, b, eps)
}

/// One pre-norm encoder block:
/// `x + Drop(MHA(LN1 x))`, then `x + Drop(FFN(LN2 x))`.
pub fn encoder_layer<T: Scalar>(
    tape: &mut Tape<T>,
    params: &Bound,
    cfg: &MtConfig,
    layer: usize,
    x: Var,
    dropout: &mut Dropout,
) -> Result<Var, NumericsError> {
    let p = format!("mt.layer{layer}");
    let l = tape.shape(x)[0];
    let h = layer_norm(tape, params, &format!("{p}.ln1"), x, cfg.ln_eps)?;
    let proj = |tape: &mut Tape<T>, w: &str| -> Result<Var, NumericsError> {
        let h2 = tape.matmul(h, params.var(&format!("{p}.attn.w{w}"))?)?;
        tape.add_bias(h2, params.var(&format!("{p}.attn.b{w}"))?)
    };
    let q = proj(tape, "q")?;
    let k = proj(tape, "k")?;
    let v = proj(tape, "v")?;
    let mask = dropout.mask(cfg.heads * l * l);
    let a = tape.self_attention(q, k, v, cfg.heads, mask)?;
    let o = tape.matmul(a, params.var(&format!("{p}.attn.wo"))?)?;
    let o = tape.add_bias(o, params.var(&format!("{p}.attn.bo"))?)?;
    let o = dropout.apply(tape, o)?;
    let x = tape.add(x, o)?;
    let h = layer_norm(tape, params, &format!("{p}.ln2"), x, cfg.ln_eps)?;
    let f = crate::numerics::layers::ffn(tape, params, &p, h)?;
    let f = dropout.apply(tape, f)?;
    tape.add(x, f)
}

/// Transforms all `M²` cells (row-major, diagonal included) and returns
/// `M² × d`: position encodings, encoder blocks, final layer norm and the
/// `mt.out` projection.
pub fn run_multiror<T: Scalar>(
    tape: &mut Tape<T>,
    params: &Bound,
    cfg: &MtConfig,
    rels: Var,
    m: usize,
    dropout: &mut Dropout,
) -> Result<Var, MultirorError> {
    let mut x = add_position(tape, params, cfg, rels, m)?;
    for l in 0..cfg.layers {
        x = encoder_layer(tape, params, cfg, l, x, dropout)?;
    }
    let x = layer_norm(tape, params, "mt.ln_f", x, cfg.ln_eps)?;
    Ok(linear(tape, params, "mt.out", x)?)
}
