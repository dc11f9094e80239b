//! Small building blocks shared by the learners.

use rand::RngCore;

use super::params::Bound;
use super::tape::{dropout_mask, Tape, Var};
use super::{NumericsError, Scalar};

/// Dropout state for one forward pass. Without an RNG (evaluation, gradient
/// checks) every dropout is the identity.
pub struct Dropout<'r> {
    p: f64,
    rng: Option<&'r mut dyn RngCore>,
}

impl<'r> Dropout<'r> {
    pub fn train(p: f64, rng: &'r mut dyn RngCore) -> Self {
        Self { p, rng: Some(rng) }
    }

    pub fn off() -> Self {
        Self { p: 0.0, rng: None }
    }

    pub fn active(&self) -> bool {
        self.p > 0.0 && self.rng.is_some()
    }

    pub fn apply<T: Scalar>(&mut self, tape: &mut Tape<T>, x: Var) -> Result<Var, NumericsError> {
        match &mut self.rng {
            Some(rng) if self.p > 0.0 => {
                let mask = dropout_mask(tape.value(x).len(), self.p, &mut **rng);
                tape.dropout_with_mask(x, mask)
            }
            _ => Ok(x),
        }
    }

    /// Mask for `n` attention weights, or `None` when inactive.
    pub fn mask<T: Scalar>(&mut self, n: usize) -> Option<Vec<T>> {
        match &mut self.rng {
            Some(rng) if self.p > 0.0 => Some(dropout_mask(n, self.p, &mut **rng)),
            _ => None,
        }
    }
}

/// `x · W + b` with parameters `{prefix}.w` and `{prefix}.b`.
pub fn linear<T: Scalar>(tape: &mut Tape<T>, params: &Bound, prefix: &str, x: Var) -> Result<Var, NumericsError> {
    let h = tape.matmul(x, params.var(&format!("{prefix}.w"))?)?;
    tape.add_bias(h, params.var(&format!("{prefix}.b"))?)
}

/// Two-layer ReLU feed-forward block `{prefix}.ffn1` → `{prefix}.ffn2`.
pub fn ffn<T: Scalar>(tape: &mut Tape<T>, params: &Bound, prefix: &str, x: Var) -> Result<Var, NumericsError> {
    let h = linear(tape, params, &format!("{prefix}.ffn1"), x)?;
    let h = tape.relu(h);
    linear(tape, params, &format!("{prefix}.ffn2"), h)
}
