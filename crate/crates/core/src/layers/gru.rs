use rand::Rng;

use super::{add_weight, lookup};
use crate::error::{Error, Result};
use crate::numcore::{Binder, ParamId, ParamStore, Real, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq)]
struct Gate {
    weight: ParamId,
    bias: ParamId,
}

/// Single-layer GRU returning the final hidden state.
///
/// Each gate acts on the concatenation `[x; h]` with a `(d+H)×H` weight:
///
/// ```text
/// z = σ([x; h]·W_z + b_z)
/// r = σ([x; h]·W_r + b_r)
/// n = tanh([x; r⊙h]·W_n + b_n)
/// h' = h + z⊙(n − h)
/// ```
///
/// Rows whose valid length has been reached keep their hidden state, so
/// trailing padding never changes the result.
#[derive(Debug, Clone, PartialEq)]
pub struct Gru {
    input_dim: usize,
    hidden_dim: usize,
    update: Gate,
    reset: Gate,
    candidate: Gate,
}

const GATES: [&str; 3] = ["update", "reset", "candidate"];

impl Gru {
    pub fn new<S: Real, R: Rng>(
        store: &mut ParamStore<S>,
        prefix: &str,
        input_dim: usize,
        hidden_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if input_dim == 0 || hidden_dim == 0 {
            return Err(Error::input(format!(
                "{prefix}: GRU dims must be positive (d={input_dim}, H={hidden_dim})"
            )));
        }
        let k = input_dim + hidden_dim;
        let mut gates = GATES.iter().map(|g| Gate {
            weight: add_weight(store, format!("{prefix}.{g}.weight"), rng, &[k, hidden_dim], k, hidden_dim),
            bias: store.add(format!("{prefix}.{g}.bias"), Tensor::zeros(&[hidden_dim])),
        });
        let (update, reset, candidate) = (gates.next().unwrap(), gates.next().unwrap(), gates.next().unwrap());
        Ok(Gru {
            input_dim,
            hidden_dim,
            update,
            reset,
            candidate,
        })
    }

    pub fn attach<S: Real>(store: &ParamStore<S>, prefix: &str, input_dim: usize, hidden_dim: usize) -> Result<Self> {
        let k = input_dim + hidden_dim;
        let gate = |g: &str| -> Result<Gate> {
            Ok(Gate {
                weight: lookup(store, &format!("{prefix}.{g}.weight"), &[k, hidden_dim])?,
                bias: lookup(store, &format!("{prefix}.{g}.bias"), &[hidden_dim])?,
            })
        };
        Ok(Gru {
            input_dim,
            hidden_dim,
            update: gate(GATES[0])?,
            reset: gate(GATES[1])?,
            candidate: gate(GATES[2])?,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    /// `(weight, bias)` of the update, reset and candidate gates.
    pub fn gate_params(&self) -> [(ParamId, ParamId); 3] {
        [self.update, self.reset, self.candidate].map(|g| (g.weight, g.bias))
    }

    /// Runs the recurrence over `seq: [B×L×d]` and returns `[B×H]`.
    pub fn forward<S: Real>(
        &self,
        tape: &mut Tape<S>,
        params: &mut Binder<S>,
        seq: Var,
        lens: &[usize],
    ) -> Result<Var> {
        let shape = tape.value(seq).shape().to_vec();
        if shape.len() != 3 || shape[2] != self.input_dim || shape[0] != lens.len() {
            return Err(Error::Dimension {
                op: "gru",
                lhs: shape,
                rhs: vec![lens.len(), self.input_dim],
            });
        }
        if lens.iter().any(|&l| l == 0 || l > shape[1]) {
            return Err(Error::input("GRU input has an empty or over-long sequence"));
        }
        let steps = lens.iter().copied().max().unwrap_or(0);
        let batch = lens.len();
        let mut h = tape.constant(Tensor::zeros(&[batch, self.hidden_dim]));
        let bind = |tape: &mut Tape<S>, params: &mut Binder<S>, g: Gate| (params.bind(tape, g.weight), params.bind(tape, g.bias));
        let (wz, bz) = bind(tape, params, self.update);
        let (wr, br) = bind(tape, params, self.reset);
        let (wn, bn) = bind(tape, params, self.candidate);
        for t in 0..steps {
            let x = tape.select_step(seq, t)?;
            let xh = tape.concat(&[x, h])?;
            let z = tape.affine(xh, wz, bz)?;
            let z = tape.sigmoid(z);
            let r = tape.affine(xh, wr, br)?;
            let r = tape.sigmoid(r);
            let rh = tape.mul(r, h)?;
            let xrh = tape.concat(&[x, rh])?;
            let n = tape.affine(xrh, wn, bn)?;
            let n = tape.tanh(n);
            let delta = tape.sub(n, h)?;
            let step = tape.mul(z, delta)?;
            let next = tape.add(h, step)?;
            h = if lens.iter().all(|&l| l > t) {
                next
            } else {
                let active: Vec<bool> = lens.iter().map(|&l| l > t).collect();
                tape.select_rows(&active, next, h)?
            };
        }
        Ok(h)
    }
}
