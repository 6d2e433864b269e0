//! GRU, TextCNN and MLP layers over [`crate::numcore`].
//!
//! Layers hold [`ParamId`]s only; the numbers live in a [`ParamStore`].
//! All forward passes are batched: sequences arrive as a `[B×L×d]` tensor
//! plus one valid length per row.

mod gru;
mod mlp;
mod textcnn;

pub use gru::Gru;
pub use mlp::Mlp;
pub use textcnn::TextCnn;

use rand::Rng;

use crate::error::{Error, Result};
use crate::numcore::{ParamId, ParamStore, Real, Tape, Tensor, Var};

/// Glorot-uniform weights: `U(−√(6/(fan_in+fan_out)), +√(6/(fan_in+fan_out)))`.
pub fn glorot<S: Real, R: Rng>(rng: &mut R, shape: &[usize], fan_in: usize, fan_out: usize) -> Tensor<S> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| S::lit(rng.random_range(-bound..bound))).collect();
    Tensor::new(shape.to_vec(), data).expect("shape product")
}

pub(crate) fn add_weight<S: Real, R: Rng>(
    store: &mut ParamStore<S>,
    name: String,
    rng: &mut R,
    shape: &[usize],
    fan_in: usize,
    fan_out: usize,
) -> ParamId {
    store.add(name, glorot(rng, shape, fan_in, fan_out))
}

/// Finds a named parameter and checks its shape.
pub(crate) fn lookup<S: Real>(store: &ParamStore<S>, name: &str, shape: &[usize]) -> Result<ParamId> {
    let id = store
        .find(name)
        .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))?;
    if store.get(id).shape() != shape {
        return Err(Error::Checkpoint(format!(
            "parameter {name} has shape {:?}, expected {shape:?}",
            store.get(id).shape()
        )));
    }
    Ok(id)
}

/// Padded batch of token-embedding sequences.
#[derive(Debug, Clone)]
pub struct SeqBatch<S> {
    /// `[B×L×d]`, zero beyond each row's valid length.
    pub tokens: Tensor<S>,
    /// Valid length of each row.
    pub lens: Vec<usize>,
}

impl<S: Real> SeqBatch<S> {
    /// Packs row-major `len×dim` sequences, padding with zero vectors to the
    /// longest sequence or to `min_len`, whichever is larger.
    pub fn pack<'a, I>(seqs: I, dim: usize, min_len: usize) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [f32]>,
    {
        let seqs: Vec<&[f32]> = seqs.into_iter().collect();
        if seqs.is_empty() {
            return Err(Error::input("empty batch"));
        }
        let mut lens = Vec::with_capacity(seqs.len());
        for s in &seqs {
            if dim == 0 || s.len() % dim != 0 {
                return Err(Error::Dimension {
                    op: "pack",
                    lhs: vec![s.len()],
                    rhs: vec![dim],
                });
            }
            lens.push(s.len() / dim);
        }
        let width = lens.iter().copied().max().unwrap_or(0).max(min_len);
        let mut data = vec![S::zero(); seqs.len() * width * dim];
        for (b, s) in seqs.iter().enumerate() {
            for (dst, &x) in data[b * width * dim..].iter_mut().zip(s.iter()) {
                *dst = S::lit(x as f64);
            }
        }
        Ok(SeqBatch {
            tokens: Tensor::new(vec![seqs.len(), width, dim], data)?,
            lens,
        })
    }

    /// A single sequence given as a `[L×d]` tensor.
    pub fn single(seq: &Tensor<S>) -> Result<Self> {
        if seq.rank() != 2 {
            return Err(Error::Dimension {
                op: "single",
                lhs: seq.shape().to_vec(),
                rhs: vec![],
            });
        }
        let (l, d) = (seq.shape()[0], seq.shape()[1]);
        Ok(SeqBatch {
            tokens: seq.clone().reshape(&[1, l, d])?,
            lens: vec![l],
        })
    }

    pub fn batch_size(&self) -> usize {
        self.lens.len()
    }

    pub fn width(&self) -> usize {
        self.tokens.shape()[1]
    }

    pub fn dim(&self) -> usize {
        self.tokens.shape()[2]
    }

    /// Per-row 0/1 mask over the padded width.
    pub fn mask(&self) -> Vec<Vec<bool>> {
        let w = self.width();
        self.lens.iter().map(|&l| (0..w).map(|t| t < l).collect()).collect()
    }

    pub fn to_tape(&self, tape: &mut Tape<S>) -> Var {
        tape.constant(self.tokens.clone())
    }
}
