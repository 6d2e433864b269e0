use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{DomainId, FuzzyDomainLabel, NUM_DOMAINS};
use crate::checkpoint::{Checkpoint, CheckpointHeader, ModelKind};
use crate::config::ModelDims;
use crate::data::EmbeddingSequence;
use crate::error::{Error, Result};
use crate::layers::{Gru, Mlp, SeqBatch};
use crate::numcore::{Binder, ParamStore, Real, Tape, Var};

/// Rows per forward pass during batched inference.
pub(crate) const INFER_CHUNK: usize = 64;

/// GRU encoder, MLP head and softmax over the nine domains.
#[derive(Clone)]
pub struct MembershipModel<S> {
    store: ParamStore<S>,
    gru: Gru,
    head: Mlp,
    dims: ModelDims,
    frozen: bool,
}

impl<S: Real> std::fmt::Debug for MembershipModel<S> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MembershipModel")
            .field("dim", &self.dims.dim)
            .field("hidden", &self.dims.gru_hidden)
            .field("params", &self.store.num_elements())
            .field("frozen", &self.frozen)
            .finish()
    }
}

fn head_dims(dims: &ModelDims) -> [usize; 3] {
    [dims.gru_hidden, dims.membership_hidden, NUM_DOMAINS]
}

impl<S: Real> MembershipModel<S> {
    /// Fresh Glorot-initialized, trainable model.
    pub fn new(dims: &ModelDims, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        let mut store = ParamStore::new();
        let gru = Gru::new(&mut store, "gru", dims.dim, dims.gru_hidden, &mut rng)?;
        let head = Mlp::new(&mut store, "head", &head_dims(dims), &mut rng)?;
        Ok(MembershipModel {
            store,
            gru,
            head,
            dims: dims.clone(),
            frozen: false,
        })
    }

    pub fn dims(&self) -> &ModelDims {
        &self.dims
    }

    pub fn store(&self) -> &ParamStore<S> {
        &self.store
    }

    /// Mutable parameters; refused once frozen.
    pub fn store_mut(&mut self) -> Result<&mut ParamStore<S>> {
        if self.frozen {
            return Err(Error::Frozen("membership parameters are fixed".into()));
        }
        Ok(&mut self.store)
    }

    pub fn gru(&self) -> &Gru {
        &self.gru
    }

    pub fn head(&self) -> &Mlp {
        &self.head
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    /// Domain probabilities `[B×9]` for a padded batch.
    pub fn forward(&self, tape: &mut Tape<S>, params: &mut Binder<S>, seq: Var, lens: &[usize]) -> Result<Var> {
        let h = self.gru.forward(tape, params, seq, lens)?;
        let logits = self.head.forward(tape, params, h)?;
        tape.softmax(logits)
    }

    /// Raw probabilities for a batch, one row per sequence.
    pub(crate) fn probs(&self, batch: &SeqBatch<S>) -> Result<Vec<[f64; NUM_DOMAINS]>> {
        let mut tape = Tape::new();
        let mut params = Binder::frozen(&self.store);
        let seq = batch.to_tape(&mut tape);
        let p = self.forward(&mut tape, &mut params, seq, &batch.lens)?;
        Ok(tape
            .value(p)
            .data()
            .chunks_exact(NUM_DOMAINS)
            .map(|row| std::array::from_fn(|k| row[k].to_f64_lossy()))
            .collect())
    }

    pub fn infer(&self, seq: &EmbeddingSequence) -> Result<FuzzyDomainLabel> {
        Ok(self.infer_batch(&[seq])?.remove(0))
    }

    pub fn infer_batch(&self, seqs: &[&EmbeddingSequence]) -> Result<Vec<FuzzyDomainLabel>> {
        let mut out = Vec::with_capacity(seqs.len());
        for chunk in seqs.chunks(INFER_CHUNK) {
            if let Some(bad) = chunk.iter().find(|s| s.dim() != self.dims.dim) {
                return Err(Error::Dimension {
                    op: "membership input",
                    lhs: vec![bad.dim()],
                    rhs: vec![self.dims.dim],
                });
            }
            let batch = SeqBatch::pack(chunk.iter().map(|s| s.as_slice()), self.dims.dim, 0)?;
            for row in self.probs(&batch)? {
                out.push(to_label(row)?);
            }
        }
        Ok(out)
    }

    pub fn cast<T: Real>(&self) -> MembershipModel<T> {
        MembershipModel {
            store: self.store.cast(),
            gru: self.gru.clone(),
            head: self.head.clone(),
            dims: self.dims.clone(),
            frozen: self.frozen,
        }
    }

    /// Rebuilds a model from a parameter store with matching names.
    pub fn from_store(dims: &ModelDims, store: ParamStore<S>, frozen: bool) -> Result<Self> {
        let gru = Gru::attach(&store, "gru", dims.dim, dims.gru_hidden)?;
        let head = Mlp::attach(&store, "head", &head_dims(dims))?;
        Ok(MembershipModel {
            store,
            gru,
            head,
            dims: dims.clone(),
            frozen,
        })
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ckpt = Checkpoint {
            header: CheckpointHeader::new(ModelKind::Membership, None, &self.dims, false),
            blobs: Vec::new(),
        };
        ckpt.push_store("", &self.store);
        ckpt
    }

    /// Loaded models are always frozen.
    pub fn from_checkpoint(ckpt: &Checkpoint, prefix: &str) -> Result<Self> {
        let mut model = Self::new(&ckpt.header.dims, 0)?;
        ckpt.fill_store(prefix, &mut model.store)?;
        model.frozen = true;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().write(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ckpt = Checkpoint::read(path)?;
        if ckpt.header.kind != ModelKind::Membership {
            return Err(Error::Checkpoint(format!(
                "{} is a detector checkpoint, expected a membership model",
                path.display()
            )));
        }
        Self::from_checkpoint(&ckpt, "")
    }
}

/// Renormalizes in f64 so the simplex check holds at 32-bit precision too.
pub(crate) fn to_label(row: [f64; NUM_DOMAINS]) -> Result<FuzzyDomainLabel> {
    let total: f64 = row.iter().sum();
    if !(total.is_finite() && total > 0.0) {
        return Err(Error::Verification(format!("membership output is not finite: {row:?}")));
    }
    FuzzyDomainLabel::new(row.map(|g| g / total))
}

/// `g = softmax(MLP(GRU(W)))`.
pub fn membership_infer<S: Real>(seq: &EmbeddingSequence, model: &MembershipModel<S>) -> Result<FuzzyDomainLabel> {
    model.infer(seq)
}

/// Domain with the largest membership grade.
pub fn hard_domain<S: Real>(seq: &EmbeddingSequence, model: &MembershipModel<S>) -> Result<DomainId> {
    Ok(model.infer(seq)?.argmax())
}
