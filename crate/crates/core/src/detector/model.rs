use std::fmt;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, CheckpointHeader, ModelKind};
use crate::config::ModelDims;
use crate::data::{EmbeddingSequence, NewsRecord};
use crate::error::{Error, Result};
use crate::layers::{glorot, Mlp, SeqBatch, TextCnn};
use crate::membership::{DomainId, FuzzyDomainLabel, MembershipModel, INFER_CHUNK, NUM_DOMAINS};
use crate::numcore::{Binder, ParamId, ParamStore, Real, Tape, Tensor, Var};

/// Name prefix of the embedded membership parameters in a detector
/// checkpoint.
pub const MEMBERSHIP_PREFIX: &str = "membership.";

/// What the gate sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectorMode {
    /// Fuzzy domain label from the membership function.
    #[default]
    Fuzzy,
    /// Learned vector looked up by a single domain label (MDFEND-style).
    #[serde(alias = "one_hot_baseline")]
    Baseline,
    /// No gate; every expert weighs `1/T`.
    Uniform,
}

impl DetectorMode {
    pub const ALL: [DetectorMode; 3] = [DetectorMode::Fuzzy, DetectorMode::Baseline, DetectorMode::Uniform];

    pub fn label(self) -> &'static str {
        match self {
            DetectorMode::Fuzzy => "fuzzy gate",
            DetectorMode::Baseline => "MDFEND-style one-hot gate",
            DetectorMode::Uniform => "uniform gate (ablation)",
        }
    }
}

impl fmt::Display for DetectorMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DetectorMode::Fuzzy => "fuzzy",
            DetectorMode::Baseline => "baseline",
            DetectorMode::Uniform => "uniform",
        })
    }
}

impl std::str::FromStr for DetectorMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fuzzy" => Ok(DetectorMode::Fuzzy),
            "baseline" | "one_hot_baseline" | "one-hot" => Ok(DetectorMode::Baseline),
            "uniform" => Ok(DetectorMode::Uniform),
            other => Err(Error::usage(format!("unknown mode {other:?} (fuzzy, baseline, uniform)"))),
        }
    }
}

/// Expert weights on the `T`-simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct GateWeights {
    alpha: Vec<f64>,
}

impl GateWeights {
    pub fn new(alpha: Vec<f64>) -> Result<Self> {
        let total: f64 = alpha.iter().sum();
        if alpha.is_empty() || alpha.iter().any(|a| !(0.0..=1.0).contains(a)) || (total - 1.0).abs() > 1e-6 {
            return Err(Error::input(format!("not a gate weight vector: {alpha:?}")));
        }
        Ok(GateWeights { alpha })
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.alpha
    }

    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }
}

/// Per-row gate input for a batch.
#[derive(Debug, Clone)]
pub enum GateInput<'a> {
    /// One fuzzy label per row.
    Fuzzy(&'a [FuzzyDomainLabel]),
    /// One domain per row, looked up in the embedding table.
    Domains(&'a [DomainId]),
    /// Uniform weights.
    None,
}

/// Tape handles of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardVars {
    /// `[B]` fake probabilities.
    pub prob: Var,
    /// `[B×T]` expert weights.
    pub alpha: Var,
    /// `T` expert outputs, each `[B×E]`.
    pub experts: Vec<Var>,
    /// `[B×E]` aggregated features.
    pub features: Var,
}

/// Output of [`DetectorModel::predict`].
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    /// Probability that the item is fake.
    pub prob: f64,
    /// Fuzzy domain label, when a membership model was consulted.
    pub fuzzy: Option<FuzzyDomainLabel>,
    /// Single domain fed to the baseline gate.
    pub domain: Option<DomainId>,
    pub alpha: GateWeights,
}

/// Where single domain labels come from at prediction time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainSource {
    /// The record's own label.
    Gold,
    /// Argmax of the membership function.
    Membership,
}

/// Expert bank, gate and classifier, plus a frozen membership function.
#[derive(Clone)]
pub struct DetectorModel<S> {
    store: ParamStore<S>,
    experts: Vec<TextCnn>,
    gate: Option<Mlp>,
    classifier: Mlp,
    domain_embedding: Option<ParamId>,
    membership: Option<MembershipModel<S>>,
    mode: DetectorMode,
    dims: ModelDims,
}

impl<S: Real> fmt::Debug for DetectorModel<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DetectorModel")
            .field("mode", &self.mode)
            .field("experts", &self.experts.len())
            .field("params", &self.store.num_elements())
            .field("membership", &self.membership)
            .finish()
    }
}

impl<S: Real> DetectorModel<S> {
    /// Fresh model. Fuzzy mode needs a frozen membership model; the other
    /// modes keep one if given, for transfer evaluation.
    pub fn new(dims: &ModelDims, mode: DetectorMode, membership: Option<MembershipModel<S>>, seed: u64) -> Result<Self> {
        if let Some(m) = &membership {
            if !m.is_frozen() {
                return Err(Error::Frozen("the membership model must be frozen before detector training".into()));
            }
            if m.dims().dim != dims.dim {
                return Err(Error::Dimension {
                    op: "membership dim",
                    lhs: vec![m.dims().dim],
                    rhs: vec![dims.dim],
                });
            }
        } else if mode == DetectorMode::Fuzzy {
            return Err(Error::usage("fuzzy mode needs a membership checkpoint (train-membership first)"));
        }
        if dims.experts == 0 {
            return Err(Error::input("at least one expert is required"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(2);
        let mut store = ParamStore::new();
        let experts = (0..dims.experts)
            .map(|i| {
                TextCnn::new(
                    &mut store,
                    &format!("expert{i}"),
                    dims.dim,
                    &dims.widths,
                    dims.channels,
                    dims.expert_dim,
                    &mut rng,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let gate = match mode {
            DetectorMode::Uniform => None,
            _ => Some(Mlp::new(&mut store, "gate", &[NUM_DOMAINS, dims.gate_hidden, dims.experts], &mut rng)?),
        };
        let classifier = Mlp::new(&mut store, "classifier", &[dims.expert_dim, dims.classifier_hidden, 1], &mut rng)?;
        let domain_embedding = (mode == DetectorMode::Baseline).then(|| {
            store.add(
                "domain_embedding",
                glorot(&mut rng, &[NUM_DOMAINS, NUM_DOMAINS], NUM_DOMAINS, NUM_DOMAINS),
            )
        });
        Ok(DetectorModel {
            store,
            experts,
            gate,
            classifier,
            domain_embedding,
            membership,
            mode,
            dims: dims.clone(),
        })
    }

    pub fn mode(&self) -> DetectorMode {
        self.mode
    }

    pub fn dims(&self) -> &ModelDims {
        &self.dims
    }

    /// Trainable parameters only; the membership model lives apart.
    pub fn store(&self) -> &ParamStore<S> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<S> {
        &mut self.store
    }

    pub fn experts(&self) -> &[TextCnn] {
        &self.experts
    }

    pub fn gate(&self) -> Option<&Mlp> {
        self.gate.as_ref()
    }

    pub fn classifier(&self) -> &Mlp {
        &self.classifier
    }

    pub fn domain_embedding(&self) -> Option<ParamId> {
        self.domain_embedding
    }

    pub fn membership(&self) -> Option<&MembershipModel<S>> {
        self.membership.as_ref()
    }

    /// Swaps in a (frozen) membership model, e.g. for transfer runs of a
    /// baseline that was trained without one.
    pub fn set_membership(&mut self, m: MembershipModel<S>) -> Result<()> {
        if !m.is_frozen() {
            return Err(Error::Frozen("membership model must be frozen".into()));
        }
        self.membership = Some(m);
        Ok(())
    }

    /// Shortest padded length the expert bank accepts.
    pub fn min_len(&self) -> usize {
        self.dims.widths.last().copied().unwrap_or(1)
    }

    /// Valid lengths seen by the convolutions: short items count as padded
    /// to the largest window.
    pub fn conv_lens(&self, lens: &[usize]) -> Vec<usize> {
        lens.iter().map(|&l| l.max(self.min_len())).collect()
    }

    /// Gate weights `[B×T]` for a batch of gate inputs.
    pub fn gate_forward(&self, tape: &mut Tape<S>, params: &mut Binder<S>, input: &GateInput, rows: usize) -> Result<Var> {
        let t = self.experts.len();
        let x = match (self.mode, input) {
            (DetectorMode::Uniform, _) => {
                return Ok(tape.constant(Tensor::full(&[rows, t], S::one() / S::lit(t as f64))));
            }
            (DetectorMode::Fuzzy, GateInput::Fuzzy(g)) => {
                let data: Vec<S> = g.iter().flat_map(|l| l.grades().iter().map(|&x| S::lit(x))).collect();
                tape.constant(Tensor::new(vec![g.len(), NUM_DOMAINS], data)?)
            }
            (DetectorMode::Baseline, GateInput::Domains(d)) => {
                let table = params.bind(tape, self.domain_embedding.expect("baseline has a table"));
                let idx: Vec<usize> = d.iter().map(|d| d.index()).collect();
                tape.gather_rows(table, &idx)?
            }
            (mode, _) => {
                return Err(Error::usage(format!("gate input does not match {mode} mode")));
            }
        };
        if tape.value(x).shape()[0] != rows {
            return Err(Error::Dimension {
                op: "gate input rows",
                lhs: tape.value(x).shape().to_vec(),
                rhs: vec![rows],
            });
        }
        let logits = self.gate.as_ref().expect("gated mode").forward(tape, params, x)?;
        tape.softmax(logits)
    }

    /// Full pipeline on a padded batch. `seqs` must be at least
    /// [`DetectorModel::min_len`] wide.
    pub fn forward(
        &self,
        tape: &mut Tape<S>,
        params: &mut Binder<S>,
        seqs: &SeqBatch<S>,
        input: &GateInput,
    ) -> Result<ForwardVars> {
        let rows = seqs.batch_size();
        let lens = self.conv_lens(&seqs.lens);
        if seqs.width() < self.min_len() {
            return Err(Error::SequenceTooShort {
                len: seqs.width(),
                width: self.min_len(),
            });
        }
        let seq = seqs.to_tape(tape);
        let experts = self
            .experts
            .iter()
            .map(|e| e.forward(tape, params, seq, &lens))
            .collect::<Result<Vec<_>>>()?;
        let alpha = self.gate_forward(tape, params, input, rows)?;
        let features = tape.weighted_sum(alpha, &experts)?;
        let logit = self.classifier.forward(tape, params, features)?;
        let prob = tape.sigmoid(logit);
        let prob = tape.reshape(prob, &[rows])?;
        Ok(ForwardVars {
            prob,
            alpha,
            experts,
            features,
        })
    }

    fn require_membership(&self) -> Result<&MembershipModel<S>> {
        self.membership
            .as_ref()
            .ok_or_else(|| Error::usage("this detector carries no membership model"))
    }

    /// Predictions for many records, evaluated in chunks.
    pub fn predict_records(&self, records: &[&NewsRecord], source: DomainSource) -> Result<Vec<Prediction>> {
        let mut out = Vec::with_capacity(records.len());
        for chunk in records.chunks(INFER_CHUNK) {
            let seqs = chunk.iter().map(|r| r.embeddings()).collect::<Result<Vec<_>>>()?;
            let gold: Vec<Option<DomainId>> = chunk.iter().map(|r| r.domain).collect();
            out.extend(self.predict_chunk(&seqs, &gold, source, &chunk.iter().map(|r| r.id.as_str()).collect::<Vec<_>>())?);
        }
        Ok(out)
    }

    /// Single-item pipeline.
    pub fn predict(&self, seq: &EmbeddingSequence, domain: Option<DomainId>) -> Result<Prediction> {
        let source = if self.mode == DetectorMode::Baseline && domain.is_none() {
            DomainSource::Membership
        } else {
            DomainSource::Gold
        };
        if source == DomainSource::Membership && self.membership.is_none() {
            return Err(Error::input("baseline mode needs a domain label for this item"));
        }
        Ok(self.predict_chunk(&[seq], &[domain], source, &["input"])?.remove(0))
    }

    fn predict_chunk(
        &self,
        seqs: &[&EmbeddingSequence],
        gold: &[Option<DomainId>],
        source: DomainSource,
        ids: &[&str],
    ) -> Result<Vec<Prediction>> {
        if let Some(bad) = seqs.iter().find(|s| s.dim() != self.dims.dim) {
            return Err(Error::Dimension {
                op: "detector input",
                lhs: vec![bad.dim()],
                rhs: vec![self.dims.dim],
            });
        }
        let batch = SeqBatch::<S>::pack(seqs.iter().map(|s| s.as_slice()), self.dims.dim, self.min_len())?;
        let needs_fuzzy = self.mode == DetectorMode::Fuzzy
            || (self.mode == DetectorMode::Baseline && source == DomainSource::Membership)
            || self.membership.is_some();
        let fuzzy: Option<Vec<FuzzyDomainLabel>> = if needs_fuzzy {
            let m = self.require_membership()?;
            Some(
                m.probs(&batch)?
                    .into_iter()
                    .map(crate::membership::model_label)
                    .collect::<Result<_>>()?,
            )
        } else {
            None
        };
        let domains: Option<Vec<DomainId>> = match (self.mode, source) {
            (DetectorMode::Baseline, DomainSource::Gold) => Some(
                gold.iter()
                    .zip(ids)
                    .map(|(d, id)| d.ok_or_else(|| Error::input(format!("record {id} has no domain label"))))
                    .collect::<Result<_>>()?,
            ),
            (_, DomainSource::Membership) => fuzzy.as_ref().map(|g| g.iter().map(|l| l.argmax()).collect()),
            _ => gold.iter().copied().collect(),
        };
        let input = match self.mode {
            DetectorMode::Fuzzy => GateInput::Fuzzy(fuzzy.as_deref().expect("fuzzy mode")),
            DetectorMode::Baseline => GateInput::Domains(domains.as_deref().expect("baseline has domains")),
            DetectorMode::Uniform => GateInput::None,
        };
        let mut tape = Tape::new();
        let mut params = Binder::frozen(&self.store);
        let vars = self.forward(&mut tape, &mut params, &batch, &input)?;
        let probs = tape.value(vars.prob).data();
        let t = self.experts.len();
        let alpha = tape.value(vars.alpha).data();
        (0..seqs.len())
            .map(|i| {
                let a: Vec<f64> = alpha[i * t..(i + 1) * t].iter().map(|x| x.to_f64_lossy()).collect();
                let total: f64 = a.iter().sum();
                Ok(Prediction {
                    prob: probs[i].to_f64_lossy(),
                    fuzzy: fuzzy.as_ref().map(|g| g[i]),
                    domain: domains.as_ref().and_then(|d| d.get(i).copied()),
                    alpha: GateWeights::new(a.iter().map(|x| x / total).collect())?,
                })
            })
            .collect()
    }

    pub fn cast<T: Real>(&self) -> DetectorModel<T> {
        DetectorModel {
            store: self.store.cast(),
            experts: self.experts.clone(),
            gate: self.gate.clone(),
            classifier: self.classifier.clone(),
            domain_embedding: self.domain_embedding,
            membership: self.membership.as_ref().map(MembershipModel::cast),
            mode: self.mode,
            dims: self.dims.clone(),
        }
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ckpt = Checkpoint {
            header: CheckpointHeader::new(ModelKind::Detector, Some(self.mode), &self.dims, self.membership.is_some()),
            blobs: Vec::new(),
        };
        ckpt.push_store("", &self.store);
        if let Some(m) = &self.membership {
            ckpt.push_store(MEMBERSHIP_PREFIX, m.store());
        }
        ckpt
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        if ckpt.header.kind != ModelKind::Detector {
            return Err(Error::Checkpoint("expected a detector checkpoint".into()));
        }
        let mode = ckpt
            .header
            .mode
            .ok_or_else(|| Error::Checkpoint("detector checkpoint without a mode".into()))?;
        let membership = if ckpt.header.has_membership {
            Some(MembershipModel::from_checkpoint(ckpt, MEMBERSHIP_PREFIX)?)
        } else {
            None
        };
        let mut model = DetectorModel::new(&ckpt.header.dims, mode, membership, 0)?;
        ckpt.fill_store("", &mut model.store)?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().write(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::read(path)?)
    }
}

/// `r_i = TextCNN_i(W)` for every expert.
pub fn expert_forward_all<S: Real>(seq: &EmbeddingSequence, model: &DetectorModel<S>) -> Result<Vec<Vec<f64>>> {
    let batch = SeqBatch::<S>::pack([seq.as_slice()], model.dims.dim, model.min_len())?;
    let lens = model.conv_lens(&batch.lens);
    let mut tape = Tape::new();
    let mut params = Binder::frozen(&model.store);
    let x = batch.to_tape(&mut tape);
    model
        .experts
        .iter()
        .map(|e| {
            let r = e.forward(&mut tape, &mut params, x, &lens)?;
            Ok(tape.value(r).data().iter().map(|v| v.to_f64_lossy()).collect())
        })
        .collect()
}

/// `α = softmax(MLP(x))` for a 9-dimensional gate input: the fuzzy label in
/// fuzzy mode, the looked-up domain vector in baseline mode.
pub fn gate_weights<S: Real>(input: &[f64], model: &DetectorModel<S>) -> Result<GateWeights> {
    if input.len() != NUM_DOMAINS {
        return Err(Error::Dimension {
            op: "gate input",
            lhs: vec![input.len()],
            rhs: vec![NUM_DOMAINS],
        });
    }
    let t = model.experts.len();
    let Some(gate) = &model.gate else {
        return GateWeights::new(vec![1.0 / t as f64; t]);
    };
    let mut tape = Tape::new();
    let mut params = Binder::frozen(&model.store);
    let x = tape.constant(Tensor::new(vec![1, NUM_DOMAINS], input.iter().map(|&v| S::lit(v)).collect())?);
    let logits = gate.forward(&mut tape, &mut params, x)?;
    let a = tape.softmax(logits)?;
    let alpha: Vec<f64> = tape.value(a).data().iter().map(|v| v.to_f64_lossy()).collect();
    let total: f64 = alpha.iter().sum();
    GateWeights::new(alpha.iter().map(|v| v / total).collect())
}

/// `v = Σ α_i r_i`.
pub fn aggregate(alpha: &GateWeights, experts: &[Vec<f64>]) -> Result<Vec<f64>> {
    if alpha.len() != experts.len() {
        return Err(Error::usage(format!(
            "aggregate: {} weights for {} expert outputs",
            alpha.len(),
            experts.len()
        )));
    }
    let e = experts.first().map_or(0, Vec::len);
    if experts.iter().any(|r| r.len() != e) {
        return Err(Error::input("expert outputs differ in length"));
    }
    let mut tape = Tape::<f64>::new();
    let a = tape.constant(Tensor::vector(alpha.as_slice().to_vec()));
    let parts: Vec<Var> = experts.iter().map(|r| tape.constant(Tensor::vector(r.clone()))).collect();
    let v = tape.weighted_sum(a, &parts)?;
    Ok(tape.value(v).data().to_vec())
}
