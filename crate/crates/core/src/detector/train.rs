use std::time::Instant;

use super::{DetectorMode, DetectorModel, GateInput};
use crate::config::TrainConfig;
use crate::data::{batches, derive_seed, id_list, split, Batch, Corpus};
use crate::error::{Error, Result};
use crate::eval::{f1_binary, EpochMetrics, THRESHOLD};
use crate::membership::{check_corpus, DomainId, FuzzyDomainLabel, MembershipModel, INFER_CHUNK};
use crate::numcore::{Binder, Real, Tape};
use crate::optim::{bce_loss, AdamState};

/// Gate inputs for every record of one corpus, computed once: the
/// membership function is frozen, so they never change during training.
enum Inputs {
    Fuzzy(Vec<FuzzyDomainLabel>),
    Domains(Vec<DomainId>),
    None,
}

impl Inputs {
    fn build<S: Real>(mode: DetectorMode, corpus: &Corpus, membership: Option<&MembershipModel<S>>) -> Result<Self> {
        Ok(match mode {
            DetectorMode::Fuzzy => {
                let m = membership.expect("checked by DetectorModel::new");
                let seqs = corpus.records.iter().map(|r| r.embeddings()).collect::<Result<Vec<_>>>()?;
                Inputs::Fuzzy(m.infer_batch(&seqs)?)
            }
            DetectorMode::Baseline => Inputs::Domains(corpus.records.iter().map(|r| r.domain.expect("checked")).collect()),
            DetectorMode::Uniform => Inputs::None,
        })
    }
}

struct Rows {
    fuzzy: Vec<FuzzyDomainLabel>,
    domains: Vec<DomainId>,
}

impl Rows {
    fn gather(inputs: &Inputs, idx: &[usize]) -> Self {
        Rows {
            fuzzy: match inputs {
                Inputs::Fuzzy(g) => idx.iter().map(|&i| g[i]).collect(),
                _ => Vec::new(),
            },
            domains: match inputs {
                Inputs::Domains(d) => idx.iter().map(|&i| d[i]).collect(),
                _ => Vec::new(),
            },
        }
    }

    fn input(&self, inputs: &Inputs) -> GateInput<'_> {
        match inputs {
            Inputs::Fuzzy(_) => GateInput::Fuzzy(&self.fuzzy),
            Inputs::Domains(_) => GateInput::Domains(&self.domains),
            Inputs::None => GateInput::None,
        }
    }
}

fn labels_of(corpus: &Corpus, idx: &[usize]) -> Vec<u8> {
    idx.iter().map(|&i| u8::from(corpus.records[i].fake.expect("checked"))).collect()
}

/// Fake probabilities for a labeled corpus, in record order.
fn predict_all<S: Real>(model: &DetectorModel<S>, corpus: &Corpus, inputs: &Inputs) -> Result<Vec<f64>> {
    let idx: Vec<usize> = (0..corpus.len()).collect();
    let mut out = Vec::with_capacity(corpus.len());
    for chunk in idx.chunks(INFER_CHUNK) {
        let batch = Batch::<S>::pack(corpus, chunk, model.min_len())?;
        let rows = Rows::gather(inputs, chunk);
        let mut tape = Tape::new();
        let mut params = Binder::frozen(model.store());
        let vars = model.forward(&mut tape, &mut params, &batch.seqs, &rows.input(inputs))?;
        out.extend(tape.value(vars.prob).data().iter().map(|p| p.to_f64_lossy()));
    }
    Ok(out)
}

/// Checks the labels a mode needs before any work starts.
pub(crate) fn check_labels(corpus: &Corpus, mode: DetectorMode, need_fake: bool) -> Result<()> {
    if need_fake {
        let missing = corpus.missing_fake_labels();
        if !missing.is_empty() {
            return Err(Error::input(format!("missing fake labels for {}", id_list(&missing))));
        }
    }
    if mode == DetectorMode::Baseline {
        let missing = corpus.missing_domains();
        if !missing.is_empty() {
            return Err(Error::input(format!(
                "baseline mode needs domain labels; missing for {}",
                id_list(&missing)
            )));
        }
    }
    Ok(())
}

/// Trains experts, gate and classifier with summed BCE and Adam.
///
/// Uses the same seeded `train_fraction` split as membership pretraining
/// and returns the epoch with the best validation F1 (earliest on ties).
/// The membership model is only read; its bytes are compared before and
/// after training.
pub fn detector_train<S: Real>(
    corpus: &Corpus,
    cfg: &TrainConfig,
    membership: Option<MembershipModel<S>>,
    seed: u64,
) -> Result<(DetectorModel<S>, Vec<EpochMetrics>)> {
    cfg.validate()?;
    check_corpus(corpus, cfg)?;
    check_labels(corpus, cfg.mode, true)?;
    let snapshot = membership.as_ref().map(|m| m.store().clone());
    let mut model = DetectorModel::new(&cfg.model, cfg.mode, membership, seed)?;

    let (train, val) = split(corpus, cfg.train_fraction, seed)?;
    if val.is_empty() || train.is_empty() {
        return Err(Error::input("corpus too small for a train/validation split"));
    }
    let train_inputs = Inputs::build(cfg.mode, &train, model.membership())?;
    let val_inputs = Inputs::build(cfg.mode, &val, model.membership())?;
    let val_labels = labels_of(&val, &(0..val.len()).collect::<Vec<_>>());
    let val_truth: Vec<bool> = val_labels.iter().map(|&y| y == 1).collect();

    let mut adam = AdamState::new(model.store(), cfg.adam());
    let mut best: Option<(f64, DetectorModel<S>)> = None;
    let mut log = Vec::with_capacity(cfg.detector.epochs);
    for epoch in 1..=cfg.detector.epochs {
        let start = Instant::now();
        let mut total = 0.0;
        let iter = batches::<S>(&train, cfg.detector.batch_size, derive_seed(seed, 2, epoch as u64))?
            .with_min_len(model.min_len());
        for batch in iter {
            let batch = batch?;
            let rows = Rows::gather(&train_inputs, &batch.indices);
            let labels = labels_of(&train, &batch.indices);
            let mut tape = Tape::new();
            let mut params = Binder::trainable(model.store());
            let vars = model.forward(&mut tape, &mut params, &batch.seqs, &rows.input(&train_inputs))?;
            let loss = bce_loss(&mut tape, vars.prob, &labels)?;
            total += tape.value(loss).item().to_f64_lossy();
            let bindings = params.finish();
            let grads = tape.backward(loss)?;
            model.store_mut().accumulate(&bindings, &grads);
            adam.step(model.store_mut())?;
        }
        let probs = predict_all(&model, &val, &val_inputs)?;
        let f1 = f1_binary(&probs, &val_truth, THRESHOLD)?;
        let val_loss = crate::optim::bce_value(&probs, &val_labels)?;
        log.push(EpochMetrics {
            phase: format!("detector-{}", cfg.mode),
            seed,
            epoch,
            train_loss: total / train.len() as f64,
            val_loss: val_loss / val.len() as f64,
            val_f1: f1,
            wall_secs: start.elapsed().as_secs_f64(),
        });
        if best.as_ref().is_none_or(|(b, _)| f1 > *b) {
            best = Some((f1, model.clone()));
        }
    }
    let (_, model) = best.expect("at least one epoch");
    if let (Some(before), Some(after)) = (&snapshot, model.membership()) {
        if !before.bitwise_eq(after.store()) {
            return Err(Error::Frozen("membership parameters changed during detector training".into()));
        }
    }
    Ok((model, log))
}
