use std::time::Instant;

use super::model::INFER_CHUNK;
use super::{MembershipModel, NUM_DOMAINS};
use crate::config::TrainConfig;
use crate::data::{batches, derive_seed, id_list, split, Batch, Corpus};
use crate::error::{Error, Result};
use crate::eval::{macro_f1, EpochMetrics};
use crate::numcore::{Binder, Real, Tape, PROB_CLAMP};
use crate::optim::{ce_loss, AdamState};

pub(crate) fn check_corpus(corpus: &Corpus, cfg: &TrainConfig) -> Result<()> {
    if corpus.is_empty() {
        return Err(Error::input("corpus is empty"));
    }
    if corpus.dim != cfg.model.dim {
        return Err(Error::input(format!(
            "corpus embeddings have dim {}, model expects {}",
            corpus.dim, cfg.model.dim
        )));
    }
    for r in &corpus.records {
        r.embeddings()?;
    }
    Ok(())
}

/// Argmax predictions and summed cross-entropy over a labeled corpus.
fn validate<S: Real>(model: &MembershipModel<S>, corpus: &Corpus) -> Result<(Vec<usize>, Vec<usize>, f64)> {
    let (mut pred, mut truth, mut loss) = (Vec::new(), Vec::new(), 0.0);
    let idx: Vec<usize> = (0..corpus.len()).collect();
    for chunk in idx.chunks(INFER_CHUNK) {
        let batch = Batch::<S>::pack(corpus, chunk, 0)?;
        for (row, &i) in model.probs(&batch.seqs)?.iter().zip(chunk) {
            let label = corpus.records[i].domain.expect("checked").index();
            loss -= row[label].clamp(PROB_CLAMP, 1.0 - PROB_CLAMP).ln();
            let mut best = 0;
            for k in 1..NUM_DOMAINS {
                if row[k] > row[best] {
                    best = k;
                }
            }
            pred.push(best);
            truth.push(label);
        }
    }
    Ok((pred, truth, loss))
}

/// Trains the membership function as a nine-way domain classifier.
///
/// Uses a `train_fraction` split seeded by `seed`, keeps the epoch with the
/// best validation macro-F1 (earliest on ties) and returns it frozen.
pub fn membership_pretrain<S: Real>(
    corpus: &Corpus,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(MembershipModel<S>, Vec<EpochMetrics>)> {
    cfg.validate()?;
    let missing = corpus.missing_domains();
    if !missing.is_empty() {
        return Err(Error::input(format!(
            "membership training needs domain labels; missing for {}",
            id_list(&missing)
        )));
    }
    check_corpus(corpus, cfg)?;
    let (train, val) = split(corpus, cfg.train_fraction, seed)?;
    if val.is_empty() || train.is_empty() {
        return Err(Error::input("corpus too small for a train/validation split"));
    }

    let mut model = MembershipModel::<S>::new(&cfg.model, seed)?;
    let mut adam = AdamState::new(model.store(), cfg.adam());
    let mut best: Option<(f64, MembershipModel<S>)> = None;
    let mut log = Vec::with_capacity(cfg.membership.epochs);
    for epoch in 1..=cfg.membership.epochs {
        let start = Instant::now();
        let mut total = 0.0;
        for batch in batches::<S>(&train, cfg.membership.batch_size, derive_seed(seed, 1, epoch as u64))? {
            let batch = batch?;
            let labels: Vec<_> = batch.indices.iter().map(|&i| train.records[i].domain.expect("checked")).collect();
            let mut tape = Tape::new();
            let mut params = Binder::trainable(model.store());
            let seq = batch.seqs.to_tape(&mut tape);
            let probs = model.forward(&mut tape, &mut params, seq, &batch.seqs.lens)?;
            let loss = ce_loss(&mut tape, probs, &labels)?;
            total += tape.value(loss).item().to_f64_lossy();
            let bindings = params.finish();
            let grads = tape.backward(loss)?;
            let store = model.store_mut()?;
            store.accumulate(&bindings, &grads);
            adam.step(store)?;
        }
        let (pred, truth, val_loss) = validate(&model, &val)?;
        let f1 = macro_f1(&pred, &truth, NUM_DOMAINS)?;
        log.push(EpochMetrics {
            phase: "membership".into(),
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
    let (_, mut model) = best.expect("at least one epoch");
    model.freeze();
    Ok((model, log))
}
