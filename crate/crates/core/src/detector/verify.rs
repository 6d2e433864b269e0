use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{DetectorMode, DetectorModel, GateInput};
use crate::config::ModelDims;
use crate::error::Result;
use crate::layers::SeqBatch;
use crate::membership::{DomainId, FuzzyDomainLabel, MembershipModel, NUM_DOMAINS};
use crate::numcore::{finite_diff_check, GradCheckReport, Tape};
use crate::optim::{bce_loss, ce_loss};

/// Dimensions of the instance used by [`tiny_gradcheck`]: `d = 4`, GRU
/// width 3, two experts with windows 1 and 2.
pub fn tiny_dims() -> ModelDims {
    ModelDims {
        dim: 4,
        gru_hidden: 3,
        membership_hidden: 3,
        experts: 2,
        expert_dim: 3,
        widths: vec![1, 2],
        channels: 2,
        gate_hidden: 3,
        classifier_hidden: 3,
    }
}

/// Finite-difference results per training phase.
#[derive(Debug, Clone)]
pub struct GradcheckSuite {
    pub h: f64,
    pub phases: Vec<(String, GradCheckReport)>,
}

impl GradcheckSuite {
    pub fn worst(&self) -> f64 {
        self.phases.iter().map(|(_, r)| r.max_rel_error).fold(0.0, f64::max)
    }

    pub fn coordinates(&self) -> usize {
        self.phases.iter().map(|(_, r)| r.coordinates).sum()
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.worst() < tol
    }
}

/// Central-difference check of every trainable parameter of a tiny
/// instance in `f64`: the membership network under its cross-entropy, then
/// the fuzzy and baseline detectors under summed BCE with the membership
/// output held fixed.
pub fn tiny_gradcheck(h: f64, seed: u64) -> Result<GradcheckSuite> {
    let dims = tiny_dims();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = 3;
    let data: Vec<Vec<f32>> = (0..rows)
        .map(|_| (0..2 * dims.dim).map(|_| rng.sample::<f32, _>(StandardNormal)).collect())
        .collect();
    let batch = SeqBatch::<f64>::pack(data.iter().map(Vec::as_slice), dims.dim, 2)?;
    let domains: Vec<DomainId> = (0..rows)
        .map(|_| DomainId::new(rng.random_range(0..NUM_DOMAINS)))
        .collect::<Result<_>>()?;
    let labels: Vec<u8> = (0..rows).map(|i| (i % 2) as u8).collect();

    let mut phases = Vec::new();
    let mut membership = MembershipModel::<f64>::new(&dims, seed)?;
    let report = finite_diff_check(membership.store(), h, |tape, p| {
        let seq = batch.to_tape(tape);
        let probs = membership.forward(tape, p, seq, &batch.lens)?;
        ce_loss(tape, probs, &domains)
    })?;
    phases.push(("membership".to_string(), report));

    membership.freeze();
    let g: Vec<FuzzyDomainLabel> = {
        let mut tape = Tape::new();
        let mut p = crate::numcore::Binder::frozen(membership.store());
        let seq = batch.to_tape(&mut tape);
        let probs = membership.forward(&mut tape, &mut p, seq, &batch.lens)?;
        tape.value(probs)
            .data()
            .chunks(NUM_DOMAINS)
            .map(FuzzyDomainLabel::from_slice)
            .collect::<Result<_>>()?
    };
    for mode in [DetectorMode::Fuzzy, DetectorMode::Baseline] {
        let model = DetectorModel::new(&dims, mode, Some(membership.clone()), seed)?;
        let input = match mode {
            DetectorMode::Fuzzy => GateInput::Fuzzy(&g),
            _ => GateInput::Domains(&domains),
        };
        let report = finite_diff_check(model.store(), h, |tape, p| {
            let vars = model.forward(tape, p, &batch, &input)?;
            bce_loss(tape, vars.prob, &labels)
        })?;
        phases.push((format!("detector-{mode}"), report));
    }
    Ok(GradcheckSuite { h, phases })
}
