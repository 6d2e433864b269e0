//! Expert bank, domain gate, aggregation and classifier.
//!
//! ```text
//! g = membership(W)            (fuzzy mode)
//! α = softmax(MLP_gate(g))
//! r_i = TextCNN_i(W),  i = 1..T
//! v = Σ α_i r_i
//! ŷ = sigmoid(MLP_cls(v))
//! ```
//!
//! The baseline mode feeds the gate a learned vector looked up by a single
//! domain label instead of `g`; the uniform mode drops the gate.

mod model;
mod train;
mod verify;

pub use model::{
    aggregate, expert_forward_all, gate_weights, DetectorMode, DetectorModel, DomainSource, ForwardVars, GateInput,
    GateWeights, Prediction, MEMBERSHIP_PREFIX,
};
pub(crate) use train::check_labels;
pub use train::detector_train;
pub use verify::{tiny_dims, tiny_gradcheck, GradcheckSuite};
