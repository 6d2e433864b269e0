//! Domain types and the membership function that assigns fuzzy domain
//! labels.
//!
//! The model is trained as an ordinary nine-way classifier, frozen, and
//! its softmax output is then read as membership grades.

mod domain;
mod model;
mod train;

pub use domain::{argmax_domain, DomainId, FuzzyDomainLabel, DOMAIN_NAMES, NUM_DOMAINS, SIMPLEX_TOL};
pub use model::{hard_domain, membership_infer, MembershipModel};
pub(crate) use model::{to_label as model_label, INFER_CHUNK};
pub(crate) use train::check_corpus;
pub use train::membership_pretrain;
