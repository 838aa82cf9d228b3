//! Network side-channel inference from coarse traffic counters.
//!
//! The crate turns cumulative byte/packet counters (the kind any unprivileged
//! process can read on a phone) into packet-event streams, and runs two
//! families of attacks on them:
//!
//! * location features from map-navigation traffic: motion onset, speed,
//!   distance travelled, urban/rural environment and path identity
//!   ([`locinfer`]);
//! * website fingerprinting from device-level counters with a soft-margin RBF
//!   SVM ([`preprocess`], [`svm`], [`webclassify`]), including the effect of
//!   traffic-shaping defenses ([`countermeasures`]).
//!
//! [`synth`] produces calibrated synthetic traces for both families and is the
//! ground truth every analysis is tested against.

// `!(x > 0.0)` is deliberate throughout: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod countermeasures;
pub mod error;
pub mod locinfer;
pub mod preprocess;
pub mod rng;
pub mod svm;
pub mod synth;
pub mod trace;
pub mod webclassify;

pub use error::{Error, Result};
pub use preprocess::{FeatureKind, FeatureVector, Transform};
pub use svm::{SvmModel, SvmParams};
pub use trace::{CounterSample, CounterTrace, Frame, PacketEvent, Scope};

/// Microseconds per second.
pub const US_PER_S: u64 = 1_000_000;
