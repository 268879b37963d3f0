//! Aggregation cross-entropy (ACE) for sequence recognition.
//!
//! ACE trains a recognizer from class counts alone: per-class probabilities
//! are summed over all timesteps and matched to the annotation's character
//! counts. This crate provides
//!
//! * the loss in its cross-entropy and regression forms with closed-form
//!   gradients ([`ace`]), including 2D predictions flattened column-major,
//! * a log-space CTC baseline with a brute-force oracle ([`ctc`]),
//! * finite-difference gradient oracles ([`gradcheck`]),
//! * seeded synthetic datasets for 1D, 2D and counting tasks ([`tasks`]),
//! * a per-timestep toy classifier with hand-written backpropagation, greedy
//!   decoding and recognition/counting metrics ([`train`]),
//! * a timing and workspace harness comparing ACE with CTC ([`bench`]).

pub mod ace;
pub mod alphabet;
pub mod bench;
pub mod ctc;
pub mod error;
pub mod gradcheck;
pub mod grid;
pub mod softmax;
pub mod tasks;
pub mod train;

pub use ace::{
    ace_ce_loss, ace_ce_loss_2d, ace_regression_loss, aggregate, counts_from_sequence,
    gradient_magnitude_profile, Aggregate, AceVariant, CountAnnotation, LossGrad,
};
pub use alphabet::{Alphabet, BLANK};
pub use ctc::{ctc_brute_force, ctc_loss, CtcTarget};
pub use error::{Error, Result};
pub use grid::{flatten_2d, LogitGrid, ProbGrid, Shape2d};
pub use softmax::{softmax, softmax_jacobian_apply};
