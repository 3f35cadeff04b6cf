//! Speculative Jacobi decoding with coupled draft sampling.
//!
//! The crate is organized bottom-up:
//!
//! - [`prob`]: categorical distributions, divergences, logit processors
//! - [`rng`]: seeded splittable random streams
//! - [`couplers`]: independent, maximal (MRS) and Gumbel-shared sampling
//! - [`model`]: the autoregressive model interface and tabular toy models
//! - [`decoder`]: vanilla and speculative Jacobi decoding
//! - [`oracle`]: exact enumeration and the statistical checks built on it
//! - [`harness`]: experiment configuration, runs and result emission

pub mod couplers;
pub mod decoder;
pub mod error;
pub mod harness;
pub mod model;
pub mod oracle;
pub mod prob;
pub mod rng;

pub use couplers::{
    gs_couple, maximal_coupling_cost, mrs, mrs_joint_distribution, sample_gumbel_noise,
    sample_independent, GumbelVector, JointTable, MrsOutcome,
};
pub use decoder::{
    decode_sjd, decode_vanilla, CouplerKind, DecodeState, DecodeStats, Decoder, RejectionMode,
    SjdConfig,
};
pub use error::{Error, Result};
pub use model::{
    enumerate_sequence_distribution, target_distribution, ArModel, ModelSpec, SequenceLaw,
    TabularModel, TokenSequence,
};
pub use prob::{
    apply_processors, independent_collision, mix_cfg, renyi2_entropy, residual_distribution,
    tv_distance, Categorical, Logits, SamplingParams, Token,
};
pub use rng::RandomSource;
