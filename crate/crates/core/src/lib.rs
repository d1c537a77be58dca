//! Long short-term sample distillation on a small `f64` autodiff engine.
//!
//! Each training sample keeps two teachers: its own logits from the previous
//! epoch (short-term) and from the last epoch of the previous mini-generation
//! (long-term). The student is trained on cross-entropy plus a KL term
//! towards each. The crate also contains the baselines this is usually
//! compared against, the ablations, a data pipeline, and an experiment runner.
//!
//! ```
//! use lstsd::data::gen_spiral;
//! use lstsd::nn::ModelArch;
//! use lstsd::policies::{train, NoObserver, PolicyConfig, PolicyKind, TrainConfig};
//!
//! let data = gen_spiral(20, 3, 0.05, 1).unwrap();
//! let arch = ModelArch::mlp(&[2, 16, 3]).unwrap();
//! let policy = PolicyConfig::new(PolicyKind::Lstsd).with_mini_gens(2, 2);
//! let cfg = TrainConfig::new(policy, 7).with_batch_size(16);
//! let (_params, report) = train(&cfg, &arch, &data, &data, &mut NoObserver).unwrap();
//! assert_eq!(report.epochs.len(), 4);
//! ```

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod data;
pub mod distill;
pub mod error;
pub mod experiment;
pub mod gradcheck;
pub mod nn;
pub mod optim;
pub mod policies;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
