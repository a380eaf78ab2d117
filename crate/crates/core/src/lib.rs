//! Curvature-aware PAC-Bayes generalization bounds for small neural networks.
//!
//! The crate is organized bottom-up:
//!
//! * [`nn`]: a dense MLP with hand-written backpropagation, plus closed-form
//!   test surfaces implementing the same [`nn::Objective`] trait.
//! * [`data`]: sample batches, IDX parsing and a Gaussian-mixture task.
//! * [`hessian`]: diagonal Hessians, Hessian-Lipschitz estimates, `λ_max`.
//! * [`pacbayes`]: KL terms, optimal perturbation scales and bound reports.
//! * [`metrics`]: the pacGen sharpness metric and two baselines.
//! * [`perturbed_opt`]: training with curvature-scaled weight noise.
//!
//! All arithmetic is `f64` and every random draw is derived from an explicit
//! seed through [`rng::derive_seed`].

pub mod data;
pub mod error;
pub mod hessian;
pub mod metrics;
pub mod nn;
pub mod pacbayes;
pub mod perturbed_opt;
pub mod rng;

pub use error::{Error, Result};

#[cfg(doctest)]
mod guide {
    #[doc = include_str!("../../../book/src/introduction.md")]
    struct Introduction;
    #[doc = include_str!("../../../book/src/toy-model.md")]
    struct ToyModel;
    #[doc = include_str!("../../../book/src/curvature.md")]
    struct Curvature;
    #[doc = include_str!("../../../book/src/bound.md")]
    struct Bound;
    #[doc = include_str!("../../../book/src/pacgen.md")]
    struct Pacgen;
    #[doc = include_str!("../../../book/src/perturbed-training.md")]
    struct PerturbedTraining;
    #[doc = include_str!("../../../book/src/reproducibility.md")]
    struct Reproducibility;
}
