//! Adversarial perturbation attacks against top-k multi-label predictors.
//!
//! A top-k multi-label classifier returns the k labels with the highest
//! calibrated prediction scores. This crate implements three attacks on such
//! classifiers -- instance-specific untargeted, universal untargeted, and
//! targeted -- together with the small differentiable victim models, synthetic
//! datasets, and evaluation metrics needed to exercise them end to end.
//!
//! The attacks share a common structure: a hinge-based surrogate loss whose
//! ranking operation has been removed through the variational form of the
//! average-top-k function, minimized jointly over the perturbation `z` and an
//! auxiliary threshold `lambda` by projected (sub)gradient descent.

pub mod attack;
pub mod data;
pub mod error;
pub mod eval;
pub mod predictor;
pub mod records;
pub mod topk;

pub use error::{Error, Result};
