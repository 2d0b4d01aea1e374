//! Dual convexified convolutional networks.
//!
//! A convexified CNN scores an input through `Tr(Φ(x)ᵀA)` with a nuclear-norm
//! penalty on `A`. This crate never forms the feature map `Φ`; it solves the
//! Lagrange dual, whose only constraint is `λ_max(Σᵢⱼ αᵢαⱼyᵢyⱼK(xᵢ,xⱼ)) ≤ 1`
//! over `p × p` kernel generating matrices, then reads the linear weight off
//! the eigenvectors of that matrix and the convolution outputs off the
//! kernel expansion.

// `!(x > 0.0)` style checks are meant to reject NaN too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod error;
pub mod kernels;
pub mod losses;
pub mod model;
pub mod oracle;
pub mod patches;
pub mod recovery;
pub mod solver;

pub use error::{Error, Result};
