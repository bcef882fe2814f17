//! Local polynomial trend regression for irregularly spaced spatial data.
//!
//! The crate estimates a smooth mean surface and its partial derivatives
//! from observations `Y(x_i) = m(x_i / A) + eta e(x_i) + sigma eps_i` on a
//! rectangular region, where `e` is a spatially dependent random field.
//! Besides the estimator itself it provides plug-in bias and variance
//! estimates, normal confidence intervals, a two-sample test, a simulator
//! for Levy-driven moving-average random fields, and a Monte Carlo
//! harness.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod basis;
pub mod dataset;
pub mod error;
pub mod index;
pub mod inference;
pub mod kernels;
pub mod lpfit;
pub mod mc;
pub mod randfield;
pub mod registry;
pub mod rng;
pub mod surface;

pub use error::{Error, Result};
