// NaN-rejecting guards are written as `!(x > 0.0)` on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod asymptotics;
pub mod autodiff;
pub mod basedist;
pub mod error;
pub mod flow;
pub mod quadrature;
pub mod special;
pub mod train_eval;
pub mod triplets;

pub use error::{Error, Result};
