//! Scalable exact variance-component tests for gene-environment interaction.
//!
//! The null model `y = X beta + G b + e` with `b ~ N(0, tau I)` is fitted by
//! REML EM on an implicitly projected response, and the interaction score
//! statistic is evaluated through Woodbury identities so that no `n x n`
//! matrix is ever formed.

// `!(x > 0.0)` style guards are used on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod io;
pub mod linalg;
pub mod oracle;
pub mod pvalue;
pub mod reml;
pub mod sim;
pub mod vctest;

pub use error::{Result, SeagleError};
pub use linalg::{ImplicitProjector, WoodburyOperator};
pub use pvalue::{pvalues, PvalueMethod, PvalueOptions, PvalueSource, Pvalues, WeightedChiSq};
pub use reml::{fit_null, EmConfig, NullFit};
pub use vctest::{run_test, TestInput, VcTestResult};
