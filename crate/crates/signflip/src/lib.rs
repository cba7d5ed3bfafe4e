//! Robust sign-flip score tests for many GLMs fitted in parallel against a
//! shared design, with permutation-based familywise error control.
//!
//! The pipeline: fit each response's nuisance-only model under the null
//! ([`glm`]), factor the effective score into per-observation contributions
//! ([`score`]), apply one shared sign-flip plan to every response
//! ([`flips`], [`score::build_matrix`]), and feed the resulting statistic
//! matrix to max-T, closed testing, or global combination procedures
//! ([`multitest`]). [`sim`] reproduces the size/FWER/power studies.

pub mod error;
pub mod flips;
pub mod glm;
pub mod multitest;
pub mod score;
pub mod sim;

pub use error::{Error, Result};
pub use flips::{make_exhaustive, make_plan, FlipPlan};
pub use glm::{fit_full, fit_null, null_loglik, Family, FullFit, Link, ModelSpec, NullFit};
pub use multitest::{
    bonferroni_holm, closed_testing, flip_covariance, global_test, mahalanobis_global,
    maxt_single_step, maxt_step_down, perm_pvalue, rejection_level, CombiningFunction, Method,
    TestResult,
};
pub use score::{
    build_matrix, decompose, decompose_unchecked, Alternative, FlipStatMatrix, ScoreDecomposition,
};
