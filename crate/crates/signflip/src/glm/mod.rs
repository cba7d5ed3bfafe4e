//! GLM families, links, and IRLS fitting (constrained and unconstrained).

mod family;
mod fit;

pub use family::{Family, Link};
pub use fit::{
    fit_full, fit_null, null_loglik, FullFit, ModelSpec, NullFit, IRLS_MAX_ITER, IRLS_TOL,
};
