//! Problem container, named catalog, and assumption validators.

pub mod catalog;
mod spec;
pub mod validate;

pub use spec::{ProblemDoc, ProblemSpec};
pub use validate::{
    estimate_lipschitz, recheck, validate_all, validate_consistency, validate_ellipticity, validate_no_free_loop,
    validate_rho, GridPoint, LipschitzEstimate, PairSampler, SampleGrid, ValidationReport, ValidationSettings, Witness,
};
