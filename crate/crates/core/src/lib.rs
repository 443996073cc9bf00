//! Adaptive approximations of the AC power flow equations.
//!
//! The crate covers the full path from a MATPOWER case file to fitted
//! approximations and their use in a simplified optimal power flow:
//!
//! * [`netmodel`] parses cases and assembles the bus admittance matrix.
//! * [`pfcore`] solves the power flow by Newton's method and exposes the
//!   complex-form Jacobian blocks.
//! * [`sensitivity`] computes first- and second-order sensitivities of
//!   voltage magnitudes with respect to power injections, and their spectra.
//! * [`sampling`] draws injection samples (uniform or along dominant
//!   curvature directions) and runs the violation-driven refinement loop.
//! * [`regress`] holds a revised simplex LP solver and the constrained L1
//!   regressions producing linear and rational approximations.
//! * [`pade`] builds the `[1/1]` multivariate Padé approximant and Taylor
//!   baselines.
//! * [`opf`] solves a simplified OPF with each approximation class and
//!   re-evaluates the result against the AC power flow.
//! * [`pipeline`] and [`report`] tie the stages together for the CLI.
//!
//! The accompanying book (under `book/`) walks through each stage; its code
//! listings are compiled and run as doc-tests of this crate.

pub mod fixtures;
pub mod linalg;
pub mod netmodel;
pub mod opf;
pub mod pade;
pub mod pfcore;
pub mod pipeline;
pub mod regress;
pub mod report;
pub mod sampling;
pub mod sensitivity;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/power-flow.md")]
    mod power_flow {}
    #[doc = include_str!("../../../book/src/sensitivity.md")]
    mod sensitivity {}
    #[doc = include_str!("../../../book/src/sampling.md")]
    mod sampling {}
    #[doc = include_str!("../../../book/src/regression.md")]
    mod regression {}
    #[doc = include_str!("../../../book/src/pade.md")]
    mod pade {}
    #[doc = include_str!("../../../book/src/opf.md")]
    mod opf {}
    #[doc = include_str!("../../../book/src/pipeline.md")]
    mod pipeline {}
}
