//! Large-portfolio loss approximations for intensity-based default models.
//!
//! The crate provides:
//!
//! * [`finite_system`]: a Monte Carlo simulator of the `N`-name pool, used as
//!   the reference distribution;
//! * [`lln`]: the law-of-large-numbers moment hierarchy, giving the
//!   first-order loss `L = 1 − u₀`;
//! * [`fluctuation`]: the fluctuation moment hierarchy, sampled directly
//!   (Scheme 1) or through its conditionally Gaussian law (Scheme 2 and the
//!   no-systematic-risk case), plus bridge sampling of loss skeletons;
//! * [`loss`]: Gaussian-mixture loss distributions, VaR, payoff estimators
//!   and the Scheme-1 budget split;
//! * [`heterogeneous`]: the same hierarchies for a finite list of obligor types.

pub mod config;
pub mod error;
pub mod factor;
pub mod finite_system;
pub mod fluctuation;
pub mod heterogeneous;
pub mod lln;
pub mod loss;
pub mod model;
pub mod numerics;
pub mod pipeline;
pub mod rng;
pub mod stats;
pub mod table;

#[cfg(test)]
mod testing;

pub use error::{Error, Result};
pub use factor::SystematicPath;
pub use model::{
    validate_portfolio, ObligorParams, PortfolioSpec, SystematicKind, SystematicRiskSpec, TimeGrid,
    ValidatedPortfolio, WeightedType,
};
