//! JSON run configuration.
//!
//! ```json
//! {
//!   "portfolio": { "names": 1000, "types": [
//!     { "alpha": 4, "lambda_bar": 0.2, "sigma": 0.9, "beta_c": 1, "beta_s": 1, "lambda0": 0.2 }
//!   ] },
//!   "systematic": { "kind": "ou", "mean": 1, "speed": 2, "vol": 1, "x0": 1 },
//!   "grid": { "horizon": 0.5, "dt": 0.005 }
//! }
//! ```
//!
//! Optional sections `approx`, `simulate` and `compare` carry run sizes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    validate_portfolio, ObligorParams, PortfolioSpec, SystematicRiskSpec, TimeGrid,
    ValidatedPortfolio, WeightedType,
};

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TypeConfig {
    pub alpha: f64,
    pub lambda_bar: f64,
    pub sigma: f64,
    pub beta_c: f64,
    pub beta_s: f64,
    pub lambda0: f64,
    #[serde(default = "one")]
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PortfolioConfig {
    pub names: usize,
    pub types: Vec<TypeConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SystematicConfig {
    Ou {
        mean: f64,
        speed: f64,
        vol: f64,
        x0: f64,
    },
    Constant {
        level: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub horizon: f64,
    pub dt: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ApproxConfig {
    /// Factor paths `M`.
    pub paths: Option<usize>,
    /// Fluctuation samples per factor path `J`.
    pub samples: Option<usize>,
    /// Fluctuation truncation `K`.
    pub trunc: Option<usize>,
    /// LLN truncation; defaults to `3K`.
    pub lln_trunc: Option<usize>,
    pub substeps: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub paths: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareConfig {
    pub budget_seconds: f64,
    /// Call strike `S` of the payoff `(L_T − S)⁺`.
    pub strike: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub description: Option<String>,
    pub portfolio: PortfolioConfig,
    pub systematic: SystematicConfig,
    pub grid: GridConfig,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub approx: ApproxConfig,
    #[serde(default)]
    pub simulate: SimulateConfig,
    #[serde(default)]
    pub compare: Option<CompareConfig>,
}

/// Validated model inputs.
#[derive(Debug, Clone)]
pub struct Model {
    pub portfolio: ValidatedPortfolio,
    pub risk: SystematicRiskSpec,
    pub grid: TimeGrid,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn model(&self) -> Result<Model> {
        let types = self
            .portfolio
            .types
            .iter()
            .map(|t| WeightedType {
                params: ObligorParams {
                    alpha: t.alpha,
                    lambda_bar: t.lambda_bar,
                    sigma: t.sigma,
                    beta_c: t.beta_c,
                    beta_s: t.beta_s,
                    lambda0: t.lambda0,
                },
                weight: t.weight,
            })
            .collect();
        let portfolio = validate_portfolio(PortfolioSpec {
            names: self.portfolio.names,
            types,
        })?;
        let risk = match self.systematic {
            SystematicConfig::Ou {
                mean,
                speed,
                vol,
                x0,
            } => SystematicRiskSpec::ou(mean, speed, vol, x0)?,
            SystematicConfig::Constant { level } => SystematicRiskSpec::constant(level)?,
        };
        let grid = TimeGrid::new(self.grid.horizon, self.grid.dt)?;
        Ok(Model {
            portfolio,
            risk,
            grid,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIG: &str = r#"{
        "portfolio": { "names": 1000, "types": [
            { "alpha": 4, "lambda_bar": 0.2, "sigma": 0.9, "beta_c": 1, "beta_s": 1, "lambda0": 0.2 } ] },
        "systematic": { "kind": "ou", "mean": 1, "speed": 2, "vol": 1, "x0": 1 },
        "grid": { "horizon": 0.5, "dt": 0.005 },
        "compare": { "budget_seconds": 5, "strike": 0.12 }
    }"#;

    #[test]
    fn parses_and_validates() {
        let cfg = RunConfig::from_json(FIG).unwrap();
        let m = cfg.model().unwrap();
        assert_eq!(m.portfolio.names(), 1000);
        assert_eq!(m.grid.steps(), 100);
        assert_eq!(cfg.compare.unwrap().strike, 0.12);
        assert_eq!(cfg.approx, ApproxConfig::default());
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(RunConfig::from_json("{"), Err(Error::Config(_))));
        let typo = FIG.replace("\"alpha\"", "\"alpah\"");
        assert!(matches!(RunConfig::from_json(&typo), Err(Error::Config(_))));
        let neg = FIG.replace("\"sigma\": 0.9", "\"sigma\": -0.9");
        assert!(matches!(
            RunConfig::from_json(&neg).unwrap().model(),
            Err(Error::NegativeParameter { .. })
        ));
        let off = FIG.replace("\"dt\": 0.005", "\"dt\": 0.3");
        assert!(matches!(
            RunConfig::from_json(&off).unwrap().model(),
            Err(Error::BadGrid(_))
        ));
    }

    #[test]
    fn constant_factor() {
        let c = FIG.replace(
            r#""kind": "ou", "mean": 1, "speed": 2, "vol": 1, "x0": 1"#,
            r#""kind": "constant", "level": 0"#,
        );
        let m = RunConfig::from_json(&c).unwrap().model().unwrap();
        assert_eq!(m.risk.eval_risk_coeffs(0.0).unwrap(), (0.0, 0.0));
    }
}
