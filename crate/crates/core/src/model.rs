//! Parameter types for the default-intensity system and the common factor.
//!
//! Each name's intensity follows
//!
//! ```text
//! dλ = -α(λ - λ̄)dt + σ√λ dW + β_C dL + β_S λ dX,     λ(0) = λ₀
//! ```
//!
//! where `L` is the fraction of defaulted names and `X` the systematic factor
//! `dX = b₀(X)dt + σ₀(X)dV`. Names sharing a parameter set form a *type*; a
//! portfolio is a finite list of types with positive weights.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Intensity dynamics of one obligor type.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObligorParams {
    pub alpha: f64,
    pub lambda_bar: f64,
    pub sigma: f64,
    pub beta_c: f64,
    pub beta_s: f64,
    pub lambda0: f64,
}

impl ObligorParams {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("alpha", self.alpha),
            ("lambda_bar", self.lambda_bar),
            ("sigma", self.sigma),
            ("beta_c", self.beta_c),
            ("beta_s", self.beta_s),
            ("lambda0", self.lambda0),
        ];
        for (name, value) in fields {
            if !value.is_finite() {
                return Err(Error::NonFiniteParameter { name });
            }
            // beta_s is the only sign-unrestricted field
            if name != "beta_s" && value < 0.0 {
                return Err(Error::NegativeParameter { name, value });
            }
        }
        Ok(())
    }
}

/// One entry of a portfolio's type list.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightedType {
    pub params: ObligorParams,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PortfolioSpec {
    pub names: usize,
    pub types: Vec<WeightedType>,
}

impl PortfolioSpec {
    pub fn homogeneous(names: usize, params: ObligorParams) -> Self {
        Self {
            names,
            types: vec![WeightedType {
                params,
                weight: 1.0,
            }],
        }
    }
}

/// A portfolio whose parameters passed [`validate_portfolio`].
///
/// The only way to obtain one is through validation, so downstream code can
/// rely on the bounds without re-checking.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedPortfolio(PortfolioSpec);

impl ValidatedPortfolio {
    pub fn spec(&self) -> &PortfolioSpec {
        &self.0
    }

    pub fn names(&self) -> usize {
        self.0.names
    }

    pub fn types(&self) -> &[WeightedType] {
        &self.0.types
    }

    pub fn is_homogeneous(&self) -> bool {
        self.0.types.len() == 1
    }

    /// Parameters of a single-type portfolio.
    pub fn homogeneous_params(&self) -> Result<ObligorParams> {
        match self.0.types.as_slice() {
            [only] => Ok(only.params),
            types => Err(Error::NotHomogeneous { types: types.len() }),
        }
    }

    /// Number of names assigned to each type (largest-remainder rounding of
    /// `weight * N`, ties broken by type order). Sums to `N`.
    pub fn type_counts(&self) -> Vec<usize> {
        let n = self.0.names;
        let raw: Vec<f64> = self.0.types.iter().map(|t| t.weight * n as f64).collect();
        let mut counts: Vec<usize> = raw.iter().map(|r| r.floor() as usize).collect();
        let assigned: usize = counts.iter().sum();
        let mut order: Vec<usize> = (0..raw.len()).collect();
        order.sort_by(|&a, &b| {
            let ra = raw[a] - raw[a].floor();
            let rb = raw[b] - raw[b].floor();
            rb.total_cmp(&ra).then(a.cmp(&b))
        });
        for &i in order.iter().take(n.saturating_sub(assigned)) {
            counts[i] += 1;
        }
        counts
    }
}

/// Checks parameter bounds and weights; weights are kept as given.
pub fn validate_portfolio(spec: PortfolioSpec) -> Result<ValidatedPortfolio> {
    if spec.names == 0 || spec.types.is_empty() {
        return Err(Error::EmptyPortfolio);
    }
    let mut sum = 0.0;
    for t in &spec.types {
        t.params.validate()?;
        if !(t.weight.is_finite() && t.weight > 0.0) {
            return Err(Error::BadWeights { sum: f64::NAN });
        }
        sum += t.weight;
    }
    if (sum - 1.0).abs() > 1e-12 {
        return Err(Error::BadWeights { sum });
    }
    Ok(ValidatedPortfolio(spec))
}

type CoeffFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Drift/volatility law of the systematic factor.
#[derive(Clone)]
pub enum SystematicKind {
    /// `b₀(x) = speed·(mean − x)`, `σ₀(x) = vol`.
    Ou {
        mean: f64,
        speed: f64,
        vol: f64,
    },
    /// Frozen factor: `b₀ = σ₀ = 0`.
    Constant {
        level: f64,
    },
    Custom {
        drift: CoeffFn,
        vol: CoeffFn,
    },
}

impl fmt::Debug for SystematicKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Ou { mean, speed, vol } => f
                .debug_struct("Ou")
                .field("mean", mean)
                .field("speed", speed)
                .field("vol", vol)
                .finish(),
            Self::Constant { level } => f.debug_struct("Constant").field("level", level).finish(),
            Self::Custom { .. } => f.write_str("Custom"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SystematicRiskSpec {
    pub kind: SystematicKind,
    pub x0: f64,
}

impl SystematicRiskSpec {
    pub fn ou(mean: f64, speed: f64, vol: f64, x0: f64) -> Result<Self> {
        let spec = Self {
            kind: SystematicKind::Ou { mean, speed, vol },
            x0,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn constant(level: f64) -> Result<Self> {
        let spec = Self {
            kind: SystematicKind::Constant { level },
            x0: level,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn custom<D, V>(drift: D, vol: V, x0: f64) -> Result<Self>
    where
        D: Fn(f64) -> f64 + Send + Sync + 'static,
        V: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        let spec = Self {
            kind: SystematicKind::Custom {
                drift: Arc::new(drift),
                vol: Arc::new(vol),
            },
            x0,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.x0.is_finite() {
            return Err(Error::BadSystematic("x0 must be finite".into()));
        }
        match self.kind {
            SystematicKind::Ou { mean, speed, vol } => {
                if !(mean.is_finite() && speed.is_finite() && vol.is_finite()) {
                    return Err(Error::BadSystematic("OU parameters must be finite".into()));
                }
                if speed < 0.0 || vol < 0.0 {
                    return Err(Error::BadSystematic("OU speed and vol must be >= 0".into()));
                }
            }
            SystematicKind::Constant { level } if !level.is_finite() => {
                return Err(Error::BadSystematic("constant level must be finite".into()));
            }
            _ => {}
        }
        Ok(())
    }

    /// `(b₀(x), σ₀(x))`.
    pub fn eval_risk_coeffs(&self, x: f64) -> Result<(f64, f64)> {
        if !x.is_finite() {
            return Err(Error::NonFiniteInput(x));
        }
        let (b0, s0) = match &self.kind {
            SystematicKind::Ou { mean, speed, vol } => (speed * (mean - x), *vol),
            SystematicKind::Constant { .. } => (0.0, 0.0),
            SystematicKind::Custom { drift, vol } => (drift(x), vol(x)),
        };
        if !(b0.is_finite() && s0.is_finite()) {
            return Err(Error::NonFiniteInput(x));
        }
        Ok((b0, s0))
    }
}

/// Equispaced grid `0, dt, 2dt, …, T`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    horizon: f64,
    dt: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, dt: f64) -> Result<Self> {
        if !(horizon.is_finite() && dt.is_finite() && horizon > 0.0 && dt > 0.0) {
            return Err(Error::BadGrid(format!(
                "need T > 0 and dt > 0 (T = {horizon}, dt = {dt})"
            )));
        }
        let ratio = horizon / dt;
        let steps = ratio.round();
        if (ratio - steps).abs() > 1e-9 * ratio.max(1.0) || steps < 1.0 {
            return Err(Error::BadGrid(format!("T/dt = {ratio} is not an integer")));
        }
        Ok(Self {
            horizon,
            dt,
            steps: steps as usize,
        })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Number of grid points (`steps + 1`).
    pub fn len(&self) -> usize {
        self.steps + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn time(&self, i: usize) -> f64 {
        if i == self.steps {
            self.horizon
        } else {
            i as f64 * self.dt
        }
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.len()).map(move |i| self.time(i))
    }

    /// Index of the grid point at `t`, tolerating 1e-9 relative round-off.
    pub fn index_of(&self, t: f64) -> Result<usize> {
        let r = t / self.dt;
        let i = r.round();
        if !t.is_finite()
            || i < 0.0
            || i > self.steps as f64
            || (r - i).abs() > 1e-9 * r.abs().max(1.0)
        {
            return Err(Error::TimeOffGrid { t });
        }
        Ok(i as usize)
    }

    /// Same horizon with each step split into `m` pieces.
    pub fn refine(&self, m: usize) -> Self {
        let m = m.max(1);
        Self {
            horizon: self.horizon,
            dt: self.dt / m as f64,
            steps: self.steps * m,
        }
    }
}
