//! Loss distributions built from the moment hierarchies.
//!
//! The second-order approximation `L^N ≈ L − v₀/√N` is, path by path, a
//! Gaussian with mean `L^m − E[v₀ᵐ]/√N` and variance `Var[v₀ᵐ]/N`; averaging
//! over factor paths gives an equal-weight [`GaussianMixtureLoss`].

use serde::Serialize;
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::fluctuation::ConditionalGaussianLaw;
use crate::stats::mean_var;

fn std_normal() -> Normal {
    Normal::standard()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MixtureComponent {
    pub weight: f64,
    pub mean: f64,
    pub variance: f64,
}

impl MixtureComponent {
    fn cdf(&self, x: f64) -> f64 {
        if self.variance > 0.0 {
            std_normal().cdf((x - self.mean) / self.variance.sqrt())
        } else {
            f64::from(x >= self.mean)
        }
    }

    fn pdf(&self, x: f64) -> f64 {
        if self.variance > 0.0 {
            let s = self.variance.sqrt();
            std_normal().pdf((x - self.mean) / s) / s
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GaussianMixtureLoss {
    pub components: Vec<MixtureComponent>,
    pub horizon: f64,
    pub names: usize,
}

/// Equal-weight mixture from per-path LLN losses and `v₀` moments.
pub fn mixture_from_moments(
    lln_losses: &[f64],
    mean_v0: &[f64],
    var_v0: &[f64],
    names: usize,
    horizon: f64,
) -> Result<GaussianMixtureLoss> {
    let m = lln_losses.len();
    if m == 0 {
        return Err(Error::NoPaths);
    }
    if mean_v0.len() != m || var_v0.len() != m {
        return Err(Error::MismatchedPaths(format!(
            "{m} losses, {} means, {} variances",
            mean_v0.len(),
            var_v0.len()
        )));
    }
    let sqrt_n = (names as f64).sqrt();
    let weight = 1.0 / m as f64;
    let components = (0..m)
        .map(|i| MixtureComponent {
            weight,
            mean: lln_losses[i] - mean_v0[i] / sqrt_n,
            variance: var_v0[i].max(0.0) / names as f64,
        })
        .collect();
    Ok(GaussianMixtureLoss {
        components,
        horizon,
        names,
    })
}

/// Second-order loss law at `t` from Scheme-2 (or Gaussian-case) laws.
pub fn second_order_mixture(
    lln_losses: &[f64],
    laws: &[ConditionalGaussianLaw],
    names: usize,
    t: f64,
) -> Result<GaussianMixtureLoss> {
    if laws.len() != lln_losses.len() {
        return Err(Error::MismatchedPaths(format!(
            "{} losses, {} laws",
            lln_losses.len(),
            laws.len()
        )));
    }
    let mut means = Vec::with_capacity(laws.len());
    let mut vars = Vec::with_capacity(laws.len());
    for law in laws {
        let i = law.grid().index_of(t)?;
        means.push(law.mean_v0(i));
        vars.push(law.var_v0(i));
    }
    mixture_from_moments(lln_losses, &means, &vars, names, t)
}

/// Mixture whose components use the sample mean and variance of `v₀` draws
/// on each path (Scheme 1).
pub fn sampled_mixture(
    lln_losses: &[f64],
    v0_samples: &[Vec<f64>],
    names: usize,
    t: f64,
) -> Result<GaussianMixtureLoss> {
    if v0_samples.len() != lln_losses.len() {
        return Err(Error::MismatchedPaths(format!(
            "{} losses, {} sample sets",
            lln_losses.len(),
            v0_samples.len()
        )));
    }
    let (means, vars): (Vec<f64>, Vec<f64>) = v0_samples.iter().map(|s| mean_var(s)).unzip();
    mixture_from_moments(lln_losses, &means, &vars, names, t)
}

impl GaussianMixtureLoss {
    pub fn cdf(&self, x: f64) -> f64 {
        self.components
            .iter()
            .map(|c| c.weight * c.cdf(x))
            .sum::<f64>()
            .clamp(0.0, 1.0)
    }

    /// `P(L < x)`; differs from [`Self::cdf`] only at atoms.
    pub fn cdf_left(&self, x: f64) -> f64 {
        self.components
            .iter()
            .map(|c| {
                if c.variance > 0.0 {
                    c.weight * c.cdf(x)
                } else {
                    c.weight * f64::from(x > c.mean)
                }
            })
            .sum::<f64>()
            .clamp(0.0, 1.0)
    }

    /// Density of the continuous part.
    pub fn pdf(&self, x: f64) -> f64 {
        self.components.iter().map(|c| c.weight * c.pdf(x)).sum()
    }

    pub fn mean(&self) -> f64 {
        self.components.iter().map(|c| c.weight * c.mean).sum()
    }

    pub fn variance(&self) -> f64 {
        let mu = self.mean();
        self.components
            .iter()
            .map(|c| c.weight * (c.variance + (c.mean - mu) * (c.mean - mu)))
            .sum()
    }

    /// Point masses (zero-variance components), for distribution distances.
    pub fn atoms(&self) -> Vec<f64> {
        self.components
            .iter()
            .filter(|c| c.variance == 0.0)
            .map(|c| c.mean)
            .collect()
    }

    /// Probability mass the approximation puts below 0 or above 1.
    pub fn mass_outside_unit_interval(&self) -> f64 {
        self.cdf_left(0.0) + 1.0 - self.cdf(1.0)
    }

    /// Quantile by bisection on the CDF, to `1e-10` in the loss variable.
    pub fn quantile(&self, level: f64) -> Result<f64> {
        if !(level > 0.0 && level < 1.0) {
            return Err(Error::BadLevel(level));
        }
        let spread = |c: &MixtureComponent| 40.0 * c.variance.sqrt() + 1e-9;
        let mut lo = self
            .components
            .iter()
            .map(|c| c.mean - spread(c))
            .fold(f64::INFINITY, f64::min);
        let mut hi = self
            .components
            .iter()
            .map(|c| c.mean + spread(c))
            .fold(f64::NEG_INFINITY, f64::max);
        for _ in 0..400 {
            if hi - lo <= 1e-10 {
                break;
            }
            let mid = 0.5 * (lo + hi);
            if self.cdf(mid) >= level {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    /// `(loss, cdf, pdf)` on `points` equally spaced values over
    /// `[min(0, q_0.001), max(1, q_0.999)]`.
    pub fn lattice(&self, points: usize) -> Result<Vec<(f64, f64, f64)>> {
        let a = self.quantile(0.001)?.min(0.0);
        let b = self.quantile(0.999)?.max(1.0);
        let step = (b - a) / (points.max(2) - 1) as f64;
        Ok((0..points)
            .map(|i| {
                let x = if i + 1 == points {
                    b
                } else {
                    a + i as f64 * step
                };
                (x, self.cdf(x), self.pdf(x))
            })
            .collect())
    }
}

/// Functions of the loss whose expectation is estimated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Payoff {
    /// `(L − S)⁺`.
    Call(f64),
    Identity,
    /// `1{L > threshold}`.
    Indicator(f64),
}

impl Payoff {
    pub fn eval(&self, loss: f64) -> f64 {
        match *self {
            Payoff::Call(s) => (loss - s).max(0.0),
            Payoff::Identity => loss,
            Payoff::Indicator(th) => f64::from(loss > th),
        }
    }

    /// Expectation under `N(mean, variance)`.
    pub fn gaussian_expectation(&self, mean: f64, variance: f64) -> f64 {
        if variance <= 0.0 {
            return self.eval(mean);
        }
        let s = variance.sqrt();
        let n = std_normal();
        match *self {
            Payoff::Call(strike) => {
                let d = (mean - strike) / s;
                (mean - strike) * n.cdf(d) + s * n.pdf(d)
            }
            Payoff::Identity => mean,
            Payoff::Indicator(th) => n.sf((th - mean) / s),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SchemeKind {
    FiniteSystem,
    Scheme1,
    Scheme2,
    FirstOrder,
}

impl SchemeKind {
    pub fn label(&self) -> &'static str {
        match self {
            SchemeKind::FiniteSystem => "finite_system",
            SchemeKind::Scheme1 => "scheme1",
            SchemeKind::Scheme2 => "scheme2",
            SchemeKind::FirstOrder => "first_order",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EstimatorReport {
    pub estimate: f64,
    pub std_error: f64,
    /// Seconds.
    pub wall_time: f64,
    pub scheme: SchemeKind,
}

/// Mean of per-path values and the standard error of that mean.
fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let (m, v) = mean_var(values);
    (m, (v / values.len() as f64).sqrt())
}

/// Closed-form payoff per component, averaged over components; the standard
/// error is that of the average over the sampled factor paths.
pub fn expected_payoff_mixture(
    mix: &GaussianMixtureLoss,
    payoff: Payoff,
    scheme: SchemeKind,
) -> EstimatorReport {
    let values: Vec<f64> = mix
        .components
        .iter()
        .map(|c| payoff.gaussian_expectation(c.mean, c.variance))
        .collect();
    let (estimate, std_error) = mean_and_se(&values);
    EstimatorReport {
        estimate,
        std_error,
        wall_time: 0.0,
        scheme,
    }
}

/// Sample mean and standard error of the payoff over i.i.d. loss samples.
pub fn expected_payoff_samples(
    samples: &[f64],
    payoff: Payoff,
    scheme: SchemeKind,
) -> EstimatorReport {
    let values: Vec<f64> = samples.iter().map(|&l| payoff.eval(l)).collect();
    let (estimate, std_error) = mean_and_se(&values);
    EstimatorReport {
        estimate,
        std_error,
        wall_time: 0.0,
        scheme,
    }
}

/// Nested Scheme-1 estimate of `E f(L − v₀/√N)` from `J` draws of `v₀` on
/// each of `M` factor paths.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NestedEstimate {
    pub estimate: f64,
    /// Standard error from the spread of per-path averages.
    pub std_error: f64,
    /// Variance of the conditional expectation across factor paths.
    pub sigma1_sq: f64,
    /// Mean conditional variance within a factor path.
    pub sigma2_sq: f64,
}

pub fn nested_payoff(
    lln_losses: &[f64],
    v0_samples: &[Vec<f64>],
    names: usize,
    payoff: Payoff,
) -> Result<NestedEstimate> {
    if lln_losses.len() != v0_samples.len() {
        return Err(Error::MismatchedPaths(format!(
            "{} losses, {} sample sets",
            lln_losses.len(),
            v0_samples.len()
        )));
    }
    if lln_losses.is_empty() {
        return Err(Error::NoPaths);
    }
    let sqrt_n = (names as f64).sqrt();
    let mut path_means = Vec::with_capacity(lln_losses.len());
    let mut within = 0.0;
    let mut j = 0usize;
    for (l, vs) in lln_losses.iter().zip(v0_samples) {
        let values: Vec<f64> = vs.iter().map(|v| payoff.eval(l - v / sqrt_n)).collect();
        let (m, var) = mean_var(&values);
        path_means.push(m);
        within += var;
        j = vs.len();
    }
    let sigma2_sq = within / lln_losses.len() as f64;
    let (estimate, between) = mean_var(&path_means);
    let std_error = (between / path_means.len() as f64).sqrt();
    let sigma1_sq = (between - sigma2_sq / j.max(1) as f64).max(between * 1e-6);
    Ok(NestedEstimate {
        estimate,
        std_error,
        sigma1_sq,
        sigma2_sq,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Allocation {
    /// Factor paths.
    pub m: usize,
    /// Fluctuation samples per factor path.
    pub j: usize,
    /// Unrounded optimum.
    pub m_real: f64,
    pub j_real: f64,
}

/// Budget split minimizing `σ₁²/M + σ₂²/(MJ)` subject to
/// `Mτ₁ + MJτ₂ = τ`, where `τ₁` is the cost of one factor path and `τ₂` of
/// one fluctuation sample.
pub fn optimal_allocation(
    sigma1_sq: f64,
    sigma2_sq: f64,
    tau1: f64,
    tau2: f64,
    total_time: f64,
) -> Result<Allocation> {
    for (name, v) in [
        ("sigma1_sq", sigma1_sq),
        ("sigma2_sq", sigma2_sq),
        ("tau1", tau1),
        ("tau2", tau2),
        ("total_time", total_time),
    ] {
        if !(v.is_finite() && v > 0.0) {
            return Err(Error::DegenerateInputs(format!(
                "{name} = {v} must be positive and finite"
            )));
        }
    }
    let (s1, s2) = (sigma1_sq.sqrt(), sigma2_sq.sqrt());
    // positive root of D·M₀² + 2τ₁σ₁²·M₀ − σ₁² = 0, written without the 1/D factor
    let m0 = sigma1_sq / (sigma1_sq * tau1 + s1 * s2 * (tau1 * tau2).sqrt());
    let j_real = (1.0 - m0 * tau1) / (tau2 * m0);
    let m_real = m0 * total_time;
    Ok(Allocation {
        m: (m_real.round() as usize).max(1),
        j: (j_real.round() as usize).max(1),
        m_real,
        j_real,
    })
}

/// `L̂(t) = L(t) − v₀(t)/√N` at each skeleton time, for each sample.
pub fn loss_process_paths(
    lln_losses: &[f64],
    v0_skeletons: &[Vec<f64>],
    names: usize,
) -> Result<Vec<Vec<f64>>> {
    let sqrt_n = (names as f64).sqrt();
    v0_skeletons
        .iter()
        .map(|v| {
            if v.len() != lln_losses.len() {
                return Err(Error::GridMismatch(format!(
                    "{} skeleton times vs {} loss times",
                    v.len(),
                    lln_losses.len()
                )));
            }
            Ok(lln_losses
                .iter()
                .zip(v)
                .map(|(l, v)| l - v / sqrt_n)
                .collect())
        })
        .collect()
}

/// Fraction of loss paths that exceed `level` at some skeleton time.
pub fn exceedance_fraction(paths: &[Vec<f64>], level: f64) -> f64 {
    if paths.is_empty() {
        return 0.0;
    }
    paths
        .iter()
        .filter(|p| p.iter().any(|&l| l > level))
        .count() as f64
        / paths.len() as f64
}

/// First skeleton index at which the path exceeds `level`.
pub fn first_passage_index(path: &[f64], level: f64) -> Option<usize> {
    path.iter().position(|&l| l > level)
}
