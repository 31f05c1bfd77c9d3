//! Oracles, model builders and property checks shared by the integration
//! test targets.

#![allow(dead_code)]

use nalgebra::DMatrix;
use pooledloss::config::Model;
use pooledloss::finite_system::PoolPath;
use pooledloss::fluctuation::{covariation_matrix, ConditionalGaussianLaw};
use pooledloss::loss::GaussianMixtureLoss;
use pooledloss::numerics::psd_factor;
use pooledloss::{
    validate_portfolio, ObligorParams, PortfolioSpec, SystematicRiskSpec, TimeGrid, WeightedType,
};

pub fn params(
    alpha: f64,
    sigma: f64,
    beta_c: f64,
    beta_s: f64,
    lambda0: f64,
    lambda_bar: f64,
) -> ObligorParams {
    ObligorParams {
        alpha,
        lambda_bar,
        sigma,
        beta_c,
        beta_s,
        lambda0,
    }
}

/// `σ = 0.9, α = 4, λ₀ = λ̄ = 0.2` with the given sensitivities.
pub fn fig_params(beta_c: f64, beta_s: f64) -> ObligorParams {
    params(4.0, 0.9, beta_c, beta_s, 0.2, 0.2)
}

pub fn ou() -> SystematicRiskSpec {
    SystematicRiskSpec::ou(1.0, 2.0, 1.0, 1.0).unwrap()
}

pub fn model(
    p: ObligorParams,
    names: usize,
    risk: SystematicRiskSpec,
    horizon: f64,
    dt: f64,
) -> Model {
    let portfolio = validate_portfolio(PortfolioSpec {
        names,
        types: vec![WeightedType {
            params: p,
            weight: 1.0,
        }],
    })
    .unwrap();
    Model {
        portfolio,
        risk,
        grid: TimeGrid::new(horizon, dt).unwrap(),
    }
}

pub fn typed_model(types: Vec<WeightedType>, names: usize, horizon: f64) -> Model {
    let portfolio = validate_portfolio(PortfolioSpec { names, types }).unwrap();
    Model {
        portfolio,
        risk: ou(),
        grid: TimeGrid::new(horizon, 0.005).unwrap(),
    }
}

/// Survival `E[exp(−∫₀ᵗ λ)]` of a CIR intensity from the affine Riccati
/// system `B' = 1 − αB − ½σ²B²`, `(ln A)' = −αλ̄B`, integrated with RK4.
pub fn riccati_survival(alpha: f64, lambda_bar: f64, sigma: f64, lambda0: f64, t: f64) -> f64 {
    let steps = 100_000;
    let h = t / steps as f64;
    let f = |b: f64| 1.0 - alpha * b - 0.5 * sigma * sigma * b * b;
    // state (B, ln A)
    let rhs = |b: f64| (f(b), -alpha * lambda_bar * b);
    let (mut b, mut ln_a) = (0.0f64, 0.0f64);
    for _ in 0..steps {
        let k1 = rhs(b);
        let k2 = rhs(b + 0.5 * h * k1.0);
        let k3 = rhs(b + 0.5 * h * k2.0);
        let k4 = rhs(b + h * k3.0);
        b += h / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0);
        ln_a += h / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1);
    }
    (ln_a - b * lambda0).exp()
}

/// Closed-form CIR survival, to cross-check the Riccati integrator.
pub fn cir_survival_closed_form(a: f64, lb: f64, s: f64, l0: f64, t: f64) -> f64 {
    let g = (a * a + 2.0 * s * s).sqrt();
    let e = (g * t).exp() - 1.0;
    let den = (g + a) * e + 2.0 * g;
    let b = 2.0 * e / den;
    let big_a = (2.0 * g * ((a + g) * t / 2.0).exp() / den).powf(2.0 * a * lb / (s * s));
    big_a * (-b * l0).exp()
}

/// Exhaustive search over integer `J` of `(σ₁² + σ₂²/J)/M` with
/// `M = τ/(τ₁ + Jτ₂)`; returns `(M, J)` at the optimum.
pub fn brute_force_allocation(s1: f64, s2: f64, tau1: f64, tau2: f64, tau: f64) -> (f64, usize) {
    let mut best = (f64::INFINITY, 0.0, 0usize);
    let j_max = (tau / tau2).ceil() as usize + 1;
    for j in 1..=j_max.min(1_000_000) {
        let m = tau / (tau1 + j as f64 * tau2);
        let var = (s1 + s2 / j as f64) / m;
        if var < best.0 {
            best = (var, m, j);
        }
    }
    (best.1, best.2)
}

/// Variance of the two-level estimator under budget `τ`, with `M` set by
/// the budget.
pub fn allocation_variance(s1: f64, s2: f64, tau1: f64, tau2: f64, tau: f64, j: f64) -> f64 {
    let m = tau / (tau1 + j * tau2);
    (s1 + s2 / j) / m
}

// ---- property checks: each returns a description of the first violation ----

pub fn check_pool_path(p: &PoolPath, names: usize) -> Result<(), String> {
    let step = 1.0 / names as f64;
    for (i, w) in p.loss.windows(2).enumerate() {
        if w[1] < w[0] {
            return Err(format!("loss decreased at step {i}"));
        }
    }
    for &l in &p.loss {
        let q = l / step;
        if (q - q.round()).abs() > 1e-9 || !(0.0..=1.0).contains(&l) {
            return Err(format!("loss {l} is not a multiple of 1/{names} in [0,1]"));
        }
    }
    if let Some(m) = p.min_intensity.iter().find(|&&m| m < 0.0) {
        return Err(format!("negative intensity {m}"));
    }
    Ok(())
}

pub fn check_sigma_m(u: &[f64], p: &ObligorParams, k: usize) -> Result<(), String> {
    let m = covariation_matrix(u, p, k).map_err(|e| e.to_string())?;
    let asym = (&m - m.transpose()).abs().max();
    if asym > 1e-10 * m.abs().max().max(1.0) {
        return Err(format!("asymmetry {asym:e}"));
    }
    let f = psd_factor(&m).map_err(|e| e.to_string())?;
    let r = f.reconstruct();
    let min_eig = r.symmetric_eigenvalues().min();
    if min_eig < -1e-12 * r.abs().max().max(1e-300) {
        return Err(format!("clipped matrix has eigenvalue {min_eig:e}"));
    }
    Ok(())
}

pub fn check_law_start(law: &ConditionalGaussianLaw) -> Result<(), String> {
    let d = law.dim();
    if law.psi(0) != &DMatrix::<f64>::identity(d, d) {
        return Err("Psi(0) is not the identity".into());
    }
    if law.covariance(0).abs().max() != 0.0 {
        return Err("Sigma(0) is not zero".into());
    }
    Ok(())
}

pub fn check_mixture_cdf(mix: &GaussianMixtureLoss) -> Result<(), String> {
    let lo = mix.quantile(1e-6).unwrap() - 0.1;
    let hi = mix.quantile(1.0 - 1e-6).unwrap() + 0.1;
    let mut prev = 0.0;
    for i in 0..=2000 {
        let x = lo + (hi - lo) * i as f64 / 2000.0;
        let c = mix.cdf(x);
        if !(0.0..=1.0).contains(&c) || c < prev {
            return Err(format!("cdf {c} at {x} after {prev}"));
        }
        prev = c;
    }
    Ok(())
}
