//! End-to-end runs over many factor paths.
//!
//! Factor path `m` of a run with seed `s` comes from stream `(s, m)`, so the
//! pool simulator and every approximation see the same factor paths, and
//! results do not depend on the number of worker threads.

use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::Model;
use crate::error::{Error, Result};
use crate::finite_system::{factor_path, simulate_pool_on_path, EmpiricalLossDistribution};
use crate::fluctuation::{
    gaussian_case, sample_skeleton, scheme2_conditional_law, scheme2_marginal,
    ConditionalGaussianLaw, ConditionalMarginal, CrossTypeNoise, FluctuationConfig, Scheme1Sampler,
};
use crate::heterogeneous::{
    heterogeneous_conditional_law, heterogeneous_marginal, solve_heterogeneous_lln,
    HeterogeneousSampler, TypedMomentField,
};
use crate::lln::{solve_lln_moments, MomentTrajectory};
use crate::loss::{
    expected_payoff_mixture, expected_payoff_samples, mixture_from_moments, nested_payoff,
    optimal_allocation, sampled_mixture, Allocation, EstimatorReport, GaussianMixtureLoss, Payoff,
    SchemeKind,
};
use crate::rng::{stream_rng, LANE_SKELETON};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    FirstOrder,
    Scheme1,
    Scheme2,
    Gaussian,
}

impl Scheme {
    pub fn label(&self) -> &'static str {
        match self {
            Scheme::FirstOrder => "first_order",
            Scheme::Scheme1 => "scheme1",
            Scheme::Scheme2 => "scheme2",
            Scheme::Gaussian => "gaussian",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    /// Factor paths `M`.
    pub paths: usize,
    /// Fluctuation samples per factor path `J` (Scheme 1).
    pub samples: usize,
    /// Fluctuation truncation `K`.
    pub trunc: usize,
    /// LLN truncation; `3K` when absent.
    pub lln_trunc: Option<usize>,
    pub substeps: usize,
    pub seed: u64,
}

impl Settings {
    pub fn new(paths: usize, trunc: usize, seed: u64) -> Self {
        Self {
            paths,
            samples: 20,
            trunc,
            lln_trunc: None,
            substeps: 1,
            seed,
        }
    }

    pub fn lln_trunc(&self) -> usize {
        self.lln_trunc.unwrap_or(3 * self.trunc)
    }

    pub fn fluctuation(&self) -> FluctuationConfig {
        FluctuationConfig::new(self.trunc).with_substeps(self.substeps)
    }

    fn validate(&self) -> Result<()> {
        if self.paths == 0 {
            return Err(Error::NoPaths);
        }
        self.fluctuation().validate()
    }
}

/// LLN solution on one factor path, homogeneous or typed.
#[derive(Debug, Clone)]
pub enum PathSolution {
    Homogeneous(MomentTrajectory),
    Typed(TypedMomentField),
}

/// Scheme-1 sampler matching a [`PathSolution`].
#[derive(Debug, Clone)]
pub enum PathSampler {
    Homogeneous(Scheme1Sampler),
    Typed(HeterogeneousSampler),
}

impl PathSampler {
    /// Pool-level `v₀` at grid index `i` of sample `j`.
    pub fn v0(&self, j: u64, i: usize) -> Result<f64> {
        match self {
            PathSampler::Homogeneous(s) => Ok(s.sample(j)?[i][0]),
            PathSampler::Typed(s) => Ok(s.sample(j)?.aggregate_v0(i)),
        }
    }

    /// Pool-level `v₀` at several grid indices of sample `j`.
    pub fn v0_at(&self, j: u64, idx: &[usize]) -> Result<Vec<f64>> {
        match self {
            PathSampler::Homogeneous(s) => {
                let p = s.sample(j)?;
                Ok(idx.iter().map(|&i| p[i][0]).collect())
            }
            PathSampler::Typed(s) => {
                let p = s.sample(j)?;
                Ok(idx.iter().map(|&i| p.aggregate_v0(i)).collect())
            }
        }
    }
}

impl PathSolution {
    pub fn solve(model: &Model, settings: &Settings, m: u64) -> Result<Self> {
        let path = factor_path(&model.risk, model.grid, settings.seed, m)?;
        if model.portfolio.is_homogeneous() {
            Ok(Self::Homogeneous(solve_lln_moments(
                &model.portfolio,
                &path,
                settings.lln_trunc(),
            )?))
        } else {
            Ok(Self::Typed(solve_heterogeneous_lln(
                &model.portfolio,
                &path,
                settings.lln_trunc(),
            )?))
        }
    }

    /// First-order loss at grid index `i`.
    pub fn loss(&self, i: usize) -> f64 {
        match self {
            Self::Homogeneous(t) => 1.0 - t.moments(i)[0],
            Self::Typed(f) => 1.0 - f.aggregate(i, 0),
        }
    }

    pub fn scheme2_law(&self, cfg: &FluctuationConfig) -> Result<ConditionalGaussianLaw> {
        match self {
            Self::Homogeneous(t) => scheme2_conditional_law(t, cfg),
            Self::Typed(f) => heterogeneous_conditional_law(f, cfg, CrossTypeNoise::Full),
        }
    }

    /// Scheme-2 mean and covariance at grid index `i` only.
    pub fn scheme2_marginal(
        &self,
        cfg: &FluctuationConfig,
        i: usize,
    ) -> Result<ConditionalMarginal> {
        match self {
            Self::Homogeneous(t) => scheme2_marginal(t, cfg, i),
            Self::Typed(f) => heterogeneous_marginal(f, cfg, CrossTypeNoise::Full, i),
        }
    }

    pub fn gaussian_law(&self, cfg: &FluctuationConfig) -> Result<ConditionalGaussianLaw> {
        match self {
            Self::Homogeneous(t) => gaussian_case(t, cfg),
            Self::Typed(f) => {
                if let Some(t) = f.types().iter().find(|t| t.params.beta_s != 0.0) {
                    return Err(Error::RequiresZeroBetaS(t.params.beta_s));
                }
                heterogeneous_conditional_law(f, cfg, CrossTypeNoise::Full)
            }
        }
    }

    pub fn sampler(&self, cfg: &FluctuationConfig, seed: u64, m: u64) -> Result<PathSampler> {
        match self {
            Self::Homogeneous(t) => Ok(PathSampler::Homogeneous(Scheme1Sampler::new(
                t, cfg, seed, m,
            )?)),
            Self::Typed(f) => Ok(PathSampler::Typed(HeterogeneousSampler::new(
                f,
                cfg,
                CrossTypeNoise::Full,
                seed,
                m,
            )?)),
        }
    }
}

/// Loss and `v₀` moments of one factor path at the horizon index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathMoments {
    pub loss: f64,
    pub mean_v0: f64,
    pub var_v0: f64,
}

pub fn scheme2_path(model: &Model, settings: &Settings, m: u64, i: usize) -> Result<PathMoments> {
    let sol = PathSolution::solve(model, settings, m)?;
    let law = sol.scheme2_marginal(&settings.fluctuation(), i)?;
    Ok(PathMoments {
        loss: sol.loss(i),
        mean_v0: law.mean_v0(),
        var_v0: law.var_v0(),
    })
}

/// First-order loss and `J` draws of `v₀` on factor path `m`.
pub fn scheme1_path(
    model: &Model,
    settings: &Settings,
    m: u64,
    i: usize,
    j: usize,
) -> Result<(f64, Vec<f64>)> {
    let sol = PathSolution::solve(model, settings, m)?;
    let sampler = sol.sampler(&settings.fluctuation(), settings.seed, m)?;
    let v0 = (0..j as u64)
        .map(|s| sampler.v0(s, i))
        .collect::<Result<Vec<_>>>()?;
    Ok((sol.loss(i), v0))
}

/// Output of an approximation run at one horizon.
#[derive(Debug, Clone)]
pub struct ApproxRun {
    pub mixture: GaussianMixtureLoss,
    /// Per-path first-order losses `L^m(t)`.
    pub lln_losses: Vec<f64>,
    pub wall_time: f64,
}

impl ApproxRun {
    /// Point-mass mixture of the first-order losses.
    pub fn first_order(&self) -> Result<GaussianMixtureLoss> {
        let z = vec![0.0; self.lln_losses.len()];
        mixture_from_moments(
            &self.lln_losses,
            &z,
            &z,
            self.mixture.names,
            self.mixture.horizon,
        )
    }
}

/// Loss law at `t` under the chosen scheme.
pub fn approximate(
    model: &Model,
    scheme: Scheme,
    settings: &Settings,
    t: f64,
) -> Result<ApproxRun> {
    settings.validate()?;
    let i = model.grid.index_of(t)?;
    let names = model.portfolio.names();
    let start = Instant::now();
    let (mixture, lln_losses) = match scheme {
        Scheme::FirstOrder => {
            let l = (0..settings.paths as u64)
                .into_par_iter()
                .map(|m| Ok(PathSolution::solve(model, settings, m)?.loss(i)))
                .collect::<Result<Vec<f64>>>()?;
            let z = vec![0.0; l.len()];
            (mixture_from_moments(&l, &z, &z, names, t)?, l)
        }
        Scheme::Scheme2 => {
            let pm = (0..settings.paths as u64)
                .into_par_iter()
                .map(|m| scheme2_path(model, settings, m, i))
                .collect::<Result<Vec<_>>>()?;
            mixture_of(&pm, names, t)?
        }
        Scheme::Scheme1 => {
            let per = (0..settings.paths as u64)
                .into_par_iter()
                .map(|m| scheme1_path(model, settings, m, i, settings.samples))
                .collect::<Result<Vec<_>>>()?;
            let (l, v0): (Vec<f64>, Vec<Vec<f64>>) = per.into_iter().unzip();
            (sampled_mixture(&l, &v0, names, t)?, l)
        }
        Scheme::Gaussian => {
            // without systematic exposure the law is the same on every path
            let sol = PathSolution::solve(model, settings, 0)?;
            let law = sol.gaussian_law(&settings.fluctuation())?;
            let pm = PathMoments {
                loss: sol.loss(i),
                mean_v0: law.mean_v0(i),
                var_v0: law.var_v0(i),
            };
            mixture_of(&[pm], names, t)?
        }
    };
    Ok(ApproxRun {
        mixture,
        lln_losses,
        wall_time: start.elapsed().as_secs_f64(),
    })
}

fn mixture_of(pm: &[PathMoments], names: usize, t: f64) -> Result<(GaussianMixtureLoss, Vec<f64>)> {
    let l: Vec<f64> = pm.iter().map(|p| p.loss).collect();
    let mean: Vec<f64> = pm.iter().map(|p| p.mean_v0).collect();
    let var: Vec<f64> = pm.iter().map(|p| p.var_v0).collect();
    Ok((mixture_from_moments(&l, &mean, &var, names, t)?, l))
}

/// Pool losses at `t` from paths `range`, with factor paths shared with the
/// approximations.
pub fn finite_losses(
    model: &Model,
    seed: u64,
    range: std::ops::Range<u64>,
    t: f64,
) -> Result<Vec<f64>> {
    let i = model.grid.index_of(t)?;
    range
        .into_par_iter()
        .map(|m| {
            let path = factor_path(&model.risk, model.grid, seed, m)?;
            Ok(simulate_pool_on_path(&model.portfolio, &path, seed, m, i).loss[i])
        })
        .collect()
}

pub fn finite_distribution(
    model: &Model,
    paths: usize,
    seed: u64,
    t: f64,
) -> Result<EmpiricalLossDistribution> {
    if paths == 0 {
        return Err(Error::NoPaths);
    }
    EmpiricalLossDistribution::from_samples(t, finite_losses(model, seed, 0..paths as u64, t)?)
}

/// Evaluates `f` on indices in parallel chunks until `budget` has elapsed
/// (at least one chunk).
pub fn run_budgeted<T, F>(budget: Duration, chunk: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync,
{
    let start = Instant::now();
    let mut out = Vec::new();
    let mut next = 0u64;
    loop {
        let end = next + chunk.max(1) as u64;
        let part = (next..end)
            .into_par_iter()
            .map(&f)
            .collect::<Result<Vec<T>>>()?;
        out.extend(part);
        next = end;
        if start.elapsed() >= budget {
            return Ok(out);
        }
    }
}

/// Per-unit costs and variance components from a Scheme-1 pilot run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pilot {
    /// Seconds per factor path (factor, LLN moments, sampler set-up).
    pub tau1: f64,
    /// Seconds per fluctuation sample.
    pub tau2: f64,
    pub sigma1_sq: f64,
    pub sigma2_sq: f64,
}

/// Pilot with `m` factor paths and `j` samples each (run serially so the
/// timings are per unit of work).
pub fn scheme1_pilot(
    model: &Model,
    settings: &Settings,
    payoff: Payoff,
    t: f64,
    m: usize,
    j: usize,
) -> Result<Pilot> {
    let i = model.grid.index_of(t)?;
    let (mut setup, mut sampling) = (0.0, 0.0);
    let mut losses = Vec::with_capacity(m);
    let mut draws = Vec::with_capacity(m);
    // pilot streams are offset from the production ones
    let pilot_settings = Settings {
        seed: settings.seed ^ 0x9e37_79b9_7f4a_7c15,
        ..settings.clone()
    };
    for p in 0..m as u64 {
        let t0 = Instant::now();
        let sol = PathSolution::solve(model, &pilot_settings, p)?;
        let sampler = sol.sampler(&pilot_settings.fluctuation(), pilot_settings.seed, p)?;
        let t1 = Instant::now();
        let v = (0..j as u64)
            .map(|s| sampler.v0(s, i))
            .collect::<Result<Vec<_>>>()?;
        sampling += t1.elapsed().as_secs_f64();
        setup += (t1 - t0).as_secs_f64();
        losses.push(sol.loss(i));
        draws.push(v);
    }
    let est = nested_payoff(&losses, &draws, model.portfolio.names(), payoff)?;
    Ok(Pilot {
        tau1: setup / m as f64,
        tau2: sampling / (m * j) as f64,
        sigma1_sq: est.sigma1_sq,
        sigma2_sq: est.sigma2_sq,
    })
}

impl Pilot {
    pub fn allocation(&self, budget_seconds: f64) -> Result<Allocation> {
        optimal_allocation(
            self.sigma1_sq,
            self.sigma2_sq,
            self.tau1,
            self.tau2,
            budget_seconds,
        )
    }
}

/// Payoff estimates from the pool simulator, Scheme 2 and Scheme 1, each
/// given the same wall-clock budget.
pub fn compare_at_budget(
    model: &Model,
    settings: &Settings,
    payoff: Payoff,
    t: f64,
    budget: Duration,
) -> Result<Vec<EstimatorReport>> {
    if budget.is_zero() {
        return Err(Error::Config("budget must be positive".into()));
    }
    settings.fluctuation().validate()?;
    let i = model.grid.index_of(t)?;
    let names = model.portfolio.names();
    let chunk = rayon::current_num_threads() * 4;

    let start = Instant::now();
    let fs = run_budgeted(budget, chunk, |m| {
        let path = factor_path(&model.risk, model.grid, settings.seed, m)?;
        Ok(simulate_pool_on_path(&model.portfolio, &path, settings.seed, m, i).loss[i])
    })?;
    let mut finite = expected_payoff_samples(&fs, payoff, SchemeKind::FiniteSystem);
    finite.wall_time = start.elapsed().as_secs_f64();

    let start = Instant::now();
    let pm = run_budgeted(budget, chunk, |m| scheme2_path(model, settings, m, i))?;
    let (mix, _) = mixture_of(&pm, names, t)?;
    let mut s2 = expected_payoff_mixture(&mix, payoff, SchemeKind::Scheme2);
    s2.wall_time = start.elapsed().as_secs_f64();

    let start = Instant::now();
    let pilot = scheme1_pilot(model, settings, payoff, t, 50, 20)?;
    let j = pilot.allocation(budget.as_secs_f64())?.j;
    let remaining = budget.saturating_sub(start.elapsed());
    let per = run_budgeted(remaining, chunk, |m| scheme1_path(model, settings, m, i, j))?;
    let (l, v0): (Vec<f64>, Vec<Vec<f64>>) = per.into_iter().unzip();
    let est = nested_payoff(&l, &v0, names, payoff)?;
    let s1 = EstimatorReport {
        estimate: est.estimate,
        std_error: est.std_error,
        wall_time: start.elapsed().as_secs_f64(),
        scheme: SchemeKind::Scheme1,
    };
    Ok(vec![finite, s2, s1])
}

/// Approximate loss paths `L(t) − v₀(t)/√N` at `times`, `per_path` samples
/// on each of `settings.paths` factor paths, drawn by Gaussian bridging
/// (`bridge = true`) or by direct Scheme-1 simulation.
pub fn loss_skeletons(
    model: &Model,
    settings: &Settings,
    times: &[f64],
    per_path: usize,
    bridge: bool,
) -> Result<Vec<Vec<f64>>> {
    settings.validate()?;
    let idx: Vec<usize> = times
        .iter()
        .map(|&t| model.grid.index_of(t))
        .collect::<Result<_>>()?;
    let sqrt_n = (model.portfolio.names() as f64).sqrt();
    let cfg = settings.fluctuation();
    let per = (0..settings.paths as u64)
        .into_par_iter()
        .map(|m| {
            let sol = PathSolution::solve(model, settings, m)?;
            let lln: Vec<f64> = idx.iter().map(|&i| sol.loss(i)).collect();
            let v0: Vec<Vec<f64>> = if bridge {
                let law = sol.scheme2_law(&cfg)?;
                (0..per_path as u64)
                    .map(|j| {
                        let mut rng = stream_rng(settings.seed, m, LANE_SKELETON, j);
                        let sk = sample_skeleton(&law, times, &mut rng)?;
                        Ok(sk.iter().map(|v| law.aggregate_v0(v)).collect())
                    })
                    .collect::<Result<_>>()?
            } else {
                let sampler = sol.sampler(&cfg, settings.seed, m)?;
                (0..per_path as u64)
                    .map(|j| sampler.v0_at(j, &idx))
                    .collect::<Result<_>>()?
            };
            Ok(v0
                .into_iter()
                .map(|v| lln.iter().zip(&v).map(|(l, v)| l - v / sqrt_n).collect())
                .collect::<Vec<Vec<f64>>>())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per.into_iter().flatten().collect())
}

/// Time-`t` report of the first-order law (all mass at the LLN losses).
pub fn first_order_report(run: &ApproxRun, payoff: Payoff) -> EstimatorReport {
    let mut r = expected_payoff_samples(&run.lln_losses, payoff, SchemeKind::FirstOrder);
    r.wall_time = run.wall_time;
    r
}
