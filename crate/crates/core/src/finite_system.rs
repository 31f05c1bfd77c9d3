//! Monte Carlo simulation of the `N`-name pool.
//!
//! Each name carries an intensity
//! `dλ = −α(λ − λ̄)dt + σ√λ dW + β_C dL + β_S λ dX` and defaults once
//! `∫λ ds` crosses an exponential threshold drawn at the start of the path.
//! Per step: the factor is advanced, every survivor takes a full-truncation
//! Euler step, default clocks are integrated with the trapezoidal rule, and
//! the contagion jump `β_C d/N` for the `d` defaults of the step is added to
//! survivors only after all names have been processed.

use std::io::{self, Write};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::factor::SystematicPath;
use crate::model::{ObligorParams, SystematicRiskSpec, TimeGrid, ValidatedPortfolio};
use crate::rng::{stream_rng, LANE_SYSTEMATIC};
use crate::stats::{self, Summary};
use crate::table::{fmt_f64, write_csv};

#[derive(Debug, Clone, PartialEq)]
pub struct PoolPath {
    pub grid: TimeGrid,
    /// `L^N` at each grid point (up to the simulated horizon).
    pub loss: Vec<f64>,
    pub x: Vec<f64>,
    /// Grid time at which each name's default was detected.
    pub default_times: Vec<Option<f64>>,
    /// Smallest surviving intensity at each grid point (0 once all defaulted).
    pub min_intensity: Vec<f64>,
}

impl PoolPath {
    /// Number of defaults by grid index `i`.
    pub fn defaults_at(&self, i: usize) -> usize {
        (self.loss[i] * self.default_times.len() as f64).round() as usize
    }
}

struct Name {
    id: usize,
    ty: usize,
    lambda: f64,
    clock: f64,
    threshold: f64,
    rng: ChaCha8Rng,
}

/// Simulates one pool on a given factor path up to grid index `last`.
///
/// Name `n` draws from stream `(idio_seed, path_index, n, 0)`.
pub fn simulate_pool_on_path(
    portfolio: &ValidatedPortfolio,
    path: &SystematicPath,
    idio_seed: u64,
    path_index: u64,
    last: usize,
) -> PoolPath {
    let grid = path.grid();
    let n_names = portfolio.names();
    let nf = n_names as f64;
    let params: Vec<ObligorParams> = portfolio.types().iter().map(|t| t.params).collect();
    let mut alive: Vec<Name> = Vec::with_capacity(n_names);
    let mut id = 0;
    for (ty, count) in portfolio.type_counts().into_iter().enumerate() {
        for _ in 0..count {
            let mut rng = stream_rng(idio_seed, path_index, id as u64, 0);
            let threshold: f64 = rng.sample(Exp1);
            alive.push(Name {
                id,
                ty,
                lambda: params[ty].lambda0,
                clock: 0.0,
                threshold,
                rng,
            });
            id += 1;
        }
    }
    let dt = grid.dt();
    let sq = dt.sqrt();
    let min_alive = |alive: &[Name]| alive.iter().map(|n| n.lambda).fold(f64::INFINITY, f64::min);
    let mut loss = Vec::with_capacity(last + 1);
    let mut min_intensity = Vec::with_capacity(last + 1);
    let mut default_times = vec![None; n_names];
    let mut defaulted = 0usize;
    loss.push(0.0);
    min_intensity.push(min_alive(&alive));
    let mut per_type_defaults = vec![0usize; params.len()];
    for i in 0..last {
        let dx = path.dx(i);
        let t_next = grid.time(i + 1);
        per_type_defaults.iter_mut().for_each(|d| *d = 0);
        let mut j = 0;
        while j < alive.len() {
            let name = &mut alive[j];
            let p = &params[name.ty];
            let l = name.lambda;
            let z: f64 = name.rng.sample(StandardNormal);
            let next = (l
                + p.alpha * (p.lambda_bar - l) * dt
                + p.sigma * l.sqrt() * sq * z
                + p.beta_s * l * dx)
                .max(0.0);
            name.clock += 0.5 * (l + next) * dt;
            name.lambda = next;
            if name.clock >= name.threshold {
                default_times[name.id] = Some(t_next);
                per_type_defaults[name.ty] += 1;
                alive.swap_remove(j);
            } else {
                j += 1;
            }
        }
        let d: usize = per_type_defaults.iter().sum();
        if d > 0 {
            defaulted += d;
            let jumps: Vec<f64> = params.iter().map(|p| p.beta_c * d as f64 / nf).collect();
            for name in alive.iter_mut() {
                name.lambda += jumps[name.ty];
            }
        }
        loss.push(defaulted as f64 / nf);
        min_intensity.push(if alive.is_empty() {
            0.0
        } else {
            min_alive(&alive)
        });
    }
    PoolPath {
        grid,
        loss,
        x: path.x()[..=last].to_vec(),
        default_times,
        min_intensity,
    }
}

/// Pool path whose factor comes from `(sys_seed, path_index)` and whose names
/// come from `(idio_seed, path_index)`.
pub fn simulate_pool_with(
    portfolio: &ValidatedPortfolio,
    risk: &SystematicRiskSpec,
    grid: TimeGrid,
    idio_seed: u64,
    sys_seed: u64,
    path_index: u64,
) -> Result<PoolPath> {
    let path = factor_path(risk, grid, sys_seed, path_index)?;
    Ok(simulate_pool_on_path(
        portfolio,
        &path,
        idio_seed,
        path_index,
        grid.steps(),
    ))
}

pub fn simulate_pool(
    portfolio: &ValidatedPortfolio,
    risk: &SystematicRiskSpec,
    grid: TimeGrid,
    seed: u64,
) -> Result<PoolPath> {
    simulate_pool_with(portfolio, risk, grid, seed, seed, 0)
}

/// Factor path `m` of a run with master seed `seed`; shared by the pool
/// simulator and the approximations.
pub fn factor_path(
    risk: &SystematicRiskSpec,
    grid: TimeGrid,
    seed: u64,
    m: u64,
) -> Result<SystematicPath> {
    SystematicPath::simulate(risk, grid, &mut stream_rng(seed, m, LANE_SYSTEMATIC, 0))
}

#[derive(Debug, Clone)]
pub struct EmpiricalLossDistribution {
    pub horizon: f64,
    /// Loss at the horizon, in path order.
    pub samples: Vec<f64>,
    pub summary: Summary,
    sorted: Vec<f64>,
}

impl EmpiricalLossDistribution {
    pub fn from_samples(horizon: f64, samples: Vec<f64>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::NoPaths);
        }
        let summary = Summary::of(&samples);
        let sorted = stats::sorted(&samples);
        Ok(Self {
            horizon,
            samples,
            summary,
            sorted,
        })
    }

    pub fn sorted(&self) -> &[f64] {
        &self.sorted
    }

    pub fn mean(&self) -> f64 {
        self.summary.mean
    }

    pub fn std_error(&self) -> f64 {
        self.summary.std_error()
    }

    pub fn cdf(&self, x: f64) -> f64 {
        stats::ecdf(&self.sorted, x)
    }

    pub fn quantile(&self, level: f64) -> Result<f64> {
        stats::quantile_sorted(&self.sorted, level)
    }

    /// CSV with columns `path_id, loss_at_t`.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> io::Result<()> {
        let rows = self
            .samples
            .iter()
            .enumerate()
            .map(|(i, &l)| vec![i.to_string(), fmt_f64(l)]);
        write_csv(out, &["path_id", "loss_at_t"], rows)
    }
}

/// Losses at `t` from `paths` independent pools (independent factor paths).
///
/// Path `m` uses factor stream `(seed, m)` and name streams `(seed, m, n)`;
/// results do not depend on the thread count.
pub fn empirical_loss_distribution(
    portfolio: &ValidatedPortfolio,
    risk: &SystematicRiskSpec,
    grid: TimeGrid,
    paths: usize,
    t: f64,
    seed: u64,
) -> Result<EmpiricalLossDistribution> {
    if paths == 0 {
        return Err(Error::NoPaths);
    }
    let last = grid.index_of(t)?;
    let samples = (0..paths as u64)
        .into_par_iter()
        .map(|m| {
            let path = factor_path(risk, grid, seed, m)?;
            Ok(simulate_pool_on_path(portfolio, &path, seed, m, last).loss[last])
        })
        .collect::<Result<Vec<f64>>>()?;
    EmpiricalLossDistribution::from_samples(t, samples)
}

/// CSV with columns `path_id, t, loss, x` for a set of pool paths.
pub fn write_trajectories<W: Write>(out: &mut W, paths: &[PoolPath]) -> io::Result<()> {
    let rows = paths.iter().enumerate().flat_map(|(m, p)| {
        (0..p.loss.len()).map(move |i| {
            vec![
                m.to_string(),
                fmt_f64(p.grid.time(i)),
                fmt_f64(p.loss[i]),
                fmt_f64(p.x[i]),
            ]
        })
    });
    write_csv(out, &["path_id", "t", "loss", "x"], rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{validate_portfolio, PortfolioSpec, WeightedType};
    use proptest::prelude::*;

    fn params(alpha: f64, sigma: f64, beta_c: f64, beta_s: f64, lambda0: f64) -> ObligorParams {
        ObligorParams {
            alpha,
            lambda_bar: 0.2,
            sigma,
            beta_c,
            beta_s,
            lambda0,
        }
    }

    fn pool(n: usize, p: ObligorParams) -> ValidatedPortfolio {
        validate_portfolio(PortfolioSpec::homogeneous(n, p)).unwrap()
    }

    fn ou() -> SystematicRiskSpec {
        SystematicRiskSpec::ou(1.0, 2.0, 1.0, 1.0).unwrap()
    }

    #[test]
    fn constant_intensity_mean() {
        let pf = pool(5000, params(0.0, 0.0, 0.0, 0.0, 0.2));
        let grid = TimeGrid::new(1.0, 0.05).unwrap();
        let dist = empirical_loss_distribution(&pf, &ou(), grid, 200, 1.0, 3).unwrap();
        let exact = 1.0 - (-0.2f64).exp();
        assert!((dist.mean() - exact).abs() < 3.0 * dist.std_error());
    }

    #[test]
    fn binomial_variance_without_interaction() {
        let pf = pool(100, params(0.0, 0.0, 0.0, 0.0, 0.2));
        let grid = TimeGrid::new(1.0, 0.1).unwrap();
        let dist = empirical_loss_distribution(&pf, &ou(), grid, 10_000, 1.0, 8).unwrap();
        let p = 1.0 - (-0.2f64).exp();
        let target = p * (1.0 - p) / 100.0;
        assert!((dist.summary.variance / target - 1.0).abs() < 0.1);
    }

    #[test]
    fn contagion_jump_size() {
        // no diffusion or mean reversion: survivor intensities move only by β_C d/N
        let p = ObligorParams {
            alpha: 0.0,
            lambda_bar: 0.0,
            sigma: 0.0,
            beta_c: 2.0,
            beta_s: 0.0,
            lambda0: 3.0,
        };
        let pf = pool(4, p);
        let grid = TimeGrid::new(2.0, 0.01).unwrap();
        for seed in 0..20 {
            let path = simulate_pool(&pf, &SystematicRiskSpec::constant(0.0).unwrap(), grid, seed)
                .unwrap();
            for i in 1..path.loss.len() {
                let d = path.defaults_at(i) - path.defaults_at(i - 1);
                if d > 0 && path.defaults_at(i) < 4 {
                    assert_eq!(
                        path.min_intensity[i] - path.min_intensity[i - 1],
                        0.5 * d as f64
                    );
                    assert_eq!(path.loss[i] - path.loss[i - 1], 0.25 * d as f64);
                }
            }
        }
    }

    #[test]
    fn single_short_step_has_no_loss() {
        let pf = pool(1000, params(4.0, 0.9, 1.0, 1.0, 0.2));
        let grid = TimeGrid::new(1e-6, 1e-6).unwrap();
        let dist = empirical_loss_distribution(&pf, &ou(), grid, 50, 1e-6, 1).unwrap();
        assert!(dist.samples.iter().filter(|&&l| l > 0.0).count() <= 1);
    }

    #[test]
    fn single_path_is_point_mass() {
        let pf = pool(200, params(4.0, 0.9, 1.0, 1.0, 0.2));
        let grid = TimeGrid::new(0.5, 0.005).unwrap();
        let dist = empirical_loss_distribution(&pf, &ou(), grid, 1, 0.5, 1).unwrap();
        assert_eq!(dist.summary.variance, 0.0);
        assert_eq!(dist.quantile(0.01).unwrap(), dist.quantile(0.99).unwrap());
    }

    #[test]
    fn horizon_must_be_on_grid() {
        let pf = pool(10, params(4.0, 0.9, 1.0, 1.0, 0.2));
        let grid = TimeGrid::new(0.5, 0.005).unwrap();
        assert!(matches!(
            empirical_loss_distribution(&pf, &ou(), grid, 2, 0.3333, 1),
            Err(Error::TimeOffGrid { .. })
        ));
        assert_eq!(
            empirical_loss_distribution(&pf, &ou(), grid, 0, 0.5, 1).unwrap_err(),
            Error::NoPaths
        );
    }

    #[test]
    fn factor_irrelevant_without_exposure() {
        let pf = pool(300, params(4.0, 0.9, 1.0, 0.0, 0.2));
        let grid = TimeGrid::new(0.5, 0.005).unwrap();
        let a = simulate_pool_with(&pf, &ou(), grid, 5, 100, 0).unwrap();
        let b = simulate_pool_with(&pf, &ou(), grid, 5, 200, 0).unwrap();
        assert_ne!(a.x, b.x);
        assert_eq!(a.loss, b.loss);
        assert_eq!(a.default_times, b.default_times);
    }

    #[test]
    fn independent_defaults_pass_chi_square() {
        let pf = pool(2, params(0.0, 0.0, 0.0, 0.0, 0.7));
        let grid = TimeGrid::new(1.0, 0.05).unwrap();
        let mut table = vec![vec![0.0; 2]; 2];
        for m in 0..10_000 {
            let p = simulate_pool_with(&pf, &ou(), grid, 4, 4, m).unwrap();
            let a = usize::from(p.default_times[0].is_some());
            let b = usize::from(p.default_times[1].is_some());
            table[a][b] += 1.0;
        }
        let (_, pval) = stats::chi_square_independence(&table);
        assert!(pval > 0.01, "p = {pval}");
    }

    #[test]
    fn heterogeneous_blocks() {
        let a = params(4.0, 0.9, 0.0, 0.0, 0.0);
        let b = ObligorParams {
            lambda_bar: 0.0,
            ..params(0.0, 0.0, 0.0, 0.0, 50.0)
        };
        let spec = PortfolioSpec {
            names: 10,
            types: vec![
                WeightedType {
                    params: a,
                    weight: 0.3,
                },
                WeightedType {
                    params: b,
                    weight: 0.7,
                },
            ],
        };
        let pf = validate_portfolio(spec).unwrap();
        let grid = TimeGrid::new(0.5, 0.005).unwrap();
        let p = simulate_pool(&pf, &ou(), grid, 1).unwrap();
        // type a starts at zero intensity and reverts slowly; type b defaults almost surely
        assert!(p.default_times[3..].iter().all(Option::is_some));
        assert!(p.loss.last().copied().unwrap() >= 0.7);
    }

    #[test]
    fn csv_dump() {
        let dist = EmpiricalLossDistribution::from_samples(1.0, vec![0.25, 0.5]).unwrap();
        let mut buf = Vec::new();
        dist.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.starts_with("path_id,loss_at_t\n0,2.5"));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn loss_monotone_quantized_nonnegative(
            n in 1usize..60,
            alpha in 0.0f64..5.0,
            sigma in 0.0f64..2.0,
            beta_c in 0.0f64..3.0,
            beta_s in -1.0f64..2.0,
            lambda0 in 0.0f64..2.0,
            seed in any::<u64>(),
        ) {
            let pf = pool(n, ObligorParams { alpha, lambda_bar: 0.3, sigma, beta_c, beta_s, lambda0 });
            let grid = TimeGrid::new(1.0, 0.01).unwrap();
            let p = simulate_pool(&pf, &ou(), grid, seed).unwrap();
            prop_assert_eq!(p.loss[0], 0.0);
            for w in p.loss.windows(2) {
                prop_assert!(w[1] >= w[0]);
            }
            for &l in &p.loss {
                let k = l * n as f64;
                prop_assert!((k - k.round()).abs() < 1e-9 && (0.0..=1.0).contains(&l));
            }
            prop_assert!(p.min_intensity.iter().all(|&l| l >= 0.0));
            let q = simulate_pool(&pf, &ou(), grid, seed).unwrap();
            prop_assert_eq!(p.loss, q.loss);
        }
    }
}
