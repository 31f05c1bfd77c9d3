//! Moment hierarchies for a pool made of finitely many obligor types.
//!
//! Each type `p` with weight `w_p` has its own moments `u_k(t, p)`; types
//! interact only through contagion, which sees the aggregate first moment
//! `ū₁ = Σ_p w_p u₁(t, p)`. Fluctuations `v(t, p)` are normalized per type so
//! that the pool-level fluctuation is `v₀ = Σ_p w_p v₀(t, p)`.

use std::io::{self, Write};

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::factor::SystematicPath;
use crate::fluctuation::{
    fine_moments, stacked_scheme2_law, stacked_scheme2_marginal, ConditionalGaussianLaw,
    ConditionalMarginal, CrossTypeNoise, FluctuationConfig, LinearStepper,
};
use crate::lln::{initial_moments, lln_step, sanitize, MomentTrajectory, LLN_SUBSTEPS};
use crate::model::{ObligorParams, TimeGrid, ValidatedPortfolio, WeightedType};
use crate::rng::{stream_rng, LANE_FLUCTUATION};
use crate::table::{fmt_f64, write_csv};

#[derive(Debug, Clone)]
pub struct TypedMomentField {
    types: Vec<WeightedType>,
    per_type: Vec<MomentTrajectory>,
}

impl TypedMomentField {
    pub fn types(&self) -> &[WeightedType] {
        &self.types
    }

    pub fn weights(&self) -> Vec<f64> {
        self.types.iter().map(|t| t.weight).collect()
    }

    pub fn params(&self) -> Vec<ObligorParams> {
        self.types.iter().map(|t| t.params).collect()
    }

    /// Trajectory of type `p`.
    pub fn trajectory(&self, p: usize) -> &MomentTrajectory {
        &self.per_type[p]
    }

    pub fn grid(&self) -> TimeGrid {
        self.per_type[0].grid()
    }

    pub fn path(&self) -> &SystematicPath {
        self.per_type[0].path()
    }

    pub fn truncation(&self) -> usize {
        self.per_type[0].truncation()
    }

    /// `Σ_p w_p u_k(t_i, p)`.
    pub fn aggregate(&self, i: usize, k: usize) -> f64 {
        self.types
            .iter()
            .zip(&self.per_type)
            .fold(0.0, |acc, (t, tr)| acc + t.weight * tr.moments(i)[k])
    }

    /// First-order pool loss `1 − Σ_p w_p u₀(t, p)`.
    pub fn first_order_loss(&self) -> Vec<f64> {
        (0..self.grid().len())
            .map(|i| 1.0 - self.aggregate(i, 0))
            .collect()
    }

    /// CSV with columns `t, type_id, u0, …, uK`.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> io::Result<()> {
        let k = self.truncation();
        let header: Vec<String> = ["t".to_string(), "type_id".to_string()]
            .into_iter()
            .chain((0..=k).map(|j| format!("u{j}")))
            .collect();
        let header: Vec<&str> = header.iter().map(String::as_str).collect();
        let grid = self.grid();
        let rows = (0..grid.len()).flat_map(|i| {
            self.per_type.iter().enumerate().map(move |(p, tr)| {
                let mut row = vec![fmt_f64(grid.time(i)), p.to_string()];
                row.extend(tr.moments(i).iter().map(|&u| fmt_f64(u)));
                row
            })
        });
        write_csv(out, &header, rows)
    }
}

/// Per-type LLN hierarchies advanced in lockstep along one factor path.
pub fn solve_heterogeneous_lln(
    portfolio: &ValidatedPortfolio,
    path: &SystematicPath,
    k_lln: usize,
) -> Result<TypedMomentField> {
    if k_lln < 1 {
        return Err(Error::BadTruncation(k_lln));
    }
    let types = portfolio.types().to_vec();
    let grid = path.grid();
    let mut u: Vec<Vec<Vec<f64>>> = types
        .iter()
        .map(|t| {
            let mut v = Vec::with_capacity(grid.len());
            v.push(initial_moments(t.params.lambda0, k_lln));
            v
        })
        .collect();
    let mut clamped = vec![0usize; types.len()];
    let mut cur: Vec<Vec<f64>> = u.iter().map(|up| up[0].clone()).collect();
    let mut next = cur.clone();
    let m = LLN_SUBSTEPS as f64;
    let h = grid.dt() / m;
    for i in 0..grid.steps() {
        let dv = path.dv()[i] / m;
        for _ in 0..LLN_SUBSTEPS {
            let ubar1 = types
                .iter()
                .zip(&cur)
                .fold(0.0, |acc, (t, c)| acc + t.weight * c[1]);
            for (p, t) in types.iter().enumerate() {
                lln_step(
                    &t.params,
                    &cur[p],
                    ubar1,
                    path.b0()[i],
                    path.sigma0()[i],
                    h,
                    dv,
                    &mut next[p],
                );
                clamped[p] += sanitize(&mut next[p], grid.time(i + 1))?;
            }
            std::mem::swap(&mut cur, &mut next);
        }
        for (up, c) in u.iter_mut().zip(&cur) {
            up.push(c.clone());
        }
    }
    let per_type = types
        .iter()
        .zip(u)
        .zip(clamped)
        .map(|((t, u), clamped)| MomentTrajectory {
            params: t.params,
            k_lln,
            u,
            path: path.clone(),
            clamped,
        })
        .collect();
    Ok(TypedMomentField { types, per_type })
}

/// One sampled path of the stacked per-type fluctuations.
#[derive(Debug, Clone, PartialEq)]
pub struct TypedFluctuationPath {
    k: usize,
    weights: Vec<f64>,
    /// Stacked `(v(t, 1), …, v(t, P))` at each grid point.
    pub v: Vec<DVector<f64>>,
}

impl TypedFluctuationPath {
    /// `v_k(t_i, p)`.
    pub fn moment(&self, i: usize, p: usize, k: usize) -> f64 {
        self.v[i][p * (self.k + 1) + k]
    }

    /// Type `p`'s moments at grid index `i`.
    pub fn type_moments(&self, i: usize, p: usize) -> DVector<f64> {
        self.v[i].rows(p * (self.k + 1), self.k + 1).into_owned()
    }

    /// Pool-level `v₀ = Σ_p w_p v₀(t_i, p)`.
    pub fn aggregate_v0(&self, i: usize) -> f64 {
        self.weights
            .iter()
            .enumerate()
            .fold(0.0, |acc, (p, w)| acc + w * self.moment(i, p, 0))
    }
}

fn stacked_v0(cfg: &FluctuationConfig, types: usize) -> DVector<f64> {
    DVector::from_iterator(
        cfg.dim() * types,
        (0..types).flat_map(|_| cfg.v0.iter().copied()),
    )
}

fn check_depth(field: &TypedMomentField, cfg: &FluctuationConfig) -> Result<()> {
    cfg.validate()?;
    let needed = cfg.required_lln_truncation();
    if field.truncation() < needed {
        return Err(Error::MomentVectorTooShort {
            needed: needed + 1,
            have: field.truncation() + 1,
        });
    }
    Ok(())
}

/// Euler sampler of the stacked fluctuation system on the field's factor path.
///
/// Streams match [`crate::fluctuation::Scheme1Sampler`], so a single-type
/// field reproduces its output exactly.
#[derive(Debug, Clone)]
pub struct HeterogeneousSampler {
    stepper: LinearStepper,
    v0: DVector<f64>,
    k: usize,
    weights: Vec<f64>,
    seed: u64,
    path_index: u64,
}

impl HeterogeneousSampler {
    pub fn new(
        field: &TypedMomentField,
        cfg: &FluctuationConfig,
        mode: CrossTypeNoise,
        seed: u64,
        path_index: u64,
    ) -> Result<Self> {
        check_depth(field, cfg)?;
        let m = cfg.substeps;
        let weights = field.weights();
        let stepper = LinearStepper::build(
            &field.params(),
            &weights,
            cfg.k,
            field.path(),
            m,
            |f| {
                field
                    .per_type
                    .iter()
                    .map(|tr| fine_moments(tr, f, m))
                    .collect()
            },
            mode,
            seed,
            path_index,
        )?;
        Ok(Self {
            stepper,
            v0: stacked_v0(cfg, field.types.len()),
            k: cfg.k,
            weights,
            seed,
            path_index,
        })
    }

    pub fn sample(&self, j: u64) -> Result<TypedFluctuationPath> {
        let mut rng = stream_rng(self.seed, self.path_index, LANE_FLUCTUATION, j);
        let v = self.stepper.sample(&self.v0, &mut rng)?;
        Ok(TypedFluctuationPath {
            k: self.k,
            weights: self.weights.clone(),
            v,
        })
    }
}

/// `j` sample paths of the per-type fluctuations.
pub fn solve_heterogeneous_fluctuation(
    field: &TypedMomentField,
    cfg: &FluctuationConfig,
    j: usize,
    seed: u64,
    mode: CrossTypeNoise,
) -> Result<Vec<TypedFluctuationPath>> {
    let sampler = HeterogeneousSampler::new(field, cfg, mode, seed, 0)?;
    (0..j as u64).map(|s| sampler.sample(s)).collect()
}

/// Conditional Gaussian law of the stacked fluctuations given the factor
/// path; `mean_v0`/`var_v0` of the result refer to the pool-level `v₀`.
pub fn heterogeneous_conditional_law(
    field: &TypedMomentField,
    cfg: &FluctuationConfig,
    mode: CrossTypeNoise,
) -> Result<ConditionalGaussianLaw> {
    check_depth(field, cfg)?;
    stacked_scheme2_law(
        &field.params(),
        &field.weights(),
        cfg.k,
        field.path(),
        |i| {
            field
                .per_type
                .iter()
                .map(|tr| tr.moments(i).to_vec())
                .collect()
        },
        stacked_v0(cfg, field.types.len()),
        mode,
    )
}

/// Marginal of [`heterogeneous_conditional_law`] at grid index `index`.
pub fn heterogeneous_marginal(
    field: &TypedMomentField,
    cfg: &FluctuationConfig,
    mode: CrossTypeNoise,
    index: usize,
) -> Result<ConditionalMarginal> {
    check_depth(field, cfg)?;
    stacked_scheme2_marginal(
        &field.params(),
        &field.weights(),
        cfg.k,
        field.path(),
        |i| {
            field
                .per_type
                .iter()
                .map(|tr| tr.moments(i).to_vec())
                .collect()
        },
        stacked_v0(cfg, field.types.len()),
        mode,
        index,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fluctuation::{scheme1_sample_paths, scheme2_conditional_law};
    use crate::lln::solve_for_params;
    use crate::model::{validate_portfolio, PortfolioSpec, SystematicRiskSpec};
    use crate::rng::LANE_SYSTEMATIC;
    use crate::stats::mean_var;

    fn base(beta_c: f64, beta_s: f64, lambda0: f64) -> ObligorParams {
        ObligorParams {
            alpha: 4.0,
            lambda_bar: 0.2,
            sigma: 0.9,
            beta_c,
            beta_s,
            lambda0,
        }
    }

    fn two_types(a: ObligorParams, b: ObligorParams) -> ValidatedPortfolio {
        validate_portfolio(PortfolioSpec {
            names: 1000,
            types: vec![
                WeightedType {
                    params: a,
                    weight: 0.5,
                },
                WeightedType {
                    params: b,
                    weight: 0.5,
                },
            ],
        })
        .unwrap()
    }

    fn path(seed: u64) -> SystematicPath {
        let grid = TimeGrid::new(0.5, 0.005).unwrap();
        let risk = SystematicRiskSpec::ou(1.0, 2.0, 1.0, 1.0).unwrap();
        SystematicPath::simulate(&risk, grid, &mut stream_rng(seed, 0, LANE_SYSTEMATIC, 0)).unwrap()
    }

    #[test]
    fn single_type_reduces_exactly() {
        let p = base(1.0, 1.0, 0.2);
        let pf = validate_portfolio(PortfolioSpec::homogeneous(100, p)).unwrap();
        let path = path(3);
        let field = solve_heterogeneous_lln(&pf, &path, 13).unwrap();
        let homo = solve_for_params(p, &path, 13).unwrap();
        assert_eq!(field.trajectory(0).all_moments(), homo.all_moments());
        let cfg = FluctuationConfig::new(6);
        let het =
            solve_heterogeneous_fluctuation(&field, &cfg, 3, 9, CrossTypeNoise::Full).unwrap();
        let hom = scheme1_sample_paths(&homo, &cfg, 3, 9).unwrap();
        for (a, b) in het.iter().zip(&hom) {
            assert_eq!(&a.v, b);
        }
        let la = heterogeneous_conditional_law(&field, &cfg, CrossTypeNoise::Full).unwrap();
        let lb = scheme2_conditional_law(&homo, &cfg).unwrap();
        assert_eq!(la.var_v0(100), lb.var_v0(100));
    }

    #[test]
    fn identical_types_match_homogeneous() {
        let p = base(1.0, 1.0, 0.2);
        let path = path(4);
        let field = solve_heterogeneous_lln(&two_types(p, p), &path, 13).unwrap();
        let homo = solve_for_params(p, &path, 13).unwrap();
        for tr in &field.per_type {
            for (a, b) in tr.all_moments().iter().zip(homo.all_moments()) {
                for (x, y) in a.iter().zip(b) {
                    assert!((x - y).abs() <= 1e-12);
                }
            }
        }
        // aggregate law equals the homogeneous law under full cross-type noise
        let cfg = FluctuationConfig::new(6);
        let la = heterogeneous_conditional_law(&field, &cfg, CrossTypeNoise::Full).unwrap();
        let lb = scheme2_conditional_law(&homo, &cfg).unwrap();
        let i = 100;
        assert!(
            (la.var_v0(i) / lb.var_v0(i) - 1.0).abs() < 1e-8,
            "{} vs {}",
            la.var_v0(i),
            lb.var_v0(i)
        );
    }

    #[test]
    fn uncoupled_types_decouple() {
        let (a, b) = (base(0.0, 1.0, 0.1), base(0.0, 1.0, 0.4));
        let path = path(5);
        let field = solve_heterogeneous_lln(&two_types(a, b), &path, 13).unwrap();
        let ha = solve_for_params(a, &path, 13).unwrap();
        let hb = solve_for_params(b, &path, 13).unwrap();
        assert_eq!(field.trajectory(0).all_moments(), ha.all_moments());
        assert_eq!(field.trajectory(1).all_moments(), hb.all_moments());
    }

    #[test]
    fn superposition_without_interaction() {
        let (a, b) = (base(0.0, 0.0, 0.1), base(0.0, 0.0, 0.4));
        let path = path(6);
        let field = solve_heterogeneous_lln(&two_types(a, b), &path, 15).unwrap();
        let la = crate::lln::first_order_loss(&solve_for_params(a, &path, 15).unwrap());
        let lb = crate::lln::first_order_loss(&solve_for_params(b, &path, 15).unwrap());
        for (i, l) in field.first_order_loss().iter().enumerate() {
            assert!((l - 0.5 * (la[i] + lb[i])).abs() < 1e-10);
        }
    }

    #[test]
    fn aggregate_loss_monotone_and_bounded() {
        let field = solve_heterogeneous_lln(
            &two_types(base(1.0, 1.0, 0.1), base(2.0, 0.5, 0.5)),
            &path(7),
            18,
        )
        .unwrap();
        let l = field.first_order_loss();
        assert!(l.windows(2).all(|w| w[1] >= w[0] - 1e-12));
        assert!(l.iter().all(|x| (0.0..=1.0).contains(x)));
        assert!(field.per_type.iter().all(|tr| tr
            .all_moments()
            .iter()
            .flatten()
            .all(|&u| u >= 0.0)));
    }

    #[test]
    fn no_cross_type_correlation_without_contagion() {
        let field = solve_heterogeneous_lln(
            &two_types(base(0.0, 1.0, 0.2), base(0.0, 1.0, 0.3)),
            &path(8),
            13,
        )
        .unwrap();
        let cfg = FluctuationConfig::new(6);
        let sampler = HeterogeneousSampler::new(&field, &cfg, CrossTypeNoise::Full, 1, 0).unwrap();
        let n = 4000;
        let (mut a, mut b) = (Vec::new(), Vec::new());
        for j in 0..n {
            let s = sampler.sample(j).unwrap();
            a.push(s.moment(100, 0, 0));
            b.push(s.moment(100, 1, 0));
        }
        let (ma, va) = mean_var(&a);
        let (mb, vb) = mean_var(&b);
        let corr = a
            .iter()
            .zip(&b)
            .map(|(x, y)| (x - ma) * (y - mb))
            .sum::<f64>()
            / ((n - 1) as f64 * (va * vb).sqrt());
        assert!(corr.abs() < 3.0 / (n as f64).sqrt(), "corr {corr}");
    }

    #[test]
    fn diagonal_mode_has_block_diagonal_noise() {
        let field = solve_heterogeneous_lln(
            &two_types(base(1.0, 1.0, 0.2), base(1.0, 1.0, 0.3)),
            &path(8),
            13,
        )
        .unwrap();
        let cfg = FluctuationConfig::new(6);
        let sampler =
            HeterogeneousSampler::new(&field, &cfg, CrossTypeNoise::Diagonal, 1, 0).unwrap();
        for f in sampler.stepper.factors().iter().step_by(25) {
            let c = f.reconstruct();
            assert!(c.view((0, 7), (7, 7)).iter().all(|&x| x.abs() < 1e-12));
        }
    }

    #[test]
    fn csv_layout() {
        let field = solve_heterogeneous_lln(
            &two_types(base(1.0, 1.0, 0.2), base(1.0, 1.0, 0.3)),
            &path(8),
            3,
        )
        .unwrap();
        let mut buf = Vec::new();
        field.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,type_id,u0,u1,u2,u3\n"));
        assert_eq!(text.lines().count(), 1 + 2 * 101);
    }
}
