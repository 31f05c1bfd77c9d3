//! Fluctuation moments `v_k(t) = ∫ λ^k Ξ̄_t(dλ)` of the central-limit correction.
//!
//! Conditionally on the factor path the truncated system is linear,
//!
//! ```text
//! dv = A(t) v dt + diag(kβ_S σ₀) v dV + dM̄,    [dM̄_k, dM̄_j] = Σ_M(t)_{kj} dt,
//! ```
//!
//! with `A` and `Σ_M` built from the LLN moments. Time stepping splits off the
//! diagonal transport `dv_k = k v_k(−α dt + β_S dX)`, which is applied exactly
//! as a factor `g^k` per step, and takes an Euler step for the rest:
//! `v ← G(I + Ã dt)v + ΔM`. A plain Euler step `I + kβ_S dX` can come close
//! to singular on rough factor paths. Three routes are offered:
//!
//! * [`Scheme1Sampler`]: samples of that recursion with spectral draws of `dM̄`;
//! * [`scheme2_conditional_law`]: the conditional Gaussian law of the same
//!   recursion through its fundamental solution `Ψ`;
//! * [`gaussian_case`]: the `β_S = 0` law with an RK4 fundamental solution.
//!
//! [`sample_skeleton`] draws `v` jointly at several times from a conditional
//! law by Gaussian bridging.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::factor::SystematicPath;
use crate::lln::{transport_growth, MomentTrajectory, BLOWUP_LIMIT};
use crate::model::{ObligorParams, TimeGrid};
use crate::numerics::{
    clip_psd, condition_number, conditional_gaussian, integrate_matrix_ode, integrate_split_sde,
    invert, psd_factor, PsdFactor,
};
use crate::rng::{stream_rng, LANE_FLUCTUATION, LANE_REFINE};
use crate::table::fmt_f64;

/// Condition number of `Ψ` past which the Scheme-2 law is rejected.
pub const MAX_PSI_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, PartialEq)]
pub struct FluctuationConfig {
    /// Truncation level `K`; the state is `(v₀, …, v_K)`.
    pub k: usize,
    /// Initial fluctuation moments, length `K + 1`.
    pub v0: Vec<f64>,
    /// Fluctuation steps per LLN step (`dt_fluct = dt / substeps`), Scheme 1 only.
    pub substeps: usize,
}

impl FluctuationConfig {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            v0: vec![0.0; k + 1],
            substeps: 1,
        }
    }

    pub fn with_substeps(mut self, substeps: usize) -> Self {
        self.substeps = substeps;
        self
    }

    pub fn with_v0(mut self, v0: Vec<f64>) -> Self {
        self.v0 = v0;
        self
    }

    pub fn dim(&self) -> usize {
        self.k + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 1 {
            return Err(Error::BadTruncation(self.k));
        }
        if self.v0.len() != self.k + 1 {
            return Err(Error::DimensionMismatch {
                expected: self.k + 1,
                got: self.v0.len(),
            });
        }
        if self.substeps < 1 {
            return Err(Error::BadGrid("substeps must be >= 1".into()));
        }
        Ok(())
    }

    /// LLN truncation needed to close the covariation: `2K + 1`.
    pub fn required_lln_truncation(&self) -> usize {
        2 * self.k + 1
    }
}

/// How martingale noise of different obligor types is correlated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CrossTypeNoise {
    /// Keep the contagion cross-terms between types (their increments share
    /// the same default events).
    #[default]
    Full,
    /// Type-diagonal covariation: types receive independent noise.
    Diagonal,
}

/// Covariation entry between moment `r` of type `a` and moment `c` of type `b`.
///
/// `own_scale` is `Some(1/w)` on same-type blocks (weight `w`) and `None`
/// across types; `ubar1` is the weighted aggregate first moment.
#[allow(clippy::too_many_arguments)]
fn covariation_entry(
    ua: &[f64],
    pa: &ObligorParams,
    ub: &[f64],
    pb: &ObligorParams,
    own_scale: Option<f64>,
    ubar1: f64,
    r: usize,
    c: usize,
    mode: CrossTypeNoise,
) -> f64 {
    let (rf, cf) = (r as f64, c as f64);
    let mut v = 0.0;
    if let Some(scale) = own_scale {
        let diffusive = if r > 0 && c > 0 {
            pa.sigma * pa.sigma * rf * cf * ua[r + c - 1]
        } else {
            0.0
        };
        v = (diffusive + ua[r + c + 1]) * scale;
    } else if mode == CrossTypeNoise::Diagonal {
        return 0.0;
    }
    if r > 0 {
        v -= pa.beta_c * rf * ua[r - 1] * ub[c + 1];
    }
    if c > 0 {
        v -= pb.beta_c * cf * ub[c - 1] * ua[r + 1];
    }
    if r > 0 && c > 0 {
        v += pa.beta_c * pb.beta_c * rf * cf * ua[r - 1] * ub[c - 1] * ubar1;
    }
    v
}

/// Weighted aggregate of each type's first moment.
pub(crate) fn aggregate_first_moment(us: &[&[f64]], weights: &[f64]) -> f64 {
    us.iter()
        .zip(weights)
        .fold(0.0, |acc, (u, w)| acc + w * u[1])
}

/// Stacked `P(K+1)` covariation matrix of per-type normalized fluctuations.
pub(crate) fn stacked_covariation(
    us: &[&[f64]],
    params: &[ObligorParams],
    weights: &[f64],
    k: usize,
    mode: CrossTypeNoise,
) -> Result<DMatrix<f64>> {
    let needed = 2 * k + 2;
    for u in us {
        if u.len() < needed {
            return Err(Error::MomentVectorTooShort {
                needed,
                have: u.len(),
            });
        }
    }
    let n = us.len() * (k + 1);
    let mut m = DMatrix::zeros(n, n);
    stacked_covariation_into(&mut m, us, params, weights, k, mode);
    Ok(m)
}

/// Fills `m` with the stacked covariation; moment lengths are the caller's
/// responsibility.
fn stacked_covariation_into(
    m: &mut DMatrix<f64>,
    us: &[&[f64]],
    params: &[ObligorParams],
    weights: &[f64],
    k: usize,
    mode: CrossTypeNoise,
) {
    let d = k + 1;
    let ubar1 = aggregate_first_moment(us, weights);
    for a in 0..us.len() {
        for b in a..us.len() {
            let own = (a == b).then(|| 1.0 / weights[a]);
            for r in 0..d {
                let c0 = if a == b { r } else { 0 };
                for c in c0..d {
                    let v = covariation_entry(
                        us[a], &params[a], us[b], &params[b], own, ubar1, r, c, mode,
                    );
                    m[(a * d + r, b * d + c)] = v;
                    m[(b * d + c, a * d + r)] = v;
                }
            }
        }
    }
}

/// `Σ_M(t)` of a homogeneous pool from the LLN moments at `t`.
///
/// Needs `u₀ … u_{2K+1}`.
pub fn covariation_matrix(u: &[f64], params: &ObligorParams, k: usize) -> Result<DMatrix<f64>> {
    stacked_covariation(
        &[u],
        std::slice::from_ref(params),
        &[1.0],
        k,
        CrossTypeNoise::Full,
    )
}

/// Which diagonal terms [`stacked_drift`] includes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum DriftPart {
    /// The full generator with `kβ_S b₀ − kα + ½k(k−1)(β_Sσ₀)²` on the diagonal.
    Full,
    /// Everything except the diagonal transport terms, which are applied
    /// exactly through [`transport_vector`].
    Coupling,
}

/// Stacked drift matrix of the linear fluctuation system.
#[allow(clippy::too_many_arguments)]
pub(crate) fn stacked_drift(
    us: &[&[f64]],
    params: &[ObligorParams],
    weights: &[f64],
    k: usize,
    b0: f64,
    s0: f64,
    part: DriftPart,
) -> DMatrix<f64> {
    let n = us.len() * (k + 1);
    let mut a = DMatrix::zeros(n, n);
    stacked_drift_into(&mut a, us, params, weights, k, b0, s0, part);
    a
}

/// Overwrites `a` with [`stacked_drift`].
#[allow(clippy::too_many_arguments)]
fn stacked_drift_into(
    a: &mut DMatrix<f64>,
    us: &[&[f64]],
    params: &[ObligorParams],
    weights: &[f64],
    k: usize,
    b0: f64,
    s0: f64,
    part: DriftPart,
) {
    let d = k + 1;
    let ubar1 = aggregate_first_moment(us, weights);
    a.fill(0.0);
    for (p, (u, pr)) in us.iter().zip(params).enumerate() {
        let base = p * d;
        for row in 0..d {
            let kf = row as f64;
            if row > 0 {
                // contagion feedback through the aggregate v₁
                for (q, w) in weights.iter().enumerate() {
                    a[(base + row, q * d + 1)] += pr.beta_c * kf * u[row - 1] * w;
                }
                a[(base + row, base + row - 1)] += 0.5 * pr.sigma * pr.sigma * kf * (kf - 1.0)
                    + pr.alpha * pr.lambda_bar * kf
                    + kf * pr.beta_c * ubar1;
            }
            if row < k {
                a[(base + row, base + row + 1)] -= 1.0;
            }
            if part == DriftPart::Full {
                let bs = pr.beta_s * s0;
                a[(base + row, base + row)] +=
                    kf * pr.beta_s * b0 - kf * pr.alpha + 0.5 * kf * (kf - 1.0) * bs * bs;
            }
        }
    }
}

/// Per-coordinate growth `g_p^k` of the transport part over one step.
pub(crate) fn transport_vector(
    params: &[ObligorParams],
    k: usize,
    b0: f64,
    s0: f64,
    dt: f64,
    dv: f64,
) -> DVector<f64> {
    let d = k + 1;
    let g: Vec<f64> = params
        .iter()
        .map(|p| transport_growth(p, b0, s0, dt, dv))
        .collect();
    DVector::from_fn(params.len() * d, |i, _| g[i / d].powi((i % d) as i32))
}

/// Precomputed coefficients of the split recursion on one factor path.
#[derive(Debug, Clone)]
pub(crate) struct LinearStepper {
    drift: Vec<DMatrix<f64>>,
    growth: Vec<DVector<f64>>,
    factors: Vec<PsdFactor>,
    dt: f64,
    substeps: usize,
    grid: TimeGrid,
}

/// Splits each coarse Brownian increment into `m` pieces with the exact
/// conditional law given their sum.
fn refine_increments(dv: &[f64], dt: f64, m: usize, seed: u64, path_index: u64) -> Vec<f64> {
    if m == 1 {
        return dv.to_vec();
    }
    let mut rng = stream_rng(seed, path_index, LANE_REFINE, 0);
    let sq = (dt / m as f64).sqrt();
    let mut out = Vec::with_capacity(dv.len() * m);
    let mut z = vec![0.0; m];
    for &inc in dv {
        for zi in z.iter_mut() {
            *zi = rng.sample(StandardNormal);
        }
        let mean = z.iter().sum::<f64>() / m as f64;
        out.extend(z.iter().map(|zi| inc / m as f64 + sq * (zi - mean)));
    }
    out
}

impl LinearStepper {
    /// `moments(f)` returns each type's LLN moments at fine index `f`.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn build<F>(
        params: &[ObligorParams],
        weights: &[f64],
        k: usize,
        path: &SystematicPath,
        substeps: usize,
        moments: F,
        mode: CrossTypeNoise,
        seed: u64,
        path_index: u64,
    ) -> Result<Self>
    where
        F: Fn(usize) -> Vec<Vec<f64>>,
    {
        let grid = path.grid();
        let m = substeps.max(1);
        let dt = grid.dt() / m as f64;
        let fine = grid.steps() * m;
        let dv = refine_increments(path.dv(), grid.dt(), m, seed, path_index);
        let mut drift = Vec::with_capacity(fine);
        let mut growth = Vec::with_capacity(fine);
        let mut factors = Vec::with_capacity(fine);
        for f in 0..fine {
            let i = f / m;
            let us = moments(f);
            let refs: Vec<&[f64]> = us.iter().map(|u| u.as_slice()).collect();
            let (b0, s0) = (path.b0()[i], path.sigma0()[i]);
            drift.push(stacked_drift(
                &refs,
                params,
                weights,
                k,
                b0,
                s0,
                DriftPart::Coupling,
            ));
            growth.push(transport_vector(params, k, b0, s0, dt, dv[f]));
            factors.push(psd_factor(&stacked_covariation(
                &refs, params, weights, k, mode,
            )?)?);
        }
        Ok(Self {
            drift,
            growth,
            factors,
            dt,
            substeps: m,
            grid,
        })
    }

    pub(crate) fn factors(&self) -> &[PsdFactor] {
        &self.factors
    }

    /// One path of `v ← G(v + A v dt) + F z √dt`; returns the state at every
    /// coarse grid point.
    pub(crate) fn sample<R: Rng + ?Sized>(
        &self,
        v0: &DVector<f64>,
        rng: &mut R,
    ) -> Result<Vec<DVector<f64>>> {
        let sq = self.dt.sqrt();
        let mut out = Vec::with_capacity(self.grid.len());
        let mut v = v0.clone();
        out.push(v.clone());
        for f in 0..self.drift.len() {
            let mut next = v.clone();
            next.gemv(self.dt, &self.drift[f], &v, 1.0);
            next.component_mul_assign(&self.growth[f]);
            self.factors[f].add_scaled_sample(sq, rng, &mut next);
            if let Some((index, value)) = next
                .iter()
                .enumerate()
                .find(|(_, x)| !x.is_finite() || x.abs() > BLOWUP_LIMIT)
            {
                return Err(Error::UnstableBlowup {
                    index,
                    value: *value,
                    t: (f + 1) as f64 * self.dt,
                });
            }
            v = next;
            if (f + 1) % self.substeps == 0 {
                out.push(v.clone());
            }
        }
        Ok(out)
    }
}

fn check_lln_depth(traj: &MomentTrajectory, cfg: &FluctuationConfig) -> Result<()> {
    cfg.validate()?;
    let needed = cfg.required_lln_truncation();
    if traj.truncation() < needed {
        return Err(Error::MomentVectorTooShort {
            needed: needed + 1,
            have: traj.truncation() + 1,
        });
    }
    Ok(())
}

/// Moments at a fine index, interpolated when the fluctuation grid is finer.
pub(crate) fn fine_moments(traj: &MomentTrajectory, f: usize, m: usize) -> Vec<f64> {
    if m == 1 {
        traj.moments(f).to_vec()
    } else {
        traj.interpolate(f as f64 * traj.grid().dt() / m as f64)
    }
}

/// Direct sampler of the fluctuation system on one factor path.
///
/// The drift, noise loadings and spectral factors of `Σ_M` are computed once
/// and shared by every sample.
#[derive(Debug, Clone)]
pub struct Scheme1Sampler {
    stepper: LinearStepper,
    v0: DVector<f64>,
    seed: u64,
    path_index: u64,
}

impl Scheme1Sampler {
    pub fn new(
        traj: &MomentTrajectory,
        cfg: &FluctuationConfig,
        seed: u64,
        path_index: u64,
    ) -> Result<Self> {
        check_lln_depth(traj, cfg)?;
        let m = cfg.substeps;
        let stepper = LinearStepper::build(
            std::slice::from_ref(traj.params()),
            &[1.0],
            cfg.k,
            traj.path(),
            m,
            |f| vec![fine_moments(traj, f, m)],
            CrossTypeNoise::Full,
            seed,
            path_index,
        )?;
        Ok(Self {
            stepper,
            v0: DVector::from_vec(cfg.v0.clone()),
            seed,
            path_index,
        })
    }

    /// Sample `j`: `v` at every grid point of the LLN grid.
    pub fn sample(&self, j: u64) -> Result<Vec<DVector<f64>>> {
        let mut rng = stream_rng(self.seed, self.path_index, LANE_FLUCTUATION, j);
        self.stepper.sample(&self.v0, &mut rng)
    }

    /// Spectral factors of `Σ_M` at each fluctuation step.
    pub fn factors(&self) -> &[PsdFactor] {
        self.stepper.factors()
    }
}

/// `J` Scheme-1 sample paths on the trajectory's factor path.
pub fn scheme1_sample_paths(
    traj: &MomentTrajectory,
    cfg: &FluctuationConfig,
    j: usize,
    seed: u64,
) -> Result<Vec<Vec<DVector<f64>>>> {
    let sampler = Scheme1Sampler::new(traj, cfg, seed, 0)?;
    (0..j as u64).map(|s| sampler.sample(s)).collect()
}

/// CSV with columns `t, v0, …, vK` for one sampled path on `grid`.
pub fn write_fluctuation_csv<W: std::io::Write>(
    out: &mut W,
    grid: TimeGrid,
    v: &[DVector<f64>],
) -> std::io::Result<()> {
    let rows: Vec<&[f64]> = v.iter().map(|x| x.as_slice()).collect();
    crate::table::write_series(out, grid.times(), "v", &rows)
}

/// `w̃_k = exp(−½β_S² k(k−1) ∫σ₀²) v_k` along one sampled path.
pub fn stabilized_fluctuation(traj: &MomentTrajectory, v: &[DVector<f64>]) -> Vec<DVector<f64>> {
    let bs2 = traj.params().beta_s * traj.params().beta_s;
    v.iter()
        .zip(traj.int_sigma0_sq())
        .map(|(vi, &int)| {
            DVector::from_fn(vi.len(), |k, _| {
                let kf = k as f64;
                (-0.5 * bs2 * kf * (kf - 1.0) * int).exp() * vi[k]
            })
        })
        .collect()
}

/// Gaussian law of `v` given the factor path:
/// `v(t) ~ N(Ψ(t)v₀, Σ(t))`, `Σ(τ₁,τ₂) = Ψ(τ₁) I(τ₁∧τ₂) Ψ(τ₂)ᵀ`.
#[derive(Debug, Clone)]
pub struct ConditionalGaussianLaw {
    grid: TimeGrid,
    psi: Vec<DMatrix<f64>>,
    /// Cumulative `∫ Ψ⁻¹ Σ_M Ψ⁻ᵀ ds`.
    integral: Vec<DMatrix<f64>>,
    cov: Vec<DMatrix<f64>>,
    v0: DVector<f64>,
    /// Nonzero entries of the vector mapping the state to the pool-level `v₀`.
    agg: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Quadrature {
    Trapezoid,
    /// `Ψ⁻¹` at the right end of each step and `Σ_M` at the left, which is
    /// the exact covariance of the discrete recursion.
    EulerConsistent,
}

impl ConditionalGaussianLaw {
    fn assemble(
        grid: TimeGrid,
        psi: Vec<DMatrix<f64>>,
        sigma_m: &[DMatrix<f64>],
        v0: DVector<f64>,
        quad: Quadrature,
    ) -> Result<Self> {
        let dt = grid.dt();
        let mut inv = Vec::with_capacity(psi.len());
        for (i, p) in psi.iter().enumerate() {
            let pi = invert(p).ok_or(Error::IllConditionedPsi {
                cond: f64::INFINITY,
                t: grid.time(i),
            })?;
            let cond = condition_number(p);
            if !cond.is_finite() || cond > MAX_PSI_CONDITION {
                return Err(Error::IllConditionedPsi {
                    cond,
                    t: grid.time(i),
                });
            }
            inv.push(pi);
        }
        let sandwich = |inv: &DMatrix<f64>, s: &DMatrix<f64>| inv * s * inv.transpose();
        let d = v0.len();
        let mut integral = Vec::with_capacity(psi.len());
        let mut acc = DMatrix::<f64>::zeros(d, d);
        integral.push(acc.clone());
        let mut prev = sandwich(&inv[0], &sigma_m[0]);
        for i in 0..grid.steps() {
            match quad {
                Quadrature::Trapezoid => {
                    let next = sandwich(&inv[i + 1], &sigma_m[i + 1]);
                    acc += (&prev + &next) * (0.5 * dt);
                    prev = next;
                }
                Quadrature::EulerConsistent => {
                    acc += sandwich(&inv[i + 1], &sigma_m[i]) * dt;
                }
            }
            acc = (&acc + acc.transpose()) * 0.5;
            integral.push(acc.clone());
        }
        let cov = psi
            .iter()
            .zip(&integral)
            .map(|(p, int)| {
                let c = p * int * p.transpose();
                (&c + c.transpose()) * 0.5
            })
            .collect();
        Ok(Self {
            grid,
            psi,
            integral,
            cov,
            v0,
            agg: vec![(0, 1.0)],
        })
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    pub fn dim(&self) -> usize {
        self.v0.len()
    }

    /// Fundamental solution at grid index `i`.
    pub fn psi(&self, i: usize) -> &DMatrix<f64> {
        &self.psi[i]
    }

    /// `Ψ(t_i) v₀`.
    pub fn mean(&self, i: usize) -> DVector<f64> {
        &self.psi[i] * &self.v0
    }

    /// `Σ(t_i)`.
    pub fn covariance(&self, i: usize) -> &DMatrix<f64> {
        &self.cov[i]
    }

    fn with_aggregation(mut self, agg: Vec<(usize, f64)>) -> Self {
        self.agg = agg;
        self
    }

    /// Mean of the pool-level `v₀(t_i)`.
    pub fn mean_v0(&self, i: usize) -> f64 {
        let m = self.mean(i);
        self.agg.iter().map(|&(j, w)| w * m[j]).sum()
    }

    /// Pool-level `v₀` of a state vector.
    pub fn aggregate_v0(&self, v: &DVector<f64>) -> f64 {
        self.agg.iter().map(|&(j, w)| w * v[j]).sum()
    }

    /// `Var[v₀(t_i)]` of the pool-level fluctuation.
    pub fn var_v0(&self, i: usize) -> f64 {
        let c = &self.cov[i];
        let mut v = 0.0;
        for &(a, wa) in &self.agg {
            for &(b, wb) in &self.agg {
                v += wa * wb * c[(a, b)];
            }
        }
        v
    }

    /// CSV with columns `t, Sigma_00`, the pool-level `Var[v₀(t) | X]`.
    pub fn write_covariance_csv<W: std::io::Write>(&self, out: &mut W) -> std::io::Result<()> {
        let rows =
            (0..self.grid.len()).map(|i| vec![fmt_f64(self.grid.time(i)), fmt_f64(self.var_v0(i))]);
        crate::table::write_csv(out, &["t", "Sigma_00"], rows)
    }

    /// `Σ(τ₁, τ₂)` for grid indices.
    pub fn cross_covariance_idx(&self, i1: usize, i2: usize) -> DMatrix<f64> {
        if i1 == i2 {
            return self.cov[i1].clone();
        }
        &self.psi[i1] * &self.integral[i1.min(i2)] * self.psi[i2].transpose()
    }

    /// `Cov[v(τ₁), v(τ₂) | X]`; both times must lie on the grid.
    pub fn cross_covariance(&self, tau1: f64, tau2: f64) -> Result<DMatrix<f64>> {
        Ok(self.cross_covariance_idx(self.grid.index_of(tau1)?, self.grid.index_of(tau2)?))
    }
}

fn projected_sigma_m(traj: &MomentTrajectory, k: usize) -> Result<Vec<DMatrix<f64>>> {
    traj.all_moments()
        .iter()
        .map(|u| Ok(psd_factor(&covariation_matrix(u, traj.params(), k)?)?.reconstruct()))
        .collect()
}

fn ode_law(traj: &MomentTrajectory, cfg: &FluctuationConfig) -> Result<ConditionalGaussianLaw> {
    let k = cfg.k;
    let params = [*traj.params()];
    let psi = integrate_matrix_ode(
        cfg.dim(),
        |t| {
            let u = traj.interpolate(t);
            stacked_drift(&[&u], &params, &[1.0], k, 0.0, 0.0, DriftPart::Full)
        },
        traj.grid(),
    )?;
    let sigma_m = projected_sigma_m(traj, k)?;
    ConditionalGaussianLaw::assemble(
        traj.grid(),
        psi.into_mats(),
        &sigma_m,
        DVector::from_vec(cfg.v0.clone()),
        Quadrature::Trapezoid,
    )
}

/// Semi-analytic law when there is no systematic exposure (`β_S = 0`).
///
/// `Ψ` is integrated with RK4 (moments interpolated at step midpoints) and
/// `Σ(t)` accumulated with the trapezoidal rule.
pub fn gaussian_case(
    traj: &MomentTrajectory,
    cfg: &FluctuationConfig,
) -> Result<ConditionalGaussianLaw> {
    let bs = traj.params().beta_s;
    if bs != 0.0 {
        return Err(Error::RequiresZeroBetaS(bs));
    }
    check_lln_depth(traj, cfg)?;
    ode_law(traj, cfg)
}

/// Conditional Gaussian law of `v` given the factor path (Scheme 2).
///
/// A frozen factor path (`dX ≡ 0`, `σ₀ ≡ 0`) has no stochastic forcing and is
/// routed through the deterministic RK4 solver.
pub fn scheme2_conditional_law(
    traj: &MomentTrajectory,
    cfg: &FluctuationConfig,
) -> Result<ConditionalGaussianLaw> {
    check_lln_depth(traj, cfg)?;
    let path = traj.path();
    if is_frozen(path) {
        return ode_law(traj, cfg);
    }
    stacked_scheme2_law(
        std::slice::from_ref(traj.params()),
        &[1.0],
        cfg.k,
        path,
        |i| vec![traj.moments(i).to_vec()],
        DVector::from_vec(cfg.v0.clone()),
        CrossTypeNoise::Full,
    )
}

/// Scheme-2 law of a stacked per-type system; `moments(i)` gives each type's
/// LLN moments at grid index `i`.
pub(crate) fn stacked_scheme2_law<F>(
    params: &[ObligorParams],
    weights: &[f64],
    k: usize,
    path: &SystematicPath,
    moments: F,
    v0: DVector<f64>,
    mode: CrossTypeNoise,
) -> Result<ConditionalGaussianLaw>
where
    F: Fn(usize) -> Vec<Vec<f64>>,
{
    let grid = path.grid();
    let all: Vec<Vec<Vec<f64>>> = (0..grid.len()).map(moments).collect();
    let refs = |i: usize| -> Vec<&[f64]> { all[i].iter().map(|u| u.as_slice()).collect() };
    let (b0, s0, dv) = (path.b0(), path.sigma0(), path.dv());
    let psi = integrate_split_sde(
        v0.len(),
        |i| {
            stacked_drift(
                &refs(i),
                params,
                weights,
                k,
                b0[i],
                s0[i],
                DriftPart::Coupling,
            )
        },
        |i| transport_vector(params, k, b0[i], s0[i], grid.dt(), dv[i]),
        grid,
    )?;
    let sigma_m = (0..grid.len())
        .map(|i| {
            Ok(
                psd_factor(&stacked_covariation(&refs(i), params, weights, k, mode)?)?
                    .reconstruct(),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let d = k + 1;
    let agg = weights
        .iter()
        .enumerate()
        .map(|(p, &w)| (p * d, w))
        .collect();
    Ok(ConditionalGaussianLaw::assemble(
        grid,
        psi.into_mats(),
        &sigma_m,
        v0,
        Quadrature::EulerConsistent,
    )?
    .with_aggregation(agg))
}

/// Mean and covariance of `v` at a single grid time.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalMarginal {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    agg: Vec<(usize, f64)>,
}

impl ConditionalMarginal {
    fn from_law(law: &ConditionalGaussianLaw, i: usize) -> Self {
        Self {
            mean: law.mean(i),
            cov: law.covariance(i).clone(),
            agg: law.agg.clone(),
        }
    }

    pub fn mean_v0(&self) -> f64 {
        self.agg.iter().map(|&(j, w)| w * self.mean[j]).sum()
    }

    pub fn var_v0(&self) -> f64 {
        let mut v = 0.0;
        for &(a, wa) in &self.agg {
            for &(b, wb) in &self.agg {
                v += wa * wb * self.cov[(a, b)];
            }
        }
        v.max(0.0)
    }
}

/// Scheme-2 marginal at grid index `index` by the forward recursion
/// `m ← P m`, `C ← P C Pᵀ + Σ_M dt` with `P = G(I + Ã dt)`.
///
/// This is the law of [`stacked_scheme2_law`] at one time, without forming
/// or inverting `Ψ`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn stacked_scheme2_marginal<F>(
    params: &[ObligorParams],
    weights: &[f64],
    k: usize,
    path: &SystematicPath,
    moments: F,
    v0: DVector<f64>,
    mode: CrossTypeNoise,
    index: usize,
) -> Result<ConditionalMarginal>
where
    F: Fn(usize) -> Vec<Vec<f64>>,
{
    let grid = path.grid();
    if index >= grid.len() {
        return Err(Error::TimeOffGrid {
            t: index as f64 * grid.dt(),
        });
    }
    let dt = grid.dt();
    let n = v0.len();
    let (b0, s0, dv) = (path.b0(), path.sigma0(), path.dv());
    let needed = 2 * k + 2;
    let mut mean = v0;
    let mut next = DVector::<f64>::zeros(n);
    let mut cov = DMatrix::<f64>::zeros(n, n);
    let mut tmp = DMatrix::<f64>::zeros(n, n);
    let mut a = DMatrix::<f64>::zeros(n, n);
    let mut growth = vec![0.0; n];
    // nonzeros (row, col, value) of P, row by row
    let mut sparse: Vec<(usize, usize, f64)> = Vec::with_capacity(n * (4 + params.len()));
    for i in 0..index {
        let us = moments(i);
        let refs: Vec<&[f64]> = us.iter().map(|u| u.as_slice()).collect();
        if let Some(u) = refs.iter().find(|u| u.len() < needed) {
            return Err(Error::MomentVectorTooShort {
                needed,
                have: u.len(),
            });
        }
        stacked_drift_into(
            &mut a,
            &refs,
            params,
            weights,
            k,
            b0[i],
            s0[i],
            DriftPart::Coupling,
        );
        for (p, pr) in params.iter().enumerate() {
            let g = transport_growth(pr, b0[i], s0[i], dt, dv[i]);
            let mut gk = 1.0;
            for slot in &mut growth[p * (k + 1)..(p + 1) * (k + 1)] {
                *slot = gk;
                gk *= g;
            }
        }
        sparse.clear();
        for (r, &gr) in growth.iter().enumerate() {
            for c in 0..n {
                let mut v = a[(r, c)] * dt;
                if r == c {
                    v += 1.0;
                }
                if v != 0.0 {
                    sparse.push((r, c, gr * v));
                }
            }
        }
        next.fill(0.0);
        for &(r, c, v) in &sparse {
            next[r] += v * mean[c];
        }
        std::mem::swap(&mut mean, &mut next);
        // tmp = P C, then C = tmp Pᵀ + Σ_M dt
        tmp.fill(0.0);
        for &(r, c, v) in &sparse {
            for j in 0..n {
                tmp[(r, j)] += v * cov[(c, j)];
            }
        }
        stacked_covariation_into(&mut cov, &refs, params, weights, k, mode);
        cov *= dt;
        for &(r, c, v) in &sparse {
            for j in 0..n {
                cov[(j, r)] += tmp[(j, c)] * v;
            }
        }
        for r in 0..n {
            for c in r + 1..n {
                let s = 0.5 * (cov[(r, c)] + cov[(c, r)]);
                cov[(r, c)] = s;
                cov[(c, r)] = s;
            }
        }
        if (0..n).any(|r| !cov[(r, r)].is_finite() || !mean[r].is_finite()) {
            return Err(Error::NonFiniteCoefficient {
                t: grid.time(i + 1),
            });
        }
    }
    if cov.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFiniteCoefficient {
            t: grid.time(index),
        });
    }
    let d = k + 1;
    Ok(ConditionalMarginal {
        mean,
        cov,
        agg: weights
            .iter()
            .enumerate()
            .map(|(p, &w)| (p * d, w))
            .collect(),
    })
}

fn is_frozen(path: &SystematicPath) -> bool {
    path.sigma0().iter().all(|&s| s == 0.0) && path.x().windows(2).all(|w| w[0] == w[1])
}

/// Marginal of [`scheme2_conditional_law`] at grid index `index`.
pub fn scheme2_marginal(
    traj: &MomentTrajectory,
    cfg: &FluctuationConfig,
    index: usize,
) -> Result<ConditionalMarginal> {
    check_lln_depth(traj, cfg)?;
    let path = traj.path();
    if is_frozen(path) {
        return Ok(ConditionalMarginal::from_law(&ode_law(traj, cfg)?, index));
    }
    stacked_scheme2_marginal(
        std::slice::from_ref(traj.params()),
        &[1.0],
        cfg.k,
        path,
        |i| vec![traj.moments(i).to_vec()],
        DVector::from_vec(cfg.v0.clone()),
        CrossTypeNoise::Full,
        index,
    )
}

fn draw<R: Rng + ?Sized>(
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let f = psd_factor(&clip_psd(cov))?;
    let mut out = mean.clone();
    f.add_scaled_sample(1.0, rng, &mut out);
    Ok(out)
}

/// Joint draw of `v` at the requested grid times from a conditional law.
///
/// The latest time is drawn first from its marginal; every other time, in
/// the order given, is drawn from the Gaussian bridge between its nearest
/// already-drawn neighbours. Output is aligned with `times`.
pub fn sample_skeleton<R: Rng + ?Sized>(
    law: &ConditionalGaussianLaw,
    times: &[f64],
    rng: &mut R,
) -> Result<Vec<DVector<f64>>> {
    let idx: Vec<usize> = times
        .iter()
        .map(|&t| law.grid.index_of(t))
        .collect::<Result<_>>()?;
    let Some(last_pos) = (0..idx.len()).max_by_key(|&p| (idx[p], std::cmp::Reverse(p))) else {
        return Ok(Vec::new());
    };
    let d = law.dim();
    let mut drawn: BTreeMap<usize, DVector<f64>> = BTreeMap::new();
    let order = std::iter::once(last_pos).chain((0..idx.len()).filter(|&p| p != last_pos));
    for p in order {
        let s = idx[p];
        if drawn.contains_key(&s) {
            continue;
        }
        if s == 0 {
            // v(0) = v₀ is deterministic
            drawn.insert(0, law.v0.clone());
            continue;
        }
        let before = drawn.range(1..s).next_back().map(|(&i, v)| (i, v.clone()));
        let after = drawn.range(s + 1..).next().map(|(&i, v)| (i, v.clone()));
        let observed: Vec<(usize, DVector<f64>)> = before.into_iter().chain(after).collect();
        let value = if observed.is_empty() {
            draw(&law.mean(s), law.covariance(s), rng)?
        } else {
            let times: Vec<usize> = std::iter::once(s)
                .chain(observed.iter().map(|(i, _)| *i))
                .collect();
            let n = times.len() * d;
            let mut cov = DMatrix::zeros(n, n);
            let mut mean = DVector::zeros(n);
            for (a, &ta) in times.iter().enumerate() {
                mean.rows_mut(a * d, d).copy_from(&law.mean(ta));
                for (b, &tb) in times.iter().enumerate() {
                    cov.view_mut((a * d, b * d), (d, d))
                        .copy_from(&law.cross_covariance_idx(ta, tb));
                }
            }
            let obs_idx: Vec<usize> = (d..n).collect();
            let obs_vals =
                DVector::from_iterator(n - d, observed.iter().flat_map(|(_, v)| v.iter().copied()));
            let (cm, cc) = conditional_gaussian(&mean, &cov, &obs_idx, &obs_vals)?;
            draw(&cm, &cc, rng)?
        };
        drawn.insert(s, value);
    }
    Ok(idx.iter().map(|i| drawn[i].clone()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lln::solve_for_params;
    use crate::model::SystematicRiskSpec;
    use crate::rng::LANE_SYSTEMATIC;
    use crate::stats::{mean_var, Summary};

    fn fig_params(beta_c: f64, beta_s: f64) -> ObligorParams {
        ObligorParams {
            alpha: 4.0,
            lambda_bar: 0.2,
            sigma: 0.9,
            beta_c,
            beta_s,
            lambda0: 0.2,
        }
    }

    fn ou() -> SystematicRiskSpec {
        SystematicRiskSpec::ou(1.0, 2.0, 1.0, 1.0).unwrap()
    }

    fn traj(p: ObligorParams, horizon: f64, k_lln: usize, seed: u64) -> MomentTrajectory {
        let grid = TimeGrid::new(horizon, 0.005).unwrap();
        let path =
            SystematicPath::simulate(&ou(), grid, &mut stream_rng(seed, 0, LANE_SYSTEMATIC, 0))
                .unwrap();
        solve_for_params(p, &path, k_lln).unwrap()
    }

    fn frozen_u() -> Vec<f64> {
        // frozen-intensity moments λ₀^k e^{−λ₀ t} at t = 1
        let e = (-0.2f64).exp();
        (0..6).map(|k| 0.2f64.powi(k) * e).collect()
    }

    #[test]
    fn covariation_corner_is_first_moment() {
        let u = frozen_u();
        let m = covariation_matrix(&u, &fig_params(1.0, 0.0), 2).unwrap();
        assert_eq!(m[(0, 0)], u[1]);
    }

    #[test]
    fn covariation_reduces_to_hankel() {
        let u = frozen_u();
        let p = ObligorParams {
            sigma: 0.0,
            beta_c: 0.0,
            ..fig_params(0.0, 0.0)
        };
        let m = covariation_matrix(&u, &p, 2).unwrap();
        for r in 0..3 {
            for c in 0..3 {
                assert_eq!(m[(r, c)], u[r + c + 1]);
            }
        }
    }

    #[test]
    fn covariation_term_by_term() {
        let u = frozen_u();
        let (s, bc) = (0.9, 1.3);
        let p = ObligorParams {
            sigma: s,
            beta_c: bc,
            ..fig_params(0.0, 0.0)
        };
        let m = covariation_matrix(&u, &p, 2).unwrap();
        // written out independently with signed-index guards
        let at = |i: i64| if i < 0 { 0.0 } else { u[i as usize] };
        for r in 0..3i64 {
            for c in 0..3i64 {
                let (rf, cf) = (r as f64, c as f64);
                let expect = s * s * rf * cf * at(r + c - 1) + at(r + c + 1)
                    - bc * rf * at(r - 1) * at(c + 1)
                    - bc * cf * at(c - 1) * at(r + 1)
                    + bc * bc * rf * cf * at(r - 1) * at(c - 1) * at(1);
                assert!((m[(r as usize, c as usize)] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn covariation_needs_enough_moments() {
        let u = vec![1.0; 5];
        assert_eq!(
            covariation_matrix(&u, &fig_params(1.0, 0.0), 2).unwrap_err(),
            Error::MomentVectorTooShort { needed: 6, have: 5 }
        );
    }

    #[test]
    fn covariation_symmetric_psd_along_paths() {
        for seed in 0..3 {
            let t = traj(fig_params(1.0, 1.0), 0.5, 18, seed);
            for u in t.all_moments() {
                let m = covariation_matrix(u, t.params(), 6).unwrap();
                assert_eq!(m, m.transpose());
                let f = psd_factor(&m).unwrap();
                assert!(f.clipped_mass() <= 1e-6 * m.trace().abs().max(1e-6));
            }
        }
    }

    #[test]
    fn empty_pool_has_no_fluctuation() {
        let p = ObligorParams {
            lambda0: 0.0,
            lambda_bar: 0.0,
            beta_c: 0.0,
            ..fig_params(0.0, 1.0)
        };
        let t = traj(p, 0.5, 13, 1);
        assert!(t
            .all_moments()
            .iter()
            .all(|u| u[0] == 1.0 && u[1..].iter().all(|&x| x == 0.0)));
        let paths = scheme1_sample_paths(&t, &FluctuationConfig::new(6), 5, 3).unwrap();
        for path in paths {
            assert!(path.iter().all(|v| v.iter().all(|&x| x == 0.0)));
        }
    }

    #[test]
    fn scheme1_zero_mean_without_systematic_risk() {
        let t = traj(fig_params(1.0, 0.0), 1.0, 18, 1);
        let sampler = Scheme1Sampler::new(&t, &FluctuationConfig::new(6), 11, 0).unwrap();
        let last = t.grid().steps();
        let xs: Vec<f64> = (0..10_000)
            .map(|j| sampler.sample(j).unwrap()[last][0])
            .collect();
        let s = Summary::of(&xs);
        assert!(s.mean.abs() < 3.0 * s.std_error(), "{s:?}");
    }

    #[test]
    fn scheme1_matches_gaussian_variance() {
        let t = traj(fig_params(1.0, 0.0), 1.0, 18, 1);
        let cfg = FluctuationConfig::new(6);
        let law = gaussian_case(&t, &cfg).unwrap();
        let sampler = Scheme1Sampler::new(&t, &cfg, 5, 0).unwrap();
        let last = t.grid().steps();
        let xs: Vec<f64> = (0..10_000)
            .map(|j| sampler.sample(j).unwrap()[last][0])
            .collect();
        let (_, var) = mean_var(&xs);
        let target = law.var_v0(last);
        assert!((var / target - 1.0).abs() < 0.05, "mc {var} vs {target}");
    }

    #[test]
    fn gaussian_case_without_contagion_is_exponential() {
        let p = fig_params(0.0, 0.0);
        let t = traj(p, 1.0, 18, 1);
        let cfg = FluctuationConfig::new(4);
        let law = gaussian_case(&t, &cfg).unwrap();
        let a = stacked_drift(&[t.moments(0)], &[p], &[1.0], 4, 0.0, 0.0, DriftPart::Full);
        for i in [0, 50, 200] {
            let expect = (&a * t.grid().time(i)).exp();
            assert!((law.psi(i) - expect).abs().max() < 1e-6);
        }
    }

    #[test]
    fn gaussian_case_basics() {
        let t = traj(fig_params(1.0, 0.0), 1.0, 18, 1);
        let cfg = FluctuationConfig::new(6);
        let law = gaussian_case(&t, &cfg).unwrap();
        assert_eq!(law.covariance(0), &DMatrix::<f64>::zeros(7, 7));
        assert!((0..t.grid().len()).all(|i| law.mean(i).iter().all(|&m| m == 0.0)));
        let bad = traj(fig_params(1.0, 1.0), 0.1, 18, 1);
        assert_eq!(
            gaussian_case(&bad, &cfg).unwrap_err(),
            Error::RequiresZeroBetaS(1.0)
        );
    }

    #[test]
    fn scheme2_reduces_to_gaussian_case() {
        let t = traj(fig_params(1.0, 0.0), 1.0, 18, 1);
        let cfg = FluctuationConfig::new(6);
        let g = gaussian_case(&t, &cfg).unwrap();
        let s = scheme2_conditional_law(&t, &cfg).unwrap();
        let last = t.grid().steps();
        let rel = (s.var_v0(last) / g.var_v0(last) - 1.0).abs();
        assert!(rel < 10.0 * t.grid().dt(), "rel {rel}");
    }

    #[test]
    fn scheme2_on_frozen_factor_is_gaussian_case() {
        let grid = TimeGrid::new(0.5, 0.005).unwrap();
        let path = SystematicPath::simulate(
            &SystematicRiskSpec::constant(1.0).unwrap(),
            grid,
            &mut stream_rng(1, 0, 0, 0),
        )
        .unwrap();
        let p = fig_params(1.0, 0.0);
        let t = solve_for_params(p, &path, 18).unwrap();
        let cfg = FluctuationConfig::new(6);
        let a = scheme2_conditional_law(&t, &cfg).unwrap();
        let b = gaussian_case(&t, &cfg).unwrap();
        for i in 0..grid.len() {
            assert_eq!(a.covariance(i), b.covariance(i));
        }
    }

    #[test]
    fn scheme2_covariances_symmetric_psd() {
        let t = traj(fig_params(1.0, 1.0), 0.5, 18, 4);
        let law = scheme2_conditional_law(&t, &FluctuationConfig::new(6)).unwrap();
        for i in 0..t.grid().len() {
            let c = law.covariance(i);
            assert!((c - c.transpose()).abs().max() <= 1e-10);
            psd_factor(c).unwrap();
        }
    }

    #[test]
    fn scheme2_linear_in_initial_condition() {
        let t = traj(fig_params(1.0, 1.0), 0.5, 18, 4);
        let v0: Vec<f64> = (0..7).map(|k| 0.1 / (k + 1) as f64).collect();
        let a =
            scheme2_conditional_law(&t, &FluctuationConfig::new(6).with_v0(v0.clone())).unwrap();
        let b = scheme2_conditional_law(
            &t,
            &FluctuationConfig::new(6).with_v0(v0.iter().map(|x| 3.0 * x).collect()),
        )
        .unwrap();
        let last = t.grid().steps();
        assert!((a.mean(last) * 3.0 - b.mean(last)).abs().max() < 1e-12);
        assert_eq!(a.covariance(last), b.covariance(last));
    }

    #[test]
    fn cross_covariance_edges() {
        let t = traj(fig_params(1.0, 1.0), 0.5, 18, 4);
        let law = scheme2_conditional_law(&t, &FluctuationConfig::new(6)).unwrap();
        assert_eq!(
            &law.cross_covariance(0.25, 0.25).unwrap(),
            law.covariance(50)
        );
        assert_eq!(
            law.cross_covariance(0.0, 0.3).unwrap(),
            DMatrix::<f64>::zeros(7, 7)
        );
        assert!(matches!(
            law.cross_covariance(0.2501, 0.3),
            Err(Error::TimeOffGrid { .. })
        ));
    }

    #[test]
    fn scheme2_matches_scheme1_on_fixed_path() {
        let t = traj(fig_params(1.0, 1.0), 0.5, 18, 7);
        let cfg = FluctuationConfig::new(6);
        let law = scheme2_conditional_law(&t, &cfg).unwrap();
        let sampler = Scheme1Sampler::new(&t, &cfg, 3, 0).unwrap();
        let (i1, i2) = (40, 100);
        let mut a = Vec::new();
        let mut b = Vec::new();
        for j in 0..10_000 {
            let p = sampler.sample(j).unwrap();
            a.push(p[i1][0]);
            b.push(p[i2][0]);
        }
        let (ma, va) = mean_var(&a);
        let (mb, vb) = mean_var(&b);
        let cab = a
            .iter()
            .zip(&b)
            .map(|(x, y)| (x - ma) * (y - mb))
            .sum::<f64>()
            / (a.len() - 1) as f64;
        assert!(
            (vb / law.var_v0(i2) - 1.0).abs() < 0.1,
            "{vb} vs {}",
            law.var_v0(i2)
        );
        assert!((va / law.var_v0(i1) - 1.0).abs() < 0.1);
        let cross = law.cross_covariance_idx(i1, i2)[(0, 0)];
        assert!((cab / cross - 1.0).abs() < 0.1, "{cab} vs {cross}");
    }

    #[test]
    fn substeps_refine_consistently() {
        let t = traj(fig_params(1.0, 1.0), 0.5, 18, 2);
        let coarse = FluctuationConfig::new(6);
        let fine = FluctuationConfig::new(6).with_substeps(4);
        let law = scheme2_conditional_law(&t, &coarse).unwrap();
        let sampler = Scheme1Sampler::new(&t, &fine, 9, 0).unwrap();
        let last = t.grid().steps();
        let xs: Vec<f64> = (0..4000)
            .map(|j| sampler.sample(j).unwrap()[last][0])
            .collect();
        let (_, var) = mean_var(&xs);
        assert_eq!(sampler.sample(0).unwrap().len(), t.grid().len());
        assert!(
            (var / law.var_v0(last) - 1.0).abs() < 0.15,
            "{var} vs {}",
            law.var_v0(last)
        );
    }

    #[test]
    fn stabilized_view() {
        let t = traj(fig_params(1.0, 0.0), 0.5, 18, 2);
        let v = scheme1_sample_paths(&t, &FluctuationConfig::new(6), 1, 1)
            .unwrap()
            .remove(0);
        assert_eq!(stabilized_fluctuation(&t, &v), v);
    }

    #[test]
    fn skeleton_single_time_is_marginal_draw() {
        let t = traj(fig_params(1.0, 1.0), 0.5, 18, 2);
        let law = scheme2_conditional_law(&t, &FluctuationConfig::new(6)).unwrap();
        let a = sample_skeleton(&law, &[0.5], &mut stream_rng(1, 0, 0, 0)).unwrap();
        let b = draw(
            &law.mean(100),
            law.covariance(100),
            &mut stream_rng(1, 0, 0, 0),
        )
        .unwrap();
        assert_eq!(a[0], b);
        assert!(sample_skeleton(&law, &[0.1234], &mut stream_rng(1, 0, 0, 0)).is_err());
        let z = sample_skeleton(&law, &[0.0, 0.5], &mut stream_rng(1, 0, 0, 0)).unwrap();
        assert_eq!(z[0], DVector::<f64>::zeros(7));
    }

    #[test]
    fn skeleton_bridge_preserves_marginals() {
        let t = traj(fig_params(1.0, 1.0), 0.5, 18, 5);
        let law = scheme2_conditional_law(&t, &FluctuationConfig::new(6)).unwrap();
        let times = [0.5, 0.2, 0.35];
        let mut xs = Vec::new();
        let mut rng = stream_rng(77, 0, 0, 0);
        for _ in 0..10_000 {
            let sk = sample_skeleton(&law, &times, &mut rng).unwrap();
            xs.push(sk[2][0]);
        }
        let s = Summary::of(&xs);
        let i = 70;
        let var = law.var_v0(i);
        assert!((s.mean - law.mean_v0(i)).abs() < 3.0 * (var / xs.len() as f64).sqrt());
        // standard error of a sample variance for Gaussian data: var·√(2/(n−1))
        let se_var = var * (2.0 / (xs.len() - 1) as f64).sqrt();
        assert!(
            (s.variance - var).abs() < 3.0 * se_var,
            "{} vs {var}",
            s.variance
        );
    }

    #[test]
    fn marginal_matches_full_law() {
        let cfg = FluctuationConfig::new(6);
        for seed in 0..5 {
            let t = traj(fig_params(1.0, 1.0), 0.5, 18, seed);
            let law = scheme2_conditional_law(&t, &cfg).unwrap();
            for i in [0, 1, 37, 100] {
                let mg = scheme2_marginal(&t, &cfg, i).unwrap();
                let scale = law.covariance(i).abs().max();
                assert!(
                    (&mg.cov - law.covariance(i)).abs().max() <= 1e-8 * scale,
                    "seed {seed} index {i}"
                );
                assert!((mg.mean_v0() - law.mean_v0(i)).abs() < 1e-12);
            }
        }
        let grid = TimeGrid::new(0.5, 0.005).unwrap();
        let path = SystematicPath::simulate(
            &SystematicRiskSpec::constant(1.0).unwrap(),
            grid,
            &mut stream_rng(1, 0, 0, 0),
        )
        .unwrap();
        let frozen = solve_for_params(fig_params(1.0, 0.0), &path, 18).unwrap();
        let law = scheme2_conditional_law(&frozen, &cfg).unwrap();
        assert_eq!(
            scheme2_marginal(&frozen, &cfg, 100).unwrap().var_v0(),
            law.var_v0(100)
        );
    }
}
