//! Law-of-large-numbers moments `u_k(t) = ∫ λ^k μ̄_t(dλ)` along one factor path.
//!
//! The moment hierarchy
//!
//! ```text
//! du_k = { u_k(−αk + β_S b₀ k + ½β_S² σ₀² k(k−1))
//!        + u_{k−1}(½σ² k(k−1) + αλ̄ k + β_C k u₁) − u_{k+1} } dt + β_S σ₀ k u_k dV
//! ```
//!
//! is truncated at `K` with the closure `u_{K+1} = 0` and stepped on the factor
//! path's grid: the `u_k`-diagonal part is integrated exactly and the rest
//! with Euler. The first-order loss is `L = 1 − u₀`.

use crate::error::{Error, Result};
use crate::factor::SystematicPath;
use crate::model::{ObligorParams, TimeGrid, ValidatedPortfolio};

/// Magnitude past which a moment is treated as a numerical blow-up.
pub const BLOWUP_LIMIT: f64 = 1e12;

/// Internal steps per grid step. The factor coefficients are frozen over a
/// grid step and its Brownian increment is split evenly.
pub const LLN_SUBSTEPS: usize = 4;

#[derive(Debug, Clone)]
pub struct MomentTrajectory {
    pub(crate) params: ObligorParams,
    pub(crate) k_lln: usize,
    pub(crate) u: Vec<Vec<f64>>,
    pub(crate) path: SystematicPath,
    pub(crate) clamped: usize,
}

impl MomentTrajectory {
    pub fn grid(&self) -> TimeGrid {
        self.path.grid()
    }

    pub fn params(&self) -> &ObligorParams {
        &self.params
    }

    pub fn truncation(&self) -> usize {
        self.k_lln
    }

    /// Moments `(u₀, …, u_K)` at grid index `i`.
    pub fn moments(&self, i: usize) -> &[f64] {
        &self.u[i]
    }

    pub fn all_moments(&self) -> &[Vec<f64>] {
        &self.u
    }

    pub fn path(&self) -> &SystematicPath {
        &self.path
    }

    /// Running `∫₀ᵗ σ₀(X_s)² ds` at each grid point.
    pub fn int_sigma0_sq(&self) -> &[f64] {
        self.path.int_sigma0_sq()
    }

    /// Number of negative Euler excursions that were clamped to zero.
    pub fn clamp_count(&self) -> usize {
        self.clamped
    }

    /// Moments linearly interpolated at an arbitrary `t ∈ [0, T]`.
    /// CSV with columns `t, u0, …, uK`.
    pub fn write_csv<W: std::io::Write>(&self, out: &mut W) -> std::io::Result<()> {
        let grid = self.grid();
        crate::table::write_series(out, grid.times(), "u", &self.u)
    }

    pub fn interpolate(&self, t: f64) -> Vec<f64> {
        let grid = self.grid();
        let r = (t / grid.dt()).clamp(0.0, grid.steps() as f64);
        let i = (r.floor() as usize).min(grid.steps().saturating_sub(1));
        let w = r - i as f64;
        if w <= 0.0 {
            return self.u[i].clone();
        }
        self.u[i]
            .iter()
            .zip(&self.u[i + 1])
            .map(|(a, b)| a + w * (b - a))
            .collect()
    }
}

/// Growth `g` of `λ` over one step under `dλ = λ(−α dt + β_S dX)`.
pub(crate) fn transport_growth(p: &ObligorParams, b0: f64, s0: f64, dt: f64, dv: f64) -> f64 {
    let bs0 = p.beta_s * s0;
    ((-p.alpha + p.beta_s * b0 - 0.5 * bs0 * bs0) * dt + bs0 * dv).exp()
}

/// One step of one type's truncated hierarchy.
///
/// The linear transport `dλ = λ(−α dt + β_S dX)` acts on the moments as
/// `u_k ↦ g^k u_k` with `g = exp((−α + β_S b₀ − ½β_S²σ₀²)dt + β_S σ₀ dV)`,
/// which is applied exactly after an Euler step of the remaining terms. This
/// keeps the multiplicative noise from flipping the sign of high moments.
///
/// `contagion_u1` is the first moment the contagion term couples to (the
/// type's own `u₁` in a homogeneous pool, the weighted aggregate otherwise).
#[allow(clippy::too_many_arguments)]
pub(crate) fn lln_step(
    p: &ObligorParams,
    u: &[f64],
    contagion_u1: f64,
    b0: f64,
    s0: f64,
    dt: f64,
    dv: f64,
    out: &mut [f64],
) {
    let kmax = u.len() - 1;
    let g = transport_growth(p, b0, s0, dt, dv);
    let mut gk = 1.0;
    for k in 0..=kmax {
        let kf = k as f64;
        let lower = if k > 0 {
            u[k - 1]
                * (0.5 * p.sigma * p.sigma * kf * (kf - 1.0)
                    + p.alpha * p.lambda_bar * kf
                    + p.beta_c * kf * contagion_u1)
        } else {
            0.0
        };
        let upper = if k < kmax { u[k + 1] } else { 0.0 };
        out[k] = gk * (u[k] + (lower - upper) * dt);
        gk *= g;
    }
}

/// Clamps negative entries to zero, returning how many were clamped, and
/// fails on blow-up.
pub(crate) fn sanitize(u: &mut [f64], t: f64) -> Result<usize> {
    let mut clamped = 0;
    for (index, v) in u.iter_mut().enumerate() {
        if !v.is_finite() || v.abs() > BLOWUP_LIMIT {
            return Err(Error::UnstableBlowup {
                index,
                value: *v,
                t,
            });
        }
        if *v < 0.0 {
            *v = 0.0;
            clamped += 1;
        }
    }
    Ok(clamped)
}

/// Initial moments `λ₀^k` of a point-mass initial law.
pub(crate) fn initial_moments(lambda0: f64, k_lln: usize) -> Vec<f64> {
    (0..=k_lln).map(|k| lambda0.powi(k as i32)).collect()
}

/// Solves the truncated LLN hierarchy of a homogeneous pool along `path`.
pub fn solve_lln_moments(
    portfolio: &ValidatedPortfolio,
    path: &SystematicPath,
    k_lln: usize,
) -> Result<MomentTrajectory> {
    solve_for_params(portfolio.homogeneous_params()?, path, k_lln)
}

/// As [`solve_lln_moments`] for a bare parameter set.
pub fn solve_for_params(
    params: ObligorParams,
    path: &SystematicPath,
    k_lln: usize,
) -> Result<MomentTrajectory> {
    if k_lln < 1 {
        return Err(Error::BadTruncation(k_lln));
    }
    let grid = path.grid();
    let mut u = Vec::with_capacity(grid.len());
    u.push(initial_moments(params.lambda0, k_lln));
    let mut cur = u[0].clone();
    let mut next = vec![0.0; k_lln + 1];
    let mut clamped = 0;
    let m = LLN_SUBSTEPS as f64;
    let h = grid.dt() / m;
    for i in 0..grid.steps() {
        let dv = path.dv()[i] / m;
        for _ in 0..LLN_SUBSTEPS {
            lln_step(
                &params,
                &cur,
                cur[1],
                path.b0()[i],
                path.sigma0()[i],
                h,
                dv,
                &mut next,
            );
            clamped += sanitize(&mut next, grid.time(i + 1))?;
            std::mem::swap(&mut cur, &mut next);
        }
        u.push(cur.clone());
    }
    Ok(MomentTrajectory {
        params,
        k_lln,
        u,
        path: path.clone(),
        clamped,
    })
}

/// `w_k(t) = exp(−½β_S² k(k−1) ∫₀ᵗ σ₀²) u_k(t)` at every grid point.
pub fn stabilized_moments(traj: &MomentTrajectory) -> Vec<Vec<f64>> {
    let bs2 = traj.params.beta_s * traj.params.beta_s;
    traj.u
        .iter()
        .zip(traj.int_sigma0_sq())
        .map(|(u, &int)| {
            u.iter()
                .enumerate()
                .map(|(k, &uk)| {
                    let kf = k as f64;
                    (-0.5 * bs2 * kf * (kf - 1.0) * int).exp() * uk
                })
                .collect()
        })
        .collect()
}

/// First-order loss `L(t) = 1 − u₀(t)`.
pub fn first_order_loss(traj: &MomentTrajectory) -> Vec<f64> {
    traj.u.iter().map(|u| 1.0 - u[0]).collect()
}
