//! Euler paths of the systematic factor `X`.
//!
//! The path carries the Brownian increments `dV` that produced it, because
//! the LLN moments, both fluctuation schemes and the finite pool driven by
//! one path must all consume the same noise.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::model::{SystematicRiskSpec, TimeGrid};

#[derive(Debug, Clone)]
pub struct SystematicPath {
    grid: TimeGrid,
    x: Vec<f64>,
    dv: Vec<f64>,
    b0: Vec<f64>,
    sigma0: Vec<f64>,
    /// Left-point running sum of σ₀(X)² dt.
    int_sigma0_sq: Vec<f64>,
}

impl SystematicPath {
    /// Euler path `X_{i+1} = X_i + b₀(X_i)dt + σ₀(X_i)dV_i` with `dV_i ~ N(0, dt)`.
    pub fn simulate<R: Rng + ?Sized>(
        risk: &SystematicRiskSpec,
        grid: TimeGrid,
        rng: &mut R,
    ) -> Result<Self> {
        let sq = grid.dt().sqrt();
        let dv: Vec<f64> = (0..grid.steps())
            .map(|_| sq * rng.sample::<f64, _>(StandardNormal))
            .collect();
        Self::from_increments(risk, grid, dv)
    }

    /// Builds the Euler path from given Brownian increments.
    pub fn from_increments(
        risk: &SystematicRiskSpec,
        grid: TimeGrid,
        dv: Vec<f64>,
    ) -> Result<Self> {
        if dv.len() != grid.steps() {
            return Err(Error::GridMismatch(format!(
                "{} increments for {} steps",
                dv.len(),
                grid.steps()
            )));
        }
        let n = grid.len();
        let mut x = Vec::with_capacity(n);
        let mut b0 = Vec::with_capacity(n);
        let mut sigma0 = Vec::with_capacity(n);
        let mut int_sigma0_sq = Vec::with_capacity(n);
        let mut xi = risk.x0;
        let mut acc = 0.0;
        for i in 0..n {
            let (b, s) = risk.eval_risk_coeffs(xi)?;
            x.push(xi);
            b0.push(b);
            sigma0.push(s);
            int_sigma0_sq.push(acc);
            if i < grid.steps() {
                xi += b * grid.dt() + s * dv[i];
                acc += s * s * grid.dt();
            }
        }
        Ok(Self {
            grid,
            x,
            dv,
            b0,
            sigma0,
            int_sigma0_sq,
        })
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    /// Brownian increments, one per step.
    pub fn dv(&self) -> &[f64] {
        &self.dv
    }

    /// `X_{i+1} − X_i`.
    pub fn dx(&self, i: usize) -> f64 {
        self.x[i + 1] - self.x[i]
    }

    pub fn b0(&self) -> &[f64] {
        &self.b0
    }

    pub fn sigma0(&self) -> &[f64] {
        &self.sigma0
    }

    pub fn int_sigma0_sq(&self) -> &[f64] {
        &self.int_sigma0_sq
    }
}
