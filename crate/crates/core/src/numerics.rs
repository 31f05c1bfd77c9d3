//! Dense linear-algebra and sampling kernels.
//!
//! Matrices here are small (truncation level + 1, typically ≤ 20 rows), so
//! everything is plain `nalgebra` dense storage.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::model::TimeGrid;

/// One square matrix per grid point.
#[derive(Debug, Clone)]
pub struct MatrixPath {
    grid: TimeGrid,
    mats: Vec<DMatrix<f64>>,
}

impl MatrixPath {
    pub fn new(grid: TimeGrid, mats: Vec<DMatrix<f64>>) -> Result<Self> {
        if mats.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "{} matrices for {} grid points",
                mats.len(),
                grid.len()
            )));
        }
        Ok(Self { grid, mats })
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    pub fn mats(&self) -> &[DMatrix<f64>] {
        &self.mats
    }

    pub fn at(&self, i: usize) -> &DMatrix<f64> {
        &self.mats[i]
    }

    pub fn into_mats(self) -> Vec<DMatrix<f64>> {
        self.mats
    }
}

fn check_finite(m: &DMatrix<f64>, t: f64) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteCoefficient { t })
    }
}

/// Classical RK4 for `dΨ = A(t)Ψ dt`, `Ψ(0) = I`.
///
/// `a` is evaluated at grid points and step midpoints.
pub fn integrate_matrix_ode<F>(dim: usize, a: F, grid: TimeGrid) -> Result<MatrixPath>
where
    F: Fn(f64) -> DMatrix<f64>,
{
    let h = grid.dt();
    let mut mats = Vec::with_capacity(grid.len());
    let mut psi = DMatrix::<f64>::identity(dim, dim);
    mats.push(psi.clone());
    for i in 0..grid.steps() {
        let t = grid.time(i);
        let a0 = a(t);
        let am = a(t + 0.5 * h);
        let a1 = a(grid.time(i + 1));
        check_finite(&a0, t)?;
        check_finite(&am, t + 0.5 * h)?;
        check_finite(&a1, t + h)?;
        let k1 = &a0 * &psi;
        let k2 = &am * (&psi + &k1 * (0.5 * h));
        let k3 = &am * (&psi + &k2 * (0.5 * h));
        let k4 = &a1 * (&psi + &k3 * h);
        psi += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        mats.push(psi.clone());
    }
    MatrixPath::new(grid, mats)
}

/// Euler–Maruyama for `dΨ = A(t)Ψ dt + BΨ dX`, `Ψ(0) = I`.
///
/// `a(i)` is the drift generator at grid index `i`; `x_path` holds `X` at
/// every grid point.
pub fn integrate_matrix_sde<F>(
    a: F,
    b: &DMatrix<f64>,
    x_path: &[f64],
    grid: TimeGrid,
) -> Result<MatrixPath>
where
    F: Fn(usize) -> DMatrix<f64>,
{
    if x_path.len() != grid.len() {
        return Err(Error::GridMismatch(format!(
            "x path has {} points, grid {}",
            x_path.len(),
            grid.len()
        )));
    }
    if !b.is_square() {
        return Err(Error::DimensionMismatch {
            expected: b.nrows(),
            got: b.ncols(),
        });
    }
    let dim = b.nrows();
    check_finite(b, 0.0)?;
    let dt = grid.dt();
    let mut mats = Vec::with_capacity(grid.len());
    let mut psi = DMatrix::<f64>::identity(dim, dim);
    mats.push(psi.clone());
    for i in 0..grid.steps() {
        let ai = a(i);
        check_finite(&ai, grid.time(i))?;
        if ai.nrows() != dim || ai.ncols() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: ai.nrows(),
            });
        }
        let dx = x_path[i + 1] - x_path[i];
        let gen = ai * dt + b * dx;
        psi = &psi + gen * &psi;
        mats.push(psi.clone());
    }
    MatrixPath::new(grid, mats)
}

/// Split propagator `Ψ_{i+1} = diag(g_i)(I + A_i dt)Ψ_i`, `Ψ(0) = I`.
///
/// `g(i)` holds exact per-coordinate growth factors over step `i` of a
/// diagonal multiplicative part; `a(i)` is the remaining generator, taken
/// with an Euler step.
pub fn integrate_split_sde<F, G>(dim: usize, a: F, g: G, grid: TimeGrid) -> Result<MatrixPath>
where
    F: Fn(usize) -> DMatrix<f64>,
    G: Fn(usize) -> DVector<f64>,
{
    let dt = grid.dt();
    let mut mats = Vec::with_capacity(grid.len());
    let mut psi = DMatrix::<f64>::identity(dim, dim);
    mats.push(psi.clone());
    for i in 0..grid.steps() {
        let (ai, gi) = (a(i), g(i));
        check_finite(&ai, grid.time(i))?;
        if ai.nrows() != dim || ai.ncols() != dim || gi.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: ai.nrows().max(gi.len()),
            });
        }
        if gi.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteCoefficient { t: grid.time(i) });
        }
        let mut next = psi.clone();
        next.gemm(dt, &ai, &psi, 1.0);
        for (r, &gr) in gi.iter().enumerate() {
            next.row_mut(r).scale_mut(gr);
        }
        psi = next;
        mats.push(psi.clone());
    }
    MatrixPath::new(grid, mats)
}

/// 2-norm condition number `σ_max/σ_min`.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    let sv = m.clone().svd(false, false).singular_values;
    let min = sv.min();
    if min > 0.0 {
        sv.max() / min
    } else {
        f64::INFINITY
    }
}

/// `F` with `F·Fᵀ` equal to the PSD projection of a symmetric matrix.
#[derive(Debug, Clone)]
pub struct PsdFactor {
    factor: DMatrix<f64>,
    clipped_mass: f64,
}

impl PsdFactor {
    pub fn factor(&self) -> &DMatrix<f64> {
        &self.factor
    }

    /// Sum of the magnitudes of the clipped negative eigenvalues.
    pub fn clipped_mass(&self) -> f64 {
        self.clipped_mass
    }

    pub fn dim(&self) -> usize {
        self.factor.nrows()
    }

    /// `F·Fᵀ`.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        &self.factor * self.factor.transpose()
    }

    /// Adds `scale · F·z` to `out`, with `z` standard normal.
    pub fn add_scaled_sample<R: Rng + ?Sized>(
        &self,
        scale: f64,
        rng: &mut R,
        out: &mut DVector<f64>,
    ) {
        let r = self.factor.ncols();
        let z = DVector::<f64>::from_fn(r, |_, _| rng.sample(StandardNormal));
        out.gemv(scale, &self.factor, &z, 1.0);
    }
}

fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0f64, |a, v| a.max(v.abs()))
}

/// Spectral square root with negative eigenvalues clipped to zero.
pub fn psd_factor(sigma: &DMatrix<f64>) -> Result<PsdFactor> {
    if !sigma.is_square() {
        return Err(Error::DimensionMismatch {
            expected: sigma.nrows(),
            got: sigma.ncols(),
        });
    }
    let asym = max_asymmetry(sigma);
    if asym > 1e-10 * (1.0 + max_abs(sigma)) {
        return Err(Error::NotSymmetric(asym));
    }
    if !sigma.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFiniteCoefficient { t: f64::NAN });
    }
    let sym = (sigma + sigma.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let mut clipped = 0.0;
    let mut abs_total = 0.0;
    let mut factor = eig.eigenvectors;
    for (j, &lam) in eig.eigenvalues.iter().enumerate() {
        abs_total += lam.abs();
        let scale = if lam > 0.0 {
            lam.sqrt()
        } else {
            clipped -= lam;
            0.0
        };
        factor.column_mut(j).scale_mut(scale);
    }
    let tolerance = 1e-6 * abs_total.max(1e-6);
    if clipped > tolerance {
        return Err(Error::ExcessiveNegativity { clipped, tolerance });
    }
    Ok(PsdFactor {
        factor,
        clipped_mass: clipped,
    })
}

/// `mean + F·z`, `z ~ N(0, I)`.
pub fn mvn_sample<R: Rng + ?Sized>(
    mean: &DVector<f64>,
    factor: &PsdFactor,
    rng: &mut R,
) -> Result<DVector<f64>> {
    if mean.len() != factor.dim() {
        return Err(Error::DimensionMismatch {
            expected: factor.dim(),
            got: mean.len(),
        });
    }
    let mut out = mean.clone();
    factor.add_scaled_sample(1.0, rng, &mut out);
    Ok(out)
}

/// Projects a symmetric matrix onto the PSD cone (negative eigenvalues → 0).
pub fn clip_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let lam = eig.eigenvalues.map(|l| l.max(0.0));
    let v = &eig.eigenvectors;
    let out = v * DMatrix::from_diagonal(&lam) * v.transpose();
    (&out + out.transpose()) * 0.5
}

/// Inverse by LU with partial pivoting.
pub fn invert(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    m.clone().lu().try_inverse()
}

/// Induced 1-norm (max column sum).
pub fn norm1(m: &DMatrix<f64>) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Gaussian conditioning: law of the unobserved coordinates given
/// `x[observed_idx] = observed_vals`.
///
/// The observed block is regularized with a ridge of `1e-12·trace` before
/// solving. Returns the conditional mean and (symmetrized) covariance of
/// the unobserved coordinates, in index order.
pub fn conditional_gaussian(
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    observed_idx: &[usize],
    observed_vals: &DVector<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = mean.len();
    if cov.nrows() != n || cov.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: cov.nrows(),
        });
    }
    if observed_vals.len() != observed_idx.len() {
        return Err(Error::DimensionMismatch {
            expected: observed_idx.len(),
            got: observed_vals.len(),
        });
    }
    let mut is_obs = vec![false; n];
    for &i in observed_idx {
        if i >= n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: i,
            });
        }
        is_obs[i] = true;
    }
    let free: Vec<usize> = (0..n).filter(|&i| !is_obs[i]).collect();
    let (nf, no) = (free.len(), observed_idx.len());
    let s11 = DMatrix::from_fn(nf, nf, |a, b| cov[(free[a], free[b])]);
    let mu1 = DVector::from_fn(nf, |a, _| mean[free[a]]);
    if no == 0 {
        return Ok((mu1, s11));
    }
    let s12 = DMatrix::from_fn(nf, no, |a, b| cov[(free[a], observed_idx[b])]);
    let mut s22 = DMatrix::from_fn(no, no, |a, b| cov[(observed_idx[a], observed_idx[b])]);
    let resid = DVector::from_fn(no, |a, _| observed_vals[a] - mean[observed_idx[a]]);
    let ridge = 1e-12 * s22.trace();
    if !(ridge > 0.0) || !ridge.is_finite() {
        return Err(Error::SingularObservedBlock);
    }
    for d in 0..no {
        s22[(d, d)] += ridge;
    }
    // K = Σ12 Σ22⁻¹, obtained from Σ22 Kᵀ = Σ21
    let gain_t = match s22.clone().cholesky() {
        Some(ch) => ch.solve(&s12.transpose()),
        None => s22
            .lu()
            .solve(&s12.transpose())
            .ok_or(Error::SingularObservedBlock)?,
    };
    if !gain_t.iter().all(|v| v.is_finite()) {
        return Err(Error::SingularObservedBlock);
    }
    let cond_mean = mu1 + gain_t.transpose() * resid;
    let cond_cov = s11 - &s12 * &gain_t;
    let cond_cov = (&cond_cov + cond_cov.transpose()) * 0.5;
    Ok((cond_mean, cond_cov))
}
