//! Sample statistics and goodness-of-fit tests used to compare distributions.

use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};

/// Mean and unbiased variance; `(mean, 0)` for a single sample.
pub fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    pub variance: f64,
    pub min: f64,
    pub max: f64,
}

impl Summary {
    pub fn of(xs: &[f64]) -> Self {
        let (mean, variance) = mean_var(xs);
        let min = xs.iter().copied().fold(f64::INFINITY, f64::min);
        let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Self {
            n: xs.len(),
            mean,
            variance,
            min,
            max,
        }
    }

    pub fn std_dev(&self) -> f64 {
        self.variance.sqrt()
    }

    /// Standard error of the mean.
    pub fn std_error(&self) -> f64 {
        (self.variance / self.n as f64).sqrt()
    }
}

fn check_level(level: f64) -> Result<()> {
    if level > 0.0 && level < 1.0 {
        Ok(())
    } else {
        Err(Error::BadLevel(level))
    }
}

/// Empirical quantile of sorted data, linear interpolation between order
/// statistics (`x[(n−1)p]`).
pub fn quantile_sorted(sorted: &[f64], level: f64) -> Result<f64> {
    check_level(level)?;
    if sorted.is_empty() {
        return Err(Error::NoPaths);
    }
    let h = (sorted.len() - 1) as f64 * level;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    Ok(sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo]))
}

/// Sorts a copy with a total order.
pub fn sorted(xs: &[f64]) -> Vec<f64> {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Fraction of sorted samples `<= x`.
pub fn ecdf(sorted: &[f64], x: f64) -> f64 {
    sorted.partition_point(|&s| s <= x) as f64 / sorted.len() as f64
}

/// Fraction of sorted samples `< x`.
fn ecdf_left(sorted: &[f64], x: f64) -> f64 {
    sorted.partition_point(|&s| s < x) as f64 / sorted.len() as f64
}

/// Kolmogorov distance `sup |F_n − F|` between sorted samples and a model CDF.
///
/// `cdf_left(x)` is `F(x−)`; atoms of the model should be listed in `atoms`
/// so that jumps of `F` between sample points are seen.
pub fn ks_distance<F, G>(sorted: &[f64], cdf: F, cdf_left: G, atoms: &[f64]) -> f64
where
    F: Fn(f64) -> f64,
    G: Fn(f64) -> f64,
{
    sorted
        .iter()
        .chain(atoms)
        .map(|&x| {
            let right = (ecdf(sorted, x) - cdf(x)).abs();
            let left = (ecdf_left(sorted, x) - cdf_left(x)).abs();
            right.max(left)
        })
        .fold(0.0, f64::max)
}

/// Asymptotic Kolmogorov tail `P(K > λ)`.
fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    for j in 1..=100 {
        let jf = j as f64;
        let term = (-2.0 * jf * jf * lambda * lambda).exp();
        sum += if j % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Two-sample Kolmogorov–Smirnov test: `(D, p-value)`.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> (f64, f64) {
    let (sa, sb) = (sorted(a), sorted(b));
    let d = sa
        .iter()
        .chain(&sb)
        .map(|&x| (ecdf(&sa, x) - ecdf(&sb, x)).abs())
        .fold(0.0, f64::max);
    let ne = (sa.len() * sb.len()) as f64 / (sa.len() + sb.len()) as f64;
    let rt = ne.sqrt();
    (d, kolmogorov_q((rt + 0.12 + 0.11 / rt) * d))
}

/// Pearson chi-square test of independence on a contingency table:
/// `(statistic, p-value)`.
pub fn chi_square_independence(table: &[Vec<f64>]) -> (f64, f64) {
    let rows: Vec<f64> = table.iter().map(|r| r.iter().sum()).collect();
    let cols: Vec<f64> = (0..table[0].len())
        .map(|c| table.iter().map(|r| r[c]).sum())
        .collect();
    let total: f64 = rows.iter().sum();
    let mut stat = 0.0;
    for (r, row) in table.iter().enumerate() {
        for (c, &obs) in row.iter().enumerate() {
            let exp = rows[r] * cols[c] / total;
            if exp > 0.0 {
                stat += (obs - exp) * (obs - exp) / exp;
            }
        }
    }
    let dof = ((table.len() - 1) * (table[0].len() - 1)) as f64;
    let p = 1.0
        - ChiSquared::new(dof)
            .map(|d| d.cdf(stat))
            .unwrap_or(f64::NAN);
    (stat, p)
}
