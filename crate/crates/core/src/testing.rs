//! Independent oracles for unit tests.

/// Survival `E[exp(−∫₀ᵗ λ)]` of a CIR intensity from the affine Riccati
/// system, integrated with RK4 on a fine step.
///
/// `B' = 1 − αB − ½σ²B²`, `(ln A)' = −αλ̄ B`, survival `= A·exp(−Bλ₀)`.
pub fn riccati_survival(alpha: f64, lambda_bar: f64, sigma: f64, lambda0: f64, t: f64) -> f64 {
    let steps = 100_000;
    let h = t / steps as f64;
    let f = |b: f64| 1.0 - alpha * b - 0.5 * sigma * sigma * b * b;
    let (mut b, mut ln_a) = (0.0f64, 0.0f64);
    for _ in 0..steps {
        let k1 = f(b);
        let k2 = f(b + 0.5 * h * k1);
        let k3 = f(b + 0.5 * h * k2);
        let k4 = f(b + h * k3);
        let b_next = b + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        // Simpson on the B trajectory for ln A
        let b_mid = b + 0.5 * h * (k1 + k2) / 2.0;
        ln_a += -alpha * lambda_bar * h / 6.0 * (b + 4.0 * b_mid + b_next);
        b = b_next;
    }
    ln_a.exp() * (-b * lambda0).exp()
}

#[test]
fn riccati_matches_closed_form() {
    let (a, lb, s, l0, t) = (4.0f64, 0.2f64, 0.9f64, 0.2f64, 1.0f64);
    let g = (a * a + 2.0 * s * s).sqrt();
    let e = (g * t).exp() - 1.0;
    let den = (g + a) * e + 2.0 * g;
    let b = 2.0 * e / den;
    let big_a = (2.0 * g * ((a + g) * t / 2.0).exp() / den).powf(2.0 * a * lb / (s * s));
    let closed = big_a * (-b * l0).exp();
    assert!((riccati_survival(a, lb, s, l0, t) - closed).abs() < 1e-8);
}
