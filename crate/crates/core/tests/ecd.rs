use std::f64::consts::PI;

use ecd_core::ecd::*;
use ecd_core::numerics::loglog_fit;
use ecd_core::{FourVector, Result};
use num_complex::Complex64;
use proptest::prelude::*;

const REST: FourVector = FourVector([1.0, 0.0, 0.0, 0.0]);

fn detuned(eps: f64, delta: f64) -> EcdPair {
    let mut pair = EcdPair::free(REST, Complex64::new(1.0, 0.0), eps, 1.0).unwrap();
    pair.ansatz = BoundaryAnsatz::PlanePhase {
        c: Complex64::new(1.0 / eps, 0.0),
        rate: 1.0 + delta,
    };
    // the detuned phase winds all the way out, so keep the window resolvable
    pair.quadrature.s_max = S_MAX;
    pair
}

const S_MAX: f64 = 1e3;

// Si(x): Maclaurin series below 1, asymptotic series above 50.
fn sine_integral(x: f64) -> f64 {
    if x > 50.0 {
        let (x2, x4) = (x * x, x.powi(4));
        return PI / 2.0 - x.cos() / x * (1.0 - 2.0 / x2 + 24.0 / x4) - x.sin() / x2 * (1.0 - 6.0 / x2 + 120.0 / x4);
    }
    assert!(x < 1.0);
    let (mut term, mut sum) = (x, x);
    for k in 1..20 {
        let n = (2 * k + 1) as f64;
        term *= -x * x / ((n - 1.0) * n);
        sum += term / n;
    }
    sum
}

#[test]
fn detuned_ansatz_matches_cosine_integral_oracle() {
    // φ/ansatz = ε∫_ε^S cos(aσ)/σ² dσ, a = δ/2; for S → ∞ this is cos(aε) − aε(π/2 − Si(aε))
    for (eps, delta) in [(1e-2, 0.5f64), (1e-2, -1.0), (3e-3, 0.5)] {
        let a = delta.abs() / 2.0;
        let ratio = (a * eps).cos() - eps * (a * S_MAX).cos() / S_MAX - a * eps * (sine_integral(a * S_MAX) - sine_integral(a * eps));
        let want = 1.0 - ratio;
        let got = consistency_residual(&detuned(eps, delta), &[0.0, 0.7]).unwrap();
        assert!((got.max_residual - want).abs() < 1e-4 * want, "ε = {eps}, δ = {delta}: {} vs {want}", got.max_residual);
    }
}

#[test]
fn detuned_residual_is_first_order_in_epsilon() {
    let eps = [1e-1, 1e-2, 1e-3];
    let r: Vec<f64> = eps
        .iter()
        .map(|&e| consistency_residual(&detuned(e, 0.5), &[0.0]).unwrap().max_residual)
        .collect();
    let fit = loglog_fit(&eps, &r).unwrap();
    assert!((fit.slope - 1.0).abs() < 0.05, "slope {}", fit.slope);
}

#[test]
#[ignore = "the exact free ansatz is a fixed point at every ε; only truncation error remains"]
fn exact_ansatz_residual_scales_like_epsilon() {
    let eps = [1e-1, 1e-2, 1e-3];
    let r: Vec<f64> = eps
        .iter()
        .map(|&e| {
            let pair = EcdPair::free(REST, Complex64::new(1.0, 0.0), e, 1.0).unwrap();
            consistency_residual(&pair, &[0.0, 0.5]).unwrap().max_residual
        })
        .collect();
    let slope = loglog_fit(&eps, &r).unwrap().slope;
    assert!((0.8..=1.2).contains(&slope), "slope {slope}, residuals {r:?}");
}

#[test]
fn free_pair_surfs_at_the_rounding_floor() {
    let u = FourVector::new(1.25, 0.6, 0.0, 0.45);
    let cal = calibrate(0.05).unwrap();
    let c = Complex64::new(0.8, -0.3) / cal.epsilon;
    let phi = |x: FourVector, s: f64| -> Result<Complex64> { Ok(free_phi_closed_form(x, s, u, c, &cal)) };
    let scale = c.norm_sqr() / cal.epsilon.sqrt();
    for h in [1e-2, 5e-3, 2.5e-3] {
        let r = surfing_residual(&phi, u * 0.3, 0.3, h).unwrap();
        assert!(r.max_abs() < 1e-12 * scale, "h = {h}: {r:?}");
    }
}

#[test]
fn surfing_stencil_is_second_order() {
    // |φ| = e^{−|ξ|²}(1 + Σξ³): stationary at ξ = 0, but the cubic is seen at O(h²)
    let gamma = FourVector::new(0.2, -0.1, 0.4, 0.3);
    let phi = |x: FourVector, _: f64| -> Result<Complex64> {
        let xi = x - gamma;
        let r2: f64 = xi.0.iter().map(|c| c * c).sum();
        let cubic: f64 = xi.0.iter().map(|c| c * c * c).sum();
        Ok(Complex64::from_polar((-r2).exp() * (1.0 + cubic), xi.0[0] - 2.0 * xi.0[3]))
    };
    let r = |h: f64| surfing_residual(&phi, gamma, 0.0, h).unwrap().max_abs();
    let (r1, r2) = (r(1e-2), r(5e-3));
    assert!(r1 > 0.0);
    assert!(r1 / r2 >= 3.5, "ratio {}", r1 / r2);
}

#[test]
fn pair_validation_rejects_mismatched_hbar() {
    let mut pair = EcdPair::free(REST, Complex64::new(1.0, 0.0), 0.1, 1.0).unwrap();
    pair.calibration = calibrate_with_hbar(0.1, 0.5).unwrap();
    assert!(pair.validate().is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn closed_form_rides_its_worldline(
        v in prop::array::uniform3(-0.6f64..0.6),
        s in -3.0f64..3.0,
        eps in 1e-3f64..0.3,
    ) {
        let u = FourVector::new((1.0 + v.iter().map(|x| x * x).sum::<f64>()).sqrt(), v[0], v[1], v[2]);
        let cal = calibrate(eps).unwrap();
        let c = Complex64::new(1.0, 0.0) / eps;
        let on = free_phi_closed_form(u * s, s, u, c, &cal);
        let ansatz = c * (Complex64::i() * (0.5 * u.square() * s)).exp();
        prop_assert!((on - ansatz).norm() <= 1e-12 * ansatz.norm());
        // |φ|² peaks on the worldline
        let off = free_phi_closed_form(u * s + FourVector::new(0.0, 0.3 * eps.sqrt(), 0.0, 0.0), s, u, c, &cal);
        prop_assert!(off.norm() < on.norm());
    }

    #[test]
    fn closed_form_conjugates_under_s_reversal(
        x in prop::array::uniform4(-1.0f64..1.0),
        s in -2.0f64..2.0,
    ) {
        // φ*(x, −s) for the pair γ ↦ −γ̇ is the same field: φ(x, s; −u) = φ*(x, −s; u)
        let u = FourVector::new(1.25, 0.6, 0.0, 0.45);
        let cal = calibrate(0.1).unwrap();
        let c = Complex64::new(0.8, -0.3);
        let a = free_phi_closed_form(FourVector(x), s, -u, c.conj(), &cal);
        let b = free_phi_closed_form(FourVector(x), -s, u, c, &cal).conj();
        prop_assert!((a - b).norm() <= 1e-12 * b.norm().max(1e-300));
    }
}
