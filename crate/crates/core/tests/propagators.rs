use ecd_core::classical::{ConstantField, NoField, StandingField};
use ecd_core::minkowski::{AntisymTensor, FourVector};
use ecd_core::propagators::*;
use proptest::prelude::*;

fn field() -> AntisymTensor {
    AntisymTensor::from_e_b([0.3, 0.0, 0.5], [0.0, 0.4, -0.2])
}

fn constant_spec(f: AntisymTensor, hbar: f64) -> PropagatorSpec {
    PropagatorSpec {
        kind: PropagatorKind::ConstantField { f, q: 1.0 },
        hbar,
    }
}

#[test]
fn constant_field_kernel_solves_the_field_equation() {
    // exact for a quadratic Lagrangian, so only the stencil error remains
    let xp = FourVector::new(-0.1, 0.2, 0.0, 0.3);
    let x = FourVector::new(0.4, -0.3, 0.5, 0.1);
    for hbar in [1.0, 0.5] {
        let spec = constant_spec(field(), hbar);
        let psi = |y: FourVector, s: f64| spec.evaluate(y, xp, s);
        let pot = ConstantField::new(field());
        let r1 = schrodinger_residual(psi, &pot, 1.0, hbar, x, 0.8, 1e-2).unwrap();
        let r2 = schrodinger_residual(psi, &pot, 1.0, hbar, x, 0.8, 5e-3).unwrap();
        assert!(r2 < r1 / 3.5, "ħ̄ = {hbar}: {r1:e} {r2:e}");
        assert!(r2 < 1e-3, "ħ̄ = {hbar}: {r2:e}");
    }
}

#[test]
fn half_power_van_vleck_does_not_solve_it() {
    let xp = FourVector::new(-0.1, 0.2, 0.0, 0.3);
    let x = FourVector::new(0.4, -0.3, 0.5, 0.1);
    let f = field();
    let act = ConstantFieldAction { f, q: 1.0 };
    let psi = |y: FourVector, s: f64| {
        let path = PathContribution {
            action: act.action(y, xp, s)?,
            van_vleck: constant_field_van_vleck_half_power(&f, s, 1.0)?,
            phase: 0.0,
        };
        semiclassical_propagator(&[path], s, 1.0)
    };
    let pot = ConstantField::new(f);
    let r1 = schrodinger_residual(psi, &pot, 1.0, 1.0, x, 0.8, 1e-2).unwrap();
    let r2 = schrodinger_residual(psi, &pot, 1.0, 1.0, x, 0.8, 5e-3).unwrap();
    // stalls at the amplitude defect instead of converging
    assert!(r2 > 0.8 * r1 && r2 > 1e-3, "{r1:e} {r2:e}");
}

#[test]
fn straight_bvp_path_reproduces_the_free_kernel() {
    let xp = FourVector::new(0.5, 0.0, 0.1, -0.2);
    let x = FourVector::new(0.3, -0.2, 0.5, 0.1);
    for s in [0.9, -0.4] {
        let path = classical_path_bvp(&NoField, xp, x, s, 1.0, &BvpOptions::default()).unwrap();
        let contribution = PathContribution {
            action: path.action,
            van_vleck: path.van_vleck,
            phase: 0.0,
        };
        let sc = semiclassical_propagator(&[contribution], s, 1.0).unwrap();
        let exact = free_propagator(x, xp, s).unwrap();
        assert!((sc - exact).norm() <= 1e-9 * exact.norm(), "s = {s}");
    }
}

#[test]
fn bvp_actions_satisfy_hamilton_jacobi_in_a_standing_field() {
    let field = StandingField { amplitude: 0.5, length: 1.0 };
    let act = BvpAction {
        field: &field,
        q: 1.0,
        options: BvpOptions::default(),
    };
    let xp = FourVector::new(0.0, 0.1, -0.2, 0.3);
    for (x, s) in [(FourVector::new(1.0, 0.3, 0.0, 0.5), 1.0), (FourVector::new(0.6, -0.2, 0.4, 0.1), 0.5)] {
        let r = hamilton_jacobi_residual(&act, &field, 1.0, x, xp, s).unwrap();
        assert!(r < 1e-6, "{r:e}");
    }
}

#[test]
fn delta_boundary_slope_shrinks_under_halving() {
    let xp = FourVector::new(0.1, -0.4, 0.3, 0.5);
    let mut prev = f64::INFINITY;
    for k in 0..6 {
        let r = 0.04 / 2f64.powi(k);
        let slope = delta_boundary_slope(0.2, [1.0, 1.0, -0.5], r, r / 4.0, xp, 0.6, 1.0).unwrap().norm();
        assert!(slope < prev, "step {k}: {slope:e} after {prev:e}");
        prev = slope;
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn constant_field_kernel_is_scale_covariant(
        lambda in 0.3f64..4.0,
        x in prop::array::uniform4(-1.0f64..1.0),
        s in 0.2f64..1.5,
    ) {
        // G′(x, x′; s) = λ⁻⁴G(x/λ, x′/λ; s/λ²) with F′ = λ⁻²F
        let xp = FourVector::new(0.1, 0.0, -0.2, 0.05);
        let x = FourVector(x);
        let scaled = constant_spec(field().scale(lambda.powi(-2)), 1.0);
        let a = scaled.evaluate(x * lambda, xp * lambda, s * lambda * lambda).unwrap();
        let b = constant_spec(field(), 1.0).evaluate(x, xp, s).unwrap() * lambda.powi(-4);
        prop_assert!((a - b).norm() <= 1e-8 * b.norm(), "{} vs {}", a, b);
    }

    #[test]
    fn free_kernel_gauge_phase_is_unimodular(
        ax in -2.0f64..2.0,
        axp in -2.0f64..2.0,
        x in prop::array::uniform4(-1.0f64..1.0),
    ) {
        let g = free_propagator(FourVector(x), FourVector::ZERO, 0.7).unwrap();
        let t = gauge_transform_propagator(g, ax, axp, 0.8, 0.9);
        prop_assert!((t.norm() - g.norm()).abs() <= 1e-14 * g.norm());
    }
}
