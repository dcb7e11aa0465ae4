use ecd_core::classical::*;
use ecd_core::currents::continuity_residual;
use ecd_core::minkowski::{grid_charge, AntisymTensor, EventGrid, FourVector};
use ecd_core::sources::*;
use proptest::prelude::*;

fn orbit(field: &dyn FieldProvider, x0: FourVector, u: FourVector, span: (f64, f64), step: f64) -> Trajectory {
    let cfg = IntegratorConfig::rk4(step, 1e-8).unwrap();
    integrate_worldline((x0, u), field, 1.0, span, &cfg).unwrap()
}

#[test]
fn scaled_orbits_solve_the_scaled_equation() {
    let field = StandingField { amplitude: 0.5, length: 1.0 };
    let t = orbit(&field, FourVector::new(0.0, 0.1, -0.2, 0.3), FourVector::new(1.25, 0.0, 0.6, 0.45), (0.0, 4.0), 1e-3);
    let base = eom_residual(&t, &field).unwrap();
    assert!(base < 1e-9, "{base:e}");
    for lambda in [0.5, 2.0, 10.0] {
        let scaled = apply_scaling(&t, lambda).unwrap();
        let r = eom_residual(&scaled, &ScaledField { inner: &field, lambda }).unwrap();
        assert!(r < 1e-9, "λ = {lambda}: {r:e}");
        // the unscaled field is the wrong equation for the image
        assert!(eom_residual(&scaled, &field).unwrap() > 1e-3);
    }
}

#[test]
fn hyperbolic_orbit_field_tensor_is_traceless_and_symmetric() {
    let field = ConstantField::electric([0.2, 0.0, 0.0]);
    let t = orbit(&field, FourVector::ZERO, FourVector::new(1.0, 0.0, 0.0, 0.0), (0.0, 20.0), 1e-3);
    for x in [
        FourVector::new(10.0, 1.0, 2.0, 0.5),
        FourVector::new(25.0, 15.0, -3.0, 1.0),
        FourVector::new(40.0, 30.0, 0.0, -6.0),
    ] {
        let th = stress_tensor(&lw_field(x, &t, 1e-5).unwrap());
        let scale = th.iter().flatten().fold(0.0f64, |m, c| m.max(c.abs()));
        assert!(scale > 0.0);
        assert!(asymmetry(&th) <= 1e-12 * scale);
        assert!(trace(&th).abs() <= 1e-12 * scale, "{:e}", trace(&th) / scale);
    }
}

#[test]
fn gyrating_charge_deposits_the_same_charge_on_every_slice() {
    let field = ConstantField::new(AntisymTensor::from_e_b([0.0; 3], [0.0, 0.0, 2.0]));
    // gyroradius 0.75/2 about (0, −0.375)
    let t = orbit(&field, FourVector::ZERO, FourVector::new(1.25, 0.75, 0.0, 0.0), (-1.0, 6.0), 1e-3);
    let grid = EventGrid::centred(0.5, [0.0, -0.375, 0.0], [0.2, 0.1, 0.1, 0.1], [8, 14, 14, 5]).unwrap();
    let j = deposit_electric_current(&t, &grid, DepositKernel::NearestCell).unwrap();
    let report = continuity_residual(&j).unwrap();
    assert_eq!(report.charge_spread, 0.0, "{:?}", report.slice_charges);
    assert_eq!(grid_charge(&j, 0).unwrap(), 1.0);
    // trilinear weights sum to one up to rounding
    let j = deposit_electric_current(&t, &grid, DepositKernel::TrilinearNearestTime).unwrap();
    assert!(continuity_residual(&j).unwrap().charge_spread <= 4.0 * f64::EPSILON);
}

#[test]
fn conjugate_orbit_solves_the_reversed_field_equation() {
    let field = StandingField { amplitude: 0.5, length: 1.0 };
    let t = orbit(&field, FourVector::ZERO, FourVector::new(1.25, 0.75, 0.0, 0.0), (0.0, 3.0), 1e-3);
    let c = charge_conjugate(&t);
    let points = |tr: &Trajectory| -> Vec<[u64; 4]> {
        let mut v: Vec<_> = tr.samples().iter().map(|p| p.gamma.0.map(f64::to_bits)).collect();
        v.sort();
        v
    };
    assert_eq!(points(&c), points(&t));
    for (a, b) in c.samples().iter().zip(t.samples().iter().rev()) {
        assert_eq!(a.gamma_dot.square().to_bits(), b.gamma_dot.square().to_bits());
    }
    assert!(eom_residual(&c, &ReversedField(&field)).unwrap() < 1e-9);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn constant_field_orbits_keep_their_mass_shell(
        e in prop::array::uniform3(-0.5f64..0.5),
        b in prop::array::uniform3(-0.5f64..0.5),
        v in prop::array::uniform3(-0.6f64..0.6),
    ) {
        let u = FourVector::new((1.0 + v.iter().map(|c| c * c).sum::<f64>()).sqrt(), v[0], v[1], v[2]);
        let field = ConstantField::new(AntisymTensor::from_e_b(e, b));
        let t = orbit(&field, FourVector::ZERO, u, (0.0, 10.0), 1e-3);
        // γ̇² is a difference of squares of components that grow like e^{|E|s},
        // so its rounding floor scales with (γ̇⁰)²
        let g0 = t.samples().iter().fold(1.0f64, |m, p| m.max(p.gamma_dot.0[0].abs()));
        prop_assert!(t.gamma_dot_sq_drift() < 1e-10 * g0 * g0, "drift {:e}, γ̇⁰ up to {g0}", t.gamma_dot_sq_drift());
    }

    #[test]
    fn dilatation_shift_identity_on_accelerated_orbits(
        a in prop::array::uniform3(-3.0f64..3.0),
        b in -2.0f64..2.0,
        e in -0.5f64..0.5,
    ) {
        let field = ConstantField::electric([e, 0.3, 0.0]);
        let t = orbit(&field, FourVector::ZERO, FourVector::new(1.25, 0.0, 0.75, 0.0), (0.0, 4.0), 1e-3);
        let d = particle_dilatation_charge(&t, 1.5, [0.0; 3], 0.0).unwrap();
        let ds = particle_dilatation_charge(&t, 1.5, a, b).unwrap();
        let (_, _, gd) = time_crossing(&t, 1.5).unwrap().unwrap();
        let p = mechanical_momentum(&t, 1.5).unwrap();
        let r = dilatation_shift_check(ds, d, p, &[gd.square()], a, &[b]).unwrap();
        prop_assert!(r <= 1e-6 * d.abs().max(ds.abs()).max(1.0), "{:e}", r);
    }
}
