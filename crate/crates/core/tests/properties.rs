use canomap::hamilton::{fundamental_matrix, integrate, lagrangian_on_extremal, weierstrass_excess, FundamentalKind};
use canomap::invariants::{action_function, mapping_symplectic_defect};
use canomap::liemap::{poisson_bracket, PhaseFunction};
use canomap::mapping::{apply_map, invert_map, jacobian_condition};
use canomap::phasecore::verify_derivatives;
use canomap::scenarios::{bilinear_coupling, rotation_example};
use canomap::{ControllingFunction, DynamicSystem, MapVariant, MappingSpec, Matrix, PhaseState, Sign, Vector};
use proptest::prelude::*;

fn coord() -> impl Strategy<Value = f64> {
    -10.0f64..10.0
}

fn state(n: usize) -> impl Strategy<Value = PhaseState> {
    (
        prop::collection::vec(coord(), n),
        prop::collection::vec(coord(), n),
        -5.0f64..5.0,
    )
        .prop_map(|(x, l, t)| PhaseState::from_slices(&x, &l, t).unwrap())
}

fn variants() -> impl Strategy<Value = MapVariant> {
    let sign = prop_oneof![Just(Sign::Plus), Just(Sign::Minus)];
    prop_oneof![
        Just(MapVariant::Standard),
        Just(MapVariant::Symplectic),
        Just(MapVariant::Cross),
        (sign.clone(), sign.clone()).prop_map(|(sy, smu)| MapVariant::Signed { sy, smu }),
        (sign.clone(), sign).prop_map(|(sy, smu)| MapVariant::Swapped { sy, smu }),
    ]
}

proptest! {
    #[test]
    fn zero_function_is_identity(v in variants(), s in state(3)) {
        let spec = MappingSpec::new(v, ControllingFunction::zero(3));
        let (y, mu) = apply_map(&spec, &s).unwrap();
        prop_assert_eq!(y, s.x.clone());
        prop_assert_eq!(mu, s.lam.clone());
    }

    #[test]
    fn rotation_is_exact_for_any_time_term(x in coord(), l in coord(), t in -5.0f64..5.0, w in 0.1f64..3.0) {
        let (_, spec) = rotation_example(move |s| (w * s).sin(), move |s| w * (w * s).cos());
        let (y, mu) = apply_map(&spec, &PhaseState::from_slices(&[x], &[l], t).unwrap()).unwrap();
        prop_assert!((y[0] - l).abs() < 1e-12 && (mu[0] + x).abs() < 1e-12);
    }

    #[test]
    fn rotation_is_symplectic(s in state(1)) {
        let (_, spec) = rotation_example(|_| 0.0, |_| 0.0);
        prop_assert!(mapping_symplectic_defect(&spec, &s).unwrap() < 1e-9);
    }

    #[test]
    fn inverse_recovers_preimage(c in -0.85f64..0.85, s in state(2)) {
        let spec = MappingSpec::new(MapVariant::Standard, bilinear_coupling(2, c));
        let (dy, dm) = jacobian_condition(&spec, &s).unwrap();
        prop_assume!(dy.abs() > 0.1 && dm.abs() > 0.1);
        let (y, mu) = apply_map(&spec, &s).unwrap();
        let guess = PhaseState::new(y.clone(), mu.clone(), s.t).unwrap();
        let back = invert_map(&spec, &y, &mu, s.t, &guess).unwrap();
        prop_assert!((&back.x - &s.x).amax() < 1e-9);
        prop_assert!((&back.lam - &s.lam).amax() < 1e-9);
    }

    #[test]
    fn bracket_is_antisymmetric(s in state(2), a in -2.0f64..2.0) {
        let psi = PhaseFunction::new(2, move |x, l, _| x[0] * l[1] + a * x[1] * x[1]);
        let om = PhaseFunction::new(2, |x, l, _| (x[0] - l[0]).sin() + l[1] * l[1]);
        let ab = poisson_bracket(&psi, &om, &s).unwrap();
        let ba = poisson_bracket(&om, &psi, &s).unwrap();
        prop_assert!((ab + ba).abs() <= 1e-12 * ab.abs().max(1.0));
    }

    #[test]
    fn weierstrass_excess_is_zero(s in state(3), xd in prop::collection::vec(coord(), 3), g in prop::collection::vec(coord(), 3)) {
        let sys = DynamicSystem::new(3, |x, t| Vector::from_vec(vec![x[1] * x[2], -x[0] + t, x[0] * x[0]])).unwrap();
        let e = weierstrass_excess(&sys, &s, &Vector::from_vec(xd), &Vector::from_vec(g)).unwrap();
        prop_assert!(e.abs() < 1e-10);
        prop_assert_eq!(lagrangian_on_extremal(&sys, &s).unwrap(), 0.0);
    }

    #[test]
    fn quadratic_fields_have_accurate_fd_jacobians(a in -3.0f64..3.0, b in -3.0f64..3.0, s in state(2)) {
        let sys = DynamicSystem::new(2, move |x, _| Vector::from_vec(vec![a * x[0] * x[1] + x[1], b * x[0] * x[0] - x[1] * x[1]]))
            .unwrap()
            .with_jacobian(move |x, _| Matrix::from_row_slice(2, 2, &[a * x[1], a * x[0] + 1.0, 2.0 * b * x[0], -2.0 * x[1]]))
            .autonomous();
        let r1 = verify_derivatives(&sys, std::slice::from_ref(&s), 1e-5).unwrap();
        let r2 = verify_derivatives(&sys, std::slice::from_ref(&s), 1e-5).unwrap();
        prop_assert!(r1.block("jac").unwrap().max_rel_error < 1e-8);
        prop_assert_eq!(r1, r2);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn multipliers_follow_adjoint_fundamental_matrix(entries in prop::collection::vec(-1.0f64..1.0, 16), n in 1usize..=4, s in state(4)) {
        let m = Matrix::from_fn(n, n, |i, j| entries[i * 4 + j]);
        let sys = DynamicSystem::linear(m).unwrap();
        let s0 = PhaseState::from_slices(&s.x.as_slice()[..n], &s.lam.as_slice()[..n], 0.0).unwrap();
        let traj = integrate(&sys, &s0, 1.0, 1e-2).unwrap();
        let b = fundamental_matrix(&sys, &traj, FundamentalKind::B).unwrap();
        let d = fundamental_matrix(&sys, &traj, FundamentalKind::D).unwrap();
        for (k, p) in traj.samples.iter().enumerate() {
            prop_assert!((&b.values[k] * &s0.lam - &p.lam).amax() < 1e-8);
            prop_assert!((&b.values[k] * d.values[k].transpose() - Matrix::identity(n, n)).amax() < 1e-8);
        }
    }

    #[test]
    fn action_vanishes_for_large_multipliers(scale in 1.0f64..1e3, x0 in 0.1f64..2.0) {
        let sys = DynamicSystem::linear(Matrix::identity(1, 1)).unwrap();
        let traj = integrate(&sys, &PhaseState::from_slices(&[x0], &[scale], 0.0).unwrap(), 1.0, 1e-3).unwrap();
        prop_assert!(action_function(&sys, &traj).unwrap().s.abs() < 1e-9);
    }
}
