use std::io::BufReader;
use std::sync::Arc;

use emfg_core::discretization::{read_field, residual, write_field, DiscreteField, SpaceTimeGrid};
use emfg_core::models::{CommonParams, Congestion, ModelRef, Monotone, SeparatedPower, Sql};
use emfg_core::reformulation::{invert_h, GradientPoint};
use emfg_core::solver::{base_solution, theta_model};
use proptest::prelude::*;

fn models() -> Vec<ModelRef> {
    let p = CommonParams::default();
    vec![
        Arc::new(Sql::new(p.clone()).unwrap()),
        Arc::new(Congestion::new(p.clone(), 1.5, 0.5).unwrap()),
        Arc::new(SeparatedPower::new(p, 1.5).unwrap()),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn inversion_recovers_density(which in 0usize..3, x in 0.0f64..1.0, p in -4.0f64..4.0, lm in -3.0f64..3.0) {
        let model = &models()[which];
        let m = lm.exp();
        let s = model.hamiltonian(&[x], &[p], m);
        let back = invert_h(model.as_ref(), &[x], &[p], s, None).unwrap();
        prop_assert!(((back - m) / m).abs() < 1e-10);
    }

    #[test]
    fn hamiltonian_decreases_in_density(which in 0usize..3, x in 0.0f64..1.0, p in -4.0f64..4.0, lm in -3.0f64..3.0) {
        let model = &models()[which];
        prop_assert!(model.hamiltonian_m(&[x], &[p], lm.exp()) < 0.0);
    }

    #[test]
    fn theta_endpoints(x in 0.0f64..1.0, p in -3.0f64..3.0, lm in -2.0f64..2.0) {
        let model = &models()[1];
        let m = lm.exp();
        let one = theta_model(model, 1.0);
        prop_assert_eq!(one.hamiltonian(&[x], &[p], m), model.hamiltonian(&[x], &[p], m));
        let zero = theta_model(model, 0.0);
        let frozen = model.hamiltonian(&[0.0], &[p], m);
        prop_assert!((zero.hamiltonian(&[x], &[p], m) - frozen).abs() <= 1e-12 * (1.0 + frozen.abs()));
    }

    #[test]
    fn field_files_round_trip(seed in 0u64..1000) {
        let grid = SpaceTimeGrid::new(1, 8, 8, 0.7).unwrap();
        let field = DiscreteField::from_fn(&grid, |t, x| ((seed as f64 + 1.0) * (t + 3.0 * x[0])).sin() * 1e3);
        let mut buf = Vec::new();
        write_field(&grid, &field, &mut buf).unwrap();
        let back = read_field(&grid, BufReader::new(buf.as_slice())).unwrap();
        prop_assert_eq!(back.as_slice(), field.as_slice());
    }
}

#[test]
fn base_solution_is_exact_in_two_dimensions() {
    let params = CommonParams {
        dim: 2,
        coupling: Monotone::Power(1.0),
        ..CommonParams::default()
    };
    let model: ModelRef = Arc::new(Sql::new(params).unwrap());
    let grid = SpaceTimeGrid::new(2, 8, 8, 1.0).unwrap();
    let u = base_solution(model.as_ref(), &grid);
    let r = residual(theta_model(&model, 0.0).as_ref(), &grid, &u).unwrap();
    assert!(r.max_abs() < 1e-12, "{}", r.max_abs());
}

#[test]
fn reformulation_is_consistent_with_inversion() {
    let model = &models()[0];
    let gp = GradientPoint::new(&[0.3], &[0.4], -0.2, 0.1);
    let asm = emfg_core::reformulation::assemble(model.as_ref(), &gp, None).unwrap();
    let m = invert_h(model.as_ref(), &[0.3], &[0.4], -0.2, None).unwrap();
    assert!((asm.m - m).abs() < 1e-12 * m);
    assert_eq!(model.name(), "sql");
}
