mod common;

use approx::assert_relative_eq;
use common::*;
use homognet::bounds::{self, HypothesisBounds, REPORT_LABEL};
use homognet::experiments;
use homognet::polar::{self, PolarOptions};
use homognet::rng::{self, derive_seed};
use homognet::trainer::{self, TrainOptions};
use homognet::zoo::{self, Dims, Family, TeacherSpec};
use homognet::Error;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn nuclear_variational_brackets_and_matches(m in 1usize..6, n in 1usize..6, seed in 0u64..10_000) {
        let a = rng::gaussian_mat(&mut rng::rng(seed), m, n, 1.0);
        let nv = bounds::nuclear_variational(&a, m.min(n), 500).unwrap();
        let truth = nuclear(&a);
        prop_assert!(nv.lower_bound <= truth * (1.0 + 1e-12));
        prop_assert!(nv.upper_bound >= truth * (1.0 - 1e-12));
        prop_assert!(rel(nv.value, truth) <= 1e-6);
        prop_assert!(nv.converged);
    }

    #[test]
    fn eps_ordering_and_scaling(gamma in 0.1..5.0f64, sx in 0.1..3.0f64, g in 0.0..5.0f64, sy in 0.0..2.0f64) {
        let e0 = bounds::eps0(gamma, sx, 1.0, g, sy);
        let e1 = bounds::eps1(gamma, sx, 1.0, g, sy);
        prop_assert!(e0 <= e1);
        prop_assert!(e1 >= 16.0 * gamma * gamma * sx * sx * (1.0 - 1e-15));
        prop_assert!((e0 * e1 - (16.0 * gamma * gamma * sx * sx).powi(2) * 0.25 * (1.0 + g * g / (gamma * gamma) * (1.0 + sy * sy / (sx * sx)))).abs() <= 1e-9 * e0 * e1);
    }
}

#[test]
fn nuclear_variational_with_too_few_columns_keeps_valid_bounds() {
    let mut r = rng::rng(5);
    let a = rng::gaussian_mat(&mut r, 4, 3, 1.0) * rng::gaussian_mat(&mut r, 3, 4, 1.0);
    let nv = bounds::nuclear_variational(&a, 1, 300).unwrap();
    let truth = nuclear(&a);
    assert!(nv.lower_bound <= truth * (1.0 + 1e-12) && nv.upper_bound >= truth);
    assert!(!nv.converged);
    assert!(bounds::nuclear_variational(&a, 0, 10).is_err());
}

#[test]
fn eps2_and_tail_spot_values() {
    // max(1, 2 + 2, 8 * 2 * 2 * 0.5 / (1 * 2), 16) = 16
    assert_eq!(bounds::eps2(1.0, 2.0, 1.0, 2.0, 2.0, 0.5), 4.0 * 1.0 * 2.0 * 16.0);
    assert_relative_eq!(bounds::delta_c(100, 4, 3.0, 0.125).unwrap(), 200.0 * (-2.0f64).exp(), max_relative = 1e-15);
    assert!(bounds::delta_c(100, 4, 0.5, 0.125).is_err());
    assert!(bounds::delta_c(100, 4, 2.0, 0.0).is_err());
}

fn trained(family: Family, n: usize, seed: u64) -> (homognet::Dataset, homognet::ParallelModel, homognet::PolarCertificate) {
    let t = TeacherSpec::random(family, Dims::new(4, 4), 1, 0.1, derive_seed(seed, 1)).unwrap();
    let ds = experiments::generate(&family, &t, n, derive_seed(seed, 2)).unwrap();
    let (m, c, _) = trainer::meta_train(&ds, family, ds.dims, 1e-2, &TrainOptions::default()).unwrap();
    (ds, m, c)
}

#[test]
fn bound_report_shape_and_monotonicity() {
    let family = Family::MatrixSensing;
    let mut totals = Vec::new();
    for n in [200, 800, 3200] {
        let (ds, m, c) = trained(family, n, 1);
        let rep = bounds::bound_report(&family, &ds, &m, &c, 0.05, None).unwrap();
        assert_eq!(rep.label, REPORT_LABEL);
        assert_eq!(rep.normalization, 1);
        assert_eq!(rep.n_samples, n);
        assert!(rep.statistical_error > 0.0);
        assert_relative_eq!(rep.total, rep.optimization_error.max(0.0) + rep.statistical_error, max_relative = 1e-15);
        assert_relative_eq!(rep.optimization_error, m.lambda * rep.ledger.omega_up * (c.value - 1.0), max_relative = 1e-12);
        let json = serde_json::to_value(&rep).unwrap();
        for key in ["family", "N", "delta", "ledger", "optimization_error", "statistical_error", "total", "normalization", "label"] {
            assert!(json.get(key).is_some(), "missing {key}");
        }
        totals.push(rep.statistical_error);
    }
    // Same ledger constants, larger N: the statistical term shrinks.
    let (ds, m, c) = trained(family, 400, 2);
    let rep = bounds::bound_report(&family, &ds, &m, &c, 0.05, Some(3.0)).unwrap();
    let small = bounds::statistical_error(&rep.ledger, 400, 0.05).unwrap();
    let large = bounds::statistical_error(&rep.ledger, 4000, 0.05).unwrap();
    assert!(large < small);
    assert!(totals.iter().all(|t| t.is_finite()));
}

#[test]
fn bound_report_for_vector_families_uses_output_normalization() {
    let (ds, m, c) = trained(Family::TwoLayerLinear, 300, 3);
    let rep = bounds::bound_report(&Family::TwoLayerLinear, &ds, &m, &c, 0.1, None).unwrap();
    assert_eq!(rep.normalization, 4);
    assert_relative_eq!(rep.optimization_error, m.lambda / 4.0 * rep.ledger.omega_up * (c.value - 1.0), max_relative = 1e-12);
}

#[test]
fn bound_report_rejects_non_stationary_models_and_bad_inputs() {
    let family = Family::MatrixSensing;
    let t = TeacherSpec::random(family, Dims::new(3, 3), 1, 0.0, 1).unwrap();
    let ds = experiments::generate(&family, &t, 50, 2).unwrap();
    let m = zoo::make_model(family, ds.dims, 2, 1.0, 1e-2, 3).unwrap();
    let c = polar::polar(&ds, &m, &PolarOptions::default()).unwrap();
    assert!(matches!(bounds::bound_report(&family, &ds, &m, &c, 0.05, None), Err(Error::Constraint(_))));
    let (ds, m, c) = trained(family, 100, 4);
    assert!(bounds::bound_report(&family, &ds, &m, &c, 0.0, None).is_err());
    assert!(bounds::bound_report(&family, &ds, &m, &c, 0.05, Some(0.5)).is_err());
}

#[test]
fn master_constants_enforce_the_class_constraint() {
    let family = Family::TwoLayerRelu;
    let dims = Dims::new(3, 3);
    let t = TeacherSpec::random(family, dims, 2, 0.0, 1).unwrap();
    let ok = HypothesisBounds { width: 2, b_u: 1.0, b_v: 1.0, c_mult: 1.0 };
    assert!(bounds::master_constants(&family, dims, &t, &ok, 2.0, 100, 1.0).is_ok());
    for bad in [
        HypothesisBounds { c_mult: 0.5, ..ok },
        HypothesisBounds { width: 0, ..ok },
        HypothesisBounds { b_v: 0.0, ..ok },
    ] {
        assert!(matches!(bounds::master_constants(&family, dims, &t, &bad, 2.0, 100, 1.0), Err(Error::Constraint(_))));
    }
    assert!(bounds::master_constants(&family, dims, &t, &ok, 0.9, 100, 1.0).is_err());
    let other = TeacherSpec::random(Family::TwoLayerLinear, dims, 2, 0.0, 1).unwrap();
    assert!(bounds::master_constants(&family, dims, &other, &ok, 2.0, 100, 1.0).is_err());
}

#[test]
fn b_of_c_vanishes_as_g_grows() {
    for family in [Family::MatrixSensing, Family::TwoLayerLinear, Family::TwoLayerRelu, Family::MultiHeadAttention { temperature: 1.0, tokens: 3 }] {
        let dims = Dims::new(3, 3);
        let t = TeacherSpec::random(family, dims, 2, 0.0, 4).unwrap();
        let h = HypothesisBounds { width: 3, b_u: 1.0, b_v: 1.5, c_mult: 1.2 };
        let at = |g: f64| bounds::master_constants(&family, dims, &t, &h, g, 100, 1.0).unwrap().b_of_c;
        assert!(at(6.0) < at(3.0) && at(3.0) < at(2.0), "{}", family.name());
        assert!(at(12.0) < 1e-20);
    }
}

#[test]
fn omega_upper_of_sensing_teacher_is_nuclear_norm() {
    let t = TeacherSpec::random(Family::MatrixSensing, Dims::new(5, 4), 3, 0.0, 8).unwrap();
    assert_relative_eq!(bounds::omega_upper(&t), nuclear(&t.matrix().unwrap()), max_relative = 1e-12);
}

#[test]
fn default_g_radius_grows_with_n_and_confidence() {
    let f = Family::MatrixSensing;
    let g = |n, d| bounds::default_g_radius(&f, n, 2, d).unwrap();
    assert!(g(1000, 0.05) > g(100, 0.05));
    assert!(g(100, 0.01) > g(100, 0.05));
    assert!(g(1, 1.0) >= 1.0);
    assert!(bounds::default_g_radius(&f, 10, 1, 1.5).is_err());
}
