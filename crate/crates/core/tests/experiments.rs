mod common;

use approx::assert_relative_eq;
use common::*;
use homognet::experiments::{self, ExperimentConfig, LIPSCHITZ_HEADER, RATE_HEADER};
use homognet::model::{self, ParallelModel};
use homognet::nalgebra::DMatrix;
use homognet::rng::{self, derive_seed};
use homognet::trainer::{self, TrainOptions};
use homognet::zoo::{self, Dims, Family, TeacherSpec};
use homognet::Error;
use proptest::prelude::*;

fn sensing_data(n: usize, sigma: f64, seed: u64) -> homognet::Dataset {
    let t = TeacherSpec::random(Family::MatrixSensing, Dims::new(4, 3), 2, sigma, seed).unwrap();
    experiments::generate(&Family::MatrixSensing, &t, n, seed + 1).unwrap()
}

#[test]
fn inputs_have_unit_second_moment() {
    for family in [Family::MatrixSensing, Family::TwoLayerLinear, Family::TwoLayerRelu, Family::MultiHeadAttention { temperature: 1.0, tokens: 3 }] {
        let t = TeacherSpec::random(family, Dims::new(4, 3), 2, 0.0, 3).unwrap();
        let ds = experiments::generate(&family, &t, 10_000, 4).unwrap();
        let second = ds.inputs.iter().map(|x| x.norm_squared()).sum::<f64>() / ds.len() as f64;
        assert!((second - 1.0).abs() < 0.05, "{}: {second}", family.name());
        for (x, y) in ds.inputs.iter().zip(&ds.targets).take(20) {
            assert!((t.apply(x) - y).norm() < 1e-12);
        }
    }
}

#[test]
fn generation_is_deterministic_and_checks_family() {
    let a = sensing_data(50, 0.1, 7);
    let b = sensing_data(50, 0.1, 7);
    assert_eq!(a.inputs, b.inputs);
    assert_eq!(a.targets, b.targets);
    assert_ne!(sensing_data(50, 0.1, 8).targets, a.targets);
    let t = TeacherSpec::random(Family::TwoLayerLinear, Dims::new(3, 3), 1, 0.0, 1).unwrap();
    assert!(experiments::generate(&Family::TwoLayerRelu, &t, 5, 1).is_err());
}

/// Data gradient `(1/N) sum_i (y_i - <M, X_i>) X_i`, the negated smooth part's gradient.
fn data_gradient(ds: &homognet::Dataset, m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut g = DMatrix::zeros(m.nrows(), m.ncols());
    for (x, y) in ds.inputs.iter().zip(&ds.targets) {
        g += x * ((y[0] - m.dot(x)) / ds.len() as f64);
    }
    g
}

#[test]
fn convex_oracle_satisfies_optimality_conditions() {
    let ds = sensing_data(300, 0.1, 11);
    let lambda = 0.02;
    let o = experiments::convex_oracle_sensing(&ds, lambda, 100_000).unwrap();
    assert!(o.converged);
    let g = data_gradient(&ds, &o.m_hat);
    // Subgradient condition: ||G||_2 <= lambda and <G, M> = lambda ||M||_*.
    assert!(singular_values(&g)[0] <= lambda * (1.0 + 1e-4));
    assert_relative_eq!(g.dot(&o.m_hat), lambda * nuclear(&o.m_hat), max_relative = 1e-4);
    assert_relative_eq!(o.nuclear_norm, nuclear(&o.m_hat), max_relative = 1e-10);
    let loss: f64 = ds.inputs.iter().zip(&ds.targets).map(|(x, y)| (y[0] - o.m_hat.dot(x)).powi(2)).sum::<f64>() / (2.0 * ds.len() as f64);
    assert_relative_eq!(o.value, loss + lambda * o.nuclear_norm, max_relative = 1e-10);
}

#[test]
fn convex_oracle_with_huge_lambda_returns_zero() {
    let ds = sensing_data(100, 0.1, 12);
    let o = experiments::convex_oracle_sensing(&ds, 1e6, 1000).unwrap();
    assert_eq!(o.m_hat.norm(), 0.0);
    let half_mean_sq = ds.targets.iter().map(|y| y[0] * y[0]).sum::<f64>() / (2.0 * ds.len() as f64);
    assert_relative_eq!(o.value, half_mean_sq, max_relative = 1e-12);
    assert!(experiments::convex_oracle_sensing(&ds, 0.0, 10).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]
    #[test]
    fn convex_value_lower_bounds_factored_objectives(width in 1usize..4, scale in 0.01..3.0f64, seed in 0u64..1000) {
        let ds = sensing_data(120, 0.1, 13);
        let lambda = 0.05;
        let o = experiments::convex_oracle_sensing(&ds, lambda, 100_000).unwrap();
        let m = zoo::make_model(Family::MatrixSensing, ds.dims, width, scale, lambda, seed).unwrap();
        prop_assert!(o.value <= model::objective(&ds, &m).unwrap() + 1e-9);
    }

    #[test]
    fn svt_shrinks_singular_values(m in 1usize..6, n in 1usize..6, tau in 0.0..2.0f64, seed in 0u64..1000) {
        let a = rng::gaussian_mat(&mut rng::rng(seed), m, n, 1.0);
        let got = singular_values(&experiments::svt(&a, tau));
        let want: Vec<f64> = singular_values(&a).into_iter().map(|s| (s - tau).max(0.0)).collect();
        for (g, w) in got.iter().zip(&want) {
            prop_assert!((g - w).abs() <= 1e-10);
        }
    }

    #[test]
    fn loglog_slope_recovers_power_laws(p in -3.0..3.0f64, c in 0.01..100.0f64) {
        let x = [10.0, 20.0, 40.0, 80.0, 160.0];
        let y: Vec<f64> = x.iter().map(|v: &f64| c * v.powf(p)).collect();
        prop_assert!((experiments::loglog_slope(&x, &y) - p).abs() <= 1e-10);
    }
}

#[test]
fn sandwich_check_rejects_unsuitable_models() {
    let ds = sensing_data(150, 0.1, 14);
    let (m, _, _) = trainer::meta_train(&ds, Family::MatrixSensing, ds.dims, 1e-2, &TrainOptions::default()).unwrap();
    let rep = experiments::sandwich_check(&ds, &m, 1e-2).unwrap();
    assert!(rep.convex_value <= rep.objective + rep.slack && rep.objective <= rep.upper + rep.slack);
    assert!(matches!(experiments::sandwich_check(&ds, &m, 2e-2), Err(Error::Argument(_))));
    let empty = ParallelModel::new(Family::MatrixSensing, ds.dims, vec![], 1e-2).unwrap();
    assert!(matches!(experiments::sandwich_check(&ds, &empty, 1e-2), Err(Error::Argument(_))));
    let rough = zoo::make_model(Family::MatrixSensing, ds.dims, 2, 1.0, 1e-2, 5).unwrap();
    assert!(matches!(experiments::sandwich_check(&ds, &rough, 1e-2), Err(Error::Constraint(_))));
}

#[test]
fn gap_on_identical_data_is_zero_and_heldout_size_rule() {
    let ds = sensing_data(80, 0.1, 15);
    let m = zoo::make_model(Family::MatrixSensing, ds.dims, 2, 1.0, 1e-2, 1).unwrap();
    assert_eq!(experiments::gap_against(&ds, &ds, &m).unwrap(), 0.0);
    let other = sensing_data(80, 0.1, 16);
    let by_hand = (model::loss(&other, &m).unwrap() - model::loss(&ds, &m).unwrap()).abs();
    assert_eq!(experiments::gap_against(&ds, &other, &m).unwrap(), by_hand);

    let t = ds.meta.teacher.clone().unwrap();
    let mut cfg = ExperimentConfig {
        family: Family::MatrixSensing,
        dims: ds.dims,
        teacher: t,
        n_samples: 80,
        heldout: None,
        lambda: 1e-2,
        delta: 0.05,
        seed: 0,
        widths: vec![],
        n_grid: vec![],
        repetitions: 1,
        train: TrainOptions::default(),
    };
    assert_eq!(cfg.heldout_size(80), 100_000);
    assert_eq!(cfg.heldout_size(50_000), 500_000);
    assert_eq!(cfg.heldout_size(500_000), 1_000_000);
    assert_eq!(cfg.heldout_size(2_000_000), 2_000_000);
    cfg.heldout = Some(500);
    assert_eq!(cfg.heldout_size(80), 500);
    assert!(cfg.validate().is_ok());
    cfg.heldout = Some(10);
    assert!(cfg.validate().is_err());
    cfg.heldout = Some(500);
    let est = experiments::monte_carlo_gap(&cfg, &ds, &m).unwrap();
    assert_eq!(est.heldout_size, 500);
    assert_eq!(est.gap, (est.heldout_loss - est.train_loss).abs());

    cfg.n_grid = vec![100, 200, 400];
    assert!(experiments::rate_sweep(&cfg).is_err());
    cfg.n_grid = vec![100, 200, 200, 400];
    assert!(experiments::rate_sweep(&cfg).is_err());
}

#[test]
fn lipschitz_sweep_matches_direct_training() {
    let family = Family::TwoLayerRelu;
    let t = TeacherSpec::random(family, Dims::new(3, 3), 2, 0.0, 21).unwrap();
    let opts = TrainOptions { max_iterations: 2000, ..TrainOptions::default() };
    let rows = experiments::lipschitz_sweep(&family, &t, &[1], 5, 60, 1e-2, &opts).unwrap();
    let ds = experiments::generate(&family, &t, 60, 5).unwrap();
    let o = TrainOptions { seed: derive_seed(5, 1), ..opts };
    let (m, tr) = trainer::train_fixed_width(&ds, family, t.dims, 1, 1e-2, &o).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].lipschitz_bound, zoo::lipschitz_upper_bound(&m));
    assert_eq!(rows[0].objective, tr.iterates.last().unwrap().objective);
    assert_eq!(rows[0].teacher_bound, t.lipschitz_bound());
    assert!(experiments::lipschitz_sweep(&family, &t, &[2, 1], 5, 60, 1e-2, &opts).is_err());
}

#[test]
fn csv_output_has_headers_and_round_trips() {
    let rows = vec![experiments::LipschitzRow {
        width: 3,
        lipschitz_bound: 0.1,
        teacher_bound: 1.0 / 3.0,
        objective: 2.5,
        grad_norm: 1e-12,
        iterations: 7,
        error: Some("iteration cap".into()),
    }];
    let mut buf = Vec::new();
    experiments::write_lipschitz_csv(&mut buf, &rows).unwrap();
    let mut rdr = csv::Reader::from_reader(buf.as_slice());
    assert_eq!(rdr.headers().unwrap().iter().collect::<Vec<_>>(), LIPSCHITZ_HEADER);
    let rec = rdr.records().next().unwrap().unwrap();
    assert_eq!(rec[1].parse::<f64>().unwrap(), 0.1);
    assert_eq!(rec[2].parse::<f64>().unwrap(), 1.0 / 3.0);
    assert_eq!(&rec[6], "iteration cap");

    let rate = vec![experiments::RateRow { n_samples: 100, mean_gap: 0.01, std_error: f64::NAN, bound_total: 3.0, mean_width: 1.5, certified: 2, failed: 1 }];
    let mut buf = Vec::new();
    experiments::write_rate_csv(&mut buf, &rate).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with(&RATE_HEADER.join(",")));
    assert!(text.lines().nth(1).unwrap().starts_with("100,1.0000000000000000e-2,NaN,"));
}
