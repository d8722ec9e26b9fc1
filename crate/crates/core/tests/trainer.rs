use homognet::experiments;
use homognet::model::{self, FactorParams};
use homognet::polar::{self, PolarOptions, Verdict};
use homognet::rng::derive_seed;
use homognet::trainer::{self, TrainOptions};
use homognet::zoo::{self, Dims, Family, TeacherSpec};
use homognet::{Dataset, Error};

fn data(family: Family, dims: Dims, sigma: f64, n: usize, seed: u64) -> Dataset {
    let t = TeacherSpec::random(family, dims, 2, sigma, derive_seed(seed, 1)).unwrap();
    experiments::generate(&family, &t, n, derive_seed(seed, 2)).unwrap()
}

#[test]
fn descent_never_increases_the_objective() {
    for family in [Family::MatrixSensing, Family::TwoLayerRelu, Family::MultiHeadAttention { temperature: 1.0, tokens: 3 }] {
        let ds = data(family, Dims::new(3, 3), 0.1, 40, 1);
        let m = zoo::make_model(family, ds.dims, 3, 0.5, 1e-2, 2).unwrap();
        let opts = TrainOptions { max_iterations: 500, ..TrainOptions::default() };
        let (out, trace) = trainer::descend(&ds, &m, &opts).unwrap();
        let f: Vec<f64> = trace.iterates.iter().map(|r| r.objective).collect();
        assert!(f.windows(2).all(|w| w[1] <= w[0] + 1e-12 * w[0].abs()), "{}", family.name());
        assert_eq!(out.width(), 3);
        assert_eq!(trace.iterates[0].iteration, 0);
        out.validate().unwrap();
    }
}

#[test]
fn attention_heads_stay_in_the_ball() {
    let family = Family::MultiHeadAttention { temperature: 2.0, tokens: 3 };
    let ds = data(family, Dims::new(2, 3), 0.0, 30, 3);
    let (m, _) = trainer::train_fixed_width(&ds, family, ds.dims, 2, 1e-3, &TrainOptions { max_iterations: 300, init_scale: 0.5, ..TrainOptions::default() }).unwrap();
    for w in &m.factors {
        let FactorParams::Head { z, .. } = w else { panic!("attention factor expected") };
        assert!(z.norm() <= 1.0 + 1e-12);
    }
}

#[test]
fn meta_train_grows_and_certifies_sensing() {
    let ds = data(Family::MatrixSensing, Dims::new(5, 5), 0.0, 100, 4);
    let (m, cert, trace) = trainer::meta_train(&ds, Family::MatrixSensing, ds.dims, 1e-3, &TrainOptions::default()).unwrap();
    assert_eq!(cert.verdict, Verdict::CertifiedGlobal);
    assert!(cert.value <= 1.0 + 1e-3);
    assert!(m.width() >= 2);
    assert_eq!(trace.width_events.len(), m.width() - 1);
    let its: Vec<usize> = trace.iterates.iter().map(|r| r.iteration).collect();
    assert!(its.windows(2).all(|w| w[0] < w[1]));
    assert!(!trace.hit_width_cap);
}

#[test]
fn width_cap_is_reported() {
    let ds = data(Family::MatrixSensing, Dims::new(5, 5), 0.0, 100, 5);
    let opts = TrainOptions { max_width: 1, ..TrainOptions::default() };
    let (m, cert, trace) = trainer::meta_train(&ds, Family::MatrixSensing, ds.dims, 1e-3, &opts).unwrap();
    assert_eq!(m.width(), 1);
    assert!(trace.hit_width_cap);
    assert_eq!(cert.verdict, Verdict::NotOptimal);
}

#[test]
fn meta_train_is_deterministic() {
    let ds = data(Family::TwoLayerLinear, Dims::new(3, 4), 0.1, 60, 6);
    let opts = TrainOptions { seed: 11, ..TrainOptions::default() };
    let a = trainer::meta_train(&ds, Family::TwoLayerLinear, ds.dims, 1e-2, &opts).unwrap();
    let b = trainer::meta_train(&ds, Family::TwoLayerLinear, ds.dims, 1e-2, &opts).unwrap();
    assert_eq!(a.0, b.0);
    assert_eq!(a.2, b.2);
}

#[test]
fn growing_along_the_witness_descends() {
    // With polar > 1 a small step along the witness lowers the objective.
    let ds = data(Family::MatrixSensing, Dims::new(4, 4), 0.0, 60, 7);
    let m = zoo::make_model(Family::MatrixSensing, ds.dims, 1, 1e-3, 1e-3, 0).unwrap();
    let cert = polar::polar(&ds, &m, &PolarOptions::default()).unwrap();
    assert!(cert.value > 1.0);
    let before = model::objective(&ds, &m).unwrap();
    let grown = trainer::grow_width(&m, &cert.witness, 1e-4).unwrap();
    assert!(model::objective(&ds, &grown).unwrap() < before);
    let zero = trainer::grow_width(&m, &cert.witness, 0.0).unwrap();
    assert_eq!(model::objective(&ds, &zero).unwrap(), before);
}

#[test]
fn grow_width_rejects_bad_witnesses() {
    let m = zoo::make_model(Family::MatrixSensing, Dims::new(2, 2), 1, 1.0, 0.1, 0).unwrap();
    let big = zoo::scale_homogeneous(&m.factors[0], 3.0);
    assert!(matches!(trainer::grow_width(&m, &big, 1e-3), Err(Error::Argument(_))));
    assert!(trainer::grow_width(&m, &m.factors[0], -1.0).is_err());
}

#[test]
fn invalid_options_are_rejected() {
    let ds = data(Family::MatrixSensing, Dims::new(2, 2), 0.0, 10, 8);
    for opts in [
        TrainOptions { grad_tol: 0.0, ..TrainOptions::default() },
        TrainOptions { backtrack: 1.0, ..TrainOptions::default() },
        TrainOptions { max_width: 0, ..TrainOptions::default() },
        TrainOptions { init_scale: f64::NAN, ..TrainOptions::default() },
    ] {
        assert!(matches!(trainer::meta_train(&ds, Family::MatrixSensing, ds.dims, 1e-2, &opts), Err(Error::Argument(_))));
    }
}

#[test]
fn iteration_cap_is_flagged() {
    let ds = data(Family::TwoLayerRelu, Dims::new(3, 3), 0.1, 40, 9);
    let (_, trace) = trainer::train_fixed_width(&ds, Family::TwoLayerRelu, ds.dims, 4, 1e-3, &TrainOptions { max_iterations: 3, ..TrainOptions::default() }).unwrap();
    assert!(trace.hit_iteration_cap);
    assert_eq!(trace.iterates.last().unwrap().iteration, 3);
}
