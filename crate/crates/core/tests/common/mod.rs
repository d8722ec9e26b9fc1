#![allow(dead_code)]

use homognet::model::{self, Dataset, FactorParams, ParallelModel};
use homognet::nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Flat coordinates of one factor, `u` then `v` (or `V` column-major then `z`).
pub fn coords(w: &FactorParams) -> Vec<f64> {
    match w {
        FactorParams::Pair { u, v } => u.iter().chain(v.iter()).copied().collect(),
        FactorParams::Head { v, z } => v.iter().chain(z.iter()).copied().collect(),
    }
}

pub fn with_coord(w: &FactorParams, k: usize, x: f64) -> FactorParams {
    let mut w = w.clone();
    match &mut w {
        FactorParams::Pair { u, v } => {
            if k < u.len() {
                u[k] = x
            } else {
                v[k - u.len()] = x
            }
        }
        FactorParams::Head { v, z } => {
            if k < v.len() {
                v.as_mut_slice()[k] = x
            } else {
                z[k - v.len()] = x
            }
        }
    }
    w
}

/// Central differences of the objective in every coordinate of every factor.
pub fn fd_gradient(ds: &Dataset, m: &ParallelModel, h: f64) -> Vec<Vec<f64>> {
    m.factors
        .iter()
        .enumerate()
        .map(|(j, w)| {
            let c = coords(w);
            (0..c.len())
                .map(|k| {
                    let at = |x: f64| {
                        let mut f = m.factors.clone();
                        f[j] = with_coord(w, k, x);
                        model::objective(ds, &m.with_factors(f)).unwrap()
                    };
                    (at(c[k] + h) - at(c[k] - h)) / (2.0 * h)
                })
                .collect()
        })
        .collect()
}

pub fn singular_values(a: &DMatrix<f64>) -> Vec<f64> {
    let mut s: Vec<f64> = a.clone().svd(false, false).singular_values.iter().copied().collect();
    s.sort_by(|x, y| y.partial_cmp(x).unwrap());
    s
}

pub fn nuclear(a: &DMatrix<f64>) -> f64 {
    singular_values(a).iter().sum()
}

pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

/// `max_{||v|| = 1} ||sum_i r_i [v^T x_i]_+||` for two-dimensional inputs by
/// enumerating the arcs on which the active set is constant.
pub fn relu_sup_2d(xs: &[DVector<f64>], rs: &[DVector<f64>]) -> f64 {
    use std::f64::consts::{PI, TAU};
    let wrap = |a: f64| a.rem_euclid(TAU);
    let mut cuts: Vec<f64> = xs.iter().flat_map(|x| {
        let a = x[1].atan2(x[0]);
        [wrap(a + PI / 2.0), wrap(a - PI / 2.0)]
    }).collect();
    cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let dir = |t: f64| DVector::from_vec(vec![t.cos(), t.sin()]);
    let value = |v: &DVector<f64>| {
        let mut s = DVector::zeros(rs[0].len());
        for (x, r) in xs.iter().zip(rs) {
            s += r * v.dot(x).max(0.0);
        }
        s.norm()
    };
    let mut best = 0.0f64;
    for k in 0..cuts.len() {
        let a = cuts[k];
        let b = if k + 1 < cuts.len() { cuts[k + 1] } else { cuts[0] + TAU };
        best = best.max(value(&dir(a)));
        let mid = dir(0.5 * (a + b));
        let mut bm = DMatrix::zeros(rs[0].len(), 2);
        for (x, r) in xs.iter().zip(rs) {
            if mid.dot(x) > 0.0 {
                bm += r * x.transpose();
            }
        }
        let eig = SymmetricEigen::new(bm.tr_mul(&bm));
        for c in 0..2 {
            let e = eig.eigenvectors.column(c).into_owned();
            for sgn in [1.0, -1.0] {
                let t = wrap((sgn * e[1]).atan2(sgn * e[0]));
                let t = if t < a { t + TAU } else { t };
                if t > a && t < b {
                    best = best.max(value(&dir(t)));
                }
            }
        }
    }
    best
}
