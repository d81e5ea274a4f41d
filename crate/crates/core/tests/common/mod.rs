//! Helpers shared by the integration tests.
#![allow(dead_code)]

use gustdock::qp::CscMatrix;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn spd(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let g = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    g.transpose() * &g + DMatrix::identity(n, n) * 0.2
}

pub fn to_csc(m: &DMatrix<f64>) -> CscMatrix {
    let (r, c) = m.shape();
    let row_major: Vec<f64> = (0..r).flat_map(|i| (0..c).map(move |j| (i, j))).map(|(i, j)| m[(i, j)]).collect();
    CscMatrix::from_dense(r, c, &row_major)
}

/// Minimizer over all free / lower / upper patterns of the box.
pub fn box_oracle(p: &DMatrix<f64>, q: &DVector<f64>, l: &[f64], u: &[f64]) -> DVector<f64> {
    let n = q.len();
    let mut best: Option<(f64, DVector<f64>)> = None;
    for code in 0..3usize.pow(n as u32) {
        let mut x = DVector::zeros(n);
        let mut free = Vec::new();
        let mut c = code;
        for i in 0..n {
            match c % 3 {
                0 => free.push(i),
                1 => x[i] = l[i],
                _ => x[i] = u[i],
            }
            c /= 3;
        }
        if !free.is_empty() {
            let k = free.len();
            let pff = DMatrix::from_fn(k, k, |a, b| p[(free[a], free[b])]);
            let rhs = DVector::from_fn(k, |a, _| {
                let i = free[a];
                -(q[i] + (0..n).filter(|j| !free.contains(j)).map(|j| p[(i, j)] * x[j]).sum::<f64>())
            });
            let sol = pff.lu().solve(&rhs).expect("positive definite block");
            for (a, &i) in free.iter().enumerate() {
                x[i] = sol[a];
            }
        }
        if (0..n).any(|i| x[i] < l[i] - 1e-12 || x[i] > u[i] + 1e-12) {
            continue;
        }
        let obj = 0.5 * x.dot(&(p * &x)) + q.dot(&x);
        if best.as_ref().map_or(true, |(b, _)| obj < *b) {
            best = Some((obj, x));
        }
    }
    best.expect("box is nonempty").1
}
