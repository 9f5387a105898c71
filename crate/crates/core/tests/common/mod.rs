#![allow(dead_code)]

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use skan::{Matrix, SFuncKind, SkanNetwork};

/// Naive `Y[b][j] = Σ_i f(K[j][i], X[b][i])`.
pub fn oracle_forward(kind: SFuncKind, k: &Matrix, x: &Matrix) -> Matrix {
    let mut y = Matrix::zeros(x.rows(), k.rows());
    for b in 0..x.rows() {
        for j in 0..k.rows() {
            let mut acc = 0.0;
            for i in 0..k.cols() {
                acc += kind.eval(k.get(j, i), x.get(b, i)).unwrap();
            }
            y.set(b, j, acc);
        }
    }
    y
}

/// Naive triple loop for `(dK, dX)`.
pub fn oracle_backward(kind: SFuncKind, k: &Matrix, x: &Matrix, g: &Matrix) -> (Matrix, Matrix) {
    let mut dk = Matrix::zeros(k.rows(), k.cols());
    let mut dx = Matrix::zeros(x.rows(), x.cols());
    for j in 0..k.rows() {
        for i in 0..k.cols() {
            let mut acc = 0.0;
            for b in 0..x.rows() {
                acc += g.get(b, j) * kind.grad(k.get(j, i), x.get(b, i)).unwrap().0;
            }
            dk.set(j, i, acc);
        }
    }
    for b in 0..x.rows() {
        for i in 0..k.cols() {
            let mut acc = 0.0;
            for j in 0..k.rows() {
                acc += g.get(b, j) * kind.grad(k.get(j, i), x.get(b, i)).unwrap().1;
            }
            dx.set(b, i, acc);
        }
    }
    (dk, dx)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-scale..scale))
}

/// Random inputs where roughly a third of the entries are exactly zero, like MNIST pixels.
pub fn sparse_input(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| if rng.random_bool(0.35) { 0.0 } else { rng.random_range(-2.0..2.0) })
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn max_abs_diff(a: &Matrix, b: &Matrix) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1.0)
}

/// Central finite differences of the end-to-end mean cross-entropy w.r.t. every parameter.
pub fn finite_difference_grads(net: &SkanNetwork, x: &Matrix, labels: &[u8], h: f64) -> Vec<Matrix> {
    let loss = |n: &SkanNetwork| skan::softmax_cross_entropy(&n.logits(x).unwrap(), labels).unwrap().0;
    let mut out = Vec::new();
    for l in 0..net.layers().len() {
        let shape = net.layers()[l].params.shape();
        let mut g = Matrix::zeros(shape.0, shape.1);
        for idx in 0..shape.0 * shape.1 {
            let mut plus = net.clone();
            plus.params_mut()[l].as_mut_slice()[idx] += h;
            let mut minus = net.clone();
            minus.params_mut()[l].as_mut_slice()[idx] -= h;
            g.as_mut_slice()[idx] = (loss(&plus) - loss(&minus)) / (2.0 * h);
        }
        out.push(g);
    }
    out
}

/// `SKAN_MNIST_DIR`, else `<workspace>/data/mnist`.
pub fn mnist_dir() -> PathBuf {
    skan::data::mnist_dir_from_env()
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"))
}
