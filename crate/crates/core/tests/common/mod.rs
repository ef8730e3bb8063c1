#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use obsgrass::{DenseSsm, DiagonalSsm};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

pub fn normal_vec(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| StandardNormal.sample(rng))
}

pub fn normal_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| StandardNormal.sample(rng))
}

/// Exact spectral radius through the real Schur form.
pub fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    a.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Random dense `A` rescaled to spectral radius `rho`.
pub fn stable_dense(rng: &mut ChaCha8Rng, n: usize, rho: f64) -> DenseSsm {
    let a = normal_mat(rng, n, n);
    let r = spectral_radius(&a);
    DenseSsm::new(a * (rho / r), normal_vec(rng, n), normal_vec(rng, n)).unwrap()
}

pub fn stable_diagonal(rng: &mut ChaCha8Rng, n: usize, bound: f64) -> DiagonalSsm {
    let u = Uniform::new(-bound, bound).unwrap();
    let a = DVector::from_fn(n, |_, _| u.sample(rng));
    DiagonalSsm::new(a, normal_vec(rng, n), normal_vec(rng, n)).unwrap()
}

/// Random invertible matrix with condition number below `limit`.
pub fn well_conditioned(rng: &mut ChaCha8Rng, n: usize, limit: f64) -> DMatrix<f64> {
    loop {
        let p = normal_mat(rng, n, n) + DMatrix::identity(n, n) * rng.random_range(0.0..2.0);
        let sv = p.singular_values();
        if sv.max() / sv.min() < limit {
            return p;
        }
    }
}
