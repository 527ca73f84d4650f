//! Seeded random sampling with per-sample streams.
//!
//! Every sample `i` draws from its own ChaCha8 stream derived from the master
//! seed, so results do not depend on how samples are split across threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::matrix::Matrix;

/// Generator for sample `index` under `master`.
pub fn sample_rng(master: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(index);
    rng
}

/// Maps `f` over `0..count` in parallel, each call with its own generator.
/// Output order is the sample order.
pub fn par_samples<T, F>(master: u64, count: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize, &mut ChaCha8Rng) -> T + Sync,
{
    (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = sample_rng(master, i as u64);
            f(i, &mut rng)
        })
        .collect()
}

/// Matrix with entries uniform in `[-range, range]`.
pub fn uniform_matrix(n: usize, range: f64, rng: &mut impl Rng) -> Matrix {
    Matrix::from_fn(n, |_, _| rng.gen_range(-range..=range))
}

/// Random matrix with entries from `[-2, 2]`, then flipped to positive
/// determinant and rescaled so that det lies log-uniformly in `[lo, hi]`.
pub fn matrix_with_det(n: usize, lo: f64, hi: f64, rng: &mut impl Rng) -> Matrix {
    loop {
        let mut a = uniform_matrix(n, 2.0, rng);
        let det = a.det();
        if det.abs() < 1e-3 {
            continue;
        }
        if det < 0.0 {
            for j in 0..n {
                a.set(0, j, -a.get(0, j));
            }
        }
        let target = (rng.gen_range(lo.ln()..=hi.ln())).exp();
        let scale = (target / det.abs()).powf(1.0 / n as f64);
        let out = a.scale(scale);
        if out.is_finite() {
            return out;
        }
    }
}

/// Random element of `Sp(dim)`: `diag(D, D⁻¹)` times a block-upper and a
/// block-lower shear with symmetric blocks of entries in `[-range, range]`.
pub fn random_symplectic(dim: usize, range: f64, rng: &mut impl Rng) -> Matrix {
    let k = dim / 2;
    let sym = |rng: &mut dyn rand::RngCore| {
        let a = Matrix::from_fn(k, |_, _| rng.gen_range(-range..=range));
        a.sym()
    };
    let s1 = sym(rng);
    let s2 = sym(rng);
    let d: Vec<f64> = (0..k).map(|_| rng.gen_range(-0.5f64..=0.5).exp()).collect();
    let upper = Matrix::from_fn(dim, |i, j| match (i < k, j < k) {
        (true, false) => s1.get(i, j - k),
        _ => f64::from(u8::from(i == j)),
    });
    let lower = Matrix::from_fn(dim, |i, j| match (i < k, j < k) {
        (false, true) => s2.get(i - k, j),
        _ => f64::from(u8::from(i == j)),
    });
    let scale = Matrix::from_fn(dim, |i, j| match (i == j, i < k) {
        (true, true) => d[i],
        (true, false) => 1.0 / d[i - k],
        _ => 0.0,
    });
    scale * upper * lower
}

/// Uniformly random rotation in SO(n) via Gram–Schmidt on a Gaussian-like
/// matrix (Box–Muller entries).
pub fn random_rotation(n: usize, rng: &mut impl Rng) -> Matrix {
    loop {
        let g = Matrix::from_fn(n, |_, _| {
            let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
            let u2: f64 = rng.gen();
            (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
        });
        let Ok(svd) = g.svd() else { continue };
        let q = svd.u_factor * svd.v_factor.transpose();
        if q.det() > 0.0 {
            return q;
        }
        let mut q = q;
        for i in 0..n {
            q.set(i, 0, -q.get(i, 0));
        }
        return q;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symplectic_samples() {
        let mut rng = sample_rng(4, 0);
        for dim in [2, 4, 6] {
            let a = random_symplectic(dim, 1.0, &mut rng);
            let j = Matrix::symplectic_j(dim).unwrap();
            assert!((a.transpose() * j * a - j).frobenius() < 1e-12);
            assert!((a.det() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn streams_are_independent_of_partitioning() {
        let a = par_samples(7, 64, |_, rng| rng.gen::<u64>());
        let b: Vec<u64> = (0..64).map(|i| sample_rng(7, i).gen()).collect();
        assert_eq!(a, b);
        assert_ne!(a[0], a[1]);
    }

    #[test]
    fn det_range_respected() {
        let mut rng = sample_rng(1, 0);
        for _ in 0..200 {
            let a = matrix_with_det(3, 0.1, 10.0, &mut rng);
            let d = a.det();
            assert!(d >= 0.1 * (1.0 - 1e-9) && d <= 10.0 * (1.0 + 1e-9), "{d}");
        }
    }

    #[test]
    fn rotations_are_special_orthogonal() {
        let mut rng = sample_rng(2, 0);
        for n in 2..=4 {
            let q = random_rotation(n, &mut rng);
            assert!((q.det() - 1.0).abs() < 1e-12);
            assert!((q.transpose() * q - Matrix::identity(n)).frobenius() < 1e-12);
        }
    }
}
