//! Dense real n×n matrices for 1 ≤ n ≤ 8.
//!
//! Storage is a fixed stack array in row-major order, so `Matrix` is `Copy`
//! and every operation is a pure function of its arguments.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Largest supported dimension.
pub const MAX_DIM: usize = 8;

/// Sweep cap for the one-sided Jacobi SVD.
pub const SVD_MAX_SWEEPS: usize = 100;

/// Relative threshold on det used by operations that need det A > 0.
pub const SINGULAR_DET_TOL: f64 = 1e-14;

const JACOBI_TOL: f64 = 1e-15;

#[derive(Clone, Copy, PartialEq)]
pub struct Matrix {
    n: usize,
    data: [f64; MAX_DIM * MAX_DIM],
}

/// `A = U · diag(sigma) · Vᵀ` with `sigma` ascending.
#[derive(Clone, Debug, PartialEq)]
pub struct SvdResult {
    pub u_factor: Matrix,
    pub sigma: Vec<f64>,
    pub v_factor: Matrix,
}

/// Left polar factorisation `A = S · O` with `S = (AAᵀ)^{1/2}`.
#[derive(Clone, Debug, PartialEq)]
pub struct PolarResult {
    pub spd_factor: Matrix,
    pub rotation_factor: Matrix,
}

impl Matrix {
    pub fn zeros(n: usize) -> Matrix {
        assert!((1..=MAX_DIM).contains(&n), "matrix dimension {n} outside 1..=8");
        Matrix {
            n,
            data: [0.0; MAX_DIM * MAX_DIM],
        }
    }

    pub fn identity(n: usize) -> Matrix {
        let mut m = Matrix::zeros(n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    /// Builds a matrix from `n²` row-major entries.
    pub fn from_row_major(n: usize, entries: &[f64]) -> Result<Matrix> {
        if !(1..=MAX_DIM).contains(&n) {
            return Err(Error::InvalidInput(format!(
                "matrix dimension {n} outside 1..={MAX_DIM}"
            )));
        }
        if entries.len() != n * n {
            return Err(Error::InvalidInput(format!(
                "expected {} entries for a {n}x{n} matrix, got {}",
                n * n,
                entries.len()
            )));
        }
        if let Some(k) = entries.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("entry {k} is not finite")));
        }
        let mut m = Matrix::zeros(n);
        for i in 0..n {
            for j in 0..n {
                m.set(i, j, entries[i * n + j]);
            }
        }
        Ok(m)
    }

    /// Infers n from the entry count (must be a perfect square).
    pub fn from_flat(entries: &[f64]) -> Result<Matrix> {
        let n = (entries.len() as f64).sqrt().round() as usize;
        if n * n != entries.len() {
            return Err(Error::InvalidInput(format!(
                "{} entries do not form a square matrix",
                entries.len()
            )));
        }
        Matrix::from_row_major(n, entries)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Matrix> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidInput("matrix rows are not square".into()));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        Matrix::from_row_major(n, &flat)
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Matrix {
        let mut m = Matrix::zeros(n);
        for i in 0..n {
            for j in 0..n {
                m.set(i, j, f(i, j));
            }
        }
        m
    }

    pub fn diag(values: &[f64]) -> Matrix {
        let mut m = Matrix::zeros(values.len());
        for (i, &v) in values.iter().enumerate() {
            m.set(i, i, v);
        }
        m
    }

    /// The standard symplectic matrix `[[0, −I], [I, 0]]` of size `dim = 2k`.
    pub fn symplectic_j(dim: usize) -> Result<Matrix> {
        if dim % 2 != 0 || dim == 0 || dim > MAX_DIM {
            return Err(Error::Domain(format!(
                "symplectic structure needs an even dimension ≤ {MAX_DIM}, got {dim}"
            )));
        }
        let k = dim / 2;
        let mut j = Matrix::zeros(dim);
        for i in 0..k {
            j.set(i, i + k, -1.0);
            j.set(i + k, i, 1.0);
        }
        Ok(j)
    }

    /// Planar rotation by `theta` (counter-clockwise).
    pub fn rotation2(theta: f64) -> Matrix {
        let (s, c) = theta.sin_cos();
        Matrix::from_fn(2, |i, j| match (i, j) {
            (0, 0) | (1, 1) => c,
            (0, 1) => -s,
            _ => s,
        })
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * MAX_DIM + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * MAX_DIM + j] = v;
    }

    pub fn row_major(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n * self.n);
        for i in 0..self.n {
            for j in 0..self.n {
                out.push(self.get(i, j));
            }
        }
        out
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.n)
            .map(|i| (0..self.n).map(|j| self.get(i, j)).collect())
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.row_major().iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.n, |i, j| self.get(j, i))
    }

    pub fn scale(&self, s: f64) -> Matrix {
        Matrix::from_fn(self.n, |i, j| s * self.get(i, j))
    }

    pub fn trace(&self) -> f64 {
        (0..self.n).map(|i| self.get(i, i)).sum()
    }

    /// Frobenius inner product `A : B`.
    pub fn dot(&self, other: &Matrix) -> f64 {
        assert_eq!(self.n, other.n);
        let mut s = 0.0;
        for i in 0..self.n {
            for j in 0..self.n {
                s += self.get(i, j) * other.get(i, j);
            }
        }
        s
    }

    /// Frobenius norm `|A|`.
    pub fn frobenius(&self) -> f64 {
        self.dot(self).sqrt()
    }

    /// Operator norm `‖A‖`, the largest singular value.
    pub fn operator_norm(&self) -> Result<f64> {
        Ok(*self.svd()?.sigma.last().expect("n ≥ 1"))
    }

    /// `(frobenius, operator)` norms.
    pub fn norms(&self) -> Result<(f64, f64)> {
        Ok((self.frobenius(), self.operator_norm()?))
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.n);
        (0..self.n)
            .map(|i| (0..self.n).map(|j| self.get(i, j) * v[j]).sum())
            .collect()
    }

    /// `k`-th matrix power by repeated multiplication (`k = 0` gives I).
    pub fn pow(&self, k: u32) -> Matrix {
        let mut out = Matrix::identity(self.n);
        for _ in 0..k {
            out = out * *self;
        }
        out
    }

    /// Symmetric part `(A + Aᵀ)/2`.
    pub fn sym(&self) -> Matrix {
        (*self + self.transpose()).scale(0.5)
    }

    /// Antisymmetric part `(A − Aᵀ)/2`.
    pub fn skew(&self) -> Matrix {
        (*self - self.transpose()).scale(0.5)
    }

    fn lu(&self) -> (Matrix, Vec<usize>, f64) {
        // Doolittle with partial pivoting; returns packed LU, permutation and sign.
        let n = self.n;
        let mut a = *self;
        let mut perm: Vec<usize> = (0..n).collect();
        let mut sign = 1.0;
        for k in 0..n {
            let mut p = k;
            let mut best = a.get(k, k).abs();
            for i in k + 1..n {
                if a.get(i, k).abs() > best {
                    best = a.get(i, k).abs();
                    p = i;
                }
            }
            if p != k {
                for j in 0..n {
                    let t = a.get(k, j);
                    a.set(k, j, a.get(p, j));
                    a.set(p, j, t);
                }
                perm.swap(k, p);
                sign = -sign;
            }
            let pivot = a.get(k, k);
            if pivot == 0.0 {
                continue;
            }
            for i in k + 1..n {
                let f = a.get(i, k) / pivot;
                a.set(i, k, f);
                for j in k + 1..n {
                    a.set(i, j, a.get(i, j) - f * a.get(k, j));
                }
            }
        }
        (a, perm, sign)
    }

    pub fn det(&self) -> f64 {
        let (lu, _, sign) = self.lu();
        (0..self.n).fold(sign, |acc, i| acc * lu.get(i, i))
    }

    pub fn inverse(&self) -> Result<Matrix> {
        let n = self.n;
        let (lu, perm, _) = self.lu();
        let scale = self.frobenius().max(f64::MIN_POSITIVE);
        if (0..n).any(|i| lu.get(i, i).abs() <= f64::EPSILON * scale * 1e-3) {
            return Err(Error::Domain("matrix is singular".into()));
        }
        let mut inv = Matrix::zeros(n);
        for col in 0..n {
            let mut x: Vec<f64> = (0..n).map(|i| if perm[i] == col { 1.0 } else { 0.0 }).collect();
            for i in 0..n {
                for k in 0..i {
                    x[i] -= lu.get(i, k) * x[k];
                }
            }
            for i in (0..n).rev() {
                for k in i + 1..n {
                    x[i] -= lu.get(i, k) * x[k];
                }
                x[i] /= lu.get(i, i);
            }
            for i in 0..n {
                inv.set(i, col, x[i]);
            }
        }
        Ok(inv)
    }

    fn minor(&self, row: usize, col: usize) -> Matrix {
        let n = self.n - 1;
        Matrix::from_fn(n, |i, j| {
            let si = if i < row { i } else { i + 1 };
            let sj = if j < col { j } else { j + 1 };
            self.get(si, sj)
        })
    }

    /// Cofactor matrix, `cof A = det A · (A⁻¹)ᵀ` whenever A is invertible.
    /// Computed from minors, so it is defined for singular matrices too.
    pub fn cofactor(&self) -> Matrix {
        if self.n == 1 {
            return Matrix::identity(1);
        }
        Matrix::from_fn(self.n, |i, j| {
            let sign = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
            sign * self.minor(i, j).det()
        })
    }

    /// Returns det A if it is safely positive, else a domain error.
    pub fn require_positive_det(&self) -> Result<f64> {
        let d = self.det();
        let floor = SINGULAR_DET_TOL * self.frobenius().powi(self.n as i32);
        if d > floor && d > 0.0 {
            Ok(d)
        } else {
            Err(Error::Domain(format!(
                "determinant {d:e} is not positive (threshold {floor:e})"
            )))
        }
    }

    /// Distortion `K(A) = |A|ⁿ / det A`.
    pub fn cond_k(&self) -> Result<f64> {
        let d = self.require_positive_det()?;
        Ok(self.frobenius().powi(self.n as i32) / d)
    }

    /// One-sided (Hestenes) Jacobi SVD with singular values ascending.
    ///
    /// Column signs are fixed so that det V = +1; when det A > 0 this forces
    /// det U = +1 as well.
    pub fn svd(&self) -> Result<SvdResult> {
        let n = self.n;
        let mut w = *self;
        let mut v = Matrix::identity(n);
        let mut converged = n == 1;
        let mut off = 0.0f64;
        // columns below this squared norm are numerically zero
        let negligible = (n as f64 * f64::EPSILON).powi(2) * self.frobenius().powi(2);
        for _ in 0..SVD_MAX_SWEEPS {
            let mut rotated = false;
            off = 0.0;
            for p in 0..n {
                for q in p + 1..n {
                    let mut alpha = 0.0;
                    let mut beta = 0.0;
                    let mut gamma = 0.0;
                    for i in 0..n {
                        let wp = w.get(i, p);
                        let wq = w.get(i, q);
                        alpha += wp * wp;
                        beta += wq * wq;
                        gamma += wp * wq;
                    }
                    let scale = (alpha * beta).sqrt();
                    if gamma == 0.0 || gamma.abs() <= JACOBI_TOL * scale || alpha.min(beta) <= negligible {
                        continue;
                    }
                    off = off.max(gamma.abs() / scale);
                    rotated = true;
                    let zeta = (beta - alpha) / (2.0 * gamma);
                    let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                    let c = 1.0 / (1.0 + t * t).sqrt();
                    let s = c * t;
                    for i in 0..n {
                        let wp = w.get(i, p);
                        let wq = w.get(i, q);
                        w.set(i, p, c * wp - s * wq);
                        w.set(i, q, s * wp + c * wq);
                        let vp = v.get(i, p);
                        let vq = v.get(i, q);
                        v.set(i, p, c * vp - s * vq);
                        v.set(i, q, s * vp + c * vq);
                    }
                }
            }
            if !rotated {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::NonConvergence {
                method: "one-sided Jacobi SVD",
                iterations: SVD_MAX_SWEEPS,
                residual: off,
            });
        }

        let mut sigma: Vec<f64> = (0..n)
            .map(|j| (0..n).map(|i| w.get(i, j).powi(2)).sum::<f64>().sqrt())
            .collect();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| sigma[a].total_cmp(&sigma[b]).then(a.cmp(&b)));

        let smax = sigma.iter().cloned().fold(0.0, f64::max);
        let tiny = smax * (n as f64) * f64::EPSILON;
        let mut u = Matrix::zeros(n);
        let mut vs = Matrix::zeros(n);
        let mut sorted = vec![0.0; n];
        let mut needs_completion = Vec::new();
        for (k, &j) in order.iter().enumerate() {
            sorted[k] = sigma[j];
            for i in 0..n {
                vs.set(i, k, v.get(i, j));
            }
            if sigma[j] > tiny && sigma[j] > 0.0 {
                for i in 0..n {
                    u.set(i, k, w.get(i, j) / sigma[j]);
                }
            } else {
                needs_completion.push(k);
            }
        }
        complete_orthonormal(&mut u, &needs_completion);
        sigma = sorted;

        if vs.det() < 0.0 {
            for i in 0..n {
                vs.set(i, 0, -vs.get(i, 0));
                u.set(i, 0, -u.get(i, 0));
            }
        }
        Ok(SvdResult {
            u_factor: u,
            sigma,
            v_factor: vs,
        })
    }

    /// Left polar decomposition `A = S · O`; requires det A > 0 so that
    /// `O ∈ SO(n)`.
    pub fn polar(&self) -> Result<PolarResult> {
        self.require_positive_det()?;
        let svd = self.svd()?;
        let u = svd.u_factor;
        let s = u * Matrix::diag(&svd.sigma) * u.transpose();
        let o = u * svd.v_factor.transpose();
        Ok(PolarResult {
            spd_factor: s.sym(),
            rotation_factor: o,
        })
    }
}

/// Replaces the listed columns of `u` by unit vectors orthogonal to all other
/// columns (Gram–Schmidt against the standard basis).
fn complete_orthonormal(u: &mut Matrix, columns: &[usize]) {
    if columns.is_empty() {
        return;
    }
    let n = u.n();
    let mut filled: Vec<usize> = (0..n).filter(|c| !columns.contains(c)).collect();
    for &c in columns {
        let mut best: Option<Vec<f64>> = None;
        let mut best_norm = 0.0;
        for e in 0..n {
            let mut x = vec![0.0; n];
            x[e] = 1.0;
            for _ in 0..2 {
                for &f in &filled {
                    let proj: f64 = (0..n).map(|i| u.get(i, f) * x[i]).sum();
                    for i in 0..n {
                        x[i] -= proj * u.get(i, f);
                    }
                }
            }
            let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > best_norm {
                best_norm = norm;
                best = Some(x);
            }
        }
        let x = best.expect("n ≥ 1");
        for i in 0..n {
            u.set(i, c, x[i] / best_norm);
        }
        filled.push(c);
    }
}

impl Mul for Matrix {
    type Output = Matrix;
    fn mul(self, rhs: Matrix) -> Matrix {
        assert_eq!(self.n, rhs.n, "dimension mismatch");
        let n = self.n;
        let mut out = Matrix::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                for j in 0..n {
                    out.data[i * MAX_DIM + j] += a * rhs.get(k, j);
                }
            }
        }
        out
    }
}

impl Add for Matrix {
    type Output = Matrix;
    fn add(self, rhs: Matrix) -> Matrix {
        assert_eq!(self.n, rhs.n, "dimension mismatch");
        Matrix::from_fn(self.n, |i, j| self.get(i, j) + rhs.get(i, j))
    }
}

impl Sub for Matrix {
    type Output = Matrix;
    fn sub(self, rhs: Matrix) -> Matrix {
        assert_eq!(self.n, rhs.n, "dimension mismatch");
        Matrix::from_fn(self.n, |i, j| self.get(i, j) - rhs.get(i, j))
    }
}

impl Neg for Matrix {
    type Output = Matrix;
    fn neg(self) -> Matrix {
        self.scale(-1.0)
    }
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.rows()).finish()
    }
}

impl Serialize for Matrix {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.rows().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Matrix {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        Matrix::from_rows(&rows).map_err(D::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(n: usize, rng: &mut ChaCha8Rng) -> Matrix {
        Matrix::from_fn(n, |_, _| rng.gen_range(-2.0..2.0))
    }

    // Laplace expansion along the first row; independent of the LU path.
    fn det_cofactor_expansion(a: &[Vec<f64>]) -> f64 {
        let n = a.len();
        if n == 1 {
            return a[0][0];
        }
        (0..n)
            .map(|j| {
                let sub: Vec<Vec<f64>> = a[1..]
                    .iter()
                    .map(|r| r.iter().enumerate().filter(|(k, _)| *k != j).map(|(_, v)| *v).collect())
                    .collect();
                let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
                sign * a[0][j] * det_cofactor_expansion(&sub)
            })
            .sum()
    }

    // Cyclic Jacobi eigen-solver for symmetric matrices (test oracle).
    fn symmetric_eigenvalues(a: &Matrix) -> Vec<f64> {
        let n = a.n();
        let mut m = a.rows();
        for _ in 0..200 {
            let mut off = 0.0;
            for p in 0..n {
                for q in p + 1..n {
                    off += m[p][q] * m[p][q];
                }
            }
            if off < 1e-30 {
                break;
            }
            for p in 0..n {
                for q in p + 1..n {
                    if m[p][q].abs() < 1e-300 {
                        continue;
                    }
                    let theta = (m[q][q] - m[p][p]) / (2.0 * m[p][q]);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let mkp = m[k][p];
                        let mkq = m[k][q];
                        m[k][p] = c * mkp - s * mkq;
                        m[k][q] = s * mkp + c * mkq;
                    }
                    for k in 0..n {
                        let mpk = m[p][k];
                        let mqk = m[q][k];
                        m[p][k] = c * mpk - s * mqk;
                        m[q][k] = s * mpk + c * mqk;
                    }
                }
            }
        }
        let mut ev: Vec<f64> = (0..n).map(|i| m[i][i]).collect();
        ev.sort_by(f64::total_cmp);
        ev
    }

    fn max_abs_diff(a: &Matrix, b: &Matrix) -> f64 {
        (*a - *b).row_major().iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    #[test]
    fn det_examples() {
        assert_eq!(Matrix::identity(3).det(), 1.0);
        assert!((Matrix::diag(&[2.0, 0.5]).det() - 1.0).abs() < 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let a = random(3, &mut rng);
            let oracle = det_cofactor_expansion(&a.rows());
            assert!((a.det() - oracle).abs() < 1e-12, "{} vs {}", a.det(), oracle);
        }
    }

    #[test]
    fn cofactor_examples() {
        assert_eq!(Matrix::identity(4).cofactor(), Matrix::identity(4));
        assert_eq!(Matrix::diag(&[3.0, 5.0]).cofactor(), Matrix::diag(&[5.0, 3.0]));
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let a = random(3, &mut rng);
            if a.det().abs() < 1e-3 {
                continue;
            }
            let oracle = a.inverse().unwrap().transpose().scale(a.det());
            let rel = max_abs_diff(&a.cofactor(), &oracle) / oracle.frobenius();
            assert!(rel < 1e-10, "relative error {rel}");
        }
        // singular input still has a cofactor
        let s = Matrix::from_row_major(2, &[1.0, 2.0, 2.0, 4.0]).unwrap();
        assert_eq!(s.cofactor().row_major(), vec![4.0, -2.0, -2.0, 1.0]);
    }

    #[test]
    fn norm_examples() {
        let (f, o) = Matrix::identity(2).norms().unwrap();
        assert!((f - 2f64.sqrt()).abs() < 1e-15 && (o - 1.0).abs() < 1e-15);
        let (f, o) = Matrix::diag(&[3.0, 0.0]).norms().unwrap();
        assert!((f - 3.0).abs() < 1e-15 && (o - 3.0).abs() < 1e-14);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let a = random(4, &mut rng);
            // power iteration on AᵀA
            let ata = a.transpose() * a;
            let mut x = vec![1.0, 0.7, -0.3, 0.2];
            let mut lambda = 0.0;
            for _ in 0..5000 {
                let y = ata.mul_vec(&x);
                let norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
                lambda = norm;
                x = y.iter().map(|v| v / norm).collect();
            }
            let op = a.operator_norm().unwrap();
            assert!((op - lambda.sqrt()).abs() < 1e-9, "{op} vs {}", lambda.sqrt());
        }
    }

    #[test]
    fn svd_examples() {
        let s = Matrix::diag(&[4.0, 1.0 / 16.0]).svd().unwrap();
        assert!((s.sigma[0] - 1.0 / 16.0).abs() < 1e-15 && (s.sigma[1] - 4.0).abs() < 1e-15);
        let s = Matrix::rotation2(0.7).svd().unwrap();
        assert!((s.sigma[0] - 1.0).abs() < 1e-14 && (s.sigma[1] - 1.0).abs() < 1e-14);

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let a = random(4, &mut rng);
            let svd = a.svd().unwrap();
            let ev = symmetric_eigenvalues(&(a.transpose() * a));
            for (s, e) in svd.sigma.iter().zip(ev) {
                assert!((s - e.max(0.0).sqrt()).abs() < 1e-10, "{s} vs {}", e.sqrt());
            }
        }
    }

    #[test]
    fn svd_rank_deficient() {
        let a = Matrix::from_row_major(3, &[1.0, 2.0, 3.0, 2.0, 4.0, 6.0, 0.0, 0.0, 0.0]).unwrap();
        let s = a.svd().unwrap();
        let rec = s.u_factor * Matrix::diag(&s.sigma) * s.v_factor.transpose();
        assert!(max_abs_diff(&rec, &a) < 1e-12);
        let utu = s.u_factor.transpose() * s.u_factor;
        assert!(max_abs_diff(&utu, &Matrix::identity(3)) < 1e-12);
        // a zero row leaves a round-off column that never orthogonalises
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in 2..=4 {
            for _ in 0..200 {
                let zero = rng.gen_range(0..n);
                let a = Matrix::from_fn(n, |i, _| if i == zero { 0.0 } else { rng.gen_range(-3.0..3.0) });
                let s = a.svd().unwrap();
                let rec = s.u_factor * Matrix::diag(&s.sigma) * s.v_factor.transpose();
                assert!(max_abs_diff(&rec, &a) < 1e-12 * (1.0 + a.frobenius()));
            }
        }
    }

    #[test]
    fn polar_examples() {
        let p = Matrix::identity(3).polar().unwrap();
        assert!(max_abs_diff(&p.spd_factor, &Matrix::identity(3)) < 1e-15);
        assert!(max_abs_diff(&p.rotation_factor, &Matrix::identity(3)) < 1e-15);
        let p = Matrix::identity(2).scale(2.0).polar().unwrap();
        assert!(max_abs_diff(&p.spd_factor, &Matrix::identity(2).scale(2.0)) < 1e-15);
        assert!(max_abs_diff(&p.rotation_factor, &Matrix::identity(2)) < 1e-15);

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut checked = 0;
        while checked < 50 {
            let a = random(3, &mut rng);
            if a.det() <= 0.05 {
                continue;
            }
            checked += 1;
            let p = a.polar().unwrap();
            let rel = max_abs_diff(&(p.spd_factor * p.rotation_factor), &a) / a.frobenius();
            assert!(rel < 1e-10);
            assert!((p.rotation_factor.det() - 1.0).abs() < 1e-10);
            let oto = p.rotation_factor.transpose() * p.rotation_factor;
            assert!(max_abs_diff(&oto, &Matrix::identity(3)) < 1e-10);
        }
        assert!(Matrix::diag(&[1.0, -1.0]).polar().is_err());
    }

    #[test]
    fn cond_k_examples() {
        for n in 1..=4 {
            let k = Matrix::identity(n).cond_k().unwrap();
            assert!((k - (n as f64).powf(n as f64 / 2.0)).abs() < 1e-12);
        }
        let a = Matrix::diag(&[4.0, 1.0 / 16.0]);
        let oracle = (16.0 + 1.0 / 256.0) / 0.25;
        assert!((a.cond_k().unwrap() - oracle).abs() < 1e-12);
        assert!((oracle - 64.02).abs() < 0.01);
        for c in [0.5, 2.0, 10.0] {
            assert!((a.scale(c).cond_k().unwrap() - oracle).abs() < 1e-10 * oracle);
        }
        assert!(Matrix::diag(&[1.0, -1.0]).cond_k().is_err());
    }

    #[test]
    fn symplectic_j_shape() {
        let j = Matrix::symplectic_j(4).unwrap();
        assert_eq!(j * j, -Matrix::identity(4));
        assert!(Matrix::symplectic_j(3).is_err());
    }

    #[test]
    fn rejects_bad_input() {
        assert!(Matrix::from_row_major(2, &[1.0, 2.0, 3.0]).is_err());
        assert!(Matrix::from_row_major(2, &[1.0, f64::NAN, 3.0, 4.0]).is_err());
        assert!(Matrix::from_row_major(9, &[0.0; 81]).is_err());
    }
}
