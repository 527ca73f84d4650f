//! Stored-energy functions, their isochoric/dilational splits, and the
//! volumetric penalties used by the incompressible-limit experiment.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nearness;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnergyKind {
    Hookean,
    NeoHookean,
    MooneyRivlin,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyKind {
    Quadratic,
    Windowed,
}

/// `W = W_iso + κ·w(det)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergySpec {
    pub kind: EnergyKind,
    pub kappa: f64,
    pub penalty_kind: PenaltyKind,
    pub c3: f64,
    /// Admissible determinant window `[λ, Λ]` for the windowed penalty.
    pub window: (f64, f64),
}

impl Default for EnergySpec {
    fn default() -> Self {
        EnergySpec {
            kind: EnergyKind::NeoHookean,
            kappa: 1.0,
            penalty_kind: PenaltyKind::Quadratic,
            c3: 1.0,
            window: (0.2, 5.0),
        }
    }
}

impl EnergySpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.kappa >= 0.0 && self.kappa.is_finite()) {
            return Err(Error::InvalidInput(format!("kappa = {} must be ≥ 0", self.kappa)));
        }
        if !(self.c3 > 0.0 && self.c3.is_finite()) {
            return Err(Error::InvalidInput(format!("c3 = {} must be > 0", self.c3)));
        }
        let (lo, hi) = self.window;
        if self.penalty_kind == PenaltyKind::Windowed && !(lo > 0.0 && lo < 1.0 && hi > 1.0) {
            return Err(Error::InvalidInput(format!(
                "penalty window [{lo}, {hi}] must satisfy 0 < λ < 1 < Λ"
            )));
        }
        Ok(())
    }
}

/// Penalty value; `Infeasible` marks determinants outside the window.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PenaltyValue {
    Finite(f64),
    Infeasible,
}

impl PenaltyValue {
    pub fn is_feasible(self) -> bool {
        matches!(self, PenaltyValue::Finite(_))
    }

    /// Numeric view; `Infeasible` maps to `+∞`.
    pub fn value(self) -> f64 {
        match self {
            PenaltyValue::Finite(v) => v,
            PenaltyValue::Infeasible => f64::INFINITY,
        }
    }
}

fn in_window(spec: &EnergySpec, x: f64) -> bool {
    spec.penalty_kind == PenaltyKind::Quadratic || (x >= spec.window.0 && x <= spec.window.1)
}

pub fn penalty(spec: &EnergySpec, x: f64) -> PenaltyValue {
    if in_window(spec, x) {
        PenaltyValue::Finite(spec.c3 * (1.0 - x).powi(2))
    } else {
        PenaltyValue::Infeasible
    }
}

pub fn penalty_deriv(spec: &EnergySpec, x: f64) -> PenaltyValue {
    if in_window(spec, x) {
        PenaltyValue::Finite(-2.0 * spec.c3 * (1.0 - x))
    } else {
        PenaltyValue::Infeasible
    }
}

/// `¼|A + Aᵀ|²`.
pub fn w_so(a: &Matrix) -> f64 {
    0.25 * (*a + a.transpose()).frobenius().powi(2)
}

/// `|(AᵀA)^{1/2} − I|² = Σ(σ_j − 1)²`.
pub fn w_rotation(a: &Matrix) -> Result<f64> {
    Ok(a.svd()?.sigma.iter().map(|s| (s - 1.0).powi(2)).sum())
}

/// Hookean split `(|A − (tr A/n)I|², (tr A)²/n)`.
pub fn hookean(a: &Matrix) -> (f64, f64) {
    let n = a.n() as f64;
    let tr = a.trace();
    let dev = *a - Matrix::identity(a.n()).scale(tr / n);
    (dev.frobenius().powi(2), tr * tr / n)
}

/// Isochoric neo-Hookean energy `|det^{−1/n}A · A|² − n`.
pub fn neo_hookean_iso(a: &Matrix) -> Result<f64> {
    let det = a.require_positive_det()?;
    let n = a.n() as f64;
    Ok((det.powf(-2.0 / n) * a.frobenius().powi(2) - n).max(0.0))
}

/// Neo-Hookean split `(iso, (1 − det A)²)`.
pub fn neo_hookean(a: &Matrix) -> Result<(f64, f64)> {
    let iso = neo_hookean_iso(a)?;
    Ok((iso, (1.0 - a.det()).powi(2)))
}

/// Isochoric Mooney–Rivlin energy for 3×3 input.
pub fn mooney_rivlin_iso(a: &Matrix) -> Result<f64> {
    if a.n() != 3 {
        return Err(Error::Domain(format!(
            "Mooney-Rivlin energy is defined for n = 3, got n = {}",
            a.n()
        )));
    }
    let det = a.require_positive_det()?;
    let normalized = a.scale(det.powf(-1.0 / 3.0));
    let first = normalized.frobenius().powi(2) - 3.0;
    let second = normalized.cofactor().frobenius().powi(2) - 3.0;
    Ok((first + second).max(0.0))
}

/// `dist²(A, SL(n))`.
pub fn w_sl(a: &Matrix) -> Result<f64> {
    Ok(nearness::dist_special_linear(a)?.powi(2))
}

/// `(n + neo_iso(Aⁿ))·W_SL(A)`.
pub fn modified_energy(a: &Matrix) -> Result<f64> {
    let power = a.pow(a.n() as u32);
    Ok((a.n() as f64 + neo_hookean_iso(&power)?) * w_sl(a)?)
}

/// Isochoric energy and its gradient with respect to `A`.
///
/// Gradients are provided for the Hookean and neo-Hookean energies, which are
/// the ones driven by the minimiser.
pub fn iso_with_grad(kind: EnergyKind, a: &Matrix) -> Result<(f64, Matrix)> {
    let n = a.n() as f64;
    match kind {
        EnergyKind::Hookean => {
            let dev = *a - Matrix::identity(a.n()).scale(a.trace() / n);
            Ok((dev.frobenius().powi(2), dev.scale(2.0)))
        }
        EnergyKind::NeoHookean => {
            let det = a.det();
            if !(det > 0.0) {
                return Err(Error::Domain(format!("determinant {det:e} is not positive")));
            }
            let f2 = a.frobenius().powi(2);
            let s = det.powf(-2.0 / n);
            let grad = (a.scale(2.0) - a.cofactor().scale(2.0 * f2 / (n * det))).scale(s);
            Ok((s * f2 - n, grad))
        }
        EnergyKind::MooneyRivlin => Err(Error::InvalidInput(
            "Mooney-Rivlin gradients are not provided; use hookean or neo_hookean".into(),
        )),
    }
}

/// Full density `W_iso(A) + κ·w(det A)` with gradient; `None` when the
/// determinant is not admissible.
pub fn density_with_grad(spec: &EnergySpec, a: &Matrix) -> Result<Option<(f64, f64, f64, Matrix)>> {
    let det = a.det();
    if spec.kind == EnergyKind::NeoHookean && !(det > 0.0) {
        return Ok(None);
    }
    let (PenaltyValue::Finite(w), PenaltyValue::Finite(dw)) = (penalty(spec, det), penalty_deriv(spec, det)) else {
        return Ok(None);
    };
    let (iso, g) = iso_with_grad(spec.kind, a)?;
    let grad = g + a.cofactor().scale(spec.kappa * dw);
    Ok(Some((iso + spec.kappa * w, iso, w, grad)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::{matrix_with_det, sample_rng, uniform_matrix};

    #[test]
    fn w_so_examples() {
        let skew = Matrix::from_row_major(2, &[0.0, 2.0, -2.0, 0.0]).unwrap();
        assert_eq!(w_so(&skew), 0.0);
        assert!((w_so(&Matrix::identity(3)) - 3.0).abs() < 1e-15);
        let mut rng = sample_rng(10, 0);
        let a = uniform_matrix(3, 2.0, &mut rng);
        let mut oracle = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                oracle += (a.get(i, j) + a.get(j, i)).powi(2);
            }
        }
        assert!((w_so(&a) - 0.25 * oracle).abs() < 1e-12);
    }

    #[test]
    fn w_rotation_examples() {
        assert!(w_rotation(&Matrix::rotation2(0.9)).unwrap() < 1e-14);
        assert!((w_rotation(&Matrix::identity(2).scale(2.0)).unwrap() - 2.0).abs() < 1e-14);
    }

    #[test]
    fn hookean_examples() {
        let a = Matrix::from_row_major(2, &[1.0, 2.0, 3.0, -1.0]).unwrap();
        let (iso, dil) = hookean(&a);
        assert!((iso - a.frobenius().powi(2)).abs() < 1e-14 && dil == 0.0);
        assert_eq!(hookean(&Matrix::identity(2)), (0.0, 2.0));
        let mut rng = sample_rng(11, 0);
        let a = uniform_matrix(3, 2.0, &mut rng);
        let (iso, dil) = hookean(&a);
        assert!((iso + dil - a.frobenius().powi(2)).abs() < 1e-12);
    }

    #[test]
    fn neo_hookean_examples() {
        assert!(neo_hookean(&Matrix::rotation2(0.2)).unwrap().0 < 1e-14);
        let (iso, dil) = neo_hookean(&Matrix::diag(&[2.0, 1.0])).unwrap();
        // |diag(2,1)/√2|² − 2 = 5/2 − 2
        assert!((iso - 0.5).abs() < 1e-14);
        assert!((dil - 1.0).abs() < 1e-15);
        let a = Matrix::diag(&[3.0, 0.7]);
        let base = neo_hookean_iso(&a).unwrap();
        assert!((neo_hookean_iso(&a.scale(5.0)).unwrap() - base).abs() < 1e-12);
        assert!(neo_hookean_iso(&Matrix::diag(&[1.0, -1.0])).is_err());
    }

    #[test]
    fn mooney_rivlin_examples() {
        assert!(mooney_rivlin_iso(&Matrix::identity(3)).unwrap() < 1e-14);
        let (s, c) = 0.4f64.sin_cos();
        let r = Matrix::from_row_major(3, &[c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0]).unwrap();
        assert!(mooney_rivlin_iso(&r).unwrap() < 1e-13);
        // det = 1: |A|² − 3 + |cof A|² − 3 with cof = diag(1/2, 1, 2)
        let a = Matrix::diag(&[2.0, 1.0, 0.5]);
        let oracle = (4.0 + 1.0 + 0.25 - 3.0) + (0.25 + 1.0 + 4.0 - 3.0);
        assert!((mooney_rivlin_iso(&a).unwrap() - oracle).abs() < 1e-12);
        assert!(mooney_rivlin_iso(&Matrix::identity(2)).is_err());
    }

    #[test]
    fn sl_energies() {
        let a = Matrix::diag(&[2.0, 0.5]);
        assert!(w_sl(&a).unwrap() < 1e-20);
        assert!(modified_energy(&a).unwrap() < 1e-20);
        let a = Matrix::diag(&[4.0, 1.0 / 16.0]);
        let d = nearness::proj_sl(&a).unwrap().distance;
        assert!((w_sl(&a).unwrap() - d * d).abs() < 1e-15);
    }

    #[test]
    fn modified_energy_ill_conditioned() {
        let m: f64 = 16.0;
        let a = Matrix::diag(&[m, m.powi(-2)]);
        let wsl = w_sl(&a).unwrap();
        let modified = modified_energy(&a).unwrap();
        let k = a.cond_k().unwrap();
        // |A|^{2n} ≤ n^{n−1}|Aⁿ|² for diagonal A
        let c = 2.0;
        assert!(modified / wsl >= k * k / c);
        assert!(modified > 1e3 * wsl);
    }

    #[test]
    fn penalty_examples() {
        let spec = EnergySpec::default();
        assert_eq!(penalty(&spec, 1.0), PenaltyValue::Finite(0.0));
        assert_eq!(penalty_deriv(&spec, 1.0).value(), 0.0);
        assert_eq!(penalty(&spec, 2.0).value(), 1.0);
        assert_eq!(penalty_deriv(&spec, 2.0).value(), 2.0);
        let h = 1e-6;
        let fd = (penalty(&spec, 0.7 + h).value() - penalty(&spec, 0.7 - h).value()) / (2.0 * h);
        assert!((fd - penalty_deriv(&spec, 0.7).value()).abs() < 1e-8);
        let windowed = EnergySpec {
            penalty_kind: PenaltyKind::Windowed,
            window: (0.5, 2.0),
            ..spec
        };
        assert_eq!(penalty(&windowed, 0.1), PenaltyValue::Infeasible);
        assert_eq!(penalty(&windowed, 3.0), PenaltyValue::Infeasible);
        assert!(penalty(&windowed, 1.5).is_feasible());
    }

    #[test]
    fn iso_gradients_match_finite_differences() {
        let mut rng = sample_rng(12, 0);
        for kind in [EnergyKind::Hookean, EnergyKind::NeoHookean] {
            for _ in 0..10 {
                let a = matrix_with_det(2, 0.5, 2.0, &mut rng);
                let (_, g) = iso_with_grad(kind, &a).unwrap();
                for i in 0..2 {
                    for j in 0..2 {
                        let h = 1e-6;
                        let mut p = a;
                        p.set(i, j, a.get(i, j) + h);
                        let mut m = a;
                        m.set(i, j, a.get(i, j) - h);
                        let fd = (iso_with_grad(kind, &p).unwrap().0 - iso_with_grad(kind, &m).unwrap().0)
                            / (2.0 * h);
                        assert!((fd - g.get(i, j)).abs() < 1e-6 * (1.0 + fd.abs()));
                    }
                }
            }
        }
    }
}
