//! Distances and Frobenius projections onto SL(n), sl(n), SO(n), so(n) and
//! sp(2n), plus certified checks of the inequalities relating them to the
//! determinant.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Constraint tolerance for `|∏d − 1|` in the SL(n) root solve.
pub const SL_PRODUCT_TOL: f64 = 1e-12;
/// Bisection cap for each bracketed root.
pub const SL_BISECTION_STEPS: usize = 200;
/// Relative slack used by every `BoundReport`.
pub const BOUND_SLACK: f64 = 1e-12;

const LAMBDA_SCAN_POINTS: usize = 240;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Target {
    #[serde(rename = "SL")]
    SpecialLinear,
    #[serde(rename = "sl")]
    Traceless,
    #[serde(rename = "SO")]
    Rotation,
    #[serde(rename = "so")]
    Skew,
    #[serde(rename = "sp_lie")]
    SymplecticLie,
}

impl Target {
    pub fn name(self) -> &'static str {
        match self {
            Target::SpecialLinear => "SL",
            Target::Traceless => "sl",
            Target::Rotation => "SO",
            Target::Skew => "so",
            Target::SymplecticLie => "sp_lie",
        }
    }

    /// Accepts the exact tags above; `sp` is an alias for `sp_lie`.
    pub fn parse(s: &str) -> Result<Target> {
        match s {
            "SL" => Ok(Target::SpecialLinear),
            "sl" => Ok(Target::Traceless),
            "SO" => Ok(Target::Rotation),
            "so" => Ok(Target::Skew),
            "sp_lie" | "sp" => Ok(Target::SymplecticLie),
            other => Err(Error::InvalidInput(format!(
                "unknown target {other:?} (expected SL, sl, SO, so or sp_lie)"
            ))),
        }
    }
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectionResult {
    pub target: Target,
    pub projected: Matrix,
    pub distance: f64,
    /// Lagrange multiplier of the determinant constraint; 0 for linear targets.
    pub multiplier: f64,
    pub kkt_residual: f64,
    /// Diagonal `d` paired with the ascending singular values (SL only).
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub diagonal: Option<Vec<f64>>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BoundParams {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(rename = "Lambda", skip_serializing_if = "Option::is_none")]
    pub big_lambda: Option<f64>,
}

/// One inequality `lhs ≤ rhs` inside a report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundSide {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub ratio: f64,
    pub satisfied: bool,
}

impl BoundSide {
    pub fn new(name: impl Into<String>, lhs: f64, rhs: f64) -> BoundSide {
        BoundSide {
            name: name.into(),
            lhs,
            rhs,
            ratio: bound_ratio(lhs, rhs),
            satisfied: bound_holds(lhs, rhs),
        }
    }
}

/// Certificate for one evaluation of an inequality.
///
/// For two-sided checks `lhs`, `rhs` and `ratio` describe the tighter side
/// (the one with the larger ratio) and `sides` lists both.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub name: String,
    pub n: usize,
    pub lhs: f64,
    pub rhs: f64,
    pub constant: f64,
    pub ratio: f64,
    pub satisfied: bool,
    pub params: BoundParams,
    pub inputs_digest: String,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub sides: Vec<BoundSide>,
}

impl BoundReport {
    fn from_sides(
        name: &str,
        n: usize,
        constant: f64,
        params: BoundParams,
        digest: String,
        sides: Vec<BoundSide>,
    ) -> BoundReport {
        let primary = sides
            .iter()
            .max_by(|a, b| a.ratio.total_cmp(&b.ratio))
            .expect("at least one side")
            .clone();
        let satisfied = sides.iter().all(|s| s.satisfied);
        let sides = if sides.len() > 1 { sides } else { Vec::new() };
        BoundReport {
            name: name.to_string(),
            n,
            lhs: primary.lhs,
            rhs: primary.rhs,
            constant,
            ratio: primary.ratio,
            satisfied,
            params,
            inputs_digest: digest,
            sides,
        }
    }
}

/// `lhs/rhs`, with `0/0 = 0` and `x/0 = ∞` for `x > 0`.
pub fn bound_ratio(lhs: f64, rhs: f64) -> f64 {
    if rhs > 0.0 {
        lhs / rhs
    } else if lhs <= 0.0 {
        0.0
    } else {
        f64::INFINITY
    }
}

pub fn bound_holds(lhs: f64, rhs: f64) -> bool {
    lhs <= rhs * (1.0 + BOUND_SLACK)
}

fn digest(a: &Matrix, extra: &str) -> String {
    let entries: Vec<String> = a.row_major().iter().map(|v| format!("{v:.17e}")).collect();
    format!("n={} det={:.6e} A=[{}]{}", a.n(), a.det(), entries.join(","), extra)
}

// ---------------------------------------------------------------------------
// Linear targets

/// Distance to the trace-free matrices and the orthogonal projection.
pub fn dist_sl(a: &Matrix) -> (f64, Matrix) {
    let n = a.n() as f64;
    let tr = a.trace();
    let projected = *a - Matrix::identity(a.n()).scale(tr / n);
    (tr.abs() / n.sqrt(), projected)
}

/// Distance to the skew-symmetric matrices, `½|A + Aᵀ|`.
pub fn dist_so(a: &Matrix) -> (f64, Matrix) {
    let s = *a + a.transpose();
    (0.5 * s.frobenius(), a.skew())
}

/// Distance to SO(n) via the polar rotation factor.
pub fn dist_rotation(a: &Matrix) -> Result<(f64, Matrix)> {
    let polar = a.polar()?;
    let sigma = a.svd()?.sigma;
    let dist = sigma.iter().map(|s| (s - 1.0).powi(2)).sum::<f64>().sqrt();
    Ok((dist, polar.rotation_factor))
}

/// Distance to sp(2n) = {B : JB symmetric}, `½|JA − (JA)ᵀ|`.
pub fn dist_sp_lie(a: &Matrix) -> Result<(f64, Matrix)> {
    let j = Matrix::symplectic_j(a.n())?;
    let ja = j * *a;
    let dist = 0.5 * (ja - ja.transpose()).frobenius();
    // J⁻¹ = −J
    let projected = -(j * ja.sym());
    Ok((dist, projected))
}

/// `|AᵀJA − J|`, zero exactly on Sp(2n).
pub fn symplectic_residual(a: &Matrix) -> Result<f64> {
    let j = Matrix::symplectic_j(a.n())?;
    Ok((a.transpose() * j * *a - j).frobenius())
}

/// Projection onto any supported target.
pub fn project(a: &Matrix, target: Target) -> Result<ProjectionResult> {
    let linear = |distance: f64, projected: Matrix| ProjectionResult {
        target,
        projected,
        distance,
        multiplier: 0.0,
        kkt_residual: 0.0,
        diagonal: None,
    };
    match target {
        Target::SpecialLinear => proj_sl(a),
        Target::Traceless => {
            let (d, p) = dist_sl(a);
            Ok(linear(d, p))
        }
        Target::Skew => {
            let (d, p) = dist_so(a);
            Ok(linear(d, p))
        }
        Target::Rotation => {
            let (d, p) = dist_rotation(a)?;
            Ok(linear(d, p))
        }
        Target::SymplecticLie => {
            let (d, p) = dist_sp_lie(a)?;
            Ok(linear(d, p))
        }
    }
}

// ---------------------------------------------------------------------------
// SL(n)

/// Solution of the diagonal problem `min Σ(d_j − a_j)²` subject to `∏d_j = 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiagonalProjection {
    pub d: Vec<f64>,
    pub lambda: f64,
    pub distance: f64,
    pub kkt_residual: f64,
}

fn kkt_residual(a: &[f64], d: &[f64], lambda: f64) -> f64 {
    a.iter()
        .zip(d)
        .map(|(a, d)| (d - a - lambda / d).abs())
        .fold(0.0, f64::max)
}

fn diag_distance(a: &[f64], d: &[f64]) -> f64 {
    a.iter().zip(d).map(|(a, d)| (d - a).powi(2)).sum::<f64>().sqrt()
}

/// Roots of `d² − a d − λ = 0`, computed without cancellation.
fn roots(a: f64, lambda: f64) -> (f64, f64) {
    let disc = (a * a + 4.0 * lambda).max(0.0).sqrt();
    let plus = 0.5 * (a + disc);
    let minus = if plus > 0.0 { -lambda / plus } else { 0.0 };
    (minus, plus)
}

/// `d_j(λ)` for a branch pattern in which the first `k` indices take the
/// smaller root.
fn branch_d(a: &[f64], k: usize, lambda: f64) -> Vec<f64> {
    a.iter()
        .enumerate()
        .map(|(j, &aj)| {
            let (lo, hi) = roots(aj, lambda);
            if j < k {
                lo
            } else {
                hi
            }
        })
        .collect()
}

fn log_prod(d: &[f64]) -> f64 {
    d.iter().map(|v| v.ln()).sum()
}

/// Bisection on a bracket `[lo, hi]` with `g(lo)·g(hi) ≤ 0`.
fn bisect(g: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let mut glo = g(lo);
    for _ in 0..SL_BISECTION_STEPS {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let gm = g(mid);
        if gm == 0.0 {
            return mid;
        }
        if (gm < 0.0) == (glo < 0.0) {
            lo = mid;
            glo = gm;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Newton polish of the full stationarity system
/// `d_j(d_j − a_j) = λ`, `Σ ln d_j = 0`.
fn polish(a: &[f64], d: &mut [f64], lambda: &mut f64) {
    let n = a.len();
    for _ in 0..8 {
        let mut m = vec![vec![0.0; n + 2]; n + 1];
        for j in 0..n {
            m[j][j] = 2.0 * d[j] - a[j];
            m[j][n] = -1.0;
            m[j][n + 1] = -(d[j] * (d[j] - a[j]) - *lambda);
        }
        for j in 0..n {
            m[n][j] = 1.0 / d[j];
        }
        m[n][n + 1] = -log_prod(d);
        let Some(step) = gauss_solve(m) else { return };
        let mut trial: Vec<f64> = d.iter().zip(&step).map(|(x, s)| x + s).collect();
        if trial.iter().any(|v| !(*v > 0.0)) {
            return;
        }
        let trial_lambda = *lambda + step[n];
        let old = residual_norm(a, d, *lambda);
        let new = residual_norm(a, &trial, trial_lambda);
        if !(new < old) {
            return;
        }
        d.swap_with_slice(&mut trial);
        *lambda = trial_lambda;
        if new < 1e-15 {
            return;
        }
    }
}

fn residual_norm(a: &[f64], d: &[f64], lambda: f64) -> f64 {
    let stat = a
        .iter()
        .zip(d)
        .map(|(a, d)| (d * (d - a) - lambda).abs())
        .fold(0.0, f64::max);
    stat.max(log_prod(d).abs())
}

/// Gaussian elimination with partial pivoting on an augmented matrix.
fn gauss_solve(mut m: Vec<Vec<f64>>) -> Option<Vec<f64>> {
    let n = m.len();
    for k in 0..n {
        let p = (k..n).max_by(|&i, &j| m[i][k].abs().total_cmp(&m[j][k].abs()))?;
        if m[p][k].abs() < 1e-300 {
            return None;
        }
        m.swap(k, p);
        for i in k + 1..n {
            let f = m[i][k] / m[k][k];
            for c in k..=n {
                m[i][c] -= f * m[k][c];
            }
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|c| m[i][c] * x[c]).sum();
        x[i] = (m[i][n] - s) / m[i][i];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// Candidate from a branch root.
fn candidate(a: &[f64], k: usize, lambda: f64) -> Option<DiagonalProjection> {
    let mut d = branch_d(a, k, lambda);
    if d.iter().any(|v| !(*v > 0.0)) {
        return None;
    }
    let mut lam = lambda;
    polish(a, &mut d, &mut lam);
    finish(a, d, lam)
}

fn finish(a: &[f64], mut d: Vec<f64>, lambda: f64) -> Option<DiagonalProjection> {
    if (log_prod(&d)).abs() > 1e-11 || d.iter().any(|v| !(*v > 0.0)) {
        return None;
    }
    d.sort_by(f64::total_cmp);
    Some(DiagonalProjection {
        distance: diag_distance(a, &d),
        kkt_residual: kkt_residual(a, &d, lambda),
        d,
        lambda,
    })
}

/// Log-space projected Newton descent on `Σ(e^{t_j} − a_j)²`, `Σ t_j = 0`.
fn log_space_descent(a: &[f64]) -> Option<DiagonalProjection> {
    let n = a.len() as f64;
    let mean_log = a.iter().map(|v| v.ln()).sum::<f64>() / n;
    let mut t: Vec<f64> = a.iter().map(|v| v.ln() - mean_log).collect();
    let obj = |t: &[f64]| -> f64 { t.iter().zip(a).map(|(t, a)| (t.exp() - a).powi(2)).sum() };
    let mut f = obj(&t);
    for _ in 0..500 {
        let e: Vec<f64> = t.iter().map(|v| v.exp()).collect();
        let g: Vec<f64> = e.iter().zip(a).map(|(e, a)| 2.0 * (e - a) * e).collect();
        let h: Vec<f64> = e
            .iter()
            .zip(a)
            .map(|(e, a)| (2.0 * e * (2.0 * e - a)).max(1e-3 * e * e + 1e-12))
            .collect();
        // Newton step for a diagonal Hessian restricted to Σ δ = 0.
        let num: f64 = g.iter().zip(&h).map(|(g, h)| g / h).sum();
        let den: f64 = h.iter().map(|h| 1.0 / h).sum();
        let mu = num / den;
        let step: Vec<f64> = g.iter().zip(&h).map(|(g, h)| -(g - mu) / h).collect();
        let slope: f64 = g.iter().zip(&step).map(|(g, s)| g * s).sum();
        if slope > -1e-30 {
            break;
        }
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let trial: Vec<f64> = t.iter().zip(&step).map(|(t, s)| t + alpha * s).collect();
            let ft = obj(&trial);
            if ft <= f + 1e-4 * alpha * slope {
                t = trial;
                f = ft;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    let d: Vec<f64> = t.iter().map(|v| v.exp()).collect();
    let lambda = d.iter().zip(a).map(|(d, a)| d * (d - a)).sum::<f64>() / n;
    let mut d = d;
    let mut lam = lambda;
    polish(a, &mut d, &mut lam);
    finish(a, d, lam)
}

/// Projects ascending singular values `a` onto `{∏d = 1}`.
pub fn project_diagonal(a: &[f64]) -> Result<DiagonalProjection> {
    if a.is_empty() || a.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(Error::Domain("singular values must be positive".into()));
    }
    let ld = log_prod(a);
    if ld == 0.0 {
        return Ok(DiagonalProjection {
            d: a.to_vec(),
            lambda: 0.0,
            distance: 0.0,
            kkt_residual: 0.0,
        });
    }
    let mut best: Option<DiagonalProjection> = None;
    let mut consider = |c: Option<DiagonalProjection>| {
        if let Some(c) = c {
            if best.as_ref().map_or(true, |b| c.distance < b.distance) {
                best = Some(c);
            }
        }
    };

    if ld < 0.0 {
        // λ > 0: single branch, Σ ln d_j(λ) strictly increasing.
        let g = |l: f64| log_prod(&branch_d(a, 0, l));
        let mut hi = 1.0;
        while g(hi) < 0.0 {
            hi *= 4.0;
        }
        let lambda = bisect(g, 0.0, hi);
        consider(candidate(a, 0, lambda));
    } else {
        // λ ∈ [−a_min²/4, 0): scan each prefix pattern for sign changes.
        let floor = -0.25 * a[0] * a[0];
        let grid = lambda_grid(floor);
        for k in 0..=a.len() {
            let g = |l: f64| {
                let d = branch_d(a, k, l);
                if d.iter().any(|v| !(*v > 0.0)) {
                    f64::NEG_INFINITY
                } else {
                    log_prod(&d)
                }
            };
            let values: Vec<f64> = grid.iter().map(|&l| g(l)).collect();
            for w in 0..grid.len() - 1 {
                let (g0, g1) = (values[w], values[w + 1]);
                if !g0.is_finite() && !g1.is_finite() {
                    continue;
                }
                if g0 == 0.0 {
                    consider(candidate(a, k, grid[w]));
                } else if (g0 < 0.0) != (g1 < 0.0) && g1 != 0.0 {
                    let lambda = bisect(g, grid[w], grid[w + 1]);
                    consider(candidate(a, k, lambda));
                }
            }
            if values.last() == Some(&0.0) {
                consider(candidate(a, k, *grid.last().unwrap()));
            }
        }
    }
    consider(log_space_descent(a));
    best.ok_or(Error::NonConvergence {
        method: "SL(n) multiplier search",
        iterations: SL_BISECTION_STEPS,
        residual: ld.abs(),
    })
}

/// Mixed grid over `[floor, 0)`: geometric near both ends, linear in between.
fn lambda_grid(floor: f64) -> Vec<f64> {
    let mut t: Vec<f64> = Vec::with_capacity(3 * LAMBDA_SCAN_POINTS);
    for i in 0..LAMBDA_SCAN_POINTS {
        let e = -18.0 * (i as f64) / (LAMBDA_SCAN_POINTS as f64);
        t.push(10f64.powf(e));
        t.push(1.0 - 10f64.powf(e));
        t.push(i as f64 / LAMBDA_SCAN_POINTS as f64);
    }
    t.push(1.0);
    t.push(1e-300);
    t.retain(|v| *v > 0.0 && *v <= 1.0);
    t.sort_by(f64::total_cmp);
    t.dedup();
    // λ = floor·t, ascending in λ means descending in t
    t.iter().rev().map(|s| floor * s).collect()
}

/// Nearest point of SL(n) to `A` (det A > 0) in the Frobenius norm.
pub fn proj_sl(a: &Matrix) -> Result<ProjectionResult> {
    a.require_positive_det()?;
    let svd = a.svd()?;
    let diag = project_diagonal(&svd.sigma)?;
    let projected = svd.u_factor * Matrix::diag(&diag.d) * svd.v_factor.transpose();
    Ok(ProjectionResult {
        target: Target::SpecialLinear,
        distance: diag.distance,
        projected,
        multiplier: diag.lambda,
        kkt_residual: diag.kkt_residual,
        diagonal: Some(diag.d),
    })
}

/// `dist(A, SL(n))`.
pub fn dist_special_linear(a: &Matrix) -> Result<f64> {
    Ok(proj_sl(a)?.distance)
}

/// `(1/‖A⁻¹‖)|1 − 1/det A|` with the operator norm.
pub fn upper_bound_operator(a: &Matrix) -> Result<f64> {
    let det = a.require_positive_det()?;
    let smin = a.svd()?.sigma[0];
    Ok(smin * (1.0 - 1.0 / det).abs())
}

/// `F(A) = (1/|A⁻¹|)|1 − 1/det A|` with the Frobenius norm.
pub fn f_functional(a: &Matrix) -> Result<f64> {
    let det = a.require_positive_det()?;
    let inv = a.inverse()?;
    Ok((1.0 - 1.0 / det).abs() / inv.frobenius())
}

// ---------------------------------------------------------------------------
// Explicit constants

/// `C₄(n) = ½(1 + (4n^{n+n/2+3/2} + 1)) + (2^{1/n} − 1)^{−1}`.
pub fn c4(n: usize) -> f64 {
    let nf = n as f64;
    let inner = 4.0 * nf.powf(nf + nf / 2.0 + 1.5) + 1.0;
    0.5 * (1.0 + inner) + 1.0 / (2f64.powf(1.0 / nf) - 1.0)
}

/// Two-sided constant `C = √n + C₄(n)`.
pub fn sandwich_constant(n: usize) -> f64 {
    (n as f64).sqrt() + c4(n)
}

/// `C₆ = √n·Λ·C₄ / (λ^{1/n}·min{λ, ½})`.
pub fn c6(n: usize, lambda: f64, big_lambda: f64) -> f64 {
    let nf = n as f64;
    nf.sqrt() * big_lambda * c4(n) / (lambda.powf(1.0 / nf) * lambda.min(0.5))
}

/// `(2k)^{8k}(1+Λ)^{2k−1}` for a `2k × 2k` matrix.
pub fn symplectic_constant(dim: usize, big_lambda: f64) -> f64 {
    let k = (dim / 2) as f64;
    (2.0 * k).powf(8.0 * k) * (1.0 + big_lambda).powf(2.0 * k - 1.0)
}

// ---------------------------------------------------------------------------
// Certified checks

/// Checks `(θ/C)F(A) ≤ dist(A, SL(n)) ≤ C·F(A)` with `C = √n + C₄(n)`.
pub fn verify_sl_sandwich(a: &Matrix, theta: f64) -> Result<BoundReport> {
    if !(theta > 0.0 && theta <= 0.5) {
        return Err(Error::Precondition(format!("theta = {theta} not in (0, 1/2]")));
    }
    let det = a.det();
    if !(det >= theta) {
        return Err(Error::Precondition(format!("det A = {det} is below theta = {theta}")));
    }
    let c = sandwich_constant(a.n());
    let f = f_functional(a)?;
    let dist = dist_special_linear(a)?;
    let sides = vec![
        BoundSide::new("lower", theta / c * f, dist),
        BoundSide::new("upper", dist, c * f),
    ];
    Ok(BoundReport::from_sides(
        "sl-sandwich",
        a.n(),
        c,
        BoundParams {
            theta: Some(theta),
            ..Default::default()
        },
        digest(a, &format!(" theta={theta}")),
        sides,
    ))
}

/// Checks `|1 − det A| ≤ (2k)^{8k}(1+Λ)^{2k−1}|AᵀJA − J|` for `2k × 2k` input.
pub fn verify_symplectic_det_bound(a: &Matrix, big_lambda: f64) -> Result<BoundReport> {
    let residual = symplectic_residual(a)?;
    let det = a.det();
    if !(det > 0.0 && det <= big_lambda * (1.0 + BOUND_SLACK)) {
        return Err(Error::Precondition(format!(
            "det A = {det} not in (0, Lambda = {big_lambda}]"
        )));
    }
    let c = symplectic_constant(a.n(), big_lambda);
    let side = BoundSide::new("det-deviation", (1.0 - det).abs(), c * residual);
    Ok(BoundReport::from_sides(
        "sp-det",
        a.n(),
        c,
        BoundParams {
            big_lambda: Some(big_lambda),
            ..Default::default()
        },
        digest(a, &format!(" Lambda={big_lambda}")),
        vec![side],
    ))
}

/// Checks `|1 − det A| ≤ C₆·K(A)·dist(A, SL(n))` for `λ ≤ det A ≤ Λ`.
pub fn verify_weighted_det_bound(a: &Matrix, lambda: f64, big_lambda: f64) -> Result<BoundReport> {
    let det = a.det();
    if !(lambda > 0.0 && lambda <= big_lambda) {
        return Err(Error::Precondition(format!(
            "need 0 < lambda ≤ Lambda, got {lambda}, {big_lambda}"
        )));
    }
    let slack = 1.0 + BOUND_SLACK;
    if !(det >= lambda / slack && det <= big_lambda * slack) {
        return Err(Error::Precondition(format!(
            "det A = {det} not in [{lambda}, {big_lambda}]"
        )));
    }
    let c = c6(a.n(), lambda, big_lambda);
    let k = a.cond_k()?;
    let dist = dist_special_linear(a)?;
    let side = BoundSide::new("weighted", (1.0 - det).abs(), c * k * dist);
    Ok(BoundReport::from_sides(
        "weighted-det",
        a.n(),
        c,
        BoundParams {
            lambda: Some(lambda),
            big_lambda: Some(big_lambda),
            ..Default::default()
        },
        digest(a, &format!(" lambda={lambda} Lambda={big_lambda} K={k:.6e}")),
        vec![side],
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    // 1-D oracle on the curve (c, 1/c) with successive grid refinement.
    fn oracle_2x2(a1: f64, a2: f64) -> f64 {
        let f = |c: f64| ((c - a1).powi(2) + (1.0 / c - a2).powi(2)).sqrt();
        let (mut lo, mut hi) = (1e-4f64.ln(), 1e4f64.ln());
        let mut best = f64::INFINITY;
        let mut best_t = 0.0;
        for _ in 0..6 {
            for i in 0..=4000 {
                let t = lo + (hi - lo) * i as f64 / 4000.0;
                let v = f(t.exp());
                if v < best {
                    best = v;
                    best_t = t;
                }
            }
            let w = (hi - lo) / 400.0;
            lo = best_t - w;
            hi = best_t + w;
        }
        best
    }

    #[test]
    fn sl_identity_and_unimodular() {
        let r = proj_sl(&Matrix::identity(2)).unwrap();
        assert_eq!(r.distance, 0.0);
        assert_eq!(r.multiplier, 0.0);
        let a = Matrix::diag(&[2.0, 0.5]);
        let r = proj_sl(&a).unwrap();
        assert!(r.distance < 1e-12);
        assert!((r.projected - a).frobenius() < 1e-12);
    }

    #[test]
    fn sl_example_matrix() {
        let a = Matrix::diag(&[4.0, 1.0 / 16.0]);
        let r = proj_sl(&a).unwrap();
        assert!(r.distance <= 3.0 / 16.0);
        let oracle = oracle_2x2(1.0 / 16.0, 4.0);
        assert!(close(r.distance, oracle, 1e-9), "{} vs {oracle}", r.distance);
        assert!(r.multiplier > 0.0);
        assert!((r.projected.det() - 1.0).abs() < 1e-9);
        assert!(r.kkt_residual < 1e-8);
    }

    #[test]
    fn sl_expansive_asymmetric_minimizer() {
        let a = Matrix::identity(2).scale(4.0);
        let r = proj_sl(&a).unwrap();
        let symmetric = (2.0 * 9.0f64).sqrt();
        assert!(r.distance < symmetric - 1e-6, "{} vs {symmetric}", r.distance);
        let oracle = oracle_2x2(4.0, 4.0);
        assert!(close(r.distance, oracle, 1e-9), "{} vs {oracle}", r.distance);
        assert!(r.multiplier < 0.0);
        assert!(r.kkt_residual < 1e-8);
        let d = r.diagonal.unwrap();
        assert!(d[0] <= d[1]);
    }

    #[test]
    fn sl_rejects_nonpositive_det() {
        assert!(proj_sl(&Matrix::diag(&[1.0, -1.0])).is_err());
    }

    #[test]
    fn linear_targets() {
        let (d, p) = dist_sl(&Matrix::diag(&[1.0, -1.0]));
        assert_eq!(d, 0.0);
        assert_eq!(p, Matrix::diag(&[1.0, -1.0]));
        let (d, p) = dist_sl(&Matrix::identity(2));
        assert!(close(d, 2f64.sqrt(), 1e-15));
        assert_eq!(p.frobenius(), 0.0);

        let skew = Matrix::from_row_major(2, &[0.0, 1.0, -1.0, 0.0]).unwrap();
        let (d, p) = dist_so(&skew);
        assert_eq!(d, 0.0);
        assert_eq!(p, skew);
        let (d, _) = dist_so(&Matrix::identity(2));
        assert!(close(d, 2f64.sqrt(), 1e-15));

        let (d, p) = dist_rotation(&Matrix::rotation2(0.3)).unwrap();
        assert!(d < 1e-14);
        assert!((p - Matrix::rotation2(0.3)).frobenius() < 1e-14);
        let (d, p) = dist_rotation(&Matrix::identity(2).scale(2.0)).unwrap();
        assert!(close(d, 2f64.sqrt(), 1e-14));
        assert!((p - Matrix::identity(2)).frobenius() < 1e-14);

        let a = Matrix::diag(&[1.0, -1.0]);
        let (d, p) = dist_sp_lie(&a).unwrap();
        assert!(d < 1e-15);
        assert_eq!(p, a);
        let (d, p) = dist_sp_lie(&Matrix::identity(2)).unwrap();
        assert!(close(d, 2f64.sqrt(), 1e-15));
        assert!(p.frobenius() < 1e-15);
        assert!(dist_sp_lie(&Matrix::identity(3)).is_err());
    }

    #[test]
    fn symplectic_residual_examples() {
        assert!(symplectic_residual(&Matrix::rotation2(1.1)).unwrap() < 1e-14);
        let a = Matrix::diag(&[2.0, 3.0, 0.5, 1.0 / 3.0]);
        assert!(symplectic_residual(&a).unwrap() < 1e-14);
        let r = symplectic_residual(&Matrix::diag(&[2.0, 1.0])).unwrap();
        assert!(close(r, 2f64.sqrt(), 1e-15));
        assert!(symplectic_residual(&Matrix::identity(3)).is_err());
    }

    #[test]
    fn sandwich_examples() {
        let r = verify_sl_sandwich(&Matrix::identity(3), 0.5).unwrap();
        assert_eq!(r.lhs, 0.0);
        assert_eq!(r.rhs, 0.0);
        assert!(r.satisfied);

        let a = Matrix::diag(&[4.0, 1.0 / 16.0]);
        let f = f_functional(&a).unwrap();
        let inv_frob = (1.0f64 / 16.0 + 256.0).sqrt();
        assert!(close(f, 3.0 / inv_frob, 1e-14));
        let dist = dist_special_linear(&a).unwrap();
        assert!(dist <= 2f64.sqrt() * f);
        let r = verify_sl_sandwich(&a, 0.1).unwrap();
        assert!(r.satisfied);
        assert_eq!(r.sides.len(), 2);

        assert!(matches!(
            verify_sl_sandwich(&Matrix::identity(2).scale(0.1), 0.1),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn symplectic_bound_examples() {
        let r = verify_symplectic_det_bound(&Matrix::rotation2(0.4), 1.5).unwrap();
        assert!(r.lhs < 1e-15 && r.rhs < 1e-12 && r.satisfied);
        let r = verify_symplectic_det_bound(&Matrix::diag(&[2.0, 1.0]), 2.0).unwrap();
        assert!(close(r.lhs, 1.0, 1e-15));
        assert!(close(r.rhs, 256.0 * 3.0 * 2f64.sqrt(), 1e-9));
        assert!(r.satisfied);
    }

    #[test]
    fn weighted_bound_examples() {
        let r = verify_weighted_det_bound(&Matrix::identity(2), 0.5, 2.0).unwrap();
        assert_eq!(r.lhs, 0.0);
        assert!(r.satisfied);
        let a = Matrix::diag(&[4.0, 1.0 / 16.0]);
        let r = verify_weighted_det_bound(&a, 0.1, 2.0).unwrap();
        let k = a.cond_k().unwrap();
        assert!(close(k, 64.0156, 1e-3));
        let expected = c6(2, 0.1, 2.0) * k * dist_special_linear(&a).unwrap();
        assert!(close(r.rhs, expected, 1e-9 * expected));
        assert!(r.satisfied);
    }

    #[test]
    fn constants() {
        let c = c4(2);
        let oracle = 0.5 * (1.0 + 4.0 * 2f64.powf(4.5) + 1.0) + 1.0 / (2f64.sqrt() - 1.0);
        assert!(close(c, oracle, 1e-12));
        assert!(close(sandwich_constant(2), 2f64.sqrt() + oracle, 1e-12));
        assert!(close(symplectic_constant(2, 2.0), 768.0, 1e-12));
    }

    #[test]
    fn report_serializes() {
        let r = verify_sl_sandwich(&Matrix::diag(&[2.0, 2.0]), 0.1).unwrap();
        let v = serde_json::to_value(&r).unwrap();
        for key in ["name", "n", "lhs", "rhs", "constant", "ratio", "satisfied", "params"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        assert_eq!(v["params"]["theta"], 0.1);
    }
}
