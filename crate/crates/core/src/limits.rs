//! Static incompressible limit: finite-element minimization of
//! `I_κ(u) = ∫ W_iso(Du) + κ w(det Du)` with Dirichlet data, and the κ-sweep
//! measuring how fast minimizers approach measure-preserving maps.
//!
//! Bilinear quadrilaterals with selective reduced integration: the isochoric
//! part uses 2×2 Gauss points, the volumetric part the cell centre, where
//! `det Du` equals the exact area ratio of the deformed cell. Linear
//! triangles lock under the volume constraint and are not used.

use std::collections::VecDeque;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::energy::{iso_with_grad, penalty, penalty_deriv, EnergyKind, EnergySpec, PenaltyValue};
use crate::error::{Error, Result};
use crate::field::{Boundary, Grid, GridField, MapSpec};
use crate::matrix::Matrix;
use crate::rearrange::{measure_preserving_approx_onto, solve_transport, RearrangeOptions};

pub const MAX_ITERATIONS: usize = 5000;
const LBFGS_MEMORY: usize = 10;
const ARMIJO: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 60;
/// Rows whose measured determinant drops below this are aborted.
pub const MIN_ROW_DET: f64 = 0.2;

/// One quadrature point of a cell.
#[derive(Clone, Debug)]
struct Sample {
    nodes: [usize; 4],
    /// Shape-function gradients at the point.
    shape: [[f64; 2]; 4],
    weight: f64,
}

/// Bilinear shape gradients on a `hx × hy` cell at local `(ξ, η) ∈ [0, 1]²`,
/// corners ordered (0,0), (1,0), (0,1), (1,1).
fn q1_gradients(xi: f64, eta: f64, hx: f64, hy: f64) -> [[f64; 2]; 4] {
    [
        [-(1.0 - eta) / hx, -(1.0 - xi) / hy],
        [(1.0 - eta) / hx, -xi / hy],
        [-eta / hx, (1.0 - xi) / hy],
        [eta / hx, xi / hy],
    ]
}

/// Energy, its split, and the gradient with respect to node positions.
#[derive(Clone, Debug, PartialEq)]
pub struct EnergyEval {
    pub total: f64,
    pub iso: f64,
    pub penalty: f64,
    pub gradient: Vec<f64>,
}

/// Discrete `I_κ` on a clamped 2-D grid. Boundary nodes carry the values of
/// the boundary map.
#[derive(Clone, Debug)]
pub struct ElasticProblem {
    pub grid: Grid,
    pub spec: EnergySpec,
    pub boundary_map: MapSpec,
    /// Boundary map at every node; also the comparison extension.
    pub reference: Vec<f64>,
    free: Vec<bool>,
    iso_samples: Vec<Sample>,
    vol_samples: Vec<Sample>,
}

impl ElasticProblem {
    pub fn new(boundary: &MapSpec, spec: &EnergySpec, kappa: f64, grid: &Grid) -> Result<ElasticProblem> {
        grid.validate()?;
        if grid.dim() != 2 || grid.boundary != Boundary::Clamped {
            return Err(Error::InvalidInput("energy minimization runs on clamped 2-D grids".into()));
        }
        if grid.shape.iter().any(|&s| s < 3) {
            return Err(Error::InvalidInput("need at least one interior node per axis".into()));
        }
        if !(kappa >= 0.0 && kappa.is_finite()) {
            return Err(Error::InvalidInput(format!("kappa = {kappa} must be finite and ≥ 0")));
        }
        if spec.kind == EnergyKind::MooneyRivlin {
            return Err(Error::InvalidInput(
                "minimization needs an iso energy with an analytic gradient (hookean or neo_hookean)".into(),
            ));
        }
        match boundary.det_bounds(2) {
            Some((lo, hi)) if (lo - 1.0).abs() < 1e-12 && (hi - 1.0).abs() < 1e-12 && boundary.injective() => {}
            _ => {
                return Err(Error::Precondition(format!(
                    "boundary map {boundary:?} is not known to preserve volume"
                )))
            }
        }
        let spec = EnergySpec { kappa, ..*spec };
        spec.validate()?;
        let reference = boundary.sample(grid)?.values;
        let (nx, ny) = (grid.shape[0], grid.shape[1]);
        let (hx, hy) = (grid.spacing[0], grid.spacing[1]);
        let free = (0..grid.len())
            .map(|f| {
                let idx = grid.unravel(f);
                idx[0] > 0 && idx[0] + 1 < nx && idx[1] > 0 && idx[1] + 1 < ny
            })
            .collect();
        let area = hx * hy;
        let gauss = [0.5 - 0.5 / 3f64.sqrt(), 0.5 + 0.5 / 3f64.sqrt()];
        let cells = (nx - 1) * (ny - 1);
        let mut iso_samples = Vec::with_capacity(4 * cells);
        let mut vol_samples = Vec::with_capacity(cells);
        for i in 0..nx - 1 {
            for j in 0..ny - 1 {
                let nodes = [
                    grid.ravel(&[i, j]),
                    grid.ravel(&[i + 1, j]),
                    grid.ravel(&[i, j + 1]),
                    grid.ravel(&[i + 1, j + 1]),
                ];
                for xi in gauss {
                    for eta in gauss {
                        iso_samples.push(Sample {
                            nodes,
                            shape: q1_gradients(xi, eta, hx, hy),
                            weight: 0.25 * area,
                        });
                    }
                }
                vol_samples.push(Sample {
                    nodes,
                    shape: q1_gradients(0.5, 0.5, hx, hy),
                    weight: area,
                });
            }
        }
        Ok(ElasticProblem {
            grid: grid.clone(),
            spec,
            boundary_map: boundary.clone(),
            reference,
            free,
            iso_samples,
            vol_samples,
        })
    }

    pub fn kappa(&self) -> f64 {
        self.spec.kappa
    }

    pub fn with_kappa(&self, kappa: f64) -> Result<ElasticProblem> {
        if !(kappa >= 0.0 && kappa.is_finite()) {
            return Err(Error::InvalidInput(format!("kappa = {kappa} must be finite and ≥ 0")));
        }
        let mut out = self.clone();
        out.spec.kappa = kappa;
        Ok(out)
    }

    pub fn is_free(&self, node: usize) -> bool {
        self.free[node]
    }

    /// Interior node indices in grid order.
    pub fn free_nodes(&self) -> Vec<usize> {
        (0..self.grid.len()).filter(|&i| self.free[i]).collect()
    }

    fn jacobian_at(&self, t: &Sample, values: &[f64]) -> Matrix {
        let mut du = Matrix::zeros(2);
        for (k, &node) in t.nodes.iter().enumerate() {
            for a in 0..2 {
                for b in 0..2 {
                    du.set(a, b, du.get(a, b) + values[2 * node + a] * t.shape[k][b]);
                }
            }
        }
        du
    }

    /// Per-cell area ratios (`det Du` at cell centres).
    pub fn element_dets(&self, values: &[f64]) -> Vec<f64> {
        self.vol_samples.iter().map(|t| self.jacobian_at(t, values).det()).collect()
    }

    /// `∫|1 − det Du|²` with cell-wise area ratios.
    pub fn det_dev_l2(&self, values: &[f64]) -> f64 {
        self.vol_samples
            .iter()
            .map(|t| t.weight * (1.0 - self.jacobian_at(t, values).det()).powi(2))
            .sum()
    }

    /// Deformed cell centres (corner averages).
    pub fn cell_centres(&self, values: &[f64]) -> Vec<Vec<f64>> {
        self.vol_samples
            .iter()
            .map(|t| {
                (0..2)
                    .map(|a| 0.25 * t.nodes.iter().map(|&k| values[2 * k + a]).sum::<f64>())
                    .collect()
            })
            .collect()
    }

    /// Quadratic transport cost between the reference cell areas and the
    /// deformed cell areas (rescaled to equal totals), both placed at the
    /// deformed cell centres. Vanishes when every cell keeps its area.
    pub fn area_transport_err(&self, values: &[f64]) -> Result<f64> {
        let centres = self.cell_centres(values);
        let reference: Vec<f64> = self.vol_samples.iter().map(|t| t.weight).collect();
        let dets = self.element_dets(values);
        let deformed: Vec<f64> = self.vol_samples.iter().zip(&dets).map(|(t, d)| t.weight * d).collect();
        let scale = reference.iter().sum::<f64>() / deformed.iter().sum::<f64>();
        let deformed: Vec<f64> = deformed.iter().map(|m| m * scale).collect();
        if deformed.iter().zip(&reference).all(|(a, b)| a == b) {
            return Ok(0.0);
        }
        Ok(solve_transport(&centres, &reference, &centres, &deformed, 2.0)?.cost)
    }

    fn scatter(&self, t: &Sample, g: &Matrix, gradient: &mut [f64]) {
        for (k, &node) in t.nodes.iter().enumerate() {
            for a in 0..2 {
                gradient[2 * node + a] += t.weight * (g.get(a, 0) * t.shape[k][0] + g.get(a, 1) * t.shape[k][1]);
            }
        }
    }

    /// `I_κ` and its gradient (zero at boundary nodes); `None` when some
    /// element leaves the admissible set.
    pub fn evaluate(&self, values: &[f64]) -> Result<Option<EnergyEval>> {
        if values.len() != 2 * self.grid.len() {
            return Err(Error::InvalidInput("node value vector has the wrong length".into()));
        }
        let mut iso = 0.0;
        let mut pen = 0.0;
        let mut gradient = vec![0.0; values.len()];
        for t in &self.iso_samples {
            let du = self.jacobian_at(t, values);
            if self.spec.kind == EnergyKind::NeoHookean && !(du.det() > 0.0) {
                return Ok(None);
            }
            let (w, g) = iso_with_grad(self.spec.kind, &du)?;
            iso += t.weight * w;
            self.scatter(t, &g, &mut gradient);
        }
        for t in &self.vol_samples {
            let du = self.jacobian_at(t, values);
            let det = du.det();
            let (PenaltyValue::Finite(w), PenaltyValue::Finite(dw)) =
                (penalty(&self.spec, det), penalty_deriv(&self.spec, det))
            else {
                return Ok(None);
            };
            pen += t.weight * w;
            self.scatter(t, &du.cofactor().scale(self.spec.kappa * dw), &mut gradient);
        }
        let total = iso + self.spec.kappa * pen;
        for (node, free) in self.free.iter().enumerate() {
            if !free {
                gradient[2 * node] = 0.0;
                gradient[2 * node + 1] = 0.0;
            }
        }
        Ok(Some(EnergyEval {
            total,
            iso,
            penalty: pen,
            gradient,
        }))
    }

    pub fn energy(&self, values: &[f64]) -> Result<Option<f64>> {
        Ok(self.evaluate(values)?.map(|e| e.total))
    }

    /// Largest relative error between the analytic gradient and central
    /// differences with step `h` over the given nodes (both components).
    pub fn gradient_check(&self, values: &[f64], nodes: &[usize], h: f64) -> Result<f64> {
        let eval = self
            .evaluate(values)?
            .ok_or_else(|| Error::Domain("gradient check at an infeasible state".into()))?;
        let mut worst: f64 = 0.0;
        let mut probe = values.to_vec();
        for &node in nodes {
            if !self.free[node] {
                return Err(Error::InvalidInput(format!("node {node} is on the boundary")));
            }
            let mut fd = [0.0; 2];
            for a in 0..2 {
                let k = 2 * node + a;
                probe[k] = values[k] + h;
                let plus = self.energy(&probe)?;
                probe[k] = values[k] - h;
                let minus = self.energy(&probe)?;
                probe[k] = values[k];
                let (Some(plus), Some(minus)) = (plus, minus) else {
                    return Err(Error::Domain("finite-difference probe left the admissible set".into()));
                };
                fd[a] = (plus - minus) / (2.0 * h);
            }
            let an = [eval.gradient[2 * node], eval.gradient[2 * node + 1]];
            let diff = ((fd[0] - an[0]).powi(2) + (fd[1] - an[1]).powi(2)).sqrt();
            let scale = (an[0].hypot(an[1])).max(fd[0].hypot(fd[1]));
            worst = worst.max(if scale > 0.0 { diff / scale } else { diff });
        }
        Ok(worst)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sup_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m: f64, v| m.max(v.abs()))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Minimized {
    pub field: GridField,
    pub iterations: usize,
    /// Final `‖∇I_κ‖∞`.
    pub residual: f64,
    pub converged: bool,
    pub energy: EnergyEval,
}

/// `‖∇I‖∞ ≤ 1e−6(1 + |I|)`.
fn converged(eval: &EnergyEval) -> bool {
    sup_norm(&eval.gradient) <= 1e-6 * (1.0 + eval.total.abs())
}

/// L-BFGS with backtracking (Armijo) line search from `init`.
pub fn minimize_from(problem: &ElasticProblem, init: &[f64]) -> Result<Minimized> {
    let mut x = init.to_vec();
    for (node, free) in problem.free.iter().enumerate() {
        if !free {
            x[2 * node] = problem.reference[2 * node];
            x[2 * node + 1] = problem.reference[2 * node + 1];
        }
    }
    let mut eval = problem
        .evaluate(&x)?
        .ok_or_else(|| Error::Precondition("initial deformation is not admissible".into()))?;
    let mut memory: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(LBFGS_MEMORY);
    let h_min = problem.grid.spacing.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut iterations = 0;
    while !converged(&eval) && iterations < MAX_ITERATIONS {
        let g = &eval.gradient;
        // two-loop recursion
        let mut d: Vec<f64> = g.iter().map(|v| -v).collect();
        let mut alphas = Vec::with_capacity(memory.len());
        for (s, y, rho) in memory.iter().rev() {
            let a = rho * dot(s, &d);
            d.iter_mut().zip(y).for_each(|(di, yi)| *di -= a * yi);
            alphas.push(a);
        }
        let scale = match memory.back() {
            Some((s, y, _)) => dot(s, y) / dot(y, y),
            None => 0.1 * h_min / sup_norm(g),
        };
        d.iter_mut().for_each(|v| *v *= scale);
        for ((s, y, rho), a) in memory.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &d);
            d.iter_mut().zip(s).for_each(|(di, si)| *di += (a - b) * si);
        }
        let mut slope = dot(g, &d);
        if !(slope < 0.0) {
            memory.clear();
            let s = 0.1 * h_min / sup_norm(g);
            d = g.iter().map(|v| -s * v).collect();
            slope = dot(g, &d);
        }

        let mut step = 1.0;
        let mut accepted = None;
        let slack = 1e-14 * eval.total.abs();
        for _ in 0..MAX_BACKTRACKS {
            let trial: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + step * di).collect();
            if let Some(e) = problem.evaluate(&trial)? {
                if e.total <= eval.total + ARMIJO * step * slope + slack {
                    accepted = Some((trial, e));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((x_new, e_new)) = accepted else {
            if memory.is_empty() {
                return Err(Error::LineSearch {
                    iterations,
                    residual: sup_norm(&eval.gradient),
                    last_feasible: x,
                });
            }
            memory.clear();
            continue;
        };
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = e_new.gradient.iter().zip(&eval.gradient).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-300 {
            if memory.len() == LBFGS_MEMORY {
                memory.pop_front();
            }
            memory.push_back((s, y, 1.0 / sy));
        }
        x = x_new;
        eval = e_new;
        iterations += 1;
    }
    Ok(Minimized {
        field: GridField::new(problem.grid.clone(), 2, x, None)?,
        iterations,
        residual: sup_norm(&eval.gradient),
        converged: converged(&eval),
        energy: eval,
    })
}

/// Minimizer of `I_κ` with Dirichlet data `boundary`, started from the
/// boundary map itself.
pub fn minimize_energy(boundary: &MapSpec, spec: &EnergySpec, kappa: f64, grid: &Grid) -> Result<Minimized> {
    let problem = ElasticProblem::new(boundary, spec, kappa, grid)?;
    minimize_from(&problem, &problem.reference.clone())
}

// ---------------------------------------------------------------------------
// κ-sweep

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KappaRow {
    pub kappa: f64,
    pub iterations: usize,
    pub energy_total: f64,
    pub energy_iso: f64,
    pub penalty_term: f64,
    /// `∫|1 − det Du_κ|²`.
    pub det_dev_l2: f64,
    /// `∫|u_κ − s_κ|²`.
    pub proj_err: f64,
    pub kappa_times_err: f64,
    /// Transport cost between reference and deformed cell areas; free of
    /// the point-cloud discretisation floor that bounds `proj_err` below.
    pub area_transport_err: f64,
    pub residual: f64,
    pub converged: bool,
    pub warm_started: bool,
    /// Smallest cell area ratio of `u_κ`.
    pub min_det: f64,
    /// `I_κ` of the boundary map used as a competitor.
    pub comparison_energy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub rows: Vec<KappaRow>,
    /// Least-squares slope of `log proj_err` against `log κ`; `None` when
    /// every projection error vanishes.
    pub fitted_slope: Option<f64>,
    /// `max κ·proj_err`.
    pub c_envelope: f64,
    /// `max κ·proj_err / min κ·proj_err`.
    pub envelope_spread: Option<f64>,
    pub degenerate: bool,
    /// Slope of `log area_transport_err` against `log κ`, when all positive.
    pub area_transport_slope: Option<f64>,
    /// κ values whose rows were dropped because `min det < 0.2`.
    pub aborted: Vec<f64>,
}

pub const SWEEP_CSV_COLUMNS: [&str; 8] = [
    "kappa",
    "iterations",
    "energy_total",
    "energy_iso",
    "penalty_term",
    "det_dev_l2",
    "proj_err",
    "kappa_times_err",
];

impl SweepReport {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
        w.write_record(SWEEP_CSV_COLUMNS).map_err(|e| Error::Io(e.to_string()))?;
        for r in &self.rows {
            w.write_record([
                r.kappa.to_string(),
                r.iterations.to_string(),
                r.energy_total.to_string(),
                r.energy_iso.to_string(),
                r.penalty_term.to_string(),
                r.det_dev_l2.to_string(),
                r.proj_err.to_string(),
                r.kappa_times_err.to_string(),
            ])
            .map_err(|e| Error::Io(e.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }

    /// `(log10 κ, log10 proj_err)` for rows with positive error.
    pub fn plot_data(&self) -> Vec<(f64, f64)> {
        self.rows
            .iter()
            .filter(|r| r.proj_err > 0.0)
            .map(|r| (r.kappa.log10(), r.proj_err.log10()))
            .collect()
    }

    pub fn write_plot_data<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "log10_kappa,log10_proj_err")?;
        for (x, y) in self.plot_data() {
            writeln!(out, "{x},{y}")?;
        }
        Ok(())
    }
}

/// Least-squares slope of `ys` against `xs`.
pub fn fit_slope(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() < 2 || xs.len() != ys.len() {
        return None;
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

fn check_kappas(kappas: &[f64]) -> Result<()> {
    if kappas.len() < 3 {
        return Err(Error::Precondition("a sweep needs at least three kappa values".into()));
    }
    if kappas.iter().any(|k| !(k.is_finite() && *k > 0.0)) {
        return Err(Error::InvalidInput("kappa values must be positive and finite".into()));
    }
    if kappas.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Precondition("kappa values must be strictly ascending".into()));
    }
    if kappas[kappas.len() - 1] / kappas[0] < 100.0 * (1.0 - 1e-12) {
        return Err(Error::Precondition("kappa values must span at least two decades".into()));
    }
    Ok(())
}

/// Minimizes for each κ (warm-started from the previous row), projects the
/// minimizer onto measure-preserving maps with `p = 2`, and fits the decay.
pub fn kappa_sweep(boundary: &MapSpec, spec: &EnergySpec, kappas: &[f64], grid: &Grid) -> Result<SweepReport> {
    check_kappas(kappas)?;
    let base = ElasticProblem::new(boundary, spec, kappas[0], grid)?;
    let target: Vec<Vec<f64>> = base.reference.chunks(2).map(<[f64]>::to_vec).collect();
    let mut rows = Vec::with_capacity(kappas.len());
    let mut aborted = Vec::new();
    let mut warm: Option<Vec<f64>> = None;
    for &kappa in kappas {
        let problem = base.with_kappa(kappa)?;
        let init = warm.clone().unwrap_or_else(|| problem.reference.clone());
        let min = minimize_from(&problem, &init)?;
        let dets = problem.element_dets(&min.field.values);
        let min_det = dets.iter().cloned().fold(f64::INFINITY, f64::min);
        if min_det < MIN_ROW_DET {
            aborted.push(kappa);
            continue;
        }
        let comparison_energy = problem
            .energy(&problem.reference)?
            .ok_or_else(|| Error::Domain("boundary extension is not admissible".into()))?;
        let proj = measure_preserving_approx_onto(
            &min.field,
            None,
            2.0,
            &RearrangeOptions::default(),
            target.clone(),
        )?;
        let proj_err = proj.lhs;
        rows.push(KappaRow {
            kappa,
            iterations: min.iterations,
            energy_total: min.energy.total,
            energy_iso: min.energy.iso,
            penalty_term: min.energy.penalty,
            det_dev_l2: problem.det_dev_l2(&min.field.values),
            proj_err,
            kappa_times_err: kappa * proj_err,
            area_transport_err: problem.area_transport_err(&min.field.values)?,
            residual: min.residual,
            converged: min.converged,
            warm_started: warm.is_some(),
            min_det,
            comparison_energy,
        });
        warm = Some(min.field.values);
    }
    let positive: Vec<&KappaRow> = rows.iter().filter(|r| r.proj_err > 0.0).collect();
    let degenerate = positive.is_empty();
    let fitted_slope = if positive.len() == rows.len() {
        let xs: Vec<f64> = positive.iter().map(|r| r.kappa.ln()).collect();
        let ys: Vec<f64> = positive.iter().map(|r| r.proj_err.ln()).collect();
        fit_slope(&xs, &ys)
    } else {
        None
    };
    let area_transport_slope = if rows.iter().all(|r| r.area_transport_err > 0.0) {
        let xs: Vec<f64> = rows.iter().map(|r| r.kappa.ln()).collect();
        let ys: Vec<f64> = rows.iter().map(|r| r.area_transport_err.ln()).collect();
        fit_slope(&xs, &ys)
    } else {
        None
    };
    let c_envelope = rows.iter().map(|r| r.kappa_times_err).fold(0.0, f64::max);
    let envelope_spread = (!degenerate && positive.len() == rows.len()).then(|| {
        let lo = rows.iter().map(|r| r.kappa_times_err).fold(f64::INFINITY, f64::min);
        c_envelope / lo
    });
    Ok(SweepReport {
        rows,
        fitted_slope,
        c_envelope,
        envelope_spread,
        degenerate,
        area_transport_slope,
        aborted,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::PenaltyKind;
    use crate::sampling::sample_rng;
    use rand::Rng;

    fn neo() -> EnergySpec {
        EnergySpec {
            kind: EnergyKind::NeoHookean,
            penalty_kind: PenaltyKind::Quadratic,
            ..EnergySpec::default()
        }
    }

    #[test]
    fn identity_is_a_fixed_point() {
        let grid = Grid::unit(2, 9, Boundary::Clamped).unwrap();
        for kappa in [1.0, 100.0] {
            let m = minimize_energy(&MapSpec::Identity, &neo(), kappa, &grid).unwrap();
            assert_eq!(m.iterations, 0);
            assert!(m.energy.total.abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let grid = Grid::unit(2, 10, Boundary::Clamped).unwrap();
        for kind in [EnergyKind::Hookean, EnergyKind::NeoHookean] {
            let spec = EnergySpec { kind, ..neo() };
            let problem = ElasticProblem::new(&MapSpec::Twist { omega: 1.0 }, &spec, 50.0, &grid).unwrap();
            let mut rng = sample_rng(3, 0);
            let mut x = problem.reference.clone();
            let free = problem.free_nodes();
            for &n in &free {
                x[2 * n] += rng.gen_range(-0.02..0.02);
                x[2 * n + 1] += rng.gen_range(-0.02..0.02);
            }
            let nodes: Vec<usize> = (0..20).map(|_| free[rng.gen_range(0..free.len())]).collect();
            let err = problem.gradient_check(&x, &nodes, 1e-5).unwrap();
            assert!(err <= 1e-5, "{kind:?}: {err}");
        }
    }

    #[test]
    fn shear_approaches_incompressible_solution() {
        let grid = Grid::unit(2, 9, Boundary::Clamped).unwrap();
        let shear = MapSpec::Shear { s: 0.4 };
        let lo = minimize_energy(&shear, &neo(), 10.0, &grid).unwrap();
        let hi = minimize_energy(&shear, &neo(), 1e3, &grid).unwrap();
        let problem = ElasticProblem::new(&shear, &neo(), 1e6, &grid).unwrap();
        let reference = minimize_from(&problem, &hi.field.values).unwrap();
        let dd = |m: &Minimized| problem.det_dev_l2(&m.field.values);
        assert!(dd(&hi) <= dd(&lo) * 1.05);
        assert!((hi.energy.iso - reference.energy.iso).abs() < (lo.energy.iso - reference.energy.iso).abs() + 1e-12);
        assert!(hi.energy.total <= problem.with_kappa(1e3).unwrap().energy(&problem.reference).unwrap().unwrap() + 1e-12);
    }

    #[test]
    fn identity_sweep_is_degenerate() {
        let grid = Grid::unit(2, 9, Boundary::Clamped).unwrap();
        let r = kappa_sweep(&MapSpec::Identity, &neo(), &[10.0, 100.0, 1000.0], &grid).unwrap();
        assert!(r.degenerate);
        assert!(r.rows.iter().all(|row| row.proj_err == 0.0));
        assert_eq!(r.fitted_slope, None);
    }

    #[test]
    fn sweep_preconditions() {
        let grid = Grid::unit(2, 9, Boundary::Clamped).unwrap();
        let id = MapSpec::Identity;
        assert!(kappa_sweep(&id, &neo(), &[10.0, 100.0], &grid).is_err());
        assert!(kappa_sweep(&id, &neo(), &[10.0, 20.0, 50.0], &grid).is_err());
        assert!(kappa_sweep(&id, &neo(), &[100.0, 10.0, 1000.0], &grid).is_err());
        assert!(ElasticProblem::new(&MapSpec::Compress { alpha: 0.3 }, &neo(), 1.0, &grid).is_err());
    }

    #[test]
    fn slope_fit() {
        let xs = [1.0, 2.0, 3.0];
        assert!((fit_slope(&xs, &[3.0, 1.0, -1.0]).unwrap() + 2.0).abs() < 1e-15);
        assert_eq!(fit_slope(&[1.0], &[1.0]), None);
    }
}
