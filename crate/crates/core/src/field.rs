//! Deformation fields sampled on uniform rectangular grids.
//!
//! Periodic grids place `N` nodes at `origin + k·h` with `h = L/N` (no
//! duplicated endpoint); clamped grids include both endpoints with
//! `h = L/(N − 1)`. A periodic deformation may carry a `lift` matrix `B`
//! with `u(x + L e_k) = u(x) + L B e_k`, so maps homotopic to `x ↦ Bx` live
//! naturally on the torus.

use std::f64::consts::{PI, TAU};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nearness::{self, Target};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    Periodic,
    Clamped,
}

/// Uniform rectangular grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub shape: Vec<usize>,
    pub origin: Vec<f64>,
    pub spacing: Vec<f64>,
    pub boundary: Boundary,
}

impl Grid {
    /// Grid with `n` nodes per axis on `[lo, hi]^dim`.
    pub fn cube(dim: usize, n: usize, lo: f64, hi: f64, boundary: Boundary) -> Result<Grid> {
        if !(1..=4).contains(&dim) || dim == 3 {
            return Err(Error::InvalidInput(format!("grid dimension {dim} not in {{1, 2, 4}}")));
        }
        if n < 2 || !(hi > lo) {
            return Err(Error::InvalidInput(format!("degenerate grid: n = {n}, [{lo}, {hi}]")));
        }
        let h = match boundary {
            Boundary::Periodic => (hi - lo) / n as f64,
            Boundary::Clamped => (hi - lo) / (n - 1) as f64,
        };
        Ok(Grid {
            shape: vec![n; dim],
            origin: vec![lo; dim],
            spacing: vec![h; dim],
            boundary,
        })
    }

    /// `n` nodes per axis on the unit cube.
    pub fn unit(dim: usize, n: usize, boundary: Boundary) -> Result<Grid> {
        Grid::cube(dim, n, 0.0, 1.0, boundary)
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.shape.len();
        if !matches!(d, 1 | 2 | 4) {
            return Err(Error::InvalidInput(format!("grid dimension {d} not in {{1, 2, 4}}")));
        }
        if self.origin.len() != d || self.spacing.len() != d {
            return Err(Error::InvalidInput("origin/spacing length differs from dim".into()));
        }
        if self.shape.iter().any(|&s| s < 2) {
            return Err(Error::InvalidInput("every axis needs at least 2 nodes".into()));
        }
        if self.spacing.iter().any(|h| !(*h > 0.0 && h.is_finite())) {
            return Err(Error::InvalidInput("spacing must be positive".into()));
        }
        if self.origin.iter().any(|o| !o.is_finite()) {
            return Err(Error::InvalidInput("origin must be finite".into()));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Side length of the domain along `axis`.
    pub fn extent(&self, axis: usize) -> f64 {
        let n = self.shape[axis];
        match self.boundary {
            Boundary::Periodic => n as f64 * self.spacing[axis],
            Boundary::Clamped => (n - 1) as f64 * self.spacing[axis],
        }
    }

    /// `|U|`.
    pub fn volume(&self) -> f64 {
        (0..self.dim()).map(|k| self.extent(k)).product()
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing.iter().product()
    }

    pub fn unravel(&self, mut flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dim()];
        for k in (0..self.dim()).rev() {
            idx[k] = flat % self.shape[k];
            flat /= self.shape[k];
        }
        idx
    }

    pub fn ravel(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.shape).fold(0, |acc, (i, s)| acc * s + i)
    }

    pub fn node(&self, flat: usize) -> Vec<f64> {
        self.unravel(flat)
            .iter()
            .enumerate()
            .map(|(k, &i)| self.origin[k] + i as f64 * self.spacing[k])
            .collect()
    }

    pub fn nodes(&self) -> Vec<Vec<f64>> {
        (0..self.len()).map(|i| self.node(i)).collect()
    }

    /// Quadrature weights: `hⁿ` on periodic grids, trapezoid on clamped grids.
    pub fn weights(&self) -> Vec<f64> {
        let base = self.cell_volume();
        (0..self.len())
            .map(|flat| match self.boundary {
                Boundary::Periodic => base,
                Boundary::Clamped => self
                    .unravel(flat)
                    .iter()
                    .zip(&self.shape)
                    .fold(base, |w, (&i, &s)| if i == 0 || i + 1 == s { 0.5 * w } else { w }),
            })
            .collect()
    }

    /// `∫ f` by the grid quadrature.
    pub fn integrate(&self, values: &[f64]) -> f64 {
        self.weights().iter().zip(values).map(|(w, v)| w * v).sum()
    }

    /// `(∫|f|ᵖ)^{1/p}`, or the max for `p = ∞`.
    pub fn lp_norm(&self, values: &[f64], p: f64) -> Result<f64> {
        if !(p >= 1.0) {
            return Err(Error::InvalidInput(format!("p = {p} must be ≥ 1")));
        }
        if p.is_infinite() {
            return Ok(values.iter().fold(0.0, |m, v| m.max(v.abs())));
        }
        Ok(self.integrate_pow(values, p).powf(1.0 / p))
    }

    /// `∫|f|ᵖ`.
    pub fn integrate_pow(&self, values: &[f64], p: f64) -> f64 {
        self.weights().iter().zip(values).map(|(w, v)| w * v.abs().powf(p)).sum()
    }
}

/// A vector-valued (or scalar) field on a grid.
#[derive(Clone, Debug, PartialEq)]
pub struct GridField {
    pub grid: Grid,
    pub components: usize,
    /// `components` values per node, nodes in row-major order.
    pub values: Vec<f64>,
    /// Period lift for periodic deformations (see module docs).
    pub lift: Option<Matrix>,
}

#[derive(Serialize, Deserialize)]
struct FieldFile {
    dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    components: Option<usize>,
    shape: Vec<usize>,
    origin: Vec<f64>,
    spacing: Vec<f64>,
    boundary: Boundary,
    values: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lift: Option<Matrix>,
}

impl Serialize for GridField {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        FieldFile {
            dim: self.grid.dim(),
            components: (self.components != self.grid.dim()).then_some(self.components),
            shape: self.grid.shape.clone(),
            origin: self.grid.origin.clone(),
            spacing: self.grid.spacing.clone(),
            boundary: self.grid.boundary,
            values: self.values.clone(),
            lift: self.lift,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for GridField {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let f = FieldFile::deserialize(d)?;
        if f.shape.len() != f.dim {
            return Err(D::Error::custom("shape length differs from dim"));
        }
        GridField::new(
            Grid {
                shape: f.shape,
                origin: f.origin,
                spacing: f.spacing,
                boundary: f.boundary,
            },
            f.components.unwrap_or(f.dim),
            f.values,
            f.lift,
        )
        .map_err(D::Error::custom)
    }
}

impl GridField {
    pub fn new(grid: Grid, components: usize, values: Vec<f64>, lift: Option<Matrix>) -> Result<GridField> {
        grid.validate()?;
        if components == 0 {
            return Err(Error::InvalidInput("field needs at least one component".into()));
        }
        if values.len() != grid.len() * components {
            return Err(Error::InvalidInput(format!(
                "expected {} values, got {}",
                grid.len() * components,
                values.len()
            )));
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("value {k} is not finite")));
        }
        if let Some(l) = &lift {
            if l.n() != grid.dim() || components != grid.dim() {
                return Err(Error::InvalidInput("lift must be dim × dim on a deformation".into()));
            }
        }
        Ok(GridField {
            grid,
            components,
            values,
            lift,
        })
    }

    pub fn zeros(grid: Grid, components: usize) -> GridField {
        let len = grid.len() * components;
        GridField {
            grid,
            components,
            values: vec![0.0; len],
            lift: None,
        }
    }

    /// Scalar field from per-node values.
    pub fn scalar(grid: Grid, values: Vec<f64>) -> Result<GridField> {
        GridField::new(grid, 1, values, None)
    }

    pub fn from_json(text: &str) -> Result<GridField> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn dim(&self) -> usize {
        self.grid.dim()
    }

    pub fn value(&self, flat: usize) -> &[f64] {
        &self.values[flat * self.components..(flat + 1) * self.components]
    }

    /// Component `c` of all nodes.
    pub fn component(&self, c: usize) -> Vec<f64> {
        self.values.iter().skip(c).step_by(self.components).copied().collect()
    }

    pub fn from_components(grid: Grid, comps: &[Vec<f64>]) -> Result<GridField> {
        let m = comps.len();
        let mut values = vec![0.0; grid.len() * m];
        for (c, comp) in comps.iter().enumerate() {
            for (i, v) in comp.iter().enumerate() {
                values[i * m + c] = *v;
            }
        }
        GridField::new(grid, m, values, None)
    }

    /// Value at a possibly out-of-range index; wraps on periodic grids and
    /// applies the lift, clamps otherwise.
    pub fn value_at(&self, idx: &[isize]) -> Vec<f64> {
        let g = &self.grid;
        let mut base = vec![0usize; g.dim()];
        let mut shifts = vec![0isize; g.dim()];
        for k in 0..g.dim() {
            let n = g.shape[k] as isize;
            match g.boundary {
                Boundary::Periodic => {
                    base[k] = idx[k].rem_euclid(n) as usize;
                    shifts[k] = idx[k].div_euclid(n);
                }
                Boundary::Clamped => base[k] = idx[k].clamp(0, n - 1) as usize,
            }
        }
        let mut v = self.value(g.ravel(&base)).to_vec();
        if let Some(l) = &self.lift {
            for (k, &s) in shifts.iter().enumerate() {
                if s != 0 {
                    let jump = s as f64 * g.extent(k);
                    for (c, vc) in v.iter_mut().enumerate() {
                        *vc += jump * l.get(c, k);
                    }
                }
            }
        }
        v
    }

    /// Pointwise norm `|u(x_i)|` per node.
    pub fn magnitudes(&self) -> Vec<f64> {
        (0..self.grid.len())
            .map(|i| self.value(i).iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect()
    }

    /// Nodewise difference `self − other` on the same grid (lifts subtract).
    pub fn sub(&self, other: &GridField) -> Result<GridField> {
        if self.grid != other.grid || self.components != other.components {
            return Err(Error::InvalidInput("fields live on different grids".into()));
        }
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect();
        let lift = match (self.lift, other.lift) {
            (None, None) => None,
            (a, b) => {
                let n = self.dim();
                let z = Matrix::zeros(n);
                Some(a.unwrap_or(z) - b.unwrap_or(z))
            }
        };
        GridField::new(self.grid.clone(), self.components, values, lift)
    }

    /// Central-difference derivative of every component along `axis`.
    /// Second-order one-sided stencils at clamped boundaries.
    pub fn derivative(&self, axis: usize) -> Result<GridField> {
        let g = &self.grid;
        if g.shape.iter().any(|&s| s < 3) {
            return Err(Error::InvalidInput("derivatives need at least 3 nodes per axis".into()));
        }
        let h = g.spacing[axis];
        let n = g.shape[axis] as isize;
        let mut out = vec![0.0; self.values.len()];
        for flat in 0..g.len() {
            let idx: Vec<isize> = g.unravel(flat).iter().map(|&i| i as isize).collect();
            let at = |off: isize| {
                let mut j = idx.clone();
                j[axis] += off;
                self.value_at(&j)
            };
            let i = idx[axis];
            let d: Vec<f64> = if g.boundary == Boundary::Clamped && i == 0 {
                let (a, b, c) = (at(0), at(1), at(2));
                (0..self.components).map(|m| (-3.0 * a[m] + 4.0 * b[m] - c[m]) / (2.0 * h)).collect()
            } else if g.boundary == Boundary::Clamped && i == n - 1 {
                let (a, b, c) = (at(0), at(-1), at(-2));
                (0..self.components).map(|m| (3.0 * a[m] - 4.0 * b[m] + c[m]) / (2.0 * h)).collect()
            } else {
                let (p, q) = (at(1), at(-1));
                (0..self.components).map(|m| (p[m] - q[m]) / (2.0 * h)).collect()
            };
            out[flat * self.components..(flat + 1) * self.components].copy_from_slice(&d);
        }
        GridField::new(g.clone(), self.components, out, None)
    }

    /// Central-difference divergence (components must equal dim).
    pub fn divergence(&self) -> Result<Vec<f64>> {
        if self.components != self.dim() {
            return Err(Error::InvalidInput("divergence needs a dim-component field".into()));
        }
        let mut div = vec![0.0; self.grid.len()];
        for k in 0..self.dim() {
            let d = self.derivative(k)?;
            for (i, v) in div.iter_mut().enumerate() {
                *v += d.values[i * self.components + k];
            }
        }
        Ok(div)
    }

    /// Central-difference gradient of a scalar field.
    pub fn gradient(&self) -> Result<GridField> {
        if self.components != 1 {
            return Err(Error::InvalidInput("gradient needs a scalar field".into()));
        }
        let comps: Vec<Vec<f64>> = (0..self.dim())
            .map(|k| self.derivative(k).map(|d| d.values))
            .collect::<Result<_>>()?;
        GridField::from_components(self.grid.clone(), &comps)
    }

    /// Jacobian `Du` at every node.
    pub fn jacobian(&self) -> Result<JacobianField> {
        if self.components != self.dim() {
            return Err(Error::InvalidInput("jacobian needs a dim-component field".into()));
        }
        let n = self.dim();
        let partials: Vec<GridField> = (0..n).map(|k| self.derivative(k)).collect::<Result<_>>()?;
        let jac: Vec<Matrix> = (0..self.grid.len())
            .map(|i| Matrix::from_fn(n, |c, k| partials[k].values[i * n + c]))
            .collect();
        let det = jac.iter().map(Matrix::det).collect();
        Ok(JacobianField {
            grid: self.grid.clone(),
            jac,
            det,
        })
    }

    /// Writes `(index…, value…)` rows with a header; LF line endings.
    pub fn write_csv<W: Write>(&self, out: W, names: &[&str]) -> Result<()> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
        let mut header: Vec<String> = (0..self.dim()).map(|k| format!("i{k}")).collect();
        for c in 0..self.components {
            header.push(names.get(c).map_or_else(|| format!("v{c}"), |s| s.to_string()));
        }
        w.write_record(&header).map_err(|e| Error::Io(e.to_string()))?;
        for flat in 0..self.grid.len() {
            let mut row: Vec<String> = self.grid.unravel(flat).iter().map(|i| i.to_string()).collect();
            row.extend(self.value(flat).iter().map(|v| format!("{v:e}")));
            w.write_record(&row).map_err(|e| Error::Io(e.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Per-node Jacobians with determinant cache.
#[derive(Clone, Debug, PartialEq)]
pub struct JacobianField {
    pub grid: Grid,
    pub jac: Vec<Matrix>,
    pub det: Vec<f64>,
}

impl JacobianField {
    pub fn det_bounds(&self) -> (f64, f64) {
        self.det
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &d| (lo.min(d), hi.max(d)))
    }

    /// `K(Du)` per node; errors if any determinant is not positive.
    pub fn k_values(&self) -> Result<Vec<f64>> {
        self.jac.iter().map(Matrix::cond_k).collect()
    }

    /// `dist(Du, target)` per node.
    pub fn distances(&self, target: Target) -> Result<Vec<f64>> {
        self.jac
            .iter()
            .map(|a| nearness::project(a, target).map(|r| r.distance))
            .collect()
    }

    /// `|1 − det Du|` per node.
    pub fn det_deviation(&self) -> Vec<f64> {
        self.det.iter().map(|d| (1.0 - d).abs()).collect()
    }

    /// Nodes whose determinant leaves `[lo, hi]`.
    pub fn det_violations(&self, lo: f64, hi: f64) -> Vec<usize> {
        self.det
            .iter()
            .enumerate()
            .filter(|(_, &d)| !(d >= lo && d <= hi))
            .map(|(i, _)| i)
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Analytic map families

/// Test potentials for gradient and Hamiltonian families.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Potential {
    /// `∏ sin(2π x_i)`.
    SinSin,
}

impl Potential {
    pub fn value(self, x: &[f64]) -> f64 {
        match self {
            Potential::SinSin => x.iter().map(|v| (TAU * v).sin()).product(),
        }
    }

    pub fn gradient(self, x: &[f64]) -> Vec<f64> {
        (0..x.len())
            .map(|k| {
                x.iter()
                    .enumerate()
                    .map(|(i, v)| if i == k { TAU * (TAU * v).cos() } else { (TAU * v).sin() })
                    .product()
            })
            .collect()
    }

    pub fn hessian(self, x: &[f64]) -> Matrix {
        let n = x.len();
        Matrix::from_fn(n, |a, b| {
            x.iter()
                .enumerate()
                .map(|(i, v)| {
                    let (s, c) = (TAU * v).sin_cos();
                    match (i == a, i == b) {
                        (true, true) => -TAU * TAU * s,
                        (true, false) | (false, true) => TAU * c,
                        (false, false) => s,
                    }
                })
                .product()
        })
    }
}

/// Analytic deformation families.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum MapSpec {
    Identity,
    Affine { a: Matrix, c: Vec<f64> },
    /// `(x + s·y, y)`.
    Shear { s: f64 },
    /// Rotation about `(½, ½)` by the angle `ω r²`.
    Twist { omega: f64 },
    /// `(r, θ) ↦ (2^{(1−n)/n} r, 2θ)` on `[−1, 1]²`.
    RadialPolar,
    /// `x_i ↦ scale·|x_i|` on `[−1, 1]ⁿ`.
    Fold { scale: f64 },
    /// `x ↦ (x/|x|)(2ⁿ − 1 + |x|ⁿ)^{1/n}` on `[−1, 1]ⁿ`.
    Cavity,
    /// `amp·∇φ`.
    Gradient { potential: Potential, amp: f64 },
    /// `amp·J∇φ`.
    Hamiltonian { potential: Potential, amp: f64 },
    /// `x_i − (α/4π) sin(2π x_i)`, det `∏(1 − (α/2)cos 2πx_i)`.
    Compress { alpha: f64 },
}

impl MapSpec {
    /// Parses `name[:params]`, e.g. `compress:0.3`, `twist:2`, `shear:0.5`,
    /// `hamiltonian:sinsin`, `affine:2,0,0,1[;c0,c1]`.
    pub fn parse(text: &str) -> Result<MapSpec> {
        let (name, rest) = text.split_once(':').unwrap_or((text, ""));
        let num = |s: &str, default: f64| -> Result<f64> {
            if s.is_empty() {
                Ok(default)
            } else {
                s.trim().parse().map_err(|_| Error::Parse {
                    position: name.len() + 1,
                    message: format!("invalid number {s:?} in map spec"),
                })
            }
        };
        let potential = |s: &str| -> Result<(Potential, f64)> {
            let (p, amp) = s.split_once(':').unwrap_or((s, ""));
            match p {
                "" | "sinsin" => Ok((Potential::SinSin, num(amp, 1.0)?)),
                other => Err(Error::InvalidInput(format!("unknown potential {other:?}"))),
            }
        };
        Ok(match name {
            "identity" => MapSpec::Identity,
            "shear" => MapSpec::Shear { s: num(rest, 0.5)? },
            "twist" => MapSpec::Twist { omega: num(rest, 1.0)? },
            "radial_polar" => MapSpec::RadialPolar,
            "fold" => MapSpec::Fold { scale: num(rest, 0.5)? },
            "cavity" => MapSpec::Cavity,
            "compress" => MapSpec::Compress { alpha: num(rest, 0.3)? },
            "gradient" => {
                let (potential, amp) = potential(rest)?;
                MapSpec::Gradient { potential, amp }
            }
            "hamiltonian" => {
                let (potential, amp) = potential(rest)?;
                MapSpec::Hamiltonian { potential, amp }
            }
            "affine" => {
                let (mat, shift) = rest.split_once(';').unwrap_or((rest, ""));
                let entries: Vec<f64> = mat.split(',').map(|s| num(s, f64::NAN)).collect::<Result<_>>()?;
                let a = Matrix::from_flat(&entries)?;
                let c = if shift.is_empty() {
                    vec![0.0; a.n()]
                } else {
                    shift.split(',').map(|s| num(s, 0.0)).collect::<Result<_>>()?
                };
                if c.len() != a.n() {
                    return Err(Error::InvalidInput("affine shift length differs from matrix size".into()));
                }
                MapSpec::Affine { a, c }
            }
            other => {
                return Err(Error::InvalidInput(format!(
                    "unknown map family {other:?} (expected identity, affine, shear, twist, radial_polar, fold, cavity, gradient, hamiltonian, compress)"
                )))
            }
        })
    }

    /// Canonical domain `[lo, hi]` per axis.
    pub fn default_domain(&self) -> (f64, f64) {
        match self {
            MapSpec::RadialPolar | MapSpec::Fold { .. } | MapSpec::Cavity => (-1.0, 1.0),
            _ => (0.0, 1.0),
        }
    }

    /// Whether the analytic map is injective on its default domain.
    pub fn injective(&self) -> bool {
        match self {
            MapSpec::Identity | MapSpec::Shear { .. } | MapSpec::Twist { .. } | MapSpec::Cavity => true,
            MapSpec::Affine { a, .. } => a.det() != 0.0,
            MapSpec::Compress { alpha } => alpha.abs() < 2.0,
            MapSpec::RadialPolar | MapSpec::Fold { .. } => false,
            MapSpec::Gradient { .. } | MapSpec::Hamiltonian { .. } => false,
        }
    }

    /// Analytic image diameter on the unit cube, when known in closed form.
    pub fn analytic_diameter(&self, dim: usize) -> Option<f64> {
        let diag = (dim as f64).sqrt();
        match self {
            MapSpec::Identity | MapSpec::Compress { .. } => Some(diag),
            // corners (0,0) and (1,1) sit at equal radius and stay antipodal
            MapSpec::Twist { .. } => Some(std::f64::consts::SQRT_2),
            _ => None,
        }
    }

    /// Analytic `[λ, Λ]` for the determinant, when known.
    pub fn det_bounds(&self, dim: usize) -> Option<(f64, f64)> {
        match self {
            MapSpec::Identity | MapSpec::Shear { .. } | MapSpec::Twist { .. } => Some((1.0, 1.0)),
            MapSpec::RadialPolar | MapSpec::Cavity => Some((1.0, 1.0)),
            MapSpec::Affine { a, .. } => Some((a.det(), a.det())),
            MapSpec::Compress { alpha } => {
                let lo = (1.0 - alpha.abs() / 2.0).powi(dim as i32);
                let hi = (1.0 + alpha.abs() / 2.0).powi(dim as i32);
                Some((lo, hi))
            }
            _ => None,
        }
    }

    fn check_dim(&self, dim: usize) -> Result<()> {
        let ok = match self {
            MapSpec::Shear { .. } | MapSpec::Twist { .. } | MapSpec::RadialPolar => dim == 2,
            MapSpec::Hamiltonian { .. } => dim % 2 == 0,
            MapSpec::Affine { a, c } => a.n() == dim && c.len() == dim,
            _ => true,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Domain(format!("map family {self:?} is not defined in dimension {dim}")))
        }
    }

    /// Lift matrix for periodic sampling, `None` if the family is not
    /// compatible with a torus.
    pub fn lift(&self, dim: usize) -> Option<Matrix> {
        match self {
            MapSpec::Identity | MapSpec::Compress { .. } => Some(Matrix::identity(dim)),
            MapSpec::Affine { a, .. } => Some(*a),
            MapSpec::Shear { s } => Some(Matrix::from_fn(2, |i, j| match (i, j) {
                (0, 0) | (1, 1) => 1.0,
                (0, 1) => *s,
                _ => 0.0,
            })),
            MapSpec::Gradient { .. } | MapSpec::Hamiltonian { .. } => Some(Matrix::zeros(dim)),
            _ => None,
        }
    }

    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        let n = x.len();
        self.check_dim(n)?;
        Ok(match self {
            MapSpec::Identity => x.to_vec(),
            MapSpec::Affine { a, c } => a.mul_vec(x).iter().zip(c).map(|(v, c)| v + c).collect(),
            MapSpec::Shear { s } => vec![x[0] + s * x[1], x[1]],
            MapSpec::Twist { omega } => {
                let (dx, dy) = (x[0] - 0.5, x[1] - 0.5);
                let (s, c) = (omega * (dx * dx + dy * dy)).sin_cos();
                vec![0.5 + c * dx - s * dy, 0.5 + s * dx + c * dy]
            }
            MapSpec::RadialPolar => {
                let r = (x[0] * x[0] + x[1] * x[1]).sqrt();
                if r == 0.0 {
                    return Err(Error::Domain("radial_polar is singular at the origin".into()));
                }
                let theta = x[1].atan2(x[0]);
                let rho = r * std::f64::consts::FRAC_1_SQRT_2;
                vec![rho * (2.0 * theta).cos(), rho * (2.0 * theta).sin()]
            }
            MapSpec::Fold { scale } => x.iter().map(|v| scale * v.abs()).collect(),
            MapSpec::Cavity => {
                let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                if r == 0.0 {
                    return Err(Error::Domain("cavity is singular at the origin".into()));
                }
                let nf = n as f64;
                let rho = (2f64.powi(n as i32) - 1.0 + r.powf(nf)).powf(1.0 / nf);
                x.iter().map(|v| v / r * rho).collect()
            }
            MapSpec::Gradient { potential, amp } => potential.gradient(x).iter().map(|g| amp * g).collect(),
            MapSpec::Hamiltonian { potential, amp } => {
                let g = potential.gradient(x);
                let j = Matrix::symplectic_j(n)?;
                j.mul_vec(&g).iter().map(|v| amp * v).collect()
            }
            MapSpec::Compress { alpha } => x.iter().map(|v| v - alpha / (4.0 * PI) * (TAU * v).sin()).collect(),
        })
    }

    /// Analytic Jacobian `Du(x)`.
    pub fn jacobian(&self, x: &[f64]) -> Result<Matrix> {
        let n = x.len();
        self.check_dim(n)?;
        Ok(match self {
            MapSpec::Identity => Matrix::identity(n),
            MapSpec::Affine { a, .. } => *a,
            MapSpec::Shear { .. } => self.lift(2).expect("shear is linear"),
            MapSpec::Twist { omega } => {
                let (dx, dy) = (x[0] - 0.5, x[1] - 0.5);
                let (s, c) = (omega * (dx * dx + dy * dy)).sin_cos();
                let rot = Matrix::rotation2(omega * (dx * dx + dy * dy));
                // d/dθ R(θ)·(x − c) ⊗ ∇θ with ∇θ = 2ω(x − c)
                let t = [-s * dx - c * dy, c * dx - s * dy];
                let g = [2.0 * omega * dx, 2.0 * omega * dy];
                rot + Matrix::from_fn(2, |i, j| t[i] * g[j])
            }
            MapSpec::Compress { alpha } => {
                let d: Vec<f64> = x.iter().map(|v| 1.0 - alpha / 2.0 * (TAU * v).cos()).collect();
                Matrix::diag(&d)
            }
            MapSpec::Gradient { potential, amp } => potential.hessian(x).scale(*amp),
            MapSpec::Hamiltonian { potential, amp } => {
                (Matrix::symplectic_j(n)? * potential.hessian(x)).scale(*amp)
            }
            MapSpec::Fold { scale } => {
                let d: Vec<f64> = x.iter().map(|v| scale * v.signum()).collect();
                Matrix::diag(&d)
            }
            MapSpec::RadialPolar | MapSpec::Cavity => {
                // centred differences of the closed form, step 1e-6
                let h = 1e-6;
                let mut m = Matrix::zeros(n);
                for k in 0..n {
                    let mut p = x.to_vec();
                    let mut q = x.to_vec();
                    p[k] += h;
                    q[k] -= h;
                    let (up, uq) = (self.eval(&p)?, self.eval(&q)?);
                    for c in 0..n {
                        m.set(c, k, (up[c] - uq[c]) / (2.0 * h));
                    }
                }
                m
            }
        })
    }

    /// Samples the family on `grid`.
    pub fn sample(&self, grid: &Grid) -> Result<GridField> {
        grid.validate()?;
        let dim = grid.dim();
        self.check_dim(dim)?;
        let lift = match grid.boundary {
            Boundary::Periodic => Some(self.lift(dim).ok_or_else(|| {
                Error::Domain(format!("map family {self:?} cannot be sampled on a periodic grid"))
            })?),
            Boundary::Clamped => None,
        };
        let mut values = Vec::with_capacity(grid.len() * dim);
        for flat in 0..grid.len() {
            values.extend(self.eval(&grid.node(flat))?);
        }
        let lift = lift.filter(|l| l.frobenius() > 0.0);
        GridField::new(grid.clone(), dim, values, lift)
    }
}

// ---------------------------------------------------------------------------
// Image geometry

/// Occupancy of the image on a fine lattice.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Occupancy {
    pub origin: Vec<f64>,
    pub bin: f64,
    pub shape: Vec<usize>,
    pub occupied: Vec<bool>,
}

impl Occupancy {
    pub fn count(&self) -> usize {
        self.occupied.iter().filter(|b| **b).count()
    }

    pub fn volume(&self) -> f64 {
        self.count() as f64 * self.bin.powi(self.shape.len() as i32)
    }

    pub fn center(&self, flat: usize) -> Vec<f64> {
        let mut rest = flat;
        let mut idx = vec![0; self.shape.len()];
        for k in (0..self.shape.len()).rev() {
            idx[k] = rest % self.shape[k];
            rest /= self.shape[k];
        }
        idx.iter()
            .enumerate()
            .map(|(k, &i)| self.origin[k] + (i as f64 + 0.5) * self.bin)
            .collect()
    }

    /// Lattice index of the bin containing `y`, if inside.
    pub fn locate(&self, y: &[f64]) -> Option<usize> {
        let mut flat = 0;
        for k in 0..self.shape.len() {
            let t = ((y[k] - self.origin[k]) / self.bin).floor();
            if t < 0.0 || t >= self.shape[k] as f64 {
                return None;
            }
            flat = flat * self.shape[k] + t as usize;
        }
        Some(flat)
    }

    /// Number of bounded connected components of the empty region in 2-D
    /// (4-connectivity); zero means the occupied set has no holes.
    pub fn hole_count(&self) -> usize {
        if self.shape.len() != 2 {
            return 0;
        }
        let (nx, ny) = (self.shape[0], self.shape[1]);
        let mut seen = vec![false; nx * ny];
        let mut holes = 0;
        for start in 0..nx * ny {
            if self.occupied[start] || seen[start] {
                continue;
            }
            let mut touches_border = false;
            let mut stack = vec![start];
            seen[start] = true;
            while let Some(c) = stack.pop() {
                let (i, j) = (c / ny, c % ny);
                if i == 0 || j == 0 || i + 1 == nx || j + 1 == ny {
                    touches_border = true;
                }
                let mut push = |ii: usize, jj: usize| {
                    let f = ii * ny + jj;
                    if !self.occupied[f] && !seen[f] {
                        seen[f] = true;
                        stack.push(f);
                    }
                };
                if i > 0 {
                    push(i - 1, j);
                }
                if i + 1 < nx {
                    push(i + 1, j);
                }
                if j > 0 {
                    push(i, j - 1);
                }
                if j + 1 < ny {
                    push(i, j + 1);
                }
            }
            if !touches_border {
                holes += 1;
            }
        }
        holes
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageGeometry {
    pub diameter: f64,
    pub volume: f64,
    pub mask: Occupancy,
}

/// Lattice refinement relative to the source spacing.
pub const IMAGE_REFINEMENT: f64 = 4.0;
const MAX_LATTICE_BINS: usize = 1 << 24;

/// Piecewise-linear image cells: segments in 1-D, triangles in 2-D.
fn image_simplices(u: &GridField) -> Result<Vec<Vec<Vec<f64>>>> {
    let g = &u.grid;
    let extra = usize::from(g.boundary == Boundary::Periodic);
    match g.dim() {
        1 => Ok((0..g.shape[0] - 1 + extra)
            .map(|i| vec![u.value_at(&[i as isize]), u.value_at(&[i as isize + 1])])
            .collect()),
        2 => {
            let mut out = Vec::new();
            for i in 0..(g.shape[0] - 1 + extra) as isize {
                for j in 0..(g.shape[1] - 1 + extra) as isize {
                    let v00 = u.value_at(&[i, j]);
                    let v10 = u.value_at(&[i + 1, j]);
                    let v01 = u.value_at(&[i, j + 1]);
                    let v11 = u.value_at(&[i + 1, j + 1]);
                    out.push(vec![v00.clone(), v10, v11.clone()]);
                    out.push(vec![v00, v11, v01]);
                }
            }
            Ok(out)
        }
        d => Err(Error::Domain(format!("image geometry is available in 1-D and 2-D, not {d}-D"))),
    }
}

/// Image cells longer than this multiple of the median image edge are
/// treated as unresolved jumps (e.g. the cell straddling a cavity) and dropped.
pub const UNRESOLVED_STRETCH: f64 = 16.0;

fn max_edge(s: &[Vec<f64>]) -> f64 {
    let mut m: f64 = 0.0;
    for a in 0..s.len() {
        for b in a + 1..s.len() {
            let d = s[a].iter().zip(&s[b]).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
            m = m.max(d);
        }
    }
    m
}

fn resolved(simplices: Vec<Vec<Vec<f64>>>) -> Vec<Vec<Vec<f64>>> {
    let mut edges: Vec<f64> = simplices.iter().map(|s| max_edge(s)).collect();
    edges.sort_by(f64::total_cmp);
    let median = edges[edges.len() / 2];
    if median <= 0.0 {
        return simplices;
    }
    simplices
        .into_iter()
        .filter(|s| max_edge(s) <= UNRESOLVED_STRETCH * median)
        .collect()
}

fn lattice_for(points: &[Vec<f64>], bin: f64) -> Result<Occupancy> {
    let dim = points[0].len();
    let mut lo = vec![f64::INFINITY; dim];
    let mut hi = vec![f64::NEG_INFINITY; dim];
    for p in points {
        for k in 0..dim {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    let shape: Vec<usize> = (0..dim).map(|k| (((hi[k] - lo[k]) / bin).ceil() as usize).max(1)).collect();
    let total: usize = shape.iter().product();
    if total > MAX_LATTICE_BINS {
        return Err(Error::SizeLimit(format!("image lattice would need {total} bins")));
    }
    Ok(Occupancy {
        origin: lo,
        bin,
        shape,
        occupied: vec![false; total],
    })
}

fn diameter(points: &[Vec<f64>]) -> f64 {
    match points[0].len() {
        1 => {
            let (lo, hi) = points
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), p| (l.min(p[0]), h.max(p[0])));
            hi - lo
        }
        _ => {
            let hull = convex_hull(points);
            let mut best: f64 = 0.0;
            for a in 0..hull.len() {
                for b in a + 1..hull.len() {
                    let d = ((hull[a][0] - hull[b][0]).powi(2) + (hull[a][1] - hull[b][1]).powi(2)).sqrt();
                    best = best.max(d);
                }
            }
            best
        }
    }
}

/// Andrew's monotone chain.
fn convex_hull(points: &[Vec<f64>]) -> Vec<[f64; 2]> {
    let mut pts: Vec<[f64; 2]> = points.iter().map(|p| [p[0], p[1]]).collect();
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let cross = |o: [f64; 2], a: [f64; 2], b: [f64; 2]| (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]);
    let mut hull: Vec<[f64; 2]> = Vec::with_capacity(2 * pts.len());
    for &p in pts.iter().chain(pts.iter().rev().skip(1)) {
        while hull.len() >= 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    hull.pop();
    hull
}

/// Diameter, occupancy volume and lattice mask of `u(U)`.
pub fn image_geometry(u: &GridField) -> Result<ImageGeometry> {
    if u.components != u.dim() {
        return Err(Error::InvalidInput("image geometry needs a deformation field".into()));
    }
    let simplices = resolved(image_simplices(u)?);
    let points: Vec<Vec<f64>> = simplices.iter().flatten().cloned().collect();
    let hmin = u.grid.spacing.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut mask = lattice_for(&points, hmin / IMAGE_REFINEMENT)?;
    for s in &simplices {
        rasterize(&mut mask, s);
    }
    Ok(ImageGeometry {
        diameter: diameter(&points),
        volume: mask.volume(),
        mask,
    })
}

fn rasterize(mask: &mut Occupancy, simplex: &[Vec<f64>]) {
    let b = mask.bin;
    if simplex[0].len() == 1 {
        let (lo, hi) = (simplex[0][0].min(simplex[1][0]), simplex[0][0].max(simplex[1][0]));
        let first = ((lo - mask.origin[0]) / b - 0.5).ceil().max(0.0) as usize;
        let last = (((hi - mask.origin[0]) / b - 0.5).floor()).min(mask.shape[0] as f64 - 1.0);
        if last < 0.0 {
            return;
        }
        for i in first..=last as usize {
            mask.occupied[i] = true;
        }
        return;
    }
    let (a, p, q) = (&simplex[0], &simplex[1], &simplex[2]);
    let area2 = (p[0] - a[0]) * (q[1] - a[1]) - (p[1] - a[1]) * (q[0] - a[0]);
    if area2 == 0.0 {
        return;
    }
    let xmin = a[0].min(p[0]).min(q[0]);
    let xmax = a[0].max(p[0]).max(q[0]);
    let ymin = a[1].min(p[1]).min(q[1]);
    let ymax = a[1].max(p[1]).max(q[1]);
    let i0 = ((xmin - mask.origin[0]) / b - 0.5).ceil().max(0.0) as usize;
    let i1 = ((xmax - mask.origin[0]) / b - 0.5).floor().min(mask.shape[0] as f64 - 1.0);
    let j0 = ((ymin - mask.origin[1]) / b - 0.5).ceil().max(0.0) as usize;
    let j1 = ((ymax - mask.origin[1]) / b - 0.5).floor().min(mask.shape[1] as f64 - 1.0);
    if i1 < 0.0 || j1 < 0.0 {
        return;
    }
    let tol = -1e-12 * area2.abs();
    for i in i0..=i1 as usize {
        let x = mask.origin[0] + (i as f64 + 0.5) * b;
        for j in j0..=j1 as usize {
            let y = mask.origin[1] + (j as f64 + 0.5) * b;
            let e = |s: &[f64], t: &[f64]| ((t[0] - s[0]) * (y - s[1]) - (t[1] - s[1]) * (x - s[0])) * area2.signum();
            if e(a, p) >= tol && e(p, q) >= tol && e(q, a) >= tol {
                mask.occupied[i * mask.shape[1] + j] = true;
            }
        }
    }
}

/// Histogram estimate of the multiplicity density `ω_u` on `bins` bins per
/// axis over the image bounding box.
///
/// Each piecewise-linear cell with positive determinant pushes its source
/// volume forward; dividing by bin volume gives `Σ_{preimages} 1/det Du`.
/// This is a heuristic stand-in for an essential supremum and should only be
/// read qualitatively.
pub fn multiplicity_density(u: &GridField, bins: usize) -> Result<DensityHistogram> {
    if u.components != u.dim() {
        return Err(Error::InvalidInput("multiplicity needs a deformation field".into()));
    }
    if bins == 0 {
        return Err(Error::InvalidInput("need at least one bin".into()));
    }
    let simplices = image_simplices(u)?;
    let points: Vec<Vec<f64>> = simplices.iter().flatten().cloned().collect();
    let dim = u.dim();
    let mut lo = vec![f64::INFINITY; dim];
    let mut hi = vec![f64::NEG_INFINITY; dim];
    for p in &points {
        for k in 0..dim {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    let width: Vec<f64> = (0..dim).map(|k| ((hi[k] - lo[k]) / bins as f64).max(f64::MIN_POSITIVE)).collect();
    let bin_volume: f64 = width.iter().product();
    let mut density = vec![0.0; bins.pow(dim as u32)];
    let source_volume = u.grid.cell_volume() / if dim == 2 { 2.0 } else { 1.0 };
    let mut deposit = |y: &[f64], mass: f64| {
        let mut flat = 0;
        for k in 0..dim {
            let t = (((y[k] - lo[k]) / width[k]).floor() as isize).clamp(0, bins as isize - 1) as usize;
            flat = flat * bins + t;
        }
        density[flat] += mass / bin_volume;
    };
    const M: usize = 4;
    for s in &simplices {
        if dim == 1 {
            if s[1][0] - s[0][0] <= 0.0 {
                continue;
            }
            for m in 0..2 * M {
                let t = (m as f64 + 0.5) / (2 * M) as f64;
                deposit(&[s[0][0] + t * (s[1][0] - s[0][0])], source_volume / (2 * M) as f64);
            }
        } else {
            let area2 = (s[1][0] - s[0][0]) * (s[2][1] - s[0][1]) - (s[1][1] - s[0][1]) * (s[2][0] - s[0][0]);
            if area2 <= 0.0 {
                continue;
            }
            // centroids of the M² sub-triangles of a regular subdivision
            let mut bary = Vec::with_capacity(M * M);
            for i in 0..M {
                for j in 0..M - i {
                    bary.push(((i as f64 + 1.0 / 3.0) / M as f64, (j as f64 + 1.0 / 3.0) / M as f64));
                    if i + j + 1 < M {
                        bary.push(((i as f64 + 2.0 / 3.0) / M as f64, (j as f64 + 2.0 / 3.0) / M as f64));
                    }
                }
            }
            for (b1, b2) in bary {
                let y = [
                    s[0][0] + b1 * (s[1][0] - s[0][0]) + b2 * (s[2][0] - s[0][0]),
                    s[0][1] + b1 * (s[1][1] - s[0][1]) + b2 * (s[2][1] - s[0][1]),
                ];
                deposit(&y, source_volume / (M * M) as f64);
            }
        }
    }
    Ok(DensityHistogram {
        origin: lo,
        width,
        bins,
        density,
    })
}

/// Binned scalar density over a box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityHistogram {
    pub origin: Vec<f64>,
    pub width: Vec<f64>,
    pub bins: usize,
    pub density: Vec<f64>,
}

impl DensityHistogram {
    pub fn center(&self, flat: usize) -> Vec<f64> {
        let dim = self.origin.len();
        let mut rest = flat;
        let mut idx = vec![0; dim];
        for k in (0..dim).rev() {
            idx[k] = rest % self.bins;
            rest /= self.bins;
        }
        idx.iter()
            .enumerate()
            .map(|(k, &i)| self.origin[k] + (i as f64 + 0.5) * self.width[k])
            .collect()
    }
}

/// `(∫|u − (x + c)|ᵖ, |U|ᵖ ∫|1 − u′|ᵖ)` for a 1-D field, `c = mean(u − x)`.
pub fn chain_1d(u: &GridField, p: f64) -> Result<(f64, f64)> {
    if u.dim() != 1 || u.components != 1 {
        return Err(Error::InvalidInput("chain_1d needs a scalar 1-D deformation".into()));
    }
    let g = &u.grid;
    let disp: Vec<f64> = (0..g.len()).map(|i| u.values[i] - g.node(i)[0]).collect();
    let c = g.integrate(&disp) / g.volume();
    let lhs_vals: Vec<f64> = disp.iter().map(|d| d - c).collect();
    let jac = u.jacobian()?;
    let dev: Vec<f64> = jac.det.iter().map(|d| 1.0 - d).collect();
    Ok((g.integrate_pow(&lhs_vals, p), g.volume().powf(p) * g.integrate_pow(&dev, p)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn max_err(a: &[Matrix], b: &[Matrix]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (*x - *y).frobenius()).fold(0.0, f64::max)
    }

    #[test]
    fn identity_sampling() {
        let g = Grid::unit(2, 8, Boundary::Clamped).unwrap();
        let u = MapSpec::Identity.sample(&g).unwrap();
        for i in 0..g.len() {
            assert_eq!(u.value(i), g.node(i).as_slice());
        }
        let jac = u.jacobian().unwrap();
        assert!(jac.jac.iter().all(|m| (*m - Matrix::identity(2)).frobenius() < 1e-12));
    }

    #[test]
    fn affine_jacobian_exact_on_both_boundaries() {
        let a = Matrix::from_row_major(2, &[2.0, 0.3, -0.1, 1.0]).unwrap();
        let spec = MapSpec::Affine { a, c: vec![0.5, -1.0] };
        for b in [Boundary::Clamped, Boundary::Periodic] {
            let g = Grid::unit(2, 9, b).unwrap();
            let jac = spec.sample(&g).unwrap().jacobian().unwrap();
            assert!(jac.jac.iter().all(|m| (*m - a).frobenius() < 1e-10), "{b:?}");
        }
    }

    #[test]
    fn twist_is_area_preserving_to_second_order() {
        let spec = MapSpec::Twist { omega: 2.0 };
        let mut prev = None;
        for n in [17, 33, 65] {
            let g = Grid::unit(2, n, Boundary::Clamped).unwrap();
            let jac = spec.sample(&g).unwrap().jacobian().unwrap();
            let err = jac.det.iter().map(|d| (d - 1.0).abs()).fold(0.0, f64::max);
            if let Some(p) = prev {
                assert!(p / err > 3.0, "ratio {}", p / err);
            }
            prev = Some(err);
        }
        for x in [[0.1, 0.2], [0.7, 0.4]] {
            assert!((spec.jacobian(&x).unwrap().det() - 1.0).abs() < 1e-13);
        }
    }

    #[test]
    fn jacobian_second_order() {
        let spec = MapSpec::Gradient {
            potential: Potential::SinSin,
            amp: 1.0,
        };
        let mut errs = Vec::new();
        for n in [16, 32, 64] {
            let g = Grid::unit(2, n, Boundary::Periodic).unwrap();
            let jac = spec.sample(&g).unwrap().jacobian().unwrap();
            let exact: Vec<Matrix> = g.nodes().iter().map(|x| spec.jacobian(x).unwrap()).collect();
            errs.push(max_err(&jac.jac, &exact));
        }
        for w in errs.windows(2) {
            assert!((w[0] / w[1]).log2() >= 1.8, "{errs:?}");
        }
    }

    #[test]
    fn lp_norm_examples() {
        let g = Grid::unit(2, 10, Boundary::Clamped).unwrap();
        assert!((g.lp_norm(&vec![1.0; g.len()], 1.0).unwrap() - 1.0).abs() < 1e-14);
        assert!((g.lp_norm(&vec![2.0; g.len()], 2.0).unwrap() - 2.0).abs() < 1e-14);
        let g = Grid::unit(2, 12, Boundary::Periodic).unwrap();
        assert!((g.lp_norm(&vec![1.0; g.len()], 1.0).unwrap() - 1.0).abs() < 1e-14);
        let g = Grid::unit(1, 2001, Boundary::Clamped).unwrap();
        let f: Vec<f64> = g.nodes().iter().map(|x| (TAU * x[0]).sin()).collect();
        assert!((g.lp_norm(&f, 2.0).unwrap() - 0.5f64.sqrt()).abs() < 1e-4);
        assert!(g.lp_norm(&f, 0.5).is_err());
    }

    #[test]
    fn image_geometry_examples() {
        let g = Grid::unit(2, 64, Boundary::Clamped).unwrap();
        let img = image_geometry(&MapSpec::Identity.sample(&g).unwrap()).unwrap();
        assert!((img.diameter - 2f64.sqrt()).abs() < 1e-12);
        assert!((img.volume - 1.0).abs() < 0.02, "{}", img.volume);

        let two = MapSpec::Affine {
            a: Matrix::identity(2).scale(2.0),
            c: vec![0.0, 0.0],
        };
        let img = image_geometry(&two.sample(&g).unwrap()).unwrap();
        assert!((img.diameter - 2.0 * 2f64.sqrt()).abs() < 1e-12);
        assert!((img.volume - 4.0).abs() < 0.08, "{}", img.volume);

        let img = image_geometry(&MapSpec::Twist { omega: 2.0 }.sample(&g).unwrap()).unwrap();
        assert!((img.volume - 1.0).abs() < 0.02, "{}", img.volume);

        let gp = Grid::unit(2, 64, Boundary::Periodic).unwrap();
        let img = image_geometry(&MapSpec::Compress { alpha: 0.3 }.sample(&gp).unwrap()).unwrap();
        assert!((img.volume - 1.0).abs() < 0.02, "{}", img.volume);
    }

    #[test]
    fn multiplicity_examples() {
        let g = Grid::unit(2, 64, Boundary::Clamped).unwrap();
        let w = multiplicity_density(&MapSpec::Identity.sample(&g).unwrap(), 8).unwrap();
        assert!(w.density.iter().all(|d| (d - 1.0).abs() < 0.05), "{:?}", w.density);

        let aff = MapSpec::Affine {
            a: Matrix::diag(&[2.0, 1.0]),
            c: vec![0.0, 0.0],
        };
        let w = multiplicity_density(&aff.sample(&g).unwrap(), 8).unwrap();
        assert!(w.density.iter().all(|d| (d - 0.5).abs() < 0.03), "{:?}", w.density);

        let g1 = Grid::cube(1, 400, -1.0, 1.0, Boundary::Clamped).unwrap();
        let fold = MapSpec::Fold { scale: 0.5 }.sample(&g1).unwrap();
        let w = multiplicity_density(&fold, 10).unwrap();
        for (k, d) in w.density.iter().enumerate() {
            if k > 0 && k < 9 {
                assert!((d - 2.0).abs() < 0.05, "bin {k}: {d}");
            }
        }
    }

    #[test]
    fn gallery_flags() {
        let g = Grid::cube(2, 64, -1.0, 1.0, Boundary::Clamped).unwrap();
        let radial = MapSpec::RadialPolar.sample(&g).unwrap();
        let jac = radial.jacobian().unwrap();
        let integral = g.integrate(&jac.det);
        let img = image_geometry(&radial).unwrap();
        assert!(img.volume < 0.75 * integral, "{} vs {integral}", img.volume);

        let cavity = MapSpec::Cavity.sample(&g).unwrap();
        let img = image_geometry(&cavity).unwrap();
        assert!(img.mask.hole_count() >= 1);
        let ident = image_geometry(&MapSpec::Identity.sample(&g).unwrap()).unwrap();
        assert_eq!(ident.mask.hole_count(), 0);
    }

    #[test]
    fn chain_1d_holds() {
        let g = Grid::unit(1, 2001, Boundary::Clamped).unwrap();
        let vals: Vec<f64> = g.nodes().iter().map(|x| x[0] + 0.1 * (3.0 * x[0]).sin() + 0.05 * x[0] * x[0]).collect();
        let u = GridField::new(g, 1, vals, None).unwrap();
        for p in [1.0, 2.0, 3.0] {
            let (lhs, rhs) = chain_1d(&u, p).unwrap();
            assert!(lhs <= rhs + 1e-6, "p = {p}: {lhs} > {rhs}");
        }
    }

    #[test]
    fn json_round_trip_and_csv() {
        let g = Grid::unit(2, 4, Boundary::Periodic).unwrap();
        let u = MapSpec::Compress { alpha: 0.2 }.sample(&g).unwrap();
        let back = GridField::from_json(&u.to_json().unwrap()).unwrap();
        assert_eq!(back, u);
        let mut buf = Vec::new();
        u.write_csv(&mut buf, &["x", "y"]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("i0,i1,x,y\n"));
        assert!(!text.contains('\r'));
        assert!(GridField::from_json(r#"{"dim":2,"shape":[2,2],"origin":[0,0],"spacing":[1,1],"boundary":"clamped","values":[1]}"#).is_err());
    }

    #[test]
    fn map_parsing() {
        assert_eq!(MapSpec::parse("compress:0.3").unwrap(), MapSpec::Compress { alpha: 0.3 });
        assert_eq!(
            MapSpec::parse("hamiltonian:sinsin").unwrap(),
            MapSpec::Hamiltonian {
                potential: Potential::SinSin,
                amp: 1.0
            }
        );
        assert!(matches!(MapSpec::parse("affine:2,0,0,1").unwrap(), MapSpec::Affine { .. }));
        assert!(MapSpec::parse("nope").is_err());
        assert!(MapSpec::parse("twist:x").is_err());
        let g = Grid::unit(2, 8, Boundary::Periodic).unwrap();
        assert!(MapSpec::Twist { omega: 1.0 }.sample(&g).is_err());
    }

    #[test]
    fn analytic_jacobians_match_finite_differences() {
        let specs = [
            MapSpec::Twist { omega: 1.5 },
            MapSpec::Compress { alpha: 0.3 },
            MapSpec::Hamiltonian {
                potential: Potential::SinSin,
                amp: 0.7,
            },
        ];
        let x = [0.31, 0.62];
        for s in specs {
            let j = s.jacobian(&x).unwrap();
            let h = 1e-6;
            for k in 0..2 {
                let mut p = x;
                let mut q = x;
                p[k] += h;
                q[k] -= h;
                let (up, uq) = (s.eval(&p).unwrap(), s.eval(&q).unwrap());
                for c in 0..2 {
                    assert!(((up[c] - uq[c]) / (2.0 * h) - j.get(c, k)).abs() < 1e-7, "{s:?}");
                }
            }
        }
    }
}
