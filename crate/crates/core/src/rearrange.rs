//! Measure-preserving approximants: discrete optimal transport onto a uniform
//! cloud, cube-permutation approximants, and linear Hamiltonian flows.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{image_geometry, GridField, MapSpec, Occupancy};
use crate::matrix::Matrix;
use crate::sampling::sample_rng;

/// Largest instance accepted by the exact assignment solver.
pub const MAX_ASSIGNMENT: usize = 4096;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransportPlan {
    pub source: Vec<Vec<f64>>,
    pub target: Vec<Vec<f64>>,
    /// `assignment[i]` is the target index matched to source `i`.
    pub assignment: Vec<usize>,
    /// `Σ|y_i − T(y_i)|ᵖ / N`.
    pub cost: f64,
    pub dual_source: Vec<f64>,
    pub dual_target: Vec<f64>,
    /// `min_ij (c_ij − u_i − v_j)`; non-negative for an optimal dual pair.
    pub min_reduced_cost: f64,
}

fn pcost(a: &[f64], b: &[f64], p: f64) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    if p == 2.0 {
        d2
    } else {
        d2.sqrt().powf(p)
    }
}

fn check_clouds(source: &[Vec<f64>], target: &[Vec<f64>], p: f64) -> Result<()> {
    if source.len() != target.len() {
        return Err(Error::InvalidInput(format!(
            "clouds differ in size: {} vs {}",
            source.len(),
            target.len()
        )));
    }
    if !(p >= 1.0 && p.is_finite()) {
        return Err(Error::InvalidInput(format!("p = {p} must be a finite value ≥ 1")));
    }
    let dim = source.first().map_or(0, Vec::len);
    if source.iter().chain(target).any(|x| x.len() != dim || x.iter().any(|v| !v.is_finite())) {
        return Err(Error::InvalidInput("points must share one dimension and be finite".into()));
    }
    Ok(())
}

/// Exact `|·|ᵖ` assignment by shortest augmenting paths with potentials.
/// Ties resolve toward the lowest column index.
pub fn solve_assignment(source: &[Vec<f64>], target: &[Vec<f64>], p: f64) -> Result<TransportPlan> {
    check_clouds(source, target, p)?;
    let n = source.len();
    if n > MAX_ASSIGNMENT {
        return Err(Error::SizeLimit(format!(
            "{n} points exceed the exact solver cap of {MAX_ASSIGNMENT}; use the entropic mode"
        )));
    }
    let cost: Vec<f64> = source
        .iter()
        .flat_map(|s| target.iter().map(move |t| pcost(s, t, p)))
        .collect();
    let (assignment, u, v) = hungarian(n, &cost);
    let mut min_reduced = f64::INFINITY;
    for i in 0..n {
        for j in 0..n {
            min_reduced = min_reduced.min(cost[i * n + j] - u[i] - v[j]);
        }
    }
    let total: f64 = (0..n).map(|i| cost[i * n + assignment[i]]).sum();
    Ok(TransportPlan {
        source: source.to_vec(),
        target: target.to_vec(),
        cost: if n > 0 { total / n as f64 } else { 0.0 },
        assignment,
        dual_source: u,
        dual_target: v,
        min_reduced_cost: if n > 0 { min_reduced } else { 0.0 },
    })
}

/// Dense Hungarian method (rows augmented one at a time). Returns the row
/// assignment and dual potentials with `u_i + v_j ≤ c_ij`.
fn hungarian(n: usize, cost: &[f64]) -> (Vec<usize>, Vec<f64>, Vec<f64>) {
    const NONE: usize = usize::MAX;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    // column j (1-based) matched to row owner[j] (1-based), 0 = free
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    let mut minv = vec![0.0; n + 1];
    let mut used = vec![false; n + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0usize;
        minv.iter_mut().for_each(|m| *m = f64::INFINITY);
        used.iter_mut().for_each(|b| *b = false);
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let row = &cost[(i0 - 1) * n..i0 * n];
            let mut delta = f64::INFINITY;
            let mut j1 = NONE;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = row[j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=n {
        assignment[owner[j] - 1] = j - 1;
    }
    (assignment, u[1..].to_vec(), v[1..].to_vec())
}

/// Entropic speed fallback: log-domain Sinkhorn with ε-scaling down to
/// `1e−3 × mean cost`, rounded greedily to a permutation. Not optimal; the
/// duals are the Sinkhorn potentials.
pub fn solve_entropic(source: &[Vec<f64>], target: &[Vec<f64>], p: f64) -> Result<TransportPlan> {
    check_clouds(source, target, p)?;
    let n = source.len();
    if n == 0 {
        return solve_assignment(source, target, p);
    }
    let mean_cost = source
        .iter()
        .map(|s| target.iter().map(|t| pcost(s, t, p)).sum::<f64>())
        .sum::<f64>()
        / (n * n) as f64;
    let eps_final = 1e-3 * mean_cost.max(f64::MIN_POSITIVE);
    let cost = |i: usize, j: usize| pcost(&source[i], &target[j], p);
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; n];
    let mut eps = mean_cost.max(eps_final);
    let lse = |vals: &mut dyn Iterator<Item = f64>| -> f64 {
        let v: Vec<f64> = vals.collect();
        let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
    };
    loop {
        for _ in 0..50 {
            for i in 0..n {
                f[i] = -eps * lse(&mut (0..n).map(|j| (g[j] - cost(i, j)) / eps));
            }
            for j in 0..n {
                g[j] = -eps * lse(&mut (0..n).map(|i| (f[i] - cost(i, j)) / eps));
            }
        }
        if eps <= eps_final {
            break;
        }
        eps = (eps * 0.5).max(eps_final);
    }
    let mut entries: Vec<(f64, usize, usize)> = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            entries.push(((f[i] + g[j] - cost(i, j)) / eps, i, j));
        }
    }
    entries.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut assignment = vec![usize::MAX; n];
    let mut taken = vec![false; n];
    for (_, i, j) in entries {
        if assignment[i] == usize::MAX && !taken[j] {
            assignment[i] = j;
            taken[j] = true;
        }
    }
    let total: f64 = (0..n).map(|i| cost(i, assignment[i])).sum();
    let mut min_reduced = f64::INFINITY;
    for i in 0..n {
        for j in 0..n {
            min_reduced = min_reduced.min(cost(i, j) - f[i] - g[j]);
        }
    }
    Ok(TransportPlan {
        source: source.to_vec(),
        target: target.to_vec(),
        assignment,
        cost: total / n as f64,
        dual_source: f,
        dual_target: g,
        min_reduced_cost: min_reduced,
    })
}

/// Optimal plan between two weighted clouds of equal total mass.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightedTransport {
    /// `(source, target, mass)` for every positive flow.
    pub flow: Vec<(usize, usize, f64)>,
    /// `Σ mass·|x_i − y_j|ᵖ`.
    pub cost: f64,
    pub dual_source: Vec<f64>,
    pub dual_target: Vec<f64>,
    pub min_reduced_cost: f64,
    pub augmentations: usize,
}

/// Exact transportation problem by successive shortest paths (dense
/// Dijkstra with potentials). Masses must be non-negative with equal sums.
pub fn solve_transport(
    source: &[Vec<f64>],
    source_mass: &[f64],
    target: &[Vec<f64>],
    target_mass: &[f64],
    p: f64,
) -> Result<WeightedTransport> {
    let (n, m) = (source.len(), target.len());
    if source_mass.len() != n || target_mass.len() != m {
        return Err(Error::InvalidInput("one mass per point is required".into()));
    }
    if n.max(m) > MAX_ASSIGNMENT {
        return Err(Error::SizeLimit(format!(
            "{} points exceed the exact solver cap of {MAX_ASSIGNMENT}",
            n.max(m)
        )));
    }
    if source_mass.iter().chain(target_mass).any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(Error::InvalidInput("masses must be finite and non-negative".into()));
    }
    let (sa, sb): (f64, f64) = (source_mass.iter().sum(), target_mass.iter().sum());
    if (sa - sb).abs() > 1e-9 * sa.max(sb).max(f64::MIN_POSITIVE) {
        return Err(Error::Precondition(format!("unbalanced masses: {sa} vs {sb}")));
    }
    if source.iter().chain(target).any(|x| x.iter().any(|v| !v.is_finite())) {
        return Err(Error::InvalidInput("points must be finite".into()));
    }
    let cost: Vec<f64> = source
        .iter()
        .flat_map(|s| target.iter().map(move |t| pcost(s, t, p)))
        .collect();
    let tol = 1e-14 * sa.max(f64::MIN_POSITIVE);
    let mut supply = source_mass.to_vec();
    let mut demand: Vec<f64> = target_mass.iter().map(|b| b * sa / sb.max(f64::MIN_POSITIVE)).collect();
    // node potentials: sources 0..n, targets n..n+m
    let mut pi = vec![0.0; n + m];
    for j in 0..m {
        pi[n + j] = (0..n).map(|i| cost[i * m + j]).fold(f64::INFINITY, f64::min);
    }
    let mut flow = vec![0.0; n * m];
    // sources currently carrying flow into each target
    let mut carriers: Vec<Vec<usize>> = vec![Vec::new(); m];
    let mut augmentations = 0;
    let cap = 20 * (n + m) + 1000;
    let mut dist = vec![f64::INFINITY; n + m];
    let mut prev = vec![usize::MAX; n + m];
    let mut done = vec![false; n + m];
    while supply.iter().any(|&r| r > tol) {
        if augmentations > cap {
            return Err(Error::NonConvergence {
                method: "transport shortest paths",
                iterations: augmentations,
                residual: supply.iter().sum(),
            });
        }
        dist.iter_mut().for_each(|d| *d = f64::INFINITY);
        prev.iter_mut().for_each(|v| *v = usize::MAX);
        done.iter_mut().for_each(|v| *v = false);
        for i in 0..n {
            if supply[i] > tol {
                dist[i] = 0.0;
            }
        }
        let mut sink = usize::MAX;
        loop {
            let mut k = usize::MAX;
            let mut best = f64::INFINITY;
            for (v, &d) in dist.iter().enumerate() {
                if !done[v] && d < best {
                    best = d;
                    k = v;
                }
            }
            if k == usize::MAX {
                break;
            }
            done[k] = true;
            if k >= n && demand[k - n] > tol {
                sink = k;
                break;
            }
            if k < n {
                let row = &cost[k * m..(k + 1) * m];
                for j in 0..m {
                    let v = n + j;
                    if done[v] {
                        continue;
                    }
                    let nd = best + (row[j] + pi[k] - pi[v]).max(0.0);
                    if nd < dist[v] {
                        dist[v] = nd;
                        prev[v] = k;
                    }
                }
            } else {
                let j = k - n;
                for &i in &carriers[j] {
                    if done[i] {
                        continue;
                    }
                    let nd = best + (-cost[i * m + j] + pi[k] - pi[i]).max(0.0);
                    if nd < dist[i] {
                        dist[i] = nd;
                        prev[i] = k;
                    }
                }
            }
        }
        if sink == usize::MAX {
            return Err(Error::Domain("no augmenting path: masses cannot be matched".into()));
        }
        let reach = dist[sink];
        for v in 0..n + m {
            pi[v] += dist[v].min(reach);
        }
        // bottleneck along the path
        let mut amount = demand[sink - n];
        let mut v = sink;
        while prev[v] != usize::MAX {
            let u = prev[v];
            if u >= n {
                amount = amount.min(flow[v * m + (u - n)]);
            }
            v = u;
        }
        amount = amount.min(supply[v]);
        supply[v] -= amount;
        demand[sink - n] -= amount;
        let mut v = sink;
        while prev[v] != usize::MAX {
            let u = prev[v];
            if u < n {
                let (i, j) = (u, v - n);
                if flow[i * m + j] <= 0.0 {
                    carriers[j].push(i);
                }
                flow[i * m + j] += amount;
            } else {
                let (i, j) = (v, u - n);
                flow[i * m + j] -= amount;
                if flow[i * m + j] <= tol {
                    flow[i * m + j] = 0.0;
                    carriers[j].retain(|&x| x != i);
                }
            }
            v = u;
        }
        augmentations += 1;
    }
    let dual_source: Vec<f64> = (0..n).map(|i| -pi[i]).collect();
    let dual_target: Vec<f64> = (0..m).map(|j| pi[n + j]).collect();
    let mut min_reduced = f64::INFINITY;
    let mut total = 0.0;
    let mut out = Vec::new();
    for i in 0..n {
        for j in 0..m {
            min_reduced = min_reduced.min(cost[i * m + j] - dual_source[i] - dual_target[j]);
            let f = flow[i * m + j];
            if f > 0.0 {
                total += f * cost[i * m + j];
                out.push((i, j, f));
            }
        }
    }
    Ok(WeightedTransport {
        flow: out,
        cost: total,
        dual_source,
        dual_target,
        min_reduced_cost: if n * m > 0 { min_reduced } else { 0.0 },
        augmentations,
    })
}

// ---------------------------------------------------------------------------
// Target cloud

/// Plastic-number (R2) low-discrepancy sequence in 2-D; golden ratio in 1-D.
fn r_sequence(dim: usize, k: usize, offset: &[f64]) -> Vec<f64> {
    let alpha: Vec<f64> = match dim {
        1 => vec![0.618_033_988_749_894_9],
        _ => {
            let g = 1.324_717_957_244_746;
            vec![1.0 / g, 1.0 / (g * g)]
        }
    };
    (0..dim).map(|d| (offset[d] + (k as f64 + 1.0) * alpha[d]).fract()).collect()
}

/// `count` quasi-uniform points on the occupied part of `mask`, rescaled
/// about their centroid so that the region they fill has volume `volume`.
pub fn target_cloud(mask: &Occupancy, count: usize, volume: f64, seed: u64) -> Result<Vec<Vec<f64>>> {
    let dim = mask.shape.len();
    if !(1..=2).contains(&dim) {
        return Err(Error::Domain("target clouds are built in 1-D and 2-D".into()));
    }
    if mask.count() == 0 {
        return Err(Error::Domain("image occupancy is empty".into()));
    }
    let mut rng = sample_rng(seed, 0);
    let offset: Vec<f64> = (0..dim).map(|_| rng.gen::<f64>()).collect();
    let extent: Vec<f64> = mask.shape.iter().map(|&s| s as f64 * mask.bin).collect();
    let mut pts = Vec::with_capacity(count);
    let cap = 1000 * count.max(1) * mask.occupied.len() / mask.count();
    let mut k = 0;
    while pts.len() < count {
        if k > cap {
            return Err(Error::NonConvergence {
                method: "target cloud rejection fill",
                iterations: k,
                residual: (count - pts.len()) as f64,
            });
        }
        let q = r_sequence(dim, k, &offset);
        k += 1;
        let y: Vec<f64> = (0..dim).map(|d| mask.origin[d] + q[d] * extent[d]).collect();
        if let Some(b) = mask.locate(&y) {
            if mask.occupied[b] {
                pts.push(y);
            }
        }
    }
    let scale = (volume / mask.volume()).powf(1.0 / dim as f64);
    let centroid: Vec<f64> = (0..dim).map(|d| pts.iter().map(|p| p[d]).sum::<f64>() / count as f64).collect();
    Ok(pts
        .into_iter()
        .map(|p| (0..dim).map(|d| centroid[d] + scale * (p[d] - centroid[d])).collect())
        .collect())
}

// ---------------------------------------------------------------------------
// Measure-preserving approximation

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstantKind {
    /// `10(d/λ^{1/n})(1 + 1/λ)`, fully explicit.
    Explicit,
    /// `(d/λ^{1/n})ᵖ(1 + λ^{−p}(Λ/λ)^{2p−2})`; the overall prefactor is not
    /// explicit, so the comparison is informational.
    Empirical,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Uniformity {
    pub bins: usize,
    /// Largest `|count − expected| / √expected` over bins with mass.
    pub max_dev: f64,
    /// Fraction of bins with `|count − expected| ≤ 4√expected`.
    pub fraction_within: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RearrangeParams {
    pub p: f64,
    #[serde(rename = "N")]
    pub n_points: usize,
    pub d: f64,
    pub lambda: f64,
    #[serde(rename = "Lambda")]
    pub big_lambda: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RearrangeResult {
    /// `s(x_i) = T(u(x_i))` on the nodes of `u`.
    pub s: GridField,
    pub lhs: f64,
    pub rhs: f64,
    pub constant: f64,
    pub constant_kind: ConstantKind,
    pub ratio: f64,
    /// `Some` for the explicit constant; `None` when the bound is vacuous
    /// or only empirical.
    pub satisfied: Option<bool>,
    pub vacuous: bool,
    pub params: RearrangeParams,
    pub uniformity: Uniformity,
    pub plan_cost: f64,
    pub min_reduced_cost: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RearrangeReport {
    pub p: f64,
    #[serde(rename = "N")]
    pub n_points: usize,
    pub d: f64,
    pub lambda: f64,
    #[serde(rename = "Lambda")]
    pub big_lambda: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub constant: f64,
    pub constant_kind: ConstantKind,
    pub ratio: f64,
    pub satisfied: Option<bool>,
    pub vacuous: bool,
    pub uniformity: Uniformity,
    pub min_reduced_cost: f64,
}

impl RearrangeResult {
    pub fn report(&self) -> RearrangeReport {
        RearrangeReport {
            p: self.params.p,
            n_points: self.params.n_points,
            d: self.params.d,
            lambda: self.params.lambda,
            big_lambda: self.params.big_lambda,
            lhs: self.lhs,
            rhs: self.rhs,
            constant: self.constant,
            constant_kind: self.constant_kind,
            ratio: self.ratio,
            satisfied: self.satisfied,
            vacuous: self.vacuous,
            uniformity: self.uniformity.clone(),
            min_reduced_cost: self.min_reduced_cost,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RearrangeOptions {
    pub seed: u64,
    /// Required lower bound on the measured determinant.
    pub min_det: f64,
    pub entropic: bool,
}

impl Default for RearrangeOptions {
    fn default() -> Self {
        RearrangeOptions {
            seed: 0,
            min_det: 0.0,
            entropic: false,
        }
    }
}

/// `10(d/λ^{1/n})(1 + 1/λ)`.
pub fn constant_p1(n: usize, d: f64, lambda: f64) -> f64 {
    10.0 * (d / lambda.powf(1.0 / n as f64)) * (1.0 + 1.0 / lambda)
}

/// `(d/λ^{1/n})ᵖ(1 + λ^{−p}(Λ/λ)^{2p−2})`.
pub fn constant_form_p(n: usize, p: f64, d: f64, lambda: f64, big_lambda: f64) -> f64 {
    (d / lambda.powf(1.0 / n as f64)).powf(p) * (1.0 + lambda.powf(-p) * (big_lambda / lambda).powf(2.0 * p - 2.0))
}

/// Projects `u` onto measure-preserving maps through a balanced assignment
/// between the node images and a uniform cloud on `u(U)` of volume `|U|`.
pub fn measure_preserving_approx(
    u: &GridField,
    spec: Option<&MapSpec>,
    p: f64,
    options: &RearrangeOptions,
) -> Result<RearrangeResult> {
    rearrange_impl(u, spec, p, options, None)
}

/// Same as [`measure_preserving_approx`] with a caller-supplied target
/// cloud, one point per node, standing for the uniform measure on `u(U)`.
/// Boundary-value problems pass the node images of their volume-preserving
/// boundary map, so that an exact minimizer is matched to itself.
pub fn measure_preserving_approx_onto(
    u: &GridField,
    spec: Option<&MapSpec>,
    p: f64,
    options: &RearrangeOptions,
    target: Vec<Vec<f64>>,
) -> Result<RearrangeResult> {
    if target.len() != u.grid.len() {
        return Err(Error::InvalidInput(format!(
            "target has {} points for {} nodes",
            target.len(),
            u.grid.len()
        )));
    }
    rearrange_impl(u, spec, p, options, Some(target))
}

fn rearrange_impl(
    u: &GridField,
    spec: Option<&MapSpec>,
    p: f64,
    options: &RearrangeOptions,
    target: Option<Vec<Vec<f64>>>,
) -> Result<RearrangeResult> {
    if let Some(spec) = spec {
        if !spec.injective() {
            return Err(Error::Precondition(format!("map family {spec:?} is not injective")));
        }
    }
    let dim = u.dim();
    let jac = u.jacobian()?;
    let floor = options.min_det.max(0.0);
    let bad: Vec<usize> = jac
        .det
        .iter()
        .enumerate()
        .filter(|(_, &d)| !(d > floor))
        .map(|(i, _)| i)
        .collect();
    if !bad.is_empty() {
        let shown: Vec<String> = bad
            .iter()
            .take(10)
            .map(|&i| format!("{:?} (det {:.4})", u.grid.unravel(i), jac.det[i]))
            .collect();
        return Err(Error::Precondition(format!(
            "{} nodes have det ≤ {floor}: {}{}",
            bad.len(),
            shown.join(", "),
            if bad.len() > 10 { ", …" } else { "" }
        )));
    }
    let (lambda, big_lambda) = jac.det_bounds();
    let geometry = image_geometry(u)?;
    let d = spec
        .and_then(|s| s.analytic_diameter(dim).filter(|_| u.grid.origin.iter().all(|o| *o == 0.0)))
        .unwrap_or_else(|| geometry.diameter + u.grid.spacing.iter().map(|h| h * h).sum::<f64>().sqrt());

    let n_points = u.grid.len();
    let source: Vec<Vec<f64>> = (0..n_points).map(|i| u.value(i).to_vec()).collect();
    let target = match target {
        Some(t) => t,
        None => target_cloud(&geometry.mask, n_points, u.grid.volume(), options.seed)?,
    };
    let plan = if options.entropic {
        solve_entropic(&source, &target, p)?
    } else {
        solve_assignment(&source, &target, p)?
    };
    let mut s_values = Vec::with_capacity(n_points * dim);
    for i in 0..n_points {
        s_values.extend_from_slice(&target[plan.assignment[i]]);
    }
    let s = GridField::new(u.grid.clone(), dim, s_values, None)?;

    // uniform node weights |U|/N
    let w = u.grid.volume() / n_points as f64;
    let lhs: f64 = (0..n_points)
        .map(|i| w * pcost(&source[i], s.value(i), p))
        .sum();
    let rhs: f64 = jac.det.iter().map(|d| w * (1.0 - d).abs().powf(p)).sum();
    let (constant, kind) = if p == 1.0 {
        (constant_p1(dim, d, lambda), ConstantKind::Explicit)
    } else {
        (constant_form_p(dim, p, d, lambda, big_lambda), ConstantKind::Empirical)
    };
    let vacuous = rhs == 0.0;
    let ratio = if vacuous { 0.0 } else { lhs / rhs };
    let satisfied = (!vacuous && kind == ConstantKind::Explicit).then(|| ratio <= constant);
    let uniformity = uniformity(&geometry.mask, &target, &plan.assignment);
    Ok(RearrangeResult {
        s,
        lhs,
        rhs,
        constant,
        constant_kind: kind,
        ratio,
        satisfied,
        vacuous,
        params: RearrangeParams {
            p,
            n_points,
            d,
            lambda,
            big_lambda,
        },
        uniformity,
        plan_cost: plan.cost,
        min_reduced_cost: plan.min_reduced_cost,
    })
}

/// Bins `s(x_i)` on `k` bins per axis over the image box; the expected count
/// of a bin is proportional to the image area it contains.
fn uniformity(mask: &Occupancy, target: &[Vec<f64>], assignment: &[usize]) -> Uniformity {
    let dim = mask.shape.len();
    let n = assignment.len();
    let k = ((n as f64 / 16.0).powf(1.0 / dim as f64).round() as usize).max(1);
    let bins = k.pow(dim as u32);
    let extent: Vec<f64> = mask.shape.iter().map(|&s| s as f64 * mask.bin).collect();
    let bin_of = |y: &[f64]| -> usize {
        (0..dim).fold(0, |acc, d| {
            let t = (((y[d] - mask.origin[d]) / extent[d] * k as f64).floor() as isize).clamp(0, k as isize - 1);
            acc * k + t as usize
        })
    };
    let mut area = vec![0usize; bins];
    for (flat, &occ) in mask.occupied.iter().enumerate() {
        if occ {
            area[bin_of(&mask.center(flat))] += 1;
        }
    }
    let total_area: usize = area.iter().sum();
    let mut counts = vec![0usize; bins];
    for &j in assignment {
        counts[bin_of(&target[j])] += 1;
    }
    let mut within = 0;
    let mut considered = 0;
    let mut max_dev: f64 = 0.0;
    for b in 0..bins {
        let expected = n as f64 * area[b] as f64 / total_area as f64;
        if expected <= 0.0 {
            continue;
        }
        considered += 1;
        let dev = (counts[b] as f64 - expected).abs() / expected.sqrt();
        max_dev = max_dev.max(dev);
        if dev <= 4.0 {
            within += 1;
        }
    }
    let fraction_within = if considered > 0 { within as f64 / considered as f64 } else { 1.0 };
    Uniformity {
        bins,
        max_dev,
        fraction_within,
        passed: fraction_within >= 0.95,
    }
}

// ---------------------------------------------------------------------------
// Cube permutations

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CubePermutation {
    pub k: usize,
    /// `sigma[i]` is the cube whose centre receives cube `i`.
    pub sigma: Vec<usize>,
    /// `∫|s − w|` for `w(x) = x − x_i + x_{σ(i)}`.
    pub l1_gap: f64,
    /// Swaps of cubes adjacent in boustrophedon order whose composition,
    /// applied left to right to the positions, realises `sigma`.
    pub transpositions: Vec<(usize, usize)>,
}

/// Boustrophedon (snake) position of cube `idx` on a `k`-per-axis lattice.
fn snake_position(idx: &[usize], k: usize) -> usize {
    let mut pos = 0;
    let mut flip = false;
    for &i in idx {
        let i = if flip { k - 1 - i } else { i };
        pos = pos * k + i;
        flip = i % 2 == 1;
    }
    pos
}

/// Cube-permutation approximant of a measure-preserving field on the unit cube.
pub fn cube_permutation(s: &GridField, k: usize) -> Result<CubePermutation> {
    if k == 0 {
        return Err(Error::InvalidInput("need at least one cube per axis".into()));
    }
    let dim = s.dim();
    if s.components != dim {
        return Err(Error::InvalidInput("cube permutation needs a deformation field".into()));
    }
    let g = &s.grid;
    let cubes = k.pow(dim as u32);
    let weights = g.weights();
    let side: Vec<f64> = (0..dim).map(|a| g.extent(a) / k as f64).collect();
    let cube_of = |x: &[f64]| -> Vec<usize> {
        (0..dim)
            .map(|a| (((x[a] - g.origin[a]) / side[a]).floor().max(0.0) as usize).min(k - 1))
            .collect()
    };
    let ravel = |idx: &[usize]| idx.iter().fold(0, |acc, &i| acc * k + i);
    let center = |c: usize| -> Vec<f64> {
        let mut rest = c;
        let mut idx = vec![0; dim];
        for a in (0..dim).rev() {
            idx[a] = rest % k;
            rest /= k;
        }
        (0..dim).map(|a| g.origin[a] + (idx[a] as f64 + 0.5) * side[a]).collect()
    };

    let mut mass = vec![0.0; cubes];
    let mut sum = vec![vec![0.0; dim]; cubes];
    let nodes = g.nodes();
    let node_cube: Vec<usize> = nodes.iter().map(|x| ravel(&cube_of(x))).collect();
    for i in 0..g.len() {
        let c = node_cube[i];
        mass[c] += weights[i];
        for a in 0..dim {
            sum[c][a] += weights[i] * s.value(i)[a];
        }
    }
    if mass.iter().any(|m| *m <= 0.0) {
        return Err(Error::InvalidInput("grid too coarse: some cube contains no nodes".into()));
    }
    let centroids: Vec<Vec<f64>> = (0..cubes).map(|c| sum[c].iter().map(|v| v / mass[c]).collect()).collect();
    let centers: Vec<Vec<f64>> = (0..cubes).map(center).collect();
    let plan = solve_assignment(&centroids, &centers, 2.0)?;
    let sigma = plan.assignment;

    let mut gap = 0.0;
    for i in 0..g.len() {
        let c = node_cube[i];
        let (xc, xt) = (&centers[c], &centers[sigma[c]]);
        let d: f64 = (0..dim)
            .map(|a| (s.value(i)[a] - (nodes[i][a] - xc[a] + xt[a])).powi(2))
            .sum::<f64>()
            .sqrt();
        gap += weights[i] * d;
    }

    // Bubble sort in snake order: every swap exchanges adjacent cubes.
    let mut by_pos = vec![0usize; cubes];
    for c in 0..cubes {
        let mut rest = c;
        let mut idx = vec![0; dim];
        for a in (0..dim).rev() {
            idx[a] = rest % k;
            rest /= k;
        }
        by_pos[snake_position(&idx, k)] = c;
    }
    let mut pos_of = vec![0usize; cubes];
    for (p, &c) in by_pos.iter().enumerate() {
        pos_of[c] = p;
    }
    // arrangement[p] = destination position of the cube currently at p
    let mut arrangement: Vec<usize> = (0..cubes).map(|p| pos_of[sigma[by_pos[p]]]).collect();
    let mut swaps = Vec::new();
    let mut changed = true;
    while changed {
        changed = false;
        for p in 0..cubes.saturating_sub(1) {
            if arrangement[p] > arrangement[p + 1] {
                arrangement.swap(p, p + 1);
                swaps.push((p, p + 1));
                changed = true;
            }
        }
    }
    // each swap moves the two occupants of adjacent slots, named by their home cube
    let transpositions = swaps.iter().map(|&(a, b)| (by_pos[a], by_pos[b])).collect();

    Ok(CubePermutation {
        k,
        sigma,
        l1_gap: gap,
        transpositions,
    })
}

/// Applies transpositions (cube labels) in order to the identity placement and
/// returns where each cube ends up; used to check a factorisation.
pub fn compose_transpositions(cubes: usize, transpositions: &[(usize, usize)]) -> Vec<usize> {
    // slot[c] = cube currently sitting in c's home slot
    let mut slot: Vec<usize> = (0..cubes).collect();
    for &(a, b) in transpositions {
        slot.swap(a, b);
    }
    let mut dest = vec![0; cubes];
    for (home, &cube) in slot.iter().enumerate() {
        dest[cube] = home;
    }
    dest
}

// ---------------------------------------------------------------------------
// Hamiltonian flows

/// `γ(x) = ½ xᵀ H x` on `ℝ^{2k}`; the flow is `ẋ = (Dγ·J)ᵀ = −J H x`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadraticHamiltonian {
    pub hessian: Matrix,
}

impl QuadraticHamiltonian {
    pub fn new(hessian: Matrix) -> Result<QuadraticHamiltonian> {
        Matrix::symplectic_j(hessian.n())?;
        Ok(QuadraticHamiltonian {
            hessian: hessian.sym(),
        })
    }

    /// `γ = ½Σ(x_k² + x_{k+n}²)`, whose flow is a clockwise rotation in each
    /// `(x_k, x_{k+n})` plane.
    pub fn rotation(dim: usize) -> Result<QuadraticHamiltonian> {
        QuadraticHamiltonian::new(Matrix::identity(dim))
    }

    pub fn energy(&self, x: &[f64]) -> f64 {
        0.5 * x.iter().zip(self.hessian.mul_vec(x)).map(|(a, b)| a * b).sum::<f64>()
    }

    /// Generator `M = −J H` of the linear flow.
    pub fn generator(&self) -> Matrix {
        -(Matrix::symplectic_j(self.hessian.n()).expect("validated") * self.hessian)
    }

    fn is_separable(&self) -> bool {
        let n = self.hessian.n() / 2;
        (0..n).all(|i| (n..2 * n).all(|j| self.hessian.get(i, j) == 0.0))
    }
}

fn step_count(t: f64, dt: f64) -> Result<usize> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidInput(format!("dt = {dt} must be positive")));
    }
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::InvalidInput(format!("t = {t} must be finite and non-negative")));
    }
    Ok(((t / dt).round() as usize).max(usize::from(t > 0.0)))
}

/// One-step matrix of the integrator: leapfrog (kick–drift–kick) for
/// separable `γ`, implicit midpoint otherwise. Both are symplectic.
fn step_matrix(gamma: &QuadraticHamiltonian, h: f64) -> Result<Matrix> {
    let dim = gamma.hessian.n();
    let n = dim / 2;
    if gamma.is_separable() {
        // q' = B p, p' = −A q
        let a = Matrix::from_fn(dim, |i, j| if i >= n && j < n { -gamma.hessian.get(i - n, j) } else { 0.0 });
        let b = Matrix::from_fn(dim, |i, j| if i < n && j >= n { gamma.hessian.get(i + n, j) } else { 0.0 });
        let id = Matrix::identity(dim);
        let kick = id + a.scale(0.5 * h);
        let drift = id + b.scale(h);
        Ok(kick * drift * kick)
    } else {
        let m = gamma.generator();
        let id = Matrix::identity(dim);
        Ok((id - m.scale(0.5 * h)).inverse()? * (id + m.scale(0.5 * h)))
    }
}

/// Flow matrix `Φ_t` approximated with steps of size about `dt`.
pub fn flow_matrix(gamma: &QuadraticHamiltonian, t: f64, dt: f64) -> Result<Matrix> {
    let steps = step_count(t, dt)?;
    let dim = gamma.hessian.n();
    if steps == 0 {
        return Ok(Matrix::identity(dim));
    }
    let one = step_matrix(gamma, t / steps as f64)?;
    let mut out = Matrix::identity(dim);
    for _ in 0..steps {
        out = one * out;
    }
    Ok(out)
}

/// `Φ_t(x0)` for the linear Hamiltonian flow.
pub fn hamiltonian_flow(gamma: &QuadraticHamiltonian, x0: &[f64], t: f64, dt: f64) -> Result<Vec<f64>> {
    if x0.len() != gamma.hessian.n() {
        return Err(Error::InvalidInput("point dimension differs from the Hamiltonian".into()));
    }
    let steps = step_count(t, dt)?;
    if steps == 0 {
        return Ok(x0.to_vec());
    }
    let one = step_matrix(gamma, t / steps as f64)?;
    let mut x = x0.to_vec();
    for _ in 0..steps {
        x = one.mul_vec(&x);
    }
    Ok(x)
}
