//! Semi-discrete construction: adjust focal parameters until the mass traced
//! onto every atom matches its weight.
//!
//! The source is discretized by the midpoint rule on a tensor grid, and each
//! cell's mass goes wholly to the piece active at its center. For a single
//! atom `j`, the mass it receives as a function of `b_j` (others held fixed)
//! is a step function whose jumps sit at the per-cell thresholds
//! `b*(x) = c((x, u_others(x)), Y_j)`. Sorting the thresholds gives the exact
//! step function, so every single-atom update is solved exactly rather than
//! by bisection. Once every atom receives mass, damped Newton steps on all
//! parameters at once move mass across many interfaces per iteration; the
//! single-atom updates take over when Newton stops making progress.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{map_range, map_slice, Execution};
use crate::geometry::{tensor_product, Cylinder, OpticalConfig, Omega, SpacePoint, SurfaceMode};
use crate::optics::admissible_region_check;
use crate::surface::{Evaluation, Piece, PiecewiseSurface};
use crate::target::DiscreteAtoms;

/// Midpoint quadrature of a source density `f` over `Omega`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceDensity {
    pub omega: Omega,
    pub per_axis: usize,
    pub widths: Vec<f64>,
    pub centers: Vec<Vec<f64>>,
    pub masses: Vec<f64>,
    /// Tensor multi-index of each cell.
    pub multi_index: Vec<Vec<usize>>,
    /// Cell number for every tensor multi-index (flattened, first axis slowest).
    lookup: Vec<Option<usize>>,
}

impl SourceDensity {
    pub fn new(omega: Omega, per_axis: usize, f: impl Fn(&[f64]) -> f64) -> Result<Self> {
        omega.validate()?;
        if per_axis == 0 {
            return Err(Error::InvalidInput("quadrature grid needs at least one cell per axis".into()));
        }
        let (lo, hi) = omega.bounds();
        let n = lo.len();
        let widths: Vec<f64> = lo.iter().zip(&hi).map(|(a, b)| (b - a) / per_axis as f64).collect();
        let axes: Vec<Vec<f64>> = (0..n).map(|_| (0..per_axis).map(|i| i as f64).collect()).collect();
        let cell_volume: f64 = widths.iter().product();
        let mut centers = Vec::new();
        let mut masses = Vec::new();
        let mut multi_index = Vec::new();
        let mut lookup = vec![None; per_axis.pow(n as u32)];
        for (flat, idx) in tensor_product(&axes).into_iter().enumerate() {
            let center: Vec<f64> = (0..n).map(|k| lo[k] + widths[k] * (idx[k] + 0.5)).collect();
            if !omega.contains(&center) {
                continue;
            }
            let value = f(&center);
            if !(value >= 0.0 && value.is_finite()) {
                return Err(Error::InvalidInput(format!("source density must be nonnegative, got {value} at {center:?}")));
            }
            lookup[flat] = Some(centers.len());
            multi_index.push(idx.iter().map(|v| *v as usize).collect());
            centers.push(center);
            masses.push(value * cell_volume);
        }
        if masses.iter().sum::<f64>() <= 0.0 {
            return Err(Error::InvalidInput("source density has zero total mass".into()));
        }
        Ok(Self { omega, per_axis, widths, centers, masses, multi_index, lookup })
    }

    pub fn uniform(omega: Omega, per_axis: usize, value: f64) -> Result<Self> {
        Self::new(omega, per_axis, |_| value)
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.widths.len()
    }

    pub fn total_mass(&self) -> f64 {
        self.masses.iter().sum()
    }

    /// The `2^n` corners of a cell.
    pub fn cell_corners(&self, k: usize) -> Vec<Vec<f64>> {
        let c = &self.centers[k];
        let axes: Vec<Vec<f64>> = c.iter().zip(&self.widths).map(|(x, w)| vec![x - 0.5 * w, x + 0.5 * w]).collect();
        tensor_product(&axes)
    }

    /// Neighboring cell one step up along `axis`, if present.
    pub fn neighbor(&self, k: usize, axis: usize) -> Option<usize> {
        let mut idx = self.multi_index[k].clone();
        idx[axis] += 1;
        if idx[axis] >= self.per_axis {
            return None;
        }
        let flat = idx.iter().fold(0, |acc, i| acc * self.per_axis + i);
        self.lookup[flat]
    }
}

/// Evaluate the surface at every cell center.
pub fn assignment(surface: &PiecewiseSurface, source: &SourceDensity, exec: Execution) -> Result<Vec<Evaluation>> {
    map_slice(exec, &source.centers, |x| surface.evaluate(x)).into_iter().collect()
}

/// Mass `mu(T_u(Y_i))` traced onto each piece, ties to the lowest index.
pub fn tracing_measure(surface: &PiecewiseSurface, source: &SourceDensity, exec: Execution) -> Result<Vec<f64>> {
    let evals = assignment(surface, source, exec)?;
    let mut out = vec![0.0; surface.len()];
    for (e, m) in evals.iter().zip(&source.masses) {
        out[e.active_index] += m;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub mode: SurfaceMode,
    /// Stop when every residual is within `tol_mass * mu(Omega)`.
    pub tol_mass: f64,
    pub max_outer: usize,
    /// Height at the center of `Omega` through which piece 0 is anchored;
    /// defaults to half the cylinder height.
    pub anchor_height: Option<f64>,
    /// Take damped Newton steps on all parameters once every atom has mass;
    /// when off, only exact single-atom updates are used.
    #[serde(default = "enabled")]
    pub newton: bool,
    #[serde(skip)]
    pub exec: Execution,
}

fn enabled() -> bool {
    true
}

impl SolverConfig {
    pub fn new(mode: SurfaceMode) -> Self {
        Self { mode, tol_mass: 1e-3, max_outer: 10_000, anchor_height: None, newton: true, exec: Execution::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub b: Vec<f64>,
    /// `mu(T_u(Y_i)) - sigma_i`.
    pub residuals: Vec<f64>,
    pub max_residual: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Largest absolute residual before each single-atom update.
    pub residual_history: Vec<f64>,
    pub height_min: f64,
    pub height_max: f64,
    /// `0 < u < M` at every cell center.
    pub heights_in_cylinder: bool,
}

/// Rescale atom weights so that they sum to the source mass.
pub fn normalize_weights(atoms: &DiscreteAtoms, total: f64) -> DiscreteAtoms {
    let s = atoms.total_weight();
    DiscreteAtoms { points: atoms.points.clone(), weights: atoms.weights.iter().map(|w| w * total / s).collect() }
}

/// Focal parameter of the piece with focus `y` through `(x, t)`.
fn parameter_through(mode: SurfaceMode, kappa: f64, x: &[f64], t: f64, y: &SpacePoint) -> f64 {
    let d2: f64 = x.iter().zip(y.horizontal.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() + (t - y.height).powi(2);
    let d = d2.sqrt();
    if mode.is_refractor() {
        d + kappa * (t - y.height)
    } else {
        d + t - y.height
    }
}

/// `true` when the atom's mass grows with its focal parameter.
fn mass_increases_with_b(mode: SurfaceMode) -> bool {
    matches!(mode, SurfaceMode::RefractorAbove | SurfaceMode::ReflectorBelow)
}

const NONE: usize = usize::MAX;

/// Piece heights per cell, kept as scores (lower wins) with the best and
/// runner-up index of every cell.
struct Envelope {
    takes_min: bool,
    rows: Vec<Vec<f64>>,
    best: Vec<usize>,
    second: Vec<usize>,
}

impl Envelope {
    fn new(takes_min: bool, n_pieces: usize, n_cells: usize) -> Self {
        Self {
            takes_min,
            rows: vec![vec![f64::INFINITY; n_cells]; n_pieces],
            best: vec![0; n_cells],
            second: vec![if n_pieces > 1 { 1 } else { NONE }; n_cells],
        }
    }

    fn score(&self, h: f64) -> f64 {
        if self.takes_min {
            h
        } else {
            -h
        }
    }

    fn beats(&self, i: usize, j: usize, c: usize) -> bool {
        j == NONE || (self.rows[i][c], i) < (self.rows[j][c], j)
    }

    fn rescan(&mut self, c: usize) {
        let (mut b, mut s) = (NONE, NONE);
        for i in 0..self.rows.len() {
            if self.beats(i, b, c) {
                s = b;
                b = i;
            } else if self.beats(i, s, c) {
                s = i;
            }
        }
        self.best[c] = b;
        self.second[c] = s;
    }

    fn set_row(&mut self, j: usize, heights: Vec<f64>) {
        let scores: Vec<f64> = heights.iter().map(|h| if h.is_nan() { f64::INFINITY } else { self.score(*h) }).collect();
        self.rows[j] = scores;
        for c in 0..self.best.len() {
            if self.best[c] == j || self.second[c] == j {
                self.rescan(c);
            } else if self.beats(j, self.best[c], c) {
                self.second[c] = self.best[c];
                self.best[c] = j;
            } else if self.beats(j, self.second[c], c) {
                self.second[c] = j;
            }
        }
    }

    /// Envelope height of all pieces except `j`; `None` if nothing else is defined.
    fn others(&self, j: usize, c: usize) -> Option<f64> {
        let k = if self.best[c] != j { self.best[c] } else { self.second[c] };
        if k == NONE || !self.rows[k][c].is_finite() {
            return None;
        }
        let s = self.rows[k][c];
        Some(if self.takes_min { s } else { -s })
    }

    fn masses(&self, cell_mass: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.rows.len()];
        for (c, m) in cell_mass.iter().enumerate() {
            out[self.best[c]] += m;
        }
        out
    }
}

/// Exact single-atom update: the focal parameter whose mass plateau is
/// nearest `target`, taken at the plateau's midpoint, and the largest mass
/// reachable inside the parameter bracket.
fn best_plateau(thresholds: &[f64], masses: &[f64], increasing: bool, lo: f64, hi: f64, target: f64) -> (f64, f64, f64) {
    // Work in a variable w where the atom wins a cell iff w > threshold.
    let (wlo, whi) = if increasing { (lo, hi) } else { (-hi, -lo) };
    let mut order: Vec<(f64, f64)> = thresholds
        .iter()
        .zip(masses)
        .map(|(t, m)| (if increasing { *t } else { -*t }, *m))
        .collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut best: Option<(f64, f64, f64)> = None; // (distance, w, mass)
    let mut reach = 0.0f64;
    let mut cum = 0.0;
    for k in 0..=order.len() {
        let left = if k == 0 { f64::NEG_INFINITY } else { order[k - 1].0 };
        let right = if k == order.len() { f64::INFINITY } else { order[k].0 };
        if k > 0 {
            cum += order[k - 1].1;
        }
        let a = left.max(wlo);
        let b = right.min(whi);
        if left < right && a < b {
            reach = reach.max(cum);
            let dist = (cum - target).abs();
            if best.map_or(true, |(d, _, _)| dist < d) {
                best = Some((dist, 0.5 * (a + b), cum));
            }
        }
    }
    let (_, w, mass) = best.unwrap_or((0.0, 0.5 * (wlo + whi), 0.0));
    (if increasing { w } else { -w }, mass, reach)
}

/// Step halvings tried before a Newton direction is abandoned.
const NEWTON_HALVINGS: usize = 12;

/// Newton direction for the `active` parameters (piece 0 stays anchored,
/// so it is never active); the other entries are zero. Moving `b_j`
/// shifts each interface of piece `j` along grid axis `a` by
/// `(d phi_j / db) / |d_a (phi_i - phi_j)|`, carrying density times face
/// area per unit shift; summing over grid faces gives the Jacobian.
fn newton_direction(
    env: &Envelope,
    source: &SourceDensity,
    surface: &PiecewiseSurface,
    residuals: &[f64],
    active: &[usize],
) -> Option<DVector<f64>> {
    let n = surface.len();
    let sign = if surface.mode.takes_min() { -1.0 } else { 1.0 };
    let cell_volume: f64 = source.widths.iter().product();
    let mut jac = DMatrix::<f64>::zeros(n, n);
    for k in 0..source.len() {
        let i = env.best[k];
        for axis in 0..source.dim() {
            let Some(m) = source.neighbor(k, axis) else { continue };
            let j = env.best[m];
            if i == j {
                continue;
            }
            let dk = env.rows[i][k] - env.rows[j][k];
            let dm = env.rows[i][m] - env.rows[j][m];
            if !(dk.is_finite() && dm.is_finite()) || dk == dm {
                continue;
            }
            let t = (dk / (dk - dm)).clamp(0.0, 1.0);
            let p: Vec<f64> = source.centers[k].iter().zip(&source.centers[m]).map(|(a, b)| a + t * (b - a)).collect();
            let (Ok(ri), Ok(rj)) = (surface.piece_b_derivative(i, &p), surface.piece_b_derivative(j, &p)) else {
                continue;
            };
            let density = 0.5 * (source.masses[k] + source.masses[m]) / cell_volume;
            let slope = ((dm - dk) / source.widths[axis]).abs();
            let g = density * (cell_volume / source.widths[axis]) / slope;
            let (ai, aj) = (sign * ri, sign * rj);
            jac[(i, i)] += g * ai;
            jac[(i, j)] -= g * aj;
            jac[(j, j)] += g * aj;
            jac[(j, i)] -= g * ai;
        }
    }
    let reduced = DMatrix::from_fn(active.len(), active.len(), |r, c| jac[(active[r], active[c])]);
    let rhs = DVector::from_iterator(active.len(), active.iter().map(|&j| -residuals[j]));
    let solved = reduced.lu().solve(&rhs)?;
    if solved.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let mut step = DVector::zeros(n);
    for (&j, v) in active.iter().zip(solved.iter()) {
        step[j] = *v;
    }
    Some(step)
}

/// Build the piecewise surface that sends mass `sigma_i` to every atom.
pub fn solve_semidiscrete(
    source: &SourceDensity,
    atoms: &DiscreteAtoms,
    cylinder: &Cylinder,
    optics: &OpticalConfig,
    cfg: &SolverConfig,
) -> Result<(PiecewiseSurface, SolveReport)> {
    let mode = cfg.mode;
    let kappa = optics.kappa;
    let n_atoms = atoms.len();
    let total = source.total_mass();
    if (atoms.total_weight() - total).abs() > 1e-9 * total {
        return Err(Error::InvalidInput(format!(
            "atom weights sum to {} but the source carries {}; normalize first",
            atoms.total_weight(),
            total
        )));
    }
    if cylinder.dim() != source.dim() || atoms.points[0].dim() != source.dim() {
        return Err(Error::InvalidInput("source, cylinder and atoms must share the dimension".into()));
    }

    // Parameter bracket per atom: outside it the piece leaves the cylinder.
    let probe = cylinder.verification_points(8);
    let far: Vec<f64> = atoms.points.iter().map(|y| cylinder.omega.max_dist_from(y.horizontal.as_slice())).collect();
    let mut brackets = Vec::with_capacity(n_atoms);
    for (j, y) in atoms.points.iter().enumerate() {
        let adm = admissible_region_check(y, cylinder, optics, mode.optics(), 8);
        if !adm.admissible {
            return Err(Error::Infeasible { atom: j, reason: format!("outside the admissible region (margin {:e})", adm.margin) });
        }
        let values: Vec<f64> =
            probe.iter().map(|x| parameter_through(mode, kappa, x.horizontal.as_slice(), x.height, y)).collect();
        let mut lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if mode.is_refractor() {
            lo = lo.max((1.0 - kappa * kappa).sqrt() * far[j] * (1.0 + 1e-9));
        }
        brackets.push((lo, hi));
    }

    let surface_with = |b: &[f64]| -> Result<PiecewiseSurface> {
        PiecewiseSurface::new(
            mode,
            atoms.points.iter().zip(b).map(|(y, &b)| Piece { focus: y.clone(), b }).collect(),
            kappa,
        )
    };
    let piece_row = |y: &SpacePoint, b: f64| -> Vec<f64> {
        let single = PiecewiseSurface { mode, pieces: vec![Piece { focus: y.clone(), b }], kappa };
        map_slice(cfg.exec, &source.centers, |x| single.piece_height(0, x).unwrap_or(f64::NAN))
    };

    let center = cylinder.omega.center();
    let anchor = cfg.anchor_height.unwrap_or(0.5 * cylinder.height_max);
    let mut b = vec![0.0; n_atoms];
    b[0] = parameter_through(mode, kappa, &center, anchor, &atoms.points[0]);
    let mut env = Envelope::new(mode.takes_min(), n_atoms, source.len());
    env.set_row(0, piece_row(&atoms.points[0], b[0]));

    let increasing = mass_increases_with_b(mode);
    let update = |env: &mut Envelope, j: usize, target: f64| -> (f64, f64, f64) {
        let y = &atoms.points[j];
        let thresholds: Vec<f64> = map_range(cfg.exec, source.len(), |c| match env.others(j, c) {
            Some(t) => parameter_through(mode, kappa, &source.centers[c], t, y),
            None => {
                if increasing {
                    f64::NEG_INFINITY
                } else {
                    f64::INFINITY
                }
            }
        });
        let (lo, hi) = brackets[j];
        best_plateau(&thresholds, &source.masses, increasing, lo, hi, target)
    };
    let envelope_for = |b: &[f64]| -> Envelope {
        let mut env = Envelope::new(mode.takes_min(), n_atoms, source.len());
        for (j, y) in atoms.points.iter().enumerate() {
            env.set_row(j, piece_row(y, b[j]));
        }
        env
    };
    let worst_of = |masses: &[f64]| masses.iter().zip(&atoms.weights).fold(0.0f64, |a, (m, s)| a.max((m - s).abs()));

    for j in 1..n_atoms {
        let (bj, _, _) = update(&mut env, j, atoms.weights[j]);
        b[j] = bj;
        env.set_row(j, piece_row(&atoms.points[j], bj));
    }

    let tol = cfg.tol_mass * total;
    let mut history = Vec::new();
    let mut iterations = 0;
    let mut stalled = 0;
    let mut newton_wait = 0;
    let mut converged = false;
    let mut masses = env.masses(&source.masses);
    loop {
        let residuals: Vec<f64> = masses.iter().zip(&atoms.weights).map(|(m, s)| m - s).collect();
        let worst = worst_of(&masses);
        history.push(worst);
        if worst <= tol {
            converged = true;
            break;
        }
        if iterations >= cfg.max_outer || n_atoms == 1 || stalled > n_atoms {
            break;
        }
        iterations += 1;

        let active: Vec<usize> = (1..n_atoms).filter(|&j| masses[j] > 0.0).collect();
        if cfg.newton && newton_wait == 0 && !active.is_empty() {
            let current = surface_with(&b)?;
            let mut accepted = false;
            let energy = residuals.iter().map(|r| r * r).sum::<f64>();
            if let Some(step) = newton_direction(&env, source, &current, &residuals, &active) {
                let mut tau = 1.0;
                for _ in 0..NEWTON_HALVINGS {
                    let trial: Vec<f64> =
                        b.iter().enumerate().map(|(j, &bj)| (bj + tau * step[j]).clamp(brackets[j].0, brackets[j].1)).collect();
                    let trial_env = envelope_for(&trial);
                    let trial_masses = trial_env.masses(&source.masses);
                    let keeps_support = active.iter().all(|&j| trial_masses[j] > 0.0) && trial_masses[0] > 0.0;
                    let trial_energy =
                        trial_masses.iter().zip(&atoms.weights).map(|(m, s)| (m - s) * (m - s)).sum::<f64>();
                    if keeps_support && trial_energy < energy {
                        b = trial;
                        env = trial_env;
                        masses = trial_masses;
                        accepted = true;
                        break;
                    }
                    tau *= 0.5;
                }
            }
            if accepted {
                stalled = 0;
                continue;
            }
            newton_wait = n_atoms;
        }
        newton_wait = newton_wait.saturating_sub(1);

        let most_negative = (1..n_atoms).min_by(|&a, &c| residuals[a].total_cmp(&residuals[c])).unwrap();
        let j = if residuals[most_negative] < -0.5 * tol {
            most_negative
        } else {
            (1..n_atoms).max_by(|&a, &c| residuals[a].abs().total_cmp(&residuals[c].abs())).unwrap()
        };
        let (bj, _, reach) = update(&mut env, j, atoms.weights[j]);
        if reach < atoms.weights[j] - tol {
            return Err(Error::Infeasible {
                atom: j,
                reason: format!("at most {reach:e} of the required {:e} is reachable", atoms.weights[j]),
            });
        }
        if bj == b[j] {
            stalled += 1;
            continue;
        }
        b[j] = bj;
        env.set_row(j, piece_row(&atoms.points[j], bj));
        let updated = env.masses(&source.masses);
        if updated == masses {
            stalled += 1;
        } else {
            stalled = 0;
        }
        masses = updated;
    }

    let surface = surface_with(&b)?;
    let evals = assignment(&surface, source, cfg.exec)?;
    let mut traced = vec![0.0; n_atoms];
    for (e, m) in evals.iter().zip(&source.masses) {
        traced[e.active_index] += m;
    }
    let residuals: Vec<f64> = traced.iter().zip(&atoms.weights).map(|(m, s)| m - s).collect();
    let max_residual = residuals.iter().fold(0.0f64, |a, r| a.max(r.abs()));
    let height_min = evals.iter().map(|e| e.height).fold(f64::INFINITY, f64::min);
    let height_max = evals.iter().map(|e| e.height).fold(f64::NEG_INFINITY, f64::max);
    let report = SolveReport {
        b,
        residuals,
        max_residual,
        iterations,
        converged: converged && max_residual <= tol,
        residual_history: history,
        height_min,
        height_max,
        heights_in_cylinder: height_min > 0.0 && height_max < cylinder.height_max,
    };
    Ok((surface, report))
}

/// Outcome of the semiconvexity inequality over sampled triples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SemiconvexityReport {
    /// Largest `((1-s)u(a) + s u(b) - u(x_s)) / (s(1-s)|a-b|^2)`.
    pub c_fit: f64,
    /// Largest spectral norm of a piece Hessian over the sampled points.
    pub hessian_sup: f64,
    /// `c_fit - hessian_sup`; nonpositive when the inequality holds.
    pub worst_violation: f64,
    pub triples_used: usize,
}

/// Largest `|D^2 phi_i|` over pieces and points where the piece is defined.
pub fn hessian_sup(surface: &PiecewiseSurface, points: &[Vec<f64>]) -> f64 {
    let mut sup = 0.0f64;
    for x in points {
        for i in 0..surface.len() {
            if let Ok(h) = surface.piece_hessian(i, x) {
                let eig = h.symmetric_eigenvalues();
                sup = sup.max(eig.iter().fold(0.0f64, |a, v| a.max(v.abs())));
            }
        }
    }
    sup
}

pub fn semiconvexity_check(
    surface: &PiecewiseSurface,
    triples: &[(Vec<f64>, Vec<f64>, f64)],
    hessian_points: &[Vec<f64>],
) -> Result<SemiconvexityReport> {
    let mut c_fit = f64::NEG_INFINITY;
    let mut used = 0;
    let mut pts = hessian_points.to_vec();
    for (a, b, s) in triples {
        let d2: f64 = a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum();
        if *s <= 0.0 || *s >= 1.0 || d2 == 0.0 {
            continue;
        }
        let xs: Vec<f64> = a.iter().zip(b).map(|(p, q)| (1.0 - s) * p + s * q).collect();
        let gap = (1.0 - s) * surface.height(a)? + s * surface.height(b)? - surface.height(&xs)?;
        c_fit = c_fit.max(gap / (s * (1.0 - s) * d2));
        pts.push(xs);
        used += 1;
    }
    let sup = hessian_sup(surface, &pts);
    Ok(SemiconvexityReport { c_fit, hessian_sup: sup, worst_violation: c_fit - sup, triples_used: used })
}

/// Fraction of source mass in cells whose center and corners do not all
/// share one supporting piece. Cells straddling an interface are counted,
/// so the fraction scales like the cell width.
pub fn singular_set_estimate(surface: &PiecewiseSurface, source: &SourceDensity, exec: Execution) -> Result<f64> {
    let flags: Vec<Result<bool>> = map_range(exec, source.len(), |k| {
        let mut seen: Option<usize> = None;
        let mut nodes = source.cell_corners(k);
        nodes.push(source.centers[k].clone());
        for x in &nodes {
            let map = surface.refractor_map(x)?;
            if map.len() > 1 {
                return Ok(true);
            }
            match seen {
                None => seen = Some(map[0]),
                Some(s) if s != map[0] => return Ok(true),
                _ => {}
            }
        }
        Ok(false)
    });
    let mut singular = 0.0;
    for (f, m) in flags.into_iter().zip(&source.masses) {
        if f? {
            singular += m;
        }
    }
    Ok(singular / source.total_mass())
}

/// `u*(Y)`: infimum (min-type modes sending mass up with `b`) or supremum of
/// the focal parameter `c(X, Y)` over the sampled graph `X = (x, u(x))`.
pub fn dual_potential(surface: &PiecewiseSurface, grid: &[Vec<f64>], ys: &[SpacePoint], exec: Execution) -> Result<Vec<f64>> {
    let graph: Vec<(Vec<f64>, f64)> =
        grid.iter().map(|x| surface.height(x).map(|h| (x.clone(), h))).collect::<Result<_>>()?;
    let take_inf = mass_increases_with_b(surface.mode);
    Ok(map_slice(exec, ys, |y| {
        let values = graph.iter().map(|(x, h)| parameter_through(surface.mode, surface.kappa, x, *h, y));
        if take_inf {
            values.fold(f64::INFINITY, f64::min)
        } else {
            values.fold(f64::NEG_INFINITY, f64::max)
        }
    }))
}

/// Largest difference quotient `|u*(a) - u*(b)| / |a - b|` over all pairs.
pub fn lipschitz_estimate(ys: &[Vec<f64>], values: &[f64]) -> f64 {
    let mut best = 0.0f64;
    for i in 0..ys.len() {
        for j in 0..i {
            let d: f64 = ys[i].iter().zip(&ys[j]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            if d > 0.0 {
                best = best.max((values[i] - values[j]).abs() / d);
            }
        }
    }
    best
}

/// Point where pieces `i` and `j` cross on the segment from `a` to `b`.
pub fn locate_crossing(surface: &PiecewiseSurface, i: usize, j: usize, a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    let at = |t: f64| -> Vec<f64> { a.iter().zip(b).map(|(p, q)| (1.0 - t) * p + t * q).collect() };
    let diff = |t: f64| -> Result<f64> { Ok(surface.piece_height(i, &at(t))? - surface.piece_height(j, &at(t))?) };
    let (mut lo, mut hi) = (0.0, 1.0);
    let flo = diff(lo)?;
    if flo * diff(hi)? > 0.0 {
        return Err(Error::Configuration(format!("pieces {i} and {j} do not cross on the segment")));
    }
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if diff(mid)? * flo > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(at(0.5 * (lo + hi)))
}

/// Interface between two adjacent cells with different active pieces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interface {
    pub point: Vec<f64>,
    pub pieces: (usize, usize),
    /// `|D phi_i - D phi_j|` at the crossing point.
    pub gradient_jump: f64,
}

/// Crossing points of all interfaces between neighboring cells.
pub fn interfaces(surface: &PiecewiseSurface, source: &SourceDensity, exec: Execution) -> Result<Vec<Interface>> {
    let evals = assignment(surface, source, exec)?;
    let mut pairs = Vec::new();
    for k in 0..source.len() {
        for axis in 0..source.dim() {
            if let Some(m) = source.neighbor(k, axis) {
                let (i, j) = (evals[k].active_index, evals[m].active_index);
                if i != j {
                    pairs.push((k, m, i, j));
                }
            }
        }
    }
    map_slice(exec, &pairs, |&(k, m, i, j)| {
        let point = locate_crossing(surface, i, j, &source.centers[k], &source.centers[m])?;
        let jump = (surface.piece_gradient(i, &point)? - surface.piece_gradient(j, &point)?).norm();
        Ok(Interface { point, pieces: (i, j), gradient_jump: jump })
    })
    .into_iter()
    .collect()
}

pub fn max_gradient_jump(surface: &PiecewiseSurface, source: &SourceDensity, exec: Execution) -> Result<f64> {
    Ok(interfaces(surface, source, exec)?.iter().map(|i| i.gradient_jump).fold(0.0, f64::max))
}

/// A piece that supports the surface near `x` but not on all of `Omega`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportWitness {
    pub x: Vec<f64>,
    pub candidate: usize,
    pub z: Vec<f64>,
    /// Amount by which the surface crosses the candidate piece at `z`.
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportReport {
    /// No locally supporting piece failed to support globally.
    pub holds: bool,
    pub base_points: usize,
    pub locally_supporting: usize,
    pub witness: Option<SupportWitness>,
}

/// Checks that local support implies global support: for every base point
/// `x` and candidate focus `Y_k`, the piece with focus `Y_k` through
/// `(x, u(x))` is tested on the grid within `local_radius` of `x`; if it
/// supports there (up to `tol`), it must support at every grid point.
pub fn global_support_check(
    surface: &PiecewiseSurface,
    base_points: &[Vec<f64>],
    grid: &[Vec<f64>],
    candidates: &[SpacePoint],
    local_radius: f64,
    tol: f64,
    exec: Execution,
) -> Result<SupportReport> {
    let u_grid: Vec<f64> = grid.iter().map(|z| surface.height(z)).collect::<Result<_>>()?;
    let sign = if surface.mode.takes_min() { 1.0 } else { -1.0 };
    let results = map_slice(exec, base_points, |x| -> Result<(usize, Option<SupportWitness>)> {
        let ux = surface.height(x)?;
        let mut local = 0;
        for (k, y) in candidates.iter().enumerate() {
            let b = parameter_through(surface.mode, surface.kappa, x, ux, y);
            if !(b > 0.0) {
                continue;
            }
            let probe = PiecewiseSurface { mode: surface.mode, pieces: vec![Piece { focus: y.clone(), b }], kappa: surface.kappa };
            let crossing = |z: &[f64], uz: f64| probe.piece_height(0, z).ok().map(|p| sign * (uz - p));
            let near = |z: &[f64]| z.iter().zip(x).map(|(a, c)| (a - c) * (a - c)).sum::<f64>().sqrt() <= local_radius;
            let locally = grid
                .iter()
                .zip(&u_grid)
                .filter(|(z, _)| near(z))
                .all(|(z, uz)| crossing(z, *uz).map_or(true, |g| g <= tol));
            if !locally {
                continue;
            }
            local += 1;
            let worst = grid
                .iter()
                .zip(&u_grid)
                .filter_map(|(z, uz)| crossing(z, *uz).map(|g| (z, g)))
                .max_by(|a, b| a.1.total_cmp(&b.1));
            if let Some((z, g)) = worst {
                if g > tol {
                    return Ok((local, Some(SupportWitness { x: x.clone(), candidate: k, z: z.clone(), gap: g })));
                }
            }
        }
        Ok((local, None))
    });
    let mut locally_supporting = 0;
    let mut witness: Option<SupportWitness> = None;
    for r in results {
        let (l, w) = r?;
        locally_supporting += l;
        if let Some(w) = w {
            if witness.as_ref().map_or(true, |o| w.gap > o.gap) {
                witness = Some(w);
            }
        }
    }
    Ok(SupportReport { holds: witness.is_none(), base_points: base_points.len(), locally_supporting, witness })
}

/// Base points for the support check: the grid plus every located interface crossing.
pub fn support_base_points(surface: &PiecewiseSurface, source: &SourceDensity, grid: &[Vec<f64>], exec: Execution) -> Result<Vec<Vec<f64>>> {
    let mut pts = grid.to_vec();
    pts.extend(interfaces(surface, source, exec)?.into_iter().map(|i| i.point));
    Ok(pts)
}

/// Gradient of the surface at every cell center, flagged on the tie set.
pub fn gradients(surface: &PiecewiseSurface, source: &SourceDensity, exec: Execution) -> Result<Vec<(DVector<f64>, bool)>> {
    map_slice(exec, &source.centers, |x| surface.gradient(x)).into_iter().collect()
}
