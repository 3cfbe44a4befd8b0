//! Receivers: finite weighted atoms or the graph of a smooth height function.
//!
//! Rays `X + s Lambda` are intersected with the receiver to get `s_X(Lambda)`,
//! which feeds the stretch function `H(v, X) = s_X(Lambda(v)) Q(v)`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{tensor_product, OpticsKind, SpacePoint};
use crate::optics::{exit_direction, focal_parameter, q_factor, reflector_focal_parameter, refraction_direction};

/// A twice differentiable height function `psi` on `R^n`.
pub trait HeightField: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;
    fn value(&self, y: &[f64]) -> f64;
    fn gradient(&self, y: &[f64]) -> DVector<f64>;
    fn hessian(&self, y: &[f64]) -> DMatrix<f64>;
}

/// `psi(y) = c + g.y + y^T A y / 2`. Covers constant heights, tilted planes
/// and paraboloids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraticField {
    pub constant: f64,
    pub linear: Vec<f64>,
    /// Row-major Hessian `A`.
    pub hessian: Vec<Vec<f64>>,
}

impl QuadraticField {
    pub fn constant(n: usize, c: f64) -> Self {
        Self { constant: c, linear: vec![0.0; n], hessian: vec![vec![0.0; n]; n] }
    }

    /// `c + a |y|^2`.
    pub fn radial(n: usize, c: f64, a: f64) -> Self {
        let hessian = (0..n).map(|i| (0..n).map(|j| if i == j { 2.0 * a } else { 0.0 }).collect()).collect();
        Self { constant: c, linear: vec![0.0; n], hessian }
    }

    /// The hyperplane `y_{n+1} = c + y.w`.
    pub fn plane(c: f64, w: Vec<f64>) -> Self {
        let n = w.len();
        Self { constant: c, linear: w, hessian: vec![vec![0.0; n]; n] }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.linear.len();
        if n == 0 || self.hessian.len() != n || self.hessian.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidInput("quadratic height field needs an n-vector and an n x n matrix".into()));
        }
        Ok(())
    }
}

impl HeightField for QuadraticField {
    fn dim(&self) -> usize {
        self.linear.len()
    }

    fn value(&self, y: &[f64]) -> f64 {
        let mut v = self.constant;
        for (i, yi) in y.iter().enumerate() {
            v += self.linear[i] * yi;
            for (j, yj) in y.iter().enumerate() {
                v += 0.5 * yi * self.hessian[i][j] * yj;
            }
        }
        v
    }

    fn gradient(&self, y: &[f64]) -> DVector<f64> {
        DVector::from_fn(y.len(), |i, _| {
            self.linear[i] + self.hessian[i].iter().zip(y).map(|(a, b)| a * b).sum::<f64>()
        })
    }

    fn hessian(&self, y: &[f64]) -> DMatrix<f64> {
        DMatrix::from_fn(y.len(), y.len(), |i, j| self.hessian[i][j])
    }
}

/// Surface density of the receiver, per unit area of the graph.
pub type DensityFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

pub fn uniform_density(value: f64) -> DensityFn {
    Arc::new(move |_| value)
}

/// The graph `{(y, psi(y)) : y in Omega*}` of a height function over a box.
#[derive(Clone)]
pub struct GraphSurface {
    pub psi: Arc<dyn HeightField>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub density: DensityFn,
}

impl fmt::Debug for GraphSurface {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GraphSurface").field("psi", &self.psi).field("lo", &self.lo).field("hi", &self.hi).finish()
    }
}

impl GraphSurface {
    pub fn new(psi: Arc<dyn HeightField>, lo: Vec<f64>, hi: Vec<f64>, density: DensityFn) -> Result<Self> {
        if lo.len() != psi.dim() || hi.len() != psi.dim() || lo.iter().zip(&hi).any(|(a, b)| !(a < b)) {
            return Err(Error::InvalidInput("graph domain must be a box matching the height field dimension".into()));
        }
        Ok(Self { psi, lo, hi, density })
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn point(&self, y: &[f64]) -> SpacePoint {
        SpacePoint::from_slice(y, self.psi.value(y))
    }

    pub fn contains(&self, y: &[f64]) -> bool {
        y.iter().zip(self.lo.iter().zip(&self.hi)).all(|(v, (a, b))| *v >= *a && *v <= *b)
    }

    /// `sqrt(1 + |D psi|^2)`.
    pub fn area_element(&self, y: &[f64]) -> f64 {
        (1.0 + self.psi.gradient(y).norm_squared()).sqrt()
    }

    /// Midpoints of `per_axis^n` cells over `Omega*`, with weights equal to
    /// density times graph area, rescaled to sum to `total_mass`.
    pub fn discretize(&self, per_axis: usize, total_mass: f64) -> Result<DiscreteAtoms> {
        let per_axis = per_axis.max(1);
        let axes: Vec<Vec<f64>> = self
            .lo
            .iter()
            .zip(&self.hi)
            .map(|(a, b)| (0..per_axis).map(|i| a + (b - a) * (i as f64 + 0.5) / per_axis as f64).collect())
            .collect();
        let cell: f64 = self.lo.iter().zip(&self.hi).map(|(a, b)| (b - a) / per_axis as f64).product();
        let nodes = tensor_product(&axes);
        let raw: Vec<f64> = nodes.iter().map(|y| (self.density)(y) * self.area_element(y) * cell).collect();
        let sum: f64 = raw.iter().sum();
        if !(sum > 0.0) {
            return Err(Error::InvalidInput("receiver density has zero total mass".into()));
        }
        DiscreteAtoms::new(
            nodes.iter().map(|y| self.point(y)).collect(),
            raw.iter().map(|w| w * total_mass / sum).collect(),
        )
    }
}

/// Finitely many target points with positive weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteAtoms {
    pub points: Vec<SpacePoint>,
    pub weights: Vec<f64>,
}

impl DiscreteAtoms {
    pub fn new(points: Vec<SpacePoint>, weights: Vec<f64>) -> Result<Self> {
        if points.is_empty() || points.len() != weights.len() {
            return Err(Error::InvalidInput("atoms need one positive weight per point".into()));
        }
        if weights.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
            return Err(Error::InvalidInput("atom weights must be positive".into()));
        }
        let n = points[0].dim();
        if points.iter().any(|p| p.dim() != n || !p.is_finite()) {
            return Err(Error::InvalidInput("atoms must share one finite dimension".into()));
        }
        for i in 0..points.len() {
            for j in 0..i {
                if points[i] == points[j] {
                    return Err(Error::InvalidInput(format!("atoms {j} and {i} coincide")));
                }
            }
        }
        Ok(Self { points, weights })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }
}

#[derive(Debug, Clone)]
pub enum Target {
    Atoms(DiscreteAtoms),
    Graph(GraphSurface),
}

/// Root-finding and matching tolerances for ray intersection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntersectConfig {
    pub s_max: f64,
    /// Uniform samples used to isolate sign changes of the graph residual.
    pub scan_samples: usize,
    pub tol: f64,
    pub max_iter: usize,
    pub angle_tol: f64,
}

impl Default for IntersectConfig {
    fn default() -> Self {
        Self { s_max: 1e3, scan_samples: 200, tol: 1e-12, max_iter: 100, angle_tol: 1e-9 }
    }
}

/// Hit of a ray with the receiver.
#[derive(Debug, Clone, PartialEq)]
pub struct Hit {
    pub s: f64,
    pub point: SpacePoint,
    /// Index of the matched atom for discrete receivers.
    pub atom: Option<usize>,
}

/// Intersect `X + s Lambda`, `s > 0`, with the receiver.
pub fn ray_target_intersection(x: &SpacePoint, dir: &DVector<f64>, target: &Target, cfg: &IntersectConfig) -> Result<Hit> {
    match target {
        Target::Atoms(atoms) => intersect_atoms(x, dir, atoms, cfg),
        Target::Graph(graph) => intersect_graph(x, dir, graph, cfg),
    }
}

fn intersect_atoms(x: &SpacePoint, dir: &DVector<f64>, atoms: &DiscreteAtoms, cfg: &IntersectConfig) -> Result<Hit> {
    let unit = dir / dir.norm();
    let mut found: Option<(usize, f64)> = None;
    let mut count = 0;
    for (i, y) in atoms.points.iter().enumerate() {
        let d = y.to_vector() - x.to_vector();
        let s = d.norm();
        if s == 0.0 || s > cfg.s_max {
            continue;
        }
        let chord = (d / s - &unit).norm();
        let angle = 2.0 * (0.5 * chord).min(1.0).asin();
        if angle <= cfg.angle_tol {
            count += 1;
            found.get_or_insert((i, s));
        }
    }
    match (found, count) {
        (Some((i, s)), 1) => Ok(Hit { s, point: atoms.points[i].clone(), atom: Some(i) }),
        (Some(_), roots) => Err(Error::Ambiguous { roots }),
        _ => Err(Error::Miss { s_max: cfg.s_max }),
    }
}

/// Range of `s` keeping the horizontal position inside the graph box.
fn box_window(x: &[f64], dir_h: &[f64], lo: &[f64], hi: &[f64], s_max: f64) -> Option<(f64, f64)> {
    let (mut a, mut b) = (0.0f64, s_max);
    for i in 0..x.len() {
        if dir_h[i] == 0.0 {
            if x[i] < lo[i] || x[i] > hi[i] {
                return None;
            }
        } else {
            let t1 = (lo[i] - x[i]) / dir_h[i];
            let t2 = (hi[i] - x[i]) / dir_h[i];
            a = a.max(t1.min(t2));
            b = b.min(t1.max(t2));
        }
    }
    (a <= b).then_some((a, b))
}

fn intersect_graph(x: &SpacePoint, dir: &DVector<f64>, graph: &GraphSurface, cfg: &IntersectConfig) -> Result<Hit> {
    let n = x.dim();
    let dir_h: Vec<f64> = dir.iter().take(n).copied().collect();
    let dir_v = dir[n];
    let start = x.horizontal.as_slice();
    let (a, b) = box_window(start, &dir_h, &graph.lo, &graph.hi, cfg.s_max).ok_or(Error::Miss { s_max: cfg.s_max })?;
    let pos = |s: f64| -> Vec<f64> { start.iter().zip(&dir_h).map(|(p, d)| p + s * d).collect() };
    let residual = |s: f64| x.height + s * dir_v - graph.psi.value(&pos(s));
    let slope = |s: f64| dir_v - graph.psi.gradient(&pos(s)).iter().zip(&dir_h).map(|(g, d)| g * d).sum::<f64>();

    let m = cfg.scan_samples.max(2);
    let nodes: Vec<f64> = (0..=m).map(|k| a + (b - a) * k as f64 / m as f64).collect();
    let values: Vec<f64> = nodes.iter().map(|&s| residual(s)).collect();
    let mut brackets = Vec::new();
    for k in 0..m {
        let (f0, f1) = (values[k], values[k + 1]);
        if f0 == 0.0 && nodes[k] > 0.0 {
            brackets.push((nodes[k], nodes[k]));
        } else if f0 * f1 < 0.0 {
            brackets.push((nodes[k], nodes[k + 1]));
        }
    }
    if values[m] == 0.0 {
        brackets.push((nodes[m], nodes[m]));
    }
    match brackets.len() {
        0 => return Err(Error::Miss { s_max: cfg.s_max }),
        1 => {}
        roots => return Err(Error::Ambiguous { roots }),
    }
    let (lo, hi) = brackets[0];
    let s = safeguarded_newton(residual, slope, lo, hi, cfg.tol, cfg.max_iter)?;
    if !(s > 0.0) {
        return Err(Error::Miss { s_max: cfg.s_max });
    }
    let y = pos(s);
    let point = graph.point(&y);
    Ok(Hit { s, point, atom: None })
}

/// Newton iteration kept inside a sign-change bracket, falling back to
/// bisection whenever a step leaves it.
pub(crate) fn safeguarded_newton(
    f: impl Fn(f64) -> f64,
    df: impl Fn(f64) -> f64,
    mut lo: f64,
    mut hi: f64,
    tol: f64,
    max_iter: usize,
) -> Result<f64> {
    if lo == hi {
        return Ok(lo);
    }
    let mut flo = f(lo);
    if flo == 0.0 {
        return Ok(lo);
    }
    let fhi = f(hi);
    if fhi == 0.0 {
        return Ok(hi);
    }
    if flo * fhi > 0.0 {
        return Err(Error::NoConvergence { iterations: 0, residual: flo.abs().min(fhi.abs()) });
    }
    let mut s = 0.5 * (lo + hi);
    let mut fs = f(s);
    for _ in 0..max_iter {
        if fs.abs() <= tol * 1e-1 || (hi - lo) <= f64::EPSILON * hi.abs().max(1.0) {
            return Ok(s);
        }
        if fs * flo < 0.0 {
            hi = s;
        } else {
            lo = s;
            flo = fs;
        }
        let d = df(s);
        let newton = s - fs / d;
        s = if d != 0.0 && newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
        fs = f(s);
    }
    if fs.abs() <= tol {
        Ok(s)
    } else {
        Err(Error::NoConvergence { iterations: max_iter, residual: fs.abs() })
    }
}

/// `H(v, X)` and `G = 1/H`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stretch {
    pub h: f64,
    pub g: f64,
    pub s: f64,
}

pub fn stretch_h(v: &[f64], x: &SpacePoint, target: &Target, kappa: f64, cfg: &IntersectConfig) -> Result<Stretch> {
    let r = refraction_direction(v, kappa);
    let hit = ray_target_intersection(x, &r.direction, target, cfg)?;
    let h = hit.s * r.q;
    Ok(Stretch { h, g: 1.0 / h, s: hit.s })
}

/// `(1 + |v|^2) / s_X(Lambda(v))` for the reflected direction.
pub fn reflector_weight(v: &[f64], x: &SpacePoint, target: &Target, cfg: &IntersectConfig) -> Result<f64> {
    let dir = exit_direction(OpticsKind::Reflector, v, 0.0);
    let hit = ray_target_intersection(x, &dir, target, cfg)?;
    let v2: f64 = v.iter().map(|a| a * a).sum();
    Ok((1.0 + v2) / hit.s)
}

/// Solve `x_{n+1} + H (Q + kappa) / Q = psi(x - H v)` for `H > 0` directly.
pub fn implicit_h_solve(v: &[f64], x: &SpacePoint, psi: &dyn HeightField, kappa: f64, tol: f64, max_iter: usize) -> Result<f64> {
    let v2: f64 = v.iter().map(|a| a * a).sum();
    let q = q_factor(v2, kappa);
    let slope0 = (q + kappa) / q;
    let base = x.horizontal.as_slice();
    let at = |h: f64| -> Vec<f64> { base.iter().zip(v).map(|(xi, vi)| xi - h * vi).collect() };
    let phi = |h: f64| x.height + h * slope0 - psi.value(&at(h));
    let dphi = |h: f64| slope0 + psi.gradient(&at(h)).iter().zip(v).map(|(g, vi)| g * vi).sum::<f64>();

    let f0 = phi(0.0);
    if f0 >= 0.0 {
        return Err(Error::Miss { s_max: 0.0 });
    }
    let mut lo = 0.0;
    let mut hi = ((psi.value(base) - x.height) / slope0).max(1e-6);
    let mut expansions = 0;
    while phi(hi) < 0.0 {
        lo = hi;
        hi *= 2.0;
        expansions += 1;
        if expansions > 60 {
            return Err(Error::NoConvergence { iterations: expansions, residual: phi(hi).abs() });
        }
    }
    safeguarded_newton(phi, dphi, lo, hi, tol, max_iter)
}

/// `D_x phi(x0, Y, X0)`: the surface gradient at `x0` that sends the vertical
/// ray from `X0` toward `Y`.
pub fn gradient_toward(kind: OpticsKind, x0: &SpacePoint, y: &SpacePoint, kappa: f64) -> Result<DVector<f64>> {
    let n = x0.dim();
    let diff = &x0.horizontal - &y.horizontal;
    match kind {
        OpticsKind::Refractor => {
            focal_parameter(x0, y, kappa)?;
            let slack = y.height - x0.height - kappa * x0.dist(y);
            if !(slack > 0.0) {
                return Err(Error::Configuration("base point is not on the lower part of the ellipsoid".into()));
            }
            Ok(DVector::from_fn(n, |i, _| diff[i] / slack))
        }
        OpticsKind::Reflector => {
            let b = reflector_focal_parameter(x0, y)?;
            Ok(DVector::from_fn(n, |i, _| -diff[i] / b))
        }
    }
}

/// The curve `[Y_bar, Y_hat]_{X0}` traced on the receiver.
#[derive(Debug, Clone, PartialEq)]
pub struct WedgeCurve {
    pub base: SpacePoint,
    pub v_bar: DVector<f64>,
    pub v_hat: DVector<f64>,
    pub samples: Vec<(f64, SpacePoint)>,
}

/// 65 uniform samples of `[0, 1]`; the band `[1/4, 3/4]` falls on nodes.
pub fn default_lambda_grid() -> Vec<f64> {
    (0..=64).map(|k| k as f64 / 64.0).collect()
}

pub fn interpolate(v_bar: &DVector<f64>, v_hat: &DVector<f64>, lambda: f64) -> DVector<f64> {
    v_bar * (1.0 - lambda) + v_hat * lambda
}

pub fn wedge_curve(
    kind: OpticsKind,
    x0: &SpacePoint,
    y_bar: &SpacePoint,
    y_hat: &SpacePoint,
    target: &Target,
    kappa: f64,
    lambda_grid: &[f64],
    cfg: &IntersectConfig,
) -> Result<WedgeCurve> {
    let v_bar = gradient_toward(kind, x0, y_bar, kappa)?;
    let v_hat = gradient_toward(kind, x0, y_hat, kappa)?;
    let mut samples = Vec::with_capacity(lambda_grid.len());
    let mut bad = Vec::new();
    for &lambda in lambda_grid {
        let v = interpolate(&v_bar, &v_hat, lambda);
        let dir = exit_direction(kind, v.as_slice(), kappa);
        match ray_target_intersection(x0, &dir, target, cfg) {
            Ok(hit) => samples.push((lambda, hit.point)),
            Err(_) => bad.push(lambda),
        }
    }
    if !bad.is_empty() {
        return Err(Error::PartialCurve { bad_lambdas: bad });
    }
    Ok(WedgeCurve { base: x0.clone(), v_bar, v_hat, samples })
}

/// Largest distance from `Lambda(v(lambda))` to the plane spanned by the two
/// endpoint directions. Zero when the tip curve is planar.
pub fn tip_curve_planarity_defect(v_bar: &[f64], v_hat: &[f64], kappa: f64, lambda_grid: &[f64]) -> f64 {
    let a = refraction_direction(v_bar, kappa).direction;
    let b = refraction_direction(v_hat, kappa).direction;
    let e1 = &a / a.norm();
    let b_perp = &b - &e1 * e1.dot(&b);
    let e2 = (b_perp.norm() > 1e-14).then(|| &b_perp / b_perp.norm());
    let vb = DVector::from_column_slice(v_bar);
    let vh = DVector::from_column_slice(v_hat);
    lambda_grid
        .iter()
        .map(|&l| {
            let d = refraction_direction(interpolate(&vb, &vh, l).as_slice(), kappa).direction;
            let mut r = &d - &e1 * e1.dot(&d);
            if let Some(e2) = &e2 {
                r -= e2 * e2.dot(&r);
            }
            r.norm()
        })
        .fold(0.0, f64::max)
}

/// Empirical extremes of `|v_bar - v_hat| / |Y_bar - Y_hat|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BilipschitzReport {
    pub c_low: f64,
    pub c_high: f64,
    pub pairs_used: usize,
}

pub fn v_y_bilipschitz_check(
    kind: OpticsKind,
    x0: &SpacePoint,
    pairs: &[(SpacePoint, SpacePoint)],
    kappa: f64,
) -> Result<Option<BilipschitzReport>> {
    let mut lo = f64::INFINITY;
    let mut hi: f64 = 0.0;
    let mut used = 0;
    for (ya, yb) in pairs {
        let dy = ya.dist(yb);
        if dy == 0.0 {
            continue;
        }
        let va = gradient_toward(kind, x0, ya, kappa)?;
        let vb = gradient_toward(kind, x0, yb, kappa)?;
        let ratio = (va - vb).norm() / dy;
        lo = lo.min(ratio);
        hi = hi.max(ratio);
        used += 1;
    }
    Ok((used > 0).then_some(BilipschitzReport { c_low: lo, c_high: hi, pairs_used: used }))
}
