//! Target regularity: the differential AW condition on `1/H` (or its
//! reflector analogue), the synthetic min/max conditions, the quadratic-form
//! criterion at a point of a graph target, and the structural experiments
//! built on them (ellipsoid union inclusion, tube measure and tube inclusion,
//! Hölder exponent).

use nalgebra::{DMatrix, DVector};
use num_rational::Ratio;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{map_slice, Execution};
use crate::geometry::{tensor_product, OpticsKind, SpacePoint, SurfaceMode};
use crate::optics::{focal_parameter, focal_parameter_for, EllipsoidPiece, ParaboloidPiece};
use crate::solver::{interfaces, SourceDensity};
use crate::surface::PiecewiseSurface;
use crate::target::{
    gradient_toward, implicit_h_solve, interpolate, ray_target_intersection, reflector_weight, stretch_h, wedge_curve,
    GraphSurface, HeightField, IntersectConfig, Target,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Regular,
    NotRegular,
    Inconclusive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    ClosedForm,
    FiniteDifference,
    Sampling,
}

/// Where a condition fails (or is weakest).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub lambda: f64,
    pub value: f64,
}

/// Verdict with a signed margin: positive exactly when regular.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegularityReport {
    pub verdict: Verdict,
    pub margin: f64,
    /// Extreme second difference found by the numeric AW check.
    pub worst_value: Option<f64>,
    /// Fitted constant of the min/max condition.
    pub c1_fit: Option<f64>,
    pub witness: Option<Witness>,
    pub method: Method,
    pub samples: usize,
}

impl RegularityReport {
    fn from_margin(margin: f64, method: Method) -> Self {
        let verdict = if margin > 0.0 {
            Verdict::Regular
        } else if margin < 0.0 {
            Verdict::NotRegular
        } else {
            Verdict::Inconclusive
        };
        Self { verdict, margin, worst_value: None, c1_fit: None, witness: None, method, samples: 0 }
    }
}

/// Side from which the pieces touch the surface.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    Above,
    Below,
}

fn symmetric_hessian(psi: &dyn HeightField, y: &[f64]) -> Result<DMatrix<f64>> {
    let h = psi.hessian(y);
    let scale = h.iter().fold(1.0f64, |a, v| a.max(v.abs()));
    if (&h - h.transpose()).iter().any(|v| v.abs() > 1e-12 * scale) {
        return Err(Error::InvalidInput("height field Hessian is not symmetric".into()));
    }
    Ok(h)
}

/// Quadratic-form test at the point of the graph straight above `base`:
/// with `h = psi(x) - x_{n+1}`, ellipsoids from above need
/// `kappa/(1-kappa) < h <D^2 psi xi, xi>` for all unit `xi`; from below the
/// reverse. The margin is the slack of the worst direction.
pub fn classify_graph_target(psi: &dyn HeightField, kappa: f64, orientation: Orientation, base: &SpacePoint) -> Result<RegularityReport> {
    let x = base.horizontal.as_slice();
    let h = psi.value(x) - base.height;
    if !(h > 0.0) {
        return Err(Error::InvalidInput("the graph must lie above the base point".into()));
    }
    let hess = symmetric_hessian(psi, x)?;
    let eig = (hess * h).symmetric_eigen();
    let critical = kappa / (1.0 - kappa);
    let (idx, margin) = match orientation {
        Orientation::Above => {
            let i = eig.eigenvalues.imin();
            (i, eig.eigenvalues[i] - critical)
        }
        Orientation::Below => {
            let i = eig.eigenvalues.imax();
            (i, critical - eig.eigenvalues[i])
        }
    };
    let mut report = RegularityReport::from_margin(margin, Method::ClosedForm);
    report.samples = 1;
    if report.verdict != Verdict::Regular {
        report.witness = Some(Witness {
            x: base.coords(),
            y: eig.eigenvectors.column(idx).iter().copied().collect(),
            lambda: 0.0,
            value: margin,
        });
    }
    Ok(report)
}

/// `D^2_v G(0, X)` in closed form for the graph straight above `X`.
pub fn g_hessian_closed_form(psi: &dyn HeightField, kappa: f64, base: &SpacePoint) -> Result<DMatrix<f64>> {
    let x = base.horizontal.as_slice();
    let h = psi.value(x) - base.height;
    if !(h > 0.0) {
        return Err(Error::InvalidInput("the graph must lie above the base point".into()));
    }
    let n = x.len();
    let hess = symmetric_hessian(psi, x)?;
    Ok((DMatrix::identity(n, n) * (kappa / (1.0 - kappa)) - hess * h) * ((1.0 - kappa) / h))
}

/// Fourth-order central second difference of `f` along `xi` at `v`.
fn second_difference(f: &dyn Fn(&[f64]) -> Result<f64>, v: &[f64], xi: &[f64], step: f64) -> Result<f64> {
    let at = |k: f64| -> Vec<f64> { v.iter().zip(xi).map(|(a, d)| a + k * step * d).collect() };
    let f0 = f(v)?;
    let (p1, m1, p2, m2) = (f(&at(1.0))?, f(&at(-1.0))?, f(&at(2.0))?, f(&at(-2.0))?);
    Ok((-p2 + 16.0 * p1 - 30.0 * f0 + 16.0 * m1 - m2) / (12.0 * step * step))
}

/// Finite-difference Hessian of `G(v, X) = 1/H(v, X)` computed through the
/// implicit equation for `H`.
pub fn g_hessian_numeric(psi: &dyn HeightField, kappa: f64, base: &SpacePoint, v: &[f64], step: f64) -> Result<DMatrix<f64>> {
    let n = v.len();
    let g = |w: &[f64]| -> Result<f64> { Ok(1.0 / implicit_h_solve(w, base, psi, kappa, 1e-15, 200)?) };
    let mut out = DMatrix::zeros(n, n);
    for i in 0..n {
        let mut e = vec![0.0; n];
        e[i] = 1.0;
        out[(i, i)] = second_difference(&g, v, &e, step)?;
        for j in 0..i {
            let shifted = |si: f64, sj: f64| -> Result<f64> {
                let mut w = v.to_vec();
                w[i] += si * step;
                w[j] += sj * step;
                g(&w)
            };
            let d = (shifted(1.0, 1.0)? - shifted(1.0, -1.0)? - shifted(-1.0, 1.0)? + shifted(-1.0, -1.0)?) / (4.0 * step * step);
            out[(i, j)] = d;
            out[(j, i)] = d;
        }
    }
    Ok(out)
}

/// Settings for the numeric AW check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AwConfig {
    pub step: f64,
    /// Second differences within this band of zero give no verdict.
    pub inconclusive_band: f64,
    pub intersect: IntersectConfig,
}

impl Default for AwConfig {
    fn default() -> Self {
        Self { step: 1e-3, inconclusive_band: 1e-6, intersect: IntersectConfig::default() }
    }
}

/// Directional second differences over a grid of gradients `v` and
/// directions `xi` of `1/H` (refractors) or `(1 + |v|^2)/s` (reflectors).
/// For `RefractorAbove` and `ReflectorBelow` the condition asks all of them
/// to be negative; the other two modes reverse the sign.
pub fn aw_condition_numeric(
    target: &Target,
    base: &SpacePoint,
    kappa: f64,
    mode: SurfaceMode,
    v_grid: &[Vec<f64>],
    xi_grid: &[Vec<f64>],
    cfg: &AwConfig,
) -> RegularityReport {
    let f = |v: &[f64]| -> Result<f64> {
        match mode.optics() {
            OpticsKind::Refractor => Ok(stretch_h(v, base, target, kappa, &cfg.intersect)?.g),
            OpticsKind::Reflector => reflector_weight(v, base, target, &cfg.intersect),
        }
    };
    let sign = if matches!(mode, SurfaceMode::RefractorAbove | SurfaceMode::ReflectorBelow) { 1.0 } else { -1.0 };
    let mut worst = f64::NEG_INFINITY;
    let mut witness = None;
    let mut samples = 0;
    for v in v_grid {
        for xi in xi_grid {
            let norm = xi.iter().map(|a| a * a).sum::<f64>().sqrt();
            let unit: Vec<f64> = xi.iter().map(|a| a / norm).collect();
            match second_difference(&f, v, &unit, cfg.step) {
                Ok(d) => {
                    samples += 1;
                    if sign * d > worst {
                        worst = sign * d;
                        witness = Some(Witness { x: v.clone(), y: unit, lambda: 0.0, value: d });
                    }
                }
                Err(_) => {
                    return RegularityReport {
                        verdict: Verdict::Inconclusive,
                        margin: 0.0,
                        worst_value: None,
                        c1_fit: None,
                        witness: Some(Witness { x: v.clone(), y: unit, lambda: 0.0, value: f64::NAN }),
                        method: Method::FiniteDifference,
                        samples,
                    };
                }
            }
        }
    }
    let margin = -worst;
    let verdict = if margin > cfg.inconclusive_band {
        Verdict::Regular
    } else if margin < -cfg.inconclusive_band {
        Verdict::NotRegular
    } else {
        Verdict::Inconclusive
    };
    RegularityReport {
        verdict,
        margin,
        worst_value: Some(sign * worst),
        c1_fit: None,
        witness: if verdict == Verdict::Regular { None } else { witness },
        method: Method::FiniteDifference,
        samples,
    }
}

/// Height at `x` of the piece with focus `y` through `z`.
pub fn piece_through(mode: SurfaceMode, x: &[f64], y: &SpacePoint, z: &SpacePoint, kappa: f64) -> Result<f64> {
    if mode.is_refractor() {
        EllipsoidPiece::through(y.clone(), z, kappa)?.height(x, kappa)
    } else {
        Ok(ParaboloidPiece::through(y.clone(), z)?.height(x))
    }
}

/// Synthetic condition along the wedge from `z`: with `phi_l` the piece
/// with focus `Y(lambda)` through `z`, the slack is
/// `phi_l - min(phi_bar, phi_hat)` (refractor above),
/// `max(phi_bar, phi_hat) - phi_l` (refractor below, reflector below) or
/// `p_l - min(p_bar, p_hat)` (reflector above), divided by
/// `|Y_bar - Y_hat|^2 |x - z|^2`. The fitted constant is its minimum.
pub fn min_condition_check(
    mode: SurfaceMode,
    target: &Target,
    z: &SpacePoint,
    y_bar: &SpacePoint,
    y_hat: &SpacePoint,
    kappa: f64,
    lambdas: &[f64],
    x_samples: &[Vec<f64>],
    cfg: &IntersectConfig,
) -> Result<RegularityReport> {
    let dy2 = y_bar.dist_sq(y_hat);
    let skipped = || RegularityReport {
        verdict: Verdict::Inconclusive,
        margin: 0.0,
        worst_value: None,
        c1_fit: None,
        witness: None,
        method: Method::Sampling,
        samples: 0,
    };
    if dy2 == 0.0 {
        return Ok(skipped());
    }
    let curve = wedge_curve(mode.optics(), z, y_bar, y_hat, target, kappa, lambdas, cfg)?;
    let zx = z.horizontal.as_slice();
    let mut best: Option<(f64, Witness)> = None;
    let mut samples = 0;
    for (lambda, y_l) in &curve.samples {
        for x in x_samples {
            let dx2: f64 = x.iter().zip(zx).map(|(a, b)| (a - b) * (a - b)).sum();
            if dx2 == 0.0 {
                continue;
            }
            let (Ok(pl), Ok(pb), Ok(ph)) = (
                piece_through(mode, x, y_l, z, kappa),
                piece_through(mode, x, y_bar, z, kappa),
                piece_through(mode, x, y_hat, z, kappa),
            ) else {
                continue;
            };
            let slack = match mode {
                SurfaceMode::RefractorAbove | SurfaceMode::ReflectorAbove => pl - pb.min(ph),
                SurfaceMode::RefractorBelow | SurfaceMode::ReflectorBelow => pb.max(ph) - pl,
            };
            let ratio = slack / (dy2 * dx2);
            samples += 1;
            if best.as_ref().map_or(true, |(r, _)| ratio < *r) {
                best = Some((ratio, Witness { x: x.clone(), y: y_l.coords(), lambda: *lambda, value: slack }));
            }
        }
    }
    let Some((c1, witness)) = best else {
        return Ok(skipped());
    };
    let mut report = RegularityReport::from_margin(c1, Method::Sampling);
    report.c1_fit = Some(c1);
    report.samples = samples;
    if report.verdict != Verdict::Regular {
        report.witness = Some(witness);
    }
    Ok(report)
}

/// Result of testing `E(Y_lambda) ⊆ E(Y_bar) ∪ E(Y_hat)` by sampling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InclusionReport {
    /// `None` when `H` cannot be evaluated along the wedge (discrete targets).
    pub concavity_holds: Option<bool>,
    /// Smallest `G(v_l) - ((1-l) G(v_bar) + l G(v_hat))` on the grid.
    pub concavity_worst: Option<f64>,
    pub samples: usize,
    pub violations: usize,
    /// Values of `lambda` whose ray missed the target.
    pub skipped_lambdas: Vec<f64>,
    pub witness: Option<Witness>,
}

/// Uniform direction on the unit sphere of `R^{n+1}`.
pub fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> DVector<f64> {
    loop {
        let v = DVector::from_fn(dim, |_, _| rng.random_range(-1.0..1.0));
        let r = v.norm();
        if r > 1e-3 && r <= 1.0 {
            return v / r;
        }
    }
}

/// Samples the boundary of the solid ellipsoid `E(Y_lambda, c(X0, Y_lambda))`
/// and checks each point against `E(Y_bar) ∪ E(Y_hat)` (parameters through
/// `X0`) within `1e-9`; also checks the midpoint concavity of `1/H`.
pub fn ellipsoid_union_inclusion_check(
    x0: &SpacePoint,
    y_bar: &SpacePoint,
    y_hat: &SpacePoint,
    lambdas: &[f64],
    concavity_grid: &[f64],
    target: &Target,
    kappa: f64,
    n_samples: usize,
    seed: u64,
    cfg: &IntersectConfig,
) -> Result<InclusionReport> {
    let v_bar = gradient_toward(OpticsKind::Refractor, x0, y_bar, kappa)?;
    let v_hat = gradient_toward(OpticsKind::Refractor, x0, y_hat, kappa)?;
    let g = |l: f64| -> Result<f64> { Ok(stretch_h(interpolate(&v_bar, &v_hat, l).as_slice(), x0, target, kappa, cfg)?.g) };

    let (concavity_holds, concavity_worst) = match (g(0.0), g(1.0)) {
        (Ok(g0), Ok(g1)) => {
            let mut worst = f64::INFINITY;
            let mut ok = true;
            for &l in concavity_grid {
                match g(l) {
                    Ok(gl) => worst = worst.min(gl - ((1.0 - l) * g0 + l * g1)),
                    Err(_) => ok = false,
                }
            }
            if ok {
                (Some(worst >= -1e-12), Some(worst))
            } else {
                (None, None)
            }
        }
        _ => (None, None),
    };

    let b_bar = focal_parameter(x0, y_bar, kappa)?;
    let b_hat = focal_parameter(x0, y_hat, kappa)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = x0.dim() + 1;
    let mut samples = 0;
    let mut violations = 0;
    let mut skipped = Vec::new();
    let mut witness: Option<Witness> = None;
    for &l in lambdas {
        let v = interpolate(&v_bar, &v_hat, l);
        let dir = crate::optics::refraction_direction(v.as_slice(), kappa).direction;
        let y_l = match ray_target_intersection(x0, &dir, target, cfg) {
            Ok(hit) => hit.point,
            Err(_) => {
                skipped.push(l);
                continue;
            }
        };
        let b_l = focal_parameter(x0, &y_l, kappa)?;
        let center = y_l.to_vector();
        for _ in 0..n_samples {
            let w = random_unit(&mut rng, dim);
            let r = b_l / (1.0 + kappa * w[dim - 1]);
            let x = SpacePoint::from_vector(&(&center + w * r));
            let excess = (focal_parameter(&x, y_bar, kappa)? - b_bar).min(focal_parameter(&x, y_hat, kappa)? - b_hat);
            samples += 1;
            if excess > 1e-9 {
                violations += 1;
                if witness.as_ref().map_or(true, |w| excess > w.value) {
                    witness = Some(Witness { x: x.coords(), y: y_l.coords(), lambda: l, value: excess });
                }
            }
        }
    }
    Ok(InclusionReport { concavity_holds, concavity_worst, samples, violations, skipped_lambdas: skipped, witness })
}

/// Distance from a point to a polyline.
fn polyline_distance(p: &DVector<f64>, nodes: &[DVector<f64>]) -> f64 {
    if nodes.len() == 1 {
        return (p - &nodes[0]).norm();
    }
    nodes
        .windows(2)
        .map(|w| {
            let d = &w[1] - &w[0];
            let len2 = d.norm_squared();
            let t = if len2 > 0.0 { ((p - &w[0]).dot(&d) / len2).clamp(0.0, 1.0) } else { 0.0 };
            (p - (&w[0] + d * t)).norm()
        })
        .fold(f64::INFINITY, f64::min)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TubeMeasure {
    pub measured: f64,
    /// `measured / (mu^{n-1} |Y_bar - Y_hat|)`; absent when the endpoints coincide.
    pub bound_ratio: Option<f64>,
}

/// `sigma` of the receiver points within `mu` of the wedge curve from `z`,
/// by midpoint quadrature with `per_axis` cells per axis over the graph box.
pub fn tube_measure_check(
    graph: &GraphSurface,
    z: &SpacePoint,
    y_bar: &SpacePoint,
    y_hat: &SpacePoint,
    mu: f64,
    kappa: f64,
    per_axis: usize,
    exec: Execution,
) -> Result<TubeMeasure> {
    let target = Target::Graph(graph.clone());
    let grid: Vec<f64> = (0..=256).map(|k| k as f64 / 256.0).collect();
    let curve = wedge_curve(OpticsKind::Refractor, z, y_bar, y_hat, &target, kappa, &grid, &IntersectConfig::default())?;
    let nodes: Vec<DVector<f64>> = curve.samples.iter().map(|(_, y)| y.to_vector()).collect();
    let axes: Vec<Vec<f64>> = graph
        .lo
        .iter()
        .zip(&graph.hi)
        .map(|(a, b)| (0..per_axis).map(|i| a + (b - a) * (i as f64 + 0.5) / per_axis as f64).collect())
        .collect();
    let cell: f64 = graph.lo.iter().zip(&graph.hi).map(|(a, b)| (b - a) / per_axis as f64).product();
    let points = tensor_product(&axes);
    let contributions = map_slice(exec, &points, |y| {
        let p = graph.point(y).to_vector();
        if polyline_distance(&p, &nodes) < mu {
            (graph.density)(y) * graph.area_element(y) * cell
        } else {
            0.0
        }
    });
    let measured: f64 = contributions.iter().sum();
    let dy = y_bar.dist(y_hat);
    let n = graph.dim() as i32;
    Ok(TubeMeasure { measured, bound_ratio: (dy > 0.0).then(|| measured / (mu.powi(n - 1) * dy)) })
}

fn check_holder_domain(n: u32, q_lt_bound: bool, q_ge_one: bool) -> Result<()> {
    if n == 0 {
        return Err(Error::Domain("dimension must be at least 1".into()));
    }
    if !q_ge_one || (n > 1 && !q_lt_bound) {
        return Err(Error::Domain(format!("q must satisfy 1 <= q < n/(n-1) for n = {n}")));
    }
    Ok(())
}

/// `alpha = (n/(2q) - (n-1)/2) / (1 + 3(n-1)/2 + n/(2q))`.
pub fn holder_exponent(n: u32, q: f64) -> Result<f64> {
    let nf = n as f64;
    check_holder_domain(n, q * (nf - 1.0) < nf, q >= 1.0 && q.is_finite())?;
    let a = nf / (2.0 * q);
    Ok((a - (nf - 1.0) / 2.0) / (1.0 + 1.5 * (nf - 1.0) + a))
}

/// Exact rational version of [`holder_exponent`].
pub fn holder_exponent_rational(n: u32, q: Ratio<i64>) -> Result<Ratio<i64>> {
    let nr = Ratio::from_integer(n as i64);
    let one = Ratio::from_integer(1);
    check_holder_domain(n, q * (nr - one) < nr, q >= one)?;
    let two = Ratio::from_integer(2);
    let a = nr / (two * q);
    Ok((a - (nr - one) / two) / (one + Ratio::new(3, 2) * (nr - one) + a))
}

/// Outcome of the tube inclusion experiment for one pair `(x_bar, x_hat)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TubeInclusion {
    pub x_bar: Vec<f64>,
    pub x_hat: Vec<f64>,
    pub atoms: (usize, usize),
    pub x0: Vec<f64>,
    pub ratio: f64,
    pub mu: f64,
    pub tube_points: usize,
    /// Largest distance from `x0` to the point where a tube point's piece touches `u`.
    pub eta_needed: f64,
    /// Smallest `M` with `eta = M |x_bar - x_hat|^{1/2} / |Y_bar - Y_hat|^{1/2}` covering all tube points.
    pub m_cal: f64,
}

/// Locates `x0` where the pieces through `(x_bar, u(x_bar))` and
/// `(x_hat, u(x_hat))` cross, samples receiver points within `mu` of the
/// wedge `{Y(lambda) : 1/4 <= lambda <= 3/4}` from `(x0, u(x0))`, and for
/// each finds where its piece first touches `u` (the minimizer of
/// `c((x, u(x)), Y)` over the sampled graph). `F_u(B_eta(x0))` contains the
/// tube once `eta` reaches the largest such distance.
pub fn tube_inclusion_experiment(
    surface: &PiecewiseSurface,
    source: &SourceDensity,
    carrier: &GraphSurface,
    x_bar: &[f64],
    x_hat: &[f64],
    tube_samples: usize,
    exec: Execution,
) -> Result<TubeInclusion> {
    if x_bar == x_hat {
        return Err(Error::InvalidInput("the pair must be distinct".into()));
    }
    let kappa = surface.kappa;
    let mode = surface.mode;
    let i = surface.evaluate(x_bar)?.active_index;
    let j = surface.evaluate(x_hat)?.active_index;
    let (y_bar, y_hat) = (surface.pieces[i].focus.clone(), surface.pieces[j].focus.clone());
    let dx = x_bar.iter().zip(x_hat).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    let dy = y_bar.dist(&y_hat);
    let ratio = dy / dx;
    if ratio < 1.0 {
        return Err(Error::InvalidInput(format!("ratio |dY|/|dx| = {ratio} is below 1")));
    }
    let x0 = if i == j { x_bar.to_vec() } else { crate::solver::locate_crossing(surface, i, j, x_bar, x_hat)? };
    let z = SpacePoint::from_slice(&x0, surface.height(&x0)?);
    let mu = dy.powf(1.5) * dx.sqrt();

    let target = Target::Graph(carrier.clone());
    let band: Vec<f64> = (0..=32).map(|k| 0.25 + 0.5 * k as f64 / 32.0).collect();
    let curve = wedge_curve(mode.optics(), &z, &y_bar, &y_hat, &target, kappa, &band, &IntersectConfig::default())?;

    // Receiver points in the tube: perturb curve points horizontally and keep
    // those within mu of the curve.
    let nodes: Vec<DVector<f64>> = curve.samples.iter().map(|(_, y)| y.to_vector()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let n = carrier.dim();
    let mut tube: Vec<SpacePoint> = curve.samples.iter().map(|(_, y)| y.clone()).collect();
    while tube.len() < tube_samples.max(curve.samples.len()) {
        let k = rng.random_range(0..curve.samples.len());
        let offset = random_unit(&mut rng, n) * (mu * rng.random_range(0.0..1.0));
        let y: Vec<f64> = curve.samples[k].1.horizontal.iter().zip(offset.iter()).map(|(a, d)| a + d).collect();
        if !carrier.contains(&y) {
            continue;
        }
        let p = carrier.point(&y);
        if polyline_distance(&p.to_vector(), &nodes) < mu {
            tube.push(p);
        }
    }

    // Sampled graph of u: cell centers plus every interface crossing.
    let mut base: Vec<Vec<f64>> = source.centers.clone();
    base.extend(interfaces(surface, source, exec)?.into_iter().map(|f| f.point));
    base.push(x0.clone());
    let graph: Vec<(Vec<f64>, SpacePoint)> = base
        .iter()
        .map(|x| surface.height(x).map(|h| (x.clone(), SpacePoint::from_slice(x, h))))
        .collect::<Result<_>>()?;
    let take_inf = matches!(mode, SurfaceMode::RefractorAbove | SurfaceMode::ReflectorBelow);
    let distances = map_slice(exec, &tube, |y| -> Result<f64> {
        let mut best: Option<(f64, &Vec<f64>)> = None;
        for (x, p) in &graph {
            let c = focal_parameter_for(mode.optics(), p, y, kappa)?;
            let key = if take_inf { c } else { -c };
            if best.map_or(true, |(k, _)| key < k) {
                best = Some((key, x));
            }
        }
        let (_, x) = best.expect("graph sample is nonempty");
        Ok(x.iter().zip(&x0).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
    });
    let mut eta_needed = 0.0f64;
    for d in distances {
        eta_needed = eta_needed.max(d?);
    }
    Ok(TubeInclusion {
        x_bar: x_bar.to_vec(),
        x_hat: x_hat.to_vec(),
        atoms: (i, j),
        x0,
        ratio,
        mu,
        tube_points: tube.len(),
        eta_needed,
        m_cal: eta_needed * (dy / dx).sqrt(),
    })
}
