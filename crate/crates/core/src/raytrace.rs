//! Physical checks: refract or reflect vertical rays at the computed surface
//! with Snell's law written through the unit normal, and measure how close
//! the exit rays pass to their foci. Also reproduces the two explicit
//! counterexamples for the horizontal plane and for a three-point target.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{map_slice, Execution};
use crate::geometry::SpacePoint;
use crate::optics::{focal_parameter, EllipsoidPiece};
use crate::surface::{PiecewiseSurface, TIE_EPS};

/// Unit vertical `e_{n+1}` in `R^{n+1}`.
fn vertical(dim: usize) -> DVector<f64> {
    let mut e = DVector::zeros(dim);
    e[dim - 1] = 1.0;
    e
}

/// Refraction of the upward vertical ray at a surface with upper unit
/// normal `N`: `kappa e + delta N` with
/// `delta = -kappa e.N + sqrt(1 + kappa^2 ((e.N)^2 - 1))`.
pub fn snell_refract(normal: &DVector<f64>, kappa: f64) -> DVector<f64> {
    let e = vertical(normal.len());
    let en = normal[normal.len() - 1];
    let delta = -kappa * en + (1.0 + kappa * kappa * (en * en - 1.0)).sqrt();
    e * kappa + normal * delta
}

/// Mirror image of the upward vertical ray: `e - 2 (e.N) N`.
pub fn mirror_reflect(normal: &DVector<f64>) -> DVector<f64> {
    let e = vertical(normal.len());
    let en = normal[normal.len() - 1];
    e - normal * (2.0 * en)
}

/// Upper unit normal `(-v, 1)/sqrt(1 + |v|^2)` of a graph with gradient `v`.
pub fn upper_normal(v: &[f64]) -> DVector<f64> {
    let mut n = DVector::zeros(v.len() + 1);
    for (a, b) in n.iter_mut().zip(v) {
        *a = -b;
    }
    n[v.len()] = 1.0;
    let norm = n.norm();
    n / norm
}

/// Distance from `p` to the line `a + s d`.
pub fn point_line_distance(p: &DVector<f64>, a: &DVector<f64>, d: &DVector<f64>) -> f64 {
    let w = p - a;
    let unit = d / d.norm();
    (&w - &unit * unit.dot(&w)).norm()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceResult {
    pub origin: Vec<f64>,
    pub hit: Vec<f64>,
    pub exit: Vec<f64>,
    /// Distance from the assigned focus to the exit line.
    pub distance: f64,
    pub atom: usize,
    /// The ray hit the tie set; excluded from the summary.
    pub tie: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub rays: usize,
    pub ties: usize,
    pub max_distance: f64,
    pub mean_distance: f64,
    /// Fraction of non-tie rays sent to each piece.
    pub fractions: Vec<f64>,
}

/// Trace one vertical ray from each origin through the surface.
pub fn trace_bundle(surface: &PiecewiseSurface, origins: &[Vec<f64>], exec: Execution) -> Result<(Vec<TraceResult>, TraceSummary)> {
    let results: Vec<TraceResult> = map_slice(exec, origins, |x| -> Result<TraceResult> {
        let e = surface.evaluate(x)?;
        let grad = surface.piece_gradient(e.active_index, x)?;
        let normal = upper_normal(grad.as_slice());
        let exit = if surface.mode.is_refractor() { snell_refract(&normal, surface.kappa) } else { mirror_reflect(&normal) };
        let hit = SpacePoint::from_slice(x, e.height).to_vector();
        let focus = surface.pieces[e.active_index].focus.to_vector();
        Ok(TraceResult {
            origin: x.clone(),
            hit: hit.iter().copied().collect(),
            exit: exit.iter().copied().collect(),
            distance: point_line_distance(&focus, &hit, &exit),
            atom: e.active_index,
            tie: e.near_tie,
        })
    })
    .into_iter()
    .collect::<Result<_>>()?;
    let clean: Vec<&TraceResult> = results.iter().filter(|r| !r.tie).collect();
    let mut fractions = vec![0.0; surface.len()];
    for r in &clean {
        fractions[r.atom] += 1.0;
    }
    let count = clean.len().max(1) as f64;
    fractions.iter_mut().for_each(|f| *f /= count);
    let summary = TraceSummary {
        rays: results.len(),
        ties: results.len() - clean.len(),
        max_distance: clean.iter().map(|r| r.distance).fold(0.0, f64::max),
        mean_distance: clean.iter().map(|r| r.distance).sum::<f64>() / count,
        fractions,
    };
    Ok((results, summary))
}

/// The three-point counterexample data.
pub mod three_point {
    pub const KAPPA: f64 = 2.0 / 3.0;
    pub const Y1: [f64; 2] = [0.03, 5.0];
    pub const Y2: [f64; 2] = [-0.03, 5.0];
    pub const P: [f64; 2] = [0.0, 4.70456];
    pub const Y3: [f64; 2] = [0.0, 10.0];
    /// Half-width of the window where local support is checked.
    pub const LOCAL: f64 = 0.01;
    /// Scan range and step of the witness search.
    pub const SCAN: f64 = 0.2;
    pub const STEP: f64 = 1e-3;
    /// Half-width of the window in which the reported witness is chosen.
    pub const WINDOW: f64 = 0.15;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThreePointReport {
    pub c_p_y1: f64,
    pub c_p_y2: f64,
    pub b3: f64,
    /// `min (phi_3 - R)` over `|x| <= 0.01`; nonnegative (up to the tie
    /// tolerance) when `phi_3` supports locally.
    pub local_min_gap: f64,
    pub local_support: bool,
    /// Point of `|x| <= 0.15` with the largest `R - phi_3`.
    pub witness_x: f64,
    pub witness_gap: f64,
    /// Scan points of `[-0.2, 0.2]` where `R > phi_3`.
    pub failing_points: usize,
    /// Largest `R - phi_3` over the whole scan.
    pub scan_max_gap: f64,
    pub scan_max_x: f64,
}

/// `R = min` of the pieces defined at `x`; `None` if none is.
fn lower_envelope(pieces: &[EllipsoidPiece], x: f64, kappa: f64) -> Option<f64> {
    pieces.iter().filter_map(|p| p.height(&[x], kappa).ok()).reduce(f64::min)
}

pub fn three_point_counterexample() -> Result<ThreePointReport> {
    use three_point::*;
    let pt = |c: [f64; 2]| SpacePoint::from_slice(&c[..1], c[1]);
    let p = pt(P);
    let e1 = EllipsoidPiece::through(pt(Y1), &p, KAPPA)?;
    let e2 = EllipsoidPiece::through(pt(Y2), &p, KAPPA)?;
    let e3 = EllipsoidPiece::through(pt(Y3), &p, KAPPA)?;
    let pair = [e1.clone(), e2.clone()];

    let steps = (SCAN / STEP).round() as i64;
    let xs: Vec<f64> = (-steps..=steps).map(|k| k as f64 * STEP).collect();
    let gaps: Vec<(f64, f64)> = xs
        .iter()
        .filter_map(|&x| Some((x, lower_envelope(&pair, x, KAPPA)? - e3.height(&[x], KAPPA).ok()?)))
        .collect();

    let local: Vec<f64> = gaps.iter().filter(|(x, _)| x.abs() <= LOCAL + 1e-12).map(|(_, g)| -g).collect();
    let local_min_gap = local.iter().copied().fold(f64::INFINITY, f64::min);
    let better = |a: &(f64, f64), b: &(f64, f64)| a.1.total_cmp(&b.1).then(a.0.total_cmp(&b.0));
    let (witness_x, witness_gap) = gaps
        .iter()
        .filter(|(x, _)| x.abs() <= WINDOW + 1e-12)
        .copied()
        .max_by(better)
        .ok_or_else(|| Error::Configuration("no scan point inside the witness window".into()))?;
    let (scan_max_x, scan_max_gap) = gaps.iter().copied().max_by(better).unwrap_or((f64::NAN, f64::NAN));
    Ok(ThreePointReport {
        c_p_y1: e1.b,
        c_p_y2: e2.b,
        b3: e3.b,
        local_min_gap,
        local_support: local_min_gap >= -TIE_EPS,
        witness_x,
        witness_gap,
        failing_points: gaps.iter().filter(|(_, g)| *g > TIE_EPS).count(),
        scan_max_gap,
        scan_max_x,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HorizontalPlaneReport {
    pub kappa: f64,
    pub b: f64,
    pub b0: f64,
    /// `phi_0(0,0) - phi_bar(0,0)`.
    pub value_gap: f64,
    pub first_derivative: f64,
    pub second_derivative: f64,
}

/// Two-dimensional horizontal-plane counterexample: `phi_bar` has focus
/// `(0, -1, 0)` and parameter `b`; `phi_0` has focus at the origin and
/// `b0 = (kappa b + sqrt(b^2 - (1 - kappa^2))) / (1 + kappa)`, so both pass
/// through the same point above the origin. Returns finite-difference
/// derivatives at 0 of `g - h` with `g(x) = phi_0(x, 0)`, `h(x) = phi_bar(x, 0)`.
pub fn horizontal_plane_check(kappa: f64, b: f64) -> Result<HorizontalPlaneReport> {
    if !(kappa > 0.0 && kappa < 1.0) {
        return Err(Error::Domain(format!("kappa must lie in (0,1), got {kappa}")));
    }
    let radicand = b * b - (1.0 - kappa * kappa);
    if !(radicand > 0.0) {
        return Err(Error::Domain(format!("b^2 must exceed 1 - kappa^2; got b = {b}")));
    }
    let b0 = (kappa * b + radicand.sqrt()) / (1.0 + kappa);
    let bar = EllipsoidPiece::new(SpacePoint::from_coords(&[0.0, -1.0, 0.0])?, b)?;
    let zero = EllipsoidPiece::new(SpacePoint::from_coords(&[0.0, 0.0, 0.0])?, b0)?;
    let diff = |x: f64| -> Result<f64> { Ok(zero.height(&[x, 0.0], kappa)? - bar.height(&[x, 0.0], kappa)?) };
    let h1 = 1e-4;
    let h2 = 1e-3;
    let d0 = diff(0.0)?;
    let first = (diff(h1)? - diff(-h1)?) / (2.0 * h1);
    let second = (-diff(2.0 * h2)? + 16.0 * diff(h2)? - 30.0 * d0 + 16.0 * diff(-h2)? - diff(-2.0 * h2)?) / (12.0 * h2 * h2);
    // the two pieces meet above the origin
    let check = focal_parameter(
        &SpacePoint::from_coords(&[0.0, 0.0, bar.height(&[0.0, 0.0], kappa)?])?,
        &zero.focus,
        kappa,
    )?;
    debug_assert!((check - b0).abs() < 1e-9);
    Ok(HorizontalPlaneReport { kappa, b, b0, value_gap: d0, first_derivative: first, second_derivative: second })
}
