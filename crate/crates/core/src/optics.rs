//! Refraction and reflection geometry: exit directions, focal parameters,
//! ellipsoid and paraboloid height functions with analytic derivatives, and
//! the admissible target regions.
//!
//! Ellipsoids are `E(Y, b) = {X : |X - Y| + kappa (x_{n+1} - y_{n+1}) = b}`;
//! their lower part is the graph of
//!
//! ```text
//! phi(x) = y_{n+1} - kappa b / (1 - kappa^2) - sqrt(b^2 / (1 - kappa^2)^2 - |x - y|^2 / (1 - kappa^2))
//! ```
//!
//! and refracts the vertical beam through the focus `Y`. Downward
//! paraboloids `|X - Y| + x_{n+1} - y_{n+1} = b` are the graphs of
//! `p(x) = y_{n+1} + (b^2 - |x - y|^2) / (2b)` and reflect the beam into `Y`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{horizontal_dist_sq, Cylinder, OpticalConfig, OpticsKind, SpacePoint};

/// Smallest radicand accepted when evaluating an ellipsoid graph.
pub const RADICAND_EPS: f64 = 1e-14;

/// Refracted direction of the vertical ray at a surface with gradient `v`.
#[derive(Debug, Clone, PartialEq)]
pub struct Refraction {
    /// `Lambda(v) = (-Q v, Q + kappa)`, a unit `(n+1)`-vector.
    pub direction: DVector<f64>,
    pub q: f64,
}

/// `Q(v) = (sqrt(1 + (1 - kappa^2)|v|^2) - kappa) / (1 + |v|^2)`.
pub fn q_factor(v_norm_sq: f64, kappa: f64) -> f64 {
    ((1.0 + (1.0 - kappa * kappa) * v_norm_sq).sqrt() - kappa) / (1.0 + v_norm_sq)
}

pub fn refraction_direction(v: &[f64], kappa: f64) -> Refraction {
    let v2: f64 = v.iter().map(|a| a * a).sum();
    let q = q_factor(v2, kappa);
    let n = v.len();
    let mut direction = DVector::zeros(n + 1);
    for (d, vi) in direction.iter_mut().zip(v) {
        *d = -q * vi;
    }
    direction[n] = q + kappa;
    Refraction { direction, q }
}

/// Reflected direction `(2v, |v|^2 - 1) / (1 + |v|^2)` of the vertical ray.
pub fn reflection_direction(v: &[f64]) -> DVector<f64> {
    let v2: f64 = v.iter().map(|a| a * a).sum();
    let n = v.len();
    let mut d = DVector::zeros(n + 1);
    for (di, vi) in d.iter_mut().zip(v) {
        *di = 2.0 * vi / (1.0 + v2);
    }
    d[n] = (v2 - 1.0) / (1.0 + v2);
    d
}

/// Exit direction for either optics kind.
pub fn exit_direction(kind: OpticsKind, v: &[f64], kappa: f64) -> DVector<f64> {
    match kind {
        OpticsKind::Refractor => refraction_direction(v, kappa).direction,
        OpticsKind::Reflector => reflection_direction(v),
    }
}

/// `c(X, Y) = |X - Y| + kappa (x_{n+1} - y_{n+1})`: the parameter of the
/// unique ellipsoid with upper focus `Y` through `X`.
pub fn focal_parameter(x: &SpacePoint, y: &SpacePoint, kappa: f64) -> Result<f64> {
    let d = x.dist(y);
    if d == 0.0 {
        return Err(Error::CoincidentPoints);
    }
    Ok(d + kappa * (x.height - y.height))
}

/// `|X - Y| + x_{n+1} - y_{n+1}`: the parameter of the paraboloid with focus
/// `Y` through `X`. Zero (rejected) when `X` sits on the vertical ray below `Y`.
pub fn reflector_focal_parameter(x: &SpacePoint, y: &SpacePoint) -> Result<f64> {
    let d = x.dist(y);
    if d == 0.0 {
        return Err(Error::CoincidentPoints);
    }
    let b = d + x.height - y.height;
    if b <= 1e-15 * d.max(1.0) {
        return Err(Error::InvalidInput(
            "base point lies on the vertical ray below the focus; paraboloid is degenerate".into(),
        ));
    }
    Ok(b)
}

/// Focal parameter for the given optics kind.
pub fn focal_parameter_for(kind: OpticsKind, x: &SpacePoint, y: &SpacePoint, kappa: f64) -> Result<f64> {
    match kind {
        OpticsKind::Refractor => focal_parameter(x, y, kappa),
        OpticsKind::Reflector => reflector_focal_parameter(x, y),
    }
}

/// Lower part of the ellipsoid of revolution `E(Y, b)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EllipsoidPiece {
    pub focus: SpacePoint,
    pub b: f64,
}

/// Analytic derivatives of an ellipsoid height function.
#[derive(Debug, Clone, PartialEq)]
pub struct EllipsoidDerivatives {
    pub grad_x: DVector<f64>,
    pub hess_xx: DMatrix<f64>,
    /// `d^2 phi / dx_i dy_j` with `b = c(X0, Y)` held to the base point; `n x (n+1)`.
    pub mixed_xy: Option<DMatrix<f64>>,
    /// `d phi / d x0_{n+1}` through `b = c(X0, Y)`.
    pub d_base_height: Option<f64>,
}

impl EllipsoidPiece {
    pub fn new(focus: SpacePoint, b: f64) -> Result<Self> {
        if !(b > 0.0 && b.is_finite()) {
            return Err(Error::InvalidInput(format!("ellipsoid parameter must be positive, got {b}")));
        }
        Ok(Self { focus, b })
    }

    /// The ellipsoid with focus `focus` passing through `base`.
    pub fn through(focus: SpacePoint, base: &SpacePoint, kappa: f64) -> Result<Self> {
        let b = focal_parameter(base, &focus, kappa)?;
        Self::new(focus, b)
    }

    /// Radius `b / sqrt(1 - kappa^2)` of the horizontal projection.
    pub fn domain_radius(&self, kappa: f64) -> f64 {
        self.b / (1.0 - kappa * kappa).sqrt()
    }

    fn radicand(&self, x: &[f64], kappa: f64) -> f64 {
        let a = 1.0 - kappa * kappa;
        let r2 = horizontal_dist_sq(x, self.focus.horizontal.as_slice());
        self.b * self.b / (a * a) - r2 / a
    }

    fn checked_root(&self, x: &[f64], kappa: f64) -> Result<f64> {
        let radicand = self.radicand(x, kappa);
        if radicand < RADICAND_EPS || !radicand.is_finite() {
            return Err(Error::OutOfDomain { radicand });
        }
        Ok(radicand.sqrt())
    }

    pub fn in_domain(&self, x: &[f64], kappa: f64) -> bool {
        self.radicand(x, kappa) >= RADICAND_EPS
    }

    pub fn height(&self, x: &[f64], kappa: f64) -> Result<f64> {
        let root = self.checked_root(x, kappa)?;
        Ok(self.focus.height - kappa * self.b / (1.0 - kappa * kappa) - root)
    }

    /// `y_{n+1} - x_{n+1} - kappa |X - Y|` at `X = (x, phi(x))`; nonnegative on the lower part.
    pub fn lower_part_slack(&self, x: &[f64], kappa: f64) -> Result<f64> {
        let h = self.height(x, kappa)?;
        let p = SpacePoint::from_slice(x, h);
        Ok(self.focus.height - h - kappa * p.dist(&self.focus))
    }

    /// `D_x phi = (x - y) / ((1 - kappa^2) sqrt(...))`.
    pub fn gradient(&self, x: &[f64], kappa: f64) -> Result<DVector<f64>> {
        let root = self.checked_root(x, kappa)?;
        let scale = 1.0 / ((1.0 - kappa * kappa) * root);
        Ok(DVector::from_iterator(
            x.len(),
            x.iter().zip(self.focus.horizontal.iter()).map(|(xi, yi)| (xi - yi) * scale),
        ))
    }

    /// The same gradient written through the point on the graph:
    /// `D_x phi = (x - y) / (y_{n+1} - x_{n+1} - kappa |X - Y|)`.
    pub fn gradient_via_surface_point(&self, x: &[f64], kappa: f64) -> Result<DVector<f64>> {
        let slack = self.lower_part_slack(x, kappa)?;
        Ok(DVector::from_iterator(
            x.len(),
            x.iter().zip(self.focus.horizontal.iter()).map(|(xi, yi)| (xi - yi) / slack),
        ))
    }

    /// `d phi / d b` at fixed focus.
    pub fn height_b_derivative(&self, x: &[f64], kappa: f64) -> Result<f64> {
        let a = 1.0 - kappa * kappa;
        let root = self.checked_root(x, kappa)?;
        Ok(-kappa / a - self.b / (a * a * root))
    }

    /// Gradient, Hessian and (given the base point `X0` that fixes
    /// `b = c(X0, Y)`) the mixed `x`-`Y` block and the base-height derivative.
    pub fn derivatives(&self, x: &[f64], kappa: f64, base: Option<&SpacePoint>) -> Result<EllipsoidDerivatives> {
        let n = x.len();
        let a = 1.0 - kappa * kappa;
        let root = self.checked_root(x, kappa)?;
        let d: Vec<f64> = x.iter().zip(self.focus.horizontal.iter()).map(|(xi, yi)| xi - yi).collect();

        let grad_x = DVector::from_iterator(n, d.iter().map(|di| di / (a * root)));
        let hess_xx = DMatrix::from_fn(n, n, |i, j| {
            let delta = if i == j { 1.0 } else { 0.0 };
            delta / (a * root) + d[i] * d[j] / (a * a * root.powi(3))
        });

        let (mixed_xy, d_base_height) = match base {
            None => (None, None),
            Some(x0) => {
                let dist0 = x0.dist(&self.focus);
                if dist0 == 0.0 {
                    return Err(Error::CoincidentPoints);
                }
                // db/dy_j for b = c(X0, Y).
                let db_dy: Vec<f64> = (0..=n)
                    .map(|j| {
                        if j < n {
                            -(x0.horizontal[j] - self.focus.horizontal[j]) / dist0
                        } else {
                            -(x0.height - self.focus.height) / dist0 - kappa
                        }
                    })
                    .collect();
                let mixed = DMatrix::from_fn(n, n + 1, |i, j| {
                    let delta = if i == j { 1.0 } else { 0.0 };
                    let horizontal = if j < n { d[j] / a } else { 0.0 };
                    let droot = (self.b * db_dy[j] / (a * a) + horizontal) / root;
                    (-delta / root - d[i] * droot / (root * root)) / a
                });
                let dphi_db = self.height_b_derivative(x, kappa)?;
                let db_dh = (x0.height - self.focus.height) / dist0 + kappa;
                (Some(mixed), Some(dphi_db * db_dh))
            }
        };

        Ok(EllipsoidDerivatives { grad_x, hess_xx, mixed_xy, d_base_height })
    }
}

/// Downward paraboloid with focus `Y`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParaboloidPiece {
    pub focus: SpacePoint,
    pub b: f64,
}

/// Height and analytic derivatives of a paraboloid.
#[derive(Debug, Clone, PartialEq)]
pub struct ParaboloidDerivatives {
    pub height: f64,
    pub grad_x: DVector<f64>,
    pub hess_xx: DMatrix<f64>,
    pub mixed_xy: Option<DMatrix<f64>>,
    pub d_base_height: Option<f64>,
}

impl ParaboloidPiece {
    pub fn new(focus: SpacePoint, b: f64) -> Result<Self> {
        if !(b > 0.0 && b.is_finite()) {
            return Err(Error::InvalidInput(format!("paraboloid parameter must be positive, got {b}")));
        }
        Ok(Self { focus, b })
    }

    pub fn through(focus: SpacePoint, base: &SpacePoint) -> Result<Self> {
        let b = reflector_focal_parameter(base, &focus)?;
        Self::new(focus, b)
    }

    pub fn height(&self, x: &[f64]) -> f64 {
        let r2 = horizontal_dist_sq(x, self.focus.horizontal.as_slice());
        self.focus.height + (self.b * self.b - r2) / (2.0 * self.b)
    }

    pub fn gradient(&self, x: &[f64]) -> DVector<f64> {
        DVector::from_iterator(x.len(), x.iter().zip(self.focus.horizontal.iter()).map(|(xi, yi)| -(xi - yi) / self.b))
    }

    /// `d p / d b` at fixed focus.
    pub fn height_b_derivative(&self, x: &[f64]) -> f64 {
        let r2 = horizontal_dist_sq(x, self.focus.horizontal.as_slice());
        0.5 + r2 / (2.0 * self.b * self.b)
    }

    pub fn derivatives(&self, x: &[f64], base: Option<&SpacePoint>) -> Result<ParaboloidDerivatives> {
        let n = x.len();
        let b = self.b;
        let d: Vec<f64> = x.iter().zip(self.focus.horizontal.iter()).map(|(xi, yi)| xi - yi).collect();
        let (mixed_xy, d_base_height) = match base {
            None => (None, None),
            Some(x0) => {
                let dist0 = x0.dist(&self.focus);
                if dist0 == 0.0 {
                    return Err(Error::CoincidentPoints);
                }
                let db_dy: Vec<f64> = (0..=n)
                    .map(|j| {
                        if j < n {
                            -(x0.horizontal[j] - self.focus.horizontal[j]) / dist0
                        } else {
                            -(x0.height - self.focus.height) / dist0 - 1.0
                        }
                    })
                    .collect();
                let mixed = DMatrix::from_fn(n, n + 1, |i, j| {
                    let delta = if i == j { 1.0 } else { 0.0 };
                    delta / b + d[i] * db_dy[j] / (b * b)
                });
                let dp_db = self.height_b_derivative(x);
                let db_dh = (x0.height - self.focus.height) / dist0 + 1.0;
                (Some(mixed), Some(dp_db * db_dh))
            }
        };
        Ok(ParaboloidDerivatives {
            height: self.height(x),
            grad_x: self.gradient(x),
            hess_xx: DMatrix::identity(n, n) * (-1.0 / b),
            mixed_xy,
            d_base_height,
        })
    }
}

/// Outcome of the admissible-region test for one target point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdmissibilityReport {
    pub admissible: bool,
    /// Worst slack over the verification points; positive when admissible.
    pub margin: f64,
    /// Refractor only: worst `y_{n+1} - x_{n+1} - kappa|X - Y| - beta c(X, Y)`.
    pub beta_margin: Option<f64>,
    /// Cylinder point attaining the worst slack.
    pub worst_point: Vec<f64>,
}

/// Default verification grid resolution per axis.
pub const ADMISSIBILITY_GRID: usize = 32;

/// Tests whether `y` lies in the admissible target region for the cylinder.
///
/// Refractor: every `X0` of the cylinder lies on the lower part of
/// `E(Y, c(X0, Y))` and `Omega` sits inside the ball of radius
/// `delta c(X0, Y) / sqrt(1 - kappa^2)` about `y`. Reflector: every `X` of the
/// cylinder satisfies `|X - Y| + x_{n+1} - y_{n+1} >= beta`.
pub fn admissible_region_check(
    y: &SpacePoint,
    cyl: &Cylinder,
    cfg: &OpticalConfig,
    kind: OpticsKind,
    per_axis: usize,
) -> AdmissibilityReport {
    let kappa = cfg.kappa;
    let far = cyl.omega.max_dist_from(y.horizontal.as_slice());
    let mut margin = f64::INFINITY;
    let mut beta_margin = f64::INFINITY;
    let mut worst = Vec::new();
    for x0 in cyl.verification_points(per_axis) {
        let dist = x0.dist(y);
        let slack = match kind {
            OpticsKind::Refractor => {
                if dist == 0.0 {
                    f64::NEG_INFINITY
                } else {
                    let lower = y.height - x0.height - kappa * dist;
                    let c = dist + kappa * (x0.height - y.height);
                    let ball = cfg.delta * c / (1.0 - kappa * kappa).sqrt() - far;
                    beta_margin = beta_margin.min(lower - cfg.beta() * c);
                    lower.min(ball)
                }
            }
            OpticsKind::Reflector => dist + x0.height - y.height - cfg.beta_reflector,
        };
        if slack < margin {
            margin = slack;
            worst = x0.coords();
        }
    }
    let admissible = match kind {
        OpticsKind::Refractor => margin > 0.0,
        OpticsKind::Reflector => margin >= 0.0,
    };
    AdmissibilityReport {
        admissible,
        margin,
        beta_margin: (kind == OpticsKind::Refractor).then_some(beta_margin),
        worst_point: worst,
    }
}
