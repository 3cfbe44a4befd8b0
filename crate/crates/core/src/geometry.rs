//! Points, optical constants and the source cylinder.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Global constants of the optical geometry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OpticalConfig {
    /// Ratio n1/n2 of refractive indices below and above the refractor.
    pub kappa: f64,
    /// Aperture parameter of the admissible refractor target region.
    pub delta: f64,
    /// Margin of the admissible reflector target region.
    pub beta_reflector: f64,
}

impl OpticalConfig {
    pub fn new(kappa: f64, delta: f64, beta_reflector: f64) -> Result<Self> {
        let cfg = Self { kappa, delta, beta_reflector };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.kappa > 0.0 && self.kappa < 1.0) {
            return Err(Error::InvalidInput(format!("kappa must lie in (0,1), got {}", self.kappa)));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::InvalidInput(format!("delta must lie in (0,1), got {}", self.delta)));
        }
        if !(self.beta_reflector > 0.0 && self.beta_reflector.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "beta_reflector must be positive, got {}",
                self.beta_reflector
            )));
        }
        Ok(())
    }

    /// Lower bound sqrt(1 - delta^2) for the lower-part slack of admissible targets.
    pub fn beta(&self) -> f64 {
        (1.0 - self.delta * self.delta).sqrt()
    }
}

/// A point `X = (x, x_{n+1})` of `R^{n+1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpacePoint {
    pub horizontal: DVector<f64>,
    pub height: f64,
}

impl SpacePoint {
    pub fn new(horizontal: DVector<f64>, height: f64) -> Self {
        Self { horizontal, height }
    }

    pub fn from_slice(horizontal: &[f64], height: f64) -> Self {
        Self::new(DVector::from_column_slice(horizontal), height)
    }

    /// Builds a point from all `n + 1` coordinates, height last.
    pub fn from_coords(coords: &[f64]) -> Result<Self> {
        match coords.split_last() {
            Some((&h, xs)) if !xs.is_empty() => Ok(Self::from_slice(xs, h)),
            _ => Err(Error::InvalidInput(format!(
                "a space point needs at least 2 coordinates, got {}",
                coords.len()
            ))),
        }
    }

    pub fn dim(&self) -> usize {
        self.horizontal.len()
    }

    pub fn coords(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.horizontal.iter().copied().collect();
        v.push(self.height);
        v
    }

    /// Full `(n+1)`-vector.
    pub fn to_vector(&self) -> DVector<f64> {
        DVector::from_vec(self.coords())
    }

    pub fn from_vector(v: &DVector<f64>) -> Self {
        let n = v.len() - 1;
        Self::new(v.rows(0, n).into_owned(), v[n])
    }

    pub fn dist(&self, other: &SpacePoint) -> f64 {
        self.dist_sq(other).sqrt()
    }

    pub fn dist_sq(&self, other: &SpacePoint) -> f64 {
        let dh = self.height - other.height;
        horizontal_dist_sq(self.horizontal.as_slice(), other.horizontal.as_slice()) + dh * dh
    }

    /// `self + s * dir` where `dir` is an `(n+1)`-vector.
    pub fn advance(&self, s: f64, dir: &DVector<f64>) -> SpacePoint {
        let n = self.dim();
        SpacePoint::new(&self.horizontal + dir.rows(0, n) * s, self.height + s * dir[n])
    }

    pub fn is_finite(&self) -> bool {
        self.height.is_finite() && self.horizontal.iter().all(|v| v.is_finite())
    }
}

pub(crate) fn horizontal_dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum()
}

/// Horizontal footprint `Omega` of the source beam.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Omega {
    Box { lo: Vec<f64>, hi: Vec<f64> },
    Ball { center: Vec<f64>, radius: f64 },
}

impl Omega {
    pub fn interval(lo: f64, hi: f64) -> Self {
        Omega::Box { lo: vec![lo], hi: vec![hi] }
    }

    pub fn dim(&self) -> usize {
        match self {
            Omega::Box { lo, .. } => lo.len(),
            Omega::Ball { center, .. } => center.len(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Omega::Box { lo, hi } => {
                if lo.is_empty() || lo.len() != hi.len() {
                    return Err(Error::InvalidInput("box corners must have equal, nonzero length".into()));
                }
                if lo.iter().zip(hi).any(|(a, b)| !(a < b) || !a.is_finite() || !b.is_finite()) {
                    return Err(Error::InvalidInput("box must satisfy lo < hi on every axis".into()));
                }
            }
            Omega::Ball { center, radius } => {
                if center.is_empty() || !(*radius > 0.0 && radius.is_finite()) {
                    return Err(Error::InvalidInput("ball needs a center and a positive radius".into()));
                }
            }
        }
        Ok(())
    }

    /// Axis-aligned bounding box.
    pub fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        match self {
            Omega::Box { lo, hi } => (lo.clone(), hi.clone()),
            Omega::Ball { center, radius } => (
                center.iter().map(|c| c - radius).collect(),
                center.iter().map(|c| c + radius).collect(),
            ),
        }
    }

    pub fn center(&self) -> Vec<f64> {
        match self {
            Omega::Box { lo, hi } => lo.iter().zip(hi).map(|(a, b)| 0.5 * (a + b)).collect(),
            Omega::Ball { center, .. } => center.clone(),
        }
    }

    /// Closed-set membership.
    pub fn contains(&self, x: &[f64]) -> bool {
        match self {
            Omega::Box { lo, hi } => x.iter().zip(lo.iter().zip(hi)).all(|(v, (a, b))| *v >= *a && *v <= *b),
            Omega::Ball { center, radius } => horizontal_dist_sq(x, center) <= radius * radius,
        }
    }

    /// Largest distance from `y` to a point of the closure of `Omega`.
    pub fn max_dist_from(&self, y: &[f64]) -> f64 {
        match self {
            Omega::Box { lo, hi } => y
                .iter()
                .zip(lo.iter().zip(hi))
                .map(|(v, (a, b))| {
                    let d = (v - a).abs().max((v - b).abs());
                    d * d
                })
                .sum::<f64>()
                .sqrt(),
            Omega::Ball { center, radius } => horizontal_dist_sq(y, center).sqrt() + radius,
        }
    }

    /// Lebesgue measure.
    pub fn volume(&self) -> f64 {
        match self {
            Omega::Box { lo, hi } => lo.iter().zip(hi).map(|(a, b)| b - a).product(),
            Omega::Ball { center, radius } => unit_ball_volume(center.len()) * radius.powi(center.len() as i32),
        }
    }

    /// Tensor grid of `per_axis` nodes per axis over the bounding box
    /// (endpoints included), filtered to the closure of `Omega`. For a ball
    /// the extreme points along each axis are appended.
    pub fn node_grid(&self, per_axis: usize) -> Vec<Vec<f64>> {
        let (lo, hi) = self.bounds();
        let per_axis = per_axis.max(2);
        let axes: Vec<Vec<f64>> = lo
            .iter()
            .zip(&hi)
            .map(|(a, b)| (0..per_axis).map(|i| a + (b - a) * i as f64 / (per_axis - 1) as f64).collect())
            .collect();
        let mut nodes: Vec<Vec<f64>> = tensor_product(&axes).into_iter().filter(|x| self.contains(x)).collect();
        if let Omega::Ball { center, radius } = self {
            for k in 0..center.len() {
                for sign in [-1.0, 1.0] {
                    let mut p = center.clone();
                    p[k] += sign * radius;
                    nodes.push(p);
                }
            }
        }
        nodes
    }
}

pub(crate) fn unit_ball_volume(n: usize) -> f64 {
    match n {
        0 => 1.0,
        1 => 2.0,
        _ => unit_ball_volume(n - 2) * 2.0 * std::f64::consts::PI / n as f64,
    }
}

/// All points of the Cartesian product of the given axes, first axis slowest.
pub fn tensor_product(axes: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = vec![Vec::new()];
    for axis in axes {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                axis.iter().map(move |&v| {
                    let mut p = prefix.clone();
                    p.push(v);
                    p
                })
            })
            .collect();
    }
    out
}

/// The source cylinder `C_Omega = Omega x (0, M)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cylinder {
    pub omega: Omega,
    pub height_max: f64,
}

impl Cylinder {
    pub fn new(omega: Omega, height_max: f64) -> Result<Self> {
        let c = Self { omega, height_max };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        self.omega.validate()?;
        if !(self.height_max > 0.0 && self.height_max.is_finite()) {
            return Err(Error::InvalidInput("cylinder height must be positive".into()));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.omega.dim()
    }

    /// Verification points: an `(n+1)`-dimensional node grid over the closed
    /// cylinder. For box footprints the `2^{n+1}` corners are among them.
    pub fn verification_points(&self, per_axis: usize) -> Vec<SpacePoint> {
        let per_axis = per_axis.max(2);
        let heights: Vec<f64> =
            (0..per_axis).map(|i| self.height_max * i as f64 / (per_axis - 1) as f64).collect();
        self.omega
            .node_grid(per_axis)
            .into_iter()
            .flat_map(|x| heights.iter().map(move |&h| SpacePoint::from_slice(&x, h)).collect::<Vec<_>>())
            .collect()
    }
}

/// How a piecewise surface is composed from its pieces, which also fixes
/// whether the pieces are ellipsoids (refractor) or paraboloids (reflector).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurfaceMode {
    /// `u = min_i phi_i`; ellipsoids support the refractor from above.
    RefractorAbove,
    /// `u = max_i phi_i`; ellipsoids touch the refractor from below.
    RefractorBelow,
    /// `u = max_i p_i`; paraboloids support the reflector from below.
    ReflectorBelow,
    /// `u = min_i p_i`; paraboloids enclose the reflector.
    ReflectorAbove,
}

impl SurfaceMode {
    pub fn is_refractor(self) -> bool {
        matches!(self, SurfaceMode::RefractorAbove | SurfaceMode::RefractorBelow)
    }

    /// `true` when the surface is the pointwise minimum of its pieces.
    pub fn takes_min(self) -> bool {
        matches!(self, SurfaceMode::RefractorAbove | SurfaceMode::ReflectorAbove)
    }

    pub fn optics(self) -> OpticsKind {
        if self.is_refractor() {
            OpticsKind::Refractor
        } else {
            OpticsKind::Reflector
        }
    }
}

/// Refraction through ellipsoids or reflection off paraboloids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpticsKind {
    Refractor,
    Reflector,
}
