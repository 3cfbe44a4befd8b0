//! Refractors and reflectors as min/max envelopes of ellipsoids or paraboloids.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{SpacePoint, SurfaceMode};
use crate::optics::{focal_parameter, reflector_focal_parameter, EllipsoidPiece, ParaboloidPiece};

/// Absolute gap below which two piece heights count as tied.
pub const TIE_EPS: f64 = 1e-12;

/// One focus and focal parameter of the envelope.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Piece {
    pub focus: SpacePoint,
    pub b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseSurface {
    pub mode: SurfaceMode,
    pub pieces: Vec<Piece>,
    /// Refraction ratio; unused by reflector modes.
    pub kappa: f64,
}

/// Height of the envelope at a point, with the winning piece.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub height: f64,
    pub active_index: usize,
    pub near_tie: bool,
}

impl PiecewiseSurface {
    pub fn new(mode: SurfaceMode, pieces: Vec<Piece>, kappa: f64) -> Result<Self> {
        if pieces.is_empty() {
            return Err(Error::InvalidInput("a surface needs at least one piece".into()));
        }
        if pieces.iter().any(|p| !(p.b > 0.0 && p.b.is_finite())) {
            return Err(Error::InvalidInput("focal parameters must be positive".into()));
        }
        if mode.is_refractor() && !(kappa > 0.0 && kappa < 1.0) {
            return Err(Error::InvalidInput(format!("kappa must lie in (0,1), got {kappa}")));
        }
        Ok(Self { mode, pieces, kappa })
    }

    /// Pieces through a common point `X0`, each with its own focus.
    pub fn through_point(mode: SurfaceMode, foci: &[SpacePoint], x0: &SpacePoint, kappa: f64) -> Result<Self> {
        let pieces = foci
            .iter()
            .map(|y| {
                let b = if mode.is_refractor() { focal_parameter(x0, y, kappa)? } else { reflector_focal_parameter(x0, y)? };
                Ok(Piece { focus: y.clone(), b })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(mode, pieces, kappa)
    }

    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    pub fn ellipsoid(&self, i: usize) -> EllipsoidPiece {
        EllipsoidPiece { focus: self.pieces[i].focus.clone(), b: self.pieces[i].b }
    }

    pub fn paraboloid(&self, i: usize) -> ParaboloidPiece {
        ParaboloidPiece { focus: self.pieces[i].focus.clone(), b: self.pieces[i].b }
    }

    pub fn piece_height(&self, i: usize, x: &[f64]) -> Result<f64> {
        if self.mode.is_refractor() {
            self.ellipsoid(i).height(x, self.kappa)
        } else {
            Ok(self.paraboloid(i).height(x))
        }
    }

    pub fn piece_gradient(&self, i: usize, x: &[f64]) -> Result<DVector<f64>> {
        if self.mode.is_refractor() {
            self.ellipsoid(i).gradient(x, self.kappa)
        } else {
            Ok(self.paraboloid(i).gradient(x))
        }
    }

    /// `d phi_i / d b_i` at `x`.
    pub fn piece_b_derivative(&self, i: usize, x: &[f64]) -> Result<f64> {
        if self.mode.is_refractor() {
            self.ellipsoid(i).height_b_derivative(x, self.kappa)
        } else {
            Ok(self.paraboloid(i).height_b_derivative(x))
        }
    }

    pub fn piece_hessian(&self, i: usize, x: &[f64]) -> Result<DMatrix<f64>> {
        if self.mode.is_refractor() {
            Ok(self.ellipsoid(i).derivatives(x, self.kappa, None)?.hess_xx)
        } else {
            Ok(DMatrix::identity(x.len(), x.len()) * (-1.0 / self.pieces[i].b))
        }
    }

    /// `true` when `a` beats `b` under this envelope's composition.
    fn better(&self, a: f64, b: f64) -> bool {
        if self.mode.takes_min() {
            a < b
        } else {
            a > b
        }
    }

    fn heights(&self, x: &[f64]) -> Result<Vec<f64>> {
        (0..self.len())
            .map(|i| {
                self.piece_height(i, x).map_err(|e| {
                    Error::Configuration(format!("piece {i} is undefined at x = {x:?}: {e}"))
                })
            })
            .collect()
    }

    pub fn evaluate(&self, x: &[f64]) -> Result<Evaluation> {
        let h = self.heights(x)?;
        let mut best = 0;
        for (i, &v) in h.iter().enumerate().skip(1) {
            if self.better(v, h[best]) {
                best = i;
            }
        }
        let near_tie = h.iter().enumerate().any(|(i, &v)| i != best && (v - h[best]).abs() <= TIE_EPS);
        Ok(Evaluation { height: h[best], active_index: best, near_tie })
    }

    pub fn height(&self, x: &[f64]) -> Result<f64> {
        Ok(self.evaluate(x)?.height)
    }

    /// Indices of all pieces attaining the envelope at `x` within the tie
    /// tolerance: the supporting pieces, i.e. the discrete refractor map.
    pub fn refractor_map(&self, x: &[f64]) -> Result<Vec<usize>> {
        let h = self.heights(x)?;
        let e = self.evaluate(x)?;
        Ok((0..h.len()).filter(|&i| (h[i] - e.height).abs() <= TIE_EPS).collect())
    }

    /// Gradient of the active piece; the flag is set on the tie set.
    pub fn gradient(&self, x: &[f64]) -> Result<(DVector<f64>, bool)> {
        let e = self.evaluate(x)?;
        Ok((self.piece_gradient(e.active_index, x)?, e.near_tie))
    }
}
