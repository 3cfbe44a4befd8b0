//! Scene files: the optical setup, receiver, source and solver settings.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use nearfield::solver::{SolverConfig, SourceDensity};
use nearfield::target::{uniform_density, HeightField, QuadraticField};
use nearfield::{Cylinder, DiscreteAtoms, GraphSurface, OpticalConfig, Omega, SpacePoint, SurfaceMode};

use crate::error::CliError;
use crate::output::sha256_hex;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scene {
    pub optics: OpticalConfig,
    pub cylinder: Cylinder,
    pub target: TargetSpec,
    #[serde(default)]
    pub source: SourceSpec,
    pub solver: SolverSpec,
    #[serde(default)]
    pub experiments: Vec<ExperimentSpec>,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum TargetSpec {
    /// Points `(y, y_{n+1})` with their weights.
    Atoms { points: Vec<Vec<f64>>, weights: Vec<f64> },
    /// Graph of `psi` over the box `[lo, hi]`, discretized into
    /// `atoms_per_axis^n` atoms for solving.
    Graph {
        psi: FieldSpec,
        lo: Vec<f64>,
        hi: Vec<f64>,
        #[serde(default = "one")]
        density: f64,
        #[serde(default = "five")]
        atoms_per_axis: usize,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldSpec {
    Constant { value: f64 },
    /// `c + a |y|^2`.
    Radial { c: f64, a: f64 },
    Quadratic(QuadraticField),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum SourceSpec {
    Uniform { value: f64 },
    /// One value per grid cell, cells ordered with the last axis fastest.
    Tabulated { values: Vec<f64> },
}

impl Default for SourceSpec {
    fn default() -> Self {
        SourceSpec::Uniform { value: 1.0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSpec {
    pub mode: SurfaceMode,
    #[serde(default = "default_tol")]
    pub tol_mass: f64,
    /// Source cells per axis.
    pub grid: usize,
    #[serde(default = "default_max_outer")]
    pub max_outer: usize,
    #[serde(default)]
    pub anchor_height: Option<f64>,
    #[serde(default = "yes")]
    pub newton: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum ExperimentSpec {
    Tube {
        /// Horizontal positions of the atoms on the receiver graph.
        foci: Vec<Vec<f64>>,
        /// Segment on which the interface between atoms 0 and 1 is located.
        segment: [Vec<f64>; 2],
        pair_sizes: Vec<f64>,
        #[serde(default = "default_tube_samples")]
        tube_samples: usize,
    },
    Inclusion {
        x0: Vec<f64>,
        /// Horizontal positions of the two endpoints on the receiver graph.
        y_bar: Vec<f64>,
        y_hat: Vec<f64>,
        #[serde(default = "default_lambdas")]
        lambdas: Vec<f64>,
        #[serde(default = "default_samples")]
        samples: usize,
    },
    Refinement {
        atom_counts: Vec<usize>,
    },
}

fn one() -> f64 {
    1.0
}
fn five() -> usize {
    5
}
fn yes() -> bool {
    true
}
fn default_tol() -> f64 {
    1e-3
}
fn default_max_outer() -> usize {
    10_000
}
fn default_tube_samples() -> usize {
    2000
}
fn default_lambdas() -> Vec<f64> {
    vec![0.25, 0.5, 0.75]
}
fn default_samples() -> usize {
    10_000
}

/// A parsed scene together with the hash of its bytes.
pub struct Loaded {
    pub scene: Scene,
    pub sha256: String,
}

pub fn load(path: &Path) -> Result<Loaded, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::Io(path.to_path_buf(), e))?;
    let scene: Scene = serde_json::from_slice(&bytes).map_err(|e| CliError::Json {
        path: path.to_path_buf(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    scene.validate()?;
    Ok(Loaded { scene, sha256: sha256_hex(&bytes) })
}

fn bad(msg: impl Into<String>) -> CliError {
    CliError::Scene(msg.into())
}

impl Scene {
    pub fn dim(&self) -> usize {
        self.cylinder.dim()
    }

    /// Schema-level checks that do not need any solve.
    pub fn validate(&self) -> Result<(), CliError> {
        self.optics.validate()?;
        self.cylinder.validate()?;
        let n = self.dim();
        if self.solver.grid == 0 {
            return Err(bad("solver.grid must be positive"));
        }
        if !(self.solver.tol_mass > 0.0) {
            return Err(bad("solver.tol_mass must be positive"));
        }
        match &self.target {
            TargetSpec::Atoms { points, weights } => {
                if points.is_empty() || points.len() != weights.len() {
                    return Err(bad("target.atoms needs one weight per point"));
                }
                if let Some(p) = points.iter().find(|p| p.len() != n + 1) {
                    return Err(bad(format!("target point {p:?} must have {} coordinates", n + 1)));
                }
            }
            TargetSpec::Graph { lo, hi, atoms_per_axis, .. } => {
                if lo.len() != n || hi.len() != n {
                    return Err(bad(format!("target.graph box must have dimension {n}")));
                }
                if *atoms_per_axis == 0 {
                    return Err(bad("target.graph.atoms_per_axis must be positive"));
                }
                self.graph()?;
            }
        }
        if let SourceSpec::Tabulated { values } = &self.source {
            let cells = self.solver.grid.pow(n as u32);
            if values.len() != cells {
                return Err(bad(format!("source.tabulated has {} values, the grid has {cells} cells", values.len())));
            }
            if values.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
                return Err(bad("source density values must be finite and non-negative"));
            }
        }
        Ok(())
    }

    pub fn graph(&self) -> Result<GraphSurface, CliError> {
        let TargetSpec::Graph { psi, lo, hi, density, .. } = &self.target else {
            return Err(bad("this command needs a graph target"));
        };
        let n = self.dim();
        let field = match psi {
            FieldSpec::Constant { value } => QuadraticField::constant(n, *value),
            FieldSpec::Radial { c, a } => QuadraticField::radial(n, *c, *a),
            FieldSpec::Quadratic(q) => q.clone(),
        };
        field.validate()?;
        if field.dim() != n {
            return Err(bad(format!("target.graph.psi has dimension {}, the scene {n}", field.dim())));
        }
        Ok(GraphSurface::new(Arc::new(field), lo.clone(), hi.clone(), uniform_density(*density))?)
    }

    pub fn source(&self, grid: usize) -> Result<SourceDensity, CliError> {
        let omega = self.cylinder.omega.clone();
        match &self.source {
            SourceSpec::Uniform { value } => Ok(SourceDensity::uniform(omega, grid, *value)?),
            SourceSpec::Tabulated { values } => {
                if grid != self.solver.grid {
                    return Err(bad("a tabulated source fixes the grid; --grid cannot change it"));
                }
                let (lo, hi) = omega.bounds();
                let index = |x: &[f64]| {
                    x.iter().zip(lo.iter().zip(&hi)).fold(0, |acc, (v, (a, b))| {
                        let k = (((v - a) / (b - a)) * grid as f64).floor() as isize;
                        acc * grid + k.clamp(0, grid as isize - 1) as usize
                    })
                };
                Ok(SourceDensity::new(omega, grid, |x| values[index(x)])?)
            }
        }
    }

    /// Target atoms carrying exactly the source mass. Explicit weights must
    /// already balance; graph receivers are discretized to the source mass.
    pub fn atoms(&self, total: f64, per_axis: Option<usize>) -> Result<DiscreteAtoms, CliError> {
        match &self.target {
            TargetSpec::Atoms { points, weights } => {
                let points = points.iter().map(|p| SpacePoint::from_coords(p)).collect::<Result<Vec<_>, _>>()?;
                let atoms = DiscreteAtoms::new(points, weights.clone())?;
                if (atoms.total_weight() - total).abs() > 1e-9 * total {
                    return Err(bad(format!(
                        "mass balance: target weights sum to {} but the source carries {total}",
                        atoms.total_weight()
                    )));
                }
                Ok(atoms)
            }
            TargetSpec::Graph { atoms_per_axis, .. } => Ok(self.graph()?.discretize(per_axis.unwrap_or(*atoms_per_axis), total)?),
        }
    }

    pub fn solver_config(&self, tol: Option<f64>) -> SolverConfig {
        let mut cfg = SolverConfig::new(self.solver.mode);
        cfg.tol_mass = tol.unwrap_or(self.solver.tol_mass);
        cfg.max_outer = self.solver.max_outer;
        cfg.anchor_height = self.solver.anchor_height;
        cfg.newton = self.solver.newton;
        cfg
    }

    /// Distance from `x` to the boundary of the source footprint.
    pub fn boundary_distance(&self, x: &[f64]) -> f64 {
        match &self.cylinder.omega {
            Omega::Box { lo, hi } => {
                x.iter().zip(lo.iter().zip(hi)).map(|(v, (a, b))| (v - a).min(b - v)).fold(f64::INFINITY, f64::min)
            }
            Omega::Ball { center, radius } => {
                radius - x.iter().zip(center).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
            }
        }
    }

    pub fn experiment(&self, name: &str) -> Option<&ExperimentSpec> {
        self.experiments.iter().find(|e| e.name() == name)
    }
}

impl ExperimentSpec {
    pub fn name(&self) -> &'static str {
        match self {
            ExperimentSpec::Tube { .. } => "tube",
            ExperimentSpec::Inclusion { .. } => "inclusion",
            ExperimentSpec::Refinement { .. } => "refinement",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const LINE: &str = r#"{
        "optics": {"kappa": 0.5, "delta": 0.9, "beta_reflector": 0.5},
        "cylinder": {"omega": {"box": {"lo": [-0.5], "hi": [0.5]}}, "height_max": 1.0},
        "target": {"atoms": {"points": [[-1.0, 5.0], [1.0, 5.0]], "weights": [0.5, 0.5]}},
        "solver": {"mode": "refractor_above", "grid": 100}
    }"#;

    #[test]
    fn minimal_scene_parses_with_defaults() {
        let s: Scene = serde_json::from_str(LINE).unwrap();
        s.validate().unwrap();
        assert_eq!(s.seed, 0);
        assert_eq!(s.solver.tol_mass, 1e-3);
        assert!(matches!(s.source, SourceSpec::Uniform { value } if value == 1.0));
        let src = s.source(100).unwrap();
        assert_eq!(s.atoms(src.total_mass(), None).unwrap().len(), 2);
    }

    #[test]
    fn unbalanced_atoms_fail_the_mass_check() {
        let s: Scene = serde_json::from_str(&LINE.replace("[0.5, 0.5]", "[0.5, 0.6]")).unwrap();
        assert!(matches!(s.atoms(1.0, None), Err(CliError::Scene(_))));
    }

    #[test]
    fn tabulated_source_is_read_cell_by_cell() {
        let mut s: Scene = serde_json::from_str(LINE).unwrap();
        s.solver.grid = 4;
        s.source = SourceSpec::Tabulated { values: vec![1.0, 2.0, 3.0, 4.0] };
        s.validate().unwrap();
        let src = s.source(4).unwrap();
        let expect = [0.25, 0.5, 0.75, 1.0];
        for (m, e) in src.masses.iter().zip(expect) {
            assert!((m - e).abs() < 1e-15);
        }
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(serde_json::from_str::<Scene>(&LINE.replace("\"grid\"", "\"grdi\"")).is_err());
    }
}
