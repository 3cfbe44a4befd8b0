use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use nearfield::optics::admissible_region_check;
use nearfield::raytrace::{horizontal_plane_check, three_point_counterexample, trace_bundle};
use nearfield::regularity::{
    aw_condition_numeric, classify_graph_target, holder_exponent, min_condition_check, AwConfig, Orientation,
    RegularityReport, Verdict,
};
use nearfield::solver::{assignment, solve_semidiscrete, SolveReport, SourceDensity};
use nearfield::surface::TIE_EPS;
use nearfield::target::IntersectConfig;
use nearfield::{
    Cylinder, DiscreteAtoms, EllipsoidPiece, Execution, OpticalConfig, OpticsKind, Omega, ParaboloidPiece, PiecewiseSurface,
    SpacePoint, Target,
};

use crate::error::CliError;
use crate::output::{columns, float, floats, Sink};
use crate::scene::Scene;

/// Command-line overrides shared by every subcommand.
pub struct Overrides {
    pub grid: Option<usize>,
    pub tol: Option<f64>,
}

pub struct Solved {
    pub source: SourceDensity,
    pub atoms: DiscreteAtoms,
    pub surface: PiecewiseSurface,
    pub report: SolveReport,
}

pub fn solve_scene(scene: &Scene, grid: usize, tol: Option<f64>, atoms: Option<DiscreteAtoms>) -> Result<Solved, CliError> {
    let source = scene.source(grid)?;
    let atoms = match atoms {
        Some(a) => a,
        None => scene.atoms(source.total_mass(), None)?,
    };
    let (surface, report) = solve_semidiscrete(&source, &atoms, &scene.cylinder, &scene.optics, &scene.solver_config(tol))?;
    Ok(Solved { source, atoms, surface, report })
}

pub fn surface_json(surface: &PiecewiseSurface) -> Value {
    json!({
        "mode": surface.mode,
        "kappa": surface.kappa,
        "pieces": surface.pieces.iter().map(|p| json!({"focus": p.focus.coords(), "b": p.b})).collect::<Vec<_>>(),
    })
}

pub fn solve_report_json(s: &Solved) -> Value {
    let r = &s.report;
    json!({
        "atoms": s.atoms.len(),
        "grid_cells": s.source.len(),
        "source_mass": s.source.total_mass(),
        "b": r.b,
        "residuals": r.residuals,
        "max_residual": r.max_residual,
        "iterations": r.iterations,
        "converged": r.converged,
        "residual_history": r.residual_history,
        "height_min": r.height_min,
        "height_max": r.height_max,
        "heights_in_cylinder": r.heights_in_cylinder,
    })
}

pub fn solve(scene: &Scene, ov: &Overrides, sink: &Sink) -> Result<bool, CliError> {
    let grid = ov.grid.unwrap_or(scene.solver.grid);
    let solved = solve_scene(scene, grid, ov.tol, None)?;
    let n = scene.dim();
    sink.write_json("surface.json", &surface_json(&solved.surface))?;
    let evals = assignment(&solved.surface, &solved.source, Execution::Parallel)?;
    let mut header = columns("x", n);
    header.extend(["height", "atom", "near_tie"].map(String::from));
    let rows = solved.source.centers.iter().zip(&evals).map(|(x, e)| {
        let mut row = floats(x);
        row.extend([float(e.height), e.active_index.to_string(), e.near_tie.to_string()]);
        row
    });
    sink.write_csv("assignment.csv", &header, rows)?;
    let passed = solved.report.converged && solved.report.heights_in_cylinder;
    let tol = json!({"tol_mass": scene.solver_config(ov.tol).tol_mass, "tie_eps": TIE_EPS, "grid": grid});
    sink.report("report.json", "solve", passed, tol, solve_report_json(&solved))?;
    Ok(passed)
}

fn verdict_json(r: &RegularityReport) -> Value {
    serde_json::to_value(r).unwrap_or(Value::Null)
}

fn slope_grid(n: usize, half: f64, per_axis: usize) -> Vec<Vec<f64>> {
    let axis: Vec<f64> = (0..per_axis).map(|k| -half + 2.0 * half * k as f64 / (per_axis - 1) as f64).collect();
    nearfield::geometry::tensor_product(&vec![axis; n])
}

fn unit_directions(n: usize) -> Vec<Vec<f64>> {
    let mut dirs: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
    if n > 1 {
        dirs.push(vec![1.0 / (n as f64).sqrt(); n]);
    }
    dirs
}

pub fn check_target(scene: &Scene, sink: &Sink) -> Result<bool, CliError> {
    let graph = scene.graph()?;
    let n = scene.dim();
    let mode = scene.solver.mode;
    let kappa = scene.optics.kappa;
    let center = scene.cylinder.omega.center();
    let base = SpacePoint::from_slice(&center, scene.solver.anchor_height.unwrap_or(0.5 * scene.cylinder.height_max));
    let target = Target::Graph(graph.clone());

    let closed = if mode.is_refractor() {
        let orientation = if mode.takes_min() { Orientation::Above } else { Orientation::Below };
        Some(classify_graph_target(graph.psi.as_ref(), kappa, orientation, &base)?)
    } else {
        None
    };
    let aw = aw_condition_numeric(&target, &base, kappa, mode, &slope_grid(n, 0.2, 5), &unit_directions(n), &AwConfig::default());

    let mid: Vec<f64> = graph.lo.iter().zip(&graph.hi).map(|(a, b)| 0.5 * (a + b)).collect();
    let quarter = 0.25 * (graph.hi[0] - graph.lo[0]);
    let (mut yb, mut yh) = (mid.clone(), mid);
    yb[0] -= quarter;
    yh[0] += quarter;
    let band: Vec<f64> = (16..=48).map(|k| k as f64 / 64.0).collect();
    let xs = scene.cylinder.omega.node_grid(if n == 1 { 41 } else { 11 });
    let min_cond = min_condition_check(
        mode,
        &target,
        &base,
        &graph.point(&yb),
        &graph.point(&yh),
        kappa,
        &band,
        &xs,
        &IntersectConfig::default(),
    )?;

    let conclusive = |v: Verdict| v != Verdict::Inconclusive;
    let consistent = closed.as_ref().is_none_or(|c| !conclusive(c.verdict) || !conclusive(aw.verdict) || c.verdict == aw.verdict);
    let result = json!({
        "base": base.coords(),
        "quadratic_criterion": closed.as_ref().map(verdict_json),
        "aw_numeric": verdict_json(&aw),
        "min_condition": verdict_json(&min_cond),
        "consistent": consistent,
    });
    let tol = json!({"aw_step": AwConfig::default().step, "aw_inconclusive_band": AwConfig::default().inconclusive_band});
    sink.report("report.json", "check-target", consistent, tol, result)?;
    Ok(consistent)
}

pub fn trace(scene: &Scene, ov: &Overrides, sink: &Sink) -> Result<bool, CliError> {
    let grid = ov.grid.unwrap_or(scene.solver.grid);
    let focus_tol = ov.tol.unwrap_or(1e-9);
    let solved = solve_scene(scene, grid, None, None)?;
    let (rays, summary) = trace_bundle(&solved.surface, &solved.source.centers, Execution::Parallel)?;
    let n = scene.dim();
    let mut header = columns("x", n);
    header.extend(columns("hit", n + 1));
    header.extend(columns("exit", n + 1));
    header.extend(["atom", "distance", "tie"].map(String::from));
    let rows = rays.iter().map(|r| {
        let mut row = floats(&r.origin);
        row.extend(floats(&r.hit));
        row.extend(floats(&r.exit));
        row.extend([r.atom.to_string(), float(r.distance), r.tie.to_string()]);
        row
    });
    sink.write_csv("trace.csv", &header, rows)?;
    let passed = solved.report.converged && summary.max_distance <= focus_tol;
    let result = json!({"trace": summary, "solve": solve_report_json(&solved)});
    let tol = json!({"focus_distance": focus_tol, "tol_mass": scene.solver.tol_mass, "tie_eps": TIE_EPS, "grid": grid});
    sink.report("summary.json", "trace", passed, tol, result)?;
    Ok(passed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Counterexample {
    /// Three foci whose ellipsoid supports locally but not globally.
    #[value(alias = "fig3")]
    ThreePoint,
    /// Horizontal-plane receiver where the min condition fails.
    #[value(alias = "remark71")]
    HorizontalPlane,
}

pub fn counterexample(which: Counterexample, tol: Option<f64>, sink: &Sink) -> Result<bool, CliError> {
    match which {
        Counterexample::ThreePoint => {
            let r = three_point_counterexample()?;
            let gap_tol = tol.unwrap_or(0.002);
            let passed = (r.c_p_y1 - 0.1).abs() <= 1e-4 && r.local_support && (r.witness_gap - 0.0886).abs() <= gap_tol;
            let tol = json!({"c_p_y1": 1e-4, "witness_gap": gap_tol, "tie_eps": TIE_EPS});
            sink.report("report.json", "counterexample three-point", passed, tol, serde_json::to_value(&r).unwrap())?;
            Ok(passed)
        }
        Counterexample::HorizontalPlane => {
            let first_tol = tol.unwrap_or(1e-8);
            let reports = [0.5, 2.0 / 3.0].map(|k| horizontal_plane_check(k, 10.0)).into_iter().collect::<Result<Vec<_>, _>>()?;
            let passed = reports.iter().all(|r| r.first_derivative.abs() <= first_tol && r.second_derivative < 0.0);
            let tol = json!({"first_derivative": first_tol});
            sink.report("report.json", "counterexample horizontal-plane", passed, tol, json!({"cases": reports}))?;
            Ok(passed)
        }
    }
}

fn shifted(x: &[f64], i: usize, s: f64) -> Vec<f64> {
    let mut v = x.to_vec();
    v[i] += s;
    v
}

fn rel_err(a: &DMatrix<f64>, f: &DMatrix<f64>) -> f64 {
    let scale = f.norm();
    let diff = (a - f).norm();
    if scale < 1e-8 {
        diff
    } else {
        diff / scale
    }
}

fn column(v: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_column_slice(v.len(), 1, v.as_slice())
}

/// Central differences of every analytic derivative block at random
/// admissible configurations.
pub fn derivatives_check(seed: u64, tol: Option<f64>, sink: &Sink) -> Result<bool, CliError> {
    const CONFIGS: usize = 100;
    let h = 1e-5;
    let limit = tol.unwrap_or(1e-6);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    let mut worst = 0.0f64;
    for n in [1usize, 2] {
        let cyl = Cylinder::new(Omega::Box { lo: vec![-0.5; n], hi: vec![0.5; n] }, 1.0)?;
        for kind in [OpticsKind::Refractor, OpticsKind::Reflector] {
            let mut done = 0;
            while done < CONFIGS {
                let kappa = if kind == OpticsKind::Refractor { rng.random_range(0.3..0.8) } else { 0.5 };
                let optics = OpticalConfig::new(kappa, 0.9, 0.5)?;
                let yx: Vec<f64> = (0..n).map(|_| rng.random_range(-0.5..0.5)).collect();
                let yh = match kind {
                    OpticsKind::Refractor => rng.random_range(4.0..8.0),
                    OpticsKind::Reflector => rng.random_range(-8.0..-4.0),
                };
                let y = SpacePoint::from_slice(&yx, yh);
                if !admissible_region_check(&y, &cyl, &optics, kind, 8).admissible {
                    continue;
                }
                let x0x: Vec<f64> = (0..n).map(|_| rng.random_range(-0.5..0.5)).collect();
                let x0 = SpacePoint::from_slice(&x0x, rng.random_range(0.0..1.0));
                let x: Vec<f64> = (0..n).map(|_| rng.random_range(-0.5..0.5)).collect();
                let errs = match kind {
                    OpticsKind::Refractor => ellipsoid_errors(&y, &x0, &x, kappa, h)?,
                    OpticsKind::Reflector => paraboloid_errors(&y, &x0, &x, h)?,
                };
                let name = if kind == OpticsKind::Refractor { "ellipsoid" } else { "paraboloid" };
                for (block, e) in ["grad_x", "hess_xx", "mixed_xy", "d_base_height"].iter().zip(errs) {
                    worst = worst.max(e);
                    rows.push(vec![name.to_string(), n.to_string(), done.to_string(), block.to_string(), float(kappa), float(e)]);
                }
                done += 1;
            }
        }
    }
    let header = ["piece", "n", "config", "block", "kappa", "rel_err"].map(String::from);
    sink.write_csv("table.csv", &header, rows)?;
    let passed = worst <= limit;
    let tol = json!({"rel_err": limit, "fd_step": h});
    sink.report("report.json", "derivatives-check", passed, tol, json!({"configurations": 4 * CONFIGS, "worst_rel_err": worst}))?;
    Ok(passed)
}

fn ellipsoid_errors(y: &SpacePoint, x0: &SpacePoint, x: &[f64], kappa: f64, h: f64) -> Result<[f64; 4], CliError> {
    let n = x.len();
    let piece = EllipsoidPiece::through(y.clone(), x0, kappa)?;
    let d = piece.derivatives(x, kappa, Some(x0))?;
    let height = |x: &[f64]| piece.height(x, kappa);
    let grad = |x: &[f64]| piece.gradient(x, kappa);
    let mut fd_grad = DVector::zeros(n);
    let mut fd_hess = DMatrix::zeros(n, n);
    for i in 0..n {
        fd_grad[i] = (height(&shifted(x, i, h))? - height(&shifted(x, i, -h))?) / (2.0 * h);
        let col = (grad(&shifted(x, i, h))? - grad(&shifted(x, i, -h))?) / (2.0 * h);
        fd_hess.set_column(i, &col);
    }
    let yc = y.coords();
    let mut fd_mixed = DMatrix::zeros(n, n + 1);
    for j in 0..=n {
        let at = |s: f64| -> Result<DVector<f64>, CliError> {
            Ok(EllipsoidPiece::through(SpacePoint::from_coords(&shifted(&yc, j, s))?, x0, kappa)?.gradient(x, kappa)?)
        };
        fd_mixed.set_column(j, &((at(h)? - at(-h)?) / (2.0 * h)));
    }
    let x0c = x0.coords();
    let base_at = |s: f64| -> Result<f64, CliError> {
        Ok(EllipsoidPiece::through(y.clone(), &SpacePoint::from_coords(&shifted(&x0c, n, s))?, kappa)?.height(x, kappa)?)
    };
    let fd_base = (base_at(h)? - base_at(-h)?) / (2.0 * h);
    Ok(block_errors(&d.grad_x, &d.hess_xx, d.mixed_xy.as_ref(), d.d_base_height, &fd_grad, &fd_hess, &fd_mixed, fd_base))
}

fn paraboloid_errors(y: &SpacePoint, x0: &SpacePoint, x: &[f64], h: f64) -> Result<[f64; 4], CliError> {
    let n = x.len();
    let piece = ParaboloidPiece::through(y.clone(), x0)?;
    let d = piece.derivatives(x, Some(x0))?;
    let mut fd_grad = DVector::zeros(n);
    let mut fd_hess = DMatrix::zeros(n, n);
    for i in 0..n {
        fd_grad[i] = (piece.height(&shifted(x, i, h)) - piece.height(&shifted(x, i, -h))) / (2.0 * h);
        fd_hess.set_column(i, &((piece.gradient(&shifted(x, i, h)) - piece.gradient(&shifted(x, i, -h))) / (2.0 * h)));
    }
    let yc = y.coords();
    let mut fd_mixed = DMatrix::zeros(n, n + 1);
    for j in 0..=n {
        let at = |s: f64| -> Result<DVector<f64>, CliError> {
            Ok(ParaboloidPiece::through(SpacePoint::from_coords(&shifted(&yc, j, s))?, x0)?.gradient(x))
        };
        fd_mixed.set_column(j, &((at(h)? - at(-h)?) / (2.0 * h)));
    }
    let x0c = x0.coords();
    let base_at = |s: f64| -> Result<f64, CliError> {
        Ok(ParaboloidPiece::through(y.clone(), &SpacePoint::from_coords(&shifted(&x0c, n, s))?)?.height(x))
    };
    let fd_base = (base_at(h)? - base_at(-h)?) / (2.0 * h);
    Ok(block_errors(&d.grad_x, &d.hess_xx, d.mixed_xy.as_ref(), d.d_base_height, &fd_grad, &fd_hess, &fd_mixed, fd_base))
}

#[allow(clippy::too_many_arguments)]
fn block_errors(
    grad: &DVector<f64>,
    hess: &DMatrix<f64>,
    mixed: Option<&DMatrix<f64>>,
    base: Option<f64>,
    fd_grad: &DVector<f64>,
    fd_hess: &DMatrix<f64>,
    fd_mixed: &DMatrix<f64>,
    fd_base: f64,
) -> [f64; 4] {
    [
        rel_err(&column(grad), &column(fd_grad)),
        rel_err(hess, fd_hess),
        mixed.map_or(f64::INFINITY, |m| rel_err(m, fd_mixed)),
        base.map_or(f64::INFINITY, |b| (b - fd_base).abs() / fd_base.abs().max(1e-8)),
    ]
}

pub fn alpha(n: u32, q: f64) -> Result<f64, CliError> {
    Ok(holder_exponent(n, q)?)
}
