use std::sync::Arc;

use proptest::prelude::*;

use nearfield::solver::{
    assignment, dual_potential, lipschitz_estimate, locate_crossing, solve_semidiscrete, tracing_measure, SolverConfig, SourceDensity,
};
use nearfield::surface::Piece;
use nearfield::target::{uniform_density, QuadraticField};
use nearfield::{
    Cylinder, DiscreteAtoms, Error, Execution, GraphSurface, OpticalConfig, Omega, PiecewiseSurface, SpacePoint,
    SurfaceMode,
};

fn line_setup(per_axis: usize) -> (SourceDensity, Cylinder, OpticalConfig) {
    let omega = Omega::interval(-0.5, 0.5);
    (
        SourceDensity::uniform(omega.clone(), per_axis, 1.0).unwrap(),
        Cylinder::new(omega, 1.0).unwrap(),
        OpticalConfig::new(0.5, 0.9, 0.5).unwrap(),
    )
}

fn bowl_atoms(count: usize, total: f64) -> DiscreteAtoms {
    GraphSurface::new(Arc::new(QuadraticField::radial(1, 4.0, 0.25)), vec![-1.0], vec![1.0], uniform_density(1.0))
        .unwrap()
        .discretize(count, total)
        .unwrap()
}

fn three_lenses(b: [f64; 3]) -> PiecewiseSurface {
    let foci = [[-0.8, 5.0], [0.0, 5.5], [0.8, 5.0]];
    let pieces = foci.iter().zip(b).map(|(f, b)| Piece { focus: SpacePoint::from_coords(f).unwrap(), b }).collect();
    PiecewiseSurface::new(SurfaceMode::RefractorAbove, pieces, 0.5).unwrap()
}

#[test]
fn converged_masses_match_the_weights() {
    let (source, cyl, optics) = line_setup(1000);
    let atoms = bowl_atoms(6, source.total_mass());
    let (surface, report) = solve_semidiscrete(&source, &atoms, &cyl, &optics, &SolverConfig::new(SurfaceMode::RefractorAbove)).unwrap();
    assert!(report.converged);
    assert!(report.heights_in_cylinder);
    let masses = tracing_measure(&surface, &source, Execution::Sequential).unwrap();
    for ((m, w), r) in masses.iter().zip(&atoms.weights).zip(&report.residuals) {
        assert!((m - w - r).abs() < 1e-12);
        assert!(r.abs() <= 1e-3);
    }
}

#[test]
fn sequential_and_parallel_solves_agree() {
    let (source, cyl, optics) = line_setup(800);
    let atoms = bowl_atoms(5, source.total_mass());
    let mut cfg = SolverConfig::new(SurfaceMode::RefractorAbove);
    cfg.exec = Execution::Sequential;
    let (_, seq) = solve_semidiscrete(&source, &atoms, &cyl, &optics, &cfg).unwrap();
    cfg.exec = Execution::Parallel;
    let (_, par) = solve_semidiscrete(&source, &atoms, &cyl, &optics, &cfg).unwrap();
    assert_eq!(seq.b, par.b);
    assert_eq!(seq.residuals, par.residuals);
}

#[test]
fn single_atom_updates_alone_also_converge() {
    let (source, cyl, optics) = line_setup(1000);
    let atoms = bowl_atoms(5, source.total_mass());
    let mut cfg = SolverConfig::new(SurfaceMode::RefractorAbove);
    cfg.newton = false;
    let (_, report) = solve_semidiscrete(&source, &atoms, &cyl, &optics, &cfg).unwrap();
    assert!(report.converged, "max residual {}", report.max_residual);
}

#[test]
fn reflector_below_converges() {
    let (source, cyl, optics) = line_setup(1000);
    let atoms = DiscreteAtoms::new(
        [-0.6, -0.2, 0.2, 0.6].iter().map(|&y| SpacePoint::from_slice(&[y], -4.0)).collect(),
        vec![0.25; 4],
    )
    .unwrap();
    let (surface, report) = solve_semidiscrete(&source, &atoms, &cyl, &optics, &SolverConfig::new(SurfaceMode::ReflectorBelow)).unwrap();
    assert!(report.converged);
    // Mirror symmetric targets with equal weights: the middle interface sits
    // at the center, up to one cell, since b is only fixed up to a plateau.
    let mid = locate_crossing(&surface, 1, 2, &[-0.1], &[0.1]).unwrap()[0];
    assert!(mid.abs() <= 1e-3, "middle interface at {mid}");
}

#[test]
fn two_dimensional_solve_converges() {
    let omega = Omega::Box { lo: vec![-0.5, -0.5], hi: vec![0.5, 0.5] };
    let source = SourceDensity::uniform(omega.clone(), 60, 1.0).unwrap();
    let cyl = Cylinder::new(omega, 1.0).unwrap();
    let optics = OpticalConfig::new(0.5, 0.9, 0.5).unwrap();
    let atoms = GraphSurface::new(Arc::new(QuadraticField::radial(2, 4.0, 0.25)), vec![-1.0; 2], vec![1.0; 2], uniform_density(1.0))
        .unwrap()
        .discretize(2, 1.0)
        .unwrap();
    let (_, report) = solve_semidiscrete(&source, &atoms, &cyl, &optics, &SolverConfig::new(SurfaceMode::RefractorAbove)).unwrap();
    assert!(report.converged);
}

#[test]
fn unbalanced_weights_are_rejected() {
    let (source, cyl, optics) = line_setup(100);
    let atoms = bowl_atoms(3, 2.0);
    let err = solve_semidiscrete(&source, &atoms, &cyl, &optics, &SolverConfig::new(SurfaceMode::RefractorAbove)).unwrap_err();
    assert!(matches!(err, Error::InvalidInput(_)));
}

#[test]
fn target_inside_the_cylinder_is_infeasible() {
    let (source, cyl, optics) = line_setup(100);
    let atoms = DiscreteAtoms::new(
        vec![SpacePoint::from_slice(&[0.0], 5.0), SpacePoint::from_slice(&[0.0], 0.5)],
        vec![0.5, 0.5],
    )
    .unwrap();
    let err = solve_semidiscrete(&source, &atoms, &cyl, &optics, &SolverConfig::new(SurfaceMode::RefractorAbove)).unwrap_err();
    assert!(matches!(err, Error::Infeasible { atom: 1, .. }));
}

#[test]
fn dual_potential_is_lipschitz_on_a_sample() {
    let surface = three_lenses([2.6, 2.6, 2.6]);
    let grid = Omega::interval(-0.5, 0.5).node_grid(101);
    let ys: Vec<SpacePoint> = (0..20).map(|k| SpacePoint::from_slice(&[-0.5 + k as f64 * 0.05], 5.0)).collect();
    let values = dual_potential(&surface, &grid, &ys, Execution::Parallel).unwrap();
    let coords: Vec<Vec<f64>> = ys.iter().map(|y| y.coords()).collect();
    let lip = lipschitz_estimate(&coords, &values);
    assert!(lip.is_finite() && lip > 0.0);
}

proptest! {
    #[test]
    fn tracing_measure_conserves_mass(b in prop::array::uniform3(2.55..2.75f64), per in 50usize..400) {
        let surface = three_lenses(b);
        let source = SourceDensity::uniform(Omega::interval(-0.5, 0.5), per, 1.0).unwrap();
        prop_assume!(assignment(&surface, &source, Execution::Sequential).is_ok());
        let masses = tracing_measure(&surface, &source, Execution::Parallel).unwrap();
        prop_assert!((masses.iter().sum::<f64>() - source.total_mass()).abs() < 1e-12);
    }

    /// Raising one ellipsoid parameter lowers that piece, so it can only
    /// gain mass while every other atom can only lose it.
    #[test]
    fn mass_is_monotone_in_b(b in prop::array::uniform3(2.55..2.75f64), j in 0usize..3, db in 0.001..0.05f64) {
        let source = SourceDensity::uniform(Omega::interval(-0.5, 0.5), 400, 1.0).unwrap();
        let before = three_lenses(b);
        let mut raised = b;
        raised[j] += db;
        let after = three_lenses(raised);
        prop_assume!(assignment(&before, &source, Execution::Sequential).is_ok());
        prop_assume!(assignment(&after, &source, Execution::Sequential).is_ok());
        let m0 = tracing_measure(&before, &source, Execution::Sequential).unwrap();
        let m1 = tracing_measure(&after, &source, Execution::Sequential).unwrap();
        for i in 0..3 {
            if i == j {
                prop_assert!(m1[i] >= m0[i] - 1e-15);
            } else {
                prop_assert!(m1[i] <= m0[i] + 1e-15);
            }
        }
    }
}
