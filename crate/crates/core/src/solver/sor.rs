use super::stencil::Stencil6;
use super::{LaplaceProblem, SolveReport, SolverConfig};
use crate::error::Result;
use crate::volume::{Parity, ScalarField3D};

/// Red-black SOR on the 6-neighbour stencil.
///
/// Each iteration relaxes every BLACK domain voxel, then every RED one,
/// with `phi <- (1 - omega) * phi + omega * mean(neighbours)`. Stops after
/// `config.max_iters` iterations or as soon as the mean absolute change per
/// domain voxel drops below `config.tolerance`. Only domain voxels change.
pub fn solve_sor(
    problem: &LaplaceProblem,
    init: &ScalarField3D,
    config: &SolverConfig,
) -> Result<(ScalarField3D, SolveReport)> {
    config.validate()?;
    problem.check_init(init)?;
    let omega = config.omega.resolve(problem.dims())?;

    let mut field = init.values().to_vec();
    let domain = problem.domain_count();
    if domain == 0 {
        let report = SolveReport {
            iterations_run: 0,
            final_change: 0.0,
            converged: true,
        };
        return Ok((ScalarField3D::from_raw(*problem.dims(), field), report));
    }

    let stencil = Stencil6::for_problem(problem);
    let mut buf = Vec::new();
    let mut report = SolveReport {
        iterations_run: 0,
        final_change: 0.0,
        converged: false,
    };
    for it in 0..config.max_iters {
        let change = stencil.half_sweep(&mut field, Parity::Black, omega, &mut buf)
            + stencil.half_sweep(&mut field, Parity::Red, omega, &mut buf);
        report.iterations_run = it + 1;
        report.final_change = change / domain as f64;
        if report.final_change < config.tolerance {
            report.converged = true;
            break;
        }
    }
    Ok((ScalarField3D::from_raw(*problem.dims(), field), report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::{Omega, VoxelRole};
    use crate::volume::GridDims;

    fn slab(nx: usize, ny: usize, nz: usize) -> LaplaceProblem {
        let d = GridDims::new(nx, ny, nz).unwrap();
        let roles = (0..d.len())
            .map(|i| match d.coords(i)[2] {
                0 => VoxelRole::Source,
                z if z == nz - 1 => VoxelRole::Sink,
                _ => VoxelRole::Domain,
            })
            .collect();
        LaplaceProblem::from_roles(d, roles).unwrap()
    }

    #[test]
    fn zero_boundary_stays_zero() {
        let d = GridDims::new(5, 5, 5).unwrap();
        let roles = (0..d.len())
            .map(|i| {
                let [x, y, z] = d.coords(i);
                if [x, y, z].iter().any(|&c| c == 0 || c == 4) {
                    VoxelRole::Source
                } else {
                    VoxelRole::Domain
                }
            })
            .collect();
        let p = LaplaceProblem::from_roles(d, roles).unwrap();
        let (phi, _) = solve_sor(&p, &p.initial_field(0.0), &SolverConfig::embedded()).unwrap();
        assert!(phi.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn slab_is_a_linear_ramp() {
        let p = slab(16, 16, 18);
        let (phi, report) = solve_sor(&p, &p.initial_field(0.5), &SolverConfig::converge(1e-10)).unwrap();
        assert!(report.converged);
        let err = (0..phi.dims().len())
            .map(|i| (phi.values()[i] - phi.dims().coords(i)[2] as f64 / 17.0).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-6, "max error {err}");
    }

    #[test]
    fn exterior_voxels_never_change() {
        let d = GridDims::new(6, 1, 1).unwrap();
        let roles = vec![
            VoxelRole::Source,
            VoxelRole::Domain,
            VoxelRole::Domain,
            VoxelRole::Sink,
            VoxelRole::Exterior,
            VoxelRole::Domain,
        ];
        let p = LaplaceProblem::from_roles(d, roles).unwrap();
        let mut init = p.initial_field(0.5).into_values();
        init[4] = 7.0;
        let init = ScalarField3D::new(d, init).unwrap();
        let (phi, _) = solve_sor(&p, &init, &SolverConfig::converge(1e-14)).unwrap();
        assert_eq!(phi.values()[4], 7.0);
        // Voxel 5's only neighbour is exterior: it keeps its initial value.
        assert_eq!(phi.values()[5], 0.5);
        assert!((phi.values()[1] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_inputs() {
        let p = slab(4, 4, 4);
        let wrong = ScalarField3D::zeros(GridDims::new(4, 4, 5).unwrap());
        assert!(solve_sor(&p, &wrong, &SolverConfig::embedded()).is_err());
        let cfg = SolverConfig {
            omega: Omega::Fixed(2.5),
            ..SolverConfig::embedded()
        };
        assert!(solve_sor(&p, &p.initial_field(0.5), &cfg).is_err());
        // Sink voxels must start at their Dirichlet value.
        assert!(solve_sor(&p, &ScalarField3D::zeros(*p.dims()), &SolverConfig::embedded()).is_err());
    }

    #[test]
    fn fixed_budget_runs_every_iteration() {
        let p = slab(6, 6, 8);
        let (_, report) = solve_sor(&p, &p.initial_field(0.5), &SolverConfig::evaluation()).unwrap();
        assert_eq!(report.iterations_run, 120);
        assert!(!report.converged);
    }
}
