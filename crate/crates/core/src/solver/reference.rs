use rayon::prelude::*;

use super::stencil::PAR_MIN_LEN;
use super::{LaplaceProblem, SolveReport, SolverConfig, VoxelRole};
use crate::error::Result;
use crate::volume::ScalarField3D;

/// Termination threshold of the reference scheme: mean absolute change per
/// domain voxel below 0.001 %.
pub const REFERENCE_TOLERANCE: f64 = 1e-5;

/// Ground-truth solve: 26-neighbour Jacobi from a 0.5 start until the mean
/// change drops below [`REFERENCE_TOLERANCE`].
pub fn solve_reference(problem: &LaplaceProblem) -> Result<ScalarField3D> {
    solve_reference_with(problem, &problem.initial_field(0.5), &SolverConfig::reference())
        .map(|(phi, _)| phi)
}

/// Jacobi iteration where each domain voxel becomes the uniform mean of its
/// in-grid, non-exterior 26-neighbourhood. `config.omega` is ignored.
pub fn solve_reference_with(
    problem: &LaplaceProblem,
    init: &ScalarField3D,
    config: &SolverConfig,
) -> Result<(ScalarField3D, SolveReport)> {
    config.validate()?;
    problem.check_init(init)?;
    let dims = problem.dims();
    let roles = problem.roles();

    // CSR neighbour lists for the domain voxels.
    let mut domain = Vec::new();
    let mut starts = vec![0usize];
    let mut neighbors = Vec::new();
    for (i, &role) in roles.iter().enumerate() {
        if role != VoxelRole::Domain {
            continue;
        }
        let [x, y, z] = dims.coords(i);
        for dz in -1isize..=1 {
            for dy in -1isize..=1 {
                for dx in -1isize..=1 {
                    if dx == 0 && dy == 0 && dz == 0 {
                        continue;
                    }
                    let j = dims.checked_index(x as isize + dx, y as isize + dy, z as isize + dz);
                    if let Some(j) = j.filter(|&j| roles[j] != VoxelRole::Exterior) {
                        neighbors.push(j);
                    }
                }
            }
        }
        domain.push(i);
        starts.push(neighbors.len());
    }

    let mut field = init.values().to_vec();
    let mut report = SolveReport {
        iterations_run: 0,
        final_change: 0.0,
        converged: domain.is_empty(),
    };
    if domain.is_empty() {
        return Ok((ScalarField3D::from_raw(*dims, field), report));
    }

    let mut next = Vec::with_capacity(domain.len());
    for it in 0..config.max_iters {
        {
            let field: &[f64] = &field;
            (0..domain.len())
                .into_par_iter()
                .with_min_len(PAR_MIN_LEN)
                .map(|k| {
                    let nbrs = &neighbors[starts[k]..starts[k + 1]];
                    if nbrs.is_empty() {
                        field[domain[k]]
                    } else {
                        nbrs.iter().map(|&j| field[j]).sum::<f64>() / nbrs.len() as f64
                    }
                })
                .collect_into_vec(&mut next);
        }
        let mut change = 0.0;
        for (&i, &v) in domain.iter().zip(&next) {
            change += (v - field[i]).abs();
            field[i] = v;
        }
        report.iterations_run = it + 1;
        report.final_change = change / domain.len() as f64;
        if report.final_change < config.tolerance {
            report.converged = true;
            break;
        }
    }
    Ok((ScalarField3D::from_raw(*dims, field), report))
}
