use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};

use super::stencil::Stencil6;
use super::{LaplaceProblem, VoxelRole};
use crate::error::{Error, Result};
use crate::volume::ScalarField3D;

/// Largest number of domain voxels [`dense_solve`] will assemble.
pub const DENSE_CAP: usize = 5000;

/// Solves the 6-neighbour system directly: one row `k * phi_v - sum(domain
/// neighbours) = sum(fixed neighbour values)` per domain voxel, where `k` is
/// the number of non-exterior in-grid neighbours.
///
/// This is the exact fixed point of [`super::solve_sor`].
pub fn dense_solve(problem: &LaplaceProblem) -> Result<ScalarField3D> {
    let domain: Vec<usize> = (0..problem.dims().len())
        .filter(|&i| problem.role(i) == VoxelRole::Domain)
        .collect();
    if domain.len() > DENSE_CAP {
        return Err(Error::TooLarge {
            count: domain.len(),
            cap: DENSE_CAP,
        });
    }
    let stencil = Stencil6::for_problem(problem);
    let mut unknown = vec![usize::MAX; problem.dims().len()];
    for (row, &i) in domain.iter().enumerate() {
        unknown[i] = row;
    }
    check_anchored(problem, &stencil, &domain, &unknown)?;

    let n = domain.len();
    let mut a = DMatrix::<f64>::zeros(n, n);
    let mut rhs = DVector::<f64>::zeros(n);
    for (row, &i) in domain.iter().enumerate() {
        a[(row, row)] = stencil.neighbor_count(i) as f64;
        for j in stencil.neighbors(i) {
            match problem.role(j) {
                VoxelRole::Domain => a[(row, unknown[j])] -= 1.0,
                _ => rhs[row] += problem.fixed_value(j),
            }
        }
    }
    let solution = a
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::SingularSystem("LU factorisation failed".into()))?;

    let mut field = problem.initial_field(0.0).into_values();
    for (row, &i) in domain.iter().enumerate() {
        field[i] = solution[row];
    }
    ScalarField3D::new(*problem.dims(), field)
}

/// Every connected group of domain voxels must touch a fixed voxel.
fn check_anchored(problem: &LaplaceProblem, stencil: &Stencil6, domain: &[usize], unknown: &[usize]) -> Result<()> {
    let mut reached = vec![false; domain.len()];
    let mut queue = VecDeque::new();
    for (row, &i) in domain.iter().enumerate() {
        if stencil.neighbors(i).any(|j| problem.role(j).is_fixed()) {
            reached[row] = true;
            queue.push_back(i);
        }
    }
    while let Some(i) = queue.pop_front() {
        for j in stencil.neighbors(i) {
            let row = unknown[j];
            if row != usize::MAX && !reached[row] {
                reached[row] = true;
                queue.push_back(j);
            }
        }
    }
    match reached.iter().position(|&r| !r) {
        Some(row) => Err(Error::SingularSystem(format!(
            "domain voxel {:?} has no path to a source or sink",
            problem.dims().coords(domain[row])
        ))),
        None => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::GridDims;
    use VoxelRole::*;

    fn cross(sinks: usize) -> LaplaceProblem {
        let d = GridDims::new(3, 3, 3).unwrap();
        let face = [
            d.index(0, 1, 1),
            d.index(1, 0, 1),
            d.index(1, 1, 0),
            d.index(2, 1, 1),
            d.index(1, 2, 1),
            d.index(1, 1, 2),
        ];
        let mut roles = vec![Exterior; d.len()];
        roles[d.index(1, 1, 1)] = Domain;
        for (k, &i) in face.iter().enumerate() {
            roles[i] = if k < 6 - sinks { Source } else { Sink };
        }
        LaplaceProblem::from_roles(d, roles).unwrap()
    }

    #[test]
    fn single_voxel_between_sources() {
        let phi = dense_solve(&cross(0)).unwrap();
        assert_eq!(phi.get(1, 1, 1), 0.0);
    }

    #[test]
    fn single_voxel_half_and_half() {
        let phi = dense_solve(&cross(3)).unwrap();
        assert!((phi.get(1, 1, 1) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn chain_of_three() {
        let d = GridDims::new(5, 1, 1).unwrap();
        let p = LaplaceProblem::from_roles(d, vec![Source, Domain, Domain, Domain, Sink]).unwrap();
        let phi = dense_solve(&p).unwrap();
        for (got, want) in phi.values()[1..4].iter().zip([0.25, 0.5, 0.75]) {
            assert!((got - want).abs() < 1e-14, "{got} vs {want}");
        }
    }

    #[test]
    fn isolated_domain_is_singular() {
        let d = GridDims::new(5, 1, 1).unwrap();
        let p = LaplaceProblem::from_roles(d, vec![Source, Domain, Exterior, Domain, Domain]).unwrap();
        assert!(matches!(dense_solve(&p), Err(Error::SingularSystem(_))));
    }

    #[test]
    fn cap_is_enforced() {
        let d = GridDims::new(20, 20, 13).unwrap();
        let p = LaplaceProblem::from_roles(d, vec![Domain; d.len()]).unwrap();
        assert!(matches!(dense_solve(&p), Err(Error::TooLarge { .. })));
    }
}
