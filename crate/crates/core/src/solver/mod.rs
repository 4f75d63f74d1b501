//! Hard-boundary Laplace solvers.
//!
//! A [`LaplaceProblem`] assigns every voxel a [`VoxelRole`]. Domain voxels
//! are solved for; source and sink voxels hold fixed Dirichlet values (0 and
//! 1 unless overridden); exterior voxels never update and are left out of
//! every neighbour average.
//!
//! Three schemes are provided:
//!
//! - [`solve_sor`]: red-black successive over-relaxation on the 6-neighbour
//!   stencil. One iteration is a BLACK half-sweep followed by a RED one.
//! - [`solve_reference`]: Jacobi iteration on the uniform 26-neighbour
//!   average, used to produce ground-truth fields.
//! - [`dense_solve`]: direct solution of the 6-neighbour system, the exact
//!   fixed point of the SOR iteration.

mod dense;
mod reference;
mod sor;
pub(crate) mod stencil;

pub use dense::{dense_solve, DENSE_CAP};
pub use reference::{solve_reference, solve_reference_with, REFERENCE_TOLERANCE};
pub use sor::solve_sor;

use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::volume::{labels, GridDims, LabelField3D, ScalarField3D};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum VoxelRole {
    Exterior,
    Domain,
    Source,
    Sink,
}

impl VoxelRole {
    pub fn is_fixed(self) -> bool {
        matches!(self, VoxelRole::Source | VoxelRole::Sink)
    }
}

/// Which label codes play which role when a segmentation becomes a problem.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMapping {
    pub domain: Vec<u8>,
    pub source: Vec<u8>,
    pub sink: Vec<u8>,
}

impl Default for LabelMapping {
    /// GM is solved, WM and SRLM are the source (0), background the sink (1).
    fn default() -> Self {
        LabelMapping {
            domain: vec![labels::GM],
            source: vec![labels::WM, labels::SRLM],
            sink: vec![labels::BG],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LaplaceProblem {
    dims: GridDims,
    roles: Vec<VoxelRole>,
    fixed_values: Option<Vec<f64>>,
}

impl LaplaceProblem {
    pub fn from_roles(dims: GridDims, roles: Vec<VoxelRole>) -> Result<Self> {
        if roles.len() != dims.len() {
            return Err(Error::InvalidArgument(format!(
                "{} roles for a {} grid",
                roles.len(),
                dims
            )));
        }
        if dims.len() == 1 && roles[0] == VoxelRole::Domain {
            return Err(Error::InvalidArgument(
                "a domain voxel needs at least one in-grid neighbour".into(),
            ));
        }
        Ok(LaplaceProblem {
            dims,
            roles,
            fixed_values: None,
        })
    }

    /// Builds a problem from three pairwise-disjoint masks.
    pub fn from_masks(dims: GridDims, domain: &[bool], source: &[bool], sink: &[bool]) -> Result<Self> {
        let n = dims.len();
        if domain.len() != n || source.len() != n || sink.len() != n {
            return Err(Error::InvalidArgument("mask length does not match the grid".into()));
        }
        let mut roles = Vec::with_capacity(n);
        for i in 0..n {
            let role = match (domain[i], source[i], sink[i]) {
                (false, false, false) => VoxelRole::Exterior,
                (true, false, false) => VoxelRole::Domain,
                (false, true, false) => VoxelRole::Source,
                (false, false, true) => VoxelRole::Sink,
                _ => {
                    return Err(Error::InvalidArgument(format!(
                        "masks overlap at voxel {:?}",
                        dims.coords(i)
                    )))
                }
            };
            roles.push(role);
        }
        Self::from_roles(dims, roles)
    }

    pub fn from_labels(seg: &LabelField3D, mapping: &LabelMapping) -> Result<Self> {
        for code in &mapping.domain {
            if mapping.source.contains(code) || mapping.sink.contains(code) {
                return Err(Error::InvalidArgument(format!("label {code} mapped to two roles")));
            }
        }
        if let Some(code) = mapping.source.iter().find(|c| mapping.sink.contains(c)) {
            return Err(Error::InvalidArgument(format!("label {code} mapped to two roles")));
        }
        let roles = seg
            .labels()
            .iter()
            .map(|c| {
                if mapping.domain.contains(c) {
                    VoxelRole::Domain
                } else if mapping.source.contains(c) {
                    VoxelRole::Source
                } else if mapping.sink.contains(c) {
                    VoxelRole::Sink
                } else {
                    VoxelRole::Exterior
                }
            })
            .collect();
        Self::from_roles(*seg.dims(), roles)
    }

    /// Overrides the Dirichlet values of source and sink voxels. Entries at
    /// domain and exterior voxels are ignored.
    pub fn with_fixed_values(mut self, values: Vec<f64>) -> Result<Self> {
        if values.len() != self.dims.len() {
            return Err(Error::InvalidArgument("fixed-value field has the wrong length".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("fixed values must be finite".into()));
        }
        self.fixed_values = Some(values);
        Ok(self)
    }

    pub fn dims(&self) -> &GridDims {
        &self.dims
    }

    pub fn roles(&self) -> &[VoxelRole] {
        &self.roles
    }

    pub fn role(&self, i: usize) -> VoxelRole {
        self.roles[i]
    }

    pub fn domain_count(&self) -> usize {
        self.roles.iter().filter(|&&r| r == VoxelRole::Domain).count()
    }

    pub fn domain_mask(&self) -> Vec<bool> {
        self.roles.iter().map(|&r| r == VoxelRole::Domain).collect()
    }

    /// Dirichlet value of a source or sink voxel.
    pub fn fixed_value(&self, i: usize) -> f64 {
        match (&self.fixed_values, self.roles[i]) {
            (Some(v), VoxelRole::Source | VoxelRole::Sink) => v[i],
            (_, VoxelRole::Sink) => 1.0,
            _ => 0.0,
        }
    }

    /// Domain voxels at `domain_value`, fixed voxels at their Dirichlet
    /// values, exterior voxels at 0.
    pub fn initial_field(&self, domain_value: f64) -> ScalarField3D {
        let values = (0..self.dims.len())
            .map(|i| match self.roles[i] {
                VoxelRole::Domain => domain_value,
                VoxelRole::Exterior => 0.0,
                _ => self.fixed_value(i),
            })
            .collect();
        ScalarField3D::new(self.dims, values).expect("finite initial field")
    }

    pub(crate) fn check_init(&self, init: &ScalarField3D) -> Result<()> {
        self.dims.ensure_same_shape(init.dims())?;
        for (i, &v) in init.values().iter().enumerate() {
            if self.roles[i].is_fixed() && v != self.fixed_value(i) {
                return Err(Error::InvalidArgument(format!(
                    "fixed voxel {:?} initialised to {v}, expected {}",
                    self.dims.coords(i),
                    self.fixed_value(i)
                )));
            }
        }
        Ok(())
    }
}

/// Over-relaxation factor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Omega {
    /// [`omega_opt`] of the smallest grid dimension.
    Auto,
    Fixed(f64),
}

impl Omega {
    pub fn resolve(self, dims: &GridDims) -> Result<f64> {
        let w = match self {
            Omega::Auto => omega_opt(dims.min_dim())?,
            Omega::Fixed(w) => w,
        };
        if !(1.0..2.0).contains(&w) {
            return Err(Error::InvalidArgument(format!("omega {w} outside [1, 2)")));
        }
        Ok(w)
    }
}

impl FromStr for Omega {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(Omega::Auto);
        }
        s.parse()
            .map(Omega::Fixed)
            .map_err(|_| Error::InvalidArgument(format!("omega must be 'auto' or a number, got {s:?}")))
    }
}

/// `2 / (1 + sin(pi / (n + 1)))`, the optimal SOR factor for a grid whose
/// smallest dimension is `n`.
pub fn omega_opt(n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::InvalidArgument("omega_opt needs n >= 1".into()));
    }
    Ok(2.0 / (1.0 + (std::f64::consts::PI / (n as f64 + 1.0)).sin()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    Sor6,
    Reference26,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub omega: Omega,
    pub max_iters: usize,
    /// Early-stop threshold on the mean absolute per-domain-voxel change of
    /// one iteration. Zero disables early stopping.
    pub tolerance: f64,
    pub scheme: Scheme,
}

impl SolverConfig {
    /// The network-embedded budget: 60 iterations, no early stop.
    pub fn embedded() -> Self {
        SolverConfig {
            omega: Omega::Auto,
            max_iters: 60,
            tolerance: 0.0,
            scheme: Scheme::Sor6,
        }
    }

    /// The evaluation budget: 120 iterations, no early stop.
    pub fn evaluation() -> Self {
        SolverConfig {
            max_iters: 120,
            ..Self::embedded()
        }
    }

    /// SOR run to a tolerance with a generous iteration cap.
    pub fn converge(tolerance: f64) -> Self {
        SolverConfig {
            max_iters: 1_000_000,
            tolerance,
            ..Self::embedded()
        }
    }

    pub fn reference() -> Self {
        SolverConfig {
            omega: Omega::Fixed(1.0),
            max_iters: 1_000_000,
            tolerance: REFERENCE_TOLERANCE,
            scheme: Scheme::Reference26,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::InvalidArgument("max_iters must be positive".into()));
        }
        if !(self.tolerance >= 0.0) {
            return Err(Error::InvalidArgument("tolerance must be nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SolveReport {
    pub iterations_run: usize,
    /// Mean absolute per-domain-voxel change of the last iteration.
    pub final_change: f64,
    pub converged: bool,
}

/// Runs whichever scheme `config` names.
pub fn solve(
    problem: &LaplaceProblem,
    init: &ScalarField3D,
    config: &SolverConfig,
) -> Result<(ScalarField3D, SolveReport)> {
    match config.scheme {
        Scheme::Sor6 => solve_sor(problem, init, config),
        Scheme::Reference26 => solve_reference_with(problem, init, config),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn omega_opt_values() {
        assert_eq!(omega_opt(1).unwrap(), 1.0);
        let w96 = omega_opt(96).unwrap();
        assert!((w96 - 1.937_267_6).abs() < 1e-6, "{w96}");
        let mut prev = 1.0;
        for n in [2, 10, 100, 10_000, 1_000_000] {
            let w = omega_opt(n).unwrap();
            assert!(w > prev && w < 2.0);
            prev = w;
        }
        assert!(omega_opt(0).is_err());
    }

    #[test]
    fn omega_parsing_and_range() {
        let d = GridDims::new(16, 20, 24).unwrap();
        assert_eq!("auto".parse::<Omega>().unwrap(), Omega::Auto);
        assert_eq!(Omega::Auto.resolve(&d).unwrap(), omega_opt(16).unwrap());
        assert!(Omega::Fixed(2.0).resolve(&d).is_err());
        assert!(Omega::Fixed(0.9).resolve(&d).is_err());
        assert!("fast".parse::<Omega>().is_err());
    }

    #[test]
    fn masks_must_be_disjoint() {
        let d = GridDims::new(2, 1, 1).unwrap();
        let err = LaplaceProblem::from_masks(d, &[true, false], &[true, false], &[false, true]);
        assert!(err.is_err());
        let single = GridDims::new(1, 1, 1).unwrap();
        assert!(LaplaceProblem::from_roles(single, vec![VoxelRole::Domain]).is_err());
    }

    #[test]
    fn label_mapping_roles() {
        let d = GridDims::new(5, 1, 1).unwrap();
        let seg = LabelField3D::tissue(d, vec![0, 1, 2, 3, 4]).unwrap();
        let p = LaplaceProblem::from_labels(&seg, &LabelMapping::default()).unwrap();
        assert_eq!(
            p.roles(),
            &[
                VoxelRole::Exterior,
                VoxelRole::Domain,
                VoxelRole::Source,
                VoxelRole::Sink,
                VoxelRole::Source
            ]
        );
        let init = p.initial_field(0.5);
        assert_eq!(init.values(), &[0.0, 0.5, 0.0, 1.0, 0.0]);
        let bad = LabelMapping {
            domain: vec![1],
            source: vec![1],
            sink: vec![3],
        };
        assert!(LaplaceProblem::from_labels(&seg, &bad).is_err());
    }
}
