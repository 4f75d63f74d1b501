//! The 6-neighbour relaxation stencil shared by the hard and soft solvers.

use rayon::prelude::*;

use super::{LaplaceProblem, VoxelRole};
use crate::volume::{GridDims, Parity};

/// Minimum voxels per rayon task in a half-sweep.
pub(crate) const PAR_MIN_LEN: usize = 2048;

/// Per-voxel neighbour bitmasks and the active voxels of each colour.
///
/// Bit `b` of a mask selects neighbour `b` in the fixed order
/// `-x, +x, -y, +y, -z, +z`. Sums always run in that order so that every
/// solver built on the stencil rounds identically.
#[derive(Debug, Clone)]
pub(crate) struct Stencil6 {
    offsets: [isize; 6],
    masks: Vec<u8>,
    red: Vec<usize>,
    black: Vec<usize>,
}

impl Stencil6 {
    /// Domain voxels are active; exterior voxels and out-of-grid positions
    /// are not neighbours.
    pub fn for_problem(problem: &LaplaceProblem) -> Self {
        let roles = problem.roles();
        Self::build(problem.dims(), |i| roles[i] == VoxelRole::Domain, |j| {
            roles[j] != VoxelRole::Exterior
        })
    }

    /// Every voxel is active and every in-grid voxel is a neighbour.
    pub fn full(dims: &GridDims) -> Self {
        Self::build(dims, |_| true, |_| true)
    }

    fn build(dims: &GridDims, active: impl Fn(usize) -> bool, counts: impl Fn(usize) -> bool) -> Self {
        let nx = dims.nx() as isize;
        let nxy = nx * dims.ny() as isize;
        let offsets = [-1, 1, -nx, nx, -nxy, nxy];
        let mut masks = vec![0u8; dims.len()];
        let mut red = Vec::new();
        let mut black = Vec::new();
        for z in 0..dims.nz() {
            for y in 0..dims.ny() {
                for x in 0..dims.nx() {
                    let i = dims.index(x, y, z);
                    let (xi, yi, zi) = (x as isize, y as isize, z as isize);
                    let candidates = [
                        dims.checked_index(xi - 1, yi, zi),
                        dims.checked_index(xi + 1, yi, zi),
                        dims.checked_index(xi, yi - 1, zi),
                        dims.checked_index(xi, yi + 1, zi),
                        dims.checked_index(xi, yi, zi - 1),
                        dims.checked_index(xi, yi, zi + 1),
                    ];
                    let mut m = 0u8;
                    for (b, c) in candidates.iter().enumerate() {
                        if matches!(c, Some(j) if counts(*j)) {
                            m |= 1 << b;
                        }
                    }
                    masks[i] = m;
                    if active(i) {
                        match Parity::of(x, y, z) {
                            Parity::Red => red.push(i),
                            Parity::Black => black.push(i),
                        }
                    }
                }
            }
        }
        Stencil6 {
            offsets,
            masks,
            red,
            black,
        }
    }

    pub fn active(&self, parity: Parity) -> &[usize] {
        match parity {
            Parity::Red => &self.red,
            Parity::Black => &self.black,
        }
    }

    #[inline]
    pub fn neighbor_count(&self, i: usize) -> u32 {
        self.masks[i].count_ones()
    }

    #[inline]
    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        let m = self.masks[i];
        (0..6)
            .filter(move |b| m >> b & 1 == 1)
            .map(move |b| (i as isize + self.offsets[b]) as usize)
    }

    /// Mean over the effective neighbours, `None` if there are none.
    #[inline]
    pub fn mean(&self, field: &[f64], i: usize) -> Option<f64> {
        let m = self.masks[i];
        if m == 0 {
            return None;
        }
        let mut sum = 0.0;
        for b in 0..6 {
            if m >> b & 1 == 1 {
                sum += field[(i as isize + self.offsets[b]) as usize];
            }
        }
        Some(sum / m.count_ones() as f64)
    }

    /// `(1 - omega) * x + omega * mean`; voxels without neighbours keep `x`.
    #[inline]
    pub fn relax(&self, field: &[f64], i: usize, omega: f64) -> f64 {
        let x = field[i];
        match self.mean(field, i) {
            Some(mean) => (1.0 - omega) * x + omega * mean,
            None => x,
        }
    }

    /// Updates every active voxel of one colour in place and returns the sum
    /// of absolute changes. Same-colour voxels never read each other, so
    /// computing all updates before writing any is the in-place sweep.
    pub fn half_sweep(&self, field: &mut [f64], parity: Parity, omega: f64, buf: &mut Vec<f64>) -> f64 {
        let idx = self.active(parity);
        {
            let field: &[f64] = field;
            idx.par_iter()
                .with_min_len(PAR_MIN_LEN)
                .map(|&i| self.relax(field, i, omega))
                .collect_into_vec(buf);
        }
        let mut change = 0.0;
        for (&i, &v) in idx.iter().zip(buf.iter()) {
            change += (v - field[i]).abs();
            field[i] = v;
        }
        change
    }
}
