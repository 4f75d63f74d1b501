//! Synthetic ground truth: slab and spherical-shell domains with closed-form
//! solutions, and a folded cortex with a narrow sulcus that can be bridged
//! in the corrupted probabilities.
//!
//! The sulcus phantom is laid out in x/z and undulates along y:
//!
//! ```text
//!   z
//!   ^  BG BG BG BG BG BG BG BG BG      crown top follows
//!   |  GM GM GM GM BG GM GM GM GM      z_top(y) = z_top + round(A sin(2 pi y / wavelength))
//!   |  WM WM WM GM BG GM WM WM WM
//!   |  WM WM WM GM BG GM WM WM WM      banks of width `thickness`
//!   |  WM WM WM GM GM GM WM WM WM      fundus of depth `thickness`
//!   |  WM WM WM WM WM WM WM WM WM      white-matter floor
//!   +---------------------------------> x
//! ```

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::solver::{solve_reference, LabelMapping, LaplaceProblem, VoxelRole};
use crate::volume::{labels, GridDims, LabelField3D, ScalarField3D, SoftSegmentation};

pub const DEFAULT_CONFUSION: f64 = 0.1;
pub const DEFAULT_NOISE: f64 = 0.05;

/// Probabilities given to bridged sulcus voxels, per tissue channel.
pub const BRIDGE_PROBS: [f64; labels::TISSUE_CLASSES] = [0.65, 0.05, 0.25, 0.05];

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PhantomKind {
    /// WM below, `thickness` GM planes, BG above; the ramp runs along z.
    Slab { thickness: usize },
    /// WM ball of radius `a`, GM up to radius `b`, BG outside.
    Shell { a: f64, b: f64 },
    Sulcus {
        wavelength: f64,
        amplitude: f64,
        thickness: usize,
        gap: usize,
        /// Extent of the sulcus along y, centred; the banks merge beyond it.
        length: usize,
        bridge: bool,
    },
}

impl PhantomKind {
    /// The 48x48x24 fixture geometry: GM 4 voxels thick, a 1-voxel sulcus
    /// 24 voxels long.
    pub fn sulcus_default(bridge: bool) -> Self {
        PhantomKind::Sulcus {
            wavelength: 24.0,
            amplitude: 1.0,
            thickness: 4,
            gap: 1,
            length: 24,
            bridge,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhantomSpec {
    pub kind: PhantomKind,
    pub dims: GridDims,
    pub seed: u64,
    /// Weight of the uniform distribution in the corrupted probabilities.
    pub confusion: f64,
    /// Relative amplitude of the seeded multiplicative jitter.
    pub noise: f64,
}

impl PhantomSpec {
    pub fn new(kind: PhantomKind, dims: GridDims) -> Self {
        PhantomSpec {
            kind,
            dims,
            seed: 0,
            confusion: DEFAULT_CONFUSION,
            noise: DEFAULT_NOISE,
        }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        PhantomSpec { seed, ..self }
    }
}

#[derive(Debug, Clone)]
pub struct Phantom {
    pub labels: LabelField3D,
    pub phi: ScalarField3D,
    pub probs: SoftSegmentation,
    /// The problem `phi` was solved on.
    pub problem: LaplaceProblem,
    /// Closed-form solution at domain voxels (fixed values elsewhere), for
    /// the slab and shell.
    pub analytic: Option<ScalarField3D>,
    /// Voxels of the sulcus gap above the fundus.
    pub sulcus: Vec<usize>,
}

impl Phantom {
    /// Ground truth with the sulcus left unannotated.
    pub fn training_labels(&self) -> LabelField3D {
        let mut out = self.labels.clone();
        for &i in &self.sulcus {
            out.labels_mut()[i] = labels::UNLABELED;
        }
        out
    }
}

/// `(1/a - 1/r) / (1/a - 1/b)`, the harmonic function of `r` that is 0 at
/// `a` and 1 at `b`.
pub fn analytic_shell_phi(r: f64, a: f64, b: f64) -> Result<f64> {
    if !(a > 0.0 && a < b) {
        return Err(Error::InvalidArgument(format!("need 0 < a < b, got a={a}, b={b}")));
    }
    if !(a..=b).contains(&r) {
        return Err(Error::InvalidArgument(format!("radius {r} outside [{a}, {b}]")));
    }
    Ok(shell_formula(r, a, b))
}

fn shell_formula(r: f64, a: f64, b: f64) -> f64 {
    (1.0 / a - 1.0 / r) / (1.0 / a - 1.0 / b)
}

pub fn make_phantom(spec: &PhantomSpec) -> Result<Phantom> {
    if !(0.0..=1.0).contains(&spec.confusion) || !(0.0..0.5).contains(&spec.noise) {
        return Err(Error::InvalidArgument("confusion must lie in [0,1] and noise in [0,0.5)".into()));
    }
    let dims = spec.dims;
    let (labels, sulcus, bridge) = match spec.kind {
        PhantomKind::Slab { thickness } => (slab_labels(&dims, thickness)?, Vec::new(), false),
        PhantomKind::Shell { a, b } => (shell_labels(&dims, a, b)?, Vec::new(), false),
        PhantomKind::Sulcus {
            wavelength,
            amplitude,
            thickness,
            gap,
            length,
            bridge,
        } => {
            let (labels, sulcus) = sulcus_labels(&dims, wavelength, amplitude, thickness, gap, length)?;
            (labels, sulcus, bridge)
        }
    };

    let mut problem = LaplaceProblem::from_labels(&labels, &LabelMapping::default())?;
    let mut analytic = None;
    match spec.kind {
        PhantomKind::Slab { thickness } => {
            let z0 = slab_floor(&dims, thickness);
            let ramp = |z: usize| (z as f64 - z0 as f64 + 1.0) / (thickness as f64 + 1.0);
            analytic = Some(ScalarField3D::from_fn(dims, |x, y, z| {
                match problem.role(dims.index(x, y, z)) {
                    VoxelRole::Domain => ramp(z),
                    role => role_value(role),
                }
            })?);
        }
        PhantomKind::Shell { a, b } => {
            let values = shell_boundary_values(&problem, a, b);
            problem = problem.with_fixed_values(values)?;
            analytic = Some(ScalarField3D::from_fn(dims, |x, y, z| {
                let i = dims.index(x, y, z);
                match problem.role(i) {
                    VoxelRole::Domain => shell_formula(radius(&dims, x, y, z), a, b),
                    _ => problem.fixed_value(i),
                }
            })?);
        }
        PhantomKind::Sulcus { .. } => {}
    }
    let phi = solve_reference(&problem)?;
    let probs = corrupt(&labels, &sulcus, bridge, spec)?;
    Ok(Phantom {
        labels,
        phi,
        probs,
        problem,
        analytic,
        sulcus,
    })
}

fn role_value(role: VoxelRole) -> f64 {
    match role {
        VoxelRole::Sink => 1.0,
        _ => 0.0,
    }
}

fn slab_floor(dims: &GridDims, thickness: usize) -> usize {
    (dims.nz() - thickness) / 2
}

fn slab_labels(dims: &GridDims, thickness: usize) -> Result<LabelField3D> {
    if thickness == 0 || thickness + 2 > dims.nz() {
        return Err(Error::GeometryDoesNotFit(format!(
            "slab of thickness {thickness} needs at least {} planes along z",
            thickness + 2
        )));
    }
    let z0 = slab_floor(dims, thickness);
    let codes = (0..dims.len())
        .map(|i| {
            let z = dims.coords(i)[2];
            if z < z0 {
                labels::WM
            } else if z < z0 + thickness {
                labels::GM
            } else {
                labels::BG
            }
        })
        .collect();
    LabelField3D::tissue(*dims, codes)
}

fn radius(dims: &GridDims, x: usize, y: usize, z: usize) -> f64 {
    let c = |v: usize, n: usize| v as f64 - (n as f64 - 1.0) / 2.0;
    (c(x, dims.nx()).powi(2) + c(y, dims.ny()).powi(2) + c(z, dims.nz()).powi(2)).sqrt()
}

fn shell_labels(dims: &GridDims, a: f64, b: f64) -> Result<LabelField3D> {
    if !(a >= 1.0 && a < b) {
        return Err(Error::GeometryDoesNotFit(format!("shell needs 1 <= a < b, got a={a}, b={b}")));
    }
    if b >= (dims.min_dim() as f64 - 1.0) / 2.0 {
        return Err(Error::GeometryDoesNotFit(format!("outer radius {b} does not fit in {dims}")));
    }
    let codes = (0..dims.len())
        .map(|i| {
            let [x, y, z] = dims.coords(i);
            let r = radius(dims, x, y, z);
            if r < a {
                labels::WM
            } else if r <= b {
                labels::GM
            } else {
                labels::BG
            }
        })
        .collect();
    LabelField3D::tissue(*dims, codes)
}

/// Fixed voxels that touch the domain (26-neighbourhood) take the closed
/// form at their own radius; the rest keep 0 or 1.
fn shell_boundary_values(problem: &LaplaceProblem, a: f64, b: f64) -> Vec<f64> {
    let dims = problem.dims();
    (0..dims.len())
        .map(|i| {
            let role = problem.role(i);
            if !role.is_fixed() {
                return 0.0;
            }
            let [x, y, z] = dims.coords(i);
            let touches = (-1isize..=1).any(|dz| {
                (-1isize..=1).any(|dy| {
                    (-1isize..=1).any(|dx| {
                        dims.checked_index(x as isize + dx, y as isize + dy, z as isize + dz)
                            .is_some_and(|j| problem.role(j) == VoxelRole::Domain)
                    })
                })
            });
            if touches {
                shell_formula(radius(dims, x, y, z), a, b)
            } else {
                role_value(role)
            }
        })
        .collect()
}

fn sulcus_labels(
    dims: &GridDims,
    wavelength: f64,
    amplitude: f64,
    thickness: usize,
    gap: usize,
    length: usize,
) -> Result<(LabelField3D, Vec<usize>)> {
    let [nx, ny, nz] = dims.shape();
    let t = thickness;
    if t == 0 || !(wavelength > 0.0) || !(amplitude >= 0.0) {
        return Err(Error::GeometryDoesNotFit(
            "sulcus needs positive thickness and wavelength and a nonnegative amplitude".into(),
        ));
    }
    let floor = (nz / 6).max(1);
    let top = nz - (nz / 6).max(1);
    let lift: Vec<isize> = (0..ny)
        .map(|y| (amplitude * (2.0 * std::f64::consts::PI * y as f64 / wavelength).sin()).round() as isize)
        .collect();
    let lowest = top as isize - lift.iter().copied().max().unwrap_or(0).max(0);
    let highest = top as isize + lift.iter().copied().min().unwrap_or(0).min(0).abs();
    let gap_lo = (nx / 2).saturating_sub(gap / 2);
    if gap_lo < t + 1 || gap_lo + gap + t + 1 > nx {
        return Err(Error::GeometryDoesNotFit(format!(
            "gap {gap} with banks of {t} needs more than {nx} voxels along x"
        )));
    }
    if highest + 1 > nz as isize || lowest - (t as isize) <= (floor + t) as isize {
        return Err(Error::GeometryDoesNotFit(format!(
            "fold with thickness {t} and amplitude {amplitude} needs more than {nz} voxels along z"
        )));
    }
    if length > ny {
        return Err(Error::GeometryDoesNotFit(format!("sulcus length {length} exceeds {ny} voxels along y")));
    }
    let gap_hi = gap_lo + gap;
    let y_lo = (ny - length) / 2;
    let along = y_lo..y_lo + length;
    let mut codes = Vec::with_capacity(dims.len());
    let mut sulcus = Vec::new();
    for i in 0..dims.len() {
        let [x, y, z] = dims.coords(i);
        let crown = (top as isize - lift[y]) as usize;
        let from_gap = if x < gap_lo {
            gap_lo - x
        } else if x >= gap_hi {
            x + 1 - gap_hi
        } else {
            0
        };
        let code = if z < floor {
            labels::WM
        } else if z >= crown {
            labels::BG
        } else if from_gap == 0 && z >= floor + t && along.contains(&y) {
            sulcus.push(i);
            labels::BG
        } else if from_gap <= t || z + t >= crown {
            labels::GM
        } else {
            labels::WM
        };
        codes.push(code);
    }
    Ok((LabelField3D::tissue(*dims, codes)?, sulcus))
}

/// Confusion blend, seeded jitter, and GM-majority probabilities on the
/// sulcus when bridged.
fn corrupt(labels: &LabelField3D, sulcus: &[usize], bridge: bool, spec: &PhantomSpec) -> Result<SoftSegmentation> {
    let channels = labels::TISSUE_CLASSES;
    let mut stack = SoftSegmentation::blended(labels, channels, spec.confusion)?.into_stack();
    let n = labels.dims().len();
    if bridge {
        for &i in sulcus {
            for (c, &p) in BRIDGE_PROBS.iter().enumerate() {
                stack.data_mut()[c * n + i] = p;
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let data = stack.data_mut();
    for i in 0..n {
        let mut sum = 0.0;
        for c in 0..channels {
            let p = &mut data[c * n + i];
            *p *= 1.0 + spec.noise * rng.random_range(-1.0..=1.0);
            sum += *p;
        }
        for c in 0..channels {
            data[c * n + i] /= sum;
        }
    }
    SoftSegmentation::new(stack)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::VecDeque;

    #[test]
    fn shell_formula_values() {
        assert_eq!(analytic_shell_phi(6.0, 6.0, 14.0).unwrap(), 0.0);
        assert!((analytic_shell_phi(14.0, 6.0, 14.0).unwrap() - 1.0).abs() < 1e-15);
        assert!((analytic_shell_phi(10.0, 6.0, 14.0).unwrap() - 0.7).abs() < 1e-12);
        assert!(analytic_shell_phi(5.0, 6.0, 14.0).is_err());
        assert!(analytic_shell_phi(15.0, 6.0, 14.0).is_err());
    }

    #[test]
    fn slab_matches_ramp() {
        let dims = GridDims::new(16, 16, 18).unwrap();
        let p = make_phantom(&PhantomSpec::new(PhantomKind::Slab { thickness: 10 }, dims)).unwrap();
        let exact = p.analytic.as_ref().unwrap();
        assert!(p.phi.max_abs_diff(exact) < 1e-3);
        assert_eq!(p.probs.argmax(), p.labels);
    }

    #[test]
    fn geometry_checks() {
        let dims = GridDims::new(8, 8, 8).unwrap();
        assert!(make_phantom(&PhantomSpec::new(PhantomKind::Slab { thickness: 7 }, dims)).is_err());
        assert!(make_phantom(&PhantomSpec::new(PhantomKind::Shell { a: 2.0, b: 4.0 }, dims)).is_err());
        assert!(make_phantom(&PhantomSpec::new(PhantomKind::Shell { a: 3.0, b: 2.0 }, dims)).is_err());
        assert!(make_phantom(&PhantomSpec::new(PhantomKind::sulcus_default(false), dims)).is_err());
    }

    fn bg_path_between_banks(seg: &LabelField3D) -> bool {
        // Flood BG from the top plane and check whether it reaches the
        // fundus of the sulcus.
        let dims = seg.dims();
        let [nx, ny, nz] = dims.shape();
        let mut seen = vec![false; dims.len()];
        let mut queue: VecDeque<usize> = (0..nx * ny).map(|k| k + nx * ny * (nz - 1)).collect();
        for &i in &queue {
            seen[i] = true;
        }
        while let Some(i) = queue.pop_front() {
            let [x, y, z] = dims.coords(i);
            for (dx, dy, dz) in [(-1, 0, 0), (1, 0, 0), (0, -1, 0), (0, 1, 0), (0, 0, -1), (0, 0, 1)] {
                if let Some(j) = dims.checked_index(x as isize + dx, y as isize + dy, z as isize + dz) {
                    if !seen[j] && seg.labels()[j] == labels::BG {
                        seen[j] = true;
                        queue.push_back(j);
                    }
                }
            }
        }
        let floor = (nz / 6).max(1) + 4;
        (12..36).all(|y| seen[dims.index(nx / 2, y, floor)])
    }

    #[test]
    fn sulcus_banks_and_bridge() {
        let dims = GridDims::new(48, 48, 24).unwrap();
        let p = make_phantom(&PhantomSpec::new(PhantomKind::sulcus_default(true), dims).with_seed(3)).unwrap();
        assert!(!p.sulcus.is_empty());
        assert!(bg_path_between_banks(&p.labels));
        let fused = p.probs.argmax();
        assert!(!bg_path_between_banks(&fused));
        assert!(p.sulcus.iter().all(|&i| fused.labels()[i] == labels::GM));
        let train = p.training_labels();
        assert!(p.sulcus.iter().all(|&i| train.labels()[i] == labels::UNLABELED));

        let resolved = make_phantom(&PhantomSpec::new(PhantomKind::sulcus_default(false), dims)).unwrap();
        assert_eq!(resolved.probs.argmax(), resolved.labels);
    }

    #[test]
    fn sulcus_layout_cross_section() {
        let dims = GridDims::new(16, 1, 12).unwrap();
        let kind = PhantomKind::Sulcus {
            wavelength: 8.0,
            amplitude: 0.0,
            thickness: 2,
            gap: 2,
            length: 1,
            bridge: false,
        };
        let p = make_phantom(&PhantomSpec::new(kind, dims)).unwrap();
        let row = |z: usize| -> String {
            (0..16).map(|x| char::from(b'0' + p.labels.get(x, 0, z))).collect()
        };
        assert_eq!(row(0), "2222222222222222");
        assert_eq!(row(1), "2222222222222222");
        assert_eq!(row(2), "2222211111122222");
        assert_eq!(row(3), "2222211111122222");
        assert_eq!(row(4), "2222211331122222");
        assert_eq!(row(7), "2222211331122222");
        assert_eq!(row(8), "1111111331111111");
        assert_eq!(row(9), "1111111331111111");
        assert_eq!(row(10), "3333333333333333");
        assert_eq!(row(11), "3333333333333333");
    }

    #[test]
    fn seeded_and_reproducible() {
        let dims = GridDims::new(12, 12, 12).unwrap();
        let spec = PhantomSpec::new(PhantomKind::Slab { thickness: 6 }, dims).with_seed(9);
        let a = make_phantom(&spec).unwrap();
        let b = make_phantom(&spec).unwrap();
        assert_eq!(a.probs, b.probs);
        let c = make_phantom(&spec.with_seed(10)).unwrap();
        assert_ne!(a.probs, c.probs);
    }
}
