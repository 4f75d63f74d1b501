//! Finite-difference checks of the hand-written reverse passes on small
//! seeded instances.
//!
//! The reference derivative is the fourth-order five-point stencil with
//! step 1e-3: a second-order stencil cannot get below ~1e-9 absolute error
//! here because rounding noise grows as truncation error shrinks.
//!
//! The error of one entry is `|analytic - fd| / (max(|analytic|, |fd|) + 1e-6)`;
//! the absolute floor keeps entries whose true gradient is zero from
//! dominating through rounding noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autodiff::{soft_solve_backward, soft_solve_forward_stack, SoftLaplaceConfig};
use crate::error::Result;
use crate::labelize::BandSpec;
use crate::optimize::{objective, softmax, OptimizeConfig};
use crate::volume::{labels, ChannelStack, GridDims, LabelField3D, ScalarField3D};

/// Threshold for the soft solver adjoint.
pub const SOLVER_TOLERANCE: f64 = 1e-4;
/// Threshold for the logits-to-loss chain.
pub const CHAIN_TOLERANCE: f64 = 1e-3;

const STEP: f64 = 1e-3;
const FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub entries: usize,
}

impl GradcheckReport {
    fn compare(analytic: &[f64], numeric: &[f64]) -> Self {
        let mut report = GradcheckReport {
            max_rel_error: 0.0,
            max_abs_error: 0.0,
            entries: analytic.len(),
        };
        for (&a, &n) in analytic.iter().zip(numeric) {
            let abs = (a - n).abs();
            report.max_abs_error = report.max_abs_error.max(abs);
            report.max_rel_error = report.max_rel_error.max(abs / (a.abs().max(n.abs()) + FLOOR));
        }
        report
    }
}

fn five_point(x: &ChannelStack, mut f: impl FnMut(&ChannelStack) -> Result<f64>) -> Result<Vec<f64>> {
    let mut probe = x.clone();
    let mut out = Vec::with_capacity(x.data().len());
    for k in 0..x.data().len() {
        let base = x.data()[k];
        let mut at = |offset: f64| {
            probe.data_mut()[k] = base + offset;
            f(&probe)
        };
        let near = at(STEP)? - at(-STEP)?;
        let far = at(2.0 * STEP)? - at(-2.0 * STEP)?;
        probe.data_mut()[k] = base;
        out.push((8.0 * near - far) / (12.0 * STEP));
    }
    Ok(out)
}

fn random_logits(dims: GridDims, channels: usize, rng: &mut ChaCha8Rng) -> ChannelStack {
    let data = (0..dims.len() * channels).map(|_| rng.random_range(-1.5..1.5)).collect();
    ChannelStack::new(dims, channels, data).expect("sized to fit")
}

/// Checks the soft solver adjoint on random probabilities: the objective is
/// `<g, phi(p)>` for a random cotangent `g`.
pub fn check_soft_solver(dims: GridDims, iters: usize, seed: u64) -> Result<GradcheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let probs = softmax(&random_logits(dims, labels::TISSUE_CLASSES, &mut rng));
    let cotangent: Vec<f64> = (0..dims.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let config = SoftLaplaceConfig::with_iters(iters);

    let (_, tape) = soft_solve_forward_stack(&probs, &config)?;
    let analytic = soft_solve_backward(tape, &ScalarField3D::new(dims, cotangent.clone())?)?;
    let numeric = five_point(&probs, |p| {
        let (phi, _) = soft_solve_forward_stack(p, &config)?;
        Ok(phi.values().iter().zip(&cotangent).map(|(a, b)| a * b).sum())
    })?;
    Ok(GradcheckReport::compare(analytic.data(), &numeric))
}

/// Checks the full chain logits -> softmax -> soft solver -> bands ->
/// combined loss against random tissue and laminar targets.
pub fn check_full_chain(dims: GridDims, iters: usize, seed: u64) -> Result<GradcheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let logits = random_logits(dims, labels::TISSUE_CLASSES, &mut rng);
    let bands = BandSpec::default();
    let tissue: Vec<u8> = (0..dims.len()).map(|_| rng.random_range(0..=4)).collect();
    let laminar: Vec<u8> = (0..dims.len())
        .map(|_| rng.random_range(0..=bands.len() as u8))
        .collect();
    let tissue = LabelField3D::new(dims, tissue)?;
    let laminar = LabelField3D::new(dims, laminar)?;
    let config = OptimizeConfig {
        solver: SoftLaplaceConfig::with_iters(iters),
        bands,
        laplace_weight: 1.0,
        ..OptimizeConfig::default()
    };

    let analytic = objective(&logits, &tissue, &laminar, &config)?.grad_logits;
    let numeric = five_point(&logits, |z| {
        Ok(objective(z, &tissue, &laminar, &config)?.breakdown.total)
    })?;
    Ok(GradcheckReport::compare(analytic.data(), &numeric))
}
