//! Gradient descent on per-voxel class logits under the combined loss.

use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::autodiff::{soft_solve_backward, soft_solve_forward_stack, SoftLaplaceConfig};
use crate::error::{Error, Result};
use crate::labelize::{soft_one_hot, soft_one_hot_backward, BandSpec};
use crate::loss::{combined_loss, LossBreakdown, DEFAULT_IGNORE_LABEL};
use crate::volume::{ChannelStack, LabelField3D, SoftSegmentation};

/// Added to probabilities before taking the log for the initial logits.
pub const LOGIT_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizeConfig {
    pub steps: usize,
    /// Step size per voxel. The losses are voxel means, so the raw gradient
    /// is multiplied by the voxel count before the update; this keeps one
    /// learning rate meaningful across grid sizes.
    pub learning_rate: f64,
    pub laplace_weight: f64,
    pub solver: SoftLaplaceConfig,
    pub bands: BandSpec,
    pub ignore_label: u8,
}

impl Default for OptimizeConfig {
    fn default() -> Self {
        OptimizeConfig {
            steps: 200,
            learning_rate: 1.0,
            laplace_weight: 1.0,
            solver: SoftLaplaceConfig::default(),
            bands: BandSpec::default(),
            ignore_label: DEFAULT_IGNORE_LABEL,
        }
    }
}

impl OptimizeConfig {
    fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::InvalidArgument("steps must be at least 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.laplace_weight.is_finite() && self.laplace_weight >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "laplace weight must be nonnegative, got {}",
                self.laplace_weight
            )));
        }
        Ok(())
    }
}

/// `log(p + LOGIT_FLOOR)` per entry.
pub fn logits_from_probs(probs: &SoftSegmentation) -> ChannelStack {
    let stack = probs.as_stack();
    let data = stack.data().iter().map(|p| (p + LOGIT_FLOOR).ln()).collect();
    ChannelStack::new(*stack.dims(), stack.channels(), data).expect("same shape")
}

/// Per-voxel softmax over channels.
pub fn softmax(logits: &ChannelStack) -> ChannelStack {
    let n = logits.dims().len();
    let channels = logits.channels();
    let mut out = vec![0.0; n * channels];
    for i in 0..n {
        let top = (0..channels).map(|c| logits.at(c, i)).fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for c in 0..channels {
            let e = (logits.at(c, i) - top).exp();
            out[c * n + i] = e;
            sum += e;
        }
        for c in 0..channels {
            out[c * n + i] /= sum;
        }
    }
    ChannelStack::new(*logits.dims(), channels, out).expect("same shape")
}

/// Pulls a probability gradient back through the softmax:
/// `dz_c = p_c (g_c - sum_k p_k g_k)`.
pub fn softmax_backward(probs: &ChannelStack, grad: &ChannelStack) -> ChannelStack {
    let n = probs.dims().len();
    let channels = probs.channels();
    let mut out = vec![0.0; n * channels];
    for i in 0..n {
        let dot: f64 = (0..channels).map(|c| probs.at(c, i) * grad.at(c, i)).sum();
        for c in 0..channels {
            out[c * n + i] = probs.at(c, i) * (grad.at(c, i) - dot);
        }
    }
    ChannelStack::new(*probs.dims(), channels, out).expect("same shape")
}

/// Loss and gradient with respect to the logits.
#[derive(Debug, Clone)]
pub struct Objective {
    pub breakdown: LossBreakdown,
    pub grad_logits: ChannelStack,
    pub probs: ChannelStack,
}

/// Evaluates softmax, the soft solver, the band channels and the combined
/// loss, then backpropagates to the logits. The Laplacian path is only
/// differentiated when `laplace_weight > 0`; its loss terms are always
/// reported.
pub fn objective(
    logits: &ChannelStack,
    tissue_gt: &LabelField3D,
    laminar_gt: &LabelField3D,
    config: &OptimizeConfig,
) -> Result<Objective> {
    let probs = softmax(logits);
    let (phi, tape) = soft_solve_forward_stack(&probs, &config.solver)?;
    let channels = soft_one_hot(&phi, &config.bands);
    let loss = combined_loss(
        &probs,
        tissue_gt,
        &channels,
        laminar_gt,
        config.laplace_weight,
        config.ignore_label,
    )?;
    let mut grad_probs = loss.grad_tissue;
    if config.laplace_weight > 0.0 {
        let grad_phi = soft_one_hot_backward(&phi, &config.bands, &loss.grad_laplace)?;
        let through_solver = soft_solve_backward(tape, &grad_phi)?;
        for (g, extra) in grad_probs.data_mut().iter_mut().zip(through_solver.data()) {
            *g += extra;
        }
    }
    Ok(Objective {
        breakdown: loss.breakdown,
        grad_logits: softmax_backward(&probs, &grad_probs),
        probs,
    })
}

#[derive(Debug, Clone)]
pub struct Descent {
    pub probs: SoftSegmentation,
    /// Loss before each update, one entry per step.
    pub trace: Vec<LossBreakdown>,
}

/// Plain gradient descent from `log(init + 1e-6)`; returns the softmax of
/// the final logits and the per-step loss trace.
pub fn run_descent(
    init: &SoftSegmentation,
    tissue_gt: &LabelField3D,
    laminar_gt: &LabelField3D,
    config: &OptimizeConfig,
) -> Result<Descent> {
    config.validate()?;
    init.dims().ensure_same_shape(tissue_gt.dims())?;
    init.dims().ensure_same_shape(laminar_gt.dims())?;
    let mut logits = logits_from_probs(init);
    let scale = config.learning_rate * init.dims().len() as f64;
    let mut trace = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        let obj = objective(&logits, tissue_gt, laminar_gt, config)?;
        if !obj.breakdown.is_finite() || obj.grad_logits.data().iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteLoss { step });
        }
        trace.push(obj.breakdown);
        for (z, g) in logits.data_mut().iter_mut().zip(obj.grad_logits.data()) {
            *z -= scale * g;
        }
    }
    Ok(Descent {
        probs: SoftSegmentation::new(softmax(&logits))?,
        trace,
    })
}

#[derive(Serialize)]
struct TraceRow {
    step: usize,
    dice_tissue: f64,
    ce_tissue: f64,
    dice_laplace: f64,
    ce_laplace: f64,
    total: f64,
}

pub fn write_trace<W: Write>(writer: W, trace: &[LossBreakdown]) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    for (step, b) in trace.iter().enumerate() {
        out.serialize(TraceRow {
            step,
            dice_tissue: b.dice_tissue,
            ce_tissue: b.ce_tissue,
            dice_laplace: b.dice_laplace,
            ce_laplace: b.ce_laplace,
            total: b.total,
        })?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_trace_file(path: impl AsRef<Path>, trace: &[LossBreakdown]) -> Result<()> {
    write_trace(std::fs::File::create(path)?, trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labelize::laminar_targets;
    use crate::volume::GridDims;

    fn fixture() -> (SoftSegmentation, LabelField3D, LabelField3D) {
        let dims = GridDims::new(6, 5, 8).unwrap();
        let gt = LabelField3D::tissue(
            dims,
            (0..dims.len())
                .map(|i| match dims.coords(i)[2] {
                    0 | 1 => 2,
                    2..=5 => 1,
                    _ => 3,
                })
                .collect(),
        )
        .unwrap();
        let phi = crate::solver::solve_reference(
            &crate::solver::LaplaceProblem::from_labels(&gt, &Default::default()).unwrap(),
        )
        .unwrap();
        let lam = laminar_targets(&phi, &gt, &BandSpec::default()).unwrap();
        let init = SoftSegmentation::blended(&gt, 4, 0.4).unwrap();
        (init, gt, lam)
    }

    #[test]
    fn softmax_inverts_logits() {
        let (init, _, _) = fixture();
        let back = softmax(&logits_from_probs(&init));
        for (a, b) in back.data().iter().zip(init.as_stack().data()) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn softmax_backward_matches_differences() {
        let dims = GridDims::new(2, 1, 1).unwrap();
        let logits = ChannelStack::new(dims, 3, vec![0.1, -0.4, 1.2, 0.3, -0.7, 0.0]).unwrap();
        let weights = [0.3, -1.1, 0.7, 2.0, 0.5, -0.2];
        let f = |z: &ChannelStack| -> f64 { softmax(z).data().iter().zip(&weights).map(|(p, w)| p * w).sum() };
        let g = ChannelStack::new(dims, 3, weights.to_vec()).unwrap();
        let grad = softmax_backward(&softmax(&logits), &g);
        let h = 1e-6;
        for k in 0..6 {
            let mut plus = logits.clone();
            plus.data_mut()[k] += h;
            let mut minus = logits.clone();
            minus.data_mut()[k] -= h;
            let fd = (f(&plus) - f(&minus)) / (2.0 * h);
            assert!((fd - grad.data()[k]).abs() < 1e-8);
        }
    }

    #[test]
    fn small_steps_decrease_the_loss() {
        let (init, gt, lam) = fixture();
        let config = OptimizeConfig {
            steps: 10,
            learning_rate: 0.05,
            solver: SoftLaplaceConfig::with_iters(10),
            ..OptimizeConfig::default()
        };
        let run = run_descent(&init, &gt, &lam, &config).unwrap();
        assert_eq!(run.trace.len(), 10);
        for w in run.trace.windows(2) {
            assert!(w[1].total <= w[0].total, "{} then {}", w[0].total, w[1].total);
        }
    }

    #[test]
    fn rejects_bad_config() {
        let (init, gt, lam) = fixture();
        let zero_steps = OptimizeConfig {
            steps: 0,
            ..OptimizeConfig::default()
        };
        assert!(run_descent(&init, &gt, &lam, &zero_steps).is_err());
        let bad_rate = OptimizeConfig {
            learning_rate: -1.0,
            ..OptimizeConfig::default()
        };
        assert!(run_descent(&init, &gt, &lam, &bad_rate).is_err());
    }

    #[test]
    fn trace_csv_layout() {
        let b = LossBreakdown {
            dice_tissue: 0.5,
            ce_tissue: 0.25,
            dice_laplace: 0.125,
            ce_laplace: 1.0,
            total: 1.875,
        };
        let mut buf = Vec::new();
        write_trace(&mut buf, &[b, b]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "step,dice_tissue,ce_tissue,dice_laplace,ce_laplace,total\n0,0.5,0.25,0.125,1.0,1.875\n1,0.5,0.25,0.125,1.0,1.875\n"
        );
    }
}
