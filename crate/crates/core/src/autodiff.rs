//! Soft-boundary Laplace solver with a hand-written adjoint.
//!
//! The forward map takes per-voxel class probabilities `p_c` and
//!
//! 1. initialises `phi_0 = sum_c w_c * p_c`,
//! 2. runs `iters` red-black SOR iterations with the 6-neighbour stencil
//!    applied at every voxel of the active colour,
//! 3. after each half-sweep, optionally re-blends the updated voxels as
//!    `x' = (1 - m) * x + b`, where `m` is the probability mass of the
//!    Dirichlet classes and `b = sum_c v_c * p_c` their probability-weighted
//!    boundary value.
//!
//! With one-hot probabilities and the blend enabled this is exactly the hard
//! solver on the equivalent [`crate::solver::LaplaceProblem`]. Every step is
//! affine in the field for fixed probabilities, so the reverse pass replays
//! the recorded states backwards, accumulating derivatives with respect to
//! `m`, `b` and the initial field, and finally maps them onto the channels.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::solver::stencil::{Stencil6, PAR_MIN_LEN};
use crate::solver::Omega;
use crate::volume::{ChannelStack, GridDims, Parity, ScalarField3D, SoftSegmentation};

#[derive(Debug, Clone, PartialEq)]
pub struct SoftLaplaceConfig {
    pub omega: Omega,
    pub iters: usize,
    /// Initial field contribution of each channel.
    pub init_weights: Vec<f64>,
    /// Dirichlet value of each channel, `None` for the solved (GM) class.
    pub clamp_values: Vec<Option<f64>>,
    pub clamp_each_iter: bool,
}

impl Default for SoftLaplaceConfig {
    /// Channels GM, WM, BG, SRLM with initial weights 0.5, 0, 1, 0; WM and
    /// SRLM clamp to 0 and BG to 1; 60 iterations at the optimal omega.
    fn default() -> Self {
        SoftLaplaceConfig {
            omega: Omega::Auto,
            iters: 60,
            init_weights: vec![0.5, 0.0, 1.0, 0.0],
            clamp_values: vec![None, Some(0.0), Some(1.0), Some(0.0)],
            clamp_each_iter: true,
        }
    }
}

impl SoftLaplaceConfig {
    pub fn with_iters(iters: usize) -> Self {
        SoftLaplaceConfig {
            iters,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.iters == 0 {
            return Err(Error::InvalidArgument("soft solver needs at least one iteration".into()));
        }
        if self.init_weights.len() != self.clamp_values.len() {
            return Err(Error::InvalidArgument(
                "init_weights and clamp_values must have the same length".into(),
            ));
        }
        let finite = self.init_weights.iter().all(|w| w.is_finite())
            && self.clamp_values.iter().flatten().all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidArgument("soft solver weights must be finite".into()));
        }
        Ok(())
    }

    /// Per-channel weights and clamp values for `channels` channels. Extra
    /// channels beyond the table behave like WM: weight 0, clamped to 0.
    fn resolve(&self, channels: usize) -> Result<(Vec<f64>, Vec<Option<f64>>)> {
        self.validate()?;
        if channels < self.init_weights.len() {
            return Err(Error::InvalidArgument(format!(
                "{channels} channels do not cover the {} weighted classes",
                self.init_weights.len()
            )));
        }
        let mut weights = self.init_weights.clone();
        let mut clamps = self.clamp_values.clone();
        weights.resize(channels, 0.0);
        clamps.resize(channels, Some(0.0));
        Ok((weights, clamps))
    }
}

/// `phi_0 = sum_c weights[c] * p_c` per voxel.
pub fn init_from_probs(probs: &ChannelStack, weights: &[f64]) -> Result<ScalarField3D> {
    if weights.len() != probs.channels() {
        return Err(Error::InvalidArgument(format!(
            "{} weights for {} channels",
            weights.len(),
            probs.channels()
        )));
    }
    let n = probs.dims().len();
    let mut phi = vec![0.0; n];
    for (c, &w) in weights.iter().enumerate() {
        for (acc, &p) in phi.iter_mut().zip(probs.channel(c)) {
            *acc += w * p;
        }
    }
    ScalarField3D::new(*probs.dims(), phi)
}

/// Vector-Jacobian product of [`init_from_probs`].
pub fn init_from_probs_backward(grad_phi: &ScalarField3D, weights: &[f64]) -> ChannelStack {
    let n = grad_phi.dims().len();
    let mut out = ChannelStack::zeros(*grad_phi.dims(), weights.len());
    for (c, &w) in weights.iter().enumerate() {
        for (o, &g) in out.data_mut()[c * n..(c + 1) * n].iter_mut().zip(grad_phi.values()) {
            *o = w * g;
        }
    }
    out
}

/// Everything the reverse pass needs: the field after every half-sweep plus
/// the per-voxel blend coefficients.
#[derive(Debug, Clone)]
pub struct Tape {
    dims: GridDims,
    channels: usize,
    omega: f64,
    clamp: bool,
    weights: Vec<f64>,
    clamp_values: Vec<Option<f64>>,
    /// Dirichlet probability mass `m` per voxel.
    mass: Vec<f64>,
    /// Blended boundary value `b` per voxel.
    boundary: Vec<f64>,
    /// `states[0]` is the initial field, `states[s]` the field after
    /// half-sweep `s` (odd `s` black, even `s` red).
    states: Vec<Vec<f64>>,
}

impl Tape {
    pub fn dims(&self) -> &GridDims {
        &self.dims
    }

    pub fn half_sweeps(&self) -> usize {
        self.states.len() - 1
    }

    pub fn output(&self) -> &[f64] {
        self.states.last().expect("tape holds the initial state")
    }

    pub fn state(&self, s: usize) -> &[f64] {
        &self.states[s]
    }

    /// Re-runs the recorded forward pass from the stored initial field.
    pub fn replay(&self) -> Vec<f64> {
        let stencil = Stencil6::full(&self.dims);
        let mut x = self.states[0].clone();
        let mut buf = Vec::new();
        for s in 1..self.states.len() {
            self.half_sweep(&stencil, &mut x, parity_of_step(s), &mut buf);
        }
        x
    }

    fn half_sweep(&self, stencil: &Stencil6, x: &mut [f64], parity: Parity, buf: &mut Vec<f64>) {
        let idx = stencil.active(parity);
        {
            let x: &[f64] = x;
            idx.par_iter()
                .with_min_len(PAR_MIN_LEN)
                .map(|&i| {
                    let t = stencil.relax(x, i, self.omega);
                    if self.clamp {
                        (1.0 - self.mass[i]) * t + self.boundary[i]
                    } else {
                        t
                    }
                })
                .collect_into_vec(buf);
        }
        for (&i, &v) in idx.iter().zip(buf.iter()) {
            x[i] = v;
        }
    }
}

fn parity_of_step(s: usize) -> Parity {
    if s % 2 == 1 {
        Parity::Black
    } else {
        Parity::Red
    }
}

/// Forward pass on a validated segmentation.
pub fn soft_solve_forward(seg: &SoftSegmentation, config: &SoftLaplaceConfig) -> Result<(ScalarField3D, Tape)> {
    soft_solve_forward_stack(seg.as_stack(), config)
}

/// Forward pass on raw channels; the probabilities need not be normalised,
/// which lets finite-difference checks perturb one entry at a time.
pub fn soft_solve_forward_stack(probs: &ChannelStack, config: &SoftLaplaceConfig) -> Result<(ScalarField3D, Tape)> {
    let dims = *probs.dims();
    let (weights, clamp_values) = config.resolve(probs.channels())?;
    let omega = config.omega.resolve(&dims)?;
    let init = init_from_probs(probs, &weights)?;

    let n = dims.len();
    let mut mass = vec![0.0; n];
    let mut boundary = vec![0.0; n];
    if config.clamp_each_iter {
        for (c, v) in clamp_values.iter().enumerate() {
            if let Some(v) = *v {
                for i in 0..n {
                    let p = probs.at(c, i);
                    mass[i] += p;
                    boundary[i] += v * p;
                }
            }
        }
    }

    let mut tape = Tape {
        dims,
        channels: probs.channels(),
        omega,
        clamp: config.clamp_each_iter,
        weights,
        clamp_values,
        mass,
        boundary,
        states: Vec::with_capacity(2 * config.iters + 1),
    };
    let stencil = Stencil6::full(&dims);
    let mut x = init.into_values();
    let mut buf = Vec::new();
    tape.states.push(x.clone());
    for s in 1..=2 * config.iters {
        tape.half_sweep(&stencil, &mut x, parity_of_step(s), &mut buf);
        tape.states.push(x.clone());
    }
    let phi = ScalarField3D::new(dims, x)
        .map_err(|_| Error::InvalidField("soft solve produced a non-finite value".into()))?;
    Ok((phi, tape))
}

/// Reverse pass: the gradient of `<grad_out, phi>` with respect to every
/// probability channel. Consumes the tape.
pub fn soft_solve_backward(tape: Tape, grad_out: &ScalarField3D) -> Result<ChannelStack> {
    if !tape.dims.same_shape(grad_out.dims()) {
        return Err(Error::TapeMismatch(format!(
            "gradient is {} but the tape recorded {}",
            grad_out.dims(),
            tape.dims
        )));
    }
    let n = tape.dims.len();
    let stencil = Stencil6::full(&tape.dims);
    let omega = tape.omega;

    let mut g = grad_out.values().to_vec();
    let mut d_mass = vec![0.0; n];
    let mut d_boundary = vec![0.0; n];
    // Adjoint pushed from an updated voxel to each of its neighbours.
    let mut push = vec![0.0; n];
    let mut updated = Vec::new();

    for s in (1..tape.states.len()).rev() {
        let parity = parity_of_step(s);
        let idx = stencil.active(parity);
        let prev = &tape.states[s - 1];

        // Per updated voxel: (new adjoint of itself, d_mass, d_boundary, push).
        {
            let g: &[f64] = &g;
            idx.par_iter()
                .with_min_len(PAR_MIN_LEN)
                .map(|&i| {
                    let gi = g[i];
                    let (scale, dm, db) = if tape.clamp {
                        let t = stencil.relax(prev, i, omega);
                        (1.0 - tape.mass[i], -gi * t, gi)
                    } else {
                        (1.0, 0.0, 0.0)
                    };
                    let a = gi * scale;
                    match stencil.neighbor_count(i) {
                        0 => (a, dm, db, 0.0),
                        k => (a * (1.0 - omega), dm, db, a * omega / k as f64),
                    }
                })
                .collect_into_vec(&mut updated);
        }
        for (&i, &(self_adj, dm, db, p)) in idx.iter().zip(&updated) {
            g[i] = self_adj;
            d_mass[i] += dm;
            d_boundary[i] += db;
            push[i] = p;
        }

        // Unchanged voxels collect what their updated neighbours pushed.
        let gathered: Vec<(usize, f64)> = stencil
            .active(parity.other())
            .par_iter()
            .with_min_len(PAR_MIN_LEN)
            .map(|&j| (j, stencil.neighbors(j).map(|i| push[i]).sum::<f64>()))
            .collect();
        for (j, extra) in gathered {
            g[j] += extra;
        }
    }

    let mut grad = ChannelStack::zeros(tape.dims, tape.channels);
    for c in 0..tape.channels {
        let w = tape.weights[c];
        let clamp = tape.clamp_values[c].filter(|_| tape.clamp);
        let out = grad.channel_mut(c);
        for i in 0..n {
            let mut v = w * g[i];
            if let Some(value) = clamp {
                v += d_mass[i] + value * d_boundary[i];
            }
            out[i] = v;
        }
    }
    Ok(grad)
}
