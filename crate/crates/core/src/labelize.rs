//! Laplacian field to laminar channels and labels.
//!
//! A band `(lo, hi)` responds with `s(beta (x - lo)) * s(-beta (x - hi))`,
//! `s` the logistic function: close to 1 inside the band and 0 outside.
//! Stacking one band per laminar class gives a differentiable, unnormalised
//! one-hot image that the loss consumes directly; argmax of the stack is the
//! hard laminar segmentation.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::volume::{ChannelStack, LabelField3D, ScalarField3D};

#[derive(Debug, Clone, PartialEq)]
pub struct BandSpec {
    beta: f64,
    bands: Vec<(f64, f64)>,
}

/// The 11 default bands, steepness 10.
pub const DEFAULT_BANDS: [(f64, f64); 11] = [
    (-0.3, -0.2),
    (0.0, 0.1),
    (0.1, 0.2),
    (0.2, 0.3),
    (0.3, 0.4),
    (0.4, 0.5),
    (0.5, 0.6),
    (0.6, 0.7),
    (0.7, 0.8),
    (0.8, 0.95),
    (0.95, 1.05),
];

pub const DEFAULT_BETA: f64 = 10.0;

impl Default for BandSpec {
    fn default() -> Self {
        BandSpec {
            beta: DEFAULT_BETA,
            bands: DEFAULT_BANDS.to_vec(),
        }
    }
}

impl BandSpec {
    pub fn new(beta: f64, bands: Vec<(f64, f64)>) -> Result<Self> {
        if !(beta.is_finite() && beta > 0.0) {
            return Err(Error::InvalidArgument(format!("beta must be positive, got {beta}")));
        }
        if bands.is_empty() {
            return Err(Error::InvalidArgument("at least one band is required".into()));
        }
        for &(lo, hi) in &bands {
            check_band(lo, hi)?;
        }
        if bands.windows(2).any(|w| w[0].0 > w[1].0) {
            return Err(Error::InvalidArgument("bands must be sorted by lower threshold".into()));
        }
        Ok(BandSpec { beta, bands })
    }

    pub fn with_beta(self, beta: f64) -> Result<Self> {
        Self::new(beta, self.bands)
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn bands(&self) -> &[(f64, f64)] {
        &self.bands
    }

    pub fn len(&self) -> usize {
        self.bands.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bands.is_empty()
    }
}

/// Parses `"lo:hi,lo:hi,..."` with the default steepness.
impl FromStr for BandSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut bands = Vec::new();
        for item in s.split(',') {
            let (lo, hi) = item
                .split_once(':')
                .ok_or_else(|| Error::InvalidArgument(format!("band {item:?} is not lo:hi")))?;
            let parse = |t: &str| {
                t.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::InvalidArgument(format!("bad threshold {t:?}")))
            };
            bands.push((parse(lo)?, parse(hi)?));
        }
        BandSpec::new(DEFAULT_BETA, bands)
    }
}

impl fmt::Display for BandSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, (lo, hi)) in self.bands.iter().enumerate() {
            if k > 0 {
                f.write_str(",")?;
            }
            write!(f, "{lo}:{hi}")?;
        }
        Ok(())
    }
}

fn check_band(lo: f64, hi: f64) -> Result<()> {
    if lo.is_finite() && hi.is_finite() && lo < hi {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("invalid band ({lo}, {hi})")))
    }
}

#[inline]
fn logistic(t: f64) -> f64 {
    1.0 / (1.0 + (-t).exp())
}

/// Band-pass response at a single value.
#[inline]
pub fn band_value(x: f64, beta: f64, lo: f64, hi: f64) -> f64 {
    logistic(beta * (x - lo)) * logistic(-beta * (x - hi))
}

/// d/dx of [`band_value`]: `beta * f * (s_hi - s_lo)`.
#[inline]
pub fn band_derivative(x: f64, beta: f64, lo: f64, hi: f64) -> f64 {
    let s_lo = logistic(beta * (x - lo));
    let s_hi = logistic(-beta * (x - hi));
    beta * s_lo * s_hi * (s_hi - s_lo)
}

pub fn band_filter(phi: &ScalarField3D, beta: f64, lo: f64, hi: f64) -> Result<ScalarField3D> {
    check_band(lo, hi)?;
    if !(beta.is_finite() && beta > 0.0) {
        return Err(Error::InvalidArgument(format!("beta must be positive, got {beta}")));
    }
    let values = phi.values().iter().map(|&x| band_value(x, beta, lo, hi)).collect();
    ScalarField3D::new(*phi.dims(), values)
}

/// One unnormalised channel per band.
pub fn soft_one_hot(phi: &ScalarField3D, spec: &BandSpec) -> ChannelStack {
    let n = phi.dims().len();
    let mut out = ChannelStack::zeros(*phi.dims(), spec.len());
    out.data_mut()
        .par_chunks_mut(n)
        .zip(spec.bands.par_iter())
        .for_each(|(chan, &(lo, hi))| {
            for (o, &x) in chan.iter_mut().zip(phi.values()) {
                *o = band_value(x, spec.beta, lo, hi);
            }
        });
    out
}

/// Pulls a gradient on the channel stack back onto the field.
pub fn soft_one_hot_backward(phi: &ScalarField3D, spec: &BandSpec, grad_channels: &ChannelStack) -> Result<ScalarField3D> {
    phi.dims().ensure_same_shape(grad_channels.dims())?;
    if grad_channels.channels() != spec.len() {
        return Err(Error::InvalidArgument(format!(
            "{} gradient channels for {} bands",
            grad_channels.channels(),
            spec.len()
        )));
    }
    let grad: Vec<f64> = phi
        .values()
        .par_iter()
        .enumerate()
        .map(|(i, &x)| {
            spec.bands
                .iter()
                .enumerate()
                .map(|(k, &(lo, hi))| grad_channels.at(k, i) * band_derivative(x, spec.beta, lo, hi))
                .sum()
        })
        .collect();
    ScalarField3D::new(*phi.dims(), grad)
}

/// Per-voxel index of the largest channel; ties go to the lowest index.
pub fn argmax_labels(channels: &ChannelStack) -> LabelField3D {
    let n = channels.dims().len();
    let labels = (0..n)
        .map(|i| {
            let mut best = 0;
            let mut best_v = channels.at(0, i);
            for c in 1..channels.channels() {
                let v = channels.at(c, i);
                if v > best_v {
                    best = c;
                    best_v = v;
                }
            }
            u8::try_from(best).unwrap_or(u8::MAX)
        })
        .collect();
    LabelField3D::new(*channels.dims(), labels).expect("same dims")
}

/// Laminar loss targets: `argmax + 1` of the band stack of `phi_gt` at
/// voxels where `labeled` is nonzero, 0 (ignored) elsewhere.
pub fn laminar_targets(phi_gt: &ScalarField3D, labeled: &LabelField3D, spec: &BandSpec) -> Result<LabelField3D> {
    phi_gt.dims().ensure_same_shape(labeled.dims())?;
    if spec.len() > u8::MAX as usize - 1 {
        return Err(Error::InvalidArgument("too many bands for u8 label codes".into()));
    }
    let arg = argmax_labels(&soft_one_hot(phi_gt, spec));
    let codes = arg
        .labels()
        .iter()
        .zip(labeled.labels())
        .map(|(&k, &l)| if l == 0 { 0 } else { k + 1 })
        .collect();
    LabelField3D::new(*phi_gt.dims(), codes)
}

/// Equal-width binning of `phi` over `[0, 1]` into `n_layers` layers,
/// numbered from 1. Layer `k` covers `[(k-1)/n, k/n)`; `phi = 1` falls in
/// the last layer and values outside `[0, 1]` in the nearest end layer.
/// Voxels outside `domain` are 0.
pub fn laminar_bins(phi: &ScalarField3D, domain: &[bool], n_layers: usize) -> Result<LabelField3D> {
    if n_layers == 0 || n_layers > u8::MAX as usize {
        return Err(Error::InvalidArgument(format!("layer count {n_layers} out of range")));
    }
    if domain.len() != phi.dims().len() {
        return Err(Error::InvalidArgument("domain mask length does not match the field".into()));
    }
    let n = n_layers as f64;
    let labels = phi
        .values()
        .iter()
        .zip(domain)
        .map(|(&x, &inside)| {
            if !inside {
                return 0;
            }
            let k = (x * n).floor().clamp(0.0, n - 1.0) as u8;
            k + 1
        })
        .collect();
    LabelField3D::new(*phi.dims(), labels)
}
