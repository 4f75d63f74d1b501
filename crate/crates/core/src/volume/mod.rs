//! Core 3D grid types shared by every other module.
//!
//! All fields are stored x-fastest: voxel `(x, y, z)` lives at linear index
//! `x + nx * (y + ny * z)`. Multi-channel data is channel-major, so channel
//! `c` of voxel `i` is at `c * len + i`.

mod vgrid;

pub use vgrid::{decode, encode, read_vgrid, write_vgrid, VGrid, VGridRef, MAGIC};

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Tissue label codes.
pub mod labels {
    /// Unlabeled voxels; the ignore label of the losses.
    pub const UNLABELED: u8 = 0;
    pub const GM: u8 = 1;
    pub const WM: u8 = 2;
    /// CSF / background.
    pub const BG: u8 = 3;
    pub const SRLM: u8 = 4;

    /// Number of tissue classes carried as probability channels.
    pub const TISSUE_CLASSES: usize = 4;

    pub fn name(code: u8) -> Option<&'static str> {
        match code {
            UNLABELED => Some("unlabeled"),
            GM => Some("gm"),
            WM => Some("wm"),
            BG => Some("bg"),
            SRLM => Some("srlm"),
            _ => None,
        }
    }

    /// Channel carrying the probability of `code` (codes start at 1).
    pub fn channel(code: u8) -> Option<usize> {
        (code as usize).checked_sub(1)
    }
}

/// Voxel counts and physical spacing (mm) of a grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridDims {
    nx: usize,
    ny: usize,
    nz: usize,
    spacing: [f64; 3],
}

impl GridDims {
    pub fn new(nx: usize, ny: usize, nz: usize) -> Result<Self> {
        Self::with_spacing(nx, ny, nz, [1.0; 3])
    }

    pub fn with_spacing(nx: usize, ny: usize, nz: usize, spacing: [f64; 3]) -> Result<Self> {
        if nx == 0 || ny == 0 || nz == 0 {
            return Err(Error::InvalidArgument(format!(
                "grid dimensions must be positive, got {nx}x{ny}x{nz}"
            )));
        }
        if spacing.iter().any(|s| !s.is_finite() || *s <= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "spacing must be positive and finite, got {spacing:?}"
            )));
        }
        // Every index computation downstream is isize-based.
        let addressable = nx
            .checked_mul(ny)
            .and_then(|v| v.checked_mul(nz))
            .is_some_and(|v| v <= isize::MAX as usize / 8);
        if !addressable {
            return Err(Error::InvalidArgument(format!(
                "grid {nx}x{ny}x{nz} is not addressable"
            )));
        }
        Ok(GridDims { nx, ny, nz, spacing })
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn nz(&self) -> usize {
        self.nz
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.nx, self.ny, self.nz]
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    /// Always false; grids hold at least one voxel.
    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn min_dim(&self) -> usize {
        self.nx.min(self.ny).min(self.nz)
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        debug_assert!(x < self.nx && y < self.ny && z < self.nz);
        x + self.nx * (y + self.ny * z)
    }

    #[inline]
    pub fn coords(&self, i: usize) -> [usize; 3] {
        let x = i % self.nx;
        let yz = i / self.nx;
        [x, yz % self.ny, yz / self.ny]
    }

    /// Linear index of `(x, y, z)` if it lies inside the grid.
    #[inline]
    pub fn checked_index(&self, x: isize, y: isize, z: isize) -> Option<usize> {
        if x < 0 || y < 0 || z < 0 {
            return None;
        }
        let (x, y, z) = (x as usize, y as usize, z as usize);
        (x < self.nx && y < self.ny && z < self.nz).then(|| self.index(x, y, z))
    }

    /// Same voxel counts; spacing is ignored.
    pub fn same_shape(&self, other: &GridDims) -> bool {
        self.shape() == other.shape()
    }

    pub(crate) fn ensure_same_shape(&self, other: &GridDims) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::dims(self, other))
        }
    }
}

impl fmt::Display for GridDims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.nx, self.ny, self.nz)
    }
}

/// Parses `"nx,ny,nz"` (also accepts `x` as the separator).
impl FromStr for GridDims {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split([',', 'x']).map(str::trim).collect();
        if parts.len() != 3 {
            return Err(Error::InvalidArgument(format!(
                "expected three comma-separated dimensions, got {s:?}"
            )));
        }
        let mut n = [0usize; 3];
        for (slot, part) in n.iter_mut().zip(&parts) {
            *slot = part
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("bad dimension {part:?} in {s:?}")))?;
        }
        GridDims::new(n[0], n[1], n[2])
    }
}

/// One finite real value per voxel.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField3D {
    dims: GridDims,
    values: Vec<f64>,
}

impl ScalarField3D {
    pub fn new(dims: GridDims, values: Vec<f64>) -> Result<Self> {
        if values.len() != dims.len() {
            return Err(Error::InvalidField(format!(
                "{} values for a {} grid",
                values.len(),
                dims
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidField(format!(
                "non-finite value at voxel {:?}",
                dims.coords(i)
            )));
        }
        Ok(ScalarField3D { dims, values })
    }

    pub fn filled(dims: GridDims, value: f64) -> Self {
        assert!(value.is_finite());
        ScalarField3D {
            dims,
            values: vec![value; dims.len()],
        }
    }

    pub fn zeros(dims: GridDims) -> Self {
        Self::filled(dims, 0.0)
    }

    pub fn from_fn(dims: GridDims, mut f: impl FnMut(usize, usize, usize) -> f64) -> Result<Self> {
        let mut values = Vec::with_capacity(dims.len());
        for z in 0..dims.nz() {
            for y in 0..dims.ny() {
                for x in 0..dims.nx() {
                    values.push(f(x, y, z));
                }
            }
        }
        Self::new(dims, values)
    }

    pub fn dims(&self) -> &GridDims {
        &self.dims
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> f64 {
        self.values[self.dims.index(x, y, z)]
    }

    pub(crate) fn from_raw(dims: GridDims, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), dims.len());
        debug_assert!(values.iter().all(|v| v.is_finite()));
        ScalarField3D { dims, values }
    }

    pub fn max_abs_diff(&self, other: &ScalarField3D) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// One small unsigned class code per voxel.
///
/// Tissue segmentations use the codes in [`labels`]; laminar segmentations
/// reuse the type with layer codes `1..=n` and `0` outside the domain.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelField3D {
    dims: GridDims,
    labels: Vec<u8>,
}

impl LabelField3D {
    pub fn new(dims: GridDims, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != dims.len() {
            return Err(Error::InvalidField(format!(
                "{} labels for a {} grid",
                labels.len(),
                dims
            )));
        }
        Ok(LabelField3D { dims, labels })
    }

    /// Like [`LabelField3D::new`] but also checks every code against the
    /// tissue label table.
    pub fn tissue(dims: GridDims, labels: Vec<u8>) -> Result<Self> {
        let field = Self::new(dims, labels)?;
        field.validate_tissue()?;
        Ok(field)
    }

    pub fn filled(dims: GridDims, code: u8) -> Self {
        LabelField3D {
            dims,
            labels: vec![code; dims.len()],
        }
    }

    pub fn validate_tissue(&self) -> Result<()> {
        match self.labels.iter().position(|&c| labels::name(c).is_none()) {
            Some(i) => Err(Error::InvalidField(format!(
                "label {} at voxel {:?} is not a tissue code",
                self.labels[i],
                self.dims.coords(i)
            ))),
            None => Ok(()),
        }
    }

    pub fn dims(&self) -> &GridDims {
        &self.dims
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn labels_mut(&mut self) -> &mut [u8] {
        &mut self.labels
    }

    pub fn into_labels(self) -> Vec<u8> {
        self.labels
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> u8 {
        self.labels[self.dims.index(x, y, z)]
    }

    pub fn mask(&self, code: u8) -> Vec<bool> {
        self.labels.iter().map(|&c| c == code).collect()
    }

    pub fn mask_any(&self, codes: &[u8]) -> Vec<bool> {
        self.labels.iter().map(|c| codes.contains(c)).collect()
    }

    pub fn count(&self, code: u8) -> usize {
        self.labels.iter().filter(|&&c| c == code).count()
    }

    pub fn max_code(&self) -> u8 {
        self.labels.iter().copied().max().unwrap_or(0)
    }
}

/// A stack of real-valued channels over a grid, channel-major.
///
/// No normalisation is implied: band-pass responses and gradients live here.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelStack {
    dims: GridDims,
    channels: usize,
    data: Vec<f64>,
}

impl ChannelStack {
    pub fn new(dims: GridDims, channels: usize, data: Vec<f64>) -> Result<Self> {
        if channels == 0 {
            return Err(Error::InvalidField("channel count must be positive".into()));
        }
        if Some(data.len()) != dims.len().checked_mul(channels) {
            return Err(Error::InvalidField(format!(
                "{} values for {} channels over a {} grid",
                data.len(),
                channels,
                dims
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidField("non-finite channel value".into()));
        }
        Ok(ChannelStack { dims, channels, data })
    }

    pub fn zeros(dims: GridDims, channels: usize) -> Self {
        assert!(channels > 0);
        ChannelStack {
            dims,
            channels,
            data: vec![0.0; dims.len() * channels],
        }
    }

    pub fn dims(&self) -> &GridDims {
        &self.dims
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.dims.len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.dims.len();
        &mut self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn at(&self, c: usize, i: usize) -> f64 {
        self.data[c * self.dims.len() + i]
    }
}

/// Tolerance on the per-voxel channel sum of a [`SoftSegmentation`].
pub const PROB_SUM_TOLERANCE: f64 = 1e-5;

/// Per-voxel class probabilities: a [`ChannelStack`] whose channels are in
/// `[0, 1]` and sum to one at every voxel.
///
/// Channel `c` holds the probability of label code `c + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftSegmentation(ChannelStack);

impl SoftSegmentation {
    pub fn new(stack: ChannelStack) -> Result<Self> {
        let n = stack.dims.len();
        for i in 0..n {
            let mut sum = 0.0;
            for c in 0..stack.channels {
                let p = stack.at(c, i);
                if !(0.0..=1.0).contains(&p) {
                    return Err(Error::InvalidField(format!(
                        "probability {p} outside [0,1] at voxel {:?}",
                        stack.dims.coords(i)
                    )));
                }
                sum += p;
            }
            if (sum - 1.0).abs() > PROB_SUM_TOLERANCE {
                return Err(Error::InvalidField(format!(
                    "probabilities sum to {sum} at voxel {:?}",
                    stack.dims.coords(i)
                )));
            }
        }
        Ok(SoftSegmentation(stack))
    }

    pub fn from_data(dims: GridDims, channels: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(ChannelStack::new(dims, channels, data)?)
    }

    /// Exact one-hot encoding of a segmentation with codes `1..=channels`.
    pub fn one_hot(seg: &LabelField3D, channels: usize) -> Result<Self> {
        Self::blended(seg, channels, 0.0)
    }

    /// `(1 - mix) * one_hot + mix * uniform`.
    pub fn blended(seg: &LabelField3D, channels: usize, mix: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&mix) {
            return Err(Error::InvalidArgument(format!("blend weight {mix} outside [0,1]")));
        }
        let dims = *seg.dims();
        let n = dims.len();
        let uniform = mix / channels as f64;
        let mut data = vec![uniform; n * channels];
        for (i, &code) in seg.labels().iter().enumerate() {
            let c = labels::channel(code)
                .filter(|&c| c < channels)
                .ok_or_else(|| {
                    Error::InvalidSegmentation(format!(
                        "label {code} at voxel {:?} has no probability channel",
                        dims.coords(i)
                    ))
                })?;
            data[c * n + i] += 1.0 - mix;
        }
        Self::from_data(dims, channels, data)
    }

    pub fn as_stack(&self) -> &ChannelStack {
        &self.0
    }

    pub fn into_stack(self) -> ChannelStack {
        self.0
    }

    pub fn dims(&self) -> &GridDims {
        self.0.dims()
    }

    pub fn channels(&self) -> usize {
        self.0.channels()
    }

    /// Hard segmentation: code `argmax + 1`, ties toward the lower channel.
    pub fn argmax(&self) -> LabelField3D {
        let layers = crate::labelize::argmax_labels(&self.0);
        let labels = layers.labels().iter().map(|&c| c + 1).collect();
        LabelField3D::new(*self.dims(), labels).expect("same dims")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Parity {
    /// `(x + y + z) mod 2 = 0`
    Red,
    /// `(x + y + z) mod 2 = 1`
    Black,
}

impl Parity {
    #[inline]
    pub fn of(x: usize, y: usize, z: usize) -> Parity {
        if (x + y + z) % 2 == 0 {
            Parity::Red
        } else {
            Parity::Black
        }
    }

    pub fn other(self) -> Parity {
        match self {
            Parity::Red => Parity::Black,
            Parity::Black => Parity::Red,
        }
    }
}

/// The voxels of one checkerboard colour.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckerboardMask {
    dims: GridDims,
    parity: Parity,
    selected: Vec<bool>,
}

pub fn make_checkerboard(dims: GridDims, parity: Parity) -> CheckerboardMask {
    let mut selected = Vec::with_capacity(dims.len());
    for z in 0..dims.nz() {
        for y in 0..dims.ny() {
            for x in 0..dims.nx() {
                selected.push(Parity::of(x, y, z) == parity);
            }
        }
    }
    CheckerboardMask {
        dims,
        parity,
        selected,
    }
}

impl CheckerboardMask {
    pub fn dims(&self) -> &GridDims {
        &self.dims
    }

    pub fn parity(&self) -> Parity {
        self.parity
    }

    pub fn contains(&self, x: usize, y: usize, z: usize) -> bool {
        self.selected[self.dims.index(x, y, z)]
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.selected
    }

    pub fn count(&self) -> usize {
        self.selected.iter().filter(|&&s| s).count()
    }

    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.selected
            .iter()
            .enumerate()
            .filter_map(|(i, &s)| s.then_some(i))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checkerboard_small_cases() {
        let d = GridDims::new(2, 1, 1).unwrap();
        let red = make_checkerboard(d, Parity::Red);
        assert!(red.contains(0, 0, 0));
        assert!(!red.contains(1, 0, 0));

        let d = GridDims::new(3, 3, 3).unwrap();
        assert_eq!(make_checkerboard(d, Parity::Red).count(), 14);
        assert_eq!(make_checkerboard(d, Parity::Black).count(), 13);
    }

    #[test]
    fn linear_index_known_pattern() {
        let d = GridDims::new(3, 4, 5).unwrap();
        let f = ScalarField3D::from_fn(d, |x, y, z| (100 * z + 10 * y + x) as f64).unwrap();
        assert_eq!(f.values()[0], 0.0);
        assert_eq!(f.values()[1], 1.0);
        assert_eq!(f.values()[3], 10.0);
        assert_eq!(f.values()[12], 100.0);
        assert_eq!(f.values()[2 + 3 * (1 + 4 * 3)], 312.0);
        for i in 0..d.len() {
            let [x, y, z] = d.coords(i);
            assert_eq!(d.index(x, y, z), i);
        }
    }

    #[test]
    fn dims_validation_and_parsing() {
        assert!(GridDims::new(0, 1, 1).is_err());
        assert!(GridDims::with_spacing(1, 1, 1, [1.0, 0.0, 1.0]).is_err());
        assert!(GridDims::new(usize::MAX, 2, 2).is_err());
        let d: GridDims = "6,7,8".parse().unwrap();
        assert_eq!(d.shape(), [6, 7, 8]);
        assert_eq!(d.min_dim(), 6);
        assert!("6,7".parse::<GridDims>().is_err());
        assert!("a,b,c".parse::<GridDims>().is_err());
    }

    #[test]
    fn fields_reject_bad_values() {
        let d = GridDims::new(2, 2, 2).unwrap();
        assert!(ScalarField3D::new(d, vec![0.0; 7]).is_err());
        let mut v = vec![0.0; 8];
        v[3] = f64::NAN;
        assert!(ScalarField3D::new(d, v).is_err());
        assert!(LabelField3D::tissue(d, vec![5; 8]).is_err());
        assert!(LabelField3D::new(d, vec![9; 8]).is_ok());
        assert!(SoftSegmentation::from_data(d, 2, vec![0.6; 16]).is_err());
        assert!(SoftSegmentation::from_data(d, 2, vec![0.5; 16]).is_ok());
    }

    #[test]
    fn one_hot_and_argmax() {
        let d = GridDims::new(4, 1, 1).unwrap();
        let seg = LabelField3D::tissue(d, vec![1, 2, 3, 4]).unwrap();
        let soft = SoftSegmentation::blended(&seg, 4, 0.1).unwrap();
        assert!((soft.as_stack().at(0, 0) - 0.925).abs() < 1e-15);
        assert!((soft.as_stack().at(1, 0) - 0.025).abs() < 1e-15);
        assert_eq!(soft.argmax(), seg);
        let unlabeled = LabelField3D::new(d, vec![0, 1, 1, 1]).unwrap();
        assert!(SoftSegmentation::one_hot(&unlabeled, 4).is_err());
    }
}
