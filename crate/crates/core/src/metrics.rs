//! Evaluation measures: DSC, HD95, the re-solve laminar protocol,
//! inscribed-sphere thickness, Pearson r and ICC(3,k).

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::ser::SerializeMap;
use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::labelize::laminar_bins;
use crate::solver::{solve_sor, LabelMapping, LaplaceProblem, Omega, Scheme, SolverConfig};
use crate::volume::{labels, GridDims, LabelField3D};

/// `2|A∩B| / (|A| + |B|)` over voxels carrying `label`; 1 when both are empty.
pub fn dsc(a: &LabelField3D, b: &LabelField3D, label: u8) -> Result<f64> {
    a.dims().ensure_same_shape(b.dims())?;
    let (mut na, mut nb, mut both) = (0usize, 0usize, 0usize);
    for (&x, &y) in a.labels().iter().zip(b.labels()) {
        let (ia, ib) = (x == label, y == label);
        na += ia as usize;
        nb += ib as usize;
        both += (ia && ib) as usize;
    }
    if na + nb == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * both as f64 / (na + nb) as f64)
}

/// Mask voxels with at least one face neighbour outside the mask or
/// outside the grid.
pub fn boundary(mask: &[bool], dims: &GridDims) -> Vec<bool> {
    let [nx, ny, nz] = dims.shape();
    let mut out = vec![false; mask.len()];
    for (i, &inside) in mask.iter().enumerate() {
        if !inside {
            continue;
        }
        let [x, y, z] = dims.coords(i);
        let on_edge = x == 0 || y == 0 || z == 0 || x + 1 == nx || y + 1 == ny || z + 1 == nz;
        out[i] = on_edge
            || !mask[i - 1]
            || !mask[i + 1]
            || !mask[i - nx]
            || !mask[i + nx]
            || !mask[i - nx * ny]
            || !mask[i + nx * ny];
    }
    out
}

/// Exact Euclidean distance (mm, centre to centre) from every voxel to the
/// nearest voxel of `set`; infinite when `set` is empty.
///
/// Separable lower-envelope transform, one pass per axis.
pub fn distance_to_set(set: &[bool], dims: &GridDims) -> Vec<f64> {
    assert_eq!(set.len(), dims.len(), "mask length must match the grid");
    let mut d2: Vec<f64> = set.iter().map(|&s| if s { 0.0 } else { f64::INFINITY }).collect();
    let [nx, ny, nz] = dims.shape();
    let sp = dims.spacing();
    let strides = [1, nx, nx * ny];
    let lens = [nx, ny, nz];
    for axis in 0..3 {
        let n = lens[axis];
        let stride = strides[axis];
        let starts: Vec<usize> = (0..dims.len())
            .filter(|&i| dims.coords(i)[axis] == 0)
            .collect();
        let lines: Vec<Vec<f64>> = starts
            .par_iter()
            .map(|&s| {
                let f: Vec<f64> = (0..n).map(|k| d2[s + k * stride]).collect();
                envelope_1d(&f, sp[axis])
            })
            .collect();
        for (&s, line) in starts.iter().zip(lines) {
            for (k, v) in line.into_iter().enumerate() {
                d2[s + k * stride] = v;
            }
        }
    }
    d2.into_iter().map(f64::sqrt).collect()
}

/// `min_p (h (q - p))^2 + f(p)` for every `q`.
fn envelope_1d(f: &[f64], h: f64) -> Vec<f64> {
    let n = f.len();
    let pos = |k: usize| k as f64 * h;
    let mut v = Vec::with_capacity(n);
    let mut z: Vec<f64> = Vec::with_capacity(n + 1);
    for q in 0..n {
        if f[q].is_infinite() {
            continue;
        }
        let xq = pos(q);
        loop {
            match v.last() {
                None => {
                    v.push(q);
                    z.clear();
                    z.push(f64::NEG_INFINITY);
                    break;
                }
                Some(&p) => {
                    let xp = pos(p);
                    let s = ((f[q] + xq * xq) - (f[p] + xp * xp)) / (2.0 * (xq - xp));
                    if s <= *z.last().expect("z tracks v") {
                        v.pop();
                        z.pop();
                        continue;
                    }
                    v.push(q);
                    z.push(s);
                    break;
                }
            }
        }
    }
    if v.is_empty() {
        return vec![f64::INFINITY; n];
    }
    let mut out = vec![0.0; n];
    let mut j = 0;
    for (q, slot) in out.iter_mut().enumerate() {
        let x = pos(q);
        while j + 1 < v.len() && z[j + 1] < x {
            j += 1;
        }
        let dx = x - pos(v[j]);
        *slot = dx * dx + f[v[j]];
    }
    out
}

/// Distance from each voxel to the nearest voxel outside `mask`, in mm.
/// Positions beyond the grid do not count as outside.
pub fn edt(mask: &[bool], dims: &GridDims) -> Vec<f64> {
    let outside: Vec<bool> = mask.iter().map(|&m| !m).collect();
    distance_to_set(&outside, dims)
}

/// Percentile with linear interpolation between order statistics.
pub fn percentile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::InvalidArgument("percentile of an empty set".into()));
    }
    if !(0.0..=100.0).contains(&q) {
        return Err(Error::InvalidArgument(format!("percentile {q} out of range")));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = q / 100.0 * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    Ok(sorted[lo] + (rank - lo as f64) * (sorted[hi] - sorted[lo]))
}

/// Symmetric 95th-percentile boundary distance in mm.
pub fn hd95(a: &[bool], b: &[bool], dims: &GridDims) -> Result<f64> {
    if a.len() != dims.len() || b.len() != dims.len() {
        return Err(Error::InvalidArgument("mask length does not match the grid".into()));
    }
    if !a.iter().any(|&v| v) || !b.iter().any(|&v| v) {
        return Err(Error::EmptyMask);
    }
    let ba = boundary(a, dims);
    let bb = boundary(b, dims);
    let to_a = distance_to_set(&ba, dims);
    let to_b = distance_to_set(&bb, dims);
    let pooled: Vec<f64> = ba
        .iter()
        .zip(&to_b)
        .chain(bb.iter().zip(&to_a))
        .filter(|(&on, _)| on)
        .map(|(_, &d)| d)
        .collect();
    percentile(&pooled, 95.0)
}

pub const DEFAULT_SEARCH_RADIUS_MM: f64 = 2.0;

/// Local inscribed-sphere thickness at `landmark`, in mm.
///
/// Among GM voxels within `search_radius_mm` of the landmark whose sphere
/// of radius EDT reaches the landmark, returns twice the largest radius.
pub fn thickness_at(gm: &[bool], dims: &GridDims, landmark: [usize; 3], search_radius_mm: f64) -> Result<f64> {
    if gm.len() != dims.len() {
        return Err(Error::InvalidArgument("mask length does not match the grid".into()));
    }
    let [nx, ny, nz] = dims.shape();
    if landmark[0] >= nx || landmark[1] >= ny || landmark[2] >= nz {
        return Err(Error::InvalidArgument(format!("landmark {landmark:?} is outside the {dims} grid")));
    }
    if !(search_radius_mm.is_finite() && search_radius_mm >= 0.0) {
        return Err(Error::InvalidArgument("search radius must be nonnegative".into()));
    }
    let dist = edt(gm, dims);
    let sp = dims.spacing();
    let reach: Vec<isize> = sp.iter().map(|s| (search_radius_mm / s).floor() as isize).collect();
    let mut best: Option<f64> = None;
    for dz in -reach[2]..=reach[2] {
        for dy in -reach[1]..=reach[1] {
            for dx in -reach[0]..=reach[0] {
                let offset = [dx as f64 * sp[0], dy as f64 * sp[1], dz as f64 * sp[2]];
                let r = offset.iter().map(|o| o * o).sum::<f64>().sqrt();
                if r > search_radius_mm {
                    continue;
                }
                let Some(c) = dims.checked_index(
                    landmark[0] as isize + dx,
                    landmark[1] as isize + dy,
                    landmark[2] as isize + dz,
                ) else {
                    continue;
                };
                if gm[c] && dist[c] >= r && best.is_none_or(|b| dist[c] > b) {
                    best = Some(dist[c]);
                }
            }
        }
    }
    match best {
        Some(radius) if radius.is_finite() => Ok(2.0 * radius),
        Some(_) => Err(Error::DegenerateInput("mask has no outside voxel".into())),
        None => Err(Error::LandmarkOutsideMask(landmark)),
    }
}

pub fn pearson_r(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::InvalidArgument(format!("lengths {} and {} differ", x.len(), y.len())));
    }
    if x.len() < 3 {
        return Err(Error::InvalidArgument("pearson_r needs at least 3 samples".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::DegenerateInput("zero variance".into()));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

/// ICC(3,k) `(BMS - EMS) / BMS` for `ratings[subject][rater]`.
pub fn icc_fixed_raters(ratings: &[Vec<f64>]) -> Result<f64> {
    let n = ratings.len();
    if n < 3 {
        return Err(Error::InvalidArgument("ICC needs at least 3 subjects".into()));
    }
    let k = ratings[0].len();
    if k < 2 || ratings.iter().any(|r| r.len() != k) {
        return Err(Error::InvalidArgument("ICC needs a rectangular table with at least 2 raters".into()));
    }
    let total = (n * k) as f64;
    let grand = ratings.iter().flatten().sum::<f64>() / total;
    let row_means: Vec<f64> = ratings.iter().map(|r| r.iter().sum::<f64>() / k as f64).collect();
    let col_means: Vec<f64> = (0..k)
        .map(|j| ratings.iter().map(|r| r[j]).sum::<f64>() / n as f64)
        .collect();
    let ss_rows = k as f64 * row_means.iter().map(|m| (m - grand).powi(2)).sum::<f64>();
    let ss_cols = n as f64 * col_means.iter().map(|m| (m - grand).powi(2)).sum::<f64>();
    let ss_total = ratings.iter().flatten().map(|v| (v - grand).powi(2)).sum::<f64>();
    let ss_err = (ss_total - ss_rows - ss_cols).max(0.0);
    let bms = ss_rows / (n - 1) as f64;
    let ems = ss_err / ((n - 1) * (k - 1)) as f64;
    if bms == 0.0 {
        return Err(Error::DegenerateInput("no between-subject variance".into()));
    }
    Ok((bms - ems) / bms)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaplaceEvalConfig {
    pub iters: usize,
    pub omega: Omega,
    pub layers: usize,
    /// Initial value of domain voxels before the solve.
    pub init: f64,
}

impl Default for LaplaceEvalConfig {
    fn default() -> Self {
        LaplaceEvalConfig {
            iters: 120,
            omega: Omega::Auto,
            layers: 5,
            init: 0.5,
        }
    }
}

/// Laminar segmentation of `seg`: hard SOR solve, then equal-width bins.
pub fn laminar_segmentation(seg: &LabelField3D, config: &LaplaceEvalConfig) -> Result<LabelField3D> {
    for (code, name) in [(labels::GM, "GM"), (labels::WM, "WM"), (labels::BG, "BG")] {
        if seg.count(code) == 0 {
            return Err(Error::InvalidSegmentation(format!("no {name} voxels")));
        }
    }
    let problem = LaplaceProblem::from_labels(seg, &LabelMapping::default())?;
    let solver = SolverConfig {
        omega: config.omega,
        max_iters: config.iters,
        tolerance: 0.0,
        scheme: Scheme::Sor6,
    };
    let (phi, _) = solve_sor(&problem, &problem.initial_field(config.init), &solver)?;
    laminar_bins(&phi, &problem.domain_mask(), config.layers)
}

/// Per-layer DSC between the laminar segmentations of `pred` and `gt`.
pub fn laplace_eval(pred: &LabelField3D, gt: &LabelField3D) -> Result<Vec<f64>> {
    laplace_eval_with(pred, gt, &LaplaceEvalConfig::default())
}

pub fn laplace_eval_with(pred: &LabelField3D, gt: &LabelField3D, config: &LaplaceEvalConfig) -> Result<Vec<f64>> {
    pred.dims().ensure_same_shape(gt.dims())?;
    let (lp, lg) = rayon::join(
        || laminar_segmentation(pred, config),
        || laminar_segmentation(gt, config),
    );
    let (lp, lg) = (lp?, lg?);
    (1..=config.layers as u8).map(|k| dsc(&lp, &lg, k)).collect()
}

/// Tissue DSC per label, GM HD95 and optionally the per-layer laminar DSC.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub dsc: BTreeMap<String, f64>,
    pub hd95_mm: f64,
    pub laplace_dsc: Option<Vec<f64>>,
}

impl Serialize for MetricReport {
    /// Flat object: `dsc_<label>`, `hd95_mm`, `laplace_dsc_layer<k>`.
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let layers = self.laplace_dsc.as_deref().unwrap_or(&[]);
        let mut map = serializer.serialize_map(Some(self.dsc.len() + 1 + layers.len()))?;
        for (name, v) in &self.dsc {
            map.serialize_entry(&format!("dsc_{name}"), v)?;
        }
        map.serialize_entry("hd95_mm", &self.hd95_mm)?;
        for (k, v) in layers.iter().enumerate() {
            map.serialize_entry(&format!("laplace_dsc_layer{}", k + 1), v)?;
        }
        map.end()
    }
}

/// Builds a [`MetricReport`] comparing `pred` against `gt`. DSC covers every
/// nonzero code present in either field; HD95 is measured on GM.
pub fn evaluate(pred: &LabelField3D, gt: &LabelField3D, with_laplace: bool) -> Result<MetricReport> {
    pred.dims().ensure_same_shape(gt.dims())?;
    let top = pred.max_code().max(gt.max_code());
    let mut scores = BTreeMap::new();
    for code in 1..=top {
        if pred.count(code) + gt.count(code) == 0 {
            continue;
        }
        let name = labels::name(code).map_or_else(|| code.to_string(), str::to_string);
        scores.insert(name, dsc(pred, gt, code)?);
    }
    let hd95_mm = hd95(&pred.mask(labels::GM), &gt.mask(labels::GM), gt.dims())?;
    let laplace_dsc = if with_laplace { Some(laplace_eval(pred, gt)?) } else { None };
    Ok(MetricReport {
        dsc: scores,
        hd95_mm,
        laplace_dsc,
    })
}

/// Landmarks from a JSON array of `[x, y, z]` voxel coordinates.
pub fn parse_landmarks(text: &str) -> Result<Vec<[usize; 3]>> {
    serde_json::from_str(text).map_err(|e| Error::InvalidArgument(format!("landmark list: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(nx: usize, ny: usize, nz: usize) -> GridDims {
        GridDims::new(nx, ny, nz).unwrap()
    }

    #[test]
    fn dsc_cases() {
        let g = d(8, 1, 1);
        let a = LabelField3D::new(g, vec![1, 1, 1, 1, 0, 0, 0, 0]).unwrap();
        let b = LabelField3D::new(g, vec![0, 0, 1, 1, 1, 1, 0, 0]).unwrap();
        let c = LabelField3D::new(g, vec![0, 0, 0, 0, 1, 1, 1, 1]).unwrap();
        assert_eq!(dsc(&a, &a, 1).unwrap(), 1.0);
        assert_eq!(dsc(&a, &c, 1).unwrap(), 0.0);
        assert_eq!(dsc(&a, &b, 1).unwrap(), 0.5);
        assert_eq!(dsc(&a, &b, 7).unwrap(), 1.0);
    }

    #[test]
    fn hd95_of_two_points() {
        let g = d(6, 1, 1);
        let mut a = vec![false; 6];
        let mut b = vec![false; 6];
        a[1] = true;
        b[4] = true;
        assert_eq!(hd95(&a, &b, &g).unwrap(), 3.0);
        assert_eq!(hd95(&a, &a, &g).unwrap(), 0.0);
        assert!(matches!(hd95(&a, &[false; 6], &g), Err(Error::EmptyMask)));
    }

    #[test]
    fn percentile_interpolates() {
        let v = [4.0, 1.0, 3.0, 2.0];
        assert_eq!(percentile(&v, 0.0).unwrap(), 1.0);
        assert_eq!(percentile(&v, 100.0).unwrap(), 4.0);
        assert_eq!(percentile(&v, 50.0).unwrap(), 2.5);
        assert!((percentile(&v, 95.0).unwrap() - 3.85).abs() < 1e-12);
    }

    #[test]
    fn edt_along_a_line() {
        let g = GridDims::with_spacing(7, 1, 1, [0.5, 1.0, 1.0]).unwrap();
        let mask = [false, true, true, true, true, true, true];
        let dist = edt(&mask, &g);
        let want = [0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0];
        assert_eq!(dist, want);
    }

    #[test]
    fn edt_without_outside_is_infinite() {
        let g = d(2, 2, 2);
        assert!(edt(&[true; 8], &g).iter().all(|v| v.is_infinite()));
    }

    #[test]
    fn boundary_of_a_cube() {
        let g = d(5, 5, 5);
        let mask: Vec<bool> = (0..g.len())
            .map(|i| g.coords(i).iter().all(|&c| (1..4).contains(&c)))
            .collect();
        let b = boundary(&mask, &g);
        assert_eq!(b.iter().filter(|&&v| v).count(), 26);
        assert!(!b[g.index(2, 2, 2)]);
    }

    fn slab(spacing: f64) -> (Vec<bool>, GridDims) {
        let g = GridDims::with_spacing(9, 9, 15, [spacing; 3]).unwrap();
        let mask = (0..g.len()).map(|i| (4..11).contains(&g.coords(i)[2])).collect();
        (mask, g)
    }

    #[test]
    fn slab_thickness() {
        let (mask, g) = slab(1.0);
        let t = thickness_at(&mask, &g, [4, 4, 7], DEFAULT_SEARCH_RADIUS_MM).unwrap();
        assert!((t - 7.0).abs() <= 1.0, "{t}");
        let (mask, g) = slab(0.2);
        let fine = thickness_at(&mask, &g, [4, 4, 7], DEFAULT_SEARCH_RADIUS_MM * 0.2).unwrap();
        assert!((fine - 0.2 * t).abs() < 1e-12, "{fine}");
    }

    #[test]
    fn ball_thickness() {
        let g = d(15, 15, 15);
        let r = 5.0;
        let mask: Vec<bool> = (0..g.len())
            .map(|i| {
                let c = g.coords(i);
                c.iter().map(|&v| (v as f64 - 7.0).powi(2)).sum::<f64>() <= r * r
            })
            .collect();
        let t = thickness_at(&mask, &g, [7, 7, 7], DEFAULT_SEARCH_RADIUS_MM).unwrap();
        assert!((t - 2.0 * r).abs() <= 1.0, "{t}");
    }

    #[test]
    fn landmark_far_from_gm() {
        let (mask, g) = slab(1.0);
        assert!(matches!(
            thickness_at(&mask, &g, [4, 4, 0], 1.0),
            Err(Error::LandmarkOutsideMask(_))
        ));
    }

    #[test]
    fn pearson_cases() {
        let x = [1.0, 2.0, 4.0, 7.0];
        let y: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((pearson_r(&x, &x).unwrap() - 1.0).abs() < 1e-12);
        assert!((pearson_r(&x, &y).unwrap() + 1.0).abs() < 1e-12);
        assert!(matches!(pearson_r(&x, &[1.0; 4]), Err(Error::DegenerateInput(_))));
    }

    #[test]
    fn icc_identical_raters() {
        let table: Vec<Vec<f64>> = [1.0, 3.0, 2.0, 5.0].iter().map(|&v| vec![v, v]).collect();
        assert!((icc_fixed_raters(&table).unwrap() - 1.0).abs() < 1e-12);
        let flat = vec![vec![2.0, 2.0]; 4];
        assert!(matches!(icc_fixed_raters(&flat), Err(Error::DegenerateInput(_))));
    }

    #[test]
    fn landmark_parsing() {
        assert_eq!(parse_landmarks("[[1,2,3],[0,0,0]]").unwrap(), vec![[1, 2, 3], [0, 0, 0]]);
        assert!(parse_landmarks("[[1,2]]").is_err());
        assert!(parse_landmarks("[[-1,2,3]]").is_err());
    }

    #[test]
    fn report_is_flat_json() {
        let r = MetricReport {
            dsc: BTreeMap::from([("gm".to_string(), 0.5)]),
            hd95_mm: 1.0,
            laplace_dsc: Some(vec![1.0, 0.75]),
        };
        let json = serde_json::to_string(&r).unwrap();
        assert_eq!(
            json,
            r#"{"dsc_gm":0.5,"hd95_mm":1.0,"laplace_dsc_layer1":1.0,"laplace_dsc_layer2":0.75}"#
        );
    }

    #[test]
    fn missing_class_is_rejected() {
        let g = d(4, 1, 1);
        let seg = LabelField3D::new(g, vec![2, 1, 1, 2]).unwrap();
        assert!(matches!(laplace_eval(&seg, &seg), Err(Error::InvalidSegmentation(_))));
    }
}
