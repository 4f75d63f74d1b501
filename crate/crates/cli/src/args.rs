use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use laminar::labelize::BandSpec;
use laminar::solver::Omega;
use laminar::volume::GridDims;

#[derive(Debug, Parser)]
#[command(name = "laminar", version, about = "Laplacian laminar fields on voxel grids")]
pub struct Cli {
    /// Worker threads for data-parallel kernels; results do not depend on it.
    #[arg(long, global = true, value_parser = clap::builder::RangedU64ValueParser::<usize>::new().range(1..))]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic phantom as `<out>_labels`, `<out>_phi` and `<out>_probs`.
    Phantom(PhantomArgs),
    /// Hard-boundary Laplace solve on a label field.
    Solve(SolveArgs),
    /// Soft-boundary solve driven by class probabilities.
    SoftSolve(SoftSolveArgs),
    /// Band-pass channels of a field, reduced to argmax labels.
    Labelize(LabelizeArgs),
    /// Combined tissue and laminar loss of a probability map.
    Loss(LossArgs),
    /// DSC, HD95 and optionally the laminar re-solve protocol.
    Metrics(MetricsArgs),
    /// Inscribed-sphere thickness at landmarks.
    Thickness(ThicknessArgs),
    /// Gradient descent on per-voxel logits.
    Optimize(OptimizeArgs),
    /// Finite-difference check of the soft solver adjoint.
    Gradcheck(GradcheckArgs),
}

/// Comma-separated label codes such as `2,4`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Codes(pub Vec<u8>);

impl std::str::FromStr for Codes {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.split(',')
            .map(|t| t.trim().parse::<u8>().map_err(|e| format!("bad label code {t:?}: {e}")))
            .collect::<Result<_, _>>()
            .map(Codes)
    }
}

fn parse_spacing(s: &str) -> Result<[f64; 3], String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| format!("bad spacing {t:?}: {e}")))
        .collect::<Result<_, _>>()?;
    <[f64; 3]>::try_from(parts).map_err(|_| "spacing needs three comma-separated values".to_string())
}

#[derive(Debug, Clone, Args)]
pub struct MappingArgs {
    #[arg(long, default_value = "2,4")]
    pub source_labels: Codes,
    #[arg(long, default_value = "3")]
    pub sink_labels: Codes,
    #[arg(long, default_value = "1")]
    pub domain_labels: Codes,
}

#[derive(Debug, Clone, Args)]
pub struct BandArgs {
    /// Comma-separated `lo:hi` intervals; defaults to the 11-band list.
    #[arg(long)]
    pub bands: Option<BandSpec>,
    #[arg(long, default_value_t = laminar::labelize::DEFAULT_BETA)]
    pub beta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KindArg {
    Slab,
    Shell,
    Sulcus,
}

#[derive(Debug, Args)]
pub struct PhantomArgs {
    #[arg(long, value_enum)]
    pub kind: KindArg,
    #[arg(long)]
    pub dims: GridDims,
    /// Voxel spacing in mm as `sx,sy,sz`.
    #[arg(long, value_parser = parse_spacing)]
    pub spacing: Option<[f64; 3]>,
    /// GM thickness in voxels (slab default 10, sulcus default 4).
    #[arg(long)]
    pub thickness: Option<usize>,
    #[arg(long)]
    pub a: Option<f64>,
    #[arg(long)]
    pub b: Option<f64>,
    #[arg(long, default_value_t = 24.0)]
    pub wavelength: f64,
    #[arg(long, default_value_t = 1.0)]
    pub amplitude: f64,
    #[arg(long, default_value_t = 1)]
    pub gap: usize,
    /// Sulcus extent along y in voxels; defaults to half the grid.
    #[arg(long)]
    pub length: Option<usize>,
    #[arg(long)]
    pub bridge: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = laminar::phantom::DEFAULT_CONFUSION)]
    pub confusion: f64,
    #[arg(long, default_value_t = laminar::phantom::DEFAULT_NOISE)]
    pub noise: f64,
    /// Output prefix.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SchemeArg {
    Sor,
    Reference,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[arg(long)]
    pub labels: PathBuf,
    /// Iteration budget (default 120 for sor, unbounded for reference).
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long, default_value = "auto")]
    pub omega: Omega,
    /// Early stop on the mean per-voxel change (default 0 for sor, 1e-5 for reference).
    #[arg(long)]
    pub tolerance: Option<f64>,
    #[arg(long, value_enum, default_value = "sor")]
    pub scheme: SchemeArg,
    /// Starting value of domain voxels.
    #[arg(long, default_value_t = 0.5)]
    pub init: f64,
    #[command(flatten)]
    pub mapping: MappingArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SoftSolveArgs {
    #[arg(long)]
    pub probs: PathBuf,
    #[arg(long, default_value_t = 60)]
    pub iters: usize,
    #[arg(long, default_value = "auto")]
    pub omega: Omega,
    /// Skip the per-iteration Dirichlet blend.
    #[arg(long)]
    pub no_clamp: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct LabelizeArgs {
    #[arg(long)]
    pub phi: PathBuf,
    #[command(flatten)]
    pub bands: BandArgs,
    /// Label field; voxels where it is 0 get code 0.
    #[arg(long)]
    pub labeled: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct LossArgs {
    #[arg(long)]
    pub probs: PathBuf,
    /// Tissue ground truth; code 0 marks unscored voxels.
    #[arg(long)]
    pub labels: PathBuf,
    /// Ground-truth field the laminar targets are derived from.
    #[arg(long)]
    pub phi_gt: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    pub laplace_weight: f64,
    #[arg(long, default_value_t = 60)]
    pub iters: usize,
    #[arg(long, default_value = "auto")]
    pub omega: Omega,
    #[command(flatten)]
    pub bands: BandArgs,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    /// Also run the 120-iteration, 5-layer re-solve protocol.
    #[arg(long)]
    pub laplace: bool,
    /// Write the report here as well as to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ThicknessArgs {
    #[arg(long)]
    pub labels: PathBuf,
    /// JSON array of `[x, y, z]` voxel coordinates.
    #[arg(long)]
    pub landmarks: PathBuf,
    #[arg(long, default_value_t = laminar::metrics::DEFAULT_SEARCH_RADIUS_MM)]
    pub search_radius: f64,
    #[arg(long, default_value = "1")]
    pub gm_labels: Codes,
}

#[derive(Debug, Args)]
pub struct OptimizeArgs {
    #[arg(long)]
    pub probs: PathBuf,
    /// Training labels; code 0 marks unannotated voxels.
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long)]
    pub phi_gt: PathBuf,
    #[arg(long, default_value_t = 200)]
    pub steps: usize,
    #[arg(long, default_value_t = 1.0)]
    pub lr: f64,
    #[arg(long, default_value_t = 1.0)]
    pub laplace_weight: f64,
    #[arg(long, default_value_t = 60)]
    pub iters: usize,
    #[arg(long, default_value = "auto")]
    pub omega: Omega,
    #[command(flatten)]
    pub bands: BandArgs,
    #[arg(long)]
    pub out: PathBuf,
    /// CSV loss trace.
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value = "6,6,6")]
    pub dims: GridDims,
    #[arg(long, default_value_t = 3)]
    pub iters: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Check the whole logits-to-loss chain instead (threshold 1e-3).
    #[arg(long)]
    pub chain: bool,
}
