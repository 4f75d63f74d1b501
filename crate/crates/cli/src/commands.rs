use std::path::{Path, PathBuf};

use laminar::autodiff::{soft_solve_forward, SoftLaplaceConfig};
use laminar::gradcheck::{check_full_chain, check_soft_solver, CHAIN_TOLERANCE, SOLVER_TOLERANCE};
use laminar::labelize::{argmax_labels, laminar_targets, soft_one_hot, BandSpec};
use laminar::loss::{combined_loss, DEFAULT_IGNORE_LABEL};
use laminar::metrics::{evaluate, parse_landmarks, thickness_at};
use laminar::optimize::{run_descent, write_trace_file, OptimizeConfig};
use laminar::phantom::{make_phantom, PhantomKind, PhantomSpec};
use laminar::solver::{solve, LabelMapping, LaplaceProblem, Scheme, SolverConfig, REFERENCE_TOLERANCE};
use laminar::volume::{read_vgrid, write_vgrid, GridDims, LabelField3D, ScalarField3D, SoftSegmentation};
use serde_json::json;

use crate::args::*;
use crate::Failure;

type Outcome = Result<(), Failure>;

pub fn run(command: Command) -> Outcome {
    match command {
        Command::Phantom(a) => phantom(a),
        Command::Solve(a) => solve_cmd(a),
        Command::SoftSolve(a) => soft_solve(a),
        Command::Labelize(a) => labelize(a),
        Command::Loss(a) => loss(a),
        Command::Metrics(a) => metrics(a),
        Command::Thickness(a) => thickness(a),
        Command::Optimize(a) => optimize(a),
        Command::Gradcheck(a) => gradcheck(a),
    }
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn read_labels(path: &Path) -> Result<LabelField3D, Failure> {
    Ok(read_vgrid(path)?.into_labels()?)
}

fn read_scalar(path: &Path) -> Result<ScalarField3D, Failure> {
    Ok(read_vgrid(path)?.into_scalar()?)
}

fn read_soft(path: &Path) -> Result<SoftSegmentation, Failure> {
    Ok(read_vgrid(path)?.into_soft()?)
}

fn print_json(value: &serde_json::Value) {
    println!("{value}");
}

fn band_spec(args: &BandArgs) -> Result<BandSpec, Failure> {
    let spec = args.bands.clone().unwrap_or_default();
    spec.with_beta(args.beta).map_err(|e| usage(e.to_string()))
}

fn soft_config(iters: usize, omega: laminar::solver::Omega) -> Result<SoftLaplaceConfig, Failure> {
    if iters == 0 {
        return Err(usage("--iters must be at least 1"));
    }
    Ok(SoftLaplaceConfig {
        omega,
        ..SoftLaplaceConfig::with_iters(iters)
    })
}

fn suffixed(prefix: &Path, suffix: &str) -> PathBuf {
    let mut name = prefix.as_os_str().to_owned();
    name.push(format!("_{suffix}.vgrid"));
    PathBuf::from(name)
}

fn phantom(a: PhantomArgs) -> Outcome {
    let dims = match a.spacing {
        Some(s) => GridDims::with_spacing(a.dims.nx(), a.dims.ny(), a.dims.nz(), s).map_err(|e| usage(e.to_string()))?,
        None => a.dims,
    };
    let kind = match a.kind {
        KindArg::Slab => PhantomKind::Slab {
            thickness: a.thickness.unwrap_or(10),
        },
        KindArg::Shell => {
            let (Some(inner), Some(outer)) = (a.a, a.b) else {
                return Err(usage("--kind shell needs --a and --b"));
            };
            PhantomKind::Shell { a: inner, b: outer }
        }
        KindArg::Sulcus => PhantomKind::Sulcus {
            wavelength: a.wavelength,
            amplitude: a.amplitude,
            thickness: a.thickness.unwrap_or(4),
            gap: a.gap,
            length: a.length.unwrap_or(dims.ny() / 2),
            bridge: a.bridge,
        },
    };
    let spec = PhantomSpec {
        seed: a.seed,
        confusion: a.confusion,
        noise: a.noise,
        ..PhantomSpec::new(kind, dims)
    };
    let p = make_phantom(&spec)?;
    write_vgrid(&p.labels, suffixed(&a.out, "labels"))?;
    write_vgrid(&p.phi, suffixed(&a.out, "phi"))?;
    write_vgrid(&p.probs, suffixed(&a.out, "probs"))?;
    if matches!(kind, PhantomKind::Sulcus { .. }) {
        write_vgrid(&p.training_labels(), suffixed(&a.out, "train"))?;
    }
    print_json(&json!({ "dims": dims.to_string(), "sulcus_voxels": p.sulcus.len() }));
    Ok(())
}

fn solve_cmd(a: SolveArgs) -> Outcome {
    let config = match a.scheme {
        SchemeArg::Sor => SolverConfig {
            omega: a.omega,
            max_iters: a.iters.unwrap_or(120),
            tolerance: a.tolerance.unwrap_or(0.0),
            scheme: Scheme::Sor6,
        },
        SchemeArg::Reference => SolverConfig {
            max_iters: a.iters.unwrap_or(SolverConfig::reference().max_iters),
            tolerance: a.tolerance.unwrap_or(REFERENCE_TOLERANCE),
            ..SolverConfig::reference()
        },
    };
    if config.max_iters == 0 {
        return Err(usage("--iters must be at least 1"));
    }
    if !(config.tolerance >= 0.0) {
        return Err(usage("--tolerance must be nonnegative"));
    }
    if !a.init.is_finite() {
        return Err(usage("--init must be finite"));
    }
    let mapping = LabelMapping {
        domain: a.mapping.domain_labels.0,
        source: a.mapping.source_labels.0,
        sink: a.mapping.sink_labels.0,
    };
    let seg = read_labels(&a.labels)?;
    let problem = LaplaceProblem::from_labels(&seg, &mapping)?;
    let (phi, report) = solve(&problem, &problem.initial_field(a.init), &config)?;
    write_vgrid(&phi, &a.out)?;
    print_json(&serde_json::to_value(report)?);
    Ok(())
}

fn soft_solve(a: SoftSolveArgs) -> Outcome {
    let config = SoftLaplaceConfig {
        clamp_each_iter: !a.no_clamp,
        ..soft_config(a.iters, a.omega)?
    };
    let probs = read_soft(&a.probs)?;
    let (phi, tape) = soft_solve_forward(&probs, &config)?;
    write_vgrid(&phi, &a.out)?;
    print_json(&json!({ "iterations_run": a.iters, "half_sweeps": tape.half_sweeps() }));
    Ok(())
}

fn labelize(a: LabelizeArgs) -> Outcome {
    let spec = band_spec(&a.bands)?;
    let phi = read_scalar(&a.phi)?;
    let codes = match &a.labeled {
        Some(path) => laminar_targets(&phi, &read_labels(path)?, &spec)?,
        None => {
            let arg = argmax_labels(&soft_one_hot(&phi, &spec));
            let shifted = arg.labels().iter().map(|&k| k + 1).collect();
            LabelField3D::new(*phi.dims(), shifted)?
        }
    };
    write_vgrid(&codes, &a.out)?;
    print_json(&json!({ "bands": spec.len() }));
    Ok(())
}

fn loss(a: LossArgs) -> Outcome {
    if !(a.laplace_weight.is_finite() && a.laplace_weight >= 0.0) {
        return Err(usage("--laplace-weight must be nonnegative"));
    }
    let spec = band_spec(&a.bands)?;
    let solver = soft_config(a.iters, a.omega)?;
    let probs = read_soft(&a.probs)?;
    let gt = read_labels(&a.labels)?;
    let phi_gt = read_scalar(&a.phi_gt)?;
    let laminar_gt = laminar_targets(&phi_gt, &gt, &spec)?;
    let (phi, _) = soft_solve_forward(&probs, &solver)?;
    let channels = soft_one_hot(&phi, &spec);
    let result = combined_loss(
        probs.as_stack(),
        &gt,
        &channels,
        &laminar_gt,
        a.laplace_weight,
        DEFAULT_IGNORE_LABEL,
    )?;
    print_json(&serde_json::to_value(result.breakdown)?);
    Ok(())
}

fn metrics(a: MetricsArgs) -> Outcome {
    let pred = read_labels(&a.pred)?;
    let gt = read_labels(&a.gt)?;
    let report = evaluate(&pred, &gt, a.laplace)?;
    let value = serde_json::to_value(&report)?;
    if let Some(path) = &a.out {
        std::fs::write(path, format!("{value}\n"))?;
    }
    print_json(&value);
    Ok(())
}

fn thickness(a: ThicknessArgs) -> Outcome {
    if !(a.search_radius.is_finite() && a.search_radius >= 0.0) {
        return Err(usage("--search-radius must be nonnegative"));
    }
    let seg = read_labels(&a.labels)?;
    let landmarks = parse_landmarks(&std::fs::read_to_string(&a.landmarks)?)?;
    let gm = seg.mask_any(&a.gm_labels.0);
    let mut rows = Vec::with_capacity(landmarks.len());
    for landmark in landmarks {
        let t = thickness_at(&gm, seg.dims(), landmark, a.search_radius)?;
        rows.push(json!({ "landmark": landmark, "thickness_mm": t }));
    }
    print_json(&serde_json::Value::Array(rows));
    Ok(())
}

fn optimize(a: OptimizeArgs) -> Outcome {
    if a.steps == 0 {
        return Err(usage("--steps must be at least 1"));
    }
    if !(a.lr.is_finite() && a.lr > 0.0) {
        return Err(usage("--lr must be positive"));
    }
    if !(a.laplace_weight.is_finite() && a.laplace_weight >= 0.0) {
        return Err(usage("--laplace-weight must be nonnegative"));
    }
    let config = OptimizeConfig {
        steps: a.steps,
        learning_rate: a.lr,
        laplace_weight: a.laplace_weight,
        solver: soft_config(a.iters, a.omega)?,
        bands: band_spec(&a.bands)?,
        ignore_label: DEFAULT_IGNORE_LABEL,
    };
    let init = read_soft(&a.probs)?;
    let gt = read_labels(&a.labels)?;
    let phi_gt = read_scalar(&a.phi_gt)?;
    let laminar_gt = laminar_targets(&phi_gt, &gt, &config.bands)?;
    let run = run_descent(&init, &gt, &laminar_gt, &config)?;
    write_vgrid(&run.probs, &a.out)?;
    if let Some(path) = &a.trace {
        write_trace_file(path, &run.trace)?;
    }
    let last = run.trace.last().copied();
    print_json(&json!({ "steps": run.trace.len(), "final": last }));
    Ok(())
}

fn gradcheck(a: GradcheckArgs) -> Outcome {
    if a.iters == 0 {
        return Err(usage("--iters must be at least 1"));
    }
    let (report, tolerance) = if a.chain {
        (check_full_chain(a.dims, a.iters, a.seed)?, CHAIN_TOLERANCE)
    } else {
        (check_soft_solver(a.dims, a.iters, a.seed)?, SOLVER_TOLERANCE)
    };
    print_json(&json!({
        "max_rel_error": report.max_rel_error,
        "max_abs_error": report.max_abs_error,
        "entries": report.entries,
        "tolerance": tolerance,
    }));
    if report.max_rel_error < tolerance {
        Ok(())
    } else {
        Err(Failure::Data(format!(
            "gradient check failed: {:e} >= {tolerance:e}",
            report.max_rel_error
        )))
    }
}
