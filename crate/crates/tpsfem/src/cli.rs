//! Batch command-line front end.
//!
//! Three subcommands: `fit` runs the refinement loop on ingested or
//! generated data and writes the grid, coefficients, metrics and a surface
//! raster; `compare` benchmarks the sparse system against the radial basis
//! baselines; `gen-peaks` writes a seeded synthetic data file. All outputs
//! are plain CSV/JSON for external plotting; all randomness is seeded, so a
//! fixed seed and configuration reproduce every numeric result.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use thiserror::Error;

use crate::data::{gen_peaks, load_xyz, locate, NoiseSpec, ScatteredData};
use crate::driver::{metrics_csv, run, BoundarySpec, RefineConfig, RefineMode};
use crate::gcv::GcvConfig;
use crate::geometry::Rect;
use crate::indicators::IndicatorKind;
use crate::mesh::{BoundaryKind, DomainShape, DomainSpec, TriMesh};
use crate::rbf::{
    comparison_csv, fit_rbf, radius_for_coverage, select_control_points, ComparisonRow, Kernel,
    KernelKind,
};
use crate::solver::{reduced_matrix_stats, sample_surface_csv};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("runtime error: {0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

#[derive(Parser, Debug)]
#[command(
    name = "tpsfem",
    about = "Scattered-data surface smoothing on adaptive finite element grids"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Fit a smoother with uniform or adaptive refinement
    Fit(FitArgs),
    /// Compare the sparse system against RBF baselines on one data set
    Compare(CompareArgs),
    /// Generate a seeded synthetic data file
    GenPeaks(GenPeaksArgs),
}

#[derive(Args, Debug)]
pub struct FitArgs {
    /// Input xyz file (whitespace separated "x y z", '#' comments)
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Generate this many synthetic peaks samples instead of reading a file
    #[arg(long = "gen-peaks", value_name = "N")]
    pub gen_peaks: Option<usize>,
    /// Response noise standard deviation for generated data
    #[arg(long, default_value_t = 0.0)]
    pub sigma: f64,
    /// Domain shape
    #[arg(long, default_value = "square")]
    pub domain: String,
    /// Boundary condition
    #[arg(long, default_value = "dirichlet")]
    pub bc: String,
    /// Dirichlet value for the surface
    #[arg(long = "bc-s", default_value_t = 0.0)]
    pub bc_s: f64,
    /// Dirichlet value for the first gradient component
    #[arg(long = "bc-u1", default_value_t = 0.0)]
    pub bc_u1: f64,
    /// Dirichlet value for the second gradient component
    #[arg(long = "bc-u2", default_value_t = 0.0)]
    pub bc_u2: f64,
    /// Refinement mode
    #[arg(long, default_value = "adaptive")]
    pub refine: String,
    /// Error indicator (adaptive mode only)
    #[arg(long)]
    pub indicator: Option<String>,
    /// Stop once the misfit reaches this tolerance
    #[arg(long, default_value_t = 0.0)]
    pub tol: f64,
    /// Outer iteration cap (default: 10 uniform, 8 adaptive)
    #[arg(long = "max-iters")]
    pub max_iters: Option<usize>,
    /// Marking threshold as a fraction of the maximum indicator value
    #[arg(long, default_value_t = 0.5)]
    pub gamma: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Initial grid nodes per side
    #[arg(long, default_value_t = 5)]
    pub grid: usize,
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct CompareArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long = "gen-peaks", value_name = "N")]
    pub gen_peaks: Option<usize>,
    #[arg(long, default_value_t = 0.0)]
    pub sigma: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Overlay grid spacing for control-point selection
    #[arg(long, default_value_t = 0.03125)]
    pub spacing: f64,
    /// Target data counts inside each kernel support
    #[arg(long, value_delimiter = ',', default_values_t = vec![100, 200])]
    pub coverage: Vec<usize>,
    /// Uniform refinement sweeps for the sparse-system row
    #[arg(long = "fem-iters", default_value_t = 8)]
    pub fem_iters: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct GenPeaksArgs {
    /// Number of samples
    pub n: usize,
    #[arg(long, default_value_t = 0.0)]
    pub sigma: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run_cli(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Fit(args) => cmd_fit(&args),
        Command::Compare(args) => cmd_compare(&args),
        Command::GenPeaks(args) => cmd_gen_peaks(&args),
    }
}

fn parse_shape(s: &str) -> Result<DomainShape, CliError> {
    match s {
        "square" => Ok(DomainShape::Square),
        "lshape" => Ok(DomainShape::LShape),
        other => Err(CliError::Config(format!(
            "unknown domain {other:?} (square|lshape)"
        ))),
    }
}

fn parse_bc(s: &str) -> Result<BoundaryKind, CliError> {
    match s {
        "dirichlet" => Ok(BoundaryKind::Dirichlet),
        "neumann" => Ok(BoundaryKind::Neumann),
        other => Err(CliError::Config(format!(
            "unknown boundary condition {other:?} (dirichlet|neumann)"
        ))),
    }
}

/// Peaks samples live in `[-2.4, 2.4]²` inside a `[-3, 3]²` domain; file
/// data is scaled into the `[0.2, 0.8]²` region of a unit domain.
const PEAKS_DOMAIN: Rect = Rect {
    x_lo: -3.0,
    x_hi: 3.0,
    y_lo: -3.0,
    y_hi: 3.0,
};
const PEAKS_REGION: Rect = Rect {
    x_lo: -2.4,
    x_hi: 2.4,
    y_lo: -2.4,
    y_hi: 2.4,
};
const FILE_TARGET: Rect = Rect {
    x_lo: 0.2,
    x_hi: 0.8,
    y_lo: 0.2,
    y_hi: 0.8,
};

fn load_or_generate(
    data: &Option<PathBuf>,
    gen: Option<usize>,
    sigma: f64,
    seed: u64,
    shape: DomainShape,
) -> Result<(ScatteredData, DomainSpec, serde_json::Value), CliError> {
    match (data, gen) {
        (Some(_), Some(_)) => Err(CliError::Config(
            "--data and --gen-peaks are mutually exclusive".into(),
        )),
        (None, None) => Err(CliError::Config(
            "one of --data or --gen-peaks is required".into(),
        )),
        (Some(path), None) => {
            let (data, transform) = load_xyz(path, Some(FILE_TARGET)).map_err(|e| match e {
                crate::data::DataError::Io { .. } => CliError::Config(e.to_string()),
                other => CliError::Runtime(other.to_string()),
            })?;
            let domain = match shape {
                DomainShape::Square => DomainSpec::unit_square(),
                DomainShape::LShape => DomainSpec::unit_lshape(),
            };
            let meta = serde_json::json!({
                "source": path.display().to_string(),
                "n": data.n(),
                "scale": transform.scale,
                "offset": [transform.offset.x, transform.offset.y],
            });
            Ok((data, domain, meta))
        }
        (None, Some(n)) => {
            let data = gen_peaks(n, PEAKS_REGION, &NoiseSpec { sigma, seed });
            let domain = match shape {
                DomainShape::Square => DomainSpec::square(PEAKS_DOMAIN),
                DomainShape::LShape => DomainSpec::lshape(PEAKS_DOMAIN, PEAKS_DOMAIN.center()),
            };
            let meta =
                serde_json::json!({ "source": "peaks", "n": n, "sigma": sigma, "seed": seed });
            Ok((data, domain, meta))
        }
    }
}

fn write(path: &Path, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents)
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}

#[derive(Serialize)]
struct RunMeta {
    command: String,
    seed: u64,
    max_data_gap: f64,
    domain: serde_json::Value,
    boundary: serde_json::Value,
    refine: serde_json::Value,
    gcv: serde_json::Value,
    data: serde_json::Value,
    stop_reason: crate::driver::StopReason,
    skipped_edges: usize,
    outputs: Vec<String>,
}

fn cmd_fit(args: &FitArgs) -> Result<(), CliError> {
    let shape = parse_shape(&args.domain)?;
    let bc = parse_bc(&args.bc)?;
    let mode: RefineMode = args.refine.parse().map_err(CliError::Config)?;
    let indicator = match (&args.indicator, mode) {
        (Some(_), RefineMode::Uniform) => {
            return Err(CliError::Config(
                "--indicator requires --refine adaptive".into(),
            ));
        }
        (Some(name), RefineMode::Adaptive) => name.parse().map_err(CliError::Config)?,
        (None, _) => IndicatorKind::Recovery,
    };
    if !(0.0 < args.gamma && args.gamma <= 1.0) {
        return Err(CliError::Config(format!(
            "--gamma must be in (0, 1], got {}",
            args.gamma
        )));
    }
    if args.tol < 0.0 {
        return Err(CliError::Config("--tol must be nonnegative".into()));
    }

    let (data, domain, data_meta) =
        load_or_generate(&args.data, args.gen_peaks, args.sigma, args.seed, shape)?;
    let mut mesh = TriMesh::build_initial_grid(domain, args.grid, bc)
        .map_err(|e| CliError::Config(e.to_string()))?;

    let boundary = match bc {
        BoundaryKind::Neumann => BoundarySpec::Neumann,
        BoundaryKind::Dirichlet => BoundarySpec::dirichlet_const(args.bc_s, args.bc_u1, args.bc_u2),
    };
    let mut cfg = RefineConfig::default_for(mode, indicator);
    cfg.rmse_tol = args.tol;
    cfg.gamma = args.gamma;
    if let Some(iters) = args.max_iters {
        cfg.max_outer_iters = iters;
    }
    let gcv_cfg = GcvConfig {
        seed: args.seed,
        ..Default::default()
    };

    std::fs::create_dir_all(&args.out).map_err(|e| CliError::Runtime(e.to_string()))?;
    let result = run(&mut mesh, &data, &boundary, &gcv_cfg, &cfg).map_err(runtime)?;

    let mut outputs = vec![
        "mesh.json".to_string(),
        "smoother.json".to_string(),
        "metrics.csv".to_string(),
        "surface.csv".to_string(),
        "gcv_trace.csv".to_string(),
        "run_meta.json".to_string(),
    ];
    write(&args.out.join("mesh.json"), &mesh.export_json())?;
    write(
        &args.out.join("smoother.json"),
        &result.smoother.export_json(),
    )?;
    write(&args.out.join("metrics.csv"), &metrics_csv(&result.records))?;
    write(
        &args.out.join("surface.csv"),
        &sample_surface_csv(&mesh, &result.smoother, 100),
    )?;
    write(
        &args.out.join("gcv_trace.csv"),
        &crate::driver::alpha_trace_csv(&result.alpha_trace),
    )?;
    if !result.buckets.out_of_domain.is_empty() {
        write(
            &args.out.join("out_of_domain.csv"),
            &result.buckets.out_of_domain_csv(&data),
        )?;
        outputs.push("out_of_domain.csv".to_string());
    }
    // the largest data gap is a diagnostic, never used in control flow
    let gap_resolution = domain.bbox.width().max(domain.bbox.height()) / 100.0;
    let max_gap = crate::data::max_data_gap(&data, &domain, gap_resolution);
    let meta = RunMeta {
        command: "fit".into(),
        seed: args.seed,
        max_data_gap: max_gap,
        domain: serde_json::json!({ "shape": shape, "bbox": domain.bbox, "cut": domain.cut }),
        boundary: serde_json::json!({
            "kind": bc, "s": args.bc_s, "u1": args.bc_u1, "u2": args.bc_u2,
            "neumann_gradient_pin_node": 0,
        }),
        refine: serde_json::json!({
            "mode": mode, "indicator": indicator, "tol": args.tol,
            "max_iters": cfg.max_outer_iters, "gamma": args.gamma, "grid": args.grid,
        }),
        gcv: serde_json::json!({
            "bracket": gcv_cfg.bracket, "probes": gcv_cfg.probes,
            "r1": gcv_cfg.r1, "r2": gcv_cfg.r2, "max_evals": gcv_cfg.max_evals,
        }),
        data: data_meta,
        stop_reason: result.stop,
        skipped_edges: result.skipped_edges,
        outputs,
    };
    write(
        &args.out.join("run_meta.json"),
        &serde_json::to_string_pretty(&meta).expect("meta serialises"),
    )?;
    Ok(())
}

fn cmd_compare(args: &CompareArgs) -> Result<(), CliError> {
    let (data, domain, _) = load_or_generate(
        &args.data,
        args.gen_peaks,
        args.sigma,
        args.seed,
        DomainShape::Square,
    )?;
    std::fs::create_dir_all(&args.out).map_err(|e| CliError::Runtime(e.to_string()))?;
    let mut rows = Vec::new();

    // sparse-system row: uniform refinement with the default pipeline
    {
        let mut mesh = TriMesh::build_initial_grid(domain, 5, BoundaryKind::Dirichlet)
            .map_err(|e| CliError::Config(e.to_string()))?;
        let mut cfg = RefineConfig::default_for(RefineMode::Uniform, IndicatorKind::Recovery);
        cfg.max_outer_iters = args.fem_iters;
        cfg.stall_count = usize::MAX;
        let boundary = BoundarySpec::dirichlet_const(0.0, 0.0, 0.0);
        let gcv_cfg = GcvConfig {
            seed: args.seed,
            probes: 8,
            ..Default::default()
        };
        let result = run(&mut mesh, &data, &boundary, &gcv_cfg, &cfg).map_err(runtime)?;
        let last = result.records.last().expect("at least the initial record");
        let buckets = locate(&mesh, &data);
        let mut sys =
            crate::assembly::TpsfemSystem::assemble(&mesh, &data, &buckets).map_err(runtime)?;
        sys.apply_dirichlet_constants(&mesh, 0.0, 0.0, 0.0);
        let (size, nnz) = reduced_matrix_stats(&sys, result.smoother.alpha).map_err(runtime)?;
        rows.push(ComparisonRow {
            technique: "tpsfem".into(),
            kernel: String::new(),
            n_basis: mesh.node_count(),
            radius: 0.0,
            nnz,
            ratio: nnz as f64 / (size as f64 * size as f64),
            time_s: last.solve_s,
            rmse: last.rmse,
        });
    }

    // baseline rows; kernel radii are calibrated against the control-point
    // sample, so a coverage target of t yields a fill ratio near t / n_basis
    let region = data.bbox().unwrap_or(Rect::unit());
    let cps = select_control_points(&data, region, args.spacing).map_err(runtime)?;
    let sample = ScatteredData {
        points: cps.points.clone(),
        responses: vec![0.0; cps.len()],
    };
    let mut radii = Vec::new();
    for &target in &args.coverage {
        radii.push(radius_for_coverage(&sample, &cps, target.min(sample.n())));
    }
    {
        let fit = fit_rbf(&data, &cps, Kernel::tps()).map_err(runtime)?;
        rows.push(ComparisonRow {
            technique: "tps".into(),
            kernel: "r^2 log r".into(),
            n_basis: cps.len(),
            radius: 0.0,
            nnz: fit.nnz_kernel_matrix,
            ratio: fit.fill_ratio,
            time_s: fit.solve_time_s,
            rmse: fit.rmse,
        });
    }
    for kind in [
        KernelKind::WendlandC0,
        KernelKind::WendlandC2,
        KernelKind::Buhmann,
    ] {
        for &rho in &radii {
            let fit = fit_rbf(&data, &cps, Kernel::compact(kind, rho)).map_err(runtime)?;
            rows.push(ComparisonRow {
                technique: "csrbf".into(),
                kernel: kind.label().into(),
                n_basis: cps.len(),
                radius: rho,
                nnz: fit.nnz_kernel_matrix,
                ratio: fit.fill_ratio,
                time_s: fit.solve_time_s,
                rmse: fit.rmse,
            });
        }
    }
    write(&args.out.join("report.csv"), &comparison_csv(&rows))?;
    Ok(())
}

fn cmd_gen_peaks(args: &GenPeaksArgs) -> Result<(), CliError> {
    if args.n == 0 {
        return Err(CliError::Config("need at least one sample".into()));
    }
    let data = gen_peaks(
        args.n,
        PEAKS_REGION,
        &NoiseSpec {
            sigma: args.sigma,
            seed: args.seed,
        },
    );
    std::fs::create_dir_all(&args.out).map_err(|e| CliError::Runtime(e.to_string()))?;
    crate::data::write_xyz(&args.out.join("peaks.xyz"), &data)
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    Ok(())
}
