//! `gaugecov`: natural-form camera covariances from the command line.
//!
//! Exit codes: 0 success, 2 bad flags, 3 input/output failure, 4 computation
//! failure (the message names the pipeline stage), 5 verification failed.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use gaugecov::covariance::{Matrix8, NaturalCovariance};
use gaugecov::oracle::{error_metric, pseudoinverse_covariance, ORACLE_PARAM_LIMIT};
use gaugecov::scene::{
    generate_cube_scene, generate_random_scene, load_reconstruction, save_reconstruction,
};
use gaugecov::subrec::{
    approximate_covariances, error_sweep, summarize_sweep, write_sweep_csv, DEFAULT_DECOMPOSITIONS,
    DEFAULT_K_BAR,
};
use gaugecov::{compute_covariance, CovarianceResult, Error, Reconstruction};
use serde_json::{json, Value};

/// Largest nullspace residual accepted by `verify`.
const NULLSPACE_TOL: f64 = 1e-8;
/// Largest mean camera error against the dense reference accepted by `verify`.
const ORACLE_ERR_TOL: f64 = 1e-4;
/// Largest camera count for which `subrec` also computes the full scene.
const SWEEP_CAMERA_LIMIT: usize = 2000;

#[derive(Parser, Debug)]
#[command(
    name = "gaugecov",
    version,
    about = "Gauge-free camera covariance for SfM reconstructions"
)]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "GAUGECOV_THREADS")]
    threads: Option<usize>,

    /// Print a single JSON summary line on stdout.
    #[arg(long, global = true)]
    porcelain: bool,

    /// Only report errors on stderr.
    #[arg(long, short, global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic scene.
    Generate(GenerateArgs),
    /// Compute the covariance of every camera.
    Compute(ComputeArgs),
    /// Check the covariance against the dense reference and invariants.
    Verify(VerifyArgs),
    /// Approximate covariances from sub-reconstructions.
    Subrec(SubrecArgs),
}

#[derive(Args, Debug)]
struct GenerateArgs {
    /// Six cameras around fifteen points.
    #[arg(long, conflicts_with_all = ["cams", "pts", "visibility"])]
    cube: bool,
    #[arg(long, required_unless_present = "cube")]
    cams: Option<usize>,
    #[arg(long, required_unless_present = "cube")]
    pts: Option<usize>,
    /// Fraction of cameras observing each point.
    #[arg(long, default_value_t = 0.1)]
    visibility: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Pixel noise standard deviation.
    #[arg(long, default_value_t = 1.0)]
    noise: f64,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Args, Debug)]
struct ComputeArgs {
    input: PathBuf,
    #[arg(short, long)]
    output: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
    /// Include point covariances (JSON only).
    #[arg(long)]
    points: bool,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    input: PathBuf,
    /// Write the per-camera error table as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Parameter limit of the dense reference.
    #[arg(long, default_value_t = ORACLE_PARAM_LIMIT)]
    oracle_limit: usize,
    /// Testing hook: perturbs one camera's block before comparison.
    #[arg(long, hide = true)]
    corrupt_camera: Option<usize>,
}

#[derive(Args, Debug)]
struct SubrecArgs {
    input: PathBuf,
    #[arg(short, long)]
    output: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
    /// Cameras per sub-reconstruction.
    #[arg(long, default_value_t = DEFAULT_K_BAR)]
    kbar: usize,
    #[arg(long, default_value_t = DEFAULT_DECOMPOSITIONS)]
    decompositions: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write the error-vs-size experiment CSV against the full scene.
    #[arg(long)]
    sweep: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_values_t = [5, 10, 20, 40, 80])]
    sweep_kbar: Vec<usize>,
    #[arg(long, default_value_t = 25)]
    sweep_subsets: usize,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Io(String),
    Compute(String),
    Verify(Vec<String>),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Io(_) => 3,
            Failure::Compute(_) => 4,
            Failure::Verify(_) => 5,
        }
    }

    fn message(&self) -> String {
        match self {
            Failure::Usage(m) | Failure::Io(m) | Failure::Compute(m) => m.clone(),
            Failure::Verify(checks) => format!("failed checks: {}", checks.join("; ")),
        }
    }
}

fn compute_failure(e: Error) -> Failure {
    match e.stage() {
        Some(stage) => Failure::Compute(format!("stage {stage}: {e}")),
        None => Failure::Compute(e.to_string()),
    }
}

fn io_failure(e: Error) -> Failure {
    Failure::Io(e.to_string())
}

fn load(path: &Path) -> Result<Reconstruction, Failure> {
    log::info!("loading {}", path.display());
    load_reconstruction(path).map_err(io_failure)
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Failure::Io(format!("cannot create {}: {e}", path.display())))
}

fn save_covariance(cov: &CovarianceResult, path: &Path, format: Format) -> Result<(), Failure> {
    match format {
        Format::Json => cov.save_json(path),
        Format::Csv => cov.save_csv(path),
    }
    .map_err(io_failure)
}

fn generate(args: &GenerateArgs) -> Result<Value, Failure> {
    let rec = if args.cube {
        generate_cube_scene(args.seed, args.noise)
    } else {
        let (cams, pts) = (args.cams.unwrap_or(0), args.pts.unwrap_or(0));
        generate_random_scene(cams, pts, args.visibility, args.seed, args.noise)
    }
    .map_err(|e| Failure::Usage(e.to_string()))?;
    save_reconstruction(&rec, &args.output).map_err(io_failure)?;
    log::info!(
        "wrote {} cameras, {} points, {} observations to {}",
        rec.n_cameras(),
        rec.n_points(),
        rec.n_observations(),
        args.output.display()
    );
    Ok(json!({
        "cameras": rec.n_cameras(),
        "points": rec.n_points(),
        "observations": rec.n_observations(),
        "output": args.output,
    }))
}

fn compute(args: &ComputeArgs) -> Result<Value, Failure> {
    if args.points && args.format == Format::Csv {
        return Err(Failure::Usage("--points needs --format json".into()));
    }
    let rec = load(&args.input)?;
    log::info!("computing covariance of {} cameras", rec.n_cameras());
    let cov = if args.points {
        NaturalCovariance::compute(&rec).map(|nc| nc.result(true))
    } else {
        compute_covariance(&rec)
    }
    .map_err(compute_failure)?;
    save_covariance(&cov, &args.output, args.format)?;
    let d = &cov.diagnostics;
    Ok(json!({
        "cameras": cov.n_cameras(),
        "output": args.output,
        "nullspace_residual": d.nullspace_residual,
        "pivot_relative": d.pivot_relative,
        "psd_warnings": d.psd_warnings.len(),
    }))
}

fn verify(args: &VerifyArgs, porcelain: bool) -> Result<Value, Failure> {
    let rec = load(&args.input)?;
    let mut cov = compute_covariance(&rec).map_err(compute_failure)?;
    if let Some(c) = args.corrupt_camera {
        let block = cov
            .cameras
            .get_mut(c)
            .ok_or_else(|| Failure::Usage(format!("no camera {c}")))?;
        let bump = block.trace().abs().max(1.0);
        *block += Matrix8::identity() * bump;
    }

    let mut failed = Vec::new();
    let residual = cov.diagnostics.nullspace_residual.unwrap_or(f64::NAN);
    if residual.is_nan() || residual >= NULLSPACE_TOL {
        failed.push(format!(
            "nullspace residual {residual:e} >= {NULLSPACE_TOL:e}"
        ));
    }
    if !cov.diagnostics.psd_warnings.is_empty() {
        failed.push(format!(
            "{} camera blocks not PSD",
            cov.diagnostics.psd_warnings.len()
        ));
    }

    let mut summary = json!({
        "cameras": rec.n_cameras(),
        "nullspace_residual": residual,
        "psd_warnings": cov.diagnostics.psd_warnings.len(),
    });
    if rec.n_params() > args.oracle_limit {
        log::warn!(
            "{} parameters exceed the reference limit of {}; skipping the dense comparison",
            rec.n_params(),
            args.oracle_limit
        );
        summary["oracle"] = json!("skipped");
    } else {
        log::info!("computing dense reference");
        let gt = pseudoinverse_covariance(&rec).map_err(compute_failure)?;
        let report = error_metric(&gt, &cov, &rec).map_err(compute_failure)?;
        if !porcelain {
            let mut out = std::io::stdout().lock();
            let _ = writeln!(out, "camera  err");
            for (i, e) in report.per_camera.iter().enumerate() {
                let _ = writeln!(out, "{i:>6}  {e:.3e}");
            }
            let _ = writeln!(
                out,
                "mean {:.3e}  median {:.3e}",
                report.mean, report.median
            );
        }
        if let Some(path) = &args.csv {
            let mut w = create(path)?;
            let io = |e: std::io::Error| Failure::Io(format!("{}: {e}", path.display()));
            writeln!(w, "camera_id,err").map_err(io)?;
            for (i, e) in report.per_camera.iter().enumerate() {
                writeln!(w, "{i},{e:e}").map_err(io)?;
            }
            w.flush().map_err(io)?;
        }
        if report.mean.is_nan() || report.mean >= ORACLE_ERR_TOL {
            failed.push(format!("mean err {:e} >= {ORACLE_ERR_TOL:e}", report.mean));
        }
        summary["mean_err"] = json!(report.mean);
        summary["median_err"] = json!(report.median);
    }
    if !porcelain {
        let status = if failed.is_empty() { "PASS" } else { "FAIL" };
        println!("nullspace residual {residual:.3e}");
        println!("{status}");
    }
    if failed.is_empty() {
        Ok(summary)
    } else {
        Err(Failure::Verify(failed))
    }
}

fn subrec(args: &SubrecArgs) -> Result<Value, Failure> {
    if args.kbar < 2 || args.decompositions == 0 {
        return Err(Failure::Usage(
            "--kbar must be >= 2 and --decompositions >= 1".into(),
        ));
    }
    let rec = load(&args.input)?;
    log::info!(
        "{} decompositions into neighbourhoods of {} cameras",
        args.decompositions,
        args.kbar
    );
    let approx = approximate_covariances(&rec, args.kbar, args.decompositions, args.seed)
        .map_err(compute_failure)?;
    save_covariance(&approx.to_result(), &args.output, args.format)?;
    let mut summary = json!({
        "cameras": rec.n_cameras(),
        "output": args.output,
        "subsets": approx.subsets_per_decomposition,
        "mean_trace": approx.traces.iter().sum::<f64>() / approx.traces.len() as f64,
    });

    if let Some(path) = &args.sweep {
        if rec.n_cameras() > SWEEP_CAMERA_LIMIT {
            log::warn!("scene too large for the full reference; skipping the sweep");
            summary["sweep"] = json!("skipped");
        } else {
            log::info!("computing full-scene covariance for the sweep");
            let full = compute_covariance(&rec).map_err(compute_failure)?;
            let rows = error_sweep(&rec, &full, &args.sweep_kbar, args.sweep_subsets, args.seed)
                .map_err(compute_failure)?;
            write_sweep_csv(&rows, create(path)?).map_err(io_failure)?;
            let stats = summarize_sweep(&rows);
            for s in &stats {
                log::info!(
                    "kbar {:>4}: mean rel {:.3e}, median rel {:.3e}, median abs {:.3e}",
                    s.kbar,
                    s.mean_relative,
                    s.median_relative,
                    s.median_absolute
                );
            }
            summary["sweep"] = serde_json::to_value(&stats).unwrap_or(Value::Null);
        }
    }
    Ok(summary)
}

fn name(command: &Command) -> &'static str {
    match command {
        Command::Generate(_) => "generate",
        Command::Compute(_) => "compute",
        Command::Verify(_) => "verify",
        Command::Subrec(_) => "subrec",
    }
}

fn dispatch(cli: &Cli) -> Result<Value, Failure> {
    if cli.threads == Some(0) {
        return Err(Failure::Usage("--threads must be positive".into()));
    }
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        pool = pool.num_threads(n);
    }
    let pool = pool
        .build()
        .map_err(|e| Failure::Usage(format!("thread pool: {e}")))?;
    pool.install(|| match &cli.command {
        Command::Generate(a) => generate(a),
        Command::Compute(a) => compute(a),
        Command::Verify(a) => verify(a, cli.porcelain),
        Command::Subrec(a) => subrec(a),
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(if cli.quiet {
        "error"
    } else {
        "info"
    }))
    .format_timestamp(None)
    .init();

    let start = Instant::now();
    let outcome = dispatch(&cli);
    let seconds = start.elapsed().as_secs_f64();
    let command = name(&cli.command);
    match outcome {
        Ok(summary) => {
            if cli.porcelain {
                println!(
                    "{}",
                    json!({"command": command, "status": "ok", "exit_code": 0, "seconds": seconds, "summary": summary})
                );
            }
            ExitCode::SUCCESS
        }
        Err(f) => {
            eprintln!("gaugecov {command}: {}", f.message());
            if cli.porcelain {
                println!(
                    "{}",
                    json!({"command": command, "status": "error", "exit_code": f.code(), "seconds": seconds, "error": f.message()})
                );
            }
            ExitCode::from(f.code())
        }
    }
}
