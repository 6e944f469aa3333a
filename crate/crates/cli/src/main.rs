//! `sdct` command line: instance generation, single solves, the full recovery
//! pipeline, LP rounding, the ADM baseline, the landscape lab and the
//! phase-transition sweep.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::Serialize;

use sdct_core::geometry::{
    landscape_grid, region_certificates, sample_region, GridSource, Region, RegionReport, RegionSpec,
};
use sdct_core::harness::{phase_rows, run_phase_transition, write_phase_csv, BenchConfig, PRule, Sparsity};
use sdct_core::io::{
    load_matrix, read_matrix_csv, save_matrix, write_certificates_csv, write_grid_csv, write_matrix_csv,
    write_trace_csv,
};
use sdct_core::model::{
    identity_dictionary, make_complete_dictionary, make_orthogonal_dictionary, sample_bg, sample_fixed_k,
    synthesize,
};
use sdct_core::recovery::{
    adm_trials, lp_round_certified, random_sphere_point, run_pipeline, PipelineConfig, RoundingProblem,
    ThetaSource,
};
use sdct_core::rng::derive_seed;
use sdct_core::{minimize, DataMatrix, SmoothingParams, TrmConfig};

/// Largest `n * p` for which `gen --csv` is accepted.
const CSV_MAX_ENTRIES: usize = 1_000_000;

#[derive(Parser, Debug)]
#[command(name = "sdct", version, about = "Complete dictionary recovery over the sphere")]
struct Cli {
    /// Worker threads for data-parallel passes; SDCT_WORKERS takes precedence.
    #[arg(long, global = true)]
    workers: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic instance Y = A0 X0.
    Gen(GenArgs),
    /// Minimize the smoothed objective over the sphere from one random start.
    Solve(SolveArgs),
    /// Generate, precondition, recover every row and reconstruct.
    Pipeline(PipelineArgs),
    /// Exactify a direction with the l1 rounding program.
    Round(RoundArgs),
    /// Run the orthogonal ADM baseline from several starts.
    Adm(AdmArgs),
    /// Sign certificates over the landscape regions, or a landscape grid.
    Geometry(GeometryArgs),
    /// Phase-transition sweep over (n, k).
    Bench(BenchArgs),
}

#[derive(Args, Debug)]
struct GenArgs {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    p: usize,
    /// Bernoulli-Gaussian rate.
    #[arg(long, conflicts_with = "k", required_unless_present = "k")]
    theta: Option<f64>,
    /// Exact number of nonzeros per column.
    #[arg(long)]
    k: Option<usize>,
    /// Condition number of A0; 1 gives an orthogonal dictionary.
    #[arg(long, default_value_t = 1.0)]
    kappa: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for Y.bin, A0.bin and X0.bin.
    #[arg(long)]
    out: PathBuf,
    /// Also write CSV copies.
    #[arg(long)]
    csv: bool,
}

#[derive(Args, Debug)]
struct SolveArgs {
    /// Data matrix (binary, or CSV by extension).
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 1e-2)]
    mu: f64,
    /// Seed of the random starting point.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Trust-region settings (TOML or JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    trace_out: Option<PathBuf>,
    /// Final iterate as an n x 1 binary matrix.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PipelineArgs {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    p: usize,
    #[arg(long)]
    theta: f64,
    #[arg(long, default_value_t = 1.0)]
    kappa: f64,
    #[arg(long, default_value_t = 1e-2)]
    mu: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Trust-region settings (TOML or JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Estimate theta from the data instead of using the generating rate.
    #[arg(long)]
    pilot_theta: bool,
    /// JSON report; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RoundArgs {
    #[arg(long)]
    data: PathBuf,
    /// Normal r of the constraint <r, q> = 1 (n x 1 matrix).
    #[arg(long)]
    r_vector: PathBuf,
    /// Rounded direction as an n x 1 binary matrix.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct AdmArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    lambda: f64,
    #[arg(long, default_value_t = 100)]
    iters: usize,
    #[arg(long, default_value_t = 10)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// JSON summary; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum RegionArg {
    R1,
    R2,
    R3,
    All,
}

#[derive(Args, Debug)]
struct GeometryArgs {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    theta: f64,
    #[arg(long, default_value_t = 1e-2)]
    mu: f64,
    #[arg(long)]
    p: usize,
    #[arg(long, value_enum, default_value_t = RegionArg::All)]
    region: RegionArg,
    #[arg(long, default_value_t = 1000)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Emit the landscape grid (w1, w2, g) instead of certificates; needs n = 3.
    #[arg(long)]
    grid: bool,
    /// Grid points per axis.
    #[arg(long, default_value_t = 64)]
    resolution: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum SparsityArg {
    FixedK,
    Bg,
}

#[derive(Args, Debug)]
struct BenchArgs {
    /// Comma-separated dimensions.
    #[arg(long, value_delimiter = ',')]
    n_list: Option<Vec<usize>>,
    /// Comma-separated sparsity levels; all k <= n when absent.
    #[arg(long, value_delimiter = ',')]
    k_list: Option<Vec<usize>>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long)]
    master_seed: Option<u64>,
    #[arg(long, value_enum)]
    sparsity: Option<SparsityArg>,
    /// Fixed number of samples instead of 5 n^3.
    #[arg(long)]
    p: Option<usize>,
    /// Sweep n and k up to 120 in steps of 5.
    #[arg(long)]
    full_grid: bool,
    /// Sweep settings (TOML or JSON); flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "phase.csv")]
    out: PathBuf,
    /// Per-cell JSON with trial outcomes.
    #[arg(long)]
    cells_out: Option<PathBuf>,
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        let broken_pipe = e.chain().any(is_broken_pipe);
        if broken_pipe {
            return;
        }
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn is_broken_pipe(e: &(dyn std::error::Error + 'static)) -> bool {
    let kind = e
        .downcast_ref::<std::io::Error>()
        .map(std::io::Error::kind)
        .or_else(|| e.downcast_ref::<serde_json::Error>().and_then(serde_json::Error::io_error_kind));
    kind == Some(std::io::ErrorKind::BrokenPipe)
}

fn run(cli: Cli) -> Result<()> {
    configure_workers(cli.workers)?;
    match cli.command {
        Command::Gen(a) => gen(a),
        Command::Solve(a) => solve(a),
        Command::Pipeline(a) => pipeline(a),
        Command::Round(a) => round(a),
        Command::Adm(a) => adm(a),
        Command::Geometry(a) => geometry(a),
        Command::Bench(a) => bench(a),
    }
}

fn configure_workers(flag: Option<usize>) -> Result<()> {
    let workers = match std::env::var("SDCT_WORKERS") {
        Ok(v) => Some(
            v.trim()
                .parse::<usize>()
                .with_context(|| format!("SDCT_WORKERS must be a positive integer, got {v:?}"))?,
        ),
        Err(_) => flag,
    };
    let Some(workers) = workers else { return Ok(()) };
    if workers == 0 {
        bail!("worker count must be positive");
    }
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build_global()
        .context("configuring the worker pool")?;
    #[cfg(not(feature = "parallel"))]
    warn!("built without the parallel feature; ignoring {workers} workers");
    info!("using {workers} workers");
    Ok(())
}

fn load_config<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let parsed = if has_ext(path, "json") {
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
    } else {
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
    };
    Ok(parsed)
}

fn trm_config(path: Option<&Path>) -> Result<TrmConfig> {
    let cfg = match path {
        Some(p) => load_config(p)?,
        None => TrmConfig::default(),
    };
    cfg.validate()?;
    Ok(cfg)
}

fn has_ext(path: &Path, ext: &str) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case(ext))
}

fn read_any_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let m = if has_ext(path, "csv") {
        read_matrix_csv(File::open(path).with_context(|| format!("opening {}", path.display()))?)?
    } else {
        load_matrix(path).with_context(|| format!("reading {}", path.display()))?
    };
    Ok(m)
}

fn read_data(path: &Path) -> Result<DataMatrix> {
    let m = read_any_matrix(path)?;
    if m.ncols() == 0 || m.nrows() == 0 {
        bail!("{} holds an empty matrix", path.display());
    }
    Ok(DataMatrix::new(m))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn emit_json<T: Serialize>(value: &T, out: Option<&Path>) -> Result<()> {
    match out {
        Some(p) => {
            let mut w = create(p)?;
            serde_json::to_writer_pretty(&mut w, value)?;
            writeln!(w)?;
            w.flush()?;
        }
        None => {
            let mut out = std::io::stdout().lock();
            serde_json::to_writer_pretty(&mut out, value)?;
            writeln!(out)?;
        }
    }
    Ok(())
}

fn gen(a: GenArgs) -> Result<()> {
    if a.csv && a.n.saturating_mul(a.p) > CSV_MAX_ENTRIES {
        bail!("--csv is limited to n * p <= {CSV_MAX_ENTRIES}");
    }
    let a0 = if a.kappa == 1.0 {
        make_orthogonal_dictionary(a.n, derive_seed(a.seed, &[1]))?
    } else {
        make_complete_dictionary(a.n, a.kappa, derive_seed(a.seed, &[1]))?
    };
    let x_seed = derive_seed(a.seed, &[2]);
    let x0 = match (a.theta, a.k) {
        (Some(theta), None) => sample_bg(a.n, a.p, theta, x_seed)?,
        (None, Some(k)) => sample_fixed_k(a.n, a.p, k, x_seed)?,
        _ => bail!("exactly one of --theta and --k is required"),
    };
    let y = synthesize(&a0, &x0)?;

    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    for (name, m) in [("Y", &y.entries), ("A0", &a0.entries), ("X0", &x0.entries)] {
        save_matrix(&a.out.join(format!("{name}.bin")), m)?;
        if a.csv {
            let mut w = create(&a.out.join(format!("{name}.csv")))?;
            write_matrix_csv(m, &mut w)?;
            w.flush()?;
        }
    }
    emit_json(&y.provenance, Some(&a.out.join("provenance.json")))?;
    info!("wrote {}x{} instance to {}", a.n, a.p, a.out.display());
    Ok(())
}

#[derive(Serialize)]
struct SolveSummary {
    f_initial: f64,
    f_final: f64,
    iterations: usize,
    termination: sdct_core::Termination,
    failure: Option<String>,
    q: Vec<f64>,
}

fn solve(a: SolveArgs) -> Result<()> {
    let y = read_data(&a.data)?;
    let mu = SmoothingParams::new(a.mu)?;
    let cfg = trm_config(a.config.as_deref())?;
    let q0 = random_sphere_point(y.dim(), a.seed);
    let res = minimize(&y, mu, &cfg, &q0)?;
    if let Some(path) = &a.trace_out {
        let mut w = create(path)?;
        write_trace_csv(&res, &mut w)?;
        w.flush()?;
    }
    if let Some(path) = &a.out {
        save_matrix(path, &DMatrix::from_column_slice(y.dim(), 1, res.q_final.as_vector().as_slice()))?;
    }
    emit_json(
        &SolveSummary {
            f_initial: res.f_initial,
            f_final: res.f_final,
            iterations: res.iterations(),
            termination: res.termination,
            failure: res.failure.clone(),
            q: res.q_final.as_vector().iter().copied().collect(),
        },
        None,
    )
}

fn pipeline(a: PipelineArgs) -> Result<()> {
    let cfg = PipelineConfig {
        n: a.n,
        p: a.p,
        theta: a.theta,
        kappa: a.kappa,
        mu: a.mu,
        seed: a.seed,
        trm: trm_config(a.config.as_deref())?,
        theta_source: if a.pilot_theta { ThetaSource::Pilot } else { ThetaSource::Known },
    };
    let report = run_pipeline(&cfg)?;
    if let Some(e) = &report.error {
        warn!("recovery incomplete: {e}");
    }
    emit_json(&report, a.out.as_deref())
}

#[derive(Serialize)]
struct RoundSummary {
    objective: f64,
    dual_objective: f64,
    iterations: usize,
    q: Vec<f64>,
}

fn round(a: RoundArgs) -> Result<()> {
    let y = read_data(&a.data)?;
    let rm = read_any_matrix(&a.r_vector)?;
    if rm.ncols() != 1 && rm.nrows() != 1 {
        bail!("{} must hold a vector, found {}x{}", a.r_vector.display(), rm.nrows(), rm.ncols());
    }
    let r = nalgebra::DVector::from_column_slice(rm.as_slice());
    let sol = lp_round_certified(&RoundingProblem { yhat: &y, r })?;
    save_matrix(&a.out, &DMatrix::from_column_slice(y.dim(), 1, sol.q.as_vector().as_slice()))?;
    emit_json(
        &RoundSummary {
            objective: sol.objective,
            dual_objective: sol.dual_objective,
            iterations: sol.iterations,
            q: sol.q.as_vector().iter().copied().collect(),
        },
        None,
    )
}

fn adm(a: AdmArgs) -> Result<()> {
    if a.trials == 0 {
        bail!("--trials must be positive");
    }
    let y = read_data(&a.data)?;
    let summary = adm_trials(&y, a.lambda, a.iters, a.trials, a.seed)?;
    emit_json(&summary, a.out.as_deref())
}

#[derive(Serialize)]
struct RegionSummary {
    region: Region,
    samples: usize,
    pass_fraction: f64,
    margin_min: f64,
    margin_median: f64,
}

impl From<&RegionReport> for RegionSummary {
    fn from(r: &RegionReport) -> Self {
        Self {
            region: r.region,
            samples: r.samples,
            pass_fraction: r.pass_fraction,
            margin_min: r.margin_min,
            margin_median: r.margin_median,
        }
    }
}

fn geometry(a: GeometryArgs) -> Result<()> {
    let mu = SmoothingParams::new(a.mu)?;
    let x0 = sample_bg(a.n, a.p, a.theta, derive_seed(a.seed, &[0]))?;
    let x = synthesize(&identity_dictionary(a.n), &x0)?;

    if a.grid {
        let rows = landscape_grid(a.n, GridSource::Data(&x), mu, a.resolution, derive_seed(a.seed, &[2]))?;
        let mut w = create(&a.out)?;
        write_grid_csv(&rows, &mut w)?;
        w.flush()?;
        return Ok(());
    }

    let regions: Vec<Region> = match a.region {
        RegionArg::R1 => vec![Region::R1],
        RegionArg::R2 => vec![Region::R2],
        RegionArg::R3 => vec![Region::R3],
        RegionArg::All => Region::ALL.to_vec(),
    };
    let mut details = Vec::new();
    let mut summaries = Vec::new();
    for region in regions {
        let idx = Region::ALL.iter().position(|&r| r == region).unwrap_or(0) as u64;
        let spec = RegionSpec::new(region, a.n, a.mu)?;
        let pts = sample_region(a.n, &spec, a.samples, derive_seed(a.seed, &[1, idx]))?;
        let rep = region_certificates(&x, mu, a.theta, &spec, &pts)?;
        summaries.push(RegionSummary::from(&rep));
        details.extend(rep.details);
    }
    let mut w = create(&a.out)?;
    write_certificates_csv(&details, &mut w)?;
    w.flush()?;
    emit_json(&summaries, None)
}

fn bench(a: BenchArgs) -> Result<()> {
    let mut cfg = match (&a.config, a.full_grid) {
        (Some(p), _) => load_config::<BenchConfig>(p)?,
        (None, true) => BenchConfig::full_grid(),
        (None, false) => BenchConfig::default(),
    };
    if a.full_grid {
        cfg.n_values = BenchConfig::full_grid().n_values;
        cfg.k_values = None;
    }
    if let Some(v) = a.n_list {
        cfg.n_values = v;
    }
    if let Some(v) = a.k_list {
        cfg.k_values = Some(v);
    }
    if let Some(v) = a.trials {
        cfg.trials = v;
    }
    if let Some(v) = a.mu {
        cfg.mu = v;
    }
    if let Some(v) = a.master_seed {
        cfg.master_seed = v;
    }
    if let Some(v) = a.sparsity {
        cfg.sparsity = match v {
            SparsityArg::FixedK => Sparsity::FixedK,
            SparsityArg::Bg => Sparsity::BernoulliGaussian,
        };
    }
    if let Some(p) = a.p {
        cfg.p_rule = PRule::Fixed { p };
    }
    cfg.validate()?;

    let mut w = create(&a.out)?;
    let cells = run_phase_transition(&cfg)?;
    write_phase_csv(&phase_rows(&cells), &mut w)?;
    w.flush()?;
    if let Some(path) = &a.cells_out {
        emit_json(&cells, Some(path))?;
    }
    let trials: usize = cells.iter().map(|c| c.trials).sum();
    let successes: usize = cells.iter().map(|c| c.successes).sum();
    info!("{} cells, {successes}/{trials} successful trials", cells.len());
    Ok(())
}
