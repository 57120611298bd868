use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use urnflow::estimators::{eigvec_ratios, heaps_exponent, p_tilde_hat, RatioMethod, DEFAULT_WINDOW};
use urnflow::harness::{
    ensure_dir, evaluate_null, run_clt_diagnostics, run_coverage, run_first_order, run_size_power, write_coverage_csv, write_json,
    write_manifest, write_size_power_csv, ExperimentConfig, ExperimentKind, Manifest, NullSpec,
};
use urnflow::inference::{ci_general, ci_p_tilde_meanfield, ci_p_tilde_n2, Family};
use urnflow::ingest::{bonferroni, load_streams, observables, pvalue_summary};
use urnflow::params::{matrix_to_rows, rows_to_matrix, ParamSpec};
use urnflow::simulator::{read_trajectory, run_with_streams, write_streams, write_trajectory, Schedule, TrackPolicy, Trajectory};
use urnflow::spectral::{c_det, eigen_structure, Mode};

#[derive(Parser)]
#[command(name = "urnflow", version, about = "Interacting urn models with triggering: simulation and inference")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one trajectory
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        horizon: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// Also write the per-urn drawn color streams
        #[arg(long)]
        streams: bool,
    },
    /// Heaps exponent and eigenvector ratios from a trajectory
    Estimate {
        #[arg(long)]
        trajectory: PathBuf,
        #[arg(long, default_value_t = DEFAULT_WINDOW)]
        window: f64,
        #[arg(long, value_enum, default_value_t = RatioArg::GeometricMean)]
        method: RatioArg,
        /// 1-based reference urn for the ratios (default: the last)
        #[arg(long)]
        reference: Option<usize>,
    },
    /// Hypothesis test on a trajectory
    Test {
        #[arg(long)]
        trajectory: PathBuf,
        /// JSON null descriptor
        #[arg(long)]
        hypothesis: PathBuf,
        /// Checkpoint to test at (default: the last)
        #[arg(long)]
        at: Option<u64>,
        #[arg(long)]
        bonferroni: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Confidence intervals for the tracked items' limit probabilities
    Ci {
        #[arg(long)]
        trajectory: PathBuf,
        #[arg(long, value_enum, default_value_t = CiArg::N2)]
        method: CiArg,
        /// η for the two-urn interval; omitted means unknown
        #[arg(long)]
        eta: Option<f64>,
        /// JSON file with the W matrix rows (general method)
        #[arg(long)]
        w_matrix: Option<PathBuf>,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[arg(long)]
        at: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Token streams to observables
    Ingest {
        #[arg(long, num_args = 1.., required = true)]
        streams: Vec<PathBuf>,
        #[arg(long, default_value_t = 100)]
        top_m: usize,
        #[arg(long)]
        casefold: bool,
        #[arg(long, default_value_t = 50)]
        per_decade: u32,
        #[arg(long)]
        out: PathBuf,
    },
    /// Confidence interval coverage study
    Coverage(ExperimentArgs),
    /// Empirical size and power against the analytic law
    SizePower(ExperimentArgs),
    /// CLT diagnostics
    CltDiag(ExperimentArgs),
    /// First-order limits over replicates
    Analyze(ExperimentArgs),
    /// Eigen-structure and C_det of a matrix
    Eigen {
        /// JSON file with matrix rows, or a parameter file (Γ and W are both reported)
        #[arg(long)]
        matrix: PathBuf,
    },
}

#[derive(clap::Args)]
struct ExperimentArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    replicates: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum RatioArg {
    GeometricMean,
    InterceptDifference,
}

#[derive(Clone, Copy, ValueEnum)]
enum CiArg {
    N2,
    MeanField,
    General,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Runtime { kind: &'static str, message: String },
}

impl CliError {
    fn runtime(kind: &'static str, e: impl std::fmt::Display) -> Self {
        CliError::Runtime { kind, message: e.to_string() }
    }
}

type Result<T> = std::result::Result<T, CliError>;

#[derive(Serialize, Deserialize)]
struct SimulateConfig {
    params: ParamSpec,
    #[serde(default)]
    seed: u64,
    horizon: u64,
    #[serde(default)]
    schedule: Schedule,
    #[serde(default)]
    track: TrackPolicy,
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))
}

fn parse_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    serde_json::from_str(&read_text(path)?).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn load_trajectory(path: &Path) -> Result<Trajectory> {
    read_trajectory(path).map_err(|e| CliError::runtime("trajectory", e))
}

fn checkpoint_index(traj: &Trajectory, at: Option<u64>) -> Result<usize> {
    match at {
        None => Ok(traj.checkpoints.len() - 1),
        Some(t) => traj
            .checkpoints
            .iter()
            .position(|&c| c == t)
            .ok_or_else(|| CliError::Usage(format!("step {t} is not a checkpoint of the trajectory"))),
    }
}

fn print_json<T: Serialize>(v: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v).map_err(|e| CliError::runtime("json", e))?);
    Ok(())
}

fn manifest_out(dir: &Path, mut manifest: Manifest, outputs: &[&str]) -> Result<()> {
    manifest.outputs = outputs.iter().map(|s| s.to_string()).collect();
    write_manifest(dir, &manifest).map_err(|e| CliError::runtime("io", e))?;
    Ok(())
}

fn simulate(config: &Path, seed: Option<u64>, horizon: Option<u64>, out: &Path, streams: bool) -> Result<()> {
    let mut cfg: SimulateConfig = parse_json(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(h) = horizon {
        cfg.horizon = h;
    }
    if cfg.horizon == 0 {
        return Err(CliError::Usage("horizon must be positive".into()));
    }
    let params = cfg.params.build().map_err(|e| CliError::runtime("params", e))?;
    ensure_dir(out).map_err(|e| CliError::runtime("io", e))?;
    let (traj, draws) = run_with_streams(&params, cfg.seed, cfg.horizon, &cfg.schedule, &cfg.track);
    write_trajectory(&traj, &out.join("trajectory.csv")).map_err(|e| CliError::runtime("io", e))?;
    let mut outputs = vec!["trajectory.csv".to_string(), "trajectory.json".to_string()];
    if streams {
        for p in write_streams(&draws, &out.join("streams")).map_err(|e| CliError::runtime("io", e))? {
            outputs.push(format!("streams/{}", p.file_name().unwrap().to_string_lossy()));
        }
    }
    let cfg_value = serde_json::to_value(&cfg).map_err(|e| CliError::runtime("json", e))?;
    let refs: Vec<&str> = outputs.iter().map(String::as_str).collect();
    manifest_out(out, Manifest::new("simulate", Some(cfg.seed), cfg_value), &refs)?;
    println!("wrote {} checkpoints to {}", traj.checkpoints.len(), out.display());
    Ok(())
}

fn estimate(path: &Path, window: f64, method: RatioArg, reference: Option<usize>) -> Result<()> {
    let traj = load_trajectory(path)?;
    let n = traj.n();
    let j = match reference {
        Some(r) if r >= 1 && r <= n => r - 1,
        Some(r) => return Err(CliError::Usage(format!("reference urn {r} outside 1..={n}"))),
        None => n - 1,
    };
    let method = match method {
        RatioArg::GeometricMean => RatioMethod::GeometricMean,
        RatioArg::InterceptDifference => RatioMethod::InterceptDifference,
    };
    let fit = heaps_exponent(&traj, window).map_err(|e| CliError::runtime("estimator", e))?;
    let ratios = eigvec_ratios(&traj, j, window, method).map_err(|e| CliError::runtime("estimator", e))?;
    let last = traj.checkpoints.len() - 1;
    let t = traj.checkpoints[last];
    let p_tilde: Vec<_> = traj
        .tracked_items
        .iter()
        .zip(&traj.k_series[last])
        .map(|(item, k)| serde_json::json!({"item": item, "p_tilde": p_tilde_hat(k, t)}))
        .collect();
    print_json(&serde_json::json!({
        "gamma_hat": fit.slope,
        "heaps_fit": fit,
        "reference_urn": j + 1,
        "ratios": ratios,
        "method": method,
        "p_tilde": p_tilde,
    }))
}

fn test(path: &Path, hypothesis: &Path, at: Option<u64>, bonf: bool, out: Option<&Path>) -> Result<()> {
    let traj = load_trajectory(path)?;
    let null: NullSpec = parse_json(hypothesis)?;
    let i = checkpoint_index(&traj, at)?;
    let t = traj.checkpoints[i];
    let d = &traj.d_star[i];
    let per_item = match null.test {
        Family::WN2 | Family::WMeanField => true,
        Family::General => null.mode == Some(Mode::W),
        _ => false,
    };
    if !per_item {
        let r = evaluate_null(&null, d, &[], t).map_err(|e| CliError::runtime("inference", e))?;
        if let Some(dir) = out {
            ensure_dir(dir).map_err(|e| CliError::runtime("io", e))?;
            write_json(&r, &dir.join("test.json")).map_err(|e| CliError::runtime("io", e))?;
        }
        return print_json(&r);
    }
    if traj.tracked_items.is_empty() {
        return Err(CliError::runtime("inference", "trajectory has no tracked items"));
    }
    let mut results = Vec::new();
    for (item, k) in traj.tracked_items.iter().zip(&traj.k_series[i]) {
        match evaluate_null(&null, d, k, t) {
            Ok(r) => results.push((item.clone(), Some(r), None)),
            Err(e) => results.push((item.clone(), None, Some(e.to_string()))),
        }
    }
    let raw: Vec<f64> = results.iter().filter_map(|(_, r, _)| r.as_ref().map(|r| r.p_value)).collect();
    if raw.is_empty() {
        return Err(CliError::runtime("inference", "no item could be tested"));
    }
    let adjusted = if bonf { bonferroni(&raw) } else { raw.clone() };
    let summary = pvalue_summary(&adjusted, &[0.5, 0.75, 0.95]);
    if let Some(dir) = out {
        ensure_dir(dir).map_err(|e| CliError::runtime("io", e))?;
        let p = dir.join("pvalues.csv");
        let mut w = csv::Writer::from_path(&p).map_err(|e| CliError::runtime("io", e))?;
        let io = |e: csv::Error| CliError::runtime("io", e);
        w.write_record(["item", "statistic", "p_value", "error"]).map_err(io)?;
        for (item, r, err) in &results {
            let (s, pv) = r.as_ref().map_or((String::new(), String::new()), |r| (r.statistic.to_string(), r.p_value.to_string()));
            w.write_record([item.as_str(), &s, &pv, err.as_deref().unwrap_or("")]).map_err(io)?;
        }
        w.flush().map_err(|e| CliError::runtime("io", e))?;
    }
    print_json(&serde_json::json!({
        "t": t,
        "items_tested": raw.len(),
        "items_failed": results.len() - raw.len(),
        "bonferroni": bonf,
        "summary": summary,
        "table_row": summary.formatted(),
        "hypothesis": null,
    }))
}

#[allow(clippy::too_many_arguments)]
fn ci(path: &Path, method: CiArg, eta: Option<f64>, w_matrix: Option<&Path>, alpha: f64, at: Option<u64>, out: Option<&Path>) -> Result<()> {
    let traj = load_trajectory(path)?;
    let i = checkpoint_index(&traj, at)?;
    let t = traj.checkpoints[i];
    let w = match (method, w_matrix) {
        (CiArg::General, Some(p)) => {
            let rows: Vec<Vec<f64>> = parse_json(p)?;
            Some(rows_to_matrix(traj.n(), &rows, "w").map_err(|e| CliError::Usage(e.to_string()))?)
        }
        (CiArg::General, None) => return Err(CliError::Usage("--w-matrix is required for the general method".into())),
        _ => None,
    };
    let mut rows = Vec::new();
    for (item, k) in traj.tracked_items.iter().zip(&traj.k_series[i]) {
        let r = match method {
            CiArg::N2 => ci_p_tilde_n2(k, t, eta, alpha),
            CiArg::MeanField => ci_p_tilde_meanfield(k, t, alpha),
            CiArg::General => ci_general(k, t, w.as_ref().unwrap(), alpha),
        };
        rows.push(match r {
            Ok(c) => serde_json::json!({"item": item, "lower": c.lower(), "upper": c.upper(), "interval": c}),
            Err(e) => serde_json::json!({"item": item, "error": e.to_string()}),
        });
    }
    let report = serde_json::json!({"t": t, "alpha": alpha, "intervals": rows});
    if let Some(dir) = out {
        ensure_dir(dir).map_err(|e| CliError::runtime("io", e))?;
        write_json(&report, &dir.join("ci.json")).map_err(|e| CliError::runtime("io", e))?;
    }
    print_json(&report)
}

fn ingest(streams: &[PathBuf], top_m: usize, casefold: bool, per_decade: u32, out: &Path) -> Result<()> {
    let ts = load_streams(streams, casefold).map_err(|e| match e {
        urnflow::ingest::IngestError::IoError { .. } => CliError::Usage(e.to_string()),
        e => CliError::runtime("ingest", e),
    })?;
    let schedule = Schedule::LogSpaced { per_decade };
    let bundle = observables(&ts, &schedule, top_m);
    ensure_dir(out).map_err(|e| CliError::runtime("io", e))?;
    write_trajectory(&bundle.trajectory, &out.join("trajectory.csv")).map_err(|e| CliError::runtime("io", e))?;
    let cfg = serde_json::json!({
        "streams": streams,
        "top_m": top_m,
        "casefold": casefold,
        "schedule": schedule,
    });
    manifest_out(out, Manifest::new("ingest", None, cfg), &["trajectory.csv", "trajectory.json"])?;
    print_json(&bundle.stats)
}

fn experiment(args: &ExperimentArgs, kind: ExperimentKind, name: &str) -> Result<()> {
    let mut cfg: ExperimentConfig = parse_json(&args.config)?;
    if let Some(s) = args.seed {
        cfg.master_seed = s;
    }
    if let Some(s) = args.replicates {
        cfg.s = s;
    }
    if let Some(o) = &args.out {
        cfg.output = Some(o.clone());
    }
    cfg.kind = kind;
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let dir = cfg.output.clone().unwrap_or_else(|| PathBuf::from(format!("out/{name}")));
    ensure_dir(&dir).map_err(|e| CliError::runtime("io", e))?;
    let cfg_value = serde_json::to_value(&cfg).map_err(|e| CliError::runtime("json", e))?;
    let manifest = Manifest::new(name, Some(cfg.master_seed), cfg_value);
    let rt = |e: urnflow::harness::HarnessError| CliError::runtime("harness", e);
    match kind {
        ExperimentKind::Coverage => {
            let r = run_coverage(&cfg).map_err(rt)?;
            write_coverage_csv(&r, &dir.join("intervals.csv")).map_err(rt)?;
            write_json(&r, &dir.join("report.json")).map_err(rt)?;
            manifest_out(&dir, manifest, &["intervals.csv", "report.json"])?;
            print_json(&serde_json::json!({
                "coverage": r.coverage,
                "standard_error": r.standard_error,
                "evaluated": r.evaluated,
                "replicates": r.config.s,
                "output": dir,
            }))
        }
        ExperimentKind::SizePower => {
            let r = run_size_power(&cfg).map_err(rt)?;
            write_size_power_csv(&r, &dir.join("rates.csv")).map_err(rt)?;
            write_json(&r, &dir.join("report.json")).map_err(rt)?;
            manifest_out(&dir, manifest, &["rates.csv", "report.json"])?;
            print_json(&r.rows)
        }
        ExperimentKind::CltDiagnostics => {
            let r = run_clt_diagnostics(&cfg).map_err(rt)?;
            write_json(&r, &dir.join("report.json")).map_err(rt)?;
            manifest_out(&dir, manifest, &["report.json"])?;
            print_json(&serde_json::json!({
                "gamma_variance_ratio": r.gamma.variance_ratio,
                "w_variance_ratio": r.w.variance_ratio,
                "gamma_whitened": r.gamma.whitened,
                "w_whitened": r.w.whitened,
                "output": dir,
            }))
        }
        ExperimentKind::Analyze => {
            let r = run_first_order(&cfg).map_err(rt)?;
            write_json(&r, &dir.join("report.json")).map_err(rt)?;
            manifest_out(&dir, manifest, &["report.json"])?;
            print_json(&serde_json::json!({
                "gamma_star": r.gamma_star,
                "median_gamma_hat": r.median_gamma_hat,
                "true_ratios": r.true_ratios,
                "median_ratios": r.median_ratios,
                "output": dir,
            }))
        }
    }
}

fn eigen(path: &Path) -> Result<()> {
    let text = read_text(path)?;
    let report = |m: &nalgebra::DMatrix<f64>| -> Result<serde_json::Value> {
        let eig = eigen_structure(m).map_err(|e| CliError::runtime("spectral", e))?;
        let cd = |mode| c_det(&eig, mode).map(|c| matrix_to_rows(&c)).map_err(|e| e.to_string());
        Ok(serde_json::json!({
            "eigen": eig.report(),
            "gap": eig.gap(),
            "c_det_gamma": cd(Mode::Gamma).unwrap_or_default(),
            "c_det_w": cd(Mode::W).unwrap_or_default(),
        }))
    };
    if let Ok(rows) = serde_json::from_str::<Vec<Vec<f64>>>(&text) {
        let m = rows_to_matrix(rows.len(), &rows, "matrix").map_err(|e| CliError::Usage(e.to_string()))?;
        return print_json(&report(&m)?);
    }
    let spec: ParamSpec = serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let p = spec.build().map_err(|e| CliError::runtime("params", e))?;
    print_json(&serde_json::json!({"gamma": report(p.gamma())?, "w": report(p.w())?}))
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { config, seed, horizon, out, streams } => simulate(&config, seed, horizon, &out, streams),
        Command::Estimate { trajectory, window, method, reference } => estimate(&trajectory, window, method, reference),
        Command::Test { trajectory, hypothesis, at, bonferroni, out } => test(&trajectory, &hypothesis, at, bonferroni, out.as_deref()),
        Command::Ci { trajectory, method, eta, w_matrix, alpha, at, out } => {
            ci(&trajectory, method, eta, w_matrix.as_deref(), alpha, at, out.as_deref())
        }
        Command::Ingest { streams, top_m, casefold, per_decade, out } => ingest(&streams, top_m, casefold, per_decade, &out),
        Command::Coverage(a) => experiment(&a, ExperimentKind::Coverage, "coverage"),
        Command::SizePower(a) => experiment(&a, ExperimentKind::SizePower, "size-power"),
        Command::CltDiag(a) => experiment(&a, ExperimentKind::CltDiagnostics, "clt-diag"),
        Command::Analyze(a) => experiment(&a, ExperimentKind::Analyze, "analyze"),
        Command::Eigen { matrix } => eigen(&matrix),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime { kind, message }) => {
            eprintln!("{}", serde_json::json!({"error": kind, "message": message}));
            ExitCode::from(1)
        }
    }
}
