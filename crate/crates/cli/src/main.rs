//! `calm`: generate datasets, cluster demonstrations, roll out and evaluate
//! the controller, or serve a live session.
//!
//! Exit codes: 0 success, 1 validation error, 2 runtime error.

mod config;

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use calm_core::alignment::{BackwardsReading, KernelFamily};
use calm_core::sim::{load_perturbations, RolloutConfig};
use calm_core::trajectory::{generate_dataset, io, DatasetKind, GeneratorParams};
use calm_core::{
    evaluate, fit, rollout, CalmError, ClusterConfig, ClusterCount, ClusterModel, ControllerConfig, KernelConfig,
};
use calm_service::{ServiceConfig, SessionConfig};
use clap::{Args, Parser, Subcommand};

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub msg: String,
}

impl CliError {
    pub fn validation(msg: impl Into<String>) -> Self {
        Self {
            code: 1,
            msg: msg.into(),
        }
    }

    pub fn runtime(msg: impl Into<String>) -> Self {
        Self {
            code: 2,
            msg: msg.into(),
        }
    }

    /// Attributes a library error to the flag whose input caused it.
    fn from_calm(flag: &str, e: CalmError) -> Self {
        let runtime = matches!(e, CalmError::Io { .. } | CalmError::DegeneratePoint);
        let msg = match &e {
            CalmError::InvalidArgument { field, reason } if flag.is_empty() => {
                format!("--{}: {reason}", field.replace('_', "-"))
            }
            _ if flag.is_empty() => e.to_string(),
            _ => format!("{flag}: {e}"),
        };
        Self {
            code: if runtime { 2 } else { 1 },
            msg,
        }
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "calm",
    version,
    about = "Cluster-aligned motion generation from demonstrations"
)]
struct Cli {
    /// Key-value file of flag defaults (`seed = 3`); command-line flags win.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic demonstration dataset.
    Gen(GenArgs),
    /// Cluster demonstrations into mean trajectories.
    Cluster(ClusterArgs),
    /// Roll the controller out from a start position and write a CSV trace.
    Rollout(RolloutArgs),
    /// Roll out from every demo start and report DTWD and terminal clusters.
    Eval(EvalArgs),
    /// Serve a live rollout over WebSocket.
    Serve(ServeArgs),
}

fn parse_kernel(s: &str) -> Result<KernelFamily, String> {
    s.parse().map_err(|e: CalmError| match e {
        CalmError::InvalidArgument { reason, .. } => reason,
        other => other.to_string(),
    })
}

fn parse_kind(s: &str) -> Result<DatasetKind, String> {
    s.parse().map_err(|e: CalmError| match e {
        CalmError::InvalidArgument { reason, .. } => format!("{reason} (expected overlap|multi_motion|snake|loop)"),
        other => other.to_string(),
    })
}

fn parse_reading(s: &str) -> Result<BackwardsReading, String> {
    match s {
        "forward_band" => Ok(BackwardsReading::ForwardBand),
        "literal" => Ok(BackwardsReading::Literal),
        _ => Err(format!("unknown reading `{s}` (expected forward_band|literal)")),
    }
}

#[derive(Args, Debug)]
#[command(allow_negative_numbers = true)]
struct GenArgs {
    #[arg(long, value_parser = parse_kind)]
    kind: DatasetKind,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    n_states: Option<usize>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    noise_std: Option<f64>,
    #[arg(long)]
    deform_amp: Option<f64>,
    #[arg(long)]
    time_warp: Option<f64>,
    #[arg(long)]
    end_speed_ratio: Option<f64>,
    #[arg(long)]
    demos_per_cluster: Option<usize>,
}

#[derive(Args, Debug)]
#[group(skip)]
#[command(allow_negative_numbers = true)]
#[command(group = clap::ArgGroup::new("count").required(true).multiple(false).args(["k", "auto"]))]
struct ClusterArgs {
    #[arg(long)]
    input: PathBuf,
    /// Fixed number of clusters.
    #[arg(long)]
    k: Option<usize>,
    /// Choose the number of clusters with the elbow rule.
    #[arg(long)]
    auto: bool,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    n_states: Option<usize>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    k_max: Option<usize>,
    #[arg(long)]
    elbow_threshold: Option<f64>,
    #[arg(long)]
    min_emission_var: Option<f64>,
}

#[derive(Args, Debug, Clone)]
#[command(allow_negative_numbers = true)]
struct ControlArgs {
    #[arg(long, default_value = "stable", value_parser = parse_kernel)]
    kernel: KernelFamily,
    /// Kernel RBF width over state indices (default `(2 delta)^2`).
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long, value_parser = parse_reading)]
    backwards_reading: Option<BackwardsReading>,
    #[arg(long)]
    kv_perturbed: Option<f64>,
    #[arg(long)]
    blend_sigma: Option<f64>,
    #[arg(long)]
    control_dt: Option<f64>,
    #[arg(long)]
    grad_floor: Option<f64>,
    #[arg(long)]
    hysteresis: Option<f64>,
    #[arg(long)]
    max_ticks: Option<usize>,
    #[arg(long)]
    tol_factor: Option<f64>,
    #[arg(long)]
    final_mass: Option<f64>,
}

impl ControlArgs {
    fn build(&self, model: &ClusterModel) -> Result<(KernelConfig, ControllerConfig, RolloutConfig), CliError> {
        let mut kernels = KernelConfig::new(self.kernel);
        kernels.sigma = self.sigma;
        if let Some(e) = self.epsilon {
            kernels.epsilon = e;
        }
        if let Some(r) = self.backwards_reading {
            kernels.backwards_reading = r;
        }
        let mut cfg = ControllerConfig::for_model(model);
        let set = |slot: &mut f64, v: Option<f64>| {
            if let Some(v) = v {
                *slot = v;
            }
        };
        set(&mut cfg.kv_perturbed, self.kv_perturbed);
        set(&mut cfg.blend_sigma, self.blend_sigma);
        set(&mut cfg.control_dt, self.control_dt);
        set(&mut cfg.grad_floor, self.grad_floor);
        set(&mut cfg.hysteresis, self.hysteresis);
        cfg.validate().map_err(|e| CliError::from_calm("", e))?;
        for m in &model.means {
            kernels
                .for_mean(m, cfg.control_dt)
                .validate()
                .map_err(|e| CliError::from_calm("", e))?;
        }
        let mut rcfg = RolloutConfig {
            max_ticks: self.max_ticks,
            ..Default::default()
        };
        set(&mut rcfg.tol_factor, self.tol_factor);
        set(&mut rcfg.final_mass, self.final_mass);
        if self.max_ticks == Some(0) {
            return Err(CliError::validation("--max-ticks: must be > 0"));
        }
        Ok((kernels, cfg, rcfg))
    }
}

#[derive(Args, Debug)]
struct RolloutArgs {
    #[arg(long)]
    model: PathBuf,
    /// Comma-separated start coordinates, e.g. "0.5,-1".
    #[arg(long, allow_hyphen_values = true)]
    start: String,
    #[command(flatten)]
    control: ControlArgs,
    /// Perturbation script (JSON list of `{tick, mode, vector}`).
    #[arg(long)]
    perturb: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[command(flatten)]
    control: ControlArgs,
    #[arg(long)]
    report: PathBuf,
}

#[derive(Args, Debug)]
struct ServeArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value_t = 50)]
    tick_ms: u64,
    /// Session start; defaults to the first state of the first mean.
    #[arg(long, allow_hyphen_values = true)]
    start: Option<String>,
    /// Begin stepping without waiting for a client `start`.
    #[arg(long)]
    autostart: bool,
    /// Downsample broadcast posteriors to at most this many cells.
    #[arg(long)]
    posterior_cells: Option<usize>,
    #[command(flatten)]
    control: ControlArgs,
}

fn parse_point(flag: &str, text: &str, dim: usize) -> Result<Vec<f64>, CliError> {
    let coords: Vec<f64> = text
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::validation(format!("{flag}: cannot parse `{text}`: {e}")))?;
    if coords.len() != dim {
        return Err(CliError::validation(format!(
            "{flag}: expected {dim} comma-separated coordinates, got {}",
            coords.len()
        )));
    }
    if coords.iter().any(|v| !v.is_finite()) {
        return Err(CliError::validation(format!("{flag}: coordinates must be finite")));
    }
    Ok(coords)
}

fn create(flag: &str, path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::runtime(format!("{flag}: cannot write {}: {e}", path.display())))
}

fn write_text(flag: &str, path: &Path, text: &str) -> Result<(), CliError> {
    let mut w = create(flag, path)?;
    w.write_all(text.as_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| CliError::runtime(format!("{flag}: cannot write {}: {e}", path.display())))
}

fn load_model(path: &Path) -> Result<ClusterModel, CliError> {
    io::load_model(path).map_err(|e| CliError::from_calm("--model", e))
}

fn gen(a: GenArgs) -> Result<(), CliError> {
    let mut p = GeneratorParams::default();
    if let Some(v) = a.n_states {
        p.n_states = v;
    }
    if let Some(v) = a.dt {
        p.dt = v;
    }
    if let Some(v) = a.noise_std {
        p.noise_std = v;
    }
    if let Some(v) = a.deform_amp {
        p.deform_amp = v;
    }
    if let Some(v) = a.time_warp {
        p.time_warp = v;
    }
    if let Some(v) = a.end_speed_ratio {
        p.end_speed_ratio = v;
    }
    p.demos_per_cluster = a.demos_per_cluster;
    let ds = generate_dataset(a.kind, a.seed, &p).map_err(|e| CliError::from_calm("", e))?;
    let json = io::dataset_to_json(&ds).map_err(|e| CliError::from_calm("--out", e))?;
    write_text("--out", &a.out, &json)?;
    println!("wrote {} demos of {} to {}", ds.demos.len(), ds.name, a.out.display());
    Ok(())
}

fn cluster(a: ClusterArgs) -> Result<(), CliError> {
    let ds = io::load_dataset(&a.input).map_err(|e| CliError::from_calm("--input", e))?;
    let mut cfg = ClusterConfig {
        n_states: a.n_states,
        temperature: a.temperature,
        ..Default::default()
    };
    if let Some(v) = a.tol {
        cfg.tol = v;
    }
    if let Some(v) = a.max_iters {
        cfg.max_iters = v;
    }
    if let Some(v) = a.k_max {
        cfg.k_max = v;
    }
    if let Some(v) = a.elbow_threshold {
        cfg.elbow_threshold = v;
    }
    if let Some(v) = a.min_emission_var {
        cfg.min_emission_var = v;
    }
    let count = match a.k {
        Some(k) => ClusterCount::Fixed(k),
        None => ClusterCount::Auto,
    };
    let model = fit(&ds, count, &cfg).map_err(|e| CliError::from_calm("", e))?;
    write_text("--out", &a.out, &io::model_to_json(&model))?;
    println!(
        "fitted {} clusters in {} iterations, objective {:.6}",
        model.k(),
        model.meta.iterations,
        model.objective_trace().last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

fn run_rollout(a: RolloutArgs) -> Result<(), CliError> {
    let model = load_model(&a.model)?;
    let start = parse_point("--start", &a.start, model.dim())?;
    let (kernels, cfg, rcfg) = a.control.build(&model)?;
    let events = match &a.perturb {
        Some(p) => load_perturbations(p).map_err(|e| CliError::from_calm("--perturb", e))?,
        None => Vec::new(),
    };
    let r = rollout(&model, &start, &kernels, &cfg, &rcfg, &events).map_err(|e| match e {
        CalmError::Schema { .. } => CliError::from_calm("--perturb", e),
        e => CliError::from_calm("", e),
    })?;
    let mut w = create("--out", &a.out)?;
    io::write_rollout_csv(&r, &mut w)
        .and_then(|_| w.flush())
        .map_err(|e| CliError::runtime(format!("--out: cannot write {}: {e}", a.out.display())))?;
    let terminal = r.terminal_cluster.map_or("none".to_string(), |c| c.to_string());
    println!(
        "ticks {} converged {} terminal_cluster {terminal}",
        r.ticks(),
        r.converged
    );
    Ok(())
}

fn eval(a: EvalArgs) -> Result<(), CliError> {
    let model = load_model(&a.model)?;
    let ds = io::load_dataset(&a.input).map_err(|e| CliError::from_calm("--input", e))?;
    let (kernels, cfg, rcfg) = a.control.build(&model)?;
    let report = evaluate(&model, &ds, &kernels, &cfg, &rcfg).map_err(|e| match e {
        CalmError::DimensionMismatch { .. } => CliError::from_calm("--input", e),
        e => CliError::from_calm("", e),
    })?;
    write_text("--report", &a.report, &report.to_json())?;
    match (report.correct, report.labelled) {
        (Some(c), Some(n)) => println!("terminal-cluster accuracy {c}/{n}"),
        _ => println!("no ground-truth labels"),
    }
    if let Some(d) = report.mean_dtwd {
        println!("mean DTWD {d:.4}");
    }
    Ok(())
}

fn serve(a: ServeArgs) -> Result<(), CliError> {
    let model = load_model(&a.model)?;
    let (kernels, cfg, rcfg) = a.control.build(&model)?;
    let start = a
        .start
        .as_deref()
        .map(|s| parse_point("--start", s, model.dim()))
        .transpose()?;
    if a.tick_ms == 0 {
        return Err(CliError::validation("--tick-ms: must be > 0"));
    }
    let addr: SocketAddr = format!("{}:{}", a.host, a.port)
        .parse()
        .map_err(|e| CliError::validation(format!("--host: {e}")))?;
    let service = ServiceConfig {
        tick_ms: a.tick_ms,
        session: SessionConfig {
            kernels,
            controller: Some(cfg),
            rollout: rcfg,
            start,
            posterior_cells: a.posterior_cells,
            autostart: a.autostart,
        },
    };
    let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::runtime(format!("runtime: {e}")))?;
    rt.block_on(async move {
        let server = calm_service::spawn(model, service, addr)
            .await
            .map_err(|e| CliError::runtime(format!("serve: {e}")))?;
        println!("serving on http://{} (WebSocket at /ws)", server.addr);
        server
            .wait()
            .await
            .map_err(|e| CliError::runtime(format!("serve: {e}")))
    })
}

fn run(args: Vec<OsString>) -> Result<(), CliError> {
    let args = config::overlay(args)?;
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return if code == 0 {
                Ok(())
            } else {
                Err(CliError {
                    code,
                    msg: String::new(),
                })
            };
        }
    };
    log::debug!("{cli:?}");
    match cli.command {
        Command::Gen(a) => gen(a),
        Command::Cluster(a) => cluster(a),
        Command::Rollout(a) => run_rollout(a),
        Command::Eval(a) => eval(a),
        Command::Serve(a) => serve(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CALM_LOG", "warn")).init();
    match run(std::env::args_os().collect()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if !e.msg.is_empty() {
                eprintln!("error: {}", e.msg);
            }
            ExitCode::from(e.code)
        }
    }
}
