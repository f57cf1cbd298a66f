use std::fs::File;
use std::io::{BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use dynscreen::config::{Overrides, ScreeningConfig};
use dynscreen::report::{emit_report, read_report};
use dynscreen::runner::{nominal_distribution, run_screening, with_workers};
use dynscreen::server::{serve, AppState, ReportState};
use dynscreen_core::dynamics::{assemble_state_space, DynamicsEngine, NoisePath, Propagator, snap_steps, horizon_steps};
use dynscreen_core::grid::to_grid_json;
use dynscreen_core::overload::{overload_result, SusceptanceSchedule};
use dynscreen_core::rare_event::{
    cross_entropy_estimate, monte_carlo_estimate, EngineEvaluator, StreamSeed, Target,
};

#[derive(Parser)]
#[command(name = "dynscreen", version, about = "Dynamic N-1 contingency screening")]
struct Cli {
    /// Dump per-iteration cross-entropy proposals into the output.
    #[arg(long, global = true)]
    trace: bool,
    /// Repeat for more log output.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a grid and print it as grid JSON.
    Parse {
        grid: PathBuf,
        /// Config whose case defaults apply to `.m` files.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulate one scenario and write its trajectory.
    Simulate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        branch: usize,
        #[arg(long)]
        tau: f64,
        /// Absolute noise intensity; defaults to noise scale times β.
        #[arg(long)]
        sigma: Option<f64>,
    },
    /// Estimate exceedance probabilities of the total overload.
    Estimate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, value_enum, default_value_t = MethodArg::Both)]
        method: MethodArg,
        /// Monte Carlo sample count (defaults to `samples`).
        #[arg(long)]
        mc_samples: Option<usize>,
        /// Monitored position to target instead of the total.
        #[arg(long)]
        branch: Option<usize>,
    },
    /// Full N-1 sweep producing a risk report.
    Screen {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Serve the JSON API.
    Serve {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Serve an existing report instead of screening at start-up.
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: SocketAddr,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Mc,
    Ce,
    Both,
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML or JSON configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    grid: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    samples_per_branch: Option<usize>,
    #[arg(long)]
    noise_scale: Option<f64>,
    /// Comma-separated thresholds in seconds.
    #[arg(long, value_delimiter = ',')]
    gamma: Option<Vec<f64>>,
    #[arg(long)]
    horizon: Option<f64>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    fault_rate: Option<f64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl ConfigArgs {
    fn resolve(self) -> Result<ScreeningConfig> {
        let mut cfg = match &self.config {
            Some(p) => ScreeningConfig::load(p)?,
            None => ScreeningConfig::default(),
        };
        cfg.apply(Overrides {
            grid: self.grid,
            seed: self.seed,
            workers: self.workers,
            samples: self.samples,
            samples_per_branch: self.samples_per_branch,
            noise_scale: self.noise_scale,
            gammas: self.gamma,
            horizon: self.horizon,
            dt: self.dt,
            fault_rate: self.fault_rate,
            output: self.out,
        });
        cfg.validate()?;
        Ok(cfg)
    }
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match cli.command {
        Command::Parse { grid, config, out } => {
            let mut cfg = match config {
                Some(p) => ScreeningConfig::load(&p)?,
                None => ScreeningConfig::default(),
            };
            cfg.grid = grid;
            let g = cfg.load_grid()?;
            eprintln!(
                "{} buses, {} branches ({} transformers), reference bus {}",
                g.n_buses(),
                g.n_branches(),
                g.branches().iter().filter(|b| b.transformer).count(),
                g.reference()
            );
            write_or_print(out.as_deref(), &to_grid_json(&g))
        }
        Command::Simulate { cfg, branch, tau, sigma } => {
            let cfg = cfg.resolve()?;
            simulate(&cfg, branch, tau, sigma)
        }
        Command::Estimate { cfg, method, mc_samples, branch } => {
            let cfg = cfg.resolve()?;
            estimate(&cfg, method, mc_samples, branch, cli.trace)
        }
        Command::Screen { cfg } => {
            let cfg = cfg.resolve()?;
            let report = run_screening(&cfg, cli.trace)?;
            let dir = cfg.output.directory.clone().unwrap_or_else(|| PathBuf::from("screening-out"));
            emit_report(&report, &dir)?;
            eprintln!(
                "report written to {}: {} emergency, {} with positive overload, CE {} in {} iterations",
                dir.display(),
                report.emergency_branches().len(),
                report.positive_branches().len(),
                if report.cross_entropy.converged { "converged" } else { "did not converge" },
                report.cross_entropy.iterations
            );
            if report.failures.degraded {
                eprintln!("warning: {} of {} evaluations failed", report.failures.failed, report.failures.total);
            }
            Ok(())
        }
        Command::Serve { cfg, report, bind } => {
            let cfg = cfg.resolve()?;
            let grid = cfg.load_grid()?;
            let engine = Arc::new(DynamicsEngine::new(grid, cfg.engine_settings())?);
            let state = Arc::new(AppState::new(engine, cfg.policy.clone(), cfg.noise_scale, cfg.seed));
            match report {
                Some(p) => state.publish(ReportState::Ready(Arc::new(read_report(&p)?))),
                None => {
                    let st = state.clone();
                    let trace = cli.trace;
                    std::thread::spawn(move || {
                        let next = match run_screening(&cfg, trace) {
                            Ok(r) => ReportState::Ready(Arc::new(r)),
                            Err(e) => ReportState::Failed(e.to_string()),
                        };
                        st.publish(next);
                    });
                }
            }
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(serve(state, bind))?;
            Ok(())
        }
    }
}

fn write_or_print(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            let mut out = std::io::stdout().lock();
            match writeln!(out, "{text}") {
                Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
                r => r.context("writing to stdout"),
            }
        }
    }
}

fn simulate(cfg: &ScreeningConfig, branch: usize, tau: f64, sigma: Option<f64>) -> Result<()> {
    let grid = cfg.load_grid()?;
    if branch >= grid.n_branches() {
        bail!("branch {branch} does not exist");
    }
    let sigma = sigma.unwrap_or(cfg.noise_scale * grid.branches()[branch].beta);
    let ss = assemble_state_space(&grid, Some(branch), sigma)?;
    let propagator = Propagator::new(&ss, cfg.dt)?;
    let x0 = ss.nominal_equilibrium().clone();
    let k_tau = snap_steps(tau, cfg.dt, horizon_steps(cfg.horizon, cfg.dt)?);
    let traj = if sigma > 0.0 {
        let path = NoisePath::sample(&mut StreamSeed(cfg.seed).stream(0, 0), cfg.dt, k_tau);
        propagator.stochastic(&x0, &path, tau, cfg.horizon)?
    } else {
        propagator.deterministic(&x0, tau, cfg.horizon)?
    };
    let dir = cfg.output.directory.clone().unwrap_or_else(|| PathBuf::from("simulation-out"));
    std::fs::create_dir_all(&dir)?;
    traj.write_csv(BufWriter::new(File::create(dir.join("trajectory.csv"))?))?;
    traj.write_binary(BufWriter::new(File::create(dir.join("trajectory.bin"))?))?;
    let result = overload_result(&traj, &grid, grid.monitored(), &SusceptanceSchedule::from_trajectory(&traj));
    let summary = serde_json::json!({
        "faulted_branch": branch,
        "tau": tau,
        "sigma": sigma,
        "fault_steps": k_tau,
        "monitored": grid.monitored(),
        "overload": result,
    });
    std::fs::write(dir.join("overload.json"), serde_json::to_string_pretty(&summary)?)?;
    eprintln!("trajectory of {} steps written to {}; total overload {:.2} s", traj.steps(), dir.display(), result.global);
    Ok(())
}

fn estimate(cfg: &ScreeningConfig, method: MethodArg, mc_samples: Option<usize>, branch: Option<usize>, trace: bool) -> Result<()> {
    let grid = cfg.load_grid()?;
    let target = match branch {
        Some(m) if m >= grid.monitored().len() => bail!("monitored position {m} does not exist"),
        Some(m) => Target::Branch(m),
        None => Target::Global,
    };
    let nominal = nominal_distribution(cfg, grid.n_branches());
    let engine = DynamicsEngine::new(grid, cfg.engine_settings())?;
    let ev = EngineEvaluator { engine: &engine, noise_scale: cfg.noise_scale };
    let seed = StreamSeed(cfg.seed);
    let mut params = cfg.ce.clone();
    params.exceedance = cfg.exceedance;
    let results = with_workers(cfg.workers, || -> Result<Vec<serde_json::Value>> {
        let mut out = Vec::new();
        for &gamma in &cfg.gammas {
            if matches!(method, MethodArg::Mc | MethodArg::Both) {
                let n = mc_samples.unwrap_or(cfg.samples);
                let r = monte_carlo_estimate(&ev, &nominal, gamma, n, target, cfg.exceedance, seed)?;
                out.push(serde_json::to_value(&r)?);
            }
            if matches!(method, MethodArg::Ce | MethodArg::Both) {
                let mut r = cross_entropy_estimate(&ev, &nominal, gamma, target, &params, cfg.samples, seed)?;
                if !trace {
                    r.trace.clear();
                }
                out.push(serde_json::to_value(&r)?);
            }
        }
        Ok(out)
    })??;
    let text = serde_json::to_string_pretty(&results)?;
    let out = cfg.output.directory.as_ref().map(|d| d.join("estimates.json"));
    if let Some(p) = &out {
        std::fs::create_dir_all(p.parent().expect("joined path has a parent"))?;
    }
    write_or_print(out.as_deref(), &text)
}
