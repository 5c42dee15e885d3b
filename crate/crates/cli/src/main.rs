use std::fs;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use abluf_core::harness::{meta_path, read_episode_csv, read_episode_log, summarize, write_episode_log, EpisodeLogMeta};
use abluf_core::{replay, run_episode, run_grid, EpisodeConfig, ExperimentGrid, LearnerKind, LearnerSettings};
use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use serde_json::json;

#[derive(Parser)]
#[command(name = "lab", version, about = "Experiments with learners trained by uncertain feedback")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment grid and write episodes.csv and summary.csv.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        #[arg(long, default_value_t = 0)]
        master_seed: u64,
    },
    /// Run a single episode, print its result and optionally write its record log.
    Episode {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Feed a record log back through its learner and print every step's policy and sigma.
    Replay {
        #[arg(long)]
        log: PathBuf,
        /// Learner as JSON, e.g. '{"kind":"abluf"}'; defaults to the log's metadata.
        #[arg(long)]
        learner: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        n_states: Option<usize>,
        #[arg(long)]
        n_actions: Option<usize>,
    },
    /// Recompute the per-cell summary of a results directory and print it as CSV.
    Summarize { dir: PathBuf },
    /// Serve interactive training sessions over HTTP.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        /// Directory for the logs of finished sessions.
        #[arg(long, default_value = "episodes")]
        log_dir: PathBuf,
    },
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn cmd_run(config: &Path, out: &Path, workers: usize, master_seed: u64) -> Result<()> {
    let grid: ExperimentGrid = read_json(config)?;
    let output = run_grid(&grid, master_seed, workers)?;
    output.write(out)?;
    let mut stdout = std::io::stdout().lock();
    for row in output.summary.iter().filter(|r| r.metric == "policy_gap") {
        writeln!(
            stdout,
            "cell {:>3}  {:<8} {:<16} {:<16} gap {:.4} ± {:.4} (n={})",
            row.cell_id,
            row.scenario,
            row.learner,
            row.trainer,
            row.mean.unwrap_or(f64::NAN),
            row.std.unwrap_or(f64::NAN),
            row.count
        )?;
    }
    writeln!(stdout, "wrote {} episodes to {}", output.episodes.len(), out.display())?;
    Ok(())
}

fn cmd_episode(config: &Path, seed: Option<u64>, log: Option<&Path>) -> Result<()> {
    let cfg: EpisodeConfig = read_json(config)?;
    let Some(seed) = seed.or(cfg.seed) else {
        bail!("no seed: pass --seed or set \"seed\" in the config");
    };
    let result = run_episode(&cfg, seed)?;
    if let Some(log) = log {
        let meta = EpisodeLogMeta {
            scenario: cfg.scenario.clone(),
            learner: cfg.learner,
            settings: cfg.settings,
            seed,
            optimal_policy: Some(result.world.optimal_policy.clone()),
        };
        write_episode_log(log, &result.records(), &meta)?;
    }
    println!("{}", serde_json::to_string(&result)?);
    Ok(())
}

fn cmd_replay(
    log: &Path,
    learner: Option<&str>,
    seed: Option<u64>,
    n_states: Option<usize>,
    n_actions: Option<usize>,
) -> Result<()> {
    let (records, meta) = read_episode_log(log)?;
    let learner: LearnerKind = match (learner, &meta) {
        (Some(text), _) => serde_json::from_str(text).context("parsing --learner")?,
        (None, Some(m)) => m.learner,
        (None, None) => bail!("{} not found; pass --learner", meta_path(log).display()),
    };
    let seed = seed.or(meta.as_ref().map(|m| m.seed)).context("no seed: pass --seed")?;
    let n_states = n_states
        .or(meta.as_ref().map(|m| m.scenario.n_states))
        .context("pass --n-states")?;
    let n_actions = n_actions
        .or(meta.as_ref().map(|m| m.scenario.n_actions))
        .context("pass --n-actions")?;
    let settings = meta.as_ref().map_or_else(LearnerSettings::default, |m| m.settings);

    let outcome = replay(&records, learner, n_states, n_actions, settings, seed)?;
    let mut stdout = std::io::stdout().lock();
    for (i, (rec, policy)) in records.iter().zip(&outcome.policies).enumerate() {
        let sigma = outcome.sigma_trace.as_ref().map(|t| t[i + 1]);
        let line = json!({"t": rec.t, "s": rec.s, "a": rec.a, "f": rec.f, "policy": policy, "sigma": sigma});
        writeln!(stdout, "{line}")?;
    }
    if let Some(opt) = meta.and_then(|m| m.optimal_policy) {
        let gap = abluf_core::harness::policy_gap(&outcome.final_policy, &opt)?;
        writeln!(stdout, "{}", json!({"final_policy": outcome.final_policy, "policy_gap": gap}))?;
    }
    Ok(())
}

fn cmd_summarize(dir: &Path) -> Result<()> {
    let rows = read_episode_csv(&dir.join("episodes.csv"))?;
    let mut w = csv::Writer::from_writer(std::io::stdout().lock());
    for row in summarize(&rows) {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_serve(addr: SocketAddr, log_dir: PathBuf) -> Result<()> {
    fs::create_dir_all(&log_dir).with_context(|| format!("creating {}", log_dir.display()))?;
    let app = abluf_service::router(abluf_service::AppState::new(Some(log_dir)));
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(addr).await?;
        tracing::info!("listening on {addr}");
        axum::serve(listener, app).await?;
        Ok(())
    })
}

fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .with_writer(std::io::stderr)
        .init();
    match Cli::parse().command {
        Command::Run {
            config,
            out,
            workers,
            master_seed,
        } => cmd_run(&config, &out, workers, master_seed),
        Command::Episode { config, seed, log } => cmd_episode(&config, seed, log.as_deref()),
        Command::Replay {
            log,
            learner,
            seed,
            n_states,
            n_actions,
        } => cmd_replay(&log, learner.as_deref(), seed, n_states, n_actions),
        Command::Summarize { dir } => cmd_summarize(&dir),
        Command::Serve { addr, log_dir } => cmd_serve(addr, log_dir),
    }
}
