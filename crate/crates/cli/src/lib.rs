//! `aef` command-line driver.

pub mod config;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use aef_core::agents::{rollout_from, run_policy, train, AgentKind, AgentSnapshot, TrainLog};
use aef_core::env::AefEnv;
use aef_core::eval::{
    self, average_insertion_loss, emit_report, line_series, reward_stats, InsertionLossSeries, MetricReport,
};
use aef_core::signal::{generate_synthetic_dataset, save_dataset, SyntheticProfile};
use aef_core::{Error, Result};
use clap::{Args, Parser, Subcommand};

pub use config::{DatasetSource, EvalSettings, RunConfig, SplitConfig};

#[derive(Debug, Parser)]
#[command(name = "aef", version, about = "Active EMI filter tuning toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic EMI dataset file.
    Synth(SynthArgs),
    /// Train one agent per seed.
    Train(RunArgs),
    /// Greedy evaluation of trained snapshots (or the fixed baseline).
    Eval(EvalArgs),
    /// Static capacitance sweep of the environment.
    Sweep(SweepArgs),
    /// Summarize training logs into reward statistics.
    Report(RunArgs),
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    /// Band as `low:high` in Hz.
    #[arg(long, value_parser = parse_band)]
    pub band: (f64, f64),
    #[arg(long)]
    pub lines: usize,
    /// Peak amplitude range as `low:high` in dBuA.
    #[arg(long, value_parser = parse_band, default_value = "20:60")]
    pub amplitude: (f64, f64),
    /// Envelope roll-off in dB per decade.
    #[arg(long, default_value_t = 0.0)]
    pub decay: f64,
    #[arg(long, default_value = "synthetic")]
    pub name: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "synthetic.csv")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Seeds to run, replacing the config list (comma separated or repeated).
    #[arg(long, value_delimiter = ',')]
    pub seed: Vec<u64>,
    #[arg(long)]
    pub agent: Option<AgentKind>,
    /// Output directory, replacing the config's `output_dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Number of seed jobs run concurrently.
    #[arg(long, default_value_t = 1)]
    pub parallel_seeds: usize,
    /// Print the resolved config as JSON and exit.
    #[arg(long)]
    pub dump_config: bool,
}

impl Default for RunArgs {
    fn default() -> Self {
        Self {
            config: None,
            seed: Vec::new(),
            agent: None,
            out: None,
            parallel_seeds: 1,
            dump_config: false,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Snapshot file; defaults to each seed's training output.
    #[arg(long)]
    pub snapshot: Option<PathBuf>,
    /// Evaluation dataset file, replacing the config's.
    #[arg(long, requires = "band")]
    pub dataset: Option<PathBuf>,
    /// Band of `--dataset` as `low:high` in Hz.
    #[arg(long, value_parser = parse_band)]
    pub band: Option<(f64, f64)>,
    /// Evaluate the fixed baseline capacitance instead of a policy.
    #[arg(long)]
    pub no_rl: bool,
    #[arg(long)]
    pub episodes: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Number of log-spaced capacitances.
    #[arg(long, default_value_t = 128)]
    pub steps: usize,
}

fn parse_band(s: &str) -> std::result::Result<(f64, f64), String> {
    let (a, b) = s
        .split_once(':')
        .ok_or_else(|| format!("expected `low:high`, got `{s}`"))?;
    let lo: f64 = a.trim().parse().map_err(|_| format!("bad number `{a}`"))?;
    let hi: f64 = b.trim().parse().map_err(|_| format!("bad number `{b}`"))?;
    Ok((lo, hi))
}

/// Process exit code for an error.
pub fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Divergence(_) => 3,
        Error::Dimension { .. } => 4,
        Error::Io { .. } => 5,
        Error::Lifecycle(_) | Error::Singularity(_) => 1,
        _ => 2,
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => cmd_synth(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Sweep(a) => cmd_sweep(&a),
        Command::Report(a) => cmd_report(&a),
    }
}

/// Resolved config plus the directory relative dataset paths are read from.
struct Resolved {
    config: RunConfig,
    base: PathBuf,
}

fn resolve(args: &RunArgs, required: bool) -> Result<Resolved> {
    let (mut config, base) = match &args.config {
        Some(p) => (
            RunConfig::load(p)?,
            p.parent().map(Path::to_path_buf).unwrap_or_default(),
        ),
        None if required && !args.dump_config => return Err(Error::Config("--config is required".into())),
        None => (RunConfig::example(), PathBuf::new()),
    };
    if !args.seed.is_empty() {
        config.seeds = args.seed.clone();
    }
    if let Some(k) = args.agent {
        config.agent = k;
    }
    if let Some(o) = &args.out {
        config.output_dir = o.clone();
    }
    if args.parallel_seeds == 0 {
        return Err(Error::Config("--parallel-seeds must be >= 1".into()));
    }
    config.validate()?;
    Ok(Resolved { config, base })
}

fn write(path: &Path, body: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, body).map_err(|e| Error::io(path, e))
}

/// Run `job` for every seed, at most `parallel` at a time; results keep seed order.
fn for_seeds<T: Send>(seeds: &[u64], parallel: usize, job: impl Fn(u64) -> Result<T> + Sync) -> Vec<Result<T>> {
    let mut out = Vec::with_capacity(seeds.len());
    for chunk in seeds.chunks(parallel.max(1)) {
        if chunk.len() == 1 {
            out.push(job(chunk[0]));
            continue;
        }
        std::thread::scope(|scope| {
            let handles: Vec<_> = chunk
                .iter()
                .map(|&s| {
                    let job = &job;
                    scope.spawn(move || job(s))
                })
                .collect();
            out.extend(handles.into_iter().map(|h| h.join().expect("seed job panicked")));
        });
    }
    out
}

/// First error among per-seed results, preferring divergence so its exit code wins.
fn first_error<T>(results: Vec<Result<T>>) -> Result<Vec<T>> {
    let mut ok = Vec::new();
    let mut err: Option<Error> = None;
    for r in results {
        match r {
            Ok(v) => ok.push(v),
            Err(e) => {
                let replace = match &err {
                    None => true,
                    Some(prev) => !matches!(prev, Error::Divergence(_)) && matches!(e, Error::Divergence(_)),
                };
                if replace {
                    err = Some(e);
                }
            }
        }
    }
    err.map_or(Ok(ok), Err)
}

pub fn seed_dir(output_dir: &Path, agent: AgentKind, seed: u64) -> PathBuf {
    output_dir.join(agent.name()).join(format!("seed_{seed}"))
}

pub fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let profile = SyntheticProfile {
        name: a.name.clone(),
        amplitude_range_dbua: a.amplitude,
        harmonic_decay: a.decay,
        ..SyntheticProfile::new(a.band.0, a.band.1, a.lines)
    };
    let ds = generate_synthetic_dataset(&profile, a.seed)?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    save_dataset(&ds, &a.out)?;
    println!(
        "wrote {} lines in [{}, {}] Hz to {}",
        ds.len(),
        ds.band_low,
        ds.band_high,
        a.out.display()
    );
    Ok(())
}

pub fn cmd_train(a: &RunArgs) -> Result<()> {
    let r = resolve(a, true)?;
    if a.dump_config {
        print!("{}", r.config.to_json()?);
        return Ok(());
    }
    let cfg = &r.config;
    let env_cfg = cfg.env_config(cfg.datasets(&r.base)?.train);
    let agent_dir = cfg.output_dir.join(cfg.agent.name());
    write(&agent_dir.join("config.json"), &cfg.to_json()?)?;

    let results = for_seeds(&cfg.seeds, a.parallel_seeds, |seed| {
        log::info!("training {} seed {seed} for {} episodes", cfg.agent, cfg.hyper.episodes);
        let run = train(cfg.agent, &env_cfg, &cfg.hyper, seed)?;
        let dir = seed_dir(&cfg.output_dir, cfg.agent, seed);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        run.log.write(&dir)?;
        write(&dir.join("trainlog.json"), &serde_json::to_string(&run.log)?)?;
        if let Some(msg) = run.diverged {
            return Err(Error::Divergence(format!(
                "seed {seed}: {msg} (partial logs in {})",
                dir.display()
            )));
        }
        run.snapshot.save(dir.join("snapshot.json"))?;
        let stats = reward_stats(std::slice::from_ref(&run.log))?;
        println!(
            "{} seed {seed}: cumulative reward {stats}, {:.3} s/episode",
            cfg.agent, stats.runtime_per_episode_s
        );
        Ok(run.log)
    });
    let logs = first_error(results)?;
    let stats = reward_stats(&logs)?;
    println!("{} over {} seeds: {stats}", cfg.agent, logs.len());
    Ok(())
}

/// Metrics of one evaluated seed.
#[derive(Debug, Clone)]
pub struct SeedEvaluation {
    pub seed: u64,
    pub report: MetricReport,
    pub series: Vec<InsertionLossSeries>,
    pub log: Option<TrainLog>,
}

/// Insertion-loss series and low-frequency average for a set of final capacitances.
pub fn capacitance_metrics(cfg: &RunConfig, env: &AefEnv, finals: &[f64]) -> Result<(Vec<InsertionLossSeries>, f64)> {
    let model = cfg.model();
    let ds = &env.config().dataset;
    let series = finals
        .iter()
        .map(|&c| line_series(&model, ds, c, cfg.limit_dbua()))
        .collect::<Result<Vec<_>>>()?;
    let mut il = 0.0;
    for &c in finals {
        il += average_insertion_loss(&model, c, env.grid(), ds.band_low, cfg.eval.low_freq_high)?;
    }
    Ok((series, il / finals.len() as f64))
}

/// Greedy evaluation of `snapshot` (or the baseline when `None`) on the config's evaluation dataset.
pub fn evaluate_seed(
    cfg: &RunConfig,
    env_cfg: &aef_core::env::EnvConfig,
    snapshot: Option<&AgentSnapshot>,
    episodes: usize,
    seed: u64,
) -> Result<SeedEvaluation> {
    let env = AefEnv::new(env_cfg.clone())?;
    let (log, finals) = match snapshot {
        None => (None, vec![cfg.eval.baseline_c]),
        Some(snap) => {
            let log = match cfg.eval.start_c {
                Some(c0) => {
                    let (rec, steps) = rollout_from(snap, env_cfg, c0)?;
                    let mut log = TrainLog::new(snap.kind, seed);
                    log.episodes.push(rec);
                    log.steps = steps;
                    log
                }
                None => run_policy(snap, env_cfg, episodes, seed)?,
            };
            let finals = log.episodes.iter().map(|e| e.final_c).collect();
            (Some(log), finals)
        }
    };
    let (series, avg_il) = capacitance_metrics(cfg, &env, &finals)?;
    let (mean, std, runtime, rewards) = match &log {
        Some(l) => {
            let s = reward_stats(std::slice::from_ref(l))?;
            (s.mean, s.std, s.runtime_per_episode_s, l.cum_rewards())
        }
        None => (0.0, 0.0, 0.0, Vec::new()),
    };
    let report = MetricReport {
        dataset: env_cfg.dataset.name.clone(),
        rmse_db: eval::rmse(&series)?,
        avg_low_freq_il_db: avg_il,
        cum_reward_mean: mean,
        cum_reward_std: std,
        runtime_per_episode_s: runtime,
        episode_rewards: rewards,
    };
    Ok(SeedEvaluation {
        seed,
        report,
        series,
        log,
    })
}

pub fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let mut r = resolve(&a.run, true)?;
    if let (Some(path), Some((lo, hi))) = (&a.dataset, a.band) {
        let cwd = std::env::current_dir().map_err(|e| Error::io(".", e))?;
        r.config.eval.dataset = Some(DatasetSource {
            path: Some(cwd.join(path)),
            band: Some([lo, hi]),
            ..DatasetSource::default()
        });
        r.config.validate()?;
    }
    if let Some(n) = a.episodes {
        r.config.eval.episodes = n;
        r.config.validate()?;
    }
    if a.run.dump_config {
        print!("{}", r.config.to_json()?);
        return Ok(());
    }
    let cfg = &r.config;
    let env_cfg = cfg.env_config(cfg.datasets(&r.base)?.eval);
    let label = if a.no_rl {
        "baseline".to_string()
    } else {
        cfg.agent.name().to_string()
    };
    let results = for_seeds(&cfg.seeds, a.run.parallel_seeds, |seed| {
        let snapshot = if a.no_rl {
            None
        } else {
            let path = match &a.snapshot {
                Some(p) => p.clone(),
                None => seed_dir(&cfg.output_dir, cfg.agent, seed).join("snapshot.json"),
            };
            Some(AgentSnapshot::load(&path)?)
        };
        let ev = evaluate_seed(cfg, &env_cfg, snapshot.as_ref(), cfg.eval.episodes, seed)?;
        let dir = cfg.output_dir.join(&label).join("eval").join(format!("seed_{seed}"));
        emit_report(&ev.report, &ev.series, &dir)?;
        if let Some(log) = &ev.log {
            log.write(&dir)?;
        }
        println!(
            "{label} seed {seed} on {}: rmse {:.3} dB, low-frequency IL {:.2} dB, reward {:.2} ± {:.2}",
            ev.report.dataset,
            ev.report.rmse_db,
            ev.report.avg_low_freq_il_db,
            ev.report.cum_reward_mean,
            ev.report.cum_reward_std
        );
        Ok(ev)
    });
    first_error(results).map(|_| ())
}

/// One row of a capacitance sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub c: f64,
    pub emi_dbua: f64,
    pub avg_il_db: f64,
}

/// Static evaluation at `steps` log-spaced capacitances over the env's range.
pub fn sweep(cfg: &RunConfig, env: &AefEnv, steps: usize) -> Result<Vec<SweepRow>> {
    if steps < 2 {
        return Err(Error::Config(format!("sweep needs at least 2 steps, got {steps}")));
    }
    let p = env.params();
    let grid = aef_core::circuit::FrequencyGrid::log_spaced(p.c_min, p.c_max, steps)?;
    let ds = &env.config().dataset;
    grid.points()
        .iter()
        .map(|&c| {
            Ok(SweepRow {
                c,
                emi_dbua: env.evaluate(c)?.emi_scalar,
                avg_il_db: average_insertion_loss(&cfg.model(), c, env.grid(), ds.band_low, cfg.eval.low_freq_high)?,
            })
        })
        .collect()
}

/// Row with the lowest scalar EMI (first on ties).
pub fn sweep_argmin(rows: &[SweepRow]) -> Option<SweepRow> {
    rows.iter()
        .copied()
        .reduce(|best, r| if r.emi_dbua < best.emi_dbua { r } else { best })
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("c_farads,emi_dbua,avg_il_db\n");
    for r in rows {
        let _ = writeln!(s, "{:?},{:?},{:?}", r.c, r.emi_dbua, r.avg_il_db);
    }
    s
}

pub fn cmd_sweep(a: &SweepArgs) -> Result<()> {
    let r = resolve(&a.run, true)?;
    if a.run.dump_config {
        print!("{}", r.config.to_json()?);
        return Ok(());
    }
    let cfg = &r.config;
    let env = AefEnv::new(cfg.env_config(cfg.datasets(&r.base)?.train))?;
    let rows = sweep(cfg, &env, a.steps)?;
    let csv = sweep_csv(&rows);
    match &a.run.out {
        Some(path) => {
            write(path, &csv)?;
            if let Some(best) = sweep_argmin(&rows) {
                println!(
                    "argmin {:e} F at {:.3} dBuA; wrote {}",
                    best.c,
                    best.emi_dbua,
                    path.display()
                );
            }
        }
        None => print!("{csv}"),
    }
    Ok(())
}

pub fn cmd_report(a: &RunArgs) -> Result<()> {
    let r = resolve(a, false)?;
    if a.dump_config {
        print!("{}", r.config.to_json()?);
        return Ok(());
    }
    let root = &r.config.output_dir;
    let mut csv = String::from("agent,cum_reward_mean,cum_reward_std,runtime_per_episode_s,episodes,seeds\n");
    let kinds: Vec<AgentKind> = match a.agent {
        Some(k) => vec![k],
        None => AgentKind::ALL.to_vec(),
    };
    let mut found = 0;
    for kind in kinds {
        let dir = root.join(kind.name());
        let Ok(entries) = std::fs::read_dir(&dir) else { continue };
        let mut paths: Vec<PathBuf> = entries
            .filter_map(|e| e.ok().map(|e| e.path().join("trainlog.json")))
            .filter(|p| p.is_file())
            .collect();
        paths.sort();
        if paths.is_empty() {
            continue;
        }
        let logs = paths
            .iter()
            .map(|p| {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                Ok(serde_json::from_str::<TrainLog>(&text)?)
            })
            .collect::<Result<Vec<_>>>()?;
        let s = reward_stats(&logs)?;
        println!(
            "{:<14} {:>24}   {:.3} s/episode",
            kind.name(),
            s.to_string(),
            s.runtime_per_episode_s
        );
        let _ = writeln!(
            csv,
            "{},{:?},{:?},{:?},{},{}",
            kind.name(),
            s.mean,
            s.std,
            s.runtime_per_episode_s,
            s.episodes,
            logs.len()
        );
        found += 1;
    }
    if found == 0 {
        return Err(Error::io(
            root,
            std::io::Error::new(std::io::ErrorKind::NotFound, "no training logs found"),
        ));
    }
    write(&root.join("summary.csv"), &csv)
}
