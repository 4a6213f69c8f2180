//! `flexrl`: data generation, training, evaluation, invariant checks and
//! plots for flexible f-divergence offline RL on gridworlds.
//!
//! Exit codes: 0 success, 1 check or training failure, 2 usage or I/O error.
//! Outputs go under `--out`, else `$FLEXRL_OUT`, else `./flexrl-out`.

mod config;
mod env;
mod plot;
mod results;
mod run;

use std::fmt;
use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use flexrl_core::checks::{run_suite, CheckOptions, Suite};
use flexrl_core::dataset::Mixture;
use flexrl_core::persist::read_metrics;
use flexrl_core::{FlexError, Penalty};

use crate::config::{parse_overrides, read_settings, Settings};
use crate::env::EnvSpec;
use crate::run::{DataRequest, EvalRequest, Layout, TrainRequest};

/// Bad flags, missing files, unreadable input: exit code 2.
#[derive(Debug)]
pub struct Usage(pub String);

/// A failed check or an aborted training run: exit code 1.
#[derive(Debug)]
pub struct Failure(pub String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}
impl std::error::Error for Failure {}

#[derive(Parser)]
#[command(name = "flexrl", version, about = "Flexible f-divergence offline RL on tabular gridworlds")]
struct Cli {
    /// Output root (overrides $FLEXRL_OUT).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize an offline dataset from a behavior mixture.
    GenData(GenDataArgs),
    /// Train one configuration over one or more seeds.
    Train(TrainArgs),
    /// Evaluate a trained checkpoint.
    Eval(EvalArgs),
    /// Run the invariant suites.
    Check(CheckArgs),
    /// Plot a divergence or the alpha/beta trace of a metrics file.
    Plot(PlotArgs),
    /// Generate data and train several configurations on several mixtures.
    Sweep(SweepArgs),
}

#[derive(Args, Clone)]
struct EnvArgs {
    /// gridN or gridWxH
    #[arg(long, default_value = "grid4")]
    env: String,
    #[arg(long, default_value_t = 0.9)]
    gamma: f64,
    /// Probability that a move goes in a uniformly random direction.
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
}

#[derive(Args)]
struct GenDataArgs {
    #[command(flatten)]
    env: EnvArgs,
    /// 2p, 4p or 10p
    #[arg(long)]
    mixture: Mixture,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 100)]
    trajectories: usize,
    #[arg(long, default_value_t = 50)]
    horizon: usize,
    /// Dataset name; defaults to <env>_<mixture>_s<seed>.
    #[arg(long)]
    name: Option<String>,
}

#[derive(Args, Clone)]
struct TrainOptions {
    /// key = value file; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    algorithm: Option<String>,
    /// Preset (iql:0.7, soft_chi2, ...), base divergence, or flex(g-,g+,a-,a+,beta).
    #[arg(long, alias = "preset", alias = "divergence")]
    penalty: Option<String>,
    #[arg(long, value_parser = ["on", "off"])]
    adaptive: Option<String>,
    #[arg(long)]
    steps: Option<u64>,
    /// Extra key=value overrides, e.g. --set lr_nu=0.5
    #[arg(long = "set")]
    set: Vec<String>,
}

impl TrainOptions {
    fn settings(&self) -> Result<Settings> {
        let mut s = match &self.config {
            Some(p) => read_settings(p)?,
            None => Settings::new(),
        };
        s.extend(parse_overrides(&self.set)?);
        for (k, v) in [
            ("algorithm", self.algorithm.clone()),
            ("penalty", self.penalty.clone()),
            ("adaptive", self.adaptive.clone()),
            ("steps", self.steps.map(|x| x.to_string())),
        ] {
            if let Some(v) = v {
                if k == "penalty" {
                    s.remove("preset");
                    s.remove("divergence");
                }
                s.insert(k.into(), v);
            }
        }
        Ok(s)
    }
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset name under <out>/data.
    #[arg(long)]
    dataset: String,
    #[command(flatten)]
    opts: TrainOptions,
    /// First seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of consecutive seeds.
    #[arg(long, default_value_t = 1)]
    seeds: u64,
    #[arg(long)]
    run_name: Option<String>,
    /// Replace existing rows in results.csv with the same key.
    #[arg(long)]
    overwrite: bool,
}

#[derive(Args)]
struct EvalArgs {
    /// Run name under <out>/runs or a run directory.
    #[arg(long)]
    run: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1000)]
    episodes: usize,
    #[arg(long, default_value_t = 200)]
    horizon: usize,
    /// Evaluate the argmax of the policy logits instead of the softmax policy.
    #[arg(long)]
    greedy: bool,
}

#[derive(Args)]
struct CheckArgs {
    /// Suite to run (repeatable); all when omitted.
    #[arg(long)]
    suite: Vec<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Largest state-action count in the duality suite.
    #[arg(long, default_value_t = 64)]
    max_size: usize,
    #[arg(long, default_value_t = 20)]
    n_mdps: usize,
    /// Random flexible compositions per generator suite.
    #[arg(long, default_value_t = 20)]
    n_flex: usize,
    /// Also write the matrix as CSV.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum PlotKind {
    Function,
    Metrics,
}

#[derive(Args)]
struct PlotArgs {
    #[arg(value_enum)]
    kind: PlotKind,
    /// Penalty to draw (function plots).
    #[arg(long, alias = "preset")]
    penalty: Option<String>,
    /// Metrics CSV (metrics plots).
    #[arg(long)]
    metrics: Option<PathBuf>,
    /// Output SVG; defaults to <out>/plots/<name>.svg
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    env: EnvArgs,
    /// Comma-separated mixtures.
    #[arg(long, default_value = "2p,4p", value_delimiter = ',')]
    mixtures: Vec<Mixture>,
    /// algorithm/penalty[/adaptive]; repeatable. Defaults to Flex-f-Q with
    /// IQL, Flex-f-DICE with soft_chi2, and adaptive Flex-f-DICE on le_cam/chi2.
    #[arg(long = "run")]
    runs: Vec<String>,
    #[arg(long, default_value_t = 5)]
    seeds: u64,
    #[arg(long, default_value_t = 100)]
    trajectories: usize,
    #[arg(long, default_value_t = 50)]
    horizon: usize,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long = "set")]
    set: Vec<String>,
    #[arg(long)]
    overwrite: bool,
}

fn layout(cli_out: &Option<PathBuf>) -> Layout {
    let root = cli_out
        .clone()
        .or_else(|| std::env::var_os("FLEXRL_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("flexrl-out"));
    Layout { root }
}

fn cmd_gen_data(layout: &Layout, a: GenDataArgs) -> Result<()> {
    let req = DataRequest {
        env: EnvSpec::parse(&a.env.env, a.env.gamma, a.env.noise)?,
        mixture: a.mixture,
        trajectories: a.trajectories,
        horizon: a.horizon,
        seed: a.seed,
    };
    let name = a.name.unwrap_or_else(|| req.default_name());
    for p in run::generate(layout, &req, &name)? {
        println!("{}", p.display());
    }
    Ok(())
}

fn cmd_train(layout: &Layout, a: TrainArgs) -> Result<()> {
    if a.seeds == 0 {
        bail!(Usage("--seeds must be at least 1".into()));
    }
    let data = run::load_dataset(layout, &a.dataset)?;
    let (name, rows) = run::train_seeds(
        layout,
        TrainRequest {
            data: &data,
            settings: a.opts.settings()?,
            seeds: (a.seed..a.seed + a.seeds).collect(),
            run_name: a.run_name,
            overwrite: a.overwrite,
        },
    )?;
    println!("run,seed,final_norm_return");
    for r in &rows {
        println!("{name},{},{:.3}", r.seed, r.final_norm_return);
    }
    if let Some(r) = rows.first() {
        println!("# mean {:.3} std {:.3} over {} seeds", r.mean, r.std, rows.len());
    }
    Ok(())
}

fn cmd_eval(layout: &Layout, a: EvalArgs) -> Result<()> {
    let dir = run::resolve_run_dir(layout, &a.run);
    let ev = run::evaluate_run(
        layout,
        &dir,
        &EvalRequest {
            seed: a.seed,
            episodes: a.episodes,
            horizon: a.horizon,
            greedy: a.greedy,
        },
    )?;
    println!("seed,exact_return,normalized_return,mc_mean,mc_std_error,normalized_mc");
    println!(
        "{},{:.6},{:.3},{:.6},{:.6},{:.3}",
        a.seed, ev.exact_return, ev.normalized_return, ev.mean_return, ev.std_error, ev.normalized_mc
    );
    Ok(())
}

fn cmd_check(a: CheckArgs) -> Result<()> {
    let suites = if a.suite.is_empty() || a.suite.iter().any(|s| s == "all") {
        Suite::ALL.to_vec()
    } else {
        a.suite
            .iter()
            .map(|s| s.parse::<Suite>().map_err(|e| Usage(e.to_string())))
            .collect::<std::result::Result<Vec<_>, _>>()?
    };
    let opts = CheckOptions {
        seed: a.seed,
        n_flex: a.n_flex,
        max_size: a.max_size,
        n_mdps: a.n_mdps,
    };
    let mut csv = String::from("suite,checked,max_error,status,seconds\n");
    let mut first_failure = None;
    for s in suites {
        let rep = run_suite(s, &opts);
        let status = if rep.passed() { "pass" } else { "FAIL" };
        let line = format!("{},{},{:.3e},{status},{:.3}", rep.suite, rep.checked, rep.max_error, rep.elapsed.as_secs_f64());
        println!("{line}");
        csv.push_str(&line);
        csv.push('\n');
        if first_failure.is_none() {
            first_failure = rep.failures.first().map(|f| format!("{}: {f}", rep.suite));
        }
    }
    if let Some(path) = &a.report {
        fs::write(path, csv).map_err(|e| Usage(format!("writing {}: {e}", path.display())))?;
    }
    match first_failure {
        Some(f) => bail!(Failure(f)),
        None => Ok(()),
    }
}

fn cmd_plot(layout: &Layout, a: PlotArgs) -> Result<()> {
    let (title, name, panels) = match a.kind {
        PlotKind::Function => {
            let Some(text) = a.penalty else {
                bail!(Usage("function plots need --penalty".into()));
            };
            let p: Penalty = text.parse().map_err(|e: FlexError| Usage(e.to_string()))?;
            let name: String = text.chars().map(|c| if c.is_ascii_alphanumeric() { c } else { '_' }).collect();
            (format!("{text}: {p}"), name, plot::function_panels(&p))
        }
        PlotKind::Metrics => {
            let Some(path) = a.metrics else {
                bail!(Usage("metrics plots need --metrics".into()));
            };
            if !path.exists() {
                bail!(Usage(format!("no such file {}", path.display())));
            }
            let rows = read_metrics(&path).map_err(|e| Usage(e.to_string()))?;
            if rows.is_empty() {
                bail!(Usage(format!("{} has no metrics rows", path.display())));
            }
            let stem = path.file_stem().map_or("metrics".into(), |s| s.to_string_lossy().into_owned());
            (format!("alpha/beta trace: {}", path.display()), stem, plot::metrics_panels(&rows))
        }
    };
    let output = a.output.unwrap_or_else(|| layout.plots().join(format!("{name}.svg")));
    if let Some(dir) = output.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Usage(format!("creating {}: {e}", dir.display())))?;
    }
    fs::write(&output, plot::render(&title, &panels)).map_err(|e| Usage(format!("writing {}: {e}", output.display())))?;
    println!("{}", output.display());
    Ok(())
}

const DEFAULT_SWEEP: [&str; 3] = ["flex_f_q/iql:0.7", "flex_f_dice/soft_chi2", "flex_f_dice/flex(le_cam,chi2,1,1,1)/adaptive"];

/// `algorithm/penalty[/adaptive]` into settings.
fn sweep_entry(spec: &str) -> Result<Settings> {
    let mut parts: Vec<&str> = spec.split('/').collect();
    let adaptive = parts.last() == Some(&"adaptive");
    if adaptive {
        parts.pop();
    }
    if parts.len() != 2 {
        bail!(Usage(format!("run `{spec}` is not algorithm/penalty[/adaptive]")));
    }
    let mut s = Settings::new();
    s.insert("algorithm".into(), parts[0].into());
    s.insert("penalty".into(), parts[1].into());
    s.insert("adaptive".into(), if adaptive { "on" } else { "off" }.into());
    Ok(s)
}

fn cmd_sweep(layout: &Layout, a: SweepArgs) -> Result<()> {
    if a.seeds == 0 {
        bail!(Usage("--seeds must be at least 1".into()));
    }
    let env = EnvSpec::parse(&a.env.env, a.env.gamma, a.env.noise)?;
    let mut base = match &a.config {
        Some(p) => read_settings(p)?,
        None => Settings::new(),
    };
    base.extend(parse_overrides(&a.set)?);
    let specs: Vec<String> = if a.runs.is_empty() { DEFAULT_SWEEP.iter().map(|s| s.to_string()).collect() } else { a.runs.clone() };
    let entries = specs.iter().map(|s| sweep_entry(s)).collect::<Result<Vec<_>>>()?;
    let mut table = Vec::new();
    for mixture in &a.mixtures {
        let req = DataRequest {
            env: env.clone(),
            mixture: mixture.clone(),
            trajectories: a.trajectories,
            horizon: a.horizon,
            seed: 0,
        };
        let name = req.default_name();
        run::generate(layout, &req, &name)?;
        let data = run::load_dataset(layout, &name)?;
        for (spec, entry) in specs.iter().zip(&entries) {
            let mut settings = base.clone();
            settings.extend(entry.clone());
            let start = Instant::now();
            let (_, rows) = run::train_seeds(
                layout,
                TrainRequest {
                    data: &data,
                    settings,
                    seeds: (0..a.seeds).collect(),
                    run_name: None,
                    overwrite: a.overwrite,
                },
            )?;
            info!("{mixture} {spec}: {:.1}s", start.elapsed().as_secs_f64());
            let r = &rows[0];
            table.push(format!("{},{},{spec},{:.2},{:.2}", env.name, mixture, r.mean, r.std));
        }
    }
    println!("env,mixture,run,mean_norm_return,std_norm_return");
    for line in table {
        println!("{line}");
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<Usage>() || cause.is::<std::io::Error>() {
            return 2;
        }
        if cause.is::<Failure>() {
            return 1;
        }
        if let Some(f) = cause.downcast_ref::<FlexError>() {
            return match f {
                FlexError::Io(_) | FlexError::Parse(_) | FlexError::UnknownPreset(_) | FlexError::InvalidParameter(_) => 2,
                _ => 1,
            };
        }
    }
    1
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let layout = layout(&cli.out);
    let result = match cli.command {
        Command::GenData(a) => cmd_gen_data(&layout, a),
        Command::Train(a) => cmd_train(&layout, a),
        Command::Eval(a) => cmd_eval(&layout, a),
        Command::Check(a) => cmd_check(a),
        Command::Plot(a) => cmd_plot(&layout, a),
        Command::Sweep(a) => cmd_sweep(&layout, a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
