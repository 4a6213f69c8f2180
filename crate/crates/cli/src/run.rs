//! Dataset generation, seed-parallel training and evaluation.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use log::info;
use rayon::prelude::*;

use flexrl_core::dataset::{synthesize_dataset, Mixture, OfflineDataset, ReturnScale};
use flexrl_core::mdp::TabularMdp;
use flexrl_core::persist::{dataset_paths, parse_key_values, read_checkpoint, read_dataset, write_checkpoint, write_dataset, write_metrics};
use flexrl_core::trainers::{evaluate, extract_greedy_policy, extract_policy, train_from, Evaluation, TrainConfig, TrainState};

use crate::config::{build_config, config_settings, divergence_label, settings_text, Settings};
use crate::env::EnvSpec;
use crate::results::{self, mean_std, ResultRow};
use crate::{Failure, Usage};

pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn data_dir(&self) -> PathBuf {
        self.root.join("data")
    }
    pub fn run_dir(&self, run: &str) -> PathBuf {
        self.root.join("runs").join(run)
    }
    pub fn results(&self) -> PathBuf {
        self.root.join("results.csv")
    }
    pub fn plots(&self) -> PathBuf {
        self.root.join("plots")
    }
}

pub struct DataRequest {
    pub env: EnvSpec,
    pub mixture: Mixture,
    pub trajectories: usize,
    pub horizon: usize,
    pub seed: u64,
}

impl DataRequest {
    pub fn default_name(&self) -> String {
        format!("{}_{}_s{}", self.env.name, self.mixture, self.seed)
    }
}

pub fn generate(layout: &Layout, req: &DataRequest, name: &str) -> Result<[PathBuf; 3]> {
    let mdp = req.env.build()?;
    let ds = synthesize_dataset(&mdp, &req.mixture, req.trajectories, req.horizon, req.seed).map_err(|e| Failure(format!("dataset synthesis failed: {e}")))?;
    let mut meta = BTreeMap::new();
    req.env.to_meta(&mut meta);
    meta.insert("seed".into(), req.seed.to_string());
    meta.insert("n_trajectories".into(), req.trajectories.to_string());
    meta.insert("horizon".into(), req.horizon.to_string());
    meta.insert("mdp_hash".into(), mdp.hash_hex());
    let paths = write_dataset(&layout.data_dir(), name, &ds, &meta).map_err(|e| Usage(format!("writing dataset: {e}")))?;
    info!("wrote {} transitions to {}", ds.len(), paths[0].display());
    Ok(paths)
}

pub struct LoadedData {
    pub name: String,
    pub env: EnvSpec,
    pub mdp: TabularMdp,
    pub dataset: OfflineDataset,
}

pub fn load_dataset(layout: &Layout, name: &str) -> Result<LoadedData> {
    let dir = layout.data_dir();
    if !dataset_paths(&dir, name)[0].exists() {
        bail!(Usage(format!("no dataset `{name}` in {}", dir.display())));
    }
    let (dataset, meta) = read_dataset(&dir, name).map_err(|e| Usage(format!("reading dataset `{name}`: {e}")))?;
    let (env, mdp) = EnvSpec::from_meta(&meta)?;
    dataset.check_consistency(&mdp).map_err(|e| Usage(format!("dataset `{name}`: {e}")))?;
    Ok(LoadedData {
        name: name.to_string(),
        env,
        mdp,
        dataset,
    })
}

pub fn default_run_name(data: &str, cfg: &TrainConfig) -> String {
    let label: String = divergence_label(cfg)
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' })
        .collect();
    format!("{data}__{}__{}", cfg.algorithm.name(), label.trim_matches('_'))
}

pub struct SeedOutcome {
    pub seed: u64,
    pub final_norm_return: f64,
    pub metrics: PathBuf,
    pub checkpoint: PathBuf,
}

fn train_one(data: &LoadedData, cfg: &TrainConfig, dir: &Path) -> Result<SeedOutcome> {
    let mut state = TrainState::new(data.mdp.n_states(), data.mdp.n_actions(), cfg);
    let rows = train_from(&mut state, &data.mdp, &data.dataset, cfg)
        .map_err(|e| Failure(format!("seed {}: training aborted at step {}: {e}", cfg.seed, state.step + 1)))?;
    let metrics = dir.join(format!("metrics_s{}.csv", cfg.seed));
    let checkpoint = dir.join(format!("checkpoint_s{}.txt", cfg.seed));
    write_metrics(&metrics, &rows)?;
    write_checkpoint(&checkpoint, &state)?;
    let scale = ReturnScale::new(&data.mdp)?;
    let final_norm_return = match rows.last() {
        Some(r) if r.step == state.step => r.norm_return,
        _ => scale.normalized_value(&data.mdp, &extract_policy(&state))?,
    };
    Ok(SeedOutcome {
        seed: cfg.seed,
        final_norm_return,
        metrics,
        checkpoint,
    })
}

pub struct TrainRequest<'a> {
    pub data: &'a LoadedData,
    pub settings: Settings,
    pub seeds: Vec<u64>,
    pub run_name: Option<String>,
    pub overwrite: bool,
}

/// Train every seed in parallel, then record the rows in `results.csv`.
pub fn train_seeds(layout: &Layout, req: TrainRequest<'_>) -> Result<(String, Vec<ResultRow>)> {
    let cfg = build_config(&req.settings)?;
    let run = req.run_name.clone().unwrap_or_else(|| default_run_name(&req.data.name, &cfg));
    let dir = layout.run_dir(&run);
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display())).map_err(|e| Usage(format!("{e:#}")))?;
    let mut saved = config_settings(&cfg);
    saved.insert("dataset".into(), req.data.name.clone());
    fs::write(dir.join("config.txt"), settings_text(&saved))?;
    info!("run {run}: {} seeds of {} steps", req.seeds.len(), cfg.steps);
    let outcomes: Vec<Result<SeedOutcome>> = req
        .seeds
        .par_iter()
        .map(|&seed| {
            let mut c = cfg.clone();
            c.seed = seed;
            train_one(req.data, &c, &dir)
        })
        .collect();
    let outcomes = outcomes.into_iter().collect::<Result<Vec<_>>>()?;
    for o in &outcomes {
        info!("seed {}: {:.2} ({}, {})", o.seed, o.final_norm_return, o.metrics.display(), o.checkpoint.display());
    }
    let finals: Vec<f64> = outcomes.iter().map(|o| o.final_norm_return).collect();
    let (mean, std) = mean_std(&finals);
    let rows: Vec<ResultRow> = outcomes
        .iter()
        .map(|o| ResultRow {
            env: req.data.env.name.clone(),
            mixture: req.data.dataset.mixture_label.to_string(),
            algorithm: cfg.algorithm.name().to_string(),
            divergence: divergence_label(&cfg),
            seed: o.seed,
            final_norm_return: o.final_norm_return,
            mean,
            std,
            run: run.clone(),
        })
        .collect();
    results::submit(&layout.results(), &rows, req.overwrite)?;
    Ok((run, rows))
}

pub fn resolve_run_dir(layout: &Layout, run: &str) -> PathBuf {
    let p = PathBuf::from(run);
    if p.join("config.txt").exists() {
        p
    } else {
        layout.run_dir(run)
    }
}

pub struct EvalRequest {
    pub seed: u64,
    pub episodes: usize,
    pub horizon: usize,
    pub greedy: bool,
}

pub fn evaluate_run(layout: &Layout, run_dir: &Path, req: &EvalRequest) -> Result<Evaluation> {
    let cfg_path = run_dir.join("config.txt");
    let text = fs::read_to_string(&cfg_path).map_err(|e| Usage(format!("cannot read {}: {e}", cfg_path.display())))?;
    let mut settings = parse_key_values(&text, &cfg_path)?;
    let data_name = settings.remove("dataset").ok_or_else(|| Usage(format!("{} lacks `dataset`", cfg_path.display())))?;
    let mut cfg = build_config(&settings)?;
    cfg.seed = req.seed;
    let data = load_dataset(layout, &data_name)?;
    let ckpt = run_dir.join(format!("checkpoint_s{}.txt", req.seed));
    if !ckpt.exists() {
        bail!(Usage(format!("no checkpoint {}", ckpt.display())));
    }
    let state = read_checkpoint(&ckpt, data.mdp.n_states(), data.mdp.n_actions(), &cfg).map_err(|e| Usage(format!("{e}")))?;
    let policy = if req.greedy { extract_greedy_policy(&state) } else { extract_policy(&state) };
    evaluate(&data.mdp, &policy, req.episodes, req.horizon, req.seed).map_err(|e| anyhow!(Failure(format!("evaluation failed: {e}"))))
}
