//! Text formats: datasets, checkpoints and metrics.
//!
//! Every real is written with [`fmt_real`] so a round trip is exact and two
//! identical runs produce identical bytes.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::adaptive::AdaptiveState;
use crate::dataset::{Mixture, OfflineDataset, Transition};
use crate::error::{FlexError, Result};
use crate::fmt_real;
use crate::trainers::{MetricsRow, TrainConfig, TrainState};

pub const DATASET_HEADER: &str = "s,a,r,s_next,done";
pub const METRICS_HEADER: &str = "step,loss_nu,loss_critic,loss_policy,mean_e,alpha_plus,alpha_minus,beta,return,norm_return";

fn parse_err(path: &Path, line: usize, what: &str) -> FlexError {
    FlexError::Parse(format!("{}:{line}: {what}", path.display()))
}

/// Paths of the three dataset files for `name` inside `dir`.
pub fn dataset_paths(dir: &Path, name: &str) -> [PathBuf; 3] {
    [
        dir.join(format!("{name}.csv")),
        dir.join(format!("{name}.init")),
        dir.join(format!("{name}.meta")),
    ]
}

/// Write `<name>.csv`, `<name>.init` and `<name>.meta`. `meta` holds extra
/// key=value pairs (seed, horizon, env, mdp hash, ...); the mixture label and
/// component summary are added here. Keys are written sorted.
pub fn write_dataset(dir: &Path, name: &str, ds: &OfflineDataset, meta: &BTreeMap<String, String>) -> Result<[PathBuf; 3]> {
    fs::create_dir_all(dir)?;
    let paths = dataset_paths(dir, name);
    let mut csv = String::with_capacity(ds.len() * 40);
    csv.push_str(DATASET_HEADER);
    csv.push('\n');
    for t in &ds.transitions {
        csv.push_str(&format!("{},{},{},{},{}\n", t.s, t.a, fmt_real(t.r), t.s_next, u8::from(t.done)));
    }
    fs::write(&paths[0], csv)?;
    let init: String = ds.initial_states.iter().map(|s| format!("{s}\n")).collect();
    fs::write(&paths[1], init)?;
    let mut all = meta.clone();
    all.insert("mixture".into(), ds.mixture_label.to_string());
    if !ds.components.is_empty() {
        let comps: Vec<String> = ds
            .components
            .iter()
            .map(|c| {
                let k = c.checkpoint.map_or("final".to_string(), |k| k.to_string());
                format!("{}:{}:{:.4}:{}", c.label, k, c.normalized_return, c.n_trajectories)
            })
            .collect();
        all.insert("components".into(), comps.join(";"));
    }
    let text: String = all.iter().map(|(k, v)| format!("{k}={v}\n")).collect();
    fs::write(&paths[2], text)?;
    Ok(paths)
}

/// Flat `key=value` text with `#` comments.
pub fn parse_key_values(text: &str, origin: &Path) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| parse_err(origin, i + 1, "expected key=value"))?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}

/// Read a dataset written by [`write_dataset`]; the `.meta` file is optional.
pub fn read_dataset(dir: &Path, name: &str) -> Result<(OfflineDataset, BTreeMap<String, String>)> {
    let [csv_path, init_path, meta_path] = dataset_paths(dir, name);
    let csv = fs::read_to_string(&csv_path)?;
    let mut lines = csv.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == DATASET_HEADER => {}
        _ => return Err(parse_err(&csv_path, 1, "missing header s,a,r,s_next,done")),
    }
    let mut transitions = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            return Err(parse_err(&csv_path, i + 1, "expected 5 fields"));
        }
        let int = |x: &str| x.trim().parse::<usize>().map_err(|_| parse_err(&csv_path, i + 1, "bad integer"));
        let r: f64 = f[2].trim().parse().map_err(|_| parse_err(&csv_path, i + 1, "bad reward"))?;
        let done = match f[4].trim() {
            "0" => false,
            "1" => true,
            _ => return Err(parse_err(&csv_path, i + 1, "done must be 0 or 1")),
        };
        transitions.push(Transition {
            s: int(f[0])?,
            a: int(f[1])?,
            r,
            s_next: int(f[3])?,
            done,
        });
    }
    let init_text = fs::read_to_string(&init_path)?;
    let initial_states = init_text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| l.trim().parse::<usize>().map_err(|_| parse_err(&init_path, i + 1, "bad state id")))
        .collect::<Result<Vec<_>>>()?;
    let meta = if meta_path.exists() {
        parse_key_values(&fs::read_to_string(&meta_path)?, &meta_path)?
    } else {
        BTreeMap::new()
    };
    let mixture = match meta.get("mixture") {
        Some(m) => m.parse().unwrap_or_else(|_| Mixture::Custom(m.clone())),
        None => Mixture::Custom(name.to_string()),
    };
    Ok((OfflineDataset::new(transitions, initial_states, mixture)?, meta))
}

fn push_rows(out: &mut String, table: &[f64], width: usize) {
    for row in table.chunks(width) {
        let cells: Vec<String> = row.iter().map(|&x| fmt_real(x)).collect();
        out.push_str(&cells.join(" "));
        out.push('\n');
    }
}

/// Sections `[nu]`, `[critic]`, `[policy_logits]`, `[adaptive]` after a
/// leading `step N` line. The adaptive section holds the behavior-cloning
/// logits, then one row `ema_cos ema_e alpha_minus alpha_plus beta`; it is
/// empty for non-adaptive runs.
pub fn checkpoint_text(state: &TrainState) -> String {
    let na = state.n_actions();
    let mut out = format!("step {}\n[nu]\n", state.step);
    push_rows(&mut out, &state.nu, 1);
    out.push_str("[critic]\n");
    push_rows(&mut out, &state.critic, na);
    out.push_str("[policy_logits]\n");
    push_rows(&mut out, &state.policy_logits, na);
    out.push_str("[adaptive]\n");
    if let Some(ad) = &state.adaptive {
        push_rows(&mut out, &ad.bc_logits, na);
        push_rows(&mut out, &[ad.ema_cos, ad.ema_e, ad.alpha_minus, ad.alpha_plus, ad.beta], 5);
    }
    out
}

pub fn write_checkpoint(path: &Path, state: &TrainState) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, checkpoint_text(state))?;
    Ok(())
}

/// Rebuild a state from a checkpoint. The sampling stream restarts from
/// `config.seed`, so a resumed run draws different batches than an
/// uninterrupted one.
pub fn read_checkpoint(path: &Path, n_states: usize, n_actions: usize, config: &TrainConfig) -> Result<TrainState> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let step = match lines.next() {
        Some((_, l)) => l
            .strip_prefix("step ")
            .and_then(|n| n.trim().parse::<u64>().ok())
            .ok_or_else(|| parse_err(path, 1, "expected `step N`"))?,
        None => return Err(parse_err(path, 1, "empty checkpoint")),
    };
    let mut sections: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut current: Option<String> = None;
    for (i, line) in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            sections.insert(name.to_string(), Vec::new());
            current = Some(name.to_string());
            continue;
        }
        let name = current.as_ref().ok_or_else(|| parse_err(path, i + 1, "values before a section"))?;
        for tok in line.split_whitespace() {
            let v: f64 = tok.parse().map_err(|_| parse_err(path, i + 1, "bad real"))?;
            sections.get_mut(name).expect("section exists").push(v);
        }
    }
    let mut take = |name: &str, len: usize| -> Result<Vec<f64>> {
        let v = sections
            .remove(name)
            .ok_or_else(|| FlexError::Parse(format!("{}: missing [{name}]", path.display())))?;
        if v.len() != len {
            return Err(FlexError::Shape { expected: len, got: v.len() });
        }
        Ok(v)
    };
    let sa = n_states * n_actions;
    let nu = take("nu", n_states)?;
    let critic = take("critic", sa)?;
    let policy_logits = take("policy_logits", sa)?;
    let mut state = TrainState::new(n_states, n_actions, config);
    let adaptive_len = if state.adaptive.is_some() { sa + 5 } else { 0 };
    let adaptive = take("adaptive", adaptive_len)?;
    state.nu = nu;
    state.critic = critic;
    state.policy_logits = policy_logits;
    state.step = step;
    if let Some(ad) = state.adaptive.as_mut() {
        restore_adaptive(ad, &adaptive, sa);
        let (g_minus, g_plus) = config.penalty.branches();
        state.penalty = ad.recompose(g_minus, g_plus)?.into();
    }
    Ok(state)
}

fn restore_adaptive(ad: &mut AdaptiveState, values: &[f64], sa: usize) {
    ad.bc_logits = values[..sa].to_vec();
    ad.ema_cos = values[sa];
    ad.ema_e = values[sa + 1];
    ad.alpha_minus = values[sa + 2];
    ad.alpha_plus = values[sa + 3];
    ad.beta = values[sa + 4];
}

pub fn metrics_text(rows: &[MetricsRow]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in rows {
        let reals = [
            r.loss_nu,
            r.loss_critic,
            r.loss_policy,
            r.mean_e,
            r.alpha_plus,
            r.alpha_minus,
            r.beta,
            r.ret,
            r.norm_return,
        ];
        let cells: Vec<String> = reals.iter().map(|&x| fmt_real(x)).collect();
        out.push_str(&format!("{},{}\n", r.step, cells.join(",")));
    }
    out
}

pub fn write_metrics(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut f = fs::File::create(path)?;
    f.write_all(metrics_text(rows).as_bytes())?;
    Ok(())
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == METRICS_HEADER => {}
        _ => return Err(parse_err(path, 1, "missing metrics header")),
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 10 {
            return Err(parse_err(path, i + 1, "expected 10 fields"));
        }
        let step = f[0].trim().parse().map_err(|_| parse_err(path, i + 1, "bad step"))?;
        let v = f[1..]
            .iter()
            .map(|x| x.trim().parse::<f64>().map_err(|_| parse_err(path, i + 1, "bad real")))
            .collect::<Result<Vec<f64>>>()?;
        rows.push(MetricsRow {
            step,
            loss_nu: v[0],
            loss_critic: v[1],
            loss_policy: v[2],
            mean_e: v[3],
            alpha_plus: v[4],
            alpha_minus: v[5],
            beta: v[6],
            ret: v[7],
            norm_return: v[8],
        });
    }
    Ok(rows)
}
