//! Flat `key = value` training configuration. Files are read first, then
//! `--set` pairs and dedicated flags override them.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Result};
use flexrl_core::adaptive::AdaptiveConfig;
use flexrl_core::persist::parse_key_values;
use flexrl_core::trainers::{Algorithm, TrainConfig};
use flexrl_core::{fmt_real, Interval, Penalty};

use crate::Usage;

pub type Settings = BTreeMap<String, String>;

pub fn read_settings(path: &Path) -> Result<Settings> {
    let text = std::fs::read_to_string(path).map_err(|e| Usage(format!("cannot read config {}: {e}", path.display())))?;
    Ok(parse_key_values(&text, path)?)
}

/// Parse `key=value` override strings.
pub fn parse_overrides(pairs: &[String]) -> Result<Settings> {
    let mut out = Settings::new();
    for p in pairs {
        let Some((k, v)) = p.split_once('=') else {
            return Err(Usage(format!("expected key=value, got `{p}`")).into());
        };
        out.insert(normalize_key(k), v.trim().to_string());
    }
    Ok(out)
}

fn normalize_key(k: &str) -> String {
    k.trim().to_ascii_lowercase().replace('-', "_")
}

fn interval(v: &str) -> Result<Interval> {
    let parts: Vec<&str> = v.trim_matches(|c| c == '[' || c == ']').split(',').collect();
    if parts.len() != 2 {
        bail!(Usage(format!("expected an interval lo,hi, got `{v}`")));
    }
    let lo: f64 = parts[0].trim().parse().map_err(|_| Usage(format!("bad interval `{v}`")))?;
    let hi: f64 = parts[1].trim().parse().map_err(|_| Usage(format!("bad interval `{v}`")))?;
    Ok(Interval::closed(lo, hi))
}

fn on_off(v: &str) -> Result<bool> {
    match v.trim().to_ascii_lowercase().as_str() {
        "on" | "true" | "yes" | "1" => Ok(true),
        "off" | "false" | "no" | "0" => Ok(false),
        _ => bail!(Usage(format!("expected on/off, got `{v}`"))),
    }
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim().parse().map_err(|_| Usage(format!("{key}: cannot parse `{v}`")).into())
}

/// Build a config from settings. `algorithm` and `penalty` pick the
/// defaults; every other key overrides one field.
pub fn build_config(settings: &Settings) -> Result<TrainConfig> {
    let mut s: Settings = settings.iter().map(|(k, v)| (normalize_key(k), v.clone())).collect();
    let alg: Algorithm = match s.remove("algorithm") {
        Some(a) => a.parse().map_err(|e| Usage(format!("{e}")))?,
        None => Algorithm::FlexFQ,
    };
    let penalty_text = s.remove("penalty").or_else(|| s.remove("preset")).or_else(|| s.remove("divergence"));
    let penalty: Penalty = match penalty_text {
        Some(p) => p.parse().map_err(|e| Usage(format!("{e}")))?,
        None if alg == Algorithm::FlexFQ => "iql:0.7".parse()?,
        None => "soft_chi2".parse()?,
    };
    let mut cfg = TrainConfig::new(alg, penalty);
    let adaptive = match s.remove("adaptive") {
        Some(v) => on_off(&v)?,
        None => false,
    };
    // keys that feed the adaptive estimator are applied after the switch
    let mut late = Vec::new();
    for (k, v) in &s {
        match k.as_str() {
            "lp_mode" => cfg.lp_mode = v.parse().map_err(|e| Usage(format!("{e}")))?,
            "alpha_g" => cfg.alpha_g = num(k, v)?,
            "lr_nu" => cfg.lr_nu = num(k, v)?,
            "lr_critic" => cfg.lr_critic = num(k, v)?,
            "lr_policy" => cfg.lr_policy = num(k, v)?,
            "batch_size" => cfg.batch_size = num(k, v)?,
            "init_batch_size" => cfg.init_batch_size = num(k, v)?,
            "steps" => cfg.steps = num(k, v)?,
            "awr_temperature" => cfg.awr_temperature = num(k, v)?,
            "e_clip" => cfg.e_clip = interval(v)?,
            "loss_clip" => cfg.loss_clip = if v == "none" { None } else { Some(interval(v)?) },
            "reward_scale" => cfg.reward_scale = num(k, v)?,
            "seed" => cfg.seed = num(k, v)?,
            "eval_interval" => cfg.eval_interval = num(k, v)?,
            "iota_b" | "ema_decay" | "lr_bc" => late.push((k.clone(), v.clone())),
            _ => bail!(Usage(format!("unknown config key `{k}`"))),
        }
    }
    if adaptive {
        cfg = cfg.with_adaptive();
    }
    for (k, v) in late {
        let Some(a) = cfg.adaptive.as_mut() else {
            bail!(Usage(format!("`{k}` only applies with adaptive = on")));
        };
        match k.as_str() {
            "iota_b" => a.iota_b = num(&k, &v)?,
            "ema_decay" => a.ema_decay = num(&k, &v)?,
            _ => a.lr_bc = num(&k, &v)?,
        }
    }
    cfg.validate().map_err(|e| Usage(format!("invalid configuration: {e}")))?;
    Ok(cfg)
}

fn interval_text(i: Interval) -> String {
    format!("{},{}", fmt_real(i.lo), fmt_real(i.hi))
}

/// Settings that rebuild `cfg` through [`build_config`]; the seed is left out.
pub fn config_settings(cfg: &TrainConfig) -> Settings {
    let mut s = Settings::new();
    let mut put = |k: &str, v: String| {
        s.insert(k.to_string(), v);
    };
    put("algorithm", cfg.algorithm.name().to_string());
    put("penalty", cfg.penalty.to_string());
    put("adaptive", if cfg.adaptive.is_some() { "on" } else { "off" }.to_string());
    put("lp_mode", cfg.lp_mode.to_string());
    put("alpha_g", fmt_real(cfg.alpha_g));
    put("lr_nu", fmt_real(cfg.lr_nu));
    put("lr_critic", fmt_real(cfg.lr_critic));
    put("lr_policy", fmt_real(cfg.lr_policy));
    put("batch_size", cfg.batch_size.to_string());
    put("init_batch_size", cfg.init_batch_size.to_string());
    put("steps", cfg.steps.to_string());
    put("awr_temperature", fmt_real(cfg.awr_temperature));
    put("e_clip", interval_text(cfg.e_clip));
    put("loss_clip", cfg.loss_clip.map_or("none".to_string(), interval_text));
    put("reward_scale", fmt_real(cfg.reward_scale));
    put("eval_interval", cfg.eval_interval.to_string());
    if let Some(AdaptiveConfig { iota_b, ema_decay, lr_bc, .. }) = cfg.adaptive {
        put("iota_b", fmt_real(iota_b));
        put("ema_decay", fmt_real(ema_decay));
        put("lr_bc", fmt_real(lr_bc));
    }
    s
}

pub fn settings_text(s: &Settings) -> String {
    s.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
}

/// Short label used in result keys, e.g. `soft_chi2` or `flex(...)+adaptive`.
pub fn divergence_label(cfg: &TrainConfig) -> String {
    let base = cfg.penalty.to_string();
    if cfg.adaptive.is_some() {
        format!("{base}+adaptive")
    } else {
        base
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn settings(pairs: &[&str]) -> Settings {
        parse_overrides(&pairs.iter().map(|s| s.to_string()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn defaults_follow_algorithm() {
        let q = build_config(&Settings::new()).unwrap();
        assert_eq!(q.algorithm, Algorithm::FlexFQ);
        assert_eq!(q.penalty.to_string(), "iql:0.7".parse::<Penalty>().unwrap().to_string());
        let d = build_config(&settings(&["algorithm=flex-f-dice"])).unwrap();
        assert_eq!(d.alpha_g, 0.1);
    }

    #[test]
    fn round_trip_through_text() {
        let cfg = build_config(&settings(&[
            "algorithm=flex_f_dice",
            "penalty=flex(le_cam,chi2,1,1,1)",
            "adaptive=on",
            "iota-b=0.25",
            "steps=123",
            "loss_clip=-1,1",
        ]))
        .unwrap();
        let text = settings_text(&config_settings(&cfg));
        let back = build_config(&parse_key_values(&text, Path::new("mem")).unwrap()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.adaptive.unwrap().iota_b, 0.25);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(build_config(&settings(&["bogus=1"])).is_err());
        assert!(build_config(&settings(&["iota_b=0.2"])).is_err());
        assert!(build_config(&settings(&["penalty=nope"])).is_err());
        assert!(parse_overrides(&["novalue".to_string()]).is_err());
        assert!(build_config(&settings(&["lr_nu=-1"])).is_err());
    }
}
