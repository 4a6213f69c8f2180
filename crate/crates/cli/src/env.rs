//! Named environments: `gridN` (N×N) or `gridWxH`.

use std::collections::BTreeMap;

use anyhow::{bail, Result};
use flexrl_core::mdp::{make_gridworld, TabularMdp};

use crate::Usage;

#[derive(Debug, Clone, PartialEq)]
pub struct EnvSpec {
    pub name: String,
    pub width: usize,
    pub height: usize,
    pub gamma: f64,
    pub noise: f64,
}

impl EnvSpec {
    pub fn parse(name: &str, gamma: f64, noise: f64) -> Result<Self> {
        let Some(dims) = name.strip_prefix("grid") else {
            bail!(Usage(format!("unknown env `{name}` (expected gridN or gridWxH)")));
        };
        let (w, h) = match dims.split_once('x') {
            Some((w, h)) => (w.parse(), h.parse()),
            None => (dims.parse(), dims.parse()),
        };
        let (Ok(width), Ok(height)) = (w, h) else {
            bail!(Usage(format!("unknown env `{name}` (expected gridN or gridWxH)")));
        };
        Ok(EnvSpec {
            name: name.to_string(),
            width,
            height,
            gamma,
            noise,
        })
    }

    pub fn build(&self) -> Result<TabularMdp> {
        make_gridworld(self.width, self.height, self.gamma, self.noise).map_err(|e| Usage(format!("env {}: {e}", self.name)).into())
    }

    pub fn to_meta(&self, meta: &mut BTreeMap<String, String>) {
        meta.insert("env".into(), self.name.clone());
        meta.insert("gamma".into(), self.gamma.to_string());
        meta.insert("noise".into(), self.noise.to_string());
    }

    /// Rebuild from a dataset `.meta`, checking the stored model hash.
    pub fn from_meta(meta: &BTreeMap<String, String>) -> Result<(Self, TabularMdp)> {
        let get = |k: &str| meta.get(k).ok_or_else(|| Usage(format!("dataset meta lacks `{k}`")));
        let real = |k: &str| -> Result<f64> { get(k)?.parse().map_err(|_| Usage(format!("bad `{k}` in dataset meta")).into()) };
        let spec = EnvSpec::parse(get("env")?, real("gamma")?, real("noise")?)?;
        let mdp = spec.build()?;
        if let Some(h) = meta.get("mdp_hash") {
            if *h != mdp.hash_hex() {
                bail!(Usage(format!("dataset was generated for a different model (hash {h})")));
            }
        }
        Ok((spec, mdp))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names() {
        let g = EnvSpec::parse("grid4", 0.9, 0.1).unwrap();
        assert_eq!((g.width, g.height), (4, 4));
        let g = EnvSpec::parse("grid5x3", 0.9, 0.1).unwrap();
        assert_eq!((g.width, g.height), (5, 3));
        assert!(EnvSpec::parse("maze", 0.9, 0.1).is_err());
        assert!(EnvSpec::parse("gridx", 0.9, 0.1).is_err());
    }

    #[test]
    fn meta_round_trip() {
        let g = EnvSpec::parse("grid3", 0.8, 0.0).unwrap();
        let mut meta = BTreeMap::new();
        g.to_meta(&mut meta);
        meta.insert("mdp_hash".into(), g.build().unwrap().hash_hex());
        assert_eq!(EnvSpec::from_meta(&meta).unwrap().0, g);
        meta.insert("mdp_hash".into(), "00".into());
        assert!(EnvSpec::from_meta(&meta).is_err());
    }
}
