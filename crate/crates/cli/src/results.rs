//! `results.csv`: one row per (env, mixture, algorithm, divergence, seed).

use std::fs;
use std::path::Path;

use anyhow::{bail, Result};
use flexrl_core::fmt_real;

use crate::Usage;

pub const HEADER: &str = "env,mixture,algorithm,divergence,seed,final_norm_return,mean_norm_return,std_norm_return,run";

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub env: String,
    pub mixture: String,
    pub algorithm: String,
    pub divergence: String,
    pub seed: u64,
    pub final_norm_return: f64,
    pub mean: f64,
    pub std: f64,
    pub run: String,
}

impl ResultRow {
    pub fn key(&self) -> (String, String, String, String, u64) {
        (self.env.clone(), self.mixture.clone(), self.algorithm.clone(), self.divergence.clone(), self.seed)
    }

    fn to_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.env,
            self.mixture,
            self.algorithm,
            quote(&self.divergence),
            self.seed,
            fmt_real(self.final_norm_return),
            fmt_real(self.mean),
            fmt_real(self.std),
            self.run
        )
    }
}

fn quote(s: &str) -> String {
    if s.contains(',') {
        format!("\"{s}\"")
    } else {
        s.to_string()
    }
}

/// Split one CSV line honoring double quotes (no escaped quotes needed here).
fn split_line(line: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut quoted = false;
    for c in line.chars() {
        match c {
            '"' => quoted = !quoted,
            ',' if !quoted => out.push(std::mem::take(&mut cur)),
            _ => cur.push(c),
        }
    }
    out.push(cur);
    out
}

/// Sample mean and standard deviation (n−1 denominator; 0 for one value).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn read(path: &Path) -> Result<Vec<ResultRow>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let f = split_line(line);
        if f.len() != 9 {
            bail!(Usage(format!("{}:{}: expected 9 fields", path.display(), i + 1)));
        }
        let real = |x: &str| -> Result<f64> { x.parse().map_err(|_| Usage(format!("{}:{}: bad number", path.display(), i + 1)).into()) };
        rows.push(ResultRow {
            env: f[0].clone(),
            mixture: f[1].clone(),
            algorithm: f[2].clone(),
            divergence: f[3].clone(),
            seed: f[4].parse().map_err(|_| Usage(format!("{}:{}: bad seed", path.display(), i + 1)))?,
            final_norm_return: real(&f[5])?,
            mean: real(&f[6])?,
            std: real(&f[7])?,
            run: f[8].clone(),
        });
    }
    Ok(rows)
}

/// Append `new` rows. A key that is already present is refused unless
/// `overwrite` is set, in which case the old row is replaced in place.
pub fn submit(path: &Path, new: &[ResultRow], overwrite: bool) -> Result<()> {
    let mut rows = read(path)?;
    let clashes: Vec<_> = new.iter().filter(|n| rows.iter().any(|r| r.key() == n.key())).collect();
    if !clashes.is_empty() && !overwrite {
        let k = clashes[0].key();
        bail!(Usage(format!(
            "{} already holds a result for env={} mixture={} algorithm={} divergence={} seed={}; pass --overwrite to replace it",
            path.display(),
            k.0,
            k.1,
            k.2,
            k.3,
            k.4
        )));
    }
    if clashes.is_empty() {
        let mut text = if path.exists() { fs::read_to_string(path)? } else { format!("{HEADER}\n") };
        for r in new {
            text.push_str(&r.to_line());
            text.push('\n');
        }
        fs::write(path, text)?;
        return Ok(());
    }
    for n in new {
        match rows.iter_mut().find(|r| r.key() == n.key()) {
            Some(r) => *r = n.clone(),
            None => rows.push(n.clone()),
        }
    }
    let mut text = format!("{HEADER}\n");
    for r in &rows {
        text.push_str(&r.to_line());
        text.push('\n');
    }
    fs::write(path, text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(seed: u64, ret: f64) -> ResultRow {
        ResultRow {
            env: "grid4".into(),
            mixture: "2p".into(),
            algorithm: "flex_f_dice".into(),
            divergence: "flex(le_cam,chi2,1,1,1)+adaptive".into(),
            seed,
            final_norm_return: ret,
            mean: ret,
            std: 0.0,
            run: "r".into(),
        }
    }

    #[test]
    fn append_refuse_overwrite() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("results.csv");
        submit(&p, &[row(0, 1.0), row(1, 2.0)], false).unwrap();
        submit(&p, &[row(2, 3.0)], false).unwrap();
        assert_eq!(read(&p).unwrap().len(), 3);
        assert!(submit(&p, &[row(1, 9.0)], false).is_err());
        assert_eq!(read(&p).unwrap()[1].final_norm_return, 2.0);
        submit(&p, &[row(1, 9.0)], true).unwrap();
        let rows = read(&p).unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[1].final_norm_return, 9.0);
        assert_eq!(rows[1].divergence, "flex(le_cam,chi2,1,1,1)+adaptive");
    }

    #[test]
    fn mean_std_bounds() {
        let xs = [3.0, 5.0, 4.0];
        let (m, s) = mean_std(&xs);
        assert_eq!(m, 4.0);
        assert!((s - 1.0).abs() < 1e-12);
        assert_eq!(mean_std(&[2.0]), (2.0, 0.0));
    }
}
