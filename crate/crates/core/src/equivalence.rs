//! Closed-form value losses that the flexible penalty reproduces exactly.

use std::fmt;
use std::str::FromStr;

use crate::divergence::{FlexF, Interval, LossProfile, LpMode, Penalty};
use crate::error::{FlexError, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ReferenceLoss {
    /// Gumbel regression `exp(e) − e − 1`.
    Xql,
    /// Expectile regression with the ½ normalization, `τ` in (0, 1).
    Iql(f64),
    /// `½e²`.
    Mse,
}

impl ReferenceLoss {
    pub fn iql(tau: f64) -> Result<Self> {
        if !(tau > 0.0 && tau < 1.0) {
            return Err(FlexError::InvalidParameter(format!("expectile tau = {tau} not in (0, 1)")));
        }
        Ok(ReferenceLoss::Iql(tau))
    }
}

impl fmt::Display for ReferenceLoss {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ReferenceLoss::Xql => f.write_str("xql"),
            ReferenceLoss::Iql(t) => write!(f, "iql:{t}"),
            ReferenceLoss::Mse => f.write_str("mse"),
        }
    }
}

impl FromStr for ReferenceLoss {
    type Err = FlexError;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        match s.as_str() {
            "xql" => return Ok(ReferenceLoss::Xql),
            "mse" => return Ok(ReferenceLoss::Mse),
            _ => {}
        }
        let arg = s
            .strip_prefix("iql")
            .map(|r| r.trim_start_matches([':', '(']).trim_end_matches(')'))
            .ok_or_else(|| FlexError::Parse(format!("unknown reference loss `{s}`")))?;
        let tau: f64 = arg.parse().map_err(|_| FlexError::Parse(format!("bad expectile in `{s}`")))?;
        ReferenceLoss::iql(tau)
    }
}

pub fn reference_loss(r: ReferenceLoss, e: f64) -> f64 {
    match r {
        ReferenceLoss::Xql => e.exp() - e - 1.0,
        ReferenceLoss::Iql(tau) => {
            let w = if e >= 0.0 { tau } else { 1.0 - tau };
            w * 0.5 * e * e
        }
        ReferenceLoss::Mse => 0.5 * e * e,
    }
}

/// Largest `|reference − (−e + g(e))|` over `n_points` evenly spaced points
/// of `grid`.
pub fn verify_equivalence(r: ReferenceLoss, penalty: impl Into<Penalty>, grid: Interval, n_points: usize) -> Result<f64> {
    if n_points < 2 || !grid.lo.is_finite() || !grid.hi.is_finite() {
        return Err(FlexError::InvalidParameter("need a bounded grid with at least two points".into()));
    }
    let profile = LossProfile::new(penalty, LpMode::NegTdError);
    let mut worst = 0.0f64;
    for i in 0..n_points {
        let e = grid.lo + (grid.hi - grid.lo) * i as f64 / (n_points - 1) as f64;
        worst = worst.max((reference_loss(r, e) - profile.bellman_loss(e)?).abs());
    }
    Ok(worst)
}

/// The preset whose loss should match a reference.
pub fn matching_penalty(r: ReferenceLoss) -> Result<Penalty> {
    let flex: Result<FlexF> = match r {
        ReferenceLoss::Xql => crate::divergence::Preset::Xql.flex(),
        ReferenceLoss::Iql(t) => crate::divergence::Preset::Iql(t).flex(),
        ReferenceLoss::Mse => return Ok(Penalty::Base(crate::divergence::Divergence::Chi2)),
    };
    flex.map(Penalty::Flex)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::divergence::{preset, Divergence};

    #[test]
    fn reference_values() {
        assert_eq!(reference_loss(ReferenceLoss::Xql, 0.0), 0.0);
        assert!((reference_loss(ReferenceLoss::Xql, 1.0) - (std::f64::consts::E - 2.0)).abs() < 1e-15);
        assert!((reference_loss(ReferenceLoss::Iql(0.7), -1.0) - 0.15).abs() < 1e-15);
        assert!((reference_loss(ReferenceLoss::Iql(0.7), 1.0) - 0.35).abs() < 1e-15);
    }

    #[test]
    fn presets_match_references() {
        let xql = verify_equivalence(ReferenceLoss::Xql, preset("xql").unwrap(), Interval::closed(-2.0, 2.0), 401).unwrap();
        assert!(xql <= 1e-10, "{xql}");
        for tau in [0.1, 0.3, 0.5, 0.7, 0.9] {
            let gap = verify_equivalence(
                ReferenceLoss::Iql(tau),
                matching_penalty(ReferenceLoss::Iql(tau)).unwrap(),
                Interval::closed(-3.0, 3.0),
                601,
            )
            .unwrap();
            assert!(gap <= 1e-10, "tau {tau}: {gap}");
        }
        let mse = verify_equivalence(ReferenceLoss::Mse, Divergence::Chi2, Interval::closed(-5.0, 5.0), 1001).unwrap();
        assert!(mse <= 1e-12, "{mse}");
    }

    #[test]
    fn references_are_convex_with_zero_minimum() {
        for r in [ReferenceLoss::Xql, ReferenceLoss::Iql(0.2), ReferenceLoss::Mse] {
            let h = 1e-3;
            for i in -300..=300 {
                let e = i as f64 * 0.01;
                let second = reference_loss(r, e + h) - 2.0 * reference_loss(r, e) + reference_loss(r, e - h);
                assert!(second >= -1e-12);
                assert!(reference_loss(r, e) >= 0.0);
            }
            assert_eq!(reference_loss(r, 0.0), 0.0);
        }
    }

    #[test]
    fn parse_names() {
        assert_eq!("iql(0.7)".parse::<ReferenceLoss>().unwrap(), ReferenceLoss::Iql(0.7));
        assert_eq!("iql:0.3".parse::<ReferenceLoss>().unwrap(), ReferenceLoss::Iql(0.3));
        assert!("iql:1.5".parse::<ReferenceLoss>().is_err());
        assert_eq!("XQL".parse::<ReferenceLoss>().unwrap(), ReferenceLoss::Xql);
    }

    #[test]
    fn grid_outside_domain_errors() {
        let err = verify_equivalence(ReferenceLoss::Mse, Divergence::LeCam, Interval::closed(-1.0, 1.0), 11);
        assert!(err.is_err());
    }
}
