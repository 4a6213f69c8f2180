//! Convex generator functions for f-divergence regularization.
//!
//! A generator `g*(ζ)` penalizes the density ratio `ζ = d / d^D`; its Fenchel
//! conjugate `g(e)` turns the same penalty into a loss on the TD error `e`.
//! The optimal ratio for a given error is `ζ* = g*'⁻¹(e)`, which is also the
//! derivative of `g`.
//!
//! Every catalog entry is shifted so that `g*(1) = 0` and `g*'(1) = 0`, which
//! makes `-e + g(e)` a convex loss with minimum `0` at `e = 0`.
//!
//! [`FlexF`] joins two scaled catalog entries at a threshold `β`, adding a
//! linear correction `k_g ζ + C_g` to one branch so that both the value and the
//! derivative stay continuous across the join.

use std::fmt;
use std::str::FromStr;

use crate::error::{FlexError, Result};

/// Real interval with optionally open ends. Infinite ends are always open.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
    pub lo_closed: bool,
    pub hi_closed: bool,
}

impl Interval {
    pub const REALS: Interval = Interval {
        lo: f64::NEG_INFINITY,
        hi: f64::INFINITY,
        lo_closed: false,
        hi_closed: false,
    };

    pub fn new(lo: f64, hi: f64, lo_closed: bool, hi_closed: bool) -> Self {
        Interval {
            lo,
            hi,
            lo_closed: lo_closed && lo.is_finite(),
            hi_closed: hi_closed && hi.is_finite(),
        }
    }

    pub fn closed(lo: f64, hi: f64) -> Self {
        Interval::new(lo, hi, true, true)
    }

    pub fn contains(&self, x: f64) -> bool {
        if x.is_nan() {
            return false;
        }
        let above = if self.lo_closed { x >= self.lo } else { x > self.lo };
        let below = if self.hi_closed { x <= self.hi } else { x < self.hi };
        above && below
    }

    pub fn contains_interior(&self, x: f64) -> bool {
        !x.is_nan() && x > self.lo && x < self.hi
    }

    pub fn clamp(&self, x: f64) -> f64 {
        x.max(self.lo).min(self.hi)
    }

    /// True when `other` lies inside `self`.
    pub fn covers(&self, other: &Interval) -> bool {
        let lo_ok = other.lo > self.lo
            || (other.lo == self.lo && (self.lo_closed || !other.lo_closed));
        let hi_ok = other.hi < self.hi
            || (other.hi == self.hi && (self.hi_closed || !other.hi_closed));
        lo_ok && hi_ok
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}{}, {}{}",
            if self.lo_closed { '[' } else { '(' },
            self.lo,
            self.hi,
            if self.hi_closed { ']' } else { ')' }
        )
    }
}

fn check(what: &'static str, value: f64, domain: Interval) -> Result<f64> {
    if domain.contains(value) {
        Ok(value)
    } else {
        Err(FlexError::Domain {
            what,
            value,
            domain: domain.to_string(),
        })
    }
}

fn check_interior(what: &'static str, value: f64, domain: Interval) -> Result<f64> {
    if domain.contains_interior(value) {
        Ok(value)
    } else {
        Err(FlexError::Domain {
            what,
            value,
            domain: format!("interior of {domain}"),
        })
    }
}

/// Shared interface of a convex generator `g*` and its conjugate `g`.
pub trait ConvexGenerator {
    /// Interval on which `g*(ζ)` is finite.
    fn zeta_domain(&self) -> Interval;
    /// Interval on which the conjugate `g(e)` is finite.
    fn e_domain(&self) -> Interval;
    fn gstar(&self, zeta: f64) -> Result<f64>;
    fn gstar_prime(&self, zeta: f64) -> Result<f64>;
    fn gstar_second(&self, zeta: f64) -> Result<f64>;
    /// `ζ* = g*'⁻¹(e)`, the maximizer in the conjugate. Infinite at a closed
    /// e-domain endpoint whose supremum is not attained.
    fn gstar_prime_inv(&self, e: f64) -> Result<f64>;
    /// Fenchel conjugate `g(e) = sup_ζ e·ζ − g*(ζ)`.
    fn conj(&self, e: f64) -> Result<f64>;

    /// `g''(e) = 1 / g*''(ζ*)`.
    fn conj_second(&self, e: f64) -> Result<f64> {
        let zeta = self.gstar_prime_inv(e)?;
        if zeta.is_infinite() {
            return Ok(f64::INFINITY);
        }
        Ok(1.0 / self.gstar_second(zeta)?)
    }
}

/// Base f-divergence generators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Divergence {
    Chi2,
    Kl,
    ReverseKl,
    Hellinger,
    LeCam,
}

impl Divergence {
    pub const ALL: [Divergence; 5] = [
        Divergence::Chi2,
        Divergence::Kl,
        Divergence::ReverseKl,
        Divergence::Hellinger,
        Divergence::LeCam,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Divergence::Chi2 => "chi2",
            Divergence::Kl => "kl",
            Divergence::ReverseKl => "reverse_kl",
            Divergence::Hellinger => "hellinger",
            Divergence::LeCam => "le_cam",
        }
    }
}

impl fmt::Display for Divergence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Divergence {
    type Err = FlexError;

    fn from_str(s: &str) -> Result<Self> {
        match normalize_name(s).as_str() {
            "chi2" | "chi_2" | "chisq" => Ok(Divergence::Chi2),
            "kl" => Ok(Divergence::Kl),
            "reverse_kl" | "rkl" => Ok(Divergence::ReverseKl),
            "hellinger" => Ok(Divergence::Hellinger),
            "le_cam" | "lecam" => Ok(Divergence::LeCam),
            _ => Err(FlexError::UnknownPreset(s.to_string())),
        }
    }
}

fn normalize_name(s: &str) -> String {
    s.trim().to_ascii_lowercase().replace('-', "_")
}

impl ConvexGenerator for Divergence {
    fn zeta_domain(&self) -> Interval {
        match self {
            Divergence::Chi2 => Interval::REALS,
            Divergence::Kl | Divergence::Hellinger => Interval::new(0.0, f64::INFINITY, true, false),
            Divergence::ReverseKl => Interval::new(0.0, f64::INFINITY, false, false),
            Divergence::LeCam => Interval::new(-1.0, f64::INFINITY, false, false),
        }
    }

    fn e_domain(&self) -> Interval {
        match self {
            Divergence::Chi2 | Divergence::Kl => Interval::REALS,
            Divergence::ReverseKl => Interval::new(f64::NEG_INFINITY, 1.0, false, false),
            Divergence::Hellinger => Interval::new(f64::NEG_INFINITY, 0.5, false, false),
            Divergence::LeCam => Interval::new(f64::NEG_INFINITY, 0.25, false, true),
        }
    }

    fn gstar(&self, zeta: f64) -> Result<f64> {
        let z = check("zeta", zeta, self.zeta_domain())?;
        Ok(match self {
            Divergence::Chi2 => 0.5 * (z - 1.0) * (z - 1.0),
            Divergence::Kl => {
                if z == 0.0 {
                    1.0
                } else {
                    z * z.ln() - z + 1.0
                }
            }
            Divergence::ReverseKl => -z.ln() + z - 1.0,
            Divergence::Hellinger => {
                let r = z.sqrt() - 1.0;
                0.5 * r * r
            }
            Divergence::LeCam => (1.0 - z) / (2.0 * (z + 1.0)) + (z - 1.0) / 4.0,
        })
    }

    fn gstar_prime(&self, zeta: f64) -> Result<f64> {
        let z = check_interior("zeta", zeta, self.zeta_domain())?;
        Ok(match self {
            Divergence::Chi2 => z - 1.0,
            Divergence::Kl => z.ln(),
            Divergence::ReverseKl => 1.0 - 1.0 / z,
            Divergence::Hellinger => 0.5 * (1.0 - 1.0 / z.sqrt()),
            Divergence::LeCam => 0.25 - 1.0 / ((z + 1.0) * (z + 1.0)),
        })
    }

    fn gstar_second(&self, zeta: f64) -> Result<f64> {
        let z = check_interior("zeta", zeta, self.zeta_domain())?;
        Ok(match self {
            Divergence::Chi2 => 1.0,
            Divergence::Kl => 1.0 / z,
            Divergence::ReverseKl => 1.0 / (z * z),
            Divergence::Hellinger => 0.25 / (z * z.sqrt()),
            Divergence::LeCam => 2.0 / ((z + 1.0) * (z + 1.0) * (z + 1.0)),
        })
    }

    fn gstar_prime_inv(&self, e: f64) -> Result<f64> {
        let e = check("e", e, self.e_domain())?;
        Ok(match self {
            Divergence::Chi2 => e + 1.0,
            Divergence::Kl => e.exp(),
            Divergence::ReverseKl => 1.0 / (1.0 - e),
            Divergence::Hellinger => {
                let r = 1.0 - 2.0 * e;
                1.0 / (r * r)
            }
            Divergence::LeCam => {
                let s = 1.0 - 4.0 * e;
                if s == 0.0 {
                    f64::INFINITY
                } else {
                    2.0 / s.sqrt() - 1.0
                }
            }
        })
    }

    fn conj(&self, e: f64) -> Result<f64> {
        let e = check("e", e, self.e_domain())?;
        Ok(match self {
            Divergence::Chi2 => 0.5 * e * e + e,
            Divergence::Kl => e.exp_m1(),
            Divergence::ReverseKl => -(-e).ln_1p(),
            Divergence::Hellinger => e / (1.0 - 2.0 * e),
            // 1 - e - sqrt(1 - 4e), rearranged to avoid cancellation near 0
            Divergence::LeCam => 4.0 * e / (1.0 + (1.0 - 4.0 * e).sqrt()) - e,
        })
    }
}

/// Two scaled base generators joined at `β` with a continuity-preserving
/// linear correction on one branch.
///
/// The correction sits on the `ζ < β` branch when `β < 1` and on the `ζ ≥ β`
/// branch otherwise, so the branch containing `ζ = 1` is always the plain
/// scaled generator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlexF {
    g_minus: Divergence,
    g_plus: Divergence,
    alpha_minus: f64,
    alpha_plus: f64,
    beta: f64,
    k_g: f64,
    c_g: f64,
    beta_e: f64,
}

/// Build a [`FlexF`] from two branches, their scales and the join threshold.
pub fn compose_flex(
    g_minus: Divergence,
    g_plus: Divergence,
    alpha_minus: f64,
    alpha_plus: f64,
    beta: f64,
) -> Result<FlexF> {
    for (name, a) in [("alpha_minus", alpha_minus), ("alpha_plus", alpha_plus)] {
        if !(a > 0.0 && a.is_finite()) {
            return Err(FlexError::InvalidParameter(format!("{name} = {a} must be positive")));
        }
    }
    for g in [g_minus, g_plus] {
        if !g.zeta_domain().contains_interior(beta) {
            return Err(FlexError::InvalidThreshold {
                beta,
                branch: g.to_string(),
            });
        }
        let curvature = g.gstar_second(beta)?;
        if !(curvature > 0.0 && curvature.is_finite()) {
            return Err(FlexError::NonInvertible(g.to_string()));
        }
    }
    let d_minus = alpha_minus * g_minus.gstar_prime(beta)?;
    let d_plus = alpha_plus * g_plus.gstar_prime(beta)?;
    let k_g = d_minus - d_plus;
    let c_g = alpha_minus * g_minus.gstar(beta)? - alpha_plus * g_plus.gstar(beta)? - beta * k_g;
    let beta_e = if beta >= 1.0 { d_minus } else { d_plus };
    Ok(FlexF {
        g_minus,
        g_plus,
        alpha_minus,
        alpha_plus,
        beta,
        k_g,
        c_g,
        beta_e,
    })
}

impl FlexF {
    pub fn g_minus(&self) -> Divergence {
        self.g_minus
    }
    pub fn g_plus(&self) -> Divergence {
        self.g_plus
    }
    pub fn alpha_minus(&self) -> f64 {
        self.alpha_minus
    }
    pub fn alpha_plus(&self) -> f64 {
        self.alpha_plus
    }
    pub fn beta(&self) -> f64 {
        self.beta
    }
    pub fn k_g(&self) -> f64 {
        self.k_g
    }
    pub fn c_g(&self) -> f64 {
        self.c_g
    }
    /// Threshold in e-space: `g*'(β)` evaluated on the uncorrected branch.
    pub fn beta_e(&self) -> f64 {
        self.beta_e
    }

    /// Whether the `ζ < β` branch carries the linear correction.
    pub fn corrects_lower(&self) -> bool {
        self.beta < 1.0
    }

    fn lower_ind(&self) -> f64 {
        if self.corrects_lower() {
            1.0
        } else {
            0.0
        }
    }

    fn upper_ind(&self) -> f64 {
        1.0 - self.lower_ind()
    }

    /// Value of the linear correction term at `ζ`, signed as applied to the
    /// corrected branch (`-` below, `+` above).
    pub fn correction(&self, zeta: f64) -> f64 {
        let lin = self.k_g * zeta + self.c_g;
        if self.corrects_lower() {
            -lin
        } else {
            lin
        }
    }

    fn lower_gstar(&self, zeta: f64) -> Result<f64> {
        Ok(self.alpha_minus * self.g_minus.gstar(zeta)? - self.lower_ind() * (self.k_g * zeta + self.c_g))
    }

    fn upper_gstar(&self, zeta: f64) -> Result<f64> {
        Ok(self.alpha_plus * self.g_plus.gstar(zeta)? + self.upper_ind() * (self.k_g * zeta + self.c_g))
    }

    fn lower_prime(&self, zeta: f64) -> Result<f64> {
        Ok(self.alpha_minus * self.g_minus.gstar_prime(zeta)? - self.lower_ind() * self.k_g)
    }

    fn upper_prime(&self, zeta: f64) -> Result<f64> {
        Ok(self.alpha_plus * self.g_plus.gstar_prime(zeta)? + self.upper_ind() * self.k_g)
    }

    /// Evaluate both branch expressions of `g*` at the same point, ignoring
    /// which side of `β` it lies on. Used to inspect the join.
    pub fn branch_values(&self, zeta: f64) -> Result<(f64, f64)> {
        Ok((self.lower_gstar(zeta)?, self.upper_gstar(zeta)?))
    }

    /// Both branch expressions of `g*'` at the same point.
    pub fn branch_derivatives(&self, zeta: f64) -> Result<(f64, f64)> {
        Ok((self.lower_prime(zeta)?, self.upper_prime(zeta)?))
    }
}

impl ConvexGenerator for FlexF {
    fn zeta_domain(&self) -> Interval {
        let lower = self.g_minus.zeta_domain();
        Interval::new(lower.lo, f64::INFINITY, lower.lo_closed, false)
    }

    fn e_domain(&self) -> Interval {
        let upper = self.g_plus.e_domain();
        if upper.hi.is_infinite() {
            Interval::REALS
        } else {
            let hi = self.alpha_plus * upper.hi + self.upper_ind() * self.k_g;
            Interval::new(f64::NEG_INFINITY, hi, false, upper.hi_closed)
        }
    }

    fn gstar(&self, zeta: f64) -> Result<f64> {
        if zeta < self.beta {
            self.lower_gstar(zeta)
        } else {
            check("zeta", zeta, self.zeta_domain())?;
            self.upper_gstar(zeta)
        }
    }

    fn gstar_prime(&self, zeta: f64) -> Result<f64> {
        if zeta < self.beta {
            self.lower_prime(zeta)
        } else {
            check("zeta", zeta, self.zeta_domain())?;
            self.upper_prime(zeta)
        }
    }

    fn gstar_second(&self, zeta: f64) -> Result<f64> {
        if zeta < self.beta {
            Ok(self.alpha_minus * self.g_minus.gstar_second(zeta)?)
        } else {
            check("zeta", zeta, self.zeta_domain())?;
            Ok(self.alpha_plus * self.g_plus.gstar_second(zeta)?)
        }
    }

    fn gstar_prime_inv(&self, e: f64) -> Result<f64> {
        let e = check("e", e, self.e_domain())?;
        if e < self.beta_e {
            self.g_minus
                .gstar_prime_inv((e + self.lower_ind() * self.k_g) / self.alpha_minus)
        } else {
            self.g_plus
                .gstar_prime_inv((e - self.upper_ind() * self.k_g) / self.alpha_plus)
        }
    }

    fn conj(&self, e: f64) -> Result<f64> {
        // Conjugate of α·ḡ*(ζ) ∓ (kζ + C) on the active branch is
        // α·ḡ((e ± k)/α) ± C, which also covers closed e-domain endpoints.
        let e = check("e", e, self.e_domain())?;
        if e < self.beta_e {
            let shifted = (e + self.lower_ind() * self.k_g) / self.alpha_minus;
            Ok(self.alpha_minus * self.g_minus.conj(shifted)? + self.lower_ind() * self.c_g)
        } else {
            let shifted = (e - self.upper_ind() * self.k_g) / self.alpha_plus;
            Ok(self.alpha_plus * self.g_plus.conj(shifted)? - self.upper_ind() * self.c_g)
        }
    }
}

impl fmt::Display for FlexF {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "flex({},{},{},{},{})",
            self.g_minus, self.g_plus, self.alpha_minus, self.alpha_plus, self.beta
        )
    }
}

/// Known special cases of the flexible composition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Preset {
    /// KL below, χ² above, unit scales joined at 1.
    SoftChi2,
    /// KL on both sides with the upper side doubled.
    RelaxDice,
    /// Expectile regression with expectile `τ`.
    Iql(f64),
    /// Le-Cam below scaled by `ε`, χ² above.
    PorelDice(f64),
    /// Plain KL; the loss becomes `exp(e) − e − 1`.
    Xql,
}

impl Preset {
    pub fn flex(&self) -> Result<FlexF> {
        use Divergence::*;
        match *self {
            Preset::SoftChi2 => compose_flex(Kl, Chi2, 1.0, 1.0, 1.0),
            Preset::RelaxDice => compose_flex(Kl, Kl, 1.0, 2.0, 1.0),
            Preset::Xql => compose_flex(Kl, Kl, 1.0, 1.0, 1.0),
            Preset::Iql(tau) => {
                if !(tau > 0.0 && tau < 1.0) {
                    return Err(FlexError::InvalidParameter(format!("expectile {tau} not in (0, 1)")));
                }
                compose_flex(Chi2, Chi2, 1.0 / (1.0 - tau), 1.0 / tau, 1.0)
            }
            Preset::PorelDice(eps) => compose_flex(LeCam, Chi2, eps, 1.0, 1.0),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Preset::SoftChi2 => f.write_str("soft_chi2"),
            Preset::RelaxDice => f.write_str("relax_dice"),
            Preset::Xql => f.write_str("xql"),
            Preset::Iql(t) => write!(f, "iql:{t}"),
            Preset::PorelDice(e) => write!(f, "porel_dice:{e}"),
        }
    }
}

/// Split `name:arg`, `name(arg)` into the name and an optional argument list.
fn split_args(s: &str) -> (String, Option<String>) {
    let s = s.trim();
    if let Some(open) = s.find('(') {
        let name = normalize_name(&s[..open]);
        let inner = s[open + 1..].trim_end_matches(')').to_string();
        return (name, Some(inner));
    }
    if let Some(colon) = s.find(':') {
        return (normalize_name(&s[..colon]), Some(s[colon + 1..].to_string()));
    }
    (normalize_name(s), None)
}

fn parse_f64(s: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| FlexError::Parse(format!("not a number: `{s}`")))
}

impl FromStr for Preset {
    type Err = FlexError;

    fn from_str(s: &str) -> Result<Self> {
        let (name, arg) = split_args(s);
        let arg = arg.as_deref();
        match (name.as_str(), arg) {
            ("soft_chi2", None) => Ok(Preset::SoftChi2),
            ("relax_dice", None) => Ok(Preset::RelaxDice),
            ("xql", None) => Ok(Preset::Xql),
            ("iql", Some(a)) => Ok(Preset::Iql(parse_f64(a)?)),
            ("porel_dice", Some(a)) => Ok(Preset::PorelDice(parse_f64(a)?)),
            _ => Err(FlexError::UnknownPreset(s.to_string())),
        }
    }
}

/// Look up a preset by name, e.g. `iql:0.7`, `porel_dice(0.5)`, `soft_chi2`.
pub fn preset(name: &str) -> Result<FlexF> {
    name.parse::<Preset>()?.flex()
}

/// Either a single catalog generator or a flexible composition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Penalty {
    Base(Divergence),
    Flex(FlexF),
}

impl Penalty {
    /// `(α₋, α₊, β)`; a base generator reports the identity composition.
    pub fn params(&self) -> (f64, f64, f64) {
        match self {
            Penalty::Base(_) => (1.0, 1.0, 1.0),
            Penalty::Flex(f) => (f.alpha_minus, f.alpha_plus, f.beta),
        }
    }

    /// Lower and upper base generators.
    pub fn branches(&self) -> (Divergence, Divergence) {
        match self {
            Penalty::Base(d) => (*d, *d),
            Penalty::Flex(f) => (f.g_minus, f.g_plus),
        }
    }
}

impl From<Divergence> for Penalty {
    fn from(d: Divergence) -> Self {
        Penalty::Base(d)
    }
}

impl From<FlexF> for Penalty {
    fn from(f: FlexF) -> Self {
        Penalty::Flex(f)
    }
}

/// The preset whose composition is exactly `f`, if any.
pub fn preset_of(f: &FlexF) -> Option<Preset> {
    // short decimal forms, so iql:0.7 is not printed as iql:0.7000000000000001
    let short = |x: f64| format!("{x:.12}").parse::<f64>().unwrap_or(x);
    [
        Preset::SoftChi2,
        Preset::RelaxDice,
        Preset::Xql,
        Preset::Iql(short(1.0 / f.alpha_plus)),
        Preset::PorelDice(short(f.alpha_minus)),
    ]
    .into_iter()
    .find(|p| p.flex().is_ok_and(|x| x == *f))
}

impl fmt::Display for Penalty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Penalty::Base(d) => d.fmt(f),
            Penalty::Flex(x) => match preset_of(x) {
                Some(p) => p.fmt(f),
                None => x.fmt(f),
            },
        }
    }
}

impl FromStr for Penalty {
    type Err = FlexError;

    /// Accepts a base name (`kl`), a preset (`iql:0.7`) or an explicit
    /// composition `flex(g_minus,g_plus,alpha_minus,alpha_plus,beta)`.
    fn from_str(s: &str) -> Result<Self> {
        if let Ok(d) = s.parse::<Divergence>() {
            return Ok(Penalty::Base(d));
        }
        let (name, arg) = split_args(s);
        if name == "flex" {
            let arg = arg.ok_or_else(|| FlexError::Parse(format!("flex needs arguments: `{s}`")))?;
            let parts: Vec<&str> = arg.split(',').collect();
            if parts.len() != 5 {
                return Err(FlexError::Parse(format!(
                    "flex expects 5 arguments (g_minus,g_plus,alpha_minus,alpha_plus,beta): `{s}`"
                )));
            }
            let flex = compose_flex(
                parts[0].parse()?,
                parts[1].parse()?,
                parse_f64(parts[2])?,
                parse_f64(parts[3])?,
                parse_f64(parts[4])?,
            )?;
            return Ok(Penalty::Flex(flex));
        }
        Ok(Penalty::Flex(preset(s)?))
    }
}

macro_rules! delegate {
    ($self:ident, $method:ident $(, $arg:expr)*) => {
        match $self {
            Penalty::Base(d) => d.$method($($arg),*),
            Penalty::Flex(f) => f.$method($($arg),*),
        }
    };
}

impl ConvexGenerator for Penalty {
    fn zeta_domain(&self) -> Interval {
        delegate!(self, zeta_domain)
    }
    fn e_domain(&self) -> Interval {
        delegate!(self, e_domain)
    }
    fn gstar(&self, zeta: f64) -> Result<f64> {
        delegate!(self, gstar, zeta)
    }
    fn gstar_prime(&self, zeta: f64) -> Result<f64> {
        delegate!(self, gstar_prime, zeta)
    }
    fn gstar_second(&self, zeta: f64) -> Result<f64> {
        delegate!(self, gstar_second, zeta)
    }
    fn gstar_prime_inv(&self, e: f64) -> Result<f64> {
        delegate!(self, gstar_prime_inv, e)
    }
    fn conj(&self, e: f64) -> Result<f64> {
        delegate!(self, conj, e)
    }
}

/// Choice of the primal linear term `L_P`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LpMode {
    /// `(1−γ)·p₀(s)·ν(s)`
    InitDist,
    /// `(1−γ)·ν(s)`
    UniformValue,
    /// `−e_θ(s,a)`
    NegTdError,
    /// `−ê(s,a)`
    NegEstimatedTd,
}

impl LpMode {
    /// Modes that fold `L_P` into the loss as `−e + g(e)`.
    pub fn is_neg_td(&self) -> bool {
        matches!(self, LpMode::NegTdError | LpMode::NegEstimatedTd)
    }

    pub fn name(&self) -> &'static str {
        match self {
            LpMode::InitDist => "init_dist",
            LpMode::UniformValue => "uniform_value",
            LpMode::NegTdError => "neg_td_error",
            LpMode::NegEstimatedTd => "neg_estimated_td",
        }
    }
}

impl fmt::Display for LpMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LpMode {
    type Err = FlexError;

    fn from_str(s: &str) -> Result<Self> {
        match normalize_name(s).as_str() {
            "init_dist" => Ok(LpMode::InitDist),
            "uniform_value" => Ok(LpMode::UniformValue),
            "neg_td_error" => Ok(LpMode::NegTdError),
            "neg_estimated_td" => Ok(LpMode::NegEstimatedTd),
            _ => Err(FlexError::Parse(format!("unknown lp mode `{s}`"))),
        }
    }
}

/// A generator together with the `L_P` choice and global weight used to turn
/// it into a per-sample Bellman-error loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossProfile {
    pub penalty: Penalty,
    pub lp_mode: LpMode,
    /// Perspective weight: the penalty is applied as `α_g·g(e/α_g)`.
    pub alpha_g: f64,
    /// Optional clipping of `e` before evaluation; without it, errors outside
    /// the conjugate domain are reported.
    pub clip: Option<Interval>,
}

impl LossProfile {
    pub fn new(penalty: impl Into<Penalty>, lp_mode: LpMode) -> Self {
        LossProfile {
            penalty: penalty.into(),
            lp_mode,
            alpha_g: 1.0,
            clip: None,
        }
    }

    pub fn with_alpha_g(mut self, alpha_g: f64) -> Self {
        self.alpha_g = alpha_g;
        self
    }

    pub fn with_clip(mut self, clip: Interval) -> Self {
        self.clip = Some(clip);
        self
    }

    fn clipped(&self, e: f64) -> f64 {
        match self.clip {
            Some(c) => c.clamp(e),
            None => e,
        }
    }

    /// `−e + α_g·g(e/α_g)` for the neg-TD modes, `α_g·g(e/α_g)` otherwise.
    pub fn bellman_loss(&self, e: f64) -> Result<f64> {
        let e = self.clipped(e);
        let g = self.alpha_g * self.penalty.conj(e / self.alpha_g)?;
        Ok(if self.lp_mode.is_neg_td() { g - e } else { g })
    }

    /// Derivative of [`bellman_loss`](Self::bellman_loss) in `e`; zero where
    /// clipping is active.
    pub fn bellman_loss_grad(&self, e: f64) -> Result<f64> {
        let c = self.clipped(e);
        if c != e {
            return Ok(0.0);
        }
        let zeta = self.penalty.gstar_prime_inv(e / self.alpha_g)?;
        Ok(if self.lp_mode.is_neg_td() { zeta - 1.0 } else { zeta })
    }
}

/// Free-function form of [`LossProfile::bellman_loss`].
pub fn bellman_loss(profile: &LossProfile, e: f64) -> Result<f64> {
    profile.bellman_loss(e)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::E;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn table_values() {
        use Divergence::*;
        assert_eq!(Chi2.gstar(1.0).unwrap(), 0.0);
        assert!(close(Chi2.gstar(3.0).unwrap(), 2.0, 1e-15));
        assert!(close(Kl.gstar(E).unwrap(), 1.0, 1e-15));
        assert_eq!(Kl.conj(0.0).unwrap(), 0.0);
        assert!(close(Kl.conj(1.0).unwrap(), 1.718281828459045, 1e-15));
        assert!(close(Chi2.conj(2.0).unwrap(), 4.0, 1e-15));
        assert!(close(LeCam.conj(0.25).unwrap(), 0.75, 1e-15));
        assert_eq!(Chi2.gstar_prime(1.0).unwrap(), 0.0);
        assert!(close(LeCam.gstar_prime(1.0).unwrap(), 0.0, 1e-16));
        assert!(close(Hellinger.gstar_prime(4.0).unwrap(), 0.25, 1e-16));
        assert_eq!(Chi2.gstar_prime_inv(0.0).unwrap(), 1.0);
        assert_eq!(Kl.gstar_prime_inv(0.0).unwrap(), 1.0);
        assert!(close(Hellinger.gstar_prime_inv(0.25).unwrap(), 4.0, 1e-15));
    }

    #[test]
    fn domain_errors() {
        use Divergence::*;
        assert!(matches!(ReverseKl.gstar(0.0), Err(FlexError::Domain { .. })));
        assert!(matches!(ReverseKl.gstar(-1.0), Err(FlexError::Domain { .. })));
        assert!(LeCam.conj(0.2500001).is_err());
        assert!(ReverseKl.conj(1.0).is_err());
        assert!(Hellinger.conj(0.5).is_err());
        assert!(Kl.gstar_prime(0.0).is_err());
        // closed endpoints return their limits
        assert_eq!(Kl.gstar(0.0).unwrap(), 1.0);
        assert_eq!(Hellinger.gstar(0.0).unwrap(), 0.5);
        assert!(LeCam.gstar_prime_inv(0.25).unwrap().is_infinite());
        // chi2 accepts negative ratios
        assert_eq!(Chi2.gstar(-1.0).unwrap(), 2.0);
    }

    #[test]
    fn compose_examples() {
        use Divergence::*;
        let f = compose_flex(Chi2, Chi2, 1.0, 1.0, 0.5).unwrap();
        assert_eq!((f.k_g(), f.c_g(), f.beta_e()), (0.0, 0.0, -0.5));

        let f = compose_flex(Chi2, Chi2, 1.0 / 0.3, 1.0 / 0.7, 1.0).unwrap();
        assert_eq!((f.k_g(), f.c_g(), f.beta_e()), (0.0, 0.0, 0.0));

        let f = compose_flex(Chi2, Chi2, 2.0, 1.0, 0.5).unwrap();
        assert!(close(f.k_g(), -0.5, 1e-15));
        assert!(close(f.c_g(), 0.375, 1e-15));
        let (lo, hi) = f.branch_values(0.5).unwrap();
        assert!(close(lo, hi, 1e-15));
        let (dlo, dhi) = f.branch_derivatives(0.5).unwrap();
        assert!(close(dlo, dhi, 1e-15));
    }

    #[test]
    fn compose_rejects_bad_threshold() {
        use Divergence::*;
        assert!(matches!(
            compose_flex(Kl, Chi2, 1.0, 1.0, 0.0),
            Err(FlexError::InvalidThreshold { .. })
        ));
        assert!(matches!(
            compose_flex(LeCam, Chi2, 1.0, 1.0, -2.0),
            Err(FlexError::InvalidThreshold { .. })
        ));
        assert!(compose_flex(Chi2, Chi2, 0.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn flex_conjugate_matches_argmax_form() {
        let f = compose_flex(Divergence::LeCam, Divergence::Chi2, 0.5, 2.0, 0.7).unwrap();
        for i in 0..50 {
            let e = -2.0 + 0.1 * i as f64;
            let z = f.gstar_prime_inv(e).unwrap();
            let direct = e * z - f.gstar(z).unwrap();
            assert!(close(direct, f.conj(e).unwrap(), 1e-12), "e = {e}");
        }
    }

    #[test]
    fn flex_e_domain_follows_upper_branch() {
        let f = compose_flex(Divergence::Chi2, Divergence::LeCam, 1.0, 2.0, 1.5).unwrap();
        let dom = f.e_domain();
        assert!(dom.hi_closed);
        assert!(close(dom.hi, 2.0 * 0.25 + f.k_g(), 1e-15));
        assert!(f.conj(dom.hi).unwrap().is_finite());
        assert!(f.conj(dom.hi + 1e-9).is_err());
    }

    #[test]
    fn bellman_loss_examples() {
        let chi2 = LossProfile::new(Divergence::Chi2, LpMode::NegTdError);
        for e in [-3.0, -0.5, 0.0, 1.0, 2.5] {
            assert!(close(chi2.bellman_loss(e).unwrap(), 0.5 * e * e, 1e-14));
        }
        let kl = LossProfile::new(Divergence::Kl, LpMode::NegTdError);
        assert_eq!(kl.bellman_loss(0.0).unwrap(), 0.0);
        let iql = LossProfile::new(preset("iql:0.7").unwrap(), LpMode::NegTdError);
        assert!(close(iql.bellman_loss(1.0).unwrap(), 0.35, 1e-14));
        let plain = LossProfile::new(Divergence::Chi2, LpMode::InitDist);
        assert!(close(plain.bellman_loss(2.0).unwrap(), 4.0, 1e-15));
    }

    #[test]
    fn bellman_loss_clip_and_domain() {
        let lc = LossProfile::new(Divergence::LeCam, LpMode::NegTdError);
        assert!(lc.bellman_loss(0.3).is_err());
        let clipped = lc.with_clip(Interval::closed(-0.2, 0.15));
        assert_eq!(clipped.bellman_loss(0.3).unwrap(), clipped.bellman_loss(0.15).unwrap());
        assert_eq!(clipped.bellman_loss_grad(0.3).unwrap(), 0.0);
    }

    #[test]
    fn presets() {
        let f = preset("iql:0.5").unwrap();
        assert_eq!((f.alpha_minus(), f.alpha_plus()), (2.0, 2.0));
        for z in [-1.0, 0.2, 1.0, 3.0] {
            assert!(close(f.gstar(z).unwrap(), 2.0 * Divergence::Chi2.gstar(z).unwrap(), 1e-15));
        }
        let xql = LossProfile::new(preset("xql").unwrap(), LpMode::NegTdError);
        for e in [-1.0, 0.0, 0.5, 2.0] {
            assert!(close(xql.bellman_loss(e).unwrap(), e.exp() - e - 1.0, 1e-14));
        }
        assert_eq!(preset("relax_dice").unwrap().beta_e(), 0.0);
        assert_eq!(preset("relax-dice").unwrap().alpha_plus(), 2.0);
        let p = preset("porel_dice(0.1)").unwrap();
        assert_eq!((p.g_minus(), p.alpha_minus()), (Divergence::LeCam, 0.1));
        assert!(matches!(preset("optidice"), Err(FlexError::UnknownPreset(_))));
        assert!(preset("iql:1.5").is_err());
    }

    #[test]
    fn penalty_parsing_round_trip() {
        for s in ["kl", "flex(le_cam,chi2,0.5,2,0.8)", "iql:0.7", "soft_chi2"] {
            let p: Penalty = s.parse().unwrap();
            let again: Penalty = p.to_string().parse().unwrap();
            assert_eq!(p, again, "{s}");
        }
    }

    #[test]
    fn presets_keep_their_names() {
        for s in ["iql:0.7", "iql:0.9", "soft_chi2", "xql", "relax_dice", "porel_dice:0.5"] {
            assert_eq!(s.parse::<Penalty>().unwrap().to_string(), s);
        }
        let p: Penalty = "flex(le_cam,chi2,0.5,2,0.8)".parse().unwrap();
        assert_eq!(p.to_string(), "flex(le_cam,chi2,0.5,2,0.8)");
    }
}
