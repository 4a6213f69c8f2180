//! Invariant suites run by `flexrl check` and by the test suite.

use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::DataDistribution;
use crate::divergence::{compose_flex, ConvexGenerator, Divergence, FlexF, Interval, LossProfile, LpMode, Penalty};
use crate::equivalence::{matching_penalty, verify_equivalence, ReferenceLoss};
use crate::error::{FlexError, Result};
use crate::lp_oracle::{duality_gap_report, OracleOptions};
use crate::mdp::{random_mdp, random_policy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Suite {
    Generators,
    Conjugacy,
    Inverse,
    Continuity,
    LossShape,
    Equivalence,
    PerfDiff,
    Duality,
}

impl Suite {
    pub const ALL: [Suite; 8] = [
        Suite::Generators,
        Suite::Conjugacy,
        Suite::Inverse,
        Suite::Continuity,
        Suite::LossShape,
        Suite::Equivalence,
        Suite::PerfDiff,
        Suite::Duality,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Suite::Generators => "generators",
            Suite::Conjugacy => "conjugacy",
            Suite::Inverse => "inverse",
            Suite::Continuity => "continuity",
            Suite::LossShape => "loss_shape",
            Suite::Equivalence => "equivalence",
            Suite::PerfDiff => "perfdiff",
            Suite::Duality => "duality",
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Suite {
    type Err = FlexError;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace(['-', '_'], "");
        Suite::ALL
            .into_iter()
            .find(|x| x.name().replace('_', "") == key)
            .ok_or_else(|| FlexError::Parse(format!("unknown suite `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckOptions {
    pub seed: u64,
    /// Random flexible compositions per generator suite.
    pub n_flex: usize,
    /// Largest state-action count in the duality suite.
    pub max_size: usize,
    pub n_mdps: usize,
}

impl Default for CheckOptions {
    fn default() -> Self {
        CheckOptions {
            seed: 0,
            n_flex: 20,
            max_size: 64,
            n_mdps: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub suite: String,
    pub checked: usize,
    pub max_error: f64,
    pub failures: Vec<String>,
    pub elapsed: Duration,
}

impl SuiteReport {
    fn new(suite: &str) -> Self {
        SuiteReport {
            suite: suite.to_string(),
            checked: 0,
            max_error: 0.0,
            failures: Vec::new(),
            elapsed: Duration::ZERO,
        }
    }

    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }

    fn record(&mut self, err: f64, tol: f64, what: impl FnOnce() -> String) {
        self.checked += 1;
        if err.is_nan() || err > tol {
            self.failures.push(format!("{} (error {err:.3e} > {tol:.0e})", what()));
        }
        if err > self.max_error || err.is_nan() {
            self.max_error = err;
        }
    }

    fn fail(&mut self, what: String) {
        self.checked += 1;
        self.failures.push(what);
    }
}

/// A generator under test with a printable label.
pub struct Subject<'a> {
    pub label: String,
    pub g: &'a dyn ConvexGenerator,
}

/// Random composition of two catalog bases with scales in `[0.2, 5]` and a
/// threshold in `[0.05, 3]`.
pub fn random_flex<R: Rng>(rng: &mut R) -> FlexF {
    let g_minus = Divergence::ALL[rng.gen_range(0..Divergence::ALL.len())];
    let g_plus = Divergence::ALL[rng.gen_range(0..Divergence::ALL.len())];
    let alpha_minus = (rng.gen_range(0.2f64.ln()..5f64.ln())).exp();
    let alpha_plus = (rng.gen_range(0.2f64.ln()..5f64.ln())).exp();
    let beta = rng.gen_range(0.05..3.0);
    compose_flex(g_minus, g_plus, alpha_minus, alpha_plus, beta).expect("positive beta lies inside every catalog domain")
}

/// The five bases plus `n_flex` random compositions.
pub fn standard_penalties(n_flex: usize, seed: u64) -> Vec<Penalty> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<Penalty> = Divergence::ALL.iter().map(|&d| d.into()).collect();
    out.extend((0..n_flex).map(|_| Penalty::Flex(random_flex(&mut rng))));
    out
}

/// `n` interior points of the e-domain, within `[-3, 3]` and kept `1e-3`
/// away from a finite upper endpoint.
pub fn e_grid(dom: Interval, n: usize) -> Vec<f64> {
    let lo = dom.lo.max(-3.0);
    let hi = if dom.hi.is_finite() { (dom.hi - 1e-3).min(3.0) } else { 3.0 };
    let lo = if dom.lo.is_finite() { lo + 1e-3 } else { lo };
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

/// `sup_ζ eζ − g*(ζ)` by outward bracketing from ζ = 1 followed by a
/// golden-section search. Uses only `g*`.
pub fn numeric_conjugate(g: &dyn ConvexGenerator, e: f64) -> f64 {
    let dom = g.zeta_domain();
    let h = |z: f64| -> f64 {
        match g.gstar(z) {
            Ok(v) if dom.contains(z) => e * z - v,
            _ => f64::NEG_INFINITY,
        }
    };
    let lo_limit = if dom.lo.is_finite() { dom.lo } else { f64::NEG_INFINITY };
    let clamp_lo = |z: f64| if z < lo_limit { lo_limit } else { z };
    // bracket [a, b] around the maximizer of the concave h
    let (mut a, mut b) = (1.0, 1.0);
    let mut step = 0.5;
    if h(1.5) > h(1.0) {
        while h(b + step) > h(b) && b < 1e8 {
            a = b;
            b += step;
            step *= 2.0;
        }
        b += step;
    } else {
        loop {
            let next = clamp_lo(a - step);
            if next == a || h(next) <= h(a) || a < -1e8 {
                a = next;
                break;
            }
            b = a;
            a = next;
            step *= 2.0;
        }
        b = b.max(1.5);
    }
    if a == lo_limit && !dom.lo_closed {
        a += 1e-300f64.max(f64::EPSILON * lo_limit.abs());
    }
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut best = h(a).max(h(b));
    for _ in 0..300 {
        let c = b - phi * (b - a);
        let d = a + phi * (b - a);
        let (hc, hd) = (h(c), h(d));
        best = best.max(hc).max(hd);
        if hc >= hd {
            b = d;
        } else {
            a = c;
        }
        if (b - a).abs() <= 1e-15 * (1.0 + a.abs()) {
            break;
        }
    }
    best.max(h(0.5 * (a + b)))
}

pub fn conjugacy_suite(subjects: &[Subject<'_>], n_points: usize, tol: f64) -> SuiteReport {
    let mut rep = SuiteReport::new("conjugacy");
    for sub in subjects {
        for e in e_grid(sub.g.e_domain(), n_points) {
            match sub.g.conj(e) {
                Ok(v) => {
                    let num = numeric_conjugate(sub.g, e);
                    rep.record((v - num).abs() / (1.0 + num.abs()), tol, || format!("{} at e={e}", sub.label));
                }
                Err(err) => rep.fail(format!("{} at e={e}: {err}", sub.label)),
            }
        }
    }
    rep
}

pub fn generators_suite() -> SuiteReport {
    let mut rep = SuiteReport::new("generators");
    for d in Divergence::ALL {
        rep.record(d.gstar(1.0).map_or(f64::NAN, f64::abs), 0.0, || format!("{d}: g*(1)"));
        rep.record(d.gstar_prime(1.0).map_or(f64::NAN, f64::abs), 1e-12, || format!("{d}: g*'(1)"));
    }
    rep
}

pub fn inverse_suite(subjects: &[Subject<'_>], n_points: usize) -> SuiteReport {
    let mut rep = SuiteReport::new("inverse");
    for sub in subjects {
        for e in e_grid(sub.g.e_domain(), n_points) {
            let back = sub.g.gstar_prime_inv(e).and_then(|z| sub.g.gstar_prime(z));
            rep.record(back.map_or(f64::NAN, |b| (b - e).abs()), 1e-8, || format!("{} at e={e}", sub.label));
        }
        let zd = sub.g.zeta_domain();
        for i in 1..n_points {
            let z = if zd.lo.is_finite() { zd.lo } else { -3.0 } + 6.0 * i as f64 / n_points as f64;
            if !zd.contains_interior(z) {
                continue;
            }
            let back = sub.g.gstar_prime(z).and_then(|e| sub.g.gstar_prime_inv(e));
            rep.record(back.map_or(f64::NAN, |b| (b - z).abs() / (1.0 + z.abs())), 1e-10, || format!("{} at zeta={z}", sub.label));
        }
    }
    rep
}

/// Value and derivative agreement of the two branch expressions at β, plus
/// the constant-bias identity of the corrected branch.
pub fn continuity_suite(n_draws: usize, seed: u64) -> SuiteReport {
    let mut rep = SuiteReport::new("continuity");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..n_draws {
        let f = random_flex(&mut rng);
        let b = f.beta();
        let (lv, uv) = f.branch_values(b).expect("beta inside both branches");
        let (ld, ud) = f.branch_derivatives(b).expect("beta inside both branches");
        rep.record((lv - uv).abs() / (1.0 + lv.abs()), 1e-9, || format!("{f}: value jump"));
        rep.record((ld - ud).abs() / (1.0 + ld.abs()), 1e-9, || format!("{f}: derivative jump"));
        // nearby one-sided evaluations through the public g*
        let h = 1e-7;
        let lo = f.gstar(b - h).unwrap() + h * f.gstar_prime(b - h).unwrap();
        let hi = f.gstar(b + h).unwrap() - h * f.gstar_prime(b + h).unwrap();
        rep.record((lo - hi).abs() / (1.0 + lo.abs()), 1e-9, || format!("{f}: one-sided limits"));
        let (sl, su) = (f.gstar_prime(b - h).unwrap(), f.gstar_prime(b + h).unwrap());
        if sl >= su {
            rep.fail(format!("{f}: derivative not increasing across the join"));
        }
        let z = if f.corrects_lower() { 0.5 * b } else { 2.0 * b + 0.5 };
        let (g, alpha) = if f.corrects_lower() { (f.g_minus(), f.alpha_minus()) } else { (f.g_plus(), f.alpha_plus()) };
        if g.zeta_domain().contains_interior(z) {
            let raw = alpha * g.gstar(z).unwrap();
            let sign = if f.corrects_lower() { -1.0 } else { 1.0 };
            let expected = raw + sign * (f.k_g() * z + f.c_g());
            rep.record((f.gstar(z).unwrap() - expected).abs() / (1.0 + expected.abs()), 1e-12, || format!("{f}: bias at {z}"));
        }
    }
    rep
}

/// `−e + g(e)` is nonnegative, zero at 0, convex, and minimized at 0.
pub fn loss_shape_suite(subjects: &[Subject<'_>], n_points: usize) -> SuiteReport {
    let mut rep = SuiteReport::new("loss_shape");
    for sub in subjects {
        let loss = |e: f64| -> f64 { sub.g.conj(e).map_or(f64::NAN, |g| g - e) };
        rep.record(loss(0.0).abs(), 1e-12, || format!("{}: loss(0)", sub.label));
        let h = 1e-4;
        for e in e_grid(sub.g.e_domain(), n_points) {
            let l = loss(e);
            rep.record((-l).max(0.0), 1e-12, || format!("{}: negative loss at {e}", sub.label));
            if sub.g.e_domain().contains_interior(e + h) {
                let second = loss(e + h) - 2.0 * l + loss(e - h);
                rep.record((-second).max(0.0), 1e-6, || format!("{}: concave at {e}", sub.label));
            }
        }
        let dom = sub.g.e_domain();
        let (mut a, mut b) = (dom.lo.max(-2.0), if dom.hi.is_finite() { dom.hi - 1e-6 } else { 2.0 }.min(2.0));
        let phi = (5f64.sqrt() - 1.0) / 2.0;
        for _ in 0..200 {
            let c = b - phi * (b - a);
            let d = a + phi * (b - a);
            if loss(c) <= loss(d) {
                b = d;
            } else {
                a = c;
            }
        }
        rep.record((0.5 * (a + b)).abs(), 1e-6, || format!("{}: argmin", sub.label));
    }
    rep
}

pub fn equivalence_suite() -> SuiteReport {
    let mut rep = SuiteReport::new("equivalence");
    let mut cases = vec![(ReferenceLoss::Xql, Interval::closed(-2.0, 2.0), 1e-10), (ReferenceLoss::Mse, Interval::closed(-5.0, 5.0), 1e-12)];
    for tau in [0.1, 0.3, 0.5, 0.7, 0.9] {
        cases.push((ReferenceLoss::Iql(tau), Interval::closed(-3.0, 3.0), 1e-10));
    }
    for (r, grid, tol) in cases {
        let gap = matching_penalty(r).and_then(|p| verify_equivalence(r, p, grid, 1001));
        rep.record(gap.unwrap_or(f64::NAN), tol, || format!("{r} over {grid}"));
    }
    rep
}

pub fn perf_diff_suite(n_triples: usize, seed: u64) -> SuiteReport {
    let mut rep = SuiteReport::new("perfdiff");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..n_triples {
        let ns = rng.gen_range(1..=6);
        let na = rng.gen_range(1..=3);
        let gamma = rng.gen_range(0.0..0.95);
        let mdp = random_mdp(ns, na, gamma, &mut rng).expect("valid random model");
        let pi = random_policy(ns, na, &mut rng);
        let nu: Vec<f64> = (0..ns).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let r = mdp.perf_diff_check(&pi, &nu);
        rep.record(r.map_or(f64::NAN, f64::abs), 1e-8, || format!("triple {i} ({ns}x{na}, gamma {gamma:.3})"));
    }
    rep
}

/// Strong duality on random models whose data distribution is the exact
/// occupancy of a random full-support policy.
pub fn duality_suite(opts: &CheckOptions) -> SuiteReport {
    let mut rep = SuiteReport::new("duality");
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x5eed);
    let max = opts.max_size.max(1);
    for i in 0..opts.n_mdps {
        let ns = rng.gen_range(1..=max.min(8));
        let na = rng.gen_range(1..=(max / ns).clamp(1, 4));
        let gamma = rng.gen_range(0.5..0.95);
        let mdp = random_mdp(ns, na, gamma, &mut rng).expect("valid random model");
        let pi = random_policy(ns, na, &mut rng);
        let dist = DataDistribution::from_occupancy(&mdp.exact_occupancy(&pi).expect("occupancy"));
        for div in [Divergence::Chi2, Divergence::Kl] {
            for alpha_g in [0.1, 1.0] {
                let what = || format!("mdp {i} ({ns}x{na}) {div} alpha_g={alpha_g}");
                match duality_gap_report(&mdp, &dist, &div, LpMode::InitDist, alpha_g, &OracleOptions::default()) {
                    Ok(sol) => rep.record(sol.duality_gap, 1e-5, what),
                    Err(e) => rep.fail(format!("{}: {e}", what())),
                }
            }
        }
    }
    rep
}

pub fn run_suite(suite: Suite, opts: &CheckOptions) -> SuiteReport {
    let start = Instant::now();
    let penalties = standard_penalties(opts.n_flex, opts.seed);
    let subjects: Vec<Subject<'_>> = penalties
        .iter()
        .map(|p| Subject {
            label: p.to_string(),
            g: p as &dyn ConvexGenerator,
        })
        .collect();
    let mut rep = match suite {
        Suite::Generators => generators_suite(),
        Suite::Conjugacy => conjugacy_suite(&subjects, 100, 1e-6),
        Suite::Inverse => inverse_suite(&subjects, 100),
        Suite::Continuity => continuity_suite(1000, opts.seed),
        Suite::LossShape => loss_shape_suite(&subjects, 200),
        Suite::Equivalence => equivalence_suite(),
        Suite::PerfDiff => perf_diff_suite(100, opts.seed),
        Suite::Duality => duality_suite(opts),
    };
    rep.elapsed = start.elapsed();
    rep
}

/// The loss used by the loss-shape suite, exposed for callers that plot it.
pub fn neg_td_profile(p: Penalty) -> LossProfile {
    LossProfile::new(p, LpMode::NegTdError)
}
