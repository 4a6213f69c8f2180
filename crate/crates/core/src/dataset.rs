//! Offline datasets and behavior-mixture synthesis.
//!
//! Behavior policies are greedy with respect to checkpoints of asynchronous
//! value iteration (one single-state backup per checkpoint, states picked by
//! a seeded generator), the tabular stand-in for checkpoints of an online
//! learner. Each mixture component is calibrated to a target fraction of
//! expert performance measured as a min-max normalized return.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{FlexError, Result};
use crate::lp_oracle::value_iteration;
use crate::mdp::{sample_index, OccupancyMeasure, TabularMdp, TabularPolicy};

/// Calibrated components must land within this many points of their target.
pub const CALIBRATION_TOLERANCE: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub s: usize,
    pub a: usize,
    pub r: f64,
    pub s_next: usize,
    pub done: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Mixture {
    /// Expert plus one policy at 30-50% of expert performance.
    TwoPolicy,
    /// Expert, 60%, 30% and 10% policies.
    FourPolicy,
    /// Ten evenly spaced checkpoints up to 90% of expert performance.
    TenPolicy,
    Custom(String),
}

impl fmt::Display for Mixture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Mixture::TwoPolicy => f.write_str("2p"),
            Mixture::FourPolicy => f.write_str("4p"),
            Mixture::TenPolicy => f.write_str("10p"),
            Mixture::Custom(s) => f.write_str(s),
        }
    }
}

impl FromStr for Mixture {
    type Err = FlexError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "").as_str() {
            "2p" => Ok(Mixture::TwoPolicy),
            "4p" => Ok(Mixture::FourPolicy),
            "10p" => Ok(Mixture::TenPolicy),
            _ => Err(FlexError::Parse(format!("unknown mixture `{s}` (expected 2p, 4p or 10p)"))),
        }
    }
}

/// One behavior policy of a mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct BehaviorComponent {
    pub label: String,
    /// Asynchronous value-iteration checkpoint; `None` for the converged expert.
    pub checkpoint: Option<usize>,
    pub normalized_return: f64,
    pub n_trajectories: usize,
    pub actions: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OfflineDataset {
    pub transitions: Vec<Transition>,
    pub initial_states: Vec<usize>,
    pub mixture_label: Mixture,
    pub components: Vec<BehaviorComponent>,
}

impl OfflineDataset {
    pub fn new(transitions: Vec<Transition>, initial_states: Vec<usize>, mixture_label: Mixture) -> Result<Self> {
        if initial_states.is_empty() {
            return Err(FlexError::InvalidParameter("dataset needs at least one initial state".into()));
        }
        Ok(OfflineDataset {
            transitions,
            initial_states,
            mixture_label,
            components: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    /// Every transition must have positive probability under the model.
    pub fn check_consistency(&self, mdp: &TabularMdp) -> Result<()> {
        let (ns, na) = (mdp.n_states(), mdp.n_actions());
        for (i, t) in self.transitions.iter().enumerate() {
            if t.s >= ns || t.s_next >= ns || t.a >= na {
                return Err(FlexError::InvalidModel(format!("transition {i} indexes outside the MDP")));
            }
            if mdp.next_dist(t.s, t.a)[t.s_next] <= 0.0 {
                return Err(FlexError::InvalidModel(format!(
                    "transition {i} ({} -{}-> {}) has zero model probability",
                    t.s, t.a, t.s_next
                )));
            }
        }
        if let Some(&s) = self.initial_states.iter().find(|&&s| s >= ns) {
            return Err(FlexError::InvalidModel(format!("initial state {s} outside the MDP")));
        }
        Ok(())
    }

    /// Empirical state-action distribution `d^D`.
    pub fn distribution(&self, n_states: usize, n_actions: usize) -> DataDistribution {
        let mut d = vec![0.0; n_states * n_actions];
        for t in &self.transitions {
            d[t.s * n_actions + t.a] += 1.0;
        }
        let n = self.transitions.len().max(1) as f64;
        d.iter_mut().for_each(|x| *x /= n);
        DataDistribution { n_states, n_actions, d }
    }

    /// Empirical behavior policy; unvisited states get the uniform row.
    pub fn empirical_policy(&self, n_states: usize, n_actions: usize) -> TabularPolicy {
        let dist = self.distribution(n_states, n_actions);
        let mut probs = vec![1.0 / n_actions as f64; n_states * n_actions];
        for s in 0..n_states {
            let row = &dist.d[s * n_actions..(s + 1) * n_actions];
            let mass: f64 = row.iter().sum();
            if mass > 0.0 {
                for a in 0..n_actions {
                    probs[s * n_actions + a] = row[a] / mass;
                }
            }
        }
        TabularPolicy::from_probs_unchecked(n_states, n_actions, probs)
    }

    /// States that appear as a transition source.
    pub fn visited_states(&self, n_states: usize) -> Vec<bool> {
        let mut v = vec![false; n_states];
        for t in &self.transitions {
            v[t.s] = true;
        }
        v
    }

    /// Most frequent dataset action per visited state, ties to the lowest id.
    pub fn majority_actions(&self, n_states: usize, n_actions: usize) -> Vec<Option<usize>> {
        let dist = self.distribution(n_states, n_actions);
        (0..n_states)
            .map(|s| {
                let row = &dist.d[s * n_actions..(s + 1) * n_actions];
                if row.iter().all(|&x| x == 0.0) {
                    None
                } else {
                    Some(crate::mdp::argmax(row))
                }
            })
            .collect()
    }
}

/// State-action weights `d^D(s,a)` used for expectations over the dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct DataDistribution {
    pub n_states: usize,
    pub n_actions: usize,
    pub d: Vec<f64>,
}

impl DataDistribution {
    pub fn from_occupancy(occ: &OccupancyMeasure) -> Self {
        DataDistribution {
            n_states: occ.n_states,
            n_actions: occ.n_actions,
            d: occ.d.clone(),
        }
    }

    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.d[s * self.n_actions + a]
    }

    /// Indices `s * n_actions + a` with positive weight.
    pub fn support(&self) -> Vec<usize> {
        (0..self.d.len()).filter(|&i| self.d[i] > 0.0).collect()
    }

    pub fn state_marginal(&self) -> Vec<f64> {
        self.d.chunks(self.n_actions).map(|r| r.iter().sum()).collect()
    }
}

/// Min-max normalized return `100·(J − J_rand)/(J* − J_rand)` of a policy,
/// with the uniform policy as the random reference.
pub struct ReturnScale {
    pub random: f64,
    pub optimal: f64,
}

impl ReturnScale {
    pub fn new(mdp: &TabularMdp) -> Result<Self> {
        let random = mdp.expected_return(&mdp.policy_value(&TabularPolicy::uniform(mdp.n_states(), mdp.n_actions()))?);
        let optimal = mdp.expected_return(&value_iteration(mdp, 1e-12));
        Ok(ReturnScale { random, optimal })
    }

    pub fn normalize(&self, ret: f64) -> f64 {
        let span = self.optimal - self.random;
        if span.abs() < 1e-15 {
            return 100.0;
        }
        100.0 * (ret - self.random) / span
    }

    pub fn normalized_value(&self, mdp: &TabularMdp, policy: &TabularPolicy) -> Result<f64> {
        Ok(self.normalize(mdp.expected_return(&mdp.policy_value(policy)?)))
    }
}

/// Normalized returns of the greedy policies along asynchronous value
/// iteration, plus the greedy action tables.
struct CheckpointLadder {
    actions: Vec<Vec<usize>>,
    returns: Vec<f64>,
}

fn greedy_actions(mdp: &TabularMdp, v: &[f64]) -> Vec<usize> {
    let q = mdp.q_from_v(v).expect("value table shape");
    q.chunks(mdp.n_actions()).map(crate::mdp::argmax).collect()
}

/// Ladders tried per seed before calibration gives up.
const LADDER_STREAMS: u64 = 16;

fn checkpoint_ladder(mdp: &TabularMdp, scale: &ReturnScale, seed: u64, stream: u64) -> Result<CheckpointLadder> {
    let n = mdp.n_states();
    let max_backups = 40 * n;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let mut v = vec![0.0; n];
    let mut cache: HashMap<Vec<usize>, f64> = HashMap::new();
    let mut ladder = CheckpointLadder {
        actions: Vec::with_capacity(max_backups + 1),
        returns: Vec::with_capacity(max_backups + 1),
    };
    for k in 0..=max_backups {
        let actions = greedy_actions(mdp, &v);
        let ret = match cache.get(&actions) {
            Some(&r) => r,
            None => {
                let pi = TabularPolicy::deterministic(mdp.n_actions(), &actions);
                let r = scale.normalized_value(mdp, &pi)?;
                cache.insert(actions.clone(), r);
                r
            }
        };
        ladder.actions.push(actions);
        ladder.returns.push(ret);
        if k < max_backups {
            let s = rng.gen_range(0..n);
            let q = mdp.q_from_v(&v)?;
            v[s] = q[s * mdp.n_actions()..(s + 1) * mdp.n_actions()]
                .iter()
                .copied()
                .fold(f64::NEG_INFINITY, f64::max);
        }
    }
    Ok(ladder)
}

impl CheckpointLadder {
    /// First checkpoint closest to `target`.
    fn closest(&self, target: f64) -> Result<usize> {
        let mut best = 0;
        for (k, r) in self.returns.iter().enumerate() {
            if (r - target).abs() < (self.returns[best] - target).abs() {
                best = k;
            }
        }
        let closest = self.returns[best];
        if (closest - target).abs() > CALIBRATION_TOLERANCE {
            return Err(FlexError::Calibration { target, closest });
        }
        Ok(best)
    }
}

fn component(label: &str, ladder: &CheckpointLadder, k: usize) -> BehaviorComponent {
    BehaviorComponent {
        label: label.to_string(),
        checkpoint: Some(k),
        normalized_return: ladder.returns[k],
        n_trajectories: 0,
        actions: ladder.actions[k].clone(),
    }
}

/// Pick the behavior components of a mixture.
pub fn behavior_components(mdp: &TabularMdp, mixture: &Mixture, seed: u64) -> Result<Vec<BehaviorComponent>> {
    let scale = ReturnScale::new(mdp)?;
    let v_star = value_iteration(mdp, 1e-12);
    let expert_actions = greedy_actions(mdp, &v_star);
    let expert = BehaviorComponent {
        label: "expert".into(),
        checkpoint: None,
        normalized_return: scale.normalized_value(mdp, &TabularPolicy::deterministic(mdp.n_actions(), &expert_actions))?,
        n_trajectories: 0,
        actions: expert_actions,
    };
    if let Mixture::Custom(name) = mixture {
        return Err(FlexError::InvalidParameter(format!("cannot synthesize custom mixture `{name}`")));
    }
    // a ladder can jump over a target; later streams give other orderings
    let mut first_err = None;
    for stream in 1..=LADDER_STREAMS {
        let ladder = checkpoint_ladder(mdp, &scale, seed, stream)?;
        match ladder_components(mixture, &ladder) {
            Ok(rest) if *mixture == Mixture::TenPolicy => return Ok(rest),
            Ok(rest) => return Ok(std::iter::once(expert.clone()).chain(rest).collect()),
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    Err(first_err.expect("at least one ladder"))
}

fn ladder_components(mixture: &Mixture, ladder: &CheckpointLadder) -> Result<Vec<BehaviorComponent>> {
    let mut out = Vec::new();
    match mixture {
        Mixture::TwoPolicy => out.push(component("medium", ladder, ladder.closest(40.0)?)),
        Mixture::FourPolicy => {
            for (label, target) in [("sub_optimal", 60.0), ("medium", 30.0), ("low", 10.0)] {
                out.push(component(label, ladder, ladder.closest(target)?));
            }
        }
        Mixture::TenPolicy => {
            let last = ladder.closest(90.0)?;
            for i in 1..=10 {
                let k = (i * last + 5) / 10;
                out.push(component(&format!("ckpt{i}"), ladder, k));
            }
        }
        Mixture::Custom(_) => unreachable!(),
    }
    Ok(out)
}

/// Roll out a behavior mixture. A pure function of its arguments.
pub fn synthesize_dataset(
    mdp: &TabularMdp,
    mixture: &Mixture,
    n_trajectories: usize,
    horizon: usize,
    seed: u64,
) -> Result<OfflineDataset> {
    if n_trajectories == 0 || horizon == 0 {
        return Err(FlexError::InvalidParameter("need at least one trajectory of positive length".into()));
    }
    let mut components = behavior_components(mdp, mixture, seed)?;
    let n_comp = components.len();
    for (i, c) in components.iter_mut().enumerate() {
        c.n_trajectories = n_trajectories / n_comp + usize::from(i < n_trajectories % n_comp);
    }
    let absorbing = mdp.absorbing_states();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut transitions = Vec::with_capacity(n_trajectories * horizon);
    let mut initial_states = Vec::with_capacity(n_trajectories);
    for c in &components {
        for _ in 0..c.n_trajectories {
            let mut s = sample_index(mdp.p0(), &mut rng);
            initial_states.push(s);
            for _ in 0..horizon {
                let a = c.actions[s];
                let s_next = sample_index(mdp.next_dist(s, a), &mut rng);
                transitions.push(Transition {
                    s,
                    a,
                    r: mdp.reward(s, a),
                    s_next,
                    done: absorbing[s_next] && !absorbing[s],
                });
                s = s_next;
            }
        }
    }
    Ok(OfflineDataset {
        transitions,
        initial_states,
        mixture_label: mixture.clone(),
        components,
    })
}
