//! Flex-f-Q and Flex-f-DICE on tabular parameterizations.
//!
//! Flex-f-Q regresses `Q(s,a)` onto `r + γν(s')`, then takes a semi-gradient
//! step on the flexible loss of `ê = Q − ν` (the critic held fixed).
//! Flex-f-DICE takes a full gradient step on `L_P + α_g·E[g(e_θ/α_g)]`,
//! regresses `e_φ` onto `e_θ`, and weights the policy by `max(0, ζ*(ê))`.
//! Both extract the policy by advantage-weighted regression.

use std::fmt;
use std::str::FromStr;

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::adaptive::{AdaptiveConfig, AdaptiveState};
use crate::dataset::{OfflineDataset, ReturnScale, Transition};
use crate::divergence::{ConvexGenerator, Interval, LpMode, Penalty};
use crate::error::{FlexError, Result};
use crate::mdp::{sample_index, softmax_into, TabularMdp, TabularPolicy};

/// Largest exponent allowed in the advantage weights.
pub const AWR_MAX_EXPONENT: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Algorithm {
    FlexFQ,
    FlexFDice,
}

impl Algorithm {
    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::FlexFQ => "flex_f_q",
            Algorithm::FlexFDice => "flex_f_dice",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = FlexError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "flex_f_q" | "q" => Ok(Algorithm::FlexFQ),
            "flex_f_dice" | "dice" => Ok(Algorithm::FlexFDice),
            _ => Err(FlexError::Parse(format!("unknown algorithm `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub algorithm: Algorithm,
    pub penalty: Penalty,
    pub lp_mode: LpMode,
    pub alpha_g: f64,
    pub lr_nu: f64,
    pub lr_critic: f64,
    pub lr_policy: f64,
    pub batch_size: usize,
    pub init_batch_size: usize,
    pub steps: u64,
    pub awr_temperature: f64,
    /// Bounds applied to `ê` before the α±/β estimates.
    pub e_clip: Interval,
    /// Optional clipping of Bellman errors inside the ν loss. Without it an
    /// error outside the conjugate domain aborts the run.
    pub loss_clip: Option<Interval>,
    pub reward_scale: f64,
    pub seed: u64,
    pub eval_interval: u64,
    /// Estimate α± and β on line from the branches of `penalty`.
    pub adaptive: Option<AdaptiveConfig>,
}

impl TrainConfig {
    pub fn new(algorithm: Algorithm, penalty: impl Into<Penalty>) -> Self {
        let (lp_mode, alpha_g) = match algorithm {
            Algorithm::FlexFQ => (LpMode::NegEstimatedTd, 1.0),
            Algorithm::FlexFDice => (LpMode::InitDist, 0.1),
        };
        TrainConfig {
            algorithm,
            penalty: penalty.into(),
            lp_mode,
            alpha_g,
            lr_nu: 1e-2,
            lr_critic: 1e-2,
            lr_policy: 1e-2,
            batch_size: 512,
            init_batch_size: 512,
            steps: 10_000,
            awr_temperature: 3.0,
            e_clip: Interval::closed(-0.2, 0.15),
            loss_clip: None,
            reward_scale: 1.0,
            seed: 0,
            eval_interval: 1_000,
            adaptive: None,
        }
    }

    pub fn with_adaptive(mut self) -> Self {
        self.adaptive = Some(AdaptiveConfig {
            e_clip: self.e_clip,
            lr_bc: self.lr_policy,
            ..AdaptiveConfig::default()
        });
        self
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("alpha_g", self.alpha_g),
            ("lr_nu", self.lr_nu),
            ("lr_critic", self.lr_critic),
            ("lr_policy", self.lr_policy),
            ("awr_temperature", self.awr_temperature),
            ("reward_scale", self.reward_scale),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(FlexError::InvalidParameter(format!("{name} = {v} must be positive")));
            }
        }
        if self.batch_size == 0 || self.init_batch_size == 0 {
            return Err(FlexError::InvalidParameter("batch sizes must be positive".into()));
        }
        if self.eval_interval == 0 {
            return Err(FlexError::InvalidParameter("eval_interval must be positive".into()));
        }
        let dom = self.penalty.e_domain();
        let scaled = Interval::new(
            self.e_clip.lo / self.alpha_g,
            self.e_clip.hi / self.alpha_g,
            self.e_clip.lo_closed,
            self.e_clip.hi_closed,
        );
        if !dom.covers(&scaled) {
            return Err(FlexError::InvalidParameter(format!(
                "e_clip {} scaled by 1/alpha_g leaves the conjugate domain {dom}",
                self.e_clip
            )));
        }
        if let Some(a) = &self.adaptive {
            a.validate()?;
        }
        Ok(())
    }

    fn profile(&self, penalty: Penalty) -> crate::divergence::LossProfile {
        let p = crate::divergence::LossProfile::new(penalty, self.lp_mode).with_alpha_g(self.alpha_g);
        match self.loss_clip {
            Some(c) => p.with_clip(c),
            None => p,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    n_states: usize,
    n_actions: usize,
    pub nu: Vec<f64>,
    /// `Q_φ` for Flex-f-Q, `e_φ` for Flex-f-DICE.
    pub critic: Vec<f64>,
    pub policy_logits: Vec<f64>,
    pub adaptive: Option<AdaptiveState>,
    /// Penalty in force; recomposed every step when adaptive.
    pub penalty: Penalty,
    pub step: u64,
    rng: ChaCha8Rng,
}

impl TrainState {
    pub fn new(n_states: usize, n_actions: usize, config: &TrainConfig) -> Self {
        let sa = n_states * n_actions;
        TrainState {
            n_states,
            n_actions,
            nu: vec![0.0; n_states],
            critic: vec![0.0; sa],
            policy_logits: vec![0.0; sa],
            adaptive: config.adaptive.as_ref().map(|c| AdaptiveState::new(n_states, n_actions, c)),
            penalty: config.penalty,
            step: 0,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
        }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    /// `ê(s,a)`: `Q − ν` or `e_φ`.
    pub fn e_hat(&self, algorithm: Algorithm, s: usize, a: usize) -> f64 {
        let c = self.critic[s * self.n_actions + a];
        match algorithm {
            Algorithm::FlexFQ => c - self.nu[s],
            Algorithm::FlexFDice => c,
        }
    }

    fn check_finite(&self) -> Result<()> {
        let tables: [(&'static str, &[f64]); 3] = [("nu", &self.nu), ("critic", &self.critic), ("policy_logits", &self.policy_logits)];
        for (table, v) in tables {
            if v.iter().any(|x| !x.is_finite()) {
                return Err(FlexError::Nan { table, step: self.step });
            }
        }
        Ok(())
    }
}

/// Loss values and the mean `ê` of one update.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepStats {
    pub loss_nu: f64,
    pub loss_critic: f64,
    pub loss_policy: f64,
    pub mean_e: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRow {
    pub step: u64,
    pub loss_nu: f64,
    pub loss_critic: f64,
    pub loss_policy: f64,
    pub mean_e: f64,
    pub alpha_plus: f64,
    pub alpha_minus: f64,
    pub beta: f64,
    pub ret: f64,
    pub norm_return: f64,
}

/// Sample `batch_size` transitions with replacement.
pub fn sample_batch<R: Rng>(dataset: &OfflineDataset, batch_size: usize, rng: &mut R) -> Vec<Transition> {
    (0..batch_size)
        .map(|_| dataset.transitions[rng.gen_range(0..dataset.transitions.len())])
        .collect()
}

pub fn sample_init_batch<R: Rng>(dataset: &OfflineDataset, batch_size: usize, rng: &mut R) -> Vec<usize> {
    (0..batch_size)
        .map(|_| dataset.initial_states[rng.gen_range(0..dataset.initial_states.len())])
        .collect()
}

fn check_domain(penalty: &Penalty, x: f64) -> Result<()> {
    let dom = penalty.e_domain();
    if dom.contains(x) {
        Ok(())
    } else {
        Err(FlexError::Domain {
            what: "scaled Bellman error",
            value: x,
            domain: dom.to_string(),
        })
    }
}

/// `L_P` part of the ν objective that is linear in ν, for the modes that
/// keep it outside the loss.
fn linear_term(config: &TrainConfig, gamma: f64, nu: &[f64], batch: &[Transition], init: &[usize]) -> f64 {
    let c = 1.0 - gamma;
    match config.lp_mode {
        LpMode::InitDist => c * init.iter().map(|&s| nu[s]).sum::<f64>() / init.len() as f64,
        LpMode::UniformValue => c * batch.iter().map(|t| nu[t.s]).sum::<f64>() / batch.len() as f64,
        _ => 0.0,
    }
}

fn linear_grad(config: &TrainConfig, gamma: f64, grad: &mut [f64], batch: &[Transition], init: &[usize]) {
    let c = 1.0 - gamma;
    match config.lp_mode {
        LpMode::InitDist => {
            let w = c / init.len() as f64;
            for &s in init {
                grad[s] += w;
            }
        }
        LpMode::UniformValue => {
            let w = c / batch.len() as f64;
            for t in batch {
                grad[t.s] += w;
            }
        }
        _ => {}
    }
}

/// Everything the ν objectives need besides the tables.
#[derive(Debug, Clone, Copy)]
pub struct NuObjective<'a> {
    pub config: &'a TrainConfig,
    pub penalty: Penalty,
    pub gamma: f64,
}

impl<'a> NuObjective<'a> {
    pub fn new(config: &'a TrainConfig, penalty: Penalty, gamma: f64) -> Self {
        NuObjective { config, penalty, gamma }
    }

    fn linear(&self, nu: &[f64], batch: &[Transition], init: &[usize]) -> f64 {
        linear_term(self.config, self.gamma, nu, batch, init)
    }

    fn linear_grad(&self, grad: &mut [f64], batch: &[Transition], init: &[usize]) {
        linear_grad(self.config, self.gamma, grad, batch, init)
    }

    fn sampled_td(&self, t: &Transition, nu: &[f64]) -> f64 {
        self.config.reward_scale * t.r + self.gamma * nu[t.s_next] - nu[t.s]
    }

    /// Flex-f-Q ν loss with the critic frozen.
    pub fn q_loss(&self, nu: &[f64], critic: &[f64], n_actions: usize, batch: &[Transition], init: &[usize]) -> Result<f64> {
        let profile = self.config.profile(self.penalty);
        let mut total = 0.0;
        for t in batch {
            let e_hat = critic[t.s * n_actions + t.a] - nu[t.s];
            check_domain(&self.penalty, profile.clip.map_or(e_hat, |c| c.clamp(e_hat)) / profile.alpha_g)?;
            let g = profile.bellman_loss(e_hat)?;
            total += match self.config.lp_mode {
                // the loss carries −ê; swap it for the sampled −e_θ
                LpMode::NegTdError => g + e_hat - self.sampled_td(t, nu),
                _ => g,
            };
        }
        Ok(total / batch.len() as f64 + self.linear(nu, batch, init))
    }

    /// Semi-gradient of [`q_loss`](Self::q_loss): through `−ν(s)` in `ê`
    /// plus the exact gradient of the `L_P` term.
    pub fn q_grad(&self, nu: &[f64], critic: &[f64], n_actions: usize, batch: &[Transition], init: &[usize]) -> Result<Vec<f64>> {
        let profile = self.config.profile(self.penalty);
        let mut grad = vec![0.0; nu.len()];
        let w = 1.0 / batch.len() as f64;
        for t in batch {
            let e_hat = critic[t.s * n_actions + t.a] - nu[t.s];
            let d = profile.bellman_loss_grad(e_hat)?;
            grad[t.s] -= w * d;
            if self.config.lp_mode == LpMode::NegTdError {
                // −e_θ also depends on ν(s'); its ν(s) part is already in `d`
                grad[t.s_next] -= w * self.gamma;
            }
        }
        self.linear_grad(&mut grad, batch, init);
        Ok(grad)
    }

    /// Flex-f-DICE ν objective `L_P + α_g·mean g(e_θ/α_g)`.
    pub fn dice_loss(&self, nu: &[f64], critic: &[f64], n_actions: usize, batch: &[Transition], init: &[usize]) -> Result<f64> {
        let mut profile = self.config.profile(self.penalty);
        profile.lp_mode = LpMode::InitDist;
        let mut total = 0.0;
        for t in batch {
            let e = self.sampled_td(t, nu);
            check_domain(&self.penalty, profile.clip.map_or(e, |c| c.clamp(e)) / profile.alpha_g)?;
            total += profile.bellman_loss(e)?;
            total -= match self.config.lp_mode {
                LpMode::NegTdError => e,
                LpMode::NegEstimatedTd => critic[t.s * n_actions + t.a],
                _ => 0.0,
            };
        }
        Ok(total / batch.len() as f64 + self.linear(nu, batch, init))
    }

    /// Full gradient of [`dice_loss`](Self::dice_loss) in ν.
    pub fn dice_grad(&self, nu: &[f64], _critic: &[f64], _n_actions: usize, batch: &[Transition], init: &[usize]) -> Result<Vec<f64>> {
        let mut profile = self.config.profile(self.penalty);
        profile.lp_mode = LpMode::InitDist;
        let mut grad = vec![0.0; nu.len()];
        let w = 1.0 / batch.len() as f64;
        for t in batch {
            let e = self.sampled_td(t, nu);
            let mut d = profile.bellman_loss_grad(e)?;
            if self.config.lp_mode == LpMode::NegTdError {
                d -= 1.0;
            }
            grad[t.s_next] += w * d * self.gamma;
            grad[t.s] -= w * d;
        }
        self.linear_grad(&mut grad, batch, init);
        Ok(grad)
    }
}

fn awr_update(
    logits: &mut [f64],
    n_actions: usize,
    batch: &[Transition],
    weights: &[f64],
    lr: f64,
) -> f64 {
    let mut grad = vec![0.0; logits.len()];
    let mut probs = vec![0.0; n_actions];
    let mut loss = 0.0;
    let scale = 1.0 / batch.len() as f64;
    for (t, &w) in batch.iter().zip(weights) {
        let row = t.s * n_actions;
        softmax_into(&logits[row..row + n_actions], &mut probs);
        loss -= w * probs[t.a].max(f64::MIN_POSITIVE).ln();
        for b in 0..n_actions {
            grad[row + b] += w * (probs[b] - f64::from(u8::from(b == t.a)));
        }
    }
    for (l, g) in logits.iter_mut().zip(&grad) {
        *l -= lr * scale * g;
    }
    loss * scale
}

fn regress(table: &mut [f64], index: impl Fn(&Transition) -> usize, batch: &[Transition], targets: &[f64], lr: f64) -> f64 {
    let mut grad = vec![0.0; table.len()];
    let mut loss = 0.0;
    for (t, &y) in batch.iter().zip(targets) {
        let i = index(t);
        let diff = table[i] - y;
        loss += 0.5 * diff * diff;
        grad[i] += diff;
    }
    let scale = 1.0 / batch.len() as f64;
    for (x, g) in table.iter_mut().zip(&grad) {
        *x -= lr * scale * g;
    }
    loss * scale
}

fn adapt(state: &mut TrainState, config: &TrainConfig, batch: &[Transition], e_hat: &[f64]) -> Result<()> {
    let Some(ad) = state.adaptive.as_mut() else {
        return Ok(());
    };
    let (g_minus, g_plus) = config.penalty.branches();
    let pairs: Vec<(usize, usize)> = batch.iter().map(|t| (t.s, t.a)).collect();
    ad.bc_update(&pairs);
    if let Err(e) = ad.estimate_alphas(&pairs, e_hat) {
        if e != FlexError::DegenerateVector {
            return Err(e);
        }
    }
    ad.estimate_beta(g_minus, g_plus, e_hat)?;
    state.penalty = Penalty::Flex(ad.recompose(g_minus, g_plus)?);
    Ok(())
}

/// One Flex-f-Q update: critic regression, ν semi-gradient step, AWR step.
pub fn step_flex_f_q(state: &mut TrainState, mdp_gamma: f64, batch: &[Transition], init_batch: &[usize], config: &TrainConfig) -> Result<StepStats> {
    let na = state.n_actions;
    let targets: Vec<f64> = batch
        .iter()
        .map(|t| config.reward_scale * t.r + mdp_gamma * state.nu[t.s_next])
        .collect();
    let loss_critic = regress(&mut state.critic, |t| t.s * na + t.a, batch, &targets, config.lr_critic);

    let e_hat: Vec<f64> = batch.iter().map(|t| state.e_hat(Algorithm::FlexFQ, t.s, t.a)).collect();
    adapt(state, config, batch, &e_hat)?;
    let obj = NuObjective::new(config, state.penalty, mdp_gamma);
    let loss_nu = obj.q_loss(&state.nu, &state.critic, na, batch, init_batch)?;
    let grad = obj.q_grad(&state.nu, &state.critic, na, batch, init_batch)?;
    for (v, g) in state.nu.iter_mut().zip(&grad) {
        *v -= config.lr_nu * g;
    }

    let weights: Vec<f64> = e_hat
        .iter()
        .map(|e| (config.awr_temperature * e).min(AWR_MAX_EXPONENT).exp())
        .collect();
    let loss_policy = awr_update(&mut state.policy_logits, na, batch, &weights, config.lr_policy);
    state.step += 1;
    state.check_finite()?;
    Ok(StepStats {
        loss_nu,
        loss_critic,
        loss_policy,
        mean_e: e_hat.iter().sum::<f64>() / e_hat.len() as f64,
    })
}

/// One Flex-f-DICE update: full ν gradient step, `e_φ` regression, AWR step
/// weighted by `max(0, ζ*(ê/α_g))`.
pub fn step_flex_f_dice(state: &mut TrainState, mdp_gamma: f64, batch: &[Transition], init_batch: &[usize], config: &TrainConfig) -> Result<StepStats> {
    let na = state.n_actions;
    let e_hat: Vec<f64> = batch.iter().map(|t| state.e_hat(Algorithm::FlexFDice, t.s, t.a)).collect();
    adapt(state, config, batch, &e_hat)?;
    let obj = NuObjective::new(config, state.penalty, mdp_gamma);
    let e_theta: Vec<f64> = batch.iter().map(|t| obj.sampled_td(t, &state.nu)).collect();
    let loss_nu = obj.dice_loss(&state.nu, &state.critic, na, batch, init_batch)?;
    let grad = obj.dice_grad(&state.nu, &state.critic, na, batch, init_batch)?;
    for (v, g) in state.nu.iter_mut().zip(&grad) {
        *v -= config.lr_nu * g;
    }
    let loss_critic = regress(&mut state.critic, |t| t.s * na + t.a, batch, &e_theta, config.lr_critic);

    let weights = e_hat
        .iter()
        .map(|e| Ok(state.penalty.gstar_prime_inv(e / config.alpha_g)?.max(0.0)))
        .collect::<Result<Vec<f64>>>()?;
    let loss_policy = awr_update(&mut state.policy_logits, na, batch, &weights, config.lr_policy);
    state.step += 1;
    state.check_finite()?;
    Ok(StepStats {
        loss_nu,
        loss_critic,
        loss_policy,
        mean_e: e_hat.iter().sum::<f64>() / e_hat.len() as f64,
    })
}

pub fn extract_policy(state: &TrainState) -> TabularPolicy {
    TabularPolicy::from_logits(state.n_states, state.n_actions, &state.policy_logits)
}

pub fn extract_greedy_policy(state: &TrainState) -> TabularPolicy {
    TabularPolicy::greedy_from_table(state.n_states, state.n_actions, &state.policy_logits)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    /// Monte-Carlo mean of the discounted return.
    pub mean_return: f64,
    pub std_error: f64,
    /// `E_{p0}[V^π]` from the linear solve.
    pub exact_return: f64,
    /// Normalized exact return.
    pub normalized_return: f64,
    /// Normalized Monte-Carlo mean.
    pub normalized_mc: f64,
}

/// Discounted returns of `n_episodes` rollouts plus the exact value.
pub fn evaluate(mdp: &TabularMdp, policy: &TabularPolicy, n_episodes: usize, horizon: usize, seed: u64) -> Result<Evaluation> {
    let scale = ReturnScale::new(mdp)?;
    let exact_return = mdp.expected_return(&mdp.policy_value(policy)?);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut returns = Vec::with_capacity(n_episodes);
    for _ in 0..n_episodes {
        let mut s = sample_index(mdp.p0(), &mut rng);
        let mut ret = 0.0;
        let mut disc = 1.0;
        for _ in 0..horizon {
            let a = policy.sample(s, &mut rng);
            ret += disc * mdp.reward(s, a);
            disc *= mdp.gamma();
            s = sample_index(mdp.next_dist(s, a), &mut rng);
        }
        returns.push(ret);
    }
    let n = returns.len().max(1) as f64;
    let mean = returns.iter().sum::<f64>() / n;
    let var = if returns.len() > 1 {
        returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Ok(Evaluation {
        mean_return: mean,
        std_error: (var / n).sqrt(),
        exact_return,
        normalized_return: scale.normalize(exact_return),
        normalized_mc: scale.normalize(mean),
    })
}

/// Run `config.steps` updates; metrics every `eval_interval` steps and at
/// the last step.
pub fn train(mdp: &TabularMdp, dataset: &OfflineDataset, config: &TrainConfig) -> Result<(TrainState, Vec<MetricsRow>)> {
    let mut state = TrainState::new(mdp.n_states(), mdp.n_actions(), config);
    let metrics = train_from(&mut state, mdp, dataset, config)?;
    Ok((state, metrics))
}

/// Continue training an existing state.
pub fn train_from(state: &mut TrainState, mdp: &TabularMdp, dataset: &OfflineDataset, config: &TrainConfig) -> Result<Vec<MetricsRow>> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(FlexError::InvalidParameter("empty dataset".into()));
    }
    dataset.check_consistency(mdp)?;
    let scale = ReturnScale::new(mdp)?;
    let mut metrics = Vec::new();
    let end = state.step + config.steps;
    while state.step < end {
        let mut rng = state.rng.clone();
        let batch = sample_batch(dataset, config.batch_size, &mut rng);
        let init = sample_init_batch(dataset, config.init_batch_size, &mut rng);
        state.rng = rng;
        let stats = match config.algorithm {
            Algorithm::FlexFQ => step_flex_f_q(state, mdp.gamma(), &batch, &init, config),
            Algorithm::FlexFDice => step_flex_f_dice(state, mdp.gamma(), &batch, &init, config),
        }
        .inspect_err(|e| warn!("training aborted at step {}: {e}", state.step + 1))?;
        if state.step % config.eval_interval == 0 || state.step == end {
            let ret = mdp.expected_return(&mdp.policy_value(&extract_policy(state))?);
            let (alpha_minus, alpha_plus, beta) = state.penalty.params();
            metrics.push(MetricsRow {
                step: state.step,
                loss_nu: stats.loss_nu,
                loss_critic: stats.loss_critic,
                loss_policy: stats.loss_policy,
                mean_e: stats.mean_e,
                alpha_plus,
                alpha_minus,
                beta,
                ret,
                norm_return: scale.normalize(ret),
            });
        }
    }
    Ok(metrics)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Mixture;
    use crate::divergence::{preset, Divergence};
    use crate::lp_oracle::optimal_policy;
    use crate::mdp::make_gridworld;

    fn single_state_dataset(r: f64) -> (TabularMdp, OfflineDataset) {
        let m = TabularMdp::new(1, 1, vec![1.0], vec![r], vec![1.0], 0.0).unwrap();
        let t = Transition { s: 0, a: 0, r, s_next: 0, done: false };
        (m, OfflineDataset::new(vec![t; 4], vec![0], Mixture::Custom("one".into())).unwrap())
    }

    fn random_batch(rng: &mut ChaCha8Rng, ns: usize, na: usize, n: usize) -> Vec<Transition> {
        (0..n)
            .map(|_| Transition {
                s: rng.gen_range(0..ns),
                a: rng.gen_range(0..na),
                r: rng.gen_range(-0.3..0.3),
                s_next: rng.gen_range(0..ns),
                done: false,
            })
            .collect()
    }

    fn fd_check(loss: impl Fn(&[f64]) -> f64, grad: &[f64], nu: &[f64]) {
        let h = 1e-5;
        for i in 0..nu.len() {
            let mut p = nu.to_vec();
            let mut q = nu.to_vec();
            p[i] += h;
            q[i] -= h;
            let fd = (loss(&p) - loss(&q)) / (2.0 * h);
            let err = (fd - grad[i]).abs() / grad[i].abs().max(1e-3);
            assert!(err <= 1e-6, "component {i}: analytic {} vs fd {fd}", grad[i]);
        }
    }

    #[test]
    fn nu_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let penalties: [Penalty; 4] = [
            Divergence::Chi2.into(),
            Divergence::Kl.into(),
            preset("iql:0.7").unwrap().into(),
            preset("soft_chi2").unwrap().into(),
        ];
        for case in 0..20 {
            let (ns, na) = (rng.gen_range(1..5), rng.gen_range(1..4));
            let batch = random_batch(&mut rng, ns, na, 16);
            let init: Vec<usize> = (0..4).map(|_| rng.gen_range(0..ns)).collect();
            let nu: Vec<f64> = (0..ns).map(|_| rng.gen_range(-0.2..0.2)).collect();
            let critic: Vec<f64> = (0..ns * na).map(|_| rng.gen_range(-0.2..0.2)).collect();
            let pen = penalties[case % 4];
            for alg in [Algorithm::FlexFQ, Algorithm::FlexFDice] {
                for mode in [LpMode::InitDist, LpMode::UniformValue, LpMode::NegTdError, LpMode::NegEstimatedTd] {
                    let mut cfg = TrainConfig::new(alg, pen);
                    cfg.lp_mode = mode;
                    let obj = NuObjective::new(&cfg, pen, 0.9);
                    match alg {
                        Algorithm::FlexFQ => {
                            let g = obj.q_grad(&nu, &critic, na, &batch, &init).unwrap();
                            fd_check(|v| obj.q_loss(v, &critic, na, &batch, &init).unwrap(), &g, &nu);
                        }
                        Algorithm::FlexFDice => {
                            let g = obj.dice_grad(&nu, &critic, na, &batch, &init).unwrap();
                            fd_check(|v| obj.dice_loss(v, &critic, na, &batch, &init).unwrap(), &g, &nu);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn q_fixed_point_single_state() {
        let (m, ds) = single_state_dataset(1.0);
        let mut cfg = TrainConfig::new(Algorithm::FlexFQ, Divergence::Chi2);
        cfg.steps = 3000;
        cfg.lr_nu = 0.1;
        cfg.lr_critic = 0.1;
        cfg.batch_size = 8;
        let (st, _) = train(&m, &ds, &cfg).unwrap();
        assert!((st.nu[0] - 1.0).abs() < 1e-6, "{}", st.nu[0]);
        assert!(st.e_hat(Algorithm::FlexFQ, 0, 0).abs() < 1e-6);
    }

    #[test]
    fn dice_zero_reward_fixed_point() {
        let (mut m, mut ds) = single_state_dataset(0.0);
        m = m.with_gamma(0.5).unwrap();
        ds.transitions.iter_mut().for_each(|t| t.r = 0.0);
        let mut cfg = TrainConfig::new(Algorithm::FlexFDice, preset("soft_chi2").unwrap());
        cfg.steps = 5000;
        cfg.batch_size = 8;
        cfg.init_batch_size = 2;
        cfg.lr_nu = 0.05;
        cfg.lr_critic = 0.1;
        let (st, _) = train(&m, &ds, &cfg).unwrap();
        assert!(st.nu[0].abs() < 1e-6, "{}", st.nu[0]);
        let w = st.penalty.gstar_prime_inv(st.critic[0] / cfg.alpha_g).unwrap();
        assert!((w - 1.0).abs() < 1e-5);
    }

    #[test]
    fn symmetric_expectile_equals_scaled_chi2() {
        let m = make_gridworld(3, 3, 0.9, 0.1).unwrap();
        let ds = crate::dataset::synthesize_dataset(&m, &Mixture::TwoPolicy, 20, 20, 0).unwrap();
        let mut a = TrainConfig::new(Algorithm::FlexFQ, preset("iql:0.5").unwrap());
        a.steps = 200;
        a.batch_size = 64;
        let mut b = a.clone();
        b.penalty = Divergence::Chi2.into();
        b.alpha_g = 2.0;
        let (sa, _) = train(&m, &ds, &a).unwrap();
        let (sb, _) = train(&m, &ds, &b).unwrap();
        assert_eq!(sa.nu, sb.nu);
    }

    #[test]
    fn xql_and_iql_losses_match_closed_forms() {
        let batch = [Transition { s: 0, a: 0, r: 0.0, s_next: 0, done: false }];
        for e in [-1.5, -0.3, 0.0, 0.4, 1.2] {
            let critic = [e];
            let nu = [0.0];
            let xql = TrainConfig::new(Algorithm::FlexFQ, preset("xql").unwrap());
            let obj = NuObjective::new(&xql, xql.penalty, 0.9);
            let l = obj.q_loss(&nu, &critic, 1, &batch, &[0]).unwrap();
            assert!((l - (e.exp() - e - 1.0)).abs() < 1e-12);
            let iql = TrainConfig::new(Algorithm::FlexFQ, preset("iql:0.7").unwrap());
            let obj = NuObjective::new(&iql, iql.penalty, 0.9);
            let l = obj.q_loss(&nu, &critic, 1, &batch, &[0]).unwrap();
            let tau = if e >= 0.0 { 0.7 } else { 0.3 };
            assert!((l - tau * 0.5 * e * e).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_steps_and_determinism() {
        let m = make_gridworld(3, 3, 0.9, 0.1).unwrap();
        let ds = crate::dataset::synthesize_dataset(&m, &Mixture::TwoPolicy, 20, 20, 0).unwrap();
        let mut cfg = TrainConfig::new(Algorithm::FlexFDice, preset("soft_chi2").unwrap()).with_adaptive();
        cfg.steps = 0;
        let (st, rows) = train(&m, &ds, &cfg).unwrap();
        assert!(rows.is_empty());
        assert_eq!(st, TrainState::new(9, 4, &cfg));
        cfg.steps = 300;
        cfg.batch_size = 64;
        cfg.eval_interval = 100;
        let (a, ra) = train(&m, &ds, &cfg).unwrap();
        let (b, rb) = train(&m, &ds, &cfg).unwrap();
        assert_eq!(ra, rb);
        assert_eq!(a, b);
        assert_eq!(ra.len(), 3);
        assert!(ra.iter().all(|r| r.beta > 0.0 && r.ret.is_finite()));
    }

    #[test]
    fn blowup_is_reported() {
        let m = make_gridworld(3, 3, 0.9, 0.1).unwrap();
        let ds = crate::dataset::synthesize_dataset(&m, &Mixture::TwoPolicy, 20, 20, 0).unwrap();
        let mut cfg = TrainConfig::new(Algorithm::FlexFQ, Divergence::Kl);
        cfg.lr_nu = 1e4;
        cfg.lr_critic = 1.0;
        cfg.steps = 100;
        let err = train(&m, &ds, &cfg).unwrap_err();
        assert!(matches!(err, FlexError::Nan { .. } | FlexError::Domain { .. }), "{err:?}");
    }

    #[test]
    fn evaluation_endpoints() {
        let m = make_gridworld(4, 4, 0.9, 0.1).unwrap();
        let opt = evaluate(&m, &optimal_policy(&m), 2000, 200, 1).unwrap();
        assert!((opt.normalized_return - 100.0).abs() < 1e-6);
        assert!((opt.mean_return - opt.exact_return).abs() <= 3.0 * opt.std_error);
        let uni = evaluate(&m, &TabularPolicy::uniform(16, 4), 2000, 200, 1).unwrap();
        assert!(uni.normalized_return.abs() < 1e-6);
        assert!((uni.mean_return - uni.exact_return).abs() <= 3.0 * uni.std_error);
    }

    #[test]
    fn extraction_variants() {
        let cfg = TrainConfig::new(Algorithm::FlexFQ, Divergence::Chi2);
        let mut st = TrainState::new(2, 3, &cfg);
        assert_eq!(extract_policy(&st), TabularPolicy::uniform(2, 3));
        st.policy_logits = vec![0.0, 2.0, 1.0, 5.0, 0.0, 0.0];
        let g = extract_greedy_policy(&st);
        assert_eq!(g.argmax_actions(), vec![1, 0]);
        assert!(g.probs().iter().all(|&p| p == 0.0 || p == 1.0));
    }
}
