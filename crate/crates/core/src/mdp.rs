//! Finite tabular MDPs, policies, and exact evaluation.
//!
//! Tables are stored flat in row-major order: state-action tables at
//! `s * n_actions + a`, transitions at `(s * n_actions + a) * n_states + s'`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use sha2::{Digest, Sha256};

use crate::error::{FlexError, Result};

const ROW_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    n_states: usize,
    n_actions: usize,
    transition: Vec<f64>,
    reward: Vec<f64>,
    p0: Vec<f64>,
    gamma: f64,
}

fn check_distribution(row: &[f64], what: &str) -> Result<()> {
    if row.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
        return Err(FlexError::InvalidModel(format!("{what} has a negative or non-finite entry")));
    }
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > ROW_TOL {
        return Err(FlexError::InvalidModel(format!("{what} sums to {sum}")));
    }
    Ok(())
}

impl TabularMdp {
    pub fn new(
        n_states: usize,
        n_actions: usize,
        transition: Vec<f64>,
        reward: Vec<f64>,
        p0: Vec<f64>,
        gamma: f64,
    ) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(FlexError::Size("MDP needs at least one state and one action".into()));
        }
        let sa = n_states * n_actions;
        for (len, expected) in [(transition.len(), sa * n_states), (reward.len(), sa), (p0.len(), n_states)] {
            if len != expected {
                return Err(FlexError::Shape { expected, got: len });
            }
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(FlexError::InvalidModel(format!("discount {gamma} not in [0, 1)")));
        }
        for (i, row) in transition.chunks(n_states).enumerate() {
            check_distribution(row, &format!("T[{}][{}]", i / n_actions, i % n_actions))?;
        }
        check_distribution(&p0, "p0")?;
        if reward.iter().any(|r| !r.is_finite()) {
            return Err(FlexError::InvalidModel("non-finite reward".into()));
        }
        Ok(TabularMdp {
            n_states,
            n_actions,
            transition,
            reward,
            p0,
            gamma,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }
    pub fn n_actions(&self) -> usize {
        self.n_actions
    }
    pub fn gamma(&self) -> f64 {
        self.gamma
    }
    pub fn p0(&self) -> &[f64] {
        &self.p0
    }
    pub fn rewards(&self) -> &[f64] {
        &self.reward
    }
    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.reward[s * self.n_actions + a]
    }
    /// Next-state distribution `T(·|s,a)`.
    pub fn next_dist(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.n_actions + a) * self.n_states;
        &self.transition[start..start + self.n_states]
    }

    /// Copy of the model with a different discount.
    pub fn with_gamma(&self, gamma: f64) -> Result<Self> {
        TabularMdp::new(
            self.n_states,
            self.n_actions,
            self.transition.clone(),
            self.reward.clone(),
            self.p0.clone(),
            gamma,
        )
    }

    fn check_state_table(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.n_states {
            return Err(FlexError::Shape {
                expected: self.n_states,
                got: v.len(),
            });
        }
        Ok(())
    }

    /// `(𝒯ν)(s,a) = Σ_s' T(s'|s,a) ν(s')`.
    pub fn apply_t(&self, nu: &[f64]) -> Result<Vec<f64>> {
        self.check_state_table(nu)?;
        Ok(self
            .transition
            .chunks(self.n_states)
            .map(|row| row.iter().zip(nu).map(|(p, v)| p * v).sum())
            .collect())
    }

    /// `e_ν(s,a) = r(s,a) + γ(𝒯ν)(s,a) − ν(s)`.
    pub fn td_error(&self, nu: &[f64]) -> Result<Vec<f64>> {
        let tnu = self.apply_t(nu)?;
        Ok(tnu
            .iter()
            .enumerate()
            .map(|(i, t)| self.reward[i] + self.gamma * t - nu[i / self.n_actions])
            .collect())
    }

    /// `Q(s,a) = r(s,a) + γ(𝒯V)(s,a)`.
    pub fn q_from_v(&self, v: &[f64]) -> Result<Vec<f64>> {
        let tv = self.apply_t(v)?;
        Ok(tv.iter().zip(&self.reward).map(|(t, r)| r + self.gamma * t).collect())
    }

    fn check_policy(&self, policy: &TabularPolicy) -> Result<()> {
        if policy.n_states != self.n_states || policy.n_actions != self.n_actions {
            return Err(FlexError::Shape {
                expected: self.n_states * self.n_actions,
                got: policy.probs.len(),
            });
        }
        Ok(())
    }

    /// State-to-state transition matrix under `policy`.
    fn policy_matrix(&self, policy: &TabularPolicy) -> DMatrix<f64> {
        let n = self.n_states;
        let mut p = DMatrix::zeros(n, n);
        for s in 0..n {
            for a in 0..self.n_actions {
                let pa = policy.prob(s, a);
                if pa == 0.0 {
                    continue;
                }
                for (s2, t) in self.next_dist(s, a).iter().enumerate() {
                    p[(s, s2)] += pa * t;
                }
            }
        }
        p
    }

    /// Exact `V^π` from the linear system `(I − γP_π)V = r_π`.
    pub fn policy_value(&self, policy: &TabularPolicy) -> Result<Vec<f64>> {
        self.check_policy(policy)?;
        let n = self.n_states;
        let p = self.policy_matrix(policy);
        let r_pi = DVector::from_iterator(
            n,
            (0..n).map(|s| (0..self.n_actions).map(|a| policy.prob(s, a) * self.reward(s, a)).sum()),
        );
        let a = DMatrix::identity(n, n) - p * self.gamma;
        let v = a.clone().lu().solve(&r_pi).ok_or(FlexError::SingularSystem)?;
        let residual = (&a * &v - &r_pi).amax();
        if !residual.is_finite() || residual > 1e-10 * (1.0 + r_pi.amax() / (1.0 - self.gamma)) {
            return Err(FlexError::SingularSystem);
        }
        Ok(v.iter().copied().collect())
    }

    /// Normalized state-action occupancy `d^π` started from `p0`.
    pub fn exact_occupancy(&self, policy: &TabularPolicy) -> Result<OccupancyMeasure> {
        self.check_policy(policy)?;
        let n = self.n_states;
        let p = self.policy_matrix(policy);
        let a = DMatrix::identity(n, n) - p.transpose() * self.gamma;
        let b = DVector::from_iterator(n, self.p0.iter().map(|x| (1.0 - self.gamma) * x));
        let ds = a.lu().solve(&b).ok_or(FlexError::SingularSystem)?;
        if ds.iter().any(|x| !x.is_finite()) {
            return Err(FlexError::SingularSystem);
        }
        let mut d = Vec::with_capacity(n * self.n_actions);
        for s in 0..n {
            // clamp round-off negatives on unreachable states
            let mass = ds[s].max(0.0);
            for a in 0..self.n_actions {
                d.push(mass * policy.prob(s, a));
            }
        }
        Ok(OccupancyMeasure {
            n_states: n,
            n_actions: self.n_actions,
            d,
        })
    }

    /// Bellman flow residual `Σ_a d(s,a) − (1−γ)p0(s) − γ Σ T(s|s̄,ā) d(s̄,ā)`.
    pub fn flow_residual(&self, occ: &OccupancyMeasure) -> Vec<f64> {
        let mut res: Vec<f64> = self.p0.iter().map(|p| -(1.0 - self.gamma) * p).collect();
        for s in 0..self.n_states {
            for a in 0..self.n_actions {
                let d = occ.get(s, a);
                res[s] += d;
                for (s2, t) in self.next_dist(s, a).iter().enumerate() {
                    res[s2] -= self.gamma * t * d;
                }
            }
        }
        res
    }

    /// `E_{p0}[V^π] − E_{p0}[ν] − (1/(1−γ))·E_{d^π}[e_ν]`; zero by the
    /// performance difference lemma.
    pub fn perf_diff_check(&self, policy: &TabularPolicy, nu: &[f64]) -> Result<f64> {
        let v = self.policy_value(policy)?;
        let occ = self.exact_occupancy(policy)?;
        let e = self.td_error(nu)?;
        let lhs: f64 = self.p0.iter().zip(v.iter().zip(nu)).map(|(p, (v, n))| p * (v - n)).sum();
        let adv: f64 = occ.d.iter().zip(&e).map(|(d, e)| d * e).sum();
        Ok(lhs - adv / (1.0 - self.gamma))
    }

    /// Expected discounted return from `p0`.
    pub fn expected_return(&self, v: &[f64]) -> f64 {
        self.p0.iter().zip(v).map(|(p, v)| p * v).sum()
    }

    /// States whose every action self-loops with probability one.
    pub fn absorbing_states(&self) -> Vec<bool> {
        (0..self.n_states)
            .map(|s| (0..self.n_actions).all(|a| self.next_dist(s, a)[s] == 1.0))
            .collect()
    }

    /// SHA-256 over shape, discount and every table entry.
    pub fn hash_hex(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.n_states as u64).to_le_bytes());
        h.update((self.n_actions as u64).to_le_bytes());
        h.update(self.gamma.to_le_bytes());
        for x in self.transition.iter().chain(&self.reward).chain(&self.p0) {
            h.update(x.to_le_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TabularPolicy {
    n_states: usize,
    n_actions: usize,
    probs: Vec<f64>,
}

impl TabularPolicy {
    pub fn new(n_states: usize, n_actions: usize, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != n_states * n_actions {
            return Err(FlexError::Shape {
                expected: n_states * n_actions,
                got: probs.len(),
            });
        }
        for (s, row) in probs.chunks(n_actions).enumerate() {
            check_distribution(row, &format!("pi[{s}]"))?;
        }
        Ok(TabularPolicy {
            n_states,
            n_actions,
            probs,
        })
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        TabularPolicy {
            n_states,
            n_actions,
            probs: vec![1.0 / n_actions as f64; n_states * n_actions],
        }
    }

    /// One-hot policy choosing `actions[s]` in every state.
    pub fn deterministic(n_actions: usize, actions: &[usize]) -> Self {
        let mut probs = vec![0.0; actions.len() * n_actions];
        for (s, &a) in actions.iter().enumerate() {
            probs[s * n_actions + a] = 1.0;
        }
        TabularPolicy {
            n_states: actions.len(),
            n_actions,
            probs,
        }
    }

    pub(crate) fn from_probs_unchecked(n_states: usize, n_actions: usize, probs: Vec<f64>) -> Self {
        TabularPolicy {
            n_states,
            n_actions,
            probs,
        }
    }

    /// Row-wise softmax of a logit table.
    pub fn from_logits(n_states: usize, n_actions: usize, logits: &[f64]) -> Self {
        let mut probs = vec![0.0; n_states * n_actions];
        for (row, out) in logits.chunks(n_actions).zip(probs.chunks_mut(n_actions)) {
            softmax_into(row, out);
        }
        TabularPolicy {
            n_states,
            n_actions,
            probs,
        }
    }

    /// Greedy one-hot policy over a state-action table, ties to the lowest action.
    pub fn greedy_from_table(n_states: usize, n_actions: usize, table: &[f64]) -> Self {
        debug_assert_eq!(table.len(), n_states * n_actions);
        let actions: Vec<usize> = table.chunks(n_actions).map(argmax).collect();
        TabularPolicy::deterministic(n_actions, &actions)
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }
    pub fn n_actions(&self) -> usize {
        self.n_actions
    }
    pub fn probs(&self) -> &[f64] {
        &self.probs
    }
    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[s * self.n_actions + a]
    }
    pub fn row(&self, s: usize) -> &[f64] {
        &self.probs[s * self.n_actions..(s + 1) * self.n_actions]
    }

    /// Most probable action per state.
    pub fn argmax_actions(&self) -> Vec<usize> {
        self.probs.chunks(self.n_actions).map(argmax).collect()
    }

    pub fn greedy(&self) -> TabularPolicy {
        TabularPolicy::deterministic(self.n_actions, &self.argmax_actions())
    }

    pub fn sample<R: Rng>(&self, s: usize, rng: &mut R) -> usize {
        sample_index(self.row(s), rng)
    }
}

pub(crate) fn softmax_into(logits: &[f64], out: &mut [f64]) {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for (o, l) in out.iter_mut().zip(logits) {
        *o = (l - m).exp();
        z += *o;
    }
    for o in out.iter_mut() {
        *o /= z;
    }
}

pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in row.iter().enumerate() {
        if x > row[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn sample_index<R: Rng>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // round-off: fall back to the last positive entry
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

/// State-action occupancy measure `d(s,a)`.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyMeasure {
    pub n_states: usize,
    pub n_actions: usize,
    pub d: Vec<f64>,
}

impl OccupancyMeasure {
    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.d[s * self.n_actions + a]
    }

    pub fn state_marginal(&self) -> Vec<f64> {
        self.d.chunks(self.n_actions).map(|r| r.iter().sum()).collect()
    }

    /// `Σ d(s,a)·x(s,a)`.
    pub fn expectation(&self, table: &[f64]) -> f64 {
        self.d.iter().zip(table).map(|(d, x)| d * x).sum()
    }
}

pub const GRID_UP: usize = 0;
pub const GRID_DOWN: usize = 1;
pub const GRID_LEFT: usize = 2;
pub const GRID_RIGHT: usize = 3;

/// Four-action gridworld. The goal is the bottom-right cell, absorbing, and
/// pays `+1` per step spent in it; every other step pays `0`. With
/// probability `noise` the executed action is replaced by one of the other
/// three uniformly. Episodes start uniformly on the non-goal cells.
pub fn make_gridworld(width: usize, height: usize, gamma: f64, noise: f64) -> Result<TabularMdp> {
    let n = width * height;
    if width == 0 || height == 0 || n > 400 {
        return Err(FlexError::Size(format!("grid {width}x{height} must have 1..=400 cells")));
    }
    if !(0.0..1.0).contains(&noise) {
        return Err(FlexError::InvalidParameter(format!("noise {noise} not in [0, 1)")));
    }
    let goal = n - 1;
    let n_actions = 4;
    let step = |s: usize, a: usize| -> usize {
        let (x, y) = (s % width, s / width);
        let (nx, ny) = match a {
            GRID_UP => (x, y.saturating_sub(1)),
            GRID_DOWN => (x, (y + 1).min(height - 1)),
            GRID_LEFT => (x.saturating_sub(1), y),
            _ => ((x + 1).min(width - 1), y),
        };
        ny * width + nx
    };
    let mut transition = vec![0.0; n * n_actions * n];
    let mut reward = vec![0.0; n * n_actions];
    for s in 0..n {
        for a in 0..n_actions {
            let row = &mut transition[(s * n_actions + a) * n..(s * n_actions + a + 1) * n];
            if s == goal {
                row[s] = 1.0;
                reward[s * n_actions + a] = 1.0;
                continue;
            }
            for b in 0..n_actions {
                let p = if b == a { 1.0 - noise } else { noise / 3.0 };
                row[step(s, b)] += p;
            }
        }
    }
    let p0 = if n == 1 {
        vec![1.0]
    } else {
        let mut p = vec![1.0 / (n - 1) as f64; n];
        p[goal] = 0.0;
        p
    };
    TabularMdp::new(n, n_actions, transition, reward, p0, gamma)
}

/// Random dense MDP for property checks: transition rows and `p0` drawn from
/// a flat Dirichlet, rewards uniform in `[-1, 1]`.
pub fn random_mdp<R: Rng>(n_states: usize, n_actions: usize, gamma: f64, rng: &mut R) -> Result<TabularMdp> {
    let mut draw = |len: usize| -> Vec<f64> {
        let w: Vec<f64> = (0..len).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
        let s: f64 = w.iter().sum();
        let mut out: Vec<f64> = w.iter().map(|x| x / s).collect();
        // make the row sum exactly one
        let rest: f64 = out[1..].iter().sum();
        out[0] = (1.0 - rest).max(0.0);
        out
    };
    let mut transition = Vec::with_capacity(n_states * n_actions * n_states);
    for _ in 0..n_states * n_actions {
        transition.extend(draw(n_states));
    }
    let p0 = draw(n_states);
    let reward = (0..n_states * n_actions).map(|_| rng.gen_range(-1.0..1.0)).collect();
    TabularMdp::new(n_states, n_actions, transition, reward, p0, gamma)
}

/// Random policy with strictly positive rows.
pub fn random_policy<R: Rng>(n_states: usize, n_actions: usize, rng: &mut R) -> TabularPolicy {
    let logits: Vec<f64> = (0..n_states * n_actions).map(|_| rng.gen_range(-2.0..2.0)).collect();
    TabularPolicy::from_logits(n_states, n_actions, &logits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn single_state(r: f64, gamma: f64) -> TabularMdp {
        TabularMdp::new(1, 1, vec![1.0], vec![r], vec![1.0], gamma).unwrap()
    }

    #[test]
    fn rejects_bad_models() {
        assert!(TabularMdp::new(1, 1, vec![0.9], vec![0.0], vec![1.0], 0.9).is_err());
        assert!(TabularMdp::new(1, 1, vec![1.0], vec![0.0], vec![1.0], 1.0).is_err());
        assert!(matches!(
            TabularMdp::new(2, 1, vec![1.0], vec![0.0], vec![1.0], 0.5),
            Err(FlexError::Shape { .. })
        ));
    }

    #[test]
    fn apply_t_examples() {
        let m = TabularMdp::new(
            2,
            1,
            vec![0.5, 0.5, 0.0, 1.0],
            vec![0.0, 0.0],
            vec![1.0, 0.0],
            0.9,
        )
        .unwrap();
        assert_eq!(m.apply_t(&[0.0, 2.0]).unwrap()[0], 1.0);
        assert!(matches!(m.apply_t(&[1.0]), Err(FlexError::Shape { .. })));

        // identity transitions
        let ident = TabularMdp::new(
            2,
            2,
            vec![1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0],
            vec![0.0; 4],
            vec![0.5, 0.5],
            0.5,
        )
        .unwrap();
        assert_eq!(ident.apply_t(&[3.0, -1.0]).unwrap(), vec![3.0, 3.0, -1.0, -1.0]);
    }

    #[test]
    fn apply_t_matches_dense_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = random_mdp(4, 3, 0.9, &mut rng).unwrap();
        let nu: Vec<f64> = (0..4).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let got = m.apply_t(&nu).unwrap();
        for s in 0..4 {
            for a in 0..3 {
                let mut acc = 0.0;
                for s2 in 0..4 {
                    acc += m.next_dist(s, a)[s2] * nu[s2];
                }
                assert!((got[s * 3 + a] - acc).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn td_error_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = random_mdp(3, 2, 0.0, &mut rng).unwrap();
        assert_eq!(m.td_error(&[0.0; 3]).unwrap(), m.rewards().to_vec());

        let m = random_mdp(3, 2, 0.8, &mut rng).unwrap();
        let nu = [0.3, -1.2, 2.0];
        let e = m.td_error(&nu).unwrap();
        for s in 0..3 {
            for a in 0..2 {
                let exp: f64 = (0..3).map(|s2| m.next_dist(s, a)[s2] * nu[s2]).sum();
                let want = m.reward(s, a) + 0.8 * exp - nu[s];
                assert!((e[s * 2 + a] - want).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn policy_value_examples() {
        let m = single_state(1.0, 0.9);
        let v = m.policy_value(&TabularPolicy::uniform(1, 1)).unwrap();
        assert!((v[0] - 10.0).abs() < 1e-12);
        let z = single_state(0.0, 0.9);
        assert_eq!(z.policy_value(&TabularPolicy::uniform(1, 1)).unwrap(), vec![0.0]);
    }

    #[test]
    fn policy_value_matches_iteration() {
        // symmetric two-state chain, uniform policy
        let m = TabularMdp::new(
            2,
            2,
            vec![1.0, 0.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0],
            vec![1.0, 0.0, 0.0, 2.0],
            vec![0.5, 0.5],
            0.9,
        )
        .unwrap();
        let pi = TabularPolicy::uniform(2, 2);
        let exact = m.policy_value(&pi).unwrap();
        let mut v = [0.0f64; 2];
        for _ in 0..1_000_000 {
            let mut next = [0.0; 2];
            for s in 0..2 {
                for a in 0..2 {
                    let ev: f64 = (0..2).map(|s2| m.next_dist(s, a)[s2] * v[s2]).sum();
                    next[s] += 0.5 * (m.reward(s, a) + 0.9 * ev);
                }
            }
            v = next;
        }
        for s in 0..2 {
            assert!((exact[s] - v[s]).abs() < 1e-9);
        }
    }

    #[test]
    fn occupancy_examples() {
        let m = single_state(1.0, 0.9);
        let occ = m.exact_occupancy(&TabularPolicy::uniform(1, 1)).unwrap();
        assert!((occ.d[0] - 1.0).abs() < 1e-14);

        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let m = random_mdp(5, 3, 0.95, &mut rng).unwrap();
        let pi = random_policy(5, 3, &mut rng);
        let occ = m.exact_occupancy(&pi).unwrap();
        assert!(m.flow_residual(&occ).iter().all(|r| r.abs() < 1e-8));
        let v = m.policy_value(&pi).unwrap();
        let lhs = occ.expectation(m.rewards());
        assert!((lhs - 0.05 * m.expected_return(&v)).abs() < 1e-8);

        let m0 = m.with_gamma(1e-6).unwrap();
        let occ = m0.exact_occupancy(&pi).unwrap();
        for s in 0..5 {
            for a in 0..3 {
                assert!((occ.get(s, a) - m0.p0()[s] * pi.prob(s, a)).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn perf_diff_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let m = random_mdp(3, 2, 0.9, &mut rng).unwrap();
        let pi = random_policy(3, 2, &mut rng);
        let v = m.policy_value(&pi).unwrap();
        assert!(m.perf_diff_check(&pi, &v).unwrap().abs() < 1e-10);
        let nu = [1.0, -2.0, 0.5];
        assert!(m.perf_diff_check(&pi, &nu).unwrap().abs() < 1e-8);

        let m0 = m.with_gamma(0.0).unwrap();
        let r_pi: f64 = (0..3)
            .map(|s| m0.p0()[s] * (0..2).map(|a| pi.prob(s, a) * m0.reward(s, a)).sum::<f64>())
            .sum();
        let p0nu: f64 = (0..3).map(|s| m0.p0()[s] * nu[s]).sum();
        let v0 = m0.policy_value(&pi).unwrap();
        assert!((m0.expected_return(&v0) - r_pi).abs() < 1e-14);
        assert!((m0.expected_return(&v0) - p0nu - (r_pi - p0nu)).abs() < 1e-14);
        assert!(m0.perf_diff_check(&pi, &nu).unwrap().abs() < 1e-12);
    }

    #[test]
    fn gridworld_shapes() {
        let one = make_gridworld(1, 1, 0.9, 0.0).unwrap();
        assert_eq!(one.n_states(), 1);
        assert_eq!(one.absorbing_states(), vec![true]);
        assert!(make_gridworld(21, 20, 0.9, 0.0).is_err());
        assert!(make_gridworld(4, 4, 0.9, 1.0).is_err());

        let g = make_gridworld(4, 4, 0.9, 0.1).unwrap();
        let absorbing = g.absorbing_states();
        assert_eq!(absorbing.iter().filter(|&&b| b).count(), 1);
        assert!(absorbing[15]);
        assert_eq!(g.p0()[15], 0.0);
    }

    #[test]
    fn greedy_and_softmax_policies() {
        let p = TabularPolicy::from_logits(2, 3, &[0.0; 6]);
        assert!(p.probs().iter().all(|&x| (x - 1.0 / 3.0).abs() < 1e-15));
        let g = TabularPolicy::greedy_from_table(2, 3, &[1.0, 3.0, 3.0, -1.0, -2.0, 0.5]);
        assert_eq!(g.argmax_actions(), vec![1, 2]);
        assert!(g.probs().iter().all(|&x| x == 0.0 || x == 1.0));
    }
}
