//! On-line estimation of `α±` and `β` for the flexible composition.
//!
//! `α₊ = 1/δ` and `α₋ = 1/(1−δ)`, where `δ` is the smoothed cosine similarity
//! between the behavior-cloning likelihoods `π_b(a|s)` and `exp(ê)` over a
//! batch, clamped to `[ι_b, 1−ι_b]`. `β` inverts the composed derivative at
//! threshold 0 at the smoothed mean `ē`.

use log::warn;

use crate::divergence::{compose_flex, ConvexGenerator, Divergence, FlexF, Interval};
use crate::error::{FlexError, Result};
use crate::mdp::{softmax_into, TabularPolicy};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdaptiveConfig {
    pub iota_b: f64,
    pub e_clip: Interval,
    pub ema_decay: f64,
    pub lr_bc: f64,
}

impl Default for AdaptiveConfig {
    fn default() -> Self {
        AdaptiveConfig {
            iota_b: 0.3,
            e_clip: Interval::closed(-0.2, 0.15),
            ema_decay: 0.99,
            lr_bc: 1e-2,
        }
    }
}

impl AdaptiveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.iota_b > 0.0 && self.iota_b < 0.5) {
            return Err(FlexError::InvalidParameter(format!("iota_b = {} not in (0, 0.5)", self.iota_b)));
        }
        if !(0.0..1.0).contains(&self.ema_decay) {
            return Err(FlexError::InvalidParameter(format!("ema_decay = {} not in [0, 1)", self.ema_decay)));
        }
        if !(self.e_clip.lo.is_finite() && self.e_clip.hi.is_finite() && self.e_clip.lo <= self.e_clip.hi) {
            return Err(FlexError::InvalidParameter(format!("e_clip {} is not a bounded interval", self.e_clip)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptiveState {
    n_actions: usize,
    pub bc_logits: Vec<f64>,
    pub ema_cos: f64,
    pub ema_e: f64,
    pub iota_b: f64,
    pub e_clip: Interval,
    pub ema_decay: f64,
    pub lr_bc: f64,
    pub alpha_plus: f64,
    pub alpha_minus: f64,
    pub beta: f64,
    /// Set when the last cosine estimate was skipped on a zero-norm vector.
    pub degenerate: bool,
}

/// `⟨a,b⟩ / (‖a‖‖b‖)`.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(FlexError::Shape {
            expected: a.len(),
            got: b.len(),
        });
    }
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 || !na.is_finite() || !nb.is_finite() {
        return Err(FlexError::DegenerateVector);
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok(dot / (na * nb))
}

impl AdaptiveState {
    pub fn new(n_states: usize, n_actions: usize, cfg: &AdaptiveConfig) -> Self {
        AdaptiveState {
            n_actions,
            bc_logits: vec![0.0; n_states * n_actions],
            ema_cos: 0.5,
            ema_e: 0.0,
            iota_b: cfg.iota_b,
            e_clip: cfg.e_clip,
            ema_decay: cfg.ema_decay,
            lr_bc: cfg.lr_bc,
            alpha_plus: 1.0,
            alpha_minus: 1.0,
            beta: 1.0,
            degenerate: false,
        }
    }

    pub fn n_states(&self) -> usize {
        self.bc_logits.len() / self.n_actions
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn clamped_cos(&self) -> f64 {
        self.ema_cos.clamp(self.iota_b, 1.0 - self.iota_b)
    }

    pub fn bc_policy(&self) -> TabularPolicy {
        TabularPolicy::from_logits(self.n_states(), self.n_actions, &self.bc_logits)
    }

    fn bc_prob(&self, s: usize, a: usize, buf: &mut [f64]) -> f64 {
        let na = self.n_actions;
        softmax_into(&self.bc_logits[s * na..(s + 1) * na], buf);
        buf[a]
    }

    /// One maximum-likelihood gradient step on the observed `(s, a)` pairs.
    pub fn bc_update(&mut self, batch: &[(usize, usize)]) {
        if batch.is_empty() {
            return;
        }
        let na = self.n_actions;
        let scale = self.lr_bc / batch.len() as f64;
        let mut grad = vec![0.0; self.bc_logits.len()];
        let mut probs = vec![0.0; na];
        for &(s, a) in batch {
            softmax_into(&self.bc_logits[s * na..(s + 1) * na], &mut probs);
            for b in 0..na {
                grad[s * na + b] += probs[b] - f64::from(u8::from(a == b));
            }
        }
        for (l, g) in self.bc_logits.iter_mut().zip(&grad) {
            *l -= scale * g;
        }
    }

    /// Update `δ` from the batch and reset `α±` from its clamped value. On a
    /// zero-norm vector the state is left unchanged and `degenerate` is set.
    pub fn estimate_alphas(&mut self, batch: &[(usize, usize)], e_hat: &[f64]) -> Result<()> {
        if batch.len() != e_hat.len() {
            return Err(FlexError::Shape {
                expected: batch.len(),
                got: e_hat.len(),
            });
        }
        let mut buf = vec![0.0; self.n_actions];
        let pb: Vec<f64> = batch.iter().map(|&(s, a)| self.bc_prob(s, a, &mut buf)).collect();
        let ex: Vec<f64> = e_hat.iter().map(|&e| self.e_clip.clamp(e).exp()).collect();
        let cos = match cosine_similarity(&pb, &ex) {
            Ok(c) => c,
            Err(err) => {
                warn!("skipping alpha estimate: {err}");
                self.degenerate = true;
                return Err(err);
            }
        };
        self.degenerate = false;
        self.ema_cos = self.ema_decay * self.ema_cos + (1.0 - self.ema_decay) * cos;
        let c = self.clamped_cos();
        self.alpha_plus = 1.0 / c;
        self.alpha_minus = 1.0 / (1.0 - c);
        Ok(())
    }

    /// Update `ē` and set `β = g*'⁻¹_{α±,0}(ē)`.
    pub fn estimate_beta(&mut self, g_minus: Divergence, g_plus: Divergence, e_hat: &[f64]) -> Result<()> {
        if e_hat.is_empty() {
            return Err(FlexError::InvalidParameter("empty e_hat batch".into()));
        }
        let mean = e_hat.iter().map(|&e| self.e_clip.clamp(e)).sum::<f64>() / e_hat.len() as f64;
        self.ema_e = self.ema_decay * self.ema_e + (1.0 - self.ema_decay) * mean;
        let e_bar = self.e_clip.clamp(self.ema_e);
        let beta = threshold_from_mean(g_minus, g_plus, self.alpha_minus, self.alpha_plus, e_bar)?;
        for g in [g_minus, g_plus] {
            if !g.zeta_domain().contains_interior(beta) {
                return Err(FlexError::InvalidThreshold {
                    beta,
                    branch: g.to_string(),
                });
            }
        }
        self.beta = beta;
        Ok(())
    }

    pub fn recompose(&self, g_minus: Divergence, g_plus: Divergence) -> Result<FlexF> {
        compose_flex(g_minus, g_plus, self.alpha_minus, self.alpha_plus, self.beta)
    }
}

/// Invert the derivative of the composition joined at `β = 0`. When the
/// upper branch has no finite derivative at 0 (e.g. KL), every `ē` falls on
/// the upper branch and the inverse is `ḡ₊'⁻¹(ē/α₊)`.
pub fn threshold_from_mean(g_minus: Divergence, g_plus: Divergence, alpha_minus: f64, alpha_plus: f64, e_bar: f64) -> Result<f64> {
    let finite_at_zero = g_plus.zeta_domain().contains_interior(0.0) && g_minus.zeta_domain().contains_interior(0.0);
    let beta = if finite_at_zero {
        compose_flex(g_minus, g_plus, alpha_minus, alpha_plus, 0.0)?.gstar_prime_inv(e_bar)?
    } else {
        g_plus.gstar_prime_inv(e_bar / alpha_plus)?
    };
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(FlexError::Domain {
            what: "beta",
            value: beta,
            domain: "(0, inf)".into(),
        });
    }
    Ok(beta)
}
