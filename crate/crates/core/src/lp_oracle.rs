//! Exact solvers for the regularized LP pair.
//!
//! Primal: `min_ν Σ_s α(s)ν(s) + α_g Σ d^D(s,a) g(e_ν(s,a)/α_g)`, with `e_ν`
//! computed under the model. Dual: `max_ζ Σ d^D [ζ r − α_g g*(ζ)]` subject to
//! the flow equality `Σ_a d^D ζ − γ 𝒯*(d^D ζ) = α`. The neg-TD modes fold the
//! linear term into the loss as `−e + g(e)`; in the dual this shows up as
//! `α = Σ_a d^D − γ𝒯*d^D` and an offset of `−Σ d^D r`.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::dataset::DataDistribution;
use crate::divergence::{ConvexGenerator, LpMode};
use crate::error::{FlexError, Result};
use crate::mdp::{TabularMdp, TabularPolicy};

/// `V*` by synchronous value iteration until the sup-norm Bellman residual
/// drops below `tol`.
pub fn value_iteration(mdp: &TabularMdp, tol: f64) -> Vec<f64> {
    let na = mdp.n_actions();
    let mut v = vec![0.0; mdp.n_states()];
    loop {
        let q = mdp.q_from_v(&v).expect("value table has n_states entries");
        let next: Vec<f64> = q
            .chunks(na)
            .map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .collect();
        let residual = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        v = next;
        if residual <= tol.max(f64::EPSILON) {
            return v;
        }
    }
}

/// Greedy policy with respect to `V*`.
pub fn optimal_policy(mdp: &TabularMdp) -> TabularPolicy {
    let q = mdp.q_from_v(&value_iteration(mdp, 1e-12)).expect("shape");
    TabularPolicy::greedy_from_table(mdp.n_states(), mdp.n_actions(), &q)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleOptions {
    /// Sup-norm gradient tolerance of the primal Newton solve.
    pub grad_tol: f64,
    /// Sup-norm flow residual tolerance of the dual solve.
    pub residual_tol: f64,
    /// Newton step budget per solve (per inner solve for the dual).
    pub max_iters: usize,
    /// Multiplier updates allowed in the dual solve.
    pub max_outer: usize,
}

impl Default for OracleOptions {
    fn default() -> Self {
        OracleOptions {
            grad_tol: 1e-8,
            residual_tol: 1e-12,
            max_iters: 200,
            max_outer: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub nu_star: Vec<f64>,
    /// Density ratio on the dataset support, zero elsewhere.
    pub zeta_star: Vec<f64>,
    pub primal_objective: f64,
    pub dual_objective: f64,
    pub duality_gap: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Fraction of support pairs with `ζ* < 0`.
    pub negative_zeta_fraction: f64,
}

/// `α(s)` of the primal linear term. Zero for the neg-TD modes, whose linear
/// term lives inside the loss.
pub fn lp_alpha(mdp: &TabularMdp, mode: LpMode) -> Vec<f64> {
    let c = 1.0 - mdp.gamma();
    match mode {
        LpMode::InitDist => mdp.p0().iter().map(|p| c * p).collect(),
        LpMode::UniformValue => vec![c; mdp.n_states()],
        LpMode::NegTdError | LpMode::NegEstimatedTd => vec![0.0; mdp.n_states()],
    }
}

/// Right-hand side of the dual flow constraint for a mode.
pub fn flow_target(mdp: &TabularMdp, dist: &DataDistribution, mode: LpMode) -> Vec<f64> {
    if !mode.is_neg_td() {
        return lp_alpha(mdp, mode);
    }
    let ones = vec![1.0; dist.d.len()];
    let zero = vec![0.0; mdp.n_states()];
    occupancy_residual(mdp, dist, &zero, &ones).expect("shapes agree")
}

/// `e_ζ(s) = Σ_a d^D ζ(s,a) − α(s) − γ Σ_{s̄,ā} T(s|s̄,ā) d^D ζ(s̄,ā)`.
pub fn occupancy_residual(mdp: &TabularMdp, dist: &DataDistribution, alpha: &[f64], zeta: &[f64]) -> Result<Vec<f64>> {
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    if zeta.len() != ns * na || dist.d.len() != ns * na {
        return Err(FlexError::Shape {
            expected: ns * na,
            got: zeta.len().min(dist.d.len()),
        });
    }
    if alpha.len() != ns {
        return Err(FlexError::Shape {
            expected: ns,
            got: alpha.len(),
        });
    }
    let mut res: Vec<f64> = alpha.iter().map(|a| -a).collect();
    for s in 0..ns {
        for a in 0..na {
            let w = dist.get(s, a) * zeta[s * na + a];
            if w == 0.0 {
                continue;
            }
            res[s] += w;
            for (s2, t) in mdp.next_dist(s, a).iter().enumerate() {
                res[s2] -= mdp.gamma() * t * w;
            }
        }
    }
    Ok(res)
}

/// Support pairs, the states they touch, and `∂e/∂ν` per pair.
struct Problem<'a, G: ?Sized> {
    g: &'a G,
    alpha_g: f64,
    neg: bool,
    n_states: usize,
    n_actions: usize,
    /// Flat `(s,a)` index per support pair.
    pairs: Vec<usize>,
    weights: Vec<f64>,
    rewards: Vec<f64>,
    /// State id of each variable.
    vars: Vec<usize>,
    /// `coef[(i, j)] = ∂e_i/∂ν(vars[j])`.
    coef: DMatrix<f64>,
    alpha: DVector<f64>,
}

impl<'a, G: ConvexGenerator + ?Sized> Problem<'a, G> {
    fn new(mdp: &TabularMdp, dist: &DataDistribution, g: &'a G, mode: LpMode, alpha_g: f64) -> Result<Self> {
        let (ns, na) = (mdp.n_states(), mdp.n_actions());
        if dist.n_states != ns || dist.n_actions != na {
            return Err(FlexError::Shape {
                expected: ns * na,
                got: dist.d.len(),
            });
        }
        if !(alpha_g > 0.0) || !alpha_g.is_finite() {
            return Err(FlexError::InvalidParameter(format!("alpha_g = {alpha_g} must be positive")));
        }
        let pairs = dist.support();
        if pairs.is_empty() {
            return Err(FlexError::InvalidParameter("empty data distribution".into()));
        }
        let marginal = dist.state_marginal();
        let alpha_full = lp_alpha(mdp, mode);
        let mut needed = vec![false; ns];
        for &i in &pairs {
            needed[i / na] = true;
            for (s2, &t) in mdp.next_dist(i / na, i % na).iter().enumerate() {
                if t > 0.0 {
                    needed[s2] = true;
                }
            }
        }
        for s in 0..ns {
            if (alpha_full[s] > 0.0 || needed[s]) && marginal[s] <= 0.0 {
                return Err(FlexError::Coverage(s));
            }
        }
        let vars: Vec<usize> = (0..ns).filter(|&s| needed[s]).collect();
        let mut var_of = vec![usize::MAX; ns];
        for (j, &s) in vars.iter().enumerate() {
            var_of[s] = j;
        }
        let mut coef = DMatrix::zeros(pairs.len(), vars.len());
        for (row, &i) in pairs.iter().enumerate() {
            let (s, a) = (i / na, i % na);
            for (s2, &t) in mdp.next_dist(s, a).iter().enumerate() {
                if t > 0.0 {
                    coef[(row, var_of[s2])] += mdp.gamma() * t;
                }
            }
            coef[(row, var_of[s])] -= 1.0;
        }
        Ok(Problem {
            g,
            alpha_g,
            neg: mode.is_neg_td(),
            n_states: ns,
            n_actions: na,
            weights: pairs.iter().map(|&i| dist.d[i]).collect(),
            rewards: pairs.iter().map(|&i| mdp.rewards()[i]).collect(),
            alpha: DVector::from_iterator(vars.len(), vars.iter().map(|&s| alpha_full[s])),
            pairs,
            vars,
            coef,
        })
    }

    fn td(&self, nu: &DVector<f64>) -> DVector<f64> {
        &self.coef * nu + DVector::from_column_slice(&self.rewards)
    }

    /// `None` when some `e/α_g` leaves the interior of the conjugate domain.
    fn objective(&self, nu: &DVector<f64>) -> Option<f64> {
        let e = self.td(nu);
        let dom = self.g.e_domain();
        let mut total = self.alpha.dot(nu);
        for (i, &ei) in e.iter().enumerate() {
            let x = ei / self.alpha_g;
            if !dom.contains_interior(x) {
                return None;
            }
            let mut l = self.alpha_g * self.g.conj(x).ok()?;
            if self.neg {
                l -= ei;
            }
            total += self.weights[i] * l;
        }
        total.is_finite().then_some(total)
    }

    fn zeta(&self, e: &DVector<f64>) -> Result<Vec<f64>> {
        e.iter().map(|&ei| self.g.gstar_prime_inv(ei / self.alpha_g)).collect()
    }

    fn grad_hess(&self, nu: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let e = self.td(nu);
        let shift = if self.neg { 1.0 } else { 0.0 };
        let mut w1 = DVector::zeros(e.len());
        let mut w2 = DVector::zeros(e.len());
        for (i, &ei) in e.iter().enumerate() {
            let x = ei / self.alpha_g;
            w1[i] = self.weights[i] * (self.g.gstar_prime_inv(x)? - shift);
            w2[i] = self.weights[i] * self.g.conj_second(x)? / self.alpha_g;
        }
        let grad = &self.alpha + self.coef.tr_mul(&w1);
        let mut scaled = self.coef.clone();
        for (i, mut row) in scaled.row_iter_mut().enumerate() {
            row *= w2[i];
        }
        let hess = self.coef.tr_mul(&scaled);
        Ok((grad, hess))
    }

    fn full_nu(&self, nu: &DVector<f64>) -> Vec<f64> {
        let mut out = vec![0.0; self.n_states];
        for (j, &s) in self.vars.iter().enumerate() {
            out[s] = nu[j];
        }
        out
    }

    fn full_zeta(&self, z: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_states * self.n_actions];
        for (k, &i) in self.pairs.iter().enumerate() {
            out[i] = z[k];
        }
        out
    }

    fn dual_value(&self, zeta: &[f64]) -> Option<f64> {
        let dom = self.g.zeta_domain();
        let mut total = 0.0;
        for (k, &z) in zeta.iter().enumerate() {
            if !dom.contains(z) {
                return None;
            }
            let r = if self.neg { (z - 1.0) * self.rewards[k] } else { z * self.rewards[k] };
            total += self.weights[k] * (r - self.alpha_g * self.g.gstar(z).ok()?);
        }
        total.is_finite().then_some(total)
    }
}

/// Solve `H x = b`, adding diagonal damping until the Cholesky succeeds.
fn damped_solve(h: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let scale = h.diagonal().amax().max(1e-300);
    let mut mu = 0.0;
    for _ in 0..40 {
        let mut hm = h.clone();
        if mu > 0.0 {
            for i in 0..hm.nrows() {
                hm[(i, i)] += mu;
            }
        }
        if let Some(ch) = hm.cholesky() {
            let x = ch.solve(b);
            if x.iter().all(|v| v.is_finite()) {
                return Ok(x);
            }
        }
        mu = if mu == 0.0 { scale * 1e-14 } else { mu * 100.0 };
    }
    Err(FlexError::SingularSystem)
}

fn negative_fraction(z: &[f64]) -> f64 {
    z.iter().filter(|&&x| x < 0.0).count() as f64 / z.len().max(1) as f64
}

/// Minimize the unconstrained ν-objective by damped Newton with backtracking.
pub fn solve_regularized_nu<G: ConvexGenerator + ?Sized>(
    mdp: &TabularMdp,
    dist: &DataDistribution,
    g: &G,
    lp_mode: LpMode,
    alpha_g: f64,
    opts: &OracleOptions,
) -> Result<LpSolution> {
    let p = Problem::new(mdp, dist, g, lp_mode, alpha_g)?;
    // e = r − (1−γ)c ≤ 0 at this start, inside every conjugate domain
    let rmax = mdp.rewards().iter().copied().fold(0.0, f64::max);
    let mut nu = DVector::from_element(p.vars.len(), rmax / (1.0 - mdp.gamma()));
    let mut j = p.objective(&nu).ok_or_else(|| {
        FlexError::DomainBlowup(format!("initial Bellman errors leave the domain of {} scaled by {alpha_g}", g.e_domain()))
    })?;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iters {
        let (grad, hess) = p.grad_hess(&nu)?;
        if grad.amax() <= opts.grad_tol {
            converged = true;
            break;
        }
        iterations += 1;
        let step = damped_solve(&hess, &(-&grad))?;
        let slope = grad.dot(&step);
        let mut t = 1.0;
        let mut accepted = None;
        while t > 1e-12 {
            let cand = &nu + &step * t;
            if let Some(jc) = p.objective(&cand) {
                if jc <= j + 1e-4 * t * slope || (t == 1.0 && jc <= j + 1e-13 * (1.0 + j.abs())) {
                    accepted = Some((cand, jc));
                    break;
                }
            }
            t *= 0.5;
        }
        match accepted {
            Some((cand, jc)) => {
                nu = cand;
                j = jc;
            }
            None => break,
        }
    }
    if !converged {
        let (grad, _) = p.grad_hess(&nu)?;
        converged = grad.amax() <= opts.grad_tol;
    }
    let e = p.td(&nu);
    let zeta = p.zeta(&e)?;
    let dual = p.dual_value(&zeta).unwrap_or(f64::NAN);
    Ok(LpSolution {
        nu_star: p.full_nu(&nu),
        negative_zeta_fraction: negative_fraction(&zeta),
        zeta_star: p.full_zeta(&zeta),
        primal_objective: j,
        dual_objective: dual,
        duality_gap: (j - dual).abs(),
        iterations,
        converged,
    })
}

/// Maximize the dual under the hard flow equality with an augmented
/// Lagrangian; the multipliers recover ν.
pub fn solve_regularized_dual<G: ConvexGenerator + ?Sized>(
    mdp: &TabularMdp,
    dist: &DataDistribution,
    g: &G,
    lp_mode: LpMode,
    alpha_g: f64,
    opts: &OracleOptions,
) -> Result<LpSolution> {
    let ns = mdp.n_states();
    let na = mdp.n_actions();
    if ns * na > 256 {
        return Err(FlexError::Size(format!("dual oracle limited to 256 state-action pairs, got {}", ns * na)));
    }
    let p = Problem::new(mdp, dist, g, lp_mode, alpha_g)?;
    let target = flow_target(mdp, dist, lp_mode);
    // rows: variable states; A = −(coef ∘ d)ᵀ maps ζ to the flow of each state
    let m = p.pairs.len();
    let mut a_mat = p.coef.transpose();
    for k in 0..m {
        let mut col = a_mat.column_mut(k);
        col *= -p.weights[k];
    }
    let b = DVector::from_iterator(p.vars.len(), p.vars.iter().map(|&s| target[s]));
    for s in 0..ns {
        if !p.vars.contains(&s) && target[s].abs() > 0.0 {
            return Err(FlexError::Infeasible(format!("state {s} needs flow but has none")));
        }
    }
    let d = DVector::from_column_slice(&p.weights);
    let r = DVector::from_column_slice(&p.rewards);
    let zdom = g.zeta_domain();
    let ata = a_mat.tr_mul(&a_mat);
    let curv = g.gstar_second(1.0)? * alpha_g * d.amax();
    let rho0 = curv / ata.diagonal().amax().max(1e-300);
    let mut rho = rho0;
    let mut lambda = DVector::zeros(p.vars.len());
    let mut zeta = DVector::from_element(m, 1.0);
    let penalty_obj = |z: &DVector<f64>, lambda: &DVector<f64>, rho: f64| -> Option<f64> {
        let zs: Vec<f64> = z.iter().copied().collect();
        if zs.iter().any(|&x| !zdom.contains_interior(x)) {
            return None;
        }
        let f = p.dual_value(&zs)?;
        let res = &a_mat * z - &b;
        Some(-f + lambda.dot(&res) + 0.5 * rho * res.norm_squared())
    };
    let mut iterations = 0;
    let mut last_res = f64::INFINITY;
    let mut converged = false;
    for _ in 0..opts.max_outer {
        let mut fz = penalty_obj(&zeta, &lambda, rho).ok_or(FlexError::DomainBlowup("dual start".into()))?;
        for _ in 0..opts.max_iters {
            let res = &a_mat * &zeta - &b;
            let mut grad = a_mat.tr_mul(&(&lambda + &res * rho));
            let mut hess = &ata * rho;
            for k in 0..m {
                grad[k] += d[k] * (alpha_g * g.gstar_prime(zeta[k])? - r[k]);
                hess[(k, k)] += d[k] * alpha_g * g.gstar_second(zeta[k])?;
            }
            if grad.amax() <= 1e-14 * (1.0 + rho) {
                break;
            }
            iterations += 1;
            let step = damped_solve(&hess, &(-&grad))?;
            let slope = grad.dot(&step);
            let mut t = 1.0;
            let mut moved = false;
            while t > 1e-12 {
                let cand = &zeta + &step * t;
                if let Some(fc) = penalty_obj(&cand, &lambda, rho) {
                    if fc <= fz + 1e-4 * t * slope || (t == 1.0 && fc <= fz + 1e-13 * (1.0 + fz.abs())) {
                        zeta = cand;
                        fz = fc;
                        moved = true;
                        break;
                    }
                }
                t *= 0.5;
            }
            if !moved || (step.amax() * t) <= 1e-15 * (1.0 + zeta.amax()) {
                break;
            }
        }
        let res = &a_mat * &zeta - &b;
        let rn = res.amax();
        lambda += &res * rho;
        if rn <= opts.residual_tol {
            converged = true;
            break;
        }
        if rn > 0.25 * last_res && rho < rho0 * 1e12 {
            rho *= 10.0;
        }
        last_res = rn;
    }
    let zs: Vec<f64> = zeta.iter().copied().collect();
    let res_final = (&a_mat * &zeta - &b).amax();
    if !converged && res_final > opts.residual_tol.max(1e-6) {
        return Err(FlexError::Infeasible(format!("flow residual stalled at {res_final:.3e}")));
    }
    // the multiplier of `Aζ = b` is ν
    let dual = p.dual_value(&zs).ok_or(FlexError::DomainBlowup("dual optimum".into()))?;
    let primal = p.objective(&lambda).unwrap_or(f64::NAN);
    Ok(LpSolution {
        nu_star: p.full_nu(&lambda),
        negative_zeta_fraction: negative_fraction(&zs),
        zeta_star: p.full_zeta(&zs),
        primal_objective: primal,
        dual_objective: dual,
        duality_gap: (primal - dual).abs(),
        iterations,
        converged,
    })
}

/// Solve both sides independently: ν from the primal, ζ and the dual value
/// from the dual; the gap compares the two optimal values.
pub fn duality_gap_report<G: ConvexGenerator + ?Sized>(
    mdp: &TabularMdp,
    dist: &DataDistribution,
    g: &G,
    lp_mode: LpMode,
    alpha_g: f64,
    opts: &OracleOptions,
) -> Result<LpSolution> {
    let primal = solve_regularized_nu(mdp, dist, g, lp_mode, alpha_g, opts)?;
    let dual = solve_regularized_dual(mdp, dist, g, lp_mode, alpha_g, opts)?;
    Ok(LpSolution {
        nu_star: primal.nu_star,
        zeta_star: dual.zeta_star,
        primal_objective: primal.primal_objective,
        dual_objective: dual.dual_objective,
        duality_gap: (primal.primal_objective - dual.dual_objective).abs(),
        iterations: primal.iterations + dual.iterations,
        converged: primal.converged && dual.converged,
        negative_zeta_fraction: dual.negative_zeta_fraction,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleReportRow {
    pub instance: String,
    pub divergence: String,
    pub alpha_g: f64,
    pub primal: f64,
    pub dual: f64,
    pub gap: f64,
    pub iterations: usize,
}

impl OracleReportRow {
    pub fn new(instance: impl Into<String>, divergence: impl Into<String>, alpha_g: f64, sol: &LpSolution) -> Self {
        OracleReportRow {
            instance: instance.into(),
            divergence: divergence.into(),
            alpha_g,
            primal: sol.primal_objective,
            dual: sol.dual_objective,
            gap: sol.duality_gap,
            iterations: sol.iterations,
        }
    }
}

pub fn write_oracle_report(path: &Path, rows: &[OracleReportRow]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "instance,divergence,alpha_g,primal,dual,gap,iterations")?;
    for r in rows {
        writeln!(
            f,
            "{},{},{},{},{},{},{}",
            r.instance,
            r.divergence,
            crate::fmt_real(r.alpha_g),
            crate::fmt_real(r.primal),
            crate::fmt_real(r.dual),
            crate::fmt_real(r.gap),
            r.iterations
        )?;
    }
    f.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::divergence::Divergence;
    use crate::mdp::{make_gridworld, random_mdp, random_policy};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn one_state(r: f64, gamma: f64) -> TabularMdp {
        TabularMdp::new(1, 1, vec![1.0], vec![r], vec![1.0], gamma).unwrap()
    }

    fn two_state_chain(gamma: f64) -> TabularMdp {
        // action 0 stays, action 1 switches; reward 1 for staying in state 1
        let t = vec![1.0, 0.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0];
        TabularMdp::new(2, 2, t, vec![0.0, 0.2, 1.0, 0.0], vec![0.5, 0.5], gamma).unwrap()
    }

    fn full_coverage(mdp: &TabularMdp) -> DataDistribution {
        let pi = TabularPolicy::uniform(mdp.n_states(), mdp.n_actions());
        DataDistribution::from_occupancy(&mdp.exact_occupancy(&pi).unwrap())
    }

    #[test]
    fn value_iteration_closed_forms() {
        let v = value_iteration(&one_state(1.0, 0.9), 1e-12);
        assert!((v[0] - 10.0).abs() < 1e-9);
        let m = make_gridworld(4, 4, 0.9, 0.0).unwrap();
        let v = value_iteration(&m, 1e-12);
        for s in 0..16 {
            let d = (3 - s % 4) + (3 - s / 4);
            assert!(((1.0 - 0.9) * v[s] - 0.9f64.powi(d as i32)).abs() < 1e-9, "state {s}");
        }
    }

    #[test]
    fn value_iteration_matches_greedy_evaluation() {
        let m = make_gridworld(4, 4, 0.9, 0.1).unwrap();
        let v = value_iteration(&m, 1e-12);
        let exact = m.policy_value(&optimal_policy(&m)).unwrap();
        for (a, b) in v.iter().zip(&exact) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn single_state_matches_scalar_minimization() {
        let m = one_state(0.5, 0.8);
        let dist = full_coverage(&m);
        for div in [Divergence::Chi2, Divergence::Kl, Divergence::Hellinger] {
            let sol = solve_regularized_nu(&m, &dist, &div, LpMode::InitDist, 0.3, &OracleOptions::default()).unwrap();
            // objective: 0.2ν + 0.3 g((0.5 − 0.2ν)/0.3), golden-section on ν
            let f = |nu: f64| 0.2 * nu + 0.3 * div.conj((0.5 - 0.2 * nu) / 0.3).unwrap_or(f64::INFINITY);
            let (mut lo, mut hi) = (-50.0, 50.0);
            let phi = (5f64.sqrt() - 1.0) / 2.0;
            for _ in 0..200 {
                let a = hi - phi * (hi - lo);
                let b = lo + phi * (hi - lo);
                if f(a) < f(b) {
                    hi = b;
                } else {
                    lo = a;
                }
            }
            assert!((sol.nu_star[0] - 0.5 * (lo + hi)).abs() < 1e-6, "{div}");
            assert!(sol.converged);
        }
    }

    #[test]
    fn single_state_dual_is_only_flow() {
        let m = one_state(2.0, 0.5);
        let dist = full_coverage(&m);
        let sol = solve_regularized_dual(&m, &dist, &Divergence::Kl, LpMode::InitDist, 1.0, &OracleOptions::default()).unwrap();
        assert!((sol.zeta_star[0] - 1.0).abs() < 1e-8);
        assert!((sol.dual_objective - 2.0).abs() < 1e-8);
        let rep = duality_gap_report(&m, &dist, &Divergence::Kl, LpMode::InitDist, 1.0, &OracleOptions::default()).unwrap();
        assert!(rep.duality_gap < 1e-10);
    }

    #[test]
    fn chain_strong_duality() {
        let m = two_state_chain(0.9);
        let dist = full_coverage(&m);
        for div in [Divergence::Chi2, Divergence::Kl] {
            for ag in [0.1, 1.0] {
                let rep = duality_gap_report(&m, &dist, &div, LpMode::InitDist, ag, &OracleOptions::default()).unwrap();
                assert!(rep.duality_gap <= 1e-5, "{div} {ag}: {rep:?}");
            }
        }
    }

    #[test]
    fn neg_td_and_uniform_modes_are_dual() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = random_mdp(4, 2, 0.8, &mut rng).unwrap();
        let dist = full_coverage(&m);
        for mode in [LpMode::UniformValue, LpMode::NegTdError] {
            let rep = duality_gap_report(&m, &dist, &Divergence::Chi2, mode, 0.5, &OracleOptions::default()).unwrap();
            assert!(rep.duality_gap <= 1e-5, "{mode}: {rep:?}");
        }
    }

    #[test]
    fn zero_reward_dual_is_nonpositive() {
        let t = vec![0.3, 0.7, 0.6, 0.4];
        let m = TabularMdp::new(2, 1, t, vec![0.0, 0.0], vec![1.0, 0.0], 0.9).unwrap();
        let dist = DataDistribution {
            n_states: 2,
            n_actions: 1,
            d: vec![0.5, 0.5],
        };
        let sol = solve_regularized_dual(&m, &dist, &Divergence::Chi2, LpMode::InitDist, 1.0, &OracleOptions::default()).unwrap();
        // the flow is unique here: ζ = d^π / d^D
        let occ = m.exact_occupancy(&TabularPolicy::uniform(2, 1)).unwrap();
        let expected: f64 = (0..2).map(|i| -0.5 * 0.5 * (occ.d[i] / 0.5 - 1.0).powi(2)).sum();
        assert!(sol.dual_objective < 0.0);
        assert!((sol.dual_objective - expected).abs() < 1e-9, "{} vs {expected}", sol.dual_objective);
    }

    #[test]
    fn optimality_rule_and_stationarity() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let m = random_mdp(5, 3, 0.9, &mut rng).unwrap();
        let pi = random_policy(5, 3, &mut rng);
        let dist = DataDistribution::from_occupancy(&m.exact_occupancy(&pi).unwrap());
        let sol = solve_regularized_nu(&m, &dist, &Divergence::Kl, LpMode::InitDist, 0.5, &OracleOptions::default()).unwrap();
        let e = m.td_error(&sol.nu_star).unwrap();
        for i in dist.support() {
            let z = Divergence::Kl.gstar_prime_inv(e[i] / 0.5).unwrap();
            assert!((z - sol.zeta_star[i]).abs() < 1e-6);
        }
        let res = occupancy_residual(&m, &dist, &lp_alpha(&m, LpMode::InitDist), &sol.zeta_star).unwrap();
        assert!(res.iter().all(|r| r.abs() < 1e-6), "{res:?}");
    }

    #[test]
    fn residual_of_exact_ratio() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = random_mdp(4, 2, 0.7, &mut rng).unwrap();
        let behavior = random_policy(4, 2, &mut rng);
        let target = random_policy(4, 2, &mut rng);
        let d_b = m.exact_occupancy(&behavior).unwrap();
        let d_t = m.exact_occupancy(&target).unwrap();
        let dist = DataDistribution::from_occupancy(&d_b);
        let alpha = lp_alpha(&m, LpMode::InitDist);
        let zeta: Vec<f64> = d_t.d.iter().zip(&d_b.d).map(|(t, b)| t / b).collect();
        let res = occupancy_residual(&m, &dist, &alpha, &zeta).unwrap();
        assert!(res.iter().all(|r| r.abs() < 1e-8));
        let ones = vec![1.0; 8];
        assert!(occupancy_residual(&m, &dist, &alpha, &ones).unwrap().iter().all(|r| r.abs() < 1e-8));
        let zeros = vec![0.0; 8];
        let res = occupancy_residual(&m, &dist, &alpha, &zeros).unwrap();
        for (r, a) in res.iter().zip(&alpha) {
            assert_eq!(*r, -a);
        }
    }

    #[test]
    fn missing_coverage_is_reported() {
        let m = two_state_chain(0.9);
        let dist = DataDistribution {
            n_states: 2,
            n_actions: 2,
            d: vec![1.0, 0.0, 0.0, 0.0],
        };
        let err = solve_regularized_nu(&m, &dist, &Divergence::Chi2, LpMode::InitDist, 1.0, &OracleOptions::default()).unwrap_err();
        assert_eq!(err, FlexError::Coverage(1));
    }

    #[test]
    fn heavier_regularization_pulls_reward_term_down() {
        let m = two_state_chain(0.9);
        let pi = TabularPolicy::new(2, 2, vec![0.5, 0.5, 0.7, 0.3]).unwrap();
        let dist = DataDistribution::from_occupancy(&m.exact_occupancy(&pi).unwrap());
        let reward_term = |ag: f64| {
            let sol = solve_regularized_dual(&m, &dist, &Divergence::Chi2, LpMode::InitDist, ag, &OracleOptions::default()).unwrap();
            (0..4).map(|i| dist.d[i] * sol.zeta_star[i] * m.rewards()[i]).sum::<f64>()
        };
        let vals: Vec<f64> = [0.05, 0.2, 1.0, 5.0].iter().map(|&ag| reward_term(ag)).collect();
        assert!(vals.windows(2).all(|w| w[1] <= w[0] + 1e-9), "{vals:?}");
    }
}
