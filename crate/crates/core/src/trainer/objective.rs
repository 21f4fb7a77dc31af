//! Per-step ELBO terms, the trajectory loss and its analytic gradient.
//!
//! The loss of a trajectory is `Σ_t (w · KL_t − L^act_t)`. Prior marginals are
//! chained from step to step and the gradient flows through the whole chain,
//! including the history mixing of the unary evidence. With teacher forcing
//! the posterior marginals are carried instead and treated as constants.

use crate::action_model::{plans_for, ActionPlan, ActionTrace};
use crate::belief_graph::{
    kl_grads, kl_with, pairwise_backward, pairwise_potentials, unary_backward, unary_potentials_traced,
    GibbsDistribution, TransitionPotentials, UnaryTrace,
};
use crate::config::{clamp_prob, BeliefConfig, BeliefMarginals, ExpectationMode, ModelConfig, Trajectory};
use crate::embeddings::EmbeddingTable;
use crate::error::{Error, Result};
use crate::inference::{logistic, posterior_backward, posterior_logits};

use super::params::ParamSet;

/// Knobs of the training objective that do not change the model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Objective {
    pub kl_weight: f64,
    pub teacher_forcing: bool,
}

impl Default for Objective {
    fn default() -> Self {
        Objective {
            kl_weight: 1.0,
            teacher_forcing: false,
        }
    }
}

/// Terms of one timestep.
#[derive(Debug, Clone, PartialEq)]
pub struct StepTerms {
    /// `E_q[log p(a_t | b_t)]`, or its mean-field surrogate.
    pub action_term: f64,
    pub kl_term: f64,
    pub prior: BeliefMarginals,
    pub posterior: BeliefMarginals,
}

fn action_index(cfg: &ModelConfig, t: usize, action: usize) -> Result<usize> {
    cfg.mask(t)?.iter().position(|&a| a == action).ok_or_else(|| {
        Error::Validation(format!("action {action} at t={t} is not permitted by the mask"))
    })
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

fn log_prob_of(logits: &[f64], idx: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    logits[idx] - max - logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln()
}

/// Probability of configuration `c` under the factorized posterior.
fn factorized_prob(q: &[f64], c: usize) -> f64 {
    q.iter()
        .enumerate()
        .map(|(i, &qi)| if (c >> i) & 1 == 1 { qi } else { 1.0 - qi })
        .product()
}

enum ActionCache {
    MeanField {
        logits: Vec<f64>,
        trace: ActionTrace,
    },
    /// `(q(c), log p(a | c))` for every hard configuration `c`.
    Enumerate { per_config: Vec<(f64, f64)> },
}

/// Parameter-only quantities shared by every trajectory: the pairwise
/// potentials, the per-step action projections and, when enumerating, the
/// action logits of every hard configuration at every step.
pub(crate) struct Prepared {
    psi: Vec<Vec<f64>>,
    plans: Vec<ActionPlan>,
    hard: Vec<Vec<(Vec<f64>, ActionTrace)>>,
    /// Start of step `t` in the flat logit-gradient buffer.
    offsets: Vec<usize>,
}

impl Prepared {
    pub(crate) fn new(params: &ParamSet, table: &EmbeddingTable, cfg: &ModelConfig) -> Result<Self> {
        let plans = plans_for(table, &params.attention, cfg)?;
        let mut hard = Vec::new();
        let mut offsets = Vec::new();
        if cfg.expectation_mode == ExpectationMode::Enumerate {
            cfg.check_enumerable()?;
            let mut at = 0;
            for (t, plan) in plans.iter().enumerate() {
                offsets.push(at);
                at += (1 << cfg.k) * cfg.mask(t)?.len();
                hard.push(
                    (0..1usize << cfg.k)
                        .map(|c| plan.forward(&BeliefConfig::from_index(c, cfg.k).as_marginals(), &params.attention))
                        .collect::<Result<Vec<_>>>()?,
                );
            }
            offsets.push(at);
        }
        Ok(Prepared {
            psi: pairwise_potentials(table, &params.pairwise, cfg)?,
            plans,
            hard,
            offsets,
        })
    }

    /// Zeroed buffer for gradients with respect to the hard-configuration logits.
    pub(crate) fn logit_grad_buffer(&self) -> Vec<f64> {
        vec![0.0; self.offsets.last().copied().unwrap_or(0)]
    }

    /// Backpropagates summed hard-configuration logit gradients into the
    /// attention parameters. The backward pass is linear in the logit
    /// gradients, so summing over trajectories first gives the same result
    /// as one pass per trajectory.
    pub(crate) fn flush_logit_grads(&self, g_hard: &[f64], params: &ParamSet, grad: &mut ParamSet) {
        for (t, per_config) in self.hard.iter().enumerate() {
            let plan = &self.plans[t];
            let width = (self.offsets[t + 1] - self.offsets[t]) / per_config.len();
            let mut acc = plan.new_acc();
            for (c, (_, trace)) in per_config.iter().enumerate() {
                let start = self.offsets[t] + c * width;
                plan.backward(trace, &g_hard[start..start + width], &params.attention, &mut acc);
            }
            plan.flush(&acc, &mut grad.attention);
        }
    }
}

struct StepCache {
    unary_traces: Vec<UnaryTrace>,
    potentials: TransitionPotentials,
    gibbs: GibbsDistribution,
    q: Vec<f64>,
    action_idx: usize,
    action: ActionCache,
}

struct StepResult {
    terms: StepTerms,
    cache: StepCache,
}

fn run_step(
    traj: &Trajectory,
    t: usize,
    prev: &BeliefMarginals,
    prep: &Prepared,
    params: &ParamSet,
    table: &EmbeddingTable,
    cfg: &ModelConfig,
) -> Result<StepResult> {
    if t >= traj.len() || t >= cfg.t {
        return Err(Error::Config(format!("timestep {t} is past the trajectory end")));
    }
    let obs = traj.observation_ids[t];
    let action = traj.action_ids[t];
    let (unary, unary_traces) = unary_potentials_traced(prev, obs, table, &params.unary, cfg)?;
    let potentials = TransitionPotentials {
        unary,
        pairwise: prep.psi.clone(),
    };
    let gibbs = GibbsDistribution::new(&potentials, cfg)?;
    let prior = gibbs.marginals();
    let q: Vec<f64> = posterior_logits(obs, action, table, &params.inference, cfg)?
        .into_iter()
        .map(|l| clamp_prob(logistic(l)))
        .collect();
    let posterior = BeliefMarginals(q.clone());
    let kl_term = kl_with(&posterior, &potentials, &gibbs)?;
    let action_idx = action_index(cfg, t, action)?;
    let plan = &prep.plans[t];

    let (action_term, action) = match cfg.expectation_mode {
        ExpectationMode::MeanField => {
            let (logits, trace) = plan.forward(&posterior, &params.attention)?;
            (log_prob_of(&logits, action_idx), ActionCache::MeanField { logits, trace })
        }
        ExpectationMode::Enumerate => {
            let mut total = 0.0;
            let mut per_config = Vec::with_capacity(1 << cfg.k);
            for (c, (logits, _)) in prep.hard[t].iter().enumerate() {
                let qc = factorized_prob(&q, c);
                let lp = log_prob_of(logits, action_idx);
                total += qc * lp;
                per_config.push((qc, lp));
            }
            (total, ActionCache::Enumerate { per_config })
        }
    };

    Ok(StepResult {
        terms: StepTerms {
            action_term,
            kl_term,
            prior,
            posterior,
        },
        cache: StepCache {
            unary_traces,
            potentials,
            gibbs,
            q,
            action_idx,
            action,
        },
    })
}

/// One timestep of the variational objective given the marginals carried in
/// from the previous step.
pub fn forward_step(
    traj: &Trajectory,
    t: usize,
    prev_marginals: &BeliefMarginals,
    params: &ParamSet,
    table: &EmbeddingTable,
    cfg: &ModelConfig,
) -> Result<StepTerms> {
    let prep = Prepared::new(params, table, cfg)?;
    Ok(run_step(traj, t, prev_marginals, &prep, params, table, cfg)?.terms)
}

fn check_finite(traj: &Trajectory, t: usize, terms: &StepTerms) -> Result<()> {
    if terms.action_term.is_finite() && terms.kl_term.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite {
            trajectory: traj.agent_id.clone(),
            timestep: t,
        })
    }
}

fn run_trajectory(
    traj: &Trajectory,
    params: &ParamSet,
    table: &EmbeddingTable,
    cfg: &ModelConfig,
    obj: &Objective,
    prep: &Prepared,
) -> Result<Vec<StepResult>> {
    if traj.len() != cfg.t || traj.action_ids.len() != cfg.t {
        return Err(Error::Validation(format!(
            "agent {}: trajectory length {} does not match T={}",
            traj.agent_id,
            traj.len(),
            cfg.t
        )));
    }
    let mut prev = traj.initial_marginals(cfg);
    let mut steps = Vec::with_capacity(cfg.t);
    for t in 0..cfg.t {
        let step = run_step(traj, t, &prev, prep, params, table, cfg)?;
        check_finite(traj, t, &step.terms)?;
        prev = if obj.teacher_forcing {
            step.terms.posterior.clone()
        } else {
            step.terms.prior.clone()
        };
        steps.push(step);
    }
    Ok(steps)
}

/// Per-step terms along the whole trajectory.
pub fn trajectory_terms(
    traj: &Trajectory,
    params: &ParamSet,
    table: &EmbeddingTable,
    cfg: &ModelConfig,
    obj: &Objective,
) -> Result<Vec<StepTerms>> {
    trajectory_terms_with(traj, params, table, cfg, obj, &Prepared::new(params, table, cfg)?)
}

pub(crate) fn trajectory_terms_with(
    traj: &Trajectory,
    params: &ParamSet,
    table: &EmbeddingTable,
    cfg: &ModelConfig,
    obj: &Objective,
    prep: &Prepared,
) -> Result<Vec<StepTerms>> {
    Ok(run_trajectory(traj, params, table, cfg, obj, prep)?
        .into_iter()
        .map(|s| s.terms)
        .collect())
}

/// Negative ELBO summed over timesteps (KL scaled by `obj.kl_weight`).
pub fn trajectory_loss(
    traj: &Trajectory,
    params: &ParamSet,
    table: &EmbeddingTable,
    cfg: &ModelConfig,
    obj: &Objective,
) -> Result<f64> {
    trajectory_loss_with(traj, params, table, cfg, obj, &Prepared::new(params, table, cfg)?)
}

pub(crate) fn trajectory_loss_with(
    traj: &Trajectory,
    params: &ParamSet,
    table: &EmbeddingTable,
    cfg: &ModelConfig,
    obj: &Objective,
    prep: &Prepared,
) -> Result<f64> {
    Ok(trajectory_terms_with(traj, params, table, cfg, obj, prep)?
        .iter()
        .map(|s| obj.kl_weight * s.kl_term - s.action_term)
        .sum())
}

/// Trajectory loss and its gradient, accumulated into `grad`.
#[cfg(test)]
pub(crate) fn trajectory_loss_and_grad(
    traj: &Trajectory,
    params: &ParamSet,
    table: &EmbeddingTable,
    cfg: &ModelConfig,
    obj: &Objective,
    prep: &Prepared,
    grad: &mut ParamSet,
) -> Result<f64> {
    let mut g_hard = prep.logit_grad_buffer();
    let loss = trajectory_loss_and_partial_grad(traj, params, table, cfg, obj, prep, grad, &mut g_hard)?;
    prep.flush_logit_grads(&g_hard, params, grad);
    Ok(loss)
}

/// As [`trajectory_loss_and_grad`], except that gradients with respect to the
/// shared hard-configuration logits are left in `g_hard` for
/// [`Prepared::flush_logit_grads`].
#[allow(clippy::too_many_arguments)]
pub(crate) fn trajectory_loss_and_partial_grad(
    traj: &Trajectory,
    params: &ParamSet,
    table: &EmbeddingTable,
    cfg: &ModelConfig,
    obj: &Objective,
    prep: &Prepared,
    grad: &mut ParamSet,
    g_hard: &mut [f64],
) -> Result<f64> {
    let steps = run_trajectory(traj, params, table, cfg, obj, prep)?;
    let loss = steps
        .iter()
        .map(|s| obj.kl_weight * s.terms.kl_term - s.terms.action_term)
        .sum();
    let k = cfg.k;
    let w = obj.kl_weight;
    let mut g_psi_total = vec![vec![0.0; k]; k];
    let mut g_carry = vec![0.0; k];

    for (t, step) in steps.iter().enumerate().rev() {
        let c = &step.cache;
        let plan = &prep.plans[t];
        let (kq, ku, kpsi) = kl_grads(&c.q, &c.potentials, &c.gibbs);
        let mut g_q: Vec<f64> = kq.iter().map(|v| w * v).collect();
        let mut g_u: Vec<f64> = ku.iter().map(|v| w * v).collect();
        let mut g_psi: Vec<Vec<f64>> = kpsi.iter().map(|r| r.iter().map(|v| w * v).collect()).collect();

        if !obj.teacher_forcing && g_carry.iter().any(|&v| v != 0.0) {
            let (mu_u, mu_psi) = c.gibbs.marginals_vjp(&g_carry);
            for i in 0..k {
                g_u[i] += mu_u[i];
                for j in i + 1..k {
                    g_psi[i][j] += mu_psi[i][j];
                }
            }
        }

        match &c.action {
            ActionCache::MeanField { logits, trace } => {
                let mut g_logits = softmax(logits);
                g_logits[c.action_idx] -= 1.0;
                let mut acc = plan.new_acc();
                let g_m = plan.backward(trace, &g_logits, &params.attention, &mut acc);
                plan.flush(&acc, &mut grad.attention);
                for (a, b) in g_q.iter_mut().zip(g_m) {
                    *a += b;
                }
            }
            ActionCache::Enumerate { per_config } => {
                let width = cfg.mask(t)?.len();
                for (cidx, &(qc, lp)) in per_config.iter().enumerate() {
                    let start = prep.offsets[t] + cidx * width;
                    let g = &mut g_hard[start..start + width];
                    for (gl, p) in g.iter_mut().zip(softmax(&prep.hard[t][cidx].0)) {
                        *gl += qc * p;
                    }
                    g[c.action_idx] -= qc;
                    for (i, gq) in g_q.iter_mut().enumerate() {
                        let dq = if (cidx >> i) & 1 == 1 { qc / c.q[i] } else { -qc / (1.0 - c.q[i]) };
                        *gq -= lp * dq;
                    }
                }
            }
        }

        posterior_backward(
            traj.observation_ids[t],
            traj.action_ids[t],
            &c.q,
            &g_q,
            table,
            &mut grad.inference,
        )?;
        let g_prev = unary_backward(&c.unary_traces, &g_u, &params.unary, &mut grad.unary);
        for i in 0..k {
            for j in i + 1..k {
                g_psi_total[i][j] += g_psi[i][j];
            }
        }
        g_carry = if t > 0 && !obj.teacher_forcing { g_prev } else { vec![0.0; k] };
    }
    pairwise_backward(table, &g_psi_total, cfg, &mut grad.pairwise)?;
    Ok(loss)
}
