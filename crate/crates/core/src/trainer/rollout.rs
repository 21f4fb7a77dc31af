use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::action_model::{plans_for, ActionPlan};
use crate::belief_graph::{build_potentials, marginals};
use crate::config::{BeliefMarginals, ModelConfig};
use crate::embeddings::EmbeddingTable;
use crate::error::{Error, Result};

use super::params::ParamSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ActionSelection {
    #[default]
    Argmax,
    /// Seeded draw from the action distribution.
    Sample,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RolloutOptions {
    pub selection: ActionSelection,
    pub rng_seed: u64,
    pub with_attention: bool,
    /// Chain start; `cfg.initial_marginal` for every belief when absent.
    pub initial: Option<BeliefMarginals>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutStep {
    pub marginals: BeliefMarginals,
    pub action: usize,
    /// Log-probabilities aligned with the step's action mask.
    pub log_probs: Vec<f64>,
    /// One `K x K` matrix per permitted action, when requested.
    pub attention: Option<Vec<DMatrix<f64>>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub steps: Vec<RolloutStep>,
}

impl Rollout {
    pub fn marginals(&self) -> Vec<BeliefMarginals> {
        self.steps.iter().map(|s| s.marginals.clone()).collect()
    }

    pub fn actions(&self) -> Vec<usize> {
        self.steps.iter().map(|s| s.action).collect()
    }
}

/// Test-time simulation with the generative model only: prior marginals are
/// chained through the observations and actions are read off the action
/// model. Inference parameters and true actions are never consulted.
pub fn rollout(
    params: &ParamSet,
    table: &EmbeddingTable,
    cfg: &ModelConfig,
    obs_sequence: &[u32],
    opts: &RolloutOptions,
) -> Result<Rollout> {
    rollout_with(params, table, cfg, obs_sequence, opts, &plans_for(table, &params.attention, cfg)?)
}

pub(crate) fn rollout_with(
    params: &ParamSet,
    table: &EmbeddingTable,
    cfg: &ModelConfig,
    obs_sequence: &[u32],
    opts: &RolloutOptions,
    plans: &[ActionPlan],
) -> Result<Rollout> {
    if obs_sequence.len() != cfg.t {
        return Err(Error::Validation(format!(
            "rollout needs {} observations, got {}",
            cfg.t,
            obs_sequence.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.rng_seed);
    let mut prev = opts
        .initial
        .clone()
        .unwrap_or_else(|| BeliefMarginals::constant(cfg.k, cfg.initial_marginal));
    let mut steps = Vec::with_capacity(cfg.t);
    for (t, &obs) in obs_sequence.iter().enumerate() {
        let pot = build_potentials(&prev, obs, table, &params.unary, &params.pairwise, cfg)?;
        let m = marginals(&pot, cfg)?;
        let (log_probs, attention) = plans[t].log_probs(&m, &params.attention, opts.with_attention)?;
        let mask = cfg.mask(t)?;
        let pick = match opts.selection {
            ActionSelection::Argmax => argmax(&log_probs),
            ActionSelection::Sample => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut chosen = log_probs.len() - 1;
                for (i, lp) in log_probs.iter().enumerate() {
                    acc += lp.exp();
                    if u < acc {
                        chosen = i;
                        break;
                    }
                }
                chosen
            }
        };
        steps.push(RolloutStep {
            marginals: m.clone(),
            action: mask[pick],
            log_probs,
            attention,
        });
        prev = m;
    }
    Ok(Rollout { steps })
}

/// First index of the maximum.
pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Attention matrix as CSV: rows are belief `i`, columns belief `k`.
pub fn attention_csv(a: &DMatrix<f64>) -> String {
    let mut out = String::new();
    for r in 0..a.nrows() {
        let row: Vec<String> = (0..a.ncols()).map(|c| a[(r, c)].to_string()).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}
