//! Amortized factorized posterior over beliefs, conditioned on the
//! observation and the realized action. Training only.

use serde::{Deserialize, Serialize};

use crate::belief_graph::relu_dot;
use crate::config::{clamp_prob, BeliefMarginals, ModelConfig, PROB_CLAMP};
use crate::embeddings::{EmbeddingKey, EmbeddingTable};
use crate::error::{Error, Result};

/// One weight vector and bias shared by every belief and timestep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceParams {
    pub w: Vec<f64>,
    pub bias: f64,
}

pub(crate) fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `q_i = clamp(σ(w · ReLU(u_i) + bias))` for each belief.
pub fn posterior_marginals(
    obs: u32,
    action: usize,
    table: &EmbeddingTable,
    params: &InferenceParams,
    cfg: &ModelConfig,
) -> Result<BeliefMarginals> {
    Ok(BeliefMarginals(
        posterior_logits(obs, action, table, params, cfg)?
            .into_iter()
            .map(|l| clamp_prob(logistic(l)))
            .collect(),
    ))
}

pub(crate) fn posterior_logits(
    obs: u32,
    action: usize,
    table: &EmbeddingTable,
    params: &InferenceParams,
    cfg: &ModelConfig,
) -> Result<Vec<f64>> {
    (0..cfg.k)
        .map(|i| {
            let u = table.get(&EmbeddingKey::inf(obs, action, i))?;
            if u.len() != params.w.len() {
                return Err(Error::Dimension {
                    context: "inference head",
                    expected: u.len(),
                    found: params.w.len(),
                });
            }
            Ok(relu_dot(&params.w, u) + params.bias)
        })
        .collect()
}

/// Backpropagates `g_q` through the clamp and logistic into `grad`.
pub(crate) fn posterior_backward(
    obs: u32,
    action: usize,
    q: &[f64],
    g_q: &[f64],
    table: &EmbeddingTable,
    grad: &mut InferenceParams,
) -> Result<()> {
    for (i, (&qi, &g)) in q.iter().zip(g_q).enumerate() {
        // the clamp is flat at its bounds
        if qi <= PROB_CLAMP || qi >= 1.0 - PROB_CLAMP {
            continue;
        }
        let g_logit = g * qi * (1.0 - qi);
        let u = table.get(&EmbeddingKey::inf(obs, action, i))?;
        grad.bias += g_logit;
        for (gw, &uv) in grad.w.iter_mut().zip(u) {
            if uv > 0.0 {
                *gw += g_logit * uv;
            }
        }
    }
    Ok(())
}
