//! Belief-conditioned action likelihood.
//!
//! For each candidate action the K belief tokens are affine mixes of the
//! "belief active" and "belief inactive" action embeddings, weighted by the
//! belief marginals. One self-attention layer (projections shared across
//! actions) runs over the tokens, the outputs are mean-pooled and a linear
//! head gives the action logit. Softmax is taken over the permitted actions
//! of the timestep only.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::config::{BeliefMarginals, ModelConfig};
use crate::embeddings::{EmbeddingKey, EmbeddingTable};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionParams {
    /// `d x d_k` query projection.
    pub w_q: DMatrix<f64>,
    pub w_k: DMatrix<f64>,
    pub w_v: DMatrix<f64>,
    /// Scalar head over the pooled `d_k` representation.
    pub w_a: DVector<f64>,
    pub beta_a: f64,
}

impl AttentionParams {
    pub fn zeros(d: usize, d_k: usize) -> Self {
        AttentionParams {
            w_q: DMatrix::zeros(d, d_k),
            w_k: DMatrix::zeros(d, d_k),
            w_v: DMatrix::zeros(d, d_k),
            w_a: DVector::zeros(d_k),
            beta_a: 0.0,
        }
    }

    pub fn embed_dim(&self) -> usize {
        self.w_q.nrows()
    }

    pub fn attn_dim(&self) -> usize {
        self.w_q.ncols()
    }
}

/// Output of one attention pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Attention {
    /// Row-stochastic `K x K` matrix; `weights[(i, k)]` is how much belief `k`
    /// contributes to the representation of belief `i`.
    pub weights: DMatrix<f64>,
    /// `K x d_k` interaction-aware features.
    pub output: DMatrix<f64>,
}

/// `E1 - E0` rows and `E0` for one action, so tokens are `E0 + diag(m) (E1 - E0)`.
struct ActionEmbeddings {
    base: DMatrix<f64>,
    diff: DMatrix<f64>,
}

fn action_embeddings(action: usize, k: usize, table: &EmbeddingTable) -> Result<ActionEmbeddings> {
    let d = table.dim();
    let mut base = DMatrix::zeros(k, d);
    let mut diff = DMatrix::zeros(k, d);
    for i in 0..k {
        let e1 = table.get(&EmbeddingKey::act_bel(action, i, true))?;
        let e0 = table.get(&EmbeddingKey::act_bel(action, i, false))?;
        for c in 0..d {
            base[(i, c)] = e0[c];
            diff[(i, c)] = e1[c] - e0[c];
        }
    }
    Ok(ActionEmbeddings { base, diff })
}

fn tokens_from(emb: &ActionEmbeddings, m: &[f64]) -> DMatrix<f64> {
    let mut x = emb.base.clone();
    for (i, &mi) in m.iter().enumerate() {
        for c in 0..x.ncols() {
            x[(i, c)] += mi * emb.diff[(i, c)];
        }
    }
    x
}

/// Token matrix `X` for action `j`: row `i` is `m_i e1_{j,i} + (1 - m_i) e0_{j,i}`.
pub fn belief_tokens(m: &BeliefMarginals, action: usize, table: &EmbeddingTable) -> Result<DMatrix<f64>> {
    let emb = action_embeddings(action, m.len(), table)?;
    Ok(tokens_from(&emb, m.as_slice()))
}

fn softmax_rows(s: &mut DMatrix<f64>) {
    for mut row in s.row_iter_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.apply(|v| *v = (*v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
}

pub fn attend(x: &DMatrix<f64>, params: &AttentionParams) -> Result<Attention> {
    if x.ncols() != params.embed_dim() {
        return Err(Error::Dimension {
            context: "attention input",
            expected: params.embed_dim(),
            found: x.ncols(),
        });
    }
    let q = x * &params.w_q;
    let k = x * &params.w_k;
    let v = x * &params.w_v;
    let scale = 1.0 / (params.attn_dim() as f64).sqrt();
    let mut a = (&q * k.transpose()) * scale;
    softmax_rows(&mut a);
    let output = &a * &v;
    Ok(Attention { weights: a, output })
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    logits.iter().map(|l| l - lse).collect()
}

/// Log-probabilities of the actions permitted at step `t`, in mask order.
/// Actions outside the mask have probability zero and are not returned.
pub fn action_log_probs(
    m: &BeliefMarginals,
    t: usize,
    table: &EmbeddingTable,
    params: &AttentionParams,
    cfg: &ModelConfig,
) -> Result<Vec<f64>> {
    Ok(ActionPlan::new(t, table, params, cfg)?.log_probs(m, params, false)?.0)
}

/// Like [`action_log_probs`], also returning each permitted action's
/// attention matrix.
pub fn action_log_probs_with_attention(
    m: &BeliefMarginals,
    t: usize,
    table: &EmbeddingTable,
    params: &AttentionParams,
    cfg: &ModelConfig,
) -> Result<(Vec<f64>, Vec<DMatrix<f64>>)> {
    let (lp, att) = ActionPlan::new(t, table, params, cfg)?.log_probs(m, params, true)?;
    Ok((lp, att.unwrap_or_default()))
}

/// One plan per timestep.
pub(crate) fn plans_for(table: &EmbeddingTable, params: &AttentionParams, cfg: &ModelConfig) -> Result<Vec<ActionPlan>> {
    (0..cfg.t).map(|t| ActionPlan::new(t, table, params, cfg)).collect()
}

// Q, K and V projections, indexed [proj][i * d_k + c].
type Proj3 = [Vec<f64>; 3];

/// Action log-probabilities and, on request, one attention matrix per action.
type LogProbs = (Vec<f64>, Option<Vec<DMatrix<f64>>>);

struct PlannedAction {
    emb: ActionEmbeddings,
    /// `E0 W` for the three projections.
    base: Proj3,
    /// `(E1 - E0) W`; row `i` is scaled by `m_i`.
    delta: Proj3,
}

/// Per-step projections of every permitted action's embeddings. Tokens are
/// affine in the marginals, so `X W = E0 W + diag(m) (E1 - E0) W` and the
/// `d`-dimensional products are done once per step, not once per input.
pub(crate) struct ActionPlan {
    k: usize,
    dk: usize,
    actions: Vec<PlannedAction>,
}

struct TraceEntry {
    proj: Proj3,
    a: Vec<f64>,
    pooled: Vec<f64>,
}

pub(crate) struct ActionTrace {
    m: Vec<f64>,
    per_action: Vec<TraceEntry>,
}

/// Gradient sums kept in projected space until [`ActionPlan::flush`].
pub(crate) struct ActionGradAcc {
    g_base: Vec<Proj3>,
    g_delta: Vec<Proj3>,
    w_a: Vec<f64>,
    beta_a: f64,
}

fn project(x: &DMatrix<f64>, w: &DMatrix<f64>) -> Vec<f64> {
    let p = x * w;
    let mut out = Vec::with_capacity(p.len());
    for i in 0..p.nrows() {
        out.extend(p.row(i).iter());
    }
    out
}

impl ActionPlan {
    pub(crate) fn new(t: usize, table: &EmbeddingTable, params: &AttentionParams, cfg: &ModelConfig) -> Result<Self> {
        if table.dim() != params.embed_dim() {
            return Err(Error::Dimension {
                context: "attention input",
                expected: params.embed_dim(),
                found: table.dim(),
            });
        }
        let ws = [&params.w_q, &params.w_k, &params.w_v];
        let actions = cfg
            .mask(t)?
            .iter()
            .map(|&j| {
                let emb = action_embeddings(j, cfg.k, table)?;
                let base = ws.map(|w| project(&emb.base, w));
                let delta = ws.map(|w| project(&emb.diff, w));
                Ok(PlannedAction { emb, base, delta })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ActionPlan {
            k: cfg.k,
            dk: params.attn_dim(),
            actions,
        })
    }

    pub(crate) fn forward(&self, m: &BeliefMarginals, params: &AttentionParams) -> Result<(Vec<f64>, ActionTrace)> {
        let (k, dk) = (self.k, self.dk);
        if m.len() != k {
            return Err(Error::Dimension {
                context: "action model marginals",
                expected: k,
                found: m.len(),
            });
        }
        let scale = 1.0 / (dk as f64).sqrt();
        let mut logits = Vec::with_capacity(self.actions.len());
        let mut per_action = Vec::with_capacity(self.actions.len());
        for act in &self.actions {
            let proj: Proj3 = std::array::from_fn(|p| {
                let mut v = act.base[p].clone();
                for i in 0..k {
                    for c in 0..dk {
                        v[i * dk + c] += m[i] * act.delta[p][i * dk + c];
                    }
                }
                v
            });
            let [q, kk, v] = &proj;
            let mut a = vec![0.0; k * k];
            for i in 0..k {
                let row = &mut a[i * k..(i + 1) * k];
                for (l, s) in row.iter_mut().enumerate() {
                    *s = (0..dk).map(|c| q[i * dk + c] * kk[l * dk + c]).sum::<f64>() * scale;
                }
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for s in row.iter_mut() {
                    *s = (*s - max).exp();
                    sum += *s;
                }
                row.iter_mut().for_each(|s| *s /= sum);
            }
            // mean over rows of A V is (column means of A) V
            let mut pooled = vec![0.0; dk];
            for l in 0..k {
                let col_mean = (0..k).map(|i| a[i * k + l]).sum::<f64>() / k as f64;
                for c in 0..dk {
                    pooled[c] += col_mean * v[l * dk + c];
                }
            }
            let logit = params.w_a.iter().zip(&pooled).map(|(w, z)| w * z).sum::<f64>() + params.beta_a;
            logits.push(logit);
            per_action.push(TraceEntry { proj, a, pooled });
        }
        Ok((
            logits,
            ActionTrace {
                m: m.0.clone(),
                per_action,
            },
        ))
    }

    pub(crate) fn log_probs(
        &self,
        m: &BeliefMarginals,
        params: &AttentionParams,
        with_attention: bool,
    ) -> Result<LogProbs> {
        let (logits, trace) = self.forward(m, params)?;
        let k = self.k;
        let attn = with_attention.then(|| {
            trace
                .per_action
                .into_iter()
                .map(|e| DMatrix::from_row_slice(k, k, &e.a))
                .collect()
        });
        Ok((log_softmax(&logits), attn))
    }

    pub(crate) fn new_acc(&self) -> ActionGradAcc {
        let zeros = || -> Proj3 { std::array::from_fn(|_| vec![0.0; self.k * self.dk]) };
        ActionGradAcc {
            g_base: self.actions.iter().map(|_| zeros()).collect(),
            g_delta: self.actions.iter().map(|_| zeros()).collect(),
            w_a: vec![0.0; self.dk],
            beta_a: 0.0,
        }
    }

    /// Backpropagates `g_logits` (one per permitted action) into `acc` and
    /// returns the gradient with respect to the input marginals.
    pub(crate) fn backward(
        &self,
        trace: &ActionTrace,
        g_logits: &[f64],
        params: &AttentionParams,
        acc: &mut ActionGradAcc,
    ) -> Vec<f64> {
        let (k, dk) = (self.k, self.dk);
        let scale = 1.0 / (dk as f64).sqrt();
        let mut g_m = vec![0.0; k];
        for (ai, (entry, &g)) in trace.per_action.iter().zip(g_logits).enumerate() {
            if g == 0.0 {
                continue;
            }
            acc.beta_a += g;
            for (w, z) in acc.w_a.iter_mut().zip(&entry.pooled) {
                *w += g * z;
            }
            // every row of Z receives w_a * g / K
            let g_row: Vec<f64> = params.w_a.iter().map(|w| w * g / k as f64).collect();
            let [q, kk, v] = &entry.proj;
            let a = &entry.a;
            let mut g_proj: Proj3 = std::array::from_fn(|_| vec![0.0; k * dk]);
            // dV = A^T dZ, and dZ has identical rows
            for l in 0..k {
                let col: f64 = (0..k).map(|i| a[i * k + l]).sum();
                for c in 0..dk {
                    g_proj[2][l * dk + c] = col * g_row[c];
                }
            }
            // dA[i][l] = g_row . v_l, the same for every i
            let g_a_col: Vec<f64> = (0..k)
                .map(|l| (0..dk).map(|c| g_row[c] * v[l * dk + c]).sum())
                .collect();
            for i in 0..k {
                let dot: f64 = (0..k).map(|l| a[i * k + l] * g_a_col[l]).sum();
                for l in 0..k {
                    let gs = a[i * k + l] * (g_a_col[l] - dot) * scale;
                    if gs == 0.0 {
                        continue;
                    }
                    for c in 0..dk {
                        g_proj[0][i * dk + c] += gs * kk[l * dk + c];
                        g_proj[1][l * dk + c] += gs * q[i * dk + c];
                    }
                }
            }
            let act = &self.actions[ai];
            for p in 0..3 {
                for i in 0..k {
                    let mi = trace.m[i];
                    for c in 0..dk {
                        let gp = g_proj[p][i * dk + c];
                        g_m[i] += gp * act.delta[p][i * dk + c];
                        acc.g_base[ai][p][i * dk + c] += gp;
                        acc.g_delta[ai][p][i * dk + c] += mi * gp;
                    }
                }
            }
        }
        g_m
    }

    /// Maps the accumulated projected-space sums back onto the weights:
    /// `dW += E0^T G_base + (E1 - E0)^T G_delta` for every action.
    pub(crate) fn flush(&self, acc: &ActionGradAcc, grad: &mut AttentionParams) {
        let (k, dk) = (self.k, self.dk);
        grad.beta_a += acc.beta_a;
        for (w, g) in grad.w_a.iter_mut().zip(&acc.w_a) {
            *w += g;
        }
        for (ai, act) in self.actions.iter().enumerate() {
            for p in 0..3 {
                let gb = DMatrix::from_row_slice(k, dk, &acc.g_base[ai][p]);
                let gd = DMatrix::from_row_slice(k, dk, &acc.g_delta[ai][p]);
                let dw = act.emb.base.transpose() * gb + act.emb.diff.transpose() * gd;
                match p {
                    0 => grad.w_q += dw,
                    1 => grad.w_k += dw,
                    _ => grad.w_v += dw,
                }
            }
        }
    }
}
