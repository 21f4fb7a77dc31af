//! Energy-based belief transition prior.
//!
//! Embeddings are projected to a unary log-potential per belief and a
//! pairwise log-potential per belief pair. The joint over `{0,1}^K` is the
//! Gibbs distribution `p(b) ∝ exp(E(b))` with
//! `E(b) = Σ_i u_i b_i + Σ_{i<j} ψ_ij b_i b_j`, i.e. inactive states carry
//! zero log-potential. Everything here is exact enumeration over all `2^K`
//! configurations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{clamp_prob, Ablation, BeliefConfig, BeliefMarginals, ModelConfig};
use crate::embeddings::{mix_history, EmbeddingKey, EmbeddingTable};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnaryHead {
    pub w: Vec<f64>,
    pub beta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseHead {
    pub w: Vec<f64>,
    pub beta: f64,
}

/// Log-potentials of one transition: `unary[i]` for belief `i` being active,
/// `pairwise[i][j]` (symmetric, zero diagonal) for `i` and `j` both active.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionPotentials {
    pub unary: Vec<f64>,
    pub pairwise: Vec<Vec<f64>>,
}

impl TransitionPotentials {
    pub fn independent(unary: Vec<f64>) -> Self {
        let k = unary.len();
        TransitionPotentials {
            unary,
            pairwise: vec![vec![0.0; k]; k],
        }
    }

    /// Builds potentials from unary values and the upper triangle of ψ in
    /// `(i<j)` lexicographic order.
    pub fn from_upper(unary: Vec<f64>, upper: &[f64]) -> Result<Self> {
        let k = unary.len();
        if upper.len() != k * k.saturating_sub(1) / 2 {
            return Err(Error::Dimension {
                context: "pairwise upper triangle",
                expected: k * k.saturating_sub(1) / 2,
                found: upper.len(),
            });
        }
        let mut pot = Self::independent(unary);
        let mut it = upper.iter();
        for i in 0..k {
            for j in i + 1..k {
                let v = *it.next().unwrap();
                pot.pairwise[i][j] = v;
                pot.pairwise[j][i] = v;
            }
        }
        Ok(pot)
    }

    pub fn k(&self) -> usize {
        self.unary.len()
    }
}

pub(crate) fn relu_dot(w: &[f64], h: &[f64]) -> f64 {
    w.iter().zip(h).map(|(w, h)| w * h.max(0.0)).sum()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Cosine similarity and its gradient with respect to `h`. A zero `h` has
/// cosine 0 and zero gradient.
fn cosine_with_grad(h: &[f64], r: &[f64], r_norm: f64) -> (f64, Vec<f64>) {
    let hn = norm(h);
    if hn == 0.0 {
        return (0.0, vec![0.0; h.len()]);
    }
    let hr = dot(h, r);
    let c = hr / (hn * r_norm);
    let grad = h
        .iter()
        .zip(r)
        .map(|(hi, ri)| ri / (hn * r_norm) - hr * hi / (hn * hn * hn * r_norm))
        .collect();
    (c, grad)
}

fn reference_norm(r: &[f64], which: &str) -> Result<f64> {
    let n = norm(r);
    if n > 0.0 && n.is_finite() {
        Ok(n)
    } else {
        Err(Error::DegenerateEmbedding(format!("{which} reference vector has zero norm")))
    }
}

/// Contrastive anchor `τ (cos(h, h_yes) - cos(h, h_no))`.
pub fn base_unary_score(h: &[f64], h_yes: &[f64], h_no: &[f64], tau: f64) -> Result<f64> {
    if h.len() != h_yes.len() || h.len() != h_no.len() {
        return Err(Error::Dimension {
            context: "base_unary_score",
            expected: h.len(),
            found: if h.len() != h_yes.len() { h_yes.len() } else { h_no.len() },
        });
    }
    let ny = reference_norm(h_yes, "yes")?;
    let nn = reference_norm(h_no, "no")?;
    let (cy, _) = cosine_with_grad(h, h_yes, ny);
    let (cn, _) = cosine_with_grad(h, h_no, nn);
    Ok(tau * (cy - cn))
}

/// What the unary backward pass needs from one belief's forward pass.
#[derive(Debug, Clone)]
pub(crate) struct UnaryTrace {
    h: Vec<f64>,
    /// `∂h/∂p_prev = h_yes - h_no`.
    direction: Vec<f64>,
    cos_grad: Vec<f64>,
    /// Whether `prev` actually entered `h` (false under no_temporal).
    temporal: bool,
}

pub(crate) fn unary_potentials_traced(
    prev: &BeliefMarginals,
    obs: u32,
    table: &EmbeddingTable,
    head: &UnaryHead,
    cfg: &ModelConfig,
) -> Result<(Vec<f64>, Vec<UnaryTrace>)> {
    if prev.len() != cfg.k {
        return Err(Error::Dimension {
            context: "previous marginals",
            expected: cfg.k,
            found: prev.len(),
        });
    }
    let temporal = cfg.ablation != Ablation::NoTemporal;
    let mut unary = Vec::with_capacity(cfg.k);
    let mut traces = Vec::with_capacity(cfg.k);
    for i in 0..cfg.k {
        let h_yes = table.get(&EmbeddingKey::bel_obs(obs, i, true))?;
        let h_no = table.get(&EmbeddingKey::bel_obs(obs, i, false))?;
        let p = if temporal { prev[i] } else { 0.5 };
        let h = mix_history(h_yes, h_no, p)?;
        if head.w.len() != h.len() {
            return Err(Error::Dimension {
                context: "unary head",
                expected: h.len(),
                found: head.w.len(),
            });
        }
        let (cy, gy) = cosine_with_grad(&h, h_yes, reference_norm(h_yes, "yes")?);
        let (cn, gn) = cosine_with_grad(&h, h_no, reference_norm(h_no, "no")?);
        unary.push(cfg.tau * (cy - cn) + relu_dot(&head.w, &h) + head.beta);
        traces.push(UnaryTrace {
            direction: h_yes.iter().zip(h_no).map(|(y, n)| y - n).collect(),
            cos_grad: gy.iter().zip(&gn).map(|(a, b)| cfg.tau * (a - b)).collect(),
            h,
            temporal,
        });
    }
    Ok((unary, traces))
}

/// Accumulates head gradients for upstream `g_unary` and returns the
/// gradient with respect to the previous marginals.
pub(crate) fn unary_backward(
    traces: &[UnaryTrace],
    g_unary: &[f64],
    head: &UnaryHead,
    grad: &mut UnaryHead,
) -> Vec<f64> {
    traces
        .iter()
        .zip(g_unary)
        .map(|(tr, &g)| {
            grad.beta += g;
            let mut g_p = 0.0;
            for d in 0..tr.h.len() {
                let active = tr.h[d] > 0.0;
                if active {
                    grad.w[d] += g * tr.h[d];
                }
                let dh = tr.cos_grad[d] + if active { head.w[d] } else { 0.0 };
                g_p += g * dh * tr.direction[d];
            }
            if tr.temporal {
                g_p
            } else {
                0.0
            }
        })
        .collect()
}

/// Pairwise log-potentials; they depend on neither time nor observation.
pub(crate) fn pairwise_potentials(
    table: &EmbeddingTable,
    head: &PairwiseHead,
    cfg: &ModelConfig,
) -> Result<Vec<Vec<f64>>> {
    let k = cfg.k;
    let mut psi = vec![vec![0.0; k]; k];
    if cfg.ablation == Ablation::NoPairwise {
        return Ok(psi);
    }
    for i in 0..k {
        for j in i + 1..k {
            let h = table.get(&EmbeddingKey::pair(i, j))?;
            if head.w.len() != h.len() {
                return Err(Error::Dimension {
                    context: "pairwise head",
                    expected: h.len(),
                    found: head.w.len(),
                });
            }
            let v = relu_dot(&head.w, h) + head.beta;
            psi[i][j] = v;
            psi[j][i] = v;
        }
    }
    Ok(psi)
}

pub(crate) fn pairwise_backward(
    table: &EmbeddingTable,
    g_psi: &[Vec<f64>],
    cfg: &ModelConfig,
    grad: &mut PairwiseHead,
) -> Result<()> {
    if cfg.ablation == Ablation::NoPairwise {
        return Ok(());
    }
    for i in 0..cfg.k {
        for j in i + 1..cfg.k {
            let g = g_psi[i][j];
            if g == 0.0 {
                continue;
            }
            let h = table.get(&EmbeddingKey::pair(i, j))?;
            grad.beta += g;
            for (gw, &hv) in grad.w.iter_mut().zip(h) {
                if hv > 0.0 {
                    *gw += g * hv;
                }
            }
        }
    }
    Ok(())
}

/// Unary and pairwise log-potentials for the transition into the step that
/// observes `obs`, given the previous marginals.
pub fn build_potentials(
    prev: &BeliefMarginals,
    obs: u32,
    table: &EmbeddingTable,
    unary: &UnaryHead,
    pairwise: &PairwiseHead,
    cfg: &ModelConfig,
) -> Result<TransitionPotentials> {
    let (u, _) = unary_potentials_traced(prev, obs, table, unary, cfg)?;
    Ok(TransitionPotentials {
        unary: u,
        pairwise: pairwise_potentials(table, pairwise, cfg)?,
    })
}

pub fn energy(pot: &TransitionPotentials, b: &BeliefConfig) -> Result<f64> {
    if b.k() != pot.k() {
        return Err(Error::Dimension {
            context: "energy",
            expected: pot.k(),
            found: b.k(),
        });
    }
    Ok(energy_of_index(pot, b.index))
}

fn energy_of_index(pot: &TransitionPotentials, idx: usize) -> f64 {
    let k = pot.k();
    let mut e = 0.0;
    for i in 0..k {
        if (idx >> i) & 1 == 1 {
            e += pot.unary[i];
            for j in i + 1..k {
                if (idx >> j) & 1 == 1 {
                    e += pot.pairwise[i][j];
                }
            }
        }
    }
    e
}

/// The normalized Gibbs distribution over all `2^K` configurations.
#[derive(Debug, Clone)]
pub struct GibbsDistribution {
    k: usize,
    log_z: f64,
    probs: Vec<f64>,
}

impl GibbsDistribution {
    pub fn new(pot: &TransitionPotentials, cfg: &ModelConfig) -> Result<Self> {
        let k = pot.k();
        if k > cfg.max_enum_k {
            return Err(Error::EnumerationLimit {
                k,
                limit: cfg.max_enum_k,
            });
        }
        let energies: Vec<f64> = (0..1usize << k).map(|c| energy_of_index(pot, c)).collect();
        let max = energies.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        let mut probs: Vec<f64> = energies
            .iter()
            .map(|e| {
                let w = (e - max).exp();
                sum += w;
                w
            })
            .collect();
        for p in probs.iter_mut() {
            *p /= sum;
        }
        Ok(GibbsDistribution {
            k,
            log_z: max + sum.ln(),
            probs,
        })
    }

    pub fn log_partition(&self) -> f64 {
        self.log_z
    }

    /// Probabilities indexed by configuration index.
    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn marginals(&self) -> BeliefMarginals {
        let mut m = vec![0.0; self.k];
        for (c, &p) in self.probs.iter().enumerate() {
            for (i, mi) in m.iter_mut().enumerate() {
                if (c >> i) & 1 == 1 {
                    *mi += p;
                }
            }
        }
        BeliefMarginals(m.into_iter().map(|v: f64| v.clamp(0.0, 1.0)).collect())
    }

    /// `P(b_i = 1, b_j = 1)`; the diagonal holds the single-belief marginals.
    pub fn pair_marginals(&self) -> Vec<Vec<f64>> {
        let k = self.k;
        let mut m = vec![vec![0.0; k]; k];
        for (c, &p) in self.probs.iter().enumerate() {
            for i in 0..k {
                if (c >> i) & 1 == 0 {
                    continue;
                }
                for j in i..k {
                    if (c >> j) & 1 == 1 {
                        m[i][j] += p;
                    }
                }
            }
        }
        for i in 0..k {
            for j in 0..i {
                m[i][j] = m[j][i];
            }
        }
        m
    }

    /// Vector-Jacobian product of the marginals: given `g = ∂L/∂μ`, returns
    /// `(∂L/∂u, ∂L/∂ψ)` using `∂μ_i/∂u_k = Cov(b_i, b_k)` and
    /// `∂μ_i/∂ψ_kl = Cov(b_i, b_k b_l)`.
    pub(crate) fn marginals_vjp(&self, g: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>) {
        let k = self.k;
        let mut e_f = 0.0;
        let mut e_fb = vec![0.0; k];
        let mut e_fbb = vec![vec![0.0; k]; k];
        for (c, &p) in self.probs.iter().enumerate() {
            let f: f64 = (0..k).filter(|&i| (c >> i) & 1 == 1).map(|i| g[i]).sum();
            let pf = p * f;
            e_f += pf;
            for i in 0..k {
                if (c >> i) & 1 == 1 {
                    e_fb[i] += pf;
                    for j in i + 1..k {
                        if (c >> j) & 1 == 1 {
                            e_fbb[i][j] += pf;
                        }
                    }
                }
            }
        }
        let pair = self.pair_marginals();
        let g_u = (0..k).map(|i| e_fb[i] - e_f * pair[i][i]).collect();
        let mut g_psi = vec![vec![0.0; k]; k];
        for i in 0..k {
            for j in i + 1..k {
                g_psi[i][j] = e_fbb[i][j] - e_f * pair[i][j];
            }
        }
        (g_u, g_psi)
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> BeliefConfig {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (c, &p) in self.probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return BeliefConfig::from_index(c, self.k);
            }
        }
        // rounding left `acc` just below 1
        let last = self.probs.iter().rposition(|&p| p > 0.0).unwrap_or(0);
        BeliefConfig::from_index(last, self.k)
    }
}

pub fn log_partition(pot: &TransitionPotentials, cfg: &ModelConfig) -> Result<f64> {
    Ok(GibbsDistribution::new(pot, cfg)?.log_partition())
}

pub fn marginals(pot: &TransitionPotentials, cfg: &ModelConfig) -> Result<BeliefMarginals> {
    Ok(GibbsDistribution::new(pot, cfg)?.marginals())
}

/// `KL(q || p)` for a fully factorized `q` (clamped marginals) and the Gibbs
/// joint `p`. Uses the factorized closed form
/// `Σ_i H_i(q) − E_q[E(b)] + log Z` rather than a sum over configurations.
pub fn kl_factorized_to_joint(q: &BeliefMarginals, pot: &TransitionPotentials, cfg: &ModelConfig) -> Result<f64> {
    let gibbs = GibbsDistribution::new(pot, cfg)?;
    kl_with(q, pot, &gibbs)
}

pub(crate) fn kl_with(q: &BeliefMarginals, pot: &TransitionPotentials, gibbs: &GibbsDistribution) -> Result<f64> {
    let k = pot.k();
    if q.len() != k {
        return Err(Error::Dimension {
            context: "posterior marginals",
            expected: k,
            found: q.len(),
        });
    }
    let q: Vec<f64> = q.0.iter().map(|&v| clamp_prob(v)).collect();
    let mut neg_entropy = 0.0;
    let mut expected_energy = 0.0;
    for i in 0..k {
        neg_entropy += q[i] * q[i].ln() + (1.0 - q[i]) * (1.0 - q[i]).ln();
        expected_energy += pot.unary[i] * q[i];
        for j in i + 1..k {
            expected_energy += pot.pairwise[i][j] * q[i] * q[j];
        }
    }
    Ok(neg_entropy - expected_energy + gibbs.log_partition())
}

/// Gradients of `KL(q || p)`: with respect to the (already clamped) `q`
/// marginals, the unary potentials and the upper triangle of ψ.
pub(crate) fn kl_grads(
    q: &[f64],
    pot: &TransitionPotentials,
    gibbs: &GibbsDistribution,
) -> (Vec<f64>, Vec<f64>, Vec<Vec<f64>>) {
    let k = pot.k();
    let pair = gibbs.pair_marginals();
    let mut g_q = vec![0.0; k];
    let mut g_u = vec![0.0; k];
    let mut g_psi = vec![vec![0.0; k]; k];
    for i in 0..k {
        let interaction: f64 = (0..k).filter(|&j| j != i).map(|j| pot.pairwise[i][j] * q[j]).sum();
        g_q[i] = (q[i] / (1.0 - q[i])).ln() - pot.unary[i] - interaction;
        g_u[i] = pair[i][i] - q[i];
        for j in i + 1..k {
            g_psi[i][j] = pair[i][j] - q[i] * q[j];
        }
    }
    (g_q, g_u, g_psi)
}

/// One exact draw from the Gibbs distribution, reproducible from `rng_seed`.
pub fn sample_config(pot: &TransitionPotentials, cfg: &ModelConfig, rng_seed: u64) -> Result<BeliefConfig> {
    let gibbs = GibbsDistribution::new(pot, cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    Ok(gibbs.sample(&mut rng))
}
