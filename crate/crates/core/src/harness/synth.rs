//! Planted-model synthetic data: a known generative model is rolled out to
//! produce actions and quantized belief ratings, so recovery can be measured.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::action_model::action_log_probs;
use crate::belief_graph::{build_potentials, relu_dot, GibbsDistribution};
use crate::config::{enumerate_configs, BeliefConfig, BeliefMarginals, ModelConfig, Trajectory};
use crate::embeddings::{mix_history, synth_table, EmbeddingKey, EmbeddingTable, EmbeddingVocab};
use crate::error::{Error, Result};
use crate::trainer::ParamSet;

use super::dataset::SurveyDataset;

fn default_observations() -> Vec<u32> {
    vec![0, 1, 2, 3]
}

fn default_strength() -> f64 {
    1.0
}

/// Ground truth for a synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedSpec {
    pub config: ModelConfig,
    /// Planted parameters; drawn from `seed` and `strength` when absent.
    /// Inference parameters are ignored.
    #[serde(default)]
    pub params: Option<ParamSet>,
    pub num_agents: usize,
    pub seed: u64,
    #[serde(default = "default_observations")]
    pub observations: Vec<u32>,
    /// Scale of randomly drawn planted parameters.
    #[serde(default = "default_strength")]
    pub strength: f64,
}

impl PlantedSpec {
    pub fn new(config: ModelConfig, num_agents: usize, seed: u64) -> Self {
        PlantedSpec {
            config,
            params: None,
            num_agents,
            seed,
            observations: default_observations(),
            strength: default_strength(),
        }
    }

    pub fn vocab(&self) -> EmbeddingVocab {
        EmbeddingVocab::new(self.observations.clone(), self.config.num_actions)
    }

    /// The planted parameters, explicit or drawn against `table`.
    pub fn planted_params(&self, table: &EmbeddingTable) -> Result<ParamSet> {
        match &self.params {
            Some(p) => Ok(p.clone()),
            None => random_planted_params(&self.config, table, &self.vocab(), self.strength, self.seed),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        self.config.check_enumerable()?;
        if self.observations.is_empty() {
            return Err(Error::Config("planted spec needs at least one observation id".into()));
        }
        if let Some(p) = &self.params {
            p.check_shape(&self.config)?;
            if !p.is_finite() {
                return Err(Error::Config("planted parameters must be finite".into()));
            }
        }
        if !(self.strength.is_finite() && self.strength >= 0.0) {
            return Err(Error::Config(format!("strength must be non-negative, got {}", self.strength)));
        }
        Ok(())
    }
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    (m, var.sqrt())
}

fn rescale(w: &mut [f64], values: &[f64], target_sd: f64) -> f64 {
    let (mean, sd) = mean_sd(values);
    let s = if sd > 0.0 { target_sd / sd } else { 0.0 };
    w.iter_mut().for_each(|x| *x *= s);
    -mean * s
}

/// Random generative parameters calibrated against `table`.
///
/// Directions are Gaussian; scales are then set so that, across the
/// vocabulary, the learned unary term has standard deviation `2·strength`
/// and mean zero, the pairwise potentials have standard deviation
/// `strength` and mean zero, and centred action logits over hard belief
/// configurations have standard deviation `2·strength`. Inference
/// parameters are left at zero.
pub fn random_planted_params(
    cfg: &ModelConfig,
    table: &EmbeddingTable,
    vocab: &EmbeddingVocab,
    strength: f64,
    seed: u64,
) -> Result<ParamSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_9a7a_0000_0001);
    let mut p = ParamSet::zeros(cfg);
    let d = cfg.embed_dim as f64;
    let mut normal = |s: f64| -> f64 {
        let z: f64 = StandardNormal.sample(&mut rng);
        z * s
    };
    p.unary.w.iter_mut().for_each(|w| *w = normal(1.0));
    p.pairwise.w.iter_mut().for_each(|w| *w = normal(1.0));
    for m in [&mut p.attention.w_q, &mut p.attention.w_k, &mut p.attention.w_v] {
        m.iter_mut().for_each(|w| *w = normal(2.0 / d.sqrt()));
    }
    p.attention.w_a.iter_mut().for_each(|w| *w = normal(1.0));

    let mut unary_terms = Vec::new();
    for &obs in &vocab.observations {
        for i in 0..cfg.k {
            let yes = table.get(&EmbeddingKey::bel_obs(obs, i, true))?;
            let no = table.get(&EmbeddingKey::bel_obs(obs, i, false))?;
            unary_terms.push(relu_dot(&p.unary.w, &mix_history(yes, no, 0.5)?));
        }
    }
    p.unary.beta = rescale(&mut p.unary.w, &unary_terms, 2.0 * strength);

    if cfg.k >= 2 {
        let mut pair_terms = Vec::new();
        for i in 0..cfg.k {
            for j in i + 1..cfg.k {
                pair_terms.push(relu_dot(&p.pairwise.w, table.get(&EmbeddingKey::pair(i, j))?));
            }
        }
        p.pairwise.beta = rescale(&mut p.pairwise.w, &pair_terms, strength);
    }

    let mut centred = Vec::new();
    for t in 0..cfg.t {
        for b in enumerate_configs(cfg.k, cfg.max_enum_k)? {
            let lp = action_log_probs(&b.as_marginals(), t, table, &p.attention, cfg)?;
            let (m, _) = mean_sd(&lp);
            centred.extend(lp.iter().map(|x| x - m));
        }
    }
    let mut w_a: Vec<f64> = p.attention.w_a.iter().copied().collect();
    rescale(&mut w_a, &centred, 2.0 * strength);
    p.attention.w_a = nalgebra::DVector::from_vec(w_a);
    Ok(p)
}

#[derive(Debug, Clone)]
pub struct PlantedData {
    pub dataset: SurveyDataset,
    pub table: EmbeddingTable,
    pub params: ParamSet,
    /// `[agent][t]` prior marginals of the planted chain.
    pub true_marginals: Vec<Vec<BeliefMarginals>>,
    /// `[agent][t]` sampled belief configurations.
    pub true_configs: Vec<Vec<BeliefConfig>>,
}

/// Rating `1 + round(4p)` for a marginal `p`.
pub fn quantize_rating(p: f64) -> u8 {
    1 + (4.0 * p).round() as u8
}

/// Rolls out the planted model for every agent: prior marginals are chained
/// through uniformly drawn observations, `b_t` is drawn exactly from the
/// Gibbs distribution, and `a_t` from `p(a | b_t)` under the step's mask.
pub fn synth_dataset(spec: &PlantedSpec) -> Result<PlantedData> {
    spec.validate()?;
    let cfg = &spec.config;
    let vocab = spec.vocab();
    let table = synth_table(cfg, &vocab, spec.seed);
    let params = spec.planted_params(&table)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let mut agents = Vec::with_capacity(spec.num_agents);
    let mut true_marginals = Vec::with_capacity(spec.num_agents);
    let mut true_configs = Vec::with_capacity(spec.num_agents);
    for n in 0..spec.num_agents {
        let mut prev = BeliefMarginals::constant(cfg.k, cfg.initial_marginal);
        let mut obs_ids = Vec::with_capacity(cfg.t);
        let mut actions = Vec::with_capacity(cfg.t);
        let mut ratings = Vec::with_capacity(cfg.t);
        let mut marg = Vec::with_capacity(cfg.t);
        let mut configs = Vec::with_capacity(cfg.t);
        for t in 0..cfg.t {
            let obs = spec.observations[rng.random_range(0..spec.observations.len())];
            let pot = build_potentials(&prev, obs, &table, &params.unary, &params.pairwise, cfg)?;
            let gibbs = GibbsDistribution::new(&pot, cfg)?;
            let m = gibbs.marginals();
            let b = gibbs.sample(&mut rng);
            let log_probs = action_log_probs(&b.as_marginals(), t, &table, &params.attention, cfg)?;
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut pick = log_probs.len() - 1;
            for (j, lp) in log_probs.iter().enumerate() {
                acc += lp.exp();
                if u < acc {
                    pick = j;
                    break;
                }
            }
            obs_ids.push(obs);
            actions.push(cfg.mask(t)?[pick]);
            ratings.push(m.as_slice().iter().map(|&p| Some(quantize_rating(p))).collect());
            configs.push(b);
            marg.push(m.clone());
            prev = m;
        }
        agents.push(Trajectory {
            agent_id: format!("agent{n:05}"),
            observation_ids: obs_ids,
            action_ids: actions,
            belief_ratings: Some(ratings),
            initial_ratings: None,
        });
        true_marginals.push(marg);
        true_configs.push(configs);
    }

    let dataset = SurveyDataset {
        config: cfg.clone(),
        observation_vocab: spec.observations.iter().map(|&o| (o, format!("obs_{o}"))).collect(),
        action_vocab: (0..cfg.num_actions).map(|a| (a, format!("action_{a}"))).collect::<BTreeMap<_, _>>(),
        agents,
    };
    dataset.validate()?;
    Ok(PlantedData {
        dataset,
        table,
        params,
        true_marginals,
        true_configs,
    })
}

/// True marginals as CSV: `agent,t,m_0,...,m_{K-1}`.
pub fn marginals_csv(ids: &[String], marginals: &[Vec<BeliefMarginals>]) -> String {
    let k = marginals.first().and_then(|a| a.first()).map_or(0, BeliefMarginals::len);
    let mut out = String::from("agent,t");
    for i in 0..k {
        out.push_str(&format!(",m_{i}"));
    }
    out.push('\n');
    for (id, agent) in ids.iter().zip(marginals) {
        for (t, m) in agent.iter().enumerate() {
            out.push_str(&format!("{id},{t}"));
            for v in m.as_slice() {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
    }
    out
}
