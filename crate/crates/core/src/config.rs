//! Shared domain types: model configuration, binary belief configurations,
//! belief marginals and trajectories.
//!
//! Configurations are indexed little-endian over belief dimensions: bit `i`
//! of the index is the state of belief `i`. Every module that enumerates the
//! `2^K` joint states relies on this order.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the action term treats the factorized posterior.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ExpectationMode {
    /// Feed posterior marginals straight into the action model.
    #[default]
    MeanField,
    /// Exact expectation over all `2^K` posterior configurations.
    Enumerate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    #[default]
    Full,
    /// Pairwise log-potentials are fixed at zero.
    NoPairwise,
    /// The previous marginals are replaced by a constant 0.5.
    NoTemporal,
}

/// Probabilities fed to logarithms (posterior marginals, KL) are clamped to
/// `[PROB_CLAMP, 1 - PROB_CLAMP]`.
pub const PROB_CLAMP: f64 = 1e-6;

pub fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

fn default_initial_marginal() -> f64 {
    0.5
}

fn default_max_enum_k() -> usize {
    16
}

fn default_tau() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Number of binary beliefs.
    pub k: usize,
    /// Trajectory length.
    pub t: usize,
    pub num_actions: usize,
    pub embed_dim: usize,
    pub attn_dim: usize,
    /// Temperature of the contrastive base unary score.
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default)]
    pub expectation_mode: ExpectationMode,
    #[serde(default)]
    pub ablation: Ablation,
    #[serde(default = "default_initial_marginal")]
    pub initial_marginal: f64,
    #[serde(default = "default_max_enum_k")]
    pub max_enum_k: usize,
    /// Permitted action ids at each timestep.
    pub action_masks: Vec<Vec<usize>>,
}

impl ModelConfig {
    /// Survey layout: six beliefs, three steps, four intermediate reactions
    /// (ids 0..4) before the last step and two final decisions (ids 4, 5) at it.
    pub fn survey(embed_dim: usize, attn_dim: usize) -> Self {
        Self::with_survey_masks(6, 3, embed_dim, attn_dim)
    }

    /// `k` beliefs over `t` steps with the survey action masks.
    pub fn with_survey_masks(k: usize, t: usize, embed_dim: usize, attn_dim: usize) -> Self {
        let mut action_masks = vec![vec![0, 1, 2, 3]; t.saturating_sub(1)];
        action_masks.push(vec![4, 5]);
        ModelConfig {
            k,
            t,
            num_actions: 6,
            embed_dim,
            attn_dim,
            tau: 1.0,
            expectation_mode: ExpectationMode::MeanField,
            ablation: Ablation::Full,
            initial_marginal: 0.5,
            max_enum_k: 16,
            action_masks,
        }
    }

    /// Every action permitted at every step.
    pub fn unmasked(k: usize, t: usize, num_actions: usize, embed_dim: usize, attn_dim: usize) -> Self {
        ModelConfig {
            k,
            t,
            num_actions,
            embed_dim,
            attn_dim,
            tau: 1.0,
            expectation_mode: ExpectationMode::MeanField,
            ablation: Ablation::Full,
            initial_marginal: 0.5,
            max_enum_k: 16,
            action_masks: vec![(0..num_actions).collect(); t],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.t == 0 || self.num_actions == 0 || self.embed_dim == 0 || self.attn_dim == 0 {
            return Err(Error::Config(
                "k, t, num_actions, embed_dim and attn_dim must be positive".into(),
            ));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::Config(format!("tau must be positive, got {}", self.tau)));
        }
        if !(0.0..=1.0).contains(&self.initial_marginal) {
            return Err(Error::Config(format!(
                "initial_marginal must lie in [0,1], got {}",
                self.initial_marginal
            )));
        }
        if self.k > self.max_enum_k {
            return Err(Error::EnumerationLimit {
                k: self.k,
                limit: self.max_enum_k,
            });
        }
        if self.action_masks.len() != self.t {
            return Err(Error::Config(format!(
                "expected {} action masks, found {}",
                self.t,
                self.action_masks.len()
            )));
        }
        for (t, mask) in self.action_masks.iter().enumerate() {
            if mask.is_empty() {
                return Err(Error::Config(format!("action mask at t={t} is empty")));
            }
            let mut seen = vec![false; self.num_actions];
            for &a in mask {
                if a >= self.num_actions {
                    return Err(Error::Config(format!(
                        "action {a} in mask at t={t} is outside 0..{}",
                        self.num_actions
                    )));
                }
                if std::mem::replace(&mut seen[a], true) {
                    return Err(Error::Config(format!("action {a} repeated in mask at t={t}")));
                }
            }
        }
        Ok(())
    }

    pub fn mask(&self, t: usize) -> Result<&[usize]> {
        match self.action_masks.get(t) {
            Some(m) if !m.is_empty() => Ok(m),
            Some(_) => Err(Error::Config(format!("action mask at t={t} is empty"))),
            None => Err(Error::Config(format!("no action mask for t={t}"))),
        }
    }

    pub fn num_pairs(&self) -> usize {
        self.k * self.k.saturating_sub(1) / 2
    }

    pub fn check_enumerable(&self) -> Result<()> {
        if self.k > self.max_enum_k {
            Err(Error::EnumerationLimit {
                k: self.k,
                limit: self.max_enum_k,
            })
        } else {
            Ok(())
        }
    }

    /// Stable 64-bit fingerprint of the configuration, used to tie checkpoints
    /// to the model they were trained for.
    pub fn fingerprint(&self) -> u64 {
        use sha2::{Digest, Sha256};
        let canonical = serde_json::to_vec(self).expect("config serializes");
        let digest = Sha256::digest(&canonical);
        u64::from_le_bytes(digest[..8].try_into().unwrap())
    }
}

/// One joint assignment of the K binary beliefs.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BeliefConfig {
    pub bits: Vec<bool>,
    pub index: usize,
}

impl BeliefConfig {
    pub fn from_index(index: usize, k: usize) -> Self {
        let bits = (0..k).map(|i| (index >> i) & 1 == 1).collect();
        BeliefConfig { bits, index }
    }

    pub fn from_bits(bits: Vec<bool>) -> Self {
        let index = bits
            .iter()
            .enumerate()
            .fold(0usize, |acc, (i, &b)| acc | ((b as usize) << i));
        BeliefConfig { bits, index }
    }

    pub fn k(&self) -> usize {
        self.bits.len()
    }

    /// Bits as 0.0/1.0, the hard-marginal view of this configuration.
    pub fn as_marginals(&self) -> BeliefMarginals {
        BeliefMarginals(self.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect())
    }
}

/// All `2^k` configurations in ascending index order.
pub fn enumerate_configs(k: usize, max_enum_k: usize) -> Result<Vec<BeliefConfig>> {
    if k > max_enum_k {
        return Err(Error::EnumerationLimit { k, limit: max_enum_k });
    }
    Ok((0..1usize << k).map(|idx| BeliefConfig::from_index(idx, k)).collect())
}

/// Per-belief activation probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BeliefMarginals(pub Vec<f64>);

impl BeliefMarginals {
    pub fn constant(k: usize, p: f64) -> Self {
        BeliefMarginals(vec![p; k])
    }

    pub fn new(p: Vec<f64>) -> Result<Self> {
        if let Some((i, v)) = p.iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Range(format!("marginal {i} = {v} is outside [0,1]")));
        }
        Ok(BeliefMarginals(p))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

impl std::ops::Index<usize> for BeliefMarginals {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// One agent's observed sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub agent_id: String,
    pub observation_ids: Vec<u32>,
    pub action_ids: Vec<usize>,
    /// `T x K` ordinal ratings in 1..=5, evaluation only.
    pub belief_ratings: Option<Vec<Vec<Option<u8>>>>,
    /// Ratings reported before the first step, used to seed the marginal chain
    /// when present.
    pub initial_ratings: Option<Vec<Option<u8>>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.observation_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observation_ids.is_empty()
    }

    pub fn validate(&self, cfg: &ModelConfig) -> Result<()> {
        if self.observation_ids.len() != cfg.t || self.action_ids.len() != cfg.t {
            return Err(Error::Validation(format!(
                "agent {}: expected {} steps, found {} observations and {} actions",
                self.agent_id,
                cfg.t,
                self.observation_ids.len(),
                self.action_ids.len()
            )));
        }
        for (t, &a) in self.action_ids.iter().enumerate() {
            if !cfg.mask(t)?.contains(&a) {
                return Err(Error::Validation(format!(
                    "agent {}: action {a} at t={t} is not permitted by the mask {:?}",
                    self.agent_id, cfg.action_masks[t]
                )));
            }
        }
        if let Some(rows) = &self.belief_ratings {
            if rows.len() != cfg.t {
                return Err(Error::Validation(format!(
                    "agent {}: ratings cover {} steps, expected {}",
                    self.agent_id,
                    rows.len(),
                    cfg.t
                )));
            }
            for row in rows {
                check_rating_row(&self.agent_id, row, cfg.k)?;
            }
        }
        if let Some(row) = &self.initial_ratings {
            check_rating_row(&self.agent_id, row, cfg.k)?;
        }
        Ok(())
    }

    /// Marginals at the start of the chain: initial ratings mapped through
    /// `(r-1)/4` when available, the configured constant otherwise.
    pub fn initial_marginals(&self, cfg: &ModelConfig) -> BeliefMarginals {
        match &self.initial_ratings {
            Some(row) => BeliefMarginals(
                row.iter()
                    .map(|r| r.map_or(cfg.initial_marginal, |r| (r as f64 - 1.0) / 4.0))
                    .collect(),
            ),
            None => BeliefMarginals::constant(cfg.k, cfg.initial_marginal),
        }
    }
}

fn check_rating_row(agent: &str, row: &[Option<u8>], k: usize) -> Result<()> {
    if row.len() != k {
        return Err(Error::Validation(format!(
            "agent {agent}: rating row has {} entries, expected {k}",
            row.len()
        )));
    }
    for r in row.iter().flatten() {
        if !(1..=5).contains(r) {
            return Err(Error::Range(format!("agent {agent}: rating {r} outside 1..=5")));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn enumerate_base_case() {
        let cs = enumerate_configs(1, 16).unwrap();
        assert_eq!(cs.len(), 2);
        assert_eq!(cs[0].bits, vec![false]);
        assert_eq!(cs[1].bits, vec![true]);
    }

    #[test]
    fn enumerate_six_beliefs() {
        assert_eq!(enumerate_configs(6, 16).unwrap().len(), 64);
    }

    #[test]
    fn index_five_is_one_zero_one() {
        let cs = enumerate_configs(3, 16).unwrap();
        assert_eq!(cs[5].bits, vec![true, false, true]);
    }

    #[test]
    fn enumeration_limit_names_k() {
        let err = enumerate_configs(17, 16).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("17") && msg.contains("16"), "{msg}");
    }

    #[test]
    fn survey_masks() {
        let cfg = ModelConfig::survey(8, 4);
        cfg.validate().unwrap();
        assert_eq!(cfg.action_masks, vec![vec![0, 1, 2, 3], vec![0, 1, 2, 3], vec![4, 5]]);
    }

    #[test]
    fn rejects_bad_masks() {
        let mut cfg = ModelConfig::survey(8, 4);
        cfg.action_masks[1].clear();
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let mut cfg = ModelConfig::survey(8, 4);
        cfg.action_masks[0].push(9);
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let mut cfg = ModelConfig::survey(8, 4);
        cfg.tau = 0.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn fingerprint_tracks_config() {
        let a = ModelConfig::survey(8, 4);
        let mut b = a.clone();
        assert_eq!(a.fingerprint(), b.fingerprint());
        b.ablation = Ablation::NoPairwise;
        assert_ne!(a.fingerprint(), b.fingerprint());
    }

    #[test]
    fn initial_marginals_from_ratings() {
        let cfg = ModelConfig::unmasked(3, 1, 2, 4, 2);
        let traj = Trajectory {
            agent_id: "a".into(),
            observation_ids: vec![0],
            action_ids: vec![0],
            belief_ratings: None,
            initial_ratings: Some(vec![Some(1), Some(5), None]),
        };
        assert_eq!(traj.initial_marginals(&cfg).0, vec![0.0, 1.0, 0.5]);
    }

    proptest::proptest! {
        #[test]
        fn bits_index_round_trip(k in 1usize..12, raw in 0usize..4096) {
            let idx = raw % (1 << k);
            let c = BeliefConfig::from_index(idx, k);
            let back = BeliefConfig::from_bits(c.bits.clone());
            proptest::prop_assert_eq!(back.index, idx);
            proptest::prop_assert_eq!(back.bits, c.bits);
        }

        #[test]
        fn enumeration_is_a_permutation_of_indices(k in 0usize..10) {
            let cs = enumerate_configs(k, 16).unwrap();
            proptest::prop_assert_eq!(cs.len(), 1 << k);
            for (i, c) in cs.iter().enumerate() {
                proptest::prop_assert_eq!(c.index, i);
            }
        }
    }
}
