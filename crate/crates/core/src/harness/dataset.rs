//! JSON dataset files.
//!
//! ```json
//! {
//!   "config": { "k": 6, "t": 3, ... },
//!   "vocab": { "observations": { "0": "fire spotted" }, "actions": { "0": "wait" } },
//!   "agents": [
//!     { "id": "r1", "steps": [ { "obs": 0, "action": 1, "ratings": [3, 4, null, 2, 5, 1] } ],
//!       "initial_ratings": [2, 2, 3, 1, 5, 4] }
//!   ]
//! }
//! ```
//!
//! `ratings` and `initial_ratings` are optional; a `null` entry marks a
//! missing answer.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::{ModelConfig, Trajectory};
use crate::embeddings::EmbeddingVocab;
use crate::error::{Error, Result};

/// File name used when a dataset path names a directory.
pub const DATASET_FILE: &str = "dataset.json";

#[derive(Debug, Clone, PartialEq)]
pub struct SurveyDataset {
    pub config: ModelConfig,
    pub observation_vocab: BTreeMap<u32, String>,
    pub action_vocab: BTreeMap<usize, String>,
    pub agents: Vec<Trajectory>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VocabFile {
    observations: BTreeMap<u32, String>,
    actions: BTreeMap<usize, String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StepFile {
    obs: u32,
    action: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    ratings: Option<Vec<Option<u8>>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AgentFile {
    id: String,
    steps: Vec<StepFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    initial_ratings: Option<Vec<Option<u8>>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetFile {
    config: ModelConfig,
    vocab: VocabFile,
    agents: Vec<AgentFile>,
}

impl SurveyDataset {
    pub fn embedding_vocab(&self) -> EmbeddingVocab {
        EmbeddingVocab {
            observations: self.observation_vocab.keys().copied().collect(),
            actions: (0..self.config.num_actions).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        for &a in self.action_vocab.keys() {
            if a >= self.config.num_actions {
                return Err(Error::Validation(format!(
                    "action vocabulary id {a} exceeds num_actions {}",
                    self.config.num_actions
                )));
            }
        }
        for traj in &self.agents {
            for (t, obs) in traj.observation_ids.iter().enumerate() {
                if !self.observation_vocab.contains_key(obs) {
                    return Err(Error::Validation(format!(
                        "agent {}: observation {obs} at t={t} is not in the vocabulary",
                        traj.agent_id
                    )));
                }
            }
            for (t, a) in traj.action_ids.iter().enumerate() {
                if !self.action_vocab.contains_key(a) {
                    return Err(Error::Validation(format!(
                        "agent {}: action {a} at t={t} is not in the vocabulary",
                        traj.agent_id
                    )));
                }
            }
            traj.validate(&self.config)?;
        }
        Ok(())
    }

    /// Parses and validates a dataset document.
    pub fn from_json(text: &str) -> Result<Self> {
        let file: DatasetFile = serde_json::from_str(text)?;
        let agents = file
            .agents
            .into_iter()
            .map(|a| {
                let any_ratings = a.steps.iter().any(|s| s.ratings.is_some());
                let belief_ratings = any_ratings.then(|| {
                    a.steps
                        .iter()
                        .map(|s| s.ratings.clone().unwrap_or_else(|| vec![None; file.config.k]))
                        .collect()
                });
                Trajectory {
                    agent_id: a.id,
                    observation_ids: a.steps.iter().map(|s| s.obs).collect(),
                    action_ids: a.steps.iter().map(|s| s.action).collect(),
                    belief_ratings,
                    initial_ratings: a.initial_ratings,
                }
            })
            .collect();
        let ds = SurveyDataset {
            config: file.config,
            observation_vocab: file.vocab.observations,
            action_vocab: file.vocab.actions,
            agents,
        };
        ds.validate()?;
        Ok(ds)
    }

    /// Pretty-printed JSON; identical datasets give identical bytes.
    pub fn to_json(&self) -> String {
        let file = DatasetFile {
            config: self.config.clone(),
            vocab: VocabFile {
                observations: self.observation_vocab.clone(),
                actions: self.action_vocab.clone(),
            },
            agents: self
                .agents
                .iter()
                .map(|tr| AgentFile {
                    id: tr.agent_id.clone(),
                    steps: (0..tr.len())
                        .map(|t| StepFile {
                            obs: tr.observation_ids[t],
                            action: tr.action_ids[t],
                            ratings: tr.belief_ratings.as_ref().map(|r| r[t].clone()),
                        })
                        .collect(),
                    initial_ratings: tr.initial_ratings.clone(),
                })
                .collect(),
        };
        let mut s = serde_json::to_string_pretty(&file).expect("dataset serializes");
        s.push('\n');
        s
    }
}

/// Resolves a dataset path: a directory means `<dir>/dataset.json`.
pub fn dataset_path(path: impl AsRef<Path>) -> PathBuf {
    let p = path.as_ref();
    if p.is_dir() {
        p.join(DATASET_FILE)
    } else {
        p.to_path_buf()
    }
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<SurveyDataset> {
    SurveyDataset::from_json(&std::fs::read_to_string(dataset_path(path))?)
}

pub fn write_dataset(ds: &SurveyDataset, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(dataset_path(path), ds.to_json())?;
    Ok(())
}
