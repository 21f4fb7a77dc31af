//! Dataset files, planted synthetic data, and the command-line driver.

#[cfg(feature = "cli")]
pub mod cli;
mod dataset;
mod synth;

pub use dataset::{dataset_path, load_dataset, write_dataset, SurveyDataset, DATASET_FILE};
pub use synth::{marginals_csv, quantize_rating, random_planted_params, synth_dataset, PlantedData, PlantedSpec};

use crate::config::{BeliefMarginals, ModelConfig, Trajectory};
use crate::embeddings::EmbeddingTable;
use crate::error::Result;
use crate::metrics::MetricsReport;
use crate::trainer::{rollout, ParamSet, RolloutOptions};

/// Argmax rollouts for every agent, seeded with the agent's initial ratings
/// when present. Returns the marginals and the fraction of matched actions.
pub fn predict(
    params: &ParamSet,
    table: &EmbeddingTable,
    cfg: &ModelConfig,
    agents: &[Trajectory],
) -> Result<(Vec<Vec<BeliefMarginals>>, f64)> {
    let mut preds = Vec::with_capacity(agents.len());
    let mut hits = 0usize;
    for traj in agents {
        let opts = RolloutOptions {
            initial: Some(traj.initial_marginals(cfg)),
            ..Default::default()
        };
        let r = rollout(params, table, cfg, &traj.observation_ids, &opts)?;
        hits += r.actions().iter().zip(&traj.action_ids).filter(|(a, b)| a == b).count();
        preds.push(r.marginals());
    }
    let steps = agents.iter().map(Trajectory::len).sum::<usize>().max(1);
    Ok((preds, hits as f64 / steps as f64))
}

/// Metrics for `agents` under `params`. Rating-based statistics are reported
/// as undefined when some agent has no ratings.
pub fn evaluate_metrics(
    params: &ParamSet,
    table: &EmbeddingTable,
    cfg: &ModelConfig,
    agents: &[Trajectory],
) -> Result<MetricsReport> {
    let (preds, acc) = predict(params, table, cfg, agents)?;
    if agents.iter().all(|a| a.belief_ratings.is_some()) {
        MetricsReport::compute(&preds, agents, Some(acc))
    } else {
        let missing = Err("no belief ratings".to_string());
        Ok(MetricsReport {
            per_belief_spearman: Vec::new(),
            structure_score: missing.clone(),
            excluded_pairs: 0,
            cohens_d: missing.clone(),
            dtw: missing,
            action_accuracy: Some(acc),
        })
    }
}

/// Most frequent action at each step in `train`, scored on `test`.
pub fn majority_baseline(train: &[Trajectory], test: &[Trajectory], cfg: &ModelConfig) -> f64 {
    let majority: Vec<usize> = (0..cfg.t)
        .map(|t| {
            let mut counts = vec![0usize; cfg.num_actions];
            for tr in train {
                counts[tr.action_ids[t]] += 1;
            }
            // first maximum, so ties resolve to the lowest id
            let mut best = 0;
            for (a, &c) in counts.iter().enumerate() {
                if c > counts[best] {
                    best = a;
                }
            }
            best
        })
        .collect();
    let hits: usize = test
        .iter()
        .map(|tr| tr.action_ids.iter().zip(&majority).filter(|(a, b)| a == b).count())
        .sum();
    hits as f64 / (test.len() * cfg.t).max(1) as f64
}

/// Median of the defined values, `None` when there are none.
pub fn median(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let mut v: Vec<f64> = values.into_iter().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median([3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median([4.0, 1.0, 3.0, 2.0]), Some(2.5));
        assert_eq!(median([f64::NAN]), None);
    }

    #[test]
    fn majority_baseline_counts_per_step() {
        let cfg = ModelConfig::unmasked(2, 2, 3, 4, 2);
        let tr = |a: Vec<usize>| Trajectory {
            agent_id: "x".into(),
            observation_ids: vec![0, 0],
            action_ids: a,
            belief_ratings: None,
            initial_ratings: None,
        };
        let train = vec![tr(vec![1, 2]), tr(vec![1, 0]), tr(vec![0, 2])];
        let test = vec![tr(vec![1, 2]), tr(vec![0, 0])];
        assert_eq!(majority_baseline(&train, &test, &cfg), 0.5);
    }
}
