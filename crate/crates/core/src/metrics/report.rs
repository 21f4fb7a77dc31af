use std::fmt::Write as _;

use crate::config::{BeliefMarginals, Trajectory};
use crate::error::{Error, Result};

use super::dtw::dtw_avg;
use super::stats::cohens_d;
use super::structure::{pairwise_structure_score, per_belief_spearman};

/// Maps an ordinal rating in 1..=5 onto [0, 1].
pub fn ratings_to_unit(r: u8) -> f64 {
    (f64::from(r) - 1.0) / 4.0
}

/// Summary statistics comparing predicted marginals with recorded ratings
/// and actions. Undefined statistics are kept as the error text.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub per_belief_spearman: Vec<std::result::Result<f64, String>>,
    pub structure_score: std::result::Result<f64, String>,
    pub excluded_pairs: usize,
    pub cohens_d: std::result::Result<f64, String>,
    pub dtw: std::result::Result<f64, String>,
    pub action_accuracy: Option<f64>,
}

fn keep(r: Result<f64>) -> std::result::Result<f64, String> {
    r.map_err(|e| e.to_string())
}

impl MetricsReport {
    /// `pred[n]` holds agent `n`'s predicted marginals per step. Ratings are
    /// compared by rank for the Spearman statistics and on the unit scale for
    /// DTW; DTW skips agents with any missing rating.
    pub fn compute(pred: &[Vec<BeliefMarginals>], trajs: &[Trajectory], action_accuracy: Option<f64>) -> Result<Self> {
        if pred.len() != trajs.len() {
            return Err(Error::Dimension {
                context: "metrics agents",
                expected: trajs.len(),
                found: pred.len(),
            });
        }
        let pred_f: Vec<Vec<Vec<f64>>> = pred
            .iter()
            .map(|a| a.iter().map(|m| m.as_slice().to_vec()).collect())
            .collect();
        let k = pred_f.first().and_then(|a| a.first()).map_or(0, Vec::len);
        let mut gt = Vec::with_capacity(trajs.len());
        for traj in trajs {
            let ratings = traj
                .belief_ratings
                .as_ref()
                .ok_or_else(|| Error::Validation(format!("agent {} has no belief ratings", traj.agent_id)))?;
            gt.push(
                ratings
                    .iter()
                    .map(|row| {
                        (0..k)
                            .map(|i| row.get(i).copied().flatten().map_or(f64::NAN, f64::from))
                            .collect::<Vec<f64>>()
                    })
                    .collect::<Vec<_>>(),
            );
        }

        let per_belief = match per_belief_spearman(&pred_f, &gt, None) {
            Ok(v) => v.into_iter().map(keep).collect(),
            Err(e) => vec![Err(e.to_string()); k],
        };
        let (structure_score, excluded_pairs) = match pairwise_structure_score(&pred_f, &gt) {
            Ok(s) => (Ok(s.score), s.excluded),
            Err(e) => (Err(e.to_string()), 0),
        };
        let actions: Vec<Vec<usize>> = trajs.iter().map(|t| t.action_ids.clone()).collect();
        let d = keep(cohens_d(&pred_f, &actions));

        let mut dp = Vec::new();
        let mut dg = Vec::new();
        for (p, g) in pred_f.iter().zip(&gt) {
            if g.iter().flatten().all(|v| !v.is_nan()) {
                dp.push(p.clone());
                dg.push(g.iter().map(|row| row.iter().map(|&r| ratings_to_unit(r as u8)).collect()).collect());
            }
        }
        let lens: Vec<usize> = dp.iter().map(Vec::len).collect();
        let dtw = keep(dtw_avg(&dp, &dg, &lens));

        Ok(MetricsReport {
            per_belief_spearman: per_belief,
            structure_score,
            excluded_pairs,
            cohens_d: d,
            dtw,
            action_accuracy,
        })
    }

    fn rows(&self) -> Vec<(String, String)> {
        let fmt = |r: &std::result::Result<f64, String>| match r {
            Ok(v) => format!("{v}"),
            Err(_) => "NA".to_string(),
        };
        let mut rows: Vec<(String, String)> = self
            .per_belief_spearman
            .iter()
            .enumerate()
            .map(|(i, r)| (format!("spearman_belief_{i}"), fmt(r)))
            .collect();
        rows.push(("pairwise_structure".into(), fmt(&self.structure_score)));
        rows.push(("excluded_pairs".into(), self.excluded_pairs.to_string()));
        rows.push(("cohens_d".into(), fmt(&self.cohens_d)));
        rows.push(("dtw".into(), fmt(&self.dtw)));
        if let Some(a) = self.action_accuracy {
            rows.push(("action_accuracy".into(), a.to_string()));
        }
        rows
    }

    /// `metric,value` CSV; undefined statistics are written as `NA`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,value\n");
        for (k, v) in self.rows() {
            writeln!(out, "{k},{v}").unwrap();
        }
        out
    }

    pub fn pretty(&self) -> String {
        let rows = self.rows();
        let w = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(6).max(6);
        let mut out = format!("{:<w$}  value\n{}  {}\n", "metric", "-".repeat(w), "-".repeat(12));
        for (k, v) in rows {
            let shown = v.parse::<f64>().map(|x| format!("{x:.4}")).unwrap_or(v);
            writeln!(out, "{k:<w$}  {shown}").unwrap();
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn traj(id: usize, ratings: Vec<Vec<u8>>, actions: Vec<usize>) -> Trajectory {
        Trajectory {
            agent_id: format!("a{id}"),
            observation_ids: vec![0; actions.len()],
            action_ids: actions,
            belief_ratings: Some(ratings.into_iter().map(|r| r.into_iter().map(Some).collect()).collect()),
            initial_ratings: None,
        }
    }

    #[test]
    fn perfect_predictions() {
        let ratings = [
            vec![vec![1, 2, 5], vec![2, 2, 4]],
            vec![vec![5, 4, 1], vec![3, 5, 2]],
            vec![vec![3, 1, 3], vec![4, 3, 1]],
            vec![vec![2, 5, 2], vec![1, 4, 5]],
        ];
        let actions = [vec![0, 1], vec![1, 1], vec![0, 0], vec![2, 0]];
        let trajs: Vec<Trajectory> = ratings
            .iter()
            .zip(&actions)
            .enumerate()
            .map(|(i, (r, a))| traj(i, r.clone(), a.clone()))
            .collect();
        let pred: Vec<Vec<BeliefMarginals>> = ratings
            .iter()
            .map(|a| a.iter().map(|row| BeliefMarginals(row.iter().map(|&r| ratings_to_unit(r)).collect())).collect())
            .collect();
        let rep = MetricsReport::compute(&pred, &trajs, Some(0.5)).unwrap();
        for r in &rep.per_belief_spearman {
            assert!((r.as_ref().unwrap() - 1.0).abs() < 1e-12);
        }
        assert!((rep.structure_score.as_ref().unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(rep.dtw, Ok(0.0));
        let csv = rep.to_csv();
        assert!(csv.starts_with("metric,value\nspearman_belief_0,"));
        assert!(csv.contains("action_accuracy,0.5"));
        assert!(rep.pretty().contains("pairwise_structure"));
    }
}
