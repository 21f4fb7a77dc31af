use crate::error::{Error, Result};

use super::stats::spearman;

/// Agreement between predicted and ground-truth pairwise belief structure.
#[derive(Debug, Clone, PartialEq)]
pub struct StructureScore {
    pub score: f64,
    /// `r_ij` for `i < j` in lexicographic order; `None` where undefined.
    pub pred_pairs: Vec<Option<f64>>,
    pub gt_pairs: Vec<Option<f64>>,
    /// Pairs dropped because either correlation was undefined.
    pub excluded: usize,
}

/// Paired samples of beliefs `i` and `j`, pooled over agents and steps.
/// Samples where either side is NaN (a missing rating) are skipped.
fn pooled_pair(data: &[Vec<Vec<f64>>], i: usize, j: usize) -> (Vec<f64>, Vec<f64>) {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for agent in data {
        for step in agent {
            let (x, y) = (step[i], step[j]);
            if !x.is_nan() && !y.is_nan() {
                xs.push(x);
                ys.push(y);
            }
        }
    }
    (xs, ys)
}

fn belief_count(data: &[Vec<Vec<f64>>]) -> Result<usize> {
    let k = data
        .iter()
        .flat_map(|a| a.first())
        .map(Vec::len)
        .next()
        .ok_or_else(|| Error::EmptySequence("no belief vectors".into()))?;
    for agent in data {
        for step in agent {
            if step.len() != k {
                return Err(Error::Dimension {
                    context: "belief vector",
                    expected: k,
                    found: step.len(),
                });
            }
        }
    }
    Ok(k)
}

/// Spearman correlation between the ground-truth and predicted vectors of
/// pairwise belief correlations. `pred[n][t][i]`, `gt[n][t][i]`; missing
/// ground-truth entries are NaN.
pub fn pairwise_structure_score(pred: &[Vec<Vec<f64>>], gt: &[Vec<Vec<f64>>]) -> Result<StructureScore> {
    if pred.len() != gt.len() {
        return Err(Error::Dimension {
            context: "structure agents",
            expected: pred.len(),
            found: gt.len(),
        });
    }
    if pred.len() < 3 {
        return Err(Error::UndefinedCorrelation(format!(
            "structure score needs at least 3 agents, got {}",
            pred.len()
        )));
    }
    let k = belief_count(pred)?;
    if belief_count(gt)? != k {
        return Err(Error::Dimension {
            context: "structure beliefs",
            expected: k,
            found: belief_count(gt)?,
        });
    }
    let mut pred_pairs = Vec::new();
    let mut gt_pairs = Vec::new();
    let mut kept_pred = Vec::new();
    let mut kept_gt = Vec::new();
    for i in 0..k {
        for j in i + 1..k {
            let (px, py) = pooled_pair(pred, i, j);
            let (gx, gy) = pooled_pair(gt, i, j);
            let rp = spearman(&px, &py).ok();
            let rg = spearman(&gx, &gy).ok();
            if let (Some(a), Some(b)) = (rp, rg) {
                kept_pred.push(a);
                kept_gt.push(b);
            }
            pred_pairs.push(rp);
            gt_pairs.push(rg);
        }
    }
    let excluded = pred_pairs.len() - kept_pred.len();
    if kept_pred.len() < 2 {
        return Err(Error::UndefinedCorrelation(format!(
            "only {} defined belief pairs, need at least 2",
            kept_pred.len()
        )));
    }
    let score = spearman(&kept_gt, &kept_pred)?;
    Ok(StructureScore {
        score,
        pred_pairs,
        gt_pairs,
        excluded,
    })
}

/// Spearman correlation between predicted and ground-truth values for each
/// belief. Pools every `(agent, step)` sample, or only step `t` when `step`
/// is given. NaN ground-truth entries are skipped.
pub fn per_belief_spearman(pred: &[Vec<Vec<f64>>], gt: &[Vec<Vec<f64>>], step: Option<usize>) -> Result<Vec<Result<f64>>> {
    if pred.len() != gt.len() {
        return Err(Error::Dimension {
            context: "per-belief agents",
            expected: pred.len(),
            found: gt.len(),
        });
    }
    let k = belief_count(pred)?;
    let mut out = Vec::with_capacity(k);
    for i in 0..k {
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for (p, g) in pred.iter().zip(gt) {
            for (t, (pt, gt_row)) in p.iter().zip(g).enumerate() {
                if step.is_some_and(|s| s != t) {
                    continue;
                }
                let y = gt_row[i];
                if !y.is_nan() {
                    xs.push(pt[i]);
                    ys.push(y);
                }
            }
        }
        out.push(spearman(&xs, &ys));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn agents(rows: &[[f64; 3]]) -> Vec<Vec<Vec<f64>>> {
        rows.iter().map(|r| vec![r.to_vec()]).collect()
    }

    #[test]
    fn identical_structure_scores_one() {
        let d = agents(&[
            [0.1, 0.2, 0.9],
            [0.4, 0.3, 0.1],
            [0.8, 0.9, 0.5],
            [0.3, 0.1, 0.2],
            [0.6, 0.7, 0.8],
        ]);
        let s = pairwise_structure_score(&d, &d).unwrap();
        assert!((s.score - 1.0).abs() < 1e-12);
        assert_eq!(s.excluded, 0);
        assert_eq!(s.pred_pairs.len(), 3);
    }

    #[test]
    fn two_beliefs_are_undefined() {
        let d: Vec<Vec<Vec<f64>>> = (0..4).map(|n| vec![vec![n as f64, (n * n) as f64]]).collect();
        assert!(matches!(pairwise_structure_score(&d, &d), Err(Error::UndefinedCorrelation(_))));
    }

    #[test]
    fn six_beliefs_rank_fifteen_pairs() {
        let d: Vec<Vec<Vec<f64>>> = (0..10)
            .map(|n| vec![(0..6).map(|i| ((n * (i + 2) * 7 + i * i) % 11) as f64).collect()])
            .collect();
        let s = pairwise_structure_score(&d, &d).unwrap();
        assert_eq!(s.pred_pairs.len(), 15);
        assert!((s.score - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_belief_pairs_are_excluded() {
        let d = agents(&[
            [0.1, 0.2, 0.5],
            [0.4, 0.3, 0.5],
            [0.8, 0.9, 0.5],
            [0.3, 0.1, 0.5],
        ]);
        // belief 2 is constant, so only pair (0,1) survives
        let e = pairwise_structure_score(&d, &d);
        assert!(matches!(e, Err(Error::UndefinedCorrelation(_))));
    }

    #[test]
    fn too_few_agents() {
        let d = agents(&[[0.1, 0.2, 0.3], [0.3, 0.2, 0.1]]);
        assert!(pairwise_structure_score(&d, &d).is_err());
    }

    #[test]
    fn per_belief_pooled_and_per_step() {
        let pred = vec![
            vec![vec![0.1, 0.9], vec![0.2, 0.8]],
            vec![vec![0.5, 0.5], vec![0.7, 0.1]],
            vec![vec![0.9, 0.2], vec![0.3, 0.6]],
        ];
        let gt = vec![
            vec![vec![1.0, 5.0], vec![2.0, f64::NAN]],
            vec![vec![3.0, 3.0], vec![4.0, 1.0]],
            vec![vec![5.0, 2.0], vec![3.0, 4.0]],
        ];
        let pooled = per_belief_spearman(&pred, &gt, None).unwrap();
        assert!((pooled[0].as_ref().unwrap() - 0.9856107606091623).abs() < 1e-12);
        let step0 = per_belief_spearman(&pred, &gt, Some(0)).unwrap();
        assert!((step0[0].as_ref().unwrap() - 1.0).abs() < 1e-12);
        assert!((step0[1].as_ref().unwrap() - 1.0).abs() < 1e-12);
    }
}
