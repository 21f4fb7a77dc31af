use crate::error::{Error, Result};

/// Average ranks (1-based); ties share the mean of the positions they span.
pub fn average_ranks(xs: &[f64]) -> Result<Vec<f64>> {
    if xs.iter().any(|x| !x.is_finite()) {
        return Err(Error::UndefinedCorrelation("non-finite value in ranked data".into()));
    }
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && xs[idx[end]] == xs[idx[start]] {
            end += 1;
        }
        // positions start+1 ..= end
        let r = (start + 1 + end) as f64 / 2.0;
        for &i in &idx[start..end] {
            ranks[i] = r;
        }
        start = end;
    }
    Ok(ranks)
}

fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation("zero rank variance".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Spearman correlation: Pearson correlation of average ranks.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::Dimension {
            context: "spearman",
            expected: xs.len(),
            found: ys.len(),
        });
    }
    if xs.len() < 2 {
        return Err(Error::UndefinedCorrelation(format!("need at least 2 samples, got {}", xs.len())));
    }
    pearson(&average_ranks(xs)?, &average_ranks(ys)?)
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, v)
}

/// Standardized mean difference `(μ1 − μ0) / s_pooled` with the pooled
/// sample standard deviation.
pub fn cohens_d_groups(group1: &[f64], group0: &[f64]) -> Result<f64> {
    if group1.len() < 2 {
        return Err(Error::InsufficientGroup { group: 1, n: group1.len() });
    }
    if group0.len() < 2 {
        return Err(Error::InsufficientGroup { group: 0, n: group0.len() });
    }
    let (m1, v1) = mean_var(group1);
    let (m0, v0) = mean_var(group0);
    let (n1, n0) = (group1.len() as f64, group0.len() as f64);
    let pooled = (((n1 - 1.0) * v1 + (n0 - 1.0) * v0) / (n1 + n0 - 2.0)).sqrt();
    if pooled == 0.0 {
        return Err(Error::ZeroPooledVariance);
    }
    Ok((m1 - m0) / pooled)
}

/// Splits belief-change magnitudes by whether the action changed.
///
/// For every agent and `t ≥ 1`, `x_t = ‖b_t − b_{t−1}‖₁` goes to group 1 when
/// `a_t ≠ a_{t−1}` and to group 0 otherwise.
pub fn belief_change_groups(beliefs: &[Vec<Vec<f64>>], actions: &[Vec<usize>]) -> Result<(Vec<f64>, Vec<f64>)> {
    if beliefs.len() != actions.len() {
        return Err(Error::Dimension {
            context: "cohens_d agents",
            expected: beliefs.len(),
            found: actions.len(),
        });
    }
    let mut g1 = Vec::new();
    let mut g0 = Vec::new();
    for (b, a) in beliefs.iter().zip(actions) {
        if b.len() != a.len() {
            return Err(Error::Dimension {
                context: "cohens_d steps",
                expected: b.len(),
                found: a.len(),
            });
        }
        for t in 1..b.len() {
            let x: f64 = b[t].iter().zip(&b[t - 1]).map(|(u, v)| (u - v).abs()).sum();
            if a[t] != a[t - 1] {
                g1.push(x);
            } else {
                g0.push(x);
            }
        }
    }
    Ok((g1, g0))
}

/// Cohen's d of belief-change magnitude at action-change versus other steps,
/// pooled over agents. `beliefs[n][t][i]`, `actions[n][t]`.
pub fn cohens_d(beliefs: &[Vec<Vec<f64>>], actions: &[Vec<usize>]) -> Result<f64> {
    let (g1, g0) = belief_change_groups(beliefs, actions)?;
    cohens_d_groups(&g1, &g0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn spearman_examples() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert_abs_diff_eq!(spearman(&x, &x).unwrap(), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(spearman(&x, &[4.0, 3.0, 2.0, 1.0]).unwrap(), -1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(spearman(&x, &[1.0, 3.0, 2.0, 4.0]).unwrap(), 0.8, epsilon = 1e-12);
    }

    #[test]
    fn spearman_undefined_cases() {
        assert!(matches!(spearman(&[1.0], &[2.0]), Err(Error::UndefinedCorrelation(_))));
        assert!(matches!(spearman(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]), Err(Error::UndefinedCorrelation(_))));
        assert!(spearman(&[1.0, 2.0], &[1.0]).is_err());
    }

    #[test]
    fn ties_get_mean_rank() {
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]).unwrap(), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn cohens_d_examples() {
        assert_abs_diff_eq!(
            cohens_d_groups(&[1.0, 3.0], &[0.0, 2.0]).unwrap(),
            std::f64::consts::FRAC_1_SQRT_2,
            epsilon = 1e-12
        );
        assert_eq!(cohens_d_groups(&[1.0, 2.0, 4.0], &[1.0, 2.0, 4.0]).unwrap(), 0.0);
        assert!(matches!(cohens_d_groups(&[2.0, 2.0], &[0.0, 0.0]), Err(Error::ZeroPooledVariance)));
        assert!(matches!(cohens_d_groups(&[2.0], &[0.0, 1.0]), Err(Error::InsufficientGroup { group: 1, n: 1 })));
        assert!(matches!(cohens_d_groups(&[2.0, 3.0], &[]), Err(Error::InsufficientGroup { group: 0, n: 0 })));
    }

    #[test]
    fn belief_change_grouping() {
        let beliefs = vec![
            vec![vec![0.0, 0.0], vec![0.5, 0.5], vec![0.5, 0.0]],
            vec![vec![1.0, 1.0], vec![1.0, 1.0], vec![0.0, 1.0]],
        ];
        let actions = vec![vec![0, 1, 1], vec![2, 2, 0]];
        let (g1, g0) = belief_change_groups(&beliefs, &actions).unwrap();
        assert_eq!(g1, vec![1.0, 1.0]);
        assert_eq!(g0, vec![0.5, 0.0]);
    }

    proptest! {
        #[test]
        fn spearman_invariant_under_monotone_maps(
            xs in proptest::collection::vec(-10.0f64..10.0, 3..30),
            seed in 0u64..1000,
        ) {
            let ys: Vec<f64> = xs.iter().enumerate().map(|(i, x)| x * 0.3 + ((i as u64 * 31 + seed) % 7) as f64).collect();
            if let Ok(r) = spearman(&xs, &ys) {
                let tx: Vec<f64> = xs.iter().map(|x| x.exp()).collect();
                let ty: Vec<f64> = ys.iter().map(|y| 3.0 * y.powi(3) + 1.0).collect();
                prop_assert!((spearman(&tx, &ty).unwrap() - r).abs() < 1e-12);
                prop_assert!((-1.0..=1.0).contains(&r));
            }
        }

        #[test]
        fn cohens_d_flips_sign_when_groups_swap(
            a in proptest::collection::vec(0.0f64..5.0, 2..10),
            b in proptest::collection::vec(0.0f64..5.0, 2..10),
        ) {
            if let Ok(d) = cohens_d_groups(&a, &b) {
                prop_assert!((cohens_d_groups(&b, &a).unwrap() + d).abs() < 1e-12);
            }
        }
    }
}
