use crate::error::{Error, Result};

/// Dynamic time warping distance with `|x − y|` cost, no window, and a path
/// running from the first pair to the last pair.
pub fn dtw(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.is_empty() || ys.is_empty() {
        return Err(Error::EmptySequence("dtw input".into()));
    }
    let m = ys.len();
    let mut prev = vec![f64::INFINITY; m + 1];
    let mut cur = vec![f64::INFINITY; m + 1];
    prev[0] = 0.0;
    for x in xs {
        cur[0] = f64::INFINITY;
        for j in 1..=m {
            let best = prev[j - 1].min(prev[j]).min(cur[j - 1]);
            cur[j] = (x - ys[j - 1]).abs() + best;
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(prev[m])
}

/// Mean over agents `n` and beliefs `i` of `DTW(pred[n][..T_n][i], gt[n][..T_n][i]) / T_n`.
/// `pred[n][t][i]` and `gt[n][t][i]`.
pub fn dtw_avg(pred: &[Vec<Vec<f64>>], gt: &[Vec<Vec<f64>>], valid_lengths: &[usize]) -> Result<f64> {
    if pred.len() != gt.len() || pred.len() != valid_lengths.len() {
        return Err(Error::Dimension {
            context: "dtw_avg agents",
            expected: pred.len(),
            found: gt.len().min(valid_lengths.len()),
        });
    }
    if pred.is_empty() {
        return Err(Error::EmptySequence("no agents".into()));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for (n, ((p, g), &len)) in pred.iter().zip(gt).zip(valid_lengths).enumerate() {
        if len < 1 {
            return Err(Error::EmptySequence(format!("agent {n} has valid length 0")));
        }
        if p.len() < len || g.len() < len {
            return Err(Error::Dimension {
                context: "dtw_avg steps",
                expected: len,
                found: p.len().min(g.len()),
            });
        }
        let k = p[0].len();
        for i in 0..k {
            let xs: Vec<f64> = p[..len].iter().map(|row| row[i]).collect();
            let ys: Vec<f64> = g[..len]
                .iter()
                .map(|row| row.get(i).copied())
                .collect::<Option<_>>()
                .ok_or(Error::Dimension {
                    context: "dtw_avg beliefs",
                    expected: k,
                    found: g[0].len(),
                })?;
            total += dtw(&xs, &ys)? / len as f64;
            count += 1;
        }
    }
    Ok(total / count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn series(v: &[f64]) -> Vec<Vec<f64>> {
        v.iter().map(|&x| vec![x]).collect()
    }

    #[test]
    fn identical_is_zero() {
        let p = vec![series(&[0.1, 0.5, 0.9])];
        assert_eq!(dtw_avg(&p, &p, &[3]).unwrap(), 0.0);
    }

    #[test]
    fn constant_offset() {
        assert_eq!(dtw(&[0.0, 0.0, 0.0], &[1.0, 1.0, 1.0]).unwrap(), 3.0);
        let v = dtw_avg(&[series(&[0.0, 0.0, 0.0])], &[series(&[1.0, 1.0, 1.0])], &[3]).unwrap();
        assert_eq!(v, 1.0);
    }

    #[test]
    fn single_element() {
        assert_eq!(dtw(&[0.25], &[1.0]).unwrap(), 0.75);
    }

    #[test]
    fn warping_absorbs_shift() {
        // a one-step delay costs nothing extra beyond the boundary mismatch
        assert_eq!(dtw(&[0.0, 1.0, 1.0, 2.0], &[0.0, 0.0, 1.0, 2.0]).unwrap(), 0.0);
    }

    #[test]
    fn valid_length_truncates_and_empty_errors() {
        let p = vec![series(&[0.0, 0.0, 5.0])];
        let g = vec![series(&[0.0, 0.0, 0.0])];
        assert_eq!(dtw_avg(&p, &g, &[2]).unwrap(), 0.0);
        assert!(matches!(dtw_avg(&p, &g, &[0]), Err(Error::EmptySequence(_))));
    }

    proptest! {
        #[test]
        fn symmetric_and_bounded(
            xs in proptest::collection::vec(0.0f64..1.0, 1..8),
            seed in proptest::collection::vec(0.0f64..1.0, 8),
        ) {
            let ys = &seed[..xs.len()];
            let a = dtw(&xs, ys).unwrap();
            let b = dtw(ys, &xs).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
            let max = xs.iter().zip(ys).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            prop_assert!(a <= xs.len() as f64 * max + 1e-12);
            prop_assert_eq!(dtw(&xs, &xs).unwrap(), 0.0);
        }
    }
}
