//! Agreement statistics between two aligned grade vectors.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricError {
    #[error("vectors have different lengths ({0} and {1})")]
    LengthMismatch(usize, usize),
    #[error("need at least 2 paired values, got {0}")]
    TooShort(usize),
    #[error("correlation undefined: {0}")]
    Undefined(&'static str),
}

fn check_pair(x: &[i64], y: &[i64]) -> Result<(), MetricError> {
    if x.len() != y.len() {
        return Err(MetricError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(MetricError::TooShort(x.len()));
    }
    Ok(())
}

fn pearson_f64(x: &[f64], y: &[f64]) -> Result<f64, MetricError> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(MetricError::Undefined("constant vector"));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Sample Pearson correlation.
pub fn pearson(x: &[i64], y: &[i64]) -> Result<f64, MetricError> {
    check_pair(x, y)?;
    let fx: Vec<f64> = x.iter().map(|&v| v as f64).collect();
    let fy: Vec<f64> = y.iter().map(|&v| v as f64).collect();
    pearson_f64(&fx, &fy)
}

/// 1-based ranks with ties sharing the mean of their positions.
pub fn mid_ranks(x: &[i64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by_key(|&i| x[i]);
    let mut ranks = vec![0.0; x.len()];
    let mut start = 0;
    while start < idx.len() {
        let mut end = start;
        while end + 1 < idx.len() && x[idx[end + 1]] == x[idx[start]] {
            end += 1;
        }
        let rank = (start + end) as f64 / 2.0 + 1.0;
        for &i in &idx[start..=end] {
            ranks[i] = rank;
        }
        start = end + 1;
    }
    ranks
}

/// Spearman rank correlation: Pearson of mid-ranks.
pub fn spearman(x: &[i64], y: &[i64]) -> Result<f64, MetricError> {
    check_pair(x, y)?;
    pearson_f64(&mid_ranks(x), &mid_ranks(y))
}

/// Pairs tied within each run of equal values in a sorted sequence.
fn tied_pairs<T: PartialEq>(sorted: impl IntoIterator<Item = T>) -> u64 {
    let mut total = 0u64;
    let mut run = 0u64;
    let mut prev: Option<T> = None;
    for v in sorted {
        if prev.as_ref() == Some(&v) {
            run += 1;
        } else {
            total += run * run.saturating_sub(1) / 2;
            run = 1;
        }
        prev = Some(v);
    }
    total + run * run.saturating_sub(1) / 2
}

/// Merge sort counting inversions (pairs i < j with v[i] > v[j]).
fn count_inversions(v: &mut [i64]) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = count_inversions(&mut v[..mid]) + count_inversions(&mut v[mid..]);
    let mut merged = Vec::with_capacity(n);
    let (mut i, mut j) = (0, mid);
    while i < mid && j < n {
        if v[j] < v[i] {
            swaps += (mid - i) as u64;
            merged.push(v[j]);
            j += 1;
        } else {
            merged.push(v[i]);
            i += 1;
        }
    }
    merged.extend_from_slice(&v[i..mid]);
    merged.extend_from_slice(&v[j..n]);
    v.copy_from_slice(&merged);
    swaps
}

/// Kendall tau-b in O(n log n).
pub fn kendall_tau(x: &[i64], y: &[i64]) -> Result<f64, MetricError> {
    check_pair(x, y)?;
    let n = x.len() as u64;
    let mut pairs: Vec<(i64, i64)> = x.iter().copied().zip(y.iter().copied()).collect();
    pairs.sort_unstable();
    let n0 = n * (n - 1) / 2;
    let n1 = tied_pairs(pairs.iter().map(|p| p.0));
    let n3 = tied_pairs(pairs.iter().copied());
    let mut ys: Vec<i64> = pairs.iter().map(|p| p.1).collect();
    let discordant = count_inversions(&mut ys);
    let n2 = tied_pairs(ys.iter().copied());
    let denom = ((n0 - n1) as f64) * ((n0 - n2) as f64);
    if denom == 0.0 {
        return Err(MetricError::Undefined("all pairs tied"));
    }
    // concordant - discordant = n0 - n1 - n2 + n3 - 2 * discordant
    let numer = n0 as f64 - n1 as f64 - n2 as f64 + n3 as f64 - 2.0 * discordant as f64;
    Ok((numer / denom.sqrt()).clamp(-1.0, 1.0))
}

/// Agreement between two aligned grade vectors. Correlations are `None` when
/// undefined (for example a constant vector); counting metrics are always set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub n: usize,
    pub pearson_r: Option<f64>,
    pub kendall_tau: Option<f64>,
    pub spearman_rho: Option<f64>,
    pub exact_pct: f64,
    pub close_pct: f64,
    /// Mean of `x - y`.
    pub mean_diff: f64,
    pub mae: f64,
    pub mse: f64,
}

pub fn agreement(x: &[i64], y: &[i64]) -> Result<AgreementReport, MetricError> {
    check_pair(x, y)?;
    let n = x.len();
    let (mut exact, mut close, mut sum, mut abs, mut sq) = (0usize, 0usize, 0i64, 0i64, 0i64);
    for (a, b) in x.iter().zip(y) {
        let d = a - b;
        exact += usize::from(d == 0);
        close += usize::from(d.abs() <= 1);
        sum += d;
        abs += d.abs();
        sq += d * d;
    }
    let nf = n as f64;
    Ok(AgreementReport {
        n,
        pearson_r: pearson(x, y).ok(),
        kendall_tau: kendall_tau(x, y).ok(),
        spearman_rho: spearman(x, y).ok(),
        exact_pct: 100.0 * exact as f64 / nf,
        close_pct: 100.0 * close as f64 / nf,
        mean_diff: sum as f64 / nf,
        mae: abs as f64 / nf,
        mse: sq as f64 / nf,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    /// Pair enumeration straight from the tau-b definition.
    fn kendall_brute(x: &[i64], y: &[i64]) -> Option<f64> {
        let (mut c, mut d, mut tx, mut ty) = (0i64, 0i64, 0i64, 0i64);
        for i in 0..x.len() {
            for j in i + 1..x.len() {
                let sx = (x[i] - x[j]).signum();
                let sy = (y[i] - y[j]).signum();
                match (sx, sy) {
                    (0, 0) => {}
                    (0, _) => tx += 1,
                    (_, 0) => ty += 1,
                    _ if sx == sy => c += 1,
                    _ => d += 1,
                }
            }
        }
        let denom = ((c + d + tx) * (c + d + ty)) as f64;
        (denom > 0.0).then(|| (c - d) as f64 / denom.sqrt())
    }

    #[test]
    fn pearson_basics() {
        assert!(close(pearson(&[0, 1, 2, 3], &[0, 1, 2, 3]).unwrap(), 1.0));
        assert!(close(pearson(&[0, 1, 2], &[2, 1, 0]).unwrap(), -1.0));
        assert_eq!(pearson(&[1, 1, 1], &[0, 1, 2]), Err(MetricError::Undefined("constant vector")));
        assert_eq!(pearson(&[1], &[1]), Err(MetricError::TooShort(1)));
        assert_eq!(pearson(&[1, 2], &[1]), Err(MetricError::LengthMismatch(2, 1)));
    }

    #[test]
    fn spearman_examples() {
        assert!(close(spearman(&[1, 2, 3, 4], &[1, 3, 2, 4]).unwrap(), 0.8));
        let x = [-3, 0, 2, 5, 9];
        let cubed: Vec<i64> = x.iter().map(|v| v * v * v).collect();
        assert!(close(spearman(&x, &cubed).unwrap(), 1.0));
        assert!(close(spearman(&[1, 2, 3], &[3, 2, 1]).unwrap(), -1.0));
        assert_eq!(mid_ranks(&[10, 20, 10, 30]), [1.5, 3.0, 1.5, 4.0]);
    }

    #[test]
    fn kendall_examples() {
        assert!(close(kendall_tau(&[3, 1, 2], &[3, 1, 2]).unwrap(), 1.0));
        assert!(close(kendall_tau(&[1, 2, 3, 4], &[4, 3, 2, 1]).unwrap(), -1.0));
        assert!(kendall_tau(&[2, 2, 2], &[1, 2, 3]).is_err());
    }

    #[test]
    fn agreement_examples() {
        let same = agreement(&[1, 2, 3], &[1, 2, 3]).unwrap();
        assert_eq!((same.exact_pct, same.close_pct, same.mae, same.mse), (100.0, 100.0, 0.0, 0.0));
        let opposite = agreement(&[0, 5], &[5, 0]).unwrap();
        assert_eq!((opposite.exact_pct, opposite.close_pct), (0.0, 0.0));
        assert_eq!((opposite.mae, opposite.mse, opposite.mean_diff), (5.0, 25.0, 0.0));
        let constant = agreement(&[3, 3], &[1, 4]).unwrap();
        assert_eq!(constant.pearson_r, None);
        assert_eq!(constant.mean_diff, 0.5);
    }

    fn pair(max_n: usize) -> impl Strategy<Value = (Vec<i64>, Vec<i64>)> {
        (2..=max_n).prop_flat_map(|n| {
            (
                prop::collection::vec(0i64..=5, n),
                prop::collection::vec(0i64..=5, n),
            )
        })
    }

    proptest! {
        #[test]
        fn kendall_matches_pair_enumeration((x, y) in pair(30)) {
            match (kendall_tau(&x, &y), kendall_brute(&x, &y)) {
                (Ok(fast), Some(slow)) => prop_assert!(close(fast, slow), "{} vs {}", fast, slow),
                (Err(_), None) => {}
                (fast, slow) => prop_assert!(false, "{:?} vs {:?}", fast, slow),
            }
        }

        #[test]
        fn correlations_are_symmetric((x, y) in pair(65)) {
            for f in [pearson, spearman, kendall_tau] {
                match (f(&x, &y), f(&y, &x)) {
                    (Ok(a), Ok(b)) => prop_assert!(close(a, b)),
                    (Err(_), Err(_)) => {}
                    other => prop_assert!(false, "{:?}", other),
                }
            }
            let xy = agreement(&x, &y).unwrap();
            let yx = agreement(&y, &x).unwrap();
            prop_assert!(close(xy.mean_diff, -yx.mean_diff));
        }

        #[test]
        fn correlations_are_translation_invariant((x, y) in pair(65), shift in -100i64..100) {
            let shifted: Vec<i64> = x.iter().map(|v| v + shift).collect();
            for f in [pearson, spearman, kendall_tau] {
                match (f(&x, &y), f(&shifted, &y)) {
                    (Ok(a), Ok(b)) => prop_assert!(close(a, b)),
                    (Err(_), Err(_)) => {}
                    other => prop_assert!(false, "{:?}", other),
                }
            }
        }

        #[test]
        fn report_invariants((x, y) in pair(65)) {
            let r = agreement(&x, &y).unwrap();
            for c in [r.pearson_r, r.kendall_tau, r.spearman_rho].into_iter().flatten() {
                prop_assert!((-1.0..=1.0).contains(&c));
            }
            prop_assert!(0.0 <= r.exact_pct && r.exact_pct <= r.close_pct && r.close_pct <= 100.0);
            prop_assert!(r.mae >= 0.0 && r.mse >= 0.0);
            prop_assert!(r.mean_diff.abs() <= r.mae + 1e-12);
        }
    }
}
