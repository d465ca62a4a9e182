//! Exhaustive CART split search.
//!
//! Candidate thresholds are midpoints between adjacent distinct sorted values
//! of a feature; a row goes left iff `value <= threshold`. The gain of a split
//! is the node impurity minus the size-weighted child impurities. Among
//! equal gains the lower feature index wins, then the lower threshold.

use serde::{Deserialize, Serialize};

use super::Dataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Criterion {
    /// `1 - Σ p_c²` over integer class ids.
    Gini,
    /// Mean squared deviation from the node mean.
    Variance,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRule {
    pub feature_index: usize,
    pub threshold: f64,
}

impl SplitRule {
    pub fn goes_left(&self, row: &[f64]) -> bool {
        row[self.feature_index] <= self.threshold
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitCandidate {
    pub rule: SplitRule,
    pub gain: f64,
}

/// Relative slack used both for "gain is positive" and for tie detection.
pub(crate) const GAIN_TOLERANCE: f64 = 1e-10;

/// Best split over all rows and features of `data`.
pub fn best_split(data: &Dataset, criterion: Criterion) -> Option<SplitCandidate> {
    if data.len() < 2 {
        return None;
    }
    let indices: Vec<usize> = (0..data.len()).collect();
    let features: Vec<usize> = (0..data.n_features()).collect();
    let n_classes = match criterion {
        Criterion::Gini => data.n_classes(),
        Criterion::Variance => 0,
    };
    let mut scratch = Vec::new();
    find_split(data, &indices, &features, criterion, n_classes, &mut scratch)
}

pub(crate) fn midpoint(lo: f64, hi: f64) -> f64 {
    let mid = lo + (hi - lo) / 2.0;
    if mid >= hi {
        lo
    } else {
        mid
    }
}

pub(crate) fn node_impurity(data: &Dataset, indices: &[usize], criterion: Criterion, n_classes: usize) -> f64 {
    let n = indices.len() as f64;
    match criterion {
        Criterion::Gini => {
            let mut counts = vec![0usize; n_classes];
            for &i in indices {
                counts[data.class_of(i)] += 1;
            }
            gini(&counts, indices.len())
        }
        Criterion::Variance => {
            let mean = indices.iter().map(|&i| data.target(i)).sum::<f64>() / n;
            indices.iter().map(|&i| (data.target(i) - mean).powi(2)).sum::<f64>() / n
        }
    }
}

fn gini(counts: &[usize], n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    1.0 - counts.iter().map(|&c| (c as f64 / n).powi(2)).sum::<f64>()
}

pub(crate) fn is_pure(data: &Dataset, indices: &[usize]) -> bool {
    let first = data.target(indices[0]);
    indices.iter().all(|&i| data.target(i) == first)
}

/// Best split of the rows in `indices` over `features` (ascending order
/// assumed for the tie rule). `scratch` is reused between calls.
pub(crate) fn find_split(
    data: &Dataset,
    indices: &[usize],
    features: &[usize],
    criterion: Criterion,
    n_classes: usize,
    scratch: &mut Vec<(f64, usize)>,
) -> Option<SplitCandidate> {
    let n = indices.len();
    if n < 2 || is_pure(data, indices) {
        return None;
    }
    let parent = node_impurity(data, indices, criterion, n_classes);
    if parent <= 0.0 {
        return None;
    }
    let tol = parent * GAIN_TOLERANCE;
    let mut best: Option<SplitCandidate> = None;

    for &f in features {
        scratch.clear();
        scratch.extend(indices.iter().map(|&i| (data.value(i, f), i)));
        scratch.sort_by(|a, b| a.0.total_cmp(&b.0));
        if scratch[0].0 == scratch[n - 1].0 {
            continue;
        }
        match criterion {
            Criterion::Gini => {
                let mut left = vec![0usize; n_classes];
                let mut right = vec![0usize; n_classes];
                for &(_, i) in scratch.iter() {
                    right[data.class_of(i)] += 1;
                }
                for k in 0..n - 1 {
                    let c = data.class_of(scratch[k].1);
                    left[c] += 1;
                    right[c] -= 1;
                    let (lo, hi) = (scratch[k].0, scratch[k + 1].0);
                    if lo == hi {
                        continue;
                    }
                    let nl = k + 1;
                    let nr = n - nl;
                    let gain =
                        parent - (nl as f64 / n as f64) * gini(&left, nl) - (nr as f64 / n as f64) * gini(&right, nr);
                    consider(&mut best, f, midpoint(lo, hi), gain, tol);
                }
            }
            Criterion::Variance => {
                let total: f64 = scratch.iter().map(|&(_, i)| data.target(i)).sum();
                let mut left_sum = 0.0;
                for k in 0..n - 1 {
                    left_sum += data.target(scratch[k].1);
                    let (lo, hi) = (scratch[k].0, scratch[k + 1].0);
                    if lo == hi {
                        continue;
                    }
                    let nl = (k + 1) as f64;
                    let nr = (n - k - 1) as f64;
                    let diff = left_sum / nl - (total - left_sum) / nr;
                    let gain = nl * nr / (n as f64 * n as f64) * diff * diff;
                    consider(&mut best, f, midpoint(lo, hi), gain, tol);
                }
            }
        }
    }
    best
}

fn consider(best: &mut Option<SplitCandidate>, feature: usize, threshold: f64, gain: f64, tol: f64) {
    if gain <= tol {
        return;
    }
    let better = match best {
        None => true,
        Some(b) => gain > b.gain + tol,
    };
    if better {
        *best = Some(SplitCandidate {
            rule: SplitRule {
                feature_index: feature,
                threshold,
            },
            gain,
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn data(rows: Vec<Vec<f64>>, y: Vec<f64>) -> Dataset {
        let names = (0..rows[0].len()).map(|i| format!("x{i}")).collect();
        Dataset::new(names, rows, y).unwrap()
    }

    #[test]
    fn separates_two_classes_at_midpoint() {
        let d = data(
            vec![vec![1.0], vec![2.0], vec![3.0], vec![4.0]],
            vec![0.0, 0.0, 1.0, 1.0],
        );
        let s = best_split(&d, Criterion::Gini).unwrap();
        assert_eq!(
            s.rule,
            SplitRule {
                feature_index: 0,
                threshold: 2.5
            }
        );
        // parent gini 0.5, children pure
        assert!((s.gain - 0.5).abs() < 1e-15);
    }

    #[test]
    fn identical_targets_no_split() {
        let d = data(vec![vec![1.0], vec![2.0], vec![3.0]], vec![4.0, 4.0, 4.0]);
        assert!(best_split(&d, Criterion::Variance).is_none());
        let d = data(vec![vec![1.0], vec![2.0], vec![3.0]], vec![1.0, 1.0, 1.0]);
        assert!(best_split(&d, Criterion::Gini).is_none());
    }

    #[test]
    fn equal_gain_prefers_lower_feature() {
        let rows = vec![vec![1.0, 10.0], vec![2.0, 20.0], vec![3.0, 30.0], vec![4.0, 40.0]];
        let d = data(rows, vec![0.0, 0.0, 1.0, 1.0]);
        let s = best_split(&d, Criterion::Gini).unwrap();
        assert_eq!(s.rule.feature_index, 0);
    }

    #[test]
    fn equal_gain_prefers_lower_threshold() {
        // y = [1,0,1]: splitting at 1.5 or 2.5 both gain 1/9
        let d = data(vec![vec![1.0], vec![2.0], vec![3.0]], vec![1.0, 0.0, 1.0]);
        let s = best_split(&d, Criterion::Gini).unwrap();
        assert_eq!(s.rule.threshold, 1.5);
        let d = data(
            vec![vec![1.0], vec![2.0], vec![3.0], vec![4.0]],
            vec![0.0, 1.0, 1.0, 0.0],
        );
        let s = best_split(&d, Criterion::Gini).unwrap();
        assert_eq!(s.rule.threshold, 1.5);
    }

    #[test]
    fn variance_split_on_step() {
        let d = data(
            vec![vec![0.0], vec![1.0], vec![2.0], vec![3.0]],
            vec![1.0, 1.0, 5.0, 5.0],
        );
        let s = best_split(&d, Criterion::Variance).unwrap();
        assert_eq!(s.rule.threshold, 1.5);
        assert!((s.gain - 4.0).abs() < 1e-12);
    }

    #[test]
    fn constant_feature_never_split() {
        let d = data(vec![vec![7.0], vec![7.0]], vec![0.0, 1.0]);
        assert!(best_split(&d, Criterion::Gini).is_none());
    }
}
