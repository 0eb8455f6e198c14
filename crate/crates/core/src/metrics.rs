//! External clustering validity: adjusted Rand index and optimal-permutation
//! misclassification error.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::posthoc::solve_assignment;

/// A hard partition of N items; labels are positive integers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    labels: Vec<usize>,
    n_groups: usize,
}

impl Partition {
    /// Canonicalise arbitrary positive labels to the contiguous range 1..=k
    /// (in order of first appearance).
    pub fn new(labels: &[usize]) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::Shape("partition must be non-empty".into()));
        }
        if labels.iter().any(|&l| l == 0) {
            return Err(Error::Shape("partition labels must be >= 1".into()));
        }
        let mut seen: Vec<usize> = Vec::new();
        let canon: Vec<usize> = labels
            .iter()
            .map(|&l| match seen.iter().position(|&s| s == l) {
                Some(idx) => idx + 1,
                None => {
                    seen.push(l);
                    seen.len()
                }
            })
            .collect();
        Ok(Partition { labels: canon, n_groups: seen.len() })
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }
    pub fn n_groups(&self) -> usize {
        self.n_groups
    }
    pub fn len(&self) -> usize {
        self.labels.len()
    }
    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn counts(&self) -> Vec<usize> {
        let mut c = vec![0usize; self.n_groups];
        for &l in &self.labels {
            c[l - 1] += 1;
        }
        c
    }
}

fn choose2(n: usize) -> f64 {
    if n < 2 {
        0.0
    } else {
        n as f64 * (n as f64 - 1.0) / 2.0
    }
}

/// Contingency table between two partitions (rows: a, columns: b).
pub fn contingency(a: &Partition, b: &Partition) -> Result<DMatrix<usize>> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("partition lengths differ: {} vs {}", a.len(), b.len())));
    }
    let mut table = DMatrix::<usize>::zeros(a.n_groups, b.n_groups);
    for (&la, &lb) in a.labels.iter().zip(b.labels.iter()) {
        table[(la - 1, lb - 1)] += 1;
    }
    Ok(table)
}

/// Adjusted Rand index in the chance-corrected (Hubert-Arabie) form.
///
/// When the adjustment denominator is zero (e.g. both partitions trivial),
/// returns 1 for identical partitions and 0 otherwise.
pub fn adjusted_rand(a: &Partition, b: &Partition) -> Result<f64> {
    let table = contingency(a, b)?;
    let n = a.len();
    let sum_cells: f64 = table.iter().map(|&c| choose2(c)).sum();
    let sum_a: f64 = a.counts().iter().map(|&c| choose2(c)).sum();
    let sum_b: f64 = b.counts().iter().map(|&c| choose2(c)).sum();
    let total = choose2(n);
    let expected = sum_a * sum_b / total;
    let max_index = 0.5 * (sum_a + sum_b);
    let denom = max_index - expected;
    if denom.abs() < 1e-300 {
        return Ok(if a.labels == b.labels { 1.0 } else { 0.0 });
    }
    Ok((sum_cells - expected) / denom)
}

/// Result of the optimal-permutation misclassification computation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorRate {
    /// 1 - matched/N.
    pub error: f64,
    /// Column permutation applied to the predicted clusters (0-based:
    /// `permutation[predicted]` is the matched truth index in the padded table).
    pub permutation: Vec<usize>,
    /// Square confusion matrix after padding and permuting the predicted side;
    /// rows are truth groups, columns the permuted predictions.
    pub confusion: Vec<Vec<usize>>,
}

/// Misclassification error under the best matching of predicted clusters to
/// truth groups. The confusion matrix is zero-padded to square when the
/// cluster counts differ, and the trace-maximising permutation is found with
/// the assignment solver.
pub fn error_rate(pred: &Partition, truth: &Partition) -> Result<ErrorRate> {
    if pred.len() != truth.len() {
        return Err(Error::Shape(format!(
            "partition lengths differ: {} vs {}",
            pred.len(),
            truth.len()
        )));
    }
    let n = pred.len();
    let k = pred.n_groups.max(truth.n_groups);
    // counts[t][p] over padded square.
    let mut counts = vec![vec![0usize; k]; k];
    for (&lp, &lt) in pred.labels.iter().zip(truth.labels.iter()) {
        counts[lt - 1][lp - 1] += 1;
    }
    // Assign predicted cluster (row of cost) to truth group (column), maximising
    // agreement = minimising negative counts.
    let cost = DMatrix::from_fn(k, k, |p, t| -(counts[t][p] as f64));
    let perm = solve_assignment(&cost)?;
    let matched: usize = (0..k).map(|p| counts[perm[p]][p]).sum();
    let confusion: Vec<Vec<usize>> =
        (0..k).map(|t| (0..k).map(|p| counts[t][perm[p]]).collect()).collect();
    Ok(ErrorRate { error: 1.0 - matched as f64 / n as f64, permutation: perm, confusion })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn p(labels: &[usize]) -> Partition {
        Partition::new(labels).unwrap()
    }

    /// All-pairs Rand counting oracle.
    fn ari_brute(a: &Partition, b: &Partition) -> f64 {
        let n = a.len();
        let (mut n11, mut n00, mut n10, mut n01) = (0f64, 0f64, 0f64, 0f64);
        for i in 0..n {
            for j in (i + 1)..n {
                let same_a = a.labels()[i] == a.labels()[j];
                let same_b = b.labels()[i] == b.labels()[j];
                match (same_a, same_b) {
                    (true, true) => n11 += 1.0,
                    (false, false) => n00 += 1.0,
                    (true, false) => n10 += 1.0,
                    (false, true) => n01 += 1.0,
                }
            }
        }
        let total = n11 + n00 + n10 + n01;
        let expected = (n11 + n10) * (n11 + n01) / total;
        let max_index = 0.5 * ((n11 + n10) + (n11 + n01));
        if (max_index - expected).abs() < 1e-300 {
            return if a.labels() == b.labels() { 1.0 } else { 0.0 };
        }
        (n11 - expected) / (max_index - expected)
    }

    #[test]
    fn identical_partitions_ari_one() {
        let a = p(&[1, 1, 2, 3, 3]);
        assert_relative_eq!(adjusted_rand(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn crossed_partition_matches_brute_force() {
        let a = p(&[1, 1, 2, 2]);
        let b = p(&[1, 2, 1, 2]);
        let ari = adjusted_rand(&a, &b).unwrap();
        assert_relative_eq!(ari, ari_brute(&a, &b), epsilon = 1e-12);
    }

    #[test]
    fn ari_symmetric_and_permutation_invariant() {
        let a = p(&[1, 2, 2, 3, 1, 3, 2]);
        let b = p(&[2, 2, 1, 1, 3, 3, 1]);
        let ab = adjusted_rand(&a, &b).unwrap();
        let ba = adjusted_rand(&b, &a).unwrap();
        assert_relative_eq!(ab, ba, epsilon = 1e-12);
        // Relabel b: 1->3, 2->1, 3->2.
        let relabeled: Vec<usize> = b.labels().iter().map(|&l| match l {
            1 => 3,
            2 => 1,
            _ => 2,
        }).collect();
        let b2 = p(&relabeled);
        assert_relative_eq!(ab, adjusted_rand(&a, &b2).unwrap(), epsilon = 1e-12);
    }

    #[test]
    fn length_mismatch_rejected() {
        let a = p(&[1, 2]);
        let b = p(&[1, 2, 1]);
        assert!(adjusted_rand(&a, &b).is_err());
        assert!(error_rate(&a, &b).is_err());
    }

    #[test]
    fn error_zero_for_relabelled_truth() {
        let truth = p(&[1, 1, 2, 2, 3, 3]);
        let pred = p(&[3, 3, 1, 1, 2, 2]);
        let res = error_rate(&pred, &truth).unwrap();
        assert_relative_eq!(res.error, 0.0);
    }

    #[test]
    fn metabolomics_confusion_error() {
        // Confusion (9,0,0 / 0,8,1): best matching misses one of 18 -> 5.56%.
        let truth: Vec<usize> = std::iter::repeat(1).take(9).chain(std::iter::repeat(2).take(9)).collect();
        let mut pred: Vec<usize> = std::iter::repeat(1).take(9).chain(std::iter::repeat(2).take(8)).collect();
        pred.push(3);
        let res = error_rate(&p(&pred), &p(&truth)).unwrap();
        assert_relative_eq!(res.error, 1.0 / 18.0, epsilon = 1e-12);
        // Padded square confusion keeps the unmatched third cluster as a column.
        assert_eq!(res.confusion.len(), 3);
    }

    #[test]
    fn error_rate_brute_force_small() {
        // Exhaustive check over all label permutations for N <= 8, k <= 5.
        fn permutations(k: usize) -> Vec<Vec<usize>> {
            if k == 1 {
                return vec![vec![0]];
            }
            let mut out = Vec::new();
            for sub in permutations(k - 1) {
                for pos in 0..k {
                    let mut v = sub.clone();
                    v.insert(pos, k - 1);
                    out.push(v);
                }
            }
            out
        }
        let mut rng = crate::dist::RngStream::new(77);
        use rand::Rng as _;
        for _ in 0..200 {
            let n = rng.random_range(2..=8usize);
            let kp = rng.random_range(1..=5usize);
            let kt = rng.random_range(1..=5usize);
            let pred: Vec<usize> = (0..n).map(|_| rng.random_range(1..=kp)).collect();
            let truth: Vec<usize> = (0..n).map(|_| rng.random_range(1..=kt)).collect();
            let pp = p(&pred);
            let pt = p(&truth);
            let res = error_rate(&pp, &pt).unwrap();
            let k = pp.n_groups().max(pt.n_groups());
            let mut best = 0usize;
            for perm in permutations(k) {
                let matched = pp
                    .labels()
                    .iter()
                    .zip(pt.labels())
                    .filter(|(&lp, &lt)| perm[lp - 1] + 1 == lt)
                    .count();
                best = best.max(matched);
            }
            let expect = 1.0 - best as f64 / n as f64;
            assert_relative_eq!(res.error, expect, epsilon = 1e-12);
        }
    }

    proptest! {
        #[test]
        fn ari_upper_bound_and_formula(labels_a in proptest::collection::vec(1usize..5, 2..40),
                                       labels_b_seed in proptest::collection::vec(1usize..5, 2..40)) {
            let n = labels_a.len().min(labels_b_seed.len());
            let a = p(&labels_a[..n]);
            let b = p(&labels_b_seed[..n]);
            let ari = adjusted_rand(&a, &b).unwrap();
            prop_assert!(ari <= 1.0 + 1e-12);
            prop_assert!((ari - ari_brute(&a, &b)).abs() < 1e-10);
        }

        #[test]
        fn error_rate_label_permutation_invariant(labels in proptest::collection::vec(1usize..4, 4..30)) {
            let truth: Vec<usize> = labels.iter().map(|&l| ((l * 7) % 3) + 1).collect();
            let pred = p(&labels);
            let truth_p = p(&truth);
            let base = error_rate(&pred, &truth_p).unwrap().error;
            let swapped: Vec<usize> = labels.iter().map(|&l| match l { 1 => 3, 3 => 1, x => x }).collect();
            let swapped_p = p(&swapped);
            let perm_err = error_rate(&swapped_p, &truth_p).unwrap().error;
            prop_assert!((base - perm_err).abs() < 1e-12);
        }
    }
}
