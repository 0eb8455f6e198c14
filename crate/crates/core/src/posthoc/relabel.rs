//! Post-hoc label-switching correction: map every stored clustering onto a
//! common template with the cost-minimising assignment.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::mcmc::{ChainTrace, StoredSample};

use super::assignment::solve_assignment;

/// Canonicalise a stored sample: non-empty clusters are renumbered 1..=G0 in
/// ascending order of their original index. Returns the canonical labels and
/// the original index of each canonical cluster.
pub fn canonical_labels(sample: &StoredSample) -> (Vec<u32>, Vec<usize>) {
    let nonempty = sample.nonempty_clusters();
    let mut map = vec![0u32; sample.q.len()];
    for (canon, &orig) in nonempty.iter().enumerate() {
        map[orig] = canon as u32 + 1;
    }
    let labels = sample.labels.iter().map(|&l| map[(l - 1) as usize]).collect();
    (labels, nonempty)
}

/// Permutation sigma (0-based) maximising label agreement: canonical cluster c
/// of the sample is mapped to template cluster sigma[c]. Costs are negative
/// agreement counts.
pub fn agreement_permutation(canon: &[u32], template: &[u32], k: usize) -> Result<Vec<usize>> {
    if canon.len() != template.len() {
        return Err(Error::Shape("label vectors differ in length".into()));
    }
    let mut agree = vec![vec![0f64; k]; k];
    for (&a, &b) in canon.iter().zip(template.iter()) {
        agree[(a - 1) as usize][(b - 1) as usize] += 1.0;
    }
    let cost = DMatrix::from_fn(k, k, |a, b| -agree[a][b]);
    solve_assignment(&cost)
}

/// Relabel every stored sample whose non-empty cluster count matches the
/// template's onto the template's label space; samples with a different count
/// are left untouched and counted as excluded. The same permutation is applied
/// to all cluster-indexed quantities.
pub fn relabel_trace(trace: &ChainTrace, template: &[u32]) -> Result<(ChainTrace, usize)> {
    if template.len() != trace.meta.n {
        return Err(Error::Shape(format!(
            "template has {} labels for {} observations",
            template.len(),
            trace.meta.n
        )));
    }
    let k = template.iter().max().map(|&m| m as usize).unwrap_or(0);
    if k == 0 {
        return Err(Error::Validation("template must use labels 1..k".into()));
    }
    let mut out = trace.clone();
    let mut excluded = 0usize;
    for sample in &mut out.samples {
        match relabel_sample(sample, template, k)? {
            true => {}
            false => excluded += 1,
        }
    }
    Ok((out, excluded))
}

/// Relabel one sample in place; returns false when the sample's non-empty
/// count differs from the template's and it is left unchanged.
pub fn relabel_sample(sample: &mut StoredSample, template: &[u32], k: usize) -> Result<bool> {
    let (canon, nonempty) = canonical_labels(sample);
    if nonempty.len() != k {
        return Ok(false);
    }
    let sigma = agreement_permutation(&canon, template, k)?;

    // Full permutation over instantiated clusters: matched non-empty clusters
    // take template positions 0..k, empty clusters follow in original order.
    let g_inst = sample.q.len();
    let mut order = vec![usize::MAX; g_inst];
    for (canon_idx, &orig) in nonempty.iter().enumerate() {
        order[sigma[canon_idx]] = orig;
    }
    let mut next = k;
    for g in 0..g_inst {
        if !nonempty.contains(&g) {
            order[next] = g;
            next += 1;
        }
    }
    let mut new_pos = vec![0usize; g_inst];
    for (new, &old) in order.iter().enumerate() {
        new_pos[old] = new;
    }

    sample.labels = sample.labels.iter().map(|&l| new_pos[(l - 1) as usize] as u32 + 1).collect();
    sample.q = order.iter().map(|&old| sample.q[old]).collect();
    sample.weights = order.iter().map(|&old| sample.weights[old]).collect();
    if let Some(params) = &mut sample.params {
        params.means = order.iter().map(|&old| params.means[old].clone()).collect();
        params.uniquenesses = order.iter().map(|&old| params.uniquenesses[old].clone()).collect();
        params.loadings = order.iter().map(|&old| params.loadings[old].clone()).collect();
    }
    Ok(true)
}
