//! Posterior summaries of a recorded chain: modal number of clusters, modal
//! factor counts with credible intervals, MAP partition, and identified
//! posterior-mean parameters.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::criteria::{bic_mcmc, bicm, CriteriaInput};
use crate::error::{Error, Result};
use crate::mcmc::{ChainTrace, ModelKind, StoredSample};

use super::procrustes::procrustes_rotation;
use super::relabel::{agreement_permutation, canonical_labels};

/// Which retained sample anchors the relabelling and Procrustes templates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TemplateChoice {
    #[default]
    Earliest,
    HighestLoglik,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SummaryOptions {
    pub template: TemplateChoice,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CriteriaValues {
    pub bicm: Option<f64>,
    pub bic_mcmc: Option<f64>,
}

/// Identified posterior summary of one run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub kind: ModelKind,
    pub modal_g: usize,
    /// Visit counts per number of non-empty clusters.
    pub g_distribution: BTreeMap<u32, usize>,
    /// Modal factor count per identified cluster.
    pub modal_q: Vec<usize>,
    /// Central 95% credible interval per cluster (endpoints rounded outward,
    /// widened to contain the mode).
    pub q_intervals: Vec<(usize, usize)>,
    /// Visit counts of each factor count, per identified cluster (the barchart
    /// approximation of the posterior of q_g).
    pub q_frequencies: Vec<BTreeMap<usize, usize>>,
    /// Per-observation modal label, 1..=modal_g.
    pub map_labels: Vec<u32>,
    /// Per-cluster posterior means (rows of length p).
    pub posterior_mean_means: Vec<Vec<f64>>,
    pub posterior_mean_uniquenesses: Vec<Vec<f64>>,
    /// Per-cluster p x modal_q posterior-mean loadings (row-major), from the
    /// Procrustes-aligned subset of samples with at least modal_q factors.
    pub posterior_mean_loadings: Vec<Vec<Vec<f64>>>,
    /// Size of the aligned subset behind each loadings mean.
    pub loadings_sample_counts: Vec<usize>,
    pub criteria: CriteriaValues,
    /// Posterior means of the process parameters over all stored samples.
    pub alpha_mean: f64,
    pub discount_mean: f64,
    /// Proportion of stored discount samples exactly zero.
    pub kappa_hat: Option<f64>,
    pub retained_samples: usize,
    /// Retained samples that could not be relabelled onto the template.
    pub excluded_samples: usize,
}

/// Empirical quantile with linear interpolation on the sorted sample.
fn quantile(sorted: &[f64], prob: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = prob * (n as f64 - 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn mode_smallest(values: &[usize]) -> usize {
    let mut freq: BTreeMap<usize, usize> = BTreeMap::new();
    for &v in values {
        *freq.entry(v).or_insert(0) += 1;
    }
    let best = freq.values().copied().max().unwrap_or(0);
    freq.into_iter().find(|&(_, c)| c == best).map(|(v, _)| v).unwrap_or(0)
}

struct Aligned<'a> {
    sample: &'a StoredSample,
    /// Template-space labels 1..=k.
    labels: Vec<u32>,
    /// Original cluster index per template-space cluster.
    orig: Vec<usize>,
}

/// Summarise a trace: restrict to the modal-G samples, relabel them onto a
/// template, and report identified posterior quantities.
pub fn summarize(trace: &ChainTrace, options: &SummaryOptions) -> Result<PosteriorSummary> {
    if trace.samples.is_empty() {
        return Err(Error::Trace("cannot summarise an empty trace".into()));
    }
    let n = trace.meta.n;
    let p = trace.meta.p;

    let mut g_distribution: BTreeMap<u32, usize> = BTreeMap::new();
    for s in &trace.samples {
        *g_distribution.entry(s.g0).or_insert(0) += 1;
    }
    // Modal G; ties break toward the smaller count.
    let best = g_distribution.values().copied().max().unwrap();
    let modal_g = g_distribution
        .iter()
        .find(|&(_, &c)| c == best)
        .map(|(&g, _)| g as usize)
        .unwrap();

    let retained: Vec<&StoredSample> =
        trace.samples.iter().filter(|s| s.g0 as usize == modal_g).collect();
    let template_pos = match options.template {
        TemplateChoice::Earliest => 0usize,
        TemplateChoice::HighestLoglik => retained
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.loglik.partial_cmp(&b.1.loglik).unwrap())
            .map(|(i, _)| i)
            .unwrap_or(0),
    };
    let (template_labels, _) = canonical_labels(retained[template_pos]);

    // Align every retained sample onto the template.
    let mut aligned: Vec<Aligned> = Vec::with_capacity(retained.len());
    let mut excluded = 0usize;
    for s in &retained {
        let (canon, nonempty) = canonical_labels(s);
        if nonempty.len() != modal_g {
            excluded += 1;
            continue;
        }
        let sigma = agreement_permutation(&canon, &template_labels, modal_g)?;
        let labels: Vec<u32> =
            canon.iter().map(|&c| sigma[(c - 1) as usize] as u32 + 1).collect();
        let mut orig = vec![0usize; modal_g];
        for (canon_idx, &o) in nonempty.iter().enumerate() {
            orig[sigma[canon_idx]] = o;
        }
        aligned.push(Aligned { sample: s, labels, orig });
    }
    if aligned.is_empty() {
        return Err(Error::Trace("no retained sample could be relabelled".into()));
    }

    // Modal q, credible intervals and visit counts per identified cluster.
    let mut modal_q = Vec::with_capacity(modal_g);
    let mut q_intervals = Vec::with_capacity(modal_g);
    let mut q_frequencies = Vec::with_capacity(modal_g);
    for c in 0..modal_g {
        let qs: Vec<usize> = aligned.iter().map(|a| a.sample.q[a.orig[c]] as usize).collect();
        let mode = mode_smallest(&qs);
        let mut freq: BTreeMap<usize, usize> = BTreeMap::new();
        for &q in &qs {
            *freq.entry(q).or_insert(0) += 1;
        }
        q_frequencies.push(freq);
        let mut sorted: Vec<f64> = qs.iter().map(|&q| q as f64).collect();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let lo = quantile(&sorted, 0.025).floor() as usize;
        let hi = quantile(&sorted, 0.975).ceil() as usize;
        q_intervals.push((lo.min(mode), hi.max(mode)));
        modal_q.push(mode);
    }

    // MAP partition: per-observation modal template-space label.
    let mut map_labels = Vec::with_capacity(n);
    for i in 0..n {
        let mut votes = vec![0usize; modal_g];
        for a in &aligned {
            votes[(a.labels[i] - 1) as usize] += 1;
        }
        let best = votes.iter().copied().max().unwrap();
        let label = votes.iter().position(|&v| v == best).unwrap() as u32 + 1;
        map_labels.push(label);
    }

    // Posterior means of the identified means and uniquenesses.
    let with_params: Vec<&Aligned> =
        aligned.iter().filter(|a| a.sample.params.is_some()).collect();
    let mut posterior_mean_means = vec![vec![0.0f64; p]; modal_g];
    let mut posterior_mean_uniq = vec![vec![0.0f64; p]; modal_g];
    if !with_params.is_empty() {
        for a in &with_params {
            let params = a.sample.params.as_ref().unwrap();
            for c in 0..modal_g {
                let o = a.orig[c];
                for j in 0..p {
                    posterior_mean_means[c][j] += params.means[o][j];
                    posterior_mean_uniq[c][j] += params.uniquenesses[o][j];
                }
            }
        }
        let m = with_params.len() as f64;
        for c in 0..modal_g {
            for j in 0..p {
                posterior_mean_means[c][j] /= m;
                posterior_mean_uniq[c][j] /= m;
            }
        }
    }

    // Identified loadings: per cluster, the subset with at least modal_q
    // factors, truncated, Procrustes-aligned to the earliest member, then
    // sign-fixed and averaged.
    let mut posterior_mean_loadings = Vec::with_capacity(modal_g);
    let mut loadings_sample_counts = Vec::with_capacity(modal_g);
    for c in 0..modal_g {
        let m = modal_q[c];
        if m == 0 || with_params.is_empty() {
            posterior_mean_loadings.push(vec![vec![0.0; m]; p]);
            loadings_sample_counts.push(0);
            continue;
        }
        let subset: Vec<&Aligned> = with_params
            .iter()
            .copied()
            .filter(|a| a.sample.q[a.orig[c]] as usize >= m)
            .collect();
        if subset.is_empty() {
            posterior_mean_loadings.push(vec![vec![0.0; m]; p]);
            loadings_sample_counts.push(0);
            continue;
        }
        let template = subset[0].sample.params.as_ref().unwrap().loadings[subset[0].orig[c]]
            .columns(0, m)
            .into_owned();
        let mut acc = DMatrix::<f64>::zeros(p, m);
        for a in &subset {
            let lam = a.sample.params.as_ref().unwrap().loadings[a.orig[c]]
                .columns(0, m)
                .into_owned();
            let rot = procrustes_rotation(&lam, &template)?;
            let mut rotated = lam * rot.rotation;
            sign_fix_columns(&mut rotated);
            acc += rotated;
        }
        acc /= subset.len() as f64;
        sign_fix_columns(&mut acc);
        posterior_mean_loadings
            .push((0..p).map(|j| (0..m).map(|k| acc[(j, k)]).collect()).collect());
        loadings_sample_counts.push(subset.len());
    }

    // Criteria over the full stored log-likelihood trace.
    let loglik = trace.loglik_samples();
    let q_for_criteria = trace.meta.q_fixed;
    let input = CriteriaInput {
        loglik,
        n_obs: n,
        p,
        n_clusters: trace.meta.g_init,
        q: q_for_criteria,
    };
    let bicm_v = bicm(&input).ok();
    let bic_mcmc_v = match trace.meta.kind {
        ModelKind::Fa | ModelKind::Mfa => bic_mcmc(&input).ok(),
        _ => None,
    };

    let n_samples = trace.samples.len() as f64;
    let alpha_mean = trace.samples.iter().map(|s| s.alpha).sum::<f64>() / n_samples;
    let discount_mean = trace.samples.iter().map(|s| s.discount).sum::<f64>() / n_samples;
    let kappa_hat = if trace.meta.kind.infinite() { trace.kappa_hat() } else { None };

    Ok(PosteriorSummary {
        kind: trace.meta.kind,
        modal_g,
        g_distribution,
        modal_q,
        q_intervals,
        q_frequencies,
        map_labels,
        posterior_mean_means,
        posterior_mean_uniquenesses: posterior_mean_uniq,
        posterior_mean_loadings,
        loadings_sample_counts,
        criteria: CriteriaValues { bicm: bicm_v, bic_mcmc: bic_mcmc_v },
        alpha_mean,
        discount_mean,
        kappa_hat,
        retained_samples: aligned.len(),
        excluded_samples: excluded,
    })
}

/// Flip columns so the largest-magnitude entry of each is positive.
fn sign_fix_columns(m: &mut DMatrix<f64>) {
    for k in 0..m.ncols() {
        let mut best = 0usize;
        for j in 0..m.nrows() {
            if m[(j, k)].abs() > m[(best, k)].abs() {
                best = j;
            }
        }
        if m[(best, k)] < 0.0 {
            m.column_mut(k).neg_mut();
        }
    }
}

/// Rotate the stored loadings (and the members' score rows) of every sample
/// toward per-cluster templates. Samples with fewer columns than the template
/// are skipped for that cluster; the count of rank-deficient rotations is
/// returned.
pub fn procrustes_align_trace(
    trace: &mut ChainTrace,
    templates: &[DMatrix<f64>],
) -> Result<usize> {
    let mut flagged = 0usize;
    for sample in &mut trace.samples {
        let params = match &mut sample.params {
            Some(p) => p,
            None => continue,
        };
        for (g, template) in templates.iter().enumerate() {
            if g >= params.loadings.len() {
                continue;
            }
            let m = template.ncols();
            if m == 0 || params.loadings[g].ncols() < m {
                continue;
            }
            let lam = params.loadings[g].columns(0, m).into_owned();
            let rot = procrustes_rotation(&lam, template)?;
            if rot.rank_deficient {
                flagged += 1;
            }
            let rotated = &lam * &rot.rotation;
            for k in 0..m {
                for j in 0..params.loadings[g].nrows() {
                    params.loadings[g][(j, k)] = rotated[(j, k)];
                }
            }
            // The same rotation carries to the member rows of the scores.
            for (i, &label) in sample.labels.iter().enumerate() {
                if (label - 1) as usize == g && params.scores.ncols() >= m {
                    let row = params.scores.row(i).columns(0, m) * &rot.rotation;
                    for k in 0..m {
                        params.scores[(i, k)] = row[k];
                    }
                }
            }
        }
    }
    Ok(flagged)
}
