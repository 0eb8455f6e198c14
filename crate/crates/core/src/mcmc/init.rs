//! Starting labels: diagonal-covariance EM-GMM (default), k-means, or random.

use nalgebra::DMatrix;
use rand::Rng;

use crate::dist::RngStream;
use crate::error::{Error, Result};

const LN_2PI: f64 = 1.8378770664093453;

/// k-means++ seeding followed by Lloyd iterations. Returns hard labels.
pub fn kmeans(x: &DMatrix<f64>, g: usize, rng: &mut RngStream, max_iter: usize) -> Vec<usize> {
    let n = x.nrows();
    let p = x.ncols();
    if g <= 1 || n == 0 {
        return vec![0; n];
    }
    let row = |i: usize| x.row(i);
    let dist2 = |i: usize, c: &Vec<f64>| -> f64 {
        let mut d = 0.0;
        for j in 0..p {
            let diff = x[(i, j)] - c[j];
            d += diff * diff;
        }
        d
    };

    // k-means++ seeding.
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(g);
    centers.push(row(rng.random_range(0..n)).iter().copied().collect());
    let mut d2: Vec<f64> = (0..n).map(|i| dist2(i, &centers[0])).collect();
    while centers.len() < g {
        let total: f64 = d2.iter().sum();
        let idx = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                acc += w;
                if target < acc {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        let c: Vec<f64> = row(idx).iter().copied().collect();
        for i in 0..n {
            d2[i] = d2[i].min(dist2(i, &c));
        }
        centers.push(c);
    }

    let mut labels = vec![0usize; n];
    for _ in 0..max_iter {
        let mut changed = false;
        for i in 0..n {
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for (k, c) in centers.iter().enumerate() {
                let d = dist2(i, c);
                if d < best_d {
                    best_d = d;
                    best = k;
                }
            }
            if labels[i] != best {
                labels[i] = best;
                changed = true;
            }
        }
        let mut counts = vec![0usize; g];
        let mut sums = vec![vec![0.0f64; p]; g];
        for i in 0..n {
            counts[labels[i]] += 1;
            for j in 0..p {
                sums[labels[i]][j] += x[(i, j)];
            }
        }
        for k in 0..g {
            if counts[k] > 0 {
                for j in 0..p {
                    centers[k][j] = sums[k][j] / counts[k] as f64;
                }
            } else {
                // Re-seed an empty cluster at a random point.
                let idx = rng.random_range(0..n);
                centers[k] = row(idx).iter().copied().collect();
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    labels
}

struct DiagGmm {
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    vars: Vec<Vec<f64>>,
}

impl DiagGmm {
    fn log_component(&self, x: &DMatrix<f64>, i: usize, k: usize) -> f64 {
        let p = x.ncols();
        let mut lp = self.weights[k].ln();
        for j in 0..p {
            let v = self.vars[k][j];
            let r = x[(i, j)] - self.means[k][j];
            lp += -0.5 * (LN_2PI + v.ln() + r * r / v);
        }
        lp
    }
}

/// Fit a diagonal-covariance Gaussian mixture by EM, seeded from k-means.
/// Returns (hard labels, final log-likelihood) or an error when EM degenerates.
pub fn em_gmm_diag(
    x: &DMatrix<f64>,
    g: usize,
    rng: &mut RngStream,
) -> Result<(Vec<usize>, f64)> {
    let n = x.nrows();
    let p = x.ncols();
    let labels0 = kmeans(x, g, rng, 25);

    // Variance floor keeps tiny clusters from collapsing.
    let mut total_var = 0.0;
    for j in 0..p {
        let m = x.column(j).sum() / n as f64;
        total_var += x.column(j).iter().map(|v| (v - m).powi(2)).sum::<f64>() / n as f64;
    }
    let floor = (total_var / p as f64).max(1e-12) * 1e-4;

    let mut model = DiagGmm {
        weights: vec![1.0 / g as f64; g],
        means: vec![vec![0.0; p]; g],
        vars: vec![vec![1.0; p]; g],
    };
    // Moment-match each seed cluster.
    let mut counts = vec![0usize; g];
    for (i, &k) in labels0.iter().enumerate() {
        counts[k] += 1;
        for j in 0..p {
            model.means[k][j] += x[(i, j)];
        }
    }
    for k in 0..g {
        let c = counts[k].max(1) as f64;
        for j in 0..p {
            model.means[k][j] /= c;
        }
    }
    for (i, &k) in labels0.iter().enumerate() {
        for j in 0..p {
            let r = x[(i, j)] - model.means[k][j];
            model.vars[k][j] += r * r;
        }
    }
    for k in 0..g {
        let c = counts[k].max(1) as f64;
        for j in 0..p {
            model.vars[k][j] = (model.vars[k][j] / c).max(floor);
        }
        model.weights[k] = (counts[k] as f64 / n as f64).max(1e-6);
    }

    let mut resp = vec![vec![0.0f64; g]; n];
    let mut last_ll = f64::NEG_INFINITY;
    for _ in 0..200 {
        // E step.
        let mut ll = 0.0;
        for i in 0..n {
            let lps: Vec<f64> = (0..g).map(|k| model.log_component(x, i, k)).collect();
            let lse = crate::mcmc::density::log_sum_exp(&lps);
            if !lse.is_finite() {
                return Err(Error::Mcmc { iter: 0, detail: "gmm initialiser log-likelihood diverged".into() });
            }
            ll += lse;
            for k in 0..g {
                resp[i][k] = (lps[k] - lse).exp();
            }
        }
        // M step.
        for k in 0..g {
            let nk: f64 = (0..n).map(|i| resp[i][k]).sum();
            if nk < 1e-8 {
                return Err(Error::Mcmc { iter: 0, detail: "gmm initialiser emptied a component".into() });
            }
            model.weights[k] = nk / n as f64;
            for j in 0..p {
                let m: f64 = (0..n).map(|i| resp[i][k] * x[(i, j)]).sum::<f64>() / nk;
                model.means[k][j] = m;
            }
            for j in 0..p {
                let v: f64 =
                    (0..n).map(|i| resp[i][k] * (x[(i, j)] - model.means[k][j]).powi(2)).sum::<f64>() / nk;
                model.vars[k][j] = v.max(floor);
            }
        }
        if (ll - last_ll).abs() < 1e-8 * (1.0 + ll.abs()) {
            last_ll = ll;
            break;
        }
        last_ll = ll;
    }

    let labels = (0..n)
        .map(|i| {
            (0..g)
                .max_by(|&a, &b| resp[i][a].partial_cmp(&resp[i][b]).unwrap())
                .unwrap()
        })
        .collect();
    Ok((labels, last_ll))
}

/// BIC of a diagonal GMM fit: 2 logL - theta ln N with theta = 2 G p + G - 1.
fn gmm_bic(loglik: f64, g: usize, n: usize, p: usize) -> f64 {
    let theta = (2 * g * p + g - 1) as f64;
    2.0 * loglik - theta * (n as f64).ln()
}

/// Starting labels for the sampler.
///
/// `fixed_g` runs the initialiser with exactly that many components; otherwise
/// (overfitted/infinite kinds) a diagonal GMM is fitted over a small range of
/// component counts and the BIC-best labelling is used. Returns the labels and
/// a flag recording a fall-back to k-means.
pub fn initial_labels(
    x: &DMatrix<f64>,
    method: super::config::InitMethod,
    fixed_g: Option<usize>,
    max_components: usize,
    rng: &mut RngStream,
) -> (Vec<usize>, bool) {
    use super::config::InitMethod;
    let n = x.nrows();
    match method {
        InitMethod::Random => {
            let g = fixed_g.unwrap_or(max_components).max(1);
            ((0..n).map(|_| rng.random_range(0..g)).collect(), false)
        }
        InitMethod::Kmeans => {
            let g = fixed_g.unwrap_or_else(|| default_search_top(n, max_components));
            (kmeans(x, g, rng, 50), false)
        }
        InitMethod::Gmm => match fixed_g {
            Some(g) => match em_gmm_diag(x, g, rng) {
                Ok((labels, _)) => (labels, false),
                Err(_) => (kmeans(x, g, rng, 50), true),
            },
            None => {
                // Mimic a model-selection initialiser: best BIC over 1..=top.
                let top = default_search_top(n, max_components);
                let mut best: Option<(f64, Vec<usize>)> = None;
                let mut failed = false;
                for g in 1..=top {
                    match em_gmm_diag(x, g, rng) {
                        Ok((labels, ll)) => {
                            let bic = gmm_bic(ll, g, n, x.ncols());
                            if best.as_ref().map_or(true, |(b, _)| bic > *b) {
                                best = Some((bic, labels));
                            }
                        }
                        Err(_) => failed = true,
                    }
                }
                match best {
                    Some((_, labels)) => (labels, failed),
                    None => (kmeans(x, top, rng, 50), true),
                }
            }
        },
    }
}

fn default_search_top(n: usize, max_components: usize) -> usize {
    9usize.min(max_components).min(n / 2).max(1)
}
