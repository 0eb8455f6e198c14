//! Acceptance suite. One test per criterion; each prints a PASS line with its
//! measured quantities (visible with `--nocapture`) and fails loudly otherwise.

use std::f64::consts::E;
use std::time::Instant;

use facmix::criteria::{bic_mcmc_raw, bicm_raw, effective_params};
use facmix::data::{preprocess, simulate_mfa, Dataset, PreprocessSpec, ScaleMode, SimSpec};
use facmix::dist::{sample_gamma, sample_std_normal, RngStream};
use facmix::mcmc::{InitMethod, McmcControl, ModelConfig, ModelKind, Sampler};
use facmix::metrics::{adjusted_rand, error_rate, Partition};
use facmix::posthoc::{procrustes_rotation, solve_assignment, summarize};
use facmix::priors::MgpHyper;
use nalgebra::{DMatrix, DVector};
use rand::Rng as _;

fn control(n_iter: usize, burnin: usize, thin: usize, seed: u64) -> McmcControl {
    McmcControl {
        n_iter,
        burnin,
        thin,
        seed,
        store_loadings: true,
        label_switch_moves: true,
        init: InitMethod::Gmm,
    }
}

/// Criterion 1: with G = 1, q = 0 and a known mean, the sampled uniquenesses
/// match the analytic inverse-gamma conditional moments within 3 Monte-Carlo
/// sigma over 5,000 draws (N = 100, p = 3).
#[test]
fn criterion_1_conjugate_uniqueness_oracle() {
    let start = Instant::now();
    let n = 100usize;
    let p = 3usize;
    let mut rng = RngStream::new(2024);
    let psi_true = [1.0f64, 0.5, 2.0];
    let x = DMatrix::from_fn(n, p, |_, j| psi_true[j].sqrt() * sample_std_normal(&mut rng));
    let data = Dataset::from_matrix(x.clone()).unwrap();
    let mut cfg = ModelConfig::new(ModelKind::Fa, control(100, 50, 1, 1));
    cfg.n_factors = Some(0);
    let resolved = cfg.resolve(&data).unwrap();
    let shape0 = resolved.uniq.shape;
    let rates: Vec<f64> = (0..p).map(|j| resolved.uniq.rate(j)).collect();
    let mut sampler = Sampler::new(&data, resolved).unwrap();
    sampler.state.clusters[0].mean = DVector::zeros(p);

    let draws = 5_000usize;
    let mut sums = vec![0.0f64; p];
    let mut sq = vec![0.0f64; p];
    for _ in 0..draws {
        sampler.update_uniquenesses().unwrap();
        for j in 0..p {
            let v = sampler.state.clusters[0].uniquenesses[j];
            sums[j] += v;
            sq[j] += v * v;
        }
    }
    for j in 0..p {
        let a = shape0 + n as f64 / 2.0;
        let b = rates[j] + 0.5 * x.column(j).iter().map(|v| v * v).sum::<f64>();
        // Raw and central inverse-gamma moments.
        let m1 = b / (a - 1.0);
        let m2 = b * b / ((a - 1.0) * (a - 2.0));
        let m3 = b.powi(3) / ((a - 1.0) * (a - 2.0) * (a - 3.0));
        let m4 = b.powi(4) / ((a - 1.0) * (a - 2.0) * (a - 3.0) * (a - 4.0));
        let var = m2 - m1 * m1;
        let mu4 = m4 - 4.0 * m3 * m1 + 6.0 * m2 * m1 * m1 - 3.0 * m1.powi(4);
        let mean_hat = sums[j] / draws as f64;
        let var_hat = sq[j] / draws as f64 - mean_hat * mean_hat;
        let se_mean = (var / draws as f64).sqrt();
        let nf = draws as f64;
        let se_var = ((mu4 - var * var * (nf - 3.0) / (nf - 1.0)) / nf).sqrt();
        assert!(
            (mean_hat - m1).abs() < 3.0 * se_mean,
            "psi_{j} mean {mean_hat} vs {m1} (3se {:.2e})",
            3.0 * se_mean
        );
        assert!(
            (var_hat - var).abs() < 3.0 * se_var,
            "psi_{j} var {var_hat} vs {var} (3se {:.2e})",
            3.0 * se_var
        );
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() < 30, "runtime {elapsed:?} exceeded 30 s");
    println!("criterion 1 (conjugate uniqueness oracle): PASS in {elapsed:?}");
}

/// Criterion 2: Geweke successive-conditional check on a two-cluster,
/// one-factor model (N = 10, p = 3): chain-marginal moments of psi, mu and pi
/// must match the prior within 3 batch-means sigma over 20,000 sweeps.
#[test]
fn criterion_2_geweke_successive_conditional() {
    let start = Instant::now();
    let (seed_data, _) = simulate_mfa(&SimSpec::balanced(10, 3, 2, 1, 1.0, 55)).unwrap();
    let mut cfg = ModelConfig::new(ModelKind::Mfa, control(100, 50, 1, 4242));
    cfg.n_clusters = Some(2);
    cfg.n_factors = Some(1);
    cfg.uniqueness_shape = 3.5;
    let resolved = cfg.resolve(&seed_data).unwrap();
    let prior_mu_mean = resolved.mean_prior.mean.clone();
    let prior_mu_var = seed_data.sample_cov().diagonal();
    let shape0 = resolved.uniq.shape;
    let rates: Vec<f64> = (0..3).map(|j| resolved.uniq.rate(j)).collect();
    let mut sampler = Sampler::new(&seed_data, resolved).unwrap();

    let sweeps = 20_000usize;
    let burn = 2_000usize;
    let kept = sweeps - burn;
    // Track psi (means), inverse-psi, mu (means and squares), pi_1.
    let mut psi_chain = vec![Vec::with_capacity(kept); 6];
    let mut inv_psi_chain = vec![Vec::with_capacity(kept); 6];
    let mut mu_chain = vec![Vec::with_capacity(kept); 6];
    let mut pi_chain = Vec::with_capacity(kept);
    for t in 0..sweeps {
        sampler.simulate_from_model().unwrap();
        sampler.sweep().unwrap();
        if t < burn {
            continue;
        }
        for g in 0..2 {
            for j in 0..3 {
                let idx = g * 3 + j;
                let psi = sampler.state.clusters[g].uniquenesses[j];
                psi_chain[idx].push(psi);
                inv_psi_chain[idx].push(1.0 / psi);
                mu_chain[idx].push(sampler.state.clusters[g].mean[j]);
            }
        }
        pi_chain.push(sampler.state.weights[0]);
    }

    // Batch-means standard error with 100 batches.
    let se = |xs: &[f64]| -> (f64, f64) {
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let b = 100usize;
        let per = xs.len() / b;
        let bm: Vec<f64> =
            (0..b).map(|k| xs[k * per..(k + 1) * per].iter().sum::<f64>() / per as f64).collect();
        let bvar = bm.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (b as f64 - 1.0);
        (mean, (bvar / b as f64).sqrt())
    };

    let mut checks = 0usize;
    for idx in 0..6 {
        let j = idx % 3;
        // E[psi] = beta / (alpha - 1).
        let (m, s) = se(&psi_chain[idx]);
        let target = rates[j] / (shape0 - 1.0);
        assert!((m - target).abs() < 3.0 * s, "psi[{idx}] mean {m} vs {target} (se {s:.4})");
        // E[1/psi] = alpha / beta.
        let (m, s) = se(&inv_psi_chain[idx]);
        let target = shape0 / rates[j];
        assert!((m - target).abs() < 3.0 * s, "1/psi[{idx}] mean {m} vs {target} (se {s:.4})");
        // E[mu_j] and Var[mu_j] from the data-driven prior.
        let (m, s) = se(&mu_chain[idx]);
        assert!(
            (m - prior_mu_mean[j]).abs() < 3.0 * s,
            "mu[{idx}] mean {m} vs {} (se {s:.4})",
            prior_mu_mean[j]
        );
        let sq: Vec<f64> = mu_chain[idx].iter().map(|v| (v - prior_mu_mean[j]).powi(2)).collect();
        let (m, s) = se(&sq);
        assert!(
            (m - prior_mu_var[j]).abs() < 3.0 * s,
            "mu[{idx}] var {m} vs {} (se {s:.4})",
            prior_mu_var[j]
        );
        checks += 4;
    }
    // pi_1 ~ Beta(1, 1): mean 1/2, variance 1/12.
    let (m, s) = se(&pi_chain);
    assert!((m - 0.5).abs() < 3.0 * s, "pi mean {m} (se {s:.4})");
    let sq: Vec<f64> = pi_chain.iter().map(|v| (v - 0.5) * (v - 0.5)).collect();
    let (m, s) = se(&sq);
    assert!((m - 1.0 / 12.0).abs() < 3.0 * s, "pi var {m} (se {s:.4})");
    checks += 2;

    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() < 120, "runtime {elapsed:?} exceeded 2 min");
    println!("criterion 2 (geweke successive-conditional, {checks} moment checks): PASS in {elapsed:?}");
}

/// Criterion 3: assignment and ARI oracles — Hungarian optimum equals brute
/// force on 200 random 6x6 costs; the ARI closed form equals all-pairs
/// counting on 200 random partition pairs of up to 12 items.
#[test]
fn criterion_3_assignment_and_ari_oracles() {
    let start = Instant::now();
    let mut rng = RngStream::new(333);

    fn brute_force(cost: &DMatrix<f64>) -> f64 {
        fn go(cost: &DMatrix<f64>, row: usize, used: &mut Vec<bool>) -> f64 {
            if row == cost.nrows() {
                return 0.0;
            }
            let mut best = f64::INFINITY;
            for j in 0..cost.ncols() {
                if !used[j] {
                    used[j] = true;
                    best = best.min(cost[(row, j)] + go(cost, row + 1, used));
                    used[j] = false;
                }
            }
            best
        }
        go(cost, 0, &mut vec![false; cost.ncols()])
    }

    for _ in 0..200 {
        let cost = DMatrix::from_fn(6, 6, |_, _| rng.random_range(-5.0..5.0));
        let perm = solve_assignment(&cost).unwrap();
        let total: f64 = (0..6).map(|i| cost[(i, perm[i])]).sum();
        let best = brute_force(&cost);
        assert!((total - best).abs() < 1e-9, "hungarian {total} vs brute force {best}");
    }

    for _ in 0..200 {
        let n = rng.random_range(2..=12usize);
        let a: Vec<usize> = (0..n).map(|_| rng.random_range(1..=4usize)).collect();
        let b: Vec<usize> = (0..n).map(|_| rng.random_range(1..=4usize)).collect();
        let pa = Partition::new(&a).unwrap();
        let pb = Partition::new(&b).unwrap();
        let ari = adjusted_rand(&pa, &pb).unwrap();
        // All-pairs counting oracle.
        let (mut n11, mut n10, mut n01, mut n00) = (0f64, 0f64, 0f64, 0f64);
        for i in 0..n {
            for k in (i + 1)..n {
                match (a[i] == a[k], b[i] == b[k]) {
                    (true, true) => n11 += 1.0,
                    (true, false) => n10 += 1.0,
                    (false, true) => n01 += 1.0,
                    (false, false) => n00 += 1.0,
                }
            }
        }
        let total = n11 + n10 + n01 + n00;
        let expected = (n11 + n10) * (n11 + n01) / total;
        let max_index = 0.5 * ((n11 + n10) + (n11 + n01));
        let oracle = if (max_index - expected).abs() < 1e-300 {
            if a.iter().zip(&b).all(|(x, y)| {
                (0..n).all(|i| (a[i] == *x) == (b[i] == *y)) || true
            }) && pa.labels() == pb.labels()
            {
                1.0
            } else {
                0.0
            }
        } else {
            (n11 - expected) / (max_index - expected)
        };
        assert!((ari - oracle).abs() < 1e-12, "ari {ari} vs all-pairs {oracle}");
    }

    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() < 5, "runtime {elapsed:?} exceeded 5 s");
    println!("criterion 3 (assignment + ARI oracles): PASS in {elapsed:?}");
}

/// Criterion 4: Procrustes invariants over 100 random p = 20, q = 4 cases.
#[test]
fn criterion_4_procrustes_invariants() {
    let start = Instant::now();
    let mut rng = RngStream::new(444);
    let eye = DMatrix::<f64>::identity(4, 4);
    for _ in 0..100 {
        let template = DMatrix::from_fn(20, 4, |_, _| sample_std_normal(&mut rng));
        // Random orthogonal matrix via QR.
        let q_rot = DMatrix::from_fn(4, 4, |_, _| sample_std_normal(&mut rng)).qr().q();
        let sample = &template * &q_rot;
        let pr = procrustes_rotation(&sample, &template).unwrap();
        let orth = (pr.rotation.transpose() * &pr.rotation - &eye).amax();
        assert!(orth < 1e-10, "orthogonality defect {orth}");
        let residual = (&sample * &pr.rotation - &template).norm();
        assert!(residual < 1e-8, "residual {residual}");
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() < 5, "runtime {elapsed:?} exceeded 5 s");
    println!("criterion 4 (procrustes invariants): PASS in {elapsed:?}");
}

/// Criterion 5: over a 2,000-sweep IMIFA run on toy data, every post-sweep
/// state satisfies the slice, ordering, mass and shrinkage-product invariants.
#[test]
fn criterion_5_slice_and_stick_invariants() {
    let start = Instant::now();
    let (raw, _) = simulate_mfa(&SimSpec::balanced(60, 5, 2, 1, 2.0, 321)).unwrap();
    let data = preprocess(&raw, PreprocessSpec { center: true, scale: ScaleMode::Unit }).unwrap();
    let cfg = ModelConfig::new(ModelKind::Imifa, control(2_000, 500, 1, 99));
    let resolved = cfg.resolve(&data).unwrap();
    let mut sampler = Sampler::new(&data, resolved).unwrap();
    let mut violations = 0usize;
    for _ in 0..2_000 {
        sampler.sweep().unwrap();
        let st = &sampler.state;
        // u_i in (0, xi_{z_i}).
        for i in 0..60 {
            let xi = sampler.cfg().xi(st.labels[i]);
            if !(st.slice_u[i] > 0.0 && st.slice_u[i] < xi) {
                violations += 1;
            }
        }
        // Weights non-increasing and summing below one.
        for w in st.weights.windows(2) {
            if w[0] < w[1] - 1e-12 {
                violations += 1;
            }
        }
        if st.weights.iter().sum::<f64>() > 1.0 + 1e-12 {
            violations += 1;
        }
        // Column precisions are exact cumulative products.
        for cl in &st.clusters {
            let mut acc = 1.0f64;
            for k in 0..cl.q() {
                acc *= cl.shrink_mult[k];
                if cl.col_prec[k].to_bits() != acc.to_bits() {
                    violations += 1;
                }
            }
            if cl.loadings.ncols() != cl.q() {
                violations += 1;
            }
        }
        // Occupancy accounting and score-width consistency.
        if st.counts.iter().sum::<usize>() != 60 {
            violations += 1;
        }
        let qmax = st.clusters.iter().map(|c| c.q()).max().unwrap_or(0);
        if st.scores.ncols() != qmax {
            violations += 1;
        }
        // Rows zero-padded past their cluster's truncation.
        for i in 0..60 {
            let q_i = st.clusters[st.labels[i]].q();
            for k in q_i..st.scores.ncols() {
                if st.scores[(i, k)] != 0.0 {
                    violations += 1;
                }
            }
        }
    }
    assert_eq!(violations, 0, "{violations} invariant violations");
    let elapsed = start.elapsed();
    println!("criterion 5 (slice/stick invariants, 2000 sweeps, zero violations): PASS in {elapsed:?}");
}

/// Criterion 6: under the default shrinkage prior, column 5 loadings are
/// stochastically smaller in magnitude than column 1 (rank-sum test, p < 0.01).
#[test]
fn criterion_6_mgp_shrinkage_rank_sum() {
    let start = Instant::now();
    let h = MgpHyper::defaults(20);
    let mut rng = RngStream::new(666);
    let draws = 100_000usize;
    let mut col1 = Vec::with_capacity(draws);
    let mut col5 = Vec::with_capacity(draws);
    for _ in 0..draws {
        let mut tau = sample_gamma(&mut rng, h.alpha1, h.beta1).unwrap();
        let phi1 = sample_gamma(&mut rng, h.nu + 1.0, h.nu).unwrap();
        col1.push((sample_std_normal(&mut rng) / (phi1 * tau).sqrt()).abs());
        for _ in 1..5 {
            tau *= sample_gamma(&mut rng, h.alpha2, h.beta2).unwrap();
        }
        let phi5 = sample_gamma(&mut rng, h.nu + 1.0, h.nu).unwrap();
        col5.push((sample_std_normal(&mut rng) / (phi5 * tau).sqrt()).abs());
    }
    let mean1 = col1.iter().sum::<f64>() / draws as f64;
    let mean5 = col5.iter().sum::<f64>() / draws as f64;
    assert!(mean5 < mean1, "column 5 mean {mean5} not below column 1 mean {mean1}");

    // Mann-Whitney rank sum with normal approximation, one-sided.
    let mut pooled: Vec<(f64, bool)> = col1
        .iter()
        .map(|&v| (v, true))
        .chain(col5.iter().map(|&v| (v, false)))
        .collect();
    pooled.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let mut rank_sum_5 = 0.0f64;
    for (rank0, &(_, is_col1)) in pooled.iter().enumerate() {
        if !is_col1 {
            rank_sum_5 += (rank0 + 1) as f64;
        }
    }
    let n1 = draws as f64;
    let u5 = rank_sum_5 - n1 * (n1 + 1.0) / 2.0;
    let mean_u = n1 * n1 / 2.0;
    let sd_u = (n1 * n1 * (2.0 * n1 + 1.0) / 12.0).sqrt();
    let z = (u5 - mean_u) / sd_u;
    let p_value = 0.5 * libm::erfc(-z / std::f64::consts::SQRT_2);
    assert!(p_value < 0.01, "rank-sum one-sided p = {p_value} (z = {z})");
    let elapsed = start.elapsed();
    println!("criterion 6 (shrinkage rank-sum, z = {z:.1}): PASS in {elapsed:?}");
}

/// Criterion 7: Gumbel-max frequencies match the softmax target within three
/// binomial sigma for 20 random weight vectors.
#[test]
fn criterion_7_gumbel_max_frequencies() {
    let start = Instant::now();
    let mut rng = RngStream::new(777);
    let draws = 100_000usize;
    for _case in 0..20 {
        let k = rng.random_range(2..=6usize);
        let logw: Vec<f64> = (0..k).map(|_| 2.0 * sample_std_normal(&mut rng)).collect();
        let max = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = logw.iter().map(|w| (w - max).exp()).sum();
        let probs: Vec<f64> = logw.iter().map(|w| (w - max).exp() / z).collect();
        let mut counts = vec![0usize; k];
        for _ in 0..draws {
            counts[facmix::dist::gumbel_max_categorical(&mut rng, &logw).unwrap()] += 1;
        }
        for j in 0..k {
            let freq = counts[j] as f64 / draws as f64;
            let sigma = (probs[j] * (1.0 - probs[j]) / draws as f64).sqrt();
            assert!(
                (freq - probs[j]).abs() <= 3.0 * sigma.max(1e-9),
                "category {j}: freq {freq} vs {p} (3sigma {s:.2e})",
                p = probs[j],
                s = 3.0 * sigma
            );
        }
    }
    let elapsed = start.elapsed();
    println!("criterion 7 (gumbel-max frequencies): PASS in {elapsed:?}");
}

/// Criterion 8: reduced simulation design (N = 150, p = 20, G = 3, q = 2,
/// separation 2.5; 8,000 iterations, 2,000 burn-in, thin 2): at least four of
/// five replicates recover modal G = 3 with every modal q in [1, 3] and
/// misclassification error at most 5%, inside ten minutes.
#[test]
fn criterion_8_reduced_simulation_reproduction() {
    let start = Instant::now();
    let mut passes = 0usize;
    for rep in 1..=5u64 {
        let spec = SimSpec::balanced(150, 20, 3, 2, 2.5, 1000 + rep);
        let (raw, truth) = simulate_mfa(&spec).unwrap();
        let data =
            preprocess(&raw, PreprocessSpec { center: true, scale: ScaleMode::Unit }).unwrap();
        let cfg = ModelConfig::new(ModelKind::Imifa, control(8_000, 2_000, 2, 77 + rep));
        let trace = facmix::mcmc::fit(&data, &cfg).unwrap();
        let summary = summarize(&trace, &Default::default()).unwrap();
        let err = error_rate(
            &Partition::new(&summary.map_labels.iter().map(|&l| l as usize).collect::<Vec<_>>())
                .unwrap(),
            &Partition::new(&truth.z).unwrap(),
        )
        .unwrap()
        .error;
        let g_ok = summary.modal_g == 3;
        let q_ok = summary.modal_q.iter().all(|&q| (1..=3).contains(&q));
        let err_ok = err <= 0.05;
        println!(
            "  replicate {rep}: modal G = {} (want 3), modal q = {:?} (want within [1,3]), error = {:.3}",
            summary.modal_g, summary.modal_q, err
        );
        if g_ok && q_ok && err_ok {
            passes += 1;
        }
    }
    let elapsed = start.elapsed();
    assert!(passes >= 4, "only {passes}/5 replicates passed");
    assert!(elapsed.as_secs() < 600, "runtime {elapsed:?} exceeded 10 min");
    println!("criterion 8 (reduced simulation, {passes}/5 replicates): PASS in {elapsed:?}");
}

/// Criterion 9: the criteria hand computations reproduce exactly.
#[test]
fn criterion_9_criteria_hand_values() {
    assert_eq!(effective_params(1, 0, 2), 4);
    assert_eq!(effective_params(2, 5, 8), 93);
    let v = bic_mcmc_raw(-8.0, 4.0, E);
    assert!((v - (-20.0)).abs() < 1e-12, "bic-mcmc {v}");
    let v = bicm_raw(2.0, 2.0, E);
    assert!(v.abs() < 1e-12, "bicm {v}");
    // Constant log-likelihood reduces bicm to twice the constant.
    let v = bicm_raw(-5.0, 0.0, 10.0);
    assert!((v + 10.0).abs() < 1e-12);
    println!("criterion 9 (criteria hand values): PASS");
}

/// Criterion 10 is a set of extended-run, non-gating targets on the olive-oil
/// and metabolomics datasets at paper-scale chain lengths. Those datasets are
/// not distributed with the repository; the runs are wired up as ignored tests
/// in `tests/extended.rs` and documented in the README.
#[test]
fn criterion_10_extended_targets_documented() {
    println!(
        "criterion 10 (extended-run targets): NON-GATING — see tests/extended.rs; \
         requires FACMIX_OLIVE_CSV / FACMIX_URINE_CSV"
    );
}
