//! The Gibbs/Metropolis sweep machine shared by all eight model kinds.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::data::Dataset;
use crate::dist::{
    beta_logpdf, gamma_logpdf, sample_beta, sample_dirichlet, sample_gamma, sample_inverse_gamma,
    sample_mvn_canonical, sample_std_normal, gumbel_max_categorical, RngStream,
};
use crate::error::{Error, Result};
use crate::priors::ProcessKind;

use super::config::{MeanCov, Resolved};
use super::density::{log_sum_exp, LowRankGaussian};
use super::init::initial_labels;
use super::state::{ChainState, ClusterState};

/// Acceptance and adaptation bookkeeping accumulated over a run.
#[derive(Debug, Clone, Copy, Default, serde::Serialize, serde::Deserialize)]
pub struct Counters {
    pub move1_proposed: u64,
    pub move1_accepted: u64,
    pub move2_proposed: u64,
    pub move2_accepted: u64,
    pub alpha_proposed: u64,
    pub alpha_accepted: u64,
    pub discount_proposed: u64,
    pub discount_accepted: u64,
    pub adapt_events: u64,
    pub columns_grown: u64,
    pub columns_pruned: u64,
    pub init_fallback: bool,
}

/// One sweep machine: owns the data copy, the configuration, the chain state
/// and the random stream.
pub struct Sampler {
    x: DMatrix<f64>,
    cfg: Resolved,
    pub state: ChainState,
    rng: RngStream,
    iter: usize,
    pub counters: Counters,
    mean_shift0: DVector<f64>,
    alpha_step: f64,
    discount_step: f64,
    alpha_window: (u64, u64),
    discount_window: (u64, u64),
}

impl Sampler {
    pub fn new(data: &Dataset, cfg: Resolved) -> Result<Self> {
        Sampler::with_matrix(data.x().clone(), cfg)
    }

    /// Build a sampler on a raw matrix (the matrix must match the resolved
    /// dimensions).
    pub fn with_matrix(x: DMatrix<f64>, cfg: Resolved) -> Result<Self> {
        if x.nrows() != cfg.n || x.ncols() != cfg.p {
            return Err(Error::Shape(format!(
                "data is {}x{}, configuration was resolved for {}x{}",
                x.nrows(),
                x.ncols(),
                cfg.n,
                cfg.p
            )));
        }
        let rng = RngStream::new(cfg.control.seed);
        let mean_shift0 = match &cfg.mean_prior.cov {
            MeanCov::Diag { var } => {
                DVector::from_fn(cfg.p, |j, _| cfg.mean_prior.mean[j] / var[j])
            }
            MeanCov::Full { prec, .. } => prec * &cfg.mean_prior.mean,
        };
        let mut sampler = Sampler {
            x,
            cfg,
            state: ChainState {
                clusters: Vec::new(),
                labels: Vec::new(),
                counts: Vec::new(),
                scores: DMatrix::zeros(0, 0),
                weights: Vec::new(),
                sticks: Vec::new(),
                slice_u: Vec::new(),
                alpha: 0.0,
                discount: 0.0,
            },
            rng,
            iter: 0,
            counters: Counters::default(),
            mean_shift0,
            alpha_step: 0.5,
            discount_step: 0.7,
            alpha_window: (0, 0),
            discount_window: (0, 0),
        };
        sampler.initialize()?;
        Ok(sampler)
    }

    pub fn cfg(&self) -> &Resolved {
        &self.cfg
    }
    pub fn data(&self) -> &DMatrix<f64> {
        &self.x
    }
    pub fn iteration(&self) -> usize {
        self.iter
    }

    fn n(&self) -> usize {
        self.cfg.n
    }
    fn p(&self) -> usize {
        self.cfg.p
    }

    /// Draw the process parameters and every cluster from its prior; labels
    /// come from the configured initialiser.
    fn initialize(&mut self) -> Result<()> {
        let n = self.n();
        let g_init = self.cfg.g_init;

        // Process parameters first: sticks need them.
        let discount = match self.cfg.discount.fixed_value() {
            Some(d) => d,
            None if self.cfg.learn_discount() => {
                let (kappa, a, b) = self.cfg.discount_hyper;
                if self.rng.random::<f64>() < kappa {
                    0.0
                } else {
                    sample_beta(&mut self.rng, a, b)?
                }
            }
            None => 0.0,
        };
        let alpha = match self.cfg.alpha.fixed_value() {
            Some(a) => a,
            None => {
                let (a, b) = self.cfg.alpha_hyper;
                sample_gamma(&mut self.rng, a, b)?
            }
        };

        // Starting labels.
        let fixed_g = match self.cfg.kind.is_mixture() {
            false => Some(1),
            true if self.cfg.kind.overfitted() || self.cfg.kind.infinite() => None,
            true => Some(g_init),
        };
        let (labels, fallback) =
            initial_labels(&self.x, self.cfg.control.init, fixed_g, g_init, &mut self.rng);
        self.counters.init_fallback = fallback;

        let q0 = self.cfg.q_init;
        let mut clusters = Vec::with_capacity(g_init);
        for _ in 0..g_init {
            clusters.push(self.draw_prior_cluster(q0)?);
        }

        let scores = DMatrix::from_fn(n, q0, |_, _| sample_std_normal(&mut self.rng));

        let (sticks, weights, slice_u) = if self.cfg.infinite() {
            let mut sticks = Vec::with_capacity(g_init);
            for g in 0..g_init {
                sticks.push(self.prior_stick(g, alpha, discount)?);
            }
            let weights = weights_from_sticks(&sticks);
            let mut slice_u = Vec::with_capacity(n);
            for &z in &labels {
                slice_u.push(self.draw_slice(self.cfg.xi(z)));
            }
            (sticks, weights, slice_u)
        } else if self.cfg.kind.is_mixture() {
            let mass = self.cfg.dirichlet_mass.unwrap_or(1.0);
            let weights = sample_dirichlet(&mut self.rng, &vec![mass; g_init])?;
            (Vec::new(), weights, Vec::new())
        } else {
            (Vec::new(), vec![1.0], Vec::new())
        };

        self.state = ChainState {
            clusters,
            labels,
            counts: Vec::new(),
            scores,
            weights,
            sticks,
            slice_u,
            alpha,
            discount,
        };
        self.state.refresh_counts();
        Ok(())
    }

    fn prior_stick(&mut self, g: usize, alpha: f64, discount: f64) -> Result<f64> {
        sample_beta(&mut self.rng, 1.0 - discount, alpha + (g as f64 + 1.0) * discount)
    }

    /// Uniform draw on the open interval (0, xi).
    fn draw_slice(&mut self, xi: f64) -> f64 {
        loop {
            let u = xi * self.rng.random::<f64>();
            if u > 0.0 && u < xi {
                return u;
            }
        }
    }

    fn draw_prior_mean(&mut self) -> DVector<f64> {
        let p = self.p();
        let z = DVector::from_fn(p, |_, _| sample_std_normal(&mut self.rng));
        match &self.cfg.mean_prior.cov {
            MeanCov::Diag { var } => {
                DVector::from_fn(p, |j, _| self.cfg.mean_prior.mean[j] + var[j].sqrt() * z[j])
            }
            MeanCov::Full { chol_l, .. } => &self.cfg.mean_prior.mean + chol_l * z,
        }
    }

    fn draw_prior_uniquenesses(&mut self) -> Result<DVector<f64>> {
        let p = self.p();
        let shape = self.cfg.uniq.shape;
        if self.cfg.uniq.is_isotropic() {
            let v = sample_inverse_gamma(&mut self.rng, shape, self.cfg.uniq.rate(0))?;
            Ok(DVector::from_element(p, v))
        } else {
            let mut out = DVector::zeros(p);
            for j in 0..p {
                out[j] = sample_inverse_gamma(&mut self.rng, shape, self.cfg.uniq.rate(j))?;
            }
            Ok(out)
        }
    }

    /// Shrinkage-prior draw for one fresh column at position `k` (0-based).
    fn draw_prior_shrink_mult(&mut self, k: usize) -> Result<f64> {
        let h = self.cfg.mgp.expect("mgp draw on a fixed-factor kind");
        if k == 0 {
            sample_gamma(&mut self.rng, h.alpha1, h.beta1)
        } else {
            sample_gamma(&mut self.rng, h.alpha2, h.beta2)
        }
    }

    fn draw_prior_cluster(&mut self, q: usize) -> Result<ClusterState> {
        let p = self.p();
        let mean = self.draw_prior_mean();
        let uniquenesses = self.draw_prior_uniquenesses()?;
        if let Some(h) = self.cfg.mgp {
            let mut shrink_mult = DVector::zeros(q);
            for k in 0..q {
                shrink_mult[k] = self.draw_prior_shrink_mult(k)?;
            }
            let col_prec = cumprod(&shrink_mult);
            let mut local_shrink = DMatrix::zeros(p, q);
            for k in 0..q {
                for j in 0..p {
                    local_shrink[(j, k)] = sample_gamma(&mut self.rng, h.nu + 1.0, h.nu)?;
                }
            }
            let mut loadings = DMatrix::zeros(p, q);
            for k in 0..q {
                for j in 0..p {
                    let prec = local_shrink[(j, k)] * col_prec[k];
                    loadings[(j, k)] = sample_std_normal(&mut self.rng) / prec.sqrt();
                }
            }
            Ok(ClusterState { mean, loadings, uniquenesses, local_shrink, shrink_mult, col_prec })
        } else {
            let loadings = DMatrix::from_fn(p, q, |_, _| sample_std_normal(&mut self.rng));
            Ok(ClusterState {
                mean,
                loadings,
                uniquenesses,
                local_shrink: DMatrix::zeros(0, 0),
                shrink_mult: DVector::zeros(0),
                col_prec: DVector::zeros(0),
            })
        }
    }

    // ----- per-stage updates ------------------------------------------------

    /// Factor scores from their MVN full conditional with precision
    /// I + Lambda' Psi^{-1} Lambda; rows are zero-padded past the cluster's
    /// truncation level.
    pub fn update_factor_scores(&mut self) -> Result<()> {
        let members = self.state.members();
        let qmax = self.state.qmax();
        for g in 0..self.state.n_clusters() {
            if members[g].is_empty() {
                continue;
            }
            let q = self.state.clusters[g].q();
            if q == 0 {
                for &i in &members[g] {
                    for k in 0..qmax {
                        self.state.scores[(i, k)] = 0.0;
                    }
                }
                continue;
            }
            let cl = &self.state.clusters[g];
            let mut lt_psi_inv = cl.loadings.transpose();
            for j in 0..self.cfg.p {
                lt_psi_inv.column_mut(j).scale_mut(1.0 / cl.uniquenesses[j]);
            }
            let m = DMatrix::<f64>::identity(q, q) + &lt_psi_inv * &cl.loadings;
            let chol = m.cholesky().ok_or_else(|| {
                Error::Mcmc { iter: self.iter, detail: "factor-score precision not PD".into() }
            })?;
            let lt = chol.l().transpose();
            let mean_g = cl.mean.clone();
            for &i in &members[g] {
                let r = self.x.row(i).transpose() - &mean_g;
                let b = &lt_psi_inv * r;
                let centre = chol.solve(&b);
                let z = DVector::from_fn(q, |_, _| sample_std_normal(&mut self.rng));
                let noise = lt.solve_upper_triangular(&z).ok_or_else(|| Error::Mcmc {
                    iter: self.iter,
                    detail: "factor-score noise solve failed".into(),
                })?;
                for k in 0..q {
                    self.state.scores[(i, k)] = centre[k] + noise[k];
                }
                for k in q..qmax {
                    self.state.scores[(i, k)] = 0.0;
                }
            }
        }
        Ok(())
    }

    /// Conjugate MVN update for the cluster means; empty clusters draw from
    /// the prior.
    pub fn update_means(&mut self) -> Result<()> {
        let members = self.state.members();
        let p = self.cfg.p;
        for g in 0..self.state.n_clusters() {
            let n_g = self.state.counts[g];
            if n_g == 0 {
                let mean = self.draw_prior_mean();
                self.state.clusters[g].mean = mean;
                continue;
            }
            let q = self.state.clusters[g].q();
            let mut resid_sum = DVector::<f64>::zeros(p);
            {
                let cl = &self.state.clusters[g];
                for &i in &members[g] {
                    let mut r = self.x.row(i).transpose();
                    if q > 0 {
                        let eta = self.state.scores.row(i).columns(0, q).transpose();
                        r -= &cl.loadings * eta;
                    }
                    resid_sum += r;
                }
            }
            let psi = self.state.clusters[g].uniquenesses.clone();
            let mean = match &self.cfg.mean_prior.cov {
                MeanCov::Diag { var } => {
                    let mut out = DVector::zeros(p);
                    for j in 0..p {
                        let prec = 1.0 / var[j] + n_g as f64 / psi[j];
                        let shift = self.mean_shift0[j] + resid_sum[j] / psi[j];
                        out[j] = shift / prec + sample_std_normal(&mut self.rng) / prec.sqrt();
                    }
                    out
                }
                MeanCov::Full { prec, .. } => {
                    let mut post_prec = prec.clone();
                    for j in 0..p {
                        post_prec[(j, j)] += n_g as f64 / psi[j];
                    }
                    let shift = &self.mean_shift0
                        + DVector::from_fn(p, |j, _| resid_sum[j] / psi[j]);
                    sample_mvn_canonical(&mut self.rng, &post_prec, &shift).map_err(|e| {
                        Error::Mcmc { iter: self.iter, detail: format!("mean update: {e}") }
                    })?
                }
            };
            self.state.clusters[g].mean = mean;
        }
        Ok(())
    }

    /// Row-wise MVN update of the loadings. The prior precision of row j is
    /// diag(phi_j1 tau_1, ..., phi_jq tau_q) under the shrinkage prior and the
    /// identity for fixed-factor kinds.
    pub fn update_loadings(&mut self) -> Result<()> {
        let members = self.state.members();
        let p = self.cfg.p;
        let mgp = self.cfg.mgp.is_some();
        for g in 0..self.state.n_clusters() {
            let q = self.state.clusters[g].q();
            if q == 0 {
                continue;
            }
            let n_g = self.state.counts[g];
            if n_g == 0 {
                // Prior draw, conditional on the current shrinkage state.
                let (local, col_prec) = {
                    let cl = &self.state.clusters[g];
                    (cl.local_shrink.clone(), cl.col_prec.clone())
                };
                let mut loadings = DMatrix::zeros(p, q);
                for k in 0..q {
                    for j in 0..p {
                        let prec = if mgp { local[(j, k)] * col_prec[k] } else { 1.0 };
                        loadings[(j, k)] = sample_std_normal(&mut self.rng) / prec.sqrt();
                    }
                }
                self.state.clusters[g].loadings = loadings;
                continue;
            }

            let rows = &members[g];
            let h = DMatrix::from_fn(rows.len(), q, |r, k| self.state.scores[(rows[r], k)]);
            let hth = h.transpose() * &h;
            // q x p matrix of score-residual cross products.
            let centered = DMatrix::from_fn(rows.len(), p, |r, j| {
                self.x[(rows[r], j)] - self.state.clusters[g].mean[j]
            });
            let htc = h.transpose() * centered;

            let mut loadings = DMatrix::zeros(p, q);
            for j in 0..p {
                let psi_j = self.state.clusters[g].uniquenesses[j];
                let mut post_prec = &hth / psi_j;
                for k in 0..q {
                    let prior = if mgp {
                        self.state.clusters[g].local_shrink[(j, k)]
                            * self.state.clusters[g].col_prec[k]
                    } else {
                        1.0
                    };
                    post_prec[(k, k)] += prior;
                }
                let shift = DVector::from_fn(q, |k, _| htc[(k, j)] / psi_j);
                let row = sample_mvn_canonical(&mut self.rng, &post_prec, &shift)
                    .map_err(|e| Error::Mcmc { iter: self.iter, detail: format!("loadings update: {e}") })?;
                for k in 0..q {
                    loadings[(j, k)] = row[k];
                }
            }
            self.state.clusters[g].loadings = loadings;
        }
        Ok(())
    }

    /// Inverse-gamma update of the uniquenesses; the isotropic variant pools
    /// the residuals across variables.
    pub fn update_uniquenesses(&mut self) -> Result<()> {
        let members = self.state.members();
        let p = self.cfg.p;
        let shape0 = self.cfg.uniq.shape;
        for g in 0..self.state.n_clusters() {
            let n_g = self.state.counts[g];
            let q = self.state.clusters[g].q();
            let mut rss = DVector::<f64>::zeros(p);
            {
                let cl = &self.state.clusters[g];
                for &i in &members[g] {
                    let mut r = self.x.row(i).transpose() - &cl.mean;
                    if q > 0 {
                        let eta = self.state.scores.row(i).columns(0, q).transpose();
                        r -= &cl.loadings * eta;
                    }
                    for j in 0..p {
                        rss[j] += r[j] * r[j];
                    }
                }
            }
            if self.cfg.uniq.is_isotropic() {
                let shape = shape0 + n_g as f64 * p as f64 / 2.0;
                let rate = self.cfg.uniq.rate(0) + 0.5 * rss.sum();
                let v = sample_inverse_gamma(&mut self.rng, shape, rate)?;
                self.state.clusters[g].uniquenesses = DVector::from_element(p, v);
            } else {
                let shape = shape0 + n_g as f64 / 2.0;
                for j in 0..p {
                    let rate = self.cfg.uniq.rate(j) + 0.5 * rss[j];
                    self.state.clusters[g].uniquenesses[j] =
                        sample_inverse_gamma(&mut self.rng, shape, rate)?;
                }
            }
        }
        Ok(())
    }

    /// Local and column shrinkage updates of the multiplicative gamma process,
    /// followed by an exact recomputation of the column precisions.
    pub fn update_mgp(&mut self) -> Result<()> {
        let h = match self.cfg.mgp {
            Some(h) => h,
            None => return Ok(()),
        };
        let p = self.cfg.p as f64;
        for g in 0..self.state.n_clusters() {
            let q = self.state.clusters[g].q();
            if q == 0 {
                continue;
            }
            // Local shrinkage.
            for k in 0..q {
                for j in 0..self.cfg.p {
                    let lam = self.state.clusters[g].loadings[(j, k)];
                    let tau = self.state.clusters[g].col_prec[k];
                    let draw = sample_gamma(&mut self.rng, h.nu + 1.0 + 0.5, h.nu + 0.5 * tau * lam * lam)?;
                    self.state.clusters[g].local_shrink[(j, k)] = draw;
                }
            }
            // Weighted squared loadings per column.
            let s: Vec<f64> = (0..q)
                .map(|k| {
                    (0..self.cfg.p)
                        .map(|j| {
                            let lam = self.state.clusters[g].loadings[(j, k)];
                            self.state.clusters[g].local_shrink[(j, k)] * lam * lam
                        })
                        .sum()
                })
                .collect();
            // Column multipliers, scanned in order with the current values of
            // the other multipliers.
            for pos in 0..q {
                let (a, b) = if pos == 0 { (h.alpha1, h.beta1) } else { (h.alpha2, h.beta2) };
                let shape = a + p * (q - pos) as f64 / 2.0;
                let mut rate = b;
                let delta = &self.state.clusters[g].shrink_mult;
                for k in pos..q {
                    let mut prod = 1.0;
                    for (h2, d) in delta.iter().enumerate().take(k + 1) {
                        if h2 != pos {
                            prod *= d;
                        }
                    }
                    rate += 0.5 * prod * s[k];
                }
                let draw = sample_gamma(&mut self.rng, shape, rate)?;
                self.state.clusters[g].shrink_mult[pos] = draw;
            }
            let col_prec = cumprod(&self.state.clusters[g].shrink_mult);
            self.state.clusters[g].col_prec = col_prec;
        }
        Ok(())
    }

    /// Conjugate Dirichlet draw of the mixing proportions (finite and
    /// overfitted mixtures).
    pub fn update_weights_dirichlet(&mut self) -> Result<()> {
        let mass = self.cfg.dirichlet_mass.unwrap_or(1.0);
        let alphas: Vec<f64> =
            self.state.counts.iter().map(|&c| mass + c as f64).collect();
        self.state.weights = sample_dirichlet(&mut self.rng, &alphas)?;
        Ok(())
    }

    /// Stick updates v_g ~ Beta(1 - d + n_g, alpha + g d + sum_{l>g} n_l) and
    /// the induced weights.
    pub fn update_sticks_and_weights(&mut self) -> Result<()> {
        let d = self.state.discount;
        let alpha = self.state.alpha;
        let g_count = self.state.n_clusters();
        let mut tail: usize = self.state.counts.iter().sum();
        for g in 0..g_count {
            tail -= self.state.counts[g];
            let a = 1.0 - d + self.state.counts[g] as f64;
            let b = alpha + (g as f64 + 1.0) * d + tail as f64;
            self.state.sticks[g] = sample_beta(&mut self.rng, a, b)?;
        }
        self.state.weights = weights_from_sticks(&self.state.sticks);
        Ok(())
    }

    /// Slice variables u_i ~ Unif(0, xi_{z_i}); the active-set size determines
    /// how many clusters must be instantiated, drawing new ones from the prior.
    pub fn update_slice(&mut self) -> Result<()> {
        let n = self.n();
        let mut g_active = 1usize;
        for i in 0..n {
            let xi = self.cfg.xi(self.state.labels[i]);
            let u = self.draw_slice(xi);
            self.state.slice_u[i] = u;
            g_active = g_active.max(self.active_len(u));
        }
        let current = self.state.n_clusters();
        if g_active > current {
            let q_new = match self.cfg.q_fixed {
                Some(q) => q,
                None => self.state.qmax(),
            };
            let alpha = self.state.alpha;
            let d = self.state.discount;
            for g in current..g_active {
                let cl = self.draw_prior_cluster(q_new)?;
                self.state.clusters.push(cl);
                let stick = self.prior_stick(g, alpha, d)?;
                self.state.sticks.push(stick);
                self.state.counts.push(0);
            }
        } else if g_active < current {
            // Clusters past the largest active set are necessarily empty.
            debug_assert!(self.state.counts[g_active..].iter().all(|&c| c == 0));
            self.state.clusters.truncate(g_active);
            self.state.sticks.truncate(g_active);
            self.state.counts.truncate(g_active);
        }
        self.state.weights = weights_from_sticks(&self.state.sticks);
        Ok(())
    }

    /// Size of the active set {g : u < xi_g} for the geometric slice levels.
    fn active_len(&self, u: f64) -> usize {
        let mut g = 0usize;
        while self.cfg.xi(g) > u {
            g += 1;
        }
        g.max(1)
    }

    /// Allocation update. Finite and overfitted mixtures draw from the full
    /// multinomial; infinite mixtures only weigh the slice-active prefix with
    /// weights pi_g / xi_g. Densities use the low-rank covariance form.
    pub fn update_allocations(&mut self) -> Result<()> {
        let g_count = self.state.n_clusters();
        if g_count <= 1 {
            self.state.labels.fill(0);
            self.state.refresh_counts();
            return Ok(());
        }
        let mut densities = Vec::with_capacity(g_count);
        for g in 0..g_count {
            let cl = &self.state.clusters[g];
            densities.push(
                LowRankGaussian::new(cl.mean.clone(), &cl.loadings, &cl.uniquenesses).map_err(
                    |e| Error::Mcmc { iter: self.iter, detail: format!("allocation density: {e}") },
                )?,
            );
        }
        let infinite = self.cfg.infinite();
        let base: Vec<f64> = (0..g_count)
            .map(|g| {
                let w = self.state.weights[g];
                if infinite {
                    w.ln() - self.cfg.xi(g).ln()
                } else {
                    w.ln()
                }
            })
            .collect();
        let mut logw = vec![0.0f64; g_count];
        for i in 0..self.n() {
            let xi_row = self.x.row(i).transpose();
            let limit = if infinite { self.active_len(self.state.slice_u[i]).min(g_count) } else { g_count };
            for g in 0..limit {
                logw[g] = base[g] + densities[g].logpdf(&xi_row);
            }
            let choice = gumbel_max_categorical(&mut self.rng, &logw[..limit])
                .map_err(|e| Error::Mcmc { iter: self.iter, detail: format!("allocation: {e}") })?;
            self.state.labels[i] = choice;
        }
        self.state.refresh_counts();
        // Keep rows zero past the truncation of their (possibly new) cluster;
        // the scores are resampled before anything conditions on them.
        let qmax = self.state.qmax();
        for i in 0..self.n() {
            let q_i = self.state.clusters[self.state.labels[i]].q();
            for k in q_i..qmax {
                self.state.scores[(i, k)] = 0.0;
            }
        }
        Ok(())
    }

    /// Relabel clusters so the weights are non-increasing; the same permutation
    /// is applied to every cluster-indexed quantity and the slice variables are
    /// rescaled to the new levels.
    pub fn reorder_by_weight(&mut self) {
        let g_count = self.state.n_clusters();
        if g_count <= 1 {
            return;
        }
        let mut order: Vec<usize> = (0..g_count).collect();
        order.sort_by(|&a, &b| {
            self.state.weights[b]
                .partial_cmp(&self.state.weights[a])
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        if order.iter().enumerate().all(|(new, &old)| new == old) {
            return;
        }
        self.apply_permutation(&order);
    }

    /// `order[new_index] = old_index`.
    fn apply_permutation(&mut self, order: &[usize]) {
        let g_count = order.len();
        let mut new_pos = vec![0usize; g_count];
        for (new, &old) in order.iter().enumerate() {
            new_pos[old] = new;
        }
        let old_clusters = std::mem::take(&mut self.state.clusters);
        let mut slot: Vec<Option<ClusterState>> = old_clusters.into_iter().map(Some).collect();
        self.state.clusters = order.iter().map(|&old| slot[old].take().unwrap()).collect();
        self.state.counts = order.iter().map(|&old| self.state.counts[old]).collect();
        self.state.weights = order.iter().map(|&old| self.state.weights[old]).collect();
        self.state.sticks = sticks_from_weights(&self.state.weights);
        for i in 0..self.state.labels.len() {
            let old = self.state.labels[i];
            let new = new_pos[old];
            if new != old {
                self.state.slice_u[i] *= self.cfg.xi(new) / self.cfg.xi(old);
                self.state.labels[i] = new;
            }
        }
    }

    /// Two Metropolis label-switching moves: swap two random non-empty
    /// clusters, and swap a random pair of neighbouring clusters together with
    /// their sticks.
    pub fn label_switch_moves(&mut self) -> Result<()> {
        if !self.cfg.control.label_switch_moves || !self.cfg.infinite() {
            return Ok(());
        }
        // Move 1: random non-empty pair, p1 = min{1, (pi_h/pi_g)^(n_g - n_h)}.
        let nonempty: Vec<usize> =
            (0..self.state.n_clusters()).filter(|&g| self.state.counts[g] > 0).collect();
        if nonempty.len() >= 2 {
            self.counters.move1_proposed += 1;
            let a = self.rng.random_range(0..nonempty.len());
            let mut b = self.rng.random_range(0..nonempty.len() - 1);
            if b >= a {
                b += 1;
            }
            let (g, h2) = (nonempty[a], nonempty[b]);
            let exponent = self.state.counts[g] as i64 - self.state.counts[h2] as i64;
            let log_p = if exponent == 0 {
                0.0
            } else {
                exponent as f64 * (self.state.weights[h2].ln() - self.state.weights[g].ln())
            };
            if log_p >= 0.0 || self.rng.open01().ln() < log_p {
                self.counters.move1_accepted += 1;
                self.swap_cluster_labels(g, h2, false);
            }
        }
        // Move 2: neighbouring pair, also swapping the sticks on acceptance.
        let g_count = self.state.n_clusters();
        if g_count >= 2 {
            self.counters.move2_proposed += 1;
            let g = self.rng.random_range(0..g_count - 1);
            let n_g = self.state.counts[g];
            let n_h = self.state.counts[g + 1];
            let term = |n: usize, v: f64| if n == 0 { 0.0 } else { n as f64 * (1.0 - v).ln() };
            let log_p = term(n_g, self.state.sticks[g + 1]) - term(n_h, self.state.sticks[g]);
            if log_p >= 0.0 || self.rng.open01().ln() < log_p {
                self.counters.move2_accepted += 1;
                self.swap_cluster_labels(g, g + 1, true);
                // Keep the decreasing-weight ordering the sampler maintains.
                let sorted = self
                    .state
                    .weights
                    .windows(2)
                    .all(|w| w[0] >= w[1] - 1e-15);
                if !sorted {
                    self.reorder_by_weight();
                }
            }
        }
        Ok(())
    }

    /// Swap every cluster-indexed quantity between g and h, relabel the
    /// observations and rescale their slice variables. `with_sticks` also
    /// swaps the stick proportions and recomputes the weights (move 2);
    /// otherwise the weights stay in place (move 1).
    fn swap_cluster_labels(&mut self, g: usize, h: usize, with_sticks: bool) {
        self.state.clusters.swap(g, h);
        self.state.counts.swap(g, h);
        if with_sticks {
            self.state.sticks.swap(g, h);
            self.state.weights = weights_from_sticks(&self.state.sticks);
        }
        if self.cfg.infinite() {
            let ratio_gh = self.cfg.xi(h) / self.cfg.xi(g);
            for i in 0..self.state.labels.len() {
                if self.state.labels[i] == g {
                    self.state.labels[i] = h;
                    self.state.slice_u[i] *= ratio_gh;
                } else if self.state.labels[i] == h {
                    self.state.labels[i] = g;
                    self.state.slice_u[i] /= ratio_gh;
                }
            }
        } else {
            for z in &mut self.state.labels {
                if *z == g {
                    *z = h;
                } else if *z == h {
                    *z = g;
                }
            }
        }
    }

    /// Concentration and discount updates: an auxiliary-variable Gibbs draw
    /// under the Dirichlet process, Metropolis-Hastings steps under Pitman-Yor.
    pub fn update_process_params(&mut self) -> Result<()> {
        match self.cfg.process_kind {
            Some(ProcessKind::Dp) => {
                if self.cfg.learn_alpha() {
                    self.update_alpha_west()?;
                }
            }
            Some(ProcessKind::Py) => {
                if self.cfg.learn_alpha() {
                    self.update_alpha_mh()?;
                }
                if self.cfg.learn_discount() {
                    self.update_discount_mh()?;
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// Gibbs draw of the DP concentration given the number of non-empty
    /// clusters: a Beta auxiliary variable followed by a two-gamma mixture.
    fn update_alpha_west(&mut self) -> Result<()> {
        let (a, b) = self.cfg.alpha_hyper;
        let k = self.state.count_nonempty() as f64;
        let n = self.n() as f64;
        let chi = sample_beta(&mut self.rng, self.state.alpha + 1.0, n)?;
        let rate = b - chi.ln();
        let odds = (a + k - 1.0) / (n * rate);
        let w = odds / (1.0 + odds);
        let shape = if self.rng.random::<f64>() < w { a + k } else { a + k - 1.0 };
        self.state.alpha = sample_gamma(&mut self.rng, shape, rate)?;
        Ok(())
    }

    /// Log posterior of the concentration under the Pitman-Yor stick prior:
    /// shifted-gamma prior on alpha + d plus the instantiated stick densities.
    fn log_target_alpha(&self, alpha: f64) -> f64 {
        let d = self.state.discount;
        if alpha + d <= 0.0 {
            return f64::NEG_INFINITY;
        }
        let (a, b) = self.cfg.alpha_hyper;
        let mut lt = gamma_logpdf(alpha + d, a, b);
        for (g, &v) in self.state.sticks.iter().enumerate() {
            lt += beta_logpdf(v, 1.0 - d, alpha + (g as f64 + 1.0) * d);
        }
        lt
    }

    fn log_target_discount(&self, d: f64) -> f64 {
        let alpha = self.state.alpha;
        if !(0.0..1.0).contains(&d) || alpha + d <= 0.0 {
            return f64::NEG_INFINITY;
        }
        let (kappa, ap, bp) = self.cfg.discount_hyper;
        let prior = if d == 0.0 {
            if kappa <= 0.0 {
                return f64::NEG_INFINITY;
            }
            kappa.ln()
        } else {
            if kappa >= 1.0 {
                return f64::NEG_INFINITY;
            }
            (1.0 - kappa).ln() + beta_logpdf(d, ap, bp)
        };
        let (a, b) = self.cfg.alpha_hyper;
        let mut lt = prior + gamma_logpdf(alpha + d, a, b);
        for (g, &v) in self.state.sticks.iter().enumerate() {
            lt += beta_logpdf(v, 1.0 - d, alpha + (g as f64 + 1.0) * d);
        }
        lt
    }

    /// Random-walk Metropolis on log(alpha + d), keeping alpha > -d.
    fn update_alpha_mh(&mut self) -> Result<()> {
        self.counters.alpha_proposed += 1;
        self.alpha_window.0 += 1;
        let d = self.state.discount;
        let cur = self.state.alpha;
        let s = (cur + d).ln();
        let s_new = s + self.alpha_step * sample_std_normal(&mut self.rng);
        let proposal = s_new.exp() - d;
        let log_ratio =
            self.log_target_alpha(proposal) - self.log_target_alpha(cur) + s_new - s;
        if log_ratio >= 0.0 || self.rng.open01().ln() < log_ratio {
            self.state.alpha = proposal;
            self.counters.alpha_accepted += 1;
            self.alpha_window.1 += 1;
        }
        self.tune_steps();
        Ok(())
    }

    /// Mixed-proposal Metropolis for the discount: an atom at zero proposed
    /// with probability 1/2, otherwise a logit random walk (or a draw from the
    /// continuous prior component when currently at the atom).
    fn update_discount_mh(&mut self) -> Result<()> {
        self.counters.discount_proposed += 1;
        self.discount_window.0 += 1;
        let (_, ap, bp) = self.cfg.discount_hyper;
        let cur = self.state.discount;
        let proposal = if self.rng.random::<f64>() < 0.5 {
            0.0
        } else if cur == 0.0 {
            sample_beta(&mut self.rng, ap, bp)?
        } else {
            let t = logit(cur) + self.discount_step * sample_std_normal(&mut self.rng);
            sigmoid(t)
        };
        // Proposal density with respect to (atom at 0) + Lebesgue.
        let log_q = |from: f64, to: f64| -> f64 {
            if to == 0.0 {
                (0.5f64).ln()
            } else if from == 0.0 {
                (0.5f64).ln() + beta_logpdf(to, ap, bp)
            } else {
                let z = (logit(to) - logit(from)) / self.discount_step;
                (0.5f64).ln() - 0.5 * z * z - 0.5 * (2.0 * std::f64::consts::PI).ln()
                    - self.discount_step.ln()
                    - (to * (1.0 - to)).ln()
            }
        };
        if proposal == cur && proposal == 0.0 {
            // Atom-to-atom proposal: always accepted, nothing changes.
            self.counters.discount_accepted += 1;
            self.discount_window.1 += 1;
            self.tune_steps();
            return Ok(());
        }
        let log_ratio = self.log_target_discount(proposal) - self.log_target_discount(cur)
            + log_q(proposal, cur)
            - log_q(cur, proposal);
        if log_ratio >= 0.0 || self.rng.open01().ln() < log_ratio {
            self.state.discount = proposal;
            self.counters.discount_accepted += 1;
            self.discount_window.1 += 1;
        }
        self.tune_steps();
        Ok(())
    }

    /// Burn-in step-size tuning toward a 20-40% acceptance window.
    fn tune_steps(&mut self) {
        if self.iter > self.cfg.control.burnin {
            return;
        }
        for (window, step) in [
            (&mut self.alpha_window, &mut self.alpha_step),
            (&mut self.discount_window, &mut self.discount_step),
        ] {
            if window.0 >= 50 {
                let rate = window.1 as f64 / window.0 as f64;
                if rate < 0.2 {
                    *step = (*step * 0.8).max(1e-3);
                } else if rate > 0.4 {
                    *step = (*step * 1.25).min(10.0);
                }
                *window = (0, 0);
            }
        }
    }

    /// Adaptive truncation: with probability exp(-b0 - b1 t), prune columns
    /// that are mostly within eps of zero (or grow one column when none are),
    /// then align empty clusters and the score matrix with the new levels.
    pub fn adapt_truncation(&mut self) -> Result<()> {
        let h = match self.cfg.mgp {
            Some(h) => h,
            None => return Ok(()),
        };
        if h.adapt_after_burnin && self.iter <= self.cfg.control.burnin {
            return Ok(());
        }
        let prob = (-h.b0 - h.b1 * self.iter as f64).exp();
        if self.rng.random::<f64>() >= prob {
            return Ok(());
        }
        self.counters.adapt_events += 1;

        let p = self.cfg.p;
        let g_count = self.state.n_clusters();
        // Per-cluster retained-column indices (None = untouched).
        let mut retained: Vec<Option<Vec<usize>>> = vec![None; g_count];

        for g in 0..g_count {
            if self.state.counts[g] == 0 {
                continue;
            }
            let q = self.state.clusters[g].q();
            let lam = &self.state.clusters[g].loadings;
            let redundant: Vec<usize> = (0..q)
                .filter(|&k| {
                    let near_zero =
                        (0..p).filter(|&j| lam[(j, k)].abs() < h.eps).count() as f64 / p as f64;
                    near_zero >= h.varsigma
                })
                .collect();
            if redundant.is_empty() {
                if q < p {
                    self.grow_cluster_column(g)?;
                    self.counters.columns_grown += 1;
                    let new_q = self.state.clusters[g].q();
                    retained[g] = Some((0..new_q).collect());
                }
            } else {
                let keep: Vec<usize> = (0..q).filter(|k| !redundant.contains(k)).collect();
                self.prune_cluster_columns(g, &keep);
                self.counters.columns_pruned += redundant.len() as u64;
                retained[g] = Some(keep);
            }
        }

        // Empty clusters track the current maximum level.
        let q_target = (0..g_count)
            .filter(|&g| self.state.counts[g] > 0)
            .map(|g| self.state.clusters[g].q())
            .max()
            .unwrap_or(self.state.qmax());
        for g in 0..g_count {
            if self.state.counts[g] > 0 {
                continue;
            }
            let q = self.state.clusters[g].q();
            if q > q_target {
                let keep: Vec<usize> = (0..q_target).collect();
                self.prune_cluster_columns(g, &keep);
            } else {
                while self.state.clusters[g].q() < q_target {
                    self.grow_cluster_column(g)?;
                }
            }
        }

        // Rebuild the score matrix: retained columns shift left, new columns
        // start at zero, rows stay zero past their cluster's level.
        let qmax_new = q_target;
        let n = self.n();
        let mut scores = DMatrix::<f64>::zeros(n, qmax_new);
        for i in 0..n {
            let g = self.state.labels[i];
            let q_g = self.state.clusters[g].q();
            match &retained[g] {
                Some(keep) => {
                    for (k_new, &k_old) in keep.iter().enumerate().take(q_g) {
                        if k_old < self.state.scores.ncols() {
                            scores[(i, k_new)] = self.state.scores[(i, k_old)];
                        }
                    }
                }
                None => {
                    for k in 0..q_g.min(self.state.scores.ncols()) {
                        scores[(i, k)] = self.state.scores[(i, k)];
                    }
                }
            }
        }
        self.state.scores = scores;
        Ok(())
    }

    fn grow_cluster_column(&mut self, g: usize) -> Result<()> {
        let h = self.cfg.mgp.expect("growth requires the shrinkage prior");
        let p = self.cfg.p;
        let q = self.state.clusters[g].q();
        let delta_new = self.draw_prior_shrink_mult(q)?;
        let mut phi_col = DVector::zeros(p);
        for j in 0..p {
            phi_col[j] = sample_gamma(&mut self.rng, h.nu + 1.0, h.nu)?;
        }
        let cl = &mut self.state.clusters[g];
        let tau_new = if q == 0 { delta_new } else { cl.col_prec[q - 1] * delta_new };
        let mut lam_col = DVector::zeros(p);
        for j in 0..p {
            let prec = phi_col[j] * tau_new;
            lam_col[j] = sample_std_normal(&mut self.rng) / prec.sqrt();
        }
        cl.loadings = append_column(&cl.loadings, &lam_col);
        cl.local_shrink = append_column(&cl.local_shrink, &phi_col);
        cl.shrink_mult = append_entry(&cl.shrink_mult, delta_new);
        cl.col_prec = append_entry(&cl.col_prec, tau_new);
        Ok(())
    }

    fn prune_cluster_columns(&mut self, g: usize, keep: &[usize]) {
        let cl = &mut self.state.clusters[g];
        let p = cl.loadings.nrows();
        cl.loadings = DMatrix::from_fn(p, keep.len(), |j, k| cl.loadings[(j, keep[k])]);
        cl.local_shrink = DMatrix::from_fn(p, keep.len(), |j, k| cl.local_shrink[(j, keep[k])]);
        cl.shrink_mult = DVector::from_fn(keep.len(), |k, _| cl.shrink_mult[keep[k]]);
        cl.col_prec = cumprod(&cl.shrink_mult);
    }

    /// Observed-data log-likelihood: sum_i ln sum_g pi_g MVN(x_i; mu_g,
    /// Lambda_g Lambda_g' + Psi_g), with the weights renormalised over the
    /// non-empty clusters.
    pub fn observed_loglik(&self) -> Result<f64> {
        let nonempty: Vec<usize> =
            (0..self.state.n_clusters()).filter(|&g| self.state.counts[g] > 0).collect();
        if nonempty.is_empty() {
            return Err(Error::Mcmc { iter: self.iter, detail: "no non-empty clusters".into() });
        }
        let total_w: f64 = nonempty.iter().map(|&g| self.state.weights[g]).sum();
        let mut dens = Vec::with_capacity(nonempty.len());
        let mut log_w = Vec::with_capacity(nonempty.len());
        for &g in &nonempty {
            let cl = &self.state.clusters[g];
            dens.push(LowRankGaussian::new(cl.mean.clone(), &cl.loadings, &cl.uniquenesses)?);
            log_w.push((self.state.weights[g] / total_w).ln());
        }
        let mut total = 0.0;
        let mut terms = vec![0.0f64; nonempty.len()];
        for i in 0..self.n() {
            let xi = self.x.row(i).transpose();
            for (t, d) in dens.iter().enumerate() {
                terms[t] = log_w[t] + d.logpdf(&xi);
            }
            total += log_sum_exp(&terms);
        }
        Ok(total)
    }

    /// Number of non-empty clusters.
    pub fn count_nonempty(&self) -> usize {
        self.state.count_nonempty()
    }

    /// One full sweep in the fixed stage order. Factor scores are refreshed
    /// before anything conditions on them, which keeps the collapsed
    /// allocation step exact.
    pub fn sweep(&mut self) -> Result<()> {
        self.iter += 1;
        self.update_factor_scores()?;
        self.update_means()?;
        self.update_loadings()?;
        self.update_uniquenesses()?;
        self.update_mgp()?;
        if self.cfg.infinite() {
            self.update_sticks_and_weights()?;
            self.update_slice()?;
        } else if self.cfg.kind.is_mixture() {
            self.update_weights_dirichlet()?;
        }
        if self.cfg.kind.is_mixture() {
            self.update_allocations()?;
        }
        if self.cfg.infinite() {
            self.reorder_by_weight();
            self.label_switch_moves()?;
            self.update_process_params()?;
        }
        if self.cfg.adaptive_factors() {
            self.adapt_truncation()?;
        }
        Ok(())
    }

    /// Replace the data (and labels, scores) by a joint draw from the model
    /// given the current parameters. Finite mixtures only; used for
    /// successive-conditional calibration checks and posterior predictive
    /// simulation.
    pub fn simulate_from_model(&mut self) -> Result<()> {
        if self.cfg.infinite() {
            return Err(Error::Validation(
                "model simulation is only supported for finite mixture kinds".into(),
            ));
        }
        let n = self.n();
        let p = self.p();
        let qmax = self.state.qmax();
        for i in 0..n {
            let u: f64 = self.rng.random();
            let mut acc = 0.0;
            let mut z = self.state.n_clusters() - 1;
            for (g, &w) in self.state.weights.iter().enumerate() {
                acc += w;
                if u < acc {
                    z = g;
                    break;
                }
            }
            self.state.labels[i] = z;
            let q = self.state.clusters[z].q();
            let eta = DVector::from_fn(q, |_, _| sample_std_normal(&mut self.rng));
            for k in 0..qmax {
                self.state.scores[(i, k)] = if k < q { eta[k] } else { 0.0 };
            }
            let cl = &self.state.clusters[z];
            let mut row = cl.mean.clone();
            if q > 0 {
                row += &cl.loadings * &eta;
            }
            for j in 0..p {
                row[j] += cl.uniquenesses[j].sqrt() * sample_std_normal(&mut self.rng);
            }
            self.x.set_row(i, &row.transpose());
        }
        self.state.refresh_counts();
        Ok(())
    }
}

fn cumprod(v: &DVector<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(v.len());
    let mut acc = 1.0;
    for k in 0..v.len() {
        acc *= v[k];
        out[k] = acc;
    }
    out
}

fn append_column(m: &DMatrix<f64>, col: &DVector<f64>) -> DMatrix<f64> {
    let (rows, cols) = (col.len(), m.ncols() + 1);
    DMatrix::from_fn(rows, cols, |j, k| if k < m.ncols() { m[(j, k)] } else { col[j] })
}

fn append_entry(v: &DVector<f64>, x: f64) -> DVector<f64> {
    DVector::from_fn(v.len() + 1, |k, _| if k < v.len() { v[k] } else { x })
}

/// pi_g = v_g prod_{l<g} (1 - v_l).
pub fn weights_from_sticks(sticks: &[f64]) -> Vec<f64> {
    let mut remaining = 1.0;
    let mut out = Vec::with_capacity(sticks.len());
    for &v in sticks {
        out.push(v * remaining);
        remaining *= 1.0 - v;
    }
    out
}

/// Invert the stick-breaking map after a permutation of the weights.
fn sticks_from_weights(weights: &[f64]) -> Vec<f64> {
    let mut remaining = 1.0;
    let mut out = Vec::with_capacity(weights.len());
    for &w in weights {
        let v = (w / remaining).clamp(1e-15, 1.0 - 1e-15);
        out.push(v);
        remaining *= 1.0 - v;
    }
    out
}

fn logit(x: f64) -> f64 {
    (x / (1.0 - x)).ln()
}

fn sigmoid(t: f64) -> f64 {
    1.0 / (1.0 + (-t).exp())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stick_weights_hand_cases() {
        let w = weights_from_sticks(&[1.0, 0.3, 0.3]);
        assert_eq!(w[0], 1.0);
        assert_eq!(w[1], 0.0);
        let w = weights_from_sticks(&[0.5, 0.5, 0.5]);
        assert!((w[0] - 0.5).abs() < 1e-15);
        assert!((w[1] - 0.25).abs() < 1e-15);
        assert!((w[2] - 0.125).abs() < 1e-15);
    }

    #[test]
    fn sticks_weights_roundtrip() {
        let sticks = vec![0.4, 0.7, 0.2, 0.9];
        let w = weights_from_sticks(&sticks);
        let back = sticks_from_weights(&w);
        for (a, b) in sticks.iter().zip(back.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn cumprod_hand_case() {
        let v = DVector::from_row_slice(&[2.0, 3.0]);
        let c = cumprod(&v);
        assert_eq!(c[0], 2.0);
        assert_eq!(c[1], 6.0);
    }
}
