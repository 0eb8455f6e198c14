//! Chain state: every latent variable and parameter at one iteration.

use nalgebra::{DMatrix, DVector};

/// Parameters of one mixture component.
#[derive(Debug, Clone)]
pub struct ClusterState {
    pub mean: DVector<f64>,
    /// p x q_g loadings; the column count is this cluster's truncation level.
    pub loadings: DMatrix<f64>,
    /// Uniquenesses (all entries equal under the isotropic constraint).
    pub uniquenesses: DVector<f64>,
    /// Local shrinkage multipliers, p x q_g (empty for fixed-factor kinds).
    pub local_shrink: DMatrix<f64>,
    /// Column-wise shrinkage multipliers (delta), length q_g.
    pub shrink_mult: DVector<f64>,
    /// Column precisions: cumulative products of `shrink_mult`.
    pub col_prec: DVector<f64>,
}

impl ClusterState {
    pub fn q(&self) -> usize {
        self.loadings.ncols()
    }
}

/// Full sampler state.
#[derive(Debug, Clone)]
pub struct ChainState {
    pub clusters: Vec<ClusterState>,
    /// 0-based cluster label per observation.
    pub labels: Vec<usize>,
    /// Occupancy per instantiated cluster.
    pub counts: Vec<usize>,
    /// N x qmax factor scores; row i is zero beyond the truncation of its cluster.
    pub scores: DMatrix<f64>,
    /// Mixing proportions over the instantiated clusters.
    pub weights: Vec<f64>,
    /// Stick proportions (infinite kinds only; empty otherwise).
    pub sticks: Vec<f64>,
    /// Slice variables, one per observation (infinite kinds only).
    pub slice_u: Vec<f64>,
    /// Process concentration.
    pub alpha: f64,
    /// Pitman-Yor discount (0 under a Dirichlet process).
    pub discount: f64,
}

impl ChainState {
    pub fn n_clusters(&self) -> usize {
        self.clusters.len()
    }

    pub fn qmax(&self) -> usize {
        self.scores.ncols()
    }

    /// Number of non-empty clusters.
    pub fn count_nonempty(&self) -> usize {
        self.counts.iter().filter(|&&c| c > 0).count()
    }

    /// Recompute `counts` from `labels`.
    pub fn refresh_counts(&mut self) {
        self.counts = vec![0; self.clusters.len()];
        for &z in &self.labels {
            self.counts[z] += 1;
        }
    }

    /// Per-cluster member lists.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut members = vec![Vec::new(); self.clusters.len()];
        for (i, &z) in self.labels.iter().enumerate() {
            members[z].push(i);
        }
        members
    }

    /// Truncation level per cluster.
    pub fn factor_counts(&self) -> Vec<usize> {
        self.clusters.iter().map(|c| c.q()).collect()
    }
}
