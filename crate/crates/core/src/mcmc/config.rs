//! Model configuration and its resolution against a concrete dataset.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::priors::{
    derive_uniqueness_rates, free_params_per_cluster, init_cluster_ceiling, init_truncation,
    overfitted_component_mass, validate_mgp, MgpHyper, ParamSpec, ProcessKind, ProcessPrior,
    UniquenessPrior,
};

/// The eight model kinds, from plain factor analysis to the infinite mixture
/// of infinite factor analysers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Fa,
    Ifa,
    Mfa,
    Mifa,
    Omfa,
    Omifa,
    Imfa,
    Imifa,
}

impl ModelKind {
    pub fn is_mixture(self) -> bool {
        !matches!(self, ModelKind::Fa | ModelKind::Ifa)
    }
    /// Does the number of factors adapt during sampling (MGP prior)?
    pub fn adaptive_factors(self) -> bool {
        matches!(self, ModelKind::Ifa | ModelKind::Mifa | ModelKind::Omifa | ModelKind::Imifa)
    }
    pub fn infinite(self) -> bool {
        matches!(self, ModelKind::Imfa | ModelKind::Imifa)
    }
    pub fn overfitted(self) -> bool {
        matches!(self, ModelKind::Omfa | ModelKind::Omifa)
    }
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Fa => "FA",
            ModelKind::Ifa => "IFA",
            ModelKind::Mfa => "MFA",
            ModelKind::Mifa => "MIFA",
            ModelKind::Omfa => "OMFA",
            ModelKind::Omifa => "OMIFA",
            ModelKind::Imfa => "IMFA",
            ModelKind::Imifa => "IMIFA",
        }
    }
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fa" => Ok(ModelKind::Fa),
            "ifa" => Ok(ModelKind::Ifa),
            "mfa" => Ok(ModelKind::Mfa),
            "mifa" => Ok(ModelKind::Mifa),
            "omfa" => Ok(ModelKind::Omfa),
            "omifa" => Ok(ModelKind::Omifa),
            "imfa" => Ok(ModelKind::Imfa),
            "imifa" => Ok(ModelKind::Imifa),
            other => Err(Error::Validation(format!("unknown model kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitMethod {
    /// Diagonal-covariance EM-GMM (falls back to k-means on failure).
    #[default]
    Gmm,
    Kmeans,
    Random,
}

/// Chain-length and bookkeeping controls.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct McmcControl {
    pub n_iter: usize,
    pub burnin: usize,
    pub thin: usize,
    pub seed: u64,
    #[serde(default = "default_true")]
    pub store_loadings: bool,
    #[serde(default = "default_true")]
    pub label_switch_moves: bool,
    #[serde(default)]
    pub init: InitMethod,
}

fn default_true() -> bool {
    true
}

impl McmcControl {
    pub fn validate(&self) -> Result<()> {
        if self.burnin >= self.n_iter {
            return Err(Error::Validation(format!(
                "burnin {} must be smaller than n_iter {}",
                self.burnin, self.n_iter
            )));
        }
        if self.thin == 0 {
            return Err(Error::Validation("thin must be >= 1".into()));
        }
        Ok(())
    }

    /// Number of samples the trace will hold.
    pub fn n_stored(&self) -> usize {
        (self.n_iter - self.burnin) / self.thin
    }
}

/// User-facing model configuration; `resolve` validates it against a dataset
/// and derives the data-driven hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelConfig {
    pub kind: ModelKind,
    /// Number of clusters for MFA/MIFA.
    pub n_clusters: Option<usize>,
    /// Number of factors for the fixed-factor kinds (FA/MFA/OMFA/IMFA); 0 allowed.
    pub n_factors: Option<usize>,
    /// Override of the overfitted/infinite cluster ceiling.
    pub cluster_ceiling: Option<usize>,
    /// Uniqueness inverse-gamma shape (must exceed 1).
    pub uniqueness_shape: f64,
    /// Force or forbid the isotropic constraint; `None` = automatic (forced when N <= p).
    pub isotropic: Option<bool>,
    /// MGP hyperparameters for the adaptive kinds; `None` = defaults for p.
    pub mgp: Option<MgpHyper>,
    pub process: ProcessPrior,
    /// Factor count used for the overfitted emptying bound (smallest model in a
    /// grid); defaults to this model's own factor count.
    pub overfit_bound_q: Option<usize>,
    pub control: McmcControl,
}

impl ModelConfig {
    pub fn new(kind: ModelKind, control: McmcControl) -> Self {
        ModelConfig {
            kind,
            n_clusters: None,
            n_factors: None,
            cluster_ceiling: None,
            uniqueness_shape: 2.5,
            isotropic: None,
            mgp: None,
            process: ProcessPrior::default(),
            overfit_bound_q: None,
            control,
        }
    }

    /// Validate and derive every data-dependent hyperparameter.
    pub fn resolve(&self, data: &Dataset) -> Result<Resolved> {
        self.control.validate()?;
        self.process.validate()?;
        let n = data.n();
        let p = data.p();

        let q_fixed = if self.kind.adaptive_factors() {
            None
        } else {
            let q = self.n_factors.ok_or_else(|| {
                Error::Validation(format!("{} needs an explicit factor count", self.kind.name()))
            })?;
            if q > p {
                return Err(Error::Validation(format!("q = {q} exceeds p = {p}")));
            }
            Some(q)
        };
        let q_init = match q_fixed {
            Some(q) => q,
            None => init_truncation(p, n),
        };

        let g_init = match self.kind {
            ModelKind::Fa | ModelKind::Ifa => {
                if self.n_clusters.is_some_and(|g| g != 1) {
                    return Err(Error::Validation(format!("{} is a single-cluster model", self.kind.name())));
                }
                1
            }
            ModelKind::Mfa | ModelKind::Mifa => {
                let g = self.n_clusters.ok_or_else(|| {
                    Error::Validation(format!("{} needs an explicit cluster count", self.kind.name()))
                })?;
                if g == 0 || g > n {
                    return Err(Error::Validation(format!("cluster count {g} out of range 1..={n}")));
                }
                g
            }
            ModelKind::Omfa | ModelKind::Omifa | ModelKind::Imfa | ModelKind::Imifa => {
                match self.cluster_ceiling {
                    Some(g) => {
                        if g < 2 || g > n {
                            return Err(Error::Validation(format!(
                                "cluster ceiling {g} out of range 2..={n}"
                            )));
                        }
                        g
                    }
                    None => {
                        let g = init_cluster_ceiling(n);
                        // When the default ceiling crowds the sample size, start
                        // near ln(N) instead.
                        if g >= n {
                            ((n as f64).ln().ceil() as usize).clamp(2, n)
                        } else {
                            g
                        }
                    }
                }
            }
        };

        let process_kind = match self.kind {
            ModelKind::Fa | ModelKind::Ifa => None,
            ModelKind::Mfa | ModelKind::Mifa => Some(ProcessKind::FiniteDirichlet),
            ModelKind::Omfa | ModelKind::Omifa => Some(ProcessKind::Overfitted),
            ModelKind::Imfa | ModelKind::Imifa => match self.process.kind {
                ProcessKind::Dp => Some(ProcessKind::Dp),
                ProcessKind::Py => Some(ProcessKind::Py),
                other => {
                    return Err(Error::Validation(format!(
                        "{} requires a dp or py process prior, got {other:?}",
                        self.kind.name()
                    )))
                }
            },
        };

        let dirichlet_mass = match process_kind {
            Some(ProcessKind::FiniteDirichlet) => Some(1.0),
            Some(ProcessKind::Overfitted) => {
                let bound_q = self
                    .overfit_bound_q
                    .or(q_fixed)
                    .unwrap_or(0);
                let d_free = free_params_per_cluster(p, bound_q);
                Some(overfitted_component_mass(self.process.overfit_mass, g_init, d_free)?)
            }
            _ => None,
        };

        let infinite = self.kind.infinite();
        if infinite && !(self.process.rho < 1.0) {
            return Err(Error::Validation("slice decay rho must be < 1 for infinite mixtures".into()));
        }

        let uniq = derive_uniqueness_rates(
            &data.sample_cov(),
            self.uniqueness_shape,
            self.isotropic.unwrap_or(false),
            n,
        )?;
        if self.isotropic == Some(false) && uniq.forced_isotropic {
            return Err(Error::Validation(
                "isotropic uniquenesses are required when N <= p or S is singular".into(),
            ));
        }

        let mgp = if self.kind.adaptive_factors() {
            let h = self.mgp.unwrap_or_else(|| MgpHyper::defaults(p));
            Some(validate_mgp(&h)?)
        } else {
            None
        };

        let mean_prior = MeanPrior::from_data(data)?;

        Ok(Resolved {
            kind: self.kind,
            n,
            p,
            g_init,
            q_init,
            q_fixed,
            uniq,
            mean_prior,
            mgp,
            process_kind,
            dirichlet_mass,
            alpha: self.process.alpha,
            alpha_hyper: self.process.alpha_hyper,
            discount: self.process.discount,
            discount_hyper: self.process.discount_hyper,
            rho: self.process.rho,
            control: self.control.clone(),
        })
    }
}

/// Data-driven multivariate normal prior on the cluster means: the sample mean
/// and sample covariance (diagonal when N <= p, where S is singular).
#[derive(Debug, Clone)]
pub struct MeanPrior {
    pub mean: DVector<f64>,
    pub cov: MeanCov,
}

#[derive(Debug, Clone)]
pub enum MeanCov {
    Diag { var: DVector<f64> },
    Full { prec: DMatrix<f64>, chol_l: DMatrix<f64> },
}

impl MeanPrior {
    pub fn from_data(data: &Dataset) -> Result<Self> {
        let mean = data.column_means();
        let s = data.sample_cov();
        let p = data.p();
        if data.n() > p {
            if let Some(chol) = s.clone().cholesky() {
                return Ok(MeanPrior {
                    mean,
                    cov: MeanCov::Full { prec: chol.inverse(), chol_l: chol.l() },
                });
            }
        }
        let var = DVector::from_fn(p, |j, _| s[(j, j)]);
        if var.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::DegenerateColumn {
                name: "(sample variance)".into(),
                detail: "zero-variance column in the mean prior".into(),
            });
        }
        Ok(MeanPrior { mean, cov: MeanCov::Diag { var } })
    }
}

/// A fully resolved model: dimensions checked, hyperparameters derived.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub kind: ModelKind,
    pub n: usize,
    pub p: usize,
    /// Instantiated clusters at initialisation: 1, the fixed G, or the ceiling.
    pub g_init: usize,
    /// Per-cluster truncation at initialisation.
    pub q_init: usize,
    /// Fixed factor count for the non-adaptive kinds.
    pub q_fixed: Option<usize>,
    pub uniq: UniquenessPrior,
    pub mean_prior: MeanPrior,
    pub mgp: Option<MgpHyper>,
    pub process_kind: Option<ProcessKind>,
    /// Per-component Dirichlet mass for finite/overfitted mixtures.
    pub dirichlet_mass: Option<f64>,
    pub alpha: ParamSpec,
    pub alpha_hyper: (f64, f64),
    pub discount: ParamSpec,
    pub discount_hyper: (f64, f64, f64),
    pub rho: f64,
    pub control: McmcControl,
}

impl Resolved {
    pub fn infinite(&self) -> bool {
        self.kind.infinite()
    }
    pub fn adaptive_factors(&self) -> bool {
        self.kind.adaptive_factors()
    }
    /// Geometric slice level for 0-based cluster index g.
    pub fn xi(&self, g: usize) -> f64 {
        (1.0 - self.rho) * self.rho.powi(g as i32)
    }
    pub fn learn_alpha(&self) -> bool {
        self.infinite() && self.alpha.is_learned()
    }
    pub fn learn_discount(&self) -> bool {
        self.infinite() && self.process_kind == Some(ProcessKind::Py) && self.discount.is_learned()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{simulate_mfa, SimSpec};

    fn control() -> McmcControl {
        McmcControl {
            n_iter: 100,
            burnin: 10,
            thin: 1,
            seed: 1,
            store_loadings: true,
            label_switch_moves: true,
            init: InitMethod::Kmeans,
        }
    }

    fn toy_data(n: usize, p: usize) -> crate::data::Dataset {
        let spec = SimSpec::balanced(n, p, 2, 1, 1.0, 3);
        simulate_mfa(&spec).unwrap().0
    }

    #[test]
    fn fa_forces_single_cluster() {
        let data = toy_data(40, 4);
        let mut cfg = ModelConfig::new(ModelKind::Fa, control());
        cfg.n_factors = Some(2);
        let r = cfg.resolve(&data).unwrap();
        assert_eq!(r.g_init, 1);
        assert_eq!(r.q_fixed, Some(2));
        cfg.n_clusters = Some(3);
        assert!(cfg.resolve(&data).is_err());
    }

    #[test]
    fn imifa_dimensions() {
        // N = 300, p = 50 would give q_init 11; here check the formula path on
        // a smaller set: p = 20 -> floor(3 ln 20) = 8.
        let data = toy_data(60, 20);
        let cfg = ModelConfig::new(ModelKind::Imifa, control());
        let r = cfg.resolve(&data).unwrap();
        assert_eq!(r.q_init, 8);
        assert_eq!(r.g_init, 25);
        assert!(r.mgp.is_some());
        assert!(r.dirichlet_mass.is_none());
    }

    #[test]
    fn small_sample_ceiling_shrinks() {
        let data = toy_data(18, 4);
        let cfg = ModelConfig::new(ModelKind::Imifa, control());
        let r = cfg.resolve(&data).unwrap();
        assert!(r.g_init <= 18, "ceiling {} must stay below N", r.g_init);
        // Explicit override above N is rejected.
        let mut cfg2 = cfg.clone();
        cfg2.cluster_ceiling = Some(30);
        assert!(cfg2.resolve(&data).is_err());
    }

    #[test]
    fn burnin_must_precede_end() {
        let data = toy_data(30, 3);
        let mut ctl = control();
        ctl.burnin = 200;
        let mut cfg = ModelConfig::new(ModelKind::Mfa, ctl);
        cfg.n_clusters = Some(2);
        cfg.n_factors = Some(1);
        assert!(cfg.resolve(&data).is_err());
    }

    #[test]
    fn overfitted_mass_derived() {
        let data = toy_data(60, 8);
        let mut cfg = ModelConfig::new(ModelKind::Omifa, control());
        cfg.cluster_ceiling = Some(25);
        let r = cfg.resolve(&data).unwrap();
        // Zero-factor bound on p = 8 gives the 0.02 cap.
        assert!((r.dirichlet_mass.unwrap() - 0.02).abs() < 1e-12);
    }

    #[test]
    fn stored_sample_count() {
        let ctl = McmcControl { n_iter: 12, burnin: 10, thin: 1, ..control() };
        assert_eq!(ctl.n_stored(), 2);
        let ctl = McmcControl { n_iter: 50_000, burnin: 10_000, thin: 2, ..control() };
        assert_eq!(ctl.n_stored(), 20_000);
    }
}
