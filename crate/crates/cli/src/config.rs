//! Declarative run configuration (TOML or JSON) and its expansion into one or
//! more concrete model fits.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use facmix::data::PreprocessSpec;
use facmix::error::{Error, Result};
use facmix::mcmc::{McmcControl, ModelConfig, ModelKind};
use facmix::priors::{MgpHyper, ParamSpec, ProcessKind, ProcessPrior};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfigFile {
    /// Path to the CSV data file (relative paths resolve against the config
    /// file's directory).
    pub data: PathBuf,
    #[serde(default = "default_true")]
    pub has_header: bool,
    #[serde(default)]
    pub label_column: Option<String>,
    #[serde(default)]
    pub preprocess: PreprocessSpec,
    pub model: ModelSection,
    #[serde(default)]
    pub priors: PriorsSection,
    pub mcmc: McmcSection,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub kind: String,
    #[serde(default)]
    pub clusters: Option<usize>,
    #[serde(default)]
    pub cluster_range: Option<(usize, usize)>,
    #[serde(default)]
    pub factors: Option<usize>,
    #[serde(default)]
    pub factor_range: Option<(usize, usize)>,
    #[serde(default)]
    pub cluster_ceiling: Option<usize>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorsSection {
    #[serde(default)]
    pub uniqueness_shape: Option<f64>,
    #[serde(default)]
    pub isotropic: Option<bool>,
    #[serde(default)]
    pub mgp: Option<MgpSection>,
    #[serde(default)]
    pub process: Option<ProcessSection>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MgpSection {
    pub nu: Option<f64>,
    pub alpha1: Option<f64>,
    pub beta1: Option<f64>,
    pub alpha2: Option<f64>,
    pub beta2: Option<f64>,
    pub b0: Option<f64>,
    pub b1: Option<f64>,
    pub eps: Option<f64>,
    /// Fraction of near-zero entries at which a column counts as redundant;
    /// stored as floor(fraction * p) / p.
    pub prune_fraction: Option<f64>,
    pub adapt_after_burnin: Option<bool>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProcessSection {
    /// dp | py (infinite mixtures only; py is the default).
    pub kind: Option<String>,
    /// A number, or the string "learn".
    pub alpha: Option<ParamSpec>,
    pub alpha_hyper: Option<(f64, f64)>,
    pub discount: Option<ParamSpec>,
    pub discount_kappa: Option<f64>,
    pub discount_hyper: Option<(f64, f64)>,
    /// Total overfitted mass gamma; per-component mass is gamma / ceiling.
    pub overfit_mass: Option<f64>,
    pub rho: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McmcSection {
    pub iterations: usize,
    pub burnin: usize,
    #[serde(default = "default_thin")]
    pub thin: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_true")]
    pub store_loadings: bool,
    #[serde(default = "default_true")]
    pub label_switch_moves: bool,
    #[serde(default)]
    pub init: facmix::mcmc::InitMethod,
}

fn default_thin() -> usize {
    1
}

/// One concrete fit expanded from the configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridMember {
    pub name: String,
    pub kind: ModelKind,
    pub clusters: Option<usize>,
    pub factors: Option<usize>,
    pub seed: u64,
}

impl RunConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        let cfg: RunConfigFile = match path.extension().and_then(|e| e.to_str()) {
            Some("json") => serde_json::from_str(&text)
                .map_err(|e| Error::Validation(format!("config parse: {e}")))?,
            _ => toml::from_str(&text)
                .map_err(|e| Error::Validation(format!("config parse: {e}")))?,
        };
        Ok(cfg)
    }

    pub fn data_path(&self, config_path: &Path) -> PathBuf {
        if self.data.is_absolute() {
            self.data.clone()
        } else {
            config_path.parent().unwrap_or(Path::new(".")).join(&self.data)
        }
    }

    pub fn kind(&self) -> Result<ModelKind> {
        ModelKind::parse(&self.model.kind)
    }

    pub fn control(&self, seed_override: Option<u64>) -> McmcControl {
        McmcControl {
            n_iter: self.mcmc.iterations,
            burnin: self.mcmc.burnin,
            thin: self.mcmc.thin,
            seed: seed_override.unwrap_or(self.mcmc.seed),
            store_loadings: self.mcmc.store_loadings,
            label_switch_moves: self.mcmc.label_switch_moves,
            init: self.mcmc.init,
        }
    }

    /// Expand the configured ranges into concrete fits. Grid ranges are only
    /// legal where a range search is meaningful: a G x q grid for MFA, a G
    /// range for MIFA and a q range for FA.
    pub fn expand(&self, seed_override: Option<u64>) -> Result<Vec<GridMember>> {
        let kind = self.kind()?;
        let m = &self.model;
        let range_ok = |r: &Option<(usize, usize)>| -> Result<()> {
            if let Some((lo, hi)) = r {
                if lo > hi {
                    return Err(Error::Validation(format!("empty range [{lo}, {hi}]")));
                }
            }
            Ok(())
        };
        range_ok(&m.cluster_range)?;
        range_ok(&m.factor_range)?;

        let g_values: Vec<Option<usize>> = match kind {
            ModelKind::Fa | ModelKind::Ifa => {
                if m.clusters.is_some() || m.cluster_range.is_some() {
                    return Err(Error::Validation(format!(
                        "{} is a single-cluster model; drop `clusters`/`cluster_range`",
                        kind.name()
                    )));
                }
                vec![None]
            }
            ModelKind::Mfa | ModelKind::Mifa => match (&m.cluster_range, m.clusters) {
                (Some((lo, hi)), None) => (*lo..=*hi).map(Some).collect(),
                (None, Some(g)) => vec![Some(g)],
                (None, None) => {
                    return Err(Error::Validation(format!(
                        "{} needs `clusters` or `cluster_range`",
                        kind.name()
                    )))
                }
                (Some(_), Some(_)) => {
                    return Err(Error::Validation("give either `clusters` or `cluster_range`".into()))
                }
            },
            _ => {
                if m.cluster_range.is_some() {
                    return Err(Error::Validation(format!(
                        "{} infers the cluster count; a cluster range is not meaningful",
                        kind.name()
                    )));
                }
                vec![None]
            }
        };

        let q_values: Vec<Option<usize>> = if kind.adaptive_factors() {
            if m.factors.is_some() || m.factor_range.is_some() {
                return Err(Error::Validation(format!(
                    "{} infers the factor count; drop `factors`/`factor_range`",
                    kind.name()
                )));
            }
            vec![None]
        } else {
            match (&m.factor_range, m.factors) {
                (Some((lo, hi)), None) => {
                    if !matches!(kind, ModelKind::Fa | ModelKind::Mfa) {
                        return Err(Error::Validation(format!(
                            "factor ranges are only searched for FA and MFA, not {}",
                            kind.name()
                        )));
                    }
                    (*lo..=*hi).map(Some).collect()
                }
                (None, Some(q)) => vec![Some(q)],
                (None, None) => {
                    return Err(Error::Validation(format!(
                        "{} needs `factors` or `factor_range`",
                        kind.name()
                    )))
                }
                (Some(_), Some(_)) => {
                    return Err(Error::Validation("give either `factors` or `factor_range`".into()))
                }
            }
        };

        let root_seed = seed_override.unwrap_or(self.mcmc.seed);
        let root = facmix::dist::RngStream::new(root_seed);
        let mut members = Vec::new();
        for &g in &g_values {
            for &q in &q_values {
                let mut name = kind.name().to_lowercase();
                if let Some(g) = g {
                    name.push_str(&format!("_g{g}"));
                }
                if let Some(q) = q {
                    name.push_str(&format!("_q{q}"));
                }
                let seed = root.derive(members.len() as u64).seed();
                members.push(GridMember { name, kind, clusters: g, factors: q, seed });
            }
        }
        Ok(members)
    }

    /// Build the core model configuration for one grid member.
    pub fn model_config(&self, member: &GridMember, smallest_q: Option<usize>) -> Result<ModelConfig> {
        let mut cfg = ModelConfig::new(member.kind, self.control(Some(member.seed)));
        cfg.n_clusters = member.clusters;
        cfg.n_factors = member.factors;
        cfg.cluster_ceiling = self.model.cluster_ceiling;
        cfg.overfit_bound_q = smallest_q;
        if let Some(shape) = self.priors.uniqueness_shape {
            cfg.uniqueness_shape = shape;
        }
        cfg.isotropic = self.priors.isotropic;
        if member.kind.adaptive_factors() {
            if let Some(s) = &self.priors.mgp {
                // Fill a defaults struct; varsigma needs p, patched at resolve
                // time through `prune_fraction`.
                let mut h = MgpHyper::defaults(1);
                h.varsigma = 0.7;
                if let Some(v) = s.nu {
                    h.nu = v;
                }
                if let Some(v) = s.alpha1 {
                    h.alpha1 = v;
                }
                if let Some(v) = s.beta1 {
                    h.beta1 = v;
                }
                if let Some(v) = s.alpha2 {
                    h.alpha2 = v;
                }
                if let Some(v) = s.beta2 {
                    h.beta2 = v;
                }
                if let Some(v) = s.b0 {
                    h.b0 = v;
                }
                if let Some(v) = s.b1 {
                    h.b1 = v;
                }
                if let Some(v) = s.eps {
                    h.eps = v;
                }
                if let Some(v) = s.prune_fraction {
                    h.varsigma = v;
                }
                if let Some(v) = s.adapt_after_burnin {
                    h.adapt_after_burnin = v;
                }
                cfg.mgp = Some(h);
            }
        }
        let mut process = ProcessPrior::default();
        if let Some(s) = &self.priors.process {
            if let Some(kind) = &s.kind {
                process.kind = match kind.to_ascii_lowercase().as_str() {
                    "dp" => ProcessKind::Dp,
                    "py" => ProcessKind::Py,
                    other => {
                        return Err(Error::Validation(format!("unknown process kind `{other}`")))
                    }
                };
            }
            if let Some(a) = s.alpha {
                process.alpha = a;
            }
            if let Some(h) = s.alpha_hyper {
                process.alpha_hyper = h;
            }
            if let Some(d) = s.discount {
                process.discount = d;
            }
            if let Some(k) = s.discount_kappa {
                process.discount_hyper.0 = k;
            }
            if let Some((a, b)) = s.discount_hyper {
                process.discount_hyper.1 = a;
                process.discount_hyper.2 = b;
            }
            process.overfit_mass = s.overfit_mass;
            if let Some(r) = s.rho {
                process.rho = r;
            }
        }
        cfg.process = process;
        Ok(cfg)
    }

    /// Patch the MGP prune fraction to floor(f * p) / p once p is known.
    pub fn patch_mgp_for_p(cfg: &mut ModelConfig, p: usize) {
        if let Some(h) = &mut cfg.mgp {
            let f = h.varsigma;
            h.varsigma = ((f * p as f64).floor() / p as f64).max(1.0 / p as f64);
        }
    }

    /// Smallest factor count in the expansion (for the overfitted mass bound).
    pub fn smallest_q(members: &[GridMember]) -> Option<usize> {
        members.iter().filter_map(|m| m.factors).min()
    }
}

/// Configuration of the `simulate` command.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfigFile {
    pub n: usize,
    pub p: usize,
    pub clusters: usize,
    /// A common factor count, or one per cluster.
    pub factors: Factors,
    #[serde(default)]
    pub weights: Option<Vec<f64>>,
    pub separation: f64,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_replicates() -> usize {
    1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Factors {
    Common(usize),
    PerCluster(Vec<usize>),
}

impl SimConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        let cfg: SimConfigFile = match path.extension().and_then(|e| e.to_str()) {
            Some("json") => serde_json::from_str(&text)
                .map_err(|e| Error::Validation(format!("config parse: {e}")))?,
            _ => toml::from_str(&text)
                .map_err(|e| Error::Validation(format!("config parse: {e}")))?,
        };
        Ok(cfg)
    }

    pub fn spec(&self, seed: u64) -> facmix::data::SimSpec {
        let factors = match &self.factors {
            Factors::Common(q) => vec![*q; self.clusters],
            Factors::PerCluster(v) => v.clone(),
        };
        let weights = self
            .weights
            .clone()
            .unwrap_or_else(|| vec![1.0 / self.clusters as f64; self.clusters]);
        facmix::data::SimSpec {
            n: self.n,
            p: self.p,
            n_clusters: self.clusters,
            factors,
            weights,
            separation: self.separation,
            seed,
        }
    }
}
