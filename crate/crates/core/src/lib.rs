//! Bayesian factor-analytic mixture clustering.
//!
//! A suite of eight related latent Gaussian models — FA, IFA, MFA, MIFA, OMFA,
//! OMIFA, IMFA and IMIFA — sharing one Gibbs/Metropolis sweep machine. The
//! infinite-factor kinds place a multiplicative gamma process shrinkage prior
//! on the loadings and adapt the per-cluster factor count during sampling; the
//! infinite-mixture kinds use Dirichlet or Pitman-Yor process priors with a
//! stick-breaking representation and an independent slice sampler, so the
//! number of clusters and the cluster-specific factor dimensions are inferred
//! in a single run.
//!
//! The crate also ships the supporting machinery: data ingestion and synthetic
//! generation, prior derivations, post-hoc identification (square-assignment
//! relabelling, Procrustes rotation), model-selection criteria and external
//! clustering metrics.

pub mod criteria;
pub mod data;
pub mod dist;
pub mod error;
pub mod mcmc;
pub mod metrics;
pub mod posthoc;
pub mod priors;

pub use data::{load_matrix, preprocess, simulate_mfa, Dataset, PreprocessSpec, ScaleMode, SimSpec};
pub use error::{Error, Result};
pub use mcmc::{fit, ChainTrace, McmcControl, ModelConfig, ModelKind, Sampler};
pub use posthoc::{summarize, PosteriorSummary, SummaryOptions};
