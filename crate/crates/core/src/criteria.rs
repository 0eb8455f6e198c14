//! Model-selection criteria computed from the stored log-likelihood trace.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::priors::free_params_per_cluster;

/// Post-burn-in, thinned log-likelihood samples plus the model dimensions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CriteriaInput {
    pub loglik: Vec<f64>,
    pub n_obs: usize,
    pub p: usize,
    pub n_clusters: usize,
    /// Fixed number of factors; `None` for adaptive-factor models.
    pub q: Option<usize>,
}

impl CriteriaInput {
    fn check_loglik(&self, need: usize) -> Result<()> {
        if self.loglik.len() < need {
            return Err(Error::InsufficientSamples { need, got: self.loglik.len() });
        }
        if self.loglik.iter().any(|v| !v.is_finite()) {
            return Err(Error::Param("log-likelihood samples must be finite".into()));
        }
        Ok(())
    }
}

/// Effective number of parameters of a G-cluster, q-factor model on p variables.
pub fn effective_params(g: usize, q: usize, p: usize) -> usize {
    g * free_params_per_cluster(p, q) + g - 1
}

/// Formula core of BIC-MCMC, exposed for exact checks against hand values.
pub fn bic_mcmc_raw(max_loglik: f64, effective: f64, n_obs: f64) -> f64 {
    2.0 * max_loglik - effective * n_obs.ln()
}

/// Formula core of BICM.
pub fn bicm_raw(max_loglik: f64, loglik_var: f64, n_obs: f64) -> f64 {
    2.0 * max_loglik - 2.0 * loglik_var * n_obs.ln()
}

/// BIC-MCMC: 2 ln L~ - theta ln N, with L~ the largest stored log-likelihood.
/// Only defined for fixed-factor models.
pub fn bic_mcmc(input: &CriteriaInput) -> Result<f64> {
    let q = input.q.ok_or_else(|| {
        Error::CriterionMismatch("bic-mcmc needs a fixed factor count; use bicm for adaptive models".into())
    })?;
    input.check_loglik(1)?;
    let max = input.loglik.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let theta = effective_params(input.n_clusters, q, input.p) as f64;
    Ok(bic_mcmc_raw(max, theta, input.n_obs as f64))
}

/// BICM: 2 ln L~ - 2 s_l^2 ln N, with s_l^2 the sample variance of the stored
/// log-likelihoods. Needs at least two samples.
pub fn bicm(input: &CriteriaInput) -> Result<f64> {
    input.check_loglik(2)?;
    let max = input.loglik.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok(bicm_raw(max, sample_variance(&input.loglik), input.n_obs as f64))
}

/// Sample variance with N-1 denominator.
pub fn sample_variance(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::E;

    #[test]
    fn effective_params_hand_cases() {
        assert_eq!(effective_params(1, 0, 2), 4);
        assert_eq!(effective_params(2, 5, 8), 93);
    }

    #[test]
    fn bic_mcmc_hand_case() {
        // loglik (-10, -8, -9) with ln N = 1 and theta = 4: 2(-8) - 4 = -20.
        let v = bic_mcmc_raw(-8.0, 4.0, E);
        assert_relative_eq!(v, -20.0, epsilon = 1e-12);
        let input = CriteriaInput {
            loglik: vec![-10.0, -8.0, -9.0],
            n_obs: 3,
            p: 2,
            n_clusters: 1,
            q: Some(0),
        };
        let v = bic_mcmc(&input).unwrap();
        assert_relative_eq!(v, -16.0 - 4.0 * 3.0f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn bicm_hand_cases() {
        // Constant log-likelihood: zero variance, so bicm = 2c.
        let input = CriteriaInput { loglik: vec![-5.0, -5.0, -5.0], n_obs: 10, p: 3, n_clusters: 2, q: None };
        assert_relative_eq!(bicm(&input).unwrap(), -10.0, epsilon = 1e-12);
        // loglik (0, 2) with ln N = 1: var 2, bicm = 4 - 4 = 0.
        assert_relative_eq!(bicm_raw(2.0, 2.0, E), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn bicm_monotone_in_max() {
        let lo = CriteriaInput { loglik: vec![0.0, 2.0], n_obs: 5, p: 2, n_clusters: 1, q: None };
        let hi = CriteriaInput { loglik: vec![1.0, 3.0], n_obs: 5, p: 2, n_clusters: 1, q: None };
        assert!(bicm(&hi).unwrap() > bicm(&lo).unwrap());
    }

    #[test]
    fn bic_mcmc_order_invariant_and_decreasing_in_theta() {
        let a = CriteriaInput { loglik: vec![-3.0, -1.0, -2.0], n_obs: 20, p: 4, n_clusters: 2, q: Some(1) };
        let b = CriteriaInput { loglik: vec![-1.0, -2.0, -3.0], ..a.clone() };
        assert_eq!(bic_mcmc(&a).unwrap(), bic_mcmc(&b).unwrap());
        let bigger = CriteriaInput { q: Some(2), ..a.clone() };
        assert!(bic_mcmc(&bigger).unwrap() < bic_mcmc(&a).unwrap());
    }

    #[test]
    fn adaptive_model_rejected_by_bic_mcmc() {
        let input = CriteriaInput { loglik: vec![0.0, 1.0], n_obs: 5, p: 2, n_clusters: 2, q: None };
        assert!(matches!(bic_mcmc(&input), Err(Error::CriterionMismatch(_))));
    }

    #[test]
    fn single_sample_rejected_by_bicm() {
        let input = CriteriaInput { loglik: vec![0.0], n_obs: 5, p: 2, n_clusters: 1, q: None };
        assert!(matches!(bicm(&input), Err(Error::InsufficientSamples { .. })));
    }
}
