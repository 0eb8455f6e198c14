//! Gaussian density with low-rank-plus-diagonal covariance.
//!
//! The mixture components have covariance Lambda Lambda' + Psi with diagonal
//! Psi. Evaluation goes through the Woodbury identity and the Cholesky factor
//! of the q x q matrix M = I + Lambda' Psi^{-1} Lambda, so the p x p inverse is
//! never materialised.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

const LN_2PI: f64 = 1.8378770664093453;

/// Prepared evaluator for MVN(mean, Lambda Lambda' + Psi).
#[derive(Debug, Clone)]
pub struct LowRankGaussian {
    mean: DVector<f64>,
    psi_inv: DVector<f64>,
    /// Lambda' Psi^{-1}, q x p.
    lt_psi_inv: DMatrix<f64>,
    /// Lower Cholesky factor of M (None when q = 0, where the density is diagonal).
    chol_l: Option<DMatrix<f64>>,
    /// -(p ln 2pi + ln|Sigma|) / 2.
    log_norm: f64,
}

impl LowRankGaussian {
    pub fn new(mean: DVector<f64>, loadings: &DMatrix<f64>, uniquenesses: &DVector<f64>) -> Result<Self> {
        let p = mean.len();
        let q = loadings.ncols();
        if loadings.nrows() != p || uniquenesses.len() != p {
            return Err(Error::Shape("inconsistent dimensions for low-rank gaussian".into()));
        }
        if uniquenesses.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::Param("uniquenesses must be positive".into()));
        }
        let psi_inv = DVector::from_fn(p, |j, _| 1.0 / uniquenesses[j]);
        let log_det_psi: f64 = uniquenesses.iter().map(|v| v.ln()).sum();

        let mut lt_psi_inv = loadings.transpose();
        for j in 0..p {
            lt_psi_inv.column_mut(j).scale_mut(psi_inv[j]);
        }

        let (chol_l, log_det) = if q == 0 {
            (None, log_det_psi)
        } else {
            let m = DMatrix::<f64>::identity(q, q) + &lt_psi_inv * loadings;
            let chol = m
                .cholesky()
                .ok_or_else(|| Error::Factorization("woodbury core matrix not positive definite".into()))?;
            let l = chol.l();
            let log_det_m: f64 = (0..q).map(|k| l[(k, k)].ln()).sum::<f64>() * 2.0;
            (Some(l), log_det_psi + log_det_m)
        };

        Ok(LowRankGaussian {
            mean,
            psi_inv,
            lt_psi_inv,
            chol_l,
            log_norm: -0.5 * (p as f64 * LN_2PI + log_det),
        })
    }

    /// Log density at x.
    pub fn logpdf(&self, x: &DVector<f64>) -> f64 {
        let r = x - &self.mean;
        let mut quad = 0.0;
        for j in 0..r.len() {
            quad += r[j] * r[j] * self.psi_inv[j];
        }
        if let Some(l) = &self.chol_l {
            let t = &self.lt_psi_inv * &r;
            // Solve L y = t; the correction is |y|^2.
            let y = l
                .solve_lower_triangular(&t)
                .expect("cholesky factor is nonsingular by construction");
            quad -= y.norm_squared();
        }
        self.log_norm - 0.5 * quad
    }
}

/// Numerically-stable log(sum(exp(xs))).
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let s: f64 = xs.iter().map(|x| (x - m).exp()).sum();
    m + s.ln()
}
