//! Construction, validation and derivation of prior hyperparameters.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Inverse-gamma prior on the uniquenesses, with data-driven rates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UniquenessPrior {
    /// Shape; must exceed 1 for the rate derivation to be defined.
    pub shape: f64,
    pub rates: UniquenessRates,
    /// Set when isotropy was forced (N <= p or singular sample covariance).
    pub forced_isotropic: bool,
    /// Set when the pseudoinverse fallback replaced a requested plain inverse.
    pub pseudoinverse_fallback: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UniquenessRates {
    /// One rate per variable: beta_j = (shape - 1) / (S^{-1})_jj.
    PerVariable(Vec<f64>),
    /// A single shared rate (isotropic constraint, the PPCA link).
    Isotropic(f64),
}

impl UniquenessPrior {
    pub fn is_isotropic(&self) -> bool {
        matches!(self.rates, UniquenessRates::Isotropic(_))
    }

    /// Rate for variable `j`.
    pub fn rate(&self, j: usize) -> f64 {
        match &self.rates {
            UniquenessRates::PerVariable(v) => v[j],
            UniquenessRates::Isotropic(b) => *b,
        }
    }
}

/// Derive the uniqueness rates from the sample covariance.
///
/// Variable-specific rates use the diagonal of S^{-1}; the isotropic rate uses
/// the geometric mean of the diagonal of the Moore-Penrose pseudoinverse, which
/// matches the a-priori determinant of the unconstrained version. Isotropy is
/// forced when N <= p (S is singular there).
pub fn derive_uniqueness_rates(
    sample_cov: &DMatrix<f64>,
    shape: f64,
    isotropic: bool,
    n_obs: usize,
) -> Result<UniquenessPrior> {
    if !(shape > 1.0) {
        return Err(Error::Param(format!("uniqueness shape must exceed 1, got {shape}")));
    }
    let p = sample_cov.nrows();
    if !sample_cov.is_square() {
        return Err(Error::Shape("sample covariance must be square".into()));
    }
    let forced = n_obs <= p;
    let mut fallback = false;

    let inv_diag: Option<Vec<f64>> = if forced {
        None
    } else {
        match sample_cov.clone().cholesky() {
            Some(chol) => {
                let inv = chol.inverse();
                Some((0..p).map(|j| inv[(j, j)]).collect())
            }
            None => {
                fallback = true;
                None
            }
        }
    };

    if !isotropic && !forced {
        if let Some(diag) = &inv_diag {
            if diag.iter().all(|&d| d > 0.0) {
                let rates = diag.iter().map(|&d| (shape - 1.0) / d).collect();
                return Ok(UniquenessPrior {
                    shape,
                    rates: UniquenessRates::PerVariable(rates),
                    forced_isotropic: false,
                    pseudoinverse_fallback: false,
                });
            }
            fallback = true;
        }
    }

    // Isotropic rate via the pseudoinverse diagonal (equals the inverse when S
    // is nonsingular).
    let pinv_diag: Vec<f64> = match &inv_diag {
        Some(diag) if !fallback => diag.clone(),
        _ => {
            let eps = 1e-12 * sample_cov.amax().max(1.0);
            let pinv = sample_cov
                .clone()
                .pseudo_inverse(eps)
                .map_err(|e| Error::Factorization(format!("pseudoinverse failed: {e}")))?;
            (0..p).map(|j| pinv[(j, j)]).collect()
        }
    };
    if pinv_diag.iter().any(|&d| !(d > 0.0)) {
        return Err(Error::DegenerateColumn {
            name: "(pseudoinverse diagonal)".into(),
            detail: "non-positive diagonal entry; check for constant columns".into(),
        });
    }
    let mean_log: f64 = pinv_diag.iter().map(|d| d.ln()).sum::<f64>() / p as f64;
    let rate = (shape - 1.0) / mean_log.exp();
    Ok(UniquenessPrior {
        shape,
        rates: UniquenessRates::Isotropic(rate),
        forced_isotropic: forced || (!isotropic && fallback),
        pseudoinverse_fallback: fallback || forced,
    })
}

/// Multiplicative-gamma-process hyperparameters for the infinite-factor prior.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MgpHyper {
    /// Local shrinkage shape: phi ~ Ga(nu + 1, nu).
    pub nu: f64,
    /// First-column global multiplier: delta_1 ~ Ga(alpha1, beta1).
    pub alpha1: f64,
    pub beta1: f64,
    /// Later columns: delta_h ~ Ga(alpha2, beta2), h >= 2.
    pub alpha2: f64,
    pub beta2: f64,
    /// Adaptation-rate schedule p(t) = exp(-b0 - b1 t).
    pub b0: f64,
    pub b1: f64,
    /// Neighbourhood radius for the column-pruning rule.
    pub eps: f64,
    /// Proportion of near-zero entries at which a column counts as redundant.
    pub varsigma: f64,
    /// Only adapt once the burn-in has elapsed.
    pub adapt_after_burnin: bool,
}

impl MgpHyper {
    /// Defaults for a p-variable problem; varsigma = floor(0.7 p) / p.
    pub fn defaults(p: usize) -> Self {
        let varsigma = if p == 0 { 0.7 } else { (0.7 * p as f64).floor() / p as f64 };
        MgpHyper {
            nu: 3.0,
            alpha1: 2.1,
            beta1: 1.0,
            alpha2: 3.1,
            beta2: 1.0,
            b0: 0.1,
            b1: 5e-5,
            eps: 0.1,
            varsigma: varsigma.max(1.0 / p.max(1) as f64),
            adapt_after_burnin: false,
        }
    }
}

/// Check positivity and the cumulative-shrinkage condition alpha2 > beta2 + 1.
pub fn validate_mgp(h: &MgpHyper) -> Result<MgpHyper> {
    for (v, name) in [
        (h.nu, "nu"),
        (h.alpha1, "alpha1"),
        (h.beta1, "beta1"),
        (h.alpha2, "alpha2"),
        (h.beta2, "beta2"),
        (h.eps, "eps"),
    ] {
        if !(v > 0.0) {
            return Err(Error::Param(format!("mgp {name} must be positive, got {v}")));
        }
    }
    if h.b0 < 0.0 || h.b1 < 0.0 {
        return Err(Error::Param("mgp adaptation rates b0, b1 must be >= 0".into()));
    }
    if !(h.varsigma > 0.0 && h.varsigma <= 1.0) {
        return Err(Error::Param(format!("mgp varsigma must lie in (0, 1], got {}", h.varsigma)));
    }
    if !(h.alpha2 > h.beta2 + 1.0) {
        return Err(Error::ShrinkageCondition { alpha2: h.alpha2, limit: h.beta2 + 1.0 });
    }
    Ok(*h)
}

/// A fixed value or a request to learn the parameter under the given hyper-prior.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamSpec {
    Fixed(f64),
    Learn(LearnTag),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LearnTag {
    Learn,
}

impl ParamSpec {
    pub const LEARN: ParamSpec = ParamSpec::Learn(LearnTag::Learn);
    pub fn is_learned(&self) -> bool {
        matches!(self, ParamSpec::Learn(_))
    }
    pub fn fixed_value(&self) -> Option<f64> {
        match self {
            ParamSpec::Fixed(v) => Some(*v),
            ParamSpec::Learn(_) => None,
        }
    }
}

/// Which prior process generates the mixing weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProcessKind {
    /// Symmetric Dirichlet with unit mass per component.
    FiniteDirichlet,
    /// Deliberately overfitted mixture with tiny per-component mass.
    Overfitted,
    /// Dirichlet process (stick-breaking).
    Dp,
    /// Pitman-Yor process with discount d.
    Py,
}

/// Process-prior settings shared across the mixture kinds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProcessPrior {
    pub kind: ProcessKind,
    /// DP/PY concentration.
    pub alpha: ParamSpec,
    /// Gamma(a, b) hyper-prior used when alpha is learned.
    pub alpha_hyper: (f64, f64),
    /// PY discount in [0, 1).
    pub discount: ParamSpec,
    /// Point-mass weight kappa and Beta(a', b') used when the discount is learned.
    pub discount_hyper: (f64, f64, f64),
    /// Total mass gamma of the overfitted prior; per-component mass is gamma / G*.
    /// When absent, a default satisfying the emptying condition is derived.
    pub overfit_mass: Option<f64>,
    /// Geometric slice decay in (0, 1].
    pub rho: f64,
}

impl Default for ProcessPrior {
    fn default() -> Self {
        ProcessPrior {
            kind: ProcessKind::Py,
            alpha: ParamSpec::LEARN,
            alpha_hyper: (2.0, 1.0),
            discount: ParamSpec::LEARN,
            discount_hyper: (0.5, 1.0, 1.0),
            overfit_mass: None,
            rho: 0.75,
        }
    }
}

impl ProcessPrior {
    pub fn validate(&self) -> Result<()> {
        let (a, b) = self.alpha_hyper;
        if !(a > 0.0) || !(b > 0.0) {
            return Err(Error::Param("alpha hyper-prior parameters must be positive".into()));
        }
        let (kappa, ap, bp) = self.discount_hyper;
        if !(0.0..=1.0).contains(&kappa) || !(ap > 0.0) || !(bp > 0.0) {
            return Err(Error::Param("discount hyper-prior requires kappa in [0,1] and a', b' > 0".into()));
        }
        if !(self.rho > 0.0 && self.rho <= 1.0) {
            return Err(Error::Param(format!("slice decay rho must lie in (0, 1], got {}", self.rho)));
        }
        if let Some(g) = self.overfit_mass {
            if !(g > 0.0) {
                return Err(Error::Param("overfitted total mass must be positive".into()));
            }
        }
        let d = self.discount.fixed_value().unwrap_or(0.0);
        if !(0.0..1.0).contains(&d) {
            return Err(Error::Param(format!("discount must lie in [0, 1), got {d}")));
        }
        if let Some(alpha) = self.alpha.fixed_value() {
            if !(alpha > -d) {
                return Err(Error::Param(format!("need alpha > -discount, got alpha = {alpha}, d = {d}")));
            }
            if matches!(self.kind, ProcessKind::Dp | ProcessKind::FiniteDirichlet | ProcessKind::Overfitted)
                && !(alpha > 0.0)
            {
                return Err(Error::Param("concentration must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Initial truncation level for the adaptive sampler: min(floor(3 ln p), p, N-1).
pub fn init_truncation(p: usize, n: usize) -> usize {
    let by_p = (3.0 * (p as f64).ln()).floor().max(0.0) as usize;
    by_p.min(p).min(n.saturating_sub(1))
}

/// Conservative cluster ceiling: max(25, ceil(3 ln N)). Callers should override
/// downward when this is close to or exceeds N.
pub fn init_cluster_ceiling(n: usize) -> usize {
    let by_n = (3.0 * (n as f64).ln()).ceil() as usize;
    by_n.max(25)
}

/// Free parameters per cluster of a q-factor model on p variables:
/// pq - q(q-1)/2 + 2p (loadings net of rotation, plus mean and uniquenesses).
pub fn free_params_per_cluster(p: usize, q: usize) -> usize {
    p * q - q * q.saturating_sub(1) / 2 + 2 * p
}

/// Per-component Dirichlet mass for the overfitted prior.
///
/// With an explicit total mass gamma the mass is gamma / ceiling; the default
/// is 1e-2 * (d_free / 2) capped at 0.5 / ceiling, which keeps it far below the
/// emptying threshold d_free / 2.
pub fn overfitted_component_mass(
    total_mass: Option<f64>,
    ceiling: usize,
    d_free_smallest: usize,
) -> Result<f64> {
    let bound = d_free_smallest as f64 / 2.0;
    let mass = match total_mass {
        Some(g) => g / ceiling as f64,
        None => (1e-2 * bound).min(0.5 / ceiling as f64),
    };
    if !(mass > 0.0) {
        return Err(Error::Param("overfitted component mass must be positive".into()));
    }
    if mass >= bound {
        return Err(Error::Param(format!(
            "overfitted component mass {mass} must stay below d_free/2 = {bound}"
        )));
    }
    Ok(mass)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::{sample_gamma, RngStream};
    use approx::assert_relative_eq;
    use nalgebra::DVector;

    #[test]
    fn identity_cov_rates() {
        let s = DMatrix::<f64>::identity(2, 2);
        let prior = derive_uniqueness_rates(&s, 2.5, false, 100).unwrap();
        match prior.rates {
            UniquenessRates::PerVariable(ref r) => {
                assert_relative_eq!(r[0], 1.5, epsilon = 1e-12);
                assert_relative_eq!(r[1], 1.5, epsilon = 1e-12);
            }
            _ => panic!("expected per-variable rates"),
        }
    }

    #[test]
    fn isotropic_hand_case() {
        // S = diag(4, 1): pseudoinverse diagonal (1/4, 1), geometric mean 1/2,
        // so the single rate is 1.5 / 0.5 = 3.
        let s = DMatrix::from_diagonal(&DVector::from_row_slice(&[4.0, 1.0]));
        let prior = derive_uniqueness_rates(&s, 2.5, true, 100).unwrap();
        match prior.rates {
            UniquenessRates::Isotropic(r) => assert_relative_eq!(r, 3.0, epsilon = 1e-12),
            _ => panic!("expected isotropic rate"),
        }
    }

    #[test]
    fn isotropy_forced_when_n_le_p() {
        // Metabolomics shape: N = 18 << p; a singular covariance forces isotropy.
        let n = 18usize;
        let p = 30usize;
        let mut rng = RngStream::new(3);
        let x = DMatrix::from_fn(n, p, |_, _| crate::dist::sample_std_normal(&mut rng));
        let centered = {
            let mut c = x.clone();
            for j in 0..p {
                let m = c.column(j).sum() / n as f64;
                c.column_mut(j).add_scalar_mut(-m);
            }
            c
        };
        let s = centered.transpose() * centered / (n as f64 - 1.0);
        let prior = derive_uniqueness_rates(&s, 2.5, false, n).unwrap();
        assert!(prior.forced_isotropic);
        assert!(prior.is_isotropic());
        match prior.rates {
            UniquenessRates::Isotropic(r) => assert!(r > 0.0),
            _ => unreachable!(),
        }
    }

    #[test]
    fn shape_must_exceed_one() {
        let s = DMatrix::<f64>::identity(2, 2);
        assert!(derive_uniqueness_rates(&s, 1.0, false, 10).is_err());
    }

    #[test]
    fn isotropic_determinant_matching() {
        // p ln(beta_iso) == sum_j ln(beta_j) for nonsingular S.
        let s = DMatrix::from_row_slice(3, 3, &[2.0, 0.3, 0.1, 0.3, 1.5, 0.2, 0.1, 0.2, 1.0]);
        let per = derive_uniqueness_rates(&s, 2.5, false, 100).unwrap();
        let iso = derive_uniqueness_rates(&s, 2.5, true, 100).unwrap();
        let sum_log: f64 = match per.rates {
            UniquenessRates::PerVariable(ref r) => r.iter().map(|b| b.ln()).sum(),
            _ => panic!(),
        };
        let iso_log = match iso.rates {
            UniquenessRates::Isotropic(b) => 3.0 * b.ln(),
            _ => panic!(),
        };
        assert_relative_eq!(sum_log, iso_log, epsilon = 1e-8);
    }

    #[test]
    fn mgp_validation() {
        let mut h = MgpHyper::defaults(10);
        h.alpha2 = 3.0;
        h.beta2 = 1.0;
        assert!(validate_mgp(&h).is_ok());
        h.alpha2 = 2.0;
        assert!(matches!(validate_mgp(&h), Err(Error::ShrinkageCondition { .. })));
        let defaults = MgpHyper::defaults(50);
        assert!(validate_mgp(&defaults).is_ok());
        assert_relative_eq!(defaults.b0, 0.1);
        assert_relative_eq!(defaults.b1, 5e-5);
        assert_relative_eq!(defaults.eps, 0.1);
        let mut bad = defaults;
        bad.varsigma = 0.0;
        assert!(validate_mgp(&bad).is_err());
    }

    #[test]
    fn truncation_formula() {
        assert_eq!(init_truncation(50, 300), 11);
        assert_eq!(init_truncation(189, 18), 15);
        assert_eq!(init_truncation(2, 300), 2);
    }

    #[test]
    fn ceiling_formula() {
        assert_eq!(init_cluster_ceiling(572), 25);
        assert_eq!(init_cluster_ceiling(100_000), 35);
    }

    #[test]
    fn overfitted_mass_rule() {
        // Smallest zero-factor model on p = 8: d_free = 16, bound 8.
        let mass = overfitted_component_mass(None, 25, free_params_per_cluster(8, 0)).unwrap();
        assert_relative_eq!(mass, 0.02, epsilon = 1e-12);
        // Explicit gamma.
        let mass = overfitted_component_mass(Some(0.5), 25, 16).unwrap();
        assert_relative_eq!(mass, 0.02, epsilon = 1e-12);
        // Too-large gamma violates the emptying condition.
        assert!(overfitted_component_mass(Some(1000.0), 25, 16).is_err());
    }

    #[test]
    fn process_prior_validation() {
        let mut p = ProcessPrior::default();
        assert!(p.validate().is_ok());
        p.alpha = ParamSpec::Fixed(-0.5);
        p.discount = ParamSpec::Fixed(0.2);
        p.kind = ProcessKind::Py;
        assert!(p.validate().is_err()); // alpha <= -d fails only if alpha <= -0.2; -0.5 < -0.2
        p.alpha = ParamSpec::Fixed(-0.1);
        assert!(p.validate().is_ok()); // -0.1 > -0.2
        p.rho = 1.5;
        assert!(p.validate().is_err());
    }

    #[test]
    fn mgp_prior_tau_growth() {
        // Under the defaults the prior mean of tau_k is (a1/b1)(a2/b2)^{k-1};
        // Monte-Carlo means over 1e5 draws stay within 3 sigma per column.
        let h = MgpHyper::defaults(20);
        let mut rng = RngStream::new(42);
        let k_max = 4usize;
        let n = 100_000usize;
        let mut sums = vec![0.0f64; k_max];
        let mut sqs = vec![0.0f64; k_max];
        for _ in 0..n {
            let mut tau = 1.0;
            for k in 0..k_max {
                let (a, b) = if k == 0 { (h.alpha1, h.beta1) } else { (h.alpha2, h.beta2) };
                tau *= sample_gamma(&mut rng, a, b).unwrap();
                sums[k] += tau;
                sqs[k] += tau * tau;
            }
        }
        for k in 0..k_max {
            let expect = (h.alpha1 / h.beta1) * (h.alpha2 / h.beta2).powi(k as i32);
            let mean = sums[k] / n as f64;
            let var = (sqs[k] / n as f64 - mean * mean).max(0.0);
            let sigma = (var / n as f64).sqrt();
            assert!((mean - expect).abs() < 3.0 * sigma.max(1e-9), "k={k}: {mean} vs {expect}");
            if k > 0 {
                let prev = (h.alpha1 / h.beta1) * (h.alpha2 / h.beta2).powi(k as i32 - 1);
                assert!(expect > prev);
            }
        }
    }
}
