//! Seedable random streams and the sampling primitives shared by all MCMC updates.
//!
//! Every draw in the crate flows through [`RngStream`], a ChaCha-based generator
//! that can spawn statistically independent, reproducible sub-streams for
//! parallel sections (replicate simulations, grid fits).

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta as BetaDist, Distribution, Gamma as GammaDist, StandardNormal};

use crate::error::{Error, Result};

/// SplitMix64 finalizer, used to derive child seeds.
fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// A seedable random stream with reproducible sub-stream derivation.
///
/// Identical seeds produce identical draw sequences. `derive(tag)` yields a
/// stream whose output is independent of the parent's for distinct tags, so
/// parallel workers can own their own generator without coordination.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        RngStream { seed, rng: ChaCha8Rng::seed_from_u64(splitmix64(seed)) }
    }

    /// Derive an independent child stream identified by `tag`.
    pub fn derive(&self, tag: u64) -> Self {
        let child = splitmix64(self.seed ^ splitmix64(tag.wrapping_add(0x5851_f42d_4c95_7f2d)));
        RngStream::new(child)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Uniform draw on the open interval (0, 1).
    pub fn open01(&mut self) -> f64 {
        loop {
            let u: f64 = self.rng.random();
            if u > 0.0 {
                return u;
            }
        }
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }
    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }
    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.rng.fill_bytes(dest)
    }
}

/// Scalar distributions used by the prior and posterior updates.
///
/// Gamma and inverse-gamma are parameterised by shape and *rate* throughout.
#[derive(Debug, Clone, Copy)]
pub enum ScalarDist {
    Gamma { shape: f64, rate: f64 },
    InverseGamma { shape: f64, rate: f64 },
    Beta { a: f64, b: f64 },
    Uniform { lo: f64, hi: f64 },
}

pub fn sample_scalar(rng: &mut RngStream, dist: ScalarDist) -> Result<f64> {
    match dist {
        ScalarDist::Gamma { shape, rate } => sample_gamma(rng, shape, rate),
        ScalarDist::InverseGamma { shape, rate } => sample_inverse_gamma(rng, shape, rate),
        ScalarDist::Beta { a, b } => sample_beta(rng, a, b),
        ScalarDist::Uniform { lo, hi } => sample_uniform(rng, lo, hi),
    }
}

pub fn sample_std_normal(rng: &mut RngStream) -> f64 {
    StandardNormal.sample(rng)
}

/// Gamma(shape, rate). Valid for any shape > 0, including shape < 1.
pub fn sample_gamma(rng: &mut RngStream, shape: f64, rate: f64) -> Result<f64> {
    if !(shape > 0.0) || !(rate > 0.0) {
        return Err(Error::Param(format!("gamma requires shape, rate > 0 (got {shape}, {rate})")));
    }
    let g = GammaDist::new(shape, 1.0 / rate)
        .map_err(|e| Error::Param(format!("gamma({shape}, rate {rate}): {e}")))?;
    Ok(g.sample(rng))
}

/// Inverse-gamma(shape, rate) with density proportional to x^{-shape-1} exp(-rate/x).
pub fn sample_inverse_gamma(rng: &mut RngStream, shape: f64, rate: f64) -> Result<f64> {
    loop {
        let g = sample_gamma(rng, shape, rate)?;
        if g > 0.0 {
            return Ok(1.0 / g);
        }
    }
}

pub fn sample_beta(rng: &mut RngStream, a: f64, b: f64) -> Result<f64> {
    if !(a > 0.0) || !(b > 0.0) {
        return Err(Error::Param(format!("beta requires a, b > 0 (got {a}, {b})")));
    }
    let d = BetaDist::new(a, b).map_err(|e| Error::Param(format!("beta({a}, {b}): {e}")))?;
    Ok(d.sample(rng))
}

pub fn sample_uniform(rng: &mut RngStream, lo: f64, hi: f64) -> Result<f64> {
    if !(lo < hi) {
        return Err(Error::Param(format!("uniform requires lo < hi (got {lo}, {hi})")));
    }
    Ok(lo + (hi - lo) * rng.random::<f64>())
}

/// Dirichlet draw via normalised gamma variates. Returns a simplex vector.
pub fn sample_dirichlet(rng: &mut RngStream, alphas: &[f64]) -> Result<Vec<f64>> {
    if alphas.is_empty() {
        return Err(Error::Param("dirichlet requires at least one concentration".into()));
    }
    let mut draws = Vec::with_capacity(alphas.len());
    let mut total = 0.0;
    for &a in alphas {
        let g = sample_gamma(rng, a, 1.0)?;
        total += g;
        draws.push(g);
    }
    if !(total > 0.0) {
        return Err(Error::Param("dirichlet draw underflowed to zero mass".into()));
    }
    for d in &mut draws {
        *d /= total;
    }
    Ok(draws)
}

/// How the spread of a multivariate normal is supplied.
#[derive(Debug, Clone)]
pub enum MvnForm {
    Covariance(DMatrix<f64>),
    Precision(DMatrix<f64>),
}

/// A multivariate normal specification; the matrix must be symmetric positive definite.
#[derive(Debug, Clone)]
pub struct MvnSpec {
    pub mean: DVector<f64>,
    pub form: MvnForm,
}

impl MvnSpec {
    pub fn validate(&self) -> Result<()> {
        let m = match &self.form {
            MvnForm::Covariance(m) | MvnForm::Precision(m) => m,
        };
        if !m.is_square() || m.nrows() != self.mean.len() {
            return Err(Error::Shape(format!(
                "mvn matrix is {}x{} for a mean of length {}",
                m.nrows(),
                m.ncols(),
                self.mean.len()
            )));
        }
        let scale = m.amax().max(1.0);
        for i in 0..m.nrows() {
            for j in (i + 1)..m.ncols() {
                if (m[(i, j)] - m[(j, i)]).abs() > 1e-10 * scale {
                    return Err(Error::Param(format!(
                        "mvn matrix not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Draw from MVN(mean, covariance) or, in precision form, solve through the
/// Cholesky factor of the precision without ever inverting it.
pub fn sample_mvn(rng: &mut RngStream, spec: &MvnSpec) -> Result<DVector<f64>> {
    spec.validate()?;
    match &spec.form {
        MvnForm::Covariance(cov) => {
            let chol = cov
                .clone()
                .cholesky()
                .ok_or_else(|| Error::Factorization("mvn covariance not positive definite".into()))?;
            let z = DVector::from_fn(spec.mean.len(), |_, _| sample_std_normal(rng));
            Ok(&spec.mean + chol.l() * z)
        }
        MvnForm::Precision(prec) => {
            let chol = prec
                .clone()
                .cholesky()
                .ok_or_else(|| Error::Factorization("mvn precision not positive definite".into()))?;
            let z = DVector::from_fn(spec.mean.len(), |_, _| sample_std_normal(rng));
            let noise = solve_upper(&chol.l().transpose(), &z)?;
            Ok(&spec.mean + noise)
        }
    }
}

/// Draw from the canonical-form MVN with precision `prec` and shift `shift`,
/// i.e. mean = prec^{-1} shift and covariance = prec^{-1}. The Cholesky factor
/// of the precision is used for both the solve and the noise.
pub fn sample_mvn_canonical(
    rng: &mut RngStream,
    prec: &DMatrix<f64>,
    shift: &DVector<f64>,
) -> Result<DVector<f64>> {
    let chol = prec
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Factorization("canonical mvn precision not positive definite".into()))?;
    let mean = chol.solve(shift);
    let z = DVector::from_fn(shift.len(), |_, _| sample_std_normal(rng));
    let noise = solve_upper(&chol.l().transpose(), &z)?;
    Ok(mean + noise)
}

fn solve_upper(upper: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    upper
        .solve_upper_triangular(b)
        .ok_or_else(|| Error::Factorization("singular triangular solve".into()))
}

/// Gumbel-max draw from unnormalised log-weights; entries may be -inf.
///
/// Returns the 0-based index of the selected category. The induced
/// distribution is the softmax of the log-weights, and the draw is exactly
/// invariant to adding a constant to every weight.
pub fn gumbel_max_categorical(rng: &mut RngStream, log_weights: &[f64]) -> Result<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (idx, &lw) in log_weights.iter().enumerate() {
        if lw == f64::NEG_INFINITY {
            continue;
        }
        let u = rng.open01();
        let gumbel = -(-u.ln()).ln();
        let score = lw + gumbel;
        if best.map_or(true, |(_, b)| score > b) {
            best = Some((idx, score));
        }
    }
    best.map(|(idx, _)| idx).ok_or(Error::NoSupport)
}

/// Natural log of the gamma function.
pub fn ln_gamma(x: f64) -> f64 {
    libm::lgamma(x)
}

/// log Beta(a, b) = ln Γ(a) + ln Γ(b) − ln Γ(a+b).
pub fn ln_beta_fn(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

/// Log density of Beta(a, b) at v in (0, 1).
pub fn beta_logpdf(v: f64, a: f64, b: f64) -> f64 {
    if v <= 0.0 || v >= 1.0 {
        return f64::NEG_INFINITY;
    }
    (a - 1.0) * v.ln() + (b - 1.0) * (1.0 - v).ln() - ln_beta_fn(a, b)
}

/// Log density of Gamma(shape, rate) at x > 0.
pub fn gamma_logpdf(x: f64, shape: f64, rate: f64) -> f64 {
    if x <= 0.0 {
        return f64::NEG_INFINITY;
    }
    shape * rate.ln() - ln_gamma(shape) + (shape - 1.0) * x.ln() - rate * x
}
