//! Orthogonal Procrustes alignment of sampled loadings to a template.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// An orthogonal rotation mapping a sampled loadings matrix onto a template.
#[derive(Debug, Clone)]
pub struct ProcrustesRotation {
    /// q x q orthogonal matrix R minimising ||sample R - template||_F.
    pub rotation: DMatrix<f64>,
    /// Set when the crossproduct was rank deficient; the rotation is still
    /// defined through the SVD but not unique.
    pub rank_deficient: bool,
}

/// R = U V' from the SVD of sample' template. No translation, scaling or
/// dilation — a rotation (possibly improper) only.
pub fn procrustes_rotation(sample: &DMatrix<f64>, template: &DMatrix<f64>) -> Result<ProcrustesRotation> {
    if sample.nrows() != template.nrows() || sample.ncols() != template.ncols() {
        return Err(Error::Shape(format!(
            "procrustes needs equal shapes, got {}x{} vs {}x{}",
            sample.nrows(),
            sample.ncols(),
            template.nrows(),
            template.ncols()
        )));
    }
    let q = sample.ncols();
    if q == 0 {
        return Ok(ProcrustesRotation { rotation: DMatrix::zeros(0, 0), rank_deficient: false });
    }
    let cross = sample.transpose() * template;
    let svd = cross.svd(true, true);
    let u = svd.u.as_ref().ok_or_else(|| Error::Factorization("svd returned no left factor".into()))?;
    let v_t = svd.v_t.as_ref().ok_or_else(|| Error::Factorization("svd returned no right factor".into()))?;
    let rotation = u * v_t;
    let max_sv = svd.singular_values.iter().cloned().fold(0.0f64, f64::max);
    let min_sv = svd.singular_values.iter().cloned().fold(f64::INFINITY, f64::min);
    let rank_deficient = !(min_sv > 1e-12 * max_sv.max(1e-300));
    Ok(ProcrustesRotation { rotation, rank_deficient })
}

/// Apply the rotation to a loadings matrix (Lambda R) and to the corresponding
/// factor-score rows (rows eta_i' become eta_i' R), leaving Lambda eta'
/// invariant.
pub fn apply_rotation(
    loadings: &DMatrix<f64>,
    scores: Option<&DMatrix<f64>>,
    rotation: &DMatrix<f64>,
) -> (DMatrix<f64>, Option<DMatrix<f64>>) {
    let rotated = loadings * rotation;
    let scores = scores.map(|s| s * rotation);
    (rotated, scores)
}
