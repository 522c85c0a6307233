use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::MetricsError;

/// Diagonal shrinkage added to every fitted covariance.
pub const SHRINK: f64 = 1e-6;
const PSD_TOL: f64 = 1e-8;

/// Mean and unbiased covariance of row vectors, with [`SHRINK`] on the
/// diagonal. Needs more rows than dimensions.
pub fn gaussian_moments(rows: &[Vec<f64>]) -> Result<(DVector<f64>, DMatrix<f64>), MetricsError> {
    let n = rows.len();
    let d = rows.first().map_or(0, Vec::len);
    if d == 0 {
        return Err(MetricsError::Empty("no embedding dimensions"));
    }
    if n < d + 1 {
        return Err(MetricsError::TooFew { need: d + 1, got: n });
    }
    let x = DMatrix::from_fn(n, d, |r, c| rows[r][c]);
    let mu = DVector::from_fn(d, |c, _| x.column(c).mean());
    let centered = DMatrix::from_fn(n, d, |r, c| x[(r, c)] - mu[c]);
    let mut cov = centered.transpose() * &centered / (n - 1) as f64;
    for i in 0..d {
        cov[(i, i)] += SHRINK;
    }
    Ok((mu, cov))
}

/// Symmetrized eigen-decomposition with eigenvalues clamped at zero.
/// Eigenvalues below `-PSD_TOL·scale` are rejected.
fn psd_eigen(m: &DMatrix<f64>) -> Result<SymmetricEigen<f64, nalgebra::Dyn>, MetricsError> {
    let sym = (m + m.transpose()) * 0.5;
    let scale = sym.diagonal().iter().fold(1.0f64, |a, v| a.max(v.abs()));
    let mut e = SymmetricEigen::new(sym);
    for l in e.eigenvalues.iter_mut() {
        if *l < -PSD_TOL * scale {
            return Err(MetricsError::NotPsd(*l));
        }
        *l = l.max(0.0);
    }
    Ok(e)
}

fn sqrtm(m: &DMatrix<f64>) -> Result<DMatrix<f64>, MetricsError> {
    let e = psd_eigen(m)?;
    let s = DMatrix::from_diagonal(&e.eigenvalues.map(f64::sqrt));
    Ok(&e.eigenvectors * s * e.eigenvectors.transpose())
}

/// `‖μ1−μ2‖² + tr(Σ1 + Σ2 − 2(Σ1Σ2)^½)`, with the trace of the square root
/// taken from the symmetric product `Σ1^½ Σ2 Σ1^½`.
pub fn frechet_distance(
    mu1: &DVector<f64>,
    s1: &DMatrix<f64>,
    mu2: &DVector<f64>,
    s2: &DMatrix<f64>,
) -> Result<f64, MetricsError> {
    let d = mu1.len();
    if mu2.len() != d || s1.shape() != (d, d) || s2.shape() != (d, d) {
        return Err(MetricsError::Shape("moment dimensions differ".into()));
    }
    let r1 = sqrtm(s1)?;
    let inner = &r1 * s2 * &r1;
    let tr_sqrt: f64 = psd_eigen(&inner)?.eigenvalues.iter().map(|l| l.sqrt()).sum();
    let diff = mu1 - mu2;
    let v = diff.dot(&diff) + s1.trace() + s2.trace() - 2.0 * tr_sqrt;
    Ok(v.max(0.0))
}

/// Fréchet distance between Gaussians fitted to two embedding sets.
pub fn fid(generated: &[Vec<f64>], reference: &[Vec<f64>]) -> Result<f64, MetricsError> {
    let (m1, s1) = gaussian_moments(generated)?;
    let (m2, s2) = gaussian_moments(reference)?;
    frechet_distance(&m1, &s1, &m2, &s2)
}
