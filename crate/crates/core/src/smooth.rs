//! Covariance surface smoothing and diagonal repair.
//!
//! Both operations ignore the diagonal of the raw surface: in the presence of
//! white measurement noise the diagonal carries an extra `σ²` that the smooth
//! part of the covariance does not.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::grid::Grid;

/// Default Gaussian kernel bandwidth on the normalized domain.
pub const DEFAULT_BANDWIDTH: f64 = 0.05;

/// Number of off-diagonal neighbours used by [`repair_diagonal`].
const REPAIR_NEIGHBOURS: usize = 4;

fn check_square(s: &DMatrix<f64>, grid: &Grid) -> Result<()> {
    let m = grid.len();
    if s.nrows() != m || s.ncols() != m {
        return Err(Error::Dimension(format!(
            "{}×{} surface on a grid of {m} points",
            s.nrows(),
            s.ncols()
        )));
    }
    Ok(())
}

/// Two-dimensional Nadaraya–Watson smooth of a covariance surface with a
/// product Gaussian kernel.
///
/// Diagonal entries are excluded from the fit; the smooth is still evaluated
/// on the diagonal, which fills it with the limit of the off-diagonal surface.
pub fn smooth_covariance(s: &DMatrix<f64>, grid: &Grid, bandwidth: f64) -> Result<DMatrix<f64>> {
    if !(bandwidth > 0.0) || !bandwidth.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "bandwidth must be positive, got {bandwidth}"
        )));
    }
    check_square(s, grid)?;
    let m = grid.len();
    let p = grid.points();
    let kernel = DMatrix::from_fn(m, m, |i, a| {
        let u = (p[i] - p[a]) / bandwidth;
        (-0.5 * u * u).exp()
    });
    let mut off = s.clone();
    off.fill_diagonal(0.0);
    let mut mask = DMatrix::from_element(m, m, 1.0);
    mask.fill_diagonal(0.0);

    let num = &kernel * off * kernel.transpose();
    let den = &kernel * mask * kernel.transpose();
    let mut out = num.component_div(&den);
    for i in 0..m {
        for j in i + 1..m {
            let avg = 0.5 * (out[(i, j)] + out[(j, i)]);
            out[(i, j)] = avg;
            out[(j, i)] = avg;
        }
    }
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "bandwidth {bandwidth} is too small for this grid"
        )));
    }
    Ok(out)
}

/// Replace the diagonal of a surface by a local quadratic extrapolation of the
/// nearest off-diagonal entries in each row.
pub fn repair_diagonal(s: &DMatrix<f64>, grid: &Grid) -> Result<DMatrix<f64>> {
    check_square(s, grid)?;
    let m = grid.len();
    let p = grid.points();
    let mut out = s.clone();
    for i in 0..m {
        let mut nb: Vec<usize> = (0..m).filter(|&a| a != i).collect();
        nb.sort_by(|&a, &b| {
            (p[a] - p[i])
                .abs()
                .partial_cmp(&(p[b] - p[i]).abs())
                .expect("finite grid")
                .then(a.cmp(&b))
        });
        nb.truncate(REPAIR_NEIGHBOURS);
        let degree = (nb.len() - 1).min(2);
        let scale = (p[nb[0]] - p[i]).abs();
        let design = DMatrix::from_fn(nb.len(), degree + 1, |r, c| {
            ((p[nb[r]] - p[i]) / scale).powi(c as i32)
        });
        let rhs = DVector::from_iterator(nb.len(), nb.iter().map(|&a| 0.5 * (s[(i, a)] + s[(a, i)])));
        let coef = design
            .svd(true, true)
            .solve(&rhs, 1e-14)
            .map_err(|e| Error::InvalidParameter(format!("diagonal repair failed: {e}")))?;
        out[(i, i)] = coef[0];
    }
    Ok(out)
}
