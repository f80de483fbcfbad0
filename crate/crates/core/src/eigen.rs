//! Quadrature-weighted eigendecomposition of covariance surfaces.
//!
//! A covariance surface `S` tabulated on a grid with weights `w` acts on
//! functions as `(S f)(s) ≈ Σ_t S(s, t) w_t f(t)`. Its eigenpairs are obtained
//! from the symmetric matrix `W^{1/2} S W^{1/2}`; mapping the eigenvectors back
//! through `W^{-1/2}` yields eigenfunctions that are orthonormal under the grid
//! quadrature, and the eigenvalues are those of the integral operator.

use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::grid::{Curve, Grid};

/// Relative cutoff below which eigenvalues count as zero.
pub const RELATIVE_EIGEN_CUTOFF: f64 = 1e-12;

const SYMMETRY_TOL: f64 = 1e-8;

/// Nonincreasing, positive eigenvalues with L²-orthonormal eigenfunctions.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenSystem {
    grid: Arc<Grid>,
    eigenvalues: Vec<f64>,
    /// `m × K`, one eigenfunction per column.
    functions: DMatrix<f64>,
    pve: Vec<f64>,
    trimmed: usize,
}

impl EigenSystem {
    /// Assemble from stored parts (used when reading fits back from disk).
    pub fn from_parts(
        grid: Arc<Grid>,
        eigenvalues: Vec<f64>,
        functions: DMatrix<f64>,
        pve: Vec<f64>,
        trimmed: usize,
    ) -> Result<Self> {
        let k = eigenvalues.len();
        if functions.nrows() != grid.len() || functions.ncols() != k || pve.len() != k {
            return Err(Error::Dimension(format!(
                "{k} eigenvalues, {} pve entries, {}×{} eigenfunctions on {} grid points",
                pve.len(),
                functions.nrows(),
                functions.ncols(),
                grid.len()
            )));
        }
        Ok(EigenSystem {
            grid,
            eigenvalues,
            functions,
            pve,
            trimmed,
        })
    }

    /// System with no components.
    pub fn empty(grid: Arc<Grid>, trimmed: usize) -> Self {
        let m = grid.len();
        EigenSystem {
            grid,
            eigenvalues: Vec::new(),
            functions: DMatrix::zeros(m, 0),
            pve: Vec::new(),
            trimmed,
        }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Eigenfunctions as the columns of an `m × K` matrix.
    pub fn functions(&self) -> &DMatrix<f64> {
        &self.functions
    }

    pub fn eigenfunction(&self, a: usize) -> Curve {
        Curve::new(self.grid.clone(), self.functions.column(a).iter().copied().collect())
            .expect("eigenfunction matches grid")
    }

    /// Cumulative proportion of variance explained.
    pub fn pve(&self) -> &[f64] {
        &self.pve
    }

    /// Number of eigenpairs dropped as negative or numerically zero.
    pub fn trimmed(&self) -> usize {
        self.trimmed
    }

    /// Sum of the eigenvalues of the components held by this system.
    pub fn total_variance(&self) -> f64 {
        self.eigenvalues.iter().sum()
    }

    /// Keep the first `k` components. Components removed here are not counted
    /// as trimmed.
    pub fn truncate(&self, k: usize) -> Result<Self> {
        if k > self.len() {
            return Err(Error::InvalidParameter(format!(
                "cannot keep {k} of {} components",
                self.len()
            )));
        }
        Ok(EigenSystem {
            grid: self.grid.clone(),
            eigenvalues: self.eigenvalues[..k].to_vec(),
            functions: self.functions.columns(0, k).into_owned(),
            pve: self.pve[..k].to_vec(),
            trimmed: self.trimmed,
        })
    }

    /// `Σ_a λ_a e_a(s) e_a(t)` tabulated on the grid.
    pub fn surface(&self) -> DMatrix<f64> {
        let scaled = DMatrix::from_fn(self.functions.nrows(), self.len(), |r, c| {
            self.functions[(r, c)] * self.eigenvalues[c]
        });
        &scaled * self.functions.transpose()
    }

    /// `Σ_a λ_a e_a(t)²`, the pointwise variance carried by the components.
    pub fn pointwise_variance(&self) -> Vec<f64> {
        (0..self.functions.nrows())
            .map(|r| {
                self.eigenvalues
                    .iter()
                    .enumerate()
                    .map(|(a, l)| l * self.functions[(r, a)].powi(2))
                    .sum()
            })
            .collect()
    }
}

/// Largest absolute asymmetry `max |S - Sᵀ|`.
pub fn asymmetry(s: &DMatrix<f64>) -> f64 {
    let n = s.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in i + 1..n {
            worst = worst.max((s[(i, j)] - s[(j, i)]).abs());
        }
    }
    worst
}

/// Eigendecompose a covariance surface, trimming negative and numerically
/// zero eigenpairs.
pub fn eigendecompose(s: &DMatrix<f64>, grid: &Arc<Grid>) -> Result<EigenSystem> {
    eigendecompose_with_floor(s, grid, 0.0)
}

/// As [`eigendecompose`], additionally treating eigenvalues `≤ floor` as zero.
/// Multilevel fits pass a floor tied to the total variance so that a level
/// surface that is zero up to round-off yields no components.
pub fn eigendecompose_with_floor(
    s: &DMatrix<f64>,
    grid: &Arc<Grid>,
    floor: f64,
) -> Result<EigenSystem> {
    let m = grid.len();
    if s.nrows() != m || s.ncols() != m {
        return Err(Error::Dimension(format!(
            "{}×{} surface on a grid of {m} points",
            s.nrows(),
            s.ncols()
        )));
    }
    if s.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("surface has non-finite entries".into()));
    }
    let scale = s.amax().max(1.0);
    let max_diff = asymmetry(s);
    if max_diff > SYMMETRY_TOL * scale {
        return Err(Error::Asymmetric { max_diff });
    }
    if let Some(j) = grid.weights().iter().position(|w| *w <= 0.0) {
        return Err(Error::InvalidGrid(format!("zero quadrature weight at point {j}")));
    }
    let root_w: Vec<f64> = grid.weights().iter().map(|w| w.sqrt()).collect();
    let mut a = DMatrix::from_fn(m, m, |i, j| root_w[i] * s[(i, j)] * root_w[j]);
    for i in 0..m {
        for j in i + 1..m {
            let avg = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = avg;
            a[(j, i)] = avg;
        }
    }
    let eig = SymmetricEigen::new(a);
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&x, &y| {
        eig.eigenvalues[y]
            .partial_cmp(&eig.eigenvalues[x])
            .expect("finite eigenvalues")
            .then(x.cmp(&y))
    });
    let top = eig.eigenvalues[order[0]];
    let cutoff = (RELATIVE_EIGEN_CUTOFF * top).max(floor).max(0.0);
    let retained: Vec<usize> = order
        .into_iter()
        .filter(|&c| eig.eigenvalues[c] > cutoff)
        .collect();
    let k = retained.len();
    let mut functions = DMatrix::zeros(m, k);
    let mut eigenvalues = Vec::with_capacity(k);
    for (out, &c) in retained.iter().enumerate() {
        eigenvalues.push(eig.eigenvalues[c]);
        let mut col: Vec<f64> = (0..m)
            .map(|r| eig.eigenvectors[(r, c)] / root_w[r])
            .collect();
        orient(&mut col);
        functions.set_column(out, &nalgebra::DVector::from_vec(col));
    }
    let total: f64 = eigenvalues.iter().sum();
    let mut acc = 0.0;
    let pve = eigenvalues
        .iter()
        .map(|l| {
            acc += l;
            acc / total
        })
        .collect();
    Ok(EigenSystem {
        grid: grid.clone(),
        eigenvalues,
        functions,
        pve,
        trimmed: m - k,
    })
}

/// Flip the sign so the entry of largest magnitude is positive.
fn orient(v: &mut [f64]) {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// Smallest `K` whose cumulative share of the eigenvalue sum reaches
/// `pve_threshold`.
pub fn select_k(eig: &EigenSystem, pve_threshold: f64) -> Result<usize> {
    if !(pve_threshold > 0.0 && pve_threshold <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "pve threshold must lie in (0, 1], got {pve_threshold}"
        )));
    }
    select_k_from_values(eig.eigenvalues(), pve_threshold)
}

pub(crate) fn select_k_from_values(values: &[f64], pve_threshold: f64) -> Result<usize> {
    let total: f64 = values.iter().filter(|l| **l > 0.0).sum();
    if !(total > 0.0) {
        return Err(Error::DegenerateSpectrum);
    }
    let positive = values.iter().take_while(|l| **l > 0.0).count();
    let mut acc = 0.0;
    for (k, l) in values.iter().take(positive).enumerate() {
        acc += l;
        // Guard the comparison against round-off in the running sum.
        if acc >= pve_threshold * total * (1.0 - 4.0 * f64::EPSILON) {
            return Ok(k + 1);
        }
    }
    Ok(positive)
}
