//! Single-level functional PCA for independent curves.

use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::curves::CurveSet;
use crate::eigen::{eigendecompose, select_k, EigenSystem};
use crate::error::{Error, Result};
use crate::grid::{same_grid, Curve};
use crate::smooth::{repair_diagonal, smooth_covariance};

/// Options for [`fit_fpca`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FpcaConfig {
    /// Cumulative proportion of variance used to pick the number of components.
    pub pve: f64,
    /// Gaussian kernel bandwidth for covariance smoothing; `None` disables it.
    pub bandwidth: Option<f64>,
    /// Estimate a white-noise variance from the covariance diagonal.
    pub estimate_noise: bool,
}

impl Default for FpcaConfig {
    fn default() -> Self {
        FpcaConfig {
            pve: 0.9,
            bandwidth: None,
            estimate_noise: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FpcaFit {
    pub mean: Curve,
    pub eig: EigenSystem,
    /// `n × K` projection scores.
    pub scores: DMatrix<f64>,
    pub noise_variance: f64,
}

/// Pointwise mean across all rows.
pub fn mean_curve(x: &CurveSet) -> Result<Curve> {
    if x.is_empty() {
        return Err(Error::EmptyInput("cannot average zero curves".into()));
    }
    let m = x.grid().len();
    let mut acc = vec![0.0; m];
    for row in x.rows() {
        acc.iter_mut().zip(row).for_each(|(a, v)| *a += v);
    }
    let n = x.n_rows() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    Curve::new(x.grid().clone(), acc)
}

pub(crate) fn centered_matrix(x: &CurveSet, mean: &[f64]) -> DMatrix<f64> {
    let m = x.grid().len();
    DMatrix::from_fn(x.n_rows(), m, |r, t| x.row(r)[t] - mean[t])
}

/// Empirical covariance `(1/n) Σ_i (X_i − μ̂)(X_i − μ̂)ᵀ` on the grid.
pub fn empirical_covariance(x: &CurveSet, mean: &Curve) -> Result<DMatrix<f64>> {
    if !same_grid(x.grid(), mean.grid()) {
        return Err(Error::GridMismatch);
    }
    if x.n_rows() < 2 {
        return Err(Error::InsufficientData(format!(
            "covariance needs at least 2 curves, got {}",
            x.n_rows()
        )));
    }
    let r = centered_matrix(x, mean.values());
    Ok(r.transpose() * &r / x.n_rows() as f64)
}

/// Scores `⟨X_i − μ̂, ê_a⟩` for every row and component.
pub fn project_scores(x: &CurveSet, mean: &Curve, eig: &EigenSystem) -> Result<DMatrix<f64>> {
    if !same_grid(x.grid(), mean.grid()) || !same_grid(x.grid(), eig.grid()) {
        return Err(Error::GridMismatch);
    }
    let w = x.grid().weights();
    let weighted = DMatrix::from_fn(x.n_rows(), w.len(), |r, t| {
        (x.row(r)[t] - mean.values()[t]) * w[t]
    });
    Ok(weighted * eig.functions())
}

/// Rebuild every row from the mean and its first `k` components.
pub fn reconstruct(fit: &FpcaFit, k: usize) -> Result<CurveSet> {
    if k > fit.eig.len() || k > fit.scores.ncols() {
        return Err(Error::InvalidParameter(format!(
            "cannot reconstruct with {k} of {} components",
            fit.eig.len().min(fit.scores.ncols())
        )));
    }
    let grid = fit.mean.grid().clone();
    let approx = fit.scores.columns(0, k) * fit.eig.functions().columns(0, k).transpose();
    let rows = (0..fit.scores.nrows())
        .map(|i| {
            fit.mean
                .values()
                .iter()
                .enumerate()
                .map(|(t, mu)| mu + approx[(i, t)])
                .collect()
        })
        .collect();
    CurveSet::from_independent(grid, rows)
}

/// Mean, covariance, eigendecomposition, component selection and scores.
pub fn fit_fpca(x: &CurveSet, config: &FpcaConfig) -> Result<FpcaFit> {
    let grid: Arc<_> = x.grid().clone();
    let mean = mean_curve(x)?;
    let raw = empirical_covariance(x, &mean)?;
    let (surface, noise_variance) = if config.estimate_noise {
        let repaired = repair_diagonal(&raw, &grid)?;
        let noise = crate::mfpca::estimate_noise(&raw, &repaired, &grid)?;
        (repaired, noise)
    } else {
        (raw, 0.0)
    };
    let surface = match config.bandwidth {
        Some(bw) => smooth_covariance(&surface, &grid, bw)?,
        None => surface,
    };
    let full = eigendecompose(&surface, &grid)?;
    let k = select_k(&full, config.pve)?;
    let eig = full.truncate(k)?;
    let scores = project_scores(x, &mean, &eig)?;
    Ok(FpcaFit {
        mean,
        eig,
        scores,
        noise_variance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use crate::simkl::fourier_basis;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};
    use std::f64::consts::PI;

    fn grid(m: usize) -> Arc<Grid> {
        Arc::new(Grid::uniform(m).unwrap())
    }

    /// KL draws `Σ_a sqrt(λ_a) z_a e_a(t)` plus optional mean and iid noise.
    fn kl_sample(
        g: &Arc<Grid>,
        lambdas: &[f64],
        n: usize,
        noise_sd: f64,
        mean: impl Fn(f64) -> f64,
        seed: u64,
    ) -> CurveSet {
        let basis = fourier_basis(g, lambdas.len());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows = (0..n)
            .map(|_| {
                let z: Vec<f64> = lambdas
                    .iter()
                    .map(|l| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        l.sqrt() * z
                    })
                    .collect();
                g.points()
                    .iter()
                    .enumerate()
                    .map(|(t, &p)| {
                        let kl: f64 = z.iter().zip(&basis).map(|(c, e)| c * e.values()[t]).sum();
                        let eps: f64 = StandardNormal.sample(&mut rng);
                        mean(p) + kl + noise_sd * eps
                    })
                    .collect()
            })
            .collect();
        CurveSet::from_independent(g.clone(), rows).unwrap()
    }

    #[test]
    fn mean_examples() {
        let g = grid(3);
        let x = CurveSet::from_independent(g.clone(), vec![vec![0.0; 3], vec![0.0; 3]]).unwrap();
        assert_eq!(mean_curve(&x).unwrap().values(), &[0.0, 0.0, 0.0]);
        let x = CurveSet::from_independent(g, vec![vec![1.0, 2.0, 3.0], vec![3.0, 2.0, 1.0]])
            .unwrap();
        assert_eq!(mean_curve(&x).unwrap().values(), &[2.0, 2.0, 2.0]);
    }

    #[test]
    fn mean_of_empty_set_fails() {
        let x = CurveSet::from_independent(grid(3), vec![]).unwrap();
        assert!(matches!(mean_curve(&x), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn mean_monte_carlo() {
        let g = grid(51);
        let x = kl_sample(&g, &[1.0], 1000, 0.5, |t| (2.0 * PI * t).sin(), 11);
        let mu = mean_curve(&x).unwrap();
        let sup = g
            .points()
            .iter()
            .zip(mu.values())
            .map(|(t, v)| (v - (2.0 * PI * t).sin()).abs())
            .fold(0.0, f64::max);
        assert!(sup < 0.1, "sup error {sup}");
    }

    #[test]
    fn covariance_examples() {
        let g = grid(2);
        let x = CurveSet::from_independent(g.clone(), vec![vec![1.0, -1.0], vec![-1.0, 1.0]])
            .unwrap();
        let mu = mean_curve(&x).unwrap();
        let s = empirical_covariance(&x, &mu).unwrap();
        assert_eq!(s, DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]));

        let x = CurveSet::from_independent(g.clone(), vec![vec![2.0, 2.0]; 4]).unwrap();
        let mu = mean_curve(&x).unwrap();
        assert_eq!(empirical_covariance(&x, &mu).unwrap(), DMatrix::zeros(2, 2));

        let one = CurveSet::from_independent(g, vec![vec![2.0, 2.0]]).unwrap();
        let mu = mean_curve(&one).unwrap();
        assert!(matches!(
            empirical_covariance(&one, &mu),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn covariance_recovers_kl_eigenvalues() {
        let g = grid(101);
        let x = kl_sample(&g, &[2.0, 1.0], 2000, 0.0, |_| 0.0, 5);
        let mu = mean_curve(&x).unwrap();
        let eig = eigendecompose(&empirical_covariance(&x, &mu).unwrap(), &g).unwrap();
        assert!((eig.eigenvalues()[0] - 2.0).abs() < 0.2, "{:?}", &eig.eigenvalues()[..2]);
        assert!((eig.eigenvalues()[1] - 1.0).abs() < 0.1, "{:?}", &eig.eigenvalues()[..2]);
    }

    #[test]
    fn projection_of_eigenfunction_is_unit_vector() {
        let g = grid(41);
        let x = kl_sample(&g, &[3.0, 1.0, 0.5], 50, 0.0, |_| 0.0, 2);
        let fit = fit_fpca(&x, &FpcaConfig { pve: 1.0, ..Default::default() }).unwrap();
        let e1 = fit.eig.eigenfunction(0);
        let probe_vals: Vec<f64> = fit
            .mean
            .values()
            .iter()
            .zip(e1.values())
            .map(|(m, e)| m + e)
            .collect();
        let probe = CurveSet::from_independent(g.clone(), vec![probe_vals, fit.mean.values().to_vec()])
            .unwrap();
        let s = project_scores(&probe, &fit.mean, &fit.eig).unwrap();
        assert_abs_diff_eq!(s[(0, 0)], 1.0, epsilon = 1e-8);
        for a in 1..fit.eig.len() {
            assert_abs_diff_eq!(s[(0, a)], 0.0, epsilon = 1e-8);
        }
        assert!(s.row(1).iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn projection_matches_direct_quadrature() {
        let g = grid(61);
        let x = kl_sample(&g, &[2.0, 1.0], 30, 0.2, |t| t, 8);
        let fit = fit_fpca(&x, &FpcaConfig::default()).unwrap();
        let w = g.weights();
        for i in 0..x.n_rows() {
            for a in 0..fit.eig.len() {
                let e = fit.eig.eigenfunction(a);
                let mut direct = 0.0;
                for t in 0..g.len() {
                    direct += w[t] * (x.row(i)[t] - fit.mean.values()[t]) * e.values()[t];
                }
                assert_abs_diff_eq!(fit.scores[(i, a)], direct, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn projection_rejects_other_grid() {
        let x = kl_sample(&grid(21), &[1.0], 10, 0.0, |_| 0.0, 1);
        let fit = fit_fpca(&x, &FpcaConfig::default()).unwrap();
        let other = kl_sample(&grid(22), &[1.0], 10, 0.0, |_| 0.0, 1);
        assert!(matches!(
            project_scores(&other, &fit.mean, &fit.eig),
            Err(Error::GridMismatch)
        ));
    }

    #[test]
    fn reconstruction_properties() {
        let g = grid(101);
        let x = kl_sample(&g, &[4.0, 2.0, 1.0], 40, 0.0, |t| 1.0 + t, 21);
        let fit = fit_fpca(&x, &FpcaConfig { pve: 1.0, ..Default::default() }).unwrap();
        assert!(fit.eig.len() >= 3);

        let zero = reconstruct(&fit, 0).unwrap();
        for row in zero.rows() {
            assert_eq!(row, fit.mean.values());
        }

        let exact = reconstruct(&fit, 3).unwrap();
        let sup = exact
            .rows()
            .zip(x.rows())
            .flat_map(|(a, b)| a.iter().zip(b).map(|(u, v)| (u - v).abs()))
            .fold(0.0, f64::max);
        assert!(sup < 1e-6, "sup error {sup}");

        let ise = |k: usize| -> f64 {
            let r = reconstruct(&fit, k).unwrap();
            r.rows()
                .zip(x.rows())
                .map(|(a, b)| {
                    let d: Vec<f64> = a.iter().zip(b).map(|(u, v)| u - v).collect();
                    g.inner(&d, &d)
                })
                .sum()
        };
        assert!(ise(1) >= ise(2));
        assert!(ise(2) >= ise(3));
        assert!(matches!(
            reconstruct(&fit, fit.eig.len() + 1),
            Err(Error::InvalidParameter(_))
        ));
    }

    #[test]
    fn score_means_and_variances() {
        let g = grid(101);
        let n = 2000;
        let x = kl_sample(&g, &[2.0, 1.0], n, 0.0, |_| 0.0, 77);
        let fit = fit_fpca(&x, &FpcaConfig::default()).unwrap();
        for a in 0..fit.eig.len() {
            let col = fit.scores.column(a);
            let mean = col.mean();
            let bound = 3.0 * (fit.eig.eigenvalues()[a] / n as f64).sqrt();
            assert!(mean.abs() <= bound.max(1e-12));
        }
        let col = fit.scores.column(0);
        let var = col.iter().map(|v| v * v).sum::<f64>() / n as f64 - col.mean().powi(2);
        assert!((var / 2.0 - 1.0).abs() < 0.15, "variance {var}");
    }

    #[test]
    fn noise_estimate_for_single_level() {
        let g = grid(101);
        let x = kl_sample(&g, &[2.0, 1.0], 500, 1.0, |_| 0.0, 4);
        let plain = fit_fpca(&x, &FpcaConfig::default()).unwrap();
        assert_eq!(plain.noise_variance, 0.0);
        let fit = fit_fpca(
            &x,
            &FpcaConfig {
                estimate_noise: true,
                ..Default::default()
            },
        )
        .unwrap();
        assert!((fit.noise_variance - 1.0).abs() < 0.3, "{}", fit.noise_variance);
        assert_eq!(fit.eig.len(), 2);
    }
}
