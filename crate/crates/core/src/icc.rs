//! Functional intraclass correlation: the share of variability attributable to
//! the subject level, pointwise in `t` and integrated over the domain.

use crate::error::{Error, Result};
use crate::grid::Curve;
use crate::mfpca::MultilevelFit;

#[derive(Debug, Clone, PartialEq)]
pub struct IccReport {
    /// `ρ(t)` on the fit grid.
    pub pointwise: Curve,
    pub global_icc: f64,
    /// Eigenvalue sum per level followed by the noise variance.
    pub level_variances: Vec<f64>,
}

fn check_levels(fit: &MultilevelFit) -> Result<()> {
    if fit.levels.len() < 2 {
        return Err(Error::InvalidParameter(format!(
            "ICC needs a two- or three-level fit, got {} level(s)",
            fit.levels.len()
        )));
    }
    Ok(())
}

/// `ρ = S1 / (S1 + S2 (+ S3) + σ̂²)` with `Sℓ` the retained eigenvalue sum of
/// level `ℓ`.
pub fn global_icc(fit: &MultilevelFit) -> Result<f64> {
    check_levels(fit)?;
    let s = fit.level_variances();
    let denom: f64 = s.iter().sum::<f64>() + fit.noise_variance;
    if !(denom > 0.0) {
        return Err(Error::UndefinedIcc(
            "total variance is zero".to_string(),
        ));
    }
    Ok((s[0] / denom).clamp(0.0, 1.0))
}

/// `ρ(t) = V1(t) / (Σℓ Vℓ(t) + σ̂²)` with `Vℓ(t) = Σ_k λ̂_k ê_k(t)²`.
pub fn pointwise_icc(fit: &MultilevelFit) -> Result<Curve> {
    check_levels(fit)?;
    let variances: Vec<Vec<f64>> = fit
        .levels
        .iter()
        .map(|l| l.eig.pointwise_variance())
        .collect();
    let points = fit.grid.points();
    let mut rho = Vec::with_capacity(points.len());
    for (t, p) in points.iter().enumerate() {
        let denom: f64 = variances.iter().map(|v| v[t]).sum::<f64>() + fit.noise_variance;
        if !(denom > 0.0) {
            return Err(Error::UndefinedIcc(format!("all variances vanish at t = {p}")));
        }
        rho.push((variances[0][t] / denom).clamp(0.0, 1.0));
    }
    Curve::new(fit.grid.clone(), rho)
}

pub fn icc_report(fit: &MultilevelFit) -> Result<IccReport> {
    let mut level_variances = fit.level_variances();
    level_variances.push(fit.noise_variance);
    Ok(IccReport {
        pointwise: pointwise_icc(fit)?,
        global_icc: global_icc(fit)?,
        level_variances,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eigen::EigenSystem;
    use crate::grid::Grid;
    use crate::mfpca::{FitConfig, LevelFit};
    use nalgebra::DMatrix;
    use proptest::prelude::*;
    use std::sync::Arc;

    fn level(grid: &Arc<Grid>, values: &[f64], functions: DMatrix<f64>) -> LevelFit {
        LevelFit {
            eig: EigenSystem::from_parts(grid.clone(), values.to_vec(), functions, vec![0.0; values.len()], 0).unwrap(),
            units: Vec::new(),
            scores: DMatrix::zeros(0, values.len()),
        }
    }

    /// Fit with constant unit-norm eigenfunctions per level.
    fn synthetic(values: &[&[f64]], noise: f64) -> MultilevelFit {
        let grid = Arc::new(Grid::uniform(11).unwrap());
        let levels = values
            .iter()
            .map(|v| {
                // columns 1, √2 sin(2πt), √2 cos(2πt) are near-orthonormal; only
                // the eigenvalues matter for the global ICC
                let f = DMatrix::from_fn(11, v.len(), |t, a| {
                    let x = grid.points()[t];
                    match a {
                        0 => 1.0,
                        1 => 2f64.sqrt() * (2.0 * std::f64::consts::PI * x).sin(),
                        _ => 2f64.sqrt() * (2.0 * std::f64::consts::PI * x).cos(),
                    }
                });
                level(&grid, v, f)
            })
            .collect();
        MultilevelFit {
            global_mean: Curve::new(grid.clone(), vec![0.0; 11]).unwrap(),
            measure_means: Vec::new(),
            grid,
            levels,
            noise_variance: noise,
            config: FitConfig::default(),
        }
    }

    #[test]
    fn plug_in_examples() {
        let fit = synthetic(&[&[4.0, 2.0], &[2.0, 1.0]], 1.0);
        assert!((global_icc(&fit).unwrap() - 0.6).abs() < 1e-15);
        let fit = synthetic(&[&[6.0], &[3.0], &[0.5]], 0.5);
        assert!((global_icc(&fit).unwrap() - 0.6).abs() < 1e-15);
    }

    #[test]
    fn pointwise_examples() {
        let fit = synthetic(&[&[1.0], &[1.0]], 0.0);
        let rho = pointwise_icc(&fit).unwrap();
        assert!(rho.values().iter().all(|r| (r - 0.5).abs() < 1e-15));

        let mut fit = synthetic(&[&[1.0], &[1.0]], 0.0);
        fit.levels[1] = level(&fit.grid.clone(), &[], DMatrix::zeros(11, 0));
        let rho = pointwise_icc(&fit).unwrap();
        assert!(rho.values().iter().all(|r| *r == 1.0));
    }

    #[test]
    fn zero_variance_is_undefined() {
        let mut fit = synthetic(&[&[1.0], &[1.0]], 0.0);
        let g = fit.grid.clone();
        fit.levels = vec![
            level(&g, &[], DMatrix::zeros(11, 0)),
            level(&g, &[], DMatrix::zeros(11, 0)),
        ];
        assert!(matches!(global_icc(&fit), Err(Error::UndefinedIcc(_))));
        match pointwise_icc(&fit) {
            Err(Error::UndefinedIcc(msg)) => assert!(msg.contains("t = 0")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn single_level_fit_is_rejected() {
        let fit = synthetic(&[&[1.0]], 0.5);
        assert!(matches!(global_icc(&fit), Err(Error::InvalidParameter(_))));
    }

    proptest! {
        #[test]
        fn icc_invariants(
            l1 in proptest::collection::vec(0.01f64..10.0, 1..3),
            l2 in proptest::collection::vec(0.01f64..10.0, 1..3),
            noise in 0.0f64..5.0,
            scale in 0.1f64..10.0,
        ) {
            let fit = synthetic(&[&l1, &l2], noise);
            let g = global_icc(&fit).unwrap();
            let s1: f64 = l1.iter().sum();
            let s2: f64 = l2.iter().sum();
            prop_assert_eq!(g, s1 / (s1 + s2 + noise));
            prop_assert!((0.0..=1.0).contains(&g));

            let l1s: Vec<f64> = l1.iter().map(|v| v * scale * scale).collect();
            let l2s: Vec<f64> = l2.iter().map(|v| v * scale * scale).collect();
            let scaled = synthetic(&[&l1s, &l2s], noise * scale * scale);
            prop_assert!((global_icc(&scaled).unwrap() - g).abs() < 1e-12);

            let noisier = synthetic(&[&l1, &l2], noise + 0.1);
            prop_assert!(global_icc(&noisier).unwrap() < g);

            let rho = pointwise_icc(&fit).unwrap();
            let lo = rho.values().iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = rho.values().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(lo >= 0.0 && hi <= 1.0);
            let avg = fit.grid.integrate(rho.values());
            prop_assert!(avg >= lo - 1e-12 && avg <= hi + 1e-12);
        }
    }
}
