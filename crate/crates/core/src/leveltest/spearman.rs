//! Spearman rank correlation between score components and a covariate.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

/// Smallest sample size accepted by [`score_covariate_correlation`].
pub const MIN_CORRELATION_SAMPLES: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    /// 1-based component number.
    pub component: usize,
    pub rho: f64,
    pub p_value: f64,
}

/// Ranks starting at 1, ties receiving the average of their positions.
pub fn midranks(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; n];
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && x[order[end]] == x[order[start]] {
            end += 1;
        }
        let avg = (start + end + 1) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = avg;
        }
        start = end;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Two-sided p-value of `rho` from `t = rho √((n−2)/(1−rho²))` on `n − 2`
/// degrees of freedom.
pub fn spearman_pvalue(rho: f64, n: usize) -> f64 {
    if rho.abs() >= 1.0 {
        return 0.0;
    }
    let df = (n - 2) as f64;
    let t = rho * (df / (1.0 - rho * rho)).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df).expect("positive degrees of freedom");
    (2.0 * dist.sf(t.abs())).min(1.0)
}

/// Spearman correlation of every score column with the covariate.
pub fn score_covariate_correlation(
    scores: &DMatrix<f64>,
    covariate: &[f64],
) -> Result<Vec<Correlation>> {
    let n = scores.nrows();
    if covariate.len() != n {
        return Err(Error::Dimension(format!(
            "{n} score rows but {} covariate values",
            covariate.len()
        )));
    }
    if n < MIN_CORRELATION_SAMPLES {
        return Err(Error::InsufficientData(format!(
            "correlation needs at least {MIN_CORRELATION_SAMPLES} observations, got {n}"
        )));
    }
    if scores.iter().chain(covariate).any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter(
            "scores and covariate must be finite".into(),
        ));
    }
    let cov_ranks = midranks(covariate);
    if cov_ranks.iter().all(|r| *r == cov_ranks[0]) {
        return Err(Error::UndefinedCorrelation {
            component: "covariate".into(),
        });
    }
    (0..scores.ncols())
        .map(|k| {
            let col: Vec<f64> = scores.column(k).iter().copied().collect();
            let rho = pearson(&midranks(&col), &cov_ranks).ok_or_else(|| {
                Error::UndefinedCorrelation {
                    component: format!("score {}", k + 1),
                }
            })?;
            Ok(Correlation {
                component: k + 1,
                rho,
                p_value: spearman_pvalue(rho, n),
            })
        })
        .collect()
}
