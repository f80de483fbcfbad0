//! Tests comparing score distributions between two conditions, and rank
//! correlation of scores with a covariate.
//!
//! Each score component is compared separately with a univariate two-sample
//! test, the component p-values are adjusted for false discovery rate, and
//! the global p-value is the smallest adjusted one.

mod fdr;
mod permutation;
mod spearman;
pub mod stats;

use std::collections::{BTreeSet, HashMap};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

pub use fdr::bh_adjust;
pub use permutation::{permutation_pvalue, PermutationResult, Scheme, MIN_PERMUTATIONS};
pub use spearman::{
    midranks, score_covariate_correlation, spearman_pvalue, Correlation, MIN_CORRELATION_SAMPLES,
};

use crate::error::{Error, Result};
use crate::mfpca::LevelFit;
use crate::rng::derive_seed;
use stats::SortedPool;

/// Smallest group size accepted by [`two_sample_score_test`].
pub const MIN_GROUP_SIZE: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Ks,
    Cvm,
    #[default]
    Energy,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Ks => "ks",
            Method::Cvm => "cvm",
            Method::Energy => "energy",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ks" => Ok(Method::Ks),
            "cvm" => Ok(Method::Cvm),
            "energy" => Ok(Method::Energy),
            other => Err(Error::InvalidParameter(format!(
                "unknown test method {other:?} (expected ks, cvm or energy)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestConfig {
    pub method: Method,
    pub permutations: usize,
    pub seed: u64,
    /// Permute labels within (A row i, B row i) pairs instead of globally.
    pub paired: bool,
    /// Use the asymptotic Kolmogorov distribution instead of permutations
    /// (KS only).
    pub ks_asymptotic: bool,
}

impl Default for TestConfig {
    fn default() -> Self {
        TestConfig {
            method: Method::Energy,
            permutations: 999,
            seed: 0,
            paired: false,
            ks_asymptotic: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentTest {
    /// 1-based component number.
    pub component: usize,
    pub statistic: f64,
    pub p_value: f64,
    pub adjusted_p: f64,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub per_score: Vec<ComponentTest>,
    pub global_p: f64,
    pub method: Method,
    pub n_permutations: usize,
    pub paired: bool,
    pub n_a: usize,
    pub n_b: usize,
}

/// Compare the score distributions of two groups component by component.
///
/// Columns of `a` and `b` must refer to the same components.
pub fn two_sample_score_test(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    config: &TestConfig,
) -> Result<TestReport> {
    if a.ncols() != b.ncols() {
        return Err(Error::ComponentMismatch {
            a: a.ncols(),
            b: b.ncols(),
        });
    }
    if a.ncols() == 0 {
        return Err(Error::InsufficientData("no score components to test".into()));
    }
    let (n_a, n_b) = (a.nrows(), b.nrows());
    if n_a < MIN_GROUP_SIZE || n_b < MIN_GROUP_SIZE {
        return Err(Error::InsufficientData(format!(
            "each group needs at least {MIN_GROUP_SIZE} rows, got {n_a} and {n_b}"
        )));
    }
    if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("scores must be finite".into()));
    }
    if config.ks_asymptotic && config.method != Method::Ks {
        return Err(Error::InvalidParameter(
            "the asymptotic p-value is only available for the KS method".into(),
        ));
    }
    let use_permutations = !config.ks_asymptotic;
    if use_permutations && config.permutations < MIN_PERMUTATIONS {
        return Err(Error::InvalidParameter(format!(
            "at least {MIN_PERMUTATIONS} permutations are required, got {}",
            config.permutations
        )));
    }
    let scheme = if config.paired {
        if n_a != n_b {
            return Err(Error::InvalidParameter(format!(
                "paired test needs equal group sizes, got {n_a} and {n_b}"
            )));
        }
        Scheme::Paired
    } else {
        Scheme::Unpaired
    };

    let mut raw = Vec::with_capacity(a.ncols());
    for k in 0..a.ncols() {
        let xa: Vec<f64> = a.column(k).iter().copied().collect();
        let xb: Vec<f64> = b.column(k).iter().copied().collect();
        let res = if config.ks_asymptotic {
            let pooled: Vec<f64> = xa.iter().chain(&xb).copied().collect();
            let pool = SortedPool::new(&pooled);
            let labels: Vec<bool> = (0..pooled.len()).map(|i| i < n_a).collect();
            let d = stats::ks(&pool, &pool.sorted_labels(&labels), n_a);
            PermutationResult {
                statistic: d,
                p_value: stats::ks_asymptotic_pvalue(d, n_a, n_b),
                degenerate: pool.values.first() == pool.values.last(),
            }
        } else {
            let seed = derive_seed(config.seed, k as u64);
            match config.method {
                Method::Ks => permutation_pvalue(
                    |p, l| stats::ks(p, l, n_a),
                    &xa,
                    &xb,
                    config.permutations,
                    seed,
                    scheme,
                )?,
                Method::Cvm => permutation_pvalue(
                    |p, l| stats::cvm(p, l, n_a),
                    &xa,
                    &xb,
                    config.permutations,
                    seed,
                    scheme,
                )?,
                Method::Energy => {
                    let pooled: Vec<f64> = xa.iter().chain(&xb).copied().collect();
                    let total = stats::pooled_pair_sum(&SortedPool::new(&pooled));
                    permutation_pvalue(
                        |p, l| stats::energy(p, l, n_a, total),
                        &xa,
                        &xb,
                        config.permutations,
                        seed,
                        scheme,
                    )?
                }
            }
        };
        raw.push(res);
    }
    let adjusted = bh_adjust(&raw.iter().map(|r| r.p_value).collect::<Vec<_>>())?;
    let global_p = adjusted.iter().copied().fold(1.0, f64::min);
    Ok(TestReport {
        per_score: raw
            .iter()
            .zip(&adjusted)
            .enumerate()
            .map(|(k, (r, adj))| ComponentTest {
                component: k + 1,
                statistic: r.statistic,
                p_value: r.p_value,
                adjusted_p: *adj,
                degenerate: r.degenerate,
            })
            .collect(),
        global_p,
        method: config.method,
        n_permutations: if use_permutations { config.permutations } else { 0 },
        paired: config.paired,
        n_a,
        n_b,
    })
}

/// Level-2 score rows split by measure membership.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreGroups {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    /// Subject of each row of `a` and `b`.
    pub subjects_a: Vec<String>,
    pub subjects_b: Vec<String>,
}

/// Split the rows of a level fit into two groups by measure label.
///
/// Rows keep the order of the fit. When both groups hold a single measure,
/// rows are aligned by subject, so row `i` of `a` and `b` belong to the same
/// subject as needed by the paired test.
pub fn partition_scores(level: &LevelFit, group_a: &[String], group_b: &[String]) -> Result<ScoreGroups> {
    if group_a.is_empty() || group_b.is_empty() {
        return Err(Error::InvalidParameter("both groups need at least one measure".into()));
    }
    let set_a: BTreeSet<&str> = group_a.iter().map(String::as_str).collect();
    let set_b: BTreeSet<&str> = group_b.iter().map(String::as_str).collect();
    let shared: Vec<&str> = set_a.intersection(&set_b).copied().collect();
    if !shared.is_empty() {
        return Err(Error::InvalidParameter(format!(
            "measures {} appear in both groups",
            shared.join(", ")
        )));
    }
    let known: BTreeSet<&str> = level
        .units
        .iter()
        .filter_map(|u| u.measure.as_deref())
        .collect();
    let unknown: Vec<&str> = set_a.union(&set_b).filter(|m| !known.contains(*m)).copied().collect();
    if !unknown.is_empty() {
        return Err(Error::InvalidParameter(format!(
            "unknown measure(s) {}; known measures: {}",
            unknown.join(", "),
            known.into_iter().collect::<Vec<_>>().join(", ")
        )));
    }
    let pick = |set: &BTreeSet<&str>| -> Vec<usize> {
        level
            .units
            .iter()
            .enumerate()
            .filter(|(_, u)| u.measure.as_deref().is_some_and(|m| set.contains(m)))
            .map(|(r, _)| r)
            .collect()
    };
    let rows_a = pick(&set_a);
    let mut rows_b = pick(&set_b);
    if set_a.len() == 1 && set_b.len() == 1 {
        let pos: HashMap<&str, usize> = rows_a
            .iter()
            .enumerate()
            .map(|(i, &r)| (level.units[r].subject.as_str(), i))
            .collect();
        rows_b.sort_by_key(|&r| pos.get(level.units[r].subject.as_str()).copied().unwrap_or(usize::MAX));
    }
    let take = |rows: &[usize]| {
        DMatrix::from_fn(rows.len(), level.scores.ncols(), |i, k| level.scores[(rows[i], k)])
    };
    let subjects = |rows: &[usize]| rows.iter().map(|&r| level.units[r].subject.clone()).collect();
    Ok(ScoreGroups {
        a: take(&rows_a),
        b: take(&rows_b),
        subjects_a: subjects(&rows_a),
        subjects_b: subjects(&rows_b),
    })
}
