use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::blup::blup_scores;
use super::covariance::{measure_means, three_level_covariances, two_level_covariances};
use crate::curves::{CurveSet, MeasureMeans};
use crate::eigen::{eigendecompose_with_floor, select_k, EigenSystem, RELATIVE_EIGEN_CUTOFF};
use crate::error::{Error, Result};
use crate::fpca::FpcaFit;
use crate::grid::{Curve, Grid};
use crate::smooth::smooth_covariance;

/// How the per-measure mean functions are handled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MeasureMeanMode {
    /// Estimate `η̂^j` as the measure average minus the grand mean.
    #[default]
    Estimate,
    /// Fix every `η̂^j` at zero (one-way functional ANOVA).
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    /// Number of hierarchy levels: 2 or 3 (1 for single-level fits).
    pub levels: usize,
    /// Cumulative proportion of variance used to choose components per level.
    pub pve: f64,
    /// Kernel bandwidth for covariance smoothing, `None` for no smoothing.
    pub bandwidth: Option<f64>,
    pub measure_means: MeasureMeanMode,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            levels: 2,
            pve: 0.9,
            bandwidth: None,
            measure_means: MeasureMeanMode::Estimate,
        }
    }
}

/// Identifies the unit that a row of a score matrix belongs to.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct UnitKey {
    pub subject: String,
    pub measure: Option<String>,
    pub replicate: Option<usize>,
}

/// Components and scores of one hierarchy level.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelFit {
    pub eig: EigenSystem,
    pub units: Vec<UnitKey>,
    /// `units × K` score matrix.
    pub scores: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultilevelFit {
    pub grid: Arc<Grid>,
    pub global_mean: Curve,
    /// Measure labels with their deviation from the global mean.
    pub measure_means: Vec<(String, Curve)>,
    /// Level 1 (subject), level 2 (subject-measure), level 3 (replicate).
    pub levels: Vec<LevelFit>,
    pub noise_variance: f64,
    pub config: FitConfig,
}

impl MultilevelFit {
    /// Level `l`, counted from 1.
    pub fn level(&self, l: usize) -> Option<&LevelFit> {
        l.checked_sub(1).and_then(|i| self.levels.get(i))
    }

    /// Eigenvalue sum per level.
    pub fn level_variances(&self) -> Vec<f64> {
        self.levels.iter().map(|l| l.eig.total_variance()).collect()
    }

    /// Shares of the total variance per level followed by the noise share.
    pub fn variance_shares(&self) -> Vec<f64> {
        let mut parts = self.level_variances();
        parts.push(self.noise_variance);
        let total: f64 = parts.iter().sum();
        if total > 0.0 {
            parts.iter_mut().for_each(|p| *p /= total);
        }
        parts
    }

    pub fn means(&self) -> MeasureMeans {
        MeasureMeans {
            global: self.global_mean.values().to_vec(),
            deviations: self
                .measure_means
                .iter()
                .map(|(_, c)| c.values().to_vec())
                .collect(),
        }
    }

    /// Wrap a single-level fit; every row of `curves` is one level-1 unit.
    pub fn from_fpca(fit: &FpcaFit, curves: &CurveSet, pve: f64, bandwidth: Option<f64>) -> Self {
        let units = (0..curves.n_rows())
            .map(|r| {
                let idx = curves.index(r);
                UnitKey {
                    subject: curves.subject_label(idx.subject).to_string(),
                    measure: None,
                    replicate: None,
                }
            })
            .collect();
        MultilevelFit {
            grid: curves.grid().clone(),
            global_mean: fit.mean.clone(),
            measure_means: Vec::new(),
            levels: vec![LevelFit {
                eig: fit.eig.clone(),
                units,
                scores: fit.scores.clone(),
            }],
            noise_variance: fit.noise_variance,
            config: FitConfig {
                levels: 1,
                pve,
                bandwidth,
                measure_means: MeasureMeanMode::Zero,
            },
        }
    }
}

/// Unit keys of every level, in the row order of fitted score matrices.
pub fn unit_keys(x: &CurveSet, levels: usize) -> Vec<Vec<UnitKey>> {
    let mut out = vec![Vec::new(); levels];
    for g in x.groups() {
        let subject = x.subject_label(g.subject).to_string();
        out[0].push(UnitKey {
            subject: subject.clone(),
            measure: None,
            replicate: None,
        });
        for (j, rows) in &g.measures {
            let measure = Some(x.measure_label(*j).to_string());
            if levels >= 2 {
                out[1].push(UnitKey {
                    subject: subject.clone(),
                    measure: measure.clone(),
                    replicate: None,
                });
            }
            if levels >= 3 {
                for &r in rows {
                    out[2].push(UnitKey {
                        subject: subject.clone(),
                        measure: measure.clone(),
                        replicate: x.index(r).replicate,
                    });
                }
            }
        }
    }
    out
}

/// Fit a nested two- or three-level model.
///
/// Steps: measure means, moment covariance surfaces, optional smoothing,
/// per-level eigendecomposition with trimming, component selection, noise
/// variance from the within-surface diagonal, and BLUP scores.
pub fn fit_nested(x: &CurveSet, config: &FitConfig) -> Result<MultilevelFit> {
    if !(config.levels == 2 || config.levels == 3) {
        return Err(Error::InvalidParameter(format!(
            "nested fits need 2 or 3 levels, got {}",
            config.levels
        )));
    }
    if !(config.pve > 0.0 && config.pve <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "pve threshold must lie in (0, 1], got {}",
            config.pve
        )));
    }
    let design = x.balanced_design()?;
    if design.measures < 2 {
        return Err(Error::InsufficientReplication(format!(
            "nested fits need at least 2 measures per subject, got {}",
            design.measures
        )));
    }
    if config.levels == 2 && design.replicates != 1 {
        return Err(Error::Unbalanced(format!(
            "two-level fit needs exactly one curve per subject and measure, found {} ({})",
            design.replicates,
            x.layout_report()
        )));
    }
    if config.levels == 3 && design.replicates < 2 {
        return Err(Error::InsufficientReplication(format!(
            "three-level fit needs at least 2 replicates per subject and measure, found {}",
            design.replicates
        )));
    }

    let grid = x.grid().clone();
    let means = match config.measure_means {
        MeasureMeanMode::Estimate => measure_means(x)?,
        MeasureMeanMode::Zero => {
            let mu = crate::fpca::mean_curve(x)?;
            MeasureMeans::global_only(mu.into_values(), x.measures().len())
        }
    };
    let (cov, surfaces) = if config.levels == 2 {
        let cov = two_level_covariances(x, &means)?;
        let surfaces = vec![cov.sigma_b.clone(), cov.within_repaired.clone()];
        (cov, surfaces)
    } else {
        let cov = three_level_covariances(x, &means)?;
        let t = cov.three_level.as_ref().expect("three-level surfaces");
        let surfaces = vec![t.k1.clone(), t.k2.clone(), t.k3.clone()];
        (cov, surfaces)
    };
    let total_trace: f64 = (0..grid.len())
        .map(|t| grid.weights()[t] * cov.sigma_t[(t, t)])
        .sum::<f64>()
        .abs();
    let floor = RELATIVE_EIGEN_CUTOFF * total_trace;

    let mut level_eigs = Vec::with_capacity(config.levels);
    for surface in surfaces {
        let surface = match config.bandwidth {
            Some(bw) => smooth_covariance(&surface, &grid, bw)?,
            None => surface,
        };
        let full = eigendecompose_with_floor(&surface, &grid, floor)?;
        let eig = if full.is_empty() {
            full
        } else {
            let k = select_k(&full, config.pve)?;
            full.truncate(k)?
        };
        level_eigs.push(eig);
    }

    let scores = blup_scores(x, &means, &level_eigs, cov.noise_variance)?;
    let keys = unit_keys(x, config.levels);
    let levels = level_eigs
        .into_iter()
        .zip(scores.levels)
        .zip(keys)
        .map(|((eig, scores), units)| LevelFit { eig, units, scores })
        .collect();

    Ok(MultilevelFit {
        global_mean: Curve::new(grid.clone(), means.global.clone())?,
        measure_means: x
            .measures()
            .iter()
            .zip(&means.deviations)
            .map(|(label, dev)| Ok((label.clone(), Curve::new(grid.clone(), dev.clone())?)))
            .collect::<Result<_>>()?,
        grid,
        levels,
        noise_variance: cov.noise_variance,
        config: *config,
    })
}
