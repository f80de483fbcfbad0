//! Seeded Karhunen–Loève generator for nested curve data.
//!
//! A [`GeneratorSpec`] describes the grid, the mean functions, one set of
//! eigenvalues and eigenfunctions per hierarchy level, the noise variance and
//! the design. [`generate`] returns the observable curves together with the
//! hidden truth (scores, level curves, noise, analytic ICC).
//!
//! Each subject draws from its own random stream, so the output does not
//! depend on how subjects are scheduled across threads.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal, StudentT};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::curves::{CurveSet, NestedIndex};
use crate::error::{Error, Result};
use crate::grid::{Curve, Grid};
use crate::rng::substream;

/// Tolerance for the orthonormality check of user-supplied bases.
pub const BASIS_TOLERANCE: f64 = 1e-6;

/// Fourier function number `index` (0-based):
/// `√2 sin(2πt), √2 cos(2πt), √2 sin(4πt), √2 cos(4πt), …`.
pub fn fourier_function(index: usize, t: f64) -> f64 {
    let freq = (index / 2 + 1) as f64;
    let arg = 2.0 * PI * freq * t;
    if index % 2 == 0 {
        2f64.sqrt() * arg.sin()
    } else {
        2f64.sqrt() * arg.cos()
    }
}

/// The first `count` Fourier functions evaluated on `grid`.
pub fn fourier_basis(grid: &Arc<Grid>, count: usize) -> Vec<Curve> {
    fourier_basis_from(grid, 0, count)
}

fn fourier_basis_from(grid: &Arc<Grid>, offset: usize, count: usize) -> Vec<Curve> {
    (offset..offset + count)
        .map(|k| {
            Curve::from_fn(grid.clone(), |t| fourier_function(k, t)).expect("finite Fourier values")
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    /// Number of equally spaced points on `[0, 1]`.
    #[serde(default)]
    pub m: Option<usize>,
    /// Explicit grid points; takes precedence over `m`.
    #[serde(default)]
    pub points: Option<Vec<f64>>,
}

/// A mean function on `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MeanSpec {
    Zero,
    Constant {
        value: f64,
    },
    /// `amplitude · sin(2π·frequency·t + phase) + offset`.
    Sine {
        amplitude: f64,
        #[serde(default = "one")]
        frequency: f64,
        #[serde(default)]
        phase: f64,
        #[serde(default)]
        offset: f64,
    },
    /// Values at the grid points.
    Tabulated {
        values: Vec<f64>,
    },
}

fn one() -> f64 {
    1.0
}

impl Default for MeanSpec {
    fn default() -> Self {
        MeanSpec::Zero
    }
}

impl MeanSpec {
    fn evaluate(&self, grid: &Grid, what: &str) -> Result<Vec<f64>> {
        let p = grid.points();
        let values = match self {
            MeanSpec::Zero => vec![0.0; p.len()],
            MeanSpec::Constant { value } => vec![*value; p.len()],
            MeanSpec::Sine {
                amplitude,
                frequency,
                phase,
                offset,
            } => p
                .iter()
                .map(|t| amplitude * (2.0 * PI * frequency * t + phase).sin() + offset)
                .collect(),
            MeanSpec::Tabulated { values } => {
                if values.len() != p.len() {
                    return Err(Error::InvalidParameter(format!(
                        "{what}: {} tabulated values for a grid of {} points",
                        values.len(),
                        p.len()
                    )));
                }
                values.clone()
            }
        };
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!("{what} has non-finite values")));
        }
        Ok(values)
    }
}

/// Eigenfunctions of one level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BasisSpec {
    /// Consecutive Fourier functions starting at function number `offset`.
    Fourier { offset: usize },
    /// One row of grid values per eigenfunction.
    Tabulated { functions: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevelSpec {
    pub eigenvalues: Vec<f64>,
    /// Defaults to Fourier functions following those of the previous levels.
    #[serde(default)]
    pub basis: Option<BasisSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignSpec {
    pub subjects: usize,
    pub measures: usize,
    /// Replicates per subject and measure; absent for two-level data.
    #[serde(default)]
    pub replicates: Option<usize>,
    #[serde(default)]
    pub measure_labels: Option<Vec<String>>,
}

/// Distribution of the standardized scores.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScoreDistribution {
    #[default]
    Gaussian,
    /// Student t rescaled to unit variance; needs `df > 2`.
    StudentT { df: f64 },
}

/// Mean shift added to one level-2 score component of one measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShiftSpec {
    /// 1-based measure number.
    pub measure: usize,
    /// 1-based level-2 component.
    pub component: usize,
    pub amount: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSpec {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_channel")]
    pub channel: String,
    pub grid: GridSpec,
    #[serde(default)]
    pub mean: MeanSpec,
    /// One entry per measure, or empty for zero measure means.
    #[serde(default)]
    pub measure_means: Vec<MeanSpec>,
    /// Level 1 (subject), level 2 (subject-measure), level 3 (replicate).
    pub levels: Vec<LevelSpec>,
    #[serde(default)]
    pub noise_variance: f64,
    pub design: DesignSpec,
    #[serde(default)]
    pub scores: ScoreDistribution,
    #[serde(default)]
    pub shifts: Vec<ShiftSpec>,
}

fn default_channel() -> String {
    "y".to_string()
}

impl GeneratorSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidParameter(format!("generator spec: {e}")))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidParameter(format!("generator spec: {e}")))
    }

    pub fn build_grid(&self) -> Result<Arc<Grid>> {
        let grid = match (&self.grid.points, self.grid.m) {
            (Some(p), _) => Grid::new(p.clone())?,
            (None, Some(m)) => Grid::uniform(m)?,
            (None, None) => {
                return Err(Error::InvalidParameter(
                    "grid needs either `m` or `points`".into(),
                ))
            }
        };
        Ok(Arc::new(grid))
    }

    /// Eigenvalue sum per level.
    pub fn level_variances(&self) -> Vec<f64> {
        self.levels.iter().map(|l| l.eigenvalues.iter().sum()).collect()
    }

    /// `S1 / (S1 + S2 + … + σ²)`.
    pub fn analytic_icc(&self) -> f64 {
        let s = self.level_variances();
        let total: f64 = s.iter().sum::<f64>() + self.noise_variance;
        s.first().copied().unwrap_or(0.0) / total
    }

    pub fn measure_labels(&self) -> Vec<String> {
        match &self.design.measure_labels {
            Some(l) => l.clone(),
            None => (1..=self.design.measures).map(|j| format!("M{j}")).collect(),
        }
    }

    pub fn subject_labels(&self) -> Vec<String> {
        let width = self.design.subjects.to_string().len().max(3);
        (1..=self.design.subjects)
            .map(|i| format!("S{i:0width$}"))
            .collect()
    }

    fn validate(&self) -> Result<()> {
        let d = &self.design;
        if d.subjects == 0 || d.measures == 0 || d.replicates == Some(0) {
            return Err(Error::InvalidParameter(
                "design needs at least one subject, measure and replicate".into(),
            ));
        }
        if self.levels.is_empty() || self.levels.len() > 3 {
            return Err(Error::InvalidParameter(format!(
                "between 1 and 3 levels are supported, got {}",
                self.levels.len()
            )));
        }
        if self.levels.len() == 3 && d.replicates.is_none() {
            return Err(Error::InvalidParameter(
                "a third level needs `design.replicates`".into(),
            ));
        }
        for (l, level) in self.levels.iter().enumerate() {
            if level.eigenvalues.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "level {} eigenvalues must be finite and nonnegative",
                    l + 1
                )));
            }
        }
        if !(self.noise_variance >= 0.0) || !self.noise_variance.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "noise variance must be finite and nonnegative, got {}",
                self.noise_variance
            )));
        }
        if !self.measure_means.is_empty() && self.measure_means.len() != d.measures {
            return Err(Error::InvalidParameter(format!(
                "{} measure means for {} measures",
                self.measure_means.len(),
                d.measures
            )));
        }
        if let Some(labels) = &d.measure_labels {
            let unique: std::collections::HashSet<_> = labels.iter().collect();
            if labels.len() != d.measures || unique.len() != labels.len() {
                return Err(Error::InvalidParameter(format!(
                    "need {} distinct measure labels, got {:?}",
                    d.measures, labels
                )));
            }
        }
        if let ScoreDistribution::StudentT { df } = self.scores {
            if !(df > 2.0) {
                return Err(Error::InvalidParameter(format!(
                    "scaled t scores need df > 2, got {df}"
                )));
            }
        }
        for s in &self.shifts {
            let k2 = self.levels.get(1).map_or(0, |l| l.eigenvalues.len());
            if s.measure == 0 || s.measure > d.measures || s.component == 0 || s.component > k2 {
                return Err(Error::InvalidParameter(format!(
                    "shift targets measure {} component {}, but there are {} measures and {} level-2 components",
                    s.measure, s.component, d.measures, k2
                )));
            }
            if !s.amount.is_finite() {
                return Err(Error::InvalidParameter("shift amount must be finite".into()));
            }
        }
        Ok(())
    }
}

/// Eigenfunction matrix (`m × K`) of every level, checked for orthonormality.
pub fn level_bases(spec: &GeneratorSpec, grid: &Arc<Grid>) -> Result<Vec<DMatrix<f64>>> {
    let m = grid.len();
    let mut next_fourier = 0;
    let mut out = Vec::with_capacity(spec.levels.len());
    for (l, level) in spec.levels.iter().enumerate() {
        let k = level.eigenvalues.len();
        let basis = level
            .basis
            .clone()
            .unwrap_or(BasisSpec::Fourier { offset: next_fourier });
        let functions = match basis {
            BasisSpec::Fourier { offset } => {
                next_fourier = offset + k;
                let curves = fourier_basis_from(grid, offset, k);
                DMatrix::from_fn(m, k, |t, a| curves[a].values()[t])
            }
            BasisSpec::Tabulated { functions } => {
                if functions.len() != k || functions.iter().any(|f| f.len() != m) {
                    return Err(Error::InvalidBasis(format!(
                        "level {} needs {k} functions of {m} values",
                        l + 1
                    )));
                }
                let e = DMatrix::from_fn(m, k, |t, a| functions[a][t]);
                check_orthonormal(&e, grid, l + 1)?;
                e
            }
        };
        out.push(functions);
    }
    Ok(out)
}

fn check_orthonormal(e: &DMatrix<f64>, grid: &Grid, level: usize) -> Result<()> {
    let k = e.ncols();
    let mut bad = Vec::new();
    for a in 0..k {
        for b in a..k {
            let g = grid.inner(e.column(a).as_slice(), e.column(b).as_slice());
            let target = if a == b { 1.0 } else { 0.0 };
            if !((g - target).abs() <= BASIS_TOLERANCE) {
                bad.push(format!("G[{},{}] = {g}", a + 1, b + 1));
            }
        }
    }
    if bad.is_empty() {
        Ok(())
    } else {
        Err(Error::InvalidBasis(format!("level {level}: {}", bad.join(", "))))
    }
}

/// Hidden quantities behind a generated data set.
///
/// Per-row matrices follow the row order of the returned [`CurveSet`]
/// (subject, then measure, then replicate). Score matrices follow the unit
/// order used by fitted models: subjects, then (subject, measure) cells, then
/// rows.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub mean: Vec<f64>,
    pub measure_means: Vec<Vec<f64>>,
    pub eigenvalues: Vec<Vec<f64>>,
    /// `m × K` eigenfunction matrix per level.
    pub eigenfunctions: Vec<DMatrix<f64>>,
    /// Score matrix per level, shifts included.
    pub scores: Vec<DMatrix<f64>>,
    /// `rows × m` contribution of each level to each observed row.
    pub level_curves: Vec<DMatrix<f64>>,
    /// `rows × m` noise realization.
    pub noise: DMatrix<f64>,
    pub noise_variance: f64,
    pub icc: f64,
    /// Analytic `ρ(t)`.
    pub pointwise_icc: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    pub curves: CurveSet,
    pub truth: GroundTruth,
}

struct SubjectDraw {
    scores: Vec<Vec<Vec<f64>>>,
    rows: Vec<(NestedIndex, Vec<f64>)>,
    level_rows: Vec<Vec<Vec<f64>>>,
    noise_rows: Vec<Vec<f64>>,
}

/// Draw a data set from `spec`.
pub fn generate(spec: &GeneratorSpec) -> Result<Simulation> {
    spec.validate()?;
    let grid = spec.build_grid()?;
    let m = grid.len();
    let mean = spec.mean.evaluate(&grid, "global mean")?;
    let measure_means: Vec<Vec<f64>> = if spec.measure_means.is_empty() {
        vec![vec![0.0; m]; spec.design.measures]
    } else {
        spec.measure_means
            .iter()
            .enumerate()
            .map(|(j, s)| s.evaluate(&grid, &format!("measure mean {}", j + 1)))
            .collect::<Result<_>>()?
    };
    let bases = level_bases(spec, &grid)?;
    let lambdas: Vec<Vec<f64>> = spec.levels.iter().map(|l| l.eigenvalues.clone()).collect();
    let n_levels = spec.levels.len();
    let sd = spec.noise_variance.sqrt();
    let j_count = spec.design.measures;
    let reps = spec.design.replicates;
    let k_count = reps.unwrap_or(1);
    let t_dist = match spec.scores {
        ScoreDistribution::Gaussian => None,
        ScoreDistribution::StudentT { df } => Some((
            StudentT::new(df).map_err(|e| Error::InvalidParameter(e.to_string()))?,
            ((df - 2.0) / df).sqrt(),
        )),
    };
    let standard = |rng: &mut rand_chacha::ChaCha8Rng| -> f64 {
        match &t_dist {
            None => StandardNormal.sample(rng),
            Some((t, scale)) => t.sample(rng) * scale,
        }
    };
    let draw_scores = |rng: &mut rand_chacha::ChaCha8Rng, level: usize| -> Vec<f64> {
        lambdas[level]
            .iter()
            .map(|l| l.sqrt() * standard(rng))
            .collect()
    };
    let combine = |level: usize, scores: &[f64]| -> Vec<f64> {
        (0..m)
            .map(|t| {
                scores
                    .iter()
                    .enumerate()
                    .map(|(a, s)| s * bases[level][(t, a)])
                    .sum()
            })
            .collect()
    };

    let draws: Vec<SubjectDraw> = (0..spec.design.subjects)
        .into_par_iter()
        .map(|i| {
            let mut rng = substream(spec.seed, i as u64);
            let mut draw = SubjectDraw {
                scores: vec![Vec::new(); n_levels],
                rows: Vec::new(),
                level_rows: vec![Vec::new(); n_levels],
                noise_rows: Vec::new(),
            };
            let c = draw_scores(&mut rng, 0);
            let z = combine(0, &c);
            draw.scores[0].push(c);
            for j in 0..j_count {
                let w = if n_levels >= 2 {
                    let mut d = draw_scores(&mut rng, 1);
                    for s in spec.shifts.iter().filter(|s| s.measure == j + 1) {
                        d[s.component - 1] += s.amount;
                    }
                    let w = combine(1, &d);
                    draw.scores[1].push(d);
                    Some(w)
                } else {
                    None
                };
                for k in 0..k_count {
                    let u = if n_levels >= 3 {
                        let e = draw_scores(&mut rng, 2);
                        let u = combine(2, &e);
                        draw.scores[2].push(e);
                        Some(u)
                    } else {
                        None
                    };
                    let eps: Vec<f64> = (0..m)
                        .map(|_| {
                            let z: f64 = StandardNormal.sample(&mut rng);
                            sd * z
                        })
                        .collect();
                    let values: Vec<f64> = (0..m)
                        .map(|t| {
                            let mut v = mean[t] + measure_means[j][t] + z[t];
                            if let Some(w) = &w {
                                v += w[t];
                            }
                            if let Some(u) = &u {
                                v += u[t];
                            }
                            v + eps[t]
                        })
                        .collect();
                    draw.level_rows[0].push(z.clone());
                    if let Some(w) = &w {
                        draw.level_rows[1].push(w.clone());
                    }
                    if let Some(u) = u {
                        draw.level_rows[2].push(u);
                    }
                    draw.noise_rows.push(eps);
                    draw.rows
                        .push((NestedIndex::new(i + 1, j + 1, reps.map(|_| k + 1)), values));
                }
            }
            draw
        })
        .collect();

    let n_rows = spec.design.subjects * j_count * k_count;
    let mut rows = Vec::with_capacity(n_rows);
    let mut level_scores: Vec<Vec<f64>> = vec![Vec::new(); n_levels];
    let mut level_flat: Vec<Vec<f64>> = vec![Vec::with_capacity(n_rows * m); n_levels];
    let mut noise_flat = Vec::with_capacity(n_rows * m);
    // Scores are laid out level by level: all subjects' level-1 scores, then
    // all level-2 scores, and so on.
    for draw in draws {
        for (l, s) in draw.scores.into_iter().enumerate() {
            for unit in s {
                level_scores[l].extend(unit);
            }
        }
        for (l, lr) in draw.level_rows.into_iter().enumerate() {
            for r in lr {
                level_flat[l].extend(r);
            }
        }
        for e in draw.noise_rows {
            noise_flat.extend(e);
        }
        rows.extend(draw.rows);
    }
    let unit_counts = [
        spec.design.subjects,
        spec.design.subjects * j_count,
        n_rows,
    ];
    let scores = level_scores
        .into_iter()
        .enumerate()
        .map(|(l, flat)| DMatrix::from_row_slice(unit_counts[l], lambdas[l].len(), &flat))
        .collect();
    let level_curves = level_flat
        .into_iter()
        .map(|flat| DMatrix::from_row_slice(n_rows, m, &flat))
        .collect();
    let noise = DMatrix::from_row_slice(n_rows, m, &noise_flat);
    let curves = CurveSet::new(
        grid.clone(),
        spec.subject_labels(),
        spec.measure_labels(),
        rows,
    )?;

    let pointwise_var: Vec<Vec<f64>> = bases
        .iter()
        .zip(&lambdas)
        .map(|(e, l)| {
            (0..m)
                .map(|t| (0..l.len()).map(|a| l[a] * e[(t, a)] * e[(t, a)]).sum())
                .collect()
        })
        .collect();
    let pointwise_icc = (0..m)
        .map(|t| {
            let total: f64 =
                pointwise_var.iter().map(|v| v[t]).sum::<f64>() + spec.noise_variance;
            if total > 0.0 {
                pointwise_var[0][t] / total
            } else {
                f64::NAN
            }
        })
        .collect();

    Ok(Simulation {
        curves,
        truth: GroundTruth {
            mean,
            measure_means,
            eigenvalues: lambdas,
            eigenfunctions: bases,
            scores,
            level_curves,
            noise,
            noise_variance: spec.noise_variance,
            icc: spec.analytic_icc(),
            pointwise_icc,
        },
    })
}
