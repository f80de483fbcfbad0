//! Nested collections of curves sharing one grid.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::grid::{same_grid, Curve, Grid};

/// Position of a curve in the hierarchy: subject `i`, measure `j` and, for
/// three-level data, replicate `k`. All indices are 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NestedIndex {
    pub subject: usize,
    pub measure: usize,
    pub replicate: Option<usize>,
}

impl NestedIndex {
    pub fn new(subject: usize, measure: usize, replicate: Option<usize>) -> Self {
        NestedIndex {
            subject,
            measure,
            replicate,
        }
    }
}

/// Rows of one subject grouped by measure, in ascending measure order.
#[derive(Debug, Clone)]
pub struct SubjectRows {
    pub subject: usize,
    /// `(measure, row indices ordered by replicate)`.
    pub measures: Vec<(usize, Vec<usize>)>,
}

/// Sizes of a complete rectangular design.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BalancedDesign {
    pub subjects: usize,
    pub measures: usize,
    pub replicates: usize,
}

/// Curves on a common grid, each tagged with its [`NestedIndex`].
#[derive(Debug, Clone, PartialEq)]
pub struct CurveSet {
    grid: Arc<Grid>,
    index: Vec<NestedIndex>,
    values: Vec<f64>,
    subjects: Vec<String>,
    measures: Vec<String>,
}

impl CurveSet {
    /// Build a curve set. `subjects[i - 1]` and `measures[j - 1]` label the
    /// 1-based indices used in the rows.
    pub fn new(
        grid: Arc<Grid>,
        subjects: Vec<String>,
        measures: Vec<String>,
        rows: Vec<(NestedIndex, Vec<f64>)>,
    ) -> Result<Self> {
        let m = grid.len();
        let mut index = Vec::with_capacity(rows.len());
        let mut values = Vec::with_capacity(rows.len() * m);
        let mut seen = HashSet::with_capacity(rows.len());
        for (r, (idx, vals)) in rows.into_iter().enumerate() {
            if idx.subject == 0 || idx.subject > subjects.len() {
                return Err(Error::InvalidParameter(format!(
                    "row {r}: subject index {} out of range",
                    idx.subject
                )));
            }
            if idx.measure == 0 || idx.measure > measures.len() {
                return Err(Error::InvalidParameter(format!(
                    "row {r}: measure index {} out of range",
                    idx.measure
                )));
            }
            if vals.len() != m {
                return Err(Error::Dimension(format!(
                    "row {r} has {} values on a grid of {m} points",
                    vals.len()
                )));
            }
            if let Some(t) = vals.iter().position(|v| !v.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "row {r}: non-finite value at grid point {t}"
                )));
            }
            if !seen.insert(idx) {
                return Err(Error::InvalidParameter(format!(
                    "row {r}: duplicate index {idx:?}"
                )));
            }
            index.push(idx);
            values.extend(vals);
        }
        Ok(CurveSet {
            grid,
            index,
            values,
            subjects,
            measures,
        })
    }

    /// Build a curve set with generated labels `S1, S2, …` and `M1, M2, …`.
    pub fn from_rows(grid: Arc<Grid>, rows: Vec<(NestedIndex, Vec<f64>)>) -> Result<Self> {
        let n = rows.iter().map(|(i, _)| i.subject).max().unwrap_or(0);
        let j = rows.iter().map(|(i, _)| i.measure).max().unwrap_or(0);
        let subjects = (1..=n).map(|i| format!("S{i}")).collect();
        let measures = (1..=j).map(|i| format!("M{i}")).collect();
        Self::new(grid, subjects, measures, rows)
    }

    /// Independent curves, one subject per row (single-level data).
    pub fn from_independent(grid: Arc<Grid>, rows: Vec<Vec<f64>>) -> Result<Self> {
        let rows = rows
            .into_iter()
            .enumerate()
            .map(|(i, v)| (NestedIndex::new(i + 1, 1, None), v))
            .collect();
        Self::from_rows(grid, rows)
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn n_rows(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let m = self.grid.len();
        &self.values[r * m..(r + 1) * m]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.grid.len())
    }

    pub fn index(&self, r: usize) -> NestedIndex {
        self.index[r]
    }

    pub fn indices(&self) -> &[NestedIndex] {
        &self.index
    }

    pub fn curve(&self, r: usize) -> Curve {
        Curve::new(self.grid.clone(), self.row(r).to_vec()).expect("validated row")
    }

    pub fn subjects(&self) -> &[String] {
        &self.subjects
    }

    pub fn measures(&self) -> &[String] {
        &self.measures
    }

    pub fn subject_label(&self, subject: usize) -> &str {
        &self.subjects[subject - 1]
    }

    pub fn measure_label(&self, measure: usize) -> &str {
        &self.measures[measure - 1]
    }

    /// Row-major `n_rows × m` copy of the data.
    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n_rows(), self.grid.len(), &self.values)
    }

    /// Same layout with replaced values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        if values.len() != self.values.len() {
            return Err(Error::Dimension(format!(
                "expected {} values, got {}",
                self.values.len(),
                values.len()
            )));
        }
        Ok(CurveSet {
            values,
            ..self.clone()
        })
    }

    /// Rows grouped by subject and measure, ordered by index.
    pub fn groups(&self) -> Vec<SubjectRows> {
        let mut tree: BTreeMap<usize, BTreeMap<usize, Vec<(Option<usize>, usize)>>> =
            BTreeMap::new();
        for (r, idx) in self.index.iter().enumerate() {
            tree.entry(idx.subject)
                .or_default()
                .entry(idx.measure)
                .or_default()
                .push((idx.replicate, r));
        }
        tree.into_iter()
            .map(|(subject, by_measure)| SubjectRows {
                subject,
                measures: by_measure
                    .into_iter()
                    .map(|(measure, mut rows)| {
                        rows.sort();
                        (measure, rows.into_iter().map(|(_, r)| r).collect())
                    })
                    .collect(),
            })
            .collect()
    }

    /// Human-readable per-subject measure and replicate counts.
    pub fn layout_report(&self) -> String {
        let mut out = String::new();
        for g in self.groups() {
            let counts: Vec<String> = g
                .measures
                .iter()
                .map(|(j, rows)| format!("{}={}", self.measure_label(*j), rows.len()))
                .collect();
            let _ = write!(
                out,
                "{}{}: {} measures [{}]",
                if out.is_empty() { "" } else { "; " },
                self.subject_label(g.subject),
                g.measures.len(),
                counts.join(", ")
            );
        }
        out
    }

    /// Check that every subject has every measure with the same number of
    /// replicates and return the design sizes.
    pub fn balanced_design(&self) -> Result<BalancedDesign> {
        if self.is_empty() {
            return Err(Error::EmptyInput("curve set has no rows".into()));
        }
        let groups = self.groups();
        let j_all = self.measures.len();
        let k0 = groups[0].measures[0].1.len();
        let balanced = groups.len() == self.subjects.len()
            && groups.iter().all(|g| {
                g.measures.len() == j_all && g.measures.iter().all(|(_, rows)| rows.len() == k0)
            });
        if !balanced {
            return Err(Error::Unbalanced(self.layout_report()));
        }
        Ok(BalancedDesign {
            subjects: groups.len(),
            measures: j_all,
            replicates: k0,
        })
    }
}

/// Global mean `μ̂` and per-measure deviations `η̂^j`.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasureMeans {
    pub global: Vec<f64>,
    /// `deviations[j - 1]` is the deviation of measure `j` from the global mean.
    pub deviations: Vec<Vec<f64>>,
}

impl MeasureMeans {
    /// Means with every measure deviation fixed at zero.
    pub fn global_only(global: Vec<f64>, n_measures: usize) -> Self {
        let m = global.len();
        MeasureMeans {
            global,
            deviations: vec![vec![0.0; m]; n_measures],
        }
    }
}

/// Subtract `μ̂ + η̂^j` from every row, keeping row order.
pub fn center_rows(x: &CurveSet, means: &MeasureMeans) -> Result<CurveSet> {
    let m = x.grid().len();
    if means.global.len() != m || means.deviations.iter().any(|d| d.len() != m) {
        return Err(Error::GridMismatch);
    }
    let mut out = Vec::with_capacity(x.n_rows() * m);
    for (r, row) in x.rows().enumerate() {
        let j = x.index(r).measure;
        let dev = means
            .deviations
            .get(j - 1)
            .ok_or(Error::MissingMean { measure: j })?;
        out.extend(
            row.iter()
                .zip(&means.global)
                .zip(dev)
                .map(|((v, mu), eta)| v - mu - eta),
        );
    }
    x.with_values(out)
}

/// Check that two curve sets share a grid.
pub fn ensure_same_grid(a: &Arc<Grid>, b: &Arc<Grid>) -> Result<()> {
    if same_grid(a, b) {
        Ok(())
    } else {
        Err(Error::GridMismatch)
    }
}
