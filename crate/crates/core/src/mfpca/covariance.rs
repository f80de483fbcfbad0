//! Moment estimators of the level covariance surfaces.

use nalgebra::DMatrix;

use crate::curves::{center_rows, BalancedDesign, CurveSet, MeasureMeans};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::smooth::repair_diagonal;

/// Covariance surfaces of a nested model.
///
/// For two-level data `sigma_t`, `sigma_b` and `sigma_w` are the total,
/// between-subject and within-subject surfaces. For three-level data they are
/// `H3`, `H1` and `H3 − H1`, and the individual cross-product and level
/// surfaces are kept in `three_level`.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelCovariances {
    pub sigma_t: DMatrix<f64>,
    pub sigma_b: DMatrix<f64>,
    pub sigma_w: DMatrix<f64>,
    /// Lowest-level surface with its noise-inflated diagonal repaired.
    pub within_repaired: DMatrix<f64>,
    pub three_level: Option<ThreeLevelSurfaces>,
    pub noise_variance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThreeLevelSurfaces {
    /// Cross-products between distinct measures of a subject.
    pub h1: DMatrix<f64>,
    /// Cross-products between distinct replicates of a subject-measure cell.
    pub h2: DMatrix<f64>,
    /// Same-row products.
    pub h3: DMatrix<f64>,
    pub k1: DMatrix<f64>,
    pub k2: DMatrix<f64>,
    /// `H3 − H2` with its diagonal replaced by the off-diagonal extension.
    pub k3: DMatrix<f64>,
}

/// Grand mean and per-measure deviations from it.
pub fn measure_means(x: &CurveSet) -> Result<MeasureMeans> {
    if x.is_empty() {
        return Err(Error::EmptyInput("cannot estimate means of zero curves".into()));
    }
    let m = x.grid().len();
    let n_measures = x.measures().len();
    let mut global = vec![0.0; m];
    let mut sums = vec![vec![0.0; m]; n_measures];
    let mut counts = vec![0usize; n_measures];
    for (r, row) in x.rows().enumerate() {
        let j = x.index(r).measure - 1;
        counts[j] += 1;
        for t in 0..m {
            global[t] += row[t];
            sums[j][t] += row[t];
        }
    }
    let n = x.n_rows() as f64;
    global.iter_mut().for_each(|g| *g /= n);
    let mut deviations = Vec::with_capacity(n_measures);
    for (j, (sum, count)) in sums.into_iter().zip(counts).enumerate() {
        if count == 0 {
            return Err(Error::EmptyGroup(x.measures()[j].clone()));
        }
        deviations.push(
            sum.iter()
                .zip(&global)
                .map(|(s, g)| s / count as f64 - g)
                .collect(),
        );
    }
    Ok(MeasureMeans { global, deviations })
}

/// Centered data split into per-row, per-cell and per-subject sums.
struct CenteredSums {
    rows: DMatrix<f64>,
    cells: DMatrix<f64>,
    subjects: DMatrix<f64>,
    design: BalancedDesign,
}

fn centered_sums(x: &CurveSet, means: &MeasureMeans) -> Result<CenteredSums> {
    let design = x.balanced_design()?;
    let centered = center_rows(x, means)?;
    let m = x.grid().len();
    let groups = centered.groups();
    let mut rows = DMatrix::zeros(centered.n_rows(), m);
    let mut cells = DMatrix::zeros(design.subjects * design.measures, m);
    let mut subjects = DMatrix::zeros(design.subjects, m);
    let mut r_out = 0;
    let mut c_out = 0;
    for (s_out, g) in groups.iter().enumerate() {
        for (_, members) in &g.measures {
            for &r in members {
                let row = centered.row(r);
                for t in 0..m {
                    rows[(r_out, t)] = row[t];
                    cells[(c_out, t)] += row[t];
                    subjects[(s_out, t)] += row[t];
                }
                r_out += 1;
            }
            c_out += 1;
        }
    }
    Ok(CenteredSums {
        rows,
        cells,
        subjects,
        design,
    })
}

fn gram(a: &DMatrix<f64>) -> DMatrix<f64> {
    a.transpose() * a
}

fn symmetrize(mut s: DMatrix<f64>) -> DMatrix<f64> {
    let m = s.nrows();
    for i in 0..m {
        for j in i + 1..m {
            let avg = 0.5 * (s[(i, j)] + s[(j, i)]);
            s[(i, j)] = avg;
            s[(j, i)] = avg;
        }
    }
    s
}

/// Total covariance: mean over all rows of the outer products of centered rows.
pub fn sigma_t_hat(x: &CurveSet, means: &MeasureMeans) -> Result<DMatrix<f64>> {
    let sums = centered_sums(x, means)?;
    let n_rows = sums.rows.nrows();
    if n_rows < 2 {
        return Err(Error::InsufficientData(format!(
            "total covariance needs at least 2 curves, got {n_rows}"
        )));
    }
    Ok(symmetrize(gram(&sums.rows) / n_rows as f64))
}

/// Between-subject covariance: U-statistic over pairs of distinct measures
/// within each subject (all replicate pairs when replicates are present).
pub fn sigma_b_hat(x: &CurveSet, means: &MeasureMeans) -> Result<DMatrix<f64>> {
    let sums = centered_sums(x, means)?;
    between_from_sums(&sums)
}

fn between_from_sums(sums: &CenteredSums) -> Result<DMatrix<f64>> {
    let BalancedDesign {
        subjects: n,
        measures: j,
        replicates: k,
    } = sums.design;
    if j < 2 {
        return Err(Error::InsufficientReplication(format!(
            "between-subject covariance needs at least 2 measures per subject, got {j}"
        )));
    }
    let pairs = (n * j * (j - 1) * k * k) as f64;
    Ok(symmetrize((gram(&sums.subjects) - gram(&sums.cells)) / pairs))
}

/// Within-subject covariance `Σ̂_T − Σ̂_B`.
pub fn sigma_w_hat(sigma_t: &DMatrix<f64>, sigma_b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if sigma_t.shape() != sigma_b.shape() {
        return Err(Error::Dimension(format!(
            "{:?} and {:?} surfaces",
            sigma_t.shape(),
            sigma_b.shape()
        )));
    }
    Ok(sigma_t - sigma_b)
}

/// Centering design matrix `(1/N)(I − 11ᵀ/N)` for `N` stacked rows.
pub fn g_total(n_rows: usize) -> DMatrix<f64> {
    let n = n_rows as f64;
    DMatrix::from_fn(n_rows, n_rows, |i, j| {
        let delta = if i == j { 1.0 } else { 0.0 };
        (delta - 1.0 / n) / n
    })
}

/// Sandwich form `Xᵀ G X` for a row-stacked `N × m` data matrix and an
/// `N × N` design matrix.
pub fn sandwich_covariance(x: &DMatrix<f64>, g: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if g.nrows() != x.nrows() || g.ncols() != x.nrows() {
        return Err(Error::Dimension(format!(
            "data is {}×{} but design matrix is {}×{}",
            x.nrows(),
            x.ncols(),
            g.nrows(),
            g.ncols()
        )));
    }
    Ok(x.transpose() * g * x)
}

/// White-noise variance as the average gap between the raw diagonal and the
/// diagonal of a smoothed (or repaired) version of the same surface.
pub fn estimate_noise(raw: &DMatrix<f64>, smoothed: &DMatrix<f64>, grid: &Grid) -> Result<f64> {
    let m = grid.len();
    if raw.shape() != (m, m) || smoothed.shape() != (m, m) {
        return Err(Error::Dimension(format!(
            "{:?} and {:?} surfaces on a grid of {m} points",
            raw.shape(),
            smoothed.shape()
        )));
    }
    let gap: f64 = (0..m).map(|t| raw[(t, t)] - smoothed[(t, t)]).sum::<f64>() / m as f64;
    Ok(gap.max(0.0))
}

/// Total, between and within surfaces for two-level data, with the noise
/// variance read off the within-surface diagonal.
pub fn two_level_covariances(x: &CurveSet, means: &MeasureMeans) -> Result<LevelCovariances> {
    let sums = centered_sums(x, means)?;
    let n_rows = sums.rows.nrows();
    let sigma_t = symmetrize(gram(&sums.rows) / n_rows as f64);
    let sigma_b = between_from_sums(&sums)?;
    let sigma_w = sigma_w_hat(&sigma_t, &sigma_b)?;
    let within_repaired = repair_diagonal(&sigma_w, x.grid())?;
    let noise_variance = estimate_noise(&sigma_w, &within_repaired, x.grid())?;
    Ok(LevelCovariances {
        sigma_t,
        sigma_b,
        sigma_w,
        within_repaired,
        three_level: None,
        noise_variance,
    })
}

/// Cross-product surfaces and level surfaces for three-level data.
pub fn three_level_covariances(x: &CurveSet, means: &MeasureMeans) -> Result<LevelCovariances> {
    let sums = centered_sums(x, means)?;
    let BalancedDesign {
        subjects: n,
        measures: j,
        replicates: k,
    } = sums.design;
    if j < 2 || k < 2 {
        return Err(Error::InsufficientReplication(format!(
            "three-level covariances need at least 2 measures and 2 replicates, got {j} and {k}"
        )));
    }
    let rows_gram = gram(&sums.rows);
    let cells_gram = gram(&sums.cells);
    let h1 = between_from_sums(&sums)?;
    let h2 = symmetrize((&cells_gram - &rows_gram) / (n * j * k * (k - 1)) as f64);
    let h3 = symmetrize(rows_gram / (n * j * k) as f64);
    let k1 = h1.clone();
    let k2 = &h2 - &h1;
    let raw_k3 = &h3 - &h2;
    let k3 = repair_diagonal(&raw_k3, x.grid())?;
    let noise_variance = estimate_noise(&raw_k3, &k3, x.grid())?;
    Ok(LevelCovariances {
        sigma_w: &h3 - &h1,
        sigma_t: h3.clone(),
        sigma_b: h1.clone(),
        within_repaired: k3.clone(),
        three_level: Some(ThreeLevelSurfaces {
            h1,
            h2,
            h3,
            k1,
            k2,
            k3,
        }),
        noise_variance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curves::NestedIndex;
    use std::sync::Arc;

    fn grid(m: usize) -> Arc<Grid> {
        Arc::new(Grid::uniform(m).unwrap())
    }

    fn two_level(rows: Vec<((usize, usize), Vec<f64>)>, m: usize) -> CurveSet {
        CurveSet::from_rows(
            grid(m),
            rows.into_iter()
                .map(|((i, j), v)| (NestedIndex::new(i, j, None), v))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn identical_rows_have_zero_deviations() {
        let x = two_level(
            vec![
                ((1, 1), vec![1.0, 2.0]),
                ((1, 2), vec![1.0, 2.0]),
                ((2, 1), vec![1.0, 2.0]),
                ((2, 2), vec![1.0, 2.0]),
            ],
            2,
        );
        let mm = measure_means(&x).unwrap();
        assert_eq!(mm.global, vec![1.0, 2.0]);
        assert!(mm.deviations.iter().flatten().all(|v| *v == 0.0));
    }

    #[test]
    fn symmetric_group_means() {
        let c = [0.5, -2.0, 1.0];
        let x = two_level(
            vec![
                ((1, 1), c.to_vec()),
                ((2, 1), c.to_vec()),
                ((1, 2), c.iter().map(|v| -v).collect()),
                ((2, 2), c.iter().map(|v| -v).collect()),
            ],
            3,
        );
        let mm = measure_means(&x).unwrap();
        assert_eq!(mm.deviations[0], c.to_vec());
        assert_eq!(mm.deviations[1], c.iter().map(|v| -v).collect::<Vec<_>>());
    }

    #[test]
    fn empty_measure_group_is_reported() {
        let x = CurveSet::new(
            grid(2),
            vec!["a".into()],
            vec!["HIIT".into(), "CTR".into()],
            vec![(NestedIndex::new(1, 1, None), vec![0.0, 1.0])],
        )
        .unwrap();
        assert!(matches!(measure_means(&x), Err(Error::EmptyGroup(ref g)) if g == "CTR"));
    }

    #[test]
    fn sigma_t_of_mirrored_pair() {
        let r = vec![1.0, -2.0, 0.5];
        let x = two_level(
            vec![((1, 1), r.clone()), ((1, 2), r.iter().map(|v| -v).collect())],
            3,
        );
        let means = MeasureMeans::global_only(vec![0.0; 3], 2);
        let s = sigma_t_hat(&x, &means).unwrap();
        for a in 0..3 {
            for b in 0..3 {
                assert_eq!(s[(a, b)], r[a] * r[b]);
            }
        }
    }

    #[test]
    fn sigma_b_equals_sigma_t_without_within_variation() {
        let x = two_level(
            vec![
                ((1, 1), vec![1.0, 2.0, 0.0]),
                ((1, 2), vec![1.0, 2.0, 0.0]),
                ((2, 1), vec![-1.0, 0.5, 3.0]),
                ((2, 2), vec![-1.0, 0.5, 3.0]),
                ((3, 1), vec![0.0, -2.5, -3.0]),
                ((3, 2), vec![0.0, -2.5, -3.0]),
            ],
            3,
        );
        let means = measure_means(&x).unwrap();
        let t = sigma_t_hat(&x, &means).unwrap();
        let b = sigma_b_hat(&x, &means).unwrap();
        assert!((t - b).amax() < 1e-14);
    }

    #[test]
    fn sigma_b_needs_two_measures() {
        let x = two_level(vec![((1, 1), vec![0.0, 1.0]), ((2, 1), vec![1.0, 0.0])], 2);
        let means = measure_means(&x).unwrap();
        assert!(matches!(
            sigma_b_hat(&x, &means),
            Err(Error::InsufficientReplication(_))
        ));
    }

    #[test]
    fn sigma_t_rejects_unbalanced() {
        let x = two_level(
            vec![
                ((1, 1), vec![0.0, 1.0]),
                ((1, 2), vec![1.0, 0.0]),
                ((2, 1), vec![1.0, 1.0]),
            ],
            2,
        );
        let means = measure_means(&x).unwrap();
        assert!(matches!(sigma_t_hat(&x, &means), Err(Error::Unbalanced(_))));
    }

    #[test]
    fn sigma_w_examples() {
        let t = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 2.0]);
        let b = DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, 1.0]);
        let w = sigma_w_hat(&t, &b).unwrap();
        assert_eq!(w, DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, 1.0]));
        assert_eq!(sigma_w_hat(&t, &t).unwrap(), DMatrix::zeros(2, 2));
        assert!(matches!(
            sigma_w_hat(&t, &DMatrix::zeros(3, 3)),
            Err(Error::Dimension(_))
        ));

        let g = Arc::new(Grid::with_weights(vec![0.0, 1.0], vec![0.5, 0.5]).unwrap());
        // Trimming after weighting: diag(-1, 1)·w = diag(-0.5, 0.5).
        let eig = crate::eigen::eigendecompose(&w, &g).unwrap();
        assert_eq!(eig.len(), 1);
        assert!((eig.eigenvalues()[0] - 0.5).abs() < 1e-15);
        let e = eig.eigenfunction(0);
        assert!(e.values()[0].abs() < 1e-15 && e.values()[1] > 0.0);
    }

    #[test]
    fn sandwich_examples() {
        let x = DMatrix::from_row_slice(4, 3, &[
            1.0, 2.0, 0.5, //
            -1.0, 0.0, 2.0, //
            3.0, 1.0, -1.0, //
            0.5, -2.0, 0.0,
        ]);
        assert_eq!(
            sandwich_covariance(&x, &DMatrix::zeros(4, 4)).unwrap(),
            DMatrix::zeros(3, 3)
        );
        let s = sandwich_covariance(&x, &g_total(4)).unwrap();
        let mean: Vec<f64> = (0..3).map(|c| x.column(c).mean()).collect();
        for a in 0..3 {
            for b in 0..3 {
                let direct: f64 = (0..4)
                    .map(|r| (x[(r, a)] - mean[a]) * (x[(r, b)] - mean[b]))
                    .sum::<f64>()
                    / 4.0;
                assert!((s[(a, b)] - direct).abs() < 1e-12);
            }
        }
        assert!((&s - s.transpose()).amax() < 1e-12);
        assert!(matches!(
            sandwich_covariance(&x, &g_total(3)),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn noise_gap_examples() {
        let g = Grid::uniform(4).unwrap();
        let s = DMatrix::from_fn(4, 4, |i, j| (i + j) as f64);
        assert_eq!(estimate_noise(&s, &s, &g).unwrap(), 0.0);
        let raw = &s + DMatrix::identity(4, 4) * 2.0;
        assert!((estimate_noise(&raw, &s, &g).unwrap() - 2.0).abs() < 1e-15);
        // clamped at zero
        assert_eq!(estimate_noise(&s, &raw, &g).unwrap(), 0.0);
    }

    #[test]
    fn three_level_needs_replication() {
        let mut rows = vec![];
        for i in 1..=2 {
            for j in 1..=2 {
                rows.push((NestedIndex::new(i, j, Some(1)), vec![i as f64, j as f64]));
            }
        }
        let x = CurveSet::from_rows(grid(2), rows).unwrap();
        let means = measure_means(&x).unwrap();
        assert!(matches!(
            three_level_covariances(&x, &means),
            Err(Error::InsufficientReplication(_))
        ));
    }

    #[test]
    fn three_level_identical_rows_within_subject() {
        let mut rows = vec![];
        let z = [[1.0, -1.0, 0.5, 2.0], [0.3, 0.2, -1.5, 0.0], [-2.0, 1.0, 1.0, -0.5]];
        for i in 1..=3 {
            for j in 1..=2 {
                for k in 1..=3 {
                    rows.push((NestedIndex::new(i, j, Some(k)), z[i - 1].to_vec()));
                }
            }
        }
        let x = CurveSet::from_rows(grid(4), rows).unwrap();
        let means = measure_means(&x).unwrap();
        let cov = three_level_covariances(&x, &means).unwrap();
        let s = cov.three_level.unwrap();
        assert!((&s.h1 - &s.h2).amax() < 1e-14);
        assert!((&s.h2 - &s.h3).amax() < 1e-14);
    }
}
