//! Best linear unbiased prediction of multilevel scores.
//!
//! For one subject, stack its centered rows into `y` and let `B` hold the
//! level-1 eigenfunctions (shared by all rows), the level-2 eigenfunctions
//! (one block per measure) and the level-3 eigenfunctions (one block per row).
//! With quadrature weights `W` and eigenvalues `Λ`,
//!
//! ```text
//! ŝ = (Bᵀ W B + c σ² Λ⁻¹)⁻¹ Bᵀ W y
//! ```
//!
//! which equals `Λ B̃ᵀ (B̃ Λ B̃ᵀ + c σ² I)⁻¹ ỹ` for the weighted basis
//! `B̃ = W^{1/2} B` and data `ỹ = W^{1/2} y`. The constant `c` is the mean
//! quadrature weight, so `σ²` keeps its meaning as a per-point variance. The
//! system only has `Σ_ℓ (units at level ℓ) · K_ℓ` unknowns and never involves
//! the stacked `rows × m` covariance.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::curves::{center_rows, CurveSet, MeasureMeans};
use crate::eigen::EigenSystem;
use crate::error::{Error, Result};
use crate::grid::same_grid;

/// Predicted scores, one matrix per level. Rows follow the unit order of
/// [`CurveSet::groups`]: subjects, then (subject, measure) cells, then rows.
#[derive(Debug, Clone, PartialEq)]
pub struct BlupScores {
    pub levels: Vec<DMatrix<f64>>,
}

/// Relative pivot size below which the noiseless system counts as singular.
const SINGULAR_PIVOT: f64 = 1e-10;

/// BLUP scores for every level of a nested fit.
///
/// `levels` holds the level eigensystems in order (subject, subject-measure,
/// replicate); one, two or three levels are supported.
pub fn blup_scores(
    x: &CurveSet,
    means: &MeasureMeans,
    levels: &[EigenSystem],
    noise_variance: f64,
) -> Result<BlupScores> {
    if levels.is_empty() || levels.len() > 3 {
        return Err(Error::InvalidParameter(format!(
            "BLUP supports 1 to 3 levels, got {}",
            levels.len()
        )));
    }
    if !(noise_variance >= 0.0) || !noise_variance.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "noise variance must be finite and nonnegative, got {noise_variance}"
        )));
    }
    let grid = x.grid();
    if levels.iter().any(|e| !same_grid(grid, e.grid())) {
        return Err(Error::GridMismatch);
    }
    let centered = center_rows(x, means)?;
    let m = grid.len();
    let weights = grid.weights();
    let shrink = grid.mean_weight() * noise_variance;

    // Cross-level Gram matrices E_ℓᵀ W E_ℓ'.
    let weighted: Vec<DMatrix<f64>> = levels
        .iter()
        .map(|e| DMatrix::from_fn(m, e.len(), |t, a| e.functions()[(t, a)] * weights[t]))
        .collect();
    let grams: Vec<Vec<DMatrix<f64>>> = levels
        .iter()
        .map(|a| {
            weighted
                .iter()
                .map(|wb| a.functions().transpose() * wb)
                .collect()
        })
        .collect();
    let dims: Vec<usize> = levels.iter().map(|e| e.len()).collect();

    let groups = centered.groups();
    let per_subject: Vec<Result<Vec<DVector<f64>>>> = groups
        .par_iter()
        .map(|g| {
            let rows: Vec<(usize, usize)> = g
                .measures
                .iter()
                .enumerate()
                .flat_map(|(jpos, (_, members))| members.iter().map(move |&r| (jpos, r)))
                .collect();
            let units = [1, g.measures.len(), rows.len()];
            let mut offsets = [0usize; 3];
            let mut p = 0;
            for l in 0..levels.len() {
                offsets[l] = p;
                p += units[l] * dims[l];
            }
            let mut lhs = DMatrix::zeros(p, p);
            let mut rhs = DVector::zeros(p);
            for (rpos, &(jpos, r)) in rows.iter().enumerate() {
                let unit = [0, jpos, rpos];
                let y = DVector::from_column_slice(centered.row(r));
                for l in 0..levels.len() {
                    let start = offsets[l] + unit[l] * dims[l];
                    let proj = weighted[l].transpose() * &y;
                    let mut target = rhs.rows_mut(start, dims[l]);
                    target += proj;
                    for l2 in 0..levels.len() {
                        let start2 = offsets[l2] + unit[l2] * dims[l2];
                        let mut block = lhs.view_mut((start, start2), (dims[l], dims[l2]));
                        block += &grams[l][l2];
                    }
                }
            }
            if shrink > 0.0 {
                for l in 0..levels.len() {
                    for u in 0..units[l] {
                        for a in 0..dims[l] {
                            let idx = offsets[l] + u * dims[l] + a;
                            lhs[(idx, idx)] += shrink / levels[l].eigenvalues()[a];
                        }
                    }
                }
            }
            let solution = solve_spd(lhs, &rhs, shrink == 0.0).ok_or_else(|| Error::Singular {
                subject: x.subject_label(g.subject).to_string(),
            })?;
            Ok((0..levels.len())
                .map(|l| solution.rows(offsets[l], units[l] * dims[l]).into_owned())
                .collect())
        })
        .collect();

    let unit_totals = [
        groups.len(),
        groups.iter().map(|g| g.measures.len()).sum(),
        centered.n_rows(),
    ];
    let mut out: Vec<Vec<f64>> = vec![Vec::new(); levels.len()];
    for res in per_subject {
        for (l, block) in res?.into_iter().enumerate() {
            out[l].extend(block.iter());
        }
    }
    let levels = out
        .into_iter()
        .zip(&dims)
        .enumerate()
        .map(|(l, (flat, &k))| DMatrix::from_row_slice(unit_totals[l], k, &flat))
        .collect();
    Ok(BlupScores { levels })
}

fn solve_spd(lhs: DMatrix<f64>, rhs: &DVector<f64>, check_pivots: bool) -> Option<DVector<f64>> {
    if lhs.nrows() == 0 {
        return Some(DVector::zeros(0));
    }
    let scale = lhs.diagonal().amax();
    let chol = lhs.cholesky()?;
    let l = chol.l_dirty();
    let min_pivot = (0..l.nrows()).map(|i| l[(i, i)] * l[(i, i)]).fold(f64::INFINITY, f64::min);
    if check_pivots && !(min_pivot > SINGULAR_PIVOT * scale) {
        return None;
    }
    Some(chol.solve(rhs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curves::NestedIndex;
    use crate::fpca::project_scores;
    use crate::grid::{Curve, Grid};
    use crate::simkl::fourier_basis;
    use std::sync::Arc;

    fn basis_system(grid: &Arc<Grid>, offset: usize, values: &[f64]) -> EigenSystem {
        let curves = fourier_basis(grid, offset + values.len());
        let f = DMatrix::from_fn(grid.len(), values.len(), |t, a| curves[offset + a].values()[t]);
        EigenSystem::from_parts(grid.clone(), values.to_vec(), f, vec![0.0; values.len()], 0).unwrap()
    }

    /// Curves `Σ_a s_a e_a(t)` plus a deterministic wiggle.
    fn single_level(grid: &Arc<Grid>, eig: &EigenSystem, n: usize, wiggle: f64) -> CurveSet {
        let rows = (0..n)
            .map(|i| {
                (0..grid.len())
                    .map(|t| {
                        let s1 = (i as f64 * 0.7).sin() * 2.0;
                        let s2 = (i as f64 * 1.3).cos();
                        s1 * eig.functions()[(t, 0)]
                            + s2 * eig.functions()[(t, 1)]
                            + wiggle * ((i * 31 + t * 17) % 7) as f64
                    })
                    .collect()
            })
            .collect();
        CurveSet::from_independent(grid.clone(), rows).unwrap()
    }

    #[test]
    fn noiseless_single_level_equals_projection() {
        let grid = Arc::new(Grid::uniform(101).unwrap());
        let eig = basis_system(&grid, 0, &[4.0, 2.0]);
        let x = single_level(&grid, &eig, 12, 0.05);
        let means = MeasureMeans::global_only(vec![0.0; 101], 1);
        let blup = blup_scores(&x, &means, std::slice::from_ref(&eig), 0.0).unwrap();
        let zero = Curve::new(grid.clone(), vec![0.0; 101]).unwrap();
        let proj = project_scores(&x, &zero, &eig).unwrap();
        assert!((&blup.levels[0] - &proj).amax() < 1e-8);
    }

    #[test]
    fn large_noise_shrinks_scores_to_zero() {
        let grid = Arc::new(Grid::uniform(51).unwrap());
        let eig = basis_system(&grid, 0, &[4.0, 2.0]);
        let x = single_level(&grid, &eig, 8, 0.1);
        let means = MeasureMeans::global_only(vec![0.0; 51], 1);
        let small = blup_scores(&x, &means, std::slice::from_ref(&eig), 1e-6).unwrap();
        let large = blup_scores(&x, &means, std::slice::from_ref(&eig), 1e6).unwrap();
        assert!(large.levels[0].norm() < 1e-3 * small.levels[0].norm());
    }

    #[test]
    fn score_norms_do_not_grow_with_noise() {
        let grid = Arc::new(Grid::uniform(41).unwrap());
        let levels = [basis_system(&grid, 0, &[3.0, 1.0]), basis_system(&grid, 2, &[1.5, 0.5])];
        let mut rows = Vec::new();
        for i in 1..=5 {
            for j in 1..=3 {
                let v = (0..41)
                    .map(|t| ((i * 13 + j * 7 + t * 3) % 11) as f64 / 5.0 - 1.0)
                    .collect();
                rows.push((NestedIndex::new(i, j, None), v));
            }
        }
        let x = CurveSet::from_rows(grid.clone(), rows).unwrap();
        let means = MeasureMeans::global_only(vec![0.0; 41], 3);
        let mut previous: Option<Vec<f64>> = None;
        for noise in [0.0, 0.01, 0.1, 0.5, 1.0, 5.0, 50.0] {
            let s = blup_scores(&x, &means, &levels, noise).unwrap();
            // stacked score vector of each subject
            let norms: Vec<f64> = (0..5)
                .map(|i| {
                    let l1 = s.levels[0].row(i).norm_squared();
                    let l2: f64 = (0..3).map(|j| s.levels[1].row(i * 3 + j).norm_squared()).sum();
                    (l1 + l2).sqrt()
                })
                .collect();
            if let Some(prev) = &previous {
                for (a, b) in norms.iter().zip(prev) {
                    assert!(*a <= b * (1.0 + 1e-12), "{a} > {b} at noise {noise}");
                }
            }
            previous = Some(norms);
        }
    }

    #[test]
    fn collinear_noiseless_system_names_subject() {
        let grid = Arc::new(Grid::uniform(21).unwrap());
        let e = basis_system(&grid, 0, &[1.0]);
        let mut rows = Vec::new();
        for j in 1..=2 {
            rows.push((NestedIndex::new(1, j, None), vec![0.5; 21]));
        }
        let x = CurveSet::from_rows(grid.clone(), rows).unwrap();
        let means = MeasureMeans::global_only(vec![0.0; 21], 2);
        match blup_scores(&x, &means, &[e.clone(), e.clone()], 0.0) {
            Err(Error::Singular { subject }) => assert_eq!(subject, "S1"),
            other => panic!("unexpected {other:?}"),
        }
        assert!(blup_scores(&x, &means, &[e.clone(), e], 0.1).is_ok());
    }

    #[test]
    fn empty_level_gives_zero_columns() {
        let grid = Arc::new(Grid::uniform(11).unwrap());
        let e = basis_system(&grid, 0, &[1.0]);
        let rows = (1..=3)
            .flat_map(|i| (1..=2).map(move |j| (NestedIndex::new(i, j, None), vec![i as f64; 11])))
            .collect();
        let x = CurveSet::from_rows(grid.clone(), rows).unwrap();
        let means = MeasureMeans::global_only(vec![0.0; 11], 2);
        let s = blup_scores(&x, &means, &[e, EigenSystem::empty(grid, 0)], 0.2).unwrap();
        assert_eq!(s.levels[0].shape(), (3, 1));
        assert_eq!(s.levels[1].shape(), (6, 0));
    }
}
