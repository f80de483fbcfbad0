//! Seeded permutation p-values.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use super::stats::SortedPool;
use crate::error::{Error, Result};
use crate::rng::substream;

/// Smallest number of permutations accepted.
pub const MIN_PERMUTATIONS: usize = 99;

/// Relative tolerance when comparing permuted statistics with the observed
/// one, so that ties broken by round-off still count as ties.
const TIE_TOLERANCE: f64 = 1e-10;

/// How group labels are permuted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    /// Shuffle all labels of the pooled sample.
    Unpaired,
    /// Pooled index `i` and `i + n_A` form a pair; swap labels within pairs.
    Paired,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PermutationResult {
    pub statistic: f64,
    pub p_value: f64,
    /// The pooled sample is constant, so no permutation can separate it.
    pub degenerate: bool,
}

/// `p = (1 + #{permuted ≥ observed}) / (R + 1)`.
///
/// `statistic(pool, sorted_labels)` receives labels in sorted-pool order.
/// Permutation `r` draws from substream `r` of `seed`, so the result does not
/// depend on how permutations are scheduled.
pub fn permutation_pvalue<F>(
    statistic: F,
    a: &[f64],
    b: &[f64],
    n_permutations: usize,
    seed: u64,
    scheme: Scheme,
) -> Result<PermutationResult>
where
    F: Fn(&SortedPool, &[bool]) -> f64 + Sync,
{
    if n_permutations < MIN_PERMUTATIONS {
        return Err(Error::InvalidParameter(format!(
            "at least {MIN_PERMUTATIONS} permutations are required, got {n_permutations}"
        )));
    }
    if a.is_empty() || b.is_empty() {
        return Err(Error::InsufficientData("both samples must be nonempty".into()));
    }
    if scheme == Scheme::Paired && a.len() != b.len() {
        return Err(Error::InvalidParameter(format!(
            "paired permutation needs equal sample sizes, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let pool = SortedPool::new(&pooled);
    let n_a = a.len();
    let labels: Vec<bool> = (0..pooled.len()).map(|i| i < n_a).collect();
    let observed = statistic(&pool, &pool.sorted_labels(&labels));
    if pool.values.first() == pool.values.last() {
        return Ok(PermutationResult {
            statistic: observed,
            p_value: 1.0,
            degenerate: true,
        });
    }
    let threshold = observed - TIE_TOLERANCE * observed.abs();
    let exceed: usize = (0..n_permutations)
        .into_par_iter()
        .map(|r| {
            let mut rng = substream(seed, r as u64);
            let mut perm = labels.clone();
            match scheme {
                Scheme::Unpaired => perm.shuffle(&mut rng),
                Scheme::Paired => {
                    for i in 0..n_a {
                        if rng.random::<bool>() {
                            perm.swap(i, i + n_a);
                        }
                    }
                }
            }
            usize::from(statistic(&pool, &pool.sorted_labels(&perm)) >= threshold)
        })
        .sum();
    Ok(PermutationResult {
        statistic: observed,
        p_value: (1 + exceed) as f64 / (n_permutations + 1) as f64,
        degenerate: false,
    })
}
