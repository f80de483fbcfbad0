//! Univariate two-sample statistics.
//!
//! Every statistic is evaluated from the pooled sample in sorted order plus a
//! label per sorted position (`true` for sample A), so a permutation only
//! relabels positions and costs `O(N)`.

/// Pooled values in ascending order; `order[r]` is the pooled index at sorted
/// position `r`.
#[derive(Debug, Clone)]
pub struct SortedPool {
    pub values: Vec<f64>,
    pub order: Vec<usize>,
}

impl SortedPool {
    pub fn new(pooled: &[f64]) -> Self {
        let mut order: Vec<usize> = (0..pooled.len()).collect();
        order.sort_by(|&a, &b| pooled[a].total_cmp(&pooled[b]).then(a.cmp(&b)));
        SortedPool {
            values: order.iter().map(|&i| pooled[i]).collect(),
            order,
        }
    }

    /// Labels in sorted order from labels indexed by pooled position.
    pub fn sorted_labels(&self, labels: &[bool]) -> Vec<bool> {
        self.order.iter().map(|&i| labels[i]).collect()
    }

    /// End (exclusive) of each run of tied values.
    fn tie_ends(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let n = self.values.len();
        let mut start = 0;
        std::iter::from_fn(move || {
            if start >= n {
                return None;
            }
            let mut end = start + 1;
            while end < n && self.values[end] == self.values[start] {
                end += 1;
            }
            let run = (start, end);
            start = end;
            Some(run)
        })
    }
}

/// Kolmogorov–Smirnov distance `sup |F_A − F_B|`.
pub fn ks(pool: &SortedPool, labels: &[bool], n_a: usize) -> f64 {
    let n_b = labels.len() - n_a;
    let (mut ca, mut cb) = (0usize, 0usize);
    let mut best = 0.0f64;
    for (start, end) in pool.tie_ends() {
        for &l in &labels[start..end] {
            if l {
                ca += 1;
            } else {
                cb += 1;
            }
        }
        best = best.max((ca as f64 / n_a as f64 - cb as f64 / n_b as f64).abs());
    }
    best
}

/// Two-sample Cramér–von Mises criterion
/// `n_A n_B / N² · Σ_z (F_A(z) − F_B(z))²` over the pooled observations.
pub fn cvm(pool: &SortedPool, labels: &[bool], n_a: usize) -> f64 {
    let n = labels.len();
    let n_b = n - n_a;
    let (mut ca, mut cb) = (0usize, 0usize);
    let mut sum = 0.0;
    for (start, end) in pool.tie_ends() {
        for &l in &labels[start..end] {
            if l {
                ca += 1;
            } else {
                cb += 1;
            }
        }
        let d = ca as f64 / n_a as f64 - cb as f64 / n_b as f64;
        sum += (end - start) as f64 * d * d;
    }
    (n_a * n_b) as f64 / (n * n) as f64 * sum
}

/// `Σ_{i<j} |x_i − x_j|` for values in ascending order.
fn pair_sum<'a>(sorted: impl Iterator<Item = &'a f64>, len: usize) -> f64 {
    sorted
        .enumerate()
        .map(|(i, x)| x * (2.0 * i as f64 - len as f64 + 1.0))
        .sum()
}

/// Energy statistic `n_A n_B / N · (2 E|A−B| − E|A−A'| − E|B−B'|)` with
/// V-statistic means.
pub fn energy(pool: &SortedPool, labels: &[bool], n_a: usize, pooled_pair_sum: f64) -> f64 {
    let n = labels.len();
    let n_b = n - n_a;
    let sa = pair_sum(
        pool.values.iter().zip(labels).filter(|(_, l)| **l).map(|(v, _)| v),
        n_a,
    );
    let sb = pair_sum(
        pool.values.iter().zip(labels).filter(|(_, l)| !**l).map(|(v, _)| v),
        n_b,
    );
    let cross = pooled_pair_sum - sa - sb;
    let (na, nb) = (n_a as f64, n_b as f64);
    let e = 2.0 * cross / (na * nb) - 2.0 * sa / (na * na) - 2.0 * sb / (nb * nb);
    (na * nb / n as f64 * e).max(0.0)
}

pub fn pooled_pair_sum(pool: &SortedPool) -> f64 {
    pair_sum(pool.values.iter(), pool.values.len())
}

/// Asymptotic Kolmogorov p-value with the usual small-sample correction of
/// the argument.
pub fn ks_asymptotic_pvalue(d: f64, n_a: usize, n_b: usize) -> f64 {
    let ne = (n_a * n_b) as f64 / (n_a + n_b) as f64;
    let sq = ne.sqrt();
    let lambda = (sq + 0.12 + 0.11 / sq) * d;
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for k in 1..=200 {
        let term = sign * (-2.0 * (k * k) as f64 * lambda * lambda).exp();
        sum += term;
        if term.abs() < 1e-16 * sum.abs().max(1e-300) {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn setup(a: &[f64], b: &[f64]) -> (SortedPool, Vec<bool>) {
        let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
        let labels: Vec<bool> = (0..pooled.len()).map(|i| i < a.len()).collect();
        let pool = SortedPool::new(&pooled);
        let sorted = pool.sorted_labels(&labels);
        (pool, sorted)
    }

    fn ecdf(x: &[f64], z: f64) -> f64 {
        x.iter().filter(|v| **v <= z).count() as f64 / x.len() as f64
    }

    fn ks_naive(a: &[f64], b: &[f64]) -> f64 {
        a.iter()
            .chain(b)
            .map(|z| (ecdf(a, *z) - ecdf(b, *z)).abs())
            .fold(0.0, f64::max)
    }

    fn cvm_naive(a: &[f64], b: &[f64]) -> f64 {
        let (na, nb) = (a.len() as f64, b.len() as f64);
        let s: f64 = a.iter().chain(b).map(|z| (ecdf(a, *z) - ecdf(b, *z)).powi(2)).sum();
        na * nb / (na + nb).powi(2) * s
    }

    fn energy_naive(a: &[f64], b: &[f64]) -> f64 {
        let mean_abs = |x: &[f64], y: &[f64]| {
            let mut s = 0.0;
            for u in x {
                for v in y {
                    s += (u - v).abs();
                }
            }
            s / (x.len() * y.len()) as f64
        };
        let (na, nb) = (a.len() as f64, b.len() as f64);
        na * nb / (na + nb) * (2.0 * mean_abs(a, b) - mean_abs(a, a) - mean_abs(b, b))
    }

    #[test]
    fn identical_samples_give_zero() {
        let a = [0.3, -1.0, 2.5, 0.0, 0.7];
        let (pool, labels) = setup(&a, &a);
        assert_eq!(ks(&pool, &labels, 5), 0.0);
        assert_eq!(cvm(&pool, &labels, 5), 0.0);
        assert!(energy(&pool, &labels, 5, pooled_pair_sum(&pool)) < 1e-12);
    }

    #[test]
    fn separated_samples() {
        let a = [0.0, 1.0, 2.0];
        let b = [10.0, 11.0, 12.0, 13.0];
        let (pool, labels) = setup(&a, &b);
        assert_eq!(ks(&pool, &labels, 3), 1.0);
    }

    #[test]
    fn asymptotic_ks_limits() {
        assert_eq!(ks_asymptotic_pvalue(0.0, 50, 50), 1.0);
        assert!(ks_asymptotic_pvalue(1.0, 50, 50) < 1e-10);
        // Q(1.36) ≈ 0.049 for the limiting distribution
        let d = 1.36 / (25f64.sqrt() + 0.12 + 0.11 / 5.0);
        assert!((ks_asymptotic_pvalue(d, 50, 50) - 0.0494).abs() < 1e-3);
    }

    proptest! {
        #[test]
        fn fast_statistics_match_naive(
            a in proptest::collection::vec(-3i32..3, 2..15),
            b in proptest::collection::vec(-3i32..3, 2..15),
        ) {
            // small integer support forces ties
            let a: Vec<f64> = a.into_iter().map(f64::from).collect();
            let b: Vec<f64> = b.into_iter().map(f64::from).collect();
            let (pool, labels) = setup(&a, &b);
            prop_assert!((ks(&pool, &labels, a.len()) - ks_naive(&a, &b)).abs() < 1e-12);
            prop_assert!((cvm(&pool, &labels, a.len()) - cvm_naive(&a, &b)).abs() < 1e-12);
            let e = energy(&pool, &labels, a.len(), pooled_pair_sum(&pool));
            prop_assert!((e - energy_naive(&a, &b).max(0.0)).abs() < 1e-9);
        }

        #[test]
        fn monotone_transform_invariance(
            a in proptest::collection::vec(-5.0f64..5.0, 5..20),
            b in proptest::collection::vec(-5.0f64..5.0, 5..20),
        ) {
            let (pool, labels) = setup(&a, &b);
            let ta: Vec<f64> = a.iter().map(|v| v.exp() * 3.0 + 1.0).collect();
            let tb: Vec<f64> = b.iter().map(|v| v.exp() * 3.0 + 1.0).collect();
            let (tpool, tlabels) = setup(&ta, &tb);
            prop_assert_eq!(ks(&pool, &labels, a.len()), ks(&tpool, &tlabels, a.len()));
            prop_assert_eq!(cvm(&pool, &labels, a.len()), cvm(&tpool, &tlabels, a.len()));
        }
    }
}
