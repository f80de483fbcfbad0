//! Benjamini–Hochberg step-up adjustment.

use crate::error::{Error, Result};

/// Adjusted p-values in the input order.
///
/// Sort ascending, scale the `k`-th smallest by `m / k`, take the running
/// minimum from the largest down and clamp at 1.
pub fn bh_adjust(p: &[f64]) -> Result<Vec<f64>> {
    for (index, &value) in p.iter().enumerate() {
        if !(0.0..=1.0).contains(&value) {
            return Err(Error::InvalidPValue { index, value });
        }
    }
    let m = p.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p[a].total_cmp(&p[b]).then(a.cmp(&b)));
    let mut out = vec![0.0; m];
    let mut running = 1.0f64;
    for (pos, &i) in order.iter().enumerate().rev() {
        // guard against m/k = 1 rounding below p
        let q = (p[i] * m as f64 / (pos + 1) as f64).max(p[i]);
        running = running.min(q);
        out[i] = running;
    }
    Ok(out)
}
