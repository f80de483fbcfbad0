//! Evaluation grids on `[0, 1]`, trapezoidal quadrature and curves.

use std::sync::Arc;

use crate::error::{Error, Result};

/// Trapezoidal quadrature weights for an increasing set of points.
///
/// Endpoints receive half of their adjacent spacing and interior points half
/// of the distance between their neighbours, so the weights sum to the length
/// of the covered interval.
pub fn trapezoid_weights(points: &[f64]) -> Result<Vec<f64>> {
    let m = points.len();
    if m < 2 {
        return Err(Error::InvalidGrid(format!(
            "need at least 2 points, got {m}"
        )));
    }
    if let Some(j) = (1..m).find(|&j| !(points[j] > points[j - 1])) {
        return Err(Error::InvalidGrid(format!(
            "points must be strictly increasing (position {j}: {} after {})",
            points[j],
            points[j - 1]
        )));
    }
    let mut w = vec![0.0; m];
    w[0] = (points[1] - points[0]) / 2.0;
    w[m - 1] = (points[m - 1] - points[m - 2]) / 2.0;
    for j in 1..m - 1 {
        w[j] = (points[j + 1] - points[j - 1]) / 2.0;
    }
    Ok(w)
}

/// Ordered evaluation points in `[0, 1]` with quadrature weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    points: Vec<f64>,
    weights: Vec<f64>,
}

impl Grid {
    /// Grid with trapezoidal weights.
    pub fn new(points: Vec<f64>) -> Result<Self> {
        let weights = trapezoid_weights(&points)?;
        Self::with_weights(points, weights)
    }

    /// `m` equally spaced points covering `[0, 1]`.
    pub fn uniform(m: usize) -> Result<Self> {
        if m < 2 {
            return Err(Error::InvalidGrid(format!(
                "need at least 2 points, got {m}"
            )));
        }
        let step = 1.0 / (m - 1) as f64;
        let mut points: Vec<f64> = (0..m).map(|j| j as f64 * step).collect();
        points[m - 1] = 1.0;
        Self::new(points)
    }

    /// Grid with caller-supplied weights. The weights must be nonnegative and
    /// integrate constants exactly over the covered interval.
    pub fn with_weights(points: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        let m = points.len();
        if m < 2 {
            return Err(Error::InvalidGrid(format!(
                "need at least 2 points, got {m}"
            )));
        }
        if weights.len() != m {
            return Err(Error::InvalidGrid(format!(
                "{m} points but {} weights",
                weights.len()
            )));
        }
        if points.iter().any(|p| !p.is_finite()) || points[0] < 0.0 || points[m - 1] > 1.0 {
            return Err(Error::InvalidGrid("points must lie in [0, 1]".into()));
        }
        if let Some(j) = (1..m).find(|&j| !(points[j] > points[j - 1])) {
            return Err(Error::InvalidGrid(format!(
                "points must be strictly increasing (position {j})"
            )));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidGrid("weights must be finite and nonnegative".into()));
        }
        let span = points[m - 1] - points[0];
        let total: f64 = weights.iter().sum();
        if (total - span).abs() > 1e-12 * span.max(f64::MIN_POSITIVE) {
            return Err(Error::InvalidGrid(format!(
                "weights sum to {total}, expected {span}"
            )));
        }
        Ok(Grid { points, weights })
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Average quadrature weight, i.e. the interval length per grid point.
    pub fn mean_weight(&self) -> f64 {
        self.weights.iter().sum::<f64>() / self.len() as f64
    }

    /// Quadrature approximation of `∫ f g` for tabulated values.
    pub fn inner(&self, f: &[f64], g: &[f64]) -> f64 {
        debug_assert_eq!(f.len(), self.len());
        debug_assert_eq!(g.len(), self.len());
        self.weights
            .iter()
            .zip(f.iter().zip(g))
            .map(|(w, (a, b))| w * a * b)
            .sum()
    }

    /// Quadrature approximation of `∫ f`.
    pub fn integrate(&self, f: &[f64]) -> f64 {
        self.weights.iter().zip(f).map(|(w, v)| w * v).sum()
    }
}

/// Values of one curve on a shared grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    grid: Arc<Grid>,
    values: Vec<f64>,
}

impl Curve {
    pub fn new(grid: Arc<Grid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Dimension(format!(
                "curve has {} values on a grid of {} points",
                values.len(),
                grid.len()
            )));
        }
        if let Some(j) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "non-finite curve value at grid point {j}"
            )));
        }
        Ok(Curve { grid, values })
    }

    /// Evaluate `f` at every grid point.
    pub fn from_fn(grid: Arc<Grid>, f: impl Fn(f64) -> f64) -> Result<Self> {
        let values = grid.points().iter().map(|&t| f(t)).collect();
        Self::new(grid, values)
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn norm(&self) -> f64 {
        self.grid.inner(&self.values, &self.values).sqrt()
    }
}

pub(crate) fn same_grid(a: &Arc<Grid>, b: &Arc<Grid>) -> bool {
    Arc::ptr_eq(a, b) || a == b
}

/// L² inner product of two curves on the same grid.
pub fn inner_product(f: &Curve, g: &Curve) -> Result<f64> {
    if !same_grid(&f.grid, &g.grid) {
        return Err(Error::GridMismatch);
    }
    Ok(f.grid.inner(&f.values, &g.values))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    #[test]
    fn trapezoid_examples() {
        assert_eq!(trapezoid_weights(&[0.0, 0.5, 1.0]).unwrap(), vec![0.25, 0.5, 0.25]);
        assert_eq!(trapezoid_weights(&[0.0, 1.0]).unwrap(), vec![0.5, 0.5]);
        let w = trapezoid_weights(&[0.0, 0.1, 1.0]).unwrap();
        assert_abs_diff_eq!(w[0], 0.05, epsilon = 1e-15);
        assert_abs_diff_eq!(w[1], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(w[2], 0.45, epsilon = 1e-15);
    }

    #[test]
    fn trapezoid_rejects_non_increasing() {
        assert!(matches!(
            trapezoid_weights(&[0.0, 0.5, 0.5]),
            Err(Error::InvalidGrid(_))
        ));
        assert!(matches!(trapezoid_weights(&[0.3]), Err(Error::InvalidGrid(_))));
    }

    #[test]
    fn uniform_weights_are_h_with_half_endpoints() {
        let g = Grid::uniform(11).unwrap();
        let h = 0.1;
        assert_abs_diff_eq!(g.weights()[0], h / 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(g.weights()[10], h / 2.0, epsilon = 1e-15);
        for w in &g.weights()[1..10] {
            assert_abs_diff_eq!(*w, h, epsilon = 1e-15);
        }
    }

    #[test]
    fn custom_weights_must_sum_to_span() {
        assert!(Grid::with_weights(vec![0.0, 1.0], vec![0.5, 0.6]).is_err());
        assert!(Grid::with_weights(vec![0.0, 1.0], vec![1.0, 0.0]).is_ok());
        assert!(Grid::new(vec![0.0, 1.5]).is_err());
    }

    #[test]
    fn inner_product_examples() {
        let g = Arc::new(Grid::uniform(101).unwrap());
        let one = Curve::from_fn(g.clone(), |_| 1.0).unwrap();
        assert_abs_diff_eq!(inner_product(&one, &one).unwrap(), 1.0, epsilon = 1e-12);

        let s = Curve::from_fn(g.clone(), |t| (2.0 * PI * t).sin()).unwrap();
        let c = Curve::from_fn(g.clone(), |t| (2.0 * PI * t).cos()).unwrap();
        assert_abs_diff_eq!(inner_product(&s, &c).unwrap(), 0.0, epsilon = 1e-3);

        let f = Curve::from_fn(g.clone(), |t| 2f64.sqrt() * (2.0 * PI * t).sin()).unwrap();
        assert_abs_diff_eq!(inner_product(&f, &f).unwrap(), 1.0, epsilon = 1e-3);
    }

    #[test]
    fn inner_product_rejects_mismatched_grids() {
        let a = Curve::from_fn(Arc::new(Grid::uniform(5).unwrap()), |t| t).unwrap();
        let b = Curve::from_fn(Arc::new(Grid::uniform(6).unwrap()), |t| t).unwrap();
        assert!(matches!(inner_product(&a, &b), Err(Error::GridMismatch)));
    }

    #[test]
    fn curve_rejects_non_finite() {
        let g = Arc::new(Grid::uniform(3).unwrap());
        assert!(Curve::new(g, vec![0.0, f64::NAN, 1.0]).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn curves() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<f64>, f64)> {
            (
                prop::collection::vec(-10.0..10.0f64, 17),
                prop::collection::vec(-10.0..10.0f64, 17),
                prop::collection::vec(-10.0..10.0f64, 17),
                -5.0..5.0f64,
            )
        }

        proptest! {
            #[test]
            fn inner_product_symmetric_bilinear_nonnegative((f, g, h, a) in curves()) {
                let grid = Grid::uniform(17).unwrap();
                let fg = grid.inner(&f, &g);
                prop_assert!((fg - grid.inner(&g, &f)).abs() <= 1e-12 * (1.0 + fg.abs()));
                prop_assert!(grid.inner(&f, &f) >= 0.0);
                let lhs: Vec<f64> = f.iter().zip(&h).map(|(x, y)| a * x + y).collect();
                let combo = grid.inner(&lhs, &g);
                let expect = a * fg + grid.inner(&h, &g);
                prop_assert!((combo - expect).abs() <= 1e-9 * (1.0 + expect.abs()));
            }
        }
    }
}
