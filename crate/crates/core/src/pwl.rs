//! Continuous piecewise-linear functions of one real variable on the whole line.
//!
//! A function is stored as its values at sorted knots plus the slopes of the two
//! unbounded end pieces, so continuity holds by construction. All operations
//! work on the explicit knot lists and are exact up to floating-point rounding.

use crate::error::{Error, Result};

/// Knots closer than this are merged.
pub const KNOT_MERGE_TOL: f64 = 1e-12;
const COLLINEAR_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct PiecewiseLinearFn {
    xs: Vec<f64>,
    ys: Vec<f64>,
    left_slope: f64,
    right_slope: f64,
}

impl PiecewiseLinearFn {
    pub fn constant(c: f64) -> Self {
        Self::affine(0.0, c)
    }

    /// `x -> slope * x + intercept`.
    pub fn affine(slope: f64, intercept: f64) -> Self {
        PiecewiseLinearFn { xs: vec![0.0], ys: vec![intercept], left_slope: slope, right_slope: slope }
    }

    /// `x -> max(x, 0)`.
    pub fn positive_part() -> Self {
        PiecewiseLinearFn { xs: vec![0.0], ys: vec![0.0], left_slope: 0.0, right_slope: 1.0 }
    }

    /// Builds a function from knots and end slopes. Knots must be strictly increasing.
    pub fn from_knots(xs: Vec<f64>, ys: Vec<f64>, left_slope: f64, right_slope: f64) -> Result<Self> {
        if xs.is_empty() || xs.len() != ys.len() {
            return Err(Error::Precondition("knot lists must be non-empty and of equal length".into()));
        }
        if xs.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::Precondition("knots must be strictly increasing".into()));
        }
        if xs.iter().chain(&ys).chain([&left_slope, &right_slope]).any(|v| !v.is_finite()) {
            return Err(Error::Precondition("knot data must be finite".into()));
        }
        let mut f = PiecewiseLinearFn { xs, ys, left_slope, right_slope };
        f.simplify();
        Ok(f)
    }

    pub fn knots(&self) -> &[f64] {
        &self.xs
    }

    pub fn values(&self) -> &[f64] {
        &self.ys
    }

    pub fn left_slope(&self) -> f64 {
        self.left_slope
    }

    pub fn right_slope(&self) -> f64 {
        self.right_slope
    }

    /// Slopes of all pieces from left to right, end pieces included.
    pub fn slopes(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.xs.len() + 1);
        out.push(self.left_slope);
        for i in 1..self.xs.len() {
            out.push((self.ys[i] - self.ys[i - 1]) / (self.xs[i] - self.xs[i - 1]));
        }
        out.push(self.right_slope);
        out
    }

    pub fn eval(&self, x: f64) -> f64 {
        let n = self.xs.len();
        if x <= self.xs[0] {
            return self.ys[0] + self.left_slope * (x - self.xs[0]);
        }
        if x >= self.xs[n - 1] {
            return self.ys[n - 1] + self.right_slope * (x - self.xs[n - 1]);
        }
        let i = self.xs.partition_point(|k| *k <= x);
        let (x0, x1, y0, y1) = (self.xs[i - 1], self.xs[i], self.ys[i - 1], self.ys[i]);
        y0 + (y1 - y0) * (x - x0) / (x1 - x0)
    }

    pub fn add_affine(&self, slope: f64, intercept: f64) -> Self {
        PiecewiseLinearFn {
            xs: self.xs.clone(),
            ys: self.xs.iter().zip(&self.ys).map(|(x, y)| y + slope * x + intercept).collect(),
            left_slope: self.left_slope + slope,
            right_slope: self.right_slope + slope,
        }
    }

    pub fn scale(&self, k: f64) -> Self {
        let mut f = PiecewiseLinearFn {
            xs: self.xs.clone(),
            ys: self.ys.iter().map(|y| k * y).collect(),
            left_slope: k * self.left_slope,
            right_slope: k * self.right_slope,
        };
        f.simplify();
        f
    }

    pub fn add(&self, other: &Self) -> Self {
        Self::linear_combination(&[(1.0, self), (1.0, other)])
    }

    pub fn sub(&self, other: &Self) -> Self {
        Self::linear_combination(&[(1.0, self), (-1.0, other)])
    }

    /// `sum_i w_i f_i` over the union of all knots.
    pub fn linear_combination(terms: &[(f64, &Self)]) -> Self {
        let terms: Vec<_> = terms.iter().filter(|(w, _)| *w != 0.0).collect();
        if terms.is_empty() {
            return Self::constant(0.0);
        }
        let xs = merge_knots(terms.iter().map(|(_, f)| f.xs.as_slice()));
        let ys = xs.iter().map(|x| terms.iter().map(|(w, f)| w * f.eval(*x)).sum()).collect();
        let mut out = PiecewiseLinearFn {
            xs,
            ys,
            left_slope: terms.iter().map(|(w, f)| w * f.left_slope).sum(),
            right_slope: terms.iter().map(|(w, f)| w * f.right_slope).sum(),
        };
        out.simplify();
        out
    }

    /// Pointwise maximum.
    pub fn max(&self, other: &Self) -> Self {
        let base = merge_knots([self.xs.as_slice(), other.xs.as_slice()].into_iter());
        let diff = |x: f64| self.eval(x) - other.eval(x);
        let mut xs = Vec::with_capacity(base.len() * 2 + 2);
        // crossing in the left tail
        let (d0, dl) = (diff(base[0]), self.left_slope - other.left_slope);
        if dl != 0.0 {
            let x = base[0] - d0 / dl;
            if x < base[0] - KNOT_MERGE_TOL {
                xs.push(x);
            }
        }
        for w in base.windows(2) {
            xs.push(w[0]);
            let (da, db) = (diff(w[0]), diff(w[1]));
            if (da < 0.0 && db > 0.0) || (da > 0.0 && db < 0.0) {
                let x = w[0] + (w[1] - w[0]) * da / (da - db);
                if x > w[0] + KNOT_MERGE_TOL && x < w[1] - KNOT_MERGE_TOL {
                    xs.push(x);
                }
            }
        }
        let last = *base.last().unwrap();
        xs.push(last);
        let (dn, dr) = (diff(last), self.right_slope - other.right_slope);
        if dr != 0.0 {
            let x = last - dn / dr;
            if x > last + KNOT_MERGE_TOL {
                xs.push(x);
            }
        }
        let ys = xs.iter().map(|x| self.eval(*x).max(other.eval(*x))).collect();
        // far left the smaller slope wins, far right the larger one
        let mut out = PiecewiseLinearFn {
            xs,
            ys,
            left_slope: self.left_slope.min(other.left_slope),
            right_slope: self.right_slope.max(other.right_slope),
        };
        out.simplify();
        out
    }

    /// `left` for `x < at`, `right` for `x >= at`. The two must agree at `at`
    /// within `tol`; the joined function takes the value of `right` there.
    pub fn stitch(left: &Self, right: &Self, at: f64, tol: f64) -> Result<Self> {
        let (yl, yr) = (left.eval(at), right.eval(at));
        if (yl - yr).abs() > tol * (1.0 + yl.abs().max(yr.abs())) {
            return Err(Error::Precondition(format!(
                "stitch at {at}: pieces disagree ({yl} vs {yr})"
            )));
        }
        let mut xs = Vec::with_capacity(left.xs.len() + right.xs.len() + 1);
        let mut ys = Vec::with_capacity(xs.capacity());
        for (x, y) in left.xs.iter().zip(&left.ys) {
            if *x < at - KNOT_MERGE_TOL {
                xs.push(*x);
                ys.push(*y);
            }
        }
        xs.push(at);
        ys.push(yr);
        for (x, y) in right.xs.iter().zip(&right.ys) {
            if *x > at + KNOT_MERGE_TOL {
                xs.push(*x);
                ys.push(*y);
            }
        }
        let mut out = PiecewiseLinearFn { xs, ys, left_slope: left.left_slope, right_slope: right.right_slope };
        out.simplify();
        Ok(out)
    }

    /// True when every piece has slope `>= -tol`.
    pub fn is_nondecreasing(&self, tol: f64) -> bool {
        self.slopes().iter().all(|s| *s >= -tol)
    }

    /// Start of the set `{x : f(x) >= 0}` when that set is an interval
    /// `[x*, inf)`. Values within `tol` of zero count as zero. A flat zero piece
    /// yields its left end.
    pub fn least_root(&self, tol: f64) -> Result<f64> {
        let n = self.xs.len();
        if self.right_slope < 0.0 || (self.right_slope == 0.0 && self.ys[n - 1] < -tol) {
            return Err(Error::Precondition("function never stays nonnegative".into()));
        }
        let Some(last_neg) = (0..n).rev().find(|&i| self.ys[i] < -tol) else {
            // nonnegative at every knot: the root lies on the left ray
            if self.left_slope <= 0.0 {
                return Err(Error::Precondition("function never becomes negative".into()));
            }
            return Ok(self.xs[0] - self.ys[0].max(0.0) / self.left_slope);
        };
        if let Some(i) = (0..last_neg).find(|&i| self.ys[i] > tol) {
            return Err(Error::NotMonotone { slope: self.slopes()[i + 1], at: self.xs[i] });
        }
        if self.left_slope < 0.0 {
            return Err(Error::NotMonotone { slope: self.left_slope, at: f64::NEG_INFINITY });
        }
        if last_neg + 1 == n {
            return Ok(self.xs[n - 1] - self.ys[n - 1] / self.right_slope);
        }
        let (x0, x1, y0, y1) = (self.xs[last_neg], self.xs[last_neg + 1], self.ys[last_neg], self.ys[last_neg + 1]);
        if y1 <= 0.0 {
            return Ok(x1);
        }
        Ok(x0 + (x1 - x0) * (-y0) / (y1 - y0))
    }

    /// Merges near-coincident knots and drops knots where the slope does not change.
    fn simplify(&mut self) {
        let mut xs: Vec<f64> = Vec::with_capacity(self.xs.len());
        let mut ys: Vec<f64> = Vec::with_capacity(self.xs.len());
        for (x, y) in self.xs.iter().zip(&self.ys) {
            if let Some(last) = xs.last() {
                if x - last <= KNOT_MERGE_TOL {
                    continue;
                }
            }
            xs.push(*x);
            ys.push(*y);
        }
        // collinearity sweep
        let n = xs.len();
        let mut keep = vec![true; n];
        let mut prev_slope = self.left_slope;
        for i in 0..n {
            let next_slope = if i + 1 < n { (ys[i + 1] - ys[i]) / (xs[i + 1] - xs[i]) } else { self.right_slope };
            if (next_slope - prev_slope).abs() <= COLLINEAR_TOL * (1.0 + prev_slope.abs()) {
                keep[i] = false;
            } else {
                prev_slope = next_slope;
            }
        }
        if keep.iter().all(|k| !k) {
            keep[0] = true;
        }
        let mut i = 0;
        xs.retain(|_| {
            i += 1;
            keep[i - 1]
        });
        let mut i = 0;
        ys.retain(|_| {
            i += 1;
            keep[i - 1]
        });
        self.xs = xs;
        self.ys = ys;
    }
}

fn merge_knots<'a>(lists: impl Iterator<Item = &'a [f64]>) -> Vec<f64> {
    let mut all: Vec<f64> = lists.flat_map(|l| l.iter().copied()).collect();
    all.sort_by(f64::total_cmp);
    all.dedup_by(|b, a| *b - *a <= KNOT_MERGE_TOL);
    all
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn arb_pwl() -> impl Strategy<Value = PiecewiseLinearFn> {
        (prop::collection::vec((-10.0f64..10.0, -5.0f64..5.0), 1..6), -3.0f64..3.0, -3.0f64..3.0).prop_map(
            |(mut pts, l, r)| {
                pts.sort_by(|a, b| a.0.total_cmp(&b.0));
                pts.dedup_by(|b, a| b.0 - a.0 < 1e-3);
                let (xs, ys) = pts.into_iter().unzip();
                PiecewiseLinearFn::from_knots(xs, ys, l, r).unwrap()
            },
        )
    }

    #[test]
    fn affine_and_positive_part() {
        let f = PiecewiseLinearFn::affine(2.0, -1.0);
        assert_eq!(f.eval(3.0), 5.0);
        let p = PiecewiseLinearFn::positive_part();
        assert_eq!(p.eval(-2.0), 0.0);
        assert_eq!(p.eval(2.5), 2.5);
    }

    #[test]
    fn collinear_knots_are_dropped() {
        let f = PiecewiseLinearFn::from_knots(vec![0.0, 1.0, 2.0], vec![0.0, 1.0, 2.0], 1.0, 1.0).unwrap();
        assert_eq!(f.knots().len(), 1);
        assert_eq!(f.eval(-4.0), -4.0);
    }

    #[test]
    fn least_root_cases() {
        let f = PiecewiseLinearFn::affine(0.1, -0.07);
        assert!((f.least_root(1e-12).unwrap() - 0.7).abs() < 1e-12);
        // flat zero piece on [1, 2]
        let g = PiecewiseLinearFn::from_knots(vec![1.0, 2.0], vec![0.0, 0.0], 1.0, 1.0).unwrap();
        assert!((g.least_root(1e-12).unwrap() - 1.0).abs() < 1e-15);
        assert!(PiecewiseLinearFn::affine(-1.0, 0.0).least_root(1e-12).is_err());
        // dips after the root but stays nonnegative
        let d = PiecewiseLinearFn::from_knots(vec![0.0, 1.0, 2.0], vec![-1.0, 1.0, 0.5], 1.0, 1.0).unwrap();
        assert!((d.least_root(1e-12).unwrap() - 0.5).abs() < 1e-15);
        // nonnegative, then negative again: no single threshold
        let w = PiecewiseLinearFn::from_knots(vec![0.0, 1.0, 2.0], vec![-1.0, 1.0, -0.5], 1.0, 1.0).unwrap();
        assert!(matches!(w.least_root(1e-12), Err(Error::NotMonotone { .. })));
        assert!(PiecewiseLinearFn::constant(-1.0).least_root(1e-12).is_err());
    }

    #[test]
    fn stitch_requires_agreement() {
        let a = PiecewiseLinearFn::constant(1.0);
        let b = PiecewiseLinearFn::affine(-1.0, 2.0);
        let s = PiecewiseLinearFn::stitch(&a, &b, 1.0, 1e-9).unwrap();
        assert_eq!(s.eval(0.0), 1.0);
        assert_eq!(s.eval(3.0), -1.0);
        assert!(PiecewiseLinearFn::stitch(&a, &b, 0.0, 1e-9).is_err());
    }

    proptest! {
        #[test]
        fn linear_combination_is_pointwise(f in arb_pwl(), g in arb_pwl(), a in -2.0f64..2.0, b in -2.0f64..2.0, x in -30.0f64..30.0) {
            let h = PiecewiseLinearFn::linear_combination(&[(a, &f), (b, &g)]);
            prop_assert!((h.eval(x) - (a * f.eval(x) + b * g.eval(x))).abs() < 1e-9);
        }

        #[test]
        fn max_is_pointwise(f in arb_pwl(), g in arb_pwl(), x in -30.0f64..30.0) {
            let h = f.max(&g);
            prop_assert!((h.eval(x) - f.eval(x).max(g.eval(x))).abs() < 1e-9);
        }

        #[test]
        fn eval_agrees_with_segment_data(f in arb_pwl()) {
            let slopes = f.slopes();
            let xs = f.knots();
            for i in 1..xs.len() {
                let mid = 0.5 * (xs[i - 1] + xs[i]);
                let expect = f.values()[i - 1] + slopes[i] * (mid - xs[i - 1]);
                prop_assert!((f.eval(mid) - expect).abs() < 1e-9);
            }
        }
    }
}
