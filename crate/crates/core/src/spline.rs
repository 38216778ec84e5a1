//! Cubic B-spline basis evaluation and interpolating-spline fitting.
//!
//! Fits use the not-a-knot boundary condition: knots are placed at every
//! sample site, giving n + 2 B-spline coefficients for n samples, and the two
//! extra degrees of freedom are fixed by requiring third-derivative
//! continuity across the second and second-to-last sites. Not-a-knot
//! reproduces every cubic polynomial exactly.

use crate::banded::BandMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEGREE: usize = 3;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum SplineError {
    #[error("basis index {index} out of range for {n_basis} basis functions")]
    IndexOutOfRange { index: usize, n_basis: usize },
    #[error("invalid knot vector: {0}")]
    InvalidKnots(String),
    #[error("sample positions must be strictly increasing")]
    UnsortedSamples,
    #[error("interpolation needs at least 4 samples, got {n}")]
    TooFewSamples { n: usize },
    #[error("position {x} outside [0, 1]")]
    DomainError { x: f64 },
    #[error("sample positions and values have different lengths ({xs} vs {ys})")]
    LengthMismatch { xs: usize, ys: usize },
    #[error("interpolation system ill-conditioned at column {column}")]
    IllConditioned { column: usize },
    #[error("grid needs at least 2 intervals, got {count}")]
    InvalidGrid { count: usize },
}

/// Clamped cubic knot vector: end knots repeated with multiplicity 4.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnotVector {
    knots: Vec<f64>,
}

impl KnotVector {
    /// Build a clamped knot vector over [start, end] with the given interior
    /// knots (strictly inside the domain, non-decreasing).
    pub fn clamped(start: f64, end: f64, interior: &[f64]) -> Result<Self, SplineError> {
        if !(start < end) {
            return Err(SplineError::InvalidKnots(format!(
                "domain start {start} must be below end {end}"
            )));
        }
        for w in interior.windows(2) {
            if w[1] < w[0] {
                return Err(SplineError::InvalidKnots(
                    "interior knots must be non-decreasing".into(),
                ));
            }
        }
        if interior.iter().any(|&t| t <= start || t >= end) {
            return Err(SplineError::InvalidKnots(
                "interior knots must lie strictly inside the domain".into(),
            ));
        }
        let mut knots = Vec::with_capacity(interior.len() + 8);
        knots.extend([start; 4]);
        knots.extend_from_slice(interior);
        knots.extend([end; 4]);
        Ok(KnotVector { knots })
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn n_basis(&self) -> usize {
        self.knots.len() - DEGREE - 1
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.knots[DEGREE], self.knots[self.knots.len() - DEGREE - 1])
    }

    /// Greville abscissa of basis function `i`.
    pub fn greville(&self, i: usize) -> f64 {
        (self.knots[i + 1] + self.knots[i + 2] + self.knots[i + 3]) / 3.0
    }

    /// Index of the knot span containing `x`: knots[s] <= x < knots[s+1],
    /// with the final span treated as right-closed.
    pub(crate) fn find_span(&self, x: f64) -> usize {
        let m = self.knots.len();
        let last = m - DEGREE - 2; // last valid span index
        if x >= self.knots[last + 1] {
            // domain end; step back over any empty spans
            let mut s = last;
            while s > DEGREE && self.knots[s] == self.knots[s + 1] {
                s -= 1;
            }
            return s;
        }
        let mut lo = DEGREE;
        let mut hi = last;
        while lo < hi {
            let mid = (lo + hi + 1) / 2;
            if self.knots[mid] <= x {
                lo = mid;
            } else {
                hi = mid - 1;
            }
        }
        lo
    }

    /// Values of the four basis functions that are nonzero on span `s`,
    /// i.e. B_{s-3}..B_s evaluated at `x` (Cox-de Boor, triangular form).
    pub(crate) fn basis_funs(&self, span: usize, x: f64) -> [f64; 4] {
        let t = &self.knots;
        let mut vals = [0.0f64; 4];
        let mut left = [0.0f64; 4];
        let mut right = [0.0f64; 4];
        vals[0] = 1.0;
        for j in 1..=DEGREE {
            left[j] = x - t[span + 1 - j];
            right[j] = t[span + j] - x;
            let mut saved = 0.0;
            for r in 0..j {
                let temp = vals[r] / (right[r + 1] + left[j - r]);
                vals[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            vals[j] = saved;
        }
        vals
    }

    /// Derivatives up to order `nd` (inclusive) of the four nonzero basis
    /// functions on span `s`. Row k holds the k-th derivatives of B_{s-3}..B_s.
    pub(crate) fn basis_ders(&self, span: usize, x: f64, nd: usize) -> Vec<[f64; 4]> {
        let p = DEGREE;
        let t = &self.knots;
        let nd = nd.min(p);
        let mut ndu = [[0.0f64; 4]; 4];
        let mut left = [0.0f64; 4];
        let mut right = [0.0f64; 4];
        ndu[0][0] = 1.0;
        for j in 1..=p {
            left[j] = x - t[span + 1 - j];
            right[j] = t[span + j] - x;
            let mut saved = 0.0;
            for r in 0..j {
                ndu[j][r] = right[r + 1] + left[j - r];
                let temp = ndu[r][j - 1] / ndu[j][r];
                ndu[r][j] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            ndu[j][j] = saved;
        }
        let mut ders = vec![[0.0f64; 4]; nd + 1];
        for j in 0..=p {
            ders[0][j] = ndu[j][p];
        }
        let mut a = [[0.0f64; 4]; 2];
        for r in 0..=p {
            let (mut s1, mut s2) = (0usize, 1usize);
            a[0] = [1.0, 0.0, 0.0, 0.0];
            for k in 1..=nd {
                let mut d = 0.0;
                let rk = r as isize - k as isize;
                let pk = p - k;
                if r >= k {
                    a[s2][0] = a[s1][0] / ndu[pk + 1][rk as usize];
                    d = a[s2][0] * ndu[rk as usize][pk];
                }
                let j1 = if rk >= -1 { 1 } else { (-rk) as usize };
                let j2 = if r <= pk + 1 { k - 1 } else { p - r };
                for j in j1..=j2 {
                    a[s2][j] =
                        (a[s1][j] - a[s1][j - 1]) / ndu[pk + 1][(rk + j as isize) as usize];
                    d += a[s2][j] * ndu[(rk + j as isize) as usize][pk];
                }
                if r <= pk {
                    a[s2][k] = -a[s1][k - 1] / ndu[pk + 1][r];
                    d += a[s2][k] * ndu[r][pk];
                }
                ders[k][r] = d;
                std::mem::swap(&mut s1, &mut s2);
            }
        }
        let mut factor = p as f64;
        for k in 1..=nd {
            for j in 0..=p {
                ders[k][j] *= factor;
            }
            factor *= (p - k) as f64;
        }
        ders
    }
}

/// Value of cubic basis function B_{i,3} at `x`. Exactly zero outside the
/// local support [knot_i, knot_{i+4}).
pub fn bspline_basis(i: usize, knots: &KnotVector, x: f64) -> Result<f64, SplineError> {
    if i >= knots.n_basis() {
        return Err(SplineError::IndexOutOfRange {
            index: i,
            n_basis: knots.n_basis(),
        });
    }
    if !(0.0..=1.0).contains(&x) {
        return Err(SplineError::DomainError { x });
    }
    let (lo, hi) = knots.domain();
    let xc = x.clamp(lo, hi);
    let span = knots.find_span(xc);
    if i + DEGREE < span || i > span {
        return Ok(0.0);
    }
    let vals = knots.basis_funs(span, xc);
    Ok(vals[i + DEGREE - span])
}

/// Span of `x` in an arbitrary knot slice for degree `p`, final span
/// right-closed, empty end spans skipped.
fn find_span_generic(t: &[f64], p: usize, x: f64) -> usize {
    let last = t.len() - p - 2;
    if x >= t[last + 1] {
        let mut s = last;
        while s > p && t[s] == t[s + 1] {
            s -= 1;
        }
        return s;
    }
    let mut lo = p;
    let mut hi = last;
    while lo < hi {
        let mid = (lo + hi + 1) / 2;
        if t[mid] <= x {
            lo = mid;
        } else {
            hi = mid - 1;
        }
    }
    lo
}

/// De Boor evaluation in the incremental form d = d_prev + a*(d - d_prev),
/// which reproduces constant coefficient vectors exactly.
fn de_boor(t: &[f64], coeffs: &[f64], p: usize, x: f64) -> f64 {
    let span = find_span_generic(t, p, x);
    let mut d: Vec<f64> = (0..=p).map(|j| coeffs[j + span - p]).collect();
    for r in 1..=p {
        for j in (r..=p).rev() {
            let denom = t[j + 1 + span - r] - t[j + span - p];
            let alpha = (x - t[j + span - p]) / denom;
            d[j] = d[j - 1] + alpha * (d[j] - d[j - 1]);
        }
    }
    d[p]
}

/// Evaluate sum_i coeffs[i] * B_{i,3}(x). `x` is clamped into the knot domain.
pub fn eval_bspline(knots: &KnotVector, coeffs: &[f64], x: f64) -> f64 {
    let (lo, hi) = knots.domain();
    de_boor(knots.knots(), coeffs, DEGREE, x.clamp(lo, hi))
}

/// First derivative of sum_i coeffs[i] * B_{i,3} at `x`, evaluated as the
/// degree-2 spline with differenced coefficients.
pub fn eval_bspline_deriv(knots: &KnotVector, coeffs: &[f64], x: f64) -> f64 {
    let t = knots.knots();
    let m = t.len();
    let dcoeffs: Vec<f64> = (0..coeffs.len() - 1)
        .map(|i| {
            let denom = t[i + 4] - t[i + 1];
            if denom == 0.0 {
                0.0
            } else {
                3.0 * (coeffs[i + 1] - coeffs[i]) / denom
            }
        })
        .collect();
    let (lo, hi) = knots.domain();
    de_boor(&t[1..m - 1], &dcoeffs, DEGREE - 1, x.clamp(lo, hi))
}

/// Uniform evaluation grid {0, 1/count, ..., 1}.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridSpec {
    count: usize,
}

impl GridSpec {
    pub fn new(count: usize) -> Result<Self, SplineError> {
        if count < 2 {
            return Err(SplineError::InvalidGrid { count });
        }
        Ok(GridSpec { count })
    }

    /// The 2001-point grid used for oracle labels.
    pub fn oracle() -> Self {
        GridSpec { count: 2000 }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn n_points(&self) -> usize {
        self.count + 1
    }

    pub fn point(&self, k: usize) -> f64 {
        k as f64 / self.count as f64
    }

    pub fn points(&self) -> impl Iterator<Item = f64> + '_ {
        (0..=self.count).map(move |k| self.point(k))
    }

    /// Grid argmin of an arbitrary function, ties broken toward smaller x.
    pub fn argmin_of(&self, mut f: impl FnMut(f64) -> f64) -> f64 {
        let mut best_k = 0;
        let mut best_v = f(self.point(0));
        for k in 1..=self.count {
            let v = f(self.point(k));
            if v < best_v {
                best_v = v;
                best_k = k;
            }
        }
        self.point(best_k)
    }
}

/// An interpolating cubic spline through `source_n` samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplineFit {
    pub knots: KnotVector,
    pub coeffs: Vec<f64>,
    pub source_n: usize,
}

/// Fit an interpolating cubic spline with not-a-knot boundary conditions.
pub fn fit_interpolating_spline(xs: &[f64], ys: &[f64]) -> Result<SplineFit, SplineError> {
    let n = xs.len();
    if ys.len() != n {
        return Err(SplineError::LengthMismatch { xs: n, ys: ys.len() });
    }
    if n < 4 {
        return Err(SplineError::TooFewSamples { n });
    }
    if xs.windows(2).any(|w| w[1] <= w[0]) {
        return Err(SplineError::UnsortedSamples);
    }
    if xs[0] < 0.0 || xs[n - 1] > 1.0 {
        return Err(SplineError::DomainError {
            x: if xs[0] < 0.0 { xs[0] } else { xs[n - 1] },
        });
    }

    let knots = KnotVector::clamped(xs[0], xs[n - 1], &xs[1..n - 1])?;
    let nb = knots.n_basis();
    debug_assert_eq!(nb, n + 2);

    // Row layout keeps the system banded with kl = ku = 3:
    //   0        collocation at xs[0]
    //   1        not-a-knot at xs[1]
    //   1 + j    collocation at xs[j], j = 1..=n-2
    //   n        not-a-knot at xs[n-2]
    //   n + 1    collocation at xs[n-1]
    let mut mat = BandMatrix::new(nb, 3, 3);
    let mut rhs = vec![0.0; nb];

    let colloc = |mat: &mut BandMatrix, row: usize, x: f64, y: f64, rhs: &mut [f64]| {
        let span = knots.find_span(x);
        let vals = knots.basis_funs(span, x);
        for (l, v) in vals.iter().enumerate() {
            if *v != 0.0 {
                mat.set(row, span - DEGREE + l, *v);
            }
        }
        rhs[row] = y;
    };
    colloc(&mut mat, 0, xs[0], ys[0], &mut rhs);
    for j in 1..=n - 2 {
        colloc(&mut mat, 1 + j, xs[j], ys[j], &mut rhs);
    }
    colloc(&mut mat, n + 1, xs[n - 1], ys[n - 1], &mut rhs);

    // Not-a-knot: third derivative continuous across the given interior site.
    let not_a_knot = |mat: &mut BandMatrix, row: usize, j: usize| {
        let mut weights = vec![0.0; nb];
        for (side, (a, b)) in [(xs[j - 1], xs[j]), (xs[j], xs[j + 1])].iter().enumerate() {
            let midpoint = 0.5 * (a + b);
            let span = knots.find_span(midpoint);
            let ders = knots.basis_ders(span, midpoint, 3);
            let sign = if side == 0 { -1.0 } else { 1.0 };
            for l in 0..4 {
                weights[span - DEGREE + l] += sign * ders[3][l];
            }
        }
        for (col, w) in weights.iter().enumerate() {
            if *w != 0.0 {
                mat.set(row, col, *w);
            }
        }
    };
    not_a_knot(&mut mat, 1, 1);
    not_a_knot(&mut mat, n, n - 2);

    let coeffs = mat
        .solve(rhs)
        .map_err(|e| SplineError::IllConditioned { column: e.column })?;
    Ok(SplineFit {
        knots,
        coeffs,
        source_n: n,
    })
}

impl SplineFit {
    /// Spline value at `x` in [0, 1]. Outside the fitted span the value is
    /// the constant extension from the nearest endpoint.
    pub fn eval(&self, x: f64) -> Result<f64, SplineError> {
        if !(0.0..=1.0).contains(&x) {
            return Err(SplineError::DomainError { x });
        }
        Ok(eval_bspline(&self.knots, &self.coeffs, x))
    }

    /// First derivative of the fitted spline at each position.
    pub fn derivative_at(&self, xs: &[f64]) -> Result<Vec<f64>, SplineError> {
        xs.iter()
            .map(|&x| {
                if !(0.0..=1.0).contains(&x) {
                    return Err(SplineError::DomainError { x });
                }
                Ok(eval_bspline_deriv(&self.knots, &self.coeffs, x))
            })
            .collect()
    }

    /// Grid point with minimal spline value; ties broken toward smaller x.
    pub fn argmin(&self, grid: &GridSpec) -> f64 {
        grid.argmin_of(|x| eval_bspline(&self.knots, &self.coeffs, x))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    /// Independent textbook Cox-de Boor recurrence, used only as a test
    /// oracle against the triangular-scheme implementation.
    fn cox_de_boor(t: &[f64], i: usize, k: usize, x: f64, right_closed_end: f64) -> f64 {
        if k == 0 {
            let hit = if x == right_closed_end && t[i + 1] == right_closed_end {
                t[i] < t[i + 1]
            } else {
                t[i] <= x && x < t[i + 1]
            };
            return if hit { 1.0 } else { 0.0 };
        }
        let mut acc = 0.0;
        if t[i + k] > t[i] {
            acc += (x - t[i]) / (t[i + k] - t[i]) * cox_de_boor(t, i, k - 1, x, right_closed_end);
        }
        if t[i + k + 1] > t[i + 1] {
            acc += (t[i + k + 1] - x) / (t[i + k + 1] - t[i + 1])
                * cox_de_boor(t, i + 1, k - 1, x, right_closed_end);
        }
        acc
    }

    fn uniform_knots() -> KnotVector {
        let interior: Vec<f64> = (1..10).map(|i| i as f64 * 0.1).collect();
        KnotVector::clamped(0.0, 1.0, &interior).unwrap()
    }

    #[test]
    fn basis_against_brute_force_recurrence() {
        let kv = uniform_knots();
        let t = kv.knots();
        let mut rng = Rng::new(5);
        for _ in 0..200 {
            let x = rng.uniform();
            for i in 0..kv.n_basis() {
                let ours = bspline_basis(i, &kv, x).unwrap();
                let oracle = cox_de_boor(t, i, 3, x, 1.0);
                assert!(
                    (ours - oracle).abs() < 1e-12,
                    "basis {i} at {x}: {ours} vs {oracle}"
                );
            }
        }
    }

    #[test]
    fn basis_frozen_values_at_quarter() {
        // Uniform interior knots at spacing 0.1, x = 0.25: the four nonzero
        // basis values are 1/48, 23/48, 23/48, 1/48 (indices 2..=5).
        let kv = uniform_knots();
        assert!((bspline_basis(2, &kv, 0.25).unwrap() - 1.0 / 48.0).abs() < 1e-12);
        assert!((bspline_basis(3, &kv, 0.25).unwrap() - 23.0 / 48.0).abs() < 1e-12);
        assert!((bspline_basis(4, &kv, 0.25).unwrap() - 23.0 / 48.0).abs() < 1e-12);
        assert!((bspline_basis(5, &kv, 0.25).unwrap() - 1.0 / 48.0).abs() < 1e-12);
        assert_eq!(bspline_basis(6, &kv, 0.25).unwrap(), 0.0);
    }

    #[test]
    fn partition_of_unity() {
        let mut rng = Rng::new(17);
        for trial in 0..20 {
            let mut interior: Vec<f64> = (0..5 + trial % 7)
                .map(|_| rng.uniform_in(0.05, 0.95))
                .collect();
            interior.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let kv = KnotVector::clamped(0.0, 1.0, &interior).unwrap();
            for _ in 0..50 {
                let x = rng.uniform();
                let sum: f64 = (0..kv.n_basis())
                    .map(|i| bspline_basis(i, &kv, x).unwrap())
                    .sum();
                assert!((sum - 1.0).abs() < 1e-12, "sum {sum} at x={x}");
            }
        }
    }

    #[test]
    fn clamped_endpoint_interpolation() {
        let kv = KnotVector::clamped(0.0, 1.0, &[]).unwrap();
        assert_eq!(bspline_basis(0, &kv, 0.0).unwrap(), 1.0);
        for i in 1..kv.n_basis() {
            assert_eq!(bspline_basis(i, &kv, 0.0).unwrap(), 0.0);
        }
        assert!((bspline_basis(kv.n_basis() - 1, &kv, 1.0).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn local_support_is_exact() {
        let kv = uniform_knots();
        let t = kv.knots();
        let mut rng = Rng::new(3);
        for _ in 0..500 {
            let x = rng.uniform();
            for i in 0..kv.n_basis() {
                let v = bspline_basis(i, &kv, x).unwrap();
                assert!(v >= 0.0);
                if x < t[i] || x > t[i + 4] {
                    assert_eq!(v, 0.0, "basis {i} should vanish at {x}");
                }
            }
        }
    }

    #[test]
    fn basis_index_out_of_range() {
        let kv = uniform_knots();
        assert!(matches!(
            bspline_basis(13, &kv, 0.5),
            Err(SplineError::IndexOutOfRange { .. })
        ));
    }

    fn equispaced(n: usize) -> Vec<f64> {
        (0..n).map(|i| i as f64 / (n - 1) as f64).collect()
    }

    #[test]
    fn fit_reproduces_constant() {
        let xs = equispaced(12);
        let ys = vec![5.0; 12];
        let fit = fit_interpolating_spline(&xs, &ys).unwrap();
        let mut rng = Rng::new(9);
        for _ in 0..100 {
            let x = rng.uniform();
            assert!((fit.eval(x).unwrap() - 5.0).abs() < 1e-9);
        }
    }

    #[test]
    fn fit_reproduces_linear() {
        let xs = equispaced(10);
        let ys: Vec<f64> = xs.iter().map(|&x| 2.0 * x + 1.0).collect();
        let fit = fit_interpolating_spline(&xs, &ys).unwrap();
        let mut rng = Rng::new(11);
        for _ in 0..100 {
            let x = rng.uniform();
            assert!((fit.eval(x).unwrap() - (2.0 * x + 1.0)).abs() < 1e-9);
        }
        for d in fit.derivative_at(&equispaced(37)).unwrap() {
            assert!((d - 2.0).abs() < 1e-8);
        }
    }

    #[test]
    fn not_a_knot_reproduces_cubic() {
        let xs = equispaced(9);
        let cubic = |x: f64| 3.0 * x * x * x - 2.0 * x * x + 0.5 * x - 1.0;
        let ys: Vec<f64> = xs.iter().map(|&x| cubic(x)).collect();
        let fit = fit_interpolating_spline(&xs, &ys).unwrap();
        let mut rng = Rng::new(13);
        for _ in 0..200 {
            let x = rng.uniform();
            assert!(
                (fit.eval(x).unwrap() - cubic(x)).abs() < 1e-9,
                "cubic reproduction failed at {x}"
            );
        }
    }

    #[test]
    fn fit_interpolates_sin_between_samples() {
        let xs = equispaced(40);
        let ys: Vec<f64> = xs.iter().map(|&x| (6.0 * x).sin()).collect();
        let fit = fit_interpolating_spline(&xs, &ys).unwrap();
        // Dense-grid oracle: the fit should track sin(6x) off-sample.
        for k in 0..=1000 {
            let x = k as f64 / 1000.0;
            assert!(
                (fit.eval(x).unwrap() - (6.0 * x).sin()).abs() < 1e-3,
                "off-sample error too large at {x}"
            );
        }
    }

    #[test]
    fn fit_interpolates_samples_exactly() {
        let mut rng = Rng::new(29);
        let xs = equispaced(25);
        let ys: Vec<f64> = (0..25).map(|_| rng.uniform_in(-2.0, 2.0)).collect();
        let fit = fit_interpolating_spline(&xs, &ys).unwrap();
        for (x, y) in xs.iter().zip(&ys) {
            assert!((fit.eval(*x).unwrap() - y).abs() < 1e-9);
        }
    }

    #[test]
    fn fit_rejects_bad_input() {
        assert!(matches!(
            fit_interpolating_spline(&[0.0, 0.5, 1.0], &[1.0, 2.0, 3.0]),
            Err(SplineError::TooFewSamples { n: 3 })
        ));
        assert!(matches!(
            fit_interpolating_spline(&[0.0, 0.5, 0.5, 1.0], &[1.0; 4]),
            Err(SplineError::UnsortedSamples)
        ));
        assert!(matches!(
            fit_interpolating_spline(&[0.3, 0.2, 0.5, 1.0], &[1.0; 4]),
            Err(SplineError::UnsortedSamples)
        ));
    }

    #[test]
    fn eval_outside_domain_errors() {
        let xs = equispaced(6);
        let fit = fit_interpolating_spline(&xs, &[0.0; 6]).unwrap();
        assert!(matches!(
            fit.eval(1.5),
            Err(SplineError::DomainError { .. })
        ));
        assert!(matches!(
            fit.eval(-0.1),
            Err(SplineError::DomainError { .. })
        ));
    }

    #[test]
    fn derivative_matches_finite_differences() {
        let xs = equispaced(40);
        let ys: Vec<f64> = xs.iter().map(|&x| (6.0 * x).sin()).collect();
        let fit = fit_interpolating_spline(&xs, &ys).unwrap();
        let mut rng = Rng::new(31);
        let probes: Vec<f64> = (0..100).map(|_| rng.uniform_in(0.01, 0.99)).collect();
        let ders = fit.derivative_at(&probes).unwrap();
        for (x, d) in probes.iter().zip(&ders) {
            let h = 1e-6;
            let fd = (fit.eval(x + h).unwrap() - fit.eval(x - h).unwrap()) / (2.0 * h);
            assert!((d - fd).abs() < 1e-4, "deriv mismatch at {x}: {d} vs {fd}");
        }
        // Spot value: d/dx sin(6x) at 0.5 is 6 cos(3).
        let at_half = fit.derivative_at(&[0.5]).unwrap()[0];
        assert!((at_half - 6.0 * (3.0f64).cos()).abs() < 1e-2);
    }

    #[test]
    fn argmin_convex_quadratic() {
        let xs = equispaced(20);
        let ys: Vec<f64> = xs.iter().map(|&x| (x - 0.3) * (x - 0.3)).collect();
        let fit = fit_interpolating_spline(&xs, &ys).unwrap();
        let grid = GridSpec::new(2000).unwrap();
        assert!((fit.argmin(&grid) - 0.3).abs() <= 5e-4);
    }

    #[test]
    fn argmin_ties_break_to_smallest_x() {
        // Exactly constant spline: every grid point ties, smallest x wins.
        let kv = uniform_knots();
        let fit = SplineFit {
            coeffs: vec![1.0; kv.n_basis()],
            knots: kv,
            source_n: 0,
        };
        let grid = GridSpec::new(100).unwrap();
        assert_eq!(fit.argmin(&grid), 0.0);
    }

    #[test]
    fn constant_coeffs_evaluate_exactly() {
        let kv = uniform_knots();
        let coeffs = vec![5.0; kv.n_basis()];
        for k in 0..=500 {
            let x = k as f64 / 500.0;
            assert_eq!(eval_bspline(&kv, &coeffs, x), 5.0);
            assert_eq!(eval_bspline_deriv(&kv, &coeffs, x), 0.0);
        }
    }

    #[test]
    fn argmin_two_well_matches_dense_scan() {
        // Deeper right well; verify against a 10^6-point scan.
        let f = |x: f64| 4.0 * (x - 0.2).powi(2) * (x - 0.8).powi(2) - 0.1 * (x - 0.8);
        let xs = equispaced(40);
        let ys: Vec<f64> = xs.iter().map(|&x| f(x)).collect();
        let fit = fit_interpolating_spline(&xs, &ys).unwrap();
        let coarse = fit.argmin(&GridSpec::new(2000).unwrap());
        let dense = fit.argmin(&GridSpec::new(1_000_000).unwrap());
        assert!((coarse - dense).abs() <= 1.0 / 2000.0 + 1e-12);
        assert!(coarse > 0.5, "expected the right well, got {coarse}");
    }

    #[test]
    fn argmin_is_deterministic() {
        let xs = equispaced(15);
        let mut rng = Rng::new(41);
        let ys: Vec<f64> = (0..15).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
        let fit = fit_interpolating_spline(&xs, &ys).unwrap();
        let grid = GridSpec::new(2000).unwrap();
        let a = fit.argmin(&grid);
        let b = fit.argmin(&grid);
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn grid_spec_validation() {
        assert!(GridSpec::new(1).is_err());
        let g = GridSpec::new(4).unwrap();
        let pts: Vec<f64> = g.points().collect();
        assert_eq!(pts, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
    }
}
