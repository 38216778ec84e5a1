//! Band-limited Gaussian elimination with partial pivoting.
//!
//! The interpolation systems assembled by the spline module have lower and
//! upper bandwidths of at most 3. Elimination only touches entries inside the
//! band (partial pivoting widens the upper bandwidth by at most `kl`), so the
//! solve is O(n * (kl + ku)^2) even though rows are stored dense for
//! simplicity.

/// A square matrix with known band structure.
#[derive(Debug, Clone)]
pub(crate) struct BandMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    rows: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct IllConditioned {
    pub column: usize,
}

impl BandMatrix {
    pub fn new(n: usize, kl: usize, ku: usize) -> Self {
        BandMatrix {
            n,
            kl,
            ku,
            rows: vec![vec![0.0; n]; n],
        }
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(
            j + self.kl >= i && i + self.ku >= j,
            "entry ({i},{j}) outside band kl={} ku={}",
            self.kl,
            self.ku
        );
        self.rows[i][j] = v;
    }

    /// Solve A x = rhs in place, destroying the matrix. Fails when a pivot
    /// falls below `1e-12` relative to the largest entry of the matrix.
    pub fn solve(mut self, mut rhs: Vec<f64>) -> Result<Vec<f64>, IllConditioned> {
        assert_eq!(rhs.len(), self.n);
        let n = self.n;
        // Row swaps during pivoting can push fill up to kl + ku columns
        // right of the diagonal.
        let ubw = (self.kl + self.ku).min(n - 1);
        let scale = self
            .rows
            .iter()
            .flat_map(|r| r.iter())
            .fold(0.0f64, |a, &v| a.max(v.abs()))
            .max(1.0);

        for k in 0..n {
            let pmax = (k + self.kl).min(n - 1);
            let mut piv = k;
            for i in k + 1..=pmax {
                if self.rows[i][k].abs() > self.rows[piv][k].abs() {
                    piv = i;
                }
            }
            if self.rows[piv][k].abs() < 1e-12 * scale {
                return Err(IllConditioned { column: k });
            }
            if piv != k {
                self.rows.swap(piv, k);
                rhs.swap(piv, k);
            }
            let cmax = (k + ubw).min(n - 1);
            let pivot = self.rows[k][k];
            for i in k + 1..=pmax {
                let factor = self.rows[i][k] / pivot;
                if factor == 0.0 {
                    continue;
                }
                self.rows[i][k] = 0.0;
                for j in k + 1..=cmax {
                    let upper = self.rows[k][j];
                    self.rows[i][j] -= factor * upper;
                }
                rhs[i] -= factor * rhs[k];
            }
        }

        for k in (0..n).rev() {
            let cmax = (k + ubw).min(n - 1);
            let mut acc = rhs[k];
            for j in k + 1..=cmax {
                acc -= self.rows[k][j] * rhs[j];
            }
            rhs[k] = acc / self.rows[k][k];
        }
        Ok(rhs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_tridiagonal() {
        // -2 on diagonal, 1 off-diagonal; compare against a hand solve.
        let n = 5;
        let mut m = BandMatrix::new(n, 1, 1);
        for i in 0..n {
            m.set(i, i, -2.0);
            if i > 0 {
                m.set(i, i - 1, 1.0);
            }
            if i + 1 < n {
                m.set(i, i + 1, 1.0);
            }
        }
        let x_true = vec![1.0, -0.5, 2.0, 0.25, -1.0];
        let mut rhs = vec![0.0; n];
        for i in 0..n {
            rhs[i] = -2.0 * x_true[i]
                + if i > 0 { x_true[i - 1] } else { 0.0 }
                + if i + 1 < n { x_true[i + 1] } else { 0.0 };
        }
        let x = m.solve(rhs).unwrap();
        for i in 0..n {
            assert!((x[i] - x_true[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn pivoting_handles_zero_diagonal() {
        let mut m = BandMatrix::new(2, 1, 1);
        m.set(0, 0, 0.0);
        m.set(0, 1, 1.0);
        m.set(1, 0, 1.0);
        m.set(1, 1, 0.0);
        let x = m.solve(vec![3.0, 4.0]).unwrap();
        assert!((x[0] - 4.0).abs() < 1e-15);
        assert!((x[1] - 3.0).abs() < 1e-15);
    }

    #[test]
    fn singular_matrix_reports_column() {
        let mut m = BandMatrix::new(3, 1, 1);
        m.set(0, 0, 1.0);
        m.set(1, 1, 0.0);
        m.set(2, 2, 1.0);
        let err = m.solve(vec![1.0, 1.0, 1.0]).unwrap_err();
        assert_eq!(err.column, 1);
    }
}
