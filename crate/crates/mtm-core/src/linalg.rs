//! Dense real matrices and LU factorization with partial pivoting.
//!
//! Circuit matrices here are desk-scale (hundreds to a few thousand
//! unknowns) and generally nonsymmetric, so a dense row-major store with
//! partial pivoting is the whole story. Elimination skips rows whose
//! multiplier is exactly zero, which keeps ladder-shaped (banded) systems
//! cheap without changing any result bit.

/// Smallest pivot magnitude accepted during factorization.
pub const PIVOT_MIN: f64 = 1e-13;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    n: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(n: usize) -> Self {
        Matrix {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.n + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.data[row * self.n + col] = value;
    }

    #[inline]
    pub fn add(&mut self, row: usize, col: usize, value: f64) {
        self.data[row * self.n + col] += value;
    }

    pub fn fill_zero(&mut self) {
        self.data.fill(0.0);
    }

    /// y = A·x
    pub fn mul_vec(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n);
        for (row, yi) in y.iter_mut().enumerate() {
            let base = row * self.n;
            let mut acc = 0.0;
            for (j, xj) in x.iter().enumerate() {
                acc += self.data[base + j] * xj;
            }
            *yi = acc;
        }
    }

    /// Row sums of |A_ij|·|x_j|, used for backward-error convergence tests.
    pub fn abs_mul_vec(&self, x: &[f64], y: &mut [f64]) {
        for (row, yi) in y.iter_mut().enumerate() {
            let base = row * self.n;
            let mut acc = 0.0;
            for (j, xj) in x.iter().enumerate() {
                acc += self.data[base + j].abs() * xj.abs();
            }
            *yi = acc;
        }
    }
}

/// LU factors of a row-permuted matrix.
#[derive(Debug, Clone)]
pub struct LuFactors {
    lu: Matrix,
    perm: Vec<usize>,
}

/// Factorization failure: no acceptable pivot in some column.
#[derive(Debug, Clone, PartialEq)]
pub struct SingularMatrix {
    /// Elimination column at which every candidate pivot was below [`PIVOT_MIN`].
    pub column: usize,
    /// Magnitude of the best available pivot.
    pub best_pivot: f64,
}

impl std::fmt::Display for SingularMatrix {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "singular matrix: pivot {:.3e} below {:.0e} at column {}",
            self.best_pivot, PIVOT_MIN, self.column
        )
    }
}

impl std::error::Error for SingularMatrix {}

/// Factor a copy of `a` as P·A = L·U with partial pivoting.
pub fn lu_factor(a: &Matrix) -> Result<LuFactors, SingularMatrix> {
    let n = a.dim();
    let mut lu = a.clone();
    let mut perm: Vec<usize> = (0..n).collect();

    for k in 0..n {
        // Partial pivoting: largest magnitude in column k at or below the diagonal.
        let mut piv_row = k;
        let mut piv_val = lu.get(k, k).abs();
        for r in (k + 1)..n {
            let v = lu.get(r, k).abs();
            if v > piv_val {
                piv_val = v;
                piv_row = r;
            }
        }
        if piv_val < PIVOT_MIN {
            return Err(SingularMatrix {
                column: k,
                best_pivot: piv_val,
            });
        }
        if piv_row != k {
            perm.swap(k, piv_row);
            for j in 0..n {
                let tmp = lu.get(k, j);
                lu.set(k, j, lu.get(piv_row, j));
                lu.set(piv_row, j, tmp);
            }
        }

        let pivot = lu.get(k, k);
        for r in (k + 1)..n {
            let factor = lu.get(r, k) / pivot;
            lu.set(r, k, factor);
            if factor == 0.0 {
                continue;
            }
            for j in (k + 1)..n {
                let u_kj = lu.get(k, j);
                if u_kj != 0.0 {
                    lu.add(r, j, -factor * u_kj);
                }
            }
        }
    }

    Ok(LuFactors { lu, perm })
}

impl LuFactors {
    /// Solve A·x = b using the stored factors.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.lu.dim();
        debug_assert_eq!(b.len(), n);
        let mut x = vec![0.0; n];
        // Forward substitution with the permuted right-hand side.
        for i in 0..n {
            let mut acc = b[self.perm[i]];
            for (j, xj) in x.iter().enumerate().take(i) {
                let l = self.lu.get(i, j);
                if l != 0.0 {
                    acc -= l * xj;
                }
            }
            x[i] = acc;
        }
        // Back substitution.
        for i in (0..n).rev() {
            let mut acc = x[i];
            for (j, &xj) in x.iter().enumerate().skip(i + 1) {
                let u = self.lu.get(i, j);
                if u != 0.0 {
                    acc -= u * xj;
                }
            }
            x[i] = acc / self.lu.get(i, i);
        }
        x
    }
}
