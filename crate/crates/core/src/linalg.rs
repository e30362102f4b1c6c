//! Small vector helpers and thin wrappers over faer's dense factorizations.

use faer::linalg::solvers::{Llt, Solve};
use faer::{Mat, MatRef, Side};

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// `y += a * x`.
pub fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    y.iter_mut().zip(x).for_each(|(yi, xi)| *yi += a * xi);
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Dense matrix-vector product.
pub fn mat_vec(a: MatRef<'_, f64>, x: &[f64]) -> Vec<f64> {
    assert_eq!(a.ncols(), x.len());
    let mut y = vec![0.0; a.nrows()];
    for j in 0..a.ncols() {
        let xj = x[j];
        if xj == 0.0 {
            continue;
        }
        for (i, yi) in y.iter_mut().enumerate() {
            *yi += a[(i, j)] * xj;
        }
    }
    y
}

/// Dense transposed matrix-vector product `A^T x`.
pub fn mat_t_vec(a: MatRef<'_, f64>, x: &[f64]) -> Vec<f64> {
    assert_eq!(a.nrows(), x.len());
    (0..a.ncols())
        .map(|j| (0..a.nrows()).map(|i| a[(i, j)] * x[i]).sum())
        .collect()
}

pub fn col_vec(x: &[f64]) -> Mat<f64> {
    Mat::from_fn(x.len(), 1, |i, _| x[i])
}

/// Cholesky factor of a symmetric positive-definite matrix (lower triangle
/// read).
pub struct Cholesky {
    llt: Llt<f64>,
}

impl Cholesky {
    /// `None` when the matrix is not numerically positive definite.
    pub fn new(a: MatRef<'_, f64>) -> Option<Self> {
        a.llt(Side::Lower).ok().map(|llt| Self { llt })
    }

    pub fn dim(&self) -> usize {
        self.llt.L().nrows()
    }

    /// Squared `i`-th diagonal entry of the factor (the `i`-th pivot).
    pub fn diag_sq(&self, i: usize) -> f64 {
        let l = self.llt.L()[(i, i)];
        l * l
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = col_vec(b);
        self.llt.solve_in_place(x.as_mut());
        x.col_as_slice(0).to_vec()
    }

    pub fn solve_mat(&self, b: MatRef<'_, f64>) -> Mat<f64> {
        self.llt.solve(b)
    }
}

/// Symmetric eigendecomposition `A = V diag(w) V^T`, eigenvalues ascending.
pub fn sym_eigen(a: MatRef<'_, f64>) -> (Vec<f64>, Mat<f64>) {
    let e = a
        .self_adjoint_eigen(Side::Lower)
        .expect("symmetric eigendecomposition did not converge");
    let w = (0..a.nrows()).map(|i| e.S()[i]).collect();
    (w, e.U().to_owned())
}

/// Singular values, descending.
pub fn singular_values(a: MatRef<'_, f64>) -> Vec<f64> {
    if a.nrows() == 0 || a.ncols() == 0 {
        return Vec::new();
    }
    let mut s = a.singular_values().expect("singular value decomposition did not converge");
    s.sort_by(|x, y| y.total_cmp(x));
    s
}
