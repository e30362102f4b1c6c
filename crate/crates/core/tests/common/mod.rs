//! Test oracles shared by the integration suites. Everything here is plain
//! dense arithmetic on `Vec<Vec<f64>>`, independent of the library's
//! factorizations.
#![allow(dead_code)]

use faer::Mat;
use oedtomo::qp::{LinearConstraints, QpProblem};
use oedtomo::CsrMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub type Dense = Vec<Vec<f64>>;

pub fn to_mat(a: &Dense) -> Mat<f64> {
    let (r, c) = (a.len(), a.first().map_or(0, |row| row.len()));
    Mat::from_fn(r, c, |i, j| a[i][j])
}

pub fn from_mat(a: &Mat<f64>) -> Dense {
    (0..a.nrows()).map(|i| (0..a.ncols()).map(|j| a[(i, j)]).collect()).collect()
}

pub fn to_csr(a: &Dense, ncols: usize) -> CsrMatrix {
    CsrMatrix::from_rows(
        ncols,
        a.iter()
            .map(|row| row.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(j, &v)| (j, v)).collect())
            .collect(),
    )
}

pub fn matvec(a: &Dense, x: &[f64]) -> Vec<f64> {
    a.iter().map(|row| row.iter().zip(x).map(|(u, v)| u * v).sum()).collect()
}

pub fn transpose(a: &Dense, ncols: usize) -> Dense {
    (0..ncols).map(|j| a.iter().map(|row| row[j]).collect()).collect()
}

pub fn matmul(a: &Dense, b: &Dense) -> Dense {
    let inner = b.len();
    let cols = b.first().map_or(0, |r| r.len());
    a.iter()
        .map(|row| (0..cols).map(|j| (0..inner).map(|k| row[k] * b[k][j]).sum()).collect())
        .collect()
}

pub fn identity(n: usize) -> Dense {
    (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect()
}

/// Gaussian elimination with partial pivoting; `None` when a pivot falls
/// below `1e-12` times the largest entry.
pub fn solve_dense(a: &Dense, b: &[f64]) -> Option<Vec<f64>> {
    let n = a.len();
    let mut m: Dense = a.iter().zip(b).map(|(row, &bi)| row.iter().copied().chain([bi]).collect()).collect();
    let scale = a.iter().flatten().fold(0.0f64, |s, v| s.max(v.abs())).max(1e-300);
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))?;
        if m[piv][col].abs() < 1e-12 * scale {
            return None;
        }
        m.swap(col, piv);
        for r in col + 1..n {
            let factor = m[r][col] / m[col][col];
            if factor != 0.0 {
                for c in col..=n {
                    m[r][c] -= factor * m[col][c];
                }
            }
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| m[r][c] * x[c]).sum();
        x[r] = (m[r][n] - s) / m[r][r];
    }
    Some(x)
}

/// Inverse by Gauss-Jordan, column by column.
pub fn inverse(a: &Dense) -> Option<Dense> {
    let n = a.len();
    let cols: Option<Vec<Vec<f64>>> = (0..n)
        .map(|j| {
            let e: Vec<f64> = (0..n).map(|i| if i == j { 1.0 } else { 0.0 }).collect();
            solve_dense(a, &e)
        })
        .collect();
    cols.map(|c| transpose(&c, n))
}

/// A random strictly convex QP with a known strictly feasible point.
pub struct RandomQp {
    pub q: Dense,
    pub b: Vec<f64>,
    pub ce: Dense,
    pub ce_rhs: Vec<f64>,
    pub ci: Dense,
    pub ci_rhs: Vec<f64>,
}

impl RandomQp {
    pub fn generate(rng: &mut ChaCha8Rng, n: usize, me: usize, mi: usize) -> Self {
        let r: Dense = (0..n).map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let mut q = matmul(&transpose(&r, n), &r);
        for (i, row) in q.iter_mut().enumerate() {
            row[i] += 0.1;
        }
        let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let x0: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let ce: Dense = (0..me).map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let ce_rhs = matvec(&ce, &x0);
        let ci: Dense = (0..mi).map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let ci_rhs = matvec(&ci, &x0).into_iter().map(|v| v - rng.gen_range(0.05..1.0)).collect();
        Self {
            q,
            b,
            ce,
            ce_rhs,
            ci,
            ci_rhs,
        }
    }

    pub fn n(&self) -> usize {
        self.q.len()
    }

    pub fn problem(&self) -> QpProblem {
        let n = self.n();
        let constraints = LinearConstraints {
            eq: to_csr(&self.ce, n),
            eq_rhs: self.ce_rhs.clone(),
            ineq: to_csr(&self.ci, n),
            ineq_rhs: self.ci_rhs.clone(),
        };
        QpProblem::dense(to_mat(&self.q), self.b.clone(), constraints).unwrap()
    }
}

pub type Kkt = (Vec<f64>, Vec<f64>, Vec<f64>);

/// Optimal primal-dual solution `(f, lambda_e, lambda_i)` by enumerating
/// working sets of inequality rows in order of size and returning the first
/// that yields a primal-feasible point with nonnegative multipliers.
pub fn active_set_oracle(qp: &RandomQp) -> Kkt {
    let n = qp.n();
    let (me, mi) = (qp.ce.len(), qp.ci.len());
    for size in 0..=mi.min(n - me) {
        let mut subset = Vec::with_capacity(size);
        if let Some(sol) = search(qp, 0, size, &mut subset) {
            return sol;
        }
    }
    panic!("no working set gives a KKT point");
}

/// Depth-first walk over the `size`-subsets of rows `from..m_i`.
fn search(qp: &RandomQp, from: usize, size: usize, subset: &mut Vec<usize>) -> Option<Kkt> {
    if subset.len() == size {
        return try_working_set(qp, subset);
    }
    for k in from..qp.ci.len() {
        subset.push(k);
        let found = search(qp, k + 1, size, subset);
        subset.pop();
        if found.is_some() {
            return found;
        }
    }
    None
}

fn try_working_set(qp: &RandomQp, work: &[usize]) -> Option<Kkt> {
    let n = qp.n();
    let me = qp.ce.len();
    let rows: Vec<&Vec<f64>> = qp.ce.iter().chain(work.iter().map(|&k| &qp.ci[k])).collect();
    let rhs: Vec<f64> = qp.ce_rhs.iter().copied().chain(work.iter().map(|&k| qp.ci_rhs[k])).collect();
    let m = rows.len();
    // [[Q, -A^T], [A, 0]] [f; l] = [-b; rhs]
    let mut k = vec![vec![0.0; n + m]; n + m];
    for i in 0..n {
        k[i][..n].copy_from_slice(&qp.q[i]);
        for (j, row) in rows.iter().enumerate() {
            k[i][n + j] = -row[i];
            k[n + j][i] = row[i];
        }
    }
    let r: Vec<f64> = qp.b.iter().map(|v| -v).chain(rhs).collect();
    let x = solve_dense(&k, &r)?;
    let (f, l) = x.split_at(n);
    let tol = 1e-9;
    if l[me..].iter().any(|&v| v < -tol) {
        return None;
    }
    let cif = matvec(&qp.ci, f);
    if cif.iter().zip(&qp.ci_rhs).any(|(a, b)| a - b < -tol) {
        return None;
    }
    let mut li = vec![0.0; qp.ci.len()];
    for (t, &kk) in work.iter().enumerate() {
        li[kk] = l[me + t];
    }
    Some((f.to_vec(), l[..me].to_vec(), li))
}

/// Equality-constrained minimizer by the null-space method: a basis `Z` of
/// `null(C_e)` from Gram-Schmidt on the identity, a particular solution from
/// the minimum-norm system, then the reduced system `Z^T Q Z u = -Z^T (Q x_p + b)`.
pub fn null_space_oracle(q: &Dense, b: &[f64], ce: &Dense, ce_rhs: &[f64]) -> Vec<f64> {
    let n = q.len();
    let m = ce.len();
    // Particular solution x_p = C_e^T (C_e C_e^T)^{-1} c_e.
    let cct = matmul(ce, &transpose(ce, n));
    let y = solve_dense(&cct, ce_rhs).expect("full row rank");
    let xp = matvec(&transpose(ce, n), &y);
    // Orthonormal basis of row(C_e) then of its complement.
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let candidates = ce.iter().cloned().chain(identity(n));
    for mut v in candidates {
        for u in &basis {
            let d: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(u).for_each(|(a, b)| *a -= d * b);
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-8 {
            basis.push(v.into_iter().map(|a| a / norm).collect());
        }
    }
    let z: Dense = basis[m..].to_vec(); // rows are null-space vectors
    let zt = transpose(&z, n);
    let zqz = matmul(&matmul(&z, q), &zt);
    let g: Vec<f64> = matvec(q, &xp).iter().zip(b).map(|(a, c)| a + c).collect();
    let rhs: Vec<f64> = matvec(&z, &g).into_iter().map(|v| -v).collect();
    let u = solve_dense(&zqz, &rhs).expect("reduced Hessian is definite");
    let zu = matvec(&zt, &u);
    xp.iter().zip(&zu).map(|(a, c)| a + c).collect()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn norm(a: &[f64]) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// A QP family `Q(p) = Q_0 + sum_k p_k Q_k`, `b(p) = b_0 + B p` whose solution
/// at `p = 0` is known and strictly complementary: `active` inequality rows
/// hold with multipliers in `[0.5, 2]`, the rest have slacks in `[0.5, 2]`.
#[derive(Clone)]
pub struct ParamQp {
    pub q0: Dense,
    pub qk: Vec<Dense>,
    pub b0: Vec<f64>,
    /// `n x l`.
    pub bmat: Dense,
    pub ce: Dense,
    pub ce_rhs: Vec<f64>,
    pub ci: Dense,
    pub ci_rhs: Vec<f64>,
    pub f_star: Vec<f64>,
}

impl ParamQp {
    pub fn generate(rng: &mut ChaCha8Rng, n: usize, me: usize, mi: usize, l: usize) -> Self {
        let base = RandomQp::generate(rng, n, 0, 0);
        let qk = (0..l)
            .map(|_| {
                let r: Dense = (0..n).map(|_| (0..n).map(|_| rng.gen_range(-0.3..0.3)).collect()).collect();
                matmul(&transpose(&r, n), &r)
            })
            .collect();
        let bmat: Dense = (0..n).map(|_| (0..l).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let f_star = random_vec(rng, n);
        let ce: Dense = (0..me).map(|_| random_vec(rng, n)).collect();
        let ce_rhs = matvec(&ce, &f_star);
        let ci: Dense = (0..mi).map(|_| random_vec(rng, n)).collect();
        let n_active = rng.gen_range(0..=mi.min(n - me));
        let cif = matvec(&ci, &f_star);
        let mut ci_rhs = Vec::with_capacity(mi);
        let mut lambda_i = Vec::with_capacity(mi);
        for (k, v) in cif.iter().enumerate() {
            if k < n_active {
                ci_rhs.push(*v);
                lambda_i.push(rng.gen_range(0.5..2.0));
            } else {
                ci_rhs.push(v - rng.gen_range(0.5..2.0));
                lambda_i.push(0.0);
            }
        }
        let lambda_e = random_vec(rng, me);
        // Stationarity at f_star: Q f + b = C_e^T l_e + C_i^T l_i.
        let qf = matvec(&base.q, &f_star);
        let cel = matvec(&transpose(&ce, n), &lambda_e);
        let cil = matvec(&transpose(&ci, n), &lambda_i);
        let b0 = (0..n).map(|i| -qf[i] + cel[i] + cil[i]).collect();
        Self {
            q0: base.q,
            qk,
            b0,
            bmat,
            ce,
            ce_rhs,
            ci,
            ci_rhs,
            f_star,
        }
    }

    pub fn n(&self) -> usize {
        self.q0.len()
    }

    pub fn num_params(&self) -> usize {
        self.qk.len()
    }

    pub fn q_at(&self, p: &[f64]) -> Dense {
        let mut q = self.q0.clone();
        for (qk, &pk) in self.qk.iter().zip(p) {
            for (row, rk) in q.iter_mut().zip(qk) {
                row.iter_mut().zip(rk).for_each(|(a, b)| *a += pk * b);
            }
        }
        q
    }

    pub fn b_at(&self, p: &[f64]) -> Vec<f64> {
        let bp = matvec(&self.bmat, p);
        self.b0.iter().zip(&bp).map(|(a, b)| a + b).collect()
    }

    pub fn problem(&self, p: &[f64]) -> QpProblem {
        let n = self.n();
        let constraints = LinearConstraints {
            eq: to_csr(&self.ce, n),
            eq_rhs: self.ce_rhs.clone(),
            ineq: to_csr(&self.ci, n),
            ineq_rhs: self.ci_rhs.clone(),
        };
        QpProblem::dense(to_mat(&self.q_at(p)), self.b_at(p), constraints).unwrap()
    }

    /// `d(Q f + b)/dp` at fixed `f`: column `k` is `Q_k f + B e_k`.
    pub fn rhs_jacobian(&self, f: &[f64]) -> Mat<f64> {
        let (n, l) = (self.n(), self.num_params());
        let cols: Vec<Vec<f64>> = self.qk.iter().map(|qk| matvec(qk, f)).collect();
        Mat::from_fn(n, l, |i, k| cols[k][i] + self.bmat[i][k])
    }
}

/// `(1 / 2 sigma^2) ||pinv([M; alpha L])||_F^2 = tr((M^T M + alpha^2 L^T L)^{-1}) / 2 sigma^2`,
/// by explicit Gauss-Jordan inversion.
pub fn pinv_oracle(m: &Dense, n: usize, l: Option<&Dense>, alpha: f64, sigma: f64) -> f64 {
    let mut h = matmul(&transpose(m, n), m);
    let ltl = l.map_or_else(|| identity(n), |l| matmul(&transpose(l, n), l));
    for i in 0..n {
        for j in 0..n {
            h[i][j] += alpha * alpha * ltl[i][j];
        }
    }
    let inv = inverse(&h).unwrap();
    (0..n).map(|i| inv[i][i]).sum::<f64>() / (2.0 * sigma * sigma)
}

/// `rows x n` with rank at most `rank`.
pub fn random_low_rank(rng: &mut ChaCha8Rng, rows: usize, n: usize, rank: usize) -> Dense {
    let u: Dense = (0..rows).map(|_| random_vec(rng, rank)).collect();
    let v: Dense = (0..rank).map(|_| random_vec(rng, n)).collect();
    if rank == 0 {
        vec![vec![0.0; n]; rows]
    } else {
        matmul(&u, &v)
    }
}
