//! Factorization of the reduced Newton matrix
//!
//! ```text
//! [ H    -C_e^T ] [x]   [r1]        H = Q + C_i^T D C_i + reg I
//! [ C_e   0     ] [y] = [r2]
//! ```
//!
//! shared by the interior-point iterations and the sensitivity solves.
//! `H` is factored densely, or through the Woodbury identity when `Q` is
//! `M^T M + alpha^2 I` with fewer measurements than unknowns and `C_i^T D C_i`
//! is diagonal. Equality rows are handled by a Schur complement.
//!
//! For sensitivity solves, general (non-singleton) inequality rows with a very
//! large weight can be kept out of `H` and carried in the saddle block
//! instead, as rows `C_k x + y_k / d_k = r2_k`; this is the same system
//! without the `d_k ~ 1/mu` entries that ruin the conditioning of `H`.

use faer::Mat;

use super::{Hessian, QpError, QpProblem, Regularizer};
use crate::linalg::{self, Cholesky};
use crate::sparse::{CsrMatrix, LinearOperator};

enum HessianSolver {
    Dense(Cholesky),
    Woodbury {
        /// Diagonal `W = alpha^2 I + C_i^T D C_i + reg I`, inverted.
        w_inv: Vec<f64>,
        forward: std::sync::Arc<CsrMatrix>,
        /// Cholesky factor of `I + M W^{-1} M^T`.
        capacitance: Cholesky,
    },
}

struct EqualityBlock {
    ce: CsrMatrix,
    /// `H^{-1} C_e^T`, one column per equality row.
    h_inv_cet: Mat<f64>,
    schur: Cholesky,
}

pub(crate) struct ReducedKkt {
    n: usize,
    solver: HessianSolver,
    eq: Option<EqualityBlock>,
    /// Inequality rows carried in the saddle block, after the equality rows.
    moved: Vec<usize>,
}

/// Adds `C^T diag(d) C` to `h`.
fn add_weighted_gram(h: &mut Mat<f64>, c: &CsrMatrix, d: &[f64]) {
    for (k, &dk) in d.iter().enumerate() {
        let (cols, vals) = c.row(k);
        for (&a, &va) in cols.iter().zip(vals) {
            for (&b, &vb) in cols.iter().zip(vals) {
                h[(a, b)] += dk * va * vb;
            }
        }
    }
}

fn diagonal_weighted_gram(c: &CsrMatrix, d: &[f64], n: usize) -> Vec<f64> {
    let mut diag = vec![0.0; n];
    for (k, &dk) in d.iter().enumerate() {
        let (cols, vals) = c.row(k);
        for (&a, &va) in cols.iter().zip(vals) {
            diag[a] += dk * va * va;
        }
    }
    diag
}

impl ReducedKkt {
    /// Factors the reduced matrix for inequality weights `d` (`lambda_i / s`,
    /// empty when there are no inequality rows).
    pub(crate) fn factor(problem: &QpProblem, d: &[f64], reg: f64) -> Result<Self, QpError> {
        Self::factor_impl(problem, d, reg, None)
    }

    /// Like [`ReducedKkt::factor`], but general inequality rows with weight
    /// above `split * (1 + max_i Q_ii)` join the saddle block (see
    /// [`ReducedKkt::moved`]).
    pub(crate) fn factor_split(problem: &QpProblem, d: &[f64], reg: f64, split: f64) -> Result<Self, QpError> {
        Self::factor_impl(problem, d, reg, Some(split))
    }

    fn factor_impl(problem: &QpProblem, weights: &[f64], reg: f64, split: Option<f64>) -> Result<Self, QpError> {
        let n = problem.n();
        let ci = &problem.constraints.ineq;
        assert_eq!(weights.len(), ci.nrows());
        let moved: Vec<usize> = match split {
            Some(t) if ci.nrows() > 0 && !ci.has_singleton_rows() => {
                let q = problem.hessian.dense();
                let t = t * (1.0 + (0..n).map(|i| q[(i, i)]).fold(0.0, f64::max));
                (0..weights.len()).filter(|&k| weights[k] > t).collect()
            }
            _ => Vec::new(),
        };
        let mut d = weights.to_vec();
        moved.iter().for_each(|&k| d[k] = 0.0);
        let d = &d[..];

        let woodbury = match &problem.hessian {
            Hessian::Tikhonov(t) => {
                matches!(t.regularizer, Regularizer::Identity)
                    && t.forward.nrows() < n
                    && ci.has_singleton_rows()
            }
            Hessian::Dense(_) => false,
        };

        let solver = if woodbury {
            let Hessian::Tikhonov(t) = &problem.hessian else { unreachable!() };
            let diag = diagonal_weighted_gram(ci, d, n);
            let a2 = t.alpha * t.alpha;
            let w_inv: Vec<f64> = diag.iter().map(|&v| 1.0 / (a2 + v + reg)).collect();
            if w_inv.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                return Err(QpError::NotPositiveDefinite);
            }
            let m = t.forward.nrows();
            let mt = t.forward_transpose();
            let mut g = Mat::<f64>::identity(m, m);
            // Column j of M contributes w_inv[j] * m_j m_j^T.
            for j in 0..n {
                let (rows, vals) = mt.row(j);
                let wj = w_inv[j];
                for (a, (&ra, &va)) in rows.iter().zip(vals).enumerate() {
                    let s = wj * va;
                    for (&rb, &vb) in rows[..=a].iter().zip(&vals[..=a]) {
                        g[(ra, rb)] += s * vb;
                    }
                }
            }
            let capacitance = Cholesky::new(g.as_ref()).ok_or(QpError::NotPositiveDefinite)?;
            HessianSolver::Woodbury {
                w_inv,
                forward: t.forward.clone(),
                capacitance,
            }
        } else {
            let mut h = problem.hessian.dense().clone();
            add_weighted_gram(&mut h, ci, d);
            if reg != 0.0 {
                for i in 0..n {
                    h[(i, i)] += reg;
                }
            }
            HessianSolver::Dense(Cholesky::new(h.as_ref()).ok_or(QpError::NotPositiveDefinite)?)
        };

        let mut out = Self {
            n,
            solver,
            eq: None,
            moved: Vec::new(),
        };
        let me = problem.constraints.eq.nrows();
        let augmented;
        let ce = if moved.is_empty() {
            &problem.constraints.eq
        } else {
            let rows = (0..me)
                .map(|k| problem.constraints.eq.row(k))
                .chain(moved.iter().map(|&k| ci.row(k)))
                .map(|(idx, vals)| idx.iter().copied().zip(vals.iter().copied()).collect())
                .collect();
            augmented = CsrMatrix::from_rows(n, rows);
            &augmented
        };
        // Diagonal of the saddle block: zero for equality rows.
        let e: Vec<f64> = std::iter::repeat(0.0)
            .take(me)
            .chain(moved.iter().map(|&k| 1.0 / weights[k]))
            .collect();
        if ce.nrows() > 0 {
            let me = ce.nrows();
            let mut h_inv_cet = Mat::<f64>::zeros(n, me);
            for k in 0..me {
                let mut col = vec![0.0; n];
                let (idx, vals) = ce.row(k);
                for (&c, &v) in idx.iter().zip(vals) {
                    col[c] = v;
                }
                let y = out.solve_h(&col);
                h_inv_cet.col_as_slice_mut(k).copy_from_slice(&y);
            }
            let mut s = Mat::<f64>::zeros(me, me);
            for a in 0..me {
                let ca = ce.apply(h_inv_cet.col_as_slice(a));
                for b in 0..me {
                    s[(b, a)] = ca[b];
                }
            }
            let sym = Mat::from_fn(me, me, |i, j| 0.5 * (s[(i, j)] + s[(j, i)]) + if i == j { e[i] } else { 0.0 });
            let scale = (0..me).map(|i| sym[(i, i)].abs()).fold(0.0, f64::max);
            let schur = Cholesky::new(sym.as_ref())
                .filter(|_| scale > 0.0)
                .filter(|c| (0..me).all(|i| c.diag_sq(i) > 1e-13 * scale))
                .ok_or(QpError::RankDeficientEquality)?;
            out.eq = Some(EqualityBlock {
                ce: ce.clone(),
                h_inv_cet,
                schur,
            });
        }
        out.moved = moved;
        Ok(out)
    }

    pub(crate) fn n(&self) -> usize {
        self.n
    }

    /// Inequality rows moved into the saddle block, in the order of their
    /// `r2` entries after the equality rows. Row `k` stands for
    /// `C_k x + y_k / d_k = r2_k`, with its `C_k^T d_k (...)` term dropped
    /// from `r1`.
    pub(crate) fn moved(&self) -> &[usize] {
        &self.moved
    }

    /// `H^{-1} r`.
    pub(crate) fn solve_h(&self, r: &[f64]) -> Vec<f64> {
        match &self.solver {
            HessianSolver::Dense(c) => c.solve(r),
            HessianSolver::Woodbury {
                w_inv,
                forward,
                capacitance,
            } => {
                let t: Vec<f64> = r.iter().zip(w_inv).map(|(a, b)| a * b).collect();
                let u = forward.apply(&t);
                let v = capacitance.solve(&u);
                let mv = forward.apply_transpose(&v);
                t.iter()
                    .zip(mv.iter().zip(w_inv))
                    .map(|(ti, (mi, wi))| ti - wi * mi)
                    .collect()
            }
        }
    }

    /// Solves the reduced saddle system for `(x, y)`.
    pub(crate) fn solve(&self, r1: &[f64], r2: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let x0 = self.solve_h(r1);
        match &self.eq {
            None => (x0, Vec::new()),
            Some(eq) => {
                let cx0 = eq.ce.apply(&x0);
                let rhs: Vec<f64> = r2.iter().zip(&cx0).map(|(a, b)| a - b).collect();
                let y = eq.schur.solve(&rhs);
                let mut x = x0;
                for (k, &yk) in y.iter().enumerate() {
                    linalg::axpy(yk, eq.h_inv_cet.col_as_slice(k), &mut x);
                }
                (x, y)
            }
        }
    }

    /// `P r`, where `P` is the `x`-block of the inverse with `r2 = 0`.
    pub(crate) fn project_solve(&self, r: &[f64]) -> Vec<f64> {
        let me = self.eq.as_ref().map_or(0, |e| e.ce.nrows());
        self.solve(r, &vec![0.0; me]).0
    }
}
