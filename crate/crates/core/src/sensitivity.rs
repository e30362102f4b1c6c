//! Derivatives of the reconstruction with respect to design parameters by
//! implicit differentiation of the KKT conditions.
//!
//! Linearizing the KKT map at a solution and eliminating the slack and
//! inequality-multiplier blocks gives
//!
//! ```text
//! J v = -P G v,     J^T w = -G^T P w,
//! ```
//!
//! where `G = d(Q f + b)/dp` and `P` is the primal block of the inverse of the
//! reduced saddle matrix `[[Q + C_i^T (Lambda_i / S) C_i, -C_e^T], [C_e, 0]]`.
//! `P` is symmetric, so one factorization serves both products.

use faer::Mat;
use thiserror::Error;

use crate::linalg;
use crate::qp::{QpError, QpProblem, QpSolution, ReducedKkt, SPLIT_WEIGHT};
use crate::sparse::{CsrMatrix, LinearOperator};
use crate::tomo::{ForwardOperatorA, ForwardOperatorB};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SensitivityError {
    #[error("KKT matrix is singular at this point (min s_i * lambda_i = {min_product:.3e})")]
    Singular { min_product: f64 },
    #[error("{0}")]
    Qp(#[from] QpError),
    #[error("vector has {got} entries, expected {expected}")]
    Dimension { expected: usize, got: usize },
}

/// The right-hand-side map `v -> d(Q f + b)/dp v` at a fixed reconstruction.
pub trait DesignRhs {
    /// Number of unknowns.
    fn n(&self) -> usize;
    /// Number of design parameters.
    fn num_params(&self) -> usize;
    /// `G v`.
    fn apply(&self, v: &[f64]) -> Vec<f64>;
    /// `G^T w`.
    fn apply_transpose(&self, w: &[f64]) -> Vec<f64>;

    /// Dense `n x l` matrix, one column per parameter.
    fn to_dense(&self) -> Mat<f64> {
        let l = self.num_params();
        let mut g = Mat::zeros(self.n(), l);
        let mut e = vec![0.0; l];
        for k in 0..l {
            e[k] = 1.0;
            g.col_as_slice_mut(k).copy_from_slice(&self.apply(&e));
            e[k] = 0.0;
        }
        g
    }
}

/// Explicit `G`.
pub struct DenseRhs(pub Mat<f64>);

impl DesignRhs for DenseRhs {
    fn n(&self) -> usize {
        self.0.nrows()
    }

    fn num_params(&self) -> usize {
        self.0.ncols()
    }

    fn apply(&self, v: &[f64]) -> Vec<f64> {
        linalg::mat_vec(self.0.as_ref(), v)
    }

    fn apply_transpose(&self, w: &[f64]) -> Vec<f64> {
        linalg::mat_t_vec(self.0.as_ref(), w)
    }
}

/// Strict-complementarity diagnostics of the linearization point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Degeneracy {
    /// `min_k (s_k + lambda_k)`.
    pub min_sum: f64,
    /// `min_k s_k lambda_k`.
    pub min_product: f64,
}

/// Margin below which a constraint counts as weakly active: `s + lambda`
/// within this factor of `sqrt(mu)`.
const DEGENERACY_FACTOR: f64 = 100.0;

/// Jacobian of the reconstruction at a solved KKT point.
pub struct SensitivityOperator<R> {
    kkt: ReducedKkt,
    rhs: R,
    degeneracy: Option<Degeneracy>,
}

impl<R: DesignRhs> SensitivityOperator<R> {
    /// Factors the linearized KKT system at `solution`. Inequality slacks and
    /// multipliers must be strictly positive.
    pub fn build(problem: &QpProblem, solution: &QpSolution, rhs: R) -> Result<Self, SensitivityError> {
        let point = &solution.point;
        let (n, mi) = (problem.n(), problem.constraints.m_ineq());
        if rhs.n() != n {
            return Err(SensitivityError::Dimension {
                expected: n,
                got: rhs.n(),
            });
        }
        if mi > 0 {
            point.check_interior()?;
        }
        let min_product = point
            .slack
            .iter()
            .zip(&point.lambda_ineq)
            .map(|(s, l)| s * l)
            .fold(f64::INFINITY, f64::min);
        let min_sum = point
            .slack
            .iter()
            .zip(&point.lambda_ineq)
            .map(|(s, l)| s + l)
            .fold(f64::INFINITY, f64::min);
        let degeneracy = (mi > 0 && min_sum <= DEGENERACY_FACTOR * point.comp_measure().sqrt())
            .then_some(Degeneracy { min_sum, min_product });
        if let Some(d) = degeneracy {
            log::debug!(
                "sensitivity at a nearly degenerate point: min(s + lambda_i) = {:.3e}, min(s * lambda_i) = {:.3e}",
                d.min_sum,
                d.min_product
            );
        }
        let d: Vec<f64> = point
            .lambda_ineq
            .iter()
            .zip(&point.slack)
            .map(|(l, s)| l / s)
            .collect();
        let kkt = ReducedKkt::factor_split(problem, &d, 0.0, SPLIT_WEIGHT)
            .or_else(|_| ReducedKkt::factor(problem, &d, 0.0))
            .or_else(|_| ReducedKkt::factor(problem, &d, 1e-10))
            .map_err(|e| match e {
                QpError::NotPositiveDefinite | QpError::RankDeficientEquality => SensitivityError::Singular {
                    min_product: if mi > 0 { min_product } else { 0.0 },
                },
                other => other.into(),
            })?;
        Ok(Self { kkt, rhs, degeneracy })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.kkt.n(), self.rhs.num_params())
    }

    pub fn rhs(&self) -> &R {
        &self.rhs
    }

    /// Set when the point is close to violating strict complementarity.
    pub fn degeneracy(&self) -> Option<Degeneracy> {
        self.degeneracy
    }

    /// `J v`.
    pub fn jvp(&self, v: &[f64]) -> Result<Vec<f64>, SensitivityError> {
        let l = self.rhs.num_params();
        if v.len() != l {
            return Err(SensitivityError::Dimension {
                expected: l,
                got: v.len(),
            });
        }
        let g = self.rhs.apply(v);
        Ok(self.kkt.project_solve(&g).into_iter().map(|x| -x).collect())
    }

    /// `J^T w`.
    pub fn vjp(&self, w: &[f64]) -> Result<Vec<f64>, SensitivityError> {
        let n = self.kkt.n();
        if w.len() != n {
            return Err(SensitivityError::Dimension {
                expected: n,
                got: w.len(),
            });
        }
        let pw = self.kkt.project_solve(w);
        Ok(self.rhs.apply_transpose(&pw).into_iter().map(|x| -x).collect())
    }
}

pub fn build_sensitivity<R: DesignRhs>(
    problem: &QpProblem,
    solution: &QpSolution,
    rhs: R,
) -> Result<SensitivityOperator<R>, SensitivityError> {
    SensitivityOperator::build(problem, solution, rhs)
}

/// Problem-A right-hand side: column `k` is `2 A_k^T (p_k A_k f - d_k(p))`
/// for `k` in the support, zero otherwise.
pub struct ProblemARhs<'a> {
    op: &'a ForwardOperatorA,
    /// `p_k A_k f - d_k(p)` per support entry.
    residuals: Vec<Vec<f64>>,
}

impl<'a> ProblemARhs<'a> {
    /// `data` is the assembled `d(p)`, stacked over the support like `M(p)`.
    pub fn new(op: &'a ForwardOperatorA, f_hat: &[f64], data: &[f64]) -> Self {
        let r = linalg::sub(&op.matrix().apply(f_hat), data);
        let nr = op.n_rays();
        let residuals = r.chunks(nr).map(<[f64]>::to_vec).collect();
        Self { op, residuals }
    }
}

impl DesignRhs for ProblemARhs<'_> {
    fn n(&self) -> usize {
        self.op.matrix().ncols()
    }

    fn num_params(&self) -> usize {
        self.op.weights().len()
    }

    fn apply(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n()];
        for (idx, &k) in self.op.support().iter().enumerate() {
            if v[k] != 0.0 {
                let r: Vec<f64> = self.residuals[idx].iter().map(|x| 2.0 * v[k] * x).collect();
                self.op.bank().block(k).apply_transpose_add(&r, &mut out);
            }
        }
        out
    }

    fn apply_transpose(&self, w: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.num_params()];
        for (idx, &k) in self.op.support().iter().enumerate() {
            out[k] = 2.0 * linalg::dot(&self.op.bank().block(k).apply(w), &self.residuals[idx]);
        }
        out
    }
}

/// Problem-B right-hand side at angles `p`, for data re-simulated at every
/// design as `d_k = A_k f_true + c(p) z_k` with `c(p) = rel ||M(p) f_true|| / sqrt(m)`.
///
/// Column `k` (per degree) is
/// `A'_k^T (A_k f - d_k) + A_k^T A'_k (f - f_true) - (dc/dp_k) M^T z`.
pub struct ProblemBRhs<'a> {
    op: &'a ForwardOperatorB,
    derivs: Vec<CsrMatrix>,
    /// `A_k f - d_k`.
    residuals: Vec<Vec<f64>>,
    /// `A'_k (f - f_true)`.
    deriv_err: Vec<Vec<f64>>,
    /// `M^T z`.
    noise_back: Vec<f64>,
    dc: Vec<f64>,
}

impl<'a> ProblemBRhs<'a> {
    /// `derivs[k]` is `T dR/dtheta` at angle `k`, per degree.
    pub fn new(
        op: &'a ForwardOperatorB,
        derivs: Vec<CsrMatrix>,
        f_hat: &[f64],
        f_true: &[f64],
        data: &[f64],
        noise_dir: &[f64],
        relative_level: f64,
    ) -> Self {
        let l = op.angles().len();
        let nr = op.n_rays();
        let m = (l * nr) as f64;
        let err = linalg::sub(f_hat, f_true);
        let mut residuals = Vec::with_capacity(l);
        let mut deriv_err = Vec::with_capacity(l);
        let mut clean = Vec::with_capacity(l);
        let mut clean_d = Vec::with_capacity(l);
        for k in 0..l {
            let a = op.block(k);
            let af = a.apply(f_hat);
            residuals.push(linalg::sub(&af, &data[k * nr..(k + 1) * nr]));
            deriv_err.push(derivs[k].apply(&err));
            clean.push(a.apply(f_true));
            clean_d.push(derivs[k].apply(f_true));
        }
        let norm_clean = clean.iter().map(|c| linalg::dot(c, c)).sum::<f64>().sqrt();
        let dc = (0..l)
            .map(|k| {
                if relative_level == 0.0 || norm_clean == 0.0 {
                    0.0
                } else {
                    relative_level / m.sqrt() * linalg::dot(&clean[k], &clean_d[k]) / norm_clean
                }
            })
            .collect();
        let noise_back = if relative_level == 0.0 {
            vec![0.0; f_hat.len()]
        } else {
            op.matrix().apply_transpose(noise_dir)
        };
        Self {
            op,
            derivs,
            residuals,
            deriv_err,
            noise_back,
            dc,
        }
    }
}

impl DesignRhs for ProblemBRhs<'_> {
    fn n(&self) -> usize {
        self.op.matrix().ncols()
    }

    fn num_params(&self) -> usize {
        self.op.angles().len()
    }

    fn apply(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n()];
        for (k, &vk) in v.iter().enumerate() {
            if vk == 0.0 {
                continue;
            }
            let r: Vec<f64> = self.residuals[k].iter().map(|x| vk * x).collect();
            self.derivs[k].apply_transpose_add(&r, &mut out);
            let e: Vec<f64> = self.deriv_err[k].iter().map(|x| vk * x).collect();
            self.op.block(k).apply_transpose_add(&e, &mut out);
            linalg::axpy(-vk * self.dc[k], &self.noise_back, &mut out);
        }
        out
    }

    fn apply_transpose(&self, w: &[f64]) -> Vec<f64> {
        let nz = linalg::dot(&self.noise_back, w);
        (0..self.num_params())
            .map(|k| {
                linalg::dot(&self.derivs[k].apply(w), &self.residuals[k])
                    + linalg::dot(&self.op.block(k).apply(w), &self.deriv_err[k])
                    - self.dc[k] * nz
            })
            .collect()
    }
}
