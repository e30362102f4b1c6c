//! Inner reconstruction problem
//!
//! ```text
//! min 1/2 f^T Q f + b^T f   s.t.   C_e f = c_e,   C_i f >= c_i
//! ```
//!
//! solved directly (unconstrained and equality-constrained cases) or by a
//! Mehrotra predictor-corrector primal-dual interior-point method.

pub(crate) mod kkt;

use std::sync::{Arc, OnceLock};

use faer::Mat;
use thiserror::Error;

use crate::linalg::{self, mat_t_vec, mat_vec, norm2};
use crate::sparse::{CsrMatrix, LinearOperator};
pub(crate) use kkt::ReducedKkt;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QpError {
    #[error("quadratic term is not positive definite")]
    NotPositiveDefinite,
    #[error("equality constraints are rank deficient")]
    RankDeficientEquality,
    #[error("{0} (this solver handles a different constraint class)")]
    WrongConstraintClass(&'static str),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("interior-point method hit the iteration limit ({iterations}); last residual {last_residual:.3e}")]
    IterationLimit {
        iterations: usize,
        last_residual: f64,
        trace: Vec<IterationRecord>,
    },
    #[error("interior-point residuals diverged at iteration {iteration} (infeasible or unbounded problem)")]
    Diverged {
        iteration: usize,
        trace: Vec<IterationRecord>,
    },
    #[error("point is not interior: {0}")]
    NotInterior(String),
}

/// Linear constraints in general form.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearConstraints {
    pub eq: CsrMatrix,
    pub eq_rhs: Vec<f64>,
    pub ineq: CsrMatrix,
    pub ineq_rhs: Vec<f64>,
}

impl LinearConstraints {
    pub fn none(n: usize) -> Self {
        Self {
            eq: CsrMatrix::zeros(0, n),
            eq_rhs: Vec::new(),
            ineq: CsrMatrix::zeros(0, n),
            ineq_rhs: Vec::new(),
        }
    }

    pub fn m_eq(&self) -> usize {
        self.eq.nrows()
    }

    pub fn m_ineq(&self) -> usize {
        self.ineq.nrows()
    }

    fn validate(&self, n: usize) -> Result<(), QpError> {
        if self.eq.ncols() != n || self.ineq.ncols() != n {
            return Err(QpError::Dimension(format!("constraint matrices must have {n} columns")));
        }
        if self.eq_rhs.len() != self.eq.nrows() || self.ineq_rhs.len() != self.ineq.nrows() {
            return Err(QpError::Dimension("constraint right-hand sides".into()));
        }
        Ok(())
    }
}

/// The constraint regimes used for reconstruction.
#[derive(Clone, Debug, PartialEq)]
pub enum ConstraintSpec {
    Unconstrained,
    /// `sum(f) = c`.
    EqualitySum(f64),
    /// `f >= 0`.
    NonNegative,
    /// `lo <= f <= hi`.
    Box { lo: f64, hi: f64 },
    General(LinearConstraints),
}

impl ConstraintSpec {
    pub fn lower(&self, n: usize) -> LinearConstraints {
        match *self {
            ConstraintSpec::Unconstrained => LinearConstraints::none(n),
            ConstraintSpec::EqualitySum(c) => LinearConstraints {
                eq: CsrMatrix::from_rows(n, vec![(0..n).map(|j| (j, 1.0)).collect()]),
                eq_rhs: vec![c],
                ..LinearConstraints::none(n)
            },
            ConstraintSpec::NonNegative => LinearConstraints {
                ineq: CsrMatrix::identity(n),
                ineq_rhs: vec![0.0; n],
                ..LinearConstraints::none(n)
            },
            ConstraintSpec::Box { lo, hi } => {
                let rows = (0..n)
                    .map(|j| vec![(j, 1.0)])
                    .chain((0..n).map(|j| vec![(j, -1.0)]))
                    .collect();
                LinearConstraints {
                    ineq: CsrMatrix::from_rows(n, rows),
                    ineq_rhs: std::iter::repeat(lo).take(n).chain(std::iter::repeat(-hi).take(n)).collect(),
                    ..LinearConstraints::none(n)
                }
            }
            ConstraintSpec::General(ref c) => c.clone(),
        }
    }

    /// Short tag used in tables and configuration.
    pub fn tag(&self) -> &'static str {
        match self {
            ConstraintSpec::Unconstrained => "unconstrained",
            ConstraintSpec::EqualitySum(_) => "equality",
            ConstraintSpec::NonNegative => "nonnegative",
            ConstraintSpec::Box { .. } => "box",
            ConstraintSpec::General(_) => "general",
        }
    }
}

/// Regularization operator `L`.
#[derive(Clone, Debug)]
pub enum Regularizer {
    Identity,
    /// Dense `L` with `n` columns.
    Matrix(Arc<Mat<f64>>),
}

/// `Q = M^T M + alpha^2 L^T L` kept in factored form; the dense matrix is
/// formed on first use and cached.
#[derive(Debug)]
pub struct TikhonovHessian {
    forward: Arc<CsrMatrix>,
    alpha: f64,
    regularizer: Regularizer,
    dense: OnceLock<Mat<f64>>,
    forward_t: OnceLock<CsrMatrix>,
    reg_gram: OnceLock<Mat<f64>>,
}

impl TikhonovHessian {
    pub fn new(forward: Arc<CsrMatrix>, alpha: f64, regularizer: Regularizer) -> Self {
        if let Regularizer::Matrix(l) = &regularizer {
            assert_eq!(l.ncols(), forward.ncols(), "regularizer width must match the forward map");
        }
        Self {
            forward,
            alpha,
            regularizer,
            dense: OnceLock::new(),
            forward_t: OnceLock::new(),
            reg_gram: OnceLock::new(),
        }
    }

    pub fn forward(&self) -> &Arc<CsrMatrix> {
        &self.forward
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn regularizer(&self) -> &Regularizer {
        &self.regularizer
    }

    pub(crate) fn forward_transpose(&self) -> &CsrMatrix {
        self.forward_t.get_or_init(|| self.forward.transpose())
    }

    /// `L^T L` (identity for [`Regularizer::Identity`]).
    fn reg_gram(&self) -> &Mat<f64> {
        self.reg_gram.get_or_init(|| match &self.regularizer {
            Regularizer::Identity => Mat::identity(self.forward.ncols(), self.forward.ncols()),
            Regularizer::Matrix(l) => l.transpose() * l.as_ref(),
        })
    }

    /// `alpha^2 L^T L x`.
    pub fn apply_reg(&self, x: &[f64]) -> Vec<f64> {
        let a2 = self.alpha * self.alpha;
        match &self.regularizer {
            Regularizer::Identity => x.iter().map(|v| a2 * v).collect(),
            Regularizer::Matrix(l) => {
                let lx = mat_vec(Mat::as_ref(l), x);
                mat_t_vec(Mat::as_ref(l), &lx).into_iter().map(|v| a2 * v).collect()
            }
        }
    }

    pub fn dense(&self) -> &Mat<f64> {
        self.dense.get_or_init(|| {
            let mut q = self.forward.gram();
            let a2 = self.alpha * self.alpha;
            match &self.regularizer {
                Regularizer::Identity => {
                    for i in 0..q.nrows() {
                        q[(i, i)] += a2;
                    }
                }
                Regularizer::Matrix(_) => {
                    let g = self.reg_gram();
                    for j in 0..q.ncols() {
                        for i in 0..q.nrows() {
                            q[(i, j)] += a2 * g[(i, j)];
                        }
                    }
                }
            }
            q
        })
    }
}

/// The quadratic term of a [`QpProblem`].
#[derive(Clone, Debug)]
pub enum Hessian {
    Dense(Arc<Mat<f64>>),
    Tikhonov(Arc<TikhonovHessian>),
}

impl Hessian {
    pub fn n(&self) -> usize {
        match self {
            Hessian::Dense(q) => q.nrows(),
            Hessian::Tikhonov(t) => t.forward.ncols(),
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        match self {
            Hessian::Dense(q) => mat_vec(Mat::as_ref(q), x),
            Hessian::Tikhonov(t) => {
                let mut y = t.apply_reg(x);
                let mx = t.forward.apply(x);
                t.forward.apply_transpose_add(&mx, &mut y);
                y
            }
        }
    }

    pub fn dense(&self) -> &Mat<f64> {
        match self {
            Hessian::Dense(q) => q,
            Hessian::Tikhonov(t) => t.dense(),
        }
    }
}

/// A strictly convex quadratic program.
#[derive(Clone, Debug)]
pub struct QpProblem {
    pub hessian: Hessian,
    pub linear: Vec<f64>,
    pub constraints: LinearConstraints,
    /// Primal starting point for the interior-point method.
    pub start: Vec<f64>,
}

impl QpProblem {
    pub fn new(hessian: Hessian, linear: Vec<f64>, constraints: LinearConstraints) -> Result<Self, QpError> {
        let n = hessian.n();
        if linear.len() != n {
            return Err(QpError::Dimension(format!("linear term has {} entries, expected {n}", linear.len())));
        }
        constraints.validate(n)?;
        Ok(Self {
            hessian,
            linear,
            constraints,
            start: vec![0.0; n],
        })
    }

    /// Dense `Q` and `b`.
    pub fn dense(q: Mat<f64>, b: Vec<f64>, constraints: LinearConstraints) -> Result<Self, QpError> {
        if q.nrows() != q.ncols() {
            return Err(QpError::Dimension("Q must be square".into()));
        }
        Self::new(Hessian::Dense(Arc::new(q)), b, constraints)
    }

    /// MAP problem `Q = M^T M + alpha^2 L^T L`, `b = -M^T d - alpha^2 L^T L mu`.
    /// The prior mean (zero when `None`) is also the interior-point start.
    pub fn map_estimate(
        hessian: Arc<TikhonovHessian>,
        data: &[f64],
        prior_mean: Option<&[f64]>,
        constraints: LinearConstraints,
    ) -> Result<Self, QpError> {
        let n = hessian.forward.ncols();
        if data.len() != hessian.forward.nrows() {
            return Err(QpError::Dimension(format!(
                "data has {} entries, forward map has {} rows",
                data.len(),
                hessian.forward.nrows()
            )));
        }
        let mut b: Vec<f64> = hessian.forward.apply_transpose(data).into_iter().map(|v| -v).collect();
        let mut start = vec![0.0; n];
        if let Some(mu) = prior_mean {
            if mu.len() != n {
                return Err(QpError::Dimension("prior mean".into()));
            }
            linalg::axpy(-1.0, &hessian.apply_reg(mu), &mut b);
            start.copy_from_slice(mu);
        }
        let mut p = Self::new(Hessian::Tikhonov(hessian), b, constraints)?;
        p.start = start;
        Ok(p)
    }

    pub fn with_start(mut self, start: Vec<f64>) -> Self {
        assert_eq!(start.len(), self.n());
        self.start = start;
        self
    }

    pub fn n(&self) -> usize {
        self.hessian.n()
    }

    pub fn objective(&self, f: &[f64]) -> f64 {
        0.5 * linalg::dot(f, &self.hessian.apply(f)) + linalg::dot(&self.linear, f)
    }
}

/// Primal-dual point `(f, lambda_e, s, lambda_i)`.
#[derive(Clone, Debug, PartialEq)]
pub struct KktPoint {
    pub f: Vec<f64>,
    pub lambda_eq: Vec<f64>,
    pub slack: Vec<f64>,
    pub lambda_ineq: Vec<f64>,
}

impl KktPoint {
    /// Builds a point whose slacks and inequality multipliers are strictly
    /// positive, as interior-point iterates and sensitivity linearizations
    /// require.
    pub fn interior(f: Vec<f64>, lambda_eq: Vec<f64>, slack: Vec<f64>, lambda_ineq: Vec<f64>) -> Result<Self, QpError> {
        let p = Self {
            f,
            lambda_eq,
            slack,
            lambda_ineq,
        };
        p.check_interior()?;
        Ok(p)
    }

    pub fn check_interior(&self) -> Result<(), QpError> {
        if self.slack.len() != self.lambda_ineq.len() {
            return Err(QpError::Dimension("slack and multiplier lengths differ".into()));
        }
        if let Some(k) = self.slack.iter().position(|&s| !(s > 0.0)) {
            return Err(QpError::NotInterior(format!("slack s[{k}] = {} must be > 0", self.slack[k])));
        }
        if let Some(k) = self.lambda_ineq.iter().position(|&l| !(l > 0.0)) {
            return Err(QpError::NotInterior(format!(
                "multiplier lambda_i[{k}] = {} must be > 0",
                self.lambda_ineq[k]
            )));
        }
        Ok(())
    }

    /// `s^T lambda_i / m_i` (zero without inequality rows).
    pub fn comp_measure(&self) -> f64 {
        if self.slack.is_empty() {
            0.0
        } else {
            linalg::dot(&self.slack, &self.lambda_ineq) / self.slack.len() as f64
        }
    }
}

/// Blocks of the KKT map at `delta = 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct KktResiduals {
    /// `Q f + b - C_e^T lambda_e - C_i^T lambda_i`.
    pub r_d: Vec<f64>,
    /// `C_e f - c_e`.
    pub r_e: Vec<f64>,
    /// `C_i f - c_i - s`.
    pub r_i: Vec<f64>,
    /// `s^T lambda_i / m_i`.
    pub comp_measure: f64,
}

impl KktResiduals {
    /// `(||r_d||, ||r_e||, ||r_i||)`.
    pub fn norms(&self) -> (f64, f64, f64) {
        (norm2(&self.r_d), norm2(&self.r_e), norm2(&self.r_i))
    }

    pub fn max_norm(&self) -> f64 {
        let (a, b, c) = self.norms();
        a.max(b).max(c).max(self.comp_measure)
    }
}

/// Evaluates the KKT residual blocks. Slacks and multipliers may sit on the
/// boundary (an exact KKT point has zeros there) but must not be negative.
pub fn kkt_residuals(problem: &QpProblem, point: &KktPoint) -> Result<KktResiduals, QpError> {
    let c = &problem.constraints;
    let n = problem.n();
    if point.f.len() != n
        || point.lambda_eq.len() != c.m_eq()
        || point.slack.len() != c.m_ineq()
        || point.lambda_ineq.len() != c.m_ineq()
    {
        return Err(QpError::Dimension("KKT point does not match the problem".into()));
    }
    if point.slack.iter().chain(&point.lambda_ineq).any(|v| !(*v >= 0.0)) {
        return Err(QpError::NotInterior("negative slack or multiplier".into()));
    }
    let mut r_d = problem.hessian.apply(&point.f);
    linalg::axpy(1.0, &problem.linear, &mut r_d);
    let ce_t_l = c.eq.apply_transpose(&point.lambda_eq);
    let ci_t_l = c.ineq.apply_transpose(&point.lambda_ineq);
    for i in 0..n {
        r_d[i] -= ce_t_l[i] + ci_t_l[i];
    }
    let r_e = linalg::sub(&c.eq.apply(&point.f), &c.eq_rhs);
    let cif = c.ineq.apply(&point.f);
    let r_i = (0..c.m_ineq()).map(|k| cif[k] - c.ineq_rhs[k] - point.slack[k]).collect();
    Ok(KktResiduals {
        r_d,
        r_e,
        r_i,
        comp_measure: point.comp_measure(),
    })
}

/// Result of an inner solve.
#[derive(Clone, Debug)]
pub struct QpSolution {
    pub point: KktPoint,
    pub iterations: usize,
    pub residuals: KktResiduals,
}

impl QpSolution {
    pub fn f_hat(&self) -> &[f64] {
        &self.point.f
    }

    pub fn comp_measure(&self) -> f64 {
        self.residuals.comp_measure
    }
}

fn direct_solution(problem: &QpProblem, f: Vec<f64>, lambda_eq: Vec<f64>) -> Result<QpSolution, QpError> {
    let point = KktPoint {
        f,
        lambda_eq,
        slack: Vec::new(),
        lambda_ineq: Vec::new(),
    };
    let residuals = kkt_residuals(problem, &point)?;
    Ok(QpSolution {
        point,
        iterations: 1,
        residuals,
    })
}

/// Minimizer of an inequality-free problem without equality rows, by a
/// Cholesky (or Woodbury-Cholesky) factorization of `Q`.
pub fn solve_unconstrained(problem: &QpProblem) -> Result<QpSolution, QpError> {
    if problem.constraints.m_eq() + problem.constraints.m_ineq() > 0 {
        return Err(QpError::WrongConstraintClass("solve_unconstrained needs a problem without constraints"));
    }
    let kkt = ReducedKkt::factor(problem, &[], 0.0)?;
    let rhs: Vec<f64> = problem.linear.iter().map(|v| -v).collect();
    direct_solution(problem, kkt.solve_h(&rhs), Vec::new())
}

/// Equality-constrained minimizer, solving
/// `[[Q, -C_e^T], [C_e, 0]] [f; lambda_e] = [-b; c_e]`.
///
/// Uses a Schur complement on the Cholesky factor of `Q`; when `Q` is only
/// positive definite on the null space of `C_e`, falls back to an LU
/// factorization of the full saddle matrix.
pub fn solve_equality(problem: &QpProblem) -> Result<QpSolution, QpError> {
    let c = &problem.constraints;
    if c.m_ineq() > 0 {
        return Err(QpError::WrongConstraintClass("solve_equality needs a problem without inequality rows"));
    }
    let rhs: Vec<f64> = problem.linear.iter().map(|v| -v).collect();
    match ReducedKkt::factor(problem, &[], 0.0) {
        Ok(kkt) => {
            let (f, l) = kkt.solve(&rhs, &c.eq_rhs);
            direct_solution(problem, f, l)
        }
        Err(QpError::NotPositiveDefinite) => solve_saddle_lu(problem, &rhs),
        Err(e) => Err(e),
    }
}

fn solve_saddle_lu(problem: &QpProblem, rhs: &[f64]) -> Result<QpSolution, QpError> {
    let c = &problem.constraints;
    let (n, me) = (problem.n(), c.m_eq());
    let q = problem.hessian.dense();
    let ce = c.eq.to_dense();
    let k = Mat::from_fn(n + me, n + me, |i, j| match (i < n, j < n) {
        (true, true) => q[(i, j)],
        (true, false) => -ce[(j - n, i)],
        (false, true) => ce[(i - n, j)],
        (false, false) => 0.0,
    });
    let r: Vec<f64> = rhs.iter().chain(&c.eq_rhs).copied().collect();
    let lu = k.full_piv_lu();
    let x = {
        use faer::linalg::solvers::Solve;
        lu.solve(linalg::col_vec(&r))
    };
    let x = x.col_as_slice(0).to_vec();
    let kx = mat_vec(k.as_ref(), &x);
    let res = norm2(&linalg::sub(&kx, &r));
    if x.iter().any(|v| !v.is_finite()) || res > 1e-8 * (1.0 + norm2(&r)) {
        return Err(QpError::RankDeficientEquality);
    }
    direct_solution(problem, x[..n].to_vec(), x[n..].to_vec())
}

/// Relative weight `lambda_k / s_k` above which a general inequality row is
/// solved in saddle form instead of through the reduced Hessian.
pub(crate) const SPLIT_WEIGHT: f64 = 1e6;

/// Interior-point settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IpOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Fraction-to-boundary factor.
    pub tau: f64,
    /// Static diagonal regularization of the reduced Newton matrix.
    pub kkt_reg: f64,
}

impl Default for IpOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 100,
            tau: 0.995,
            kkt_reg: 1e-10,
        }
    }
}

/// One interior-point iteration, for diagnostics.
#[derive(Clone, Debug, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub residual: f64,
    pub comp_measure: f64,
    pub sigma: f64,
    pub step: f64,
}

/// Largest `a` in `(0, 1]` with `x + a dx >= 0`.
fn max_step(x: &[f64], dx: &[f64]) -> f64 {
    x.iter()
        .zip(dx)
        .filter(|(_, d)| **d < 0.0)
        .map(|(xi, di)| -xi / di)
        .fold(1.0, f64::min)
}

/// Mehrotra predictor-corrector interior-point method.
///
/// Starting point: `f` from `problem.start`, `s = max(C_i f - c_i, 1)`,
/// `lambda_i = 1`, `lambda_e = 0`. Each iteration factors the reduced Newton
/// matrix once and solves it for the affine (`delta = 0`) and the corrected
/// direction; the centering parameter is `delta = (mu_aff / mu)^3` with
/// `mu = s^T lambda_i / m_i`. Converged when all residual norms, `mu` and the
/// largest single product `s_k lambda_k` are below `tol (1 + ||b||)`.
pub fn solve_interior_point(problem: &QpProblem, opts: &IpOptions) -> Result<QpSolution, QpError> {
    let c = &problem.constraints;
    let (n, me, mi) = (problem.n(), c.m_eq(), c.m_ineq());
    if mi == 0 {
        return Err(QpError::WrongConstraintClass("solve_interior_point needs inequality rows"));
    }
    let target = opts.tol * (1.0 + norm2(&problem.linear));

    let mut f = problem.start.clone();
    let mut y = vec![0.0; me];
    let cif = c.ineq.apply(&f);
    let mut s: Vec<f64> = (0..mi).map(|k| (cif[k] - c.ineq_rhs[k]).max(1.0)).collect();
    let mut z = vec![1.0; mi];
    let mut trace = Vec::new();
    let mut first_residual = None;

    for iter in 0..=opts.max_iter {
        let point = KktPoint {
            f,
            lambda_eq: y,
            slack: s,
            lambda_ineq: z,
        };
        let res = kkt_residuals(problem, &point)?;
        let size = res.max_norm();
        let first = *first_residual.get_or_insert(size);
        let worst_pair = (0..mi).map(|k| point.slack[k] * point.lambda_ineq[k]).fold(0.0, f64::max);
        if size <= target && worst_pair <= target {
            return Ok(QpSolution {
                point,
                iterations: iter,
                residuals: res,
            });
        }
        if !size.is_finite() || size > 1e12 * (1.0 + first) {
            return Err(QpError::Diverged { iteration: iter, trace });
        }
        if iter == opts.max_iter {
            return Err(QpError::IterationLimit {
                iterations: iter,
                last_residual: size,
                trace,
            });
        }
        KktPoint {
            f,
            lambda_eq: y,
            slack: s,
            lambda_ineq: z,
        } = point;
        let mu = res.comp_measure;

        let d: Vec<f64> = z.iter().zip(&s).map(|(zi, si)| zi / si).collect();
        let kkt = ReducedKkt::factor_split(problem, &d, opts.kkt_reg, SPLIT_WEIGHT)
            .or_else(|_| ReducedKkt::factor(problem, &d, opts.kkt_reg))?;
        let mut in_saddle = vec![false; mi];
        kkt.moved().iter().for_each(|&k| in_saddle[k] = true);

        // Direction for complementarity right-hand side r_c.
        let direction = |rc: &[f64]| {
            let t: Vec<f64> = (0..mi).map(|k| rc[k] / s[k] + d[k] * res.r_i[k]).collect();
            let t_h: Vec<f64> = (0..mi).map(|k| if in_saddle[k] { 0.0 } else { t[k] }).collect();
            let ci_t = c.ineq.apply_transpose(&t_h);
            let r1: Vec<f64> = (0..n).map(|i| -res.r_d[i] - ci_t[i]).collect();
            let r2: Vec<f64> = res
                .r_e
                .iter()
                .map(|v| -v)
                .chain(kkt.moved().iter().map(|&k| -t[k] / d[k]))
                .collect();
            let (df, mut dy) = kkt.solve(&r1, &r2);
            let cdf = c.ineq.apply(&df);
            let ds: Vec<f64> = (0..mi).map(|k| cdf[k] + res.r_i[k]).collect();
            let mut dz: Vec<f64> = (0..mi).map(|k| (-rc[k] - z[k] * ds[k]) / s[k]).collect();
            // Saddle rows carry dz directly, without the division by a tiny s.
            for (j, &k) in kkt.moved().iter().enumerate() {
                dz[k] = dy[me + j];
            }
            dy.truncate(me);
            (df, dy, ds, dz)
        };

        let rc_aff: Vec<f64> = (0..mi).map(|k| s[k] * z[k]).collect();
        let (_, _, ds_a, dz_a) = direction(&rc_aff);
        let a_aff = max_step(&s, &ds_a).min(max_step(&z, &dz_a));
        let mu_aff = (0..mi)
            .map(|k| (s[k] + a_aff * ds_a[k]) * (z[k] + a_aff * dz_a[k]))
            .sum::<f64>()
            / mi as f64;
        let sigma = (mu_aff / mu).powi(3).min(1.0);

        let rc: Vec<f64> = (0..mi)
            .map(|k| s[k] * z[k] + ds_a[k] * dz_a[k] - sigma * mu)
            .collect();
        let (df, dy, ds, dz) = direction(&rc);
        let step = (opts.tau * max_step(&s, &ds).min(max_step(&z, &dz))).min(1.0);

        linalg::axpy(step, &df, &mut f);
        linalg::axpy(step, &dy, &mut y);
        linalg::axpy(step, &ds, &mut s);
        linalg::axpy(step, &dz, &mut z);
        trace.push(IterationRecord {
            iteration: iter,
            residual: size,
            comp_measure: mu,
            sigma,
            step,
        });
    }
    unreachable!("loop returns on its last iteration")
}

/// Dispatches on the constraint class: direct solves without inequality rows,
/// the interior-point method otherwise.
pub fn solve(problem: &QpProblem, opts: &IpOptions) -> Result<QpSolution, QpError> {
    let c = &problem.constraints;
    if c.m_ineq() > 0 {
        solve_interior_point(problem, opts)
    } else if c.m_eq() > 0 {
        solve_equality(problem)
    } else {
        solve_unconstrained(problem)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn diag_problem(b: Vec<f64>, spec: ConstraintSpec) -> QpProblem {
        let n = b.len();
        QpProblem::dense(Mat::identity(n, n), b, spec.lower(n)).unwrap()
    }

    #[test]
    fn box_lowering() {
        let c = ConstraintSpec::Box { lo: 0.0, hi: 2.0 }.lower(2);
        assert_eq!(c.ineq.to_dense(), Mat::from_fn(4, 2, |i, j| match (i, j) {
            (0, 0) | (1, 1) => 1.0,
            (2, 0) | (3, 1) => -1.0,
            _ => 0.0,
        }));
        assert_eq!(c.ineq_rhs, vec![0.0, 0.0, -2.0, -2.0]);
    }

    #[test]
    fn separable_nonnegative() {
        let p = diag_problem(vec![1.0, -2.0], ConstraintSpec::NonNegative);
        let sol = solve_interior_point(&p, &IpOptions::default()).unwrap();
        assert!((sol.point.f[0]).abs() < 1e-7);
        assert!((sol.point.f[1] - 2.0).abs() < 1e-7);
        assert!((sol.point.lambda_ineq[0] - 1.0).abs() < 1e-7);
    }

    #[test]
    fn trivial_point_is_not_interior() {
        let p = KktPoint::interior(vec![0.0; 2], vec![], vec![0.0, 0.0], vec![1.0, 1.0]);
        assert!(matches!(p, Err(QpError::NotInterior(_))));
    }
}
