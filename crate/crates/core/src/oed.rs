//! Outer design loop: empirical Bayes-risk objectives over a training set,
//! the two-phase sparsified weight design (Problem A), continuous angle
//! placement (Problem B), landscape scans and parameter sweeps.

use std::sync::Arc;

use thiserror::Error;

use crate::bayesrisk::{self, RiskError};
use crate::datagen::{noise_direction, DataError, NoiseSpec, TrainingSet};
use crate::linalg::{self, norm2};
use crate::parallel::Workers;
use crate::qp::{self, ConstraintSpec, IpOptions, LinearConstraints, QpError, QpProblem, Regularizer, TikhonovHessian};
use crate::sensitivity::{ProblemARhs, ProblemBRhs, SensitivityError, SensitivityOperator};
use crate::sparse::{CsrMatrix, LinearOperator};
use crate::tomo::{self, DerivativeMode, ForwardOperatorA, ForwardOperatorB, Grid, ProjectionBank, TomoError};

#[derive(Debug, Error)]
pub enum OedError {
    #[error(transparent)]
    Tomo(#[from] TomoError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Risk(#[from] RiskError),
    #[error("inner solve failed on sample {sample}: {source}")]
    Inner {
        sample: usize,
        #[source]
        source: QpError,
    },
    #[error("sensitivity failed on sample {sample}: {source}")]
    Sensitivity {
        sample: usize,
        #[source]
        source: SensitivityError,
    },
    #[error("design has empty support; the forward operator would have no rows")]
    EmptySupport,
    #[error("phase 1 drove every weight to zero (beta = {beta} is too large)")]
    OverRegularized { beta: f64 },
    #[error("infeasible design: {0}")]
    Infeasible(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

/// Default inner interior-point tolerance for design optimization.
pub const INNER_TOL: f64 = 1e-12;

/// Outer-loop settings.
#[derive(Clone, Debug)]
pub struct OedConfig {
    /// Regularization parameter `alpha = gamma / sigma`.
    pub alpha: f64,
    /// Noise scale of the Bayes risk.
    pub sigma: f64,
    /// Sparsity weight of Problem A.
    pub beta: f64,
    pub constraint: ConstraintSpec,
    /// Constant prior mean (also the interior-point start).
    pub prior_mean: f64,
    /// Inner solver settings. Gradients are taken at the relaxed interior
    /// point, whose error for a constraint with multiplier `lambda` scales
    /// like `mu / lambda^2`, so the default tolerance is tighter than the
    /// solver's own.
    pub inner: IpOptions,
    /// Projected-gradient infinity norm at which the outer loop stops.
    pub outer_tol: f64,
    pub max_outer_iter: usize,
    pub noise: NoiseSpec,
    pub workers: usize,
    /// Rays per projection; the grid width when `None`.
    pub n_rays: Option<usize>,
    /// Evaluation of `dR/dtheta` for Problem B.
    pub derivative: DerivativeMode,
    /// Phase-1 weights above this fraction of the largest survive.
    pub support_fraction: f64,
    /// Phase-2 iteration cap (Problem A).
    pub max_phase2_iter: usize,
}

impl Default for OedConfig {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            sigma: 1.0,
            beta: 0.0,
            constraint: ConstraintSpec::Unconstrained,
            prior_mean: 0.0,
            inner: IpOptions {
                tol: INNER_TOL,
                ..IpOptions::default()
            },
            outer_tol: 1e-6,
            max_outer_iter: 50,
            noise: NoiseSpec {
                relative_level: 0.001,
                seed: 0,
            },
            workers: 1,
            n_rays: None,
            derivative: DerivativeMode::Analytic,
            support_fraction: 1e-3,
            max_phase2_iter: 20,
        }
    }
}

impl OedConfig {
    /// Prior precision scale `gamma = alpha sigma`.
    pub fn gamma(&self) -> f64 {
        self.alpha * self.sigma
    }

    pub fn validate(&self) -> Result<(), OedError> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(OedError::InvalidConfig(format!("alpha must be positive, got {}", self.alpha)));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(OedError::InvalidConfig(format!("sigma must be positive, got {}", self.sigma)));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(OedError::InvalidConfig(format!("beta must be nonnegative, got {}", self.beta)));
        }
        if !(self.support_fraction > 0.0 && self.support_fraction < 1.0) {
            return Err(OedError::InvalidConfig("support_fraction must lie in (0, 1)".into()));
        }
        Ok(())
    }

    fn rays(&self, grid: Grid) -> usize {
        self.n_rays.unwrap_or(grid.width())
    }
}

/// Objective value, optional gradient and per-sample losses at one design.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    /// `J_N = (1/2N) sum ||f_hat - f||^2 + beta ||p||_1`.
    pub value: f64,
    pub grad: Option<Vec<f64>>,
    /// `||f_hat_i - f_i||^2` per sample.
    pub sq_errors: Vec<f64>,
}

impl Evaluation {
    /// `(1/N) sum ||f_hat - f||^2 / n`.
    pub fn mse_per_pixel(&self, n: usize) -> f64 {
        self.sq_errors.iter().sum::<f64>() / (self.sq_errors.len() * n) as f64
    }
}

struct SampleOutcome {
    sq_error: f64,
    grad: Option<Vec<f64>>,
    f_hat: Vec<f64>,
}

fn solve_sample(problem: &QpProblem, cfg: &OedConfig, sample: usize) -> Result<qp::QpSolution, OedError> {
    qp::solve(problem, &cfg.inner).map_err(|source| OedError::Inner { sample, source })
}

/// Empirical objective of Problem A: nonnegative weights on a fixed angle
/// grid. Full-grid data are simulated once per sample (noise fixed per
/// sample) and `d(p)` selects and scales its rows.
pub struct ProblemA {
    bank: Arc<ProjectionBank>,
    truths: Vec<Vec<f64>>,
    data: Vec<Vec<f64>>,
    constraints: LinearConstraints,
    prior: Vec<f64>,
    cfg: OedConfig,
    workers: Workers,
}

impl ProblemA {
    pub fn new(ts: &TrainingSet, angles: &[f64], cfg: &OedConfig) -> Result<Self, OedError> {
        let bank = Arc::new(ProjectionBank::new(ts.grid(), cfg.rays(ts.grid()), angles)?);
        Self::with_bank(ts, bank, cfg)
    }

    pub fn with_bank(ts: &TrainingSet, bank: Arc<ProjectionBank>, cfg: &OedConfig) -> Result<Self, OedError> {
        cfg.validate()?;
        if bank.is_empty() {
            return Err(OedError::InvalidConfig("empty angle grid".into()));
        }
        let full = bank.stacked();
        let truths: Vec<Vec<f64>> = ts.images().iter().map(|im| im.values().to_vec()).collect();
        let data = truths
            .iter()
            .enumerate()
            .map(|(i, f)| crate::datagen::simulate_data(&full, f, &cfg.noise, i as u64))
            .collect::<Result<Vec<_>, _>>()?;
        let n = ts.grid().n();
        Ok(Self {
            bank,
            truths,
            data,
            constraints: cfg.constraint.lower(n),
            prior: vec![cfg.prior_mean; n],
            cfg: cfg.clone(),
            workers: Workers::new(cfg.workers),
        })
    }

    pub fn bank(&self) -> &Arc<ProjectionBank> {
        &self.bank
    }

    pub fn num_params(&self) -> usize {
        self.bank.len()
    }

    pub fn config(&self) -> &OedConfig {
        &self.cfg
    }

    /// Replaces the sparsity weight.
    pub fn set_beta(&mut self, beta: f64) {
        self.cfg.beta = beta;
    }

    fn assemble(&self, p: &[f64]) -> Result<ForwardOperatorA, OedError> {
        let op = ForwardOperatorA::assemble(self.bank.clone(), p, tomo::support_threshold(p))?;
        if op.support().is_empty() {
            return Err(OedError::EmptySupport);
        }
        Ok(op)
    }

    fn run(&self, p: &[f64], with_grad: bool, keep: bool) -> Result<(Evaluation, Vec<Vec<f64>>), OedError> {
        let op = self.assemble(p)?;
        let hess = Arc::new(TikhonovHessian::new(op.matrix().clone(), self.cfg.alpha, Regularizer::Identity));
        let nr = self.bank.n_rays();
        let outcomes = self.workers.map(self.truths.len(), |i| -> Result<SampleOutcome, OedError> {
            let d_p: Vec<f64> = op
                .support()
                .iter()
                .flat_map(|&k| self.data[i][k * nr..(k + 1) * nr].iter().map(move |v| p[k] * v))
                .collect();
            let problem = QpProblem::map_estimate(hess.clone(), &d_p, Some(&self.prior), self.constraints.clone())
                .map_err(|source| OedError::Inner { sample: i, source })?;
            let sol = solve_sample(&problem, &self.cfg, i)?;
            let err = linalg::sub(sol.f_hat(), &self.truths[i]);
            let grad = if with_grad {
                let rhs = ProblemARhs::new(&op, sol.f_hat(), &d_p);
                let sens = SensitivityOperator::build(&problem, &sol, rhs)
                    .map_err(|source| OedError::Sensitivity { sample: i, source })?;
                Some(sens.vjp(&err).map_err(|source| OedError::Sensitivity { sample: i, source })?)
            } else {
                None
            };
            Ok(SampleOutcome {
                sq_error: linalg::dot(&err, &err),
                grad,
                f_hat: if keep { sol.point.f } else { Vec::new() },
            })
        });
        reduce(outcomes, p.len(), self.cfg.beta * p.iter().sum::<f64>(), Some(self.cfg.beta), with_grad)
    }

    /// `J_N` and its gradient at `p`.
    pub fn evaluate(&self, p: &[f64]) -> Result<Evaluation, OedError> {
        self.run(p, true, false).map(|r| r.0)
    }

    pub fn value(&self, p: &[f64]) -> Result<Evaluation, OedError> {
        self.run(p, false, false).map(|r| r.0)
    }

    /// Reconstructions `f_hat_i` at `p`.
    pub fn reconstruct(&self, p: &[f64]) -> Result<(Evaluation, Vec<Vec<f64>>), OedError> {
        self.run(p, false, true)
    }
}

/// Sums per-sample outcomes in sample order.
fn reduce(
    outcomes: Vec<Result<SampleOutcome, OedError>>,
    nparams: usize,
    penalty: f64,
    grad_shift: Option<f64>,
    with_grad: bool,
) -> Result<(Evaluation, Vec<Vec<f64>>), OedError> {
    let outcomes = outcomes.into_iter().collect::<Result<Vec<_>, _>>()?;
    let n_samples = outcomes.len() as f64;
    let mut sq_errors = Vec::with_capacity(outcomes.len());
    let mut grad = with_grad.then(|| vec![0.0; nparams]);
    let mut recon = Vec::new();
    for o in outcomes {
        sq_errors.push(o.sq_error);
        if let (Some(g), Some(gi)) = (grad.as_mut(), o.grad.as_ref()) {
            linalg::axpy(1.0 / n_samples, gi, g);
        }
        if !o.f_hat.is_empty() {
            recon.push(o.f_hat);
        }
    }
    if let (Some(g), Some(beta)) = (grad.as_mut(), grad_shift) {
        g.iter_mut().for_each(|v| *v += beta);
    }
    let value = sq_errors.iter().sum::<f64>() / (2.0 * n_samples) + penalty;
    Ok((Evaluation { value, grad, sq_errors }, recon))
}

/// Empirical objective of Problem B: `l` angles in degrees. Data are
/// re-simulated at every design as `d_i = M(p) f_i + c_i(p) z_i` with a fixed
/// standard-normal draw `z_i` per sample.
pub struct ProblemB {
    grid: Grid,
    projector: Arc<CsrMatrix>,
    num_angles: usize,
    truths: Vec<Vec<f64>>,
    noise_dirs: Vec<Vec<f64>>,
    constraints: LinearConstraints,
    cfg: OedConfig,
    workers: Workers,
}

impl ProblemB {
    pub fn new(ts: &TrainingSet, num_angles: usize, cfg: &OedConfig) -> Result<Self, OedError> {
        cfg.validate()?;
        if num_angles == 0 {
            return Err(OedError::InvalidConfig("need at least one angle".into()));
        }
        let grid = ts.grid();
        let projector = Arc::new(tomo::build_projector(grid, cfg.rays(grid))?);
        let m = num_angles * projector.nrows();
        let truths: Vec<Vec<f64>> = ts.images().iter().map(|im| im.values().to_vec()).collect();
        let noise_dirs = (0..truths.len())
            .map(|i| noise_direction(m, cfg.noise.seed, i as u64))
            .collect();
        Ok(Self {
            grid,
            projector,
            num_angles,
            truths,
            noise_dirs,
            constraints: cfg.constraint.lower(grid.n()),
            cfg: cfg.clone(),
            workers: Workers::new(cfg.workers),
        })
    }

    pub fn num_params(&self) -> usize {
        self.num_angles
    }

    pub fn config(&self) -> &OedConfig {
        &self.cfg
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    /// Operator and per-sample data at angles `p`.
    fn simulate(&self, op: &ForwardOperatorB, i: usize) -> Vec<f64> {
        let mut d = op.apply(&self.truths[i]);
        let rel = self.cfg.noise.relative_level;
        if rel > 0.0 {
            let c = rel * norm2(&d) / (d.len() as f64).sqrt();
            linalg::axpy(c, &self.noise_dirs[i], &mut d);
        }
        d
    }

    fn run(
        &self,
        p: &[f64],
        cfg: &OedConfig,
        with_grad: bool,
        keep: bool,
    ) -> Result<(Evaluation, Vec<Vec<f64>>), OedError> {
        if p.len() != self.num_angles {
            return Err(OedError::Infeasible(format!("expected {} angles, got {}", self.num_angles, p.len())));
        }
        let op = ForwardOperatorB::with_projector(self.grid, self.projector.clone(), p)?;
        let hess = Arc::new(TikhonovHessian::new(op.matrix().clone(), cfg.alpha, Regularizer::Identity));
        let constraints = if std::ptr::eq(cfg, &self.cfg) {
            self.constraints.clone()
        } else {
            cfg.constraint.lower(self.grid.n())
        };
        let prior = vec![cfg.prior_mean; self.grid.n()];
        let derivs: Vec<CsrMatrix> = if with_grad {
            (0..p.len()).map(|k| op.block_derivative(k, cfg.derivative)).collect()
        } else {
            Vec::new()
        };
        let outcomes = self.workers.map(self.truths.len(), |i| -> Result<SampleOutcome, OedError> {
            let d = self.simulate(&op, i);
            let problem = QpProblem::map_estimate(hess.clone(), &d, Some(&prior), constraints.clone())
                .map_err(|source| OedError::Inner { sample: i, source })?;
            let sol = solve_sample(&problem, cfg, i)?;
            let err = linalg::sub(sol.f_hat(), &self.truths[i]);
            let grad = if with_grad {
                let rhs = ProblemBRhs::new(
                    &op,
                    derivs.clone(),
                    sol.f_hat(),
                    &self.truths[i],
                    &d,
                    &self.noise_dirs[i],
                    cfg.noise.relative_level,
                );
                let sens = SensitivityOperator::build(&problem, &sol, rhs)
                    .map_err(|source| OedError::Sensitivity { sample: i, source })?;
                Some(sens.vjp(&err).map_err(|source| OedError::Sensitivity { sample: i, source })?)
            } else {
                None
            };
            Ok(SampleOutcome {
                sq_error: linalg::dot(&err, &err),
                grad,
                f_hat: if keep { sol.point.f } else { Vec::new() },
            })
        });
        reduce(outcomes, p.len(), 0.0, None, with_grad)
    }

    /// `J_N` and its gradient with respect to the angles (per degree).
    pub fn evaluate(&self, p: &[f64]) -> Result<Evaluation, OedError> {
        self.run(p, &self.cfg, true, false).map(|r| r.0)
    }

    pub fn value(&self, p: &[f64]) -> Result<Evaluation, OedError> {
        self.run(p, &self.cfg, false, false).map(|r| r.0)
    }

    /// Value under a modified configuration (regularization, constraint or
    /// prior), keeping the data and noise draws.
    pub fn value_with(&self, p: &[f64], cfg: &OedConfig) -> Result<Evaluation, OedError> {
        self.run(p, cfg, false, false).map(|r| r.0)
    }

    pub fn reconstruct(&self, p: &[f64]) -> Result<(Evaluation, Vec<Vec<f64>>), OedError> {
        self.run(p, &self.cfg, false, true)
    }
}

/// Why an outer run stopped.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    /// Projected-gradient norm below tolerance.
    Converged,
    /// No projected step changes the iterate.
    Stationary,
    IterationLimit,
    /// Backtracking exhausted without sufficient decrease.
    LineSearchFailed,
}

/// Projected-gradient settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DescentOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Armijo sufficient-decrease constant.
    pub armijo_c: f64,
    pub max_backtracks: usize,
    /// First trial step; `None` scales it so the first move has infinity
    /// norm `max(1, ||x||_inf) / 2`.
    pub initial_step: Option<f64>,
}

impl DescentOptions {
    pub fn new(tol: f64, max_iter: usize) -> Self {
        Self {
            tol,
            max_iter,
            armijo_c: 1e-4,
            max_backtracks: 60,
            initial_step: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct DescentResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad: Vec<f64>,
    /// Objective at the start and after every accepted step.
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub stop: StopReason,
}

/// Projected gradient descent with Armijo backtracking (halving) along the
/// projection arc, `f(P(x - t g)) <= f(x) + c g^T (P(x - t g) - x)`. Trial
/// steps after the first use the Barzilai-Borwein length `s^T s / s^T y`.
/// Trial points the objective rejects with [`OedError::EmptySupport`] count
/// as failed trials.
pub fn projected_gradient<E, P>(x0: &[f64], mut eval: E, project: P, opts: &DescentOptions) -> Result<DescentResult, OedError>
where
    E: FnMut(&[f64]) -> Result<(f64, Vec<f64>), OedError>,
    P: Fn(&[f64]) -> Vec<f64>,
{
    let mut x = project(x0);
    let (mut f, mut g) = eval(&x)?;
    let mut trace = vec![f];
    let mut step = opts.initial_step.unwrap_or_else(|| {
        let gi = linalg::norm_inf(&g);
        if gi > 0.0 {
            0.5 * linalg::norm_inf(&x).max(1.0) / gi
        } else {
            1.0
        }
    });
    let mut stop = StopReason::IterationLimit;
    let mut iterations = 0;
    for _ in 0..opts.max_iter {
        let trial: Vec<f64> = x.iter().zip(&g).map(|(a, b)| a - b).collect();
        let pg = linalg::norm_inf(&linalg::sub(&x, &project(&trial)));
        if pg <= opts.tol {
            stop = StopReason::Converged;
            break;
        }
        let mut accepted = None;
        let mut t = step;
        for _ in 0..opts.max_backtracks {
            let xt = project(&x.iter().zip(&g).map(|(a, b)| a - t * b).collect::<Vec<_>>());
            let d = linalg::sub(&xt, &x);
            if linalg::norm_inf(&d) == 0.0 {
                break;
            }
            match eval(&xt) {
                Ok((ft, gt)) if ft <= f + opts.armijo_c * linalg::dot(&g, &d) => {
                    accepted = Some((xt, ft, gt, t));
                    break;
                }
                Ok(_) | Err(OedError::EmptySupport) => t *= 0.5,
                Err(e) => return Err(e),
            }
        }
        let Some((xt, ft, gt, t_used)) = accepted else {
            stop = if t == step { StopReason::Stationary } else { StopReason::LineSearchFailed };
            break;
        };
        let s = linalg::sub(&xt, &x);
        let y = linalg::sub(&gt, &g);
        let sy = linalg::dot(&s, &y);
        step = if sy > 0.0 { linalg::dot(&s, &s) / sy } else { 2.0 * t_used };
        step = step.clamp(1e-12, 1e12);
        x = xt;
        f = ft;
        g = gt;
        trace.push(f);
        iterations += 1;
    }
    Ok(DescentResult {
        x,
        value: f,
        grad: g,
        trace,
        iterations,
        stop,
    })
}

fn project_nonnegative(x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| v.max(0.0)).collect()
}

/// Result of a design optimization.
#[derive(Clone, Debug)]
pub struct OedResult {
    /// Optimal design: weights on the full angle grid (Problem A) or angles
    /// (Problem B).
    pub p_opt: Vec<f64>,
    /// Angles the design refers to, in degrees.
    pub angles: Vec<f64>,
    pub objective_trace: Vec<f64>,
    /// `||f_hat_i - f_i||^2 / n` at `p_opt`.
    pub per_sample_mse: Vec<f64>,
    /// Surviving angle indices after phase 1 (Problem A).
    pub support: Vec<usize>,
    /// Phase-1 weights (Problem A).
    pub phase1_weights: Vec<f64>,
    pub phase1_trace: Vec<f64>,
    pub stop: StopReason,
    pub reconstructions: Option<Vec<Vec<f64>>>,
}

impl OedResult {
    pub fn mse(&self) -> f64 {
        self.per_sample_mse.iter().sum::<f64>() / self.per_sample_mse.len().max(1) as f64
    }

    pub fn support_angles(&self) -> Vec<f64> {
        self.support.iter().map(|&k| self.angles[k]).collect()
    }
}

/// Weights below this in phase 1 mean the design collapsed to zero.
pub const OVERREGULARIZED_FLOOR: f64 = 1e-6;

/// Two-phase Problem-A solve: projected gradient on `J_N + beta ||p||_1` from
/// `p = e`, then re-optimization with `beta = 0` on the surviving support
/// (`p_i > support_fraction * max p`).
pub fn solve_oed_a(ts: &TrainingSet, angles: &[f64], cfg: &OedConfig) -> Result<OedResult, OedError> {
    let bank = Arc::new(ProjectionBank::new(ts.grid(), cfg.rays(ts.grid()), angles)?);
    let mut problem = ProblemA::with_bank(ts, bank, cfg)?;
    solve_oed_a_with(&mut problem, cfg.beta)
}

/// [`solve_oed_a`] on a prepared objective (data and angle blocks reused).
pub fn solve_oed_a_with(problem: &mut ProblemA, beta: f64) -> Result<OedResult, OedError> {
    problem.set_beta(beta);
    let cfg = problem.config().clone();
    let ell = problem.num_params();
    let opts = DescentOptions::new(cfg.outer_tol, cfg.max_outer_iter);
    let eval = |p: &[f64]| problem.evaluate(p).map(|e| (e.value, e.grad.expect("gradient requested")));
    let phase1 = projected_gradient(&vec![1.0; ell], eval, project_nonnegative, &opts)?;
    let pmax = phase1.x.iter().cloned().fold(0.0, f64::max);
    if pmax <= OVERREGULARIZED_FLOOR {
        return Err(OedError::OverRegularized { beta });
    }
    let support: Vec<usize> = (0..ell).filter(|&k| phase1.x[k] > cfg.support_fraction * pmax).collect();

    // Phase 2: beta = 0 on the frozen support.
    problem.set_beta(0.0);
    let embed = |q: &[f64]| {
        let mut p = vec![0.0; ell];
        for (&k, &v) in support.iter().zip(q) {
            p[k] = v;
        }
        p
    };
    let q0: Vec<f64> = support.iter().map(|&k| phase1.x[k]).collect();
    let eval2 = |q: &[f64]| {
        problem.evaluate(&embed(q)).map(|e| {
            let g = e.grad.expect("gradient requested");
            (e.value, support.iter().map(|&k| g[k]).collect())
        })
    };
    let opts2 = DescentOptions::new(cfg.outer_tol, cfg.max_phase2_iter);
    let phase2 = projected_gradient(&q0, eval2, project_nonnegative, &opts2)?;
    let p_opt = embed(&phase2.x);
    let final_eval = problem.value(&p_opt)?;
    let n = problem.bank().grid().n() as f64;
    problem.set_beta(beta);
    Ok(OedResult {
        angles: problem.bank().angles().to_vec(),
        p_opt,
        objective_trace: phase2.trace,
        per_sample_mse: final_eval.sq_errors.iter().map(|e| e / n).collect(),
        support,
        phase1_weights: phase1.x,
        phase1_trace: phase1.trace,
        stop: phase2.stop,
        reconstructions: None,
    })
}

/// Angles from increments: `p_k = sum_{j <= k} delta_j`.
pub fn angles_from_increments(delta: &[f64]) -> Vec<f64> {
    delta
        .iter()
        .scan(0.0, |acc, d| {
            *acc += d;
            Some(*acc)
        })
        .collect()
}

/// Increments of ascending angles.
pub fn increments_from_angles(p: &[f64]) -> Vec<f64> {
    let mut prev = 0.0;
    p.iter()
        .map(|&v| {
            let d = v - prev;
            prev = v;
            d
        })
        .collect()
}

/// `(dp/d delta)^T g`: suffix sums of `g`.
pub fn increment_gradient(grad_p: &[f64]) -> Vec<f64> {
    let mut out = grad_p.to_vec();
    for k in (0..out.len().saturating_sub(1)).rev() {
        out[k] += out[k + 1];
    }
    out
}

/// Euclidean projection onto `{delta_1 >= a, delta_j >= 0, sum delta <= b}`.
pub fn project_increments(delta: &[f64], a: f64, b: f64) -> Vec<f64> {
    // Shift delta_1 by a: project onto {x >= 0, sum x <= b - a}.
    let cap = b - a;
    let mut x: Vec<f64> = delta.iter().enumerate().map(|(k, &v)| if k == 0 { v - a } else { v }).collect();
    let clipped: Vec<f64> = x.iter().map(|v| v.max(0.0)).collect();
    if clipped.iter().sum::<f64>() <= cap {
        x = clipped;
    } else {
        // Projection onto the simplex {x >= 0, sum x = cap}.
        let mut sorted = x.clone();
        sorted.sort_by(|p, q| q.total_cmp(p));
        let mut acc = 0.0;
        let mut theta = 0.0;
        for (k, &u) in sorted.iter().enumerate() {
            acc += u;
            let t = (acc - cap) / (k as f64 + 1.0);
            if u - t > 0.0 {
                theta = t;
            }
        }
        x = x.iter().map(|v| (v - theta).max(0.0)).collect();
    }
    x[0] += a;
    x
}

/// Checks that `p` is ascending within `[a, b]`.
pub fn check_angle_design(p: &[f64], a: f64, b: f64) -> Result<(), OedError> {
    if p.is_empty() {
        return Err(OedError::Infeasible("empty design".into()));
    }
    if p[0] < a || p[p.len() - 1] > b {
        return Err(OedError::Infeasible(format!("angles must lie in [{a}, {b}]")));
    }
    if p.windows(2).any(|w| w[1] < w[0]) {
        return Err(OedError::Infeasible("angles must be ascending".into()));
    }
    Ok(())
}

/// Problem-B solve: projected gradient in increment coordinates from the
/// ascending start `p0`, angles kept in `[a, b]`.
pub fn solve_oed_b(ts: &TrainingSet, p0: &[f64], bounds: (f64, f64), cfg: &OedConfig) -> Result<OedResult, OedError> {
    let problem = ProblemB::new(ts, p0.len(), cfg)?;
    solve_oed_b_with(&problem, p0, bounds)
}

pub fn solve_oed_b_with(problem: &ProblemB, p0: &[f64], (a, b): (f64, f64)) -> Result<OedResult, OedError> {
    if !(0.0 <= a && a <= b && b <= 180.0) {
        return Err(OedError::InvalidConfig(format!("angle bounds [{a}, {b}] must lie in [0, 180]")));
    }
    check_angle_design(p0, a, b)?;
    let cfg = problem.config().clone();
    let to_p = |delta: &[f64]| angles_from_increments(delta).into_iter().map(|v| v.clamp(a, b)).collect::<Vec<_>>();
    let eval = |delta: &[f64]| {
        problem
            .evaluate(&to_p(delta))
            .map(|e| (e.value, increment_gradient(&e.grad.expect("gradient requested"))))
    };
    let opts = DescentOptions::new(cfg.outer_tol, cfg.max_outer_iter);
    let res = projected_gradient(&increments_from_angles(p0), eval, |d| project_increments(d, a, b), &opts)?;
    let p_opt = to_p(&res.x);
    let final_eval = problem.value(&p_opt)?;
    let n = problem.grid().n() as f64;
    Ok(OedResult {
        angles: p_opt.clone(),
        p_opt,
        objective_trace: res.trace,
        per_sample_mse: final_eval.sq_errors.iter().map(|e| e / n).collect(),
        support: Vec::new(),
        phase1_weights: Vec::new(),
        phase1_trace: Vec::new(),
        stop: res.stop,
        reconstructions: None,
    })
}

/// `count` ascending designs of `num_angles` angles drawn uniformly from
/// `[a, b]`.
pub fn random_starts(count: usize, num_angles: usize, (a, b): (f64, f64), seed: u64) -> Vec<Vec<f64>> {
    use rand::Rng;
    let mut rng = crate::rng::stream_rng(seed, crate::rng::streams::STARTS);
    (0..count)
        .map(|_| {
            let mut p: Vec<f64> = (0..num_angles).map(|_| rng.gen_range(a..=b)).collect();
            p.sort_by(f64::total_cmp);
            p
        })
        .collect()
}

/// Runs [`solve_oed_b`] from every start on one shared objective.
pub fn multi_start_oed_b(
    ts: &TrainingSet,
    starts: &[Vec<f64>],
    bounds: (f64, f64),
    cfg: &OedConfig,
) -> Result<Vec<OedResult>, OedError> {
    let num_angles = starts.first().map_or(0, Vec::len);
    let problem = ProblemB::new(ts, num_angles, cfg)?;
    starts.iter().map(|p0| solve_oed_b_with(&problem, p0, bounds)).collect()
}

/// Objective used by a landscape scan.
#[derive(Clone, Debug)]
pub enum LandscapeMode {
    /// Empirical `J_N` over the training set under the configured constraint.
    Empirical,
    /// Closed-form Bayes risk with `L = I`.
    BayesIdentity,
    /// Closed-form Bayes risk with prior covariance `Gamma`.
    BayesCovariance(Arc<faer::Mat<f64>>),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LandscapeCell {
    pub p1: f64,
    pub p2: f64,
    pub value: f64,
}

#[derive(Clone, Debug)]
pub struct Landscape {
    pub step: f64,
    /// Cells with `p1 >= p2`, `p1` outer, both ascending.
    pub cells: Vec<LandscapeCell>,
}

impl Landscape {
    /// The `k` lowest cells (first occurrence wins ties).
    pub fn best(&self, k: usize) -> Vec<LandscapeCell> {
        let mut idx: Vec<usize> = (0..self.cells.len()).collect();
        idx.sort_by(|&a, &b| self.cells[a].value.total_cmp(&self.cells[b].value).then(a.cmp(&b)));
        idx.into_iter().take(k).map(|i| self.cells[i]).collect()
    }

    pub fn value_at(&self, p1: f64, p2: f64) -> Option<f64> {
        let (hi, lo) = if p1 >= p2 { (p1, p2) } else { (p2, p1) };
        self.cells
            .iter()
            .find(|c| (c.p1 - hi).abs() < 1e-9 && (c.p2 - lo).abs() < 1e-9)
            .map(|c| c.value)
    }
}

/// Scan values `0, step, 2 step, ..., <= 180`.
pub fn scan_angles(step: f64) -> Vec<f64> {
    let count = (180.0 / step + 1e-9).floor() as usize;
    (0..=count).map(|k| k as f64 * step).collect()
}

/// Evaluates a two-angle objective over `{(p1, p2): 0 <= p2 <= p1 <= 180}` on
/// a grid of `step` degrees.
pub fn landscape_scan(ts: &TrainingSet, cfg: &OedConfig, step: f64, mode: &LandscapeMode) -> Result<Landscape, OedError> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(OedError::InvalidConfig(format!("scan step must be positive, got {step}")));
    }
    cfg.validate()?;
    let values = scan_angles(step);
    let pairs: Vec<(f64, f64)> = values
        .iter()
        .enumerate()
        .flat_map(|(i, &p1)| values[..=i].iter().map(move |&p2| (p1, p2)))
        .collect();
    let grid = ts.grid();
    let serial = OedConfig {
        workers: 1,
        ..cfg.clone()
    };
    let workers = Workers::new(cfg.workers);
    let projector = Arc::new(tomo::build_projector(grid, cfg.rays(grid))?);
    let results: Vec<Result<f64, OedError>> = match mode {
        LandscapeMode::Empirical => {
            let problem = ProblemB::new(ts, 2, &serial)?;
            workers.map(pairs.len(), |c| {
                let (p1, p2) = pairs[c];
                problem.value(&[p1, p2]).map(|e| e.value)
            })
        }
        LandscapeMode::BayesIdentity => workers.map(pairs.len(), |c| {
            let (p1, p2) = pairs[c];
            let op = ForwardOperatorB::with_projector(grid, projector.clone(), &[p1, p2])?;
            Ok(bayesrisk::bayes_risk_identity(op.matrix(), cfg.alpha, cfg.sigma))
        }),
        LandscapeMode::BayesCovariance(gamma) => workers.map(pairs.len(), |c| {
            let (p1, p2) = pairs[c];
            let op = ForwardOperatorB::with_projector(grid, projector.clone(), &[p1, p2])?;
            Ok(bayesrisk::bayes_risk_with_covariance(op.matrix(), gamma, cfg.alpha, cfg.sigma)?)
        }),
    };
    let cells = pairs
        .iter()
        .zip(results)
        .map(|(&(p1, p2), v)| v.map(|value| LandscapeCell { p1, p2, value }))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Landscape { step, cells })
}

/// `count` log-spaced values from `lo` to `hi` inclusive.
pub fn log_space(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.log10(), hi.log10());
    (0..count)
        .map(|k| 10f64.powf(a + (b - a) * k as f64 / (count - 1) as f64))
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct AlphaSweepRow {
    pub alpha: f64,
    pub constraint: String,
    pub mse: f64,
}

/// Per-pixel MSE of the reconstructions at fixed angles for every
/// `(alpha, constraint)` pair, rows ordered by alpha then constraint.
pub fn alpha_sweep(
    ts: &TrainingSet,
    angles: &[f64],
    cfg: &OedConfig,
    alphas: &[f64],
    constraints: &[ConstraintSpec],
) -> Result<Vec<AlphaSweepRow>, OedError> {
    let problem = ProblemB::new(ts, angles.len(), cfg)?;
    let n = ts.grid().n();
    let mut rows = Vec::new();
    for &alpha in alphas {
        for c in constraints {
            let local = OedConfig {
                alpha,
                constraint: c.clone(),
                ..cfg.clone()
            };
            local.validate()?;
            let e = problem.value_with(angles, &local)?;
            rows.push(AlphaSweepRow {
                alpha,
                constraint: c.tag().to_string(),
                mse: e.mse_per_pixel(n),
            });
        }
    }
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq)]
pub struct BetaSweepRow {
    pub beta: f64,
    /// Surviving angles after phase 1; empty when over-regularized.
    pub support_angles: Vec<f64>,
    /// Phase-2 weights on the support.
    pub weights: Vec<f64>,
    /// Per-pixel MSE at the phase-2 design; for an over-regularized run, the
    /// MSE of the prior mean.
    pub mse: f64,
}

/// Runs [`solve_oed_a`] for every `beta`, sharing data and angle blocks.
pub fn beta_sweep(ts: &TrainingSet, angles: &[f64], cfg: &OedConfig, betas: &[f64]) -> Result<Vec<BetaSweepRow>, OedError> {
    let bank = Arc::new(ProjectionBank::new(ts.grid(), cfg.rays(ts.grid()), angles)?);
    let mut problem = ProblemA::with_bank(ts, bank, cfg)?;
    let n = ts.grid().n() as f64;
    let prior_mse = ts
        .images()
        .iter()
        .map(|im| im.values().iter().map(|v| (v - cfg.prior_mean).powi(2)).sum::<f64>() / n)
        .sum::<f64>()
        / ts.len() as f64;
    let mut rows = Vec::with_capacity(betas.len());
    for &beta in betas {
        match solve_oed_a_with(&mut problem, beta) {
            Ok(res) => rows.push(BetaSweepRow {
                beta,
                support_angles: res.support_angles(),
                weights: res.support.iter().map(|&k| res.p_opt[k]).collect(),
                mse: res.mse(),
            }),
            Err(OedError::OverRegularized { .. }) => rows.push(BetaSweepRow {
                beta,
                support_angles: Vec::new(),
                weights: Vec::new(),
                mse: prior_mse,
            }),
            Err(e) => return Err(e),
        }
    }
    Ok(rows)
}
