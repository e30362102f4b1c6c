//! Closed-form Bayes risk of the unconstrained MAP estimate,
//!
//! ```text
//! J = 1/(2 sigma^2) ||M_alpha^+||_F^2 = 1/(2 sigma^2) tr((M^T M + alpha^2 L^T L)^{-1}),
//! ```
//!
//! with `M_alpha = [M; alpha L]`, and its gradient for weighted designs.

use faer::Mat;
use thiserror::Error;

use crate::datagen::TrainingSet;
use crate::linalg::{self, singular_values, sym_eigen};
use crate::qp::Regularizer;
use crate::sparse::{CsrMatrix, LinearOperator};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RiskError {
    #[error("stacked operator [M; alpha L] is rank deficient (smallest singular value {smallest:.3e})")]
    RankDeficient { smallest: f64 },
    #[error("design weight p[{index}] = {value} is negative")]
    NegativeWeight { index: usize, value: f64 },
    #[error("problem size n = {n} exceeds the dense limit {limit}")]
    TooLarge { n: usize, limit: usize },
    #[error("ridge must be positive, got {0}")]
    InvalidRidge(f64),
    #[error("need at least two samples, got {0}")]
    TooFewSamples(usize),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

/// Singular values above `RANK_TOL * sigma_max` count toward the rank.
pub const RANK_TOL: f64 = 1e-10;

/// Largest `n` accepted by the dense exact path.
pub const DENSE_LIMIT: usize = 4096;

pub fn numerical_rank(singvals: &[f64]) -> usize {
    let smax = singvals.iter().cloned().fold(0.0, f64::max);
    singvals.iter().filter(|&&s| s > RANK_TOL * smax).count()
}

/// `1/(2 sigma^2) sum_i sigma_{alpha,i}^{-2}` over the singular values of the
/// dense stacked operator `[M; alpha L]` (`l = None` means `L = I`).
pub fn bayes_risk_frobenius(m: &Mat<f64>, l: Option<&Mat<f64>>, alpha: f64, sigma: f64) -> Result<f64, RiskError> {
    let n = m.ncols();
    let l_rows = l.map_or(n, |l| l.nrows());
    if let Some(l) = l {
        if l.ncols() != n {
            return Err(RiskError::Dimension("L and M column counts differ".into()));
        }
    }
    let stacked = Mat::from_fn(m.nrows() + l_rows, n, |i, j| {
        if i < m.nrows() {
            m[(i, j)]
        } else {
            let k = i - m.nrows();
            alpha * l.map_or(if k == j { 1.0 } else { 0.0 }, |l| l[(k, j)])
        }
    });
    let s = singular_values(stacked.as_ref());
    let smax = s.first().copied().unwrap_or(0.0);
    let smallest = if s.len() < n { 0.0 } else { s[n - 1] };
    if s.len() < n || smallest <= RANK_TOL * smax {
        return Err(RiskError::RankDeficient { smallest });
    }
    Ok(s[..n].iter().map(|v| 1.0 / (v * v)).sum::<f64>() / (2.0 * sigma * sigma))
}

/// `1/(2 sigma^2) (sum_{i<=r} 1/(sigma_i^2 + alpha^2) + (n - r)/alpha^2)` for
/// `L = I`, where `singvals` are the singular values of `M` and `r` its
/// numerical rank.
pub fn bayes_risk_spectrum_identity_l(singvals: &[f64], n: usize, alpha: f64, sigma: f64) -> f64 {
    let smax = singvals.iter().cloned().fold(0.0, f64::max);
    let kept: Vec<f64> = singvals.iter().cloned().filter(|&s| s > RANK_TOL * smax).collect();
    let r = kept.len().min(n);
    let a2 = alpha * alpha;
    let head: f64 = kept.iter().take(r).map(|s| 1.0 / (s * s + a2)).sum();
    (head + (n - r) as f64 / a2) / (2.0 * sigma * sigma)
}

/// Bayes risk for `L = I` and a sparse `M` with few rows, from the eigenvalues
/// of `M M^T`.
pub fn bayes_risk_identity(m: &CsrMatrix, alpha: f64, sigma: f64) -> f64 {
    let n = m.ncols();
    if m.nrows() == 0 {
        return bayes_risk_spectrum_identity_l(&[], n, alpha, sigma);
    }
    let mmt = m.transpose().gram();
    let (w, _) = sym_eigen(mmt.as_ref());
    let s: Vec<f64> = w.iter().map(|v| v.max(0.0).sqrt()).collect();
    bayes_risk_spectrum_identity_l(&s, n, alpha, sigma)
}

/// Bayes risk for a general prior covariance `Gamma = (L^T L)^{-1}`:
/// `tr((M^T M + alpha^2 Gamma^{-1})^{-1}) = alpha^{-2} (tr Gamma - tr((alpha^2 I + M Gamma M^T)^{-1} M Gamma^2 M^T))`.
pub fn bayes_risk_with_covariance(m: &CsrMatrix, gamma: &Mat<f64>, alpha: f64, sigma: f64) -> Result<f64, RiskError> {
    let n = m.ncols();
    if gamma.nrows() != n || gamma.ncols() != n {
        return Err(RiskError::Dimension("covariance size".into()));
    }
    let a2 = alpha * alpha;
    let tr_gamma: f64 = (0..n).map(|i| gamma[(i, i)]).sum();
    let rows = m.nrows();
    if rows == 0 {
        return Ok(tr_gamma / a2 / (2.0 * sigma * sigma));
    }
    // B = M Gamma (Gamma symmetric, so row r of B is Gamma m_r).
    let mut b = Mat::<f64>::zeros(rows, n);
    for r in 0..rows {
        let (cols, vals) = m.row(r);
        for (&c, &v) in cols.iter().zip(vals) {
            for j in 0..n {
                b[(r, j)] += v * gamma[(c, j)];
            }
        }
    }
    let mut c = Mat::<f64>::zeros(rows, rows);
    for r in 0..rows {
        let (cols, vals) = m.row(r);
        for s in 0..rows {
            c[(s, r)] = cols.iter().zip(vals).map(|(&k, &v)| b[(s, k)] * v).sum();
        }
        c[(r, r)] += a2;
    }
    let e = &b * b.transpose();
    let chol = linalg::Cholesky::new(c.as_ref()).ok_or(RiskError::RankDeficient { smallest: 0.0 })?;
    let x = chol.solve_mat(e.as_ref());
    let tr: f64 = (0..rows).map(|i| x[(i, i)]).sum();
    Ok((tr_gamma - tr) / a2 / (2.0 * sigma * sigma))
}

/// Per-angle squared singular values in a shared basis.
#[derive(Clone, Debug)]
pub struct SpectralCache {
    /// `n x l`; column `j` holds the squared singular values of `A_j`.
    pub pi: Mat<f64>,
    pub angles: Vec<f64>,
    /// Whether every tested pair `A_i^T A_i`, `A_j^T A_j` commutes.
    pub commuting_assumption_validated: bool,
    /// Largest relative commutator `||[X_i, X_j]||_F / (||X_i||_F ||X_j||_F)` seen.
    pub max_commutator: f64,
}

/// Relative commutator norms below this count as commuting.
pub const COMMUTATOR_TOL: f64 = 1e-6;

fn gram_of(a: &Mat<f64>, b: &Mat<f64>) -> Mat<f64> {
    a * b.transpose()
}

/// `||[A_i^T A_i, A_j^T A_j]||_F` relative to the norms of both products,
/// computed with row-space-sized products only.
fn relative_commutator(ai: &Mat<f64>, aj: &Mat<f64>) -> f64 {
    let gi = gram_of(ai, ai);
    let gj = gram_of(aj, aj);
    let k = gram_of(ai, aj);
    let trace = |m: &Mat<f64>| (0..m.nrows()).map(|i| m[(i, i)]).sum::<f64>();
    let t1 = trace(&(&gi * &k * &gj * k.transpose()));
    let kkt = &k * k.transpose();
    let t2 = trace(&(&kkt * &kkt));
    let ni = trace(&(&gi * &gi)).sqrt();
    let nj = trace(&(&gj * &gj)).sqrt();
    if ni == 0.0 || nj == 0.0 {
        return 0.0;
    }
    (2.0 * (t1 - t2)).max(0.0).sqrt() / (ni * nj)
}

/// Builds `Pi` from dense blocks `A_j`.
///
/// The shared basis is the eigenbasis `V` of `sum_j c_j A_j^T A_j` with
/// distinct generic weights `c_j`; `Pi_ij = ||A_j v_i||^2`. When the Gram
/// matrices commute these are exactly the eigenvalues of each `A_j^T A_j`,
/// aligned across `j`. Commutation is tested on the pairs `(0, j)` and
/// `(j, j + 1)`.
pub fn build_pi_from_blocks(blocks: &[Mat<f64>], angles: &[f64]) -> SpectralCache {
    assert!(!blocks.is_empty(), "need at least one block");
    let n = blocks[0].ncols();
    let mut s = Mat::<f64>::zeros(n, n);
    for (j, a) in blocks.iter().enumerate() {
        let c = 1.0 + ((j as f64 + 1.0) * 0.618_033_988_749_895).fract();
        s += (a.transpose() * a) * faer::Scale(c);
    }
    let (_, v) = sym_eigen(s.as_ref());
    let mut pi = Mat::<f64>::zeros(n, blocks.len());
    for (j, a) in blocks.iter().enumerate() {
        let av = a * &v;
        for i in 0..n {
            pi[(i, j)] = (0..av.nrows()).map(|r| av[(r, i)] * av[(r, i)]).sum();
        }
    }
    let mut pairs: Vec<(usize, usize)> = (1..blocks.len()).map(|j| (0, j)).collect();
    pairs.extend((1..blocks.len().saturating_sub(1)).map(|j| (j, j + 1)));
    let max_commutator = pairs
        .iter()
        .map(|&(i, j)| relative_commutator(&blocks[i], &blocks[j]))
        .fold(0.0, f64::max);
    SpectralCache {
        pi,
        angles: angles.to_vec(),
        commuting_assumption_validated: max_commutator <= COMMUTATOR_TOL,
        max_commutator,
    }
}

/// `Pi` for the blocks `A_j = T R(theta_j)` of a projection bank.
pub fn build_pi(bank: &crate::tomo::ProjectionBank) -> SpectralCache {
    let blocks: Vec<Mat<f64>> = (0..bank.len()).map(|k| bank.block(k).to_dense()).collect();
    build_pi_from_blocks(&blocks, bank.angles())
}

fn check_weights(p: &[f64]) -> Result<(), RiskError> {
    match p.iter().enumerate().find(|(_, v)| !(**v >= 0.0)) {
        Some((index, &value)) => Err(RiskError::NegativeWeight { index, value }),
        None => Ok(()),
    }
}

/// Spectrum of the stacked scaled operator `[p_1 A_1; ...; p_l A_l]` predicted
/// by `Pi`: `sqrt(Pi (p .* p))`.
pub fn lemma_spectrum(cache: &SpectralCache, p: &[f64]) -> Vec<f64> {
    let p2: Vec<f64> = p.iter().map(|v| v * v).collect();
    linalg::mat_vec(cache.pi.as_ref(), &p2).into_iter().map(|h| h.max(0.0).sqrt()).collect()
}

/// Singular values of the stacked scaled operator, from a dense eigensolve
/// of `sum_j p_j^2 A_j^T A_j`, ascending.
pub fn direct_spectrum(blocks: &[Mat<f64>], p: &[f64]) -> Vec<f64> {
    let n = blocks[0].ncols();
    let mut s = Mat::<f64>::zeros(n, n);
    for (a, &pj) in blocks.iter().zip(p) {
        s += (a.transpose() * a) * faer::Scale(pj * pj);
    }
    let (w, _) = sym_eigen(s.as_ref());
    w.into_iter().map(|v| v.max(0.0).sqrt()).collect()
}

/// Largest absolute difference between the sorted Lemma spectrum and the
/// direct spectrum.
pub fn lemma_discrepancy(cache: &SpectralCache, blocks: &[Mat<f64>], p: &[f64]) -> f64 {
    let mut a = lemma_spectrum(cache, p);
    a.sort_by(f64::total_cmp);
    let b = direct_spectrum(blocks, p);
    a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Risk and gradient of `J(p) + beta ||p||_1` through `Pi`:
/// `h = Pi (p .* p)`, `J = 1/(2 sigma^2) sum 1/(h_i + alpha^2) + beta sum p`,
/// `grad = -sigma^{-2} p .* (Pi^T (h + alpha^2)^{-2}) + beta`.
pub fn risk_and_gradient_a(
    cache: &SpectralCache,
    p: &[f64],
    alpha: f64,
    sigma: f64,
    beta: f64,
) -> Result<(f64, Vec<f64>), RiskError> {
    check_weights(p)?;
    if p.len() != cache.pi.ncols() {
        return Err(RiskError::Dimension("design length".into()));
    }
    let a2 = alpha * alpha;
    let p2: Vec<f64> = p.iter().map(|v| v * v).collect();
    let h = linalg::mat_vec(cache.pi.as_ref(), &p2);
    let s2 = sigma * sigma;
    let j = h.iter().map(|hi| 1.0 / (hi + a2)).sum::<f64>() / (2.0 * s2) + beta * p.iter().sum::<f64>();
    let h_alpha: Vec<f64> = h.iter().map(|hi| (hi + a2).powi(-2)).collect();
    let back = linalg::mat_t_vec(cache.pi.as_ref(), &h_alpha);
    let grad = p.iter().zip(&back).map(|(pk, bk)| -pk * bk / s2 + beta).collect();
    Ok((j, grad))
}

/// Exact risk and gradient from the eigendecomposition
/// `sum_j p_j^2 A_j^T A_j + alpha^2 L^T L = V diag(w) V^T`:
/// `J = 1/(2 sigma^2) sum 1/w_i + beta sum p`,
/// `dJ/dp_k = -sigma^{-2} p_k ||A_k V diag(w)^{-1}||_F^2 + beta`.
pub fn exact_risk_and_gradient_a(
    blocks: &[CsrMatrix],
    p: &[f64],
    regularizer: &Regularizer,
    alpha: f64,
    sigma: f64,
    beta: f64,
) -> Result<(f64, Vec<f64>), RiskError> {
    check_weights(p)?;
    if p.len() != blocks.len() || blocks.is_empty() {
        return Err(RiskError::Dimension("design length".into()));
    }
    let n = blocks[0].ncols();
    if n > DENSE_LIMIT {
        return Err(RiskError::TooLarge { n, limit: DENSE_LIMIT });
    }
    let a2 = alpha * alpha;
    let mut h = match regularizer {
        Regularizer::Identity => Mat::<f64>::identity(n, n) * faer::Scale(a2),
        Regularizer::Matrix(l) => (l.transpose() * Mat::as_ref(l)) * faer::Scale(a2),
    };
    for (a, &pk) in blocks.iter().zip(p) {
        if pk != 0.0 {
            h += a.gram() * faer::Scale(pk * pk);
        }
    }
    let (w, v) = sym_eigen(h.as_ref());
    if w[0] <= 0.0 {
        return Err(RiskError::RankDeficient { smallest: w[0].max(0.0).sqrt() });
    }
    let s2 = sigma * sigma;
    let j = w.iter().map(|wi| 1.0 / wi).sum::<f64>() / (2.0 * s2) + beta * p.iter().sum::<f64>();
    let grad = blocks
        .iter()
        .zip(p)
        .map(|(a, &pk)| {
            if pk == 0.0 {
                return beta;
            }
            let mut acc = 0.0;
            for i in 0..n {
                let av = a.apply(v.col_as_slice(i));
                acc += linalg::dot(&av, &av) / (w[i] * w[i]);
            }
            -pk * acc / s2 + beta
        })
        .collect();
    Ok((j, grad))
}

/// Regularization factor from the sample covariance of a training set:
/// `Gamma = 1/(N-1) sum (f_i - mean)(f_i - mean)^T + ridge I = V diag(w) V^T`,
/// `L = diag(w)^{-1/2} V^T`, so `L^T L = Gamma^{-1}`. Returns `(L, Gamma)`.
pub fn sample_covariance_factor(ts: &TrainingSet, ridge: f64) -> Result<(Mat<f64>, Mat<f64>), RiskError> {
    if !(ridge > 0.0) {
        return Err(RiskError::InvalidRidge(ridge));
    }
    let nsamp = ts.len();
    if nsamp < 2 {
        return Err(RiskError::TooFewSamples(nsamp));
    }
    let n = ts.grid().n();
    if n > DENSE_LIMIT {
        return Err(RiskError::TooLarge { n, limit: DENSE_LIMIT });
    }
    let mut mean = vec![0.0; n];
    for im in ts.images() {
        linalg::axpy(1.0 / nsamp as f64, im.values(), &mut mean);
    }
    let centered = Mat::from_fn(n, nsamp, |i, k| ts.images()[k].values()[i] - mean[i]);
    let mut gamma = (&centered * centered.transpose()) * faer::Scale(1.0 / (nsamp as f64 - 1.0));
    for i in 0..n {
        gamma[(i, i)] += ridge;
    }
    let (w, v) = sym_eigen(gamma.as_ref());
    let l = Mat::from_fn(n, n, |i, j| v[(j, i)] / w[i].max(f64::MIN_POSITIVE).sqrt());
    Ok((l, gamma))
}
