//! Parallel-beam projector, bilinear rotation operators and the assembled
//! forward maps of both design problems.
//!
//! Geometry: pixel `(i, j)` (row `i` from the top, column `j` from the left)
//! has its center at `x = j - (w-1)/2`, `y = (h-1)/2 - i`, so `y` points up and
//! the grid occupies `[-w/2, w/2] x [-h/2, h/2]`. Rotations are
//! counterclockwise in this frame; the projector integrates along vertical
//! rays.

use std::f64::consts::PI;
use std::sync::Arc;

use rayon::prelude::*;
use thiserror::Error;

use crate::sparse::{CsrMatrix, LinearOperator};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TomoError {
    #[error("invalid grid {width}x{height}: need a square grid of at least 2x2")]
    InvalidGrid { width: usize, height: usize },
    #[error("number of rays must be at least 1")]
    NoRays,
    #[error("image has {got} values, grid needs {expected}")]
    ImageSize { expected: usize, got: usize },
    #[error("image value at index {0} is not finite")]
    NonFinite(usize),
    #[error("design has {got} entries, expected {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("design weight p[{index}] = {value} is negative")]
    NegativeWeight { index: usize, value: f64 },
    #[error("angle p[{index}] = {value} outside [0, 180]")]
    AngleOutOfRange { index: usize, value: f64 },
    #[error("angle {0} is not finite")]
    NonFiniteAngle(f64),
    #[error(
        "analytic and finite-difference rotation derivatives disagree at {theta} deg \
         (relative difference {rel_diff:.3e})"
    )]
    DerivativeMismatch { theta: f64, rel_diff: f64 },
}

/// Square pixel grid with unit pixels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Grid {
    width: usize,
    height: usize,
}

impl Grid {
    pub const PIXEL_SIZE: f64 = 1.0;

    pub fn new(width: usize, height: usize) -> Result<Self, TomoError> {
        if width < 2 || width != height {
            return Err(TomoError::InvalidGrid { width, height });
        }
        Ok(Self { width, height })
    }

    pub fn square(size: usize) -> Result<Self, TomoError> {
        Self::new(size, size)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Number of pixels.
    pub fn n(&self) -> usize {
        self.width * self.height
    }

    /// Center of pixel `(i, j)` in the y-up frame.
    pub fn pixel_center(&self, i: usize, j: usize) -> (f64, f64) {
        let cx = (self.width as f64 - 1.0) / 2.0;
        let cy = (self.height as f64 - 1.0) / 2.0;
        (j as f64 - cx, cy - i as f64)
    }
}

/// Row-major image on a [`Grid`].
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    grid: Grid,
    values: Vec<f64>,
}

impl Image {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self, TomoError> {
        if values.len() != grid.n() {
            return Err(TomoError::ImageSize {
                expected: grid.n(),
                got: values.len(),
            });
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(TomoError::NonFinite(k));
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: Grid) -> Self {
        Self {
            grid,
            values: vec![0.0; grid.n()],
        }
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.grid.width + j]
    }
}

/// Intersection lengths of the line `origin + t * dir` (any `t`) with the
/// pixels of `grid`, as `(pixel index, length)` pairs in traversal order.
///
/// Siddon-style: all crossings of vertical and horizontal grid lines inside
/// the grid box are merged, and each segment between consecutive crossings is
/// attributed to the pixel containing its midpoint.
pub fn ray_pixel_intersections(grid: Grid, origin: (f64, f64), dir: (f64, f64)) -> Vec<(usize, f64)> {
    let (w, h) = (grid.width as f64, grid.height as f64);
    let (xmin, xmax, ymin, ymax) = (-w / 2.0, w / 2.0, -h / 2.0, h / 2.0);
    let norm = (dir.0 * dir.0 + dir.1 * dir.1).sqrt();
    assert!(norm > 0.0, "ray direction must be nonzero");
    let (dx, dy) = (dir.0 / norm, dir.1 / norm);

    // Clip to the grid box (slab method).
    let mut t0 = f64::NEG_INFINITY;
    let mut t1 = f64::INFINITY;
    for (o, d, lo, hi) in [(origin.0, dx, xmin, xmax), (origin.1, dy, ymin, ymax)] {
        if d == 0.0 {
            if o < lo || o > hi {
                return Vec::new();
            }
        } else {
            let (a, b) = ((lo - o) / d, (hi - o) / d);
            t0 = t0.max(a.min(b));
            t1 = t1.min(a.max(b));
        }
    }
    if t1 <= t0 {
        return Vec::new();
    }

    let mut ts = vec![t0, t1];
    if dx != 0.0 {
        for k in 0..=grid.width {
            let t = (xmin + k as f64 - origin.0) / dx;
            if t > t0 && t < t1 {
                ts.push(t);
            }
        }
    }
    if dy != 0.0 {
        for k in 0..=grid.height {
            let t = (ymin + k as f64 - origin.1) / dy;
            if t > t0 && t < t1 {
                ts.push(t);
            }
        }
    }
    ts.sort_by(f64::total_cmp);

    let mut out = Vec::new();
    for pair in ts.windows(2) {
        let len = pair[1] - pair[0];
        if len <= 1e-12 {
            continue;
        }
        let tm = 0.5 * (pair[0] + pair[1]);
        let (x, y) = (origin.0 + tm * dx, origin.1 + tm * dy);
        let j = ((x - xmin).floor() as isize).clamp(0, grid.width as isize - 1) as usize;
        let i = ((ymax - y).floor() as isize).clamp(0, grid.height as isize - 1) as usize;
        out.push((i * grid.width + j, len));
    }
    out
}

/// The 0-degree projector `T`: `n_rays` vertical, equispaced rays across the
/// grid width; entry `(r, j)` is the length of ray `r` inside pixel `j`.
pub fn build_projector(grid: Grid, n_rays: usize) -> Result<CsrMatrix, TomoError> {
    if n_rays == 0 {
        return Err(TomoError::NoRays);
    }
    let w = grid.width as f64;
    let spacing = w / n_rays as f64;
    let rows = (0..n_rays)
        .map(|r| {
            let x = -w / 2.0 + (r as f64 + 0.5) * spacing;
            ray_pixel_intersections(grid, (x, grid.height as f64), (0.0, -1.0))
        })
        .collect();
    Ok(CsrMatrix::from_rows(grid.n(), rows))
}

/// `(cos, sin)` of an angle in degrees, exact at multiples of 90.
fn cos_sin_deg(theta: f64) -> (f64, f64) {
    let q = theta / 90.0;
    if q == q.round() {
        match (q.round() as i64).rem_euclid(4) {
            0 => (1.0, 0.0),
            1 => (0.0, 1.0),
            2 => (-1.0, 0.0),
            _ => (0.0, -1.0),
        }
    } else {
        let r = theta * PI / 180.0;
        (r.cos(), r.sin())
    }
}

/// Source position (fractional row, column) sampled by target pixel `(i, j)`
/// under a counterclockwise rotation with the given cosine and sine.
fn preimage(grid: Grid, c: f64, s: f64, i: usize, j: usize) -> (f64, f64) {
    let (x, y) = grid.pixel_center(i, j);
    let ux = c * x + s * y;
    let uy = -s * x + c * y;
    let cx = (grid.width as f64 - 1.0) / 2.0;
    let cy = (grid.height as f64 - 1.0) / 2.0;
    (cy - uy, ux + cx)
}

/// Bilinear stencil at fractional source position `(row, col)`: four
/// `(row, col, weight)` candidates with zero padding applied by the caller.
fn bilinear_stencil(row: f64, col: f64) -> [(isize, isize, f64); 4] {
    let (r0, c0) = (row.floor(), col.floor());
    let (fr, fc) = (row - r0, col - c0);
    let (r0, c0) = (r0 as isize, c0 as isize);
    [
        (r0, c0, (1.0 - fr) * (1.0 - fc)),
        (r0, c0 + 1, (1.0 - fr) * fc),
        (r0 + 1, c0, fr * (1.0 - fc)),
        (r0 + 1, c0 + 1, fr * fc),
    ]
}

fn in_grid(grid: Grid, r: isize, c: isize) -> Option<usize> {
    (r >= 0 && c >= 0 && (r as usize) < grid.height && (c as usize) < grid.width)
        .then(|| r as usize * grid.width + c as usize)
}

fn rotation_row(grid: Grid, c: f64, s: f64, i: usize, j: usize) -> Vec<(usize, f64)> {
    let (row, col) = preimage(grid, c, s, i, j);
    bilinear_stencil(row, col)
        .into_iter()
        .filter(|&(_, _, wgt)| wgt != 0.0)
        .filter_map(|(r, cc, wgt)| in_grid(grid, r, cc).map(|k| (k, wgt)))
        .collect()
}

/// `R(theta)`: counterclockwise rotation of an image about the grid center by
/// bilinear interpolation with zero padding. `(R f)(x) = f(Rot(-theta) x)`.
pub fn build_rotation(grid: Grid, theta_deg: f64) -> CsrMatrix {
    assert!(theta_deg.is_finite(), "rotation angle must be finite");
    let (c, s) = cos_sin_deg(theta_deg);
    let rows = (0..grid.height)
        .flat_map(|i| (0..grid.width).map(move |j| (i, j)))
        .map(|(i, j)| rotation_row(grid, c, s, i, j))
        .collect();
    CsrMatrix::from_rows(grid.n(), rows)
}

/// How `dR/dtheta` is evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum DerivativeMode {
    /// Differentiate the bilinear weights; rows whose stencil would change
    /// cells within the finite-difference step fall back to central
    /// differences.
    #[default]
    Analytic,
    /// Central differences of the rotation weights everywhere.
    FiniteDifference,
}

/// Finite-difference step for rotation derivatives, in degrees.
pub const ROTATION_FD_STEP_DEG: f64 = 1e-4;

/// Derivative of `R(theta)` with respect to `theta` in degrees.
#[derive(Clone, Debug)]
pub struct RotationDerivative {
    pub matrix: CsrMatrix,
    /// Rows evaluated by the finite-difference fallback.
    pub kink_rows: usize,
}

fn fd_rotation_row(grid: Grid, theta: f64, i: usize, j: usize) -> Vec<(usize, f64)> {
    let h = ROTATION_FD_STEP_DEG;
    let (cp, sp) = cos_sin_deg(theta + h);
    let (cm, sm) = cos_sin_deg(theta - h);
    let mut row: Vec<(usize, f64)> = rotation_row(grid, cp, sp, i, j)
        .into_iter()
        .map(|(k, v)| (k, v / (2.0 * h)))
        .collect();
    row.extend(
        rotation_row(grid, cm, sm, i, j)
            .into_iter()
            .map(|(k, v)| (k, -v / (2.0 * h))),
    );
    row
}

pub fn rotation_derivative(grid: Grid, theta_deg: f64, mode: DerivativeMode) -> RotationDerivative {
    assert!(theta_deg.is_finite(), "rotation angle must be finite");
    let rad = PI / 180.0;
    let r = theta_deg * rad;
    let (c, s) = (r.cos(), r.sin());
    let cx = (grid.width as f64 - 1.0) / 2.0;
    let cy = (grid.height as f64 - 1.0) / 2.0;
    let mut kink_rows = 0;
    let mut rows = Vec::with_capacity(grid.n());
    for i in 0..grid.height {
        for j in 0..grid.width {
            if mode == DerivativeMode::FiniteDifference {
                rows.push(fd_rotation_row(grid, theta_deg, i, j));
                continue;
            }
            let (x, y) = grid.pixel_center(i, j);
            let ux = c * x + s * y;
            let uy = -s * x + c * y;
            let (row, col) = (cy - uy, ux + cx);
            // d(row)/dθ = ux, d(col)/dθ = uy, per radian.
            let (drow, dcol) = (ux * rad, uy * rad);
            let (fr, fc) = (row - row.floor(), col - col.floor());
            let guard_r = 2.0 * drow.abs() * ROTATION_FD_STEP_DEG + 1e-9;
            let guard_c = 2.0 * dcol.abs() * ROTATION_FD_STEP_DEG + 1e-9;
            if fr.min(1.0 - fr) < guard_r || fc.min(1.0 - fc) < guard_c {
                kink_rows += 1;
                rows.push(fd_rotation_row(grid, theta_deg, i, j));
                continue;
            }
            let (r0, c0) = (row.floor() as isize, col.floor() as isize);
            let stencil = [
                (r0, c0, -drow * (1.0 - fc) - (1.0 - fr) * dcol),
                (r0, c0 + 1, -drow * fc + (1.0 - fr) * dcol),
                (r0 + 1, c0, drow * (1.0 - fc) - fr * dcol),
                (r0 + 1, c0 + 1, drow * fc + fr * dcol),
            ];
            rows.push(
                stencil
                    .into_iter()
                    .filter_map(|(rr, cc, v)| in_grid(grid, rr, cc).map(|k| (k, v)))
                    .collect(),
            );
        }
    }
    RotationDerivative {
        matrix: CsrMatrix::from_rows(grid.n(), rows),
        kink_rows,
    }
}

/// Computes both derivative paths and fails when they disagree by more than
/// `1e-3` relative in the Frobenius norm.
pub fn check_rotation_derivative(grid: Grid, theta_deg: f64) -> Result<f64, TomoError> {
    let a = rotation_derivative(grid, theta_deg, DerivativeMode::Analytic).matrix.to_dense();
    let f = rotation_derivative(grid, theta_deg, DerivativeMode::FiniteDifference)
        .matrix
        .to_dense();
    let diff = (&a - &f).norm_l2();
    let rel = diff / f.norm_l2().max(f64::MIN_POSITIVE);
    if rel > 1e-3 {
        return Err(TomoError::DerivativeMismatch {
            theta: theta_deg,
            rel_diff: rel,
        });
    }
    Ok(rel)
}

/// Per-angle blocks `A_k = T R(theta_k)` for a fixed angle grid, built once
/// and shared by every Problem-A design on that grid.
#[derive(Debug)]
pub struct ProjectionBank {
    grid: Grid,
    n_rays: usize,
    angles: Vec<f64>,
    blocks: Vec<CsrMatrix>,
}

impl ProjectionBank {
    pub fn new(grid: Grid, n_rays: usize, angles: &[f64]) -> Result<Self, TomoError> {
        let t = build_projector(grid, n_rays)?;
        if let Some(&a) = angles.iter().find(|a| !a.is_finite()) {
            return Err(TomoError::NonFiniteAngle(a));
        }
        let blocks = angles
            .par_iter()
            .map(|&a| t.matmul(&build_rotation(grid, a)))
            .collect();
        Ok(Self {
            grid,
            n_rays,
            angles: angles.to_vec(),
            blocks,
        })
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn n_rays(&self) -> usize {
        self.n_rays
    }

    pub fn angles(&self) -> &[f64] {
        &self.angles
    }

    pub fn block(&self, k: usize) -> &CsrMatrix {
        &self.blocks[k]
    }

    pub fn len(&self) -> usize {
        self.angles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.angles.is_empty()
    }

    /// The full stacked operator (all weights one).
    pub fn stacked(&self) -> CsrMatrix {
        let refs: Vec<&CsrMatrix> = self.blocks.iter().collect();
        CsrMatrix::vstack(&refs)
    }
}

/// Default support threshold of a Problem-A design: `1e-8 * max(p)`.
pub fn support_threshold(p: &[f64]) -> f64 {
    1e-8 * p.iter().cloned().fold(0.0, f64::max)
}

/// Problem-A forward map: stacks `p_i T R(theta_i)` over the support
/// `{i : p_i > threshold}` in ascending `i`.
#[derive(Debug, Clone)]
pub struct ForwardOperatorA {
    bank: Arc<ProjectionBank>,
    weights: Vec<f64>,
    support: Vec<usize>,
    matrix: Arc<CsrMatrix>,
}

impl ForwardOperatorA {
    pub fn assemble(bank: Arc<ProjectionBank>, p: &[f64], threshold: f64) -> Result<Self, TomoError> {
        if p.len() != bank.len() {
            return Err(TomoError::LengthMismatch {
                expected: bank.len(),
                got: p.len(),
            });
        }
        if let Some((index, &value)) = p.iter().enumerate().find(|(_, v)| !(**v >= 0.0)) {
            return Err(TomoError::NegativeWeight { index, value });
        }
        let support: Vec<usize> = (0..p.len()).filter(|&i| p[i] > threshold).collect();
        let scaled: Vec<CsrMatrix> = support.iter().map(|&i| bank.block(i).scaled(p[i])).collect();
        let refs: Vec<&CsrMatrix> = scaled.iter().collect();
        let matrix = if refs.is_empty() {
            CsrMatrix::zeros(0, bank.grid.n())
        } else {
            CsrMatrix::vstack(&refs)
        };
        Ok(Self {
            bank,
            weights: p.to_vec(),
            support,
            matrix: Arc::new(matrix),
        })
    }

    pub fn bank(&self) -> &Arc<ProjectionBank> {
        &self.bank
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn support(&self) -> &[usize] {
        &self.support
    }

    pub fn n_rays(&self) -> usize {
        self.bank.n_rays
    }

    /// The assembled sparse matrix `M(p)`.
    pub fn matrix(&self) -> &Arc<CsrMatrix> {
        &self.matrix
    }
}

impl LinearOperator for ForwardOperatorA {
    fn nrows(&self) -> usize {
        self.matrix.nrows()
    }

    fn ncols(&self) -> usize {
        self.matrix.ncols()
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.matrix.apply(x)
    }

    fn apply_transpose(&self, y: &[f64]) -> Vec<f64> {
        self.matrix.apply_transpose(y)
    }
}

/// Builds a [`ForwardOperatorA`] from scratch; see [`ProjectionBank`] to share
/// the per-angle blocks across designs.
pub fn assemble_forward_a(
    angles: &[f64],
    p: &[f64],
    grid: Grid,
    n_rays: usize,
    threshold: f64,
) -> Result<ForwardOperatorA, TomoError> {
    if p.len() != angles.len() {
        return Err(TomoError::LengthMismatch {
            expected: angles.len(),
            got: p.len(),
        });
    }
    let bank = Arc::new(ProjectionBank::new(grid, n_rays, angles)?);
    ForwardOperatorA::assemble(bank, p, threshold)
}

/// Problem-B forward map: stacks `T R(p_k)` for `k = 1..l`.
#[derive(Debug, Clone)]
pub struct ForwardOperatorB {
    grid: Grid,
    n_rays: usize,
    angles: Vec<f64>,
    projector: Arc<CsrMatrix>,
    blocks: Vec<CsrMatrix>,
    matrix: Arc<CsrMatrix>,
}

impl ForwardOperatorB {
    /// Assembles with a prebuilt projector `T` for `grid` and `n_rays`.
    pub fn with_projector(
        grid: Grid,
        projector: Arc<CsrMatrix>,
        angles: &[f64],
    ) -> Result<Self, TomoError> {
        for (index, &value) in angles.iter().enumerate() {
            if !(0.0..=180.0).contains(&value) {
                return Err(TomoError::AngleOutOfRange { index, value });
            }
        }
        let blocks: Vec<CsrMatrix> = angles
            .iter()
            .map(|&a| projector.matmul(&build_rotation(grid, a)))
            .collect();
        let refs: Vec<&CsrMatrix> = blocks.iter().collect();
        let matrix = if refs.is_empty() {
            CsrMatrix::zeros(0, grid.n())
        } else {
            CsrMatrix::vstack(&refs)
        };
        Ok(Self {
            grid,
            n_rays: projector.nrows(),
            angles: angles.to_vec(),
            projector,
            blocks,
            matrix: Arc::new(matrix),
        })
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn n_rays(&self) -> usize {
        self.n_rays
    }

    pub fn angles(&self) -> &[f64] {
        &self.angles
    }

    pub fn block(&self, k: usize) -> &CsrMatrix {
        &self.blocks[k]
    }

    pub fn matrix(&self) -> &Arc<CsrMatrix> {
        &self.matrix
    }

    /// `T dR/dtheta` at angle `k`, per degree.
    pub fn block_derivative(&self, k: usize, mode: DerivativeMode) -> CsrMatrix {
        self.projector
            .matmul(&rotation_derivative(self.grid, self.angles[k], mode).matrix)
    }
}

impl LinearOperator for ForwardOperatorB {
    fn nrows(&self) -> usize {
        self.matrix.nrows()
    }

    fn ncols(&self) -> usize {
        self.matrix.ncols()
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.matrix.apply(x)
    }

    fn apply_transpose(&self, y: &[f64]) -> Vec<f64> {
        self.matrix.apply_transpose(y)
    }
}

pub fn assemble_forward_b(p: &[f64], grid: Grid, n_rays: usize) -> Result<ForwardOperatorB, TomoError> {
    let t = Arc::new(build_projector(grid, n_rays)?);
    ForwardOperatorB::with_projector(grid, t, p)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rotation_by_zero_is_identity() {
        let g = Grid::square(5).unwrap();
        assert_eq!(build_rotation(g, 0.0), CsrMatrix::identity(25));
        assert_eq!(build_rotation(g, 360.0), CsrMatrix::identity(25));
    }

    #[test]
    fn exact_quarter_turns() {
        assert_eq!(cos_sin_deg(90.0), (0.0, 1.0));
        assert_eq!(cos_sin_deg(-90.0), (0.0, -1.0));
        assert_eq!(cos_sin_deg(180.0), (-1.0, 0.0));
    }

    #[test]
    fn projector_rows_have_unit_column_lengths() {
        let g = Grid::square(6).unwrap();
        let t = build_projector(g, 6).unwrap();
        for r in 0..6 {
            let (cols, vals) = t.row(r);
            assert_eq!(cols.len(), 6);
            assert!(cols.iter().all(|&c| c % 6 == r));
            assert!(vals.iter().all(|&v| (v - 1.0).abs() < 1e-12));
        }
    }

    #[test]
    fn grid_rejects_non_square() {
        assert!(Grid::new(4, 5).is_err());
        assert!(Grid::new(1, 1).is_err());
    }
}
