//! Synthetic training sets and measurement simulation.

use std::f64::consts::PI;

use rand::Rng;
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::rng::{stream_rng, streams};
use crate::sparse::LinearOperator;
use crate::tomo::{Grid, Image};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DataError {
    #[error("grid {got}x{got} is too small for {dataset} (need at least {min}x{min})")]
    GridTooSmall {
        dataset: &'static str,
        min: usize,
        got: usize,
    },
    #[error("sample count must be at least 1")]
    EmptyCount,
    #[error("forward operator has no rows")]
    EmptyOperator,
    #[error("image has {got} pixels, operator expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("relative noise level {0} must be finite and nonnegative")]
    InvalidNoise(f64),
    #[error("training set images must share one grid")]
    MixedGrids,
}

/// `N` ground-truth images on one grid.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingSet {
    pub name: String,
    pub seed: u64,
    grid: Grid,
    images: Vec<Image>,
}

impl TrainingSet {
    pub fn new(name: impl Into<String>, seed: u64, grid: Grid, images: Vec<Image>) -> Result<Self, DataError> {
        if images.is_empty() {
            return Err(DataError::EmptyCount);
        }
        if images.iter().any(|im| im.grid() != grid) {
            return Err(DataError::MixedGrids);
        }
        Ok(Self {
            name: name.into(),
            seed,
            grid,
            images,
        })
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn images(&self) -> &[Image] {
        &self.images
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Copy holding only the first `count` images.
    pub fn truncated(&self, count: usize) -> Self {
        Self {
            name: self.name.clone(),
            seed: self.seed,
            grid: self.grid,
            images: self.images[..count.min(self.images.len())].to_vec(),
        }
    }
}

/// Additive Gaussian noise with standard deviation
/// `relative_level * ||M f|| / sqrt(m)` per component.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseSpec {
    pub relative_level: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(relative_level: f64, seed: u64) -> Result<Self, DataError> {
        if !(relative_level.is_finite() && relative_level >= 0.0) {
            return Err(DataError::InvalidNoise(relative_level));
        }
        Ok(Self { relative_level, seed })
    }

    pub fn noiseless() -> Self {
        Self {
            relative_level: 0.0,
            seed: 0,
        }
    }
}

/// Standard normal vector `z` of length `m` for training sample `sample`.
pub fn noise_direction(m: usize, seed: u64, sample: u64) -> Vec<f64> {
    let mut rng = stream_rng(seed, streams::NOISE_BASE + sample);
    (0..m).map(|_| rng.sample(StandardNormal)).collect()
}

/// `d = M f + eps`, with `eps` drawn from the noise stream of `sample`.
pub fn simulate_data(
    m: &dyn LinearOperator,
    f: &[f64],
    noise: &NoiseSpec,
    sample: u64,
) -> Result<Vec<f64>, DataError> {
    if m.nrows() == 0 {
        return Err(DataError::EmptyOperator);
    }
    if f.len() != m.ncols() {
        return Err(DataError::DimensionMismatch {
            expected: m.ncols(),
            got: f.len(),
        });
    }
    let mut d = m.apply(f);
    if noise.relative_level > 0.0 {
        let rows = d.len();
        let scale = noise.relative_level * crate::linalg::norm2(&d) / (rows as f64).sqrt();
        let z = noise_direction(rows, noise.seed, sample);
        d.iter_mut().zip(&z).for_each(|(di, zi)| *di += scale * zi);
    }
    Ok(d)
}

fn check_grid(dataset: &'static str, grid: Grid, min: usize) -> Result<(), DataError> {
    if grid.width() < min {
        return Err(DataError::GridTooSmall {
            dataset,
            min,
            got: grid.width(),
        });
    }
    Ok(())
}

fn build_set(
    name: &str,
    count: usize,
    grid: Grid,
    seed: u64,
    mut sample: impl FnMut(&mut ChaCha20Rng) -> Vec<f64>,
) -> Result<TrainingSet, DataError> {
    if count == 0 {
        return Err(DataError::EmptyCount);
    }
    let mut rng = stream_rng(seed, streams::DATASET);
    let images = (0..count)
        .map(|_| Image::new(grid, sample(&mut rng)).expect("generator produced a malformed image"))
        .collect();
    TrainingSet::new(name, seed, grid, images)
}

/// Binary images holding one axis-aligned rectangle each. Side lengths are
/// uniform integers in `[2, size/2]`, the top-left corner uniform over all
/// positions that keep the rectangle inside the grid.
pub fn gen_rectangles(count: usize, grid: Grid, seed: u64) -> Result<TrainingSet, DataError> {
    check_grid("rectangles", grid, 8)?;
    let size = grid.width();
    build_set("rectangles", count, grid, seed, |rng| {
        let rh = rng.gen_range(2..=size / 2);
        let rw = rng.gen_range(2..=size / 2);
        let top = rng.gen_range(0..=size - rh);
        let left = rng.gen_range(0..=size - rw);
        let mut v = vec![0.0; size * size];
        for i in top..top + rh {
            v[i * size + left..i * size + left + rw].fill(1.0);
        }
        v
    })
}

/// Angle (degrees, y-up frame) of the first pentagon vertex; the others follow
/// every 72 degrees. With this phase the edge normals, measured in image
/// coordinates (rows pointing down), sit at 27, 63, 99, 135 and 171 degrees
/// modulo 180.
pub const PENTAGON_VERTEX_PHASE_DEG: f64 = -27.0;

/// Vertices of the regular pentagon with the dataset orientation, in the y-up
/// pixel frame of [`Grid::pixel_center`], counterclockwise.
pub fn pentagon_vertices(center: (f64, f64), radius: f64) -> [(f64, f64); 5] {
    std::array::from_fn(|k| {
        let a = (PENTAGON_VERTEX_PHASE_DEG + 72.0 * k as f64) * PI / 180.0;
        (center.0 + radius * a.cos(), center.1 + radius * a.sin())
    })
}

fn inside_convex(poly: &[(f64, f64)], x: f64, y: f64) -> bool {
    (0..poly.len()).all(|k| {
        let (ax, ay) = poly[k];
        let (bx, by) = poly[(k + 1) % poly.len()];
        (bx - ax) * (y - ay) - (by - ay) * (x - ax) >= 0.0
    })
}

/// Binary images of filled regular pentagons sharing one orientation. The
/// circumradius is uniform in `[max(3, size/10), size/4]` and the circumcircle
/// stays inside the disk inscribed in the grid, so no rotation crops a shape.
pub fn gen_pentagons(count: usize, grid: Grid, seed: u64) -> Result<TrainingSet, DataError> {
    check_grid("pentagons", grid, 8)?;
    let size = grid.width();
    let half = size as f64 / 2.0;
    let r_hi = size as f64 / 4.0;
    let r_lo = (size as f64 / 10.0).max(3.0).min(r_hi);
    build_set("pentagons", count, grid, seed, |rng| {
        let r = rng.gen_range(r_lo..=r_hi);
        let reach = half - 0.5 - r;
        let (cx, cy) = loop {
            let cx = rng.gen_range(-reach..=reach);
            let cy = rng.gen_range(-reach..=reach);
            if cx * cx + cy * cy <= reach * reach {
                break (cx, cy);
            }
        };
        let poly = pentagon_vertices((cx, cy), r);
        let mut v = vec![0.0; size * size];
        for i in 0..size {
            for j in 0..size {
                let (x, y) = grid.pixel_center(i, j);
                if inside_convex(&poly, x, y) {
                    v[i * size + j] = 1.0;
                }
            }
        }
        v
    })
}

/// One smooth-shape sample: the image and its support mask.
fn shape_sample(rng: &mut ChaCha20Rng, grid: Grid) -> (Vec<f64>, Vec<bool>) {
    let size = grid.width();
    let s = size as f64;
    let modes: Vec<(f64, f64, f64, f64)> = (0..10)
        .map(|_| {
            let (u, v) = loop {
                let u: i32 = rng.gen_range(-3..=3);
                let v: i32 = rng.gen_range(-3..=3);
                if u != 0 || v != 0 {
                    break (u, v);
                }
            };
            let amp = rng.gen_range(0.5..1.0);
            let phase = rng.gen_range(0.0..2.0 * PI);
            (u as f64, v as f64, amp, phase)
        })
        .collect();
    let r0 = rng.gen_range(0.2 * s..0.35 * s);
    let harmonics: Vec<(f64, f64, f64)> = (2..=4)
        .map(|m| (m as f64, rng.gen_range(0.0..0.15), rng.gen_range(0.0..2.0 * PI)))
        .collect();
    let r_max = r0 * (1.0 + harmonics.iter().map(|h| h.1).sum::<f64>());
    let reach = (s / 2.0 - 0.5 - r_max).max(0.0);
    let (cx, cy) = loop {
        let cx = rng.gen_range(-reach..=reach);
        let cy = rng.gen_range(-reach..=reach);
        if cx * cx + cy * cy <= reach * reach {
            break (cx, cy);
        }
    };

    let mut mask = vec![false; size * size];
    let mut field = vec![0.0; size * size];
    for i in 0..size {
        for j in 0..size {
            let (x, y) = grid.pixel_center(i, j);
            let (dx, dy) = (x - cx, y - cy);
            let phi = dy.atan2(dx);
            let radius = r0 * (1.0 + harmonics.iter().map(|&(m, b, psi)| b * (m * phi + psi).cos()).sum::<f64>());
            let k = i * size + j;
            mask[k] = (dx * dx + dy * dy).sqrt() <= radius;
            field[k] = modes
                .iter()
                .map(|&(u, v, a, ph)| a * (2.0 * PI * (u * x + v * y) / s + ph).cos())
                .sum();
        }
    }
    let (lo, hi) = mask
        .iter()
        .zip(&field)
        .filter(|(m, _)| **m)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (_, &f)| (lo.min(f), hi.max(f)));
    let span = hi - lo;
    let values = mask
        .iter()
        .zip(&field)
        .map(|(&m, &f)| {
            if !m {
                0.0
            } else if span > 0.0 {
                ((f - lo) / span).clamp(0.0, 1.0)
            } else {
                1.0
            }
        })
        .collect();
    (values, mask)
}

/// Gray-valued smooth fields (ten random low-frequency cosine modes rescaled
/// to `[0, 1]`) masked by a random star-shaped smooth blob.
pub fn gen_shapes(count: usize, grid: Grid, seed: u64) -> Result<TrainingSet, DataError> {
    gen_shapes_with_support(count, grid, seed).map(|(ts, _)| ts)
}

/// [`gen_shapes`] together with the support mask of every image.
pub fn gen_shapes_with_support(
    count: usize,
    grid: Grid,
    seed: u64,
) -> Result<(TrainingSet, Vec<Vec<bool>>), DataError> {
    check_grid("shapes", grid, 8)?;
    let mut masks = Vec::with_capacity(count);
    let ts = build_set("shapes", count, grid, seed, |rng| {
        let (values, mask) = shape_sample(rng, grid);
        masks.push(mask);
        values
    })?;
    Ok((ts, masks))
}

/// Random perturbation magnitudes for [`gen_phantoms`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhantomParams {
    /// Relative jitter of the head and ventricle semi-axes.
    pub axis_jitter: f64,
    /// Global rotation range in degrees (symmetric).
    pub rotation_jitter_deg: f64,
    /// Relative jitter of every ellipse intensity.
    pub intensity_jitter: f64,
    /// Extra small "tumor" ellipses, uniform in `0..=max_tumors`.
    pub max_tumors: usize,
}

impl Default for PhantomParams {
    fn default() -> Self {
        Self {
            axis_jitter: 0.1,
            rotation_jitter_deg: 10.0,
            intensity_jitter: 0.1,
            max_tumors: 3,
        }
    }
}

impl PhantomParams {
    pub fn unperturbed() -> Self {
        Self {
            axis_jitter: 0.0,
            rotation_jitter_deg: 0.0,
            intensity_jitter: 0.0,
            max_tumors: 0,
        }
    }
}

/// One ellipse of a phantom on `[-1, 1]^2` (y up): intensity, semi-axes,
/// center and orientation in degrees.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ellipse {
    pub intensity: f64,
    pub a: f64,
    pub b: f64,
    pub x0: f64,
    pub y0: f64,
    pub phi_deg: f64,
}

/// Modified Shepp-Logan ellipse table (Toft's contrast-enhanced intensities).
pub const MODIFIED_SHEPP_LOGAN: [Ellipse; 10] = [
    Ellipse { intensity: 1.0, a: 0.69, b: 0.92, x0: 0.0, y0: 0.0, phi_deg: 0.0 },
    Ellipse { intensity: -0.8, a: 0.6624, b: 0.874, x0: 0.0, y0: -0.0184, phi_deg: 0.0 },
    Ellipse { intensity: -0.2, a: 0.11, b: 0.31, x0: 0.22, y0: 0.0, phi_deg: -18.0 },
    Ellipse { intensity: -0.2, a: 0.16, b: 0.41, x0: -0.22, y0: 0.0, phi_deg: 18.0 },
    Ellipse { intensity: 0.1, a: 0.21, b: 0.25, x0: 0.0, y0: 0.35, phi_deg: 0.0 },
    Ellipse { intensity: 0.1, a: 0.046, b: 0.046, x0: 0.0, y0: 0.1, phi_deg: 0.0 },
    Ellipse { intensity: 0.1, a: 0.046, b: 0.046, x0: 0.0, y0: -0.1, phi_deg: 0.0 },
    Ellipse { intensity: 0.1, a: 0.046, b: 0.023, x0: -0.08, y0: -0.605, phi_deg: 0.0 },
    Ellipse { intensity: 0.1, a: 0.023, b: 0.023, x0: 0.0, y0: -0.606, phi_deg: 0.0 },
    Ellipse { intensity: 0.1, a: 0.023, b: 0.046, x0: 0.06, y0: -0.605, phi_deg: 0.0 },
];

/// Rasterizes a superposition of ellipses by pixel-center sampling, clipped to
/// `[0, 1]`.
pub fn rasterize_ellipses(grid: Grid, ellipses: &[Ellipse]) -> Vec<f64> {
    let size = grid.width();
    let s = size as f64;
    let mut v = vec![0.0; size * size];
    for i in 0..size {
        for j in 0..size {
            let x = 2.0 * (j as f64 + 0.5) / s - 1.0;
            let y = 1.0 - 2.0 * (i as f64 + 0.5) / s;
            let mut acc = 0.0;
            for e in ellipses {
                let (sn, cs) = (e.phi_deg * PI / 180.0).sin_cos();
                let (dx, dy) = (x - e.x0, y - e.y0);
                let u = dx * cs + dy * sn;
                let w = -dx * sn + dy * cs;
                if (u / e.a).powi(2) + (w / e.b).powi(2) <= 1.0 {
                    acc += e.intensity;
                }
            }
            v[i * size + j] = acc.clamp(0.0, 1.0);
        }
    }
    v
}

fn jitter(rng: &mut ChaCha20Rng, amount: f64) -> f64 {
    1.0 + amount * rng.gen_range(-1.0..=1.0)
}

fn perturbed_phantom(rng: &mut ChaCha20Rng, params: &PhantomParams) -> Vec<Ellipse> {
    let mut es = MODIFIED_SHEPP_LOGAN.to_vec();
    // Skull and brain share their scaling so the skull keeps its thickness.
    let (sa, sb) = (jitter(rng, params.axis_jitter), jitter(rng, params.axis_jitter));
    for e in &mut es[..2] {
        e.a *= sa;
        e.b *= sb;
        e.y0 *= sb;
    }
    for e in &mut es[2..4] {
        e.a *= jitter(rng, params.axis_jitter);
        e.b *= jitter(rng, params.axis_jitter);
    }
    for e in &mut es {
        e.intensity *= jitter(rng, params.intensity_jitter);
    }
    let n_tumors = rng.gen_range(0..=params.max_tumors);
    for _ in 0..n_tumors {
        let r = 0.5 * rng.gen_range(0.0f64..1.0).sqrt();
        let t = rng.gen_range(0.0..2.0 * PI);
        es.push(Ellipse {
            intensity: rng.gen_range(0.1..0.3),
            a: rng.gen_range(0.03..0.08),
            b: rng.gen_range(0.03..0.08),
            x0: r * t.cos(),
            y0: r * t.sin(),
            phi_deg: rng.gen_range(0.0..180.0),
        });
    }
    let rot = params.rotation_jitter_deg * rng.gen_range(-1.0..=1.0);
    let (sn, cs) = (rot * PI / 180.0).sin_cos();
    for e in &mut es {
        let (x, y) = (e.x0, e.y0);
        e.x0 = cs * x - sn * y;
        e.y0 = sn * x + cs * y;
        e.phi_deg += rot;
    }
    es
}

/// Randomly perturbed Modified Shepp-Logan phantoms.
pub fn gen_phantoms(count: usize, grid: Grid, seed: u64, params: &PhantomParams) -> Result<TrainingSet, DataError> {
    check_grid("phantoms", grid, 8)?;
    build_set("phantoms", count, grid, seed, |rng| {
        rasterize_ellipses(grid, &perturbed_phantom(rng, params))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pentagon_vertices_are_counterclockwise() {
        let p = pentagon_vertices((0.0, 0.0), 5.0);
        assert!(inside_convex(&p, 0.0, 0.0));
        assert!(!inside_convex(&p, 6.0, 0.0));
    }

    #[test]
    fn rectangles_reject_tiny_grid() {
        let g = Grid::square(4).unwrap();
        assert!(matches!(gen_rectangles(1, g, 0), Err(DataError::GridTooSmall { .. })));
    }
}
