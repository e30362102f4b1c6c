use oedtomo::datagen::{
    gen_pentagons, gen_phantoms, gen_rectangles, gen_shapes, gen_shapes_with_support, noise_direction,
    pentagon_vertices, simulate_data, DataError, NoiseSpec, PhantomParams, TrainingSet, MODIFIED_SHEPP_LOGAN,
};
use oedtomo::io::tomoset_to_string;
use oedtomo::tomo::assemble_forward_b;
use oedtomo::{Grid, LinearOperator};

fn grid(size: usize) -> Grid {
    Grid::square(size).unwrap()
}

fn all_binary(ts: &TrainingSet) -> bool {
    ts.images().iter().all(|im| im.values().iter().all(|&v| v == 0.0 || v == 1.0))
}

fn in_unit_range(ts: &TrainingSet) -> bool {
    ts.images().iter().all(|im| im.values().iter().all(|&v| (0.0..=1.0).contains(&v)))
}

#[test]
fn rectangles_are_binary_and_contained() {
    let ts = gen_rectangles(20, grid(40), 7).unwrap();
    assert_eq!(ts.len(), 20);
    assert_eq!(ts.grid(), grid(40));
    assert!(all_binary(&ts));
    for im in ts.images() {
        let ones: Vec<(usize, usize)> = (0..40)
            .flat_map(|i| (0..40).map(move |j| (i, j)))
            .filter(|&(i, j)| im.get(i, j) == 1.0)
            .collect();
        assert!(ones.len() >= 4);
        // The ones fill their bounding box exactly: one axis-aligned rectangle.
        let (i0, i1) = (ones.iter().map(|p| p.0).min().unwrap(), ones.iter().map(|p| p.0).max().unwrap());
        let (j0, j1) = (ones.iter().map(|p| p.1).min().unwrap(), ones.iter().map(|p| p.1).max().unwrap());
        assert_eq!(ones.len(), (i1 - i0 + 1) * (j1 - j0 + 1));
    }
}

#[test]
fn generators_are_deterministic_per_seed() {
    let g = grid(24);
    let params = PhantomParams::default();
    let pairs = [
        (gen_rectangles(5, g, 11).unwrap(), gen_rectangles(5, g, 11).unwrap()),
        (gen_pentagons(5, g, 11).unwrap(), gen_pentagons(5, g, 11).unwrap()),
        (gen_shapes(5, g, 11).unwrap(), gen_shapes(5, g, 11).unwrap()),
        (gen_phantoms(5, g, 11, &params).unwrap(), gen_phantoms(5, g, 11, &params).unwrap()),
    ];
    for (a, b) in &pairs {
        assert_eq!(tomoset_to_string(a), tomoset_to_string(b));
    }
    assert_ne!(
        tomoset_to_string(&gen_rectangles(5, g, 11).unwrap()),
        tomoset_to_string(&gen_rectangles(5, g, 12).unwrap())
    );
}

#[test]
fn small_grids_are_rejected() {
    let g = grid(4);
    assert!(matches!(gen_rectangles(1, g, 0), Err(DataError::GridTooSmall { .. })));
    assert!(matches!(gen_pentagons(1, g, 0), Err(DataError::GridTooSmall { .. })));
    assert!(matches!(gen_rectangles(0, grid(10), 0), Err(DataError::EmptyCount)));
}

#[test]
fn pentagons_are_binary_and_nonempty() {
    let ts = gen_pentagons(20, grid(40), 3).unwrap();
    assert_eq!(ts.len(), 20);
    assert!(all_binary(&ts));
    assert!(ts.images().iter().all(|im| im.values().iter().sum::<f64>() >= 9.0));
}

#[test]
fn pentagon_edge_normals_share_one_orientation() {
    let want = [27.0, 63.0, 99.0, 135.0, 171.0];
    for &(cx, cy, r) in &[(0.0, 0.0, 5.0), (3.2, -1.7, 4.1), (-6.0, 2.5, 8.8)] {
        let v = pentagon_vertices((cx, cy), r);
        let mut normals: Vec<f64> = (0..5)
            .map(|k| {
                let (a, b) = (v[k], v[(k + 1) % 5]);
                // Outward normal of a counterclockwise polygon, y-up frame,
                // then measured in image coordinates (rows down).
                let (nx, ny) = (b.1 - a.1, -(b.0 - a.0));
                let deg = (-ny).atan2(nx).to_degrees();
                deg.rem_euclid(180.0)
            })
            .collect();
        normals.sort_by(f64::total_cmp);
        for (got, w) in normals.iter().zip(want) {
            assert!((got - w).abs() < 1e-9, "{normals:?}");
        }
    }
}

#[test]
fn shapes_lie_in_unit_range_with_connected_support() {
    let g = grid(40);
    let (ts, masks) = gen_shapes_with_support(20, g, 5).unwrap();
    assert_eq!(ts.len(), 20);
    assert!(in_unit_range(&ts));
    let connected = masks.iter().filter(|m| is_connected(m, 40)).count();
    assert!(connected * 10 >= 9 * masks.len(), "{connected} of {} connected", masks.len());
    for (im, m) in ts.images().iter().zip(&masks) {
        assert!(im.values().iter().zip(m).all(|(&v, &inside)| inside || v == 0.0));
    }
}

/// 4-connectivity flood fill.
fn is_connected(mask: &[bool], size: usize) -> bool {
    let Some(start) = mask.iter().position(|&m| m) else {
        return false;
    };
    let mut seen = vec![false; mask.len()];
    let mut stack = vec![start];
    seen[start] = true;
    while let Some(k) = stack.pop() {
        let (i, j) = (k / size, k % size);
        let mut push = |ii: usize, jj: usize| {
            let kk = ii * size + jj;
            if mask[kk] && !seen[kk] {
                seen[kk] = true;
                stack.push(kk);
            }
        };
        if i > 0 {
            push(i - 1, j);
        }
        if i + 1 < size {
            push(i + 1, j);
        }
        if j > 0 {
            push(i, j - 1);
        }
        if j + 1 < size {
            push(i, j + 1);
        }
    }
    mask.iter().zip(&seen).all(|(&m, &s)| !m || s)
}

#[test]
fn phantoms_lie_in_unit_range() {
    let ts = gen_phantoms(20, grid(64), 9, &PhantomParams::default()).unwrap();
    assert_eq!(ts.len(), 20);
    assert!(in_unit_range(&ts));
    assert!(ts.images().iter().all(|im| im.values().iter().any(|&v| v > 0.0)));
}

#[test]
fn unperturbed_phantom_is_modified_shepp_logan() {
    let size = 64;
    let ts = gen_phantoms(3, grid(size), 1, &PhantomParams::unperturbed()).unwrap();
    // Independent rasterization: quadratic form of each rotated ellipse.
    let mut want = vec![0.0; size * size];
    for i in 0..size {
        for j in 0..size {
            let x = -1.0 + (2 * j + 1) as f64 / size as f64;
            let y = 1.0 - (2 * i + 1) as f64 / size as f64;
            let mut v = 0.0;
            for e in &MODIFIED_SHEPP_LOGAN {
                let t = e.phi_deg.to_radians();
                let (dx, dy) = (x - e.x0, y - e.y0);
                let (a2, b2) = (e.a * e.a, e.b * e.b);
                let (c, s) = (t.cos(), t.sin());
                let q = (c * c / a2 + s * s / b2) * dx * dx
                    + 2.0 * c * s * (1.0 / a2 - 1.0 / b2) * dx * dy
                    + (s * s / a2 + c * c / b2) * dy * dy;
                if q <= 1.0 + 1e-12 {
                    v += e.intensity;
                }
            }
            want[i * size + j] = v.clamp(0.0, 1.0);
        }
    }
    for im in ts.images() {
        let diff = im.values().iter().zip(&want).filter(|(a, b)| (*a - *b).abs() > 1e-12).count();
        assert_eq!(diff, 0);
    }
}

#[test]
fn noiseless_data_is_exact() {
    let g = grid(10);
    let ts = gen_rectangles(1, g, 2).unwrap();
    let m = assemble_forward_b(&[0.0, 45.0, 90.0], g, 10).unwrap();
    let f = ts.images()[0].values();
    assert_eq!(simulate_data(&m, f, &NoiseSpec::noiseless(), 0).unwrap(), m.apply(f));
}

#[test]
fn relative_noise_level_is_respected() {
    let g = grid(20);
    let ts = gen_rectangles(4, g, 2).unwrap();
    let m = assemble_forward_b(&[0.0, 30.0, 60.0, 90.0, 120.0, 150.0], g, 20).unwrap();
    let noise = NoiseSpec::new(0.001, 17).unwrap();
    for (i, im) in ts.images().iter().enumerate() {
        let clean = m.apply(im.values());
        let d = simulate_data(&m, im.values(), &noise, i as u64).unwrap();
        let num: f64 = d.iter().zip(&clean).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let den: f64 = clean.iter().map(|v| v * v).sum::<f64>().sqrt();
        let ratio = num / den;
        assert!((0.0007..=0.0013).contains(&ratio), "sample {i}: {ratio}");
        assert_eq!(d, simulate_data(&m, im.values(), &noise, i as u64).unwrap());
    }
}

#[test]
fn noise_streams_differ_per_sample_and_seed() {
    assert_ne!(noise_direction(8, 1, 0), noise_direction(8, 1, 1));
    assert_ne!(noise_direction(8, 1, 0), noise_direction(8, 2, 0));
    assert_eq!(noise_direction(8, 1, 3), noise_direction(8, 1, 3));
}

#[test]
fn simulation_rejects_empty_operators_and_bad_levels() {
    let g = grid(8);
    let empty = oedtomo::CsrMatrix::zeros(0, 64);
    assert_eq!(
        simulate_data(&empty, &[0.0; 64], &NoiseSpec::noiseless(), 0),
        Err(DataError::EmptyOperator)
    );
    let m = assemble_forward_b(&[0.0], g, 8).unwrap();
    assert!(matches!(
        simulate_data(&m, &[0.0; 10], &NoiseSpec::noiseless(), 0),
        Err(DataError::DimensionMismatch { .. })
    ));
    assert!(NoiseSpec::new(-0.1, 0).is_err());
    assert!(NoiseSpec::new(f64::NAN, 0).is_err());
}
