use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use uvface::geometry::{
    align_shape, build_position_map, render_to_image, render_uv_texture, render_uv_texture_from_map, sphere_uv,
    zbuffer_visibility, Attribute, AttributeMaskSet, PointCloud, Pose, RenderStatus, Resolution, Similarity,
    UVTextureMap,
};
use uvface::image::RgbImage;
use uvface::synth::{synth_heads, Studio};

const SIZE: usize = 128;

/// Brute-force occlusion: a point is visible iff no other point in the same
/// pixel is strictly nearer, or equally near with a lower index.
fn brute_force_visibility(pts: &[[f64; 3]], pose: &Pose, w: usize, h: usize) -> Vec<bool> {
    let pix: Vec<_> = pts.iter().map(|&p| pose.pixel(p, w, h)).collect();
    (0..pts.len())
        .map(|i| {
            let Some((ci, ri, zi)) = pix[i] else { return false };
            (0..pts.len()).all(|j| match pix[j] {
                Some((cj, rj, zj)) if j != i && cj == ci && rj == ri => zj < zi || (zj == zi && j > i),
                _ => true,
            })
        })
        .collect()
}

#[test]
fn zbuffer_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for trial in 0..100 {
        let n = rng.random_range(3..=500);
        // few pixels so that collisions are common
        let pts: Vec<[f64; 3]> = (0..n)
            .map(|_| {
                let z = if rng.random_bool(0.1) { 0.25 } else { rng.random_range(-1.0..1.0) };
                [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), z]
            })
            .collect();
        let cloud = PointCloud::new(pts.clone()).unwrap();
        let pose = Pose::from_yaw_pitch(rng.random_range(-90.0..90.0), rng.random_range(-30.0..30.0), 12, 12);
        let got = zbuffer_visibility(&cloud, &pose, 12, 12);
        assert_eq!(got.flags(), brute_force_visibility(&pts, &pose, 12, 12).as_slice(), "trial {trial}");
    }
}

#[test]
fn sphere_uv_unit_cases() {
    let cases = [
        ([1.0, 0.0, 0.0], [0.0, 0.5]),
        ([0.0, 0.0, 1.0], [0.5, 0.5]),
        ([-1.0, 0.0, 0.0], [1.0, 0.5]),
        ([0.0, 1.0, 0.0], [0.5, 1.0]),
        ([0.0, -1.0, 0.0], [0.5, 0.0]),
    ];
    for (p, want) in cases {
        let got = sphere_uv(p);
        assert!((got[0] - want[0]).abs() < 1e-12 && (got[1] - want[1]).abs() < 1e-12, "{p:?} -> {got:?}");
    }
}

fn head_setup() -> (PointCloud, Studio) {
    let head = synth_heads(1, 5).remove(0);
    (head.mesh(), Studio::new(&head).unwrap())
}

#[test]
fn frontal_visibility_and_monotone_occlusion() {
    let (mesh, studio) = head_setup();
    let r = Resolution::new(32).unwrap();
    let valid = build_position_map(&mesh, r).valid_count();
    let visible_at = |yaw: f64| {
        let pose = Pose::from_yaw(yaw, SIZE, SIZE);
        let img = studio.photo(&pose, SIZE).unwrap();
        render_uv_texture(&img, &mesh, &pose, r).unwrap().0.visible_count()
    };
    let frontal = visible_at(0.0);
    assert!(frontal as f64 > 0.95 * valid as f64, "{frontal}/{valid}");
    assert!(visible_at(75.0) < visible_at(15.0));
}

#[test]
fn white_image_gives_white_texels() {
    let (mesh, _) = head_setup();
    let pose = Pose::from_yaw(30.0, SIZE, SIZE);
    let img = RgbImage::filled(SIZE, SIZE, [1.0; 3]);
    let (tex, status) = render_uv_texture(&img, &mesh, &pose, Resolution::new(32).unwrap()).unwrap();
    assert_eq!(status, RenderStatus::Ok);
    let r = 32;
    for i in 0..r * r {
        let want = if tex.visibility()[i] { [1.0; 3] } else { [0.0; 3] };
        assert_eq!(tex.grid()[i], want);
    }
}

#[test]
fn round_trip_and_back_side() {
    let (mesh, studio) = head_setup();
    let r = Resolution::new(32).unwrap();
    let pos = build_position_map(&mesh, r);
    let pose = Pose::from_yaw(0.0, SIZE, SIZE);
    let img = studio.photo(&pose, SIZE).unwrap();
    let (tex, _) = render_uv_texture_from_map(&img, &pos, &pose).unwrap();
    let back = render_to_image(&tex, &pos, &pose, SIZE, SIZE).unwrap();
    let mut worst: f64 = 0.0;
    for row in 0..SIZE {
        for col in 0..SIZE {
            if back.coverage[row * SIZE + col] {
                let (a, b) = (img.get(col, row), back.image.get(col, row));
                worst = (0..3).map(|c| (a[c] - b[c]).abs()).fold(worst, f64::max);
            }
        }
    }
    assert!(back.covered() > 0);
    assert!(worst < 2.0 / 255.0, "{worst}");

    let behind = render_to_image(&tex, &pos, &Pose::from_yaw(180.0, SIZE, SIZE), SIZE, SIZE).unwrap();
    assert!((behind.covered() as f64) < 0.1 * back.covered() as f64);

    let black = UVTextureMap::empty(r);
    let dark = render_to_image(&black, &pos, &pose, SIZE, SIZE).unwrap();
    assert!(dark.image.pixels().iter().all(|p| *p == [0.0; 3]));
}

#[test]
fn empty_visible_set_is_flagged() {
    let (mesh, _) = head_setup();
    let pose = Pose::from_yaw(180.0, SIZE, SIZE);
    let img = RgbImage::filled(SIZE, SIZE, [1.0; 3]);
    let (tex, status) = render_uv_texture(&img, &mesh, &pose, Resolution::new(32).unwrap()).unwrap();
    assert_eq!(status, RenderStatus::EmptyVisibleSet);
    assert_eq!(tex.visible_count(), 0);
}

#[test]
fn masks_are_disjoint_and_survive_downsampling() {
    let full = AttributeMaskSet::procedural(Resolution::new(256).unwrap());
    let (sg, ba) = (full.region(Attribute::Sunglasses), full.region(Attribute::Bangs));
    assert!(sg.iter().zip(&ba).all(|(&a, &b)| !(a && b)));
    let small = full.resample(Resolution::new(32).unwrap());
    for a in Attribute::ALL {
        let region = small.region(a);
        assert_eq!(components(&region, 32), 1, "{a} region split at 32x32");
        let omega = small.omega(a);
        assert!(region.iter().zip(omega).all(|(&x, &o)| x ^ o));
    }
}

fn components(mask: &[bool], r: usize) -> usize {
    let mut seen = vec![false; mask.len()];
    let mut count = 0;
    for start in 0..mask.len() {
        if !mask[start] || seen[start] {
            continue;
        }
        count += 1;
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(i) = stack.pop() {
            let (row, col) = (i / r, i % r);
            let mut push = |j: usize| {
                if mask[j] && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            };
            if row > 0 {
                push(i - r);
            }
            if row + 1 < r {
                push(i + r);
            }
            if col > 0 {
                push(i - 1);
            }
            if col + 1 < r {
                push(i + 1);
            }
        }
    }
    count
}

fn random_cloud(rng: &mut ChaCha8Rng, n: usize) -> Vec<[f64; 3]> {
    (0..n)
        .map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
        .collect()
}

#[test]
fn alignment_recovers_similarity() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let src = random_cloud(&mut rng, 300);
    let truth = Similarity::from_scale_yaw_translation(1.3, 20.0, [1.0, 2.0, 3.0]);
    let reference: Vec<[f64; 3]> = src.iter().map(|&p| truth.apply(p)).collect();
    let lm: Vec<(usize, usize)> = (0..8).map(|i| (i * 7, i * 7)).collect();
    let a = align_shape(
        &PointCloud::new(src).unwrap(),
        &PointCloud::new(reference).unwrap(),
        &lm,
    )
    .unwrap();
    assert!(a.rmse < 1e-6, "{}", a.rmse);
    assert!((a.transform.scale - 1.3).abs() < 1e-6);
    assert!((a.transform.yaw_deg() - 20.0).abs() < 1e-6);
    assert!((a.transform.translation - nalgebra::Vector3::new(1.0, 2.0, 3.0)).norm() < 1e-6);
}

#[test]
fn alignment_under_noise() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let normal = rand_distr::Normal::new(0.0, 0.01).unwrap();
    let reference = random_cloud(&mut rng, 400);
    let source: Vec<[f64; 3]> = reference
        .iter()
        .map(|p| p.map(|c| c + rng.sample(normal)))
        .collect();
    let lm: Vec<(usize, usize)> = (0..10).map(|i| (i, i)).collect();
    let a = align_shape(
        &PointCloud::new(source).unwrap(),
        &PointCloud::new(reference).unwrap(),
        &lm,
    )
    .unwrap();
    assert!(a.rmse <= 0.02, "{}", a.rmse);
    assert!(a.history.windows(2).all(|w| w[1] <= w[0]));
}
