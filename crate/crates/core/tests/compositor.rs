mod common;

use std::time::Instant;

use common::composite_literal;
use nff_core::autodiff::Graph;
use nff_core::compositor::*;
use nff_core::fixtures::{make_scene, ScenePreset};
use nff_core::generators::Generator;
use nff_core::scene::{ObjectBox, Vec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn desk_scene(name: &str, seed: u64) -> (Generator, nff_core::scene::Scene) {
    let p = ScenePreset::by_name(name).unwrap();
    let mut scene = make_scene(&p, seed).unwrap();
    scene.camera = scene.camera.with_resolution(32, 32).unwrap();
    let gen = Generator::init(&scene.arch, scene.grid.num_labels() as usize, 7).unwrap();
    (gen, scene)
}

#[test]
fn composite_matches_literal_transcription() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..50 {
        let n = rng.random_range(0..12);
        let m = rng.random_range(1..5);
        let mut t = 0.0;
        let raw: Vec<(Vec<f64>, f64, f64)> = (0..n)
            .map(|_| {
                let f = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
                (f, rng.random_range(0.0..3.0), rng.random_range(0.0..0.5))
            })
            .collect();
        let sky: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
        let samples: Vec<ShadedSample> = raw
            .iter()
            .map(|(f, s, d)| {
                t += d;
                ShadedSample { t, delta: *d, sigma: *s, feature: f, tag: -1 }
            })
            .collect();
        let got = composite_ray(&samples, &sky).unwrap();
        let (f, w, sky_w) = composite_literal(&raw, &sky);
        for (a, b) in got.feature.iter().zip(&f) {
            assert!((a - b).abs() <= 1e-12);
        }
        for (a, b) in got.weights.iter().zip(&w) {
            assert!((a - b).abs() <= 1e-12);
        }
        assert!((got.sky_weight - sky_w).abs() <= 1e-12);
        let mut trans = 1.0f64;
        for s in &samples {
            let next = trans * (-s.sigma * s.delta).exp();
            assert!(next <= trans);
            trans = next;
        }
    }
}

#[test]
fn weights_partition_unity_and_timing() {
    let (gen, scene) = desk_scene("clevr-w", 4);
    let start = Instant::now();
    let out = render(&gen, &scene, &RenderOptions::seeded(1)).unwrap();
    eprintln!("32x32 render: {:?}, {} samples", start.elapsed(), out.num_samples);
    assert_eq!(out.rgb.shape(), &[3, 32, 32]);
    assert_eq!(out.feature_image.shape(), &[gen.arch.feature_dim, 16, 16]);
    for w in &out.weights {
        assert!((w.total() - 1.0).abs() < 1e-9);
        assert!(w.sky >= -1e-12 && w.stuff >= 0.0);
    }
    for a in out.object_alphas.values() {
        assert!(a.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }
    assert!(out.rgb.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
}

#[test]
fn empty_scene_is_pure_sky() {
    let (gen, mut scene) = desk_scene("clevr-w-empty", 1);
    scene.grid = nff_core::scene::SemanticVoxelGrid::new_empty(
        scene.grid.dims(),
        scene.grid.num_labels(),
        scene.grid.origin(),
        scene.grid.spacing(),
    )
    .unwrap();
    let out = render(&gen, &scene, &RenderOptions::seeded(1)).unwrap();
    assert_eq!(out.num_samples, 0);
    let mut g = Graph::new();
    let z = g.input(scene.z_world().to_row());
    let dirs: Vec<Vec3> = nff_core::sampling::generate_rays(&scene.camera).iter().map(|r| r.direction).collect();
    let sky = nff_core::generators::fields::sky_feature(&mut g, &gen.params, &gen.arch, z, &dirs).unwrap();
    let sky = g.value(sky);
    let (m, n) = (gen.arch.feature_dim, dirs.len());
    for r in 0..n {
        for c in 0..m {
            assert_eq!(out.feature_image.data()[c * n + r], sky.data()[r * m + c]);
        }
    }
}

#[test]
fn object_behind_camera_changes_nothing() {
    let (gen, mut scene) = desk_scene("clevr-w", 2);
    let opts = RenderOptions::seeded(3);
    let before = render(&gen, &scene, &opts).unwrap();
    let back = scene.camera.rotation_matrix().mul_vec(Vec3::new(0.0, 0.0, -1.0));
    let center = scene.camera.position() + back * 2.0;
    scene.layout.insert(ObjectBox::axis_aligned(center, Vec3::new(0.5, 0.5, 0.5), 99).unwrap());
    let after = render(&gen, &scene, &opts).unwrap();
    assert_eq!(before.feature_image, after.feature_image);
    assert_eq!(before.rgb, after.rgb);
}

#[test]
fn cached_grid_renders_identically() {
    let (gen, scene) = desk_scene("clevr-w", 5);
    let opts = RenderOptions::seeded(2);
    let direct = render(&gen, &scene, &opts).unwrap();
    let cached = CachedRenderer::new(&gen, &scene).unwrap().render(&scene.camera, &opts).unwrap();
    assert_eq!(direct.feature_image, cached.feature_image);
    assert_eq!(direct.rgb, cached.rgb);
}
