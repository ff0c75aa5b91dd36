//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary so the report is always printed. Criteria listed in
//! `KNOWN_FAILING` are reported but do not fail the run.

mod common;

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use common::{composite_literal, march_nonempty, random_occupancy_grid, random_ray_through};
use nff_core::autodiff::cases::primitive_cases;
use nff_core::autodiff::Tensor;
use nff_core::compositor::checks::compositor_cases;
use nff_core::compositor::{composite_ray, extract_patch, render, CachedRenderer, RenderOptions, SamplingMode, ShadedSample};
use nff_core::fixtures::{make_scene, orbit_poses, ScenePreset};
use nff_core::generators::checks::generator_cases;
use nff_core::generators::Generator;
use nff_core::objectives::checks::loss_outcomes;
use nff_core::objectives::fit::evaluate;
use nff_core::objectives::{fit_scene, train_toy, FitConfig, PosedImage, ToyConfig};
use nff_core::sampling::{generate_rays, traverse_all_nonempty, traverse_nonempty};
use nff_core::scene::{PixelRect, Scene};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Criteria that fail for recorded reasons.
const KNOWN_FAILING: &[usize] = &[5];

struct Verdict {
    passed: bool,
    detail: String,
}

fn verdict(passed: bool, detail: String) -> Verdict {
    Verdict { passed, detail }
}

fn within(elapsed: Duration, limit: Duration) -> bool {
    elapsed <= limit
}

fn scene(preset: &str, seed: u64, res: usize) -> Scene {
    let mut s = make_scene(&ScenePreset::by_name(preset).unwrap(), seed).unwrap();
    s.camera = s.camera.with_resolution(res, res).unwrap();
    s
}

fn generator(scene: &Scene, seed: u64) -> Generator {
    Generator::init(&scene.arch, scene.grid.num_labels() as usize, seed).unwrap()
}

fn c1_compositing() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(1001);
    let mut worst = 0.0f64;
    for _ in 0..500 {
        let n = rng.random_range(0..40);
        let m = rng.random_range(1..9);
        let raw: Vec<(Vec<f64>, f64, f64)> = (0..n)
            .map(|_| {
                let f = (0..m).map(|_| rng.random_range(-2.0..2.0)).collect();
                (f, rng.random_range(0.0..5.0), rng.random_range(0.0..0.5))
            })
            .collect();
        let sky: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut t = 0.0;
        let samples: Vec<ShadedSample> = raw
            .iter()
            .map(|(f, s, d)| {
                t += d;
                ShadedSample { t, delta: *d, sigma: *s, feature: f, tag: -1 }
            })
            .collect();
        let got = composite_ray(&samples, &sky).unwrap();
        let (f, w, sky_w) = composite_literal(&raw, &sky);
        let d = got
            .feature
            .iter()
            .zip(&f)
            .chain(got.weights.iter().zip(&w))
            .map(|(a, b)| (a - b).abs())
            .fold((got.sky_weight - sky_w).abs(), f64::max);
        worst = worst.max(d);
    }
    verdict(worst <= 1e-12, format!("max abs diff {worst:.2e} over 500 batches (tol 1e-12)"))
}

fn c2_weights() -> Verdict {
    let mut worst = 0.0f64;
    let mut pixels = 0;
    for seed in 0..10 {
        let s = scene("clevr-w", seed, 32);
        let g = generator(&s, seed + 50);
        let out = render(&g, &s, &RenderOptions::seeded(seed)).unwrap();
        for w in &out.weights {
            worst = worst.max((w.total() - 1.0).abs());
        }
        pixels += out.weights.len();
    }
    verdict(worst <= 1e-9, format!("max |sum - 1| {worst:.2e} over {pixels} pixels, 10 scenes (tol 1e-9)"))
}

fn c3_gradients() -> Verdict {
    let seed = 3;
    let mut outcomes = Vec::new();
    for case in primitive_cases(seed).into_iter().chain(generator_cases(seed)).chain(compositor_cases(seed)) {
        outcomes.push(case.run(seed, None).unwrap());
    }
    outcomes.extend(loss_outcomes(seed, None).unwrap());
    let failed: Vec<String> = outcomes.iter().filter(|o| !o.passed()).map(|o| format!("{} {:.2e}", o.name, o.max_rel_err)).collect();
    let worst = outcomes.iter().map(|o| o.max_rel_err / o.tolerance).fold(0.0, f64::max);
    let detail = if failed.is_empty() {
        format!("{} checks, worst error at {:.2} of its tolerance", outcomes.len(), worst)
    } else {
        format!("{} of {} failed: {}", failed.len(), outcomes.len(), failed.join(", "))
    };
    verdict(failed.is_empty(), detail)
}

fn c4_traversal() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(1004);
    let (mut mismatches, mut worst) = (0, 0.0f64);
    for _ in 0..1000 {
        let n = rng.random_range(8..=16);
        let dims = [n, rng.random_range(8..=16), rng.random_range(8..=16)];
        let occupancy = rng.random_range(0.02..0.3);
        let grid = random_occupancy_grid(&mut rng, dims, occupancy);
        let ray = random_ray_through(&mut rng, &grid);
        let got = traverse_nonempty(&grid, &ray, 4);
        let want = march_nonempty(&grid, &ray, 4);
        if got.len() != want.len() || got.iter().zip(&want).any(|(h, (c, _, _))| h.voxel != *c) {
            mismatches += 1;
            continue;
        }
        for (h, (_, t0, t1)) in got.iter().zip(&want) {
            worst = worst.max((h.t_enter - t0).abs()).max((h.t_exit - t1).abs());
        }
    }
    verdict(
        mismatches == 0 && worst <= 1e-6,
        format!("{mismatches} voxel mismatches, max endpoint error {worst:.2e} over 1000 pairs (tol 1e-6)"),
    )
}

fn c5_quadrature() -> Verdict {
    let mut per_seed = Vec::new();
    let mut rays_checked = 0;
    for seed in 0..8 {
        let s = scene("sparse", seed, 32);
        let g = generator(&s, seed);
        let r = CachedRenderer::new(&g, &s).unwrap();
        let guided = RenderOptions::seeded(seed);
        let dense = RenderOptions { mode: SamplingMode::Dense(nff_core::sampling::DENSE_SAMPLES), ..guided };
        let fg = r.render(&s.camera, &guided).unwrap().feature_image;
        let fd = r.render(&s.camera, &dense).unwrap().feature_image;
        let (m, n) = (fg.shape()[0], fg.shape()[1] * fg.shape()[2]);
        let mut worst = 0.0f64;
        for (p, ray) in generate_rays(&s.camera).iter().enumerate() {
            if traverse_all_nonempty(&s.grid, ray).len() > 4 {
                continue;
            }
            rays_checked += 1;
            for c in 0..m {
                worst = worst.max((fg.data()[c * n + p] - fd.data()[c * n + p]).abs());
            }
        }
        per_seed.push(worst);
    }
    let worst = per_seed.iter().copied().fold(0.0, f64::max);
    let list: Vec<String> = per_seed.iter().map(|d| format!("{d:.1e}")).collect();
    verdict(
        worst <= 2e-2,
        format!("max diff {worst:.2e} over {rays_checked} rays, 8 sparse scenes (tol 2e-2); per scene [{}]", list.join(" ")),
    )
}

/// Whether the ray through output-resolution pixel centre of feature pixel `p` meets box `k`.
fn feature_rays_hitting(s: &Scene, k: usize) -> Vec<bool> {
    let b = s.layout.get(k).unwrap();
    generate_rays(&s.camera).iter().map(|r| nff_core::sampling::ray_box_intersect(r, b).is_some()).collect()
}

fn locality(before: &Scene, after: &Scene, k: usize, gen: &Generator, opts: &RenderOptions) -> (usize, usize, usize) {
    let a = render(gen, before, opts).unwrap();
    let b = render(gen, after, opts).unwrap();
    let hits = feature_rays_hitting(before, k);
    let (m, n) = (a.feature_image.shape()[0], hits.len());
    let mut feature_changes = 0;
    for (p, hit) in hits.iter().enumerate() {
        if !hit && (0..m).any(|c| a.feature_image.data()[c * n + p] != b.feature_image.data()[c * n + p]) {
            feature_changes += 1;
        }
    }
    let (w, h) = (before.camera.width(), before.camera.height());
    let allowed = before.camera.project_box(before.layout.get(k).unwrap()).map(|r| r.dilate(6, w, h));
    let mut outside = 0;
    let mut halo = 0;
    for v in 0..h {
        for u in 0..w {
            if (0..3).all(|c| a.rgb.data()[c * h * w + v * w + u] == b.rgb.data()[c * h * w + v * w + u]) {
                continue;
            }
            match allowed {
                Some(r) if r.contains(u, v) => {
                    let rect = before.camera.project_box(before.layout.get(k).unwrap()).unwrap();
                    let du = rect.u0.saturating_sub(u).max(u.saturating_sub(rect.u1 - 1));
                    let dv = rect.v0.saturating_sub(v).max(v.saturating_sub(rect.v1 - 1));
                    halo = halo.max(du.max(dv));
                }
                _ => outside += 1,
            }
        }
    }
    (feature_changes, outside, halo)
}

fn c6_edit_locality() -> Verdict {
    let (mut feature_changes, mut outside, mut halo, mut edits) = (0, 0, 0, 0);
    for seed in 0..3 {
        let s = scene("clevr-w", seed, 64);
        let g = generator(&s, seed + 100);
        let opts = RenderOptions::seeded(seed);
        for (k, b) in s.layout.iter() {
            let mut removed = s.clone();
            removed.layout.remove(k).unwrap();
            let mut resampled = s.clone();
            resampled.layout.replace(k, b.with_latent_seed(b.latent_seed() ^ 0xabcd)).unwrap();
            for edited in [&removed, &resampled] {
                let (f, o, h) = locality(&s, edited, k, &g, &opts);
                feature_changes += f;
                outside += o;
                halo = halo.max(h);
                edits += 1;
            }
        }
    }
    verdict(
        feature_changes == 0 && outside == 0,
        format!(
            "{edits} edits: {feature_changes} changed feature pixels off the box, {outside} changed RGB pixels outside rect+6, widest halo {halo} px"
        ),
    )
}

fn c7_fitting() -> Verdict {
    let p = ScenePreset::by_name("clevr-w").unwrap();
    let s = make_scene(&p, 0).unwrap();
    let reference = generator(&s, 1000);
    let opts = RenderOptions::unjittered();
    let renderer = CachedRenderer::new(&reference, &s).unwrap();
    let mut targets = Vec::new();
    let mut held = None;
    for (i, camera) in orbit_poses(&s, 9, 60.0).unwrap().into_iter().enumerate() {
        let image = renderer.render(&camera, &opts).unwrap().rgb;
        let view = PosedImage { camera, image };
        if i == 4 {
            held = Some(view);
        } else {
            targets.push(view);
        }
    }
    let held = held.unwrap();
    let mut gen = generator(&s, 1);
    let initial = evaluate(&gen, &s, &held, &opts).unwrap();
    let cfg = FitConfig { iters: 2000, eval_every: 10, checkpoint_every: 0, stop_psnr: Some(26.0), ..FitConfig::default() };
    let report = fit_scene(&mut gen, &s, &targets, &cfg, None, Some(&held)).unwrap();
    let (iter, best) = report.evals.iter().copied().fold((0, f64::NEG_INFINITY), |a, b| if b.1 > a.1 { b } else { a });
    verdict(
        best >= 25.0,
        format!("held-out PSNR {initial:.2} dB at init, best {best:.2} dB at step {iter} (target 25 dB, stop at 26)"),
    )
}

/// Literal transcription: upsample alpha to full resolution, multiply, crop.
fn patch_literal(rgb: &Tensor, alpha: &Tensor, r: &PixelRect) -> Tensor {
    let (h, w) = (rgb.shape()[1], rgb.shape()[2]);
    let wf = alpha.shape()[1];
    let mut up = vec![0.0; h * w];
    for (i, a) in up.iter_mut().enumerate() {
        let (v, u) = (i / w, i % w);
        *a = alpha.data()[(v / 2) * wf + u / 2];
    }
    let full: Vec<f64> = rgb.data().iter().enumerate().map(|(i, x)| x * up[i % (h * w)]).collect();
    let mut out = Vec::new();
    for c in 0..3 {
        for v in r.v0..r.v1 {
            out.extend_from_slice(&full[c * h * w + v * w + r.u0..c * h * w + v * w + r.u1]);
        }
    }
    Tensor::new(vec![3, r.height(), r.width()], out).unwrap()
}

fn c8_patches() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(1008);
    let mut exact = 0;
    for _ in 0..20 {
        let (hf, wf) = (rng.random_range(2..20), rng.random_range(2..20));
        let (h, w) = (2 * hf, 2 * wf);
        let rgb = Tensor::new(vec![3, h, w], (0..3 * h * w).map(|_| rng.random::<f64>()).collect()).unwrap();
        let alpha = Tensor::new(vec![hf, wf], (0..hf * wf).map(|_| rng.random::<f64>()).collect()).unwrap();
        let (u0, v0) = (rng.random_range(0..w), rng.random_range(0..h));
        let r = PixelRect { u0, v0, u1: rng.random_range(u0 + 1..=w), v1: rng.random_range(v0 + 1..=h) };
        let got = extract_patch(&rgb, &alpha, &r).unwrap();
        let want = patch_literal(&rgb, &alpha, &r);
        if got.shape() == want.shape() && got.data().iter().zip(want.data()).all(|(a, b)| a.to_bits() == b.to_bits()) {
            exact += 1;
        }
    }
    verdict(exact == 20, format!("{exact}/20 cases bit-identical"))
}

fn nff(args: &[&str], dir: &Path) -> bool {
    Command::new(env!("CARGO_BIN_EXE_nff")).args(args).current_dir(dir).output().map(|o| o.status.success()).unwrap_or(false)
}

fn read_tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn c9_determinism() -> Verdict {
    let mut trees = Vec::new();
    for _ in 0..2 {
        let dir = tempfile::tempdir().unwrap();
        let d = dir.path();
        let ok = nff(&["--seed", "9", "--deterministic", "make-scene", "--out", "scene"], d)
            && nff(&["--seed", "9", "--deterministic", "render", "scene/scene.json", "--out", "out/view.ppm"], d)
            && nff(&["--seed", "9", "--deterministic", "fit", "scene/scene.json", "--out", "out/fit", "--iters", "50"], d);
        if !ok {
            return verdict(false, "a command exited with an error".into());
        }
        trees.push(read_tree(&d.join("out")));
    }
    let files = trees[0].len();
    let differing: Vec<&str> =
        trees[0].iter().zip(&trees[1]).filter(|(a, b)| a != b).map(|(a, _)| a.0.as_str()).collect();
    verdict(
        differing.is_empty() && trees[0].len() == trees[1].len(),
        format!("{files} output files from render and fit --iters 50, {} differ {:?}", differing.len(), differing),
    )
}

fn c10_toy() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ToyConfig { steps: 300, resolution: 32, ..ToyConfig::default() };
    let report = train_toy(&cfg, Some(dir.path())).unwrap();
    let finite = report.rows.iter().all(|r| r.is_finite());
    let gap = report.rows.iter().map(|r| r.gap.abs()).fold(0.0, f64::max);
    let last = report.rows.last().unwrap();
    verdict(
        finite && report.rows.len() == 300 && gap <= 10.0,
        format!(
            "{} steps, losses finite: {finite}, max |logit gap| {gap:.3} (bound 10); final d_img {:.3} d_patch {:.3} g {:.3}",
            report.rows.len(),
            last.d_img,
            last.d_patch,
            last.g
        ),
    )
}

fn main() {
    // libtest flags such as --nocapture are accepted and ignored
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    type Criterion = (usize, &'static str, Duration, fn() -> Verdict);
    let criteria: [Criterion; 10] = [
        (1, "compositing oracle", Duration::from_secs(1), c1_compositing),
        (2, "weight normalization", Duration::from_secs(30), c2_weights),
        (3, "gradient suite", Duration::from_secs(120), c3_gradients),
        (4, "traversal oracle", Duration::from_secs(10), c4_traversal),
        (5, "guided vs dense quadrature", Duration::from_secs(60), c5_quadrature),
        (6, "edit locality", Duration::from_secs(60), c6_edit_locality),
        (7, "per-scene fitting", Duration::from_secs(30 * 60), c7_fitting),
        (8, "patch extraction oracle", Duration::from_secs(5), c8_patches),
        (9, "determinism", Duration::from_secs(5 * 60), c9_determinism),
        (10, "toy adversarial smoke test", Duration::from_secs(15 * 60), c10_toy),
    ];
    let mut unexpected = Vec::new();
    for (id, name, limit, run) in criteria {
        if !only.is_empty() && !only.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let v = run();
        let elapsed = start.elapsed();
        let timely = within(elapsed, limit);
        let passed = v.passed && timely;
        let status = if passed { "PASS" } else { "FAIL" };
        let known = if !passed && KNOWN_FAILING.contains(&id) { " [known]" } else { "" };
        println!(
            "criterion {id:>2} {status}{known}: {name}: {} ({:.1}s, limit {}s)",
            v.detail,
            elapsed.as_secs_f64(),
            limit.as_secs()
        );
        if !passed && !KNOWN_FAILING.contains(&id) {
            unexpected.push(id);
        }
    }
    if !unexpected.is_empty() {
        eprintln!("unexpected failures: {unexpected:?}");
        std::process::exit(1);
    }
}
