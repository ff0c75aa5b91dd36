use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Context;
use serde::{Deserialize, Serialize};
use serde_json::json;

use nff_core::autodiff::cases::{primitive_cases, CheckOutcome};
use nff_core::autodiff::Tensor;
use nff_core::compositor::checks::compositor_cases;
use nff_core::compositor::image::{encode_nfim, encode_pgm, read_ppm, write_ppm};
use nff_core::compositor::render::sample_camera;
use nff_core::compositor::{CachedRenderer, RenderOptions, RenderOutput, SamplingMode};
use nff_core::fixtures::{make_scene, orbit_poses, ScenePreset, Trajectory, TrajectoryConfig};
use nff_core::generators::checks::generator_cases;
use nff_core::generators::Generator;
use nff_core::objectives::checks::loss_outcomes;
use nff_core::objectives::fit::evaluate;
use nff_core::objectives::{fit_scene, train_toy, FitConfig, PosedImage, ToyConfig};
use nff_core::optim::checkpoint;
use nff_core::sampling::{generate_rays, traverse_all_nonempty, Source};
use nff_core::scene::edit::apply_script;
use nff_core::scene::io::{load_scene, save_scene, CameraJson};
use nff_core::scene::{Camera, Scene};

use super::{BenchMode, Cli, Command, Component, Failure, GeneratorArgs};

type Res<T = ()> = Result<T, Failure>;

struct Ctx {
    seed: u64,
    threads: usize,
    deterministic: bool,
}

impl Ctx {
    fn meta(&self, command: &str, extra: serde_json::Value) -> serde_json::Value {
        let mut m = json!({
            "command": command,
            "seed": self.seed,
            "threads": self.threads,
            "deterministic": self.deterministic,
            "version": env!("CARGO_PKG_VERSION"),
        });
        if let (Some(m), serde_json::Value::Object(e)) = (m.as_object_mut(), extra) {
            m.extend(e);
        }
        m
    }

    /// Writes `<path>.meta.json` next to an output file.
    fn sidecar(&self, path: &Path, command: &str, extra: serde_json::Value) -> Res {
        let mut name = path.as_os_str().to_owned();
        name.push(".meta.json");
        write_json(Path::new(&name), &self.meta(command, extra))
    }
}

fn write_json(path: &Path, v: &impl Serialize) -> Res {
    let text = serde_json::to_string_pretty(v)? + "\n";
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn ensure_parent(path: &Path) -> Res {
    if let Some(p) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(p).with_context(|| format!("creating {}", p.display()))?;
    }
    Ok(())
}

fn parse_res(s: &str) -> Res<(usize, usize)> {
    let bad = || Failure::Usage(format!("--res expects WxH with even positive sizes, got `{s}`"));
    let (w, h) = s.split_once(['x', 'X']).ok_or_else(bad)?;
    let (w, h): (usize, usize) = (w.parse().map_err(|_| bad())?, h.parse().map_err(|_| bad())?);
    if w == 0 || h == 0 || !w.is_multiple_of(2) || !h.is_multiple_of(2) {
        return Err(bad());
    }
    Ok((w, h))
}

fn load(path: &Path, res: Option<&str>) -> Res<Scene> {
    let (mut scene, _) = load_scene(path).with_context(|| format!("loading scene {}", path.display()))?;
    if let Some(r) = res {
        let (w, h) = parse_res(r)?;
        scene.camera = scene.camera.with_resolution(w, h)?;
    }
    Ok(scene)
}

fn generator(args: &GeneratorArgs, scene: &Scene, seed: u64) -> Res<Generator> {
    let labels = scene.grid.num_labels() as usize;
    Ok(match &args.params {
        Some(p) => {
            let store = checkpoint::load(p).with_context(|| format!("loading parameters {}", p.display()))?;
            Generator::from_params(&scene.arch, labels, store)?
        }
        None => Generator::init(&scene.arch, labels, args.gen_seed.unwrap_or(seed))?,
    })
}

fn numbered(path: &Path, i: usize) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let ext = path.extension().map(|e| format!(".{}", e.to_string_lossy())).unwrap_or_default();
    path.with_file_name(format!("{stem}_{i:04}{ext}"))
}

/// One entry of a pose manifest: a camera and the image seen from it.
#[derive(Debug, Serialize, Deserialize)]
struct PoseEntry {
    camera: CameraJson,
    image: String,
}

pub fn run(cli: &Cli, threads: usize) -> Res {
    let ctx = Ctx { seed: cli.seed, threads, deterministic: cli.deterministic };
    match &cli.command {
        Command::MakeScene(a) => make_scene_cmd(&ctx, a),
        Command::Render(a) => render_cmd(&ctx, a),
        Command::Edit(a) => edit_cmd(&ctx, a),
        Command::Fit(a) => fit_cmd(&ctx, a),
        Command::TrainToy(a) => train_toy_cmd(&ctx, a),
        Command::Bench(a) => bench_cmd(&ctx, a),
        Command::Gradcheck(a) => gradcheck_cmd(&ctx, a),
        Command::SampleRays(a) => sample_rays_cmd(&ctx, a),
    }
}

fn make_scene_cmd(ctx: &Ctx, a: &super::MakeSceneArgs) -> Res {
    let preset = ScenePreset::by_name(&a.preset)
        .map_err(|_| Failure::Usage(format!("unknown preset `{}`; known: {}", a.preset, ScenePreset::names().join(", "))))?;
    let scene = make_scene(&preset, ctx.seed)?;
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let json = a.out.join("scene.json");
    save_scene(&scene, &json, &a.out.join("grid.uvgx"))?;
    ctx.sidecar(&json, "make-scene", json!({ "preset": a.preset, "objects": scene.layout.live_count() }))?;
    println!("wrote {} ({} objects)", json.display(), scene.layout.live_count());
    Ok(())
}

fn write_render(out: &RenderOutput, path: &Path, features: Option<&Path>, alphas: Option<&Path>) -> Res {
    write_ppm(&out.rgb, path)?;
    if let Some(f) = features {
        ensure_parent(f)?;
        std::fs::write(f, encode_nfim(&out.feature_image)?)?;
    }
    if let Some(prefix) = alphas {
        ensure_parent(prefix)?;
        for (k, a) in &out.object_alphas {
            let mut name = prefix.as_os_str().to_owned();
            name.push(format!("{k}.pgm"));
            std::fs::write(PathBuf::from(name), encode_pgm(a)?)?;
        }
    }
    Ok(())
}

fn render_cmd(ctx: &Ctx, a: &super::RenderArgs) -> Res {
    let scene = load(&a.scene, a.res.as_deref())?;
    let gen = generator(&a.generator, &scene, ctx.seed)?;
    let opts = if a.no_jitter { RenderOptions::unjittered() } else { RenderOptions::seeded(ctx.seed) };
    let renderer = CachedRenderer::new(&gen, &scene)?;
    ensure_parent(&a.out)?;
    let extra = json!({
        "scene": a.scene.display().to_string(),
        "params": a.generator.params.as_ref().map(|p| p.display().to_string()),
        "gen_seed": a.generator.gen_seed.unwrap_or(ctx.seed),
        "width": scene.camera.width(),
        "height": scene.camera.height(),
        "jitter": !a.no_jitter,
    });
    match a.traj {
        None => {
            let out = renderer.render(&scene.camera, &opts)?;
            write_render(&out, &a.out, a.dump_features.as_deref(), a.dump_alphas.as_deref())?;
            ctx.sidecar(&a.out, "render", extra)?;
            println!("wrote {}", a.out.display());
        }
        Some(n) => {
            let cam = &scene.camera;
            let fwd = cam.rotation_matrix().mul_vec(nff_core::scene::Vec3::new(0.0, 0.0, 1.0));
            let pitch = (-fwd.z).atan2((fwd.x * fwd.x + fwd.y * fwd.y).sqrt()).to_degrees();
            let cfg = TrajectoryConfig {
                steps: n,
                step: a.traj_step,
                yaw_jitter_deg: 0.0,
                height: cam.position().z,
                pitch_deg: pitch,
                seed: ctx.seed,
            };
            let traj = Trajectory::forward(cam, &cfg)?;
            let mut manifest = Vec::with_capacity(n);
            for (i, pose) in traj.poses.iter().enumerate() {
                let out = renderer.render(pose, &opts)?;
                let path = numbered(&a.out, i);
                let feats = a.dump_features.as_deref().map(|p| numbered(p, i));
                let alphas = a.dump_alphas.as_deref().map(|p| {
                    let mut s = p.as_os_str().to_owned();
                    s.push(format!("{i:04}_"));
                    PathBuf::from(s)
                });
                write_render(&out, &path, feats.as_deref(), alphas.as_deref())?;
                let image = path.file_name().expect("file name").to_string_lossy().into_owned();
                manifest.push(PoseEntry { camera: CameraJson::from_camera(pose), image });
            }
            let poses = numbered(&a.out, n).with_file_name(format!(
                "{}_poses.json",
                a.out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
            ));
            write_json(&poses, &manifest)?;
            ctx.sidecar(&poses, "render", extra)?;
            println!("wrote {n} frames and {}", poses.display());
        }
    }
    Ok(())
}

fn edit_cmd(ctx: &Ctx, a: &super::EditArgs) -> Res {
    let (scene, in_grid) = load_scene(&a.scene).with_context(|| format!("loading scene {}", a.scene.display()))?;
    let script = std::fs::read_to_string(&a.script).with_context(|| format!("reading {}", a.script.display()))?;
    let edited = apply_script(&scene, &script, ctx.seed).with_context(|| a.script.display().to_string())?;
    ensure_parent(&a.out)?;
    let dir = a.out.parent().unwrap_or(Path::new(""));
    let mut grid = dir.join(in_grid.file_name().expect("grid file name"));
    let same = |p: &Path, q: &Path| match (p.canonicalize(), q.canonicalize()) {
        (Ok(x), Ok(y)) => x == y,
        _ => false,
    };
    if same(&grid, &in_grid) || same(&a.out, &a.scene) {
        if same(&a.out, &a.scene) {
            return Err(Failure::Usage("edit never overwrites its input; choose another --out".into()));
        }
        grid = a.out.with_extension("uvgx");
    }
    save_scene(&edited, &a.out, &grid)?;
    ctx.sidecar(&a.out, "edit", json!({ "scene": a.scene.display().to_string(), "script": a.script.display().to_string() }))?;
    println!("wrote {} and {}", a.out.display(), grid.display());
    Ok(())
}

fn read_manifest(path: &Path) -> Res<Vec<PosedImage>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let entries: Vec<PoseEntry> =
        serde_json::from_str(&text).with_context(|| format!("parsing pose manifest {}", path.display()))?;
    entries
        .into_iter()
        .map(|e| {
            let camera = e.camera.to_camera()?;
            let img_path = nff_core::scene::io::resolve_relative(path, &e.image);
            let image = read_ppm(&img_path)?;
            Ok(PosedImage { camera, image })
        })
        .collect()
}

fn fit_cmd(ctx: &Ctx, a: &super::FitArgs) -> Res {
    let scene = load(&a.scene, a.res.as_deref())?;
    let mut gen = generator(&a.generator, &scene, ctx.seed)?;
    let (targets, held_out) = match &a.targets {
        Some(m) => (read_manifest(m)?, None),
        None => {
            if a.views == 0 {
                return Err(Failure::Usage("--views must be positive".into()));
            }
            let reference = Generator::init(&scene.arch, scene.grid.num_labels() as usize, a.reference_seed)?;
            let poses = orbit_poses(&scene, a.views + 1, 60.0)?;
            let held = a.views.div_ceil(2);
            let renderer = CachedRenderer::new(&reference, &scene)?;
            let mut targets = Vec::with_capacity(a.views);
            let mut held_out = None;
            for (i, camera) in poses.into_iter().enumerate() {
                let image = renderer.render(&camera, &RenderOptions::unjittered())?.rgb;
                let p = PosedImage { camera, image };
                if i == held {
                    held_out = Some(p);
                } else {
                    targets.push(p);
                }
            }
            (targets, held_out)
        }
    };
    let cfg = FitConfig {
        iters: a.iters,
        lr: a.lr,
        lambda_feat: a.lambda_feat,
        seed: ctx.seed,
        checkpoint_every: a.checkpoint_every,
        mask_objects: a.mask_objects,
        eval_every: if held_out.is_some() { a.checkpoint_every } else { 0 },
        stop_psnr: None,
    };
    let before = held_out.as_ref().map(|h| evaluate(&gen, &scene, h, &RenderOptions::unjittered())).transpose()?;
    let report = fit_scene(&mut gen, &scene, &targets, &cfg, Some(&a.out), held_out.as_ref())?;
    let after = held_out.as_ref().map(|h| evaluate(&gen, &scene, h, &RenderOptions::unjittered())).transpose()?;
    let last = report.rows.last();
    write_json(
        &a.out.join("cli.meta.json"),
        &ctx.meta(
            "fit",
            json!({
                "scene": a.scene.display().to_string(),
                "targets": a.targets.as_ref().map(|p| p.display().to_string()),
                "reference_seed": a.reference_seed,
                "views": targets.len(),
                "held_out_psnr_before": before,
                "held_out_psnr_after": after,
                "final_loss": last.map(|r| r.total),
            }),
        ),
    )?;
    if let Some(r) = last {
        println!("iter {}: recon {:.6} feat {:.6} total {:.6}", r.iter, r.recon, r.feat, r.total);
    }
    if let (Some(b), Some(f)) = (before, after) {
        println!("held-out PSNR {b:.2} dB -> {f:.2} dB");
    }
    Ok(())
}

fn train_toy_cmd(ctx: &Ctx, a: &super::TrainToyArgs) -> Res {
    if a.res == 0 || !a.res.is_multiple_of(2) {
        return Err(Failure::Usage("--res must be even and positive".into()));
    }
    let cfg = ToyConfig {
        steps: a.steps,
        resolution: a.res,
        patch_size: a.res,
        preset: a.preset.clone(),
        lambda_r1: a.lambda_r1,
        lambda_patch: a.lambda_patch,
        seed: ctx.seed,
        ..ToyConfig::default()
    };
    let report = train_toy(&cfg, Some(&a.out))?;
    write_json(&a.out.join("cli.meta.json"), &ctx.meta("train-toy", json!({ "steps": a.steps })))?;
    let max_gap = report.rows.iter().fold(0.0f64, |m, r| m.max(r.gap.abs()));
    if let Some(r) = report.rows.last() {
        println!("step {}: d_img {:.4} d_patch {:.4} g {:.4}; max |logit gap| {max_gap:.4}", r.step, r.d_img, r.d_patch, r.g);
    }
    if let Some(r) = report.rows.iter().find(|r| !r.is_finite()) {
        return Err(Failure::Check(format!("non-finite loss at step {}", r.step)));
    }
    Ok(())
}

struct Timed {
    out: RenderOutput,
    ms: f64,
    max_per_ray: usize,
}

fn timed(renderer: &CachedRenderer, scene: &Scene, opts: &RenderOptions) -> Res<Timed> {
    let t = Instant::now();
    let out = renderer.render(&scene.camera, opts)?;
    let ms = t.elapsed().as_secs_f64() * 1e3;
    let (_, batches) = sample_camera(&scene.grid, &scene.layout, &scene.camera, opts);
    let max_per_ray = batches.iter().map(|b| b.len()).max().unwrap_or(0);
    Ok(Timed { out, ms, max_per_ray })
}

/// Largest per-channel feature difference, over all rays and over rays meeting
/// at most `max_voxels` non-empty voxels.
pub fn feature_differences(a: &Tensor, b: &Tensor, camera: &Camera, scene: &Scene, max_voxels: usize) -> (f64, f64, usize) {
    let rays = generate_rays(camera);
    let (m, n) = (a.shape()[0], rays.len());
    let (mut all, mut eligible, mut count) = (0.0f64, 0.0f64, 0);
    for (p, ray) in rays.iter().enumerate() {
        let d = (0..m).fold(0.0f64, |acc, c| acc.max((a.data()[c * n + p] - b.data()[c * n + p]).abs()));
        all = all.max(d);
        if traverse_all_nonempty(&scene.grid, ray).len() <= max_voxels {
            eligible = eligible.max(d);
            count += 1;
        }
    }
    (all, eligible, count)
}

fn bench_cmd(ctx: &Ctx, a: &super::BenchArgs) -> Res {
    let scene = load(&a.scene, a.res.as_deref())?;
    let gen = generator(&a.generator, &scene, ctx.seed)?;
    let renderer = CachedRenderer::new(&gen, &scene)?;
    let guided = RenderOptions::seeded(ctx.seed);
    let dense = RenderOptions { mode: SamplingMode::Dense(a.dense_samples), ..guided };
    let rays = scene.camera.feature_size();
    let rays = rays.0 * rays.1;
    println!("rays\t{rays}");
    println!("sample bound\t{} per ray", guided.sampling.max_samples_per_ray(scene.layout.live_count()));
    let mut runs = Vec::new();
    for (name, opts, on) in [("guided", guided, a.mode != BenchMode::Dense), ("dense", dense, a.mode != BenchMode::Guided)] {
        if on {
            let t = timed(&renderer, &scene, &opts)?;
            println!(
                "{name}\t{:.1} ms\t{} samples\t{:.1} per ray\tmax {} per ray",
                t.ms,
                t.out.num_samples,
                t.out.num_samples as f64 / rays as f64,
                t.max_per_ray
            );
            runs.push(t);
        }
    }
    if let [g, d] = &runs[..] {
        let (all, eligible, count) =
            feature_differences(&g.out.feature_image, &d.out.feature_image, &scene.camera, &scene, guided.sampling.max_voxels);
        println!("max feature diff\t{all:.3e}");
        println!("max feature diff (rays meeting <= {} voxels: {count})\t{eligible:.3e}", guided.sampling.max_voxels);
    }
    Ok(())
}

fn gradcheck_cmd(ctx: &Ctx, a: &super::GradcheckArgs) -> Res {
    let fault = a.fault.as_deref().map(|op| (op, 1.5));
    let want = |c: Component| a.component == Component::All || a.component == c;
    let mut outcomes: Vec<(&str, CheckOutcome)> = Vec::new();
    type Suite = fn(u64) -> Vec<nff_core::autodiff::cases::Case>;
    let suites: [(Component, &str, Suite); 3] = [
        (Component::Substrate, "substrate", primitive_cases),
        (Component::Generators, "generators", generator_cases),
        (Component::Compositor, "compositor", compositor_cases),
    ];
    for (c, name, cases) in suites {
        if want(c) {
            for case in cases(ctx.seed) {
                outcomes.push((name, case.run(ctx.seed, fault)?));
            }
        }
    }
    if want(Component::Losses) {
        for o in loss_outcomes(ctx.seed, fault)? {
            outcomes.push(("losses", o));
        }
    }
    let mut failed = Vec::new();
    for (suite, o) in &outcomes {
        let verdict = if o.passed() { "PASS" } else { "FAIL" };
        println!("{suite}\t{}\t{:.3e}\t{:.0e}\t{verdict}", o.name, o.max_rel_err, o.tolerance);
        if !o.passed() {
            failed.push(o.name.clone());
        }
    }
    if failed.is_empty() {
        println!("{} checks passed", outcomes.len());
        Ok(())
    } else {
        Err(Failure::Check(format!("{} of {} checks failed: {}", failed.len(), outcomes.len(), failed.join(", "))))
    }
}

fn parse_pixel(s: &str, w: usize, h: usize) -> Res<usize> {
    let bad = || Failure::Usage(format!("--pixel expects u,v inside {w}x{h}, got `{s}`"));
    let (u, v) = s.split_once(',').ok_or_else(bad)?;
    let (u, v): (usize, usize) = (u.trim().parse().map_err(|_| bad())?, v.trim().parse().map_err(|_| bad())?);
    if u >= w || v >= h {
        return Err(bad());
    }
    Ok(v * w + u)
}

fn sample_rays_cmd(ctx: &Ctx, a: &super::SampleRaysArgs) -> Res {
    let scene = load(&a.scene, a.res.as_deref())?;
    let mut opts = if a.no_jitter { RenderOptions::unjittered() } else { RenderOptions::seeded(ctx.seed) };
    if a.dense {
        opts.mode = SamplingMode::Dense(nff_core::sampling::DENSE_SAMPLES);
    }
    let (wf, hf) = scene.camera.feature_size();
    let pixels: Vec<usize> = if a.pixels.is_empty() {
        (0..wf * hf).collect()
    } else {
        a.pixels.iter().map(|p| parse_pixel(p, wf, hf)).collect::<Res<_>>()?
    };
    let (_, batches) = sample_camera(&scene.grid, &scene.layout, &scene.camera, &opts);
    let mut tsv = String::from("u\tv\tt\tdelta\tsource\tinterval\tstratum\tx\ty\tz\n");
    for p in pixels {
        let (u, v) = (p % wf, p / wf);
        for s in &batches[p].samples {
            let src = match s.source {
                Source::Stuff => "stuff".to_string(),
                Source::Object(k) => format!("object:{k}"),
            };
            let _ = writeln!(
                tsv,
                "{u}\t{v}\t{:.9}\t{:.9}\t{src}\t{}\t{}\t{:.9}\t{:.9}\t{:.9}",
                s.t, s.delta, s.interval, s.stratum, s.position.x, s.position.y, s.position.z
            );
        }
    }
    match &a.out {
        Some(path) => {
            ensure_parent(path)?;
            std::fs::write(path, tsv).with_context(|| format!("writing {}", path.display()))?;
            ctx.sidecar(path, "sample-rays", json!({ "scene": a.scene.display().to_string(), "dense": a.dense }))?;
        }
        None => print!("{tsv}"),
    }
    Ok(())
}
