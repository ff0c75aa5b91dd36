//! Small alternating GAN loop: image discriminator, object-patch discriminator
//! and generator steps on procedural scenes, with "real" images rendered by a
//! frozen reference generator.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, NodeId, Tensor};
use crate::compositor::{extract_patch_node, render_scene_nodes, render_view, RenderOptions};
use crate::error::{Error, Result};
use crate::fixtures::{make_scene, orbit_poses, ScenePreset};
use crate::generators::Generator;
use crate::objectives::{gan_loss_d, gan_loss_g, Discriminator};
use crate::optim::{checkpoint, AdamConfig};
use crate::scene::{Camera, PixelRect, Scene};

/// Minimum projected object area, in pixels, for a patch to be used.
pub const PATCH_MIN_PIXELS: usize = 64;

#[derive(Clone, Debug, PartialEq)]
pub struct ToyConfig {
    pub steps: usize,
    pub resolution: usize,
    pub patch_size: usize,
    pub preset: String,
    pub scenes: usize,
    pub views: usize,
    pub lr_d: f64,
    pub lr_g: f64,
    pub ema_decay: f64,
    pub lambda_r1: f64,
    pub lambda_patch: f64,
    pub seed: u64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            steps: 300,
            resolution: 32,
            patch_size: 32,
            preset: "clevr-w".to_string(),
            scenes: 4,
            views: 3,
            lr_d: 1e-4,
            lr_g: 2e-4,
            ema_decay: 0.999,
            lambda_r1: 10.0,
            lambda_patch: 1.0,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ToyRow {
    pub step: usize,
    pub d_img: f64,
    pub d_patch: f64,
    pub g: f64,
    /// Mean real logit minus mean fake logit of the image discriminator.
    pub gap: f64,
}

impl ToyRow {
    pub fn is_finite(&self) -> bool {
        [self.d_img, self.d_patch, self.g, self.gap].iter().all(|v| v.is_finite())
    }
}

#[derive(Clone, Debug)]
pub struct ToyReport {
    pub rows: Vec<ToyRow>,
    pub generator: Generator,
}

/// One training view with its reference render and a visible object.
struct View {
    scene: usize,
    camera: Camera,
    real: Tensor,
    real_patch: Tensor,
    object: usize,
    rect: PixelRect,
}

fn largest_visible(scene: &Scene, camera: &Camera) -> Option<(usize, PixelRect)> {
    scene
        .layout
        .iter()
        .filter_map(|(k, b)| camera.project_box(b).map(|r| (k, r)))
        .filter(|(_, r)| r.area() >= PATCH_MIN_PIXELS)
        .max_by_key(|(k, r)| (r.area(), usize::MAX - k))
}

fn patch_value(rgb: &Tensor, alpha: &Tensor, rect: &PixelRect, size: usize) -> Result<Tensor> {
    let mut g = Graph::new();
    let r = g.constant(rgb.clone());
    let a = g.constant(alpha.clone());
    let p = extract_patch_node(&mut g, r, a, rect, size)?;
    Ok(g.value(p).clone())
}

fn build_views(cfg: &ToyConfig, reference: &Generator) -> Result<(Vec<Scene>, Vec<View>)> {
    let preset = ScenePreset::by_name(&cfg.preset)?;
    let mut scenes = Vec::new();
    let mut views = Vec::new();
    let opts = RenderOptions::seeded(cfg.seed ^ 0x7e57);
    let mut seed = cfg.seed;
    // scenes without a visible object are skipped; give up after a bounded search
    for _ in 0..cfg.scenes * 16 {
        if scenes.len() == cfg.scenes {
            break;
        }
        let mut scene = make_scene(&preset, seed)?;
        seed = seed.wrapping_add(1);
        scene.camera = scene.camera.with_resolution(cfg.resolution, cfg.resolution)?;
        let mut found = Vec::new();
        for camera in orbit_poses(&scene, cfg.views, 40.0)? {
            let Some((object, rect)) = largest_visible(&scene, &camera) else { continue };
            let out = render_view(reference, &scene, &camera, &opts)?;
            let real_patch = patch_value(&out.rgb, &out.object_alphas[&object], &rect, cfg.patch_size)?;
            found.push(View { scene: scenes.len(), camera, real: out.rgb, real_patch, object, rect });
        }
        if !found.is_empty() {
            views.extend(found);
            scenes.push(scene);
        }
    }
    if views.is_empty() {
        return Err(Error::shape("train_toy", format!("no view of preset {} shows an object", cfg.preset)));
    }
    Ok((scenes, views))
}

/// Runs `cfg.steps` rounds of D^I, D^P and G updates. With `run_dir`, writes
/// `loss.tsv` (step, d_img, d_patch, g, gap) and the EMA generator as `params.nfck`.
pub fn train_toy(cfg: &ToyConfig, run_dir: Option<&Path>) -> Result<ToyReport> {
    let preset = ScenePreset::by_name(&cfg.preset)?;
    let labels = crate::fixtures::LABEL_NAMES.len();
    let reference = Generator::init(&preset.arch, labels, cfg.seed ^ 0xfeed)?;
    let mut gen = Generator::init(&preset.arch, labels, cfg.seed)?;
    gen.params.enable_ema();
    let (scenes, views) = build_views(cfg, &reference)?;
    let mut d_img = Discriminator::for_images("di", cfg.resolution, cfg.resolution, cfg.seed ^ 1)?;
    let mut d_patch = Discriminator::new("dp", [3, cfg.patch_size, cfg.patch_size], &[4, 8, 16], cfg.seed ^ 2)?;
    let adam_d = AdamConfig::with_lr(cfg.lr_d);
    let adam_g = AdamConfig::with_lr(cfg.lr_g);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut rows = Vec::with_capacity(cfg.steps);
    let mut tsv = String::from("step\td_img\td_patch\tg\tgap\n");
    for step in 0..cfg.steps {
        let view = &views[rng.random_range(0..views.len())];
        let scene = &scenes[view.scene];
        let opts = RenderOptions::seeded(cfg.seed.wrapping_mul(31).wrapping_add(step as u64));

        // one forward render serves as the detached fake for D and as G's graph
        let mut g = Graph::new();
        let nodes = render_scene_nodes(&mut g, &gen, scene, &view.camera, &opts)?;
        let alpha = nodes.feature.alphas[&view.object];
        let patch: NodeId = extract_patch_node(&mut g, nodes.rgb, alpha, &view.rect, cfg.patch_size)?;
        let fake = g.value(nodes.rgb).clone();
        let fake_patch = g.value(patch).clone();

        let di = gan_loss_d(&d_img, std::slice::from_ref(&view.real), &[fake], cfg.lambda_r1)?;
        d_img.params.adam_step(&di.grads, &adam_d)?;
        let dp = gan_loss_d(&d_patch, std::slice::from_ref(&view.real_patch), &[fake_patch], cfg.lambda_r1)?;
        d_patch.params.adam_step(&dp.grads, &adam_d)?;

        let li = gan_loss_g(&mut g, &d_img, &[nodes.rgb])?;
        let lp = gan_loss_g(&mut g, &d_patch, &[patch])?;
        let lp = g.scale(lp, cfg.lambda_patch)?;
        let total = g.add(li, lp)?;
        let g_loss = g.value(total).item();
        if !g_loss.is_finite() {
            return Err(Error::Diverged { iter: step });
        }
        let grads = g.backward_scalar(total)?;
        let grads = grads.params().into_iter().filter(|(n, _)| gen.params.contains(n)).collect();
        gen.params.adam_step(&grads, &adam_g)?;
        gen.params.ema_update(cfg.ema_decay);

        let gap = di.real_logits.iter().sum::<f64>() / di.real_logits.len() as f64
            - di.fake_logits.iter().sum::<f64>() / di.fake_logits.len() as f64;
        let row = ToyRow { step, d_img: di.loss, d_patch: dp.loss, g: g_loss, gap };
        let _ = writeln!(tsv, "{}\t{:.9e}\t{:.9e}\t{:.9e}\t{:.9e}", step, row.d_img, row.d_patch, row.g, row.gap);
        rows.push(row);
    }
    if let Some(dir) = run_dir {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("loss.tsv"), tsv)?;
        checkpoint::save(&gen.params.ema_params(), &dir.join("params.nfck"))?;
        let meta = serde_json::json!({
            "seed": cfg.seed,
            "steps": cfg.steps,
            "resolution": cfg.resolution,
            "patch_size": cfg.patch_size,
            "preset": cfg.preset,
            "lr_d": cfg.lr_d,
            "lr_g": cfg.lr_g,
            "ema_decay": cfg.ema_decay,
            "lambda_r1": cfg.lambda_r1,
            "lambda_patch": cfg.lambda_patch,
            "arch": gen.arch,
            "version": env!("CARGO_PKG_VERSION"),
        });
        std::fs::write(dir.join("meta.json"), serde_json::to_string_pretty(&meta)? + "\n")?;
    }
    Ok(ToyReport { rows, generator: gen })
}
