use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Tensor};
use crate::compositor::image::psnr;
use crate::compositor::{render_scene_nodes, render_view, RenderOptions};
use crate::error::{Error, Result};
use crate::generators::Generator;
use crate::objectives::{build_stuff_mask, masked_recon_loss, PyramidDistance};
use crate::optim::{checkpoint, AdamConfig, ParamStore};
use crate::scene::{Camera, Scene};

/// A target image `[3, H, W]` with the camera it was taken from.
#[derive(Clone, Debug, PartialEq)]
pub struct PosedImage {
    pub camera: Camera,
    pub image: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitConfig {
    pub iters: usize,
    pub lr: f64,
    pub lambda_feat: f64,
    pub seed: u64,
    /// Write `params.nfck` every this many iterations (0: only at the end).
    pub checkpoint_every: usize,
    /// Zero the loss inside projected object rectangles.
    pub mask_objects: bool,
    /// Evaluate the held-out pose every this many iterations (0: never).
    pub eval_every: usize,
    /// Stop once the held-out PSNR reaches this value.
    pub stop_psnr: Option<f64>,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            iters: 200,
            lr: 1e-3,
            lambda_feat: 0.5,
            seed: 0,
            checkpoint_every: 100,
            mask_objects: false,
            eval_every: 0,
            stop_psnr: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRow {
    pub iter: usize,
    pub recon: f64,
    pub feat: f64,
    pub total: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct FitReport {
    pub rows: Vec<LossRow>,
    /// `(iteration, held-out PSNR)`; iteration counts completed steps.
    pub evals: Vec<(usize, f64)>,
}

/// Sampling options used at iteration `iter`; each iteration draws fresh strata offsets.
pub fn iteration_options(cfg: &FitConfig, iter: usize) -> RenderOptions {
    RenderOptions::seeded(cfg.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(iter as u64))
}

/// Options for held-out evaluation renders.
pub fn eval_options() -> RenderOptions {
    RenderOptions::unjittered()
}

struct RunFiles<'a> {
    dir: &'a Path,
    tsv: String,
}

impl RunFiles<'_> {
    fn checkpoint(&self, params: &ParamStore) -> Result<()> {
        checkpoint::save(params, &self.dir.join("params.nfck"))
    }

    fn flush(&self) -> Result<()> {
        std::fs::write(self.dir.join("loss.tsv"), &self.tsv)?;
        Ok(())
    }
}

/// Held-out PSNR of the current parameters.
pub fn evaluate(gen: &Generator, scene: &Scene, view: &PosedImage, opts: &RenderOptions) -> Result<f64> {
    let out = render_view(gen, scene, &view.camera, opts)?;
    Ok(psnr(&out.rgb, &view.image))
}

/// One recon step's loss values and generator gradients.
pub fn recon_step(
    gen: &Generator,
    scene: &Scene,
    target: &PosedImage,
    cfg: &FitConfig,
    opts: &RenderOptions,
) -> Result<(LossRow, std::collections::BTreeMap<String, Tensor>)> {
    let mut g = Graph::new();
    let nodes = render_scene_nodes(&mut g, gen, scene, &target.camera, opts)?;
    let mask = if cfg.mask_objects {
        build_stuff_mask(&target.camera, &scene.layout)
    } else {
        Tensor::full(&[target.camera.height(), target.camera.width()], 1.0)
    };
    let loss = masked_recon_loss(&mut g, nodes.rgb, &target.image, &mask, cfg.lambda_feat, &PyramidDistance::default())?;
    let row = LossRow {
        iter: 0,
        recon: g.value(loss.mse).item(),
        feat: g.value(loss.feat).item(),
        total: g.value(loss.total).item(),
    };
    if !row.total.is_finite() {
        return Ok((row, Default::default()));
    }
    let grads = g.backward_scalar(loss.total)?;
    let grads = grads.params().into_iter().filter(|(n, _)| gen.params.contains(n)).collect();
    Ok((row, grads))
}

/// Adam on the reconstruction loss over randomly chosen target views.
///
/// With `run_dir`, writes `params.nfck`, `loss.tsv` and `meta.json` there. On
/// a non-finite loss or gradient the parameters are rolled back to the last
/// checkpoint, which is also written, and [`Error::Diverged`] is returned.
pub fn fit_scene(
    gen: &mut Generator,
    scene: &Scene,
    targets: &[PosedImage],
    cfg: &FitConfig,
    run_dir: Option<&Path>,
    held_out: Option<&PosedImage>,
) -> Result<FitReport> {
    if targets.is_empty() {
        return Err(Error::shape("fit_scene", "no targets"));
    }
    for t in targets {
        let want = [3, t.camera.height(), t.camera.width()];
        if t.image.shape() != want {
            return Err(Error::shape("fit_scene", format!("target {:?}, camera needs {want:?}", t.image.shape())));
        }
    }
    let mut files = match run_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            let meta = serde_json::json!({
                "seed": cfg.seed,
                "world_seed": scene.world_seed,
                "iters": cfg.iters,
                "lr": cfg.lr,
                "lambda_feat": cfg.lambda_feat,
                "mask_objects": cfg.mask_objects,
                "targets": targets.len(),
                "arch": gen.arch,
                "version": env!("CARGO_PKG_VERSION"),
            });
            std::fs::write(dir.join("meta.json"), serde_json::to_string_pretty(&meta)? + "\n")?;
            Some(RunFiles { dir, tsv: "iter\trecon\tfeat\ttotal\n".to_string() })
        }
        None => None,
    };
    let adam = AdamConfig::with_lr(cfg.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut last_good = gen.params.clone();
    let mut report = FitReport::default();
    for iter in 0..cfg.iters {
        let target = &targets[rng.random_range(0..targets.len())];
        let (mut row, grads) = recon_step(gen, scene, target, cfg, &iteration_options(cfg, iter))?;
        row.iter = iter;
        let stepped = row.total.is_finite() && gen.params.adam_step(&grads, &adam).is_ok();
        if !stepped {
            gen.params = last_good;
            if let Some(f) = &files {
                f.checkpoint(&gen.params)?;
                f.flush()?;
            }
            return Err(Error::Diverged { iter });
        }
        report.rows.push(row);
        if let Some(f) = files.as_mut() {
            let _ = writeln!(f.tsv, "{}\t{:.9e}\t{:.9e}\t{:.9e}", iter, row.recon, row.feat, row.total);
        }
        let done = iter + 1;
        if cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0 {
            last_good = gen.params.clone();
            if let Some(f) = &files {
                f.checkpoint(&gen.params)?;
                f.flush()?;
            }
        }
        if let (Some(view), true) = (held_out, cfg.eval_every > 0 && done % cfg.eval_every == 0) {
            let p = evaluate(gen, scene, view, &eval_options())?;
            report.evals.push((done, p));
            if cfg.stop_psnr.is_some_and(|s| p >= s) {
                break;
            }
        }
    }
    if let Some(f) = &files {
        f.checkpoint(&gen.params)?;
        f.flush()?;
    }
    Ok(report)
}
