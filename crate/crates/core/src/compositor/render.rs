use std::collections::BTreeMap;
use std::sync::Arc;

use rayon::prelude::*;

use crate::autodiff::{CompositePlan, Graph, NodeId, Tensor};
use crate::error::{Error, Result};
use crate::generators::{fields, render_net, trilerp::trilerp_plan, volume, Generator};
use crate::sampling::{generate_rays, sample_ray, sample_ray_dense, SampleBatch, SamplingConfig, Source};
use crate::scene::{Camera, ObjectLayout, Scene, SemanticVoxelGrid, Vec3};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SamplingMode {
    /// First non-empty voxels plus box intersections.
    Guided,
    /// This many uniform samples through the whole grid.
    Dense(usize),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RenderOptions {
    pub sampling: SamplingConfig,
    pub mode: SamplingMode,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self { sampling: SamplingConfig::default(), mode: SamplingMode::Guided }
    }
}

impl RenderOptions {
    pub fn seeded(seed: u64) -> Self {
        Self { sampling: SamplingConfig { seed, ..Default::default() }, mode: SamplingMode::Guided }
    }

    /// Guided sampling at stratum starts, with no randomness.
    pub fn unjittered() -> Self {
        Self { sampling: SamplingConfig { jitter: false, ..Default::default() }, mode: SamplingMode::Guided }
    }
}

/// Latent codes as graph leaves, so renders can be differentiated with respect to them.
#[derive(Clone, Debug)]
pub struct LatentNodes {
    pub world: NodeId,
    pub objects: BTreeMap<usize, NodeId>,
}

impl LatentNodes {
    pub fn for_scene(g: &mut Graph, scene: &Scene) -> Self {
        let world = g.input(scene.z_world().to_row());
        let objects = scene.z_objects().into_iter().map(|(k, z)| (k, g.input(z.to_row()))).collect();
        Self { world, objects }
    }
}

/// Per-ray split of the unit weight between stuff, each object, and the sky.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RayWeights {
    pub stuff: f64,
    pub objects: BTreeMap<usize, f64>,
    pub sky: f64,
}

impl RayWeights {
    pub fn total(&self) -> f64 {
        self.stuff + self.objects.values().sum::<f64>() + self.sky
    }
}

/// Feature-resolution render recorded on a graph.
#[derive(Clone, Debug)]
pub struct FeatureRender {
    /// `[M_f, H_f, W_f]`.
    pub features: NodeId,
    /// `[H_f, W_f]` per live object.
    pub alphas: BTreeMap<usize, NodeId>,
    pub weights: Vec<RayWeights>,
    pub plan: Arc<CompositePlan>,
    pub width: usize,
    pub height: usize,
    pub num_samples: usize,
}

/// Maps world points to `[−1, 1]³` over the grid's box.
pub fn grid_normalized(grid: &SemanticVoxelGrid, p: Vec3) -> [f64; 3] {
    let lo = grid.origin();
    let ext = grid.upper_corner() - lo;
    [0, 1, 2].map(|a| 2.0 * (p[a] - lo[a]) / ext[a] - 1.0)
}

/// Samples every ray of `camera`; per-ray streams make this order independent.
pub fn sample_camera(grid: &SemanticVoxelGrid, layout: &ObjectLayout, camera: &Camera, opts: &RenderOptions) -> (Vec<Vec3>, Vec<SampleBatch>) {
    let rays = generate_rays(camera);
    let batches = rays
        .par_iter()
        .enumerate()
        .map(|(p, ray)| match opts.mode {
            SamplingMode::Guided => sample_ray(grid, layout, ray, p, &opts.sampling),
            SamplingMode::Dense(n) => sample_ray_dense(grid, layout, ray, p, &opts.sampling, n),
        })
        .collect();
    (rays.iter().map(|r| r.direction).collect(), batches)
}

/// Ψ for the scene's grid, recorded on `g`.
pub fn feature_grid(g: &mut Graph, gen: &Generator, z_world: NodeId, grid: &SemanticVoxelGrid) -> Result<NodeId> {
    volume::feature_grid(g, &gen.params, z_world, grid)
}

/// Shades, sorts and composites all rays of `camera` into a feature image.
/// `psi` is the scene's feature grid (fresh or cached).
#[allow(clippy::too_many_arguments)]
pub fn render_features(
    g: &mut Graph,
    gen: &Generator,
    grid: &SemanticVoxelGrid,
    layout: &ObjectLayout,
    camera: &Camera,
    latents: &LatentNodes,
    psi: NodeId,
    opts: &RenderOptions,
) -> Result<FeatureRender> {
    let arch = &gen.arch;
    let (wf, hf) = camera.feature_size();
    let (dirs, batches) = sample_camera(grid, layout, camera, opts);

    // Rows are grouped by source: stuff first, then each object in index order.
    let mut stuff_pts = Vec::new();
    let mut obj_pts: BTreeMap<usize, Vec<[f64; 3]>> = BTreeMap::new();
    for b in &batches {
        for s in &b.samples {
            match s.source {
                Source::Stuff => stuff_pts.push(s.position),
                Source::Object(k) => obj_pts.entry(k).or_default().push(s.local.to_array()),
            }
        }
    }
    let mut base = BTreeMap::new();
    let mut offset = stuff_pts.len();
    for (&k, pts) in &obj_pts {
        base.insert(k, offset);
        offset += pts.len();
    }
    let num_samples = offset;

    let mut ray_starts = Vec::with_capacity(batches.len() + 1);
    let mut order = Vec::with_capacity(num_samples);
    let mut delta = Vec::with_capacity(num_samples);
    let mut tag = Vec::with_capacity(num_samples);
    let mut next_stuff = 0;
    let mut next_obj: BTreeMap<usize, usize> = base.clone();
    ray_starts.push(0);
    for b in &batches {
        for s in &b.samples {
            let row = match s.source {
                Source::Stuff => {
                    next_stuff += 1;
                    next_stuff - 1
                }
                Source::Object(k) => {
                    let slot = next_obj.get_mut(&k).expect("object rows reserved");
                    *slot += 1;
                    *slot - 1
                }
            };
            order.push(row);
            delta.push(s.delta);
            tag.push(s.source.tag());
        }
        ray_starts.push(order.len());
    }
    let plan = Arc::new(CompositePlan { num_samples, ray_starts, order, delta, tag });

    let m = arch.feature_dim;
    let mut f_parts = Vec::new();
    let mut s_parts = Vec::new();
    if !stuff_pts.is_empty() {
        let tplan = Arc::new(trilerp_plan(grid, &stuff_pts)?);
        let psi_at = g.trilerp(psi, tplan)?;
        let x_norm: Vec<[f64; 3]> = stuff_pts.iter().map(|&p| grid_normalized(grid, p)).collect();
        let nodes = fields::stuff_field(g, &gen.params, arch, psi_at, &x_norm)?;
        f_parts.push(nodes.features);
        s_parts.push(nodes.sigma);
    }
    for (k, pts) in &obj_pts {
        let z = *latents.objects.get(k).ok_or(Error::InvalidObject(*k))?;
        let nodes = fields::object_field(g, &gen.params, arch, pts, z)?;
        f_parts.push(nodes.features);
        s_parts.push(nodes.sigma);
    }
    let (f, sigma) = match f_parts.len() {
        0 => (g.constant(Tensor::zeros(&[0, m])), g.constant(Tensor::zeros(&[0]))),
        1 => (f_parts[0], s_parts[0]),
        _ => (g.concat(&f_parts, 0)?, g.concat(&s_parts, 0)?),
    };
    let sky = fields::sky_feature(g, &gen.params, arch, latents.world, &dirs)?;
    let flat = g.composite(f, sigma, sky, plan.clone())?;
    let chw = g.transpose(flat)?;
    let features = g.reshape(chw, &[m, hf, wf])?;

    let mut alphas = BTreeMap::new();
    for (k, _) in layout.iter() {
        let a = g.object_alpha(sigma, plan.clone(), k as i64)?;
        alphas.insert(k, g.reshape(a, &[hf, wf])?);
    }
    let weights = ray_weights(&plan, g.value(sigma).data());
    Ok(FeatureRender { features, alphas, weights, plan, width: wf, height: hf, num_samples })
}

/// Splits each ray's compositing weights by sample source.
pub fn ray_weights(plan: &CompositePlan, sigma: &[f64]) -> Vec<RayWeights> {
    (0..plan.num_rays())
        .map(|r| {
            let mut rw = RayWeights::default();
            let mut trans = 1.0;
            let mut total = 0.0;
            for i in plan.span(r) {
                let alpha = 1.0 - (-sigma[plan.order[i]] * plan.delta[i]).exp();
                let w = trans * alpha;
                if plan.tag[i] < 0 {
                    rw.stuff += w;
                } else {
                    *rw.objects.entry(plan.tag[i] as usize).or_default() += w;
                }
                total += w;
                trans *= 1.0 - alpha;
            }
            rw.sky = 1.0 - total;
            rw
        })
        .collect()
}

/// Full render on a graph: feature image, alphas and the 2× RGB image `[3, H, W]`.
#[derive(Clone, Debug)]
pub struct RenderNodes {
    pub psi: NodeId,
    pub latents: LatentNodes,
    pub feature: FeatureRender,
    pub rgb: NodeId,
}

pub fn render_scene_nodes(g: &mut Graph, gen: &Generator, scene: &Scene, camera: &Camera, opts: &RenderOptions) -> Result<RenderNodes> {
    let latents = LatentNodes::for_scene(g, scene);
    let psi = feature_grid(g, gen, latents.world, &scene.grid)?;
    let feature = render_features(g, gen, &scene.grid, &scene.layout, camera, &latents, psi, opts)?;
    let rgb = render_net::neural_render(g, &gen.params, &gen.arch, feature.features, latents.world)?;
    Ok(RenderNodes { psi, latents, feature, rgb })
}

/// Evaluated render outputs.
#[derive(Clone, Debug)]
pub struct RenderOutput {
    /// `[M_f, H_f, W_f]`.
    pub feature_image: Tensor,
    /// `[H_f, W_f]` per live object.
    pub object_alphas: BTreeMap<usize, Tensor>,
    /// `[3, H, W]` in `[0, 1]`.
    pub rgb: Tensor,
    pub weights: Vec<RayWeights>,
    pub num_samples: usize,
}

/// Renders `scene` from its own camera.
pub fn render(gen: &Generator, scene: &Scene, opts: &RenderOptions) -> Result<RenderOutput> {
    render_view(gen, scene, &scene.camera, opts)
}

pub fn render_view(gen: &Generator, scene: &Scene, camera: &Camera, opts: &RenderOptions) -> Result<RenderOutput> {
    let mut g = Graph::new();
    let nodes = render_scene_nodes(&mut g, gen, scene, camera, opts)?;
    Ok(collect_output(&g, &nodes))
}

pub fn collect_output(g: &Graph, nodes: &RenderNodes) -> RenderOutput {
    RenderOutput {
        feature_image: g.value(nodes.feature.features).clone(),
        object_alphas: nodes.feature.alphas.iter().map(|(&k, &n)| (k, g.value(n).clone())).collect(),
        rgb: g.value(nodes.rgb).clone(),
        weights: nodes.feature.weights.clone(),
        num_samples: nodes.feature.num_samples,
    }
}

/// Renders many poses of one scene, computing Ψ once.
pub struct CachedRenderer<'a> {
    gen: &'a Generator,
    scene: &'a Scene,
    psi: Tensor,
}

impl<'a> CachedRenderer<'a> {
    pub fn new(gen: &'a Generator, scene: &'a Scene) -> Result<Self> {
        let mut g = Graph::new();
        let z = g.input(scene.z_world().to_row());
        let psi = feature_grid(&mut g, gen, z, &scene.grid)?;
        Ok(Self { gen, scene, psi: g.value(psi).clone() })
    }

    pub fn psi(&self) -> &Tensor {
        &self.psi
    }

    pub fn render(&self, camera: &Camera, opts: &RenderOptions) -> Result<RenderOutput> {
        let mut g = Graph::new();
        let latents = LatentNodes::for_scene(&mut g, self.scene);
        let psi = g.constant(self.psi.clone());
        let feature = render_features(&mut g, self.gen, &self.scene.grid, &self.scene.layout, camera, &latents, psi, opts)?;
        let rgb = render_net::neural_render(&mut g, &self.gen.params, &self.gen.arch, feature.features, latents.world)?;
        Ok(collect_output(&g, &RenderNodes { psi, latents, feature, rgb }))
    }
}
