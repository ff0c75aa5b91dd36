//! Finite-difference cases for full renders on the tiny fixture.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::cases::Case;
use crate::autodiff::{Graph, NodeId};
use crate::compositor::render::{feature_grid, render_features, LatentNodes, RenderOptions};
use crate::error::Result;
use crate::fixtures::{make_scene, ScenePreset, LABEL_NAMES};
use crate::generators::checks::{jitter_biases, PATH_EPS, PATH_TOL};
use crate::generators::{render_net, Generator};
use crate::scene::Scene;

/// Tiny scene whose object is in view, with a bias-jittered tiny generator.
pub fn tiny_fixture(seed: u64) -> Result<(Arc<Generator>, Arc<Scene>)> {
    let preset = ScenePreset::by_name("tiny")?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gen = jitter_biases(Generator::init(&preset.arch, LABEL_NAMES.len(), seed)?, &mut rng);
    let mut scene = make_scene(&preset, seed)?;
    for s in 0..64 {
        let visible = scene.layout.iter().any(|(_, b)| scene.camera.project_box(b).is_some_and(|r| r.area() >= 4));
        if visible {
            break;
        }
        scene = make_scene(&preset, seed.wrapping_add(s + 1))?;
    }
    Ok((Arc::new(gen), Arc::new(scene)))
}

/// RGB render of `scene` with caller-supplied latent nodes.
pub fn render_rgb(g: &mut Graph, gen: &Generator, scene: &Scene, latents: &LatentNodes, opts: &RenderOptions) -> Result<NodeId> {
    let psi = feature_grid(g, gen, latents.world, &scene.grid)?;
    let fr = render_features(g, gen, &scene.grid, &scene.layout, &scene.camera, latents, psi, opts)?;
    render_net::neural_render(g, &gen.params, &gen.arch, fr.features, latents.world)
}

/// Pixel → z_wld and pixel → z_obj paths, plus pixel → θ.
pub fn compositor_cases(seed: u64) -> Vec<Case> {
    let (gen, scene) = tiny_fixture(seed).expect("tiny fixture");
    let opts = RenderOptions::seeded(seed);
    let z_world = scene.z_world().to_row();
    let objects: Vec<_> = scene.z_objects();
    let mut cases = Vec::new();

    let (g2, s2, o2, objs) = (gen.clone(), scene.clone(), opts, objects.clone());
    cases.push(Case::new(
        "pixel_wrt_z_world",
        vec![z_world.clone()],
        PATH_TOL,
        Box::new(move |g, ids| {
            let objects = objs.iter().map(|(k, z)| (*k, g.constant(z.to_row()))).collect();
            render_rgb(g, &g2, &s2, &LatentNodes { world: ids[0], objects }, &o2)
        }),
    ).with_eps(PATH_EPS));

    let (g2, s2, o2) = (gen.clone(), scene.clone(), opts);
    let keys: Vec<usize> = objects.iter().map(|(k, _)| *k).collect();
    cases.push(Case::new(
        "pixel_wrt_z_objects",
        objects.iter().map(|(_, z)| z.to_row()).collect(),
        PATH_TOL,
        Box::new(move |g, ids| {
            let world = g.constant(s2.z_world().to_row());
            let objects: BTreeMap<usize, NodeId> = keys.iter().copied().zip(ids.iter().copied()).collect();
            render_rgb(g, &g2, &s2, &LatentNodes { world, objects }, &o2)
        }),
    ).with_eps(PATH_EPS));

    let (g2, s2, o2) = (gen, scene, opts);
    cases.push(
        Case::new(
            "pixel_wrt_params",
            vec![z_world],
            PATH_TOL,
            Box::new(move |g, ids| {
                let objects = s2.z_objects().iter().map(|(k, z)| (*k, g.constant(z.to_row()))).collect();
                render_rgb(g, &g2, &s2, &LatentNodes { world: ids[0], objects }, &o2)
            }),
        )
        .with_params()
        .with_eps(PATH_EPS),
    );
    cases
}
