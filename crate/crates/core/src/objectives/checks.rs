//! Finite-difference checks of the losses: reconstruction into θ, the
//! generator's adversarial loss into z_wld, and the R1 penalty into φ.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::cases::{Case, CheckOutcome};
use crate::autodiff::gradcheck::{numeric_gradient, random_tensor, relative_error};
use crate::autodiff::{second_order_grad, Graph, Tensor};
use crate::compositor::checks::{render_rgb, tiny_fixture};
use crate::compositor::{LatentNodes, RenderOptions};
use crate::error::Result;
use crate::generators::checks::{PATH_EPS, PATH_TOL};
use crate::objectives::{build_stuff_mask, gan_loss_g, masked_recon_loss, Discriminator, PyramidDistance};
use crate::optim::ParamStore;

/// Two-layer discriminator with jittered biases, for `[3, h, w]` inputs.
pub fn small_discriminator(h: usize, w: usize, seed: u64) -> Result<Discriminator> {
    let mut d = Discriminator::new("d", [3, h, w], &[2], seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xd15c);
    let names: Vec<String> = d.params.names().filter(|n| n.ends_with(".b")).map(str::to_string).collect();
    for n in names {
        let t = d.params.get(&n)?.clone();
        d.params.set(&n, random_tensor(t.shape(), &mut rng, 0.5))?;
    }
    Ok(d)
}

pub fn loss_cases(seed: u64) -> Vec<Case> {
    let (gen, scene) = tiny_fixture(seed).expect("tiny fixture");
    let opts = RenderOptions::seeded(seed);
    let (w, h) = (scene.camera.width(), scene.camera.height());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let target = random_tensor(&[3, h, w], &mut rng, 0.5).map(|v| v + 0.5);
    let mask = build_stuff_mask(&scene.camera, &scene.layout);
    let z = scene.z_world().to_row();
    let mut cases = Vec::new();

    let (g2, s2, o2) = (gen.clone(), scene.clone(), opts);
    cases.push(
        Case::new(
            "recon_loss_wrt_params",
            vec![z.clone()],
            PATH_TOL,
            Box::new(move |g, ids| {
                let objects = s2.z_objects().iter().map(|(k, z)| (*k, g.constant(z.to_row()))).collect();
                let rgb = render_rgb(g, &g2, &s2, &LatentNodes { world: ids[0], objects }, &o2)?;
                Ok(masked_recon_loss(g, rgb, &target, &mask, 0.5, &PyramidDistance::default())?.total)
            }),
        )
        .with_params()
        .with_eps(PATH_EPS),
    );

    let d = small_discriminator(h, w, seed).expect("discriminator");
    cases.push(Case::new(
        "gan_g_loss_wrt_z_world",
        vec![z],
        PATH_TOL,
        Box::new(move |g, ids| {
            let objects = scene.z_objects().iter().map(|(k, z)| (*k, g.constant(z.to_row()))).collect();
            let rgb = render_rgb(g, &gen, &scene, &LatentNodes { world: ids[0], objects }, &opts)?;
            gan_loss_g(g, &d, &[rgb])
        }),
    ).with_eps(PATH_EPS));
    cases
}

fn penalty(d: &Discriminator, params: &ParamStore, x: &Tensor, faulty: Option<(&str, f64)>) -> Result<(f64, ParamStore)> {
    let mut g = Graph::new();
    if let Some((name, factor)) = faulty {
        g.inject_fault(name, factor);
    }
    let d = Discriminator { params: params.clone(), ..d.clone() };
    let xi = g.input(x.clone());
    let l = d.logit(&mut g, xi)?;
    let pen = second_order_grad(&g, l, xi)?;
    let mut grads = ParamStore::new();
    for (name, t) in pen.param_grads {
        grads.insert(&name, t);
    }
    Ok((pen.penalty, grads))
}

/// ∂‖∇ₓD(x)‖²/∂φ against finite differences over every discriminator parameter.
pub fn r1_check(seed: u64, faulty: Option<(&str, f64)>) -> Result<CheckOutcome> {
    let d = small_discriminator(4, 4, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x41);
    let x = random_tensor(&[3, 4, 4], &mut rng, 1.0);
    let (_, grads) = penalty(&d, &d.params, &x, faulty)?;
    let names: Vec<String> = d.params.names().map(str::to_string).collect();
    let flat: Vec<f64> = names.iter().flat_map(|n| d.params.get(n).expect("listed").data().to_vec()).collect();
    let unflatten = |v: &[f64]| -> Result<ParamStore> {
        let mut p = d.params.clone();
        let mut off = 0;
        for n in &names {
            let shape = p.get(n)?.shape().to_vec();
            let len = p.get(n)?.len();
            p.set(n, Tensor::new(shape, v[off..off + len].to_vec())?)?;
            off += len;
        }
        Ok(p)
    };
    let numeric = numeric_gradient(&flat, |v| Ok(penalty(&d, &unflatten(v)?, &x, None)?.0))?;
    let analytic: Vec<f64> = names
        .iter()
        .flat_map(|n| match grads.get(n) {
            Ok(t) => t.data().to_vec(),
            Err(_) => vec![0.0; d.params.get(n).expect("listed").len()],
        })
        .collect();
    Ok(CheckOutcome { name: "r1_wrt_discriminator".into(), max_rel_err: relative_error(&analytic, &numeric), tolerance: PATH_TOL })
}

/// All loss-path checks.
pub fn loss_outcomes(seed: u64, faulty: Option<(&str, f64)>) -> Result<Vec<CheckOutcome>> {
    let mut out = Vec::new();
    for case in loss_cases(seed) {
        out.push(case.run(seed, faulty)?);
    }
    out.push(r1_check(seed, faulty)?);
    Ok(out)
}
