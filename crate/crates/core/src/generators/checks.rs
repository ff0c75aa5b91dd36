//! Finite-difference cases for the generator networks (tiny architecture).

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::cases::{Case, PRIMITIVE_TOL};
use crate::autodiff::gradcheck::random_tensor;
use crate::autodiff::Tensor;
use crate::generators::{fields, volume, ArchConfig, Generator};
use crate::scene::{SemanticVoxelGrid, Vec3};

/// End-to-end paths are checked at a looser tolerance than single primitives.
pub const PATH_TOL: f64 = 1e-3;

/// Finite-difference step for end-to-end render paths.
pub const PATH_EPS: f64 = 1e-6;

pub fn random_grid(dims: [usize; 3], num_labels: u32, occupancy: f64, rng: &mut impl Rng) -> SemanticVoxelGrid {
    let n = dims.iter().product();
    let labels = (0..n)
        .map(|_| if rng.random_bool(occupancy) { rng.random_range(1..num_labels) as u8 } else { 0 })
        .collect();
    SemanticVoxelGrid::from_labels(dims, num_labels, Vec3::ZERO, Vec3::ONE, labels, Vec::new()).expect("valid grid")
}

pub fn generator_cases(seed: u64) -> Vec<Case> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let arch = ArchConfig::tiny();
    let gen = Arc::new(jitter_biases(Generator::init(&arch, 3, seed).expect("tiny arch"), &mut rng));
    let mut cases = Vec::new();

    let grid = random_grid([4, 4, 4], 3, 0.5, &mut rng);
    let plan = volume::modulation_plan(&grid, 1);
    let g2 = gen.clone();
    cases.push(
        Case::new(
            "spade_block",
            vec![random_tensor(&[arch.vol_width, 4, 4, 4], &mut rng, 1.0), random_tensor(&[1, arch.z_dim], &mut rng, 1.0)],
            PRIMITIVE_TOL,
            Box::new(move |g, ids| volume::spade_block(g, &g2.params, "vol.blk0", ids[0], &plan, ids[1])),
        )
        .with_params(),
    );

    let grid = random_grid([8, 8, 8], 3, 0.4, &mut rng);
    let g2 = gen.clone();
    cases.push(Case::new(
        "feature_grid_mean_wrt_z",
        vec![random_tensor(&[1, arch.z_dim], &mut rng, 1.0)],
        PATH_TOL,
        Box::new(move |g, ids| {
            let psi = volume::feature_grid(g, &g2.params, ids[0], &grid)?;
            g.mean(psi)
        }),
    ));

    let pts: Vec<[f64; 3]> = (0..5).map(|_| [0; 3].map(|_| rng.random_range(-1.0..1.0))).collect();
    let g2 = gen.clone();
    let a2 = arch.clone();
    cases.push(
        Case::new(
            "stuff_field",
            vec![random_tensor(&[5, arch.grid_channels], &mut rng, 1.0)],
            PRIMITIVE_TOL,
            Box::new(move |g, ids| {
                let out = fields::stuff_field(g, &g2.params, &a2, ids[0], &pts)?;
                let sigma = g.reshape(out.sigma, &[5, 1])?;
                g.concat(&[out.features, sigma], 1)
            }),
        )
        .with_params(),
    );

    let pts: Vec<[f64; 3]> = (0..5).map(|_| [0; 3].map(|_| rng.random_range(-0.5..0.5))).collect();
    let g2 = gen.clone();
    let a2 = arch.clone();
    cases.push(
        Case::new(
            "object_field",
            vec![random_tensor(&[1, arch.z_dim], &mut rng, 1.0)],
            PRIMITIVE_TOL,
            Box::new(move |g, ids| {
                let out = fields::object_field(g, &g2.params, &a2, &pts, ids[0])?;
                let sigma = g.reshape(out.sigma, &[5, 1])?;
                g.concat(&[out.features, sigma], 1)
            }),
        )
        .with_params(),
    );

    let dirs: Vec<Vec3> = (0..4)
        .map(|_| Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(0.1..1.0)).normalized())
        .collect();
    let g2 = gen.clone();
    cases.push(
        Case::new(
            "sky_feature",
            vec![random_tensor(&[1, arch.z_dim], &mut rng, 1.0)],
            PRIMITIVE_TOL,
            Box::new(move |g, ids| fields::sky_feature(g, &g2.params, &arch, ids[0], &dirs)),
        )
        .with_params(),
    );
    cases
}

/// Zero-initialized biases put ReLU pre-activations exactly on the kink whenever a
/// whole input row is zero; finite differences need them off it.
pub fn jitter_biases(mut gen: Generator, rng: &mut impl Rng) -> Generator {
    let names: Vec<String> = gen.params.names().filter(|n| n.ends_with(".b")).map(str::to_string).collect();
    for name in names {
        let t = gen.params.get(&name).expect("listed");
        let data = t.data().iter().map(|v| v + rng.random_range(-0.1..0.1)).collect();
        let jittered = Tensor::new(t.shape().to_vec(), data).expect("same shape");
        gen.params.set(&name, jittered).expect("same shape");
    }
    gen
}

/// A `[1, Z]` latent row as a tensor.
pub fn latent_row(v: &[f64]) -> Tensor {
    Tensor::new(vec![1, v.len()], v.to_vec()).expect("sized")
}
