use nff_core::autodiff::{Graph, Tensor};
use nff_core::generators::checks::{generator_cases, latent_row, random_grid};
use nff_core::generators::{fields, render_net, volume, ArchConfig, Generator, LatentCode};
use nff_core::scene::{SemanticVoxelGrid, Vec3};
use nff_core::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny() -> (ArchConfig, Generator) {
    let arch = ArchConfig::tiny();
    let gen = Generator::init(&arch, 3, 17).unwrap();
    (arch, gen)
}

fn psi_of(gen: &Generator, z: &LatentCode, grid: &SemanticVoxelGrid) -> Tensor {
    let mut g = Graph::new();
    let zn = g.constant(z.to_row());
    let psi = volume::feature_grid(&mut g, &gen.params, zn, grid).unwrap();
    g.value(psi).clone()
}

#[test]
fn finite_difference_cases_pass() {
    for case in generator_cases(3) {
        let out = case.run(9, None).unwrap();
        assert!(out.passed(), "{}: {:e}", out.name, out.max_rel_err);
    }
}

#[test]
fn feature_grid_is_deterministic_and_sensitive() {
    let (arch, gen) = tiny();
    let z = LatentCode::from_seed(1, arch.z_dim);
    let grid = SemanticVoxelGrid::new_empty([8, 8, 8], 3, Vec3::ZERO, Vec3::ONE).unwrap();
    let a = psi_of(&gen, &z, &grid);
    assert_eq!(a.shape(), &[arch.grid_channels, 8, 8, 8]);
    assert_eq!(a, psi_of(&gen, &z, &grid));
    let mut other = grid.clone();
    other.set([3, 4, 5], 2).unwrap();
    assert_ne!(a, psi_of(&gen, &z, &other));
}

#[test]
fn feature_grid_rejects_indivisible_dims() {
    let (arch, gen) = tiny();
    let grid = SemanticVoxelGrid::new_empty([8, 12, 8], 3, Vec3::ZERO, Vec3::ONE).unwrap();
    let mut g = Graph::new();
    let z = g.constant(LatentCode::from_seed(1, arch.z_dim).to_row());
    assert!(matches!(
        volume::feature_grid(&mut g, &gen.params, z, &grid),
        Err(Error::GridNotDivisible { factor: 8, .. })
    ));
}

#[test]
fn relabeling_with_permuted_weights_is_symmetric() {
    let (arch, gen) = tiny();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let grid = random_grid([8, 8, 8], 3, 0.6, &mut rng);
    let z = LatentCode::from_seed(2, arch.z_dim);
    let base = psi_of(&gen, &z, &grid);

    let swapped: Vec<u8> = grid.labels().iter().map(|&l| match l { 1 => 2, 2 => 1, x => x }).collect();
    let grid2 = SemanticVoxelGrid::from_labels(grid.dims(), 3, grid.origin(), grid.spacing(), swapped, vec![]).unwrap();
    let mut gen2 = gen.clone();
    let names: Vec<String> = gen.params.names().filter(|n| n.ends_with(".wl")).map(str::to_string).collect();
    for name in names {
        let t = gen.params.get(&name).unwrap();
        let (o, l, k) = (t.shape()[0], t.shape()[1], t.shape()[2]);
        let mut d = t.data().to_vec();
        for oo in 0..o {
            for kk in 0..k {
                d.swap((oo * l + 1) * k + kk, (oo * l + 2) * k + kk);
            }
        }
        gen2.params.set(&name, Tensor::new(t.shape().to_vec(), d).unwrap()).unwrap();
    }
    let permuted = psi_of(&gen2, &z, &grid2);
    for (a, b) in base.data().iter().zip(permuted.data()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn constant_input_normalizes_to_shift_field() {
    let (arch, gen) = tiny();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let grid = random_grid([4, 4, 4], 3, 0.5, &mut rng);
    let plan = volume::modulation_plan(&grid, 1);
    let mut g = Graph::new();
    let h = g.constant(Tensor::full(&[arch.vol_width, 4, 4, 4], 0.75));
    let z = g.constant(LatentCode::from_seed(3, arch.z_dim).to_row());
    let out = volume::spade_norm(&mut g, &gen.params, "vol.blk0.n1", h, &plan, z).unwrap();

    // β alone: the same modulation conv, upper half of its channels
    let mut g2 = Graph::new();
    let z2 = g2.constant(LatentCode::from_seed(3, arch.z_dim).to_row());
    let code = nff_core::generators::layers::row_projection(&mut g2, &gen.params, "vol.blk0.n1.zp", z2).unwrap();
    let ids: Vec<_> = ["wl", "b", "wc"].iter().map(|s| gen.params.node(&mut g2, &format!("vol.blk0.n1.{s}")).unwrap()).collect();
    let mods = g2.label_conv(plan.clone(), &[ids[0], ids[1], ids[2], code]).unwrap();
    let c = arch.vol_width;
    let beta = g2.slice(mods, 0, c, 2 * c).unwrap();
    assert_eq!(g.value(out), g2.value(beta));
}

#[test]
fn densities_are_non_negative_and_finite() {
    let (arch, gen) = tiny();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut g = Graph::new();
    let n = 64;
    let psi = g.constant(Tensor::new(vec![n, arch.grid_channels], (0..n * arch.grid_channels).map(|_| rng.random_range(-50.0..50.0)).collect()).unwrap());
    let pts: Vec<[f64; 3]> = (0..n).map(|_| [0; 3].map(|_| rng.random_range(-1.0..1.0))).collect();
    let out = fields::stuff_field(&mut g, &gen.params, &arch, psi, &pts).unwrap();
    let z = g.constant(LatentCode::from_seed(1, arch.z_dim).to_row());
    let obj = fields::object_field(&mut g, &gen.params, &arch, &pts, z).unwrap();
    for s in [out.sigma, obj.sigma] {
        assert!(g.value(s).data().iter().all(|&v| v >= 0.0 && v.is_finite()));
    }
}

#[test]
fn object_field_depends_only_on_canonical_inputs() {
    let (arch, gen) = tiny();
    let pts = vec![[0.1, -0.2, 0.3], [0.4, 0.0, -0.45]];
    let eval = |seed: u64, pts: &[[f64; 3]]| {
        let mut g = Graph::new();
        let z = g.constant(LatentCode::from_seed(seed, arch.z_dim).to_row());
        let out = fields::object_field(&mut g, &gen.params, &arch, pts, z).unwrap();
        fields::read_samples(&g, out)
    };
    assert_eq!(eval(5, &pts), eval(5, &pts));
    assert_ne!(eval(5, &pts), eval(6, &pts));
}

#[test]
fn sky_rejects_non_unit_and_is_not_symmetric() {
    let (arch, gen) = tiny();
    let d = Vec3::new(0.3, -0.5, 0.8).normalized();
    let eval = |dirs: &[Vec3]| {
        let mut g = Graph::new();
        let z = g.constant(LatentCode::from_seed(9, arch.z_dim).to_row());
        fields::sky_feature(&mut g, &gen.params, &arch, z, dirs).map(|n| g.value(n).clone())
    };
    let a = eval(&[d]).unwrap();
    assert_eq!(a, eval(&[d]).unwrap());
    assert_ne!(a, eval(&[-d]).unwrap());
    assert!(matches!(eval(&[d * 1.1]), Err(Error::NonUnitDirection(_))));
}

#[test]
fn neural_render_shape_range_and_shift_covariance() {
    let (arch, gen) = tiny();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (h, w) = (6, 7);
    let m = arch.feature_dim;
    let img: Vec<f64> = (0..m * h * w).map(|_| rng.random_range(-2.0..2.0)).collect();
    let render = |data: Vec<f64>| {
        let mut g = Graph::new();
        let f = g.constant(Tensor::new(vec![m, h, w], data).unwrap());
        let z = g.constant(latent_row(LatentCode::from_seed(4, arch.z_dim).as_slice()));
        let out = render_net::neural_render(&mut g, &gen.params, &arch, f, z).unwrap();
        g.value(out).clone()
    };
    let a = render(img.clone());
    assert_eq!(a.shape(), &[3, 2 * h, 2 * w]);
    assert!(a.data().iter().all(|&v| (0.0..=1.0).contains(&v)));

    // shift right by one feature pixel
    let mut shifted = vec![0.0; img.len()];
    for c in 0..m {
        for y in 0..h {
            for x in 1..w {
                shifted[(c * h + y) * w + x] = img[(c * h + y) * w + x - 1];
            }
        }
    }
    let b = render(shifted);
    let (oh, ow) = (2 * h, 2 * w);
    for c in 0..3 {
        for y in 3..oh - 3 {
            for x in 5..ow - 3 {
                assert_eq!(b.data()[(c * oh + y) * ow + x], a.data()[(c * oh + y) * ow + x - 2]);
            }
        }
    }
}
