mod common;

use common::{march_nonempty, random_occupancy_grid, random_ray_through};
use nff_core::sampling::samples::sample_order;
use nff_core::sampling::*;
use nff_core::scene::{ObjectBox, ObjectLayout, Quat, Vec3};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn traversal_matches_marching_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    for _ in 0..100 {
        let grid = random_occupancy_grid(&mut rng, [8, 8, 8], 0.3);
        let ray = random_ray_through(&mut rng, &grid);
        let got = traverse_nonempty(&grid, &ray, 4);
        let want = march_nonempty(&grid, &ray, 4);
        assert_eq!(got.len(), want.len(), "{ray:?}");
        for (h, (c, t0, t1)) in got.iter().zip(&want) {
            assert_eq!(h.voxel, *c);
            assert!((h.t_enter - t0).abs() < 1e-6 && (h.t_exit - t1).abs() < 1e-6, "{h:?} vs {t0} {t1}");
        }
    }
}

#[test]
fn guided_equals_exhaustive_when_few_voxels() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for _ in 0..200 {
        let grid = random_occupancy_grid(&mut rng, [10, 10, 10], 0.02);
        let ray = random_ray_through(&mut rng, &grid);
        let all = traverse_all_nonempty(&grid, &ray);
        if all.len() <= 4 {
            assert_eq!(traverse_nonempty(&grid, &ray, 4), all);
        }
        assert!(all.windows(2).all(|w| w[0].t_exit <= w[1].t_enter && w[0].voxel != w[1].voxel));
    }
}

#[test]
fn stuff_samples_land_in_their_voxels() {
    let mut rng = ChaCha8Rng::seed_from_u64(43);
    let cfg = SamplingConfig { seed: 3, ..Default::default() };
    for p in 0..100 {
        let grid = random_occupancy_grid(&mut rng, [12, 9, 8], 0.2);
        let ray = random_ray_through(&mut rng, &grid);
        let hits = traverse_nonempty(&grid, &ray, 4);
        let samples = sample_stuff(&ray, &hits, 6, &cfg, p);
        assert_eq!(samples.len(), hits.len() * 6);
        for s in &samples {
            let hit = hits[s.interval];
            assert!(grid.is_occupied(hit.voxel));
            let lo = grid.voxel_corner(hit.voxel);
            let hi = lo + grid.spacing();
            for a in 0..3 {
                assert!(s.position[a] >= lo[a] - 1e-9 && s.position[a] <= hi[a] + 1e-9);
            }
            let mid = ray.at(0.5 * (hit.t_enter + hit.t_exit));
            assert_ne!(grid.semantic_at(mid), Some(0));
        }
        // segment lengths tile the intervals
        let covered: f64 = hits.iter().map(|h| h.t_exit - h.t_enter).sum();
        let sum: f64 = samples.iter().map(|s| s.delta).sum();
        assert!((covered - sum).abs() < 1e-9);
    }
}

#[test]
fn sampling_is_reproducible_and_pixel_dependent() {
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let grid = random_occupancy_grid(&mut rng, [8, 8, 8], 0.5);
    let ray = random_ray_through(&mut rng, &grid);
    let mut layout = ObjectLayout::new();
    layout.insert(ObjectBox::axis_aligned(grid.voxel_center([4, 4, 4]), Vec3::new(2.0, 2.0, 2.0), 1).unwrap());
    let cfg = SamplingConfig { seed: 9, ..Default::default() };
    let a = sample_ray(&grid, &layout, &ray, 5, &cfg);
    let b = sample_ray(&grid, &layout, &ray, 5, &cfg);
    assert_eq!(a, b);
    let c = sample_ray(&grid, &layout, &ray, 6, &cfg);
    if !a.is_empty() {
        assert_ne!(a, c);
    }
    assert!(a.len() <= cfg.max_samples_per_ray(1));
}

fn random_sample(rng: &mut impl Rng, source: Source, interval: usize, stratum: usize) -> Sample {
    // coarse depths so ties happen
    let t = rng.random_range(0..20) as f64 * 0.5;
    Sample { t, delta: 0.1, position: Vec3::ZERO, local: Vec3::ZERO, source, interval, stratum }
}

#[test]
fn merge_matches_comparison_sort_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(45);
    for _ in 0..1000 {
        let stuff: Vec<Sample> = (0..rng.random_range(0..10)).map(|j| random_sample(&mut rng, Source::Stuff, j / 3, j % 3)).collect();
        let k = rng.random_range(0..4);
        let objects: Vec<Vec<Sample>> = (0..k)
            .map(|o| (0..rng.random_range(0..6)).map(|j| random_sample(&mut rng, Source::Object(o), 0, j)).collect())
            .collect();
        let mut oracle: Vec<Sample> = stuff.iter().chain(objects.iter().flatten()).copied().collect();
        // insertion sort with an explicit lexicographic comparison
        let key = |s: &Sample| {
            let (class, idx) = match s.source {
                Source::Stuff => (0u8, 0usize),
                Source::Object(k) => (1, k),
            };
            (s.t, class, idx, s.interval, s.stratum)
        };
        for i in 1..oracle.len() {
            let mut j = i;
            while j > 0 && key(&oracle[j - 1]).partial_cmp(&key(&oracle[j])) == Some(std::cmp::Ordering::Greater) {
                oracle.swap(j - 1, j);
                j -= 1;
            }
        }
        let merged = merge_sort_samples(stuff, objects);
        assert_eq!(merged.samples, oracle);
        assert!(merged.is_sorted());
    }
}

proptest! {
    #[test]
    fn merge_is_permutation_invariant(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let stuff: Vec<Sample> = (0..8).map(|j| random_sample(&mut rng, Source::Stuff, j, 0)).collect();
        let objs: Vec<Vec<Sample>> = (0..3)
            .map(|o| (0..5).map(|j| random_sample(&mut rng, Source::Object(o), 0, j)).collect())
            .collect();
        let reference = merge_sort_samples(stuff.clone(), objs.clone());
        let mut s2 = stuff;
        s2.shuffle(&mut rng);
        let mut o2 = objs;
        for o in o2.iter_mut() {
            o.shuffle(&mut rng);
        }
        o2.shuffle(&mut rng);
        prop_assert_eq!(merge_sort_samples(s2, o2), reference);
    }

    #[test]
    fn order_is_total_and_consistent(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (k, sa, sb) = (rng.random_range(0..2), rng.random_range(0..2), rng.random_range(0..2));
        let a = random_sample(&mut rng, Source::Object(k), 0, sa);
        let b = random_sample(&mut rng, Source::Stuff, 0, sb);
        prop_assert_eq!(sample_order(&a, &b), sample_order(&b, &a).reverse());
    }

    #[test]
    fn box_intersection_points_lie_on_the_box(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q = Quat::from_axis_angle(common::random_unit(&mut rng), rng.random_range(0.0..6.3));
        let b = ObjectBox::new(q, Vec3::new(1.0, 2.0, 0.5), Vec3::new(rng.random_range(0.2..3.0), rng.random_range(0.2..3.0), rng.random_range(0.2..3.0)), 0).unwrap();
        let ray = Ray { origin: Vec3::new(rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0)), direction: common::random_unit(&mut rng), pixel: (0, 0) };
        if let Some((t0, t1)) = ray_box_intersect(&ray, &b) {
            prop_assert!(t1 > t0 && t0 >= 0.0);
            let mid = b.object_from_world(ray.at(0.5 * (t0 + t1)));
            prop_assert!((0..3).all(|a| mid[a].abs() <= 0.5 + 1e-9));
            let far = b.object_from_world(ray.at(t1));
            prop_assert!((0..3).any(|a| (far[a].abs() - 0.5).abs() < 1e-9));
        } else {
            // a miss: no fine-step point along the ray lies strictly inside
            for i in 0..2000 {
                let p = b.object_from_world(ray.at(i as f64 * 0.01));
                prop_assert!((0..3).any(|a| p[a].abs() >= 0.5 - 1e-6));
            }
        }
    }
}
