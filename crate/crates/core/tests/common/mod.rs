//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use nff_core::sampling::Ray;
use nff_core::scene::{SemanticVoxelGrid, Vec3};
use rand::Rng;

/// Cells a ray passes through, found by fixed-step marching with bisection
/// refinement of every cell change. Returns `(cell, t_enter, t_exit)`.
pub fn march_cells(grid: &SemanticVoxelGrid, ray: &Ray, t_max: f64) -> Vec<([usize; 3], f64, f64)> {
    let s = grid.spacing();
    let step = s.x.min(s.y).min(s.z) / 1000.0;
    let cell = |t: f64| grid.voxel_of(ray.at(t));
    let mut out: Vec<([usize; 3], f64, f64)> = Vec::new();
    let push = |c: Option<[usize; 3]>, t: f64, out: &mut Vec<([usize; 3], f64, f64)>| {
        if let Some(last) = out.last_mut() {
            last.2 = t;
        }
        if let Some(c) = c {
            out.push((c, t, f64::NAN));
        }
    };
    fn refine(
        cell: &dyn Fn(f64) -> Option<[usize; 3]>,
        ta: f64,
        ca: Option<[usize; 3]>,
        tb: f64,
        cb: Option<[usize; 3]>,
        changes: &mut Vec<(f64, Option<[usize; 3]>)>,
    ) {
        if ca == cb {
            return;
        }
        if tb - ta < 1e-12 {
            changes.push((tb, cb));
            return;
        }
        let tm = 0.5 * (ta + tb);
        let cm = cell(tm);
        refine(cell, ta, ca, tm, cm, changes);
        refine(cell, tm, cm, tb, cb, changes);
    }
    let mut prev = cell(0.0);
    if prev.is_some() {
        push(prev, 0.0, &mut out);
    }
    let mut t = 0.0;
    while t < t_max {
        let tn = t + step;
        let cn = cell(tn);
        if cn != prev {
            let mut changes = Vec::new();
            refine(&cell, t, prev, tn, cn, &mut changes);
            for (tc, c) in changes {
                push(c, tc, &mut out);
            }
            prev = cn;
        }
        t = tn;
    }
    if let Some(last) = out.last_mut() {
        if last.2.is_nan() {
            last.2 = t;
        }
    }
    out
}

/// Non-empty cells from [`march_cells`], first `max` of them.
pub fn march_nonempty(grid: &SemanticVoxelGrid, ray: &Ray, max: usize) -> Vec<([usize; 3], f64, f64)> {
    let far = (grid.upper_corner() - grid.origin()).norm() + (ray.origin - grid.origin()).norm() + 1.0;
    march_cells(grid, ray, far).into_iter().filter(|(c, _, _)| grid.is_occupied(*c)).take(max).collect()
}

pub fn random_occupancy_grid(rng: &mut impl Rng, dims: [usize; 3], occupancy: f64) -> SemanticVoxelGrid {
    let spacing = Vec3::new(rng.random_range(0.3..1.5), rng.random_range(0.3..1.5), rng.random_range(0.3..1.5));
    let origin = Vec3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
    let mut g = SemanticVoxelGrid::new_empty(dims, 4, origin, spacing).unwrap();
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                if rng.random_bool(occupancy) {
                    g.set([x, y, z], rng.random_range(1..4)).unwrap();
                }
            }
        }
    }
    g
}

pub fn random_unit(rng: &mut impl Rng) -> Vec3 {
    loop {
        let v = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let n = v.norm();
        if n > 0.1 && n <= 1.0 {
            return v / n;
        }
    }
}

/// A ray starting anywhere around the grid, aimed through a random point inside it.
pub fn random_ray_through(rng: &mut impl Rng, grid: &SemanticVoxelGrid) -> Ray {
    let lo = grid.origin();
    let hi = grid.upper_corner();
    let ext = hi - lo;
    let pick = |rng: &mut dyn rand::RngCore, a: usize, pad: f64| {
        rng.random_range(lo[a] - pad * ext[a]..hi[a] + pad * ext[a])
    };
    let origin = Vec3::new(pick(rng, 0, 0.5), pick(rng, 1, 0.5), pick(rng, 2, 0.5));
    let target = Vec3::new(pick(rng, 0, 0.0), pick(rng, 1, 0.0), pick(rng, 2, 0.0));
    let d = target - origin;
    let direction = if d.norm() > 1e-6 { d.normalized() } else { random_unit(rng) };
    Ray { origin, direction, pixel: (0, 0) }
}

/// Literal front-to-back compositing over an already sorted list of
/// `(feature, sigma, delta)`: returns `(F, weights, sky_weight)`.
pub fn composite_literal(samples: &[(Vec<f64>, f64, f64)], sky: &[f64]) -> (Vec<f64>, Vec<f64>, f64) {
    let mut weights = Vec::new();
    for i in 0..samples.len() {
        let mut t = 1.0;
        for s in &samples[..i] {
            let alpha_j = 1.0 - (-s.1 * s.2).exp();
            t *= 1.0 - alpha_j;
        }
        let alpha_i = 1.0 - (-samples[i].1 * samples[i].2).exp();
        weights.push(t * alpha_i);
    }
    let total: f64 = weights.iter().sum();
    let mut f = vec![0.0; sky.len()];
    for (c, fc) in f.iter_mut().enumerate() {
        for (i, s) in samples.iter().enumerate() {
            *fc += weights[i] * s.0[c];
        }
        *fc += (1.0 - total) * sky[c];
    }
    (f, weights, 1.0 - total)
}
