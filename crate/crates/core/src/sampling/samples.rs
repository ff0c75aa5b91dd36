use std::cmp::Ordering;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::sampling::traverse::{grid_span, traverse_nonempty, walk_cells, VoxelHit, DEFAULT_MAX_VOXELS};
use crate::sampling::Ray;
use crate::scene::{ObjectBox, ObjectLayout, SemanticVoxelGrid, Vec3};

pub const DEFAULT_POINTS_PER_VOXEL: usize = 6;
pub const DEFAULT_POINTS_PER_OBJECT: usize = 12;
pub const DENSE_SAMPLES: usize = 256;

/// Half-extent of the canonical object cube.
const HALF: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Source {
    Stuff,
    Object(usize),
}

impl Source {
    /// `-1` for stuff, the object index otherwise.
    pub fn tag(self) -> i64 {
        match self {
            Source::Stuff => -1,
            Source::Object(k) => k as i64,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub delta: f64,
    /// World position.
    pub position: Vec3,
    /// Canonical object coordinate for object samples; equals `position` for stuff.
    pub local: Vec3,
    pub source: Source,
    /// Interval this sample was drawn from, and its stratum within it.
    pub interval: usize,
    pub stratum: usize,
}

/// Depth-sorted samples of one ray.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SampleBatch {
    pub samples: Vec<Sample>,
}

impl SampleBatch {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn is_sorted(&self) -> bool {
        self.samples.windows(2).all(|w| w[0].t <= w[1].t)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SamplingConfig {
    pub max_voxels: usize,
    pub points_per_voxel: usize,
    pub points_per_object: usize,
    /// Random shift inside each stratum; off places samples at stratum starts.
    pub jitter: bool,
    pub seed: u64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            max_voxels: DEFAULT_MAX_VOXELS,
            points_per_voxel: DEFAULT_POINTS_PER_VOXEL,
            points_per_object: DEFAULT_POINTS_PER_OBJECT,
            jitter: true,
            seed: 0,
        }
    }
}

impl SamplingConfig {
    pub fn max_samples_per_ray(&self, num_objects: usize) -> usize {
        self.max_voxels * self.points_per_voxel + num_objects * self.points_per_object
    }
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Independent stream for one (seed, pixel, stream) triple.
pub fn stream_rng(seed: u64, pixel: usize, stream: u64) -> ChaCha8Rng {
    let s = splitmix(splitmix(splitmix(seed) ^ pixel as u64) ^ stream);
    ChaCha8Rng::seed_from_u64(s)
}

const STUFF_STREAM: u64 = 0;
const OBJECT_STREAM: u64 = 1 << 32;

/// Stratified depths in `[a, b)`, one per equal sub-segment, with segment lengths
/// chosen so that they tile `[a, b]` exactly: the first absorbs the lead-in
/// `t_0 − a`, the rest span to the next sample, the last runs to `b`.
fn stratified(a: f64, b: f64, m: usize, rng: Option<&mut ChaCha8Rng>) -> Vec<(f64, f64)> {
    let h = (b - a) / m as f64;
    let ts: Vec<f64> = match rng {
        Some(rng) => (0..m).map(|j| (a + (j as f64 + rng.random::<f64>()) * h).min(b)).collect(),
        None => (0..m).map(|j| a + j as f64 * h).collect(),
    };
    (0..m)
        .map(|j| {
            let start = if j == 0 { a } else { ts[j] };
            let end = if j + 1 < m { ts[j + 1] } else { b };
            (ts[j], end - start)
        })
        .collect()
}

/// `points_per_voxel` stratified samples in each interval.
pub fn sample_stuff(ray: &Ray, intervals: &[VoxelHit], points_per_voxel: usize, cfg: &SamplingConfig, pixel: usize) -> Vec<Sample> {
    let mut out = Vec::with_capacity(intervals.len() * points_per_voxel);
    if points_per_voxel == 0 {
        return out;
    }
    for (i, hit) in intervals.iter().enumerate() {
        let mut rng = cfg.jitter.then(|| stream_rng(cfg.seed, pixel, STUFF_STREAM + i as u64));
        for (j, (t, delta)) in stratified(hit.t_enter, hit.t_exit, points_per_voxel, rng.as_mut()).into_iter().enumerate() {
            let p = ray.at(t);
            out.push(Sample { t, delta, position: p, local: p, source: Source::Stuff, interval: i, stratum: j });
        }
    }
    out
}

/// Slab test in the box's canonical frame. Returns `(t_near, t_far)` in world
/// units along the ray, with `t_near` clamped at 0.
pub fn ray_box_intersect(ray: &Ray, b: &ObjectBox) -> Option<(f64, f64)> {
    let o = b.object_from_world(ray.origin);
    let d = b.object_direction(ray.direction);
    let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
    for a in 0..3 {
        if d[a] == 0.0 {
            if o[a].abs() > HALF {
                return None;
            }
            continue;
        }
        let (mut ta, mut tb) = ((-HALF - o[a]) / d[a], (HALF - o[a]) / d[a]);
        if ta > tb {
            std::mem::swap(&mut ta, &mut tb);
        }
        t0 = t0.max(ta);
        t1 = t1.min(tb);
    }
    let t0 = t0.max(0.0);
    (t1 > t0).then_some((t0, t1))
}

/// `m` stratified samples between the ray's entry and exit of box `k`.
pub fn sample_object(ray: &Ray, b: &ObjectBox, k: usize, m: usize, cfg: &SamplingConfig, pixel: usize) -> Vec<Sample> {
    let Some((t0, t1)) = ray_box_intersect(ray, b) else { return Vec::new() };
    if m == 0 {
        return Vec::new();
    }
    let mut rng = cfg.jitter.then(|| stream_rng(cfg.seed, pixel, OBJECT_STREAM + k as u64));
    stratified(t0, t1, m, rng.as_mut())
        .into_iter()
        .enumerate()
        .map(|(j, (t, delta))| {
            let p = ray.at(t);
            let local = b.object_from_world(p).to_array().map(|c| c.clamp(-HALF, HALF));
            Sample {
                t,
                delta,
                position: p,
                local: Vec3::from_array(local),
                source: Source::Object(k),
                interval: 0,
                stratum: j,
            }
        })
        .collect()
}

/// Total order used for merging: depth, then stuff before objects, then object
/// index, then interval and stratum.
pub fn sample_order(a: &Sample, b: &Sample) -> Ordering {
    let class = |s: &Sample| match s.source {
        Source::Stuff => (0, 0),
        Source::Object(k) => (1, k),
    };
    a.t.total_cmp(&b.t)
        .then_with(|| class(a).cmp(&class(b)))
        .then_with(|| a.interval.cmp(&b.interval))
        .then_with(|| a.stratum.cmp(&b.stratum))
}

/// Merges per-source sample lists into one depth-sorted batch. Segment lengths
/// are kept from the source intervals.
pub fn merge_sort_samples(stuff: Vec<Sample>, objects: Vec<Vec<Sample>>) -> SampleBatch {
    let mut samples = stuff;
    for o in objects {
        samples.extend(o);
    }
    samples.sort_by(sample_order);
    SampleBatch { samples }
}

/// Guided samples for one ray: the first non-empty voxels plus every box it hits.
pub fn sample_ray(grid: &SemanticVoxelGrid, layout: &ObjectLayout, ray: &Ray, pixel: usize, cfg: &SamplingConfig) -> SampleBatch {
    let hits = traverse_nonempty(grid, ray, cfg.max_voxels);
    let stuff = sample_stuff(ray, &hits, cfg.points_per_voxel, cfg, pixel);
    let objects = layout
        .iter()
        .map(|(k, b)| sample_object(ray, b, k, cfg.points_per_object, cfg, pixel))
        .collect();
    merge_sort_samples(stuff, objects)
}

/// Uniform stuff samples through the whole grid span at segment midpoints.
/// Each segment length is restricted to its overlap with non-empty voxels, so
/// density is zero outside them. Objects are sampled as in guided mode.
pub fn sample_ray_dense(
    grid: &SemanticVoxelGrid,
    layout: &ObjectLayout,
    ray: &Ray,
    pixel: usize,
    cfg: &SamplingConfig,
    count: usize,
) -> SampleBatch {
    let mut stuff = Vec::with_capacity(count);
    if let Some((a, b)) = grid_span(grid, ray) {
        let mut occupied = Vec::new();
        walk_cells(grid, ray, |hit| {
            if grid.is_occupied(hit.voxel) {
                match occupied.last_mut() {
                    Some((_, end)) if *end == hit.t_enter => *end = hit.t_exit,
                    _ => occupied.push((hit.t_enter, hit.t_exit)),
                }
            }
            true
        });
        let h = (b - a) / count as f64;
        for j in 0..count {
            let (s0, s1) = (a + j as f64 * h, a + (j + 1) as f64 * h);
            let delta: f64 = occupied.iter().map(|&(o0, o1)| (s1.min(o1) - s0.max(o0)).max(0.0)).sum();
            let t = 0.5 * (s0 + s1);
            let p = ray.at(t);
            stuff.push(Sample { t, delta, position: p, local: p, source: Source::Stuff, interval: 0, stratum: j });
        }
    }
    let objects = layout
        .iter()
        .map(|(k, b)| sample_object(ray, b, k, cfg.points_per_object, cfg, pixel))
        .collect();
    merge_sort_samples(stuff, objects)
}
