//! Rays, prior-guided sample placement, and depth-ordered merging.

pub mod rays;
pub mod samples;
pub mod traverse;

pub use rays::{generate_rays, Ray};
pub use samples::{
    merge_sort_samples, ray_box_intersect, sample_object, sample_ray, sample_ray_dense, sample_stuff, Sample,
    SampleBatch, SamplingConfig, Source, DENSE_SAMPLES,
};
pub use traverse::{traverse_all_nonempty, traverse_nonempty, VoxelHit};
