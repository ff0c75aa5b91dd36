//! Feature compositing along rays, object alpha maps, the neural renderer
//! wrapper, and object patch extraction.

pub mod checks;
pub mod image;
pub mod patch;
pub mod ray;
pub mod render;

pub use patch::{extract_patch, extract_patch_node, PATCH_SIZE};
pub use ray::{composite_ray, object_alpha, Composited, ShadedSample};
pub use render::{
    render, render_features, render_scene_nodes, render_view, CachedRenderer, FeatureRender, LatentNodes, RayWeights,
    RenderNodes, RenderOptions, RenderOutput, SamplingMode,
};
