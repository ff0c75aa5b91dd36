//! Scene priors: semantic voxel grid, object layout, camera, and declarative edits.

pub mod camera;
pub mod edit;
pub mod grid;
pub mod io;
pub mod layout;
pub mod math;

pub use camera::{Camera, PixelRect};
pub use grid::{SemanticVoxelGrid, VoxelRegion, EMPTY};
pub use layout::{ObjectBox, ObjectLayout};
pub use math::{Mat3, Quat, Vec3};

use crate::generators::{ArchConfig, LatentCode};

/// A complete generator input: stuff prior, object prior, camera and world latent seed.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub grid: SemanticVoxelGrid,
    pub layout: ObjectLayout,
    pub camera: Camera,
    pub world_seed: u64,
    pub arch: ArchConfig,
}

impl Scene {
    pub fn z_world(&self) -> LatentCode {
        LatentCode::from_seed(self.world_seed, self.arch.z_dim)
    }

    /// Latent codes of the live objects, keyed by stable index.
    pub fn z_objects(&self) -> Vec<(usize, LatentCode)> {
        self.layout
            .iter()
            .map(|(k, b)| (k, LatentCode::from_seed(b.latent_seed(), self.arch.z_dim)))
            .collect()
    }
}
