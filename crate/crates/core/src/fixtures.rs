//! Procedural scenes in the style of a floor with colored walls and boxes
//! resting on it, plus camera trajectories through them.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::generators::ArchConfig;
use crate::scene::{Camera, ObjectBox, ObjectLayout, Quat, Scene, SemanticVoxelGrid, Vec3, VoxelRegion};

pub const LABEL_NAMES: [&str; 7] = ["empty", "road", "grass", "wall-red", "wall-green", "wall-blue", "wall-gray"];
pub const ROAD: u8 = 1;
pub const GRASS: u8 = 2;
const FIRST_WALL: u8 = 3;

/// Parameters of a procedural scene family.
#[derive(Clone, Debug, PartialEq)]
pub struct ScenePreset {
    pub name: &'static str,
    pub dims: [usize; 3],
    /// World size of the grid box.
    pub extent: Vec3,
    /// Floor thickness in voxels (0 for none).
    pub floor_voxels: usize,
    pub walls: (usize, usize),
    pub objects: (usize, usize),
    /// Isolated occupied voxels scattered through the volume.
    pub scattered: usize,
    pub image: (usize, usize),
    pub arch: ArchConfig,
}

impl ScenePreset {
    pub fn by_name(name: &str) -> Result<Self> {
        let base = ScenePreset {
            name: "clevr-w",
            dims: [32, 32, 32],
            extent: Vec3::new(8.0, 8.0, 4.0),
            floor_voxels: 2,
            walls: (1, 2),
            objects: (1, 3),
            scattered: 0,
            image: (64, 64),
            arch: ArchConfig::desk(),
        };
        Ok(match name {
            "clevr-w" => base,
            "clevr-w-empty" => ScenePreset { name: "clevr-w-empty", objects: (0, 0), ..base },
            "road" => ScenePreset { name: "road", walls: (0, 0), objects: (0, 0), ..base },
            "sparse" => ScenePreset {
                name: "sparse",
                floor_voxels: 0,
                walls: (0, 0),
                objects: (0, 0),
                scattered: 24,
                image: (32, 32),
                ..base
            },
            "tiny" => ScenePreset {
                name: "tiny",
                dims: [8, 8, 8],
                extent: Vec3::new(4.0, 4.0, 2.0),
                floor_voxels: 1,
                walls: (1, 1),
                objects: (1, 1),
                image: (8, 8),
                arch: ArchConfig::tiny(),
                ..base
            },
            other => return Err(Error::UnknownPreset(other.to_string())),
        })
    }

    pub fn names() -> &'static [&'static str] {
        &["clevr-w", "clevr-w-empty", "road", "sparse", "tiny"]
    }
}

fn spacing(p: &ScenePreset) -> Vec3 {
    Vec3::new(p.extent.x / p.dims[0] as f64, p.extent.y / p.dims[1] as f64, p.extent.z / p.dims[2] as f64)
}

/// Default viewpoint: on the −x side of the grid, looking across it.
pub fn default_camera(p: &ScenePreset) -> Result<Camera> {
    let e = p.extent;
    let eye = Vec3::new(0.05 * e.x, 0.5 * e.y, 0.3 * e.z);
    let target = Vec3::new(0.7 * e.x, 0.5 * e.y, 0.05 * e.z);
    Camera::look_at(p.image.0, p.image.1, 60.0, eye, target)
}

/// Deterministic scene for `(preset, seed)`.
pub fn make_scene(p: &ScenePreset, seed: u64) -> Result<Scene> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let names = LABEL_NAMES.iter().map(|s| s.to_string()).collect();
    let labels = vec![0u8; p.dims.iter().product()];
    let mut grid = SemanticVoxelGrid::from_labels(p.dims, LABEL_NAMES.len() as u32, Vec3::ZERO, spacing(p), labels, names)?;
    let [nx, ny, nz] = p.dims;
    if p.floor_voxels > 0 {
        grid = grid.edit_occupancy(VoxelRegion::new([0, 0, 0], [nx, ny, p.floor_voxels]), ROAD)?;
        // a grass patch for label variety
        if p.walls.1 > 0 {
            let gx = rng.random_range(0..nx / 2);
            let gy = rng.random_range(0..ny / 2);
            grid = grid.edit_occupancy(VoxelRegion::new([gx, gy, 0], [gx + nx / 4, gy + ny / 4, p.floor_voxels]), GRASS)?;
        }
    }
    let walls = rng.random_range(p.walls.0..=p.walls.1);
    let wall_t = (nx / 16).max(1);
    let height = (nz / 2).max(1);
    for w in 0..walls {
        let label = FIRST_WALL + rng.random_range(0..4u8);
        let region = if w % 2 == 0 {
            // far wall across y at large x
            let x0 = rng.random_range(nx * 3 / 4..nx - wall_t);
            VoxelRegion::new([x0, 0, 0], [x0 + wall_t, ny, height])
        } else {
            // side wall along x at one y edge
            let y0 = if rng.random_bool(0.5) { rng.random_range(0..ny / 8) } else { rng.random_range(ny * 7 / 8 - wall_t..ny - wall_t) };
            VoxelRegion::new([0, y0, 0], [nx, y0 + wall_t, height])
        };
        grid = grid.edit_occupancy(region, label)?;
    }
    for _ in 0..p.scattered {
        let ijk = [rng.random_range(0..nx), rng.random_range(0..ny), rng.random_range(0..nz)];
        grid.set(ijk, rng.random_range(1..LABEL_NAMES.len() as u8))?;
    }

    let mut layout = ObjectLayout::new();
    let count = rng.random_range(p.objects.0..=p.objects.1);
    let s = spacing(p);
    let floor_top = p.floor_voxels as f64 * s.z;
    let e = p.extent;
    for _ in 0..count {
        let size = Vec3::new(
            rng.random_range(0.08..0.15) * e.x,
            rng.random_range(0.06..0.12) * e.y,
            rng.random_range(0.08..0.16) * e.z,
        );
        let yaw = rng.random_range(0.0..std::f64::consts::PI);
        // keep the rotated footprint inside the floor area used by the camera
        let center = Vec3::new(
            rng.random_range(0.35..0.65) * e.x,
            rng.random_range(0.3..0.7) * e.y,
            floor_top + 0.5 * size.z,
        );
        let q = Quat::from_axis_angle(Vec3::new(0.0, 0.0, 1.0), yaw);
        layout.insert(ObjectBox::new(q, center, size, rng.random())?);
    }
    Ok(Scene { grid, layout, camera: default_camera(p)?, world_seed: rng.random(), arch: p.arch.clone() })
}

/// Forward-moving camera path at fixed height.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub poses: Vec<Camera>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrajectoryConfig {
    pub steps: usize,
    /// Distance between consecutive positions.
    pub step: f64,
    /// Maximum heading change per step, in degrees.
    pub yaw_jitter_deg: f64,
    pub height: f64,
    /// Downward tilt of the view, in degrees.
    pub pitch_deg: f64,
    pub seed: u64,
}

impl Trajectory {
    /// Starts at `start`'s horizontal position and heading, then moves in the ground plane.
    pub fn forward(start: &Camera, cfg: &TrajectoryConfig) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let fwd = start.rotation_matrix().mul_vec(Vec3::new(0.0, 0.0, 1.0));
        let mut heading = fwd.y.atan2(fwd.x);
        let mut pos = Vec3::new(start.position().x, start.position().y, cfg.height);
        let mut poses = Vec::with_capacity(cfg.steps);
        let tilt = cfg.pitch_deg.to_radians().tan();
        for i in 0..cfg.steps {
            if i > 0 {
                if cfg.yaw_jitter_deg > 0.0 {
                    heading += rng.random_range(-cfg.yaw_jitter_deg..=cfg.yaw_jitter_deg).to_radians();
                }
                pos = pos + Vec3::new(heading.cos(), heading.sin(), 0.0) * cfg.step;
            }
            let dir = Vec3::new(heading.cos(), heading.sin(), -tilt);
            let q = Quat::look_rotation(dir, Vec3::new(0.0, 0.0, 1.0));
            poses.push(start.with_pose(q, pos)?);
        }
        Ok(Self { poses })
    }
}

/// Cameras on an arc around the grid center, all looking at it.
pub fn orbit_poses(scene: &Scene, count: usize, arc_deg: f64) -> Result<Vec<Camera>> {
    let lo = scene.grid.origin();
    let hi = scene.grid.upper_corner();
    let center = (lo + hi) * 0.5;
    let target = Vec3::new(center.x, center.y, lo.z);
    let eye0 = scene.camera.position();
    let rel = eye0 - target;
    let radius = (rel.x * rel.x + rel.y * rel.y).sqrt();
    let base = rel.y.atan2(rel.x);
    (0..count)
        .map(|i| {
            let f = if count > 1 { i as f64 / (count - 1) as f64 - 0.5 } else { 0.0 };
            let a = base + f * arc_deg.to_radians();
            let eye = Vec3::new(target.x + radius * a.cos(), target.y + radius * a.sin(), eye0.z);
            let q = Quat::look_rotation(target - eye, Vec3::new(0.0, 0.0, 1.0));
            scene.camera.with_pose(q, eye)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_presets() {
        let p = ScenePreset::by_name("clevr-w").unwrap();
        assert_eq!(make_scene(&p, 3).unwrap(), make_scene(&p, 3).unwrap());
        let e = ScenePreset::by_name("clevr-w-empty").unwrap();
        assert_eq!(make_scene(&e, 3).unwrap().layout.live_count(), 0);
        assert!(matches!(ScenePreset::by_name("nope"), Err(Error::UnknownPreset(_))));
        for name in ScenePreset::names() {
            let p = ScenePreset::by_name(name).unwrap();
            make_scene(&p, 1).unwrap();
        }
    }

    #[test]
    fn objects_rest_on_floor() {
        let p = ScenePreset::by_name("clevr-w").unwrap();
        for seed in 0..20 {
            let s = make_scene(&p, seed).unwrap();
            for (_, b) in s.layout.iter() {
                let c = b.translation();
                let below = Vec3::new(c.x, c.y, 0.5 * s.grid.spacing().z);
                let label = s.grid.semantic_at(below).unwrap();
                assert!(label == ROAD || label == GRASS, "seed {seed}: label {label}");
            }
        }
    }

    #[test]
    fn trajectory_steps_are_exact() {
        let p = ScenePreset::by_name("clevr-w").unwrap();
        let cam = default_camera(&p).unwrap();
        let cfg = TrajectoryConfig { steps: 6, step: 0.5, yaw_jitter_deg: 5.0, height: 1.2, pitch_deg: 10.0, seed: 2 };
        let t = Trajectory::forward(&cam, &cfg).unwrap();
        for w in t.poses.windows(2) {
            assert!(((w[1].position() - w[0].position()).norm() - 0.5).abs() < 1e-9);
        }
    }
}
