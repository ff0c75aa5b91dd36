//! UVGX voxel-grid files and scene-description JSON.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generators::ArchConfig;
use crate::scene::camera::Camera;
use crate::scene::grid::SemanticVoxelGrid;
use crate::scene::layout::{ObjectBox, ObjectLayout};
use crate::scene::math::{Quat, Vec3};
use crate::scene::Scene;

pub const UVGX_MAGIC: &[u8; 4] = b"UVGX";
pub const UVGX_VERSION: u32 = 1;

pub fn encode_uvgx(grid: &SemanticVoxelGrid) -> Vec<u8> {
    let [nx, ny, nz] = grid.dims();
    let mut out = Vec::with_capacity(48 + grid.labels().len());
    out.extend_from_slice(UVGX_MAGIC);
    out.extend_from_slice(&UVGX_VERSION.to_le_bytes());
    for v in [nx as u32, ny as u32, nz as u32, grid.num_labels()] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in grid.origin().to_array().into_iter().chain(grid.spacing().to_array()) {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out.extend_from_slice(grid.labels());
    out.extend_from_slice(&(grid.names().len() as u32).to_le_bytes());
    for name in grid.names() {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a str,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::format(
                self.path,
                format!("byte {}: truncated while reading {what}", self.pos),
            ));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn f32(&mut self, what: &str) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn err(&self, msg: impl std::fmt::Display) -> Error {
        Error::format(self.path, format!("byte {}: {msg}", self.pos))
    }
}

pub fn decode_uvgx(bytes: &[u8], path: &str) -> Result<SemanticVoxelGrid> {
    let mut r = Reader { buf: bytes, pos: 0, path };
    if r.take(4, "magic")? != UVGX_MAGIC {
        return Err(Error::format(path, "byte 0: bad magic, expected UVGX"));
    }
    let version = r.u32("version")?;
    if version != UVGX_VERSION {
        return Err(r.err(format!("unsupported version {version}")));
    }
    let dims = [r.u32("dims")? as usize, r.u32("dims")? as usize, r.u32("dims")? as usize];
    let num_labels = r.u32("label count")?;
    let mut f = [0f64; 6];
    for v in f.iter_mut() {
        *v = r.f32("placement")? as f64;
    }
    let n = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| r.err("dims overflow"))?;
    let labels = r.take(n, "labels")?.to_vec();
    let count = r.u32("name count")? as usize;
    let mut names = Vec::with_capacity(count.min(256));
    for _ in 0..count {
        let len = r.u16("name length")? as usize;
        let raw = r.take(len, "name")?;
        let name = std::str::from_utf8(raw).map_err(|_| r.err("label name is not UTF-8"))?;
        names.push(name.to_owned());
    }
    if r.pos != bytes.len() {
        return Err(r.err("trailing bytes"));
    }
    SemanticVoxelGrid::from_labels(
        dims,
        num_labels,
        Vec3::new(f[0], f[1], f[2]),
        Vec3::new(f[3], f[4], f[5]),
        labels,
        names,
    )
    .map_err(|e| Error::format(path, e.to_string()))
}

pub fn save_uvgx(grid: &SemanticVoxelGrid, path: &Path) -> Result<()> {
    std::fs::write(path, encode_uvgx(grid))?;
    Ok(())
}

pub fn load_uvgx(path: &Path) -> Result<SemanticVoxelGrid> {
    let bytes = std::fs::read(path)?;
    decode_uvgx(&bytes, &path.display().to_string())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraJson {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub quat: [f64; 4],
    pub pos: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectJson {
    pub quat: [f64; 4],
    pub pos: [f64; 3],
    pub size: [f64; 3],
    pub seed: u64,
}

/// On-disk scene description. Removed objects are kept as `null` entries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneJson {
    pub world_seed: u64,
    pub camera: CameraJson,
    pub objects: Vec<Option<ObjectJson>>,
    pub grid_path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arch: Option<ArchConfig>,
}

impl CameraJson {
    pub fn from_camera(c: &Camera) -> Self {
        Self {
            fx: c.fx,
            fy: c.fy,
            cx: c.cx,
            cy: c.cy,
            width: c.width(),
            height: c.height(),
            quat: c.rotation().to_array(),
            pos: c.position().to_array(),
        }
    }

    pub fn to_camera(&self) -> Result<Camera> {
        Camera::new(
            [self.fx, self.fy, self.cx, self.cy],
            (self.width, self.height),
            Quat { w: self.quat[0], x: self.quat[1], y: self.quat[2], z: self.quat[3] },
            Vec3::from_array(self.pos),
        )
    }
}

impl ObjectJson {
    pub fn from_box(b: &ObjectBox) -> Self {
        Self {
            quat: b.rotation().to_array(),
            pos: b.translation().to_array(),
            size: b.size().to_array(),
            seed: b.latent_seed(),
        }
    }

    pub fn to_box(&self) -> Result<ObjectBox> {
        ObjectBox::new(
            Quat { w: self.quat[0], x: self.quat[1], y: self.quat[2], z: self.quat[3] },
            Vec3::from_array(self.pos),
            Vec3::from_array(self.size),
            self.seed,
        )
    }
}

impl SceneJson {
    pub fn from_scene(scene: &Scene, grid_path: &str) -> Self {
        Self {
            world_seed: scene.world_seed,
            camera: CameraJson::from_camera(&scene.camera),
            objects: scene.layout.slots().iter().map(|s| s.as_ref().map(ObjectJson::from_box)).collect(),
            grid_path: grid_path.to_owned(),
            arch: Some(scene.arch.clone()),
        }
    }

    pub fn to_layout(&self) -> Result<ObjectLayout> {
        let slots = self
            .objects
            .iter()
            .map(|o| o.as_ref().map(ObjectJson::to_box).transpose())
            .collect::<Result<Vec<_>>>()?;
        Ok(ObjectLayout::from_slots(slots))
    }
}

pub fn parse_scene_json(text: &str, path: &str) -> Result<SceneJson> {
    serde_json::from_str(text).map_err(|e| {
        Error::format(path, format!("line {} column {}: {e}", e.line(), e.column()))
    })
}

/// Loads a scene description and the grid it references (relative to the JSON file).
pub fn load_scene(json_path: &Path) -> Result<(Scene, PathBuf)> {
    let text = std::fs::read_to_string(json_path)?;
    let desc = parse_scene_json(&text, &json_path.display().to_string())?;
    let grid_path = resolve_relative(json_path, &desc.grid_path);
    let grid = load_uvgx(&grid_path)?;
    let scene = Scene {
        grid,
        layout: desc.to_layout().map_err(|e| Error::format(json_path.display().to_string(), e.to_string()))?,
        camera: desc.camera.to_camera().map_err(|e| Error::format(json_path.display().to_string(), e.to_string()))?,
        world_seed: desc.world_seed,
        arch: desc.arch.unwrap_or_default(),
    };
    Ok((scene, grid_path))
}

pub fn resolve_relative(base_file: &Path, rel: &str) -> PathBuf {
    let p = Path::new(rel);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base_file.parent().unwrap_or(Path::new(".")).join(p)
    }
}

pub fn scene_to_json_string(scene: &Scene, grid_path: &str) -> String {
    let mut s = serde_json::to_string_pretty(&SceneJson::from_scene(scene, grid_path))
        .expect("scene description serializes");
    s.push('\n');
    s
}

/// Writes the grid and the scene JSON (which references the grid by file name).
pub fn save_scene(scene: &Scene, json_path: &Path, grid_path: &Path) -> Result<()> {
    save_uvgx(&scene.grid, grid_path)?;
    let rel = grid_path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| grid_path.display().to_string());
    let rel = if grid_path.parent() == json_path.parent() { rel } else { grid_path.display().to_string() };
    std::fs::write(json_path, scene_to_json_string(scene, &rel))?;
    Ok(())
}
