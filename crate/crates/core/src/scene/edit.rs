//! Line-oriented edit scripts over a scene's grid and layout.
//!
//! One command per line; blank lines and `#` comments are skipped. Boxes are
//! six voxel indices `x0 y0 z0 x1 y1 z1` (half-open). Labels are names or
//! indices.
//!
//! ```text
//! relabel FROM TO [BOX]
//! fill BOX LABEL
//! copy BOX DX DY DZ
//! obj-add X Y Z SX SY SZ [YAW_DEG [SEED]]
//! obj-del IDX
//! obj-move IDX DX DY DZ
//! obj-rot IDX AXIS DEG
//! ```

use std::str::FromStr;

use crate::error::{Error, Result};
use crate::scene::{ObjectBox, Quat, Scene, Vec3, VoxelRegion};

#[derive(Clone, Debug, PartialEq)]
pub enum EditCommand {
    Relabel { from: String, to: String, region: Option<VoxelRegion> },
    Fill { region: VoxelRegion, label: String },
    Copy { region: VoxelRegion, offset: [i64; 3] },
    ObjAdd { center: Vec3, size: Vec3, yaw_deg: f64, seed: Option<u64> },
    ObjDel { index: usize },
    ObjMove { index: usize, delta: Vec3 },
    ObjRot { index: usize, axis: Vec3, deg: f64 },
}

fn num<T: FromStr>(tok: &str, what: &str) -> std::result::Result<T, String> {
    tok.parse().map_err(|_| format!("expected {what}, got `{tok}`"))
}

fn region(toks: &[&str]) -> std::result::Result<VoxelRegion, String> {
    let v: Vec<usize> = toks.iter().map(|t| num(t, "voxel index")).collect::<std::result::Result<_, _>>()?;
    Ok(VoxelRegion::new([v[0], v[1], v[2]], [v[3], v[4], v[5]]))
}

fn vec3(toks: &[&str]) -> std::result::Result<Vec3, String> {
    Ok(Vec3::new(num(toks[0], "number")?, num(toks[1], "number")?, num(toks[2], "number")?))
}

fn arity(cmd: &str, got: usize, allowed: &[usize]) -> std::result::Result<(), String> {
    if allowed.contains(&got) {
        Ok(())
    } else {
        Err(format!("`{cmd}` takes {allowed:?} arguments, got {got}"))
    }
}

impl EditCommand {
    pub fn parse(line: &str) -> std::result::Result<Self, String> {
        let toks: Vec<&str> = line.split_whitespace().collect();
        let (cmd, args) = toks.split_first().ok_or("empty command")?;
        Ok(match *cmd {
            "relabel" => {
                arity(cmd, args.len(), &[2, 8])?;
                let region = if args.len() == 8 { Some(region(&args[2..])?) } else { None };
                Self::Relabel { from: args[0].to_string(), to: args[1].to_string(), region }
            }
            "fill" => {
                arity(cmd, args.len(), &[7])?;
                Self::Fill { region: region(&args[..6])?, label: args[6].to_string() }
            }
            "copy" => {
                arity(cmd, args.len(), &[9])?;
                let offset = [num(args[6], "offset")?, num(args[7], "offset")?, num(args[8], "offset")?];
                Self::Copy { region: region(&args[..6])?, offset }
            }
            "obj-add" => {
                arity(cmd, args.len(), &[6, 7, 8])?;
                let yaw_deg = args.get(6).map(|t| num(t, "yaw")).transpose()?.unwrap_or(0.0);
                let seed = args.get(7).map(|t| num(t, "seed")).transpose()?;
                Self::ObjAdd { center: vec3(&args[..3])?, size: vec3(&args[3..6])?, yaw_deg, seed }
            }
            "obj-del" => {
                arity(cmd, args.len(), &[1])?;
                Self::ObjDel { index: num(args[0], "object index")? }
            }
            "obj-move" => {
                arity(cmd, args.len(), &[4])?;
                Self::ObjMove { index: num(args[0], "object index")?, delta: vec3(&args[1..])? }
            }
            "obj-rot" => {
                arity(cmd, args.len(), &[3])?;
                let axis = match args[1] {
                    "x" | "X" => Vec3::new(1.0, 0.0, 0.0),
                    "y" | "Y" => Vec3::new(0.0, 1.0, 0.0),
                    "z" | "Z" => Vec3::new(0.0, 0.0, 1.0),
                    other => return Err(format!("axis must be x, y or z, got `{other}`")),
                };
                Self::ObjRot { index: num(args[0], "object index")?, axis, deg: num(args[2], "angle")? }
            }
            other => return Err(format!("unknown command `{other}`")),
        })
    }

    /// Applies the command, returning the edited scene. `fresh_seed` supplies
    /// latent seeds for added objects that do not name one.
    pub fn apply(&self, scene: &Scene, fresh_seed: &mut dyn FnMut() -> u64) -> Result<Scene> {
        let mut out = scene.clone();
        match self {
            Self::Relabel { from, to, region } => {
                let (f, t) = (scene.grid.resolve_label(from)?, scene.grid.resolve_label(to)?);
                out.grid = scene.grid.edit_relabel(f, t, *region)?;
            }
            Self::Fill { region, label } => {
                out.grid = scene.grid.edit_occupancy(*region, scene.grid.resolve_label(label)?)?;
            }
            Self::Copy { region, offset } => out.grid = scene.grid.edit_copy(*region, *offset)?,
            Self::ObjAdd { center, size, yaw_deg, seed } => {
                let q = Quat::from_axis_angle(Vec3::new(0.0, 0.0, 1.0), yaw_deg.to_radians());
                let seed = seed.unwrap_or_else(&mut *fresh_seed);
                out.layout.insert(ObjectBox::new(q, *center, *size, seed)?);
            }
            Self::ObjDel { index } => {
                out.layout.remove(*index)?;
            }
            Self::ObjMove { index, delta } => {
                let b = scene.layout.get(*index).ok_or(Error::InvalidObject(*index))?;
                out.layout.transform(*index, b.rotation(), b.translation() + *delta, b.size())?;
            }
            Self::ObjRot { index, axis, deg } => {
                let b = scene.layout.get(*index).ok_or(Error::InvalidObject(*index))?;
                let q = Quat::from_axis_angle(*axis, deg.to_radians()) * b.rotation();
                out.layout.transform(*index, q, b.translation(), b.size())?;
            }
        }
        Ok(out)
    }
}

/// Parses a whole script; the first bad line aborts with its 1-based number.
pub fn parse_script(text: &str) -> Result<Vec<(usize, EditCommand)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let cmd = EditCommand::parse(line).map_err(|msg| Error::EditScript { line: i + 1, msg })?;
        out.push((i + 1, cmd));
    }
    Ok(out)
}

/// Parses and applies `text` to `scene` in order. Added objects without an
/// explicit seed get seeds derived from `seed` and their position in the script.
pub fn apply_script(scene: &Scene, text: &str, seed: u64) -> Result<Scene> {
    let mut current = scene.clone();
    for (line, cmd) in parse_script(text)? {
        let mut fresh = || seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(line as u64);
        current = cmd.apply(&current, &mut fresh).map_err(|e| match e {
            Error::EditScript { .. } => e,
            other => Error::EditScript { line, msg: other.to_string() },
        })?;
    }
    Ok(current)
}
