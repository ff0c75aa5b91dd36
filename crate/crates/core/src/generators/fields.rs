//! MLP heads: stuff field, object field and sky dome.

use rand::Rng;

use crate::autodiff::{Graph, NodeId, Tensor};
use crate::error::{Error, Result};
use crate::generators::encoding::{encode_points, encoded_len};
use crate::generators::layers::{init_linear, linear, row_projection};
use crate::generators::ArchConfig;
use crate::optim::ParamStore;
use crate::scene::Vec3;

/// Density offset: `σ = softplus(raw − 1)`, so a fresh network is mostly transparent.
pub const DENSITY_SHIFT: f64 = 1.0;

/// Tolerance on `‖d‖ = 1` for sky queries.
pub const UNIT_TOL: f64 = 1e-6;

/// Per-sample outputs of a field head.
#[derive(Clone, Copy, Debug)]
pub struct FieldNodes {
    /// `[N, M_f]`.
    pub features: NodeId,
    /// `[N]`, non-negative.
    pub sigma: NodeId,
}

pub fn init_stuff(store: &mut ParamStore, arch: &ArchConfig, rng: &mut impl Rng) {
    let mut fan_in = arch.grid_channels + encoded_len(3, arch.pos_bands);
    for i in 0..arch.stuff_depth {
        init_linear(store, &format!("stf.l{i}"), fan_in, arch.stuff_hidden, rng);
        fan_in = arch.stuff_hidden;
    }
    init_linear(store, "stf.out", fan_in, arch.feature_dim + 1, rng);
}

pub fn init_object(store: &mut ParamStore, arch: &ArchConfig, rng: &mut impl Rng) {
    let enc = encoded_len(3, arch.pos_bands);
    let h = arch.obj_hidden;
    for i in 0..arch.obj_depth {
        let prev = if i == 0 { enc } else { h };
        if i == 0 || i == arch.obj_skip {
            let fan_in = if i == 0 { enc + arch.z_dim } else { h + enc + arch.z_dim };
            store.init_weight(&format!("obj.l{i}.w"), &[prev, h], fan_in, rng);
            if i != 0 {
                store.init_weight(&format!("obj.l{i}.wx"), &[enc, h], fan_in, rng);
            }
            let bound = (6.0 / fan_in as f64).sqrt();
            store.init_uniform(&format!("obj.l{i}.z.w"), &[arch.z_dim, h], bound, rng);
            store.init_const(&format!("obj.l{i}.z.b"), &[h], 0.0);
        } else {
            init_linear(store, &format!("obj.l{i}"), prev, h, rng);
        }
    }
    init_linear(store, "obj.out", h, arch.feature_dim + 1, rng);
}

pub fn init_sky(store: &mut ParamStore, arch: &ArchConfig, rng: &mut impl Rng) {
    let enc = encoded_len(3, arch.sky_bands);
    let h = arch.sky_hidden;
    let fan_in = enc + arch.z_dim;
    store.init_weight("sky.l0.w", &[enc, h], fan_in, rng);
    store.init_uniform("sky.l0.z.w", &[arch.z_dim, h], (6.0 / fan_in as f64).sqrt(), rng);
    store.init_const("sky.l0.z.b", &[h], 0.0);
    for i in 1..arch.sky_depth {
        init_linear(store, &format!("sky.l{i}"), h, h, rng);
    }
    init_linear(store, "sky.out", h, arch.feature_dim, rng);
}

fn split_output(g: &mut Graph, raw: NodeId, feature_dim: usize) -> Result<FieldNodes> {
    let n = g.value(raw).shape()[0];
    let features = g.slice(raw, 1, 0, feature_dim)?;
    let s = g.slice(raw, 1, feature_dim, feature_dim + 1)?;
    let s = g.reshape(s, &[n])?;
    let s = g.add_scalar(s, -DENSITY_SHIFT)?;
    let sigma = g.softplus(s)?;
    Ok(FieldNodes { features, sigma })
}

/// `x·W + z·W_z + b` where `z: [1, Z]` is shared by every row of `x`.
fn layer_with_code(g: &mut Graph, store: &ParamStore, name: &str, x: NodeId, z: NodeId) -> Result<NodeId> {
    let w = store.node(g, &format!("{name}.w"))?;
    let xw = g.matmul(x, w)?;
    let zb = row_projection(g, store, &format!("{name}.z"), z)?;
    g.apply(crate::autodiff::Op::AddRowBias, &[xw, zb])
}

/// Stuff head over interpolated grid features `psi_at: [N, M_v]` and grid-normalized
/// coordinates in `[−1, 1]³`.
pub fn stuff_field(
    g: &mut Graph,
    store: &ParamStore,
    arch: &ArchConfig,
    psi_at: NodeId,
    x_norm: &[[f64; 3]],
) -> Result<FieldNodes> {
    let enc = g.constant(encode_points(x_norm, arch.pos_bands));
    let mut h = g.concat(&[psi_at, enc], 1)?;
    for i in 0..arch.stuff_depth {
        let a = linear(g, store, &format!("stf.l{i}"), h)?;
        h = g.relu(a)?;
    }
    let raw = linear(g, store, "stf.out", h)?;
    split_output(g, raw, arch.feature_dim)
}

/// Object head over canonical coordinates and the object's code `z: [1, Z]`.
pub fn object_field(
    g: &mut Graph,
    store: &ParamStore,
    arch: &ArchConfig,
    x_obj: &[[f64; 3]],
    z: NodeId,
) -> Result<FieldNodes> {
    let enc = g.constant(encode_points(x_obj, arch.pos_bands));
    let mut h = enc;
    for i in 0..arch.obj_depth {
        let name = format!("obj.l{i}");
        let a = if i == 0 {
            layer_with_code(g, store, &name, enc, z)?
        } else if i == arch.obj_skip {
            let hx = layer_with_code(g, store, &name, h, z)?;
            let wx = store.node(g, &format!("{name}.wx"))?;
            let ex = g.matmul(enc, wx)?;
            g.add(hx, ex)?
        } else {
            linear(g, store, &name, h)?
        };
        h = g.relu(a)?;
    }
    let raw = linear(g, store, "obj.out", h)?;
    split_output(g, raw, arch.feature_dim)
}

/// Sky features `[N, M_f]` for unit directions.
pub fn sky_feature(g: &mut Graph, store: &ParamStore, arch: &ArchConfig, z: NodeId, dirs: &[Vec3]) -> Result<NodeId> {
    if let Some(d) = dirs.iter().find(|d| (d.norm() - 1.0).abs() > UNIT_TOL) {
        return Err(Error::NonUnitDirection(d.norm()));
    }
    let pts: Vec<[f64; 3]> = dirs.iter().map(|d| d.to_array()).collect();
    let enc = g.constant(encode_points(&pts, arch.sky_bands));
    let a = layer_with_code(g, store, "sky.l0", enc, z)?;
    let mut h = g.relu(a)?;
    for i in 1..arch.sky_depth {
        let a = linear(g, store, &format!("sky.l{i}"), h)?;
        h = g.relu(a)?;
    }
    linear(g, store, "sky.out", h)
}

/// Evaluated `(f, σ)` pair.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldSample {
    pub feature: Vec<f64>,
    pub sigma: f64,
}

/// Reads per-row samples out of evaluated field nodes.
pub fn read_samples(g: &Graph, nodes: FieldNodes) -> Vec<FieldSample> {
    let f: &Tensor = g.value(nodes.features);
    let s = g.value(nodes.sigma);
    let m = f.shape()[1];
    (0..s.len())
        .map(|i| FieldSample { feature: f.data()[i * m..(i + 1) * m].to_vec(), sigma: s.data()[i] })
        .collect()
}
