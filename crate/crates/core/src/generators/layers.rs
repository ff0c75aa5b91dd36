//! Parameter naming and initialization helpers shared by the networks.

use rand::Rng;

use crate::autodiff::{Graph, NodeId};
use crate::error::Result;
use crate::optim::ParamStore;

/// `{name}.w: [fan_in, fan_out]` (He-uniform) and `{name}.b: [fan_out]` (zero).
pub fn init_linear(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut impl Rng) {
    store.init_weight(&format!("{name}.w"), &[fan_in, fan_out], fan_in, rng);
    store.init_const(&format!("{name}.b"), &[fan_out], 0.0);
}

pub fn linear(g: &mut Graph, store: &ParamStore, name: &str, x: NodeId) -> Result<NodeId> {
    let w = store.node(g, &format!("{name}.w"))?;
    let b = store.node(g, &format!("{name}.b"))?;
    g.affine(x, w, b)
}

/// A `[1, K] -> [M]` projection used as a per-batch bias.
pub fn row_projection(g: &mut Graph, store: &ParamStore, name: &str, z: NodeId) -> Result<NodeId> {
    let y = linear(g, store, name, z)?;
    let m = g.value(y).shape()[1];
    g.reshape(y, &[m])
}

/// 3D conv weights `[out, in, k, k, k]` and bias `[out]`.
pub fn init_conv3(store: &mut ParamStore, name: &str, cin: usize, cout: usize, k: usize, rng: &mut impl Rng) {
    store.init_weight(&format!("{name}.w"), &[cout, cin, k, k, k], cin * k * k * k, rng);
    store.init_const(&format!("{name}.b"), &[cout], 0.0);
}

/// 2D conv weights `[out, in, k, k]` and bias `[out]`.
pub fn init_conv2(store: &mut ParamStore, name: &str, cin: usize, cout: usize, k: usize, rng: &mut impl Rng) {
    store.init_weight(&format!("{name}.w"), &[cout, cin, k, k], cin * k * k, rng);
    store.init_const(&format!("{name}.b"), &[cout], 0.0);
}

pub fn conv(g: &mut Graph, store: &ParamStore, name: &str, x: NodeId, stride: usize, pad: usize) -> Result<NodeId> {
    let w = store.node(g, &format!("{name}.w"))?;
    let b = store.node(g, &format!("{name}.b"))?;
    g.conv(x, w, Some(b), stride, pad)
}
