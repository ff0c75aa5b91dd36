//! Neural renderer: two modulated-conv blocks around a nearest 2× upsample,
//! a 1×1 projection to RGB and a sigmoid.

use rand::Rng;

use crate::autodiff::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::generators::layers::{conv, init_conv2, linear};
use crate::generators::ArchConfig;
use crate::optim::ParamStore;

pub const DEMOD_EPS: f64 = 1e-8;
pub const LEAKY_SLOPE: f64 = 0.2;

pub fn init(store: &mut ParamStore, arch: &ArchConfig, rng: &mut impl Rng) {
    let (m, c) = (arch.feature_dim, arch.render_width);
    // one affine map from z to both blocks' styles
    store.init_uniform("nr.style.w", &[arch.z_dim, m + c], (1.0 / arch.z_dim as f64).sqrt(), rng);
    store.init_const("nr.style.b", &[m + c], 1.0);
    init_conv2(store, "nr.b1", m, c, 3, rng);
    init_conv2(store, "nr.b2", c, c, 3, rng);
    init_conv2(store, "nr.rgb", c, 3, 1, rng);
}

fn modulated_conv(g: &mut Graph, store: &ParamStore, name: &str, x: NodeId, style: NodeId) -> Result<NodeId> {
    let w = store.node(g, &format!("{name}.w"))?;
    let b = store.node(g, &format!("{name}.b"))?;
    let wm = g.mod_demod(w, style, DEMOD_EPS)?;
    let y = g.conv(x, wm, Some(b), 1, 1)?;
    g.leaky_relu(y, LEAKY_SLOPE)
}

/// Maps a `[M_f, H_f, W_f]` feature image to `[3, 2H_f, 2W_f]` RGB in `[0, 1]`.
pub fn neural_render(g: &mut Graph, store: &ParamStore, arch: &ArchConfig, features: NodeId, z: NodeId) -> Result<NodeId> {
    let shape = g.value(features).shape().to_vec();
    if shape.len() != 3 || shape[0] != arch.feature_dim {
        return Err(Error::shape("neural_render", format!("feature image {shape:?}, expected {} channels", arch.feature_dim)));
    }
    let (m, c) = (arch.feature_dim, arch.render_width);
    let styles = linear(g, store, "nr.style", z)?;
    let styles = g.reshape(styles, &[m + c])?;
    let s1 = g.slice(styles, 0, 0, m)?;
    let s2 = g.slice(styles, 0, m, m + c)?;
    let h = modulated_conv(g, store, "nr.b1", features, s1)?;
    let h = g.upsample2x(h)?;
    let h = modulated_conv(g, store, "nr.b2", h, s2)?;
    let rgb = conv(g, store, "nr.rgb", h, 1, 0)?;
    g.sigmoid(rgb)
}
