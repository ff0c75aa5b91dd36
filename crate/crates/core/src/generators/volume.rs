//! Voxel-conditioned 3D conv generator producing the feature grid Ψ.
//!
//! Topology: stride-2 conv over one-hot labels, stride-2 conv, three modulated
//! residual blocks at 1/4 resolution, upsample + conv, two blocks at 1/2
//! resolution, upsample + conv, and a conv head at full resolution.

use std::sync::Arc;

use rand::Rng;

use crate::autodiff::{Graph, LabelConvPlan, NodeId};
use crate::error::{Error, Result};
use crate::generators::layers::{conv, init_conv3, row_projection};
use crate::generators::ArchConfig;
use crate::optim::ParamStore;
use crate::scene::SemanticVoxelGrid;

pub const DOWNSAMPLE_FACTOR: usize = 8;
pub const NORM_EPS: f64 = 1e-5;
const KERNEL: usize = 3;
const TAPS: usize = KERNEL * KERNEL * KERNEL;

/// `(resolution divisor, block count)` for the modulated residual blocks.
const BLOCK_STAGES: [(usize, usize); 2] = [(4, 3), (2, 2)];

pub fn num_blocks() -> usize {
    BLOCK_STAGES.iter().map(|s| s.1).sum()
}

pub fn check_dims(dims: [usize; 3]) -> Result<()> {
    if dims.iter().any(|d| d % DOWNSAMPLE_FACTOR != 0) {
        return Err(Error::GridNotDivisible { dims, factor: DOWNSAMPLE_FACTOR });
    }
    Ok(())
}

/// Labels resampled by nearest neighbour to `1/factor` resolution, x-fastest,
/// with dims returned as `[nz, ny, nx]`.
pub fn labels_at(grid: &SemanticVoxelGrid, factor: usize) -> (Vec<u8>, [usize; 3]) {
    let [nx, ny, nz] = grid.dims();
    let (ox, oy, oz) = (nx / factor, ny / factor, nz / factor);
    let pick = |i: usize, n: usize| (i * factor + factor / 2).min(n - 1);
    let mut out = Vec::with_capacity(ox * oy * oz);
    for z in 0..oz {
        for y in 0..oy {
            for x in 0..ox {
                out.push(grid.label([pick(x, nx), pick(y, ny), pick(z, nz)]));
            }
        }
    }
    (out, [oz, oy, ox])
}

pub fn init(store: &mut ParamStore, arch: &ArchConfig, num_labels: usize, rng: &mut impl Rng) {
    let c = arch.vol_width;
    let l = num_labels;
    // one-hot input: only one label channel is active per tap
    store.init_weight("vol.enc1.wl", &[c, l, TAPS], TAPS, rng);
    store.init_const("vol.enc1.b", &[c], 0.0);
    init_conv3(store, "vol.enc2", c, c, KERNEL, rng);
    for b in 0..num_blocks() {
        for n in ["n1", "n2"] {
            let name = format!("vol.blk{b}.{n}");
            let fan_in = TAPS + arch.vol_code_dim * TAPS;
            store.init_uniform(&format!("{name}.zp.w"), &[arch.z_dim, arch.vol_code_dim], (3.0 / arch.z_dim as f64).sqrt(), rng);
            store.init_const(&format!("{name}.zp.b"), &[arch.vol_code_dim], 0.0);
            let bound = (1.0 / fan_in as f64).sqrt();
            store.init_uniform(&format!("{name}.wl"), &[2 * c, l, TAPS], bound, rng);
            store.init_const(&format!("{name}.b"), &[2 * c], 0.0);
            store.init_uniform(&format!("{name}.wc"), &[2 * c, arch.vol_code_dim, TAPS], bound, rng);
        }
        init_conv3(store, &format!("vol.blk{b}.c1"), c, c, KERNEL, rng);
        init_conv3(store, &format!("vol.blk{b}.c2"), c, c, KERNEL, rng);
    }
    init_conv3(store, "vol.up1", c, c, KERNEL, rng);
    init_conv3(store, "vol.up2", c, c, KERNEL, rng);
    init_conv3(store, "vol.head", c, arch.grid_channels, 1, rng);
}

/// Spatially-adaptive normalization: `norm(h) ⊙ (1 + γ) + β`, where `(γ, β)` come
/// from a conv over the one-hot labels at `h`'s resolution concatenated with a
/// broadcast projection of `z`.
pub fn spade_norm(
    g: &mut Graph,
    store: &ParamStore,
    name: &str,
    h: NodeId,
    plan: &Arc<LabelConvPlan>,
    z: NodeId,
) -> Result<NodeId> {
    let c = g.value(h).shape()[0];
    let expected = store.get(&format!("{name}.b"))?.len() / 2;
    if expected != c {
        return Err(Error::shape("spade_norm", format!("{name} expects {expected} channels, got {c}")));
    }
    let code = row_projection(g, store, &format!("{name}.zp"), z)?;
    let wl = store.node(g, &format!("{name}.wl"))?;
    let b = store.node(g, &format!("{name}.b"))?;
    let wc = store.node(g, &format!("{name}.wc"))?;
    let mods = g.label_conv(plan.clone(), &[wl, b, wc, code])?;
    let gamma = g.slice(mods, 0, 0, c)?;
    let beta = g.slice(mods, 0, c, 2 * c)?;
    let normed = g.instance_norm(h, NORM_EPS)?;
    let scale = g.add_scalar(gamma, 1.0)?;
    let m = g.mul(normed, scale)?;
    g.add(m, beta)
}

/// Residual block with two modulated normalizations and two convs.
pub fn spade_block(
    g: &mut Graph,
    store: &ParamStore,
    name: &str,
    h: NodeId,
    plan: &Arc<LabelConvPlan>,
    z: NodeId,
) -> Result<NodeId> {
    let a = spade_norm(g, store, &format!("{name}.n1"), h, plan, z)?;
    let a = g.relu(a)?;
    let a = conv(g, store, &format!("{name}.c1"), a, 1, 1)?;
    let a = spade_norm(g, store, &format!("{name}.n2"), a, plan, z)?;
    let a = g.relu(a)?;
    let a = conv(g, store, &format!("{name}.c2"), a, 1, 1)?;
    g.add(h, a)
}

pub fn modulation_plan(grid: &SemanticVoxelGrid, factor: usize) -> Arc<LabelConvPlan> {
    let (labels, in_dims) = labels_at(grid, factor);
    Arc::new(LabelConvPlan { labels, in_dims, num_labels: grid.num_labels() as usize, kernel: KERNEL, stride: 1 })
}

/// Ψ as a `[M_v, nz, ny, nx]` node.
pub fn feature_grid(g: &mut Graph, store: &ParamStore, z: NodeId, grid: &SemanticVoxelGrid) -> Result<NodeId> {
    check_dims(grid.dims())?;
    let (labels, in_dims) = labels_at(grid, 1);
    let enc_plan = Arc::new(LabelConvPlan {
        labels,
        in_dims,
        num_labels: grid.num_labels() as usize,
        kernel: KERNEL,
        stride: 2,
    });
    let wl = store.node(g, "vol.enc1.wl")?;
    if g.value(wl).shape()[1] != grid.num_labels() as usize {
        return Err(Error::shape(
            "feature_grid",
            format!("generator built for {} labels, grid has {}", g.value(wl).shape()[1], grid.num_labels()),
        ));
    }
    let b = store.node(g, "vol.enc1.b")?;
    let h = g.label_conv(enc_plan, &[wl, b])?;
    let h = g.relu(h)?;
    let h = conv(g, store, "vol.enc2", h, 2, 1)?;
    let mut h = g.relu(h)?;
    let mut block = 0;
    for (stage, &(factor, count)) in BLOCK_STAGES.iter().enumerate() {
        if stage > 0 {
            h = g.upsample2x(h)?;
            h = conv(g, store, &format!("vol.up{stage}"), h, 1, 1)?;
            h = g.relu(h)?;
        }
        let plan = modulation_plan(grid, factor);
        for _ in 0..count {
            h = spade_block(g, store, &format!("vol.blk{block}"), h, &plan, z)?;
            block += 1;
        }
    }
    h = g.upsample2x(h)?;
    h = conv(g, store, &format!("vol.up{}", BLOCK_STAGES.len()), h, 1, 1)?;
    h = g.relu(h)?;
    conv(g, store, "vol.head", h, 1, 0)
}
