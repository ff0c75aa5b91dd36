use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::generators::layers::{init_conv2, init_linear, linear};
use crate::optim::ParamStore;

/// Conv stack for `[3, H, W]` inputs: stride-2 3×3 convs with softplus
/// activations, then a linear map of the flattened result to one logit.
/// Softplus keeps the network twice differentiable for the R1 penalty.
#[derive(Clone, Debug, PartialEq)]
pub struct Discriminator {
    pub prefix: String,
    pub input: [usize; 3],
    pub widths: Vec<usize>,
    pub params: ParamStore,
}

impl Discriminator {
    pub fn new(prefix: &str, input: [usize; 3], widths: &[usize], seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let mut c = input[0];
        let (mut h, mut w) = (input[1], input[2]);
        for (i, &out) in widths.iter().enumerate() {
            init_conv2(&mut params, &format!("{prefix}.c{i}"), c, out, 3, &mut rng);
            c = out;
            h = h.div_ceil(2);
            w = w.div_ceil(2);
        }
        if c * h * w == 0 {
            return Err(Error::shape("discriminator", format!("input {input:?}")));
        }
        init_linear(&mut params, &format!("{prefix}.out"), c * h * w, 1, &mut rng);
        Ok(Self { prefix: prefix.to_string(), input, widths: widths.to_vec(), params })
    }

    /// Image discriminator: downsamples to at most 4×4.
    pub fn for_images(prefix: &str, h: usize, w: usize, seed: u64) -> Result<Self> {
        let mut widths = Vec::new();
        let (mut hh, mut ww) = (h, w);
        while hh > 4 || ww > 4 {
            widths.push((8 << widths.len()).min(32));
            hh = hh.div_ceil(2);
            ww = ww.div_ceil(2);
        }
        Self::new(prefix, [3, h, w], &widths, seed)
    }

    /// Scalar logit for one image node.
    pub fn logit(&self, g: &mut Graph, x: NodeId) -> Result<NodeId> {
        let s = g.value(x).shape();
        if s != self.input {
            return Err(Error::shape("discriminator", format!("input {s:?}, expected {:?}", self.input)));
        }
        let mut h = x;
        for i in 0..self.widths.len() {
            let name = format!("{}.c{i}", self.prefix);
            let w = self.params.node(g, &format!("{name}.w"))?;
            let b = self.params.node(g, &format!("{name}.b"))?;
            let y = g.conv(h, w, Some(b), 2, 1)?;
            h = g.softplus(y)?;
        }
        let n = g.value(h).len();
        let flat = g.reshape(h, &[1, n])?;
        let y = linear(g, &self.params, &format!("{}.out", self.prefix), flat)?;
        g.reshape(y, &[])
    }
}
