use crate::autodiff::{Graph, NodeId, Tensor};
use crate::error::{Error, Result};
use crate::scene::{Camera, ObjectLayout};

/// `[H, W]` map at RGB resolution: 0 inside any projected object rectangle, 1 elsewhere.
pub fn build_stuff_mask(camera: &Camera, layout: &ObjectLayout) -> Tensor {
    let (w, h) = (camera.width(), camera.height());
    let mut m = vec![1.0; w * h];
    for (_, b) in layout.iter() {
        if let Some(r) = camera.project_box(b) {
            for v in r.v0..r.v1 {
                m[v * w + r.u0..v * w + r.u1].iter_mut().for_each(|x| *x = 0.0);
            }
        }
    }
    Tensor::new(vec![h, w], m).expect("sized")
}

/// A differentiable distance between two `[3, H, W]` images.
pub trait FeatureDistance {
    fn distance(&self, g: &mut Graph, a: NodeId, b: NodeId) -> Result<NodeId>;
}

/// Sum over Gaussian-pyramid levels of the mean squared difference per pixel.
/// Level 0 is the input; each further level is a 5-tap binomial blur followed
/// by 2× decimation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PyramidDistance {
    pub octaves: usize,
}

impl Default for PyramidDistance {
    fn default() -> Self {
        Self { octaves: 3 }
    }
}

const BINOMIAL: [f64; 5] = [1.0, 4.0, 6.0, 4.0, 1.0];

/// Per-channel blur-and-decimate weights `[3, 3, 5, 5]`.
fn pyramid_kernel() -> Tensor {
    let mut w = vec![0.0; 3 * 3 * 25];
    for c in 0..3 {
        for i in 0..5 {
            for j in 0..5 {
                w[(c * 3 + c) * 25 + i * 5 + j] = BINOMIAL[i] * BINOMIAL[j] / 256.0;
            }
        }
    }
    Tensor::new(vec![3, 3, 5, 5], w).expect("sized")
}

impl PyramidDistance {
    pub fn levels(&self, g: &mut Graph, x: NodeId) -> Result<Vec<NodeId>> {
        let k = g.constant(pyramid_kernel());
        let mut out = vec![x];
        for _ in 1..self.octaves {
            let last = *out.last().expect("non-empty");
            let s = g.value(last).shape();
            if s[1] < 2 || s[2] < 2 {
                break;
            }
            out.push(g.conv(last, k, None, 2, 2)?);
        }
        Ok(out)
    }
}

impl FeatureDistance for PyramidDistance {
    fn distance(&self, g: &mut Graph, a: NodeId, b: NodeId) -> Result<NodeId> {
        let d = g.sub(a, b)?;
        let levels = self.levels(g, d)?;
        let mut total = None;
        for l in levels {
            let s = g.value(l).shape();
            let pixels = (s[1] * s[2]) as f64;
            let sq = g.square(l)?;
            let sum = g.sum(sq)?;
            let term = g.scale(sum, 1.0 / pixels)?;
            total = Some(match total {
                None => term,
                Some(t) => g.add(t, term)?,
            });
        }
        Ok(total.expect("at least one level"))
    }
}

/// Loss terms as graph nodes.
#[derive(Clone, Copy, Debug)]
pub struct ReconLoss {
    pub mse: NodeId,
    pub feat: NodeId,
    pub total: NodeId,
}

/// `Σ M(I − Î)² / ΣM + λ_feat · d(M⊙Î, M⊙I)` for `[3, H, W]` images and an
/// `[H, W]` mask. An all-zero mask gives zero loss.
pub fn masked_recon_loss(
    g: &mut Graph,
    pred: NodeId,
    target: &Tensor,
    mask: &Tensor,
    lambda_feat: f64,
    feature_distance: &dyn FeatureDistance,
) -> Result<ReconLoss> {
    let ps = g.value(pred).shape().to_vec();
    if ps.len() != 3 || ps[0] != 3 || target.shape() != ps.as_slice() || mask.shape() != &ps[1..] {
        return Err(Error::shape(
            "masked_recon_loss",
            format!("pred {ps:?}, target {:?}, mask {:?}", target.shape(), mask.shape()),
        ));
    }
    let count = mask.sum();
    if count == 0.0 {
        let z = g.constant(Tensor::scalar(0.0));
        let zero_pred = g.scale(pred, 0.0)?;
        let zero_pred = g.sum(zero_pred)?;
        let total = g.add(z, zero_pred)?;
        return Ok(ReconLoss { mse: total, feat: total, total });
    }
    let plane = ps[1] * ps[2];
    let mut m3 = Vec::with_capacity(3 * plane);
    for _ in 0..3 {
        m3.extend_from_slice(mask.data());
    }
    let m3 = g.constant(Tensor::new(ps.clone(), m3)?);
    let masked_target = {
        let t = target.zip_map(g.value(m3), |a, b| a * b);
        g.constant(t)
    };
    let masked_pred = g.mul(pred, m3)?;
    let diff = g.sub(masked_pred, masked_target)?;
    let sq = g.square(diff)?;
    let sum = g.sum(sq)?;
    let mse = g.scale(sum, 1.0 / count)?;
    let feat = feature_distance.distance(g, masked_pred, masked_target)?;
    let weighted = g.scale(feat, lambda_feat)?;
    let total = g.add(mse, weighted)?;
    Ok(ReconLoss { mse, feat, total })
}
