use crate::autodiff::{Graph, NodeId, Tensor};
use crate::error::{Error, Result};
use crate::scene::PixelRect;

/// Side length object patches are resampled to before the patch discriminator.
pub const PATCH_SIZE: usize = 128;

fn check_inputs(rgb: &[usize], alpha: &[usize], rect: &PixelRect) -> Result<()> {
    if rgb.len() != 3 || rgb[0] != 3 || alpha.len() != 2 || rgb[1] != 2 * alpha[0] || rgb[2] != 2 * alpha[1] {
        return Err(Error::shape("extract_patch", format!("rgb {rgb:?}, alpha {alpha:?}")));
    }
    if rect.u0 >= rect.u1 || rect.v0 >= rect.v1 {
        return Err(Error::EmptyRect);
    }
    if rect.u1 > rgb[2] || rect.v1 > rgb[1] {
        return Err(Error::shape("extract_patch", format!("{rect:?} outside {}x{}", rgb[2], rgb[1])));
    }
    Ok(())
}

/// `crop(rgb ⊙ up(alpha))` with nearest-neighbor 2× upsampling of the
/// feature-resolution alpha map. `rgb` is `[3, H, W]`, `alpha` is `[H/2, W/2]`.
pub fn extract_patch(rgb: &Tensor, alpha: &Tensor, rect: &PixelRect) -> Result<Tensor> {
    check_inputs(rgb.shape(), alpha.shape(), rect)?;
    let (h, w) = (rgb.shape()[1], rgb.shape()[2]);
    let wf = alpha.shape()[1];
    let mut out = Vec::with_capacity(3 * rect.area());
    for c in 0..3 {
        for v in rect.v0..rect.v1 {
            for u in rect.u0..rect.u1 {
                out.push(rgb.data()[c * h * w + v * w + u] * alpha.data()[(v / 2) * wf + u / 2]);
            }
        }
    }
    Tensor::new(vec![3, rect.height(), rect.width()], out)
}

/// Differentiable [`extract_patch`] followed by bilinear resampling to `size × size`.
pub fn extract_patch_node(g: &mut Graph, rgb: NodeId, alpha: NodeId, rect: &PixelRect, size: usize) -> Result<NodeId> {
    check_inputs(g.value(rgb).shape(), g.value(alpha).shape(), rect)?;
    let a = g.value(alpha).shape().to_vec();
    let a = g.reshape(alpha, &[1, a[0], a[1]])?;
    let up = g.upsample2x(a)?;
    let up3 = g.concat(&[up, up, up], 0)?;
    let masked = g.mul(rgb, up3)?;
    let rows = g.slice(masked, 1, rect.v0, rect.v1)?;
    let crop = g.slice(rows, 2, rect.u0, rect.u1)?;
    g.resize_bilinear(crop, size, size)
}
