use crate::autodiff::{Tensor, TrilerpPlan};
use crate::error::{Error, Result};
use crate::scene::{SemanticVoxelGrid, Vec3};

/// Slack for points on the grid boundary produced by floating-point ray marching.
const BOUNDS_TOL: f64 = 1e-9;

/// Eight-corner stencil for `p` over a feature grid anchored at voxel centers.
/// Points between the outermost centers and the grid faces take border values.
pub fn stencil(grid: &SemanticVoxelGrid, p: Vec3) -> Result<[(u32, f64); 8]> {
    let dims = grid.dims();
    let rel = (p - grid.origin()).hadamard_div(grid.spacing());
    let mut i0 = [0usize; 3];
    let mut i1 = [0usize; 3];
    let mut frac = [0.0; 3];
    for a in 0..3 {
        let n = dims[a] as f64;
        if !(rel[a] >= -BOUNDS_TOL && rel[a] <= n + BOUNDS_TOL) {
            return Err(Error::OutsideGrid);
        }
        let c = (rel[a] - 0.5).clamp(0.0, n - 1.0);
        let lo = (c.floor() as usize).min(dims[a].saturating_sub(2));
        i0[a] = lo;
        i1[a] = (lo + 1).min(dims[a] - 1);
        frac[a] = c - lo as f64;
    }
    let mut out = [(0u32, 0.0); 8];
    for (corner, slot) in out.iter_mut().enumerate() {
        let mut ijk = [0usize; 3];
        let mut w = 1.0;
        for a in 0..3 {
            if corner >> a & 1 == 1 {
                ijk[a] = i1[a];
                w *= frac[a];
            } else {
                ijk[a] = i0[a];
                w *= 1.0 - frac[a];
            }
        }
        *slot = (grid.linear_index(ijk) as u32, w);
    }
    Ok(out)
}

pub fn trilerp_plan(grid: &SemanticVoxelGrid, points: &[Vec3]) -> Result<TrilerpPlan> {
    let stencils = points.iter().map(|&p| stencil(grid, p)).collect::<Result<_>>()?;
    Ok(TrilerpPlan { spatial_len: grid.dims().iter().product(), stencils })
}

/// Interpolated feature of `psi: [C, nz, ny, nx]` at world point `p`.
pub fn trilerp(psi: &Tensor, grid: &SemanticVoxelGrid, p: Vec3) -> Result<Vec<f64>> {
    let s = psi.spatial_len();
    if s != grid.dims().iter().product::<usize>() {
        return Err(Error::shape("trilerp", format!("grid {:?} vs dims {:?}", psi.shape(), grid.dims())));
    }
    let st = stencil(grid, p)?;
    let c = psi.shape()[0];
    Ok((0..c).map(|ch| st.iter().map(|&(i, w)| w * psi.data()[ch * s + i as usize]).sum()).collect())
}
