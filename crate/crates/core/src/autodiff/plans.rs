//! Precomputed, non-differentiable index structures consumed by gather-style primitives.

/// Eight-corner trilinear stencil per query point into a `[C, nz, ny, nx]` grid.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrilerpPlan {
    pub spatial_len: usize,
    pub stencils: Vec<[(u32, f64); 8]>,
}

/// Depth-sorted sample ordering for compositing.
///
/// Samples live in one flat array (`[S, M]` features, `[S]` densities);
/// ray `r` composites `order[ray_starts[r]..ray_starts[r + 1]]` front to back.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CompositePlan {
    pub num_samples: usize,
    pub ray_starts: Vec<usize>,
    pub order: Vec<usize>,
    /// Segment length per entry of `order`.
    pub delta: Vec<f64>,
    /// Source per entry of `order`: `-1` for stuff, otherwise the object index.
    pub tag: Vec<i64>,
}

impl CompositePlan {
    pub fn num_rays(&self) -> usize {
        self.ray_starts.len().saturating_sub(1)
    }

    pub fn span(&self, r: usize) -> std::ops::Range<usize> {
        self.ray_starts[r]..self.ray_starts[r + 1]
    }
}

/// Geometry for a convolution over a one-hot label volume, optionally
/// concatenated with a spatially broadcast code vector. Padding is `kernel / 2`.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelConvPlan {
    /// Input labels, x-fastest.
    pub labels: Vec<u8>,
    /// Input `[nz, ny, nx]`.
    pub in_dims: [usize; 3],
    pub num_labels: usize,
    /// Odd kernel edge length.
    pub kernel: usize,
    pub stride: usize,
}

impl LabelConvPlan {
    /// Output `[nz, ny, nx]`.
    pub fn dims(&self) -> [usize; 3] {
        let p = self.kernel / 2;
        self.in_dims.map(|d| (d + 2 * p - self.kernel) / self.stride + 1)
    }

    pub fn spatial_len(&self) -> usize {
        self.dims().iter().product()
    }

    pub fn kernel_volume(&self) -> usize {
        self.kernel.pow(3)
    }

    /// Calls `f(out_index, offset_index, in_index)` for every in-bounds stencil tap.
    #[inline]
    pub fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize)) {
        let [oz, oy, ox] = self.dims();
        let [nz, ny, nx] = self.in_dims.map(|d| d as isize);
        let k = self.kernel as isize;
        let p = k / 2;
        let s = self.stride as isize;
        let mut v = 0;
        for z in 0..oz as isize {
            for y in 0..oy as isize {
                for x in 0..ox as isize {
                    let mut off = 0;
                    for dz in 0..k {
                        let iz = z * s + dz - p;
                        for dy in 0..k {
                            let iy = y * s + dy - p;
                            for dx in 0..k {
                                let ix = x * s + dx - p;
                                if iz >= 0 && iz < nz && iy >= 0 && iy < ny && ix >= 0 && ix < nx {
                                    f(v, off, ((iz * ny + iy) * nx + ix) as usize);
                                }
                                off += 1;
                            }
                        }
                    }
                    v += 1;
                }
            }
        }
    }
}
