use crate::sampling::Ray;
use crate::scene::SemanticVoxelGrid;

pub const DEFAULT_MAX_VOXELS: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VoxelHit {
    pub voxel: [usize; 3],
    pub t_enter: f64,
    pub t_exit: f64,
}

/// Parametric range `[t0, t1]` where the ray is inside the grid's box, with `t0 ≥ 0`.
pub fn grid_span(grid: &SemanticVoxelGrid, ray: &Ray) -> Option<(f64, f64)> {
    let lo = grid.origin();
    let hi = grid.upper_corner();
    let (mut t0, mut t1) = (0.0f64, f64::INFINITY);
    for a in 0..3 {
        let (o, d) = (ray.origin[a], ray.direction[a]);
        if d == 0.0 {
            if o < lo[a] || o > hi[a] {
                return None;
            }
            continue;
        }
        let (mut ta, mut tb) = ((lo[a] - o) / d, (hi[a] - o) / d);
        if ta > tb {
            std::mem::swap(&mut ta, &mut tb);
        }
        t0 = t0.max(ta);
        t1 = t1.min(tb);
    }
    (t0 < t1).then_some((t0, t1))
}

/// Visits every cell the ray passes through, in order, calling `f` until it returns `false`.
pub fn walk_cells(grid: &SemanticVoxelGrid, ray: &Ray, mut f: impl FnMut(VoxelHit) -> bool) {
    let Some((t_start, t_end)) = grid_span(grid, ray) else { return };
    let dims = grid.dims();
    let spacing = grid.spacing();
    let origin = grid.origin();
    let entry = ray.at(t_start);
    let mut cell = [0i64; 3];
    let mut step = [0i64; 3];
    let mut t_max = [f64::INFINITY; 3];
    let mut t_delta = [f64::INFINITY; 3];
    for a in 0..3 {
        let rel = (entry[a] - origin[a]) / spacing[a];
        let d = ray.direction[a];
        let mut c = rel.floor() as i64;
        // on a face, pick the cell the ray is heading into
        if d < 0.0 && rel == rel.floor() {
            c -= 1;
        }
        cell[a] = c.clamp(0, dims[a] as i64 - 1);
        if d > 0.0 {
            step[a] = 1;
            let boundary = origin[a] + (cell[a] + 1) as f64 * spacing[a];
            t_max[a] = (boundary - ray.origin[a]) / d;
            t_delta[a] = spacing[a] / d;
        } else if d < 0.0 {
            step[a] = -1;
            let boundary = origin[a] + cell[a] as f64 * spacing[a];
            t_max[a] = (boundary - ray.origin[a]) / d;
            t_delta[a] = -spacing[a] / d;
        }
    }
    let mut t = t_start;
    loop {
        let axis = if t_max[0] <= t_max[1] && t_max[0] <= t_max[2] {
            0
        } else if t_max[1] <= t_max[2] {
            1
        } else {
            2
        };
        let t_next = t_max[axis].min(t_end);
        if t_next > t {
            let hit = VoxelHit { voxel: cell.map(|c| c as usize), t_enter: t, t_exit: t_next };
            if !f(hit) {
                return;
            }
        }
        if t_max[axis] >= t_end {
            return;
        }
        t = t_next.max(t);
        cell[axis] += step[axis];
        if cell[axis] < 0 || cell[axis] >= dims[axis] as i64 {
            return;
        }
        t_max[axis] += t_delta[axis];
    }
}

/// The first `max_voxels` non-empty voxels along the ray, in hit order.
pub fn traverse_nonempty(grid: &SemanticVoxelGrid, ray: &Ray, max_voxels: usize) -> Vec<VoxelHit> {
    let mut out = Vec::with_capacity(max_voxels.min(16));
    if max_voxels == 0 {
        return out;
    }
    walk_cells(grid, ray, |hit| {
        if grid.is_occupied(hit.voxel) {
            out.push(hit);
        }
        out.len() < max_voxels
    });
    out
}

/// Every non-empty voxel along the ray.
pub fn traverse_all_nonempty(grid: &SemanticVoxelGrid, ray: &Ray) -> Vec<VoxelHit> {
    traverse_nonempty(grid, ray, usize::MAX)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::Vec3;

    #[test]
    fn empty_grid_yields_nothing() {
        let g = SemanticVoxelGrid::new_empty([4, 4, 4], 2, Vec3::ZERO, Vec3::ONE).unwrap();
        let r = Ray { origin: Vec3::new(-1.0, 0.5, 0.5), direction: Vec3::new(1.0, 0.0, 0.0), pixel: (0, 0) };
        assert!(traverse_nonempty(&g, &r, 4).is_empty());
    }

    #[test]
    fn full_grid_axis_ray() {
        let mut g = SemanticVoxelGrid::new_empty([6, 3, 3], 2, Vec3::ZERO, Vec3::new(0.5, 1.0, 1.0)).unwrap();
        for ijk in crate::scene::VoxelRegion::whole([6, 3, 3]).iter() {
            g.set(ijk, 1).unwrap();
        }
        let r = Ray { origin: Vec3::new(-1.0, 1.5, 2.5), direction: Vec3::new(1.0, 0.0, 0.0), pixel: (0, 0) };
        let hits = traverse_nonempty(&g, &r, 4);
        assert_eq!(hits.len(), 4);
        for (i, h) in hits.iter().enumerate() {
            assert_eq!(h.voxel, [i, 1, 2]);
            assert!((h.t_enter - (1.0 + 0.5 * i as f64)).abs() < 1e-12);
            assert!((h.t_exit - h.t_enter - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn origin_inside_starts_at_zero() {
        let mut g = SemanticVoxelGrid::new_empty([4, 4, 4], 2, Vec3::ZERO, Vec3::ONE).unwrap();
        g.set([2, 2, 2], 1).unwrap();
        let r = Ray { origin: Vec3::new(2.5, 2.5, 2.25), direction: Vec3::new(0.0, 0.0, 1.0), pixel: (0, 0) };
        let hits = traverse_nonempty(&g, &r, 4);
        assert_eq!(hits, vec![VoxelHit { voxel: [2, 2, 2], t_enter: 0.0, t_exit: 0.75 }]);
    }

    #[test]
    fn negative_direction_from_face() {
        let mut g = SemanticVoxelGrid::new_empty([4, 1, 1], 2, Vec3::ZERO, Vec3::ONE).unwrap();
        g.set([3, 0, 0], 1).unwrap();
        g.set([0, 0, 0], 1).unwrap();
        let r = Ray { origin: Vec3::new(4.0, 0.5, 0.5), direction: Vec3::new(-1.0, 0.0, 0.0), pixel: (0, 0) };
        let hits = traverse_nonempty(&g, &r, 4);
        assert_eq!(hits.len(), 2);
        assert_eq!(hits[0].voxel, [3, 0, 0]);
        assert_eq!(hits[1].voxel, [0, 0, 0]);
        assert!((hits[1].t_exit - 4.0).abs() < 1e-12);
    }
}
