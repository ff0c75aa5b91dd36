use crate::error::{Error, Result};
use crate::scene::math::Vec3;

/// Label index reserved for empty space.
pub const EMPTY: u8 = 0;

/// Half-open voxel-index box `[min, max)` per axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct VoxelRegion {
    pub min: [usize; 3],
    pub max: [usize; 3],
}

impl VoxelRegion {
    pub fn new(min: [usize; 3], max: [usize; 3]) -> Self {
        Self { min, max }
    }

    pub fn whole(dims: [usize; 3]) -> Self {
        Self { min: [0; 3], max: dims }
    }

    pub fn is_empty(&self) -> bool {
        (0..3).any(|a| self.max[a] <= self.min[a])
    }

    pub fn volume(&self) -> usize {
        if self.is_empty() {
            0
        } else {
            (0..3).map(|a| self.max[a] - self.min[a]).product()
        }
    }

    pub fn contains(&self, ijk: [usize; 3]) -> bool {
        (0..3).all(|a| ijk[a] >= self.min[a] && ijk[a] < self.max[a])
    }

    fn check(&self, dims: [usize; 3]) -> Result<()> {
        if (0..3).any(|a| self.max[a] > dims[a] || self.min[a] > self.max[a]) {
            return Err(Error::RegionOutOfBounds {
                region: [
                    [self.min[0], self.max[0]],
                    [self.min[1], self.max[1]],
                    [self.min[2], self.max[2]],
                ],
                dims,
            });
        }
        Ok(())
    }

    /// Iterates voxel indices in x-fastest order.
    pub fn iter(&self) -> impl Iterator<Item = [usize; 3]> + '_ {
        let r = *self;
        let empty = r.is_empty();
        (r.min[2]..if empty { r.min[2] } else { r.max[2] }).flat_map(move |k| {
            (r.min[1]..r.max[1]).flat_map(move |j| (r.min[0]..r.max[0]).map(move |i| [i, j, k]))
        })
    }
}

/// Dense semantic voxel grid. Axes are (x, y, z) with z pointing up;
/// labels are stored x-fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct SemanticVoxelGrid {
    dims: [usize; 3],
    num_labels: u32,
    origin: Vec3,
    spacing: Vec3,
    labels: Vec<u8>,
    names: Vec<String>,
}

impl SemanticVoxelGrid {
    /// Default placement: 1 m horizontal, 0.25 m vertical voxels.
    pub const DEFAULT_SPACING: Vec3 = Vec3::new(1.0, 1.0, 0.25);

    pub fn new_empty(dims: [usize; 3], num_labels: u32, origin: Vec3, spacing: Vec3) -> Result<Self> {
        let n = dims.iter().product();
        Self::from_labels(dims, num_labels, origin, spacing, vec![EMPTY; n], Vec::new())
    }

    pub fn from_labels(
        dims: [usize; 3],
        num_labels: u32,
        origin: Vec3,
        spacing: Vec3,
        labels: Vec<u8>,
        names: Vec<String>,
    ) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::InvalidGrid(format!("zero dimension in {dims:?}")));
        }
        if num_labels == 0 || num_labels > 256 {
            return Err(Error::InvalidGrid(format!("label count {num_labels} not in 1..=256")));
        }
        if !(spacing.min_elem() > 0.0) || !spacing.is_finite() {
            return Err(Error::InvalidGrid(format!("spacing must be positive, got {spacing:?}")));
        }
        if !origin.is_finite() {
            return Err(Error::InvalidGrid("non-finite origin".into()));
        }
        if labels.len() != dims.iter().product::<usize>() {
            return Err(Error::InvalidGrid(format!(
                "label array has {} entries, dims need {}",
                labels.len(),
                dims.iter().product::<usize>()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as u32 >= num_labels) {
            return Err(Error::LabelOutOfRange { label: bad as u32, num_labels });
        }
        if !names.is_empty() && names.len() != num_labels as usize {
            return Err(Error::InvalidGrid(format!(
                "{} label names for {num_labels} labels",
                names.len()
            )));
        }
        Ok(Self { dims, num_labels, origin, spacing, labels, names })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn num_labels(&self) -> u32 {
        self.num_labels
    }

    pub fn origin(&self) -> Vec3 {
        self.origin
    }

    pub fn spacing(&self) -> Vec3 {
        self.spacing
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn set_names(&mut self, names: Vec<String>) -> Result<()> {
        if names.len() != self.num_labels as usize {
            return Err(Error::InvalidGrid(format!(
                "{} label names for {} labels",
                names.len(),
                self.num_labels
            )));
        }
        self.names = names;
        Ok(())
    }

    /// Resolves a label given either by name or as a decimal index.
    pub fn resolve_label(&self, token: &str) -> Result<u8> {
        if let Some(i) = self.names.iter().position(|n| n == token) {
            return Ok(i as u8);
        }
        let idx: u32 = token
            .parse()
            .map_err(|_| Error::InvalidGrid(format!("unknown label `{token}`")))?;
        self.check_label(idx)?;
        Ok(idx as u8)
    }

    pub fn upper_corner(&self) -> Vec3 {
        self.origin
            + Vec3::new(
                self.dims[0] as f64 * self.spacing.x,
                self.dims[1] as f64 * self.spacing.y,
                self.dims[2] as f64 * self.spacing.z,
            )
    }

    #[inline]
    pub fn linear_index(&self, ijk: [usize; 3]) -> usize {
        ijk[0] + self.dims[0] * (ijk[1] + self.dims[1] * ijk[2])
    }

    #[inline]
    pub fn label(&self, ijk: [usize; 3]) -> u8 {
        self.labels[self.linear_index(ijk)]
    }

    pub fn set(&mut self, ijk: [usize; 3], label: u8) -> Result<()> {
        self.check_label(label as u32)?;
        let i = self.linear_index(ijk);
        self.labels[i] = label;
        Ok(())
    }

    #[inline]
    pub fn is_occupied(&self, ijk: [usize; 3]) -> bool {
        self.label(ijk) != EMPTY
    }

    pub fn occupied_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l != EMPTY).count()
    }

    /// Lower corner of voxel `ijk` in world space.
    pub fn voxel_corner(&self, ijk: [usize; 3]) -> Vec3 {
        self.origin
            + Vec3::new(
                ijk[0] as f64 * self.spacing.x,
                ijk[1] as f64 * self.spacing.y,
                ijk[2] as f64 * self.spacing.z,
            )
    }

    pub fn voxel_center(&self, ijk: [usize; 3]) -> Vec3 {
        self.voxel_corner(ijk) + self.spacing * 0.5
    }

    /// Voxel containing `p` under half-open cells; `None` outside the grid.
    pub fn voxel_of(&self, p: Vec3) -> Option<[usize; 3]> {
        let rel = (p - self.origin).hadamard_div(self.spacing);
        let mut ijk = [0usize; 3];
        for a in 0..3 {
            let f = rel[a].floor();
            if !(f >= 0.0) || f >= self.dims[a] as f64 {
                return None;
            }
            ijk[a] = f as usize;
        }
        Some(ijk)
    }

    /// Label of the voxel containing `p`, or `None` when `p` is outside the grid.
    pub fn semantic_at(&self, p: Vec3) -> Option<u8> {
        self.voxel_of(p).map(|ijk| self.label(ijk))
    }

    fn check_label(&self, label: u32) -> Result<()> {
        if label >= self.num_labels {
            return Err(Error::LabelOutOfRange { label, num_labels: self.num_labels });
        }
        Ok(())
    }

    /// Replaces `from` with `to` inside `region` (whole grid when `None`).
    pub fn edit_relabel(&self, from: u8, to: u8, region: Option<VoxelRegion>) -> Result<Self> {
        self.check_label(from as u32)?;
        self.check_label(to as u32)?;
        let region = region.unwrap_or(VoxelRegion::whole(self.dims));
        region.check(self.dims)?;
        let mut out = self.clone();
        for ijk in region.iter() {
            let i = self.linear_index(ijk);
            if out.labels[i] == from {
                out.labels[i] = to;
            }
        }
        Ok(out)
    }

    /// Sets every voxel in `region` to `label` (`EMPTY` carves).
    pub fn edit_occupancy(&self, region: VoxelRegion, label: u8) -> Result<Self> {
        self.check_label(label as u32)?;
        region.check(self.dims)?;
        let mut out = self.clone();
        for ijk in region.iter() {
            let i = self.linear_index(ijk);
            out.labels[i] = label;
        }
        Ok(out)
    }

    /// Copies the labels of `region` to the region shifted by `offset`.
    /// The source is left untouched; combine with [`Self::edit_occupancy`] to move.
    pub fn edit_copy(&self, region: VoxelRegion, offset: [i64; 3]) -> Result<Self> {
        region.check(self.dims)?;
        let shifted = [0, 1, 2].map(|a| {
            [region.min[a] as i64 + offset[a], region.max[a] as i64 + offset[a]]
        });
        if (0..3).any(|a| shifted[a][0] < 0 || shifted[a][1] > self.dims[a] as i64) {
            return Err(Error::RegionOutOfBounds {
                region: shifted.map(|[lo, hi]| [lo.max(0) as usize, hi.max(0) as usize]),
                dims: self.dims,
            });
        }
        let mut out = self.clone();
        for ijk in region.iter() {
            let dst = [0, 1, 2].map(|a| (ijk[a] as i64 + offset[a]) as usize);
            let v = self.label(ijk);
            let i = out.linear_index(dst);
            out.labels[i] = v;
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(dims: [usize; 3], labels: u32) -> SemanticVoxelGrid {
        SemanticVoxelGrid::new_empty(dims, labels, Vec3::ZERO, Vec3::ONE).unwrap()
    }

    #[test]
    fn semantic_at_voxel_center_and_outside() {
        let mut g = grid([4, 4, 4], 3);
        g.set([0, 0, 0], 2).unwrap();
        assert_eq!(g.semantic_at(Vec3::new(0.5, 0.5, 0.5)), Some(2));
        assert_eq!(g.semantic_at(Vec3::new(5.0, 0.5, 0.5)), None);
        assert_eq!(g.semantic_at(Vec3::new(-0.01, 0.5, 0.5)), None);
    }

    #[test]
    fn boundary_point_belongs_to_higher_cell() {
        let mut g = grid([4, 4, 4], 3);
        g.set([1, 0, 0], 1).unwrap();
        assert_eq!(g.voxel_of(Vec3::new(1.0, 0.5, 0.5)), Some([1, 0, 0]));
        assert_eq!(g.semantic_at(Vec3::new(1.0, 0.5, 0.5)), Some(1));
        // the upper face of the grid is outside
        assert_eq!(g.semantic_at(Vec3::new(4.0, 0.5, 0.5)), None);
    }

    #[test]
    fn invalid_grids_rejected() {
        assert!(SemanticVoxelGrid::new_empty([2, 2, 2], 3, Vec3::ZERO, Vec3::new(1.0, 0.0, 1.0)).is_err());
        assert!(SemanticVoxelGrid::from_labels([1, 1, 2], 2, Vec3::ZERO, Vec3::ONE, vec![0, 2], vec![]).is_err());
        assert!(SemanticVoxelGrid::from_labels([1, 1, 2], 2, Vec3::ZERO, Vec3::ONE, vec![0], vec![]).is_err());
    }

    #[test]
    fn relabel_identity_and_whole_grid() {
        let mut g = grid([3, 3, 3], 4);
        for ijk in VoxelRegion::whole([3, 3, 3]).iter() {
            g.set(ijk, 1).unwrap();
        }
        assert_eq!(g.edit_relabel(1, 1, None).unwrap(), g);
        let grass = g.edit_relabel(1, 2, None).unwrap();
        assert!(grass.labels().iter().all(|&l| l == 2));
        assert!(g.edit_relabel(1, 9, None).is_err());
    }

    #[test]
    fn relabel_half_region_matches_scan() {
        let mut g = grid([6, 4, 5], 4);
        for (n, ijk) in VoxelRegion::whole(g.dims()).iter().enumerate() {
            g.set(ijk, [1, 1, 3, 0][n % 4]).unwrap();
        }
        let region = VoxelRegion::new([0, 0, 0], [3, 4, 5]);
        let out = g.edit_relabel(1, 2, Some(region)).unwrap();
        let mut expected_changes = 0;
        for ijk in VoxelRegion::whole(g.dims()).iter() {
            if region.contains(ijk) && g.label(ijk) == 1 {
                expected_changes += 1;
            }
        }
        let changes = g.labels().iter().zip(out.labels()).filter(|(a, b)| a != b).count();
        assert_eq!(changes, expected_changes);
        assert!(expected_changes > 0);
    }

    #[test]
    fn occupancy_region_checks() {
        let g = grid([4, 4, 4], 2);
        assert!(g.edit_occupancy(VoxelRegion::new([0, 0, 0], [5, 1, 1]), 1).is_err());
        let same = g.edit_occupancy(VoxelRegion::new([1, 1, 1], [1, 3, 3]), 1).unwrap();
        assert_eq!(same, g);
    }

    #[test]
    fn lower_building_drops_count_by_region_prior() {
        let mut g = grid([4, 4, 8], 3);
        for k in 0..8 {
            g.set([1, 1, k], 2).unwrap();
            g.set([2, 1, k], 2).unwrap();
        }
        g.set([3, 3, 6], 1).unwrap();
        let region = VoxelRegion::new([0, 0, 4], [4, 4, 8]);
        let prior = region.iter().filter(|&ijk| g.is_occupied(ijk)).count();
        let lowered = g.edit_occupancy(region, EMPTY).unwrap();
        assert_eq!(g.occupied_count() - lowered.occupied_count(), prior);
    }

    #[test]
    fn copy_then_carve_moves_tree() {
        let mut g = grid([6, 6, 4], 3);
        for k in 0..3 {
            g.set([1, 1, k], 2).unwrap();
        }
        let src = VoxelRegion::new([1, 1, 0], [2, 2, 3]);
        let moved = g.edit_copy(src, [3, 2, 0]).unwrap().edit_occupancy(src, EMPTY).unwrap();
        for ijk in VoxelRegion::whole(g.dims()).iter() {
            let expected = if (ijk[0], ijk[1]) == (4, 3) && ijk[2] < 3 { 2 } else { 0 };
            assert_eq!(moved.label(ijk), expected, "{ijk:?}");
        }
    }
}
