use crate::error::{Error, Result};
use crate::scene::math::{Mat3, Quat, Vec3};

/// Oriented object box. Canonical object space is the cube `[-0.5, 0.5]^3`,
/// so `size` is the full edge length in meters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObjectBox {
    rotation: Quat,
    rot: Mat3,
    translation: Vec3,
    size: Vec3,
    latent_seed: u64,
}

impl ObjectBox {
    /// The quaternion is renormalized; sizes must be strictly positive.
    pub fn new(rotation: Quat, translation: Vec3, size: Vec3, latent_seed: u64) -> Result<Self> {
        let rotation = Quat::normalized_from(rotation.to_array())
            .ok_or_else(|| Error::InvalidBox("degenerate rotation quaternion".into()))?;
        if !(size.min_elem() > 0.0) || !size.is_finite() {
            return Err(Error::InvalidBox(format!("size components must be positive, got {size:?}")));
        }
        if !translation.is_finite() {
            return Err(Error::InvalidBox("non-finite translation".into()));
        }
        Ok(Self { rotation, rot: rotation.to_mat3(), translation, size, latent_seed })
    }

    pub fn axis_aligned(center: Vec3, size: Vec3, latent_seed: u64) -> Result<Self> {
        Self::new(Quat::IDENTITY, center, size, latent_seed)
    }

    pub fn rotation(&self) -> Quat {
        self.rotation
    }

    pub fn rotation_matrix(&self) -> &Mat3 {
        &self.rot
    }

    pub fn translation(&self) -> Vec3 {
        self.translation
    }

    pub fn size(&self) -> Vec3 {
        self.size
    }

    pub fn latent_seed(&self) -> u64 {
        self.latent_seed
    }

    pub fn with_latent_seed(mut self, seed: u64) -> Self {
        self.latent_seed = seed;
        self
    }

    /// `R (s ⊙ x) + t`.
    pub fn world_from_object(&self, x_obj: Vec3) -> Vec3 {
        self.rot.mul_vec(self.size.hadamard(x_obj)) + self.translation
    }

    /// `(Rᵀ (x - t)) ⊘ s`.
    pub fn object_from_world(&self, x_wld: Vec3) -> Vec3 {
        self.rot.transpose().mul_vec(x_wld - self.translation).hadamard_div(self.size)
    }

    /// Direction transform into canonical space (no translation, not renormalized).
    pub fn object_direction(&self, d_wld: Vec3) -> Vec3 {
        self.rot.transpose().mul_vec(d_wld).hadamard_div(self.size)
    }

    /// The 8 corners of the box in world space.
    pub fn corners(&self) -> [Vec3; 8] {
        let mut out = [Vec3::ZERO; 8];
        for (n, c) in out.iter_mut().enumerate() {
            let x = Vec3::new(
                if n & 1 == 0 { -0.5 } else { 0.5 },
                if n & 2 == 0 { -0.5 } else { 0.5 },
                if n & 4 == 0 { -0.5 } else { 0.5 },
            );
            *c = self.world_from_object(x);
        }
        out
    }

    pub fn contains_world(&self, p: Vec3) -> bool {
        let o = self.object_from_world(p);
        o.x.abs() <= 0.5 && o.y.abs() <= 0.5 && o.z.abs() <= 0.5
    }

    /// Replaces pose and size; the latent seed is kept.
    pub fn transformed(&self, rotation: Quat, translation: Vec3, size: Vec3) -> Result<Self> {
        Self::new(rotation, translation, size, self.latent_seed)
    }
}

/// Ordered object boxes. Removal leaves a tombstone so indices stay valid.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ObjectLayout {
    slots: Vec<Option<ObjectBox>>,
}

impl ObjectLayout {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_slots(slots: Vec<Option<ObjectBox>>) -> Self {
        Self { slots }
    }

    pub fn slots(&self) -> &[Option<ObjectBox>] {
        &self.slots
    }

    /// Slot count including tombstones.
    pub fn capacity(&self) -> usize {
        self.slots.len()
    }

    pub fn live_count(&self) -> usize {
        self.slots.iter().filter(|s| s.is_some()).count()
    }

    pub fn get(&self, index: usize) -> Option<&ObjectBox> {
        self.slots.get(index).and_then(|s| s.as_ref())
    }

    /// Live boxes with their stable indices.
    pub fn iter(&self) -> impl Iterator<Item = (usize, &ObjectBox)> {
        self.slots.iter().enumerate().filter_map(|(i, s)| s.as_ref().map(|b| (i, b)))
    }

    pub fn insert(&mut self, b: ObjectBox) -> usize {
        self.slots.push(Some(b));
        self.slots.len() - 1
    }

    pub fn remove(&mut self, index: usize) -> Result<ObjectBox> {
        let slot = self.slots.get_mut(index).ok_or(Error::InvalidObject(index))?;
        let removed = slot.take().ok_or(Error::InvalidObject(index))?;
        // trailing tombstones carry no index information
        while matches!(self.slots.last(), Some(None)) {
            self.slots.pop();
        }
        Ok(removed)
    }

    pub fn transform(&mut self, index: usize, rotation: Quat, translation: Vec3, size: Vec3) -> Result<()> {
        let slot = self
            .slots
            .get_mut(index)
            .and_then(|s| s.as_mut())
            .ok_or(Error::InvalidObject(index))?;
        *slot = slot.transformed(rotation, translation, size)?;
        Ok(())
    }

    pub fn replace(&mut self, index: usize, b: ObjectBox) -> Result<()> {
        let slot = self
            .slots
            .get_mut(index)
            .and_then(|s| s.as_mut())
            .ok_or(Error::InvalidObject(index))?;
        *slot = b;
        Ok(())
    }
}
