use crate::scene::{Camera, Vec3};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    /// Unit length.
    pub direction: Vec3,
    /// Feature-resolution pixel `(u, v)`.
    pub pixel: (usize, usize),
}

impl Ray {
    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.direction * t
    }
}

/// One ray per feature pixel (half the image resolution), row-major, through
/// the center of the 2×2 image-pixel block the feature pixel covers.
pub fn generate_rays(camera: &Camera) -> Vec<Ray> {
    let (wf, hf) = camera.feature_size();
    let mut rays = Vec::with_capacity(wf * hf);
    for v in 0..hf {
        for u in 0..wf {
            let d = camera.direction_at(2.0 * u as f64 + 1.0, 2.0 * v as f64 + 1.0);
            rays.push(Ray { origin: camera.position(), direction: d, pixel: (u, v) });
        }
    }
    rays
}
