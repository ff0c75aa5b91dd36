use crate::error::{Error, Result};
use crate::scene::layout::ObjectBox;
use crate::scene::math::{Mat3, Quat, Vec3};

/// Pinhole camera. The camera looks down +z of its own frame, +x right, +y down;
/// `rotation`/`position` map camera coordinates to world coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    width: usize,
    height: usize,
    rotation: Quat,
    rot: Mat3,
    position: Vec3,
}

/// Half-open pixel rectangle `[u0, u1) x [v0, v1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PixelRect {
    pub u0: usize,
    pub v0: usize,
    pub u1: usize,
    pub v1: usize,
}

impl PixelRect {
    pub fn width(&self) -> usize {
        self.u1 - self.u0
    }

    pub fn height(&self) -> usize {
        self.v1 - self.v0
    }

    pub fn area(&self) -> usize {
        self.width() * self.height()
    }

    pub fn contains(&self, u: usize, v: usize) -> bool {
        u >= self.u0 && u < self.u1 && v >= self.v0 && v < self.v1
    }

    /// Grows the rectangle by `by` pixels on every side, clipped to `(width, height)`.
    pub fn dilate(&self, by: usize, width: usize, height: usize) -> PixelRect {
        PixelRect {
            u0: self.u0.saturating_sub(by),
            v0: self.v0.saturating_sub(by),
            u1: (self.u1 + by).min(width),
            v1: (self.v1 + by).min(height),
        }
    }
}

const NEAR: f64 = 1e-6;

impl Camera {
    pub fn new(
        intrinsics: [f64; 4],
        image_size: (usize, usize),
        rotation: Quat,
        position: Vec3,
    ) -> Result<Self> {
        let [fx, fy, cx, cy] = intrinsics;
        if !(fx > 0.0 && fy > 0.0) || !cx.is_finite() || !cy.is_finite() {
            return Err(Error::InvalidCamera(format!("bad intrinsics {intrinsics:?}")));
        }
        let (width, height) = image_size;
        if width < 2 || height < 2 || width % 2 != 0 || height % 2 != 0 {
            return Err(Error::InvalidCamera(format!(
                "image size {width}x{height} must be even and at least 2"
            )));
        }
        let rotation = Quat::normalized_from(rotation.to_array())
            .ok_or_else(|| Error::InvalidCamera("degenerate rotation".into()))?;
        if !position.is_finite() {
            return Err(Error::InvalidCamera("non-finite position".into()));
        }
        Ok(Self { fx, fy, cx, cy, width, height, rotation, rot: rotation.to_mat3(), position })
    }

    /// Symmetric camera with the given horizontal field of view.
    pub fn with_fov(width: usize, height: usize, hfov_deg: f64, rotation: Quat, position: Vec3) -> Result<Self> {
        let fx = 0.5 * width as f64 / (0.5 * hfov_deg.to_radians()).tan();
        Self::new([fx, fx, width as f64 / 2.0, height as f64 / 2.0], (width, height), rotation, position)
    }

    /// Camera at `eye` looking at `target`, world up is +z.
    pub fn look_at(width: usize, height: usize, hfov_deg: f64, eye: Vec3, target: Vec3) -> Result<Self> {
        let q = Quat::look_rotation(target - eye, Vec3::new(0.0, 0.0, 1.0));
        Self::with_fov(width, height, hfov_deg, q, eye)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn feature_size(&self) -> (usize, usize) {
        (self.width / 2, self.height / 2)
    }

    pub fn rotation(&self) -> Quat {
        self.rotation
    }

    pub fn rotation_matrix(&self) -> &Mat3 {
        &self.rot
    }

    pub fn position(&self) -> Vec3 {
        self.position
    }

    pub fn with_pose(&self, rotation: Quat, position: Vec3) -> Result<Self> {
        Self::new([self.fx, self.fy, self.cx, self.cy], (self.width, self.height), rotation, position)
    }

    /// Same pose and field of view at a different resolution.
    pub fn with_resolution(&self, width: usize, height: usize) -> Result<Self> {
        let sx = width as f64 / self.width as f64;
        let sy = height as f64 / self.height as f64;
        Self::new(
            [self.fx * sx, self.fy * sy, self.cx * sx, self.cy * sy],
            (width, height),
            self.rotation,
            self.position,
        )
    }

    /// Unit world-space direction through continuous image coordinate `(u, v)`.
    pub fn direction_at(&self, u: f64, v: f64) -> Vec3 {
        let d = Vec3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0).normalized();
        self.rot.mul_vec(d)
    }

    pub fn camera_from_world(&self, p: Vec3) -> Vec3 {
        self.rot.transpose().mul_vec(p - self.position)
    }

    /// Projects a camera-frame point with positive depth to continuous pixel coordinates.
    pub fn project_camera_point(&self, pc: Vec3) -> (f64, f64) {
        (self.cx + self.fx * pc.x / pc.z, self.cy + self.fy * pc.y / pc.z)
    }

    /// Pixel rectangle covered by the projection of `b`, clipped to the image.
    ///
    /// Corners behind the camera are replaced by the points where the box edges
    /// cross the near plane, so partially visible boxes are never under-covered.
    pub fn project_box(&self, b: &ObjectBox) -> Option<PixelRect> {
        if b.contains_world(self.position) {
            return Some(PixelRect { u0: 0, v0: 0, u1: self.width, v1: self.height });
        }
        let corners = b.corners().map(|c| self.camera_from_world(c));
        let mut pts: Vec<Vec3> = corners.iter().copied().filter(|c| c.z > NEAR).collect();
        for a in 0..8usize {
            for bit in [1usize, 2, 4] {
                let bidx = a | bit;
                if bidx == a {
                    continue;
                }
                let (p, q) = (corners[a], corners[bidx]);
                if (p.z > NEAR) != (q.z > NEAR) {
                    let s = (NEAR - p.z) / (q.z - p.z);
                    let mut x = p + (q - p) * s;
                    x.z = NEAR;
                    pts.push(x);
                }
            }
        }
        if pts.is_empty() {
            return None;
        }
        let (mut umin, mut umax, mut vmin, mut vmax) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for p in pts {
            let (u, v) = self.project_camera_point(p);
            umin = umin.min(u);
            umax = umax.max(u);
            vmin = vmin.min(v);
            vmax = vmax.max(v);
        }
        let (w, h) = (self.width as f64, self.height as f64);
        if umax < 0.0 || vmax < 0.0 || umin >= w || vmin >= h {
            return None;
        }
        let rect = PixelRect {
            u0: umin.max(0.0).floor() as usize,
            v0: vmin.max(0.0).floor() as usize,
            u1: (umax.floor() + 1.0).clamp(0.0, w) as usize,
            v1: (vmax.floor() + 1.0).clamp(0.0, h) as usize,
        };
        (rect.u1 > rect.u0 && rect.v1 > rect.v0).then_some(rect)
    }
}
