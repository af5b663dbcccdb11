//! Pinhole cameras, per-pixel rays and Plücker embeddings.
//!
//! Conventions: right-handed camera frame with +x right, +y down and +z
//! forward. `world_from_camera` maps camera coordinates to world
//! coordinates; its columns are the camera axes expressed in world space.
//! Pixel `(col, row)` has its center at `(col + 0.5, row + 0.5)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{self, Mat3, Vec3};

#[derive(Clone, Debug, PartialEq)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    rotation: Mat3,
    translation: Vec3,
}

impl Camera {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
        rotation: Mat3,
        translation: Vec3,
    ) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0) {
            return Err(Error::InvalidCamera(format!("focal lengths must be positive, got {fx}, {fy}")));
        }
        if width == 0 || height == 0 {
            return Err(Error::InvalidCamera("image size must be positive".into()));
        }
        if !(0.0..width as f64).contains(&cx) || !(0.0..height as f64).contains(&cy) {
            return Err(Error::InvalidCamera(format!(
                "principal point ({cx}, {cy}) outside {width}x{height}"
            )));
        }
        let rrt = math::mat_mul(&rotation, &math::transpose(&rotation));
        for (r, row) in rrt.iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                let expect = if r == c { 1.0 } else { 0.0 };
                if (v - expect).abs() > 1e-6 {
                    return Err(Error::InvalidCamera("rotation is not orthonormal".into()));
                }
            }
        }
        if math::dot(math::cross(rotation_col(&rotation, 0), rotation_col(&rotation, 1)), rotation_col(&rotation, 2)) < 0.0 {
            return Err(Error::InvalidCamera("rotation has negative determinant".into()));
        }
        if translation.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidCamera("non-finite translation".into()));
        }
        Ok(Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            rotation,
            translation,
        })
    }

    /// Camera at `eye` looking at `target`, with `up` as the world up hint.
    pub fn look_at(eye: Vec3, target: Vec3, up: Vec3, focal: f64, width: usize, height: usize) -> Result<Self> {
        let forward = math::normalize(math::sub(target, eye));
        let down = math::sub(math::scale(forward, math::dot(up, forward)), up);
        if math::norm(down) < 1e-9 {
            return Err(Error::InvalidCamera("view direction parallel to up vector".into()));
        }
        let down = math::normalize(down);
        let right = math::cross(down, forward);
        let rotation = [
            [right[0], down[0], forward[0]],
            [right[1], down[1], forward[1]],
            [right[2], down[2], forward[2]],
        ];
        Self::new(focal, focal, width as f64 / 2.0, height as f64 / 2.0, width, height, rotation, eye)
    }

    /// Rotation part of `world_from_camera`.
    pub fn rotation(&self) -> &Mat3 {
        &self.rotation
    }

    /// Camera center in world coordinates.
    pub fn position(&self) -> Vec3 {
        self.translation
    }

    /// World point to camera coordinates.
    pub fn to_camera(&self, p: Vec3) -> Vec3 {
        math::mat_t_vec(&self.rotation, math::sub(p, self.translation))
    }

    /// Unit world-space direction through continuous image coordinates.
    pub fn ray_direction_at(&self, u: f64, v: f64) -> Vec3 {
        let local = [(u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0];
        math::normalize(math::mat_vec(&self.rotation, local))
    }

    /// Same camera with intrinsics rescaled to a new resolution.
    pub fn resized(&self, width: usize, height: usize) -> Result<Self> {
        let sx = width as f64 / self.width as f64;
        let sy = height as f64 / self.height as f64;
        Self::new(
            self.fx * sx,
            self.fy * sy,
            self.cx * sx,
            self.cy * sy,
            width,
            height,
            self.rotation,
            self.translation,
        )
    }

    pub fn to_record(&self) -> CameraRecord {
        let r = &self.rotation;
        let t = &self.translation;
        CameraRecord {
            width: self.width,
            height: self.height,
            fx: self.fx,
            fy: self.fy,
            cx: self.cx,
            cy: self.cy,
            world_from_camera: [
                r[0][0], r[0][1], r[0][2], t[0], r[1][0], r[1][1], r[1][2], t[1], r[2][0], r[2][1], r[2][2], t[2],
            ],
        }
    }

    pub fn from_record(rec: &CameraRecord) -> Result<Self> {
        let m = &rec.world_from_camera;
        Self::new(
            rec.fx,
            rec.fy,
            rec.cx,
            rec.cy,
            rec.width,
            rec.height,
            [[m[0], m[1], m[2]], [m[4], m[5], m[6]], [m[8], m[9], m[10]]],
            [m[3], m[7], m[11]],
        )
    }
}

fn rotation_col(r: &Mat3, c: usize) -> Vec3 {
    [r[0][c], r[1][c], r[2][c]]
}

/// On-disk camera: intrinsics plus row-major 3×4 `world_from_camera`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraRecord {
    pub width: usize,
    pub height: usize,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub world_from_camera: [f64; 12],
}

/// Per-pixel ray origins and unit directions, row-major over the image.
#[derive(Clone, Debug)]
pub struct RayMap {
    pub width: usize,
    pub height: usize,
    pub origins: Vec<Vec3>,
    pub directions: Vec<Vec3>,
}

/// Ray through every pixel center.
pub fn pixel_rays(camera: &Camera) -> RayMap {
    let mut directions = Vec::with_capacity(camera.width * camera.height);
    for row in 0..camera.height {
        for col in 0..camera.width {
            directions.push(camera.ray_direction_at(col as f64 + 0.5, row as f64 + 0.5));
        }
    }
    RayMap {
        width: camera.width,
        height: camera.height,
        origins: vec![camera.position(); directions.len()],
        directions,
    }
}

/// Plücker coordinates `(d, o × d)` per pixel, `H×W×6` row-major.
pub fn plucker_embed(rays: &RayMap) -> Vec<f64> {
    let mut out = Vec::with_capacity(rays.directions.len() * 6);
    for (o, d) in rays.origins.iter().zip(&rays.directions) {
        let m = math::cross(*o, *d);
        out.extend_from_slice(&[d[0], d[1], d[2], m[0], m[1], m[2]]);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const I3: Mat3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

    fn identity_cam() -> Camera {
        Camera::new(32.0, 32.0, 32.0, 32.0, 64, 64, I3, [0.0; 3]).unwrap()
    }

    #[test]
    fn principal_point_maps_to_optical_axis() {
        let d = identity_cam().ray_direction_at(32.0, 32.0);
        assert_eq!(d, [0.0, 0.0, 1.0]);
    }

    #[test]
    fn left_edge_pixel_direction() {
        let cam = identity_cam();
        let d = cam.ray_direction_at(0.5, cam.cy);
        let oracle = math::normalize([-31.5 / 32.0, 0.0, 1.0]);
        for k in 0..3 {
            assert!((d[k] - oracle[k]).abs() < 1e-12);
        }
        // same ray from the pixel grid: column 0 center
        let rays = pixel_rays(&cam);
        let grid = rays.directions[0];
        let oracle = math::normalize([-31.5 / 32.0, -31.5 / 32.0, 1.0]);
        for k in 0..3 {
            assert!((grid[k] - oracle[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn origins_equal_translation() {
        let cam = Camera::look_at([0.0, -2.7, 0.5], [0.0; 3], [0.0, 0.0, 1.0], 40.0, 16, 16).unwrap();
        let rays = pixel_rays(&cam);
        assert!(rays.origins.iter().all(|o| *o == cam.position()));
        assert!(rays.directions.iter().all(|d| (math::norm(*d) - 1.0).abs() < 1e-12));
    }

    #[test]
    fn look_at_centre_ray_hits_target() {
        let cam = Camera::look_at([1.0, 2.0, 0.5], [0.0; 3], [0.0, 0.0, 1.0], 40.0, 16, 16).unwrap();
        let d = cam.ray_direction_at(cam.cx, cam.cy);
        let expect = math::normalize([-1.0, -2.0, -0.5]);
        for k in 0..3 {
            assert!((d[k] - expect[k]).abs() < 1e-12);
        }
        // image "down" points toward world -z
        let pc = cam.to_camera([0.0, 0.0, -0.1]);
        assert!(pc[1] > 0.0);
    }

    #[test]
    fn rejects_bad_intrinsics_and_rotation() {
        assert!(Camera::new(0.0, 1.0, 1.0, 1.0, 4, 4, I3, [0.0; 3]).is_err());
        assert!(Camera::new(1.0, 1.0, 4.0, 1.0, 4, 4, I3, [0.0; 3]).is_err());
        let skew = [[1.0, 0.1, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        assert!(Camera::new(1.0, 1.0, 1.0, 1.0, 4, 4, skew, [0.0; 3]).is_err());
    }

    #[test]
    fn plucker_examples() {
        let rays = RayMap {
            width: 2,
            height: 1,
            origins: vec![[0.0; 3], [1.0, 0.0, 0.0]],
            directions: vec![[0.0, 0.0, 1.0], [0.0, 0.0, 1.0]],
        };
        let p = plucker_embed(&rays);
        assert_eq!(&p[..6], &[0.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
        assert_eq!(&p[6..], &[0.0, 0.0, 1.0, 0.0, -1.0, 0.0]);
    }

    #[test]
    fn record_round_trip() {
        let cam = Camera::look_at([0.3, -2.0, 1.0], [0.0; 3], [0.0, 0.0, 1.0], 50.0, 32, 24).unwrap();
        let back = Camera::from_record(&cam.to_record()).unwrap();
        assert_eq!(cam, back);
    }

    proptest! {
        #[test]
        fn plucker_invariant_under_sliding_origin(
            ox in -3.0f64..3.0, oy in -3.0f64..3.0, oz in -3.0f64..3.0,
            dx in -1.0f64..1.0, dy in -1.0f64..1.0, dz in 0.1f64..1.0,
            t in -5.0f64..5.0,
        ) {
            let d = math::normalize([dx, dy, dz]);
            let o = [ox, oy, oz];
            let a = plucker_embed(&RayMap { width: 1, height: 1, origins: vec![o], directions: vec![d] });
            let o2 = math::add(o, math::scale(d, t));
            let b = plucker_embed(&RayMap { width: 1, height: 1, origins: vec![o2], directions: vec![d] });
            for k in 0..6 {
                prop_assert!((a[k] - b[k]).abs() < 1e-9);
            }
        }

        #[test]
        fn directions_in_camera_frame_depend_only_on_intrinsics(
            ex in -3.0f64..3.0, ey in -3.0f64..3.0, ez in -1.0f64..1.0,
        ) {
            prop_assume!(ex.abs() + ey.abs() > 0.5);
            let cam = Camera::look_at([ex, ey, ez], [0.0; 3], [0.0, 0.0, 1.0], 20.0, 8, 6).unwrap();
            let reference = Camera::new(20.0, 20.0, 4.0, 3.0, 8, 6, I3, [0.0; 3]).unwrap();
            let a = pixel_rays(&cam);
            let b = pixel_rays(&reference);
            for (da, db) in a.directions.iter().zip(&b.directions) {
                let local = math::mat_t_vec(cam.rotation(), *da);
                for k in 0..3 {
                    prop_assert!((local[k] - db[k]).abs() < 1e-9);
                }
            }
        }
    }
}
