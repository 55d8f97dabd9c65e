//! Camera models, rigid transforms, and the two coordinate maps at the heart
//! of the pipeline: fusing per-view predictions into canonical world
//! coordinates and re-projecting canonical points into novel views.
//!
//! Conventions, fixed once for the whole crate:
//! - `(u, v)` are continuous image coordinates measured from the center of
//!   the top-left pixel; pixel `(i, j)` covers `[i-0.5, i+0.5) x [j-0.5, j+0.5)`.
//! - A [`RigidTransform`] maps world to camera: `cam = R * p + t`. Camera z
//!   is depth; smaller z is closer to the viewer.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math::{self, Mat3, Vec3};
use crate::rng::Pcg32;

/// Near-plane used to cull points in perspective projection.
pub const Z_NEAR: f64 = 1e-6;

/// Rotation matrices must satisfy `|R^T R - I|_max` and `|det R - 1|` below
/// this bound.
pub const ROTATION_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProjectionMode {
    Orthographic,
    Perspective,
}

/// Pinhole-style intrinsics `(fx, fy, cx, cy)`. In orthographic mode fx/fy
/// are pixels per world unit; in perspective mode the usual focal lengths.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub mode: ProjectionMode,
}

impl CameraIntrinsics {
    pub fn orthographic(fx: f64, fy: f64, cx: f64, cy: f64) -> Self {
        CameraIntrinsics {
            fx,
            fy,
            cx,
            cy,
            mode: ProjectionMode::Orthographic,
        }
    }

    pub fn perspective(fx: f64, fy: f64, cx: f64, cy: f64) -> Self {
        CameraIntrinsics {
            fx,
            fy,
            cx,
            cy,
            mode: ProjectionMode::Perspective,
        }
    }

    /// Orthographic camera centered on a `width x height` image whose
    /// horizontal field spans `extent` world units.
    pub fn orthographic_centered(width: usize, height: usize, extent: f64) -> Self {
        let scale = width as f64 / extent;
        CameraIntrinsics {
            fx: scale,
            fy: scale,
            cx: (width as f64 - 1.0) / 2.0,
            cy: (height as f64 - 1.0) / 2.0,
            mode: ProjectionMode::Orthographic,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::InvalidInput("intrinsics require fx > 0 and fy > 0"));
        }
        if !(self.fx.is_finite()
            && self.fy.is_finite()
            && self.cx.is_finite()
            && self.cy.is_finite())
        {
            return Err(Error::InvalidInput("intrinsics must be finite"));
        }
        Ok(())
    }
}

/// World-to-camera rigid motion `cam = R * p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl RigidTransform {
    pub const IDENTITY: RigidTransform = RigidTransform {
        rotation: Mat3::IDENTITY,
        translation: Vec3::ZERO,
    };

    pub fn new(rotation: Mat3, translation: Vec3) -> Self {
        RigidTransform {
            rotation,
            translation,
        }
    }

    /// Pure rotation with zero translation.
    pub fn rotation_only(rotation: Mat3) -> Self {
        RigidTransform {
            rotation,
            translation: Vec3::ZERO,
        }
    }

    pub fn apply(&self, p: Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    /// Applies the inverse motion; for rotations the inverse is the transpose.
    pub fn apply_inverse(&self, cam: Vec3) -> Vec3 {
        self.rotation.transpose() * (cam - self.translation)
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.translation.is_finite() {
            return Err(Error::InvalidInput("translation must be finite"));
        }
        if self.rotation.orthonormality_residual() > ROTATION_TOL {
            return Err(Error::InvalidInput("rotation is not orthonormal"));
        }
        if math::abs(self.rotation.det() - 1.0) > ROTATION_TOL {
            return Err(Error::InvalidInput("rotation determinant is not +1"));
        }
        Ok(())
    }
}

/// Unordered canonical-frame point set.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    pub points: Vec<Vec3>,
}

impl PointCloud {
    pub fn new(points: Vec<Vec3>) -> Self {
        PointCloud { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.points.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidInput(
                "point cloud contains non-finite coordinates",
            ));
        }
        Ok(())
    }
}

/// Channel indices into [`ViewMaps`] data.
pub const CH_X: usize = 0;
pub const CH_Y: usize = 1;
pub const CH_Z: usize = 2;
pub const CH_MASK: usize = 3;
pub const CHANNELS: usize = 4;

/// Per-viewpoint prediction grids: four planes (x, y, z, mask logit) per
/// view, stored planar as `[view][channel][row][col]`, plus the fixed
/// world-to-camera transform of each view. The flat layout doubles as the
/// parameter vector of the fitting harness.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewMaps {
    pub n_views: usize,
    pub height: usize,
    pub width: usize,
    pub transforms: Vec<RigidTransform>,
    pub data: Vec<f64>,
}

impl ViewMaps {
    pub fn zeros(transforms: Vec<RigidTransform>, height: usize, width: usize) -> Self {
        let n_views = transforms.len();
        ViewMaps {
            n_views,
            height,
            width,
            transforms,
            data: alloc::vec![0.0; n_views * CHANNELS * height * width],
        }
    }

    #[inline]
    pub fn index(&self, view: usize, channel: usize, row: usize, col: usize) -> usize {
        ((view * CHANNELS + channel) * self.height + row) * self.width + col
    }

    #[inline]
    pub fn get(&self, view: usize, channel: usize, row: usize, col: usize) -> f64 {
        self.data[self.index(view, channel, row, col)]
    }

    #[inline]
    pub fn set(&mut self, view: usize, channel: usize, row: usize, col: usize, value: f64) {
        let i = self.index(view, channel, row, col);
        self.data[i] = value;
    }

    /// One channel plane of one view as a row-major slice.
    pub fn plane(&self, view: usize, channel: usize) -> &[f64] {
        let start = (view * CHANNELS + channel) * self.height * self.width;
        &self.data[start..start + self.height * self.width]
    }

    pub fn plane_mut(&mut self, view: usize, channel: usize) -> &mut [f64] {
        let start = (view * CHANNELS + channel) * self.height * self.width;
        &mut self.data[start..start + self.height * self.width]
    }

    pub fn validate(&self) -> Result<()> {
        if self.transforms.len() != self.n_views {
            return Err(Error::InvalidInput(
                "view count does not match transform count",
            ));
        }
        if self.data.len() != self.n_views * CHANNELS * self.height * self.width {
            return Err(Error::InvalidInput("view map data length mismatch"));
        }
        if self.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("view maps contain non-finite values"));
        }
        for t in &self.transforms {
            t.validate()?;
        }
        Ok(())
    }
}

/// Lift an image-coordinate sample `(u, v, z)` into the camera frame.
pub fn image_to_camera(k: &CameraIntrinsics, u: f64, v: f64, z: f64) -> Result<Vec3> {
    k.validate()?;
    if !(u.is_finite() && v.is_finite() && z.is_finite()) {
        return Err(Error::InvalidInput("image coordinates must be finite"));
    }
    let x = (u - k.cx) / k.fx;
    let y = (v - k.cy) / k.fy;
    Ok(match k.mode {
        ProjectionMode::Orthographic => Vec3::new(x, y, z),
        ProjectionMode::Perspective => Vec3::new(z * x, z * y, z),
    })
}

/// Project a canonical point into continuous image coordinates and depth
/// under pose `t`. Returns `None` when the point is culled, which happens
/// only in perspective mode for camera depth at or below [`Z_NEAR`].
pub fn camera_to_image(
    k: &CameraIntrinsics,
    t: &RigidTransform,
    p: Vec3,
) -> Option<(f64, f64, f64)> {
    let cam = t.apply(p);
    match k.mode {
        ProjectionMode::Orthographic => Some((k.fx * cam.x + k.cx, k.fy * cam.y + k.cy, cam.z)),
        ProjectionMode::Perspective => {
            if cam.z <= Z_NEAR {
                None
            } else {
                Some((
                    k.fx * cam.x / cam.z + k.cx,
                    k.fy * cam.y / cam.z + k.cy,
                    cam.z,
                ))
            }
        }
    }
}

/// Pixel provenance of a fused point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SourcePixel {
    pub view: u32,
    pub row: u32,
    pub col: u32,
}

/// Fuse all view maps into a canonical-frame cloud. A pixel is retained when
/// `sigmoid(mask_logit) >= mask_threshold`; retained pixels are emitted in
/// (view, row, col) order, so output ordering is fixed.
pub fn fuse_views(
    maps: &ViewMaps,
    k: &CameraIntrinsics,
    mask_threshold: f64,
) -> Result<PointCloud> {
    Ok(fuse_views_with_sources(maps, k, mask_threshold)?.0)
}

/// [`fuse_views`] plus the source pixel of every emitted point, for gradient
/// routing.
pub fn fuse_views_with_sources(
    maps: &ViewMaps,
    k: &CameraIntrinsics,
    mask_threshold: f64,
) -> Result<(PointCloud, Vec<SourcePixel>)> {
    maps.validate()?;
    k.validate()?;
    if !(mask_threshold > 0.0 && mask_threshold < 1.0) {
        return Err(Error::InvalidInput("mask threshold must lie in (0, 1)"));
    }
    let mut points = Vec::new();
    let mut sources = Vec::new();
    for view in 0..maps.n_views {
        let inv = maps.transforms[view].inverse();
        for row in 0..maps.height {
            for col in 0..maps.width {
                let logit = maps.get(view, CH_MASK, row, col);
                if math::sigmoid(logit) < mask_threshold {
                    continue;
                }
                let u = maps.get(view, CH_X, row, col);
                let v = maps.get(view, CH_Y, row, col);
                let z = maps.get(view, CH_Z, row, col);
                let cam = image_to_camera(k, u, v, z)?;
                points.push(inv.apply(cam));
                sources.push(SourcePixel {
                    view: view as u32,
                    row: row as u32,
                    col: col as u32,
                });
            }
        }
    }
    Ok((PointCloud::new(points), sources))
}

/// Single transform equivalent to `novel ∘ view.inverse()`: it takes view-n
/// camera coordinates straight to the novel camera frame.
pub fn compose_effective(view: &RigidTransform, novel: &RigidTransform) -> RigidTransform {
    let r = novel.rotation * view.rotation.transpose();
    let t = novel.translation - r * view.translation;
    RigidTransform {
        rotation: r,
        translation: t,
    }
}

/// World-to-camera look-at pose: camera at `eye`, principal axis through
/// `target`, world +z as the up reference (+x when the view direction is
/// parallel to +z).
pub fn look_at(eye: Vec3, target: Vec3) -> Result<RigidTransform> {
    let forward = (target - eye)
        .normalized()
        .ok_or(Error::InvalidInput("look-at eye and target coincide"))?;
    let mut up = Vec3::new(0.0, 0.0, 1.0);
    if forward.cross(up).norm() < 1e-9 {
        up = Vec3::new(1.0, 0.0, 0.0);
    }
    let right = forward
        .cross(up)
        .normalized()
        .expect("up fallback guarantees a non-degenerate cross product");
    let down = forward.cross(right);
    let rotation = Mat3::from_rows(right, down, forward);
    let translation = -(rotation * eye);
    Ok(RigidTransform {
        rotation,
        translation,
    })
}

/// The eight fixed viewpoints: look-at poses from the corners
/// `(±distance, ±distance, ±distance)` of a centered cube toward the origin.
/// Corner `i` takes its x/y/z sign from bits 0/1/2 of `i`.
pub fn fixed_cube_viewpoints(distance: f64) -> Result<Vec<RigidTransform>> {
    if !(distance > 0.0 && distance.is_finite()) {
        return Err(Error::InvalidInput("cube corner distance must be positive"));
    }
    let mut out = Vec::with_capacity(8);
    for i in 0..8u32 {
        let sign = |bit: u32| {
            if i >> bit & 1 == 1 {
                distance
            } else {
                -distance
            }
        };
        let corner = Vec3::new(sign(0), sign(1), sign(2));
        out.push(look_at(corner, Vec3::ZERO)?);
    }
    Ok(out)
}

/// Haar-uniform random rotation with zero translation: four standard
/// normals (two Box-Muller pairs, consuming four `u32` draws) normalized to
/// a unit quaternion.
pub fn random_rotation(rng: &mut Pcg32) -> RigidTransform {
    let (a, b) = rng.normal_pair();
    let (c, d) = rng.normal_pair();
    let norm = math::sqrt(a * a + b * b + c * c + d * d);
    let (w, x, y, z) = if norm < 1e-12 {
        (1.0, 0.0, 0.0, 0.0)
    } else {
        (a / norm, b / norm, c / norm, d / norm)
    };
    let rotation = Mat3 {
        m: [
            [
                1.0 - 2.0 * (y * y + z * z),
                2.0 * (x * y - w * z),
                2.0 * (x * z + w * y),
            ],
            [
                2.0 * (x * y + w * z),
                1.0 - 2.0 * (x * x + z * z),
                2.0 * (y * z - w * x),
            ],
            [
                2.0 * (x * z - w * y),
                2.0 * (y * z + w * x),
                1.0 - 2.0 * (x * x + y * y),
            ],
        ],
    };
    RigidTransform::rotation_only(rotation)
}

/// Rotation by `angle` radians about a coordinate axis (0 = x, 1 = y, 2 = z).
pub fn axis_rotation(axis: usize, angle: f64) -> Mat3 {
    let (s, c) = (math::sin(angle), math::cos(angle));
    match axis {
        0 => Mat3 {
            m: [[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]],
        },
        1 => Mat3 {
            m: [[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]],
        },
        2 => Mat3 {
            m: [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]],
        },
        _ => panic!("axis must be 0, 1, or 2"),
    }
}
