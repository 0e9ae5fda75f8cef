//! Camera model, projection, quaternion/covariance algebra and spherical
//! harmonics color evaluation shared by the mesh and splat rasterizers.

use glam::{Mat2, Mat3, Quat, Vec2, Vec3};

use crate::error::{Error, Result};

/// DC normalization constant of the real SH basis (`Y_00`).
pub const SH_C0: f32 = 0.282_094_791_773_878_14;
pub const SH_C1: f32 = 0.488_602_511_902_919_9;
pub const SH_C2: [f32; 5] = [
    1.092_548_430_592_079_2,
    -1.092_548_430_592_079_2,
    0.315_391_565_252_520_05,
    -1.092_548_430_592_079_2,
    0.546_274_215_296_039_6,
];
pub const SH_C3: [f32; 7] = [
    -0.590_043_589_926_643_5,
    2.890_611_442_640_554,
    -0.457_045_799_464_465_8,
    0.373_176_332_590_115_4,
    -0.457_045_799_464_465_8,
    1.445_305_721_320_277,
    -0.590_043_589_926_643_5,
];

/// Maximum number of SH coefficients (degree 3).
pub const SH_MAX_COEFFS: usize = 16;

/// Diagonal floor added to projected 2D covariances, in pixels squared.
pub const COV2D_FLOOR: f32 = 0.3;

/// View-dependent RGB color in a low-order real SH basis.
///
/// Coefficients are stored coefficient-major: `coeffs[i]` is the RGB triple
/// of basis function `i`. Only the first `(degree + 1)^2` entries are used.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ShColor {
    pub degree: u8,
    pub coeffs: [[f32; 3]; SH_MAX_COEFFS],
}

impl ShColor {
    pub fn new(degree: u8) -> Self {
        assert!(degree <= 3, "SH degree must be in [0, 3]");
        Self {
            degree,
            coeffs: [[0.0; 3]; SH_MAX_COEFFS],
        }
    }

    /// Degree-0 color that evaluates to `rgb` from every direction.
    pub fn from_rgb(rgb: Vec3) -> Self {
        let mut c = Self::new(0);
        c.coeffs[0] = [
            (rgb.x - 0.5) / SH_C0,
            (rgb.y - 0.5) / SH_C0,
            (rgb.z - 0.5) / SH_C0,
        ];
        c
    }

    pub fn num_coeffs(&self) -> usize {
        (self.degree as usize + 1) * (self.degree as usize + 1)
    }
}

/// Evaluates the SH basis functions up to `degree` at unit direction `dir`.
pub fn sh_basis(degree: u8, dir: Vec3) -> [f32; SH_MAX_COEFFS] {
    let (x, y, z) = (dir.x, dir.y, dir.z);
    let mut b = [0.0; SH_MAX_COEFFS];
    b[0] = SH_C0;
    if degree >= 1 {
        b[1] = -SH_C1 * y;
        b[2] = SH_C1 * z;
        b[3] = -SH_C1 * x;
    }
    if degree >= 2 {
        let (xx, yy, zz) = (x * x, y * y, z * z);
        b[4] = SH_C2[0] * x * y;
        b[5] = SH_C2[1] * y * z;
        b[6] = SH_C2[2] * (2.0 * zz - xx - yy);
        b[7] = SH_C2[3] * x * z;
        b[8] = SH_C2[4] * (xx - yy);
    }
    if degree >= 3 {
        let (xx, yy, zz) = (x * x, y * y, z * z);
        b[9] = SH_C3[0] * y * (3.0 * xx - yy);
        b[10] = SH_C3[1] * x * y * z;
        b[11] = SH_C3[2] * y * (4.0 * zz - xx - yy);
        b[12] = SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy);
        b[13] = SH_C3[4] * x * (4.0 * zz - xx - yy);
        b[14] = SH_C3[5] * z * (xx - yy);
        b[15] = SH_C3[6] * x * (xx - 3.0 * yy);
    }
    b
}

/// Gradient of each basis function with respect to the (unit) direction.
pub fn sh_basis_grad(degree: u8, dir: Vec3) -> [Vec3; SH_MAX_COEFFS] {
    let (x, y, z) = (dir.x, dir.y, dir.z);
    let mut g = [Vec3::ZERO; SH_MAX_COEFFS];
    if degree >= 1 {
        g[1] = Vec3::new(0.0, -SH_C1, 0.0);
        g[2] = Vec3::new(0.0, 0.0, SH_C1);
        g[3] = Vec3::new(-SH_C1, 0.0, 0.0);
    }
    if degree >= 2 {
        g[4] = SH_C2[0] * Vec3::new(y, x, 0.0);
        g[5] = SH_C2[1] * Vec3::new(0.0, z, y);
        g[6] = SH_C2[2] * Vec3::new(-2.0 * x, -2.0 * y, 4.0 * z);
        g[7] = SH_C2[3] * Vec3::new(z, 0.0, x);
        g[8] = SH_C2[4] * Vec3::new(2.0 * x, -2.0 * y, 0.0);
    }
    if degree >= 3 {
        let (xx, yy, zz) = (x * x, y * y, z * z);
        g[9] = SH_C3[0] * Vec3::new(6.0 * x * y, 3.0 * xx - 3.0 * yy, 0.0);
        g[10] = SH_C3[1] * Vec3::new(y * z, x * z, x * y);
        g[11] = SH_C3[2] * Vec3::new(-2.0 * x * y, 4.0 * zz - xx - 3.0 * yy, 8.0 * y * z);
        g[12] = SH_C3[3]
            * Vec3::new(
                -6.0 * x * z,
                -6.0 * y * z,
                6.0 * zz - 3.0 * xx - 3.0 * yy,
            );
        g[13] = SH_C3[4] * Vec3::new(4.0 * zz - 3.0 * xx - yy, -2.0 * x * y, 8.0 * x * z);
        g[14] = SH_C3[5] * Vec3::new(2.0 * x * z, -2.0 * y * z, xx - yy);
        g[15] = SH_C3[6] * Vec3::new(3.0 * xx - 3.0 * yy, -6.0 * x * y, 0.0);
    }
    g
}

/// SH color before the non-negativity clamp: `sum c_i * Y_i(dir) + 0.5`.
pub fn eval_sh_raw(color: &ShColor, dir: Vec3) -> Vec3 {
    let basis = sh_basis(color.degree, dir);
    let mut rgb = Vec3::splat(0.5);
    for (c, b) in color.coeffs[..color.num_coeffs()].iter().zip(basis) {
        rgb += b * Vec3::from_array(*c);
    }
    rgb
}

/// Evaluates an SH color from unit direction `dir`, clamped below at zero.
pub fn eval_sh(color: &ShColor, dir: Vec3) -> Vec3 {
    eval_sh_raw(color, dir).max(Vec3::ZERO)
}

/// Adjoint of [`eval_sh`]: scatters `d_rgb` into coefficient and direction
/// gradients. `raw` must be the pre-clamp value from [`eval_sh_raw`]; channels
/// clamped to zero receive no gradient.
pub fn eval_sh_backward(
    color: &ShColor,
    dir: Vec3,
    raw: Vec3,
    d_rgb: Vec3,
) -> ([[f32; 3]; SH_MAX_COEFFS], Vec3) {
    let mask = Vec3::new(
        if raw.x > 0.0 { 1.0 } else { 0.0 },
        if raw.y > 0.0 { 1.0 } else { 0.0 },
        if raw.z > 0.0 { 1.0 } else { 0.0 },
    );
    let d_rgb = d_rgb * mask;
    let basis = sh_basis(color.degree, dir);
    let basis_grad = sh_basis_grad(color.degree, dir);
    let mut d_coeffs = [[0.0; 3]; SH_MAX_COEFFS];
    let mut d_dir = Vec3::ZERO;
    for i in 0..color.num_coeffs() {
        d_coeffs[i] = (basis[i] * d_rgb).to_array();
        let c = Vec3::from_array(color.coeffs[i]);
        d_dir += basis_grad[i] * c.dot(d_rgb);
    }
    (d_coeffs, d_dir)
}

/// Pinhole camera with a world-to-camera rigid transform.
///
/// Camera space: x right, y down, z forward; a world point `p` maps to
/// `rotation * p + translation`. The sample point of pixel `(i, j)` is
/// `(i + 0.5, j + 0.5)`.
#[derive(Clone, Copy, Debug)]
pub struct Camera {
    pub rotation: Mat3,
    pub translation: Vec3,
    pub fx: f32,
    pub fy: f32,
    pub cx: f32,
    pub cy: f32,
    pub width: u32,
    pub height: u32,
}

pub const MIN_DEPTH: f32 = 1e-8;

impl Camera {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        rotation: Mat3,
        translation: Vec3,
        fx: f32,
        fy: f32,
        cx: f32,
        cy: f32,
        width: u32,
        height: u32,
    ) -> Result<Self> {
        let cam = Self {
            rotation,
            translation,
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "focal lengths must be positive (fx={}, fy={})",
                self.fx, self.fy
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidParameter("image size must be >= 1".into()));
        }
        let drift = orthonormality_drift(self.rotation);
        if drift >= 1e-5 || self.rotation.determinant() < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "camera rotation is not orthonormal (drift {drift})"
            )));
        }
        Ok(())
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vec3 {
        -(self.rotation.transpose() * self.translation)
    }

    pub fn to_camera(&self, p: Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    /// Projects a camera-space point to continuous pixel coordinates.
    pub fn project_camera_space(&self, t: Vec3) -> Result<(Vec2, f32)> {
        if t.z <= MIN_DEPTH {
            return Err(Error::BehindCamera { z: t.z });
        }
        let pixel = Vec2::new(
            self.fx * t.x / t.z + self.cx,
            self.fy * t.y / t.z + self.cy,
        );
        Ok((pixel, t.z))
    }

    /// Projects a world point; returns (pixel, camera-space depth).
    pub fn project(&self, p: Vec3) -> Result<(Vec2, f32)> {
        self.project_camera_space(self.to_camera(p))
    }

    /// Unit world-space direction of the ray through pixel coordinates `px`.
    pub fn pixel_ray_world(&self, px: Vec2) -> Vec3 {
        let d_cam = Vec3::new((px.x - self.cx) / self.fx, (px.y - self.cy) / self.fy, 1.0);
        (self.rotation.transpose() * d_cam).normalize()
    }

    /// Perspective Jacobian d(pixel)/d(camera-space point) at `t`, as rows.
    pub fn projection_jacobian(&self, t: Vec3) -> (Vec3, Vec3) {
        let inv_z = 1.0 / t.z;
        let r0 = Vec3::new(self.fx * inv_z, 0.0, -self.fx * t.x * inv_z * inv_z);
        let r1 = Vec3::new(0.0, self.fy * inv_z, -self.fy * t.y * inv_z * inv_z);
        (r0, r1)
    }
}

pub fn orthonormality_drift(m: Mat3) -> f32 {
    let d = m.transpose() * m - Mat3::IDENTITY;
    d.to_cols_array().iter().fold(0.0f32, |a, v| a.max(v.abs()))
}

/// 3D covariance of a splat from its unit rotation and activated scale:
/// `R * diag(scale^2) * R^T`.
pub fn covariance_3d(rotation: Quat, scale: Vec3) -> Result<Mat3> {
    if !rotation.is_finite() || !scale.is_finite() {
        return Err(Error::InvalidParameter(
            "non-finite rotation or scale".into(),
        ));
    }
    let r = Mat3::from_quat(rotation.normalize());
    let s2 = scale * scale;
    // R * diag(s^2) * R^T, built column-wise.
    let scaled = Mat3::from_cols(r.x_axis * s2.x, r.y_axis * s2.y, r.z_axis * s2.z);
    Ok(scaled * r.transpose())
}

/// Screen-space 2D covariance of a world-space Gaussian via the local affine
/// approximation `J W Σ W^T J^T`, plus a diagonal anti-aliasing floor.
pub fn project_covariance(camera: &Camera, mean: Vec3, cov3d: Mat3) -> Result<Mat2> {
    let t = camera.to_camera(mean);
    if t.z <= MIN_DEPTH {
        return Err(Error::BehindCamera { z: t.z });
    }
    let (j0, j1) = camera.projection_jacobian(t);
    let w = camera.rotation;
    let m = w * cov3d * w.transpose();
    let m_j0 = m * j0;
    let m_j1 = m * j1;
    Ok(Mat2::from_cols(
        Vec2::new(j0.dot(m_j0) + COV2D_FLOOR, j1.dot(m_j0)),
        Vec2::new(j0.dot(m_j1), j1.dot(m_j1) + COV2D_FLOOR),
    ))
}

pub fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

/// Inverse of [`sigmoid`], clamped away from 0 and 1.
pub fn logit(p: f32) -> f32 {
    let p = p.clamp(1e-7, 1.0 - 1e-7);
    (p / (1.0 - p)).ln()
}

/// Row-major floating-point image, RGB or RGBA, nominally in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: u32,
    pub height: u32,
    pub channels: u32,
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(width: u32, height: u32, channels: u32) -> Self {
        assert!(channels == 3 || channels == 4);
        Self {
            width,
            height,
            channels,
            data: vec![0.0; (width * height * channels) as usize],
        }
    }

    pub fn rgb(&self, x: u32, y: u32) -> Vec3 {
        let i = ((y * self.width + x) * self.channels) as usize;
        Vec3::new(self.data[i], self.data[i + 1], self.data[i + 2])
    }

    pub fn set_rgb(&mut self, x: u32, y: u32, c: Vec3) {
        let i = ((y * self.width + x) * self.channels) as usize;
        self.data[i] = c.x;
        self.data[i + 1] = c.y;
        self.data[i + 2] = c.z;
    }

    pub fn num_pixels(&self) -> usize {
        (self.width * self.height) as usize
    }
}
