//! Tile-binned forward preparation of Gaussian splats: projection to screen
//! space, per-splat color/opacity activation and depth-ordered tile bins.

use glam::{Mat2, Quat, Vec2, Vec3};
use rayon::prelude::*;

use crate::geom::{
    covariance_3d, eval_sh_raw, project_covariance, sigmoid, Camera, ShColor, MIN_DEPTH,
};

pub const TILE_SIZE: u32 = 16;
/// Blending weights are capped below 1 so transmittance never hits zero.
pub const ALPHA_CAP: f32 = 0.99;
/// Contributions below this are skipped by the blender.
pub const ALPHA_SKIP: f32 = 1.0 / 255.0;
/// Splats are binned to tiles intersecting their 3σ screen-space bbox.
pub const SIGMA_CUTOFF: f32 = 3.0;
/// Splats with a 3σ radius below this many pixels are dropped.
pub const MIN_RADIUS_PX: f32 = 0.1;

/// One anisotropic Gaussian primitive.
///
/// `rotation` is normalized on use, `log_scale` activates through `exp` and
/// `opacity` is a logit activating through the sigmoid.
#[derive(Clone, Copy, Debug)]
pub struct GaussianSplat {
    pub position: Vec3,
    pub rotation: Quat,
    pub log_scale: Vec3,
    pub opacity: f32,
    pub color: ShColor,
}

impl GaussianSplat {
    pub fn scale(&self) -> Vec3 {
        self.log_scale.exp()
    }

    pub fn activated_opacity(&self) -> f32 {
        sigmoid(self.opacity)
    }
}

/// Screen-space data of one surviving splat for a given camera.
#[derive(Clone, Copy, Debug)]
pub struct ScreenSplat {
    /// Index into the input splat list.
    pub id: u32,
    pub mean2d: Vec2,
    /// Inverse of the 2D covariance.
    pub conic: Mat2,
    /// Activated opacity.
    pub opacity: f32,
    /// SH color evaluated from the camera-to-mean direction, clamped at 0.
    pub rgb: Vec3,
    /// Same, before the clamp (kept for the backward pass).
    pub rgb_raw: Vec3,
    /// Camera-space z of the mean; the single depth used for sorting
    /// everywhere the splat appears.
    pub depth: f32,
    /// 3σ half extents of the screen-space ellipse bbox.
    pub radius: Vec2,
}

/// Splats that never reached the bins, by cause.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct DropStats {
    pub behind_camera: u32,
    pub too_small: u32,
    pub off_screen: u32,
}

impl DropStats {
    pub fn total(&self) -> u32 {
        self.behind_camera + self.too_small + self.off_screen
    }
}

/// Depth-sorted splat bins over a 16x16-pixel tile grid (CSR layout).
#[derive(Clone, Debug)]
pub struct SplatBins {
    pub tiles_x: u32,
    pub tiles_y: u32,
    offsets: Vec<u32>,
    entries: Vec<u32>,
}

impl SplatBins {
    pub fn empty(camera: &Camera) -> Self {
        let tiles_x = camera.width.div_ceil(TILE_SIZE);
        let tiles_y = camera.height.div_ceil(TILE_SIZE);
        Self {
            tiles_x,
            tiles_y,
            offsets: vec![0; (tiles_x * tiles_y + 1) as usize],
            entries: Vec::new(),
        }
    }

    /// Screen-splat indices binned to tile `(tx, ty)`, ascending by
    /// (depth, splat id).
    pub fn tile(&self, tx: u32, ty: u32) -> &[u32] {
        let t = (ty * self.tiles_x + tx) as usize;
        &self.entries[self.offsets[t] as usize..self.offsets[t + 1] as usize]
    }

    pub fn num_tiles(&self) -> u32 {
        self.tiles_x * self.tiles_y
    }
}

/// Inclusive tile index range intersecting the interval [lo, hi] in pixels,
/// or None if it misses the grid entirely.
fn tile_range(lo: f32, hi: f32, tiles: u32) -> Option<(u32, u32)> {
    let size = TILE_SIZE as f32;
    if hi < 0.0 || lo >= tiles as f32 * size {
        return None;
    }
    let t0 = (lo / size).floor().max(0.0) as u32;
    let t1 = ((hi / size).floor() as i64).clamp(0, tiles as i64 - 1) as u32;
    Some((t0.min(tiles - 1), t1))
}

/// Projects splats and bins them to every tile their 3σ bbox touches.
/// Per-splat depth is the camera-space z of the mean, identical in every
/// tile the splat lands in.
pub fn rasterize_splats(
    splats: &[GaussianSplat],
    camera: &Camera,
) -> (Vec<ScreenSplat>, SplatBins, DropStats) {
    let cam_center = camera.center();
    let projected: Vec<Result<ScreenSplat, DropStats>> = splats
        .par_iter()
        .enumerate()
        .map(|(id, s)| project_splat(id as u32, s, camera, cam_center))
        .collect();

    let mut screen = Vec::with_capacity(projected.len());
    let mut drops = DropStats::default();
    for p in projected {
        match p {
            Ok(s) => screen.push(s),
            Err(d) => {
                drops.behind_camera += d.behind_camera;
                drops.too_small += d.too_small;
                drops.off_screen += d.off_screen;
            }
        }
    }

    let mut bins = SplatBins::empty(camera);
    let mut keyed: Vec<(u32, u32, u32)> = Vec::new(); // (tile, depth bits, screen idx)
    let mut retained = vec![false; screen.len()];
    for (idx, s) in screen.iter().enumerate() {
        let xr = tile_range(s.mean2d.x - s.radius.x, s.mean2d.x + s.radius.x, bins.tiles_x);
        let yr = tile_range(s.mean2d.y - s.radius.y, s.mean2d.y + s.radius.y, bins.tiles_y);
        if let (Some((x0, x1)), Some((y0, y1))) = (xr, yr) {
            retained[idx] = true;
            for ty in y0..=y1 {
                for tx in x0..=x1 {
                    // Positive depths compare correctly as raw bit patterns.
                    keyed.push((ty * bins.tiles_x + tx, s.depth.to_bits(), idx as u32));
                }
            }
        }
    }
    drops.off_screen += retained.iter().filter(|&&r| !r).count() as u32;
    keyed.sort_unstable();

    let mut offsets = vec![0u32; (bins.num_tiles() + 1) as usize];
    for &(tile, _, _) in &keyed {
        offsets[tile as usize + 1] += 1;
    }
    for i in 1..offsets.len() {
        offsets[i] += offsets[i - 1];
    }
    bins.offsets = offsets;
    bins.entries = keyed.into_iter().map(|(_, _, idx)| idx).collect();
    (screen, bins, drops)
}

fn project_splat(
    id: u32,
    s: &GaussianSplat,
    camera: &Camera,
    cam_center: Vec3,
) -> Result<ScreenSplat, DropStats> {
    let t = camera.to_camera(s.position);
    if t.z <= MIN_DEPTH {
        return Err(DropStats {
            behind_camera: 1,
            ..Default::default()
        });
    }
    let mean2d = Vec2::new(
        camera.fx * t.x / t.z + camera.cx,
        camera.fy * t.y / t.z + camera.cy,
    );
    let cov3d = covariance_3d(s.rotation, s.scale()).expect("finite splat parameters");
    let cov2d = project_covariance(camera, s.position, cov3d).expect("depth already checked");
    let radius = Vec2::new(
        SIGMA_CUTOFF * cov2d.col(0).x.max(0.0).sqrt(),
        SIGMA_CUTOFF * cov2d.col(1).y.max(0.0).sqrt(),
    );
    if radius.x.max(radius.y) < MIN_RADIUS_PX {
        return Err(DropStats {
            too_small: 1,
            ..Default::default()
        });
    }
    let conic = cov2d.inverse();
    let dir = (s.position - cam_center).normalize();
    let rgb_raw = eval_sh_raw(&s.color, dir);
    Ok(ScreenSplat {
        id,
        mean2d,
        conic,
        opacity: s.activated_opacity(),
        rgb: rgb_raw.max(Vec3::ZERO),
        rgb_raw,
        depth: t.z,
        radius,
    })
}

/// Blending weight of a splat at a pixel center:
/// `min(cap, opacity * exp(-0.5 d^T Σ'^-1 d))`.
pub fn splat_alpha(s: &ScreenSplat, pixel: Vec2) -> f32 {
    let d = pixel - s.mean2d;
    let power = -0.5 * (s.conic.col(0).x * d.x * d.x + s.conic.col(1).y * d.y * d.y)
        - s.conic.col(0).y * d.x * d.y;
    (s.opacity * power.min(0.0).exp()).min(ALPHA_CAP)
}
