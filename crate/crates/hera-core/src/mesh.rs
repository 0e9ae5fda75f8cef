//! Opacity-textured triangle mesh and its A-buffer rasterizer.
//!
//! Rasterization keeps every surface crossing per pixel (front and back
//! faces, all depth layers) so the hybrid blender can composite translucent
//! facets against splats.

use glam::{Vec2, Vec3};
use rayon::prelude::*;
use smallvec::SmallVec;

use crate::error::{Error, Result};
use crate::geom::{eval_sh, sigmoid, Camera, ShColor};

/// How fragment colors pick their SH evaluation direction.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ViewDirMode {
    /// Unit world-space ray from the camera center through the pixel.
    #[default]
    CameraRay,
    /// The camera's forward axis for every pixel (cheaper, view-independent
    /// for low texture degrees).
    CameraAxis,
}

/// Planar grid of SH color texels.
///
/// Storage is plane-major: plane `3 * coeff + channel`, each plane row-major
/// `width * height`. This matches the on-disk float-map container.
#[derive(Clone, Debug, PartialEq)]
pub struct ShMap {
    pub width: u32,
    pub height: u32,
    pub degree: u8,
    pub data: Vec<f32>,
}

impl ShMap {
    pub fn new(width: u32, height: u32, degree: u8) -> Self {
        assert!(degree <= 3);
        let planes = 3 * (degree as usize + 1) * (degree as usize + 1);
        Self {
            width,
            height,
            degree,
            data: vec![0.0; planes * (width * height) as usize],
        }
    }

    /// Uniform map evaluating to `rgb` from any direction.
    pub fn constant_rgb(width: u32, height: u32, rgb: Vec3) -> Self {
        let mut map = Self::new(width, height, 0);
        let n = (width * height) as usize;
        for ch in 0..3 {
            let v = (rgb[ch] - 0.5) / crate::geom::SH_C0;
            map.data[ch * n..(ch + 1) * n].fill(v);
        }
        map
    }

    pub fn num_planes(&self) -> usize {
        3 * (self.degree as usize + 1) * (self.degree as usize + 1)
    }

    pub fn plane(&self, p: usize) -> &[f32] {
        let n = (self.width * self.height) as usize;
        &self.data[p * n..(p + 1) * n]
    }

    pub fn plane_mut(&mut self, p: usize) -> &mut [f32] {
        let n = (self.width * self.height) as usize;
        &mut self.data[p * n..(p + 1) * n]
    }

    /// Bilinear sample with repeat addressing; returns a full SH color.
    pub fn sample(&self, uv: Vec2) -> ShColor {
        let taps = bilinear_taps(self.width, self.height, uv);
        let n = (self.width * self.height) as usize;
        let mut out = ShColor::new(self.degree);
        for coeff in 0..out.num_coeffs() {
            for ch in 0..3 {
                let plane = &self.data[(3 * coeff + ch) * n..];
                let mut v = 0.0;
                for (idx, w) in taps {
                    if w != 0.0 {
                        v += w * plane[idx];
                    }
                }
                out.coeffs[coeff][ch] = v;
            }
        }
        out
    }
}

/// Activation applied to interpolated opacity texels.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum OpacityMode {
    /// Texels are logits; alpha = sigmoid(interpolated value). Zero texels
    /// start at alpha 0.5, which is what optimization initializes to.
    #[default]
    Logit,
    /// Texels are alphas in [0, 1] stored as-is (exact import of externally
    /// authored maps); interpolated values are clamped to [0, 1].
    Clamp,
}

/// Scalar opacity map over the mesh UV atlas.
#[derive(Clone, Debug, PartialEq)]
pub struct OpacityMap {
    pub width: u32,
    pub height: u32,
    pub mode: OpacityMode,
    pub data: Vec<f32>,
}

impl OpacityMap {
    pub fn new(width: u32, height: u32, mode: OpacityMode) -> Self {
        Self {
            width,
            height,
            mode,
            data: vec![0.0; (width * height) as usize],
        }
    }

    /// Interpolated raw texel value, before activation.
    pub fn sample_raw(&self, uv: Vec2) -> f32 {
        let taps = bilinear_taps(self.width, self.height, uv);
        let mut v = 0.0;
        for (idx, w) in taps {
            if w != 0.0 {
                v += w * self.data[idx];
            }
        }
        v
    }

    pub fn activate(&self, raw: f32) -> f32 {
        match self.mode {
            OpacityMode::Logit => sigmoid(raw),
            OpacityMode::Clamp => raw.clamp(0.0, 1.0),
        }
    }

    pub fn sample_alpha(&self, uv: Vec2) -> f32 {
        self.activate(self.sample_raw(uv))
    }
}

/// Four-tap bilinear footprint for a repeat-addressed map. Texel centers sit
/// at `((i + 0.5) / w, (j + 0.5) / h)`; `uv` is wrapped into [0, 1).
pub fn bilinear_taps(width: u32, height: u32, uv: Vec2) -> [(usize, f32); 4] {
    let (w, h) = (width as i64, height as i64);
    let u = uv.x - uv.x.floor();
    let v = uv.y - uv.y.floor();
    let x = u * width as f32 - 0.5;
    let y = v * height as f32 - 0.5;
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let wrap = |a: i64, n: i64| (a % n + n) % n;
    let x0i = wrap(x0 as i64, w);
    let x1i = wrap(x0 as i64 + 1, w);
    let y0i = wrap(y0 as i64, h);
    let y1i = wrap(y0 as i64 + 1, h);
    [
        ((y0i * w + x0i) as usize, (1.0 - fx) * (1.0 - fy)),
        ((y0i * w + x1i) as usize, fx * (1.0 - fy)),
        ((y1i * w + x0i) as usize, (1.0 - fx) * fy),
        ((y1i * w + x1i) as usize, fx * fy),
    ]
}

/// Triangle mesh with an SH texture map and an opacity map over a shared
/// per-facet-corner UV atlas.
#[derive(Clone, Debug)]
pub struct TexturedMesh {
    pub vertices: Vec<Vec3>,
    pub facets: Vec<[u32; 3]>,
    /// UV coordinates per facet corner, in [0, 1]^2.
    pub uv: Vec<[Vec2; 3]>,
    pub texture: ShMap,
    pub opacity: OpacityMap,
}

impl TexturedMesh {
    /// Mesh with no facets; renders nothing.
    pub fn empty() -> Self {
        Self {
            vertices: Vec::new(),
            facets: Vec::new(),
            uv: Vec::new(),
            texture: ShMap::new(1, 1, 0),
            opacity: OpacityMap::new(1, 1, OpacityMode::Logit),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.facets.len() != self.uv.len() {
            return Err(Error::SizeMismatch(format!(
                "{} facets but {} uv triples",
                self.facets.len(),
                self.uv.len()
            )));
        }
        for (i, f) in self.facets.iter().enumerate() {
            if f.iter().any(|&v| v as usize >= self.vertices.len()) {
                return Err(Error::InvalidParameter(format!(
                    "facet {i} references a vertex out of range"
                )));
            }
        }
        for (i, uvs) in self.uv.iter().enumerate() {
            if uvs
                .iter()
                .any(|t| !(0.0..=1.0).contains(&t.x) || !(0.0..=1.0).contains(&t.y))
            {
                return Err(Error::InvalidParameter(format!(
                    "facet {i} has uv outside [0,1]^2"
                )));
            }
        }
        if (self.texture.width, self.texture.height) != (self.opacity.width, self.opacity.height) {
            return Err(Error::SizeMismatch(
                "texture and opacity maps must share dimensions".into(),
            ));
        }
        Ok(())
    }
}

/// One surface crossing at a pixel.
#[derive(Clone, Copy, Debug)]
pub struct MeshFragment {
    /// Camera-space z of the crossing.
    pub depth: f32,
    pub alpha: f32,
    pub color: Vec3,
    pub facet_id: u32,
    pub uv: Vec2,
    /// Perspective-correct barycentric weights over the facet corners.
    pub bary: [f32; 3],
}

pub type FragmentList = SmallVec<[MeshFragment; 2]>;

/// Per-pixel mesh depth; 0 marks pixels with no coverage.
#[derive(Clone, Debug)]
pub struct DepthMap {
    pub width: u32,
    pub height: u32,
    pub data: Vec<f32>,
}

impl DepthMap {
    pub fn get(&self, x: u32, y: u32) -> f32 {
        self.data[(y * self.width + x) as usize]
    }
}

/// A-buffer output of mesh rasterization: all fragments per pixel, sorted
/// front to back, plus the front-surface depth.
#[derive(Clone, Debug)]
pub struct FragmentBuffer {
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<FragmentList>,
    front: Vec<f32>,
    /// Screen-space zero-area triangles skipped during rasterization.
    pub degenerate_count: u32,
}

impl FragmentBuffer {
    pub fn empty(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            pixels: vec![FragmentList::new(); (width * height) as usize],
            front: vec![0.0; (width * height) as usize],
            degenerate_count: 0,
        }
    }

    pub fn fragments(&self, x: u32, y: u32) -> &[MeshFragment] {
        &self.pixels[(y * self.width + x) as usize]
    }

    /// Depth of the nearest fragment per pixel, 0 where the list is empty.
    pub fn front_depth(&self) -> DepthMap {
        DepthMap {
            width: self.width,
            height: self.height,
            data: self.front.clone(),
        }
    }
}

/// Projected triangle ready for per-pixel coverage tests.
struct TriPacket {
    facet_id: u32,
    px: [Vec2; 3],
    z: [f32; 3],
    uv: [Vec2; 3],
    bary: [Vec3; 3],
    /// Screen-space bbox as inclusive pixel index range.
    x_range: (u32, u32),
    y_range: (u32, u32),
    area: f32,
}

const Z_NEAR: f32 = 1e-6;
const AREA_EPS: f32 = 1e-12;

fn edge(a: Vec2, b: Vec2, p: Vec2) -> f32 {
    (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x)
}

/// Fill rule for pixel centers exactly on an edge: accept top and left edges
/// so adjacent triangles cover shared-edge pixels exactly once. With the
/// interior on the right of each directed edge, left edges run upward
/// (dy < 0 in y-down pixel coordinates) and top edges run rightward.
fn is_top_left(a: Vec2, b: Vec2) -> bool {
    let dy = b.y - a.y;
    dy < 0.0 || (dy == 0.0 && b.x > a.x)
}

/// Clips the camera-space triangle against z = Z_NEAR. Attributes (uv and
/// original-corner barycentrics) interpolate linearly in camera space.
fn clip_near(
    verts: [(Vec3, Vec2, Vec3); 3],
) -> SmallVec<[(Vec3, Vec2, Vec3); 4]> {
    let mut out = SmallVec::new();
    for i in 0..3 {
        let (pa, uva, ba) = verts[i];
        let (pb, uvb, bb) = verts[(i + 1) % 3];
        let ina = pa.z > Z_NEAR;
        let inb = pb.z > Z_NEAR;
        if ina {
            out.push((pa, uva, ba));
        }
        if ina != inb {
            let t = (Z_NEAR - pa.z) / (pb.z - pa.z);
            out.push((pa.lerp(pb, t), uva.lerp(uvb, t), ba.lerp(bb, t)));
        }
    }
    out
}

fn project_packet(
    camera: &Camera,
    facet_id: u32,
    verts: &[(Vec3, Vec2, Vec3)],
    degenerate: &mut u32,
    packets: &mut Vec<TriPacket>,
) {
    // Fan-triangulate the clipped polygon.
    for k in 1..verts.len().saturating_sub(1) {
        let tri = [verts[0], verts[k], verts[k + 1]];
        let mut px = [Vec2::ZERO; 3];
        let mut z = [0.0f32; 3];
        for (i, (p, _, _)) in tri.iter().enumerate() {
            px[i] = Vec2::new(
                camera.fx * p.x / p.z + camera.cx,
                camera.fy * p.y / p.z + camera.cy,
            );
            z[i] = p.z;
        }
        let mut order = [0usize, 1, 2];
        let area = edge(px[0], px[1], px[2]);
        if area.abs() < AREA_EPS {
            *degenerate += 1;
            continue;
        }
        if area < 0.0 {
            order = [0, 2, 1];
        }
        let pick = |i: usize| tri[order[i]];
        let px = [px[order[0]], px[order[1]], px[order[2]]];
        let z = [z[order[0]], z[order[1]], z[order[2]]];
        let uv = [pick(0).1, pick(1).1, pick(2).1];
        let bary = [pick(0).2, pick(1).2, pick(2).2];
        let area = edge(px[0], px[1], px[2]);

        let min_x = px[0].x.min(px[1].x).min(px[2].x);
        let max_x = px[0].x.max(px[1].x).max(px[2].x);
        let min_y = px[0].y.min(px[1].y).min(px[2].y);
        let max_y = px[0].y.max(px[1].y).max(px[2].y);
        if max_x < 0.0 || max_y < 0.0 || min_x > camera.width as f32 || min_y > camera.height as f32
        {
            continue;
        }
        // Pixel i has center i + 0.5; centers inside [min, max].
        let x0 = (min_x - 0.5).ceil().max(0.0) as u32;
        let x1 = (max_x - 0.5).floor().min(camera.width as f32 - 1.0);
        let y0 = (min_y - 0.5).ceil().max(0.0) as u32;
        let y1 = (max_y - 0.5).floor().min(camera.height as f32 - 1.0);
        if x1 < 0.0 || y1 < 0.0 {
            continue;
        }
        packets.push(TriPacket {
            facet_id,
            px,
            z,
            uv,
            bary,
            x_range: (x0, x1 as u32),
            y_range: (y0, y1 as u32),
            area,
        });
    }
}

/// Rasterizes the mesh into per-pixel fragment lists (all layers, no
/// back-face culling) with perspective-correct depth and UV interpolation.
pub fn rasterize_mesh(
    mesh: &TexturedMesh,
    camera: &Camera,
    view_dir: ViewDirMode,
) -> FragmentBuffer {
    let width = camera.width;
    let height = camera.height;
    let mut degenerate = 0u32;
    let mut packets = Vec::new();

    let cam_verts: Vec<Vec3> = mesh.vertices.iter().map(|&v| camera.to_camera(v)).collect();
    for (facet_id, (f, uvs)) in mesh.facets.iter().zip(&mesh.uv).enumerate() {
        let corners = [
            (cam_verts[f[0] as usize], uvs[0], Vec3::X),
            (cam_verts[f[1] as usize], uvs[1], Vec3::Y),
            (cam_verts[f[2] as usize], uvs[2], Vec3::Z),
        ];
        if corners.iter().all(|(p, _, _)| p.z > Z_NEAR) {
            project_packet(camera, facet_id as u32, &corners, &mut degenerate, &mut packets);
        } else {
            let clipped = clip_near(corners);
            if clipped.len() >= 3 {
                project_packet(camera, facet_id as u32, &clipped, &mut degenerate, &mut packets);
            }
        }
    }

    let axis_dir = camera.rotation.transpose() * Vec3::Z;
    let mut pixels = vec![FragmentList::new(); (width * height) as usize];
    let mut front = vec![0.0f32; (width * height) as usize];

    // Parallel over horizontal bands; each band owns a disjoint row range.
    let rows_per_band = 16usize;
    pixels
        .par_chunks_mut(rows_per_band * width as usize)
        .zip(front.par_chunks_mut(rows_per_band * width as usize))
        .enumerate()
        .for_each(|(band, (band_pixels, band_front))| {
            let row0 = (band * rows_per_band) as u32;
            let row1 = (row0 + (band_pixels.len() as u32 / width)).min(height);
            for packet in &packets {
                let (py0, py1) = packet.y_range;
                let y_start = py0.max(row0);
                let y_end = py1.min(row1.saturating_sub(1));
                if y_start > y_end {
                    continue;
                }
                let inv_area = 1.0 / packet.area;
                for y in y_start..=y_end {
                    for x in packet.x_range.0..=packet.x_range.1 {
                        let p = Vec2::new(x as f32 + 0.5, y as f32 + 0.5);
                        let e0 = edge(packet.px[1], packet.px[2], p);
                        let e1 = edge(packet.px[2], packet.px[0], p);
                        let e2 = edge(packet.px[0], packet.px[1], p);
                        let inside = (e0 > 0.0
                            || (e0 == 0.0 && is_top_left(packet.px[1], packet.px[2])))
                            && (e1 > 0.0
                                || (e1 == 0.0 && is_top_left(packet.px[2], packet.px[0])))
                            && (e2 > 0.0
                                || (e2 == 0.0 && is_top_left(packet.px[0], packet.px[1])));
                        if !inside {
                            continue;
                        }
                        // Screen barycentrics, then perspective correction.
                        let w0 = e0 * inv_area;
                        let w1 = e1 * inv_area;
                        let w2 = e2 * inv_area;
                        let q0 = w0 / packet.z[0];
                        let q1 = w1 / packet.z[1];
                        let q2 = w2 / packet.z[2];
                        let inv_sum = 1.0 / (q0 + q1 + q2);
                        let b0 = q0 * inv_sum;
                        let b1 = q1 * inv_sum;
                        let b2 = q2 * inv_sum;
                        let depth = b0 * packet.z[0] + b1 * packet.z[1] + b2 * packet.z[2];
                        let uv = packet.uv[0] * b0 + packet.uv[1] * b1 + packet.uv[2] * b2;
                        let ob = packet.bary[0] * b0 + packet.bary[1] * b1 + packet.bary[2] * b2;
                        let dir = match view_dir {
                            ViewDirMode::CameraRay => camera.pixel_ray_world(p),
                            ViewDirMode::CameraAxis => axis_dir,
                        };
                        let color = eval_sh(&mesh.texture.sample(uv), dir);
                        let alpha = mesh.opacity.sample_alpha(uv);
                        let idx = ((y - row0) * width + x) as usize;
                        band_pixels[idx].push(MeshFragment {
                            depth,
                            alpha,
                            color,
                            facet_id: packet.facet_id,
                            uv,
                            bary: [ob.x, ob.y, ob.z],
                        });
                    }
                }
            }
            for (list, front_px) in band_pixels.iter_mut().zip(band_front.iter_mut()) {
                list.sort_by(|a, b| {
                    a.depth
                        .total_cmp(&b.depth)
                        .then(a.facet_id.cmp(&b.facet_id))
                });
                *front_px = list.first().map_or(0.0, |f| f.depth);
            }
        });

    FragmentBuffer {
        width,
        height,
        pixels,
        front,
        degenerate_count: degenerate,
    }
}
