//! Hybrid compositing of mesh fragments and Gaussian splats: per-frame splat
//! classification against the rasterized mesh depth, per-pixel merge of the
//! two fragment streams, and front-to-back alpha blending.
//!
//! A splat carries one depth for its whole screen footprint while mesh
//! depths are exact per pixel, so sorting the two directly lets splats cross
//! facets as the view moves. Classification compares the splat depth against
//! the mesh depth interpolated at the splat's own projected mean, once per
//! frame, and every covered pixel honors that single decision unless the
//! per-pixel override below fires.

use glam::{Vec2, Vec3};
use rayon::prelude::*;

use crate::error::Result;
use crate::geom::{Camera, Image};
use crate::mesh::{rasterize_mesh, DepthMap, FragmentBuffer, MeshFragment, ViewDirMode};
use crate::scene::Scene;
use crate::splat::{
    rasterize_splats, DropStats, GaussianSplat, ScreenSplat, SplatBins, ALPHA_SKIP,
    TILE_SIZE,
};

/// Blending stops once transmittance drops below this.
pub const TRANSMITTANCE_EPS: f32 = 1e-4;

/// Default depth margin of the per-pixel override, in meters.
pub const DEFAULT_LAMBDA: f32 = 0.05;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum SortMode {
    /// Per-frame classification plus the per-pixel override.
    #[default]
    Stable,
    /// Direct per-pixel depth comparison of splats against mesh fragments.
    Legacy,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum PrimitiveMask {
    #[default]
    Both,
    MeshOnly,
    SplatsOnly,
}

#[derive(Clone, Copy, Debug)]
pub struct RenderOptions {
    /// Override margin λ: a splat classified in front of the mesh is still
    /// placed behind it at pixels where the front mesh depth is smaller than
    /// the splat depth by more than λ.
    pub lambda: f32,
    pub sort: SortMode,
    pub mask: PrimitiveMask,
    pub view_dir: ViewDirMode,
    /// Splat contributions below this weight are skipped.
    pub alpha_skip: f32,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            lambda: DEFAULT_LAMBDA,
            sort: SortMode::Stable,
            mask: PrimitiveMask::Both,
            view_dir: ViewDirMode::CameraRay,
            alpha_skip: ALPHA_SKIP,
        }
    }
}

/// Per-frame relation of one splat to the mesh surface.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SplatMeshClass {
    /// Splat depth is smaller than the mesh depth under its projected mean.
    FrontOfMesh { reference: f32 },
    /// Behind the mesh surface; `reference` is absent when the mean projects
    /// outside the image and the splat is forced behind.
    BehindMesh { reference: Option<f32> },
    /// No mesh along the ray through the mean; compare depths directly.
    DirectCompare,
}

/// Classifies a splat against the front-surface depth map, once per frame.
///
/// The mean is projected through the camera; outside the image rectangle the
/// splat is forced behind the mesh. Otherwise the depth map is bilinearly
/// interpolated at the projected point; any tap on an uncovered pixel (depth
/// 0) demotes to direct comparison rather than interpolating across a hole.
pub fn classify_splat(
    position: Vec3,
    depth: f32,
    depth_map: &DepthMap,
    camera: &Camera,
) -> SplatMeshClass {
    let Ok((px, _)) = camera.project(position) else {
        // Splats behind the camera are culled before classification.
        return SplatMeshClass::BehindMesh { reference: None };
    };
    if px.x < 0.0 || px.y < 0.0 || px.x >= camera.width as f32 || px.y >= camera.height as f32 {
        return SplatMeshClass::BehindMesh { reference: None };
    }
    let w = depth_map.width as i64;
    let h = depth_map.height as i64;
    let x = px.x - 0.5;
    let y = px.y - 0.5;
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let clamp = |a: i64, n: i64| a.clamp(0, n - 1);
    let x0i = clamp(x0 as i64, w);
    let x1i = clamp(x0 as i64 + 1, w);
    let y0i = clamp(y0 as i64, h);
    let y1i = clamp(y0 as i64 + 1, h);
    let taps = [
        (depth_map.data[(y0i * w + x0i) as usize], (1.0 - fx) * (1.0 - fy)),
        (depth_map.data[(y0i * w + x1i) as usize], fx * (1.0 - fy)),
        (depth_map.data[(y1i * w + x0i) as usize], (1.0 - fx) * fy),
        (depth_map.data[(y1i * w + x1i) as usize], fx * fy),
    ];
    if taps.iter().any(|&(d, _)| d == 0.0) {
        return SplatMeshClass::DirectCompare;
    }
    let reference = taps.iter().map(|&(d, w)| d * w).sum::<f32>();
    if depth < reference {
        SplatMeshClass::FrontOfMesh { reference }
    } else {
        SplatMeshClass::BehindMesh {
            reference: Some(reference),
        }
    }
}

/// One splat contribution at a pixel, ready for merging.
#[derive(Clone, Copy, Debug)]
pub struct SplatHit {
    pub id: u32,
    pub depth: f32,
    pub alpha: f32,
    pub color: Vec3,
    pub class: SplatMeshClass,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FragmentSource {
    Mesh { facet_id: u32 },
    Splat { id: u32 },
}

/// An entry of the merged per-pixel blending sequence.
#[derive(Clone, Copy, Debug)]
pub struct HybridFragment {
    pub depth: f32,
    pub alpha: f32,
    pub color: Vec3,
    pub source: FragmentSource,
}

/// Number of mesh fragments that must precede a splat in the merged order.
///
/// Stable mode: front-classified splats precede all mesh fragments (bucket
/// 0) unless the override demotes them; behind-classified splats go after
/// the front fragment and merge with the deeper layers by depth; direct-
/// compare splats merge with all fragments by depth. Legacy mode is direct
/// comparison for everything. Mesh fragments win depth ties.
fn splat_bucket(
    class: SplatMeshClass,
    depth: f32,
    mesh: &[MeshFragment],
    lambda: f32,
    sort: SortMode,
) -> usize {
    if mesh.is_empty() {
        return 0;
    }
    let rank = |frags: &[MeshFragment]| frags.partition_point(|f| f.depth <= depth);
    if sort == SortMode::Legacy {
        return rank(mesh);
    }
    let forced_behind = mesh[0].depth < depth - lambda;
    match (class, forced_behind) {
        (SplatMeshClass::FrontOfMesh { .. }, false) => 0,
        (SplatMeshClass::DirectCompare, false) => rank(mesh),
        (SplatMeshClass::BehindMesh { .. }, _) | (_, true) => 1 + rank(&mesh[1..]),
    }
}

/// Merges mesh fragments with splat hits into one ordered blending sequence.
///
/// `mesh` must be ascending in depth and `hits` ascending in splat depth
/// (ties by id), as produced by the rasterizers.
pub fn merge_fragments(
    mesh: &[MeshFragment],
    hits: &[SplatHit],
    lambda: f32,
) -> Vec<HybridFragment> {
    merge_fragments_mode(mesh, hits, lambda, SortMode::Stable)
}

pub fn merge_fragments_mode(
    mesh: &[MeshFragment],
    hits: &[SplatHit],
    lambda: f32,
    sort: SortMode,
) -> Vec<HybridFragment> {
    let mut keyed: Vec<(usize, usize)> = hits
        .iter()
        .enumerate()
        .map(|(i, h)| (splat_bucket(h.class, h.depth, mesh, lambda, sort), i))
        .collect();
    keyed.sort_by_key(|&(bucket, _)| bucket);

    let mut out = Vec::with_capacity(mesh.len() + hits.len());
    let mut ptr = 0;
    for j in 0..=mesh.len() {
        while ptr < keyed.len() && keyed[ptr].0 == j {
            let h = &hits[keyed[ptr].1];
            out.push(HybridFragment {
                depth: h.depth,
                alpha: h.alpha,
                color: h.color,
                source: FragmentSource::Splat { id: h.id },
            });
            ptr += 1;
        }
        if j < mesh.len() {
            let f = &mesh[j];
            out.push(HybridFragment {
                depth: f.depth,
                alpha: f.alpha,
                color: f.color,
                source: FragmentSource::Mesh { facet_id: f.facet_id },
            });
        }
    }
    out
}

/// Front-to-back alpha blend of an ordered fragment sequence, completed by
/// the residual transmittance times the background.
pub fn blend(fragments: &[HybridFragment], background: Vec3) -> Vec3 {
    let mut color = Vec3::ZERO;
    let mut t = 1.0f32;
    for f in fragments {
        color += f.color * (f.alpha * t);
        t *= 1.0 - f.alpha;
        if t < TRANSMITTANCE_EPS {
            break;
        }
    }
    color + t * background
}

/// Blend that also reports per-fragment weights and the final transmittance;
/// weights of fragments past the early exit are zero.
pub fn blend_detailed(fragments: &[HybridFragment], background: Vec3) -> BlendDetail {
    let mut color = Vec3::ZERO;
    let mut t = 1.0f32;
    let mut weights = vec![0.0; fragments.len()];
    for (w, f) in weights.iter_mut().zip(fragments) {
        *w = f.alpha * t;
        color += f.color * *w;
        t *= 1.0 - f.alpha;
        if t < TRANSMITTANCE_EPS {
            break;
        }
    }
    BlendDetail {
        color: color + t * background,
        weights,
        transmittance: t,
    }
}

#[derive(Clone, Debug)]
pub struct BlendDetail {
    pub color: Vec3,
    pub weights: Vec<f32>,
    pub transmittance: f32,
}

/// Cached outputs of a forward render, reusable by the backward pass.
pub struct Forward {
    pub image: Image,
    pub fragments: FragmentBuffer,
    pub depth_map: DepthMap,
    pub world_splats: Vec<GaussianSplat>,
    pub screen: Vec<ScreenSplat>,
    pub bins: SplatBins,
    pub classes: Vec<SplatMeshClass>,
    pub drops: DropStats,
    pub options: RenderOptions,
    pub camera: Camera,
}

pub(crate) enum ContribRef<'a> {
    Mesh(&'a MeshFragment),
    Splat(u32),
}

/// Tile-gathered splat candidate, hot fields only.
struct Cand {
    mean2d: Vec2,
    conic: glam::Vec3, // xx, xy, yy of the inverse covariance
    opacity: f32,
    rgb: Vec3,
    depth: f32,
    class: SplatMeshClass,
    si: u32,
    /// Per-axis distance beyond which the weight provably falls below the
    /// skip threshold (marginal Mahalanobis bound), so culling on it cannot
    /// change the blend.
    reject: Vec2,
}

/// Walks merged blending sequences tile by tile. Candidates are gathered
/// once per tile and culled per row and per pixel on sound distance bounds;
/// surviving weights always take the exact test, so the contribution
/// sequence is identical to evaluating every binned splat directly.
pub(crate) struct TileWalker {
    cands: Vec<Cand>,
    row: Vec<u32>,
    scratch: Vec<(u16, u32, f32)>,
    skip: f32,
    ln_skip: f32,
}

impl TileWalker {
    pub(crate) fn new(opts: &RenderOptions) -> Self {
        Self {
            cands: Vec::new(),
            row: Vec::new(),
            scratch: Vec::new(),
            skip: opts.alpha_skip,
            // Conservative by one ulp: rejected candidates are strictly
            // below the skip threshold.
            ln_skip: if opts.alpha_skip > 0.0 {
                opts.alpha_skip.ln() - 1e-6
            } else {
                f32::NEG_INFINITY
            },
        }
    }

    pub(crate) fn begin_tile(
        &mut self,
        screen: &[ScreenSplat],
        classes: &[SplatMeshClass],
        tile_list: &[u32],
    ) {
        self.cands.clear();
        for &si in tile_list {
            let s = &screen[si as usize];
            // q > 2 (ln(opacity) - ln(skip)) already implies alpha < skip,
            // and the marginal bound q >= (d_x / σ_x)^2 turns that into a
            // per-axis distance. Opacity at or below the threshold can never
            // contribute at all.
            let reject = if self.skip > 0.0 {
                if s.opacity < self.skip {
                    continue;
                }
                let q_skip = 2.0 * (s.opacity.ln() - self.ln_skip);
                let scale = q_skip.max(0.0).sqrt() / crate::splat::SIGMA_CUTOFF;
                s.radius * scale
            } else {
                Vec2::splat(f32::INFINITY)
            };
            self.cands.push(Cand {
                mean2d: s.mean2d,
                conic: glam::Vec3::new(s.conic.col(0).x, s.conic.col(0).y, s.conic.col(1).y),
                opacity: s.opacity,
                rgb: s.rgb,
                depth: s.depth,
                class: classes[si as usize],
                si,
                reject,
            });
        }
    }

    pub(crate) fn begin_row(&mut self, y: u32) {
        let py = y as f32 + 0.5;
        self.row.clear();
        for (k, c) in self.cands.iter().enumerate() {
            if (py - c.mean2d.y).abs() <= c.reject.y {
                self.row.push(k as u32);
            }
        }
    }

    #[inline]
    fn eval(&self, c: &Cand, pixel: Vec2) -> Option<f32> {
        let d = pixel - c.mean2d;
        if d.x.abs() > c.reject.x {
            return None;
        }
        let power = -0.5 * (c.conic.x * d.x * d.x + c.conic.z * d.y * d.y) - c.conic.y * d.x * d.y;
        if power < self.ln_skip {
            return None;
        }
        let alpha = (c.opacity * power.min(0.0).exp()).min(crate::splat::ALPHA_CAP);
        (alpha >= self.skip).then_some(alpha)
    }

    /// Visits (alpha, color, source) in merged order until `visit` returns
    /// false.
    pub(crate) fn walk_pixel(
        &mut self,
        mesh_frags: &[MeshFragment],
        pixel: Vec2,
        opts: &RenderOptions,
        mut visit: impl FnMut(f32, Vec3, ContribRef) -> bool,
    ) {
        if mesh_frags.is_empty() {
            // No mesh here: every bucket is 0, so the bin order (ascending
            // splat depth) is already the blending order; an early exit
            // skips the remaining evaluations.
            for &k in &self.row {
                let c = &self.cands[k as usize];
                let Some(alpha) = self.eval(c, pixel) else {
                    continue;
                };
                if !visit(alpha, c.rgb, ContribRef::Splat(c.si)) {
                    return;
                }
            }
            return;
        }

        self.scratch.clear();
        for &k in &self.row {
            let c = &self.cands[k as usize];
            let Some(alpha) = self.eval(c, pixel) else {
                continue;
            };
            let bucket = splat_bucket(c.class, c.depth, mesh_frags, opts.lambda, opts.sort);
            self.scratch.push((bucket.min(u16::MAX as usize) as u16, k, alpha));
        }
        self.scratch.sort_by_key(|&(bucket, _, _)| bucket);

        let mut ptr = 0;
        for j in 0..=mesh_frags.len() {
            while ptr < self.scratch.len() && self.scratch[ptr].0 as usize == j {
                let (_, k, alpha) = self.scratch[ptr];
                ptr += 1;
                let c = &self.cands[k as usize];
                if !visit(alpha, c.rgb, ContribRef::Splat(c.si)) {
                    return;
                }
            }
            if j < mesh_frags.len() {
                let f = &mesh_frags[j];
                if !visit(f.alpha, f.color, ContribRef::Mesh(f)) {
                    return;
                }
            }
        }
    }
}

/// Renders a scene and keeps every intermediate stage for reuse.
pub fn render_forward(scene: &Scene, camera: &Camera, opts: &RenderOptions) -> Result<Forward> {
    camera.validate()?;
    scene.validate()?;

    let mesh_enabled = opts.mask != PrimitiveMask::SplatsOnly;
    let splats_enabled = opts.mask != PrimitiveMask::MeshOnly;

    let fragments = if mesh_enabled {
        rasterize_mesh(&scene.mesh, camera, opts.view_dir)
    } else {
        FragmentBuffer::empty(camera.width, camera.height)
    };
    let depth_map = fragments.front_depth();

    let world_splats = if splats_enabled {
        scene.world_splats().into_owned()
    } else {
        Vec::new()
    };
    let (screen, bins, drops) = rasterize_splats(&world_splats, camera);
    let classes: Vec<SplatMeshClass> = match opts.sort {
        SortMode::Stable => screen
            .par_iter()
            .map(|s| {
                classify_splat(
                    world_splats[s.id as usize].position,
                    s.depth,
                    &depth_map,
                    camera,
                )
            })
            .collect(),
        SortMode::Legacy => vec![SplatMeshClass::DirectCompare; screen.len()],
    };

    let width = camera.width;
    let height = camera.height;
    let mut image = Image::new(width, height, 3);
    let background = scene.background;
    let band_floats = (TILE_SIZE * width * 3) as usize;
    image
        .data
        .par_chunks_mut(band_floats)
        .enumerate()
        .for_each(|(ty, band)| {
            let y0 = ty as u32 * TILE_SIZE;
            let y1 = (y0 + TILE_SIZE).min(height);
            let mut walker = TileWalker::new(opts);
            for tx in 0..bins.tiles_x {
                walker.begin_tile(&screen, &classes, bins.tile(tx, ty as u32));
                let x0 = tx * TILE_SIZE;
                let x1 = (x0 + TILE_SIZE).min(width);
                for y in y0..y1 {
                    walker.begin_row(y);
                    for x in x0..x1 {
                        let pixel = Vec2::new(x as f32 + 0.5, y as f32 + 0.5);
                        let mesh_frags = fragments.fragments(x, y);
                        let mut color = Vec3::ZERO;
                        let mut t = 1.0f32;
                        walker.walk_pixel(mesh_frags, pixel, opts, |alpha, c, _| {
                            color += c * (alpha * t);
                            t *= 1.0 - alpha;
                            t >= TRANSMITTANCE_EPS
                        });
                        color += t * background;
                        let i = (((y - y0) * width + x) * 3) as usize;
                        band[i] = color.x;
                        band[i + 1] = color.y;
                        band[i + 2] = color.z;
                    }
                }
            }
        });

    Ok(Forward {
        image,
        fragments,
        depth_map,
        world_splats,
        screen,
        bins,
        classes,
        drops,
        options: *opts,
        camera: *camera,
    })
}

/// Full hybrid render: mesh A-buffer, splat bins, per-frame classification,
/// per-pixel merge and front-to-back blend.
pub fn render(scene: &Scene, camera: &Camera, opts: &RenderOptions) -> Result<Image> {
    Ok(render_forward(scene, camera, opts)?.image)
}
