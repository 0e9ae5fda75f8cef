//! Reverse-mode derivatives of the hybrid render with respect to texture
//! texels, opacity texels and splat parameters. Merge order, classification
//! and the binning/skip gates are treated as piecewise constant.
//!
//! Two phases: a pixel pass accumulates per-splat screen-space gradients
//! (2D mean, conic, activated opacity, color) and per-texel map gradients;
//! a per-splat pass then chains screen quantities through the projection
//! Jacobian, the covariance factorization and the SH view direction to the
//! world parameters. Tiles run in parallel and are folded in a fixed order,
//! so results are identical for any thread count.

use std::collections::HashMap;

use glam::{Mat2, Mat3, Quat, Vec2, Vec3, Vec4};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geom::{eval_sh_backward, eval_sh_raw, Camera, Image, SH_MAX_COEFFS};
use crate::hybrid::{ContribRef, Forward, TileWalker, TRANSMITTANCE_EPS};
use crate::mesh::{bilinear_taps, MeshFragment, OpacityMode, ViewDirMode};
use crate::rig::{facet_frame, RiggedSplat};
use crate::scene::Scene;
use crate::splat::{ALPHA_CAP, TILE_SIZE};

/// Per-splat parameter gradients, in the parameter space of the scene's
/// splats (world for free splats; pull back with [`pullback_rigged_grads`]
/// for rigged ones).
#[derive(Clone, Debug)]
pub struct SplatGrads {
    pub position: Vec<Vec3>,
    /// With respect to the raw (unnormalized) quaternion, xyzw order.
    pub rotation: Vec<Vec4>,
    pub log_scale: Vec<Vec3>,
    pub opacity: Vec<f32>,
    pub color: Vec<[[f32; 3]; SH_MAX_COEFFS]>,
    /// Norm of the summed screen-space positional gradient this pass
    /// (densification statistic).
    pub mean2d_norm: Vec<f32>,
    pub visible: Vec<bool>,
}

impl SplatGrads {
    fn zeros(n: usize) -> Self {
        Self {
            position: vec![Vec3::ZERO; n],
            rotation: vec![Vec4::ZERO; n],
            log_scale: vec![Vec3::ZERO; n],
            opacity: vec![0.0; n],
            color: vec![[[0.0; 3]; SH_MAX_COEFFS]; n],
            mean2d_norm: vec![0.0; n],
            visible: vec![false; n],
        }
    }
}

#[derive(Clone, Debug)]
pub struct Gradients {
    /// Same layout as the texture map's plane-major data.
    pub texture: Vec<f32>,
    /// Same layout as the opacity map (gradients with respect to the raw
    /// texel values, i.e. logits in logit mode).
    pub opacity: Vec<f32>,
    pub splats: SplatGrads,
}

#[derive(Clone, Copy)]
struct TexelAcc {
    sh: [f32; 3 * SH_MAX_COEFFS],
    alpha: f32,
}

impl Default for TexelAcc {
    fn default() -> Self {
        Self {
            sh: [0.0; 3 * SH_MAX_COEFFS],
            alpha: 0.0,
        }
    }
}

#[derive(Clone, Copy)]
struct ScreenAcc {
    rgb: Vec3,
    mean2d: Vec2,
    conic: Mat2,
    opacity: f32,
}

impl Default for ScreenAcc {
    fn default() -> Self {
        Self {
            rgb: Vec3::ZERO,
            mean2d: Vec2::ZERO,
            conic: Mat2::ZERO, // Mat2's derived Default is the identity
            opacity: 0.0,
        }
    }
}

struct BandAcc {
    tex: HashMap<u32, TexelAcc>,
    splat: HashMap<u32, ScreenAcc>,
}

enum EntryKind {
    Mesh(MeshFragment),
    Splat(u32),
}

struct Entry {
    alpha: f32,
    color: Vec3,
    t_at: f32,
    kind: EntryKind,
}

/// Exact adjoint of the forward render held in `fwd` for the loss gradient
/// image `d_image` (dL/dpixel, RGB).
pub fn backward_render(
    scene: &Scene,
    camera: &Camera,
    fwd: &Forward,
    d_image: &Image,
) -> Result<Gradients> {
    if fwd.camera.width != camera.width
        || fwd.camera.height != camera.height
        || fwd.camera.rotation != camera.rotation
        || fwd.camera.translation != camera.translation
        || (fwd.camera.fx, fwd.camera.fy) != (camera.fx, camera.fy)
    {
        return Err(Error::MissingForwardState(
            "forward pass was rendered with a different camera".into(),
        ));
    }
    if (d_image.width, d_image.height) != (camera.width, camera.height) || d_image.channels != 3 {
        return Err(Error::SizeMismatch(format!(
            "gradient image {}x{}x{} vs render {}x{}",
            d_image.width, d_image.height, d_image.channels, camera.width, camera.height
        )));
    }
    if fwd.options.mask != crate::hybrid::PrimitiveMask::MeshOnly
        && fwd.world_splats.len() != scene.splats.len()
    {
        return Err(Error::MissingForwardState(
            "forward pass was rendered with a different splat set".into(),
        ));
    }

    let opts = fwd.options;
    let mesh = &scene.mesh;
    let axis_dir = camera.rotation.transpose() * Vec3::Z;
    let height = camera.height;
    let width = camera.width;
    let tile_rows = height.div_ceil(TILE_SIZE);

    let bands: Vec<BandAcc> = (0..tile_rows)
        .into_par_iter()
        .map(|ty| {
            let mut acc = BandAcc {
                tex: HashMap::new(),
                splat: HashMap::new(),
            };
            let y0 = ty * TILE_SIZE;
            let y1 = (y0 + TILE_SIZE).min(height);
            let mut walker = TileWalker::new(&opts);
            let mut entries: Vec<Entry> = Vec::new();
            for tx in 0..fwd.bins.tiles_x {
                walker.begin_tile(&fwd.screen, &fwd.classes, fwd.bins.tile(tx, ty));
                let x0 = tx * TILE_SIZE;
                let x1 = (x0 + TILE_SIZE).min(width);
                for y in y0..y1 {
                    walker.begin_row(y);
                    for x in x0..x1 {
                        let dc = d_image.rgb(x, y);
                        if dc == Vec3::ZERO {
                            continue;
                        }
                        let pixel = Vec2::new(x as f32 + 0.5, y as f32 + 0.5);
                        let mesh_frags = fwd.fragments.fragments(x, y);

                        entries.clear();
                        let mut t = 1.0f32;
                        walker.walk_pixel(mesh_frags, pixel, &opts, |alpha, color, src| {
                            entries.push(Entry {
                                alpha,
                                color,
                                t_at: t,
                                kind: match src {
                                    ContribRef::Mesh(f) => EntryKind::Mesh(*f),
                                    ContribRef::Splat(si) => EntryKind::Splat(si),
                                },
                            });
                            t *= 1.0 - alpha;
                            t >= TRANSMITTANCE_EPS
                        });

                        let mut suffix = scene.background * t;
                        for e in entries.iter().rev() {
                            let w = e.alpha * e.t_at;
                            let d_color = dc * w;
                            let rest = if e.alpha < 1.0 {
                                suffix / (1.0 - e.alpha)
                            } else {
                                Vec3::ZERO
                            };
                            let d_alpha = dc.dot(e.t_at * e.color - rest);
                            suffix += e.color * w;
                            match &e.kind {
                                EntryKind::Mesh(frag) => {
                                    let dir = match opts.view_dir {
                                        ViewDirMode::CameraRay => camera.pixel_ray_world(pixel),
                                        ViewDirMode::CameraAxis => axis_dir,
                                    };
                                    accumulate_mesh_grads(
                                        mesh, frag, dir, d_color, d_alpha, &mut acc.tex,
                                    );
                                }
                                EntryKind::Splat(si) => {
                                    let s = &fwd.screen[*si as usize];
                                    let entry = acc.splat.entry(*si).or_default();
                                    entry.rgb += d_color;
                                    if e.alpha < ALPHA_CAP {
                                        let d = pixel - s.mean2d;
                                        let power = -0.5
                                            * (s.conic.col(0).x * d.x * d.x
                                                + s.conic.col(1).y * d.y * d.y)
                                            - s.conic.col(0).y * d.x * d.y;
                                        if power < 0.0 {
                                            let g = power.exp();
                                            entry.opacity += d_alpha * g;
                                            let qd = s.conic * d;
                                            entry.mean2d += d_alpha * e.alpha * qd;
                                            let outer = Mat2::from_cols(
                                                Vec2::new(d.x * d.x, d.x * d.y),
                                                Vec2::new(d.x * d.y, d.y * d.y),
                                            );
                                            entry.conic += outer * (-0.5 * d_alpha * e.alpha);
                                        } else {
                                            entry.opacity += d_alpha;
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
            acc
        })
        .collect();

    // Deterministic fold: every key targets its own slot, bands in order.
    let mut texture = vec![0.0f32; mesh.texture.data.len()];
    let mut opacity = vec![0.0f32; mesh.opacity.data.len()];
    let n_texels = (mesh.texture.width * mesh.texture.height) as usize;
    let n_coeffs = 3 * (mesh.texture.degree as usize + 1) * (mesh.texture.degree as usize + 1);
    let mut screen_acc: HashMap<u32, ScreenAcc> = HashMap::new();
    for band in bands {
        for (texel, acc) in band.tex {
            for pc in 0..n_coeffs {
                texture[pc * n_texels + texel as usize] += acc.sh[pc];
            }
            opacity[texel as usize] += acc.alpha;
        }
        for (si, acc) in band.splat {
            let entry = screen_acc.entry(si).or_default();
            entry.rgb += acc.rgb;
            entry.mean2d += acc.mean2d;
            entry.conic += acc.conic;
            entry.opacity += acc.opacity;
        }
    }

    // Shapes mirror the scene's parameters; splats absent from the forward
    // (mask or culling) keep zero gradients.
    let mut splats = SplatGrads::zeros(scene.splats.len());
    let cam_center = camera.center();
    let chained: Vec<(u32, SplatChain)> = screen_acc
        .par_iter()
        .map(|(&si, acc)| {
            let s = &fwd.screen[si as usize];
            (
                s.id,
                chain_splat(&fwd.world_splats[s.id as usize], camera, cam_center, s, acc),
            )
        })
        .collect();
    for (id, chain) in chained {
        let i = id as usize;
        splats.position[i] = chain.position;
        splats.rotation[i] = chain.rotation;
        splats.log_scale[i] = chain.log_scale;
        splats.opacity[i] = chain.opacity;
        splats.color[i] = chain.color;
        splats.mean2d_norm[i] = chain.mean2d_norm;
        splats.visible[i] = true;
    }

    Ok(Gradients {
        texture,
        opacity,
        splats,
    })
}

fn accumulate_mesh_grads(
    mesh: &crate::mesh::TexturedMesh,
    frag: &MeshFragment,
    dir: Vec3,
    d_color: Vec3,
    d_alpha: f32,
    tex: &mut HashMap<u32, TexelAcc>,
) {
    let sample = mesh.texture.sample(frag.uv);
    let raw = eval_sh_raw(&sample, dir);
    let (d_coeffs, _) = eval_sh_backward(&sample, dir, raw, d_color);
    let d_alpha_raw = match mesh.opacity.mode {
        OpacityMode::Logit => d_alpha * frag.alpha * (1.0 - frag.alpha),
        OpacityMode::Clamp => {
            let raw_a = mesh.opacity.sample_raw(frag.uv);
            if raw_a > 0.0 && raw_a < 1.0 {
                d_alpha
            } else {
                0.0
            }
        }
    };
    let n_coeffs = sample.num_coeffs();
    for (texel, w) in bilinear_taps(mesh.texture.width, mesh.texture.height, frag.uv) {
        if w == 0.0 {
            continue;
        }
        let entry = tex.entry(texel as u32).or_default();
        for c in 0..n_coeffs {
            for ch in 0..3 {
                entry.sh[3 * c + ch] += w * d_coeffs[c][ch];
            }
        }
        entry.alpha += w * d_alpha_raw;
    }
}

struct SplatChain {
    position: Vec3,
    rotation: Vec4,
    log_scale: Vec3,
    opacity: f32,
    color: [[f32; 3]; SH_MAX_COEFFS],
    mean2d_norm: f32,
}

fn outer3(a: Vec3, b: Vec3) -> Mat3 {
    Mat3::from_cols(a * b.x, a * b.y, a * b.z)
}

/// Chains accumulated screen-space gradients to the splat's world
/// parameters.
fn chain_splat(
    splat: &crate::splat::GaussianSplat,
    camera: &Camera,
    cam_center: Vec3,
    s: &crate::splat::ScreenSplat,
    acc: &ScreenAcc,
) -> SplatChain {
    let t_cam = camera.to_camera(splat.position);
    let (j0, j1) = camera.projection_jacobian(t_cam);
    let w_mat = camera.rotation;

    // Forward pieces needed by the chain.
    let q_norm = splat.rotation.normalize();
    let r = Mat3::from_quat(q_norm);
    let s_act = splat.log_scale.exp();
    let m = Mat3::from_cols(r.x_axis * s_act.x, r.y_axis * s_act.y, r.z_axis * s_act.z);
    let cov3 = m * m.transpose();
    let v = w_mat * cov3 * w_mat.transpose();

    // conic = cov2d^-1, so dL/dcov2d = -Q G Q.
    let g_cov2d = -(s.conic * acc.conic * s.conic);
    let (gxx, gyx) = (g_cov2d.col(0).x, g_cov2d.col(0).y);
    let (gxy, gyy) = (g_cov2d.col(1).x, g_cov2d.col(1).y);

    // cov2d = J V J^T (+ constant floor).
    let g_v = outer3(j0, j0) * gxx
        + outer3(j0, j1) * gxy
        + outer3(j1, j0) * gyx
        + outer3(j1, j1) * gyy;
    let gs00 = gxx + gxx;
    let gs01 = gxy + gyx;
    let gs11 = gyy + gyy;
    let gj0 = v * (j0 * gs00 + j1 * gs01);
    let gj1 = v * (j0 * gs01 + j1 * gs11);

    // V = W Σ W^T, Σ = M M^T, M = R diag(s).
    let g_cov3 = w_mat.transpose() * g_v * w_mat;
    let g_m = (g_cov3 + g_cov3.transpose()) * m;
    let g_r = Mat3::from_cols(g_m.x_axis * s_act.x, g_m.y_axis * s_act.y, g_m.z_axis * s_act.z);
    let g_s = Vec3::new(
        r.x_axis.dot(g_m.x_axis),
        r.y_axis.dot(g_m.y_axis),
        r.z_axis.dot(g_m.z_axis),
    );
    let g_log_scale = g_s * s_act;

    // Rotation matrix back to the unit quaternion.
    let g = |i: usize, j: usize| g_r.col(j)[i];
    let (qx, qy, qz, qw) = (q_norm.x, q_norm.y, q_norm.z, q_norm.w);
    let g_qw = 2.0
        * (-qz * g(0, 1) + qy * g(0, 2) + qz * g(1, 0) - qx * g(1, 2) - qy * g(2, 0)
            + qx * g(2, 1));
    let g_qx = 2.0
        * (qy * g(0, 1) + qz * g(0, 2) + qy * g(1, 0) - 2.0 * qx * g(1, 1) - qw * g(1, 2)
            + qz * g(2, 0)
            + qw * g(2, 1)
            - 2.0 * qx * g(2, 2));
    let g_qy = 2.0
        * (-2.0 * qy * g(0, 0) + qx * g(0, 1) + qw * g(0, 2) + qx * g(1, 0) + qz * g(1, 2)
            - qw * g(2, 0)
            + qz * g(2, 1)
            - 2.0 * qy * g(2, 2));
    let g_qz = 2.0
        * (-2.0 * qz * g(0, 0) - qw * g(0, 1) + qx * g(0, 2) + qw * g(1, 0)
            - 2.0 * qz * g(1, 1)
            + qy * g(1, 2)
            + qx * g(2, 0)
            + qy * g(2, 1));
    // Through the normalization q̂ = q / |q|.
    let g_hat = Vec4::new(g_qx, g_qy, g_qz, g_qw);
    let q_hat = Vec4::new(qx, qy, qz, qw);
    let norm = splat.rotation.length();
    let g_rotation = (g_hat - q_hat * q_hat.dot(g_hat)) / norm;

    // Position: projection of the mean, the Jacobian's own dependence on the
    // camera-space point, and the SH view direction.
    let inv_z = 1.0 / t_cam.z;
    let inv_z2 = inv_z * inv_z;
    let inv_z3 = inv_z2 * inv_z;
    let mut g_t = j0 * acc.mean2d.x + j1 * acc.mean2d.y;
    g_t.x += gj0.z * (-camera.fx * inv_z2);
    g_t.y += gj1.z * (-camera.fy * inv_z2);
    g_t.z += gj0.x * (-camera.fx * inv_z2)
        + gj0.z * (2.0 * camera.fx * t_cam.x * inv_z3)
        + gj1.y * (-camera.fy * inv_z2)
        + gj1.z * (2.0 * camera.fy * t_cam.y * inv_z3);
    let mut g_position = w_mat.transpose() * g_t;

    let view = splat.position - cam_center;
    let view_len = view.length();
    let dir = view / view_len;
    let (d_coeffs, d_dir) = eval_sh_backward(&splat.color, dir, s.rgb_raw, acc.rgb);
    g_position += (d_dir - dir * dir.dot(d_dir)) / view_len;

    let act = s.opacity;
    SplatChain {
        position: g_position,
        rotation: g_rotation,
        log_scale: g_log_scale,
        opacity: acc.opacity * act * (1.0 - act),
        color: d_coeffs,
        mean2d_norm: acc.mean2d.length(),
    }
}

/// Rewrites world-space splat gradients into facet-local parameter space for
/// a rigged scene (the exact adjoint of posing).
pub fn pullback_rigged_grads(
    grads: &mut Gradients,
    rigged: &[RiggedSplat],
    vertices: &[Vec3],
    facets: &[[u32; 3]],
) {
    for (i, r) in rigged.iter().enumerate() {
        let Ok(frame) = facet_frame(vertices, facets, r.facet_id as usize) else {
            // Hidden splat this pose: no gradient flows.
            grads.splats.position[i] = Vec3::ZERO;
            grads.splats.rotation[i] = Vec4::ZERO;
            grads.splats.log_scale[i] = Vec3::ZERO;
            grads.splats.opacity[i] = 0.0;
            grads.splats.color[i] = [[0.0; 3]; SH_MAX_COEFFS];
            continue;
        };
        let g_world = grads.splats.position[i];
        grads.splats.position[i] = frame.edge_scale * (frame.rotation.transpose() * g_world);
        // World quat = q_f ⊗ q_local; left multiplication by a unit
        // quaternion is orthogonal, so the adjoint is left multiplication by
        // its conjugate.
        let gq = grads.splats.rotation[i];
        let frame_quat = Quat::from_mat3(&frame.rotation);
        let pulled = frame_quat.conjugate() * Quat::from_xyzw(gq.x, gq.y, gq.z, gq.w);
        grads.splats.rotation[i] = Vec4::new(pulled.x, pulled.y, pulled.z, pulled.w);
        // log-scale, opacity and color pass through unchanged.
    }
}
