//! Facet-local splat parameterization: splats bound to a triangle follow its
//! frame (rotation, center, mean edge length) when the mesh deforms.

use glam::{Mat3, Quat, Vec3};

use crate::error::{Error, Result};
use crate::geom::ShColor;
use crate::splat::GaussianSplat;

const DEGENERATE_AREA: f32 = 1e-12;

/// Orthonormal frame of a triangle: columns are the normalized first edge,
/// the unit normal, and their cross product; `center` is the vertex mean and
/// `edge_scale` the mean edge length.
#[derive(Clone, Copy, Debug)]
pub struct FacetFrame {
    pub rotation: Mat3,
    pub center: Vec3,
    pub edge_scale: f32,
}

/// Computes the local frame of facet `i` over the given vertex buffer.
pub fn facet_frame(vertices: &[Vec3], facets: &[[u32; 3]], i: usize) -> Result<FacetFrame> {
    let f = facets[i];
    let v0 = vertices[f[0] as usize];
    let v1 = vertices[f[1] as usize];
    let v2 = vertices[f[2] as usize];
    let e01 = v1 - v0;
    let e02 = v2 - v0;
    let cross = e01.cross(e02);
    if 0.5 * cross.length() <= DEGENERATE_AREA {
        return Err(Error::DegenerateFacet { facet: i as u32 });
    }
    let tangent = e01.normalize();
    let normal = cross.normalize();
    Ok(FacetFrame {
        rotation: Mat3::from_cols(tangent, normal, tangent.cross(normal)),
        center: (v0 + v1 + v2) / 3.0,
        edge_scale: (e01.length() + (v2 - v1).length() + e02.length()) / 3.0,
    })
}

/// Splat parameters expressed in a facet frame. Local positions and scales
/// are in units of the facet's mean edge length.
#[derive(Clone, Copy, Debug)]
pub struct RiggedSplat {
    pub facet_id: u32,
    pub position: Vec3,
    pub rotation: Quat,
    pub log_scale: Vec3,
    pub opacity: f32,
    pub color: ShColor,
}

/// Maps a rigged splat into world space through its facet frame.
pub fn pose_splat(rigged: &RiggedSplat, frame: &FacetFrame) -> GaussianSplat {
    let frame_quat = Quat::from_mat3(&frame.rotation);
    GaussianSplat {
        position: frame.rotation * (frame.edge_scale * rigged.position) + frame.center,
        rotation: frame_quat * rigged.rotation,
        log_scale: rigged.log_scale + Vec3::splat(frame.edge_scale.ln()),
        opacity: rigged.opacity,
        color: rigged.color,
    }
}

/// Inverse of [`pose_splat`]: expresses a world-space splat in a facet frame.
pub fn bind_splat(world: &GaussianSplat, frame: &FacetFrame, facet_id: u32) -> RiggedSplat {
    let frame_quat = Quat::from_mat3(&frame.rotation);
    RiggedSplat {
        facet_id,
        position: frame.rotation.transpose() * (world.position - frame.center)
            / frame.edge_scale,
        rotation: frame_quat.conjugate() * world.rotation,
        log_scale: world.log_scale - Vec3::splat(frame.edge_scale.ln()),
        opacity: world.opacity,
        color: world.color,
    }
}

/// Poses every rigged splat against the given vertex buffer. Splats on
/// facets that have collapsed are hidden for this pose (opacity -> 0)
/// instead of failing mid-sequence.
pub fn pose_all(
    vertices: &[Vec3],
    facets: &[[u32; 3]],
    rigged: &[RiggedSplat],
) -> Vec<GaussianSplat> {
    let mut frames: Vec<Option<FacetFrame>> = vec![None; facets.len()];
    let mut used: Vec<bool> = vec![false; facets.len()];
    for r in rigged {
        used[r.facet_id as usize] = true;
    }
    for (i, slot) in frames.iter_mut().enumerate() {
        if used[i] {
            *slot = facet_frame(vertices, facets, i).ok();
        }
    }
    rigged
        .iter()
        .map(|r| match &frames[r.facet_id as usize] {
            Some(frame) => pose_splat(r, frame),
            None => {
                let mut hidden = pose_splat(
                    r,
                    &FacetFrame {
                        rotation: Mat3::IDENTITY,
                        center: Vec3::ZERO,
                        edge_scale: 1.0,
                    },
                );
                hidden.opacity = f32::NEG_INFINITY;
                hidden
            }
        })
        .collect()
}
