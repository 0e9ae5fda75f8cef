//! A renderable unit: one textured mesh plus free or mesh-rigged splats.

use std::borrow::Cow;

use glam::Vec3;

use crate::error::{Error, Result};
use crate::mesh::TexturedMesh;
use crate::rig::{pose_all, RiggedSplat};
use crate::splat::GaussianSplat;

#[derive(Clone, Debug)]
pub enum Splats {
    Free(Vec<GaussianSplat>),
    Rigged(Vec<RiggedSplat>),
}

impl Splats {
    pub fn len(&self) -> usize {
        match self {
            Splats::Free(v) => v.len(),
            Splats::Rigged(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug)]
pub struct Scene {
    pub mesh: TexturedMesh,
    pub splats: Splats,
    pub background: Vec3,
}

impl Scene {
    pub fn new(mesh: TexturedMesh, splats: Splats, background: Vec3) -> Self {
        Self {
            mesh,
            splats,
            background,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.mesh.validate()?;
        if let Splats::Rigged(rigged) = &self.splats {
            for (i, r) in rigged.iter().enumerate() {
                if r.facet_id as usize >= self.mesh.facets.len() {
                    return Err(Error::InvalidParameter(format!(
                        "rigged splat {i} bound to facet {} of {}",
                        r.facet_id,
                        self.mesh.facets.len()
                    )));
                }
            }
        }
        Ok(())
    }

    /// World-space splats for rendering; rigged splats are posed against the
    /// current mesh vertices.
    pub fn world_splats(&self) -> Cow<'_, [GaussianSplat]> {
        match &self.splats {
            Splats::Free(v) => Cow::Borrowed(v),
            Splats::Rigged(r) => Cow::Owned(pose_all(&self.mesh.vertices, &self.mesh.facets, r)),
        }
    }

    /// Same scene with deformed vertex positions: facet frames are recomputed
    /// so rigged splats follow the motion; maps are untouched.
    pub fn pose(&self, deformed_vertices: &[Vec3]) -> Result<Scene> {
        if deformed_vertices.len() != self.mesh.vertices.len() {
            return Err(Error::SizeMismatch(format!(
                "deformed vertex count {} != {}",
                deformed_vertices.len(),
                self.mesh.vertices.len()
            )));
        }
        let mut out = self.clone();
        out.mesh.vertices = deformed_vertices.to_vec();
        Ok(out)
    }
}
