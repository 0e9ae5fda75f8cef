use std::path::Path;

use glam::Vec3;

use crate::error::{Error, Result};
use crate::mesh::TexturedMesh;
use crate::rig::RiggedSplat;
use crate::scene::{Scene, Splats};
use crate::splat::GaussianSplat;

use super::{
    load_obj, load_opacity_map, load_rig, load_splats, load_texture_map, save_obj,
    save_opacity_map, save_rig, save_splats, save_texture_map, MeshSkeleton,
};

/// Loads a scene bundle directory: `mesh.obj` + `texture.heramap` +
/// `opacity.heramap` (all optional together), `splats.ply` (optional) and
/// `rig.bin` (optional, makes the PLY fields facet-local).
pub fn load_scene(dir: &Path, background: Vec3) -> Result<Scene> {
    if !dir.is_dir() {
        return Err(Error::io(
            dir,
            std::io::Error::new(std::io::ErrorKind::NotFound, "scene directory not found"),
        ));
    }
    let mesh_path = dir.join("mesh.obj");
    if !mesh_path.exists() && !dir.join("splats.ply").exists() {
        return Err(Error::parse(
            dir,
            0,
            "not a scene bundle (no mesh.obj or splats.ply)",
        ));
    }
    let mesh = if mesh_path.exists() {
        let skeleton = load_obj(&mesh_path)?;
        let texture = load_texture_map(&dir.join("texture.heramap"))?;
        let opacity = load_opacity_map(&dir.join("opacity.heramap"))?;
        TexturedMesh {
            vertices: skeleton.vertices,
            facets: skeleton.facets,
            uv: skeleton.uv,
            texture,
            opacity,
        }
    } else {
        TexturedMesh::empty()
    };

    let splats_path = dir.join("splats.ply");
    let splats = if splats_path.exists() {
        let load = load_splats(&splats_path)?;
        let rig_path = dir.join("rig.bin");
        if rig_path.exists() {
            let facet_ids = load_rig(&rig_path)?;
            if facet_ids.len() != load.splats.len() {
                return Err(Error::SizeMismatch(format!(
                    "rig table has {} entries for {} splats",
                    facet_ids.len(),
                    load.splats.len()
                )));
            }
            Splats::Rigged(
                load.splats
                    .into_iter()
                    .zip(facet_ids)
                    .map(|(s, facet_id)| RiggedSplat {
                        facet_id,
                        position: s.position,
                        rotation: s.rotation,
                        log_scale: s.log_scale,
                        opacity: s.opacity,
                        color: s.color,
                    })
                    .collect(),
            )
        } else {
            Splats::Free(load.splats)
        }
    } else {
        Splats::Free(Vec::new())
    };

    let scene = Scene::new(mesh, splats, background);
    scene.validate()?;
    Ok(scene)
}

/// Saves a scene as a bundle directory (see [`load_scene`] for the layout).
pub fn save_scene(dir: &Path, scene: &Scene) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    if !scene.mesh.facets.is_empty() {
        save_obj(
            &dir.join("mesh.obj"),
            &MeshSkeleton {
                vertices: scene.mesh.vertices.clone(),
                facets: scene.mesh.facets.clone(),
                uv: scene.mesh.uv.clone(),
            },
        )?;
        save_texture_map(&dir.join("texture.heramap"), &scene.mesh.texture)?;
        save_opacity_map(&dir.join("opacity.heramap"), &scene.mesh.opacity)?;
    }
    match &scene.splats {
        Splats::Free(splats) => {
            save_splats(&dir.join("splats.ply"), splats)?;
        }
        Splats::Rigged(rigged) => {
            let as_splats: Vec<GaussianSplat> = rigged
                .iter()
                .map(|r| GaussianSplat {
                    position: r.position,
                    rotation: r.rotation,
                    log_scale: r.log_scale,
                    opacity: r.opacity,
                    color: r.color,
                })
                .collect();
            save_splats(&dir.join("splats.ply"), &as_splats)?;
            let ids: Vec<u32> = rigged.iter().map(|r| r.facet_id).collect();
            save_rig(&dir.join("rig.bin"), &ids)?;
        }
    }
    Ok(())
}
