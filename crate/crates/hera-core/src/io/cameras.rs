use std::collections::HashSet;
use std::path::Path;

use glam::{Mat3, Vec3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{orthonormality_drift, Camera};

/// Named cameras of a capture setup.
#[derive(Clone, Debug)]
pub struct CameraSet {
    pub cameras: Vec<(String, Camera)>,
}

impl CameraSet {
    pub fn get(&self, name: &str) -> Option<&Camera> {
        self.cameras
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, c)| c)
    }
}

#[derive(Serialize, Deserialize)]
struct CameraSetFile {
    cameras: Vec<CameraRecord>,
}

#[derive(Serialize, Deserialize)]
struct CameraRecord {
    name: String,
    width: u32,
    height: u32,
    fx: f32,
    fy: f32,
    cx: f32,
    cy: f32,
    /// Row-major world-to-camera rotation.
    #[serde(rename = "R")]
    r: [f32; 9],
    t: [f32; 3],
}

/// Loads a camera set from JSON. Rotations with orthonormality drift below
/// 1e-3 are re-orthonormalized; worse ones (or reflections) are rejected.
pub fn load_cameras(path: &Path) -> Result<CameraSet> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_cameras(&text, path)
}

pub(crate) fn parse_cameras(text: &str, path: &Path) -> Result<CameraSet> {
    let file: CameraSetFile = serde_json::from_str(text)
        .map_err(|e| Error::parse(path, e.line(), e.to_string()))?;
    let mut names = HashSet::new();
    let mut cameras = Vec::with_capacity(file.cameras.len());
    for rec in file.cameras {
        if !names.insert(rec.name.clone()) {
            return Err(Error::DuplicateName { name: rec.name });
        }
        let rotation = Mat3::from_cols_array(&rec.r).transpose();
        let drift = orthonormality_drift(rotation);
        if drift >= 1e-3 || rotation.determinant() < 0.0 || !drift.is_finite() {
            return Err(Error::NonOrthonormalRotation {
                name: rec.name,
                drift,
            });
        }
        let rotation = reorthonormalize(rotation);
        let camera = Camera::new(
            rotation,
            Vec3::from_array(rec.t),
            rec.fx,
            rec.fy,
            rec.cx,
            rec.cy,
            rec.width,
            rec.height,
        )?;
        cameras.push((rec.name, camera));
    }
    Ok(CameraSet { cameras })
}

/// Gram-Schmidt over the rows of a world-to-camera rotation.
fn reorthonormalize(m: Mat3) -> Mat3 {
    let rows = m.transpose();
    let r0 = rows.x_axis.normalize();
    let r2 = r0.cross(rows.y_axis).cross(r0).normalize(); // r1 orthogonal to r0
    let r1 = r2;
    let r2 = r0.cross(r1);
    Mat3::from_cols(r0, r1, r2).transpose()
}

pub fn save_cameras(path: &Path, set: &CameraSet) -> Result<()> {
    let file = CameraSetFile {
        cameras: set
            .cameras
            .iter()
            .map(|(name, c)| CameraRecord {
                name: name.clone(),
                width: c.width,
                height: c.height,
                fx: c.fx,
                fy: c.fy,
                cx: c.cx,
                cy: c.cy,
                r: c.rotation.transpose().to_cols_array(),
                t: c.translation.to_array(),
            })
            .collect(),
    };
    let text = serde_json::to_string_pretty(&file).expect("camera set serializes");
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Cameras on a horizontal ring of radius `radius` around `target`, all
/// looking at it. Used by fixtures and the synthetic fit datasets.
pub fn ring_cameras(
    count: usize,
    radius: f32,
    target: Vec3,
    width: u32,
    height: u32,
    focal: f32,
) -> CameraSet {
    let mut cameras = Vec::with_capacity(count);
    for i in 0..count {
        let angle = i as f32 / count as f32 * std::f32::consts::TAU;
        let eye = target + radius * Vec3::new(angle.sin(), 0.0, -angle.cos());
        let forward = (target - eye).normalize();
        let right = forward.cross(Vec3::Y).normalize();
        let down = forward.cross(right);
        // Rows of the world-to-camera rotation are the camera axes.
        let rotation = Mat3::from_cols(right, down, forward).transpose();
        let translation = -(rotation * eye);
        let camera = Camera::new(
            rotation,
            translation,
            focal,
            focal,
            width as f32 / 2.0,
            height as f32 / 2.0,
            width,
            height,
        )
        .expect("ring camera is valid");
        cameras.push((format!("cam{i:03}"), camera));
    }
    CameraSet { cameras }
}
