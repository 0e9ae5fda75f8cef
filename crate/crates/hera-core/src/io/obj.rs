use std::fmt::Write as _;
use std::path::Path;

use glam::{Vec2, Vec3};

use crate::error::{Error, Result};

/// Mesh geometry as loaded from OBJ; texture and opacity maps attach
/// separately.
#[derive(Clone, Debug, PartialEq)]
pub struct MeshSkeleton {
    pub vertices: Vec<Vec3>,
    pub facets: Vec<[u32; 3]>,
    pub uv: Vec<[Vec2; 3]>,
}

/// Loads a triangulated mesh from a Wavefront OBJ restricted to `v`, `vt`
/// and `f v/vt` records. Polygons are fan-triangulated; indices are 1-based
/// in the file. Faces without texture coordinates are an error.
pub fn load_obj(path: &Path) -> Result<MeshSkeleton> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_obj(&text, path)
}

pub(crate) fn parse_obj(text: &str, path: &Path) -> Result<MeshSkeleton> {
    let mut vertices: Vec<Vec3> = Vec::new();
    let mut texcoords: Vec<Vec2> = Vec::new();
    let mut facets: Vec<[u32; 3]> = Vec::new();
    let mut uv: Vec<[Vec2; 3]> = Vec::new();

    for (line_no, raw) in text.lines().enumerate() {
        let line_no = line_no + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split_ascii_whitespace();
        let keyword = fields.next().unwrap();
        match keyword {
            "v" => {
                let mut p = [0.0f32; 3];
                for c in &mut p {
                    let tok = fields
                        .next()
                        .ok_or_else(|| Error::parse(path, line_no, "vertex needs 3 coordinates"))?;
                    *c = tok.parse().map_err(|_| {
                        Error::parse(path, line_no, format!("bad vertex coordinate {tok:?}"))
                    })?;
                }
                vertices.push(Vec3::from_array(p));
            }
            "vt" => {
                let mut p = [0.0f32; 2];
                for c in &mut p {
                    let tok = fields.next().ok_or_else(|| {
                        Error::parse(path, line_no, "texture coordinate needs 2 components")
                    })?;
                    *c = tok.parse().map_err(|_| {
                        Error::parse(path, line_no, format!("bad texture coordinate {tok:?}"))
                    })?;
                }
                texcoords.push(Vec2::from_array(p));
            }
            "f" => {
                let corners: Vec<(u32, u32)> = fields
                    .map(|tok| parse_face_corner(tok, path, line_no, &vertices, &texcoords))
                    .collect::<Result<_>>()?;
                if corners.len() < 3 {
                    return Err(Error::parse(path, line_no, "face needs at least 3 corners"));
                }
                for k in 1..corners.len() - 1 {
                    facets.push([corners[0].0, corners[k].0, corners[k + 1].0]);
                    uv.push([
                        texcoords[corners[0].1 as usize],
                        texcoords[corners[k].1 as usize],
                        texcoords[corners[k + 1].1 as usize],
                    ]);
                }
            }
            // Normals, groups, materials and smoothing are irrelevant here.
            "vn" | "vp" | "o" | "g" | "s" | "mtllib" | "usemtl" | "l" | "p" => {}
            other => {
                return Err(Error::parse(
                    path,
                    line_no,
                    format!("unsupported record {other:?}"),
                ));
            }
        }
    }
    Ok(MeshSkeleton {
        vertices,
        facets,
        uv,
    })
}

fn parse_face_corner(
    tok: &str,
    path: &Path,
    line_no: usize,
    vertices: &[Vec3],
    texcoords: &[Vec2],
) -> Result<(u32, u32)> {
    let mut parts = tok.split('/');
    let v = parts.next().unwrap_or("");
    let vt = parts.next().unwrap_or("");
    if vt.is_empty() {
        return Err(Error::MissingUvs {
            path: path.display().to_string(),
        });
    }
    let parse_index = |s: &str, len: usize, what: &str| -> Result<u32> {
        let idx: i64 = s
            .parse()
            .map_err(|_| Error::parse(path, line_no, format!("bad {what} index {s:?}")))?;
        if idx < 1 || idx as usize > len {
            return Err(Error::parse(
                path,
                line_no,
                format!("{what} index {idx} out of range 1..={len}"),
            ));
        }
        Ok((idx - 1) as u32)
    };
    Ok((
        parse_index(v, vertices.len(), "vertex")?,
        parse_index(vt, texcoords.len(), "texture")?,
    ))
}

/// Writes the mesh as OBJ with one `vt` per facet corner. Floats use the
/// shortest representation that round-trips.
pub fn save_obj(path: &Path, mesh: &MeshSkeleton) -> Result<()> {
    let mut out = String::new();
    for v in &mesh.vertices {
        writeln!(out, "v {} {} {}", v.x, v.y, v.z).unwrap();
    }
    for uvs in &mesh.uv {
        for t in uvs {
            writeln!(out, "vt {} {}", t.x, t.y).unwrap();
        }
    }
    for (i, f) in mesh.facets.iter().enumerate() {
        let base = 3 * i as u32;
        writeln!(
            out,
            "f {}/{} {}/{} {}/{}",
            f[0] + 1,
            base + 1,
            f[1] + 1,
            base + 2,
            f[2] + 1,
            base + 3
        )
        .unwrap();
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
