use std::io::Write;
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use glam::{Quat, Vec3};

use crate::error::{Error, Result};
use crate::geom::ShColor;
use crate::splat::GaussianSplat;

/// Number of `f_rest` fields in the full degree-3 layout: 15 per channel.
const FULL_REST: usize = 45;
const REST_PER_CHANNEL: usize = 15;

#[derive(Clone, Debug)]
pub struct PlyLoad {
    pub splats: Vec<GaussianSplat>,
    /// Properties present in the file but not part of the splat layout.
    pub unknown_properties: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum ScalarType {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl ScalarType {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "char" | "int8" => Self::I8,
            "uchar" | "uint8" => Self::U8,
            "short" | "int16" => Self::I16,
            "ushort" | "uint16" => Self::U16,
            "int" | "int32" => Self::I32,
            "uint" | "uint32" => Self::U32,
            "float" | "float32" => Self::F32,
            "double" | "float64" => Self::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Self::I8 | Self::U8 => 1,
            Self::I16 | Self::U16 => 2,
            Self::I32 | Self::U32 | Self::F32 => 4,
            Self::F64 => 8,
        }
    }
}

/// Destination of one vertex property in the splat record.
#[derive(Clone, Copy, Debug)]
enum Field {
    Position(usize),
    Dc(usize),
    Rest(usize),
    Opacity,
    Scale(usize),
    Rot(usize),
    Skip,
}

fn classify_property(name: &str) -> Field {
    match name {
        "x" => Field::Position(0),
        "y" => Field::Position(1),
        "z" => Field::Position(2),
        "opacity" => Field::Opacity,
        _ => {
            if let Some(i) = name.strip_prefix("f_dc_").and_then(|s| s.parse::<usize>().ok()) {
                if i < 3 {
                    return Field::Dc(i);
                }
            }
            if let Some(i) = name
                .strip_prefix("f_rest_")
                .and_then(|s| s.parse::<usize>().ok())
            {
                if i < FULL_REST {
                    return Field::Rest(i);
                }
            }
            if let Some(i) = name.strip_prefix("scale_").and_then(|s| s.parse::<usize>().ok()) {
                if i < 3 {
                    return Field::Scale(i);
                }
            }
            if let Some(i) = name.strip_prefix("rot_").and_then(|s| s.parse::<usize>().ok()) {
                if i < 4 {
                    return Field::Rot(i);
                }
            }
            Field::Skip
        }
    }
}

/// Loads splats from a binary little-endian PLY using the common community
/// field layout. Files with fewer `f_rest` fields load zero-padded to degree
/// 3; unknown properties are skipped and counted.
pub fn load_splats(path: &Path) -> Result<PlyLoad> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_splats(&bytes, path)
}

pub(crate) fn parse_splats(bytes: &[u8], path: &Path) -> Result<PlyLoad> {
    let (header_len, header) = split_header(bytes, path)?;
    let mut lines = header.lines().enumerate();
    match lines.next() {
        Some((_, "ply")) => {}
        _ => return Err(Error::parse(path, 1, "not a PLY file")),
    }

    let mut vertex_count: Option<usize> = None;
    let mut in_vertex_element = false;
    let mut saw_format = false;
    let mut fields: Vec<(Field, ScalarType)> = Vec::new();
    let mut unknown = 0u32;
    let mut rest_count = 0usize;

    for (line_no, raw) in lines {
        let line_no = line_no + 1;
        let line = raw.trim_end_matches('\r');
        let mut toks = line.split_ascii_whitespace();
        match toks.next() {
            Some("comment") | Some("obj_info") | None => {}
            Some("format") => {
                saw_format = true;
                match toks.next() {
                    Some("binary_little_endian") => {}
                    Some("ascii") => {
                        return Err(Error::UnsupportedAscii {
                            path: path.display().to_string(),
                        })
                    }
                    other => {
                        return Err(Error::parse(
                            path,
                            line_no,
                            format!("unsupported format {other:?}"),
                        ))
                    }
                }
            }
            Some("element") => {
                let name = toks.next().unwrap_or("");
                let count: usize = toks
                    .next()
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| Error::parse(path, line_no, "bad element count"))?;
                if name == "vertex" {
                    if vertex_count.is_some() {
                        return Err(Error::parse(path, line_no, "duplicate vertex element"));
                    }
                    vertex_count = Some(count);
                    in_vertex_element = true;
                } else {
                    if vertex_count.is_none() && count > 0 {
                        return Err(Error::parse(
                            path,
                            line_no,
                            format!("element {name:?} precedes vertex data"),
                        ));
                    }
                    in_vertex_element = false;
                }
            }
            Some("property") => {
                if !in_vertex_element {
                    continue;
                }
                let ty_tok = toks.next().unwrap_or("");
                if ty_tok == "list" {
                    return Err(Error::parse(
                        path,
                        line_no,
                        "list properties are not supported on vertex elements",
                    ));
                }
                let ty = ScalarType::parse(ty_tok).ok_or_else(|| {
                    Error::parse(path, line_no, format!("unknown property type {ty_tok:?}"))
                })?;
                let name = toks
                    .next()
                    .ok_or_else(|| Error::parse(path, line_no, "property without a name"))?;
                let field = classify_property(name);
                match field {
                    Field::Skip => unknown += 1,
                    Field::Rest(_) => rest_count += 1,
                    _ => {}
                }
                if !matches!(field, Field::Skip) && ty != ScalarType::F32 {
                    return Err(Error::parse(
                        path,
                        line_no,
                        format!("property {name:?} must be float"),
                    ));
                }
                fields.push((field, ty));
            }
            Some(other) => {
                return Err(Error::parse(
                    path,
                    line_no,
                    format!("unexpected header keyword {other:?}"),
                ));
            }
        }
    }
    if !saw_format {
        return Err(Error::parse(path, 1, "missing format line"));
    }
    let count = vertex_count.ok_or_else(|| Error::parse(path, 1, "missing vertex element"))?;
    if rest_count % 3 != 0 {
        return Err(Error::parse(
            path,
            1,
            format!("f_rest count {rest_count} is not divisible by 3"),
        ));
    }
    let rest_per_channel = rest_count / 3;

    let stride: usize = fields.iter().map(|(_, t)| t.size()).sum();
    if stride == 0 && count > 0 {
        return Err(Error::parse(path, 1, "vertex element has no properties"));
    }
    let payload = &bytes[header_len..];
    if payload.len() / stride.max(1) < count {
        return Err(Error::parse(
            path,
            payload.len() / stride.max(1),
            format!(
                "file truncated at record {} of {count}",
                payload.len() / stride.max(1)
            ),
        ));
    }

    let mut splats = Vec::with_capacity(count);
    let mut cursor = std::io::Cursor::new(payload);
    for _ in 0..count {
        let mut position = [0.0f32; 3];
        let mut dc = [0.0f32; 3];
        let mut rest = [0.0f32; FULL_REST];
        let mut opacity = 0.0f32;
        let mut scale = [0.0f32; 3];
        let mut rot = [1.0f32, 0.0, 0.0, 0.0];
        for &(field, ty) in &fields {
            let value = read_scalar(&mut cursor, ty);
            match field {
                Field::Position(i) => position[i] = value,
                Field::Dc(i) => dc[i] = value,
                Field::Rest(i) => rest[i] = value,
                Field::Opacity => opacity = value,
                Field::Scale(i) => scale[i] = value,
                Field::Rot(i) => rot[i] = value,
                Field::Skip => {}
            }
        }
        let mut color = ShColor::new(3);
        color.coeffs[0] = dc;
        for ch in 0..3 {
            for k in 0..rest_per_channel {
                color.coeffs[1 + k][ch] = rest[ch * rest_per_channel + k];
            }
        }
        splats.push(GaussianSplat {
            position: Vec3::from_array(position),
            rotation: Quat::from_xyzw(rot[1], rot[2], rot[3], rot[0]),
            log_scale: Vec3::from_array(scale),
            opacity,
            color,
        });
    }
    Ok(PlyLoad {
        splats,
        unknown_properties: unknown,
    })
}

fn read_scalar(cursor: &mut std::io::Cursor<&[u8]>, ty: ScalarType) -> f32 {
    // Lengths were validated up front; reads cannot fail.
    match ty {
        ScalarType::I8 => cursor.read_i8().unwrap() as f32,
        ScalarType::U8 => cursor.read_u8().unwrap() as f32,
        ScalarType::I16 => cursor.read_i16::<LittleEndian>().unwrap() as f32,
        ScalarType::U16 => cursor.read_u16::<LittleEndian>().unwrap() as f32,
        ScalarType::I32 => cursor.read_i32::<LittleEndian>().unwrap() as f32,
        ScalarType::U32 => cursor.read_u32::<LittleEndian>().unwrap() as f32,
        ScalarType::F32 => cursor.read_f32::<LittleEndian>().unwrap(),
        ScalarType::F64 => cursor.read_f64::<LittleEndian>().unwrap() as f32,
    }
}

fn split_header<'a>(bytes: &'a [u8], path: &Path) -> Result<(usize, &'a str)> {
    let needle = b"end_header\n";
    let end = bytes
        .windows(needle.len())
        .position(|w| w == needle)
        .ok_or_else(|| Error::parse(path, 1, "missing end_header"))?;
    let header_len = end + needle.len();
    let header = std::str::from_utf8(&bytes[..end])
        .map_err(|_| Error::parse(path, 1, "header is not valid UTF-8"))?;
    Ok((header_len, header))
}

/// Writes splats in the full degree-3 binary layout; lower-degree colors are
/// zero-padded.
pub fn save_splats(path: &Path, splats: &[GaussianSplat]) -> Result<()> {
    let mut out = Vec::with_capacity(64 + splats.len() * (17 + FULL_REST) * 4);
    write!(
        out,
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\n",
        splats.len()
    )
    .unwrap();
    for name in ["x", "y", "z"] {
        writeln!(out, "property float {name}").unwrap();
    }
    for i in 0..3 {
        writeln!(out, "property float f_dc_{i}").unwrap();
    }
    for i in 0..FULL_REST {
        writeln!(out, "property float f_rest_{i}").unwrap();
    }
    writeln!(out, "property float opacity").unwrap();
    for i in 0..3 {
        writeln!(out, "property float scale_{i}").unwrap();
    }
    for i in 0..4 {
        writeln!(out, "property float rot_{i}").unwrap();
    }
    writeln!(out, "end_header").unwrap();

    for s in splats {
        for v in s.position.to_array() {
            out.write_f32::<LittleEndian>(v).unwrap();
        }
        for v in s.color.coeffs[0] {
            out.write_f32::<LittleEndian>(v).unwrap();
        }
        for ch in 0..3 {
            for k in 0..REST_PER_CHANNEL {
                out.write_f32::<LittleEndian>(s.color.coeffs[1 + k][ch]).unwrap();
            }
        }
        out.write_f32::<LittleEndian>(s.opacity).unwrap();
        for v in s.log_scale.to_array() {
            out.write_f32::<LittleEndian>(v).unwrap();
        }
        for v in [s.rotation.w, s.rotation.x, s.rotation.y, s.rotation.z] {
            out.write_f32::<LittleEndian>(v).unwrap();
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
