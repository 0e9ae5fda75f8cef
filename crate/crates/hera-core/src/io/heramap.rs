use std::io::Write;
use std::path::Path;

use byteorder::{ByteOrder, LittleEndian, WriteBytesExt};

use crate::error::{Error, Result};
use crate::geom::Image;
use crate::mesh::{OpacityMap, OpacityMode, ShMap};

const MAGIC: &[u8; 8] = b"HERAMAP1";
/// Largest plane count any asset uses: a degree-3 SH texture (48) plus room
/// for RGBA images.
const MAX_CHANNELS: u32 = 64;
const MAX_DIM: u32 = 1 << 16;

/// Writes a raw planar float map: magic, u32 width/height/channels, then
/// `channels` row-major planes of f32.
pub fn save_heramap(path: &Path, width: u32, height: u32, channels: u32, data: &[f32]) -> Result<()> {
    assert_eq!(data.len(), (width * height * channels) as usize);
    let mut out = Vec::with_capacity(20 + data.len() * 4);
    out.write_all(MAGIC).unwrap();
    out.write_u32::<LittleEndian>(width).unwrap();
    out.write_u32::<LittleEndian>(height).unwrap();
    out.write_u32::<LittleEndian>(channels).unwrap();
    for &v in data {
        out.write_f32::<LittleEndian>(v).unwrap();
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn load_heramap(path: &Path) -> Result<(u32, u32, u32, Vec<f32>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_heramap(&bytes, path)
}

pub(crate) fn parse_heramap(bytes: &[u8], path: &Path) -> Result<(u32, u32, u32, Vec<f32>)> {
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(Error::parse(path, 0, "not a HERAMAP1 container"));
    }
    let width = LittleEndian::read_u32(&bytes[8..12]);
    let height = LittleEndian::read_u32(&bytes[12..16]);
    let channels = LittleEndian::read_u32(&bytes[16..20]);
    if width == 0 || height == 0 || width > MAX_DIM || height > MAX_DIM {
        return Err(Error::parse(
            path,
            0,
            format!("bad dimensions {width}x{height}"),
        ));
    }
    if channels == 0 || channels > MAX_CHANNELS {
        return Err(Error::parse(path, 0, format!("bad channel count {channels}")));
    }
    let n = width as usize * height as usize * channels as usize;
    let payload = &bytes[20..];
    if payload.len() < n * 4 {
        return Err(Error::parse(
            path,
            payload.len() / 4,
            format!("truncated: expected {n} samples, found {}", payload.len() / 4),
        ));
    }
    let mut data = vec![0.0f32; n];
    LittleEndian::read_f32_into(&payload[..n * 4], &mut data);
    Ok((width, height, channels, data))
}

/// Texture maps store SH coefficient planes; the channel count encodes the
/// degree as `3 * (degree + 1)^2`.
pub fn save_texture_map(path: &Path, map: &ShMap) -> Result<()> {
    save_heramap(path, map.width, map.height, map.num_planes() as u32, &map.data)
}

pub fn load_texture_map(path: &Path) -> Result<ShMap> {
    let (width, height, channels, data) = load_heramap(path)?;
    let degree = match channels {
        3 => 0u8,
        12 => 1,
        27 => 2,
        48 => 3,
        other => {
            return Err(Error::parse(
                path,
                0,
                format!("channel count {other} is not an SH texture layout"),
            ))
        }
    };
    Ok(ShMap {
        width,
        height,
        degree,
        data,
    })
}

/// Opacity maps persist as single-channel logits; clamp-mode maps are
/// converted through the logit on save.
pub fn save_opacity_map(path: &Path, map: &OpacityMap) -> Result<()> {
    match map.mode {
        OpacityMode::Logit => save_heramap(path, map.width, map.height, 1, &map.data),
        OpacityMode::Clamp => {
            let logits: Vec<f32> = map.data.iter().map(|&v| crate::geom::logit(v)).collect();
            save_heramap(path, map.width, map.height, 1, &logits)
        }
    }
}

pub fn load_opacity_map(path: &Path) -> Result<OpacityMap> {
    let (width, height, channels, data) = load_heramap(path)?;
    if channels != 1 {
        return Err(Error::parse(
            path,
            0,
            format!("opacity map must have 1 channel, found {channels}"),
        ));
    }
    Ok(OpacityMap {
        width,
        height,
        mode: OpacityMode::Logit,
        data,
    })
}

/// Saves a rendered image as raw floats (interleaved samples are transposed
/// into planes).
pub fn save_image_heramap(path: &Path, image: &Image) -> Result<()> {
    let n = image.num_pixels();
    let ch = image.channels as usize;
    let mut planar = vec![0.0f32; n * ch];
    for c in 0..ch {
        for p in 0..n {
            planar[c * n + p] = image.data[p * ch + c];
        }
    }
    save_heramap(path, image.width, image.height, image.channels, &planar)
}

pub fn load_image_heramap(path: &Path) -> Result<Image> {
    let (width, height, channels, planar) = load_heramap(path)?;
    if channels != 3 && channels != 4 {
        return Err(Error::parse(
            path,
            0,
            format!("image must have 3 or 4 channels, found {channels}"),
        ));
    }
    let n = (width * height) as usize;
    let ch = channels as usize;
    let mut data = vec![0.0f32; n * ch];
    for c in 0..ch {
        for p in 0..n {
            data[p * ch + c] = planar[c * n + p];
        }
    }
    Ok(Image {
        width,
        height,
        channels,
        data,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn texture_round_trip() {
        let mut map = ShMap::new(5, 3, 1);
        for (i, v) in map.data.iter_mut().enumerate() {
            *v = i as f32 * 0.25 - 7.0;
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.heramap");
        save_texture_map(&path, &map).unwrap();
        let back = load_texture_map(&path).unwrap();
        assert_eq!(back, map);
    }

    #[test]
    fn opacity_round_trip_logit() {
        let mut map = OpacityMap::new(4, 4, OpacityMode::Logit);
        for (i, v) in map.data.iter_mut().enumerate() {
            *v = i as f32 - 8.0;
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.heramap");
        save_opacity_map(&path, &map).unwrap();
        assert_eq!(load_opacity_map(&path).unwrap(), map);
    }

    #[test]
    fn image_round_trip() {
        let mut img = Image::new(6, 4, 3);
        for (i, v) in img.data.iter_mut().enumerate() {
            *v = (i as f32).sin();
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("i.heramap");
        save_image_heramap(&path, &img).unwrap();
        assert_eq!(load_image_heramap(&path).unwrap(), img);
    }

    #[test]
    fn rejects_garbage() {
        assert!(parse_heramap(b"NOTAMAP!", Path::new("x")).is_err());
        assert!(parse_heramap(b"HERAMAP1\x00\x00\x00\x00", Path::new("x")).is_err());
        // Truncated payload.
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"HERAMAP1");
        bytes.extend_from_slice(&2u32.to_le_bytes());
        bytes.extend_from_slice(&2u32.to_le_bytes());
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&[0u8; 8]);
        assert!(parse_heramap(&bytes, Path::new("x")).is_err());
    }
}
