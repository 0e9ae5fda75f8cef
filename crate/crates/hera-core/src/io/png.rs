use std::path::Path;

use crate::error::{Error, Result};
use crate::geom::{Image, SH_C0};
use crate::mesh::{OpacityMap, OpacityMode, ShMap};

const GAMMA: f32 = 2.2;

fn open(path: &Path) -> Result<image::DynamicImage> {
    image::open(path).map_err(|e| Error::parse(path, 0, e.to_string()))
}

/// Saves a linear float image as 8-bit PNG, sRGB-encoded via `x^(1/2.2)`.
pub fn save_png_srgb(path: &Path, img: &Image) -> Result<()> {
    let encode = |v: f32| (v.clamp(0.0, 1.0).powf(1.0 / GAMMA) * 255.0).round() as u8;
    let n = img.num_pixels();
    let ch = img.channels as usize;
    let mut bytes = Vec::with_capacity(n * ch);
    for p in 0..n {
        for c in 0..ch {
            let v = img.data[p * ch + c];
            // Alpha stays linear.
            bytes.push(if c == 3 {
                (v.clamp(0.0, 1.0) * 255.0).round() as u8
            } else {
                encode(v)
            });
        }
    }
    let color = if ch == 4 {
        image::ColorType::Rgba8
    } else {
        image::ColorType::Rgb8
    };
    image::save_buffer(path, &bytes, img.width, img.height, color)
        .map_err(|e| Error::parse(path, 0, e.to_string()))
}

/// Loads a PNG and undoes the sRGB encoding, returning linear floats.
pub fn load_png_linear(path: &Path) -> Result<Image> {
    let mut img = load_png_raw(path)?;
    let ch = img.channels as usize;
    for (i, v) in img.data.iter_mut().enumerate() {
        if i % ch != 3 {
            *v = v.powf(GAMMA);
        }
    }
    Ok(img)
}

/// Loads a PNG as stored (normalized to [0, 1], no gamma handling).
pub fn load_png_raw(path: &Path) -> Result<Image> {
    let dynimg = open(path)?;
    let width = dynimg.width();
    let height = dynimg.height();
    let has_alpha = dynimg.color().has_alpha();
    if has_alpha {
        let rgba = dynimg.into_rgba32f();
        Ok(Image {
            width,
            height,
            channels: 4,
            data: rgba.into_raw(),
        })
    } else {
        let rgb = dynimg.into_rgb32f();
        Ok(Image {
            width,
            height,
            channels: 3,
            data: rgb.into_raw(),
        })
    }
}

/// Imports a 16-bit color PNG as a degree-0 SH texture whose evaluation
/// reproduces the stored values exactly.
pub fn load_texture_png16(path: &Path) -> Result<ShMap> {
    let dynimg = open(path)?;
    let width = dynimg.width();
    let height = dynimg.height();
    let rgb = dynimg.into_rgb16();
    let mut map = ShMap::new(width, height, 0);
    let n = (width * height) as usize;
    for (p, px) in rgb.pixels().enumerate() {
        for ch in 0..3 {
            map.data[ch * n + p] = (px.0[ch] as f32 / 65535.0 - 0.5) / SH_C0;
        }
    }
    Ok(map)
}

/// Imports a 16-bit grayscale PNG as a clamp-mode opacity map (values pass
/// through unchanged).
pub fn load_opacity_png16(path: &Path) -> Result<OpacityMap> {
    let dynimg = open(path)?;
    let width = dynimg.width();
    let height = dynimg.height();
    let gray = dynimg.into_luma16();
    let mut map = OpacityMap::new(width, height, OpacityMode::Clamp);
    for (p, px) in gray.pixels().enumerate() {
        map.data[p] = px.0[0] as f32 / 65535.0;
    }
    Ok(map)
}
