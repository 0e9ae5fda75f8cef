//! Structural similarity with an 11x11 Gaussian window (σ = 1.5) and its
//! adjoint with respect to the first image. Convolutions are zero-padded
//! "same" and separable; the symmetric kernel makes the adjoint the same
//! convolution.

use crate::error::{Error, Result};
use crate::geom::Image;

pub const WINDOW: usize = 11;
pub const SIGMA: f32 = 1.5;
const K1: f32 = 0.01;
const K2: f32 = 0.03;
const C1: f32 = (K1 * 1.0) * (K1 * 1.0);
const C2: f32 = (K2 * 1.0) * (K2 * 1.0);

fn kernel() -> [f32; WINDOW] {
    let mut k = [0.0f32; WINDOW];
    let c = (WINDOW / 2) as f32;
    let mut sum = 0.0;
    for (i, v) in k.iter_mut().enumerate() {
        *v = (-(i as f32 - c).powi(2) / (2.0 * SIGMA * SIGMA)).exp();
        sum += *v;
    }
    for v in &mut k {
        *v /= sum;
    }
    k
}

/// Zero-padded separable convolution of one plane.
fn conv_same(src: &[f32], width: usize, height: usize, k: &[f32; WINDOW], tmp: &mut [f32], out: &mut [f32]) {
    let half = WINDOW as isize / 2;
    for y in 0..height {
        for x in 0..width {
            let mut acc = 0.0;
            for (i, &kv) in k.iter().enumerate() {
                let sx = x as isize + i as isize - half;
                if sx >= 0 && (sx as usize) < width {
                    acc += kv * src[y * width + sx as usize];
                }
            }
            tmp[y * width + x] = acc;
        }
    }
    for y in 0..height {
        for x in 0..width {
            let mut acc = 0.0;
            for (i, &kv) in k.iter().enumerate() {
                let sy = y as isize + i as isize - half;
                if sy >= 0 && (sy as usize) < height {
                    acc += kv * tmp[sy as usize * width + x];
                }
            }
            out[y * width + x] = acc;
        }
    }
}

fn check_sizes(a: &Image, b: &Image) -> Result<()> {
    if (a.width, a.height, a.channels) != (b.width, b.height, b.channels) {
        return Err(Error::SizeMismatch(format!(
            "{}x{}x{} vs {}x{}x{}",
            a.width, a.height, a.channels, b.width, b.height, b.channels
        )));
    }
    Ok(())
}

struct ChannelStats {
    mu_a: Vec<f32>,
    mu_b: Vec<f32>,
    e_aa: Vec<f32>,
    e_bb: Vec<f32>,
    e_ab: Vec<f32>,
}

fn channel_stats(a: &[f32], b: &[f32], width: usize, height: usize, k: &[f32; WINDOW]) -> ChannelStats {
    let n = width * height;
    let mut tmp = vec![0.0f32; n];
    let mut stats = ChannelStats {
        mu_a: vec![0.0; n],
        mu_b: vec![0.0; n],
        e_aa: vec![0.0; n],
        e_bb: vec![0.0; n],
        e_ab: vec![0.0; n],
    };
    conv_same(a, width, height, k, &mut tmp, &mut stats.mu_a);
    conv_same(b, width, height, k, &mut tmp, &mut stats.mu_b);
    let sq: Vec<f32> = a.iter().map(|v| v * v).collect();
    conv_same(&sq, width, height, k, &mut tmp, &mut stats.e_aa);
    let sq: Vec<f32> = b.iter().map(|v| v * v).collect();
    conv_same(&sq, width, height, k, &mut tmp, &mut stats.e_bb);
    let prod: Vec<f32> = a.iter().zip(b).map(|(x, y)| x * y).collect();
    conv_same(&prod, width, height, k, &mut tmp, &mut stats.e_ab);
    stats
}

fn extract_channel(img: &Image, ch: usize) -> Vec<f32> {
    let stride = img.channels as usize;
    img.data.iter().skip(ch).step_by(stride).copied().collect()
}

/// Mean SSIM over pixels and RGB channels, on [0, 1] images.
pub fn ssim(a: &Image, b: &Image) -> Result<f32> {
    check_sizes(a, b)?;
    let k = kernel();
    let (w, h) = (a.width as usize, a.height as usize);
    let mut total = 0.0f64;
    for ch in 0..3 {
        let pa = extract_channel(a, ch);
        let pb = extract_channel(b, ch);
        let s = channel_stats(&pa, &pb, w, h, &k);
        for p in 0..w * h {
            total += ssim_at(&s, p).0 as f64;
        }
    }
    Ok((total / (w * h * 3) as f64) as f32)
}

#[allow(clippy::type_complexity)]
fn ssim_at(s: &ChannelStats, p: usize) -> (f32, f32, f32, f32) {
    let mu_a = s.mu_a[p];
    let mu_b = s.mu_b[p];
    let var_a = s.e_aa[p] - mu_a * mu_a;
    let var_b = s.e_bb[p] - mu_b * mu_b;
    let cov = s.e_ab[p] - mu_a * mu_b;
    let a1 = 2.0 * mu_a * mu_b + C1;
    let a2 = 2.0 * cov + C2;
    let b1 = mu_a * mu_a + mu_b * mu_b + C1;
    let b2 = var_a + var_b + C2;
    let value = (a1 * a2) / (b1 * b2);
    // Partials wrt (mu_a, E[a^2], E[ab]) for the backward pass.
    let d_a1 = a2 / (b1 * b2);
    let d_a2 = a1 / (b1 * b2);
    let d_b1 = -value / b1;
    let d_b2 = -value / b2;
    let g_mu = d_a1 * 2.0 * mu_b + d_a2 * (-2.0 * mu_b) + d_b1 * 2.0 * mu_a + d_b2 * (-2.0 * mu_a);
    let g_eaa = d_b2;
    let g_eab = d_a2 * 2.0;
    (value, g_mu, g_eaa, g_eab)
}

/// SSIM and its gradient with respect to `a`, as a flat image-shaped buffer.
pub fn ssim_backward(a: &Image, b: &Image) -> Result<(f32, Vec<f32>)> {
    check_sizes(a, b)?;
    let k = kernel();
    let (w, h) = (a.width as usize, a.height as usize);
    let n = w * h;
    let weight = 1.0 / (n * 3) as f32;
    let mut grad = vec![0.0f32; a.data.len()];
    let mut total = 0.0f64;
    let mut g_mu = vec![0.0f32; n];
    let mut g_eaa = vec![0.0f32; n];
    let mut g_eab = vec![0.0f32; n];
    let mut conv_mu = vec![0.0f32; n];
    let mut conv_eaa = vec![0.0f32; n];
    let mut conv_eab = vec![0.0f32; n];
    let mut tmp = vec![0.0f32; n];
    for ch in 0..3 {
        let pa = extract_channel(a, ch);
        let pb = extract_channel(b, ch);
        let s = channel_stats(&pa, &pb, w, h, &k);
        for p in 0..n {
            let (value, mu, eaa, eab) = ssim_at(&s, p);
            total += value as f64;
            g_mu[p] = weight * mu;
            g_eaa[p] = weight * eaa;
            g_eab[p] = weight * eab;
        }
        conv_same(&g_mu, w, h, &k, &mut tmp, &mut conv_mu);
        conv_same(&g_eaa, w, h, &k, &mut tmp, &mut conv_eaa);
        conv_same(&g_eab, w, h, &k, &mut tmp, &mut conv_eab);
        let stride = a.channels as usize;
        for p in 0..n {
            grad[p * stride + ch] = conv_mu[p] + 2.0 * pa[p] * conv_eaa[p] + pb[p] * conv_eab[p];
        }
    }
    Ok(((total / (n * 3) as f64) as f32, grad))
}

/// PSNR in dB over [0, 1] floats; +inf for identical images.
pub fn psnr(a: &Image, b: &Image) -> Result<f32> {
    check_sizes(a, b)?;
    let mse: f64 = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| {
            let d = (*x - *y) as f64;
            d * d
        })
        .sum::<f64>()
        / a.data.len() as f64;
    if mse == 0.0 {
        return Ok(f32::INFINITY);
    }
    Ok((10.0 * (1.0 / mse).log10()) as f32)
}
