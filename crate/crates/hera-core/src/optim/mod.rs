//! Differentiable fitting of texture, opacity and splat parameters against
//! reference images: losses, the render adjoint, Adam, density control and
//! the two-stage schedule.

pub mod adam;
pub mod backward;
pub mod densify;
pub mod fit;
pub mod ssim;

pub use adam::{adam_step, AdamState};
pub use backward::{backward_render, pullback_rigged_grads, Gradients, SplatGrads};
pub use densify::{DensifyConfig, DensifyOutcome, DensifyStats};
pub use fit::{fit, fit_resumable, FitConfig, FitOutput, FitReport, FitSession, LrSplat, MetricsRow};
pub use ssim::{psnr, ssim, ssim_backward};

use crate::error::{Error, Result};
use crate::geom::Image;

/// `(1 - λ) * mean|render - target| + λ * (1 - SSIM)`.
pub fn photometric_loss(render: &Image, target: &Image, lambda_ssim: f32) -> Result<f32> {
    if (render.width, render.height, render.channels)
        != (target.width, target.height, target.channels)
    {
        return Err(Error::SizeMismatch(format!(
            "render {}x{} vs target {}x{}",
            render.width, render.height, target.width, target.height
        )));
    }
    let n = render.data.len() as f32;
    let l1: f32 = render
        .data
        .iter()
        .zip(&target.data)
        .map(|(r, t)| (r - t).abs())
        .sum::<f32>()
        / n;
    if lambda_ssim == 0.0 {
        return Ok(l1);
    }
    let s = ssim(render, target)?;
    Ok((1.0 - lambda_ssim) * l1 + lambda_ssim * (1.0 - s))
}

/// Loss plus its gradient with respect to the rendered image.
pub fn photometric_loss_backward(
    render: &Image,
    target: &Image,
    lambda_ssim: f32,
) -> Result<(f32, Image)> {
    if (render.width, render.height, render.channels)
        != (target.width, target.height, target.channels)
    {
        return Err(Error::SizeMismatch(format!(
            "render {}x{} vs target {}x{}",
            render.width, render.height, target.width, target.height
        )));
    }
    let n = render.data.len() as f32;
    let mut grad = Image::new(render.width, render.height, render.channels);
    let mut l1 = 0.0f32;
    for ((g, r), t) in grad.data.iter_mut().zip(&render.data).zip(&target.data) {
        let d = r - t;
        l1 += d.abs();
        *g = (1.0 - lambda_ssim) * d.signum() / n;
    }
    l1 /= n;
    if lambda_ssim == 0.0 {
        return Ok((l1, grad));
    }
    let (s, ds) = ssim_backward(render, target)?;
    for (g, dsv) in grad.data.iter_mut().zip(&ds) {
        *g -= lambda_ssim * dsv;
    }
    Ok(((1.0 - lambda_ssim) * l1 + lambda_ssim * (1.0 - s), grad))
}
