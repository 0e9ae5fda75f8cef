//! Loss functions against independent references.

mod common;

use common::*;
use hera_core::optim::{photometric_loss, ssim};
use hera_core::Image;

fn fixture(seed: u64) -> Image {
    use rand::Rng;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut img = Image::new(16, 16, 3);
    for v in &mut img.data {
        *v = rng.random_range(0.0..1.0);
    }
    img
}

#[test]
fn ssim_matches_direct_reference() {
    let a = fixture(1);
    let b = fixture(2);
    let got = ssim(&a, &b).unwrap() as f64;
    let want = reference_ssim(&a, &b);
    assert!((got - want).abs() < 1e-6, "{got} vs {want}");
    // And on a structured pair.
    let mut c = a.clone();
    for (i, v) in c.data.iter_mut().enumerate() {
        *v = (*v * 0.7 + 0.1 + (i % 5) as f32 * 0.01).min(1.0);
    }
    let got = ssim(&a, &c).unwrap() as f64;
    let want = reference_ssim(&a, &c);
    assert!((got - want).abs() < 1e-6, "{got} vs {want}");
}

#[test]
fn photometric_loss_combines_l1_and_dssim() {
    let a = fixture(3);
    let b = fixture(4);
    let l1: f32 = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (x - y).abs())
        .sum::<f32>()
        / a.data.len() as f32;
    let s = ssim(&a, &b).unwrap();
    let combined = photometric_loss(&a, &b, 0.2).unwrap();
    assert!((combined - (0.8 * l1 + 0.2 * (1.0 - s))).abs() < 1e-6);
}
