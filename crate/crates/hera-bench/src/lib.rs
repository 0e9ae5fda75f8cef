//! Synthetic scenes shared by the benchmarks.

use glam::{Mat3, Quat, Vec2, Vec3};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use hera_core::{
    Camera, GaussianSplat, OpacityMap, OpacityMode, Scene, ShColor, ShMap, Splats, TexturedMesh,
};

pub fn camera(size: u32) -> Camera {
    Camera::new(
        Mat3::IDENTITY,
        Vec3::ZERO,
        size as f32,
        size as f32,
        size as f32 / 2.0,
        size as f32 / 2.0,
        size,
        size,
    )
    .unwrap()
}

/// A grid of `cols x rows` quads at z ~ 2.2 covering the view.
pub fn grid_mesh(cols: u32, rows: u32) -> TexturedMesh {
    let mut vertices = Vec::with_capacity(((cols + 1) * (rows + 1)) as usize);
    for r in 0..=rows {
        for c in 0..=cols {
            let u = c as f32 / cols as f32;
            let v = r as f32 / rows as f32;
            vertices.push(Vec3::new(
                (u - 0.5) * 2.4,
                (v - 0.5) * 2.4,
                2.2 + 0.1 * (u * 13.0 + v * 7.0).sin(),
            ));
        }
    }
    let mut facets = Vec::with_capacity((cols * rows * 2) as usize);
    let mut uv = Vec::with_capacity(facets.capacity());
    for r in 0..rows {
        for c in 0..cols {
            let i = r * (cols + 1) + c;
            let corners = [i, i + 1, i + cols + 2, i + cols + 1];
            let tex = |k: u32| {
                Vec2::new(
                    (c + (k & 1)) as f32 / cols as f32,
                    (r + (k >> 1)) as f32 / rows as f32,
                )
            };
            facets.push([corners[0], corners[1], corners[2]]);
            uv.push([tex(0), tex(1), tex(3)]);
            facets.push([corners[0], corners[2], corners[3]]);
            uv.push([tex(0), tex(3), tex(2)]);
        }
    }
    let mut opacity = OpacityMap::new(64, 64, OpacityMode::Logit);
    opacity.data.fill(1.0);
    TexturedMesh {
        vertices,
        facets,
        uv,
        texture: ShMap::constant_rgb(64, 64, Vec3::new(0.4, 0.45, 0.5)),
        opacity,
    }
}

pub fn splat_cloud(n: usize, seed: u64) -> Vec<GaussianSplat> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let mut color = ShColor::new(0);
            color.coeffs[0] = [
                rng.random_range(-0.8..0.8),
                rng.random_range(-0.8..0.8),
                rng.random_range(-0.8..0.8),
            ];
            GaussianSplat {
                position: Vec3::new(
                    rng.random_range(-1.1..1.1),
                    rng.random_range(-1.1..1.1),
                    rng.random_range(1.4..2.1),
                ),
                rotation: Quat::from_rotation_z(rng.random_range(0.0..1.5)),
                log_scale: Vec3::new(
                    rng.random_range(-5.8..-4.6),
                    rng.random_range(-5.8..-4.6),
                    rng.random_range(-5.8..-4.6),
                ),
                opacity: rng.random_range(-1.0..1.0),
                color,
            }
        })
        .collect()
}

pub fn hybrid_scene(n_tris: u32, n_splats: usize) -> Scene {
    let mesh = if n_tris > 0 {
        let rows = (n_tris / 200).max(1);
        grid_mesh(100, rows)
    } else {
        TexturedMesh::empty()
    };
    Scene::new(
        mesh,
        Splats::Free(splat_cloud(n_splats, 88)),
        Vec3::new(0.1, 0.1, 0.1),
    )
}
