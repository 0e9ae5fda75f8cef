//! Shared test oracles: an independent 64-bit per-pixel implementation of
//! the hybrid rendering semantics (ray-cast mesh intersections, brute-force
//! splat/tile coverage, classification, merge and blend), plus fixture
//! builders. Everything here is written against the documented behavior,
//! not the production code paths.
#![allow(dead_code)]

use glam::{DMat3, DQuat, DVec2, DVec3, Mat3, Quat, Vec2, Vec3};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use hera_core::{
    Camera, GaussianSplat, Image, OpacityMap, OpacityMode, PrimitiveMask, RenderOptions, Scene,
    ShColor, ShMap, SortMode, Splats, TexturedMesh,
};

pub const TILE: u32 = 16;
const SH_C0: f64 = 0.28209479177387814;
const SH_C1: f64 = 0.4886025119029199;
const SH_C2: [f64; 5] = [
    1.0925484305920792,
    -1.0925484305920792,
    0.31539156525252005,
    -1.0925484305920792,
    0.5462742152960396,
];
const SH_C3: [f64; 7] = [
    -0.5900435899266435,
    2.890611442640554,
    -0.4570457994644658,
    0.3731763325901154,
    -0.4570457994644658,
    1.445305721320277,
    -0.5900435899266435,
];

fn dvec(v: Vec3) -> DVec3 {
    DVec3::new(v.x as f64, v.y as f64, v.z as f64)
}

fn dmat(m: Mat3) -> DMat3 {
    DMat3::from_cols(dvec(m.x_axis), dvec(m.y_axis), dvec(m.z_axis))
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn sh_eval(coeffs: &[[f32; 3]], degree: usize, dir: DVec3) -> DVec3 {
    let (x, y, z) = (dir.x, dir.y, dir.z);
    let mut basis = [0.0f64; 16];
    basis[0] = SH_C0;
    if degree >= 1 {
        basis[1] = -SH_C1 * y;
        basis[2] = SH_C1 * z;
        basis[3] = -SH_C1 * x;
    }
    if degree >= 2 {
        let (xx, yy, zz) = (x * x, y * y, z * z);
        basis[4] = SH_C2[0] * x * y;
        basis[5] = SH_C2[1] * y * z;
        basis[6] = SH_C2[2] * (2.0 * zz - xx - yy);
        basis[7] = SH_C2[3] * x * z;
        basis[8] = SH_C2[4] * (xx - yy);
    }
    if degree >= 3 {
        let (xx, yy, zz) = (x * x, y * y, z * z);
        basis[9] = SH_C3[0] * y * (3.0 * xx - yy);
        basis[10] = SH_C3[1] * x * y * z;
        basis[11] = SH_C3[2] * y * (4.0 * zz - xx - yy);
        basis[12] = SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy);
        basis[13] = SH_C3[4] * x * (4.0 * zz - xx - yy);
        basis[14] = SH_C3[5] * z * (xx - yy);
        basis[15] = SH_C3[6] * x * (xx - 3.0 * yy);
    }
    let mut rgb = DVec3::splat(0.5);
    let n = (degree + 1) * (degree + 1);
    for i in 0..n {
        let c = DVec3::new(coeffs[i][0] as f64, coeffs[i][1] as f64, coeffs[i][2] as f64);
        rgb += basis[i] * c;
    }
    rgb
}

fn bilinear_f64(data: &[f32], width: u32, height: u32, plane: usize, uv: DVec2) -> f64 {
    let (w, h) = (width as i64, height as i64);
    let n = (width * height) as usize;
    let base = plane * n;
    let u = uv.x - uv.x.floor();
    let v = uv.y - uv.y.floor();
    let x = u * width as f64 - 0.5;
    let y = v * height as f64 - 0.5;
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let wrap = |a: i64, m: i64| (a % m + m) % m;
    let x0i = wrap(x0 as i64, w) as usize;
    let x1i = wrap(x0 as i64 + 1, w) as usize;
    let y0i = wrap(y0 as i64, h) as usize;
    let y1i = wrap(y0 as i64 + 1, h) as usize;
    let tap = |xi: usize, yi: usize| data[base + yi * width as usize + xi] as f64;
    tap(x0i, y0i) * (1.0 - fx) * (1.0 - fy)
        + tap(x1i, y0i) * fx * (1.0 - fy)
        + tap(x0i, y1i) * (1.0 - fx) * fy
        + tap(x1i, y1i) * fx * fy
}

#[derive(Clone, Copy, Debug)]
pub struct OracleMeshFrag {
    pub depth: f64,
    pub facet: u32,
    pub uv: DVec2,
    pub bary: [f64; 3],
    pub alpha: f64,
    pub color: DVec3,
}

/// All ray/triangle intersections along the pixel's camera ray
/// (Möller-Trumbore against camera-space triangles), sorted by depth.
pub fn oracle_mesh_pixel(mesh: &TexturedMesh, camera: &Camera, x: u32, y: u32) -> Vec<OracleMeshFrag> {
    let rot = dmat(camera.rotation);
    let tr = dvec(camera.translation);
    let dir = DVec3::new(
        (x as f64 + 0.5 - camera.cx as f64) / camera.fx as f64,
        (y as f64 + 0.5 - camera.cy as f64) / camera.fy as f64,
        1.0,
    );
    let world_dir = (dmat(camera.rotation).transpose() * dir).normalize();
    let mut out = Vec::new();
    for (facet, (f, uvs)) in mesh.facets.iter().zip(&mesh.uv).enumerate() {
        let v0 = rot * dvec(mesh.vertices[f[0] as usize]) + tr;
        let v1 = rot * dvec(mesh.vertices[f[1] as usize]) + tr;
        let v2 = rot * dvec(mesh.vertices[f[2] as usize]) + tr;
        let e1 = v1 - v0;
        let e2 = v2 - v0;
        let p = dir.cross(e2);
        let det = e1.dot(p);
        if det.abs() < 1e-14 {
            continue;
        }
        let inv_det = 1.0 / det;
        let t_vec = -v0;
        let u = t_vec.dot(p) * inv_det;
        if !(0.0..=1.0).contains(&u) {
            continue;
        }
        let q = t_vec.cross(e1);
        let v = dir.dot(q) * inv_det;
        if v < 0.0 || u + v > 1.0 {
            continue;
        }
        let t = e2.dot(q) * inv_det;
        if t <= 1e-6 {
            continue;
        }
        let uv = DVec2::new(uvs[0].x as f64, uvs[0].y as f64) * (1.0 - u - v)
            + DVec2::new(uvs[1].x as f64, uvs[1].y as f64) * u
            + DVec2::new(uvs[2].x as f64, uvs[2].y as f64) * v;
        let mut sh = [[0.0f32; 3]; 16];
        let degree = mesh.texture.degree as usize;
        for c in 0..(degree + 1) * (degree + 1) {
            for ch in 0..3 {
                sh[c][ch] = bilinear_f64(
                    &mesh.texture.data,
                    mesh.texture.width,
                    mesh.texture.height,
                    3 * c + ch,
                    uv,
                ) as f32;
            }
        }
        let color = sh_eval(&sh, degree, world_dir).max(DVec3::ZERO);
        let raw_a = bilinear_f64(&mesh.opacity.data, mesh.opacity.width, mesh.opacity.height, 0, uv);
        let alpha = match mesh.opacity.mode {
            OpacityMode::Logit => sigmoid(raw_a),
            OpacityMode::Clamp => raw_a.clamp(0.0, 1.0),
        };
        out.push(OracleMeshFrag {
            depth: t,
            facet: facet as u32,
            uv,
            bary: [1.0 - u - v, u, v],
            alpha,
            color,
        });
    }
    out.sort_by(|a, b| a.depth.total_cmp(&b.depth).then(a.facet.cmp(&b.facet)));
    out
}

pub fn oracle_front_depth(mesh: &TexturedMesh, camera: &Camera) -> Vec<f64> {
    let mut out = vec![0.0f64; (camera.width * camera.height) as usize];
    for y in 0..camera.height {
        for x in 0..camera.width {
            let frags = oracle_mesh_pixel(mesh, camera, x, y);
            out[(y * camera.width + x) as usize] = frags.first().map_or(0.0, |f| f.depth);
        }
    }
    out
}

#[derive(Clone, Copy, Debug)]
pub struct OracleScreenSplat {
    pub mean2d: DVec2,
    pub conic: [f64; 3], // xx, xy, yy of the inverse covariance
    pub opacity: f64,
    pub color: DVec3,
    pub depth: f64,
    pub radius: DVec2,
}

pub fn oracle_screen_splat(s: &GaussianSplat, camera: &Camera) -> Option<OracleScreenSplat> {
    let rot = dmat(camera.rotation);
    let t = rot * dvec(s.position) + dvec(camera.translation);
    if t.z <= 1e-8 {
        return None;
    }
    let fx = camera.fx as f64;
    let fy = camera.fy as f64;
    let mean2d = DVec2::new(
        fx * t.x / t.z + camera.cx as f64,
        fy * t.y / t.z + camera.cy as f64,
    );
    let q = DQuat::from_xyzw(
        s.rotation.x as f64,
        s.rotation.y as f64,
        s.rotation.z as f64,
        s.rotation.w as f64,
    )
    .normalize();
    let r = DMat3::from_quat(q);
    let sc = dvec(s.log_scale).exp();
    let m = DMat3::from_cols(r.x_axis * sc.x, r.y_axis * sc.y, r.z_axis * sc.z);
    let cov3 = m * m.transpose();
    let v = rot * cov3 * rot.transpose();
    let j0 = DVec3::new(fx / t.z, 0.0, -fx * t.x / (t.z * t.z));
    let j1 = DVec3::new(0.0, fy / t.z, -fy * t.y / (t.z * t.z));
    let cxx = j0.dot(v * j0) + 0.3;
    let cxy = j0.dot(v * j1);
    let cyy = j1.dot(v * j1) + 0.3;
    let radius = DVec2::new(3.0 * cxx.max(0.0).sqrt(), 3.0 * cyy.max(0.0).sqrt());
    if radius.x.max(radius.y) < 0.1 {
        return None;
    }
    let det = cxx * cyy - cxy * cxy;
    let conic = [cyy / det, -cxy / det, cxx / det];
    let cam_center = -(dmat(camera.rotation).transpose() * dvec(camera.translation));
    let dir = (dvec(s.position) - cam_center).normalize();
    let color = sh_eval(
        &s.color.coeffs[..s.color.num_coeffs()],
        s.color.degree as usize,
        dir,
    )
    .max(DVec3::ZERO);
    Some(OracleScreenSplat {
        mean2d,
        conic,
        opacity: sigmoid(s.opacity as f64),
        color,
        depth: t.z,
        radius,
    })
}

/// Brute-force tile membership: the splat's 3σ bbox against the tile's pixel
/// rectangle.
pub fn oracle_tile_overlap(s: &OracleScreenSplat, tx: u32, ty: u32) -> bool {
    let l = (tx * TILE) as f64;
    let r = l + TILE as f64;
    let top = (ty * TILE) as f64;
    let bottom = top + TILE as f64;
    let lo_x = s.mean2d.x - s.radius.x;
    let hi_x = s.mean2d.x + s.radius.x;
    let lo_y = s.mean2d.y - s.radius.y;
    let hi_y = s.mean2d.y + s.radius.y;
    lo_x < r && hi_x >= l && lo_y < bottom && hi_y >= top
}

pub fn oracle_alpha(s: &OracleScreenSplat, px: DVec2) -> f64 {
    let d = px - s.mean2d;
    let power = -0.5 * (s.conic[0] * d.x * d.x + s.conic[2] * d.y * d.y) - s.conic[1] * d.x * d.y;
    (s.opacity * power.min(0.0).exp()).min(0.99)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OracleClass {
    Front,
    Behind,
    Direct,
}

pub fn oracle_classify(
    s: &OracleScreenSplat,
    depth_map: &[f64],
    camera: &Camera,
) -> OracleClass {
    let (w, h) = (camera.width, camera.height);
    let px = s.mean2d;
    if px.x < 0.0 || px.y < 0.0 || px.x >= w as f64 || px.y >= h as f64 {
        return OracleClass::Behind;
    }
    let x = px.x - 0.5;
    let y = px.y - 0.5;
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let clamp = |a: i64, n: i64| a.clamp(0, n - 1) as usize;
    let x0i = clamp(x0 as i64, w as i64);
    let x1i = clamp(x0 as i64 + 1, w as i64);
    let y0i = clamp(y0 as i64, h as i64);
    let y1i = clamp(y0 as i64 + 1, h as i64);
    let taps = [
        (depth_map[y0i * w as usize + x0i], (1.0 - fx) * (1.0 - fy)),
        (depth_map[y0i * w as usize + x1i], fx * (1.0 - fy)),
        (depth_map[y1i * w as usize + x0i], (1.0 - fx) * fy),
        (depth_map[y1i * w as usize + x1i], fx * fy),
    ];
    if taps.iter().any(|&(d, _)| d == 0.0) {
        return OracleClass::Direct;
    }
    let reference: f64 = taps.iter().map(|&(d, w)| d * w).sum();
    if s.depth < reference {
        OracleClass::Front
    } else {
        OracleClass::Behind
    }
}

/// Independent per-pixel hybrid render in f64. Follows the documented
/// semantics: per-frame classification, per-pixel override, bucketed merge,
/// front-to-back blend with early exit and background completion.
pub fn oracle_render(scene: &Scene, camera: &Camera, opts: &RenderOptions) -> Vec<DVec3> {
    let width = camera.width;
    let height = camera.height;
    let mesh_on = opts.mask != PrimitiveMask::SplatsOnly;
    let splats_on = opts.mask != PrimitiveMask::MeshOnly;
    let empty_mesh = TexturedMesh::empty();
    let mesh = if mesh_on { &scene.mesh } else { &empty_mesh };

    let world = if splats_on {
        scene.world_splats().into_owned()
    } else {
        Vec::new()
    };
    let screen: Vec<Option<OracleScreenSplat>> = world
        .iter()
        .map(|s| oracle_screen_splat(s, camera))
        .collect();
    let depth_map = oracle_front_depth(mesh, camera);
    let classes: Vec<OracleClass> = screen
        .iter()
        .map(|s| match (opts.sort, s) {
            (SortMode::Legacy, _) | (_, None) => OracleClass::Direct,
            (SortMode::Stable, Some(s)) => oracle_classify(s, &depth_map, camera),
        })
        .collect();

    let tiles_x = width.div_ceil(TILE);
    let tiles_y = height.div_ceil(TILE);
    let background = dvec(scene.background);
    let lambda = opts.lambda as f64;
    let skip = opts.alpha_skip as f64;

    let mut out = vec![DVec3::ZERO; (width * height) as usize];
    for y in 0..height {
        for x in 0..width {
            let frags = oracle_mesh_pixel(mesh, camera, x, y);
            let px = DVec2::new(x as f64 + 0.5, y as f64 + 0.5);
            let tx = (x / TILE).min(tiles_x - 1);
            let ty = (y / TILE).min(tiles_y - 1);

            // Candidate splats in depth order with their merge buckets.
            let mut order: Vec<usize> = (0..world.len())
                .filter(|&i| {
                    screen[i]
                        .as_ref()
                        .is_some_and(|s| oracle_tile_overlap(s, tx, ty))
                })
                .collect();
            order.sort_by(|&a, &b| {
                screen[a]
                    .unwrap()
                    .depth
                    .total_cmp(&screen[b].unwrap().depth)
                    .then(a.cmp(&b))
            });
            let bucket = |class: OracleClass, depth: f64| -> usize {
                if frags.is_empty() {
                    return 0;
                }
                let rank_all = frags.iter().take_while(|f| f.depth <= depth).count();
                if opts.sort == SortMode::Legacy {
                    return rank_all;
                }
                let forced = frags[0].depth < depth - lambda;
                match (class, forced) {
                    (OracleClass::Front, false) => 0,
                    (OracleClass::Direct, false) => rank_all,
                    _ => 1 + frags[1..].iter().take_while(|f| f.depth <= depth).count(),
                }
            };
            let mut keyed: Vec<(usize, usize)> = order
                .iter()
                .map(|&i| (bucket(classes[i], screen[i].unwrap().depth), i))
                .collect();
            keyed.sort_by_key(|&(b, _)| b);

            let mut color = DVec3::ZERO;
            let mut t = 1.0f64;
            let mut ptr = 0;
            'blend: for j in 0..=frags.len() {
                while ptr < keyed.len() && keyed[ptr].0 == j {
                    let s = screen[keyed[ptr].1].as_ref().unwrap();
                    ptr += 1;
                    let alpha = oracle_alpha(s, px);
                    if alpha < skip {
                        continue;
                    }
                    color += s.color * alpha * t;
                    t *= 1.0 - alpha;
                    if t < 1e-4 {
                        break 'blend;
                    }
                }
                if j < frags.len() {
                    let f = &frags[j];
                    color += f.color * f.alpha * t;
                    t *= 1.0 - f.alpha;
                    if t < 1e-4 {
                        break 'blend;
                    }
                }
            }
            out[(y * width + x) as usize] = color + t * background;
        }
    }
    out
}

/// Mean absolute error between an f64 oracle render and a target image, the
/// scalar used for finite-difference gradient checks.
pub fn oracle_l1_loss(scene: &Scene, camera: &Camera, opts: &RenderOptions, target: &Image) -> f64 {
    let render = oracle_render(scene, camera, opts);
    let mut sum = 0.0f64;
    for (p, rgb) in render.iter().enumerate() {
        let x = p as u32 % camera.width;
        let y = p as u32 / camera.width;
        let t = target.rgb(x, y);
        sum += (rgb.x - t.x as f64).abs() + (rgb.y - t.y as f64).abs() + (rgb.z - t.z as f64).abs();
    }
    sum / (camera.width * camera.height * 3) as f64
}

/// Direct windowed SSIM in f64 (11x11 Gaussian, σ 1.5, zero padding),
/// written independently of the separable implementation.
pub fn reference_ssim(a: &Image, b: &Image) -> f64 {
    let w = a.width as i64;
    let h = a.height as i64;
    let mut kernel = [[0.0f64; 11]; 11];
    let mut ksum = 0.0;
    for (i, row) in kernel.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let dx = i as f64 - 5.0;
            let dy = j as f64 - 5.0;
            *v = (-(dx * dx + dy * dy) / (2.0 * 1.5 * 1.5)).exp();
            ksum += *v;
        }
    }
    for row in &mut kernel {
        for v in row.iter_mut() {
            *v /= ksum;
        }
    }
    let c1 = 0.01f64 * 0.01;
    let c2 = 0.03f64 * 0.03;
    let mut total = 0.0;
    for ch in 0..3usize {
        let sample = |img: &Image, x: i64, y: i64| -> f64 {
            if x < 0 || y < 0 || x >= w || y >= h {
                0.0
            } else {
                img.data[((y * w + x) * 3) as usize + ch] as f64
            }
        };
        for y in 0..h {
            for x in 0..w {
                let mut mu_a = 0.0;
                let mut mu_b = 0.0;
                let mut e_aa = 0.0;
                let mut e_bb = 0.0;
                let mut e_ab = 0.0;
                for (i, row) in kernel.iter().enumerate() {
                    for (j, &kv) in row.iter().enumerate() {
                        let sx = x + j as i64 - 5;
                        let sy = y + i as i64 - 5;
                        let va = sample(a, sx, sy);
                        let vb = sample(b, sx, sy);
                        mu_a += kv * va;
                        mu_b += kv * vb;
                        e_aa += kv * va * va;
                        e_bb += kv * vb * vb;
                        e_ab += kv * va * vb;
                    }
                }
                let var_a = e_aa - mu_a * mu_a;
                let var_b = e_bb - mu_b * mu_b;
                let cov = e_ab - mu_a * mu_b;
                total += ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2))
                    / ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
            }
        }
    }
    total / (w * h * 3) as f64
}

// ---------------------------------------------------------------------------
// Fixture builders.

pub fn look_at_camera(width: u32, height: u32, focal: f32) -> Camera {
    Camera::new(
        Mat3::IDENTITY,
        Vec3::ZERO,
        focal,
        focal,
        width as f32 / 2.0,
        height as f32 / 2.0,
        width,
        height,
    )
    .unwrap()
}

pub fn random_texture(rng: &mut ChaCha8Rng, size: u32, degree: u8) -> ShMap {
    let mut map = ShMap::new(size, size, degree);
    let n = (size * size) as usize;
    for plane in 0..map.num_planes() {
        let dc_plane = plane < 3;
        for v in map.plane_mut(plane).iter_mut() {
            *v = if dc_plane {
                rng.random_range(-0.3..1.2)
            } else {
                rng.random_range(-0.15..0.15)
            };
        }
    }
    let _ = n;
    map
}

pub fn random_opacity(rng: &mut ChaCha8Rng, size: u32) -> OpacityMap {
    let mut map = OpacityMap::new(size, size, OpacityMode::Logit);
    for v in &mut map.data {
        *v = rng.random_range(-1.5..1.5);
    }
    map
}

/// Random triangles in front of the camera, inside the view frustum.
pub fn random_mesh(rng: &mut ChaCha8Rng, n_tris: usize, tex_size: u32, degree: u8) -> TexturedMesh {
    let mut vertices = Vec::new();
    let mut facets = Vec::new();
    let mut uv = Vec::new();
    for i in 0..n_tris {
        let center = Vec3::new(
            rng.random_range(-0.8..0.8),
            rng.random_range(-0.8..0.8),
            rng.random_range(1.5..3.5),
        );
        let base = vertices.len() as u32;
        for _ in 0..3 {
            vertices.push(
                center
                    + Vec3::new(
                        rng.random_range(-0.6..0.6),
                        rng.random_range(-0.6..0.6),
                        rng.random_range(-0.3..0.3),
                    ),
            );
        }
        facets.push([base, base + 1, base + 2]);
        uv.push([
            Vec2::new(rng.random_range(0.05..0.95), rng.random_range(0.05..0.95)),
            Vec2::new(rng.random_range(0.05..0.95), rng.random_range(0.05..0.95)),
            Vec2::new(rng.random_range(0.05..0.95), rng.random_range(0.05..0.95)),
        ]);
        let _ = i;
    }
    TexturedMesh {
        vertices,
        facets,
        uv,
        texture: random_texture(rng, tex_size, degree),
        opacity: random_opacity(rng, tex_size),
    }
}

pub fn random_splat(rng: &mut ChaCha8Rng, degree: u8) -> GaussianSplat {
    let mut color = ShColor::new(degree);
    color.coeffs[0] = [
        rng.random_range(0.2..1.4),
        rng.random_range(0.2..1.4),
        rng.random_range(0.2..1.4),
    ];
    for c in 1..color.num_coeffs() {
        color.coeffs[c] = [
            rng.random_range(-0.1..0.1),
            rng.random_range(-0.1..0.1),
            rng.random_range(-0.1..0.1),
        ];
    }
    let rotation = loop {
        let q = Quat::from_xyzw(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        if q.length() > 0.1 {
            break q.normalize();
        }
    };
    GaussianSplat {
        position: Vec3::new(
            rng.random_range(-0.8..0.8),
            rng.random_range(-0.8..0.8),
            rng.random_range(1.2..3.8),
        ),
        rotation,
        log_scale: Vec3::new(
            rng.random_range(-3.2..-1.6),
            rng.random_range(-3.2..-1.6),
            rng.random_range(-3.2..-1.6),
        ),
        opacity: rng.random_range(-1.0..1.5),
        color,
    }
}

/// Random hybrid scene: triangles and splats spread over z in [1.2, 3.8].
pub fn random_scene(seed: u64, n_tris: usize, n_splats: usize, tex_size: u32) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mesh = if n_tris > 0 {
        random_mesh(&mut rng, n_tris, tex_size, 1)
    } else {
        TexturedMesh::empty()
    };
    let splats: Vec<GaussianSplat> = (0..n_splats).map(|_| random_splat(&mut rng, 3)).collect();
    Scene::new(
        mesh,
        Splats::Free(splats),
        Vec3::new(
            rng.random_range(0.0..0.3),
            rng.random_range(0.0..0.3),
            rng.random_range(0.0..0.3),
        ),
    )
}

/// A slanted facet whose per-pixel depths straddle the depth of one large
/// splat: direct per-pixel comparison flips the order across the footprint,
/// per-frame classification does not. The splat mean projects inside the
/// facet, slightly in front (classified front-of-mesh), and the depth range
/// stays within λ so the override is silent.
pub fn crossing_fixture() -> (Scene, Camera) {
    let camera = look_at_camera(64, 64, 64.0);
    // Facet spans z in [1.98, 2.02] across its footprint.
    let vertices = vec![
        Vec3::new(-1.0, -1.0, 1.98),
        Vec3::new(1.0, -1.0, 2.02),
        Vec3::new(1.0, 1.0, 2.02),
        Vec3::new(-1.0, 1.0, 1.98),
    ];
    let facets = vec![[0, 1, 2], [0, 2, 3]];
    let uv = vec![
        [Vec2::ZERO, Vec2::X, Vec2::ONE],
        [Vec2::ZERO, Vec2::ONE, Vec2::Y],
    ];
    let texture = ShMap::constant_rgb(4, 4, Vec3::new(0.1, 0.7, 0.1));
    let mut opacity = OpacityMap::new(4, 4, OpacityMode::Logit);
    opacity.data.fill(4.0); // nearly opaque facet
    let mesh = TexturedMesh {
        vertices,
        facets,
        uv,
        texture,
        opacity,
    };
    let splat = GaussianSplat {
        position: Vec3::new(0.0, 0.0, 1.99),
        rotation: Quat::IDENTITY,
        log_scale: Vec3::splat(0.25f32.ln()),
        opacity: 2.0,
        color: ShColor::from_rgb(Vec3::new(0.9, 0.1, 0.1)),
    };
    (
        Scene::new(mesh, Splats::Free(vec![splat]), Vec3::ZERO),
        camera,
    )
}

// ---------------------------------------------------------------------------
// Finite-difference gradient checking against the f64 oracle.

use hera_core::optim::{backward_render, pullback_rigged_grads, Gradients};
use hera_core::render_forward;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ParamRef {
    Texture(usize),
    Opacity(usize),
    SplatPos(usize, usize),
    SplatRot(usize, usize),
    SplatScale(usize, usize),
    SplatOpacity(usize),
    SplatSh(usize, usize, usize),
}

impl ParamRef {
    pub fn group(&self) -> &'static str {
        match self {
            ParamRef::Texture(_) => "texture",
            ParamRef::Opacity(_) => "opacity",
            ParamRef::SplatPos(..) => "position",
            ParamRef::SplatRot(..) => "rotation",
            ParamRef::SplatScale(..) => "log_scale",
            ParamRef::SplatOpacity(_) => "splat_opacity",
            ParamRef::SplatSh(..) => "sh",
        }
    }
}

pub fn enumerate_params(scene: &Scene) -> Vec<ParamRef> {
    let mut out = Vec::new();
    for i in 0..scene.mesh.texture.data.len() {
        out.push(ParamRef::Texture(i));
    }
    for i in 0..scene.mesh.opacity.data.len() {
        out.push(ParamRef::Opacity(i));
    }
    let (n, degree) = match &scene.splats {
        Splats::Free(v) => (v.len(), v.first().map_or(0, |s| s.color.degree)),
        Splats::Rigged(v) => (v.len(), v.first().map_or(0, |s| s.color.degree)),
    };
    let coeffs = (degree as usize + 1) * (degree as usize + 1);
    for s in 0..n {
        for k in 0..3 {
            out.push(ParamRef::SplatPos(s, k));
        }
        for k in 0..4 {
            out.push(ParamRef::SplatRot(s, k));
        }
        for k in 0..3 {
            out.push(ParamRef::SplatScale(s, k));
        }
        out.push(ParamRef::SplatOpacity(s));
        for c in 0..coeffs {
            for ch in 0..3 {
                out.push(ParamRef::SplatSh(s, c, ch));
            }
        }
    }
    out
}

pub fn param_add(scene: &mut Scene, p: ParamRef, delta: f32) {
    let quat_add = |q: &mut Quat, k: usize, d: f32| {
        let mut a = [q.x, q.y, q.z, q.w];
        a[k] += d;
        *q = Quat::from_xyzw(a[0], a[1], a[2], a[3]);
    };
    match p {
        ParamRef::Texture(i) => scene.mesh.texture.data[i] += delta,
        ParamRef::Opacity(i) => scene.mesh.opacity.data[i] += delta,
        _ => match &mut scene.splats {
            Splats::Free(v) => match p {
                ParamRef::SplatPos(s, k) => v[s].position[k] += delta,
                ParamRef::SplatRot(s, k) => quat_add(&mut v[s].rotation, k, delta),
                ParamRef::SplatScale(s, k) => v[s].log_scale[k] += delta,
                ParamRef::SplatOpacity(s) => v[s].opacity += delta,
                ParamRef::SplatSh(s, c, ch) => v[s].color.coeffs[c][ch] += delta,
                _ => unreachable!(),
            },
            Splats::Rigged(v) => match p {
                ParamRef::SplatPos(s, k) => v[s].position[k] += delta,
                ParamRef::SplatRot(s, k) => quat_add(&mut v[s].rotation, k, delta),
                ParamRef::SplatScale(s, k) => v[s].log_scale[k] += delta,
                ParamRef::SplatOpacity(s) => v[s].opacity += delta,
                ParamRef::SplatSh(s, c, ch) => v[s].color.coeffs[c][ch] += delta,
                _ => unreachable!(),
            },
        },
    }
}

pub fn analytic_param_grad(grads: &Gradients, p: ParamRef) -> f32 {
    match p {
        ParamRef::Texture(i) => grads.texture[i],
        ParamRef::Opacity(i) => grads.opacity[i],
        ParamRef::SplatPos(s, k) => grads.splats.position[s][k],
        ParamRef::SplatRot(s, k) => grads.splats.rotation[s][k],
        ParamRef::SplatScale(s, k) => grads.splats.log_scale[s][k],
        ParamRef::SplatOpacity(s) => grads.splats.opacity[s],
        ParamRef::SplatSh(s, c, ch) => grads.splats.color[s][c][ch],
    }
}

/// Target with a fixed ±0.2 per-sample offset from the oracle render, so L1
/// signs are stable under finite-difference perturbations and the gradient
/// image varies per pixel.
pub fn gradcheck_target(scene: &Scene, camera: &Camera, opts: &RenderOptions) -> Image {
    let oracle = oracle_render(scene, camera, opts);
    let mut rng = ChaCha8Rng::seed_from_u64(0xACCE55);
    let mut target = Image::new(camera.width, camera.height, 3);
    for (p, rgb) in oracle.iter().enumerate() {
        let x = p as u32 % camera.width;
        let y = p as u32 / camera.width;
        let mut offset = |v: f64| {
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            (v + sign * 0.2) as f32
        };
        target.set_rgb(x, y, Vec3::new(offset(rgb.x), offset(rgb.y), offset(rgb.z)));
    }
    target
}

pub struct GradCheck {
    pub checked: usize,
    pub max_rel_err: f64,
    pub failures: Vec<String>,
}

/// Checks every analytic derivative of the L1 loss against central finite
/// differences of the 64-bit oracle forward.
pub fn gradcheck(
    scene: &Scene,
    camera: &Camera,
    opts: &RenderOptions,
    eps: f64,
    rel_tol: f64,
    abs_floor: f64,
) -> GradCheck {
    let target = gradcheck_target(scene, camera, opts);
    let fwd = render_forward(scene, camera, opts).expect("forward render");
    let n = (camera.width * camera.height * 3) as f32;
    let mut d_image = Image::new(camera.width, camera.height, 3);
    for (g, (r, t)) in d_image
        .data
        .iter_mut()
        .zip(fwd.image.data.iter().zip(&target.data))
    {
        *g = (r - t).signum() / n;
    }
    let mut grads = backward_render(scene, camera, &fwd, &d_image).expect("backward render");
    if let Splats::Rigged(rigged) = &scene.splats {
        pullback_rigged_grads(&mut grads, rigged, &scene.mesh.vertices, &scene.mesh.facets);
    }

    let mut report = GradCheck {
        checked: 0,
        max_rel_err: 0.0,
        failures: Vec::new(),
    };
    for p in enumerate_params(scene) {
        let mut plus = scene.clone();
        param_add(&mut plus, p, eps as f32);
        let mut minus = scene.clone();
        param_add(&mut minus, p, -(eps as f32));
        let fd = (oracle_l1_loss(&plus, camera, opts, &target)
            - oracle_l1_loss(&minus, camera, opts, &target))
            / (2.0 * eps);
        let analytic = analytic_param_grad(&grads, p) as f64;
        let err = (analytic - fd).abs();
        let scale = fd.abs().max(analytic.abs());
        report.checked += 1;
        if err > abs_floor {
            report.max_rel_err = report.max_rel_err.max(err / scale);
        }
        if err > abs_floor && err > rel_tol * scale {
            report.failures.push(format!(
                "{:?} [{}]: analytic {analytic:.6e} vs fd {fd:.6e} (err {err:.2e})",
                p,
                p.group()
            ));
        }
    }
    report
}

// ---------------------------------------------------------------------------
// Toy self-consistency fit: a textured quad plus a band of fuzz splats.

/// Ground-truth scene for the end-to-end fit: a 1x1 m two-triangle quad with
/// smooth texture and opacity patterns, plus `n_splats` soft splats forming
/// a fuzzy band wrapping above the quad. All parameters stay in ranges the
/// scaled schedule can reach from zero initialization.
pub fn fuzz_band_scene(n_splats: usize, seed: u64) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vertices = vec![
        Vec3::new(-0.5, -0.5, 0.0),
        Vec3::new(0.5, -0.5, 0.0),
        Vec3::new(0.5, 0.5, 0.0),
        Vec3::new(-0.5, 0.5, 0.0),
    ];
    let facets = vec![[0, 1, 2], [0, 2, 3]];
    let uv = vec![
        [Vec2::ZERO, Vec2::X, Vec2::ONE],
        [Vec2::ZERO, Vec2::ONE, Vec2::Y],
    ];
    let size = 32u32;
    let mut texture = ShMap::new(size, size, 1);
    let n = (size * size) as usize;
    for ty in 0..size {
        for tx in 0..size {
            let u = (tx as f32 + 0.5) / size as f32;
            let v = (ty as f32 + 0.5) / size as f32;
            let idx = (ty * size + tx) as usize;
            let rgb = [
                0.40 + 0.30 * (std::f32::consts::TAU * (u + 0.3 * v)).sin(),
                0.35 + 0.25 * (std::f32::consts::TAU * (v + 0.1)).cos(),
                0.45 + 0.25 * (std::f32::consts::TAU * (u * v + 0.5)).sin(),
            ];
            for ch in 0..3 {
                texture.data[ch * n + idx] = (rgb[ch] - 0.5) / hera_core::geom::SH_C0;
            }
            // Mild view dependence, well inside what degree 1 can fit.
            for plane in 3..12 {
                texture.data[plane * n + idx] =
                    0.04 * ((plane as f32) + u * 7.0 + v * 3.0).sin();
            }
        }
    }
    let mut opacity = OpacityMap::new(size, size, OpacityMode::Logit);
    for ty in 0..size {
        for tx in 0..size {
            let u = (tx as f32 + 0.5) / size as f32;
            let v = (ty as f32 + 0.5) / size as f32;
            opacity.data[(ty * size + tx) as usize] =
                1.0 + 0.3 * (std::f32::consts::TAU * u).sin() * (std::f32::consts::TAU * v).cos();
        }
    }
    let mesh = TexturedMesh {
        vertices,
        facets,
        uv,
        texture,
        opacity,
    };

    let mut splats = Vec::with_capacity(n_splats);
    for _ in 0..n_splats {
        let phi = rng.random_range(0.0..std::f32::consts::TAU);
        let rho = rng.random_range(0.25..0.45);
        let mut color = ShColor::new(0);
        color.coeffs[0] = [
            (rng.random_range(0.3..0.7) - 0.5) / hera_core::geom::SH_C0,
            (rng.random_range(0.25..0.6) - 0.5) / hera_core::geom::SH_C0,
            (rng.random_range(0.2..0.55) - 0.5) / hera_core::geom::SH_C0,
        ];
        splats.push(GaussianSplat {
            position: Vec3::new(
                rho * phi.sin(),
                rng.random_range(0.56..0.68),
                rho * phi.cos(),
            ),
            rotation: Quat::from_rotation_y(rng.random_range(0.0..1.0)),
            log_scale: Vec3::new(
                rng.random_range(0.025f32..0.06).ln(),
                rng.random_range(0.025f32..0.06).ln(),
                rng.random_range(0.025f32..0.06).ln(),
            ),
            opacity: rng.random_range(0.8..2.0),
            color,
        });
    }
    Scene::new(mesh, Splats::Free(splats), Vec3::ZERO)
}

/// Zero-initialized counterpart: texture and opacity maps at zero, splats
/// re-seeded at random around the band region.
pub fn fuzz_band_init(gt: &Scene, n_splats: usize, seed: u64) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut scene = gt.clone();
    scene.mesh.texture.data.fill(0.0);
    scene.mesh.opacity.data.fill(0.0);
    let mut splats = Vec::with_capacity(n_splats);
    for _ in 0..n_splats {
        splats.push(GaussianSplat {
            position: Vec3::new(
                rng.random_range(-0.5..0.5),
                rng.random_range(0.35..0.85),
                rng.random_range(-0.5..0.5),
            ),
            rotation: Quat::IDENTITY,
            log_scale: Vec3::splat(0.08f32.ln()),
            opacity: -2.0,
            color: ShColor::new(0),
        });
    }
    scene.splats = Splats::Free(splats);
    scene
}

/// Renders ground-truth targets for every camera in the set.
pub fn render_targets(
    scene: &Scene,
    cameras: &hera_core::io::CameraSet,
) -> Vec<(Camera, Image)> {
    cameras
        .cameras
        .iter()
        .map(|(_, cam)| {
            let img = hera_core::render(scene, cam, &RenderOptions::default()).unwrap();
            (*cam, img)
        })
        .collect()
}
