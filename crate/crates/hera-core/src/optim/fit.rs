//! Two-stage fitting schedule: a mesh-only pre-fit of the texture and
//! opacity maps, then joint optimization of all parameters with periodic
//! densification.

use std::path::{Path, PathBuf};

use glam::{Vec3, Vec4};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{Camera, Image};
use crate::hybrid::{render, render_forward, PrimitiveMask, RenderOptions, SortMode};
use crate::mesh::{OpacityMode, ViewDirMode};
use crate::scene::{Scene, Splats};

use super::adam::{adam_step, AdamState};
use super::backward::{backward_render, pullback_rigged_grads, SplatGrads};
use super::densify::{densify_generic, DensifyConfig, DensifyStats};
use super::ssim::psnr;
use super::photometric_loss_backward;

/// Per-group splat learning rates. The position rate is in units of scene
/// extent per step (multiplied by the extent of the camera rig).
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct LrSplat {
    pub position: f32,
    pub rotation: f32,
    pub log_scale: f32,
    pub opacity: f32,
    pub sh: f32,
}

impl Default for LrSplat {
    fn default() -> Self {
        Self {
            position: 1.6e-4,
            rotation: 1e-3,
            log_scale: 5e-3,
            opacity: 0.05,
            sh: 2.5e-3,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    /// Mesh-only pre-fit length; only the texture and opacity maps move.
    pub stage1_iters: u32,
    pub total_iters: u32,
    /// Learning rate of both UV maps.
    pub lr_uv_maps: f32,
    pub lr_splat: LrSplat,
    /// Weight of the structural-dissimilarity term in the loss.
    pub lambda_ssim: f32,
    /// Depth margin of the hybrid sorting override, meters.
    pub lambda_sort: f32,
    pub densify: DensifyConfig,
    pub seed: u64,
    /// Every k-th view is held out for PSNR evaluation (0 or 1 disables).
    pub holdout_stride: u32,
    /// Iterations between holdout evaluations.
    pub eval_interval: u32,
    /// Iterations between checkpoints (0 disables).
    pub checkpoint_interval: u32,
    pub background: [f32; 3],
    /// Penalize rigged splats drifting or growing past their facet.
    pub regularize_local: bool,
    pub reg_position_weight: f32,
    pub reg_scale_weight: f32,
    /// Side length of zero-initialized UV maps when the input bundle ships
    /// none.
    pub map_size: u32,
    /// SH degree of zero-initialized texture maps.
    pub texture_degree: u8,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            stage1_iters: 9000,
            total_iters: 30000,
            lr_uv_maps: 5e-4,
            lr_splat: LrSplat::default(),
            lambda_ssim: 0.2,
            lambda_sort: 0.05,
            densify: DensifyConfig::default(),
            seed: 0,
            holdout_stride: 0,
            eval_interval: 250,
            checkpoint_interval: 1000,
            background: [0.0; 3],
            regularize_local: false,
            reg_position_weight: 0.01,
            reg_scale_weight: 1.0,
            map_size: 256,
            texture_degree: 1,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        let lrs = [
            self.lr_uv_maps,
            self.lr_splat.position,
            self.lr_splat.rotation,
            self.lr_splat.log_scale,
            self.lr_splat.opacity,
            self.lr_splat.sh,
        ];
        if !lrs.iter().all(|lr| *lr > 0.0) {
            return Err(Error::InvalidParameter(
                "all learning rates must be positive".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.lambda_ssim) {
            return Err(Error::InvalidParameter(
                "lambda_ssim must be in [0, 1]".into(),
            ));
        }
        if self.stage1_iters > self.total_iters {
            return Err(Error::InvalidParameter(
                "stage1_iters must not exceed total_iters".into(),
            ));
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str, path: &Path) -> Result<Self> {
        let cfg: FitConfig = toml::from_str(text)
            .map_err(|e| Error::parse(path, 0, e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text, path)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct MetricsRow {
    pub iter: u32,
    pub loss: f32,
    pub psnr_holdout: Option<f32>,
    pub num_splats: u32,
}

#[derive(Clone, Debug, Default)]
pub struct FitReport {
    pub rows: Vec<MetricsRow>,
    pub final_psnr_holdout: Option<f32>,
}

impl FitReport {
    pub fn write_csv(&self, mut w: impl std::io::Write) -> std::io::Result<()> {
        writeln!(w, "iter,loss,psnr_holdout,num_splats")?;
        for r in &self.rows {
            match r.psnr_holdout {
                Some(p) => writeln!(w, "{},{},{},{}", r.iter, r.loss, p, r.num_splats)?,
                None => writeln!(w, "{},{},,{}", r.iter, r.loss, r.num_splats)?,
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct FitOutput {
    pub scene: Scene,
    pub report: FitReport,
}

/// Checkpointing/resume knobs that live outside the config file.
#[derive(Clone, Debug, Default)]
pub struct FitSession {
    pub checkpoint_dir: Option<PathBuf>,
    pub start_iter: u32,
}

struct SplatOptim {
    position: AdamState,
    rotation: AdamState,
    log_scale: AdamState,
    opacity: AdamState,
    sh: AdamState,
}

impl SplatOptim {
    fn new(n: usize) -> Self {
        Self {
            position: AdamState::new(3 * n),
            rotation: AdamState::new(4 * n),
            log_scale: AdamState::new(3 * n),
            opacity: AdamState::new(n),
            sh: AdamState::new(48 * n),
        }
    }

    fn remap(&mut self, keep: &[bool], added: usize) {
        self.position.remap(keep, added, 3);
        self.rotation.remap(keep, added, 4);
        self.log_scale.remap(keep, added, 3);
        self.opacity.remap(keep, added, 1);
        self.sh.remap(keep, added, 48);
    }
}

/// Bounding-sphere radius of the camera rig, the scene scale used by
/// densification thresholds and the position learning rate.
fn camera_extent(dataset: &[(Camera, Image)]) -> f32 {
    let centers: Vec<Vec3> = dataset.iter().map(|(c, _)| c.center()).collect();
    let mean = centers.iter().copied().sum::<Vec3>() / centers.len().max(1) as f32;
    let radius = centers
        .iter()
        .map(|c| (*c - mean).length())
        .fold(0.0f32, f32::max);
    (radius * 1.1).max(1e-6)
}

pub fn fit(scene_init: &Scene, dataset: &[(Camera, Image)], cfg: &FitConfig) -> Result<FitOutput> {
    fit_resumable(scene_init, dataset, cfg, &FitSession::default())
}

pub fn fit_resumable(
    scene_init: &Scene,
    dataset: &[(Camera, Image)],
    cfg: &FitConfig,
    session: &FitSession,
) -> Result<FitOutput> {
    cfg.validate()?;
    scene_init.validate()?;
    if dataset.is_empty() {
        return Err(Error::InvalidParameter("dataset is empty".into()));
    }
    for (cam, img) in dataset {
        if (img.width, img.height) != (cam.width, cam.height) {
            return Err(Error::SizeMismatch(format!(
                "target image {}x{} does not match camera {}x{}",
                img.width, img.height, cam.width, cam.height
            )));
        }
    }

    let stride = cfg.holdout_stride as usize;
    let holdout: Vec<usize> = if stride > 1 {
        (0..dataset.len()).filter(|i| i % stride == stride - 1).collect()
    } else {
        Vec::new()
    };
    let train: Vec<usize> = (0..dataset.len()).filter(|i| !holdout.contains(i)).collect();
    if train.is_empty() {
        return Err(Error::InvalidParameter("no training views left".into()));
    }
    let extent = camera_extent(dataset);

    let mut scene = scene_init.clone();
    scene.background = Vec3::from_array(cfg.background);
    if scene.mesh.opacity.mode == OpacityMode::Clamp {
        // Fitting needs the logit parameterization.
        for v in &mut scene.mesh.opacity.data {
            *v = crate::geom::logit(*v);
        }
        scene.mesh.opacity.mode = OpacityMode::Logit;
    }

    let mut st_tex = AdamState::new(scene.mesh.texture.data.len());
    let mut st_opa = AdamState::new(scene.mesh.opacity.data.len());
    let mut st_splat = SplatOptim::new(scene.splats.len());
    let mut stats = DensifyStats::new(scene.splats.len());

    let mut report = FitReport::default();
    let densify_stop = if cfg.densify.stop_iter == 0 {
        cfg.total_iters / 2
    } else {
        cfg.densify.stop_iter
    };

    if session.start_iter >= cfg.total_iters {
        let final_psnr = eval_holdout(&scene, dataset, &holdout, cfg)?;
        report.final_psnr_holdout = final_psnr;
        return Ok(FitOutput { scene, report });
    }

    for iter in session.start_iter..cfg.total_iters {
        // Per-iteration stream so resumed runs draw the same sequence.
        let mut rng =
            ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9E37_79B9_7F4A_7C15u64.wrapping_mul(iter as u64 + 1));
        let view = train[rng.random_range(0..train.len())];
        let (camera, target) = &dataset[view];
        let stage1 = iter < cfg.stage1_iters;
        let opts = RenderOptions {
            lambda: cfg.lambda_sort,
            sort: SortMode::Stable,
            mask: if stage1 {
                PrimitiveMask::MeshOnly
            } else {
                PrimitiveMask::Both
            },
            view_dir: ViewDirMode::CameraRay,
            ..RenderOptions::default()
        };
        let fwd = render_forward(&scene, camera, &opts)?;
        let (mut loss, d_image) = photometric_loss_backward(&fwd.image, target, cfg.lambda_ssim)?;
        let mut grads = backward_render(&scene, camera, &fwd, &d_image)?;

        adam_step(
            &mut scene.mesh.texture.data,
            &grads.texture,
            &mut st_tex,
            cfg.lr_uv_maps,
        )?;
        adam_step(
            &mut scene.mesh.opacity.data,
            &grads.opacity,
            &mut st_opa,
            cfg.lr_uv_maps,
        )?;

        if !stage1 && !scene.splats.is_empty() {
            if let Splats::Rigged(rigged) = &scene.splats {
                pullback_rigged_grads(
                    &mut grads,
                    rigged,
                    &scene.mesh.vertices,
                    &scene.mesh.facets,
                );
                if cfg.regularize_local {
                    loss += apply_local_regularizers(rigged, &mut grads.splats, cfg);
                }
            }
            step_splats(&mut scene.splats, &grads.splats, &mut st_splat, cfg, extent)?;
            stats.accumulate(&grads.splats.mean2d_norm, &grads.splats.visible);

            let step = iter + 1;
            if cfg.densify.interval > 0
                && step >= cfg.densify.start_iter
                && step <= densify_stop
                && step % cfg.densify.interval == 0
            {
                let remap = run_densify(&mut scene, &stats, cfg, extent, &mut rng);
                st_splat.remap(&remap.keep, remap.added);
                stats = DensifyStats::new(scene.splats.len());
            }
        }

        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { iter });
        }

        let step = iter + 1;
        let eval_now = !holdout.is_empty()
            && cfg.eval_interval > 0
            && (step % cfg.eval_interval == 0 || step == cfg.total_iters);
        let psnr_holdout = if eval_now {
            eval_holdout(&scene, dataset, &holdout, cfg)?
        } else {
            None
        };
        report.rows.push(MetricsRow {
            iter,
            loss,
            psnr_holdout,
            num_splats: scene.splats.len() as u32,
        });

        if let Some(dir) = &session.checkpoint_dir {
            if cfg.checkpoint_interval > 0
                && (step % cfg.checkpoint_interval == 0 || step == cfg.total_iters)
            {
                let ckpt = dir.join(format!("checkpoint_{step:06}"));
                crate::io::save_scene(&ckpt, &scene)?;
            }
        }
    }

    report.final_psnr_holdout = report
        .rows
        .iter()
        .rev()
        .find_map(|r| r.psnr_holdout)
        .or(eval_holdout(&scene, dataset, &holdout, cfg)?);
    Ok(FitOutput { scene, report })
}

fn eval_holdout(
    scene: &Scene,
    dataset: &[(Camera, Image)],
    holdout: &[usize],
    cfg: &FitConfig,
) -> Result<Option<f32>> {
    if holdout.is_empty() {
        return Ok(None);
    }
    let opts = RenderOptions {
        lambda: cfg.lambda_sort,
        ..RenderOptions::default()
    };
    let mut sum = 0.0f32;
    for &i in holdout {
        let (camera, target) = &dataset[i];
        let img = render(scene, camera, &opts)?;
        sum += psnr(&img, target)?;
    }
    Ok(Some(sum / holdout.len() as f32))
}

/// Local regularizers for rigged splats: penalize drifting more than one
/// edge length from the facet or growing past 60% of it. Returns the added
/// loss.
fn apply_local_regularizers(
    rigged: &[crate::rig::RiggedSplat],
    grads: &mut SplatGrads,
    cfg: &FitConfig,
) -> f32 {
    const POSITION_LIMIT: f32 = 1.0;
    const SCALE_LIMIT: f32 = 0.6;
    let n = rigged.len() as f32;
    let mut loss = 0.0;
    for (i, r) in rigged.iter().enumerate() {
        let dist = r.position.length();
        if dist > POSITION_LIMIT {
            loss += cfg.reg_position_weight * (dist - POSITION_LIMIT) / n;
            grads.position[i] += cfg.reg_position_weight / n * (r.position / dist);
        }
        let scale = r.log_scale.exp();
        for k in 0..3 {
            if scale[k] > SCALE_LIMIT {
                loss += cfg.reg_scale_weight * (scale[k] - SCALE_LIMIT) / n;
                grads.log_scale[i][k] += cfg.reg_scale_weight / n * scale[k];
            }
        }
    }
    loss
}

fn step_splats(
    splats: &mut Splats,
    grads: &SplatGrads,
    st: &mut SplatOptim,
    cfg: &FitConfig,
    extent: f32,
) -> Result<()> {
    let n = splats.len();
    let mut position = vec![0.0f32; 3 * n];
    let mut rotation = vec![0.0f32; 4 * n];
    let mut log_scale = vec![0.0f32; 3 * n];
    let mut opacity = vec![0.0f32; n];
    let mut sh = vec![0.0f32; 48 * n];
    let mut g_position = vec![0.0f32; 3 * n];
    let mut g_rotation = vec![0.0f32; 4 * n];
    let mut g_log_scale = vec![0.0f32; 3 * n];
    let mut g_opacity = vec![0.0f32; n];
    let mut g_sh = vec![0.0f32; 48 * n];

    let gather = |i: usize,
                  pos: Vec3,
                  rot: Vec4,
                  ls: Vec3,
                  op: f32,
                  color: &[[f32; 3]; 16],
                  position: &mut [f32],
                  rotation: &mut [f32],
                  log_scale: &mut [f32],
                  opacity: &mut [f32],
                  sh: &mut [f32]| {
        position[3 * i..3 * i + 3].copy_from_slice(&pos.to_array());
        rotation[4 * i..4 * i + 4].copy_from_slice(&rot.to_array());
        log_scale[3 * i..3 * i + 3].copy_from_slice(&ls.to_array());
        opacity[i] = op;
        for (c, coeff) in color.iter().enumerate() {
            sh[48 * i + 3 * c..48 * i + 3 * c + 3].copy_from_slice(coeff);
        }
    };

    match splats {
        Splats::Free(list) => {
            for (i, s) in list.iter().enumerate() {
                gather(
                    i,
                    s.position,
                    Vec4::new(s.rotation.x, s.rotation.y, s.rotation.z, s.rotation.w),
                    s.log_scale,
                    s.opacity,
                    &s.color.coeffs,
                    &mut position,
                    &mut rotation,
                    &mut log_scale,
                    &mut opacity,
                    &mut sh,
                );
            }
        }
        Splats::Rigged(list) => {
            for (i, s) in list.iter().enumerate() {
                gather(
                    i,
                    s.position,
                    Vec4::new(s.rotation.x, s.rotation.y, s.rotation.z, s.rotation.w),
                    s.log_scale,
                    s.opacity,
                    &s.color.coeffs,
                    &mut position,
                    &mut rotation,
                    &mut log_scale,
                    &mut opacity,
                    &mut sh,
                );
            }
        }
    }
    for i in 0..n {
        g_position[3 * i..3 * i + 3].copy_from_slice(&grads.position[i].to_array());
        g_rotation[4 * i..4 * i + 4].copy_from_slice(&grads.rotation[i].to_array());
        g_log_scale[3 * i..3 * i + 3].copy_from_slice(&grads.log_scale[i].to_array());
        g_opacity[i] = grads.opacity[i];
        for (c, coeff) in grads.color[i].iter().enumerate() {
            g_sh[48 * i + 3 * c..48 * i + 3 * c + 3].copy_from_slice(coeff);
        }
    }

    adam_step(&mut position, &g_position, &mut st.position, cfg.lr_splat.position * extent)?;
    adam_step(&mut rotation, &g_rotation, &mut st.rotation, cfg.lr_splat.rotation)?;
    adam_step(&mut log_scale, &g_log_scale, &mut st.log_scale, cfg.lr_splat.log_scale)?;
    adam_step(&mut opacity, &g_opacity, &mut st.opacity, cfg.lr_splat.opacity)?;
    adam_step(&mut sh, &g_sh, &mut st.sh, cfg.lr_splat.sh)?;

    let scatter = |i: usize| {
        let pos = Vec3::new(position[3 * i], position[3 * i + 1], position[3 * i + 2]);
        let rot = glam::Quat::from_xyzw(
            rotation[4 * i],
            rotation[4 * i + 1],
            rotation[4 * i + 2],
            rotation[4 * i + 3],
        );
        let ls = Vec3::new(log_scale[3 * i], log_scale[3 * i + 1], log_scale[3 * i + 2]);
        (pos, rot, ls, opacity[i])
    };
    match splats {
        Splats::Free(list) => {
            for (i, s) in list.iter_mut().enumerate() {
                let (pos, rot, ls, op) = scatter(i);
                s.position = pos;
                s.rotation = rot;
                s.log_scale = ls;
                s.opacity = op;
                for c in 0..16 {
                    s.color.coeffs[c]
                        .copy_from_slice(&sh[48 * i + 3 * c..48 * i + 3 * c + 3]);
                }
            }
        }
        Splats::Rigged(list) => {
            for (i, s) in list.iter_mut().enumerate() {
                let (pos, rot, ls, op) = scatter(i);
                s.position = pos;
                s.rotation = rot;
                s.log_scale = ls;
                s.opacity = op;
                for c in 0..16 {
                    s.color.coeffs[c]
                        .copy_from_slice(&sh[48 * i + 3 * c..48 * i + 3 * c + 3]);
                }
            }
        }
    }
    Ok(())
}

fn run_densify(
    scene: &mut Scene,
    stats: &DensifyStats,
    cfg: &FitConfig,
    extent: f32,
    rng: &mut ChaCha8Rng,
) -> super::densify::DensifyRemap {
    match &mut scene.splats {
        Splats::Free(list) => {
            let mul = vec![1.0f32; list.len()];
            densify_generic(list, stats, &cfg.densify, &mul, extent, rng)
        }
        Splats::Rigged(list) => {
            let mul: Vec<f32> = list
                .iter()
                .map(|r| {
                    crate::rig::facet_frame(
                        &scene.mesh.vertices,
                        &scene.mesh.facets,
                        r.facet_id as usize,
                    )
                    .map(|f| f.edge_scale)
                    .unwrap_or(1.0)
                })
                .collect();
            densify_generic(list, stats, &cfg.densify, &mul, extent, rng)
        }
    }
}
