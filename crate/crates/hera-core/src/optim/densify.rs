//! Adaptive density control: clone small high-gradient splats, split large
//! ones, prune nearly transparent ones.

use glam::{Mat3, Quat, Vec3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::rig::RiggedSplat;
use crate::splat::GaussianSplat;

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct DensifyConfig {
    /// Densify every this many iterations during stage 2.
    pub interval: u32,
    /// Mean screen-space positional gradient norm that marks a splat for
    /// cloning or splitting.
    pub grad_threshold: f32,
    /// Splats whose largest activated world scale exceeds this fraction of
    /// the scene extent split instead of cloning.
    pub scale_split_threshold: f32,
    /// Splats with activated opacity below this are removed.
    pub opacity_prune_threshold: f32,
    pub start_iter: u32,
    /// 0 means half of the total iteration count.
    pub stop_iter: u32,
}

impl Default for DensifyConfig {
    fn default() -> Self {
        Self {
            interval: 100,
            grad_threshold: 2e-4,
            scale_split_threshold: 0.01,
            opacity_prune_threshold: 5e-3,
            start_iter: 500,
            stop_iter: 0,
        }
    }
}

/// Screen-gradient statistics accumulated between densification events.
#[derive(Clone, Debug, Default)]
pub struct DensifyStats {
    pub grad_accum: Vec<f32>,
    pub count: Vec<u32>,
}

impl DensifyStats {
    pub fn new(n: usize) -> Self {
        Self {
            grad_accum: vec![0.0; n],
            count: vec![0; n],
        }
    }

    pub fn accumulate(&mut self, mean2d_norm: &[f32], visible: &[bool]) {
        for i in 0..self.grad_accum.len() {
            if visible[i] {
                self.grad_accum[i] += mean2d_norm[i];
                self.count[i] += 1;
            }
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct DensifyOutcome {
    pub cloned: usize,
    pub split: usize,
    pub pruned: usize,
    pub added: usize,
}

/// How the splat list was rebuilt: `keep[i]` for surviving originals (order
/// preserved), then `added` fresh entries. Optimizer state remaps the same
/// way.
#[derive(Clone, Debug)]
pub struct DensifyRemap {
    pub keep: Vec<bool>,
    pub added: usize,
    pub outcome: DensifyOutcome,
}

pub(crate) trait SplatLike: Copy {
    fn log_scale(&self) -> Vec3;
    fn set_log_scale(&mut self, v: Vec3);
    fn position(&self) -> Vec3;
    fn set_position(&mut self, v: Vec3);
    fn rotation(&self) -> Quat;
    fn opacity_logit(&self) -> f32;
}

impl SplatLike for GaussianSplat {
    fn log_scale(&self) -> Vec3 {
        self.log_scale
    }
    fn set_log_scale(&mut self, v: Vec3) {
        self.log_scale = v;
    }
    fn position(&self) -> Vec3 {
        self.position
    }
    fn set_position(&mut self, v: Vec3) {
        self.position = v;
    }
    fn rotation(&self) -> Quat {
        self.rotation
    }
    fn opacity_logit(&self) -> f32 {
        self.opacity
    }
}

impl SplatLike for RiggedSplat {
    fn log_scale(&self) -> Vec3 {
        self.log_scale
    }
    fn set_log_scale(&mut self, v: Vec3) {
        self.log_scale = v;
    }
    fn position(&self) -> Vec3 {
        self.position
    }
    fn set_position(&mut self, v: Vec3) {
        self.position = v;
    }
    fn rotation(&self) -> Quat {
        self.rotation
    }
    fn opacity_logit(&self) -> f32 {
        self.opacity
    }
}

const SPLIT_SCALE_SHRINK: f32 = 1.6;

fn sample_standard_normal(rng: &mut ChaCha8Rng) -> Vec3 {
    // Box-Muller; three independent standard normals.
    let mut pair = || {
        let u1: f32 = rng.random_range(f32::MIN_POSITIVE..1.0);
        let u2: f32 = rng.random_range(0.0..1.0);
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = std::f32::consts::TAU * u2;
        (r * theta.cos(), r * theta.sin())
    };
    let (a, b) = pair();
    let (c, _) = pair();
    Vec3::new(a, b, c)
}

/// Applies one densify-and-prune event. `scale_mul[i]` converts a splat's
/// activated scale into world units (the facet edge length for rigged
/// splats, 1 for free ones); `extent` is the scene extent in meters.
pub(crate) fn densify_generic<T: SplatLike>(
    splats: &mut Vec<T>,
    stats: &DensifyStats,
    cfg: &DensifyConfig,
    scale_mul: &[f32],
    extent: f32,
    rng: &mut ChaCha8Rng,
) -> DensifyRemap {
    let n = splats.len();
    let mut keep = vec![true; n];
    let mut fresh: Vec<T> = Vec::new();
    let mut outcome = DensifyOutcome::default();

    for i in 0..n {
        let mean_grad = stats.grad_accum[i] / stats.count[i].max(1) as f32;
        let opacity = crate::geom::sigmoid(splats[i].opacity_logit());
        if opacity < cfg.opacity_prune_threshold {
            keep[i] = false;
            outcome.pruned += 1;
            continue;
        }
        if mean_grad <= cfg.grad_threshold {
            continue;
        }
        let world_scale = splats[i].log_scale().exp().max_element() * scale_mul[i];
        if world_scale < cfg.scale_split_threshold * extent {
            // Clone: both copies share parameters.
            fresh.push(splats[i]);
            outcome.cloned += 1;
        } else {
            // Split: two children sampled from the parent Gaussian with
            // shrunken scale; the parent goes away.
            keep[i] = false;
            outcome.split += 1;
            let parent = splats[i];
            let rot = Mat3::from_quat(parent.rotation().normalize());
            let sigma = parent.log_scale().exp();
            for _ in 0..2 {
                let offset = rot * (sigma * sample_standard_normal(rng));
                let mut child = parent;
                child.set_position(parent.position() + offset);
                child.set_log_scale(parent.log_scale() - Vec3::splat(SPLIT_SCALE_SHRINK.ln()));
                fresh.push(child);
            }
        }
    }

    outcome.added = fresh.len();
    let mut rebuilt = Vec::with_capacity(n + fresh.len());
    for (i, s) in splats.iter().enumerate() {
        if keep[i] {
            rebuilt.push(*s);
        }
    }
    rebuilt.extend(fresh);
    *splats = rebuilt;
    DensifyRemap {
        keep,
        added: outcome.added,
        outcome,
    }
}
