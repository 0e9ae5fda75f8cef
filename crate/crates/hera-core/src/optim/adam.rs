//! Adam with bias correction and per-group learning rates.

use crate::error::{Error, Result};

pub const BETA1: f32 = 0.9;
pub const BETA2: f32 = 0.999;
pub const EPS: f32 = 1e-15;

#[derive(Clone, Debug, Default)]
pub struct AdamState {
    pub m: Vec<f32>,
    pub v: Vec<f32>,
    pub t: u32,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    /// Rebuilds moments after densification: surviving splats keep their
    /// rows (in order), new splats start from zero. `stride` is the number
    /// of scalars per splat in this group.
    pub fn remap(&mut self, keep: &[bool], added: usize, stride: usize) {
        let mut m = Vec::with_capacity((keep.iter().filter(|k| **k).count() + added) * stride);
        let mut v = Vec::with_capacity(m.capacity());
        for (i, &k) in keep.iter().enumerate() {
            if k {
                m.extend_from_slice(&self.m[i * stride..(i + 1) * stride]);
                v.extend_from_slice(&self.v[i * stride..(i + 1) * stride]);
            }
        }
        m.extend(std::iter::repeat_n(0.0, added * stride));
        v.extend(std::iter::repeat_n(0.0, added * stride));
        self.m = m;
        self.v = v;
    }
}

/// One Adam update over a flat parameter group.
pub fn adam_step(params: &mut [f32], grads: &[f32], state: &mut AdamState, lr: f32) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::ShapeMismatch(format!(
            "params {} grads {} state {}",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    state.t += 1;
    let bc1 = 1.0 - BETA1.powi(state.t as i32);
    let bc2 = 1.0 - BETA2.powi(state.t as i32);
    for ((p, &g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        *m = BETA1 * *m + (1.0 - BETA1) * g;
        *v = BETA2 * *v + (1.0 - BETA2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= lr * m_hat / (v_hat.sqrt() + EPS);
    }
    Ok(())
}
