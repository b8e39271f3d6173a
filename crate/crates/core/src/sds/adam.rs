use std::collections::BTreeMap;
use std::f32::consts::PI;

use serde::{Deserialize, Serialize};

use crate::gradtape::{TapeError, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update in place. `step` counts from 1.
pub fn adam_update(
    cfg: &AdamConfig,
    param: &mut [f32],
    m: &mut [f32],
    v: &mut [f32],
    grad: &[f32],
    lr: f32,
    step: u64,
) {
    let bc1 = 1.0 - cfg.beta1.powi(step as i32);
    let bc2 = 1.0 - cfg.beta2.powi(step as i32);
    for i in 0..param.len() {
        let g = grad[i];
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        param[i] -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
}

/// Moments for a named set of tensors.
#[derive(Clone, Debug, Default)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    moments: BTreeMap<String, (Vec<f32>, Vec<f32>)>,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            ..Default::default()
        }
    }

    /// Updates every parameter that has a gradient. Parameters without one
    /// are left untouched and their moments do not advance.
    pub fn step(
        &mut self,
        params: &mut BTreeMap<String, Tensor>,
        grads: &BTreeMap<String, Tensor>,
        lr: f32,
    ) -> Result<(), TapeError> {
        self.step += 1;
        for (name, g) in grads {
            let Some(p) = params.get_mut(name) else { continue };
            p.expect_same_shape(g)?;
            let (m, v) = self
                .moments
                .entry(name.clone())
                .or_insert_with(|| (vec![0.0; g.len()], vec![0.0; g.len()]));
            adam_update(&self.config, p.data_mut(), m, v, g.data(), lr, self.step);
        }
        Ok(())
    }
}

/// Cosine decay from `start` to `end` over a run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LrSchedule {
    pub start: f32,
    pub end: f32,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self {
            start: 0.01,
            end: 0.001,
        }
    }
}

impl LrSchedule {
    /// Slower decay for network weights, which diverge at the explicit rate.
    pub fn dip_default() -> Self {
        Self {
            start: 0.001,
            end: 0.0001,
        }
    }

    pub fn constant(lr: f32) -> Self {
        Self { start: lr, end: lr }
    }

    /// Rate for 0-based `step` of `total`.
    pub fn at(&self, step: usize, total: usize) -> f32 {
        if total <= 1 {
            return self.start;
        }
        let p = step.min(total - 1) as f32 / (total - 1) as f32;
        self.end + (self.start - self.end) * 0.5 * (1.0 + (PI * p).cos())
    }
}
