use crate::renderer::{GradField, Texture, TrainableMask};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Adam moments for the trainable texels only.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    ids: Vec<usize>,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(mask: &TrainableMask) -> Self {
        let ids = mask.trainable_ids();
        let n = ids.len() * 3;
        Self {
            ids,
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
            beta1: BETA1,
            beta2: BETA2,
            eps: EPSILON,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    /// One bias-corrected Adam step on every trainable channel, then clamp to
    /// `[0, 1]`. Masked texels are never written.
    pub fn update(&mut self, texture: &mut Texture, grad: &GradField, lr: f64) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let g = grad.as_slice();
        for (slot, &id) in self.ids.iter().enumerate() {
            for c in 0..3 {
                let k = 3 * slot + c;
                let gi = g[3 * id + c];
                self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * gi;
                self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * gi * gi;
                let m_hat = self.m[k] / bc1;
                let v_hat = self.v[k] / bc2;
                let delta = lr * m_hat / (v_hat.sqrt() + self.eps);
                if delta != 0.0 {
                    let cur = texture.texel(id)[c];
                    texture.set_channel(id, c, cur - delta);
                }
            }
        }
    }
}
