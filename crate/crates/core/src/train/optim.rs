//! Adam with lazy per-parameter updates: a parameter whose gradient
//! is absent or identically zero on a step is skipped entirely, so
//! its moments and step count never move. This keeps groups that a
//! batch type cannot reach bit-identical across such steps.

use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct AdamSlot {
    pub m: Tensor<f32>,
    pub v: Tensor<f32>,
    pub t: u64,
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    slots: Vec<Option<AdamSlot>>,
}

impl Adam {
    pub fn new(lr: f64, n_params: usize) -> Adam {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            slots: (0..n_params).map(|_| None).collect(),
        }
    }

    pub fn slots(&self) -> &[Option<AdamSlot>] {
        &self.slots
    }

    pub fn set_slot(&mut self, idx: usize, slot: AdamSlot) {
        self.slots[idx] = Some(slot);
    }

    /// One bias-corrected update of parameter `idx`. The caller only
    /// invokes this for gradients with at least one nonzero entry.
    pub fn update(&mut self, idx: usize, param: &mut Tensor<f32>, grad: &Tensor<f32>) {
        debug_assert_eq!(param.shape(), grad.shape());
        let slot = self.slots[idx].get_or_insert_with(|| AdamSlot {
            m: Tensor::zeros(param.shape()),
            v: Tensor::zeros(param.shape()),
            t: 0,
        });
        slot.t += 1;
        let b1 = self.beta1 as f32;
        let b2 = self.beta2 as f32;
        let bc1 = 1.0 - (self.beta1).powi(slot.t as i32);
        let bc2 = 1.0 - (self.beta2).powi(slot.t as i32);
        let lr = self.lr as f32;
        let eps = self.eps as f32;
        for ((p, g), (m, v)) in param
            .data_mut()
            .iter_mut()
            .zip(grad.data())
            .zip(slot.m.data_mut().iter_mut().zip(slot.v.data_mut().iter_mut()))
        {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / bc1 as f32;
            let v_hat = *v / bc2 as f32;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}
