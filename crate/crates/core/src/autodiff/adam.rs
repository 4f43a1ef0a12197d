use serde::{Deserialize, Serialize};

use super::{AutodiffError, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
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

/// Bias-corrected Adam with a learning rate per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    lrs: Vec<f64>,
    names: Vec<String>,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: u64,
}

impl Adam {
    /// Fresh state mirroring `params`; `lrs[i]` is the step size of `params[i]`.
    pub fn new(config: AdamConfig, params: &[Tensor], names: Vec<String>, lrs: Vec<f64>) -> Self {
        assert_eq!(params.len(), lrs.len());
        assert_eq!(params.len(), names.len());
        Self {
            config,
            lrs,
            names,
            m: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            t: 0,
        }
    }

    pub fn learning_rates(&self) -> &[f64] {
        &self.lrs
    }

    /// Replace the per-tensor step sizes, e.g. for a decay schedule.
    pub fn set_learning_rates(&mut self, lrs: Vec<f64>) {
        assert_eq!(lrs.len(), self.lrs.len());
        self.lrs = lrs;
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn moments(&self) -> (&[Tensor], &[Tensor]) {
        (&self.m, &self.v)
    }

    /// Restore moments and step counter, e.g. from a checkpoint.
    pub fn restore(&mut self, m: Vec<Tensor>, v: Vec<Tensor>, t: u64) -> Result<(), AutodiffError> {
        for (cur, new) in self.m.iter().zip(&m).chain(self.v.iter().zip(&v)) {
            if cur.shape() != new.shape() {
                return Err(AutodiffError::ShapeMismatch {
                    op: "Adam::restore",
                    expected: cur.shape().to_vec(),
                    found: new.shape().to_vec(),
                });
            }
        }
        if m.len() != self.m.len() || v.len() != self.v.len() {
            return Err(AutodiffError::ShapeMismatch {
                op: "Adam::restore",
                expected: vec![self.m.len()],
                found: vec![m.len()],
            });
        }
        self.m = m;
        self.v = v;
        self.t = t;
        Ok(())
    }

    /// One in-place update. Nothing is modified if any gradient is non-finite.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<(), AutodiffError> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(AutodiffError::ShapeMismatch {
                op: "Adam::step",
                expected: vec![self.m.len()],
                found: vec![params.len(), grads.len()],
            });
        }
        for ((p, g), name) in params.iter().zip(grads).zip(&self.names) {
            if p.shape() != g.shape() {
                return Err(AutodiffError::ShapeMismatch {
                    op: "Adam::step",
                    expected: p.shape().to_vec(),
                    found: g.shape().to_vec(),
                });
            }
            if let Some(index) = g.data().iter().position(|v| !v.is_finite()) {
                return Err(AutodiffError::NonFiniteGradient {
                    name: name.clone(),
                    index,
                });
            }
        }

        self.t += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let bias1 = 1.0 - beta1.powi(self.t as i32);
        let bias2 = 1.0 - beta2.powi(self.t as i32);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let lr = self.lrs[i];
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                let m_hat = *mi / bias1;
                let v_hat = *vi / bias2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
