use mbdno_tensor::Tensor;

use crate::config::AdamConfig;
use crate::error::{config, Result};

/// Adam with bias correction. Moments are kept per parameter tensor in the
/// model's parameter order.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(cfg: AdamConfig, params: &[Tensor]) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.shape())).collect::<Vec<_>>();
        Self {
            config: cfg,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn update(&mut self, params: &mut [Tensor], grads: &[Tensor], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != params.len() {
            return Err(config(format!(
                "Adam tracks {} tensors, got {} parameters and {} gradients",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            if p.shape() != g.shape() {
                return Err(config(format!("gradient shape {:?} for parameter {:?}", g.shape(), p.shape())));
            }
            let it = p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut());
            for (((p, &g), m), v) in it {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            }
        }
        Ok(())
    }

    /// Named tensors for a checkpoint; `step` travels as a one-element tensor.
    pub fn state(&self) -> Vec<(String, Tensor)> {
        let mut out = vec![("adam/step".to_string(), Tensor::scalar(self.step as f64))];
        for (i, (m, v)) in self.m.iter().zip(&self.v).enumerate() {
            out.push((format!("adam/m/{i}"), m.clone()));
            out.push((format!("adam/v/{i}"), v.clone()));
        }
        out
    }

    pub fn from_state(cfg: AdamConfig, params: &[Tensor], state: &[(String, Tensor)]) -> Result<Self> {
        let get = |name: &str| {
            state
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, t)| t)
                .ok_or_else(|| config(format!("optimizer state lacks {name}")))
        };
        let step = get("adam/step")?.item();
        if !(step >= 0.0 && step.fract() == 0.0) {
            return Err(config(format!("bad optimizer step {step}")));
        }
        let mut adam = Adam::new(cfg, params);
        adam.step = step as u64;
        for (i, p) in params.iter().enumerate() {
            for (slot, kind) in [(&mut adam.m[i], "m"), (&mut adam.v[i], "v")] {
                let t = get(&format!("adam/{kind}/{i}"))?;
                if t.shape() != p.shape() {
                    return Err(config(format!("optimizer {kind}/{i} has shape {:?}", t.shape())));
                }
                *slot = t.clone();
            }
        }
        Ok(adam)
    }
}
