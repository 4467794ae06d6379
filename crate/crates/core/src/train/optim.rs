use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::model::ParamStore;
use crate::tensor::Tensor;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPS: f64 = 1e-8;

/// Bias-corrected Adam with per-path moment buffers.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Adam {
    pub t: u64,
    m: BTreeMap<String, Tensor>,
    v: BTreeMap<String, Tensor>,
}

impl Adam {
    pub fn new() -> Self {
        Self::default()
    }

    /// One update of every parameter named in `grads`. Each must exist,
    /// be trainable and match the gradient's shape.
    pub fn step(
        &mut self,
        params: &mut ParamStore,
        grads: &BTreeMap<String, Tensor>,
        lr: f64,
    ) -> Result<()> {
        for (path, g) in grads {
            let p = params.get(path).ok_or_else(|| {
                Error::contract(format!("gradient for unknown parameter `{path}`"))
            })?;
            if !p.trainable {
                return Err(Error::contract(format!(
                    "gradient for frozen parameter `{path}`"
                )));
            }
            if p.value.dims() != g.dims() {
                return Err(Error::contract(format!(
                    "gradient shape {:?} for `{path}` of shape {:?}",
                    g.dims(),
                    p.value.dims()
                )));
            }
        }
        self.t += 1;
        let c1 = 1.0 - BETA1.powi(self.t as i32);
        let c2 = 1.0 - BETA2.powi(self.t as i32);
        for (path, g) in grads {
            let m = self
                .m
                .entry(path.clone())
                .or_insert_with(|| Tensor::zeros(g.dims()));
            let v = self
                .v
                .entry(path.clone())
                .or_insert_with(|| Tensor::zeros(g.dims()));
            let value = params.value_mut(path)?;
            for (((x, &gi), mi), vi) in value
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = BETA1 * *mi + (1.0 - BETA1) * gi;
                *vi = BETA2 * *vi + (1.0 - BETA2) * gi * gi;
                let m_hat = *mi / c1;
                let v_hat = *vi / c2;
                *x -= lr * m_hat / (v_hat.sqrt() + EPS);
            }
        }
        Ok(())
    }
}
