use super::resunet::ResUnetParams;
use super::tensor::Scalar;
use crate::error::{ensure, Result};

/// Bias-corrected Adam moments for one model.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
}

impl AdamState {
    pub fn new<T: Scalar>(params: &ResUnetParams<T>) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors.iter().map(|t| vec![0.0; t.len()]).collect();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    /// One update of every tensor flagged in `trainable` that has a gradient.
    pub fn step<T: Scalar>(
        &mut self,
        params: &mut ResUnetParams<T>,
        grads: &[Option<&[T]>],
        trainable: &[bool],
        lr: f64,
    ) -> Result<()> {
        ensure!(
            grads.len() == params.tensors.len() && trainable.len() == params.tensors.len(),
            Shape,
            "optimizer got {} gradients for {} tensors",
            grads.len(),
            params.tensors.len()
        );
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (k, tensor) in params.tensors.iter_mut().enumerate() {
            let Some(g) = grads[k] else { continue };
            if !trainable[k] {
                continue;
            }
            ensure!(g.len() == tensor.len(), Shape, "gradient size mismatch for tensor {k}");
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for i in 0..g.len() {
                let gi = g[i].as_f64();
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                let p = tensor.data[i].as_f64() - lr * mh / (vh.sqrt() + self.eps);
                tensor.data[i] = T::of_f64(p);
            }
        }
        Ok(())
    }
}
