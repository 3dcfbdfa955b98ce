use crate::tensor::DiffTensor;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Bias-corrected Adam over a fixed, ordered parameter list.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(params: &[DiffTensor]) -> Self {
        Self {
            beta1: BETA1,
            beta2: BETA2,
            eps: EPSILON,
            step: 0,
            m: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
        }
    }

    /// One update at `rate`. Parameters that do not require gradients, or
    /// that received none, are left untouched along with their moments.
    pub fn step(&mut self, params: &[DiffTensor], rate: f64) {
        assert_eq!(params.len(), self.m.len(), "optimizer built for a different parameter list");
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (k, p) in params.iter().enumerate() {
            if !p.requires_grad() {
                continue;
            }
            let Some(g) = p.grad() else { continue };
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            p.update_values(|x| {
                for i in 0..x.len() {
                    m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                    v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                    let m_hat = m[i] / bc1;
                    let v_hat = v[i] / bc2;
                    x[i] -= rate * m_hat / (v_hat.sqrt() + self.eps);
                }
            });
        }
    }
}
