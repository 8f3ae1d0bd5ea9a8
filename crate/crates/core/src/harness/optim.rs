use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Adam {
    cfg: AdamConfig,
    step: u32,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

impl Adam {
    pub fn new(cfg: AdamConfig, shapes: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let (m, v) = shapes
            .into_iter()
            .map(|(r, c)| (Matrix::zeros(r, c), Matrix::zeros(r, c)))
            .unzip();
        Adam { cfg, step: 0, m, v }
    }

    pub fn steps_taken(&self) -> u32 {
        self.step
    }

    /// One bias-corrected update of `params` in place.
    pub fn step(&mut self, params: &mut [Matrix], grads: &[Matrix]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::contract(format!(
                "optimizer tracks {} tensors, got {} parameters and {} gradients",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.cfg;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            if p.shape() != g.shape() {
                return Err(Error::dim("adam step", p.shape(), g.shape()));
            }
            let (p, g) = (p.as_mut_slice(), g.as_slice());
            let (m, v) = (m.as_mut_slice(), v.as_mut_slice());
            for k in 0..p.len() {
                m[k] = beta1 * m[k] + (1.0 - beta1) * g[k];
                v[k] = beta2 * v[k] + (1.0 - beta2) * g[k] * g[k];
                let m_hat = m[k] / bc1;
                let v_hat = v[k] / bc2;
                p[k] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let mut adam = Adam::new(AdamConfig { lr: 0.1, ..AdamConfig::default() }, [(1, 2)]);
        let mut p = vec![Matrix::from_rows(&[[1.0, -1.0]])];
        adam.step(&mut p, &[Matrix::from_rows(&[[3.0, -0.5]])]).unwrap();
        // m̂ = g and v̂ = g², so the step is lr·g/(|g| + eps).
        assert!((p[0][(0, 0)] - 0.9).abs() < 1e-7);
        assert!((p[0][(0, 1)] + 0.9).abs() < 1e-7);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut adam = Adam::new(AdamConfig { lr: 0.05, ..AdamConfig::default() }, [(1, 1)]);
        let mut p = vec![Matrix::scalar(4.0)];
        for _ in 0..2000 {
            let g = Matrix::scalar(2.0 * (p[0][(0, 0)] - 1.5));
            adam.step(&mut p, &[g]).unwrap();
        }
        assert!((p[0][(0, 0)] - 1.5).abs() < 1e-3);
        assert_eq!(adam.steps_taken(), 2000);
    }

    #[test]
    fn zero_rate_is_a_no_op() {
        let mut adam = Adam::new(AdamConfig { lr: 0.0, ..AdamConfig::default() }, [(2, 2)]);
        let before = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]);
        let mut p = vec![before.clone()];
        adam.step(&mut p, &[Matrix::ones(2, 2)]).unwrap();
        assert_eq!(p[0], before);
    }

    #[test]
    fn mismatched_inputs() {
        let mut adam = Adam::new(AdamConfig::default(), [(1, 1)]);
        let mut p = vec![Matrix::scalar(1.0)];
        assert!(adam.step(&mut p, &[]).is_err());
        assert!(adam.step(&mut p, &[Matrix::zeros(1, 2)]).is_err());
    }
}
