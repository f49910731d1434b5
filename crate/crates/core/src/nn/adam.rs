use super::params::ParamSet;
use crate::{Error, Result};

pub const BASE_LR: f64 = 2e-4;
pub const BETA1: f64 = 0.5;
pub const BETA2: f64 = 0.999;
pub const EPS: f64 = 1e-8;
/// Per-epoch multiplicative learning-rate decay.
pub const LR_DECAY: f64 = 0.6;

/// Bias-corrected Adam with exponential per-epoch learning-rate decay.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub base_lr: f64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub decay: f64,
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &ParamSet) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|p| vec![0.0; p.tensor.values().len()]).collect();
        Self {
            base_lr: BASE_LR,
            lr: BASE_LR,
            beta1: BETA1,
            beta2: BETA2,
            eps: EPS,
            decay: LR_DECAY,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// `lr = base_lr · decay^epoch`.
    pub fn lr_decay(&mut self, epoch: u32) {
        self.lr = self.base_lr * self.decay.powi(epoch as i32);
    }

    /// Applies one update from the gradients held in `params`.
    pub fn step(&mut self, params: &mut ParamSet) -> Result<()> {
        if params.len() != self.m.len() {
            return Err(Error::Shape(format!("optimizer tracks {} tensors, got {}", self.m.len(), params.len())));
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for ((p, m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            if m.len() != p.tensor.values().len() {
                return Err(Error::Shape(format!("optimizer moment size mismatch for {}", p.name)));
            }
            let grads = p.tensor.grad().to_vec();
            for (k, (w, g)) in p.tensor.values_mut().iter_mut().zip(grads).enumerate() {
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * g;
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * g * g;
                let mhat = m[k] / bc1;
                let vhat = v[k] / bc2;
                *w -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::tensor::{Shape, Tensor};

    fn set_with(values: Vec<f64>) -> ParamSet {
        let mut s = ParamSet::new();
        let n = values.len();
        s.push("p", Tensor::new(Shape::new(1, 1, 1, n), values).unwrap());
        s
    }

    fn set_grad(s: &mut ParamSet, g: f64) {
        s.get_mut(0).tensor.grad_mut().iter_mut().for_each(|x| *x = g);
    }

    /// Scalar Adam written straight from the textbook update rule.
    fn scalar_adam(mut w: f64, grads: &[f64]) -> f64 {
        let (mut m, mut v) = (0.0, 0.0);
        for (i, g) in grads.iter().enumerate() {
            let t = (i + 1) as i32;
            m = 0.5 * m + 0.5 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.5f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            w -= 2e-4 * mh / (vh.sqrt() + 1e-8);
        }
        w
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut s = set_with(vec![1.0, -3.0]);
        let mut adam = AdamState::new(&s);
        set_grad(&mut s, 1.0);
        adam.step(&mut s).unwrap();
        let want = 2e-4 / (1.0 + 1e-8);
        assert!((s.get(0).tensor.values()[0] - (1.0 - want)).abs() < 1e-15);
        assert!((s.get(0).tensor.values()[1] - (-3.0 - want)).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut s = set_with(vec![0.25; 4]);
        let mut adam = AdamState::new(&s);
        for _ in 0..5 {
            adam.step(&mut s).unwrap();
        }
        assert!(s.get(0).tensor.values().iter().all(|&v| v == 0.25));
    }

    #[test]
    fn matches_scalar_reference() {
        let mut s = set_with(vec![0.7]);
        let mut adam = AdamState::new(&s);
        for _ in 0..2 {
            set_grad(&mut s, 0.3);
            adam.step(&mut s).unwrap();
        }
        let want = scalar_adam(0.7, &[0.3, 0.3]);
        assert!((s.get(0).tensor.values()[0] - want).abs() < 1e-12);
    }

    #[test]
    fn decay_schedule() {
        let mut adam = AdamState::new(&ParamSet::new());
        adam.lr_decay(0);
        assert!((adam.lr - 2e-4).abs() < 1e-18);
        adam.lr_decay(1);
        assert!((adam.lr - 1.2e-4).abs() < 1e-18);
        adam.lr_decay(3);
        assert!((adam.lr - 4.32e-5).abs() < 1e-18);
    }
}
