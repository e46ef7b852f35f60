use ndarray::{Array2, Zip};

use crate::autodiff::Mat;
use crate::error::{Error, Result};

/// Adam with bias-corrected moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Steps taken so far.
    pub t: u64,
    pub m: Vec<Mat>,
    pub v: Vec<Mat>,
}

impl Adam {
    pub fn new(lr: f64, params: &[Mat]) -> Self {
        let zeros: Vec<Mat> = params.iter().map(|p| Array2::zeros(p.dim())).collect();
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, m: zeros.clone(), v: zeros }
    }

    pub fn step(&mut self, params: &mut [Mat], grads: &[Mat]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != params.len() {
            return Err(Error::Shape(format!("{} params, {} grads, {} moments", params.len(), grads.len(), self.m.len())));
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            if p.dim() != g.dim() {
                return Err(Error::Shape(format!("param {:?} vs grad {:?}", p.dim(), g.dim())));
            }
            Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_hand_iteration_on_a_quadratic() {
        // f(x) = x^2 from x = 1, lr 0.1
        let mut x = vec![Array2::from_elem((1, 1), 1.0)];
        let mut adam = Adam::new(0.1, &x);
        let expected = [0.9000000005, 0.8004122286917928, 0.7015862729460303];
        for want in expected {
            let g = vec![x[0].mapv(|v| 2.0 * v)];
            adam.step(&mut x, &g).unwrap();
            assert!((x[0][[0, 0]] - want).abs() < 1e-12, "{} vs {want}", x[0][[0, 0]]);
        }
        assert_eq!(adam.t, 3);
    }

    #[test]
    fn rejects_mismatched_gradients() {
        let mut x = vec![Array2::zeros((2, 2))];
        let mut adam = Adam::new(0.1, &x);
        assert!(adam.step(&mut x, &[Array2::zeros((1, 2))]).is_err());
    }
}
