use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::layers::Params;

/// Adaptive-moment optimizer with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam {
            lr,
            beta1,
            beta2,
            eps,
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut Params, grads: &BTreeMap<String, Vec<f64>>) -> Result<()> {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (path, p) in params.iter_mut() {
            let g = grads
                .get(path)
                .ok_or_else(|| Error::validation(format!("no gradient for `{path}`")))?;
            let n = p.numel();
            let m = self.m.entry(path.clone()).or_insert_with(|| vec![0.0; n]);
            let v = self.v.entry(path.clone()).or_insert_with(|| vec![0.0; n]);
            for (i, w) in p.data_mut().iter_mut().enumerate() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                *w -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = Params::new();
        p.insert("w", Tensor::vector(vec![1.0, -2.0, 0.0]));
        let grads = BTreeMap::from([("w".to_string(), vec![0.5, -3.0, 0.0])]);
        let mut opt = Adam::new(0.1, 0.9, 0.999, 1e-8);
        opt.step(&mut p, &grads).unwrap();
        let w = p.get("w").unwrap().data();
        assert!((w[0] - 0.9).abs() < 1e-6);
        assert!((w[1] + 1.9).abs() < 1e-6);
        assert_eq!(w[2], 0.0);
    }

    #[test]
    fn zero_lr_is_a_no_op() {
        let mut p = Params::new();
        p.insert("w", Tensor::vector(vec![1.0, 2.0]));
        let before = p.clone();
        let grads = BTreeMap::from([("w".to_string(), vec![1.0, 1.0])]);
        let mut opt = Adam::new(0.0, 0.9, 0.999, 1e-8);
        opt.step(&mut p, &grads).unwrap();
        assert_eq!(p, before);
    }
}
