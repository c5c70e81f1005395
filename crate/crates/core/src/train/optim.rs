use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::lm::{ParamGrads, Params, Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Linear ramp to `base` over `warmup` steps, constant after. `step` is
/// 1-based.
pub fn warmup_lr(base: f64, warmup: usize, step: usize) -> f64 {
    if warmup == 0 || step >= warmup {
        base
    } else {
        base * step as f64 / warmup as f64
    }
}

/// Moment estimates aligned with a parameter store's entries.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub config: AdamConfig,
    /// Number of updates applied so far.
    pub t: u64,
    pub first: Vec<Option<Tensor<T>>>,
    pub second: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Adam<T> {
    pub fn new(config: AdamConfig, num_entries: usize) -> Self {
        Adam {
            config,
            t: 0,
            first: alloc::vec![None; num_entries],
            second: alloc::vec![None; num_entries],
        }
    }

    /// One update; entries without a gradient are left alone.
    pub fn step(&mut self, params: &mut Params<T>, grads: &ParamGrads<T>, lr: f64) {
        self.t += 1;
        let c = self.config;
        let bc1 = 1.0 - libm::pow(c.beta1, self.t as f64);
        let bc2 = 1.0 - libm::pow(c.beta2, self.t as f64);
        let b1 = T::from_f64_lossy(c.beta1);
        let b2 = T::from_f64_lossy(c.beta2);
        let one = T::one();
        let step = T::from_f64_lossy(lr / bc1);
        let inv_bc2 = T::from_f64_lossy(1.0 / bc2);
        let eps = T::from_f64_lossy(c.eps);
        for (i, (entry, g)) in params.entries_mut().iter_mut().zip(grads).enumerate() {
            let Some(g) = g else { continue };
            let m = self.first[i].get_or_insert_with(|| Tensor::zeros(g.shape()));
            let v = self.second[i].get_or_insert_with(|| Tensor::zeros(g.shape()));
            let p = entry.tensor.data_mut();
            for k in 0..p.len() {
                let gk = g.data()[k];
                let mk = b1 * m.data()[k] + (one - b1) * gk;
                let vk = b2 * v.data()[k] + (one - b2) * gk * gk;
                m.data_mut()[k] = mk;
                v.data_mut()[k] = vk;
                p[k] -= step * mk / ((vk * inv_bc2).sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::ParamEntry;
    use alloc::string::ToString;
    use alloc::vec;

    fn one_param(x: f64) -> Params<f64> {
        Params::from_entries(vec![ParamEntry {
            name: "x".to_string(),
            tensor: Tensor::from_vec(&[1], vec![x]),
            trainable: true,
        }])
        .unwrap()
    }

    #[test]
    fn warmup_half_way() {
        assert_eq!(warmup_lr(3e-4, 500, 250), 1.5e-4);
        assert_eq!(warmup_lr(3e-4, 500, 900), 3e-4);
        assert_eq!(warmup_lr(3e-4, 0, 1), 3e-4);
    }

    #[test]
    fn first_step_moves_by_lr() {
        // bias correction makes the first step exactly lr·sign(g)
        let mut p = one_param(1.0);
        let mut adam = Adam::new(
            AdamConfig {
                eps: 0.0,
                ..Default::default()
            },
            1,
        );
        adam.step(
            &mut p,
            &vec![Some(Tensor::from_vec(&[1], vec![0.37]))],
            0.01,
        );
        assert!((p.get("x").unwrap().data()[0] - 0.99).abs() < 1e-12);
    }

    #[test]
    fn minimizes_quadratic() {
        let mut p = one_param(3.0);
        let mut adam = Adam::new(AdamConfig::default(), 1);
        for _ in 0..2000 {
            let x = p.get("x").unwrap().data()[0];
            adam.step(
                &mut p,
                &vec![Some(Tensor::from_vec(&[1], vec![2.0 * (x - 1.0)]))],
                0.01,
            );
        }
        assert!((p.get("x").unwrap().data()[0] - 1.0).abs() < 1e-2);
    }

    #[test]
    fn zero_lr_is_noop() {
        let mut p = one_param(0.123);
        let before = p.clone();
        let mut adam = Adam::new(AdamConfig::default(), 1);
        adam.step(&mut p, &vec![Some(Tensor::from_vec(&[1], vec![5.0]))], 0.0);
        assert_eq!(p, before);
    }
}
