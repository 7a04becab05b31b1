use crate::error::{Error, Result};
use crate::model::ParamStore;
use crate::tensor::{Element, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam with bias correction. Moments are kept per parameter, in store order.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T: Element = f32> {
    pub config: AdamConfig,
    /// Number of steps taken.
    pub t: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Element> Adam<T> {
    pub fn new(config: AdamConfig, params: &ParamStore<T>) -> Self {
        let zeros = || params.values().iter().map(|p| Tensor::zeros(p.shape())).collect();
        Adam {
            config,
            t: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// One update with learning rate `lr`. Fails without touching anything
    /// if a gradient is non-finite or mis-shaped.
    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &[Tensor<T>], lr: f64) -> Result<()> {
        if grads.len() != params.len() || self.m.len() != params.len() {
            return Err(Error::Invalid(format!(
                "{} gradients and {} moment slots for {} parameters",
                grads.len(),
                self.m.len(),
                params.len()
            )));
        }
        for (i, (name, g)) in params.names().iter().zip(grads).enumerate() {
            if g.shape() != params.values()[i].shape() {
                return Err(Error::shape("adam_step", format!("gradient {:?} for {name} {:?}", g.shape(), params.values()[i].shape())));
            }
            if !g.all_finite() {
                return Err(Error::NonFiniteGradient(name.clone()));
            }
        }
        self.t += 1;
        let AdamConfig { beta1, beta2, epsilon } = self.config;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        for (i, p) in params.values_mut().iter_mut().enumerate() {
            let (m, v, g) = (self.m[i].data_mut(), self.v[i].data_mut(), grads[i].data());
            for (j, w) in p.data_mut().iter_mut().enumerate() {
                let gj = g[j].f64();
                let mj = beta1 * m[j].f64() + (1.0 - beta1) * gj;
                let vj = beta2 * v[j].f64() + (1.0 - beta2) * gj * gj;
                m[j] = T::of(mj);
                v[j] = T::of(vj);
                let update = lr * (mj / c1) / ((vj / c2).sqrt() + epsilon);
                *w = T::of(w.f64() - update);
            }
        }
        Ok(())
    }
}

/// `lr0 · 0.5^⌊epoch / period⌋`.
pub fn lr_schedule(epoch: u32, lr0: f64, period: u32) -> f64 {
    lr0 * 0.5f64.powi((epoch / period.max(1)) as i32)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(values: &[f32]) -> ParamStore<f32> {
        let mut s = ParamStore::default();
        let id = s.register("w", &[values.len()]);
        s.set(id, Tensor::new(vec![values.len()], values.to_vec()).unwrap()).unwrap();
        s
    }

    #[test]
    fn zero_gradient_leaves_params_and_decays_moments() {
        let mut p = store(&[0.5, -1.0]);
        let mut adam = Adam::new(AdamConfig::default(), &p);
        adam.m[0] = Tensor::new(vec![2], vec![1.0, 1.0]).unwrap();
        adam.v[0] = Tensor::new(vec![2], vec![4.0, 4.0]).unwrap();
        let before = p.values()[0].clone();
        let zero = vec![Tensor::zeros([2])];
        adam.step(&mut p, &zero, 1e-3).unwrap();
        assert!((adam.m[0].data()[0] - 0.9).abs() < 1e-7);
        assert!((adam.v[0].data()[0] - 4.0 * 0.999).abs() < 1e-6);

        let mut p = store(&[0.5, -1.0]);
        let mut fresh = Adam::new(AdamConfig::default(), &p);
        fresh.step(&mut p, &zero, 1e-3).unwrap();
        assert_eq!(p.values()[0], before);
    }

    #[test]
    fn first_step_moves_by_lr() {
        for g in [0.3f64, -2.0, 1e-3] {
            let mut p = store(&[0.0]);
            let mut adam = Adam::new(AdamConfig::default(), &p);
            let lr = 2e-4;
            adam.step(&mut p, &[Tensor::full([1], g as f32)], lr).unwrap();
            // m̂ = g, v̂ = g² ⇒ Δ = lr·g/(|g|+ε)
            let expect = -lr * g / (g.abs() + 1e-8);
            assert!((p.values()[0].data()[0] as f64 - expect).abs() < 1e-9);
            assert!((p.values()[0].data()[0].abs() as f64 - lr).abs() < 1e-6);
        }
    }

    #[test]
    fn nan_gradient_names_the_parameter() {
        let mut p = store(&[1.0]);
        let mut adam = Adam::new(AdamConfig::default(), &p);
        let err = adam.step(&mut p, &[Tensor::full([1], f32::NAN)], 1e-3).unwrap_err();
        assert!(err.to_string().contains('w'), "{err}");
        assert_eq!(adam.t, 0);
        assert_eq!(p.values()[0].data()[0], 1.0);
    }

    #[test]
    fn repeated_runs_are_identical() {
        let run = || {
            let mut p = store(&[0.1, 0.2, 0.3]);
            let mut adam = Adam::new(AdamConfig::default(), &p);
            for k in 0..10 {
                let g: Vec<f32> = (0..3).map(|i| ((k * 3 + i) as f32 * 0.37).sin()).collect();
                adam.step(&mut p, &[Tensor::new(vec![3], g).unwrap()], 1e-2).unwrap();
            }
            p.values()[0].clone()
        };
        assert_eq!(run().data(), run().data());
    }

    #[test]
    fn schedule_examples() {
        assert_eq!(lr_schedule(0, 2e-4, 30), 2e-4);
        assert_eq!(lr_schedule(29, 2e-4, 30), 2e-4);
        assert_eq!(lr_schedule(30, 2e-4, 30), 1e-4);
        assert_eq!(lr_schedule(60, 2e-4, 30), 5e-5);
        for e in 0..=200u32 {
            assert_eq!(lr_schedule(e, 2e-4, 30), 2e-4 * 0.5f64.powf((e / 30) as f64));
        }
    }
}
