//! Rectified Adam optimizer.
//!
//! Moment estimates follow Adam; the step is rectified by the variance
//! correction term r_t once the approximated SMA length rho_t exceeds 4, and
//! falls back to a plain bias-corrected momentum step before that.

use crate::error::{Error, Result};
use crate::nets::ParamStore;
use crate::tensor::{sc, Scalar};

/// Optimizer hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RAdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl RAdamParams {
    pub fn with_lr(lr: f64) -> Self {
        RAdamParams {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Per-parameter moment buffers plus the shared step count.
#[derive(Debug, Clone)]
pub struct RAdamState<S> {
    pub hp: RAdamParams,
    pub t: u64,
    pub m: Vec<Vec<S>>,
    pub v: Vec<Vec<S>>,
}

impl<S: Scalar> RAdamState<S> {
    pub fn new(store: &ParamStore<S>, hp: RAdamParams) -> Self {
        Self::new_multi(&[store], hp)
    }

    /// State spanning several stores; moment buffers follow store order.
    pub fn new_multi(stores: &[&ParamStore<S>], hp: RAdamParams) -> Self {
        let m: Vec<Vec<S>> = stores
            .iter()
            .flat_map(|s| s.iter().map(|p| vec![S::zero(); p.data.len()]))
            .collect();
        RAdamState {
            hp,
            t: 0,
            v: m.clone(),
            m,
        }
    }

    /// Shared per-step coefficients: (bias-corrected lr numerator terms).
    /// Returns (use_rectified, step_size) where step_size already folds in
    /// the 1/(1 - beta1^t) momentum bias correction and, when rectified, the
    /// r_t term.
    fn step_coefficients(&self) -> (bool, f64, f64) {
        let t = self.t as f64;
        let b1t = self.hp.beta1.powi(self.t as i32);
        let b2t = self.hp.beta2.powi(self.t as i32);
        let rho_inf = 2.0 / (1.0 - self.hp.beta2) - 1.0;
        let rho_t = rho_inf - 2.0 * t * b2t / (1.0 - b2t);
        if rho_t > 4.0 {
            let r_t = (((rho_t - 4.0) * (rho_t - 2.0) * rho_inf)
                / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t))
                .sqrt();
            let step = self.hp.lr * r_t / (1.0 - b1t);
            (true, step, 1.0 - b2t)
        } else {
            (false, self.hp.lr / (1.0 - b1t), 1.0 - b2t)
        }
    }

    /// One update over all parameters. `grads` must align with the store.
    /// NaN or Inf gradients abort with the offending parameter named.
    pub fn step(&mut self, store: &mut ParamStore<S>, grads: &[Vec<S>]) -> Result<()> {
        self.step_multi(&mut [store], grads)
    }

    /// One update across several stores; gradients are flattened in the same
    /// store order used by [`RAdamState::new_multi`].
    pub fn step_multi(
        &mut self,
        stores: &mut [&mut ParamStore<S>],
        grads: &[Vec<S>],
    ) -> Result<()> {
        if grads.len() != self.m.len() {
            return Err(Error::Numeric {
                detail: format!(
                    "gradient table has {} entries, optimizer tracks {}",
                    grads.len(),
                    self.m.len()
                ),
            });
        }
        {
            let mut gi = grads.iter();
            for store in stores.iter() {
                for p in store.iter() {
                    let g = gi.next().expect("grad count checked above");
                    if g.iter().any(|v| !v.is_finite()) {
                        return Err(Error::Numeric {
                            detail: format!("non-finite gradient for parameter {}", p.name),
                        });
                    }
                }
            }
        }
        self.t += 1;
        let (rectified, step, bias2) = self.step_coefficients();
        let b1 = sc::<S>(self.hp.beta1);
        let b2 = sc::<S>(self.hp.beta2);
        let one_m_b1 = S::one() - b1;
        let one_m_b2 = S::one() - b2;
        let step_s = sc::<S>(step);
        let inv_bias2_sqrt = sc::<S>(1.0 / bias2.sqrt());
        let eps = sc::<S>(self.hp.eps);

        let mut cursor = 0usize;
        for store in stores.iter_mut() {
            for param in store.iter_mut() {
                let grad = &grads[cursor];
                let m = &mut self.m[cursor];
                let v = &mut self.v[cursor];
                cursor += 1;
                for i in 0..param.data.len() {
                    let g = grad[i];
                    m[i] = b1 * m[i] + one_m_b1 * g;
                    v[i] = b2 * v[i] + one_m_b2 * g * g;
                    let update = if rectified {
                        step_s * m[i] / (v[i].sqrt() * inv_bias2_sqrt + eps)
                    } else {
                        step_s * m[i]
                    };
                    param.data[i] = param.data[i] - update;
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_param_store(values: Vec<f64>) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        let n = values.len();
        s.add("theta", vec![n], values);
        s
    }

    #[test]
    fn first_step_is_plain_momentum() {
        // With beta2 = 0.999, rho_1 = 1 <= 4, so the update is -lr * m_hat
        // and m_hat equals the raw gradient.
        let mut store = single_param_store(vec![1.0, -2.0]);
        let mut state = RAdamState::new(&store, RAdamParams::with_lr(0.01));
        let grads = vec![vec![0.5, -1.5]];
        state.step(&mut store, &grads).unwrap();
        let p = &store.iter().next().unwrap().data;
        assert!((p[0] - (1.0 - 0.01 * 0.5)).abs() < 1e-15);
        assert!((p[1] - (-2.0 - 0.01 * 1.5)).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut store = single_param_store(vec![0.3, 0.7, -0.4]);
        let before: Vec<f64> = store.iter().next().unwrap().data.clone();
        let mut state = RAdamState::new(&store, RAdamParams::with_lr(0.1));
        for _ in 0..50 {
            state.step(&mut store, &[vec![0.0; 3]]).unwrap();
        }
        assert_eq!(store.iter().next().unwrap().data, before);
    }

    #[test]
    fn quadratic_bowl_decreases_monotonically_after_warmup() {
        // f(theta) = theta^2, gradient 2 theta. Rectification kicks in at
        // t = 5 for beta2 = 0.999; |theta| must then fall monotonically.
        let mut store = single_param_store(vec![1.0]);
        let mut state = RAdamState::new(&store, RAdamParams::with_lr(0.1));
        let mut history = Vec::new();
        for _ in 0..200 {
            let theta = store.iter().next().unwrap().data[0];
            history.push(theta.abs());
            state.step(&mut store, &[vec![2.0 * theta]]).unwrap();
        }
        history.push(store.iter().next().unwrap().data[0].abs());
        for t in 6..history.len() {
            assert!(
                history[t] <= history[t - 1] + 1e-15,
                "|theta| rose at step {t}: {} -> {}",
                history[t - 1],
                history[t]
            );
        }
        assert!(history.last().unwrap() < &0.05);
    }

    #[test]
    fn nan_gradient_aborts_with_diagnostics() {
        let mut store = single_param_store(vec![1.0]);
        let mut state = RAdamState::new(&store, RAdamParams::with_lr(0.1));
        let err = state.step(&mut store, &[vec![f64::NAN]]).unwrap_err();
        match err {
            Error::Numeric { detail } => assert!(detail.contains("theta")),
            other => panic!("unexpected error {other:?}"),
        }
    }
}
