//! LARS and Adam.
//!
//! Both optimizers update every parameter that holds a gradient and skip the
//! rest, so a parameter whose gradient was never populated (or is exactly zero
//! everywhere) stays bit-identical.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{NnError, Result};
use crate::param::ParamStore;
use crate::scalar::Real;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LarsConfig {
    pub momentum: f64,
    pub weight_decay: f64,
    pub trust_coefficient: f64,
    pub eps: f64,
}

impl Default for LarsConfig {
    fn default() -> Self {
        Self {
            momentum: 0.9,
            weight_decay: 1e-6,
            trust_coefficient: 1e-3,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Per-parameter buffers keyed by parameter name, plus the step counter.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct OptimizerState<T> {
    pub step: u64,
    pub first: BTreeMap<String, Tensor<T>>,
    pub second: BTreeMap<String, Tensor<T>>,
}

fn check_finite<T: Real>(name: &str, g: &Tensor<T>) -> Result<()> {
    if g.all_finite() {
        Ok(())
    } else {
        Err(NnError::NonFinite(format!("gradient of {name}")))
    }
}

fn check_lr(lr: f64) -> Result<()> {
    if lr.is_finite() && lr >= 0.0 {
        Ok(())
    } else {
        Err(NnError::Argument(format!("invalid learning rate {lr}")))
    }
}

/// Layer-wise adaptive rate scaling with heavy-ball momentum.
///
/// For each parameter tensor `w` with gradient `g`:
/// `ratio = η‖w‖ / (‖g‖ + λ‖w‖ + ε)` (1 when `‖w‖ = 0`),
/// `v ← μv + lr·ratio·(g + λw)`, `w ← w − v`.
#[derive(Clone, Debug)]
pub struct Lars<T> {
    pub config: LarsConfig,
    pub state: OptimizerState<T>,
}

impl<T: Real> Lars<T> {
    pub fn new(config: LarsConfig) -> Self {
        Self {
            config,
            state: OptimizerState {
                step: 0,
                first: BTreeMap::new(),
                second: BTreeMap::new(),
            },
        }
    }

    /// Trust ratio for one parameter tensor.
    pub fn trust_ratio(&self, w_norm: f64, g_norm: f64) -> f64 {
        let c = &self.config;
        if w_norm > 0.0 && g_norm > 0.0 {
            c.trust_coefficient * w_norm / (g_norm + c.weight_decay * w_norm + c.eps)
        } else {
            1.0
        }
    }

    pub fn step(&mut self, store: &mut ParamStore<T>, lr: f64) -> Result<()> {
        check_lr(lr)?;
        for p in store.iter_mut() {
            if let Some(g) = &p.grad {
                check_finite(&p.name, g)?;
            }
        }
        self.state.step += 1;
        let c = self.config;
        for p in store.iter_mut() {
            let Some(g) = &p.grad else { continue };
            let g_norm = g.norm();
            if g_norm == 0.0 {
                continue;
            }
            let w_norm = p.value.norm();
            let local_lr = T::of(lr * self.trust_ratio(w_norm, g_norm));
            let mu = T::of(c.momentum);
            let wd = T::of(c.weight_decay);
            let buf = self
                .state
                .first
                .entry(p.name.clone())
                .or_insert_with(|| Tensor::zeros(p.value.shape()));
            for ((w, &gv), v) in p
                .value
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(buf.data_mut())
            {
                *v = mu * *v + local_lr * (gv + wd * *w);
                *w -= *v;
            }
        }
        Ok(())
    }
}

/// Bias-corrected Adam.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub config: AdamConfig,
    pub state: OptimizerState<T>,
}

impl<T: Real> Adam<T> {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            state: OptimizerState {
                step: 0,
                first: BTreeMap::new(),
                second: BTreeMap::new(),
            },
        }
    }

    pub fn step(&mut self, store: &mut ParamStore<T>, lr: f64) -> Result<()> {
        check_lr(lr)?;
        for p in store.iter_mut() {
            if let Some(g) = &p.grad {
                check_finite(&p.name, g)?;
            }
        }
        self.state.step += 1;
        let c = self.config;
        let t = self.state.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        for p in store.iter_mut() {
            let Some(g) = &p.grad else { continue };
            if g.norm() == 0.0 {
                continue;
            }
            let m = self
                .state
                .first
                .entry(p.name.clone())
                .or_insert_with(|| Tensor::zeros(p.value.shape()));
            let v = self
                .state
                .second
                .entry(p.name.clone())
                .or_insert_with(|| Tensor::zeros(p.value.shape()));
            for (((w, &gv), mv), vv) in p
                .value
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mv = b1 * *mv + (T::one() - b1) * gv;
                *vv = b2 * *vv + (T::one() - b2) * gv * gv;
                let m_hat = mv.to_f64().unwrap_or(f64::NAN) / bc1;
                let v_hat = vv.to_f64().unwrap_or(f64::NAN) / bc2;
                *w -= T::of(lr * m_hat / (v_hat.sqrt() + c.eps));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_param(w: f64, g: f64) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        let id = s.add("w", "l", Tensor::full(&[1], w)).unwrap();
        s.get_mut(id).grad = Some(Tensor::full(&[1], g));
        s
    }

    #[test]
    fn lars_zero_gradient_leaves_params_unchanged() {
        let mut s = ParamStore::<f64>::new();
        let id = s.add("w", "l", Tensor::from_fn(&[3], |i| i as f64 + 1.0)).unwrap();
        s.get_mut(id).grad = Some(Tensor::zeros(&[3]));
        let before = s.get(id).value.clone();
        let mut opt = Lars::new(LarsConfig::default());
        opt.step(&mut s, 0.25).unwrap();
        assert_eq!(s.get(id).value, before);
        assert!(opt.state.first.values().all(|b| b.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn lars_single_scalar_hand_computation() {
        let mut s = one_param(2.0, 1.0);
        let mut opt = Lars::new(LarsConfig {
            momentum: 0.0,
            weight_decay: 0.0,
            trust_coefficient: 1.0,
            eps: 0.0,
        });
        let lr = 0.1;
        opt.step(&mut s, lr).unwrap();
        let w = s.get(s.find("w").unwrap()).value.data()[0];
        assert!((w - (2.0 - 2.0 * lr)).abs() < 1e-15);
    }

    #[test]
    fn lars_reduces_to_sgd_when_ratio_is_one() {
        // w_norm = 4, g_norm = 2 => trust 0.5 gives ratio exactly 1
        let mut s = ParamStore::<f64>::new();
        let id = s.add("w", "l", Tensor::new(&[2], vec![4.0, 0.0]).unwrap()).unwrap();
        s.get_mut(id).grad = Some(Tensor::new(&[2], vec![0.0, 2.0]).unwrap());
        let mut opt = Lars::new(LarsConfig {
            momentum: 0.0,
            weight_decay: 0.0,
            trust_coefficient: 0.5,
            eps: 0.0,
        });
        opt.step(&mut s, 0.1).unwrap();
        assert_eq!(s.get(id).value.data(), &[4.0, -0.2]);
    }

    #[test]
    fn lars_zero_weight_falls_back_to_unit_ratio() {
        let opt = Lars::<f64>::new(LarsConfig::default());
        assert_eq!(opt.trust_ratio(0.0, 3.0), 1.0);
    }

    #[test]
    fn nan_gradient_is_reported() {
        let mut s = one_param(1.0, f64::NAN);
        assert!(matches!(
            Lars::new(LarsConfig::default()).step(&mut s, 0.1),
            Err(NnError::NonFinite(_))
        ));
        let mut s = one_param(1.0, f64::NAN);
        assert!(Adam::new(AdamConfig::default()).step(&mut s, 0.1).is_err());
    }

    #[test]
    fn adam_first_step_moves_by_lr_times_sign() {
        for g in [0.3, -7.0] {
            let mut s = one_param(1.0, g);
            Adam::new(AdamConfig::default()).step(&mut s, 3e-4).unwrap();
            let w = s.get(s.find("w").unwrap()).value.data()[0];
            assert!((w - (1.0 - 3e-4 * g.signum())).abs() < 1e-10, "{w}");
        }
    }

    #[test]
    fn adam_zero_grad_is_noop() {
        let mut s = one_param(1.5, 0.0);
        Adam::new(AdamConfig::default()).step(&mut s, 1.0).unwrap();
        assert_eq!(s.get(s.find("w").unwrap()).value.data(), &[1.5]);
    }
}
