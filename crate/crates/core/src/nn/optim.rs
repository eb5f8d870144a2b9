use serde::{Deserialize, Serialize};

use super::tensor::{Parameter, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First and second moment estimates, one pair per parameter, plus the step count.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub t: u64,
    pub cfg: AdamConfig,
}

impl AdamState {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Parameter>, cfg: AdamConfig) -> AdamState {
        let m: Vec<Tensor> = params.into_iter().map(|p| p.value.zeros_like()).collect();
        let v = m.clone();
        AdamState { m, v, t: 0, cfg }
    }
}

/// One bias-corrected Adam update using each parameter's accumulated `grad`.
pub fn adam_step(params: &mut [&mut Parameter], state: &mut AdamState, lr: f64) -> Result<()> {
    if params.len() != state.m.len() {
        return Err(Error::Shape(format!("adam: {} parameters but state for {}", params.len(), state.m.len())));
    }
    state.t += 1;
    let AdamConfig { beta1, beta2, eps } = state.cfg;
    let c1 = 1.0 - beta1.powf(state.t as f64);
    let c2 = 1.0 - beta2.powf(state.t as f64);
    for ((p, m), v) in params.iter_mut().zip(&mut state.m).zip(&mut state.v) {
        if p.value.shape != m.shape {
            return Err(Error::Shape(format!("adam: parameter {} changed shape", p.name)));
        }
        for i in 0..p.value.data.len() {
            let g = p.grad.data[i];
            m.data[i] = beta1 * m.data[i] + (1.0 - beta1) * g;
            v.data[i] = beta2 * v.data[i] + (1.0 - beta2) * g * g;
            let mhat = m.data[i] / c1;
            let vhat = v.data[i] / c2;
            p.value.data[i] -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Triangular cyclical learning rate, stepped once per optimizer iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CyclicalLr {
    pub base_lr: f64,
    pub max_lr: f64,
    /// Iterations per half cycle.
    pub step_size: u64,
}

impl Default for CyclicalLr {
    fn default() -> Self {
        CyclicalLr { base_lr: 5e-4, max_lr: 1e-2, step_size: 200 }
    }
}

impl CyclicalLr {
    pub fn new(base_lr: f64, max_lr: f64, step_size: u64) -> Result<CyclicalLr> {
        let s = CyclicalLr { base_lr, max_lr, step_size };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr >= 0.0 && self.base_lr < self.max_lr && self.max_lr.is_finite()) || self.step_size == 0 {
            return Err(Error::Config(format!(
                "cyclical lr needs 0 <= base < max and step_size > 0, got {self:?}"
            )));
        }
        Ok(())
    }

    /// A schedule that always yields the same rate.
    pub fn constant(lr: f64) -> CyclicalLr {
        CyclicalLr { base_lr: lr, max_lr: lr, step_size: 1 }
    }

    pub fn lr(&self, iter: u64) -> f64 {
        let period = 2 * self.step_size;
        let phase = (iter % period) as f64 / self.step_size as f64;
        let scale = (1.0 - (phase - 1.0).abs()).max(0.0);
        self.base_lr + (self.max_lr - self.base_lr) * scale
    }
}

pub fn cyclical_lr(iter: u64, sched: &CyclicalLr) -> f64 {
    sched.lr(iter)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn param(v: f64, g: f64) -> Parameter {
        let mut p = Parameter::new("p", Tensor::filled(&[1], v));
        p.grad.data[0] = g;
        p
    }

    #[test]
    fn zero_gradient_leaves_value() {
        let mut p = param(1.5, 0.0);
        let mut st = AdamState::new([&p], AdamConfig::default());
        adam_step(&mut [&mut p], &mut st, 0.01).unwrap();
        assert_eq!(p.value.data[0], 1.5);
    }

    #[test]
    fn first_and_second_steps_by_hand() {
        let mut p = param(0.0, 2.0);
        let mut st = AdamState::new([&p], AdamConfig::default());
        adam_step(&mut [&mut p], &mut st, 0.01).unwrap();
        assert!((p.value.data[0] + 0.01 * 2.0 / (2.0 + 1e-8)).abs() < 1e-15);

        // Second step with g = 1: m = 0.19 + ... computed by hand.
        p.grad.data[0] = 1.0;
        let before = p.value.data[0];
        adam_step(&mut [&mut p], &mut st, 0.01).unwrap();
        let m = 0.9 * 0.2 + 0.1 * 1.0;
        let v = 0.999 * 0.004 + 0.001 * 1.0;
        let mhat = m / (1.0 - 0.81);
        let vhat = v / (1.0 - 0.999f64 * 0.999);
        let expect = before - 0.01 * mhat / (vhat.sqrt() + 1e-8);
        assert!((p.value.data[0] - expect).abs() < 1e-15);
    }

    #[test]
    fn triangular_schedule_points() {
        let s = CyclicalLr::default();
        assert!((s.lr(0) - 5e-4).abs() < 1e-18);
        assert!((s.lr(200) - 1e-2).abs() < 1e-18);
        assert!((s.lr(100) - 5.25e-3).abs() < 1e-15);
        assert!((s.lr(400) - 5e-4).abs() < 1e-18);
        assert!(CyclicalLr::new(1e-2, 1e-3, 10).is_err());
        assert!(CyclicalLr::new(1e-3, 1e-2, 0).is_err());
    }
}
