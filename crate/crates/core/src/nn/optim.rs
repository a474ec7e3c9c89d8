//! Gradient-descent optimizers, selectable by name.

use serde::{Deserialize, Serialize};

use crate::error::{param_err, Error, Result};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    /// Number of completed steps.
    pub t: u64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RmsPropState {
    pub v: Vec<f64>,
}

fn check_grads(params: &[f64], grads: &[f64]) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::Shape(format!("{} parameters, {} gradients", params.len(), grads.len())));
    }
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::TrainingDiverged("non-finite gradient".into()));
    }
    Ok(())
}

/// Bias-corrected Adam update; `state.t` is advanced before use so the
/// first call runs step 1.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
) -> Result<()> {
    check_grads(params, grads)?;
    if state.m.len() != params.len() {
        state.m = vec![0.0; params.len()];
        state.v = vec![0.0; params.len()];
    }
    state.t += 1;
    let c1 = 1.0 - beta1.powi(state.t as i32);
    let c2 = 1.0 - beta2.powi(state.t as i32);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g;
        state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

/// v ← ρv + (1 − ρ)g²; θ ← θ − lr·g/(√v + ε).
pub fn rmsprop_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut RmsPropState,
    lr: f64,
    rho: f64,
    eps: f64,
) -> Result<()> {
    check_grads(params, grads)?;
    if state.v.len() != params.len() {
        state.v = vec![0.0; params.len()];
    }
    for i in 0..params.len() {
        let g = grads[i];
        state.v[i] = rho * state.v[i] + (1.0 - rho) * g * g;
        params[i] -= lr * g / (state.v[i].sqrt() + eps);
    }
    Ok(())
}

/// A stateful optimizer bound to one parameter vector.
pub trait Optimizer: Send {
    fn name(&self) -> &'static str;
    fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()>;
}

pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    state: AdamState,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, state: AdamState::default() }
    }
}

impl Optimizer for Adam {
    fn name(&self) -> &'static str {
        "adam"
    }

    fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        adam_step(params, grads, &mut self.state, self.lr, self.beta1, self.beta2, self.eps)
    }
}

pub struct RmsProp {
    pub lr: f64,
    pub rho: f64,
    pub eps: f64,
    state: RmsPropState,
}

impl RmsProp {
    pub fn new(lr: f64) -> Self {
        Self { lr, rho: 0.9, eps: 1e-8, state: RmsPropState::default() }
    }
}

impl Optimizer for RmsProp {
    fn name(&self) -> &'static str {
        "rmsprop"
    }

    fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        rmsprop_step(params, grads, &mut self.state, self.lr, self.rho, self.eps)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    RmsProp,
}

type OptimizerCtor = fn(f64) -> Box<dyn Optimizer>;

const REGISTRY: &[(&str, OptimizerKind, OptimizerCtor)] = &[
    ("adam", OptimizerKind::Adam, |lr| Box::new(Adam::new(lr))),
    ("rmsprop", OptimizerKind::RmsProp, |lr| Box::new(RmsProp::new(lr))),
];

impl OptimizerKind {
    pub fn name(self) -> &'static str {
        REGISTRY.iter().find(|e| e.1 == self).map(|e| e.0).unwrap()
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match REGISTRY.iter().find(|e| e.0 == name) {
            Some(e) => Ok(e.1),
            None => param_err(format!("unknown optimizer {name:?}")),
        }
    }

    pub fn build(self, lr: f64) -> Result<Box<dyn Optimizer>> {
        if !(lr > 0.0 && lr.is_finite()) {
            return param_err(format!("learning rate {lr} must be positive"));
        }
        Ok((REGISTRY.iter().find(|e| e.1 == self).unwrap().2)(lr))
    }
}

pub fn optimizer_names() -> Vec<&'static str> {
    REGISTRY.iter().map(|e| e.0).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_zero_gradient() {
        let mut p = vec![1.5, -2.0];
        let mut s = AdamState { m: vec![0.4, 0.2], v: vec![0.1, 0.3], t: 3 };
        adam_step(&mut p, &[0.0, 0.0], &mut s, 0.01, 0.9, 0.999, 1e-8).unwrap();
        // moments decay and the bias-corrected momentum still moves θ
        assert!((p[0] - (1.5 - adam_shift(0.4, 0.1, 4))).abs() < 1e-15);
        assert!((p[1] - (-2.0 - adam_shift(0.2, 0.3, 4))).abs() < 1e-15);
        assert!((s.m[0] - 0.36).abs() < 1e-15);
        assert!((s.v[1] - 0.2997).abs() < 1e-15);
        // fresh state with zero gradient leaves parameters untouched
        let mut q = vec![1.5, -2.0];
        adam_step(&mut q, &[0.0, 0.0], &mut AdamState::default(), 0.01, 0.9, 0.999, 1e-8).unwrap();
        assert_eq!(q, vec![1.5, -2.0]);
    }

    fn adam_shift(m0: f64, v0: f64, t: i32) -> f64 {
        let m = 0.9 * m0;
        let v = 0.999 * v0;
        0.01 * (m / (1.0 - 0.9f64.powi(t))) / ((v / (1.0 - 0.999f64.powi(t))).sqrt() + 1e-8)
    }

    #[test]
    fn adam_first_step_by_hand() {
        let mut p = vec![0.0];
        let mut s = AdamState::default();
        adam_step(&mut p, &[1.0], &mut s, 1e-3, 0.9, 0.999, 1e-8).unwrap();
        // m̂ = 1, v̂ = 1 → Δθ = −lr/(1 + ε)
        assert!((p[0] + 1e-3 / (1.0 + 1e-8)).abs() < 1e-18);
        assert!((p[0] + 9.99999e-4).abs() < 1e-9);
        assert_eq!(s.t, 1);
    }

    #[test]
    fn equal_gradients_equal_updates() {
        let mut p = vec![0.3, 0.3];
        let mut s = AdamState::default();
        for _ in 0..5 {
            adam_step(&mut p, &[0.7, 0.7], &mut s, 1e-2, 0.9, 0.999, 1e-8).unwrap();
        }
        assert_eq!(p[0], p[1]);
    }

    #[test]
    fn non_finite_gradient_diverges() {
        let mut p = vec![0.0];
        assert!(matches!(
            adam_step(&mut p, &[f64::NAN], &mut AdamState::default(), 1e-3, 0.9, 0.999, 1e-8),
            Err(Error::TrainingDiverged(_))
        ));
        assert!(matches!(
            rmsprop_step(&mut p, &[f64::INFINITY], &mut RmsPropState::default(), 1e-3, 0.9, 1e-8),
            Err(Error::TrainingDiverged(_))
        ));
    }

    #[test]
    fn rmsprop_examples() {
        let mut p = vec![2.0];
        rmsprop_step(&mut p, &[0.0], &mut RmsPropState::default(), 0.1, 0.9, 1e-8).unwrap();
        assert_eq!(p, vec![2.0]);

        let mut p = vec![0.0];
        rmsprop_step(&mut p, &[2.0], &mut RmsPropState::default(), 0.1, 0.9, 1e-8).unwrap();
        assert!((p[0] + 0.1 * 2.0 / (0.4f64.sqrt() + 1e-8)).abs() < 1e-15);

        let mut p = vec![0.0];
        let mut s = RmsPropState::default();
        let mut prev = 0.0;
        for _ in 0..500 {
            prev = p[0];
            rmsprop_step(&mut p, &[-3.0], &mut s, 0.01, 0.9, 1e-8).unwrap();
        }
        assert!((p[0] - prev - 0.01).abs() < 1e-9);
    }

    #[test]
    fn registry_round_trip() {
        for name in optimizer_names() {
            let kind = OptimizerKind::from_name(name).unwrap();
            assert_eq!(kind.name(), name);
            assert_eq!(kind.build(1e-3).unwrap().name(), name);
        }
        assert!(OptimizerKind::from_name("sgd").is_err());
        assert!(OptimizerKind::Adam.build(0.0).is_err());
    }
}
