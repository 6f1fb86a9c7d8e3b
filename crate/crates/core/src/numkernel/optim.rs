//! AdamW with decoupled weight decay and optional global-norm clipping.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Global gradient-norm ceiling, applied before the moment update.
    pub clip_norm: Option<f64>,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-2,
            clip_norm: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct OptimState {
    pub config: AdamWConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

#[derive(Clone, Copy, Debug)]
pub struct StepStats {
    /// Gradient norm before clipping.
    pub grad_norm: f64,
    pub clipped: bool,
}

impl OptimState {
    pub fn new(n_params: usize, config: AdamWConfig) -> Self {
        OptimState {
            config,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }
}

/// One AdamW update in place. `grads` may be rescaled by clipping.
pub fn adamw_step(params: &mut [f64], grads: &mut [f64], state: &mut OptimState, lr: f64) -> Result<StepStats> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Shape(format!(
            "params {}, grads {}, optimizer state {}",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    if lr < 0.0 {
        return Err(Error::InvalidArgument(format!("negative learning rate {lr}")));
    }
    let sq: f64 = grads.iter().map(|g| g * g).sum();
    let grad_norm = sq.sqrt();
    if !grad_norm.is_finite() {
        return Err(Error::Diverged("non-finite gradient".into()));
    }
    let cfg = state.config;
    let mut clipped = false;
    if let Some(max) = cfg.clip_norm {
        if grad_norm > max {
            let s = max / grad_norm;
            grads.iter_mut().for_each(|g| *g *= s);
            clipped = true;
        }
    }

    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let decay = 1.0 - lr * cfg.weight_decay;
    for (((p, &g), m), v) in params
        .iter_mut()
        .zip(grads.iter())
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p = *p * decay - lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
    Ok(StepStats { grad_norm, clipped })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(wd: f64) -> AdamWConfig {
        AdamWConfig {
            weight_decay: wd,
            ..AdamWConfig::default()
        }
    }

    #[test]
    fn first_step_closed_form() {
        let mut p = [1.0];
        let mut g = [1.0];
        let mut st = OptimState::new(1, cfg(0.0));
        adamw_step(&mut p, &mut g, &mut st, 0.1).unwrap();
        assert!((p[0] - 0.9).abs() < 1e-7);

        let mut p = [1.0];
        let mut g = [1.0];
        let mut st = OptimState::new(1, cfg(0.01));
        adamw_step(&mut p, &mut g, &mut st, 0.1).unwrap();
        assert!((p[0] - 0.899).abs() < 1e-7);
    }

    #[test]
    fn zero_gradient_no_decay_is_identity() {
        let mut p = [0.3, -2.0, 5.0];
        let mut g = [0.0; 3];
        let mut st = OptimState::new(3, cfg(0.0));
        for _ in 0..5 {
            adamw_step(&mut p, &mut g, &mut st, 0.1).unwrap();
        }
        assert_eq!(p, [0.3, -2.0, 5.0]);
        assert_eq!(st.step_count(), 5);
    }

    #[test]
    fn clipping_rescales_to_unit_norm() {
        let mut p = [0.0, 0.0];
        let mut g = [3.0, 4.0];
        let mut st = OptimState::new(
            2,
            AdamWConfig {
                clip_norm: Some(1.0),
                ..cfg(0.0)
            },
        );
        let stats = adamw_step(&mut p, &mut g, &mut st, 0.0).unwrap();
        assert!(stats.clipped);
        assert!((stats.grad_norm - 5.0).abs() < 1e-12);
        assert!((g[0] - 0.6).abs() < 1e-12 && (g[1] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn non_finite_gradient_is_divergence() {
        let mut p = [1.0];
        let mut g = [f64::NAN];
        let mut st = OptimState::new(1, cfg(0.0));
        assert!(matches!(
            adamw_step(&mut p, &mut g, &mut st, 0.1),
            Err(Error::Diverged(_))
        ));
    }
}
