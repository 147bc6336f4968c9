use serde::{Deserialize, Serialize};

use super::model::ParamSet;
use super::tensor::Real;
use super::NetError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates for one flat parameter buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamMoments<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
}

impl<T: Real> AdamMoments<T> {
    pub fn zeros(n: usize) -> Self {
        Self {
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
        }
    }
}

/// One bias-corrected Adam update of `params` at step `t` (1-based) with
/// learning rate `lr`.
pub fn adam_step<T: Real>(
    params: &mut [T],
    grads: &[T],
    state: &mut AdamMoments<T>,
    cfg: &AdamConfig,
    lr: f64,
    t: u64,
) -> Result<(), NetError> {
    if params.len() != grads.len() || state.m.len() != params.len() {
        return Err(NetError::ShapeMismatch(format!(
            "adam: {} params, {} grads, {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    assert!(t >= 1, "adam step counter starts at 1");
    let inv_bc1 = 1.0 / (1.0 - cfg.beta1.powi(t as i32));
    let inv_bc2 = 1.0 / (1.0 - cfg.beta2.powi(t as i32));
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    for ((p, &g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        let g = g.as_f64();
        let m_new = b1 * m.as_f64() + (1.0 - b1) * g;
        let v_new = b2 * v.as_f64() + (1.0 - b2) * g * g;
        *m = T::of(m_new);
        *v = T::of(v_new);
        let step = lr * (m_new * inv_bc1) / ((v_new * inv_bc2).sqrt() + cfg.eps);
        *p = T::of(p.as_f64() - step);
    }
    Ok(())
}

/// Adam over a whole parameter set.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub cfg: AdamConfig,
    pub t: u64,
    moments: Vec<AdamMoments<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(cfg: AdamConfig, params: &ParamSet<T>) -> Self {
        Self {
            cfg,
            t: 0,
            moments: params
                .tensors()
                .iter()
                .map(|t| AdamMoments::zeros(t.len()))
                .collect(),
        }
    }

    pub fn step(&mut self, params: &mut ParamSet<T>, grads: &ParamSet<T>, lr: f64) -> Result<(), NetError> {
        if params.tensors().len() != grads.tensors().len() {
            return Err(NetError::ShapeMismatch("parameter/gradient set mismatch".into()));
        }
        self.t += 1;
        for ((p, g), st) in params
            .tensors_mut()
            .iter_mut()
            .zip(grads.tensors())
            .zip(self.moments.iter_mut())
        {
            adam_step(p.data_mut(), g.data(), st, &self.cfg, lr, self.t)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_closed_form() {
        let mut p = [0.0f64];
        let mut st = AdamMoments::zeros(1);
        adam_step(&mut p, &[1.0], &mut st, &AdamConfig::default(), 1e-3, 1).unwrap();
        assert!((p[0] - (-0.001 / (1.0 + 1e-8))).abs() < 1e-18);
    }

    #[test]
    fn zero_gradients_leave_params() {
        let mut p = [0.25f64, -3.0];
        let mut st = AdamMoments::zeros(2);
        for t in 1..=50 {
            adam_step(&mut p, &[0.0, 0.0], &mut st, &AdamConfig::default(), 1e-3, t).unwrap();
        }
        assert_eq!(p, [0.25, -3.0]);
    }

    #[test]
    fn quadratic_trajectory_matches_recurrences() {
        // f(w) = w^2, grad 2w; reference recurrences written out in full
        let (b1, b2, eps, lr) = (0.9f64, 0.999f64, 1e-8f64, 1e-3f64);
        let (mut w_ref, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        let mut w = [1.0f64];
        let mut st = AdamMoments::zeros(1);
        for t in 1..=10u64 {
            let g = 2.0 * w_ref;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t as i32));
            let vh = v / (1.0 - b2.powi(t as i32));
            w_ref -= lr * mh / (vh.sqrt() + eps);

            let g = [2.0 * w[0]];
            adam_step(&mut w, &g, &mut st, &AdamConfig::default(), lr, t).unwrap();
            assert!((w[0] - w_ref).abs() < 1e-12);
        }
    }

    #[test]
    fn mismatched_shapes_rejected() {
        let mut p = [0.0f32; 2];
        let mut st = AdamMoments::zeros(2);
        assert!(adam_step(&mut p, &[1.0], &mut st, &AdamConfig::default(), 1e-3, 1).is_err());
    }
}
