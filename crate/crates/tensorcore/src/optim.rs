use std::collections::BTreeMap;

use crate::error::{Result, TensorError};
use crate::params::ParamSet;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Moments<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    /// Updates applied to this parameter; bias correction is per parameter so
    /// a group unfrozen late starts its correction from step one.
    pub steps: u64,
}

/// First/second moment buffers keyed by parameter name.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState<T = f32> {
    moments: BTreeMap<String, Moments<T>>,
}

impl<T: Scalar> AdamState<T> {
    /// Zeroed buffers for every tensor in `params`.
    pub fn for_params(params: &ParamSet<T>) -> Self {
        let moments = params
            .iter()
            .map(|(k, t)| (k.clone(), Moments { m: vec![T::zero(); t.len()], v: vec![T::zero(); t.len()], steps: 0 }))
            .collect();
        AdamState { moments }
    }

    pub fn get(&self, name: &str) -> Option<&Moments<T>> {
        self.moments.get(name)
    }
}

/// One bias-corrected Adam update. Only parameters named in `grads` move;
/// everything else (frozen groups) is left bit-identical.
pub fn adam_step<T: Scalar>(
    params: &mut ParamSet<T>,
    grads: &ParamSet<T>,
    state: &mut AdamState<T>,
    cfg: &AdamConfig,
) -> Result<()> {
    for (name, g) in grads.iter() {
        let st = state
            .moments
            .get_mut(name)
            .ok_or_else(|| TensorError::contract(format!("adam: no moment buffer for {name}")))?;
        let p = params
            .get_mut(name)
            .ok_or_else(|| TensorError::contract(format!("adam: gradient for unknown parameter {name}")))?;
        if p.len() != g.len() || st.m.len() != g.len() {
            return Err(TensorError::contract(format!("adam: length mismatch for {name}")));
        }
        st.steps += 1;
        let (b1, b2) = (T::from_f64(cfg.beta1), T::from_f64(cfg.beta2));
        let c1 = T::from_f64(1.0 - cfg.beta1.powi(st.steps as i32));
        let c2 = T::from_f64(1.0 - cfg.beta2.powi(st.steps as i32));
        let (lr, eps) = (T::from_f64(cfg.lr), T::from_f64(cfg.eps));
        for (((w, &gi), m), v) in p.data_mut().iter_mut().zip(g.data()).zip(&mut st.m).zip(&mut st.v) {
            *m = b1 * *m + (T::one() - b1) * gi;
            *v = b2 * *v + (T::one() - b2) * gi * gi;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *w -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn scalar_set(name: &str, v: f64) -> ParamSet<f64> {
        let mut p = ParamSet::new();
        p.insert(name, Tensor::scalar(v));
        p
    }

    #[test]
    fn zero_gradient_from_fresh_state_leaves_params_unchanged() {
        let mut p = scalar_set("w", 0.7);
        let mut st = AdamState::for_params(&p);
        adam_step(&mut p, &scalar_set("w", 0.0), &mut st, &AdamConfig::default()).unwrap();
        assert_eq!(p.get("w").unwrap().data()[0], 0.7);
    }

    #[test]
    fn zero_gradient_decays_existing_moments() {
        let cfg = AdamConfig::default();
        let mut p = scalar_set("w", 0.0);
        let mut st = AdamState::for_params(&p);
        adam_step(&mut p, &scalar_set("w", 2.0), &mut st, &cfg).unwrap();
        let (m0, v0) = (st.get("w").unwrap().m[0], st.get("w").unwrap().v[0]);
        adam_step(&mut p, &scalar_set("w", 0.0), &mut st, &cfg).unwrap();
        let mo = st.get("w").unwrap();
        assert_eq!(mo.m[0], 0.9 * m0);
        assert_eq!(mo.v[0], 0.999 * v0);
    }

    #[test]
    fn constant_gradient_step_approaches_lr() {
        let cfg = AdamConfig::default();
        let mut p = scalar_set("w", 0.0);
        let mut st = AdamState::for_params(&p);
        let mut prev = 0.0;
        for _ in 0..2000 {
            adam_step(&mut p, &scalar_set("w", 0.5), &mut st, &cfg).unwrap();
            let now = p.get("w").unwrap().data()[0];
            assert!(((prev - now) - cfg.lr).abs() < 1e-6);
            prev = now;
        }
    }

    // standalone scalar Adam, unrolled by hand
    #[test]
    fn three_steps_match_scalar_reference() {
        let cfg = AdamConfig { lr: 0.01, beta1: 0.9, beta2: 0.999, eps: 1e-8 };
        let grads = [0.3, -1.2, 0.05];
        let (mut w, mut m, mut v) = (1.5f64, 0.0f64, 0.0f64);
        for (t, g) in grads.iter().enumerate() {
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(t as i32 + 1));
            let vh = v / (1.0 - 0.999f64.powi(t as i32 + 1));
            w -= 0.01 * mh / (vh.sqrt() + 1e-8);
        }
        let mut p = scalar_set("w", 1.5);
        let mut st = AdamState::for_params(&p);
        for g in grads {
            adam_step(&mut p, &scalar_set("w", g), &mut st, &cfg).unwrap();
        }
        assert!((p.get("w").unwrap().data()[0] - w).abs() < 1e-15);
    }

    #[test]
    fn missing_state_is_a_contract_error() {
        let mut p = scalar_set("w", 1.0);
        let mut st = AdamState::for_params(&ParamSet::new());
        let err = adam_step(&mut p, &scalar_set("w", 1.0), &mut st, &AdamConfig::default()).unwrap_err();
        assert!(matches!(err, TensorError::Contract(_)));
    }
}
