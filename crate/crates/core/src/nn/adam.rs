use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::params::ParamSet;
use crate::nn::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment accumulators for every tensor of a [`ParamSet`].
#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
    step: u64,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &ParamSet) -> Self {
        AdamState {
            config,
            first: params.zeros_like(),
            second: params.zeros_like(),
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One bias-corrected update. Gradients are validated before any
    /// parameter is touched, so a failed step leaves both params and state
    /// unchanged.
    pub fn step(&mut self, params: &mut ParamSet, grads: &[Tensor]) -> Result<()> {
        if grads.len() != params.len() || self.first.len() != params.len() {
            return Err(Error::shape(
                "adam_step",
                format!(
                    "{} params, {} grads, {} moments",
                    params.len(),
                    grads.len(),
                    self.first.len()
                ),
            ));
        }
        for (p, g) in params.iter().zip(grads) {
            if p.value.shape() != g.shape() {
                return Err(Error::shape(
                    "adam_step",
                    format!("`{}`: {:?} vs grad {:?}", p.name, p.value.shape(), g.shape()),
                ));
            }
            if !g.is_finite() {
                return Err(Error::NonFiniteGradient {
                    name: p.name.clone(),
                });
            }
        }

        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.first)
            .zip(&mut self.second)
        {
            let pd = p.value.data_mut();
            let (md, vd) = (m.data_mut(), v.data_mut());
            for i in 0..pd.len() {
                let gi = g.data()[i];
                md[i] = beta1 * md[i] + (1.0 - beta1) * gi;
                vd[i] = beta2 * vd[i] + (1.0 - beta2) * gi * gi;
                let mhat = md[i] / c1;
                let vhat = vd[i] / c2;
                pd[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_set(v: f64) -> ParamSet {
        let mut ps = ParamSet::new();
        ps.push("w", Tensor::scalar(v));
        ps
    }

    #[test]
    fn zero_gradient_is_identity() {
        let mut ps = scalar_set(0.7);
        ps.push("m", Tensor::filled(&[2, 3], -1.25));
        let before = ps.clone();
        let mut st = AdamState::new(AdamConfig::default(), &ps);
        let g = ps.zeros_like();
        st.step(&mut ps, &g).unwrap();
        assert_eq!(ps, before);
        assert_eq!(st.steps(), 1);
    }

    /// Scalar oracle written straight from the update rule.
    fn oracle(p0: f64, grads: &[f64], c: AdamConfig) -> Vec<f64> {
        let (mut p, mut m, mut v) = (p0, 0.0, 0.0);
        let mut out = Vec::new();
        for (i, &g) in grads.iter().enumerate() {
            let t = (i + 1) as f64;
            m = c.beta1 * m + (1.0 - c.beta1) * g;
            v = c.beta2 * v + (1.0 - c.beta2) * g * g;
            let mh = m / (1.0 - c.beta1.powf(t));
            let vh = v / (1.0 - c.beta2.powf(t));
            p -= c.lr * mh / (vh.sqrt() + c.eps);
            out.push(p);
        }
        out
    }

    #[test]
    fn first_step_moves_by_lr() {
        let c = AdamConfig::default();
        let mut ps = scalar_set(1.0);
        let mut st = AdamState::new(c, &ps);
        st.step(&mut ps, &[Tensor::scalar(1.0)]).unwrap();
        // t=1: mhat = 1, vhat = 1, so the step is lr / (1 + eps)
        let moved = 1.0 - ps.get(crate::nn::ParamId(0)).data()[0];
        assert!((moved - c.lr / (1.0 + c.eps)).abs() < 1e-15);
    }

    #[test]
    fn two_steps_match_scalar_oracle() {
        let c = AdamConfig::default();
        let mut ps = scalar_set(0.5);
        let mut st = AdamState::new(c, &ps);
        let expect = oracle(0.5, &[1.0, 1.0], c);
        for e in expect {
            st.step(&mut ps, &[Tensor::scalar(1.0)]).unwrap();
            let got = ps.get(crate::nn::ParamId(0)).data()[0];
            assert!((got - e).abs() < 1e-12, "{got} vs {e}");
        }
        assert_eq!(st.steps(), 2);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut ps = scalar_set(0.5);
        ps.push("bias", Tensor::zeros(&[2]));
        let before = ps.clone();
        let mut st = AdamState::new(AdamConfig::default(), &ps);
        let grads = vec![Tensor::scalar(0.1), Tensor::new(&[2], vec![1.0, f64::NAN]).unwrap()];
        match st.step(&mut ps, &grads) {
            Err(Error::NonFiniteGradient { name }) => assert_eq!(name, "bias"),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(ps, before);
        assert_eq!(st.steps(), 0);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut ps = scalar_set(0.5);
        let mut st = AdamState::new(AdamConfig::default(), &ps);
        assert!(st.step(&mut ps, &[Tensor::zeros(&[2])]).is_err());
    }
}
