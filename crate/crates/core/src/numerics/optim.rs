//! Adam with bias correction and global-norm gradient clipping.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{Parameter, Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 0.003,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T = f32> {
    pub m: Tensor<T>,
    pub v: Tensor<T>,
    pub t: u64,
    pub config: AdamConfig,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(shape: &[usize], config: AdamConfig) -> Self {
        AdamState {
            m: Tensor::zeros(shape),
            v: Tensor::zeros(shape),
            t: 0,
            config,
        }
    }
}

/// One Adam update of `param` from its current gradient.
pub fn adam_step<T: Scalar>(param: &mut Parameter<T>, state: &mut AdamState<T>) -> Result<()> {
    if state.m.shape() != param.value.shape() || state.v.shape() != param.value.shape() {
        return Err(Error::Shape {
            op: "adam_step",
            left: param.value.shape().to_vec(),
            right: state.m.shape().to_vec(),
        });
    }
    let AdamConfig {
        lr,
        beta1,
        beta2,
        eps,
    } = state.config;
    state.t += 1;
    let bc1 = 1.0 - beta1.powi(state.t as i32);
    let bc2 = 1.0 - beta2.powi(state.t as i32);
    let (b1, b2) = (T::of(beta1), T::of(beta2));
    let (one_b1, one_b2) = (T::of(1.0 - beta1), T::of(1.0 - beta2));
    let grads = param.grad.data();
    let values = param.value.data_mut();
    let m = state.m.data_mut();
    let v = state.v.data_mut();
    for i in 0..values.len() {
        let g = grads[i];
        m[i] = b1 * m[i] + one_b1 * g;
        v[i] = b2 * v[i] + one_b2 * g * g;
        let m_hat = m[i].f64() / bc1;
        let v_hat = v[i].f64() / bc2;
        let step = lr * m_hat / (v_hat.sqrt() + eps);
        if step != 0.0 {
            values[i] = values[i] - T::of(step);
        }
    }
    Ok(())
}

/// L2 norm over every gradient, accumulated in f64 in parameter order.
pub fn global_norm<T: Scalar>(params: &[&mut Parameter<T>]) -> f64 {
    params.iter().map(|p| p.grad.sum_sq()).sum::<f64>().sqrt()
}

/// Rescales all gradients so their joint L2 norm is at most `clip`.
/// Returns the norm measured before clipping.
pub fn clip_global_norm<T: Scalar>(params: &mut [&mut Parameter<T>], clip: f64) -> Result<f64> {
    if clip.is_nan() || clip <= 0.0 {
        return Err(Error::arg(format!("clip must be positive, got {clip}")));
    }
    let norm = global_norm(params);
    if norm > clip {
        let scale = T::of(clip / norm);
        for p in params.iter_mut() {
            p.grad.data_mut().iter_mut().for_each(|g| *g = *g * scale);
        }
    }
    Ok(norm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn scalar_param(value: f64, grad: f64) -> Parameter<f64> {
        let mut p = Parameter::new("w", Tensor::filled(&[1], value));
        p.grad.fill(grad);
        p
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = scalar_param(0.0, 1.0);
        let mut s = AdamState::new(&[1], AdamConfig::default());
        adam_step(&mut p, &mut s).unwrap();
        let expected = -0.003 / (1.0 + 1e-8);
        assert!((p.value.data()[0] - expected).abs() < 1e-12);
        assert_eq!(s.t, 1);
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut p = Parameter::<f32>::new("w", Tensor::from_vec(&[3], vec![0.5, -1.0, 2.0]).unwrap());
        let before = p.value.clone();
        let mut s = AdamState::new(&[3], AdamConfig::default());
        for _ in 0..25 {
            adam_step(&mut p, &mut s).unwrap();
        }
        assert_eq!(p.value, before);
    }

    #[test]
    fn quadratic_descends_monotonically() {
        // f(w) = w², w0 = 1; simulate the update rule by hand alongside
        let cfg = AdamConfig::default();
        let mut p = scalar_param(1.0, 0.0);
        let mut s = AdamState::new(&[1], cfg);
        let (mut w, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        let mut prev = 1.0f64;
        for t in 1..=10 {
            let g = 2.0 * p.value.data()[0];
            p.grad.fill(g);
            adam_step(&mut p, &mut s).unwrap();
            let gw = 2.0 * w;
            m = 0.9 * m + 0.1 * gw;
            v = 0.999 * v + 0.001 * gw * gw;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            w -= 0.003 * mh / (vh.sqrt() + 1e-8);
            let now = p.value.data()[0];
            assert!((now - w).abs() < 1e-12);
            assert!(now.abs() < prev);
            prev = now.abs();
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut p = scalar_param(0.0, 1.0);
        let mut s = AdamState::new(&[2], AdamConfig::default());
        assert!(adam_step(&mut p, &mut s).is_err());
    }

    #[test]
    fn clip_scales_down_large_norm() {
        let mut a = Parameter::<f64>::new("a", Tensor::zeros(&[2]));
        let mut b = Parameter::<f64>::new("b", Tensor::zeros(&[1]));
        a.grad = Tensor::from_vec(&[2], vec![6.0, 0.0]).unwrap();
        b.grad = Tensor::from_vec(&[1], vec![8.0]).unwrap();
        let mut ps = vec![&mut a, &mut b];
        let pre = clip_global_norm(&mut ps, 1.0).unwrap();
        assert!((pre - 10.0).abs() < 1e-12);
        assert!((global_norm(&ps) - 1.0).abs() < 1e-6);
        assert!((a.grad.data()[0] - 0.6).abs() < 1e-12);
        assert!((b.grad.data()[0] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn clip_leaves_small_norm_alone() {
        let mut a = Parameter::<f32>::new("a", Tensor::zeros(&[2]));
        a.grad = Tensor::from_vec(&[2], vec![0.3, 0.4]).unwrap();
        let before = a.grad.clone();
        let pre = clip_global_norm(&mut [&mut a], 1.0).unwrap();
        assert!((pre - 0.5).abs() < 1e-6);
        assert_eq!(a.grad, before);
        assert!(clip_global_norm(&mut [&mut a], 0.0).is_err());
    }

    proptest! {
        #[test]
        fn clipped_norm_never_exceeds_clip(
            grads in proptest::collection::vec(proptest::collection::vec(-50.0f32..50.0, 1..20), 1..6),
            clip in 0.05f64..5.0,
        ) {
            let mut params: Vec<Parameter<f32>> = grads
                .iter()
                .enumerate()
                .map(|(i, g)| {
                    let mut p = Parameter::new(format!("p{i}"), Tensor::zeros(&[g.len()]));
                    p.grad = Tensor::from_vec(&[g.len()], g.clone()).unwrap();
                    p
                })
                .collect();
            let before: Vec<Vec<f32>> = params.iter().map(|p| p.grad.data().to_vec()).collect();
            let mut refs: Vec<&mut Parameter<f32>> = params.iter_mut().collect();
            clip_global_norm(&mut refs, clip).unwrap();
            prop_assert!(global_norm(&refs) <= clip * (1.0 + 1e-6));
            for (p, b) in params.iter().zip(&before) {
                for (g, g0) in p.grad.data().iter().zip(b) {
                    prop_assert!(g.abs() <= g0.abs());
                }
            }
        }
    }
}
