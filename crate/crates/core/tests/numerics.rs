use proptest::prelude::*;
use unifake::encoder::{self_attention, BlockParams, EncoderConfig};
use unifake::numerics::{adam_step, clip_global_norm, global_norm, layer_norm, log_softmax_rows, AdamConfig, AdamState, Parameter, Tensor};

fn block() -> BlockParams<f64> {
    BlockParams::init(&EncoderConfig::tiny(16, 12), 1, 3)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn attention_rows_are_distributions_over_unmasked_keys(
        hidden in proptest::collection::vec(-3.0f64..3.0, 12 * 8),
        len in 1usize..=12,
    ) {
        let mask: Vec<u8> = (0..12).map(|i| u8::from(i < len)).collect();
        let out = self_attention(&hidden, &mask, 1, 12, 2, &block()).unwrap();
        for row in out.probs.chunks(12) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            prop_assert!(row[len..].iter().all(|&p| p == 0.0));
        }
    }

    #[test]
    fn exp_log_softmax_sums_to_one(row in proptest::collection::vec(-50.0f64..50.0, 1..40)) {
        let mut r = row.clone();
        log_softmax_rows(&mut r, row.len());
        prop_assert!((r.iter().map(|v| v.exp()).sum::<f64>() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn layer_norm_standardizes(row in proptest::collection::vec(-10.0f64..10.0, 2..64), shift in -100.0f64..100.0) {
        let x: Vec<f64> = row.iter().map(|v| v + shift).collect();
        let d = x.len();
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
        prop_assume!(var > 1e-3);
        let (_, cache) = layer_norm(&x, d, &vec![1.0; d], &vec![0.0; d], 1e-12);
        let m = cache.xhat.iter().sum::<f64>() / d as f64;
        let v = cache.xhat.iter().map(|h| (h - m).powi(2)).sum::<f64>() / d as f64;
        prop_assert!(m.abs() < 1e-5);
        prop_assert!((v - 1.0).abs() < 1e-4);
    }

    #[test]
    fn zero_gradient_adam_step_is_identity(values in proptest::collection::vec(-5.0f32..5.0, 1..50)) {
        let n = values.len();
        let mut p = Parameter::new("p", Tensor::from_vec(&[n], values.clone()).unwrap());
        let mut s = AdamState::new(&[n], AdamConfig::default());
        adam_step(&mut p, &mut s).unwrap();
        prop_assert_eq!(p.value.data(), &values[..]);
    }

    #[test]
    fn first_adam_step_has_magnitude_lr(g in prop_oneof![-1e3f64..-1e-3, 1e-3f64..1e3]) {
        let mut p = Parameter::new("p", Tensor::from_vec(&[1], vec![0.5]).unwrap());
        p.grad = Tensor::from_vec(&[1], vec![g]).unwrap();
        let mut s = AdamState::new(&[1], AdamConfig::default());
        adam_step(&mut p, &mut s).unwrap();
        let step = 0.5 - p.value.data()[0];
        prop_assert!((step.abs() - 0.003).abs() < 1e-6);
        prop_assert_eq!(step.signum(), g.signum());
    }

    #[test]
    fn clipping_bounds_the_global_norm(
        grads in proptest::collection::vec(proptest::collection::vec(-20.0f64..20.0, 1..10), 1..5),
    ) {
        let mut params: Vec<Parameter<f64>> = grads
            .iter()
            .enumerate()
            .map(|(i, g)| {
                let mut p = Parameter::new(format!("p{i}"), Tensor::zeros(&[g.len()]));
                p.grad = Tensor::from_vec(&[g.len()], g.clone()).unwrap();
                p
            })
            .collect();
        let mut refs: Vec<&mut Parameter<f64>> = params.iter_mut().collect();
        let pre = clip_global_norm(&mut refs, 1.0).unwrap();
        let post = global_norm(&refs);
        if pre > 1.0 {
            prop_assert!(post <= 1.0 + 1e-6);
        } else {
            prop_assert_eq!(post, pre);
        }
    }
}
