use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rulcast::models::{build, Architecture, ModelSpec};
use rulcast::tensor::{conv1d, conv2d, dot_attention, spatial_softmax, Activation, Tensor};

fn window(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.gen_range(0.0..1.0))
}

#[test]
fn full_size_gradients_are_finite() {
    for (arch, total) in [(Architecture::ForeNet2d, 103_425), (Architecture::ForeNet3d, 69_058)] {
        let m = build(&ModelSpec::new(arch, 24, 82, 1)).unwrap();
        let x = window(&arch.input_shape(24, 82), 2);
        let (pred, grads) = m.forward_backward(&x, |p| 2.0 * (p - 0.5)).unwrap();
        assert!(pred.is_finite());
        let n: usize = grads.iter().map(Tensor::len).sum();
        assert_eq!(n, total);
        assert!(grads.iter().all(Tensor::all_finite), "{arch}");
        for (g, p) in grads.iter().zip(&m.params.tensors) {
            assert_eq!(g.shape(), p.shape());
        }
        // Some gradient reaches the first layer.
        assert!(grads[0].data().iter().any(|&v| v != 0.0), "{arch}");
    }
}

#[test]
fn every_variant_builds_and_predicts() {
    for arch in Architecture::ALL {
        let m = build(&ModelSpec::new(arch, 12, 7, 3)).unwrap();
        let y = m.forward(&window(&arch.input_shape(12, 7), 4)).unwrap();
        assert!(y.is_finite(), "{arch}");
    }
}

#[test]
fn literal_spatial_softmax_is_still_buildable() {
    let mut spec = ModelSpec::new(Architecture::ForeNet3d, 10, 8, 2);
    let scaled = build(&spec).unwrap();
    spec.spatial_rescale = false;
    let literal = build(&spec).unwrap();
    assert_eq!(scaled.params, literal.params);
    let x = window(&[10, 8, 1], 1);
    assert_ne!(scaled.forward(&x).unwrap(), literal.forward(&x).unwrap());
}

proptest! {
    #[test]
    fn conv_output_shape_law(
        t in 3usize..20, c in 1usize..5, k in 1usize..4, out in 1usize..6,
        h in 3usize..12, w in 3usize..12,
    ) {
        let x = Tensor::filled(&[t, c], 0.5);
        let y = conv1d(&x, &Tensor::filled(&[k, c, out], 0.1), &Tensor::zeros(&[out]), Activation::Relu).unwrap();
        prop_assert_eq!(y.shape(), &[t + 1 - k, out]);
        let x = Tensor::filled(&[h, w, c], 0.5);
        let y = conv2d(&x, &Tensor::filled(&[k, k, c, out], 0.1), &Tensor::zeros(&[out]), Activation::Linear).unwrap();
        prop_assert_eq!(y.shape(), &[h + 1 - k, w + 1 - k, out]);
    }

    #[test]
    fn softmax_weights_sum_to_one(
        h in 1usize..30, w in 1usize..90, steps in 1usize..25, units in 1usize..10,
        spread in 0.0f64..50.0, seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let map = Tensor::from_fn(&[h, w, 1], |_| rng.gen_range(-spread..=spread));
        let s = spatial_softmax(&map).unwrap();
        prop_assert!((s.sum() - 1.0).abs() <= 1e-12);
        prop_assert!(s.data().iter().all(|&v| v >= 0.0));
        let x = Tensor::from_fn(&[steps, units], |_| rng.gen_range(-spread..=spread));
        let (_, weights) = dot_attention(&x, 1.0).unwrap();
        for row in weights.data().chunks_exact(steps) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn gradients_are_deterministic(seed in 0u64..1000, arch_ix in 0usize..8) {
        let arch = Architecture::ALL[arch_ix];
        let m = build(&ModelSpec::new(arch, 8, 6, seed)).unwrap();
        let x = window(&arch.input_shape(8, 6), seed);
        let a = m.forward_backward(&x, |p| p).unwrap();
        let b = m.forward_backward(&x, |p| p).unwrap();
        prop_assert_eq!(a.0.to_bits(), b.0.to_bits());
        prop_assert_eq!(a.1, b.1);
    }
}
