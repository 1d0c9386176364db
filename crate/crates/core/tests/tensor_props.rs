use cascade_recon::io::{decode_tensor, encode_tensor, AnyTensor};
use cascade_recon::rng::normal_draw;
use cascade_recon::{complex_norm_sq, ComplexImage, Error, Rng, Tensor};
use proptest::prelude::*;

#[test]
fn construction_examples() {
    assert_eq!(Tensor::new(&[2, 2], 0.0f64).unwrap().data(), &[0.0; 4]);
    assert_eq!(Tensor::new(&[1], 3.5f64).unwrap().data(), &[3.5]);
    assert_eq!(Tensor::new(&[2, 3, 4], 1.0f32).unwrap().len(), 24);
    assert!(matches!(Tensor::<f64>::new(&[], 0.0), Err(Error::InvalidShape(_))));
    assert!(matches!(Tensor::<f64>::new(&[3, 0], 0.0), Err(Error::InvalidShape(_))));
    assert!(matches!(ComplexImage::<f64>::zeros(5, 8), Err(Error::InvalidShape(_))));
    assert!(matches!(ComplexImage::<f64>::zeros(2, 8), Err(Error::InvalidShape(_))));
}

#[test]
fn normal_draw_examples() {
    let t: Tensor<f64> = normal_draw(&mut Rng::new(42), &[10000], 1.0).unwrap();
    let mean = t.data().iter().sum::<f64>() / 1e4;
    assert!(mean.abs() < 0.05, "{mean}");
    let a: Tensor<f64> = normal_draw(&mut Rng::new(42), &[100], 1.0).unwrap();
    let b: Tensor<f64> = normal_draw(&mut Rng::new(42), &[100], 2.0).unwrap();
    assert!(a.data().iter().zip(b.data()).all(|(x, y)| *y == 2.0 * x));
    assert!(matches!(normal_draw::<f64>(&mut Rng::new(0), &[3], 0.0), Err(Error::InvalidParameter(_))));
}

proptest! {
    #[test]
    fn row_major_offsets(h in 2usize..6, w in 2usize..6, seed in any::<u64>()) {
        let (h, w) = (2 * h, 2 * w);
        let mut img = ComplexImage::<f64>::zeros(h, w).unwrap();
        let mut rng = Rng::new(seed);
        let (c, i, j) = (rng.below(2), rng.below(h), rng.below(w));
        img.as_tensor_mut().set(&[c, i, j], 7.0).unwrap();
        prop_assert_eq!(img.as_tensor().data()[c * h * w + i * w + j], 7.0);
        prop_assert_eq!(img.as_tensor().get(&[c, i, j]).unwrap(), 7.0);
        prop_assert_eq!(img.as_tensor().data().iter().filter(|&&v| v != 0.0).count(), 1);
    }

    #[test]
    fn norm_is_nonnegative_and_zero_only_for_zero(seed in any::<u64>(), zero_it in any::<bool>()) {
        let mut img = ComplexImage::<f64>::from_tensor(normal_draw(&mut Rng::new(seed), &[2, 4, 6], 1.0).unwrap()).unwrap();
        if zero_it {
            img.as_tensor_mut().fill(0.0);
        }
        let n = complex_norm_sq(&img);
        prop_assert!(n >= 0.0);
        prop_assert_eq!(n == 0.0, zero_it);
    }

    #[test]
    fn tensor_file_roundtrip(dims in prop::collection::vec(1usize..5, 1..4), seed in any::<u64>()) {
        let t32: Tensor<f32> = normal_draw(&mut Rng::new(seed), &dims, 1.0).unwrap();
        let mut bytes = Vec::new();
        encode_tensor(&t32, &mut bytes).unwrap();
        prop_assert_eq!(&bytes[..4], b"CXT1");
        prop_assert_eq!(bytes[4], 4);
        prop_assert_eq!(bytes[5] as usize, dims.len());
        match decode_tensor(&mut bytes.as_slice()).unwrap() {
            AnyTensor::F32(back) => prop_assert_eq!(back, t32),
            AnyTensor::F64(_) => prop_assert!(false, "wrong precision"),
        }
    }

    #[test]
    fn same_seed_same_stream(seed in any::<u64>()) {
        let a: Tensor<f64> = normal_draw(&mut Rng::new(seed), &[64], 1.5).unwrap();
        let b: Tensor<f64> = normal_draw(&mut Rng::new(seed), &[64], 1.5).unwrap();
        prop_assert_eq!(a, b);
    }
}
