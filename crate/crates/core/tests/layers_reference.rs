mod common;

use halfnet_core::fp16::HalfBits;
use halfnet_core::layers::{
    batchnorm_forward, conv_forward, eltwise_forward, grouped_mean, inner_product_forward, pool_forward, relu_forward,
    scale_forward, shifted_variance, softmax_forward, softmax_slice, AccumPolicy, BatchNormConfig, ConvConfig,
    EltwiseConfig, InnerProductConfig, PoolConfig, PoolMode, ShiftPolicy,
};
use halfnet_core::{Dtype, Shape, Tensor};
use proptest::prelude::*;

use common::{batchnorm, conv, moments, pool, to_f64};

fn rand(shape: Shape, dtype: Dtype, seed: u64, lo: f32, hi: f32) -> Tensor {
    Tensor::random(shape, dtype, seed, lo, hi).unwrap()
}

/// max |a - b| / max |b|.
fn normwise(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let scale = b.iter().map(|y| y.abs()).fold(0.0, f64::max);
    diff / scale
}

fn halves(v: &[f32]) -> Vec<HalfBits> {
    v.iter().map(|&x| HalfBits::from_f32(x)).collect()
}

#[test]
fn conv_of_ones_is_nine() {
    let x = Tensor::from_f32(Shape::new(1, 1, 3, 3), vec![1.0; 9]).unwrap();
    let w = Tensor::from_f32(Shape::new(1, 1, 3, 3), vec![1.0; 9]).unwrap();
    let y = conv_forward(&x, &w, None, &ConvConfig::new(1, 3)).unwrap();
    assert_eq!(y.shape(), Shape::new(1, 1, 1, 1));
    assert_eq!(y.as_f32().unwrap(), &[9.0]);
}

#[test]
fn identity_1x1_conv_is_bitwise_identity() {
    for dtype in [Dtype::F32, Dtype::F16] {
        let x = rand(Shape::new(2, 3, 5, 5), dtype, 1, -4.0, 4.0);
        let mut eye = vec![0.0f32; 9];
        for c in 0..3 {
            eye[c * 3 + c] = 1.0;
        }
        let w = match dtype {
            Dtype::F32 => Tensor::from_f32(Shape::new(3, 3, 1, 1), eye).unwrap(),
            Dtype::F16 => Tensor::from_f16(Shape::new(3, 3, 1, 1), halves(&eye)).unwrap(),
        };
        let y = conv_forward(&x, &w, None, &ConvConfig::new(3, 1)).unwrap();
        assert!(y.bitwise_eq(&x), "{dtype}");
    }
}

#[test]
fn f16_conv_error_is_bounded_by_accumulation_length() {
    let shape = Shape::new(8, 3, 8, 8);
    let x = rand(shape, Dtype::F16, 10, -1.0, 1.0);
    let w = rand(Shape::new(4, 3, 3, 3), Dtype::F16, 11, -1.0, 1.0);
    let b = rand(Shape::new(1, 4, 1, 1), Dtype::F16, 12, -1.0, 1.0);
    let mut cfg = ConvConfig::new(4, 3);
    cfg.pad = 1;
    let y = to_f64(&conv_forward(&x, &w, Some(&b), &cfg).unwrap());

    let (xs, ws, bs) = (to_f64(&x), to_f64(&w), to_f64(&b));
    let (_, exact) = conv(&xs, shape, &ws, Some(&bs), 4, 3, 1, 1);
    // Same convolution over absolute values gives sum |w x| + |b| per output.
    let abs = |v: &[f64]| v.iter().map(|x| x.abs()).collect::<Vec<_>>();
    let (_, magnitude) = conv(&abs(&xs), shape, &abs(&ws), Some(&abs(&bs)), 4, 3, 1, 1);
    let length = (3 * 3 * 3 + 1) as f64;
    let bound = 2f64.powi(-9) * length;
    let worst = y.iter().zip(&exact).zip(&magnitude).map(|((h, e), m)| (h - e).abs() / m).fold(0.0, f64::max);
    assert!(worst <= bound, "worst {worst:e} > bound {bound:e}");
}

#[test]
fn f32_layers_match_f64_reference() {
    let tol = 1e-5;
    let shape = Shape::new(4, 3, 9, 9);
    let x = rand(shape, Dtype::F32, 20, -2.0, 2.0);
    let xs = to_f64(&x);

    let w = rand(Shape::new(5, 3, 3, 3), Dtype::F32, 21, -1.0, 1.0);
    let b = rand(Shape::new(1, 5, 1, 1), Dtype::F32, 22, -1.0, 1.0);
    let mut cfg = ConvConfig::new(5, 3);
    cfg.stride = 2;
    cfg.pad = 1;
    let y = conv_forward(&x, &w, Some(&b), &cfg).unwrap();
    let (s, r) = conv(&xs, shape, &to_f64(&w), Some(&to_f64(&b)), 5, 3, 2, 1);
    assert_eq!(y.shape(), s);
    assert!(normwise(&to_f64(&y), &r) <= tol, "conv");

    for mode in [PoolMode::Max, PoolMode::Avg] {
        let mut cfg = PoolConfig::new(mode, 3, 2);
        cfg.pad = 1;
        let y = pool_forward(&x, &cfg).unwrap();
        let (s, r) = pool(&xs, shape, mode, 3, 2, 1);
        assert_eq!(y.shape(), s);
        assert!(normwise(&to_f64(&y), &r) <= tol, "{mode:?} pool");
    }

    let ipw = rand(Shape::new(7, shape.item_len(), 1, 1), Dtype::F32, 23, -1.0, 1.0);
    let y = inner_product_forward(&x, &ipw, None, &InnerProductConfig { bias: false, ..InnerProductConfig::new(7) })
        .unwrap();
    let wv = to_f64(&ipw);
    let k = shape.item_len();
    let r: Vec<f64> = (0..shape.n)
        .flat_map(|n| {
            let (xs, wv) = (&xs, &wv);
            (0..7).map(move |o| (0..k).map(|i| wv[o * k + i] * xs[n * k + i]).sum())
        })
        .collect();
    assert!(normwise(&to_f64(&y), &r) <= tol, "inner product");

    let cfg = BatchNormConfig::default();
    let y = batchnorm_forward(&x, &cfg, None).unwrap();
    assert!(normwise(&to_f64(&y), &batchnorm(&xs, shape, 1e-5, None)) <= tol, "batchnorm");
    let mean = rand(Shape::new(1, 3, 1, 1), Dtype::F32, 24, -0.5, 0.5);
    let var = rand(Shape::new(1, 3, 1, 1), Dtype::F32, 25, 0.5, 2.0);
    let global = BatchNormConfig { use_global_stats: true, ..BatchNormConfig::default() };
    let y = batchnorm_forward(&x, &global, Some((&mean, &var))).unwrap();
    let r = batchnorm(&xs, shape, 1e-5, Some((to_f64(&mean), to_f64(&var))));
    assert!(normwise(&to_f64(&y), &r) <= tol, "global batchnorm");

    let gamma = rand(Shape::new(1, 3, 1, 1), Dtype::F32, 26, 0.5, 1.5);
    let beta = rand(Shape::new(1, 3, 1, 1), Dtype::F32, 27, -1.0, 1.0);
    let y = scale_forward(&x, &gamma, Some(&beta)).unwrap();
    let (g, bt) = (to_f64(&gamma), to_f64(&beta));
    let r: Vec<f64> = xs.iter().enumerate().map(|(i, v)| v * g[(i / 81) % 3] + bt[(i / 81) % 3]).collect();
    assert!(normwise(&to_f64(&y), &r) <= tol, "scale");

    let x2 = rand(shape, Dtype::F32, 28, -2.0, 2.0);
    let y = eltwise_forward(&[&x, &x2], &EltwiseConfig { coeffs: vec![0.5, -1.5] }).unwrap();
    let r: Vec<f64> = xs.iter().zip(to_f64(&x2)).map(|(a, b)| 0.5 * a - 1.5 * b).collect();
    assert!(normwise(&to_f64(&y), &r) <= tol, "eltwise");

    let y = softmax_forward(&x, AccumPolicy::default()).unwrap();
    let ys = to_f64(&y);
    for n in 0..shape.n {
        for p in 0..81 {
            let idx = |c: usize| (n * 3 + c) * 81 + p;
            let total: f64 = (0..3).map(|c| xs[idx(c)].exp()).sum();
            for c in 0..3 {
                assert!((ys[idx(c)] - xs[idx(c)].exp() / total).abs() <= tol, "softmax");
            }
        }
    }

    let y = relu_forward(&x, 0.0).unwrap();
    let r: Vec<f64> = xs.iter().map(|v| v.max(0.0)).collect();
    assert_eq!(to_f64(&y), r, "relu");
}

#[test]
fn naive_half_dot_overflows_exactly_at_the_256th_term() {
    let x = Tensor::from_f16(Shape::new(1, 4096, 1, 1), vec![HalfBits::from_f32(16.0); 4096]).unwrap();
    let w = Tensor::from_f16(Shape::new(1, 4096, 1, 1), vec![HalfBits::from_f32(16.0); 4096]).unwrap();
    let naive = InnerProductConfig { bias: false, accum: AccumPolicy::Naive, ..InnerProductConfig::new(1) };
    let y = inner_product_forward(&x, &w, None, &naive).unwrap();
    assert_eq!(y.as_f16().unwrap()[0], HalfBits::INFINITY);

    // 255 * 256 = 65280 is a half; adding one more 256 gives 65536, past the
    // 65520 rounding threshold.
    for (terms, expect) in [(255usize, 65280.0f32), (256, f32::INFINITY)] {
        let x = Tensor::from_f16(Shape::new(1, terms, 1, 1), vec![HalfBits::from_f32(16.0); terms]).unwrap();
        let y = inner_product_forward(&x, &x, None, &naive).unwrap();
        assert_eq!(y.as_f16().unwrap()[0].to_f32(), expect, "{terms} terms");
    }

    let grouped = InnerProductConfig { accum: AccumPolicy::Grouped { block: 256 }, ..naive };
    let y = inner_product_forward(&x, &w, None, &grouped).unwrap();
    assert_eq!(y.as_f16().unwrap()[0], HalfBits::INFINITY, "1048576 is not representable either way");
}

#[test]
fn identity_inner_product() {
    let x = rand(Shape::new(3, 4, 1, 1), Dtype::F16, 30, -10.0, 10.0);
    let mut eye = vec![0.0f32; 16];
    for i in 0..4 {
        eye[i * 4 + i] = 1.0;
    }
    let w = Tensor::from_f16(Shape::new(4, 4, 1, 1), halves(&eye)).unwrap();
    let b = Tensor::from_f16(Shape::new(1, 4, 1, 1), vec![HalfBits::ZERO; 4]).unwrap();
    let y = inner_product_forward(&x, &w, Some(&b), &InnerProductConfig::new(4)).unwrap();
    assert!(y.bitwise_eq(&x));
}

#[test]
fn half_batchnorm_moments_on_image_scale_data() {
    let t = rand(Shape::new(1, 1, 1, 4096), Dtype::F16, 40, 128.0, 255.0);
    let v = t.as_f16().unwrap();
    let (m64, v64) = moments(&to_f64(&t));
    assert!(!grouped_mean(v, 1).unwrap().is_finite());
    let cfg = BatchNormConfig::default();
    let mean = grouped_mean(v, cfg.group_count).unwrap();
    let var = shifted_variance(v, mean, &cfg).unwrap();
    assert!((mean.to_f32() as f64 - m64).abs() / m64 <= 0.01);
    assert!((var.to_f32() as f64 - v64).abs() / v64 <= 0.01);

    // Without shifting, squared deviations up to 127^2 overflow the group sums.
    let t = rand(Shape::new(1, 1, 1, 4096), Dtype::F16, 41, 0.0, 255.0);
    let v = t.as_f16().unwrap();
    let (m64, v64) = moments(&to_f64(&t));
    let mean = grouped_mean(v, cfg.group_count).unwrap();
    let var = shifted_variance(v, mean, &cfg).unwrap();
    assert!((var.to_f32() as f64 - v64).abs() / v64 <= 0.01, "{var} vs {v64}");
    assert!((mean.to_f32() as f64 - m64).abs() / m64 <= 0.01);
    let unshifted = BatchNormConfig { shift: ShiftPolicy::Fixed(1.0), ..cfg };
    assert!(!shifted_variance(v, mean, &unshifted).unwrap().is_finite());
}

#[test]
fn batchnorm_layer_in_half_on_large_values() {
    let x = rand(Shape::new(16, 2, 16, 16), Dtype::F16, 42, 128.0, 255.0);
    let y = batchnorm_forward(&x, &BatchNormConfig::default(), None).unwrap();
    let r = batchnorm(&to_f64(&x), x.shape(), 1e-5, None);
    let got = to_f64(&y);
    assert!(got.iter().all(|v| v.is_finite()));
    assert!(normwise(&got, &r) <= 0.02, "{}", normwise(&got, &r));

    let naive = batchnorm_forward(&x, &BatchNormConfig::naive(), None).unwrap();
    assert!(to_f64(&naive).iter().any(|v| !v.is_finite()));
}

#[test]
fn constant_input_normalizes_to_zero() {
    let x = Tensor::from_f16(Shape::new(4, 2, 4, 4), vec![HalfBits::from_f32(37.0); 128]).unwrap();
    let y = batchnorm_forward(&x, &BatchNormConfig::default(), None).unwrap();
    assert!(y.as_f16().unwrap().iter().all(|h| h.is_zero()));
}

#[test]
fn half_softmax_needs_max_subtraction() {
    let logits = halves(&[20.0, 0.0, 0.0]);
    let mut out = vec![HalfBits::ZERO; 3];
    softmax_slice(&logits, &mut out, false, AccumPolicy::default());
    assert!(out.iter().any(|h| !h.is_finite()), "exp(20) is past 65504");
    softmax_slice(&logits, &mut out, true, AccumPolicy::default());
    let z: f64 = 1.0 + 2.0 * (-20f64).exp();
    let expect = [1.0 / z, (-20f64).exp() / z, (-20f64).exp() / z];
    for (h, e) in out.iter().zip(expect) {
        assert!((h.to_f32() as f64 - e).abs() <= 1e-2, "{h} vs {e}");
    }
}

#[test]
fn dtype_closure() {
    let x = rand(Shape::new(2, 2, 4, 4), Dtype::F16, 50, -1.0, 1.0);
    assert_eq!(relu_forward(&x, 0.0).unwrap().dtype(), Dtype::F16);
    assert_eq!(softmax_forward(&x, AccumPolicy::Naive).unwrap().dtype(), Dtype::F16);
    assert_eq!(pool_forward(&x, &PoolConfig::new(PoolMode::Avg, 2, 2)).unwrap().dtype(), Dtype::F16);
    let w32 = rand(Shape::new(1, 2, 1, 1), Dtype::F32, 51, -1.0, 1.0);
    assert!(conv_forward(&x, &w32, None, &ConvConfig::new(1, 1)).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn f32_grouped_mean_is_the_plain_mean(values in prop::collection::vec(-1000.0f32..1000.0, 1..3000), g in 1usize..64) {
        let g = g.min(values.len());
        let m = grouped_mean(&values, g).unwrap() as f64;
        let exact = values.iter().map(|&v| v as f64).sum::<f64>() / values.len() as f64;
        let scale = values.iter().map(|v| v.abs() as f64).sum::<f64>() / values.len() as f64;
        prop_assert!((m - exact).abs() <= 1e-6 * scale.max(f64::MIN_POSITIVE), "{} vs {}", m, exact);
    }

    #[test]
    fn half_grouped_mean_of_constant_is_exact(k in 1u16..2000, n in 1usize..5000, g in 1usize..64) {
        // Constants with few significant bits sum exactly in pairwise order.
        let c = HalfBits::from_f32(k as f32 / 64.0);
        let values = vec![c; n];
        let g = g.min(n).max(2.min(n));
        let m = grouped_mean(&values, g).unwrap();
        let rel = (m.to_f32() - c.to_f32()).abs() / c.to_f32();
        prop_assert!(rel <= 2f32.powi(-9), "{} vs {}", m, c);
    }

    #[test]
    fn layers_are_deterministic(seed in any::<u64>()) {
        let x = rand(Shape::new(2, 3, 6, 6), Dtype::F16, seed, -3.0, 3.0);
        let w = rand(Shape::new(2, 3, 3, 3), Dtype::F16, seed ^ 1, -1.0, 1.0);
        let a = conv_forward(&x, &w, None, &ConvConfig::new(2, 3)).unwrap();
        let b = conv_forward(&x, &w, None, &ConvConfig::new(2, 3)).unwrap();
        prop_assert!(a.bitwise_eq(&b));
        let a = batchnorm_forward(&x, &BatchNormConfig::default(), None).unwrap();
        let b = batchnorm_forward(&x, &BatchNormConfig::default(), None).unwrap();
        prop_assert!(a.bitwise_eq(&b));
    }

    #[test]
    fn relu_output_is_nonnegative_and_idempotent(seed in any::<u64>()) {
        let x = rand(Shape::new(1, 2, 5, 5), Dtype::F16, seed, -5.0, 5.0);
        let y = relu_forward(&x, 0.0).unwrap();
        prop_assert!(y.as_f16().unwrap().iter().all(|h| !h.is_sign_negative() || h.is_zero()));
        prop_assert!(relu_forward(&y, 0.0).unwrap().bitwise_eq(&y));
    }
}
