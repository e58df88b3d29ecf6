use proptest::prelude::*;

use axnorm::characterization::ErrorMoments;
use axnorm::gemm::{gemm_approx, gemm_exact, GemmDims};
use axnorm::multiplier::{multiply, MultiplierModel};
use axnorm::network::{forward, im2col, ConvSpec, NetworkDescriptor, Tensor, TensorShape, ToyModel};
use axnorm::noise::{NoiseKey, NoisePlan};
use axnorm::predictor::{dominance_condition, predict_gemm, predict_layers, InverseView};
use axnorm::RealMatrix;

/// Positive binary32 values whose products stay well inside the normal range.
fn magnitude() -> impl Strategy<Value = f32> {
    (1.0f32..2.0, -40i32..40).prop_map(|(m, e)| m * 2f32.powi(e))
}

fn log_model() -> impl Strategy<Value = MultiplierModel> {
    prop_oneof![
        Just(MultiplierModel::Mitchell),
        (0u8..=15).prop_map(|c| MultiplierModel::Mbm { correction_code: c }),
    ]
}

proptest! {
    #[test]
    fn mitchell_never_overestimates(x in magnitude(), y in magnitude()) {
        let r = multiply(&MultiplierModel::Mitchell, x, y, None).unwrap();
        prop_assert!(r.epsilon <= 0.0);
    }

    #[test]
    fn sign_is_handled_exactly(model in log_model(), x in magnitude(), y in magnitude()) {
        let e = multiply(&model, x, y, None).unwrap().epsilon;
        prop_assert_eq!(multiply(&model, -x, y, None).unwrap().epsilon, -e);
        prop_assert_eq!(multiply(&model, x, -y, None).unwrap().epsilon, -e);
        prop_assert_eq!(multiply(&model, -x, -y, None).unwrap().epsilon, e);
    }

    #[test]
    fn mbm_output_grows_with_code(x in magnitude(), y in magnitude(), code in 0u8..15) {
        let lo = multiply(&MultiplierModel::Mbm { correction_code: code }, x, y, None).unwrap();
        let hi = multiply(&MultiplierModel::Mbm { correction_code: code + 1 }, x, y, None).unwrap();
        prop_assert!(hi.z_approx >= lo.z_approx);
    }

    #[test]
    fn mitchell_exact_on_powers_of_two(a in -60i32..60, b in -60i32..60, sx: bool, sy: bool) {
        let x = if sx { -(2f32.powi(a)) } else { 2f32.powi(a) };
        let y = if sy { -(2f32.powi(b)) } else { 2f32.powi(b) };
        for m in [MultiplierModel::Mitchell, MultiplierModel::Mbm { correction_code: 0 }] {
            prop_assert_eq!(multiply(&m, x, y, None).unwrap().epsilon, 0.0);
        }
    }

    #[test]
    fn exact_model_is_platform_product(x: f32, y: f32) {
        prop_assume!(x.is_finite() && y.is_finite());
        let r = multiply(&MultiplierModel::Exact, x, y, None).unwrap();
        prop_assert_eq!((r.z_approx as f32).to_bits(), (x * y).to_bits());
    }

    #[test]
    fn scaling_laws(
        n in 1usize..500, m in 1usize..500, p in 1usize..500,
        mu in -1e-2f64..1e-2, sigma in 0.0f64..1e-1, k in 2usize..5,
    ) {
        let mo = ErrorMoments::known(mu, sigma).unwrap();
        let base = predict_gemm(GemmDims::new(n, m, p).unwrap(), &mo);
        let rel = |a: f64, b: f64| (a - b).abs() <= 1e-12 * a.abs().max(b.abs());
        let kn = predict_gemm(GemmDims::new(k * n, m, p).unwrap(), &mo);
        let kp = predict_gemm(GemmDims::new(n, m, k * p).unwrap(), &mo);
        let km = predict_gemm(GemmDims::new(n, k * m, p).unwrap(), &mo);
        let kf = k as f64;
        prop_assert!(rel(kn.total, kf * base.total));
        prop_assert!(rel(kp.total, kf * base.total));
        prop_assert!(rel(km.variance_term, kf * base.variance_term));
        prop_assert!(rel(km.bias_term, kf * kf * base.bias_term));
        prop_assert_eq!(base.total, base.variance_term + base.bias_term);
    }

    #[test]
    fn dominance_agrees_with_terms(m in 1usize..100_000, mu in -1e-3f64..1e-3, sigma in 0.0f64..1e-2) {
        let mo = ErrorMoments::known(mu, sigma).unwrap();
        let (_, flag) = dominance_condition(&mo, m).unwrap();
        let e = predict_gemm(GemmDims::new(3, m, 2).unwrap(), &mo);
        prop_assert_eq!(flag, e.bias_term > e.variance_term);
        prop_assert_eq!(flag, e.bias_dominated);
    }

    #[test]
    fn network_sum_is_order_free_and_additive(
        dims in prop::collection::vec((1usize..64, 1usize..256, 1usize..64), 1..6),
        mu in -1e-3f64..1e-3, sigma in 0.0f64..1e-2,
    ) {
        let dims: Vec<GemmDims> = dims.into_iter().map(|(n, m, p)| GemmDims::new(n, m, p).unwrap()).collect();
        let mo = ErrorMoments::known(mu, sigma).unwrap();
        let v = InverseView::default();
        let fwd = predict_layers(&dims, &vec![mo; dims.len()], v).unwrap();
        let mut rev = dims.clone();
        rev.reverse();
        let back = predict_layers(&rev, &vec![mo; rev.len()], v).unwrap();
        let tol = 1e-12 * fwd.accumulated;
        prop_assert!((fwd.accumulated - back.accumulated).abs() <= tol);
        let mut twice = dims.clone();
        twice.extend_from_slice(&dims);
        let cat = predict_layers(&twice, &vec![mo; twice.len()], v).unwrap();
        prop_assert!((cat.accumulated - 2.0 * fwd.accumulated).abs() <= 2.0 * tol);
    }
}

fn random_matrix(rows: usize, cols: usize, seed: u64) -> RealMatrix {
    RealMatrix::from_fn(rows, cols, |i, j| NoiseKey::new(seed, i as u64, j as u64).normal(0.0, 1.0)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn exact_model_matches_reference_gemm(n in 1usize..12, m in 1usize..40, p in 1usize..12, seed: u64) {
        let a = random_matrix(n, m, seed).quantize_f32().unwrap();
        let b = random_matrix(m, p, seed ^ 1).quantize_f32().unwrap();
        let approx = gemm_approx(&a, &b, &MultiplierModel::Exact, NoisePlan::new(seed, 0)).unwrap();
        prop_assert_eq!(approx, gemm_exact(&a, &b).unwrap());
    }

    #[test]
    fn lowered_conv_matches_direct(
        c_in in 1usize..4, c_out in 1usize..4, k in prop::sample::select(vec![1usize, 3, 5]),
        stride in 1usize..3, pad in 0usize..3, h in 5usize..10, w in 5usize..10, seed: u64,
    ) {
        let shape = TensorShape::new(2, c_in, h, w);
        let conv = ConvSpec::square(c_in, c_out, k, stride, pad);
        let x = Tensor::new(shape, random_matrix(1, shape.len(), seed).into_data()).unwrap();
        let kern = random_matrix(conv.patch_len(), c_out, seed ^ 7);
        let y = gemm_exact(&im2col(&x, &conv).unwrap(), &kern).unwrap();
        let (oh, ow) = conv.output_hw(h, w).unwrap();
        for b in 0..2 {
            for oc in 0..c_out {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = 0.0;
                        let mut row = 0;
                        for ic in 0..c_in {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let iy = (oy * stride + ky) as isize - pad as isize;
                                    let ix = (ox * stride + kx) as isize - pad as isize;
                                    if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                        acc += x.at(b, ic, iy as usize, ix as usize) * kern.get(row, oc);
                                    }
                                    row += 1;
                                }
                            }
                        }
                        let got = y.get((b * oh + oy) * ow + ox, oc);
                        prop_assert!((got - acc).abs() <= f64::EPSILON * acc.abs().max(f64::MIN_POSITIVE));
                    }
                }
            }
        }
    }
}

#[test]
fn exact_forward_ignores_the_noise_plan() {
    let net = NetworkDescriptor::toy_cnn(1);
    let weights = net
        .gemm_dims()
        .unwrap()
        .iter()
        .enumerate()
        .map(|(l, d)| random_matrix(d.m, d.p, 100 + l as u64))
        .collect();
    let model = ToyModel::new(net, weights).unwrap();
    let x = Tensor::new(TensorShape::new(1, 3, 32, 32), random_matrix(1, 3 * 32 * 32, 5).into_data()).unwrap();
    let a = forward(&model, &x, &MultiplierModel::Exact, NoisePlan::new(1, 0)).unwrap();
    let b = forward(&model, &x, &MultiplierModel::Exact, NoisePlan::new(99, 7)).unwrap();
    assert_eq!(a, b);
}
