use convcs::conv::{conv2d_transposed, conv2d_valid, Kernels};
use convcs::tensor::{pad_reflect, Shape, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn randn(rng: &mut ChaCha8Rng, shape: Shape) -> Tensor<f64> {
    Tensor::from_fn(shape, |_, _, _| rng.sample(StandardNormal))
}

fn rand_kernels(rng: &mut ChaCha8Rng, o: usize, i: usize, k: usize) -> Kernels<f64> {
    Kernels::from_vec(o, i, k, (0..o * i * k * k).map(|_| rng.sample(StandardNormal)).collect()).unwrap()
}

fn naive(x: &Tensor<f64>, k: &Kernels<f64>, s: usize) -> Tensor<f64> {
    let size = k.size();
    let oh = (x.height() - size) / s + 1;
    let ow = (x.width() - size) / s + 1;
    Tensor::from_fn(Shape::new(k.out_channels(), oh, ow), |o, y, xx| {
        let mut acc = 0.0;
        for i in 0..k.in_channels() {
            let tap = k.tap(o, i);
            for ky in 0..size {
                for kx in 0..size {
                    acc += tap[ky * size + kx] * x[(i, y * s + ky, xx * s + kx)];
                }
            }
        }
        acc
    })
}

/// `(c_in, c_out, k, s, gh, gw)` with H = (gh-1)s + k.
fn geometry() -> impl Strategy<Value = (usize, usize, usize, usize, usize, usize, u64)> {
    (1usize..4, 1usize..4, 1usize..7, 1usize..5, 1usize..9, 1usize..9, any::<u64>())
        .prop_map(|(ci, co, k, s, gh, gw, seed)| (ci, co, k, s.min(k.max(1)), gh, gw, seed))
}

#[test]
fn small_case_matches_double_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = randn(&mut rng, Shape::new(1, 5, 5));
    let k = rand_kernels(&mut rng, 1, 1, 3);
    let got = conv2d_valid(&x, k.view(), 2).unwrap();
    let want = naive(&x, &k, 2);
    assert_eq!(got.shape(), Shape::new(1, 2, 2));
    for (a, b) in got.data().iter().zip(want.data()) {
        assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
    }
}

#[test]
fn divisibility_examples() {
    let x = Tensor::<f64>::zeros(Shape::new(1, 160, 160));
    let k = Kernels::<f64>::zeros(1, 1, 11);
    assert!(conv2d_valid(&x, k.view(), 5).is_err());
    let x = Tensor::<f64>::zeros(Shape::new(1, 161, 161));
    assert_eq!(conv2d_valid(&x, k.view(), 5).unwrap().shape(), Shape::new(1, 31, 31));
}

#[test]
fn shape_algebra_sweep() {
    for h in 1..30 {
        for k in 1..8 {
            for s in 1..6 {
                let x = Tensor::<f64>::zeros(Shape::new(1, h, h + 1));
                let ker = Kernels::<f64>::zeros(2, 1, k);
                let r = conv2d_valid(&x, ker.view(), s);
                let ok_h = h >= k && (h - k) % s == 0;
                let ok_w = h + 1 >= k && (h + 1 - k) % s == 0;
                match r {
                    Ok(out) => {
                        assert!(ok_h && ok_w);
                        assert_eq!(out.shape(), Shape::new(2, (h - k) / s + 1, (h + 1 - k) / s + 1));
                    }
                    Err(_) => assert!(!(ok_h && ok_w)),
                }
            }
        }
    }
}

#[test]
fn adjoint_of_identity_scatters_back() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let y = randn(&mut rng, Shape::new(1, 6, 4));
    let k = Kernels::from_vec(1, 1, 1, vec![1.0]).unwrap();
    assert_eq!(conv2d_transposed(&y, k.view(), 1, (6, 4)).unwrap(), y);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn optimized_equals_naive((ci, co, k, s, gh, gw, seed) in geometry()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (h, w) = ((gh - 1) * s + k, (gw - 1) * s + k);
        let x = randn(&mut rng, Shape::new(ci, h, w));
        let ker = rand_kernels(&mut rng, co, ci, k);
        let got = conv2d_valid(&x, ker.view(), s).unwrap();
        let want = naive(&x, &ker, s);
        let scale = want.norm().max(1e-300);
        prop_assert!(got.sub(&want).unwrap().norm() <= 1e-12 * scale);
    }

    #[test]
    fn transposed_is_the_adjoint((ci, co, k, s, gh, gw, seed) in geometry()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (h, w) = ((gh - 1) * s + k, (gw - 1) * s + k);
        let x = randn(&mut rng, Shape::new(ci, h, w));
        let y = randn(&mut rng, Shape::new(co, gh, gw));
        let ker = rand_kernels(&mut rng, co, ci, k);
        let lhs = conv2d_valid(&x, ker.view(), s).unwrap().dot(&y).unwrap();
        let rhs = x.dot(&conv2d_transposed(&y, ker.view(), s, (h, w)).unwrap()).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-10 * x.norm() * y.norm());
    }

    #[test]
    fn convolution_is_linear((ci, co, k, s, gh, gw, seed) in geometry(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (h, w) = ((gh - 1) * s + k, (gw - 1) * s + k);
        let x = randn(&mut rng, Shape::new(ci, h, w));
        let z = randn(&mut rng, Shape::new(ci, h, w));
        let ker = rand_kernels(&mut rng, co, ci, k);
        let mix = x.scale(a).add(&z.scale(b)).unwrap();
        let lhs = conv2d_valid(&mix, ker.view(), s).unwrap();
        let rhs = conv2d_valid(&x, ker.view(), s).unwrap().scale(a)
            .add(&conv2d_valid(&z, ker.view(), s).unwrap().scale(b)).unwrap();
        let scale = (a.abs() * x.norm() + b.abs() * z.norm()) * ker.to_tensor().norm();
        prop_assert!(lhs.sub(&rhs).unwrap().norm() <= 1e-12 * scale.max(1e-300));
    }

    #[test]
    fn pad_then_crop_is_identity(h in 2usize..20, w in 2usize..20, dh in 0usize..20, dw in 0usize..20, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = randn(&mut rng, Shape::new(2, h, w));
        let (th, tw) = (h + dh.min(h - 1), w + dw.min(w - 1));
        let p = pad_reflect(&x, (th, tw)).unwrap();
        prop_assert_eq!(p.shape(), Shape::new(2, th, tw));
        let (top, left) = ((th - h) / 2, (tw - w) / 2);
        prop_assert_eq!(p.crop(top, left, h, w).unwrap(), x);
    }
}
