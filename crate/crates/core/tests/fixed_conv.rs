use proptest::prelude::*;
use rcrc_core::fixed_conv::{
    conv2d, preprocess, ConvLayerSpec, ConvSpec, FeatureExtractor, Frame, Kernel, RawImage, Tensor3, FRAME_SIZE,
};
use rcrc_core::rng::Rng;

/// Direct nested-loop "same" cross-correlation.
fn naive_conv(input: &Tensor3, k: &Kernel, stride: usize) -> Tensor3 {
    let out_len = |n: usize| (n + stride - 1) / stride;
    let pad = |n: usize| {
        let o = out_len(n);
        let total = ((o - 1) * stride + k.size) as isize - n as isize;
        total.max(0) as usize / 2
    };
    let (oh, ow) = (out_len(input.height), out_len(input.width));
    let (ph, pw) = (pad(input.height), pad(input.width));
    let mut out = Tensor3::zeros(k.out_channels, oh, ow);
    for o in 0..k.out_channels {
        for y in 0..oh {
            for x in 0..ow {
                let mut acc = 0.0;
                for i in 0..k.in_channels {
                    for ky in 0..k.size {
                        for kx in 0..k.size {
                            let sy = (y * stride + ky) as isize - ph as isize;
                            let sx = (x * stride + kx) as isize - pw as isize;
                            if sy < 0 || sx < 0 || sy >= input.height as isize || sx >= input.width as isize {
                                continue;
                            }
                            acc += input.at(i, sy as usize, sx as usize) * k.at(o, i, ky, kx);
                        }
                    }
                }
                out.data[(o * oh + y) * ow + x] = acc;
            }
        }
    }
    out
}

fn random_tensor(rng: &mut Rng, c: usize, h: usize, w: usize) -> Tensor3 {
    Tensor3::from_vec(c, h, w, (0..c * h * w).map(|_| rng.uniform_range(-1.0, 1.0)).collect()).unwrap()
}

fn random_kernel(rng: &mut Rng, o: usize, i: usize, k: usize) -> Kernel {
    Kernel::from_vec(o, i, k, (0..o * i * k * k).map(|_| rng.standard_normal()).collect()).unwrap()
}

#[test]
fn conv_matches_naive_loops_on_random_instances() {
    let mut rng = Rng::new(2024);
    for case in 0..200 {
        let c = 1 + rng.below(3) as usize;
        let o = 1 + rng.below(4) as usize;
        let h = 1 + rng.below(12) as usize;
        let w = 1 + rng.below(12) as usize;
        let k = 1 + rng.below(7) as usize;
        let s = 1 + rng.below(3) as usize;
        let input = random_tensor(&mut rng, c, h, w);
        let kernel = random_kernel(&mut rng, o, c, k);
        let got = conv2d(&input, &kernel, s).unwrap();
        let want = naive_conv(&input, &kernel, s);
        assert_eq!((got.channels, got.height, got.width), (want.channels, want.height, want.width));
        let err = got.data.iter().zip(&want.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-12, "case {case}: c={c} o={o} {h}x{w} k={k} s={s} err={err}");
    }
}

fn naive_features(ex: &FeatureExtractor, frame: &Frame) -> Vec<f64> {
    let mut x = frame.tensor().clone();
    for (k, l) in ex.kernels().iter().zip(&ex.spec().layers) {
        x = naive_conv(&x, k, l.stride);
        x.data.iter_mut().for_each(|v| *v = v.tanh());
    }
    let d = ex.output_dim();
    (0..d)
        .map(|j| {
            x.data
                .iter()
                .enumerate()
                .map(|(i, v)| v * ex.dense_weight()[i * d + j])
                .sum::<f64>()
                .tanh()
        })
        .collect()
}

fn random_frame(rng: &mut Rng) -> Frame {
    let data = (0..FRAME_SIZE * FRAME_SIZE * 3).map(|_| rng.below(256) as u8).collect();
    preprocess(&RawImage::new(FRAME_SIZE, FRAME_SIZE, 3, data).unwrap()).unwrap()
}

fn small_spec() -> ConvSpec {
    ConvSpec {
        layers: vec![
            ConvLayerSpec {
                filter_size: 13,
                out_channels: 3,
                stride: 2,
            },
            ConvLayerSpec {
                filter_size: 4,
                out_channels: 5,
                stride: 2,
            },
            ConvLayerSpec {
                filter_size: 3,
                out_channels: 4,
                stride: 3,
            },
        ],
        dense_out: 16,
        conv_weight_stddev: 0.06,
    }
}

#[test]
fn extractor_matches_naive_pipeline() {
    // The 13-wide first layer goes through the frequency-domain path.
    let ex = FeatureExtractor::build(small_spec(), 8).unwrap();
    let mut rng = Rng::new(1);
    for _ in 0..3 {
        let frame = random_frame(&mut rng);
        let got = ex.extract(&frame);
        let want = naive_features(&ex, &frame);
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
    }
}

#[test]
fn default_extractor_shape_and_range() {
    let ex = FeatureExtractor::build(ConvSpec::default(), 0).unwrap();
    assert_eq!(ex.flattened_dim(), 8192);
    let mut rng = Rng::new(5);
    let f = ex.extract(&random_frame(&mut rng));
    assert_eq!(f.len(), 512);
    assert!(f.iter().all(|v| v.abs() < 1.0));
    assert!(ex.extract(&Frame::zeros()).iter().all(|&v| v == 0.0));
}

#[test]
fn weight_statistics_match_the_draw_distribution() {
    let ex = FeatureExtractor::build(ConvSpec::default(), 17).unwrap();
    let mut all: Vec<f64> = ex.kernels().iter().flat_map(|k| k.data.iter().copied()).collect();
    all.extend_from_slice(ex.dense_weight());
    let n = all.len() as f64;
    let mean = all.iter().sum::<f64>() / n;
    let std = (all.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    assert!(mean.abs() < 4.0 * 0.06 / n.sqrt(), "mean {mean}");
    assert!((std - 0.06).abs() < 0.05 * 0.06, "std {std}");
}

#[test]
fn downscaling_samples_the_nearest_source_pixel() {
    let side = 128;
    let mut img = RawImage::filled(side, side, [0, 0, 0]);
    for y in 0..side {
        for x in 0..side {
            img.put(x, y, [(x % 251) as u8, (y % 251) as u8, ((x * 7 + y * 3) % 256) as u8]);
        }
    }
    let f = preprocess(&img).unwrap();
    for y in 0..64 {
        for x in 0..64 {
            let (sx, sy) = (2 * x, 2 * y);
            let src = img.pixel(sx, sy);
            for c in 0..3 {
                assert_eq!(f.tensor().at(c, y, x), src[c] as f64 / 255.0);
            }
        }
    }
}

#[test]
fn four_channel_images_are_rejected() {
    let img = RawImage::new(64, 64, 4, vec![0; 64 * 64 * 4]).unwrap();
    assert!(preprocess(&img).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn conv_is_linear_in_the_input(seed in any::<u64>(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let mut rng = Rng::new(seed);
        let x = random_tensor(&mut rng, 2, 7, 9);
        let y = random_tensor(&mut rng, 2, 7, 9);
        let k = random_kernel(&mut rng, 3, 2, 3);
        let mix = Tensor3::from_vec(2, 7, 9, x.data.iter().zip(&y.data).map(|(p, q)| a * p + b * q).collect()).unwrap();
        let lhs = conv2d(&mix, &k, 2).unwrap();
        let (cx, cy) = (conv2d(&x, &k, 2).unwrap(), conv2d(&y, &k, 2).unwrap());
        for i in 0..lhs.data.len() {
            prop_assert!((lhs.data[i] - (a * cx.data[i] + b * cy.data[i])).abs() < 1e-10);
        }
    }

    #[test]
    fn output_side_is_ceiling_of_input_over_stride(h in 1usize..40, w in 1usize..40, k in 1usize..9, s in 1usize..5) {
        let x = Tensor3::zeros(1, h, w);
        let ker = Kernel::from_vec(1, 1, k, vec![1.0; k * k]).unwrap();
        let y = conv2d(&x, &ker, s).unwrap();
        prop_assert_eq!((y.height, y.width), (h.div_ceil(s), w.div_ceil(s)));
    }

    #[test]
    fn features_stay_in_open_unit_interval(seed in any::<u64>()) {
        let ex = FeatureExtractor::build(small_spec(), seed % 16).unwrap();
        let f = ex.extract(&random_frame(&mut Rng::new(seed)));
        prop_assert!(f.iter().all(|v| v.abs() < 1.0));
    }
}
