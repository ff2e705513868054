use nalgebra::DMatrix;
use proptest::prelude::*;
use rcrc_core::narma::narma10;
use rcrc_core::reservoir::{fit_ridge, nmse, Reservoir, ReservoirSpec};
use rcrc_core::rng::Rng;

/// `tanh(W_in·u + W·x)` written out with plain loops.
fn candidate_state(r: &Reservoir, x: &[f64], u: &[f64]) -> Vec<f64> {
    let (w_in, w) = (r.input_weights(), r.recurrent_weights());
    let mut full_u = u.to_vec();
    if r.spec().bias_input {
        full_u.push(1.0);
    }
    (0..x.len())
        .map(|i| {
            let a: f64 = (0..full_u.len()).map(|j| w_in[(i, j)] * full_u[j]).sum();
            let b: f64 = (0..x.len()).map(|j| w[(i, j)] * x[j]).sum();
            (a + b).tanh()
        })
        .collect()
}

fn small_spec(bias: bool) -> ReservoirSpec {
    ReservoirSpec {
        input_dim: 3,
        state_dim: 8,
        bias_input: bias,
        ..Default::default()
    }
}

#[test]
fn step_matches_loop_oracle() {
    for (seed, bias) in [(0, false), (1, true), (2, false), (3, true)] {
        let mut r = Reservoir::build(small_spec(bias), seed).unwrap();
        let mut rng = Rng::new(seed + 100);
        let alpha = r.spec().leak_rate;
        for _ in 0..20 {
            let u: Vec<f64> = (0..3).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
            let x = r.state().to_vec();
            let cand = candidate_state(&r, &x, &u);
            let got = r.step(&u).unwrap().to_vec();
            for i in 0..8 {
                let want = (1.0 - alpha) * x[i] + alpha * cand[i];
                assert!((got[i] - want).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn construction_hits_radius_and_sparsity() {
    for seed in 0..3 {
        let spec = ReservoirSpec {
            input_dim: 4,
            state_dim: 60,
            ..Default::default()
        };
        let r = Reservoir::build(spec, seed).unwrap();
        let w = r.recurrent_weights();
        let zeros = w.iter().filter(|&&v| v == 0.0).count();
        assert_eq!(zeros, 2880);
        let rho = w.clone().complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max);
        assert!((rho - 0.95).abs() < 1e-6, "seed {seed}: {rho}");
    }
}

#[test]
fn different_initial_states_converge_under_common_drive() {
    for seed in 0..2 {
        let mut a = Reservoir::build(ReservoirSpec::default(), seed).unwrap();
        let mut b = a.clone();
        let mut rng = Rng::new(seed + 7);
        let init_a: Vec<f64> = (0..512).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
        let init_b: Vec<f64> = (0..512).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
        a.set_state(&init_a).unwrap();
        b.set_state(&init_b).unwrap();
        for _ in 0..500 {
            let u: Vec<f64> = (0..512).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
            a.step(&u).unwrap();
            b.step(&u).unwrap();
        }
        let d: f64 = a.state().iter().zip(b.state()).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
        assert!(d < 1e-4, "seed {seed}: distance {d}");
    }
}

#[test]
fn narma10_readout_beats_threshold() {
    let (washout, train, test) = (200, 2000, 1000);
    let total = washout + train + test;
    let (u, y) = (0..).find_map(|s| narma10(total, 42 + s)).unwrap();
    let mut r = Reservoir::build(ReservoirSpec::generic(1, 200), 5).unwrap();
    let inputs = DMatrix::from_column_slice(total, 1, &u);
    let states = r.run(&inputs).unwrap();
    let rows = |m: &DMatrix<f64>, a: usize, n: usize| m.rows(a, n).into_owned();
    let targets = DMatrix::from_column_slice(total, 1, &y);
    let readout = fit_ridge(
        &rows(&states, washout, train),
        &rows(&inputs, washout, train),
        &rows(&targets, washout, train),
        1e-8,
    )
    .unwrap();
    let pred = readout
        .predict_batch(&rows(&states, washout + train, test), &rows(&inputs, washout + train, test))
        .unwrap();
    let e = nmse(&pred, &rows(&targets, washout + train, test));
    assert!(e < 0.25, "test NMSE {e}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn update_interpolates_between_state_and_candidate(seed in 0u64..500, alpha in 0.0f64..=1.0) {
        let spec = ReservoirSpec { leak_rate: alpha, ..small_spec(false) };
        let mut r = Reservoir::build(spec, seed).unwrap();
        let mut rng = Rng::new(seed);
        for _ in 0..10 {
            let u: Vec<f64> = (0..3).map(|_| rng.normal(0.0, 2.0)).collect();
            let x = r.state().to_vec();
            let cand = candidate_state(&r, &x, &u);
            let next = r.step(&u).unwrap().to_vec();
            for i in 0..8 {
                let (lo, hi) = (x[i].min(cand[i]), x[i].max(cand[i]));
                prop_assert!(next[i] >= lo - 1e-15 && next[i] <= hi + 1e-15);
            }
        }
    }

    #[test]
    fn state_stays_inside_open_unit_cube(seed in 0u64..500, scale in 0.0f64..50.0) {
        let mut r = Reservoir::build(small_spec(true), seed).unwrap();
        let mut rng = Rng::new(seed ^ 0xff);
        for _ in 0..50 {
            let u: Vec<f64> = (0..3).map(|_| scale * rng.uniform_range(-1.0, 1.0)).collect();
            let x = r.step(&u).unwrap();
            prop_assert!(x.iter().all(|v| v.abs() < 1.0));
        }
    }

    #[test]
    fn build_is_deterministic(seed in any::<u64>()) {
        let a = Reservoir::build(small_spec(false), seed).unwrap();
        let b = Reservoir::build(small_spec(false), seed).unwrap();
        prop_assert_eq!(a, b);
    }
}
