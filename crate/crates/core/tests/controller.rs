use proptest::prelude::*;
use rcrc_core::controller::{assemble_input, squash_continuous, ActionMode, ControllerWeights};

fn vec_in(n: usize, r: f64) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-r..r, n)
}

#[test]
fn default_parameter_counts() {
    assert_eq!(ControllerWeights::parameter_count(ActionMode::Continuous3, 512, 512), 3075);
    assert_eq!(ControllerWeights::parameter_count(ActionMode::Discrete2, 512, 512), 1025);
    assert_eq!(ControllerWeights::zeros(ActionMode::Continuous3, 512, 512).len(), 3075);
}

#[test]
fn input_is_features_then_state_then_bias() {
    let s = assemble_input(&[0.1, 0.2], &[0.3], 2, 1).unwrap();
    assert_eq!(s, vec![0.1, 0.2, 0.3, 1.0]);
    assert!(assemble_input(&[0.1], &[0.3], 2, 1).is_err());
}

#[test]
fn wrong_mode_or_length_is_rejected() {
    let w = ControllerWeights::zeros(ActionMode::Discrete2, 2, 2);
    assert!(w.act_continuous(&[0.0; 5]).is_err());
    assert!(w.act_discrete(&[0.0; 4]).is_err());
    assert!(ControllerWeights::from_flat(ActionMode::Discrete2, 5, vec![f64::NAN; 5]).is_err());
    assert!(ControllerWeights::from_flat(ActionMode::Continuous3, 5, vec![0.0; 10]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn continuous_actions_stay_in_range(w in vec_in(3 * 7, 50.0), s in vec_in(7, 5.0)) {
        let c = ControllerWeights::from_flat(ActionMode::Continuous3, 7, w).unwrap();
        let a = c.act_continuous(&s).unwrap();
        prop_assert!((-1.0..=1.0).contains(&a.steer));
        prop_assert!((0.0..=1.0).contains(&a.brake));
        prop_assert!((0.0..=1.0).contains(&a.accel));
    }

    #[test]
    fn squashing_is_monotone(a in -20.0f64..20.0, b in -20.0f64..20.0) {
        let (lo, hi) = (a.min(b), a.max(b));
        let (x, y) = (squash_continuous([lo; 3]), squash_continuous([hi; 3]));
        prop_assert!(x.steer <= y.steer && x.brake <= y.brake && x.accel <= y.accel);
    }

    #[test]
    fn discrete_decision_ignores_positive_scale(w in vec_in(6, 3.0), s in vec_in(6, 1.0), k in 1e-6f64..1e6) {
        let c = ControllerWeights::from_flat(ActionMode::Discrete2, 6, w).unwrap();
        prop_assert_eq!(c.act_discrete(&s).unwrap(), c.scaled(k).act_discrete(&s).unwrap());
    }

    #[test]
    fn raw_output_is_linear_in_the_input(w in vec_in(12, 3.0), s in vec_in(4, 1.0), t in vec_in(4, 1.0), a in -2.0f64..2.0) {
        let c = ControllerWeights::from_flat(ActionMode::Continuous3, 4, w).unwrap();
        let mix: Vec<f64> = s.iter().zip(&t).map(|(p, q)| p + a * q).collect();
        let (rs, rt, rm) = (c.raw(&s).unwrap(), c.raw(&t).unwrap(), c.raw(&mix).unwrap());
        for i in 0..3 {
            prop_assert!((rm[i] - (rs[i] + a * rt[i])).abs() < 1e-12);
        }
    }
}
