#![allow(clippy::needless_range_loop)]
use freematch_core::synthdata::MixtureSpec;
use freematch_core::theory::{analytic_dist, mc_dist, normal_cdf, sweep, SweepParam};
use proptest::prelude::*;

fn spec() -> impl Strategy<Value = MixtureSpec> {
    (-3.0f64..3.0, 0.05f64..6.0, 0.1f64..4.0, 0.1f64..4.0, 0.1f64..8.0, 0.5001f64..0.9999)
        .prop_map(|(m, d, s1, s2, b, t)| MixtureSpec::new(m, m + d, s1, s2, b, t).unwrap())
}

proptest! {
    #[test]
    fn analytic_is_a_distribution(s in spec()) {
        let d = analytic_dist(&s);
        for p in [d.p_pos, d.p_neg, d.p_mask] {
            prop_assert!((0.0..=1.0).contains(&p));
        }
        prop_assert!((d.p_pos + d.p_neg + d.p_mask - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn equal_sigmas_balance_exactly(s in spec()) {
        let s = MixtureSpec::new(s.mu1, s.mu2, s.sigma1, s.sigma1, s.beta, s.tau).unwrap();
        let d = analytic_dist(&s);
        prop_assert_eq!(d.p_pos, d.p_neg);
    }

    #[test]
    fn mask_never_falls_as_delta_shrinks(s in spec()) {
        let grid: Vec<f64> = (1..=40).map(|i| 0.15 * i as f64).collect();
        let t = sweep(&s, SweepParam::Delta, &grid).unwrap();
        for w in t.rows.windows(2) {
            prop_assert!(w[1].dist.p_mask <= w[0].dist.p_mask);
        }
    }
}

#[test]
fn normal_cdf_deep_tail() {
    // Phi(-10) = 7.619853024160527e-24
    let v = normal_cdf(-10.0);
    assert!((v - 7.619853024160527e-24).abs() / v < 1e-12);
    assert!((normal_cdf(1.0) - 0.8413447460685429).abs() < 1e-15);
}

#[test]
fn worked_examples_agree_with_simulation() {
    let a = MixtureSpec::new(0.0, 2.0, 1.0, 1.0, 2.0, 0.8).unwrap();
    let b = MixtureSpec::new(-1.0, 1.0, 1.0, 1.0, 1.0, 0.95).unwrap();
    assert!((analytic_dist(&a).p_pos - 0.3329).abs() < 5e-5);
    assert!((analytic_dist(&b).p_mask - 0.974).abs() < 5e-4);
    for s in [a, b] {
        let mc = mc_dist(&s, 2_000_000, 77).unwrap();
        assert!(mc.max_z(&analytic_dist(&s)) <= 3.0);
    }
}
