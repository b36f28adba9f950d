mod common;

use proptest::prelude::*;
use tpa3d::adversarial::{clip_distance, g_softplus, gradient_penalty};
use tpa3d_autodiff::{Array, Tensor};

#[test]
fn value_identities() {
    common::loss_identities().assert();
}

#[test]
fn softplus_form_is_stable_at_extremes() {
    assert!((g_softplus(-800.0) + 800.0).abs() < 1e-9);
    assert!(g_softplus(800.0) <= 0.0 && g_softplus(800.0) > -1e-300);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    /// Scaling a critic by c scales the penalty by c^2.
    #[test]
    fn penalty_is_quadratic_in_the_critic(seed in any::<u64>(), c in -4.0f64..4.0) {
        let mut r = common::rng(seed);
        let w = Tensor::constant(Array::randn([2, 4, 4], 1.0, &mut r));
        let image = Tensor::constant(Array::uniform([2, 4, 4], 0.0, 1.0, &mut r));
        let critic = |x: &Tensor, s: f64| Ok(x.square().mul(&w)?.sum().scale(s));
        let base = gradient_penalty(|x| critic(x, 1.0), &image).unwrap().item();
        let scaled = gradient_penalty(|x| critic(x, c), &image).unwrap().item();
        prop_assert!((scaled - c * c * base).abs() <= 1e-10 * (1.0 + base * c * c));
    }

    #[test]
    fn clip_distance_is_bounded_and_scale_free(seed in any::<u64>(), s in 0.01f64..100.0) {
        let mut r = common::rng(seed);
        let e = Array::randn([1, 6], 1.0, &mut r);
        let t: Vec<f64> = Array::randn([6], 1.0, &mut r).into_data();
        let d = clip_distance(&Tensor::constant(e.clone()), &t).unwrap().item();
        let ds = clip_distance(&Tensor::constant(e.map(|v| v * s)), &t).unwrap().item();
        prop_assert!((0.0..=2.0 + 1e-9).contains(&d));
        prop_assert!((d - ds).abs() < 1e-6);
    }
}
