mod common;

use proptest::prelude::*;
use tpa3d::tpa::Attention;
use tpa3d_autodiff::{Array, Tensor};

#[test]
fn softmax_masking_and_zero_out_identity() {
    common::attention_laws().assert();
}

#[test]
fn uniform_tokens_read_out_their_value() {
    let mut r = common::rng(2);
    let attn = Attention::new("u", 4, 4, 4, 2, &mut r).unwrap();
    attn.value.set_value(Array::eye(4)).unwrap();
    let v = vec![0.3, -1.2, 0.7, 2.0];
    let keys = Tensor::constant(Array::new([6, 4], v.repeat(6)).unwrap());
    let queries = Tensor::constant(Array::randn([3, 4], 1.0, &mut r));
    let out = attn.readout(&queries, &keys, Some(&[true, true, false, true, false, true])).unwrap();
    for row in out.data().chunks(4) {
        for (a, b) in row.iter().zip(&v) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn rows_are_distributions(seed in any::<u64>(), n in 1usize..6, m in 1usize..7, scale in 0.1f64..30.0, bits in any::<u8>()) {
        let mut r = common::rng(seed);
        let attn = Attention::new("p", 4, 3, 4, 2, &mut r).unwrap();
        let q = Tensor::constant(Array::randn([n, 4], scale, &mut r));
        let k = Tensor::constant(Array::randn([m, 3], scale, &mut r));
        let mut mask: Vec<bool> = (0..m).map(|i| bits >> (i % 8) & 1 == 1).collect();
        mask[0] = true;
        for p in attn.probabilities(&q, &k, Some(&mask)).unwrap() {
            for row in p.data().chunks(m) {
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                for (j, &valid) in mask.iter().enumerate() {
                    prop_assert!(row[j] >= 0.0);
                    if !valid {
                        prop_assert!(row[j] < 1e-30);
                    }
                }
            }
        }
    }
}
