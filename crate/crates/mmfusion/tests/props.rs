//! Property tests for the structural invariants: concat/split round trips,
//! softmax normalization and shift invariance, prediction affine
//! invariance, and the pair-encoding layout.

use proptest::prelude::*;

use mmfusion::data::{build_vocab, tokenize, MultimodalExample, CLS_ID, SEP_ID};
use mmfusion::encoders::{encode_pair, EncodeConfig};
use mmfusion::fusion::predict;
use mmfusion::tensor::{Tape, Tensor};

fn finite_vec(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-50.0f64..50.0, len..=len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn concat_then_split_recovers_inputs(
        rows in 1usize..5,
        cols_a in 1usize..6,
        cols_b in 1usize..6,
        seed in any::<u64>(),
    ) {
        let mut rng = mmfusion::rng::Rng::seeded(seed);
        let a = Tensor::from_vec(
            (0..rows * cols_a).map(|_| rng.range_f64(-3.0, 3.0)).collect(),
            &[rows, cols_a],
        ).unwrap();
        let b = Tensor::from_vec(
            (0..rows * cols_b).map(|_| rng.range_f64(-3.0, 3.0)).collect(),
            &[rows, cols_b],
        ).unwrap();
        let tape = Tape::new();
        let merged = tape.concat(&[a.clone(), b.clone()], 1).unwrap();
        let a2 = tape.slice_cols(&merged, 0, cols_a).unwrap();
        let b2 = tape.slice_cols(&merged, cols_a, cols_b).unwrap();
        prop_assert_eq!(a.data(), a2.data());
        prop_assert_eq!(b.data(), b2.data());

        // and along axis 0
        let stacked = tape.concat(&[a.clone(), a.clone()], 0).unwrap();
        let top = tape.slice_rows(&stacked, 0, rows).unwrap();
        let bottom = tape.slice_rows(&stacked, rows, rows).unwrap();
        prop_assert_eq!(top.data(), a.data());
        prop_assert_eq!(bottom.data(), a.data());
    }

    #[test]
    fn softmax_rows_normalize_and_shift_invariant(
        data in finite_vec(12),
        shift in -100.0f64..100.0,
    ) {
        let tape = Tape::new();
        let x = Tensor::from_vec(data.clone(), &[3, 4]).unwrap();
        let s = tape.softmax(&x, 1).unwrap().data();
        for r in 0..3 {
            let sum: f64 = s[r * 4..(r + 1) * 4].iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-9, "row sum {}", sum);
            prop_assert!(s[r * 4..(r + 1) * 4].iter().all(|&v| v > 0.0));
        }
        let shifted = Tensor::from_vec(data.iter().map(|v| v + shift).collect(), &[3, 4]).unwrap();
        let s2 = tape.softmax(&shifted, 1).unwrap().data();
        for (a, b) in s.iter().zip(&s2) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn predict_is_invariant_under_positive_affine(
        data in finite_vec(5),
        scale in 0.01f64..10.0,
        offset in -20.0f64..20.0,
    ) {
        let x = Tensor::from_vec(data.clone(), &[5]).unwrap();
        let y = Tensor::from_vec(data.iter().map(|v| v * scale + offset).collect(), &[5]).unwrap();
        prop_assert_eq!(predict(&x).unwrap(), predict(&y).unwrap());
    }

    #[test]
    fn tokenizer_is_idempotent(raw in "[ -~]{0,60}") {
        let once = tokenize(&raw);
        let again = tokenize(&once.join(" "));
        prop_assert_eq!(once, again);
    }

    #[test]
    fn pair_encoding_layout_invariants(
        title in "[a-z]{1,8}( [a-z]{1,8}){0,6}",
        caption in "[a-z]{1,8}( [a-z]{1,8}){0,9}",
        max_length in 3usize..24,
    ) {
        let ex = MultimodalExample {
            id: "p".into(),
            title,
            caption,
            image_path: String::new(),
            sentiment: None,
            emotion: None,
            desire: None,
        };
        let vocab = build_vocab(std::slice::from_ref(&ex)).unwrap();
        let cfg = EncodeConfig { max_length, image_h: 8, image_w: 8, patch: 4 };
        let img = Tensor::zeros(&[8, 8]);
        let enc = encode_pair(&ex, &img, &vocab, &cfg).unwrap();
        prop_assert_eq!(enc.token_ids.len(), max_length);
        prop_assert_eq!(enc.token_ids[0], CLS_ID);
        // exactly two separators before padding
        let attended = enc.text_mask.iter().filter(|&&m| m).count();
        let seps = enc.token_ids[..attended].iter().filter(|&&t| t == SEP_ID).count();
        prop_assert_eq!(seps, 2);
        // mask is a prefix of attends followed by ignores
        for w in enc.text_mask.windows(2) {
            prop_assert!(w[0] || !w[1], "mask not monotone");
        }
        // segments: 0s through the first separator, then 1s through the second
        let first_sep = enc.token_ids.iter().position(|&t| t == SEP_ID).unwrap();
        for i in 0..=first_sep {
            prop_assert_eq!(enc.segment_ids[i], 0);
        }
        for i in (first_sep + 1)..attended {
            prop_assert_eq!(enc.segment_ids[i], 1);
        }
    }
}
