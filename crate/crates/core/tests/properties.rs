use proptest::prelude::*;
use rand::SeedableRng;

use turboae::blocks::{
    extrinsic, hard_decision, make_interleaver, normalize_power, BitBlock, InterleaveMode, LlrTensor, SimRng,
    SymbolBlock,
};
use turboae::evaluate::{crc_attach, crc_check, moving_average, normal_approximation, uncoded_bpsk_ber, CrcConfig};
use turboae::priors::{j_forward, j_inverse};
use turboae::ste::{binarize_backward, binarize_forward};
use turboae::tensor::Tensor;

fn llr(values: Vec<f32>) -> LlrTensor {
    let n = values.len();
    LlrTensor::new(Tensor::from_vec([1, n, 1], values).unwrap()).unwrap()
}

#[test]
fn interleavers_are_derangements_for_many_seeds() {
    for seed in 0..1000u64 {
        let pi = make_interleaver(seed, 64).unwrap();
        let mut seen = [false; 64];
        for (j, &p) in pi.perm().iter().enumerate() {
            assert_ne!(j, p, "seed {seed} has a fixed point");
            assert!(!seen[p]);
            seen[p] = true;
            assert_eq!(pi.inv_perm()[p], j);
        }
    }
}

proptest! {
    #[test]
    fn interleave_round_trip(seed in any::<u64>(), k in 2usize..80, f in 1usize..4) {
        let pi = make_interleaver(seed, k).unwrap();
        let data: Vec<f32> = (0..2 * k * f).map(|i| i as f32).collect();
        let t = Tensor::from_vec([2, k, f], data).unwrap();
        let back = pi.deinterleave(&pi.interleave(&t, InterleaveMode::Block).unwrap(), InterleaveMode::Block).unwrap();
        prop_assert_eq!(back, t);
    }

    #[test]
    fn flattened_round_trip(seed in any::<u64>(), k in 1usize..30, f in 1usize..4) {
        prop_assume!(k * f >= 2);
        let pi = make_interleaver(seed, k * f).unwrap();
        let t = Tensor::from_vec([1, k, f], (0..k * f).map(|i| i as f32 * 0.5).collect()).unwrap();
        let back = pi.deinterleave(&pi.interleave(&t, InterleaveMode::Flattened).unwrap(), InterleaveMode::Flattened).unwrap();
        prop_assert_eq!(back, t);
    }

    #[test]
    fn extrinsic_of_zero_prior_is_total(values in prop::collection::vec(-50f32..50.0, 1..64)) {
        let total = llr(values.clone());
        let zero = llr(vec![0.0; values.len()]);
        let ext = extrinsic(&total, &zero).unwrap();
        prop_assert_eq!(ext.tensor().data(), &values[..]);
        prop_assert!(extrinsic(&total, &total).unwrap().tensor().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn ste_mask(values in prop::collection::vec(-3f32..3.0, 1..64), g in -5f32..5.0) {
        let x = Tensor::from_vec([1, values.len(), 1], values.clone()).unwrap();
        let fwd = binarize_forward(&x);
        let back = binarize_backward(&x, &Tensor::full(x.dims(), g)).unwrap();
        for (i, &v) in values.iter().enumerate() {
            prop_assert_eq!(fwd.data()[i], if v >= 0.0 { 1.0 } else { -1.0 });
            prop_assert_eq!(back.data()[i], if v.abs() < 1.0 { g } else { 0.0 });
        }
    }

    #[test]
    fn normalized_power_is_unit(values in prop::collection::vec(-10f32..10.0, 4..256), scale in 0.1f32..100.0) {
        let n = values.len();
        prop_assume!(values.iter().any(|&v| (v - values[0]).abs() > 1e-2));
        let raw = SymbolBlock::new(n, values.iter().map(|v| v * scale).collect()).unwrap();
        let out = normalize_power(&raw).unwrap();
        prop_assert!((out.second_moment() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn hard_decision_tie_breaks_to_zero(values in prop::collection::vec(-4f32..4.0, 1..32)) {
        let bits = hard_decision(&llr(values.clone())).unwrap();
        for (b, v) in bits.data().iter().zip(&values) {
            prop_assert_eq!(*b, (*v > 0.0) as u8);
        }
    }

    #[test]
    fn j_function_is_monotone(a in 0.0f64..0.99, b in 0.0f64..0.99) {
        prop_assume!(a < b);
        prop_assert!(j_inverse(a).unwrap() < j_inverse(b).unwrap());
        let (sa, sb) = (j_inverse(a).unwrap(), j_inverse(b).unwrap());
        prop_assert!(j_forward(sa).unwrap() <= j_forward(sb).unwrap());
    }

    #[test]
    fn bpsk_and_normal_approximation_decrease(a in -5.0f64..10.0, d in 0.01f64..3.0) {
        prop_assert!(uncoded_bpsk_ber(a + d) < uncoded_bpsk_ber(a));
        prop_assert!(normal_approximation(64, 128, a + d).unwrap() < normal_approximation(64, 128, a).unwrap());
    }

    #[test]
    fn moving_average_of_constant(c in -100.0f64..100.0, len in 1usize..40, n in 1usize..15) {
        let out = moving_average(&vec![c; len], n).unwrap();
        prop_assert!(out.iter().all(|v| (v - c).abs() < 1e-9));
    }

    #[test]
    fn crc_detects_bursts(seed in any::<u64>(), start in 0usize..58, len in 1usize..=7) {
        let cfg = CrcConfig::default();
        let info = BitBlock::random(1, 57, &mut SimRng::seed_from_u64(seed));
        let word = crc_attach(&info, &cfg).unwrap();
        let mut bad = word.data().to_vec();
        // Bursts start and end with a flipped bit.
        bad[start] ^= 1;
        if len > 1 && start + len - 1 < 64 {
            bad[start + len - 1] ^= 1;
        }
        let block = BitBlock::new(64, bad).unwrap();
        prop_assert!(!crc_check(&block, &cfg).unwrap()[0]);
    }
}
