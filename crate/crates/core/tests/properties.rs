mod support;

use proptest::collection::vec;
use proptest::prelude::*;
use smm_core::layers::{relu, softmax, Conv1d, Dense, Dropout, Pool, PoolMode};
use smm_core::lstm::LstmCell;
use smm_core::optim::{read_params, write_params};
use smm_core::tensor::EwiseOp;
use smm_core::{ParamSet, Rng, Tensor};
use support::*;

fn matrix(max_dim: usize) -> impl Strategy<Value = Tensor> {
    (1..=max_dim, 1..=max_dim).prop_flat_map(|(r, c)| {
        vec(-100.0..100.0f64, r * c).prop_map(move |d| Tensor::new(vec![r, c], d).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn identity_is_exact(a in matrix(8)) {
        let (r, c) = a.dims2().unwrap();
        prop_assert_eq!(&Tensor::identity(r).matmul(&a).unwrap(), &a);
        prop_assert_eq!(&a.matmul(&Tensor::identity(c)).unwrap(), &a);
    }

    #[test]
    fn ewise_mul_and_add_commute(a in matrix(6), seed in any::<u64>()) {
        let b = normal_tensor(&mut Rng::new(seed), a.shape(), 3.0);
        for op in [EwiseOp::Add, EwiseOp::Mul] {
            prop_assert_eq!(a.ewise(&b, op).unwrap(), b.ewise(&a, op).unwrap());
        }
    }

    #[test]
    fn operations_leave_inputs_untouched(a in matrix(6)) {
        let before = a.clone();
        let _ = a.matmul(&a.transpose().unwrap()).unwrap();
        let _ = a.map_tanh();
        let _ = a.add(&a).unwrap();
        let _ = relu(&a);
        prop_assert_eq!(a, before);
    }

    #[test]
    fn distinct_seeds_give_distinct_streams(s1 in any::<u64>(), s2 in any::<u64>()) {
        prop_assume!(s1 != s2);
        let (mut a, mut b) = (Rng::new(s1), Rng::new(s2));
        let xs: Vec<u64> = (0..1000).map(|_| a.next_u64()).collect();
        let ys: Vec<u64> = (0..1000).map(|_| b.next_u64()).collect();
        prop_assert_ne!(xs, ys);
    }

    #[test]
    fn softmax_is_a_distribution(z in vec(-50.0..50.0f64, 2..10)) {
        let p = softmax(&Tensor::from_vec(z));
        prop_assert!((p.sum() - 1.0).abs() <= 1e-12);
        prop_assert!(p.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn layer_outputs_are_finite(seed in any::<u64>(), scale in 0.1..1e3f64) {
        let mut rng = Rng::new(seed);
        let x = normal_tensor(&mut rng, &[3, 24], scale);
        let conv = Conv1d::init(&mut rng, 3, 4, 9, 0.5).unwrap();
        let y = conv.apply(&x).unwrap();
        prop_assert!(y.is_finite());
        let pooled = Pool::new(3, 2, PoolMode::Max).unwrap().apply(&relu(&y)).unwrap();
        prop_assert!(pooled.is_finite());
        let flat = pooled.reshape(&[pooled.len()]).unwrap();
        let z = Dense::init(&mut rng, flat.len(), 2, 0.5).unwrap().apply(&flat).unwrap();
        prop_assert!(softmax(&z).is_finite());
    }

    #[test]
    fn inference_dropout_is_identity(seed in any::<u64>(), rate in 0.0..0.95f64) {
        let mut rng = Rng::new(seed);
        let x = normal_tensor(&mut rng, &[12], 1.0);
        let dense = Dense::init(&mut rng, 12, 5, 0.5).unwrap();
        let mut drop = Dropout::new(rate).unwrap();
        drop.set_training(false);
        let through = dense.apply(&drop.forward(&x, &mut rng)).unwrap();
        prop_assert_eq!(dense.apply(&x).unwrap(), through.clone());
        let after = drop.forward(&through, &mut rng);
        prop_assert_eq!(after, through);
    }

    #[test]
    fn lstm_gates_stay_in_range(seed in any::<u64>(), tau in 1usize..8, scale in 0.1..50.0f64) {
        let mut rng = Rng::new(seed);
        let mut cell = LstmCell::init(&mut rng, 4, 3, 1.0, 1.0).unwrap();
        let inputs: Vec<Tensor> = (0..tau).map(|_| normal_tensor(&mut rng, &[3], scale)).collect();
        let h = cell.forward_sequence(&inputs, None).unwrap();
        // Saturated activations may round to the interval ends in f64.
        prop_assert!(h.data().iter().all(|v| v.abs() <= 1.0));
        for t in 0..tau {
            let tr = cell.trace_step(t).unwrap();
            for g in [tr.forget, tr.input, tr.output] {
                prop_assert!(g.iter().all(|&v| (0.0..=1.0).contains(&v)));
            }
            prop_assert!(tr.candidate.iter().all(|&v| (-1.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn param_files_roundtrip(seed in any::<u64>(), n in 1usize..6) {
        let mut rng = Rng::new(seed);
        let mut p = ParamSet::new();
        for k in 0..n {
            let shape: Vec<usize> = (0..1 + rng.below(3)).map(|_| 1 + rng.below(5)).collect();
            p.push(format!("t{k}.weight"), normal_tensor(&mut rng, &shape, 1e3)).unwrap();
        }
        let mut bytes = Vec::new();
        write_params(&p, &mut bytes).unwrap();
        let back = read_params(bytes.as_slice()).unwrap();
        for ((na, ta), (nb, tb)) in p.iter().zip(back.iter()) {
            prop_assert_eq!(na, nb);
            prop_assert_eq!(ta.shape(), tb.shape());
            prop_assert!(ta.data().iter().zip(tb.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }
}
