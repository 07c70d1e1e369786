mod support;

use smm_core::layers::{Conv1d, Pool, PoolMode};
use smm_core::lstm::{LstmCell, LstmState};
use smm_core::signal::{window_count, window_overlap};
use smm_core::{Rng, Tensor};
use support::*;

fn bounded(rng: &mut Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.uniform_range(-10.0, 10.0)).collect()).unwrap()
}

#[test]
fn conv_matches_brute_force() {
    let mut rng = Rng::new(101);
    for _ in 0..100 {
        let (c, f, m) = (1 + rng.below(4), 1 + rng.below(4), 1 + rng.below(9));
        let width = 1 + rng.below(40);
        let x = bounded(&mut rng, &[c, width]);
        let w = bounded(&mut rng, &[f, c, m]);
        let b = bounded(&mut rng, &[f]);
        let got = Conv1d::new(w.clone(), b.clone()).unwrap().apply(&x).unwrap();
        let filters: Vec<Vec<Vec<f64>>> = (0..f)
            .map(|k| (0..c).map(|ch| w.data()[(k * c + ch) * m..(k * c + ch + 1) * m].to_vec()).collect())
            .collect();
        let want: Vec<f64> = conv_oracle(&rows(&x), &filters, b.data()).concat();
        assert!(max_abs_diff(got.data(), &want) <= ORACLE_TOL);
    }
}

#[test]
fn pooling_matches_brute_force() {
    let mut rng = Rng::new(102);
    for mode in [PoolMode::Max, PoolMode::Average] {
        for _ in 0..100 {
            let (c, p, u) = (1 + rng.below(4), 1 + rng.below(5), 1 + rng.below(4));
            let width = p + rng.below(40);
            let x = bounded(&mut rng, &[c, width]);
            let got = Pool::new(p, u, mode).unwrap().apply(&x).unwrap();
            let want = pool_oracle(&rows(&x), p, u, mode).concat();
            assert!(max_abs_diff(got.data(), &want) <= ORACLE_TOL, "{mode:?} p={p} u={u}");
        }
    }
}

#[test]
fn lstm_step_matches_scalar_oracle() {
    let mut rng = Rng::new(103);
    for _ in 0..100 {
        let (q, d) = (1 + rng.below(8), 1 + rng.below(12));
        let cell = LstmCell::init(&mut rng, q, d, 0.5, 1.0).unwrap();
        let state = LstmState {
            c: normal_tensor(&mut rng, &[q], 1.0),
            h: normal_tensor(&mut rng, &[q], 1.0),
        };
        let x = bounded(&mut rng, &[d]);
        let got = cell.step(&state, &x).unwrap();
        let (c, h) = lstm_step_oracle(&cell, state.c.data(), state.h.data(), x.data());
        assert!(max_abs_diff(got.c.data(), &c) <= ORACLE_TOL);
        assert!(max_abs_diff(got.h.data(), &h) <= ORACLE_TOL);
    }
}

#[test]
fn window_counts_match_enumeration() {
    let mut rng = Rng::new(104);
    for _ in 0..100 {
        let len = 1 + rng.below(5000);
        let w = 1 + rng.below(300);
        let step = 1 + rng.below(50);
        assert_eq!(window_count(len, w, step), window_count_oracle(len, w, step), "L={len} w={w} step={step}");
    }
    assert_eq!(window_count(1000, 100, 10), 91);
    assert!((window_overlap(100, 10) - 0.9).abs() < 1e-12);
}
