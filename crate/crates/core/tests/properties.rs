mod common;

use std::collections::BTreeMap;

use common::*;
use dfsmn::layers::{dfsmn_layer_backward, dfsmn_layer_forward, memory_block, DfsmnLayerParams};
use dfsmn::trainer::{batch_gradient, multitask_mse};
use dfsmn::{
    backward, build_network, count_params, forward, Activation, Dataset, Execution, Matrix, MemoryConfig,
    NetworkParams, Sequence, StreamMap,
};
use proptest::prelude::*;

const ALL: [Activation; 4] = [Activation::Relu, Activation::Tanh, Activation::Sigmoid, Activation::Linear];
const SMOOTH: [Activation; 3] = [Activation::Tanh, Activation::Sigmoid, Activation::Linear];

fn memory_strategy() -> impl Strategy<Value = MemoryConfig> {
    (0usize..4, 0usize..4, 1usize..4, 1usize..4).prop_map(|(nb, na, sb, sa)| MemoryConfig::new(nb, na, sb, sa))
}

fn random_layer(d_in: usize, proj: usize, hidden: usize, memory: &MemoryConfig, seed: u64) -> DfsmnLayerParams<f64> {
    let mut p = DfsmnLayerParams::zeros(d_in, proj, hidden, memory);
    let mut k = 0;
    for m in p.tensors_mut() {
        *m = Matrix::seeded_normal(seed.wrapping_add(k), m.rows(), m.cols(), 0.0, 0.5).unwrap();
        k += 1;
    }
    p
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-12)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn unidirectional_networks_are_causal(seed in any::<u64>(), t in 0usize..12) {
        let cfg = random_config(seed, true, &ALL);
        let mut params = build_network::<f64>(&cfg, seed).unwrap();
        randomize(&mut params, seed ^ 7, 0.5);
        let x = random_input(seed ^ 11, 12, cfg.input_dim);
        let mut y = x.clone();
        for s in t + 1..12 {
            y.row_mut(s).iter_mut().for_each(|v| *v += 1.0);
        }
        let a = forward(&params, &cfg, &x).unwrap().streams;
        let b = forward(&params, &cfg, &y).unwrap().streams;
        if let Some((lo, _)) = changed_frames(&a, &b) {
            prop_assert!(lo > t);
        }
    }

    #[test]
    fn influence_is_bounded_by_receptive_field(seed in any::<u64>()) {
        let cfg = random_config(seed, false, &ALL);
        let (back, ahead) = dfsmn::receptive_field(&cfg);
        let frames = back + ahead + 9;
        let t0 = ahead + 4;
        let mut params = build_network::<f64>(&cfg, seed).unwrap();
        randomize(&mut params, seed ^ 3, 0.5);
        let x = random_input(seed ^ 5, frames, cfg.input_dim);
        let mut y = x.clone();
        y.row_mut(t0).iter_mut().for_each(|v| *v -= 2.0);
        let a = forward(&params, &cfg, &x).unwrap().streams;
        let b = forward(&params, &cfg, &y).unwrap().streams;
        if let Some((lo, hi)) = changed_frames(&a, &b) {
            prop_assert!(lo + ahead >= t0 && hi <= t0 + back, "{lo}..{hi} vs {t0} -{ahead} +{back}");
        }
    }

    #[test]
    fn stride_equals_dilated_unit_stride(memory in memory_strategy(), frames in 1usize..15, seed in any::<u64>()) {
        let dim = 3;
        let p = Matrix::seeded_normal(seed, frames, dim, 0.0, 1.0).unwrap();
        let back = Matrix::seeded_normal(seed ^ 1, memory.n_back + 1, dim, 0.0, 1.0).unwrap();
        let ahead = Matrix::seeded_normal(seed ^ 2, memory.n_ahead, dim, 0.0, 1.0).unwrap();
        let strided = memory_block(&p, &back, &ahead, &memory, None).unwrap();

        let dense_mem = MemoryConfig::new(memory.n_back * memory.stride_back, memory.n_ahead * memory.stride_ahead, 1, 1);
        let dense_back = Matrix::from_fn(dense_mem.n_back + 1, dim, |i, k| {
            if i % memory.stride_back == 0 { back.get(i / memory.stride_back, k) } else { 0.0 }
        });
        let dense_ahead = Matrix::from_fn(dense_mem.n_ahead, dim, |j, k| {
            if (j + 1) % memory.stride_ahead == 0 { ahead.get((j + 1) / memory.stride_ahead - 1, k) } else { 0.0 }
        });
        let dilated = memory_block(&p, &dense_back, &dense_ahead, &dense_mem, None).unwrap();
        prop_assert!(strided.max_abs_diff(&dilated) < 1e-12);
    }

    #[test]
    fn skip_adds_to_memory_output(memory in memory_strategy(), frames in 1usize..12, seed in any::<u64>()) {
        let dim = 2;
        let p = Matrix::<f64>::seeded_normal(seed, frames, dim, 0.0, 1.0).unwrap();
        let s = Matrix::seeded_normal(seed ^ 9, frames, dim, 0.0, 1.0).unwrap();
        let back = Matrix::seeded_normal(seed ^ 1, memory.n_back + 1, dim, 0.0, 1.0).unwrap();
        let ahead = Matrix::seeded_normal(seed ^ 2, memory.n_ahead, dim, 0.0, 1.0).unwrap();
        let plain = memory_block(&p, &back, &ahead, &memory, None).unwrap();
        let with = memory_block(&p, &back, &ahead, &memory.with_skip(true), Some(&s)).unwrap();
        let expect = plain.zip_map(&s, dfsmn::tensor::ZipOp::Add).unwrap();
        prop_assert!(with.max_abs_diff(&expect) < 1e-12);
    }

    #[test]
    fn layer_gradients_match_finite_differences(memory in memory_strategy(), skip in any::<bool>(), seed in any::<u64>()) {
        let memory = memory.with_skip(skip);
        let (frames, d_in, proj, hidden) = (9, 3, 2, 4);
        let params = random_layer(d_in, proj, hidden, &memory, seed);
        let h = Matrix::seeded_normal(seed ^ 1, frames, d_in, 0.0, 1.0).unwrap();
        let sk = Matrix::seeded_normal(seed ^ 2, frames, proj, 0.0, 1.0).unwrap();
        let r = Matrix::seeded_normal(seed ^ 3, frames, hidden, 0.0, 1.0).unwrap();
        let skip_in = skip.then_some(&sk);
        let loss = |p: &DfsmnLayerParams<f64>, h: &Matrix<f64>, s: Option<&Matrix<f64>>| -> f64 {
            let out = dfsmn_layer_forward(h, p, &memory, Activation::Tanh, s).unwrap().output;
            out.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
        };
        let fwd = dfsmn_layer_forward(&h, &params, &memory, Activation::Tanh, skip_in).unwrap();
        let g = dfsmn_layer_backward(&params, &fwd.cache, &r, None).unwrap();
        let step = 1e-6;
        let analytic = g.grads.tensors();
        for (k, tensor) in params.tensors().iter().enumerate() {
            for i in 0..tensor.len() {
                let mut plus = params.clone();
                plus.tensors_mut()[k].data_mut()[i] += step;
                let mut minus = params.clone();
                minus.tensors_mut()[k].data_mut()[i] -= step;
                let fd = (loss(&plus, &h, skip_in) - loss(&minus, &h, skip_in)) / (2.0 * step);
                prop_assert!(rel(analytic[k].data()[i], fd) < 1e-4, "tensor {k}[{i}]: {} vs {fd}", analytic[k].data()[i]);
            }
        }
        for i in 0..h.len() {
            let mut plus = h.clone();
            plus.data_mut()[i] += step;
            let mut minus = h.clone();
            minus.data_mut()[i] -= step;
            let fd = (loss(&params, &plus, skip_in) - loss(&params, &minus, skip_in)) / (2.0 * step);
            prop_assert!(rel(g.grad_input.data()[i], fd) < 1e-4);
        }
        prop_assert_eq!(g.grad_skip.is_some(), skip);
        if let Some(gs) = &g.grad_skip {
            for i in 0..sk.len() {
                let mut plus = sk.clone();
                plus.data_mut()[i] += step;
                let mut minus = sk.clone();
                minus.data_mut()[i] -= step;
                let fd = (loss(&params, &h, Some(&plus)) - loss(&params, &h, Some(&minus))) / (2.0 * step);
                prop_assert!(rel(gs.data()[i], fd) < 1e-4);
            }
        }
    }

    #[test]
    fn network_gradients_match_finite_differences(seed in any::<u64>()) {
        let cfg = random_config(seed, false, &SMOOTH);
        let mut params = build_network::<f64>(&cfg, seed).unwrap();
        randomize(&mut params, seed ^ 1, 0.5);
        let x = random_input(seed ^ 2, 10, cfg.input_dim);
        let targets: StreamMap<f64> = cfg.output_streams.iter().enumerate()
            .map(|(k, s)| (s.name.clone(), Matrix::seeded_uniform(seed ^ (10 + k as u64), 10, s.dim, 0.0, 1.0)))
            .collect();
        let w = BTreeMap::new();
        let loss = |p: &NetworkParams<f64>| multitask_mse(&forward(p, &cfg, &x).unwrap().streams, &targets, &w).unwrap().0;
        let out = forward(&params, &cfg, &x).unwrap();
        let (_, g) = multitask_mse(&out.streams, &targets, &w).unwrap();
        let grads = backward(&params, &cfg, &out.cache, &g).unwrap().params;
        let analytic = grads.tensors();
        let step = 1e-6;
        for (k, (class, tensor)) in params.tensors().iter().enumerate() {
            for i in (0..tensor.len()).step_by(3) {
                let mut plus = params.clone();
                plus.tensors_mut()[k].1.data_mut()[i] += step;
                let mut minus = params.clone();
                minus.tensors_mut()[k].1.data_mut()[i] -= step;
                let fd = (loss(&plus) - loss(&minus)) / (2.0 * step);
                let a = analytic[k].1.data()[i];
                prop_assert!(rel(a, fd) < 1e-4 || (a - fd).abs() < 1e-9, "{class}[{i}]: {a} vs {fd}");
            }
        }
    }

    #[test]
    fn forward_matches_loop_oracle(seed in any::<u64>()) {
        let cfg = random_config(seed, false, &ALL);
        let mut params = build_network::<f64>(&cfg, seed).unwrap();
        randomize(&mut params, seed ^ 1, 0.7);
        let x = random_input(seed ^ 2, 11, cfg.input_dim);
        let fast = forward(&params, &cfg, &x).unwrap().streams;
        let slow = oracle_forward(&cfg, &params, &x);
        for (name, m) in &fast {
            for t in 0..m.rows() {
                for (j, &v) in m.row(t).iter().enumerate() {
                    prop_assert!((v - slow[name][t][j]).abs() <= 1e-12 * (1.0 + v.abs()), "{name}[{t},{j}]");
                }
            }
        }
    }

    #[test]
    fn multi_stream_gradient_is_sum_of_single_streams(seed in any::<u64>()) {
        let cfg = random_config(seed, false, &SMOOTH);
        let mut params = build_network::<f64>(&cfg, seed).unwrap();
        randomize(&mut params, seed ^ 1, 0.5);
        let x = random_input(seed ^ 2, 8, cfg.input_dim);
        let out = forward(&params, &cfg, &x).unwrap();
        let g: StreamMap<f64> = out.streams.iter()
            .map(|(k, m)| (k.clone(), Matrix::seeded_normal(seed ^ k.len() as u64, m.rows(), m.cols(), 0.0, 1.0).unwrap()))
            .collect();
        let all = backward(&params, &cfg, &out.cache, &g).unwrap();
        let mut sum = NetworkParams::<f64>::zeros(&cfg);
        let mut sum_input = Matrix::zeros(x.rows(), x.cols());
        for name in g.keys() {
            let single: StreamMap<f64> = g.iter()
                .map(|(k, m)| (k.clone(), if k == name { m.clone() } else { Matrix::zeros(m.rows(), m.cols()) }))
                .collect();
            let b = backward(&params, &cfg, &out.cache, &single).unwrap();
            sum.axpy(1.0, &b.params).unwrap();
            sum_input.add_assign(&b.input).unwrap();
        }
        for ((_, a), (_, b)) in all.params.tensors().iter().zip(sum.tensors()) {
            prop_assert!(a.max_abs_diff(b) < 1e-10);
        }
        prop_assert!(all.input.max_abs_diff(&sum_input) < 1e-10);
    }

    #[test]
    fn closed_form_count_matches_allocation(seed in any::<u64>()) {
        let cfg = random_config(seed, false, &ALL);
        prop_assert_eq!(count_params(&cfg), NetworkParams::<f64>::zeros(&cfg).num_scalars());
        prop_assert_eq!(count_params(&cfg), build_network::<f64>(&cfg, 0).unwrap().num_scalars());
    }
}

#[test]
fn batch_gradient_is_identical_across_execution_modes() {
    let cfg = random_config(42, false, &ALL);
    let mut params = build_network::<f64>(&cfg, 1).unwrap();
    randomize(&mut params, 2, 0.5);
    let seqs: Vec<Sequence<f64>> = (0..5)
        .map(|i| {
            let frames = 6 + i;
            Sequence {
                id: format!("s{i}"),
                input: random_input(100 + i as u64, frames, cfg.input_dim),
                targets: cfg
                    .output_streams
                    .iter()
                    .map(|s| (s.name.clone(), Matrix::seeded_uniform(200 + i as u64, frames, s.dim, 0.0, 1.0)))
                    .collect(),
            }
        })
        .collect();
    let refs: Vec<&Sequence<f64>> = seqs.iter().collect();
    let w = BTreeMap::new();
    let (ls, gs) = batch_gradient(&params, &cfg, &refs, &w, Execution::Sequential).unwrap();
    let (lp, gp) = batch_gradient(&params, &cfg, &refs, &w, Execution::Parallel).unwrap();
    assert_eq!(ls.to_bits(), lp.to_bits());
    assert_eq!(gs, gp);

    // pooled batch loss equals the frame-weighted mean of per-sequence losses
    let ds = Dataset::new(seqs.clone());
    let total = ds.total_frames() as f64;
    let weighted: f64 = seqs
        .iter()
        .map(|s| dfsmn::trainer::sequence_loss(&params, &cfg, s, &w).unwrap() * s.frames() as f64 / total)
        .sum();
    assert!((ls - weighted).abs() < 1e-10);
}
