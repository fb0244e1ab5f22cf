#![allow(dead_code)]

use std::collections::BTreeMap;

use dfsmn::config::{DfsmnSpec, FcSpec};
use dfsmn::rng::{NormalSampler, SplitMix64};
use dfsmn::{Activation, LayerSpec, Matrix, NetworkConfig, NetworkParams, Precision, StreamSpec};

/// Small random config drawn from `seed`. DFSMN layers share one projection
/// width so skip connections are always legal.
pub fn random_config(seed: u64, unidirectional: bool, activations: &[Activation]) -> NetworkConfig {
    let mut rng = SplitMix64::new(seed);
    let mut pick = |lo: u64, hi: u64| (lo + rng.below(hi - lo + 1)) as usize;
    let input_dim = pick(1, 4);
    let proj = pick(1, 4);
    let n_dfsmn = pick(1, 3);
    let n_fc = pick(0, 2);
    let mut layers = Vec::new();
    for i in 0..n_dfsmn {
        let act = activations[pick(0, activations.len() as u64 - 1)];
        layers.push(LayerSpec::Dfsmn(DfsmnSpec {
            hidden: pick(1, 5),
            proj,
            n_back: pick(0, 3),
            n_ahead: if unidirectional { 0 } else { pick(0, 3) },
            stride_back: pick(1, 3),
            stride_ahead: pick(1, 3),
            skip: i > 0 && pick(0, 1) == 1,
            activation: act,
        }));
    }
    for _ in 0..n_fc {
        let act = activations[pick(0, activations.len() as u64 - 1)];
        layers.push(LayerSpec::Fc(FcSpec { hidden: pick(1, 5), activation: act }));
    }
    let n_streams = pick(1, 3);
    let output_streams = (0..n_streams)
        .map(|k| {
            let act = if pick(0, 2) == 0 { Activation::Sigmoid } else { Activation::Linear };
            StreamSpec::new(&format!("s{k}"), pick(1, 3), act)
        })
        .collect();
    NetworkConfig {
        input_dim,
        precision: Precision::F64,
        layers,
        output_streams,
    }
}

/// Overwrite every tensor with N(0, std) draws.
pub fn randomize(params: &mut NetworkParams<f64>, seed: u64, std: f64) {
    let mut normal = NormalSampler::new(seed);
    for (_, m) in params.tensors_mut() {
        m.data_mut().iter_mut().for_each(|v| *v = normal.next(0.0, std));
    }
}

pub fn random_input(seed: u64, frames: usize, dim: usize) -> Matrix<f64> {
    Matrix::seeded_normal(seed, frames, dim, 0.0, 1.0).unwrap()
}

fn act(a: Activation, z: f64) -> f64 {
    match a {
        Activation::Relu => z.max(0.0),
        Activation::Tanh => z.tanh(),
        Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
        Activation::Linear => z,
    }
}

fn dense(x: &[Vec<f64>], w: &Matrix<f64>, b: &Matrix<f64>) -> Vec<Vec<f64>> {
    x.iter()
        .map(|row| {
            (0..w.cols())
                .map(|k| b.get(0, k) + (0..w.rows()).map(|i| row[i] * w.get(i, k)).sum::<f64>())
                .collect()
        })
        .collect()
}

/// Independent loop implementation of the whole network, frame by frame.
pub fn oracle_forward(cfg: &NetworkConfig, params: &NetworkParams<f64>, x: &Matrix<f64>) -> BTreeMap<String, Vec<Vec<f64>>> {
    use dfsmn::network::LayerParams;
    let frames = x.rows();
    let mut h: Vec<Vec<f64>> = (0..frames).map(|t| x.row(t).to_vec()).collect();
    let mut below_ptilde: Option<Vec<Vec<f64>>> = None;
    for (spec, layer) in cfg.layers.iter().zip(&params.layers) {
        match (spec, layer) {
            (LayerSpec::Dfsmn(s), LayerParams::Dfsmn(p)) => {
                let proj = dense(&h, &p.v, &p.b);
                let mut pt = vec![vec![0.0; s.proj]; frames];
                for t in 0..frames {
                    for k in 0..s.proj {
                        let mut acc = 0.0;
                        if s.skip {
                            acc += below_ptilde.as_ref().unwrap()[t][k];
                        }
                        acc += proj[t][k];
                        for i in 0..=s.n_back {
                            let o = i * s.stride_back;
                            if t >= o {
                                acc += p.back.get(i, k) * proj[t - o][k];
                            }
                        }
                        for j in 1..=s.n_ahead {
                            let o = t + j * s.stride_ahead;
                            if o < frames {
                                acc += p.ahead.get(j - 1, k) * proj[o][k];
                            }
                        }
                        pt[t][k] = acc;
                    }
                }
                h = dense(&pt, &p.u, &p.d)
                    .into_iter()
                    .map(|r| r.into_iter().map(|z| act(s.activation, z)).collect())
                    .collect();
                below_ptilde = Some(pt);
            }
            (LayerSpec::Fc(s), LayerParams::Fc(p)) => {
                h = dense(&h, &p.w, &p.bias)
                    .into_iter()
                    .map(|r| r.into_iter().map(|z| act(s.activation, z)).collect())
                    .collect();
                below_ptilde = None;
            }
            _ => panic!("layer kind mismatch"),
        }
    }
    cfg.output_streams
        .iter()
        .zip(&params.heads)
        .map(|(s, head)| {
            let y = dense(&h, &head.w, &head.bias)
                .into_iter()
                .map(|r| r.into_iter().map(|z| act(s.activation, z)).collect())
                .collect();
            (s.name.clone(), y)
        })
        .collect()
}

/// Frames (inclusive range) whose outputs differ between two forward passes.
pub fn changed_frames(a: &BTreeMap<String, Matrix<f64>>, b: &BTreeMap<String, Matrix<f64>>) -> Option<(usize, usize)> {
    let mut lo = usize::MAX;
    let mut hi = 0;
    for (name, m) in a {
        let n = &b[name];
        for t in 0..m.rows() {
            if m.row(t) != n.row(t) {
                lo = lo.min(t);
                hi = hi.max(t);
            }
        }
    }
    (lo != usize::MAX).then_some((lo, hi))
}
