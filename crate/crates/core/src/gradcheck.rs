//! Finite-difference verification of the analytic backward pass.
//!
//! Scalars are sampled per parameter class (pooled across layers), plus the
//! network input and, for every skip-connected layer, the skip input of a
//! standalone copy of that layer. Samples whose perturbation moves a ReLU
//! pre-activation across zero are discarded and replaced, since the central
//! difference is meaningless at a kink.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::config::{LayerSpec, NetworkConfig};
use crate::error::{Error, Result};
use crate::layers::{dfsmn_layer_backward, dfsmn_layer_forward, Activation, DfsmnLayerParams};
use crate::network::{backward, build_network, forward, LayerCache, NetworkCache, NetworkGrads, NetworkParams, StreamMap};
use crate::rng::{NormalSampler, SplitMix64};
use crate::tensor::{Execution, Matrix, Precision};
use crate::trainer::multitask_mse;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckOptions {
    pub frames: usize,
    pub seed: u64,
    /// Central-difference step.
    pub step: f64,
    pub tolerance: f64,
    pub samples_per_class: usize,
    pub execution: Execution,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            frames: 20,
            seed: 0,
            step: 1e-5,
            tolerance: 1e-4,
            samples_per_class: 32,
            execution: Execution::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassResult {
    pub class: String,
    pub checked: usize,
    pub max_rel_err: f64,
    /// Index into the pooled scalars of the class at the worst sample.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub classes: Vec<ClassResult>,
    pub tolerance: f64,
    pub passed: bool,
}

impl GradCheckReport {
    pub fn worst(&self) -> Option<&ClassResult> {
        self.classes
            .iter()
            .max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err))
    }

    pub fn class(&self, name: &str) -> Option<&ClassResult> {
        self.classes.iter().find(|c| c.class == name)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<18} {:>7} {:>12}  status", "class", "checked", "max_rel_err");
        for c in &self.classes {
            let status = if c.max_rel_err < self.tolerance { "ok" } else { "FAIL" };
            let _ = writeln!(out, "{:<18} {:>7} {:>12.3e}  {status}", c.class, c.checked, c.max_rel_err);
        }
        out
    }
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-12)
}

pub fn grad_check(cfg: &NetworkConfig, opts: &GradCheckOptions) -> Result<GradCheckReport> {
    grad_check_with(cfg, opts, |_| {})
}

/// As [`grad_check`], with `corrupt` applied to the analytic network
/// gradients before comparison.
pub fn grad_check_with(
    cfg: &NetworkConfig,
    opts: &GradCheckOptions,
    corrupt: impl Fn(&mut NetworkGrads<f64>),
) -> Result<GradCheckReport> {
    if cfg.precision != Precision::F64 {
        return Err(Error::Precision("gradient checking needs an f64 network".into()));
    }
    if opts.frames == 0 || opts.samples_per_class == 0 || !(opts.step > 0.0) {
        return Err(Error::InvalidArgument("frames, samples and step must be positive".into()));
    }
    cfg.validate()?;
    let params = randomized_network(cfg, opts.seed)?;
    let input = Matrix::<f64>::seeded_normal(SplitMix64::derive(opts.seed, 1).next_u64(), opts.frames, cfg.input_dim, 0.0, 1.0)?;
    let targets = random_targets(cfg, opts.frames, opts.seed);
    let weights = BTreeMap::new();

    let out = forward(&params, cfg, &input)?;
    let (_, g) = multitask_mse(&out.streams, &targets, &weights)?;
    let mut grads = backward(&params, cfg, &out.cache, &g)?;
    corrupt(&mut grads);

    let probe = |p: &NetworkParams<f64>, x: &Matrix<f64>| -> Result<(f64, Vec<bool>)> {
        let out = forward(p, cfg, x)?;
        let loss = multitask_mse(&out.streams, &targets, &weights)?.0;
        Ok((loss, relu_pattern(cfg, &out.cache)))
    };

    let mut pools: BTreeMap<_, Vec<(usize, usize)>> = BTreeMap::new();
    for (t, (class, m)) in params.tensors().into_iter().enumerate() {
        pools.entry(class).or_default().extend((0..m.len()).map(|i| (t, i)));
    }
    let analytic_tensors = grads.params.tensors();
    let mut classes = Vec::new();
    for (k, (class, pool)) in pools.iter().enumerate() {
        if pool.is_empty() {
            continue;
        }
        let mut rng = SplitMix64::derive(opts.seed, 100 + k as u64);
        let res = check_pool(class.name(), pool.len(), opts, &mut rng, |j| {
            let (t, i) = pool[j];
            let shifted = |delta: f64| {
                let mut p = params.clone();
                p.tensors_mut()[t].1.data_mut()[i] += delta;
                probe(&p, &input)
            };
            Ok((analytic_tensors[t].1.data()[i], shifted(opts.step)?, shifted(-opts.step)?))
        })?;
        classes.push(res);
    }

    let mut rng = SplitMix64::derive(opts.seed, 99);
    classes.push(check_pool("input", input.len(), opts, &mut rng, |j| {
        let shifted = |delta: f64| {
            let mut x = input.clone();
            x.data_mut()[j] += delta;
            probe(&params, &x)
        };
        Ok((grads.input.data()[j], shifted(opts.step)?, shifted(-opts.step)?))
    })?);

    if let Some(skip) = check_skip_layers(cfg, opts)? {
        classes.push(skip);
    }

    let passed = classes.iter().all(|c| c.max_rel_err < opts.tolerance);
    Ok(GradCheckReport {
        classes,
        tolerance: opts.tolerance,
        passed,
    })
}

/// Build a network and give biases and memory coefficients random values so
/// every gradient path is exercised.
fn randomized_network(cfg: &NetworkConfig, seed: u64) -> Result<NetworkParams<f64>> {
    use crate::network::ParamClass::*;
    let mut params = build_network::<f64>(cfg, seed)?;
    let mut normal = NormalSampler::from_rng(SplitMix64::derive(seed, u64::MAX));
    for (class, m) in params.tensors_mut() {
        if matches!(class, ProjBias | MemoryBack | MemoryAhead | OutBias | FcBias | HeadBias) {
            m.data_mut().iter_mut().for_each(|v| *v = normal.next(0.0, 0.3));
        }
    }
    Ok(params)
}

fn random_targets(cfg: &NetworkConfig, frames: usize, seed: u64) -> StreamMap<f64> {
    cfg.output_streams
        .iter()
        .enumerate()
        .map(|(k, s)| {
            let sub = SplitMix64::derive(seed, 2 + k as u64).next_u64();
            let m = match s.activation {
                Activation::Sigmoid => Matrix::seeded_uniform(sub, frames, s.dim, 0.0, 1.0),
                _ => Matrix::seeded_normal(sub, frames, s.dim, 0.0, 1.0).expect("unit std"),
            };
            (s.name.clone(), m)
        })
        .collect()
}

/// Sign pattern of every ReLU layer output.
fn relu_pattern(cfg: &NetworkConfig, cache: &NetworkCache<f64>) -> Vec<bool> {
    let mut out = Vec::new();
    for (spec, lc) in cfg.layers.iter().zip(&cache.layers) {
        if spec.activation() != Activation::Relu {
            continue;
        }
        let y = match lc {
            LayerCache::Dfsmn(c) => &c.output,
            LayerCache::Fc { output, .. } => output,
        };
        out.extend(y.data().iter().map(|&v| v > 0.0));
    }
    out
}

/// Check up to `samples_per_class` kink-free scalars out of `n`.
/// `eval(j)` returns the analytic value and the `(loss, relu pattern)` pairs
/// at `+step` and `-step`.
fn check_pool<F>(name: &str, n: usize, opts: &GradCheckOptions, rng: &mut SplitMix64, eval: F) -> Result<ClassResult>
where
    F: Fn(usize) -> Result<(f64, (f64, Vec<bool>), (f64, Vec<bool>))> + Sync + Send,
{
    let order = rng.sample_indices(n, n);
    let want = opts.samples_per_class.min(n);
    let mut result = ClassResult {
        class: name.to_string(),
        checked: 0,
        max_rel_err: 0.0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
    };
    for chunk in order.chunks(want.max(1)) {
        if result.checked >= want {
            break;
        }
        let evaluated = opts.execution.map(chunk, |&j| eval(j));
        for (&j, r) in chunk.iter().zip(evaluated) {
            if result.checked >= want {
                break;
            }
            let (analytic, (plus, pat_plus), (minus, pat_minus)) = r?;
            if pat_plus != pat_minus {
                continue;
            }
            let numeric = (plus - minus) / (2.0 * opts.step);
            let err = rel_err(analytic, numeric);
            result.checked += 1;
            if err > result.max_rel_err || result.checked == 1 {
                result.max_rel_err = err;
                result.worst_index = j;
                result.analytic = analytic;
                result.numeric = numeric;
            }
        }
    }
    Ok(result)
}

/// Skip-input gradients of standalone copies of every skip-connected layer,
/// under the loss `sum(R * output)` for a fixed random `R`.
fn check_skip_layers(cfg: &NetworkConfig, opts: &GradCheckOptions) -> Result<Option<ClassResult>> {
    let mut merged: Option<ClassResult> = None;
    let mut d_in = cfg.input_dim;
    for (l, spec) in cfg.layers.iter().enumerate() {
        if let LayerSpec::Dfsmn(s) = spec {
            let memory = s.memory();
            if memory.skip {
                let seed = SplitMix64::derive(opts.seed, 1000 + l as u64).next_u64();
                let mut normal = NormalSampler::new(seed);
                let mut params = DfsmnLayerParams::<f64>::zeros(d_in, s.proj, s.hidden, &memory);
                for m in params.tensors_mut() {
                    m.data_mut().iter_mut().for_each(|v| *v = normal.next(0.0, 0.5));
                }
                let h = Matrix::<f64>::seeded_normal(seed ^ 1, opts.frames, d_in, 0.0, 1.0)?;
                let skip = Matrix::<f64>::seeded_normal(seed ^ 2, opts.frames, s.proj, 0.0, 1.0)?;
                let r = Matrix::<f64>::seeded_normal(seed ^ 3, opts.frames, s.hidden, 0.0, 1.0)?;
                let fwd = dfsmn_layer_forward(&h, &params, &memory, s.activation, Some(&skip))?;
                let back = dfsmn_layer_backward(&params, &fwd.cache, &r, None)?;
                let grad_skip = back
                    .grad_skip
                    .ok_or_else(|| Error::InvalidArgument("skip layer returned no skip gradient".into()))?;
                let mut rng = SplitMix64::derive(opts.seed, 2000 + l as u64);
                let res = check_pool("skip", skip.len(), opts, &mut rng, |j| {
                    let shifted = |delta: f64| -> Result<(f64, Vec<bool>)> {
                        let mut sk = skip.clone();
                        sk.data_mut()[j] += delta;
                        let f = dfsmn_layer_forward(&h, &params, &memory, s.activation, Some(&sk))?;
                        let loss = f.output.data().iter().zip(r.data()).map(|(a, b)| a * b).sum();
                        let pattern = if s.activation == Activation::Relu {
                            f.output.data().iter().map(|&v| v > 0.0).collect()
                        } else {
                            Vec::new()
                        };
                        Ok((loss, pattern))
                    };
                    Ok((grad_skip.data()[j], shifted(opts.step)?, shifted(-opts.step)?))
                })?;
                merged = Some(match merged {
                    Some(mut m) => {
                        m.checked += res.checked;
                        if res.max_rel_err > m.max_rel_err {
                            m = ClassResult { checked: m.checked, ..res };
                        }
                        m
                    }
                    None => res,
                });
            }
        }
        d_in = spec.hidden();
    }
    Ok(merged)
}
