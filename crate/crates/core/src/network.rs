//! Whole-network construction, forward and backward passes.
//!
//! Layers run bottom-up from the input; every output stream is an affine
//! head (plus its activation) on the top hidden layer. When a DFSMN layer
//! has `skip` set, the memory-block output of the layer directly below is
//! added into its own memory block.

use std::collections::BTreeMap;
use std::fmt;

use crate::config::{LayerSpec, NetworkConfig};
use crate::error::{Error, Result};
use crate::layers::{
    dfsmn_layer_backward, dfsmn_layer_forward, fc_layer_backward, fc_layer_forward, DfsmnCache,
    DfsmnLayerParams, FcParams,
};
use crate::rng::{NormalSampler, SplitMix64};
use crate::tensor::{Matrix, Real, SequenceTensor};

/// Stream name to `frames x dim` matrix.
pub type StreamMap<T> = BTreeMap<String, Matrix<T>>;

/// Parameter classes, used for gradient-check reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ParamClass {
    ProjWeight,
    ProjBias,
    MemoryBack,
    MemoryAhead,
    OutWeight,
    OutBias,
    FcWeight,
    FcBias,
    HeadWeight,
    HeadBias,
}

impl ParamClass {
    pub fn name(self) -> &'static str {
        match self {
            ParamClass::ProjWeight => "proj_weight(V)",
            ParamClass::ProjBias => "proj_bias(b)",
            ParamClass::MemoryBack => "memory_back(a)",
            ParamClass::MemoryAhead => "memory_ahead(c)",
            ParamClass::OutWeight => "out_weight(U)",
            ParamClass::OutBias => "out_bias(d)",
            ParamClass::FcWeight => "fc_weight",
            ParamClass::FcBias => "fc_bias",
            ParamClass::HeadWeight => "head_weight",
            ParamClass::HeadBias => "head_bias",
        }
    }
}

impl fmt::Display for ParamClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

const DFSMN_CLASSES: [ParamClass; 6] = [
    ParamClass::ProjWeight,
    ParamClass::ProjBias,
    ParamClass::MemoryBack,
    ParamClass::MemoryAhead,
    ParamClass::OutWeight,
    ParamClass::OutBias,
];

#[derive(Debug, Clone, PartialEq)]
pub enum LayerParams<T> {
    Dfsmn(DfsmnLayerParams<T>),
    Fc(FcParams<T>),
}

/// All trainable tensors of a network. Also used as the gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams<T> {
    pub layers: Vec<LayerParams<T>>,
    /// One head per output stream, in config order.
    pub heads: Vec<FcParams<T>>,
}

impl<T: Real> NetworkParams<T> {
    /// All-zero parameters shaped for `cfg`.
    pub fn zeros(cfg: &NetworkConfig) -> Self {
        let mut d_in = cfg.input_dim;
        let mut layers = Vec::with_capacity(cfg.layers.len());
        for spec in &cfg.layers {
            layers.push(match spec {
                LayerSpec::Dfsmn(s) => LayerParams::Dfsmn(DfsmnLayerParams::zeros(d_in, s.proj, s.hidden, &s.memory())),
                LayerSpec::Fc(s) => LayerParams::Fc(FcParams::zeros(d_in, s.hidden)),
            });
            d_in = spec.hidden();
        }
        let heads = cfg
            .output_streams
            .iter()
            .map(|s| FcParams::zeros(d_in, s.dim))
            .collect();
        Self { layers, heads }
    }

    /// Tensors in declaration order: layers bottom-up (V, b, a, c, U, d or
    /// W, bias), then heads in stream order (W, bias).
    pub fn tensors(&self) -> Vec<(ParamClass, &Matrix<T>)> {
        let mut out = Vec::new();
        for layer in &self.layers {
            match layer {
                LayerParams::Dfsmn(p) => out.extend(DFSMN_CLASSES.into_iter().zip(p.tensors())),
                LayerParams::Fc(p) => out.extend([ParamClass::FcWeight, ParamClass::FcBias].into_iter().zip(p.tensors())),
            }
        }
        for h in &self.heads {
            out.extend([ParamClass::HeadWeight, ParamClass::HeadBias].into_iter().zip(h.tensors()));
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(ParamClass, &mut Matrix<T>)> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            match layer {
                LayerParams::Dfsmn(p) => out.extend(DFSMN_CLASSES.into_iter().zip(p.tensors_mut())),
                LayerParams::Fc(p) => {
                    out.extend([ParamClass::FcWeight, ParamClass::FcBias].into_iter().zip(p.tensors_mut()))
                }
            }
        }
        for h in &mut self.heads {
            out.extend([ParamClass::HeadWeight, ParamClass::HeadBias].into_iter().zip(h.tensors_mut()));
        }
        out
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors().iter().map(|(_, m)| m.len()).sum()
    }

    /// Check every tensor against the shapes `cfg` implies.
    pub fn check_shapes(&self, cfg: &NetworkConfig) -> Result<()> {
        let want = NetworkParams::<T>::zeros(cfg);
        let (a, b) = (self.tensors(), want.tensors());
        if a.len() != b.len() {
            return Err(Error::Malformed(format!("expected {} tensors, found {}", b.len(), a.len())));
        }
        for (i, ((_, got), (class, exp))) in a.iter().zip(&b).enumerate() {
            if got.shape() != exp.shape() {
                return Err(Error::Malformed(format!(
                    "tensor {i} ({class}) is {}x{}, expected {}x{}",
                    got.rows(),
                    got.cols(),
                    exp.rows(),
                    exp.cols()
                )));
            }
        }
        Ok(())
    }

    /// `self += s * other`, tensor by tensor.
    pub fn axpy(&mut self, s: T, other: &Self) -> Result<()> {
        let src = other.tensors();
        let mut dst = self.tensors_mut();
        if src.len() != dst.len() {
            return Err(Error::InvalidArgument("parameter sets differ in tensor count".into()));
        }
        for ((_, d), (_, o)) in dst.iter_mut().zip(&src) {
            d.axpy(s, o)?;
        }
        Ok(())
    }

    pub fn scale(&mut self, s: T) {
        for (_, m) in self.tensors_mut() {
            for v in m.data_mut() {
                *v = *v * s;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, m)| m.is_finite())
    }
}

/// Closed-form parameter count.
///
/// DFSMN layer: `d_in*proj + proj + (N1+1+N2)*proj + proj*hidden + hidden`;
/// FC layer: `d_in*hidden + hidden`; head: `d_last*dim + dim`.
pub fn count_params(cfg: &NetworkConfig) -> usize {
    let mut d_in = cfg.input_dim;
    let mut total = 0;
    for spec in &cfg.layers {
        total += match spec {
            LayerSpec::Dfsmn(s) => {
                d_in * s.proj + s.proj + s.memory().taps() * s.proj + s.proj * s.hidden + s.hidden
            }
            LayerSpec::Fc(s) => d_in * s.hidden + s.hidden,
        };
        d_in = spec.hidden();
    }
    total + cfg.output_streams.iter().map(|s| d_in * s.dim + s.dim).sum::<usize>()
}

/// Weights ~ N(0, 1/sqrt(fan_in)); biases and memory coefficients zero.
///
/// Tensor `k` in declaration order draws from `SplitMix64::derive(seed, k)`.
pub fn build_network<T: Real>(cfg: &NetworkConfig, seed: u64) -> Result<NetworkParams<T>> {
    cfg.validate()?;
    if cfg.precision != T::PRECISION {
        return Err(Error::Precision(format!(
            "config asks for {:?} but parameters were requested as {:?}",
            cfg.precision,
            T::PRECISION
        )));
    }
    let mut params = NetworkParams::zeros(cfg);
    for (k, (class, m)) in params.tensors_mut().into_iter().enumerate() {
        if matches!(
            class,
            ParamClass::ProjWeight | ParamClass::OutWeight | ParamClass::FcWeight | ParamClass::HeadWeight
        ) {
            let std = 1.0 / (m.rows() as f64).sqrt();
            let mut sampler = NormalSampler::from_rng(SplitMix64::derive(seed, k as u64));
            *m = Matrix::from_rng_normal(&mut sampler, m.rows(), m.cols(), 0.0, std);
        }
    }
    Ok(params)
}

#[derive(Debug, Clone)]
pub enum LayerCache<T> {
    Dfsmn(DfsmnCache<T>),
    Fc {
        input: SequenceTensor<T>,
        output: SequenceTensor<T>,
    },
}

/// Everything [`backward`] needs from a forward pass.
#[derive(Debug, Clone)]
pub struct NetworkCache<T> {
    pub layers: Vec<LayerCache<T>>,
    pub top: SequenceTensor<T>,
    pub streams: StreamMap<T>,
}

#[derive(Debug, Clone)]
pub struct NetworkOutput<T> {
    pub streams: StreamMap<T>,
    pub cache: NetworkCache<T>,
}

pub fn forward<T: Real>(
    params: &NetworkParams<T>,
    cfg: &NetworkConfig,
    input: &SequenceTensor<T>,
) -> Result<NetworkOutput<T>> {
    if input.rows() == 0 || input.cols() != cfg.input_dim {
        return Err(Error::StreamDim {
            stream: "input".into(),
            expected: cfg.input_dim,
            found: input.cols(),
        });
    }
    if params.layers.len() != cfg.layers.len() || params.heads.len() != cfg.output_streams.len() {
        return Err(Error::InvalidArgument("parameters do not match the config".into()));
    }
    let mut h = input.clone();
    let mut caches: Vec<LayerCache<T>> = Vec::with_capacity(cfg.layers.len());
    for (spec, layer) in cfg.layers.iter().zip(&params.layers) {
        let next = match (spec, layer) {
            (LayerSpec::Dfsmn(s), LayerParams::Dfsmn(p)) => {
                let memory = s.memory();
                let skip = if memory.skip {
                    match caches.last() {
                        Some(LayerCache::Dfsmn(below)) => Some(&below.ptilde),
                        _ => return Err(Error::InvalidArgument("skip connection without DFSMN layer below".into())),
                    }
                } else {
                    None
                };
                let fwd = dfsmn_layer_forward(&h, p, &memory, s.activation, skip)?;
                caches.push(LayerCache::Dfsmn(fwd.cache));
                fwd.output
            }
            (LayerSpec::Fc(s), LayerParams::Fc(p)) => {
                let out = fc_layer_forward(&h, p, s.activation)?;
                caches.push(LayerCache::Fc {
                    input: h,
                    output: out.clone(),
                });
                out
            }
            _ => return Err(Error::InvalidArgument("layer kind does not match the config".into())),
        };
        h = next;
    }
    let mut streams = StreamMap::new();
    for (spec, head) in cfg.output_streams.iter().zip(&params.heads) {
        streams.insert(spec.name.clone(), fc_layer_forward(&h, head, spec.activation)?);
    }
    Ok(NetworkOutput {
        streams: streams.clone(),
        cache: NetworkCache {
            layers: caches,
            top: h,
            streams,
        },
    })
}

#[derive(Debug, Clone)]
pub struct NetworkGrads<T> {
    pub params: NetworkParams<T>,
    pub input: SequenceTensor<T>,
}

/// Gradients of a scalar loss given its gradients w.r.t. every stream output.
pub fn backward<T: Real>(
    params: &NetworkParams<T>,
    cfg: &NetworkConfig,
    cache: &NetworkCache<T>,
    grad_streams: &StreamMap<T>,
) -> Result<NetworkGrads<T>> {
    let mut heads = Vec::with_capacity(cfg.output_streams.len());
    let mut grad_h = Matrix::zeros(cache.top.rows(), cache.top.cols());
    for (spec, head) in cfg.output_streams.iter().zip(&params.heads) {
        let g = grad_streams
            .get(&spec.name)
            .ok_or_else(|| Error::MissingStream(spec.name.clone()))?;
        let out = &cache.streams[&spec.name];
        let (gin, grads) = fc_layer_backward(head, &cache.top, out, g, spec.activation)?;
        grad_h.add_assign(&gin)?;
        heads.push(grads);
    }

    let mut layers = Vec::with_capacity(cfg.layers.len());
    let mut pending_skip: Option<Matrix<T>> = None;
    for ((spec, layer), lc) in cfg.layers.iter().zip(&params.layers).zip(&cache.layers).rev() {
        match (spec, layer, lc) {
            (LayerSpec::Dfsmn(_), LayerParams::Dfsmn(p), LayerCache::Dfsmn(c)) => {
                let b = dfsmn_layer_backward(p, c, &grad_h, pending_skip.as_ref())?;
                pending_skip = b.grad_skip;
                grad_h = b.grad_input;
                layers.push(LayerParams::Dfsmn(b.grads));
            }
            (LayerSpec::Fc(s), LayerParams::Fc(p), LayerCache::Fc { input, output }) => {
                debug_assert!(pending_skip.is_none());
                let (gin, grads) = fc_layer_backward(p, input, output, &grad_h, s.activation)?;
                grad_h = gin;
                layers.push(LayerParams::Fc(grads));
            }
            _ => return Err(Error::InvalidArgument("cache does not match the config".into())),
        }
    }
    layers.reverse();
    Ok(NetworkGrads {
        params: NetworkParams { layers, heads },
        input: grad_h,
    })
}
