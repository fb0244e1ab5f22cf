//! cFSMN / DFSMN layers and plain fully-connected layers, forward and
//! backward.
//!
//! A DFSMN layer maps a `T x d_in` sequence `h` to a `T x d_hidden` sequence:
//!
//! ```text
//! p_t  = h_t V + b
//! p~_t = [skip_t +] p_t + sum_{i=0..N1} a_i * p_{t - s1 i} + sum_{j=1..N2} c_j * p_{t + s2 j}
//! h'_t = f(p~_t U + d)
//! ```
//!
//! where `*` is the element-wise product and `skip_t` is the previous
//! layer's `p~_t` when the skip connection is enabled. Taps falling outside
//! `[0, T)` read zeros.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Matrix, Real, SequenceTensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
    Sigmoid,
    Linear,
}

impl Activation {
    pub fn apply<T: Real>(self, z: T) -> T {
        match self {
            Activation::Relu => z.max(T::zero()),
            Activation::Tanh => z.tanh(),
            Activation::Sigmoid => T::one() / (T::one() + (-z).exp()),
            Activation::Linear => z,
        }
    }

    /// Derivative expressed through the activation output `y = f(z)`.
    pub fn derivative_from_output<T: Real>(self, y: T) -> T {
        match self {
            Activation::Relu => {
                if y > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Tanh => T::one() - y * y,
            Activation::Sigmoid => y * (T::one() - y),
            Activation::Linear => T::one(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
            Activation::Linear => "linear",
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            "sigmoid" => Ok(Activation::Sigmoid),
            "linear" => Ok(Activation::Linear),
            other => Err(Error::InvalidArgument(format!(
                "unknown activation `{other}` (expected relu, tanh, sigmoid or linear)"
            ))),
        }
    }
}

/// Memory-block hyperparameters: look-back order `n_back` (N1) with tap
/// spacing `stride_back` (s1), look-ahead order `n_ahead` (N2) with spacing
/// `stride_ahead` (s2), and the identity skip from the previous memory block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MemoryConfig {
    pub n_back: usize,
    pub n_ahead: usize,
    pub stride_back: usize,
    pub stride_ahead: usize,
    pub skip: bool,
}

impl Default for MemoryConfig {
    fn default() -> Self {
        Self {
            n_back: 0,
            n_ahead: 0,
            stride_back: 1,
            stride_ahead: 1,
            skip: false,
        }
    }
}

impl MemoryConfig {
    pub fn new(n_back: usize, n_ahead: usize, stride_back: usize, stride_ahead: usize) -> Self {
        Self {
            n_back,
            n_ahead,
            stride_back,
            stride_ahead,
            skip: false,
        }
    }

    pub fn with_skip(mut self, skip: bool) -> Self {
        self.skip = skip;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.stride_back == 0 || self.stride_ahead == 0 {
            return Err(Error::InvalidArgument(format!(
                "memory strides must be >= 1 (got {}, {})",
                self.stride_back, self.stride_ahead
            )));
        }
        Ok(())
    }

    /// Frames of history one memory block reads: `N1 * s1`.
    pub fn look_back(&self) -> usize {
        self.n_back * self.stride_back
    }

    /// Frames of future one memory block reads: `N2 * s2`.
    pub fn look_ahead(&self) -> usize {
        self.n_ahead * self.stride_ahead
    }

    /// Number of coefficient vectors: `N1 + 1 + N2`.
    pub fn taps(&self) -> usize {
        self.n_back + 1 + self.n_ahead
    }
}

/// Parameters of one DFSMN layer.
///
/// `back` holds `a_0..a_{N1}` as rows (the `i = 0` self tap is separate from
/// the bare `p_t` term), `ahead` holds `c_1..c_{N2}`.
#[derive(Debug, Clone, PartialEq)]
pub struct DfsmnLayerParams<T> {
    /// `d_in x d_proj`
    pub v: Matrix<T>,
    /// `1 x d_proj`
    pub b: Matrix<T>,
    /// `(N1 + 1) x d_proj`
    pub back: Matrix<T>,
    /// `N2 x d_proj`
    pub ahead: Matrix<T>,
    /// `d_proj x d_hidden`
    pub u: Matrix<T>,
    /// `1 x d_hidden`
    pub d: Matrix<T>,
}

impl<T: Real> DfsmnLayerParams<T> {
    pub fn zeros(d_in: usize, d_proj: usize, d_hidden: usize, memory: &MemoryConfig) -> Self {
        Self {
            v: Matrix::zeros(d_in, d_proj),
            b: Matrix::zeros(1, d_proj),
            back: Matrix::zeros(memory.n_back + 1, d_proj),
            ahead: Matrix::zeros(memory.n_ahead, d_proj),
            u: Matrix::zeros(d_proj, d_hidden),
            d: Matrix::zeros(1, d_hidden),
        }
    }

    pub fn d_in(&self) -> usize {
        self.v.rows()
    }

    pub fn d_proj(&self) -> usize {
        self.v.cols()
    }

    pub fn d_hidden(&self) -> usize {
        self.u.cols()
    }

    pub fn validate(&self, memory: &MemoryConfig) -> Result<()> {
        memory.validate()?;
        let p = self.d_proj();
        let checks: [(&'static str, (usize, usize), (usize, usize)); 5] = [
            ("proj bias", self.b.shape(), (1, p)),
            ("look-back coefficients", self.back.shape(), (memory.n_back + 1, p)),
            ("look-ahead coefficients", self.ahead.shape(), (memory.n_ahead, p)),
            ("output weight", (self.u.rows(), 0), (p, 0)),
            ("output bias", self.d.shape(), (1, self.d_hidden())),
        ];
        for (what, got, want) in checks {
            if got != want {
                return Err(Error::shape(what, got, want));
            }
        }
        Ok(())
    }

    pub fn tensors(&self) -> [&Matrix<T>; 6] {
        [&self.v, &self.b, &self.back, &self.ahead, &self.u, &self.d]
    }

    pub fn tensors_mut(&mut self) -> [&mut Matrix<T>; 6] {
        [
            &mut self.v,
            &mut self.b,
            &mut self.back,
            &mut self.ahead,
            &mut self.u,
            &mut self.d,
        ]
    }
}

/// Affine layer `y = f(h W + bias)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FcParams<T> {
    /// `d_in x d_out`
    pub w: Matrix<T>,
    /// `1 x d_out`
    pub bias: Matrix<T>,
}

impl<T: Real> FcParams<T> {
    pub fn zeros(d_in: usize, d_out: usize) -> Self {
        Self {
            w: Matrix::zeros(d_in, d_out),
            bias: Matrix::zeros(1, d_out),
        }
    }

    pub fn tensors(&self) -> [&Matrix<T>; 2] {
        [&self.w, &self.bias]
    }

    pub fn tensors_mut(&mut self) -> [&mut Matrix<T>; 2] {
        [&mut self.w, &mut self.bias]
    }
}

fn check_sequence<T: Real>(op: &'static str, seq: &Matrix<T>, cols: usize) -> Result<()> {
    if seq.rows() == 0 || seq.cols() != cols {
        return Err(Error::shape(op, seq.shape(), (seq.rows().max(1), cols)));
    }
    Ok(())
}

/// `p_t = h_t V + b` for every frame.
pub fn project<T: Real>(h: &SequenceTensor<T>, v: &Matrix<T>, b: &Matrix<T>) -> Result<SequenceTensor<T>> {
    check_sequence("project", h, v.rows())?;
    let mut p = h.matmul(v)?;
    p.add_row_broadcast(b)?;
    Ok(p)
}

/// The memory block: skip + self + strided look-back and look-ahead taps.
///
/// `skip` must be present exactly when `memory.skip` is set.
pub fn memory_block<T: Real>(
    p: &SequenceTensor<T>,
    back: &Matrix<T>,
    ahead: &Matrix<T>,
    memory: &MemoryConfig,
    skip: Option<&SequenceTensor<T>>,
) -> Result<SequenceTensor<T>> {
    memory.validate()?;
    let dim = p.cols();
    check_sequence("memory_block", p, dim)?;
    if back.shape() != (memory.n_back + 1, dim) {
        return Err(Error::shape("memory_block look-back coefficients", back.shape(), (memory.n_back + 1, dim)));
    }
    if ahead.shape() != (memory.n_ahead, dim) {
        return Err(Error::shape("memory_block look-ahead coefficients", ahead.shape(), (memory.n_ahead, dim)));
    }
    match (memory.skip, skip) {
        (true, Some(s)) if s.shape() != p.shape() => {
            return Err(Error::shape("memory_block skip", s.shape(), p.shape()));
        }
        (true, None) => {
            return Err(Error::InvalidArgument("memory block has skip enabled but no skip input".into()));
        }
        (false, Some(_)) => {
            return Err(Error::InvalidArgument("skip input given to a memory block without skip".into()));
        }
        _ => {}
    }

    let frames = p.rows();
    let mut out = Matrix::zeros(frames, dim);
    for t in 0..frames {
        let row = out.row_mut(t);
        match skip {
            Some(s) => {
                for ((o, &sv), &pv) in row.iter_mut().zip(s.row(t)).zip(p.row(t)) {
                    *o = sv + pv;
                }
            }
            None => row.copy_from_slice(p.row(t)),
        }
        for i in 0..=memory.n_back {
            let offset = memory.stride_back * i;
            if offset > t {
                break;
            }
            for ((o, &a), &pv) in row.iter_mut().zip(back.row(i)).zip(p.row(t - offset)) {
                *o += a * pv;
            }
        }
        for j in 1..=memory.n_ahead {
            let k = t + memory.stride_ahead * j;
            if k >= frames {
                break;
            }
            for ((o, &c), &pv) in row.iter_mut().zip(ahead.row(j - 1)).zip(p.row(k)) {
                *o += c * pv;
            }
        }
    }
    Ok(out)
}

/// `h'_t = f(p~_t U + d)`.
pub fn layer_output<T: Real>(
    ptilde: &SequenceTensor<T>,
    u: &Matrix<T>,
    d: &Matrix<T>,
    activation: Activation,
) -> Result<SequenceTensor<T>> {
    check_sequence("layer_output", ptilde, u.rows())?;
    let mut z = ptilde.matmul(u)?;
    z.add_row_broadcast(d)?;
    Ok(z.map(|v| activation.apply(v)))
}

/// Activations a DFSMN layer keeps for its backward pass.
#[derive(Debug, Clone)]
pub struct DfsmnCache<T> {
    pub input: SequenceTensor<T>,
    pub p: SequenceTensor<T>,
    pub ptilde: SequenceTensor<T>,
    pub output: SequenceTensor<T>,
    pub memory: MemoryConfig,
    pub activation: Activation,
}

#[derive(Debug, Clone)]
pub struct DfsmnForward<T> {
    pub output: SequenceTensor<T>,
    pub cache: DfsmnCache<T>,
}

impl<T> DfsmnForward<T> {
    /// The memory-block output, which feeds the next layer's skip input.
    pub fn ptilde(&self) -> &SequenceTensor<T> {
        &self.cache.ptilde
    }
}

pub fn dfsmn_layer_forward<T: Real>(
    h: &SequenceTensor<T>,
    params: &DfsmnLayerParams<T>,
    memory: &MemoryConfig,
    activation: Activation,
    skip: Option<&SequenceTensor<T>>,
) -> Result<DfsmnForward<T>> {
    params.validate(memory)?;
    let p = project(h, &params.v, &params.b)?;
    let ptilde = memory_block(&p, &params.back, &params.ahead, memory, skip)?;
    let output = layer_output(&ptilde, &params.u, &params.d, activation)?;
    Ok(DfsmnForward {
        output: output.clone(),
        cache: DfsmnCache {
            input: h.clone(),
            p,
            ptilde,
            output,
            memory: *memory,
            activation,
        },
    })
}

#[derive(Debug, Clone)]
pub struct DfsmnBackward<T> {
    pub grad_input: SequenceTensor<T>,
    /// Gradient reaching the previous memory block through the identity skip.
    pub grad_skip: Option<SequenceTensor<T>>,
    pub grads: DfsmnLayerParams<T>,
}

/// Gradient of the pre-activation from the gradient of the activation output.
fn pre_activation_grad<T: Real>(output: &Matrix<T>, grad_out: &Matrix<T>, activation: Activation) -> Matrix<T> {
    let mut dz = grad_out.clone();
    for (g, &y) in dz.data_mut().iter_mut().zip(output.data()) {
        *g = *g * activation.derivative_from_output(y);
    }
    dz
}

/// Backward pass of a DFSMN layer.
///
/// `grad_ptilde_extra` carries gradient arriving at this layer's memory-block
/// output from outside the layer (the next layer's skip connection).
pub fn dfsmn_layer_backward<T: Real>(
    params: &DfsmnLayerParams<T>,
    cache: &DfsmnCache<T>,
    grad_out: &SequenceTensor<T>,
    grad_ptilde_extra: Option<&SequenceTensor<T>>,
) -> Result<DfsmnBackward<T>> {
    if grad_out.shape() != cache.output.shape() {
        return Err(Error::shape("dfsmn_layer_backward", grad_out.shape(), cache.output.shape()));
    }
    let memory = &cache.memory;
    let frames = cache.p.rows();
    let dim = cache.p.cols();

    let dz = pre_activation_grad(&cache.output, grad_out, cache.activation);
    let grad_u = cache.ptilde.t_matmul(&dz)?;
    let grad_d = dz.sum_rows();
    let mut dpt = dz.matmul_t(&params.u)?;
    if let Some(extra) = grad_ptilde_extra {
        dpt.add_assign(extra)
            .map_err(|_| Error::shape("dfsmn_layer_backward skip gradient", extra.shape(), dpt.shape()))?;
    }

    let mut grad_back = Matrix::zeros(memory.n_back + 1, dim);
    for i in 0..=memory.n_back {
        let offset = memory.stride_back * i;
        let g = grad_back.row_mut(i);
        for t in offset..frames {
            for ((gv, &dv), &pv) in g.iter_mut().zip(dpt.row(t)).zip(cache.p.row(t - offset)) {
                *gv += dv * pv;
            }
        }
    }
    let mut grad_ahead = Matrix::zeros(memory.n_ahead, dim);
    for j in 1..=memory.n_ahead {
        let offset = memory.stride_ahead * j;
        let g = grad_ahead.row_mut(j - 1);
        for t in 0..frames.saturating_sub(offset) {
            for ((gv, &dv), &pv) in g.iter_mut().zip(dpt.row(t)).zip(cache.p.row(t + offset)) {
                *gv += dv * pv;
            }
        }
    }

    // dP_k = dP~_k + sum_i a_i dP~_{k + s1 i} + sum_j c_j dP~_{k - s2 j}
    let mut dp = dpt.clone();
    for k in 0..frames {
        let row = dp.row_mut(k);
        for i in 0..=memory.n_back {
            let t = k + memory.stride_back * i;
            if t >= frames {
                break;
            }
            for ((o, &a), &dv) in row.iter_mut().zip(params.back.row(i)).zip(dpt.row(t)) {
                *o += a * dv;
            }
        }
        for j in 1..=memory.n_ahead {
            let offset = memory.stride_ahead * j;
            if offset > k {
                break;
            }
            for ((o, &c), &dv) in row.iter_mut().zip(params.ahead.row(j - 1)).zip(dpt.row(k - offset)) {
                *o += c * dv;
            }
        }
    }

    let grad_v = cache.input.t_matmul(&dp)?;
    let grad_b = dp.sum_rows();
    let grad_input = dp.matmul_t(&params.v)?;
    let grad_skip = memory.skip.then_some(dpt);

    Ok(DfsmnBackward {
        grad_input,
        grad_skip,
        grads: DfsmnLayerParams {
            v: grad_v,
            b: grad_b,
            back: grad_back,
            ahead: grad_ahead,
            u: grad_u,
            d: grad_d,
        },
    })
}

pub fn fc_layer_forward<T: Real>(
    h: &SequenceTensor<T>,
    params: &FcParams<T>,
    activation: Activation,
) -> Result<SequenceTensor<T>> {
    check_sequence("fc_layer_forward", h, params.w.rows())?;
    let mut z = h.matmul(&params.w)?;
    z.add_row_broadcast(&params.bias)?;
    Ok(z.map(|v| activation.apply(v)))
}

/// Returns `(grad_input, param_grads)` given the layer's input and output.
pub fn fc_layer_backward<T: Real>(
    params: &FcParams<T>,
    input: &SequenceTensor<T>,
    output: &SequenceTensor<T>,
    grad_out: &SequenceTensor<T>,
    activation: Activation,
) -> Result<(SequenceTensor<T>, FcParams<T>)> {
    if grad_out.shape() != output.shape() {
        return Err(Error::shape("fc_layer_backward", grad_out.shape(), output.shape()));
    }
    let dz = pre_activation_grad(output, grad_out, activation);
    let grads = FcParams {
        w: input.t_matmul(&dz)?,
        bias: dz.sum_rows(),
    };
    Ok((dz.matmul_t(&params.w)?, grads))
}
