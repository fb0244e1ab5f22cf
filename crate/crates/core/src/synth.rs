//! Desk-scale synthetic datasets.
//!
//! The echo task asks the network to reproduce its input `lag` frames late,
//! which is only possible with a look-back receptive field of at least `lag`.
//! The toy acoustic task produces the four vocoder-style streams from a
//! fixed random teacher with one frame of context either side.

use crate::dataset::{Dataset, Sequence};
use crate::error::{Error, Result};
use crate::metrics::interpolate_f0;
use crate::network::StreamMap;
use crate::rng::{NormalSampler, SplitMix64};
use crate::tensor::Matrix;

pub const ECHO_STREAM: &str = "echo";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EchoSpec {
    pub input_dim: usize,
    pub lag: usize,
    /// Standard deviation of noise added to the target.
    pub noise_std: f64,
    pub num_sequences: usize,
    pub num_valid: usize,
    pub seq_len: usize,
}

impl Default for EchoSpec {
    fn default() -> Self {
        Self {
            input_dim: 4,
            lag: 8,
            noise_std: 0.0,
            num_sequences: 64,
            num_valid: 16,
            seq_len: 64,
        }
    }
}

impl EchoSpec {
    pub fn validate(&self) -> Result<()> {
        if self.lag >= self.seq_len {
            return Err(Error::InvalidArgument(format!(
                "lag {} must be smaller than the sequence length {}",
                self.lag, self.seq_len
            )));
        }
        if self.input_dim == 0 || self.num_sequences == 0 || !(self.noise_std >= 0.0) {
            return Err(Error::InvalidArgument("echo task needs input_dim, sequences >= 1 and noise_std >= 0".into()));
        }
        Ok(())
    }
}

/// `y_t = x_{t-lag}` (zero for `t < lag`).
pub fn echo_target(x: &Matrix<f64>, lag: usize) -> Matrix<f64> {
    Matrix::from_fn(x.rows(), x.cols(), |t, j| if t >= lag { x.get(t - lag, j) } else { 0.0 })
}

fn echo_sequence(spec: &EchoSpec, id: String, seed: u64) -> Sequence<f64> {
    let mut normal = NormalSampler::new(seed);
    let input = Matrix::from_fn(spec.seq_len, spec.input_dim, |_, _| normal.next_standard());
    let mut target = echo_target(&input, spec.lag);
    if spec.noise_std > 0.0 {
        target.data_mut().iter_mut().for_each(|v| *v += normal.next(0.0, spec.noise_std));
    }
    let mut targets = StreamMap::new();
    targets.insert(ECHO_STREAM.to_string(), target);
    Sequence { id, input, targets }
}

/// Train and validation sets of unit white noise and its delayed copy.
pub fn gen_echo_task(spec: &EchoSpec, seed: u64) -> Result<(Dataset<f64>, Dataset<f64>)> {
    spec.validate()?;
    let make = |prefix: &str, count: usize, stream: u64| {
        Dataset::new(
            (0..count)
                .map(|i| echo_sequence(spec, format!("{prefix}{i:04}"), SplitMix64::derive(seed, stream + i as u64).next_u64()))
                .collect(),
        )
    };
    Ok((make("train", spec.num_sequences, 0), make("valid", spec.num_valid, 1 << 32)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToySpec {
    pub input_dim: usize,
    pub mcep_dim: usize,
    pub bap_dim: usize,
    /// Width of the hidden teacher features.
    pub teacher_dim: usize,
    pub num_sequences: usize,
    pub num_valid: usize,
    pub seq_len: usize,
}

impl Default for ToySpec {
    fn default() -> Self {
        Self {
            input_dim: 8,
            mcep_dim: 6,
            bap_dim: 2,
            teacher_dim: 6,
            num_sequences: 10,
            num_valid: 4,
            seq_len: 40,
        }
    }
}

/// Stream names and dimensions the toy task produces.
pub fn toy_streams(spec: &ToySpec) -> [(&'static str, usize); 4] {
    [("mcep", spec.mcep_dim), ("lf0", 3), ("bap", spec.bap_dim), ("uv", 1)]
}

struct Teacher {
    context: Matrix<f64>,
    mcep: Matrix<f64>,
    bap: Matrix<f64>,
    uv: Vec<f64>,
    f0: Vec<f64>,
}

impl Teacher {
    fn new(spec: &ToySpec, seed: u64) -> Result<Self> {
        let k = spec.teacher_dim;
        let m = |stream: u64, rows: usize, cols: usize, std: f64| {
            Matrix::seeded_normal(SplitMix64::derive(seed, stream).next_u64(), rows, cols, 0.0, std)
        };
        Ok(Self {
            context: m(0, 3 * spec.input_dim, k, 1.0 / (3.0 * spec.input_dim as f64).sqrt())?,
            mcep: m(1, k, spec.mcep_dim, 1.0)?,
            bap: m(2, k, spec.bap_dim, 1.0)?,
            uv: m(3, k, 1, 1.0)?.into_data(),
            f0: m(4, k, 1, 1.0)?.into_data(),
        })
    }

    /// `tanh([x_{t-1}, x_t, x_{t+1}] W)` with zero padding at the edges.
    fn features(&self, x: &Matrix<f64>) -> Result<Matrix<f64>> {
        let (frames, d) = x.shape();
        let stacked = Matrix::from_fn(frames, 3 * d, |t, j| {
            let (offset, col) = (j / d, j % d);
            match (t + offset).checked_sub(1) {
                Some(s) if s < frames => x.get(s, col),
                _ => 0.0,
            }
        });
        Ok(stacked.matmul(&self.context)?.map(f64::tanh))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `[s_t, (s_{t+1} - s_{t-1}) / 2, s_{t+1} - 2 s_t + s_{t-1}]` with clamped
/// edges.
pub fn with_dynamics(s: &[f64]) -> Matrix<f64> {
    let n = s.len();
    let at = |t: isize| s[t.clamp(0, n as isize - 1) as usize];
    Matrix::from_fn(n, 3, |t, j| {
        let t = t as isize;
        match j {
            0 => at(t),
            1 => (at(t + 1) - at(t - 1)) / 2.0,
            _ => at(t + 1) - 2.0 * at(t) + at(t - 1),
        }
    })
}

fn toy_sequence(spec: &ToySpec, teacher: &Teacher, id: String, seed: u64) -> Result<Sequence<f64>> {
    let mut normal = NormalSampler::new(seed);
    let input = Matrix::from_fn(spec.seq_len, spec.input_dim, |_, _| normal.next_standard());
    let z = teacher.features(&input)?;
    let mut uv: Vec<f64> = (0..z.rows())
        .map(|t| if dot(z.row(t), &teacher.uv) + 0.3 > 0.0 { 1.0 } else { 0.0 })
        .collect();
    if uv.iter().all(|&v| v < 0.5) {
        uv[0] = 1.0;
    }
    let raw_f0: Vec<f64> = (0..z.rows())
        .map(|t| if uv[t] >= 0.5 { 120.0 * (0.15 * dot(z.row(t), &teacher.f0)).exp() } else { 0.0 })
        .collect();
    let log_f0: Vec<f64> = interpolate_f0(&raw_f0, &uv)?.iter().map(|f| f.ln()).collect();

    let mut targets = StreamMap::new();
    targets.insert("mcep".to_string(), z.matmul(&teacher.mcep)?);
    targets.insert("lf0".to_string(), with_dynamics(&log_f0));
    targets.insert("bap".to_string(), z.matmul(&teacher.bap)?);
    targets.insert("uv".to_string(), Matrix::new(uv.len(), 1, uv)?);
    Ok(Sequence { id, input, targets })
}

/// Train and validation sets for the toy acoustic task. Targets are raw
/// (not normalized); `uv` is 0/1.
pub fn gen_acoustic_toy(spec: &ToySpec, seed: u64) -> Result<(Dataset<f64>, Dataset<f64>)> {
    if spec.input_dim == 0 || spec.seq_len < 2 || spec.num_sequences == 0 || spec.teacher_dim == 0 {
        return Err(Error::InvalidArgument("toy task needs positive dims, sequences and >= 2 frames".into()));
    }
    let teacher = Teacher::new(spec, SplitMix64::derive(seed, u64::MAX).next_u64())?;
    let make = |prefix: &str, count: usize, stream: u64| -> Result<Dataset<f64>> {
        (0..count)
            .map(|i| {
                let s = SplitMix64::derive(seed, stream + i as u64).next_u64();
                toy_sequence(spec, &teacher, format!("{prefix}{i:04}"), s)
            })
            .collect::<Result<Vec<_>>>()
            .map(Dataset::new)
    };
    Ok((make("train", spec.num_sequences, 0)?, make("valid", spec.num_valid, 1 << 32)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn echo_definition() {
        let x = Matrix::from_f64(5, 1, &[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert_eq!(echo_target(&x, 3).data(), &[0.0, 0.0, 0.0, 1.0, 2.0]);
        assert_eq!(echo_target(&x, 0), x);
    }

    #[test]
    fn echo_task_is_deterministic_and_lagged() {
        let spec = EchoSpec {
            num_sequences: 3,
            num_valid: 2,
            seq_len: 20,
            ..EchoSpec::default()
        };
        let (a, va) = gen_echo_task(&spec, 5).unwrap();
        let (b, _) = gen_echo_task(&spec, 5).unwrap();
        assert_eq!(a, b);
        assert_eq!((a.len(), va.len()), (3, 2));
        let (c, _) = gen_echo_task(&spec, 6).unwrap();
        assert_ne!(a, c);
        for s in &a.sequences {
            assert_eq!(s.targets[ECHO_STREAM], echo_target(&s.input, 8));
        }
        assert!(gen_echo_task(&EchoSpec { lag: 20, ..spec }, 0).is_err());
    }

    #[test]
    fn memoryless_floor_is_input_variance() {
        // the best memoryless predictor outputs 0, so its MSE is the variance
        let spec = EchoSpec {
            input_dim: 1,
            lag: 1,
            num_sequences: 200,
            seq_len: 500,
            ..EchoSpec::default()
        };
        let (train, _) = gen_echo_task(&spec, 1).unwrap();
        let (mut sq, mut n) = (0.0, 0.0);
        for s in &train.sequences {
            for &v in s.targets[ECHO_STREAM].data().iter().skip(1) {
                sq += v * v;
                n += 1.0;
            }
        }
        assert!((sq / n - 1.0).abs() < 0.02, "{}", sq / n);
    }

    #[test]
    fn dynamics_cases() {
        let m = with_dynamics(&[1.0, 2.0, 4.0]);
        assert_eq!(m.row(0), &[1.0, 0.5, 1.0]);
        assert_eq!(m.row(1), &[2.0, 1.5, 1.0]);
        assert_eq!(m.row(2), &[4.0, 1.0, -2.0]);
    }

    #[test]
    fn toy_streams_have_expected_shapes() {
        let spec = ToySpec::default();
        let (train, valid) = gen_acoustic_toy(&spec, 3).unwrap();
        assert_eq!((train.len(), valid.len()), (10, 4));
        for s in &train.sequences {
            for (name, dim) in toy_streams(&spec) {
                assert_eq!(s.targets[name].shape(), (spec.seq_len, dim), "{name}");
            }
            assert!(s.targets["uv"].data().iter().all(|&v| v == 0.0 || v == 1.0));
            assert!(s.targets["uv"].data().iter().any(|&v| v == 1.0));
            assert!(s.targets["lf0"].is_finite());
        }
        assert_eq!(gen_acoustic_toy(&spec, 3).unwrap().0, train);
    }
}
