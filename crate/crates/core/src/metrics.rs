//! Feature normalization, F0 interpolation and the objective measures used
//! to compare predicted and reference acoustic features.
//!
//! Conventions:
//! - MCD: `(10 / ln 10) * sqrt(2 * sum_{i>=1} (c_i - c^_i)^2)` per frame,
//!   averaged over frames; coefficient 0 (energy) is excluded.
//! - F0 RMSE: in Hz, over frames voiced in both reference and hypothesis;
//!   the hypothesis F0 is `exp` of the static log-F0 column.
//! - BAPD: per-frame RMSE across BAP dimensions, averaged over frames.
//! - U/V error: fraction of frames whose thresholded voicing disagrees.
//! - Total MSE: squared error pooled over every frame and dimension of all
//!   streams.
//!
//! Standard deviations use the population (`1/N`) convention.

use serde::{Deserialize, Serialize};

use std::collections::BTreeMap;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::tensor::Matrix;

pub const STD_FLOOR: f64 = 1e-8;

/// `10 / ln(10)`, the natural-log to decibel factor.
pub const DB_PER_NEPER: f64 = 10.0 / std::f64::consts::LN_10;

/// Per-dimension mean and standard deviation of one stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Dimensions whose std fell below [`STD_FLOOR`] and was floored.
    pub floored: Vec<usize>,
}

impl NormStats {
    /// Fit over all frames of all `sequences`.
    pub fn fit<'a>(sequences: impl IntoIterator<Item = &'a Matrix<f64>>) -> Result<Self> {
        let seqs: Vec<&Matrix<f64>> = sequences.into_iter().collect();
        let dim = seqs.first().map_or(0, |m| m.cols());
        if seqs.iter().any(|m| m.cols() != dim) {
            return Err(Error::InvalidArgument("sequences differ in dimension".into()));
        }
        let frames: usize = seqs.iter().map(|m| m.rows()).sum();
        if frames < 2 || dim == 0 {
            return Err(Error::InvalidArgument(format!(
                "normalization needs at least 2 frames, got {frames}"
            )));
        }
        let n = frames as f64;
        let mut mean = vec![0.0; dim];
        for m in &seqs {
            for t in 0..m.rows() {
                for (acc, &v) in mean.iter_mut().zip(m.row(t)) {
                    *acc += v;
                }
            }
        }
        mean.iter_mut().for_each(|v| *v /= n);
        let mut var = vec![0.0; dim];
        for m in &seqs {
            for t in 0..m.rows() {
                for ((acc, &v), &mu) in var.iter_mut().zip(m.row(t)).zip(&mean) {
                    *acc += (v - mu) * (v - mu);
                }
            }
        }
        let mut floored = Vec::new();
        let std = var
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let s = (v / n).sqrt();
                if s < STD_FLOOR {
                    floored.push(i);
                    STD_FLOOR
                } else {
                    s
                }
            })
            .collect();
        Ok(Self { mean, std, floored })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    fn check(&self, m: &Matrix<f64>) -> Result<()> {
        if m.cols() != self.dim() {
            return Err(Error::shape("normalization", m.shape(), (m.rows(), self.dim())));
        }
        Ok(())
    }

    pub fn apply(&self, m: &Matrix<f64>) -> Result<Matrix<f64>> {
        self.check(m)?;
        Ok(Matrix::from_fn(m.rows(), m.cols(), |t, j| (m.get(t, j) - self.mean[j]) / self.std[j]))
    }

    pub fn invert(&self, m: &Matrix<f64>) -> Result<Matrix<f64>> {
        self.check(m)?;
        Ok(Matrix::from_fn(m.rows(), m.cols(), |t, j| m.get(t, j) * self.std[j] + self.mean[j]))
    }
}

/// Linearly interpolate F0 across unvoiced frames.
///
/// Voiced frames (`uv >= 0.5`) are kept; interior unvoiced runs are linearly
/// interpolated between their voiced neighbours and leading/trailing runs
/// hold the nearest voiced value.
pub fn interpolate_f0(f0: &[f64], uv: &[f64]) -> Result<Vec<f64>> {
    if f0.len() != uv.len() {
        return Err(Error::shape("interpolate_f0", (f0.len(), 1), (uv.len(), 1)));
    }
    let voiced: Vec<usize> = (0..f0.len()).filter(|&t| uv[t] >= 0.5).collect();
    let (&first, &last) = match (voiced.first(), voiced.last()) {
        (Some(f), Some(l)) => (f, l),
        _ => return Err(Error::AllUnvoiced),
    };
    let mut out = f0.to_vec();
    out[..first].fill(f0[first]);
    out[last + 1..].fill(f0[last]);
    for w in voiced.windows(2) {
        let (a, b) = (w[0], w[1]);
        let span = (b - a) as f64;
        for t in a + 1..b {
            let frac = (t - a) as f64 / span;
            out[t] = f0[a] + (f0[b] - f0[a]) * frac;
        }
    }
    Ok(out)
}

fn same_frames(op: &'static str, a: &Matrix<f64>, b: &Matrix<f64>) -> Result<()> {
    if a.shape() != b.shape() || a.rows() == 0 {
        return Err(Error::shape(op, a.shape(), b.shape()));
    }
    Ok(())
}

/// Mel-cepstral distortion in dB, excluding coefficient 0.
pub fn mcd(reference: &Matrix<f64>, hypothesis: &Matrix<f64>) -> Result<f64> {
    same_frames("mcd", reference, hypothesis)?;
    let total: f64 = (0..reference.rows())
        .map(|t| {
            let sq: f64 = reference.row(t)[1..]
                .iter()
                .zip(&hypothesis.row(t)[1..])
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            DB_PER_NEPER * (2.0 * sq).sqrt()
        })
        .sum();
    Ok(total / reference.rows() as f64)
}

/// F0 RMSE in Hz over frames voiced in both reference and hypothesis.
///
/// `hyp_lf0` is natural-log F0; only its first column (static) is used.
pub fn f0_rmse(ref_f0_hz: &[f64], hyp_lf0: &[f64], ref_uv: &[f64], hyp_uv: &[f64]) -> Result<f64> {
    let n = ref_f0_hz.len();
    if hyp_lf0.len() != n || ref_uv.len() != n || hyp_uv.len() != n {
        return Err(Error::InvalidArgument("f0_rmse inputs differ in length".into()));
    }
    let mut sq = 0.0;
    let mut count = 0usize;
    for t in 0..n {
        if ref_uv[t] >= 0.5 && hyp_uv[t] >= 0.5 {
            let e = hyp_lf0[t].exp() - ref_f0_hz[t];
            sq += e * e;
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::NoCommonVoiced);
    }
    Ok((sq / count as f64).sqrt())
}

/// Fraction of frames where `(hyp_prob >= threshold)` disagrees with the
/// reference flag.
pub fn uv_error(ref_uv: &[f64], hyp_prob: &[f64], threshold: f64) -> Result<f64> {
    if ref_uv.len() != hyp_prob.len() || ref_uv.is_empty() {
        return Err(Error::InvalidArgument("uv_error inputs differ in length or are empty".into()));
    }
    let wrong = ref_uv
        .iter()
        .zip(hyp_prob)
        .filter(|(&r, &h)| (r >= 0.5) != (h >= threshold))
        .count();
    Ok(wrong as f64 / ref_uv.len() as f64)
}

/// Mean over frames of the per-frame RMSE across BAP dimensions.
pub fn bapd(reference: &Matrix<f64>, hypothesis: &Matrix<f64>) -> Result<f64> {
    same_frames("bapd", reference, hypothesis)?;
    let dims = reference.cols() as f64;
    let total: f64 = (0..reference.rows())
        .map(|t| {
            let sq: f64 = reference
                .row(t)
                .iter()
                .zip(hypothesis.row(t))
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            (sq / dims).sqrt()
        })
        .sum();
    Ok(total / reference.rows() as f64)
}

/// Squared error pooled over every frame and dimension of all streams.
/// Streams are paired positionally.
pub fn total_mse(reference: &[&Matrix<f64>], hypothesis: &[&Matrix<f64>]) -> Result<f64> {
    if reference.len() != hypothesis.len() || reference.is_empty() {
        return Err(Error::InvalidArgument("total_mse needs matching, non-empty stream lists".into()));
    }
    let mut sq = 0.0;
    let mut count = 0usize;
    for (r, h) in reference.iter().zip(hypothesis) {
        same_frames("total_mse", r, h)?;
        sq += r.data().iter().zip(h.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        count += r.len();
    }
    Ok(sq / count as f64)
}

/// Normalization of a whole dataset: the input plus selected target streams.
/// Streams without stats (such as a 0/1 `uv`) pass through unchanged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetNorm {
    pub input: NormStats,
    pub targets: BTreeMap<String, NormStats>,
}

impl DatasetNorm {
    /// Fit on `data`: the input plus the named target streams.
    pub fn fit(data: &Dataset<f64>, streams: &[&str]) -> Result<Self> {
        let input = NormStats::fit(data.sequences.iter().map(|s| &s.input))?;
        let mut targets = BTreeMap::new();
        for &name in streams {
            let seqs: Vec<&Matrix<f64>> = data.sequences.iter().filter_map(|s| s.targets.get(name)).collect();
            if seqs.len() != data.len() {
                return Err(Error::MissingStream(name.to_string()));
            }
            targets.insert(name.to_string(), NormStats::fit(seqs)?);
        }
        Ok(Self { input, targets })
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        std::fs::write(path, text + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Malformed(format!("normalization file: {e}")))
    }

    pub fn apply(&self, data: &Dataset<f64>) -> Result<Dataset<f64>> {
        self.map(data, NormStats::apply)
    }

    pub fn invert(&self, data: &Dataset<f64>) -> Result<Dataset<f64>> {
        self.map(data, NormStats::invert)
    }

    fn map(&self, data: &Dataset<f64>, f: fn(&NormStats, &Matrix<f64>) -> Result<Matrix<f64>>) -> Result<Dataset<f64>> {
        let mut out = data.clone();
        for seq in &mut out.sequences {
            seq.input = f(&self.input, &seq.input)?;
            for (name, m) in seq.targets.iter_mut() {
                if let Some(stats) = self.targets.get(name) {
                    *m = f(stats, m)?;
                }
            }
        }
        Ok(out)
    }
}
