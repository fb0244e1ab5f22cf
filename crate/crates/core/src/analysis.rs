//! Static cost and context analysis of a network configuration.
//!
//! FLOP counting convention, per frame:
//! - an `m x k -> n` product costs `2 k n` (multiply-add = 2 FLOPs);
//! - a memory block costs `2 (N1 + 1 + N2) proj`;
//! - every bias add and every activation output costs 1 per scalar,
//!   including linear activations.
//!
//! Frames are 5 ms apart, so one second of speech is 200 frames.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::config::{LayerSpec, NetworkConfig, PRESET_NAMES};
use crate::error::{Error, Result};
use crate::network::count_params;

pub const FRAME_SHIFT_MS: usize = 5;
pub const FRAMES_PER_SECOND: usize = 1000 / FRAME_SHIFT_MS;

/// Published model size and cost for a configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PublishedCost {
    pub size_mb: f64,
    pub gflops_per_second: f64,
}

/// Published size (MB) and GFLOPS per second of speech for presets A..I and
/// the BLSTM reference system.
pub const PUBLISHED: [(&str, PublishedCost); 10] = [
    ("BLSTM", PublishedCost { size_mb: 295.0, gflops_per_second: 21.09 }),
    ("A", PublishedCost { size_mb: 62.0, gflops_per_second: 4.08 }),
    ("B", PublishedCost { size_mb: 62.0, gflops_per_second: 4.08 }),
    ("C", PublishedCost { size_mb: 62.0, gflops_per_second: 4.08 }),
    ("D", PublishedCost { size_mb: 62.0, gflops_per_second: 4.09 }),
    ("E", PublishedCost { size_mb: 87.0, gflops_per_second: 5.35 }),
    ("F", PublishedCost { size_mb: 119.0, gflops_per_second: 7.04 }),
    ("G", PublishedCost { size_mb: 119.0, gflops_per_second: 7.06 }),
    ("H", PublishedCost { size_mb: 120.0, gflops_per_second: 7.10 }),
    ("I", PublishedCost { size_mb: 122.0, gflops_per_second: 7.18 }),
];

pub fn published(name: &str) -> Option<PublishedCost> {
    PUBLISHED
        .iter()
        .find(|(n, _)| n.eq_ignore_ascii_case(name))
        .map(|&(_, c)| c)
}

/// Total `(look_back, look_ahead)` frames: `sum N1*s1` and `sum N2*s2` over
/// DFSMN layers.
pub fn receptive_field(cfg: &NetworkConfig) -> (usize, usize) {
    cfg.dfsmn_layers().fold((0, 0), |(b, a), s| {
        let m = s.memory();
        (b + m.look_back(), a + m.look_ahead())
    })
}

pub fn flops_per_frame(cfg: &NetworkConfig) -> u64 {
    let mut d_in = cfg.input_dim as u64;
    let mut total = 0u64;
    for spec in &cfg.layers {
        total += match spec {
            LayerSpec::Dfsmn(s) => {
                let (proj, hidden) = (s.proj as u64, s.hidden as u64);
                let projection = 2 * d_in * proj + proj;
                let memory = 2 * s.memory().taps() as u64 * proj;
                let output = 2 * proj * hidden + hidden + hidden;
                projection + memory + output
            }
            LayerSpec::Fc(s) => {
                let hidden = s.hidden as u64;
                2 * d_in * hidden + hidden + hidden
            }
        };
        d_in = spec.hidden() as u64;
    }
    total
        + cfg
            .output_streams
            .iter()
            .map(|s| 2 * d_in * s.dim as u64 + 2 * s.dim as u64)
            .sum::<u64>()
}

/// Cost and context summary of one configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub name: String,
    pub notation: Option<String>,
    pub look_back_frames: usize,
    pub look_ahead_frames: usize,
    pub look_back_ms: usize,
    pub look_ahead_ms: usize,
    pub param_count: usize,
    pub size_mb: f64,
    pub flops_per_frame: u64,
    pub gflops_per_second: f64,
    /// Published values for the same configuration, when known.
    pub published: Option<PublishedCost>,
}

impl CostReport {
    pub fn for_config(name: &str, cfg: &NetworkConfig) -> Self {
        let (back, ahead) = receptive_field(cfg);
        let params = count_params(cfg);
        let flops = flops_per_frame(cfg);
        Self {
            name: name.to_string(),
            notation: NetworkConfig::preset_notation(name).map(|(l, o)| format!("{l} {o}")),
            look_back_frames: back,
            look_ahead_frames: ahead,
            look_back_ms: back * FRAME_SHIFT_MS,
            look_ahead_ms: ahead * FRAME_SHIFT_MS,
            param_count: params,
            size_mb: size_mb(params),
            flops_per_frame: flops,
            gflops_per_second: flops as f64 * FRAMES_PER_SECOND as f64 / 1e9,
            published: published(name),
        }
    }

    pub fn for_preset(name: &str) -> Result<Self> {
        let cfg = NetworkConfig::preset(name)?;
        Ok(Self::for_config(&name.to_ascii_uppercase(), &cfg))
    }
}

/// fp32 bytes in MiB: `count * 4 / 2^20`.
pub fn size_mb(param_count: usize) -> f64 {
    param_count as f64 * 4.0 / (1u64 << 20) as f64
}

/// Reports for the named presets, or all of A..I when `names` is empty.
pub fn table_report(names: &[&str]) -> Result<Vec<CostReport>> {
    let names: Vec<&str> = if names.is_empty() { PRESET_NAMES.to_vec() } else { names.to_vec() };
    names.iter().map(|n| CostReport::for_preset(n)).collect()
}

fn group_thousands(n: usize) -> String {
    let s = n.to_string();
    let mut out = String::with_capacity(s.len() + s.len() / 3);
    for (i, c) in s.chars().enumerate() {
        if i > 0 && (s.len() - i) % 3 == 0 {
            out.push(',');
        }
        out.push(c);
    }
    out
}

/// Aligned text table. Columns prefixed `pub_` hold published reference
/// values; the BLSTM row is appended when `include_blstm` is set.
pub fn render_text(reports: &[CostReport], include_blstm: bool) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<8} {:<16} {:>12} {:>9} {:>8} {:>9} {:>8} {:>5} {:>5} {:>12} {:>13}",
        "config", "layers/orders", "params", "size_mb", "pub_mb", "gflops/s", "pub_gf", "back", "ahead", "look_back_ms", "look_ahead_ms"
    );
    let fmt_pub = |v: Option<f64>, prec: usize| v.map_or("-".to_string(), |x| format!("{x:.prec$}"));
    for r in reports {
        let _ = writeln!(
            out,
            "{:<8} {:<16} {:>12} {:>9.2} {:>8} {:>9.2} {:>8} {:>5} {:>5} {:>12} {:>13}",
            r.name,
            r.notation.as_deref().unwrap_or("-"),
            group_thousands(r.param_count),
            r.size_mb,
            fmt_pub(r.published.map(|p| p.size_mb), 0),
            r.gflops_per_second,
            fmt_pub(r.published.map(|p| p.gflops_per_second), 2),
            r.look_back_frames,
            r.look_ahead_frames,
            r.look_back_ms,
            r.look_ahead_ms,
        );
    }
    if include_blstm {
        let p = published("BLSTM").expect("BLSTM row");
        let _ = writeln!(
            out,
            "{:<8} {:<16} {:>12} {:>9} {:>8.0} {:>9} {:>8.2} {:>5} {:>5} {:>12} {:>13}",
            "BLSTM", "(published)", "-", "-", p.size_mb, "-", p.gflops_per_second, "-", "-", "-", "-"
        );
    }
    out
}

/// One JSON object per line.
pub fn render_json_lines(reports: &[CostReport]) -> Result<String> {
    let mut out = String::new();
    for r in reports {
        out.push_str(&serde_json::to_string(r).map_err(|e| Error::InvalidArgument(e.to_string()))?);
        out.push('\n');
    }
    Ok(out)
}
