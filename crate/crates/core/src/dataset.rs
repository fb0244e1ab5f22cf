//! In-memory datasets and their on-disk layout.
//!
//! A dataset directory holds a `manifest.txt` with one `id<TAB>frames` line
//! per sequence and one feature file per sequence and stream, named
//! `<id>.<stream>.feat`. The network input stream is called `input`.
//!
//! Feature file layout, little-endian:
//!
//! | field       | type                          |
//! |-------------|-------------------------------|
//! | magic       | `b"DFEA"`                     |
//! | version     | `u32` (currently 1)           |
//! | frames `T`  | `u32`                         |
//! | dim `D`     | `u32`                         |
//! | name length | `u32`                         |
//! | name        | UTF-8                         |
//! | payload     | `T*D` `f32`, row-major        |

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model_io::Reader;
use crate::network::StreamMap;
use crate::tensor::{Matrix, Real};

pub const FEATURE_MAGIC: [u8; 4] = *b"DFEA";
pub const FEATURE_VERSION: u32 = 1;
pub const INPUT_STREAM: &str = "input";
pub const MANIFEST: &str = "manifest.txt";

/// One named `frames x dim` feature stream.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureFile {
    pub name: String,
    pub data: Matrix<f32>,
}

impl FeatureFile {
    pub fn new(name: impl Into<String>, data: Matrix<f32>) -> Self {
        Self { name: name.into(), data }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(20 + self.name.len() + 4 * self.data.len());
        out.extend_from_slice(&FEATURE_MAGIC);
        out.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.data.rows() as u32).to_le_bytes());
        out.extend_from_slice(&(self.data.cols() as u32).to_le_bytes());
        out.extend_from_slice(&(self.name.len() as u32).to_le_bytes());
        out.extend_from_slice(self.name.as_bytes());
        for &v in self.data.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes, "feature file");
        r.magic(FEATURE_MAGIC)?;
        let version = r.u32()?;
        if version != FEATURE_VERSION {
            return Err(Error::VersionMismatch {
                found: version,
                expected: FEATURE_VERSION,
            });
        }
        let frames = r.u32()? as usize;
        let dim = r.u32()? as usize;
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|e| Error::Malformed(format!("stream name is not UTF-8: {e}")))?
            .to_string();
        let payload = r.take(frames * dim * 4)?;
        if r.remaining() != 0 {
            return Err(Error::Malformed(format!("{} trailing bytes", r.remaining())));
        }
        let data = payload.chunks_exact(4).map(f32::read_le).collect();
        Ok(Self {
            name,
            data: Matrix::new(frames, dim, data)?,
        })
    }

    /// Offset of the payload within the encoded file.
    pub fn header_len(&self) -> usize {
        20 + self.name.len()
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.encode())?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::decode(&fs::read(path)?)
    }
}

/// Input features plus target streams for one utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequence<T> {
    pub id: String,
    pub input: Matrix<T>,
    pub targets: StreamMap<T>,
}

impl<T: Real> Sequence<T> {
    pub fn frames(&self) -> usize {
        self.input.rows()
    }

    pub fn cast<U: Real>(&self) -> Sequence<U> {
        Sequence {
            id: self.id.clone(),
            input: self.input.cast(),
            targets: self.targets.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset<T> {
    pub sequences: Vec<Sequence<T>>,
}

impl<T: Real> Dataset<T> {
    pub fn new(sequences: Vec<Sequence<T>>) -> Self {
        Self { sequences }
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn total_frames(&self) -> usize {
        self.sequences.iter().map(Sequence::frames).sum()
    }

    pub fn cast<U: Real>(&self) -> Dataset<U> {
        Dataset {
            sequences: self.sequences.iter().map(Sequence::cast).collect(),
        }
    }

    /// Target stream names with their dimensions, from the first sequence.
    pub fn stream_dims(&self) -> BTreeMap<String, usize> {
        self.sequences
            .first()
            .map(|s| s.targets.iter().map(|(k, v)| (k.clone(), v.cols())).collect())
            .unwrap_or_default()
    }
}

fn check_id(id: &str) -> Result<()> {
    if id.is_empty() || id.contains(['.', '/', '\t', '\n', '\\']) {
        return Err(Error::InvalidArgument(format!("`{id}` is not a valid sequence id")));
    }
    Ok(())
}

/// Write `dataset` under `dir` (created if needed). Values are stored as f32.
pub fn write_dataset<T: Real>(dir: impl AsRef<Path>, dataset: &Dataset<T>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut manifest = String::new();
    for seq in &dataset.sequences {
        check_id(&seq.id)?;
        FeatureFile::new(INPUT_STREAM, seq.input.cast()).write(dir.join(format!("{}.{INPUT_STREAM}.feat", seq.id)))?;
        for (name, m) in &seq.targets {
            if m.rows() != seq.frames() {
                return Err(Error::shape("write_dataset", m.shape(), (seq.frames(), m.cols())));
            }
            FeatureFile::new(name.clone(), m.cast()).write(dir.join(format!("{}.{name}.feat", seq.id)))?;
        }
        manifest.push_str(&format!("{}\t{}\n", seq.id, seq.frames()));
    }
    fs::write(dir.join(MANIFEST), manifest)?;
    Ok(())
}

pub fn read_manifest(dir: impl AsRef<Path>) -> Result<Vec<(String, usize)>> {
    let text = fs::read_to_string(dir.as_ref().join(MANIFEST))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, line)| {
            let (id, frames) = line
                .split_once('\t')
                .ok_or_else(|| Error::Malformed(format!("manifest line {}: expected `id<TAB>frames`", n + 1)))?;
            let frames = frames
                .trim()
                .parse()
                .map_err(|_| Error::Malformed(format!("manifest line {}: bad frame count `{frames}`", n + 1)))?;
            Ok((id.to_string(), frames))
        })
        .collect()
}

/// Read a dataset directory; every stream file found for a sequence id is
/// loaded as a target, except `input`.
pub fn read_dataset(dir: impl AsRef<Path>) -> Result<Dataset<f32>> {
    let dir = dir.as_ref();
    let manifest = read_manifest(dir)?;
    let mut files: Vec<String> = fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .filter_map(|e| e.file_name().into_string().ok())
        .filter(|n| n.ends_with(".feat"))
        .collect();
    files.sort();
    let mut sequences = Vec::with_capacity(manifest.len());
    for (id, frames) in manifest {
        let prefix = format!("{id}.");
        let mut input = None;
        let mut targets = StreamMap::new();
        for file in files.iter().filter(|f| f.starts_with(&prefix)) {
            let stream = &file[prefix.len()..file.len() - ".feat".len()];
            if stream.contains('.') {
                continue;
            }
            let ff = FeatureFile::read(dir.join(file))?;
            if ff.data.rows() != frames {
                return Err(Error::Malformed(format!(
                    "{file}: header says {} frames, manifest says {frames}",
                    ff.data.rows()
                )));
            }
            if stream == INPUT_STREAM {
                input = Some(ff.data);
            } else {
                targets.insert(stream.to_string(), ff.data);
            }
        }
        let input = input.ok_or_else(|| Error::MissingStream(format!("{id}.{INPUT_STREAM}")))?;
        sequences.push(Sequence { id, input, targets });
    }
    Ok(Dataset { sequences })
}
