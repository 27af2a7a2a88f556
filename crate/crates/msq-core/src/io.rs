//! On-disk formats.
//!
//! Weight and activation matrices share one container: the first line holds
//! the ASCII byte length of a JSON header `{rows, cols, dtype:"f32",
//! byte_order:"little"}`, the header follows verbatim, then the raw
//! little-endian f32 payload, row-major. Checkpoints are a directory with a
//! `checkpoint.json` manifest plus one weight file per layer.
//!
//! All writers go through a write-to-temp-then-rename path so a failed run
//! never leaves a partial output behind.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::partition::RowPartition;
use crate::quant::{CodeWord, QuantizedLayer, SchemePair};
use crate::tensor::Matrix2D;

#[derive(Debug, Serialize, Deserialize)]
struct MatrixHeader {
    rows: usize,
    cols: usize,
    dtype: String,
    byte_order: String,
}

/// Serializes a matrix into the length-prefixed header + raw f32 format.
pub fn write_matrix_to(mut w: impl Write, m: &Matrix2D) -> Result<()> {
    let header = MatrixHeader {
        rows: m.rows(),
        cols: m.cols(),
        dtype: "f32".into(),
        byte_order: "little".into(),
    };
    let text = serde_json::to_string(&header).expect("header serializes");
    writeln!(w, "{}", text.len())?;
    w.write_all(text.as_bytes())?;
    for &v in m.data() {
        if v.abs() > f32::MAX as f64 {
            return Err(Error::Numeric(format!("{v} does not fit in f32 storage")));
        }
        w.write_all(&(v as f32).to_le_bytes())?;
    }
    Ok(())
}

/// Parses the length-prefixed header + raw f32 format.
pub fn read_matrix_from(mut r: impl BufRead) -> Result<Matrix2D> {
    let mut first = String::new();
    r.read_line(&mut first)?;
    let len: usize = first
        .trim()
        .parse()
        .map_err(|_| Error::Format(format!("bad header length line {first:?}")))?;
    if len == 0 || len > 1 << 16 {
        return Err(Error::Format(format!("implausible header length {len}")));
    }
    let mut header_bytes = vec![0u8; len];
    r.read_exact(&mut header_bytes)
        .map_err(|_| Error::Format("truncated header".into()))?;
    let header: MatrixHeader = serde_json::from_slice(&header_bytes)
        .map_err(|e| Error::Format(format!("bad header json: {e}")))?;
    if header.dtype != "f32" {
        return Err(Error::Format(format!("unsupported dtype {}", header.dtype)));
    }
    if header.byte_order != "little" {
        return Err(Error::Format(format!(
            "unsupported byte order {}",
            header.byte_order
        )));
    }
    let count = header
        .rows
        .checked_mul(header.cols)
        .ok_or_else(|| Error::Format("header dimensions overflow".into()))?;
    let mut payload = vec![0u8; count * 4];
    r.read_exact(&mut payload)
        .map_err(|_| Error::Format("truncated payload".into()))?;
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(Error::Format("trailing bytes after payload".into()));
    }
    let data = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect();
    Matrix2D::new(header.rows, header.cols, data)
}

pub fn write_matrix(path: &Path, m: &Matrix2D) -> Result<()> {
    let mut buf = Vec::new();
    write_matrix_to(&mut buf, m)?;
    atomic_write(path, &buf)
}

pub fn read_matrix(path: &Path) -> Result<Matrix2D> {
    let file = fs::File::open(path)?;
    read_matrix_from(BufReader::new(file))
}

/// Writes `bytes` to `path` via a temp file in the same directory, renaming
/// only after the full payload is on disk.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = sibling_temp(path)?;
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        e.into()
    })
}

pub fn atomic_write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Format(format!("serialize: {e}")))?;
    atomic_write(path, format!("{text}\n").as_bytes())
}

fn sibling_temp(path: &Path) -> Result<PathBuf> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    if !dir.as_os_str().is_empty() && !dir.exists() {
        fs::create_dir_all(dir)?;
    }
    let name = path
        .file_name()
        .ok_or_else(|| Error::Config(format!("bad output path {}", path.display())))?;
    let mut tmp = name.to_os_string();
    tmp.push(format!(".tmp-{}", std::process::id()));
    Ok(dir.join(tmp))
}

/// Builds an output directory atomically: `fill` populates a staging
/// directory which replaces `dir` only after it completes.
pub fn stage_dir(dir: &Path, fill: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
    let staging = sibling_temp(dir)?;
    if staging.exists() {
        fs::remove_dir_all(&staging)?;
    }
    fs::create_dir_all(&staging)?;
    match fill(&staging) {
        Ok(()) => {
            if dir.exists() {
                fs::remove_dir_all(dir)?;
            }
            fs::rename(&staging, dir)?;
            Ok(())
        }
        Err(e) => {
            let _ = fs::remove_dir_all(&staging);
            Err(e)
        }
    }
}

/// Manifest entry for one quantized layer. Code words are stored packed
/// (see [`CodeWord::pack`]); the projected weight values live in the
/// side-car file named by `weights_file`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointLayer {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub alpha: f64,
    pub fixed_bits: u32,
    pub sp2_bits: (u32, u32),
    pub act_bits: u32,
    /// Frozen activation clip for this layer's input, when calibrated.
    pub act_alpha: Option<f64>,
    pub partition: RowPartition,
    pub codes: Vec<i32>,
    pub bias: Option<Vec<f64>>,
    pub weights_file: String,
}

impl CheckpointLayer {
    pub fn from_quantized(
        name: &str,
        layer: &QuantizedLayer,
        bias: Option<Vec<f64>>,
        act_alpha: Option<f64>,
    ) -> Self {
        let (fixed_bits, sp2_bits) = match (layer.pair.fixed, layer.pair.sp2) {
            (
                crate::quant::QuantScheme::FixedPoint { m },
                crate::quant::QuantScheme::Sp2 { m1, m2 },
            ) => (m, (m1, m2)),
            _ => unreachable!("scheme pair is always fixed + sp2"),
        };
        Self {
            name: name.to_string(),
            rows: layer.rows,
            cols: layer.cols,
            alpha: layer.alpha,
            fixed_bits,
            sp2_bits,
            act_bits: layer.act_bits,
            act_alpha,
            partition: layer.partition.clone(),
            codes: layer.packed_codes(),
            bias,
            weights_file: format!("{name}.bin"),
        }
    }

    pub fn to_quantized(&self) -> Result<QuantizedLayer> {
        let pair = SchemePair::new(self.fixed_bits, self.sp2_bits)?;
        if self.codes.len() != self.rows * self.cols {
            return Err(Error::Format("code count does not match dimensions".into()));
        }
        if self.partition.len() != self.rows {
            return Err(Error::Format("partition does not cover all rows".into()));
        }
        let codes = self
            .codes
            .iter()
            .enumerate()
            .map(|(i, &p)| {
                let scheme = pair.scheme_for(self.partition.assignment(i / self.cols));
                CodeWord::unpack(scheme, p)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(QuantizedLayer {
            rows: self.rows,
            cols: self.cols,
            alpha: self.alpha,
            act_bits: self.act_bits,
            pair,
            partition: self.partition.clone(),
            codes,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub layers: Vec<CheckpointLayer>,
    pub seed: Option<u64>,
}

pub const CHECKPOINT_MANIFEST: &str = "checkpoint.json";

/// Writes the manifest and weight files into an existing directory. Use
/// [`save_checkpoint`] (or wrap in [`stage_dir`]) for atomic replacement.
pub fn write_checkpoint_into(dir: &Path, ckpt: &Checkpoint, weights: &[Matrix2D]) -> Result<()> {
    if ckpt.layers.len() != weights.len() {
        return Err(Error::Shape("one weight matrix per manifest layer".into()));
    }
    for (entry, w) in ckpt.layers.iter().zip(weights) {
        let mut buf = Vec::new();
        write_matrix_to(&mut buf, w)?;
        fs::write(dir.join(&entry.weights_file), buf)?;
    }
    let text =
        serde_json::to_string_pretty(ckpt).map_err(|e| Error::Format(format!("serialize: {e}")))?;
    fs::write(dir.join(CHECKPOINT_MANIFEST), format!("{text}\n"))?;
    Ok(())
}

/// Writes a checkpoint directory: the manifest plus one weight file per
/// layer, all staged and renamed in one step.
pub fn save_checkpoint(dir: &Path, ckpt: &Checkpoint, weights: &[Matrix2D]) -> Result<()> {
    stage_dir(dir, |staging| write_checkpoint_into(staging, ckpt, weights))
}

pub fn load_checkpoint(dir: &Path) -> Result<(Checkpoint, Vec<Matrix2D>)> {
    let text = fs::read_to_string(dir.join(CHECKPOINT_MANIFEST))?;
    let ckpt: Checkpoint =
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("manifest: {e}")))?;
    let weights = ckpt
        .layers
        .iter()
        .map(|entry| read_matrix(&dir.join(&entry.weights_file)))
        .collect::<Result<Vec<_>>>()?;
    Ok((ckpt, weights))
}
