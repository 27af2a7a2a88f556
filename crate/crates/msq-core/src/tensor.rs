//! Dense row-major matrices, a deterministic counter RNG, and synthetic
//! classification data.
//!
//! Weight matrices use the GEMM view throughout: rows are output channels,
//! columns are flattened input positions. All arithmetic accumulates in f64
//! regardless of on-disk storage precision so results are platform-stable.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major real matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix2D {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix2D {
    /// Builds a matrix from row-major data. All values must be finite.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Shape(format!("empty matrix {rows}x{cols}")));
        }
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "data length {} != {rows}x{cols}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite matrix entry".into()));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "empty matrix");
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Builds a matrix by filling entries row by row from `f(row, col)`.
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                m.data[r * cols + c] = f(r, c);
            }
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn transpose(&self) -> Matrix2D {
        Matrix2D::from_fn(self.cols, self.rows, |r, c| self.get(c, r))
    }

    /// Elementwise `self + scale * other`.
    pub fn add_scaled(&self, other: &Matrix2D, scale: f64) -> Result<Matrix2D> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::Shape(format!(
                "add {}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + scale * b)
            .collect();
        Matrix2D::new(self.rows, self.cols, data)
    }

    /// Sum of squared entries.
    pub fn frob_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }
}

/// Standard real GEMM with deterministic left-to-right accumulation over the
/// inner dimension.
pub fn matmul(a: &Matrix2D, b: &Matrix2D) -> Result<Matrix2D> {
    if a.cols != b.rows {
        return Err(Error::Shape(format!(
            "matmul {}x{} by {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let mut out = Matrix2D::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        for j in 0..b.cols {
            let mut acc = 0.0f64;
            for k in 0..a.cols {
                acc += a.get(i, k) * b.get(k, j);
            }
            out.set(i, j, acc);
        }
    }
    Ok(out)
}

/// Population variance (divide by `cols`) of each row.
pub fn row_variance(w: &Matrix2D) -> Result<Vec<f64>> {
    if w.cols < 2 {
        return Err(Error::Degenerate(format!(
            "row variance needs >= 2 columns, got {}",
            w.cols
        )));
    }
    let n = w.cols as f64;
    let mut out = Vec::with_capacity(w.rows);
    for r in 0..w.rows {
        let row = w.row(r);
        let mean = row.iter().sum::<f64>() / n;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        out.push(var);
    }
    Ok(out)
}

/// Deterministic counter-based RNG (SplitMix64 core).
///
/// Identical seeds produce bit-identical streams on every platform; the
/// Gaussian variate is an Irwin-Hall sum so no libm transcendentals enter
/// the stream.
#[derive(Debug, Clone)]
pub struct Rng {
    state: u64,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in [0, 1) with 53 bits of mantissa.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [lo, hi).
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in [0, n).
    pub fn below(&mut self, n: usize) -> usize {
        (self.next_u64() % n as u64) as usize
    }

    /// Approximately standard normal: sum of 12 uniforms minus 6
    /// (Irwin-Hall). Mean 0, variance 1, support [-6, 6].
    pub fn normal(&mut self) -> f64 {
        let mut acc = 0.0;
        for _ in 0..12 {
            acc += self.next_f64();
        }
        acc - 6.0
    }
}

/// Gaussian-blob classification task description.
///
/// Class means sit on corners of an axis-aligned hypercube: class `k` has
/// coordinate `j` equal to `base + separation * bit_j(k)`, so the task needs
/// at least `ceil(log2(classes))` features to keep the means distinct. The
/// default geometry keeps samples almost entirely in the positive quadrant,
/// which suits unsigned activation quantization.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BlobSpec {
    pub classes: usize,
    pub features: usize,
    /// Mean offset shared by every coordinate.
    pub base: f64,
    /// Distance between the two mean values along each informative axis.
    pub separation: f64,
    /// Standard deviation of the per-coordinate noise.
    pub noise_std: f64,
}

impl BlobSpec {
    pub fn new(classes: usize, features: usize) -> Self {
        Self {
            classes,
            features,
            base: Self::default_base(),
            separation: Self::default_separation(),
            noise_std: Self::default_noise_std(),
        }
    }

    pub fn default_base() -> f64 {
        2.0
    }

    pub fn default_separation() -> f64 {
        3.0
    }

    pub fn default_noise_std() -> f64 {
        0.5
    }

    fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::Config("need at least 2 classes".into()));
        }
        if self.features == 0 {
            return Err(Error::Config("need at least 1 feature".into()));
        }
        let distinct = 1usize
            .checked_shl(self.features.min(63) as u32)
            .unwrap_or(usize::MAX);
        if distinct < self.classes {
            return Err(Error::Config(format!(
                "{} features cannot separate {} classes",
                self.features, self.classes
            )));
        }
        if self.noise_std <= 0.0
            || !self.noise_std.is_finite()
            || !self.separation.is_finite()
            || !self.base.is_finite()
        {
            return Err(Error::Config(
                "blob geometry must be finite, noise > 0".into(),
            ));
        }
        Ok(())
    }

    /// Mean vector of class `k`.
    pub fn mean(&self, k: usize) -> Vec<f64> {
        (0..self.features)
            .map(|j| {
                let bit = if j < 64 { (k >> j) & 1 } else { 0 };
                self.base + self.separation * bit as f64
            })
            .collect()
    }
}

/// Labeled sample set: `inputs` is samples x features.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Matrix2D,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Draws `n` samples from the blob task. Labels are striped (`i mod classes`)
/// so sequential mini-batches stay class-balanced; the draw is fully
/// determined by `rng`'s seed.
pub fn make_synthetic(spec: &BlobSpec, n: usize, rng: &mut Rng) -> Result<Dataset> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::Degenerate("cannot draw 0 samples".into()));
    }
    let means: Vec<Vec<f64>> = (0..spec.classes).map(|k| spec.mean(k)).collect();
    let mut labels = Vec::with_capacity(n);
    let mut data = Vec::with_capacity(n * spec.features);
    for i in 0..n {
        let k = i % spec.classes;
        labels.push(k);
        for &m in &means[k] {
            data.push(m + spec.noise_std * rng.normal());
        }
    }
    Ok(Dataset {
        inputs: Matrix2D::new(n, spec.features, data)?,
        labels,
        num_classes: spec.classes,
    })
}
