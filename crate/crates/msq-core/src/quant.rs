//! Weight and activation quantizers.
//!
//! Three weight schemes share one interface: uniform fixed-point, power-of-2,
//! and sum-of-power-of-2 (SP2). A scheme plus a positive scale `alpha` yields
//! a [`LevelSet`]: the finite, sign-symmetric list of representable values in
//! `[-alpha, +alpha]`. Projection is nearest-level in value space with ties
//! rounded toward the smaller magnitude; this is independent of any squashing
//! transform and is idempotent by construction.
//!
//! Level magnitudes:
//! - fixed-point, width `m`:  `k / (2^(m-1) - 1)` for `k = 0 .. 2^(m-1) - 1`
//! - power-of-2, width `m`:   `0` and `2^-e` for `e = 0 .. 2^(m-1) - 2`
//! - SP2 with `m1 + m2 + 1 = m` bits: `q1 + q2` where
//!   `q1 in {0} ∪ {2^-e : 1 <= e <= 2^m1 - 1}` and likewise for `q2`/`m2`.
//!
//! SP2 sums collide (`0 + 1/2 == 1/2 + 0`), so the distinct-level count can
//! fall short of the nominal `2^m - 1`; duplicates are merged and each level
//! keeps one canonical code word.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::partition::{RowPartition, RowScheme};
use crate::tensor::Matrix2D;

/// Weight quantization scheme selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum QuantScheme {
    FixedPoint { m: u32 },
    PowerOfTwo { m: u32 },
    Sp2 { m1: u32, m2: u32 },
}

impl QuantScheme {
    pub fn validate(&self) -> Result<()> {
        match *self {
            QuantScheme::FixedPoint { m } | QuantScheme::PowerOfTwo { m } => {
                if !(2..=8).contains(&m) {
                    return Err(Error::Scheme(format!("bit width m={m} outside 2..=8")));
                }
            }
            QuantScheme::Sp2 { m1, m2 } => {
                if m2 < 1 || m1 < m2 {
                    return Err(Error::Scheme(format!(
                        "SP2 needs m1 >= m2 >= 1, got ({m1},{m2})"
                    )));
                }
                // keeps the common-denominator exponent 2^m1 - 1 within i64 shifts
                if m1 > 5 {
                    return Err(Error::Scheme(format!("SP2 m1={m1} exceeds supported 5")));
                }
            }
        }
        Ok(())
    }

    /// Total bit width including the sign bit.
    pub fn total_bits(&self) -> u32 {
        match *self {
            QuantScheme::FixedPoint { m } | QuantScheme::PowerOfTwo { m } => m,
            QuantScheme::Sp2 { m1, m2 } => m1 + m2 + 1,
        }
    }

    /// Common denominator exponent for SP2/P2 integer arithmetic: level
    /// magnitudes are integer numerators over `2^denom_exp`.
    pub fn denom_exp(&self) -> Option<u32> {
        match *self {
            QuantScheme::Sp2 { m1, .. } => Some((1u32 << m1) - 1),
            QuantScheme::PowerOfTwo { m } => Some((1u32 << (m - 1)) - 2),
            QuantScheme::FixedPoint { .. } => None,
        }
    }

    /// Fixed-point magnitude denominator `2^(m-1) - 1`.
    pub fn fixed_denom(&self) -> Option<u32> {
        match *self {
            QuantScheme::FixedPoint { m } => Some((1u32 << (m - 1)) - 1),
            _ => None,
        }
    }
}

/// Sign bit of a code word.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sign {
    Pos,
    Neg,
}

impl Sign {
    pub fn of(v: f64) -> Sign {
        if v < 0.0 {
            Sign::Neg
        } else {
            Sign::Pos
        }
    }

    pub fn factor(&self) -> i64 {
        match self {
            Sign::Pos => 1,
            Sign::Neg => -1,
        }
    }
}

/// Integer encoding of one quantized weight.
///
/// SP2 payloads hold the two shift exponents of the level `2^-e1 + 2^-e2`
/// (`None` marks an explicitly-zero component). Canonical form: a pure power
/// sits in `e1` with `e2 = None`; two live components are sorted `e1 <= e2`;
/// the zero level is all-`None` with positive sign.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CodeWord {
    Fixed {
        sign: Sign,
        magnitude: u32,
    },
    Pow2 {
        sign: Sign,
        exponent: Option<u32>,
    },
    Sp2 {
        sign: Sign,
        e1: Option<u32>,
        e2: Option<u32>,
    },
}

impl CodeWord {
    pub fn sign(&self) -> Sign {
        match *self {
            CodeWord::Fixed { sign, .. }
            | CodeWord::Pow2 { sign, .. }
            | CodeWord::Sp2 { sign, .. } => sign,
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(
            *self,
            CodeWord::Fixed { magnitude: 0, .. }
                | CodeWord::Pow2 { exponent: None, .. }
                | CodeWord::Sp2 {
                    e1: None,
                    e2: None,
                    ..
                }
        )
    }

    /// Packs the code word into one signed integer for JSON checkpoints.
    ///
    /// Fixed: `sign * magnitude`. P2: `sign * (exponent + 1)`, zero -> 0.
    /// SP2: `sign * ((a << 8) | b)` with `a = e1 + 1` (0 when absent) and
    /// `b = e2 + 1` likewise; the zero level packs to 0.
    pub fn pack(&self) -> i32 {
        match *self {
            CodeWord::Fixed { sign, magnitude } => sign.factor() as i32 * magnitude as i32,
            CodeWord::Pow2 { sign, exponent } => {
                sign.factor() as i32 * exponent.map_or(0, |e| e as i32 + 1)
            }
            CodeWord::Sp2 { sign, e1, e2 } => {
                let a = e1.map_or(0, |e| e + 1) as i32;
                let b = e2.map_or(0, |e| e + 1) as i32;
                sign.factor() as i32 * ((a << 8) | b)
            }
        }
    }

    /// Inverse of [`CodeWord::pack`] for a given scheme.
    pub fn unpack(scheme: QuantScheme, packed: i32) -> Result<CodeWord> {
        scheme.validate()?;
        let sign = if packed < 0 { Sign::Neg } else { Sign::Pos };
        let mag = packed.unsigned_abs();
        let word = match scheme {
            QuantScheme::FixedPoint { m } => {
                if mag >= 1 << (m - 1) {
                    return Err(Error::Encoding(format!(
                        "fixed magnitude {mag} out of range"
                    )));
                }
                CodeWord::Fixed {
                    sign,
                    magnitude: mag,
                }
            }
            QuantScheme::PowerOfTwo { m } => {
                let exponent = if mag == 0 {
                    None
                } else {
                    let e = mag - 1;
                    if e > (1 << (m - 1)) - 2 {
                        return Err(Error::Encoding(format!("p2 exponent {e} out of range")));
                    }
                    Some(e)
                };
                CodeWord::Pow2 { sign, exponent }
            }
            QuantScheme::Sp2 { m1, .. } => {
                let unfield = |f: u32| -> Option<u32> { (f > 0).then(|| f - 1) };
                let e1 = unfield(mag >> 8);
                let e2 = unfield(mag & 0xff);
                let max_e = (1 << m1) - 1;
                for e in [e1, e2].into_iter().flatten() {
                    if e == 0 || e > max_e {
                        return Err(Error::Encoding(format!("sp2 exponent {e} out of range")));
                    }
                }
                CodeWord::Sp2 { sign, e1, e2 }
            }
        };
        Ok(word)
    }
}

/// Unsigned magnitude of a code word, in the scheme's exact arithmetic.
///
/// This single path is used both when building level sets and when decoding,
/// so `decode(encode(level))` reproduces the stored level bit for bit.
fn code_magnitude(scheme: QuantScheme, cw: &CodeWord) -> Result<f64> {
    match (scheme, cw) {
        (QuantScheme::FixedPoint { m }, CodeWord::Fixed { magnitude, .. }) => {
            let denom = (1u32 << (m - 1)) - 1;
            if *magnitude > denom {
                return Err(Error::Encoding(format!(
                    "fixed magnitude {magnitude} > {denom}"
                )));
            }
            Ok(*magnitude as f64 / denom as f64)
        }
        (QuantScheme::PowerOfTwo { m }, CodeWord::Pow2 { exponent, .. }) => match exponent {
            None => Ok(0.0),
            Some(e) => {
                if *e > (1 << (m - 1)) - 2 {
                    return Err(Error::Encoding(format!("p2 exponent {e} out of range")));
                }
                Ok(2.0f64.powi(-(*e as i32)))
            }
        },
        (QuantScheme::Sp2 { m1, .. }, CodeWord::Sp2 { e1, e2, .. }) => {
            let max_e = (1u32 << m1) - 1;
            let mut acc = 0.0;
            for e in [e1, e2].into_iter().flatten() {
                if *e == 0 || *e > max_e {
                    return Err(Error::Encoding(format!("sp2 exponent {e} out of range")));
                }
                acc += 2.0f64.powi(-(*e as i32));
            }
            Ok(acc)
        }
        _ => Err(Error::Encoding("code word does not match scheme".into())),
    }
}

/// A scheme instantiated at a scale: the sorted list of representable values
/// with one canonical code word per level.
#[derive(Debug, Clone)]
pub struct LevelSet {
    scheme: QuantScheme,
    alpha: f64,
    levels: Vec<f64>,
    codes: Vec<CodeWord>,
}

/// Enumerates the level set of `scheme` at scale `alpha`.
pub fn build_levels(scheme: QuantScheme, alpha: f64) -> Result<LevelSet> {
    scheme.validate()?;
    if alpha <= 0.0 || !alpha.is_finite() {
        return Err(Error::Scheme(format!(
            "alpha must be positive and finite, got {alpha}"
        )));
    }

    // positive magnitudes with canonical payloads, zero included once
    let mut mags: Vec<CodeWord> = Vec::new();
    match scheme {
        QuantScheme::FixedPoint { m } => {
            for k in 0..=((1u32 << (m - 1)) - 1) {
                mags.push(CodeWord::Fixed {
                    sign: Sign::Pos,
                    magnitude: k,
                });
            }
        }
        QuantScheme::PowerOfTwo { m } => {
            mags.push(CodeWord::Pow2 {
                sign: Sign::Pos,
                exponent: None,
            });
            for e in 0..=((1u32 << (m - 1)) - 2) {
                mags.push(CodeWord::Pow2 {
                    sign: Sign::Pos,
                    exponent: Some(e),
                });
            }
        }
        QuantScheme::Sp2 { m1, m2 } => {
            let d = (1u32 << m1) - 1;
            let exps = |bits: u32| -> Vec<Option<u32>> {
                std::iter::once(None)
                    .chain((1..=((1u32 << bits) - 1)).map(Some))
                    .collect()
            };
            // numerator over 2^d -> best canonical payload seen so far
            let mut by_num: std::collections::BTreeMap<u64, CodeWord> =
                std::collections::BTreeMap::new();
            for &q1 in &exps(m1) {
                for &q2 in &exps(m2) {
                    let num: u64 = [q1, q2]
                        .into_iter()
                        .flatten()
                        .map(|e| 1u64 << (d - e))
                        .sum();
                    let canonical = canonical_sp2(q1, q2);
                    by_num
                        .entry(num)
                        .and_modify(|cur| {
                            if sp2_rank(&canonical) < sp2_rank(cur) {
                                *cur = canonical;
                            }
                        })
                        .or_insert(canonical);
                }
            }
            mags.extend(by_num.into_values());
        }
    }

    let mut pairs: Vec<(f64, CodeWord)> = Vec::with_capacity(2 * mags.len());
    for cw in mags {
        let mag = code_magnitude(scheme, &cw)?;
        if mag == 0.0 {
            pairs.push((0.0, cw));
        } else {
            pairs.push((alpha * mag, cw));
            pairs.push((-(alpha * mag), negate(cw)));
        }
    }
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let (levels, codes) = pairs.into_iter().unzip();
    Ok(LevelSet {
        scheme,
        alpha,
        levels,
        codes,
    })
}

fn negate(cw: CodeWord) -> CodeWord {
    match cw {
        CodeWord::Fixed { magnitude, .. } => CodeWord::Fixed {
            sign: Sign::Neg,
            magnitude,
        },
        CodeWord::Pow2 { exponent, .. } => CodeWord::Pow2 {
            sign: Sign::Neg,
            exponent,
        },
        CodeWord::Sp2 { e1, e2, .. } => CodeWord::Sp2 {
            sign: Sign::Neg,
            e1,
            e2,
        },
    }
}

/// Normalizes an SP2 exponent pair: lone component in `e1`, live pairs
/// sorted ascending (larger power-of-2 component first).
fn canonical_sp2(a: Option<u32>, b: Option<u32>) -> CodeWord {
    let (e1, e2) = match (a, b) {
        (None, None) => (None, None),
        (Some(e), None) | (None, Some(e)) => (Some(e), None),
        (Some(x), Some(y)) => (Some(x.min(y)), Some(x.max(y))),
    };
    CodeWord::Sp2 {
        sign: Sign::Pos,
        e1,
        e2,
    }
}

/// Preference order when duplicate sums collide: zero, then single
/// component, then a two-component pair.
fn sp2_rank(cw: &CodeWord) -> u32 {
    match cw {
        CodeWord::Sp2 {
            e1: None, e2: None, ..
        } => 0,
        CodeWord::Sp2 { e2: None, .. } => 1,
        _ => 2,
    }
}

impl LevelSet {
    pub fn scheme(&self) -> QuantScheme {
        self.scheme
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Sorted, distinct, sign-symmetric level values.
    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    /// Nearest level to `clip(w, -alpha, +alpha)`; exact ties round toward
    /// the smaller magnitude.
    pub fn project(&self, w: f64) -> f64 {
        self.levels[self.project_index(w)]
    }

    fn project_index(&self, w: f64) -> usize {
        assert!(w.is_finite(), "cannot project non-finite value");
        let ls = &self.levels;
        match ls.binary_search_by(|l| l.partial_cmp(&w).unwrap()) {
            Ok(i) => i,
            Err(0) => 0,
            Err(i) if i == ls.len() => ls.len() - 1,
            Err(i) => {
                let (lo, hi) = (ls[i - 1], ls[i]);
                let (dl, dh) = (w - lo, hi - w);
                if dl < dh {
                    i - 1
                } else if dh < dl {
                    i
                } else if lo.abs() <= hi.abs() {
                    i - 1
                } else {
                    i
                }
            }
        }
    }

    /// Canonical code word for a value that is exactly a level of this set.
    pub fn encode(&self, level: f64) -> Result<CodeWord> {
        match self
            .levels
            .binary_search_by(|l| l.partial_cmp(&level).unwrap())
        {
            Ok(i) => Ok(self.codes[i]),
            Err(_) => Err(Error::Encoding(format!(
                "{level} is not a level of this set"
            ))),
        }
    }

    /// Value of a code word under this set's scheme and scale. Exact inverse
    /// of [`LevelSet::encode`] because both run the same arithmetic path.
    pub fn decode(&self, cw: &CodeWord) -> Result<f64> {
        let mag = code_magnitude(self.scheme, cw)?;
        let v = self.alpha * mag;
        Ok(match cw.sign() {
            Sign::Pos => v,
            Sign::Neg => -v,
        })
    }

    /// JSON-ready view: scheme, scale, level values, and packed code words.
    pub fn manifest(&self) -> LevelSetManifest {
        LevelSetManifest {
            scheme: self.scheme,
            alpha: self.alpha,
            levels: self.levels.clone(),
            codes: self.codes.iter().map(CodeWord::pack).collect(),
        }
    }

    /// The squashing-transform quantizer given alongside the uniform scheme
    /// in the source formulation: quantize in `tanh`-warped `[0,1]` space and
    /// map back. Kept for comparison against nearest-level projection; only
    /// defined for fixed-point.
    pub fn project_tanh_transform(&self, w: f64) -> Result<f64> {
        let m = match self.scheme {
            QuantScheme::FixedPoint { m } => m,
            _ => {
                return Err(Error::Scheme(
                    "tanh-transform mode is defined for fixed-point only".into(),
                ))
            }
        };
        let steps = ((1u64 << m) - 1) as f64;
        let clipped = (w / self.alpha).clamp(-1.0, 1.0);
        let h = clipped.tanh() / 2.0 + 0.5;
        let y = 2.0 * ((steps * h).round() / steps) - 1.0;
        // atanh, clamped so the saturated end points stay finite
        let back = 0.5 * ((1.0 + y) / (1.0 - y)).ln();
        Ok(self.alpha * back.clamp(-1.0, 1.0))
    }
}

/// Serializable snapshot of a level set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelSetManifest {
    pub scheme: QuantScheme,
    pub alpha: f64,
    pub levels: Vec<f64>,
    pub codes: Vec<i32>,
}

/// The two schemes active inside one mixed layer. Both share the layer's
/// scale so the GEMM cores can share one output dequantization stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemePair {
    pub fixed: QuantScheme,
    pub sp2: QuantScheme,
}

impl SchemePair {
    pub fn new(fixed_bits: u32, sp2_bits: (u32, u32)) -> Result<Self> {
        let pair = SchemePair {
            fixed: QuantScheme::FixedPoint { m: fixed_bits },
            sp2: QuantScheme::Sp2 {
                m1: sp2_bits.0,
                m2: sp2_bits.1,
            },
        };
        pair.fixed.validate()?;
        pair.sp2.validate()?;
        Ok(pair)
    }

    pub fn scheme_for(&self, tag: RowScheme) -> QuantScheme {
        match tag {
            RowScheme::Fixed => self.fixed,
            RowScheme::Sp2 => self.sp2,
        }
    }
}

/// One quantized layer: per-weight code words, the shared scale, the row
/// partition that chose each row's scheme, and the activation width the
/// kernel will pair it with.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QuantizedLayer {
    pub rows: usize,
    pub cols: usize,
    pub alpha: f64,
    pub act_bits: u32,
    pub pair: SchemePair,
    pub partition: RowPartition,
    /// Row-major, one code word per weight.
    pub codes: Vec<CodeWord>,
}

impl QuantizedLayer {
    pub fn code(&self, r: usize, c: usize) -> &CodeWord {
        &self.codes[r * self.cols + c]
    }

    /// Packed-integer view of the code words for JSON checkpoints.
    pub fn packed_codes(&self) -> Vec<i32> {
        self.codes.iter().map(CodeWord::pack).collect()
    }
}

/// Projects every row of `w` with its partition-assigned scheme at scale
/// `alpha`, returning the quantized values and the encoded layer.
pub fn project_matrix(
    w: &Matrix2D,
    partition: &RowPartition,
    pair: &SchemePair,
    alpha: f64,
    act_bits: u32,
) -> Result<(Matrix2D, QuantizedLayer)> {
    if partition.len() != w.rows() {
        return Err(Error::Shape(format!(
            "partition covers {} rows, matrix has {}",
            partition.len(),
            w.rows()
        )));
    }
    let fixed_ls = build_levels(pair.fixed, alpha)?;
    let sp2_ls = build_levels(pair.sp2, alpha)?;
    let mut quant = Matrix2D::zeros(w.rows(), w.cols());
    let mut codes = Vec::with_capacity(w.rows() * w.cols());
    for r in 0..w.rows() {
        let ls = match partition.assignment(r) {
            RowScheme::Fixed => &fixed_ls,
            RowScheme::Sp2 => &sp2_ls,
        };
        for c in 0..w.cols() {
            let idx = ls.project_index(w.get(r, c));
            quant.set(r, c, ls.levels[idx]);
            codes.push(ls.codes[idx]);
        }
    }
    let layer = QuantizedLayer {
        rows: w.rows(),
        cols: w.cols(),
        alpha,
        act_bits,
        pair: *pair,
        partition: partition.clone(),
        codes,
    };
    Ok((quant, layer))
}

/// Unsigned fixed-point activation quantizer: clip to `[0, alpha_a]`, scale
/// to `[0, 2^n - 1]`, round half away from zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActQuant {
    n: u32,
    alpha_a: f64,
}

impl ActQuant {
    pub fn new(n: u32, alpha_a: f64) -> Result<Self> {
        if !(2..=8).contains(&n) {
            return Err(Error::Scheme(format!(
                "activation width n={n} outside 2..=8"
            )));
        }
        if alpha_a <= 0.0 || !alpha_a.is_finite() {
            return Err(Error::Scheme(format!(
                "activation clip {alpha_a} must be positive"
            )));
        }
        Ok(Self { n, alpha_a })
    }

    pub fn bits(&self) -> u32 {
        self.n
    }

    pub fn alpha(&self) -> f64 {
        self.alpha_a
    }

    pub fn max_code(&self) -> u32 {
        (1u32 << self.n) - 1
    }

    /// Dequantization scale `alpha_a / (2^n - 1)`.
    pub fn scale(&self) -> f64 {
        self.alpha_a / self.max_code() as f64
    }

    pub fn quantize_value(&self, a: f64) -> u32 {
        let clipped = a.clamp(0.0, self.alpha_a);
        (clipped / self.alpha_a * self.max_code() as f64).round() as u32
    }

    /// Quantize-then-dequantize, the value the forward pass actually sees.
    pub fn fake_quantize(&self, a: f64) -> f64 {
        self.quantize_value(a) as f64 * self.scale()
    }

    /// True when the straight-through gradient passes (not clipped).
    pub fn in_pass_range(&self, a: f64) -> bool {
        (0.0..=self.alpha_a).contains(&a)
    }
}

/// Integer activation codes plus their dequantization scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizedActs {
    pub rows: usize,
    pub cols: usize,
    pub codes: Vec<u32>,
    pub scale: f64,
    pub bits: u32,
}

impl QuantizedActs {
    pub fn code(&self, r: usize, c: usize) -> u32 {
        self.codes[r * self.cols + c]
    }

    /// Real-valued view `codes * scale`.
    pub fn dequantize(&self) -> Matrix2D {
        Matrix2D::from_fn(self.rows, self.cols, |r, c| {
            self.code(r, c) as f64 * self.scale
        })
    }
}

/// Quantizes an activation matrix to unsigned integer codes.
pub fn quantize_activations(a: &Matrix2D, aq: &ActQuant) -> Result<QuantizedActs> {
    let codes = a.data().iter().map(|&v| aq.quantize_value(v)).collect();
    Ok(QuantizedActs {
        rows: a.rows(),
        cols: a.cols(),
        codes,
        scale: aq.scale(),
        bits: aq.bits(),
    })
}

const ALPHA_GRID: usize = 64;
const ALPHA_LO: f64 = 0.3;

/// Scale search: minimizes mean squared projection error over a fixed grid
/// of 64 candidates in `[0.3 * max|w|, max|w|]`; ties pick the smaller
/// alpha. An all-zero matrix gets alpha = 1 by convention.
pub fn choose_alpha(w: &Matrix2D, scheme: QuantScheme) -> Result<f64> {
    scheme.validate()?;
    grid_search_alpha(w, |alpha| {
        let ls = build_levels(scheme, alpha)?;
        Ok(w.data()
            .iter()
            .map(|&v| {
                let e = ls.project(v) - v;
                e * e
            })
            .sum::<f64>())
    })
}

/// Like [`choose_alpha`] but with per-row schemes: one shared alpha for a
/// mixed layer, scored against each row's own level set.
pub fn choose_alpha_mixed(
    w: &Matrix2D,
    partition: &RowPartition,
    pair: &SchemePair,
) -> Result<f64> {
    if partition.len() != w.rows() {
        return Err(Error::Shape("partition does not cover matrix rows".into()));
    }
    grid_search_alpha(w, |alpha| {
        let fixed_ls = build_levels(pair.fixed, alpha)?;
        let sp2_ls = build_levels(pair.sp2, alpha)?;
        let mut sse = 0.0;
        for r in 0..w.rows() {
            let ls = match partition.assignment(r) {
                RowScheme::Fixed => &fixed_ls,
                RowScheme::Sp2 => &sp2_ls,
            };
            for &v in w.row(r) {
                let e = ls.project(v) - v;
                sse += e * e;
            }
        }
        Ok(sse)
    })
}

fn grid_search_alpha(w: &Matrix2D, mut sse_at: impl FnMut(f64) -> Result<f64>) -> Result<f64> {
    let max_abs = w.max_abs();
    if max_abs == 0.0 {
        return Ok(1.0);
    }
    let mut best = (f64::INFINITY, 0.0);
    for i in 0..ALPHA_GRID {
        let t = i as f64 / (ALPHA_GRID - 1) as f64;
        // lerp that lands on max_abs exactly at t = 1
        let alpha = max_abs * ((1.0 - t) * ALPHA_LO + t);
        let sse = sse_at(alpha)?;
        if sse < best.0 {
            best = (sse, alpha);
        }
    }
    Ok(best.1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::partition::partition_rows;
    use crate::tensor::Rng;

    fn fixed4() -> LevelSet {
        build_levels(QuantScheme::FixedPoint { m: 4 }, 1.0).unwrap()
    }

    fn p2_4() -> LevelSet {
        build_levels(QuantScheme::PowerOfTwo { m: 4 }, 1.0).unwrap()
    }

    fn sp2_21() -> LevelSet {
        build_levels(QuantScheme::Sp2 { m1: 2, m2: 1 }, 1.0).unwrap()
    }

    #[test]
    fn fixed_point_4bit_levels_match_enumeration() {
        let ls = fixed4();
        let want: Vec<f64> = (-7..=7).map(|k| k as f64 / 7.0).collect();
        assert_eq!(ls.levels(), &want[..]);
        assert_eq!(ls.len(), 15);
    }

    #[test]
    fn power_of_two_4bit_levels_match_enumeration() {
        let ls = p2_4();
        let pos = [
            1.0 / 64.0,
            1.0 / 32.0,
            1.0 / 16.0,
            1.0 / 8.0,
            1.0 / 4.0,
            1.0 / 2.0,
            1.0,
        ];
        let mut want: Vec<f64> = pos.iter().map(|v| -v).collect();
        want.push(0.0);
        want.extend(pos);
        want.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(ls.levels(), &want[..]);
        assert_eq!(ls.len(), 15);
    }

    #[test]
    fn sp2_21_has_13_distinct_levels_after_merging() {
        // all (q1, q2) sums for m1=2, m2=1: the duplicate 1/2 collapses
        let ls = sp2_21();
        let pos = [0.125, 0.25, 0.5, 0.625, 0.75, 1.0];
        let mut want: Vec<f64> = pos.iter().map(|v| -v).collect();
        want.push(0.0);
        want.extend(pos);
        want.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(ls.levels(), &want[..]);
        assert_eq!(ls.len(), 13);
    }

    #[test]
    fn level_sets_are_symmetric_and_contain_zero() {
        let mut schemes = vec![];
        for m in 2..=8 {
            schemes.push(QuantScheme::FixedPoint { m });
            schemes.push(QuantScheme::PowerOfTwo { m });
        }
        for (m1, m2) in [(1, 1), (2, 1), (2, 2), (3, 2), (3, 3), (4, 3), (5, 2)] {
            schemes.push(QuantScheme::Sp2 { m1, m2 });
        }
        for scheme in schemes {
            let ls = build_levels(scheme, 0.75).unwrap();
            assert!(ls.levels().contains(&0.0), "{scheme:?} missing zero");
            for &l in ls.levels() {
                assert!(
                    ls.levels().iter().any(|&x| x == -l),
                    "{scheme:?} not symmetric at {l}"
                );
            }
            let nominal = (1usize << scheme.total_bits()) - 1;
            assert!(
                ls.len() <= nominal,
                "{scheme:?} has {} > {nominal} levels",
                ls.len()
            );
            if !matches!(scheme, QuantScheme::Sp2 { .. }) {
                assert_eq!(ls.len(), nominal, "{scheme:?} level count");
            }
        }
    }

    #[test]
    fn projection_examples() {
        assert_eq!(fixed4().project(0.3), 2.0 / 7.0);
        assert_eq!(fixed4().project(-1.5), -1.0);
        assert_eq!(sp2_21().project(0.6), 0.625);
        assert_eq!(p2_4().project(0.3), 0.25);
    }

    #[test]
    fn projection_ties_round_toward_smaller_magnitude() {
        let ls = sp2_21();
        // 3/8 is exactly between 1/4 and 1/2; 1/16 exactly between 0 and 1/8
        assert_eq!(ls.project(0.375), 0.25);
        assert_eq!(ls.project(-0.375), -0.25);
        assert_eq!(ls.project(0.0625), 0.0);
        assert_eq!(ls.project(-0.0625), 0.0);
    }

    #[test]
    fn projection_is_nearest_level_brute_force() {
        let mut rng = Rng::new(17);
        for ls in [fixed4(), p2_4(), sp2_21()] {
            for _ in 0..10_000 {
                let w = rng.uniform(-1.5, 1.5);
                let p = ls.project(w);
                for &l in ls.levels() {
                    assert!(
                        (p - w).abs() <= (l - w).abs(),
                        "{w} projected to {p} but {l} is closer"
                    );
                }
            }
        }
    }

    #[test]
    fn projection_is_idempotent() {
        let mut rng = Rng::new(23);
        for ls in [fixed4(), p2_4(), sp2_21()] {
            for _ in 0..1000 {
                let p = ls.project(rng.uniform(-2.0, 2.0));
                assert_eq!(ls.project(p), p);
            }
        }
    }

    #[test]
    fn projection_scale_equivariance() {
        let mut rng = Rng::new(29);
        let ls1 = build_levels(QuantScheme::Sp2 { m1: 2, m2: 1 }, 0.8).unwrap();
        let ls2 = build_levels(QuantScheme::Sp2 { m1: 2, m2: 1 }, 0.8 * 4.0).unwrap();
        for _ in 0..1000 {
            let w = rng.uniform(-1.0, 1.0);
            assert!((ls2.project(4.0 * w) - 4.0 * ls1.project(w)).abs() < 1e-12);
        }
    }

    #[test]
    fn encode_examples() {
        let ls = sp2_21();
        assert_eq!(
            ls.encode(0.625).unwrap(),
            CodeWord::Sp2 {
                sign: Sign::Pos,
                e1: Some(1),
                e2: Some(3)
            }
        );
        assert_eq!(
            ls.encode(0.0).unwrap(),
            CodeWord::Sp2 {
                sign: Sign::Pos,
                e1: None,
                e2: None
            }
        );
        assert_eq!(
            ls.encode(1.0).unwrap(),
            CodeWord::Sp2 {
                sign: Sign::Pos,
                e1: Some(1),
                e2: Some(1)
            }
        );
        // the duplicate-sum level 1/2 canonicalizes to a lone component
        assert_eq!(
            ls.encode(0.5).unwrap(),
            CodeWord::Sp2 {
                sign: Sign::Pos,
                e1: Some(1),
                e2: None
            }
        );
        assert!(ls.encode(0.3).is_err());
    }

    #[test]
    fn encode_decode_round_trip_is_exact_for_every_level() {
        let schemes = [
            QuantScheme::FixedPoint { m: 4 },
            QuantScheme::FixedPoint { m: 8 },
            QuantScheme::PowerOfTwo { m: 4 },
            QuantScheme::PowerOfTwo { m: 8 },
            QuantScheme::Sp2 { m1: 2, m2: 1 },
            QuantScheme::Sp2 { m1: 3, m2: 2 },
            QuantScheme::Sp2 { m1: 5, m2: 4 },
        ];
        for scheme in schemes {
            for alpha in [1.0, 0.37, 2.5] {
                let ls = build_levels(scheme, alpha).unwrap();
                for &l in ls.levels() {
                    let cw = ls.encode(l).unwrap();
                    assert_eq!(ls.decode(&cw).unwrap(), l, "{scheme:?} alpha={alpha}");
                }
            }
        }
    }

    #[test]
    fn packed_codes_round_trip() {
        for scheme in [
            QuantScheme::FixedPoint { m: 4 },
            QuantScheme::PowerOfTwo { m: 4 },
            QuantScheme::Sp2 { m1: 2, m2: 1 },
        ] {
            let ls = build_levels(scheme, 1.0).unwrap();
            for &l in ls.levels() {
                let cw = ls.encode(l).unwrap();
                let back = CodeWord::unpack(scheme, cw.pack()).unwrap();
                assert_eq!(ls.decode(&back).unwrap(), l);
            }
        }
    }

    #[test]
    fn project_matrix_examples() {
        let pair = SchemePair::new(4, (2, 1)).unwrap();
        let w = Matrix2D::new(1, 4, vec![0.3, -0.3, 0.9, -1.5]).unwrap();
        let part = partition_rows(&[0.5], 0.0).unwrap(); // all fixed
        let (q, layer) = project_matrix(&w, &part, &pair, 1.0, 4).unwrap();
        assert_eq!(q.data(), &[2.0 / 7.0, -2.0 / 7.0, 6.0 / 7.0, -1.0]);
        assert_eq!(layer.codes.len(), 4);

        // idempotence
        let (q2, _) = project_matrix(&q, &part, &pair, 1.0, 4).unwrap();
        assert_eq!(q, q2);

        // all-zero stays all-zero under any partition
        let z = Matrix2D::zeros(3, 3);
        let part3 = partition_rows(&[1.0, 2.0, 3.0], 0.5).unwrap();
        let (qz, _) = project_matrix(&z, &part3, &pair, 1.0, 4).unwrap();
        assert!(qz.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn activation_quantizer_examples() {
        let aq = ActQuant::new(4, 1.0).unwrap();
        assert_eq!(aq.quantize_value(0.0), 0);
        assert_eq!(aq.quantize_value(1.0), 15);
        assert_eq!(aq.quantize_value(2.3), 15); // clip boundary
        assert_eq!(aq.quantize_value(0.52), 8); // 7.8 rounds up
        assert!(ActQuant::new(4, 0.0).is_err());
        assert!(ActQuant::new(4, -1.0).is_err());
        assert!(ActQuant::new(1, 1.0).is_err());
    }

    #[test]
    fn choose_alpha_conventions() {
        let scheme = QuantScheme::FixedPoint { m: 4 };
        let zeros = Matrix2D::zeros(2, 2);
        assert_eq!(choose_alpha(&zeros, scheme).unwrap(), 1.0);

        let mut rng = Rng::new(31);
        let w = Matrix2D::from_fn(4, 8, |_, _| rng.uniform(-1.0, 1.0));
        let a1 = choose_alpha(&w, scheme).unwrap();
        let w2 = Matrix2D::new(4, 8, w.data().iter().map(|v| v * 2.0).collect()).unwrap();
        let a2 = choose_alpha(&w2, scheme).unwrap();
        assert_eq!(a2, 2.0 * a1);
    }

    #[test]
    fn choose_alpha_matches_exhaustive_grid_oracle() {
        let mut rng = Rng::new(37);
        let w = Matrix2D::from_fn(3, 5, |_, _| rng.uniform(-1.0, 1.0));
        let scheme = QuantScheme::Sp2 { m1: 2, m2: 1 };
        let got = choose_alpha(&w, scheme).unwrap();
        // oracle: recompute each candidate with a linear-scan nearest level
        let max_abs = w.max_abs();
        let mut best = (f64::INFINITY, 0.0);
        for i in 0..64 {
            let t = i as f64 / 63.0;
            let alpha = max_abs * ((1.0 - t) * 0.3 + t);
            let ls = build_levels(scheme, alpha).unwrap();
            let sse: f64 = w
                .data()
                .iter()
                .map(|&v| {
                    let nearest = ls
                        .levels()
                        .iter()
                        .cloned()
                        .min_by(|a, b| {
                            ((a - v).abs(), a.abs())
                                .partial_cmp(&((b - v).abs(), b.abs()))
                                .unwrap()
                        })
                        .unwrap();
                    (nearest - v) * (nearest - v)
                })
                .sum();
            if sse < best.0 {
                best = (sse, alpha);
            }
        }
        assert_eq!(got, best.1);
    }

    #[test]
    fn level_set_manifest_is_json_stable() {
        let m = sp2_21().manifest();
        let text = serde_json::to_string(&m).unwrap();
        let back: LevelSetManifest = serde_json::from_str(&text).unwrap();
        assert_eq!(m, back);
        assert_eq!(m.levels.len(), m.codes.len());
        // packed codes decode back to the same values
        for (&packed, &level) in m.codes.iter().zip(&m.levels) {
            let cw = CodeWord::unpack(m.scheme, packed).unwrap();
            assert_eq!(sp2_21().decode(&cw).unwrap(), level);
        }
    }

    #[test]
    fn tanh_transform_mode_is_finite_and_monotone() {
        let ls = fixed4();
        let mut prev = f64::NEG_INFINITY;
        for i in 0..=200 {
            let w = -1.5 + 3.0 * i as f64 / 200.0;
            let q = ls.project_tanh_transform(w).unwrap();
            assert!(q.is_finite() && q.abs() <= 1.0);
            assert!(q >= prev, "not monotone at {w}");
            prev = q;
        }
        assert!(sp2_21().project_tanh_transform(0.5).is_err());
    }
}
