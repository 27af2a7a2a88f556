//! Bit-exact integer emulation of the heterogeneous GEMM cores.
//!
//! Two cores share one broadcast activation stream: the fixed-point core
//! (the DSP analog) multiplies `n`-bit activation codes by `(m-1)`-bit
//! magnitudes, and the SP2 core (the LUT analog) realizes each multiply as
//! two shifts plus one add. SP2 partial products carry an implicit common
//! denominator `2^d` with `d = 2^m1 - 1`, so a weight level `num / 2^d`
//! contributes exactly `a * num` to the accumulator.
//!
//! Accumulation is in `i64`: with activation codes below `2^8`, `d <= 31`
//! and at most `2^16` input columns the worst-case magnitude stays under
//! `2^56`, so overflow is impossible; those bounds are checked up front.
//! Integer accumulation also makes the output independent of tile order.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::partition::RowScheme;
use crate::quant::{CodeWord, QuantizedActs, QuantizedLayer};
use crate::tensor::Matrix2D;

pub const MAX_ACT_BITS: u32 = 8;
pub const MAX_COLS: usize = 1 << 16;

/// Dense row-major matrix of 64-bit accumulator values.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<i64>,
}

impl IntMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0; rows * cols],
        }
    }

    pub fn get(&self, r: usize, c: usize) -> i64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: i64) {
        self.data[r * self.cols + c] = v;
    }
}

/// Tile sizes of the blocked dataflow: `bat` batch rows and `blk_in` input
/// channels are processed per cycle, fanned out to `blk_out_fixed` and
/// `blk_out_sp2` output channels on the respective cores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GemmTile {
    pub bat: usize,
    pub blk_in: usize,
    pub blk_out_fixed: usize,
    pub blk_out_sp2: usize,
}

impl GemmTile {
    pub fn new(bat: usize, blk_in: usize, blk_out_fixed: usize, blk_out_sp2: usize) -> Self {
        Self {
            bat,
            blk_in,
            blk_out_fixed,
            blk_out_sp2,
        }
    }
}

/// Which global output rows each core produces, in the order it produces
/// them. The two lists always partition `0..rows`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterIndexMap {
    pub fixed: Vec<usize>,
    pub sp2: Vec<usize>,
}

impl FilterIndexMap {
    /// True when the two lists cover every row exactly once.
    pub fn partitions(&self, rows: usize) -> bool {
        let mut seen = vec![false; rows];
        for &r in self.fixed.iter().chain(&self.sp2) {
            if r >= rows || seen[r] {
                return false;
            }
            seen[r] = true;
        }
        seen.iter().all(|&s| s)
    }
}

/// MAC and occupancy counters from one emulated GEMM.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GemmStats {
    pub macs_fixed: u64,
    pub macs_sp2: u64,
    /// PE slots wasted on ragged tile edges, both cores combined.
    pub idle_slots: u64,
    /// Tile iterations of the slower core; the cores run in parallel.
    pub cycles_ideal: u64,
}

impl GemmStats {
    pub fn total_macs(&self) -> u64 {
        self.macs_fixed + self.macs_sp2
    }

    /// Useful MACs over total PE slots.
    pub fn utilization(&self) -> f64 {
        let useful = self.total_macs();
        if useful == 0 {
            return 0.0;
        }
        useful as f64 / (useful + self.idle_slots) as f64
    }

    pub fn merge(&mut self, other: &GemmStats) {
        self.macs_fixed += other.macs_fixed;
        self.macs_sp2 += other.macs_sp2;
        self.idle_slots += other.idle_slots;
        self.cycles_ideal += other.cycles_ideal;
    }
}

/// SP2 multiply: two shifts and one add against the common denominator
/// exponent `d`. Returns `sign * ((a << (d - e1)) + (a << (d - e2)))`, i.e.
/// the exact integer `a * num` for the level `num / 2^d`; explicitly-zero
/// exponents contribute nothing.
pub fn sp2_mac(a_code: u32, cw: &CodeWord, denom_exp: u32) -> i64 {
    let (sign, e1, e2) = match *cw {
        CodeWord::Sp2 { sign, e1, e2 } => (sign, e1, e2),
        _ => panic!("sp2_mac requires an SP2 code word"),
    };
    let mut acc: i64 = 0;
    for e in [e1, e2].into_iter().flatten() {
        debug_assert!(
            e >= 1 && e <= denom_exp,
            "exponent {e} vs denominator 2^{denom_exp}"
        );
        acc += (a_code as i64) << (denom_exp - e);
    }
    sign.factor() * acc
}

/// Fixed-point multiply by shift-add expansion of the magnitude bits,
/// checked against the direct product.
pub fn fixed_mac(a_code: u32, cw: &CodeWord) -> i64 {
    let (sign, magnitude) = match *cw {
        CodeWord::Fixed { sign, magnitude } => (sign, magnitude),
        _ => panic!("fixed_mac requires a fixed-point code word"),
    };
    let mut acc: i64 = 0;
    let mut bits = magnitude;
    let mut shift = 0u32;
    while bits != 0 {
        if bits & 1 == 1 {
            acc += (a_code as i64) << shift;
        }
        bits >>= 1;
        shift += 1;
    }
    assert_eq!(
        acc,
        a_code as i64 * magnitude as i64,
        "shift-add expansion disagrees with direct multiply"
    );
    sign.factor() * acc
}

struct CorePlan<'a> {
    tag: RowScheme,
    rows: Vec<usize>,
    blk_out: usize,
    layer: &'a QuantizedLayer,
}

impl CorePlan<'_> {
    fn cycles(&self, batch: usize, cols: usize, tile: &GemmTile) -> u64 {
        if self.rows.is_empty() {
            return 0;
        }
        (batch.div_ceil(tile.bat)
            * self.rows.len().div_ceil(self.blk_out)
            * cols.div_ceil(tile.blk_in)) as u64
    }

    /// Runs the tiled loop nest, accumulating into `out` (original row
    /// order) and returning (useful MACs, idle slots).
    fn run(&self, acts: &QuantizedActs, tile: &GemmTile, out: &mut IntMatrix) -> (u64, u64) {
        let batch = acts.rows;
        let cols = acts.cols;
        let n = self.rows.len();
        if n == 0 {
            return (0, 0);
        }
        let denom_exp = self.layer.pair.sp2.denom_exp().expect("sp2 scheme");
        let mut useful = 0u64;
        let mut idle = 0u64;
        let mut bt = 0;
        while bt < batch {
            let bs = (batch - bt).min(tile.bat);
            let mut ot = 0;
            while ot < n {
                let os = (n - ot).min(self.blk_out);
                let mut it = 0;
                while it < cols {
                    let is = (cols - it).min(tile.blk_in);
                    for b in bt..bt + bs {
                        for o in ot..ot + os {
                            let row = self.rows[o];
                            let mut acc = 0i64;
                            for c in it..it + is {
                                let a = acts.code(b, c);
                                let cw = self.layer.code(row, c);
                                acc += match self.tag {
                                    RowScheme::Fixed => fixed_mac(a, cw),
                                    RowScheme::Sp2 => sp2_mac(a, cw, denom_exp),
                                };
                            }
                            out.set(b, row, out.get(b, row) + acc);
                        }
                    }
                    let work = (bs * os * is) as u64;
                    useful += work;
                    idle += (tile.bat * self.blk_out * tile.blk_in) as u64 - work;
                    it += tile.blk_in;
                }
                ot += self.blk_out;
            }
            bt += tile.bat;
        }
        (useful, idle)
    }
}

/// Runs the two-core GEMM: SP2 rows on the shift-add core, fixed rows on
/// the multiplier core, activations broadcast to both, outputs reassembled
/// into original row order through the filter index map.
///
/// Output element `(b, r)` is the exact integer accumulation for batch row
/// `b` and weight row `r`; its implicit denominator depends on row `r`'s
/// scheme (see [`dequantize_output`]).
pub fn hetero_gemm(
    acts: &QuantizedActs,
    layer: &QuantizedLayer,
    tile: &GemmTile,
) -> Result<(IntMatrix, FilterIndexMap, GemmStats)> {
    if acts.cols != layer.cols {
        return Err(Error::Shape(format!(
            "activations have {} columns, layer expects {}",
            acts.cols, layer.cols
        )));
    }
    if layer.partition.len() != layer.rows || layer.codes.len() != layer.rows * layer.cols {
        return Err(Error::Shape(
            "layer rows, partition, and codes disagree".into(),
        ));
    }
    if acts.bits != layer.act_bits {
        return Err(Error::Config(format!(
            "activation width {} does not match layer's {}",
            acts.bits, layer.act_bits
        )));
    }
    if acts.bits > MAX_ACT_BITS || acts.cols > MAX_COLS {
        return Err(Error::Numeric(
            "activation width or column count exceeds the overflow-safe bounds".into(),
        ));
    }
    if tile.bat == 0 || tile.blk_in == 0 {
        return Err(Error::Config("tile needs bat >= 1 and blk_in >= 1".into()));
    }
    // every code word must belong to its row's assigned scheme
    for r in 0..layer.rows {
        let want_fixed = layer.partition.assignment(r) == RowScheme::Fixed;
        for c in 0..layer.cols {
            let ok = match layer.code(r, c) {
                CodeWord::Fixed { .. } => want_fixed,
                CodeWord::Sp2 { .. } => !want_fixed,
                CodeWord::Pow2 { .. } => false,
            };
            if !ok {
                return Err(Error::Shape(format!(
                    "row {r} code words do not match its partition scheme"
                )));
            }
        }
    }

    let map = FilterIndexMap {
        fixed: layer.partition.rows_of(RowScheme::Fixed),
        sp2: layer.partition.rows_of(RowScheme::Sp2),
    };
    for (rows, blk, name) in [
        (&map.fixed, tile.blk_out_fixed, "fixed"),
        (&map.sp2, tile.blk_out_sp2, "sp2"),
    ] {
        if !rows.is_empty() && blk == 0 {
            return Err(Error::Config(format!(
                "{name} core has {} rows but blk_out 0",
                rows.len()
            )));
        }
    }

    let mut out = IntMatrix::zeros(acts.rows, layer.rows);
    let mut stats = GemmStats {
        macs_fixed: 0,
        macs_sp2: 0,
        idle_slots: 0,
        cycles_ideal: 0,
    };

    let fixed_core = CorePlan {
        tag: RowScheme::Fixed,
        rows: map.fixed.clone(),
        blk_out: tile.blk_out_fixed.max(1),
        layer,
    };
    let sp2_core = CorePlan {
        tag: RowScheme::Sp2,
        rows: map.sp2.clone(),
        blk_out: tile.blk_out_sp2.max(1),
        layer,
    };
    let (useful_f, idle_f) = fixed_core.run(acts, tile, &mut out);
    let (useful_s, idle_s) = sp2_core.run(acts, tile, &mut out);
    stats.macs_fixed = useful_f;
    stats.macs_sp2 = useful_s;
    stats.idle_slots = idle_f + idle_s;
    stats.cycles_ideal = fixed_core
        .cycles(acts.rows, acts.cols, tile)
        .max(sp2_core.cycles(acts.rows, acts.cols, tile));

    debug_assert_eq!(
        stats.total_macs() as usize,
        acts.rows * layer.rows * layer.cols
    );
    Ok((out, map, stats))
}

/// Converts integer accumulator outputs back to real values.
///
/// One store path, one constant per row: SP2 rows divide by `2^d`
/// (exact, power-of-two denominator), fixed rows by `2^(m-1) - 1`, both
/// scaled by the layer alpha and the activation scale.
pub fn dequantize_output(
    out: &IntMatrix,
    layer: &QuantizedLayer,
    act_scale: f64,
) -> Result<Matrix2D> {
    if out.cols != layer.rows {
        return Err(Error::Shape(format!(
            "output has {} columns, layer has {} rows",
            out.cols, layer.rows
        )));
    }
    let d = layer
        .pair
        .sp2
        .denom_exp()
        .ok_or_else(|| Error::Scheme("layer lacks an SP2 scheme".into()))?;
    let fixed_denom = layer
        .pair
        .fixed
        .fixed_denom()
        .ok_or_else(|| Error::Scheme("layer lacks a fixed-point scheme".into()))?;
    let sp2_scale = layer.alpha * act_scale / (1u64 << d) as f64;
    let fixed_scale = layer.alpha * act_scale / fixed_denom as f64;
    Ok(Matrix2D::from_fn(out.rows, out.cols, |b, r| {
        let scale = match layer.partition.assignment(r) {
            RowScheme::Sp2 => sp2_scale,
            RowScheme::Fixed => fixed_scale,
        };
        out.get(b, r) as f64 * scale
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::partition::{partition_layer, partition_rows};
    use crate::quant::{
        build_levels, project_matrix, quantize_activations, ActQuant, QuantScheme, SchemePair, Sign,
    };
    use crate::tensor::{matmul, Rng};

    fn sp2_cw(sign: Sign, e1: Option<u32>, e2: Option<u32>) -> CodeWord {
        CodeWord::Sp2 { sign, e1, e2 }
    }

    #[test]
    fn sp2_mac_examples() {
        // a=5 against 5/8 = 2^-1 + 2^-3 with d=3: (5<<2) + (5<<0) = 25
        assert_eq!(sp2_mac(5, &sp2_cw(Sign::Pos, Some(1), Some(3)), 3), 25);
        // zero code word
        assert_eq!(sp2_mac(123, &sp2_cw(Sign::Pos, None, None), 3), 0);
        // level 1 = 1/2 + 1/2: (1<<2) + (1<<2) = 8 = 1 * (8/8)
        assert_eq!(sp2_mac(1, &sp2_cw(Sign::Pos, Some(1), Some(1)), 3), 8);
        assert_eq!(sp2_mac(5, &sp2_cw(Sign::Neg, Some(1), Some(3)), 3), -25);
    }

    #[test]
    fn fixed_mac_examples() {
        let cw = CodeWord::Fixed {
            sign: Sign::Pos,
            magnitude: 5,
        };
        assert_eq!(fixed_mac(7, &cw), 35);
        let zero = CodeWord::Fixed {
            sign: Sign::Pos,
            magnitude: 0,
        };
        assert_eq!(fixed_mac(9, &zero), 0);
        let neg = CodeWord::Fixed {
            sign: Sign::Neg,
            magnitude: 5,
        };
        assert_eq!(fixed_mac(7, &neg), -35);
    }

    #[test]
    fn fixed_mac_exhaustive_4bit() {
        for a in 0u32..16 {
            for mag in 0u32..8 {
                for sign in [Sign::Pos, Sign::Neg] {
                    let cw = CodeWord::Fixed {
                        sign,
                        magnitude: mag,
                    };
                    assert_eq!(fixed_mac(a, &cw), sign.factor() * (a * mag) as i64);
                }
            }
        }
    }

    #[test]
    fn sp2_mac_equals_exact_rational_product_exhaustively() {
        // covers total widths 3 through 6
        for scheme in [
            QuantScheme::Sp2 { m1: 1, m2: 1 },
            QuantScheme::Sp2 { m1: 2, m2: 1 },
            QuantScheme::Sp2 { m1: 3, m2: 1 },
            QuantScheme::Sp2 { m1: 3, m2: 2 },
            QuantScheme::Sp2 { m1: 2, m2: 2 },
        ] {
            let d = scheme.denom_exp().unwrap();
            let ls = build_levels(scheme, 1.0).unwrap();
            for &level in ls.levels() {
                let cw = ls.encode(level).unwrap();
                // exact numerator of the level over 2^d
                let num = (level * (1u64 << d) as f64).round() as i64;
                assert_eq!(num as f64, level * (1u64 << d) as f64);
                for a in 0u32..256 {
                    assert_eq!(sp2_mac(a, &cw, d), a as i64 * num);
                }
            }
        }
    }

    fn quantized_fixture(
        rows: usize,
        cols: usize,
        pr_sp2: f64,
        seed: u64,
    ) -> (Matrix2D, QuantizedLayer, QuantizedActs, Matrix2D) {
        let mut rng = Rng::new(seed);
        let w = Matrix2D::from_fn(rows, cols, |_, _| rng.uniform(-1.0, 1.0));
        let part = partition_layer(&w, pr_sp2).unwrap();
        let pair = SchemePair::new(4, (2, 1)).unwrap();
        let (quant_w, layer) = project_matrix(&w, &part, &pair, 1.0, 4).unwrap();
        let acts_f = Matrix2D::from_fn(3, cols, |_, _| rng.uniform(0.0, 1.0));
        let aq = ActQuant::new(4, 1.0).unwrap();
        let acts = quantize_activations(&acts_f, &aq).unwrap();
        (quant_w, layer, acts, acts_f)
    }

    #[test]
    fn all_fixed_partition_matches_plain_integer_gemm() {
        let (_, layer, acts, _) = quantized_fixture(6, 8, 0.0, 51);
        let tile = GemmTile::new(2, 4, 3, 1);
        let (out, map, stats) = hetero_gemm(&acts, &layer, &tile).unwrap();
        assert!(map.sp2.is_empty());
        // oracle: naive integer triple loop over signed magnitudes
        for b in 0..acts.rows {
            for r in 0..layer.rows {
                let mut acc = 0i64;
                for c in 0..layer.cols {
                    let (s, m) = match layer.code(r, c) {
                        CodeWord::Fixed { sign, magnitude } => (sign.factor(), *magnitude),
                        _ => unreachable!(),
                    };
                    acc += s * (acts.code(b, c) * m) as i64;
                }
                assert_eq!(out.get(b, r), acc);
            }
        }
        assert_eq!(stats.macs_sp2, 0);
        assert_eq!(
            stats.total_macs(),
            (acts.rows * layer.rows * layer.cols) as u64
        );
    }

    #[test]
    fn mixed_partition_matches_float_oracle() {
        let (quant_w, layer, acts, _) = quantized_fixture(10, 12, 0.5, 53);
        let tile = GemmTile::new(1, 4, 4, 4);
        let (out, map, _) = hetero_gemm(&acts, &layer, &tile).unwrap();
        assert!(map.partitions(layer.rows));
        let deq = dequantize_output(&out, &layer, acts.scale).unwrap();
        let reference = matmul(&acts.dequantize(), &quant_w.transpose()).unwrap();
        for (a, b) in deq.data().iter().zip(reference.data()) {
            let rel = (a - b).abs() / b.abs().max(1e-9);
            assert!(rel < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn tiling_does_not_change_integer_outputs() {
        let (_, layer, acts, _) = quantized_fixture(9, 11, 0.6, 57);
        let baseline = hetero_gemm(&acts, &layer, &GemmTile::new(1, 1, 1, 1))
            .unwrap()
            .0;
        let mut rng = Rng::new(99);
        for _ in 0..8 {
            let tile = GemmTile::new(
                1 + rng.below(4),
                1 + rng.below(11),
                1 + rng.below(9),
                1 + rng.below(9),
            );
            let (out, _, stats) = hetero_gemm(&acts, &layer, &tile).unwrap();
            assert_eq!(out, baseline, "tile {tile:?}");
            assert_eq!(
                stats.total_macs(),
                (acts.rows * layer.rows * layer.cols) as u64
            );
        }
    }

    #[test]
    fn routing_reassembles_rows_for_scheme_shared_values() {
        // weights from {-1, 0, 1}: exactly representable in both 4-bit schemes
        let mut rng = Rng::new(61);
        let w = Matrix2D::from_fn(6, 8, |_, _| (rng.below(3) as f64) - 1.0);
        let pair = SchemePair::new(4, (2, 1)).unwrap();
        let acts_f = Matrix2D::from_fn(2, 8, |_, _| rng.uniform(0.0, 1.0));
        let aq = ActQuant::new(4, 1.0).unwrap();
        let acts = quantize_activations(&acts_f, &aq).unwrap();
        let tile = GemmTile::new(2, 4, 2, 2);

        let variances = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6];
        let p1 = partition_rows(&variances, 0.5).unwrap();
        let p2 = partition_rows(&variances.map(|v| 1.0 - v), 0.5).unwrap();
        assert_ne!(p1.assignments(), p2.assignments());

        let mut runs = Vec::new();
        for p in [p1, p2] {
            let (_, layer) = project_matrix(&w, &p, &pair, 1.0, 4).unwrap();
            let (out, map, _) = hetero_gemm(&acts, &layer, &tile).unwrap();
            assert!(map.partitions(6));
            let deq = dequantize_output(&out, &layer, acts.scale).unwrap();
            runs.push((out, layer, deq));
        }
        // integer outputs carry per-scheme denominators (7 for fixed, 8 for
        // sp2 here); cross-multiplying makes the row identity bit-exact
        let denom = |layer: &crate::quant::QuantizedLayer, r: usize| -> i64 {
            match layer.partition.assignment(r) {
                crate::partition::RowScheme::Fixed => 7,
                crate::partition::RowScheme::Sp2 => 8,
            }
        };
        for b in 0..2 {
            for r in 0..6 {
                let (d0, d1) = (denom(&runs[0].1, r), denom(&runs[1].1, r));
                assert_eq!(runs[0].0.get(b, r) * d1, runs[1].0.get(b, r) * d0);
                let (x, y) = (runs[0].2.get(b, r), runs[1].2.get(b, r));
                assert!((x - y).abs() < 1e-12, "{x} vs {y}");
            }
        }
    }

    #[test]
    fn dequantize_examples() {
        // single SP2 MAC of 25 with d=3, alpha=1, act scale 1/15
        let mut rng = Rng::new(59);
        let w = Matrix2D::from_fn(1, 2, |_, c| if c == 0 { 0.625 } else { rng.uniform(-0.1, 0.1) });
        let part = partition_rows(&[0.0], 1.0).unwrap(); // all sp2
        let pair = SchemePair::new(4, (2, 1)).unwrap();
        let (_, layer) = project_matrix(&w, &part, &pair, 1.0, 4).unwrap();
        let mut out = IntMatrix::zeros(1, 1);
        out.set(0, 0, 25);
        let deq = dequantize_output(&out, &layer, 1.0 / 15.0).unwrap();
        assert!((deq.get(0, 0) - 25.0 / (8.0 * 15.0)).abs() < 1e-15);

        // zero integer matrix dequantizes to the zero real matrix
        let zeros = IntMatrix::zeros(3, 1);
        let deq0 = dequantize_output(&zeros, &layer, 1.0 / 15.0).unwrap();
        assert!(deq0.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn idle_slots_reflect_ragged_tiles() {
        let (_, layer, acts, _) = quantized_fixture(8, 16, 0.5, 63);
        // everything divides: no idle slots
        let tile = GemmTile::new(1, 4, 4, 4);
        let (_, _, stats) = hetero_gemm(&acts, &layer, &tile).unwrap();
        assert_eq!(stats.idle_slots, 0);
        assert_eq!(stats.utilization(), 1.0);

        // 3 input columns against blk_in 16 mirrors a first conv layer
        let mut rng = Rng::new(65);
        let w = Matrix2D::from_fn(8, 3, |_, _| rng.uniform(-1.0, 1.0));
        let part = partition_layer(&w, 0.5).unwrap();
        let pair = SchemePair::new(4, (2, 1)).unwrap();
        let (_, thin_layer) = project_matrix(&w, &part, &pair, 1.0, 4).unwrap();
        let acts_f = Matrix2D::from_fn(4, 3, |_, _| rng.uniform(0.0, 1.0));
        let acts3 = quantize_activations(&acts_f, &ActQuant::new(4, 1.0).unwrap()).unwrap();
        let (_, _, s) = hetero_gemm(&acts3, &thin_layer, &GemmTile::new(4, 16, 4, 4)).unwrap();
        assert!(s.utilization() <= 3.0 / 16.0 + 1e-12, "{}", s.utilization());
    }

    #[test]
    fn rejects_inconsistent_inputs() {
        let (_, layer, acts, _) = quantized_fixture(4, 6, 0.5, 67);
        let bad_acts = QuantizedActs {
            cols: 5,
            ..acts.clone()
        };
        assert!(hetero_gemm(&bad_acts, &layer, &GemmTile::new(1, 1, 1, 1)).is_err());

        let mut tampered = layer.clone();
        tampered.codes[0] = CodeWord::Pow2 {
            sign: Sign::Pos,
            exponent: None,
        };
        assert!(hetero_gemm(&acts, &tampered, &GemmTile::new(1, 1, 1, 1)).is_err());

        assert!(hetero_gemm(&acts, &layer, &GemmTile::new(0, 1, 1, 1)).is_err());
    }
}
