//! Shared fixtures for the criterion benchmarks.

use msq_core::partition::partition_layer;
use msq_core::quant::{
    project_matrix, quantize_activations, ActQuant, QuantizedActs, QuantizedLayer, SchemePair,
};
use msq_core::tensor::{Matrix2D, Rng};

/// A quantized 4-bit MSQ layer plus matching activation codes.
pub fn gemm_fixture(
    rows: usize,
    cols: usize,
    batch: usize,
    pr_sp2: f64,
    seed: u64,
) -> (QuantizedLayer, QuantizedActs) {
    let mut rng = Rng::new(seed);
    let w = Matrix2D::from_fn(rows, cols, |_, _| rng.uniform(-1.0, 1.0));
    let partition = partition_layer(&w, pr_sp2).expect("partition");
    let pair = SchemePair::new(4, (2, 1)).expect("schemes");
    let (_, layer) = project_matrix(&w, &partition, &pair, 1.0, 4).expect("project");
    let acts_f = Matrix2D::from_fn(batch, cols, |_, _| rng.uniform(0.0, 1.0));
    let acts = quantize_activations(&acts_f, &ActQuant::new(4, 1.0).expect("act quant"))
        .expect("quantize acts");
    (layer, acts)
}
