//! Mixed-scheme DNN weight quantization with a matching hardware model.
//!
//! Weight rows inside one layer split between two 4-bit-class schemes:
//! uniform fixed-point (multiplications land on DSPs) and sum-of-power-of-2
//! (each multiply becomes two shifts and an add, landing on LUTs). The crate
//! covers the whole loop at desk scale:
//!
//! - [`quant`]: level sets, nearest-level projection, integer code words,
//!   and activation quantization for all three schemes (fixed, power-of-2,
//!   SP2).
//! - [`partition`]: variance-ranked row assignment hitting a target SP2
//!   fraction.
//! - [`mod@train`]: ADMM + straight-through-estimator quantization-aware
//!   training of a small MLP with manual backprop.
//! - [`kernel`]: bit-exact integer emulation of the two heterogeneous GEMM
//!   cores with tile-level occupancy stats.
//! - [`fpga`]: analytical peak throughput, LUT cost calibration, and
//!   SP2/fixed ratio selection per device.
//! - [`tensor`] and [`io`]: the dense-matrix plumbing and file formats the
//!   rest builds on.

pub mod error;
pub mod fpga;
pub mod io;
pub mod kernel;
pub mod partition;
pub mod quant;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use fpga::{
    calibrate_device, calibrate_lut_model, peak_throughput, select_ratio, DesignPoint, Device,
    LutCostModel,
};
pub use kernel::{
    dequantize_output, fixed_mac, hetero_gemm, sp2_mac, FilterIndexMap, GemmStats, GemmTile,
    IntMatrix,
};
pub use partition::{partition_layer, partition_rows, RowPartition, RowScheme};
pub use quant::{
    build_levels, choose_alpha, choose_alpha_mixed, project_matrix, quantize_activations, ActQuant,
    CodeWord, LevelSet, QuantScheme, QuantizedActs, QuantizedLayer, SchemePair, Sign,
};
pub use tensor::{make_synthetic, matmul, row_variance, BlobSpec, Dataset, Matrix2D, Rng};
pub use train::{
    admm_step, backward_ste, evaluate, forward, train, AdmmState, EpochMetrics, MlpModel,
    TrainConfig, TrainOutcome,
};
