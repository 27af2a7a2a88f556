//! Analytical device model: peak throughput of the heterogeneous GEMM
//! design, a linear LUT cost model calibrated from synthesized reference
//! points, and selection of the SP2/fixed output-block ratio for a device.
//!
//! The selection mirrors how the design is sized on real parts: the
//! fixed-point block is pinned so DSP utilization stays at 100%, then the
//! SP2 block grows in steps of 8 columns until predicted LUT usage would
//! exceed the utilization cap (default 70%). A fixed per-device LUT
//! overhead accounts for the load/store machinery that scales alongside
//! the SP2 core but is not part of the MAC array itself.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::GemmStats;

/// SP2 output-block search granularity.
pub const BLK_STEP: usize = 8;
const BLK_SEARCH_LIMIT: usize = 1 << 20;

/// The fixed part of a design: batch rows, input-channel block, and the
/// fixed-point output block sized to saturate the DSPs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BaseDesign {
    pub bat: usize,
    pub blk_in: usize,
    pub blk_out_fixed: usize,
}

/// One synthesized reference design with its measured resource usage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalPoint {
    pub bat: usize,
    pub blk_in: usize,
    pub blk_out_fixed: usize,
    pub blk_out_sp2: usize,
    pub lut: u64,
    pub dsp: u64,
}

fn default_lut_cap() -> f64 {
    0.7
}

/// FPGA device resources plus the characterization data shipped for it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Device {
    pub name: String,
    pub lut: u64,
    pub dsp: u64,
    pub bram36: u64,
    pub ff: u64,
    pub frequency_mhz: f64,
    /// LUT utilization ceiling for ratio selection.
    #[serde(default = "default_lut_cap")]
    pub lut_cap: f64,
    /// LUTs consumed by load/store plumbing, outside the MAC arrays.
    #[serde(default)]
    pub load_store_lut_overhead: u64,
    pub base_design: BaseDesign,
    pub calibration: Vec<CalPoint>,
}

/// A fully specified design point on a device.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignPoint {
    pub device: String,
    pub bat: usize,
    pub blk_in: usize,
    pub blk_out_fixed: usize,
    pub blk_out_sp2: usize,
    pub frequency_mhz: f64,
}

impl DesignPoint {
    pub fn new(
        device: &str,
        bat: usize,
        blk_in: usize,
        blk_out_fixed: usize,
        blk_out_sp2: usize,
        frequency_mhz: f64,
    ) -> Self {
        Self {
            device: device.to_string(),
            bat,
            blk_in,
            blk_out_fixed,
            blk_out_sp2,
            frequency_mhz,
        }
    }

    /// Fraction of output rows the SP2 core serves; this feeds the training
    /// partitioner as its target `pr_sp2`.
    pub fn pr_sp2(&self) -> f64 {
        self.blk_out_sp2 as f64 / (self.blk_out_fixed + self.blk_out_sp2) as f64
    }
}

/// Peak throughput in GOPS, counting each MAC as two operations: every
/// cycle both cores retire `bat * blk_in * (blk_out_fixed + blk_out_sp2)`
/// MACs.
pub fn peak_throughput(dp: &DesignPoint) -> f64 {
    let macs_per_cycle = (dp.bat * dp.blk_in * (dp.blk_out_fixed + dp.blk_out_sp2)) as f64;
    2.0 * macs_per_cycle * dp.frequency_mhz / 1000.0
}

/// Peak-throughput ratio `a / b` computed on the integer MAC counts, so
/// design-point ratios at equal frequency come out exact (the GOPS constant
/// cancels).
pub fn throughput_ratio(a: &DesignPoint, b: &DesignPoint) -> f64 {
    let macs = |dp: &DesignPoint| (dp.bat * dp.blk_in * (dp.blk_out_fixed + dp.blk_out_sp2)) as f64;
    (macs(a) / macs(b)) * (a.frequency_mhz / b.frequency_mhz)
}

/// Linear resource cost model fit from calibration points.
///
/// Predicted LUTs grow linearly in the number of SP2 MAC lanes
/// (`bat * blk_in * blk_out_sp2`); DSP usage is proportional to the number
/// of fixed-point MAC lanes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LutCostModel {
    pub base_lut: f64,
    pub lut_per_sp2_lane: f64,
    pub dsp_per_fixed_lane: f64,
    /// Largest absolute LUT misfit over the calibration points.
    pub max_residual: f64,
}

impl LutCostModel {
    /// Predicted MAC-array LUTs for an SP2 block of the given size.
    pub fn predict_lut(&self, bat: usize, blk_in: usize, blk_out_sp2: usize) -> f64 {
        self.base_lut + self.lut_per_sp2_lane * (bat * blk_in * blk_out_sp2) as f64
    }

    pub fn predict_dsp(&self, bat: usize, blk_in: usize, blk_out_fixed: usize) -> f64 {
        self.dsp_per_fixed_lane * (bat * blk_in * blk_out_fixed) as f64
    }
}

/// Least-squares line through (SP2 lanes, measured LUT). Needs at least two
/// points with distinct SP2 sizes.
pub fn calibrate_lut_model(points: &[CalPoint]) -> Result<LutCostModel> {
    if points.len() < 2 {
        return Err(Error::Config(format!(
            "calibration needs >= 2 points, got {}",
            points.len()
        )));
    }
    let xs: Vec<f64> = points
        .iter()
        .map(|p| (p.bat * p.blk_in * p.blk_out_sp2) as f64)
        .collect();
    let ys: Vec<f64> = points.iter().map(|p| p.lut as f64).collect();
    let n = xs.len() as f64;
    let xbar = xs.iter().sum::<f64>() / n;
    let ybar = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - xbar) * (x - xbar)).sum();
    if sxx == 0.0 {
        return Err(Error::Config(
            "calibration points all share one SP2 size".into(),
        ));
    }
    let sxy: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (x - xbar) * (y - ybar))
        .sum();
    let slope = sxy / sxx;
    let base = ybar - slope * xbar;
    let max_residual = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - (base + slope * x)).abs())
        .fold(0.0, f64::max);
    let dsp_per_fixed_lane = points
        .iter()
        .map(|p| p.dsp as f64 / (p.bat * p.blk_in * p.blk_out_fixed) as f64)
        .sum::<f64>()
        / n;
    Ok(LutCostModel {
        base_lut: base,
        lut_per_sp2_lane: slope,
        dsp_per_fixed_lane,
        max_residual,
    })
}

/// Fits the cost model from the device's own calibration points.
pub fn calibrate_device(device: &Device) -> Result<LutCostModel> {
    calibrate_lut_model(&device.calibration)
}

/// Ratio selection result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectedDesign {
    pub point: DesignPoint,
    pub pr_sp2: f64,
    pub predicted_lut: f64,
    pub predicted_dsp: f64,
}

fn predicted_total_lut(device: &Device, cost: &LutCostModel, blk_out_sp2: usize) -> f64 {
    cost.predict_lut(
        device.base_design.bat,
        device.base_design.blk_in,
        blk_out_sp2,
    ) + device.load_store_lut_overhead as f64
}

/// Grows the SP2 output block in steps of [`BLK_STEP`] until the predicted
/// LUT usage would exceed `lut_cap * device.lut`; the fixed block stays at
/// the base design so DSP usage is unchanged.
pub fn select_ratio(device: &Device, cost: &LutCostModel, lut_cap: f64) -> Result<SelectedDesign> {
    if !(0.0..=1.0).contains(&lut_cap) {
        return Err(Error::Config(format!("lut_cap {lut_cap} outside [0, 1]")));
    }
    let budget = lut_cap * device.lut as f64;
    if predicted_total_lut(device, cost, 0) > budget {
        return Err(Error::Infeasible(format!(
            "base design needs {:.0} LUTs, cap allows {:.0}",
            predicted_total_lut(device, cost, 0),
            budget
        )));
    }
    let mut blk = 0usize;
    while blk + BLK_STEP <= BLK_SEARCH_LIMIT
        && predicted_total_lut(device, cost, blk + BLK_STEP) <= budget
    {
        blk += BLK_STEP;
    }
    let point = DesignPoint::new(
        &device.name,
        device.base_design.bat,
        device.base_design.blk_in,
        device.base_design.blk_out_fixed,
        blk,
        device.frequency_mhz,
    );
    let pr_sp2 = point.pr_sp2();
    Ok(SelectedDesign {
        predicted_lut: predicted_total_lut(device, cost, blk),
        predicted_dsp: cost.predict_dsp(
            device.base_design.bat,
            device.base_design.blk_in,
            device.base_design.blk_out_fixed,
        ),
        point,
        pr_sp2,
    })
}

/// One row of the characterization table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRow {
    pub blk_out_sp2: usize,
    pub predicted_lut: f64,
    pub predicted_dsp: f64,
    pub peak_gops: f64,
    pub feasible: bool,
}

/// Candidate design points from SP2 block 0 up to one step past the cap.
pub fn design_table(device: &Device, cost: &LutCostModel, lut_cap: f64) -> Vec<CandidateRow> {
    let budget = lut_cap * device.lut as f64;
    let mut rows = Vec::new();
    let mut blk = 0usize;
    loop {
        let lut = predicted_total_lut(device, cost, blk);
        let dp = DesignPoint::new(
            &device.name,
            device.base_design.bat,
            device.base_design.blk_in,
            device.base_design.blk_out_fixed,
            blk,
            device.frequency_mhz,
        );
        let feasible = lut <= budget;
        rows.push(CandidateRow {
            blk_out_sp2: blk,
            predicted_lut: lut,
            predicted_dsp: cost.predict_dsp(
                device.base_design.bat,
                device.base_design.blk_in,
                device.base_design.blk_out_fixed,
            ),
            peak_gops: peak_throughput(&dp),
            feasible,
        });
        if !feasible || blk >= BLK_SEARCH_LIMIT {
            break;
        }
        blk += BLK_STEP;
    }
    rows
}

/// Achieved throughput of a layer (or a whole network's merged stats) on a
/// design point: PE utilization times peak.
pub fn estimate_layer_throughput(dp: &DesignPoint, stats: &GemmStats) -> (f64, f64) {
    let utilization = stats.utilization();
    (peak_throughput(dp) * utilization, utilization)
}

#[derive(Debug, Deserialize, Serialize)]
struct DeviceDb {
    devices: Vec<Device>,
}

/// The device database shipped with the crate.
pub fn builtin_devices() -> Vec<Device> {
    let db: DeviceDb = serde_json::from_str(include_str!("../assets/devices.json"))
        .expect("embedded device database is valid");
    db.devices
}

/// Loads a device database from a JSON file with the same layout as the
/// shipped one.
pub fn load_devices(path: &std::path::Path) -> Result<Vec<Device>> {
    let text = std::fs::read_to_string(path)?;
    let db: DeviceDb =
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("device db: {e}")))?;
    Ok(db.devices)
}

/// Case-insensitive device lookup.
pub fn find_device<'a>(devices: &'a [Device], name: &str) -> Result<&'a Device> {
    devices
        .iter()
        .find(|d| d.name.eq_ignore_ascii_case(name))
        .ok_or_else(|| Error::Config(format!("unknown device {name}")))
}
