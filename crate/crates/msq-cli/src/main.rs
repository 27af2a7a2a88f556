//! `msq` — mixed-scheme quantization toolkit.
//!
//! Subcommands compose through files so each pipeline stage stays
//! inspectable: `characterize` picks the SP2/fixed ratio for a device and
//! emits a config fragment, `train` runs quantization-aware training and
//! writes a checkpoint, `quantize` projects a single weight matrix,
//! `emulate` runs the bit-exact integer GEMM and writes occupancy stats,
//! and `report` merges metrics, stats, and model estimates into one table.
//!
//! Exit codes: 0 success, 2 input error, 3 config error, 4 numeric failure.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use msq_core::error::Error;
use msq_core::fpga::{
    builtin_devices, calibrate_device, design_table, find_device, load_devices, peak_throughput,
    select_ratio, DesignPoint,
};
use msq_core::io::{
    atomic_write, atomic_write_json, load_checkpoint, read_matrix, stage_dir,
    write_checkpoint_into, Checkpoint, CheckpointLayer,
};
use msq_core::kernel::{dequantize_output, hetero_gemm, GemmStats, GemmTile};
use msq_core::partition::partition_layer;
use msq_core::quant::{
    choose_alpha_mixed, project_matrix, quantize_activations, ActQuant, SchemePair,
};
use msq_core::tensor::{make_synthetic, BlobSpec, Rng};
use msq_core::train::{evaluate, train, MlpModel, TrainConfig};

#[derive(Parser)]
#[command(
    name = "msq",
    version,
    about = "Mixed-scheme (fixed-point + SP2) quantization toolkit"
)]
struct Cli {
    /// Seed override for any stage that draws random numbers.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// JSON configuration file (train, report).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output file or directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Report output format.
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Cmd {
    /// Quantize one weight matrix into a checkpoint plus a summary.
    Quantize(QuantizeArgs),
    /// Assign the rows of a weight matrix to SP2 or fixed-point.
    Partition(PartitionArgs),
    /// Quantization-aware training of the toy classifier.
    Train(TrainArgs),
    /// Run the heterogeneous integer GEMM on a quantized checkpoint.
    Emulate(EmulateArgs),
    /// Pick the SP2/fixed ratio for a device and emit the pr_sp2 fragment.
    Characterize(CharacterizeArgs),
    /// Merge metrics, emulation stats, and model estimates into one table.
    Report(ReportArgs),
}

#[derive(Args)]
struct QuantizeArgs {
    /// Weight matrix in the binary matrix format.
    #[arg(long)]
    input: PathBuf,
    /// Fraction of rows assigned to SP2.
    #[arg(long, default_value_t = 0.0)]
    pr_sp2: f64,
    #[arg(long, default_value_t = 4)]
    fixed_bits: u32,
    /// SP2 widths as m1,m2.
    #[arg(long, value_delimiter = ',', num_args = 1.., default_values_t = [2, 1])]
    sp2_bits: Vec<u32>,
    #[arg(long, default_value_t = 4)]
    act_bits: u32,
    /// Layer scale; omitted means grid-search.
    #[arg(long)]
    alpha: Option<f64>,
}

#[derive(Args)]
struct PartitionArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    pr_sp2: f64,
}

#[derive(Args)]
struct TrainArgs {
    /// Characterization fragment whose pr_sp2 overrides the config.
    #[arg(long)]
    fragment: Option<PathBuf>,
}

#[derive(Args)]
struct EmulateArgs {
    /// Checkpoint directory from `quantize` or `train`.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Activation matrix in the binary matrix format.
    #[arg(long)]
    acts: PathBuf,
    /// Layer index inside the checkpoint.
    #[arg(long, default_value_t = 0)]
    layer: usize,
    /// Tile sizes as bat,blk_in,blk_out_fixed,blk_out_sp2.
    #[arg(long, value_delimiter = ',', num_args = 1.., default_values_t = [1, 16, 16, 24])]
    tile: Vec<usize>,
    /// Activation clip; omitted means the checkpoint's calibrated value,
    /// falling back to the activation maximum.
    #[arg(long)]
    act_alpha: Option<f64>,
}

#[derive(Args)]
struct CharacterizeArgs {
    /// Device name from the database.
    #[arg(long)]
    device: String,
    /// Device database JSON; omitted means the built-in one.
    #[arg(long)]
    devices: Option<PathBuf>,
    /// LUT utilization ceiling; omitted means the device default.
    #[arg(long)]
    lut_cap: Option<f64>,
}

#[derive(Args)]
struct ReportArgs {}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Shape(_)
        | Error::Degenerate(_)
        | Error::Format(_)
        | Error::Io(_)
        | Error::Encoding(_) => 2,
        Error::Scheme(_) | Error::Config(_) | Error::Infeasible(_) => 3,
        Error::Numeric(_) | Error::Diverged { .. } => 4,
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match &cli.cmd {
        Cmd::Quantize(args) => cmd_quantize(&cli, args),
        Cmd::Partition(args) => cmd_partition(&cli, args),
        Cmd::Train(args) => cmd_train(&cli, args),
        Cmd::Emulate(args) => cmd_emulate(&cli, args),
        Cmd::Characterize(args) => cmd_characterize(&cli, args),
        Cmd::Report(_) => cmd_report(&cli),
    }
}

fn required_out(cli: &Cli) -> Result<&Path, Error> {
    cli.out
        .as_deref()
        .ok_or_else(|| Error::Config("--out is required for this subcommand".into()))
}

fn scheme_pair(fixed_bits: u32, sp2_bits: &[u32]) -> Result<SchemePair, Error> {
    if sp2_bits.len() != 2 {
        return Err(Error::Config("--sp2-bits needs exactly m1,m2".into()));
    }
    SchemePair::new(fixed_bits, (sp2_bits[0], sp2_bits[1]))
}

// ---------------------------------------------------------------- quantize

#[derive(Serialize)]
struct LevelCount {
    level: f64,
    count: usize,
}

#[derive(Serialize)]
struct QuantizeSummary {
    input: String,
    rows: usize,
    cols: usize,
    alpha: f64,
    pr_sp2: f64,
    theta: f64,
    sp2_rows: usize,
    fixed_rows: usize,
    distinct_levels_used: usize,
    histogram: Vec<LevelCount>,
}

fn cmd_quantize(cli: &Cli, args: &QuantizeArgs) -> Result<(), Error> {
    let out = required_out(cli)?;
    let w = read_matrix(&args.input)?;
    let pair = scheme_pair(args.fixed_bits, &args.sp2_bits)?;
    let partition = partition_layer(&w, args.pr_sp2)?;
    let alpha = match args.alpha {
        Some(a) if a > 0.0 && a.is_finite() => a,
        Some(a) => return Err(Error::Config(format!("alpha {a} must be positive"))),
        None => choose_alpha_mixed(&w, &partition, &pair)?,
    };
    let (quant, layer) = project_matrix(&w, &partition, &pair, alpha, args.act_bits)?;

    let mut histogram: BTreeMap<u64, (f64, usize)> = BTreeMap::new();
    for &v in quant.data() {
        histogram.entry(v.to_bits()).or_insert((v, 0)).1 += 1;
    }
    let mut histogram: Vec<LevelCount> = histogram
        .into_values()
        .map(|(level, count)| LevelCount { level, count })
        .collect();
    histogram.sort_by(|a, b| a.level.partial_cmp(&b.level).unwrap());

    let summary = QuantizeSummary {
        input: args.input.display().to_string(),
        rows: w.rows(),
        cols: w.cols(),
        alpha,
        pr_sp2: args.pr_sp2,
        theta: partition.theta(),
        sp2_rows: partition.sp2_count(),
        fixed_rows: w.rows() - partition.sp2_count(),
        distinct_levels_used: histogram.len(),
        histogram,
    };
    let entry = CheckpointLayer::from_quantized("layer0", &layer, None, None);
    let ckpt = Checkpoint {
        layers: vec![entry],
        seed: cli.seed,
    };
    stage_dir(out, |staging| {
        write_checkpoint_into(staging, &ckpt, std::slice::from_ref(&quant))?;
        let text = serde_json::to_string_pretty(&summary)
            .map_err(|e| Error::Format(format!("serialize: {e}")))?;
        std::fs::write(staging.join("summary.json"), format!("{text}\n"))?;
        Ok(())
    })
}

// --------------------------------------------------------------- partition

#[derive(Serialize)]
struct PartitionReport<'a> {
    layer: String,
    theta: f64,
    pr_sp2: f64,
    assignments: &'a [msq_core::partition::RowScheme],
}

fn cmd_partition(cli: &Cli, args: &PartitionArgs) -> Result<(), Error> {
    let out = required_out(cli)?;
    let w = read_matrix(&args.input)?;
    let partition = partition_layer(&w, args.pr_sp2)?;
    let layer = args
        .input
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "layer0".into());
    atomic_write_json(
        out,
        &PartitionReport {
            layer,
            theta: partition.theta(),
            pr_sp2: partition.pr_sp2(),
            assignments: partition.assignments(),
        },
    )
}

// ------------------------------------------------------------------- train

fn default_eval_samples() -> usize {
    500
}

/// Train-run description: the synthetic task plus the hyperparameters.
#[derive(Debug, Deserialize)]
struct TrainFileConfig {
    classes: usize,
    features: usize,
    samples: usize,
    #[serde(default = "default_eval_samples")]
    eval_samples: usize,
    hidden: Vec<usize>,
    epochs: usize,
    batch_size: usize,
    learning_rate: f64,
    pr_sp2: f64,
    fixed_bits: u32,
    sp2_bits: (u32, u32),
    act_bits: u32,
    seed: Option<u64>,
    #[serde(default = "default_quantize")]
    quantize: bool,
    #[serde(default = "BlobSpec::default_base")]
    base: f64,
    #[serde(default = "BlobSpec::default_separation")]
    separation: f64,
    #[serde(default = "BlobSpec::default_noise_std")]
    noise_std: f64,
}

fn default_quantize() -> bool {
    true
}

#[derive(Deserialize)]
struct Fragment {
    pr_sp2: f64,
}

#[derive(Serialize)]
struct TrainSummary {
    seed: u64,
    pr_sp2: f64,
    train_float_acc: f64,
    train_quant_acc: f64,
    eval_float_acc: f64,
    eval_quant_acc: f64,
}

fn cmd_train(cli: &Cli, args: &TrainArgs) -> Result<(), Error> {
    let out = required_out(cli)?;
    let config_path = cli
        .config
        .as_deref()
        .ok_or_else(|| Error::Config("train needs --config <json>".into()))?;
    let text = std::fs::read_to_string(config_path)?;
    let mut file_cfg: TrainFileConfig =
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("train config: {e}")))?;
    if let Some(fragment) = &args.fragment {
        let ftext = std::fs::read_to_string(fragment)?;
        let frag: Fragment =
            serde_json::from_str(&ftext).map_err(|e| Error::Config(format!("fragment: {e}")))?;
        file_cfg.pr_sp2 = frag.pr_sp2;
    }
    let seed = cli
        .seed
        .or(file_cfg.seed)
        .ok_or_else(|| Error::Config("train needs a seed (--seed or config)".into()))?;

    let mut spec = BlobSpec::new(file_cfg.classes, file_cfg.features);
    spec.base = file_cfg.base;
    spec.separation = file_cfg.separation;
    spec.noise_std = file_cfg.noise_std;
    let train_ds = make_synthetic(&spec, file_cfg.samples, &mut Rng::new(seed))?;
    let eval_ds = make_synthetic(&spec, file_cfg.eval_samples, &mut Rng::new(seed ^ 0x5eed))?;

    let mut dims = vec![file_cfg.features];
    dims.extend(&file_cfg.hidden);
    dims.push(file_cfg.classes);
    let model = MlpModel::new(&dims, &mut Rng::new(seed.wrapping_add(1)))?;

    let cfg = TrainConfig {
        epochs: file_cfg.epochs,
        batch_size: file_cfg.batch_size,
        learning_rate: file_cfg.learning_rate,
        pr_sp2: file_cfg.pr_sp2,
        fixed_bits: file_cfg.fixed_bits,
        sp2_bits: file_cfg.sp2_bits,
        act_bits: file_cfg.act_bits,
        seed,
        quantize: file_cfg.quantize,
    };
    let outcome = train(&model, &train_ds, &cfg)?;

    let summary = TrainSummary {
        seed,
        pr_sp2: cfg.pr_sp2,
        train_float_acc: outcome.float_accuracy,
        train_quant_acc: outcome.quant_accuracy,
        eval_float_acc: evaluate(&outcome.float_model, &eval_ds, None)?,
        eval_quant_acc: evaluate(
            &outcome.quant_model,
            &eval_ds,
            outcome.act_quants.as_deref(),
        )?,
    };

    let mut entries = Vec::new();
    let mut weights = Vec::new();
    for (i, enc) in outcome.layers.iter().enumerate() {
        let name = format!("layer{i}");
        let act_alpha = outcome.act_quants.as_ref().map(|a| a[i].alpha());
        entries.push(CheckpointLayer::from_quantized(
            &name,
            enc,
            Some(outcome.quant_model.layers[i].bias.clone()),
            act_alpha,
        ));
        weights.push(outcome.quant_model.layers[i].weights.clone());
    }
    let ckpt = Checkpoint {
        layers: entries,
        seed: Some(seed),
    };

    let mut csv = String::from("epoch,loss,float_acc,quant_acc\n");
    for m in &outcome.metrics {
        csv.push_str(&format!(
            "{},{},{},{}\n",
            m.epoch, m.loss, m.float_acc, m.quant_acc
        ));
    }

    stage_dir(out, |staging| {
        if !outcome.layers.is_empty() {
            write_checkpoint_into(staging, &ckpt, &weights)?;
        }
        std::fs::write(staging.join("metrics.csv"), &csv)?;
        let text = serde_json::to_string_pretty(&summary)
            .map_err(|e| Error::Format(format!("serialize: {e}")))?;
        std::fs::write(staging.join("train_summary.json"), format!("{text}\n"))?;
        Ok(())
    })
}

// ----------------------------------------------------------------- emulate

fn cmd_emulate(cli: &Cli, args: &EmulateArgs) -> Result<(), Error> {
    let out = required_out(cli)?;
    if args.tile.len() != 4 {
        return Err(Error::Config(
            "--tile needs bat,blk_in,blk_out_fixed,blk_out_sp2".into(),
        ));
    }
    let (ckpt, _) = load_checkpoint(&args.checkpoint)?;
    let entry = ckpt
        .layers
        .get(args.layer)
        .ok_or_else(|| Error::Config(format!("checkpoint has no layer {}", args.layer)))?;
    let layer = entry.to_quantized()?;
    let acts_f = read_matrix(&args.acts)?;

    let act_alpha = args
        .act_alpha
        .or(entry.act_alpha)
        .unwrap_or_else(|| acts_f.max_abs().max(1e-6));
    let aq = ActQuant::new(layer.act_bits, act_alpha)?;
    let acts = quantize_activations(&acts_f, &aq)?;
    let tile = GemmTile::new(args.tile[0], args.tile[1], args.tile[2], args.tile[3]);

    let (int_out, map, stats) = hetero_gemm(&acts, &layer, &tile)?;
    let deq = dequantize_output(&int_out, &layer, acts.scale)?;

    stage_dir(out, |staging| {
        let mut buf = Vec::new();
        msq_core::io::write_matrix_to(&mut buf, &deq)?;
        std::fs::write(staging.join("outputs.bin"), buf)?;
        let stats_text = serde_json::to_string_pretty(&stats)
            .map_err(|e| Error::Format(format!("serialize: {e}")))?;
        std::fs::write(staging.join("stats.json"), format!("{stats_text}\n"))?;
        let map_text = serde_json::to_string_pretty(&map)
            .map_err(|e| Error::Format(format!("serialize: {e}")))?;
        std::fs::write(
            staging.join("filter_index_map.json"),
            format!("{map_text}\n"),
        )?;
        Ok(())
    })
}

// ------------------------------------------------------------ characterize

#[derive(Serialize)]
struct CharacterizeFragment {
    pr_sp2: f64,
    device: String,
    design_point: DesignPoint,
    predicted_lut: f64,
    predicted_dsp: f64,
    peak_gops: f64,
}

fn cmd_characterize(cli: &Cli, args: &CharacterizeArgs) -> Result<(), Error> {
    let devices = match &args.devices {
        Some(path) => load_devices(path)?,
        None => builtin_devices(),
    };
    let device = find_device(&devices, &args.device)?;
    let cost = calibrate_device(device)?;
    let lut_cap = args.lut_cap.unwrap_or(device.lut_cap);
    let selected = select_ratio(device, &cost, lut_cap)?;

    println!(
        "{} (lut {}, dsp {}, cap {:.0}%)",
        device.name,
        device.lut,
        device.dsp,
        lut_cap * 100.0
    );
    println!(
        "{:>11} {:>12} {:>10} {:>10}  feasible",
        "blk_out_sp2", "pred. LUT", "pred. DSP", "GOPS"
    );
    for row in design_table(device, &cost, lut_cap) {
        println!(
            "{:>11} {:>12.0} {:>10.0} {:>10.1}  {}",
            row.blk_out_sp2,
            row.predicted_lut,
            row.predicted_dsp,
            row.peak_gops,
            if row.feasible { "yes" } else { "no" }
        );
    }
    println!(
        "selected blk_out_sp2 = {} (fixed:sp2 = 1:{:.2}), pr_sp2 = {:.4}",
        selected.point.blk_out_sp2,
        selected.point.blk_out_sp2 as f64 / selected.point.blk_out_fixed as f64,
        selected.pr_sp2
    );

    if let Some(out) = cli.out.as_deref() {
        let peak = peak_throughput(&selected.point);
        atomic_write_json(
            out,
            &CharacterizeFragment {
                pr_sp2: selected.pr_sp2,
                device: device.name.clone(),
                design_point: selected.point,
                predicted_lut: selected.predicted_lut,
                predicted_dsp: selected.predicted_dsp,
                peak_gops: peak,
            },
        )?;
    }
    Ok(())
}

// ------------------------------------------------------------------ report

#[derive(Deserialize)]
struct ReportConfig {
    /// metrics.csv from `train`.
    #[serde(default)]
    metrics: Option<PathBuf>,
    /// Named stats.json files from `emulate`.
    #[serde(default)]
    stats: Vec<StatsRef>,
    /// Design point used for throughput estimates.
    #[serde(default)]
    design_point: Option<DesignPoint>,
}

#[derive(Deserialize)]
struct StatsRef {
    name: String,
    path: PathBuf,
}

#[derive(Serialize)]
struct ReportRow {
    name: String,
    float_acc: Option<f64>,
    quant_acc: Option<f64>,
    macs_fixed: Option<u64>,
    macs_sp2: Option<u64>,
    idle_slots: Option<u64>,
    cycles_ideal: Option<u64>,
    utilization: Option<f64>,
    est_gops: Option<f64>,
}

const REPORT_HEADER: &str =
    "name,float_acc,quant_acc,macs_fixed,macs_sp2,idle_slots,cycles_ideal,utilization,est_gops";

fn csv_cell<T: std::fmt::Display>(v: &Option<T>) -> String {
    v.as_ref().map(|x| x.to_string()).unwrap_or_default()
}

fn cmd_report(cli: &Cli) -> Result<(), Error> {
    let out = required_out(cli)?;
    let cfg: ReportConfig = match cli.config.as_deref() {
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("report config: {e}")))?
        }
        None => ReportConfig {
            metrics: None,
            stats: Vec::new(),
            design_point: None,
        },
    };

    let mut rows: Vec<ReportRow> = Vec::new();
    if let Some(metrics_path) = &cfg.metrics {
        let text = std::fs::read_to_string(metrics_path)?;
        let last = text
            .lines()
            .skip(1)
            .filter(|l| !l.trim().is_empty())
            .last()
            .ok_or_else(|| Error::Format("metrics csv has no data rows".into()))?;
        let fields: Vec<&str> = last.split(',').collect();
        if fields.len() != 4 {
            return Err(Error::Format("metrics csv row needs 4 fields".into()));
        }
        let parse = |s: &str| -> Result<f64, Error> {
            s.parse()
                .map_err(|_| Error::Format(format!("bad metrics value {s}")))
        };
        rows.push(ReportRow {
            name: "training".into(),
            float_acc: Some(parse(fields[2])?),
            quant_acc: Some(parse(fields[3])?),
            macs_fixed: None,
            macs_sp2: None,
            idle_slots: None,
            cycles_ideal: None,
            utilization: None,
            est_gops: None,
        });
    }
    for stat in &cfg.stats {
        let text = std::fs::read_to_string(&stat.path)?;
        let stats: GemmStats =
            serde_json::from_str(&text).map_err(|e| Error::Format(format!("stats json: {e}")))?;
        let est_gops = cfg
            .design_point
            .as_ref()
            .map(|dp| msq_core::fpga::estimate_layer_throughput(dp, &stats).0);
        rows.push(ReportRow {
            name: stat.name.clone(),
            float_acc: None,
            quant_acc: None,
            macs_fixed: Some(stats.macs_fixed),
            macs_sp2: Some(stats.macs_sp2),
            idle_slots: Some(stats.idle_slots),
            cycles_ideal: Some(stats.cycles_ideal),
            utilization: Some(stats.utilization()),
            est_gops,
        });
    }

    match cli.format {
        Format::Csv => {
            let mut text = format!("{REPORT_HEADER}\n");
            for r in &rows {
                text.push_str(&format!(
                    "{},{},{},{},{},{},{},{},{}\n",
                    r.name,
                    csv_cell(&r.float_acc),
                    csv_cell(&r.quant_acc),
                    csv_cell(&r.macs_fixed),
                    csv_cell(&r.macs_sp2),
                    csv_cell(&r.idle_slots),
                    csv_cell(&r.cycles_ideal),
                    csv_cell(&r.utilization),
                    csv_cell(&r.est_gops),
                ));
            }
            atomic_write(out, text.as_bytes())
        }
        Format::Json => atomic_write_json(out, &rows),
    }
}
