//! Quantization-aware training of a small fully-connected classifier.
//!
//! The outer loop alternates three steps per epoch, all on the weight side:
//! re-partition every layer's rows by variance, project `W + U` onto the
//! active level sets (`Z`-update), and advance the scaled dual
//! (`U <- W - Z + U`). Mini-batch SGD then descends the cross-entropy loss
//! plus the penalty `1/2 * sum ||W - Z + U||^2` with a fixed unit
//! coefficient. Activations are quantized in the forward pass only; their
//! quantizer backpropagates as identity inside the clip range and zero
//! outside (straight-through estimator). Weight projection never enters the
//! backward pass: the penalty term alone pulls `W` toward the level sets,
//! and the returned model is hard-projected at the end.
//!
//! Activation clip values are calibrated as the running per-layer input
//! maximum over the first epoch and frozen afterwards.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::partition::{partition_layer, RowPartition};
use crate::quant::{choose_alpha_mixed, project_matrix, ActQuant, QuantizedLayer, SchemePair};
use crate::tensor::{matmul, Dataset, Matrix2D, Rng};

/// One dense layer: `weights` is output-channels x input-channels.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: Matrix2D,
    pub bias: Vec<f64>,
    pub relu: bool,
}

/// Fully-connected classifier with ReLU hidden layers and a softmax
/// cross-entropy head.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub layers: Vec<Layer>,
}

impl MlpModel {
    /// Builds a model for `dims = [inputs, hidden.., classes]` with scaled
    /// normal init; hidden layers get ReLU, the head stays linear.
    pub fn new(dims: &[usize], rng: &mut Rng) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::Config(
                "model needs at least input and output dims".into(),
            ));
        }
        let mut layers = Vec::new();
        for i in 0..dims.len() - 1 {
            let (fan_in, fan_out) = (dims[i], dims[i + 1]);
            let scale = (2.0 / fan_in as f64).sqrt();
            let weights = Matrix2D::from_fn(fan_out, fan_in, |_, _| scale * rng.normal());
            layers.push(Layer {
                weights,
                bias: vec![0.0; fan_out],
                relu: i + 1 < dims.len() - 1,
            });
        }
        Ok(Self { layers })
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Config("model has no layers".into()));
        }
        for pair in self.layers.windows(2) {
            if pair[0].weights.rows() != pair[1].weights.cols() {
                return Err(Error::Shape(format!(
                    "layer output {} feeds layer input {}",
                    pair[0].weights.rows(),
                    pair[1].weights.cols()
                )));
            }
        }
        for l in &self.layers {
            if l.bias.len() != l.weights.rows() {
                return Err(Error::Shape("bias length != output channels".into()));
            }
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weights.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().weights.rows()
    }
}

/// Intermediate values kept for the backward pass.
pub struct ForwardCache {
    /// Per layer: input before activation quantization.
    pub prequant: Vec<Matrix2D>,
    /// Per layer: input actually multiplied (fake-quantized when enabled).
    pub inputs: Vec<Matrix2D>,
    /// Per layer: preactivation `x W^T + b`.
    pub preact: Vec<Matrix2D>,
    /// The activation quantizers the pass ran with, if any.
    pub act_quants: Option<Vec<ActQuant>>,
    pub logits: Matrix2D,
}

/// Forward pass. When `aq` is given (one quantizer per layer) each layer's
/// input is quantize-dequantized before the matmul, per the training loop's
/// activation projection; `prequant` keeps the raw values for the STE mask.
pub fn forward(
    model: &MlpModel,
    batch: &Matrix2D,
    aq: Option<&[ActQuant]>,
) -> Result<(Matrix2D, ForwardCache)> {
    model.validate()?;
    if batch.cols() != model.input_dim() {
        return Err(Error::Shape(format!(
            "batch has {} features, model expects {}",
            batch.cols(),
            model.input_dim()
        )));
    }
    if let Some(aq) = aq {
        if aq.len() != model.layers.len() {
            return Err(Error::Shape(
                "need one activation quantizer per layer".into(),
            ));
        }
    }
    let mut prequant = Vec::with_capacity(model.layers.len());
    let mut inputs = Vec::with_capacity(model.layers.len());
    let mut preact = Vec::with_capacity(model.layers.len());
    let mut h = batch.clone();
    for (l, layer) in model.layers.iter().enumerate() {
        prequant.push(h.clone());
        let x = match aq {
            Some(aq) => {
                Matrix2D::from_fn(h.rows(), h.cols(), |r, c| aq[l].fake_quantize(h.get(r, c)))
            }
            None => h.clone(),
        };
        let mut z = matmul(&x, &layer.weights.transpose())?;
        for r in 0..z.rows() {
            for c in 0..z.cols() {
                z.set(r, c, z.get(r, c) + layer.bias[c]);
            }
        }
        inputs.push(x);
        preact.push(z.clone());
        h = if layer.relu {
            Matrix2D::from_fn(z.rows(), z.cols(), |r, c| z.get(r, c).max(0.0))
        } else {
            z
        };
    }
    let logits = h;
    Ok((
        logits.clone(),
        ForwardCache {
            prequant,
            inputs,
            preact,
            act_quants: aq.map(|a| a.to_vec()),
            logits,
        },
    ))
}

/// Mean softmax cross-entropy and its gradient w.r.t. the logits.
pub fn softmax_cross_entropy(logits: &Matrix2D, labels: &[usize]) -> Result<(f64, Matrix2D)> {
    if logits.rows() != labels.len() {
        return Err(Error::Shape("one label per logit row required".into()));
    }
    let b = logits.rows() as f64;
    let mut loss = 0.0;
    let mut dlogits = Matrix2D::zeros(logits.rows(), logits.cols());
    for (r, &label) in labels.iter().enumerate() {
        let row = logits.row(r);
        if label >= row.len() {
            return Err(Error::Config(format!("label {label} out of range")));
        }
        let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss += lse - row[label];
        for (c, &l) in row.iter().enumerate() {
            let p = (l - lse).exp();
            dlogits.set(r, c, (p - if c == label { 1.0 } else { 0.0 }) / b);
        }
    }
    Ok((loss / b, dlogits))
}

/// Per-parameter gradients.
pub struct Gradients {
    pub dw: Vec<Matrix2D>,
    pub db: Vec<Vec<f64>>,
}

/// Per-layer ADMM variables. After every Z-update, `z` lies exactly in the
/// active level sets and `u` carries the running residual.
#[derive(Debug, Clone)]
pub struct AdmmState {
    pub z: Vec<Matrix2D>,
    pub u: Vec<Matrix2D>,
    pub alphas: Vec<f64>,
    pub partitions: Vec<RowPartition>,
    pub epoch: usize,
}

impl AdmmState {
    /// `U = 0`, `Z = W`.
    pub fn init(model: &MlpModel) -> Self {
        let z = model.layers.iter().map(|l| l.weights.clone()).collect();
        let u = model
            .layers
            .iter()
            .map(|l| Matrix2D::zeros(l.weights.rows(), l.weights.cols()))
            .collect();
        Self {
            z,
            u,
            alphas: vec![1.0; model.layers.len()],
            partitions: Vec::new(),
            epoch: 0,
        }
    }

    /// `1/2 * sum_l ||W_l - Z_l + U_l||^2`.
    pub fn penalty(&self, model: &MlpModel) -> Result<f64> {
        let mut acc = 0.0;
        for (l, layer) in model.layers.iter().enumerate() {
            let r = layer
                .weights
                .add_scaled(&self.z[l], -1.0)?
                .add_scaled(&self.u[l], 1.0)?;
            acc += 0.5 * r.frob_sq();
        }
        Ok(acc)
    }
}

/// One ADMM update: `Z <- proj(W + U)` under the given per-layer partitions
/// (the scale is re-fit to `W + U` each time), then `U <- W - Z + U`.
pub fn admm_step(
    model: &MlpModel,
    state: &mut AdmmState,
    partitions: &[RowPartition],
    pair: &SchemePair,
    act_bits: u32,
) -> Result<()> {
    if partitions.len() != model.layers.len() {
        return Err(Error::Shape("one partition per layer required".into()));
    }
    for (l, layer) in model.layers.iter().enumerate() {
        let target = layer.weights.add_scaled(&state.u[l], 1.0)?;
        let alpha = choose_alpha_mixed(&target, &partitions[l], pair)?;
        let (z, _) = project_matrix(&target, &partitions[l], pair, alpha, act_bits)?;
        // U <- W - Z + U
        state.u[l] = layer
            .weights
            .add_scaled(&z, -1.0)?
            .add_scaled(&state.u[l], 1.0)?;
        state.z[l] = z;
        state.alphas[l] = alpha;
    }
    state.partitions = partitions.to_vec();
    state.epoch += 1;
    Ok(())
}

/// Backward pass for cross-entropy plus the ADMM penalty.
///
/// The activation quantizer recorded in the cache contributes an identity
/// gradient where its input sat inside `[0, alpha_a]` and zero elsewhere;
/// weight gradients take the penalty term `(W - Z + U)` when `admm` is
/// present.
pub fn backward_ste(
    model: &MlpModel,
    cache: &ForwardCache,
    labels: &[usize],
    admm: Option<&AdmmState>,
) -> Result<Gradients> {
    let (_, mut dz) = softmax_cross_entropy(&cache.logits, labels)?;
    let n = model.layers.len();
    let mut dw = vec![Matrix2D::zeros(1, 1); n];
    let mut db = vec![Vec::new(); n];
    for l in (0..n).rev() {
        let layer = &model.layers[l];
        dw[l] = matmul(&dz.transpose(), &cache.inputs[l])?;
        db[l] = (0..dz.cols())
            .map(|c| (0..dz.rows()).map(|r| dz.get(r, c)).sum())
            .collect();
        if let Some(state) = admm {
            let penalty_grad = layer
                .weights
                .add_scaled(&state.z[l], -1.0)?
                .add_scaled(&state.u[l], 1.0)?;
            dw[l] = dw[l].add_scaled(&penalty_grad, 1.0)?;
        }
        if l == 0 {
            break;
        }
        let mut dh = matmul(&dz, &layer.weights)?;
        if let Some(aq) = &cache.act_quants {
            let pre = &cache.prequant[l];
            dh = Matrix2D::from_fn(dh.rows(), dh.cols(), |r, c| {
                if aq[l].in_pass_range(pre.get(r, c)) {
                    dh.get(r, c)
                } else {
                    0.0
                }
            });
        }
        if model.layers[l - 1].relu {
            let zprev = &cache.preact[l - 1];
            dz = Matrix2D::from_fn(dh.rows(), dh.cols(), |r, c| {
                if zprev.get(r, c) > 0.0 {
                    dh.get(r, c)
                } else {
                    0.0
                }
            });
        } else {
            dz = dh;
        }
    }
    Ok(Gradients { dw, db })
}

fn default_true() -> bool {
    true
}

/// Hyperparameters of one training run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Target fraction of rows on the SP2 scheme, typically from device
    /// characterization.
    pub pr_sp2: f64,
    pub fixed_bits: u32,
    pub sp2_bits: (u32, u32),
    pub act_bits: u32,
    pub seed: u64,
    /// When false the run degenerates to plain float SGD (no projection,
    /// no activation quantization).
    #[serde(default = "default_true")]
    pub quantize: bool,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be >= 1".into()));
        }
        if self.learning_rate <= 0.0 || !self.learning_rate.is_finite() {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.pr_sp2) {
            return Err(Error::Config(format!(
                "pr_sp2 {} outside [0, 1]",
                self.pr_sp2
            )));
        }
        SchemePair::new(self.fixed_bits, self.sp2_bits)?;
        ActQuant::new(self.act_bits, 1.0)?;
        Ok(())
    }
}

/// Per-epoch record written to the metrics CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Mean training loss of the quantized branch (CE + penalty).
    pub loss: f64,
    pub float_acc: f64,
    pub quant_acc: f64,
}

/// Everything a training run produces.
pub struct TrainOutcome {
    /// Plain-SGD baseline trained on the identical schedule.
    pub float_model: MlpModel,
    /// Hard-projected quantized model; every weight is a level-set member.
    pub quant_model: MlpModel,
    /// Encoded form of each quantized layer.
    pub layers: Vec<QuantizedLayer>,
    /// Frozen per-layer activation quantizers (None when disabled).
    pub act_quants: Option<Vec<ActQuant>>,
    pub metrics: Vec<EpochMetrics>,
    pub float_accuracy: f64,
    pub quant_accuracy: f64,
}

fn slice_rows(m: &Matrix2D, start: usize, end: usize) -> Matrix2D {
    Matrix2D::from_fn(end - start, m.cols(), |r, c| m.get(start + r, c))
}

/// Classification accuracy by logit argmax.
pub fn evaluate(model: &MlpModel, ds: &Dataset, aq: Option<&[ActQuant]>) -> Result<f64> {
    let (logits, _) = forward(model, &ds.inputs, aq)?;
    let correct = (0..ds.len())
        .filter(|&i| {
            let row = logits.row(i);
            let argmax = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            argmax == ds.labels[i]
        })
        .count();
    Ok(correct as f64 / ds.len() as f64)
}

fn sgd_step(model: &mut MlpModel, grads: &Gradients, lr: f64) {
    for (layer, (dw, db)) in model.layers.iter_mut().zip(grads.dw.iter().zip(&grads.db)) {
        layer.weights = layer
            .weights
            .add_scaled(dw, -lr)
            .expect("gradient shape matches weights");
        for (b, g) in layer.bias.iter_mut().zip(db) {
            *b -= lr * g;
        }
    }
}

/// Hard projection of the model's current weights: re-partitions on `W`,
/// re-fits the scale, and snaps every weight onto its level.
pub fn project_model(
    model: &MlpModel,
    pr_sp2: f64,
    pair: &SchemePair,
    act_bits: u32,
) -> Result<(MlpModel, Vec<QuantizedLayer>)> {
    let mut projected = model.clone();
    let mut encoded = Vec::new();
    for layer in projected.layers.iter_mut() {
        let partition = partition_layer(&layer.weights, pr_sp2)?;
        let alpha = choose_alpha_mixed(&layer.weights, &partition, pair)?;
        let (q, enc) = project_matrix(&layer.weights, &partition, pair, alpha, act_bits)?;
        layer.weights = q;
        encoded.push(enc);
    }
    Ok((projected, encoded))
}

/// Runs the full mixed-scheme quantization training loop next to its float
/// baseline. Both branches start from `model` and consume identical batch
/// schedules, so a run with `quantize: false` reproduces the baseline
/// trajectory exactly.
pub fn train(model: &MlpModel, dataset: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    model.validate()?;
    if dataset.inputs.cols() != model.input_dim() {
        return Err(Error::Shape(
            "dataset features do not match model input".into(),
        ));
    }
    if dataset.num_classes != model.output_dim() {
        return Err(Error::Shape(
            "dataset classes do not match model output".into(),
        ));
    }
    let pair = SchemePair::new(cfg.fixed_bits, cfg.sp2_bits)?;
    let n = dataset.len();
    let batches: Vec<(usize, usize)> = (0..n)
        .step_by(cfg.batch_size)
        .map(|s| (s, (s + cfg.batch_size).min(n)))
        .collect();

    let mut float_model = model.clone();
    let mut quant_model = model.clone();
    let mut state = AdmmState::init(&quant_model);
    let mut act_quants: Option<Vec<ActQuant>> = None;
    let mut metrics = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        // float baseline epoch
        for &(s, e) in &batches {
            let xb = slice_rows(&dataset.inputs, s, e);
            let yb = &dataset.labels[s..e];
            let (_, cache) = forward(&float_model, &xb, None)?;
            let grads = backward_ste(&float_model, &cache, yb, None)?;
            sgd_step(&mut float_model, &grads, cfg.learning_rate);
        }

        // quantized branch epoch
        let mut loss_sum = 0.0;
        if cfg.quantize {
            let partitions: Vec<RowPartition> = quant_model
                .layers
                .iter()
                .map(|l| partition_layer(&l.weights, cfg.pr_sp2))
                .collect::<Result<_>>()?;
            admm_step(&quant_model, &mut state, &partitions, &pair, cfg.act_bits)?;

            let mut running_max = vec![0.0f64; quant_model.layers.len()];
            for &(s, e) in &batches {
                let xb = slice_rows(&dataset.inputs, s, e);
                let yb = &dataset.labels[s..e];
                let (logits, cache) = forward(&quant_model, &xb, act_quants.as_deref())?;
                if epoch == 1 {
                    for (l, pre) in cache.prequant.iter().enumerate() {
                        running_max[l] = running_max[l].max(pre.max_abs());
                    }
                }
                let (ce, _) = softmax_cross_entropy(&logits, yb)?;
                let loss = ce + state.penalty(&quant_model)?;
                if !loss.is_finite() {
                    return Err(Error::Diverged { epoch });
                }
                loss_sum += loss;
                let grads = backward_ste(&quant_model, &cache, yb, Some(&state))?;
                sgd_step(&mut quant_model, &grads, cfg.learning_rate);
            }
            if epoch == 1 {
                act_quants = Some(
                    running_max
                        .iter()
                        .map(|&m| ActQuant::new(cfg.act_bits, m.max(1e-6)))
                        .collect::<Result<_>>()?,
                );
            }
        } else {
            // mirror of the float branch so trajectories match bit for bit
            for &(s, e) in &batches {
                let xb = slice_rows(&dataset.inputs, s, e);
                let yb = &dataset.labels[s..e];
                let (logits, cache) = forward(&quant_model, &xb, None)?;
                let (ce, _) = softmax_cross_entropy(&logits, yb)?;
                if !ce.is_finite() {
                    return Err(Error::Diverged { epoch });
                }
                loss_sum += ce;
                let grads = backward_ste(&quant_model, &cache, yb, None)?;
                sgd_step(&mut quant_model, &grads, cfg.learning_rate);
            }
        }

        let float_acc = evaluate(&float_model, dataset, None)?;
        let quant_acc = if cfg.quantize {
            let (snapshot, _) = project_model(&quant_model, cfg.pr_sp2, &pair, cfg.act_bits)?;
            evaluate(&snapshot, dataset, act_quants.as_deref())?
        } else {
            evaluate(&quant_model, dataset, None)?
        };
        metrics.push(EpochMetrics {
            epoch,
            loss: loss_sum / batches.len() as f64,
            float_acc,
            quant_acc,
        });
    }

    let (quant_model, layers) = if cfg.quantize {
        let (m, l) = project_model(&quant_model, cfg.pr_sp2, &pair, cfg.act_bits)?;
        (m, l)
    } else {
        (quant_model, Vec::new())
    };
    let float_accuracy = evaluate(&float_model, dataset, None)?;
    let quant_accuracy = evaluate(&quant_model, dataset, act_quants.as_deref())?;
    Ok(TrainOutcome {
        float_model,
        quant_model,
        layers,
        act_quants,
        metrics,
        float_accuracy,
        quant_accuracy,
    })
}
