//! Layer composition and the full T-step forward pass.
//!
//! Evaluation is layer-major: a layer materializes its pre-activations for
//! the whole time window (they depend only on the previous layer's spikes),
//! normalizes the block with STFN, and only then runs the LIF recursion in
//! time. The normalization statistics span all T steps, so this ordering is
//! forced, not a convenience.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::aggregate::{ga_forward, gc_forward, AttnCache, GaLayerParams, GcLayerParams, GcOrder};
use crate::error::{Error, Result};
use crate::graph::SparseGraph;
use crate::neuron::{lif_step, stfn_forward, LifConfig, MembraneState, StfnCache, StfnParams};
use crate::rng::Rng;
use crate::tensor::{Features, Mat, SpikeTensor, Tensor3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Gc,
    Ga,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AggregatorParams {
    Gc(GcLayerParams),
    Ga(GaLayerParams),
}

/// One spiking layer: aggregator, normalizer, and neuron constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub in_dim: usize,
    pub out_dim: usize,
    pub lif: LifConfig,
    pub stfn: StfnParams,
    pub stfn_enabled: bool,
    pub agg: AggregatorParams,
    pub dropout_rate: f64,
}

impl LayerSpec {
    pub fn kind(&self) -> LayerKind {
        match self.agg {
            AggregatorParams::Gc(_) => LayerKind::Gc,
            AggregatorParams::Ga(_) => LayerKind::Ga,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_dim == 0 || self.out_dim == 0 {
            return Err(Error::Config("layer dims must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!(
                "dropout_rate must be in [0, 1), got {}",
                self.dropout_rate
            )));
        }
        self.lif.validate()
    }
}

/// Optional linear readout head mapping firing rates to logits. Off by
/// default; the rate vector itself is the logit vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReadoutHead {
    pub weight: Mat,
    pub bias: Vec<f64>,
}

fn default_readout_scale() -> f64 {
    1.0
}

/// All trainable state of a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub layers: Vec<LayerSpec>,
    pub readout: Option<ReadoutHead>,
    /// Fixed gain applied to the firing rates before they act as logits.
    /// Rates live in [0, 1], so without a gain the cross-entropy cannot be
    /// driven below ln((e + C - 1) / e) even at maximal margin and keeps
    /// pushing saturated parameters; a moderate gain lets confident rate
    /// patterns actually satisfy the loss.
    #[serde(default = "default_readout_scale")]
    pub readout_scale: f64,
    /// Decode the output layer from its time-averaged membrane drive
    /// instead of spike rates: the last layer integrates without firing
    /// and the logits are continuous. Hidden layers always spike.
    #[serde(default)]
    pub accumulator_output: bool,
}

impl ModelParams {
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Config("model needs at least one layer".into()));
        }
        for (i, layer) in self.layers.iter().enumerate() {
            layer.validate()?;
            if i > 0 && layer.in_dim != self.layers[i - 1].out_dim {
                return Err(Error::DimMismatch {
                    context: "layer dimension chain",
                    expected: format!("{}", self.layers[i - 1].out_dim),
                    got: format!("{}", layer.in_dim),
                });
            }
        }
        Ok(())
    }

    pub fn output_dim(&self) -> usize {
        if let Some(head) = &self.readout {
            head.weight.cols
        } else {
            self.layers.last().map_or(0, |l| l.out_dim)
        }
    }
}

/// Input to the first layer (encoded binary tensor) or a hidden layer
/// (previous layer's spike trace).
#[derive(Debug, Clone, Copy)]
pub enum SpikeInput<'a> {
    Encoded(&'a SpikeTensor),
    Hidden(&'a Tensor3),
}

impl<'a> SpikeInput<'a> {
    pub fn time_window(&self) -> usize {
        match self {
            SpikeInput::Encoded(s) => s.time_window(),
            SpikeInput::Hidden(t) => t.time_window,
        }
    }

    pub fn nodes(&self) -> usize {
        match self {
            SpikeInput::Encoded(s) => s.nodes(),
            SpikeInput::Hidden(t) => t.nodes,
        }
    }

    pub fn channels(&self) -> usize {
        match self {
            SpikeInput::Encoded(s) => s.channels(),
            SpikeInput::Hidden(t) => t.channels,
        }
    }

    pub fn frame(&self, t: usize) -> Features<'_> {
        match self {
            SpikeInput::Encoded(s) => Features::Binary(s.frame(t)),
            SpikeInput::Hidden(h) => h.frame_features(t),
        }
    }

    pub fn frame_nnz(&self, t: usize) -> usize {
        match self {
            SpikeInput::Encoded(s) => s.frame_nnz(t),
            SpikeInput::Hidden(h) => h.frame_nnz(t),
        }
    }
}

/// Everything the backward pass needs from one layer's forward evaluation.
#[derive(Debug, Clone)]
pub struct LayerTrace {
    /// Aggregated pre-synaptic inputs S, before normalization.
    pub pre_acts: Tensor3,
    /// LIF drive after STFN and (in training) dropout.
    pub normalized: Tensor3,
    pub potentials: Tensor3,
    /// Emitted spikes; binary in the spiking forward, real-valued ramp
    /// outputs in the relaxed forward used for gradient checks.
    pub spikes: Tensor3,
    pub stfn_cache: Option<StfnCache>,
    /// Per-time-step attention caches for GA layers.
    pub attn: Option<Vec<AttnCache>>,
    /// Kept-entry mask aligned with `normalized`, present when dropout ran.
    pub dropout_mask: Option<Vec<u8>>,
    pub dropout_scale: f64,
}

#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub layers: Vec<LayerTrace>,
    /// Time-averaged firing rates of the last spiking layer.
    pub rates: Mat,
    /// Logits entering the loss: the rates themselves, or the readout
    /// head's output when one is configured.
    pub logits: Mat,
    /// Set entries per time slice of the encoded input, for the profiler.
    pub input_nnz: Vec<usize>,
    pub time_window: usize,
}

impl ForwardTrace {
    /// Mean firing probability of each spiking layer.
    pub fn firing_rates(&self) -> Vec<f64> {
        self.layers
            .iter()
            .map(|l| {
                if l.spikes.data.is_empty() {
                    0.0
                } else {
                    l.spikes.data.iter().sum::<f64>() / l.spikes.data.len() as f64
                }
            })
            .collect()
    }
}

/// Execution order shared by the forward passes; transform-first exploits
/// binary sparsity.
pub const DEFAULT_GC_ORDER: GcOrder = GcOrder::TransformFirst;

/// Run one layer over the full time window: aggregate each slice, apply
/// STFN across the block, dropout in training, then the LIF recursion.
pub fn layer_forward(
    g: &SparseGraph,
    input: SpikeInput<'_>,
    spec: &LayerSpec,
    training: bool,
    dropout_rng: &mut Rng,
) -> Result<LayerTrace> {
    if input.channels() != spec.in_dim {
        return Err(Error::DimMismatch {
            context: "layer input channels",
            expected: format!("{}", spec.in_dim),
            got: format!("{}", input.channels()),
        });
    }
    let t_win = input.time_window();
    let nodes = input.nodes();
    let mut pre_acts = Tensor3::zeros(t_win, nodes, spec.out_dim);
    let mut attn_caches = Vec::new();
    for t in 0..t_win {
        let frame = input.frame(t);
        let aggregated = match &spec.agg {
            AggregatorParams::Gc(p) => gc_forward(g, frame, p, DEFAULT_GC_ORDER)?,
            AggregatorParams::Ga(p) => {
                let (out, cache) = ga_forward(g, frame, p)?;
                attn_caches.push(cache);
                out
            }
        };
        pre_acts.set_frame(t, &aggregated);
    }

    let (mut normalized, stfn_cache) = if spec.stfn_enabled {
        let (y, cache) = stfn_forward(&pre_acts, &spec.stfn, spec.lif.v_threshold);
        (y, Some(cache))
    } else {
        (pre_acts.clone(), None)
    };

    let (dropout_mask, dropout_scale) = if training && spec.dropout_rate > 0.0 {
        let keep = 1.0 - spec.dropout_rate;
        let scale = 1.0 / keep;
        let mut mask = vec![0u8; normalized.data.len()];
        for (m, y) in mask.iter_mut().zip(normalized.data.iter_mut()) {
            if dropout_rng.bernoulli(keep) {
                *m = 1;
                *y *= scale;
            } else {
                *y = 0.0;
            }
        }
        (Some(mask), scale)
    } else {
        (None, 1.0)
    };

    let mut potentials = Tensor3::zeros(t_win, nodes, spec.out_dim);
    let mut spikes = Tensor3::zeros(t_win, nodes, spec.out_dim);
    let mut state = MembraneState::zeros(nodes, spec.out_dim);
    for t in 0..t_win {
        let mut drive = Mat::zeros(nodes, spec.out_dim);
        drive.data.copy_from_slice(normalized.frame(t));
        let (next, spike) = lif_step(&state, &drive, &spec.lif);
        potentials.frame_mut(t).copy_from_slice(&next.potential.data);
        spikes.frame_mut(t).copy_from_slice(&spike.data);
        state = next;
    }

    Ok(LayerTrace {
        pre_acts,
        normalized,
        potentials,
        spikes,
        stfn_cache,
        attn: if attn_caches.is_empty() {
            None
        } else {
            Some(attn_caches)
        },
        dropout_mask,
        dropout_scale,
    })
}

/// Rate decoding: mean spike count per step, one row per node.
pub fn readout(final_spikes: &Tensor3) -> Mat {
    let mut rates = Mat::zeros(final_spikes.nodes, final_spikes.channels);
    for t in 0..final_spikes.time_window {
        for (r, &s) in rates.data.iter_mut().zip(final_spikes.frame(t)) {
            *r += s;
        }
    }
    let inv = 1.0 / final_spikes.time_window as f64;
    rates.data.iter_mut().for_each(|x| *x *= inv);
    rates
}

/// Full forward pass over all layers in layer-major order.
pub fn model_forward(
    g: &SparseGraph,
    encoded: &SpikeTensor,
    params: &ModelParams,
    training: bool,
    dropout_seed: u64,
) -> Result<ForwardTrace> {
    params.validate()?;
    if params.layers[0].in_dim != encoded.channels() {
        return Err(Error::DimMismatch {
            context: "model input channels",
            expected: format!("{}", params.layers[0].in_dim),
            got: format!("{}", encoded.channels()),
        });
    }
    let t_win = encoded.time_window();
    let input_nnz = (0..t_win).map(|t| encoded.frame_nnz(t)).collect();
    let mut rng = Rng::from_seed(dropout_seed).derive(0xd0);

    let mut layers: Vec<LayerTrace> = Vec::with_capacity(params.layers.len());
    for (i, spec) in params.layers.iter().enumerate() {
        let input = if i == 0 {
            SpikeInput::Encoded(encoded)
        } else {
            SpikeInput::Hidden(&layers[i - 1].spikes)
        };
        let is_output = i + 1 == params.layers.len();
        let trace = if is_output && params.accumulator_output {
            accumulator_layer_forward(g, input, spec, training, &mut rng)?
        } else {
            layer_forward(g, input, spec, training, &mut rng)?
        };
        layers.push(trace);
    }
    let last = layers.last().unwrap();
    let rates = if params.accumulator_output {
        // time-averaged membrane drive of the non-firing output layer
        readout(&last.normalized)
    } else {
        readout(&last.spikes)
    };
    let logits = apply_readout(&rates, params.readout.as_ref(), params.readout_scale);
    Ok(ForwardTrace {
        layers,
        rates,
        logits,
        input_nnz,
        time_window: t_win,
    })
}

/// Output-layer variant that integrates without firing: aggregation and
/// STFN run as usual, but no spikes are emitted and the potential is the
/// plain running sum of the drive. The decoded quantity is the
/// time-averaged drive itself.
fn accumulator_layer_forward(
    g: &SparseGraph,
    input: SpikeInput<'_>,
    spec: &LayerSpec,
    training: bool,
    dropout_rng: &mut Rng,
) -> Result<LayerTrace> {
    if input.channels() != spec.in_dim {
        return Err(Error::DimMismatch {
            context: "layer input channels",
            expected: format!("{}", spec.in_dim),
            got: format!("{}", input.channels()),
        });
    }
    let t_win = input.time_window();
    let nodes = input.nodes();
    let mut pre_acts = Tensor3::zeros(t_win, nodes, spec.out_dim);
    let mut attn_caches = Vec::new();
    for t in 0..t_win {
        let frame = input.frame(t);
        let aggregated = match &spec.agg {
            AggregatorParams::Gc(p) => gc_forward(g, frame, p, DEFAULT_GC_ORDER)?,
            AggregatorParams::Ga(p) => {
                let (out, cache) = ga_forward(g, frame, p)?;
                attn_caches.push(cache);
                out
            }
        };
        pre_acts.set_frame(t, &aggregated);
    }
    let (mut normalized, stfn_cache) = if spec.stfn_enabled {
        let (y, cache) = stfn_forward(&pre_acts, &spec.stfn, spec.lif.v_threshold);
        (y, Some(cache))
    } else {
        (pre_acts.clone(), None)
    };
    let (dropout_mask, dropout_scale) = if training && spec.dropout_rate > 0.0 {
        let keep = 1.0 - spec.dropout_rate;
        let scale = 1.0 / keep;
        let mut mask = vec![0u8; normalized.data.len()];
        for (m, y) in mask.iter_mut().zip(normalized.data.iter_mut()) {
            if dropout_rng.bernoulli(keep) {
                *m = 1;
                *y *= scale;
            } else {
                *y = 0.0;
            }
        }
        (Some(mask), scale)
    } else {
        (None, 1.0)
    };

    let mut potentials = Tensor3::zeros(t_win, nodes, spec.out_dim);
    let mut running = vec![0.0; nodes * spec.out_dim];
    for t in 0..t_win {
        let drive = normalized.frame(t);
        for (acc, &y) in running.iter_mut().zip(drive) {
            *acc += y;
        }
        potentials.frame_mut(t).copy_from_slice(&running);
    }

    Ok(LayerTrace {
        pre_acts,
        normalized,
        potentials,
        spikes: Tensor3::zeros(t_win, nodes, spec.out_dim),
        stfn_cache,
        attn: if attn_caches.is_empty() {
            None
        } else {
            Some(attn_caches)
        },
        dropout_mask,
        dropout_scale,
    })
}

pub fn apply_readout(rates: &Mat, head: Option<&ReadoutHead>, scale: f64) -> Mat {
    let mut scaled = rates.clone();
    scaled.data.iter_mut().for_each(|x| *x *= scale);
    match head {
        None => scaled,
        Some(h) => {
            let mut out = Features::from_mat(&scaled).matmul(&h.weight).expect(
                "readout head dims are validated at construction",
            );
            for r in 0..out.rows {
                for (o, &b) in out.row_mut(r).iter_mut().zip(h.bias.iter()) {
                    *o += b;
                }
            }
            out
        }
    }
}

/// Softmax cross-entropy summed over the masked nodes. Returns the loss and
/// its gradient with respect to the logits (nonzero only on masked rows).
pub fn masked_cross_entropy(
    logits: &Mat,
    labels: &[usize],
    mask: &[usize],
) -> Result<(f64, Mat)> {
    if mask.is_empty() {
        return Err(Error::EmptyMask);
    }
    let mut grad = Mat::zeros(logits.rows, logits.cols);
    let mut loss = 0.0;
    for &node in mask {
        let row = logits.row(node);
        let label = labels[node];
        debug_assert!(label < logits.cols);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|&x| (x - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        loss -= (exps[label] / total).ln();
        let dst = grad.row_mut(node);
        for (c, (&e, d)) in exps.iter().zip(dst.iter_mut()).enumerate() {
            *d = e / total - if c == label { 1.0 } else { 0.0 };
        }
    }
    Ok((loss, grad))
}

/// Fraction of masked nodes whose argmax prediction matches the label.
/// Ties resolve to the lowest class index.
pub fn accuracy(logits: &Mat, labels: &[usize], mask: &[usize]) -> Result<f64> {
    if mask.is_empty() {
        return Err(Error::EmptyMask);
    }
    let mut correct = 0usize;
    for &node in mask {
        let row = logits.row(node);
        let mut best = 0usize;
        for (c, &x) in row.iter().enumerate() {
            if x > row[best] {
                best = c;
            }
        }
        if best == labels[node] {
            correct += 1;
        }
    }
    Ok(correct as f64 / mask.len() as f64)
}

/// Versioned JSON checkpoint of the model, the configuration, and the seed
/// that produced it (the seed pins the encoding stream for stochastic
/// encoders). Round-trips bit-exactly: serde_json prints every f64 with
/// enough digits to reparse to the identical bits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config: crate::train::RunConfig,
    pub seed: u64,
    pub model: ModelParams,
}

pub const CHECKPOINT_VERSION: u32 = 1;

impl Checkpoint {
    pub fn new(config: crate::train::RunConfig, seed: u64, model: ModelParams) -> Self {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            config,
            seed,
            model,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)
            .map_err(|e| Error::Checkpoint(format!("serialize: {e}")))?;
        fs::write(path, text).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        let ckpt: Checkpoint = serde_json::from_str(&text)
            .map_err(|e| Error::Checkpoint(format!("parse {}: {e}", path.display())))?;
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {}",
                ckpt.version
            )));
        }
        ckpt.model.validate()?;
        Ok(ckpt)
    }
}
