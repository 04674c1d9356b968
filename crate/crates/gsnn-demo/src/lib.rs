//! Browser playground for the spiking graph network: a LIF membrane
//! explorer, an STFN before/after distribution view, and a live training
//! loop on a small built-in community graph. Compiled to wasm with
//! `wasm-pack build --target web`; the page in `www/` draws everything on
//! plain canvases from the JSON these functions return.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use gsnn::data::{Dataset, Split};
use gsnn::network::{masked_cross_entropy, model_forward, ModelParams};
use gsnn::neuron::{lif_step, stfn_forward, LifConfig, MembraneState, StfnParams};
use gsnn::rng::Rng;
use gsnn::tensor::{Mat, Tensor3};
use gsnn::train::{
    adam_step, backward, init_model, AdamState, RunConfig, ADAM_BETAS, ADAM_EPS,
};
use gsnn::{accuracy, build_graph, LayerKind};

#[derive(Serialize)]
struct LifTrace {
    potentials: Vec<f64>,
    spikes: Vec<u8>,
    threshold: f64,
}

/// Run a single LIF neuron over a drive signal and report the membrane
/// trajectory plus emitted spikes.
#[wasm_bindgen]
pub fn lif_trace(kappa: f64, v_threshold: f64, drive: Vec<f64>) -> String {
    let cfg = LifConfig {
        kappa: kappa.clamp(0.0, 0.999),
        v_threshold: v_threshold.max(1e-6),
    };
    let mut state = MembraneState::zeros(1, 1);
    let mut potentials = Vec::with_capacity(drive.len());
    let mut spikes = Vec::with_capacity(drive.len());
    for &x in &drive {
        let mut input = Mat::zeros(1, 1);
        input.data[0] = x;
        let (next, spike) = lif_step(&state, &input, &cfg);
        potentials.push(next.potential.data[0]);
        spikes.push(spike.data[0] as u8);
        state = next;
    }
    let trace = LifTrace {
        potentials,
        spikes,
        threshold: cfg.v_threshold,
    };
    serde_json::to_string(&trace).unwrap()
}

#[derive(Serialize)]
struct StfnDemo {
    before: Vec<f64>,
    after: Vec<f64>,
    target_std: f64,
}

/// Sample a skewed pre-activation tensor, normalize it, and return both
/// value clouds for histogram plotting.
#[wasm_bindgen]
pub fn stfn_demo(seed: u64, time_window: usize, channels: usize, rho: f64, v_threshold: f64) -> String {
    let t = time_window.clamp(1, 32);
    let c = channels.clamp(1, 64);
    let nodes = 24;
    let mut rng = Rng::from_seed(seed);
    let mut pre = Tensor3::zeros(t, nodes, c);
    for v in 0..nodes {
        // per-node offset and scale so the raw distribution is visibly
        // uncentered relative to the firing threshold
        let offset = rng.uniform(-1.5, 2.5);
        let spread = rng.uniform(0.2, 1.2);
        for step in 0..t {
            for k in 0..c {
                let u = rng.next_f64() + rng.next_f64() + rng.next_f64() - 1.5;
                *pre.at_mut(step, v, k) = offset + spread * u;
            }
        }
    }
    let mut params = StfnParams::new(nodes, c);
    params.rho = rho.max(0.05);
    let (out, _) = stfn_forward(&pre, &params, v_threshold.max(1e-6));
    let demo = StfnDemo {
        before: pre.data,
        after: out.data,
        target_std: params.rho * v_threshold,
    };
    serde_json::to_string(&demo).unwrap()
}

#[derive(Serialize)]
struct DemoGraph {
    nodes: Vec<DemoNode>,
    edges: Vec<(usize, usize)>,
    classes: usize,
}

#[derive(Serialize)]
struct DemoNode {
    x: f64,
    y: f64,
    class: usize,
    train: bool,
}

#[derive(Serialize)]
struct EpochReport {
    epoch: usize,
    loss: f64,
    train_acc: f64,
    test_acc: f64,
    firing_rates: Vec<f64>,
    predictions: Vec<usize>,
}

/// Interactive trainer over a built-in three-community graph.
#[wasm_bindgen]
pub struct DemoTrainer {
    dataset: Dataset,
    cfg: RunConfig,
    model: ModelParams,
    adam: AdamState,
    epoch: usize,
    positions: Vec<(f64, f64)>,
    seed: u64,
}

const DEMO_CLASSES: usize = 3;
const DEMO_PER_CLASS: usize = 16;
const DEMO_FEATURES: usize = 12;

fn demo_dataset(seed: u64) -> (Dataset, Vec<(f64, f64)>) {
    let n = DEMO_CLASSES * DEMO_PER_CLASS;
    let mut rng = Rng::from_seed(seed);
    let mut edges = Vec::new();
    for u in 0..n {
        for v in (u + 1)..n {
            let same = u / DEMO_PER_CLASS == v / DEMO_PER_CLASS;
            let p = if same { 0.22 } else { 0.015 };
            if rng.bernoulli(p) {
                edges.push((u, v));
            }
        }
    }
    let band = DEMO_FEATURES / DEMO_CLASSES;
    let mut features = vec![0u8; n * DEMO_FEATURES];
    let mut labels = vec![0usize; n];
    for node in 0..n {
        let class = node / DEMO_PER_CLASS;
        labels[node] = class;
        for k in 0..DEMO_FEATURES {
            let p = if k / band == class { 0.6 } else { 0.08 };
            if rng.bernoulli(p) {
                features[node * DEMO_FEATURES + k] = 1;
            }
        }
    }
    // four labeled nodes per community; the rest is the test pool
    let mut train = Vec::new();
    let mut test = Vec::new();
    for node in 0..n {
        if node % DEMO_PER_CLASS < 4 {
            train.push(node);
        } else {
            test.push(node);
        }
    }
    let dataset = Dataset {
        graph: build_graph(n, &edges).unwrap(),
        features,
        feature_dim: DEMO_FEATURES,
        labels,
        class_count: DEMO_CLASSES,
        class_names: (0..DEMO_CLASSES).map(|c| format!("c{c}")).collect(),
        node_ids: (0..n).map(|i| format!("n{i}")).collect(),
        split: Split {
            train: train.clone(),
            val: test.clone(),
            test,
        },
        skipped_edges: 0,
    };
    // cluster layout: one blob per community on a ring
    let mut positions = Vec::with_capacity(n);
    for node in 0..n {
        let class = node / DEMO_PER_CLASS;
        let angle = std::f64::consts::TAU * class as f64 / DEMO_CLASSES as f64;
        let (cx, cy) = (0.5 + 0.3 * angle.cos(), 0.5 + 0.3 * angle.sin());
        let r = 0.16 * rng.next_f64().sqrt();
        let theta = std::f64::consts::TAU * rng.next_f64();
        positions.push((cx + r * theta.cos(), cy + r * theta.sin()));
    }
    (dataset, positions)
}

#[wasm_bindgen]
impl DemoTrainer {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u64, use_attention: bool, stfn_enabled: bool, time_window: usize) -> DemoTrainer {
        let (dataset, positions) = demo_dataset(seed);
        let cfg = RunConfig {
            time_window: time_window.clamp(1, 16),
            hidden_dims: vec![10],
            layer_kind: if use_attention {
                LayerKind::Ga
            } else {
                LayerKind::Gc
            },
            stfn_enabled,
            dropout_rate: 0.2,
            weight_decay: 1e-4,
            seeds: vec![seed],
            ..RunConfig::default()
        };
        let model = init_model(
            &cfg,
            dataset.feature_dim,
            dataset.class_count,
            dataset.num_nodes(),
            seed,
        );
        let adam = AdamState::new(&model);
        DemoTrainer {
            dataset,
            cfg,
            model,
            adam,
            epoch: 0,
            positions,
            seed,
        }
    }

    /// Static layout and structure, drawn once.
    pub fn graph_json(&self) -> String {
        let nodes = (0..self.dataset.num_nodes())
            .map(|i| DemoNode {
                x: self.positions[i].0,
                y: self.positions[i].1,
                class: self.dataset.labels[i],
                train: self.dataset.split.train.contains(&i),
            })
            .collect();
        let graph = DemoGraph {
            nodes,
            edges: self.dataset.graph.edges().to_vec(),
            classes: self.dataset.class_count,
        };
        serde_json::to_string(&graph).unwrap()
    }

    /// One training epoch; returns metrics and per-node predictions.
    pub fn epoch_json(&mut self) -> String {
        let encoded = gsnn::data::encode(
            &self.dataset,
            self.cfg.encoder,
            self.cfg.time_window,
            self.seed,
        )
        .unwrap();
        let dropout_seed = self.seed ^ (self.epoch as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
        let trace =
            model_forward(&self.dataset.graph, &encoded, &self.model, true, dropout_seed).unwrap();
        let (loss_sum, mut grad) =
            masked_cross_entropy(&trace.logits, &self.dataset.labels, &self.dataset.split.train)
                .unwrap();
        let inv = 1.0 / self.dataset.split.train.len() as f64;
        grad.data.iter_mut().for_each(|x| *x *= inv);
        let grads = backward(
            &self.dataset.graph,
            gsnn::network::SpikeInput::Encoded(&encoded),
            &trace,
            &grad,
            &self.model,
            &self.cfg.surrogate,
            self.cfg.weight_decay,
            false,
        )
        .unwrap();
        adam_step(
            &mut self.model,
            &grads,
            &mut self.adam,
            self.cfg.learning_rate,
            ADAM_BETAS,
            ADAM_EPS,
        );
        self.epoch += 1;

        let eval = model_forward(&self.dataset.graph, &encoded, &self.model, false, 0).unwrap();
        let predictions = (0..self.dataset.num_nodes())
            .map(|node| {
                let row = eval.logits.row(node);
                let mut best = 0;
                for (c, &x) in row.iter().enumerate() {
                    if x > row[best] {
                        best = c;
                    }
                }
                best
            })
            .collect();
        let report = EpochReport {
            epoch: self.epoch,
            loss: loss_sum * inv,
            train_acc: accuracy(&eval.logits, &self.dataset.labels, &self.dataset.split.train)
                .unwrap(),
            test_acc: accuracy(&eval.logits, &self.dataset.labels, &self.dataset.split.test)
                .unwrap(),
            firing_rates: eval.firing_rates(),
            predictions,
        };
        serde_json::to_string(&report).unwrap()
    }
}
