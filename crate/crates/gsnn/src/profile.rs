//! Operation accounting for the feature-transformation stage, plus
//! firing-rate statistics.
//!
//! Accounting model (also embedded in every report): a "mult" and an "add"
//! count one f64 multiplication or addition in the per-layer affine
//! transform X * W. The dense GNN transform costs N * C_in * C_out of each
//! per layer. The spiking transform costs zero multiplications and one
//! row-addition per set input bit: sum over t of nnz(spikes_t) * C_out
//! additions. Propagation over the graph structure is reported separately
//! as nnz(A + I) * C_out multiply-adds per pass (times T for the spiking
//! side), and the per-element STFN / LIF arithmetic goes in an overhead
//! bucket; neither enters the compression ratio, which compares transform
//! operations only.

use serde::{Serialize, Serializer};

use crate::network::ForwardTrace;

pub const ACCOUNTING_NOTE: &str = "transform ops only: GNN mults = adds = N*C_in*C_out per layer \
     (dense features); SNN mults = 0, adds = sum_t nnz(spikes_t)*C_out; propagation \
     (nnz(A+I)*C_out mult-adds per pass) and STFN/LIF element ops reported separately and \
     excluded from the ratio; compression_ratio = GNN transform mults / SNN transform adds";

/// Transform-stage counts for one execution side (GNN or SNN).
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SideReport {
    pub per_layer_mults: Vec<u64>,
    pub per_layer_adds: Vec<u64>,
    /// Propagation multiply-adds per layer (all passes).
    pub propagation_mult_adds: Vec<u64>,
    /// STFN + LIF per-element arithmetic (zero on the GNN side).
    pub overhead_mults: Vec<u64>,
    pub overhead_adds: Vec<u64>,
    pub total_mults: u64,
    pub total_adds: u64,
}

impl SideReport {
    fn finish(mut self) -> Self {
        self.total_mults = self.per_layer_mults.iter().sum();
        self.total_adds = self.per_layer_adds.iter().sum();
        self
    }

    /// Transform operations that enter the compression ratio: the GNN side
    /// is all multiplications, the SNN side all additions.
    pub fn transform_ops(&self) -> u64 {
        self.total_mults.max(self.total_adds)
    }
}

/// Per-layer firing statistics with a 0.05-wide per-neuron rate histogram.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FiringStats {
    pub mean_rate: f64,
    /// 20 bins covering [0, 1]; rate 1.0 lands in the last bin.
    pub histogram: Vec<u64>,
}

pub const HISTOGRAM_BINS: usize = 20;

/// Dense-feature GNN accounting for a layer chain.
pub fn count_gnn_ops(layer_dims: &[usize], num_nodes: usize, graph_nnz: usize) -> SideReport {
    assert!(layer_dims.len() >= 2, "need at least input and output dims");
    let layers = layer_dims.len() - 1;
    let mut report = SideReport {
        per_layer_mults: Vec::with_capacity(layers),
        per_layer_adds: Vec::with_capacity(layers),
        propagation_mult_adds: Vec::with_capacity(layers),
        overhead_mults: vec![0; layers],
        overhead_adds: vec![0; layers],
        total_mults: 0,
        total_adds: 0,
    };
    for w in layer_dims.windows(2) {
        let (c_in, c_out) = (w[0] as u64, w[1] as u64);
        let transform = num_nodes as u64 * c_in * c_out;
        report.per_layer_mults.push(transform);
        report.per_layer_adds.push(transform);
        report
            .propagation_mult_adds
            .push(graph_nnz as u64 * c_out);
    }
    report.finish()
}

/// Alternative GNN accounting that charges the first layer only for the
/// set bits of the sparse binary input.
pub fn count_gnn_ops_sparse_input(
    layer_dims: &[usize],
    num_nodes: usize,
    graph_nnz: usize,
    input_nnz: usize,
) -> SideReport {
    let mut report = count_gnn_ops(layer_dims, num_nodes, graph_nnz);
    let c_out = layer_dims[1] as u64;
    report.per_layer_mults[0] = input_nnz as u64 * c_out;
    report.per_layer_adds[0] = input_nnz as u64 * c_out;
    report.finish()
}

/// Event-driven spiking accounting measured from an actual forward trace:
/// zero transform multiplications, one row addition per set input bit per
/// step, propagation every step, and the STFN/LIF element arithmetic in the
/// overhead bucket.
pub fn count_snn_ops(trace: &ForwardTrace, layer_dims: &[usize], time_window: usize) -> SideReport {
    assert_eq!(
        layer_dims.len() - 1,
        trace.layers.len(),
        "layer_dims must match the traced model"
    );
    let layers = trace.layers.len();
    let num_nodes = trace.rates.rows as u64;
    let mut report = SideReport {
        per_layer_mults: vec![0; layers],
        per_layer_adds: Vec::with_capacity(layers),
        propagation_mult_adds: Vec::with_capacity(layers),
        overhead_mults: Vec::with_capacity(layers),
        overhead_adds: Vec::with_capacity(layers),
        total_mults: 0,
        total_adds: 0,
    };
    for n in 0..layers {
        let c_out = layer_dims[n + 1] as u64;
        let mut adds = 0u64;
        for t in 0..time_window {
            let nnz = if n == 0 {
                trace.input_nnz[t] as u64
            } else {
                trace.layers[n - 1].spikes.frame_nnz(t) as u64
            };
            adds += nnz * c_out;
        }
        report.per_layer_adds.push(adds);
        // propagation cost needs the operator size; see
        // count_snn_ops_with_graph
        report.propagation_mult_adds.push(0);
        // per-element recursion: STFN normalize (3 mults, 4 adds per
        // element counting the statistics passes) plus LIF (2 mults, 1 add)
        let elements = time_window as u64 * num_nodes * c_out;
        let (stfn_m, stfn_a) = if trace.layers[n].stfn_cache.is_some() {
            (3, 4)
        } else {
            (0, 0)
        };
        report.overhead_mults.push(elements * (stfn_m + 2));
        report.overhead_adds.push(elements * (stfn_a + 1));
    }
    report.finish()
}

/// [`count_snn_ops`] with the graph's operator size supplied so the
/// per-step propagation cost can be filled in.
pub fn count_snn_ops_with_graph(
    trace: &ForwardTrace,
    layer_dims: &[usize],
    time_window: usize,
    graph_nnz: usize,
) -> SideReport {
    let mut report = count_snn_ops(trace, layer_dims, time_window);
    for (n, slot) in report.propagation_mult_adds.iter_mut().enumerate() {
        let c_out = layer_dims[n + 1] as u64;
        *slot = time_window as u64 * graph_nnz as u64 * c_out;
    }
    report
}

/// Mean rate and per-neuron rate histogram for every layer of a trace.
pub fn firing_stats(trace: &ForwardTrace) -> Vec<FiringStats> {
    trace
        .layers
        .iter()
        .map(|layer| {
            let spikes = &layer.spikes;
            let neurons = spikes.nodes * spikes.channels;
            let mut histogram = vec![0u64; HISTOGRAM_BINS];
            let mut total = 0.0;
            if neurons == 0 || spikes.time_window == 0 {
                return FiringStats {
                    mean_rate: 0.0,
                    histogram,
                };
            }
            for node in 0..spikes.nodes {
                for k in 0..spikes.channels {
                    let mut count = 0.0;
                    for t in 0..spikes.time_window {
                        count += spikes.at(t, node, k);
                    }
                    let rate = count / spikes.time_window as f64;
                    total += rate;
                    let bin = ((rate / 0.05) as usize).min(HISTOGRAM_BINS - 1);
                    histogram[bin] += 1;
                }
            }
            FiringStats {
                mean_rate: total / neurons as f64,
                histogram,
            }
        })
        .collect()
}

fn serialize_ratio<S: Serializer>(ratio: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if ratio.is_finite() {
        s.serialize_f64(*ratio)
    } else {
        s.serialize_str("inf")
    }
}

/// Full efficiency report for one trained model on one dataset.
#[derive(Debug, Clone, Serialize)]
pub struct OpReport {
    pub accounting: String,
    pub gnn: SideReport,
    pub snn: SideReport,
    /// GNN counts under the sparse-binary-input alternative accounting.
    pub gnn_sparse_input: SideReport,
    pub firing: Vec<FiringStats>,
    /// GNN transform mults / SNN transform adds; infinite for an all-silent
    /// model, serialized as the string "inf".
    #[serde(serialize_with = "serialize_ratio")]
    pub compression_ratio: f64,
}

/// Assemble the standard report from a trace of a trained model.
pub fn op_report(
    trace: &ForwardTrace,
    layer_dims: &[usize],
    num_nodes: usize,
    graph_nnz: usize,
    time_window: usize,
) -> OpReport {
    let gnn = count_gnn_ops(layer_dims, num_nodes, graph_nnz);
    let snn = count_snn_ops_with_graph(trace, layer_dims, time_window, graph_nnz);
    let input_nnz: usize = trace.input_nnz.first().copied().unwrap_or(0);
    let gnn_sparse_input =
        count_gnn_ops_sparse_input(layer_dims, num_nodes, graph_nnz, input_nnz);
    let firing = firing_stats(trace);
    let snn_ops = snn.total_adds;
    let compression_ratio = if snn_ops == 0 {
        f64::INFINITY
    } else {
        gnn.total_mults as f64 / snn_ops as f64
    };
    OpReport {
        accounting: ACCOUNTING_NOTE.to_string(),
        gnn,
        snn,
        gnn_sparse_input,
        firing,
        compression_ratio,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::build_graph;
    use crate::network::{model_forward, AggregatorParams, LayerSpec, ModelParams};
    use crate::neuron::{LifConfig, StfnParams};
    use crate::tensor::{Mat, SpikeTensor};

    #[test]
    fn gnn_counts_trivial_case() {
        let r = count_gnn_ops(&[2, 3], 1, 1);
        assert_eq!(r.per_layer_mults, vec![6]);
        assert_eq!(r.per_layer_adds, vec![6]);
        assert_eq!(r.propagation_mult_adds, vec![3]);
        assert_eq!(r.total_mults, 6);
    }

    #[test]
    fn gnn_counts_zero_nodes() {
        let r = count_gnn_ops(&[4, 5, 2], 0, 0);
        assert_eq!(r.total_mults, 0);
        assert_eq!(r.total_adds, 0);
    }

    #[test]
    fn gnn_sparse_input_replaces_first_layer() {
        let r = count_gnn_ops_sparse_input(&[100, 16, 7], 10, 30, 42);
        assert_eq!(r.per_layer_mults[0], 42 * 16);
        assert_eq!(r.per_layer_mults[1], 10 * 16 * 7);
    }

    fn traced_model(
        t_win: usize,
        nodes: usize,
        spikes: &[(usize, usize, usize)],
    ) -> (ForwardTrace, Vec<usize>) {
        // single layer whose input comes from an explicit spike list
        let g = build_graph(nodes, &[]).unwrap();
        let mut enc = SpikeTensor::zeros(t_win, nodes, 2);
        for &(t, n, c) in spikes {
            enc.set(t, n, c, 1);
        }
        let spec = LayerSpec {
            in_dim: 2,
            out_dim: 7,
            lif: LifConfig::default(),
            stfn: StfnParams::new(nodes, 7),
            stfn_enabled: true,
            agg: AggregatorParams::Gc(crate::aggregate::GcLayerParams {
                weight: Mat::zeros(2, 7),
                bias: vec![0.0; 7],
            }),
            dropout_rate: 0.0,
        };
        let params = ModelParams {
            layers: vec![spec],
            readout: None,
            readout_scale: 1.0,
            accumulator_output: false,
        };
        let trace = model_forward(&g, &enc, &params, false, 0).unwrap();
        (trace, vec![2, 7])
    }

    #[test]
    fn snn_counts_zero_for_silent_input() {
        let (trace, dims) = traced_model(3, 2, &[]);
        let r = count_snn_ops(&trace, &dims, 3);
        assert_eq!(r.total_adds, 0);
        assert_eq!(r.total_mults, 0);
    }

    #[test]
    fn snn_single_spike_costs_one_row_gather() {
        let (trace, dims) = traced_model(3, 2, &[(1, 0, 1)]);
        let r = count_snn_ops(&trace, &dims, 3);
        assert_eq!(r.per_layer_adds[0], 7);
    }

    #[test]
    fn snn_adds_bounded_by_dense_count() {
        let t_win = 4;
        let nodes = 3;
        // all spikes set -> equality with the dense bound
        let all: Vec<(usize, usize, usize)> = (0..t_win)
            .flat_map(|t| (0..nodes).flat_map(move |n| (0..2).map(move |c| (t, n, c))))
            .collect();
        let (trace, dims) = traced_model(t_win, nodes, &all);
        let r = count_snn_ops(&trace, &dims, t_win);
        let dense_bound = (t_win * nodes * 2 * 7) as u64;
        assert_eq!(r.per_layer_adds[0], dense_bound);

        let (sparse_trace, dims) = traced_model(t_win, nodes, &[(0, 0, 0), (2, 1, 1)]);
        let r = count_snn_ops(&sparse_trace, &dims, t_win);
        assert!(r.per_layer_adds[0] < dense_bound);
    }

    #[test]
    fn report_ratio_consistency_and_purity() {
        let (trace, dims) = traced_model(4, 3, &[(0, 0, 0), (1, 2, 1), (3, 1, 0)]);
        let a = op_report(&trace, &dims, 3, 3, 4);
        let b = op_report(&trace, &dims, 3, 3, 4);
        assert_eq!(a.snn, b.snn);
        assert_eq!(a.gnn, b.gnn);
        assert_eq!(a.compression_ratio, b.compression_ratio);
        assert_eq!(
            a.compression_ratio,
            a.gnn.total_mults as f64 / a.snn.total_adds as f64
        );
    }

    #[test]
    fn silent_model_reports_infinite_ratio_as_string() {
        let (trace, dims) = traced_model(2, 2, &[]);
        let report = op_report(&trace, &dims, 2, 2, 2);
        assert!(report.compression_ratio.is_infinite());
        let json = serde_json::to_value(&report).unwrap();
        assert_eq!(json["compression_ratio"], serde_json::json!("inf"));
    }

    #[test]
    fn firing_stats_degenerate_cases() {
        let (trace, _) = traced_model(2, 2, &[]);
        let stats = firing_stats(&trace);
        assert_eq!(stats.len(), 1);
        assert_eq!(stats[0].mean_rate, 0.0);
        assert_eq!(stats[0].histogram[0], 2 * 7);
        assert_eq!(stats[0].histogram.iter().sum::<u64>(), (2 * 7) as u64);
    }

    #[test]
    fn firing_histogram_buckets_rates() {
        // drive one neuron to fire every step via a huge bias
        let g = build_graph(1, &[]).unwrap();
        let mut enc = SpikeTensor::zeros(4, 1, 1);
        for t in 0..4 {
            enc.set(t, 0, 0, 1);
        }
        let spec = LayerSpec {
            in_dim: 1,
            out_dim: 1,
            lif: LifConfig::default(),
            stfn: StfnParams::new(1, 1),
            stfn_enabled: false,
            agg: AggregatorParams::Gc(crate::aggregate::GcLayerParams {
                weight: Mat::from_rows(vec![vec![10.0]]),
                bias: vec![0.0],
            }),
            dropout_rate: 0.0,
        };
        let params = ModelParams {
            layers: vec![spec],
            readout: None,
            readout_scale: 1.0,
            accumulator_output: false,
        };
        let trace = model_forward(&g, &enc, &params, false, 0).unwrap();
        let stats = firing_stats(&trace);
        assert_eq!(stats[0].mean_rate, 1.0);
        assert_eq!(stats[0].histogram[HISTOGRAM_BINS - 1], 1);
    }
}
