//! Shared helpers for integration tests: random instances and a naive
//! time-major reference evaluator.

#![allow(dead_code)]
#![allow(clippy::needless_range_loop)]

use gsnn::aggregate::{GaLayerParams, GcLayerParams};
use gsnn::network::{AggregatorParams, LayerSpec, ModelParams};
use gsnn::neuron::{heaviside, LifConfig, StfnParams};
use gsnn::rng::Rng;
use gsnn::tensor::{Mat, SpikeTensor, Tensor3};
use gsnn::SparseGraph;

pub fn random_edges(rng: &mut Rng, n: usize, p: f64) -> Vec<(usize, usize)> {
    let mut edges = Vec::new();
    for u in 0..n {
        for v in (u + 1)..n {
            if rng.bernoulli(p) {
                edges.push((u, v));
            }
        }
    }
    edges
}

pub fn random_spikes(rng: &mut Rng, t: usize, nodes: usize, channels: usize, p: f64) -> SpikeTensor {
    let mut s = SpikeTensor::zeros(t, nodes, channels);
    for step in 0..t {
        for n in 0..nodes {
            for c in 0..channels {
                if rng.bernoulli(p) {
                    s.set(step, n, c, 1);
                }
            }
        }
    }
    s
}

pub fn random_mat(rng: &mut Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Mat {
    let mut m = Mat::zeros(rows, cols);
    for v in m.data.iter_mut() {
        *v = rng.uniform(lo, hi);
    }
    m
}

/// Random model with exercised (non-default) STFN parameters.
pub fn random_model(
    rng: &mut Rng,
    dims: &[usize],
    nodes: usize,
    use_attention: bool,
    stfn_enabled: bool,
) -> ModelParams {
    let mut layers = Vec::new();
    for w in dims.windows(2) {
        let (c_in, c_out) = (w[0], w[1]);
        let weight = random_mat(rng, c_in, c_out, -0.8, 0.8);
        let agg = if use_attention {
            AggregatorParams::Ga(GaLayerParams {
                weight,
                attn: (0..2 * c_out).map(|_| rng.uniform(-0.7, 0.7)).collect(),
                leaky_slope: 0.2,
            })
        } else {
            AggregatorParams::Gc(GcLayerParams {
                weight,
                bias: (0..c_out).map(|_| rng.uniform(-0.3, 0.3)).collect(),
            })
        };
        let mut stfn = StfnParams::new(nodes, c_out);
        for v in stfn.lambda.data.iter_mut() {
            *v = rng.uniform(0.6, 1.4);
        }
        for v in stfn.gamma.data.iter_mut() {
            *v = rng.uniform(-0.3, 0.3);
        }
        stfn.rho = rng.uniform(0.8, 1.3);
        layers.push(LayerSpec {
            in_dim: c_in,
            out_dim: c_out,
            lif: LifConfig::default(),
            stfn,
            stfn_enabled,
            agg,
            dropout_rate: 0.0,
        });
    }
    ModelParams {
        layers,
        readout: None,
        readout_scale: 1.0,
        accumulator_output: false,
    }
}

fn oracle_transform(x: &Mat, w: &Mat) -> Mat {
    let mut out = Mat::zeros(x.rows, w.cols);
    for r in 0..x.rows {
        for k in 0..x.cols {
            let xv = x.at(r, k);
            for c in 0..w.cols {
                *out.at_mut(r, c) += xv * w.at(k, c);
            }
        }
    }
    out
}

fn oracle_propagate(g: &SparseGraph, z: &Mat) -> Mat {
    let mut out = Mat::zeros(z.rows, z.cols);
    for i in 0..g.num_nodes() {
        for (&j, &coeff) in g.neighbors(i).iter().zip(g.coeffs(i)) {
            for c in 0..z.cols {
                *out.at_mut(i, c) += coeff * z.at(j, c);
            }
        }
    }
    out
}

fn oracle_softmax(scores: &mut [f64]) {
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for s in scores.iter_mut() {
        *s = (*s - max).exp();
        total += *s;
    }
    for s in scores.iter_mut() {
        *s /= total;
    }
}

fn oracle_attention(g: &SparseGraph, x: &Mat, p: &GaLayerParams) -> Mat {
    let c_out = p.weight.cols;
    let z = oracle_transform(x, &p.weight);
    let (a_src, a_dst) = p.attn.split_at(c_out);
    let src_score: Vec<f64> = (0..g.num_nodes())
        .map(|i| z.row(i).iter().zip(a_src).map(|(v, a)| v * a).sum())
        .collect();
    let dst_score: Vec<f64> = (0..g.num_nodes())
        .map(|j| z.row(j).iter().zip(a_dst).map(|(v, a)| v * a).sum())
        .collect();
    let mut out = Mat::zeros(g.num_nodes(), c_out);
    for i in 0..g.num_nodes() {
        let neigh = g.neighbors(i);
        let mut alpha: Vec<f64> = neigh
            .iter()
            .map(|&j| {
                let raw = src_score[i] + dst_score[j];
                if raw >= 0.0 {
                    raw
                } else {
                    p.leaky_slope * raw
                }
            })
            .collect();
        oracle_softmax(&mut alpha);
        for (&j, &a) in neigh.iter().zip(&alpha) {
            for c in 0..c_out {
                *out.at_mut(i, c) += a * z.at(j, c);
            }
        }
    }
    out
}

/// Naive time-major evaluator: steps the whole stack one time slice at a
/// time, normalizing with the supplied per-node statistics instead of
/// recomputing them (they need the full window, which is exactly why the
/// production path is layer-major). Mirrors the production arithmetic
/// order so agreement is bitwise.
pub fn time_major_forward(
    g: &SparseGraph,
    encoded: &SpikeTensor,
    params: &ModelParams,
    stats: &[Option<(Vec<f64>, Vec<f64>)>],
) -> (Vec<Tensor3>, Mat) {
    let t_win = encoded.time_window();
    let nodes = encoded.nodes();
    let mut spikes: Vec<Tensor3> = params
        .layers
        .iter()
        .map(|l| Tensor3::zeros(t_win, nodes, l.out_dim))
        .collect();
    let mut potentials: Vec<Mat> = params
        .layers
        .iter()
        .map(|l| Mat::zeros(nodes, l.out_dim))
        .collect();
    let mut last_spike: Vec<Mat> = params
        .layers
        .iter()
        .map(|l| Mat::zeros(nodes, l.out_dim))
        .collect();

    for t in 0..t_win {
        let mut current = {
            let frame = encoded.frame(t);
            let mut m = Mat::zeros(nodes, encoded.channels());
            for (dst, &b) in m.data.iter_mut().zip(frame.data.iter()) {
                *dst = b as f64;
            }
            m
        };
        for (n, spec) in params.layers.iter().enumerate() {
            let mut pre = match &spec.agg {
                AggregatorParams::Gc(p) => {
                    let z = oracle_transform(&current, &p.weight);
                    let mut out = oracle_propagate(g, &z);
                    for r in 0..out.rows {
                        for (o, &b) in out.row_mut(r).iter_mut().zip(p.bias.iter()) {
                            *o += b;
                        }
                    }
                    out
                }
                AggregatorParams::Ga(p) => oracle_attention(g, &current, p),
            };
            if spec.stfn_enabled {
                let (mean, rstd) = stats[n]
                    .as_ref()
                    .expect("stats required for an STFN-enabled layer");
                let scale = spec.stfn.rho * spec.lif.v_threshold;
                for v in 0..nodes {
                    for k in 0..spec.out_dim {
                        let s = pre.at(v, k);
                        let u = (s - mean[v]) * rstd[v];
                        *pre.at_mut(v, k) =
                            spec.stfn.lambda.at(v, k) * (scale * u) + spec.stfn.gamma.at(v, k);
                    }
                }
            }
            let mut out_spikes = Mat::zeros(nodes, spec.out_dim);
            for idx in 0..pre.data.len() {
                let gate = 1.0 - last_spike[n].data[idx];
                let v = spec.lif.kappa * potentials[n].data[idx] * gate + pre.data[idx];
                potentials[n].data[idx] = v;
                out_spikes.data[idx] = heaviside(v - spec.lif.v_threshold);
            }
            last_spike[n] = out_spikes.clone();
            spikes[n].frame_mut(t).copy_from_slice(&out_spikes.data);
            current = out_spikes;
        }
    }

    let last = spikes.last().unwrap();
    let mut rates = Mat::zeros(nodes, last.channels);
    for t in 0..t_win {
        for (r, &s) in rates.data.iter_mut().zip(last.frame(t)) {
            *r += s;
        }
    }
    let inv = 1.0 / t_win as f64;
    rates.data.iter_mut().for_each(|x| *x *= inv);
    (spikes, rates)
}
