//! Leaky integrate-and-fire dynamics, the rectangular surrogate derivative,
//! and spatial-temporal feature normalization (STFN).
//!
//! STFN standardizes each node's pre-synaptic inputs jointly over the time
//! and feature dimensions, rescales them to std rho * v_th, and applies a
//! per-(node, channel) affine map. Because the statistics need the whole
//! time window, a layer must materialize all T pre-activation slices before
//! the LIF recursion runs; the network module schedules evaluation
//! layer-major for exactly this reason.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Mat, Tensor3};

/// LIF neuron constants. The reset potential is fixed at zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LifConfig {
    /// Membrane decay factor, in [0, 1).
    pub kappa: f64,
    /// Firing threshold, > 0.
    pub v_threshold: f64,
}

impl Default for LifConfig {
    fn default() -> Self {
        LifConfig {
            kappa: 0.5,
            v_threshold: 0.5,
        }
    }
}

impl LifConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.kappa) {
            return Err(Error::Config(format!(
                "kappa must be in [0, 1), got {}",
                self.kappa
            )));
        }
        if self.v_threshold <= 0.0 {
            return Err(Error::Config(format!(
                "v_threshold must be positive, got {}",
                self.v_threshold
            )));
        }
        Ok(())
    }
}

/// Per-layer membrane potentials and the spikes emitted at the last step.
#[derive(Debug, Clone)]
pub struct MembraneState {
    pub potential: Mat,
    pub last_spike: Mat,
}

impl MembraneState {
    pub fn zeros(nodes: usize, channels: usize) -> Self {
        MembraneState {
            potential: Mat::zeros(nodes, channels),
            last_spike: Mat::zeros(nodes, channels),
        }
    }
}

/// Unit step with g(0) = 1. The boundary convention is fixed here and
/// relied on by the threshold-equality tests.
#[inline]
pub fn heaviside(x: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        0.0
    }
}

/// One membrane update with firing-and-resetting:
/// V' = kappa * V * (1 - H) + input, spike = heaviside(V' - v_th).
///
/// Returns the advanced state and the spike matrix (also stored in the
/// state as `last_spike`).
pub fn lif_step(state: &MembraneState, input: &Mat, cfg: &LifConfig) -> (MembraneState, Mat) {
    debug_assert_eq!(state.potential.rows, input.rows);
    debug_assert_eq!(state.potential.cols, input.cols);
    let mut potential = Mat::zeros(input.rows, input.cols);
    let mut spikes = Mat::zeros(input.rows, input.cols);
    for idx in 0..input.data.len() {
        let gate = 1.0 - state.last_spike.data[idx];
        let v = cfg.kappa * state.potential.data[idx] * gate + input.data[idx];
        potential.data[idx] = v;
        spikes.data[idx] = heaviside(v - cfg.v_threshold);
    }
    let next = MembraneState {
        potential,
        last_spike: spikes.clone(),
    };
    (next, spikes)
}

/// Rectangular surrogate for the spike derivative.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurrogateConfig {
    /// Rectangle half-width a; the pulse has height 1/(2a) so it carries
    /// unit mass.
    pub half_width: f64,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        SurrogateConfig { half_width: 1.0 }
    }
}

/// d spike / d membrane at offset x = V - v_th: 1/(2a) inside |x| <= a,
/// zero outside.
#[inline]
pub fn surrogate_grad(x: f64, cfg: &SurrogateConfig) -> f64 {
    if x.abs() <= cfg.half_width {
        1.0 / (2.0 * cfg.half_width)
    } else {
        0.0
    }
}

/// The clamped ramp whose derivative is exactly [`surrogate_grad`]; the
/// relaxed network used for gradient checking fires this instead of the
/// Heaviside step.
#[inline]
pub fn surrogate_ramp(x: f64, cfg: &SurrogateConfig) -> f64 {
    ((x + cfg.half_width) / (2.0 * cfg.half_width)).clamp(0.0, 1.0)
}

/// Trainable normalization parameters. `lambda` and `gamma` are
/// per-(node, channel) as the update rule defines them; `rho` is a single
/// per-layer scalar trained alongside them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StfnParams {
    pub lambda: Mat,
    pub gamma: Mat,
    pub rho: f64,
    pub epsilon: f64,
}

impl StfnParams {
    pub fn new(nodes: usize, channels: usize) -> Self {
        Self::with_rho(nodes, channels, 1.0)
    }

    pub fn with_rho(nodes: usize, channels: usize, rho: f64) -> Self {
        let mut lambda = Mat::zeros(nodes, channels);
        lambda.fill(1.0);
        StfnParams {
            lambda,
            gamma: Mat::zeros(nodes, channels),
            rho,
            epsilon: 1e-5,
        }
    }
}

/// Forward intermediates needed by [`stfn_backward`].
#[derive(Debug, Clone)]
pub struct StfnCache {
    /// (S - E) / sqrt(Var + eps), before the rho * v_th scale.
    pub unit: Tensor3,
    /// Per-node mean over the (time x channel) group.
    pub mean: Vec<f64>,
    /// Per-node 1 / sqrt(Var + eps).
    pub rstd: Vec<f64>,
    pub v_threshold: f64,
}

/// Normalize pre-activations per node over the joint (time x channel)
/// block: S_hat = rho * v_th * (S - E[S^v]) / sqrt(Var[S^v] + eps),
/// Y = lambda .* S_hat + gamma.
pub fn stfn_forward(
    pre_acts: &Tensor3,
    params: &StfnParams,
    v_threshold: f64,
) -> (Tensor3, StfnCache) {
    let (t_win, nodes, channels) = (pre_acts.time_window, pre_acts.nodes, pre_acts.channels);
    debug_assert_eq!(params.lambda.rows, nodes);
    debug_assert_eq!(params.lambda.cols, channels);
    let group = (t_win * channels) as f64;
    let scale = params.rho * v_threshold;

    let mut unit = Tensor3::zeros(t_win, nodes, channels);
    let mut out = Tensor3::zeros(t_win, nodes, channels);
    let mut means = vec![0.0; nodes];
    let mut rstd = vec![0.0; nodes];

    for v in 0..nodes {
        let mut mean = 0.0;
        for t in 0..t_win {
            for k in 0..channels {
                mean += pre_acts.at(t, v, k);
            }
        }
        mean /= group;
        let mut var = 0.0;
        for t in 0..t_win {
            for k in 0..channels {
                let d = pre_acts.at(t, v, k) - mean;
                var += d * d;
            }
        }
        var /= group;
        let r = 1.0 / (var + params.epsilon).sqrt();
        means[v] = mean;
        rstd[v] = r;
        for t in 0..t_win {
            for k in 0..channels {
                let u = (pre_acts.at(t, v, k) - mean) * r;
                *unit.at_mut(t, v, k) = u;
                *out.at_mut(t, v, k) =
                    params.lambda.at(v, k) * (scale * u) + params.gamma.at(v, k);
            }
        }
    }

    let cache = StfnCache {
        unit,
        mean: means,
        rstd,
        v_threshold,
    };
    (out, cache)
}

/// Gradients of [`stfn_forward`] with respect to its input and parameters.
#[derive(Debug, Clone)]
pub struct StfnGrads {
    pub input: Tensor3,
    pub lambda: Mat,
    pub gamma: Mat,
    pub rho: f64,
}

/// Exact reverse-mode pass through the normalization, including the
/// dependence of the per-node mean and variance on every element of the
/// (time x channel) group.
pub fn stfn_backward(
    grad_out: &Tensor3,
    cache: &StfnCache,
    params: &StfnParams,
) -> Result<StfnGrads> {
    let (t_win, nodes, channels) = (
        cache.unit.time_window,
        cache.unit.nodes,
        cache.unit.channels,
    );
    if grad_out.time_window != t_win || grad_out.nodes != nodes || grad_out.channels != channels {
        return Err(Error::DimMismatch {
            context: "stfn_backward",
            expected: format!("({t_win}, {nodes}, {channels})"),
            got: format!(
                "({}, {}, {})",
                grad_out.time_window, grad_out.nodes, grad_out.channels
            ),
        });
    }
    let group = (t_win * channels) as f64;
    let scale = params.rho * cache.v_threshold;

    let mut grad_input = Tensor3::zeros(t_win, nodes, channels);
    let mut grad_lambda = Mat::zeros(nodes, channels);
    let mut grad_gamma = Mat::zeros(nodes, channels);
    let mut grad_rho = 0.0;

    for v in 0..nodes {
        // d loss / d s_hat, where s_hat = scale * unit
        // lambda and gamma gradients accumulate over time.
        let mut mean_du = 0.0; // mean over the group of d loss / d unit
        let mut mean_du_u = 0.0; // mean of (d loss / d unit) * unit
        for t in 0..t_win {
            for k in 0..channels {
                let go = grad_out.at(t, v, k);
                let u = cache.unit.at(t, v, k);
                let s_hat = scale * u;
                *grad_lambda.at_mut(v, k) += go * s_hat;
                *grad_gamma.at_mut(v, k) += go;
                let d_s_hat = go * params.lambda.at(v, k);
                grad_rho += d_s_hat * cache.v_threshold * u;
                let du = d_s_hat * scale;
                mean_du += du;
                mean_du_u += du * u;
            }
        }
        mean_du /= group;
        mean_du_u /= group;
        let r = cache.rstd[v];
        for t in 0..t_win {
            for k in 0..channels {
                let du = grad_out.at(t, v, k) * params.lambda.at(v, k) * scale;
                let u = cache.unit.at(t, v, k);
                *grad_input.at_mut(t, v, k) = r * (du - mean_du - u * mean_du_u);
            }
        }
    }

    Ok(StfnGrads {
        input: grad_input,
        lambda: grad_lambda,
        gamma: grad_gamma,
        rho: grad_rho,
    })
}
