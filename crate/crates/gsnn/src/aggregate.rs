//! Propagation-step instantiations: symmetric-normalized graph convolution
//! (GC) and single-head graph attention (GA) over binary spike inputs,
//! with exact reverse-mode passes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{propagate, propagate_transpose, SparseGraph};
use crate::tensor::{Features, Mat};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GcLayerParams {
    /// (C_in x C_out)
    pub weight: Mat,
    /// (C_out)
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaLayerParams {
    /// (C_in x C_out)
    pub weight: Mat,
    /// Attention vector over [z_i || z_j], length 2 * C_out.
    pub attn: Vec<f64>,
    /// LeakyReLU slope for attention scores, in (0, 1).
    pub leaky_slope: f64,
}

/// Whether the affine transform runs before or after propagation. The two
/// orders commute for the linear convolution operator; transform-first is
/// the cheap one on sparse binary inputs and is what the layers use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GcOrder {
    TransformFirst,
    PropagateFirst,
}

fn check_input(g: &SparseGraph, features: &Features<'_>, c_in: usize) -> Result<()> {
    if features.rows() != g.num_nodes() {
        return Err(Error::DimMismatch {
            context: "aggregator input rows",
            expected: format!("{}", g.num_nodes()),
            got: format!("{}", features.rows()),
        });
    }
    if features.cols() != c_in {
        return Err(Error::DimMismatch {
            context: "aggregator input channels",
            expected: format!("{c_in}"),
            got: format!("{}", features.cols()),
        });
    }
    Ok(())
}

/// X^T * rhs accumulated row-by-row; binary inputs gather rows of `rhs`.
fn features_transpose_matmul(features: &Features<'_>, rhs: &Mat) -> Mat {
    let mut out = Mat::zeros(features.cols(), rhs.cols);
    for n in 0..features.rows() {
        for k in 0..features.cols() {
            let x = features.at(n, k);
            if x == 0.0 {
                continue;
            }
            let src = rhs.row(n);
            let dst = out.row_mut(k);
            for (d, &v) in dst.iter_mut().zip(src) {
                *d += x * v;
            }
        }
    }
    out
}

/// Graph convolution: propagate + affine transform in either order.
pub fn gc_forward(
    g: &SparseGraph,
    features: Features<'_>,
    p: &GcLayerParams,
    order: GcOrder,
) -> Result<Mat> {
    check_input(g, &features, p.weight.rows)?;
    let mut out = match order {
        GcOrder::TransformFirst => {
            let z = features.matmul(&p.weight)?;
            propagate(g, &z)?
        }
        GcOrder::PropagateFirst => {
            let dense = features.to_mat();
            let propagated = propagate(g, &dense)?;
            Features::from_mat(&propagated).matmul(&p.weight)?
        }
    };
    for r in 0..out.rows {
        for (o, &b) in out.row_mut(r).iter_mut().zip(p.bias.iter()) {
            *o += b;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct GcGrads {
    pub weight: Mat,
    pub bias: Vec<f64>,
    /// Gradient with respect to the (real-relaxed) input features; feeds
    /// the surrogate chain of the upstream layer.
    pub input: Mat,
}

/// Reverse-mode of [`gc_forward`]; the propagation operator is symmetric so
/// its adjoint is itself.
pub fn gc_backward(
    g: &SparseGraph,
    features: Features<'_>,
    p: &GcLayerParams,
    grad_out: &Mat,
) -> Result<GcGrads> {
    gc_backward_impl(g, features, p, grad_out, true)
}

/// Like [`gc_backward`] but optionally skips the input gradient; the first
/// layer has no upstream consumer for it and the product is the most
/// expensive term on wide feature matrices.
pub(crate) fn gc_backward_impl(
    g: &SparseGraph,
    features: Features<'_>,
    p: &GcLayerParams,
    grad_out: &Mat,
    need_input: bool,
) -> Result<GcGrads> {
    check_input(g, &features, p.weight.rows)?;
    if grad_out.rows != g.num_nodes() || grad_out.cols != p.weight.cols {
        return Err(Error::DimMismatch {
            context: "gc_backward grad_out",
            expected: format!("({}, {})", g.num_nodes(), p.weight.cols),
            got: format!("({}, {})", grad_out.rows, grad_out.cols),
        });
    }
    let mut bias = vec![0.0; p.weight.cols];
    for r in 0..grad_out.rows {
        for (b, &go) in bias.iter_mut().zip(grad_out.row(r)) {
            *b += go;
        }
    }
    let grad_z = propagate_transpose(g, grad_out)?;
    let weight = features_transpose_matmul(&features, &grad_z);
    let input = if need_input {
        grad_z.matmul_transpose(&p.weight)
    } else {
        Mat::zeros(0, 0)
    };
    Ok(GcGrads {
        weight,
        bias,
        input,
    })
}

/// Per-forward attention intermediates, CSR-aligned with the graph.
#[derive(Debug, Clone)]
pub struct AttnCache {
    /// Transformed features z = x * W, (N x C_out).
    pub z: Mat,
    /// Raw scores a^T [z_i || z_j] before the LeakyReLU, per CSR slot.
    pub pre: Vec<f64>,
    /// Softmax weights per CSR slot; each neighborhood sums to 1.
    pub alpha: Vec<f64>,
}

/// Numerically stable softmax over one neighborhood's scores, in place.
pub(crate) fn softmax_in_place(scores: &mut [f64]) {
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

fn leaky_relu(x: f64, slope: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        slope * x
    }
}

/// Graph attention: z = x * W, scores from a^T [z_i || z_j] through a
/// LeakyReLU, softmax over each augmented neighborhood, then the weighted
/// sum of neighbor z rows. No bias term.
pub fn ga_forward(
    g: &SparseGraph,
    features: Features<'_>,
    p: &GaLayerParams,
) -> Result<(Mat, AttnCache)> {
    check_input(g, &features, p.weight.rows)?;
    let c_out = p.weight.cols;
    if p.attn.len() != 2 * c_out {
        return Err(Error::DimMismatch {
            context: "attention vector",
            expected: format!("{}", 2 * c_out),
            got: format!("{}", p.attn.len()),
        });
    }
    let z = features.matmul(&p.weight)?;
    let (a_src, a_dst) = p.attn.split_at(c_out);

    // Per-node source half of the score; the self-loop guarantees every
    // neighborhood is nonempty.
    let src_score: Vec<f64> = (0..g.num_nodes())
        .map(|i| z.row(i).iter().zip(a_src).map(|(x, a)| x * a).sum())
        .collect();
    let dst_score: Vec<f64> = (0..g.num_nodes())
        .map(|j| z.row(j).iter().zip(a_dst).map(|(x, a)| x * a).sum())
        .collect();

    let mut pre = vec![0.0; g.nnz()];
    let mut alpha = vec![0.0; g.nnz()];
    let mut out = Mat::zeros(g.num_nodes(), c_out);
    let mut slot = 0usize;
    for i in 0..g.num_nodes() {
        let neigh = g.neighbors(i);
        let begin = slot;
        for &j in neigh {
            let raw = src_score[i] + dst_score[j];
            pre[slot] = raw;
            alpha[slot] = leaky_relu(raw, p.leaky_slope);
            slot += 1;
        }
        softmax_in_place(&mut alpha[begin..slot]);
        for (&j, &a) in neigh.iter().zip(&alpha[begin..slot]) {
            let src = z.row(j);
            let dst = out.row_mut(i);
            for (d, &v) in dst.iter_mut().zip(src) {
                *d += a * v;
            }
        }
    }

    let cache = AttnCache { z, pre, alpha };
    Ok((out, cache))
}

#[derive(Debug, Clone)]
pub struct GaGrads {
    pub weight: Mat,
    pub attn: Vec<f64>,
    pub input: Mat,
}

/// Reverse-mode of [`ga_forward`] through the neighborhood softmax, the
/// LeakyReLU, and the shared transform.
pub fn ga_backward(
    g: &SparseGraph,
    features: Features<'_>,
    p: &GaLayerParams,
    cache: &AttnCache,
    grad_out: &Mat,
) -> Result<GaGrads> {
    ga_backward_impl(g, features, p, cache, grad_out, true)
}

pub(crate) fn ga_backward_impl(
    g: &SparseGraph,
    features: Features<'_>,
    p: &GaLayerParams,
    cache: &AttnCache,
    grad_out: &Mat,
    need_input: bool,
) -> Result<GaGrads> {
    check_input(g, &features, p.weight.rows)?;
    let c_out = p.weight.cols;
    if grad_out.rows != g.num_nodes() || grad_out.cols != c_out {
        return Err(Error::DimMismatch {
            context: "ga_backward grad_out",
            expected: format!("({}, {})", g.num_nodes(), c_out),
            got: format!("({}, {})", grad_out.rows, grad_out.cols),
        });
    }
    let z = &cache.z;
    let (a_src, a_dst) = p.attn.split_at(c_out);

    let mut grad_z = Mat::zeros(g.num_nodes(), c_out);
    let mut grad_a_src = vec![0.0; c_out];
    let mut grad_a_dst = vec![0.0; c_out];

    let mut slot = 0usize;
    for i in 0..g.num_nodes() {
        let neigh = g.neighbors(i);
        let begin = slot;
        let end = slot + neigh.len();
        let gout = grad_out.row(i);

        // d out_i / d alpha and the direct d out_i / d z_j term
        let mut d_alpha = vec![0.0; neigh.len()];
        for (idx, &j) in neigh.iter().enumerate() {
            let a = cache.alpha[begin + idx];
            let zj = z.row(j);
            let mut dot = 0.0;
            for (gz, (&go, &zv)) in grad_z.row_mut(j).iter_mut().zip(gout.iter().zip(zj)) {
                *gz += a * go;
                dot += go * zv;
            }
            d_alpha[idx] = dot;
        }
        // softmax backward: ds = alpha .* (d_alpha - sum(alpha .* d_alpha))
        let pivot: f64 = neigh
            .iter()
            .enumerate()
            .map(|(idx, _)| cache.alpha[begin + idx] * d_alpha[idx])
            .sum();
        for (idx, &j) in neigh.iter().enumerate() {
            let ds = cache.alpha[begin + idx] * (d_alpha[idx] - pivot);
            let gate = if cache.pre[begin + idx] >= 0.0 {
                1.0
            } else {
                p.leaky_slope
            };
            let dpre = ds * gate;
            let zi = z.row(i);
            let zj = z.row(j);
            for c in 0..c_out {
                grad_a_src[c] += dpre * zi[c];
                grad_a_dst[c] += dpre * zj[c];
                *grad_z.at_mut(i, c) += dpre * a_src[c];
                *grad_z.at_mut(j, c) += dpre * a_dst[c];
            }
        }
        slot = end;
    }

    let weight = features_transpose_matmul(&features, &grad_z);
    let input = if need_input {
        grad_z.matmul_transpose(&p.weight)
    } else {
        Mat::zeros(0, 0)
    };
    let mut attn = grad_a_src;
    attn.extend_from_slice(&grad_a_dst);
    Ok(GaGrads {
        weight,
        attn,
        input,
    })
}
