//! Immutable sparse graph with the symmetric degree-normalized propagation
//! operator shared by every aggregator.
//!
//! Construction dedups and symmetrizes the raw edge list (self-loops in the
//! input are dropped), then augments every node with a self-loop before
//! computing degrees, so the operator is D^{-1/2} (A + I) D^{-1/2}. Isolated
//! nodes are legal: the self-loop keeps every degree at least 1.

use crate::error::{Error, Result};
use crate::tensor::Mat;

#[derive(Debug, Clone)]
pub struct SparseGraph {
    num_nodes: usize,
    /// Deduplicated undirected edges with src < dst, self-loops excluded.
    edges: Vec<(usize, usize)>,
    /// CSR offsets into `neighbors` / `norm_coeff`, length num_nodes + 1.
    offsets: Vec<usize>,
    /// Sorted neighbor ids per node, self-loop included.
    neighbors: Vec<usize>,
    /// Degree per node counted after self-loop augmentation.
    degree: Vec<usize>,
    /// 1 / (sqrt(deg i) * sqrt(deg j)), parallel to `neighbors`.
    norm_coeff: Vec<f64>,
}

impl SparseGraph {
    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    /// Undirected edge count excluding the augmented self-loops.
    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Degree including the self-loop.
    pub fn degree(&self, node: usize) -> usize {
        self.degree[node]
    }

    /// Sorted neighbors of `node`, self included.
    pub fn neighbors(&self, node: usize) -> &[usize] {
        &self.neighbors[self.offsets[node]..self.offsets[node + 1]]
    }

    /// Normalization coefficients aligned with `neighbors(node)`.
    pub fn coeffs(&self, node: usize) -> &[f64] {
        &self.norm_coeff[self.offsets[node]..self.offsets[node + 1]]
    }

    /// Entries of the augmented operator, i.e. directed (i, j) pairs with
    /// their coefficient, self-loops included.
    pub fn nnz(&self) -> usize {
        self.neighbors.len()
    }
}

/// Build the propagation structure from a raw undirected edge list.
///
/// Input self-loops are silently dropped (the raw adjacency keeps a zero
/// diagonal); augmentation re-adds exactly one per node afterwards.
pub fn build_graph(num_nodes: usize, edge_list: &[(usize, usize)]) -> Result<SparseGraph> {
    let mut edges: Vec<(usize, usize)> = Vec::with_capacity(edge_list.len());
    for &(u, v) in edge_list {
        if u >= num_nodes {
            return Err(Error::NodeOutOfRange {
                id: u,
                num_nodes,
            });
        }
        if v >= num_nodes {
            return Err(Error::NodeOutOfRange {
                id: v,
                num_nodes,
            });
        }
        if u == v {
            continue;
        }
        edges.push((u.min(v), u.max(v)));
    }
    edges.sort_unstable();
    edges.dedup();

    // CSR over A + I with sorted neighbor lists.
    let mut degree = vec![1usize; num_nodes]; // self-loop
    for &(u, v) in &edges {
        degree[u] += 1;
        degree[v] += 1;
    }
    let mut offsets = vec![0usize; num_nodes + 1];
    for i in 0..num_nodes {
        offsets[i + 1] = offsets[i] + degree[i];
    }
    let mut neighbors = vec![0usize; offsets[num_nodes]];
    let mut cursor = offsets.clone();
    let push = |cursor: &mut Vec<usize>, neighbors: &mut Vec<usize>, i: usize, j: usize| {
        neighbors[cursor[i]] = j;
        cursor[i] += 1;
    };
    for i in 0..num_nodes {
        push(&mut cursor, &mut neighbors, i, i);
    }
    for &(u, v) in &edges {
        push(&mut cursor, &mut neighbors, u, v);
        push(&mut cursor, &mut neighbors, v, u);
    }
    for i in 0..num_nodes {
        neighbors[offsets[i]..offsets[i + 1]].sort_unstable();
    }

    // 1 / sqrt(deg_i * deg_j) rather than the product of reciprocal square
    // roots: identical value, one rounding step fewer.
    let mut norm_coeff = vec![0.0; neighbors.len()];
    for i in 0..num_nodes {
        for (slot, &j) in neighbors[offsets[i]..offsets[i + 1]].iter().enumerate() {
            norm_coeff[offsets[i] + slot] = 1.0 / ((degree[i] * degree[j]) as f64).sqrt();
        }
    }

    Ok(SparseGraph {
        num_nodes,
        edges,
        offsets,
        neighbors,
        degree,
        norm_coeff,
    })
}

/// out[i] = sum over j in N(i) of coeff(i, j) * features[j], with i in N(i).
pub fn propagate(g: &SparseGraph, features: &Mat) -> Result<Mat> {
    if features.rows != g.num_nodes {
        return Err(Error::DimMismatch {
            context: "propagate",
            expected: format!("{} rows", g.num_nodes),
            got: format!("{}", features.rows),
        });
    }
    let mut out = Mat::zeros(features.rows, features.cols);
    for i in 0..g.num_nodes {
        let dst = &mut out.data[i * features.cols..(i + 1) * features.cols];
        for (&j, &c) in g.neighbors(i).iter().zip(g.coeffs(i)) {
            let src = features.row(j);
            for (d, &x) in dst.iter_mut().zip(src) {
                *d += c * x;
            }
        }
    }
    Ok(out)
}

/// Adjoint of [`propagate`]. The operator is symmetric, so this is the same
/// map; it exists so backward passes state their intent.
pub fn propagate_transpose(g: &SparseGraph, grad: &Mat) -> Result<Mat> {
    propagate(g, grad)
}
