//! Dense matrix and spike-tensor storage.
//!
//! Everything is row-major `f64` except spike trains, which are `u8` to keep
//! the encoded input (T x nodes x features) affordable on the larger
//! citation graphs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        debug_assert!(rows.iter().all(|row| row.len() == c));
        Mat {
            rows: r,
            cols: c,
            data: rows.into_iter().flatten().collect(),
        }
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn at_mut(&mut self, r: usize, c: usize) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    /// self * other^T, with self (n x b) and other (a x b) -> (n x a).
    pub fn matmul_transpose(&self, other: &Mat) -> Mat {
        debug_assert_eq!(self.cols, other.cols);
        let mut out = Mat::zeros(self.rows, other.rows);
        for n in 0..self.rows {
            let lhs = self.row(n);
            for a in 0..other.rows {
                let mut acc = 0.0;
                for (l, r) in lhs.iter().zip(other.row(a)) {
                    acc += l * r;
                }
                *out.at_mut(n, a) = acc;
            }
        }
        out
    }
}

/// Binary spike train over a discrete time window: (T x nodes x channels).
#[derive(Debug, Clone, PartialEq)]
pub struct SpikeTensor {
    time_window: usize,
    nodes: usize,
    channels: usize,
    data: Vec<u8>,
}

impl SpikeTensor {
    pub fn zeros(time_window: usize, nodes: usize, channels: usize) -> Self {
        assert!(time_window >= 1, "time window must be at least 1");
        SpikeTensor {
            time_window,
            nodes,
            channels,
            data: vec![0; time_window * nodes * channels],
        }
    }

    pub fn time_window(&self) -> usize {
        self.time_window
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn at(&self, t: usize, node: usize, channel: usize) -> u8 {
        self.data[(t * self.nodes + node) * self.channels + channel]
    }

    pub fn set(&mut self, t: usize, node: usize, channel: usize, v: u8) {
        debug_assert!(v <= 1, "spike values are binary");
        self.data[(t * self.nodes + node) * self.channels + channel] = v;
    }

    /// One time slice as a (nodes x channels) binary frame.
    pub fn frame(&self, t: usize) -> Frame<'_> {
        let len = self.nodes * self.channels;
        Frame {
            rows: self.nodes,
            cols: self.channels,
            data: &self.data[t * len..(t + 1) * len],
        }
    }

    /// Number of set entries in slice t.
    pub fn frame_nnz(&self, t: usize) -> usize {
        let len = self.nodes * self.channels;
        self.data[t * len..(t + 1) * len]
            .iter()
            .filter(|&&b| b != 0)
            .count()
    }

    /// Mean spike probability over the whole tensor.
    pub fn density(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().filter(|&&b| b != 0).count() as f64 / self.data.len() as f64
    }

    /// Time-averaged rates as a (nodes x channels) matrix.
    pub fn rates(&self) -> Mat {
        let mut out = Mat::zeros(self.nodes, self.channels);
        for t in 0..self.time_window {
            let frame = self.frame(t);
            for (o, &b) in out.data.iter_mut().zip(frame.data.iter()) {
                *o += b as f64;
            }
        }
        let inv = 1.0 / self.time_window as f64;
        out.data.iter_mut().for_each(|x| *x *= inv);
        out
    }
}

/// Borrowed binary (rows x cols) slice of a spike tensor.
#[derive(Debug, Clone, Copy)]
pub struct Frame<'a> {
    pub rows: usize,
    pub cols: usize,
    pub data: &'a [u8],
}

/// Node-feature view consumed by the aggregators: either a binary spike
/// frame (gathered, no multiplications) or a dense real matrix.
#[derive(Debug, Clone, Copy)]
pub enum Features<'a> {
    Binary(Frame<'a>),
    Dense { rows: usize, cols: usize, data: &'a [f64] },
}

impl<'a> Features<'a> {
    pub fn from_mat(m: &'a Mat) -> Self {
        Features::Dense {
            rows: m.rows,
            cols: m.cols,
            data: &m.data,
        }
    }

    pub fn rows(&self) -> usize {
        match self {
            Features::Binary(f) => f.rows,
            Features::Dense { rows, .. } => *rows,
        }
    }

    pub fn cols(&self) -> usize {
        match self {
            Features::Binary(f) => f.cols,
            Features::Dense { cols, .. } => *cols,
        }
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f64 {
        match self {
            Features::Binary(f) => f.data[r * f.cols + c] as f64,
            Features::Dense { cols, data, .. } => data[r * cols + c],
        }
    }

    /// self * w, accumulated in ascending input-channel order. The binary
    /// variant gathers rows of `w` by addition only; the dense variant is a
    /// plain inner-product loop. Both accumulate in the same order so the
    /// results agree bit for bit on {0,1} inputs.
    pub fn matmul(&self, w: &Mat) -> Result<Mat> {
        if self.cols() != w.rows {
            return Err(Error::DimMismatch {
                context: "feature transform",
                expected: format!("{} input channels", w.rows),
                got: format!("{}", self.cols()),
            });
        }
        let mut out = Mat::zeros(self.rows(), w.cols);
        match self {
            Features::Binary(f) => {
                for r in 0..f.rows {
                    let row = &f.data[r * f.cols..(r + 1) * f.cols];
                    let dst = out.row_mut(r);
                    for (k, &bit) in row.iter().enumerate() {
                        if bit != 0 {
                            for (d, &wv) in dst.iter_mut().zip(w.row(k)) {
                                *d += wv;
                            }
                        }
                    }
                }
            }
            Features::Dense { rows, cols, data } => {
                for r in 0..*rows {
                    let row = &data[r * cols..(r + 1) * cols];
                    let dst = out.row_mut(r);
                    for (k, &x) in row.iter().enumerate() {
                        for (d, &wv) in dst.iter_mut().zip(w.row(k)) {
                            *d += x * wv;
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    /// Materialize as a dense matrix.
    pub fn to_mat(&self) -> Mat {
        let mut out = Mat::zeros(self.rows(), self.cols());
        match self {
            Features::Binary(f) => {
                for (o, &b) in out.data.iter_mut().zip(f.data.iter()) {
                    *o = b as f64;
                }
            }
            Features::Dense { data, .. } => out.data.copy_from_slice(data),
        }
        out
    }

    pub fn nnz(&self) -> usize {
        match self {
            Features::Binary(f) => f.data.iter().filter(|&&b| b != 0).count(),
            Features::Dense { data, .. } => data.iter().filter(|&&x| x != 0.0).count(),
        }
    }
}

/// Dense (T x nodes x channels) tensor used for per-layer traces.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    pub time_window: usize,
    pub nodes: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(time_window: usize, nodes: usize, channels: usize) -> Self {
        Tensor3 {
            time_window,
            nodes,
            channels,
            data: vec![0.0; time_window * nodes * channels],
        }
    }

    #[inline]
    pub fn at(&self, t: usize, node: usize, channel: usize) -> f64 {
        self.data[(t * self.nodes + node) * self.channels + channel]
    }

    #[inline]
    pub fn at_mut(&mut self, t: usize, node: usize, channel: usize) -> &mut f64 {
        &mut self.data[(t * self.nodes + node) * self.channels + channel]
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        let len = self.nodes * self.channels;
        &self.data[t * len..(t + 1) * len]
    }

    pub fn frame_mut(&mut self, t: usize) -> &mut [f64] {
        let len = self.nodes * self.channels;
        &mut self.data[t * len..(t + 1) * len]
    }

    pub fn set_frame(&mut self, t: usize, m: &Mat) {
        debug_assert_eq!(m.rows, self.nodes);
        debug_assert_eq!(m.cols, self.channels);
        self.frame_mut(t).copy_from_slice(&m.data);
    }

    pub fn frame_features(&self, t: usize) -> Features<'_> {
        Features::Dense {
            rows: self.nodes,
            cols: self.channels,
            data: self.frame(t),
        }
    }

    pub fn frame_nnz(&self, t: usize) -> usize {
        self.frame(t).iter().filter(|&&x| x != 0.0).count()
    }
}
