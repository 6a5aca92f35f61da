use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Result, SeqError};
use crate::rng::{self, tag};

/// Tensor names in storage order.
pub const TENSOR_NAMES: [&str; 12] =
    ["item_emb", "dec_emb", "w_z", "w_r", "w_h", "u_z", "u_r", "u_h", "b_z", "b_r", "b_h", "out_bias"];

/// Model weights. Matrices are row-major `out × in`; `dec_emb` row 0 is
/// "rejected", row 1 "accepted".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeqModelParams {
    pub n_items: usize,
    pub dim: usize,
    pub max_seq_len: usize,
    pub item_emb: Vec<f64>,
    pub dec_emb: Vec<f64>,
    pub w: [Vec<f64>; 3],
    pub u: [Vec<f64>; 3],
    pub b: [Vec<f64>; 3],
    pub out_bias: Vec<f64>,
}

/// Gradients share the parameter layout.
pub type Gradients = SeqModelParams;

pub(crate) const Z: usize = 0;
pub(crate) const R: usize = 1;
pub(crate) const H: usize = 2;

impl SeqModelParams {
    pub fn zeros(n_items: usize, dim: usize, max_seq_len: usize) -> Self {
        let mat = || vec![0.0; dim * dim];
        let vec = || vec![0.0; dim];
        Self {
            n_items,
            dim,
            max_seq_len,
            item_emb: vec![0.0; n_items * dim],
            dec_emb: vec![0.0; 2 * dim],
            w: [mat(), mat(), mat()],
            u: [mat(), mat(), mat()],
            b: [vec(), vec(), vec()],
            out_bias: vec![0.0; n_items],
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.n_items, self.dim, self.max_seq_len)
    }

    /// Embeddings `N(0, 0.02²)`, gate matrices Glorot-uniform, biases zero.
    pub fn init(n_items: usize, dim: usize, max_seq_len: usize, seed: u64) -> Self {
        let mut p = Self::zeros(n_items, dim, max_seq_len);
        let mut rng = rng::stream(seed, tag::INIT, 0);
        let normal = Normal::new(0.0, 0.02).expect("valid std");
        for x in p.item_emb.iter_mut().chain(p.dec_emb.iter_mut()) {
            *x = normal.sample(&mut rng);
        }
        let limit = (6.0 / (2 * dim) as f64).sqrt();
        for m in p.w.iter_mut().chain(p.u.iter_mut()) {
            for x in m.iter_mut() {
                *x = rng.random_range(-limit..limit);
            }
        }
        p
    }

    pub fn tensors(&self) -> [&[f64]; 12] {
        let [wz, wr, wh] = &self.w;
        let [uz, ur, uh] = &self.u;
        let [bz, br, bh] = &self.b;
        [&self.item_emb, &self.dec_emb, wz, wr, wh, uz, ur, uh, bz, br, bh, &self.out_bias]
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; 12] {
        let [wz, wr, wh] = &mut self.w;
        let [uz, ur, uh] = &mut self.u;
        let [bz, br, bh] = &mut self.b;
        [&mut self.item_emb, &mut self.dec_emb, wz, wr, wh, uz, ur, uh, bz, br, bh, &mut self.out_bias]
    }

    /// `[rows, cols]` of each tensor (vectors have one column).
    pub fn shapes(&self) -> [[usize; 2]; 12] {
        let (n, d) = (self.n_items, self.dim);
        let mut shapes = [[d, d]; 12];
        shapes[0] = [n, d];
        shapes[1] = [2, d];
        for s in &mut shapes[8..11] {
            *s = [d, 1];
        }
        shapes[11] = [n, 1];
        shapes
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.n_items == other.n_items && self.dim == other.dim
    }

    pub fn check_shape(&self, other: &Self) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(SeqError::ShapeMismatch(format!(
                "{}x{} vs {}x{}",
                self.n_items, self.dim, other.n_items, other.dim
            )))
        }
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|x| x.is_finite()))
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.tensors().iter().flat_map(|t| t.iter()).fold(0.0, |m, x| m.max(x.abs()))
    }

    /// Flat read of parameter `index` in storage order.
    pub fn get_flat(&self, mut index: usize) -> f64 {
        for t in self.tensors() {
            if index < t.len() {
                return t[index];
            }
            index -= t.len();
        }
        panic!("flat index out of range")
    }

    pub fn set_flat(&mut self, mut index: usize, value: f64) {
        for t in self.tensors_mut() {
            if index < t.len() {
                t[index] = value;
                return;
            }
            index -= t.len();
        }
        panic!("flat index out of range")
    }

    pub(crate) fn check_items(&self, items: impl IntoIterator<Item = usize>) -> Result<()> {
        for i in items {
            if i >= self.n_items {
                return Err(SeqError::UnknownItem(i));
            }
        }
        Ok(())
    }

    pub(crate) fn item_row(&self, i: usize) -> &[f64] {
        &self.item_emb[i * self.dim..(i + 1) * self.dim]
    }

    #[inline]
    pub(crate) fn score(&self, h: &[f64], j: usize) -> f64 {
        dot(h, self.item_row(j)) + self.out_bias[j]
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
