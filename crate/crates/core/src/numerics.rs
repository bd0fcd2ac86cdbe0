//! Dense float64 linear algebra, activations and a seeded generator.
//!
//! Everything here is deliberately small: the recurrent cells only need
//! matrix-vector products, rank-one updates and elementwise maps. The hot
//! kernels (`gemv_acc`, `gemv_t_acc`, `rank1_acc`) accumulate into caller
//! buffers and skip zero entries of their vector operand, which makes one-hot
//! token inputs cost a column lookup instead of a full product.

use std::ops::{Deref, DerefMut};

use crate::error::{Error, Result};

/// Column vector of float64 values.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Vector(Vec<f64>);

impl Vector {
    pub fn zeros(len: usize) -> Self {
        Vector(vec![0.0; len])
    }

    pub fn filled(len: usize, value: f64) -> Self {
        Vector(vec![value; len])
    }

    pub fn one_hot(len: usize, index: usize) -> Self {
        let mut v = Vector::zeros(len);
        v.0[index] = 1.0;
        v
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs_diff(&self, other: &Vector) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn concat(a: &Vector, b: &Vector) -> Vector {
        let mut data = Vec::with_capacity(a.len() + b.len());
        data.extend_from_slice(a);
        data.extend_from_slice(b);
        Vector(data)
    }
}

impl From<Vec<f64>> for Vector {
    fn from(data: Vec<f64>) -> Self {
        Vector(data)
    }
}

impl From<&[f64]> for Vector {
    fn from(data: &[f64]) -> Self {
        Vector(data.to_vec())
    }
}

impl Deref for Vector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for Vector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::DimensionMismatch {
                op: "Matrix::from_vec",
                expected: rows * cols,
                actual: data.len(),
            });
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::DimensionMismatch {
                    op: "Matrix::from_rows",
                    expected: cols,
                    actual: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, value: f64) {
        self.data[r * self.cols + c] = value;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// `out += self · x`.
    pub(crate) fn gemv_acc(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        let nonzero = x.iter().filter(|v| **v != 0.0).count();
        if nonzero * 8 <= self.cols {
            for (c, &xc) in x.iter().enumerate() {
                if xc == 0.0 {
                    continue;
                }
                for (r, o) in out.iter_mut().enumerate() {
                    *o += self.data[r * self.cols + c] * xc;
                }
            }
            return;
        }
        for (o, row) in out.iter_mut().zip(self.data.chunks_exact(self.cols)) {
            *o += dot(row, x);
        }
    }

    /// `outs[b] += self · xs[b]` for every `b`, reusing each row across the
    /// batch. Per-vector results are bit-identical to [`Matrix::gemv_acc`].
    pub(crate) fn gemv_many_acc(&self, xs: &[&[f64]], outs: &mut [Vector]) {
        debug_assert_eq!(xs.len(), outs.len());
        let mut dense = Vec::with_capacity(xs.len());
        for (b, x) in xs.iter().enumerate() {
            debug_assert_eq!(x.len(), self.cols);
            let nonzero = x.iter().filter(|v| **v != 0.0).count();
            if nonzero * 8 <= self.cols {
                self.gemv_acc(x, &mut outs[b]);
            } else {
                dense.push(b);
            }
        }
        for group in dense.chunks(4) {
            if let [b0, b1, b2, b3] = *group {
                let xs4 = [xs[b0], xs[b1], xs[b2], xs[b3]];
                for (r, row) in self.data.chunks_exact(self.cols).enumerate() {
                    let d = dot_n(row, xs4);
                    outs[b0][r] += d[0];
                    outs[b1][r] += d[1];
                    outs[b2][r] += d[2];
                    outs[b3][r] += d[3];
                }
            } else {
                for &b in group {
                    for (o, row) in outs[b].iter_mut().zip(self.data.chunks_exact(self.cols)) {
                        *o += dot(row, xs[b]);
                    }
                }
            }
        }
    }

    /// `outs[b] += selfᵀ · ys[b]` for every `b`.
    pub(crate) fn gemv_t_many_acc(&self, ys: &[&[f64]], outs: &mut [Vector]) {
        debug_assert_eq!(ys.len(), outs.len());
        for (ys, outs) in ys.chunks(BATCH_CHUNK).zip(outs.chunks_mut(BATCH_CHUNK)) {
            for (r, row) in self.data.chunks_exact(self.cols).enumerate() {
                for (y, out) in ys.iter().zip(outs.iter_mut()) {
                    let yr = y[r];
                    if yr == 0.0 {
                        continue;
                    }
                    for (o, w) in out.iter_mut().zip(row) {
                        *o += w * yr;
                    }
                }
            }
        }
    }

    /// `self += Σ_b as[b] · bs[b]ᵀ` with dense `bs`, summed in batch order.
    pub(crate) fn rank1_many_acc(&mut self, a_s: &[&[f64]], bs: &[&[f64]]) {
        debug_assert_eq!(a_s.len(), bs.len());
        let cols = self.cols;
        for (a_s, bs) in a_s.chunks(BATCH_CHUNK).zip(bs.chunks(BATCH_CHUNK)) {
            for (r, row) in self.data.chunks_exact_mut(cols).enumerate() {
                for (a, b) in a_s.iter().zip(bs) {
                    let ar = a[r];
                    if ar == 0.0 {
                        continue;
                    }
                    for (w, bc) in row.iter_mut().zip(b.iter()) {
                        *w += ar * bc;
                    }
                }
            }
        }
    }

    /// `out += selfᵀ · y`.
    pub(crate) fn gemv_t_acc(&self, y: &[f64], out: &mut [f64]) {
        debug_assert_eq!(y.len(), self.rows);
        debug_assert_eq!(out.len(), self.cols);
        for (&yr, row) in y.iter().zip(self.data.chunks_exact(self.cols)) {
            if yr == 0.0 {
                continue;
            }
            for (o, w) in out.iter_mut().zip(row) {
                *o += w * yr;
            }
        }
    }

    /// `self += a · bᵀ`.
    pub(crate) fn rank1_acc(&mut self, a: &[f64], b: &[f64]) {
        debug_assert_eq!(a.len(), self.rows);
        debug_assert_eq!(b.len(), self.cols);
        let cols = self.cols;
        let nonzero = b.iter().filter(|v| **v != 0.0).count();
        if nonzero * 8 <= cols {
            for (c, &bc) in b.iter().enumerate() {
                if bc == 0.0 {
                    continue;
                }
                for (r, &ar) in a.iter().enumerate() {
                    self.data[r * cols + c] += ar * bc;
                }
            }
            return;
        }
        for (&ar, row) in a.iter().zip(self.data.chunks_exact_mut(cols)) {
            if ar == 0.0 {
                continue;
            }
            for (w, bc) in row.iter_mut().zip(b) {
                *w += ar * bc;
            }
        }
    }
}

/// Batch members visited per pass over a matrix, sized so their vectors
/// stay cache-resident.
const BATCH_CHUNK: usize = 16;

/// Four dot products against one row, each summed exactly as [`dot`] does.
fn dot_n(a: &[f64], xs: [&[f64]; 4]) -> [f64; 4] {
    let mut acc = [[0.0f64; 4]; 4];
    let chunks = a.len() / 4;
    let xs = xs.map(|x| &x[..a.len()]);
    for k in 0..chunks {
        let i = 4 * k;
        let w = &a[i..i + 4];
        for (acc, x) in acc.iter_mut().zip(xs) {
            let x = &x[i..i + 4];
            acc[0] += w[0] * x[0];
            acc[1] += w[1] * x[1];
            acc[2] += w[2] * x[2];
            acc[3] += w[3] * x[3];
        }
    }
    let mut out = [0.0; 4];
    for (n, x) in xs.iter().enumerate() {
        let mut tail = 0.0;
        for i in 4 * chunks..a.len() {
            tail += a[i] * x[i];
        }
        out[n] = (acc[n][0] + acc[n][1]) + (acc[n][2] + acc[n][3]) + tail;
    }
    out
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for k in 0..chunks {
        let i = 4 * k;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in 4 * chunks..a.len() {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Matrix-vector product `m · v`.
pub fn matvec(m: &Matrix, v: &Vector) -> Result<Vector> {
    if m.cols != v.len() {
        return Err(Error::DimensionMismatch {
            op: "matvec",
            expected: m.cols,
            actual: v.len(),
        });
    }
    let mut out = Vector::zeros(m.rows);
    m.gemv_acc(v, &mut out);
    Ok(out)
}

/// Logistic function, evaluated on the branch that never exponentiates a
/// positive argument.
pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(v: &Vector) -> Vector {
    v.iter().map(|&x| sigmoid_scalar(x)).collect::<Vec<_>>().into()
}

pub fn tanh(v: &Vector) -> Vector {
    v.iter().map(|x| x.tanh()).collect::<Vec<_>>().into()
}

fn check_same_len(op: &'static str, a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            op,
            expected: a.len(),
            actual: b.len(),
        });
    }
    Ok(())
}

pub fn hadamard(a: &Vector, b: &Vector) -> Result<Vector> {
    check_same_len("hadamard", a, b)?;
    Ok(a.iter().zip(b.iter()).map(|(x, y)| x * y).collect::<Vec<_>>().into())
}

pub fn add(a: &Vector, b: &Vector) -> Result<Vector> {
    check_same_len("add", a, b)?;
    Ok(a.iter().zip(b.iter()).map(|(x, y)| x + y).collect::<Vec<_>>().into())
}

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 in counter form: output `k` is `mix(seed + k·γ)`.
///
/// The stream depends only on the seed and the number of draws, so any
/// implementation of the same three-line mixer reproduces it exactly.
/// Floats take the top 53 bits: `(u >> 11) · 2⁻⁵³ ∈ [0, 1)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Rng {
    seed: u64,
    counter: u64,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng { seed, counter: 0 }
    }

    /// Independent generator for a named purpose (initialization, shuffling,
    /// data generation) derived from one run seed.
    pub fn derive(seed: u64, stream: u64) -> Self {
        Rng::new(mix(seed ^ mix(stream.wrapping_add(GOLDEN_GAMMA))))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix(self.seed.wrapping_add(self.counter.wrapping_mul(GOLDEN_GAMMA)))
    }

    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Integer in `0..n` by multiply-shift.
    pub fn below(&mut self, n: usize) -> usize {
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    /// Fisher-Yates, back to front.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum InitScheme {
    /// Uniform in `±sqrt(6 / (rows + cols))`.
    XavierUniform,
    Zero,
}

pub fn init_params(rng: &mut Rng, rows: usize, cols: usize, scheme: InitScheme) -> Matrix {
    let mut m = Matrix::zeros(rows, cols);
    if let InitScheme::XavierUniform = scheme {
        let s = (6.0 / (rows + cols) as f64).sqrt();
        for w in m.data.iter_mut() {
            *w = rng.uniform(-s, s);
        }
    }
    m
}
