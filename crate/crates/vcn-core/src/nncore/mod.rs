//! Minimal differentiable compute substrate.
//!
//! Dense layers, leaky ReLU, max-pooling over points, broadcast
//! concatenation, and Adam, with every backward pass written out
//! explicitly. The network built on top is small and has fixed topology,
//! so there is no graph machinery: forward functions return whatever
//! caches their backward needs, and callers wire the chain by hand.
//! Everything is generic over [`Scalar`] so the same code runs in f32 for
//! training and in f64 under the finite-difference gradient checker.

mod adam;
mod checkpoint;
pub mod gradcheck;
mod ops;

pub use adam::Adam;
pub use checkpoint::{load_checkpoint, save_checkpoint, AdamState, Checkpoint};
pub use ops::{
    concat_broadcast, concat_broadcast_backward, dense_backward, dense_forward, leaky_relu,
    leaky_relu_backward, max_pool_backward, max_pool_points,
};

use std::collections::BTreeMap;
use std::fmt;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("{op}: shape mismatch, {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("operation requires at least one row")]
    EmptyInput,
    #[error("parameter {0} has no gradient")]
    MissingGrad(String),
    #[error("parameter {0} already registered")]
    DuplicateParam(String),
    #[error("unknown parameter {0}")]
    UnknownParam(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
}

/// Numeric width tag recorded in checkpoints.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Width {
    F32,
    F64,
}

impl Width {
    pub fn name(self) -> &'static str {
        match self {
            Width::F32 => "f32",
            Width::F64 => "f64",
        }
    }
}

/// Real scalar the substrate runs in: f32 for training, f64 for checks.
pub trait Scalar:
    num_traits::Float + fmt::Debug + fmt::Display + Default + Send + Sync + 'static
{
    const WIDTH: Width;
    const BYTES: usize;

    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;

    /// `c = alpha * a·b + beta * c` for row-major slices with explicit
    /// strides; backed by a SIMD GEMM.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        beta: Self,
        c: &mut [Self],
        rsc: isize,
        csc: isize,
    );

    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
}

impl Scalar for f32 {
    const WIDTH: Width = Width::F32;
    const BYTES: usize = 4;

    fn from_f64(v: f64) -> Self {
        v as f32
    }

    fn to_f64(self) -> f64 {
        self as f64
    }

    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        beta: Self,
        c: &mut [Self],
        rsc: isize,
        csc: isize,
    ) {
        unsafe {
            matrixmultiply::sgemm(
                m,
                k,
                n,
                alpha,
                a.as_ptr(),
                rsa,
                csa,
                b.as_ptr(),
                rsb,
                csb,
                beta,
                c.as_mut_ptr(),
                rsc,
                csc,
            );
        }
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes[..4].try_into().expect("4 bytes"))
    }
}

impl Scalar for f64 {
    const WIDTH: Width = Width::F64;
    const BYTES: usize = 8;

    fn from_f64(v: f64) -> Self {
        v
    }

    fn to_f64(self) -> f64 {
        self
    }

    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        beta: Self,
        c: &mut [Self],
        rsc: isize,
        csc: isize,
    ) {
        unsafe {
            matrixmultiply::dgemm(
                m,
                k,
                n,
                alpha,
                a.as_ptr(),
                rsa,
                csa,
                b.as_ptr(),
                rsb,
                csb,
                beta,
                c.as_mut_ptr(),
                rsc,
                csc,
            );
        }
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes[..8].try_into().expect("8 bytes"))
    }
}

/// Dense row-major matrix with an optional same-shape gradient buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor2<S: Scalar> {
    rows: usize,
    cols: usize,
    values: Vec<S>,
    grad: Option<Vec<S>>,
}

impl<S: Scalar> Tensor2<S> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor2 { rows, cols, values: vec![S::zero(); rows * cols], grad: None }
    }

    pub fn from_values(rows: usize, cols: usize, values: Vec<S>) -> Result<Self, NnError> {
        if values.len() != rows * cols {
            return Err(NnError::ShapeMismatch {
                op: "from_values",
                detail: format!("{rows}x{cols} needs {} values, got {}", rows * cols, values.len()),
            });
        }
        Ok(Tensor2 { rows, cols, values, grad: None })
    }

    pub fn from_f64s(rows: usize, cols: usize, values: &[f64]) -> Result<Self, NnError> {
        Self::from_values(rows, cols, values.iter().map(|&v| S::from_f64(v)).collect())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn values(&self) -> &[S] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [S] {
        &mut self.values
    }

    pub fn get(&self, r: usize, c: usize) -> S {
        self.values[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: S) {
        self.values[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[S] {
        &self.values[r * self.cols..(r + 1) * self.cols]
    }

    /// Gradient buffer, allocating zeros on first use.
    pub fn grad_mut(&mut self) -> &mut [S] {
        let n = self.values.len();
        self.grad.get_or_insert_with(|| vec![S::zero(); n])
    }

    pub fn grad(&self) -> Option<&[S]> {
        self.grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = &mut self.grad {
            g.fill(S::zero());
        }
    }

    /// Adds `delta` (same shape, values only) into the gradient buffer.
    pub fn accumulate_grad(&mut self, delta: &Tensor2<S>) {
        debug_assert_eq!(self.shape(), delta.shape());
        let g = self.grad_mut();
        for (gi, di) in g.iter_mut().zip(delta.values.iter()) {
            *gi = *gi + *di;
        }
    }
}

/// Named parameter tensors with deterministic (sorted-name) iteration.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<S: Scalar> {
    params: BTreeMap<String, Tensor2<S>>,
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        ParamStore { params: BTreeMap::new() }
    }

    /// Registers a tensor under a unique name. Shapes are fixed from here
    /// on: there is no API that replaces a registered tensor.
    pub fn register(&mut self, name: &str, tensor: Tensor2<S>) -> Result<(), NnError> {
        if self.params.contains_key(name) {
            return Err(NnError::DuplicateParam(name.to_string()));
        }
        self.params.insert(name.to_string(), tensor);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor2<S>, NnError> {
        self.params.get(name).ok_or_else(|| NnError::UnknownParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor2<S>, NnError> {
        self.params.get_mut(name).ok_or_else(|| NnError::UnknownParam(name.to_string()))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Iterates in sorted-name order.
    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor2<S>)> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor2<S>)> {
        self.params.iter_mut()
    }

    pub fn names(&self) -> Vec<String> {
        self.params.keys().cloned().collect()
    }

    pub fn zero_grads(&mut self) {
        for t in self.params.values_mut() {
            t.zero_grad();
        }
    }

    /// Total number of scalar parameters.
    pub fn num_values(&self) -> usize {
        self.params.values().map(|t| t.values.len()).sum()
    }

    /// Converts every tensor to another width (values only; grads dropped).
    pub fn cast<T: Scalar>(&self) -> ParamStore<T> {
        let mut out = ParamStore::new();
        for (name, t) in &self.params {
            let values = t.values.iter().map(|&v| T::from_f64(v.to_f64())).collect();
            let tensor = Tensor2 { rows: t.rows, cols: t.cols, values, grad: None };
            out.params.insert(name.clone(), tensor);
        }
        out
    }
}
