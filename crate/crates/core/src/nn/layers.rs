//! Layer primitives and their local derivatives.
//!
//! Dense weights are stored `out_dim × in_dim`, biases `1 × out_dim`, so a
//! batch forward is `x · Wᵀ + b`.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::{
    matmul, matmul_nt, matmul_tn, sparse_dense_product, sparse_transpose_dense_product, DenseMatrix, Scalar, SeededRng,
    SparseBinaryMatrix,
};

/// Stochastic layers are only active in `Train`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// A layer input: either the raw sparse batch or a dense activation.
#[derive(Clone, Debug)]
pub enum Act<T> {
    Sparse(Arc<SparseBinaryMatrix>),
    Dense(Arc<DenseMatrix<T>>),
}

impl<T: Scalar> Act<T> {
    pub fn rows(&self) -> usize {
        match self {
            Act::Sparse(s) => s.rows(),
            Act::Dense(d) => d.rows(),
        }
    }

    pub fn cols(&self) -> usize {
        match self {
            Act::Sparse(s) => s.cols(),
            Act::Dense(d) => d.cols(),
        }
    }

    pub fn dense(&self) -> Option<&Arc<DenseMatrix<T>>> {
        match self {
            Act::Dense(d) => Some(d),
            Act::Sparse(_) => None,
        }
    }
}

fn check_bias<T: Scalar>(w: &DenseMatrix<T>, b: &DenseMatrix<T>) -> Result<()> {
    if b.rows() != 1 || b.cols() != w.rows() {
        return Err(Error::ShapeMismatch {
            op: "bias",
            left: w.shape(),
            right: b.shape(),
        });
    }
    Ok(())
}

fn add_bias<T: Scalar>(out: &mut DenseMatrix<T>, b: &DenseMatrix<T>) {
    let bias = b.data();
    for r in 0..out.rows() {
        for (o, &bv) in out.row_mut(r).iter_mut().zip(bias) {
            *o += bv;
        }
    }
}

/// `x · Wᵀ + b` broadcast over rows.
pub fn dense_forward<T: Scalar>(x: &DenseMatrix<T>, w: &DenseMatrix<T>, b: &DenseMatrix<T>) -> Result<DenseMatrix<T>> {
    if x.cols() != w.cols() {
        return Err(Error::ShapeMismatch {
            op: "dense_forward",
            left: x.shape(),
            right: w.shape(),
        });
    }
    check_bias(w, b)?;
    let mut out = matmul_nt(x, w)?;
    add_bias(&mut out, b);
    out.check_finite("dense_forward")?;
    Ok(out)
}

/// Projection without bias; used for skip edges.
pub fn project<T: Scalar>(x: &Act<T>, w: &DenseMatrix<T>) -> Result<DenseMatrix<T>> {
    if x.cols() != w.cols() {
        return Err(Error::ShapeMismatch {
            op: "project",
            left: (x.rows(), x.cols()),
            right: w.shape(),
        });
    }
    match x {
        Act::Sparse(s) => sparse_dense_product(s, &w.transpose()),
        Act::Dense(d) => matmul_nt(d, w),
    }
}

/// Dense layer on either input kind.
pub fn dense_forward_act<T: Scalar>(x: &Act<T>, w: &DenseMatrix<T>, b: &DenseMatrix<T>) -> Result<DenseMatrix<T>> {
    match x {
        Act::Dense(d) => dense_forward(d, w, b),
        Act::Sparse(_) => {
            check_bias(w, b)?;
            let mut out = project(x, w)?;
            add_bias(&mut out, b);
            out.check_finite("dense_forward")?;
            Ok(out)
        }
    }
}

/// Gradients of a dense (or bias-free projection) edge.
pub struct DenseGrads<T> {
    pub weight: DenseMatrix<T>,
    pub bias: DenseMatrix<T>,
    /// `None` when the input was the sparse batch or was not requested.
    pub input: Option<DenseMatrix<T>>,
}

/// Backward of `y = x · Wᵀ + b` given `dy`.
pub fn dense_backward<T: Scalar>(x: &Act<T>, w: &DenseMatrix<T>, dy: &DenseMatrix<T>, want_input: bool) -> Result<DenseGrads<T>> {
    if dy.cols() != w.rows() || dy.rows() != x.rows() {
        return Err(Error::ShapeMismatch {
            op: "dense_backward",
            left: dy.shape(),
            right: w.shape(),
        });
    }
    let weight = match x {
        Act::Dense(d) => matmul_tn(dy, d)?,
        Act::Sparse(s) => sparse_transpose_dense_product(s, dy)?.transpose(),
    };
    let mut bias = DenseMatrix::zeros(1, dy.cols());
    for r in 0..dy.rows() {
        for (acc, &g) in bias.data_mut().iter_mut().zip(dy.row(r)) {
            *acc += g;
        }
    }
    let input = match x {
        Act::Dense(_) if want_input => Some(matmul(dy, w)?),
        _ => None,
    };
    Ok(DenseGrads { weight, bias, input })
}

pub fn relu<T: Scalar>(x: &DenseMatrix<T>) -> DenseMatrix<T> {
    x.map(|v| if v > T::ZERO { v } else { T::ZERO })
}

/// `dy` masked by where the ReLU output was positive.
pub fn relu_backward<T: Scalar>(output: &DenseMatrix<T>, dy: &DenseMatrix<T>) -> DenseMatrix<T> {
    debug_assert_eq!(output.shape(), dy.shape());
    let data = output
        .data()
        .iter()
        .zip(dy.data())
        .map(|(&o, &g)| if o > T::ZERO { g } else { T::ZERO })
        .collect();
    DenseMatrix::from_parts(dy.rows(), dy.cols(), data)
}

/// Inverted dropout. In `Train` each unit survives with probability
/// `1 - rate` and survivors are scaled by `1 / (1 - rate)`; the returned
/// mask holds those multipliers. `Infer`, or a zero rate, is the identity
/// and draws nothing from `rng`.
pub fn dropout_forward<T: Scalar>(
    x: &DenseMatrix<T>,
    rate: f32,
    mode: Mode,
    rng: &mut SeededRng,
) -> Result<(DenseMatrix<T>, Option<DenseMatrix<T>>)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::invalid(format!("dropout rate {rate} outside [0, 1)")));
    }
    if mode == Mode::Infer || rate == 0.0 {
        return Ok((x.clone(), None));
    }
    let keep = 1.0 - rate as f64;
    let scale = T::of(1.0 / keep);
    let mask_data: Vec<T> = (0..x.len())
        .map(|_| if rng.uniform() < keep { scale } else { T::ZERO })
        .collect();
    let mask = DenseMatrix::from_parts(x.rows(), x.cols(), mask_data);
    let y = DenseMatrix::from_parts(
        x.rows(),
        x.cols(),
        x.data().iter().zip(mask.data()).map(|(&v, &m)| v * m).collect(),
    );
    Ok((y, Some(mask)))
}

pub fn dropout_backward<T: Scalar>(mask: Option<&DenseMatrix<T>>, dy: DenseMatrix<T>) -> DenseMatrix<T> {
    match mask {
        None => dy,
        Some(m) => DenseMatrix::from_parts(
            dy.rows(),
            dy.cols(),
            dy.data().iter().zip(m.data()).map(|(&g, &k)| g * k).collect(),
        ),
    }
}

/// Column-wise concatenation in part order.
pub fn concat_forward<T: Scalar>(parts: &[&DenseMatrix<T>]) -> Result<DenseMatrix<T>> {
    let Some(first) = parts.first() else {
        return Err(Error::invalid("concat of zero parts"));
    };
    let rows = first.rows();
    if let Some(bad) = parts.iter().find(|p| p.rows() != rows) {
        return Err(Error::ShapeMismatch {
            op: "concat",
            left: first.shape(),
            right: bad.shape(),
        });
    }
    let cols: usize = parts.iter().map(|p| p.cols()).sum();
    let mut data = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for p in parts {
            data.extend_from_slice(p.row(r));
        }
    }
    Ok(DenseMatrix::from_parts(rows, cols, data))
}

/// Numerically stable logistic function in `f64`.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Sigmoid scores kept strictly inside `(0, 1)` at the element precision.
pub fn sigmoid_scores<T: Scalar>(logits: &DenseMatrix<T>) -> DenseMatrix<T> {
    let lo = T::of(f32::MIN_POSITIVE as f64);
    let hi = T::of(1.0 - f32::EPSILON as f64 / 2.0);
    logits.map(|z| {
        let p = T::of(sigmoid(z.as_f64()));
        if p < lo {
            lo
        } else if p > hi {
            hi
        } else {
            p
        }
    })
}

pub const BCE_CLAMP: f64 = 1e-7;

/// Mean binary cross-entropy over all cells and its gradient w.r.t. the
/// logits, `(p - y) / cells`.
pub fn sigmoid_bce<T: Scalar>(logits: &DenseMatrix<T>, targets: &SparseBinaryMatrix) -> Result<(f64, DenseMatrix<T>)> {
    let cells = logits.len();
    let (sum, grad) = sigmoid_bce_sum(logits, targets, cells.max(1) as f64)?;
    Ok((if cells == 0 { 0.0 } else { sum / cells as f64 }, grad))
}

/// Summed BCE, with gradients divided by `denom` (the cell count of the
/// whole batch when `logits` is one shard of it).
pub(crate) fn sigmoid_bce_sum<T: Scalar>(
    logits: &DenseMatrix<T>,
    targets: &SparseBinaryMatrix,
    denom: f64,
) -> Result<(f64, DenseMatrix<T>)> {
    if logits.shape() != (targets.rows(), targets.cols()) {
        return Err(Error::ShapeMismatch {
            op: "sigmoid_bce",
            left: logits.shape(),
            right: (targets.rows(), targets.cols()),
        });
    }
    let mut grad = DenseMatrix::zeros(logits.rows(), logits.cols());
    let mut total = 0.0f64;
    for r in 0..logits.rows() {
        let active = targets.row(r);
        let mut next = 0;
        for (c, (&z, g)) in logits.row(r).iter().zip(grad.row_mut(r)).enumerate() {
            let y = if next < active.len() && active[next] as usize == c {
                next += 1;
                1.0
            } else {
                0.0
            };
            let p = sigmoid(z.as_f64());
            let pc = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
            total += -(y * pc.ln() + (1.0 - y) * (1.0 - pc).ln());
            *g = T::of((p - y) / denom);
        }
    }
    Ok((total, grad))
}
