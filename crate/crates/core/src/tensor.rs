//! Dense matrices, sparse binary matrices and the seeded random source.
//!
//! Every reduction in this module accumulates in a fixed order: each output
//! element of a product is summed over the inner dimension from left to
//! right. Vectorized code paths only widen the number of output elements
//! processed at once, never the order of the sum, so results are bitwise
//! identical across code paths and runs.

use std::fmt::Debug;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Floating point element type. `f32` is used for training and inference;
/// `f64` exists for numerical verification builds of the same code.
pub trait Scalar:
    num_like::Float + AddAssign + SubAssign + MulAssign + DivAssign + Default + Debug + Send + Sync + 'static
{
    fn of(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    #[inline(always)]
    fn of(v: f64) -> Self {
        v as f32
    }
    #[inline(always)]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    #[inline(always)]
    fn of(v: f64) -> Self {
        v
    }
    #[inline(always)]
    fn as_f64(self) -> f64 {
        self
    }
}

/// The handful of float operations the kernels need.
pub mod num_like {
    use std::ops::{Add, Div, Mul, Neg, Sub};

    pub trait Float:
        Copy
        + PartialOrd
        + Add<Output = Self>
        + Sub<Output = Self>
        + Mul<Output = Self>
        + Div<Output = Self>
        + Neg<Output = Self>
    {
        const ZERO: Self;
        const ONE: Self;
        fn exp(self) -> Self;
        fn ln(self) -> Self;
        fn sqrt(self) -> Self;
        fn is_finite(self) -> bool;
        /// `self * a + b` with a single rounding.
        fn mul_add(self, a: Self, b: Self) -> Self;
        fn to_le_bytes_vec(self, out: &mut Vec<u8>);
    }

    macro_rules! impl_float {
        ($t:ty) => {
            impl Float for $t {
                const ZERO: Self = 0.0;
                const ONE: Self = 1.0;
                #[inline(always)]
                fn exp(self) -> Self {
                    <$t>::exp(self)
                }
                #[inline(always)]
                fn ln(self) -> Self {
                    <$t>::ln(self)
                }
                #[inline(always)]
                fn sqrt(self) -> Self {
                    <$t>::sqrt(self)
                }
                #[inline(always)]
                fn is_finite(self) -> bool {
                    <$t>::is_finite(self)
                }
                #[inline(always)]
                fn mul_add(self, a: Self, b: Self) -> Self {
                    <$t>::mul_add(self, a, b)
                }
                fn to_le_bytes_vec(self, out: &mut Vec<u8>) {
                    out.extend_from_slice(&self.to_le_bytes());
                }
            }
        };
    }
    impl_float!(f32);
    impl_float!(f64);
}

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseMatrix<T = f32> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> DenseMatrix<T> {
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::invalid(format!(
                "data length {} does not match {rows}x{cols}",
                data.len()
            )));
        }
        let m = DenseMatrix { rows, cols, data };
        m.check_finite("DenseMatrix::new")?;
        Ok(m)
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix {
            rows,
            cols,
            data: vec![T::ZERO; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: T) -> Self {
        DenseMatrix {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = T::ONE;
        }
        m
    }

    /// Builds a matrix from equal-length rows. Convenient in tests.
    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::invalid("ragged rows"));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    /// Internal constructor for kernel outputs whose shape is known correct.
    pub(crate) fn from_parts(rows: usize, cols: usize, data: Vec<T>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        DenseMatrix { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn transpose(&self) -> Self {
        let mut out = vec![T::ZERO; self.data.len()];
        // Blocked so that both sides stay cache resident on large matrices.
        const B: usize = 32;
        for rb in (0..self.rows).step_by(B) {
            for cb in (0..self.cols).step_by(B) {
                for r in rb..(rb + B).min(self.rows) {
                    for c in cb..(cb + B).min(self.cols) {
                        out[c * self.rows + r] = self.data[r * self.cols + c];
                    }
                }
            }
        }
        DenseMatrix::from_parts(self.cols, self.rows, out)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        DenseMatrix::from_parts(self.rows, self.cols, self.data.iter().map(|&v| f(v)).collect())
    }

    /// Copies a contiguous run of rows.
    pub fn slice_rows(&self, start: usize, end: usize) -> Self {
        DenseMatrix::from_parts(
            end - start,
            self.cols,
            self.data[start * self.cols..end * self.cols].to_vec(),
        )
    }

    /// Copies the columns `start..end`.
    pub fn slice_cols(&self, start: usize, end: usize) -> Self {
        let width = end - start;
        let mut out = Vec::with_capacity(self.rows * width);
        for r in 0..self.rows {
            out.extend_from_slice(&self.row(r)[start..end]);
        }
        DenseMatrix::from_parts(self.rows, width, out)
    }

    /// Elementwise `self += other`.
    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::ShapeMismatch {
                op: "add",
                left: self.shape(),
                right: other.shape(),
            });
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn check_finite(&self, op: &'static str) -> Result<()> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite(op))
        }
    }

    /// Converts element type, e.g. to run the same model in `f64`.
    pub fn cast<U: Scalar>(&self) -> DenseMatrix<U> {
        DenseMatrix::from_parts(
            self.rows,
            self.cols,
            self.data.iter().map(|v| U::of(v.as_f64())).collect(),
        )
    }
}

/// Rows of 0/1 values stored as sorted lists of active column indices.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct SparseBinaryMatrix {
    cols: usize,
    row_indices: Vec<Vec<u32>>,
}

impl SparseBinaryMatrix {
    /// Validates that each row is strictly increasing and in range.
    pub fn new(cols: usize, row_indices: Vec<Vec<u32>>) -> Result<Self> {
        for (r, idx) in row_indices.iter().enumerate() {
            for (pos, &i) in idx.iter().enumerate() {
                if i as usize >= cols {
                    return Err(Error::IndexOutOfRange {
                        row: r,
                        index: i as usize,
                        cols,
                    });
                }
                if pos > 0 && idx[pos - 1] >= i {
                    return Err(Error::UnsortedIndices { row: r });
                }
            }
        }
        Ok(SparseBinaryMatrix { cols, row_indices })
    }

    /// Sorts and de-duplicates each row before validating.
    pub fn from_unsorted(cols: usize, mut row_indices: Vec<Vec<u32>>) -> Result<Self> {
        for row in &mut row_indices {
            row.sort_unstable();
            row.dedup();
        }
        Self::new(cols, row_indices)
    }

    pub fn empty(cols: usize) -> Self {
        SparseBinaryMatrix {
            cols,
            row_indices: Vec::new(),
        }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.row_indices.len()
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[u32] {
        &self.row_indices[r]
    }

    pub fn row_lists(&self) -> &[Vec<u32>] {
        &self.row_indices
    }

    pub fn contains(&self, r: usize, c: u32) -> bool {
        self.row_indices[r].binary_search(&c).is_ok()
    }

    /// Total number of active cells.
    pub fn nnz(&self) -> usize {
        self.row_indices.iter().map(Vec::len).sum()
    }

    pub fn densify<T: Scalar>(&self) -> DenseMatrix<T> {
        let mut m = DenseMatrix::zeros(self.rows(), self.cols);
        for (r, idx) in self.row_indices.iter().enumerate() {
            for &c in idx {
                m.set(r, c as usize, T::ONE);
            }
        }
        m
    }

    /// New matrix holding the given rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        SparseBinaryMatrix {
            cols: self.cols,
            row_indices: rows.iter().map(|&r| self.row_indices[r].clone()).collect(),
        }
    }

    pub fn slice_rows(&self, start: usize, end: usize) -> Self {
        SparseBinaryMatrix {
            cols: self.cols,
            row_indices: self.row_indices[start..end].to_vec(),
        }
    }

    /// Number of rows in which each column is active.
    pub fn column_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.cols];
        for idx in &self.row_indices {
            for &c in idx {
                counts[c as usize] += 1;
            }
        }
        counts
    }
}

/// Deterministic, platform independent random source (ChaCha8).
#[derive(Clone, Debug)]
pub struct SeededRng {
    seed: u64,
    inner: ChaCha8Rng,
    spare_normal: Option<f64>,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        SeededRng {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
            spare_normal: None,
        }
    }

    /// Independent stream keyed by `(seed, stream)`; used to give each
    /// training step or data shard its own reproducible randomness.
    pub fn derive(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        SeededRng {
            seed,
            inner,
            spare_normal: None,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.gen::<f64>()
    }

    /// Uniform integer in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.gen_range(0..n)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    pub fn shuffle<X>(&mut self, items: &mut [X]) {
        items.shuffle(&mut self.inner);
    }

    /// Standard normal draw (Marsaglia polar method). Uses `libm` so the
    /// stream does not depend on the platform math library.
    pub fn standard_normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        loop {
            let u = 2.0 * self.uniform() - 1.0;
            let v = 2.0 * self.uniform() - 1.0;
            let s = u * u + v * v;
            if s > 0.0 && s < 1.0 {
                let f = (-2.0 * libm::log(s) / s).sqrt();
                self.spare_normal = Some(v * f);
                return u * f;
            }
        }
    }
}

/// i.i.d. normal samples, row-major draw order.
pub fn sample_gaussian<T: Scalar>(
    rng: &mut SeededRng,
    rows: usize,
    cols: usize,
    mean: f64,
    stddev: f64,
) -> Result<DenseMatrix<T>> {
    if stddev.is_nan() || stddev < 0.0 || !stddev.is_finite() || !mean.is_finite() {
        return Err(Error::invalid(format!(
            "gaussian parameters must be finite with stddev >= 0 (mean {mean}, stddev {stddev})"
        )));
    }
    let data = (0..rows * cols)
        .map(|_| T::of(mean + stddev * rng.standard_normal()))
        .collect();
    Ok(DenseMatrix::from_parts(rows, cols, data))
}

/// `A · B`.
pub fn matmul<T: Scalar>(a: &DenseMatrix<T>, b: &DenseMatrix<T>) -> Result<DenseMatrix<T>> {
    if a.cols != b.rows {
        return Err(Error::ShapeMismatch {
            op: "matmul",
            left: a.shape(),
            right: b.shape(),
        });
    }
    let mut out = DenseMatrix::zeros(a.rows, b.cols);
    gemm_acc(a.rows, b.cols, a.cols, &a.data, &b.data, &mut out.data);
    out.check_finite("matmul")?;
    Ok(out)
}

/// `A · Bᵀ`, bitwise equal to `matmul(a, &b.transpose())`.
pub fn matmul_nt<T: Scalar>(a: &DenseMatrix<T>, b: &DenseMatrix<T>) -> Result<DenseMatrix<T>> {
    if a.cols != b.cols {
        return Err(Error::ShapeMismatch {
            op: "matmul_nt",
            left: a.shape(),
            right: b.shape(),
        });
    }
    let mut out = DenseMatrix::zeros(a.rows, b.rows);
    gemm_dispatch::<T, false, true>(a.rows, b.rows, a.cols, &a.data, &b.data, &mut out.data);
    out.check_finite("matmul_nt")?;
    Ok(out)
}

/// `Aᵀ · B`, bitwise equal to `matmul(&a.transpose(), b)`.
pub fn matmul_tn<T: Scalar>(a: &DenseMatrix<T>, b: &DenseMatrix<T>) -> Result<DenseMatrix<T>> {
    if a.rows != b.rows {
        return Err(Error::ShapeMismatch {
            op: "matmul_tn",
            left: a.shape(),
            right: b.shape(),
        });
    }
    let mut out = DenseMatrix::zeros(a.cols, b.cols);
    gemm_dispatch::<T, true, false>(a.cols, b.cols, a.rows, &a.data, &b.data, &mut out.data);
    out.check_finite("matmul_tn")?;
    Ok(out)
}

/// `S · W` for binary `S`: row `i` of the result is the sum of the rows of
/// `W` selected by row `i` of `S`, added in ascending index order. Bitwise
/// equal to `matmul(densify(S), W)`.
pub fn sparse_dense_product<T: Scalar>(
    s: &SparseBinaryMatrix,
    w: &DenseMatrix<T>,
) -> Result<DenseMatrix<T>> {
    if s.cols != w.rows {
        return Err(Error::ShapeMismatch {
            op: "sparse_dense_product",
            left: (s.rows(), s.cols),
            right: w.shape(),
        });
    }
    let n = w.cols;
    let mut out = DenseMatrix::zeros(s.rows(), n);
    for (r, idx) in s.row_indices.iter().enumerate() {
        let acc = &mut out.data[r * n..(r + 1) * n];
        for &k in idx {
            let k = k as usize;
            if k >= w.rows {
                return Err(Error::IndexOutOfRange {
                    row: r,
                    index: k,
                    cols: w.rows,
                });
            }
            add_row(acc, &w.data[k * n..(k + 1) * n]);
        }
    }
    out.check_finite("sparse_dense_product")?;
    Ok(out)
}

/// `Sᵀ · D` for binary `S` (`S.rows == D.rows`). Row `k` of the result sums
/// the rows of `D` whose sample has column `k` active, in ascending sample
/// order; bitwise equal to `matmul(densify(S)ᵀ, D)`.
pub fn sparse_transpose_dense_product<T: Scalar>(
    s: &SparseBinaryMatrix,
    d: &DenseMatrix<T>,
) -> Result<DenseMatrix<T>> {
    if s.rows() != d.rows {
        return Err(Error::ShapeMismatch {
            op: "sparse_transpose_dense_product",
            left: (s.rows(), s.cols),
            right: d.shape(),
        });
    }
    let n = d.cols;
    let mut out = DenseMatrix::zeros(s.cols, n);
    for (r, idx) in s.row_indices.iter().enumerate() {
        let src = &d.data[r * n..(r + 1) * n];
        for &k in idx {
            let k = k as usize;
            add_row(&mut out.data[k * n..(k + 1) * n], src);
        }
    }
    out.check_finite("sparse_transpose_dense_product")?;
    Ok(out)
}

#[inline]
fn add_row<T: Scalar>(acc: &mut [T], src: &[T]) {
    for (a, &b) in acc.iter_mut().zip(src) {
        *a += b;
    }
}

// ---------------------------------------------------------------------------
// GEMM kernel: C += A·B, all row-major and contiguous. Each product term
// is accumulated with a fused multiply-add, so the x86 FMA path and the
// portable path (software fma) agree bitwise.

const MR: usize = 6;
const NR: usize = 16;
const KC: usize = 128;
const NC: usize = 512;

pub(crate) fn gemm_acc<T: Scalar>(m: usize, n: usize, k: usize, a: &[T], b: &[T], c: &mut [T]) {
    gemm_dispatch::<T, false, false>(m, n, k, a, b, c);
}

/// C += A·B where `AT` means `a` holds Aᵀ (k×m) and `BT` means `b` holds
/// Bᵀ (n×k).
fn gemm_dispatch<T: Scalar, const AT: bool, const BT: bool>(
    m: usize,
    n: usize,
    k: usize,
    a: &[T],
    b: &[T],
    c: &mut [T],
) {
    #[cfg(target_arch = "x86_64")]
    {
        if std::arch::is_x86_feature_detected!("avx2") && std::arch::is_x86_feature_detected!("fma") {
            // SAFETY: the CPU supports AVX2 and FMA, checked just above.
            unsafe { gemm_avx2::<T, AT, BT>(m, n, k, a, b, c) };
            return;
        }
    }
    gemm_blocked::<T, AT, BT>(m, n, k, a, b, c);
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
unsafe fn gemm_avx2<T: Scalar, const AT: bool, const BT: bool>(
    m: usize,
    n: usize,
    k: usize,
    a: &[T],
    b: &[T],
    c: &mut [T],
) {
    gemm_blocked::<T, AT, BT>(m, n, k, a, b, c);
}

/// Packs B into `NR`-wide column panels and A into `MR`-tall row panels,
/// zero-padded at the ragged edges, then runs the register tile over them.
/// Every output element still sums over `p` in ascending order, whatever the
/// operand layout.
#[inline(always)]
fn gemm_blocked<T: Scalar, const AT: bool, const BT: bool>(
    m: usize,
    n: usize,
    k: usize,
    a: &[T],
    b: &[T],
    c: &mut [T],
) {
    let mut bpack: Vec<T> = Vec::new();
    let mut apack = [T::ZERO; KC * MR];
    for kb in (0..k).step_by(KC) {
        let kc = KC.min(k - kb);
        for jb in (0..n).step_by(NC) {
            let nc = NC.min(n - jb);
            let panels = nc.div_ceil(NR);
            bpack.clear();
            bpack.resize(panels * kc * NR, T::ZERO);
            for jp in 0..panels {
                let j0 = jb + jp * NR;
                let w = NR.min(jb + nc - j0);
                let dst = &mut bpack[jp * kc * NR..(jp + 1) * kc * NR];
                if BT {
                    for j in 0..w {
                        let src = &b[(j0 + j) * k + kb..(j0 + j) * k + kb + kc];
                        for (p, &v) in src.iter().enumerate() {
                            dst[p * NR + j] = v;
                        }
                    }
                } else {
                    for p in 0..kc {
                        let src = (kb + p) * n + j0;
                        dst[p * NR..p * NR + w].copy_from_slice(&b[src..src + w]);
                    }
                }
            }
            for ib in (0..m).step_by(MR) {
                let h = MR.min(m - ib);
                if AT {
                    for p in 0..kc {
                        let src = (kb + p) * m + ib;
                        apack[p * MR..p * MR + h].copy_from_slice(&a[src..src + h]);
                        apack[p * MR + h..p * MR + MR].fill(T::ZERO);
                    }
                } else {
                    for p in 0..kc {
                        for r in 0..MR {
                            apack[p * MR + r] = if r < h { a[(ib + r) * k + kb + p] } else { T::ZERO };
                        }
                    }
                }
                for jp in 0..panels {
                    let j0 = jb + jp * NR;
                    let w = NR.min(jb + nc - j0);
                    tile(kc, &apack, &bpack[jp * kc * NR..(jp + 1) * kc * NR], &mut c[ib * n + j0..], n, h, w);
                }
            }
        }
    }
}

/// `MR`×`NR` register tile; only the top-left `h`×`w` block of C is live.
#[inline(always)]
fn tile<T: Scalar>(kc: usize, ap: &[T], bp: &[T], c: &mut [T], ldc: usize, h: usize, w: usize) {
    let mut acc = [[T::ZERO; NR]; MR];
    for (r, row) in acc.iter_mut().enumerate().take(h) {
        row[..w].copy_from_slice(&c[r * ldc..r * ldc + w]);
    }
    for p in 0..kc {
        let brow: &[T; NR] = bp[p * NR..p * NR + NR].try_into().unwrap();
        let arow: &[T; MR] = ap[p * MR..p * MR + MR].try_into().unwrap();
        for (row, &av) in acc.iter_mut().zip(arow) {
            for j in 0..NR {
                row[j] = av.mul_add(brow[j], row[j]);
            }
        }
    }
    for (r, row) in acc.iter().enumerate().take(h) {
        c[r * ldc..r * ldc + w].copy_from_slice(&row[..w]);
    }
}
