use crate::{Error, Result};

/// Dense row-major tensor of f64.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<f64>) -> Result<Self> {
        let shape = shape.into();
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(Error::Shape { op: "tensor", lhs: shape, rhs: vec![data.len()] });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        let shape = shape.into();
        let len = shape.iter().product();
        Self { shape, data: vec![0.0; len] }
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: f64) -> Self {
        let mut t = Self::zeros(shape);
        t.data.iter_mut().for_each(|x| *x = value);
        t
    }

    pub fn scalar(value: f64) -> Self {
        Self { shape: vec![], data: vec![value] }
    }

    /// Row vector of shape `[1, n]`.
    pub fn row(data: Vec<f64>) -> Self {
        Self { shape: vec![1, data.len()], data }
    }

    /// Column vector of shape `[n, 1]`.
    pub fn column(data: Vec<f64>) -> Self {
        Self { shape: vec![data.len(), 1], data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn reshape(&self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        Self::new(shape, self.data.clone())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { shape: self.shape.clone(), data: self.data.iter().map(|&x| f(x)).collect() }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn norm_squared(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }

    pub(crate) fn dims2(&self, op: &'static str) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            [r, c] => Ok((*r, *c)),
            _ => Err(Error::Shape { op, lhs: self.shape.clone(), rhs: vec![] }),
        }
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (m, k) = self.dims2("matmul")?;
        let (k2, n) = other.dims2("matmul")?;
        if k != k2 {
            return Err(Error::Shape { op: "matmul", lhs: self.shape.clone(), rhs: other.shape.clone() });
        }
        let mut out = Tensor::zeros([m, n]);
        gemm(m, k, n, &self.data, (k, 1), &other.data, (n, 1), &mut out.data);
        Ok(out)
    }

    pub fn slice_cols(&self, start: usize, end: usize) -> Result<Tensor> {
        let (r, c) = self.dims2("slice_cols")?;
        if start > end || end > c {
            return Err(Error::Shape { op: "slice_cols", lhs: self.shape.clone(), rhs: vec![start, end] });
        }
        let w = end - start;
        let mut data = Vec::with_capacity(r * w);
        for row in self.data.chunks_exact(c.max(1)).take(r) {
            data.extend_from_slice(&row[start..end]);
        }
        Ok(Tensor { shape: vec![r, w], data })
    }

    pub fn concat_cols(&self, other: &Tensor) -> Result<Tensor> {
        let (r, c1) = self.dims2("concat_cols")?;
        let (r2, c2) = other.dims2("concat_cols")?;
        if r != r2 {
            return Err(Error::Shape { op: "concat_cols", lhs: self.shape.clone(), rhs: other.shape.clone() });
        }
        let mut data = Vec::with_capacity(r * (c1 + c2));
        for i in 0..r {
            data.extend_from_slice(&self.data[i * c1..(i + 1) * c1]);
            data.extend_from_slice(&other.data[i * c2..(i + 1) * c2]);
        }
        Ok(Tensor { shape: vec![r, c1 + c2], data })
    }

    /// Elementwise binary op with NumPy-style broadcasting.
    pub fn zip_with(&self, other: &Tensor, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if self.shape == other.shape {
            let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
            return Ok(Tensor { shape: self.shape.clone(), data });
        }
        let shape = broadcast_shape(&self.shape, &other.shape)
            .ok_or_else(|| Error::Shape { op, lhs: self.shape.clone(), rhs: other.shape.clone() })?;
        let sa = broadcast_strides(&self.shape, &shape);
        let sb = broadcast_strides(&other.shape, &shape);
        let mut data = Vec::with_capacity(shape.iter().product());
        for_each_index(&shape, &sa, &sb, |ia, ib| data.push(f(self.data[ia], other.data[ib])));
        Ok(Tensor { shape, data })
    }

    /// Sums a broadcast result back down to `shape`.
    pub fn reduce_to(&self, shape: &[usize]) -> Tensor {
        if self.shape == shape {
            return self.clone();
        }
        let mut out = Tensor::zeros(shape.to_vec());
        let s_out = broadcast_strides(shape, &self.shape);
        let s_self = broadcast_strides(&self.shape, &self.shape);
        for_each_index(&self.shape, &s_self, &s_out, |i, o| out.data[o] += self.data[i]);
        out
    }

    /// Broadcasts to `shape`, which must be compatible.
    pub fn broadcast_to(&self, shape: &[usize]) -> Result<Tensor> {
        match broadcast_shape(&self.shape, shape) {
            Some(s) if s == shape => {}
            _ => return Err(Error::Shape { op: "broadcast", lhs: self.shape.clone(), rhs: shape.to_vec() }),
        }
        let src = broadcast_strides(&self.shape, shape);
        let dst = broadcast_strides(shape, shape);
        let mut out = Tensor::zeros(shape.to_vec());
        for_each_index(shape, &src, &dst, |i, o| out.data[o] = self.data[i]);
        Ok(out)
    }

    /// Sum over one axis of a 2-D tensor, keeping the axis with size 1.
    pub fn sum_axis(&self, axis: usize) -> Result<Tensor> {
        let (r, c) = self.dims2("sum_axis")?;
        match axis {
            0 => {
                let mut out = vec![0.0; c];
                for row in self.data.chunks_exact(c.max(1)) {
                    out.iter_mut().zip(row).for_each(|(o, x)| *o += x);
                }
                Ok(Tensor { shape: vec![1, c], data: out })
            }
            1 => {
                let out = (0..r).map(|i| self.data[i * c..(i + 1) * c].iter().sum()).collect();
                Ok(Tensor { shape: vec![r, 1], data: out })
            }
            _ => Err(Error::Shape { op: "sum_axis", lhs: self.shape.clone(), rhs: vec![axis] }),
        }
    }
}

/// Compressed sparse row matrix, used as a constant operand.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Builds from `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(rows: usize, cols: usize, mut triplets: Vec<(usize, usize, f64)>) -> Result<Self> {
        if let Some(&(r, c, _)) = triplets.iter().find(|(r, c, _)| *r >= rows || *c >= cols) {
            return Err(Error::Shape { op: "sparse", lhs: vec![rows, cols], rhs: vec![r, c] });
        }
        triplets.sort_by_key(|&(r, c, _)| (r, c));
        let mut indptr = vec![0; rows + 1];
        let mut indices: Vec<usize> = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            if last == Some((r, c)) {
                *values.last_mut().expect("previous entry") += v;
                continue;
            }
            indices.push(c);
            values.push(v);
            indptr[r + 1] += 1;
            last = Some((r, c));
        }
        for i in 0..rows {
            indptr[i + 1] += indptr[i];
        }
        Ok(Self { rows, cols, indptr, indices, values })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Stored entries of row `r` as `(col, value)`.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.indptr[r]..self.indptr[r + 1];
        self.indices[span.clone()].iter().copied().zip(self.values[span].iter().copied())
    }

    pub fn transpose(&self) -> SparseMatrix {
        let triplets = (0..self.rows).flat_map(|r| self.row(r).map(move |(c, v)| (c, r, v))).collect();
        SparseMatrix::from_triplets(self.cols, self.rows, triplets).expect("indices in range")
    }

    pub fn to_dense(&self) -> Tensor {
        let mut out = Tensor::zeros([self.rows, self.cols]);
        for r in 0..self.rows {
            for (c, v) in self.row(r) {
                out.data[r * self.cols + c] += v;
            }
        }
        out
    }

    /// self · x for a dense `[cols, m]` tensor.
    pub fn matmul(&self, x: &Tensor) -> Result<Tensor> {
        let (k, m) = x.dims2("sparse_matmul")?;
        if k != self.cols {
            return Err(Error::Shape { op: "sparse_matmul", lhs: vec![self.rows, self.cols], rhs: x.shape.clone() });
        }
        let mut out = Tensor::zeros([self.rows, m]);
        for r in 0..self.rows {
            let dst = &mut out.data[r * m..(r + 1) * m];
            for (c, v) in self.row(r) {
                let src = &x.data[c * m..(c + 1) * m];
                dst.iter_mut().zip(src).for_each(|(d, s)| *d += v * s);
            }
        }
        Ok(out)
    }
}

/// C = A·B with arbitrary row/column strides on A and B; C is row-major, overwritten.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    c: &mut [f64],
) {
    debug_assert!(c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c[..m * n].iter_mut().for_each(|x| *x = 0.0);
        return;
    }
    debug_assert!(a.len() > (m - 1) * rsa + (k - 1) * csa);
    debug_assert!(b.len() > (k - 1) * rsb + (n - 1) * csb);
    // SAFETY: index bounds of all three operands are checked above for the given strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for (i, o) in out.iter_mut().enumerate() {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        *o = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Strides of `shape` when read as `target` (0 along broadcast axes).
fn broadcast_strides(shape: &[usize], target: &[usize]) -> Vec<usize> {
    let rank = target.len();
    let mut strides = vec![0; rank];
    let mut acc = 1;
    for i in (0..shape.len()).rev() {
        let t = i + rank - shape.len();
        strides[t] = if shape[i] == 1 { 0 } else { acc };
        acc *= shape[i];
    }
    strides
}

fn for_each_index(shape: &[usize], sa: &[usize], sb: &[usize], mut f: impl FnMut(usize, usize)) {
    let total: usize = shape.iter().product();
    if total == 0 {
        return;
    }
    let rank = shape.len();
    let mut idx = vec![0usize; rank];
    let (mut ia, mut ib) = (0usize, 0usize);
    for _ in 0..total {
        f(ia, ib);
        for d in (0..rank).rev() {
            idx[d] += 1;
            ia += sa[d];
            ib += sb[d];
            if idx[d] < shape[d] {
                break;
            }
            ia -= sa[d] * shape[d];
            ib -= sb[d] * shape[d];
            idx[d] = 0;
        }
    }
}
