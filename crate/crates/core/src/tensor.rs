//! Dense complex tensors in a fixed row-major layout.
//!
//! Every numerical object in the crate (site tensors, block maps, metrics,
//! local Hamiltonian terms, gates) is a [`Tensor`]. Contractions are spelled
//! out with explicit axis pairs; nothing is broadcast implicitly.

use faer::traits::Conjugate;
use faer::{Accum, MatMut, MatRef, Par};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);
pub const I: C64 = C64::new(0.0, 1.0);

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<C64>,
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<C64>) -> Result<Self> {
        if shape.iter().any(|&e| e == 0) {
            return Err(Error::Dimension(format!("zero extent in shape {shape:?}")));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Dimension(format!(
                "shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![ZERO; n],
        }
    }

    pub fn scalar(v: C64) -> Self {
        Tensor {
            shape: vec![],
            data: vec![v],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Tensor::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = ONE;
        }
        t
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(&[usize]) -> C64) -> Self {
        let n: usize = shape.iter().product();
        let mut idx = vec![0usize; shape.len()];
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(f(&idx));
            for ax in (0..shape.len()).rev() {
                idx[ax] += 1;
                if idx[ax] < shape[ax] {
                    break;
                }
                idx[ax] = 0;
            }
        }
        Tensor {
            shape: shape.to_vec(),
            data,
        }
    }

    /// Builds a matrix from rows of complex entries.
    pub fn matrix(rows: &[Vec<C64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::Dimension("ragged matrix rows".into()));
        }
        Tensor::new(vec![r, c], rows.concat())
    }

    pub fn real_matrix(rows: &[&[f64]]) -> Result<Self> {
        let rows: Vec<Vec<C64>> = rows
            .iter()
            .map(|r| r.iter().map(|&x| C64::new(x, 0.0)).collect())
            .collect();
        Tensor::matrix(&rows)
    }

    pub fn diag(values: &[C64]) -> Self {
        let n = values.len();
        let mut t = Tensor::zeros(&[n, n]);
        for (i, v) in values.iter().enumerate() {
            t.data[i * n + i] = *v;
        }
        t
    }

    pub fn vector(values: Vec<C64>) -> Self {
        Tensor {
            shape: vec![values.len()],
            data: values,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[C64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [C64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<C64> {
        self.data
    }

    pub fn get(&self, idx: &[usize]) -> C64 {
        self.data[self.offset(idx)]
    }

    pub fn set(&mut self, idx: &[usize], v: C64) {
        let o = self.offset(idx);
        self.data[o] = v;
    }

    fn offset(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.shape.len());
        idx.iter()
            .zip(&self.shape)
            .fold(0, |acc, (&i, &e)| acc * e + i)
    }

    pub fn nrows(&self) -> usize {
        self.shape[0]
    }

    pub fn ncols(&self) -> usize {
        self.shape[1]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() || shape.iter().any(|&e| e == 0) {
            return Err(Error::Dimension(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn permute(&self, axes: &[usize]) -> Result<Self> {
        let r = self.rank();
        let mut seen = vec![false; r];
        if axes.len() != r || axes.iter().any(|&a| a >= r || std::mem::replace(&mut seen[a], true))
        {
            return Err(Error::Dimension(format!(
                "invalid permutation {axes:?} for rank {r}"
            )));
        }
        if axes.iter().enumerate().all(|(i, &a)| i == a) {
            return Ok(self.clone());
        }
        let new_shape: Vec<usize> = axes.iter().map(|&a| self.shape[a]).collect();
        let old_strides = strides(&self.shape);
        let src_strides: Vec<usize> = axes.iter().map(|&a| old_strides[a]).collect();
        let n = self.data.len();
        let mut data = Vec::with_capacity(n);
        let mut idx = vec![0usize; r];
        let mut src = 0usize;
        for _ in 0..n {
            data.push(self.data[src]);
            for ax in (0..r).rev() {
                idx[ax] += 1;
                src += src_strides[ax];
                if idx[ax] < new_shape[ax] {
                    break;
                }
                src -= src_strides[ax] * new_shape[ax];
                idx[ax] = 0;
            }
        }
        Ok(Tensor {
            shape: new_shape,
            data,
        })
    }

    pub fn conj(&self) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|z| z.conj()).collect(),
        }
    }

    pub fn scale(&self, s: C64) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|z| z * s).collect(),
        }
    }

    pub fn scale_real(&self, s: f64) -> Self {
        self.scale(C64::new(s, 0.0))
    }

    pub fn add(&self, other: &Tensor) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    fn zip_with(&self, other: &Tensor, f: impl Fn(C64, C64) -> C64) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::Dimension(format!(
                "shape {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    /// Frobenius norm.
    pub fn norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// Largest entrywise distance to `other`.
    pub fn dist_max(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    pub fn trace(&self) -> C64 {
        let n = self.nrows().min(self.ncols());
        (0..n).map(|i| self.data[i * self.ncols() + i]).sum()
    }

    pub fn transpose(&self) -> Self {
        self.permute(&[1, 0]).expect("rank-2 transpose")
    }

    pub fn dagger(&self) -> Self {
        self.transpose().conj()
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Self> {
        if self.rank() != 2 || other.rank() != 2 || self.ncols() != other.nrows() {
            return Err(Error::Dimension(format!(
                "matmul {:?} x {:?}",
                self.shape, other.shape
            )));
        }
        let (m, n) = (self.nrows(), other.ncols());
        let mut out = vec![ZERO; m * n];
        gemm(&mut out, self.as_mat(), other.as_mat());
        Ok(Tensor {
            shape: vec![m, n],
            data: out,
        })
    }

    pub fn kron(&self, other: &Tensor) -> Self {
        let (ar, ac) = (self.nrows(), self.ncols());
        let (br, bc) = (other.nrows(), other.ncols());
        Tensor::from_fn(&[ar * br, ac * bc], |ix| {
            self.data[(ix[0] / br) * ac + ix[1] / bc] * other.data[(ix[0] % br) * bc + ix[1] % bc]
        })
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.rank() == 2 && self.nrows() == self.ncols() && self.dist_max(&self.dagger()) <= tol
    }

    /// Zero-copy view of a rank-2 tensor as a faer matrix.
    pub fn as_mat(&self) -> MatRef<'_, C64> {
        assert_eq!(self.rank(), 2, "as_mat on rank-{} tensor", self.rank());
        MatRef::from_row_major_slice(&self.data, self.shape[0], self.shape[1])
    }

    pub fn from_mat(m: MatRef<'_, C64>) -> Self {
        let (r, c) = (m.nrows(), m.ncols());
        let mut data = Vec::with_capacity(r * c);
        for i in 0..r {
            for j in 0..c {
                data.push(m[(i, j)]);
            }
        }
        Tensor {
            shape: vec![r, c],
            data,
        }
    }
}

/// `out = a * b` with `out` a row-major buffer of the right size.
pub(crate) fn gemm<L, R>(out: &mut [C64], a: MatRef<'_, L>, b: MatRef<'_, R>)
where
    L: Conjugate<Canonical = C64>,
    R: Conjugate<Canonical = C64>,
{
    let dst = MatMut::from_row_major_slice_mut(out, a.nrows(), b.ncols());
    faer::linalg::matmul::matmul(dst, Accum::Replace, a, b, ONE, Par::Seq);
}

/// Contracts `a` with `b` over the listed `(axis_of_a, axis_of_b)` pairs.
///
/// The result carries the free axes of `a` followed by the free axes of `b`,
/// each in their original order.
pub fn contract(a: &Tensor, b: &Tensor, axis_pairs: &[(usize, usize)]) -> Result<Tensor> {
    for &(i, j) in axis_pairs {
        if i >= a.rank() || j >= b.rank() {
            return Err(Error::Dimension(format!(
                "axis pair ({i}, {j}) out of range for ranks {} and {}",
                a.rank(),
                b.rank()
            )));
        }
        if a.shape[i] != b.shape[j] {
            return Err(Error::AxisMismatch {
                a: i,
                b: j,
                ea: a.shape[i],
                eb: b.shape[j],
            });
        }
    }
    let paired_a: Vec<usize> = axis_pairs.iter().map(|p| p.0).collect();
    let paired_b: Vec<usize> = axis_pairs.iter().map(|p| p.1).collect();
    let free_a: Vec<usize> = (0..a.rank()).filter(|x| !paired_a.contains(x)).collect();
    let free_b: Vec<usize> = (0..b.rank()).filter(|x| !paired_b.contains(x)).collect();
    if free_a.len() + paired_a.len() != a.rank() || free_b.len() + paired_b.len() != b.rank() {
        return Err(Error::Dimension("repeated axis in contraction".into()));
    }

    let m: usize = free_a.iter().map(|&x| a.shape[x]).product();
    let n: usize = free_b.iter().map(|&x| b.shape[x]).product();
    let k: usize = paired_a.iter().map(|&x| a.shape[x]).product();

    let pa = a.permute(&[free_a.clone(), paired_a].concat())?;
    let pb = b.permute(&[paired_b, free_b.clone()].concat())?;
    let mut out = vec![ZERO; m * n];
    gemm(
        &mut out,
        MatRef::from_row_major_slice(&pa.data, m, k),
        MatRef::from_row_major_slice(&pb.data, k, n),
    );
    let shape: Vec<usize> = free_a
        .iter()
        .map(|&x| a.shape[x])
        .chain(free_b.iter().map(|&x| b.shape[x]))
        .collect();
    Ok(Tensor { shape, data: out })
}
