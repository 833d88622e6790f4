use std::fmt;
use std::io::{self, Read, Write};
use std::sync::Arc;

use crate::element::{DType, Element};

#[derive(Clone)]
pub enum Storage {
    F32(Arc<Vec<f32>>),
    F64(Arc<Vec<f64>>),
}

/// Dispatch a generic body over the concrete element type of one tensor.
macro_rules! dispatch {
    ($t:expr, $v:ident => $body:expr) => {
        match &$t.storage {
            $crate::tensor::Storage::F32($v) => $body,
            $crate::tensor::Storage::F64($v) => $body,
        }
    };
}

/// Dispatch over two tensors that must share a dtype.
macro_rules! dispatch2 {
    ($a:expr, $b:expr, $x:ident, $y:ident => $body:expr) => {
        match (&$a.storage, &$b.storage) {
            ($crate::tensor::Storage::F32($x), $crate::tensor::Storage::F32($y)) => $body,
            ($crate::tensor::Storage::F64($x), $crate::tensor::Storage::F64($y)) => $body,
            _ => panic!("dtype mismatch: {} vs {}", $a.dtype(), $b.dtype()),
        }
    };
}

pub(crate) use dispatch;
pub(crate) use dispatch2;

/// Elementwise unary kernels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum UnaryOp {
    Neg,
    Abs,
    Sign,
    /// 1 where x > 0, else 0.
    Step,
    Sqrt,
    /// 1/x, with 0 wherever x == 0.
    RecipOrZero,
    Square,
    Exp,
    Sigmoid,
    Tanh,
    Relu,
    LeakyRelu(f64),
    /// Derivative of leaky rectifier: 1 where x > 0, else slope.
    LeakySlope(f64),
    AddScalar(f64),
    MulScalar(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
}

/// Dense row-major tensor with shared, immutable storage.
#[derive(Clone)]
pub struct Tensor {
    shape: Vec<usize>,
    pub(crate) storage: Storage,
}

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    pub fn from_vec<T: Element>(data: Vec<T>, shape: &[usize]) -> Self {
        assert_eq!(
            data.len(),
            numel(shape),
            "data length {} does not match shape {:?}",
            data.len(),
            shape
        );
        Self { shape: shape.to_vec(), storage: T::into_storage(data) }
    }

    /// Build a tensor of `dtype` from f64 values.
    pub fn from_f64(data: Vec<f64>, shape: &[usize], dtype: DType) -> Self {
        match dtype {
            DType::F64 => Self::from_vec(data, shape),
            DType::F32 => Self::from_vec(data.into_iter().map(|v| v as f32).collect(), shape),
        }
    }

    pub fn full(shape: &[usize], value: f64, dtype: DType) -> Self {
        Self::from_f64(vec![value; numel(shape)], shape, dtype)
    }

    pub fn zeros(shape: &[usize], dtype: DType) -> Self {
        Self::full(shape, 0.0, dtype)
    }

    pub fn ones(shape: &[usize], dtype: DType) -> Self {
        Self::full(shape, 1.0, dtype)
    }

    pub fn scalar(value: f64, dtype: DType) -> Self {
        Self::full(&[], value, dtype)
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.shape, self.dtype())
    }

    pub fn full_like(&self, value: f64) -> Self {
        Self::full(&self.shape, value, self.dtype())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        numel(&self.shape)
    }

    pub fn dtype(&self) -> DType {
        match self.storage {
            Storage::F32(_) => DType::F32,
            Storage::F64(_) => DType::F64,
        }
    }

    pub fn as_slice<T: Element>(&self) -> Option<&[T]> {
        let any: &dyn std::any::Any = match &self.storage {
            Storage::F32(v) => v.as_ref(),
            Storage::F64(v) => v.as_ref(),
        };
        any.downcast_ref::<Vec<T>>().map(|v| v.as_slice())
    }

    pub fn to_vec_f64(&self) -> Vec<f64> {
        dispatch!(self, v => v.iter().map(|x| x.to_f64()).collect())
    }

    pub fn to_dtype(&self, dtype: DType) -> Tensor {
        if dtype == self.dtype() {
            return self.clone();
        }
        Tensor::from_f64(self.to_vec_f64(), &self.shape, dtype)
    }

    /// Element at a flat (row-major) index.
    pub fn get(&self, index: usize) -> f64 {
        dispatch!(self, v => v[index].to_f64())
    }

    /// Copy of this tensor with one flat element replaced.
    pub fn with_value_at(&self, index: usize, value: f64) -> Tensor {
        let mut data = self.to_vec_f64();
        data[index] = value;
        Tensor::from_f64(data, &self.shape, self.dtype())
    }

    pub fn item(&self) -> f64 {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape);
        self.get(0)
    }

    pub fn reshape(&self, shape: &[usize]) -> Tensor {
        assert_eq!(
            numel(shape),
            self.numel(),
            "cannot reshape {:?} into {:?}",
            self.shape,
            shape
        );
        Tensor { shape: shape.to_vec(), storage: self.storage.clone() }
    }

    pub fn is_finite(&self) -> bool {
        dispatch!(self, v => v.iter().all(|x| x.is_finite()))
    }

    pub fn sum_all(&self) -> f64 {
        dispatch!(self, v => v.iter().fold(0.0f64, |acc, x| acc + x.to_f64()))
    }

    pub fn max_abs(&self) -> f64 {
        dispatch!(self, v => v.iter().fold(0.0f64, |acc, x| acc.max(x.to_f64().abs())))
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape, "shape mismatch in max_abs_diff");
        self.to_vec_f64()
            .iter()
            .zip(other.to_vec_f64())
            .fold(0.0f64, |acc, (a, b)| acc.max((a - b).abs()))
    }

    /// Bitwise equality of shape, dtype and every element.
    pub fn bit_eq(&self, other: &Tensor) -> bool {
        if self.shape != other.shape || self.dtype() != other.dtype() {
            return false;
        }
        match (&self.storage, &other.storage) {
            (Storage::F32(a), Storage::F32(b)) => {
                a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits())
            }
            (Storage::F64(a), Storage::F64(b)) => {
                a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits())
            }
            _ => false,
        }
    }

    pub fn unary(&self, op: UnaryOp) -> Tensor {
        dispatch!(self, v => Tensor::from_vec(unary_kernel(v, op), &self.shape))
    }

    /// Elementwise binary op on tensors of identical shape.
    pub fn binary(&self, other: &Tensor, op: BinaryOp) -> Tensor {
        assert_eq!(
            self.shape, other.shape,
            "binary {:?} on mismatched shapes {:?} and {:?}",
            op, self.shape, other.shape
        );
        dispatch2!(self, other, a, b => Tensor::from_vec(binary_kernel(a, b, op), &self.shape))
    }

    pub fn add(&self, other: &Tensor) -> Tensor {
        self.binary(other, BinaryOp::Add)
    }

    pub fn sub(&self, other: &Tensor) -> Tensor {
        self.binary(other, BinaryOp::Sub)
    }

    pub fn mul(&self, other: &Tensor) -> Tensor {
        self.binary(other, BinaryOp::Mul)
    }

    pub fn mul_scalar(&self, c: f64) -> Tensor {
        self.unary(UnaryOp::MulScalar(c))
    }

    pub fn add_scalar(&self, c: f64) -> Tensor {
        self.unary(UnaryOp::AddScalar(c))
    }

    /// Numpy-style broadcast into a larger shape (materialized).
    pub fn broadcast_to(&self, shape: &[usize]) -> Tensor {
        if self.shape == shape {
            return self.clone();
        }
        let small = aligned_shape(&self.shape, shape);
        dispatch!(self, v => {
            let mut out = Vec::with_capacity(numel(shape));
            for_each_row(shape, &small, |off, inner_stride, len| {
                if inner_stride == 1 {
                    out.extend_from_slice(&v[off..off + len]);
                } else {
                    out.extend(std::iter::repeat_n(v[off], len));
                }
            });
            Tensor::from_vec(out, shape)
        })
    }

    /// Sum over broadcast axes so the result has `shape`; inverse of `broadcast_to`.
    pub fn sum_to(&self, shape: &[usize]) -> Tensor {
        if self.shape == shape {
            return self.clone();
        }
        let small = aligned_shape(shape, &self.shape);
        dispatch!(self, v => {
            let mut out = vec![Default::default(); numel(shape)];
            sum_to_kernel(v, &self.shape, &small, &mut out);
            Tensor::from_vec(out, shape)
        })
    }

    /// Slice `len` entries starting at `start` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Tensor {
        assert!(start + len <= self.shape[axis], "narrow out of range");
        let outer: usize = self.shape[..axis].iter().product();
        let inner: usize = self.shape[axis + 1..].iter().product();
        let dim = self.shape[axis];
        let mut shape = self.shape.clone();
        shape[axis] = len;
        dispatch!(self, v => {
            let mut out = Vec::with_capacity(numel(&shape));
            for o in 0..outer {
                let base = (o * dim + start) * inner;
                out.extend_from_slice(&v[base..base + len * inner]);
            }
            Tensor::from_vec(out, &shape)
        })
    }

    /// Embed this tensor into zeros of extent `full_len` along `axis` at `start`.
    pub fn pad_axis(&self, axis: usize, start: usize, full_len: usize) -> Tensor {
        let len = self.shape[axis];
        assert!(start + len <= full_len, "pad_axis out of range");
        let outer: usize = self.shape[..axis].iter().product();
        let inner: usize = self.shape[axis + 1..].iter().product();
        let mut shape = self.shape.clone();
        shape[axis] = full_len;
        dispatch!(self, v => {
            let mut out = vec![Default::default(); numel(&shape)];
            for o in 0..outer {
                let src = o * len * inner;
                let dst = (o * full_len + start) * inner;
                out[dst..dst + len * inner].copy_from_slice(&v[src..src + len * inner]);
            }
            Tensor::from_vec(out, &shape)
        })
    }

    pub fn cat(parts: &[&Tensor], axis: usize) -> Tensor {
        assert!(!parts.is_empty(), "cat of zero tensors");
        let first = parts[0];
        let rank = first.ndim();
        for p in parts {
            assert_eq!(p.ndim(), rank, "cat rank mismatch");
            for d in 0..rank {
                if d != axis {
                    assert_eq!(p.shape[d], first.shape[d], "cat shape mismatch on axis {d}");
                }
            }
            assert_eq!(p.dtype(), first.dtype(), "cat dtype mismatch");
        }
        let outer: usize = first.shape[..axis].iter().product();
        let inner: usize = first.shape[axis + 1..].iter().product();
        let total: usize = parts.iter().map(|p| p.shape[axis]).sum();
        let mut shape = first.shape.clone();
        shape[axis] = total;
        match first.dtype() {
            DType::F32 => Tensor::from_vec(cat_kernel::<f32>(parts, axis, outer, inner), &shape),
            DType::F64 => Tensor::from_vec(cat_kernel::<f64>(parts, axis, outer, inner), &shape),
        }
    }

    pub fn transpose2d(&self) -> Tensor {
        assert_eq!(self.ndim(), 2, "transpose2d needs a matrix");
        let (r, c) = (self.shape[0], self.shape[1]);
        dispatch!(self, v => {
            let mut out = vec![Default::default(); r * c];
            for i in 0..r {
                for j in 0..c {
                    out[j * r + i] = v[i * c + j];
                }
            }
            Tensor::from_vec(out, &[c, r])
        })
    }

    pub fn matmul(&self, other: &Tensor) -> Tensor {
        assert!(self.ndim() == 2 && other.ndim() == 2, "matmul needs matrices");
        let (m, k) = (self.shape[0], self.shape[1]);
        let (k2, n) = (other.shape[0], other.shape[1]);
        assert_eq!(k, k2, "matmul inner dims {k} vs {k2}");
        dispatch2!(self, other, a, b => {
            let mut out = vec![Default::default(); m * n];
            unsafe {
                Element::gemm(
                    m, k, n, num_traits::one(), a.as_ptr(), k as isize, 1, b.as_ptr(), n as isize, 1,
                    num_traits::zero(), out.as_mut_ptr(), n as isize, 1,
                );
            }
            Tensor::from_vec(out, &[m, n])
        })
    }

    /// Raw little-endian element bytes.
    pub fn write_le<W: Write>(&self, w: &mut W) -> io::Result<()> {
        match &self.storage {
            Storage::F32(v) => {
                for x in v.iter() {
                    w.write_all(&x.to_le_bytes())?;
                }
            }
            Storage::F64(v) => {
                for x in v.iter() {
                    w.write_all(&x.to_le_bytes())?;
                }
            }
        }
        Ok(())
    }

    pub fn read_le<R: Read>(r: &mut R, shape: &[usize], dtype: DType) -> io::Result<Tensor> {
        let n = numel(shape);
        let mut bytes = vec![0u8; n * dtype.size_in_bytes()];
        r.read_exact(&mut bytes)?;
        Ok(match dtype {
            DType::F32 => Tensor::from_vec(
                bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect(),
                shape,
            ),
            DType::F64 => Tensor::from_vec(
                bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect(),
                shape,
            ),
        })
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let preview: Vec<f64> = (0..self.numel().min(8)).map(|i| self.get(i)).collect();
        write!(f, "Tensor({:?}, {}, {:?}", self.shape, self.dtype(), preview)?;
        if self.numel() > 8 {
            write!(f, "...")?;
        }
        write!(f, ")")
    }
}

fn unary_kernel<T: Element>(v: &[T], op: UnaryOp) -> Vec<T> {
    let zero = T::zero();
    let one = T::one();
    match op {
        UnaryOp::Neg => v.iter().map(|&x| -x).collect(),
        UnaryOp::Abs => v.iter().map(|&x| x.abs()).collect(),
        UnaryOp::Sign => v
            .iter()
            .map(|&x| if x > zero { one } else if x < zero { -one } else { zero })
            .collect(),
        UnaryOp::Step => v.iter().map(|&x| if x > zero { one } else { zero }).collect(),
        UnaryOp::Sqrt => v.iter().map(|&x| x.sqrt()).collect(),
        UnaryOp::RecipOrZero => v.iter().map(|&x| if x == zero { zero } else { one / x }).collect(),
        UnaryOp::Square => v.iter().map(|&x| x * x).collect(),
        UnaryOp::Exp => v.iter().map(|&x| x.exp()).collect(),
        UnaryOp::Sigmoid => v
            .iter()
            .map(|&x| {
                if x >= zero {
                    one / (one + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (one + e)
                }
            })
            .collect(),
        UnaryOp::Tanh => v.iter().map(|&x| x.tanh()).collect(),
        UnaryOp::Relu => v.iter().map(|&x| if x > zero { x } else { zero }).collect(),
        UnaryOp::LeakyRelu(s) => {
            let s = T::from_f64(s);
            v.iter().map(|&x| if x > zero { x } else { x * s }).collect()
        }
        UnaryOp::LeakySlope(s) => {
            let s = T::from_f64(s);
            v.iter().map(|&x| if x > zero { one } else { s }).collect()
        }
        UnaryOp::AddScalar(c) => {
            let c = T::from_f64(c);
            v.iter().map(|&x| x + c).collect()
        }
        UnaryOp::MulScalar(c) => {
            let c = T::from_f64(c);
            v.iter().map(|&x| x * c).collect()
        }
    }
}

fn zip_map<T: Element>(a: &[T], b: &[T], f: impl Fn(T, T) -> T) -> Vec<T> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

fn binary_kernel<T: Element>(a: &[T], b: &[T], op: BinaryOp) -> Vec<T> {
    match op {
        BinaryOp::Add => zip_map(a, b, |x, y| x + y),
        BinaryOp::Sub => zip_map(a, b, |x, y| x - y),
        BinaryOp::Mul => zip_map(a, b, |x, y| x * y),
        BinaryOp::Div => zip_map(a, b, |x, y| x / y),
    }
}

fn cat_kernel<T: Element>(parts: &[&Tensor], axis: usize, outer: usize, inner: usize) -> Vec<T> {
    let slices: Vec<&[T]> = parts.iter().map(|p| p.as_slice::<T>().unwrap()).collect();
    let total: usize = parts.iter().map(|p| p.shape[axis]).sum();
    let mut out = Vec::with_capacity(outer * total * inner);
    for o in 0..outer {
        for (p, s) in parts.iter().zip(&slices) {
            let run = p.shape[axis] * inner;
            out.extend_from_slice(&s[o * run..(o + 1) * run]);
        }
    }
    out
}

/// Left-pad `small` with ones to the rank of `big`, checking broadcast compatibility.
fn aligned_shape(small: &[usize], big: &[usize]) -> Vec<usize> {
    assert!(small.len() <= big.len(), "cannot broadcast {small:?} to {big:?}");
    let mut out = vec![1; big.len() - small.len()];
    out.extend_from_slice(small);
    for (s, b) in out.iter().zip(big) {
        assert!(*s == *b || *s == 1, "cannot broadcast {small:?} to {big:?}");
    }
    out
}

/// Walk `big` row by row (last axis contiguous), reporting the matching offset in the
/// (broadcast) `small` tensor, the inner stride there (0 or 1) and the row length.
fn for_each_row(big: &[usize], small: &[usize], mut f: impl FnMut(usize, usize, usize)) {
    let rank = big.len();
    if rank == 0 {
        f(0, 1, 1);
        return;
    }
    let mut strides = vec![0usize; rank];
    let mut acc = 1;
    for d in (0..rank).rev() {
        strides[d] = if small[d] == 1 { 0 } else { acc };
        acc *= small[d];
    }
    let row = big[rank - 1];
    let inner_stride = strides[rank - 1];
    let rows: usize = big[..rank - 1].iter().product();
    let mut idx = vec![0usize; rank - 1];
    for _ in 0..rows {
        let off: usize = idx.iter().zip(&strides).map(|(i, s)| i * s).sum();
        f(off, inner_stride, row);
        for d in (0..rank - 1).rev() {
            idx[d] += 1;
            if idx[d] < big[d] {
                break;
            }
            idx[d] = 0;
        }
    }
}

fn sum_to_kernel<T: Element>(v: &[T], big: &[usize], small: &[usize], out: &mut [T]) {
    let mut pos = 0;
    for_each_row(big, small, |off, inner_stride, len| {
        let row = &v[pos..pos + len];
        if inner_stride == 1 {
            for (o, &x) in out[off..off + len].iter_mut().zip(row) {
                *o = *o + x;
            }
        } else {
            let s = row.iter().fold(T::zero(), |a, &x| a + x);
            out[off] = out[off] + s;
        }
        pos += len;
    });
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn broadcast_and_sum_to_are_adjoint_shapes() {
        let t = Tensor::from_vec(vec![1.0f64, 2.0, 3.0], &[1, 3, 1]);
        let b = t.broadcast_to(&[2, 3, 2]);
        assert_eq!(b.to_vec_f64(), vec![1., 1., 2., 2., 3., 3., 1., 1., 2., 2., 3., 3.]);
        let s = b.sum_to(&[1, 3, 1]);
        assert_eq!(s.to_vec_f64(), vec![4.0, 8.0, 12.0]);
        let scalar = b.sum_to(&[]);
        assert_eq!(scalar.item(), 24.0);
    }

    #[test]
    fn narrow_pad_cat() {
        let a = Tensor::from_vec((0..12).map(|x| x as f32).collect(), &[2, 3, 2]);
        let n = a.narrow(1, 1, 2);
        assert_eq!(n.shape(), &[2, 2, 2]);
        assert_eq!(n.to_vec_f64(), vec![2., 3., 4., 5., 8., 9., 10., 11.]);
        let p = n.pad_axis(1, 1, 3);
        assert_eq!(p.to_vec_f64(), vec![0., 0., 2., 3., 4., 5., 0., 0., 8., 9., 10., 11.]);
        let head = a.narrow(1, 0, 1);
        let c = Tensor::cat(&[&head, &n], 1);
        assert!(c.bit_eq(&a));
    }

    #[test]
    fn matmul_small() {
        let a = Tensor::from_vec(vec![1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0], &[2, 3]);
        let b = Tensor::from_vec(vec![1.0f64, 0.0, 0.0, 1.0, 1.0, 1.0], &[3, 2]);
        assert_eq!(a.matmul(&b).to_vec_f64(), vec![4.0, 5.0, 10.0, 11.0]);
        assert_eq!(a.transpose2d().shape(), &[3, 2]);
    }

    #[test]
    fn le_roundtrip_is_bit_exact() {
        let t = Tensor::from_vec(vec![0.1f32, -3.5, f32::MIN_POSITIVE], &[3]);
        let mut buf = Vec::new();
        t.write_le(&mut buf).unwrap();
        let back = Tensor::read_le(&mut buf.as_slice(), &[3], DType::F32).unwrap();
        assert!(back.bit_eq(&t));
    }

    #[test]
    fn sigmoid_is_stable_for_large_inputs() {
        let t = Tensor::from_vec(vec![-1e3f64, 0.0, 1e3], &[3]);
        let s = t.unary(UnaryOp::Sigmoid).to_vec_f64();
        assert_eq!(s, vec![0.0, 0.5, 1.0]);
    }
}
