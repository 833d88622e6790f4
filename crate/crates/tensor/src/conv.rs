//! 2-D convolution kernels (im2col + GEMM) and nearest-neighbour resampling.
//!
//! All tensors are NCHW; convolution weights are `[out, in, kh, kw]`. The three
//! convolution kernels (forward, input gradient, weight gradient) are closed under
//! differentiation, which is what lets the autodiff layer build higher-order graphs.

use crate::element::Element;
use crate::tensor::{dispatch2, numel, Tensor};

/// Upper bound (in elements) for one im2col buffer; batches are chunked to fit.
const COL_BUDGET: usize = 1 << 22;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub stride: usize,
    pub padding: usize,
}

pub fn conv_out_dim(input: usize, kernel: usize, stride: usize, padding: usize) -> usize {
    assert!(input + 2 * padding >= kernel, "kernel {kernel} larger than padded input {input}");
    (input + 2 * padding - kernel) / stride + 1
}

struct Dims {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    co: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
    geom: ConvGeom,
}

impl Dims {
    fn new(x_shape: &[usize], w_shape: &[usize], geom: ConvGeom) -> Self {
        assert_eq!(x_shape.len(), 4, "conv input must be NCHW, got {x_shape:?}");
        assert_eq!(w_shape.len(), 4, "conv weight must be [out,in,kh,kw], got {w_shape:?}");
        assert_eq!(
            x_shape[1], w_shape[1],
            "conv input has {} channels but weight expects {}",
            x_shape[1], w_shape[1]
        );
        let (h, w) = (x_shape[2], x_shape[3]);
        let (kh, kw) = (w_shape[2], w_shape[3]);
        Dims {
            n: x_shape[0],
            c: x_shape[1],
            h,
            w,
            co: w_shape[0],
            kh,
            kw,
            ho: conv_out_dim(h, kh, geom.stride, geom.padding),
            wo: conv_out_dim(w, kw, geom.stride, geom.padding),
            geom,
        }
    }

    fn k(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn p(&self) -> usize {
        self.ho * self.wo
    }

    fn chunk(&self) -> usize {
        (COL_BUDGET / (self.k() * self.p()).max(1)).clamp(1, self.n.max(1))
    }
}

/// Output columns `ox` whose source column `ox * s - pad + kx` lies inside `[0, w)`.
fn valid_cols(d: &Dims, kx: usize) -> (usize, usize) {
    let (s, pad) = (d.geom.stride, d.geom.padding);
    let lo = if pad > kx { (pad - kx).div_ceil(s) } else { 0 };
    let hi = if d.w + pad > kx { ((d.w + pad - kx - 1) / s + 1).min(d.wo) } else { 0 };
    (lo.min(hi), hi)
}

/// Stride-1 im2col row when output and input widths agree: the plane shifted by
/// `(ky - pad, kx - pad)`, copied in one run, with wrapped columns zeroed.
fn shifted_plane<T: Element>(plane: &[T], d: &Dims, ky: usize, kx: usize, lo: usize, hi: usize, dst: &mut [T]) {
    let w = d.w as isize;
    let shift = (ky as isize - d.geom.padding as isize) * w + kx as isize - d.geom.padding as isize;
    let len = dst.len() as isize;
    let start = (-shift).clamp(0, len);
    let end = (plane.len() as isize - shift).clamp(start, len);
    dst[..start as usize].fill(T::zero());
    dst[end as usize..].fill(T::zero());
    dst[start as usize..end as usize]
        .copy_from_slice(&plane[(start + shift) as usize..(end + shift) as usize]);
    if lo > 0 || hi < d.wo {
        for r in dst.chunks_exact_mut(d.wo) {
            r[..lo].fill(T::zero());
            r[hi..].fill(T::zero());
        }
    }
}

/// Writes the patches of one sample into `col[row * ld + offset + pixel]`.
fn im2col<T: Element>(x: &[T], d: &Dims, col: &mut [T], ld: usize, offset: usize) {
    let (s, pad) = (d.geom.stride, d.geom.padding);
    for ci in 0..d.c {
        let plane = &x[ci * d.h * d.w..(ci + 1) * d.h * d.w];
        for ky in 0..d.kh {
            for kx in 0..d.kw {
                let (lo, hi) = valid_cols(d, kx);
                let row = (ci * d.kh + ky) * d.kw + kx;
                let dst = &mut col[row * ld + offset..row * ld + offset + d.p()];
                if s == 1 && d.wo == d.w {
                    shifted_plane(plane, d, ky, kx, lo, hi, dst);
                    continue;
                }
                for oy in 0..d.ho {
                    let iy = (oy * s + ky) as isize - pad as isize;
                    let out_row = &mut dst[oy * d.wo..(oy + 1) * d.wo];
                    if iy < 0 || iy >= d.h as isize {
                        out_row.fill(T::zero());
                        continue;
                    }
                    out_row[..lo].fill(T::zero());
                    out_row[hi..].fill(T::zero());
                    if lo == hi {
                        continue;
                    }
                    let src = &plane[iy as usize * d.w..(iy as usize + 1) * d.w];
                    let first = lo * s + kx - pad;
                    if s == 1 {
                        out_row[lo..hi].copy_from_slice(&src[first..first + hi - lo]);
                    } else {
                        for (i, v) in out_row[lo..hi].iter_mut().enumerate() {
                            *v = src[first + i * s];
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of `im2col`: scatter-adds patches back into one sample.
fn col2im<T: Element>(col: &[T], d: &Dims, ld: usize, offset: usize, x: &mut [T]) {
    let (s, pad) = (d.geom.stride, d.geom.padding);
    for ci in 0..d.c {
        let plane = &mut x[ci * d.h * d.w..(ci + 1) * d.h * d.w];
        for ky in 0..d.kh {
            for kx in 0..d.kw {
                let (lo, hi) = valid_cols(d, kx);
                if lo == hi {
                    continue;
                }
                let row = (ci * d.kh + ky) * d.kw + kx;
                let src = &col[row * ld + offset..row * ld + offset + d.p()];
                let first = lo * s + kx - pad;
                for oy in 0..d.ho {
                    let iy = (oy * s + ky) as isize - pad as isize;
                    if iy < 0 || iy >= d.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * d.w..(iy as usize + 1) * d.w];
                    let g = &src[oy * d.wo + lo..oy * d.wo + hi];
                    if s == 1 {
                        for (v, &g) in dst[first..first + g.len()].iter_mut().zip(g) {
                            *v = *v + g;
                        }
                    } else {
                        for (i, &g) in g.iter().enumerate() {
                            dst[first + i * s] = dst[first + i * s] + g;
                        }
                    }
                }
            }
        }
    }
}

/// `[n, co, p]` (sample-major) -> `[co, n*p]`, written into `out`.
fn gather_into<T: Element>(y: &[T], n0: usize, nc: usize, co: usize, p: usize, out: &mut [T]) {
    let ld = nc * p;
    for j in 0..nc {
        let sample = &y[(n0 + j) * co * p..(n0 + j + 1) * co * p];
        for c in 0..co {
            out[c * ld + j * p..c * ld + (j + 1) * p].copy_from_slice(&sample[c * p..(c + 1) * p]);
        }
    }
}

fn conv_forward<T: Element>(x: &[T], w: &[T], d: &Dims) -> Vec<T> {
    let (k, p, co) = (d.k(), d.p(), d.co);
    let mut y = vec![T::zero(); d.n * co * p];
    let chunk = d.chunk();
    let mut n0 = 0;
    while n0 < d.n {
        let nc = chunk.min(d.n - n0);
        let ld = nc * p;
        T::with_scratch(k * ld + co * ld, |buf| {
            let (col, tmp) = buf.split_at_mut(k * ld);
            for j in 0..nc {
                im2col(&x[(n0 + j) * d.c * d.h * d.w..], d, col, ld, j * p);
            }
            unsafe {
                T::gemm(
                    co, k, ld, T::one(), w.as_ptr(), k as isize, 1, col.as_ptr(), ld as isize, 1,
                    T::zero(), tmp.as_mut_ptr(), ld as isize, 1,
                );
            }
            for j in 0..nc {
                let dst = &mut y[(n0 + j) * co * p..(n0 + j + 1) * co * p];
                for c in 0..co {
                    dst[c * p..(c + 1) * p].copy_from_slice(&tmp[c * ld + j * p..c * ld + (j + 1) * p]);
                }
            }
        });
        n0 += nc;
    }
    y
}

fn conv_input_grad_kernel<T: Element>(gy: &[T], w: &[T], d: &Dims) -> Vec<T> {
    let (k, p, co) = (d.k(), d.p(), d.co);
    let sample = d.c * d.h * d.w;
    let mut gx = vec![T::zero(); d.n * sample];
    let chunk = d.chunk();
    let mut n0 = 0;
    while n0 < d.n {
        let nc = chunk.min(d.n - n0);
        let ld = nc * p;
        T::with_scratch(co * ld + k * ld, |buf| {
            let (g, col) = buf.split_at_mut(co * ld);
            gather_into(gy, n0, nc, co, p, g);
            // col = w^T @ g, w^T read through swapped strides.
            unsafe {
                T::gemm(
                    k, co, ld, T::one(), w.as_ptr(), 1, k as isize, g.as_ptr(), ld as isize, 1,
                    T::zero(), col.as_mut_ptr(), ld as isize, 1,
                );
            }
            for j in 0..nc {
                col2im(col, d, ld, j * p, &mut gx[(n0 + j) * sample..(n0 + j + 1) * sample]);
            }
        });
        n0 += nc;
    }
    gx
}

fn conv_weight_grad_kernel<T: Element>(x: &[T], gy: &[T], d: &Dims) -> Vec<T> {
    let (k, p, co) = (d.k(), d.p(), d.co);
    let mut gw = vec![T::zero(); co * k];
    let chunk = d.chunk();
    let mut n0 = 0;
    while n0 < d.n {
        let nc = chunk.min(d.n - n0);
        let ld = nc * p;
        T::with_scratch(co * ld + k * ld, |buf| {
            let (g, col) = buf.split_at_mut(co * ld);
            gather_into(gy, n0, nc, co, p, g);
            for j in 0..nc {
                im2col(&x[(n0 + j) * d.c * d.h * d.w..], d, col, ld, j * p);
            }
            // gw += g @ col^T
            unsafe {
                T::gemm(
                    co, ld, k, T::one(), g.as_ptr(), ld as isize, 1, col.as_ptr(), 1, ld as isize,
                    T::one(), gw.as_mut_ptr(), k as isize, 1,
                );
            }
        });
        n0 += nc;
    }
    gw
}

/// Cross-correlation of `x` `[n,c,h,w]` with `w` `[co,c,kh,kw]`, no bias.
pub fn conv2d(x: &Tensor, w: &Tensor, geom: ConvGeom) -> Tensor {
    let d = Dims::new(x.shape(), w.shape(), geom);
    let shape = [d.n, d.co, d.ho, d.wo];
    dispatch2!(x, w, xs, ws => Tensor::from_vec(conv_forward(xs, ws, &d), &shape))
}

/// Gradient of `conv2d` with respect to its input, given the output gradient.
pub fn conv2d_input_grad(gy: &Tensor, w: &Tensor, x_shape: &[usize], geom: ConvGeom) -> Tensor {
    let d = Dims::new(x_shape, w.shape(), geom);
    assert_eq!(gy.shape(), &[d.n, d.co, d.ho, d.wo], "conv output-gradient shape mismatch");
    dispatch2!(gy, w, gs, ws => Tensor::from_vec(conv_input_grad_kernel(gs, ws, &d), x_shape))
}

/// Gradient of `conv2d` with respect to its weight, given the output gradient.
pub fn conv2d_weight_grad(x: &Tensor, gy: &Tensor, w_shape: &[usize], geom: ConvGeom) -> Tensor {
    let d = Dims::new(x.shape(), w_shape, geom);
    assert_eq!(gy.shape(), &[d.n, d.co, d.ho, d.wo], "conv output-gradient shape mismatch");
    dispatch2!(x, gy, xs, gs => Tensor::from_vec(conv_weight_grad_kernel(xs, gs, &d), w_shape))
}

/// Nearest-neighbour x2 upsampling of an NCHW tensor.
pub fn upsample_nearest2x(x: &Tensor) -> Tensor {
    let s = x.shape();
    assert_eq!(s.len(), 4, "upsample needs NCHW");
    let (h, w) = (s[2], s[3]);
    let shape = [s[0], s[1], 2 * h, 2 * w];
    crate::tensor::dispatch!(x, v => {
        let mut out = vec![Default::default(); numel(&shape)];
        for (src, dst) in v.chunks_exact(w).zip(out.chunks_exact_mut(4 * w)) {
            let (top, bottom) = dst.split_at_mut(2 * w);
            for (pair, &e) in top.chunks_exact_mut(2).zip(src) {
                pair[0] = e;
                pair[1] = e;
            }
            bottom.copy_from_slice(top);
        }
        Tensor::from_vec(out, &shape)
    })
}

/// 2x2 sum pooling with stride 2; the adjoint of nearest x2 upsampling.
pub fn sum_pool2x(x: &Tensor) -> Tensor {
    let s = x.shape();
    assert_eq!(s.len(), 4, "sum_pool2x needs NCHW");
    assert!(s[2].is_multiple_of(2) && s[3].is_multiple_of(2), "sum_pool2x needs even spatial dims, got {s:?}");
    let (planes, h, w) = (s[0] * s[1], s[2] / 2, s[3] / 2);
    let shape = [s[0], s[1], h, w];
    crate::tensor::dispatch!(x, v => {
        let mut out = Vec::with_capacity(numel(&shape));
        for pl in 0..planes {
            let src = &v[pl * 4 * h * w..(pl + 1) * 4 * h * w];
            for y in 0..h {
                for xx in 0..w {
                    let a = src[(2 * y) * 2 * w + 2 * xx];
                    let b = src[(2 * y) * 2 * w + 2 * xx + 1];
                    let c = src[(2 * y + 1) * 2 * w + 2 * xx];
                    let e = src[(2 * y + 1) * 2 * w + 2 * xx + 1];
                    out.push(a + b + c + e);
                }
            }
        }
        Tensor::from_vec(out, &shape)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct 7-loop convolution used as the oracle for the im2col path.
    fn naive_conv(x: &[f64], xs: [usize; 4], w: &[f64], ws: [usize; 4], g: ConvGeom) -> Vec<f64> {
        let [n, c, h, wd] = xs;
        let [co, _, kh, kw] = ws;
        let ho = conv_out_dim(h, kh, g.stride, g.padding);
        let wo = conv_out_dim(wd, kw, g.stride, g.padding);
        let mut out = vec![0.0; n * co * ho * wo];
        for b in 0..n {
            for o in 0..co {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = 0.0;
                        for i in 0..c {
                            for ky in 0..kh {
                                for kx in 0..kw {
                                    let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                                    let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                        continue;
                                    }
                                    acc += x[((b * c + i) * h + iy as usize) * wd + ix as usize]
                                        * w[((o * c + i) * kh + ky) * kw + kx];
                                }
                            }
                        }
                        out[((b * co + o) * ho + oy) * wo + ox] = acc;
                    }
                }
            }
        }
        out
    }

    fn pseudo(n: usize, seed: u64) -> Vec<f64> {
        let mut s = seed;
        (0..n)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
            })
            .collect()
    }

    #[test]
    fn im2col_conv_matches_direct_loops() {
        for (xs, ws, g) in [
            ([2, 3, 5, 5], [4, 3, 3, 3], ConvGeom { stride: 1, padding: 1 }),
            ([3, 2, 8, 8], [5, 2, 4, 4], ConvGeom { stride: 2, padding: 1 }),
            ([1, 1, 4, 6], [2, 1, 2, 3], ConvGeom { stride: 1, padding: 0 }),
        ] {
            let xv = pseudo(xs.iter().product(), 1);
            let wv = pseudo(ws.iter().product(), 2);
            let x = Tensor::from_vec(xv.clone(), &xs);
            let w = Tensor::from_vec(wv.clone(), &ws);
            let y = conv2d(&x, &w, g);
            let expect = naive_conv(&xv, xs, &wv, ws, g);
            for (a, b) in y.to_vec_f64().iter().zip(&expect) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conv_gradients_are_adjoint() {
        // <conv(x, w), g> == <x, conv_dx(g, w)> == <w, conv_dw(x, g)>
        let g = ConvGeom { stride: 2, padding: 1 };
        let x = Tensor::from_vec(pseudo(2 * 3 * 6 * 6, 3), &[2, 3, 6, 6]);
        let w = Tensor::from_vec(pseudo(4 * 3 * 4 * 4, 4), &[4, 3, 4, 4]);
        let y = conv2d(&x, &w, g);
        let gy = Tensor::from_vec(pseudo(y.numel(), 5), y.shape());
        let lhs = y.mul(&gy).sum_all();
        let dx = conv2d_input_grad(&gy, &w, x.shape(), g);
        let dw = conv2d_weight_grad(&x, &gy, w.shape(), g);
        assert!((lhs - x.mul(&dx).sum_all()).abs() < 1e-10);
        assert!((lhs - w.mul(&dw).sum_all()).abs() < 1e-10);
    }

    #[test]
    fn upsample_and_sum_pool() {
        let x = Tensor::from_vec(vec![1.0f32, 2.0, 3.0, 4.0], &[1, 1, 2, 2]);
        let u = upsample_nearest2x(&x);
        assert_eq!(
            u.to_vec_f64(),
            vec![1., 1., 2., 2., 1., 1., 2., 2., 3., 3., 4., 4., 3., 3., 4., 4.]
        );
        assert_eq!(sum_pool2x(&u).to_vec_f64(), vec![4.0, 8.0, 12.0, 16.0]);
    }
}
