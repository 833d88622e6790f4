//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

pub mod checks;

use attriforge::nn::Param;
use attriforge::tensor::{grad, Tensor, Var};

/// Dense `[n, c, h, w]` array in f64 with plain indexing.
#[derive(Clone, Debug)]
pub struct Arr {
    pub shape: [usize; 4],
    pub data: Vec<f64>,
}

impl Arr {
    pub fn zeros(shape: [usize; 4]) -> Self {
        Arr { shape, data: vec![0.0; shape.iter().product()] }
    }

    pub fn from_tensor(t: &Tensor) -> Self {
        let s = t.shape();
        Arr { shape: [s[0], s[1], s[2], s[3]], data: t.to_vec_f64() }
    }

    pub fn idx(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        let [_, cc, h, w] = self.shape;
        ((n * cc + c) * h + y) * w + x
    }

    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> f64 {
        self.data[self.idx(n, c, y, x)]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Arr {
        Arr { shape: self.shape, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip(&self, o: &Arr, f: impl Fn(f64, f64) -> f64) -> Arr {
        assert_eq!(self.shape, o.shape);
        Arr { shape: self.shape, data: self.data.iter().zip(&o.data).map(|(&a, &b)| f(a, b)).collect() }
    }

    /// Channel concatenation.
    pub fn cat(&self, o: &Arr) -> Arr {
        let [n, c1, h, w] = self.shape;
        let c2 = o.shape[1];
        let mut out = Arr::zeros([n, c1 + c2, h, w]);
        for b in 0..n {
            for c in 0..c1 + c2 {
                for y in 0..h {
                    for x in 0..w {
                        let v = if c < c1 { self.at(b, c, y, x) } else { o.at(b, c - c1, y, x) };
                        let i = out.idx(b, c, y, x);
                        out.data[i] = v;
                    }
                }
            }
        }
        out
    }
}

/// Direct 3x3 same-padded convolution with bias.
pub fn conv3x3(x: &Arr, w: &Tensor, b: &Tensor) -> Arr {
    let [n, ci, h, wd] = x.shape;
    let ws = w.shape();
    assert_eq!(ws[1], ci);
    let co = ws[0];
    let (wv, bv) = (w.to_vec_f64(), b.to_vec_f64());
    let mut out = Arr::zeros([n, co, h, wd]);
    for b_ in 0..n {
        for o in 0..co {
            for y in 0..h {
                for xx in 0..wd {
                    let mut acc = bv[o];
                    for c in 0..ci {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let (iy, ix) = (y as isize + ky as isize - 1, xx as isize + kx as isize - 1);
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                acc += wv[((o * ci + c) * 3 + ky) * 3 + kx] * x.at(b_, c, iy as usize, ix as usize);
                            }
                        }
                    }
                    let i = out.idx(b_, o, y, xx);
                    out.data[i] = acc;
                }
            }
        }
    }
    out
}

pub fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// Nearest-neighbour x2 upsampling followed by an appended constant attribute channel.
pub fn upsample_with_attribute(s: &Arr, att: &[f64]) -> Arr {
    let [n, c, h, w] = s.shape;
    let mut up = Arr::zeros([n, c + 1, 2 * h, 2 * w]);
    for b in 0..n {
        for ch in 0..=c {
            for y in 0..2 * h {
                for x in 0..2 * w {
                    let v = if ch < c { s.at(b, ch, y / 2, x / 2) } else { att[b] };
                    let i = up.idx(b, ch, y, x);
                    up.data[i] = v;
                }
            }
        }
    }
    up
}

pub struct CellWeights {
    pub inject: (Tensor, Tensor),
    pub update: (Tensor, Tensor),
    pub reset: (Tensor, Tensor),
    pub candidate: (Tensor, Tensor),
}

pub struct CellOut {
    pub s_hat: Arr,
    pub u: Arr,
    pub r: Arr,
    pub s: Arr,
    pub f_hat: Arr,
    pub f_t: Arr,
}

/// Loop-based selective transfer cell: injection, gates, candidate and blend.
pub fn cell_oracle(f: &Arr, s_prev: &Arr, att: &[f64], w: &CellWeights) -> CellOut {
    let s_hat = conv3x3(&upsample_with_attribute(s_prev, att), &w.inject.0, &w.inject.1);
    let joined = f.cat(&s_hat);
    let u = conv3x3(&joined, &w.update.0, &w.update.1).map(sigmoid);
    let r = conv3x3(&joined, &w.reset.0, &w.reset.1).map(sigmoid);
    let s = r.zip(&s_hat, |a, b| a * b);
    let f_hat = conv3x3(&f.cat(&s), &w.candidate.0, &w.candidate.1).map(f64::tanh);
    let one_minus_u = u.map(|v| 1.0 - v);
    let f_t = one_minus_u.zip(&s_hat, |a, b| a * b).zip(&u.zip(&f_hat, |a, b| a * b), |a, b| a + b);
    CellOut { s_hat, u, r, s, f_hat, f_t }
}

pub struct FdReport {
    /// Worst `|analytic - numeric| / max(|analytic|, |numeric|, 1e-6)` over smooth entries.
    pub worst: f64,
    pub checked: usize,
    /// Entries where a ReLU-type kink lies inside `[-step, step]`.
    pub kinks: usize,
}

impl FdReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.worst < tol && self.kinks * 3 <= self.checked
    }
}

fn fd_entries(base: &Tensor, analytic: &[f64], entries: &[usize], step: f64, eval: &dyn Fn(&Tensor) -> f64) -> FdReport {
    let f0 = eval(base);
    let mut report = FdReport { worst: 0.0, checked: entries.len(), kinks: 0 };
    for &i in entries {
        let v = base.get(i);
        let plus = eval(&base.with_value_at(i, v + step));
        let minus = eval(&base.with_value_at(i, v - step));
        let numeric = (plus - minus) / (2.0 * step);
        let err = (analytic[i] - numeric).abs();
        let rel = err / analytic[i].abs().max(numeric.abs()).max(1e-6);
        let asymmetry = ((plus - f0) / step - (f0 - minus) / step).abs();
        if rel >= 1e-3 && asymmetry > err {
            report.kinks += 1;
        } else {
            report.worst = report.worst.max(rel);
        }
    }
    report
}

/// Central-difference check of `loss` against reverse mode on selected entries of `param`.
///
/// An entry whose one-sided slopes differ by more than the central-difference error
/// straddles a non-differentiable point and is counted as a kink instead of scored;
/// a wrong gradient shows up as a large error with symmetric one-sided slopes.
/// `loss` must rebuild the graph from the parameter's current value on every call.
pub fn fd_check(param: &Param, entries: &[usize], step: f64, loss: &dyn Fn() -> Var) -> FdReport {
    let base = param.tensor();
    let g = grad(&loss(), &[&param.var()], false).pop().flatten().expect("loss depends on the parameter");
    let g = g.value().to_vec_f64();
    let report = fd_entries(&base, &g, entries, step, &|t| {
        param.set(t.clone());
        loss().item()
    });
    param.set(base);
    report
}

/// As [`fd_check`], for a scalar function of an input tensor.
pub fn fd_check_input(x: &Tensor, entries: &[usize], step: f64, f: &dyn Fn(&Var) -> Var) -> FdReport {
    let leaf = Var::leaf(x.clone());
    let g = grad(&f(&leaf), &[&leaf], false).pop().flatten().expect("output depends on the input");
    fd_entries(x, &g.value().to_vec_f64(), entries, step, &|t| f(&Var::constant(t.clone())).item())
}

/// Evenly spread probe indices over `numel` entries.
pub fn spread(numel: usize, count: usize) -> Vec<usize> {
    let count = count.min(numel);
    (0..count).map(|k| k * numel / count).collect()
}

/// Per-pixel mean/variance/covariance SSIM with an explicit 2-D Gaussian window,
/// truncated at the border and renormalised, averaged over masked centres and channels.
pub fn ssim_oracle(a: &[f64], b: &[f64], mask: &[f64], h: usize, w: usize) -> f64 {
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let r = 5isize;
    let g = |d: isize| (-(d * d) as f64 / (2.0 * 1.5 * 1.5)).exp();
    let mut total = 0.0;
    let mut count = 0usize;
    for c in 0..3 {
        for y in 0..h {
            for x in 0..w {
                if mask[y * w + x] <= 0.5 {
                    continue;
                }
                let (mut wsum, mut ma, mut mb) = (0.0, 0.0, 0.0);
                let mut taps = Vec::new();
                for dy in -r..=r {
                    for dx in -r..=r {
                        let (yy, xx) = (y as isize + dy, x as isize + dx);
                        if yy < 0 || xx < 0 || yy >= h as isize || xx >= w as isize {
                            continue;
                        }
                        let k = g(dy) * g(dx);
                        let i = c * h * w + yy as usize * w + xx as usize;
                        taps.push((k, a[i], b[i]));
                        wsum += k;
                    }
                }
                for &(k, va, vb) in &taps {
                    ma += k * va / wsum;
                    mb += k * vb / wsum;
                }
                let (mut va2, mut vb2, mut cov) = (0.0, 0.0, 0.0);
                for &(k, va, vb) in &taps {
                    va2 += k * (va - ma).powi(2) / wsum;
                    vb2 += k * (vb - mb).powi(2) / wsum;
                    cov += k * (va - ma) * (vb - mb) / wsum;
                }
                total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va2 + vb2 + c2));
                count += 1;
            }
        }
    }
    total / count as f64
}
