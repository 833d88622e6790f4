//! Masked image-quality metrics: PSNR, SSIM, MSE, MAE.
//!
//! Inputs are `[3, h, w]` images in `[-1, 1]`; they are mapped to `[0, 1]` first.

use std::fmt::Write as _;
use std::path::Path;

use attriforge_tensor::{no_grad, Tensor, Var};

use crate::data::{Batch, ImageSample};
use crate::error::{Error, Result};
use crate::networks::Generator;
use crate::nn::Mode;
use crate::stu::{attribute_var, AttributeValue};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricReport {
    /// Decibels; `f64::INFINITY` for a perfect match.
    pub psnr: f64,
    pub ssim: f64,
    pub mse: f64,
    pub mae: f64,
    pub n_pixels: usize,
}

/// `10 log10(1 / mse)` with peak 1.
pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (1.0 / mse).log10()
    }
}

fn unit_planes(t: &Tensor, h: usize, w: usize) -> Vec<f64> {
    let v = t.to_vec_f64();
    assert_eq!(v.len(), 3 * h * w);
    v.into_iter().map(|x| (x + 1.0) * 0.5).collect()
}

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let r = (SSIM_WINDOW / 2) as f64;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - r;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    k
}

/// Separable Gaussian filter; near borders the window is truncated and its weights
/// renormalised (separably, which equals renormalising the 2-D window).
fn blur(plane: &[f64], h: usize, w: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as isize;
    let pass = |src: &[f64], len: usize, stride: usize, lines: usize, line_stride: usize| {
        let mut out = vec![0.0; src.len()];
        for l in 0..lines {
            for i in 0..len {
                let (mut acc, mut norm) = (0.0, 0.0);
                for (j, &kw) in k.iter().enumerate() {
                    let p = i as isize + j as isize - r;
                    if p >= 0 && (p as usize) < len {
                        acc += kw * src[l * line_stride + p as usize * stride];
                        norm += kw;
                    }
                }
                out[l * line_stride + i * stride] = acc / norm;
            }
        }
        out
    };
    let rows = pass(plane, w, 1, h, w);
    pass(&rows, h, w, w, 1)
}

fn ssim_masked(a: &[f64], b: &[f64], mask: &[f64], h: usize, w: usize) -> f64 {
    let k = gaussian_kernel();
    let n = h * w;
    let mut total = 0.0;
    let mut count = 0usize;
    for c in 0..3 {
        let (x, y) = (&a[c * n..(c + 1) * n], &b[c * n..(c + 1) * n]);
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(y).map(|(p, q)| p * q).collect();
        let (mx, my) = (blur(x, h, w, &k), blur(y, h, w, &k));
        let (ex2, ey2, exy) = (blur(&xx, h, w, &k), blur(&yy, h, w, &k), blur(&xy, h, w, &k));
        for i in 0..n {
            if mask[i] <= 0.5 {
                continue;
            }
            let sx = ex2[i] - mx[i] * mx[i];
            let sy = ey2[i] - my[i] * my[i];
            let sxy = exy[i] - mx[i] * my[i];
            let num = (2.0 * mx[i] * my[i] + SSIM_C1) * (2.0 * sxy + SSIM_C2);
            let den = (mx[i] * mx[i] + my[i] * my[i] + SSIM_C1) * (sx + sy + SSIM_C2);
            total += num / den;
            count += 1;
        }
    }
    total / count as f64
}

/// All four metrics over the pixels where `mask` is set.
pub fn evaluate_pair(reference: &Tensor, candidate: &Tensor, mask: &Tensor) -> Result<MetricReport> {
    let s = reference.shape();
    if s.len() != 3 || s[0] != 3 || candidate.shape() != s {
        return Err(Error::Config(format!(
            "expected two [3,h,w] images, got {:?} and {:?}",
            s,
            candidate.shape()
        )));
    }
    let (h, w) = (s[1], s[2]);
    if mask.shape() != [1, h, w] {
        return Err(Error::Config(format!("mask {:?} does not fit {h}x{w}", mask.shape())));
    }
    let m = mask.to_vec_f64();
    let n_pixels = m.iter().filter(|&&v| v > 0.5).count();
    if n_pixels == 0 {
        return Err(Error::Domain("mask selects no pixels".into()));
    }
    let (a, b) = (unit_planes(reference, h, w), unit_planes(candidate, h, w));
    let n = h * w;
    let (mut se, mut ae) = (0.0, 0.0);
    for c in 0..3 {
        for i in 0..n {
            if m[i] > 0.5 {
                let d = a[c * n + i] - b[c * n + i];
                se += d * d;
                ae += d.abs();
            }
        }
    }
    let count = (3 * n_pixels) as f64;
    let mse = se / count;
    Ok(MetricReport {
        psnr: psnr_from_mse(mse),
        ssim: ssim_masked(&a, &b, &m, h, w),
        mse,
        mae: ae / count,
        n_pixels,
    })
}

/// Arithmetic means over samples (the PSNR mean is infinite if any sample is).
pub fn aggregate(reports: &[MetricReport]) -> Result<MetricReport> {
    if reports.is_empty() {
        return Err(Error::Domain("no reports to aggregate".into()));
    }
    let n = reports.len() as f64;
    let mean = |f: fn(&MetricReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
    Ok(MetricReport {
        psnr: mean(|r| r.psnr),
        ssim: mean(|r| r.ssim),
        mse: mean(|r| r.mse),
        mae: mean(|r| r.mae),
        n_pixels: reports.iter().map(|r| r.n_pixels).sum(),
    })
}

fn fmt_psnr(v: f64) -> String {
    if v.is_infinite() {
        "inf".to_string()
    } else {
        format!("{v}")
    }
}

/// Per-sample results plus their mean.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetReport {
    pub rows: Vec<(String, MetricReport)>,
    pub mean: MetricReport,
}

impl DatasetReport {
    /// `sample_id,psnr,ssim,mse,mae` with a closing `MEAN` row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("sample_id,psnr,ssim,mse,mae\n");
        let mut row = |id: &str, r: &MetricReport| {
            let _ = writeln!(out, "{id},{},{},{},{}", fmt_psnr(r.psnr), r.ssim, r.mse, r.mae);
        };
        for (id, r) in &self.rows {
            row(id, r);
        }
        row("MEAN", &self.mean);
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

const EVAL_BATCH: usize = 16;

/// Reconstruction protocol with an arbitrary editor `f(images, att) -> edited`.
pub fn evaluate_with(
    samples: &[ImageSample],
    ids: &[String],
    mut f: impl FnMut(&Tensor, &[AttributeValue]) -> Result<Tensor>,
) -> Result<DatasetReport> {
    if samples.is_empty() {
        return Err(Error::Domain("no samples to evaluate".into()));
    }
    let mut rows = Vec::with_capacity(samples.len());
    for (chunk_i, chunk) in samples.chunks(EVAL_BATCH).enumerate() {
        let batch = Batch::stack(chunk, attriforge_tensor::DType::F32)?;
        let out = f(&batch.images, &batch.att_source)?;
        let (h, w) = chunk[0].size();
        for (j, s) in chunk.iter().enumerate() {
            let cand = out.narrow(0, j, 1).reshape(&[3, h, w]);
            let id = ids.get(chunk_i * EVAL_BATCH + j).cloned().unwrap_or_else(|| (chunk_i * EVAL_BATCH + j).to_string());
            rows.push((id, evaluate_pair(&s.image, &cand, &s.mask)?));
        }
    }
    let reports: Vec<MetricReport> = rows.iter().map(|r| r.1).collect();
    Ok(DatasetReport { mean: aggregate(&reports)?, rows })
}

/// `G(x, att_s)` against `x` for every sample.
pub fn evaluate_dataset(g: &Generator, samples: &[ImageSample], ids: &[String]) -> Result<DatasetReport> {
    evaluate_with(samples, ids, |x, att| {
        no_grad(|| {
            let xv = Var::constant(x.to_dtype(g.dtype()));
            Ok(g.forward_var(&xv, &attribute_var(att, g.dtype()), Mode::Eval)?.value().clone())
        })
    })
}
