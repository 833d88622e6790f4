//! Frozen attribute regressor for judging edits from the outside.
//!
//! Ridge regression over handcrafted statistics of the object pixels (brightness
//! quantiles, whiteness of the brightest pixels, highlight coverage). It shares nothing
//! with the discriminator, so it cannot be gamed by the generator's training signal.

use attriforge_tensor::{no_grad, DType, Tensor, Var};

use crate::data::{apply_mask, quantize_8bit, Batch, ImageSample};
use crate::error::{Error, Result};
use crate::networks::Generator;
use crate::nn::Mode;
use crate::stu::{attribute_var, AttributeValue};

/// Sweep used by the monotonicity check.
pub const SWEEP_LEVELS: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Feature vector of an image in `[-1, 1]` restricted to `mask`.
pub fn probe_features(image: &Tensor, mask: &Tensor) -> Result<Vec<f64>> {
    let s = image.shape();
    if s.len() != 3 || s[0] != 3 || mask.shape() != [1, s[1], s[2]] {
        return Err(Error::Config(format!("probe needs [3,h,w] + [1,h,w], got {:?} and {:?}", s, mask.shape())));
    }
    let n = s[1] * s[2];
    let (v, m) = (image.to_vec_f64(), mask.to_vec_f64());
    let mut lum = Vec::new();
    let mut white = Vec::new();
    let mut sat = Vec::new();
    for i in (0..n).filter(|&i| m[i] > 0.5) {
        let rgb = [0, 1, 2].map(|c| ((v[c * n + i] + 1.0) * 0.5).clamp(0.0, 1.0));
        let (lo, hi) = (rgb[0].min(rgb[1]).min(rgb[2]), rgb[0].max(rgb[1]).max(rgb[2]));
        lum.push(0.299 * rgb[0] + 0.587 * rgb[1] + 0.114 * rgb[2]);
        white.push(lo);
        sat.push(if hi > 0.0 { (hi - lo) / hi } else { 0.0 });
    }
    if lum.is_empty() {
        return Err(Error::Domain("mask selects no pixels".into()));
    }
    let count = lum.len() as f64;
    let mean_lum = lum.iter().sum::<f64>() / count;
    // Saturation of the brightest 5% of pixels: highlights wash colour out.
    let mut order: Vec<usize> = (0..lum.len()).collect();
    order.sort_by(|&a, &b| lum[b].total_cmp(&lum[a]));
    let top = ((count * 0.05).ceil() as usize).max(1);
    let top_sat = order[..top].iter().map(|&i| sat[i]).sum::<f64>() / top as f64;
    let mut sl = lum.clone();
    sl.sort_by(f64::total_cmp);
    let mut sw = white.clone();
    sw.sort_by(f64::total_cmp);
    let frac = |t: f64| white.iter().filter(|&&w| w > t).count() as f64 / count;
    Ok(vec![
        mean_lum,
        quantile(&sl, 0.5),
        quantile(&sl, 0.9),
        quantile(&sl, 0.99),
        sl[sl.len() - 1],
        quantile(&sw, 0.9),
        quantile(&sw, 0.97),
        quantile(&sw, 0.99),
        sw[sw.len() - 1] - quantile(&sw, 0.5),
        frac(0.5),
        frac(0.7),
        frac(0.85),
        top_sat,
    ])
}

/// Solves `a x = b` for symmetric positive definite `a` (row-major `d x d`).
fn cholesky_solve(a: &[f64], b: &[f64], d: usize) -> Result<Vec<f64>> {
    let mut l = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i * d + k] * l[j * d + k]).sum();
            if i == j {
                let v = a[i * d + i] - s;
                if !(v > 0.0) {
                    return Err(Error::Domain("probe normal equations are not positive definite".into()));
                }
                l[i * d + i] = v.sqrt();
            } else {
                l[i * d + j] = (a[i * d + j] - s) / l[j * d + j];
            }
        }
    }
    let mut y = vec![0.0; d];
    for i in 0..d {
        y[i] = (b[i] - (0..i).map(|k| l[i * d + k] * y[k]).sum::<f64>()) / l[i * d + i];
    }
    let mut x = vec![0.0; d];
    for i in (0..d).rev() {
        x[i] = (y[i] - (i + 1..d).map(|k| l[k * d + i] * x[k]).sum::<f64>()) / l[i * d + i];
    }
    Ok(x)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttributeProbe {
    mean: Vec<f64>,
    scale: Vec<f64>,
    weights: Vec<f64>,
    bias: f64,
}

impl AttributeProbe {
    /// Ridge fit on standardised features against each sample's `att_source`.
    pub fn fit(samples: &[ImageSample], ridge: f64) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::Domain("probe needs at least two samples".into()));
        }
        let rows: Vec<Vec<f64>> = samples.iter().map(|s| probe_features(&s.image, &s.mask)).collect::<Result<_>>()?;
        let y: Vec<f64> = samples.iter().map(|s| s.att_source.get()).collect();
        let (n, d) = (rows.len() as f64, rows[0].len());
        let mean: Vec<f64> = (0..d).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
        let scale: Vec<f64> = (0..d)
            .map(|j| {
                let var = rows.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n;
                if var > 1e-12 { var.sqrt() } else { 1.0 }
            })
            .collect();
        let z: Vec<Vec<f64>> = rows.iter().map(|r| (0..d).map(|j| (r[j] - mean[j]) / scale[j]).collect()).collect();
        let y_mean = y.iter().sum::<f64>() / n;
        let mut a = vec![0.0; d * d];
        let mut b = vec![0.0; d];
        for (zi, yi) in z.iter().zip(&y) {
            for j in 0..d {
                b[j] += zi[j] * (yi - y_mean);
                for k in 0..d {
                    a[j * d + k] += zi[j] * zi[k];
                }
            }
        }
        for j in 0..d {
            a[j * d + j] += ridge;
        }
        let weights = cholesky_solve(&a, &b, d)?;
        Ok(AttributeProbe { mean, scale, weights, bias: y_mean })
    }

    pub fn predict(&self, image: &Tensor, mask: &Tensor) -> Result<f64> {
        let f = probe_features(image, mask)?;
        Ok(self.bias + f.iter().enumerate().map(|(j, x)| self.weights[j] * (x - self.mean[j]) / self.scale[j]).sum::<f64>())
    }
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        // Ties share the average of their positions.
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation (Pearson on average ranks). `NaN` if either side is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

/// How generator outputs are presented to the probe.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepOutput {
    Raw,
    /// Rounded to 8-bit levels, as written to PNG by the CLI and the service.
    Quantized,
}

/// Mean probe prediction on masked `G(x, a)` for each level `a`.
pub fn edit_sweep(
    g: &Generator,
    probe: &AttributeProbe,
    samples: &[ImageSample],
    levels: &[f64],
    output: SweepOutput,
) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(Error::Domain("no samples for the sweep".into()));
    }
    let dtype = g.dtype();
    let mut out = Vec::with_capacity(levels.len());
    for &a in levels {
        let att = AttributeValue::new(a)?;
        let mut total = 0.0;
        for chunk in samples.chunks(16) {
            let batch = Batch::stack(chunk, DType::F32)?;
            let y = no_grad(|| -> Result<Tensor> {
                let x = Var::constant(batch.images.to_dtype(dtype));
                let y = g.forward_var(&x, &attribute_var(&vec![att; chunk.len()], dtype), Mode::Eval)?;
                apply_mask(y.value(), &batch.masks.to_dtype(dtype))
            })?;
            let (h, w) = chunk[0].size();
            for (j, s) in chunk.iter().enumerate() {
                let mut yj = y.narrow(0, j, 1).reshape(&[3, h, w]);
                if output == SweepOutput::Quantized {
                    yj = quantize_8bit(&yj);
                }
                total += probe.predict(&yj, &s.mask)?;
            }
        }
        out.push(total / samples.len() as f64);
    }
    Ok(out)
}
