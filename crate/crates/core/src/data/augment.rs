//! Geometric and colour augmentation.
//!
//! Order: resize -> horizontal flip -> k * 90 degree rotation -> crop -> hue/saturation
//! shift on object pixels -> resize to the final size. The mask follows every geometric
//! stage with nearest-neighbour sampling and is re-applied at the end.

use attriforge_tensor::{DType, Tensor};
use image::imageops::{self, FilterType};
use image::{ImageBuffer, Luma, Rgb};
use rand::Rng;

use super::{apply_mask, ImageSample};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct AugmentationConfig {
    pub resize_to: usize,
    pub crop_to: usize,
    pub final_size: usize,
    /// Maximum absolute hue rotation, degrees.
    pub hue_shift_max: f64,
    /// Saturation is scaled by a factor in `[1 - s, 1 + s]`.
    pub sat_shift_max: f64,
    pub flip: bool,
    pub rotate: bool,
    /// Random crop offset; when off the crop is centred.
    pub random_crop: bool,
    pub color: bool,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        AugmentationConfig {
            resize_to: 512,
            crop_to: 480,
            final_size: 256,
            hue_shift_max: 18.0,
            sat_shift_max: 0.3,
            flip: true,
            rotate: true,
            random_crop: true,
            color: true,
        }
    }
}

impl AugmentationConfig {
    /// Same pipeline scaled to another output size (resize 2x, crop 15/16 of that).
    pub fn for_size(final_size: usize) -> Self {
        AugmentationConfig {
            resize_to: 2 * final_size,
            crop_to: final_size * 15 / 8,
            final_size,
            ..AugmentationConfig::default()
        }
    }

    /// Every random stage switched off.
    pub fn deterministic(mut self) -> Self {
        self.flip = false;
        self.rotate = false;
        self.random_crop = false;
        self.color = false;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.crop_to > self.resize_to || self.final_size > self.crop_to || self.final_size == 0 {
            return Err(Error::Config(format!(
                "need final_size <= crop_to <= resize_to, got {} / {} / {}",
                self.final_size, self.crop_to, self.resize_to
            )));
        }
        if !(0.0..1.0).contains(&self.sat_shift_max) || !(self.hue_shift_max >= 0.0) {
            return Err(Error::Config("colour shift ranges out of bounds".into()));
        }
        Ok(())
    }
}

type RgbF = ImageBuffer<Rgb<f32>, Vec<f32>>;
type MaskF = ImageBuffer<Luma<f32>, Vec<f32>>;

fn planes(t: &Tensor) -> (usize, usize, Vec<f32>) {
    let s = t.shape();
    let v = t.to_dtype(DType::F32);
    (s[1], s[2], v.as_slice::<f32>().expect("f32").to_vec())
}

/// `image` clamps float pixels to `[0, 1]`, so buffers hold `(v + 1) / 2`.
fn to_rgb(t: &Tensor) -> RgbF {
    let (h, w, p) = planes(t);
    let mut out = Vec::with_capacity(3 * h * w);
    for i in 0..h * w {
        out.extend([p[i], p[h * w + i], p[2 * h * w + i]].map(|v| (v + 1.0) * 0.5));
    }
    RgbF::from_raw(w as u32, h as u32, out).expect("size matches")
}

fn from_rgb(img: &RgbF) -> Tensor {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut out = vec![0f32; 3 * h * w];
    for (i, px) in img.pixels().enumerate() {
        for c in 0..3 {
            out[c * h * w + i] = 2.0 * px[c] - 1.0;
        }
    }
    Tensor::from_vec(out, &[3, h, w])
}

fn to_mask(t: &Tensor) -> MaskF {
    let (h, w, p) = planes(t);
    MaskF::from_raw(w as u32, h as u32, p).expect("size matches")
}

fn from_mask(img: &MaskF) -> Tensor {
    let (w, h) = (img.width() as usize, img.height() as usize);
    Tensor::from_vec(img.as_raw().clone(), &[1, h, w])
}

/// Triangle-filtered resize of a `[3, h, w]` image.
pub(crate) fn resize_bilinear(t: &Tensor, h: usize, w: usize) -> Tensor {
    from_rgb(&imageops::resize(&to_rgb(t), w as u32, h as u32, FilterType::Triangle))
}

/// Nearest-neighbour resize of a `[1, h, w]` mask (stays binary).
pub(crate) fn resize_nearest(t: &Tensor, h: usize, w: usize) -> Tensor {
    from_mask(&imageops::resize(&to_mask(t), w as u32, h as u32, FilterType::Nearest))
}

fn rgb_to_hsv(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    let h = if d == 0.0 {
        0.0
    } else if max == r {
        60.0 * ((g - b) / d).rem_euclid(6.0)
    } else if max == g {
        60.0 * ((b - r) / d + 2.0)
    } else {
        60.0 * ((r - g) / d + 4.0)
    };
    let s = if max == 0.0 { 0.0 } else { d / max };
    (h, s, max)
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> (f64, f64, f64) {
    let c = v * s;
    let hp = h.rem_euclid(360.0) / 60.0;
    let x = c * (1.0 - (hp.rem_euclid(2.0) - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    (r + m, g + m, b + m)
}

/// Rotate hue by `hue_deg` and scale saturation by `sat_scale` on pixels inside `mask`.
/// `image` is `[3, h, w]` in `[-1, 1]`.
pub fn hsv_shift(image: &Tensor, mask: &Tensor, hue_deg: f64, sat_scale: f64) -> Tensor {
    let hue = hue_deg.rem_euclid(360.0);
    if hue == 0.0 && sat_scale == 1.0 {
        return image.clone();
    }
    let (h, w, mut p) = planes(image);
    let m = mask.to_vec_f64();
    let n = h * w;
    for i in 0..n {
        if m[i] <= 0.5 {
            continue;
        }
        let unit = |v: f32| ((v as f64 + 1.0) * 0.5).clamp(0.0, 1.0);
        let (hh, s, v) = rgb_to_hsv(unit(p[i]), unit(p[n + i]), unit(p[2 * n + i]));
        let (r, g, b) = hsv_to_rgb(hh + hue, (s * sat_scale).clamp(0.0, 1.0), v);
        p[i] = (2.0 * r - 1.0) as f32;
        p[n + i] = (2.0 * g - 1.0) as f32;
        p[2 * n + i] = (2.0 * b - 1.0) as f32;
    }
    Tensor::from_vec(p, &[3, h, w])
}

pub fn augment(sample: &ImageSample, cfg: &AugmentationConfig, rng: &mut impl Rng) -> Result<ImageSample> {
    cfg.validate()?;
    let mut img = imageops::resize(
        &to_rgb(&sample.image),
        cfg.resize_to as u32,
        cfg.resize_to as u32,
        FilterType::Triangle,
    );
    let mut mask = imageops::resize(
        &to_mask(&sample.mask),
        cfg.resize_to as u32,
        cfg.resize_to as u32,
        FilterType::Nearest,
    );
    if cfg.flip && rng.random_bool(0.5) {
        imageops::flip_horizontal_in_place(&mut img);
        imageops::flip_horizontal_in_place(&mut mask);
    }
    if cfg.rotate {
        match rng.random_range(0..4u32) {
            1 => (img, mask) = (imageops::rotate90(&img), imageops::rotate90(&mask)),
            2 => (img, mask) = (imageops::rotate180(&img), imageops::rotate180(&mask)),
            3 => (img, mask) = (imageops::rotate270(&img), imageops::rotate270(&mask)),
            _ => {}
        }
    }
    let slack = (cfg.resize_to - cfg.crop_to) as u32;
    let (ox, oy) = if cfg.random_crop {
        (rng.random_range(0..=slack), rng.random_range(0..=slack))
    } else {
        (slack / 2, slack / 2)
    };
    let c = cfg.crop_to as u32;
    let img = imageops::crop_imm(&img, ox, oy, c, c).to_image();
    let mask = imageops::crop_imm(&mask, ox, oy, c, c).to_image();
    let (mut image, mut mask_t) = (from_rgb(&img), from_mask(&mask));
    if cfg.color {
        let hue = rng.random_range(-cfg.hue_shift_max..=cfg.hue_shift_max);
        let sat = rng.random_range(1.0 - cfg.sat_shift_max..=1.0 + cfg.sat_shift_max);
        image = hsv_shift(&image, &mask_t, hue, sat);
    }
    if cfg.final_size != cfg.crop_to {
        image = resize_bilinear(&image, cfg.final_size, cfg.final_size);
        mask_t = resize_nearest(&mask_t, cfg.final_size, cfg.final_size);
    }
    let image = apply_mask(&image, &mask_t)?;
    Ok(ImageSample { image, mask: mask_t, att_source: sample.att_source, meta: sample.meta })
}
