//! 8-bit PNG in and out. Pixel values map `[0, 255] -> [-1, 1]`.

use std::io::Cursor;
use std::path::Path;

use attriforge_tensor::Tensor;
use image::{DynamicImage, ImageFormat, RgbImage, RgbaImage};

use crate::error::{Error, Result};

/// A decoded PNG as planar tensors.
#[derive(Clone, Debug)]
pub struct Decoded {
    /// `[3, h, w]` f32 in `[-1, 1]`, not masked.
    pub image: Tensor,
    /// `[1, h, w]`: 1 where alpha is non-zero (all ones without an alpha channel).
    pub alpha: Tensor,
    pub has_alpha: bool,
    pub width: usize,
    pub height: usize,
}

fn to_unit(v: u8) -> f32 {
    v as f32 / 127.5 - 1.0
}

fn to_byte(v: f32) -> u8 {
    ((v.clamp(-1.0, 1.0) + 1.0) * 127.5).round() as u8
}

/// Round every value to the nearest of the 256 levels a PNG can hold.
pub fn quantize_8bit(t: &Tensor) -> Tensor {
    let v: Vec<f64> = t.to_vec_f64().iter().map(|&x| to_unit(to_byte(x as f32)) as f64).collect();
    Tensor::from_f64(v, t.shape(), t.dtype())
}

fn from_dynamic(img: DynamicImage) -> Decoded {
    let has_alpha = img.color().has_alpha();
    let rgba = img.to_rgba8();
    let (w, h) = (rgba.width() as usize, rgba.height() as usize);
    let mut planes = vec![0f32; 3 * w * h];
    let mut alpha = vec![0f32; w * h];
    for (i, px) in rgba.pixels().enumerate() {
        for c in 0..3 {
            planes[c * w * h + i] = to_unit(px[c]);
        }
        alpha[i] = if px[3] > 0 { 1.0 } else { 0.0 };
    }
    Decoded {
        image: Tensor::from_vec(planes, &[3, h, w]),
        alpha: Tensor::from_vec(alpha, &[1, h, w]),
        has_alpha,
        width: w,
        height: h,
    }
}

pub fn decode_png(bytes: &[u8]) -> Result<Decoded> {
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)
        .map_err(|e| Error::Image(format!("not a readable PNG: {e}")))?;
    Ok(from_dynamic(img))
}

/// `(width, height)` from the PNG header without decoding pixels.
pub fn png_dimensions(bytes: &[u8]) -> Result<(usize, usize)> {
    let (w, h) = image::ImageReader::with_format(Cursor::new(bytes), ImageFormat::Png)
        .into_dimensions()
        .map_err(|e| Error::Image(format!("not a readable PNG: {e}")))?;
    Ok((w as usize, h as usize))
}

pub fn load_png(path: &Path) -> Result<Decoded> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_png(&bytes).map_err(|e| Error::Image(format!("{}: {e}", path.display())))
}

/// Binary mask from a PNG: luminance >= 128 counts as object. A fully opaque-white
/// test is avoided on purpose so grayscale and RGB masks both work.
pub fn mask_from_png_bytes(bytes: &[u8]) -> Result<Tensor> {
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)
        .map_err(|e| Error::Image(format!("not a readable PNG mask: {e}")))?;
    let luma = img.to_luma8();
    let (w, h) = (luma.width() as usize, luma.height() as usize);
    let data: Vec<f32> = luma.pixels().map(|p| if p[0] >= 128 { 1.0 } else { 0.0 }).collect();
    Ok(Tensor::from_vec(data, &[1, h, w]))
}

pub fn load_mask_png(path: &Path) -> Result<Tensor> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    mask_from_png_bytes(&bytes).map_err(|e| Error::Image(format!("{}: {e}", path.display())))
}

/// Encode `[3, h, w]` in `[-1, 1]`; with `alpha`, writes RGBA using the mask as alpha.
pub fn encode_png(image: &Tensor, alpha: Option<&Tensor>) -> Result<Vec<u8>> {
    let s = image.shape();
    if s.len() != 3 || s[0] != 3 {
        return Err(Error::Image(format!("expected a [3,h,w] image, got {s:?}")));
    }
    let (h, w) = (s[1], s[2]);
    let v = image.to_dtype(attriforge_tensor::DType::F32);
    let px = v.as_slice::<f32>().expect("f32 tensor");
    let dynimg = match alpha {
        Some(a) => {
            if a.shape() != [1, h, w] {
                return Err(Error::Image(format!("alpha {:?} does not fit {h}x{w}", a.shape())));
            }
            let a = a.to_vec_f64();
            let mut buf = RgbaImage::new(w as u32, h as u32);
            for (i, p) in buf.pixels_mut().enumerate() {
                p.0 = [
                    to_byte(px[i]),
                    to_byte(px[w * h + i]),
                    to_byte(px[2 * w * h + i]),
                    if a[i] > 0.5 { 255 } else { 0 },
                ];
            }
            DynamicImage::ImageRgba8(buf)
        }
        None => {
            let mut buf = RgbImage::new(w as u32, h as u32);
            for (i, p) in buf.pixels_mut().enumerate() {
                p.0 = [to_byte(px[i]), to_byte(px[w * h + i]), to_byte(px[2 * w * h + i])];
            }
            DynamicImage::ImageRgb8(buf)
        }
    };
    let mut out = Cursor::new(Vec::new());
    dynimg
        .write_to(&mut out, ImageFormat::Png)
        .map_err(|e| Error::Image(format!("PNG encoding failed: {e}")))?;
    Ok(out.into_inner())
}

pub fn save_png(path: &Path, image: &Tensor, alpha: Option<&Tensor>) -> Result<()> {
    let bytes = encode_png(image, alpha)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Grayscale PNG of a `[1, h, w]` binary mask.
pub fn encode_mask_png(mask: &Tensor) -> Result<Vec<u8>> {
    let s = mask.shape();
    if s.len() != 3 || s[0] != 1 {
        return Err(Error::Image(format!("expected a [1,h,w] mask, got {s:?}")));
    }
    let data: Vec<u8> = mask.to_vec_f64().iter().map(|&m| if m > 0.5 { 255 } else { 0 }).collect();
    let buf = image::GrayImage::from_raw(s[2] as u32, s[1] as u32, data).expect("size matches");
    let mut out = Cursor::new(Vec::new());
    DynamicImage::ImageLuma8(buf)
        .write_to(&mut out, ImageFormat::Png)
        .map_err(|e| Error::Image(format!("PNG encoding failed: {e}")))?;
    Ok(out.into_inner())
}
