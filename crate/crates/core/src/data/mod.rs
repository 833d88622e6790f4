//! Samples, masking, attribute pooling, and dataset loading.

pub(crate) mod augment;
mod io;
mod manifest;
mod proxy;

pub use augment::{augment, hsv_shift, AugmentationConfig};
pub use io::{
    decode_png, encode_mask_png, encode_png, load_mask_png, load_png, mask_from_png_bytes, png_dimensions, quantize_8bit, save_png,
    Decoded,
};
pub use manifest::{DatasetManifest, ManifestRecord, SampleMeta};
pub use proxy::{
    generate_proxy_dataset, proxy_label, proxy_samples, render_proxy, sample_params, ProxyParams, ProxyShape,
    PROXY_ATTRIBUTE,
};

use std::path::Path;

use attriforge_tensor::{DType, Tensor};

use crate::error::{Error, Result};
use crate::stu::AttributeValue;

/// One training or evaluation example.
#[derive(Clone, Debug)]
pub struct ImageSample {
    /// `[3, h, w]`, values in `[-1, 1]`, zero outside the mask.
    pub image: Tensor,
    /// `[1, h, w]`, entries exactly 0 or 1.
    pub mask: Tensor,
    pub att_source: AttributeValue,
    pub meta: SampleMeta,
}

impl ImageSample {
    /// Builds a sample and enforces the zero-background invariant.
    pub fn new(image: Tensor, mask: Tensor, att_source: AttributeValue, meta: SampleMeta) -> Result<Self> {
        let image = apply_mask(&image, &mask)?;
        Ok(ImageSample { image, mask, att_source, meta })
    }

    pub fn size(&self) -> (usize, usize) {
        let s = self.image.shape();
        (s[1], s[2])
    }
}

fn check_mask(image: &Tensor, mask: &Tensor) -> Result<()> {
    let (is, ms) = (image.shape(), mask.shape());
    let ok = is.len() == ms.len()
        && is.len() >= 3
        && ms[ms.len() - 3] == 1
        && is[..is.len() - 3] == ms[..ms.len() - 3]
        && is[is.len() - 2..] == ms[ms.len() - 2..];
    if !ok {
        return Err(Error::Config(format!("mask {ms:?} does not fit image {is:?}")));
    }
    Ok(())
}

/// Zero every pixel outside the mask. Works for `[c,h,w]` and `[n,c,h,w]`.
pub fn apply_mask(image: &Tensor, mask: &Tensor) -> Result<Tensor> {
    check_mask(image, mask)?;
    let m = mask.to_dtype(image.dtype()).broadcast_to(image.shape());
    Ok(image.mul(&m))
}

/// `edited * mask + original * (1 - mask)`; background pixels come back bit-exact.
pub fn composite(edited: &Tensor, original: &Tensor, mask: &Tensor) -> Result<Tensor> {
    if edited.shape() != original.shape() {
        return Err(Error::Config(format!(
            "edited {:?} and original {:?} differ in shape",
            edited.shape(),
            original.shape()
        )));
    }
    check_mask(original, mask)?;
    let m = mask.to_dtype(original.dtype()).broadcast_to(original.shape());
    let inv = m.mul_scalar(-1.0).add_scalar(1.0);
    Ok(edited.to_dtype(original.dtype()).mul(&m).add(&original.mul(&inv)))
}

/// Median of per-viewpoint ratings (mean of the two central values for even counts).
pub fn pool_attribute(ratings: &[f64]) -> Result<AttributeValue> {
    if ratings.is_empty() {
        return Err(Error::Domain("cannot pool an empty list of ratings".into()));
    }
    if let Some(bad) = ratings.iter().find(|r| !(0.0..=1.0).contains(*r)) {
        return Err(Error::Domain(format!("rating {bad} is outside [0, 1]")));
    }
    let mut v = ratings.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let m = if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) };
    AttributeValue::new(m)
}

/// A stacked mini-batch.
#[derive(Clone, Debug)]
pub struct Batch {
    /// `[n, 3, h, w]`
    pub images: Tensor,
    /// `[n, 1, h, w]`
    pub masks: Tensor,
    pub att_source: Vec<AttributeValue>,
}

impl Batch {
    pub fn stack(samples: &[ImageSample], dtype: DType) -> Result<Self> {
        let first = samples.first().ok_or_else(|| Error::Config("empty batch".into()))?;
        let (h, w) = first.size();
        if let Some(bad) = samples.iter().find(|s| s.size() != (h, w)) {
            return Err(Error::Config(format!(
                "batch mixes {h}x{w} with {}x{} images",
                bad.size().0,
                bad.size().1
            )));
        }
        let imgs: Vec<Tensor> = samples.iter().map(|s| s.image.reshape(&[1, 3, h, w])).collect();
        let masks: Vec<Tensor> = samples.iter().map(|s| s.mask.reshape(&[1, 1, h, w])).collect();
        Ok(Batch {
            images: Tensor::cat(&imgs.iter().collect::<Vec<_>>(), 0).to_dtype(dtype),
            masks: Tensor::cat(&masks.iter().collect::<Vec<_>>(), 0).to_dtype(dtype),
            att_source: samples.iter().map(|s| s.att_source).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.att_source.len()
    }

    pub fn is_empty(&self) -> bool {
        self.att_source.is_empty()
    }
}

/// In-memory dataset resolved from a manifest.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub attribute: String,
    pub samples: Vec<ImageSample>,
}

impl Dataset {
    /// Loads every record, resizing to `size` x `size` when the files differ.
    pub fn load(manifest: &DatasetManifest, base: &Path, size: usize) -> Result<Self> {
        let mut samples = Vec::with_capacity(manifest.records.len());
        for rec in &manifest.records {
            let att = rec.attribute(&manifest.attribute)?;
            let decoded = load_png(&base.join(&rec.image))?;
            let mask = load_mask_png(&base.join(&rec.mask))?;
            let (image, mask) = if decoded.width != size || decoded.height != size {
                (
                    augment::resize_bilinear(&decoded.image, size, size),
                    augment::resize_nearest(&mask, size, size),
                )
            } else {
                (decoded.image, mask)
            };
            samples.push(ImageSample::new(image, mask, att, rec.meta)?);
        }
        Ok(Dataset { attribute: manifest.attribute.clone(), samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}
