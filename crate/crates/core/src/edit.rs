//! Single-image editing at arbitrary resolution.
//!
//! The object is resized to the model's working resolution, edited, resized back and
//! composited over the untouched original background.

use std::cell::RefCell;
use std::path::Path;
use std::sync::Arc;

use attriforge_tensor::{no_grad, DType, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::augment::{resize_bilinear, resize_nearest};
use crate::data::{apply_mask, composite, decode_png, encode_png, mask_from_png_bytes};
use crate::error::{Error, Result};
use crate::networks::{ArchConfig, Generator, SkipMode};
use crate::nn::{load_state_dict, state_dict, Mode};
use crate::stu::{attribute_var, AttributeValue};
use crate::trainer::{checkpoint_id, load_checkpoint_bytes, TrainState};

/// Edit `image` `[3, h, w]` inside `mask` `[1, h, w]` towards `att`. Background pixels
/// of the result equal those of `image`.
pub fn edit_image(g: &Generator, image: &Tensor, mask: &Tensor, att: AttributeValue) -> Result<Tensor> {
    let s = image.shape();
    if s.len() != 3 || s[0] != 3 || mask.shape() != [1, s[1], s[2]] {
        return Err(Error::Config(format!("expected [3,h,w] and [1,h,w], got {:?} and {:?}", s, mask.shape())));
    }
    if mask.sum_all() == 0.0 {
        return Err(Error::Domain("mask selects no pixels".into()));
    }
    let (h, w) = (s[1], s[2]);
    let size = g.config().image_size;
    let image = image.to_dtype(DType::F32);
    let mask = mask.to_dtype(DType::F32);
    let same = h == size && w == size;
    let (small, small_mask) = if same {
        (apply_mask(&image, &mask)?, mask.clone())
    } else {
        let m = resize_nearest(&mask, size, size);
        (apply_mask(&resize_bilinear(&apply_mask(&image, &mask)?, size, size), &m)?, m)
    };
    let dtype = g.dtype();
    let edited = no_grad(|| -> Result<Tensor> {
        let x = Var::constant(small.to_dtype(dtype).reshape(&[1, 3, size, size]));
        let y = g.forward_var(&x, &attribute_var(&[att], dtype), Mode::Eval)?;
        apply_mask(&y.value().reshape(&[3, size, size]).to_dtype(DType::F32), &small_mask)
    })?;
    let full = if same { edited } else { resize_bilinear(&edited, h, w) };
    composite(&full, &image, &mask)
}

/// Mean absolute difference inside `mask`, in unit pixel range.
pub fn masked_l1(a: &Tensor, b: &Tensor, mask: &Tensor) -> f64 {
    let (av, bv, m) = (a.to_vec_f64(), b.to_vec_f64(), mask.to_vec_f64());
    let n = m.len();
    let (mut sum, mut count) = (0.0, 0usize);
    for c in 0..3 {
        for i in (0..n).filter(|&i| m[i] > 0.5) {
            sum += (av[c * n + i] - bv[c * n + i]).abs() * 0.5;
            count += 1;
        }
    }
    if count == 0 { 0.0 } else { sum / count as f64 }
}

/// Result of editing PNG bytes.
pub struct PngEdit {
    pub png: Vec<u8>,
    pub width: usize,
    pub height: usize,
    /// Masked L1 between the edit and the input (small at the source attribute).
    pub l1_to_input: f64,
}

/// Decode, edit and re-encode. Without a mask, non-transparent pixels are edited
/// (all pixels when the input has no alpha). The input's alpha channel is kept.
pub fn edit_png(g: &Generator, image_png: &[u8], mask_png: Option<&[u8]>, att: AttributeValue, max_edge: usize) -> Result<PngEdit> {
    let dec = decode_png(image_png)?;
    if dec.width.max(dec.height) > max_edge {
        return Err(Error::Domain(format!(
            "image is {}x{}, larger than the {max_edge}px limit",
            dec.width, dec.height
        )));
    }
    let mask = match mask_png {
        Some(b) => {
            let m = mask_from_png_bytes(b)?;
            if m.shape() != [1, dec.height, dec.width] {
                return Err(Error::Config(format!(
                    "mask is {:?}, image is {}x{}",
                    &m.shape()[1..],
                    dec.height,
                    dec.width
                )));
            }
            m
        }
        None => dec.alpha.clone(),
    };
    let out = edit_image(g, &dec.image, &mask, att)?;
    let png = encode_png(&out, dec.has_alpha.then_some(&dec.alpha))?;
    Ok(PngEdit { png, width: dec.width, height: dec.height, l1_to_input: masked_l1(&out, &dec.image, &mask) })
}

/// Generator weights detached from any thread, cheap to clone and share.
#[derive(Clone)]
pub struct GeneratorSnapshot {
    pub checkpoint_id: String,
    pub attribute: String,
    arch: ArchConfig,
    skip_mode: SkipMode,
    dtype: DType,
    tensors: Arc<Vec<(String, Tensor)>>,
}

thread_local! {
    static CACHED: RefCell<Option<(String, Generator)>> = const { RefCell::new(None) };
}

impl GeneratorSnapshot {
    pub fn from_state(state: &TrainState, checkpoint_id: String) -> Self {
        GeneratorSnapshot {
            checkpoint_id,
            attribute: state.attribute.clone(),
            arch: state.generator.config().clone(),
            skip_mode: state.generator.skip_mode(),
            dtype: state.generator.dtype(),
            tensors: Arc::new(state_dict(&state.generator)),
        }
    }

    pub fn from_checkpoint_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        let state = load_checkpoint_bytes(bytes)?;
        Ok(Self::from_state(&state, checkpoint_id(bytes)))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_checkpoint_bytes(&bytes).map_err(|reason| Error::Checkpoint { path: path.to_path_buf(), reason })
    }

    pub fn image_size(&self) -> usize {
        self.arch.image_size
    }

    pub fn build(&self) -> Result<Generator> {
        let g = Generator::new(&self.arch, self.skip_mode, self.dtype, &mut ChaCha8Rng::seed_from_u64(0))?;
        load_state_dict(&g, &self.tensors).map_err(Error::Config)?;
        Ok(g)
    }

    /// Runs `f` on this thread's copy of the generator, building it on first use.
    pub fn with_generator<R>(&self, f: impl FnOnce(&Generator) -> R) -> Result<R> {
        CACHED.with(|cell| {
            let mut slot = cell.borrow_mut();
            if slot.as_ref().is_none_or(|(id, _)| *id != self.checkpoint_id) {
                *slot = Some((self.checkpoint_id.clone(), self.build()?));
            }
            Ok(f(&slot.as_ref().expect("just filled").1))
        })
    }
}
