//! Procedural stand-in dataset: shaded spheres and superellipsoids.
//!
//! Shading is Lambertian plus a Blinn-Phong lobe. The "glossy" label is a fixed
//! monotone function of the lobe's weight and sharpness. It is a physical proxy and says
//! nothing about how people perceive gloss.

use std::collections::BTreeMap;
use std::path::Path;

use attriforge_tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::io::{encode_mask_png, save_png};
use super::manifest::{DatasetManifest, ManifestRecord, SampleMeta};
use crate::error::{Error, Result};

pub const PROXY_ATTRIBUTE: &str = "glossy";

/// Blinn-Phong exponent range covered by `shininess` in `[0, 1]`.
const MIN_EXPONENT: f64 = 6.0;
const MAX_EXPONENT: f64 = 120.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ProxyShape {
    Sphere,
    /// `|x/a|^p + |y/b|^p + z^2 = 1`.
    Superellipsoid { exponent: f64, aspect: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProxyParams {
    pub shape: ProxyShape,
    /// Linear RGB in `[0, 1]`.
    pub base_color: [f64; 3],
    /// Towards the light; normalised on use.
    pub light_dir: [f64; 3],
    /// Fraction of the image width covered by the silhouette.
    pub scale: f64,
    /// In-plane rotation of the silhouette, radians.
    pub rotation: f64,
    /// Normalised specular weight in `[0, 1]`.
    pub specular: f64,
    /// Normalised lobe sharpness in `[0, 1]`.
    pub shininess: f64,
}

/// Label map: `specular * (0.5 + 0.5 * shininess)`, clamped to `[0, 1]`.
///
/// Zero specular weight always gives 0 and the label grows strictly with the weight at
/// any fixed sharpness.
pub fn proxy_label(specular: f64, shininess: f64) -> f64 {
    (specular.clamp(0.0, 1.0) * (0.5 + 0.5 * shininess.clamp(0.0, 1.0))).clamp(0.0, 1.0)
}

fn normalize(v: [f64; 3]) -> [f64; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Render at `size` x `size`. Returns the image `[3, h, w]` in `[-1, 1]` (zero
/// background) and the mask `[1, h, w]`.
pub fn render_proxy(p: &ProxyParams, size: usize) -> (Tensor, Tensor) {
    let (exp, aspect) = match p.shape {
        ProxyShape::Sphere => (2.0, 1.0),
        ProxyShape::Superellipsoid { exponent, aspect } => (exponent, aspect),
    };
    let light = normalize(p.light_dir);
    let half = normalize([light[0], light[1], light[2] + 1.0]);
    let spec_exp = MIN_EXPONENT + p.shininess * (MAX_EXPONENT - MIN_EXPONENT);
    let (sin, cos) = p.rotation.sin_cos();
    let n = size * size;
    let mut img = vec![0f32; 3 * n];
    let mut mask = vec![0f32; n];
    for py in 0..size {
        for px in 0..size {
            // Pixel centre in [-1, 1], y up, scaled so the silhouette spans `scale`.
            let u = ((px as f64 + 0.5) / size as f64 * 2.0 - 1.0) / p.scale;
            let v = (1.0 - (py as f64 + 0.5) / size as f64 * 2.0) / p.scale;
            let (x, y) = (cos * u + sin * v, -sin * u + cos * v);
            let (ax, ay) = ((x).abs(), (y / aspect).abs());
            let s = ax.powf(exp) + ay.powf(exp);
            if s >= 1.0 {
                continue;
            }
            let z = (1.0 - s).sqrt();
            // Gradient of the implicit surface, rotated back to image axes.
            let gx = exp * ax.powf(exp - 1.0) * x.signum();
            let gy = exp * ay.powf(exp - 1.0) * y.signum() / aspect;
            let normal = normalize([cos * gx - sin * gy, sin * gx + cos * gy, 2.0 * z]);
            let diffuse = dot(normal, light).max(0.0);
            let highlight = dot(normal, half).max(0.0).powf(spec_exp);
            let i = py * size + px;
            mask[i] = 1.0;
            for c in 0..3 {
                let lin = p.base_color[c] * (0.12 + 0.88 * diffuse) + 0.95 * p.specular * highlight;
                img[c * n + i] = (2.0 * lin.clamp(0.0, 1.0) - 1.0) as f32;
            }
        }
    }
    (Tensor::from_vec(img, &[3, size, size]), Tensor::from_vec(mask, &[1, size, size]))
}

fn hsv(h: f64, s: f64, v: f64) -> [f64; 3] {
    let c = v * s;
    let hp = h / 60.0;
    let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    [r + v - c, g + v - c, b + v - c]
}

/// Parameters of sample `index`. Labels are stratified by decile (index mod 10) so any
/// run of 10 consecutive samples covers every tenth of `[0, 1]`.
pub fn sample_params(seed: u64, index: u64) -> (ProxyParams, SampleMeta) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let decile = (index % 10) as f64;
    let target: f64 = rng.random_range(decile / 10.0..(decile + 1.0) / 10.0);
    // Keep the specular weight <= 1 for this target.
    let shininess: f64 = rng.random_range((2.0 * target - 1.0).max(0.0)..=1.0);
    let specular = (target / (0.5 + 0.5 * shininess)).min(1.0);
    let superellipsoid = rng.random_bool(0.5);
    let shape = if superellipsoid {
        ProxyShape::Superellipsoid {
            exponent: rng.random_range(2.5..4.5),
            aspect: rng.random_range(0.7..1.0),
        }
    } else {
        ProxyShape::Sphere
    };
    let azimuth: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let elevation: f64 = rng.random_range(0.35..1.25);
    let light_dir = [elevation.cos() * azimuth.cos(), elevation.cos() * azimuth.sin(), elevation.sin()];
    let view = rng.random_range(0..5u32);
    let base_color = hsv(rng.random_range(0.0..360.0), rng.random_range(0.35..0.9), rng.random_range(0.35..0.7));
    let params = ProxyParams {
        shape,
        base_color,
        light_dir,
        scale: rng.random_range(0.72..0.9),
        rotation: view as f64 * std::f64::consts::PI / 5.0,
        specular,
        shininess,
    };
    let meta = SampleMeta {
        shape: superellipsoid as u32,
        illum: ((azimuth / std::f64::consts::TAU * 8.0) as u32).min(7),
        material: index as u32,
        view,
    };
    (params, meta)
}

/// Writes `images/`, `masks/` and `manifest.jsonl` under `out_dir`.
pub fn generate_proxy_dataset(n_samples: usize, size: usize, out_dir: &Path, seed: u64) -> Result<DatasetManifest> {
    if n_samples == 0 {
        return Err(Error::Config("n_samples must be at least 1".into()));
    }
    if size < 8 {
        return Err(Error::Config(format!("image size {size} is too small")));
    }
    for sub in ["images", "masks"] {
        let d = out_dir.join(sub);
        std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let mut records = Vec::with_capacity(n_samples);
    for i in 0..n_samples {
        let (params, meta) = sample_params(seed, i as u64);
        let (img, mask) = render_proxy(&params, size);
        let image = format!("images/{i:05}.png");
        let mask_name = format!("masks/{i:05}.png");
        save_png(&out_dir.join(&image), &img, Some(&mask))?;
        let mpath = out_dir.join(&mask_name);
        std::fs::write(&mpath, encode_mask_png(&mask)?).map_err(|e| Error::io(&mpath, e))?;
        records.push(ManifestRecord {
            image,
            mask: mask_name,
            attributes: BTreeMap::from([(
                PROXY_ATTRIBUTE.to_string(),
                proxy_label(params.specular, params.shininess),
            )]),
            meta,
        });
    }
    let manifest = DatasetManifest { attribute: PROXY_ATTRIBUTE.to_string(), records };
    manifest.save(&out_dir.join("manifest.jsonl"))?;
    Ok(manifest)
}

/// Render samples in memory without touching the filesystem.
pub fn proxy_samples(n_samples: usize, size: usize, seed: u64) -> Vec<super::ImageSample> {
    (0..n_samples)
        .map(|i| {
            let (params, meta) = sample_params(seed, i as u64);
            let (img, mask) = render_proxy(&params, size);
            let att = crate::stu::AttributeValue::new(proxy_label(params.specular, params.shininess))
                .expect("label in range");
            super::ImageSample::new(img, mask, att, meta).expect("shapes agree")
        })
        .collect()
}
