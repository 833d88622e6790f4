//! Flat `key=value` run configuration (JSON accepted too).

use std::path::Path;

use crate::data::AugmentationConfig;
use crate::error::{Error, Result};
use crate::trainer::TrainingConfig;

/// Every accepted key, in the order `to_kv` writes them.
pub const KEYS: &[&str] = &[
    "learning_rate",
    "beta1",
    "beta2",
    "lambda1",
    "lambda2",
    "lambda3",
    "lambda4",
    "d_steps_per_g_step",
    "batch_size",
    "total_steps",
    "ablation",
    "seed",
    "network",
    "dtype",
    "checkpoint_every",
    "keep_checkpoints",
    "augment",
    "aug.resize_to",
    "aug.crop_to",
    "aug.final_size",
    "aug.hue_shift_max",
    "aug.sat_shift_max",
    "aug.flip",
    "aug.rotate",
    "aug.random_crop",
    "aug.color",
];

#[derive(Clone, Debug, PartialEq)]
pub struct ResolvedConfig {
    pub training: TrainingConfig,
    pub augmentation: AugmentationConfig,
}

impl Default for ResolvedConfig {
    fn default() -> Self {
        ResolvedConfig::from_pairs(&[]).expect("defaults are valid")
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("bad value `{value}` for `{key}`")))
}

impl ResolvedConfig {
    /// Defaults with `pairs` applied in order. Augmentation sizes follow the network
    /// preset unless set explicitly.
    pub fn from_pairs(pairs: &[(String, String)]) -> Result<Self> {
        if let Some((k, _)) = pairs.iter().find(|(k, _)| !KEYS.contains(&k.as_str())) {
            return Err(Error::Config(format!("unknown configuration key `{k}`")));
        }
        let mut t = TrainingConfig::default();
        let mut aug_pairs = Vec::new();
        for (k, v) in pairs {
            let v = v.as_str();
            match k.as_str() {
                "learning_rate" => t.learning_rate = parse(k, v)?,
                "beta1" => t.beta1 = parse(k, v)?,
                "beta2" => t.beta2 = parse(k, v)?,
                "lambda1" => t.weights.lambda1 = parse(k, v)?,
                "lambda2" => t.weights.lambda2 = parse(k, v)?,
                "lambda3" => t.weights.lambda3 = parse(k, v)?,
                "lambda4" => t.weights.lambda4 = parse(k, v)?,
                "d_steps_per_g_step" => t.d_steps_per_g_step = parse(k, v)?,
                "batch_size" => t.batch_size = parse(k, v)?,
                "total_steps" => t.total_steps = parse(k, v)?,
                "ablation" => t.ablation = v.trim().parse()?,
                "seed" => t.seed = parse(k, v)?,
                "network" => t.network = v.trim().to_string(),
                "dtype" => t.dtype = v.trim().parse().map_err(Error::Config)?,
                "checkpoint_every" => t.checkpoint_every = parse(k, v)?,
                "keep_checkpoints" => t.keep_checkpoints = parse(k, v)?,
                "augment" => t.augment = parse(k, v)?,
                _ => aug_pairs.push((k, v)),
            }
        }
        t.validate()?;
        let mut a = AugmentationConfig::for_size(t.arch()?.image_size);
        for (k, v) in aug_pairs {
            match k.as_str() {
                "aug.resize_to" => a.resize_to = parse(k, v)?,
                "aug.crop_to" => a.crop_to = parse(k, v)?,
                "aug.final_size" => a.final_size = parse(k, v)?,
                "aug.hue_shift_max" => a.hue_shift_max = parse(k, v)?,
                "aug.sat_shift_max" => a.sat_shift_max = parse(k, v)?,
                "aug.flip" => a.flip = parse(k, v)?,
                "aug.rotate" => a.rotate = parse(k, v)?,
                "aug.random_crop" => a.random_crop = parse(k, v)?,
                "aug.color" => a.color = parse(k, v)?,
                _ => unreachable!("key list checked above"),
            }
        }
        a.validate()?;
        Ok(ResolvedConfig { training: t, augmentation: a })
    }

    pub fn to_kv(&self) -> String {
        let (t, a) = (&self.training, &self.augmentation);
        let values: Vec<String> = vec![
            t.learning_rate.to_string(),
            t.beta1.to_string(),
            t.beta2.to_string(),
            t.weights.lambda1.to_string(),
            t.weights.lambda2.to_string(),
            t.weights.lambda3.to_string(),
            t.weights.lambda4.to_string(),
            t.d_steps_per_g_step.to_string(),
            t.batch_size.to_string(),
            t.total_steps.to_string(),
            t.ablation.name().to_string(),
            t.seed.to_string(),
            t.network.clone(),
            t.dtype.to_string(),
            t.checkpoint_every.to_string(),
            t.keep_checkpoints.to_string(),
            t.augment.to_string(),
            a.resize_to.to_string(),
            a.crop_to.to_string(),
            a.final_size.to_string(),
            a.hue_shift_max.to_string(),
            a.sat_shift_max.to_string(),
            a.flip.to_string(),
            a.rotate.to_string(),
            a.random_crop.to_string(),
            a.color.to_string(),
        ];
        KEYS.iter().zip(values).map(|(k, v)| format!("{k}={v}\n")).collect()
    }
}

/// `key=value` lines; blank lines and `#` comments are skipped.
pub fn parse_kv_text(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got `{line}`", i + 1)))?;
        let k = k.trim();
        if k.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", i + 1)));
        }
        out.push((k.to_string(), v.trim().to_string()));
    }
    Ok(out)
}

fn flatten_json(prefix: &str, v: &serde_json::Value, out: &mut Vec<(String, String)>) -> Result<()> {
    use serde_json::Value;
    match v {
        Value::Object(map) => {
            for (k, child) in map {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten_json(&key, child, out)?;
            }
        }
        Value::String(s) => out.push((prefix.to_string(), s.clone())),
        Value::Number(n) => out.push((prefix.to_string(), n.to_string())),
        Value::Bool(b) => out.push((prefix.to_string(), b.to_string())),
        _ => return Err(Error::Config(format!("unsupported JSON value for `{prefix}`"))),
    }
    Ok(())
}

/// A JSON object; nested objects become dotted keys (`{"aug": {"flip": false}}`).
pub fn parse_json_text(text: &str) -> Result<Vec<(String, String)>> {
    let v: serde_json::Value =
        serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid JSON config: {e}")))?;
    if !v.is_object() {
        return Err(Error::Config("JSON config must be an object".into()));
    }
    let mut out = Vec::new();
    flatten_json("", &v, &mut out)?;
    Ok(out)
}

/// File contents (if any) then `key=value` overrides, on top of the defaults.
pub fn parse_config(path: Option<&Path>, overrides: &[String]) -> Result<ResolvedConfig> {
    let mut pairs = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            let json = p.extension().is_some_and(|e| e == "json") || text.trim_start().starts_with('{');
            if json {
                parse_json_text(&text)?
            } else {
                parse_kv_text(&text)?
            }
        }
        None => Vec::new(),
    };
    for o in overrides {
        pairs.extend(parse_kv_text(o)?);
    }
    ResolvedConfig::from_pairs(&pairs)
}
