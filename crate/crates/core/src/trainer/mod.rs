//! Adversarial training loop, checkpoints and ablation switches.

mod checkpoint;
mod optim;

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs::OpenOptions;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use attriforge_tensor::{backward, no_grad, DType, Tensor, Var};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use checkpoint::{
    checkpoint_id, load_checkpoint, load_checkpoint_bytes, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use optim::{Adam, ADAM_EPS};

use crate::data::{apply_mask, augment, AugmentationConfig, Batch, Dataset, ImageSample};
use crate::error::{Error, Result};
use crate::losses::{
    d_adv_loss, d_att_loss, g_adv_loss, g_att_loss, gradient_penalty, rec_loss, total_d_loss,
    total_g_loss, DLossParts, GLossParts, InterpolatedSample, LossWeights,
};
use crate::networks::{ArchConfig, Discriminator, Encoded, Generator, SkipMode};
use crate::nn::{set_trainable, Mode, Module};
use crate::stu::{attribute_var, AttributeValue};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Ablation {
    Full,
    /// Generator trained on the reconstruction loss alone.
    NoDiscriminator,
    /// Raw skip concatenation instead of STU cells.
    NoStu,
}

impl Ablation {
    pub fn name(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::NoDiscriminator => "no_discriminator",
            Ablation::NoStu => "no_stu",
        }
    }

    pub fn skip_mode(self) -> SkipMode {
        match self {
            Ablation::NoStu => SkipMode::Concat,
            _ => SkipMode::Stu,
        }
    }

    pub fn uses_discriminator(self) -> bool {
        self != Ablation::NoDiscriminator
    }
}

impl std::str::FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Ablation::Full),
            "no_discriminator" => Ok(Ablation::NoDiscriminator),
            "no_stu" => Ok(Ablation::NoStu),
            other => Err(Error::Config(format!(
                "unknown ablation `{other}` (expected full, no_discriminator or no_stu)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weights: LossWeights,
    pub d_steps_per_g_step: usize,
    pub batch_size: usize,
    /// Generator updates.
    pub total_steps: u64,
    pub ablation: Ablation,
    pub seed: u64,
    /// Architecture preset, `full` or `tiny`.
    pub network: String,
    pub dtype: DType,
    pub checkpoint_every: u64,
    pub keep_checkpoints: usize,
    /// Run the augmentation chain on every drawn sample.
    pub augment: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            learning_rate: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            weights: LossWeights::default(),
            d_steps_per_g_step: 7,
            batch_size: 16,
            total_steps: 100_000,
            ablation: Ablation::Full,
            seed: 0,
            network: "full".into(),
            dtype: DType::F32,
            checkpoint_every: 500,
            keep_checkpoints: 3,
            augment: true,
        }
    }
}

impl TrainingConfig {
    pub fn arch(&self) -> Result<ArchConfig> {
        ArchConfig::preset(&self.network)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.d_steps_per_g_step < 1 {
            return bad("d_steps_per_g_step must be at least 1".into());
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(0.0 <= self.beta1 && self.beta1 < self.beta2 && self.beta2 < 1.0) {
            return bad(format!("need 0 <= beta1 < beta2 < 1, got {} and {}", self.beta1, self.beta2));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.checkpoint_every == 0 || self.keep_checkpoints == 0 {
            return bad("checkpoint_every and keep_checkpoints must be at least 1".into());
        }
        self.weights.validate()?;
        self.arch()?;
        Ok(())
    }
}

/// `U([0, 1])`.
pub fn sample_target_attribute(rng: &mut impl Rng) -> AttributeValue {
    AttributeValue::new(rng.random_range(0.0..=1.0)).expect("draw in range")
}

/// Independent stream seed for `(seed, purpose, a, b)`.
pub fn stream_seed(seed: u64, purpose: u64, a: u64, b: u64) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for word in [seed, purpose, a, b] {
        for byte in word.to_le_bytes() {
            h ^= byte as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    h
}

const STREAM_ORDER: u64 = 1;
const STREAM_AUGMENT: u64 = 2;
const STREAM_STEP: u64 = 3;
const STREAM_INIT: u64 = 4;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct UpdateCounters {
    pub critic_updates: u64,
    pub generator_updates: u64,
}

/// Everything a run needs to continue: models, optimizers, progress.
pub struct TrainState {
    pub config: TrainingConfig,
    pub augmentation: AugmentationConfig,
    pub attribute: String,
    pub generator: Generator,
    pub discriminator: Discriminator,
    pub g_opt: Adam,
    pub d_opt: Adam,
    /// Completed `train_step` calls.
    pub step: u64,
    pub counters: UpdateCounters,
}

impl TrainState {
    /// Fresh models initialised from the config seed.
    pub fn new(config: TrainingConfig, augmentation: AugmentationConfig, attribute: &str) -> Result<Self> {
        config.validate()?;
        augmentation.validate()?;
        let arch = config.arch()?;
        if augmentation.final_size != arch.image_size {
            return Err(Error::Config(format!(
                "augmentation output {} differs from the network input {}",
                augmentation.final_size, arch.image_size
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(config.seed, STREAM_INIT, 0, 0));
        let generator = Generator::new(&arch, config.ablation.skip_mode(), config.dtype, &mut rng)?;
        let discriminator = Discriminator::new(&arch, config.dtype, &mut rng)?;
        let g_opt = Adam::new(config.learning_rate, config.beta1, config.beta2, &generator.params());
        let d_opt = Adam::new(config.learning_rate, config.beta1, config.beta2, &discriminator.params());
        Ok(TrainState {
            config,
            augmentation,
            attribute: attribute.to_string(),
            generator,
            discriminator,
            g_opt,
            d_opt,
            step: 0,
            counters: UpdateCounters::default(),
        })
    }
}

/// Component losses of one `train_step`. Critic terms are means over its critic updates
/// and are `None` when the discriminator is disabled.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossReport {
    pub step: u64,
    /// Wasserstein part, `mean(fake) - mean(real)`.
    pub d_adv: Option<f64>,
    pub gp: Option<f64>,
    pub d_att: Option<f64>,
    pub g_adv: Option<f64>,
    pub g_att: Option<f64>,
    pub rec: f64,
}

pub const LOSS_LOG_HEADER: &str = "step,L_Dadv,L_GP,L_Datt,L_Gadv,L_Gatt,L_rec";

impl LossReport {
    pub fn csv_row(&self) -> String {
        let f = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| format!("{x}"));
        format!(
            "{},{},{},{},{},{},{}",
            self.step,
            f(self.d_adv),
            f(self.gp),
            f(self.d_att),
            f(self.g_adv),
            f(self.g_att),
            self.rec
        )
    }
}

fn check_finite(component: &str, v: &Var, step: u64) -> Result<f64> {
    let x = v.item();
    if x.is_finite() {
        Ok(x)
    } else {
        Err(Error::Diverged { component: component.into(), step, value: x })
    }
}

fn uniform_batch(n: usize, rng: &mut impl Rng) -> Vec<AttributeValue> {
    (0..n).map(|_| sample_target_attribute(rng)).collect()
}

/// What both phases of a step share: the batch and one generator encoding of it.
struct StepInputs {
    real: Var,
    masks: Tensor,
    att_s: Var,
    encoded: Encoded,
    step: u64,
}

impl StepInputs {
    fn new(state: &TrainState, batch: &Batch) -> Result<Self> {
        if batch.is_empty() {
            return Err(Error::Config("empty batch".into()));
        }
        let dtype = state.config.dtype;
        let real = Var::constant(batch.images.to_dtype(dtype));
        set_trainable(&state.generator, true);
        set_trainable(&state.discriminator, false);
        let encoded = state.generator.encode(&real, Mode::Train { update_stats: true })?;
        Ok(StepInputs {
            real,
            masks: batch.masks.to_dtype(dtype),
            att_s: attribute_var(&batch.att_source, dtype),
            encoded,
            step: state.step + 1,
        })
    }

    fn n(&self) -> usize {
        self.real.shape()[0]
    }
}

const BATCH_STATS: Mode = Mode::Train { update_stats: false };

/// The critic updates of one step; returns summed (L_Dadv without penalty, L_GP, L_Datt).
fn critic_updates(state: &mut TrainState, inp: &StepInputs, rng: &mut impl Rng) -> Result<[f64; 3]> {
    let cfg = &state.config;
    let (g, d) = (&state.generator, &state.discriminator);
    let (dtype, n, step) = (cfg.dtype, inp.n(), inp.step);
    let frozen = inp.encoded.detached();
    let mut sums = [0.0f64; 3];
    set_trainable(d, true);
    let d_params = d.params();
    for _ in 0..cfg.d_steps_per_g_step {
        let att_t = attribute_var(&uniform_batch(n, rng), dtype);
        let fake = no_grad(|| -> Result<Tensor> { apply_mask(g.decode(&frozen, &att_t)?.value(), &inp.masks) })?;
        let eps: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..=1.0)).collect();
        let sample = InterpolatedSample::new(inp.real.value(), &fake, &eps)?;
        let on_real = d.discriminate(&inp.real, BATCH_STATS)?;
        let on_fake = d.critic(&Var::constant(fake), BATCH_STATS)?;
        let gp = gradient_penalty(|x| d.critic(x, BATCH_STATS), &sample, cfg.weights.lambda1)?;
        let adv = d_adv_loss(&on_real.adv, &on_fake, &gp);
        let att = d_att_loss(&inp.att_s, &on_real.att);
        let total = total_d_loss(&DLossParts { adv: adv.clone(), att: att.clone() }, &cfg.weights);
        let gp_v = check_finite("L_GP", &gp, step)?;
        sums[0] += check_finite("L_Dadv", &adv, step)? - gp_v;
        sums[1] += gp_v;
        sums[2] += check_finite("L_Datt", &att, step)?;
        check_finite("L_D", &total, step)?;
        state.d_opt.step(&d_params, &backward(&total))?;
        state.counters.critic_updates += 1;
    }
    set_trainable(d, false);
    Ok(sums)
}

/// The generator update; returns (L_Gadv, L_Gatt, L_rec).
fn generator_update(
    state: &mut TrainState,
    inp: &StepInputs,
    rng: &mut impl Rng,
) -> Result<(Option<f64>, Option<f64>, f64)> {
    let cfg = &state.config;
    let (g, d) = (&state.generator, &state.discriminator);
    let step = inp.step;
    let att_t = attribute_var(&uniform_batch(inp.n(), rng), cfg.dtype);
    let mask = Var::constant(inp.masks.broadcast_to(inp.real.shape()));
    let x_rec = g.decode(&inp.encoded, &inp.att_s)?.mul(&mask);
    let rec = rec_loss(&inp.real, &x_rec);
    let (adv, att) = if cfg.ablation.uses_discriminator() {
        let y = g.decode(&inp.encoded, &att_t)?.mul(&mask);
        let on_fake = d.discriminate(&y, BATCH_STATS)?;
        (Some(g_adv_loss(&on_fake.adv)), Some(g_att_loss(&att_t, &on_fake.att)))
    } else {
        (None, None)
    };
    let parts = GLossParts { adv, att, rec };
    let total = total_g_loss(&parts, &cfg.weights);
    let rec_v = check_finite("L_rec", &parts.rec, step)?;
    let g_adv = parts.adv.as_ref().map(|v| check_finite("L_Gadv", v, step)).transpose()?;
    let g_att = parts.att.as_ref().map(|v| check_finite("L_Gatt", v, step)).transpose()?;
    check_finite("L_G", &total, step)?;
    let grads = backward(&total);
    state.g_opt.step(&g.params(), &grads)?;
    state.counters.generator_updates += 1;
    Ok((g_adv, g_att, rec_v))
}

/// `d_steps_per_g_step` critic updates, then one generator update, all on `batch`.
///
/// Randomness (targets, interpolation weights) comes from `rng`.
pub fn train_step(state: &mut TrainState, batch: &Batch, rng: &mut impl Rng) -> Result<LossReport> {
    let inp = StepInputs::new(state, batch)?;
    let used = state.config.ablation.uses_discriminator();
    let d_sums = if used { critic_updates(state, &inp, rng)? } else { [0.0; 3] };
    let result = generator_update(state, &inp, rng);
    set_trainable(&state.discriminator, true);
    let (g_adv, g_att, rec) = result?;
    state.step = inp.step;

    let k = state.config.d_steps_per_g_step as f64;
    let mean = |i: usize| used.then(|| d_sums[i] / k);
    Ok(LossReport { step: inp.step, d_adv: mean(0), gp: mean(1), d_att: mean(2), g_adv, g_att, rec })
}

/// Deterministic sample order: position `k` of the concatenated per-epoch permutations.
struct BatchPlan {
    n: usize,
    seed: u64,
    perms: HashMap<u64, Vec<usize>>,
}

impl BatchPlan {
    fn index(&mut self, k: u64) -> (u64, usize) {
        let epoch = k / self.n as u64;
        let (n, seed) = (self.n, self.seed);
        let perm = self.perms.entry(epoch).or_insert_with(|| {
            let mut p: Vec<usize> = (0..n).collect();
            p.shuffle(&mut ChaCha8Rng::seed_from_u64(stream_seed(seed, STREAM_ORDER, epoch, 0)));
            p
        });
        let i = perm[(k % n as u64) as usize];
        self.perms.retain(|&e, _| e + 1 >= epoch);
        (epoch, i)
    }
}

/// Samples for the step after `completed_steps`, augmented from their own streams.
fn draw_batch(plan: &mut BatchPlan, state: &TrainState, data: &[ImageSample]) -> Result<Batch> {
    let b = state.config.batch_size as u64;
    let samples: Vec<ImageSample> = (0..b)
        .map(|j| {
            let (epoch, i) = plan.index(state.step * b + j);
            if state.config.augment {
                let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(state.config.seed, STREAM_AUGMENT, i as u64, epoch));
                augment(&data[i], &state.augmentation, &mut rng)
            } else {
                Ok(data[i].clone())
            }
        })
        .collect::<Result<_>>()?;
    Batch::stack(&samples, state.config.dtype)
}

pub fn step_rng(seed: u64, step: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stream_seed(seed, STREAM_STEP, step, 0))
}

/// Where a run keeps its checkpoints and loss log.
#[derive(Clone, Debug)]
pub struct RunDir(pub PathBuf);

impl RunDir {
    pub fn loss_log(&self) -> PathBuf {
        self.0.join("losses.csv")
    }

    pub fn checkpoint(&self, step: u64) -> PathBuf {
        self.0.join(format!("step_{step:07}.ckpt"))
    }

    pub fn final_checkpoint(&self) -> PathBuf {
        self.0.join("final.ckpt")
    }

    /// Periodic checkpoints present on disk, oldest first.
    pub fn periodic_checkpoints(&self) -> Result<Vec<PathBuf>> {
        let rd = std::fs::read_dir(&self.0).map_err(|e| Error::io(&self.0, e))?;
        let mut v: Vec<PathBuf> = rd
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.starts_with("step_") && n.ends_with(".ckpt"))
            })
            .collect();
        v.sort();
        Ok(v)
    }
}

/// Rows up to and including `step` of an existing log, so a resumed run can append.
fn truncate_log(path: &Path, step: u64) -> Result<()> {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => String::new(),
        Err(e) => return Err(Error::io(path, e)),
    };
    let mut out = format!("{LOSS_LOG_HEADER}\n");
    for line in text.lines().skip(1) {
        let s: Option<u64> = line.split(',').next().and_then(|v| v.parse().ok());
        if s.is_some_and(|s| s <= step) {
            let _ = writeln!(out, "{line}");
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Runs `train_step` until `state.config.total_steps`, logging and checkpointing into
/// `run_dir` when given. Resumes from `state.step`.
pub fn train(
    state: &mut TrainState,
    dataset: &Dataset,
    run_dir: Option<&RunDir>,
    mut on_step: impl FnMut(&LossReport),
) -> Result<Vec<LossReport>> {
    if dataset.is_empty() {
        return Err(Error::Config("dataset is empty".into()));
    }
    if dataset.attribute != state.attribute {
        return Err(Error::Config(format!(
            "dataset edits `{}` but the run was set up for `{}`",
            dataset.attribute, state.attribute
        )));
    }
    let size = state.generator.config().image_size;
    if let Some(s) = dataset.samples.iter().find(|s| s.size() != (size, size)) {
        return Err(Error::Config(format!("sample of size {:?} does not match the network input {size}", s.size())));
    }
    let mut log_file = match run_dir {
        Some(rd) => {
            std::fs::create_dir_all(&rd.0).map_err(|e| Error::io(&rd.0, e))?;
            truncate_log(&rd.loss_log(), state.step)?;
            let p = rd.loss_log();
            Some(OpenOptions::new().append(true).open(&p).map_err(|e| Error::io(&p, e))?)
        }
        None => None,
    };
    let mut plan = BatchPlan { n: dataset.len(), seed: state.config.seed, perms: HashMap::new() };
    let mut reports = Vec::new();
    while state.step < state.config.total_steps {
        let batch = draw_batch(&mut plan, state, &dataset.samples)?;
        let mut rng = step_rng(state.config.seed, state.step);
        let report = train_step(state, &batch, &mut rng)?;
        if let (Some(f), Some(rd)) = (log_file.as_mut(), run_dir) {
            writeln!(f, "{}", report.csv_row()).map_err(|e| Error::io(rd.loss_log(), e))?;
        }
        if let Some(rd) = run_dir {
            if state.step.is_multiple_of(state.config.checkpoint_every) {
                save_checkpoint(state, &rd.checkpoint(state.step))?;
                let existing = rd.periodic_checkpoints()?;
                let excess = existing.len().saturating_sub(state.config.keep_checkpoints);
                for old in &existing[..excess] {
                    std::fs::remove_file(old).map_err(|e| Error::io(old, e))?;
                }
            }
        }
        on_step(&report);
        reports.push(report);
    }
    if let Some(rd) = run_dir {
        save_checkpoint(state, &rd.final_checkpoint())?;
    }
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::proxy_samples;
    use crate::data::PROXY_ATTRIBUTE;

    fn tiny(ablation: Ablation) -> TrainState {
        let cfg = TrainingConfig {
            network: "tiny".into(),
            batch_size: 2,
            d_steps_per_g_step: 2,
            ablation,
            augment: false,
            ..TrainingConfig::default()
        };
        TrainState::new(cfg, AugmentationConfig::for_size(64), PROXY_ATTRIBUTE).unwrap()
    }

    fn batch() -> Batch {
        Batch::stack(&proxy_samples(2, 64, 1), DType::F32).unwrap()
    }

    fn snapshot(m: &dyn Module) -> Vec<Tensor> {
        m.params().iter().map(|(_, p)| p.tensor()).collect()
    }

    #[test]
    fn defaults_are_the_reference_hyperparameters() {
        let c = TrainingConfig::default();
        assert_eq!((c.learning_rate, c.beta1, c.beta2), (2e-4, 0.5, 0.999));
        assert_eq!(c.d_steps_per_g_step, 7);
        assert_eq!(c.batch_size, 16);
        assert!(c.validate().is_ok());
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let base = TrainingConfig::default();
        for c in [
            TrainingConfig { d_steps_per_g_step: 0, ..base.clone() },
            TrainingConfig { learning_rate: 0.0, ..base.clone() },
            TrainingConfig { beta1: 0.999, beta2: 0.5, ..base.clone() },
            TrainingConfig { network: "huge".into(), ..base.clone() },
        ] {
            assert!(matches!(c.validate(), Err(Error::Config(_))));
        }
    }

    #[test]
    fn target_draws_are_uniform_and_reproducible() {
        let draw = |seed| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            (0..10_000).map(|_| sample_target_attribute(&mut r).get()).collect::<Vec<_>>()
        };
        let a = draw(3);
        assert!(a.iter().all(|v| (0.0..=1.0).contains(v)));
        let mean = a.iter().sum::<f64>() / a.len() as f64;
        assert!((0.48..=0.52).contains(&mean), "{mean}");
        assert_eq!(a, draw(3));
    }

    #[test]
    fn step_counts_critic_and_generator_updates() {
        let mut s = tiny(Ablation::Full);
        let r = train_step(&mut s, &batch(), &mut step_rng(0, 0)).unwrap();
        assert_eq!(s.counters, UpdateCounters { critic_updates: 2, generator_updates: 1 });
        assert_eq!((s.d_opt.t, s.g_opt.t, s.step), (2, 1, 1));
        assert!(r.d_adv.is_some() && r.gp.is_some() && r.g_att.is_some());
    }

    fn unchanged(a: &[Tensor], b: &[Tensor]) -> bool {
        a.iter().zip(b).all(|(x, y)| x.bit_eq(y))
    }

    #[test]
    fn each_phase_only_moves_its_own_network() {
        let mut s = tiny(Ablation::Full);
        let mut rng = step_rng(0, 0);
        let inp = StepInputs::new(&s, &batch()).unwrap();
        let (g0, d0) = (snapshot(&s.generator), snapshot(&s.discriminator));
        critic_updates(&mut s, &inp, &mut rng).unwrap();
        let d1 = snapshot(&s.discriminator);
        assert!(unchanged(&snapshot(&s.generator), &g0));
        assert!(!unchanged(&d1, &d0));
        generator_update(&mut s, &inp, &mut rng).unwrap();
        assert!(unchanged(&snapshot(&s.discriminator), &d1));
        assert!(!unchanged(&snapshot(&s.generator), &g0));
    }

    #[test]
    fn no_discriminator_leaves_the_critic_untouched() {
        let mut s = tiny(Ablation::NoDiscriminator);
        let before = snapshot(&s.discriminator);
        let g_before = snapshot(&s.generator);
        let r = train_step(&mut s, &batch(), &mut step_rng(0, 0)).unwrap();
        assert!(snapshot(&s.discriminator).iter().zip(&before).all(|(a, b)| a.bit_eq(b)));
        assert!(snapshot(&s.generator).iter().zip(&g_before).any(|(a, b)| !a.bit_eq(b)));
        assert_eq!((r.d_adv, r.gp, r.d_att, r.g_adv, r.g_att), (None, None, None, None, None));
        assert_eq!(s.counters.critic_updates, 0);
        assert!(r.csv_row().contains(",NA,NA,NA,NA,NA,"));
    }

    #[test]
    fn loss_rows_match_the_header() {
        let r = LossReport { step: 3, d_adv: Some(1.5), gp: Some(0.25), d_att: None, g_adv: None, g_att: None, rec: 0.5 };
        assert_eq!(r.csv_row().split(',').count(), LOSS_LOG_HEADER.split(',').count());
        assert_eq!(r.csv_row(), "3,1.5,0.25,NA,NA,NA,0.5");
    }

    #[test]
    fn empty_dataset_is_a_config_error() {
        let mut s = tiny(Ablation::Full);
        let ds = Dataset { attribute: PROXY_ATTRIBUTE.into(), samples: vec![] };
        assert!(matches!(train(&mut s, &ds, None, |_| {}), Err(Error::Config(_))));
    }

    #[test]
    fn batch_plan_covers_each_epoch_once() {
        let mut plan = BatchPlan { n: 7, seed: 1, perms: HashMap::new() };
        for epoch in 0..3u64 {
            let mut seen: Vec<usize> = (0..7).map(|j| plan.index(epoch * 7 + j).1).collect();
            seen.sort();
            assert_eq!(seen, (0..7).collect::<Vec<_>>());
        }
    }
}
