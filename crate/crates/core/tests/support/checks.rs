//! Measurements shared by the focused tests and the acceptance run.

use attriforge::losses::{
    d_att_loss, g_adv_loss, g_att_loss, gradient_penalty, rec_loss, total_g_loss, GLossParts, InterpolatedSample,
    LossWeights,
};
use attriforge::networks::{ArchConfig, Discriminator, Generator, SkipMode};
use attriforge::nn::{gaussian, Conv2d, Mode, Module};
use attriforge::stu::{
    attribute_var, inject_attribute, stu_forward, AttributeValue, FeatureMap, HiddenState, StuCellParams,
};
use attriforge::tensor::{DType, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{cell_oracle, fd_check, fd_check_input, spread, Arr, CellWeights, FdReport};

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOL: f64 = 1e-3;

fn weights(p: &StuCellParams) -> CellWeights {
    let pair = |c: &Conv2d| (c.weight.tensor(), c.bias.tensor());
    CellWeights { inject: pair(&p.inject), update: pair(&p.update), reset: pair(&p.reset), candidate: pair(&p.candidate) }
}

fn randomize(p: &StuCellParams, std: f64, rng: &mut ChaCha8Rng) {
    for c in [&p.inject, &p.update, &p.reset, &p.candidate] {
        c.weight.set(gaussian(c.weight.tensor().shape(), std, DType::F64, rng));
        c.bias.set(gaussian(c.bias.tensor().shape(), std, DType::F64, rng));
    }
}

fn max_diff(v: &Var, a: &Arr) -> f64 {
    assert_eq!(v.shape(), &a.shape);
    v.value().to_vec_f64().iter().zip(&a.data).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Worst absolute difference between the library cell and the loop oracle over `cases`
/// random configurations (every intermediate: injected state, gates, candidate, outputs).
pub fn stu_oracle_worst(cases: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let n = rng.random_range(1..=2);
        let c = rng.random_range(1..=4);
        let hin = rng.random_range(1..=4);
        let (h, w) = (2 * rng.random_range(1..=3), 2 * rng.random_range(1..=3));
        let p = StuCellParams::new(hin, c, DType::F64, &mut rng);
        randomize(&p, 0.5, &mut rng);
        let f = gaussian(&[n, c, h, w], 1.0, DType::F64, &mut rng);
        let s_prev = gaussian(&[n, hin, h / 2, w / 2], 1.0, DType::F64, &mut rng);
        let att: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..=1.0)).collect();
        let av: Vec<AttributeValue> = att.iter().map(|&a| AttributeValue::new(a).unwrap()).collect();

        let hidden = HiddenState { data: Var::constant(s_prev.clone()), layer_index: 3 };
        let s_hat = inject_attribute(&hidden, &attribute_var(&av, DType::F64), &p).unwrap();
        let out = stu_forward(&FeatureMap { data: Var::constant(f.clone()), layer_index: 2 }, &s_hat, &p).unwrap();
        let o = cell_oracle(&Arr::from_tensor(&f), &Arr::from_tensor(&s_prev), &att, &weights(&p));
        for (v, a) in [
            (&s_hat.data, &o.s_hat),
            (&out.trace.update_gate, &o.u),
            (&out.trace.reset_gate, &o.r),
            (&out.trace.candidate, &o.f_hat),
            (&out.hidden.data, &o.s),
            (&out.edited.data, &o.f_t),
        ] {
            worst = worst.max(max_diff(v, a));
        }
    }
    worst
}

/// Cell with constant gate pre-activations `update_bias` / `reset_bias`.
fn saturated(update_bias: f64, reset_bias: f64) -> (StuCellParams, FeatureMap, HiddenState) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let p = StuCellParams::new(3, 2, DType::F64, &mut rng);
    randomize(&p, 0.3, &mut rng);
    for (conv, b) in [(&p.update, update_bias), (&p.reset, reset_bias)] {
        conv.weight.set(Tensor::zeros(conv.weight.tensor().shape(), DType::F64));
        conv.bias.set(Tensor::full(conv.bias.tensor().shape(), b, DType::F64));
    }
    let f = FeatureMap { data: Var::constant(gaussian(&[2, 2, 4, 4], 1.0, DType::F64, &mut rng)), layer_index: 2 };
    let s_prev = HiddenState { data: Var::constant(gaussian(&[2, 3, 2, 2], 1.0, DType::F64, &mut rng)), layer_index: 3 };
    (p, f, s_prev)
}

fn att2() -> Var {
    attribute_var(&[AttributeValue::new(0.2).unwrap(), AttributeValue::new(0.9).unwrap()], DType::F64)
}

/// `max |f_t - f_hat|` with the update gate forced open.
pub fn open_update_gate_gap() -> f64 {
    let (p, f, s_prev) = saturated(40.0, 0.0);
    let s_hat = inject_attribute(&s_prev, &att2(), &p).unwrap();
    let out = stu_forward(&f, &s_hat, &p).unwrap();
    out.edited.data.value().max_abs_diff(out.trace.candidate.value())
}

/// `max |s_l|` with the reset gate forced shut.
pub fn closed_reset_gate_output() -> f64 {
    let (p, f, s_prev) = saturated(0.0, -40.0);
    let s_hat = inject_attribute(&s_prev, &att2(), &p).unwrap();
    stu_forward(&f, &s_hat, &p).unwrap().hidden.data.value().max_abs()
}

fn small() -> ArchConfig {
    ArchConfig { image_size: 32, widths: [2, 3, 4, 5, 6] }
}

pub type Checks = Vec<(String, FdReport)>;

pub fn grad_stu_parameters() -> Checks {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let p = StuCellParams::new(3, 2, DType::F64, &mut rng);
    randomize(&p, 0.4, &mut rng);
    let f = Var::constant(gaussian(&[2, 2, 4, 4], 1.0, DType::F64, &mut rng));
    let s = Var::constant(gaussian(&[2, 3, 2, 2], 1.0, DType::F64, &mut rng));
    let att = Var::constant(Tensor::from_vec(vec![0.3, 0.8], &[2]));
    let proj = Var::constant(gaussian(&[2, 2, 4, 4], 1.0, DType::F64, &mut rng));
    let loss = || {
        let s_hat = inject_attribute(&HiddenState { data: s.clone(), layer_index: 2 }, &att, &p).unwrap();
        let out = stu_forward(&FeatureMap { data: f.clone(), layer_index: 1 }, &s_hat, &p).unwrap();
        out.edited.data.mul(&proj).sum().add(&out.hidden.data.square().sum())
    };
    p.params().into_iter().map(|(n, q)| (n, fd_check(q, &spread(q.numel(), 12), FD_STEP, &loss))).collect()
}

pub fn grad_generator_attribute() -> Checks {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let g = Generator::new(&small(), SkipMode::Stu, DType::F64, &mut rng).unwrap();
    let x = Var::constant(gaussian(&[2, 3, 32, 32], 0.5, DType::F64, &mut rng));
    let proj = Var::constant(gaussian(&[2, 3, 32, 32], 1.0, DType::F64, &mut rng));
    let att = Tensor::from_vec(vec![0.25, 0.7], &[2]);
    let f = |a: &Var| g.forward_var(&x, a, Mode::Eval).unwrap().mul(&proj).sum();
    vec![("att".into(), fd_check_input(&att, &[0, 1], FD_STEP, &f))]
}

pub fn grad_total_generator_loss() -> Checks {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let arch = small();
    let g = Generator::new(&arch, SkipMode::Stu, DType::F64, &mut rng).unwrap();
    let d = Discriminator::new(&arch, DType::F64, &mut rng).unwrap();
    // Default-initialised hidden states are so small that reset-gate gradients sit at
    // the round-off floor of the difference quotient; check at a livelier point.
    for (name, p) in g.params() {
        if name.starts_with("stu") {
            p.set(gaussian(p.tensor().shape(), 0.3, DType::F64, &mut rng));
        }
    }
    // |x| >= 0.5 keeps every reconstruction residual away from the L1 kink at init.
    let x: Vec<f64> = (0..2 * 3 * 32 * 32)
        .map(|_| rng.random_range(0.5..1.0) * if rng.random_bool(0.5) { 1.0 } else { -1.0 })
        .collect();
    let x = Var::constant(Tensor::from_vec(x, &[2, 3, 32, 32]));
    let att_s = Var::constant(Tensor::from_vec(vec![0.1, 0.6], &[2]));
    let att_t = Var::constant(Tensor::from_vec(vec![0.9, 0.3], &[2]));
    let mode = Mode::Train { update_stats: false };
    let w = LossWeights::default();
    let loss = || {
        let enc = g.encode(&x, mode).unwrap();
        let rec = rec_loss(&x, &g.decode(&enc, &att_s).unwrap());
        let on_fake = d.discriminate(&g.decode(&enc, &att_t).unwrap(), mode).unwrap();
        let parts = GLossParts { adv: Some(g_adv_loss(&on_fake.adv)), att: Some(g_att_loss(&att_t, &on_fake.att)), rec };
        total_g_loss(&parts, &w)
    };
    g.params()
        .into_iter()
        .filter(|(n, _)| n.ends_with("weight") || n.ends_with("gamma"))
        .map(|(n, q)| (n, fd_check(q, &spread(q.numel(), 3), FD_STEP, &loss)))
        .collect()
}

fn penalty_setup() -> (Discriminator, InterpolatedSample) {
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    let d = Discriminator::new(&small(), DType::F64, &mut rng).unwrap();
    for (_, p) in d.params() {
        p.set(gaussian(p.tensor().shape(), 0.3, DType::F64, &mut rng));
    }
    let real = gaussian(&[2, 3, 32, 32], 0.5, DType::F64, &mut rng);
    let fake = gaussian(&[2, 3, 32, 32], 0.5, DType::F64, &mut rng);
    (d, InterpolatedSample::new(&real, &fake, &[0.3, 0.65]).unwrap())
}

/// The critic's input gradient at the interpolates, which the penalty is built from.
pub fn grad_critic_input() -> Checks {
    let (d, sample) = penalty_setup();
    let f = |x: &Var| d.critic(x, Mode::Train { update_stats: false }).unwrap().sum();
    vec![("x_hat".into(), fd_check_input(&sample.data, &spread(sample.data.numel(), 24), FD_STEP, &f))]
}

/// The penalty differentiated with respect to the critic (double backprop).
pub fn grad_penalty_parameters() -> Checks {
    let (d, sample) = penalty_setup();
    let loss = || gradient_penalty(|x| d.critic(x, Mode::Train { update_stats: false }), &sample, 10.0).unwrap();
    d.params()
        .into_iter()
        .filter(|(n, _)| !(n.starts_with("att_head") || n.ends_with("bias") || n.ends_with("beta")))
        .map(|(n, q)| (n, fd_check(q, &spread(q.numel(), 3), FD_STEP, &loss)))
        .collect()
}

pub fn grad_critic_attribute_head() -> Checks {
    let (d, sample) = penalty_setup();
    let x = Var::constant(sample.data.clone());
    let truth = Var::constant(Tensor::from_vec(vec![0.2, 0.7], &[2]));
    let loss = || d_att_loss(&truth, &d.discriminate(&x, Mode::Train { update_stats: false }).unwrap().att);
    d.params()
        .into_iter()
        .filter(|(n, _)| n.starts_with("att_head.weight"))
        .map(|(n, q)| (n, fd_check(q, &spread(q.numel(), 8), FD_STEP, &loss)))
        .collect()
}

/// First failing entry, if any, as a message.
pub fn first_failure(checks: &Checks) -> Option<String> {
    checks
        .iter()
        .find(|(_, r)| !r.passes(FD_TOL))
        .map(|(n, r)| format!("{n}: relative error {:e} ({} of {} entries at kinks)", r.worst, r.kinks, r.checked))
}

pub fn worst(checks: &Checks) -> f64 {
    checks.iter().map(|(_, r)| r.worst).fold(0.0, f64::max)
}
