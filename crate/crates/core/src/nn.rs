//! Layer building blocks shared by the generator and the discriminator.

use std::cell::RefCell;

use attriforge_tensor::{ConvGeom, DType, Tensor, Var};
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Standard deviation of the zero-mean Gaussian used for every weight.
pub const INIT_STD: f64 = 0.02;
pub const BN_MOMENTUM: f64 = 0.1;
pub const NORM_EPS: f64 = 1e-5;

/// A trainable tensor. Interior mutability lets optimizers swap values while the
/// module tree is shared immutably.
pub struct Param(RefCell<Var>);

impl Param {
    pub fn new(value: Tensor) -> Self {
        Param(RefCell::new(Var::leaf(value)))
    }

    /// The current graph leaf for this parameter.
    pub fn var(&self) -> Var {
        self.0.borrow().clone()
    }

    pub fn tensor(&self) -> Tensor {
        self.0.borrow().value().clone()
    }

    pub fn set(&self, value: Tensor) {
        assert_eq!(value.shape(), self.0.borrow().shape(), "parameter shape is fixed");
        let trainable = self.is_trainable();
        *self.0.borrow_mut() = if trainable { Var::leaf(value) } else { Var::constant(value) };
    }

    pub fn is_trainable(&self) -> bool {
        self.0.borrow().requires_grad()
    }

    /// A frozen parameter enters graphs as a constant, so no gradient is computed for it.
    pub fn set_trainable(&self, trainable: bool) {
        if trainable != self.is_trainable() {
            let value = self.tensor();
            *self.0.borrow_mut() = if trainable { Var::leaf(value) } else { Var::constant(value) };
        }
    }

    pub fn numel(&self) -> usize {
        self.0.borrow().value().numel()
    }
}

/// Non-trainable state such as running normalization statistics.
pub struct Buffer(RefCell<Tensor>);

impl Buffer {
    pub fn new(value: Tensor) -> Self {
        Buffer(RefCell::new(value))
    }

    pub fn tensor(&self) -> Tensor {
        self.0.borrow().clone()
    }

    pub fn set(&self, value: Tensor) {
        assert_eq!(value.shape(), self.0.borrow().shape(), "buffer shape is fixed");
        *self.0.borrow_mut() = value;
    }
}

pub enum Slot<'a> {
    Param(&'a Param),
    Buffer(&'a Buffer),
}

impl Slot<'_> {
    pub fn tensor(&self) -> Tensor {
        match self {
            Slot::Param(p) => p.tensor(),
            Slot::Buffer(b) => b.tensor(),
        }
    }

    pub fn set(&self, value: Tensor) {
        match self {
            Slot::Param(p) => p.set(value),
            Slot::Buffer(b) => b.set(value),
        }
    }
}

/// Anything holding named parameters and buffers.
pub trait Module {
    /// Every parameter and buffer, with dotted path names, in a stable order.
    fn slots(&self) -> Vec<(String, Slot<'_>)>;

    fn params(&self) -> Vec<(String, &Param)> {
        self.slots()
            .into_iter()
            .filter_map(|(n, s)| match s {
                Slot::Param(p) => Some((n, p)),
                Slot::Buffer(_) => None,
            })
            .collect()
    }

    fn num_params(&self) -> usize {
        self.params().iter().map(|(_, p)| p.numel()).sum()
    }
}

/// Prefix child slot names with `name.`.
pub fn nested<'a>(name: &str, slots: Vec<(String, Slot<'a>)>) -> Vec<(String, Slot<'a>)> {
    slots.into_iter().map(|(n, s)| (format!("{name}.{n}"), s)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; `update_stats` folds them into running averages.
    Train { update_stats: bool },
    Eval,
}

pub fn gaussian(shape: &[usize], std: f64, dtype: DType, rng: &mut impl Rng) -> Tensor {
    let normal = Normal::new(0.0, std).expect("valid std");
    let n = shape.iter().product();
    Tensor::from_f64((0..n).map(|_| normal.sample(rng)).collect(), shape, dtype)
}

pub struct Conv2d {
    pub weight: Param,
    pub bias: Param,
    pub geom: ConvGeom,
}

impl Conv2d {
    pub fn new(
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        geom: ConvGeom,
        dtype: DType,
        rng: &mut impl Rng,
    ) -> Self {
        Conv2d {
            weight: Param::new(gaussian(&[out_ch, in_ch, kernel, kernel], INIT_STD, dtype, rng)),
            bias: Param::new(Tensor::zeros(&[out_ch], dtype)),
            geom,
        }
    }

    /// 3x3, stride 1, same padding.
    pub fn same3x3(in_ch: usize, out_ch: usize, dtype: DType, rng: &mut impl Rng) -> Self {
        Self::new(in_ch, out_ch, 3, ConvGeom { stride: 1, padding: 1 }, dtype, rng)
    }

    /// 4x4, stride 2, padding 1: halves both spatial dims.
    pub fn down4x4(in_ch: usize, out_ch: usize, dtype: DType, rng: &mut impl Rng) -> Self {
        Self::new(in_ch, out_ch, 4, ConvGeom { stride: 2, padding: 1 }, dtype, rng)
    }

    pub fn in_channels(&self) -> usize {
        self.weight.var().shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.var().shape()[0]
    }

    pub fn forward(&self, x: &Var) -> Var {
        let b = self.bias.var();
        let c = b.shape()[0];
        x.conv2d(&self.weight.var(), self.geom).add(&b.reshape(&[1, c, 1, 1]))
    }
}

impl Module for Conv2d {
    fn slots(&self) -> Vec<(String, Slot<'_>)> {
        vec![("weight".into(), Slot::Param(&self.weight)), ("bias".into(), Slot::Param(&self.bias))]
    }
}

pub struct Linear {
    pub weight: Param,
    pub bias: Param,
}

impl Linear {
    pub fn new(in_features: usize, out_features: usize, dtype: DType, rng: &mut impl Rng) -> Self {
        Linear {
            weight: Param::new(gaussian(&[out_features, in_features], INIT_STD, dtype, rng)),
            bias: Param::new(Tensor::zeros(&[out_features], dtype)),
        }
    }

    /// `x` is `[n, in]`; returns `[n, out]`.
    pub fn forward(&self, x: &Var) -> Var {
        let b = self.bias.var();
        let out = b.shape()[0];
        x.matmul(&self.weight.var().transpose2d()).add(&b.reshape(&[1, out]))
    }
}

impl Module for Linear {
    fn slots(&self) -> Vec<(String, Slot<'_>)> {
        vec![("weight".into(), Slot::Param(&self.weight)), ("bias".into(), Slot::Param(&self.bias))]
    }
}

fn affine(xhat: &Var, gamma: &Param, beta: &Param) -> Var {
    let c = xhat.shape()[1];
    xhat.mul(&gamma.var().reshape(&[1, c, 1, 1])).add(&beta.var().reshape(&[1, c, 1, 1]))
}

pub struct BatchNorm2d {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Buffer,
    pub running_var: Buffer,
}

impl BatchNorm2d {
    pub fn new(channels: usize, dtype: DType) -> Self {
        BatchNorm2d {
            gamma: Param::new(Tensor::ones(&[channels], dtype)),
            beta: Param::new(Tensor::zeros(&[channels], dtype)),
            running_mean: Buffer::new(Tensor::zeros(&[channels], dtype)),
            running_var: Buffer::new(Tensor::ones(&[channels], dtype)),
        }
    }

    pub fn forward(&self, x: &Var, mode: Mode) -> Var {
        let c = x.shape()[1];
        let stat_shape = [1, c, 1, 1];
        let xhat = match mode {
            Mode::Train { update_stats } => {
                let mean = x.mean_to(&stat_shape);
                let centered = x.sub(&mean);
                let var = centered.square().mean_to(&stat_shape);
                if update_stats {
                    let n = (x.value().numel() / c) as f64;
                    let unbiased = if n > 1.0 { n / (n - 1.0) } else { 1.0 };
                    let m = BN_MOMENTUM;
                    let rm = self.running_mean.tensor().mul_scalar(1.0 - m);
                    let rv = self.running_var.tensor().mul_scalar(1.0 - m);
                    self.running_mean.set(rm.add(&mean.value().reshape(&[c]).mul_scalar(m)));
                    self.running_var
                        .set(rv.add(&var.value().reshape(&[c]).mul_scalar(m * unbiased)));
                }
                centered.div(&var.add_scalar(NORM_EPS).sqrt())
            }
            Mode::Eval => {
                let mean = Var::constant(self.running_mean.tensor().reshape(&stat_shape));
                let std = self.running_var.tensor().add_scalar(NORM_EPS).unary(
                    attriforge_tensor::UnaryOp::Sqrt,
                );
                x.sub(&mean).div(&Var::constant(std.reshape(&stat_shape)))
            }
        };
        affine(&xhat, &self.gamma, &self.beta)
    }
}

impl Module for BatchNorm2d {
    fn slots(&self) -> Vec<(String, Slot<'_>)> {
        vec![
            ("gamma".into(), Slot::Param(&self.gamma)),
            ("beta".into(), Slot::Param(&self.beta)),
            ("running_mean".into(), Slot::Buffer(&self.running_mean)),
            ("running_var".into(), Slot::Buffer(&self.running_var)),
        ]
    }
}

/// Per-sample, per-channel normalization with a learnable affine; no running state.
pub struct InstanceNorm2d {
    pub gamma: Param,
    pub beta: Param,
}

impl InstanceNorm2d {
    pub fn new(channels: usize, dtype: DType) -> Self {
        InstanceNorm2d {
            gamma: Param::new(Tensor::ones(&[channels], dtype)),
            beta: Param::new(Tensor::zeros(&[channels], dtype)),
        }
    }

    pub fn forward(&self, x: &Var) -> Var {
        let stat_shape = [x.shape()[0], x.shape()[1], 1, 1];
        let mean = x.mean_to(&stat_shape);
        let centered = x.sub(&mean);
        let var = centered.square().mean_to(&stat_shape);
        affine(&centered.div(&var.add_scalar(NORM_EPS).sqrt()), &self.gamma, &self.beta)
    }
}

impl Module for InstanceNorm2d {
    fn slots(&self) -> Vec<(String, Slot<'_>)> {
        vec![("gamma".into(), Slot::Param(&self.gamma)), ("beta".into(), Slot::Param(&self.beta))]
    }
}

pub fn set_trainable(m: &dyn Module, trainable: bool) {
    for (_, p) in m.params() {
        p.set_trainable(trainable);
    }
}

/// Named tensors of a module (parameters and buffers), in slot order.
pub fn state_dict(m: &dyn Module) -> Vec<(String, Tensor)> {
    m.slots().into_iter().map(|(n, s)| (n, s.tensor())).collect()
}

/// Overwrite every slot from `entries`; names and shapes must match exactly.
pub fn load_state_dict(m: &dyn Module, entries: &[(String, Tensor)]) -> Result<(), String> {
    let slots = m.slots();
    if slots.len() != entries.len() {
        return Err(format!("expected {} tensors, found {}", slots.len(), entries.len()));
    }
    for ((name, slot), (ename, t)) in slots.iter().zip(entries) {
        if name != ename {
            return Err(format!("tensor name mismatch: expected `{name}`, found `{ename}`"));
        }
        let current = slot.tensor();
        if current.shape() != t.shape() || current.dtype() != t.dtype() {
            return Err(format!(
                "tensor `{name}`: expected {:?} {}, found {:?} {}",
                current.shape(),
                current.dtype(),
                t.shape(),
                t.dtype()
            ));
        }
    }
    for ((_, slot), (_, t)) in slots.iter().zip(entries) {
        slot.set(t.clone());
    }
    Ok(())
}
