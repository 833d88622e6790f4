//! Differentiable operations on [`Var`].

use crate::conv::{self, ConvGeom};
use crate::tensor::{BinaryOp, Tensor, UnaryOp};
use crate::var::{is_grad_enabled, Var};

/// Result shape of numpy-style broadcasting.
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Vec<usize> {
    let rank = a.len().max(b.len());
    let pad = |s: &[usize]| {
        let mut v = vec![1; rank - s.len()];
        v.extend_from_slice(s);
        v
    };
    let (a, b) = (pad(a), pad(b));
    a.iter()
        .zip(&b)
        .map(|(&x, &y)| {
            assert!(x == y || x == 1 || y == 1, "shapes {a:?} and {b:?} do not broadcast");
            x.max(y)
        })
        .collect()
}

/// Value saved for a backward rule: a live graph node when building higher-order graphs,
/// otherwise a cheap constant of the forward value.
fn saved(recompute: impl FnOnce() -> Var, value: &Tensor) -> Var {
    if is_grad_enabled() {
        recompute()
    } else {
        Var::constant(value.clone())
    }
}

impl Var {
    fn unary_const_deriv(&self, op: UnaryOp, deriv: UnaryOp, name: &'static str) -> Var {
        Var::from_op(self.value().unary(op), name, vec![self.clone()], move |a| {
            let d = Var::constant(a.parents[0].value().unary(deriv));
            vec![Some(a.grad.mul(&d))]
        })
    }

    fn binary_same(&self, other: &Var, op: BinaryOp) -> Var {
        let value = self.value().binary(other.value(), op);
        let name = match op {
            BinaryOp::Add => "add",
            BinaryOp::Sub => "sub",
            BinaryOp::Mul => "mul",
            BinaryOp::Div => "div",
        };
        Var::from_op(value, name, vec![self.clone(), other.clone()], move |a| {
            let (x, y, g) = (&a.parents[0], &a.parents[1], a.grad);
            match op {
                BinaryOp::Add => vec![Some(g.clone()), Some(g.clone())],
                BinaryOp::Sub => vec![Some(g.clone()), Some(g.neg())],
                BinaryOp::Mul => vec![Some(g.mul(y)), Some(g.mul(x))],
                BinaryOp::Div => {
                    let gx = g.div(y);
                    let gy = gx.mul(x).div(y).neg();
                    vec![Some(gx), Some(gy)]
                }
            }
        })
    }

    fn binary(&self, other: &Var, op: BinaryOp) -> Var {
        if self.shape() == other.shape() {
            return self.binary_same(other, op);
        }
        let shape = broadcast_shape(self.shape(), other.shape());
        self.broadcast_to(&shape).binary_same(&other.broadcast_to(&shape), op)
    }

    pub fn add(&self, other: &Var) -> Var {
        self.binary(other, BinaryOp::Add)
    }

    pub fn sub(&self, other: &Var) -> Var {
        self.binary(other, BinaryOp::Sub)
    }

    pub fn mul(&self, other: &Var) -> Var {
        self.binary(other, BinaryOp::Mul)
    }

    pub fn div(&self, other: &Var) -> Var {
        self.binary(other, BinaryOp::Div)
    }

    pub fn neg(&self) -> Var {
        self.mul_scalar(-1.0)
    }

    pub fn add_scalar(&self, c: f64) -> Var {
        Var::from_op(self.value().add_scalar(c), "add_scalar", vec![self.clone()], |a| {
            vec![Some(a.grad.clone())]
        })
    }

    pub fn mul_scalar(&self, c: f64) -> Var {
        Var::from_op(self.value().mul_scalar(c), "mul_scalar", vec![self.clone()], move |a| {
            vec![Some(a.grad.mul_scalar(c))]
        })
    }

    /// `c - self`
    pub fn rsub_scalar(&self, c: f64) -> Var {
        self.neg().add_scalar(c)
    }

    pub fn square(&self) -> Var {
        self.mul(self)
    }

    pub fn abs(&self) -> Var {
        self.unary_const_deriv(UnaryOp::Abs, UnaryOp::Sign, "abs")
    }

    pub fn relu(&self) -> Var {
        self.unary_const_deriv(UnaryOp::Relu, UnaryOp::Step, "relu")
    }

    pub fn leaky_relu(&self, slope: f64) -> Var {
        self.unary_const_deriv(UnaryOp::LeakyRelu(slope), UnaryOp::LeakySlope(slope), "leaky_relu")
    }

    pub fn sigmoid(&self) -> Var {
        Var::from_op(self.value().unary(UnaryOp::Sigmoid), "sigmoid", vec![self.clone()], |a| {
            let y = saved(|| a.parents[0].sigmoid(), a.output);
            vec![Some(a.grad.mul(&y.mul(&y.rsub_scalar(1.0))))]
        })
    }

    pub fn tanh(&self) -> Var {
        Var::from_op(self.value().unary(UnaryOp::Tanh), "tanh", vec![self.clone()], |a| {
            let y = saved(|| a.parents[0].tanh(), a.output);
            vec![Some(a.grad.mul(&y.square().rsub_scalar(1.0)))]
        })
    }

    pub fn exp(&self) -> Var {
        Var::from_op(self.value().unary(UnaryOp::Exp), "exp", vec![self.clone()], |a| {
            let y = saved(|| a.parents[0].exp(), a.output);
            vec![Some(a.grad.mul(&y))]
        })
    }

    /// Elementwise `1/x`, defined as 0 where `x == 0`.
    pub fn recip_or_zero(&self) -> Var {
        Var::from_op(self.value().unary(UnaryOp::RecipOrZero), "recip", vec![self.clone()], |a| {
            let r = saved(|| a.parents[0].recip_or_zero(), a.output);
            vec![Some(a.grad.mul(&r.square()).neg())]
        })
    }

    /// Square root; its derivative is taken as 0 at exactly 0.
    pub fn sqrt(&self) -> Var {
        Var::from_op(self.value().unary(UnaryOp::Sqrt), "sqrt", vec![self.clone()], |a| {
            let y = saved(|| a.parents[0].sqrt(), a.output);
            vec![Some(a.grad.mul(&y.mul_scalar(2.0).recip_or_zero()))]
        })
    }

    pub fn reshape(&self, shape: &[usize]) -> Var {
        let orig = self.shape().to_vec();
        Var::from_op(self.value().reshape(shape), "reshape", vec![self.clone()], move |a| {
            vec![Some(a.grad.reshape(&orig))]
        })
    }

    pub fn broadcast_to(&self, shape: &[usize]) -> Var {
        if self.shape() == shape {
            return self.clone();
        }
        let orig = self.shape().to_vec();
        Var::from_op(self.value().broadcast_to(shape), "broadcast_to", vec![self.clone()], move |a| {
            vec![Some(a.grad.sum_to(&orig))]
        })
    }

    /// Sum over axes so the result has `shape` (which must broadcast to `self`).
    pub fn sum_to(&self, shape: &[usize]) -> Var {
        if self.shape() == shape {
            return self.clone();
        }
        let orig = self.shape().to_vec();
        Var::from_op(self.value().sum_to(shape), "sum_to", vec![self.clone()], move |a| {
            vec![Some(a.grad.broadcast_to(&orig))]
        })
    }

    pub fn sum(&self) -> Var {
        self.sum_to(&[])
    }

    pub fn mean(&self) -> Var {
        let n = self.value().numel();
        self.sum().mul_scalar(1.0 / n as f64)
    }

    /// Mean over the axes collapsed when reducing to `shape`.
    pub fn mean_to(&self, shape: &[usize]) -> Var {
        let ratio = self.value().numel() / crate::tensor::numel(shape);
        self.sum_to(shape).mul_scalar(1.0 / ratio as f64)
    }

    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Var {
        let full = self.shape()[axis];
        Var::from_op(self.value().narrow(axis, start, len), "narrow", vec![self.clone()], move |a| {
            vec![Some(a.grad.pad_axis(axis, start, full))]
        })
    }

    pub fn pad_axis(&self, axis: usize, start: usize, full_len: usize) -> Var {
        let len = self.shape()[axis];
        let value = self.value().pad_axis(axis, start, full_len);
        Var::from_op(value, "pad_axis", vec![self.clone()], move |a| {
            vec![Some(a.grad.narrow(axis, start, len))]
        })
    }

    pub fn cat(parts: &[&Var], axis: usize) -> Var {
        let values: Vec<&Tensor> = parts.iter().map(|p| p.value()).collect();
        let value = Tensor::cat(&values, axis);
        let lens: Vec<usize> = parts.iter().map(|p| p.shape()[axis]).collect();
        let parents = parts.iter().map(|&p| p.clone()).collect();
        Var::from_op(value, "cat", parents, move |a| {
            let mut start = 0;
            lens.iter()
                .map(|&len| {
                    let g = a.grad.narrow(axis, start, len);
                    start += len;
                    Some(g)
                })
                .collect()
        })
    }

    pub fn transpose2d(&self) -> Var {
        Var::from_op(self.value().transpose2d(), "transpose", vec![self.clone()], |a| {
            vec![Some(a.grad.transpose2d())]
        })
    }

    pub fn matmul(&self, other: &Var) -> Var {
        let value = self.value().matmul(other.value());
        Var::from_op(value, "matmul", vec![self.clone(), other.clone()], |a| {
            let (x, y, g) = (&a.parents[0], &a.parents[1], a.grad);
            vec![
                x.requires_grad().then(|| g.matmul(&y.transpose2d())),
                y.requires_grad().then(|| x.transpose2d().matmul(g)),
            ]
        })
    }

    /// Cross-correlation with weight `[out, in, kh, kw]` (no bias).
    pub fn conv2d(&self, weight: &Var, geom: ConvGeom) -> Var {
        let value = conv::conv2d(self.value(), weight.value(), geom);
        Var::from_op(value, "conv2d", vec![self.clone(), weight.clone()], move |a| {
            let (x, w, g) = (&a.parents[0], &a.parents[1], a.grad);
            vec![
                x.requires_grad().then(|| conv_input_grad(g, w, x.shape(), geom)),
                w.requires_grad().then(|| conv_weight_grad(x, g, w.shape(), geom)),
            ]
        })
    }

    pub fn upsample_nearest2x(&self) -> Var {
        let value = conv::upsample_nearest2x(self.value());
        Var::from_op(value, "upsample_nearest2x", vec![self.clone()], |a| {
            vec![Some(a.grad.sum_pool2x())]
        })
    }

    pub fn sum_pool2x(&self) -> Var {
        Var::from_op(conv::sum_pool2x(self.value()), "sum_pool2x", vec![self.clone()], |a| {
            vec![Some(a.grad.upsample_nearest2x())]
        })
    }
}

/// Input gradient of a convolution as a graph operation (it appears only in backward graphs).
pub fn conv_input_grad(gy: &Var, w: &Var, x_shape: &[usize], geom: ConvGeom) -> Var {
    let value = conv::conv2d_input_grad(gy.value(), w.value(), x_shape, geom);
    Var::from_op(value, "conv2d_input_grad", vec![gy.clone(), w.clone()], move |a| {
        let (gy, w, gg) = (&a.parents[0], &a.parents[1], a.grad);
        vec![
            gy.requires_grad().then(|| gg.conv2d(w, geom)),
            w.requires_grad().then(|| conv_weight_grad(gg, gy, w.shape(), geom)),
        ]
    })
}

/// Weight gradient of a convolution as a graph operation.
pub fn conv_weight_grad(x: &Var, gy: &Var, w_shape: &[usize], geom: ConvGeom) -> Var {
    let value = conv::conv2d_weight_grad(x.value(), gy.value(), w_shape, geom);
    Var::from_op(value, "conv2d_weight_grad", vec![x.clone(), gy.clone()], move |a| {
        let (x, gy, gg) = (&a.parents[0], &a.parents[1], a.grad);
        vec![
            x.requires_grad().then(|| conv_input_grad(gy, gg, x.shape(), geom)),
            gy.requires_grad().then(|| x.conv2d(gg, geom)),
        ]
    })
}

macro_rules! impl_binop {
    ($tr:ident, $method:ident, $call:ident) => {
        impl std::ops::$tr<&Var> for &Var {
            type Output = Var;
            fn $method(self, rhs: &Var) -> Var {
                self.$call(rhs)
            }
        }
        impl std::ops::$tr<Var> for Var {
            type Output = Var;
            fn $method(self, rhs: Var) -> Var {
                (&self).$call(&rhs)
            }
        }
        impl std::ops::$tr<f64> for &Var {
            type Output = Var;
            fn $method(self, rhs: f64) -> Var {
                let c = Var::constant(Tensor::scalar(rhs, self.dtype()));
                self.$call(&c)
            }
        }
    };
}

impl_binop!(Add, add, add);
impl_binop!(Sub, sub, sub);
impl_binop!(Mul, mul, mul);
impl_binop!(Div, div, div);

impl std::ops::Neg for &Var {
    type Output = Var;
    fn neg(self) -> Var {
        Var::neg(self)
    }
}
