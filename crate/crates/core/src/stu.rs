//! Selective Transfer Unit: a convolutional GRU variant sitting on a skip connection.
//!
//! One cell receives the encoder feature map of its level and the hidden state of the
//! next-deeper cell. The hidden state is first upsampled and conditioned on the target
//! attribute, then gated:
//!
//! ```text
//! s_hat = W_t * up([s_prev, att])
//! u     = sigmoid(W_u * [f_enc, s_hat])
//! r     = sigmoid(W_r * [f_enc, s_hat])
//! s     = r . s_hat
//! f_hat = tanh(W_h * [f_enc, s])
//! f_t   = (1 - u) . s_hat + u . f_hat
//! ```

use attriforge_tensor::{DType, Tensor, Var};
use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{nested, Conv2d, Module, Slot};

/// Target or source rating of a perceptual attribute, always in `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub struct AttributeValue(f64);

impl AttributeValue {
    pub fn new(value: f64) -> Result<Self> {
        if (0.0..=1.0).contains(&value) {
            Ok(AttributeValue(value))
        } else {
            Err(Error::Domain(format!("attribute value {value} is outside [0, 1]")))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for AttributeValue {
    type Error = Error;

    fn try_from(value: f64) -> Result<Self> {
        AttributeValue::new(value)
    }
}

/// Batch of attribute values as a `[n]` graph node.
pub fn attribute_var(values: &[AttributeValue], dtype: DType) -> Var {
    let data = values.iter().map(|a| a.get()).collect();
    Var::constant(Tensor::from_f64(data, &[values.len()], dtype))
}

/// Encoder or edited feature map of one skip level, `[n, c, h, w]`.
#[derive(Clone, Debug)]
pub struct FeatureMap {
    pub data: Var,
    pub layer_index: usize,
}

/// Inter-cell state, `[n, c, h, w]`.
#[derive(Clone, Debug)]
pub struct HiddenState {
    pub data: Var,
    pub layer_index: usize,
}

/// Weights of one cell: attribute injection, update gate, reset gate, candidate map.
pub struct StuCellParams {
    pub inject: Conv2d,
    pub update: Conv2d,
    pub reset: Conv2d,
    pub candidate: Conv2d,
}

impl StuCellParams {
    /// `hidden_in` channels arrive from the deeper cell; `channels` matches the encoder
    /// feature map of this level (and is also the hidden width leaving this cell).
    pub fn new(hidden_in: usize, channels: usize, dtype: DType, rng: &mut impl Rng) -> Self {
        StuCellParams {
            inject: Conv2d::same3x3(hidden_in + 1, channels, dtype, rng),
            update: Conv2d::same3x3(2 * channels, channels, dtype, rng),
            reset: Conv2d::same3x3(2 * channels, channels, dtype, rng),
            candidate: Conv2d::same3x3(2 * channels, channels, dtype, rng),
        }
    }

    pub fn channels(&self) -> usize {
        self.inject.out_channels()
    }

    pub fn hidden_in(&self) -> usize {
        self.inject.in_channels() - 1
    }
}

impl Module for StuCellParams {
    fn slots(&self) -> Vec<(String, Slot<'_>)> {
        let mut v = nested("inject", self.inject.slots());
        v.extend(nested("update", self.update.slots()));
        v.extend(nested("reset", self.reset.slots()));
        v.extend(nested("candidate", self.candidate.slots()));
        v
    }
}

/// Intermediate tensors of one cell evaluation.
#[derive(Clone, Debug)]
pub struct StuTrace {
    pub update_gate: Var,
    pub reset_gate: Var,
    pub candidate: Var,
}

#[derive(Clone, Debug)]
pub struct StuOutput {
    pub edited: FeatureMap,
    pub hidden: HiddenState,
    pub trace: StuTrace,
}

/// Tile `[n]` attribute values into a `[n, 1, h, w]` constant-per-sample channel.
pub fn tile_attribute(att: &Var, h: usize, w: usize) -> Var {
    let n = att.shape()[0];
    att.reshape(&[n, 1, 1, 1]).broadcast_to(&[n, 1, h, w])
}

/// Upsample `s_prev` x2, append the tiled attribute channel and convolve with `W_t`.
///
/// The result belongs to the level one shallower than `s_prev`.
pub fn inject_attribute(s_prev: &HiddenState, att: &Var, params: &StuCellParams) -> Result<HiddenState> {
    let shape = s_prev.data.shape();
    if shape.len() != 4 {
        return Err(Error::Config(format!("hidden state must be [n,c,h,w], got {shape:?}")));
    }
    if shape[1] != params.hidden_in() {
        return Err(Error::Config(format!(
            "hidden state has {} channels but the injection kernel expects {}",
            shape[1],
            params.hidden_in()
        )));
    }
    if att.shape() != [shape[0]] {
        return Err(Error::Config(format!(
            "expected {} attribute values, got shape {:?}",
            shape[0],
            att.shape()
        )));
    }
    let up = s_prev.data.upsample_nearest2x();
    let (h, w) = (up.shape()[2], up.shape()[3]);
    let joined = Var::cat(&[&up, &tile_attribute(att, h, w)], 1);
    Ok(HiddenState {
        data: params.inject.forward(&joined),
        layer_index: s_prev.layer_index.saturating_sub(1),
    })
}

fn ensure_finite(v: &Var, what: &str, layer: usize) -> Result<()> {
    if v.value().is_finite() {
        Ok(())
    } else {
        Err(Error::Numeric { what: what.to_string(), layer })
    }
}

/// Gate the encoder feature map against the attribute-injected hidden state.
pub fn stu_forward(f_enc: &FeatureMap, s_hat: &HiddenState, params: &StuCellParams) -> Result<StuOutput> {
    let (fs, ss) = (f_enc.data.shape(), s_hat.data.shape());
    if fs.len() != 4 || ss.len() != 4 || fs[0] != ss[0] || fs[2..] != ss[2..] {
        return Err(Error::Config(format!(
            "feature map {fs:?} and hidden state {ss:?} must share batch and spatial dims"
        )));
    }
    if fs[1] != params.channels() || ss[1] != params.channels() {
        return Err(Error::Config(format!(
            "cell expects {} channels, got feature map {} and hidden state {}",
            params.channels(),
            fs[1],
            ss[1]
        )));
    }
    let layer = f_enc.layer_index;
    let joined = Var::cat(&[&f_enc.data, &s_hat.data], 1);
    let u = params.update.forward(&joined).sigmoid();
    let r = params.reset.forward(&joined).sigmoid();
    let s = r.mul(&s_hat.data);
    let f_hat = params.candidate.forward(&Var::cat(&[&f_enc.data, &s], 1)).tanh();
    let f_t = u.rsub_scalar(1.0).mul(&s_hat.data).add(&u.mul(&f_hat));
    ensure_finite(&u, "update gate", layer)?;
    ensure_finite(&r, "reset gate", layer)?;
    ensure_finite(&f_hat, "candidate map", layer)?;
    ensure_finite(&f_t, "edited feature map", layer)?;
    Ok(StuOutput {
        edited: FeatureMap { data: f_t, layer_index: layer },
        hidden: HiddenState { data: s, layer_index: layer },
        trace: StuTrace { update_gate: u, reset_gate: r, candidate: f_hat },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gaussian;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn hidden(shape: &[usize], seed: u64) -> HiddenState {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        HiddenState { data: Var::constant(gaussian(shape, 1.0, DType::F64, &mut rng)), layer_index: 5 }
    }

    #[test]
    fn injection_doubles_spatial_dims() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = StuCellParams::new(64, 64, DType::F32, &mut rng);
        let s = HiddenState {
            data: Var::constant(gaussian(&[1, 64, 8, 8], 1.0, DType::F32, &mut rng)),
            layer_index: 5,
        };
        let att = attribute_var(&[AttributeValue::new(0.5).unwrap()], DType::F32);
        let out = inject_attribute(&s, &att, &p).unwrap();
        assert_eq!(out.data.shape(), &[1, 64, 16, 16]);
        assert_eq!(out.layer_index, 4);
    }

    #[test]
    fn severed_attribute_weights_ignore_attribute() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = StuCellParams::new(4, 3, DType::F64, &mut rng);
        let w = p.inject.weight.tensor();
        let mut data = w.to_vec_f64();
        let (co, ci) = (w.shape()[0], w.shape()[1]);
        for o in 0..co {
            for k in 0..9 {
                data[(o * ci + ci - 1) * 9 + k] = 0.0;
            }
        }
        p.inject.weight.set(Tensor::from_vec(data, w.shape()));
        let s = hidden(&[1, 4, 2, 2], 3);
        let lo = attribute_var(&[AttributeValue::new(0.0).unwrap()], DType::F64);
        let hi = attribute_var(&[AttributeValue::new(1.0).unwrap()], DType::F64);
        let a = inject_attribute(&s, &lo, &p).unwrap();
        let b = inject_attribute(&s, &hi, &p).unwrap();
        assert!(a.data.value().bit_eq(b.data.value()));
    }

    #[test]
    fn channel_mismatch_is_a_configuration_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = StuCellParams::new(4, 3, DType::F64, &mut rng);
        let s = hidden(&[1, 5, 2, 2], 5);
        let att = attribute_var(&[AttributeValue::new(0.3).unwrap()], DType::F64);
        assert!(matches!(inject_attribute(&s, &att, &p), Err(Error::Config(_))));
    }

    #[test]
    fn attribute_range_is_enforced() {
        assert!(AttributeValue::new(-0.01).is_err());
        assert!(AttributeValue::new(1.5).is_err());
        assert!(AttributeValue::new(f64::NAN).is_err());
        assert_eq!(AttributeValue::new(1.0).unwrap().get(), 1.0);
    }

    #[test]
    fn non_finite_input_reports_layer() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let p = StuCellParams::new(3, 3, DType::F64, &mut rng);
        let mut bad = vec![0.0; 3 * 4];
        bad[0] = f64::NAN;
        let f = FeatureMap { data: Var::constant(Tensor::from_vec(bad, &[1, 3, 2, 2])), layer_index: 2 };
        let s = hidden(&[1, 3, 2, 2], 7);
        match stu_forward(&f, &s, &p) {
            Err(Error::Numeric { layer, .. }) => assert_eq!(layer, 2),
            other => panic!("expected numeric error, got {other:?}"),
        }
    }
}
