//! One selective transfer unit on random maps: gate statistics at two attribute values.
//!
//! cargo run --release --example stu_cell
use attriforge::nn::gaussian;
use attriforge::stu::{attribute_var, inject_attribute, stu_forward};
use attriforge::tensor::{DType, Var};
use attriforge::{AttributeValue, FeatureMap, HiddenState, StuCellParams};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn mean(v: &Var) -> f64 {
    let x = v.value().to_vec_f64();
    x.iter().sum::<f64>() / x.len() as f64
}

fn main() -> attriforge::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let cell = StuCellParams::new(16, 8, DType::F32, &mut rng);
    let f = FeatureMap { data: Var::constant(gaussian(&[1, 8, 16, 16], 1.0, DType::F32, &mut rng)), layer_index: 2 };
    let s = HiddenState { data: Var::constant(gaussian(&[1, 16, 8, 8], 1.0, DType::F32, &mut rng)), layer_index: 3 };
    for a in [0.0, 1.0] {
        let att = attribute_var(&[AttributeValue::new(a)?], DType::F32);
        let s_hat = inject_attribute(&s, &att, &cell)?;
        let out = stu_forward(&f, &s_hat, &cell)?;
        println!(
            "att {a}: mean update gate {:.4}, mean reset gate {:.4}, edited {:?}, hidden {:?}",
            mean(&out.trace.update_gate),
            mean(&out.trace.reset_gate),
            out.edited.data.shape(),
            out.hidden.data.shape()
        );
    }
    Ok(())
}
