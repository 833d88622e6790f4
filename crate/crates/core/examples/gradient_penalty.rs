//! Gradient penalty of linear critics, where it has a closed form `lambda1 (||w|| - 1)^2`.
//!
//! cargo run --release --example gradient_penalty
use attriforge::losses::{gradient_penalty, InterpolatedSample};
use attriforge::tensor::{Tensor, Var};

fn main() -> attriforge::Result<()> {
    let real = Tensor::from_vec(vec![0.2, -0.4, 0.9, 0.1], &[2, 2]);
    let fake = Tensor::from_vec(vec![-0.5, 0.3, 0.0, 0.7], &[2, 2]);
    let sample = InterpolatedSample::new(&real, &fake, &[0.3, 0.8])?;
    for w in [[0.6f64, 0.8], [2.0, 2.0], [0.0, 0.5]] {
        let wv = Var::constant(Tensor::from_vec(w.to_vec(), &[2, 1]));
        let gp = gradient_penalty(|x| Ok(x.matmul(&wv).reshape(&[2])), &sample, 10.0)?.item();
        let norm = (w[0] * w[0] + w[1] * w[1]).sqrt();
        println!("w = {w:?}: penalty {gp:.6}, closed form {:.6}", 10.0 * (norm - 1.0).powi(2));
    }
    Ok(())
}
