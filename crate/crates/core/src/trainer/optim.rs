//! Adam with bias correction.

use attriforge_tensor::{DType, Element, Gradients, Tensor};

use crate::error::{Error, Result};
use crate::nn::Param;

pub const ADAM_EPS: f64 = 1e-8;

pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Completed update count.
    pub t: u64,
    names: Vec<String>,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

fn update<T: Element>(
    p: &[T],
    g: &[T],
    m: &[T],
    v: &[T],
    k: [f64; 5],
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let [b1, b2, step, c2, eps] = k;
    let (b1, b2, step, c2, eps) = (T::from_f64(b1), T::from_f64(b2), T::from_f64(step), T::from_f64(c2), T::from_f64(eps));
    let one = T::one();
    let mut np = Vec::with_capacity(p.len());
    let mut nm = Vec::with_capacity(p.len());
    let mut nv = Vec::with_capacity(p.len());
    for i in 0..p.len() {
        let mi = b1 * m[i] + (one - b1) * g[i];
        let vi = b2 * v[i] + (one - b2) * g[i] * g[i];
        np.push(p[i] - step * mi / ((vi / c2).sqrt() + eps));
        nm.push(mi);
        nv.push(vi);
    }
    (np, nm, nv)
}

impl Adam {
    pub fn new(lr: f64, beta1: f64, beta2: f64, params: &[(String, &Param)]) -> Self {
        Adam {
            lr,
            beta1,
            beta2,
            eps: ADAM_EPS,
            t: 0,
            names: params.iter().map(|(n, _)| n.clone()).collect(),
            m: params.iter().map(|(_, p)| p.tensor().zeros_like()).collect(),
            v: params.iter().map(|(_, p)| p.tensor().zeros_like()).collect(),
        }
    }

    /// One update of every parameter that received a gradient.
    pub fn step(&mut self, params: &[(String, &Param)], grads: &Gradients) -> Result<()> {
        if params.len() != self.names.len() {
            return Err(Error::Config("optimizer and parameter list disagree".into()));
        }
        self.t += 1;
        let t = self.t as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let k = [self.beta1, self.beta2, self.lr / c1, c2, self.eps];
        for (i, (_, p)) in params.iter().enumerate() {
            let var = p.var();
            let Some(g) = grads.get(&var) else { continue };
            let value = var.value();
            let shape = value.shape().to_vec();
            let (np, nm, nv) = match value.dtype() {
                DType::F32 => {
                    let (a, b, c) = update::<f32>(
                        value.as_slice().unwrap(),
                        g.as_slice().unwrap(),
                        self.m[i].as_slice().unwrap(),
                        self.v[i].as_slice().unwrap(),
                        k,
                    );
                    (Tensor::from_vec(a, &shape), Tensor::from_vec(b, &shape), Tensor::from_vec(c, &shape))
                }
                DType::F64 => {
                    let (a, b, c) = update::<f64>(
                        value.as_slice().unwrap(),
                        g.as_slice().unwrap(),
                        self.m[i].as_slice().unwrap(),
                        self.v[i].as_slice().unwrap(),
                        k,
                    );
                    (Tensor::from_vec(a, &shape), Tensor::from_vec(b, &shape), Tensor::from_vec(c, &shape))
                }
            };
            p.set(np);
            self.m[i] = nm;
            self.v[i] = nv;
        }
        Ok(())
    }

    /// Moment buffers as named tensors: `m.<param>` then `v.<param>`.
    pub fn state(&self) -> Vec<(String, Tensor)> {
        let m = self.names.iter().zip(&self.m).map(|(n, t)| (format!("m.{n}"), t.clone()));
        let v = self.names.iter().zip(&self.v).map(|(n, t)| (format!("v.{n}"), t.clone()));
        m.chain(v).collect()
    }

    pub fn load_state(&mut self, entries: &[(String, Tensor)], t: u64) -> Result<()> {
        let n = self.names.len();
        if entries.len() != 2 * n {
            return Err(Error::Config(format!("expected {} moment tensors, found {}", 2 * n, entries.len())));
        }
        for (i, name) in self.names.iter().enumerate() {
            for (bank, prefix, buf) in [(0, "m", &self.m[i]), (1, "v", &self.v[i])] {
                let (en, et) = &entries[bank * n + i];
                if *en != format!("{prefix}.{name}") || et.shape() != buf.shape() || et.dtype() != buf.dtype() {
                    return Err(Error::Config(format!("moment tensor `{en}` does not match `{prefix}.{name}`")));
                }
            }
        }
        for i in 0..n {
            self.m[i] = entries[i].1.clone();
            self.v[i] = entries[n + i].1.clone();
        }
        self.t = t;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use attriforge_tensor::{backward, Var};

    #[test]
    fn first_step_moves_by_lr_against_the_gradient_sign() {
        let p = Param::new(Tensor::from_vec(vec![1.0f64, -2.0, 0.5], &[3]));
        let params = vec![("w".to_string(), &p)];
        let mut opt = Adam::new(0.1, 0.5, 0.999, &params);
        let coef = Var::constant(Tensor::from_vec(vec![3.0f64, -1.0, 0.0], &[3]));
        let g = backward(&p.var().mul(&coef).sum());
        opt.step(&params, &g).unwrap();
        let v = p.tensor().to_vec_f64();
        // Bias-corrected first step is lr * g / (|g| + eps).
        assert!((v[0] - 0.9).abs() < 1e-6);
        assert!((v[1] + 1.9).abs() < 1e-6);
        assert_eq!(v[2], 0.5);
        assert_eq!(opt.t, 1);
    }

    #[test]
    fn minimises_a_quadratic() {
        let p = Param::new(Tensor::from_vec(vec![3.0f64, -4.0], &[2]));
        let params = vec![("w".to_string(), &p)];
        let mut opt = Adam::new(0.05, 0.9, 0.999, &params);
        for _ in 0..2000 {
            let g = backward(&p.var().square().sum());
            opt.step(&params, &g).unwrap();
        }
        assert!(p.tensor().max_abs() < 1e-2, "{:?}", p.tensor().to_vec_f64());
    }

    #[test]
    fn state_round_trips() {
        let p = Param::new(Tensor::from_vec(vec![1.0f32, 2.0], &[2]));
        let params = vec![("w".to_string(), &p)];
        let mut a = Adam::new(0.1, 0.5, 0.999, &params);
        a.step(&params, &backward(&p.var().square().sum())).unwrap();
        let mut b = Adam::new(0.1, 0.5, 0.999, &params);
        b.load_state(&a.state(), a.t).unwrap();
        assert_eq!(b.t, 1);
        for ((n1, t1), (n2, t2)) in a.state().iter().zip(b.state().iter()) {
            assert_eq!(n1, n2);
            assert!(t1.bit_eq(t2));
        }
        assert!(b.load_state(&a.state()[..1], 1).is_err());
    }
}
