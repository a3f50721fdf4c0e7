use std::collections::BTreeMap;

use crate::error::{contract, Error, Result};
use crate::tensor::{Param, Tensor};

/// First and second moments of one parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments {
    pub m: Tensor<f32>,
    pub v: Tensor<f32>,
}

/// Adam with decoupled weight decay.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Apply weight decay to 1-D parameters (norm gains, biases) too.
    pub decay_1d: bool,
    pub step: u64,
    pub state: BTreeMap<String, Moments>,
}

impl Default for AdamW {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            decay_1d: false,
            step: 0,
            state: BTreeMap::new(),
        }
    }
}

pub fn global_norm<'a>(grads: impl IntoIterator<Item = &'a [f32]>) -> f64 {
    grads
        .into_iter()
        .flatten()
        .map(|&g| (g as f64) * (g as f64))
        .sum::<f64>()
        .sqrt()
}

/// Rescale so the global L2 norm is at most `max_norm`; returns the factor applied.
pub fn clip_grad_norm(grads: &mut [Vec<f32>], max_norm: f64) -> f64 {
    let norm = global_norm(grads.iter().map(Vec::as_slice));
    if norm <= max_norm || norm == 0.0 {
        return 1.0;
    }
    let scale = max_norm / norm;
    for g in grads.iter_mut().flatten() {
        *g = (*g as f64 * scale) as f32;
    }
    scale
}

impl AdamW {
    /// One update of every named parameter; refuses to touch anything if a
    /// gradient is non-finite.
    pub fn step(&mut self, params: &mut [(String, &mut Param<f32>)], grads: &[Vec<f32>], lr: f64, wd: f64) -> Result<()> {
        if params.len() != grads.len() {
            return Err(contract(format!("{} parameters but {} gradients", params.len(), grads.len())));
        }
        for ((name, p), g) in params.iter().zip(grads) {
            if g.len() != p.value.len() {
                return Err(contract(format!("{name}: gradient has {} values, parameter {}", g.len(), p.value.len())));
            }
            if let Some(i) = g.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    step: self.step,
                    what: format!("gradient of {name} at element {i}"),
                    last_checkpoint: None,
                });
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for ((name, p), g) in params.iter_mut().zip(grads) {
            let st = self.state.entry(name.clone()).or_insert_with(|| Moments {
                m: Tensor::zeros(p.value.shape().to_vec()),
                v: Tensor::zeros(p.value.shape().to_vec()),
            });
            let decay = if p.value.ndim() > 1 || self.decay_1d { wd } else { 0.0 };
            let shrink = (1.0 - lr * decay) as f32;
            let data = p.value.data_mut();
            if decay != 0.0 {
                data.iter_mut().for_each(|x| *x *= shrink);
            }
            let (m, v) = (st.m.data_mut(), st.v.data_mut());
            for i in 0..data.len() {
                let gi = g[i] as f64;
                let mi = self.beta1 * m[i] as f64 + (1.0 - self.beta1) * gi;
                let vi = self.beta2 * v[i] as f64 + (1.0 - self.beta2) * gi * gi;
                m[i] = mi as f32;
                v[i] = vi as f32;
                data[i] -= (lr * (mi / bc1) / ((vi / bc2).sqrt() + self.eps)) as f32;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f32) -> Param<f32> {
        Param::new(Tensor::new([1, 1], vec![v]).unwrap())
    }

    #[test]
    fn zero_grad_no_decay_is_identity() {
        let mut p = scalar(0.7);
        let mut opt = AdamW::default();
        opt.step(&mut [("p".into(), &mut p)], &[vec![0.0]], 1e-3, 0.0).unwrap();
        assert_eq!(p.value.item(), 0.7);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = scalar(0.0);
        let mut opt = AdamW::default();
        opt.step(&mut [("p".into(), &mut p)], &[vec![1.0]], 1e-3, 0.0).unwrap();
        let expect = -1e-3 / (1.0 + 1e-8);
        assert!((p.value.item() as f64 - expect).abs() < 1e-9);
    }

    #[test]
    fn decay_is_decoupled_multiplicative_shrink() {
        let (lr, wd) = (1e-2, 0.4);
        for v in [0.7f32, -3.25, 1e-3] {
            let mut p = scalar(v);
            let mut opt = AdamW::default();
            opt.step(&mut [("p".into(), &mut p)], &[vec![0.0]], lr, wd).unwrap();
            assert_eq!(p.value.item().to_bits(), (v * (1.0 - lr * wd) as f32).to_bits());
        }
        // 1-D parameters are exempt by default
        let mut b = Param::new(Tensor::new([1], vec![0.5f32]).unwrap());
        AdamW::default().step(&mut [("b".into(), &mut b)], &[vec![0.0]], lr, wd).unwrap();
        assert_eq!(b.value.item(), 0.5);
    }

    #[test]
    fn nan_gradient_aborts_without_update() {
        let mut p = scalar(1.0);
        let mut opt = AdamW::default();
        let err = opt.step(&mut [("p".into(), &mut p)], &[vec![f32::NAN]], 1e-3, 0.1).unwrap_err();
        assert!(matches!(err, Error::NonFinite { .. }));
        assert_eq!(p.value.item(), 1.0);
        assert_eq!(opt.step, 0);
    }

    #[test]
    fn clipping() {
        let mut g = vec![vec![3.0f32], vec![4.0]];
        assert_eq!(clip_grad_norm(&mut g, 10.0), 1.0);
        assert_eq!(g, vec![vec![3.0], vec![4.0]]);

        let mut g = vec![vec![12.0f32], vec![16.0]];
        assert!((clip_grad_norm(&mut g, 10.0) - 0.5).abs() < 1e-12);
        assert!((global_norm(g.iter().map(Vec::as_slice)) - 10.0).abs() < 1e-6);

        let mut g = vec![vec![0.0f32; 3]];
        assert_eq!(clip_grad_norm(&mut g, 10.0), 1.0);
        assert!(g[0].iter().all(|v| *v == 0.0));
    }
}
