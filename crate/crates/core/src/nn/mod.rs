//! Transformer building blocks on top of the autodiff [`Graph`].

mod attention;
mod block;
mod posenc;
mod tubelet;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Result;
use crate::tensor::{Graph, Param, Scalar, Tensor, Var};

pub use attention::{Attention, AttentionOutput};
pub use block::{Mlp, TransformerBlock};
pub use posenc::sincos_positions;
pub use tubelet::{unfold_tubelets, TokenGrid, Tubelet, TubeletEmbed};

/// Anything that owns named parameters.
pub trait Module<T: Scalar> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Param<T>));
    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Param<T>));

    fn named_params(&self) -> Vec<(String, &Param<T>)> {
        let mut out = Vec::new();
        self.visit("", &mut |name, p| out.push((name, p)));
        out
    }

    fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, p| n += p.value.len());
        n
    }

    /// Assign fresh identities to every parameter.
    fn refresh_ids(&mut self) {
        self.visit_mut("", &mut |_, p| p.refresh_id());
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Normal(0, std) truncated to two standard deviations.
pub fn trunc_normal<T: Scalar, R: Rng + ?Sized>(shape: &[usize], std: f64, rng: &mut R) -> Tensor<T> {
    let normal = Normal::new(0.0, std).expect("positive std");
    Tensor::from_fn(shape.to_vec(), |_| loop {
        let v: f64 = normal.sample(rng);
        if v.abs() <= 2.0 * std {
            break T::from_f64(v);
        }
    })
}

pub const INIT_STD: f64 = 0.02;

/// `y = x·W + b` with `W` stored as `[in, out]`.
#[derive(Clone, Debug)]
pub struct Linear<T: Scalar = f32> {
    pub weight: Param<T>,
    pub bias: Option<Param<T>>,
}

impl<T: Scalar> Linear<T> {
    pub fn new<R: Rng + ?Sized>(input: usize, output: usize, bias: bool, rng: &mut R) -> Self {
        Self {
            weight: Param::new(trunc_normal(&[input, output], INIT_STD, rng)),
            bias: bias.then(|| Param::new(Tensor::zeros([output]))),
        }
    }

    pub fn from_parts(weight: Tensor<T>, bias: Option<Tensor<T>>) -> Self {
        Self {
            weight: Param::new(weight),
            bias: bias.map(Param::new),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn output_dim(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn forward(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let w = g.param(&self.weight);
        let y = g.matmul(x, w)?;
        match &self.bias {
            Some(b) => {
                let b = g.param(b);
                g.add(y, b)
            }
            None => Ok(y),
        }
    }
}

impl<T: Scalar> Module<T> for Linear<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Param<T>)) {
        f(join(prefix, "weight"), &self.weight);
        if let Some(b) = &self.bias {
            f(join(prefix, "bias"), b);
        }
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Param<T>)) {
        f(join(prefix, "weight"), &mut self.weight);
        if let Some(b) = &mut self.bias {
            f(join(prefix, "bias"), b);
        }
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm<T: Scalar = f32> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub eps: f64,
}

impl<T: Scalar> LayerNorm<T> {
    pub fn new(dim: usize) -> Self {
        Self {
            gamma: Param::new(Tensor::full([dim], T::one())),
            beta: Param::new(Tensor::zeros([dim])),
            eps: 1e-6,
        }
    }

    pub fn forward(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let gamma = g.param(&self.gamma);
        let beta = g.param(&self.beta);
        g.layer_norm(x, gamma, beta, self.eps)
    }
}

impl<T: Scalar> Module<T> for LayerNorm<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Param<T>)) {
        f(join(prefix, "gamma"), &self.gamma);
        f(join(prefix, "beta"), &self.beta);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Param<T>)) {
        f(join(prefix, "gamma"), &mut self.gamma);
        f(join(prefix, "beta"), &mut self.beta);
    }
}

impl<T: Scalar, M: Module<T>> Module<T> for Vec<M> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Param<T>)) {
        for (i, m) in self.iter().enumerate() {
            m.visit(&join(prefix, &i.to_string()), f);
        }
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Param<T>)) {
        for (i, m) in self.iter_mut().enumerate() {
            m.visit_mut(&join(prefix, &i.to_string()), f);
        }
    }
}

/// Max relative error between graph gradients of every parameter of `module`
/// and central differences of `f` (64-bit).
pub fn grad_check_module<M, F>(module: &mut M, f: F, h: f64) -> Result<f64>
where
    M: Module<f64>,
    F: Fn(&mut Graph<f64>, &M) -> Result<Var>,
{
    let mut g = Graph::new();
    let loss = f(&mut g, module)?;
    g.backward(loss)?;
    let analytic: Vec<Vec<f64>> = module
        .named_params()
        .iter()
        .map(|(_, p)| {
            g.param_grad(p)
                .map(<[f64]>::to_vec)
                .unwrap_or_else(|| vec![0.0; p.value.len()])
        })
        .collect();

    let eval = |m: &M| -> Result<f64> {
        let mut g = Graph::no_grad();
        let out = f(&mut g, m)?;
        Ok(g.value(out).item())
    };

    let mut worst = 0.0f64;
    let count = analytic.len();
    for k in 0..count {
        for i in 0..analytic[k].len() {
            let nudge = |m: &mut M, delta: f64| {
                let mut idx = 0;
                m.visit_mut("", &mut |_, p| {
                    if idx == k {
                        p.value.data_mut()[i] += delta;
                    }
                    idx += 1;
                });
            };
            nudge(module, h);
            let up = eval(module)?;
            nudge(module, -2.0 * h);
            let down = eval(module)?;
            nudge(module, h);
            let numeric = (up - down) / (2.0 * h);
            worst = worst.max(crate::tensor::relative_error(analytic[k][i], numeric));
        }
    }
    Ok(worst)
}
