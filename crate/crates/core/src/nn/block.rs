use rand::Rng;

use super::{join, Attention, LayerNorm, Linear, Module};
use crate::error::Result;
use crate::tensor::{Graph, Param, Scalar, Tensor, Var};

#[derive(Clone, Debug)]
pub struct Mlp<T: Scalar = f32> {
    pub fc1: Linear<T>,
    pub fc2: Linear<T>,
}

impl<T: Scalar> Mlp<T> {
    pub fn new<R: Rng + ?Sized>(dim: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            fc1: Linear::new(dim, hidden, true, rng),
            fc2: Linear::new(hidden, dim, true, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let h = self.fc1.forward(g, x)?;
        let h = g.gelu(h);
        self.fc2.forward(g, h)
    }
}

impl<T: Scalar> Module<T> for Mlp<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Param<T>)) {
        self.fc1.visit(&join(prefix, "fc1"), f);
        self.fc2.visit(&join(prefix, "fc2"), f);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Param<T>)) {
        self.fc1.visit_mut(&join(prefix, "fc1"), f);
        self.fc2.visit_mut(&join(prefix, "fc2"), f);
    }
}

/// Pre-norm transformer block: `x + Attn(LN(x))`, then `+ MLP(LN(·))`.
#[derive(Clone, Debug)]
pub struct TransformerBlock<T: Scalar = f32> {
    pub norm1: LayerNorm<T>,
    pub attn: Attention<T>,
    pub norm2: LayerNorm<T>,
    pub mlp: Mlp<T>,
}

impl<T: Scalar> TransformerBlock<T> {
    pub fn new<R: Rng + ?Sized>(dim: usize, heads: usize, rng: &mut R) -> Result<Self> {
        Ok(Self {
            norm1: LayerNorm::new(dim),
            attn: Attention::new(dim, heads, rng)?,
            norm2: LayerNorm::new(dim),
            mlp: Mlp::new(dim, 4 * dim, rng),
        })
    }

    /// Returns the block output and the head-wise attention weights.
    pub fn forward(&self, g: &mut Graph<T>, x: Var) -> Result<(Var, Tensor<T>)> {
        let h = self.norm1.forward(g, x)?;
        let attn = self.attn.forward(g, h, None)?;
        let x = g.add(x, attn.out)?;
        let h = self.norm2.forward(g, x)?;
        let h = self.mlp.forward(g, h)?;
        Ok((g.add(x, h)?, attn.weights))
    }
}

impl<T: Scalar> Module<T> for TransformerBlock<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Param<T>)) {
        self.norm1.visit(&join(prefix, "norm1"), f);
        self.attn.visit(&join(prefix, "attn"), f);
        self.norm2.visit(&join(prefix, "norm2"), f);
        self.mlp.visit(&join(prefix, "mlp"), f);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Param<T>)) {
        self.norm1.visit_mut(&join(prefix, "norm1"), f);
        self.attn.visit_mut(&join(prefix, "attn"), f);
        self.norm2.visit_mut(&join(prefix, "norm2"), f);
        self.mlp.visit_mut(&join(prefix, "mlp"), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{grad_check_module, trunc_normal};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zeroed_output_projections_make_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut block = TransformerBlock::<f32>::new(12, 3, &mut rng).unwrap();
        block.attn.o.weight.value = Tensor::zeros([12, 12]);
        block.mlp.fc2.weight.value = Tensor::zeros([48, 12]);
        let x: Tensor<f32> = trunc_normal(&[7, 12], 1.0, &mut rng);
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let (y, _) = block.forward(&mut g, xv).unwrap();
        assert_eq!(g.value(y), &x);
    }

    #[test]
    fn preserves_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let block = TransformerBlock::<f32>::new(8, 2, &mut rng).unwrap();
        for n in [1, 10, 640] {
            let mut g = Graph::no_grad();
            let x = g.constant(trunc_normal(&[n, 8], 1.0, &mut rng));
            let (y, w) = block.forward(&mut g, x).unwrap();
            assert_eq!(g.shape(y), &[n, 8]);
            assert_eq!(w.shape(), &[2, n, n]);
        }
    }

    #[test]
    fn two_block_stack_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut stack: Vec<TransformerBlock<f64>> =
            (0..2).map(|_| TransformerBlock::new(6, 2, &mut rng).unwrap()).collect();
        stack.visit_mut("", &mut |_, p| {
            let noise: Tensor<f64> = trunc_normal(p.value.shape(), 0.3, &mut rng);
            p.value.data_mut().iter_mut().zip(noise.data()).for_each(|(v, n)| *v += n);
        });
        let x: Tensor<f64> = trunc_normal(&[3, 6], 1.0, &mut rng);
        let w: Tensor<f64> = trunc_normal(&[3, 6], 1.0, &mut rng);
        let err = grad_check_module(
            &mut stack,
            |g, s| {
                let mut h = g.constant(x.clone());
                for b in s {
                    h = b.forward(g, h)?.0;
                }
                let wv = g.constant(w.clone());
                let p = g.mul(h, wv)?;
                Ok(g.sum(p))
            },
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }
}
