use rand::Rng;

use crate::error::Result;
use crate::nn::{join, trunc_normal, Attention, Linear, Module, INIT_STD};
use crate::tensor::{Graph, Param, Scalar, Tensor, Var};

/// Learnable queries that cross-attend to encoder tokens, a residual
/// connection, and a linear classifier on the query average.
#[derive(Clone, Debug)]
pub struct ProbeHead<T: Scalar = f32> {
    pub query: Param<T>,
    pub attn: Attention<T>,
    pub classifier: Linear<T>,
}

pub struct ProbeOutput<T: Scalar> {
    /// `[1, classes]`.
    pub logits: Var,
    /// `[heads, queries, tokens]`.
    pub weights: Tensor<T>,
}

impl<T: Scalar> ProbeHead<T> {
    pub fn new<R: Rng + ?Sized>(dim: usize, queries: usize, heads: usize, classes: usize, rng: &mut R) -> Result<Self> {
        Ok(Self {
            query: Param::new(trunc_normal(&[queries.max(1), dim], INIT_STD, rng)),
            attn: Attention::new(dim, heads, rng)?,
            classifier: Linear::new(dim, classes, true, rng),
        })
    }

    pub fn classes(&self) -> usize {
        self.classifier.output_dim()
    }

    /// `q' = q + CrossAttn(q; tokens)`, averaged over queries, then classified.
    pub fn forward(&self, g: &mut Graph<T>, tokens: Var) -> Result<ProbeOutput<T>> {
        let q = g.param(&self.query);
        let attended = self.attn.forward(g, q, Some(tokens))?;
        let q = g.add(q, attended.out)?;
        let pooled = g.mean_axis(q, 0)?;
        let dim = g.shape(pooled)[0];
        let pooled = g.reshape(pooled, &[1, dim])?;
        Ok(ProbeOutput {
            logits: self.classifier.forward(g, pooled)?,
            weights: attended.weights,
        })
    }
}

impl<T: Scalar> Module<T> for ProbeHead<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Param<T>)) {
        f(join(prefix, "query"), &self.query);
        self.attn.visit(&join(prefix, "attn"), f);
        self.classifier.visit(&join(prefix, "classifier"), f);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Param<T>)) {
        f(join(prefix, "query"), &mut self.query);
        self.attn.visit_mut(&join(prefix, "attn"), f);
        self.classifier.visit_mut(&join(prefix, "classifier"), f);
    }
}
