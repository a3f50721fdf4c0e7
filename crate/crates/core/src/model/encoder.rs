use rand::Rng;

use crate::error::{contract, Result};
use crate::nn::{join, trunc_normal, LayerNorm, Linear, Module, TransformerBlock, Tubelet, TubeletEmbed, INIT_STD};
use crate::tensor::{Graph, Param, Scalar, Tensor, Var};

/// Tubelet embedding, transformer stack and final norm.
#[derive(Clone, Debug)]
pub struct Encoder<T: Scalar = f32> {
    pub embed: TubeletEmbed<T>,
    pub blocks: Vec<TransformerBlock<T>>,
    pub norm: LayerNorm<T>,
}

pub struct EncoderOutput<T: Scalar> {
    pub out: Var,
    /// Per-layer head-wise attention, each `[heads, n, n]`.
    pub attention: Vec<Tensor<T>>,
}

impl<T: Scalar> Encoder<T> {
    pub fn new<R: Rng + ?Sized>(tubelet: Tubelet, dim: usize, depth: usize, heads: usize, rng: &mut R) -> Result<Self> {
        Ok(Self {
            embed: TubeletEmbed::new(tubelet, dim, rng),
            blocks: (0..depth)
                .map(|_| TransformerBlock::new(dim, heads, rng))
                .collect::<Result<_>>()?,
            norm: LayerNorm::new(dim),
        })
    }

    pub fn dim(&self) -> usize {
        self.embed.proj.output_dim()
    }

    /// Encode patch rows `[N, volume]` with positions `[N, dim]`. With `keep`,
    /// only those rows enter the network and the output has `keep.len()` rows.
    pub fn forward(
        &self,
        g: &mut Graph<T>,
        patches: &Tensor<T>,
        positions: &Tensor<T>,
        keep: Option<&[usize]>,
    ) -> Result<EncoderOutput<T>> {
        let (patches, positions) = match keep {
            Some([]) => return Err(contract("context encoder received no visible tokens")),
            Some(idx) => (patches.gather_rows(idx)?, positions.gather_rows(idx)?),
            None => (patches.clone(), positions.clone()),
        };
        let x = self.embed.forward(g, &patches)?;
        let pos = g.constant(positions);
        let mut x = g.add(x, pos)?;
        let mut attention = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let (y, w) = block.forward(g, x)?;
            attention.push(w);
            x = y;
        }
        Ok(EncoderOutput {
            out: self.norm.forward(g, x)?,
            attention,
        })
    }
}

impl<T: Scalar> Module<T> for Encoder<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Param<T>)) {
        self.embed.visit(&join(prefix, "embed"), f);
        self.blocks.visit(&join(prefix, "blocks"), f);
        self.norm.visit(&join(prefix, "norm"), f);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Param<T>)) {
        self.embed.visit_mut(&join(prefix, "embed"), f);
        self.blocks.visit_mut(&join(prefix, "blocks"), f);
        self.norm.visit_mut(&join(prefix, "norm"), f);
    }
}

/// Narrow transformer that fills in masked positions from context tokens.
#[derive(Clone, Debug)]
pub struct Predictor<T: Scalar = f32> {
    pub input: Linear<T>,
    pub mask_token: Param<T>,
    pub blocks: Vec<TransformerBlock<T>>,
    /// Back to the encoder width; absent when the loss lives in predictor space.
    pub output: Option<Linear<T>>,
}

impl<T: Scalar> Predictor<T> {
    pub fn new<R: Rng + ?Sized>(
        dim: usize,
        predictor_dim: usize,
        depth: usize,
        heads: usize,
        project_out: bool,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            input: Linear::new(dim, predictor_dim, true, rng),
            mask_token: Param::new(trunc_normal(&[1, predictor_dim], INIT_STD, rng)),
            blocks: (0..depth)
                .map(|_| TransformerBlock::new(predictor_dim, heads, rng))
                .collect::<Result<_>>()?,
            output: project_out.then(|| Linear::new(predictor_dim, dim, true, rng)),
        })
    }

    /// Predictions for `masked` tokens, in the order given.
    ///
    /// `context` holds encoder outputs for `visible`; `positions` is the
    /// predictor-width positional table over all tokens.
    pub fn forward(
        &self,
        g: &mut Graph<T>,
        context: Var,
        visible: &[usize],
        masked: &[usize],
        positions: &Tensor<T>,
    ) -> Result<Var> {
        if masked.is_empty() {
            return Err(contract("predictor received no masked tokens"));
        }
        let ctx = self.input.forward(g, context)?;
        let ctx_pos = g.constant(positions.gather_rows(visible)?);
        let ctx = g.add(ctx, ctx_pos)?;
        let delta_y = g.constant(positions.gather_rows(masked)?);
        let token = g.param(&self.mask_token);
        let queries = g.add(delta_y, token)?;
        let mut x = g.concat(&[ctx, queries], 0)?;
        for block in &self.blocks {
            x = block.forward(g, x)?.0;
        }
        let pred = g.slice(x, 0, visible.len(), masked.len())?;
        match &self.output {
            Some(out) => out.forward(g, pred),
            None => Ok(pred),
        }
    }
}

impl<T: Scalar> Module<T> for Predictor<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Param<T>)) {
        self.input.visit(&join(prefix, "input"), f);
        f(join(prefix, "mask_token"), &self.mask_token);
        self.blocks.visit(&join(prefix, "blocks"), f);
        if let Some(out) = &self.output {
            out.visit(&join(prefix, "output"), f);
        }
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Param<T>)) {
        self.input.visit_mut(&join(prefix, "input"), f);
        f(join(prefix, "mask_token"), &mut self.mask_token);
        self.blocks.visit_mut(&join(prefix, "blocks"), f);
        if let Some(out) = &mut self.output {
            out.visit_mut(&join(prefix, "output"), f);
        }
    }
}
