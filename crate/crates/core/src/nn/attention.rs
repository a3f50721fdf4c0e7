use rand::Rng;

use super::{join, Linear, Module};
use crate::error::{config, Result};
use crate::tensor::{Graph, Param, Scalar, Tensor, Var};

/// Multi-head scaled dot-product attention. With a `context` it acts as
/// cross-attention (queries from `x`, keys and values from `context`).
#[derive(Clone, Debug)]
pub struct Attention<T: Scalar = f32> {
    pub q: Linear<T>,
    pub k: Linear<T>,
    pub v: Linear<T>,
    pub o: Linear<T>,
    pub heads: usize,
}

pub struct AttentionOutput<T: Scalar> {
    pub out: Var,
    /// Row-stochastic attention weights, shape `[heads, queries, keys]`.
    pub weights: Tensor<T>,
}

impl<T: Scalar> Attention<T> {
    pub fn new<R: Rng + ?Sized>(dim: usize, heads: usize, rng: &mut R) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(config(format!("embedding dim {dim} not divisible by {heads} heads")));
        }
        Ok(Self {
            q: Linear::new(dim, dim, true, rng),
            // a key bias shifts every score in a row equally, so softmax ignores it
            k: Linear::new(dim, dim, false, rng),
            v: Linear::new(dim, dim, true, rng),
            o: Linear::new(dim, dim, true, rng),
            heads,
        })
    }

    pub fn dim(&self) -> usize {
        self.q.output_dim()
    }

    pub fn forward(&self, g: &mut Graph<T>, x: Var, context: Option<Var>) -> Result<AttentionOutput<T>> {
        let dim = self.dim();
        if dim % self.heads != 0 {
            return Err(config(format!("embedding dim {dim} not divisible by {} heads", self.heads)));
        }
        let ctx = context.unwrap_or(x);
        let head_dim = dim / self.heads;
        let scale = T::from_f64(1.0 / (head_dim as f64).sqrt());

        let q = self.q.forward(g, x)?;
        let k = self.k.forward(g, ctx)?;
        let v = self.v.forward(g, ctx)?;
        let (n, m) = (g.shape(q)[0], g.shape(k)[0]);

        let mut weights = Vec::with_capacity(self.heads * n * m);
        let mut heads = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (qh, kh, vh) = if self.heads == 1 {
                (q, k, v)
            } else {
                (
                    g.slice(q, 1, h * head_dim, head_dim)?,
                    g.slice(k, 1, h * head_dim, head_dim)?,
                    g.slice(v, 1, h * head_dim, head_dim)?,
                )
            };
            let kt = g.transpose(kh)?;
            let scores = g.matmul(qh, kt)?;
            let scores = g.scale(scores, scale);
            let probs = g.softmax(scores, 1)?;
            weights.extend_from_slice(g.value(probs).data());
            heads.push(g.matmul(probs, vh)?);
        }
        let merged = if heads.len() == 1 { heads[0] } else { g.concat(&heads, 1)? };
        let out = self.o.forward(g, merged)?;
        Ok(AttentionOutput {
            out,
            weights: Tensor::new([self.heads, n, m], weights)?,
        })
    }
}

impl<T: Scalar> Module<T> for Attention<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Param<T>)) {
        self.q.visit(&join(prefix, "q"), f);
        self.k.visit(&join(prefix, "k"), f);
        self.v.visit(&join(prefix, "v"), f);
        self.o.visit(&join(prefix, "o"), f);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Param<T>)) {
        self.q.visit_mut(&join(prefix, "q"), f);
        self.k.visit_mut(&join(prefix, "k"), f);
        self.v.visit_mut(&join(prefix, "v"), f);
        self.o.visit_mut(&join(prefix, "o"), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{grad_check_module, trunc_normal};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Per-head attention computed with explicit loops.
    fn naive(attn: &Attention<f64>, x: &Tensor<f64>) -> Vec<f64> {
        let (n, d) = x.dims2().unwrap();
        let dh = d / attn.heads;
        let lin = |l: &Linear<f64>, t: &Tensor<f64>| -> Vec<Vec<f64>> {
            let w = &l.weight.value;
            let zero = vec![0.0; d];
            let b = l.bias.as_ref().map_or(&zero[..], |b| b.value.data());
            (0..t.shape()[0])
                .map(|i| (0..d).map(|j| b[j] + (0..d).map(|p| t.at(&[i, p]) * w.at(&[p, j])).sum::<f64>()).collect())
                .collect()
        };
        let (q, k, v) = (lin(&attn.q, x), lin(&attn.k, x), lin(&attn.v, x));
        let mut merged = vec![vec![0.0; d]; n];
        for h in 0..attn.heads {
            for i in 0..n {
                let s: Vec<f64> = (0..n)
                    .map(|j| (0..dh).map(|c| q[i][h * dh + c] * k[j][h * dh + c]).sum::<f64>() / (dh as f64).sqrt())
                    .collect();
                let mx = s.iter().cloned().fold(f64::MIN, f64::max);
                let e: Vec<f64> = s.iter().map(|v| (v - mx).exp()).collect();
                let z: f64 = e.iter().sum();
                for c in 0..dh {
                    merged[i][h * dh + c] = (0..n).map(|j| e[j] / z * v[j][h * dh + c]).sum();
                }
            }
        }
        let mt = Tensor::from_rows(&merged);
        lin(&attn.o, &mt).into_iter().flatten().collect()
    }

    #[test]
    fn matches_naive_per_head_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut attn = Attention::<f64>::new(8, 2, &mut rng).unwrap();
        attn.visit_mut("", &mut |_, p| p.value = trunc_normal(p.value.shape(), 0.5, &mut rng));
        let x: Tensor<f64> = trunc_normal(&[4, 8], 1.0, &mut rng);
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let out = attn.forward(&mut g, xv, None).unwrap();
        let expect = naive(&attn, &x);
        for (a, b) in g.value(out.out).data().iter().zip(&expect) {
            assert!((a - b).abs() < 1e-5, "{a} vs {b}");
        }
        for row in out.weights.data().chunks(4) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn single_token_attends_to_itself() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let attn = Attention::<f32>::new(6, 3, &mut rng).unwrap();
        let mut g = Graph::new();
        let x = g.constant(trunc_normal(&[1, 6], 1.0, &mut rng));
        let out = attn.forward(&mut g, x, None).unwrap();
        assert_eq!(out.weights.shape(), &[3, 1, 1]);
        assert!(out.weights.data().iter().all(|&w| w == 1.0));
    }

    #[test]
    fn uniform_attention_averages_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let d = 4;
        let eye = Tensor::<f64>::from_fn([d, d], |i| if i / d == i % d { 1.0 } else { 0.0 });
        let mut attn = Attention::<f64>::new(d, 1, &mut rng).unwrap();
        attn.k.weight.value = Tensor::zeros([d, d]);
        attn.v.weight.value = eye.clone();
        attn.o.weight.value = eye;
        let x: Tensor<f64> = trunc_normal(&[5, d], 1.0, &mut rng);
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let out = attn.forward(&mut g, xv, None).unwrap();
        let y = g.value(out.out);
        for j in 0..d {
            let mean = (0..5).map(|i| x.at(&[i, j])).sum::<f64>() / 5.0;
            for i in 0..5 {
                assert!((y.at(&[i, j]) - mean).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rejects_indivisible_heads() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            Attention::<f32>::new(10, 3, &mut rng),
            Err(crate::Error::Config(_))
        ));
    }

    #[test]
    fn cross_attention_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut attn = Attention::<f64>::new(6, 2, &mut rng).unwrap();
        attn.visit_mut("", &mut |_, p| p.value = trunc_normal(p.value.shape(), 0.4, &mut rng));
        let q: Tensor<f64> = trunc_normal(&[2, 6], 1.0, &mut rng);
        let ctx: Tensor<f64> = trunc_normal(&[5, 6], 1.0, &mut rng);
        let w: Tensor<f64> = trunc_normal(&[2, 6], 1.0, &mut rng);
        let err = grad_check_module(
            &mut attn,
            |g, m| {
                let qv = g.constant(q.clone());
                let cv = g.constant(ctx.clone());
                let out = m.forward(g, qv, Some(cv))?.out;
                let wv = g.constant(w.clone());
                let p = g.mul(out, wv)?;
                Ok(g.sum(p))
            },
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }
}
