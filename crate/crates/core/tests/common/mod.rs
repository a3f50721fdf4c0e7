#![allow(dead_code)]

use eeg_jepa::tensor::{Graph, Tensor, Var};
use eeg_jepa::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type OpFn = Box<dyn Fn(&mut Graph<f64>, &[Var]) -> Result<Var>>;

pub struct OpCase {
    pub name: &'static str,
    pub f: OpFn,
    pub inputs: Vec<Tensor<f64>>,
}

pub fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.5..1.5))
}

/// Values bounded away from zero, for the kink of `abs`.
fn away_from_zero(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| {
        let m: f64 = rng.random_range(0.2..1.5);
        if rng.random_bool(0.5) { m } else { -m }
    })
}

/// Contract an arbitrary-shaped output to a scalar with fixed weights so
/// every output element contributes a distinct amount.
fn project(g: &mut Graph<f64>, y: Var) -> Result<Var> {
    let shape = g.shape(y).to_vec();
    let n: usize = shape.iter().product();
    let w = Tensor::from_fn(shape, |i| ((i * 7919) % 13) as f64 / 13.0 - 0.4 + 1.0 / (n as f64 + 1.0));
    let w = g.constant(w);
    let p = g.mul(y, w)?;
    Ok(g.sum(p))
}

/// One case per differentiable op, with inputs drawn from `seed`.
pub fn op_cases(seed: u64) -> Vec<OpCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = |s: &[usize], rng: &mut ChaCha8Rng| random(s, rng);
    let mut cases: Vec<OpCase> = Vec::new();
    let mut push = |name, f: OpFn, inputs| cases.push(OpCase { name, f, inputs });

    push("add", Box::new(|g, x| { let y = g.add(x[0], x[1])?; project(g, y) }), vec![r(&[3, 4], &mut rng), r(&[3, 4], &mut rng)]);
    push("add_broadcast", Box::new(|g, x| { let y = g.add(x[0], x[1])?; project(g, y) }), vec![r(&[3, 4], &mut rng), r(&[4], &mut rng)]);
    push("sub", Box::new(|g, x| { let y = g.sub(x[0], x[1])?; project(g, y) }), vec![r(&[2, 5], &mut rng), r(&[2, 5], &mut rng)]);
    push("mul", Box::new(|g, x| { let y = g.mul(x[0], x[1])?; project(g, y) }), vec![r(&[3, 3], &mut rng), r(&[3, 3], &mut rng)]);
    push("mul_broadcast", Box::new(|g, x| { let y = g.mul(x[0], x[1])?; project(g, y) }), vec![r(&[2, 3, 4], &mut rng), r(&[1, 4], &mut rng)]);
    push("scale", Box::new(|g, x| { let y = g.scale(x[0], -1.7); project(g, y) }), vec![r(&[4], &mut rng)]);
    push("matmul", Box::new(|g, x| { let y = g.matmul(x[0], x[1])?; project(g, y) }), vec![r(&[3, 4], &mut rng), r(&[4, 2], &mut rng)]);
    push("transpose", Box::new(|g, x| { let y = g.transpose(x[0])?; project(g, y) }), vec![r(&[3, 5], &mut rng)]);
    push("softmax_rows", Box::new(|g, x| { let y = g.softmax(x[0], 1)?; project(g, y) }), vec![r(&[3, 4], &mut rng)]);
    push("softmax_cols", Box::new(|g, x| { let y = g.softmax(x[0], 0)?; project(g, y) }), vec![r(&[3, 4], &mut rng)]);
    push("gelu", Box::new(|g, x| { let y = g.gelu(x[0]); project(g, y) }), vec![r(&[2, 6], &mut rng)]);
    push("abs", Box::new(|g, x| { let y = g.abs(x[0]); project(g, y) }), vec![away_from_zero(&[2, 4], &mut rng)]);
    push("sum", Box::new(|g, x| { let y = g.mul(x[0], x[0])?; Ok(g.sum(y)) }), vec![r(&[3, 2], &mut rng)]);
    push("mean", Box::new(|g, x| { let y = g.mul(x[0], x[0])?; Ok(g.mean(y)) }), vec![r(&[3, 2], &mut rng)]);
    push("mean_axis0", Box::new(|g, x| { let y = g.mean_axis(x[0], 0)?; project(g, y) }), vec![r(&[4, 3], &mut rng)]);
    push("mean_axis1", Box::new(|g, x| { let y = g.mean_axis(x[0], 1)?; project(g, y) }), vec![r(&[4, 3], &mut rng)]);
    push("reshape", Box::new(|g, x| { let y = g.reshape(x[0], &[6, 2])?; project(g, y) }), vec![r(&[3, 4], &mut rng)]);
    push("concat0", Box::new(|g, x| { let y = g.concat(&[x[0], x[1]], 0)?; project(g, y) }), vec![r(&[2, 3], &mut rng), r(&[1, 3], &mut rng)]);
    push("concat1", Box::new(|g, x| { let y = g.concat(&[x[0], x[1]], 1)?; project(g, y) }), vec![r(&[2, 3], &mut rng), r(&[2, 2], &mut rng)]);
    push("slice", Box::new(|g, x| { let y = g.slice(x[0], 0, 1, 2)?; project(g, y) }), vec![r(&[4, 3], &mut rng)]);
    push("gather_rows", Box::new(|g, x| { let y = g.gather_rows(x[0], &[2, 0, 2])?; project(g, y) }), vec![r(&[3, 4], &mut rng)]);
    push("layer_norm", Box::new(|g, x| { let y = g.layer_norm(x[0], x[1], x[2], 1e-6)?; project(g, y) }), vec![r(&[3, 5], &mut rng), r(&[5], &mut rng), r(&[5], &mut rng)]);
    push("cross_entropy", Box::new(|g, x| g.cross_entropy(x[0], &[1, 0, 2])), vec![r(&[3, 4], &mut rng)]);
    cases
}
