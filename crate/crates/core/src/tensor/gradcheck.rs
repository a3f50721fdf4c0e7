//! Central-difference gradient checking in 64-bit precision.

use super::{Graph, Tensor, Var};
use crate::error::{contract, Result};

/// `|analytic - numeric| / (|analytic| + |numeric| + 1e-12)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs() + 1e-12)
}

/// Max relative error between the tape gradient of scalar `f` at `x` and a
/// central difference with step `h`.
pub fn grad_check<F>(f: F, x: &Tensor<f64>, h: f64) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, Var) -> Result<Var>,
{
    grad_check_inputs(|g, xs| f(g, xs[0]), std::slice::from_ref(x), h)
}

/// [`grad_check`] over several inputs at once.
pub fn grad_check_inputs<F>(f: F, xs: &[Tensor<f64>], h: f64) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let eval = |inputs: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::no_grad();
        let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        scalar(&g, out)
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = xs.iter().map(|t| g.input(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    scalar(&g, out)?;
    g.backward(out)?;

    let mut worst = 0.0f64;
    let mut probe = xs.to_vec();
    for (k, &v) in vars.iter().enumerate() {
        let zeros = vec![0.0; xs[k].len()];
        let analytic = g.grad(v).unwrap_or(&zeros).to_vec();
        for i in 0..xs[k].len() {
            let orig = probe[k].data()[i];
            probe[k].data_mut()[i] = orig + h;
            let up = eval(&probe)?;
            probe[k].data_mut()[i] = orig - h;
            let down = eval(&probe)?;
            probe[k].data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            worst = worst.max(relative_error(analytic[i], numeric));
        }
    }
    Ok(worst)
}

fn scalar(g: &Graph<f64>, v: Var) -> Result<f64> {
    let t = g.value(v);
    if t.len() != 1 {
        return Err(contract(format!("grad_check needs a scalar function, got {:?}", t.shape())));
    }
    Ok(t.item())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_sum_closed_form() {
        let x = Tensor::new([2], vec![1.0, 2.0]).unwrap();
        let mut g = Graph::new();
        let v = g.input(x.clone());
        let sq = g.mul(v, v).unwrap();
        let s = g.sum(sq);
        g.backward(s).unwrap();
        assert_eq!(g.grad(v).unwrap(), &[2.0, 4.0]);
        let err = grad_check(
            |g, v| {
                let sq = g.mul(v, v)?;
                Ok(g.sum(sq))
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn softmax_pick() {
        let x = Tensor::new([5], vec![0.3, -1.2, 2.0, 0.7, -0.1]).unwrap();
        let err = grad_check(
            |g, v| {
                let s = g.softmax(v, 0)?;
                let picked = g.slice(s, 0, 2, 1)?;
                Ok(g.sum(picked))
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn constant_function_has_zero_error() {
        let x = Tensor::new([3], vec![1.0, 2.0, 3.0]).unwrap();
        let err = grad_check(
            |g, v| {
                let z = g.scale(v, 0.0);
                Ok(g.sum(z))
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert_eq!(err, 0.0);
    }
}
