use rand::Rng;

use super::{Encoder, EncoderOutput, JepaConfig, LossSpace, MaskSpec, Predictor};
use crate::error::{contract, Error, Result};
use crate::nn::{sincos_positions, unfold_tubelets, Module, TokenGrid};
use crate::tensor::{Graph, Param, Scalar, Tensor, Var};

/// Epsilon of the per-token target normalization.
const TARGET_EPS: f64 = 1e-6;

/// Context encoder, predictor and the EMA target encoder.
#[derive(Clone, Debug)]
pub struct JepaModel<T: Scalar = f32> {
    pub config: JepaConfig,
    pub x_encoder: Encoder<T>,
    pub predictor: Predictor<T>,
    pub y_encoder: Encoder<T>,
    grid: TokenGrid,
    encoder_positions: Tensor<T>,
    predictor_positions: Tensor<T>,
}

pub struct JepaStep<T: Scalar> {
    pub loss: Var,
    pub prediction: Var,
    /// Detached targets at the masked positions.
    pub targets: Tensor<T>,
}

/// Mean absolute error over every coordinate.
pub fn jepa_loss<T: Scalar>(g: &mut Graph<T>, prediction: Var, target: Var) -> Result<Var> {
    if g.shape(prediction) != g.shape(target) {
        return Err(Error::Shape {
            op: "jepa_loss",
            lhs: g.shape(prediction).to_vec(),
            rhs: g.shape(target).to_vec(),
        });
    }
    let diff = g.sub(prediction, target)?;
    let abs = g.abs(diff);
    Ok(g.mean(abs))
}

impl<T: Scalar> JepaModel<T> {
    pub fn new<R: Rng + ?Sized>(config: JepaConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let d = config.dims();
        let grid = config.grid()?;
        let x_encoder = Encoder::new(config.tubelet, d.dim, d.depth, d.heads, rng)?;
        let predictor = Predictor::new(
            d.dim,
            d.predictor_dim,
            d.predictor_depth,
            d.predictor_heads,
            config.loss_space == LossSpace::Encoder,
            rng,
        )?;
        let mut y_encoder = x_encoder.clone();
        y_encoder.refresh_ids();
        Ok(Self {
            encoder_positions: sincos_positions(grid, d.dim),
            predictor_positions: sincos_positions(grid, d.predictor_dim),
            config,
            x_encoder,
            predictor,
            y_encoder,
            grid,
        })
    }

    pub fn grid(&self) -> TokenGrid {
        self.grid
    }

    pub fn dim(&self) -> usize {
        self.x_encoder.dim()
    }

    pub fn encoder_positions(&self) -> &Tensor<T> {
        &self.encoder_positions
    }

    pub fn predictor_positions(&self) -> &Tensor<T> {
        &self.predictor_positions
    }

    /// Unfold a padded `frames × channels × width` clip into patch rows.
    pub fn patches(&self, clip: &Tensor<T>) -> Result<Tensor<T>> {
        let (patches, grid) = unfold_tubelets(clip, self.config.tubelet)?;
        if grid != self.grid {
            return Err(contract(format!(
                "clip {:?} yields a {}x{}x{} token grid, model expects {}x{}x{}",
                clip.shape(),
                grid.temporal,
                grid.channel,
                grid.time,
                self.grid.temporal,
                self.grid.channel,
                self.grid.time
            )));
        }
        Ok(patches)
    }

    /// Context encoding of the visible tokens only.
    pub fn x_encode(&self, g: &mut Graph<T>, patches: &Tensor<T>, visible: &[usize]) -> Result<EncoderOutput<T>> {
        self.x_encoder.forward(g, patches, &self.encoder_positions, Some(visible))
    }

    /// Full-sequence context encoding (used downstream).
    pub fn encode(&self, g: &mut Graph<T>, patches: &Tensor<T>) -> Result<EncoderOutput<T>> {
        self.x_encoder.forward(g, patches, &self.encoder_positions, None)
    }

    /// Full-sequence target encoding on a private tape; the result is a
    /// plain tensor, so nothing downstream can differentiate through it.
    pub fn y_encode(&self, patches: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::no_grad();
        let out = self.y_encoder.forward(&mut g, patches, &self.encoder_positions, None)?;
        Ok(g.value(out.out).clone())
    }

    /// Target rows at the masked positions, normalized per token when configured.
    pub fn targets(&self, patches: &Tensor<T>, mask: &MaskSpec) -> Result<Tensor<T>> {
        let rows = self.y_encode(patches)?.gather_rows(&mask.masked)?;
        Ok(if self.config.normalize_targets {
            rows.normalize_rows(TARGET_EPS)
        } else {
            rows
        })
    }

    pub fn predict(&self, g: &mut Graph<T>, context: Var, mask: &MaskSpec) -> Result<Var> {
        self.predictor
            .forward(g, context, &mask.visible, &mask.masked, &self.predictor_positions)
    }

    /// Masked latent prediction loss for one clip.
    pub fn forward_loss(&self, g: &mut Graph<T>, patches: &Tensor<T>, mask: &MaskSpec) -> Result<JepaStep<T>> {
        let context = self.x_encode(g, patches, &mask.visible)?.out;
        let prediction = self.predict(g, context, mask)?;
        let targets = self.targets(patches, mask)?;
        let target = g.constant(targets.clone());
        let loss = jepa_loss(g, prediction, target)?;
        Ok(JepaStep {
            loss,
            prediction,
            targets,
        })
    }

    /// `ȳ ← m·ȳ + (1−m)·x` for every target-encoder parameter.
    pub fn ema_update(&mut self, momentum: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&momentum) {
            return Err(contract(format!("EMA momentum {momentum} outside [0, 1]")));
        }
        if momentum == 1.0 {
            return Ok(());
        }
        let mut sources = Vec::new();
        self.x_encoder.visit("", &mut |_, p| sources.push(p.value.data().to_vec()));
        let mut sources = sources.into_iter();
        let (m, k) = (T::from_f64(momentum), T::from_f64(1.0 - momentum));
        self.y_encoder.visit_mut("", &mut |_, p| {
            let x = sources.next().expect("encoders share a layout");
            if momentum == 0.0 {
                p.value.data_mut().copy_from_slice(&x);
            } else {
                for (y, &x) in p.value.data_mut().iter_mut().zip(&x) {
                    *y = m * *y + k * x;
                }
            }
        });
        Ok(())
    }

    /// Parameters updated by the optimizer: context encoder then predictor.
    pub fn trainable(&self) -> Vec<(String, &Param<T>)> {
        let mut out = Vec::new();
        self.x_encoder.visit("x_encoder", &mut |n, p| out.push((n, p)));
        self.predictor.visit("predictor", &mut |n, p| out.push((n, p)));
        out
    }

    pub fn trainable_mut(&mut self) -> Vec<(String, &mut Param<T>)> {
        let mut out = Vec::new();
        self.x_encoder.visit_mut("x_encoder", &mut |n, p| out.push((n, p)));
        self.predictor.visit_mut("predictor", &mut |n, p| out.push((n, p)));
        out
    }
}

impl<T: Scalar> Module<T> for JepaModel<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Param<T>)) {
        self.x_encoder.visit(&crate::nn::join(prefix, "x_encoder"), f);
        self.predictor.visit(&crate::nn::join(prefix, "predictor"), f);
        self.y_encoder.visit(&crate::nn::join(prefix, "y_encoder"), f);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Param<T>)) {
        self.x_encoder.visit_mut(&crate::nn::join(prefix, "x_encoder"), f);
        self.predictor.visit_mut(&crate::nn::join(prefix, "predictor"), f);
        self.y_encoder.visit_mut(&crate::nn::join(prefix, "y_encoder"), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{mask_from_blocks, sample_mask, MaskConfig, Preset};
    use crate::nn::{trunc_normal, Tubelet};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_config() -> JepaConfig {
        JepaConfig {
            preset: Preset::Tiny,
            embed_dim: Some(12),
            predictor_dim: Some(12),
            tubelet: Tubelet::new(2, 10, 2),
            frames: 4,
            channels: 4,
            window: 40,
            ..Default::default()
        }
    }

    fn setup(seed: u64) -> (JepaModel<f64>, Tensor<f64>, ChaCha8Rng) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = JepaModel::<f64>::new(small_config(), &mut rng).unwrap();
        let clip: Tensor<f64> = trunc_normal(&[4, 4, 40], 1.0, &mut rng);
        let patches = model.patches(&clip).unwrap();
        (model, patches, rng)
    }

    #[test]
    fn y_encoder_matches_x_encoder_at_init() {
        let (model, patches, _) = setup(0);
        let mut g = Graph::new();
        let x = model.encode(&mut g, &patches).unwrap().out;
        let y = model.y_encode(&patches).unwrap();
        for (a, b) in g.value(x).data().iter().zip(y.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn empty_mask_equals_full_encoding() {
        let (model, patches, _) = setup(1);
        let all: Vec<usize> = (0..model.grid().len()).collect();
        let mut g = Graph::new();
        let a = model.x_encode(&mut g, &patches, &all).unwrap().out;
        let b = model.encode(&mut g, &patches).unwrap().out;
        assert_eq!(g.value(a), g.value(b));
        assert!(model.x_encode(&mut g, &patches, &[]).is_err());
    }

    #[test]
    fn visible_order_is_irrelevant_up_to_permutation() {
        let (model, patches, _) = setup(2);
        let keep = vec![0, 3, 5, 6, 9, 12];
        let perm = vec![4, 0, 5, 2, 1, 3];
        let permuted: Vec<usize> = perm.iter().map(|&i| keep[i]).collect();
        let mut g = Graph::new();
        let a = model.x_encode(&mut g, &patches, &keep).unwrap().out;
        let b = model.x_encode(&mut g, &patches, &permuted).unwrap().out;
        let (a, b) = (g.value(a).clone(), g.value(b).clone());
        for (row, &src) in perm.iter().enumerate() {
            for (x, y) in b.row(row).iter().zip(a.row(src)) {
                assert!((x - y).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn prediction_depends_on_position() {
        let (model, patches, _) = setup(3);
        let mask = mask_from_blocks(model.grid(), &[(0, 0, 1, 2)]);
        let mut g = Graph::new();
        let ctx = model.x_encode(&mut g, &patches, &mask.visible).unwrap().out;
        let pred = model.predict(&mut g, ctx, &mask).unwrap();
        let p = g.value(pred);
        assert_eq!(p.shape(), &[mask.masked.len(), 12]);
        assert!(p.row(0).iter().zip(p.row(1)).any(|(a, b)| (a - b).abs() > 1e-6));
    }

    #[test]
    fn depth_zero_predictor_is_token_plus_position() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cfg = JepaConfig {
            predictor_depth: Some(0),
            ..small_config()
        };
        let model = JepaModel::<f64>::new(cfg, &mut rng).unwrap();
        let clip: Tensor<f64> = trunc_normal(&[4, 4, 40], 1.0, &mut rng);
        let patches = model.patches(&clip).unwrap();
        let mask = mask_from_blocks(model.grid(), &[(1, 1, 1, 2)]);
        let mut g = Graph::new();
        let ctx = model.x_encode(&mut g, &patches, &mask.visible).unwrap().out;
        let pred = model.predict(&mut g, ctx, &mask).unwrap();

        let token = &model.predictor.mask_token.value;
        let dy = mask.delta_y(model.predictor_positions()).unwrap();
        let out = model.predictor.output.as_ref().unwrap();
        let b = out.bias.as_ref().unwrap().value.data();
        for (r, &_) in mask.masked.iter().enumerate() {
            let h: Vec<f64> = dy.row(r).iter().zip(token.data()).map(|(a, b)| a + b).collect();
            for j in 0..12 {
                let expect = b[j] + (0..12).map(|k| h[k] * out.weight.value.at(&[k, j])).sum::<f64>();
                assert!((g.value(pred).at(&[r, j]) - expect).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn loss_values() {
        let mut g = Graph::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let t: Tensor<f64> = trunc_normal(&[7, 5], 1.0, &mut rng);
        let p = t.map(|v| v + 1.0);
        let (tv, pv, tv2) = (g.constant(t.clone()), g.constant(p), g.constant(t.clone()));
        let l = jepa_loss(&mut g, tv, tv2).unwrap();
        assert_eq!(g.value(l).item(), 0.0);
        let l = jepa_loss(&mut g, pv, tv).unwrap();
        assert!((g.value(l).item() - 1.0).abs() < 1e-12);

        let q: Tensor<f64> = trunc_normal(&[7, 5], 1.0, &mut rng);
        let oracle = {
            let mut s = 0.0;
            for i in 0..7 {
                for j in 0..5 {
                    s += (q.at(&[i, j]) - t.at(&[i, j])).abs();
                }
            }
            s / 35.0
        };
        let qv = g.constant(q);
        let l = jepa_loss(&mut g, qv, tv).unwrap();
        assert!((g.value(l).item() - oracle).abs() < 1e-6);

        let bad = g.constant(Tensor::zeros([7, 4]));
        assert!(matches!(jepa_loss(&mut g, bad, tv), Err(Error::Shape { .. })));
    }

    #[test]
    fn stop_gradient_and_gradient_flow() {
        let (model, patches, mut rng) = setup(6);
        let mask = sample_mask(model.grid(), &MaskConfig::default(), &mut rng).unwrap();
        let mut g = Graph::new();
        let step = model.forward_loss(&mut g, &patches, &mask).unwrap();
        let before = g.len();
        model.targets(&patches, &mask).unwrap();
        assert_eq!(g.len(), before);
        g.backward(step.loss).unwrap();
        model.y_encoder.visit("", &mut |name, p| {
            assert!(g.param_grad(p).is_none(), "{name} has a gradient");
        });
        for (name, p) in model.trainable() {
            let grad = g.param_grad(p).unwrap_or_else(|| panic!("{name} unbound"));
            assert!(grad.iter().any(|&v| v != 0.0), "{name} has a zero gradient");
        }
    }

    #[test]
    fn ema_endpoints() {
        let (mut model, _, mut rng) = setup(7);
        model
            .x_encoder
            .visit_mut("", &mut |_, p| p.value = trunc_normal(p.value.shape(), 1.0, &mut rng));
        let snapshot: Vec<Tensor<f64>> = model.y_encoder.named_params().iter().map(|(_, p)| p.value.clone()).collect();
        model.ema_update(1.0).unwrap();
        for ((_, p), s) in model.y_encoder.named_params().iter().zip(&snapshot) {
            assert_eq!(&p.value, s);
        }
        model.ema_update(0.0).unwrap();
        for ((_, y), (_, x)) in model.y_encoder.named_params().iter().zip(model.x_encoder.named_params()) {
            assert_eq!(y.value, x.value);
        }
        assert!(model.ema_update(1.5).is_err());
    }

    #[test]
    fn ema_closed_form() {
        let (mut model, _, _) = setup(8);
        model.x_encoder.visit_mut("", &mut |_, p| p.value = p.value.map(|_| 1.0));
        model.y_encoder.visit_mut("", &mut |_, p| p.value = p.value.map(|_| 0.0));
        model.ema_update(0.998).unwrap();
        model.y_encoder.visit("", &mut |_, p| {
            assert!(p.value.data().iter().all(|&v| (v - 0.002).abs() < 1e-15));
        });
    }
}
