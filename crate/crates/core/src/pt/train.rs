//! Minibatch SGD-with-momentum training of the person-specific
//! transform on synthetic (augmented, clean) heatmap pairs.

use alloc::vec;
use alloc::vec::Vec;

use rand_core::RngCore;

use crate::raster::Heatmap;
use crate::math;
use crate::rng;

use super::net::{PtModel, Tensor, DEFAULT_CHANNELS};
use super::sampler;
use super::BCE_EPS;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

/// One training pair: the augmented 2-channel input and the clean
/// history heatmap as target. Only the history channel is supervised.
#[derive(Debug, Clone)]
pub struct PtTrainingSample {
    pub input_sample: Heatmap,
    pub input_history: Heatmap,
    pub target_history: Heatmap,
}

/// Trainer hyperparameters.
///
/// Desk-scale defaults: batch 256 and synthesis history lengths
/// 500/2000. The full-scale reference setup uses batch 3200 with
/// history lengths 4000/8000; both are reachable through this config.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct PtTrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// History lengths used when synthesizing training samples.
    pub history_lengths: Vec<usize>,
    /// Conv-stage widths of the localization net.
    pub channels: Vec<usize>,
    /// Maximum L2 norm of a batch gradient; larger gradients are
    /// rescaled. `None` disables clipping.
    pub grad_clip: Option<f64>,
    /// Multiplicative learning-rate decay applied after each epoch.
    pub lr_decay: f64,
    pub seed: u64,
}

impl Default for PtTrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            momentum: 0.9,
            epochs: 100,
            batch_size: 256,
            history_lengths: vec![500, 2000],
            channels: DEFAULT_CHANNELS.to_vec(),
            grad_clip: Some(1.0),
            lr_decay: 1.0,
            seed: 0,
        }
    }
}

impl PtTrainConfig {
    pub fn validate(&self) -> Result<(), PtError> {
        if !(self.learning_rate > 0.0) {
            return Err(PtError::InvalidConfig("learning_rate must be > 0"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(PtError::InvalidConfig("momentum must be in [0, 1)"));
        }
        if self.epochs == 0 {
            return Err(PtError::InvalidConfig("epochs must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(PtError::InvalidConfig("batch_size must be >= 1"));
        }
        if self.channels.is_empty() {
            return Err(PtError::InvalidConfig("at least one conv stage required"));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return Err(PtError::InvalidConfig("grad_clip must be > 0"));
            }
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(PtError::InvalidConfig("lr_decay must be in (0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PtError {
    EmptyDataset,
    InvalidConfig(&'static str),
}

impl core::fmt::Display for PtError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            Self::EmptyDataset => f.write_str("training dataset is empty"),
            Self::InvalidConfig(msg) => write!(f, "invalid training config: {msg}"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for PtError {}

/// Trained model plus the per-epoch mean loss trace. The trace is
/// bitwise reproducible for a fixed seed: batch gradients are reduced
/// in a fixed sequential order.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: PtModel,
    pub loss_trace: Vec<f64>,
}

/// Loss and the flat analytic gradient (layout of [`PtModel::params`])
/// for one sample.
pub(crate) fn loss_and_gradients(model: &PtModel, sample: &PtTrainingSample) -> (f64, Vec<f64>) {
    let input = Tensor::from_channels(&[&sample.input_sample, &sample.input_history]);
    let (theta, cache) = model.localize_cached(&input);
    let warped = sampler::warp_tensor(&input, &theta);

    let plane = input.h * input.w;
    let target = sample.target_history.data();
    let predicted = &warped.data[plane..]; // history channel

    let mut loss = 0.0;
    let mut grad_out = Heatmap::zeros(input.h, input.w);
    let n = plane as f64;
    for (i, (&t, &q_raw)) in target.iter().zip(predicted).enumerate() {
        let q = q_raw.clamp(BCE_EPS, 1.0 - BCE_EPS);
        loss -= t * crate::math::ln(q) + (1.0 - t) * crate::math::ln(1.0 - q);
        // clamped cells carry no gradient
        if q_raw > BCE_EPS && q_raw < 1.0 - BCE_EPS {
            grad_out.data_mut()[i] = (-t / q + (1.0 - t) / (1.0 - q)) / n;
        }
    }
    loss /= n;

    let mut grad_theta = [0.0; 6];
    sampler::accumulate_theta_grad(&input, 1, &theta, &grad_out, &mut grad_theta);
    let flat = model.backward_from_theta(&cache, &grad_theta);
    (loss, flat)
}

/// Trains a fresh model with minibatch SGD + momentum. Shuffling and
/// conv initialization both come from `rng_handle`, so the outcome is a
/// pure function of the dataset, config and the RNG state.
pub fn train<R: RngCore + ?Sized>(
    dataset: &[PtTrainingSample],
    cfg: &PtTrainConfig,
    rng_handle: &mut R,
) -> Result<TrainOutcome, PtError> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(PtError::EmptyDataset);
    }

    let mut model = PtModel::new(&cfg.channels, rng_handle);
    let nparams = model.param_count();
    let mut velocity = vec![0.0; nparams];
    let mut params = model.params();
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut loss_trace = Vec::with_capacity(cfg.epochs);
    let mut lr = cfg.learning_rate;

    for _epoch in 0..cfg.epochs {
        rng::shuffle(rng_handle, &mut order);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let mut grad = vec![0.0; nparams];
            let mut batch_loss = 0.0;
            for &i in chunk {
                let (loss, g) = loss_and_gradients(&model, &dataset[i]);
                batch_loss += loss;
                for (acc, gi) in grad.iter_mut().zip(&g) {
                    *acc += gi;
                }
            }
            let mut scale = 1.0 / chunk.len() as f64;
            if let Some(max_norm) = cfg.grad_clip {
                // cells near the BCE clamp emit gradients of order
                // 1/eps; without a norm bound a single such batch can
                // throw the warp permanently off-grid
                let norm = math::sqrt(grad.iter().map(|g| g * g * scale * scale).sum());
                if norm > max_norm {
                    scale *= max_norm / norm;
                }
            }
            for ((p, v), g) in params.iter_mut().zip(&mut velocity).zip(&grad) {
                *v = cfg.momentum * *v + g * scale;
                *p -= lr * *v;
            }
            model.set_params(&params);
            epoch_loss += batch_loss / chunk.len() as f64;
            batches += 1;
        }
        loss_trace.push(epoch_loss / batches as f64);
        lr *= cfg.lr_decay;
    }

    Ok(TrainOutcome { model, loss_trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{PoG, ScreenSpec};
    use crate::raster::{rasterize_point, HeatmapSpec};
    use rand_core::SeedableRng;

    fn small_spec() -> (ScreenSpec, HeatmapSpec) {
        (ScreenSpec::eve_default(), HeatmapSpec { h: 12, w: 16, sigma: 1.5 })
    }

    fn random_map<R: RngCore>(h: usize, w: usize, rng: &mut R) -> Heatmap {
        let mut m = Heatmap::zeros(h, w);
        for v in m.data_mut() {
            // keep values in the BCE interior
            *v = crate::rng::uniform(rng, 0.05, 0.95);
        }
        m
    }

    fn random_sample<R: RngCore>(h: usize, w: usize, rng: &mut R) -> PtTrainingSample {
        PtTrainingSample {
            input_sample: random_map(h, w, rng),
            input_history: random_map(h, w, rng),
            target_history: random_map(h, w, rng),
        }
    }

    /// Central finite-difference gradient check.
    fn fd_check(model: &mut PtModel, sample: &PtTrainingSample, step: f64) -> (usize, usize) {
        let (_, analytic) = loss_and_gradients(model, sample);
        let mut params = model.params();
        let mut ok = 0usize;
        for i in 0..params.len() {
            let orig = params[i];
            params[i] = orig + step;
            model.set_params(&params);
            let (lp, _) = loss_and_gradients(model, sample);
            params[i] = orig - step;
            model.set_params(&params);
            let (lm, _) = loss_and_gradients(model, sample);
            params[i] = orig;
            let numeric = (lp - lm) / (2.0 * step);
            let denom = analytic[i].abs().max(numeric.abs()).max(1e-8);
            if (analytic[i] - numeric).abs() / denom < 1e-3 {
                ok += 1;
            } else if std::env::var_os("FD_DEBUG").is_some() {
                std::eprintln!(
                    "param {i}: analytic {} numeric {}",
                    analytic[i],
                    numeric
                );
            }
        }
        model.set_params(&params);
        (ok, params.len())
    }

    #[test]
    fn gradients_match_finite_differences() {
        let (_, hs) = small_spec();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(41);
        for trial in 0..5 {
            let mut model = PtModel::new(&[4, 8], &mut rng);
            model.randomize_head(&mut rng, 0.02);
            let sample = random_sample(hs.h, hs.w, &mut rng);
            let (ok, total) = fd_check(&mut model, &sample, 1e-5);
            assert!(
                ok as f64 >= 0.99 * total as f64,
                "trial {trial}: {ok}/{total} parameters within tolerance"
            );
        }
    }

    #[test]
    fn fresh_model_conv_gradients_are_zero() {
        // With a zero-weight head, theta ignores the features, so no
        // gradient reaches the conv stages.
        let (_, hs) = small_spec();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        let model = PtModel::new(&[4, 8], &mut rng);
        let sample = random_sample(hs.h, hs.w, &mut rng);
        let (_, grad) = loss_and_gradients(&model, &sample);
        let conv_params: usize =
            model.convs.iter().map(|c| c.weights.len() + c.bias.len()).sum();
        assert!(grad[..conv_params].iter().all(|&g| g == 0.0));
    }

    #[test]
    fn gradient_vanishes_at_global_minimum() {
        let (s, hs) = small_spec();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(43);
        let model = PtModel::new(&[4, 8], &mut rng);
        let hist = rasterize_point(&PoG::cm(20.0, 12.0), &s, &hs);
        // identity model: warped history == input history == target
        let sample = PtTrainingSample {
            input_sample: rasterize_point(&PoG::cm(40.0, 20.0), &s, &hs),
            input_history: hist.clone(),
            target_history: hist,
        };
        let (_, grad) = loss_and_gradients(&model, &sample);
        let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        assert!(norm < 1e-6, "gradient norm {norm}");
    }

    #[test]
    fn small_step_never_increases_loss() {
        let (_, hs) = small_spec();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(44);
        for _ in 0..10 {
            let mut model = PtModel::new(&[4, 8], &mut rng);
            model.randomize_head(&mut rng, 0.02);
            let sample = random_sample(hs.h, hs.w, &mut rng);
            let (loss0, grad) = loss_and_gradients(&model, &sample);
            let mut params = model.params();
            for (p, g) in params.iter_mut().zip(&grad) {
                *p -= 1e-4 * g;
            }
            model.set_params(&params);
            let (loss1, _) = loss_and_gradients(&model, &sample);
            assert!(loss1 <= loss0 + 1e-12, "{loss1} > {loss0}");
        }
    }

    #[test]
    fn training_is_deterministic_given_seed() {
        let (_, hs) = small_spec();
        let mut data_rng = rand_chacha::ChaCha8Rng::seed_from_u64(45);
        let dataset: Vec<PtTrainingSample> =
            (0..8).map(|_| random_sample(hs.h, hs.w, &mut data_rng)).collect();
        let cfg = PtTrainConfig {
            epochs: 3,
            batch_size: 4,
            channels: vec![4, 8],
            ..PtTrainConfig::default()
        };
        let run = |seed: u64| {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            train(&dataset, &cfg, &mut rng).unwrap()
        };
        let a = run(7);
        let b = run(7);
        assert_eq!(a.loss_trace, b.loss_trace);
        assert_eq!(a.model.params(), b.model.params());
        let c = run(8);
        assert_ne!(a.loss_trace, c.loss_trace);
    }

    #[test]
    fn config_validation() {
        let mut cfg = PtTrainConfig::default();
        cfg.epochs = 0;
        assert!(matches!(cfg.validate(), Err(PtError::InvalidConfig(_))));
        cfg = PtTrainConfig::default();
        cfg.momentum = 1.0;
        assert!(cfg.validate().is_err());
        cfg = PtTrainConfig::default();
        cfg.learning_rate = 0.0;
        assert!(cfg.validate().is_err());
        assert!(PtTrainConfig::default().validate().is_ok());

        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(46);
        assert_eq!(
            train(&[], &PtTrainConfig::default(), &mut rng).unwrap_err(),
            PtError::EmptyDataset
        );
    }

    #[test]
    fn already_optimal_dataset_stays_near_identity() {
        let (s, hs) = small_spec();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(47);
        // input == target: identity theta is the optimum
        let dataset: Vec<PtTrainingSample> = (0..6)
            .map(|i| {
                let hist =
                    rasterize_point(&PoG::cm(10.0 + 5.0 * i as f64, 12.0), &s, &hs);
                PtTrainingSample {
                    input_sample: rasterize_point(&PoG::cm(30.0, 15.0), &s, &hs),
                    input_history: hist.clone(),
                    target_history: hist,
                }
            })
            .collect();
        let cfg = PtTrainConfig {
            epochs: 5,
            batch_size: 6,
            channels: vec![4, 8],
            ..PtTrainConfig::default()
        };
        let out = train(&dataset, &cfg, &mut rng).unwrap();
        let first = out.loss_trace[0];
        let last = *out.loss_trace.last().unwrap();
        assert!(last <= first + 1e-9);
        // theta stays near identity on a fresh input
        let input = Tensor::from_channels(&[
            &rasterize_point(&PoG::cm(25.0, 10.0), &s, &hs),
            &rasterize_point(&PoG::cm(25.0, 10.0), &s, &hs),
        ]);
        let (affine, _) = out.model.localize(&input);
        for (r, row) in affine.m.iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                let expect = if r == c { 1.0 } else { 0.0 };
                assert!((v - expect).abs() < 0.05, "theta[{r}][{c}] = {v}");
            }
        }
    }
}
