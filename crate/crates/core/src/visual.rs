//! Next-frame predictor over image windows: a convolutional encoder-decoder
//! whose bottleneck doubles as the visual feature vector. A pluggable
//! extractor interface also admits precomputed feature files in place of the
//! built-in encoder.

use serde::{Deserialize, Serialize};

use crate::dataset::{ImageFrame, Sample};
use crate::error::{Error, Result};
use crate::io::{Checkpoint, FeatureFile};
use crate::nn::{mse_loss, Gradients, LayerSpec, Network, OptimizerState};
use crate::parallel;
use crate::tensor::Tensor;

/// Bottleneck embedding produced by the visual encoder.
pub type FeatureVector = Vec<f32>;

/// Mini-batch SGD settings shared by the trainable models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f32,
    pub momentum: f32,
    pub weight_decay: f32,
    pub epochs: usize,
    pub batch_size: usize,
    /// Early stopping: give up after this many epochs without a new best
    /// validation loss, then restore the best snapshot.
    pub patience: usize,
    pub seed: u64,
    /// Deterministic stride subsampling of the training set, if set.
    pub max_train_samples: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            momentum: 0.9,
            weight_decay: 1e-5,
            epochs: 30,
            batch_size: 32,
            patience: 10,
            seed: 0,
            max_train_samples: None,
        }
    }
}

/// Per-epoch objective values from one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub best_epoch: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisualConfig {
    pub bottleneck: usize,
    pub window: usize,
    pub encoder_channels: (usize, usize),
    pub decoder_channels: usize,
    pub train: TrainConfig,
}

impl Default for VisualConfig {
    fn default() -> Self {
        Self {
            bottleneck: 64,
            window: 3,
            encoder_channels: (6, 12),
            decoder_channels: 2,
            train: TrainConfig::default(),
        }
    }
}

/// Trained encoder-decoder with fixed frame geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct VisualModel {
    pub encoder: Network,
    pub decoder: Network,
    pub bottleneck: usize,
    pub window: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

/// Layer chains for the default architecture at a given frame geometry:
/// two stride-2 convolutions into a dense bottleneck, then a dense
/// re-projection reshaped to the frame and finished by one convolution under
/// a logistic output.
pub fn default_specs(
    config: &VisualConfig,
    channels: usize,
    height: usize,
    width: usize,
) -> Result<(Vec<LayerSpec>, Vec<LayerSpec>)> {
    if height % 4 != 0 || width % 4 != 0 {
        return Err(Error::Config(format!(
            "default visual architecture needs frame extents divisible by 4, got {height}x{width}"
        )));
    }
    let (c1, c2) = config.encoder_channels;
    let dc = config.decoder_channels;
    let (h4, w4) = (height / 4, width / 4);
    let encoder = vec![
        LayerSpec::Conv2d {
            in_channels: config.window * channels,
            out_channels: c1,
            kh: 4,
            kw: 4,
            stride: 2,
            pad: 1,
        },
        LayerSpec::Relu,
        LayerSpec::Conv2d {
            in_channels: c1,
            out_channels: c2,
            kh: 4,
            kw: 4,
            stride: 2,
            pad: 1,
        },
        LayerSpec::Relu,
        LayerSpec::Flatten,
        LayerSpec::Dense {
            in_dim: c2 * h4 * w4,
            out_dim: config.bottleneck,
        },
    ];
    let decoder = vec![
        LayerSpec::Dense {
            in_dim: config.bottleneck,
            out_dim: dc * height * width,
        },
        LayerSpec::Relu,
        LayerSpec::Reshape {
            shape: vec![dc, height, width],
        },
        LayerSpec::Conv2d {
            in_channels: dc,
            out_channels: channels,
            kh: 3,
            kw: 3,
            stride: 1,
            pad: 1,
        },
        LayerSpec::Sigmoid,
    ];
    Ok((encoder, decoder))
}

/// Stack windowed frames along the channel axis: `[n*c, h, w]`.
pub fn stack_window(frames: &[&ImageFrame]) -> Result<Tensor> {
    let Some(first) = frames.first() else {
        return Err(Error::Config("cannot stack an empty frame window".into()));
    };
    let (c, h, w) = first.geometry();
    let mut data = Vec::with_capacity(frames.len() * c * h * w);
    for f in frames {
        if f.geometry() != (c, h, w) {
            return Err(Error::ShapeMismatch(format!(
                "window mixes frame geometries {:?} and {:?}",
                (c, h, w),
                f.geometry()
            )));
        }
        data.extend_from_slice(&f.pixels);
    }
    Tensor::new(vec![frames.len() * c, h, w], data)
}

pub fn frame_to_tensor(frame: &ImageFrame) -> Tensor {
    Tensor::new(
        vec![frame.channels, frame.height, frame.width],
        frame.pixels.clone(),
    )
    .expect("frame buffer matches geometry")
}

fn sample_window_tensor(s: &Sample) -> Result<Tensor> {
    let frames: Vec<&ImageFrame> = s.past_images().collect();
    stack_window(&frames)
}

/// Per-pixel mean of the target frames; the analytic MSE-minimizing constant
/// predictor for a sample set.
pub fn mean_target_frame(samples: &[Sample]) -> Result<ImageFrame> {
    let Some(first) = samples.first() else {
        return Err(Error::Config("mean frame of an empty sample set".into()));
    };
    let (c, h, w) = first.target_next_image().geometry();
    let mut acc = vec![0.0f64; c * h * w];
    for s in samples {
        let img = s.target_next_image();
        if img.geometry() != (c, h, w) {
            return Err(Error::ShapeMismatch("sample set mixes frame geometries".into()));
        }
        for (a, &p) in acc.iter_mut().zip(&img.pixels) {
            *a += p as f64;
        }
    }
    let n = samples.len() as f64;
    Ok(ImageFrame {
        channels: c,
        height: h,
        width: w,
        pixels: acc.into_iter().map(|v| (v / n) as f32).collect(),
    })
}

// ---------------------------------------------------------------------------
// training
// ---------------------------------------------------------------------------

/// Deterministic stride subsampling down to at most `max` items.
pub(crate) fn stride_subsample<T: Copy>(items: &[T], max: Option<usize>) -> Vec<T> {
    match max {
        Some(m) if m > 0 && items.len() > m => {
            let stride = items.len() as f64 / m as f64;
            (0..m).map(|i| items[(i as f64 * stride) as usize]).collect()
        }
        _ => items.to_vec(),
    }
}

/// Mean MSE of a network over (input, target) pairs, deterministic chunked
/// reduction.
pub(crate) fn network_dataset_loss(net: &Network, data: &[(Tensor, Tensor)]) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Config("loss over an empty dataset".into()));
    }
    let sum = parallel::chunked_map_reduce(
        data,
        16,
        |chunk| -> Result<f64> {
            let mut s = 0.0;
            for (x, t) in chunk {
                let y = net.infer(x)?;
                s += mse_loss(&y, t)?.0;
            }
            Ok(s)
        },
        |a, b| Ok(a? + b?),
        Ok(0.0),
    )?;
    Ok(sum / data.len() as f64)
}

fn batch_gradients(net: &Network, batch: &[&(Tensor, Tensor)]) -> Result<(Gradients, f64)> {
    let input_shape = batch[0].0.shape().to_vec();
    let (mut total, loss_sum) = parallel::chunked_map_reduce(
        batch,
        8,
        |chunk| -> Result<(Gradients, f64)> {
            let mut acc = net.zero_grads(&input_shape);
            let mut loss_sum = 0.0;
            for (x, t) in chunk.iter().copied() {
                let (y, cache) = net.forward(x)?;
                let (loss, lgrad) = mse_loss(&y, t)?;
                loss_sum += loss;
                let g = net.backward(&cache, &lgrad)?;
                acc.add_assign(&g)?;
            }
            Ok((acc, loss_sum))
        },
        |a, b| {
            let (mut ga, la) = a?;
            let (gb, lb) = b?;
            ga.add_assign(&gb)?;
            Ok((ga, la + lb))
        },
        Ok((net.zero_grads(&input_shape), 0.0)),
    )?;
    total.scale(1.0 / batch.len() as f32);
    Ok((total, loss_sum / batch.len() as f64))
}

/// Mini-batch SGD with momentum, early stopping on validation MSE, and
/// best-snapshot restoration. Shared by the visual model and the fusion
/// heads (which train plain networks over precomputed inputs).
pub(crate) fn fit_network(
    net: &mut Network,
    train: &[(Tensor, Tensor)],
    val: &[(Tensor, Tensor)],
    cfg: &TrainConfig,
) -> Result<TrainLog> {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;

    if train.is_empty() || val.is_empty() {
        return Err(Error::Config("training needs non-empty train and val sets".into()));
    }
    let mut opt = OptimizerState::sgd_momentum(cfg.learning_rate, cfg.momentum, cfg.weight_decay)?;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(crate::derive_seed(cfg.seed, "batch-order"));

    let mut log = TrainLog {
        train_loss: Vec::new(),
        val_loss: Vec::new(),
        best_epoch: 0,
    };
    let mut best = (f64::INFINITY, net.clone(), 0usize);
    let mut stale = 0usize;
    let batch = cfg.batch_size.max(1);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for ids in order.chunks(batch) {
            let slice: Vec<&(Tensor, Tensor)> = ids.iter().map(|&i| &train[i]).collect();
            let (grads, loss) = batch_gradients(net, &slice)?;
            epoch_loss += loss;
            batches += 1;
            let mut params = net.params_mut();
            opt.step(&mut params, &grads.param_grads())?;
        }
        let train_loss = epoch_loss / batches as f64;
        if !train_loss.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        let val_loss = network_dataset_loss(net, val)?;
        log.train_loss.push(train_loss);
        log.val_loss.push(val_loss);

        if val_loss < best.0 {
            best = (val_loss, net.clone(), epoch);
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    *net = best.1;
    log.best_epoch = best.2;
    Ok(log)
}

/// Train the next-frame predictor; returns the parameter snapshot with the
/// best validation loss.
pub fn train_visual(
    config: &VisualConfig,
    train_samples: &[Sample],
    val_samples: &[Sample],
) -> Result<(VisualModel, TrainLog)> {
    use rand::SeedableRng;

    let Some(first) = train_samples.first() else {
        return Err(Error::Config("visual training needs at least one sample".into()));
    };
    if first.window() != config.window {
        return Err(Error::Config(format!(
            "sample window {} does not match configured window {}",
            first.window(),
            config.window
        )));
    }
    let (c, h, w) = first.target_next_image().geometry();
    let (enc_specs, dec_specs) = default_specs(config, c, h, w)?;
    let enc_len = enc_specs.len();
    let mut rng =
        rand_chacha::ChaCha8Rng::seed_from_u64(crate::derive_seed(config.train.seed, "visual-init"));
    let mut specs = enc_specs;
    specs.extend(dec_specs);
    let mut net = Network::init(&specs, &mut rng);

    let prep = |samples: &[Sample]| -> Result<Vec<(Tensor, Tensor)>> {
        samples
            .iter()
            .map(|s| {
                Ok((
                    sample_window_tensor(s)?,
                    frame_to_tensor(s.target_next_image()),
                ))
            })
            .collect()
    };
    let train_used = stride_subsample(train_samples, config.train.max_train_samples);
    let train_data = prep(&train_used)?;
    let val_data = prep(val_samples)?;

    let log = fit_network(&mut net, &train_data, &val_data, &config.train)?;

    let layers = net.layers;
    let (enc_layers, dec_layers) = {
        let mut enc = layers;
        let dec = enc.split_off(enc_len);
        (enc, dec)
    };
    Ok((
        VisualModel {
            encoder: Network::new(enc_layers),
            decoder: Network::new(dec_layers),
            bottleneck: config.bottleneck,
            window: config.window,
            channels: c,
            height: h,
            width: w,
        },
        log,
    ))
}

impl VisualModel {
    /// Predict the next frame and expose the bottleneck embedding.
    /// Pixels are clamped to [0, 1].
    pub fn predict_next_frame(&self, window: &[&ImageFrame]) -> Result<(ImageFrame, FeatureVector)> {
        if window.len() != self.window {
            return Err(Error::ShapeMismatch(format!(
                "expected a window of {} frames, got {}",
                self.window,
                window.len()
            )));
        }
        for f in window {
            if f.geometry() != (self.channels, self.height, self.width) {
                return Err(Error::ShapeMismatch(format!(
                    "frame geometry {:?} does not match model geometry {:?}",
                    f.geometry(),
                    (self.channels, self.height, self.width)
                )));
            }
        }
        let stacked = stack_window(window)?;
        let bottleneck = self.encoder.infer(&stacked)?;
        let frame = self.decoder.infer(&bottleneck)?;
        let pixels = frame.data().iter().map(|v| v.clamp(0.0, 1.0)).collect();
        Ok((
            ImageFrame {
                channels: self.channels,
                height: self.height,
                width: self.width,
                pixels,
            },
            bottleneck.into_data(),
        ))
    }

    /// The combined encoder-decoder chain (training/check view).
    pub fn combined_network(&self) -> Network {
        let mut layers = self.encoder.layers.clone();
        layers.extend(self.decoder.layers.clone());
        Network::new(layers)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        #[derive(Serialize)]
        struct VisualMeta<'a> {
            model_kind: &'a str,
            bottleneck: usize,
            window: usize,
            channels: usize,
            height: usize,
            width: usize,
            encoder: Vec<LayerSpec>,
            decoder: Vec<LayerSpec>,
        }
        let mut tensors = self.encoder.param_tensors();
        tensors.extend(self.decoder.param_tensors());
        let mut ckpt = Checkpoint::new(tensors);
        ckpt.add_section(
            "meta",
            serde_json::to_vec(&VisualMeta {
                model_kind: "visual",
                bottleneck: self.bottleneck,
                window: self.window,
                channels: self.channels,
                height: self.height,
                width: self.width,
                encoder: self.encoder.specs(),
                decoder: self.decoder.specs(),
            })
            .expect("meta serializes"),
        );
        ckpt
    }

    pub fn from_checkpoint(ckpt: &Checkpoint, path: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct VisualMeta {
            model_kind: String,
            bottleneck: usize,
            window: usize,
            channels: usize,
            height: usize,
            width: usize,
            encoder: Vec<LayerSpec>,
            decoder: Vec<LayerSpec>,
        }
        let meta: VisualMeta = serde_json::from_slice(ckpt.require_section("meta", path)?)?;
        if meta.model_kind != "visual" {
            return Err(Error::format(
                path,
                format!("checkpoint holds a {:?} model, expected visual", meta.model_kind),
            ));
        }
        let mut params = ckpt.tensors.clone().into_iter();
        let encoder = Network::from_specs_and_params(&meta.encoder, &mut params, path)?;
        let decoder = Network::from_specs_and_params(&meta.decoder, &mut params, path)?;
        if params.next().is_some() {
            return Err(Error::format(path, "checkpoint holds extra tensors"));
        }
        Ok(Self {
            encoder,
            decoder,
            bottleneck: meta.bottleneck,
            window: meta.window,
            channels: meta.channels,
            height: meta.height,
            width: meta.width,
        })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?, &path.display().to_string())
    }
}

// ---------------------------------------------------------------------------
// feature extraction backends
// ---------------------------------------------------------------------------

/// A source of per-sample visual feature vectors.
pub trait FeatureExtractor {
    fn dim(&self) -> usize;
    /// Deterministic per (source, key, window). Encoder-backed sources use
    /// the window; file-backed sources use the key.
    fn extract(&self, key: &str, window: &[&ImageFrame]) -> Result<FeatureVector>;
    fn name(&self) -> String;
}

impl FeatureExtractor for VisualModel {
    fn dim(&self) -> usize {
        self.bottleneck
    }

    fn extract(&self, _key: &str, window: &[&ImageFrame]) -> Result<FeatureVector> {
        Ok(self.predict_next_frame(window)?.1)
    }

    fn name(&self) -> String {
        "builtin".into()
    }
}

/// Precomputed features loaded from a `DMLF` file, keyed by sample.
#[derive(Debug, Clone)]
pub struct FileFeatures {
    file: FeatureFile,
    source: String,
}

impl FileFeatures {
    pub fn new(file: FeatureFile, source: impl Into<String>) -> Self {
        Self {
            file,
            source: source.into(),
        }
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Ok(Self {
            file: FeatureFile::load(path)?,
            source: path.display().to_string(),
        })
    }
}

impl FeatureExtractor for FileFeatures {
    fn dim(&self) -> usize {
        self.file.dim
    }

    fn extract(&self, key: &str, _window: &[&ImageFrame]) -> Result<FeatureVector> {
        self.file
            .get(key)
            .map(|v| v.to_vec())
            .ok_or_else(|| {
                Error::format(
                    &self.source,
                    format!("feature file has no entry for sample key {key:?}"),
                )
            })
    }

    fn name(&self) -> String {
        "file".into()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{window_all, ActionVector, RobotState, Step, Trajectory};
    use crate::nn::gradcheck::check_network_gradients;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn blob_frame(cx: f32, cy: f32, size: usize) -> ImageFrame {
        let mut pixels = vec![0.0f32; size * size];
        for y in 0..size {
            for x in 0..size {
                let d2 = (x as f32 - cx).powi(2) + (y as f32 - cy).powi(2);
                pixels[y * size + x] = (-d2 / 4.0).exp();
            }
        }
        ImageFrame {
            channels: 1,
            height: size,
            width: size,
            pixels,
        }
    }

    fn dummy_state() -> RobotState {
        RobotState {
            joint_positions: vec![0.0; 2],
            joint_velocities: vec![0.0; 2],
            joint_efforts: vec![0.0; 2],
            gripper: 0.5,
        }
    }

    /// Episodes whose frames are constant per trajectory (a blob at a random
    /// spot), so the next frame always equals the last input frame.
    fn blob_dataset(n: usize, steps: usize, size: usize, seed: u64) -> Vec<Trajectory> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let cx = rng.gen_range(2.0..size as f32 - 2.0);
                let cy = rng.gen_range(2.0..size as f32 - 2.0);
                Trajectory {
                    id: format!("b{i:03}"),
                    environment_id: "blob".into(),
                    steps: (0..steps)
                        .map(|_| Step {
                            image: blob_frame(cx, cy, size),
                            state: dummy_state(),
                            action: ActionVector::new(vec![0.0]),
                        })
                        .collect(),
                }
            })
            .collect()
    }

    fn zero_dataset(n: usize, steps: usize, size: usize) -> Vec<Trajectory> {
        (0..n)
            .map(|i| Trajectory {
                id: format!("z{i:03}"),
                environment_id: "zero".into(),
                steps: (0..steps)
                    .map(|_| Step {
                        image: ImageFrame::zeros(1, size, size),
                        state: dummy_state(),
                        action: ActionVector::new(vec![0.0]),
                    })
                    .collect(),
            })
            .collect()
    }

    fn small_config(seed: u64) -> VisualConfig {
        VisualConfig {
            bottleneck: 16,
            window: 3,
            encoder_channels: (4, 6),
            decoder_channels: 2,
            train: TrainConfig {
                learning_rate: 0.2,
                momentum: 0.9,
                weight_decay: 0.0,
                epochs: 40,
                batch_size: 16,
                patience: 40,
                seed,
                max_train_samples: None,
            },
        }
    }

    #[test]
    fn constant_zero_targets_are_learned() {
        let trajs = zero_dataset(6, 8, 8);
        let samples = window_all(&trajs, 3).unwrap();
        let (train, val) = samples.split_at(samples.len() - 8);
        let mut cfg = small_config(1);
        cfg.train.epochs = 80;
        cfg.train.patience = 80;
        cfg.train.learning_rate = 0.5;
        let (model, log) = train_visual(&cfg, train, val).unwrap();
        let best_val = log.val_loss.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(best_val < 1e-3, "val mse {best_val} should be < 1e-3");
        let window: Vec<&ImageFrame> = train[0].past_images().collect();
        let (frame, _) = model.predict_next_frame(&window).unwrap();
        assert!(frame.pixels.iter().all(|&p| p < 0.05));
    }

    #[test]
    fn beats_mean_frame_baseline_on_copy_task() {
        let trajs = blob_dataset(24, 6, 8, 3);
        let samples = window_all(&trajs, 3).unwrap();
        let n_train = samples.len() * 3 / 4;
        let (train, val) = samples.split_at(n_train);
        let (model, _) = train_visual(&small_config(2), train, val).unwrap();

        // analytic constant-frame oracle, computed from training targets
        let mean = mean_target_frame(train).unwrap();
        let mut model_se = 0.0f64;
        let mut baseline_se = 0.0f64;
        for s in val {
            let window: Vec<&ImageFrame> = s.past_images().collect();
            let (pred, _) = model.predict_next_frame(&window).unwrap();
            for ((p, t), b) in pred
                .pixels
                .iter()
                .zip(&s.target_next_image().pixels)
                .zip(&mean.pixels)
            {
                model_se += ((p - t) as f64).powi(2);
                baseline_se += ((b - t) as f64).powi(2);
            }
        }
        assert!(
            model_se < baseline_se,
            "model mse {model_se} must beat mean-frame baseline {baseline_se}"
        );
    }

    #[test]
    fn training_is_deterministic_per_seed() {
        let trajs = blob_dataset(6, 6, 8, 5);
        let samples = window_all(&trajs, 3).unwrap();
        let (train, val) = samples.split_at(12);
        let mut cfg = small_config(9);
        cfg.train.epochs = 5;
        let (ma, la) = train_visual(&cfg, train, val).unwrap();
        let (mb, lb) = train_visual(&cfg, train, val).unwrap();
        assert_eq!(la, lb);
        assert_eq!(ma, mb);
    }

    #[test]
    fn zeroed_decoder_emits_half_gray() {
        let trajs = zero_dataset(3, 5, 8);
        let samples = window_all(&trajs, 3).unwrap();
        let mut cfg = small_config(4);
        cfg.train.epochs = 1;
        let (mut model, _) = train_visual(&cfg, &samples[..4], &samples[4..6]).unwrap();
        for p in model.decoder.params_mut() {
            for v in p.data_mut() {
                *v = 0.0;
            }
        }
        let window: Vec<&ImageFrame> = samples[0].past_images().collect();
        let (frame, _) = model.predict_next_frame(&window).unwrap();
        for &p in &frame.pixels {
            assert_eq!(p, 0.5, "sigmoid(0) = 0.5");
        }
    }

    #[test]
    fn prediction_is_pure_and_validates_geometry() {
        let trajs = blob_dataset(4, 5, 8, 6);
        let samples = window_all(&trajs, 3).unwrap();
        let mut cfg = small_config(5);
        cfg.train.epochs = 2;
        let (model, _) = train_visual(&cfg, &samples[..4], &samples[4..6]).unwrap();
        let window: Vec<&ImageFrame> = samples[0].past_images().collect();
        let (fa, ba) = model.predict_next_frame(&window).unwrap();
        let (fb, bb) = model.predict_next_frame(&window).unwrap();
        assert_eq!(fa, fb);
        assert_eq!(ba, bb);
        assert!(fa.pixels.iter().all(|&p| (0.0..=1.0).contains(&p)));

        let bad = ImageFrame::zeros(1, 16, 16);
        assert!(model.predict_next_frame(&[&bad, &bad, &bad]).is_err());
        assert!(model.predict_next_frame(&window[..2]).is_err());
    }

    #[test]
    fn encoder_extractor_matches_bottleneck_and_file_backend_round_trips() {
        let trajs = blob_dataset(4, 5, 8, 7);
        let samples = window_all(&trajs, 3).unwrap();
        let mut cfg = small_config(6);
        cfg.train.epochs = 2;
        let (model, _) = train_visual(&cfg, &samples[..4], &samples[4..6]).unwrap();

        let window: Vec<&ImageFrame> = samples[0].past_images().collect();
        let via_extract = model.extract(&samples[0].key(), &window).unwrap();
        let (_, via_predict) = model.predict_next_frame(&window).unwrap();
        assert_eq!(via_extract, via_predict);
        assert_eq!(via_extract.len(), model.dim());

        let mut file = FeatureFile::new(3);
        file.push("k:0", vec![1.0, 2.0, 3.0]).unwrap();
        let backend = FileFeatures::new(file, "mem");
        assert_eq!(backend.extract("k:0", &window).unwrap(), vec![1.0, 2.0, 3.0]);
        assert_eq!(backend.dim(), 3);
        assert!(backend.extract("missing", &window).is_err());
    }

    #[test]
    fn checkpoint_round_trips_bit_exactly() {
        let trajs = blob_dataset(4, 5, 8, 8);
        let samples = window_all(&trajs, 3).unwrap();
        let mut cfg = small_config(7);
        cfg.train.epochs = 2;
        let (model, _) = train_visual(&cfg, &samples[..4], &samples[4..6]).unwrap();
        let bytes = model.to_checkpoint().to_bytes();
        let back = VisualModel::from_checkpoint(
            &crate::io::Checkpoint::from_bytes(&bytes, "mem").unwrap(),
            "mem",
        )
        .unwrap();
        assert_eq!(model, back);
        assert_eq!(bytes, back.to_checkpoint().to_bytes());
    }

    #[test]
    fn full_encoder_decoder_passes_gradient_check() {
        let cfg = VisualConfig {
            bottleneck: 6,
            window: 2,
            encoder_channels: (2, 3),
            decoder_channels: 1,
            train: TrainConfig::default(),
        };
        let (enc, dec) = default_specs(&cfg, 1, 8, 8).unwrap();
        let mut specs = enc;
        specs.extend(dec);
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let net = Network::init(&specs, &mut rng);
        let n_in: usize = 2 * 8 * 8;
        let input = Tensor::new(
            vec![2, 8, 8],
            (0..n_in).map(|_| rng.gen_range(0.0..1.0)).collect(),
        )
        .unwrap();
        let target = Tensor::new(
            vec![1, 8, 8],
            (0..64).map(|_| rng.gen_range(0.0..1.0)).collect(),
        )
        .unwrap();
        let report = check_network_gradients(&net, &input, &target, 1e-3, 1e-8).unwrap();
        assert!(
            report.max_rel_err < 1e-3,
            "visual net gradcheck: {}",
            report.max_rel_err
        );
    }
}
