//! Late fusion: freeze the trained visual and state models, merge their
//! outputs (visual first, state second), and train a head that emits the
//! action vector. The default head convolves the predicted frame and injects
//! the predicted next state after the flatten; an MLP head concatenates the
//! bottleneck features with the state instead.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::{ActionVector, ImageFrame, Normalizer, RobotState, Sample, Trajectory};
use crate::error::{Error, Result};
use crate::io::Checkpoint;
use crate::nn::{mse_loss, Cache, Gradients, LayerSpec, Network, OptimizerState};
use crate::parallel;
use crate::state::{StateModel, StateModelKind};
use crate::tensor::Tensor;
use crate::visual::{
    frame_to_tensor, stack_window, FeatureExtractor, FileFeatures, TrainConfig, TrainLog,
    VisualModel,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadKind {
    Conv,
    Mlp,
}

impl std::str::FromStr for HeadKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "conv" => Ok(HeadKind::Conv),
            "mlp" => Ok(HeadKind::Mlp),
            other => Err(Error::Config(format!("unknown head kind {other:?}"))),
        }
    }
}

/// Which modalities feed the head; the unimodal variants are the ablation
/// baselines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Modality {
    Both,
    ImageOnly,
    StateOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionConfig {
    pub head: HeadKind,
    pub modality: Modality,
    pub trunk_channels: (usize, usize),
    pub hidden: usize,
    pub train: TrainConfig,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            head: HeadKind::Conv,
            modality: Modality::Both,
            trunk_channels: (6, 8),
            hidden: 64,
            train: TrainConfig::default(),
        }
    }
}

/// Fused representation entering the trainable head.
#[derive(Debug, Clone, PartialEq)]
pub enum FusedInput {
    /// MLP path: one flat vector, visual features first, state second.
    Vector(Vec<f32>),
    /// Conv path: the predicted frame plus the state vector appended after
    /// the trunk flatten.
    SpatialPlusState { frame: Tensor, state: Vec<f32> },
}

/// Output of a frozen upstream model entering fusion.
#[derive(Debug, Clone, PartialEq)]
pub enum VisualTerm {
    /// Predicted next frame (spatial), for the conv head.
    Frame(Tensor),
    /// Bottleneck or file-backed feature vector, for the MLP head.
    Features(Vec<f32>),
}

/// Merge one visual output with one state output. Concatenation order is
/// fixed: visual first, state second.
pub fn fuse_inputs(visual: &VisualTerm, state: &[f32], head_kind: HeadKind) -> Result<FusedInput> {
    match (head_kind, visual) {
        (HeadKind::Mlp, VisualTerm::Features(f)) => {
            let mut v = Vec::with_capacity(f.len() + state.len());
            v.extend_from_slice(f);
            v.extend_from_slice(state);
            Ok(FusedInput::Vector(v))
        }
        (HeadKind::Conv, VisualTerm::Frame(frame)) => Ok(FusedInput::SpatialPlusState {
            frame: frame.clone(),
            state: state.to_vec(),
        }),
        (HeadKind::Mlp, VisualTerm::Frame(_)) => Err(Error::Config(
            "mlp head fuses feature vectors, got a spatial frame".into(),
        )),
        (HeadKind::Conv, VisualTerm::Features(_)) => Err(Error::Config(
            "conv head fuses a predicted frame, got a feature vector".into(),
        )),
    }
}

/// Trainable late-fusion head. The trunk is empty for MLP and state-only
/// variants; the dense chain consumes `[trunk flatten | state]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionHead {
    pub trunk: Network,
    pub dense: Network,
    pub head_kind: HeadKind,
    pub modality: Modality,
    pub visual_dim: usize,
    pub state_dim: usize,
    pub action_dim: usize,
}

pub struct HeadCache {
    trunk: Option<Cache>,
    dense: Cache,
}

pub struct HeadGrads {
    pub trunk: Option<Gradients>,
    pub dense: Gradients,
}

impl FusionHead {
    /// Fresh head for a given input geometry.
    pub fn init(
        config: &FusionConfig,
        frame_geometry: Option<(usize, usize, usize)>,
        feature_dim: usize,
        state_dim: usize,
        action_dim: usize,
    ) -> Result<Self> {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(crate::derive_seed(
            config.train.seed,
            "fusion-init",
        ));
        let use_visual = config.modality != Modality::StateOnly;
        let use_state = config.modality != Modality::ImageOnly;
        let state_dim = if use_state { state_dim } else { 0 };

        let (trunk_specs, visual_dim) = match (config.head, use_visual) {
            (_, false) => (Vec::new(), 0),
            (HeadKind::Mlp, true) => (Vec::new(), feature_dim),
            (HeadKind::Conv, true) => {
                let (c, h, w) = frame_geometry.ok_or_else(|| {
                    Error::Config("conv head needs the predicted-frame geometry".into())
                })?;
                if h % 4 != 0 || w % 4 != 0 {
                    return Err(Error::Config(format!(
                        "conv head needs frame extents divisible by 4, got {h}x{w}"
                    )));
                }
                let (t1, t2) = config.trunk_channels;
                let specs = vec![
                    LayerSpec::Conv2d {
                        in_channels: c,
                        out_channels: t1,
                        kh: 4,
                        kw: 4,
                        stride: 2,
                        pad: 1,
                    },
                    LayerSpec::Relu,
                    LayerSpec::Conv2d {
                        in_channels: t1,
                        out_channels: t2,
                        kh: 4,
                        kw: 4,
                        stride: 2,
                        pad: 1,
                    },
                    LayerSpec::Relu,
                    LayerSpec::Flatten,
                ];
                (specs, t2 * (h / 4) * (w / 4))
            }
        };
        let fused_dim = visual_dim + state_dim;
        if fused_dim == 0 {
            return Err(Error::Config("fusion head has no inputs".into()));
        }
        let dense_specs = vec![
            LayerSpec::Dense {
                in_dim: fused_dim,
                out_dim: config.hidden,
            },
            LayerSpec::Relu,
            LayerSpec::Dense {
                in_dim: config.hidden,
                out_dim: action_dim,
            },
        ];
        Ok(Self {
            trunk: Network::init(&trunk_specs, &mut rng),
            dense: Network::init(&dense_specs, &mut rng),
            head_kind: config.head,
            modality: config.modality,
            visual_dim,
            state_dim,
            action_dim,
        })
    }

    fn dense_input(&self, visual_flat: Option<&Tensor>, state: &[f32]) -> Result<Tensor> {
        let vlen = visual_flat.map(|t| t.len()).unwrap_or(0);
        if vlen != self.visual_dim {
            return Err(Error::ShapeMismatch(format!(
                "head expects {} visual values after flatten, got {}",
                self.visual_dim, vlen
            )));
        }
        if state.len() != self.state_dim {
            return Err(Error::ShapeMismatch(format!(
                "head expects {} state values, got {}",
                self.state_dim,
                state.len()
            )));
        }
        let mut data = Vec::with_capacity(vlen + state.len());
        if let Some(v) = visual_flat {
            data.extend_from_slice(v.data());
        }
        data.extend_from_slice(state);
        Tensor::new(vec![vlen + state.len()], data)
    }

    /// Forward pass to a normalized action vector.
    pub fn forward(&self, input: &FusedInput) -> Result<(Vec<f32>, HeadCache)> {
        match input {
            FusedInput::Vector(v) => {
                let x = Tensor::new(vec![v.len()], v.clone())?;
                if x.len() != self.visual_dim + self.state_dim {
                    return Err(Error::ShapeMismatch(format!(
                        "head expects a fused vector of {} values, got {}",
                        self.visual_dim + self.state_dim,
                        x.len()
                    )));
                }
                let (y, dense) = self.dense.forward(&x)?;
                Ok((
                    y.into_data(),
                    HeadCache { trunk: None, dense },
                ))
            }
            FusedInput::SpatialPlusState { frame, state } => {
                if self.head_kind != HeadKind::Conv {
                    return Err(Error::ShapeMismatch(
                        "spatial fused input on a non-conv head".into(),
                    ));
                }
                let (flat, trunk_cache) = self.trunk.forward(frame)?;
                let x = self.dense_input(Some(&flat), state)?;
                let (y, dense) = self.dense.forward(&x)?;
                Ok((
                    y.into_data(),
                    HeadCache {
                        trunk: Some(trunk_cache),
                        dense,
                    },
                ))
            }
        }
    }

    /// Backward pass; state inputs receive no gradient (upstream models are
    /// frozen).
    pub fn backward(&self, cache: &HeadCache, grad_out: &Tensor) -> Result<HeadGrads> {
        let dense_grads = self.dense.backward(&cache.dense, grad_out)?;
        let trunk_grads = match &cache.trunk {
            None => None,
            Some(tc) => {
                let gin = &dense_grads.input;
                let visual_part =
                    Tensor::new(vec![self.visual_dim], gin.data()[..self.visual_dim].to_vec())?;
                // trunk output is flat (ends with Flatten), so shapes line up
                Some(self.trunk.backward(tc, &visual_part)?)
            }
        };
        Ok(HeadGrads {
            trunk: trunk_grads,
            dense: dense_grads,
        })
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = self.trunk.params_mut();
        p.extend(self.dense.params_mut());
        p
    }

    pub fn param_count(&self) -> usize {
        self.trunk.param_count() + self.dense.param_count()
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        #[derive(Serialize)]
        struct HeadMeta<'a> {
            model_kind: &'a str,
            head_kind: HeadKind,
            modality: Modality,
            visual_dim: usize,
            state_dim: usize,
            action_dim: usize,
            trunk: Vec<LayerSpec>,
            dense: Vec<LayerSpec>,
        }
        let mut tensors = self.trunk.param_tensors();
        tensors.extend(self.dense.param_tensors());
        let mut ckpt = Checkpoint::new(tensors);
        ckpt.add_section(
            "meta",
            serde_json::to_vec(&HeadMeta {
                model_kind: "fusion",
                head_kind: self.head_kind,
                modality: self.modality,
                visual_dim: self.visual_dim,
                state_dim: self.state_dim,
                action_dim: self.action_dim,
                trunk: self.trunk.specs(),
                dense: self.dense.specs(),
            })
            .expect("meta serializes"),
        );
        ckpt
    }

    pub fn from_checkpoint(ckpt: &Checkpoint, path: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct HeadMeta {
            model_kind: String,
            head_kind: HeadKind,
            modality: Modality,
            visual_dim: usize,
            state_dim: usize,
            action_dim: usize,
            trunk: Vec<LayerSpec>,
            dense: Vec<LayerSpec>,
        }
        let meta: HeadMeta = serde_json::from_slice(ckpt.require_section("meta", path)?)?;
        if meta.model_kind != "fusion" {
            return Err(Error::format(
                path,
                format!("checkpoint holds a {:?} model, expected fusion", meta.model_kind),
            ));
        }
        let mut params = ckpt.tensors.clone().into_iter();
        let trunk = Network::from_specs_and_params(&meta.trunk, &mut params, path)?;
        let dense = Network::from_specs_and_params(&meta.dense, &mut params, path)?;
        if params.next().is_some() {
            return Err(Error::format(path, "checkpoint holds extra tensors"));
        }
        Ok(Self {
            trunk,
            dense,
            head_kind: meta.head_kind,
            modality: meta.modality,
            visual_dim: meta.visual_dim,
            state_dim: meta.state_dim,
            action_dim: meta.action_dim,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?, &path.display().to_string())
    }
}

// ---------------------------------------------------------------------------
// frozen-model output precomputation
// ---------------------------------------------------------------------------

/// Visual backend feeding fusion: the built-in encoder-decoder or a
/// precomputed feature file.
pub enum VisualBackend<'a> {
    Builtin(&'a VisualModel),
    File(&'a FileFeatures),
}

impl VisualBackend<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            VisualBackend::Builtin(_) => "builtin",
            VisualBackend::File(_) => "file",
        }
    }

    pub fn feature_dim(&self) -> usize {
        match self {
            VisualBackend::Builtin(m) => m.dim(),
            VisualBackend::File(f) => f.dim(),
        }
    }

    pub fn frame_geometry(&self) -> Option<(usize, usize, usize)> {
        match self {
            VisualBackend::Builtin(m) => Some((m.channels, m.height, m.width)),
            VisualBackend::File(_) => None,
        }
    }
}

/// Frozen-model outputs for one sample.
#[derive(Debug, Clone)]
pub struct PrecomputedInput {
    pub frame: Option<Tensor>,
    pub features: Vec<f32>,
    /// Model-2 predicted next state, in normalized space.
    pub state: Vec<f32>,
}

/// Frozen-model outputs plus normalized action targets for a sample set.
pub struct FusionDataset {
    pub inputs: Vec<PrecomputedInput>,
    pub targets: Vec<Vec<f32>>,
    pub frame_geometry: Option<(usize, usize, usize)>,
    pub feature_dim: usize,
    pub state_dim: usize,
    pub action_dim: usize,
}

/// Run the frozen models over every sample once; fusion heads then train on
/// cached outputs.
pub fn precompute_fusion_inputs(
    visual: &VisualBackend,
    state_model: &StateModel,
    normalizer: &Normalizer,
    samples: &[Sample],
    with_frames: bool,
) -> Result<FusionDataset> {
    if samples.is_empty() {
        return Err(Error::Config("fusion precompute over zero samples".into()));
    }
    let inputs = parallel::chunked_map_reduce(
        samples,
        32,
        |chunk| -> Result<Vec<PrecomputedInput>> {
            let mut out = Vec::with_capacity(chunk.len());
            for s in chunk {
                let window: Vec<&ImageFrame> = s.past_images().collect();
                let (frame, features) = match visual {
                    VisualBackend::Builtin(m) => {
                        let (f, b) = m.predict_next_frame(&window)?;
                        (with_frames.then(|| frame_to_tensor(&f)), b)
                    }
                    VisualBackend::File(f) => (None, f.extract(&s.key(), &window)?),
                };
                let norm_state = normalizer.normalize_state(s.current_state())?;
                let predicted_state = state_model.predict(&norm_state)?;
                out.push(PrecomputedInput {
                    frame,
                    features,
                    state: predicted_state,
                });
            }
            Ok(out)
        },
        |a, b| {
            let mut a = a?;
            a.extend(b?);
            Ok(a)
        },
        Ok(Vec::new()),
    )?;
    let targets: Result<Vec<Vec<f32>>> = samples
        .iter()
        .map(|s| normalizer.normalize_action(s.target_action()))
        .collect();
    Ok(FusionDataset {
        inputs,
        targets: targets?,
        frame_geometry: if with_frames {
            visual.frame_geometry()
        } else {
            None
        },
        feature_dim: visual.feature_dim(),
        state_dim: normalizer.state_dim(),
        action_dim: normalizer.action_dim(),
    })
}

impl FusionDataset {
    /// Materialize (fused input, target) pairs for a head configuration.
    pub fn pairs(&self, head: HeadKind, modality: Modality) -> Result<Vec<(FusedInput, Tensor)>> {
        let mut out = Vec::with_capacity(self.inputs.len());
        for (inp, target) in self.inputs.iter().zip(&self.targets) {
            let state: &[f32] = if modality == Modality::ImageOnly {
                &[]
            } else {
                &inp.state
            };
            let fused = match (head, modality) {
                (_, Modality::StateOnly) => FusedInput::Vector(state.to_vec()),
                (HeadKind::Conv, _) => {
                    let frame = inp.frame.as_ref().ok_or_else(|| {
                        Error::Config("conv head needs precomputed frames".into())
                    })?;
                    FusedInput::SpatialPlusState {
                        frame: frame.clone(),
                        state: state.to_vec(),
                    }
                }
                (HeadKind::Mlp, _) => {
                    let visual = VisualTerm::Features(inp.features.clone());
                    fuse_inputs(&visual, state, HeadKind::Mlp)?
                }
            };
            out.push((fused, Tensor::from_vec(target.clone())));
        }
        Ok(out)
    }
}

// ---------------------------------------------------------------------------
// training
// ---------------------------------------------------------------------------

fn head_batch_gradients(
    head: &FusionHead,
    batch: &[&(FusedInput, Tensor)],
) -> Result<(Option<Gradients>, Gradients, f64)> {
    let zero = || -> Result<(Option<Gradients>, Gradients, f64)> {
        let trunk = if head.trunk.layers.is_empty() {
            None
        } else {
            Some(
                head.trunk
                    .zero_grads(&[head.visual_dim.max(1)]),
            )
        };
        Ok((trunk, head.dense.zero_grads(&[head.visual_dim + head.state_dim]), 0.0))
    };
    let (mut trunk_acc, mut dense_acc, loss_sum) = parallel::chunked_map_reduce(
        batch,
        8,
        |chunk| -> Result<(Option<Gradients>, Gradients, f64)> {
            let (mut ta, mut da, mut ls) = zero()?;
            for (input, target) in chunk.iter().copied() {
                let (pred, cache) = head.forward(input)?;
                let (loss, lgrad) = mse_loss(&Tensor::from_vec(pred), target)?;
                ls += loss;
                let grads = head.backward(&cache, &lgrad)?;
                da.add_assign(&grads.dense)?;
                if let (Some(acc), Some(g)) = (ta.as_mut(), grads.trunk.as_ref()) {
                    acc.add_assign(g)?;
                }
            }
            Ok((ta, da, ls))
        },
        |a, b| {
            let (mut ta, mut da, la) = a?;
            let (tb, db, lb) = b?;
            da.add_assign(&db)?;
            if let (Some(x), Some(y)) = (ta.as_mut(), tb.as_ref()) {
                x.add_assign(y)?;
            }
            Ok((ta, da, la + lb))
        },
        zero(),
    )?;
    let scale = 1.0 / batch.len() as f32;
    dense_acc.scale(scale);
    if let Some(t) = trunk_acc.as_mut() {
        t.scale(scale);
    }
    Ok((trunk_acc, dense_acc, loss_sum / batch.len() as f64))
}

fn head_dataset_loss(head: &FusionHead, data: &[(FusedInput, Tensor)]) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Config("loss over an empty dataset".into()));
    }
    let sum = parallel::chunked_map_reduce(
        data,
        32,
        |chunk| -> Result<f64> {
            let mut s = 0.0;
            for (input, target) in chunk {
                let (pred, _) = head.forward(input)?;
                s += mse_loss(&Tensor::from_vec(pred), target)?.0;
            }
            Ok(s)
        },
        |a, b| Ok(a? + b?),
        Ok(0.0),
    )?;
    Ok(sum / data.len() as f64)
}

/// Train a fusion head on precomputed frozen-model outputs. MSE objective on
/// normalized actions, early stopping on the validation split.
pub fn train_fusion(
    config: &FusionConfig,
    train_set: &FusionDataset,
    val_set: &FusionDataset,
) -> Result<(FusionHead, TrainLog)> {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;

    let mut head = FusionHead::init(
        config,
        train_set.frame_geometry,
        train_set.feature_dim,
        train_set.state_dim,
        train_set.action_dim,
    )?;
    let train_pairs_all = train_set.pairs(config.head, config.modality)?;
    let idx: Vec<usize> = (0..train_pairs_all.len()).collect();
    let kept = crate::visual::stride_subsample(&idx, config.train.max_train_samples);
    let train_pairs: Vec<(FusedInput, Tensor)> = kept
        .into_iter()
        .map(|i| train_pairs_all[i].clone())
        .collect();
    let val_pairs = val_set.pairs(config.head, config.modality)?;
    if train_pairs.is_empty() || val_pairs.is_empty() {
        return Err(Error::Config("fusion training needs non-empty splits".into()));
    }

    let cfg = &config.train;
    let mut opt = OptimizerState::sgd_momentum(cfg.learning_rate, cfg.momentum, cfg.weight_decay)?;
    let mut rng =
        rand_chacha::ChaCha8Rng::seed_from_u64(crate::derive_seed(cfg.seed, "fusion-batch-order"));
    let mut order: Vec<usize> = (0..train_pairs.len()).collect();

    let mut log = TrainLog {
        train_loss: Vec::new(),
        val_loss: Vec::new(),
        best_epoch: 0,
    };
    let mut best = (f64::INFINITY, head.clone(), 0usize);
    let mut stale = 0usize;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for ids in order.chunks(cfg.batch_size.max(1)) {
            let slice: Vec<&(FusedInput, Tensor)> = ids.iter().map(|&i| &train_pairs[i]).collect();
            let (trunk_g, dense_g, loss) = head_batch_gradients(&head, &slice)?;
            epoch_loss += loss;
            batches += 1;
            let mut grads: Vec<&Tensor> = Vec::new();
            if let Some(t) = trunk_g.as_ref() {
                grads.extend(t.param_grads());
            }
            grads.extend(dense_g.param_grads());
            let mut params = head.params_mut();
            opt.step(&mut params, &grads)?;
        }
        let train_loss = epoch_loss / batches as f64;
        if !train_loss.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        let val_loss = head_dataset_loss(&head, &val_pairs)?;
        log.train_loss.push(train_loss);
        log.val_loss.push(val_loss);
        if val_loss < best.0 {
            best = (val_loss, head.clone(), epoch);
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    log.best_epoch = best.2;
    Ok((best.1, log))
}

// ---------------------------------------------------------------------------
// end-to-end pipeline
// ---------------------------------------------------------------------------

/// The assembled three-model pipeline over the built-in visual backend.
#[derive(Debug, Clone, PartialEq)]
pub struct Pipeline {
    pub visual: VisualModel,
    pub state_model: StateModel,
    pub head: FusionHead,
    pub normalizer: Normalizer,
}

impl Pipeline {
    /// Predict one denormalized action vector from raw inputs.
    pub fn predict_action(
        &self,
        past_images: &[&ImageFrame],
        current_state: &RobotState,
    ) -> Result<ActionVector> {
        let stage = |name: &str, e: Error| Error::Config(format!("{name} stage: {e}"));
        let (frame, features) = self
            .visual
            .predict_next_frame(past_images)
            .map_err(|e| stage("visual", e))?;
        let norm_state = self
            .normalizer
            .normalize_state(current_state)
            .map_err(|e| stage("normalizer", e))?;
        let predicted_state = self
            .state_model
            .predict(&norm_state)
            .map_err(|e| stage("state", e))?;
        let state_part: &[f32] = if self.head.modality == Modality::ImageOnly {
            &[]
        } else {
            &predicted_state
        };
        let fused = match (self.head.head_kind, self.head.modality) {
            (_, Modality::StateOnly) => FusedInput::Vector(state_part.to_vec()),
            (HeadKind::Conv, _) => FusedInput::SpatialPlusState {
                frame: frame_to_tensor(&frame),
                state: state_part.to_vec(),
            },
            (HeadKind::Mlp, _) => fuse_inputs(
                &VisualTerm::Features(features),
                state_part,
                HeadKind::Mlp,
            )
            .map_err(|e| stage("fusion", e))?,
        };
        let (pred, _) = self.head.forward(&fused).map_err(|e| stage("fusion", e))?;
        let denorm = self
            .normalizer
            .denormalize_action_vec(&pred)
            .map_err(|e| stage("normalizer", e))?;
        Ok(ActionVector::new(denorm))
    }

    pub fn window(&self) -> usize {
        self.visual.window
    }
}

/// Split parameters recorded in a bundle so evaluation can rebuild the exact
/// partitions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub ratios: [f64; 3],
    pub seed: u64,
}

/// Bundle manifest: checkpoint paths are relative to the manifest location.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineBundle {
    pub version: u32,
    pub visual_ckpt: String,
    pub state_ckpt: String,
    pub fusion_ckpt: String,
    pub normalizer: Normalizer,
    pub dataset_hash: String,
    pub head_kind: HeadKind,
    pub state_kind: StateModelKind,
    pub window: usize,
    pub split: SplitSpec,
    pub seeds: std::collections::BTreeMap<String, u64>,
}

impl PipelineBundle {
    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)
                .map_err(|e| Error::io(parent.display().to_string(), e))?;
        }
        let mut json = serde_json::to_string_pretty(self)?;
        json.push('\n');
        std::fs::write(path, json).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }
}

/// Write the pipeline's checkpoints plus the bundle manifest into `dir`.
pub fn save_pipeline(
    dir: &Path,
    pipeline: &Pipeline,
    dataset_hash: &str,
    split: SplitSpec,
    seeds: std::collections::BTreeMap<String, u64>,
) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    pipeline.visual.save(&dir.join("visual.dmlw"))?;
    pipeline.state_model.save(&dir.join("state.dmlw"))?;
    pipeline.head.save(&dir.join("fusion.dmlw"))?;
    let bundle = PipelineBundle {
        version: 1,
        visual_ckpt: "visual.dmlw".into(),
        state_ckpt: "state.dmlw".into(),
        fusion_ckpt: "fusion.dmlw".into(),
        normalizer: pipeline.normalizer.clone(),
        dataset_hash: dataset_hash.to_string(),
        head_kind: pipeline.head.head_kind,
        state_kind: pipeline.state_model.kind(),
        window: pipeline.visual.window,
        split,
        seeds,
    };
    let path = dir.join("bundle.json");
    bundle.save(&path)?;
    Ok(path)
}

/// Load a bundle manifest and materialize the pipeline behind it.
pub fn load_pipeline(bundle_path: &Path) -> Result<(Pipeline, PipelineBundle)> {
    let bundle = PipelineBundle::load(bundle_path)?;
    let base = bundle_path.parent().unwrap_or(Path::new("."));
    let stage = |name: &str, e: Error| Error::Config(format!("{name} checkpoint: {e}"));
    let visual =
        VisualModel::load(&base.join(&bundle.visual_ckpt)).map_err(|e| stage("visual", e))?;
    let state_model =
        StateModel::load(&base.join(&bundle.state_ckpt)).map_err(|e| stage("state", e))?;
    let head = FusionHead::load(&base.join(&bundle.fusion_ckpt)).map_err(|e| stage("fusion", e))?;
    if head.state_dim != 0 && head.state_dim != bundle.normalizer.state_dim() {
        return Err(Error::ShapeMismatch(format!(
            "fusion stage: head expects state dimension {}, normalizer provides {}",
            head.state_dim,
            bundle.normalizer.state_dim()
        )));
    }
    if head.action_dim != bundle.normalizer.action_dim() {
        return Err(Error::ShapeMismatch(format!(
            "fusion stage: head emits {} action values, normalizer expects {}",
            head.action_dim,
            bundle.normalizer.action_dim()
        )));
    }
    Ok((
        Pipeline {
            visual,
            state_model,
            head,
            normalizer: bundle.normalizer.clone(),
        },
        bundle,
    ))
}

/// Convenience wrapper for tests and the CLI: window the samples of a split.
pub fn split_samples<'a>(
    trajs: &'a [Trajectory],
    indices: &[usize],
    window: usize,
) -> Result<Vec<Sample<'a>>> {
    let mut out = Vec::new();
    for &i in indices {
        out.extend(crate::dataset::window_samples(&trajs[i], window)?);
    }
    Ok(out)
}
