//! Trajectory data model: frames, robot states, actions, windowed samples,
//! deterministic trajectory-level splits, and feature normalization.

pub mod manifest;
pub mod synthetic;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use manifest::{dataset_fingerprint, load_dataset, save_dataset, DatasetManifest};
pub use synthetic::{generate_synthetic, SyntheticConfig};

/// Default number of past frames per sample.
pub const DEFAULT_WINDOW: usize = 3;

/// One camera frame with pixels normalized to [0, 1], stored `[c, h, w]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageFrame {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<f32>,
}

impl ImageFrame {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            pixels: vec![0.0; channels * height * width],
        }
    }

    pub fn geometry(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }
}

/// Joint-space snapshot of the arm plus the gripper opening.
#[derive(Debug, Clone, PartialEq)]
pub struct RobotState {
    pub joint_positions: Vec<f32>,
    pub joint_velocities: Vec<f32>,
    pub joint_efforts: Vec<f32>,
    pub gripper: f32,
}

impl RobotState {
    pub fn zeros(joint_count: usize) -> Self {
        Self {
            joint_positions: vec![0.0; joint_count],
            joint_velocities: vec![0.0; joint_count],
            joint_efforts: vec![0.0; joint_count],
            gripper: 0.0,
        }
    }

    pub fn joint_count(&self) -> usize {
        self.joint_positions.len()
    }

    /// Flat feature layout `[positions | velocities | efforts | gripper]`,
    /// length `3J + 1`.
    pub fn to_features(&self) -> Vec<f32> {
        let mut v = Vec::with_capacity(3 * self.joint_count() + 1);
        v.extend_from_slice(&self.joint_positions);
        v.extend_from_slice(&self.joint_velocities);
        v.extend_from_slice(&self.joint_efforts);
        v.push(self.gripper);
        v
    }

    pub fn from_features(features: &[f32]) -> Result<Self> {
        if features.is_empty() || (features.len() - 1) % 3 != 0 {
            return Err(Error::ShapeMismatch(format!(
                "state feature vector length {} is not 3J+1",
                features.len()
            )));
        }
        let j = (features.len() - 1) / 3;
        Ok(Self {
            joint_positions: features[0..j].to_vec(),
            joint_velocities: features[j..2 * j].to_vec(),
            joint_efforts: features[2 * j..3 * j].to_vec(),
            gripper: features[3 * j],
        })
    }

    pub fn feature_len(joint_count: usize) -> usize {
        3 * joint_count + 1
    }
}

/// Continuous control command for one step.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionVector {
    pub values: Vec<f32>,
}

impl ActionVector {
    pub fn new(values: Vec<f32>) -> Self {
        Self { values }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// One recorded instant: what the camera saw, what the joints reported, and
/// the action commanded at that instant.
#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub image: ImageFrame,
    pub state: RobotState,
    pub action: ActionVector,
}

/// One manipulation episode.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub id: String,
    pub environment_id: String,
    pub steps: Vec<Step>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Check internal consistency: one image geometry, one joint count, one
    /// action dimension, all values finite, pixels and gripper in range.
    pub fn validate(&self) -> Result<()> {
        let Some(first) = self.steps.first() else {
            return Ok(());
        };
        let geom = first.image.geometry();
        let j = first.state.joint_count();
        let a = first.action.dim();
        for (idx, step) in self.steps.iter().enumerate() {
            let fail = |reason: String| {
                Err(Error::Dataset(format!(
                    "trajectory {:?} step {}: {}",
                    self.id, idx, reason
                )))
            };
            if step.image.geometry() != geom {
                return fail(format!(
                    "image geometry {:?} differs from {:?}",
                    step.image.geometry(),
                    geom
                ));
            }
            if step.image.pixels.len() != step.image.channels * step.image.height * step.image.width
            {
                return fail("pixel buffer length does not match geometry".into());
            }
            if step.state.joint_count() != j
                || step.state.joint_velocities.len() != j
                || step.state.joint_efforts.len() != j
            {
                return fail(format!("joint count differs from {}", j));
            }
            if step.action.dim() != a {
                return fail(format!("action dimension differs from {}", a));
            }
            if step.image.pixels.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return fail("pixel outside [0, 1]".into());
            }
            if !(0.0..=1.0).contains(&step.state.gripper) {
                return fail("gripper outside [0, 1]".into());
            }
            let finite = step
                .state
                .to_features()
                .iter()
                .chain(step.action.values.iter())
                .all(|v| v.is_finite());
            if !finite {
                return fail("non-finite state or action component".into());
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// windowed samples
// ---------------------------------------------------------------------------

/// A supervised sample: `window` consecutive frames, the state at the
/// window's last step, and targets at the following step. Borrows the
/// trajectory, so windows can never cross episode boundaries.
#[derive(Debug, Clone, Copy)]
pub struct Sample<'a> {
    traj: &'a Trajectory,
    start: usize,
    window: usize,
}

impl<'a> Sample<'a> {
    pub fn past_images(&self) -> impl Iterator<Item = &'a ImageFrame> + '_ {
        self.traj.steps[self.start..self.start + self.window]
            .iter()
            .map(|s| &s.image)
    }

    pub fn current_state(&self) -> &'a RobotState {
        &self.traj.steps[self.start + self.window - 1].state
    }

    pub fn target_next_image(&self) -> &'a ImageFrame {
        &self.traj.steps[self.start + self.window].image
    }

    pub fn target_next_state(&self) -> &'a RobotState {
        &self.traj.steps[self.start + self.window].state
    }

    pub fn target_action(&self) -> &'a ActionVector {
        &self.traj.steps[self.start + self.window - 1].action
    }

    pub fn trajectory_id(&self) -> &'a str {
        &self.traj.id
    }

    pub fn start_index(&self) -> usize {
        self.start
    }

    pub fn window(&self) -> usize {
        self.window
    }

    /// Stable key for feature files: `<trajectory id>:<window start index>`.
    pub fn key(&self) -> String {
        format!("{}:{}", self.traj.id, self.start)
    }
}

/// All windowed samples of one trajectory. Short trajectories yield none.
pub fn window_samples(traj: &Trajectory, window: usize) -> Result<Vec<Sample<'_>>> {
    if window == 0 {
        return Err(Error::Config("window size must be >= 1".into()));
    }
    if traj.len() < window + 1 {
        return Ok(Vec::new());
    }
    Ok((0..traj.len() - window)
        .map(|start| Sample { traj, start, window })
        .collect())
}

/// Samples across a trajectory list, in trajectory order.
pub fn window_all<'a>(trajs: &'a [Trajectory], window: usize) -> Result<Vec<Sample<'a>>> {
    let mut out = Vec::new();
    for traj in trajs {
        out.extend(window_samples(traj, window)?);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// splits
// ---------------------------------------------------------------------------

/// Trajectory indices for the train / validation / test partitions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitIndices {
    pub fn select<'a>(&self, trajs: &'a [Trajectory], which: SplitName) -> Vec<&'a Trajectory> {
        let idx = match which {
            SplitName::Train => &self.train,
            SplitName::Val => &self.val,
            SplitName::Test => &self.test,
        };
        idx.iter().map(|&i| &trajs[i]).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Val,
    Test,
}

impl std::fmt::Display for SplitName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            SplitName::Train => "train",
            SplitName::Val => "val",
            SplitName::Test => "test",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for SplitName {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitName::Train),
            "val" => Ok(SplitName::Val),
            "test" => Ok(SplitName::Test),
            other => Err(Error::Config(format!("unknown split name {other:?}"))),
        }
    }
}

/// Partition sizes by largest-remainder rounding; remaining seats go to the
/// largest remainder, ties to the later partition.
fn partition_sizes(n: usize, ratios: [f64; 3]) -> [usize; 3] {
    let quotas: Vec<f64> = ratios.iter().map(|r| r * n as f64).collect();
    let mut sizes: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = sizes.iter().sum();
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - sizes[a] as f64;
        let rb = quotas[b] - sizes[b] as f64;
        rb.partial_cmp(&ra).unwrap().then(b.cmp(&a))
    });
    for &i in order.iter().take(n - assigned) {
        sizes[i] += 1;
    }
    [sizes[0], sizes[1], sizes[2]]
}

/// Deterministic whole-trajectory split. Partitions are disjoint and
/// exhaustive; indices within each partition come back sorted.
pub fn split_dataset(n_trajectories: usize, ratios: [f64; 3], seed: u64) -> Result<SplitIndices> {
    let sum: f64 = ratios.iter().sum();
    if ratios.iter().any(|&r| r < 0.0 || !r.is_finite()) {
        return Err(Error::Config(format!("split ratios must be >= 0, got {ratios:?}")));
    }
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split ratios must sum to 1 (got {sum})"
        )));
    }
    let nonzero = ratios.iter().filter(|&&r| r > 0.0).count();
    if n_trajectories < nonzero {
        return Err(Error::Config(format!(
            "{} trajectories cannot populate {} nonzero partitions",
            n_trajectories, nonzero
        )));
    }
    let sizes = partition_sizes(n_trajectories, ratios);
    let mut order: Vec<usize> = (0..n_trajectories).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    let mut train: Vec<usize> = order[..sizes[0]].to_vec();
    let mut val: Vec<usize> = order[sizes[0]..sizes[0] + sizes[1]].to_vec();
    let mut test: Vec<usize> = order[sizes[0] + sizes[1]..].to_vec();
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();
    Ok(SplitIndices { train, val, test })
}

// ---------------------------------------------------------------------------
// normalization
// ---------------------------------------------------------------------------

/// Per-dimension standardization for state vectors and min/max scaling to
/// [-1, 1] for action vectors. Fit on the training split only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub state_mean: Vec<f32>,
    pub state_std: Vec<f32>,
    pub action_min: Vec<f32>,
    pub action_max: Vec<f32>,
}

impl Normalizer {
    /// Fit over every step of the given (training) trajectories.
    ///
    /// Zero-variance state dimensions get sigma := 1 so they normalize to 0;
    /// zero-span action dimensions likewise map to 0.
    pub fn fit(trajs: &[&Trajectory]) -> Result<Self> {
        let mut steps = trajs.iter().flat_map(|t| t.steps.iter()).peekable();
        let Some(first) = steps.peek() else {
            return Err(Error::Dataset("cannot fit a normalizer on zero steps".into()));
        };
        let f = RobotState::feature_len(first.state.joint_count());
        let a = first.action.dim();

        let mut sum = vec![0.0f64; f];
        let mut sum_sq = vec![0.0f64; f];
        let mut amin = vec![f32::INFINITY; a];
        let mut amax = vec![f32::NEG_INFINITY; a];
        let mut count = 0usize;
        for step in trajs.iter().flat_map(|t| t.steps.iter()) {
            let feats = step.state.to_features();
            if feats.len() != f || step.action.dim() != a {
                return Err(Error::ShapeMismatch(
                    "normalizer fit over trajectories with mixed dimensions".into(),
                ));
            }
            for (i, &v) in feats.iter().enumerate() {
                sum[i] += v as f64;
                sum_sq[i] += (v as f64) * (v as f64);
            }
            for (i, &v) in step.action.values.iter().enumerate() {
                amin[i] = amin[i].min(v);
                amax[i] = amax[i].max(v);
            }
            count += 1;
        }
        let nf = count as f64;
        let mut mean = Vec::with_capacity(f);
        let mut std = Vec::with_capacity(f);
        for i in 0..f {
            let m = sum[i] / nf;
            let var = (sum_sq[i] / nf - m * m).max(0.0);
            let s = var.sqrt();
            mean.push(m as f32);
            std.push(if s > 1e-12 { s as f32 } else { 1.0 });
        }
        Ok(Self {
            state_mean: mean,
            state_std: std,
            action_min: amin,
            action_max: amax,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.state_mean.len()
    }

    pub fn action_dim(&self) -> usize {
        self.action_min.len()
    }

    fn check_state_dim(&self, len: usize) -> Result<()> {
        if len != self.state_dim() {
            return Err(Error::ShapeMismatch(format!(
                "normalizer expects state dimension {}, got {}",
                self.state_dim(),
                len
            )));
        }
        Ok(())
    }

    fn check_action_dim(&self, len: usize) -> Result<()> {
        if len != self.action_dim() {
            return Err(Error::ShapeMismatch(format!(
                "normalizer expects action dimension {}, got {}",
                self.action_dim(),
                len
            )));
        }
        Ok(())
    }

    pub fn normalize_state(&self, state: &RobotState) -> Result<Vec<f32>> {
        self.normalize_state_vec(&state.to_features())
    }

    pub fn normalize_state_vec(&self, features: &[f32]) -> Result<Vec<f32>> {
        self.check_state_dim(features.len())?;
        Ok(features
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                ((v as f64 - self.state_mean[i] as f64) / self.state_std[i] as f64) as f32
            })
            .collect())
    }

    pub fn denormalize_state_vec(&self, normalized: &[f32]) -> Result<Vec<f32>> {
        self.check_state_dim(normalized.len())?;
        Ok(normalized
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                (v as f64 * self.state_std[i] as f64 + self.state_mean[i] as f64) as f32
            })
            .collect())
    }

    pub fn normalize_action(&self, action: &ActionVector) -> Result<Vec<f32>> {
        self.normalize_action_vec(&action.values)
    }

    pub fn normalize_action_vec(&self, values: &[f32]) -> Result<Vec<f32>> {
        self.check_action_dim(values.len())?;
        Ok(values
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let span = (self.action_max[i] - self.action_min[i]) as f64;
                if span > 1e-12 {
                    (2.0 * (v as f64 - self.action_min[i] as f64) / span - 1.0) as f32
                } else {
                    0.0
                }
            })
            .collect())
    }

    pub fn denormalize_action_vec(&self, normalized: &[f32]) -> Result<Vec<f32>> {
        self.check_action_dim(normalized.len())?;
        Ok(normalized
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let span = (self.action_max[i] - self.action_min[i]) as f64;
                if span > 1e-12 {
                    ((v as f64 + 1.0) / 2.0 * span + self.action_min[i] as f64) as f32
                } else {
                    self.action_min[i]
                }
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn frame(v: f32) -> ImageFrame {
        ImageFrame {
            channels: 1,
            height: 2,
            width: 2,
            pixels: vec![v; 4],
        }
    }

    fn step(v: f32) -> Step {
        Step {
            image: frame(v.clamp(0.0, 1.0)),
            state: RobotState {
                joint_positions: vec![v, -v],
                joint_velocities: vec![0.5 * v, 0.0],
                joint_efforts: vec![0.0, 0.0],
                gripper: 0.5,
            },
            action: ActionVector::new(vec![v, 1.0 - v]),
        }
    }

    fn traj(id: &str, n: usize) -> Trajectory {
        Trajectory {
            id: id.into(),
            environment_id: "env".into(),
            steps: (0..n).map(|i| step(i as f32 / n.max(1) as f32)).collect(),
        }
    }

    #[test]
    fn window_counts_match_boundaries() {
        assert_eq!(window_samples(&traj("a", 50), 3).unwrap().len(), 47);
        assert_eq!(window_samples(&traj("a", 3), 3).unwrap().len(), 0);
        let t = traj("a", 4);
        let samples = window_samples(&t, 3).unwrap();
        assert_eq!(samples.len(), 1);
        let s = &samples[0];
        assert_eq!(s.start_index(), 0);
        // targets come from step index 3, the action from step index 2
        assert_eq!(s.target_next_state(), &t.steps[3].state);
        assert_eq!(s.target_next_image(), &t.steps[3].image);
        assert_eq!(s.target_action(), &t.steps[2].action);
        assert_eq!(s.current_state(), &t.steps[2].state);
        assert_eq!(s.key(), "a:0");
    }

    #[test]
    fn windows_never_cross_trajectories() {
        let trajs = vec![traj("first", 6), traj("second", 5)];
        let samples = window_all(&trajs, 3).unwrap();
        assert_eq!(samples.len(), 3 + 2);
        for s in &samples {
            let within = s.start_index() + s.window()
                < trajs
                    .iter()
                    .find(|t| t.id == s.trajectory_id())
                    .unwrap()
                    .len();
            assert!(within);
        }
        assert_eq!(samples.iter().filter(|s| s.trajectory_id() == "first").count(), 3);
        assert_eq!(samples.iter().filter(|s| s.trajectory_id() == "second").count(), 2);
    }

    #[test]
    fn split_sizes_use_largest_remainder() {
        let s = split_dataset(10, [0.7, 0.15, 0.15], 3).unwrap();
        assert_eq!(s.train.len(), 7);
        assert_eq!(s.val.len(), 1);
        assert_eq!(s.test.len(), 2);

        let mut all: Vec<usize> = s
            .train
            .iter()
            .chain(&s.val)
            .chain(&s.test)
            .copied()
            .collect();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn degenerate_ratios_and_determinism() {
        let s = split_dataset(5, [1.0, 0.0, 0.0], 9).unwrap();
        assert_eq!(s.train.len(), 5);
        assert!(s.val.is_empty() && s.test.is_empty());

        let a = split_dataset(20, [0.7, 0.15, 0.15], 123).unwrap();
        let b = split_dataset(20, [0.7, 0.15, 0.15], 123).unwrap();
        assert_eq!(a, b);
        let c = split_dataset(20, [0.7, 0.15, 0.15], 124).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn split_rejects_bad_inputs() {
        assert!(split_dataset(2, [0.7, 0.15, 0.15], 0).is_err()); // 2 < 3 nonzero
        assert!(split_dataset(10, [0.5, 0.4, 0.2], 0).is_err()); // sums to 1.1
        assert!(split_dataset(10, [-0.1, 0.6, 0.5], 0).is_err());
    }

    #[test]
    fn normalizer_handles_constant_dimension() {
        let t = traj("a", 8);
        let binding = [&t];
        let norm = Normalizer::fit(&binding).unwrap();
        // efforts are all zero -> sigma substituted with 1, normalized value 0
        let n = norm.normalize_state(&t.steps[0].state).unwrap();
        let j = t.steps[0].state.joint_count();
        assert_eq!(n[2 * j], 0.0);
        assert_eq!(n[2 * j + 1], 0.0);
    }

    #[test]
    fn normalizer_hand_case_and_round_trip() {
        // one dimension with values {0, 2}: mean 1, sigma 1, normalized {-1, +1}
        let mk = |v: f32| Step {
            image: frame(0.0),
            state: RobotState {
                joint_positions: vec![v],
                joint_velocities: vec![0.0],
                joint_efforts: vec![0.0],
                gripper: 0.5,
            },
            action: ActionVector::new(vec![v]),
        };
        let t = Trajectory {
            id: "t".into(),
            environment_id: "e".into(),
            steps: vec![mk(0.0), mk(2.0)],
        };
        let binding = [&t];
        let norm = Normalizer::fit(&binding).unwrap();
        assert_eq!(norm.state_mean[0], 1.0);
        assert_eq!(norm.state_std[0], 1.0);
        assert_eq!(norm.normalize_state(&t.steps[0].state).unwrap()[0], -1.0);
        assert_eq!(norm.normalize_state(&t.steps[1].state).unwrap()[0], 1.0);
        // actions {0,2} -> [-1, 1]
        assert_eq!(norm.normalize_action(&t.steps[0].action).unwrap()[0], -1.0);
        assert_eq!(norm.normalize_action(&t.steps[1].action).unwrap()[0], 1.0);

        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..200 {
            let v: Vec<f32> = (0..norm.state_dim()).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let back = norm
                .denormalize_state_vec(&norm.normalize_state_vec(&v).unwrap())
                .unwrap();
            for (a, b) in v.iter().zip(&back) {
                assert!((a - b).abs() < 1e-6, "{a} vs {b}");
            }
            let av: Vec<f32> = (0..norm.action_dim()).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let back = norm
                .denormalize_action_vec(&norm.normalize_action_vec(&av).unwrap())
                .unwrap();
            for (a, b) in av.iter().zip(&back) {
                assert!((a - b).abs() < 1e-6, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn normalizer_rejects_dimension_mismatch() {
        let t = traj("a", 4);
        let binding = [&t];
        let norm = Normalizer::fit(&binding).unwrap();
        assert!(norm.normalize_state_vec(&[0.0; 3]).is_err());
        assert!(norm.normalize_action_vec(&[0.0; 5]).is_err());
    }

    #[test]
    fn trajectory_validation_reports_step_index() {
        let mut t = traj("bad", 5);
        t.steps[3].state.joint_positions.push(9.0);
        let err = t.validate().unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("bad") && msg.contains("step 3"), "{msg}");
    }
}
