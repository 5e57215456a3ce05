//! State-based next-state regressors: a from-scratch random forest and a
//! gradient-descent linear model over standardized `3J+1` state vectors.

pub mod forest;
pub mod gd;

use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::io::Checkpoint;

pub use forest::{ForestHyperparams, RandomForest, TreeNode};
pub use gd::{GdConfig, GdRegressor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StateModelKind {
    Forest,
    Gd,
}

impl std::fmt::Display for StateModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            StateModelKind::Forest => f.write_str("forest"),
            StateModelKind::Gd => f.write_str("gd"),
        }
    }
}

impl std::str::FromStr for StateModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "forest" => Ok(StateModelKind::Forest),
            "gd" => Ok(StateModelKind::Gd),
            other => Err(Error::Config(format!("unknown state model kind {other:?}"))),
        }
    }
}

/// Either state regressor behind one prediction surface.
#[derive(Debug, Clone, PartialEq)]
pub enum StateModel {
    Forest(RandomForest),
    Gd(GdRegressor),
}

impl StateModel {
    pub fn kind(&self) -> StateModelKind {
        match self {
            StateModel::Forest(_) => StateModelKind::Forest,
            StateModel::Gd(_) => StateModelKind::Gd,
        }
    }

    pub fn predict(&self, x: &[f32]) -> Result<Vec<f32>> {
        match self {
            StateModel::Forest(m) => m.predict(x),
            StateModel::Gd(m) => m.predict(x),
        }
    }

    pub fn n_features(&self) -> usize {
        match self {
            StateModel::Forest(m) => m.n_features,
            StateModel::Gd(m) => m.weights.cols(),
        }
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        match self {
            StateModel::Forest(m) => m.to_checkpoint(),
            StateModel::Gd(m) => m.to_checkpoint(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ckpt = Checkpoint::load(path)?;
        Self::from_checkpoint(&ckpt, &path.display().to_string())
    }

    pub fn from_checkpoint(ckpt: &Checkpoint, path: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct KindProbe {
            model_kind: String,
        }
        let probe: KindProbe =
            serde_json::from_slice(ckpt.require_section(forest::META_SECTION, path)?)?;
        match probe.model_kind.as_str() {
            "forest" => Ok(StateModel::Forest(RandomForest::from_checkpoint(ckpt, path)?)),
            "gd" => Ok(StateModel::Gd(GdRegressor::from_checkpoint(ckpt, path)?)),
            other => Err(Error::format(
                path,
                format!("unknown state model kind {other:?}"),
            )),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::Matrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn constant_data() -> (Matrix, Matrix) {
        let x = Matrix::from_rows(&(0..10).map(|i| vec![i as f32, -(i as f32)]).collect::<Vec<_>>())
            .unwrap();
        let y = Matrix::from_rows(&vec![vec![3.5, -1.25]; 10]).unwrap();
        (x, y)
    }

    #[test]
    fn constant_targets_give_constant_leaves() {
        let (x, y) = constant_data();
        let forest = RandomForest::fit(&x, &y, &ForestHyperparams::default(), 1).unwrap();
        for probe in [[0.0f32, 0.0], [100.0, -3.0], [-5.0, 5.0]] {
            assert_eq!(forest.predict(&probe).unwrap(), vec![3.5, -1.25]);
        }
        // with constant targets every tree is a single leaf
        for tree in &forest.trees {
            assert_eq!(tree.depth(), 0);
        }
    }

    /// Exhaustive split search over midpoints, double loop, no shortcuts.
    fn oracle_best_split(xs: &[f32], ys: &[f32]) -> (f32, f64) {
        let mut vals: Vec<f32> = xs.to_vec();
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        vals.dedup();
        let mut best = (f32::NAN, f64::INFINITY);
        for pair in vals.windows(2) {
            let threshold = (pair[0] + pair[1]) / 2.0;
            let (mut ls, mut lc, mut rs, mut rc) = (0.0f64, 0usize, 0.0f64, 0usize);
            for (&x, &y) in xs.iter().zip(ys) {
                if x <= threshold {
                    ls += y as f64;
                    lc += 1;
                } else {
                    rs += y as f64;
                    rc += 1;
                }
            }
            let (lm, rm) = (ls / lc as f64, rs / rc as f64);
            let mut sse = 0.0f64;
            for (&x, &y) in xs.iter().zip(ys) {
                let m = if x <= threshold { lm } else { rm };
                sse += (y as f64 - m) * (y as f64 - m);
            }
            if sse < best.1 {
                best = (threshold, sse);
            }
        }
        best
    }

    #[test]
    fn depth_one_tree_matches_exhaustive_split_oracle() {
        // y is a step function of the single feature
        let xs: Vec<f32> = (-8..8).map(|i| i as f32 + 0.5).collect();
        let ys: Vec<f32> = xs.iter().map(|&x| if x < 0.0 { 0.0 } else { 1.0 }).collect();
        let x = Matrix::from_rows(&xs.iter().map(|&v| vec![v]).collect::<Vec<_>>()).unwrap();
        let y = Matrix::from_rows(&ys.iter().map(|&v| vec![v]).collect::<Vec<_>>()).unwrap();
        let hp = ForestHyperparams {
            n_trees: 1,
            max_depth: 1,
            min_samples_leaf: 1,
            features_per_split: Some(1),
            bootstrap: false,
        };
        let forest = RandomForest::fit(&x, &y, &hp, 0).unwrap();
        let (oracle_threshold, _) = oracle_best_split(&xs, &ys);
        match &forest.trees[0] {
            TreeNode::Internal {
                feature, threshold, left, right,
            } => {
                assert_eq!(*feature, 0);
                assert_eq!(*threshold, oracle_threshold);
                assert_eq!(matches!(**left, TreeNode::Leaf { ref value } if value == &vec![0.0]), true);
                assert_eq!(matches!(**right, TreeNode::Leaf { ref value } if value == &vec![1.0]), true);
            }
            other => panic!("expected a split, got {other:?}"),
        }
        assert_eq!(forest.predict(&[-3.0]).unwrap(), vec![0.0]);
        assert_eq!(forest.predict(&[3.0]).unwrap(), vec![1.0]);
    }

    #[test]
    fn forest_prediction_is_mean_of_trees() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let rows: Vec<Vec<f32>> = (0..40)
            .map(|_| vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])
            .collect();
        let targets: Vec<Vec<f32>> = rows
            .iter()
            .map(|r| vec![r[0] * r[1], r[0] - r[1], 0.5 * r[0]])
            .collect();
        let x = Matrix::from_rows(&rows).unwrap();
        let y = Matrix::from_rows(&targets).unwrap();
        let forest = RandomForest::fit(&x, &y, &ForestHyperparams::default(), 3).unwrap();
        for probe in rows.iter().take(10) {
            let pred = forest.predict(probe).unwrap();
            let mut mean = vec![0.0f64; 3];
            for tree in &forest.trees {
                for (m, &v) in mean.iter_mut().zip(tree.predict(probe)) {
                    *m += v as f64;
                }
            }
            for (p, m) in pred.iter().zip(&mean) {
                assert!((*p as f64 - m / forest.trees.len() as f64).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn manual_two_tree_forest_averages() {
        let forest = RandomForest {
            trees: vec![
                TreeNode::Leaf { value: vec![0.0, 0.0] },
                TreeNode::Leaf { value: vec![1.0, 1.0] },
            ],
            hyperparams: ForestHyperparams::default(),
            seed: 0,
            n_features: 3,
            n_targets: 2,
        };
        assert_eq!(forest.predict(&[9.0, 9.0, 9.0]).unwrap(), vec![0.5, 0.5]);
        assert!(forest.predict(&[1.0]).is_err());
    }

    #[test]
    fn predictions_stay_in_training_target_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let rows: Vec<Vec<f32>> = (0..120)
            .map(|_| (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect())
            .collect();
        let targets: Vec<Vec<f32>> = rows
            .iter()
            .map(|r| vec![(r[0] * r[1]).sin() + r[2], r[3] * r[3]])
            .collect();
        let x = Matrix::from_rows(&rows).unwrap();
        let y = Matrix::from_rows(&targets).unwrap();
        let forest = RandomForest::fit(&x, &y, &ForestHyperparams::default(), 4).unwrap();
        let mut lo = vec![f32::INFINITY; 2];
        let mut hi = vec![f32::NEG_INFINITY; 2];
        for t in &targets {
            for d in 0..2 {
                lo[d] = lo[d].min(t[d]);
                hi[d] = hi[d].max(t[d]);
            }
        }
        for _ in 0..1000 {
            let probe: Vec<f32> = (0..4).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let pred = forest.predict(&probe).unwrap();
            for d in 0..2 {
                assert!(pred[d] >= lo[d] - 1e-6 && pred[d] <= hi[d] + 1e-6);
            }
        }
    }

    #[test]
    fn leaf_values_are_exact_means_on_instrumented_fit() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let rows: Vec<Vec<f32>> = (0..50)
            .map(|_| vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])
            .collect();
        let targets: Vec<Vec<f32>> = rows.iter().map(|r| vec![r[0] + r[1], r[0] * r[1]]).collect();
        let x = Matrix::from_rows(&rows).unwrap();
        let y = Matrix::from_rows(&targets).unwrap();
        let hp = ForestHyperparams {
            n_trees: 1,
            max_depth: 3,
            min_samples_leaf: 2,
            features_per_split: Some(2),
            bootstrap: false, // leaves then partition the original samples
        };
        let forest = RandomForest::fit(&x, &y, &hp, 2).unwrap();
        let mut leaves = Vec::new();
        forest.trees[0].visit_leaves(&x, (0..50).collect(), &mut leaves);
        assert!(leaves.len() > 1);
        let mut seen = 0;
        for (value, indices) in leaves {
            assert!(!indices.is_empty());
            seen += indices.len();
            for d in 0..2 {
                let mean =
                    indices.iter().map(|&i| y.row(i)[d] as f64).sum::<f64>() / indices.len() as f64;
                assert_eq!(value[d], mean as f32, "leaf value must be the exact mean");
            }
        }
        assert_eq!(seen, 50);
    }

    #[test]
    fn fixed_seed_reproduces_identical_forest() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let rows: Vec<Vec<f32>> = (0..60)
            .map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let targets: Vec<Vec<f32>> = rows.iter().map(|r| vec![r[0] - r[1] * r[2]]).collect();
        let x = Matrix::from_rows(&rows).unwrap();
        let y = Matrix::from_rows(&targets).unwrap();
        let a = RandomForest::fit(&x, &y, &ForestHyperparams::default(), 5).unwrap();
        let b = RandomForest::fit(&x, &y, &ForestHyperparams::default(), 5).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.to_checkpoint().to_bytes(), b.to_checkpoint().to_bytes());
        let c = RandomForest::fit(&x, &y, &ForestHyperparams::default(), 6).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn forest_rejects_degenerate_inputs() {
        let x = Matrix::from_rows(&[vec![1.0]]).unwrap();
        let y = Matrix::from_rows(&[vec![1.0]]).unwrap();
        assert!(RandomForest::fit(&x, &y, &ForestHyperparams::default(), 0).is_err());
        let x = Matrix::from_rows(&[vec![1.0], vec![2.0]]).unwrap();
        let y = Matrix::from_rows(&[vec![1.0], vec![f32::NAN]]).unwrap();
        assert!(RandomForest::fit(&x, &y, &ForestHyperparams::default(), 0).is_err());
    }

    #[test]
    fn forest_checkpoint_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(30);
        let rows: Vec<Vec<f32>> = (0..30)
            .map(|_| vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])
            .collect();
        let targets: Vec<Vec<f32>> = rows.iter().map(|r| vec![r[0], r[1] * 2.0]).collect();
        let x = Matrix::from_rows(&rows).unwrap();
        let y = Matrix::from_rows(&targets).unwrap();
        let forest = RandomForest::fit(&x, &y, &ForestHyperparams::default(), 11).unwrap();
        let model = StateModel::Forest(forest.clone());
        let ckpt = model.to_checkpoint();
        let back = StateModel::from_checkpoint(&ckpt, "mem").unwrap();
        assert_eq!(model, back);
        // predictions agree bit-for-bit
        for probe in rows.iter().take(5) {
            assert_eq!(model.predict(probe).unwrap(), back.predict(probe).unwrap());
        }
    }

    // -- gradient-descent regressor -----------------------------------------

    /// Closed-form least squares for one feature: slope and intercept.
    fn least_squares_1d(xs: &[f32], ys: &[f32]) -> (f64, f64) {
        let n = xs.len() as f64;
        let sx: f64 = xs.iter().map(|&v| v as f64).sum();
        let sy: f64 = ys.iter().map(|&v| v as f64).sum();
        let sxx: f64 = xs.iter().map(|&v| (v as f64) * (v as f64)).sum();
        let sxy: f64 = xs.iter().zip(ys).map(|(&a, &b)| a as f64 * b as f64).sum();
        let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
        let intercept = (sy - slope * sx) / n;
        (slope, intercept)
    }

    #[test]
    fn gd_recovers_noiseless_affine_map() {
        let xs: Vec<f32> = (0..40).map(|i| -1.0 + i as f32 / 20.0).collect();
        let ys: Vec<f32> = xs.iter().map(|&x| 2.0 * x + 1.0).collect();
        let (slope, intercept) = least_squares_1d(&xs, &ys);
        assert!((slope - 2.0).abs() < 1e-9 && (intercept - 1.0).abs() < 1e-9);

        let x = Matrix::from_rows(&xs.iter().map(|&v| vec![v]).collect::<Vec<_>>()).unwrap();
        let y = Matrix::from_rows(&ys.iter().map(|&v| vec![v]).collect::<Vec<_>>()).unwrap();
        let cfg = GdConfig {
            learning_rate: 0.1,
            epochs: 500,
            l2: 0.0,
        };
        let model = GdRegressor::fit(&x, &y, &cfg).unwrap();
        assert!((model.weights.row(0)[0] as f64 - slope).abs() < 1e-3);
        assert!((model.bias[0] as f64 - intercept).abs() < 1e-3);
    }

    #[test]
    fn gd_with_constant_zero_feature_learns_target_mean() {
        let ys: Vec<f32> = vec![1.0, 2.0, 3.0, 6.0];
        let x = Matrix::from_rows(&vec![vec![0.0]; 4]).unwrap();
        let y = Matrix::from_rows(&ys.iter().map(|&v| vec![v]).collect::<Vec<_>>()).unwrap();
        let cfg = GdConfig {
            learning_rate: 0.2,
            epochs: 300,
            l2: 0.0,
        };
        let model = GdRegressor::fit(&x, &y, &cfg).unwrap();
        assert_eq!(model.weights.row(0)[0], 0.0);
        assert!((model.bias[0] - 3.0).abs() < 1e-3);
    }

    #[test]
    fn gd_loss_history_is_monotone_for_small_lr() {
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        let rows: Vec<Vec<f32>> = (0..60)
            .map(|_| (0..3).map(|_| rng.gen_range(-1.5..1.5)).collect())
            .collect();
        let targets: Vec<Vec<f32>> = rows
            .iter()
            .map(|r| vec![r[0] + 0.3 * r[1] - r[2] + rng.gen_range(-0.1..0.1)])
            .collect();
        let x = Matrix::from_rows(&rows).unwrap();
        let y = Matrix::from_rows(&targets).unwrap();
        let cfg = GdConfig {
            learning_rate: 0.01,
            epochs: 200,
            l2: 1e-4,
        };
        let model = GdRegressor::fit(&x, &y, &cfg).unwrap();
        for pair in model.loss_history.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-12, "loss increased: {pair:?}");
        }
    }

    #[test]
    fn gd_prediction_hand_cases() {
        let model = GdRegressor {
            weights: Matrix::from_rows(&[vec![2.0]]).unwrap(),
            bias: vec![1.0],
            config: GdConfig::default(),
            loss_history: Vec::new(),
        };
        assert_eq!(model.predict(&[3.0]).unwrap(), vec![7.0]);
        assert!(model.predict(&[1.0, 2.0]).is_err());

        let zero = GdRegressor {
            weights: Matrix::from_rows(&[vec![0.0, 0.0]]).unwrap(),
            bias: vec![4.5],
            config: GdConfig::default(),
            loss_history: Vec::new(),
        };
        assert_eq!(zero.predict(&[5.0, -5.0]).unwrap(), vec![4.5]);
    }

    #[test]
    fn gd_affine_identity_holds() {
        // predict(x + y) == predict(x) + predict(y) - bias
        let model = GdRegressor {
            weights: Matrix::from_rows(&[vec![1.5, -2.0], vec![0.25, 4.0]]).unwrap(),
            bias: vec![0.5, -1.0],
            config: GdConfig::default(),
            loss_history: Vec::new(),
        };
        let x = [1.0f32, 2.0];
        let y = [-0.5f32, 3.0];
        let xy: Vec<f32> = x.iter().zip(&y).map(|(a, b)| a + b).collect();
        let px = model.predict(&x).unwrap();
        let py = model.predict(&y).unwrap();
        let pxy = model.predict(&xy).unwrap();
        for d in 0..2 {
            assert!((pxy[d] - (px[d] + py[d] - model.bias[d])).abs() < 1e-5);
        }
    }

    #[test]
    fn gd_checkpoint_round_trips() {
        let model = GdRegressor {
            weights: Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap(),
            bias: vec![-0.5, 0.5],
            config: GdConfig::default(),
            loss_history: vec![1.0, 0.5],
        };
        let ckpt = StateModel::Gd(model.clone()).to_checkpoint();
        let back = StateModel::from_checkpoint(&ckpt, "mem").unwrap();
        match back {
            StateModel::Gd(g) => {
                assert_eq!(g.weights, model.weights);
                assert_eq!(g.bias, model.bias);
                assert_eq!(g.config, model.config);
            }
            other => panic!("wrong kind {other:?}"),
        }
    }
}
