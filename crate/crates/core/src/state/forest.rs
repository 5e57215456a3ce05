//! Bootstrap-aggregated CART regression trees with vector-valued leaves.
//!
//! Splits greedily minimize the summed per-child SSE of the target vectors.
//! Candidate thresholds are midpoints between consecutive distinct feature
//! values; SSE ties break toward the lowest feature index, then the lowest
//! threshold (enforced by ascending scan order with strict improvement).

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{Checkpoint, Reader};
use crate::matrix::Matrix;
use crate::parallel;

#[derive(Debug, Clone, PartialEq)]
pub enum TreeNode {
    Internal {
        feature: usize,
        threshold: f32,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
    Leaf {
        value: Vec<f32>,
    },
}

impl TreeNode {
    pub fn predict<'a>(&'a self, x: &[f32]) -> &'a [f32] {
        match self {
            TreeNode::Leaf { value } => value,
            TreeNode::Internal {
                feature,
                threshold,
                left,
                right,
            } => {
                if x[*feature] <= *threshold {
                    left.predict(x)
                } else {
                    right.predict(x)
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Internal { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    /// Visit every leaf together with the sample indices that reach it,
    /// starting from `indices` at this node. Used by instrumented tests.
    pub fn visit_leaves<'a>(
        &'a self,
        x: &Matrix,
        indices: Vec<usize>,
        out: &mut Vec<(&'a [f32], Vec<usize>)>,
    ) {
        match self {
            TreeNode::Leaf { value } => out.push((value, indices)),
            TreeNode::Internal {
                feature,
                threshold,
                left,
                right,
            } => {
                let (l, r): (Vec<usize>, Vec<usize>) = indices
                    .into_iter()
                    .partition(|&i| x.row(i)[*feature] <= *threshold);
                left.visit_leaves(x, l, out);
                right.visit_leaves(x, r, out);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForestHyperparams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    /// Features considered per split; `None` means `ceil(F / 3)`.
    pub features_per_split: Option<usize>,
    pub bootstrap: bool,
}

impl Default for ForestHyperparams {
    fn default() -> Self {
        Self {
            n_trees: 50,
            max_depth: 12,
            min_samples_leaf: 2,
            features_per_split: None,
            bootstrap: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RandomForest {
    pub trees: Vec<TreeNode>,
    pub hyperparams: ForestHyperparams,
    pub seed: u64,
    pub n_features: usize,
    pub n_targets: usize,
}

struct TreeFitter<'a> {
    x: &'a Matrix,
    y: &'a Matrix,
    max_depth: usize,
    min_samples_leaf: usize,
    features_per_split: usize,
    rng: ChaCha8Rng,
}

fn leaf_mean(y: &Matrix, indices: &[usize]) -> Vec<f32> {
    let t = y.cols();
    let mut sum = vec![0.0f64; t];
    for &i in indices {
        for (d, &v) in y.row(i).iter().enumerate() {
            sum[d] += v as f64;
        }
    }
    let n = indices.len() as f64;
    sum.into_iter().map(|s| (s / n) as f32).collect()
}

impl TreeFitter<'_> {
    fn fit(&mut self, indices: Vec<usize>, depth: usize) -> TreeNode {
        let n = indices.len();
        let make_leaf = |y: &Matrix, idx: &[usize]| TreeNode::Leaf {
            value: leaf_mean(y, idx),
        };
        if depth >= self.max_depth || n < 2 * self.min_samples_leaf || n < 2 {
            return make_leaf(self.y, &indices);
        }

        // node totals for SSE bookkeeping
        let t = self.y.cols();
        let mut total = vec![0.0f64; t];
        let mut total_sq = 0.0f64;
        for &i in &indices {
            for (d, &v) in self.y.row(i).iter().enumerate() {
                total[d] += v as f64;
                total_sq += (v as f64) * (v as f64);
            }
        }
        let node_sse = total_sq - total.iter().map(|s| s * s).sum::<f64>() / n as f64;
        if node_sse <= 1e-12 {
            return make_leaf(self.y, &indices); // zero target variance
        }

        let mut candidates =
            rand::seq::index::sample(&mut self.rng, self.x.cols(), self.features_per_split)
                .into_vec();
        candidates.sort_unstable();

        let mut best: Option<(f64, usize, f32, usize)> = None; // (sse, feature, threshold, sorted split pos)
        let mut sorted = indices.clone();
        let mut best_order: Vec<usize> = Vec::new();
        for feat in candidates {
            sorted.sort_unstable_by(|&a, &b| {
                self.x.row(a)[feat]
                    .partial_cmp(&self.x.row(b)[feat])
                    .unwrap()
                    .then(a.cmp(&b))
            });
            let mut left = vec![0.0f64; t];
            let mut left_sq = 0.0f64;
            for k in 1..n {
                let prev = sorted[k - 1];
                for (d, &v) in self.y.row(prev).iter().enumerate() {
                    left[d] += v as f64;
                    left_sq += (v as f64) * (v as f64);
                }
                let (a, b) = (self.x.row(prev)[feat], self.x.row(sorted[k])[feat]);
                if a == b {
                    continue; // not a boundary between distinct values
                }
                if k < self.min_samples_leaf || n - k < self.min_samples_leaf {
                    continue;
                }
                let threshold = (a + b) / 2.0;
                if !(threshold > a) {
                    continue; // midpoint rounded onto the left value; split would not separate
                }
                let left_norm = left.iter().map(|s| s * s).sum::<f64>();
                let right_sq = total_sq - left_sq;
                let right_norm = total
                    .iter()
                    .zip(&left)
                    .map(|(tot, l)| (tot - l) * (tot - l))
                    .sum::<f64>();
                let sse = (left_sq - left_norm / k as f64)
                    + (right_sq - right_norm / (n - k) as f64);
                // strict improvement + ascending (feature, threshold) scan
                // order implements the tie-break
                if best.map_or(true, |(bs, ..)| sse < bs) {
                    best = Some((sse, feat, threshold, k));
                    best_order = sorted.clone();
                }
            }
        }

        match best {
            None => make_leaf(self.y, &indices),
            Some((_, feature, threshold, pos)) => {
                let left_idx = best_order[..pos].to_vec();
                let right_idx = best_order[pos..].to_vec();
                let left = self.fit(left_idx, depth + 1);
                let right = self.fit(right_idx, depth + 1);
                TreeNode::Internal {
                    feature,
                    threshold,
                    left: Box::new(left),
                    right: Box::new(right),
                }
            }
        }
    }
}

impl RandomForest {
    /// Fit `n_trees` CART trees on seeded bootstrap resamples.
    pub fn fit(x: &Matrix, y: &Matrix, hyperparams: &ForestHyperparams, seed: u64) -> Result<Self> {
        let n = x.rows();
        if n < 2 {
            return Err(Error::Config(format!(
                "random forest needs at least 2 samples, got {n}"
            )));
        }
        if y.rows() != n {
            return Err(Error::ShapeMismatch(format!(
                "feature matrix has {} rows, target matrix {}",
                n,
                y.rows()
            )));
        }
        if x.data().iter().chain(y.data()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("random forest training data".into()));
        }
        if hyperparams.n_trees == 0 {
            return Err(Error::Config("n_trees must be >= 1".into()));
        }
        let features_per_split = hyperparams
            .features_per_split
            .unwrap_or_else(|| x.cols().div_ceil(3))
            .clamp(1, x.cols());

        parallel::init_pool();
        let trees: Vec<TreeNode> = (0..hyperparams.n_trees)
            .into_par_iter()
            .map(|tree_idx| {
                let mut rng = ChaCha8Rng::seed_from_u64(crate::derive_seed(
                    seed,
                    &format!("tree-{tree_idx}"),
                ));
                let indices: Vec<usize> = if hyperparams.bootstrap {
                    (0..n).map(|_| rng.gen_range(0..n)).collect()
                } else {
                    (0..n).collect()
                };
                let mut fitter = TreeFitter {
                    x,
                    y,
                    max_depth: hyperparams.max_depth,
                    min_samples_leaf: hyperparams.min_samples_leaf,
                    features_per_split,
                    rng,
                };
                fitter.fit(indices, 0)
            })
            .collect();

        Ok(Self {
            trees,
            hyperparams: hyperparams.clone(),
            seed,
            n_features: x.cols(),
            n_targets: y.cols(),
        })
    }

    /// Component-wise arithmetic mean over the trees' leaf values.
    pub fn predict(&self, x: &[f32]) -> Result<Vec<f32>> {
        if x.len() != self.n_features {
            return Err(Error::ShapeMismatch(format!(
                "forest expects {} features, got {}",
                self.n_features,
                x.len()
            )));
        }
        let mut acc = vec![0.0f64; self.n_targets];
        for tree in &self.trees {
            for (a, &v) in acc.iter_mut().zip(tree.predict(x)) {
                *a += v as f64;
            }
        }
        let k = self.trees.len() as f64;
        Ok(acc.into_iter().map(|v| (v / k) as f32).collect())
    }

    // -- checkpoint encoding ------------------------------------------------

    pub fn encode(&self) -> Vec<u8> {
        fn encode_node(node: &TreeNode, out: &mut Vec<u8>) {
            match node {
                TreeNode::Internal {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    out.push(0u8);
                    out.extend_from_slice(&(*feature as u32).to_le_bytes());
                    out.extend_from_slice(&threshold.to_le_bytes());
                    encode_node(left, out);
                    encode_node(right, out);
                }
                TreeNode::Leaf { value } => {
                    out.push(1u8);
                    out.extend_from_slice(&(value.len() as u32).to_le_bytes());
                    for v in value {
                        out.extend_from_slice(&v.to_le_bytes());
                    }
                }
            }
        }
        let mut out = Vec::new();
        out.extend_from_slice(&(self.trees.len() as u32).to_le_bytes());
        for tree in &self.trees {
            encode_node(tree, &mut out);
        }
        out
    }

    pub fn decode(bytes: &[u8], path: &str) -> Result<Vec<TreeNode>> {
        fn decode_node(r: &mut Reader, depth: usize) -> Result<TreeNode> {
            if depth > 64 {
                return Err(Error::format(r.path().to_string(), "tree depth exceeds 64"));
            }
            match r.u8()? {
                0 => {
                    let feature = r.u32()? as usize;
                    let threshold = r.f32()?;
                    let left = decode_node(r, depth + 1)?;
                    let right = decode_node(r, depth + 1)?;
                    Ok(TreeNode::Internal {
                        feature,
                        threshold,
                        left: Box::new(left),
                        right: Box::new(right),
                    })
                }
                1 => {
                    let dim = r.u32()? as usize;
                    Ok(TreeNode::Leaf {
                        value: r.f32_vec(dim)?,
                    })
                }
                other => Err(Error::format(
                    r.path().to_string(),
                    format!("unknown tree node kind {other}"),
                )),
            }
        }
        let mut r = Reader::new(bytes, path);
        let count = r.u32()? as usize;
        let mut trees = Vec::with_capacity(count);
        for _ in 0..count {
            trees.push(decode_node(&mut r, 0)?);
        }
        r.done()?;
        Ok(trees)
    }
}

#[derive(Serialize, Deserialize)]
struct ForestMeta {
    model_kind: String,
    n_features: usize,
    n_targets: usize,
    seed: u64,
    hyperparams: ForestHyperparams,
}

pub const FOREST_SECTION: &str = "forest";
pub const META_SECTION: &str = "meta";

impl RandomForest {
    pub fn to_checkpoint(&self) -> Checkpoint {
        let meta = ForestMeta {
            model_kind: "forest".into(),
            n_features: self.n_features,
            n_targets: self.n_targets,
            seed: self.seed,
            hyperparams: self.hyperparams.clone(),
        };
        let mut ckpt = Checkpoint::new(Vec::new());
        ckpt.add_section(
            META_SECTION,
            serde_json::to_vec(&meta).expect("meta serializes"),
        );
        ckpt.add_section(FOREST_SECTION, self.encode());
        ckpt
    }

    pub fn from_checkpoint(ckpt: &Checkpoint, path: &str) -> Result<Self> {
        let meta: ForestMeta = serde_json::from_slice(ckpt.require_section(META_SECTION, path)?)?;
        if meta.model_kind != "forest" {
            return Err(Error::format(
                path,
                format!("checkpoint holds a {:?} model, expected forest", meta.model_kind),
            ));
        }
        let trees = Self::decode(ckpt.require_section(FOREST_SECTION, path)?, path)?;
        Ok(Self {
            trees,
            hyperparams: meta.hyperparams,
            seed: meta.seed,
            n_features: meta.n_features,
            n_targets: meta.n_targets,
        })
    }
}
