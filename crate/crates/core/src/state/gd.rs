//! Full-batch gradient-descent linear regressor with L2 regularization.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::Checkpoint;
use crate::matrix::Matrix;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GdConfig {
    pub learning_rate: f32,
    pub epochs: usize,
    pub l2: f32,
}

impl Default for GdConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            epochs: 400,
            l2: 1e-4,
        }
    }
}

/// Affine map `y = W x + b` fitted by full-batch gradient descent on
/// MSE + L2. Inputs are expected to be standardized by the dataset
/// normalizer; the hand-case tests feed raw values on purpose.
#[derive(Debug, Clone, PartialEq)]
pub struct GdRegressor {
    pub weights: Matrix, // [targets x features]
    pub bias: Vec<f32>,
    pub config: GdConfig,
    pub loss_history: Vec<f64>,
}

impl GdRegressor {
    pub fn fit(x: &Matrix, y: &Matrix, config: &GdConfig) -> Result<Self> {
        let n = x.rows();
        if n == 0 || y.rows() != n {
            return Err(Error::ShapeMismatch(format!(
                "gd regressor: {} feature rows vs {} target rows",
                n,
                y.rows()
            )));
        }
        if config.learning_rate <= 0.0 || !config.learning_rate.is_finite() {
            return Err(Error::Config("gd learning rate must be positive".into()));
        }
        if config.l2 < 0.0 {
            return Err(Error::Config("gd l2 coefficient must be >= 0".into()));
        }
        let f = x.cols();
        let t = y.cols();
        let mut w = vec![0.0f32; t * f];
        let mut b = vec![0.0f32; t];
        let mut history = Vec::with_capacity(config.epochs);
        let inv = 1.0f64 / (n as f64 * t as f64);

        let mut residuals = vec![0.0f32; n * t];
        for epoch in 0..config.epochs {
            // forward pass and objective
            let mut sq_sum = 0.0f64;
            for i in 0..n {
                let xi = x.row(i);
                let yi = y.row(i);
                for ti in 0..t {
                    let row = &w[ti * f..(ti + 1) * f];
                    let mut pred = b[ti];
                    for (wv, xv) in row.iter().zip(xi) {
                        pred += wv * xv;
                    }
                    let r = pred - yi[ti];
                    residuals[i * t + ti] = r;
                    sq_sum += (r as f64) * (r as f64);
                }
            }
            let reg: f64 = config.l2 as f64 * w.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>();
            let loss = sq_sum * inv + reg;
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch });
            }
            history.push(loss);

            // gradient accumulation in f64
            let mut gw = vec![0.0f64; t * f];
            let mut gb = vec![0.0f64; t];
            for i in 0..n {
                let xi = x.row(i);
                for ti in 0..t {
                    let r = residuals[i * t + ti] as f64;
                    gb[ti] += r;
                    let grow = &mut gw[ti * f..(ti + 1) * f];
                    for (g, &xv) in grow.iter_mut().zip(xi) {
                        *g += r * xv as f64;
                    }
                }
            }
            let lr = config.learning_rate as f64;
            for (wi, g) in w.iter_mut().zip(&gw) {
                let grad = 2.0 * g * inv + 2.0 * config.l2 as f64 * *wi as f64;
                *wi = (*wi as f64 - lr * grad) as f32;
            }
            for (bi, g) in b.iter_mut().zip(&gb) {
                *bi = (*bi as f64 - lr * 2.0 * g * inv) as f32;
            }
        }
        if w.iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Diverged {
                epoch: config.epochs,
            });
        }
        Ok(Self {
            weights: Matrix::new(t, f, w)?,
            bias: b,
            config: config.clone(),
            loss_history: history,
        })
    }

    pub fn predict(&self, x: &[f32]) -> Result<Vec<f32>> {
        if x.len() != self.weights.cols() {
            return Err(Error::ShapeMismatch(format!(
                "gd regressor expects {} features, got {}",
                self.weights.cols(),
                x.len()
            )));
        }
        Ok(self
            .bias
            .iter()
            .enumerate()
            .map(|(ti, &b)| {
                let mut acc = b;
                for (wv, xv) in self.weights.row(ti).iter().zip(x) {
                    acc += wv * xv;
                }
                acc
            })
            .collect())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        #[derive(Serialize)]
        struct GdMeta<'a> {
            model_kind: &'a str,
            config: &'a GdConfig,
        }
        let mut ckpt = Checkpoint::new(vec![
            Tensor::new(
                vec![self.weights.rows(), self.weights.cols()],
                self.weights.data().to_vec(),
            )
            .expect("weights are rectangular"),
            Tensor::from_vec(self.bias.clone()),
        ]);
        ckpt.add_section(
            super::forest::META_SECTION,
            serde_json::to_vec(&GdMeta {
                model_kind: "gd",
                config: &self.config,
            })
            .expect("meta serializes"),
        );
        ckpt
    }

    pub fn from_checkpoint(ckpt: &Checkpoint, path: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct GdMeta {
            model_kind: String,
            config: GdConfig,
        }
        let meta: GdMeta =
            serde_json::from_slice(ckpt.require_section(super::forest::META_SECTION, path)?)?;
        if meta.model_kind != "gd" {
            return Err(Error::format(
                path,
                format!("checkpoint holds a {:?} model, expected gd", meta.model_kind),
            ));
        }
        if ckpt.tensors.len() != 2 {
            return Err(Error::format(path, "gd checkpoint needs 2 tensors"));
        }
        let w = &ckpt.tensors[0];
        let b = &ckpt.tensors[1];
        if w.rank() != 2 || b.rank() != 1 || w.shape()[0] != b.shape()[0] {
            return Err(Error::format(path, "gd checkpoint tensor shapes are inconsistent"));
        }
        Ok(Self {
            weights: Matrix::new(w.shape()[0], w.shape()[1], w.data().to_vec())?,
            bias: b.data().to_vec(),
            config: meta.config,
            loss_history: Vec::new(),
        })
    }
}
