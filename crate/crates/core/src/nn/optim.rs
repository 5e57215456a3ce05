//! Seeded first-order optimizers: plain SGD and SGD with momentum, both with
//! optional L2 weight decay.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    Sgd,
    SgdMomentum,
}

/// Optimizer state: hyperparameters plus per-parameter velocity buffers.
///
/// Velocity buffers are allocated on first use and stay shape-congruent with
/// their parameters.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    kind: OptimizerKind,
    learning_rate: f32,
    momentum: f32,
    weight_decay: f32,
    velocity: Vec<Tensor>,
}

impl OptimizerState {
    pub fn sgd(learning_rate: f32, weight_decay: f32) -> Result<Self> {
        Self::new(OptimizerKind::Sgd, learning_rate, 0.0, weight_decay)
    }

    pub fn sgd_momentum(learning_rate: f32, momentum: f32, weight_decay: f32) -> Result<Self> {
        Self::new(OptimizerKind::SgdMomentum, learning_rate, momentum, weight_decay)
    }

    pub fn new(
        kind: OptimizerKind,
        learning_rate: f32,
        momentum: f32,
        weight_decay: f32,
    ) -> Result<Self> {
        if !learning_rate.is_finite() || learning_rate < 0.0 {
            return Err(Error::Config(format!(
                "learning rate must be a non-negative real, got {learning_rate}"
            )));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::Config(format!(
                "momentum must lie in [0, 1), got {momentum}"
            )));
        }
        if !weight_decay.is_finite() || weight_decay < 0.0 {
            return Err(Error::Config(format!(
                "weight decay must be >= 0, got {weight_decay}"
            )));
        }
        Ok(Self {
            kind,
            learning_rate,
            momentum,
            weight_decay,
            velocity: Vec::new(),
        })
    }

    pub fn learning_rate(&self) -> f32 {
        self.learning_rate
    }

    pub fn set_learning_rate(&mut self, lr: f32) {
        self.learning_rate = lr;
    }

    /// One update step over a parameter list.
    ///
    /// Plain SGD: `p <- p - lr * (g + wd * p)`. Momentum folds the decayed
    /// gradient into a velocity buffer first. A non-finite gradient aborts
    /// with an error before touching any parameter.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[&Tensor]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::ShapeMismatch(format!(
                "optimizer got {} parameters but {} gradients",
                params.len(),
                grads.len()
            )));
        }
        for (p, g) in params.iter().zip(grads) {
            if !p.same_shape(g) {
                return Err(Error::ShapeMismatch(format!(
                    "gradient shape {:?} does not match parameter shape {:?}",
                    g.shape(),
                    p.shape()
                )));
            }
            g.ensure_finite("gradient (training aborts rather than corrupts parameters)")?;
        }
        if self.velocity.is_empty() && self.kind == OptimizerKind::SgdMomentum {
            self.velocity = params
                .iter()
                .map(|p| Tensor::zeros(p.shape().to_vec()))
                .collect();
        }
        if self.kind == OptimizerKind::SgdMomentum && self.velocity.len() != params.len() {
            return Err(Error::ShapeMismatch(
                "optimizer state was initialized for a different parameter list".into(),
            ));
        }

        let lr = self.learning_rate;
        let wd = self.weight_decay;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    for (pv, gv) in p.data_mut().iter_mut().zip(g.data()) {
                        *pv -= lr * (gv + wd * *pv);
                    }
                }
            }
            OptimizerKind::SgdMomentum => {
                let mu = self.momentum;
                for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut self.velocity) {
                    if !v.same_shape(p) {
                        return Err(Error::ShapeMismatch(
                            "velocity buffer not congruent with parameter".into(),
                        ));
                    }
                    for ((pv, gv), vv) in
                        p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut())
                    {
                        *vv = mu * *vv + (gv + wd * *pv);
                        *pv -= lr * *vv;
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t1(data: Vec<f32>) -> Tensor {
        Tensor::from_vec(data)
    }

    #[test]
    fn zero_learning_rate_leaves_params_unchanged() {
        let mut p = t1(vec![1.0, -2.0]);
        let g = t1(vec![5.0, 5.0]);
        let mut opt = OptimizerState::sgd(0.0, 0.0).unwrap();
        opt.step(&mut [&mut p], &[&g]).unwrap();
        assert_eq!(p.data(), &[1.0, -2.0]);
    }

    #[test]
    fn plain_sgd_update_rule() {
        // p=1, g=2, lr=0.1, wd=0 -> 0.8
        let mut p = t1(vec![1.0]);
        let mut opt = OptimizerState::sgd(0.1, 0.0).unwrap();
        opt.step(&mut [&mut p], &[&t1(vec![2.0])]).unwrap();
        assert!((p.data()[0] - 0.8).abs() < 1e-7);
    }

    #[test]
    fn decay_only_step() {
        // p=1, g=0, lr=0.1, wd=0.5 -> 0.95
        let mut p = t1(vec![1.0]);
        let mut opt = OptimizerState::sgd(0.1, 0.5).unwrap();
        opt.step(&mut [&mut p], &[&t1(vec![0.0])]).unwrap();
        assert!((p.data()[0] - 0.95).abs() < 1e-7);
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let mut p = t1(vec![1.0]);
        let mut opt = OptimizerState::sgd(0.1, 0.0).unwrap();
        let err = opt.step(&mut [&mut p], &[&t1(vec![f32::NAN])]).unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)));
        assert_eq!(p.data(), &[1.0]); // untouched
    }

    #[test]
    fn momentum_accumulates_velocity() {
        let mut p = t1(vec![0.0]);
        let g = t1(vec![1.0]);
        let mut opt = OptimizerState::sgd_momentum(1.0, 0.5, 0.0).unwrap();
        opt.step(&mut [&mut p], &[&g]).unwrap(); // v=1, p=-1
        opt.step(&mut [&mut p], &[&g]).unwrap(); // v=1.5, p=-2.5
        assert!((p.data()[0] + 2.5).abs() < 1e-6);
    }

    #[test]
    fn rejects_bad_hyperparameters() {
        assert!(OptimizerState::sgd(-0.1, 0.0).is_err());
        assert!(OptimizerState::sgd_momentum(0.1, 1.0, 0.0).is_err());
        assert!(OptimizerState::sgd(0.1, -1.0).is_err());
    }

    #[test]
    fn full_batch_sgd_on_convex_quadratic_is_monotone() {
        // f(p) = sum((p - c)^2), lr below 1/L with L = 2
        let mut p = t1(vec![5.0, -3.0, 2.0]);
        let c = [1.0f32, 0.0, -1.0];
        let mut opt = OptimizerState::sgd(0.3, 0.0).unwrap();
        let loss = |p: &Tensor| -> f64 {
            p.data()
                .iter()
                .zip(&c)
                .map(|(&pv, &cv)| ((pv - cv) as f64).powi(2))
                .sum()
        };
        let mut prev = loss(&p);
        for _ in 0..50 {
            let grad = t1(p
                .data()
                .iter()
                .zip(&c)
                .map(|(&pv, &cv)| 2.0 * (pv - cv))
                .collect());
            opt.step(&mut [&mut p], &[&grad]).unwrap();
            let cur = loss(&p);
            assert!(cur <= prev + 1e-12, "loss increased: {prev} -> {cur}");
            prev = cur;
        }
        assert!(prev < 1e-6);
    }
}
