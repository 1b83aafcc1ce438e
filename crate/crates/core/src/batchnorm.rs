//! One batch-normalization site: training/inference forward passes and the
//! exact backward pass, including the dependence of the batch statistics on
//! the input.
//!
//! Normalization uses population (biased) variance, matching what the forward
//! pass divides by. Running statistics are an exponential moving average
//! `r <- (1-momentum)*r + momentum*batch_stat`; inference normalizes with the
//! accumulated running statistics and is batch-size independent.
//!
//! A site used inside a recurrence can keep one statistics slot shared over
//! all time steps (the default) or one slot per unrolled time step. State
//! distributions inside a recurrence are strongly time-dependent, so shared
//! statistics can misrepresent every individual step at inference;
//! per-step statistics track them exactly, at the cost of clamping to the
//! last trained step beyond the training horizon.

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use serde::{Deserialize, Serialize};

/// Configuration for one batch-norm site.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct BnConfig {
    pub eps: f64,
    pub momentum: f64,
    /// Scale init. Small values keep the downstream tanh unsaturated in
    /// recurrent use, so the default is 0.1 rather than the feedforward 1.0.
    pub gamma_init: f64,
    /// One running-statistics slot for all time steps (true) or one per
    /// unrolled step (false).
    pub shared_over_time: bool,
}

impl Default for BnConfig {
    fn default() -> Self {
        BnConfig {
            eps: 1e-5,
            momentum: 0.1,
            gamma_init: 0.1,
            shared_over_time: true,
        }
    }
}

/// Running mean/variance for one statistics slot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BnRunningStats {
    pub mean: Matrix,
    pub var: Matrix,
    /// Training batches folded in; inference before the first is an error.
    pub batches_tracked: u64,
}

impl BnRunningStats {
    fn fresh(features: usize) -> BnRunningStats {
        BnRunningStats {
            mean: Matrix::zeros(1, features),
            var: Matrix::filled(1, features, 1.0),
            batches_tracked: 0,
        }
    }
}

/// Learnable scale/shift plus running statistics for one site.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BnLayer {
    pub gamma: Matrix,
    pub beta: Matrix,
    pub eps: f64,
    pub momentum: f64,
    pub shared_over_time: bool,
    /// One entry when shared over time; indexed by time step otherwise
    /// (grown on demand during training, clamped at inference).
    pub steps: Vec<BnRunningStats>,
}

impl BnLayer {
    pub fn new(features: usize, cfg: BnConfig) -> BnLayer {
        assert!(cfg.eps > 0.0, "bn eps must be positive");
        assert!(
            cfg.momentum > 0.0 && cfg.momentum < 1.0,
            "bn momentum must lie in (0,1)"
        );
        BnLayer {
            gamma: Matrix::filled(1, features, cfg.gamma_init),
            beta: Matrix::zeros(1, features),
            eps: cfg.eps,
            momentum: cfg.momentum,
            shared_over_time: cfg.shared_over_time,
            steps: vec![BnRunningStats::fresh(features)],
        }
    }

    pub fn features(&self) -> usize {
        self.gamma.cols()
    }

    fn slot_index(&self, time_step: usize) -> usize {
        if self.shared_over_time {
            0
        } else {
            time_step.min(self.steps.len().saturating_sub(1))
        }
    }

    pub fn validate(&self) -> Result<()> {
        let f = self.features();
        for (name, m) in [("gamma", &self.gamma), ("beta", &self.beta)] {
            m.validate()?;
            if m.shape() != (1, f) {
                return Err(Error::Malformed(format!(
                    "bn field {name} has shape {}x{}, expected 1x{f}",
                    m.shape().0,
                    m.shape().1
                )));
            }
        }
        if self.eps <= 0.0 {
            return Err(Error::Malformed("bn eps must be positive".into()));
        }
        if self.steps.is_empty() {
            return Err(Error::Malformed("bn layer has no statistics slots".into()));
        }
        if self.shared_over_time && self.steps.len() != 1 {
            return Err(Error::Malformed(
                "shared-over-time bn layer must hold exactly one statistics slot".into(),
            ));
        }
        for s in &self.steps {
            s.mean.validate()?;
            s.var.validate()?;
            if s.mean.shape() != (1, f) || s.var.shape() != (1, f) {
                return Err(Error::Malformed("bn statistics have wrong shape".into()));
            }
            if s.var.data().iter().any(|&v| v < 0.0) {
                return Err(Error::Malformed("bn running variance is negative".into()));
            }
        }
        Ok(())
    }

    /// Folds one batch's statistics for the given time step into the
    /// running averages. Per-step layers grow new slots on demand.
    pub fn absorb_stats(
        &mut self,
        time_step: usize,
        batch_mean: &Matrix,
        batch_var: &Matrix,
    ) -> Result<()> {
        let f = self.features();
        let idx = if self.shared_over_time { 0 } else { time_step };
        while self.steps.len() <= idx {
            self.steps.push(BnRunningStats::fresh(f));
        }
        let m = self.momentum;
        let slot = &mut self.steps[idx];
        slot.mean = slot.mean.scale(1.0 - m).add(&batch_mean.scale(m))?;
        slot.var = slot.var.scale(1.0 - m).add(&batch_var.scale(m))?;
        slot.batches_tracked += 1;
        Ok(())
    }
}

/// Forward-pass bookkeeping consumed by [`bn_backward`].
#[derive(Clone, Debug)]
pub struct BnCache {
    /// Normalized input x-hat, BxF.
    pub normalized: Matrix,
    /// sqrt(var + eps), 1xF; batch or running variance depending on mode.
    pub std: Matrix,
    pub train_mode: bool,
    /// Batch (mean, population variance), present in train mode only.
    pub batch_stats: Option<(Matrix, Matrix)>,
}

fn check_width(x: &Matrix, layer: &BnLayer, op: &'static str) -> Result<()> {
    if x.cols() != layer.features() {
        return Err(Error::Shape {
            op,
            left: x.shape(),
            right: layer.gamma.shape(),
        });
    }
    Ok(())
}

/// Training-mode forward: normalize by batch statistics, scale and shift,
/// and return the layer with time-step-0 running statistics advanced by
/// this batch. Recurrent callers use [`bn_forward_train_stats`] and absorb
/// cache statistics under explicit time indices instead.
pub fn bn_forward_train(x: &Matrix, layer: &BnLayer) -> Result<(Matrix, BnCache, BnLayer)> {
    let (y, cache) = bn_forward_train_stats(x, layer)?;
    let mut updated = layer.clone();
    let (mean, var) = cache.batch_stats.as_ref().expect("train cache has stats");
    updated.absorb_stats(0, mean, var)?;
    Ok((y, cache, updated))
}

/// Training-mode forward without the running-statistics update; the batch
/// statistics ride in the cache so the caller can apply updates in order.
pub fn bn_forward_train_stats(x: &Matrix, layer: &BnLayer) -> Result<(Matrix, BnCache)> {
    check_width(x, layer, "bn_forward_train")?;
    let (mean, var) = x.col_stats();
    let std = var.map(|v| (v + layer.eps).sqrt());
    let normalized = x.sub_row(&mean)?.div_row(&std)?;
    let y = normalized.mul_row(&layer.gamma)?.add_row(&layer.beta)?;
    let cache = BnCache {
        normalized,
        std,
        train_mode: true,
        batch_stats: Some((mean, var)),
    };
    Ok((y, cache))
}

/// Inference-mode forward: normalize with the running statistics for the
/// given time step (ignored by shared-over-time layers; clamped to the last
/// trained step otherwise). Deterministic, batch-size independent.
pub fn bn_forward_infer(x: &Matrix, layer: &BnLayer, time_step: usize) -> Result<Matrix> {
    let (y, _) = bn_forward_infer_cached(x, layer, time_step)?;
    Ok(y)
}

pub fn bn_forward_infer_cached(
    x: &Matrix,
    layer: &BnLayer,
    time_step: usize,
) -> Result<(Matrix, BnCache)> {
    check_width(x, layer, "bn_forward_infer")?;
    let slot = &layer.steps[layer.slot_index(time_step)];
    if slot.batches_tracked == 0 {
        return Err(Error::UninitializedStats("bn_forward_infer"));
    }
    let std = slot.var.map(|v| (v + layer.eps).sqrt());
    let normalized = x.sub_row(&slot.mean)?.div_row(&std)?;
    let y = normalized.mul_row(&layer.gamma)?.add_row(&layer.beta)?;
    let cache = BnCache {
        normalized,
        std,
        train_mode: false,
        batch_stats: None,
    };
    Ok((y, cache))
}

/// Exact gradients of the forward map that produced `cache`.
///
/// Train mode differentiates through the batch mean and variance; inference
/// mode is a fixed affine map per column.
pub fn bn_backward(dy: &Matrix, cache: &BnCache, layer: &BnLayer) -> Result<(Matrix, Matrix, Matrix)> {
    check_width(dy, layer, "bn_backward")?;
    if dy.shape() != cache.normalized.shape() {
        return Err(Error::Shape {
            op: "bn_backward",
            left: dy.shape(),
            right: cache.normalized.shape(),
        });
    }
    let dbeta = dy.col_sum();
    let dgamma = dy.mul(&cache.normalized)?.col_sum();

    let dxhat = dy.mul_row(&layer.gamma)?;
    let dx = if cache.train_mode {
        let b = dy.rows() as f64;
        // dx = (B*dxhat - sum(dxhat) - xhat * sum(dxhat*xhat)) / (B*std)
        let sum_dxhat = dxhat.col_sum();
        let sum_dxhat_xhat = dxhat.mul(&cache.normalized)?.col_sum();
        dxhat
            .scale(b)
            .sub_row(&sum_dxhat)?
            .sub(&cache.normalized.mul_row(&sum_dxhat_xhat)?)?
            .div_row(&cache.std.scale(b))?
    } else {
        dxhat.div_row(&cache.std)?
    };
    Ok((dx, dgamma, dbeta))
}
