//! The highway recurrence: per-depth step, the depth-D time step, and their
//! exact backward passes.
//!
//! One depth computes
//!
//! ```text
//! h = tanh(x*W_h + s_hat*R_h + b_h)
//! t = sigmoid(x*W_t + s_hat*R_t + b_t)
//! c = 1 - t                     (coupled)
//!   = sigmoid(x*W_c + s_hat*R_c + b_c)   (decoupled)
//! s_out = h (*) t + s_in (*) c
//! ```
//!
//! where `s_hat` is the batch-normalized state when a site is present and
//! the raw state otherwise. The carry product always uses the raw `s_in`:
//! normalizing the skip path would break the near-identity state map that
//! keeps the temporal Jacobian centered at one.

use super::{CellVariant, GateParams, HighwayDepthParams, Mode, RhnParams};
use crate::batchnorm::{
    bn_backward, bn_forward_infer_cached, bn_forward_train_stats, BnCache, BnLayer,
};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::params::{join, GradMap};

/// Forward bookkeeping for one depth.
#[derive(Clone, Debug)]
pub struct HighwayStepCache {
    pub s_in: Matrix,
    /// State as seen by the gates: batch-normalized when a site is present.
    pub s_hat: Matrix,
    /// Gate input at depth 1 (after input batch-norm, when present).
    pub x: Option<Matrix>,
    pub h: Matrix,
    pub t: Matrix,
    pub c: Matrix,
    pub bn: Option<BnCache>,
}

fn gate_preactivation(s_hat: &Matrix, x: Option<&Matrix>, g: &GateParams) -> Result<Matrix> {
    let mut a = s_hat.matmul(&g.recurrent)?;
    match (x, &g.input) {
        (Some(x), Some(w)) => a = a.add(&x.matmul(w)?)?,
        (None, None) => {}
        (Some(_), None) => {
            return Err(Error::Config(
                "time-step input supplied to a depth without input weights".into(),
            ))
        }
        (None, Some(_)) => {
            return Err(Error::Config(
                "depth 1 requires the time-step input".into(),
            ))
        }
    }
    a.add_row(&g.bias)
}

/// One highway depth. `x` must be present iff the depth carries input
/// weights (depth 1); `bn` normalizes the state on the gate path only.
pub fn highway_step(
    s_in: &Matrix,
    x: Option<&Matrix>,
    p: &HighwayDepthParams,
    variant: CellVariant,
    bn: Option<&BnLayer>,
    mode: Mode,
) -> Result<(Matrix, HighwayStepCache)> {
    if bn.is_some() && variant == CellVariant::Coupled {
        return Err(Error::Config(
            "batch-norm site supplied to the coupled variant".into(),
        ));
    }
    let (s_hat, bn_cache) = match bn {
        Some(layer) => {
            let (y, cache) = match mode {
                Mode::Train => bn_forward_train_stats(s_in, layer)?,
                Mode::Infer { time_step } => bn_forward_infer_cached(s_in, layer, time_step)?,
            };
            (y, Some(cache))
        }
        None => (s_in.clone(), None),
    };

    let h = gate_preactivation(&s_hat, x, &p.candidate)?.tanh();
    let t = gate_preactivation(&s_hat, x, &p.transform)?.sigmoid();
    let c = match (variant, &p.carry) {
        (CellVariant::Coupled, None) => t.map(|v| 1.0 - v),
        (CellVariant::DecoupledBn, Some(g)) => gate_preactivation(&s_hat, x, g)?.sigmoid(),
        (CellVariant::Coupled, Some(_)) => {
            return Err(Error::Config(
                "coupled variant must not carry explicit carry-gate parameters".into(),
            ))
        }
        (CellVariant::DecoupledBn, None) => {
            return Err(Error::Config(
                "decoupled variant requires carry-gate parameters".into(),
            ))
        }
    };

    let s_out = h.mul(&t)?.add(&s_in.mul(&c)?)?;
    let cache = HighwayStepCache {
        s_in: s_in.clone(),
        s_hat,
        x: x.cloned(),
        h,
        t,
        c,
        bn: bn_cache,
    };
    Ok((s_out, cache))
}

/// Exact reverse of [`highway_step`]. Parameter gradients accumulate into
/// `grads` under `depth_prefix`; batch-norm scale/shift gradients under the
/// site name in `bn`. Returns (dL/ds_in, dL/dx).
pub fn highway_step_backward(
    ds_out: &Matrix,
    cache: &HighwayStepCache,
    p: &HighwayDepthParams,
    variant: CellVariant,
    bn: Option<(&BnLayer, String)>,
    depth_prefix: &str,
    grads: &mut GradMap,
) -> Result<(Matrix, Option<Matrix>)> {
    let dh = ds_out.mul(&cache.t)?;
    let mut dt = ds_out.mul(&cache.h)?;
    let dc = ds_out.mul(&cache.s_in)?;
    // Carry path: d(s_in (*) c)/d(s_in), against the raw state.
    let mut ds_in = ds_out.mul(&cache.c)?;

    let da_h = dh.mul(&cache.h.tanh_prime_from_y())?;
    let da_c = match (variant, &p.carry) {
        (CellVariant::Coupled, None) => {
            // c = 1 - t folds the carry gradient into the transform gate.
            dt = dt.sub(&dc)?;
            None
        }
        (CellVariant::DecoupledBn, Some(_)) => Some(dc.mul(&cache.c.sigmoid_prime_from_y())?),
        _ => return Err(Error::Config("carry-gate parameters do not match variant".into())),
    };
    let da_t = dt.mul(&cache.t.sigmoid_prime_from_y())?;

    let mut gate_grads: Vec<(&str, &GateParams, Matrix)> = vec![
        ("candidate", &p.candidate, da_h),
        ("transform", &p.transform, da_t),
    ];
    if let (Some(da), Some(g)) = (da_c, &p.carry) {
        gate_grads.push(("carry", g, da));
    }

    let mut ds_hat = Matrix::zeros(ds_out.rows(), ds_out.cols());
    let mut dx: Option<Matrix> = None;
    let s_hat_t = cache.s_hat.transpose();
    for (name, g, da) in &gate_grads {
        grads.accumulate(&join(depth_prefix, &format!("{name}.r")), &s_hat_t.matmul(da)?)?;
        grads.accumulate(&join(depth_prefix, &format!("{name}.b")), &da.col_sum())?;
        ds_hat.add_scaled(&da.matmul(&g.recurrent.transpose())?, 1.0)?;
        match (&cache.x, &g.input) {
            (Some(x), Some(w)) => {
                grads.accumulate(
                    &join(depth_prefix, &format!("{name}.w")),
                    &x.transpose().matmul(da)?,
                )?;
                let piece = da.matmul(&w.transpose())?;
                match &mut dx {
                    Some(acc) => acc.add_scaled(&piece, 1.0)?,
                    None => dx = Some(piece),
                }
            }
            (None, None) => {}
            _ => {
                return Err(Error::Config(
                    "cache input does not match gate input weights".into(),
                ))
            }
        }
    }

    match (&cache.bn, bn) {
        (Some(bn_cache), Some((layer, site))) => {
            let (ds_via_bn, dgamma, dbeta) = bn_backward(&ds_hat, bn_cache, layer)?;
            ds_in.add_scaled(&ds_via_bn, 1.0)?;
            grads.accumulate(&format!("{site}.gamma"), &dgamma)?;
            grads.accumulate(&format!("{site}.beta"), &dbeta)?;
        }
        (None, None) => ds_in.add_scaled(&ds_hat, 1.0)?,
        _ => {
            return Err(Error::Config(
                "cache batch-norm state does not match supplied site".into(),
            ))
        }
    }

    Ok((ds_in, dx))
}

/// Forward bookkeeping for one full time step (all D depths).
#[derive(Clone, Debug)]
pub struct RhnStepCache {
    pub depths: Vec<HighwayStepCache>,
    /// Cache of the input batch-norm site at depth 1, when present.
    pub input_bn: Option<BnCache>,
}

/// One time step: folds [`highway_step`] over depths 1..=D. The time-varying
/// input participates at depth 1 only; the state entering depth 1 is the
/// final state of the previous time step.
pub fn rhn_time_step(
    s_prev: &Matrix,
    x_t: &Matrix,
    params: &RhnParams,
    mode: Mode,
) -> Result<(Matrix, RhnStepCache)> {
    if s_prev.rows() != x_t.rows() {
        return Err(Error::Shape {
            op: "rhn_time_step",
            left: s_prev.shape(),
            right: x_t.shape(),
        });
    }
    let (x_used, input_bn) = match &params.bn {
        Some(sites) => {
            let (y, cache) = match mode {
                Mode::Train => bn_forward_train_stats(x_t, &sites.input)?,
                Mode::Infer { time_step } => {
                    bn_forward_infer_cached(x_t, &sites.input, time_step)?
                }
            };
            (y, Some(cache))
        }
        None => (x_t.clone(), None),
    };

    let mut s = s_prev.clone();
    let mut depths = Vec::with_capacity(params.depth);
    for (d, p) in params.per_depth.iter().enumerate() {
        let x = if d == 0 { Some(&x_used) } else { None };
        let (s_next, cache) = highway_step(&s, x, p, params.variant, params.state_bn(d), mode)?;
        s = s_next;
        depths.push(cache);
    }
    Ok((s, RhnStepCache { depths, input_bn }))
}

/// Exact reverse of [`rhn_time_step`]: returns (dL/ds_prev, dL/dx_t) and
/// accumulates all parameter gradients (gates and batch-norm scale/shift)
/// under `prefix`.
pub fn rhn_step_backward(
    ds_t: &Matrix,
    cache: &RhnStepCache,
    params: &RhnParams,
    prefix: &str,
    grads: &mut GradMap,
) -> Result<(Matrix, Matrix)> {
    if cache.depths.len() != params.depth {
        return Err(Error::Config(
            "cache depth does not match cell parameters".into(),
        ));
    }
    let mut ds = ds_t.clone();
    let mut dx_used: Option<Matrix> = None;
    for d in (0..params.depth).rev() {
        let bn_site = params
            .state_bn(d)
            .map(|layer| (layer, params.state_bn_name(d, prefix)));
        let (ds_in, dx) = highway_step_backward(
            &ds,
            &cache.depths[d],
            &params.per_depth[d],
            params.variant,
            bn_site,
            &join(prefix, &format!("d{}", d + 1)),
            grads,
        )?;
        ds = ds_in;
        if let Some(dx) = dx {
            debug_assert!(d == 0, "input gradient can only arise at depth 1");
            dx_used = Some(dx);
        }
    }
    let dx_used = dx_used.ok_or_else(|| {
        Error::Config("backward pass produced no input gradient at depth 1".into())
    })?;

    let dx = match (&cache.input_bn, &params.bn) {
        (Some(bn_cache), Some(sites)) => {
            let (dx_raw, dgamma, dbeta) = bn_backward(&dx_used, bn_cache, &sites.input)?;
            grads.accumulate(&join(prefix, "bn.input.gamma"), &dgamma)?;
            grads.accumulate(&join(prefix, "bn.input.beta"), &dbeta)?;
            dx_raw
        }
        (None, None) => dx_used,
        _ => {
            return Err(Error::Config(
                "cache input batch-norm state does not match parameters".into(),
            ))
        }
    };
    Ok((ds, dx))
}
