//! Gradient-flow instrumentation: temporal Jacobians, Gershgorin disc
//! bounds, per-time-step gradient norms, global-norm clipping, and the
//! finite-difference gradient checker used to verify every backward pass in
//! the crate.

use crate::cells::{lstm_step, lstm_step_backward, rhn_step_backward, rhn_time_step};
use crate::cells::{CellParams, CellState, CellStepCache, LstmParams, Mode, RhnParams};
use crate::error::{Error, Result};
use crate::matrix::{global_norm, Matrix};
use crate::params::{GradMap, ParamSet};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// One Gershgorin disc: center is the diagonal entry, radius the sum of
/// off-diagonal magnitudes in that row. Every eigenvalue of the matrix lies
/// in the union of its discs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GershDisc {
    pub center: f64,
    pub radius: f64,
}

pub fn gershgorin_discs(j: &Matrix) -> Result<Vec<GershDisc>> {
    if j.rows() != j.cols() {
        return Err(Error::Shape {
            op: "gershgorin_discs",
            left: j.shape(),
            right: j.shape(),
        });
    }
    let n = j.rows();
    let mut discs = Vec::with_capacity(n);
    for i in 0..n {
        let row = j.row_slice(i);
        let center = row[i];
        let radius = row
            .iter()
            .enumerate()
            .filter(|(k, _)| *k != i)
            .map(|(_, v)| v.abs())
            .sum();
        discs.push(GershDisc { center, radius });
    }
    Ok(discs)
}

/// `discs.csv` rendering: row,center,radius.
pub fn discs_csv(discs: &[GershDisc]) -> String {
    let mut out = String::from("row,center,radius\n");
    for (i, d) in discs.iter().enumerate() {
        out.push_str(&format!("{i},{},{}\n", d.center, d.radius));
    }
    out
}

/// A differentiable map from one recurrent state to the next, at a fixed
/// time-step input. Batch size is 1: the Jacobian of one state vector.
pub trait TemporalStep {
    fn apply(&self, s: &Matrix) -> Result<Matrix>;
    /// Vector-Jacobian product at `s`: covector dL/ds_out -> dL/ds_in.
    fn vjp(&self, s: &Matrix, ds_out: &Matrix) -> Result<Matrix>;
    fn state_width(&self) -> usize;
}

/// Highway cell as a temporal step. Batch-norm sites run in inference mode:
/// training-mode statistics couple batch elements, so the per-sample
/// temporal Jacobian is defined under inference statistics. `time_step`
/// selects the statistics slot of per-step sites.
pub struct RhnStateMap<'a> {
    pub params: &'a RhnParams,
    pub x: &'a Matrix,
    pub time_step: usize,
}

impl RhnStateMap<'_> {
    fn mode(&self) -> Mode {
        Mode::Infer {
            time_step: self.time_step,
        }
    }
}

impl TemporalStep for RhnStateMap<'_> {
    fn apply(&self, s: &Matrix) -> Result<Matrix> {
        Ok(rhn_time_step(s, self.x, self.params, self.mode())?.0)
    }

    fn vjp(&self, s: &Matrix, ds_out: &Matrix) -> Result<Matrix> {
        let (_, cache) = rhn_time_step(s, self.x, self.params, self.mode())?;
        let mut scratch = GradMap::new();
        let (ds_in, _) = rhn_step_backward(ds_out, &cache, self.params, "", &mut scratch)?;
        Ok(ds_in)
    }

    fn state_width(&self) -> usize {
        self.params.hidden_width()
    }
}

/// LSTM as a temporal step over the packed state [h | c] (width 2F).
pub struct LstmStateMap<'a> {
    pub params: &'a LstmParams,
    pub x: &'a Matrix,
}

impl LstmStateMap<'_> {
    fn split(&self, s: &Matrix) -> Result<(Matrix, Matrix)> {
        let f = self.params.hidden_width();
        if s.shape() != (1, 2 * f) {
            return Err(Error::Config(format!(
                "packed lstm state must be 1x{}, got {}x{}",
                2 * f,
                s.shape().0,
                s.shape().1
            )));
        }
        let h = Matrix::from_vec(1, f, s.data()[..f].to_vec())?;
        let c = Matrix::from_vec(1, f, s.data()[f..].to_vec())?;
        Ok((h, c))
    }

    fn pack(h: &Matrix, c: &Matrix) -> Result<Matrix> {
        let mut data = h.data().to_vec();
        data.extend_from_slice(c.data());
        Matrix::from_vec(1, data.len(), data)
    }
}

impl TemporalStep for LstmStateMap<'_> {
    fn apply(&self, s: &Matrix) -> Result<Matrix> {
        let (h, c) = self.split(s)?;
        let (h_out, c_out, _) = lstm_step(&h, &c, self.x, self.params)?;
        Self::pack(&h_out, &c_out)
    }

    fn vjp(&self, s: &Matrix, ds_out: &Matrix) -> Result<Matrix> {
        let (h, c) = self.split(s)?;
        let (_, _, cache) = lstm_step(&h, &c, self.x, self.params)?;
        let (dh, dc) = self.split(ds_out)?;
        let mut scratch = GradMap::new();
        let (dh_prev, dc_prev, _) =
            lstm_step_backward(&dh, &dc, &cache, self.params, "", &mut scratch)?;
        Self::pack(&dh_prev, &dc_prev)
    }

    fn state_width(&self) -> usize {
        2 * self.params.hidden_width()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum JacobianMethod {
    Analytic,
    FiniteDiff,
}

/// J[i][j] = d s_next[i] / d s[j] at the given state. The analytic method
/// runs the backward pass against unit covectors; finite differences perturb
/// each state coordinate with h = 1e-6.
pub fn temporal_jacobian(
    step: &dyn TemporalStep,
    s: &Matrix,
    method: JacobianMethod,
) -> Result<Matrix> {
    if s.rows() != 1 {
        return Err(Error::Config(format!(
            "temporal jacobian is defined for a single state vector, got batch {}",
            s.rows()
        )));
    }
    let f = step.state_width();
    if s.cols() != f {
        return Err(Error::Config(format!(
            "state width {} does not match cell width {f}",
            s.cols()
        )));
    }
    let mut j = Matrix::zeros(f, f);
    match method {
        JacobianMethod::Analytic => {
            for i in 0..f {
                let mut e = Matrix::zeros(1, f);
                e.set(0, i, 1.0);
                let row = step.vjp(s, &e)?;
                for col in 0..f {
                    j.set(i, col, row.get(0, col));
                }
            }
        }
        JacobianMethod::FiniteDiff => {
            let h = 1e-6;
            for col in 0..f {
                let mut plus = s.clone();
                plus.set(0, col, plus.get(0, col) + h);
                let mut minus = s.clone();
                minus.set(0, col, minus.get(0, col) - h);
                let fp = step.apply(&plus)?;
                let fm = step.apply(&minus)?;
                for i in 0..f {
                    j.set(i, col, (fp.get(0, i) - fm.get(0, i)) / (2.0 * h));
                }
            }
        }
    }
    Ok(j)
}

/// Rescales all gradients so their global norm does not exceed `threshold`.
/// Returns the pre-clip norm.
pub fn clip_by_global_norm(grads: &mut [Matrix], threshold: f64) -> Result<f64> {
    if threshold <= 0.0 {
        return Err(Error::Config(format!(
            "clip threshold must be positive, got {threshold}"
        )));
    }
    let refs: Vec<&Matrix> = grads.iter().collect();
    let pre_norm = global_norm(&refs);
    if pre_norm > threshold {
        let k = threshold / pre_norm;
        for g in grads.iter_mut() {
            *g = g.scale(k);
        }
    }
    Ok(pre_norm)
}

/// [`clip_by_global_norm`] over a named gradient map.
pub fn clip_grad_map(grads: &mut GradMap, threshold: f64) -> Result<f64> {
    if threshold <= 0.0 {
        return Err(Error::Config(format!(
            "clip threshold must be positive, got {threshold}"
        )));
    }
    let pre_norm = global_norm(&grads.matrices());
    if pre_norm > threshold {
        grads.scale_all(threshold / pre_norm);
    }
    Ok(pre_norm)
}

/// Outcome of a finite-difference check of an analytic gradient.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
    pub coords_checked: usize,
    pub tol: f64,
    pub pass: bool,
}

impl GradCheckReport {
    pub fn summary(&self) -> String {
        format!(
            "{}: max rel err {:.3e} over {} coords (worst {}[{}]: analytic {:.6e} vs numeric {:.6e}, tol {:.0e})",
            if self.pass { "pass" } else { "FAIL" },
            self.max_rel_err,
            self.coords_checked,
            self.worst_param,
            self.worst_index,
            self.worst_analytic,
            self.worst_numeric,
            self.tol,
        )
    }
}

/// Compares an analytic gradient against central finite differences
/// (f(p + h e_i) - f(p - h e_i)) / 2h with relative error
/// |a - n| / max(|a|, |n|, 1e-8).
///
/// `sample` caps the number of coordinates checked (seeded choice without
/// replacement); all coordinates are checked when it is None or larger than
/// the parameter count. A missing name in `analytic` counts as zero.
pub fn grad_check<P: ParamSet + Clone>(
    f: &mut dyn FnMut(&P) -> Result<f64>,
    params: &P,
    analytic: &GradMap,
    h: f64,
    tol: f64,
    sample: Option<(usize, u64)>,
) -> Result<GradCheckReport> {
    let shapes = params.named_shapes();
    let mut coords: Vec<(usize, usize)> = Vec::new();
    for (pi, (_, (r, c))) in shapes.iter().enumerate() {
        for idx in 0..r * c {
            coords.push((pi, idx));
        }
    }
    if let Some((max, seed)) = sample {
        if coords.len() > max {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            // Partial Fisher-Yates: the first `max` entries are the sample.
            for i in 0..max {
                let j = rng.random_range(i..coords.len());
                coords.swap(i, j);
            }
            coords.truncate(max);
        }
    }

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        worst_analytic: 0.0,
        worst_numeric: 0.0,
        coords_checked: coords.len(),
        tol,
        pass: true,
    };

    for (pi, idx) in coords {
        let name = &shapes[pi].0;
        let mut plus = params.clone();
        plus.nudge(name, idx, h);
        let mut minus = params.clone();
        minus.nudge(name, idx, -h);
        let fp = f(&plus)?;
        let fm = f(&minus)?;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::NonFinite(format!(
                "objective not finite when perturbing {name}[{idx}]"
            )));
        }
        let numeric = (fp - fm) / (2.0 * h);
        let a = analytic
            .get(name)
            .map(|g| g.data()[idx])
            .unwrap_or(0.0);
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        if rel > report.max_rel_err {
            report.max_rel_err = rel;
            report.worst_param = name.clone();
            report.worst_index = idx;
            report.worst_analytic = a;
            report.worst_numeric = numeric;
        }
    }
    report.pass = report.max_rel_err < tol;
    Ok(report)
}

/// Per-time-step gradient norms of a completed backward pass, plus the
/// pre/post-clip global norms when an update was clipped.
#[derive(Clone, Debug)]
pub struct GradTrace {
    /// per_step[t-1] = ||dL/ds_t|| for time steps t = 1..=T.
    pub per_step: Vec<f64>,
    pub pre_clip: Option<f64>,
    pub post_clip: Option<f64>,
}

/// `trace.csv` rendering: t,grad_norm.
pub fn trace_csv(trace: &GradTrace) -> String {
    let mut out = String::from("t,grad_norm\n");
    for (i, n) in trace.per_step.iter().enumerate() {
        out.push_str(&format!("{},{}\n", i + 1, n));
    }
    out
}

fn state_grad_norm(state: &CellState) -> f64 {
    match state {
        CellState::Rhn(s) => global_norm(&[s]),
        CellState::Lstm { h, c } => global_norm(&[h, c]),
    }
}

/// Runs the cell forward over `xs` from `s0`, applies a loss covector at the
/// last step (`probe`, or all-ones for the linear probe L = sum(s_T) when
/// None), backpropagates, and records ||dL/ds_t|| for t = 1..=T.
pub fn grad_norm_trace(
    cell: &CellParams,
    s0: &Matrix,
    xs: &[Matrix],
    mode: Mode,
    probe: Option<&Matrix>,
) -> Result<GradTrace> {
    if xs.is_empty() {
        return Err(Error::Config("gradient trace needs at least one step".into()));
    }
    let batch = s0.rows();
    let mut state = cell.initial_state(s0.clone());
    let mut caches: Vec<CellStepCache> = Vec::with_capacity(xs.len());
    for (t, x) in xs.iter().enumerate() {
        let step_mode = match mode {
            Mode::Train => Mode::Train,
            Mode::Infer { .. } => Mode::Infer { time_step: t },
        };
        let (next, cache) = cell.step(&state, x, step_mode)?;
        state = next;
        caches.push(cache);
    }

    let t_len = xs.len();
    let mut norms = vec![0.0; t_len];
    let mut dstate = cell.zero_state_grad(batch);
    let ones = Matrix::filled(batch, cell.hidden_width(), 1.0);
    dstate.add_to_output(probe.unwrap_or(&ones))?;
    norms[t_len - 1] = state_grad_norm(&dstate);
    let mut scratch = GradMap::new();
    for t in (1..t_len).rev() {
        let (dprev, _) = cell.step_backward(&dstate, &caches[t], "", &mut scratch)?;
        dstate = dprev;
        norms[t - 1] = state_grad_norm(&dstate);
    }
    Ok(GradTrace {
        per_step: norms,
        pre_clip: None,
        post_clip: None,
    })
}
