//! Recurrent transition functions with exact backward passes: the highway
//! step in coupled (c = 1 - t) and decoupled (independent carry gate plus
//! batch-normalized loop inputs) variants, and an LSTM baseline.

mod highway;
mod init;
mod lstm;

pub use highway::{
    highway_step, highway_step_backward, rhn_step_backward, rhn_time_step, HighwayStepCache,
    RhnStepCache,
};
pub use init::{init_params, init_params_rng, CellKind, CellSpec};
pub use lstm::{lstm_step, lstm_step_backward, LstmGate, LstmParams, LstmStepCache};

use crate::batchnorm::BnLayer;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::params::{GradMap, ParamSet};
use serde::{Deserialize, Serialize};

/// Forward-pass mode. Training uses batch statistics at every batch-norm
/// site; inference uses running statistics and is batch-size independent.
/// The inference time step selects the statistics slot of per-step sites
/// and is ignored by shared-over-time sites.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Train,
    Infer { time_step: usize },
}

impl Mode {
    /// Inference at time step 0; sufficient whenever every batch-norm site
    /// is shared over time (or absent).
    pub fn infer() -> Mode {
        Mode::Infer { time_step: 0 }
    }
}

/// Gate coupling of the highway cell.
///
/// `Coupled` derives the carry gate as c = 1 - t, which pins every
/// transform/carry pair to a convex combination. `DecoupledBn` gives the
/// carry gate its own parameters and batch-normalizes the recurrent-loop
/// inputs instead.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellVariant {
    Coupled,
    DecoupledBn,
}

/// Weights for one gate: optional input projection (depth 1 only), the
/// recurrent projection, and a bias row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GateParams {
    pub input: Option<Matrix>,
    pub recurrent: Matrix,
    pub bias: Matrix,
}

impl GateParams {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Matrix)) {
        if let Some(w) = &self.input {
            f(&format!("{prefix}.w"), w);
        }
        f(&format!("{prefix}.r"), &self.recurrent);
        f(&format!("{prefix}.b"), &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Matrix)) {
        if let Some(w) = &mut self.input {
            f(&format!("{prefix}.w"), w);
        }
        f(&format!("{prefix}.r"), &mut self.recurrent);
        f(&format!("{prefix}.b"), &mut self.bias);
    }
}

/// Per-depth weights of the highway recurrence: the tanh candidate path,
/// the transform gate, and (decoupled variant only) the carry gate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HighwayDepthParams {
    pub candidate: GateParams,
    pub transform: GateParams,
    /// None in the coupled variant; the carry gate is derived, not ignored.
    pub carry: Option<GateParams>,
}

impl HighwayDepthParams {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Matrix)) {
        self.candidate.visit(&format!("{prefix}.candidate"), f);
        self.transform.visit(&format!("{prefix}.transform"), f);
        if let Some(c) = &self.carry {
            c.visit(&format!("{prefix}.carry"), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Matrix)) {
        self.candidate.visit_mut(&format!("{prefix}.candidate"), f);
        self.transform.visit_mut(&format!("{prefix}.transform"), f);
        if let Some(c) = &mut self.carry {
            c.visit_mut(&format!("{prefix}.carry"), f);
        }
    }
}

/// Batch-norm sites of the decoupled variant: one per recurrence depth on
/// the state path (or just depth 1 when `bn_every_depth` is off) plus one on
/// the time-varying input at depth 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RhnBnSites {
    pub state: Vec<BnLayer>,
    pub input: BnLayer,
}

/// Full parameter set of a highway recurrence with depth D.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RhnParams {
    pub depth: usize,
    pub per_depth: Vec<HighwayDepthParams>,
    pub variant: CellVariant,
    /// Present iff variant is DecoupledBn.
    pub bn: Option<RhnBnSites>,
    /// When true, every depth's state input is normalized; when false only
    /// depth 1 is. The carry path always uses the raw state either way.
    pub bn_every_depth: bool,
}

impl RhnParams {
    pub fn hidden_width(&self) -> usize {
        self.per_depth[0].transform.recurrent.rows()
    }

    pub fn input_width(&self) -> usize {
        self.per_depth[0]
            .transform
            .input
            .as_ref()
            .map(|w| w.rows())
            .expect("depth 1 carries input weights")
    }

    /// State-path batch-norm site for a given 0-based depth, if any.
    pub(crate) fn state_bn(&self, d: usize) -> Option<&BnLayer> {
        let sites = self.bn.as_ref()?;
        if self.bn_every_depth {
            sites.state.get(d)
        } else if d == 0 {
            sites.state.first()
        } else {
            None
        }
    }

    pub(crate) fn state_bn_name(&self, d: usize, prefix: &str) -> String {
        let site = if self.bn_every_depth { d + 1 } else { 1 };
        crate::params::join(prefix, &format!("bn.state{site}"))
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.per_depth.len() != self.depth {
            return Err(Error::Config(format!(
                "depth {} does not match {} per-depth parameter sets",
                self.depth,
                self.per_depth.len()
            )));
        }
        let f = self.hidden_width();
        for (d, p) in self.per_depth.iter().enumerate() {
            let gates: Vec<(&str, &GateParams)> = match (&p.carry, self.variant) {
                (Some(c), CellVariant::DecoupledBn) => vec![
                    ("candidate", &p.candidate),
                    ("transform", &p.transform),
                    ("carry", c),
                ],
                (None, CellVariant::Coupled) => {
                    vec![("candidate", &p.candidate), ("transform", &p.transform)]
                }
                (Some(_), CellVariant::Coupled) => {
                    return Err(Error::Config(
                        "coupled variant must not carry explicit carry-gate parameters".into(),
                    ))
                }
                (None, CellVariant::DecoupledBn) => {
                    return Err(Error::Config(
                        "decoupled variant requires carry-gate parameters".into(),
                    ))
                }
            };
            for (name, g) in gates {
                if g.recurrent.shape() != (f, f) || g.bias.shape() != (1, f) {
                    return Err(Error::Config(format!(
                        "depth {} gate {name} has inconsistent shapes",
                        d + 1
                    )));
                }
                match (&g.input, d) {
                    (Some(w), 0) => {
                        if w.cols() != f {
                            return Err(Error::Config(format!(
                                "depth 1 gate {name} input weights have wrong width"
                            )));
                        }
                    }
                    (None, 0) => {
                        return Err(Error::Config(format!(
                            "depth 1 gate {name} is missing input weights"
                        )))
                    }
                    (Some(_), d) => {
                        return Err(Error::Config(format!(
                            "depth {} gate {name} must not carry input weights",
                            d + 1
                        )))
                    }
                    (None, _) => {}
                }
            }
        }
        match (&self.bn, self.variant) {
            (None, CellVariant::Coupled) => {}
            (Some(sites), CellVariant::DecoupledBn) => {
                let expect = if self.bn_every_depth { self.depth } else { 1 };
                if sites.state.len() != expect {
                    return Err(Error::Config(format!(
                        "expected {expect} state batch-norm sites, found {}",
                        sites.state.len()
                    )));
                }
                for s in &sites.state {
                    s.validate()?;
                    if s.features() != f {
                        return Err(Error::Config("state batch-norm width mismatch".into()));
                    }
                }
                sites.input.validate()?;
                if sites.input.features() != self.input_width() {
                    return Err(Error::Config("input batch-norm width mismatch".into()));
                }
            }
            (Some(_), CellVariant::Coupled) => {
                return Err(Error::Config(
                    "batch-norm sites supplied to the coupled variant".into(),
                ))
            }
            (None, CellVariant::DecoupledBn) => {
                return Err(Error::Config(
                    "decoupled variant requires batch-norm sites".into(),
                ))
            }
        }
        Ok(())
    }
}

impl ParamSet for RhnParams {
    fn for_each(&self, f: &mut dyn FnMut(&str, &Matrix)) {
        for (d, p) in self.per_depth.iter().enumerate() {
            p.visit(&format!("d{}", d + 1), f);
        }
        if let Some(sites) = &self.bn {
            for (i, s) in sites.state.iter().enumerate() {
                f(&format!("bn.state{}.gamma", i + 1), &s.gamma);
                f(&format!("bn.state{}.beta", i + 1), &s.beta);
            }
            f("bn.input.gamma", &sites.input.gamma);
            f("bn.input.beta", &sites.input.beta);
        }
    }

    fn for_each_mut(&mut self, f: &mut dyn FnMut(&str, &mut Matrix)) {
        for (d, p) in self.per_depth.iter_mut().enumerate() {
            p.visit_mut(&format!("d{}", d + 1), f);
        }
        if let Some(sites) = &mut self.bn {
            for (i, s) in sites.state.iter_mut().enumerate() {
                f(&format!("bn.state{}.gamma", i + 1), &mut s.gamma);
                f(&format!("bn.state{}.beta", i + 1), &mut s.beta);
            }
            f("bn.input.gamma", &mut sites.input.gamma);
            f("bn.input.beta", &mut sites.input.beta);
        }
    }
}

/// Any supported recurrent cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellParams {
    Rhn(RhnParams),
    Lstm(LstmParams),
}

/// Recurrent state carried between time steps.
#[derive(Clone, Debug, PartialEq)]
pub enum CellState {
    Rhn(Matrix),
    Lstm { h: Matrix, c: Matrix },
}

impl CellState {
    /// The part of the state that downstream projections read.
    pub fn output(&self) -> &Matrix {
        match self {
            CellState::Rhn(s) => s,
            CellState::Lstm { h, .. } => h,
        }
    }

    /// Adds an upstream gradient to the output component (used to merge the
    /// logits path into the through-time path during BPTT).
    pub fn add_to_output(&mut self, g: &Matrix) -> Result<()> {
        match self {
            CellState::Rhn(s) => s.add_scaled(g, 1.0),
            CellState::Lstm { h, .. } => h.add_scaled(g, 1.0),
        }
    }
}

/// Per-time-step cache for BPTT.
#[derive(Clone, Debug)]
pub enum CellStepCache {
    Rhn(RhnStepCache),
    Lstm(LstmStepCache),
}

impl CellParams {
    pub fn hidden_width(&self) -> usize {
        match self {
            CellParams::Rhn(p) => p.hidden_width(),
            CellParams::Lstm(p) => p.hidden_width(),
        }
    }

    pub fn input_width(&self) -> usize {
        match self {
            CellParams::Rhn(p) => p.input_width(),
            CellParams::Lstm(p) => p.input_width(),
        }
    }

    pub fn variant(&self) -> Option<CellVariant> {
        match self {
            CellParams::Rhn(p) => Some(p.variant),
            CellParams::Lstm(_) => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            CellParams::Rhn(p) => p.validate(),
            CellParams::Lstm(p) => p.validate(),
        }
    }

    /// Wraps a BxF output-state matrix into the cell's initial state.
    pub fn initial_state(&self, s0: Matrix) -> CellState {
        match self {
            CellParams::Rhn(_) => CellState::Rhn(s0),
            CellParams::Lstm(_) => {
                let c = Matrix::zeros(s0.rows(), s0.cols());
                CellState::Lstm { h: s0, c }
            }
        }
    }

    /// Zero state gradient with the shape of `state`.
    pub fn zero_state_grad(&self, batch: usize) -> CellState {
        let f = self.hidden_width();
        match self {
            CellParams::Rhn(_) => CellState::Rhn(Matrix::zeros(batch, f)),
            CellParams::Lstm(_) => CellState::Lstm {
                h: Matrix::zeros(batch, f),
                c: Matrix::zeros(batch, f),
            },
        }
    }

    pub fn step(&self, state: &CellState, x: &Matrix, mode: Mode) -> Result<(CellState, CellStepCache)> {
        match (self, state) {
            (CellParams::Rhn(p), CellState::Rhn(s)) => {
                let (s_out, cache) = rhn_time_step(s, x, p, mode)?;
                Ok((CellState::Rhn(s_out), CellStepCache::Rhn(cache)))
            }
            (CellParams::Lstm(p), CellState::Lstm { h, c }) => {
                let (h_out, c_out, cache) = lstm_step(h, c, x, p)?;
                Ok((
                    CellState::Lstm { h: h_out, c: c_out },
                    CellStepCache::Lstm(cache),
                ))
            }
            _ => Err(Error::Config("cell state kind does not match cell params".into())),
        }
    }

    /// Reverse-mode step: consumes dL/d(state_out), returns dL/d(state_in)
    /// and dL/dx, accumulating parameter gradients under `prefix`.
    pub fn step_backward(
        &self,
        dstate_out: &CellState,
        cache: &CellStepCache,
        prefix: &str,
        grads: &mut GradMap,
    ) -> Result<(CellState, Matrix)> {
        match (self, dstate_out, cache) {
            (CellParams::Rhn(p), CellState::Rhn(ds), CellStepCache::Rhn(c)) => {
                let (ds_prev, dx) = rhn_step_backward(ds, c, p, prefix, grads)?;
                Ok((CellState::Rhn(ds_prev), dx))
            }
            (CellParams::Lstm(p), CellState::Lstm { h: dh, c: dc }, CellStepCache::Lstm(cc)) => {
                let (dh_prev, dc_prev, dx) = lstm_step_backward(dh, dc, cc, p, prefix, grads)?;
                Ok((
                    CellState::Lstm {
                        h: dh_prev,
                        c: dc_prev,
                    },
                    dx,
                ))
            }
            _ => Err(Error::Config("cache kind does not match cell params".into())),
        }
    }

    /// Folds batch-norm statistics gathered during a training step into the
    /// running averages. Caches must be in forward time order; the index
    /// within the slice is the time step.
    pub fn absorb_bn_stats(&mut self, caches: &[CellStepCache]) -> Result<()> {
        let CellParams::Rhn(p) = self else {
            return Ok(());
        };
        let Some(sites) = &mut p.bn else {
            return Ok(());
        };
        for (t, cache) in caches.iter().enumerate() {
            let CellStepCache::Rhn(c) = cache else {
                return Err(Error::Config("cache kind does not match cell params".into()));
            };
            if let Some(bn_cache) = &c.input_bn {
                if let Some((mean, var)) = &bn_cache.batch_stats {
                    sites.input.absorb_stats(t, mean, var)?;
                }
            }
            for (d, depth_cache) in c.depths.iter().enumerate() {
                if let Some(bn_cache) = &depth_cache.bn {
                    if let Some((mean, var)) = &bn_cache.batch_stats {
                        let site = if p.bn_every_depth { d } else { 0 };
                        sites.state[site].absorb_stats(t, mean, var)?;
                    }
                }
            }
        }
        Ok(())
    }
}

impl ParamSet for CellParams {
    fn for_each(&self, f: &mut dyn FnMut(&str, &Matrix)) {
        match self {
            CellParams::Rhn(p) => p.for_each(f),
            CellParams::Lstm(p) => p.for_each(f),
        }
    }

    fn for_each_mut(&mut self, f: &mut dyn FnMut(&str, &mut Matrix)) {
        match self {
            CellParams::Rhn(p) => p.for_each_mut(f),
            CellParams::Lstm(p) => p.for_each_mut(f),
        }
    }
}
