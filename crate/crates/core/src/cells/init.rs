//! Seeded parameter initialization for every cell kind.

use super::{
    CellParams, CellVariant, GateParams, HighwayDepthParams, LstmGate, LstmParams, RhnBnSites,
    RhnParams,
};
use crate::batchnorm::{BnConfig, BnLayer};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellKind {
    Lstm,
    RhnCoupled,
    RhnDecoupledBn,
}

/// Shape and initialization knobs for a cell.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CellSpec {
    pub kind: CellKind,
    pub input_width: usize,
    pub hidden_width: usize,
    /// Recurrence depth; ignored by the LSTM kind.
    pub depth: usize,
    /// Weights are drawn uniformly from [-init_scale, init_scale].
    pub init_scale: f64,
    /// Transform-gate bias init. Negative values bias the cell toward carry,
    /// so deep recurrences start near the identity map.
    pub transform_bias: f64,
    /// Carry-gate bias init (decoupled variant); also used as the LSTM
    /// forget-gate bias, the carry gate's analogue there.
    pub carry_bias: f64,
    pub bn: BnConfig,
    pub bn_every_depth: bool,
}

impl CellSpec {
    pub fn new(kind: CellKind, input_width: usize, hidden_width: usize, depth: usize) -> CellSpec {
        CellSpec {
            kind,
            input_width,
            hidden_width,
            depth,
            init_scale: 0.04,
            transform_bias: -2.0,
            carry_bias: 2.0,
            bn: BnConfig::default(),
            bn_every_depth: true,
        }
    }
}

fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    // Always draw the same count so the stream advances identically for any
    // scale, including zero.
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-1.0..=1.0) * scale)
        .collect();
    Matrix::from_vec(rows, cols, data).expect("finite by construction")
}

/// Deterministic seeded initialization: same spec and seed, same parameters.
pub fn init_params(spec: &CellSpec, seed: u64) -> Result<CellParams> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    init_params_rng(spec, &mut rng)
}

pub fn init_params_rng(spec: &CellSpec, rng: &mut ChaCha8Rng) -> Result<CellParams> {
    if spec.input_width == 0 || spec.hidden_width == 0 {
        return Err(Error::Config(format!(
            "cell widths must be positive, got input {} hidden {}",
            spec.input_width, spec.hidden_width
        )));
    }
    let (fi, f) = (spec.input_width, spec.hidden_width);

    match spec.kind {
        CellKind::Lstm => {
            let mut gate = |bias: f64| LstmGate {
                input: uniform(rng, fi, f, spec.init_scale),
                recurrent: uniform(rng, f, f, spec.init_scale),
                bias: Matrix::filled(1, f, bias),
            };
            let params = LstmParams {
                input_gate: gate(0.0),
                forget_gate: gate(spec.carry_bias),
                output_gate: gate(0.0),
                candidate: gate(0.0),
            };
            Ok(CellParams::Lstm(params))
        }
        CellKind::RhnCoupled | CellKind::RhnDecoupledBn => {
            if spec.depth == 0 {
                return Err(Error::Config("recurrence depth must be positive".into()));
            }
            let variant = match spec.kind {
                CellKind::RhnCoupled => CellVariant::Coupled,
                _ => CellVariant::DecoupledBn,
            };
            let mut per_depth = Vec::with_capacity(spec.depth);
            for d in 0..spec.depth {
                let mut gate = |bias: f64| GateParams {
                    input: (d == 0).then(|| uniform(rng, fi, f, spec.init_scale)),
                    recurrent: uniform(rng, f, f, spec.init_scale),
                    bias: Matrix::filled(1, f, bias),
                };
                per_depth.push(HighwayDepthParams {
                    candidate: gate(0.0),
                    transform: gate(spec.transform_bias),
                    carry: match variant {
                        CellVariant::Coupled => None,
                        CellVariant::DecoupledBn => Some(gate(spec.carry_bias)),
                    },
                });
            }
            let bn = match variant {
                CellVariant::Coupled => None,
                CellVariant::DecoupledBn => {
                    let sites = if spec.bn_every_depth { spec.depth } else { 1 };
                    Some(RhnBnSites {
                        state: (0..sites).map(|_| BnLayer::new(f, spec.bn)).collect(),
                        input: BnLayer::new(fi, spec.bn),
                    })
                }
            };
            let params = RhnParams {
                depth: spec.depth,
                per_depth,
                variant,
                bn,
                bn_every_depth: spec.bn_every_depth,
            };
            params.validate()?;
            Ok(CellParams::Rhn(params))
        }
    }
}
