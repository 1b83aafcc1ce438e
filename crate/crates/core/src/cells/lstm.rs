//! Baseline LSTM cell with an exact backward pass.

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::params::{join, GradMap, ParamSet};
use serde::{Deserialize, Serialize};

/// One gate's weights: input projection, recurrent projection, bias.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LstmGate {
    pub input: Matrix,
    pub recurrent: Matrix,
    pub bias: Matrix,
}

impl LstmGate {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Matrix)) {
        f(&format!("{prefix}.w"), &self.input);
        f(&format!("{prefix}.r"), &self.recurrent);
        f(&format!("{prefix}.b"), &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Matrix)) {
        f(&format!("{prefix}.w"), &mut self.input);
        f(&format!("{prefix}.r"), &mut self.recurrent);
        f(&format!("{prefix}.b"), &mut self.bias);
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LstmParams {
    pub input_gate: LstmGate,
    pub forget_gate: LstmGate,
    pub output_gate: LstmGate,
    pub candidate: LstmGate,
}

impl LstmParams {
    pub fn hidden_width(&self) -> usize {
        self.input_gate.recurrent.rows()
    }

    pub fn input_width(&self) -> usize {
        self.input_gate.input.rows()
    }

    fn gates(&self) -> [(&'static str, &LstmGate); 4] {
        [
            ("input_gate", &self.input_gate),
            ("forget_gate", &self.forget_gate),
            ("output_gate", &self.output_gate),
            ("candidate", &self.candidate),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        let f = self.hidden_width();
        let fi = self.input_width();
        for (name, g) in self.gates() {
            if g.input.shape() != (fi, f)
                || g.recurrent.shape() != (f, f)
                || g.bias.shape() != (1, f)
            {
                return Err(Error::Config(format!(
                    "lstm gate {name} has inconsistent shapes"
                )));
            }
        }
        Ok(())
    }
}

impl ParamSet for LstmParams {
    fn for_each(&self, f: &mut dyn FnMut(&str, &Matrix)) {
        self.input_gate.visit("input_gate", f);
        self.forget_gate.visit("forget_gate", f);
        self.output_gate.visit("output_gate", f);
        self.candidate.visit("candidate", f);
    }

    fn for_each_mut(&mut self, f: &mut dyn FnMut(&str, &mut Matrix)) {
        self.input_gate.visit_mut("input_gate", f);
        self.forget_gate.visit_mut("forget_gate", f);
        self.output_gate.visit_mut("output_gate", f);
        self.candidate.visit_mut("candidate", f);
    }
}

#[derive(Clone, Debug)]
pub struct LstmStepCache {
    pub x: Matrix,
    pub h_prev: Matrix,
    pub c_prev: Matrix,
    pub input_act: Matrix,
    pub forget_act: Matrix,
    pub output_act: Matrix,
    pub candidate_act: Matrix,
    pub cell: Matrix,
    pub cell_tanh: Matrix,
}

fn gate_forward(x: &Matrix, h_prev: &Matrix, g: &LstmGate) -> Result<Matrix> {
    x.matmul(&g.input)?
        .add(&h_prev.matmul(&g.recurrent)?)?
        .add_row(&g.bias)
}

/// Standard LSTM step:
/// i,f,o = sigmoid gates, g = tanh candidate,
/// c = f (*) c_prev + i (*) g, h = o (*) tanh(c).
pub fn lstm_step(
    h_prev: &Matrix,
    c_prev: &Matrix,
    x: &Matrix,
    p: &LstmParams,
) -> Result<(Matrix, Matrix, LstmStepCache)> {
    if h_prev.shape() != c_prev.shape() {
        return Err(Error::Shape {
            op: "lstm_step",
            left: h_prev.shape(),
            right: c_prev.shape(),
        });
    }
    let input_act = gate_forward(x, h_prev, &p.input_gate)?.sigmoid();
    let forget_act = gate_forward(x, h_prev, &p.forget_gate)?.sigmoid();
    let output_act = gate_forward(x, h_prev, &p.output_gate)?.sigmoid();
    let candidate_act = gate_forward(x, h_prev, &p.candidate)?.tanh();

    let cell = forget_act
        .mul(c_prev)?
        .add(&input_act.mul(&candidate_act)?)?;
    let cell_tanh = cell.tanh();
    let h = output_act.mul(&cell_tanh)?;

    let cache = LstmStepCache {
        x: x.clone(),
        h_prev: h_prev.clone(),
        c_prev: c_prev.clone(),
        input_act,
        forget_act,
        output_act,
        candidate_act,
        cell: cell.clone(),
        cell_tanh,
    };
    Ok((h, cell, cache))
}

/// Exact reverse of [`lstm_step`]. `dc_out` is the gradient flowing into the
/// cell state from the future; returns (dh_prev, dc_prev, dx).
pub fn lstm_step_backward(
    dh: &Matrix,
    dc_out: &Matrix,
    cache: &LstmStepCache,
    p: &LstmParams,
    prefix: &str,
    grads: &mut GradMap,
) -> Result<(Matrix, Matrix, Matrix)> {
    let d_output = dh.mul(&cache.cell_tanh)?;
    let dc = dh
        .mul(&cache.output_act)?
        .mul(&cache.cell_tanh.tanh_prime_from_y())?
        .add(dc_out)?;

    let d_input = dc.mul(&cache.candidate_act)?;
    let d_forget = dc.mul(&cache.c_prev)?;
    let d_candidate = dc.mul(&cache.input_act)?;
    let dc_prev = dc.mul(&cache.forget_act)?;

    let da = [
        (
            "input_gate",
            &p.input_gate,
            d_input.mul(&cache.input_act.sigmoid_prime_from_y())?,
        ),
        (
            "forget_gate",
            &p.forget_gate,
            d_forget.mul(&cache.forget_act.sigmoid_prime_from_y())?,
        ),
        (
            "output_gate",
            &p.output_gate,
            d_output.mul(&cache.output_act.sigmoid_prime_from_y())?,
        ),
        (
            "candidate",
            &p.candidate,
            d_candidate.mul(&cache.candidate_act.tanh_prime_from_y())?,
        ),
    ];

    let x_t = cache.x.transpose();
    let h_prev_t = cache.h_prev.transpose();
    let mut dx = Matrix::zeros(cache.x.rows(), cache.x.cols());
    let mut dh_prev = Matrix::zeros(dh.rows(), dh.cols());
    for (name, g, da) in &da {
        grads.accumulate(&join(prefix, &format!("{name}.w")), &x_t.matmul(da)?)?;
        grads.accumulate(&join(prefix, &format!("{name}.r")), &h_prev_t.matmul(da)?)?;
        grads.accumulate(&join(prefix, &format!("{name}.b")), &da.col_sum())?;
        dx.add_scaled(&da.matmul(&g.input.transpose())?, 1.0)?;
        dh_prev.add_scaled(&da.matmul(&g.recurrent.transpose())?, 1.0)?;
    }
    Ok((dh_prev, dc_prev, dx))
}
