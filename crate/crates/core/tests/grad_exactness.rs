//! Finite-difference verification of every cell backward pass: parameter,
//! state, and input gradients for the highway variants at depths 1..3 and
//! the LSTM baseline, in train and inference modes.

use bnrhn::cells::{init_params, CellKind, CellParams, CellSpec, CellState, Mode};
use bnrhn::diagnostics::grad_check;
use bnrhn::matrix::Matrix;
use bnrhn::params::{GradMap, ParamSet};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-scale..=scale))
        .collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

/// Cell parameters together with the sequence inputs, so one checker run
/// covers d(loss)/d(params), d(loss)/d(s0), and d(loss)/d(x_t) at once.
#[derive(Clone)]
struct CellAndInputs {
    cell: CellParams,
    s0: Matrix,
    xs: Vec<Matrix>,
}

impl ParamSet for CellAndInputs {
    fn for_each(&self, f: &mut dyn FnMut(&str, &Matrix)) {
        self.cell.for_each(&mut |name, m| f(&format!("cell.{name}"), m));
        f("s0", &self.s0);
        for (t, x) in self.xs.iter().enumerate() {
            f(&format!("x{t}"), x);
        }
    }

    fn for_each_mut(&mut self, f: &mut dyn FnMut(&str, &mut Matrix)) {
        self.cell
            .for_each_mut(&mut |name, m| f(&format!("cell.{name}"), m));
        f("s0", &mut self.s0);
        for (t, x) in self.xs.iter_mut().enumerate() {
            f(&format!("x{t}"), x);
        }
    }
}

/// Scalar objective: run T time steps and project the final state output
/// against fixed weights. Exercises every forward path.
fn objective(p: &CellAndInputs, w: &Matrix, mode: Mode) -> bnrhn::Result<f64> {
    let mut state = p.cell.initial_state(p.s0.clone());
    for x in &p.xs {
        let (next, _) = p.cell.step(&state, x, mode)?;
        state = next;
    }
    Ok(state.output().mul(w)?.sum())
}

fn analytic_grads(p: &CellAndInputs, w: &Matrix, mode: Mode) -> bnrhn::Result<GradMap> {
    let mut state = p.cell.initial_state(p.s0.clone());
    let mut caches = Vec::new();
    for x in &p.xs {
        let (next, cache) = p.cell.step(&state, x, mode)?;
        state = next;
        caches.push(cache);
    }
    let mut grads = GradMap::new();
    let mut dstate = p.cell.zero_state_grad(p.s0.rows());
    dstate.add_to_output(w)?;
    for t in (0..p.xs.len()).rev() {
        let (dprev, dx) = p.cell.step_backward(&dstate, &caches[t], "cell", &mut grads)?;
        grads.accumulate(&format!("x{t}"), &dx)?;
        dstate = dprev;
    }
    let ds0 = match &dstate {
        CellState::Rhn(s) => s.clone(),
        CellState::Lstm { h, .. } => h.clone(),
    };
    grads.accumulate("s0", &ds0)?;
    Ok(grads)
}

fn check_cell(kind: CellKind, depth: usize, bn_every_depth: bool, mode: Mode, seed: u64) {
    let (b, f_in, f, t_len) = (3, 4, 7, 3);
    let spec = CellSpec {
        init_scale: 0.5,
        transform_bias: -1.0,
        carry_bias: 1.0,
        bn_every_depth,
        ..CellSpec::new(kind, f_in, f, depth)
    };
    let mut cell = init_params(&spec, seed).unwrap();

    // Inference-mode batch norm needs populated running statistics; push a
    // few training batches through first.
    if matches!(mode, Mode::Infer { .. }) && kind == CellKind::RhnDecoupledBn {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xbeef);
        let mut state = cell.initial_state(random_matrix(&mut rng, b, f, 0.8));
        let mut caches = Vec::new();
        for _ in 0..3 {
            let x = random_matrix(&mut rng, b, f_in, 0.8);
            let (next, cache) = cell.step(&state, &x, Mode::Train).unwrap();
            state = next;
            caches.push(cache);
        }
        cell.absorb_bn_stats(&caches).unwrap();
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = CellAndInputs {
        cell,
        s0: random_matrix(&mut rng, b, f, 0.8),
        xs: (0..t_len).map(|_| random_matrix(&mut rng, b, f_in, 0.8)).collect(),
    };
    let w = random_matrix(&mut rng, b, f, 1.0);

    let analytic = analytic_grads(&p, &w, mode).unwrap();
    let report = grad_check(
        &mut |p: &CellAndInputs| objective(p, &w, mode),
        &p,
        &analytic,
        1e-5,
        1e-4,
        None,
    )
    .unwrap();
    assert!(
        report.coords_checked >= 200,
        "want at least 200 coordinates, got {}",
        report.coords_checked
    );
    assert!(
        report.pass,
        "{kind:?} depth {depth} {mode:?}: {}",
        report.summary()
    );
}

#[test]
fn coupled_gradients_exact_depth_1() {
    check_cell(CellKind::RhnCoupled, 1, true, Mode::Train, 101);
}

#[test]
fn coupled_gradients_exact_depth_2() {
    check_cell(CellKind::RhnCoupled, 2, true, Mode::Train, 102);
}

#[test]
fn coupled_gradients_exact_depth_3() {
    check_cell(CellKind::RhnCoupled, 3, true, Mode::Train, 103);
}

#[test]
fn decoupled_bn_gradients_exact_depth_1() {
    check_cell(CellKind::RhnDecoupledBn, 1, true, Mode::Train, 201);
}

#[test]
fn decoupled_bn_gradients_exact_depth_2() {
    check_cell(CellKind::RhnDecoupledBn, 2, true, Mode::Train, 202);
}

#[test]
fn decoupled_bn_gradients_exact_depth_3() {
    check_cell(CellKind::RhnDecoupledBn, 3, true, Mode::Train, 203);
}

#[test]
fn decoupled_bn_single_site_gradients_exact() {
    check_cell(CellKind::RhnDecoupledBn, 3, false, Mode::Train, 204);
}

#[test]
fn decoupled_bn_inference_mode_gradients_exact() {
    check_cell(CellKind::RhnDecoupledBn, 2, true, Mode::infer(), 205);
}

#[test]
fn lstm_gradients_exact() {
    check_cell(CellKind::Lstm, 1, true, Mode::Train, 301);
}
