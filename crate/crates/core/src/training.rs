//! Desk-scale caption-decoder harness: feature-initialized hidden state,
//! token embedding, unrolled exact BPTT, masked softmax loss, the
//! exponential-decay SGD schedule, and greedy decoding.

use crate::cells::{init_params_rng, CellKind, CellParams, CellSpec, CellStepCache, Mode};
use crate::dataio::CaptionSample;
use crate::diagnostics::clip_grad_map;
use crate::error::{Error, Result};
use crate::matrix::{global_norm, Matrix};
use crate::params::{sgd_update, GradMap, ParamSet};
use crate::vocab::{Vocab, END, PAD, START};
use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::time::{Duration, Instant};

/// Architecture and initialization of the full caption model.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: CellKind,
    pub embed_width: usize,
    pub hidden_width: usize,
    pub feature_width: usize,
    pub depth: usize,
    pub init_scale: f64,
    pub transform_bias: f64,
    pub carry_bias: f64,
    pub bn: crate::batchnorm::BnConfig,
    pub bn_every_depth: bool,
}

impl ModelSpec {
    pub fn new(kind: CellKind, feature_width: usize) -> ModelSpec {
        ModelSpec {
            kind,
            embed_width: 64,
            hidden_width: 64,
            feature_width,
            depth: 3,
            init_scale: 0.04,
            transform_bias: -2.0,
            carry_bias: 2.0,
            bn: crate::batchnorm::BnConfig::default(),
            bn_every_depth: true,
        }
    }

    fn cell_spec(&self) -> CellSpec {
        CellSpec {
            kind: self.kind,
            input_width: self.embed_width,
            hidden_width: self.hidden_width,
            depth: self.depth,
            init_scale: self.init_scale,
            transform_bias: self.transform_bias,
            carry_bias: self.carry_bias,
            bn: self.bn,
            bn_every_depth: self.bn_every_depth,
        }
    }
}

/// Training hyperparameters. The learning rate decays exponentially every
/// `decay_every_epochs` epochs: lr = lr0 * decay^floor(epoch / every).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr0: f64,
    pub decay: f64,
    pub decay_every_epochs: usize,
    pub epochs: usize,
    pub batch: usize,
    pub max_len: usize,
    /// Global-norm clip threshold; None disables clipping.
    pub clip: Option<f64>,
    pub seed: u64,
    pub model: ModelSpec,
}

impl TrainConfig {
    pub fn new(model: ModelSpec) -> TrainConfig {
        TrainConfig {
            lr0: 0.1,
            decay: 0.5,
            decay_every_epochs: 8,
            epochs: 30,
            batch: 8,
            max_len: 16,
            clip: default_clip(model.kind),
            seed: 1,
            model,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lr0 <= 0.0 {
            return Err(Error::Config(format!("lr0 must be positive, got {}", self.lr0)));
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(Error::Config(format!(
                "decay must lie in (0, 1], got {}",
                self.decay
            )));
        }
        if self.decay_every_epochs == 0 {
            return Err(Error::Config("decay_every_epochs must be positive".into()));
        }
        if self.max_len < 2 {
            return Err(Error::Config("max_len must be at least 2".into()));
        }
        if self.batch == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if self.model.kind == CellKind::RhnDecoupledBn && self.batch < 2 {
            return Err(Error::Config(
                "batch size must be at least 2 when batch-norm sites train".into(),
            ));
        }
        if let Some(c) = self.clip {
            if c <= 0.0 {
                return Err(Error::Config(format!(
                    "clip threshold must be positive, got {c}"
                )));
            }
        }
        Ok(())
    }
}

/// Clipping at norm 5 is needed to keep the LSTM and coupled-highway
/// baselines stable; the batch-normalized variant trains without it.
pub fn default_clip(kind: CellKind) -> Option<f64> {
    match kind {
        CellKind::RhnDecoupledBn => None,
        _ => Some(5.0),
    }
}

/// lr0 * decay^floor(epoch / decay_every_epochs).
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> f64 {
    cfg.lr0 * cfg.decay.powi((epoch / cfg.decay_every_epochs) as i32)
}

/// All trainable tensors of the caption model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// V x E token embedding table.
    pub embedding: Matrix,
    /// F_img x F projection of the feature vector into the initial state.
    pub feat_proj: Matrix,
    pub feat_bias: Matrix,
    pub cell: CellParams,
    /// F x V output projection.
    pub out_proj: Matrix,
    pub out_bias: Matrix,
}

impl ModelParams {
    pub fn init(spec: &ModelSpec, vocab_size: usize, seed: u64) -> Result<ModelParams> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ModelParams::init_rng(spec, vocab_size, &mut rng)
    }

    pub fn init_rng(spec: &ModelSpec, vocab_size: usize, rng: &mut ChaCha8Rng) -> Result<ModelParams> {
        if vocab_size < 4 {
            return Err(Error::Config("vocabulary must include the reserved tokens".into()));
        }
        let mut uniform = |rows: usize, cols: usize| -> Matrix {
            let data = (0..rows * cols)
                .map(|_| rng.random_range(-1.0..=1.0) * spec.init_scale)
                .collect();
            Matrix::from_vec(rows, cols, data).expect("finite by construction")
        };
        let embedding = uniform(vocab_size, spec.embed_width);
        let feat_proj = uniform(spec.feature_width, spec.hidden_width);
        let feat_bias = Matrix::zeros(1, spec.hidden_width);
        let out_proj = uniform(spec.hidden_width, vocab_size);
        let out_bias = Matrix::zeros(1, vocab_size);
        let cell = init_params_rng(&spec.cell_spec(), rng)?;
        Ok(ModelParams {
            embedding,
            feat_proj,
            feat_bias,
            cell,
            out_proj,
            out_bias,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.embedding.rows()
    }

    pub fn feature_width(&self) -> usize {
        self.feat_proj.rows()
    }

    pub fn validate(&self) -> Result<()> {
        let f = self.feat_proj.cols();
        let v = self.vocab_size();
        self.cell.validate()?;
        for (name, m) in [
            ("embedding", &self.embedding),
            ("feat_proj", &self.feat_proj),
            ("feat_bias", &self.feat_bias),
            ("out_proj", &self.out_proj),
            ("out_bias", &self.out_bias),
        ] {
            m.validate().map_err(|e| {
                Error::Malformed(format!("model field {name}: {e}"))
            })?;
        }
        if self.embedding.cols() != self.cell.input_width()
            || self.cell.hidden_width() != f
            || self.feat_bias.shape() != (1, f)
            || self.out_proj.shape() != (f, v)
            || self.out_bias.shape() != (1, v)
        {
            return Err(Error::Malformed("model parameter shapes are inconsistent".into()));
        }
        Ok(())
    }

    /// Initial state from a batch of feature rows: s0 = tanh(feat*P + b).
    fn initial_output(&self, features: &Matrix) -> Result<Matrix> {
        Ok(features
            .matmul(&self.feat_proj)?
            .add_row(&self.feat_bias)?
            .tanh())
    }

    fn embed_rows(&self, ids: &[u32]) -> Result<Matrix> {
        let e = self.embedding.cols();
        let mut data = Vec::with_capacity(ids.len() * e);
        for &id in ids {
            if id as usize >= self.embedding.rows() {
                return Err(Error::Data(format!("token id {id} out of range")));
            }
            data.extend_from_slice(self.embedding.row_slice(id as usize));
        }
        Matrix::from_vec(ids.len(), e, data)
    }
}

impl ParamSet for ModelParams {
    fn for_each(&self, f: &mut dyn FnMut(&str, &Matrix)) {
        f("embedding", &self.embedding);
        f("feat_bias", &self.feat_bias);
        f("feat_proj", &self.feat_proj);
        self.cell
            .for_each(&mut |name, m| f(&format!("cell.{name}"), m));
        f("out_bias", &self.out_bias);
        f("out_proj", &self.out_proj);
    }

    fn for_each_mut(&mut self, f: &mut dyn FnMut(&str, &mut Matrix)) {
        f("embedding", &mut self.embedding);
        f("feat_bias", &mut self.feat_bias);
        f("feat_proj", &mut self.feat_proj);
        self.cell
            .for_each_mut(&mut |name, m| f(&format!("cell.{name}"), m));
        f("out_bias", &mut self.out_bias);
        f("out_proj", &mut self.out_proj);
    }
}

/// Masked mean cross-entropy over one logits batch. Returns the mean of
/// -log softmax(logits)[target] over unmasked rows and its exact gradient
/// (softmax - one_hot) * mask / count. An all-masked batch is defined as
/// loss 0 with zero gradient.
pub fn softmax_xent(logits: &Matrix, targets: &[u32], mask: &[f64]) -> Result<(f64, Matrix)> {
    let (sum, mut dlogits, count) = softmax_xent_sum(logits, targets, mask)?;
    if count == 0.0 {
        return Ok((0.0, dlogits));
    }
    dlogits = dlogits.scale(1.0 / count);
    Ok((sum / count, dlogits))
}

/// Sum-form loss: total -log p over unmasked rows, unscaled gradient
/// (softmax - one_hot) * mask, and the unmasked count.
fn softmax_xent_sum(logits: &Matrix, targets: &[u32], mask: &[f64]) -> Result<(f64, Matrix, f64)> {
    let (b, v) = logits.shape();
    if targets.len() != b || mask.len() != b {
        return Err(Error::Data(format!(
            "logits batch {b} vs {} targets, {} mask entries",
            targets.len(),
            mask.len()
        )));
    }
    let mut dlogits = Matrix::zeros(b, v);
    let mut sum = 0.0;
    let mut count = 0.0;
    for row in 0..b {
        if mask[row] == 0.0 {
            continue;
        }
        let target = targets[row] as usize;
        if target >= v {
            return Err(Error::Data(format!(
                "target id {target} out of range for vocabulary of {v}"
            )));
        }
        count += mask[row];
        let r = logits.row_slice(row);
        let max = r.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x));
        let z: f64 = r.iter().map(|&x| (x - max).exp()).sum();
        let log_z = z.ln() + max;
        sum += (log_z - r[target]) * mask[row];
        for col in 0..v {
            let p = (r[col] - log_z).exp();
            let grad = (p - if col == target { 1.0 } else { 0.0 }) * mask[row];
            dlogits.set(row, col, grad);
        }
    }
    Ok((sum, dlogits, count))
}

/// One padded training batch. `inputs[t]`/`targets[t]`/`mask[t]` hold the
/// step-t column for every sample; padding rows carry mask 0.
#[derive(Clone, Debug)]
pub struct Batch {
    pub ids: Vec<String>,
    pub features: Matrix,
    pub inputs: Vec<Vec<u32>>,
    pub targets: Vec<Vec<u32>>,
    pub mask: Vec<Vec<f64>>,
}

/// Wraps a caption as [START, tokens..., END] truncated and padded to
/// `max_len` ids.
pub fn encode_caption(tokens: &[String], vocab: &Vocab, max_len: usize) -> Vec<u32> {
    let body = max_len.saturating_sub(2);
    let mut ids = Vec::with_capacity(max_len);
    ids.push(START);
    ids.extend(tokens.iter().take(body).map(|t| vocab.id(t)));
    ids.push(END);
    while ids.len() < max_len {
        ids.push(PAD);
    }
    ids
}

/// Assembles a batch from samples, using each sample's first reference as
/// the training caption.
pub fn make_batch(samples: &[&CaptionSample], vocab: &Vocab, max_len: usize) -> Result<Batch> {
    if samples.is_empty() {
        return Err(Error::Data("cannot build an empty batch".into()));
    }
    let fw = samples[0].feature.len();
    let mut feat = Vec::with_capacity(samples.len() * fw);
    let mut encoded = Vec::with_capacity(samples.len());
    for s in samples {
        if s.feature.len() != fw {
            return Err(Error::Data(format!(
                "sample {} feature width {} differs from {fw}",
                s.id,
                s.feature.len()
            )));
        }
        feat.extend_from_slice(&s.feature);
        encoded.push(encode_caption(&s.references[0], vocab, max_len));
    }
    let features = Matrix::from_vec(samples.len(), fw, feat)?;
    let steps = max_len - 1;
    let mut inputs = vec![Vec::with_capacity(samples.len()); steps];
    let mut targets = vec![Vec::with_capacity(samples.len()); steps];
    let mut mask = vec![Vec::with_capacity(samples.len()); steps];
    for ids in &encoded {
        for t in 0..steps {
            inputs[t].push(ids[t]);
            targets[t].push(ids[t + 1]);
            mask[t].push(if ids[t + 1] == PAD { 0.0 } else { 1.0 });
        }
    }
    Ok(Batch {
        ids: samples.iter().map(|s| s.id.clone()).collect(),
        features,
        inputs,
        targets,
        mask,
    })
}

/// Everything the backward pass needs from one forward unroll.
pub struct UnrollCache {
    batch: Batch,
    s0: Matrix,
    /// Cell output (the logits input) after each step.
    outputs: Vec<Matrix>,
    pub cell_caches: Vec<CellStepCache>,
    /// (softmax - one_hot) * mask / total_count, per step.
    dlogits: Vec<Matrix>,
}

/// Unrolls the model over a batch: s0 from the features, one cell step per
/// input token, logits through the output projection, masked mean loss over
/// all steps.
pub fn forward_unroll(batch: &Batch, params: &ModelParams, mode: Mode) -> Result<(f64, UnrollCache)> {
    let v = params.vocab_size();
    if batch.features.cols() != params.feature_width() {
        return Err(Error::Data(format!(
            "feature width {} does not match model width {}",
            batch.features.cols(),
            params.feature_width()
        )));
    }
    for (t, ids) in batch.inputs.iter().enumerate() {
        for (b, &id) in ids.iter().enumerate() {
            if id as usize >= v {
                return Err(Error::Data(format!(
                    "token id {id} out of range at step {t} of sample {}",
                    batch.ids[b]
                )));
            }
        }
    }

    let s0 = params.initial_output(&batch.features)?;
    let mut state = params.cell.initial_state(s0.clone());
    let steps = batch.inputs.len();
    let mut outputs = Vec::with_capacity(steps);
    let mut cell_caches = Vec::with_capacity(steps);
    let mut per_step = Vec::with_capacity(steps);
    let mut loss_sum = 0.0;
    let mut total_count = 0.0;

    for t in 0..steps {
        let x = params.embed_rows(&batch.inputs[t])?;
        // Inference statistics are per-time-step when sites keep them so.
        let step_mode = match mode {
            Mode::Train => Mode::Train,
            Mode::Infer { .. } => Mode::Infer { time_step: t },
        };
        let (next, cache) = params.cell.step(&state, &x, step_mode)?;
        state = next;
        let out = state.output().clone();
        let logits = out.matmul(&params.out_proj)?.add_row(&params.out_bias)?;
        let (sum, dlogits, count) = softmax_xent_sum(&logits, &batch.targets[t], &batch.mask[t])?;
        loss_sum += sum;
        total_count += count;
        per_step.push(dlogits);
        outputs.push(out);
        cell_caches.push(cache);
    }

    let (loss, dlogits) = if total_count > 0.0 {
        (
            loss_sum / total_count,
            per_step
                .into_iter()
                .map(|d| d.scale(1.0 / total_count))
                .collect(),
        )
    } else {
        (0.0, per_step)
    };

    Ok((
        loss,
        UnrollCache {
            batch: batch.clone(),
            s0,
            outputs,
            cell_caches,
            dlogits,
        },
    ))
}

/// Exact BPTT over the unroll: gradients for every model parameter, summed
/// over time steps.
pub fn backward_unroll(cache: &UnrollCache, params: &ModelParams) -> Result<GradMap> {
    let mut grads = GradMap::new();
    let batch_size = cache.s0.rows();
    let steps = cache.cell_caches.len();
    let mut dstate = params.cell.zero_state_grad(batch_size);
    let mut dembedding = Matrix::zeros(params.vocab_size(), params.embedding.cols());

    for t in (0..steps).rev() {
        let dlogits = &cache.dlogits[t];
        grads.accumulate("out_proj", &cache.outputs[t].transpose().matmul(dlogits)?)?;
        grads.accumulate("out_bias", &dlogits.col_sum())?;
        dstate.add_to_output(&dlogits.matmul(&params.out_proj.transpose())?)?;
        let (dprev, dx) = params
            .cell
            .step_backward(&dstate, &cache.cell_caches[t], "cell", &mut grads)?;
        let e = dx.cols();
        for (b, &id) in cache.batch.inputs[t].iter().enumerate() {
            let row = id as usize;
            let src = dx.row_slice(b).to_vec();
            let dst = &mut dembedding.data_mut()[row * e..(row + 1) * e];
            for (d, s) in dst.iter_mut().zip(&src) {
                *d += s;
            }
        }
        dstate = dprev;
    }

    // Into the feature projection through s0 = tanh(feat*P + b).
    let ds0 = dstate.output();
    let da = ds0.mul(&cache.s0.tanh_prime_from_y())?;
    grads.accumulate("feat_proj", &cache.batch.features.transpose().matmul(&da)?)?;
    grads.accumulate("feat_bias", &da.col_sum())?;
    grads.accumulate("embedding", &dembedding)?;
    Ok(grads)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub pre_clip_norm: f64,
    pub clipped: bool,
}

/// Per-step training log plus wall-clock; the run.csv source.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunReport {
    pub records: Vec<StepRecord>,
    pub wall_clock: Duration,
}

impl RunReport {
    pub const CSV_HEADER: &'static str = "step,epoch,lr,loss,pre_clip_norm,clipped";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.step,
                r.epoch,
                r.lr,
                r.loss,
                r.pre_clip_norm,
                u8::from(r.clipped)
            ));
        }
        out
    }
}

pub struct TrainOutcome {
    pub params: ModelParams,
    pub report: RunReport,
}

/// Deterministic training loop: seeded init, seeded shuffling, epoch-keyed
/// learning-rate schedule, optional global-norm clipping, batch-norm
/// running-statistics updates. Aborts with a diagnostic error if the loss
/// leaves the finite range.
///
/// A trailing shard smaller than the batch size is kept unless batch-norm
/// sites are training and it has fewer than 2 samples.
pub fn train(dataset: &[CaptionSample], vocab: &Vocab, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::Data("training dataset is empty".into()));
    }
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = ModelParams::init_rng(&cfg.model, vocab.size(), &mut rng)?;
    let min_batch = if cfg.model.kind == CellKind::RhnDecoupledBn {
        2
    } else {
        1
    };

    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut records = Vec::new();
    let mut step = 0usize;

    for epoch in 0..cfg.epochs {
        let lr = lr_at(epoch, cfg);
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch) {
            if chunk.len() < min_batch {
                continue;
            }
            let samples: Vec<&CaptionSample> = chunk.iter().map(|&i| &dataset[i]).collect();
            let batch = make_batch(&samples, vocab, cfg.max_len)?;
            let (loss, cache) = forward_unroll(&batch, &params, Mode::Train)?;
            if !loss.is_finite() {
                let last_norm = records
                    .last()
                    .map(|r: &StepRecord| r.pre_clip_norm)
                    .unwrap_or(0.0);
                return Err(Error::NonFinite(format!(
                    "loss {loss} at step {step} (epoch {epoch}, lr {lr}, previous pre-clip grad norm {last_norm})"
                )));
            }
            let mut grads = backward_unroll(&cache, &params)?;
            let pre_clip_norm = match cfg.clip {
                Some(threshold) => clip_grad_map(&mut grads, threshold)?,
                None => global_norm(&grads.matrices()),
            };
            let clipped = cfg.clip.map(|t| pre_clip_norm > t).unwrap_or(false);
            sgd_update(&mut params, &grads, lr)?;
            params.cell.absorb_bn_stats(&cache.cell_caches)?;
            records.push(StepRecord {
                step,
                epoch,
                lr,
                loss,
                pre_clip_norm,
                clipped,
            });
            step += 1;
        }
    }

    Ok(TrainOutcome {
        params,
        report: RunReport {
            records,
            wall_clock: started.elapsed(),
        },
    })
}

/// Full-model gradient check at tiny sizes (V=7, E=4, F=5, T=3, B=2):
/// compares [`backward_unroll`] against central finite differences on every
/// parameter coordinate. `inject_fault` corrupts one analytic gradient by
/// 10% so callers can verify the check actually detects errors.
pub fn tiny_model_grad_check(
    kind: CellKind,
    depth: usize,
    seed: u64,
    inject_fault: bool,
) -> Result<crate::diagnostics::GradCheckReport> {
    let spec = ModelSpec {
        embed_width: 4,
        hidden_width: 5,
        depth,
        init_scale: 0.5,
        transform_bias: -1.0,
        carry_bias: 1.0,
        // At batch 2 the two-point normalization pins outputs near +-1 and
        // input gradients decay to the eps scale, under the checker's
        // resolution. A larger eps keeps the operating point conditioned;
        // the backward code under test is identical.
        bn: crate::batchnorm::BnConfig {
            eps: 1e-2,
            ..crate::batchnorm::BnConfig::default()
        },
        ..ModelSpec::new(kind, 3)
    };
    let words = ["bird", "fence", "sits"];
    let counts = words.iter().map(|w| (w.to_string(), 1usize)).collect();
    let vocab = Vocab::from_counts(&counts, 1);
    debug_assert_eq!(vocab.size(), 7);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = ModelParams::init_rng(&spec, vocab.size(), &mut rng)?;
    let samples: Vec<CaptionSample> = (0..2)
        .map(|i| CaptionSample {
            id: format!("g{i}"),
            feature: (0..3).map(|_| rng.random_range(-1.0..=1.0)).collect(),
            references: vec![vec![
                words[i % 3].to_string(),
                words[(i + 1) % 3].to_string(),
            ]],
        })
        .collect();
    let refs: Vec<&CaptionSample> = samples.iter().collect();
    // max_len 4 wraps [START, w1, w2, END]: three unrolled positions.
    let batch = make_batch(&refs, &vocab, 4)?;

    let (_, cache) = forward_unroll(&batch, &params, Mode::Train)?;
    let mut grads = backward_unroll(&cache, &params)?;
    if inject_fault {
        // GradMap only accumulates, so a 10% corruption is a 0.1x delta.
        let delta = grads
            .get("out_proj")
            .expect("output projection gradient exists")
            .scale(0.1);
        grads.accumulate("out_proj", &delta)?;
    }
    crate::diagnostics::grad_check(
        &mut |p: &ModelParams| Ok(forward_unroll(&batch, p, Mode::Train)?.0),
        &params,
        &grads,
        1e-5,
        1e-4,
        None,
    )
}

/// Greedy decoding: start from START, feed the argmax token back (ties go to
/// the lowest id) until END or `max_len` emitted tokens. Batch-norm sites
/// run in inference mode. Returns the tokens between START and END,
/// exclusive.
pub fn greedy_decode(
    feature: &[f64],
    params: &ModelParams,
    vocab: &Vocab,
    max_len: usize,
) -> Result<Vec<String>> {
    if feature.len() != params.feature_width() {
        return Err(Error::Data(format!(
            "feature width {} does not match model width {}",
            feature.len(),
            params.feature_width()
        )));
    }
    let features = Matrix::from_vec(1, feature.len(), feature.to_vec())?;
    let s0 = params.initial_output(&features)?;
    let mut state = params.cell.initial_state(s0);
    let mut token = START;
    let mut out = Vec::new();
    for t in 0..max_len {
        let x = params.embed_rows(&[token])?;
        let (next, _) = params.cell.step(&state, &x, Mode::Infer { time_step: t })?;
        state = next;
        let logits = state
            .output()
            .matmul(&params.out_proj)?
            .add_row(&params.out_bias)?;
        let row = logits.row_slice(0);
        let mut best = 0usize;
        for (i, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = i;
            }
        }
        let tok = best as u32;
        if tok == END {
            break;
        }
        out.push(
            vocab
                .token(tok)
                .ok_or_else(|| Error::Data(format!("decoded id {tok} outside vocabulary")))?
                .to_string(),
        );
        token = tok;
    }
    Ok(out)
}
