use crate::analytic::{adam_update, AdamConfig};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::numerics::{DenseMatrix, RngStream};
use crate::problems::SparseRecoverySuite;

use super::forward::{forward_prefix, layer_step, record_layer, LayerVars, TapeOperands};
use super::params::UnrolledParams;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TrainLoss {
    /// `E‖x̂ − x*‖²`.
    Mse,
    /// Mean of `½‖Ax̂ − b‖² + λ‖x̂‖₁`.
    Lasso { lambda: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch: usize,
    pub lr: f64,
    /// Adam steps in each of the three sub-phases of a stage.
    pub steps_per_phase: usize,
    pub validate_every: usize,
    /// Ends a sub-phase after this many validations without improvement;
    /// `0` disables early stopping.
    pub patience: usize,
    /// Learning-rate multipliers of the sub-phases.
    pub phase_lr: [f64; 3],
    pub loss: TrainLoss,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch: 128,
            lr: 5e-4,
            steps_per_phase: 2000,
            validate_every: 200,
            patience: 0,
            phase_lr: [1.0, 0.2, 0.02],
            loss: TrainLoss::Mse,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 {
            return Err(Error::Config("batch must be >= 1".into()));
        }
        if !(self.lr > 0.0) || self.phase_lr.iter().any(|m| !(*m > 0.0)) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if self.validate_every == 0 || self.steps_per_phase == 0 {
            return Err(Error::Config("steps_per_phase and validate_every must be >= 1".into()));
        }
        if let TrainLoss::Lasso { lambda } = self.loss {
            if !(lambda > 0.0) {
                return Err(Error::Config("LASSO training loss needs lambda > 0".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainLogRow {
    /// 1-based stage, equal to the number of active layers.
    pub stage: usize,
    /// Sub-phase 0 (newest layer), 1 or 2 (all active layers).
    pub phase: usize,
    pub step: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: UnrolledParams,
    pub log: Vec<TrainLogRow>,
    /// Stages that hit a non-finite loss and were rerun at half the rate.
    pub retried_stages: Vec<usize>,
}

/// Mean loss of the first `depth` layers over a whole suite, without a tape.
pub fn suite_loss(params: &UnrolledParams, suite: &SparseRecoverySuite, depth: usize, loss: TrainLoss) -> Result<f64> {
    let x = forward_prefix(params, &suite.b, depth)?;
    Ok(numeric_loss(params, &x, &suite.b, &suite.x_star, loss))
}

fn numeric_loss(params: &UnrolledParams, x: &DenseMatrix, b: &DenseMatrix, x_star: &DenseMatrix, loss: TrainLoss) -> f64 {
    let count = x.cols() as f64;
    match loss {
        TrainLoss::Mse => {
            x.data()
                .iter()
                .zip(x_star.data())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                / count
        }
        TrainLoss::Lasso { lambda } => {
            let ax = params.a.matmul(x).expect("shapes checked by forward");
            let r: f64 = ax.data().iter().zip(b.data()).map(|(p, q)| (p - q) * (p - q)).sum();
            let l1: f64 = x.data().iter().map(|v| v.abs()).sum();
            (0.5 * r + lambda * l1) / count
        }
    }
}

/// Loss of the first `depth` layers on a batch and its gradient with respect
/// to the layers in `trainable` (a contiguous range ending at `depth`).
///
/// Layers before the range are evaluated without a tape.
fn loss_and_grad(
    params: &UnrolledParams,
    depth: usize,
    first_trainable: usize,
    b: &DenseMatrix,
    x_star: &DenseMatrix,
    loss: TrainLoss,
) -> Result<(f64, Vec<Vec<Vec<f64>>>)> {
    let mut x0 = DenseMatrix::zeros(params.n(), b.cols());
    for k in 0..first_trainable {
        x0 = layer_step(params, k, b, &x0);
    }
    let tape = Tape::new();
    let ops = TapeOperands::record(&tape, params, b);
    let mut x = tape.constant(x0);
    let mut vars: Vec<LayerVars<'_>> = Vec::with_capacity(depth - first_trainable);
    for k in first_trainable..depth {
        let lv = LayerVars::record(&tape, &params.layers[k], true);
        x = record_layer(params, k, &ops, &lv, x);
        vars.push(lv);
    }
    let scale = 1.0 / b.cols() as f64;
    let value: Var<'_> = match loss {
        TrainLoss::Mse => (x - tape.constant(x_star.clone())).square().sum().scale(scale),
        TrainLoss::Lasso { lambda } => {
            let r = ops.a.matmul(x) - ops.b;
            (r.square().sum().scale(0.5) + x.abs().sum().scale(lambda)).scale(scale)
        }
    };
    let f = value.item();
    if !f.is_finite() {
        return Ok((f, Vec::new()));
    }
    let grads = tape.backward(value)?;
    let per_layer = vars
        .iter()
        .map(|lv| lv.vars().iter().map(|v| grads.wrt(*v).into_data()).collect())
        .collect();
    Ok((f, per_layer))
}

/// Adam moments for the trainable slices of a range of layers.
struct AdamSlots {
    m: Vec<Vec<Vec<f64>>>,
    v: Vec<Vec<Vec<f64>>>,
    t: u64,
}

impl AdamSlots {
    fn new(params: &mut UnrolledParams, layers: std::ops::Range<usize>) -> Self {
        let shapes: Vec<Vec<usize>> = layers
            .map(|k| params.layers[k].slices_mut().iter().map(|s| s.len()).collect())
            .collect();
        let zeros = |s: &Vec<Vec<usize>>| s.iter().map(|l| l.iter().map(|&n| vec![0.0; n]).collect()).collect();
        Self {
            m: zeros(&shapes),
            v: zeros(&shapes),
            t: 0,
        }
    }
}

/// Progressive layer-wise training.
///
/// Stage `k` activates layers `1..=k` and runs three sub-phases: the newest
/// layer alone, then all active layers twice, with the learning rate scaled by
/// `cfg.phase_lr`. Each sub-phase starts a fresh Adam state and ends on the
/// parameters with the lowest validation loss. Thresholds are clamped at zero
/// after every step. A stage whose loss turns non-finite is restarted once at
/// half the learning rate; a second failure is an error.
pub fn train_progressive(
    init: UnrolledParams,
    train: &SparseRecoverySuite,
    val: &SparseRecoverySuite,
    cfg: &TrainConfig,
    rng: &mut RngStream,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    train_stages(init, train, val, cfg, rng, 1..=usize::MAX)
}

/// [`train_progressive`] restricted to the listed stages; later layers stay as
/// given. Used to resume or to train a prefix.
pub fn train_stages(
    init: UnrolledParams,
    train: &SparseRecoverySuite,
    val: &SparseRecoverySuite,
    cfg: &TrainConfig,
    rng: &mut RngStream,
    stages: std::ops::RangeInclusive<usize>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.a != init.a || val.a != init.a {
        return Err(Error::contract("training suites use a different measurement matrix"));
    }
    let mut params = init;
    let mut log = Vec::new();
    let mut retried = Vec::new();
    let mut order = Shuffler::new(train.len());
    let last = (*stages.end()).min(params.depth());
    for stage in (*stages.start()).max(1)..=last {
        let snapshot = params.clone();
        let mut lr_scale = 1.0;
        loop {
            match run_stage(&mut params, stage, train, val, cfg, lr_scale, rng, &mut order, &mut log)? {
                StageEnd::Done => break,
                StageEnd::NonFinite { phase, step } => {
                    if lr_scale < 1.0 {
                        return Err(Error::Training(format!(
                            "stage {stage}: non-finite loss again after halving the rate (phase {phase}, step {step})"
                        )));
                    }
                    retried.push(stage);
                    params = snapshot.clone();
                    lr_scale = 0.5;
                }
            }
        }
    }
    Ok(TrainOutcome {
        params,
        log,
        retried_stages: retried,
    })
}

enum StageEnd {
    Done,
    NonFinite { phase: usize, step: usize },
}

#[allow(clippy::too_many_arguments)]
fn run_stage(
    params: &mut UnrolledParams,
    stage: usize,
    train: &SparseRecoverySuite,
    val: &SparseRecoverySuite,
    cfg: &TrainConfig,
    lr_scale: f64,
    rng: &mut RngStream,
    order: &mut Shuffler,
    log: &mut Vec<TrainLogRow>,
) -> Result<StageEnd> {
    for (phase, mult) in cfg.phase_lr.iter().enumerate() {
        let first = if phase == 0 { stage - 1 } else { 0 };
        let adam_cfg = AdamConfig::with_lr(cfg.lr * mult * lr_scale);
        let mut slots = AdamSlots::new(params, first..stage);
        let mut best_val = suite_loss(params, val, stage, cfg.loss)?;
        let mut best = params.clone();
        let mut stale = 0;
        for step in 1..=cfg.steps_per_phase {
            let idx = order.next_batch(rng, cfg.batch);
            let b = train.b.select_columns(&idx);
            let xs = train.x_star.select_columns(&idx);
            let (f, grads) = loss_and_grad(params, stage, first, &b, &xs, cfg.loss)?;
            if !f.is_finite() {
                return Ok(StageEnd::NonFinite { phase, step });
            }
            slots.t += 1;
            for (off, layer_grads) in grads.iter().enumerate() {
                let layer = &mut params.layers[first + off];
                for (i, slice) in layer.slices_mut().into_iter().enumerate() {
                    adam_update(
                        slice,
                        &mut slots.m[off][i],
                        &mut slots.v[off][i],
                        slots.t,
                        &layer_grads[i],
                        &adam_cfg,
                    );
                }
                layer.clamp_theta();
            }
            if step % cfg.validate_every == 0 || step == cfg.steps_per_phase {
                let v = suite_loss(params, val, stage, cfg.loss)?;
                if !v.is_finite() {
                    return Ok(StageEnd::NonFinite { phase, step });
                }
                log.push(TrainLogRow {
                    stage,
                    phase,
                    step,
                    train_loss: f,
                    val_loss: v,
                });
                if v < best_val {
                    best_val = v;
                    best = params.clone();
                    stale = 0;
                } else {
                    stale += 1;
                    if cfg.patience > 0 && stale >= cfg.patience {
                        break;
                    }
                }
            }
        }
        *params = best;
    }
    Ok(StageEnd::Done)
}

/// Epoch-wise shuffled batches over `0..len`.
struct Shuffler {
    order: Vec<usize>,
    pos: usize,
}

impl Shuffler {
    fn new(len: usize) -> Self {
        Self {
            order: (0..len).collect(),
            pos: len,
        }
    }

    fn next_batch(&mut self, rng: &mut RngStream, size: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(size);
        while out.len() < size {
            if self.pos == self.order.len() {
                rng.shuffle(&mut self.order);
                self.pos = 0;
            }
            let take = (size - out.len()).min(self.order.len() - self.pos);
            out.extend_from_slice(&self.order[self.pos..self.pos + take]);
            self.pos += take;
        }
        out
    }
}
