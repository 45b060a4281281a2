use crate::analytic::{adam_update, AdamConfig};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::numerics::{DenseMatrix, DenseVector, RngStream};

use super::lstm::{
    lstm_optimizer_step, lstm_step_tape, preprocess_column, CoordinateStates, LstmOptimizerParams, LstmVars,
    TapeStates,
};
use super::optimizee::Optimizee;
use super::tricks::{convex_augment, es_smoothed_grads, progressive_unroll_schedule, random_scaling_wrap};

/// Consecutive epochs ending in a non-finite meta-loss before training aborts.
pub const MAX_NON_FINITE_EPOCHS: usize = 3;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Tricks {
    /// Wrap each sampled optimizee as `f(c ⊙ θ)` with random `c`.
    pub random_scaling: bool,
    /// Weight `μ` of an added `μ‖θ − θ*‖²` term, `θ*` standard normal.
    pub convex_augment: Option<f64>,
    /// `(T_min, T_max)`: unroll length grows linearly across epochs.
    pub progressive_unroll: Option<(usize, usize)>,
    /// `(samples, σ)`: feed merged smoothed gradients instead of exact ones.
    pub es_smoothing: Option<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetaTrainConfig {
    /// Truncation window `T`.
    pub unroll: usize,
    /// Optimizee steps per epoch.
    pub horizon: usize,
    pub epochs: usize,
    /// `w_t` by position inside a window; missing entries count as 1.
    pub weights: Vec<f64>,
    pub lr: f64,
    pub tricks: Tricks,
    /// Extra first epoch regressing the LSTM output onto Adam steps.
    pub imitation_warmup: bool,
}

impl Default for MetaTrainConfig {
    fn default() -> Self {
        Self {
            unroll: 20,
            horizon: 1000,
            epochs: 100,
            weights: Vec::new(),
            lr: 1e-3,
            tricks: Tricks::default(),
            imitation_warmup: false,
        }
    }
}

impl MetaTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.unroll == 0 || self.horizon == 0 {
            return Err(Error::Config("unroll and horizon must be >= 1".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config("meta learning rate must be > 0".into()));
        }
        let t = self.tricks.progressive_unroll.map_or(self.unroll, |(_, hi)| hi.max(self.unroll));
        let total: f64 = (0..t).map(|i| self.weight(i)).sum();
        if self.weights.iter().any(|w| !(*w >= 0.0)) || !(total > 0.0) {
            return Err(Error::Config("window weights must be >= 0 with a positive sum".into()));
        }
        if let Some((lo, hi)) = self.tricks.progressive_unroll {
            if lo == 0 || hi < lo {
                return Err(Error::Config(format!("bad progressive unroll range {lo}..{hi}")));
            }
        }
        if let Some((s, sigma)) = self.tricks.es_smoothing {
            if s < 2 || !(sigma > 0.0) {
                return Err(Error::Config("smoothing needs >= 2 samples and sigma > 0".into()));
            }
        }
        if let Some(mu) = self.tricks.convex_augment {
            if !(mu >= 0.0) {
                return Err(Error::Config("convex term weight must be >= 0".into()));
            }
        }
        Ok(())
    }

    pub fn weight(&self, t: usize) -> f64 {
        self.weights.get(t).copied().unwrap_or(1.0)
    }

    fn unroll_for(&self, epoch: usize) -> usize {
        match self.tricks.progressive_unroll {
            Some((lo, hi)) => progressive_unroll_schedule(epoch, self.epochs, lo, hi),
            None => self.unroll,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetaLogRow {
    pub epoch: usize,
    pub window: usize,
    pub meta_loss: f64,
}

#[derive(Debug, Clone)]
pub struct MetaTrainOutcome {
    pub params: LstmOptimizerParams,
    pub log: Vec<MetaLogRow>,
    /// Epochs cut short by a non-finite meta-loss.
    pub non_finite_epochs: usize,
}

/// Draws a fresh optimizee and its starting point.
pub type OptimizeeSampler<'a> = dyn FnMut(&mut RngStream) -> (Box<dyn Optimizee>, DenseVector) + 'a;

/// One recorded truncation window.
pub struct WindowRecord<'t> {
    /// `Σ_t w_t f(x_t)` over the iterates `x_0 … x_{T−1}` of the window.
    pub loss: Var<'t>,
    /// Iterate entering the window (a constant: gradients are cut here).
    pub x_entry: Var<'t>,
    pub x_exit: Var<'t>,
    pub states: TapeStates<'t>,
    /// Gradient vectors fed to the LSTM, in step order.
    pub fed: Vec<Vec<f64>>,
}

/// Records `steps` optimizer steps starting from the values `x` and `states`.
///
/// Gradients fed to the LSTM are plain numbers (first-order meta-training);
/// the optimizee iterates inside the window depend on the LSTM weights.
#[allow(clippy::too_many_arguments)]
pub fn record_window<'t>(
    tape: &'t Tape,
    lv: &LstmVars<'t>,
    opt: &mut dyn Optimizee,
    x: &[f64],
    states: &CoordinateStates,
    steps: usize,
    cfg: &MetaTrainConfig,
    rng: &mut RngStream,
) -> Result<WindowRecord<'t>> {
    let x_entry = tape.constant(DenseMatrix::column_vector(x));
    let mut xv = x_entry;
    let mut ts = TapeStates::constants(tape, states);
    let mut terms = Vec::with_capacity(steps);
    let mut fed = Vec::with_capacity(steps);
    for t in 0..steps {
        let w = cfg.weight(t);
        if w != 0.0 {
            terms.push(opt.record(tape, xv).scale(w));
        }
        let xval = xv.value_owned().into_data();
        let g = match cfg.tricks.es_smoothing {
            Some((s, sigma)) => es_smoothed_grads(&*opt, &xval, s, sigma, rng)?.g_merged.into_inner(),
            None => opt.grad(&xval).into_inner(),
        };
        let input = tape.constant(preprocess_column(&g, lv.preprocess_p));
        let (update, next) = lstm_step_tape(lv, &ts, input);
        xv = xv + update;
        ts = next;
        fed.push(g);
        opt.advance(rng);
    }
    let loss = match terms.split_first() {
        Some((first, rest)) => rest.iter().fold(*first, |acc, t| acc + *t),
        None => tape.constant_scalar(0.0),
    };
    Ok(WindowRecord {
        loss,
        x_entry,
        x_exit: xv,
        states: ts,
        fed,
    })
}

struct MetaAdam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
    cfg: AdamConfig,
}

impl MetaAdam {
    fn new(params: &LstmOptimizerParams, lr: f64) -> Self {
        let zeros: Vec<Vec<f64>> = params.arrays().iter().map(|a| vec![0.0; a.len()]).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
            cfg: AdamConfig::with_lr(lr),
        }
    }

    fn step(&mut self, params: &mut LstmOptimizerParams, grads: &[DenseMatrix]) {
        self.t += 1;
        for (i, a) in params.arrays_mut().into_iter().enumerate() {
            adam_update(a.data_mut(), &mut self.m[i], &mut self.v[i], self.t, grads[i].data(), &self.cfg);
        }
    }
}

fn wrap(
    opt: Box<dyn Optimizee>,
    cfg: &MetaTrainConfig,
    rng: &mut RngStream,
) -> Result<Box<dyn Optimizee>> {
    let mut opt = opt;
    if cfg.tricks.random_scaling {
        opt = Box::new(random_scaling_wrap(opt, rng));
    }
    if let Some(mu) = cfg.tricks.convex_augment {
        let anchor = DenseVector::from(rng.normal_vec(opt.dim(), 0.0, 1.0));
        opt = Box::new(convex_augment(opt, mu, anchor)?);
    }
    Ok(opt)
}

/// Truncated-BPTT meta-training of the LSTM optimizer.
///
/// Each epoch draws an optimizee, resets the coordinate states to zero and
/// runs `horizon` steps in windows of `T`. After every window the meta-loss
/// gradient updates the weights with Adam; iterate and state values carry
/// into the next window while their gradients are cut. A non-finite
/// meta-loss ends the epoch and halves `κ` (at most once per epoch);
/// [`MAX_NON_FINITE_EPOCHS`] such epochs in a row abort training.
pub fn meta_train(
    init: LstmOptimizerParams,
    sampler: &mut OptimizeeSampler<'_>,
    cfg: &MetaTrainConfig,
    rng: &mut RngStream,
) -> Result<MetaTrainOutcome> {
    cfg.validate()?;
    let mut params = init;
    let mut adam = MetaAdam::new(&params, cfg.lr);
    let mut log = Vec::new();
    if cfg.imitation_warmup {
        imitation_epoch(&mut params, &mut adam, sampler, cfg, rng)?;
    }
    let mut non_finite_epochs = 0;
    let mut streak = 0;
    for epoch in 0..cfg.epochs {
        let (opt, x0) = sampler(rng);
        let mut opt = wrap(opt, cfg, rng)?;
        let t_len = cfg.unroll_for(epoch);
        let mut x = x0.into_inner();
        let mut states = CoordinateStates::zeros(&params, x.len());
        let mut done = 0;
        let mut window = 0;
        let mut failed = false;
        while done < cfg.horizon {
            let steps = t_len.min(cfg.horizon - done);
            let tape = Tape::new();
            let lv = LstmVars::record(&tape, &params, true);
            let rec = record_window(&tape, &lv, opt.as_mut(), &x, &states, steps, cfg, rng)?;
            let meta_loss = rec.loss.item();
            let exit = rec.x_exit.value_owned();
            if !meta_loss.is_finite() || !exit.is_finite() {
                failed = true;
                break;
            }
            let grads = tape.backward(rec.loss)?;
            let g: Vec<DenseMatrix> = lv.vars().iter().map(|v| grads.wrt(*v)).collect();
            if g.iter().any(|m| !m.is_finite()) {
                failed = true;
                break;
            }
            adam.step(&mut params, &g);
            log.push(MetaLogRow {
                epoch,
                window,
                meta_loss,
            });
            x = exit.into_data();
            states = rec.states.values();
            done += steps;
            window += 1;
        }
        if failed {
            non_finite_epochs += 1;
            streak += 1;
            params.kappa *= 0.5;
            if streak >= MAX_NON_FINITE_EPOCHS {
                return Err(Error::Training(format!(
                    "meta-loss non-finite in {streak} consecutive epochs (last: epoch {epoch})"
                )));
            }
        } else {
            streak = 0;
        }
    }
    Ok(MetaTrainOutcome {
        params,
        log,
        non_finite_epochs,
    })
}

/// One epoch along an Adam trajectory, fitting the LSTM output to Adam's
/// steps by squared error.
fn imitation_epoch(
    params: &mut LstmOptimizerParams,
    adam: &mut MetaAdam,
    sampler: &mut OptimizeeSampler<'_>,
    cfg: &MetaTrainConfig,
    rng: &mut RngStream,
) -> Result<()> {
    let (mut opt, x0) = sampler(rng);
    let teacher = AdamConfig::default();
    let n = x0.len();
    let (mut m, mut v) = (vec![0.0; n], vec![0.0; n]);
    let mut x = x0.into_inner();
    let mut states = CoordinateStates::zeros(params, n);
    let mut t = 0u64;
    let mut done = 0;
    while done < cfg.horizon {
        let steps = cfg.unroll.min(cfg.horizon - done);
        let tape = Tape::new();
        let lv = LstmVars::record(&tape, params, true);
        let mut ts = TapeStates::constants(&tape, &states);
        let mut terms: Vec<Var<'_>> = Vec::with_capacity(steps);
        for _ in 0..steps {
            let g = opt.grad(&x).into_inner();
            let before = x.clone();
            t += 1;
            adam_update(&mut x, &mut m, &mut v, t, &g, &teacher);
            let target: Vec<f64> = x.iter().zip(&before).map(|(a, b)| a - b).collect();
            let input = tape.constant(preprocess_column(&g, lv.preprocess_p));
            let (update, next) = lstm_step_tape(&lv, &ts, input);
            ts = next;
            terms.push((update - tape.constant(DenseMatrix::column_vector(&target))).square().sum());
            opt.advance(rng);
        }
        let loss = terms[1..].iter().fold(terms[0], |acc, t| acc + *t);
        if !loss.item().is_finite() {
            return Err(Error::Training("imitation warm-up produced a non-finite loss".into()));
        }
        let grads = tape.backward(loss)?;
        let g: Vec<DenseMatrix> = lv.vars().iter().map(|v| grads.wrt(*v)).collect();
        adam.step(params, &g);
        states = ts.values();
        done += steps;
    }
    Ok(())
}

/// Runs the LSTM optimizer from `x0` for `steps` steps with fresh states and
/// returns `f(x_0), …, f(x_steps)` and the final iterate.
pub fn lstm_trajectory(
    params: &LstmOptimizerParams,
    opt: &mut dyn Optimizee,
    x0: &[f64],
    steps: usize,
    rng: &mut RngStream,
) -> (Vec<f64>, DenseVector) {
    let mut x = x0.to_vec();
    let mut states = CoordinateStates::zeros(params, x.len());
    let mut values = Vec::with_capacity(steps + 1);
    values.push(opt.value(&x));
    for _ in 0..steps {
        let g = opt.grad(&x);
        let (u, next) = lstm_optimizer_step(params, &states, &g);
        for (xi, ui) in x.iter_mut().zip(&u) {
            *xi += ui;
        }
        states = next;
        opt.advance(rng);
        values.push(opt.value(&x));
    }
    (values, DenseVector::from(x))
}
