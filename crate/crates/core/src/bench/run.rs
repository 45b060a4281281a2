use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use rayon::ThreadPool;

use crate::analytic::{
    adam_step, fista_step, gd_line_search_step, gd_step, ista_step, lasso_reference_optimum, nag_line_search_step,
    rmsprop_step, AdamConfig, FirstOrderMethod, FirstOrderState, LineSearchConfig, ProxState, RmsPropConfig,
    REFERENCE_FISTA_ITERS,
};
use crate::error::{Error, Result};
use crate::meta::{
    lstm_trajectory, meta_train, LassoOptimizee, LstmOptimizerParams, MetaLogRow, MlpOptimizee, Optimizee,
};
use crate::numerics::{spectral_norm_sq, DenseMatrix, DenseVector, RngStream, DEFAULT_SPECTRAL_MAX_ITER, DEFAULT_SPECTRAL_TOL};
use crate::problems::{
    gen_measurement_matrix, gen_rastrigin_suite, gen_sparse_instances, Activation, ImageDataset, LassoProblem,
    LassoSuite, MatrixKind, MlpTask, RastriginInstance, SparseRecoverySuite,
};
use crate::unrolled::{
    analytic_init, forward, layerwise_nmse_db, suite_nmse_db, train_progressive, SupportSchedule, TrainLogRow,
    TrainLoss, UnrolledParams, Variant,
};

use super::checkpoint::{
    load_checkpoint, lstm_from_checkpoint, lstm_to_checkpoint, save_checkpoint, unrolled_from_checkpoint,
    unrolled_to_checkpoint, Checkpoint,
};
use super::config::{AnalyticMethod, ExperimentConfig, Method, Testbed};
use super::records::{format_float, log_grid, write_records, Metric, RunRecord, SUITE_INSTANCE};
use super::report::REFERENCE_METHOD;

/// Environment variable capping the number of evaluation workers.
pub const THREADS_ENV: &str = "OPEN_L2O_THREADS";

/// Worker pool sized by [`THREADS_ENV`] (unset or `0`: one per core).
pub fn thread_pool() -> Result<ThreadPool> {
    let threads = match std::env::var(THREADS_ENV) {
        Ok(s) => s
            .trim()
            .parse::<usize>()
            .map_err(|_| Error::Config(format!("{THREADS_ENV} must be a non-negative integer, got {s:?}")))?,
        Err(_) => 0,
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))
}

/// Seed of the training stream of `method`: the experiment seed mixed with a
/// stable (FNV-1a) hash of the name, so no two methods share draws.
pub fn method_seed(seed: u64, method: Method) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in method.name().bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h ^ seed
}

pub struct LassoData {
    pub train: SparseRecoverySuite,
    pub val: SparseRecoverySuite,
    pub test: LassoSuite,
    /// Reference optimum of every test instance.
    pub f_star: Vec<f64>,
    /// `starts[q]`: the random starting points of test instance `q`, used by
    /// the model-free learned methods; everything else starts at zero.
    pub starts: Vec<Vec<DenseVector>>,
    pub lipschitz: f64,
}

pub struct RastriginData {
    pub train: Vec<RastriginInstance>,
    pub test: Vec<RastriginInstance>,
    pub starts: Vec<Vec<DenseVector>>,
}

pub struct MlpData {
    pub data: Arc<ImageDataset>,
    /// Sigmoid network used for meta-training.
    pub train_task: MlpTask,
    /// Network trained at evaluation (sigmoid or ReLU by setting).
    pub eval_task: MlpTask,
    /// Base seed of the evaluation runs; run `r` uses `run_seed + r`.
    pub run_seed: u64,
}

/// Every suite of one seed. Generated from the seed alone.
pub enum ExperimentData {
    Sparse {
        train: SparseRecoverySuite,
        val: SparseRecoverySuite,
        test: SparseRecoverySuite,
    },
    Lasso(LassoData),
    Rastrigin(RastriginData),
    Mlp(MlpData),
}

fn draw_starts(seed: u64, count: usize, starts: usize, n: usize, std: f64) -> Vec<Vec<DenseVector>> {
    (0..count)
        .map(|q| {
            let mut rng = RngStream::for_worker(seed, q as u64);
            (0..starts).map(|_| DenseVector::from(rng.normal_vec(n, 0.0, std))).collect()
        })
        .collect()
}

pub fn generate_data(cfg: &ExperimentConfig, seed: u64, pool: &ThreadPool) -> Result<ExperimentData> {
    let mut root = RngStream::new(seed);
    match cfg.testbed {
        Testbed::SparseRecovery => {
            let s = &cfg.sparse;
            let (m, n) = cfg.sparse_shape();
            let kind = if cfg.setting == "coherent" {
                MatrixKind::Coherent {
                    rho: s.coherence,
                    groups: s.coherent_groups,
                }
            } else {
                MatrixKind::Incoherent
            };
            let snr = (cfg.setting == "noisy").then_some(s.snr_db);
            let a = gen_measurement_matrix(&mut root.fork(), m, n, kind)?;
            let train = gen_sparse_instances(&mut root.fork(), &a, s.train, snr)?;
            let val = gen_sparse_instances(&mut root.fork(), &a, s.val, snr)?;
            let test = gen_sparse_instances(&mut root.fork(), &a, s.test, snr)?;
            Ok(ExperimentData::Sparse { train, val, test })
        }
        Testbed::Lasso => {
            let l = &cfg.lasso;
            let a = gen_measurement_matrix(&mut root.fork(), l.m, l.n, MatrixKind::Incoherent)?;
            let train = gen_sparse_instances(&mut root.fork(), &a, l.train, None)?;
            let val = gen_sparse_instances(&mut root.fork(), &a, l.val, None)?;
            let test_suite = gen_sparse_instances(&mut root.fork(), &a, l.test, None)?;
            let test = LassoSuite {
                a: a.clone(),
                b: test_suite.b,
                lambda: l.lambda,
            };
            let lipschitz = spectral_norm_sq(&a, DEFAULT_SPECTRAL_TOL, DEFAULT_SPECTRAL_MAX_ITER)?;
            let f_star = pool.install(|| {
                (0..test.len())
                    .into_par_iter()
                    .map(|q| lasso_reference_optimum(&test.problem(q), lipschitz))
                    .collect::<Vec<_>>()
            });
            let starts = draw_starts(root.next_u64(), test.len(), l.starts, l.n, l.start_std);
            Ok(ExperimentData::Lasso(LassoData {
                train,
                val,
                test,
                f_star,
                starts,
                lipschitz,
            }))
        }
        Testbed::Rastrigin => {
            let r = &cfg.rastrigin;
            let with_alpha = |mut v: Vec<RastriginInstance>| {
                v.iter_mut().for_each(|i| i.alpha = r.alpha);
                v
            };
            let train = with_alpha(gen_rastrigin_suite(&mut root.fork(), r.n, r.train));
            let test = with_alpha(gen_rastrigin_suite(&mut root.fork(), r.n, r.test));
            let starts = draw_starts(root.next_u64(), r.test, r.starts, r.n, r.start_std);
            Ok(ExperimentData::Rastrigin(RastriginData { train, test, starts }))
        }
        Testbed::Mlp => {
            let m = &cfg.mlp;
            let data = ImageDataset::load_or_synthesize(m.data_dir.as_deref(), "train", &mut root.fork(), m.synthetic_count)?;
            let train_task = MlpTask {
                hidden: m.hidden,
                activation: Activation::Sigmoid,
                init_var: m.init_var,
                ..MlpTask::default()
            };
            let eval_task = MlpTask {
                activation: cfg.mlp_eval_activation(),
                ..train_task.clone()
            };
            Ok(ExperimentData::Mlp(MlpData {
                data: Arc::new(data),
                train_task,
                eval_task,
                run_seed: root.next_u64(),
            }))
        }
    }
}

/// Named arrays of a seed's suites, as written by `l2o gen`.
pub fn data_checkpoint(data: &ExperimentData) -> Result<Checkpoint> {
    let mut ck = Checkpoint::new();
    let push_suite = |ck: &mut Checkpoint, split: &str, s: &SparseRecoverySuite| -> Result<()> {
        ck.push_matrix(&format!("{split}.x_star"), &s.x_star)?;
        ck.push_matrix(&format!("{split}.b"), &s.b)
    };
    let push_starts = |ck: &mut Checkpoint, starts: &[Vec<DenseVector>]| -> Result<()> {
        let n = starts.first().and_then(|s| s.first()).map_or(0, |x| x.len());
        let count = starts.iter().map(Vec::len).sum::<usize>();
        let flat: Vec<f64> = starts.iter().flatten().flat_map(|x| x.iter().copied()).collect();
        ck.push("test.starts", &[count, n], flat)
    };
    match data {
        ExperimentData::Sparse { train, val, test } => {
            ck.push_matrix("a", &train.a)?;
            push_suite(&mut ck, "train", train)?;
            push_suite(&mut ck, "val", val)?;
            push_suite(&mut ck, "test", test)?;
        }
        ExperimentData::Lasso(d) => {
            ck.push_matrix("a", &d.test.a)?;
            push_suite(&mut ck, "train", &d.train)?;
            push_suite(&mut ck, "val", &d.val)?;
            ck.push_matrix("test.b", &d.test.b)?;
            ck.push("test.f_star", &[d.f_star.len()], d.f_star.clone())?;
            push_starts(&mut ck, &d.starts)?;
        }
        ExperimentData::Rastrigin(d) => {
            for (split, suite) in [("train", &d.train), ("test", &d.test)] {
                let n = suite.first().map_or(0, |r| r.dim());
                let cat = |f: &dyn Fn(&RastriginInstance) -> Vec<f64>| suite.iter().flat_map(f).collect::<Vec<_>>();
                ck.push(&format!("{split}.a"), &[suite.len(), n, n], cat(&|r| r.a.data().to_vec()))?;
                ck.push(&format!("{split}.b"), &[suite.len(), n], cat(&|r| r.b.to_vec()))?;
                ck.push(&format!("{split}.c"), &[suite.len(), n], cat(&|r| r.c.to_vec()))?;
            }
            push_starts(&mut ck, &d.starts)?;
        }
        ExperimentData::Mlp(d) => {
            ck.push_matrix("images", &d.data.images)?;
            ck.push("labels", &[d.data.len()], d.data.labels.iter().map(|&l| l as f64).collect())?;
        }
    }
    Ok(ck)
}

/// A trained model of a learned method.
#[derive(Debug, Clone)]
pub enum Model {
    Unrolled(UnrolledParams),
    Lstm(LstmOptimizerParams),
}

impl Model {
    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        match self {
            Model::Unrolled(p) => unrolled_to_checkpoint(p),
            Model::Lstm(p) => lstm_to_checkpoint(p),
        }
    }

    pub fn from_checkpoint(method: Method, ck: &Checkpoint) -> Result<Self> {
        match method {
            Method::Unrolled(v) => {
                let p = unrolled_from_checkpoint(ck)?;
                if p.variant != v {
                    return Err(Error::Config(format!("checkpoint holds {} weights, not {method}", p.variant.name())));
                }
                Ok(Model::Unrolled(p))
            }
            Method::Meta(_) => Ok(Model::Lstm(lstm_from_checkpoint(ck)?)),
            Method::Analytic(_) => Err(Error::Config(format!("{method} has no model"))),
        }
    }
}

pub struct Trained {
    pub model: Model,
    pub train_log: Vec<TrainLogRow>,
    pub meta_log: Vec<MetaLogRow>,
}

/// `<dir>/<method>_s<seed>.ol2o`.
pub fn model_path(dir: &Path, method: Method, seed: u64) -> PathBuf {
    dir.join(format!("{}_s{seed}.ol2o", method.name()))
}

fn train_unrolled(
    cfg: &ExperimentConfig,
    variant: Variant,
    train: &SparseRecoverySuite,
    val: &SparseRecoverySuite,
    lambda: f64,
    depth: usize,
    loss: TrainLoss,
    rng: &mut RngStream,
) -> Result<Trained> {
    let init = analytic_init(variant, &train.a, lambda, depth, SupportSchedule::default())?;
    let tcfg = crate::unrolled::TrainConfig {
        loss,
        ..cfg.unrolled.clone()
    };
    let out = train_progressive(init, train, val, &tcfg, rng)?;
    Ok(Trained {
        model: Model::Unrolled(out.params),
        train_log: out.log,
        meta_log: Vec::new(),
    })
}

/// Trains `method` (which must be learned) on the training suites of `data`.
pub fn train_model(cfg: &ExperimentConfig, data: &ExperimentData, method: Method, seed: u64) -> Result<Trained> {
    let mut rng = RngStream::new(method_seed(seed, method));
    match (method, data) {
        (Method::Analytic(_), _) => Err(Error::Config(format!("{method} is not a learned method"))),
        (Method::Unrolled(v), ExperimentData::Sparse { train, val, .. }) => {
            train_unrolled(cfg, v, train, val, cfg.sparse.lambda, cfg.sparse.depth, TrainLoss::Mse, &mut rng)
        }
        (Method::Unrolled(v), ExperimentData::Lasso(d)) => {
            let l = &cfg.lasso;
            train_unrolled(cfg, v, &d.train, &d.val, l.lambda, l.depth, TrainLoss::Lasso { lambda: l.lambda }, &mut rng)
        }
        (Method::Meta(flavor), _) => {
            let mut init = LstmOptimizerParams::init(&mut rng, cfg.meta.hidden, cfg.meta.layers);
            init.kappa = cfg.meta.kappa;
            init.preprocess_p = cfg.meta.preprocess_p;
            let mcfg = cfg.meta_train_config(flavor);
            let outcome = match data {
                ExperimentData::Lasso(d) => {
                    let (a, b, lambda, std) = (&d.train.a, &d.train.b, cfg.lasso.lambda, cfg.lasso.start_std);
                    let mut sampler = |rng: &mut RngStream| {
                        let q = rng.index(b.cols());
                        let opt = LassoOptimizee {
                            a: a.clone(),
                            b: b.column(q).to_vec(),
                            lambda,
                        };
                        let x0 = DenseVector::from(rng.normal_vec(a.cols(), 0.0, std));
                        (Box::new(opt) as Box<dyn Optimizee>, x0)
                    };
                    meta_train(init, &mut sampler, &mcfg, &mut rng)?
                }
                ExperimentData::Rastrigin(d) => {
                    let std = cfg.rastrigin.start_std;
                    let mut sampler = |rng: &mut RngStream| {
                        let inst = d.train[rng.index(d.train.len())].clone();
                        let x0 = DenseVector::from(rng.normal_vec(inst.dim(), 0.0, std));
                        (Box::new(inst) as Box<dyn Optimizee>, x0)
                    };
                    meta_train(init, &mut sampler, &mcfg, &mut rng)?
                }
                ExperimentData::Mlp(d) => {
                    let batch = cfg.mlp.batch;
                    let mut sampler = |rng: &mut RngStream| {
                        let x0 = d.train_task.init_params(rng);
                        let opt = MlpOptimizee::new(d.train_task.clone(), d.data.clone(), batch, rng);
                        (Box::new(opt) as Box<dyn Optimizee>, x0)
                    };
                    meta_train(init, &mut sampler, &mcfg, &mut rng)?
                }
                ExperimentData::Sparse { .. } => {
                    return Err(Error::Config(format!("{method} does not run on sparse_recovery")));
                }
            };
            Ok(Trained {
                model: Model::Lstm(outcome.params),
                train_log: Vec::new(),
                meta_log: outcome.log,
            })
        }
        (Method::Unrolled(_), _) => Err(Error::Config(format!("{method} does not run on {}", cfg.testbed))),
    }
}

/// Learning rates and line-search start of the first-order baselines.
#[derive(Debug, Clone, Copy)]
struct Rates {
    gd: f64,
    adam: f64,
    rmsprop: f64,
    ls_init: f64,
}

impl Rates {
    fn of(cfg: &ExperimentConfig) -> Self {
        match cfg.testbed {
            Testbed::Lasso => {
                let l = &cfg.lasso;
                Rates { gd: l.gd_lr, adam: l.adam_lr, rmsprop: l.rmsprop_lr, ls_init: l.ls_init_step }
            }
            Testbed::Rastrigin => {
                let r = &cfg.rastrigin;
                Rates { gd: r.gd_lr, adam: r.adam_lr, rmsprop: r.rmsprop_lr, ls_init: r.ls_init_step }
            }
            Testbed::Mlp => {
                let m = &cfg.mlp;
                Rates { gd: m.sgd_lr, adam: m.adam_lr, rmsprop: m.rmsprop_lr, ls_init: 0.1 }
            }
            Testbed::SparseRecovery => Rates { gd: 0.0, adam: 0.0, rmsprop: 0.0, ls_init: 0.0 },
        }
    }
}

/// `f(x_0), …, f(x_steps)` of a gradient-based baseline; the objective
/// advances (new minibatch) after every step, as in [`lstm_trajectory`].
fn first_order_trajectory(
    method: AnalyticMethod,
    rates: Rates,
    opt: &mut dyn Optimizee,
    x0: &[f64],
    steps: usize,
    rng: &mut RngStream,
) -> Result<Vec<f64>> {
    use AnalyticMethod as A;
    let kind = match method {
        A::Gd | A::Sgd => FirstOrderMethod::Gd,
        A::GdLineSearch => FirstOrderMethod::GdLineSearch,
        A::NagLineSearch => FirstOrderMethod::Nag,
        A::Adam => FirstOrderMethod::Adam,
        A::RmsProp => FirstOrderMethod::RmsProp,
        A::Ista | A::Fista => return Err(Error::contract("proximal methods need a LASSO problem")),
    };
    let adam = AdamConfig::with_lr(rates.adam);
    let rms = RmsPropConfig::with_lr(rates.rmsprop);
    let ls = LineSearchConfig {
        init_step: rates.ls_init,
        ..LineSearchConfig::default()
    };
    let mut s = FirstOrderState::new(DenseVector::from(x0), kind);
    let mut values = Vec::with_capacity(steps + 1);
    values.push(opt.value(&s.x));
    for _ in 0..steps {
        s = match method {
            A::NagLineSearch => {
                let o = &*opt;
                nag_line_search_step(s, &|x| o.value(x), &|x| o.grad(x), &ls).0
            }
            _ => {
                let g = opt.grad(&s.x);
                match method {
                    A::GdLineSearch => {
                        let o = &*opt;
                        gd_line_search_step(s, &|x| o.value(x), &g, &ls).0
                    }
                    A::Adam => adam_step(s, &g, &adam),
                    A::RmsProp => rmsprop_step(s, &g, &rms),
                    _ => gd_step(s, &g, rates.gd),
                }
            }
        };
        opt.advance(rng);
        values.push(opt.value(&s.x));
    }
    Ok(values)
}

/// ISTA or FISTA iterates `x_0 = x0, …, x_steps` on one LASSO problem.
fn prox_iterates(p: &LassoProblem<'_>, fista: bool, x0: &[f64], lipschitz: f64, steps: usize) -> Vec<DenseVector> {
    let mut s = ProxState::new(DenseVector::from(x0), lipschitz);
    let mut out = Vec::with_capacity(steps + 1);
    out.push(s.x.clone());
    for _ in 0..steps {
        s = if fista { fista_step(p, s) } else { ista_step(p, s) };
        out.push(s.x.clone());
    }
    out
}

/// Element-wise mean of equally long trajectories.
fn mean_curve(curves: &[Vec<f64>]) -> Vec<f64> {
    let k = curves.len() as f64;
    (0..curves[0].len()).map(|t| curves.iter().map(|c| c[t]).sum::<f64>() / k).collect()
}

struct Emitter<'a> {
    cfg: &'a ExperimentConfig,
    method: &'a str,
    seed: u64,
}

impl Emitter<'_> {
    fn run_id(&self) -> String {
        format!("{}-{}-{}-s{}", self.cfg.testbed, self.cfg.setting, self.method, self.seed)
    }

    fn row(&self, instance_id: i64, iteration: usize, metric: Metric, value: f64) -> RunRecord {
        RunRecord {
            run_id: self.run_id(),
            method: self.method.to_string(),
            testbed: self.cfg.testbed.name().to_string(),
            instance_id,
            seed: self.seed,
            iteration: iteration as u64,
            metric,
            value,
        }
    }

    /// One row per log-grid point of `curve`.
    fn curve(&self, instance_id: i64, curve: &[f64], metric: Metric) -> Vec<RunRecord> {
        log_grid(curve.len() - 1)
            .into_iter()
            .map(|t| self.row(instance_id, t, metric, curve[t]))
            .collect()
    }
}

/// Evaluates `method` on the test suites and returns its records.
fn evaluate(
    cfg: &ExperimentConfig,
    data: &ExperimentData,
    method: Method,
    model: Option<&Model>,
    seed: u64,
    pool: &ThreadPool,
) -> Result<Vec<RunRecord>> {
    let em = Emitter {
        cfg,
        method: method.name(),
        seed,
    };
    let rates = Rates::of(cfg);
    match data {
        ExperimentData::Sparse { test, .. } => {
            let curve = match (method, model) {
                (Method::Unrolled(_), Some(Model::Unrolled(p))) => layerwise_nmse_db(p, test)?,
                (Method::Analytic(a @ (AnalyticMethod::Ista | AnalyticMethod::Fista)), _) => {
                    let lipschitz = spectral_norm_sq(&test.a, DEFAULT_SPECTRAL_TOL, DEFAULT_SPECTRAL_MAX_ITER)?;
                    let n = test.a.cols();
                    let depth = cfg.sparse.depth;
                    let iterates: Vec<Vec<DenseVector>> = pool.install(|| {
                        (0..test.len())
                            .into_par_iter()
                            .map(|q| {
                                let p = LassoProblem {
                                    a: &test.a,
                                    b: test.b.column(q),
                                    lambda: cfg.sparse.lambda,
                                };
                                prox_iterates(&p, a == AnalyticMethod::Fista, &vec![0.0; n], lipschitz, depth)
                            })
                            .collect()
                    });
                    (1..=depth)
                        .map(|k| {
                            let cols: Vec<&[f64]> = iterates.iter().map(|it| &it[k][..]).collect();
                            suite_nmse_db(&DenseMatrix::from_columns(n, &cols)?, &test.x_star)
                        })
                        .collect::<Result<Vec<_>>>()?
                }
                _ => return Err(Error::Config(format!("{method} cannot be evaluated on sparse_recovery"))),
            };
            Ok(curve
                .iter()
                .enumerate()
                .map(|(k, v)| em.row(SUITE_INSTANCE, k + 1, Metric::NmseDb, *v))
                .collect())
        }
        ExperimentData::Lasso(d) => {
            let l = &cfg.lasso;
            let steps = l.iterations;
            let layer_outputs = match model {
                Some(Model::Unrolled(p)) => Some(forward(p, &d.test.b)?),
                _ => None,
            };
            let curves: Vec<Result<Vec<f64>>> = pool.install(|| {
                (0..d.test.len())
                    .into_par_iter()
                    .map(|q| {
                        let p = d.test.problem(q);
                        let f_star = d.f_star[q];
                        // only the model-free learned optimizers average over random starts
                        let zero = [DenseVector::zeros(p.dim())];
                        let starts: &[DenseVector] = if matches!(method, Method::Meta(_)) { &d.starts[q] } else { &zero };
                        let values: Vec<f64> = match (method, model) {
                            (Method::Unrolled(_), _) => {
                                let xs = layer_outputs.as_ref().expect("unrolled model present");
                                let mut values = vec![p.value(&vec![0.0; p.dim()])];
                                values.extend(xs.iter().map(|x| p.value(x.column(q))));
                                let last = xs.last().map_or_else(|| vec![0.0; p.dim()], |x| x.column(q).to_vec());
                                if l.fista_extension && steps > xs.len() {
                                    let ext = prox_iterates(&p, true, &last, d.lipschitz, steps - xs.len());
                                    values.extend(ext[1..].iter().map(|x| p.value(x)));
                                }
                                values
                            }
                            (Method::Analytic(a @ (AnalyticMethod::Ista | AnalyticMethod::Fista)), _) => {
                                let curves: Vec<Vec<f64>> = starts
                                    .iter()
                                    .map(|x0| {
                                        prox_iterates(&p, a == AnalyticMethod::Fista, x0, d.lipschitz, steps)
                                            .iter()
                                            .map(|x| p.value(x))
                                            .collect()
                                    })
                                    .collect();
                                mean_curve(&curves)
                            }
                            (_, _) => {
                                let mut opt = LassoOptimizee {
                                    a: d.test.a.clone(),
                                    b: p.b.to_vec(),
                                    lambda: p.lambda,
                                };
                                let mut rng = RngStream::new(0);
                                let curves = starts
                                    .iter()
                                    .map(|x0| match (method, model) {
                                        (Method::Analytic(a), _) => {
                                            first_order_trajectory(a, rates, &mut opt, x0, steps, &mut rng)
                                        }
                                        (Method::Meta(_), Some(Model::Lstm(lp))) => {
                                            Ok(lstm_trajectory(lp, &mut opt, x0, steps, &mut rng).0)
                                        }
                                        _ => Err(Error::contract("learned method evaluated without its model")),
                                    })
                                    .collect::<Result<Vec<_>>>()?;
                                mean_curve(&curves)
                            }
                        };
                        Ok(values.iter().map(|v| v - f_star).collect())
                    })
                    .collect()
            });
            let mut rows = Vec::new();
            for (q, curve) in curves.into_iter().enumerate() {
                rows.extend(em.curve(q as i64, &curve?, Metric::RelativeLossComponent));
            }
            Ok(rows)
        }
        ExperimentData::Rastrigin(d) => {
            let steps = cfg.rastrigin.steps;
            let curves: Vec<Result<Vec<f64>>> = pool.install(|| {
                (0..d.test.len())
                    .into_par_iter()
                    .map(|q| {
                        let mut inst = d.test[q].clone();
                        let mut rng = RngStream::new(0);
                        let curves = d.starts[q]
                            .iter()
                            .map(|x0| match (method, model) {
                                (Method::Analytic(a), _) => first_order_trajectory(a, rates, &mut inst, x0, steps, &mut rng),
                                (Method::Meta(_), Some(Model::Lstm(lp))) => {
                                    Ok(lstm_trajectory(lp, &mut inst, x0, steps, &mut rng).0)
                                }
                                _ => Err(Error::contract("learned method evaluated without its model")),
                            })
                            .collect::<Result<Vec<_>>>()?;
                        Ok(mean_curve(&curves))
                    })
                    .collect()
            });
            let mut rows = Vec::new();
            for (q, curve) in curves.into_iter().enumerate() {
                rows.extend(em.curve(q as i64, &curve?, Metric::Objective));
            }
            Ok(rows)
        }
        ExperimentData::Mlp(d) => {
            let m = &cfg.mlp;
            let curves: Vec<Result<Vec<f64>>> = pool.install(|| {
                (0..m.runs)
                    .into_par_iter()
                    .map(|r| {
                        let mut rng = RngStream::for_worker(d.run_seed, r as u64);
                        let x0 = d.eval_task.init_params(&mut rng);
                        let mut opt = MlpOptimizee::new(d.eval_task.clone(), d.data.clone(), m.batch, &mut rng);
                        match (method, model) {
                            (Method::Analytic(a), _) => first_order_trajectory(a, rates, &mut opt, &x0, m.eval_steps, &mut rng),
                            (Method::Meta(_), Some(Model::Lstm(lp))) => {
                                Ok(lstm_trajectory(lp, &mut opt, &x0, m.eval_steps, &mut rng).0)
                            }
                            _ => Err(Error::contract("learned method evaluated without its model")),
                        }
                    })
                    .collect()
            });
            let mut rows = Vec::new();
            for (r, curve) in curves.into_iter().enumerate() {
                rows.extend(em.curve(r as i64, &curve?, Metric::Objective));
            }
            Ok(rows)
        }
    }
}

/// Per-epoch mean window loss of a meta-training log.
fn meta_loss_rows(em: &Emitter<'_>, log: &[MetaLogRow]) -> Vec<RunRecord> {
    let mut by_epoch: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for row in log {
        let e = by_epoch.entry(row.epoch).or_insert((0.0, 0));
        e.0 += row.meta_loss;
        e.1 += 1;
    }
    by_epoch
        .into_iter()
        .map(|(epoch, (sum, k))| em.row(SUITE_INSTANCE, epoch, Metric::MetaLoss, sum / k as f64))
        .collect()
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub out: PathBuf,
    /// Directory searched for `<method>_s<seed>.ol2o` before training.
    pub models: Option<PathBuf>,
    /// Only train (and save) the learned methods; no evaluation.
    pub train_only: bool,
}

#[derive(Debug, Clone, Default)]
pub struct RunSummary {
    pub records: usize,
    pub failures: Vec<String>,
}

#[derive(Default)]
struct Collected {
    records: Vec<RunRecord>,
    timings: Vec<RunRecord>,
    train_log: BTreeMap<(String, u64), Vec<TrainLogRow>>,
    failures: Vec<String>,
}

fn panic_message(p: Box<dyn std::any::Any + Send>) -> String {
    p.downcast_ref::<&str>()
        .map(|s| s.to_string())
        .or_else(|| p.downcast_ref::<String>().cloned())
        .unwrap_or_else(|| "unknown panic".into())
}

fn run_one(
    cfg: &ExperimentConfig,
    opts: &RunOptions,
    data: &ExperimentData,
    method: Method,
    seed: u64,
    pool: &ThreadPool,
    out: &mut Collected,
) -> Result<()> {
    let em = Emitter {
        cfg,
        method: method.name(),
        seed,
    };
    let mut model = None;
    if method.is_learned() {
        let stored = opts.models.as_ref().map(|d| model_path(d, method, seed)).filter(|p| p.exists());
        model = Some(match stored {
            Some(path) => Model::from_checkpoint(method, &load_checkpoint(&path)?)?,
            None => {
                let start = Instant::now();
                let trained = train_model(cfg, data, method, seed)?;
                out.timings.push(em.row(SUITE_INSTANCE, 0, Metric::WallclockMs, start.elapsed().as_secs_f64() * 1e3));
                out.records.extend(meta_loss_rows(&em, &trained.meta_log));
                if !trained.train_log.is_empty() {
                    out.train_log.insert((method.name().to_string(), seed), trained.train_log);
                }
                let dir = opts.out.join("models");
                fs::create_dir_all(&dir)?;
                save_checkpoint(&model_path(&dir, method, seed), &trained.model.to_checkpoint()?)?;
                trained.model
            }
        });
    }
    if opts.train_only {
        return Ok(());
    }
    let start = Instant::now();
    let rows = evaluate(cfg, data, method, model.as_ref(), seed, pool)?;
    out.timings.push(em.row(SUITE_INSTANCE, 1, Metric::WallclockMs, start.elapsed().as_secs_f64() * 1e3));
    out.records.extend(rows);
    Ok(())
}

/// Runs every (method, seed) of `cfg` and writes `records.csv`,
/// `timings.csv`, `train_log.csv` and `failures.txt` under `opts.out`;
/// trained models go to `opts.out/models`.
///
/// A failing method is listed in `failures.txt` and the others continue.
pub fn run_experiment(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RunSummary> {
    cfg.validate()?;
    let pool = thread_pool()?;
    fs::create_dir_all(&opts.out)?;
    let mut methods = cfg.methods.clone();
    methods.sort_by_key(|m| m.name());
    if opts.train_only {
        methods.retain(|m| m.is_learned());
    }
    let mut out = Collected::default();
    for &seed in &cfg.seeds {
        let data = match catch_unwind(AssertUnwindSafe(|| generate_data(cfg, seed, &pool))) {
            Ok(Ok(d)) => d,
            Ok(Err(e)) => {
                out.failures.push(format!("seed {seed}: data generation failed: {e}"));
                continue;
            }
            Err(p) => {
                out.failures.push(format!("seed {seed}: data generation panicked: {}", panic_message(p)));
                continue;
            }
        };
        if let (ExperimentData::Lasso(d), false) = (&data, opts.train_only) {
            let em = Emitter {
                cfg,
                method: REFERENCE_METHOD,
                seed,
            };
            for (q, f) in d.f_star.iter().enumerate() {
                out.records.push(em.row(q as i64, REFERENCE_FISTA_ITERS, Metric::Objective, *f));
            }
        }
        for &method in &methods {
            match catch_unwind(AssertUnwindSafe(|| {
                let mut local = Collected::default();
                run_one(cfg, opts, &data, method, seed, &pool, &mut local).map(|_| local)
            })) {
                Ok(Ok(local)) => {
                    out.records.extend(local.records);
                    out.timings.extend(local.timings);
                    out.train_log.extend(local.train_log);
                }
                Ok(Err(e)) => out.failures.push(format!("{method} seed {seed}: {e}")),
                Err(p) => out.failures.push(format!("{method} seed {seed}: panicked: {}", panic_message(p))),
            }
        }
    }
    write_outputs(&opts.out, &mut out)?;
    Ok(RunSummary {
        records: out.records.len(),
        failures: out.failures,
    })
}

fn write_outputs(dir: &Path, out: &mut Collected) -> Result<()> {
    if !out.records.is_empty() {
        write_records(fs::File::create(dir.join("records.csv"))?, &mut out.records)?;
    }
    write_records(fs::File::create(dir.join("timings.csv"))?, &mut out.timings)?;
    if !out.train_log.is_empty() {
        let mut w = std::io::BufWriter::new(fs::File::create(dir.join("train_log.csv"))?);
        writeln!(w, "method,seed,stage,phase,step,train_loss,val_loss")?;
        for ((method, seed), rows) in &out.train_log {
            for r in rows {
                writeln!(
                    w,
                    "{method},{seed},{},{},{},{},{}",
                    r.stage,
                    r.phase,
                    r.step,
                    format_float(r.train_loss),
                    format_float(r.val_loss)
                )?;
            }
        }
        w.flush()?;
    }
    let mut text = out.failures.join("\n");
    if !text.is_empty() {
        text.push('\n');
    }
    fs::write(dir.join("failures.txt"), text)?;
    Ok(())
}

/// Writes `data_s<seed>.ol2o` for every seed of `cfg` into `out`.
pub fn generate(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    let pool = thread_pool()?;
    fs::create_dir_all(out)?;
    cfg.seeds
        .iter()
        .map(|&seed| {
            let path = out.join(format!("data_s{seed}.ol2o"));
            save_checkpoint(&path, &data_checkpoint(&generate_data(cfg, seed, &pool)?)?)?;
            Ok(path)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::read_records;

    fn tiny(testbed: Testbed) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::new(testbed);
        cfg.sparse.m = 8;
        cfg.sparse.n = 16;
        cfg.sparse.train = 64;
        cfg.sparse.val = 16;
        cfg.sparse.test = 16;
        cfg.sparse.depth = 3;
        cfg.lasso.train = 64;
        cfg.lasso.val = 16;
        cfg.lasso.test = 6;
        cfg.lasso.depth = 3;
        cfg.lasso.iterations = 30;
        cfg.lasso.starts = 2;
        cfg.rastrigin.train = 8;
        cfg.rastrigin.test = 4;
        cfg.rastrigin.starts = 2;
        cfg.rastrigin.steps = 25;
        cfg.unrolled.steps_per_phase = 4;
        cfg.unrolled.validate_every = 2;
        cfg.unrolled.batch = 16;
        cfg.meta.epochs = 2;
        cfg.meta.horizon = 10;
        cfg.meta.unroll = 5;
        cfg.meta.hidden = 4;
        cfg.meta.layers = 1;
        cfg.meta.unroll_min = 2;
        cfg.meta.unroll_max = 5;
        cfg
    }

    fn run_to(cfg: &ExperimentConfig, dir: &Path) -> RunSummary {
        run_experiment(
            cfg,
            &RunOptions {
                out: dir.to_path_buf(),
                models: None,
                train_only: false,
            },
        )
        .unwrap()
    }

    #[test]
    fn method_seeds_differ_and_are_stable() {
        let a = method_seed(7, "lista".parse().unwrap());
        let b = method_seed(7, "alista".parse().unwrap());
        assert_ne!(a, b);
        assert_eq!(a, method_seed(7, "lista".parse().unwrap()));
    }

    #[test]
    fn sparse_run_writes_every_method() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny(Testbed::SparseRecovery);
        let s = run_to(&cfg, dir.path());
        assert!(s.failures.is_empty(), "{:?}", s.failures);
        let recs = read_records(fs::File::open(dir.path().join("records.csv")).unwrap()).unwrap();
        for m in &cfg.methods {
            let rows: Vec<_> = recs.iter().filter(|r| r.method == m.name()).collect();
            assert_eq!(rows.len(), cfg.sparse.depth, "{m}");
            assert!(rows.iter().all(|r| r.metric == Metric::NmseDb && r.value.is_finite()));
        }
        assert!(dir.path().join("models/alista_s0.ol2o").exists());
        assert!(dir.path().join("train_log.csv").exists());
        assert_eq!(fs::read_to_string(dir.path().join("failures.txt")).unwrap(), "");
    }

    #[test]
    fn lasso_components_reference_and_extension() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny(Testbed::Lasso);
        cfg.methods = ["fista", "gd", "alista", "l2o_dm"].iter().map(|s| s.parse().unwrap()).collect();
        let s = run_to(&cfg, dir.path());
        assert!(s.failures.is_empty(), "{:?}", s.failures);
        let recs = read_records(fs::File::open(dir.path().join("records.csv")).unwrap()).unwrap();
        let refs = recs.iter().filter(|r| r.method == REFERENCE_METHOD).count();
        assert_eq!(refs, cfg.lasso.test);
        let last = cfg.lasso.iterations as u64;
        for m in ["fista", "gd", "alista", "l2o_dm"] {
            let finals: Vec<_> = recs
                .iter()
                .filter(|r| r.method == m && r.iteration == last && r.metric == Metric::RelativeLossComponent)
                .collect();
            assert_eq!(finals.len(), cfg.lasso.test, "{m}");
        }
        // FISTA gaps stay above the reference and shrink by orders of magnitude
        let gap = |it: u64| -> f64 {
            recs.iter()
                .filter(|r| r.method == "fista" && r.iteration == it)
                .map(|r| r.value)
                .sum()
        };
        assert!(gap(last) >= -1e-9 && gap(last) < 1e-2 * gap(0), "{} vs {}", gap(last), gap(0));
        assert!(recs.iter().any(|r| r.method == "l2o_dm" && r.metric == Metric::MetaLoss));
    }

    #[test]
    fn rastrigin_rerun_is_byte_identical_and_order_free() {
        let cfg = tiny(Testbed::Rastrigin);
        let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        run_to(&cfg, d1.path());
        let mut rev = cfg.clone();
        rev.methods.reverse();
        run_to(&rev, d2.path());
        let a = fs::read(d1.path().join("records.csv")).unwrap();
        let b = fs::read(d2.path().join("records.csv")).unwrap();
        assert!(!a.is_empty());
        assert_eq!(a, b);
    }

    #[test]
    fn stored_models_are_reused() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny(Testbed::SparseRecovery);
        cfg.methods = vec!["lista_cp".parse().unwrap()];
        let opts = RunOptions {
            out: dir.path().join("train"),
            models: None,
            train_only: true,
        };
        run_experiment(&cfg, &opts).unwrap();
        assert!(!opts.out.join("records.csv").exists());
        let eval = RunOptions {
            out: dir.path().join("eval"),
            models: Some(opts.out.join("models")),
            train_only: false,
        };
        run_experiment(&cfg, &eval).unwrap();
        // evaluation loaded the model instead of training again
        assert!(!eval.out.join("models").exists());
        let fresh = dir.path().join("fresh");
        run_to(&cfg, &fresh);
        assert_eq!(
            fs::read(eval.out.join("records.csv")).unwrap(),
            fs::read(fresh.join("records.csv")).unwrap()
        );
    }

    #[test]
    fn failures_are_recorded_and_others_continue() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny(Testbed::SparseRecovery);
        cfg.methods = vec!["ista".parse().unwrap(), "lista".parse().unwrap()];
        let models = dir.path().join("bad");
        fs::create_dir_all(&models).unwrap();
        fs::write(models.join("lista_s0.ol2o"), b"not a checkpoint").unwrap();
        let s = run_experiment(
            &cfg,
            &RunOptions {
                out: dir.path().join("out"),
                models: Some(models),
                train_only: false,
            },
        )
        .unwrap();
        assert_eq!(s.failures.len(), 1);
        assert!(s.failures[0].starts_with("lista seed 0"));
        let recs = read_records(fs::File::open(dir.path().join("out/records.csv")).unwrap()).unwrap();
        assert!(recs.iter().all(|r| r.method == "ista"));
    }

    #[test]
    fn gen_writes_named_arrays() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny(Testbed::Lasso);
        let paths = generate(&cfg, dir.path()).unwrap();
        let ck = load_checkpoint(&paths[0]).unwrap();
        assert_eq!(ck.get("test.f_star").unwrap().dims, vec![cfg.lasso.test]);
        assert_eq!(ck.get("test.starts").unwrap().dims, vec![cfg.lasso.test * 2, cfg.lasso.n]);
    }
}
