//! End-to-end acceptance checks, one PASS/FAIL line per criterion.
//!
//! Run a subset with `cargo test --release -p l2o-core --test acceptance -- 3 7`.
//! The process exits non-zero when any selected criterion fails.

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use l2o::analytic::ProxState;
use l2o::analytic::ista_step;
use l2o::autodiff::{grad_check_many, Tape, Var};
use l2o::bench::{
    aggregate, load_checkpoint, lstm_from_checkpoint, lstm_to_checkpoint, read_records, relative_loss, run_experiment,
    save_checkpoint, unrolled_from_checkpoint, unrolled_to_checkpoint, Checkpoint, ExperimentConfig, Method, Metric,
    Model, RunOptions, RunRecord,
};
use l2o::meta::{
    lstm_optimizer_step, lstm_trajectory, meta_train, CoordinateStates, LstmOptimizerParams, MetaTrainConfig,
    Optimizee, QuadraticOptimizee,
};
use l2o::numerics::{dot, DenseMatrix, DenseVector, RngStream};
use l2o::problems::{gen_measurement_matrix, gen_sparse_instances, LassoProblem, MatrixKind};
use l2o::unrolled::{analytic_init, forward, nmse_db, SupportSchedule, Variant};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn within(elapsed: Duration, budget_s: f64) -> bool {
    elapsed.as_secs_f64() < budget_s
}

fn scratch() -> &'static Path {
    static DIR: OnceLock<tempfile::TempDir> = OnceLock::new();
    DIR.get_or_init(|| tempfile::tempdir().expect("temp dir")).path()
}

fn run_bench(cfg_text: &str, out: &Path, models: Option<PathBuf>) -> Vec<RunRecord> {
    let cfg = ExperimentConfig::parse(cfg_text).expect("acceptance config parses");
    let summary = run_experiment(
        &cfg,
        &RunOptions {
            out: out.to_path_buf(),
            models,
            train_only: false,
        },
    )
    .expect("experiment runs");
    assert!(summary.failures.is_empty(), "run failures: {:?}", summary.failures);
    read_records(fs::File::open(out.join("records.csv")).unwrap()).unwrap()
}

fn nmse_at(records: &[RunRecord], method: &str, layer: u64) -> f64 {
    records
        .iter()
        .find(|r| r.method == method && r.metric == Metric::NmseDb && r.iteration == layer)
        .unwrap_or_else(|| panic!("no nmse_db row for {method} at {layer}"))
        .value
}

// ---------------------------------------------------------------- criterion 1

#[derive(Clone)]
enum Step {
    Tanh,
    Sin,
    Cos,
    Sigmoid,
    ExpTanh,
    LogOnePlusSquare,
    Scale(f64),
    Add(usize),
    Sub(usize),
    Mul(usize),
    /// Left-multiply by the second (learnable) input.
    MatMul,
}

fn random_program(rng: &mut RngStream) -> (Vec<Step>, bool) {
    let len = 3 + rng.index(8);
    let mut steps = Vec::with_capacity(len);
    for i in 0..len {
        // node i + 1 is produced by step i; node 0 is the input
        let earlier = rng.index(i + 1);
        steps.push(match rng.index(11) {
            0 => Step::Tanh,
            1 => Step::Sin,
            2 => Step::Cos,
            3 => Step::Sigmoid,
            4 => Step::ExpTanh,
            5 => Step::LogOnePlusSquare,
            6 => Step::Scale(rng.uniform_range(-2.0, 2.0)),
            7 => Step::Add(earlier),
            8 => Step::Sub(earlier),
            9 => Step::Mul(earlier),
            _ => Step::MatMul,
        });
    }
    (steps, rng.bernoulli(0.5))
}

fn replay<'t>(tape: &'t Tape, inputs: &[Var<'t>], steps: &[Step], mean: bool) -> Var<'t> {
    let mut nodes = vec![inputs[0]];
    for step in steps {
        let x = *nodes.last().unwrap();
        let next = match *step {
            Step::Tanh => x.tanh(),
            Step::Sin => x.sin(),
            Step::Cos => x.cos(),
            Step::Sigmoid => x.sigmoid(),
            Step::ExpTanh => x.tanh().exp(),
            Step::LogOnePlusSquare => {
                let one = tape.constant(DenseMatrix::filled(x.rows(), x.cols(), 1.0));
                (x.square() + one).log()
            }
            Step::Scale(s) => x.scale(s),
            Step::Add(j) => x + nodes[j],
            Step::Sub(j) => x - nodes[j],
            Step::Mul(j) => x * nodes[j],
            Step::MatMul => inputs[1].matmul(x),
        };
        nodes.push(next);
    }
    let last = *nodes.last().unwrap();
    if mean {
        last.mean()
    } else {
        last.sum()
    }
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = RngStream::new(101);
    let mut worst: f64 = 0.0;
    let mut passed = 0;
    for _ in 0..100 {
        let n = 2 + rng.index(5);
        let (steps, mean) = random_program(&mut rng);
        let x = rng.normal_matrix(n, 1, 0.0, 1.0);
        let w = rng.normal_matrix(n, n, 0.0, 1.0 / (n as f64).sqrt());
        let err = grad_check_many(|tape, v| replay(tape, v, &steps, mean), &[x, w]);
        worst = worst.max(err);
        if err <= 1e-5 {
            passed += 1;
        }
    }
    let t = start.elapsed();
    outcome(
        passed == 100 && within(t, 10.0),
        format!("{passed}/100 programs within 1e-5, worst {worst:.2e}, {:.2} s (budget 10 s)", t.as_secs_f64()),
    )
}

// ---------------------------------------------------------------- criterion 2

fn criterion_2() -> Outcome {
    let mut rng = RngStream::new(202);
    let (m, n, depth, lambda) = (64, 128, 32, 0.1);
    let a = gen_measurement_matrix(&mut rng, m, n, MatrixKind::Incoherent).unwrap();
    let suite = gen_sparse_instances(&mut rng, &a, 20, None).unwrap();
    let mut worst: f64 = 0.0;
    for variant in [Variant::Lista, Variant::ListaCp] {
        let params = analytic_init(variant, &a, lambda, depth, SupportSchedule::EMPTY).unwrap();
        let layers = forward(&params, &suite.b).unwrap();
        for q in 0..20 {
            let p = LassoProblem::new(&a, suite.b.column(q), lambda).unwrap();
            let mut s = ProxState::for_problem(&p).unwrap();
            for out in &layers {
                s = ista_step(&p, s);
                worst = worst.max(s.x.max_abs_diff(out.column(q)));
            }
        }
    }
    outcome(
        worst <= 1e-10,
        format!("LISTA and LISTA-CP at init vs ISTA, 20 instances x 32 layers: max |diff| {worst:.2e} (bound 1e-10)"),
    )
}

// ---------------------------------------------------------------- criterion 3

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let cfg = "\
[experiment]
testbed = lasso
methods = fista, ista
seeds = 0, 1, 2

[lasso]
m = 5
n = 10
train = 128
val = 128
test = 1280
iterations = 1000
";
    let records = run_bench(cfg, &scratch().join("c3"), None);
    let rows = aggregate(&records);
    let r = |method: &str| {
        rows.iter()
            .find(|r| r.method == method && r.metric == "relative_loss" && r.iteration == 1000)
            .unwrap_or_else(|| panic!("no relative loss for {method}"))
            .mean
    };
    let (fista, ista) = (r("fista"), r("ista"));
    let t = start.elapsed();
    outcome(
        fista <= 1e-6 && ista <= 1e-3 && within(t, 60.0),
        format!(
            "R at 1000 over seeds 0-2: FISTA {fista:.3e} (<= 1e-6), ISTA {ista:.3e} (<= 1e-3), {:.1} s (budget 60 s)",
            t.as_secs_f64()
        ),
    )
}

// ------------------------------------------------------------ criteria 4 to 6

const SPARSE_CONFIG: &str = "\
[experiment]
testbed = sparse_recovery
setting = SETTING
methods = METHODS
seeds = 1

[sparse_recovery]
m = 64
n = 128
train = 8192
val = 1000
test = 1000
depth = 16
lambda = 0.1

[unrolled]
lr = 0.0005
steps_per_phase = 1000
validate_every = 200
patience = 0
";

fn sparse_config(setting: &str, methods: &str) -> String {
    SPARSE_CONFIG.replace("SETTING", setting).replace("METHODS", methods)
}

struct SparseRun {
    noiseless: Vec<RunRecord>,
    models: PathBuf,
    elapsed: Duration,
}

/// Trains LISTA-CP and ALISTA (in parallel) and evaluates them with ISTA on
/// the noiseless suite; shared by criteria 4 to 6.
fn sparse_run() -> &'static SparseRun {
    static RUN: OnceLock<SparseRun> = OnceLock::new();
    RUN.get_or_init(|| {
        let start = Instant::now();
        let root = scratch().join("c4");
        let methods = ["alista", "ista", "lista_cp"];
        let per_method: Vec<Vec<RunRecord>> = std::thread::scope(|s| {
            let handles: Vec<_> = methods
                .iter()
                .map(|m| {
                    let out = root.join(m);
                    s.spawn(move || run_bench(&sparse_config("noiseless", m), &out, None))
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("sparse run")).collect()
        });
        let models = root.join("models");
        fs::create_dir_all(&models).unwrap();
        for m in ["alista", "lista_cp"] {
            let name = format!("{m}_s1.ol2o");
            fs::copy(root.join(m).join("models").join(&name), models.join(&name)).unwrap();
        }
        SparseRun {
            noiseless: per_method.into_iter().flatten().collect(),
            models,
            elapsed: start.elapsed(),
        }
    })
}

fn criterion_4() -> Outcome {
    let run = sparse_run();
    let ista = nmse_at(&run.noiseless, "ista", 16);
    let cp = nmse_at(&run.noiseless, "lista_cp", 16);
    let al = nmse_at(&run.noiseless, "alista", 16);
    let t = run.elapsed;
    outcome(
        cp <= -30.0 && al <= -30.0 && ista >= -10.0 && within(t, 1800.0),
        format!(
            "NMSE at 16: LISTA-CP {cp:.2} dB, ALISTA {al:.2} dB (<= -30), ISTA {ista:.2} dB (>= -10), {:.0} s (budget 1800 s)",
            t.as_secs_f64()
        ),
    )
}

fn criterion_5() -> Outcome {
    let run = sparse_run();
    let noisy = run_bench(
        &sparse_config("noisy", "alista, lista_cp"),
        &scratch().join("c5"),
        Some(run.models.clone()),
    );
    let mut pass = true;
    let mut parts = Vec::new();
    for m in ["lista_cp", "alista"] {
        let clean = nmse_at(&run.noiseless, m, 16);
        let dirty = nmse_at(&noisy, m, 16);
        let tail: Vec<f64> = (13..=16).map(|k| nmse_at(&noisy, m, k)).collect();
        let spread = tail.iter().cloned().fold(f64::MIN, f64::max) - tail.iter().cloned().fold(f64::MAX, f64::min);
        pass &= dirty >= clean + 5.0 && spread <= 2.0;
        parts.push(format!("{m} {clean:.2} -> {dirty:.2} dB, spread {spread:.2} dB"));
    }
    outcome(pass, format!("{} (need >= 5 dB worse, spread <= 2 dB)", parts.join("; ")))
}

fn diag_deviation(w: &DenseMatrix, a: &DenseMatrix) -> f64 {
    (0..a.cols()).map(|j| (dot(w.column(j), a.column(j)) - 1.0).abs()).fold(0.0, f64::max)
}

fn criterion_6() -> Outcome {
    let run = sparse_run();
    let ck = load_checkpoint(&run.models.join("alista_s1.ol2o")).unwrap();
    let Model::Unrolled(trained) = Model::from_checkpoint(Method::Unrolled(Variant::Alista), &ck).unwrap() else {
        unreachable!("unrolled method loads unrolled weights")
    };
    let mut rng = RngStream::new(606);
    let a = gen_measurement_matrix(&mut rng, 64, 128, MatrixKind::Incoherent).unwrap();
    let fresh = analytic_init(Variant::Alista, &a, 0.1, 16, SupportSchedule::default()).unwrap();
    let mut pass = true;
    let mut parts = Vec::new();
    for (label, p) in [("trained", &trained), ("fresh", &fresh)] {
        let count = p.learnable_count();
        let dev = diag_deviation(p.alista_w.as_ref().expect("ALISTA carries W"), &p.a);
        pass &= count == 2 * p.depth() && dev <= 1e-8 && !p.gram_regularized;
        parts.push(format!("{label}: {count} scalars for K={}, max |diag(W^T A) - 1| {dev:.1e}", p.depth()));
    }
    outcome(pass, parts.join("; "))
}

// ---------------------------------------------------------------- criterion 7

fn criterion_7() -> Outcome {
    let start = Instant::now();
    // the four analytic optimizers of the Rastrigin comparison
    let methods = ["adam", "gd_ls", "nag_ls", "rmsprop"];
    let cfg = format!(
        "[experiment]\ntestbed = rastrigin\nmethods = {}\nseeds = 0, 1, 2\n\n[rastrigin]\nn = 2\ntrain = 1\ntest = 128\nstarts = 10\nsteps = 1000\n",
        methods.join(", ")
    );
    let records = run_bench(&cfg, &scratch().join("c7"), None);
    let rows = aggregate(&records);
    let mut pass = true;
    let mut parts = Vec::new();
    for m in &methods {
        let last = rows
            .iter()
            .filter(|r| r.method == *m && r.metric == "objective")
            .max_by_key(|r| r.iteration)
            .expect("objective rows");
        pass &= last.iteration == 1000 && (5.0..=6.5).contains(&last.mean);
        parts.push(format!("{m} {:.3}", last.mean));
    }
    let t = start.elapsed();
    pass &= within(t, 300.0);
    outcome(
        pass,
        format!("mean loss at 1000 over seeds 0-2: {} (band [5.0, 6.5]), {:.1} s (budget 300 s)", parts.join(", "), t.as_secs_f64()),
    )
}

// ---------------------------------------------------------------- criterion 8

fn win_fraction(meta_seed: u64) -> f64 {
    let n = 10;
    let mut rng = RngStream::new(meta_seed);
    let init = LstmOptimizerParams::default_init(&mut rng);
    let mut sampler = move |rng: &mut RngStream| {
        let q = QuadraticOptimizee::sample(rng, n);
        (Box::new(q) as Box<dyn Optimizee>, DenseVector::from(rng.normal_vec(n, 0.0, 1.0)))
    };
    let cfg = MetaTrainConfig {
        unroll: 20,
        horizon: 100,
        epochs: 100,
        lr: 1e-3,
        ..MetaTrainConfig::default()
    };
    let trained = meta_train(init, &mut sampler, &cfg, &mut rng).expect("meta-training").params;

    // the held-out set is shared by every meta-seed
    let mut held_out = RngStream::new(8_000);
    let mut wins = 0;
    for _ in 0..128 {
        let mut q = QuadraticOptimizee::sample(&mut held_out, n);
        let x0 = held_out.normal_vec(n, 0.0, 1.0);
        let (values, _) = lstm_trajectory(&trained, &mut q, &x0, 50, &mut held_out);
        let mut x = DenseVector::from(x0);
        for _ in 0..50 {
            let g = q.grad(&x);
            x.axpy(-0.01, &g);
        }
        if values[50] < q.value(&x) {
            wins += 1;
        }
    }
    wins as f64 / 128.0
}

fn criterion_8() -> Outcome {
    let start = Instant::now();
    let mut fractions: Vec<f64> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..3u64).map(|seed| s.spawn(move || win_fraction(seed))).collect();
        handles.into_iter().map(|h| h.join().expect("meta seed")).collect()
    });
    let per_seed = fractions.iter().map(|f| format!("{f:.3}")).collect::<Vec<_>>().join(", ");
    fractions.sort_by(f64::total_cmp);
    let median = fractions[1];
    let t = start.elapsed();
    outcome(
        median >= 0.7 && within(t, 1200.0),
        format!(
            "win fraction vs GD(0.01) at step 50: [{per_seed}], median {median:.3} (>= 0.7), {:.0} s (budget 1200 s)",
            t.as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------- criterion 9

fn equivariance_error() -> f64 {
    let mut rng = RngStream::new(909);
    let p = LstmOptimizerParams::default_init(&mut rng);
    let n = 16;
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let mut s = CoordinateStates::zeros(&p, n);
        for _ in 0..3 {
            s = lstm_optimizer_step(&p, &s, &rng.normal_vec(n, 0.0, 1.0)).1;
        }
        let g = rng.normal_vec(n, 0.0, 3.0);
        let mut perm: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut perm);
        let (u, _) = lstm_optimizer_step(&p, &s, &g);
        let gp: Vec<f64> = perm.iter().map(|&j| g[j]).collect();
        let (up, _) = lstm_optimizer_step(&p, &s.permuted(&perm), &gp);
        for (k, &j) in perm.iter().enumerate() {
            worst = worst.max((up[k] - u[j]).abs());
        }
    }
    worst
}

const DETERMINISM_CONFIGS: [&str; 2] = [
    "\
[experiment]
testbed = lasso
methods = adam, fista, ista, l2o_dm, lista_cp
seeds = 3, 4

[lasso]
train = 256
val = 64
test = 64
iterations = 100
starts = 2

[unrolled]
steps_per_phase = 20
validate_every = 10

[meta]
epochs = 3
horizon = 20
unroll = 5
hidden = 4
layers = 1
",
    "\
[experiment]
testbed = rastrigin
methods = gd_ls, l2o_rnnprop, nag_ls
seeds = 5

[rastrigin]
train = 8
test = 6
starts = 2
steps = 60

[meta]
epochs = 3
horizon = 20
unroll = 5
hidden = 4
layers = 1
",
];

/// Every CSV under `dir` except the wall-clock timings, by relative path.
fn csv_outputs(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .filter(|p| p.file_name().unwrap() != "timings.csv")
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

fn cli_run(config: &Path, out: &Path, threads: &str) {
    let status = Command::new(env!("CARGO_BIN_EXE_l2o"))
        .args(["run", "--config"])
        .arg(config)
        .arg("--out")
        .arg(out)
        .env("OPEN_L2O_THREADS", threads)
        .output()
        .expect("l2o binary runs");
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
}

fn criterion_9() -> Outcome {
    let eq = equivariance_error();
    let root = scratch().join("c9");
    fs::create_dir_all(&root).unwrap();
    let mut compared = 0;
    let mut mismatches = Vec::new();
    for (i, text) in DETERMINISM_CONFIGS.iter().enumerate() {
        let cfg = root.join(format!("det{i}.cfg"));
        fs::write(&cfg, text).unwrap();
        let (a, b) = (root.join(format!("det{i}_a")), root.join(format!("det{i}_b")));
        cli_run(&cfg, &a, "1");
        cli_run(&cfg, &b, "4");
        let (fa, fb) = (csv_outputs(&a), csv_outputs(&b));
        let has = |name: &str| fa.iter().any(|f| f.0 == name);
        if !has("records.csv") || !has("summary.csv") || fa.iter().map(|f| &f.0).ne(fb.iter().map(|f| &f.0)) {
            mismatches.push(format!("det{i}: file sets differ"));
        }
        for ((name, x), (_, y)) in fa.iter().zip(&fb) {
            compared += 1;
            if x != y {
                mismatches.push(format!("det{i}/{name}"));
            }
        }
    }
    outcome(
        eq <= 1e-12 && mismatches.is_empty(),
        format!(
            "permutation error {eq:.1e} (<= 1e-12); {compared} CSV files compared across reruns with 1 and 4 threads, mismatches: {}",
            if mismatches.is_empty() { "none".to_string() } else { mismatches.join(", ") }
        ),
    )
}

// --------------------------------------------------------------- criterion 10

fn bits(ck: &Checkpoint, names: &[&str]) -> Vec<Vec<u64>> {
    names
        .iter()
        .map(|n| ck.get(n).unwrap().data.iter().map(|v| v.to_bits()).collect())
        .collect()
}

fn criterion_10() -> Outcome {
    let mut failures = Vec::new();
    let x = [1.0, -2.0, 0.0, 3.0];
    let nmse_cases = [
        (nmse_db(&x, &x).unwrap(), -150.0),
        (nmse_db(&[0.0; 4], &x).unwrap(), 0.0),
        (nmse_db(&[10.0, 1.0], &[10.0, 0.0]).unwrap(), -20.0),
    ];
    for (got, want) in nmse_cases {
        if got != want {
            failures.push(format!("nmse_db {got} != {want}"));
        }
    }
    let rel_cases = [
        (relative_loss(&[3.0, 5.0], &[1.0, 3.0]).unwrap().value, 1.0),
        (relative_loss(&[2.0, 7.0], &[2.0, 7.0]).unwrap().value, 0.0),
        (relative_loss(&[4.0, 6.0], &[2.0, 3.0]).unwrap().value, 1.0),
    ];
    for (got, want) in rel_cases {
        if got != want {
            failures.push(format!("relative_loss {got} != {want}"));
        }
    }

    // raw arrays with values that text formats tend to mangle
    let dir = scratch().join("c10");
    fs::create_dir_all(&dir).unwrap();
    let special = vec![
        -0.0,
        f64::from_bits(0x7ff8_0000_dead_beef),
        f64::INFINITY,
        f64::NEG_INFINITY,
        f64::MIN_POSITIVE / 3.0,
        0.1 + 0.2,
    ];
    let mut ck = Checkpoint::new();
    ck.push("special", &[2, 3], special).unwrap();
    ck.push_scalar("theta", std::f64::consts::PI).unwrap();
    save_checkpoint(&dir.join("raw.ol2o"), &ck).unwrap();
    let back = load_checkpoint(&dir.join("raw.ol2o")).unwrap();
    if bits(&ck, &["special", "theta"]) != bits(&back, &["special", "theta"]) || back.to_bytes() != ck.to_bytes() {
        failures.push("raw checkpoint differs after reload".into());
    }

    let mut rng = RngStream::new(1010);
    let a = gen_measurement_matrix(&mut rng, 12, 24, MatrixKind::Incoherent).unwrap();
    for variant in [Variant::Lista, Variant::ListaCp, Variant::ListaCpss, Variant::Alista] {
        let mut p = analytic_init(variant, &a, 0.1, 4, SupportSchedule::default()).unwrap();
        for layer in &mut p.layers {
            for s in layer.slices_mut() {
                s.iter_mut().for_each(|v| *v += 1e-3 * rng.normal());
            }
        }
        let bytes = unrolled_to_checkpoint(&p).unwrap().to_bytes();
        let again = unrolled_from_checkpoint(&Checkpoint::from_bytes(&bytes).unwrap()).unwrap();
        if again != p || unrolled_to_checkpoint(&again).unwrap().to_bytes() != bytes {
            failures.push(format!("{} weights differ after reload", variant.name()));
        }
    }
    let lstm = LstmOptimizerParams::init(&mut rng, 5, 2);
    let bytes = lstm_to_checkpoint(&lstm).unwrap().to_bytes();
    let again = lstm_from_checkpoint(&Checkpoint::from_bytes(&bytes).unwrap()).unwrap();
    if lstm_to_checkpoint(&again).unwrap().to_bytes() != bytes {
        failures.push("LSTM weights differ after reload".into());
    }

    outcome(
        failures.is_empty(),
        if failures.is_empty() {
            "3 nmse_db and 3 relative_loss fixtures exact; raw, unrolled (4 variants) and LSTM checkpoints bit-exact".into()
        } else {
            failures.join("; ")
        },
    )
}

// ------------------------------------------------------------------- driver

const CRITERIA: [(u32, &str, fn() -> Outcome); 10] = [
    (1, "autodiff grad_check", criterion_1),
    (2, "ISTA reduction identity", criterion_2),
    (3, "LASSO (5,10) FISTA/ISTA", criterion_3),
    (4, "sparse recovery (64,128) depth 16", criterion_4),
    (5, "noisy robustness", criterion_5),
    (6, "ALISTA structure", criterion_6),
    (7, "Rastrigin n=2 analytic band", criterion_7),
    (8, "L2O-DM vs GD on quadratics", criterion_8),
    (9, "equivariance and determinism", criterion_9),
    (10, "metric oracles and checkpoints", criterion_10),
];

fn main() -> ExitCode {
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (id, name, check) in CRITERIA {
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        if !result.pass {
            failed += 1;
        }
        println!(
            "criterion {id:>2} [{name}]: {} | {} | {:.1} s",
            if result.pass { "PASS" } else { "FAIL" },
            result.detail,
            start.elapsed().as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
