use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::meta::{Tricks, DEFAULT_HIDDEN, DEFAULT_KAPPA, DEFAULT_LAYERS, DEFAULT_PREPROCESS_P};
use crate::problems::{Activation, DEFAULT_ALPHA, DEFAULT_LAMBDA};
use crate::unrolled::{TrainConfig, Variant, DEFAULT_DEPTH};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Testbed {
    SparseRecovery,
    Lasso,
    Rastrigin,
    Mlp,
}

impl Testbed {
    pub fn name(self) -> &'static str {
        match self {
            Testbed::SparseRecovery => "sparse_recovery",
            Testbed::Lasso => "lasso",
            Testbed::Rastrigin => "rastrigin",
            Testbed::Mlp => "mlp",
        }
    }

    fn settings(self) -> &'static [&'static str] {
        match self {
            Testbed::SparseRecovery => &["noiseless", "noisy", "coherent", "large"],
            Testbed::Mlp => &["relu", "sigmoid"],
            Testbed::Lasso | Testbed::Rastrigin => &["default"],
        }
    }
}

impl fmt::Display for Testbed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Testbed {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Testbed::SparseRecovery, Testbed::Lasso, Testbed::Rastrigin, Testbed::Mlp]
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown testbed {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AnalyticMethod {
    Gd,
    Sgd,
    GdLineSearch,
    NagLineSearch,
    Adam,
    RmsProp,
    Ista,
    Fista,
}

/// Model-free learned optimizers: the same coordinatewise LSTM, trained
/// with different tricks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MetaFlavor {
    /// Plain truncated BPTT.
    Dm,
    /// Random scaling and the convex term.
    RnnProp,
    /// Growing unroll length and the imitation warm-up.
    Enhanced,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Analytic(AnalyticMethod),
    Unrolled(Variant),
    Meta(MetaFlavor),
}

const NAMES: [(&str, Method); 15] = [
    ("gd", Method::Analytic(AnalyticMethod::Gd)),
    ("sgd", Method::Analytic(AnalyticMethod::Sgd)),
    ("gd_ls", Method::Analytic(AnalyticMethod::GdLineSearch)),
    ("nag_ls", Method::Analytic(AnalyticMethod::NagLineSearch)),
    ("adam", Method::Analytic(AnalyticMethod::Adam)),
    ("rmsprop", Method::Analytic(AnalyticMethod::RmsProp)),
    ("ista", Method::Analytic(AnalyticMethod::Ista)),
    ("fista", Method::Analytic(AnalyticMethod::Fista)),
    ("lista", Method::Unrolled(Variant::Lista)),
    ("lista_cp", Method::Unrolled(Variant::ListaCp)),
    ("lista_cpss", Method::Unrolled(Variant::ListaCpss)),
    ("alista", Method::Unrolled(Variant::Alista)),
    ("l2o_dm", Method::Meta(MetaFlavor::Dm)),
    ("l2o_rnnprop", Method::Meta(MetaFlavor::RnnProp)),
    ("l2o_enhanced", Method::Meta(MetaFlavor::Enhanced)),
];

impl Method {
    pub fn name(self) -> &'static str {
        NAMES.iter().find(|(_, m)| *m == self).map(|(n, _)| *n).expect("every method is named")
    }

    pub fn is_learned(self) -> bool {
        !matches!(self, Method::Analytic(_))
    }

    /// Whether `self` can run on `testbed`.
    pub fn supports(self, testbed: Testbed) -> bool {
        use AnalyticMethod as A;
        match (testbed, self) {
            (Testbed::SparseRecovery, Method::Analytic(a)) => matches!(a, A::Ista | A::Fista),
            (Testbed::SparseRecovery, Method::Unrolled(_)) => true,
            (Testbed::SparseRecovery, Method::Meta(_)) => false,
            (Testbed::Lasso, Method::Analytic(a)) => a != A::Sgd,
            (Testbed::Lasso, _) => true,
            (Testbed::Rastrigin, Method::Analytic(a)) => !matches!(a, A::Sgd | A::Ista | A::Fista),
            (Testbed::Mlp, Method::Analytic(a)) => matches!(a, A::Sgd | A::Adam | A::RmsProp),
            (Testbed::Rastrigin | Testbed::Mlp, Method::Unrolled(_)) => false,
            (Testbed::Rastrigin | Testbed::Mlp, Method::Meta(_)) => true,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        NAMES
            .iter()
            .find(|(n, _)| *n == s)
            .map(|(_, m)| *m)
            .ok_or_else(|| Error::Config(format!("unknown method {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparseConfig {
    pub m: usize,
    pub n: usize,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub depth: usize,
    /// Initial `λ` of the unrolled networks and the `λ` of ISTA/FISTA.
    pub lambda: f64,
    pub snr_db: f64,
    pub coherence: f64,
    pub coherent_groups: usize,
}

impl Default for SparseConfig {
    fn default() -> Self {
        Self {
            m: 64,
            n: 128,
            train: 8192,
            val: 1000,
            test: 1000,
            depth: DEFAULT_DEPTH,
            lambda: 0.1,
            snr_db: 20.0,
            coherence: 0.9,
            coherent_groups: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LassoConfig {
    pub m: usize,
    pub n: usize,
    pub lambda: f64,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub iterations: usize,
    pub depth: usize,
    /// Continue unrolled models with FISTA up to `iterations`.
    pub fista_extension: bool,
    /// Random starting points per test instance for the model-free learned
    /// methods; analytic and unrolled methods start at zero.
    pub starts: usize,
    pub start_std: f64,
    pub gd_lr: f64,
    pub adam_lr: f64,
    pub rmsprop_lr: f64,
    pub ls_init_step: f64,
}

impl Default for LassoConfig {
    fn default() -> Self {
        Self {
            m: 5,
            n: 10,
            lambda: DEFAULT_LAMBDA,
            train: 12_800,
            val: 1280,
            test: 1280,
            iterations: 1000,
            depth: DEFAULT_DEPTH,
            fista_extension: true,
            starts: 10,
            start_std: 1.0,
            gd_lr: 1e-3,
            adam_lr: 1e-3,
            rmsprop_lr: 1e-3,
            ls_init_step: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RastriginConfig {
    pub n: usize,
    pub alpha: f64,
    pub train: usize,
    pub test: usize,
    pub starts: usize,
    pub steps: usize,
    pub start_std: f64,
    pub gd_lr: f64,
    pub adam_lr: f64,
    pub rmsprop_lr: f64,
    pub ls_init_step: f64,
}

impl Default for RastriginConfig {
    fn default() -> Self {
        Self {
            n: 2,
            alpha: DEFAULT_ALPHA,
            train: 1280,
            test: 128,
            starts: 10,
            steps: 1000,
            start_std: 1.0,
            gd_lr: 0.01,
            adam_lr: 0.1,
            rmsprop_lr: 0.3,
            ls_init_step: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpConfig {
    pub hidden: usize,
    pub batch: usize,
    pub init_var: f64,
    /// Random initializations seen during meta-training (one per epoch).
    pub train_inits: usize,
    /// Optimizer steps per meta-training initialization.
    pub train_steps: usize,
    pub eval_steps: usize,
    pub runs: usize,
    pub sgd_lr: f64,
    pub adam_lr: f64,
    pub rmsprop_lr: f64,
    /// Directory holding `train-images-idx3-ubyte` and friends.
    pub data_dir: Option<PathBuf>,
    /// Size of the generated stand-in dataset when no IDX files are found.
    pub synthetic_count: usize,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            hidden: 20,
            batch: 128,
            init_var: 0.01,
            train_inits: 500,
            train_steps: 100,
            eval_steps: 10_000,
            runs: 10,
            sgd_lr: 0.1,
            adam_lr: 1e-3,
            rmsprop_lr: 1e-3,
            data_dir: None,
            synthetic_count: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetaConfig {
    pub unroll: usize,
    pub horizon: usize,
    pub epochs: usize,
    pub lr: f64,
    pub weights: Vec<f64>,
    pub hidden: usize,
    pub layers: usize,
    pub kappa: f64,
    pub preprocess_p: f64,
    /// Smoothed-gradient samples; 0 feeds exact gradients.
    pub es_samples: usize,
    pub es_sigma: f64,
    /// Convex-term weight of `l2o_rnnprop`.
    pub convex_mu: f64,
    /// Unroll range of `l2o_enhanced`.
    pub unroll_min: usize,
    pub unroll_max: usize,
}

impl Default for MetaConfig {
    fn default() -> Self {
        Self {
            unroll: 20,
            horizon: 1000,
            epochs: 100,
            lr: 1e-3,
            weights: Vec::new(),
            hidden: DEFAULT_HIDDEN,
            layers: DEFAULT_LAYERS,
            kappa: DEFAULT_KAPPA,
            preprocess_p: DEFAULT_PREPROCESS_P,
            es_samples: 0,
            es_sigma: 0.01,
            convex_mu: 0.1,
            unroll_min: 5,
            unroll_max: 40,
        }
    }
}

impl MetaConfig {
    /// Tricks enabled for `flavor`.
    pub fn tricks(&self, flavor: MetaFlavor) -> Tricks {
        let es_smoothing = (self.es_samples > 0).then_some((self.es_samples, self.es_sigma));
        match flavor {
            MetaFlavor::Dm => Tricks {
                es_smoothing,
                ..Tricks::default()
            },
            MetaFlavor::RnnProp => Tricks {
                random_scaling: true,
                convex_augment: Some(self.convex_mu),
                es_smoothing,
                ..Tricks::default()
            },
            MetaFlavor::Enhanced => Tricks {
                progressive_unroll: Some((self.unroll_min, self.unroll_max)),
                es_smoothing,
                ..Tricks::default()
            },
        }
    }
}

/// Everything one experiment needs; see `docs/config.md` for the keys.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub testbed: Testbed,
    pub setting: String,
    pub methods: Vec<Method>,
    pub seeds: Vec<u64>,
    pub output: Option<PathBuf>,
    pub sparse: SparseConfig,
    pub lasso: LassoConfig,
    pub rastrigin: RastriginConfig,
    pub mlp: MlpConfig,
    pub unrolled: TrainConfig,
    pub meta: MetaConfig,
}

impl ExperimentConfig {
    /// Defaults for `testbed` with every supported method and seed 0.
    pub fn new(testbed: Testbed) -> Self {
        Self {
            testbed,
            setting: testbed.settings()[0].to_string(),
            methods: NAMES.iter().map(|(_, m)| *m).filter(|m| m.supports(testbed)).collect(),
            seeds: vec![0],
            output: None,
            sparse: SparseConfig::default(),
            lasso: LassoConfig::default(),
            rastrigin: RastriginConfig::default(),
            mlp: MlpConfig::default(),
            unrolled: TrainConfig::default(),
            meta: MetaConfig::default(),
        }
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut raw = RawConfig::parse(text)?;
        let testbed: Testbed = raw.take("experiment", "testbed")?.ok_or_else(|| {
            Error::Config("missing [experiment] testbed".into())
        })?;
        let mut cfg = Self::new(testbed);
        if let Some(s) = raw.take_str("experiment", "setting") {
            cfg.setting = s;
        }
        if let Some(list) = raw.take_str("experiment", "methods") {
            cfg.methods = split_list(&list).map(str::parse).collect::<Result<_>>()?;
        }
        if let Some(list) = raw.take_str("experiment", "seeds") {
            cfg.seeds = split_list(&list).map(|s| parse_value("experiment", "seeds", s)).collect::<Result<_>>()?;
        }
        cfg.output = raw.take_str("experiment", "output").map(PathBuf::from);

        macro_rules! read {
            ($section:literal, $target:expr, [$($key:ident),* $(,)?]) => {
                $( if let Some(v) = raw.take($section, stringify!($key))? { $target.$key = v; } )*
            };
        }
        read!("sparse_recovery", cfg.sparse, [m, n, train, val, test, depth, lambda, snr_db, coherence, coherent_groups]);
        read!("lasso", cfg.lasso, [m, n, lambda, train, val, test, iterations, depth, fista_extension, starts, start_std, gd_lr, adam_lr, rmsprop_lr, ls_init_step]);
        read!("rastrigin", cfg.rastrigin, [n, alpha, train, test, starts, steps, start_std, gd_lr, adam_lr, rmsprop_lr, ls_init_step]);
        read!("mlp", cfg.mlp, [hidden, batch, init_var, train_inits, train_steps, eval_steps, runs, sgd_lr, adam_lr, rmsprop_lr, synthetic_count]);
        cfg.mlp.data_dir = raw.take_str("mlp", "data_dir").map(PathBuf::from);
        read!("unrolled", cfg.unrolled, [batch, lr, steps_per_phase, validate_every, patience]);
        read!("meta", cfg.meta, [unroll, horizon, epochs, lr, hidden, layers, kappa, preprocess_p, es_samples, es_sigma, convex_mu, unroll_min, unroll_max]);
        if let Some(list) = raw.take_str("meta", "weights") {
            cfg.meta.weights = split_list(&list).map(|s| parse_value("meta", "weights", s)).collect::<Result<_>>()?;
        }
        raw.reject_leftovers()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.testbed;
        if !t.settings().contains(&self.setting.as_str()) {
            return Err(Error::Config(format!(
                "setting {:?} not available for {t} (expected one of {:?})",
                self.setting,
                t.settings()
            )));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("method list is empty".into()));
        }
        if let Some(m) = self.methods.iter().find(|m| !m.supports(t)) {
            return Err(Error::Config(format!("method {m} does not run on {t}")));
        }
        let mut sorted = self.methods.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != self.methods.len() {
            return Err(Error::Config("method list has duplicates".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seed list is empty".into()));
        }
        let positive = |name: &str, v: usize| {
            if v == 0 {
                Err(Error::Config(format!("{name} must be >= 1")))
            } else {
                Ok(())
            }
        };
        match t {
            Testbed::SparseRecovery => {
                let s = &self.sparse;
                for (k, v) in [("train", s.train), ("val", s.val), ("test", s.test), ("depth", s.depth)] {
                    positive(k, v)?;
                }
                if s.m == 0 || s.m >= s.n {
                    return Err(Error::Config(format!("sparse recovery needs 0 < m < n, got ({}, {})", s.m, s.n)));
                }
                if !(s.lambda >= 0.0) {
                    return Err(Error::Config("lambda must be >= 0".into()));
                }
            }
            Testbed::Lasso => {
                let l = &self.lasso;
                for (k, v) in [("train", l.train), ("val", l.val), ("test", l.test), ("depth", l.depth), ("iterations", l.iterations), ("starts", l.starts)] {
                    positive(k, v)?;
                }
                if l.m == 0 || l.m >= l.n {
                    return Err(Error::Config(format!("lasso needs 0 < m < n, got ({}, {})", l.m, l.n)));
                }
                if !(l.lambda > 0.0) {
                    return Err(Error::Config("lasso lambda must be > 0".into()));
                }
            }
            Testbed::Rastrigin => {
                let r = &self.rastrigin;
                for (k, v) in [("n", r.n), ("train", r.train), ("test", r.test), ("starts", r.starts), ("steps", r.steps)] {
                    positive(k, v)?;
                }
            }
            Testbed::Mlp => {
                let m = &self.mlp;
                for (k, v) in [("hidden", m.hidden), ("batch", m.batch), ("train_inits", m.train_inits), ("train_steps", m.train_steps), ("eval_steps", m.eval_steps), ("runs", m.runs)] {
                    positive(k, v)?;
                }
            }
        }
        if self.methods.iter().any(|m| matches!(m, Method::Unrolled(_))) {
            self.unrolled.validate()?;
        }
        if self.methods.iter().any(|m| matches!(m, Method::Meta(_))) {
            let m = &self.meta;
            if m.hidden == 0 || m.layers == 0 || !(m.kappa > 0.0) || !(m.preprocess_p > 0.0) {
                return Err(Error::Config("meta hidden, layers, kappa and preprocess_p must be positive".into()));
            }
            for flavor in [MetaFlavor::Dm, MetaFlavor::RnnProp, MetaFlavor::Enhanced] {
                self.meta_train_config(flavor).validate()?;
            }
        }
        Ok(())
    }

    /// Meta-training settings for `flavor` on this testbed.
    pub fn meta_train_config(&self, flavor: MetaFlavor) -> crate::meta::MetaTrainConfig {
        let (epochs, horizon) = match self.testbed {
            Testbed::Mlp => (self.mlp.train_inits, self.mlp.train_steps),
            _ => (self.meta.epochs, self.meta.horizon),
        };
        crate::meta::MetaTrainConfig {
            unroll: self.meta.unroll,
            horizon,
            epochs,
            weights: self.meta.weights.clone(),
            lr: self.meta.lr,
            tricks: self.meta.tricks(flavor),
            imitation_warmup: flavor == MetaFlavor::Enhanced,
        }
    }

    /// `(m, n)` of the sparse-recovery setting; `large` doubles both.
    pub fn sparse_shape(&self) -> (usize, usize) {
        if self.setting == "large" {
            (2 * self.sparse.m, 2 * self.sparse.n)
        } else {
            (self.sparse.m, self.sparse.n)
        }
    }

    /// Activation of the MLP used at evaluation time (training always uses sigmoid).
    pub fn mlp_eval_activation(&self) -> Activation {
        if self.setting == "relu" {
            Activation::Relu
        } else {
            Activation::Sigmoid
        }
    }
}

fn split_list(s: &str) -> impl Iterator<Item = &str> {
    s.split(',').map(str::trim).filter(|p| !p.is_empty())
}

trait ConfigValue: Sized {
    fn parse_config(s: &str) -> Option<Self>;
}

macro_rules! from_str_value {
    ($($t:ty),*) => {
        $( impl ConfigValue for $t {
            fn parse_config(s: &str) -> Option<Self> {
                s.parse().ok()
            }
        } )*
    };
}

from_str_value!(usize, u64, f64);

impl ConfigValue for bool {
    fn parse_config(s: &str) -> Option<Self> {
        match s {
            "true" | "yes" | "1" => Some(true),
            "false" | "no" | "0" => Some(false),
            _ => None,
        }
    }
}

impl ConfigValue for Testbed {
    fn parse_config(s: &str) -> Option<Self> {
        s.parse().ok()
    }
}

fn parse_value<T: ConfigValue>(section: &str, key: &str, s: &str) -> Result<T> {
    T::parse_config(s).ok_or_else(|| Error::Config(format!("[{section}] {key}: cannot parse {s:?}")))
}

/// `[section]` → key → (value, line number).
struct RawConfig {
    entries: BTreeMap<(String, String), (String, usize)>,
}

impl RawConfig {
    fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        let mut section = String::from("experiment");
        for (no, line) in text.lines().enumerate() {
            let no = no + 1;
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| Error::Config(format!("line {no}: unterminated section header")))?;
                section = name.trim().to_string();
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {no}: expected `key = value`")))?;
            let key = (section.clone(), key.trim().to_string());
            if entries.contains_key(&key) {
                return Err(Error::Config(format!("line {no}: [{}] {} given twice", key.0, key.1)));
            }
            entries.insert(key, (value.trim().to_string(), no));
        }
        Ok(Self { entries })
    }

    fn take_str(&mut self, section: &str, key: &str) -> Option<String> {
        self.entries.remove(&(section.to_string(), key.to_string())).map(|(v, _)| v)
    }

    fn take<T: ConfigValue>(&mut self, section: &str, key: &str) -> Result<Option<T>> {
        match self.entries.remove(&(section.to_string(), key.to_string())) {
            None => Ok(None),
            Some((v, no)) => T::parse_config(&v)
                .map(Some)
                .ok_or_else(|| Error::Config(format!("line {no}: [{section}] {key}: cannot parse {v:?}"))),
        }
    }

    fn reject_leftovers(&self) -> Result<()> {
        match self.entries.iter().min_by_key(|(_, (_, no))| *no) {
            None => Ok(()),
            Some(((section, key), (_, no))) => Err(Error::Config(format!("line {no}: unknown key [{section}] {key}"))),
        }
    }
}
