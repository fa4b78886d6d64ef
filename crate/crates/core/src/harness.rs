//! Experiment drivers: offline multitask evaluation, lifelong problem
//! streams, mixture-strategy ablations and replay-vs-retrain, plus metrics
//! tables, aggregates and visualization dumps.

use crate::diffusion::{DiffusionConfig, DiffusionSampler, ModelSpec, TrainingSet};
use crate::domains::{
    gen_problem, gen_viz_dataset, l_container_state, push_block_state, viz_bounds, viz_features, DomainError,
    DomainKind, Horizon, Problem, VizRecord,
};
use crate::lifelong::{harvest, update, ExperienceStore, StoreError, UpdateScheme};
use crate::nn::{Checkpoint, NnError, TrainConfig};
use crate::planner::{plan_states, sesame, Outcome, PlanResult, PlannerConfig, SkeletonCache, UniformSampler};
use crate::samplers::{
    action_features, compute_guess_tables, AuxTarget, BankSampler, ComponentClassifier, ComponentLabel,
    GuessTables, MethodComponents, MixtureStrategy, SamplerBank, SamplerError, StepRecord, COMPONENTS,
};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

// ---------------------------------------------------------------------------
// Configuration types

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Offline,
    Lifelong,
    Ablation,
    ReplayVsRetrain,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Offline => "offline",
            Mode::Lifelong => "lifelong",
            Mode::Ablation => "ablation",
            Mode::ReplayVsRetrain => "replay_vs_retrain",
        }
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        [Mode::Offline, Mode::Lifelong, Mode::Ablation, Mode::ReplayVsRetrain]
            .into_iter()
            .find(|m| m.name() == s.to_ascii_lowercase().replace('-', "_"))
            .ok_or_else(|| format!("unknown mode `{s}`"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Specialized,
    PerDomainGeneric,
    CrossDomainGeneric,
    PerDomainMixture,
    CrossDomainMixture,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Specialized,
        Method::PerDomainGeneric,
        Method::CrossDomainGeneric,
        Method::PerDomainMixture,
        Method::CrossDomainMixture,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Specialized => "specialized",
            Method::PerDomainGeneric => "per_domain_generic",
            Method::CrossDomainGeneric => "cross_domain_generic",
            Method::PerDomainMixture => "per_domain_mixture",
            Method::CrossDomainMixture => "cross_domain_mixture",
        }
    }

    pub fn components(self) -> MethodComponents {
        let (generic, specialized, mixture) = match self {
            Method::Specialized => (false, true, false),
            Method::PerDomainGeneric | Method::CrossDomainGeneric => (true, false, false),
            Method::PerDomainMixture | Method::CrossDomainMixture => (true, true, true),
        };
        MethodComponents {
            generic,
            specialized,
            mixture,
        }
    }

    /// Generic models are trained per domain rather than across domains.
    pub fn per_domain(self) -> bool {
        matches!(self, Method::PerDomainGeneric | Method::PerDomainMixture)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s.to_ascii_lowercase().replace('-', "_"))
            .ok_or_else(|| format!("unknown method `{s}`"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeKind {
    Finetune,
    Retrain,
    Replay,
}

impl SchemeKind {
    pub fn name(self) -> &'static str {
        match self {
            SchemeKind::Finetune => "finetune",
            SchemeKind::Retrain => "retrain",
            SchemeKind::Replay => "replay",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    GeometricAux,
    DistanceOnly,
    Reconstruction,
    UniformMix,
    Proportional,
    Classifier,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 6] = [
        StrategyKind::GeometricAux,
        StrategyKind::DistanceOnly,
        StrategyKind::Reconstruction,
        StrategyKind::UniformMix,
        StrategyKind::Proportional,
        StrategyKind::Classifier,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::GeometricAux => "geometric_aux",
            StrategyKind::DistanceOnly => "distance_only",
            StrategyKind::Reconstruction => "reconstruction",
            StrategyKind::UniformMix => "uniform_mix",
            StrategyKind::Proportional => "proportional",
            StrategyKind::Classifier => "classifier",
        }
    }

    fn needs_observation(self) -> bool {
        matches!(self, StrategyKind::Proportional | StrategyKind::Classifier)
    }
}

/// How offline demonstrations are produced.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DemoSource {
    /// Planning with uniform samplers; successes are harvested.
    UniformPlanning,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub seed: u64,
    pub trials: usize,
    pub methods: Vec<Method>,
    /// Update schemes of lifelong runs.
    pub schemes: Vec<SchemeKind>,
    /// Mixture strategies of ablation runs.
    pub strategies: Vec<StrategyKind>,
    /// Method whose mixture the ablation varies.
    pub ablation_method: Method,
    pub domains: Vec<DomainKind>,
    /// Shuffle the lifelong domain order with each trial's seed.
    pub shuffle_domains: bool,
    pub tasks_per_domain: usize,
    pub update_interval: usize,
    pub n_train: Vec<usize>,
    pub m_test: usize,
    pub demo_source: DemoSource,
    /// Sample budget when planning demonstrations.
    pub demo_budget: usize,
    pub planner: PlannerConfig,
    pub diffusion: DiffusionConfig,
    /// Replay adaptation epochs per update.
    pub replay_epochs: usize,
    /// Samples drawn per model call during planning.
    pub sample_batch: usize,
    pub guess_draws: usize,
    pub guess_problems: usize,
    /// Training of the component classifier in ablations.
    pub classifier: TrainConfig,
    pub save_checkpoints: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            mode: Mode::Offline,
            seed: 0,
            trials: 5,
            methods: Method::ALL.to_vec(),
            schemes: vec![SchemeKind::Replay],
            strategies: StrategyKind::ALL.to_vec(),
            ablation_method: Method::PerDomainMixture,
            domains: DomainKind::PLANNING.to_vec(),
            shuffle_domains: true,
            tasks_per_domain: 100,
            update_interval: 25,
            n_train: vec![10, 50, 250],
            m_test: 50,
            demo_source: DemoSource::UniformPlanning,
            demo_budget: 10_000,
            planner: PlannerConfig {
                budget: 2_000,
                ..PlannerConfig::default()
            },
            diffusion: DiffusionConfig::default(),
            replay_epochs: crate::lifelong::REPLAY_EPOCHS,
            sample_batch: 16,
            guess_draws: 20_000,
            guess_problems: 50,
            classifier: TrainConfig {
                epochs: 200,
                batch_size: 256,
                learning_rate: 1e-3,
            },
            save_checkpoints: true,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: &str| Err(HarnessError::Config(m.to_string()));
        self.planner.validate().map_err(HarnessError::Config)?;
        if self.trials == 0 {
            return bad("trials must be at least 1");
        }
        if self.domains.is_empty() {
            return bad("domains must not be empty");
        }
        if let Some(d) = self.domains.iter().find(|d| !d.is_planning()) {
            return Err(HarnessError::Config(format!("{d} is not a planning domain")));
        }
        if self.diffusion.train.epochs == 0 || self.diffusion.train.batch_size == 0 {
            return bad("diffusion.train epochs and batch_size must be at least 1");
        }
        if !(self.diffusion.train.learning_rate > 0.0) {
            return bad("diffusion.train.learning_rate must be positive");
        }
        if self.diffusion.steps == 0 {
            return bad("diffusion.steps must be at least 1");
        }
        let (b0, b1) = (self.diffusion.beta_start, self.diffusion.beta_end);
        if !(b0 > 0.0 && b1 >= b0 && b1 < 1.0) {
            return bad("need 0 < beta_start <= beta_end < 1");
        }
        if self.sample_batch == 0 || self.demo_budget == 0 {
            return bad("sample_batch and demo_budget must be at least 1");
        }
        if self.guess_draws < 2 {
            return bad("guess_draws must be at least 2");
        }
        match self.mode {
            Mode::Offline | Mode::Ablation => {
                if self.n_train.is_empty() {
                    return bad("n_train must not be empty");
                }
            }
            Mode::Lifelong | Mode::ReplayVsRetrain => {
                if self.update_interval == 0 || self.tasks_per_domain == 0 {
                    return bad("tasks_per_domain and update_interval must be at least 1");
                }
            }
        }
        match self.mode {
            Mode::Ablation => {
                if self.strategies.is_empty() {
                    return bad("strategies must not be empty");
                }
                if !self.ablation_method.components().mixture {
                    return bad("ablation_method must be a mixture method");
                }
            }
            Mode::Lifelong => {
                if self.schemes.is_empty() || self.methods.is_empty() {
                    return bad("methods and schemes must not be empty");
                }
            }
            _ => {
                if self.methods.is_empty() {
                    return bad("methods must not be empty");
                }
            }
        }
        Ok(())
    }

    pub fn scheme(&self, kind: SchemeKind) -> UpdateScheme {
        match kind {
            SchemeKind::Finetune => UpdateScheme::Finetune,
            SchemeKind::Retrain => UpdateScheme::Retrain,
            SchemeKind::Replay => UpdateScheme::Replay {
                adapt_epochs: self.replay_epochs,
            },
        }
    }
}

// ---------------------------------------------------------------------------
// Seeds

/// Mixes `parts` into `seed` (splitmix64 finalizer per part).
pub fn derive_seed(seed: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(seed, |h, &p| {
        let mut z = (h ^ p).wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    })
}

/// Stable 64-bit tag of a name (FNV-1a).
pub fn tag(name: &str) -> u64 {
    name.bytes()
        .fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3))
}

pub fn trial_seed(seed: u64, trial: usize) -> u64 {
    derive_seed(seed, &[tag("trial"), trial as u64])
}

/// Domain order of a lifelong trial.
pub fn domain_order(cfg: &ExperimentConfig, trial: usize) -> Vec<DomainKind> {
    let mut order = cfg.domains.clone();
    if cfg.shuffle_domains {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(trial_seed(cfg.seed, trial), &[tag("order")]));
        order.shuffle(&mut rng);
    }
    order
}

fn problem_seed(ts: u64, kind: &str, domain: DomainKind, i: usize) -> u64 {
    derive_seed(ts, &[tag(kind), tag(domain.name()), i as u64])
}

// ---------------------------------------------------------------------------
// Metrics

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub trial: usize,
    pub method: String,
    pub scheme: String,
    pub domain: DomainKind,
    pub problem_index: usize,
    pub solved: bool,
    pub samples_used: usize,
}

pub const METRICS_HEADER: &str = "trial,method,scheme,domain,problem_index,solved,samples_used";
/// Scheme column of runs without model updates.
pub const NO_SCHEME: &str = "none";

pub fn metrics_csv(rows: &[MetricsRecord]) -> String {
    let mut s = String::from(METRICS_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.trial, r.method, r.scheme, r.domain, r.problem_index, r.solved, r.samples_used
        ));
    }
    s
}

pub fn parse_metrics_csv(text: &str) -> Result<Vec<MetricsRecord>, String> {
    let mut lines = text.lines();
    if lines.next() != Some(METRICS_HEADER) {
        return Err("missing metrics header".into());
    }
    lines
        .filter(|l| !l.is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 7 {
                return Err(format!("bad metrics row `{l}`"));
            }
            let num = |s: &str| s.parse::<usize>().map_err(|e| format!("`{s}`: {e}"));
            Ok(MetricsRecord {
                trial: num(f[0])?,
                method: f[1].to_string(),
                scheme: f[2].to_string(),
                domain: f[3].parse().map_err(|e: DomainError| e.to_string())?,
                problem_index: num(f[4])?,
                solved: f[5].parse().map_err(|e| format!("`{}`: {e}", f[5]))?,
                samples_used: num(f[6])?,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialTotals {
    pub trial: usize,
    pub solved: usize,
    pub samples: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    /// Trial-averaged cumulative (samples, solved) after each problem, in
    /// presentation order. Shorter trials hold their final totals.
    pub cumulative_curve: Vec<(f64, f64)>,
    /// Total samples over total solved problems, pooled over trials; null
    /// when nothing was solved.
    pub samples_per_solved: Option<f64>,
    pub trials: Vec<TrialTotals>,
}

impl Aggregate {
    pub fn trial(&self, t: usize) -> Option<&TrialTotals> {
        self.trials.iter().find(|x| x.trial == t)
    }

    /// Samples per solved problem within one trial.
    pub fn trial_samples_per_solved(&self, t: usize) -> Option<f64> {
        self.trial(t)
            .filter(|x| x.solved > 0)
            .map(|x| x.samples as f64 / x.solved as f64)
    }
}

/// Aggregate key of a row: the method, suffixed with `+scheme` for runs
/// with updates.
pub fn series_key(r: &MetricsRecord) -> String {
    if r.scheme == NO_SCHEME {
        r.method.clone()
    } else {
        format!("{}+{}", r.method, r.scheme)
    }
}

pub fn aggregate(rows: &[MetricsRecord]) -> BTreeMap<String, Aggregate> {
    let mut by_key: BTreeMap<String, BTreeMap<usize, Vec<&MetricsRecord>>> = BTreeMap::new();
    for r in rows {
        by_key.entry(series_key(r)).or_default().entry(r.trial).or_default().push(r);
    }
    by_key
        .into_iter()
        .map(|(key, trials)| {
            let len = trials.values().map(|v| v.len()).max().unwrap_or(0);
            let mut curve = vec![(0.0, 0.0); len];
            let mut totals = Vec::new();
            for (&t, rs) in &trials {
                let (mut samples, mut solved) = (0usize, 0usize);
                for (i, c) in curve.iter_mut().enumerate() {
                    if let Some(r) = rs.get(i) {
                        samples += r.samples_used;
                        solved += r.solved as usize;
                    }
                    c.0 += samples as f64;
                    c.1 += solved as f64;
                }
                totals.push(TrialTotals { trial: t, solved, samples });
            }
            let n = trials.len() as f64;
            for c in &mut curve {
                c.0 /= n;
                c.1 /= n;
            }
            let (samples, solved) = totals.iter().fold((0, 0), |a, t| (a.0 + t.samples, a.1 + t.solved));
            let agg = Aggregate {
                cumulative_curve: curve,
                samples_per_solved: (solved > 0).then(|| samples as f64 / solved as f64),
                trials: totals,
            };
            (key, agg)
        })
        .collect()
}

/// Metrics of one evaluation setting; offline and ablation runs produce one
/// table per training-set size.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsTable {
    pub n_train: Option<usize>,
    pub rows: Vec<MetricsRecord>,
}

impl MetricsTable {
    /// Directory of the table relative to the run directory.
    pub fn subdir(&self) -> Option<String> {
        self.n_train.map(|n| format!("n_train_{n}"))
    }
}

pub fn write_tables(out: &Path, tables: &[MetricsTable]) -> Result<(), HarnessError> {
    for t in tables {
        let dir = match t.subdir() {
            Some(s) => out.join(s),
            None => out.to_path_buf(),
        };
        fs::create_dir_all(&dir)?;
        fs::write(dir.join("metrics.csv"), metrics_csv(&t.rows))?;
        let agg = serde_json::to_string_pretty(&aggregate(&t.rows)).expect("aggregates serialize");
        fs::write(dir.join("aggregates.json"), agg)?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Runner

/// Shared state of one experiment run.
pub struct Runner<'a> {
    pub cfg: &'a ExperimentConfig,
    pub guess: GuessTables,
    /// Run directory; metrics are rewritten after every trial.
    pub out: Option<PathBuf>,
    pub verbose: bool,
    cache: SkeletonCache,
    started: std::time::Instant,
}

fn plan_with(
    problem: &Problem,
    bank: &SamplerBank,
    method: MethodComponents,
    strategy: &MixtureStrategy,
    guess: &GuessTables,
    cfg: &ExperimentConfig,
    cache: &mut SkeletonCache,
    seed: u64,
) -> PlanResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sampler = BankSampler::new(bank, method, strategy, guess, problem.domain, cfg.sample_batch);
    sesame(problem, &mut sampler, &cfg.planner, cache, &mut rng)
}

/// Learned models of one offline setting, composed into per-method banks.
#[derive(Default)]
struct ModelPool {
    specialized: SamplerBank,
    cross: SamplerBank,
    per_domain: BTreeMap<DomainKind, SamplerBank>,
}

impl ModelPool {
    fn fit(
        methods: &[Method],
        demos: &BTreeMap<DomainKind, Vec<StepRecord>>,
        aux: AuxTarget,
        cfg: &DiffusionConfig,
        seed: u64,
    ) -> Self {
        let only = |generic, specialized| MethodComponents {
            generic,
            specialized,
            mixture: false,
        };
        let all: Vec<StepRecord> = demos.values().flatten().cloned().collect();
        let mut pool = ModelPool::default();
        if methods.iter().any(|m| m.components().specialized) {
            pool.specialized = SamplerBank::fit(&all, only(false, true), aux, cfg, derive_seed(seed, &[tag("specialized")]));
        }
        if methods.iter().any(|m| m.components().generic && !m.per_domain()) {
            pool.cross = SamplerBank::fit(&all, only(true, false), aux, cfg, derive_seed(seed, &[tag("cross")]));
        }
        if methods.iter().any(|m| m.components().generic && m.per_domain()) {
            for (d, recs) in demos {
                let s = derive_seed(seed, &[tag("per_domain"), tag(d.name())]);
                pool.per_domain.insert(*d, SamplerBank::fit(recs, only(true, false), aux, cfg, s));
            }
        }
        pool
    }

    fn bank(&self, method: Method, domain: DomainKind) -> SamplerBank {
        let c = method.components();
        let mut bank = SamplerBank::bootstrap();
        if c.generic {
            let src = if method.per_domain() {
                self.per_domain.get(&domain)
            } else {
                Some(&self.cross)
            };
            if let Some(b) = src {
                bank.generic = b.generic.clone();
            }
        }
        if c.specialized {
            bank.specialized = self
                .specialized
                .specialized
                .iter()
                .filter(|(sig, _)| sig.object_types.iter().all(|t| domain_has_type(domain, *t)))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect();
        }
        bank
    }

    fn save(&self, dir: &Path) -> Result<(), HarnessError> {
        if !self.specialized.is_empty() {
            self.specialized.save(&dir.join("specialized"))?;
        }
        if !self.cross.is_empty() {
            self.cross.save(&dir.join("cross_domain_generic"))?;
        }
        for (d, b) in self.per_domain.iter().filter(|(_, b)| !b.is_empty()) {
            b.save(&dir.join(format!("per_domain_generic_{d}")))?;
        }
        Ok(())
    }
}

fn domain_has_type(domain: DomainKind, t: crate::world::ObjectType) -> bool {
    crate::domains::DomainSpec::new(domain)
        .map(|s| s.movable.kind == t || s.container.kind == t)
        .unwrap_or(false)
}

/// Offline evaluation problems and the demonstrations harvested from
/// uniform planning, per domain and problem index.
struct OfflineData {
    demos: BTreeMap<DomainKind, Vec<Vec<StepRecord>>>,
    tests: BTreeMap<DomainKind, Vec<Problem>>,
}

impl OfflineData {
    fn demos_upto(&self, n: usize) -> BTreeMap<DomainKind, Vec<StepRecord>> {
        self.demos
            .iter()
            .map(|(d, per)| (*d, per.iter().take(n).flatten().cloned().collect()))
            .collect()
    }
}

impl<'a> Runner<'a> {
    pub fn new(cfg: &'a ExperimentConfig, guess: GuessTables) -> Self {
        Runner {
            cfg,
            guess,
            out: None,
            verbose: false,
            cache: SkeletonCache::default(),
            started: std::time::Instant::now(),
        }
    }

    fn log(&self, msg: impl AsRef<str>) {
        if self.verbose {
            let t = self.started.elapsed().as_secs_f64();
            eprintln!("[{} {t:8.1}s] {}", self.cfg.mode.name(), msg.as_ref());
        }
    }

    fn checkpoint_dir(&self, parts: &[String]) -> Option<PathBuf> {
        let out = self.out.as_ref().filter(|_| self.cfg.save_checkpoints)?;
        let mut p = out.join("checkpoints");
        for s in parts {
            p.push(s);
        }
        Some(p)
    }

    fn flush(&self, tables: &[MetricsTable]) -> Result<(), HarnessError> {
        if let Some(out) = &self.out {
            write_tables(out, tables)?;
        }
        Ok(())
    }

    pub fn run(&mut self) -> Result<Vec<MetricsTable>, HarnessError> {
        self.cfg.validate()?;
        match self.cfg.mode {
            Mode::Offline => self.run_offline(),
            Mode::Lifelong => self.run_lifelong(&self.cfg.schemes.clone()),
            Mode::Ablation => self.run_ablation(),
            Mode::ReplayVsRetrain => self.run_replay_vs_retrain(),
        }
    }

    fn offline_data(&mut self, trial: usize) -> Result<OfflineData, HarnessError> {
        let cfg = self.cfg;
        let ts = trial_seed(cfg.seed, trial);
        let max_n = cfg.n_train.iter().copied().max().unwrap_or(0);
        let demo_planner = PlannerConfig {
            budget: cfg.demo_budget,
            ..cfg.planner
        };
        let mut data = OfflineData {
            demos: BTreeMap::new(),
            tests: BTreeMap::new(),
        };
        for &d in &cfg.domains {
            let mut per = Vec::with_capacity(max_n);
            for i in 0..max_n {
                let seed = problem_seed(ts, "demo", d, i);
                let p = gen_problem(d, seed)?;
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[tag("plan")]));
                let r = match cfg.demo_source {
                    DemoSource::UniformPlanning => {
                        sesame(&p, &mut UniformSampler, &demo_planner, &mut self.cache, &mut rng)
                    }
                };
                per.push(harvest(&r, &p, i));
            }
            let solved = per.iter().filter(|r| !r.is_empty()).count();
            self.log(format!("trial {trial}: {d} demos solved {solved}/{max_n}"));
            data.demos.insert(d, per);
            let tests = (0..cfg.m_test)
                .map(|i| gen_problem(d, problem_seed(ts, "test", d, i)))
                .collect::<Result<Vec<_>, _>>()?;
            data.tests.insert(d, tests);
        }
        Ok(data)
    }

    /// Plans every test problem of every domain with `bank_of(domain)`.
    #[allow(clippy::too_many_arguments)]
    fn evaluate(
        &mut self,
        data: &OfflineData,
        trial: usize,
        label: &str,
        method: MethodComponents,
        strategy: &MixtureStrategy,
        bank_of: &dyn Fn(DomainKind) -> SamplerBank,
        mut observe: Option<&mut dyn FnMut(&Problem, &PlanResult)>,
    ) -> Vec<MetricsRecord> {
        let cfg = self.cfg;
        let ts = trial_seed(cfg.seed, trial);
        let mut rows = Vec::new();
        for (&d, tests) in &data.tests {
            let bank = bank_of(d);
            for (i, p) in tests.iter().enumerate() {
                let seed = derive_seed(problem_seed(ts, "test", d, i), &[tag("plan")]);
                let r = plan_with(p, &bank, method, strategy, &self.guess, cfg, &mut self.cache, seed);
                if let Some(f) = observe.as_mut() {
                    f(p, &r);
                }
                rows.push(MetricsRecord {
                    trial,
                    method: label.to_string(),
                    scheme: NO_SCHEME.into(),
                    domain: d,
                    problem_index: i,
                    solved: r.solved(),
                    samples_used: r.samples_used,
                });
            }
        }
        let solved = rows.iter().filter(|r| r.solved).count();
        self.log(format!("trial {trial}: {label} solved {solved}/{}", rows.len()));
        rows
    }

    /// Fits every method once on fixed uniform-planning demonstrations per
    /// training-set size, then evaluates on fresh test problems.
    pub fn run_offline(&mut self) -> Result<Vec<MetricsTable>, HarnessError> {
        let cfg = self.cfg;
        let mut tables: Vec<MetricsTable> = cfg
            .n_train
            .iter()
            .map(|&n| MetricsTable {
                n_train: Some(n),
                rows: Vec::new(),
            })
            .collect();
        for trial in 0..cfg.trials {
            let ts = trial_seed(cfg.seed, trial);
            let data = self.offline_data(trial)?;
            for (k, &n) in cfg.n_train.iter().enumerate() {
                let demos = data.demos_upto(n);
                let seed = derive_seed(ts, &[tag("fit"), n as u64]);
                let pool = ModelPool::fit(&cfg.methods, &demos, AuxTarget::Geometric, &cfg.diffusion, seed);
                self.log(format!("trial {trial}: fitted models on n_train={n}"));
                if let Some(dir) = self.checkpoint_dir(&[format!("trial_{trial}"), format!("n_train_{n}")]) {
                    pool.save(&dir)?;
                }
                for &m in &cfg.methods {
                    let rows = self.evaluate(
                        &data,
                        trial,
                        m.name(),
                        m.components(),
                        &MixtureStrategy::GeometricAux,
                        &|d| pool.bank(m, d),
                        None,
                    );
                    tables[k].rows.extend(rows);
                }
            }
            self.flush(&tables)?;
        }
        Ok(tables)
    }

    /// Offline protocol for the ablation method with the mixture strategy
    /// varied. Proportional and Classifier are built from a uniform-mixture
    /// observation pass over the test problems.
    pub fn run_ablation(&mut self) -> Result<Vec<MetricsTable>, HarnessError> {
        let cfg = self.cfg;
        let method = cfg.ablation_method;
        let mut tables: Vec<MetricsTable> = cfg
            .n_train
            .iter()
            .map(|&n| MetricsTable {
                n_train: Some(n),
                rows: Vec::new(),
            })
            .collect();
        let needs_recon = cfg.strategies.contains(&StrategyKind::Reconstruction);
        let needs_obs = cfg.strategies.iter().any(|s| s.needs_observation());
        for trial in 0..cfg.trials {
            let ts = trial_seed(cfg.seed, trial);
            let data = self.offline_data(trial)?;
            for (k, &n) in cfg.n_train.iter().enumerate() {
                let demos = data.demos_upto(n);
                let seed = derive_seed(ts, &[tag("fit"), n as u64]);
                let geo = ModelPool::fit(&[method], &demos, AuxTarget::Geometric, &cfg.diffusion, seed);
                let recon = if needs_recon {
                    ModelPool::fit(&[method], &demos, AuxTarget::Reconstruction, &cfg.diffusion, seed)
                } else {
                    ModelPool::default()
                };
                self.log(format!("trial {trial}: fitted ablation models on n_train={n}"));
                let comps = method.components();
                let mut uniform_rows = None;
                let mut counts = [0usize; COMPONENTS];
                let mut labels = Vec::new();
                if needs_obs || cfg.strategies.contains(&StrategyKind::UniformMix) {
                    let mut observe = |p: &Problem, r: &PlanResult| observe_components(p, r, &mut counts, &mut labels);
                    let rows = self.evaluate(
                        &data,
                        trial,
                        StrategyKind::UniformMix.name(),
                        comps,
                        &MixtureStrategy::UniformMix,
                        &|d| geo.bank(method, d),
                        Some(&mut observe),
                    );
                    uniform_rows = Some(rows);
                }
                for &s in &cfg.strategies {
                    let strategy = match s {
                        StrategyKind::UniformMix => {
                            tables[k].rows.extend(uniform_rows.clone().expect("observation pass ran"));
                            continue;
                        }
                        StrategyKind::GeometricAux => MixtureStrategy::GeometricAux,
                        StrategyKind::DistanceOnly => MixtureStrategy::DistanceOnly,
                        StrategyKind::Reconstruction => MixtureStrategy::Reconstruction,
                        StrategyKind::Proportional => MixtureStrategy::proportional(counts).unwrap_or(
                            MixtureStrategy::Proportional {
                                weights: [1.0 / COMPONENTS as f64; COMPONENTS],
                            },
                        ),
                        StrategyKind::Classifier => MixtureStrategy::Classifier(ComponentClassifier::fit(
                            &labels,
                            &cfg.classifier,
                            derive_seed(seed, &[tag("classifier")]),
                        )?),
                    };
                    let pool = if s == StrategyKind::Reconstruction { &recon } else { &geo };
                    let rows = self.evaluate(&data, trial, s.name(), comps, &strategy, &|d| pool.bank(method, d), None);
                    tables[k].rows.extend(rows);
                }
            }
            self.flush(&tables)?;
        }
        Ok(tables)
    }

    /// Streams each domain's problems in turn (order shuffled per trial),
    /// recording metrics before any training on a problem and updating the
    /// models every `update_interval` problems.
    pub fn run_lifelong(&mut self, schemes: &[SchemeKind]) -> Result<Vec<MetricsTable>, HarnessError> {
        let cfg = self.cfg;
        let mut table = vec![MetricsTable {
            n_train: None,
            rows: Vec::new(),
        }];
        for trial in 0..cfg.trials {
            let ts = trial_seed(cfg.seed, trial);
            let order = domain_order(cfg, trial);
            self.log(format!(
                "trial {trial}: domain order {}",
                order.iter().map(|d| d.name()).collect::<Vec<_>>().join(",")
            ));
            let mut stream = Vec::new();
            for &d in &order {
                for i in 0..cfg.tasks_per_domain {
                    stream.push(gen_problem(d, problem_seed(ts, "stream", d, i))?);
                }
            }
            for &m in &cfg.methods {
                for &sk in schemes {
                    let rows = self.lifelong_series(trial, &stream, m, sk)?;
                    table[0].rows.extend(rows);
                }
            }
            self.flush(&table)?;
        }
        Ok(table)
    }

    fn lifelong_series(
        &mut self,
        trial: usize,
        stream: &[Problem],
        method: Method,
        kind: SchemeKind,
    ) -> Result<Vec<MetricsRecord>, HarnessError> {
        let cfg = self.cfg;
        let ts = trial_seed(cfg.seed, trial);
        let scheme = cfg.scheme(kind);
        let comps = method.components();
        let strategy = MixtureStrategy::GeometricAux;
        let key = |d: DomainKind| method.per_domain().then_some(d);
        let mut learners: BTreeMap<Option<DomainKind>, (SamplerBank, ExperienceStore)> = BTreeMap::new();
        let mut pending: Vec<StepRecord> = Vec::new();
        let mut rows = Vec::with_capacity(stream.len());
        for (k, p) in stream.iter().enumerate() {
            let (bank, _) = learners.entry(key(p.domain)).or_default();
            let seed = derive_seed(ts, &[tag("stream_plan"), k as u64]);
            let r = plan_with(p, bank, comps, &strategy, &self.guess, cfg, &mut self.cache, seed);
            rows.push(MetricsRecord {
                trial,
                method: method.name().into(),
                scheme: kind.name().into(),
                domain: p.domain,
                problem_index: k,
                solved: r.solved(),
                samples_used: r.samples_used,
            });
            pending.extend(harvest(&r, p, k));
            if (k + 1) % cfg.update_interval == 0 && !pending.is_empty() {
                let mut groups: BTreeMap<Option<DomainKind>, Vec<StepRecord>> = BTreeMap::new();
                for r in pending.drain(..) {
                    groups.entry(key(r.domain)).or_default().push(r);
                }
                for (g, recs) in groups {
                    let (bank, store) = learners.entry(g).or_default();
                    let seed = derive_seed(ts, &[tag(method.name()), tag(kind.name()), k as u64]);
                    update(bank, store, &recs, scheme, comps, AuxTarget::Geometric, &cfg.diffusion, seed)?;
                }
                let solved = rows.iter().filter(|r| r.solved).count();
                self.log(format!(
                    "trial {trial}: {method}+{} after {} problems: solved {solved}",
                    kind.name(),
                    k + 1
                ));
            }
        }
        if let Some(dir) = self.checkpoint_dir(&[format!("trial_{trial}"), format!("{method}+{}", kind.name())]) {
            for (g, (bank, store)) in &learners {
                let sub = g.map(|d| d.name().to_string()).unwrap_or_else(|| "all".into());
                bank.save(&dir.join(&sub).join("bank"))?;
                store.save(&dir.join(&sub).join("store"))?;
            }
        }
        Ok(rows)
    }

    /// Lifelong protocol with Replay and Retrain on identical streams.
    pub fn run_replay_vs_retrain(&mut self) -> Result<Vec<MetricsTable>, HarnessError> {
        self.run_lifelong(&[SchemeKind::Replay, SchemeKind::Retrain])
    }
}

/// Counts which component supplied each accepted step of a solved plan and
/// labels the step's conditioning features with it.
fn observe_components(
    p: &Problem,
    r: &PlanResult,
    counts: &mut [usize; COMPONENTS],
    labels: &mut Vec<ComponentLabel>,
) {
    let Outcome::Solved { skeleton, params } = &r.outcome else {
        return;
    };
    let Some(states) = plan_states(p, skeleton, params) else {
        return;
    };
    for ((a, c), s) in skeleton.iter().zip(&r.components).zip(&states) {
        if let Some(c) = *c {
            counts[c] += 1;
            labels.push(ComponentLabel {
                controller: a.controller(),
                x: action_features(s, a),
                component: c,
            });
        }
    }
}

/// Random-guess tables loaded from `path` when present, otherwise computed
/// from the config and saved there.
pub fn load_or_compute_guess(cfg: &ExperimentConfig, path: Option<&Path>) -> Result<GuessTables, HarnessError> {
    if let Some(p) = path.filter(|p| p.exists()) {
        let t = GuessTables::load(p)?;
        if cfg.domains.iter().all(|d| t.tables.contains_key(d.name())) {
            return Ok(t);
        }
    }
    let t = compute_guess_tables(
        &cfg.domains,
        cfg.guess_draws,
        cfg.guess_problems,
        derive_seed(cfg.seed, &[tag("guess")]),
    )?;
    if let Some(p) = path {
        if let Some(dir) = p.parent() {
            fs::create_dir_all(dir)?;
        }
        t.save(p)?;
    }
    Ok(t)
}

// ---------------------------------------------------------------------------
// Visualization

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VizConfig {
    /// Observed examples used for training.
    pub n_data: usize,
    /// Rows per emitted file.
    pub n_samples: usize,
    pub seed: u64,
    pub diffusion: DiffusionConfig,
}

impl Default for VizConfig {
    fn default() -> Self {
        VizConfig {
            n_data: 5_000,
            n_samples: 1_000,
            seed: 0,
            diffusion: DiffusionConfig::default(),
        }
    }
}

/// Observed and learned (state, φ) records of one horizon.
#[derive(Clone, Debug, PartialEq)]
pub struct VizPanel {
    pub horizon: Horizon,
    pub observed: Vec<VizRecord>,
    pub learned: Vec<VizRecord>,
    /// Whether the model was loaded from an existing checkpoint.
    pub cached: bool,
}

fn viz_state(kind: DomainKind, rng: &mut ChaCha8Rng) -> crate::world::WorldState {
    match kind {
        DomainKind::PushBlock => push_block_state(rng),
        _ => l_container_state(),
    }
}

pub fn viz_spec(kind: DomainKind) -> ModelSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let bounds = viz_bounds(kind);
    ModelSpec {
        cond_dim: viz_features(kind, &viz_state(kind, &mut rng)).len(),
        param_dim: bounds.len(),
        aux_dim: 0,
        bounds,
    }
}

/// Fits a visualization model on observed records.
pub fn fit_viz_model(kind: DomainKind, data: &[VizRecord], cfg: &DiffusionConfig, seed: u64) -> DiffusionSampler {
    let mut t = TrainingSet::default();
    for r in data {
        t.push(viz_features(kind, &r.state), r.phi.clone(), Vec::new());
    }
    DiffusionSampler::fit(viz_spec(kind), &t, cfg, seed).0
}

/// Draws one learned φ per fresh domain state.
pub fn sample_viz(kind: DomainKind, model: &DiffusionSampler, n: usize, seed: u64) -> Vec<VizRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let state = viz_state(kind, &mut rng);
            let phi = model.sample(&viz_features(kind, &state), 1, &mut rng).remove(0);
            VizRecord { state, phi }
        })
        .collect()
}

fn write_jsonl(path: &Path, rows: &[VizRecord]) -> Result<(), HarnessError> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    for r in rows {
        writeln!(f, "{}", serde_json::to_string(r).expect("viz record serializes"))?;
    }
    f.flush()?;
    Ok(())
}

pub fn viz_file(kind: DomainKind, horizon: Horizon, learned: bool) -> String {
    format!(
        "{}_{}_{}.jsonl",
        kind.name(),
        horizon.name(),
        if learned { "learned" } else { "observed" }
    )
}

/// Writes observed and learned sample files for each horizon into `out`,
/// training each horizon's model unless `out/models` already holds it.
pub fn dump_viz(
    kind: DomainKind,
    horizons: &[Horizon],
    cfg: &VizConfig,
    out: &Path,
) -> Result<Vec<VizPanel>, HarnessError> {
    if kind.is_planning() {
        return Err(DomainError::NotVisualization(kind).into());
    }
    let models = out.join("models");
    fs::create_dir_all(&models)?;
    let mut panels = Vec::new();
    for &h in horizons {
        let seed = derive_seed(cfg.seed, &[tag(kind.name()), tag(h.name())]);
        let observed = gen_viz_dataset(kind, h, cfg.n_data.max(cfg.n_samples), seed)?;
        let ckpt = models.join(format!("{}_{}.ckpt", kind.name(), h.name()));
        let (model, cached) = if ckpt.exists() {
            (DiffusionSampler::from_checkpoint(&Checkpoint::load(&ckpt)?)?, true)
        } else {
            let m = fit_viz_model(kind, &observed[..cfg.n_data], &cfg.diffusion, seed);
            m.checkpoint(serde_json::json!({"kind": kind, "horizon": h})).save(&ckpt)?;
            (m, false)
        };
        let learned = sample_viz(kind, &model, cfg.n_samples, derive_seed(seed, &[tag("samples")]));
        let observed: Vec<VizRecord> = observed.into_iter().take(cfg.n_samples).collect();
        write_jsonl(&out.join(viz_file(kind, h, false)), &observed)?;
        write_jsonl(&out.join(viz_file(kind, h, true)), &learned)?;
        panels.push(VizPanel {
            horizon: h,
            observed,
            learned,
            cached,
        });
    }
    Ok(panels)
}

/// Fraction of push-domain records whose φ lies in the analytic success
/// region of its state.
pub fn push_region_fraction(records: &[VizRecord]) -> f64 {
    let hits = records
        .iter()
        .filter(|r| crate::domains::push_success_region(&r.state, &r.phi))
        .count();
    hits as f64 / records.len().max(1) as f64
}
