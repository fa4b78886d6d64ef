//! The sampler hierarchy: generic and specialized diffusion models with
//! auxiliary predictors, a uniform fallback, and the strategies that mix
//! them into one parameter proposal per planner draw.

use crate::diffusion::{DiffusionConfig, DiffusionSampler, ModelSpec, TrainingSet};
use crate::domains::{gen_problem, DomainKind};
use crate::geom::{nearest_boundary_point, Vec2};
use crate::nn::{train, Adam, BatchSchedule, Checkpoint, Mlp, NnError, Normalizer, Objective, TrainConfig, Workspace};
use crate::planner::{uniform_params, Draw, ParamSampler, StepContext};
use crate::world::{
    gripper_tip, navigation_pose, placement_rect, ControllerKind, GroundAbstractAction, ObjectType, WorldState,
    OBJECT_FEATURES, ROBOT_FEATURES,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::path::Path;

/// Mixture component indices.
pub const GENERIC: usize = 0;
pub const UNIFORM: usize = 1;
pub const SPECIALIZED: usize = 2;
pub const COMPONENTS: usize = 3;

/// Reliability assigned when a predictor's normalized error is zero.
pub const RHO_MAX: f64 = 1e6;

#[derive(Debug, thiserror::Error)]
pub enum SamplerError {
    #[error("strategy needs the outcome of a uniform-mixture observation pass")]
    MissingObservationPass,
    #[error("no random-guess table for {domain}/{controller}")]
    MissingGuessTable { domain: String, controller: String },
    #[error("bank: {0}")]
    Bank(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

// ---------------------------------------------------------------------------
// Signatures and features

/// Discrete identity of an abstract action: the controller and the types of
/// the objects it acts on.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TypeSignature {
    pub controller: ControllerKind,
    pub object_types: Vec<ObjectType>,
}

impl TypeSignature {
    pub fn of(s: &WorldState, action: &GroundAbstractAction) -> Self {
        TypeSignature {
            controller: action.controller(),
            object_types: action
                .controller_objects()
                .iter()
                .map(|id| s.object(id).expect("bound object exists").kind)
                .collect(),
        }
    }

    /// File-name friendly key, e.g. `Place_book_shelf`.
    pub fn key(&self) -> String {
        let mut k = self.controller.name().to_string();
        for t in &self.object_types {
            k.push('_');
            k.push_str(t.name());
        }
        k
    }
}

impl fmt::Display for TypeSignature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = self.object_types.iter().map(|t| t.name()).collect();
        write!(f, "{}({})", self.controller.name(), names.join(","))
    }
}

/// Length of the conditioning vector for a controller.
pub fn cond_dim(controller: ControllerKind) -> usize {
    match controller {
        ControllerKind::NavigateTo | ControllerKind::Pick => OBJECT_FEATURES + ROBOT_FEATURES,
        ControllerKind::Place => 4 + OBJECT_FEATURES + ROBOT_FEATURES,
    }
}

/// Conditioning features of the objects bound to the controller: the target
/// and the robot for navigation and grasping; the held object's shape, the
/// container and the robot for placement.
pub fn cond_features(s: &WorldState, objs: &[&str], controller: ControllerKind) -> Vec<f64> {
    let obj = |i: usize| s.object(objs[i]).expect("bound object exists");
    let mut x = Vec::with_capacity(cond_dim(controller));
    match controller {
        ControllerKind::NavigateTo | ControllerKind::Pick => x.extend(obj(0).features()),
        ControllerKind::Place => {
            x.extend(obj(0).shape_features());
            x.extend(obj(1).features());
        }
    }
    x.extend(s.robot.features());
    x
}

pub fn action_features(s: &WorldState, action: &GroundAbstractAction) -> Vec<f64> {
    cond_features(s, &action.controller_objects(), action.controller())
}

/// Length of the auxiliary signal vector for a controller.
pub fn aux_dim(controller: ControllerKind) -> usize {
    match controller {
        ControllerKind::NavigateTo => 8,
        ControllerKind::Pick | ControllerKind::Place => 4,
    }
}

/// Intended geometric effects of running the controller with `phi`,
/// computed analytically without checking validity.
///
/// * NavigateTo: distance from the commanded position to the target's
///   boundary, that boundary point in the target frame, the position in the
///   world and target frames, and the commanded heading.
/// * Pick: gripper tip in the world and target frames.
/// * Place: released object's center in the world and container frames.
pub fn aux_signals(controller: ControllerKind, s: &WorldState, objs: &[&str], phi: &[f64]) -> Vec<f64> {
    let obj = |i: usize| s.object(objs[i]).expect("bound object exists");
    match controller {
        ControllerKind::NavigateTo => {
            let target = obj(0);
            let pose = navigation_pose(target, phi);
            let (bp, dist) = nearest_boundary_point(pose.position, &target.rect);
            let bl = target.rect.to_local(bp);
            let pl = target.rect.to_local(pose.position);
            vec![dist, bl.x, bl.y, pose.position.x, pose.position.y, pl.x, pl.y, pose.theta]
        }
        ControllerKind::Pick => {
            let target = obj(0);
            let pose = &s.robot.pose;
            let tip = gripper_tip(pose, phi[0], pose.theta + phi[1]);
            let l = target.rect.to_local(tip);
            vec![tip.x, tip.y, l.x, l.y]
        }
        ControllerKind::Place => {
            let rect = placement_rect(&s.robot.pose, obj(0), phi[0]);
            let l = obj(1).rect.to_local(rect.center);
            vec![rect.center.x, rect.center.y, l.x, l.y]
        }
    }
}

/// The single "distance to target" signal derived from a signal vector:
/// the boundary distance for navigation, and the distance of the gripper tip
/// or released center from the target's center otherwise.
pub fn distance_signal(controller: ControllerKind, z: &[f64]) -> f64 {
    match controller {
        ControllerKind::NavigateTo => z[0],
        ControllerKind::Pick | ControllerKind::Place => Vec2::new(z[2], z[3]).norm(),
    }
}

// ---------------------------------------------------------------------------
// Random-guess tables

/// Root-mean-square error of guessing each quantity with an independent
/// draw of it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GuessEntry {
    pub signals: Vec<f64>,
    pub distance: f64,
    pub features: Vec<f64>,
}

pub const GUESS_TABLE_VERSION: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GuessTables {
    pub version: u32,
    pub draws: usize,
    /// Keyed by domain name, then controller name.
    pub tables: BTreeMap<String, BTreeMap<String, GuessEntry>>,
}

impl GuessTables {
    pub fn get(&self, domain: DomainKind, controller: ControllerKind) -> Result<&GuessEntry, SamplerError> {
        self.tables
            .get(domain.name())
            .and_then(|t| t.get(controller.name()))
            .ok_or_else(|| SamplerError::MissingGuessTable {
                domain: domain.name().into(),
                controller: controller.name().into(),
            })
    }

    pub fn save(&self, path: &Path) -> Result<(), SamplerError> {
        fs::write(path, serde_json::to_string_pretty(self).expect("tables serialize"))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, SamplerError> {
        let t: GuessTables =
            serde_json::from_str(&fs::read_to_string(path)?).map_err(|e| SamplerError::Bank(e.to_string()))?;
        if t.version != GUESS_TABLE_VERSION {
            return Err(SamplerError::Bank(format!("random-guess table version {}", t.version)));
        }
        Ok(t)
    }
}

/// One uniformly drawn `(s, φ)` for a controller in a problem state: the
/// robot is first moved by a uniform navigation to the bound target, then
/// the controller's parameters are drawn uniformly.
fn uniform_situation(
    s: &WorldState,
    controller: ControllerKind,
    rng: &mut ChaCha8Rng,
) -> (WorldState, Vec<String>, Vec<f64>) {
    let movables: Vec<&str> = s.movables().map(|o| o.id.as_str()).collect();
    let containers: Vec<&str> = s.containers().map(|o| o.id.as_str()).collect();
    let mut state = s.clone();
    let objs: Vec<String> = match controller {
        ControllerKind::NavigateTo => {
            let all: Vec<&str> = s.objects.iter().map(|o| o.id.as_str()).collect();
            vec![all[rng.random_range(0..all.len())].to_string()]
        }
        ControllerKind::Pick => vec![movables[rng.random_range(0..movables.len())].to_string()],
        ControllerKind::Place => vec![
            movables[rng.random_range(0..movables.len())].to_string(),
            containers[rng.random_range(0..containers.len())].to_string(),
        ],
    };
    if controller != ControllerKind::NavigateTo {
        let nav_target = objs.last().expect("bound object");
        let target = s.object(nav_target).expect("bound object exists");
        let phi = uniform_params(ControllerKind::NavigateTo, rng);
        state.robot.pose = navigation_pose(target, &phi);
    }
    let phi = uniform_params(controller, rng);
    (state, objs, phi)
}

fn paired_rmse(rows: &[Vec<f64>], rng: &mut ChaCha8Rng) -> Vec<f64> {
    let dim = rows.first().map(|r| r.len()).unwrap_or(0);
    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.shuffle(rng);
    let mut acc = vec![0.0; dim];
    for (i, &j) in order.iter().enumerate() {
        for k in 0..dim {
            acc[k] += (rows[i][k] - rows[j][k]).powi(2);
        }
    }
    acc.iter().map(|a| (a / rows.len().max(1) as f64).sqrt()).collect()
}

/// Monte-Carlo random-guess errors for every controller of each domain,
/// from `draws` uniform `(s, φ)` draws spread over `problems` generated
/// problems.
pub fn compute_guess_tables(
    domains: &[DomainKind],
    draws: usize,
    problems: usize,
    seed: u64,
) -> Result<GuessTables, crate::domains::DomainError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = GuessTables {
        version: GUESS_TABLE_VERSION,
        draws,
        tables: BTreeMap::new(),
    };
    let problems = problems.max(1);
    for &domain in domains {
        let states: Vec<WorldState> = (0..problems)
            .map(|i| gen_problem(domain, seed.wrapping_add(1_000_003 * i as u64)).map(|p| p.init))
            .collect::<Result<_, _>>()?;
        let mut table = BTreeMap::new();
        for controller in ControllerKind::ALL {
            let (mut zs, mut ds, mut xs) = (Vec::with_capacity(draws), Vec::with_capacity(draws), Vec::with_capacity(draws));
            for i in 0..draws {
                let (s, objs, phi) = uniform_situation(&states[i % states.len()], controller, &mut rng);
                let ids: Vec<&str> = objs.iter().map(|o| o.as_str()).collect();
                let z = aux_signals(controller, &s, &ids, &phi);
                ds.push(vec![distance_signal(controller, &z)]);
                zs.push(z);
                xs.push(cond_features(&s, &ids, controller));
            }
            table.insert(
                controller.name().to_string(),
                GuessEntry {
                    signals: paired_rmse(&zs, &mut rng),
                    distance: paired_rmse(&ds, &mut rng)[0],
                    features: paired_rmse(&xs, &mut rng),
                },
            );
        }
        out.tables.insert(domain.name().to_string(), table);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Reliability and weights

/// `1 / RMSE` of `pred` against `z` after dividing each error by that
/// signal's random-guess error; signals whose guess error is zero are
/// ignored. Capped at [`RHO_MAX`].
pub fn reliability(pred: &[f64], z: &[f64], guess: &[f64]) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for ((p, t), g) in pred.iter().zip(z).zip(guess) {
        if *g > 1e-12 {
            sum += ((p - t) / g).powi(2);
            n += 1;
        }
    }
    if n == 0 {
        return 1.0;
    }
    let rmse = (sum / n as f64).sqrt();
    if !rmse.is_finite() {
        return 1.0 / RHO_MAX;
    }
    if rmse * RHO_MAX <= 1.0 {
        RHO_MAX
    } else {
        1.0 / rmse
    }
}

/// Weights proportional to the reliabilities.
pub fn mixture_weights(rho: &[f64]) -> Vec<f64> {
    let total: f64 = rho.iter().sum();
    rho.iter().map(|r| r / total).collect()
}

/// Index drawn with probability proportional to `weights`.
pub fn choose(weights: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    let mut last = 0;
    for (i, w) in weights.iter().enumerate() {
        if *w <= 0.0 {
            continue;
        }
        last = i;
        if u < *w {
            return i;
        }
        u -= w;
    }
    last
}

// ---------------------------------------------------------------------------
// Strategies

/// What a model's auxiliary head is trained to predict.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuxTarget {
    /// The controller's geometric signals.
    Geometric,
    /// The conditioning features themselves.
    Reconstruction,
}

impl AuxTarget {
    pub fn dim(self, controller: ControllerKind) -> usize {
        match self {
            AuxTarget::Geometric => aux_dim(controller),
            AuxTarget::Reconstruction => cond_dim(controller),
        }
    }
}

#[derive(Clone, Debug)]
pub enum MixtureStrategy {
    GeometricAux,
    DistanceOnly,
    Reconstruction,
    UniformMix,
    /// Fixed component weights, indexed by component.
    Proportional { weights: [f64; COMPONENTS] },
    Classifier(ComponentClassifier),
}

impl MixtureStrategy {
    pub fn name(&self) -> &'static str {
        match self {
            MixtureStrategy::GeometricAux => "geometric_aux",
            MixtureStrategy::DistanceOnly => "distance_only",
            MixtureStrategy::Reconstruction => "reconstruction",
            MixtureStrategy::UniformMix => "uniform_mix",
            MixtureStrategy::Proportional { .. } => "proportional",
            MixtureStrategy::Classifier(_) => "classifier",
        }
    }

    pub fn aux_target(&self) -> AuxTarget {
        match self {
            MixtureStrategy::Reconstruction => AuxTarget::Reconstruction,
            _ => AuxTarget::Geometric,
        }
    }

    /// Whether the weights depend on the drawn candidates.
    pub fn uses_candidates(&self) -> bool {
        matches!(
            self,
            MixtureStrategy::GeometricAux | MixtureStrategy::DistanceOnly | MixtureStrategy::Reconstruction
        )
    }

    /// Proportional weights from counts of successful samples per component.
    pub fn proportional(counts: [usize; COMPONENTS]) -> Result<Self, SamplerError> {
        let total: usize = counts.iter().sum();
        if total == 0 {
            return Err(SamplerError::MissingObservationPass);
        }
        Ok(MixtureStrategy::Proportional {
            weights: counts.map(|c| c as f64 / total as f64),
        })
    }
}

/// One labelled outcome of the observation pass: the conditioning features
/// of an accepted step and the component that supplied its parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComponentLabel {
    pub controller: ControllerKind,
    pub x: Vec<f64>,
    pub component: usize,
}

/// Per-controller networks mapping conditioning features to component
/// probabilities.
#[derive(Clone, Debug, PartialEq)]
pub struct ComponentClassifier {
    pub nets: BTreeMap<ControllerKind, (Mlp<f32>, Normalizer)>,
}

struct SoftmaxObjective<'a> {
    x: &'a [Vec<f32>],
    y: &'a [usize],
    batch: Vec<usize>,
}

impl Objective<f32> for SoftmaxObjective<'_> {
    fn inputs(&mut self, idx: &[usize], _rng: &mut ChaCha8Rng, out: &mut Vec<f32>) -> usize {
        self.batch = idx.to_vec();
        for &i in idx {
            out.extend(&self.x[i]);
        }
        idx.len()
    }

    fn loss_grad(&mut self, output: &[f32], grad: &mut [f32]) -> f64 {
        let n = self.batch.len() as f64;
        let mut loss = 0.0;
        for (r, &i) in self.batch.iter().enumerate() {
            let row = &output[r * COMPONENTS..(r + 1) * COMPONENTS];
            let p = softmax(row);
            loss -= p[self.y[i]].max(1e-300).ln() / n;
            for k in 0..COMPONENTS {
                let target = if k == self.y[i] { 1.0 } else { 0.0 };
                grad[r * COMPONENTS + k] = ((p[k] - target) / n) as f32;
            }
        }
        loss
    }
}

fn softmax(logits: &[f32]) -> Vec<f64> {
    let m = logits.iter().fold(f32::NEG_INFINITY, |a, &b| a.max(b)) as f64;
    let e: Vec<f64> = logits.iter().map(|&l| (l as f64 - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

impl ComponentClassifier {
    pub fn fit(labels: &[ComponentLabel], cfg: &TrainConfig, seed: u64) -> Result<Self, SamplerError> {
        if labels.is_empty() {
            return Err(SamplerError::MissingObservationPass);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut nets = BTreeMap::new();
        for controller in ControllerKind::ALL {
            let rows: Vec<&ComponentLabel> = labels.iter().filter(|l| l.controller == controller).collect();
            if rows.is_empty() {
                continue;
            }
            let d = cond_dim(controller);
            let norm = Normalizer::fit(d, rows.iter().map(|l| l.x.as_slice()));
            let x: Vec<Vec<f32>> = rows
                .iter()
                .map(|l| norm.normalize(&l.x).into_iter().map(|v| v as f32).collect())
                .collect();
            let y: Vec<usize> = rows.iter().map(|l| l.component).collect();
            let mut net = Mlp::two_head(d, &[COMPONENTS], &mut rng);
            let mut opt = Adam::new(net.params.len(), cfg.learning_rate);
            let mut obj = SoftmaxObjective { x: &x, y: &y, batch: Vec::new() };
            train(&mut net, &mut opt, &mut obj, &BatchSchedule::Standard { n: x.len() }, cfg, &mut rng);
            nets.insert(controller, (net, norm));
        }
        Ok(ComponentClassifier { nets })
    }

    /// Component probabilities for features `x`; uniform for a controller
    /// without a trained network.
    pub fn probabilities(&self, controller: ControllerKind, x: &[f64]) -> [f64; COMPONENTS] {
        match self.nets.get(&controller) {
            Some((net, norm)) => {
                let input: Vec<f32> = norm.normalize(x).into_iter().map(|v| v as f32).collect();
                let mut ws = Workspace::default();
                let p = softmax(net.forward_batch(&input, 1, &mut ws));
                [p[0], p[1], p[2]]
            }
            None => [1.0 / COMPONENTS as f64; COMPONENTS],
        }
    }
}

// ---------------------------------------------------------------------------
// Bank

/// Which learned models a method samples from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MethodComponents {
    pub generic: bool,
    pub specialized: bool,
    /// Mix learned components with the uniform sampler; otherwise a single
    /// learned model is used once trained.
    pub mixture: bool,
}

/// Trained models for one learning lifetime. Generic models are keyed by
/// controller, specialized ones by type signature.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SamplerBank {
    pub generic: BTreeMap<ControllerKind, DiffusionSampler>,
    pub specialized: BTreeMap<TypeSignature, DiffusionSampler>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct ManifestEntry {
    controller: ControllerKind,
    signature: Option<TypeSignature>,
    file: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct BankManifest {
    version: u32,
    models: Vec<ManifestEntry>,
}

pub const BANK_FORMAT_VERSION: u32 = 1;

/// Model shape for a controller.
pub fn model_spec(controller: ControllerKind, aux: AuxTarget) -> ModelSpec {
    ModelSpec {
        cond_dim: cond_dim(controller),
        param_dim: controller.param_dim(),
        aux_dim: aux.dim(controller),
        bounds: controller.param_bounds().to_vec(),
    }
}

/// A training example for one step of a successful plan.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub signature: TypeSignature,
    pub x: Vec<f64>,
    pub phi: Vec<f64>,
    pub z: Vec<f64>,
    pub domain: DomainKind,
    pub problem_index: usize,
}

/// Training set for a model from step records, with the auxiliary targets
/// chosen by `aux`.
pub fn training_set<'a>(records: impl IntoIterator<Item = &'a StepRecord>, aux: AuxTarget) -> TrainingSet {
    let mut t = TrainingSet::default();
    for r in records {
        let z = match aux {
            AuxTarget::Geometric => r.z.clone(),
            AuxTarget::Reconstruction => r.x.clone(),
        };
        t.push(r.x.clone(), r.phi.clone(), z);
    }
    t
}

impl SamplerBank {
    /// An empty bank: every controller samples uniformly.
    pub fn bootstrap() -> Self {
        SamplerBank::default()
    }

    pub fn is_empty(&self) -> bool {
        self.generic.is_empty() && self.specialized.is_empty()
    }

    /// Fits every model the method uses from scratch on `records`.
    pub fn fit(
        records: &[StepRecord],
        method: MethodComponents,
        aux: AuxTarget,
        cfg: &DiffusionConfig,
        seed: u64,
    ) -> Self {
        let mut bank = SamplerBank::bootstrap();
        for (i, controller) in ControllerKind::ALL.into_iter().enumerate() {
            let rows: Vec<&StepRecord> = records.iter().filter(|r| r.signature.controller == controller).collect();
            if rows.is_empty() {
                continue;
            }
            if method.generic {
                let data = training_set(rows.iter().copied(), aux);
                let (m, _) = DiffusionSampler::fit(model_spec(controller, aux), &data, cfg, seed.wrapping_add(i as u64));
                bank.generic.insert(controller, m);
            }
            if method.specialized {
                let mut by_sig: BTreeMap<&TypeSignature, Vec<&StepRecord>> = BTreeMap::new();
                for r in &rows {
                    by_sig.entry(&r.signature).or_default().push(r);
                }
                for (sig, rs) in by_sig {
                    let data = training_set(rs, aux);
                    let s = seed_for(seed, sig);
                    let (m, _) = DiffusionSampler::fit(model_spec(controller, aux), &data, cfg, s);
                    bank.specialized.insert(sig.clone(), m);
                }
            }
        }
        bank
    }

    pub fn save(&self, dir: &Path) -> Result<(), SamplerError> {
        fs::create_dir_all(dir)?;
        let mut models = Vec::new();
        for (c, m) in &self.generic {
            let file = format!("generic_{}.ckpt", c.name());
            m.checkpoint(serde_json::json!({"controller": c})).save(&dir.join(&file))?;
            models.push(ManifestEntry { controller: *c, signature: None, file });
        }
        for (sig, m) in &self.specialized {
            let file = format!("specialized_{}.ckpt", sig.key());
            m.checkpoint(serde_json::json!({"signature": sig})).save(&dir.join(&file))?;
            models.push(ManifestEntry {
                controller: sig.controller,
                signature: Some(sig.clone()),
                file,
            });
        }
        let manifest = BankManifest {
            version: BANK_FORMAT_VERSION,
            models,
        };
        fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest).expect("manifest serializes"))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, SamplerError> {
        let text = fs::read_to_string(dir.join("manifest.json"))?;
        let manifest: BankManifest = serde_json::from_str(&text).map_err(|e| SamplerError::Bank(e.to_string()))?;
        if manifest.version != BANK_FORMAT_VERSION {
            return Err(SamplerError::Bank(format!("unsupported bank version {}", manifest.version)));
        }
        let mut bank = SamplerBank::bootstrap();
        for e in manifest.models {
            let m = DiffusionSampler::from_checkpoint(&Checkpoint::load(&dir.join(&e.file))?)?;
            match e.signature {
                Some(sig) => {
                    bank.specialized.insert(sig, m);
                }
                None => {
                    bank.generic.insert(e.controller, m);
                }
            }
        }
        Ok(bank)
    }
}

/// Per-signature training seed, stable across runs.
pub fn seed_for(seed: u64, sig: &TypeSignature) -> u64 {
    sig.key()
        .bytes()
        .fold(seed ^ 0x9e37_79b9_7f4a_7c15, |h, b| h.rotate_left(5).wrapping_mul(0x100_0000_01b3) ^ b as u64)
}

// ---------------------------------------------------------------------------
// Planner-facing sampler

/// Proposals drawn from a model for one refinement step, with the model's
/// auxiliary predictions for each.
#[derive(Default)]
struct Pending {
    phis: Vec<Vec<f64>>,
    preds: Vec<Vec<f64>>,
}

struct StepCache {
    epoch: u64,
    pending: [Pending; COMPONENTS],
    /// Refills per component since the epoch began.
    fills: [u32; COMPONENTS],
}

/// Draws parameters from a bank for one domain under a method and strategy.
/// Model samples are generated in batches per step, consumed one per draw;
/// batch sizes start at 1 and double up to `batch` while the step's input
/// state is unchanged. Only candidates actually used count toward the
/// budget.
pub struct BankSampler<'a> {
    pub bank: &'a SamplerBank,
    pub method: MethodComponents,
    pub strategy: &'a MixtureStrategy,
    pub guess: &'a GuessTables,
    pub domain: DomainKind,
    pub batch: usize,
    /// Component weights behind the most recent draw.
    pub last_weights: [f64; COMPONENTS],
    cache: HashMap<usize, StepCache>,
}

impl<'a> BankSampler<'a> {
    pub fn new(
        bank: &'a SamplerBank,
        method: MethodComponents,
        strategy: &'a MixtureStrategy,
        guess: &'a GuessTables,
        domain: DomainKind,
        batch: usize,
    ) -> Self {
        BankSampler {
            bank,
            method,
            strategy,
            guess,
            domain,
            batch: batch.max(1),
            last_weights: [0.0; COMPONENTS],
            cache: HashMap::new(),
        }
    }

    fn model(&self, component: usize, sig: &TypeSignature) -> Option<&'a DiffusionSampler> {
        match component {
            GENERIC if self.method.generic => self.bank.generic.get(&sig.controller),
            SPECIALIZED if self.method.specialized => self.bank.specialized.get(sig),
            _ => None,
        }
    }

    /// Next cached proposal of a learned component, refilling the cache
    /// from the model when empty.
    fn take(
        &mut self,
        ctx: StepContext,
        component: usize,
        model: &DiffusionSampler,
        x: &[f64],
        rng: &mut ChaCha8Rng,
    ) -> (Vec<f64>, Vec<f64>) {
        let fresh = || StepCache {
            epoch: ctx.epoch,
            pending: Default::default(),
            fills: [0; COMPONENTS],
        };
        let entry = self.cache.entry(ctx.step).or_insert_with(fresh);
        if entry.epoch != ctx.epoch {
            *entry = fresh();
        }
        let p = &mut entry.pending[component];
        if p.phis.is_empty() {
            let k = self.batch.min(1usize << entry.fills[component].min(16));
            entry.fills[component] += 1;
            let mut phis = model.sample(x, k, rng);
            let mut preds = if self.strategy.uses_candidates() {
                model.aux_predict(x, &phis)
            } else {
                vec![Vec::new(); phis.len()]
            };
            phis.reverse();
            preds.reverse();
            p.phis = phis;
            p.preds = preds;
        }
        (p.phis.pop().expect("refilled"), p.preds.pop().expect("refilled"))
    }

    fn weight_of(&self, component: usize, s: &WorldState, action: &GroundAbstractAction, x: &[f64], phi: &[f64], pred: &[f64]) -> f64 {
        if component == UNIFORM {
            return 1.0;
        }
        let controller = action.controller();
        let entry = match self.guess.get(self.domain, controller) {
            Ok(e) => e,
            Err(_) => return 1.0,
        };
        match self.strategy {
            MixtureStrategy::Reconstruction => reliability(pred, x, &entry.features),
            MixtureStrategy::DistanceOnly => {
                let z = aux_signals(controller, s, &action.controller_objects(), phi);
                reliability(
                    &[distance_signal(controller, pred)],
                    &[distance_signal(controller, &z)],
                    &[entry.distance],
                )
            }
            _ => {
                let z = aux_signals(controller, s, &action.controller_objects(), phi);
                reliability(pred, &z, &entry.signals)
            }
        }
    }
}

fn uniform_draw(controller: ControllerKind, rng: &mut ChaCha8Rng) -> Draw {
    Draw {
        phi: uniform_params(controller, rng),
        candidates: 1,
        component: Some(UNIFORM),
    }
}

impl ParamSampler for BankSampler<'_> {
    fn draw(&mut self, ctx: StepContext, s: &WorldState, action: &GroundAbstractAction, rng: &mut ChaCha8Rng) -> Draw {
        let sig = TypeSignature::of(s, action);
        let controller = action.controller();
        let generic = self.model(GENERIC, &sig);
        let specialized = self.model(SPECIALIZED, &sig);
        let learned: Vec<(usize, &DiffusionSampler)> = [(GENERIC, generic), (SPECIALIZED, specialized)]
            .into_iter()
            .filter_map(|(c, m)| m.map(|m| (c, m)))
            .collect();
        self.last_weights = [0.0; COMPONENTS];
        self.last_weights[UNIFORM] = 1.0;
        if learned.is_empty() {
            return uniform_draw(controller, rng);
        }
        let x = action_features(s, action);
        if !self.method.mixture {
            let (c, m) = learned[0];
            self.last_weights = [0.0; COMPONENTS];
            self.last_weights[c] = 1.0;
            let (phi, _) = self.take(ctx, c, m, &x, rng);
            return Draw {
                phi,
                candidates: 1,
                component: Some(c),
            };
        }
        // A signature without a specialized model mixes the generic and
        // uniform samplers with fixed equal weights.
        let fixed: Option<[f64; COMPONENTS]> = if specialized.is_none() && self.method.specialized {
            Some([0.5, 0.5, 0.0])
        } else {
            match self.strategy {
                MixtureStrategy::UniformMix => Some([1.0; COMPONENTS]),
                MixtureStrategy::Proportional { weights } => Some(*weights),
                MixtureStrategy::Classifier(c) => Some(c.probabilities(controller, &x)),
                _ => None,
            }
        };
        let available = |c: usize| c == UNIFORM || learned.iter().any(|(k, _)| *k == c);
        if let Some(mut w) = fixed {
            for (c, wc) in w.iter_mut().enumerate() {
                if !available(c) {
                    *wc = 0.0;
                }
            }
            if w.iter().sum::<f64>() <= 0.0 {
                w = [0.0; COMPONENTS];
                w[UNIFORM] = 1.0;
            }
            let total: f64 = w.iter().sum();
            self.last_weights = w.map(|v| v / total);
            let c = choose(&w, rng);
            if c == UNIFORM {
                return uniform_draw(controller, rng);
            }
            let m = learned.iter().find(|(k, _)| *k == c).expect("available").1;
            let (phi, _) = self.take(ctx, c, m, &x, rng);
            return Draw {
                phi,
                candidates: 1,
                component: Some(c),
            };
        }
        let mut candidates: Vec<(usize, Vec<f64>, f64)> = Vec::with_capacity(COMPONENTS);
        for (c, m) in &learned {
            let (phi, pred) = self.take(ctx, *c, m, &x, rng);
            let rho = self.weight_of(*c, s, action, &x, &phi, &pred);
            candidates.push((*c, phi, rho));
        }
        candidates.push((UNIFORM, uniform_params(controller, rng), 1.0));
        let rho: Vec<f64> = candidates.iter().map(|c| c.2).collect();
        let weights = mixture_weights(&rho);
        self.last_weights = [0.0; COMPONENTS];
        for (cand, w) in candidates.iter().zip(&weights) {
            self.last_weights[cand.0] = *w;
        }
        let k = choose(&weights, rng);
        let n = candidates.len();
        let (c, phi, _) = candidates.swap_remove(k);
        Draw {
            phi,
            candidates: n,
            component: Some(c),
        }
    }
}
