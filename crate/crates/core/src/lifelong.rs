//! Experience accumulation and continual training of a sampler bank.

use crate::diffusion::{DiffusionConfig, DiffusionSampler, TrainingSet};
use crate::domains::Problem;
use crate::nn::BatchSchedule;
use crate::planner::{plan_states, Outcome, PlanResult};
use crate::samplers::{
    action_features, aux_signals, model_spec, seed_for, training_set, AuxTarget, MethodComponents, SamplerBank,
    StepRecord, TypeSignature,
};
use crate::world::ControllerKind;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

pub const STORE_FORMAT_VERSION: u32 = 1;
pub const REPLAY_EPOCHS: usize = 100;

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("partition {signature} expects dims {expected:?}, record has {got:?}")]
    Dimension {
        signature: String,
        expected: (usize, usize, usize),
        got: (usize, usize, usize),
    },
    #[error("store format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum UpdateScheme {
    /// Continue training on the new data only.
    Finetune,
    /// Refit from a fresh initialization on all data.
    Retrain,
    /// Continue training on batches drawn half from new and half from old
    /// data.
    Replay { adapt_epochs: usize },
}

impl UpdateScheme {
    pub fn replay() -> Self {
        UpdateScheme::Replay {
            adapt_epochs: REPLAY_EPOCHS,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            UpdateScheme::Finetune => "finetune",
            UpdateScheme::Retrain => "retrain",
            UpdateScheme::Replay { .. } => "replay",
        }
    }
}

impl std::str::FromStr for UpdateScheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "finetune" => Ok(UpdateScheme::Finetune),
            "retrain" => Ok(UpdateScheme::Retrain),
            "replay" => Ok(UpdateScheme::replay()),
            other => Err(format!("unknown update scheme `{other}`")),
        }
    }
}

/// Append-only training records, partitioned by type signature.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ExperienceStore {
    pub partitions: BTreeMap<TypeSignature, Vec<StepRecord>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct PartitionInfo {
    signature: TypeSignature,
    file: String,
    x_dim: usize,
    phi_dim: usize,
    z_dim: usize,
    count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct StoreManifest {
    version: u32,
    partitions: Vec<PartitionInfo>,
}

fn dims(r: &StepRecord) -> (usize, usize, usize) {
    (r.x.len(), r.phi.len(), r.z.len())
}

impl ExperienceStore {
    pub fn len(&self) -> usize {
        self.partitions.values().map(|p| p.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn records(&self) -> impl Iterator<Item = &StepRecord> {
        self.partitions.values().flatten()
    }

    pub fn controller_records(&self, c: ControllerKind) -> impl Iterator<Item = &StepRecord> {
        self.partitions
            .iter()
            .filter(move |(sig, _)| sig.controller == c)
            .flat_map(|(_, rs)| rs)
    }

    pub fn append(&mut self, records: &[StepRecord]) -> Result<(), StoreError> {
        for r in records {
            if let Some(first) = self.partitions.get(&r.signature).and_then(|p| p.first()) {
                if dims(first) != dims(r) {
                    return Err(StoreError::Dimension {
                        signature: r.signature.to_string(),
                        expected: dims(first),
                        got: dims(r),
                    });
                }
            }
        }
        for r in records {
            self.partitions.entry(r.signature.clone()).or_default().push(r.clone());
        }
        Ok(())
    }

    /// Writes one JSONL file per partition plus `manifest.json`. Records
    /// already on disk are kept and only new ones are appended.
    pub fn save(&self, dir: &Path) -> Result<(), StoreError> {
        fs::create_dir_all(dir)?;
        let mut partitions = Vec::new();
        for (sig, records) in &self.partitions {
            let file = format!("{}.jsonl", sig.key());
            let path = dir.join(&file);
            let existing = if path.exists() {
                BufReader::new(fs::File::open(&path)?).lines().count()
            } else {
                0
            };
            let mut f = fs::OpenOptions::new().create(true).append(true).open(&path)?;
            for r in records.iter().skip(existing) {
                writeln!(f, "{}", serde_json::to_string(r).expect("record serializes"))?;
            }
            let first = records.first().map(dims).unwrap_or((0, 0, 0));
            partitions.push(PartitionInfo {
                signature: sig.clone(),
                file,
                x_dim: first.0,
                phi_dim: first.1,
                z_dim: first.2,
                count: records.len(),
            });
        }
        let manifest = StoreManifest {
            version: STORE_FORMAT_VERSION,
            partitions,
        };
        fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest).expect("manifest serializes"))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, StoreError> {
        let manifest: StoreManifest = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)
            .map_err(|e| StoreError::Format(e.to_string()))?;
        if manifest.version != STORE_FORMAT_VERSION {
            return Err(StoreError::Format(format!("unsupported store version {}", manifest.version)));
        }
        let mut store = ExperienceStore::default();
        for p in manifest.partitions {
            let f = BufReader::new(fs::File::open(dir.join(&p.file))?);
            let mut records = Vec::with_capacity(p.count);
            for line in f.lines().take(p.count) {
                records.push(serde_json::from_str(&line?).map_err(|e| StoreError::Format(e.to_string()))?);
            }
            if records.len() != p.count {
                return Err(StoreError::Format(format!("{} holds fewer than {} records", p.file, p.count)));
            }
            store.append(&records)?;
        }
        Ok(store)
    }
}

/// Training records from a solved plan: one per step, taken at the state
/// the step started from. Unsolved results yield nothing.
pub fn harvest(result: &PlanResult, problem: &Problem, problem_index: usize) -> Vec<StepRecord> {
    let Outcome::Solved { skeleton, params } = &result.outcome else {
        return Vec::new();
    };
    let Some(states) = plan_states(problem, skeleton, params) else {
        return Vec::new();
    };
    skeleton
        .iter()
        .zip(params)
        .zip(&states)
        .map(|((a, phi), s)| StepRecord {
            signature: TypeSignature::of(s, a),
            x: action_features(s, a),
            z: aux_signals(a.controller(), s, &a.controller_objects(), phi),
            phi: phi.clone(),
            domain: problem.domain,
            problem_index,
        })
        .collect()
}

/// Trains (or creates) one model on old and new data under `scheme`.
fn update_model(
    model: Option<DiffusionSampler>,
    controller: ControllerKind,
    old: &[&StepRecord],
    new: &[&StepRecord],
    scheme: UpdateScheme,
    aux: AuxTarget,
    cfg: &DiffusionConfig,
    seed: u64,
) -> DiffusionSampler {
    let spec = model_spec(controller, aux);
    let all = || {
        let mut t = training_set(old.iter().copied(), aux);
        t.extend(&training_set(new.iter().copied(), aux));
        t
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match (model, scheme) {
        (None, _) | (Some(_), UpdateScheme::Retrain) => DiffusionSampler::fit(spec, &all(), cfg, seed).0,
        (Some(mut m), UpdateScheme::Finetune) => {
            let data: TrainingSet = training_set(new.iter().copied(), aux);
            m.train_on(&data, &BatchSchedule::Standard { n: data.len() }, cfg, cfg.train.epochs, &mut rng);
            m
        }
        (Some(mut m), UpdateScheme::Replay { adapt_epochs }) => {
            let data = all();
            let schedule = BatchSchedule::Balanced {
                new: (old.len()..old.len() + new.len()).collect(),
                old: (0..old.len()).collect(),
            };
            m.train_on(&data, &schedule, cfg, adapt_epochs, &mut rng);
            m
        }
    }
}

/// Updates every model the method uses whose data received new records,
/// then appends the new records to the store. Generic models see all
/// records of their controller, specialized models only their signature's.
#[allow(clippy::too_many_arguments)]
pub fn update(
    bank: &mut SamplerBank,
    store: &mut ExperienceStore,
    new: &[StepRecord],
    scheme: UpdateScheme,
    method: MethodComponents,
    aux: AuxTarget,
    cfg: &DiffusionConfig,
    seed: u64,
) -> Result<(), StoreError> {
    for (i, controller) in ControllerKind::ALL.into_iter().enumerate() {
        let fresh: Vec<&StepRecord> = new.iter().filter(|r| r.signature.controller == controller).collect();
        if fresh.is_empty() {
            continue;
        }
        if method.generic {
            let old: Vec<&StepRecord> = store.controller_records(controller).collect();
            let m = bank.generic.remove(&controller);
            let s = seed.wrapping_mul(31).wrapping_add(i as u64);
            let m = update_model(m, controller, &old, &fresh, scheme, aux, cfg, s);
            bank.generic.insert(controller, m);
        }
        if method.specialized {
            let mut by_sig: BTreeMap<&TypeSignature, Vec<&StepRecord>> = BTreeMap::new();
            for r in &fresh {
                by_sig.entry(&r.signature).or_default().push(r);
            }
            for (sig, rs) in by_sig {
                let old: Vec<&StepRecord> = store.partitions.get(sig).map(|p| p.iter().collect()).unwrap_or_default();
                let m = bank.specialized.remove(sig);
                let m = update_model(m, controller, &old, &rs, scheme, aux, cfg, seed_for(seed, sig));
                bank.specialized.insert(sig.clone(), m);
            }
        }
    }
    store.append(new)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domains::{gen_problem, DomainKind};
    use crate::nn::TrainConfig;
    use crate::planner::{replay_plan, sesame, PlannerConfig, SkeletonCache, UniformSampler};
    use crate::samplers::MethodComponents;
    use crate::world::simulate;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn solved(domain: DomainKind, seed: u64) -> (Problem, PlanResult) {
        let p = gen_problem(domain, seed).unwrap();
        let mut cache = SkeletonCache::default();
        let r = sesame(&p, &mut UniformSampler, &PlannerConfig::default(), &mut cache, &mut rng(seed));
        (p, r)
    }

    #[test]
    fn harvest_solved_plan() {
        let (p, r) = (0..20)
            .map(|s| solved(DomainKind::Books, s))
            .find(|(_, r)| r.solved())
            .expect("uniform planning solves some books problem");
        let recs = harvest(&r, &p, 7);
        let Outcome::Solved { skeleton, params } = &r.outcome else { unreachable!() };
        assert_eq!(recs.len(), skeleton.len());
        assert!(replay_plan(&p, skeleton, params));
        // Replay audit: each record's parameters succeed from its state.
        let mut s = p.init.clone();
        for (rec, a) in recs.iter().zip(skeleton) {
            assert_eq!(rec.signature.controller, a.controller());
            assert_eq!(rec.problem_index, 7);
            assert_eq!(rec.x, action_features(&s, a));
            s = simulate(&s, a, &rec.phi).unwrap();
        }
        let mut r2 = r.clone();
        r2.outcome = Outcome::Exhausted;
        assert!(harvest(&r2, &p, 0).is_empty());
    }

    fn place_records(p: &Problem, phi: f64, n: usize, index: usize) -> Vec<StepRecord> {
        let book = p.init.movables().next().unwrap().id.clone();
        let op = p.operators().into_iter().find(|o| o.controller == ControllerKind::Place).unwrap();
        let a = crate::world::GroundAbstractAction {
            operator: op,
            bindings: vec![book, "shelf".into()],
        };
        (0..n)
            .map(|_| StepRecord {
                signature: TypeSignature::of(&p.init, &a),
                x: action_features(&p.init, &a),
                z: aux_signals(ControllerKind::Place, &p.init, &a.controller_objects(), &[phi]),
                phi: vec![phi],
                domain: p.domain,
                problem_index: index,
            })
            .collect()
    }

    fn cfg(epochs: usize) -> DiffusionConfig {
        DiffusionConfig {
            train: TrainConfig {
                epochs,
                batch_size: 32,
                learning_rate: 1e-3,
            },
            ..DiffusionConfig::default()
        }
    }

    const GENERIC_ONLY: MethodComponents = MethodComponents {
        generic: true,
        specialized: false,
        mixture: false,
    };

    fn near(model: &DiffusionSampler, x: &[f64], target: f64) -> usize {
        model
            .sample(x, 1000, &mut rng(99))
            .iter()
            .filter(|v| (v[0] - target).abs() <= 0.1)
            .count()
    }

    #[test]
    fn replay_retains_and_finetune_forgets() {
        let p = gen_problem(DomainKind::Books, 1).unwrap();
        let (a, b) = (1.0, 2.5);
        let old = place_records(&p, a, 200, 0);
        let new = place_records(&p, b, 200, 1);
        let x = old[0].x.clone();
        let c = cfg(1000);
        let mut store = ExperienceStore::default();
        let mut base = SamplerBank::bootstrap();
        update(&mut base, &mut store, &old, UpdateScheme::Finetune, GENERIC_ONLY, AuxTarget::Geometric, &c, 1).unwrap();
        assert!(near(&base.generic[&ControllerKind::Place], &x, a) >= 900);

        let mut replay_bank = base.clone();
        let mut replay_store = store.clone();
        update(&mut replay_bank, &mut replay_store, &new, UpdateScheme::replay(), GENERIC_ONLY, AuxTarget::Geometric, &c, 2)
            .unwrap();
        let m = &replay_bank.generic[&ControllerKind::Place];
        let (na, nb) = (near(m, &x, a), near(m, &x, b));
        assert!(na >= 250 && nb >= 250, "replay: {na} near a, {nb} near b");

        let mut ft_bank = base.clone();
        let mut ft_store = store.clone();
        update(&mut ft_bank, &mut ft_store, &new, UpdateScheme::Finetune, GENERIC_ONLY, AuxTarget::Geometric, &c, 2).unwrap();
        let nb = near(&ft_bank.generic[&ControllerKind::Place], &x, b);
        assert!(nb >= 800, "finetune: {nb} near b");
        assert_eq!(ft_store.len(), 400);
    }

    #[test]
    fn empty_update_keeps_bank() {
        let p = gen_problem(DomainKind::Books, 1).unwrap();
        let mut store = ExperienceStore::default();
        let mut bank = SamplerBank::bootstrap();
        let c = cfg(2);
        update(&mut bank, &mut store, &place_records(&p, 1.0, 8, 0), UpdateScheme::Finetune, GENERIC_ONLY, AuxTarget::Geometric, &c, 1)
            .unwrap();
        for scheme in [UpdateScheme::Finetune, UpdateScheme::replay(), UpdateScheme::Retrain] {
            let before = bank.clone();
            update(&mut bank, &mut store, &[], scheme, GENERIC_ONLY, AuxTarget::Geometric, &c, 3).unwrap();
            assert_eq!(bank, before);
        }
    }

    #[test]
    fn partitions_are_isolated() {
        let p = gen_problem(DomainKind::Books, 1).unwrap();
        let mut store = ExperienceStore::default();
        let mut bank = SamplerBank::bootstrap();
        let method = MethodComponents {
            generic: true,
            specialized: true,
            mixture: true,
        };
        update(&mut bank, &mut store, &place_records(&p, 1.0, 8, 0), UpdateScheme::replay(), method, AuxTarget::Geometric, &cfg(2), 1)
            .unwrap();
        assert!(bank.generic.contains_key(&ControllerKind::Place));
        assert!(!bank.generic.contains_key(&ControllerKind::Pick));
        assert!(!bank.generic.contains_key(&ControllerKind::NavigateTo));
        assert_eq!(bank.specialized.len(), 1);
    }

    #[test]
    fn store_is_append_only_on_disk() {
        let p = gen_problem(DomainKind::Books, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let mut store = ExperienceStore::default();
        store.append(&place_records(&p, 1.0, 3, 0)).unwrap();
        store.save(dir.path()).unwrap();
        let file = dir.path().join("Place_book_shelf.jsonl");
        let first = fs::read_to_string(&file).unwrap();
        store.append(&place_records(&p, 2.0, 2, 1)).unwrap();
        store.save(dir.path()).unwrap();
        let second = fs::read_to_string(&file).unwrap();
        assert!(second.starts_with(&first));
        assert_eq!(second.lines().count(), 5);
        assert_eq!(ExperienceStore::load(dir.path()).unwrap(), store);

        let mut bad = place_records(&p, 1.0, 1, 2);
        bad[0].x.push(0.0);
        assert!(matches!(store.append(&bad), Err(StoreError::Dimension { .. })));
    }
}
