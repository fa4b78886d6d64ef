//! Bilevel planning: A* skeleton search over ground atoms, then
//! sample-and-backtrack refinement of each skeleton's continuous parameters.

use crate::domains::Problem;
use crate::world::{abstract_state, simulate, GroundAbstractAction, GroundAtom, Operator, WorldState};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap, HashMap, HashSet};

pub type Skeleton = Vec<GroundAbstractAction>;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerConfig {
    /// Maximum number of skeletons tried (N).
    pub max_skeletons: usize,
    /// Samples attempted at a step before backtracking (M).
    pub max_samples_per_step: usize,
    /// Total sample budget (B).
    pub budget: usize,
    /// Longest skeleton the discrete search will consider.
    pub depth_bound: usize,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        PlannerConfig {
            max_skeletons: 1,
            max_samples_per_step: 100,
            budget: 10_000,
            depth_bound: 50,
        }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.max_skeletons == 0 || self.max_samples_per_step == 0 || self.budget == 0 {
            return Err("planner N, M and B must all be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PlannerError {
    #[error("no skeleton within depth bound {0}")]
    NoSkeleton(usize),
}

/// Every well-typed grounding of every operator over the problem's objects,
/// with distinct objects per parameter.
pub fn ground_actions(operators: &[Operator], s: &WorldState) -> Vec<GroundAbstractAction> {
    fn extend(
        op: &Operator,
        s: &WorldState,
        prefix: &mut Vec<String>,
        out: &mut Vec<GroundAbstractAction>,
    ) {
        let k = prefix.len();
        if k == op.typed_params.len() {
            out.push(GroundAbstractAction {
                operator: op.clone(),
                bindings: prefix.clone(),
            });
            return;
        }
        for o in s.objects.iter().filter(|o| o.kind == op.typed_params[k]) {
            if prefix.contains(&o.id) {
                continue;
            }
            prefix.push(o.id.clone());
            extend(op, s, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    for op in operators {
        extend(op, s, &mut Vec::new(), &mut out);
    }
    out
}

type Bits = Box<[u64]>;

fn bits_new(n: usize) -> Bits {
    vec![0u64; n.div_ceil(64).max(1)].into_boxed_slice()
}

fn bit_set(b: &mut Bits, i: usize) {
    b[i / 64] |= 1 << (i % 64);
}

fn subset(a: &Bits, b: &Bits) -> bool {
    a.iter().zip(b.iter()).all(|(x, y)| x & !y == 0)
}

struct CompiledAction {
    pre: Bits,
    add: Bits,
    del: Bits,
}

/// Lazy A* over abstract states with unit costs and the goal-count
/// heuristic; ties broken by insertion order. Yields goal-reaching
/// skeletons in nondecreasing length.
pub struct SkeletonGen {
    actions: Vec<GroundAbstractAction>,
    compiled: Vec<CompiledAction>,
    goal: Bits,
    depth_bound: usize,
    frontier: BinaryHeap<Reverse<(usize, u64, usize)>>,
    nodes: Vec<Node>,
    closed: HashSet<Bits>,
    counter: u64,
    yielded_any: bool,
}

struct Node {
    state: Bits,
    parent: Option<usize>,
    action: Option<usize>,
    g: usize,
}

impl SkeletonGen {
    pub fn new(problem: &Problem, depth_bound: usize) -> Self {
        Self::from_parts(&problem.operators(), &problem.init, &problem.goal, depth_bound)
    }

    pub fn from_parts(
        operators: &[Operator],
        init: &WorldState,
        goal: &BTreeSet<GroundAtom>,
        depth_bound: usize,
    ) -> Self {
        let actions = ground_actions(operators, init);
        let init_atoms = abstract_state(init);
        // Atom universe: everything true initially, in goals, or mentioned by an action.
        let mut universe: BTreeSet<GroundAtom> = init_atoms.iter().cloned().collect();
        universe.extend(goal.iter().cloned());
        for a in &actions {
            universe.extend(a.preconditions());
            universe.extend(a.add_effects());
        }
        let index: HashMap<GroundAtom, usize> =
            universe.iter().cloned().enumerate().map(|(i, a)| (a, i)).collect();
        let n = universe.len();
        let mask = |atoms: &mut dyn Iterator<Item = GroundAtom>| {
            let mut b = bits_new(n);
            for a in atoms {
                bit_set(&mut b, index[&a]);
            }
            b
        };
        let compiled = actions
            .iter()
            .map(|a| {
                let mut del = bits_new(n);
                for atom in &universe {
                    if a.operator.delete_effects.iter().any(|d| d.matches(atom, &a.bindings)) {
                        bit_set(&mut del, index[atom]);
                    }
                }
                CompiledAction {
                    pre: mask(&mut a.preconditions().into_iter()),
                    add: mask(&mut a.add_effects().into_iter()),
                    del,
                }
            })
            .collect();
        let goal_bits = mask(&mut goal.iter().cloned());
        let init_bits = mask(&mut init_atoms.into_iter());
        let mut gen = SkeletonGen {
            actions,
            compiled,
            goal: goal_bits,
            depth_bound,
            frontier: BinaryHeap::new(),
            nodes: Vec::new(),
            closed: HashSet::new(),
            counter: 0,
            yielded_any: false,
        };
        gen.push(init_bits, None, None, 0);
        gen
    }

    fn heuristic(&self, s: &Bits) -> usize {
        self.goal
            .iter()
            .zip(s.iter())
            .map(|(g, x)| (g & !x).count_ones() as usize)
            .sum()
    }

    fn push(&mut self, state: Bits, parent: Option<usize>, action: Option<usize>, g: usize) {
        let f = g + self.heuristic(&state);
        self.nodes.push(Node {
            state,
            parent,
            action,
            g,
        });
        self.frontier.push(Reverse((f, self.counter, self.nodes.len() - 1)));
        self.counter += 1;
    }

    fn path(&self, mut node: usize) -> Skeleton {
        let mut out = Vec::new();
        while let Some(a) = self.nodes[node].action {
            out.push(self.actions[a].clone());
            node = self.nodes[node].parent.expect("non-root node has a parent");
        }
        out.reverse();
        out
    }

    /// The next skeleton, or `NoSkeleton` if the search space within the
    /// depth bound is exhausted before any skeleton was found.
    pub fn next_skeleton(&mut self) -> Result<Option<Skeleton>, PlannerError> {
        while let Some(Reverse((_, _, id))) = self.frontier.pop() {
            let state = self.nodes[id].state.clone();
            if subset(&self.goal, &state) {
                self.yielded_any = true;
                return Ok(Some(self.path(id)));
            }
            if !self.closed.insert(state.clone()) {
                continue;
            }
            let g = self.nodes[id].g;
            if g >= self.depth_bound {
                continue;
            }
            for a in 0..self.compiled.len() {
                let c = &self.compiled[a];
                if !subset(&c.pre, &state) {
                    continue;
                }
                let next: Bits = state
                    .iter()
                    .zip(c.del.iter().zip(c.add.iter()))
                    .map(|(s, (d, ad))| (s & !d) | ad)
                    .collect();
                if !self.closed.contains(&next) {
                    self.push(next, Some(id), Some(a), g + 1);
                }
            }
        }
        if self.yielded_any {
            Ok(None)
        } else {
            Err(PlannerError::NoSkeleton(self.depth_bound))
        }
    }
}

impl Iterator for SkeletonGen {
    type Item = Skeleton;

    fn next(&mut self) -> Option<Skeleton> {
        self.next_skeleton().ok().flatten()
    }
}

/// Memoizes first skeletons by the problem's operators, object ids, initial
/// abstract state and goal.
#[derive(Default)]
pub struct SkeletonCache {
    entries: HashMap<String, Vec<Skeleton>>,
}

impl SkeletonCache {
    fn key(problem: &Problem) -> String {
        let ids: Vec<&str> = problem.init.objects.iter().map(|o| o.id.as_str()).collect();
        let atoms: Vec<String> = abstract_state(&problem.init).iter().map(|a| a.to_string()).collect();
        let goal: Vec<String> = problem.goal.iter().map(|a| a.to_string()).collect();
        format!("{}|{}|{}|{}", problem.domain, ids.join(","), atoms.join(","), goal.join(","))
    }

    /// Up to `n` skeletons for the problem.
    pub fn skeletons(&mut self, problem: &Problem, n: usize, depth_bound: usize) -> Result<Vec<Skeleton>, PlannerError> {
        let key = Self::key(problem);
        if let Some(s) = self.entries.get(&key) {
            if s.len() >= n {
                return Ok(s[..n].to_vec());
            }
        }
        let mut gen = SkeletonGen::new(problem, depth_bound);
        let mut out = Vec::new();
        while out.len() < n {
            match gen.next_skeleton()? {
                Some(s) => out.push(s),
                None => break,
            }
        }
        self.entries.insert(key, out.clone());
        Ok(out)
    }
}

/// One parameter proposal. `candidates` is the number of samples drawn to
/// produce it (mixtures draw one per component) and is charged against the
/// budget; `component` identifies the mixture component that supplied it.
#[derive(Clone, Debug, PartialEq)]
pub struct Draw {
    pub phi: Vec<f64>,
    pub candidates: usize,
    pub component: Option<usize>,
}

/// Identifies a refinement step and how many times its input state has been
/// set; samplers may cache proposals per step and must discard them when
/// `epoch` changes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StepContext {
    pub step: usize,
    pub epoch: u64,
}

pub trait ParamSampler {
    fn draw(
        &mut self,
        ctx: StepContext,
        s: &WorldState,
        action: &GroundAbstractAction,
        rng: &mut ChaCha8Rng,
    ) -> Draw;
}

#[derive(Clone, Debug, PartialEq)]
pub struct Refinement<S> {
    /// States visited by the accepted parameters, starting with the initial state.
    pub states: Vec<S>,
    pub params: Vec<Vec<f64>>,
    pub components: Vec<Option<usize>>,
    pub per_step_counts: Vec<usize>,
    pub samples_used: usize,
    pub solved: bool,
    /// Stopped because the budget ran out.
    pub exhausted: bool,
}

/// Sample-and-backtrack refinement of a skeleton of `len` steps. `draw`
/// proposes parameters for a step; `step_fn` returns the successor state or
/// `None` when invalid. A step's counter reaching `m` sends the search back
/// to the latest earlier step still under `m`, resetting counters on the
/// way; backtracking past the first step abandons the skeleton. Draws are
/// charged against `budget` and a draw that would exceed it is not used.
pub fn refine<S: Clone>(
    init: &S,
    len: usize,
    m: usize,
    budget: usize,
    mut draw: impl FnMut(StepContext, &S) -> Draw,
    mut step_fn: impl FnMut(usize, &S, &[f64]) -> Option<S>,
) -> Refinement<S> {
    let mut out = Refinement {
        states: vec![init.clone()],
        params: vec![Vec::new(); len],
        components: vec![None; len],
        per_step_counts: vec![0; len],
        samples_used: 0,
        solved: false,
        exhausted: false,
    };
    if len == 0 {
        out.solved = true;
        return out;
    }
    let mut epochs = vec![0u64; len];
    let mut cnt = vec![0usize; len];
    let mut i = 0usize;
    loop {
        let d = draw(StepContext { step: i, epoch: epochs[i] }, &out.states[i]);
        if out.samples_used + d.candidates > budget {
            out.exhausted = true;
            break;
        }
        out.samples_used += d.candidates;
        cnt[i] += 1;
        match step_fn(i, &out.states[i], &d.phi) {
            Some(next) => {
                out.params[i] = d.phi;
                out.components[i] = d.component;
                out.states.truncate(i + 1);
                out.states.push(next);
                i += 1;
                if i == len {
                    out.solved = true;
                    break;
                }
                epochs[i] += 1;
                for c in &mut cnt[i..] {
                    *c = 0;
                }
            }
            None => {
                let mut j = i as isize;
                while j >= 0 && cnt[j as usize] == m {
                    cnt[j as usize] = 0;
                    j -= 1;
                }
                if j < 0 {
                    break;
                }
                i = j as usize;
                out.states.truncate(i + 1);
            }
        }
    }
    out.per_step_counts = cnt;
    out
}

#[derive(Clone, Debug, PartialEq)]
pub enum Outcome {
    Solved {
        skeleton: Skeleton,
        params: Vec<Vec<f64>>,
    },
    Exhausted,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlanResult {
    pub outcome: Outcome,
    pub samples_used: usize,
    pub per_step_counts: Vec<usize>,
    /// Mixture component behind each accepted parameter, when solved.
    pub components: Vec<Option<usize>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanRecord {
    pub solved: bool,
    pub samples_used: usize,
    pub skeleton: Vec<String>,
    pub params: Vec<Vec<f64>>,
}

impl PlanResult {
    pub fn solved(&self) -> bool {
        matches!(self.outcome, Outcome::Solved { .. })
    }

    pub fn record(&self) -> PlanRecord {
        let (skeleton, params) = match &self.outcome {
            Outcome::Solved { skeleton, params } => {
                (skeleton.iter().map(|a| a.to_string()).collect(), params.clone())
            }
            Outcome::Exhausted => (Vec::new(), Vec::new()),
        };
        PlanRecord {
            solved: self.solved(),
            samples_used: self.samples_used,
            skeleton,
            params,
        }
    }
}

/// Plans `problem` with `sampler`. Unsolvable abstract problems and spent
/// budgets both come back as `Exhausted`.
pub fn sesame(
    problem: &Problem,
    sampler: &mut dyn ParamSampler,
    cfg: &PlannerConfig,
    cache: &mut SkeletonCache,
    rng: &mut ChaCha8Rng,
) -> PlanResult {
    let skeletons = cache
        .skeletons(problem, cfg.max_skeletons, cfg.depth_bound)
        .unwrap_or_default();
    let mut samples_used = 0;
    let mut per_step_counts = Vec::new();
    for skel in skeletons {
        let r = refine(
            &problem.init,
            skel.len(),
            cfg.max_samples_per_step,
            cfg.budget - samples_used,
            |ctx, s| sampler.draw(ctx, s, &skel[ctx.step], rng),
            |i, s, phi| simulate(s, &skel[i], phi).ok(),
        );
        samples_used += r.samples_used;
        per_step_counts = r.per_step_counts.clone();
        if r.solved && problem.goal_reached(r.states.last().expect("at least the initial state")) {
            return PlanResult {
                outcome: Outcome::Solved {
                    skeleton: skel,
                    params: r.params,
                },
                samples_used,
                per_step_counts,
                components: r.components,
            };
        }
        if r.exhausted {
            break;
        }
    }
    PlanResult {
        outcome: Outcome::Exhausted,
        samples_used,
        per_step_counts,
        components: Vec::new(),
    }
}

/// Replays a plan through the simulator; true iff every step succeeds and
/// the goal holds at the end.
pub fn replay_plan(problem: &Problem, skeleton: &[GroundAbstractAction], params: &[Vec<f64>]) -> bool {
    if skeleton.len() != params.len() {
        return false;
    }
    let mut s = problem.init.clone();
    for (a, phi) in skeleton.iter().zip(params) {
        match simulate(&s, a, phi) {
            Ok(next) => s = next,
            Err(_) => return false,
        }
    }
    problem.goal_reached(&s)
}

/// The states a plan passes through, including the initial one.
pub fn plan_states(problem: &Problem, skeleton: &[GroundAbstractAction], params: &[Vec<f64>]) -> Option<Vec<WorldState>> {
    let mut states = vec![problem.init.clone()];
    for (a, phi) in skeleton.iter().zip(params) {
        let next = simulate(states.last()?, a, phi).ok()?;
        states.push(next);
    }
    Some(states)
}

/// Draws uniformly within the controller's bounds.
#[derive(Clone, Copy, Debug, Default)]
pub struct UniformSampler;

impl ParamSampler for UniformSampler {
    fn draw(
        &mut self,
        _ctx: StepContext,
        _s: &WorldState,
        action: &GroundAbstractAction,
        rng: &mut ChaCha8Rng,
    ) -> Draw {
        Draw {
            phi: uniform_params(action.controller(), rng),
            candidates: 1,
            component: None,
        }
    }
}

pub fn uniform_params(controller: crate::world::ControllerKind, rng: &mut ChaCha8Rng) -> Vec<f64> {
    use rand::Rng;
    controller
        .param_bounds()
        .iter()
        .map(|(lo, hi)| rng.random_range(*lo..=*hi))
        .collect()
}
