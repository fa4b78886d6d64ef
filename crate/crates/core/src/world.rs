//! The hybrid world model: object types, predicates, operators with
//! parameterized controllers, and the continuous transition function.
//!
//! The robot is a disc of radius [`ROBOT_RADIUS`] with a zero-width gripper
//! ray. `NavigateTo` teleports it next to a target, `Pick` extends the
//! gripper into an object, and `Place` releases the held object at the
//! gripper tip, oriented with the robot heading.
//!
//! `Reachable(o)` is true only for the object the robot last navigated to
//! (its *focus*), provided the object's grasp region lies within
//! [`MAX_EXTENSION`] of the robot center with a clear line of sight.

use crate::geom::{
    clip_segment, disc_inside_rect, disc_overlaps_rect, nearest_point_on_rect,
    nearest_point_on_segment, normalize_angle, point_in_rect, rects_overlap,
    segment_crosses_rect, OrientedRect, Pose2, Vec2,
};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::fmt;

pub const ROBOT_RADIUS: f64 = 0.5;
pub const MIN_EXTENSION: f64 = 0.5;
pub const MAX_EXTENSION: f64 = 3.0;
/// Navigation offsets are expressed in units of the target's half-extent
/// plus the robot radius and range over ±`NAV_RANGE`.
pub const NAV_RANGE: f64 = 3.0;
/// Fraction of a cup's length (from the handle side) that can be gripped.
pub const HANDLE_DEPTH: f64 = 0.25;
/// Maximum angular misalignment of a stick with its container's long axis.
pub const STICK_ALIGN_TOL: f64 = 15.0 * PI / 180.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectType {
    Book,
    Cup,
    Box,
    Stick,
    Block,
    Shelf,
    Cupboard,
    Tray,
    Container,
    Bin,
}

impl ObjectType {
    pub const ALL: [ObjectType; 10] = [
        ObjectType::Book,
        ObjectType::Cup,
        ObjectType::Box,
        ObjectType::Stick,
        ObjectType::Block,
        ObjectType::Shelf,
        ObjectType::Cupboard,
        ObjectType::Tray,
        ObjectType::Container,
        ObjectType::Bin,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ObjectType::Book => "book",
            ObjectType::Cup => "cup",
            ObjectType::Box => "box",
            ObjectType::Stick => "stick",
            ObjectType::Block => "block",
            ObjectType::Shelf => "shelf",
            ObjectType::Cupboard => "cupboard",
            ObjectType::Tray => "tray",
            ObjectType::Container => "container",
            ObjectType::Bin => "bin",
        }
    }

    pub fn is_container(self) -> bool {
        matches!(
            self,
            ObjectType::Shelf
                | ObjectType::Cupboard
                | ObjectType::Tray
                | ObjectType::Container
                | ObjectType::Bin
        )
    }

    pub fn is_movable(self) -> bool {
        !self.is_container()
    }

    /// Direction (object frame) of the only side the object may be grasped
    /// from, if restricted.
    pub fn handle_direction(self) -> Option<Vec2> {
        match self {
            ObjectType::Cup => Some(Vec2::new(0.0, -1.0)),
            _ => None,
        }
    }
}

impl fmt::Display for ObjectType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Length of an object's feature vector.
pub const OBJECT_FEATURES: usize = 8;
/// Length of the robot's feature vector.
pub const ROBOT_FEATURES: usize = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct ObjectInstance {
    pub id: String,
    pub kind: ObjectType,
    pub rect: OrientedRect,
}

impl ObjectInstance {
    pub fn new(id: impl Into<String>, kind: ObjectType, rect: OrientedRect) -> Self {
        ObjectInstance {
            id: id.into(),
            kind,
            rect,
        }
    }

    /// `(x, y, sin θ, cos θ, half_w, half_l, hx, hy)` where `(hx, hy)` is the
    /// grasp-side direction in the object frame (zero when unrestricted).
    pub fn features(&self) -> [f64; OBJECT_FEATURES] {
        let r = &self.rect;
        let h = self.kind.handle_direction().unwrap_or(Vec2::ZERO);
        [
            r.center.x,
            r.center.y,
            r.theta.sin(),
            r.theta.cos(),
            r.half_w,
            r.half_l,
            h.x,
            h.y,
        ]
    }

    /// Shape-only features used when the object is in the gripper.
    pub fn shape_features(&self) -> [f64; 4] {
        let h = self.kind.handle_direction().unwrap_or(Vec2::ZERO);
        [self.rect.half_w, self.rect.half_l, h.x, h.y]
    }

    /// Endpoints of the handle edge, for objects with one.
    pub fn handle_edge(&self) -> Option<(Vec2, Vec2)> {
        self.kind.handle_direction()?;
        let r = &self.rect;
        Some((
            r.to_world(Vec2::new(-r.half_w, -r.half_l)),
            r.to_world(Vec2::new(r.half_w, -r.half_l)),
        ))
    }

    /// The two placement pockets at the ends of a tray, square with side
    /// equal to the tray width.
    pub fn pockets(&self) -> Option<[OrientedRect; 2]> {
        if self.kind != ObjectType::Tray {
            return None;
        }
        let r = &self.rect;
        let off = (r.half_l - r.half_w).max(0.0);
        let mk = |s: f64| {
            OrientedRect::new(r.to_world(Vec2::new(0.0, s * off)), r.half_w, r.half_w.min(r.half_l), r.theta)
        };
        Some([mk(-1.0), mk(1.0)])
    }

    /// Closest point of the region the robot must reach to act on this
    /// object, and its distance from `p`.
    pub fn nearest_target_point(&self, p: Vec2) -> (Vec2, f64) {
        if let Some((a, b)) = self.handle_edge() {
            return nearest_point_on_segment(p, a, b);
        }
        if let Some(pockets) = self.pockets() {
            let a = nearest_point_on_rect(p, &pockets[0]);
            let b = nearest_point_on_rect(p, &pockets[1]);
            return if a.1 <= b.1 { a } else { b };
        }
        nearest_point_on_rect(p, &self.rect)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobotState {
    pub pose: Pose2,
    pub gripper_extension: f64,
    pub held: Option<String>,
    /// Object targeted by the most recent navigation.
    pub focus: Option<String>,
}

impl RobotState {
    pub fn at(position: Vec2, theta: f64) -> Self {
        RobotState {
            pose: Pose2::new(position, theta),
            gripper_extension: 0.0,
            held: None,
            focus: None,
        }
    }

    pub fn features(&self) -> [f64; ROBOT_FEATURES] {
        let p = &self.pose;
        [p.position.x, p.position.y, p.theta.sin(), p.theta.cos()]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WorldState {
    pub robot: RobotState,
    pub objects: Vec<ObjectInstance>,
    pub room: OrientedRect,
}

impl WorldState {
    pub fn object(&self, id: &str) -> Option<&ObjectInstance> {
        self.objects.iter().find(|o| o.id == id)
    }

    fn object_mut(&mut self, id: &str) -> Option<&mut ObjectInstance> {
        self.objects.iter_mut().find(|o| o.id == id)
    }

    pub fn is_held(&self, id: &str) -> bool {
        self.robot.held.as_deref() == Some(id)
    }

    /// Objects that occupy floor space (everything except the held object).
    pub fn placed_objects(&self) -> impl Iterator<Item = &ObjectInstance> {
        self.objects.iter().filter(move |o| !self.is_held(&o.id))
    }

    pub fn movables(&self) -> impl Iterator<Item = &ObjectInstance> {
        self.objects.iter().filter(|o| o.kind.is_movable())
    }

    pub fn containers(&self) -> impl Iterator<Item = &ObjectInstance> {
        self.objects.iter().filter(|o| o.kind.is_container())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Predicate {
    HandEmpty,
    Holding,
    Reachable,
    In,
    OnFloor,
}

impl Predicate {
    pub fn arity(self) -> usize {
        match self {
            Predicate::HandEmpty => 0,
            Predicate::Holding | Predicate::Reachable | Predicate::OnFloor => 1,
            Predicate::In => 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct GroundAtom {
    pub predicate: Predicate,
    pub args: Vec<String>,
}

impl GroundAtom {
    pub fn new(predicate: Predicate, args: &[&str]) -> Self {
        debug_assert_eq!(args.len(), predicate.arity());
        GroundAtom {
            predicate,
            args: args.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl fmt::Display for GroundAtom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}({})", self.predicate, self.args.join(", "))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ControllerKind {
    NavigateTo,
    Pick,
    Place,
}

impl ControllerKind {
    pub const ALL: [ControllerKind; 3] =
        [ControllerKind::NavigateTo, ControllerKind::Pick, ControllerKind::Place];

    pub fn param_dim(self) -> usize {
        match self {
            ControllerKind::NavigateTo | ControllerKind::Pick => 2,
            ControllerKind::Place => 1,
        }
    }

    /// Per-dimension `[lo, hi]` parameter bounds.
    pub fn param_bounds(self) -> &'static [(f64, f64)] {
        const NAV: [(f64, f64); 2] = [(-NAV_RANGE, NAV_RANGE), (-NAV_RANGE, NAV_RANGE)];
        const PICK: [(f64, f64); 2] = [(MIN_EXTENSION, MAX_EXTENSION), (-PI, PI)];
        const PLACE: [(f64, f64); 1] = [(MIN_EXTENSION, MAX_EXTENSION)];
        match self {
            ControllerKind::NavigateTo => &NAV,
            ControllerKind::Pick => &PICK,
            ControllerKind::Place => &PLACE,
        }
    }

    /// Number of objects the controller acts on.
    pub fn arity(self) -> usize {
        match self {
            ControllerKind::NavigateTo | ControllerKind::Pick => 1,
            ControllerKind::Place => 2,
        }
    }

    pub fn in_bounds(self, phi: &[f64]) -> bool {
        phi.len() == self.param_dim()
            && phi
                .iter()
                .zip(self.param_bounds())
                .all(|(v, (lo, hi))| v.is_finite() && *v >= *lo - 1e-12 && *v <= *hi + 1e-12)
    }

    /// Clamps each coordinate into the controller's bounds.
    pub fn clamp(self, phi: &mut [f64]) {
        for (v, (lo, hi)) in phi.iter_mut().zip(self.param_bounds()) {
            *v = if v.is_finite() { v.clamp(*lo, *hi) } else { *lo };
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ControllerKind::NavigateTo => "NavigateTo",
            ControllerKind::Pick => "Pick",
            ControllerKind::Place => "Place",
        }
    }
}

/// Argument of a lifted atom: an operator parameter, or (delete effects
/// only) a wildcard matching every object.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Arg {
    Param(usize),
    Any,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LiftedAtom {
    pub predicate: Predicate,
    pub args: Vec<Arg>,
}

impl LiftedAtom {
    fn new(predicate: Predicate, args: &[Arg]) -> Self {
        LiftedAtom {
            predicate,
            args: args.to_vec(),
        }
    }

    /// Grounds the atom; `None` if it contains a wildcard.
    pub fn ground(&self, bindings: &[String]) -> Option<GroundAtom> {
        let args = self
            .args
            .iter()
            .map(|a| match a {
                Arg::Param(i) => Some(bindings[*i].clone()),
                Arg::Any => None,
            })
            .collect::<Option<Vec<_>>>()?;
        Some(GroundAtom {
            predicate: self.predicate,
            args,
        })
    }

    /// Whether the (possibly wildcarded) lifted atom matches `atom`.
    pub fn matches(&self, atom: &GroundAtom, bindings: &[String]) -> bool {
        self.predicate == atom.predicate
            && self.args.iter().zip(&atom.args).all(|(a, g)| match a {
                Arg::Param(i) => &bindings[*i] == g,
                Arg::Any => true,
            })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Operator {
    pub name: String,
    pub typed_params: Vec<ObjectType>,
    pub preconditions: Vec<LiftedAtom>,
    pub add_effects: Vec<LiftedAtom>,
    pub delete_effects: Vec<LiftedAtom>,
    pub controller: ControllerKind,
    /// Indices into `typed_params` of the objects the controller acts on.
    pub controller_args: Vec<usize>,
}

/// The four operators for moving objects of type `movable` into a
/// `container`.
pub fn pick_place_operators(movable: ObjectType, container: ObjectType) -> Vec<Operator> {
    use Arg::{Any, Param};
    use Predicate::*;
    let a = LiftedAtom::new;
    vec![
        Operator {
            name: format!("NavigateTo_{movable}"),
            typed_params: vec![movable],
            preconditions: vec![a(HandEmpty, &[]), a(OnFloor, &[Param(0)])],
            add_effects: vec![a(Reachable, &[Param(0)])],
            delete_effects: vec![a(Reachable, &[Any])],
            controller: ControllerKind::NavigateTo,
            controller_args: vec![0],
        },
        Operator {
            name: format!("Pick_{movable}"),
            typed_params: vec![movable],
            preconditions: vec![
                a(HandEmpty, &[]),
                a(OnFloor, &[Param(0)]),
                a(Reachable, &[Param(0)]),
            ],
            add_effects: vec![a(Holding, &[Param(0)])],
            delete_effects: vec![
                a(HandEmpty, &[]),
                a(OnFloor, &[Param(0)]),
                a(Reachable, &[Param(0)]),
            ],
            controller: ControllerKind::Pick,
            controller_args: vec![0],
        },
        Operator {
            name: format!("NavigateTo_{container}"),
            typed_params: vec![movable, container],
            preconditions: vec![a(Holding, &[Param(0)])],
            add_effects: vec![a(Reachable, &[Param(1)])],
            delete_effects: vec![a(Reachable, &[Any])],
            controller: ControllerKind::NavigateTo,
            controller_args: vec![1],
        },
        Operator {
            name: format!("Place_{movable}_{container}"),
            typed_params: vec![movable, container],
            preconditions: vec![a(Holding, &[Param(0)]), a(Reachable, &[Param(1)])],
            add_effects: vec![a(In, &[Param(0), Param(1)]), a(HandEmpty, &[])],
            delete_effects: vec![a(Holding, &[Param(0)])],
            controller: ControllerKind::Place,
            controller_args: vec![0, 1],
        },
    ]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundAbstractAction {
    pub operator: Operator,
    pub bindings: Vec<String>,
}

impl GroundAbstractAction {
    pub fn controller(&self) -> ControllerKind {
        self.operator.controller
    }

    /// Ids of the objects the controller acts on.
    pub fn controller_objects(&self) -> Vec<&str> {
        self.operator
            .controller_args
            .iter()
            .map(|&i| self.bindings[i].as_str())
            .collect()
    }

    pub fn preconditions(&self) -> Vec<GroundAtom> {
        self.operator
            .preconditions
            .iter()
            .filter_map(|a| a.ground(&self.bindings))
            .collect()
    }

    pub fn add_effects(&self) -> Vec<GroundAtom> {
        self.operator
            .add_effects
            .iter()
            .filter_map(|a| a.ground(&self.bindings))
            .collect()
    }

    /// Applies the operator's effects to an abstract state: wildcard
    /// deletes first, then adds.
    pub fn apply_abstract(&self, atoms: &BTreeSet<GroundAtom>) -> BTreeSet<GroundAtom> {
        let mut out: BTreeSet<GroundAtom> = atoms
            .iter()
            .filter(|g| !self.operator.delete_effects.iter().any(|d| d.matches(g, &self.bindings)))
            .cloned()
            .collect();
        out.extend(self.add_effects());
        out
    }

    /// True when `atom` is removed by this action and not re-added.
    pub fn deletes(&self, atom: &GroundAtom) -> bool {
        self.operator.delete_effects.iter().any(|d| d.matches(atom, &self.bindings))
            && !self.add_effects().contains(atom)
    }
}

impl fmt::Display for GroundAbstractAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}({})", self.controller().name(), self.controller_objects().join(", "))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, thiserror::Error, Serialize, Deserialize)]
pub enum Invalid {
    #[error("collision")]
    Collision,
    #[error("target unreachable")]
    Unreachable,
    #[error("gripper tip outside graspable region")]
    NotGraspable,
    #[error("outside the room")]
    OutOfRoom,
    #[error("symbolic precondition or parameter bound violated")]
    PreconditionViolated,
    #[error("intended effect not achieved")]
    EffectNotAchieved,
}

/// Whether movable `o` rests inside container `c` according to the
/// container's placement rule.
pub fn is_in(o: &ObjectInstance, c: &ObjectInstance) -> bool {
    match c.kind {
        ObjectType::Tray => c
            .pockets()
            .map(|p| p.iter().any(|pk| pk.contains_rect(&o.rect)))
            .unwrap_or(false),
        ObjectType::Container => {
            let d = normalize_angle(o.rect.theta - c.rect.theta);
            let misalign = d.abs().min(PI - d.abs());
            c.rect.contains_rect(&o.rect) && misalign <= STICK_ALIGN_TOL + 1e-12
        }
        _ => c.rect.contains_rect(&o.rect),
    }
}

fn line_of_sight(s: &WorldState, from: Vec2, to: Vec2, target: &str) -> bool {
    s.placed_objects()
        .filter(|o| o.id != target)
        .all(|o| !segment_crosses_rect(from, to, &o.rect))
}

fn reachable(s: &WorldState, obj: &ObjectInstance) -> bool {
    if s.robot.focus.as_deref() != Some(obj.id.as_str()) || s.is_held(&obj.id) {
        return false;
    }
    let center = s.robot.pose.position;
    let (point, dist) = obj.nearest_target_point(center);
    dist <= MAX_EXTENSION + 1e-12 && line_of_sight(s, center, point, &obj.id)
}

fn on_floor(s: &WorldState, obj: &ObjectInstance) -> bool {
    obj.kind.is_movable()
        && !s.is_held(&obj.id)
        && s.containers().all(|c| !rects_overlap(&c.rect, &obj.rect))
}

/// Truth value of a single ground atom in `s`.
pub fn holds(s: &WorldState, atom: &GroundAtom) -> bool {
    let obj = |i: usize| atom.args.get(i).and_then(|id| s.object(id));
    match atom.predicate {
        Predicate::HandEmpty => s.robot.held.is_none(),
        Predicate::Holding => atom.args.first().is_some_and(|id| s.is_held(id)),
        Predicate::Reachable => obj(0).is_some_and(|o| reachable(s, o)),
        Predicate::OnFloor => obj(0).is_some_and(|o| on_floor(s, o)),
        Predicate::In => match (obj(0), obj(1)) {
            (Some(o), Some(c)) => {
                o.kind.is_movable() && c.kind.is_container() && !s.is_held(&o.id) && is_in(o, c)
            }
            _ => false,
        },
    }
}

/// The complete set of true ground atoms.
pub fn abstract_state(s: &WorldState) -> BTreeSet<GroundAtom> {
    let mut atoms = BTreeSet::new();
    match &s.robot.held {
        None => {
            atoms.insert(GroundAtom::new(Predicate::HandEmpty, &[]));
        }
        Some(id) => {
            atoms.insert(GroundAtom::new(Predicate::Holding, &[id]));
        }
    }
    for o in &s.objects {
        if reachable(s, o) {
            atoms.insert(GroundAtom::new(Predicate::Reachable, &[&o.id]));
        }
        if on_floor(s, o) {
            atoms.insert(GroundAtom::new(Predicate::OnFloor, &[&o.id]));
        }
        if o.kind.is_movable() && !s.is_held(&o.id) {
            for c in s.containers() {
                if is_in(o, c) {
                    atoms.insert(GroundAtom::new(Predicate::In, &[&o.id, &c.id]));
                }
            }
        }
    }
    atoms
}

/// First reason the state is invalid, if any.
pub fn check_valid(s: &WorldState) -> Result<(), Invalid> {
    for id in s.robot.held.iter().chain(s.robot.focus.iter()) {
        if s.object(id).is_none() {
            return Err(Invalid::PreconditionViolated);
        }
    }
    if !disc_inside_rect(s.robot.pose.position, ROBOT_RADIUS, &s.room) {
        return Err(Invalid::OutOfRoom);
    }
    let placed: Vec<&ObjectInstance> = s.placed_objects().collect();
    for o in &placed {
        if !s.room.contains_rect(&o.rect) {
            return Err(Invalid::OutOfRoom);
        }
        if disc_overlaps_rect(s.robot.pose.position, ROBOT_RADIUS, &o.rect) {
            return Err(Invalid::Collision);
        }
    }
    for (i, a) in placed.iter().enumerate() {
        for b in &placed[i + 1..] {
            if !rects_overlap(&a.rect, &b.rect) {
                continue;
            }
            let supported = match (a.kind.is_container(), b.kind.is_container()) {
                (true, false) => a.rect.contains_rect(&b.rect),
                (false, true) => b.rect.contains_rect(&a.rect),
                _ => false,
            };
            if !supported {
                return Err(Invalid::Collision);
            }
        }
    }
    Ok(())
}

/// No overlapping footprints (except movables resting inside a container),
/// robot disc clear of every placed object, and everything inside the room.
pub fn valid(s: &WorldState) -> bool {
    check_valid(s).is_ok()
}

/// Gripper tip for a given extension along absolute direction `angle`.
pub fn gripper_tip(pose: &Pose2, extension: f64, angle: f64) -> Vec2 {
    pose.position + Vec2::from_angle(angle) * extension
}

/// Robot pose commanded by `NavigateTo(target)` with parameters `phi`:
/// offsets scaled by the target's half-extents plus the robot radius, in the
/// target frame, with the robot turned to face the target center.
pub fn navigation_pose(target: &ObjectInstance, phi: &[f64]) -> Pose2 {
    let r = &target.rect;
    let local = Vec2::new(phi[0] * (r.half_w + ROBOT_RADIUS), phi[1] * (r.half_l + ROBOT_RADIUS));
    let position = r.to_world(local);
    let to_center = r.center - position;
    let heading = if to_center.norm() < 1e-12 { 0.0 } else { to_center.angle() };
    Pose2::new(position, heading)
}

/// Rectangle a held object would occupy if released with the gripper
/// extended by `extension` along the robot heading.
pub fn placement_rect(robot: &Pose2, held: &ObjectInstance, extension: f64) -> OrientedRect {
    OrientedRect::new(
        gripper_tip(robot, extension, robot.theta),
        held.rect.half_w,
        held.rect.half_l,
        robot.theta,
    )
}

fn graspable(s: &WorldState, obj: &ObjectInstance, tip: Vec2) -> bool {
    let r = &obj.rect;
    if !point_in_rect(tip, r) {
        return false;
    }
    if obj.kind.handle_direction().is_none() {
        return true;
    }
    // The gripper must enter through the handle edge and stop in the handle band.
    let local_tip = r.to_local(tip);
    if local_tip.y > -r.half_l + 2.0 * r.half_l * HANDLE_DEPTH {
        return false;
    }
    let from = s.robot.pose.position;
    match clip_segment(from, tip, r) {
        Some((t0, _)) => {
            let entry = r.to_local(from + (tip - from) * t0);
            (entry.y + r.half_l).abs() < 1e-6
        }
        None => false,
    }
}

/// Continuous transition: applies the action's controller with parameters
/// `phi`. Returns the successor state, which is always valid and satisfies
/// the operator's effects, or the reason the attempt failed.
pub fn simulate(
    s: &WorldState,
    action: &GroundAbstractAction,
    phi: &[f64],
) -> Result<WorldState, Invalid> {
    let controller = action.controller();
    if !controller.in_bounds(phi) {
        return Err(Invalid::PreconditionViolated);
    }
    if !action.preconditions().iter().all(|a| holds(s, a)) {
        return Err(Invalid::PreconditionViolated);
    }
    let objs = action.controller_objects();
    let mut next = s.clone();
    match controller {
        ControllerKind::NavigateTo => {
            let target = s.object(objs[0]).ok_or(Invalid::PreconditionViolated)?;
            let pose = navigation_pose(target, phi);
            if !disc_inside_rect(pose.position, ROBOT_RADIUS, &s.room) {
                return Err(Invalid::OutOfRoom);
            }
            if s.placed_objects().any(|o| disc_overlaps_rect(pose.position, ROBOT_RADIUS, &o.rect)) {
                return Err(Invalid::Collision);
            }
            next.robot.pose = pose;
            next.robot.focus = Some(target.id.clone());
            if !reachable(&next, target) {
                return Err(Invalid::Unreachable);
            }
        }
        ControllerKind::Pick => {
            let target = s.object(objs[0]).ok_or(Invalid::PreconditionViolated)?;
            let pose = &s.robot.pose;
            let tip = gripper_tip(pose, phi[0], pose.theta + phi[1]);
            if !point_in_rect(tip, &s.room) {
                return Err(Invalid::OutOfRoom);
            }
            if s
                .placed_objects()
                .filter(|o| o.id != target.id)
                .any(|o| segment_crosses_rect(pose.position, tip, &o.rect))
            {
                return Err(Invalid::Collision);
            }
            if !graspable(s, target, tip) {
                return Err(Invalid::NotGraspable);
            }
            next.robot.held = Some(target.id.clone());
            next.robot.gripper_extension = phi[0];
        }
        ControllerKind::Place => {
            let held = s.object(objs[0]).ok_or(Invalid::PreconditionViolated)?;
            let container = s.object(objs[1]).ok_or(Invalid::PreconditionViolated)?;
            let rect = placement_rect(&s.robot.pose, held, phi[0]);
            if !s.room.contains_rect(&rect) {
                return Err(Invalid::OutOfRoom);
            }
            for o in s.placed_objects() {
                if rects_overlap(&o.rect, &rect)
                    && !(o.kind.is_container() && o.rect.contains_rect(&rect))
                {
                    return Err(Invalid::Collision);
                }
            }
            let placed = next.object_mut(&held.id).expect("held object exists");
            placed.rect = rect;
            next.robot.held = None;
            next.robot.gripper_extension = phi[0];
            let placed = next.object(&held.id).expect("held object exists");
            if !is_in(placed, container) {
                return Err(Invalid::EffectNotAchieved);
            }
        }
    }
    check_valid(&next)?;
    if !action.add_effects().iter().all(|a| holds(&next, a)) {
        return Err(Invalid::EffectNotAchieved);
    }
    Ok(next)
}

// ---------------------------------------------------------------------------
// JSON document

pub const STATE_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ObjectDoc {
    id: String,
    #[serde(rename = "type")]
    kind: ObjectType,
    pose: Pose2,
    half_w: f64,
    half_l: f64,
    features: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct StateDoc {
    version: u32,
    robot: RobotState,
    room: OrientedRect,
    objects: Vec<ObjectDoc>,
}

impl Serialize for WorldState {
    fn serialize<S: serde::Serializer>(&self, ser: S) -> Result<S::Ok, S::Error> {
        StateDoc {
            version: STATE_FORMAT_VERSION,
            robot: self.robot.clone(),
            room: self.room,
            objects: self
                .objects
                .iter()
                .map(|o| ObjectDoc {
                    id: o.id.clone(),
                    kind: o.kind,
                    pose: o.rect.pose(),
                    half_w: o.rect.half_w,
                    half_l: o.rect.half_l,
                    features: o.features().to_vec(),
                })
                .collect(),
        }
        .serialize(ser)
    }
}

impl<'de> Deserialize<'de> for WorldState {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> Result<Self, D::Error> {
        let doc = StateDoc::deserialize(de)?;
        if doc.version != STATE_FORMAT_VERSION {
            return Err(serde::de::Error::custom(format!(
                "unsupported state format version {}",
                doc.version
            )));
        }
        let objects = doc
            .objects
            .into_iter()
            .map(|o| {
                if !(o.half_w > 0.0 && o.half_l > 0.0) {
                    return Err(serde::de::Error::custom(format!("object {} has non-positive extent", o.id)));
                }
                Ok(ObjectInstance {
                    id: o.id,
                    kind: o.kind,
                    rect: OrientedRect {
                        center: o.pose.position,
                        half_w: o.half_w,
                        half_l: o.half_l,
                        theta: o.pose.theta,
                    },
                })
            })
            .collect::<Result<Vec<_>, D::Error>>()?;
        Ok(WorldState {
            robot: doc.robot,
            room: doc.room,
            objects,
        })
    }
}
