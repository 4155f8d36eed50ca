//! Symbolic assembly-puzzle environment.
//!
//! A board with `P` slots and `P` pieces; each slot accepts exactly one
//! piece. Slots may require the piece to be reoriented first and may list
//! prerequisite slots that must already hold their correct pieces
//! (interlocking). Actions are `(verb, object)` pairs over
//! `{pick up, insert, reorient, put down}`; every precondition-satisfying
//! action still fails silently with probability `epsilon`.
//!
//! The environment is partially observable: observations are fixed-length
//! feature vectors that never reveal prerequisites, orientation
//! requirements, or the accepts mapping.

mod generate;
mod obs;

pub use generate::{
    generate_suite, generate_task, generate_task_variant, load_suite, save_suite, SuiteParams,
    TaskParams, SUITE_SCHEMA_VERSION,
};
pub use obs::{
    feature_layout, interaction_features, slot_feature_values, FeatureKind, Observation,
    INTERACTION_LEN, OBS_LEN, PIECE_WIDTH, SLOT_SENTINEL,
};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

pub type PieceId = u8;
pub type SlotId = u8;

/// Hard cap on pieces per task; observation padding width.
pub const P_MAX: usize = 8;
pub const NUM_VERBS: usize = 4;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("parameter {name} = {value} outside {lo}..={hi}")]
    ParamOutOfRange {
        name: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },
    #[error("invalid task: {0}")]
    InvalidTask(String),
    #[error("suite schema version {0} unsupported")]
    SchemaVersion(u32),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Action verbs, in canonical code order. The derived `Ord` is the
/// tie-break order used everywhere.
#[derive(
    Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(rename_all = "snake_case")]
pub enum Verb {
    PickUp,
    Insert,
    Reorient,
    PutDown,
}

impl Verb {
    pub const ALL: [Verb; NUM_VERBS] = [Verb::PickUp, Verb::Insert, Verb::Reorient, Verb::PutDown];

    pub fn code(self) -> usize {
        match self {
            Verb::PickUp => 0,
            Verb::Insert => 1,
            Verb::Reorient => 2,
            Verb::PutDown => 3,
        }
    }

    pub fn from_code(code: usize) -> Option<Verb> {
        Verb::ALL.get(code).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Verb::PickUp => "pick up",
            Verb::Insert => "insert",
            Verb::Reorient => "reorient",
            Verb::PutDown => "put down",
        }
    }
}

/// `(verb, object)` pair. Lexicographic `Ord` on (verb code, object id).
#[derive(
    Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub struct Action {
    pub verb: Verb,
    pub object: PieceId,
}

impl Action {
    pub fn new(verb: Verb, object: PieceId) -> Self {
        Action { verb, object }
    }

    /// All actions for a `P`-piece task in canonical (verb, object) order.
    pub fn enumerate(num_pieces: u8) -> impl Iterator<Item = Action> {
        Verb::ALL
            .into_iter()
            .flat_map(move |v| (0..num_pieces).map(move |o| Action::new(v, o)))
    }
}

impl std::fmt::Display for Action {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} {}", self.verb.name(), self.object)
    }
}

/// Where a piece begins the episode.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StartPos {
    Table,
    Slot(SlotId),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotSpec {
    pub slot_id: SlotId,
    pub accepts: PieceId,
    pub requires_orientation: bool,
    /// Sorted, deduplicated slot ids that must hold their correct pieces
    /// before this slot accepts an insertion.
    pub prerequisites: Vec<SlotId>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PieceSpec {
    pub piece_id: PieceId,
    pub color_id: u8,
    pub start: StartPos,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskInstance {
    pub task_id: u64,
    pub num_pieces: u8,
    pub slots: Vec<SlotSpec>,
    pub pieces: Vec<PieceSpec>,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PieceLocation {
    OnTable,
    Held,
    Inserted(SlotId),
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct PuzzleState {
    pub locations: Vec<PieceLocation>,
    pub oriented: Vec<bool>,
    pub step_count: u32,
}

impl PuzzleState {
    pub fn held_piece(&self) -> Option<PieceId> {
        self.locations
            .iter()
            .position(|l| *l == PieceLocation::Held)
            .map(|i| i as PieceId)
    }

    pub fn occupant(&self, slot: SlotId) -> Option<PieceId> {
        self.locations
            .iter()
            .position(|l| *l == PieceLocation::Inserted(slot))
            .map(|i| i as PieceId)
    }

    /// Physical equality: locations and orientation, ignoring the step
    /// counter (which advances on every `step` call, including invalid
    /// and failed ones).
    pub fn same_configuration(&self, other: &PuzzleState) -> bool {
        self.locations == other.locations && self.oriented == other.oriented
    }
}

/// Outcome of one `step` call.
#[derive(Clone, Debug)]
pub struct StepResult<T> {
    pub next_state: PuzzleState,
    pub observation: Observation<T>,
    pub attempted: Action,
    /// False when the epsilon failure fired (or the action was invalid).
    pub executed: bool,
    /// True when a precondition was violated; the state is unchanged.
    pub invalid: bool,
    pub reached_goal: bool,
}

impl TaskInstance {
    pub fn num_pieces(&self) -> usize {
        self.num_pieces as usize
    }

    /// Slot that accepts `piece`.
    pub fn slot_of(&self, piece: PieceId) -> SlotId {
        self.slots
            .iter()
            .find(|s| s.accepts == piece)
            .map(|s| s.slot_id)
            .expect("bijective accepts mapping")
    }

    pub fn slot(&self, slot: SlotId) -> &SlotSpec {
        &self.slots[slot as usize]
    }

    /// Structural invariants: bijective accepts, DAG prerequisites,
    /// distinct colors, consistent ids.
    pub fn validate(&self) -> Result<(), EnvError> {
        let p = self.num_pieces as usize;
        if !(2..=P_MAX).contains(&p) {
            return Err(EnvError::InvalidTask(format!("num_pieces {p} outside 2..={P_MAX}")));
        }
        if self.slots.len() != p || self.pieces.len() != p {
            return Err(EnvError::InvalidTask("slot/piece count mismatch".into()));
        }
        let mut accepted = vec![false; p];
        for (i, slot) in self.slots.iter().enumerate() {
            if slot.slot_id as usize != i {
                return Err(EnvError::InvalidTask("slot ids must be 0..P in order".into()));
            }
            let a = slot.accepts as usize;
            if a >= p || accepted[a] {
                return Err(EnvError::InvalidTask("accepts mapping not bijective".into()));
            }
            accepted[a] = true;
            for &pre in &slot.prerequisites {
                if pre as usize >= p || pre == slot.slot_id {
                    return Err(EnvError::InvalidTask("prerequisite out of range".into()));
                }
            }
        }
        let mut colors = std::collections::BTreeSet::new();
        for (i, piece) in self.pieces.iter().enumerate() {
            if piece.piece_id as usize != i {
                return Err(EnvError::InvalidTask("piece ids must be 0..P in order".into()));
            }
            if !colors.insert(piece.color_id) {
                return Err(EnvError::InvalidTask("duplicate color_id".into()));
            }
            if let StartPos::Slot(s) = piece.start {
                if s as usize >= p {
                    return Err(EnvError::InvalidTask("start slot out of range".into()));
                }
                if self.slot(s).accepts == piece.piece_id {
                    return Err(EnvError::InvalidTask(
                        "misplaced start must use a wrong slot".into(),
                    ));
                }
            }
        }
        // Kahn's algorithm over the prerequisite relation.
        let mut indeg = vec![0usize; p];
        for slot in &self.slots {
            indeg[slot.slot_id as usize] = slot.prerequisites.len();
        }
        let mut queue: Vec<usize> = (0..p).filter(|&i| indeg[i] == 0).collect();
        let mut seen = 0;
        while let Some(s) = queue.pop() {
            seen += 1;
            for slot in &self.slots {
                if slot.prerequisites.contains(&(s as SlotId)) {
                    let j = slot.slot_id as usize;
                    indeg[j] -= 1;
                    if indeg[j] == 0 {
                        queue.push(j);
                    }
                }
            }
        }
        if seen != p {
            return Err(EnvError::InvalidTask("prerequisite cycle".into()));
        }
        // No two pieces may start in the same slot.
        let mut used = std::collections::BTreeSet::new();
        for piece in &self.pieces {
            if let StartPos::Slot(s) = piece.start {
                if !used.insert(s) {
                    return Err(EnvError::InvalidTask("two pieces start in one slot".into()));
                }
            }
        }
        Ok(())
    }

    pub fn initial_state(&self) -> PuzzleState {
        let locations = self
            .pieces
            .iter()
            .map(|piece| match piece.start {
                StartPos::Table => PieceLocation::OnTable,
                StartPos::Slot(s) => PieceLocation::Inserted(s),
            })
            .collect();
        PuzzleState {
            locations,
            oriented: vec![false; self.num_pieces()],
            step_count: 0,
        }
    }

    /// Canonical fully-assembled state: every piece in its own slot,
    /// oriented where the slot demands it.
    pub fn goal_state(&self) -> PuzzleState {
        let locations = (0..self.num_pieces)
            .map(|piece| PieceLocation::Inserted(self.slot_of(piece)))
            .collect();
        let oriented = (0..self.num_pieces)
            .map(|piece| self.slot(self.slot_of(piece)).requires_orientation)
            .collect();
        PuzzleState {
            locations,
            oriented,
            step_count: 0,
        }
    }

    /// Initial state plus current and goal observations.
    pub fn reset<T: Scalar>(&self) -> (PuzzleState, Observation<T>, Observation<T>) {
        let state = self.initial_state();
        let obs = self.encode(&state);
        let goal = self.encode(&self.goal_state());
        (state, obs, goal)
    }

    pub fn is_goal(&self, state: &PuzzleState) -> bool {
        (0..self.num_pieces).all(|piece| {
            state.locations[piece as usize] == PieceLocation::Inserted(self.slot_of(piece))
        })
    }

    pub fn encode<T: Scalar>(&self, state: &PuzzleState) -> Observation<T> {
        obs::encode_state(self, state)
    }

    /// Precondition check for `action` in `state`.
    pub fn action_valid(&self, state: &PuzzleState, action: Action) -> bool {
        let p = self.num_pieces;
        if action.object >= p {
            return false;
        }
        let obj = action.object as usize;
        match action.verb {
            Verb::PickUp => {
                if state.held_piece().is_some() {
                    return false;
                }
                match state.locations[obj] {
                    PieceLocation::OnTable => true,
                    PieceLocation::Held => false,
                    PieceLocation::Inserted(s) => {
                        // Removable unless some occupied slot lists s as a
                        // prerequisite (a piece is stacked on top of it).
                        !self.slots.iter().any(|slot| {
                            slot.prerequisites.contains(&s)
                                && state.occupant(slot.slot_id).is_some()
                        })
                    }
                }
            }
            Verb::Insert => {
                if state.locations[obj] != PieceLocation::Held {
                    return false;
                }
                let slot = self.slot(self.slot_of(action.object));
                if state.occupant(slot.slot_id).is_some() {
                    return false;
                }
                if slot.requires_orientation && !state.oriented[obj] {
                    return false;
                }
                slot.prerequisites
                    .iter()
                    .all(|&pre| state.occupant(pre) == Some(self.slot(pre).accepts))
            }
            Verb::Reorient | Verb::PutDown => state.locations[obj] == PieceLocation::Held,
        }
    }

    /// Deterministic transition (no failure rate, no step counting).
    /// Returns the successor and whether the action was valid; invalid
    /// actions leave the configuration untouched.
    pub fn apply_nominal(&self, state: &PuzzleState, action: Action) -> (PuzzleState, bool) {
        let mut next = state.clone();
        if !self.action_valid(state, action) {
            return (next, false);
        }
        let obj = action.object as usize;
        match action.verb {
            Verb::PickUp => next.locations[obj] = PieceLocation::Held,
            Verb::Insert => {
                next.locations[obj] = PieceLocation::Inserted(self.slot_of(action.object))
            }
            Verb::Reorient => next.oriented[obj] = true,
            Verb::PutDown => next.locations[obj] = PieceLocation::OnTable,
        }
        (next, true)
    }

    /// Execute `action` with failure rate `epsilon`. Invalid actions and
    /// epsilon failures both consume a timestep.
    pub fn step<T: Scalar, R: Rng + ?Sized>(
        &self,
        state: &PuzzleState,
        action: Action,
        rng: &mut R,
        epsilon: f64,
    ) -> StepResult<T> {
        let valid = self.action_valid(state, action);
        let fail = valid && epsilon > 0.0 && rng.gen::<f64>() < epsilon;
        let mut next_state = if valid && !fail {
            self.apply_nominal(state, action).0
        } else {
            state.clone()
        };
        next_state.step_count = state.step_count + 1;
        let observation = self.encode(&next_state);
        let reached_goal = self.is_goal(&next_state);
        StepResult {
            next_state,
            observation,
            attempted: action,
            executed: valid && !fail,
            invalid: !valid,
            reached_goal,
        }
    }

    /// Exactly the actions whose preconditions hold, in canonical order.
    pub fn legal_actions(&self, state: &PuzzleState) -> Vec<Action> {
        Action::enumerate(self.num_pieces)
            .filter(|&a| self.action_valid(state, a))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeding::root_rng;

    fn small_task() -> TaskInstance {
        // Two pieces; slot 1 depends on slot 0 and needs orientation.
        TaskInstance {
            task_id: 0,
            num_pieces: 2,
            slots: vec![
                SlotSpec {
                    slot_id: 0,
                    accepts: 0,
                    requires_orientation: false,
                    prerequisites: vec![],
                },
                SlotSpec {
                    slot_id: 1,
                    accepts: 1,
                    requires_orientation: true,
                    prerequisites: vec![0],
                },
            ],
            pieces: vec![
                PieceSpec {
                    piece_id: 0,
                    color_id: 3,
                    start: StartPos::Table,
                },
                PieceSpec {
                    piece_id: 1,
                    color_id: 5,
                    start: StartPos::Table,
                },
            ],
            seed: 0,
        }
    }

    #[test]
    fn reset_all_on_table() {
        let task = small_task();
        let (state, _, _) = task.reset::<f64>();
        assert!(state.locations.iter().all(|l| *l == PieceLocation::OnTable));
        assert_eq!(state.held_piece(), None);
        assert!(!task.is_goal(&state));
    }

    #[test]
    fn reset_is_deterministic() {
        let task = small_task();
        let (s1, o1, g1) = task.reset::<f64>();
        let (s2, o2, g2) = task.reset::<f64>();
        assert_eq!(s1, s2);
        assert_eq!(o1, o2);
        assert_eq!(g1, g2);
    }

    #[test]
    fn insert_requires_prerequisite() {
        let task = small_task();
        let mut state = task.initial_state();
        state.locations[1] = PieceLocation::Held;
        state.oriented[1] = true;
        // Slot 0 still empty, so inserting piece 1 is invalid.
        let mut rng = root_rng(0);
        let r: StepResult<f64> = task.step(&state, Action::new(Verb::Insert, 1), &mut rng, 0.0);
        assert!(r.invalid);
        assert!(!r.executed);
        assert!(r.next_state.same_configuration(&state));
        assert_eq!(r.next_state.step_count, state.step_count + 1);
    }

    #[test]
    fn insert_into_unblocked_slot_executes() {
        let task = small_task();
        let mut state = task.initial_state();
        state.locations[0] = PieceLocation::Held;
        let mut rng = root_rng(0);
        let r: StepResult<f64> = task.step(&state, Action::new(Verb::Insert, 0), &mut rng, 0.0);
        assert!(r.executed);
        assert!(!r.invalid);
        assert_eq!(r.next_state.locations[0], PieceLocation::Inserted(0));
    }

    #[test]
    fn insert_needs_orientation_when_required() {
        let task = small_task();
        let mut state = task.initial_state();
        state.locations[0] = PieceLocation::Inserted(0);
        state.locations[1] = PieceLocation::Held;
        assert!(!task.action_valid(&state, Action::new(Verb::Insert, 1)));
        state.oriented[1] = true;
        assert!(task.action_valid(&state, Action::new(Verb::Insert, 1)));
    }

    #[test]
    fn inserted_prerequisite_is_locked_while_dependent_filled() {
        let task = small_task();
        let mut state = task.initial_state();
        state.locations[0] = PieceLocation::Inserted(0);
        state.locations[1] = PieceLocation::Inserted(1);
        // Piece 1 sits in slot 1 which depends on slot 0: piece 0 locked.
        assert!(!task.action_valid(&state, Action::new(Verb::PickUp, 0)));
        assert!(task.action_valid(&state, Action::new(Verb::PickUp, 1)));
    }

    #[test]
    fn goal_detection() {
        let task = small_task();
        let goal = task.goal_state();
        assert!(task.is_goal(&goal));
        let mut one_away = goal.clone();
        one_away.locations[1] = PieceLocation::Held;
        assert!(!task.is_goal(&one_away));
    }

    #[test]
    fn legal_actions_match_step_validity() {
        // Exhaustive precondition oracle: for random 4-piece states,
        // legal_actions must equal filtering step() over all pairs.
        let params = TaskParams {
            pieces: 4,
            dep_density: 0.5,
            orient_frac: 0.5,
            misplace_prob: 0.3,
        };
        let mut rng = root_rng(42);
        for seed in 0..40u64 {
            let task = generate_task(seed, &params).unwrap();
            let mut state = task.initial_state();
            for _ in 0..30 {
                let legal = task.legal_actions(&state);
                let oracle: Vec<Action> = Action::enumerate(task.num_pieces)
                    .filter(|&a| {
                        let r: StepResult<f64> = task.step(&state, a, &mut root_rng(0), 0.0);
                        !r.invalid
                    })
                    .collect();
                assert_eq!(legal, oracle);
                // Random walk, mixing legal and arbitrary actions.
                let a = if !legal.is_empty() && rng.gen::<f64>() < 0.8 {
                    legal[rng.gen_range(0..legal.len())]
                } else {
                    Action::new(
                        Verb::from_code(rng.gen_range(0..NUM_VERBS)).unwrap(),
                        rng.gen_range(0..task.num_pieces),
                    )
                };
                let r: StepResult<f64> = task.step(&state, a, &mut rng, 0.0);
                state = r.next_state;
            }
        }
    }

    #[test]
    fn legal_actions_when_everything_inserted() {
        let task = small_task();
        let goal = task.goal_state();
        let legal = task.legal_actions(&goal);
        // Only removable inserted pieces can be picked; piece 0 is locked
        // under piece 1.
        assert_eq!(legal, vec![Action::new(Verb::PickUp, 1)]);
    }

    #[test]
    fn legal_actions_all_on_table() {
        let task = small_task();
        let state = task.initial_state();
        let legal = task.legal_actions(&state);
        assert_eq!(
            legal,
            vec![Action::new(Verb::PickUp, 0), Action::new(Verb::PickUp, 1)]
        );
    }

    #[test]
    fn epsilon_failure_rate_is_calibrated() {
        // ~Binomial(10^4, 0.1); +-0.01 is > 3 sigma.
        let task = small_task();
        let state = task.initial_state();
        let action = Action::new(Verb::PickUp, 0);
        let mut rng = root_rng(2024);
        let mut failures = 0u32;
        let n = 10_000;
        for _ in 0..n {
            let r: StepResult<f64> = task.step(&state, action, &mut rng, 0.1);
            assert!(!r.invalid);
            if !r.executed {
                failures += 1;
            }
        }
        let frac = f64::from(failures) / f64::from(n);
        assert!((frac - 0.1).abs() <= 0.01, "failure fraction {frac}");
    }

    #[test]
    fn state_invariants_under_action_fuzzing() {
        // >= 10^5 random steps across random tasks: at most one piece
        // held, no slot doubly occupied, invalid steps leave the
        // configuration untouched, observation length constant.
        let params = TaskParams {
            pieces: 5,
            dep_density: 0.4,
            orient_frac: 0.5,
            misplace_prob: 0.4,
        };
        let mut rng = root_rng(7);
        let mut total = 0u64;
        for seed in 0..100u64 {
            let task = generate_task(seed, &params).unwrap();
            let mut state = task.initial_state();
            for _ in 0..1_100 {
                let a = Action::new(
                    Verb::from_code(rng.gen_range(0..NUM_VERBS)).unwrap(),
                    rng.gen_range(0..task.num_pieces + 1), // may be out of range
                );
                let r: StepResult<f64> = task.step(&state, a, &mut rng, 0.05);
                if r.invalid {
                    assert!(r.next_state.same_configuration(&state));
                    assert!(!r.executed);
                }
                let held = r
                    .next_state
                    .locations
                    .iter()
                    .filter(|l| **l == PieceLocation::Held)
                    .count();
                assert!(held <= 1);
                let mut slots_used = std::collections::BTreeSet::new();
                for l in &r.next_state.locations {
                    if let PieceLocation::Inserted(s) = l {
                        assert!(slots_used.insert(*s), "slot {s} doubly occupied");
                    }
                }
                assert_eq!(r.observation.len(), OBS_LEN);
                state = r.next_state;
                total += 1;
            }
        }
        assert!(total >= 100_000);
    }

    #[test]
    fn step_with_zero_epsilon_is_deterministic() {
        let task = small_task();
        let state = task.initial_state();
        let a = Action::new(Verb::PickUp, 1);
        let r1: StepResult<f64> = task.step(&state, a, &mut root_rng(1), 0.0);
        let r2: StepResult<f64> = task.step(&state, a, &mut root_rng(999), 0.0);
        assert_eq!(r1.next_state, r2.next_state);
        assert_eq!(r1.observation, r2.observation);
    }
}
