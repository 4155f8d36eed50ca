//! Expert oracle: exact goal distances and optimal actions.
//!
//! The reachable state space of a task (P <= 8) is small, so the oracle
//! sweeps it once with a forward breadth-first exploration, then runs a
//! backward BFS from the goal to label every state with its exact
//! remaining-step count. Queries after the sweep are table lookups.
//!
//! States are canonicalized before caching: the step counter is dropped
//! and orientation bits of pieces whose own slot never checks orientation
//! are masked (they cannot affect any precondition or the goal test, so
//! distances are preserved).

use std::cell::RefCell;
use std::collections::{HashMap, HashSet, VecDeque};

use thiserror::Error;

use crate::env::{Action, PieceLocation, PuzzleState, TaskInstance};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ExpertError {
    #[error("goal unreachable from the queried state")]
    Unreachable,
    #[error("expert action requested at the goal state")]
    AtGoal,
}

/// Advantage of an H-step window: reduction in goal distance.
pub fn advantage(d_t: u32, d_th: u32) -> i64 {
    i64::from(d_t) - i64::from(d_th)
}

/// Per-task distance cache plus the search machinery that fills it.
pub struct Expert<'a> {
    task: &'a TaskInstance,
    graph: RefCell<SearchGraph>,
}

#[derive(Default)]
struct SearchGraph {
    /// Canonical state -> optimal remaining steps, for states that reach
    /// the goal.
    dist: HashMap<u64, u32>,
    explored: HashSet<u64>,
    preds: HashMap<u64, Vec<u64>>,
}

const LOC_TABLE: u64 = 0;
const LOC_HELD: u64 = 1;
const LOC_SLOT0: u64 = 2;
const PIECE_BITS: u32 = 5;

impl<'a> Expert<'a> {
    pub fn new(task: &'a TaskInstance) -> Self {
        assert!(task.num_pieces() <= 8, "oracle supports P <= 8");
        Expert {
            task,
            graph: RefCell::new(SearchGraph::default()),
        }
    }

    pub fn task(&self) -> &TaskInstance {
        self.task
    }

    fn orientation_relevant(&self, piece: usize) -> bool {
        let own = self.task.slot_of(piece as u8);
        self.task.slot(own).requires_orientation
    }

    fn pack(&self, state: &PuzzleState) -> u64 {
        let mut key = 0u64;
        for piece in 0..self.task.num_pieces() {
            let loc = match state.locations[piece] {
                PieceLocation::OnTable => LOC_TABLE,
                PieceLocation::Held => LOC_HELD,
                PieceLocation::Inserted(s) => LOC_SLOT0 + u64::from(s),
            };
            let oriented = u64::from(state.oriented[piece] && self.orientation_relevant(piece));
            key |= (loc | (oriented << 4)) << (piece as u32 * PIECE_BITS);
        }
        key
    }

    fn unpack(&self, key: u64) -> PuzzleState {
        let p = self.task.num_pieces();
        let mut locations = Vec::with_capacity(p);
        let mut oriented = Vec::with_capacity(p);
        for piece in 0..p {
            let bits = (key >> (piece as u32 * PIECE_BITS)) & 0x1F;
            let loc = match bits & 0xF {
                LOC_TABLE => PieceLocation::OnTable,
                LOC_HELD => PieceLocation::Held,
                s => PieceLocation::Inserted((s - LOC_SLOT0) as u8),
            };
            locations.push(loc);
            oriented.push(bits >> 4 == 1);
        }
        PuzzleState {
            locations,
            oriented,
            step_count: 0,
        }
    }

    /// Forward-sweep the reachable set from `root` (if new), then refresh
    /// backward distances from the goal.
    fn ensure_covered(&self, state: &PuzzleState) {
        let key = self.pack(state);
        let mut graph = self.graph.borrow_mut();
        if graph.explored.contains(&key) {
            return;
        }
        let mut queue = VecDeque::new();
        let mut roots = vec![key];
        // Seed with the task's initial state too so one sweep usually
        // covers the whole episode.
        let init_key = self.pack(&self.task.initial_state());
        if !graph.explored.contains(&init_key) {
            roots.push(init_key);
        }
        for root in roots {
            if graph.explored.insert(root) {
                queue.push_back(root);
            }
        }
        while let Some(cur) = queue.pop_front() {
            let cur_state = self.unpack(cur);
            for action in self.task.legal_actions(&cur_state) {
                let (next, valid) = self.task.apply_nominal(&cur_state, action);
                debug_assert!(valid);
                let next_key = self.pack(&next);
                if next_key == cur {
                    continue; // canonical self-loop (e.g. irrelevant reorient)
                }
                graph.preds.entry(next_key).or_default().push(cur);
                if graph.explored.insert(next_key) {
                    queue.push_back(next_key);
                }
            }
        }
        // Backward BFS from every goal-satisfying explored state.
        graph.dist.clear();
        let mut back = VecDeque::new();
        let goal_keys: Vec<u64> = graph
            .explored
            .iter()
            .copied()
            .filter(|&k| self.task.is_goal(&self.unpack(k)))
            .collect();
        for g in goal_keys {
            graph.dist.insert(g, 0);
            back.push_back(g);
        }
        while let Some(cur) = back.pop_front() {
            let d = graph.dist[&cur];
            let preds = match graph.preds.get(&cur) {
                Some(p) => p.clone(),
                None => continue,
            };
            for p in preds {
                if !graph.dist.contains_key(&p) {
                    graph.dist.insert(p, d + 1);
                    back.push_back(p);
                }
            }
        }
    }

    /// Length of the shortest action sequence to the goal under nominal
    /// (failure-free) dynamics. Zero exactly at the goal.
    pub fn goal_distance(&self, state: &PuzzleState) -> Result<u32, ExpertError> {
        self.ensure_covered(state);
        let key = self.pack(state);
        self.graph
            .borrow()
            .dist
            .get(&key)
            .copied()
            .ok_or(ExpertError::Unreachable)
    }

    /// First action of a shortest plan; ties broken by lowest
    /// (verb code, object id).
    pub fn action(&self, state: &PuzzleState) -> Result<Action, ExpertError> {
        let d = self.goal_distance(state)?;
        if d == 0 {
            return Err(ExpertError::AtGoal);
        }
        let graph = self.graph.borrow();
        for action in self.task.legal_actions(state) {
            let (next, _) = self.task.apply_nominal(state, action);
            let next_key = self.pack(&next);
            if graph.dist.get(&next_key) == Some(&(d - 1)) {
                return Ok(action);
            }
        }
        unreachable!("distance {d} > 0 must have a descending action");
    }

    /// Number of canonical states currently explored (diagnostics).
    pub fn explored_states(&self) -> usize {
        self.graph.borrow().explored.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{
        generate_task, PieceSpec, SlotSpec, StartPos, TaskParams, Verb, P_MAX,
    };

    fn free_task(pieces: u8) -> TaskInstance {
        // No dependencies, no orientation, identity accepts.
        TaskInstance {
            task_id: 0,
            num_pieces: pieces,
            slots: (0..pieces)
                .map(|slot_id| SlotSpec {
                    slot_id,
                    accepts: slot_id,
                    requires_orientation: false,
                    prerequisites: vec![],
                })
                .collect(),
            pieces: (0..pieces)
                .map(|piece_id| PieceSpec {
                    piece_id,
                    color_id: piece_id,
                    start: StartPos::Table,
                })
                .collect(),
            seed: 0,
        }
    }

    #[test]
    fn distance_zero_exactly_at_goal() {
        let task = free_task(3);
        let expert = Expert::new(&task);
        assert_eq!(expert.goal_distance(&task.goal_state()).unwrap(), 0);
        assert!(expert.goal_distance(&task.initial_state()).unwrap() > 0);
    }

    #[test]
    fn two_free_pieces_take_four_steps() {
        let task = free_task(2);
        let expert = Expert::new(&task);
        assert_eq!(expert.goal_distance(&task.initial_state()).unwrap(), 4);
    }

    #[test]
    fn orientation_adds_one_step() {
        // Piece 0 already home; piece 1 on the table and its slot demands
        // orientation: pick, reorient, insert.
        let mut task = free_task(2);
        task.slots[1].requires_orientation = true;
        let mut state = task.initial_state();
        state.locations[0] = PieceLocation::Inserted(0);
        let expert = Expert::new(&task);
        assert_eq!(expert.goal_distance(&state).unwrap(), 3);
    }

    #[test]
    fn expert_inserts_held_oriented_piece() {
        let mut task = free_task(2);
        task.slots[1].requires_orientation = true;
        let mut state = task.initial_state();
        state.locations[0] = PieceLocation::Inserted(0);
        state.locations[1] = PieceLocation::Held;
        state.oriented[1] = true;
        let expert = Expert::new(&task);
        assert_eq!(expert.action(&state).unwrap(), Action::new(Verb::Insert, 1));
    }

    #[test]
    fn expert_removes_blocking_misplaced_piece() {
        // Piece 1 squats in slot 0; piece 0 waits on the table. The only
        // optimal move is evicting the squatter.
        let mut task = free_task(2);
        task.pieces[1].start = StartPos::Slot(0);
        let state = task.initial_state();
        let expert = Expert::new(&task);
        assert_eq!(expert.action(&state).unwrap(), Action::new(Verb::PickUp, 1));
        // pick 1, insert 1, pick 0, insert 0
        assert_eq!(expert.goal_distance(&state).unwrap(), 4);
    }

    #[test]
    fn ties_break_toward_lower_piece_id() {
        let task = free_task(3);
        let expert = Expert::new(&task);
        let action = expert.action(&task.initial_state()).unwrap();
        assert_eq!(action, Action::new(Verb::PickUp, 0));
    }

    #[test]
    fn action_at_goal_is_an_error() {
        let task = free_task(2);
        let expert = Expert::new(&task);
        assert_eq!(expert.action(&task.goal_state()), Err(ExpertError::AtGoal));
    }

    #[test]
    fn unreachable_goal_is_reported_distinctly() {
        // Hand-built prerequisite cycle (never produced by the generator):
        // each slot requires the other, so no insertion can ever happen.
        let mut task = free_task(2);
        task.slots[0].prerequisites = vec![1];
        task.slots[1].prerequisites = vec![0];
        let expert = Expert::new(&task);
        assert_eq!(
            expert.goal_distance(&task.initial_state()),
            Err(ExpertError::Unreachable)
        );
    }

    #[test]
    fn advantage_is_distance_reduction() {
        assert_eq!(advantage(7, 3), 4);
        assert_eq!(advantage(3, 3), 0);
        assert_eq!(advantage(3, 7), -4);
    }

    #[test]
    fn expert_descends_one_step_at_a_time() {
        // Executing the expert action under nominal dynamics reduces the
        // distance by exactly one, across >= 200 random tasks.
        let mut checked = 0;
        for seed in 0..210u64 {
            let params = TaskParams {
                pieces: 3 + (seed % 3) as u8,
                dep_density: 0.5,
                orient_frac: 0.5,
                misplace_prob: 0.4,
            };
            let task = generate_task(seed, &params).unwrap();
            let expert = Expert::new(&task);
            let mut state = task.initial_state();
            let mut d = expert.goal_distance(&state).unwrap();
            while d > 0 {
                let a = expert.action(&state).unwrap();
                let (next, valid) = task.apply_nominal(&state, a);
                assert!(valid, "expert action must be valid");
                let nd = expert.goal_distance(&next).unwrap();
                assert_eq!(nd, d - 1, "seed {seed}: distance must drop by 1");
                state = next;
                d = nd;
            }
            assert!(task.is_goal(&state));
            checked += 1;
        }
        assert!(checked >= 200);
    }

    #[test]
    fn distance_is_invariant_under_piece_relabeling() {
        // Apply a consistent piece permutation to task and state; the
        // distance may not change.
        let params = TaskParams {
            pieces: 4,
            dep_density: 0.5,
            orient_frac: 0.5,
            misplace_prob: 0.5,
        };
        let perm: [u8; 4] = [2, 0, 3, 1];
        for seed in 0..25u64 {
            let task = generate_task(seed, &params).unwrap();
            let p = task.num_pieces();
            let mut relabeled = task.clone();
            for slot in &mut relabeled.slots {
                slot.accepts = perm[slot.accepts as usize];
            }
            for (i, piece) in task.pieces.iter().enumerate() {
                let j = perm[i] as usize;
                relabeled.pieces[j] = PieceSpec {
                    piece_id: j as u8,
                    color_id: piece.color_id,
                    start: piece.start,
                };
            }
            // Swap colors to keep them distinct but arbitrary; colors do
            // not affect distances at all.
            for (i, piece) in relabeled.pieces.iter_mut().enumerate() {
                piece.color_id = (P_MAX - 1 - i) as u8;
            }
            relabeled.validate().unwrap();
            let state = task.initial_state();
            let mut permuted = relabeled.initial_state();
            for i in 0..p {
                permuted.locations[perm[i] as usize] = state.locations[i];
                permuted.oriented[perm[i] as usize] = state.oriented[i];
            }
            let d0 = Expert::new(&task).goal_distance(&state).unwrap();
            let d1 = Expert::new(&relabeled).goal_distance(&permuted).unwrap();
            assert_eq!(d0, d1, "seed {seed}");
        }
    }
}
