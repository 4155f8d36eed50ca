//! Observation encoding.
//!
//! Fixed-length feature vector, `P_MAX` piece blocks of [`PIECE_WIDTH`]
//! features each: color one-hot (`P_MAX`), location one-hot (3: table,
//! held, inserted), oriented bit, and the occupied-slot feature
//! (`slot_id / P_MAX`, or [`SLOT_SENTINEL`] when not inserted). Piece
//! blocks beyond the task's `P` are all zero. Prerequisites, orientation
//! requirements, and the accepts mapping never appear.

use serde::{Deserialize, Serialize};

use super::{PieceLocation, PuzzleState, TaskInstance, P_MAX};
use crate::scalar::{s, Scalar};

/// Features per piece block.
pub const PIECE_WIDTH: usize = P_MAX + 3 + 1 + 1;
/// Total observation length; constant across all tasks.
pub const OBS_LEN: usize = P_MAX * PIECE_WIDTH;
/// Slot feature value for pieces that are not inserted.
pub const SLOT_SENTINEL: f64 = -1.0;

/// Partial feature-vector view of a state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation<T>(pub Vec<T>);

impl<T: Scalar> Observation<T> {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.0
    }
}

/// What a feature position holds; drives observation corruption.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FeatureKind {
    /// 0/1 flag (color and location one-hots, oriented bit).
    Bit,
    /// Occupied-slot feature: `SLOT_SENTINEL` or `slot_id / P_MAX`.
    SlotIndex,
}

/// Per-position feature kinds, length [`OBS_LEN`].
pub fn feature_layout() -> Vec<FeatureKind> {
    let mut kinds = Vec::with_capacity(OBS_LEN);
    for _ in 0..P_MAX {
        kinds.extend(std::iter::repeat(FeatureKind::Bit).take(PIECE_WIDTH - 1));
        kinds.push(FeatureKind::SlotIndex);
    }
    kinds
}

/// Valid values a [`FeatureKind::SlotIndex`] feature can take.
pub fn slot_feature_values<T: Scalar>() -> Vec<T> {
    let mut vals = vec![s(SLOT_SENTINEL)];
    vals.extend((0..P_MAX).map(|i| s::<T>(i as f64 / P_MAX as f64)));
    vals
}

/// Width of [`interaction_features`] output.
pub const INTERACTION_LEN: usize = P_MAX * 3;

/// Relations between a current and a goal observation, computable without
/// any hidden task knowledge: per piece, whether it already sits in its
/// goal slot, whether another piece currently occupies its goal slot, and
/// whether the goal demands an orientation it lacks. Models append these
/// to their raw inputs; corrupted observations yield corrupted relations.
pub fn interaction_features<T: Scalar>(
    obs: &Observation<T>,
    goal: &Observation<T>,
) -> Vec<T> {
    let half = s::<T>(0.5);
    let inserted = |o: &Observation<T>, piece: usize| o.0[piece * PIECE_WIDTH + P_MAX + 2] > half;
    let oriented = |o: &Observation<T>, piece: usize| o.0[piece * PIECE_WIDTH + P_MAX + 3] > half;
    let slot = |o: &Observation<T>, piece: usize| o.0[piece * PIECE_WIDTH + P_MAX + 4];
    let mut out = Vec::with_capacity(INTERACTION_LEN);
    for piece in 0..P_MAX {
        let goal_inserted = inserted(goal, piece);
        let in_goal_slot = goal_inserted
            && inserted(obs, piece)
            && slot(obs, piece) == slot(goal, piece);
        let goal_slot_taken = goal_inserted
            && (0..P_MAX).any(|other| {
                other != piece
                    && inserted(obs, other)
                    && slot(obs, other) == slot(goal, piece)
            });
        let needs_orientation = oriented(goal, piece) && !oriented(obs, piece);
        out.push(if in_goal_slot { T::one() } else { T::zero() });
        out.push(if goal_slot_taken { T::one() } else { T::zero() });
        out.push(if needs_orientation { T::one() } else { T::zero() });
    }
    out
}

pub(super) fn encode_state<T: Scalar>(task: &TaskInstance, state: &PuzzleState) -> Observation<T> {
    let mut data = vec![T::zero(); OBS_LEN];
    for piece in 0..task.num_pieces() {
        let base = piece * PIECE_WIDTH;
        let color = task.pieces[piece].color_id as usize;
        data[base + color] = T::one();
        let loc_base = base + P_MAX;
        let slot_feature = match state.locations[piece] {
            PieceLocation::OnTable => {
                data[loc_base] = T::one();
                s(SLOT_SENTINEL)
            }
            PieceLocation::Held => {
                data[loc_base + 1] = T::one();
                s(SLOT_SENTINEL)
            }
            PieceLocation::Inserted(slot) => {
                data[loc_base + 2] = T::one();
                s(slot as f64 / P_MAX as f64)
            }
        };
        if state.oriented[piece] {
            data[base + P_MAX + 3] = T::one();
        }
        data[base + P_MAX + 4] = slot_feature;
    }
    Observation(data)
}
