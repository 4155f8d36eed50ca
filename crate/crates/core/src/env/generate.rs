//! Seeded task generation and suite files.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{EnvError, PieceSpec, SlotId, SlotSpec, StartPos, TaskInstance, P_MAX};
use crate::seeding::derived_rng;

pub const SUITE_SCHEMA_VERSION: u32 = 1;

const STRUCTURE_STREAM: u64 = 0x5354;
const PLACEMENT_STREAM: u64 = 0x504C;
const PIECES_STREAM: u64 = 0x5043;

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct TaskParams {
    pub pieces: u8,
    /// Probability of a prerequisite edge between any ordered slot pair.
    pub dep_density: f64,
    /// Probability a slot requires orientation.
    pub orient_frac: f64,
    /// Probability a piece starts inserted in a wrong slot.
    pub misplace_prob: f64,
}

fn check_prob(name: &'static str, value: f64) -> Result<(), EnvError> {
    if !(0.0..=1.0).contains(&value) || !value.is_finite() {
        return Err(EnvError::ParamOutOfRange {
            name,
            value,
            lo: 0.0,
            hi: 1.0,
        });
    }
    Ok(())
}

impl TaskParams {
    fn validate(&self) -> Result<(), EnvError> {
        if !(2..=P_MAX as u8).contains(&self.pieces) {
            return Err(EnvError::ParamOutOfRange {
                name: "pieces",
                value: f64::from(self.pieces),
                lo: 2.0,
                hi: P_MAX as f64,
            });
        }
        check_prob("dep_density", self.dep_density)?;
        check_prob("orient_frac", self.orient_frac)?;
        check_prob("misplace_prob", self.misplace_prob)
    }
}

/// Generate the canonical (variant 0) instance for `seed`.
pub fn generate_task(seed: u64, params: &TaskParams) -> Result<TaskInstance, EnvError> {
    generate_task_variant(seed, 0, params)
}

/// Generate an instance whose board structure depends only on `seed` and
/// whose initial placement also depends on `variant`. Variants of one seed
/// share slots, colors, and dependencies but start differently.
pub fn generate_task_variant(
    seed: u64,
    variant: u32,
    params: &TaskParams,
) -> Result<TaskInstance, EnvError> {
    params.validate()?;
    let p = params.pieces as usize;
    let mut rng = derived_rng(seed, &[STRUCTURE_STREAM]);

    // Bijective accepts mapping.
    let mut accepts: Vec<u8> = (0..params.pieces).collect();
    accepts.shuffle(&mut rng);

    // Random topological order, then edges earlier -> later.
    let mut order: Vec<SlotId> = (0..params.pieces).collect();
    order.shuffle(&mut rng);
    let mut prereqs: Vec<Vec<SlotId>> = vec![Vec::new(); p];
    for i in 0..p {
        for j in (i + 1)..p {
            if rng.gen::<f64>() < params.dep_density {
                prereqs[order[j] as usize].push(order[i]);
            }
        }
    }
    for pre in &mut prereqs {
        pre.sort_unstable();
    }

    let orientation: Vec<bool> = (0..p).map(|_| rng.gen::<f64>() < params.orient_frac).collect();

    let mut colors: Vec<u8> = (0..P_MAX as u8).collect();
    colors.shuffle(&mut rng);

    let slots: Vec<SlotSpec> = (0..params.pieces)
        .map(|slot_id| SlotSpec {
            slot_id,
            accepts: accepts[slot_id as usize],
            requires_orientation: orientation[slot_id as usize],
            prerequisites: prereqs[slot_id as usize].clone(),
        })
        .collect();

    // Initial placement: some pieces start inserted in a wrong slot.
    let mut place_rng = derived_rng(seed, &[PLACEMENT_STREAM, u64::from(variant)]);
    let misplace: Vec<bool> = (0..p)
        .map(|_| place_rng.gen::<f64>() < params.misplace_prob)
        .collect();
    let mut candidate_slots: Vec<SlotId> = (0..params.pieces).collect();
    candidate_slots.shuffle(&mut place_rng);
    let mut used = vec![false; p];
    let mut starts = vec![StartPos::Table; p];
    for piece in 0..params.pieces {
        if !misplace[piece as usize] {
            continue;
        }
        let own = slots
            .iter()
            .find(|s| s.accepts == piece)
            .map(|s| s.slot_id)
            .unwrap();
        if let Some(&slot) = candidate_slots
            .iter()
            .find(|&&sl| sl != own && !used[sl as usize])
        {
            used[slot as usize] = true;
            starts[piece as usize] = StartPos::Slot(slot);
        }
    }

    let pieces: Vec<PieceSpec> = (0..params.pieces)
        .map(|piece_id| PieceSpec {
            piece_id,
            color_id: colors[piece_id as usize],
            start: starts[piece_id as usize],
        })
        .collect();

    let task = TaskInstance {
        task_id: seed,
        num_pieces: params.pieces,
        slots,
        pieces,
        seed,
    };
    debug_assert!(task.validate().is_ok());
    Ok(task)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SuiteParams {
    pub base_seed: u64,
    pub count: u32,
    /// Initial-placement variants per structural seed.
    pub variants: u32,
    pub pieces_min: u8,
    pub pieces_max: u8,
    pub dep_density: f64,
    pub orient_frac: f64,
    pub misplace_prob: f64,
}

/// Generate `count * variants` tasks with sequential task ids. Task `i`
/// uses structural seed `base_seed + i`; piece counts are drawn uniformly
/// from `pieces_min..=pieces_max` per structural seed.
pub fn generate_suite(params: &SuiteParams) -> Result<Vec<TaskInstance>, EnvError> {
    if params.pieces_min > params.pieces_max {
        return Err(EnvError::ParamOutOfRange {
            name: "pieces_min",
            value: f64::from(params.pieces_min),
            lo: 2.0,
            hi: f64::from(params.pieces_max),
        });
    }
    let variants = params.variants.max(1);
    let mut tasks = Vec::with_capacity(params.count as usize * variants as usize);
    for i in 0..u64::from(params.count) {
        let seed = params.base_seed + i;
        let pieces = if params.pieces_min == params.pieces_max {
            params.pieces_min
        } else {
            derived_rng(seed, &[PIECES_STREAM])
                .gen_range(params.pieces_min..=params.pieces_max)
        };
        let task_params = TaskParams {
            pieces,
            dep_density: params.dep_density,
            orient_frac: params.orient_frac,
            misplace_prob: params.misplace_prob,
        };
        for v in 0..variants {
            let mut task = generate_task_variant(seed, v, &task_params)?;
            task.task_id = i * u64::from(variants) + u64::from(v);
            tasks.push(task);
        }
    }
    Ok(tasks)
}

#[derive(Serialize, Deserialize)]
struct SuiteFile {
    v: u32,
    tasks: Vec<TaskInstance>,
}

pub fn save_suite(path: &Path, tasks: &[TaskInstance]) -> Result<(), EnvError> {
    let file = SuiteFile {
        v: SUITE_SCHEMA_VERSION,
        tasks: tasks.to_vec(),
    };
    let text = serde_json::to_string_pretty(&file)?;
    std::fs::write(path, text)?;
    Ok(())
}

pub fn load_suite(path: &Path) -> Result<Vec<TaskInstance>, EnvError> {
    let text = std::fs::read_to_string(path)?;
    let file: SuiteFile = serde_json::from_str(&text)?;
    if file.v != SUITE_SCHEMA_VERSION {
        return Err(EnvError::SchemaVersion(file.v));
    }
    for task in &file.tasks {
        task.validate()?;
    }
    Ok(file.tasks)
}
