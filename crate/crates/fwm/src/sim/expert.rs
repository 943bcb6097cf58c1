//! Scripted data-collection policies.
//!
//! A [`Blueprint`] lists target poses in placement order (bottom-up). The
//! scripted core either re-places a block that sits on an unfinished
//! target, picks the nearest free block of the needed shape, or places the
//! held block on the first open target. Two mixtures wrap that core:
//!
//! - [`ExpertStyle::Cubes`]: scripted with probability 0.7, otherwise a
//!   uniform-random workspace coordinate; 1 cm uniform-disk noise is added
//!   to every emitted action.
//! - [`ExpertStyle::Shapes`]: scripted with probability 0.8; otherwise a
//!   pick targets a random uncovered block half the time and a random
//!   coordinate otherwise, while a place goes to a random coordinate.
//!   No extra noise.
//!
//! [`optimal_action`] is the noise-free scripted core, used to collect
//! evaluation trajectories.

use super::{Action, ActionKind, Placement, Shape, SimState, WORKSPACE_CM};
use crate::rng::Stream;
use rand::Rng;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BlueprintEntry {
    pub shape: Shape,
    pub x: f32,
    pub y: f32,
    pub level: u32,
}

/// Construction targets in placement order, bottom-up.
#[derive(Clone, Debug, PartialEq)]
pub struct Blueprint {
    pub entries: Vec<BlueprintEntry>,
    /// Tolerance for counting an entry as satisfied, in cm.
    pub tolerance: f32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExpertStyle {
    Cubes,
    Shapes,
}

/// Which branch of the mixture produced an action.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ActionSource {
    Scripted,
    Random,
}

impl Blueprint {
    /// Greedily assigns placed blocks to entries in order; returns per-entry
    /// satisfying slot (if any) and per-slot usage.
    fn assignment(&self, state: &SimState) -> (Vec<Option<usize>>, Vec<bool>) {
        let mut used = vec![false; state.len()];
        let mut sat = vec![None; self.entries.len()];
        for (ei, entry) in self.entries.iter().enumerate() {
            let mut best: Option<(usize, f32)> = None;
            for (slot, block) in state.blocks.iter().enumerate() {
                if used[slot] || block.shape != entry.shape {
                    continue;
                }
                let Some((x, y, level)) = block.board_pose() else { continue };
                if level != entry.level {
                    continue;
                }
                let d = ((x - entry.x).powi(2) + (y - entry.y).powi(2)).sqrt();
                if d <= self.tolerance && best.map_or(true, |(_, bd)| d < bd) {
                    best = Some((slot, d));
                }
            }
            if let Some((slot, _)) = best {
                used[slot] = true;
                sat[ei] = Some(slot);
            }
        }
        (sat, used)
    }

    /// First unsatisfied entry index, if any.
    pub fn next_open(&self, state: &SimState) -> Option<usize> {
        let (sat, _) = self.assignment(state);
        sat.iter().position(|s| s.is_none())
    }

    pub fn complete(&self, state: &SimState) -> bool {
        self.next_open(state).is_none()
    }
}

/// The deterministic scripted core. `None` when the blueprint is complete
/// or no useful action exists (the caller falls back to a random action).
pub fn optimal_action(state: &SimState, blueprint: &Blueprint) -> Option<Action> {
    let (sat, used) = blueprint.assignment(state);
    let open = sat.iter().position(|s| s.is_none())?;
    let entry = &blueprint.entries[open];

    match state.held_slot() {
        Some(held) => {
            if state.blocks[held].shape == entry.shape {
                Some(Action::place(entry.x, entry.y))
            } else {
                // Wrong block in hand: park it on free ground.
                park_spot(state, state.blocks[held].shape).map(|(x, y)| Action::place(x, y))
            }
        }
        None => {
            // A wrong block sitting on the open target must be cleared
            // first (it would block the placement).
            let blocker = state.blocks.iter().enumerate().find_map(|(slot, b)| {
                let (x, y, level) = b.board_pose()?;
                if used[slot] || state.is_covered(slot) {
                    return None;
                }
                let (hx, hy) = b.shape.half_extents();
                let (ehx, ehy) = entry.shape.half_extents();
                let overlaps = (x - entry.x).abs() < hx + ehx && (y - entry.y).abs() < hy + ehy;
                (level >= entry.level && overlaps).then_some((slot, x, y))
            });
            if let Some((_, x, y)) = blocker {
                return Some(Action::pick(x, y));
            }
            // Pick the nearest free, uncovered block of the right shape.
            let mut best: Option<(f32, f32, f32)> = None;
            for (slot, block) in state.blocks.iter().enumerate() {
                if used[slot] || block.shape != entry.shape || state.is_covered(slot) {
                    continue;
                }
                let Some((x, y, _)) = block.board_pose() else { continue };
                let d = ((x - entry.x).powi(2) + (y - entry.y).powi(2)).sqrt();
                if best.map_or(true, |(bd, _, _)| d < bd) {
                    best = Some((d, x, y));
                }
            }
            best.map(|(_, x, y)| Action::pick(x, y))
        }
    }
}

/// Deterministic scan for a free ground position.
fn park_spot(state: &SimState, shape: Shape) -> Option<(f32, f32)> {
    let (hx, hy) = shape.half_extents();
    let mut y = hy + 1.0;
    while y < WORKSPACE_CM - hy {
        let mut x = hx + 1.0;
        while x < WORKSPACE_CM - hx {
            let clear = state.blocks.iter().all(|b| match b.board_pose() {
                Some((bx, by, _)) => {
                    let (bhx, bhy) = b.shape.half_extents();
                    (bx - x).abs() >= bhx + hx + 1.0 || (by - y).abs() >= bhy + hy + 1.0
                }
                None => true,
            });
            if clear {
                return Some((x, y));
            }
            x += 2.0;
        }
        y += 2.0;
    }
    None
}

fn required_kind(state: &SimState) -> ActionKind {
    state.required_kind()
}

fn random_coordinate(rng: &mut Stream) -> (f32, f32) {
    (rng.gen_range(0.0..WORKSPACE_CM), rng.gen_range(0.0..WORKSPACE_CM))
}

/// Uniform sample over the unit disk scaled by `radius` (area-uniform).
fn disk_noise(rng: &mut Stream, radius: f32) -> (f32, f32) {
    let r = radius * rng.gen_range(0.0f32..1.0).sqrt();
    let theta = rng.gen_range(0.0f32..std::f32::consts::TAU);
    (r * theta.cos(), r * theta.sin())
}

/// Expert action plus which branch of the mixture produced it.
pub fn expert_action_traced(
    state: &SimState,
    blueprint: &Blueprint,
    style: ExpertStyle,
    rng: &mut Stream,
) -> (Action, ActionSource) {
    let kind = required_kind(state);
    let scripted_prob = match style {
        ExpertStyle::Cubes => 0.7,
        ExpertStyle::Shapes => 0.8,
    };
    let scripted = rng.gen_range(0.0f32..1.0) < scripted_prob;
    let (mut action, source) = if scripted {
        match optimal_action(state, blueprint) {
            Some(a) => (a, ActionSource::Scripted),
            None => (random_action(state, kind, style, rng), ActionSource::Random),
        }
    } else {
        (random_action(state, kind, style, rng), ActionSource::Random)
    };
    if style == ExpertStyle::Cubes {
        let (dx, dy) = disk_noise(rng, 1.0);
        action.x = (action.x + dx).clamp(0.0, WORKSPACE_CM);
        action.y = (action.y + dy).clamp(0.0, WORKSPACE_CM);
    }
    (action, source)
}

fn random_action(state: &SimState, kind: ActionKind, style: ExpertStyle, rng: &mut Stream) -> Action {
    match (style, kind) {
        (ExpertStyle::Shapes, ActionKind::Pick) => {
            // Half the time aim at a random uncovered block.
            if rng.gen_range(0.0f32..1.0) < 0.5 {
                let candidates: Vec<(f32, f32)> = state
                    .blocks
                    .iter()
                    .enumerate()
                    .filter(|(slot, b)| {
                        matches!(b.place, Placement::OnBoard { .. }) && !state.is_covered(*slot)
                    })
                    .filter_map(|(_, b)| b.board_pose().map(|(x, y, _)| (x, y)))
                    .collect();
                if !candidates.is_empty() {
                    let (x, y) = candidates[rng.gen_range(0..candidates.len())];
                    return Action::pick(x, y);
                }
            }
            let (x, y) = random_coordinate(rng);
            Action::pick(x, y)
        }
        _ => {
            let (x, y) = random_coordinate(rng);
            Action { kind, x, y }
        }
    }
}

/// Expert policy: scripted/random mixture per style, noise included.
pub fn expert_action(
    state: &SimState,
    blueprint: &Blueprint,
    style: ExpertStyle,
    rng: &mut Stream,
) -> Action {
    expert_action_traced(state, blueprint, style, rng).0
}
