//! Deterministic block pick-and-place simulator.
//!
//! The world is a 30×30 cm desk on which up to eight blocks sit in integer
//! stack levels (each block is 3 cm tall). The gripper holds at most one
//! block. Actions are `pick(x, y)` / `place(x, y)` primitives with
//! continuous coordinates; which primitive applies is dictated by the
//! gripper: hand empty → pick, hand full → place. Invalid actions are
//! no-ops so a planner can probe the entire action grid freely.
//!
//! Dynamics are simple deterministic rules rather than rigid-body physics:
//!
//! - A pick grabs the topmost uncovered block whose center lies within
//!   [`PICK_RADIUS`] of the action point; blocks it supported settle one
//!   level per pass.
//! - A place lands the held block on the highest block whose top face
//!   contains the action point, one level above it. If the lateral offset
//!   from the support's center exceeds [`STABILITY_MARGIN`], or the support
//!   has a slanted top (triangle, roof), or the landing would intersect a
//!   block at the same level, the block slides off and lands on the
//!   ground, displaced by [`SLIDE_OFFSET`] beyond the support's +x edge
//!   (clamped to the workspace).
//!
//! Every rule is a pure function of the state, so `step` is bit-exactly
//! reproducible.

mod dataset;
mod expert;
mod render;
mod tasks;

pub use dataset::{
    generate_dataset, generate_to_file, read_dataset, state_from_frame, write_dataset,
    DataGenConfig, Dataset, DatasetSummary, Episode, ExpertMode, ExpertStyleSerde, StopRule,
    DATASET_MAGIC,
};
pub use expert::{expert_action, expert_action_traced, optimal_action, ActionSource, Blueprint, BlueprintEntry, ExpertStyle};
pub use render::{render, ColorScheme, FactoredObservation, CHANNELS, CROP, IMAGE};
pub use tasks::Task;

/// Workspace side length in cm.
pub const WORKSPACE_CM: f32 = 30.0;
/// Block height in cm (all shapes).
pub const BLOCK_HEIGHT_CM: f32 = 3.0;
/// A pick succeeds when a pickable block's center is within this distance.
pub const PICK_RADIUS: f32 = 1.0;
/// Max lateral offset from the support center for a stable placement.
pub const STABILITY_MARGIN: f32 = 1.0;
/// Displacement beyond the support edge when a placement slides off.
pub const SLIDE_OFFSET: f32 = 3.0;
/// Ground-truth position reported for a block in the gripper.
pub const HAND_POSITION: [f32; 3] = [15.0, 15.0, 30.0];

/// Block shapes. Bricks and roofs are long along the x axis; triangles and
/// roofs have slanted tops nothing can rest on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
pub enum Shape {
    Cube,
    Brick,
    Triangle,
    Roof,
}

impl Shape {
    /// Footprint half-extents `(hx, hy)` in cm.
    pub fn half_extents(self) -> (f32, f32) {
        match self {
            Shape::Cube | Shape::Triangle => (1.5, 1.5),
            Shape::Brick | Shape::Roof => (4.5, 1.5),
        }
    }

    /// Whether another block can rest on top.
    pub fn flat_top(self) -> bool {
        matches!(self, Shape::Cube | Shape::Brick)
    }
}

/// Where a block currently is.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum Placement {
    OnBoard { x: f32, y: f32, level: u32 },
    InHand,
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Block {
    pub shape: Shape,
    pub place: Placement,
}

impl Block {
    pub fn on_board(shape: Shape, x: f32, y: f32, level: u32) -> Self {
        Block { shape, place: Placement::OnBoard { x, y, level } }
    }

    pub fn board_pose(&self) -> Option<(f32, f32, u32)> {
        match self.place {
            Placement::OnBoard { x, y, level } => Some((x, y, level)),
            Placement::InHand => None,
        }
    }

    /// Center position in cm, `z` measured to the block's mid-height;
    /// held blocks report [`HAND_POSITION`].
    pub fn position_cm(&self) -> [f32; 3] {
        match self.place {
            Placement::OnBoard { x, y, level } => {
                [x, y, level as f32 * BLOCK_HEIGHT_CM + BLOCK_HEIGHT_CM / 2.0]
            }
            Placement::InHand => HAND_POSITION,
        }
    }
}

/// The kind of motion primitive. `Pick` only acts when the hand is empty,
/// `Place` only when it is full.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum ActionKind {
    Pick,
    Place,
}

/// A pick or place at continuous workspace coordinates.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Action {
    pub kind: ActionKind,
    pub x: f32,
    pub y: f32,
}

impl Action {
    pub fn pick(x: f32, y: f32) -> Self {
        Action { kind: ActionKind::Pick, x, y }
    }
    pub fn place(x: f32, y: f32) -> Self {
        Action { kind: ActionKind::Place, x, y }
    }
}

/// Full simulator state: a slot-ordered list of blocks. Slot indices are
/// the stable ids that order observation channels within an episode.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SimState {
    pub blocks: Vec<Block>,
}

fn dist2(ax: f32, ay: f32, bx: f32, by: f32) -> f32 {
    let (dx, dy) = (ax - bx, ay - by);
    (dx * dx + dy * dy).sqrt()
}

impl SimState {
    pub fn new(blocks: Vec<Block>) -> Self {
        assert!(blocks.len() <= 8, "at most 8 blocks supported");
        SimState { blocks }
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    /// Slot of the held block, if any.
    pub fn held_slot(&self) -> Option<usize> {
        self.blocks.iter().position(|b| b.place == Placement::InHand)
    }

    /// The action kind the gripper currently admits.
    pub fn required_kind(&self) -> ActionKind {
        if self.held_slot().is_some() {
            ActionKind::Place
        } else {
            ActionKind::Pick
        }
    }

    /// True when block `below` supports block `above`: one level apart and
    /// the upper block's center lies within the lower block's footprint.
    fn supports(&self, below: usize, above: usize) -> bool {
        let (Some((bx, by, bl)), Some((ax, ay, al))) =
            (self.blocks[below].board_pose(), self.blocks[above].board_pose())
        else {
            return false;
        };
        if al != bl + 1 {
            return false;
        }
        let (hx, hy) = self.blocks[below].shape.half_extents();
        (ax - bx).abs() <= hx && (ay - by).abs() <= hy
    }

    /// A block is covered when it directly supports another block.
    pub fn is_covered(&self, slot: usize) -> bool {
        (0..self.blocks.len()).any(|other| other != slot && self.supports(slot, other))
    }

    fn footprints_overlap(&self, a: usize, bx: f32, by: f32, shape: Shape) -> bool {
        let Some((ax, ay, _)) = self.blocks[a].board_pose() else { return false };
        let (ahx, ahy) = self.blocks[a].shape.half_extents();
        let (bhx, bhy) = shape.half_extents();
        (ax - bx).abs() < ahx + bhx && (ay - by).abs() < ahy + bhy
    }

    /// Deterministic transition. Actions whose kind does not match the
    /// gripper state, picks that touch nothing, and places that cannot
    /// come to rest are all no-ops.
    pub fn step(&self, action: &Action) -> SimState {
        match (action.kind, self.held_slot()) {
            (ActionKind::Pick, None) => self.step_pick(action.x, action.y),
            (ActionKind::Place, Some(held)) => self.step_place(held, action.x, action.y),
            _ => self.clone(),
        }
    }

    fn step_pick(&self, x: f32, y: f32) -> SimState {
        let mut best: Option<(usize, u32, f32)> = None;
        for (slot, block) in self.blocks.iter().enumerate() {
            let Some((bx, by, level)) = block.board_pose() else { continue };
            if self.is_covered(slot) {
                continue;
            }
            let d = dist2(x, y, bx, by);
            if d > PICK_RADIUS {
                continue;
            }
            let better = match best {
                None => true,
                Some((_, bl, bd)) => level > bl || (level == bl && d < bd),
            };
            if better {
                best = Some((slot, level, d));
            }
        }
        let Some((slot, _, _)) = best else { return self.clone() };
        let mut next = self.clone();
        next.blocks[slot].place = Placement::InHand;
        next.settle();
        next
    }

    /// Drop unsupported elevated blocks one level per pass until stable.
    fn settle(&mut self) {
        loop {
            let mut drops = Vec::new();
            for (slot, block) in self.blocks.iter().enumerate() {
                let Some((_, _, level)) = block.board_pose() else { continue };
                if level == 0 {
                    continue;
                }
                let supported =
                    (0..self.blocks.len()).any(|o| o != slot && self.supports(o, slot));
                if !supported {
                    drops.push(slot);
                }
            }
            if drops.is_empty() {
                break;
            }
            for slot in drops {
                if let Placement::OnBoard { level, .. } = &mut self.blocks[slot].place {
                    *level -= 1;
                }
            }
        }
    }

    fn step_place(&self, held: usize, x: f32, y: f32) -> SimState {
        let shape = self.blocks[held].shape;
        match self.resolve_landing(held, shape, x, y, 0) {
            Some((lx, ly, level)) => {
                let mut next = self.clone();
                next.blocks[held].place = Placement::OnBoard { x: lx, y: ly, level };
                next
            }
            None => self.clone(),
        }
    }

    /// Find where a block released at `(x, y)` comes to rest. `None` means
    /// no legal resting position was found and the place is a no-op.
    fn resolve_landing(
        &self,
        held: usize,
        shape: Shape,
        x: f32,
        y: f32,
        depth: usize,
    ) -> Option<(f32, f32, u32)> {
        if depth > 8 {
            return None;
        }
        // Support: highest block whose top face contains the release point.
        let mut support: Option<usize> = None;
        for (slot, block) in self.blocks.iter().enumerate() {
            if slot == held {
                continue;
            }
            let Some((bx, by, level)) = block.board_pose() else { continue };
            let (hx, hy) = block.shape.half_extents();
            if (x - bx).abs() <= hx && (y - by).abs() <= hy {
                let better = match support {
                    None => true,
                    Some(s) => level > self.blocks[s].board_pose().unwrap().2,
                };
                if better {
                    support = Some(slot);
                }
            }
        }
        if let Some(s) = support {
            let (sx, sy, slevel) = self.blocks[s].board_pose().unwrap();
            let stable = self.blocks[s].shape.flat_top()
                && dist2(x, y, sx, sy) <= STABILITY_MARGIN
                && !self.level_collision(held, shape, x, y, slevel + 1);
            if stable {
                return Some((x, y, slevel + 1));
            }
            return self.slide_off(held, shape, s, y, depth);
        }
        // No support under the center: ground landing unless an edge
        // overlap blocks it.
        let obstacle = self.ground_obstacle(held, shape, x, y);
        match obstacle {
            None => Some((x, y, 0)),
            Some(o) => self.slide_off(held, shape, o, y, depth),
        }
    }

    /// Any same-level footprint overlap at a candidate landing pose.
    fn level_collision(&self, held: usize, shape: Shape, x: f32, y: f32, level: u32) -> bool {
        self.blocks.iter().enumerate().any(|(slot, b)| {
            slot != held
                && matches!(b.board_pose(), Some((_, _, l)) if l == level)
                && self.footprints_overlap(slot, x, y, shape)
        })
    }

    /// The block a ground landing at `(x, y)` would clip: highest, then
    /// nearest, then lowest slot.
    fn ground_obstacle(&self, held: usize, shape: Shape, x: f32, y: f32) -> Option<usize> {
        let mut best: Option<(usize, u32, f32)> = None;
        for (slot, block) in self.blocks.iter().enumerate() {
            if slot == held {
                continue;
            }
            let Some((bx, by, level)) = block.board_pose() else { continue };
            if level != 0 || !self.footprints_overlap(slot, x, y, shape) {
                continue;
            }
            let d = dist2(x, y, bx, by);
            let better = match best {
                None => true,
                Some((_, bl, bd)) => level > bl || (level == bl && d < bd),
            };
            if better {
                best = Some((slot, level, d));
            }
        }
        best.map(|(slot, _, _)| slot)
    }

    /// Slide off `support`: land beyond its +x edge, displaced by
    /// [`SLIDE_OFFSET`], clamped so the footprint stays on the desk.
    fn slide_off(
        &self,
        held: usize,
        shape: Shape,
        support: usize,
        y: f32,
        depth: usize,
    ) -> Option<(f32, f32, u32)> {
        let (sx, _, _) = self.blocks[support].board_pose().unwrap();
        let (shx, _) = self.blocks[support].shape.half_extents();
        let (hx, hy) = shape.half_extents();
        let nx = (sx + shx + SLIDE_OFFSET).clamp(hx, WORKSPACE_CM - hx);
        let ny = y.clamp(hy, WORKSPACE_CM - hy);
        self.resolve_landing(held, shape, nx, ny, depth + 1)
    }

    /// Ground-truth positions `(x, y, z)` in cm for every slot.
    pub fn positions_cm(&self) -> Vec<[f32; 3]> {
        self.blocks.iter().map(|b| b.position_cm()).collect()
    }

    /// Per-slot in-hand flags.
    pub fn in_hand_flags(&self) -> Vec<bool> {
        self.blocks.iter().map(|b| b.place == Placement::InHand).collect()
    }

    /// Checks the structural invariants; used by tests and debug builds.
    pub fn validate(&self) -> std::result::Result<(), String> {
        let held = self.blocks.iter().filter(|b| b.place == Placement::InHand).count();
        if held > 1 {
            return Err(format!("{held} blocks in hand"));
        }
        for (i, a) in self.blocks.iter().enumerate() {
            let Some((ax, ay, al)) = a.board_pose() else { continue };
            for (j, b) in self.blocks.iter().enumerate().skip(i + 1) {
                let Some((bx, by, bl)) = b.board_pose() else { continue };
                if al == bl {
                    let (ahx, ahy) = a.shape.half_extents();
                    let (bhx, bhy) = b.shape.half_extents();
                    if (ax - bx).abs() < ahx + bhx && (ay - by).abs() < ahy + bhy {
                        return Err(format!("blocks {i} and {j} overlap at level {al}"));
                    }
                }
            }
            if al > 0 {
                let supported = (0..self.blocks.len()).any(|o| o != i && self.supports(o, i));
                if !supported {
                    return Err(format!("block {i} floats at level {al}"));
                }
                let on_slanted = (0..self.blocks.len()).any(|o| {
                    o != i && self.supports(o, i) && !self.blocks[o].shape.flat_top()
                });
                if on_slanted {
                    return Err(format!("block {i} rests on a slanted top"));
                }
            }
        }
        Ok(())
    }
}

/// Goal description: a rendered goal observation, the goal state for
/// ground-truth success checks, an optional placement order over slots,
/// and the position tolerance in cm.
#[derive(Clone, Debug)]
pub struct GoalSpec {
    pub observation: FactoredObservation,
    pub state: SimState,
    pub order: Option<Vec<usize>>,
    pub tolerance: f32,
    /// Color scheme the goal observation was rendered with; closed-loop
    /// planning renders live observations with the same scheme.
    pub colors: ColorScheme,
}

impl GoalSpec {
    pub fn from_state(
        state: SimState,
        order: Option<Vec<usize>>,
        tolerance: f32,
        colors: ColorScheme,
    ) -> Self {
        if let Some(ord) = &order {
            let mut seen = vec![false; state.len()];
            for &slot in ord {
                assert!(slot < state.len() && !seen[slot], "order must be a permutation of a subset");
                seen[slot] = true;
            }
        }
        let observation = render(&state, colors);
        GoalSpec { observation, state, order, tolerance, colors }
    }
}

/// True iff a shape-respecting bijection matches every block of `state`
/// to a block of `goal` within `tolerance` cm in (x, y) and at an equal
/// level. Held blocks only match held blocks. Mismatched shape multisets
/// yield `false`.
pub fn goal_reached(state: &SimState, goal: &GoalSpec) -> bool {
    state.len() == goal.state.len()
        && goal_match_count(state, &goal.state, goal.tolerance) == state.len()
}

/// Size of the largest shape-respecting partial matching within tolerance.
/// Used both for the success predicate and for the planner's progress
/// metric (fraction of goal blocks in place).
pub fn goal_match_count(state: &SimState, goal: &SimState, tolerance: f32) -> usize {
    let n = state.len();
    let m = goal.len();
    let compatible = |si: usize, gj: usize| -> bool {
        let a = &state.blocks[si];
        let b = &goal.blocks[gj];
        if a.shape != b.shape {
            return false;
        }
        match (a.board_pose(), b.board_pose()) {
            (Some((ax, ay, al)), Some((bx, by, bl))) => {
                al == bl && dist2(ax, ay, bx, by) <= tolerance
            }
            (None, None) => true,
            _ => false,
        }
    };
    // Kuhn's augmenting-path maximum bipartite matching; n, m <= 8.
    let mut match_goal: Vec<Option<usize>> = vec![None; m];
    fn augment(
        si: usize,
        compatible: &dyn Fn(usize, usize) -> bool,
        visited: &mut [bool],
        match_goal: &mut [Option<usize>],
    ) -> bool {
        for gj in 0..match_goal.len() {
            if visited[gj] || !compatible(si, gj) {
                continue;
            }
            visited[gj] = true;
            if match_goal[gj].is_none()
                || augment(match_goal[gj].unwrap(), compatible, visited, match_goal)
            {
                match_goal[gj] = Some(si);
                return true;
            }
        }
        false
    }
    let mut matched = 0;
    for si in 0..n {
        let mut visited = vec![false; m];
        if augment(si, &compatible, &mut visited, &mut match_goal) {
            matched += 1;
        }
    }
    matched
}
