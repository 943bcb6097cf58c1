//! Built-in block-structure tasks at desk scale.
//!
//! Each task fixes a block set and derives a per-episode construction
//! blueprint from the sampled initial scene: the structure is anchored at
//! slot 0's starting position (clamped away from the walls), so untouched
//! blocks already satisfy their own targets and optimal episodes stay
//! short. Tasks also expose a position-free structural predicate used to
//! delete episodes that accidentally build a held-out structure.

use super::expert::{Blueprint, BlueprintEntry};
use super::{Block, Placement, Shape, SimState, WORKSPACE_CM};
use crate::rng::Stream;
use crate::{Error, Result};
use rand::Rng;

/// Spacing between row targets in cm. Wide enough that a block within
/// goal tolerance of one target can never obstruct a neighboring one
/// (footprints are 3 cm, tolerance 1 cm).
const ROW_SPACING: f32 = 4.6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Task {
    /// Two of three cubes stacked; the third keeps its starting spot.
    Stack2,
    /// All three cubes in one stack.
    Stack3,
    /// Three cubes in an x-aligned row.
    Row3,
    /// Cube, cube, triangle roof on top.
    House3,
}

impl Task {
    pub fn parse(name: &str) -> Result<Task> {
        match name {
            "stack2" => Ok(Task::Stack2),
            "stack3" => Ok(Task::Stack3),
            "row3" => Ok(Task::Row3),
            "house3" => Ok(Task::House3),
            other => Err(Error::Config(format!(
                "unknown task `{other}` (expected stack2, stack3, row3 or house3)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Task::Stack2 => "stack2",
            Task::Stack3 => "stack3",
            Task::Row3 => "row3",
            Task::House3 => "house3",
        }
    }

    /// Block shapes, slot order.
    pub fn shapes(&self) -> Vec<Shape> {
        match self {
            Task::House3 => vec![Shape::Cube, Shape::Cube, Shape::Triangle],
            _ => vec![Shape::Cube; 3],
        }
    }

    /// Number of object slots.
    pub fn k(&self) -> usize {
        self.shapes().len()
    }

    /// Scatter all blocks on the ground without overlaps, rejecting
    /// scenes that already satisfy the task's structure.
    pub fn sample_initial(&self, rng: &mut Stream) -> SimState {
        let shapes = self.shapes();
        'scene: loop {
            let mut blocks: Vec<Block> = Vec::with_capacity(shapes.len());
            for &shape in &shapes {
                let (hx, hy) = shape.half_extents();
                let mut tries = 0;
                loop {
                    let x = rng.gen_range(hx + 1.0..WORKSPACE_CM - hx - 1.0);
                    let y = rng.gen_range(hy + 1.0..WORKSPACE_CM - hy - 1.0);
                    let clear = blocks.iter().all(|b| {
                        let (bx, by, _) = b.board_pose().unwrap();
                        let (bhx, bhy) = b.shape.half_extents();
                        (bx - x).abs() >= bhx + hx + 0.5 || (by - y).abs() >= bhy + hy + 0.5
                    });
                    if clear {
                        blocks.push(Block::on_board(shape, x, y, 0));
                        break;
                    }
                    tries += 1;
                    if tries > 100 {
                        continue 'scene;
                    }
                }
            }
            let state = SimState::new(blocks);
            if !self.structure_formed(&state) {
                return state;
            }
        }
    }

    /// Anchor position for the structure, derived from slot 0's start and
    /// clamped so every target (and any slide-off) stays on the desk.
    fn anchor(&self, initial: &SimState) -> (f32, f32) {
        let (x, y, _) = initial.blocks[0].board_pose().expect("initial blocks on board");
        match self {
            Task::Row3 => (x.clamp(7.0, WORKSPACE_CM - 7.0), y.clamp(3.0, WORKSPACE_CM - 3.0)),
            _ => (x.clamp(4.0, WORKSPACE_CM - 4.0), y.clamp(4.0, WORKSPACE_CM - 4.0)),
        }
    }

    /// Construction blueprint for an episode starting at `initial`.
    pub fn blueprint(&self, initial: &SimState, tolerance: f32) -> Blueprint {
        let (ax, ay) = self.anchor(initial);
        let entries = match self {
            Task::Stack2 => {
                // The third cube's target is its own starting spot, chosen
                // as the cube farthest from the anchor so the expert's
                // nearest-first picking never moves it.
                let (fx, fy) = initial
                    .blocks
                    .iter()
                    .filter_map(|b| b.board_pose())
                    .map(|(x, y, _)| (x, y))
                    .max_by(|a, b| {
                        let da = (a.0 - ax).powi(2) + (a.1 - ay).powi(2);
                        let db = (b.0 - ax).powi(2) + (b.1 - ay).powi(2);
                        da.partial_cmp(&db).unwrap()
                    })
                    .expect("stack2 has blocks");
                vec![
                    BlueprintEntry { shape: Shape::Cube, x: ax, y: ay, level: 0 },
                    BlueprintEntry { shape: Shape::Cube, x: ax, y: ay, level: 1 },
                    BlueprintEntry { shape: Shape::Cube, x: fx, y: fy, level: 0 },
                ]
            }
            Task::Stack3 => (0..3)
                .map(|l| BlueprintEntry { shape: Shape::Cube, x: ax, y: ay, level: l })
                .collect(),
            Task::Row3 => vec![
                BlueprintEntry { shape: Shape::Cube, x: ax, y: ay, level: 0 },
                BlueprintEntry { shape: Shape::Cube, x: ax + ROW_SPACING, y: ay, level: 0 },
                BlueprintEntry { shape: Shape::Cube, x: ax - ROW_SPACING, y: ay, level: 0 },
            ],
            Task::House3 => vec![
                BlueprintEntry { shape: Shape::Cube, x: ax, y: ay, level: 0 },
                BlueprintEntry { shape: Shape::Cube, x: ax, y: ay, level: 1 },
                BlueprintEntry { shape: Shape::Triangle, x: ax, y: ay, level: 2 },
            ],
        };
        Blueprint { entries, tolerance }
    }

    /// The goal state for an episode starting at `initial`: blueprint
    /// targets assigned to slots, untargeted blocks keeping their start.
    /// Also returns the slot placement order (bottom-up).
    pub fn goal_state(&self, initial: &SimState, tolerance: f32) -> (SimState, Vec<usize>) {
        let blueprint = self.blueprint(initial, tolerance);
        let mut goal = initial.clone();
        let shapes = self.shapes();
        let mut used = vec![false; shapes.len()];
        let mut order = Vec::with_capacity(blueprint.entries.len());
        for entry in &blueprint.entries {
            // Assign the lowest unused slot of the right shape; slot 0
            // first so the anchor block usually stays put.
            let slot = (0..shapes.len())
                .find(|&s| !used[s] && shapes[s] == entry.shape)
                .expect("blueprint consistent with task shapes");
            used[slot] = true;
            goal.blocks[slot] =
                Block { shape: entry.shape, place: Placement::OnBoard { x: entry.x, y: entry.y, level: entry.level } };
            order.push(slot);
        }
        (goal, order)
    }

    /// Position-free check that the task's structure exists somewhere in
    /// the state. Used to filter holdout structures out of training data.
    pub fn structure_formed(&self, state: &SimState) -> bool {
        let placed: Vec<(Shape, f32, f32, u32)> = state
            .blocks
            .iter()
            .filter_map(|b| b.board_pose().map(|(x, y, l)| (b.shape, x, y, l)))
            .collect();
        let stacked = |a: &(Shape, f32, f32, u32), b: &(Shape, f32, f32, u32)| {
            b.3 == a.3 + 1 && ((a.1 - b.1).powi(2) + (a.2 - b.2).powi(2)).sqrt() <= 1.2
        };
        match self {
            Task::Stack2 => placed.iter().any(|a| {
                placed.iter().any(|b| a.0 == Shape::Cube && b.0 == Shape::Cube && stacked(a, b))
            }),
            Task::Stack3 | Task::House3 => {
                let top_shape = if *self == Task::House3 { Shape::Triangle } else { Shape::Cube };
                placed.iter().any(|a| {
                    a.0 == Shape::Cube
                        && placed.iter().any(|b| {
                            b.0 == Shape::Cube
                                && stacked(a, b)
                                && placed.iter().any(|c| c.0 == top_shape && stacked(b, c))
                        })
                })
            }
            Task::Row3 => {
                // Any x-aligned row of three ground cubes with near-uniform
                // spacing in the buildable range.
                let cubes: Vec<&(Shape, f32, f32, u32)> = placed
                    .iter()
                    .filter(|p| p.0 == Shape::Cube && p.3 == 0)
                    .collect();
                for a in &cubes {
                    for b in &cubes {
                        for c in &cubes {
                            if std::ptr::eq(*a, *b) || std::ptr::eq(*a, *c) || std::ptr::eq(*b, *c)
                            {
                                continue;
                            }
                            let aligned = (a.2 - b.2).abs() <= 1.0 && (b.2 - c.2).abs() <= 1.0;
                            let d1 = b.1 - a.1;
                            let d2 = c.1 - b.1;
                            let spaced = (3.2..=6.0).contains(&d1) && (3.2..=6.0).contains(&d2);
                            if aligned && spaced {
                                return true;
                            }
                        }
                    }
                }
                false
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use crate::sim::expert::optimal_action;

    #[test]
    fn initial_scenes_are_valid_and_unsolved() {
        for task in [Task::Stack2, Task::Stack3, Task::Row3, Task::House3] {
            let mut rng = rng::stream(17, 0);
            for _ in 0..20 {
                let s = task.sample_initial(&mut rng);
                s.validate().unwrap();
                assert!(!task.structure_formed(&s), "{}", task.name());
            }
        }
    }

    #[test]
    fn optimal_episodes_reach_every_goal() {
        for task in [Task::Stack2, Task::Stack3, Task::Row3, Task::House3] {
            let mut rng = rng::stream(23, 1);
            for ep in 0..10 {
                let mut state = task.sample_initial(&mut rng);
                let blueprint = task.blueprint(&state, 1.0);
                let (goal, order) = task.goal_state(&state, 1.0);
                assert_eq!(order.len(), blueprint.entries.len());
                for _ in 0..12 {
                    match optimal_action(&state, &blueprint) {
                        Some(a) => state = state.step(&a),
                        None => break,
                    }
                }
                let spec = crate::sim::GoalSpec::from_state(
                    goal,
                    Some(order),
                    1.0,
                    crate::sim::ColorScheme::UniformRed,
                );
                assert!(
                    crate::sim::goal_reached(&state, &spec),
                    "task {} episode {ep}",
                    task.name()
                );
                assert!(task.structure_formed(&state));
            }
        }
    }

    #[test]
    fn goal_states_satisfy_sim_invariants() {
        for task in [Task::Stack2, Task::Stack3, Task::Row3, Task::House3] {
            let mut rng = rng::stream(31, 2);
            let s = task.sample_initial(&mut rng);
            let (goal, _) = task.goal_state(&s, 1.0);
            goal.validate().unwrap();
        }
    }

    #[test]
    fn row_predicate_rejects_stacks_and_vice_versa() {
        let mut rng = rng::stream(37, 3);
        let s = Task::Stack3.sample_initial(&mut rng);
        let (stack_goal, _) = Task::Stack3.goal_state(&s, 1.0);
        assert!(Task::Stack3.structure_formed(&stack_goal));
        assert!(!Task::Row3.structure_formed(&stack_goal));
        let (row_goal, _) = Task::Row3.goal_state(&s, 1.0);
        assert!(Task::Row3.structure_formed(&row_goal));
        assert!(!Task::Stack3.structure_formed(&row_goal));
    }
}
