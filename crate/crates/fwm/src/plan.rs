//! One-step heuristic search over the action grid with model ensembles.
//!
//! Each planning step scores every action in a 100×100 grid of cell
//! centers spanning the workspace: the predicted next latent state is
//! matched to the goal latents (Hungarian, minimum cost), and each
//! matched object contributes its squared distance when close enough,
//! one step when the in-hand classifier fires, and two steps otherwise.
//! A sequential variant skips matching and walks the goal placement
//! order with a wrong-object penalty; a plain L2 variant sums matched
//! distances with no thresholds. Ensemble members score independently
//! (each with its own encoder and classifier) and the per-action mean
//! decides; exact ties go to the lowest row-major grid index.
//!
//! Scoring an action is a pure function of the frozen checkpoints, so
//! actions are evaluated in parallel chunks; the kernels guarantee the
//! floats match a serial evaluation bit for bit.

use crate::autodiff::{Mode, Tape};
use crate::model::{actions_tensor, LatentState, WorldModel};
use crate::sim::{
    goal_match_count, goal_reached, render, Action, ActionKind, FactoredObservation, GoalSpec,
    SimState, WORKSPACE_CM,
};
use crate::tensor::{sq_dist, Tensor};
use crate::{Error, Result};
use rayon::prelude::*;
use std::sync::OnceLock;

/// Heuristic parameters.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct HeuristicConfig {
    /// Goal threshold on squared latent distance.
    pub delta: f64,
    /// Actions per grid side.
    pub grid: usize,
    pub mode: HeuristicMode,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum HeuristicMode {
    /// Hungarian matching plus in-hand reasoning.
    PickPlace,
    /// Slot-aligned walk of the goal placement order.
    Sequential,
    /// Hungarian matching, plain squared distances.
    L2,
}

impl Default for HeuristicConfig {
    fn default() -> Self {
        HeuristicConfig { delta: 0.175, grid: 100, mode: HeuristicMode::PickPlace }
    }
}

impl HeuristicConfig {
    pub fn validate(&self) -> Result<()> {
        if self.delta <= 0.0 {
            return Err(Error::Config("delta must be positive".into()));
        }
        if self.grid == 0 {
            return Err(Error::Config("grid must be positive".into()));
        }
        Ok(())
    }
}

/// A set of world models sharing one architecture, differing only in
/// training seed.
#[derive(Clone, Debug)]
pub struct Ensemble {
    pub members: Vec<WorldModel>,
}

impl Ensemble {
    pub fn new(members: Vec<WorldModel>) -> Result<Ensemble> {
        if members.is_empty() {
            return Err(Error::Config("ensemble needs at least one member".into()));
        }
        let config = &members[0].config;
        if members.iter().any(|m| &m.config != config) {
            return Err(Error::Config("ensemble members must share one architecture".into()));
        }
        Ok(Ensemble { members })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

// ---- Hungarian matching -----------------------------------------------------

/// Shortest-augmenting-path assignment for an `n x m` cost matrix with
/// `n <= m` (row-major, finite costs). Returns column per row.
fn assignment_potentials(n: usize, m: usize, cost: &[f64]) -> Vec<usize> {
    debug_assert!(n <= m);
    // Standard potentials formulation, 1-indexed internally.
    let inf = f64::INFINITY;
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; m + 1];
    let mut way = vec![0usize; m + 1];
    let mut match_col = vec![0usize; m + 1]; // row matched to each column

    for i in 1..=n {
        match_col[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![inf; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = match_col[j0];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1) * m + (j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[match_col[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if match_col[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            match_col[j0] = match_col[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut result = vec![0usize; n];
    for j in 1..=m {
        if match_col[j] > 0 {
            result[match_col[j] - 1] = j - 1;
        }
    }
    result
}

fn assignment_total(n: usize, m: usize, cost: &[f64], assign: &[usize]) -> f64 {
    let mut total = 0.0;
    for (r, &c) in assign.iter().enumerate() {
        total += cost[r * m + c];
        let _ = n;
    }
    total
}

/// Minimum-total-cost assignment of rows to columns. When the matrix is
/// rectangular the smaller side is fully matched and the rest is
/// discarded. Among minimum-cost assignments the lexicographically
/// smallest (by row-ascending column choice) is returned.
///
/// Returns `(assignment, total)` where `assignment[r]` is the column
/// matched to row `r`; when there are more rows than columns the roles
/// are transposed internally and unmatched rows are omitted via
/// [`MatchResult::pairs`].
#[derive(Clone, Debug, PartialEq)]
pub struct MatchResult {
    /// `(row, column)` pairs for the matched smaller side.
    pub pairs: Vec<(usize, usize)>,
    pub total: f64,
}

pub fn hungarian_match(rows: usize, cols: usize, cost: &[f64]) -> Result<MatchResult> {
    if rows == 0 || cols == 0 {
        return Ok(MatchResult { pairs: Vec::new(), total: 0.0 });
    }
    if cost.len() != rows * cols || cost.iter().any(|c| !c.is_finite()) {
        return Err(Error::Config("cost matrix must be dense and finite".into()));
    }
    if rows > cols {
        // Transpose so the matched side is the rows.
        let mut t = vec![0.0f64; rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                t[c * rows + r] = cost[r * cols + c];
            }
        }
        let result = hungarian_match(cols, rows, &t)?;
        let pairs = result.pairs.iter().map(|&(r, c)| (c, r)).collect();
        return Ok(MatchResult { pairs, total: result.total });
    }

    // Lexicographic refinement: fix rows in order, choosing the smallest
    // column whose forced completion still attains the optimal total.
    // Totals are always recomputed as row-ascending entry sums, so
    // comparisons are consistent.
    let mut fixed_cols: Vec<usize> = Vec::with_capacity(rows);
    let mut free_cols: Vec<usize> = (0..cols).collect();
    for r in 0..rows {
        let remaining_rows = rows - r - 1;
        let mut best: Option<(f64, usize)> = None;
        for (slot, &candidate) in free_cols.iter().enumerate() {
            let head: f64 = fixed_cols
                .iter()
                .enumerate()
                .map(|(i, &c)| cost[i * cols + c])
                .sum::<f64>()
                + cost[r * cols + candidate];
            let tail = if remaining_rows == 0 {
                0.0
            } else {
                let rest: Vec<usize> =
                    free_cols.iter().copied().filter(|&c| c != candidate).collect();
                let mut sub = vec![0.0f64; remaining_rows * rest.len()];
                for rr in 0..remaining_rows {
                    for (cc, &col) in rest.iter().enumerate() {
                        sub[rr * rest.len() + cc] = cost[(r + 1 + rr) * cols + col];
                    }
                }
                let sub_assign = assignment_potentials(remaining_rows, rest.len(), &sub);
                assignment_total(remaining_rows, rest.len(), &sub, &sub_assign)
            };
            let total = head + tail;
            let better = match best {
                None => true,
                Some((bt, _)) => total < bt,
            };
            if better {
                best = Some((total, slot));
            }
        }
        let (_, slot) = best.expect("at least one column available");
        fixed_cols.push(free_cols.remove(slot));
    }
    let total: f64 =
        fixed_cols.iter().enumerate().map(|(r, &c)| cost[r * cols + c]).sum();
    Ok(MatchResult { pairs: fixed_cols.into_iter().enumerate().collect(), total })
}

/// Squared-latent-distance cost matrix between predicted and goal slots.
pub fn latent_cost_matrix(pred: &LatentState, goal: &LatentState) -> Vec<f64> {
    let mut cost = vec![0.0f64; pred.k * goal.k];
    for i in 0..pred.k {
        for j in 0..goal.k {
            cost[i * goal.k + j] = sq_dist(pred.slot(i), goal.slot(j));
        }
    }
    cost
}

// ---- heuristic scores --------------------------------------------------------

/// Pick-and-place score on a predicted latent state. `in_hand[k]` is the
/// classifier's verdict for predicted slot `k`.
pub fn pp_score(pred: &LatentState, goal: &LatentState, in_hand: &[bool], delta: f64) -> Result<f64> {
    let cost = latent_cost_matrix(pred, goal);
    let matching = hungarian_match(pred.k, goal.k, &cost)?;
    let mut h = 0.0;
    for &(k, g) in &matching.pairs {
        let d = cost[k * goal.k + g];
        if d < delta {
            h += d;
        } else if in_hand[k] {
            h += 1.0; // at least one step away: still needs placing
        } else {
            h += 2.0; // at least two steps away: pick then place
        }
    }
    Ok(h)
}

/// Sequential score: slots are walked in goal placement order with no
/// matching. Once any earlier object is out of place the in-hand bonus
/// becomes a wrong-object penalty.
pub fn seq_score(
    pred: &LatentState,
    goal: &LatentState,
    in_hand: &[bool],
    order: &[usize],
    delta: f64,
) -> f64 {
    let mut h = 0.0;
    let mut on_track = true;
    for &slot in order {
        let d = sq_dist(pred.slot(slot), goal.slot(slot));
        if d < delta {
            h += d;
        } else if in_hand[slot] {
            h += if on_track { 1.0 } else { 3.0 };
            on_track = false;
        } else {
            h += 2.0;
            on_track = false;
        }
    }
    h
}

/// Plain matched squared-distance score.
pub fn l2_score(pred: &LatentState, goal: &LatentState) -> Result<f64> {
    let cost = latent_cost_matrix(pred, goal);
    Ok(hungarian_match(pred.k, goal.k, &cost)?.total)
}

/// One-member heuristic for a single action: predicts the next latent
/// state and scores it per the configured mode.
pub fn heuristic(
    model: &WorldModel,
    z: &LatentState,
    action: &Action,
    goal_z: &LatentState,
    order: Option<&[usize]>,
    cfg: &HeuristicConfig,
) -> Result<f64> {
    let pred = model.transition_value(z, action)?;
    score_predicted(model, &pred, goal_z, order, cfg)
}

fn score_predicted(
    model: &WorldModel,
    pred: &LatentState,
    goal_z: &LatentState,
    order: Option<&[usize]>,
    cfg: &HeuristicConfig,
) -> Result<f64> {
    match cfg.mode {
        HeuristicMode::L2 => l2_score(pred, goal_z),
        HeuristicMode::PickPlace => {
            let in_hand = classify_slots(model, pred)?;
            pp_score(pred, goal_z, &in_hand, cfg.delta)
        }
        HeuristicMode::Sequential => {
            let order = order.ok_or_else(|| {
                Error::Config("sequential heuristic requires a goal placement order".into())
            })?;
            let in_hand = classify_slots(model, pred)?;
            Ok(seq_score(pred, goal_z, &in_hand, order, cfg.delta))
        }
    }
}

fn classify_slots(model: &WorldModel, z: &LatentState) -> Result<Vec<bool>> {
    (0..z.k).map(|i| model.inhand_predict(z.slot(i))).collect()
}

// ---- grid search --------------------------------------------------------------

/// The scored outcome of one planning step.
#[derive(Clone, Debug)]
pub struct PlanStepResult {
    pub action: Action,
    pub grid_index: usize,
    pub score: f64,
    /// Number of candidate actions scored (the full grid).
    pub evaluated: usize,
    /// Best five `(action, score)` alternatives, ascending score.
    pub top: Vec<(Action, f64)>,
}

/// Cell-center action for a row-major grid index.
pub fn grid_action(grid: usize, index: usize, kind: ActionKind) -> Action {
    let pitch = WORKSPACE_CM / grid as f32;
    let row = index / grid;
    let col = index % grid;
    Action { kind, x: (col as f32 + 0.5) * pitch, y: (row as f32 + 0.5) * pitch }
}

fn planner_pool() -> &'static rayon::ThreadPool {
    static POOL: OnceLock<rayon::ThreadPool> = OnceLock::new();
    POOL.get_or_init(|| {
        let mut builder = rayon::ThreadPoolBuilder::new();
        if let Ok(v) = std::env::var("FWM_THREADS") {
            if let Ok(n) = v.parse::<usize>() {
                builder = builder.num_threads(n.max(1));
            }
        }
        builder.build().expect("planner thread pool")
    })
}

const PLAN_CHUNK: usize = 250;

/// Scores every grid action with every ensemble member and returns the
/// argmin of the member-mean score. Member scores accumulate in f64, so
/// the mean is independent of member order; ties resolve to the lowest
/// row-major grid index.
pub fn plan_step(
    ensemble: &Ensemble,
    obs: &FactoredObservation,
    goal: &GoalSpec,
    kind: ActionKind,
    cfg: &HeuristicConfig,
) -> Result<PlanStepResult> {
    cfg.validate()?;
    let n_actions = cfg.grid * cfg.grid;
    let k = obs.k();
    let order = goal.order.as_deref();
    if cfg.mode == HeuristicMode::Sequential && order.is_none() {
        return Err(Error::Config("sequential heuristic requires a goal placement order".into()));
    }
    let mut scores = vec![0.0f64; n_actions];

    for member in &ensemble.members {
        let z = member.encode_value(obs)?;
        let goal_z = member.encode_value(&goal.observation)?;
        let member_scores = score_grid(member, &z, &goal_z, order, cfg, kind)?;
        for (acc, s) in scores.iter_mut().zip(&member_scores) {
            *acc += s;
        }
    }
    let n_members = ensemble.len() as f64;
    for s in scores.iter_mut() {
        *s /= n_members;
    }

    let mut best = 0usize;
    for (i, &s) in scores.iter().enumerate() {
        if s < scores[best] {
            best = i;
        }
    }
    let mut ranked: Vec<usize> = (0..n_actions).collect();
    ranked.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap().then(a.cmp(&b)));
    let top = ranked
        .iter()
        .take(5)
        .map(|&i| (grid_action(cfg.grid, i, kind), scores[i]))
        .collect();

    let _ = k;
    Ok(PlanStepResult {
        action: grid_action(cfg.grid, best, kind),
        grid_index: best,
        score: scores[best],
        evaluated: n_actions,
        top,
    })
}

/// Scores the whole grid for one member, in parallel chunks. Each
/// action's score is bit-identical to a serial evaluation because every
/// kernel fixes its accumulation order per output element.
pub fn score_grid(
    member: &WorldModel,
    z: &LatentState,
    goal_z: &LatentState,
    order: Option<&[usize]>,
    cfg: &HeuristicConfig,
    kind: ActionKind,
) -> Result<Vec<f64>> {
    let n_actions = cfg.grid * cfg.grid;
    planner_pool().install(|| {
        (0..n_actions)
            .into_par_iter()
            .chunks(PLAN_CHUNK)
            .map(|chunk| score_chunk(member, z, goal_z, order, cfg, kind, &chunk))
            .collect::<Result<Vec<Vec<f64>>>>()
            .map(|v| v.into_iter().flatten().collect())
    })
}

/// Scores a chunk of grid indices for one member with a single batched
/// transition pass.
fn score_chunk(
    member: &WorldModel,
    z: &LatentState,
    goal_z: &LatentState,
    order: Option<&[usize]>,
    cfg: &HeuristicConfig,
    kind: ActionKind,
    indices: &[usize],
) -> Result<Vec<f64>> {
    let k = z.k;
    let b = indices.len();
    let actions: Vec<Action> = indices.iter().map(|&i| grid_action(cfg.grid, i, kind)).collect();

    let mut tiled = Vec::with_capacity(b * z.data.len());
    for _ in 0..b {
        tiled.extend_from_slice(&z.data);
    }
    let mut tape = Tape::new(Mode::Eval);
    let zn = tape.input_no_grad(Tensor::from_vec(&[b * k, z.dim], tiled)?);
    let an = tape.input_no_grad(actions_tensor(&actions));
    let pred = member.transition(&mut tape, zn, an, k)?;
    let needs_classifier = cfg.mode != HeuristicMode::L2;
    let logits = if needs_classifier {
        Some(member.inhand_logits(&mut tape, pred)?)
    } else {
        None
    };
    let pred_v = tape.value(pred);

    let mut out = Vec::with_capacity(b);
    for (bi, _) in indices.iter().enumerate() {
        let zhat = LatentState {
            k,
            dim: z.dim,
            data: pred_v.data()[bi * k * z.dim..(bi + 1) * k * z.dim].to_vec(),
        };
        let score = match cfg.mode {
            HeuristicMode::L2 => l2_score(&zhat, goal_z)?,
            HeuristicMode::PickPlace | HeuristicMode::Sequential => {
                let lg = tape.value(logits.unwrap());
                let in_hand: Vec<bool> =
                    (0..k).map(|s| lg.data()[bi * k + s] > 0.0).collect();
                match cfg.mode {
                    HeuristicMode::PickPlace => pp_score(&zhat, goal_z, &in_hand, cfg.delta)?,
                    _ => seq_score(&zhat, goal_z, &in_hand, order.unwrap(), cfg.delta),
                }
            }
        };
        out.push(score);
    }
    Ok(out)
}

// ---- closed-loop episodes -------------------------------------------------------

/// Outcome of one closed-loop planning episode.
#[derive(Clone, Debug, serde::Serialize)]
pub struct EpisodeResult {
    pub success: bool,
    pub steps: usize,
    /// Fraction of goal objects within tolerance at the end.
    pub progress: f64,
    pub trace: Vec<TraceStep>,
}

#[derive(Clone, Debug, serde::Serialize)]
pub struct TraceStep {
    pub action_kind: String,
    pub x: f32,
    pub y: f32,
    pub score: f64,
    pub evaluated: usize,
    pub top: Vec<(f32, f32, f64)>,
}

/// Plans online with re-rendering at every step (closed-loop control)
/// until the goal is reached or the budget runs out.
pub fn run_episode(
    ensemble: &Ensemble,
    start: &SimState,
    goal: &GoalSpec,
    budget: usize,
    cfg: &HeuristicConfig,
) -> Result<EpisodeResult> {
    if budget == 0 {
        return Err(Error::Config("budget must be at least 1".into()));
    }
    let mut state = start.clone();
    let mut trace = Vec::new();
    for step in 0..=budget {
        if goal_reached(&state, goal) {
            return Ok(EpisodeResult {
                success: true,
                steps: step,
                progress: 1.0,
                trace,
            });
        }
        if step == budget {
            break;
        }
        let obs = render(&state, goal.colors);
        let kind = state.required_kind();
        let result = plan_step(ensemble, &obs, goal, kind, cfg)?;
        trace.push(TraceStep {
            action_kind: format!("{:?}", result.action.kind),
            x: result.action.x,
            y: result.action.y,
            score: result.score,
            evaluated: result.evaluated,
            top: result.top.iter().map(|(a, s)| (a.x, a.y, *s)).collect(),
        });
        state = state.step(&result.action);
    }
    let progress =
        goal_match_count(&state, &goal.state, goal.tolerance) as f64 / goal.state.len() as f64;
    Ok(EpisodeResult { success: false, steps: budget, progress, trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::rng;
    use crate::sim::{Block, ColorScheme, Shape, Task};
    use rand::Rng;

    #[test]
    fn identity_dominant_matrix_matches_the_diagonal() {
        let cost = vec![0.0, 1.0, 1.0, 1.0, 0.0, 1.0, 1.0, 1.0, 0.0];
        let m = hungarian_match(3, 3, &cost).unwrap();
        assert_eq!(m.pairs, vec![(0, 0), (1, 1), (2, 2)]);
        assert_eq!(m.total, 0.0);
    }

    #[test]
    fn anti_diagonal_two_by_two() {
        let m = hungarian_match(2, 2, &[1.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(m.pairs, vec![(0, 1), (1, 0)]);
        assert_eq!(m.total, 0.0);
    }

    #[test]
    fn ties_resolve_lexicographically() {
        let m = hungarian_match(3, 3, &[0.0; 9]).unwrap();
        assert_eq!(m.pairs, vec![(0, 0), (1, 1), (2, 2)]);
        // Two optimal assignments: (0,0),(1,1) and (0,1),(1,0); the
        // lexicographically smaller wins.
        let m2 = hungarian_match(2, 2, &[5.0, 5.0, 5.0, 5.0]).unwrap();
        assert_eq!(m2.pairs, vec![(0, 0), (1, 1)]);
    }

    fn brute_force_min(rows: usize, cols: usize, cost: &[f64]) -> f64 {
        use itertools::Itertools;
        assert!(rows <= cols);
        (0..cols)
            .permutations(rows)
            .map(|perm| {
                perm.iter().enumerate().map(|(r, &c)| cost[r * cols + c]).sum::<f64>()
            })
            .fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn random_five_by_five_matches_brute_force() {
        let mut r = rng::stream(51, 0);
        for _ in 0..50 {
            let cost: Vec<f64> = (0..25).map(|_| r.gen_range(0.0..10.0)).collect();
            let m = hungarian_match(5, 5, &cost).unwrap();
            let want = brute_force_min(5, 5, &cost);
            assert_eq!(m.total, want);
        }
    }

    #[test]
    fn rectangular_matrices_match_the_smaller_side() {
        let mut r = rng::stream(52, 0);
        for (rows, cols) in [(2usize, 5usize), (5, 2), (3, 4)] {
            let cost: Vec<f64> = (0..rows * cols).map(|_| r.gen_range(0.0..4.0)).collect();
            let m = hungarian_match(rows, cols, &cost).unwrap();
            assert_eq!(m.pairs.len(), rows.min(cols));
            if rows <= cols {
                let want = brute_force_min(rows, cols, &cost);
                assert_eq!(m.total, want);
            } else {
                let mut t = vec![0.0; rows * cols];
                for i in 0..rows {
                    for j in 0..cols {
                        t[j * rows + i] = cost[i * cols + j];
                    }
                }
                let want = brute_force_min(cols, rows, &t);
                assert_eq!(m.total, want);
            }
        }
    }

    fn latent(values: &[&[f32]]) -> LatentState {
        let dim = values[0].len();
        LatentState {
            k: values.len(),
            dim,
            data: values.iter().flat_map(|v| v.iter().copied()).collect(),
        }
    }

    #[test]
    fn pp_score_branches_match_the_rules() {
        let delta = 0.175;
        // Matched distances 0.01 and 0.02, both under delta.
        let pred = latent(&[&[0.1], &[0.2]]);
        let goal = latent(&[&[0.0], &[0.0 + 0.2 - (0.02f32).sqrt()]]);
        let goal = {
            // Construct exact squared distances 0.01 and 0.02.
            let g0 = 0.1 - (0.01f32).sqrt(); // d = 0.01
            let g1 = 0.2 - (0.02f32).sqrt(); // d = 0.02
            let _ = goal;
            latent(&[&[g0], &[g1]])
        };
        let h = pp_score(&pred, &goal, &[false, false], delta).unwrap();
        let d0 = sq_dist(pred.slot(0), goal.slot(0));
        let d1 = sq_dist(pred.slot(1), goal.slot(1));
        assert!(d0 < delta && d1 < delta);
        assert!((h - (d0 + d1)).abs() < 1e-9);

        // One object far away and in hand: contributes exactly 1. (The
        // second pair matches exactly, so the diagonal matching is
        // optimal: 25 + 0 beats the crossed 64 + 9.)
        let far_pred = latent(&[&[5.0], &[-3.0]]);
        let far_goal = latent(&[&[0.0], &[-3.0]]);
        let h = pp_score(&far_pred, &far_goal, &[true, false], delta).unwrap();
        assert_eq!(h, 1.0);
        // Far and on the ground: contributes exactly 2.
        let h = pp_score(&far_pred, &far_goal, &[false, false], delta).unwrap();
        assert_eq!(h, 2.0);
    }

    #[test]
    fn pp_score_is_nonnegative_and_zero_only_at_exact_match() {
        let pred = latent(&[&[0.3, -0.1], &[0.8, 0.2]]);
        let h = pp_score(&pred, &pred.clone(), &[false, false], 0.175).unwrap();
        assert_eq!(h, 0.0);
        let other = latent(&[&[0.31, -0.1], &[0.8, 0.2]]);
        let h = pp_score(&pred, &other, &[false, false], 0.175).unwrap();
        assert!(h > 0.0);
    }

    #[test]
    fn seq_score_flag_transitions() {
        let delta = 0.175;
        let order = [0usize, 1, 2];
        let near = 0.01f32.sqrt();
        // All within delta: plain distance sum.
        let pred = latent(&[&[near], &[near], &[near]]);
        let goal = latent(&[&[0.0], &[0.0], &[0.0]]);
        let h = seq_score(&pred, &goal, &[false; 3], &order, delta);
        assert!((h - 0.03).abs() < 1e-6);

        // First object placed, second in hand while on track: +1.
        let pred = latent(&[&[near], &[5.0], &[near]]);
        let h = seq_score(&pred, &goal, &[false, true, false], &order, delta);
        assert!((h - (0.01 + 1.0 + 0.01)).abs() < 1e-6);

        // An in-hand object after an earlier miss: the +3 penalty.
        let pred = latent(&[&[5.0], &[5.0], &[near]]);
        let h = seq_score(&pred, &goal, &[false, true, false], &order, delta);
        assert!((h - (2.0 + 3.0 + 0.01)).abs() < 1e-6);
    }

    #[test]
    fn l2_equals_pp_when_everything_is_close() {
        let mut r = rng::stream(53, 0);
        for _ in 0..20 {
            let a: Vec<f32> = (0..6).map(|_| r.gen_range(-0.1..0.1)).collect();
            let b: Vec<f32> = a.iter().map(|v| v + r.gen_range(-0.05..0.05)).collect();
            let pred = LatentState { k: 3, dim: 2, data: a };
            let goal = LatentState { k: 3, dim: 2, data: b };
            let l2 = l2_score(&pred, &goal).unwrap();
            let pp = pp_score(&pred, &goal, &[false; 3], 0.175).unwrap();
            assert!((l2 - pp).abs() < 1e-12, "branch coincidence under delta");
            // And pp degenerates to l2 as delta grows without bound.
            let pp_inf = pp_score(&pred, &goal, &[false; 3], f64::INFINITY).unwrap();
            assert_eq!(pp_inf, l2);
        }
    }

    fn tiny_model(seed: u64) -> WorldModel {
        let cfg = ModelConfig {
            latent_dim: 6,
            gnn_layers: 1,
            hidden: 16,
            encoder_fc: 8,
            ..ModelConfig::default()
        };
        WorldModel::new(cfg, seed).unwrap()
    }

    fn simple_goal() -> (SimState, GoalSpec) {
        let start = SimState::new(vec![
            Block::on_board(Shape::Cube, 8.0, 8.0, 0),
            Block::on_board(Shape::Cube, 20.0, 14.0, 0),
            Block::on_board(Shape::Cube, 12.0, 24.0, 0),
        ]);
        let (goal_state, order) = Task::Stack2.goal_state(&start, 1.0);
        (start, GoalSpec::from_state(goal_state, Some(order), 1.0, ColorScheme::UniformRed))
    }

    #[test]
    fn plan_step_evaluates_the_whole_grid() {
        let (start, goal) = simple_goal();
        let ensemble = Ensemble::new(vec![tiny_model(61)]).unwrap();
        let obs = render(&start, ColorScheme::UniformRed);
        let cfg = HeuristicConfig::default();
        let result = plan_step(&ensemble, &obs, &goal, ActionKind::Pick, &cfg).unwrap();
        assert_eq!(result.evaluated, 10_000);
        assert_eq!(result.top.len(), 5);
        assert!(result.top.windows(2).all(|w| w[0].1 <= w[1].1));
    }

    #[test]
    fn identical_members_choose_the_single_member_action() {
        let (start, goal) = simple_goal();
        let obs = render(&start, ColorScheme::UniformRed);
        let cfg = HeuristicConfig { grid: 20, ..Default::default() };
        let single = Ensemble::new(vec![tiny_model(62)]).unwrap();
        let triple =
            Ensemble::new(vec![tiny_model(62), tiny_model(62), tiny_model(62)]).unwrap();
        let a = plan_step(&single, &obs, &goal, ActionKind::Pick, &cfg).unwrap();
        let b = plan_step(&triple, &obs, &goal, ActionKind::Pick, &cfg).unwrap();
        assert_eq!(a.grid_index, b.grid_index);
        assert_eq!(a.score, b.score, "mean of identical scores is exact");
    }

    #[test]
    fn ensemble_mean_is_member_order_invariant() {
        let (start, goal) = simple_goal();
        let obs = render(&start, ColorScheme::UniformRed);
        let cfg = HeuristicConfig { grid: 12, ..Default::default() };
        let (m1, m2, m3) = (tiny_model(63), tiny_model(64), tiny_model(65));
        let a = plan_step(
            &Ensemble::new(vec![m1.clone(), m2.clone(), m3.clone()]).unwrap(),
            &obs,
            &goal,
            ActionKind::Pick,
            &cfg,
        )
        .unwrap();
        let b = plan_step(
            &Ensemble::new(vec![m3, m1, m2]).unwrap(),
            &obs,
            &goal,
            ActionKind::Pick,
            &cfg,
        )
        .unwrap();
        assert_eq!(a.grid_index, b.grid_index);
        assert_eq!(a.score, b.score);
    }

    #[test]
    fn exact_ties_pick_the_lowest_row_major_index() {
        // A transition with zeroed parameters predicts the same latents
        // for every action, so all scores tie exactly.
        let (start, goal) = simple_goal();
        let obs = render(&start, ColorScheme::UniformRed);
        let mut model = tiny_model(66);
        let names: Vec<String> = model.params.names().map(String::from).collect();
        for name in names {
            if name.starts_with("gnn") {
                let shape = model.params.get(&name).unwrap().shape().to_vec();
                model.params.set(&name, crate::tensor::Tensor::zeros(&shape));
            }
        }
        let ensemble = Ensemble::new(vec![model]).unwrap();
        let cfg = HeuristicConfig { grid: 10, ..Default::default() };
        let result = plan_step(&ensemble, &obs, &goal, ActionKind::Pick, &cfg).unwrap();
        assert_eq!(result.grid_index, 0);
    }

    #[test]
    fn satisfied_goal_succeeds_in_zero_steps() {
        let (_, goal) = simple_goal();
        let ensemble = Ensemble::new(vec![tiny_model(67)]).unwrap();
        let cfg = HeuristicConfig { grid: 10, ..Default::default() };
        let result = run_episode(&ensemble, &goal.state, &goal, 20, &cfg).unwrap();
        assert!(result.success);
        assert_eq!(result.steps, 0);
        assert!(result.trace.is_empty());
        assert_eq!(result.progress, 1.0);
    }

    #[test]
    fn episodes_are_deterministic() {
        let (start, goal) = simple_goal();
        let ensemble = Ensemble::new(vec![tiny_model(68)]).unwrap();
        let cfg = HeuristicConfig { grid: 15, ..Default::default() };
        let a = run_episode(&ensemble, &start, &goal, 4, &cfg).unwrap();
        let b = run_episode(&ensemble, &start, &goal, 4, &cfg).unwrap();
        assert_eq!(a.success, b.success);
        assert_eq!(a.steps, b.steps);
        assert_eq!(a.progress, b.progress);
        let xs_a: Vec<(f32, f32)> = a.trace.iter().map(|t| (t.x, t.y)).collect();
        let xs_b: Vec<(f32, f32)> = b.trace.iter().map(|t| (t.x, t.y)).collect();
        assert_eq!(xs_a, xs_b);
    }

    #[test]
    fn sequential_mode_requires_an_order() {
        let (start, goal) = simple_goal();
        let mut goal_no_order = goal.clone();
        goal_no_order.order = None;
        let ensemble = Ensemble::new(vec![tiny_model(69)]).unwrap();
        let obs = render(&start, ColorScheme::UniformRed);
        let cfg = HeuristicConfig {
            mode: HeuristicMode::Sequential,
            grid: 5,
            ..Default::default()
        };
        assert!(plan_step(&ensemble, &obs, &goal_no_order, ActionKind::Pick, &cfg).is_err());
        assert!(plan_step(&ensemble, &obs, &goal, ActionKind::Pick, &cfg).is_ok());
    }

    #[test]
    fn mismatched_ensemble_configs_are_rejected() {
        let a = tiny_model(70);
        let b = WorldModel::new(
            ModelConfig { latent_dim: 4, gnn_layers: 1, hidden: 16, encoder_fc: 8, ..ModelConfig::default() },
            71,
        )
        .unwrap();
        assert!(Ensemble::new(vec![a, b]).is_err());
        assert!(Ensemble::new(vec![]).is_err());
    }
}
