//! `fwm` command-line pipeline: data generation, training, evaluation,
//! planning and an end-to-end benchmark.
//!
//! Every run validates its configuration before any compute and writes a
//! manifest with content hashes of inputs and outputs beside its primary
//! output. Fixed seeds reproduce bit-identical artifacts.

mod config;
mod manifest;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use config::{load_config, Preset, RunConfig};
use fwm::eval::{
    build_ranking_set, format_ranking_table, format_rmse_table, format_sweep_table, rank_sequences,
    rmse_eval, sweep_epsilon, RankingConfig,
};
use fwm::model::{load_checkpoint, save_checkpoint, TrainMeta, WorldModel};
use fwm::plan::{run_episode, Ensemble, HeuristicConfig, HeuristicMode};
use fwm::sim::{
    generate_to_file, read_dataset, ColorScheme, DataGenConfig, ExpertMode, ExpertStyleSerde,
    GoalSpec, SimState, StopRule, Task,
};
use fwm::train::{train_inhand, train_probe, train_world_model};
use manifest::Manifest;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(
    name = "fwm",
    about = "Factored world models for block pick-and-place",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ExpertArg {
    /// Scripted/random mixture with noise (training data).
    Mixture,
    /// Pure scripted expert (evaluation data).
    Optimal,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ColorArg {
    Red,
    PerSlot,
}

impl From<ColorArg> for ColorScheme {
    fn from(c: ColorArg) -> ColorScheme {
        match c {
            ColorArg::Red => ColorScheme::UniformRed,
            ColorArg::PerSlot => ColorScheme::PerSlot,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum MetricArg {
    Rmse,
    Rank,
    Sweep,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum HeuristicArg {
    Pp,
    Seq,
    L2,
}

impl From<HeuristicArg> for HeuristicMode {
    fn from(h: HeuristicArg) -> HeuristicMode {
        match h {
            HeuristicArg::Pp => HeuristicMode::PickPlace,
            HeuristicArg::Seq => HeuristicMode::Sequential,
            HeuristicArg::L2 => HeuristicMode::L2,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate an episode dataset.
    GenData {
        #[arg(long)]
        task: String,
        /// Stop after this many recorded transitions.
        #[arg(long, conflicts_with = "episodes")]
        transitions: Option<usize>,
        /// Stop after this many accepted episodes (evaluation sets).
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "mixture")]
        expert: ExpertArg,
        /// Keep only goal-reaching episodes.
        #[arg(long, default_value_t = false)]
        only_goal_reaching: bool,
        /// Keep only episodes with at least this many actions.
        #[arg(long, default_value_t = 1)]
        min_actions: usize,
        /// Delete episodes that form any of these structures.
        #[arg(long, value_delimiter = ',')]
        holdout: Vec<String>,
        #[arg(long, value_enum, default_value = "red")]
        colors: ColorArg,
        /// Also write a goal file for the planner, derived from this seed.
        #[arg(long)]
        goal_out: Option<PathBuf>,
    },
    /// Train a world model with the contrastive objective.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        /// TOML config; omitted fields fall back to the preset.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "desk")]
        preset: Preset,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Per-epoch loss log (`epoch,loss,pos_term,neg_term`).
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
    /// Train the position probe on a frozen world model.
    TrainProbe {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the in-hand classifier on a frozen world model.
    TrainInhand {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Offline metrics: position RMSE or action-sequence ranking.
    Eval {
        #[arg(long, value_enum)]
        metric: MetricArg,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Task that produced the dataset (needed to re-simulate).
        #[arg(long)]
        task: Option<String>,
        #[arg(long, default_value_t = 8)]
        horizon: usize,
        #[arg(long, default_value_t = 4.0)]
        eps: f32,
        #[arg(long, default_value_t = 10)]
        negatives: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Ascending ε grid for the sweep metric.
        #[arg(long, value_delimiter = ',', default_values_t = vec![0.5, 1.0, 2.0, 4.0, 8.0])]
        eps_grid: Vec<f32>,
    },
    /// Closed-loop planning for one goal.
    Plan {
        /// Comma-separated member checkpoints.
        #[arg(long, value_delimiter = ',', required = true)]
        ensemble: Vec<PathBuf>,
        #[arg(long)]
        goal: PathBuf,
        #[arg(long, value_enum, default_value = "pp")]
        heuristic: HeuristicArg,
        #[arg(long, default_value_t = 20)]
        budget: usize,
        #[arg(long)]
        seed: u64,
        /// Trace output (JSON): per-step action, score, top alternatives.
        #[arg(long)]
        trace: PathBuf,
        #[arg(long, default_value_t = 0.175)]
        delta: f64,
    },
    /// Full desk pipeline: data, training, metrics and planning tables.
    Bench {
        #[arg(long, value_enum, default_value = "desk")]
        preset: Preset,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Ensemble size for the planning table.
        #[arg(long, default_value_t = 3)]
        members: usize,
        /// Planning episodes per table row.
        #[arg(long)]
        episodes: Option<usize>,
    },
}

/// Goal file consumed by `plan`: the task (for sampling start scenes),
/// the goal state and metadata.
#[derive(Serialize, Deserialize)]
struct GoalFile {
    task: String,
    state: SimState,
    order: Vec<usize>,
    tolerance: f32,
    colors: ColorScheme,
}

fn main() {
    let cli = Cli::parse();
    if let Err(err) = run(cli) {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::GenData {
            task,
            transitions,
            episodes,
            seed,
            out,
            expert,
            only_goal_reaching,
            min_actions,
            holdout,
            colors,
            goal_out,
        } => cmd_gen_data(
            &task,
            transitions,
            episodes,
            seed,
            &out,
            expert,
            only_goal_reaching,
            min_actions,
            &holdout,
            colors,
            goal_out.as_deref(),
        ),
        Command::Train { dataset, config, preset, seed, out, metrics } => {
            cmd_train(&dataset, config.as_deref(), preset, seed, &out, metrics.as_deref())
        }
        Command::TrainProbe { ckpt, dataset, seed, out } => {
            cmd_train_head(&ckpt, &dataset, seed, &out, Head::Probe)
        }
        Command::TrainInhand { ckpt, dataset, seed, out } => {
            cmd_train_head(&ckpt, &dataset, seed, &out, Head::InHand)
        }
        Command::Eval { metric, ckpt, data, out, task, horizon, eps, negatives, seed, eps_grid } => {
            cmd_eval(metric, &ckpt, &data, &out, task.as_deref(), horizon, eps, negatives, seed, &eps_grid)
        }
        Command::Plan { ensemble, goal, heuristic, budget, seed, trace, delta } => {
            cmd_plan(&ensemble, &goal, heuristic, budget, seed, &trace, delta)
        }
        Command::Bench { preset, out, seed, members, episodes } => {
            cmd_bench(preset, &out, seed, members, episodes)
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_gen_data(
    task_name: &str,
    transitions: Option<usize>,
    episodes: Option<usize>,
    seed: u64,
    out: &Path,
    expert: ExpertArg,
    only_goal_reaching: bool,
    min_actions: usize,
    holdout: &[String],
    colors: ColorArg,
    goal_out: Option<&Path>,
) -> anyhow::Result<()> {
    let task = Task::parse(task_name)?;
    let stop = match (transitions, episodes) {
        (Some(t), None) => StopRule::Transitions(t),
        (None, Some(e)) => StopRule::Episodes(e),
        (None, None) => bail!("one of --transitions or --episodes is required"),
        (Some(_), Some(_)) => unreachable!("clap conflict"),
    };
    let holdout_tasks = holdout
        .iter()
        .filter(|s| !s.is_empty())
        .map(|s| Task::parse(s))
        .collect::<fwm::Result<Vec<Task>>>()?;
    let cfg = DataGenConfig {
        task,
        stop,
        seed,
        max_steps: 16,
        expert: match expert {
            ExpertArg::Mixture => ExpertMode::Mixture(ExpertStyleSerde::Cubes),
            ExpertArg::Optimal => ExpertMode::Optimal,
        },
        keep_only_goal_reaching: only_goal_reaching || matches!(expert, ExpertArg::Optimal),
        min_actions,
        holdout_tasks,
        colors: colors.into(),
        tolerance: 1.0,
    };
    let summary = generate_to_file(&cfg, out)?;
    println!(
        "wrote {} episodes / {} transitions to {}",
        summary.episodes,
        summary.transitions,
        out.display()
    );

    let mut manifest = Manifest::new("gen-data", Some(seed), serde_json::to_value(&cfg)?);
    manifest.add_output(out)?;

    if let Some(goal_path) = goal_out {
        let mut rng = fwm::rng::stream(seed, 0x60A1);
        let start = task.sample_initial(&mut rng);
        let (goal_state, order) = task.goal_state(&start, cfg.tolerance);
        let goal = GoalFile {
            task: task.name().to_string(),
            state: goal_state,
            order,
            tolerance: cfg.tolerance,
            colors: cfg.colors,
        };
        std::fs::write(goal_path, serde_json::to_string_pretty(&goal)?)?;
        manifest.add_output(goal_path)?;
        println!("wrote goal file {}", goal_path.display());
    }
    manifest.write_beside(out)?;
    Ok(())
}

fn cmd_train(
    dataset_path: &Path,
    config_path: Option<&Path>,
    preset: Preset,
    seed: u64,
    out: &Path,
    metrics: Option<&Path>,
) -> anyhow::Result<()> {
    let cfg: RunConfig = load_config(config_path, preset)?;
    let dataset = read_dataset(dataset_path)?;
    println!(
        "training on {} transitions ({} episodes), {} epochs",
        dataset.transitions(),
        dataset.episodes.len(),
        cfg.loss.epochs
    );
    let (model, stats) = train_world_model(&dataset, &cfg.model, &cfg.loss, seed, metrics)?;
    let meta = TrainMeta {
        seed,
        epochs: cfg.loss.epochs,
        dataset_hash: fwm::hashing::hash_file(dataset_path)?,
        probe_trained: false,
        inhand_trained: false,
    };
    save_checkpoint(out, &model, &meta)?;
    if let Some(last) = stats.last() {
        println!("final epoch loss {:.6}", last.loss);
    }
    let mut manifest = Manifest::new("train", Some(seed), serde_json::to_value(&cfg)?);
    manifest.add_input(dataset_path)?;
    manifest.add_output(out)?;
    if let Some(m) = metrics {
        manifest.add_output(m)?;
    }
    manifest.write_beside(out)?;
    println!("wrote checkpoint {}", out.display());
    Ok(())
}

#[derive(Clone, Copy)]
enum Head {
    Probe,
    InHand,
}

fn cmd_train_head(
    ckpt: &Path,
    dataset_path: &Path,
    seed: u64,
    out: &Path,
    head: Head,
) -> anyhow::Result<()> {
    let (mut model, meta) = load_checkpoint(ckpt)?;
    let dataset = read_dataset(dataset_path)?;
    let mut train_meta = meta.train.clone();
    let (name, losses) = match head {
        Head::Probe => {
            let losses = train_probe(&mut model, &dataset, seed)?;
            train_meta.probe_trained = true;
            ("probe", losses)
        }
        Head::InHand => {
            let losses = train_inhand(&mut model, &dataset, seed)?;
            train_meta.inhand_trained = true;
            ("in-hand classifier", losses)
        }
    };
    println!(
        "{name}: loss {:.6} -> {:.6} over {} epochs",
        losses.first().unwrap_or(&f64::NAN),
        losses.last().unwrap_or(&f64::NAN),
        losses.len()
    );
    save_checkpoint(out, &model, &train_meta)?;
    let mut manifest = Manifest::new(
        match head {
            Head::Probe => "train-probe",
            Head::InHand => "train-inhand",
        },
        Some(seed),
        serde_json::json!({ "source": ckpt.display().to_string() }),
    );
    manifest.add_input(ckpt)?;
    manifest.add_input(dataset_path)?;
    manifest.add_output(out)?;
    manifest.write_beside(out)?;
    println!("wrote checkpoint {}", out.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_eval(
    metric: MetricArg,
    ckpt: &Path,
    data: &Path,
    out: &Path,
    task: Option<&str>,
    horizon: usize,
    eps: f32,
    negatives: usize,
    seed: u64,
    eps_grid: &[f32],
) -> anyhow::Result<()> {
    let (model, _) = load_checkpoint(ckpt)?;
    let dataset = read_dataset(data)?;
    let table = match metric {
        MetricArg::Rmse => {
            let rmse = rmse_eval(&model, &dataset.episodes, horizon)?;
            format_rmse_table(&rmse)
        }
        MetricArg::Rank => {
            let task = Task::parse(task.context("--task is required for ranking")?)?;
            let cfg = RankingConfig { epsilon: eps, n_negatives: negatives, resample_cap: 100, seed };
            let set = build_ranking_set(task, &dataset, &cfg, 1.0, ColorScheme::UniformRed)?;
            let record = rank_sequences(&model, &set)?;
            println!("hits@1 {:.3}, mrr {:.3}", record.hits_at_1, record.mrr);
            format_ranking_table(eps, &record)
        }
        MetricArg::Sweep => {
            let task = Task::parse(task.context("--task is required for the sweep")?)?;
            let base = RankingConfig { epsilon: eps, n_negatives: negatives, resample_cap: 100, seed };
            let sweep = sweep_epsilon(
                &model,
                task,
                &dataset,
                eps_grid,
                &base,
                1.0,
                ColorScheme::UniformRed,
            )?;
            // Hits@1 is expected to rise with epsilon; log violations.
            for w in sweep.rows.windows(2) {
                if w[1].hits_at_1 < w[0].hits_at_1 {
                    eprintln!(
                        "note: hits@1 dipped from {:.3} (eps {}) to {:.3} (eps {})",
                        w[0].hits_at_1, w[0].epsilon, w[1].hits_at_1, w[1].epsilon
                    );
                }
            }
            format_sweep_table(&sweep)
        }
    };
    std::fs::write(out, &table)?;
    println!("wrote {}", out.display());
    let mut manifest = Manifest::new(
        "eval",
        Some(seed),
        serde_json::json!({
            "metric": format!("{metric:?}"),
            "horizon": horizon,
            "eps": eps,
            "negatives": negatives,
        }),
    );
    manifest.add_input(ckpt)?;
    manifest.add_input(data)?;
    manifest.add_output(out)?;
    manifest.write_beside(out)?;
    Ok(())
}

fn cmd_plan(
    ensemble_paths: &[PathBuf],
    goal_path: &Path,
    heuristic: HeuristicArg,
    budget: usize,
    seed: u64,
    trace_path: &Path,
    delta: f64,
) -> anyhow::Result<()> {
    let members = ensemble_paths
        .iter()
        .map(|p| load_checkpoint(p).map(|(m, _)| m))
        .collect::<fwm::Result<Vec<WorldModel>>>()?;
    let ensemble = Ensemble::new(members)?;
    let goal_file: GoalFile = serde_json::from_str(
        &std::fs::read_to_string(goal_path)
            .with_context(|| format!("reading goal {}", goal_path.display()))?,
    )
    .context("goal file is not valid JSON")?;
    let task = Task::parse(&goal_file.task)?;
    let goal = GoalSpec::from_state(
        goal_file.state,
        Some(goal_file.order),
        goal_file.tolerance,
        goal_file.colors,
    );
    let mut rng = fwm::rng::stream(seed, 0x51A7);
    let start = task.sample_initial(&mut rng);
    let cfg = HeuristicConfig { delta, grid: 100, mode: heuristic.into() };
    let result = run_episode(&ensemble, &start, &goal, budget, &cfg)?;
    println!(
        "success={} steps={} progress={:.2}",
        result.success, result.steps, result.progress
    );
    std::fs::write(trace_path, serde_json::to_string_pretty(&result)?)?;
    let mut manifest = Manifest::new(
        "plan",
        Some(seed),
        serde_json::json!({
            "heuristic": format!("{heuristic:?}"),
            "budget": budget,
            "delta": delta,
        }),
    );
    for p in ensemble_paths {
        manifest.add_input(p)?;
    }
    manifest.add_input(goal_path)?;
    manifest.add_output(trace_path)?;
    manifest.write_beside(trace_path)?;
    Ok(())
}

fn cmd_bench(
    preset: Preset,
    out_dir: &Path,
    seed: u64,
    members: usize,
    episodes: Option<usize>,
) -> anyhow::Result<()> {
    let cfg = preset.run_config();
    cfg.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let episodes_per_row = episodes.unwrap_or(match preset {
        Preset::Smoke => 2,
        _ => 20,
    });
    let mut manifest = Manifest::new("bench", Some(seed), serde_json::to_value(&cfg)?);

    // 1. Training data on the stack3 task, holding out row structures.
    let train_path = out_dir.join("train.fwmd");
    let gen_cfg = DataGenConfig {
        holdout_tasks: vec![Task::Row3],
        ..DataGenConfig::training(Task::Stack3, preset.transitions(), seed)
    };
    let summary = generate_to_file(&gen_cfg, &train_path)?;
    println!("data: {} transitions ({} episodes)", summary.transitions, summary.episodes);
    manifest.add_output(&train_path)?;
    let dataset = read_dataset(&train_path)?;

    // 2. Ensemble members, each with probe and classifier heads.
    let mut models = Vec::with_capacity(members);
    for i in 0..members {
        let member_seed = seed + i as u64;
        let metrics_path = out_dir.join(format!("member{i}.metrics.csv"));
        let (mut model, stats) =
            train_world_model(&dataset, &cfg.model, &cfg.loss, member_seed, Some(&metrics_path))?;
        println!(
            "member {i}: loss {:.5} -> {:.5}",
            stats.first().map(|s| s.loss).unwrap_or(f64::NAN),
            stats.last().map(|s| s.loss).unwrap_or(f64::NAN)
        );
        train_probe(&mut model, &dataset, member_seed)?;
        train_inhand(&mut model, &dataset, member_seed)?;
        let ckpt_path = out_dir.join(format!("member{i}.fwmc"));
        let meta = TrainMeta {
            seed: member_seed,
            epochs: cfg.loss.epochs,
            dataset_hash: fwm::hashing::hash_file(&train_path)?,
            probe_trained: true,
            inhand_trained: true,
        };
        save_checkpoint(&ckpt_path, &model, &meta)?;
        manifest.add_output(&ckpt_path)?;
        models.push(model);
    }

    // 3. Evaluation data: long mixture trajectories for RMSE, optimal
    // trajectories for ranking on the training and transfer tasks.
    let min_actions = if preset == Preset::Smoke { 2 } else { 8 };
    let rmse_cfg = DataGenConfig {
        expert: ExpertMode::Mixture(ExpertStyleSerde::Cubes),
        keep_only_goal_reaching: true,
        min_actions,
        ..DataGenConfig::evaluation(Task::Stack3, preset.eval_episodes(), seed + 100)
    };
    let rmse_path = out_dir.join("eval-rmse.fwmd");
    generate_to_file(&rmse_cfg, &rmse_path)?;
    let rank_train_path = out_dir.join("eval-rank-stack3.fwmd");
    generate_to_file(
        &DataGenConfig::evaluation(Task::Stack3, preset.eval_episodes(), seed + 200),
        &rank_train_path,
    )?;
    let rank_transfer_path = out_dir.join("eval-rank-row3.fwmd");
    generate_to_file(
        &DataGenConfig::evaluation(Task::Row3, preset.eval_episodes(), seed + 300),
        &rank_transfer_path,
    )?;
    for p in [&rmse_path, &rank_train_path, &rank_transfer_path] {
        manifest.add_output(p)?;
    }

    // 4. RMSE table over the prediction horizon.
    let rmse_data = read_dataset(&rmse_path)?;
    let horizon = if preset == Preset::Smoke { 2 } else { 8 };
    let rmse = rmse_eval(&models[0], &rmse_data.episodes, horizon)?;
    let rmse_table_path = out_dir.join("rmse.csv");
    std::fs::write(&rmse_table_path, format_rmse_table(&rmse))?;
    println!("rmse[0] = {:.3} cm, rmse[{horizon}] = {:.3} cm", rmse[0], rmse[horizon]);
    manifest.add_output(&rmse_table_path)?;

    // 5. Ranking on the training task and the held-out transfer task.
    let mut ranking_table = String::new();
    for (label, path, task) in [
        ("stack3", &rank_train_path, Task::Stack3),
        ("row3", &rank_transfer_path, Task::Row3),
    ] {
        let ds = read_dataset(path)?;
        let rcfg = RankingConfig { epsilon: 4.0, n_negatives: 10, resample_cap: 100, seed };
        let set = build_ranking_set(task, &ds, &rcfg, 1.0, ColorScheme::UniformRed)?;
        let record = rank_sequences(&models[0], &set)?;
        println!("{label}: hits@1 {:.3}, mrr {:.3}", record.hits_at_1, record.mrr);
        ranking_table.push_str(&format!(
            "{label},hits1,{:.6}\n{label},mrr,{:.6}\n",
            record.hits_at_1, record.mrr
        ));
    }
    let ranking_path = out_dir.join("ranking.csv");
    std::fs::write(&ranking_path, ranking_table)?;
    manifest.add_output(&ranking_path)?;

    // 6. Planning table: ensemble and ablation rows.
    let full = Ensemble::new(models.clone())?;
    let single = Ensemble::new(vec![models[0].clone()])?;
    let pp = HeuristicConfig::default();
    let l2 = HeuristicConfig { mode: HeuristicMode::L2, ..HeuristicConfig::default() };
    let mut rows = vec![
        ("stack2", &full, &pp, "pp"),
        ("stack3", &full, &pp, "pp"),
        ("stack3", &single, &pp, "pp-single"),
        ("stack3", &full, &l2, "l2"),
    ];
    if preset == Preset::Smoke {
        rows.truncate(2);
    }
    let mut planning_table = String::from("task,heuristic,members,successes,episodes,progress\n");
    for (task_name, ensemble, cfg_h, label) in rows {
        let task = Task::parse(task_name)?;
        let mut successes = 0usize;
        let mut progress_sum = 0.0f64;
        for ep in 0..episodes_per_row {
            let mut rng = fwm::rng::stream(seed + 400, ep as u64);
            let start = task.sample_initial(&mut rng);
            let (goal_state, order) = task.goal_state(&start, 1.0);
            let goal = GoalSpec::from_state(goal_state, Some(order), 1.0, ColorScheme::UniformRed);
            let result = run_episode(ensemble, &start, &goal, 20, cfg_h)?;
            successes += result.success as usize;
            progress_sum += result.progress;
        }
        println!(
            "plan {task_name}/{label} ({} members): {successes}/{episodes_per_row}",
            ensemble.len()
        );
        planning_table.push_str(&format!(
            "{task_name},{label},{},{successes},{episodes_per_row},{:.3}\n",
            ensemble.len(),
            progress_sum / episodes_per_row as f64
        ));
    }
    let planning_path = out_dir.join("planning.csv");
    std::fs::write(&planning_path, planning_table)?;
    manifest.add_output(&planning_path)?;

    manifest.write_beside(&out_dir.join("bench"))?;
    println!("bench outputs in {}", out_dir.display());
    Ok(())
}
