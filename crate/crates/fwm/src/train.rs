//! Contrastive training of the world model, plus supervised training of
//! the position probe and in-hand classifier heads.
//!
//! The world-model objective pulls the predicted next latent state toward
//! the encoded next state and pushes the current encoding away from a
//! negative encoding up to a margin:
//!
//! ```text
//! L = (1 / 2Kσ²) Σ_i ‖z_i' − ẑ_i'‖²
//!   + max{0, γ − (1 / 2Kσ²) Σ_i ‖z_i − z̄_i‖²}
//! ```
//!
//! Negatives are the batch's own current states under a uniform random
//! permutation, so they cost no extra encoder passes. Training is
//! deterministic under a fixed seed: epoch shuffles, negative draws and
//! weight initialization all derive from it, and two runs produce
//! bit-identical checkpoints.

use crate::autodiff::{adam_step, Mode, NodeId, Tape};
use crate::model::{actions_tensor, LatentState, ModelConfig, WorldModel, ACTION_DIM};
use crate::rng;
use crate::sim::{Action, Dataset, CHANNELS, CROP, HAND_POSITION};
use crate::tensor::Tensor;
use crate::{Error, Result};
use std::io::Write;
use std::path::Path;

/// Loss and optimization hyperparameters.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    /// Hinge margin γ.
    pub margin: f64,
    /// Distance scale σ.
    pub sigma: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f32,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig::desk()
    }
}

impl LossConfig {
    /// Full-scale settings.
    pub fn paper() -> Self {
        LossConfig { margin: 1.0, sigma: 0.5, batch_size: 256, epochs: 200, lr: 5e-5 }
    }

    /// Desk-scale settings used by the bundled tasks.
    pub fn desk() -> Self {
        LossConfig { margin: 1.0, sigma: 0.5, batch_size: 128, epochs: 50, lr: 2e-4 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.margin <= 0.0 || self.sigma <= 0.0 {
            return Err(Error::Config("margin and sigma must be positive".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::Config("batch_size must be at least 2".into()));
        }
        if self.epochs == 0 || self.lr <= 0.0 {
            return Err(Error::Config("epochs and lr must be positive".into()));
        }
        Ok(())
    }
}

/// Scalar contrastive loss over latent states (f64 accumulation).
pub fn contrastive_loss(
    z_t: &LatentState,
    z_next: &LatentState,
    z_pred: &LatentState,
    z_neg: &LatentState,
    cfg: &LossConfig,
) -> f64 {
    assert_eq!(z_t.k, z_next.k);
    assert_eq!(z_t.k, z_pred.k);
    assert_eq!(z_t.k, z_neg.k);
    let k = z_t.k as f64;
    let scale = 1.0 / (2.0 * k * cfg.sigma * cfg.sigma);
    let mut pos = 0.0f64;
    let mut neg = 0.0f64;
    for i in 0..z_t.k {
        pos += crate::tensor::sq_dist(z_next.slot(i), z_pred.slot(i));
        neg += crate::tensor::sq_dist(z_t.slot(i), z_neg.slot(i));
    }
    scale * pos + (cfg.margin - scale * neg).max(0.0)
}

/// Uniform random permutation used to pair each transition with a
/// negative drawn from the batch's current states. Identity fixed points
/// are allowed; a batch of one has no valid negative.
pub fn sample_negatives(batch_size: usize, rng: &mut rng::Stream) -> Result<Vec<usize>> {
    if batch_size < 2 {
        return Err(Error::Config("cannot sample negatives from a batch of one".into()));
    }
    let mut perm: Vec<usize> = (0..batch_size).collect();
    rng::shuffle(&mut perm, rng);
    Ok(perm)
}

/// Per-epoch training statistics, also written to the metrics log as
/// `epoch,loss,pos_term,neg_term`.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub pos_term: f64,
    pub neg_term: f64,
}

/// Flat list of `(episode, frame)` transition indices of a dataset.
pub fn transition_index(dataset: &Dataset) -> Vec<(usize, usize)> {
    let mut index = Vec::with_capacity(dataset.transitions());
    for (ep, episode) in dataset.episodes.iter().enumerate() {
        for frame in 0..episode.transitions() {
            index.push((ep, frame));
        }
    }
    index
}

/// Gathers a `[B*K, 14, 18, 18]` observation tensor for the chosen frames
/// (`offset` 0 = current, 1 = next).
fn batch_obs(dataset: &Dataset, batch: &[(usize, usize)], offset: usize) -> Tensor {
    let k = dataset.k;
    let per = CHANNELS * CROP * CROP;
    let mut data = Vec::with_capacity(batch.len() * k * per);
    for &(ep, frame) in batch {
        data.extend_from_slice(dataset.episodes[ep].observations[frame + offset].data());
    }
    Tensor::from_vec(&[batch.len() * k, CHANNELS, CROP, CROP], data).expect("batch shape")
}

fn batch_actions(dataset: &Dataset, batch: &[(usize, usize)]) -> Tensor {
    let actions: Vec<Action> =
        batch.iter().map(|&(ep, frame)| dataset.episodes[ep].actions[frame]).collect();
    actions_tensor(&actions)
}

/// Builds the full contrastive objective on a tape: encode current and
/// next observations, predict the next latents, gather negatives through
/// the given batch permutation, and combine the two loss terms. Returns
/// `(loss, pos_term, neg_term)` nodes.
pub fn contrastive_loss_graph(
    model: &WorldModel,
    tape: &mut Tape,
    obs_t: &Tensor,
    obs_next: &Tensor,
    actions: &Tensor,
    negatives: &[usize],
    k: usize,
    cfg: &LossConfig,
) -> Result<(NodeId, NodeId, NodeId)> {
    let b = negatives.len();
    debug_assert_eq!(obs_t.shape()[0], b * k);
    debug_assert_eq!(actions.shape(), &[b, ACTION_DIM]);
    let z_t = model.encode(tape, obs_t)?;
    let z_next = model.encode(tape, obs_next)?;
    let a = tape.input_no_grad(actions.clone());
    let z_pred = model.transition(tape, z_t, a, k)?;

    let scale = (1.0 / (2.0 * k as f64 * cfg.sigma * cfg.sigma)) as f32;

    let d_pos = tape.sub(z_next, z_pred)?;
    let sq_pos = tape.mul(d_pos, d_pos)?;
    let row_pos = tape.sum_rows(sq_pos)?;
    let per_pos = tape.group_sum(row_pos, k)?;
    let scaled_pos = tape.affine(per_pos, scale, 0.0)?;
    let pos_term = tape.mean_all(scaled_pos)?;

    let neg_rows: Vec<usize> =
        negatives.iter().flat_map(|&p| (0..k).map(move |i| p * k + i)).collect();
    let z_neg = tape.gather_rows(z_t, neg_rows)?;
    let d_neg = tape.sub(z_t, z_neg)?;
    let sq_neg = tape.mul(d_neg, d_neg)?;
    let row_neg = tape.sum_rows(sq_neg)?;
    let per_neg = tape.group_sum(row_neg, k)?;
    let hinge_in = tape.affine(per_neg, -scale, cfg.margin as f32)?;
    let hinge = tape.relu(hinge_in)?;
    let neg_term = tape.mean_all(hinge)?;

    let loss = tape.add(pos_term, neg_term)?;
    Ok((loss, pos_term, neg_term))
}

/// Trains encoder + transition parameters with Adam on shuffled
/// minibatches. Writes one `epoch,loss,pos_term,neg_term` line per epoch
/// when a metrics path is given.
pub fn train_world_model(
    dataset: &Dataset,
    model_cfg: &ModelConfig,
    loss_cfg: &LossConfig,
    seed: u64,
    metrics_path: Option<&Path>,
) -> Result<(WorldModel, Vec<EpochStats>)> {
    model_cfg.validate()?;
    loss_cfg.validate()?;
    if dataset.transitions() == 0 {
        return Err(Error::Config("dataset has no transitions".into()));
    }
    let mut model = WorldModel::new(model_cfg.clone(), seed)?;
    let stats = train_world_model_into(&mut model, dataset, loss_cfg, seed, metrics_path)?;
    Ok((model, stats))
}

/// Same as [`train_world_model`] but continues from an existing model's
/// parameters (useful for tests that need a controlled start).
pub fn train_world_model_into(
    model: &mut WorldModel,
    dataset: &Dataset,
    loss_cfg: &LossConfig,
    seed: u64,
    metrics_path: Option<&Path>,
) -> Result<Vec<EpochStats>> {
    let k = dataset.k;
    let index = transition_index(dataset);
    let mut neg_rng = rng::stream(seed, 0x4E45_47);
    let mut metrics = match metrics_path {
        Some(p) => Some(std::io::BufWriter::new(std::fs::File::create(p)?)),
        None => None,
    };
    let mut all_stats = Vec::with_capacity(loss_cfg.epochs);

    for epoch in 0..loss_cfg.epochs {
        let mut order = index.clone();
        rng::shuffle(&mut order, &mut rng::stream(seed, 0x5348 + epoch as u64));
        let mut sums = (0.0f64, 0.0f64, 0.0f64);
        let mut batches = 0usize;
        for (batch_idx, chunk) in order.chunks(loss_cfg.batch_size).enumerate() {
            if chunk.len() < 2 {
                continue; // a batch of one has no negative
            }
            let obs_t = batch_obs(dataset, chunk, 0);
            let obs_next = batch_obs(dataset, chunk, 1);
            let actions = batch_actions(dataset, chunk);
            let negatives = sample_negatives(chunk.len(), &mut neg_rng)?;

            let mut tape = Tape::new(Mode::Train);
            let (loss, pos, neg) = contrastive_loss_graph(
                model, &mut tape, &obs_t, &obs_next, &actions, &negatives, k, loss_cfg,
            )?;
            let loss_v = tape.scalar(loss) as f64;
            if !loss_v.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: batch_idx });
            }
            sums.0 += loss_v;
            sums.1 += tape.scalar(pos) as f64;
            sums.2 += tape.scalar(neg) as f64;
            batches += 1;

            tape.backward(loss)?;
            let grads = tape.param_grads()?;
            adam_step(&mut model.params, &grads, loss_cfg.lr)?;
            for (name, value) in tape.buffer_updates() {
                model.params.set(name, value.clone());
            }
        }
        let n = batches.max(1) as f64;
        let stat = EpochStats {
            epoch,
            loss: sums.0 / n,
            pos_term: sums.1 / n,
            neg_term: sums.2 / n,
        };
        if let Some(m) = metrics.as_mut() {
            writeln!(m, "{},{},{},{}", stat.epoch, stat.loss, stat.pos_term, stat.neg_term)?;
        }
        all_stats.push(stat);
    }
    if let Some(mut m) = metrics {
        m.flush()?;
    }
    Ok(all_stats)
}

/// Latents of every frame of a dataset under the frozen encoder, plus
/// flattened per-slot position and in-hand labels.
pub struct EncodedFrames {
    /// `[frames * K, D_z]`
    pub latents: Tensor,
    /// `[frames * K, 3]` cm
    pub positions: Tensor,
    /// `[frames * K]` 0/1
    pub in_hand: Tensor,
}

/// Encode all frames with frozen statistics (eval mode), in batches.
pub fn encode_dataset(model: &WorldModel, dataset: &Dataset) -> Result<EncodedFrames> {
    let k = dataset.k;
    let dz = model.config.latent_dim;
    let mut latents = Vec::new();
    let mut positions = Vec::new();
    let mut in_hand = Vec::new();
    let frames: Vec<(usize, usize)> = dataset
        .episodes
        .iter()
        .enumerate()
        .flat_map(|(ep, e)| (0..e.frames()).map(move |f| (ep, f)))
        .collect();
    for chunk in frames.chunks(256) {
        let per = CHANNELS * CROP * CROP;
        let mut data = Vec::with_capacity(chunk.len() * k * per);
        for &(ep, f) in chunk {
            data.extend_from_slice(dataset.episodes[ep].observations[f].data());
        }
        let obs = Tensor::from_vec(&[chunk.len() * k, CHANNELS, CROP, CROP], data)?;
        let mut tape = Tape::new(Mode::Eval);
        let z = model.encode(&mut tape, &obs)?;
        latents.extend_from_slice(tape.value(z).data());
        for &(ep, f) in chunk {
            for slot in 0..k {
                positions.extend_from_slice(&dataset.episodes[ep].positions[f][slot]);
                in_hand.push(dataset.episodes[ep].in_hand[f][slot] as u8 as f32);
            }
        }
    }
    let rows = frames.len() * k;
    Ok(EncodedFrames {
        latents: Tensor::from_vec(&[rows, dz], latents)?,
        positions: Tensor::from_vec(&[rows, 3], positions)?,
        in_hand: Tensor::from_vec(&[rows], in_hand)?,
    })
}

const HEAD_LR: f32 = 1e-3;
const PROBE_EPOCHS: usize = 5;
const INHAND_EPOCHS: usize = 5;

/// The probe is trained on positions scaled by `v/15 - 1` (the action
/// normalization), and predictions are mapped back to cm.
pub const POSITION_SCALE_CM: f32 = 15.0;

/// cm -> normalized probe target.
pub fn normalize_position(p: [f32; 3]) -> [f32; 3] {
    [p[0] / POSITION_SCALE_CM - 1.0, p[1] / POSITION_SCALE_CM - 1.0, p[2] / POSITION_SCALE_CM - 1.0]
}

/// normalized probe output -> cm.
pub fn denormalize_position(p: [f32; 3]) -> [f32; 3] {
    [
        (p[0] + 1.0) * POSITION_SCALE_CM,
        (p[1] + 1.0) * POSITION_SCALE_CM,
        (p[2] + 1.0) * POSITION_SCALE_CM,
    ]
}

fn train_head(
    model: &mut WorldModel,
    encoded: &EncodedFrames,
    head: Head,
    epochs: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let rows = encoded.latents.shape()[0];
    let dz = encoded.latents.shape()[1];
    let mut losses = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        let mut order: Vec<usize> = (0..rows).collect();
        rng::shuffle(&mut order, &mut rng::stream(seed, 0x4845_41 + epoch as u64));
        let mut sum = 0.0f64;
        let mut batches = 0usize;
        for chunk in order.chunks(512) {
            let mut z = Vec::with_capacity(chunk.len() * dz);
            for &r in chunk {
                z.extend_from_slice(&encoded.latents.data()[r * dz..(r + 1) * dz]);
            }
            let z = Tensor::from_vec(&[chunk.len(), dz], z)?;
            let mut tape = Tape::new(Mode::Eval);
            let zi = tape.input_no_grad(z);
            let loss = match head {
                Head::Probe => {
                    let mut y = Vec::with_capacity(chunk.len() * 3);
                    for &r in chunk {
                        let p = &encoded.positions.data()[r * 3..(r + 1) * 3];
                        y.extend_from_slice(&normalize_position([p[0], p[1], p[2]]));
                    }
                    let target = tape.input_no_grad(Tensor::from_vec(&[chunk.len(), 3], y)?);
                    let pred = model.probe(&mut tape, zi)?;
                    let d = tape.sub(pred, target)?;
                    let sq = tape.mul(d, d)?;
                    tape.mean_all(sq)?
                }
                Head::InHand => {
                    let mut y = Vec::with_capacity(chunk.len());
                    for &r in chunk {
                        y.push(encoded.in_hand.data()[r]);
                    }
                    let target = tape.input_no_grad(Tensor::from_vec(&[chunk.len(), 1], y)?);
                    let logits = model.inhand_logits(&mut tape, zi)?;
                    tape.bce_with_logits(logits, target)?
                }
            };
            let v = tape.scalar(loss) as f64;
            if !v.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: batches });
            }
            sum += v;
            batches += 1;
            tape.backward(loss)?;
            let grads = tape.param_grads()?;
            adam_step(&mut model.params, &grads, HEAD_LR)?;
        }
        losses.push(sum / batches.max(1) as f64);
    }
    Ok(losses)
}

#[derive(Clone, Copy)]
enum Head {
    Probe,
    InHand,
}

/// Supervised L2 regression of per-slot (x, y, z) cm positions from
/// latents of the frozen world model. Returns per-epoch losses.
pub fn train_probe(model: &mut WorldModel, dataset: &Dataset, seed: u64) -> Result<Vec<f64>> {
    let encoded = encode_dataset(model, dataset)?;
    train_head(model, &encoded, Head::Probe, PROBE_EPOCHS, seed)
}

/// Binary cross-entropy training of the in-hand classifier on held flags.
pub fn train_inhand(model: &mut WorldModel, dataset: &Dataset, seed: u64) -> Result<Vec<f64>> {
    let encoded = encode_dataset(model, dataset)?;
    train_head(model, &encoded, Head::InHand, INHAND_EPOCHS, seed)
}

/// Accuracy of the in-hand classifier on a class-balanced subsample of
/// the dataset's frames.
pub fn inhand_balanced_accuracy(model: &WorldModel, dataset: &Dataset) -> Result<f64> {
    let encoded = encode_dataset(model, dataset)?;
    let rows = encoded.latents.shape()[0];
    let dz = encoded.latents.shape()[1];
    let positives: Vec<usize> =
        (0..rows).filter(|&r| encoded.in_hand.data()[r] > 0.5).collect();
    let negatives: Vec<usize> =
        (0..rows).filter(|&r| encoded.in_hand.data()[r] <= 0.5).collect();
    let n = positives.len().min(negatives.len());
    if n == 0 {
        return Err(Error::Eval("dataset has no class balance to measure".into()));
    }
    let mut correct = 0usize;
    for &r in positives.iter().take(n).chain(negatives.iter().take(n)) {
        let factor = &encoded.latents.data()[r * dz..(r + 1) * dz];
        let pred = model.inhand_predict(factor)?;
        if pred == (encoded.in_hand.data()[r] > 0.5) {
            correct += 1;
        }
    }
    Ok(correct as f64 / (2 * n) as f64)
}

/// Ground-truth in-gripper position constant, re-exported for tests.
pub const HAND_POSITION_CM: [f32; 3] = HAND_POSITION;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{generate_dataset, DataGenConfig, Task};

    fn unit_latent(values: &[f32]) -> LatentState {
        LatentState { k: 1, dim: values.len(), data: values.to_vec() }
    }

    #[test]
    fn hand_case_evaluates_to_exactly_one() {
        let cfg = LossConfig { margin: 1.0, sigma: 1.0, ..LossConfig::desk() };
        let loss = contrastive_loss(
            &unit_latent(&[0.0]),
            &unit_latent(&[1.0]),
            &unit_latent(&[0.0]),
            &unit_latent(&[1.0]),
            &cfg,
        );
        assert_eq!(loss, 1.0);
    }

    #[test]
    fn loss_vanishes_when_prediction_is_exact_and_negative_is_far() {
        let cfg = LossConfig { margin: 1.0, sigma: 1.0, ..LossConfig::desk() };
        let z_t = unit_latent(&[0.0, 0.0]);
        let z_next = unit_latent(&[0.5, -0.5]);
        let far = unit_latent(&[3.0, 3.0]);
        let loss = contrastive_loss(&z_t, &z_next, &z_next.clone(), &far, &cfg);
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn identical_negative_contributes_the_full_margin() {
        let cfg = LossConfig { margin: 1.0, sigma: 1.0, ..LossConfig::desk() };
        let z_t = unit_latent(&[0.3, -0.2]);
        let loss =
            contrastive_loss(&z_t, &z_t.clone(), &z_t.clone(), &z_t.clone(), &cfg);
        assert_eq!(loss, 1.0, "zero negative distance leaves exactly the margin");
    }

    #[test]
    fn loss_is_permutation_invariant() {
        let cfg = LossConfig::desk();
        let mk = |seed: u64| {
            use rand::Rng;
            let mut r = rng::stream(seed, 1);
            LatentState { k: 4, dim: 6, data: (0..24).map(|_| r.gen_range(-1.0f32..1.0)).collect() }
        };
        let (a, b, c, d) = (mk(1), mk(2), mk(3), mk(4));
        let perm = [2usize, 0, 3, 1];
        let direct = contrastive_loss(&a, &b, &c, &d, &cfg);
        let permuted = contrastive_loss(
            &a.permuted(&perm),
            &b.permuted(&perm),
            &c.permuted(&perm),
            &d.permuted(&perm),
            &cfg,
        );
        assert!((direct - permuted).abs() < 1e-12);
    }

    #[test]
    fn negatives_are_permutations_and_reproducible() {
        let mut r1 = rng::stream(5, 0);
        let mut r2 = rng::stream(5, 0);
        let a = sample_negatives(256, &mut r1).unwrap();
        let b = sample_negatives(256, &mut r2).unwrap();
        assert_eq!(a, b);
        let mut sorted = a.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..256).collect::<Vec<_>>());
        assert!(sample_negatives(1, &mut r1).is_err());
    }

    #[test]
    fn negative_position_frequencies_are_uniform() {
        // Over many draws, P(perm[0] = j) = 1/256 for every j; check the
        // count stays within 3 binomial standard deviations.
        let mut rng = rng::stream(6, 5);
        let draws = 10_000;
        let n = 256usize;
        let mut counts = vec![0usize; n];
        for _ in 0..draws {
            let perm = sample_negatives(n, &mut rng).unwrap();
            counts[perm[0]] += 1;
        }
        let p = 1.0 / n as f64;
        let mean = draws as f64 * p;
        let sd = (draws as f64 * p * (1.0 - p)).sqrt();
        for (j, &c) in counts.iter().enumerate() {
            assert!(
                (c as f64 - mean).abs() <= 3.0 * sd,
                "index {j} appeared {c} times (mean {mean:.1}, sd {sd:.1})"
            );
        }
    }

    #[test]
    fn satisfied_hinge_contributes_zero_gradient() {
        // When every negative pair is farther than the margin, the loss
        // gradient equals the gradient of the positive term alone.
        use crate::autodiff::{Mode, Tape};
        let ds = tiny_dataset();
        let model = WorldModel::new(tiny_model_cfg(), 50).unwrap();
        let index = transition_index(&ds);
        let batch: Vec<(usize, usize)> = index.into_iter().take(4).collect();
        let obs_t = batch_obs(&ds, &batch, 0);
        let obs_next = batch_obs(&ds, &batch, 1);
        let actions = batch_actions(&ds, &batch);
        // A margin of zero keeps the hinge permanently inactive
        // (distances are non-negative), which models "negative distance
        // exceeds the margin" exactly.
        let inactive = LossConfig { margin: 1e-9, ..LossConfig::desk() };
        let negatives = vec![1usize, 2, 3, 0];

        let grads_of = |use_full: bool| {
            let mut tape = Tape::new(Mode::Train);
            let (loss, pos, _) = contrastive_loss_graph(
                &model, &mut tape, &obs_t, &obs_next, &actions, &negatives, ds.k, &inactive,
            )
            .unwrap();
            tape.backward(if use_full { loss } else { pos }).unwrap();
            tape.param_grads().unwrap()
        };
        for ((name_a, ga), (name_b, gb)) in grads_of(true).iter().zip(grads_of(false).iter()) {
            assert_eq!(name_a, name_b);
            assert_eq!(ga.data(), gb.data(), "{name_a}");
        }
    }

    fn tiny_dataset() -> Dataset {
        let cfg = DataGenConfig::training(Task::Stack3, 48, 3);
        generate_dataset(&cfg).0
    }

    fn tiny_model_cfg() -> ModelConfig {
        ModelConfig { latent_dim: 6, gnn_layers: 1, hidden: 24, encoder_fc: 12, ..ModelConfig::default() }
    }

    fn tiny_loss_cfg() -> LossConfig {
        LossConfig { batch_size: 16, epochs: 3, lr: 1e-3, ..LossConfig::desk() }
    }

    #[test]
    fn training_is_deterministic_and_loss_decreases() {
        let ds = tiny_dataset();
        let (m1, s1) =
            train_world_model(&ds, &tiny_model_cfg(), &tiny_loss_cfg(), 11, None).unwrap();
        let (m2, s2) =
            train_world_model(&ds, &tiny_model_cfg(), &tiny_loss_cfg(), 11, None).unwrap();
        assert_eq!(s1, s2);
        for (name, t1, _) in m1.params.iter() {
            assert_eq!(t1.data(), m2.params.get(name).unwrap().data(), "{name}");
        }
        assert!(
            s1.last().unwrap().loss < s1.first().unwrap().loss,
            "loss should decrease: {s1:?}"
        );
        // A different seed gives different weights.
        let (m3, _) =
            train_world_model(&ds, &tiny_model_cfg(), &tiny_loss_cfg(), 12, None).unwrap();
        assert_ne!(
            m1.params.get("enc.fc3.w").unwrap().data(),
            m3.params.get("enc.fc3.w").unwrap().data()
        );
    }

    #[test]
    fn metrics_file_has_one_line_per_epoch() {
        let ds = tiny_dataset();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("metrics.csv");
        train_world_model(&ds, &tiny_model_cfg(), &tiny_loss_cfg(), 13, Some(&path)).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].starts_with("0,"));
        assert_eq!(lines[0].split(',').count(), 4);
    }

    #[test]
    fn probe_training_leaves_the_world_model_untouched() {
        let ds = tiny_dataset();
        let (mut model, _) =
            train_world_model(&ds, &tiny_model_cfg(), &tiny_loss_cfg(), 14, None).unwrap();
        let before: Vec<(String, Vec<f32>)> = model
            .params
            .iter()
            .filter(|(n, _, _)| !n.starts_with("probe."))
            .map(|(n, t, _)| (n.to_string(), t.data().to_vec()))
            .collect();
        let losses = train_probe(&mut model, &ds, 15).unwrap();
        assert_eq!(losses.len(), 5);
        assert!(losses.last().unwrap() < losses.first().unwrap());
        for (name, data) in before {
            assert_eq!(model.params.get(&name).unwrap().data(), &data[..], "{name}");
        }
    }

    #[test]
    fn inhand_training_learns_the_flag_on_tiny_data() {
        let ds = tiny_dataset();
        let (mut model, _) =
            train_world_model(&ds, &tiny_model_cfg(), &tiny_loss_cfg(), 16, None).unwrap();
        let before = model.params.get("enc.conv1.w").unwrap().clone();
        let losses = train_inhand(&mut model, &ds, 17).unwrap();
        assert!(losses.last().unwrap() < losses.first().unwrap());
        assert_eq!(model.params.get("enc.conv1.w").unwrap().data(), before.data());
    }

    #[test]
    fn inhand_head_separates_synthetic_clusters() {
        // Directly test the head machinery on separable latents: held
        // rows cluster at +1, grounded rows at -1 in the first coordinate.
        let dz = 6;
        let rows = 240;
        let mut latents = Vec::with_capacity(rows * dz);
        let mut flags = Vec::with_capacity(rows);
        for r in 0..rows {
            let held = r % 3 == 0;
            let base = if held { 1.0f32 } else { -1.0 };
            latents.push(base);
            for j in 1..dz {
                latents.push(0.1 * ((r * 7 + j) % 5) as f32);
            }
            flags.push(held as u8 as f32);
        }
        let encoded = EncodedFrames {
            latents: Tensor::from_vec(&[rows, dz], latents).unwrap(),
            positions: Tensor::zeros(&[rows, 3]),
            in_hand: Tensor::from_vec(&[rows], flags.clone()).unwrap(),
        };
        let mut model = WorldModel::new(tiny_model_cfg(), 20).unwrap();
        train_head(&mut model, &encoded, Head::InHand, 120, 21).unwrap();
        let mut correct = 0;
        for r in 0..rows {
            let factor = &encoded.latents.data()[r * dz..(r + 1) * dz];
            if model.inhand_predict(factor).unwrap() == (flags[r] > 0.5) {
                correct += 1;
            }
        }
        let acc = correct as f64 / rows as f64;
        assert!(acc >= 0.98, "synthetic balanced accuracy {acc}");
    }

    #[test]
    fn constant_latents_leave_probe_at_the_positional_spread() {
        // With zero-information latents the best the probe can do is
        // predict a constant; its RMSE approaches the dataset's
        // positional standard deviation.
        let ds = tiny_dataset();
        let mut model = WorldModel::new(tiny_model_cfg(), 18).unwrap();
        // Zero the encoder head so every latent is identical.
        for name in ["enc.fc3.w", "enc.fc3.b"] {
            let shape = model.params.get(name).unwrap().shape().to_vec();
            model.params.set(name, Tensor::zeros(&shape));
        }
        let encoded = encode_dataset(&model, &ds).unwrap();
        let rows = encoded.positions.shape()[0] as f64;
        let mut mean = [0.0f64; 3];
        for row in encoded.positions.data().chunks_exact(3) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += *v as f64 / rows;
            }
        }
        let mut var = 0.0f64;
        for row in encoded.positions.data().chunks_exact(3) {
            for (m, v) in mean.iter().zip(row) {
                var += (*v as f64 - m).powi(2) / rows;
            }
        }
        let spread = var.sqrt();

        let losses = train_head(&mut model, &encoded, Head::Probe, 150, 19).unwrap();
        // train loss is normalized mean squared error per coordinate;
        // convert back to cm on the same scale as `spread` (root of
        // summed-coordinate variance).
        let rmse = (losses.last().unwrap() * 3.0).sqrt() * POSITION_SCALE_CM as f64;
        assert!(
            (rmse - spread).abs() / spread < 0.2,
            "rmse {rmse:.3} vs positional spread {spread:.3}"
        );
    }
}
