//! The factored world model.
//!
//! A shared-weight CNN encoder maps each object's 14-channel crop to a
//! latent factor; a residual stack of graph-network layers predicts the
//! next latent state from the current one and the action. Because the
//! encoder runs per slot and the edge sums are order-free, both are
//! equivariant to slot permutations — the model cannot overfit slot
//! order and runs unchanged for any object count.
//!
//! The transition is `ẑ = y_L` with `y_0 = z` and
//! `y_i = y_{i-1} + GNN_i(y_{i-1}, a)`: every layer adds a residual, so a
//! model whose output layers are zero is exactly the identity map.
//!
//! Two small heads read individual latent factors: a binary in-hand
//! classifier used by the planning heuristics, and a position probe used
//! by the RMSE metric.

mod checkpoint;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta, TrainMeta, CHECKPOINT_MAGIC};

use crate::autodiff::{init_kaiming_uniform, Mode, NodeId, ParamKind, ParamSet, Tape};
use crate::rng;
use crate::sim::{Action, ActionKind, FactoredObservation, CHANNELS, CROP};
use crate::tensor::Tensor;
use crate::{Error, Result};

const BN_MOMENTUM: f32 = 0.1;
const BN_EPS: f32 = 1e-5;
const LN_EPS: f32 = 1e-5;

/// Architecture and ablation switches.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Latent dimension per object factor.
    pub latent_dim: usize,
    /// GNN layer count.
    pub gnn_layers: usize,
    /// Hidden width of the edge/node MLPs.
    pub hidden: usize,
    /// Width of the encoder's fully-connected head.
    pub encoder_fc: usize,
    /// Feed the action into the edge networks ("No Edge Actions" = false).
    pub edge_actions: bool,
    /// Keep the RGB channels ("No RGB" = false).
    pub use_rgb: bool,
    /// Keep the coordinate-grid channels ("No Coordinates" = false).
    pub use_coords: bool,
    /// Relational transition ("No Factorization" = false: one monolithic
    /// MLP over the concatenated slots, padded/truncated to `fixed_k`).
    pub factorized: bool,
    /// Slot count the monolithic ablation is built for.
    pub fixed_k: usize,
    /// Hidden width of the in-hand classifier.
    pub inhand_hidden: usize,
    /// Hidden width of the position probe.
    pub probe_hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            latent_dim: 32,
            gnn_layers: 2,
            hidden: 512,
            encoder_fc: 256,
            edge_actions: true,
            use_rgb: true,
            use_coords: true,
            factorized: true,
            fixed_k: 3,
            inhand_hidden: 64,
            probe_hidden: 256,
        }
    }
}

/// Dimension of the action vector: kind flag plus normalized (x, y).
pub const ACTION_DIM: usize = 3;

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.gnn_layers == 0 {
            return Err(Error::Config("gnn_layers must be >= 1".into()));
        }
        if self.latent_dim == 0 {
            return Err(Error::Config("latent_dim must be > 0".into()));
        }
        if !self.use_rgb && !self.use_coords {
            return Err(Error::Config("at least one of use_rgb/use_coords must be set".into()));
        }
        if self.hidden == 0 || self.encoder_fc == 0 {
            return Err(Error::Config("hidden widths must be > 0".into()));
        }
        if !self.factorized && self.fixed_k == 0 {
            return Err(Error::Config("fixed_k must be > 0 for the monolithic ablation".into()));
        }
        Ok(())
    }

    /// Encoder input channels after the ablation mask.
    pub fn in_channels(&self) -> usize {
        match (self.use_rgb, self.use_coords) {
            (true, true) => 14,
            (false, true) => 8,
            (true, false) => 6,
            (false, false) => unreachable!("rejected by validate"),
        }
    }

    /// Channel indices kept from the raw 14-channel observation.
    fn kept_channels(&self) -> Vec<usize> {
        let mut keep = Vec::new();
        for view in 0..2 {
            let base = view * 7;
            if self.use_rgb {
                keep.extend(base..base + 3);
            }
            if self.use_coords {
                keep.extend(base + 3..base + 7);
            }
        }
        keep
    }
}

/// K latent factors of dimension `dim`, slot-aligned with observations.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentState {
    pub k: usize,
    pub dim: usize,
    pub data: Vec<f32>,
}

impl LatentState {
    pub fn from_tensor(t: &Tensor) -> LatentState {
        assert_eq!(t.shape().len(), 2);
        LatentState { k: t.shape()[0], dim: t.shape()[1], data: t.data().to_vec() }
    }

    pub fn slot(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_vec(&[self.k, self.dim], self.data.clone()).expect("latent shape")
    }

    pub fn permuted(&self, perm: &[usize]) -> LatentState {
        assert_eq!(perm.len(), self.k);
        let mut data = Vec::with_capacity(self.data.len());
        for &src in perm {
            data.extend_from_slice(self.slot(src));
        }
        LatentState { k: self.k, dim: self.dim, data }
    }

    pub fn max_abs_diff(&self, other: &LatentState) -> f32 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max)
    }
}

/// Maps an action to the model's input vector: kind flag in {-1, +1} and
/// coordinates scaled to [-1, 1] by `v/15 - 1` (bijective over the desk).
pub fn action_vector(action: &Action) -> [f32; ACTION_DIM] {
    let kind = match action.kind {
        ActionKind::Pick => -1.0,
        ActionKind::Place => 1.0,
    };
    [kind, action.x / 15.0 - 1.0, action.y / 15.0 - 1.0]
}

/// Batch of action vectors as a `[B, 3]` tensor.
pub fn actions_tensor(actions: &[Action]) -> Tensor {
    let mut data = Vec::with_capacity(actions.len() * ACTION_DIM);
    for a in actions {
        data.extend_from_slice(&action_vector(a));
    }
    Tensor::from_vec(&[actions.len(), ACTION_DIM], data).expect("action batch")
}

/// Encoder + transition parameters plus the two latent-space heads.
#[derive(Clone, Debug)]
pub struct WorldModel {
    pub config: ModelConfig,
    pub params: ParamSet,
}

impl WorldModel {
    /// Fresh model with Kaiming-uniform weights drawn from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<WorldModel> {
        config.validate()?;
        let mut rng = rng::stream(seed, 0x9A7A);
        let mut p = ParamSet::new();
        let c_in = config.in_channels();
        let dz = config.latent_dim;

        let conv = |p: &mut ParamSet, name: &str, out_c: usize, in_c: usize, rng: &mut _| {
            p.insert(
                &format!("{name}.w"),
                init_kaiming_uniform(&[out_c, in_c, 5, 5], in_c * 25, rng),
                ParamKind::Trainable,
            );
            p.insert(&format!("{name}.b"), Tensor::zeros(&[out_c]), ParamKind::Trainable);
        };
        let bn = |p: &mut ParamSet, name: &str, c: usize| {
            p.insert(&format!("{name}.gamma"), Tensor::filled(&[c], 1.0), ParamKind::Trainable);
            p.insert(&format!("{name}.beta"), Tensor::zeros(&[c]), ParamKind::Trainable);
            p.insert(&format!("{name}.run_mean"), Tensor::zeros(&[c]), ParamKind::Buffer);
            p.insert(&format!("{name}.run_var"), Tensor::filled(&[c], 1.0), ParamKind::Buffer);
        };
        let fc = |p: &mut ParamSet, name: &str, d_in: usize, d_out: usize, rng: &mut _| {
            p.insert(
                &format!("{name}.w"),
                init_kaiming_uniform(&[d_in, d_out], d_in, rng),
                ParamKind::Trainable,
            );
            p.insert(&format!("{name}.b"), Tensor::zeros(&[d_out]), ParamKind::Trainable);
        };
        let ln = |p: &mut ParamSet, name: &str, d: usize| {
            p.insert(&format!("{name}.gamma"), Tensor::filled(&[d], 1.0), ParamKind::Trainable);
            p.insert(&format!("{name}.beta"), Tensor::zeros(&[d]), ParamKind::Trainable);
        };

        conv(&mut p, "enc.conv1", 32, c_in, &mut rng);
        bn(&mut p, "enc.bn1", 32);
        conv(&mut p, "enc.conv2", 64, 32, &mut rng);
        bn(&mut p, "enc.bn2", 64);
        conv(&mut p, "enc.conv3", 64, 64, &mut rng);
        fc(&mut p, "enc.fc1", 64, config.encoder_fc, &mut rng);
        fc(&mut p, "enc.fc2", config.encoder_fc, config.encoder_fc, &mut rng);
        fc(&mut p, "enc.fc3", config.encoder_fc, dz, &mut rng);

        // Residual output layers start at zero so the initial transition
        // is exactly the identity map; each layer then learns a delta.
        let fc_zero = |p: &mut ParamSet, name: &str, d_in: usize, d_out: usize| {
            p.insert(&format!("{name}.w"), Tensor::zeros(&[d_in, d_out]), ParamKind::Trainable);
            p.insert(&format!("{name}.b"), Tensor::zeros(&[d_out]), ParamKind::Trainable);
        };
        if config.factorized {
            for l in 0..config.gnn_layers {
                let edge_in = 2 * dz + if config.edge_actions { ACTION_DIM } else { 0 };
                fc(&mut p, &format!("gnn{l}.edge.fc1"), edge_in, config.hidden, &mut rng);
                ln(&mut p, &format!("gnn{l}.edge.ln"), config.hidden);
                fc(&mut p, &format!("gnn{l}.edge.fc2"), config.hidden, dz, &mut rng);
                let node_in = 2 * dz + ACTION_DIM;
                fc(&mut p, &format!("gnn{l}.node.fc1"), node_in, config.hidden, &mut rng);
                ln(&mut p, &format!("gnn{l}.node.ln"), config.hidden);
                fc_zero(&mut p, &format!("gnn{l}.node.fc2"), config.hidden, dz);
            }
        } else {
            let flat = config.fixed_k * dz;
            fc(&mut p, "mono.fc1", flat + ACTION_DIM, config.hidden, &mut rng);
            ln(&mut p, "mono.ln", config.hidden);
            fc_zero(&mut p, "mono.fc2", config.hidden, flat);
        }

        fc(&mut p, "inhand.fc1", dz, config.inhand_hidden, &mut rng);
        fc(&mut p, "inhand.fc2", config.inhand_hidden, 1, &mut rng);
        fc(&mut p, "probe.fc1", dz, config.probe_hidden, &mut rng);
        fc(&mut p, "probe.fc2", config.probe_hidden, config.probe_hidden, &mut rng);
        fc(&mut p, "probe.fc3", config.probe_hidden, 3, &mut rng);

        Ok(WorldModel { config, params: p })
    }

    /// Drops masked channels from a raw `[N, 14, 18, 18]` observation
    /// batch, yielding the encoder's input layout.
    pub fn mask_channels(&self, obs: &Tensor) -> Tensor {
        assert_eq!(obs.shape().len(), 4);
        assert_eq!(obs.shape()[1], CHANNELS);
        let keep = self.config.kept_channels();
        if keep.len() == CHANNELS {
            return obs.clone();
        }
        let n = obs.shape()[0];
        let plane = CROP * CROP;
        let mut data = Vec::with_capacity(n * keep.len() * plane);
        for i in 0..n {
            for &ch in &keep {
                let base = (i * CHANNELS + ch) * plane;
                data.extend_from_slice(&obs.data()[base..base + plane]);
            }
        }
        Tensor::from_vec(&[n, keep.len(), CROP, CROP], data).expect("masked obs")
    }

    /// Builds the shared per-slot encoder over a `[N, 14, 18, 18]` batch
    /// (N = transitions × slots). Returns a `[N, D_z]` node.
    pub fn encode(&self, tape: &mut Tape, obs: &Tensor) -> Result<NodeId> {
        let masked = self.mask_channels(obs);
        let x = tape.input_no_grad(masked);
        let p = &self.params;
        let c1w = tape.param(p, "enc.conv1.w")?;
        let c1b = tape.param(p, "enc.conv1.b")?;
        let mut h = tape.conv2d(x, c1w, c1b, 2, 1)?;
        h = self.bn(tape, "enc.bn1", h)?;
        h = tape.relu(h)?;
        let c2w = tape.param(p, "enc.conv2.w")?;
        let c2b = tape.param(p, "enc.conv2.b")?;
        h = tape.conv2d(h, c2w, c2b, 2, 1)?;
        h = self.bn(tape, "enc.bn2", h)?;
        h = tape.relu(h)?;
        let c3w = tape.param(p, "enc.conv3.w")?;
        let c3b = tape.param(p, "enc.conv3.b")?;
        h = tape.conv2d(h, c3w, c3b, 2, 1)?;
        h = tape.gap(h)?;
        h = self.fc(tape, "enc.fc1", h)?;
        h = tape.relu(h)?;
        h = self.fc(tape, "enc.fc2", h)?;
        h = tape.relu(h)?;
        self.fc(tape, "enc.fc3", h)
    }

    fn bn(&self, tape: &mut Tape, name: &str, x: NodeId) -> Result<NodeId> {
        let p = &self.params;
        let gamma = tape.param(p, &format!("{name}.gamma"))?;
        let beta = tape.param(p, &format!("{name}.beta"))?;
        let rm = tape.buffer(p, &format!("{name}.run_mean"))?;
        let rv = tape.buffer(p, &format!("{name}.run_var"))?;
        tape.batch_norm(x, gamma, beta, rm, rv, BN_MOMENTUM, BN_EPS)
    }

    fn fc(&self, tape: &mut Tape, name: &str, x: NodeId) -> Result<NodeId> {
        let p = &self.params;
        let w = tape.param(p, &format!("{name}.w"))?;
        let b = tape.param(p, &format!("{name}.b"))?;
        tape.linear(x, w, b)
    }

    fn ln(&self, tape: &mut Tape, name: &str, x: NodeId) -> Result<NodeId> {
        let p = &self.params;
        let gamma = tape.param(p, &format!("{name}.gamma"))?;
        let beta = tape.param(p, &format!("{name}.beta"))?;
        tape.layer_norm(x, gamma, beta, LN_EPS)
    }

    /// One graph-network layer's residual for latents `z` (`[B*K, D]`) and
    /// actions (`[B, 3]`). Edges run over ordered slot pairs within each
    /// transition; `K = 1` means no edges and a zero aggregate.
    pub fn gnn_layer(
        &self,
        tape: &mut Tape,
        layer: usize,
        z: NodeId,
        actions: NodeId,
        k: usize,
    ) -> Result<NodeId> {
        let n = tape.value(z).shape()[0];
        debug_assert_eq!(n % k, 0);
        let b = n / k;

        let mut src = Vec::with_capacity(b * k * (k - 1).max(0));
        let mut dst = Vec::with_capacity(src.capacity());
        let mut recv = Vec::with_capacity(src.capacity());
        let mut edge_b = Vec::with_capacity(src.capacity());
        for bi in 0..b {
            for i in 0..k {
                for j in 0..k {
                    if i == j {
                        continue;
                    }
                    src.push(bi * k + j);
                    dst.push(bi * k + i);
                    recv.push(bi * k + i);
                    edge_b.push(bi);
                }
            }
        }
        let src_z = tape.gather_rows(z, src)?;
        let dst_z = tape.gather_rows(z, dst)?;
        let e_in = if self.config.edge_actions {
            let a_e = tape.gather_rows(actions, edge_b)?;
            tape.concat_cols(&[src_z, dst_z, a_e])?
        } else {
            tape.concat_cols(&[src_z, dst_z])?
        };
        let mut e = self.fc(tape, &format!("gnn{layer}.edge.fc1"), e_in)?;
        e = self.ln(tape, &format!("gnn{layer}.edge.ln"), e)?;
        e = tape.relu(e)?;
        e = self.fc(tape, &format!("gnn{layer}.edge.fc2"), e)?;
        let agg = tape.aggregate_rows(e, recv, n)?;

        let node_b: Vec<usize> = (0..n).map(|r| r / k).collect();
        let a_n = tape.gather_rows(actions, node_b)?;
        let n_in = tape.concat_cols(&[z, a_n, agg])?;
        let mut h = self.fc(tape, &format!("gnn{layer}.node.fc1"), n_in)?;
        h = self.ln(tape, &format!("gnn{layer}.node.ln"), h)?;
        h = tape.relu(h)?;
        self.fc(tape, &format!("gnn{layer}.node.fc2"), h)
    }

    /// Latent transition `ẑ = y_L`, `y_i = y_{i-1} + GNN_i(y_{i-1}, a)`.
    /// With `factorized = false` a single MLP maps the concatenated slots
    /// (padded or truncated to `fixed_k`) plus the action to a residual;
    /// that variant is deliberately not permutation-equivariant.
    pub fn transition(
        &self,
        tape: &mut Tape,
        z: NodeId,
        actions: NodeId,
        k: usize,
    ) -> Result<NodeId> {
        if self.config.factorized {
            let mut y = z;
            for l in 0..self.config.gnn_layers {
                let delta = self.gnn_layer(tape, l, y, actions, k)?;
                y = tape.add(y, delta)?;
            }
            Ok(y)
        } else {
            let dz = self.config.latent_dim;
            let n = tape.value(z).shape()[0];
            let b = n / k;
            let kf = self.config.fixed_k;
            let kept = k.min(kf);
            let flat = tape.reshape(z, &[b, k * dz])?;
            let clipped = tape.slice_cols(flat, 0, kept * dz)?;
            let padded = if kept < kf {
                let zeros = tape.input_no_grad(Tensor::zeros(&[b, (kf - kept) * dz]));
                tape.concat_cols(&[clipped, zeros])?
            } else {
                clipped
            };
            let m_in = tape.concat_cols(&[padded, actions])?;
            let mut h = self.fc(tape, "mono.fc1", m_in)?;
            h = self.ln(tape, "mono.ln", h)?;
            h = tape.relu(h)?;
            let out = self.fc(tape, "mono.fc2", h)?; // [B, fixed_k * dz]
            let delta_kept = tape.slice_cols(out, 0, kept * dz)?;
            let delta_flat = if kept < k {
                let zeros = tape.input_no_grad(Tensor::zeros(&[b, (k - kept) * dz]));
                tape.concat_cols(&[delta_kept, zeros])?
            } else {
                delta_kept
            };
            let delta = tape.reshape(delta_flat, &[n, dz])?;
            tape.add(z, delta)
        }
    }

    /// In-hand classifier logits for per-slot latents `[N, D_z]`.
    pub fn inhand_logits(&self, tape: &mut Tape, z: NodeId) -> Result<NodeId> {
        let mut h = self.fc(tape, "inhand.fc1", z)?;
        h = tape.relu(h)?;
        self.fc(tape, "inhand.fc2", h)
    }

    /// Position probe: `[N, D_z] -> [N, 3]` centimeters.
    pub fn probe(&self, tape: &mut Tape, z: NodeId) -> Result<NodeId> {
        let mut h = self.fc(tape, "probe.fc1", z)?;
        h = tape.relu(h)?;
        h = self.fc(tape, "probe.fc2", h)?;
        h = tape.relu(h)?;
        self.fc(tape, "probe.fc3", h)
    }

    // ---- value-level (inference) wrappers ---------------------------------

    /// Encodes one observation with frozen statistics.
    pub fn encode_value(&self, obs: &FactoredObservation) -> Result<LatentState> {
        let mut tape = Tape::new(Mode::Eval);
        let z = self.encode(&mut tape, &obs.to_tensor())?;
        Ok(LatentState::from_tensor(tape.value(z)))
    }

    /// Applies the transition once.
    pub fn transition_value(&self, z: &LatentState, action: &Action) -> Result<LatentState> {
        let mut tape = Tape::new(Mode::Eval);
        let zn = tape.input_no_grad(z.to_tensor());
        let an = tape.input_no_grad(actions_tensor(std::slice::from_ref(action)));
        let out = self.transition(&mut tape, zn, an, z.k)?;
        Ok(LatentState::from_tensor(tape.value(out)))
    }

    /// Iterated transition: one latent per action, in order.
    pub fn rollout(&self, z0: &LatentState, actions: &[Action]) -> Result<Vec<LatentState>> {
        let mut out = Vec::with_capacity(actions.len());
        let mut z = z0.clone();
        for action in actions {
            z = self.transition_value(&z, action)?;
            out.push(z.clone());
        }
        Ok(out)
    }

    /// In-hand prediction for one latent factor: probability > 0.5. A
    /// logit of exactly zero predicts on-ground.
    pub fn inhand_predict(&self, factor: &[f32]) -> Result<bool> {
        Ok(self.inhand_logit(factor)? > 0.0)
    }

    /// Raw classifier logit for one latent factor.
    pub fn inhand_logit(&self, factor: &[f32]) -> Result<f32> {
        let mut tape = Tape::new(Mode::Eval);
        let z = tape.input_no_grad(Tensor::matrix(1, factor.len(), factor)?);
        let logit = self.inhand_logits(&mut tape, z)?;
        Ok(tape.value(logit).data()[0])
    }

    /// Per-slot (x, y, z) predictions in cm. The probe itself regresses
    /// normalized coordinates; this denormalizes.
    pub fn probe_positions(&self, z: &LatentState) -> Result<Vec<[f32; 3]>> {
        let mut tape = Tape::new(Mode::Eval);
        let zn = tape.input_no_grad(z.to_tensor());
        let out = self.probe(&mut tape, zn)?;
        Ok(tape
            .value(out)
            .data()
            .chunks_exact(3)
            .map(|c| crate::train::denormalize_position([c[0], c[1], c[2]]))
            .collect())
    }
}
