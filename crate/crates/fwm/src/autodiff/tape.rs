//! The recording tape: eager forward execution, reverse-mode backward,
//! and an f64 replay of the recorded graph for finite differences.

use super::kernels;
use super::params::ParamSet;
use crate::tensor::gemm::{gemm_nn, gemm_nt, gemm_tn};
use crate::tensor::Tensor;
use crate::{Error, Result};
use std::collections::HashMap;
use std::sync::Arc;

/// Handle to a node on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(pub(crate) usize);

/// Whether normalization layers use batch statistics (`Train`) or frozen
/// running statistics (`Eval`).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

pub use super::kernels::ConvDims;

#[derive(Clone, Debug)]
enum Op {
    Input,
    Param { name: String },
    Buffer { name: String },
    Add { a: NodeId, b: NodeId },
    Sub { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    Affine { x: NodeId, scale: f32, shift: f32 },
    Relu { x: NodeId },
    LeakyRelu { x: NodeId, slope: f32 },
    Sigmoid { x: NodeId },
    Linear { x: NodeId, w: NodeId, b: NodeId },
    Conv2d { x: NodeId, w: NodeId, b: NodeId, dims: ConvDims },
    BatchNorm { x: NodeId, gamma: NodeId, beta: NodeId, rm: NodeId, rv: NodeId, eps: f32 },
    LayerNorm { x: NodeId, gamma: NodeId, beta: NodeId, eps: f32 },
    Gap { x: NodeId },
    ConcatCols { xs: Vec<NodeId> },
    GatherRows { x: NodeId, idx: Arc<Vec<usize>> },
    AggregateRows { x: NodeId, map: Arc<Vec<usize>>, out_rows: usize },
    Reshape { x: NodeId },
    SliceCols { x: NodeId, start: usize, len: usize },
    SumRows { x: NodeId },
    GroupSum { x: NodeId, group: usize },
    MeanAll { x: NodeId },
    BceWithLogits { logits: NodeId, targets: NodeId },
}

impl Op {
    fn inputs(&self) -> Vec<NodeId> {
        match self {
            Op::Input | Op::Param { .. } | Op::Buffer { .. } => vec![],
            Op::Add { a, b } | Op::Sub { a, b } | Op::Mul { a, b } => vec![*a, *b],
            Op::Affine { x, .. }
            | Op::Relu { x }
            | Op::LeakyRelu { x, .. }
            | Op::Sigmoid { x }
            | Op::Gap { x }
            | Op::GatherRows { x, .. }
            | Op::AggregateRows { x, .. }
            | Op::Reshape { x }
            | Op::SliceCols { x, .. }
            | Op::SumRows { x }
            | Op::GroupSum { x, .. }
            | Op::MeanAll { x } => vec![*x],
            Op::Linear { x, w, b } => vec![*x, *w, *b],
            Op::Conv2d { x, w, b, .. } => vec![*x, *w, *b],
            Op::BatchNorm { x, gamma, beta, rm, rv, .. } => vec![*x, *gamma, *beta, *rm, *rv],
            Op::LayerNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            Op::ConcatCols { xs } => xs.clone(),
            Op::BceWithLogits { logits, targets } => vec![*logits, *targets],
        }
    }

    fn label(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Param { .. } => "param",
            Op::Buffer { .. } => "buffer",
            Op::Add { .. } => "add",
            Op::Sub { .. } => "sub",
            Op::Mul { .. } => "mul",
            Op::Affine { .. } => "affine",
            Op::Relu { .. } => "relu",
            Op::LeakyRelu { .. } => "leaky_relu",
            Op::Sigmoid { .. } => "sigmoid",
            Op::Linear { .. } => "linear",
            Op::Conv2d { .. } => "conv2d",
            Op::BatchNorm { .. } => "batch_norm",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Gap { .. } => "gap",
            Op::ConcatCols { .. } => "concat_cols",
            Op::GatherRows { .. } => "gather_rows",
            Op::AggregateRows { .. } => "aggregate_rows",
            Op::Reshape { .. } => "reshape",
            Op::SliceCols { .. } => "slice_cols",
            Op::SumRows { .. } => "sum_rows",
            Op::GroupSum { .. } => "group_sum",
            Op::MeanAll { .. } => "mean_all",
            Op::BceWithLogits { .. } => "bce_with_logits",
        }
    }
}

enum Aux {
    None,
    Conv { cols: Vec<f32> },
    Norm { mean: Vec<f32>, invstd: Vec<f32> },
}

/// Eagerly-executing autodiff tape.
pub struct Tape {
    mode: Mode,
    ops: Vec<Op>,
    values: Vec<Tensor>,
    aux: Vec<Aux>,
    requires_grad: Vec<bool>,
    grads: Option<Vec<Option<Tensor>>>,
    params_by_name: HashMap<String, NodeId>,
    param_order: Vec<(String, NodeId)>,
    buffer_updates: Vec<(String, Tensor)>,
}

impl Tape {
    pub fn new(mode: Mode) -> Self {
        Tape {
            mode,
            ops: Vec::new(),
            values: Vec::new(),
            aux: Vec::new(),
            requires_grad: Vec::new(),
            grads: None,
            params_by_name: HashMap::new(),
            param_order: Vec::new(),
            buffer_updates: Vec::new(),
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    fn push(&mut self, op: Op, value: Tensor, aux: Aux, requires_grad: bool) -> NodeId {
        let id = NodeId(self.ops.len());
        self.ops.push(op);
        self.values.push(value);
        self.aux.push(aux);
        self.requires_grad.push(requires_grad);
        id
    }

    fn shape_err(&self, op: &str, msg: String) -> Error {
        Error::Shape { node: format!("{}#{}", op, self.ops.len()), msg }
    }

    fn needs(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.requires_grad[id.0])
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.values[id.0]
    }

    /// Scalar value of a 1-element node.
    pub fn scalar(&self, id: NodeId) -> f32 {
        debug_assert_eq!(self.values[id.0].numel(), 1);
        self.values[id.0].data()[0]
    }

    // ---- leaves ----------------------------------------------------------

    pub fn input(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Input, value, Aux::None, true)
    }

    /// An input that will not receive a gradient (observation batches).
    pub fn input_no_grad(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Input, value, Aux::None, false)
    }

    /// Registers a trainable parameter; repeated calls with the same name
    /// return the same node so its gradient accumulates across uses.
    pub fn param(&mut self, params: &ParamSet, name: &str) -> Result<NodeId> {
        if let Some(&id) = self.params_by_name.get(name) {
            return Ok(id);
        }
        let value = params
            .get(name)
            .ok_or_else(|| Error::Autodiff(format!("unknown parameter `{name}`")))?
            .clone();
        let id = self.push(Op::Param { name: name.to_string() }, value, Aux::None, true);
        self.params_by_name.insert(name.to_string(), id);
        self.param_order.push((name.to_string(), id));
        Ok(id)
    }

    /// Registers a non-trainable buffer (running statistics).
    pub fn buffer(&mut self, params: &ParamSet, name: &str) -> Result<NodeId> {
        if let Some(&id) = self.params_by_name.get(name) {
            return Ok(id);
        }
        let value = params
            .get(name)
            .ok_or_else(|| Error::Autodiff(format!("unknown buffer `{name}`")))?
            .clone();
        let id = self.push(Op::Buffer { name: name.to_string() }, value, Aux::None, false);
        self.params_by_name.insert(name.to_string(), id);
        Ok(id)
    }

    // ---- elementwise -----------------------------------------------------

    fn binary_check(&self, op: &str, a: NodeId, b: NodeId) -> Result<()> {
        if self.values[a.0].shape() != self.values[b.0].shape() {
            return Err(self.shape_err(
                op,
                format!(
                    "operand shapes {:?} vs {:?}",
                    self.values[a.0].shape(),
                    self.values[b.0].shape()
                ),
            ));
        }
        Ok(())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_check("add", a, b)?;
        let data: Vec<f32> = self.values[a.0]
            .data()
            .iter()
            .zip(self.values[b.0].data())
            .map(|(x, y)| x + y)
            .collect();
        let value = Tensor::from_vec(self.values[a.0].shape(), data)?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(Op::Add { a, b }, value, Aux::None, rg))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_check("sub", a, b)?;
        let data: Vec<f32> = self.values[a.0]
            .data()
            .iter()
            .zip(self.values[b.0].data())
            .map(|(x, y)| x - y)
            .collect();
        let value = Tensor::from_vec(self.values[a.0].shape(), data)?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(Op::Sub { a, b }, value, Aux::None, rg))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_check("mul", a, b)?;
        let data: Vec<f32> = self.values[a.0]
            .data()
            .iter()
            .zip(self.values[b.0].data())
            .map(|(x, y)| x * y)
            .collect();
        let value = Tensor::from_vec(self.values[a.0].shape(), data)?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(Op::Mul { a, b }, value, Aux::None, rg))
    }

    /// `y = scale * x + shift` elementwise with scalar constants.
    pub fn affine(&mut self, x: NodeId, scale: f32, shift: f32) -> Result<NodeId> {
        let data: Vec<f32> =
            self.values[x.0].data().iter().map(|v| scale * v + shift).collect();
        let value = Tensor::from_vec(self.values[x.0].shape(), data)?;
        let rg = self.needs(&[x]);
        Ok(self.push(Op::Affine { x, scale, shift }, value, Aux::None, rg))
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        let data: Vec<f32> = self.values[x.0].data().iter().map(|v| v.max(0.0)).collect();
        let value = Tensor::from_vec(self.values[x.0].shape(), data)?;
        let rg = self.needs(&[x]);
        Ok(self.push(Op::Relu { x }, value, Aux::None, rg))
    }

    pub fn leaky_relu(&mut self, x: NodeId, slope: f32) -> Result<NodeId> {
        let data: Vec<f32> = self.values[x.0]
            .data()
            .iter()
            .map(|&v| if v > 0.0 { v } else { slope * v })
            .collect();
        let value = Tensor::from_vec(self.values[x.0].shape(), data)?;
        let rg = self.needs(&[x]);
        Ok(self.push(Op::LeakyRelu { x, slope }, value, Aux::None, rg))
    }

    pub fn sigmoid(&mut self, x: NodeId) -> Result<NodeId> {
        let data: Vec<f32> =
            self.values[x.0].data().iter().map(|&v| 1.0 / (1.0 + (-v).exp())).collect();
        let value = Tensor::from_vec(self.values[x.0].shape(), data)?;
        let rg = self.needs(&[x]);
        Ok(self.push(Op::Sigmoid { x }, value, Aux::None, rg))
    }

    // ---- linear algebra ---------------------------------------------------

    /// `y[N, out] = x[N, in] · w[in, out] + b[out]`
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let (xv, wv, bv) = (&self.values[x.0], &self.values[w.0], &self.values[b.0]);
        if xv.shape().len() != 2 || wv.shape().len() != 2 {
            return Err(self.shape_err("linear", "expects 2-D x and w".into()));
        }
        let (n, din) = (xv.shape()[0], xv.shape()[1]);
        let (wi, wo) = (wv.shape()[0], wv.shape()[1]);
        if din != wi || bv.numel() != wo {
            return Err(self.shape_err(
                "linear",
                format!("x {:?}, w {:?}, b {:?}", xv.shape(), wv.shape(), bv.shape()),
            ));
        }
        let mut y = vec![0.0f32; n * wo];
        gemm_nn(n, din, wo, xv.data(), wv.data(), &mut y);
        for r in 0..n {
            let row = &mut y[r * wo..(r + 1) * wo];
            for (o, bo) in row.iter_mut().zip(bv.data()) {
                *o += bo;
            }
        }
        let value = Tensor::from_vec(&[n, wo], y)?;
        let rg = self.needs(&[x, w, b]);
        Ok(self.push(Op::Linear { x, w, b }, value, Aux::None, rg))
    }

    pub fn conv2d(&mut self, x: NodeId, w: NodeId, b: NodeId, stride: usize, pad: usize) -> Result<NodeId> {
        let (xv, wv, bv) = (&self.values[x.0], &self.values[w.0], &self.values[b.0]);
        if xv.shape().len() != 4 || wv.shape().len() != 4 {
            return Err(self.shape_err("conv2d", "expects 4-D x and w".into()));
        }
        let dims = ConvDims {
            batch: xv.shape()[0],
            in_c: xv.shape()[1],
            in_h: xv.shape()[2],
            in_w: xv.shape()[3],
            out_c: wv.shape()[0],
            kernel: wv.shape()[2],
            stride,
            pad,
        };
        if wv.shape()[1] != dims.in_c || wv.shape()[2] != wv.shape()[3] {
            return Err(self.shape_err(
                "conv2d",
                format!("weight {:?} does not match input {:?}", wv.shape(), xv.shape()),
            ));
        }
        if bv.numel() != dims.out_c {
            return Err(self.shape_err("conv2d", format!("bias {:?}", bv.shape())));
        }
        if dims.in_h + 2 * pad < dims.kernel || dims.in_w + 2 * pad < dims.kernel {
            return Err(self.shape_err("conv2d", "kernel larger than padded input".into()));
        }
        let (y, cols) = kernels::conv2d_fwd(&dims, xv.data(), wv.data(), bv.data());
        let value = Tensor::from_vec(&[dims.batch, dims.out_c, dims.out_h(), dims.out_w()], y)?;
        let rg = self.needs(&[x, w, b]);
        Ok(self.push(Op::Conv2d { x, w, b, dims }, value, Aux::Conv { cols }, rg))
    }

    /// Batch normalization over `[B, C, H, W]`. In `Train` mode batch
    /// statistics are used and running-buffer updates are queued (fetch
    /// them with [`Tape::buffer_updates`]); in `Eval` mode the running
    /// statistics make this a per-sample affine map.
    pub fn batch_norm(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        rm: NodeId,
        rv: NodeId,
        momentum: f32,
        eps: f32,
    ) -> Result<NodeId> {
        let xv = &self.values[x.0];
        if xv.shape().len() != 4 {
            return Err(self.shape_err("batch_norm", format!("expects 4-D, got {:?}", xv.shape())));
        }
        let (bsz, c, h, w) = (xv.shape()[0], xv.shape()[1], xv.shape()[2], xv.shape()[3]);
        for (nm, p) in [("gamma", gamma), ("beta", beta), ("mean", rm), ("var", rv)] {
            if self.values[p.0].numel() != c {
                return Err(self.shape_err("batch_norm", format!("{nm} len != {c}")));
            }
        }
        let hw = h * w;
        let (mean, var) = match self.mode {
            Mode::Train => kernels::channel_stats(xv.data(), bsz, c, hw),
            Mode::Eval => (self.values[rm.0].data().to_vec(), self.values[rv.0].data().to_vec()),
        };
        let (y, invstd) = kernels::batch_norm_apply(
            xv.data(),
            bsz,
            c,
            hw,
            &mean,
            &var,
            self.values[gamma.0].data(),
            self.values[beta.0].data(),
            eps,
        );
        if self.mode == Mode::Train {
            // Unbiased variance feeds the running buffer, as is conventional.
            let n = (bsz * hw) as f32;
            let correction = if n > 1.0 { n / (n - 1.0) } else { 1.0 };
            let (rm_name, rv_name) = match (&self.ops[rm.0], &self.ops[rv.0]) {
                (Op::Buffer { name: a }, Op::Buffer { name: b }) => (a.clone(), b.clone()),
                _ => {
                    return Err(Error::Autodiff(
                        "batch_norm running stats must be buffer nodes".into(),
                    ))
                }
            };
            let new_rm: Vec<f32> = self.values[rm.0]
                .data()
                .iter()
                .zip(&mean)
                .map(|(old, m)| (1.0 - momentum) * old + momentum * m)
                .collect();
            let new_rv: Vec<f32> = self.values[rv.0]
                .data()
                .iter()
                .zip(&var)
                .map(|(old, v)| (1.0 - momentum) * old + momentum * v * correction)
                .collect();
            self.buffer_updates.push((rm_name, Tensor::vector(&new_rm)));
            self.buffer_updates.push((rv_name, Tensor::vector(&new_rv)));
        }
        let value = Tensor::from_vec(xv.shape(), y)?;
        let rg = self.needs(&[x, gamma, beta]);
        Ok(self.push(
            Op::BatchNorm { x, gamma, beta, rm, rv, eps },
            value,
            Aux::Norm { mean, invstd },
            rg,
        ))
    }

    pub fn layer_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId, eps: f32) -> Result<NodeId> {
        let xv = &self.values[x.0];
        if xv.shape().len() != 2 {
            return Err(self.shape_err("layer_norm", format!("expects 2-D, got {:?}", xv.shape())));
        }
        let (rows, dim) = (xv.shape()[0], xv.shape()[1]);
        if self.values[gamma.0].numel() != dim || self.values[beta.0].numel() != dim {
            return Err(self.shape_err("layer_norm", "gamma/beta length mismatch".into()));
        }
        let (y, mean, invstd) = kernels::layer_norm_fwd(
            xv.data(),
            rows,
            dim,
            self.values[gamma.0].data(),
            self.values[beta.0].data(),
            eps,
        );
        let value = Tensor::from_vec(xv.shape(), y)?;
        let rg = self.needs(&[x, gamma, beta]);
        Ok(self.push(Op::LayerNorm { x, gamma, beta, eps }, value, Aux::Norm { mean, invstd }, rg))
    }

    /// Global average pooling `[B, C, H, W] -> [B, C]`.
    pub fn gap(&mut self, x: NodeId) -> Result<NodeId> {
        let xv = &self.values[x.0];
        if xv.shape().len() != 4 {
            return Err(self.shape_err("gap", format!("expects 4-D, got {:?}", xv.shape())));
        }
        let (b, c, h, w) = (xv.shape()[0], xv.shape()[1], xv.shape()[2], xv.shape()[3]);
        let hw = (h * w) as f32;
        let mut y = vec![0.0f32; b * c];
        for bi in 0..b {
            for ci in 0..c {
                let plane = &xv.data()[(bi * c + ci) * h * w..(bi * c + ci + 1) * h * w];
                let mut s = 0.0f32;
                for v in plane {
                    s += v;
                }
                y[bi * c + ci] = s / hw;
            }
        }
        let value = Tensor::from_vec(&[b, c], y)?;
        let rg = self.needs(&[x]);
        Ok(self.push(Op::Gap { x }, value, Aux::None, rg))
    }

    /// Concatenate 2-D tensors along columns.
    pub fn concat_cols(&mut self, xs: &[NodeId]) -> Result<NodeId> {
        if xs.is_empty() {
            return Err(self.shape_err("concat_cols", "no inputs".into()));
        }
        let rows = self.values[xs[0].0].shape()[0];
        for x in xs {
            let s = self.values[x.0].shape();
            if s.len() != 2 || s[0] != rows {
                return Err(self.shape_err("concat_cols", format!("bad operand shape {s:?}")));
            }
        }
        let total: usize = xs.iter().map(|x| self.values[x.0].shape()[1]).sum();
        let mut y = vec![0.0f32; rows * total];
        for r in 0..rows {
            let mut off = 0usize;
            for x in xs {
                let c = self.values[x.0].shape()[1];
                y[r * total + off..r * total + off + c]
                    .copy_from_slice(self.values[x.0].row(r));
                off += c;
            }
        }
        let value = Tensor::from_vec(&[rows, total], y)?;
        let rg = self.needs(xs);
        Ok(self.push(Op::ConcatCols { xs: xs.to_vec() }, value, Aux::None, rg))
    }

    /// `y[r] = x[idx[r]]` over 2-D rows.
    pub fn gather_rows(&mut self, x: NodeId, idx: Vec<usize>) -> Result<NodeId> {
        let xv = &self.values[x.0];
        if xv.shape().len() != 2 {
            return Err(self.shape_err("gather_rows", "expects 2-D".into()));
        }
        let (n, d) = (xv.shape()[0], xv.shape()[1]);
        if idx.iter().any(|&i| i >= n) {
            return Err(self.shape_err("gather_rows", "index out of range".into()));
        }
        let mut y = vec![0.0f32; idx.len() * d];
        for (r, &i) in idx.iter().enumerate() {
            y[r * d..(r + 1) * d].copy_from_slice(xv.row(i));
        }
        let value = Tensor::from_vec(&[idx.len(), d], y)?;
        let rg = self.needs(&[x]);
        Ok(self.push(Op::GatherRows { x, idx: Arc::new(idx) }, value, Aux::None, rg))
    }

    /// Scatter-add rows: `y[map[r]] += x[r]`, output has `out_rows` rows.
    pub fn aggregate_rows(&mut self, x: NodeId, map: Vec<usize>, out_rows: usize) -> Result<NodeId> {
        let xv = &self.values[x.0];
        if xv.shape().len() != 2 {
            return Err(self.shape_err("aggregate_rows", "expects 2-D".into()));
        }
        let (n, d) = (xv.shape()[0], xv.shape()[1]);
        if map.len() != n || map.iter().any(|&i| i >= out_rows) {
            return Err(self.shape_err("aggregate_rows", "bad row map".into()));
        }
        let mut y = vec![0.0f32; out_rows * d];
        for (r, &dst) in map.iter().enumerate() {
            let src = xv.row(r);
            let out = &mut y[dst * d..(dst + 1) * d];
            for (o, s) in out.iter_mut().zip(src) {
                *o += s;
            }
        }
        let value = Tensor::from_vec(&[out_rows, d], y)?;
        let rg = self.needs(&[x]);
        Ok(self.push(Op::AggregateRows { x, map: Arc::new(map), out_rows }, value, Aux::None, rg))
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId> {
        let value = self.values[x.0].reshaped(shape)?;
        let rg = self.needs(&[x]);
        Ok(self.push(Op::Reshape { x }, value, Aux::None, rg))
    }

    /// Column slice of a 2-D tensor: keeps `len` columns from `start`.
    pub fn slice_cols(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let xv = &self.values[x.0];
        if xv.shape().len() != 2 || start + len > xv.shape()[1] {
            return Err(self.shape_err(
                "slice_cols",
                format!("slice {start}..{} of {:?}", start + len, xv.shape()),
            ));
        }
        let (n, d) = (xv.shape()[0], xv.shape()[1]);
        let mut y = vec![0.0f32; n * len];
        for r in 0..n {
            y[r * len..(r + 1) * len].copy_from_slice(&xv.data()[r * d + start..r * d + start + len]);
        }
        let value = Tensor::from_vec(&[n, len], y)?;
        let rg = self.needs(&[x]);
        Ok(self.push(Op::SliceCols { x, start, len }, value, Aux::None, rg))
    }

    /// Row sums of a 2-D tensor: `[N, D] -> [N]`.
    pub fn sum_rows(&mut self, x: NodeId) -> Result<NodeId> {
        let xv = &self.values[x.0];
        if xv.shape().len() != 2 {
            return Err(self.shape_err("sum_rows", "expects 2-D".into()));
        }
        let (n, d) = (xv.shape()[0], xv.shape()[1]);
        let mut y = vec![0.0f32; n];
        for r in 0..n {
            let mut s = 0.0f32;
            for v in &xv.data()[r * d..(r + 1) * d] {
                s += v;
            }
            y[r] = s;
        }
        let value = Tensor::from_vec(&[n], y)?;
        let rg = self.needs(&[x]);
        Ok(self.push(Op::SumRows { x }, value, Aux::None, rg))
    }

    /// Sums consecutive groups of `group` entries: `[N] -> [N / group]`.
    pub fn group_sum(&mut self, x: NodeId, group: usize) -> Result<NodeId> {
        let xv = &self.values[x.0];
        if xv.shape().len() != 1 || group == 0 || xv.numel() % group != 0 {
            return Err(self.shape_err(
                "group_sum",
                format!("cannot group {:?} by {group}", xv.shape()),
            ));
        }
        let out = xv.numel() / group;
        let mut y = vec![0.0f32; out];
        for (i, yo) in y.iter_mut().enumerate() {
            let mut s = 0.0f32;
            for v in &xv.data()[i * group..(i + 1) * group] {
                s += v;
            }
            *yo = s;
        }
        let value = Tensor::from_vec(&[out], y)?;
        let rg = self.needs(&[x]);
        Ok(self.push(Op::GroupSum { x, group }, value, Aux::None, rg))
    }

    /// Mean over all elements, yielding a scalar node.
    pub fn mean_all(&mut self, x: NodeId) -> Result<NodeId> {
        let xv = &self.values[x.0];
        if xv.numel() == 0 {
            return Err(self.shape_err("mean_all", "empty tensor".into()));
        }
        let mut s = 0.0f32;
        for v in xv.data() {
            s += v;
        }
        let value = Tensor::scalar(s / xv.numel() as f32);
        let rg = self.needs(&[x]);
        Ok(self.push(Op::MeanAll { x }, value, Aux::None, rg))
    }

    /// Numerically stable `mean(max(l,0) - l*t + ln(1 + exp(-|l|)))`.
    pub fn bce_with_logits(&mut self, logits: NodeId, targets: NodeId) -> Result<NodeId> {
        self.binary_check("bce_with_logits", logits, targets)?;
        let lv = self.values[logits.0].data();
        let tv = self.values[targets.0].data();
        let n = lv.len() as f32;
        let mut s = 0.0f32;
        for (l, t) in lv.iter().zip(tv) {
            s += l.max(0.0) - l * t + (-l.abs()).exp().ln_1p();
        }
        let value = Tensor::scalar(s / n);
        let rg = self.needs(&[logits]);
        Ok(self.push(Op::BceWithLogits { logits, targets }, value, Aux::None, rg))
    }

    // ---- backward ---------------------------------------------------------

    /// Seeds a scalar node with gradient 1 and runs the backward pass.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if self.values[loss.0].numel() != 1 {
            return Err(Error::Autodiff(format!(
                "backward expects a scalar node, got shape {:?}",
                self.values[loss.0].shape()
            )));
        }
        self.backward_seeded(loss, Tensor::scalar(1.0))
    }

    /// Runs backward from `node` with an explicit upstream gradient.
    pub fn backward_seeded(&mut self, node: NodeId, seed: Tensor) -> Result<()> {
        if seed.shape() != self.values[node.0].shape() {
            return Err(Error::Autodiff("seed shape mismatch".into()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.ops.len()];
        grads[node.0] = Some(seed);

        for id in (0..=node.0).rev() {
            let Some(dy) = grads[id].take() else { continue };
            if !self.requires_grad[id] {
                grads[id] = Some(dy);
                continue;
            }
            self.backprop_one(id, &dy, &mut grads)?;
            grads[id] = Some(dy);
        }
        self.grads = Some(grads);
        Ok(())
    }

    fn accumulate(grads: &mut [Option<Tensor>], target: NodeId, shape: &[usize], contrib: Vec<f32>) {
        match &mut grads[target.0] {
            Some(existing) => {
                for (e, c) in existing.data_mut().iter_mut().zip(&contrib) {
                    *e += c;
                }
            }
            slot => {
                *slot = Some(Tensor::from_vec(shape, contrib).expect("gradient shape"));
            }
        }
    }

    fn backprop_one(&self, id: usize, dy: &Tensor, grads: &mut Vec<Option<Tensor>>) -> Result<()> {
        let op = &self.ops[id];
        match op {
            Op::Input | Op::Param { .. } | Op::Buffer { .. } => {}
            Op::Add { a, b } => {
                for t in [a, b] {
                    if self.requires_grad[t.0] {
                        Self::accumulate(grads, *t, self.values[t.0].shape(), dy.data().to_vec());
                    }
                }
            }
            Op::Sub { a, b } => {
                if self.requires_grad[a.0] {
                    Self::accumulate(grads, *a, self.values[a.0].shape(), dy.data().to_vec());
                }
                if self.requires_grad[b.0] {
                    let neg: Vec<f32> = dy.data().iter().map(|v| -v).collect();
                    Self::accumulate(grads, *b, self.values[b.0].shape(), neg);
                }
            }
            Op::Mul { a, b } => {
                if self.requires_grad[a.0] {
                    let g: Vec<f32> = dy
                        .data()
                        .iter()
                        .zip(self.values[b.0].data())
                        .map(|(d, v)| d * v)
                        .collect();
                    Self::accumulate(grads, *a, self.values[a.0].shape(), g);
                }
                if self.requires_grad[b.0] {
                    let g: Vec<f32> = dy
                        .data()
                        .iter()
                        .zip(self.values[a.0].data())
                        .map(|(d, v)| d * v)
                        .collect();
                    Self::accumulate(grads, *b, self.values[b.0].shape(), g);
                }
            }
            Op::Affine { x, scale, .. } => {
                if self.requires_grad[x.0] {
                    let g: Vec<f32> = dy.data().iter().map(|v| v * scale).collect();
                    Self::accumulate(grads, *x, self.values[x.0].shape(), g);
                }
            }
            Op::Relu { x } => {
                if self.requires_grad[x.0] {
                    let g: Vec<f32> = dy
                        .data()
                        .iter()
                        .zip(self.values[x.0].data())
                        .map(|(d, &v)| if v > 0.0 { *d } else { 0.0 })
                        .collect();
                    Self::accumulate(grads, *x, self.values[x.0].shape(), g);
                }
            }
            Op::LeakyRelu { x, slope } => {
                if self.requires_grad[x.0] {
                    let g: Vec<f32> = dy
                        .data()
                        .iter()
                        .zip(self.values[x.0].data())
                        .map(|(d, &v)| if v > 0.0 { *d } else { slope * d })
                        .collect();
                    Self::accumulate(grads, *x, self.values[x.0].shape(), g);
                }
            }
            Op::Sigmoid { x } => {
                if self.requires_grad[x.0] {
                    let g: Vec<f32> = dy
                        .data()
                        .iter()
                        .zip(self.values[id].data())
                        .map(|(d, &y)| d * y * (1.0 - y))
                        .collect();
                    Self::accumulate(grads, *x, self.values[x.0].shape(), g);
                }
            }
            Op::Linear { x, w, b } => {
                let xv = &self.values[x.0];
                let wv = &self.values[w.0];
                let (n, din) = (xv.shape()[0], xv.shape()[1]);
                let dout = wv.shape()[1];
                if self.requires_grad[x.0] {
                    let mut dx = vec![0.0f32; n * din];
                    gemm_nt(n, dout, din, dy.data(), wv.data(), &mut dx);
                    Self::accumulate(grads, *x, xv.shape(), dx);
                }
                if self.requires_grad[w.0] {
                    let mut dw = vec![0.0f32; din * dout];
                    gemm_tn(n, din, dout, xv.data(), dy.data(), &mut dw);
                    Self::accumulate(grads, *w, wv.shape(), dw);
                }
                if self.requires_grad[b.0] {
                    let mut db = vec![0.0f32; dout];
                    for r in 0..n {
                        for (o, d) in db.iter_mut().zip(&dy.data()[r * dout..(r + 1) * dout]) {
                            *o += d;
                        }
                    }
                    Self::accumulate(grads, *b, self.values[b.0].shape(), db);
                }
            }
            Op::Conv2d { x, w, b, dims } => {
                let Aux::Conv { cols } = &self.aux[id] else {
                    return Err(Error::Autodiff("missing conv aux".into()));
                };
                let (dx, dw, db) =
                    kernels::conv2d_bwd(dims, cols, self.values[w.0].data(), dy.data());
                if self.requires_grad[x.0] {
                    Self::accumulate(grads, *x, self.values[x.0].shape(), dx);
                }
                if self.requires_grad[w.0] {
                    Self::accumulate(grads, *w, self.values[w.0].shape(), dw);
                }
                if self.requires_grad[b.0] {
                    Self::accumulate(grads, *b, self.values[b.0].shape(), db);
                }
            }
            Op::BatchNorm { x, gamma, beta, .. } => {
                let Aux::Norm { mean, invstd } = &self.aux[id] else {
                    return Err(Error::Autodiff("missing bn aux".into()));
                };
                let xv = &self.values[x.0];
                let (bsz, c, h, w) =
                    (xv.shape()[0], xv.shape()[1], xv.shape()[2], xv.shape()[3]);
                let (dx, dgamma, dbeta) = kernels::batch_norm_bwd(
                    xv.data(),
                    bsz,
                    c,
                    h * w,
                    mean,
                    invstd,
                    self.values[gamma.0].data(),
                    dy.data(),
                    self.mode == Mode::Train,
                );
                if self.requires_grad[x.0] {
                    Self::accumulate(grads, *x, xv.shape(), dx);
                }
                if self.requires_grad[gamma.0] {
                    Self::accumulate(grads, *gamma, self.values[gamma.0].shape(), dgamma);
                }
                if self.requires_grad[beta.0] {
                    Self::accumulate(grads, *beta, self.values[beta.0].shape(), dbeta);
                }
            }
            Op::LayerNorm { x, gamma, beta, .. } => {
                let Aux::Norm { mean, invstd } = &self.aux[id] else {
                    return Err(Error::Autodiff("missing ln aux".into()));
                };
                let xv = &self.values[x.0];
                let (rows, dim) = (xv.shape()[0], xv.shape()[1]);
                let (dx, dgamma, dbeta) = kernels::layer_norm_bwd(
                    xv.data(),
                    rows,
                    dim,
                    mean,
                    invstd,
                    self.values[gamma.0].data(),
                    dy.data(),
                );
                if self.requires_grad[x.0] {
                    Self::accumulate(grads, *x, xv.shape(), dx);
                }
                if self.requires_grad[gamma.0] {
                    Self::accumulate(grads, *gamma, self.values[gamma.0].shape(), dgamma);
                }
                if self.requires_grad[beta.0] {
                    Self::accumulate(grads, *beta, self.values[beta.0].shape(), dbeta);
                }
            }
            Op::Gap { x } => {
                if self.requires_grad[x.0] {
                    let xv = &self.values[x.0];
                    let (b, c, h, w) =
                        (xv.shape()[0], xv.shape()[1], xv.shape()[2], xv.shape()[3]);
                    let hw = h * w;
                    let scale = 1.0 / hw as f32;
                    let mut dx = vec![0.0f32; xv.numel()];
                    for bi in 0..b {
                        for ci in 0..c {
                            let g = dy.data()[bi * c + ci] * scale;
                            for v in &mut dx[(bi * c + ci) * hw..(bi * c + ci + 1) * hw] {
                                *v = g;
                            }
                        }
                    }
                    Self::accumulate(grads, *x, xv.shape(), dx);
                }
            }
            Op::ConcatCols { xs } => {
                let rows = self.values[id].shape()[0];
                let total = self.values[id].shape()[1];
                let mut off = 0usize;
                for x in xs {
                    let c = self.values[x.0].shape()[1];
                    if self.requires_grad[x.0] {
                        let mut dx = vec![0.0f32; rows * c];
                        for r in 0..rows {
                            dx[r * c..(r + 1) * c]
                                .copy_from_slice(&dy.data()[r * total + off..r * total + off + c]);
                        }
                        Self::accumulate(grads, *x, self.values[x.0].shape(), dx);
                    }
                    off += c;
                }
            }
            Op::GatherRows { x, idx } => {
                if self.requires_grad[x.0] {
                    let xv = &self.values[x.0];
                    let d = xv.shape()[1];
                    let mut dx = vec![0.0f32; xv.numel()];
                    for (r, &i) in idx.iter().enumerate() {
                        let src = &dy.data()[r * d..(r + 1) * d];
                        let out = &mut dx[i * d..(i + 1) * d];
                        for (o, s) in out.iter_mut().zip(src) {
                            *o += s;
                        }
                    }
                    Self::accumulate(grads, *x, xv.shape(), dx);
                }
            }
            Op::AggregateRows { x, map, .. } => {
                if self.requires_grad[x.0] {
                    let xv = &self.values[x.0];
                    let d = xv.shape()[1];
                    let mut dx = vec![0.0f32; xv.numel()];
                    for (r, &dst) in map.iter().enumerate() {
                        dx[r * d..(r + 1) * d].copy_from_slice(&dy.data()[dst * d..(dst + 1) * d]);
                    }
                    Self::accumulate(grads, *x, xv.shape(), dx);
                }
            }
            Op::Reshape { x } => {
                if self.requires_grad[x.0] {
                    Self::accumulate(grads, *x, self.values[x.0].shape(), dy.data().to_vec());
                }
            }
            Op::SliceCols { x, start, len } => {
                if self.requires_grad[x.0] {
                    let xv = &self.values[x.0];
                    let (n, d) = (xv.shape()[0], xv.shape()[1]);
                    let mut dx = vec![0.0f32; n * d];
                    for r in 0..n {
                        dx[r * d + start..r * d + start + len]
                            .copy_from_slice(&dy.data()[r * len..(r + 1) * len]);
                    }
                    Self::accumulate(grads, *x, xv.shape(), dx);
                }
            }
            Op::SumRows { x } => {
                if self.requires_grad[x.0] {
                    let xv = &self.values[x.0];
                    let (n, d) = (xv.shape()[0], xv.shape()[1]);
                    let mut dx = vec![0.0f32; n * d];
                    for r in 0..n {
                        let g = dy.data()[r];
                        for v in &mut dx[r * d..(r + 1) * d] {
                            *v = g;
                        }
                    }
                    Self::accumulate(grads, *x, xv.shape(), dx);
                }
            }
            Op::GroupSum { x, group } => {
                if self.requires_grad[x.0] {
                    let xv = &self.values[x.0];
                    let mut dx = vec![0.0f32; xv.numel()];
                    for (i, g) in dy.data().iter().enumerate() {
                        for v in &mut dx[i * group..(i + 1) * group] {
                            *v = *g;
                        }
                    }
                    Self::accumulate(grads, *x, xv.shape(), dx);
                }
            }
            Op::MeanAll { x } => {
                if self.requires_grad[x.0] {
                    let xv = &self.values[x.0];
                    let g = dy.data()[0] / xv.numel() as f32;
                    Self::accumulate(grads, *x, xv.shape(), vec![g; xv.numel()]);
                }
            }
            Op::BceWithLogits { logits, targets } => {
                if self.requires_grad[logits.0] {
                    let lv = self.values[logits.0].data();
                    let tv = self.values[targets.0].data();
                    let n = lv.len() as f32;
                    let g0 = dy.data()[0];
                    let g: Vec<f32> = lv
                        .iter()
                        .zip(tv)
                        .map(|(l, t)| g0 * (1.0 / (1.0 + (-l).exp()) - t) / n)
                        .collect();
                    Self::accumulate(grads, *logits, self.values[logits.0].shape(), g);
                }
            }
        }
        Ok(())
    }

    /// Gradient of a node after [`Tape::backward`]. Errors if backward has
    /// not been run yet.
    pub fn grad(&self, id: NodeId) -> Result<Option<&Tensor>> {
        match &self.grads {
            None => Err(Error::Autodiff(
                "gradient requested before backward() was run".into(),
            )),
            Some(g) => Ok(g[id.0].as_ref()),
        }
    }

    /// `(name, gradient)` for every registered trainable parameter, in
    /// registration order. Parameters that did not participate in the loss
    /// get zero gradients.
    pub fn param_grads(&self) -> Result<Vec<(String, Tensor)>> {
        let grads = self
            .grads
            .as_ref()
            .ok_or_else(|| Error::Autodiff("gradient requested before backward() was run".into()))?;
        Ok(self
            .param_order
            .iter()
            .map(|(name, id)| {
                let g = grads[id.0]
                    .clone()
                    .unwrap_or_else(|| Tensor::zeros(self.values[id.0].shape()));
                (name.clone(), g)
            })
            .collect())
    }

    /// Queued running-statistics updates from train-mode batch norm.
    pub fn buffer_updates(&self) -> &[(String, Tensor)] {
        &self.buffer_updates
    }

    // ---- f64 replay -------------------------------------------------------

    /// Recomputes the scalar value of `target` in f64, with selected nodes'
    /// leaf data replaced. Used by finite-difference gradient checking.
    pub fn eval_f64(&self, target: NodeId, overrides: &HashMap<usize, Vec<f64>>) -> Result<f64> {
        // Mark ancestors of target.
        let mut needed = vec![false; self.ops.len()];
        needed[target.0] = true;
        for id in (0..=target.0).rev() {
            if !needed[id] {
                continue;
            }
            for input in self.ops[id].inputs() {
                needed[input.0] = true;
            }
        }
        let mut vals: Vec<Option<Vec<f64>>> = vec![None; self.ops.len()];
        for id in 0..=target.0 {
            if !needed[id] {
                continue;
            }
            let v = self.replay_op(id, &vals, overrides)?;
            vals[id] = Some(v);
        }
        let out = vals[target.0].as_ref().unwrap();
        if out.len() != 1 {
            return Err(Error::Autodiff("eval_f64 target must be scalar".into()));
        }
        Ok(out[0])
    }

    fn replay_op(
        &self,
        id: usize,
        vals: &[Option<Vec<f64>>],
        overrides: &HashMap<usize, Vec<f64>>,
    ) -> Result<Vec<f64>> {
        let get = |n: &NodeId| -> &Vec<f64> { vals[n.0].as_ref().expect("topological order") };
        let op = &self.ops[id];
        Ok(match op {
            Op::Input | Op::Param { .. } | Op::Buffer { .. } => match overrides.get(&id) {
                Some(v) => v.clone(),
                None => self.values[id].data().iter().map(|&v| v as f64).collect(),
            },
            Op::Add { a, b } => get(a).iter().zip(get(b)).map(|(x, y)| x + y).collect(),
            Op::Sub { a, b } => get(a).iter().zip(get(b)).map(|(x, y)| x - y).collect(),
            Op::Mul { a, b } => get(a).iter().zip(get(b)).map(|(x, y)| x * y).collect(),
            Op::Affine { x, scale, shift } => {
                let (s, t) = (*scale as f64, *shift as f64);
                get(x).iter().map(|v| s * v + t).collect()
            }
            Op::Relu { x } => get(x).iter().map(|v| v.max(0.0)).collect(),
            Op::LeakyRelu { x, slope } => {
                let s = *slope as f64;
                get(x).iter().map(|&v| if v > 0.0 { v } else { s * v }).collect()
            }
            Op::Sigmoid { x } => get(x).iter().map(|v| 1.0 / (1.0 + (-v).exp())).collect(),
            Op::Linear { x, w, b } => {
                let xv = get(x);
                let wv = get(w);
                let bv = get(b);
                let (n, din) = (self.values[x.0].shape()[0], self.values[x.0].shape()[1]);
                let dout = self.values[w.0].shape()[1];
                let mut y = vec![0.0f64; n * dout];
                gemm_nn(n, din, dout, xv, wv, &mut y);
                for r in 0..n {
                    for (o, bo) in y[r * dout..(r + 1) * dout].iter_mut().zip(bv) {
                        *o += bo;
                    }
                }
                y
            }
            Op::Conv2d { x, w, b, dims } => {
                let (y, _) = kernels::conv2d_fwd(dims, get(x), get(w), get(b));
                y
            }
            Op::BatchNorm { x, gamma, beta, rm, rv, eps, .. } => {
                let xv = get(x);
                let s = self.values[x.0].shape();
                let (bsz, c, hw) = (s[0], s[1], s[2] * s[3]);
                let (mean, var) = match self.mode {
                    Mode::Train => kernels::channel_stats(xv, bsz, c, hw),
                    Mode::Eval => (get(rm).clone(), get(rv).clone()),
                };
                let (y, _) = kernels::batch_norm_apply(
                    xv,
                    bsz,
                    c,
                    hw,
                    &mean,
                    &var,
                    get(gamma),
                    get(beta),
                    *eps as f64,
                );
                y
            }
            Op::LayerNorm { x, gamma, beta, eps } => {
                let s = self.values[x.0].shape();
                let (y, _, _) =
                    kernels::layer_norm_fwd(get(x), s[0], s[1], get(gamma), get(beta), *eps as f64);
                y
            }
            Op::Gap { x } => {
                let s = self.values[x.0].shape();
                let (b, c, hw) = (s[0], s[1], s[2] * s[3]);
                let xv = get(x);
                let mut y = vec![0.0f64; b * c];
                for bi in 0..b {
                    for ci in 0..c {
                        let mut acc = 0.0f64;
                        for v in &xv[(bi * c + ci) * hw..(bi * c + ci + 1) * hw] {
                            acc += v;
                        }
                        y[bi * c + ci] = acc / hw as f64;
                    }
                }
                y
            }
            Op::ConcatCols { xs } => {
                let rows = self.values[id].shape()[0];
                let total = self.values[id].shape()[1];
                let mut y = vec![0.0f64; rows * total];
                for r in 0..rows {
                    let mut off = 0usize;
                    for x in xs {
                        let c = self.values[x.0].shape()[1];
                        let src = get(x);
                        y[r * total + off..r * total + off + c]
                            .copy_from_slice(&src[r * c..(r + 1) * c]);
                        off += c;
                    }
                }
                y
            }
            Op::GatherRows { x, idx } => {
                let d = self.values[x.0].shape()[1];
                let src = get(x);
                let mut y = vec![0.0f64; idx.len() * d];
                for (r, &i) in idx.iter().enumerate() {
                    y[r * d..(r + 1) * d].copy_from_slice(&src[i * d..(i + 1) * d]);
                }
                y
            }
            Op::AggregateRows { x, map, out_rows } => {
                let d = self.values[x.0].shape()[1];
                let src = get(x);
                let mut y = vec![0.0f64; out_rows * d];
                for (r, &dst) in map.iter().enumerate() {
                    for (o, s) in y[dst * d..(dst + 1) * d].iter_mut().zip(&src[r * d..(r + 1) * d])
                    {
                        *o += s;
                    }
                }
                y
            }
            Op::Reshape { x } => get(x).clone(),
            Op::SliceCols { x, start, len } => {
                let (n, d) = (self.values[x.0].shape()[0], self.values[x.0].shape()[1]);
                let src = get(x);
                let mut y = vec![0.0f64; n * len];
                for r in 0..n {
                    y[r * len..(r + 1) * len]
                        .copy_from_slice(&src[r * d + start..r * d + start + len]);
                }
                y
            }
            Op::SumRows { x } => {
                let (n, d) = (self.values[x.0].shape()[0], self.values[x.0].shape()[1]);
                let src = get(x);
                (0..n)
                    .map(|r| src[r * d..(r + 1) * d].iter().sum::<f64>())
                    .collect()
            }
            Op::GroupSum { x, group } => {
                let src = get(x);
                let out = src.len() / group;
                (0..out)
                    .map(|i| src[i * group..(i + 1) * group].iter().sum::<f64>())
                    .collect()
            }
            Op::MeanAll { x } => {
                let src = get(x);
                vec![src.iter().sum::<f64>() / src.len() as f64]
            }
            Op::BceWithLogits { logits, targets } => {
                let lv = get(logits);
                let tv = get(targets);
                let s: f64 = lv
                    .iter()
                    .zip(tv)
                    .map(|(l, t)| l.max(0.0) - l * t + (-l.abs()).exp().ln_1p())
                    .sum();
                vec![s / lv.len() as f64]
            }
        })
    }

    /// Node ids of registered parameters, with names, in registration order.
    pub fn param_nodes(&self) -> &[(String, NodeId)] {
        &self.param_order
    }

    /// Human-readable label for diagnostics.
    pub fn node_label(&self, id: NodeId) -> String {
        match &self.ops[id.0] {
            Op::Param { name } => format!("param({name})#{}", id.0),
            Op::Buffer { name } => format!("buffer({name})#{}", id.0),
            op => format!("{}#{}", op.label(), id.0),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_matches_definition() {
        let mut tape = Tape::new(Mode::Train);
        let x = tape.input(Tensor::vector(&[-1.0, 0.0, 2.0]));
        let y = tape.relu(x).unwrap();
        assert_eq!(tape.value(y).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn linear_identity_passthrough() {
        let mut tape = Tape::new(Mode::Train);
        let x = tape.input(Tensor::matrix(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
        let eye = Tensor::matrix(3, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
        let w = tape.input(eye);
        let b = tape.input(Tensor::vector(&[0.0, 0.0, 0.0]));
        let y = tape.linear(x, w, b).unwrap();
        assert_eq!(tape.value(y).data(), tape.value(x).data());
    }

    #[test]
    fn grad_before_backward_is_an_error() {
        let mut tape = Tape::new(Mode::Train);
        let x = tape.input(Tensor::vector(&[1.0]));
        assert!(tape.grad(x).is_err());
    }

    #[test]
    fn zero_seed_gives_zero_gradients() {
        let mut tape = Tape::new(Mode::Train);
        let x = tape.input(Tensor::matrix(2, 2, &[1.0, -2.0, 3.0, 4.0]).unwrap());
        let y = tape.mul(x, x).unwrap();
        let s = tape.mean_all(y).unwrap();
        tape.backward_seeded(s, Tensor::scalar(0.0)).unwrap();
        let g = tape.grad(x).unwrap().unwrap();
        assert!(g.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sum_gradient_broadcasts_unchanged() {
        let mut tape = Tape::new(Mode::Train);
        let a = tape.input(Tensor::vector(&[1.0, 2.0]));
        let b = tape.input(Tensor::vector(&[5.0, -1.0]));
        let y = tape.add(a, b).unwrap();
        let s = tape.mean_all(y).unwrap();
        let s2 = tape.affine(s, 2.0, 0.0).unwrap();
        tape.backward(s2).unwrap();
        // d(2 * mean(a+b))/da_i = 2/2 = 1 for each element of both addends.
        assert_eq!(tape.grad(a).unwrap().unwrap().data(), &[1.0, 1.0]);
        assert_eq!(tape.grad(b).unwrap().unwrap().data(), &[1.0, 1.0]);
    }

    #[test]
    fn shape_mismatch_is_rejected_with_node_name() {
        let mut tape = Tape::new(Mode::Train);
        let a = tape.input(Tensor::vector(&[1.0, 2.0]));
        let b = tape.input(Tensor::vector(&[1.0, 2.0, 3.0]));
        let err = tape.add(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("add"), "{msg}");
    }

    #[test]
    fn eval_mode_batch_norm_is_a_fixed_affine_map() {
        use crate::autodiff::{ParamKind, ParamSet};
        let mut params = ParamSet::new();
        params.insert("g", Tensor::vector(&[2.0, 0.5]), ParamKind::Trainable);
        params.insert("be", Tensor::vector(&[1.0, -1.0]), ParamKind::Trainable);
        params.insert("rm", Tensor::vector(&[0.5, -0.5]), ParamKind::Buffer);
        params.insert("rv", Tensor::vector(&[4.0, 1.0]), ParamKind::Buffer);
        let x = Tensor::from_vec(&[1, 2, 1, 2], vec![1.0, 3.0, -2.0, 0.0]).unwrap();

        let mut tape = Tape::new(Mode::Eval);
        let xn = tape.input(x.clone());
        let g = tape.param(&params, "g").unwrap();
        let be = tape.param(&params, "be").unwrap();
        let rm = tape.buffer(&params, "rm").unwrap();
        let rv = tape.buffer(&params, "rv").unwrap();
        let y = tape.batch_norm(xn, g, be, rm, rv, 0.1, 1e-5).unwrap();

        // Expected: gamma * (x - rm) / sqrt(rv + eps) + beta, per channel.
        let expect = |v: f32, c: usize| {
            let (g, b, m, var) = ([2.0, 0.5][c], [1.0, -1.0][c], [0.5, -0.5][c], [4.0, 1.0][c]);
            g * (v - m) / (var + 1e-5f32).sqrt() + b
        };
        let got = tape.value(y).data();
        assert!((got[0] - expect(1.0, 0)).abs() < 1e-6);
        assert!((got[1] - expect(3.0, 0)).abs() < 1e-6);
        assert!((got[2] - expect(-2.0, 1)).abs() < 1e-6);
        assert!((got[3] - expect(0.0, 1)).abs() < 1e-6);
        // No buffer updates are queued in eval mode.
        assert!(tape.buffer_updates().is_empty());
    }

    #[test]
    fn gather_then_aggregate_roundtrip() {
        let mut tape = Tape::new(Mode::Train);
        let x = tape.input(Tensor::matrix(3, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
        let g = tape.gather_rows(x, vec![2, 0, 1, 2]).unwrap();
        assert_eq!(tape.value(g).data(), &[5.0, 6.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let a = tape.aggregate_rows(g, vec![0, 0, 1, 1], 2).unwrap();
        assert_eq!(tape.value(a).data(), &[6.0, 8.0, 8.0, 10.0]);
    }
}
