//! Finite-difference verification of tape gradients.

use super::tape::{NodeId, Tape};
use crate::rng;
use crate::{Error, Result};
use rand::Rng;
use std::collections::HashMap;

#[derive(Clone, Copy, Debug)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub h: f64,
    /// Max probed elements per parameter tensor.
    pub samples_per_param: usize,
    /// Seed for choosing probe positions.
    pub seed: u64,
    /// Relative errors are ignored when both sides are below this floor.
    pub denom_floor: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig { h: 1e-3, samples_per_param: 8, seed: 0, denom_floor: 1e-6 }
    }
}

/// Compares the analytic gradient of `loss` against central finite
/// differences over a random subsample of parameter elements. The loss is
/// re-evaluated through the tape's f64 replay, so the differences are free
/// of f32 rounding noise. Returns the maximum relative error.
///
/// The tape must already have `backward(loss)` run.
pub fn grad_check(tape: &Tape, loss: NodeId, cfg: &GradCheckConfig) -> Result<f64> {
    if cfg.h <= 0.0 {
        return Err(Error::Autodiff("grad_check requires h > 0".into()));
    }
    let mut rng = rng::stream(cfg.seed, 0xC0FFEE);
    let mut max_rel = 0.0f64;

    for (_name, node) in tape.param_nodes().to_vec() {
        let value = tape.value(node);
        let base: Vec<f64> = value.data().iter().map(|&v| v as f64).collect();
        let analytic = match tape.grad(node)? {
            Some(g) => g.clone(),
            None => continue,
        };
        let n = base.len();
        let probes: Vec<usize> = if n <= cfg.samples_per_param {
            (0..n).collect()
        } else {
            (0..cfg.samples_per_param).map(|_| rng.gen_range(0..n)).collect()
        };
        for idx in probes {
            let mut plus = base.clone();
            plus[idx] += cfg.h;
            let mut minus = base.clone();
            minus[idx] -= cfg.h;
            let mut overrides = HashMap::new();
            overrides.insert(node.0, plus);
            let lp = tape.eval_f64(loss, &overrides)?;
            overrides.insert(node.0, minus);
            let lm = tape.eval_f64(loss, &overrides)?;
            let fd = (lp - lm) / (2.0 * cfg.h);
            let an = analytic.data()[idx] as f64;
            let denom = fd.abs().max(an.abs());
            if denom < cfg.denom_floor {
                continue;
            }
            let rel = (fd - an).abs() / denom;
            if rel > max_rel {
                max_rel = rel;
            }
        }
    }
    Ok(max_rel)
}
