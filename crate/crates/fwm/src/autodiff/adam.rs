//! Adam with bias correction and default moment coefficients.

use super::params::{ParamKind, ParamSet};
use crate::tensor::Tensor;
use crate::{Error, Result};

const BETA1: f32 = 0.9;
const BETA2: f32 = 0.999;
const EPS: f32 = 1e-8;

/// One Adam step over the trainable entries of `params`.
///
/// `grads` is `(name, gradient)` as produced by
/// [`crate::autodiff::Tape::param_grads`]. If any gradient is non-finite
/// the whole step is rejected: no parameter moves and the step counter
/// does not advance.
pub fn adam_step(params: &mut ParamSet, grads: &[(String, Tensor)], lr: f32) -> Result<()> {
    // Validate everything before mutating anything.
    for (name, g) in grads {
        let entry = params
            .entries
            .iter()
            .find(|e| &e.name == name)
            .ok_or_else(|| Error::Autodiff(format!("gradient for unknown parameter `{name}`")))?;
        if entry.kind != ParamKind::Trainable {
            return Err(Error::Autodiff(format!("gradient supplied for buffer `{name}`")));
        }
        if entry.value.shape() != g.shape() {
            return Err(Error::Autodiff(format!("gradient shape mismatch for `{name}`")));
        }
        if !g.is_finite() {
            return Err(Error::NonFiniteGrad { name: name.clone() });
        }
    }

    params.step += 1;
    let t = params.step as i32;
    let bc1 = 1.0 - BETA1.powi(t);
    let bc2 = 1.0 - BETA2.powi(t);

    for (name, g) in grads {
        let entry = params.entries.iter_mut().find(|e| &e.name == name).unwrap();
        let gv = g.data();
        let m = entry.m.data_mut();
        let v = entry.v.data_mut();
        let p = entry.value.data_mut();
        for i in 0..gv.len() {
            m[i] = BETA1 * m[i] + (1.0 - BETA1) * gv[i];
            v[i] = BETA2 * v[i] + (1.0 - BETA2) * gv[i] * gv[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + EPS);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_param(value: &[f32]) -> ParamSet {
        let mut p = ParamSet::new();
        p.insert("w", Tensor::vector(value), ParamKind::Trainable);
        p
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut p = one_param(&[1.0, -2.0, 3.0]);
        let grads = vec![("w".to_string(), Tensor::vector(&[0.0, 0.0, 0.0]))];
        adam_step(&mut p, &grads, 0.1).unwrap();
        assert_eq!(p.get("w").unwrap().data(), &[1.0, -2.0, 3.0]);
        assert_eq!(p.step(), 1);
    }

    #[test]
    fn first_step_moves_against_gradient_sign_by_about_lr() {
        let lr = 0.01;
        let mut p = one_param(&[0.5, 0.5]);
        let grads = vec![("w".to_string(), Tensor::vector(&[2.0, -0.3]))];
        adam_step(&mut p, &grads, lr).unwrap();
        let w = p.get("w").unwrap().data();
        // Bias-corrected first step is lr * g / (|g| + eps') ~= lr * sign(g).
        assert!((w[0] - (0.5 - lr)).abs() < 1e-4, "{w:?}");
        assert!((w[1] - (0.5 + lr)).abs() < 1e-4, "{w:?}");
    }

    #[test]
    fn non_finite_gradient_rejects_step() {
        let mut p = one_param(&[1.0]);
        let grads = vec![("w".to_string(), Tensor::vector(&[f32::NAN]))];
        let err = adam_step(&mut p, &grads, 0.1).unwrap_err();
        assert!(matches!(err, Error::NonFiniteGrad { .. }));
        assert_eq!(p.get("w").unwrap().data(), &[1.0]);
        assert_eq!(p.step(), 0, "counter must not advance");
    }

    #[test]
    fn repeated_runs_are_bit_identical() {
        let run = || {
            let mut p = one_param(&[0.3, -0.7]);
            for i in 0..100 {
                let g = Tensor::vector(&[(i as f32 * 0.01).sin(), (i as f32 * 0.02).cos()]);
                adam_step(&mut p, &[("w".to_string(), g)], 1e-3).unwrap();
            }
            p.get("w").unwrap().data().to_vec()
        };
        assert_eq!(run(), run());
    }
}
