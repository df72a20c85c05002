//! Central-difference gradient oracle.
//!
//! Independent of the tape: evaluates a black-box scalar function under
//! coordinate perturbations. Gradient tests compare tape output against this.

use std::collections::BTreeMap;

use crate::error::Result;
use crate::numerics::tape::ParamId;
use crate::numerics::tensor::Tensor;

/// Default perturbation step.
pub const DEFAULT_EPS: f64 = 1e-5;

/// Central-difference gradients of `f` with respect to every coordinate of
/// every listed parameter. `f` receives the full parameter map and must be
/// deterministic.
pub fn finite_difference_grad<F>(
    f: F,
    params: &BTreeMap<ParamId, Tensor>,
    eps: f64,
) -> Result<BTreeMap<ParamId, Tensor>>
where
    F: Fn(&BTreeMap<ParamId, Tensor>) -> Result<f64>,
{
    let mut work = params.clone();
    let mut out = BTreeMap::new();
    let ids: Vec<ParamId> = params.keys().cloned().collect();
    for id in ids {
        let n = params[&id].len();
        let mut grad = vec![0.0; n];
        for i in 0..n {
            let base = params[&id].data()[i];
            work.get_mut(&id).unwrap().data_mut()[i] = base + eps;
            let plus = f(&work)?;
            work.get_mut(&id).unwrap().data_mut()[i] = base - eps;
            let minus = f(&work)?;
            work.get_mut(&id).unwrap().data_mut()[i] = base;
            grad[i] = (plus - minus) / (2.0 * eps);
        }
        out.insert(id, Tensor::new(params[&id].shape().to_vec(), grad)?);
    }
    Ok(out)
}

/// max_i |a_i - b_i| / max(|a_i|, |b_i|, floor) over two equal-length slices.
/// The floor keeps near-zero gradients from inflating the ratio with
/// finite-difference noise.
pub fn max_relative_error(a: &[f64], b: &[f64]) -> f64 {
    const FLOOR: f64 = 1e-5;
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(FLOOR))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_at_three() {
        let mut params = BTreeMap::new();
        params.insert(ParamId(0), Tensor::scalar(3.0));
        let grads = finite_difference_grad(
            |p| Ok(p[&ParamId(0)].item()?.powi(2)),
            &params,
            DEFAULT_EPS,
        )
        .unwrap();
        assert!((grads[&ParamId(0)].item().unwrap() - 6.0).abs() < 1e-6);
    }

    #[test]
    fn constant_function_has_zero_gradient() {
        let mut params = BTreeMap::new();
        params.insert(ParamId(0), Tensor::vector(&[1.0, -2.0, 0.5]));
        let grads = finite_difference_grad(|_| Ok(42.0), &params, DEFAULT_EPS).unwrap();
        assert_eq!(grads[&ParamId(0)].data(), &[0.0, 0.0, 0.0]);
    }
}
