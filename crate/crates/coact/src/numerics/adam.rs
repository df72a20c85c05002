//! Adam optimizer with bias correction.
//!
//! Updates are applied lazily per entry: coordinates whose incoming gradient
//! is exactly zero are skipped, moments included. Embedding tables receive
//! gradients for a handful of rows per batch, so a zero-gradient coordinate
//! means "not touched this step" rather than "observed a zero gradient".

use crate::error::{Error, Result};
use crate::numerics::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Step counter; increments by one per update call.
    pub t: u64,
    m: Tensor,
    v: Tensor,
}

impl AdamState {
    /// State for a parameter of the given shape with standard defaults
    /// (beta1=0.9, beta2=0.999, epsilon=1e-8).
    pub fn new(shape: &[usize], lr: f64) -> Self {
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            t: 0,
            m: Tensor::zeros(shape.to_vec()),
            v: Tensor::zeros(shape.to_vec()),
        }
    }

    pub fn first_moment(&self) -> &Tensor {
        &self.m
    }

    pub fn second_moment(&self) -> &Tensor {
        &self.v
    }

    /// One Adam step over the whole parameter tensor.
    pub fn update(&mut self, param: &mut Tensor, grad: &Tensor) -> Result<()> {
        if param.shape() != grad.shape() || param.shape() != self.m.shape() {
            return Err(Error::dimension(
                "adam_update",
                format!("{:?}", self.m.shape()),
                format!("param {:?}, grad {:?}", param.shape(), grad.shape()),
            ));
        }
        self.t += 1;
        let n = param.len();
        self.apply_range(param, grad.data(), 0, n)
    }

    /// One Adam step touching only the listed rows of a 2-D parameter table.
    /// `rows` pairs a row index with that row's gradient. Equivalent to a full
    /// update whose gradient is zero outside the listed rows.
    pub fn update_rows(&mut self, param: &mut Tensor, rows: &[(usize, &[f64])]) -> Result<()> {
        if param.shape() != self.m.shape() {
            return Err(Error::dimension(
                "adam_update_rows",
                format!("{:?}", self.m.shape()),
                format!("{:?}", param.shape()),
            ));
        }
        let cols = match param.shape() {
            [_, c] => *c,
            other => {
                return Err(Error::Usage(format!(
                    "update_rows requires a 2-D table, got shape {:?}",
                    other
                )))
            }
        };
        self.t += 1;
        for &(row, grad) in rows {
            if grad.len() != cols {
                return Err(Error::dimension(
                    "adam_update_rows",
                    format!("row gradient of width {}", cols),
                    format!("{}", grad.len()),
                ));
            }
            self.apply_range(param, grad, row * cols, cols)?;
        }
        Ok(())
    }

    fn apply_range(
        &mut self,
        param: &mut Tensor,
        grad: &[f64],
        offset: usize,
        len: usize,
    ) -> Result<()> {
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let m = self.m.data_mut();
        let v = self.v.data_mut();
        let p = param.data_mut();
        for i in 0..len {
            let g = grad[i];
            if !g.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite gradient entry {} at flat index {}",
                    g,
                    offset + i
                )));
            }
            if g == 0.0 {
                continue;
            }
            let k = offset + i;
            m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * g;
            v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * g * g;
            let m_hat = m[k] / bc1;
            let v_hat = v[k] / bc2;
            p[k] -= self.lr * m_hat / (v_hat.sqrt() + self.epsilon);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_about_lr() {
        let mut p = Tensor::vector(&[0.5, -0.5, 2.0]);
        let g = Tensor::vector(&[1.0, 1.0, 1.0]);
        let mut state = AdamState::new(p.shape(), 0.001);
        state.update(&mut p, &g).unwrap();
        for (after, before) in p.data().iter().zip([0.5, -0.5, 2.0]) {
            let delta = after - before;
            assert!((delta + 0.001).abs() < 1e-6, "delta = {delta}");
        }
        assert_eq!(state.t, 1);
    }

    #[test]
    fn zero_gradient_is_identity_for_all_states() {
        let mut p = Tensor::vector(&[1.0, 2.0]);
        let mut state = AdamState::new(p.shape(), 0.1);
        // Build up nonzero moments first.
        state.update(&mut p, &Tensor::vector(&[0.3, -0.7])).unwrap();
        let snapshot = p.clone();
        state.update(&mut p, &Tensor::vector(&[0.0, 0.0])).unwrap();
        assert_eq!(p, snapshot);
    }

    #[test]
    fn two_constant_steps_match_scripted_recurrence() {
        // Independent oracle: the Adam recurrence written out step by step.
        let (lr, b1, b2, eps) = (0.001, 0.9, 0.999, 1e-8);
        let g = 1.0_f64;
        let mut expect = 0.25_f64;
        let (mut m, mut v) = (0.0_f64, 0.0_f64);
        for t in 1..=2 {
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let m_hat = m / (1.0 - b1.powi(t));
            let v_hat = v / (1.0 - b2.powi(t));
            expect -= lr * m_hat / (v_hat.sqrt() + eps);
        }

        let mut p = Tensor::scalar(0.25);
        let mut state = AdamState::new(p.shape(), lr);
        let grad = Tensor::scalar(g);
        state.update(&mut p, &grad).unwrap();
        state.update(&mut p, &grad).unwrap();

        let total = p.item().unwrap() - 0.25;
        assert!((p.item().unwrap() - expect).abs() < 1e-15);
        assert!((total + 0.002).abs() < 1e-6, "total delta {total}");
    }

    #[test]
    fn non_finite_gradient_is_a_numeric_error() {
        let mut p = Tensor::vector(&[1.0]);
        let mut state = AdamState::new(p.shape(), 0.001);
        let err = state.update(&mut p, &Tensor::vector(&[f64::NAN])).unwrap_err();
        assert!(matches!(err, Error::Numeric(_)));
    }

    #[test]
    fn row_update_matches_full_update_with_sparse_gradient() {
        let init = Tensor::matrix(3, 2, vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap();
        let row_grad = [0.7, -0.3];

        let mut dense_p = init.clone();
        let mut dense_state = AdamState::new(init.shape(), 0.01);
        let mut full = vec![0.0; 6];
        full[2] = row_grad[0];
        full[3] = row_grad[1];
        dense_state
            .update(&mut dense_p, &Tensor::matrix(3, 2, full).unwrap())
            .unwrap();

        let mut sparse_p = init.clone();
        let mut sparse_state = AdamState::new(init.shape(), 0.01);
        sparse_state
            .update_rows(&mut sparse_p, &[(1, &row_grad)])
            .unwrap();

        assert_eq!(dense_p, sparse_p);
        assert_eq!(dense_state.t, sparse_state.t);
    }
}
