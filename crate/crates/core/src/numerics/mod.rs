//! Differentiable-computation substrate: tensors, a gradient tape, Adam,
//! a finite-difference gradient checker and the checkpoint container.

mod adam;
mod checkpoint;
mod gradcheck;
mod graph;
pub(crate) mod kernels;
mod params;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{CheckpointPayload, RngState};
pub use gradcheck::{analytic_gradients, check_against, grad_check, relative_error, GradCheckReport};
pub use graph::{Gradients, Graph, NodeId};
pub use params::{BoundParams, ParamId, ParamStore};
pub use tensor::Tensor;

use crate::error::{Error, Result};

/// Softmax of a plain vector, computed with max subtraction.
pub fn softmax(x: &[f64]) -> Result<Vec<f64>> {
    if x.is_empty() {
        return Err(Error::Empty("softmax"));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("softmax input".into()));
    }
    Ok(kernels::softmax(x))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_examples() {
        let p = softmax(&[1.0, 1.0, 1.0]).unwrap();
        for v in p {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        assert_eq!(softmax(&[42.0]).unwrap(), vec![1.0]);
        assert!(matches!(softmax(&[]), Err(Error::Empty(_))));
        // Large inputs would overflow without max subtraction.
        let p = softmax(&[1000.0, 1000.0]).unwrap();
        assert_eq!(p, vec![0.5, 0.5]);
    }
}
