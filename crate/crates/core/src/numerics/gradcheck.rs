//! Central finite-difference gradient checking.

use super::graph::{Graph, NodeId};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Outcome of comparing analytic and numeric gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// Elementwise maximum of [`relative_error`].
    pub max_relative_error: f64,
    /// `(parameter, element)` where the maximum was attained.
    pub worst: (usize, usize),
    pub elements_checked: usize,
    /// Maximum over parameter tensors of `‖a - n‖ / max(1e-8, ‖a‖ + ‖n‖)`.
    /// Unlike the elementwise form it is not dominated by individual
    /// near-zero entries whose numeric estimate is pure roundoff.
    pub max_tensor_error: f64,
    pub worst_tensor: usize,
}

/// Relative error used throughout: `|a - n| / max(1e-8, |a| + |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

fn evaluate<F>(f: &F, point: &[Tensor]) -> Result<(f64, Graph, Vec<NodeId>, NodeId)>
where
    F: Fn(&mut Graph, &[NodeId]) -> Result<NodeId>,
{
    let mut graph = Graph::new();
    let inputs: Vec<NodeId> = point.iter().map(|t| graph.param(t.clone())).collect();
    let root = f(&mut graph, &inputs)?;
    let value = graph.value(root).item()?;
    Ok((value, graph, inputs, root))
}

/// Analytic gradients of `f` at `point`, one buffer per input tensor.
pub fn analytic_gradients<F>(f: &F, point: &[Tensor]) -> Result<Vec<Vec<f64>>>
where
    F: Fn(&mut Graph, &[NodeId]) -> Result<NodeId>,
{
    let (_, graph, inputs, root) = evaluate(f, point)?;
    let grads = graph.backward(root)?;
    Ok(inputs.iter().map(|&id| grads.get(id).into_vec()).collect())
}

/// Checks the reverse-mode gradients of the scalar graph built by `f`.
///
/// `f` receives one leaf per tensor in `point` and returns the scalar root.
pub fn grad_check<F>(f: F, point: &[Tensor], epsilon: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[NodeId]) -> Result<NodeId>,
{
    let analytic = analytic_gradients(&f, point)?;
    check_against(&analytic, f, point, epsilon)
}

/// Compares supplied gradients against central differences of `f`.
pub fn check_against<F>(
    analytic: &[Vec<f64>],
    f: F,
    point: &[Tensor],
    epsilon: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[NodeId]) -> Result<NodeId>,
{
    if !(1e-7..=1e-4).contains(&epsilon) {
        return Err(Error::InvalidArgument(format!(
            "grad_check: epsilon {epsilon} outside [1e-7, 1e-4]"
        )));
    }
    if analytic.len() != point.len() {
        return Err(Error::InvalidArgument(format!(
            "grad_check: {} gradient buffers for {} parameters",
            analytic.len(),
            point.len()
        )));
    }

    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst: (0, 0),
        elements_checked: 0,
        max_tensor_error: 0.0,
        worst_tensor: 0,
    };
    let mut probe: Vec<Tensor> = point.to_vec();
    for (p, tensor) in point.iter().enumerate() {
        if analytic[p].len() != tensor.len() {
            return Err(Error::ShapeMismatch {
                op: "grad_check",
                lhs: vec![analytic[p].len()],
                rhs: tensor.shape().to_vec(),
            });
        }
        let base = tensor.to_vec();
        let (mut diff_sq, mut a_sq, mut n_sq) = (0.0, 0.0, 0.0);
        for e in 0..base.len() {
            let mut shifted = base.clone();
            shifted[e] = base[e] + epsilon;
            probe[p] = Tensor::from_parts(tensor.shape().to_vec(), shifted.clone());
            let plus = evaluate(&f, &probe)?.0;
            shifted[e] = base[e] - epsilon;
            probe[p] = Tensor::from_parts(tensor.shape().to_vec(), shifted);
            let minus = evaluate(&f, &probe)?.0;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::NonFinite(format!(
                    "grad_check: objective non-finite when perturbing parameter {p} element {e}"
                )));
            }
            let numeric = (plus - minus) / (2.0 * epsilon);
            let err = relative_error(analytic[p][e], numeric);
            diff_sq += (analytic[p][e] - numeric).powi(2);
            a_sq += analytic[p][e].powi(2);
            n_sq += numeric.powi(2);
            if !err.is_finite() {
                return Err(Error::NonFinite(format!(
                    "grad_check: gradient of parameter {p} element {e} is non-finite"
                )));
            }
            if err > report.max_relative_error {
                report.max_relative_error = err;
                report.worst = (p, e);
            }
            report.elements_checked += 1;
        }
        let tensor_err = diff_sq.sqrt() / (a_sq.sqrt() + n_sq.sqrt()).max(1e-8);
        if tensor_err > report.max_tensor_error {
            report.max_tensor_error = tensor_err;
            report.worst_tensor = p;
        }
        probe[p] = tensor.clone();
    }
    Ok(report)
}
