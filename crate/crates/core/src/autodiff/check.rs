//! Central-difference gradient auditing and the plain SGD update.

use super::graph::{Bindings, Gradients, Graph, GraphError};
use super::tensor::Tensor;
use crate::geometry::{project_to_ball, Curvature};

/// Analytic vs central-difference gradients for every leaf of a scalar graph.
#[derive(Debug)]
pub struct GradientReport {
    pub analytic: Gradients,
    pub numeric: Gradients,
    /// max over coordinates of |analytic - numeric| / max(1e-8, |analytic| + |numeric|)
    pub max_rel_error: f64,
}

/// Compare the tape gradients of `graph` against central differences with the
/// given step at `point`.
pub fn finite_diff_check(
    graph: &mut Graph,
    point: &Bindings,
    step: f64,
) -> Result<GradientReport, GraphError> {
    graph.evaluate(point)?;
    let analytic = graph.backward()?;

    let mut numeric = Gradients::new();
    let mut max_rel_error: f64 = 0.0;
    for (name, tensor) in point {
        let (rows, cols) = tensor.shape();
        let mut num = Tensor::zeros(rows, cols);
        for k in 0..tensor.len() {
            let mut plus = point.clone();
            plus.get_mut(name).unwrap().data_mut()[k] += step;
            let f_plus = graph.evaluate(&plus)?.item();

            let mut minus = point.clone();
            minus.get_mut(name).unwrap().data_mut()[k] -= step;
            let f_minus = graph.evaluate(&minus)?.item();

            num.data_mut()[k] = (f_plus - f_minus) / (2.0 * step);
        }
        let ana = &analytic[name];
        for (a, n) in ana.data().iter().zip(num.data()) {
            let rel = (a - n).abs() / (a.abs() + n.abs()).max(1e-8);
            max_rel_error = max_rel_error.max(rel);
        }
        numeric.insert(name.clone(), num);
    }

    // Leave the cache consistent with the unperturbed point.
    graph.evaluate(point)?;
    Ok(GradientReport {
        analytic,
        numeric,
        max_rel_error,
    })
}

/// One named parameter for [`sgd_step`]. When `ball` is set, every row of the
/// tensor is treated as a Poincare ball point and re-projected after the
/// update.
pub struct SgdParam<'a> {
    pub name: &'a str,
    pub value: &'a mut Tensor,
    pub ball: Option<Curvature>,
}

/// params <- params - lr * grads, with ball-constrained rows projected back
/// inside the containment margin. Parameters without a gradient entry are
/// left untouched.
pub fn sgd_step(
    params: &mut [SgdParam<'_>],
    grads: &Gradients,
    learning_rate: f64,
) -> Result<(), GraphError> {
    for p in params.iter_mut() {
        let Some(g) = grads.get(p.name) else {
            continue;
        };
        if g.shape() != p.value.shape() {
            return Err(GraphError::GradientShape {
                name: p.name.to_string(),
                expected: p.value.shape(),
                got: g.shape(),
            });
        }
        for (v, gv) in p.value.data_mut().iter_mut().zip(g.data()) {
            *v -= learning_rate * gv;
        }
        if let Some(c) = p.ball {
            let cols = p.value.cols();
            for i in 0..p.value.rows() {
                let projected = project_to_ball(p.value.row_slice(i), c)
                    .expect("finite parameter after sgd update");
                p.value.data_mut()[i * cols..(i + 1) * cols].copy_from_slice(projected.coords());
            }
        }
    }
    Ok(())
}
