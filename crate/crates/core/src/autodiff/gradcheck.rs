//! Central finite-difference verification of analytic gradients.

use super::{Graph, Tensor};
use crate::error::{Error, Result};

/// Step used for central differences.
pub const FD_STEP: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(tensor index, element index)` of the worst element.
    pub worst: Option<(usize, usize)>,
    pub checked: usize,
    pub tolerance: f64,
    pub passed: bool,
}

impl GradCheckReport {
    fn merge(self, other: GradCheckReport, offset: usize) -> GradCheckReport {
        let (max_rel_error, worst) = if other.max_rel_error > self.max_rel_error {
            (
                other.max_rel_error,
                other.worst.map(|(t, e)| (t + offset, e)),
            )
        } else {
            (self.max_rel_error, self.worst)
        };
        GradCheckReport {
            max_rel_error,
            worst,
            checked: self.checked + other.checked,
            tolerance: self.tolerance,
            passed: self.passed && other.passed,
        }
    }
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Compares `analytic` against central differences of `loss` with respect to
/// every element of `params`. `params` is restored before returning.
pub fn finite_diff_check<F>(
    params: &mut [Tensor],
    analytic: &[Tensor],
    mut loss: F,
    tolerance: f64,
) -> Result<GradCheckReport>
where
    F: FnMut(&[Tensor]) -> Result<f64>,
{
    if params.len() != analytic.len()
        || params.iter().zip(analytic).any(|(p, a)| p.shape() != a.shape())
    {
        return Err(Error::Config("gradient check: analytic gradient shapes disagree".into()));
    }
    let mut max_rel_error = 0.0;
    let mut worst = None;
    let mut checked = 0;
    for t in 0..params.len() {
        for e in 0..params[t].len() {
            let original = params[t].data()[e];
            params[t].data_mut()[e] = original + FD_STEP;
            let plus = loss(params);
            params[t].data_mut()[e] = original - FD_STEP;
            let minus = loss(params);
            params[t].data_mut()[e] = original;
            let (plus, minus) = (plus?, minus?);
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::NonFinite(format!(
                    "loss while perturbing tensor {t} element {e}"
                )));
            }
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            let err = relative_error(analytic[t].data()[e], numeric);
            if err > max_rel_error || worst.is_none() {
                max_rel_error = err;
                worst = Some((t, e));
            }
            checked += 1;
        }
    }
    Ok(GradCheckReport {
        max_rel_error,
        worst,
        checked,
        tolerance,
        passed: max_rel_error < tolerance,
    })
}

/// Checks a graph's parameter and input gradients for a scalar loss head.
/// `head` maps the graph output to `(loss, dloss/doutput)`.
pub fn check_graph<H>(
    graph: &mut Graph,
    input: &Tensor,
    side: Option<&Tensor>,
    head: H,
    tolerance: f64,
) -> Result<GradCheckReport>
where
    H: Fn(&Tensor) -> (f64, Tensor),
{
    let trace = graph.trace(input, side)?;
    let (_, upstream) = head(trace.output());
    let grads = graph.backward_trace(&trace, &upstream)?;

    let mut params = graph.params().to_vec();
    let probe = graph.clone();
    let param_report = finite_diff_check(
        &mut params,
        &grads.params,
        |p| {
            let mut g = probe.clone();
            g.set_params(p.to_vec())?;
            Ok(head(&g.infer(input, side)?).0)
        },
        tolerance,
    )?;

    let mut inputs = vec![input.clone()];
    let input_report = finite_diff_check(
        &mut inputs,
        std::slice::from_ref(&grads.input),
        |x| Ok(head(&graph.infer(&x[0], side)?).0),
        tolerance,
    )?;
    let n = graph.params().len();
    let mut report = param_report.merge(input_report, n);

    if let (Some(side), Some(side_grad)) = (side, grads.side.as_ref()) {
        let mut sides = vec![side.clone()];
        let side_report = finite_diff_check(
            &mut sides,
            std::slice::from_ref(side_grad),
            |s| Ok(head(&graph.infer(input, Some(&s[0]))?).0),
            tolerance,
        )?;
        report = report.merge(side_report, n + 1);
    }
    Ok(report)
}

/// Loss head `sum_i c_i * y_i` with fixed pseudo-random coefficients, so no
/// output direction has an identically zero gradient.
pub fn weighted_sum_head(output: &Tensor) -> (f64, Tensor) {
    let coeffs = Tensor::from_fn(output.shape(), |i| ((i * 7919 % 113) as f64 / 113.0) - 0.45);
    let loss = output
        .data()
        .iter()
        .zip(coeffs.data())
        .map(|(y, c)| y * c)
        .sum();
    (loss, coeffs)
}
