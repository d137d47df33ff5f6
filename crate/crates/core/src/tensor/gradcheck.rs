//! Central-difference gradient verification.

use crate::error::{Error, Result};
use crate::tensor::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Outcome of a gradient check.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// Coordinate with the largest error.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

/// `|a - n| / max(|a|, |n|, 1e-12)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-12)
}

/// Compares an analytic gradient with central differences.
///
/// `f(point, need_grad)` returns the scalar value and, when asked, the
/// analytic gradient with respect to every coordinate of `point`.
/// `coords` restricts the numeric sweep to a subset of coordinates.
pub fn grad_check<F>(mut f: F, point: &[f64], eps: f64, coords: Option<&[usize]>) -> Result<GradCheckReport>
where
    F: FnMut(&[f64], bool) -> Result<(f64, Option<Vec<f64>>)>,
{
    if !(eps > 0.0) {
        return Err(Error::InvalidSpec(format!("eps must be > 0, got {eps}")));
    }
    let (_, grad) = f(point, true)?;
    let grad = grad.ok_or_else(|| Error::InvalidSpec("function returned no gradient".into()))?;
    if grad.len() != point.len() {
        return Err(Error::shape(format!(
            "gradient length {} != point length {}",
            grad.len(),
            point.len()
        )));
    }
    let all: Vec<usize>;
    let coords = match coords {
        Some(c) => c,
        None => {
            all = (0..point.len()).collect();
            &all
        }
    };
    let mut x = point.to_vec();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        checked: coords.len(),
    };
    for &i in coords {
        let orig = x[i];
        x[i] = orig + eps;
        let (plus, _) = f(&x, false)?;
        x[i] = orig - eps;
        let (minus, _) = f(&x, false)?;
        x[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite(format!("function value at perturbed coordinate {i}")));
        }
        let numeric = (plus - minus) / (2.0 * eps);
        let err = relative_error(grad[i], numeric);
        if err > report.max_relative_error {
            report.max_relative_error = err;
            report.worst_index = i;
            report.analytic = grad[i];
            report.numeric = numeric;
        }
    }
    Ok(report)
}

/// Gradient check of a tape-built scalar function of one input tensor.
pub fn grad_check_input<B>(input: &Tensor, eps: f64, build: B) -> Result<GradCheckReport>
where
    B: Fn(&mut Tape, Var) -> Result<Var>,
{
    let shape = input.shape().to_vec();
    grad_check(
        |point, need_grad| {
            let mut tape = Tape::new();
            let x = tape.leaf(Tensor::new(shape.clone(), point.to_vec())?, need_grad);
            let loss = build(&mut tape, x)?;
            let value = tape.value(loss).data()[0];
            if !need_grad {
                return Ok((value, None));
            }
            let g = tape.backward(loss)?;
            Ok((value, Some(g.wrt(x).into_data())))
        },
        input.data(),
        eps,
        None,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_function_is_exact() {
        let w = [0.5, -1.25, 3.0, 2.0];
        let report = grad_check(
            |x, _| Ok((x.iter().zip(&w).map(|(a, b)| a * b).sum(), Some(w.to_vec()))),
            &[1.0, 2.0, -3.0, 0.25],
            1e-5,
            None,
        )
        .unwrap();
        assert!(report.max_relative_error < 1e-10);
    }

    #[test]
    fn wrong_gradient_is_detected() {
        let report = grad_check(|x, _| Ok((x[0] * x[0], Some(vec![x[0]]))), &[2.0], 1e-5, None).unwrap();
        assert!(report.max_relative_error > 0.4);
    }

    #[test]
    fn non_finite_perturbation_is_an_error() {
        let res = grad_check(
            |x, _| Ok((if x[0] > 1.0 { f64::NAN } else { x[0] }, Some(vec![1.0]))),
            &[1.0],
            1e-5,
            None,
        );
        assert!(matches!(res, Err(Error::NonFinite(_))));
    }

    #[test]
    fn relu_away_from_kink() {
        let input = Tensor::new([6], vec![0.3, -0.2, 1.5, -1.1, 0.1, -0.4]).unwrap();
        let w = Tensor::new([6], vec![1.0, 2.0, -0.5, 0.7, 1.3, -2.0]).unwrap();
        let report = grad_check_input(&input, 1e-5, |t, x| {
            let y = t.relu(x);
            t.weighted_sum(y, w.clone())
        })
        .unwrap();
        assert!(report.max_relative_error < 1e-6);
    }
}
