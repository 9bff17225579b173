//! Central finite-difference check of tape gradients.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Relative errors use `max(|autodiff|, |numeric|, floor)` as denominator so
/// coordinates with vanishing gradients are compared absolutely.
pub const RELATIVE_FLOOR: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Coordinate {
    pub param: usize,
    pub index: usize,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Per parameter, per element relative error.
    pub errors: Vec<Vec<f64>>,
    pub max_error: f64,
    pub worst: Option<Coordinate>,
    pub tolerance: f64,
    /// Smallest relu input magnitude seen at the unperturbed point.
    pub relu_margin: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_error < self.tolerance
    }
}

fn evaluate<F>(f: &F, params: &[Tensor]) -> Result<(Tape, Vec<Var>, Var)>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p.clone())).collect();
    let out = f(&mut tape, &vars)?;
    Ok((tape, vars, out))
}

fn scalar_value<F>(f: &F, params: &[Tensor], coordinate: Coordinate) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let (tape, _, out) = evaluate(f, params)?;
    let v = tape.value(out).data()[0];
    if !v.is_finite() {
        return Err(Error::NonFiniteObjective {
            param: coordinate.param,
            coordinate: coordinate.index,
        });
    }
    Ok(v)
}

/// Compares the tape gradient of the scalar `f` against central differences
/// with the given `step`, for every element of every tensor in `params`.
pub fn grad_check<F>(f: F, params: &[Tensor], step: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(1e-7..=1e-3).contains(&step) {
        return Err(Error::BadStep(step));
    }
    let (tape, vars, out) = evaluate(&f, params)?;
    if !tape.value(out).data().iter().all(|v| v.is_finite()) {
        return Err(Error::NonFiniteObjective {
            param: 0,
            coordinate: 0,
        });
    }
    let grads = tape.backward(out)?;
    let relu_margin = tape.relu_margin();

    let mut work: Vec<Tensor> = params.to_vec();
    let mut errors = Vec::with_capacity(params.len());
    let mut max_error = 0.0;
    let mut worst = None;
    for (p, var) in vars.iter().enumerate() {
        let analytic = grads.get(*var);
        let mut errs = Vec::with_capacity(analytic.len());
        for i in 0..analytic.len() {
            let coordinate = Coordinate { param: p, index: i };
            let orig = work[p].data()[i];
            work[p].data_mut()[i] = orig + step;
            let plus = scalar_value(&f, &work, coordinate)?;
            work[p].data_mut()[i] = orig - step;
            let minus = scalar_value(&f, &work, coordinate)?;
            work[p].data_mut()[i] = orig;

            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic.data()[i];
            let denom = a.abs().max(numeric.abs()).max(RELATIVE_FLOOR);
            let err = (a - numeric).abs() / denom;
            if err > max_error || worst.is_none() {
                max_error = err;
                worst = Some(coordinate);
            }
            errs.push(err);
        }
        errors.push(errs);
    }
    Ok(GradCheckReport {
        errors,
        max_error,
        worst,
        tolerance: tol,
        relu_margin,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_passes() {
        let theta = Tensor::row(&[0.3, -1.2, 2.5, 0.01]);
        let report = grad_check(
            |t, v| {
                let sq = t.mul(v[0], v[0])?;
                Ok(t.sum(sq))
            },
            &[theta],
            1e-5,
            1e-6,
        )
        .unwrap();
        assert!(report.passed(), "{}", report.max_error);
    }

    #[test]
    fn step_bounds_enforced() {
        let r = grad_check(|t, v| Ok(t.sum(v[0])), &[Tensor::scalar(1.0)], 0.1, 1e-4);
        assert!(matches!(r, Err(Error::BadStep(_))));
    }

    #[test]
    fn non_finite_objective_reports_coordinate() {
        // log(x) with x = [1, 1e-6]: stepping the second coordinate by 1e-5
        // crosses zero.
        let theta = Tensor::row(&[1.0, 1e-6]);
        let r = grad_check(
            |t, v| {
                let l = t.log(v[0]);
                Ok(t.sum(l))
            },
            &[theta],
            1e-5,
            1e-4,
        );
        assert_eq!(
            r.unwrap_err(),
            Error::NonFiniteObjective {
                param: 0,
                coordinate: 1
            }
        );
    }
}
