//! Central-difference verification of tape gradients.
//!
//! The caller runs one forward/backward pass to populate `params.grad`,
//! then hands [`compare`] a forward-only loss closure. Each parameter
//! element is nudged by `±step` and the numeric slope is compared
//! against the stored analytic gradient.

use crate::error::Result;
use crate::numerics::{ParamSet, Scalar};

/// One element whose analytic and numeric slopes disagree.
#[derive(Clone, Debug)]
pub struct Failure {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

/// Outcome of a full comparison sweep.
#[derive(Clone, Debug, Default)]
pub struct Report {
    pub checked: usize,
    pub max_rel_err: f64,
    pub failures: Vec<Failure>,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Compares `params.grad` against central differences of `forward`.
///
/// An element passes when the relative error is below `tol`, or when
/// both slopes are below `floor` in magnitude (the quotient is
/// meaningless near zero). The loss closure must be deterministic.
pub fn compare<S, F>(
    params: &mut ParamSet<S>,
    mut forward: F,
    step: f64,
    tol: f64,
    floor: f64,
) -> Result<Report>
where
    S: Scalar,
    F: FnMut(&ParamSet<S>) -> Result<f64>,
{
    let mut report = Report::default();
    let ids: Vec<_> = params.ids().collect();
    for id in ids {
        let len = params.get(id).value.len();
        for k in 0..len {
            let original = params.get(id).value.data()[k];
            let h = S::of(step);

            params.get_mut(id).value.data_mut()[k] = original + h;
            let f_plus = forward(params)?;
            params.get_mut(id).value.data_mut()[k] = original - h;
            let f_minus = forward(params)?;
            params.get_mut(id).value.data_mut()[k] = original;

            let numeric = (f_plus - f_minus) / (2.0 * step);
            let analytic = params.get(id).grad.data()[k].as_f64();
            let denom = analytic.abs().max(numeric.abs());
            let rel = if analytic.abs() <= floor && numeric.abs() <= floor {
                0.0
            } else {
                (analytic - numeric).abs() / denom
            };

            report.checked += 1;
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
            }
            if rel > tol {
                report.failures.push(Failure {
                    param: params.get(id).name.clone(),
                    index: k,
                    analytic,
                    numeric,
                    rel_err: rel,
                });
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::tape::Tape;
    use crate::numerics::Tensor;

    #[test]
    fn quadratic_gradient_passes() {
        let mut params = ParamSet::<f64>::new();
        let id = params
            .add("p", Tensor::vector(vec![0.3, -1.2, 2.0]))
            .unwrap();

        let mut tape = Tape::new();
        let x = tape.param(&params, id);
        let sq = tape.mul(x, x).unwrap();
        let loss = tape.sum(sq);
        tape.backward(loss, &mut params).unwrap();

        let report = compare(
            &mut params,
            |p| {
                let mut t = Tape::new();
                let x = t.param(p, id);
                let sq = t.mul(x, x).unwrap();
                let l = t.sum(sq);
                Ok(t.value(l).data()[0])
            },
            1e-5,
            1e-6,
            1e-9,
        )
        .unwrap();
        assert!(report.passed(), "worst {:?}", report.failures.first());
        assert_eq!(report.checked, 3);
    }

    #[test]
    fn corrupted_gradient_is_detected() {
        let mut params = ParamSet::<f64>::new();
        let id = params.add("p", Tensor::vector(vec![1.0, 2.0])).unwrap();

        let mut tape = Tape::new();
        let x = tape.param(&params, id);
        let sq = tape.mul(x, x).unwrap();
        let loss = tape.sum(sq);
        tape.backward(loss, &mut params).unwrap();
        params.get_mut(id).grad.data_mut()[0] += 0.5;

        let report = compare(
            &mut params,
            |p| {
                let mut t = Tape::new();
                let x = t.param(p, id);
                let sq = t.mul(x, x).unwrap();
                let l = t.sum(sq);
                Ok(t.value(l).data()[0])
            },
            1e-5,
            1e-6,
            1e-9,
        )
        .unwrap();
        assert!(!report.passed());
        assert_eq!(report.failures.len(), 1);
        assert_eq!(report.failures[0].index, 0);
    }
}
