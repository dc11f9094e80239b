//! Central finite-difference check of tape gradients.

use super::scalar::Scalar;
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use super::NumericsError;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// `(input, element)` of the worst entry.
    pub worst: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

/// Compares the analytic gradient of the scalar `f(inputs)` against
/// `(f(x+eps) − f(x−eps)) / 2eps`, element by element, and returns the maximum
/// relative error with denominator `max(|analytic|, |numeric|, 1e-8)`.
///
/// `f` must be deterministic: any randomness inside it (dropout) has to be
/// reseeded identically on every call or the report is meaningless.
pub fn grad_check<T, F>(f: F, inputs: &[Tensor<T>], eps: f64) -> Result<GradCheckReport, NumericsError>
where
    T: Scalar,
    F: Fn(&mut Tape<T>, &[Var]) -> Result<Var, NumericsError>,
{
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(NumericsError::Epsilon(eps));
    }
    let eval = |values: &[Tensor<T>]| -> Result<f64, NumericsError> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        if tape.value(out).len() != 1 {
            return Err(NumericsError::NonScalar(tape.shape(out).to_vec()));
        }
        Ok(tape.value(out).item().as_f64())
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;
    let analytic: Vec<Tensor<T>> = vars.iter().map(|v| grads.get_or_zero(*v)).collect();

    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst: (0, 0),
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    let mut work: Vec<Tensor<T>> = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        for e in 0..input.len() {
            let x = input.data()[e];
            work[i].data_mut()[e] = x + T::lit(eps);
            let plus = eval(&work)?;
            work[i].data_mut()[e] = x - T::lit(eps);
            let minus = eval(&work)?;
            work[i].data_mut()[e] = x;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic[i].data()[e].as_f64();
            let denom = a.abs().max(numeric.abs()).max(1e-8);
            let err = (a - numeric).abs() / denom;
            report.checked += 1;
            if err > report.max_relative_error || report.checked == 1 {
                report.max_relative_error = err;
                report.worst = (i, e);
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}
