//! Central finite-difference check of tape gradients.

use super::dense::Tensor;
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

/// Outcome of [`grad_check`].
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Relative error per element, one vector per input.
    pub rel_errors: Vec<Vec<f64>>,
    pub max_rel_error: f64,
    /// Input and flat element index where the maximum occurred.
    pub worst: (usize, usize),
    pub tol: f64,
    pub passed: bool,
}

fn rel_error(ad: f64, fd: f64) -> f64 {
    (ad - fd).abs() / ad.abs().max(fd.abs()).max(1e-8)
}

fn eval<F>(f: &F, inputs: &[Tensor]) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let out = f(&mut tape, &vars)?;
    let v = tape.value(out);
    if v.numel() != 1 {
        return Err(Error::Contract(format!(
            "grad_check needs a scalar function, got shape {:?}",
            v.shape()
        )));
    }
    Ok(v.item())
}

/// Compares reverse-mode gradients of the scalar function `f` against
/// fourth-order central differences with step `eps`, over every element of
/// every input. The five-point stencil keeps truncation error negligible at
/// steps large enough that rounding noise stays under the `1e-8` floor.
///
/// `f` is evaluated twice at the unperturbed point first; any disagreement is
/// reported as an oracle error since finite differences would be meaningless.
pub fn grad_check<F>(f: F, inputs: &[Tensor], eps: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let f0 = eval(&f, inputs)?;
    let f1 = eval(&f, inputs)?;
    if f0.to_bits() != f1.to_bits() {
        return Err(Error::Oracle(format!(
            "function is not deterministic: {f0} then {f1}"
        )));
    }

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let out = f(&mut tape, &vars)?;
    tape.backward(out)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| tape.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();

    let mut rel_errors = Vec::with_capacity(inputs.len());
    let mut max_rel_error = 0.0_f64;
    let mut worst = (0, 0);
    let mut probe: Vec<Tensor> = inputs.to_vec();
    for (k, input) in inputs.iter().enumerate() {
        let mut errs = Vec::with_capacity(input.numel());
        for i in 0..input.numel() {
            let x = input.data()[i];
            let mut at = |step: f64| -> Result<f64> {
                probe[k].data_mut()[i] = x + step;
                let v = eval(&f, &probe);
                probe[k].data_mut()[i] = x;
                v
            };
            let (p1, m1) = (at(eps)?, at(-eps)?);
            let (p2, m2) = (at(2.0 * eps)?, at(-2.0 * eps)?);
            let fd = (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * eps);
            let err = rel_error(analytic[k].data()[i], fd);
            if err > max_rel_error || err.is_nan() {
                max_rel_error = if err.is_nan() { f64::INFINITY } else { err };
                worst = (k, i);
            }
            errs.push(err);
        }
        rel_errors.push(errs);
    }
    Ok(GradCheckReport {
        rel_errors,
        max_rel_error,
        worst,
        tol,
        passed: max_rel_error <= tol,
    })
}
