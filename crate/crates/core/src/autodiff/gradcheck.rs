use super::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `|analytic − numeric| / max(1, |analytic|, |numeric|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs())
}

/// Largest relative error between reverse-mode and central-difference
/// gradients of the scalar produced by `f` with respect to `x`.
pub fn grad_check<F>(f: F, x: &Tensor<f64>, eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, Var) -> Result<Var>,
{
    grad_check_many(|tape, vars| f(tape, vars[0]), std::slice::from_ref(x), eps)
}

/// Multi-input variant of [`grad_check`]; every input is perturbed
/// component by component. The graph is built once and replayed for
/// each perturbation.
pub fn grad_check_many<F>(f: F, inputs: &[Tensor<f64>], eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.param(x.clone())).collect();
    let out = f(&mut tape, &vars)?;
    if tape.value(out).len() != 1 {
        return Err(Error::Contract("grad_check needs a scalar-valued function".into()));
    }
    tape.backward(out)?;
    let analytic: Vec<Tensor<f64>> = vars.iter().map(|&v| tape.grad(v).expect("leaf grad")).collect();

    let eval = |tape: &mut Tape<f64>, which: usize, at: usize, delta: f64| -> Result<f64> {
        let mut perturbed = inputs[which].clone();
        perturbed.data_mut()[at] += delta;
        tape.set_value(vars[which], perturbed)?;
        tape.replay()?;
        Ok(tape.value(out).data()[0])
    };

    let mut worst = 0f64;
    for (which, input) in inputs.iter().enumerate() {
        for at in 0..input.len() {
            let plus = eval(&mut tape, which, at, eps)?;
            let minus = eval(&mut tape, which, at, -eps)?;
            let numeric = (plus - minus) / (2.0 * eps);
            worst = worst.max(relative_error(analytic[which].data()[at], numeric));
        }
        tape.set_value(vars[which], input.clone())?;
    }
    tape.replay()?;
    Ok(worst)
}
