//! Central finite-difference checks of tape gradients.

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct FdReport {
    /// Largest `|analytic - numeric| / max(1, |analytic|)` over all input entries.
    pub max_rel_error: f64,
    /// Input index and flat entry where the maximum was attained.
    pub worst: (usize, usize),
}

/// Compare the tape gradient of the scalar `f(inputs)` against central
/// differences with step `h`, entry by entry.
pub fn check_gradients<F>(inputs: &[Tensor], h: f64, f: F) -> Result<FdReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |vals: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new().with_finite_checks(false);
        let vars: Vec<Var> = vals.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        let v = tape.try_value(out)?;
        if v.len() != 1 {
            return Err(Error::NonScalarRoot(v.shape().to_vec()));
        }
        Ok(v.item())
    };

    let mut tape = Tape::new().with_finite_checks(false);
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let root = f(&mut tape, &vars)?;
    let grads = tape.backward(root)?;

    let mut report = FdReport {
        max_rel_error: 0.0,
        worst: (0, 0),
    };
    let mut perturbed = inputs.to_vec();
    for (i, &var) in vars.iter().enumerate() {
        let analytic = grads.get(var).expect("leaf gradient").clone();
        for j in 0..inputs[i].len() {
            let orig = inputs[i].data()[j];
            perturbed[i].data_mut()[j] = orig + h;
            let up = eval(&perturbed)?;
            perturbed[i].data_mut()[j] = orig - h;
            let down = eval(&perturbed)?;
            perturbed[i].data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic.data()[j];
            let err = (a - numeric).abs() / a.abs().max(1.0);
            if !(err <= report.max_rel_error) {
                report.max_rel_error = err;
                report.worst = (i, j);
            }
        }
    }
    Ok(report)
}
