//! Central finite-difference probe of parameter gradients.

use super::{Bound, Params};
use crate::error::Result;
use crate::tensor::{Tape, Var};

pub const FD_STEP: f64 = 1e-5;

/// Relative error with a floor so near-zero pairs compare absolutely.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-4)
}

/// Worst disagreement between tape and numeric gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub worst_rel_err: f64,
    pub worst_at: String,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

/// Compares tape gradients of the scalar `f` with central differences on
/// every parameter scalar.
pub fn check_param_grads<F>(params: &Params, f: F) -> Result<GradCheck>
where
    F: Fn(&mut Tape, &Bound) -> Result<Var>,
{
    let eval = |p: &Params| -> Result<f64> {
        let mut t = Tape::new();
        let b = p.bind(&mut t);
        let out = f(&mut t, &b)?;
        Ok(t.value(out).data()[0])
    };
    let mut t = Tape::new();
    let b = params.bind(&mut t);
    let out = f(&mut t, &b)?;
    t.backward(out)?;
    let grads = b.grads(&t);
    let mut report = GradCheck {
        worst_rel_err: 0.0,
        worst_at: String::new(),
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    let mut probe = params.clone();
    for (path, tensor) in params.iter() {
        for i in 0..tensor.numel() {
            let x = tensor.data()[i];
            probe.get_mut(path).expect("same keys").data_mut()[i] = x + FD_STEP;
            let plus = eval(&probe)?;
            probe.get_mut(path).expect("same keys").data_mut()[i] = x - FD_STEP;
            let minus = eval(&probe)?;
            probe.get_mut(path).expect("same keys").data_mut()[i] = x;
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            let analytic = grads[path][i];
            let err = rel_err(analytic, numeric);
            report.checked += 1;
            if err > report.worst_rel_err || report.worst_at.is_empty() {
                report.worst_rel_err = err;
                report.worst_at = format!("{path}[{i}]");
                report.analytic = analytic;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}
