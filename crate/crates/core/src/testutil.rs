//! Finite-difference oracle shared by unit tests.

use rand::Rng;

use crate::error::Result;
use crate::tensor::{Tape, Tensor, Var};

pub fn rand_tensor<R: Rng>(rng: &mut R, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-4)
}

/// Central differences (h = 1e-5) against tape gradients for every entry
/// of every input.
pub fn assert_grads_match<F>(inputs: &[Tensor], tol: f64, f: F)
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |vals: &[Tensor]| -> f64 {
        let mut t = Tape::new();
        let vars: Vec<Var> = vals.iter().map(|v| t.param(v.clone())).collect();
        let out = f(&mut t, &vars).unwrap();
        t.value(out).data()[0]
    };
    let mut t = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|v| t.param(v.clone())).collect();
    let out = f(&mut t, &vars).unwrap();
    t.backward(out).unwrap();
    let h = 1e-5;
    for (k, input) in inputs.iter().enumerate() {
        let analytic = t.grad(vars[k]).map(|g| g.to_vec()).unwrap_or_else(|| vec![0.0; input.numel()]);
        for i in 0..input.numel() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += h;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= h;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * h);
            let err = rel_err(analytic[i], numeric);
            assert!(
                err < tol,
                "input {k} entry {i}: analytic {} numeric {numeric} rel err {err}",
                analytic[i]
            );
        }
    }
}

/// Central differences (h = 1e-5) for every scalar of every parameter.
pub fn assert_param_grads<F>(params: &crate::layers::Params, tol: f64, f: F)
where
    F: Fn(&mut Tape, &crate::layers::Bound) -> Result<Var>,
{
    let r = crate::layers::gradcheck::check_param_grads(params, f).unwrap();
    assert!(
        r.worst_rel_err < tol,
        "{}: analytic {} numeric {} rel err {}",
        r.worst_at,
        r.analytic,
        r.numeric,
        r.worst_rel_err
    );
}
