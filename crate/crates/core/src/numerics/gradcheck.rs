use super::graph::{Graph, Var};
use super::params::{ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Denominator floor for the relative error, so near-zero gradients are
/// compared on an absolute scale.
pub const REL_ERR_FLOOR: f64 = 1e-3;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    /// (input index, element index) of the worst relative error.
    pub worst: (usize, usize),
    pub checked: usize,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.tol
    }
}

/// Compares reverse-mode gradients of the scalar `f` against central
/// differences `(f(x+eps) - f(x-eps)) / 2eps`, element by element.
/// Relative error is `|a - n| / max(|a|, |n|, REL_ERR_FLOOR)`.
pub fn grad_check<F>(f: F, inputs: &[Tensor], eps: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Var,
{
    for (i, t) in inputs.iter().enumerate() {
        if !t.is_finite() {
            return Err(Error::NonFiniteValue(format!("grad_check input {i}")));
        }
    }
    let eval = |values: &[Tensor]| -> (Graph, Vec<Var>, Var) {
        let mut g = Graph::new();
        let vars: Vec<Var> = values.iter().map(|t| g.leaf(t.clone())).collect();
        let out = f(&mut g, &vars);
        (g, vars, out)
    };
    let (g, vars, out) = eval(inputs);
    if g.value(out).len() != 1 {
        return Err(Error::ShapeMismatch("grad_check needs a scalar output".into()));
    }
    if !g.value(out).is_finite() {
        return Err(Error::NonFiniteValue("grad_check output".into()));
    }
    let grads = g.backward(out);
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| grads.get(v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        max_abs_err: 0.0,
        worst: (0, 0),
        checked: 0,
        tol,
    };
    let mut probe = inputs.to_vec();
    for i in 0..inputs.len() {
        for j in 0..inputs[i].len() {
            let x0 = inputs[i].data()[j];
            probe[i].data_mut()[j] = x0 + eps;
            let (gp, _, op) = eval(&probe);
            let fp = gp.value(op).item();
            probe[i].data_mut()[j] = x0 - eps;
            let (gm, _, om) = eval(&probe);
            let fm = gm.value(om).item();
            probe[i].data_mut()[j] = x0;
            if !fp.is_finite() || !fm.is_finite() {
                return Err(Error::NonFiniteValue(format!("grad_check probe ({i}, {j})")));
            }
            let numeric = (fp - fm) / (2.0 * eps);
            let a = analytic[i].data()[j];
            let abs = (a - numeric).abs();
            let rel = abs / a.abs().max(numeric.abs()).max(REL_ERR_FLOOR);
            report.max_abs_err = report.max_abs_err.max(abs);
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst = (i, j);
            }
            report.checked += 1;
        }
    }
    Ok(report)
}

/// [`grad_check`] with respect to stored parameters: `ids` are bound to
/// leaves holding their current values before `f` builds the graph.
pub fn grad_check_params<F>(store: &ParamStore, ids: &[ParamId], f: F, eps: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &ParamStore) -> Var,
{
    let inputs: Vec<Tensor> = ids.iter().map(|&id| store.value(id).clone()).collect();
    grad_check(
        |g: &mut Graph, vars: &[Var]| {
            for (&id, &v) in ids.iter().zip(vars) {
                g.bind_param(id, v);
            }
            f(g, store)
        },
        &inputs,
        eps,
        tol,
    )
}
