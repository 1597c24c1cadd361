use super::{Graph, ParamStore, Var};
use crate::error::{ensure, Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub coordinates: usize,
}

fn eval(f: &impl Fn(&Graph, &ParamStore) -> Var, store: &ParamStore) -> f64 {
    let g = Graph::lenient();
    let out = f(&g, store);
    g.value(out).item()
}

/// Compare analytic gradients with central differences on every coordinate
/// of every trainable parameter.
pub fn grad_check(
    f: impl Fn(&Graph, &ParamStore) -> Var,
    store: &ParamStore,
    eps: f64,
) -> Result<GradCheckReport> {
    grad_check_sampled(f, store, eps, usize::MAX)
}

/// As [`grad_check`], but probe at most `max_per_param` evenly spaced
/// coordinates of each parameter.
pub fn grad_check_sampled(
    f: impl Fn(&Graph, &ParamStore) -> Var,
    store: &ParamStore,
    eps: f64,
    max_per_param: usize,
) -> Result<GradCheckReport> {
    ensure!(eps > 0.0 && eps <= 1e-2, "grad_check eps must lie in (0, 1e-2], got {eps}");
    let g = Graph::new();
    let out = f(&g, store);
    let grads = g.backward(out)?.param_grads();

    let mut work = store.clone();
    let mut report = GradCheckReport { max_rel_error: 0.0, worst: None, coordinates: 0 };
    for p in store.iter().filter(|p| p.trainable) {
        let n = p.tensor.len();
        let stride = n.div_ceil(max_per_param.min(n)).max(1);
        for i in (0..n).step_by(stride) {
            let analytic = grads.get(&p.name).map_or(0.0, |t| t.data()[i]);
            let orig = p.tensor.data()[i];
            work.get_mut(&p.name).unwrap().tensor.data_mut()[i] = orig + eps;
            let up = eval(&f, &work);
            work.get_mut(&p.name).unwrap().tensor.data_mut()[i] = orig - eps;
            let down = eval(&f, &work);
            work.get_mut(&p.name).unwrap().tensor.data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * eps);
            if !numeric.is_finite() || !analytic.is_finite() {
                return Err(Error::Numerical(format!("NaN in grad_check at `{}`[{i}]", p.name)));
            }
            let rel = (analytic - numeric).abs() / analytic.abs().max(1.0);
            report.coordinates += 1;
            if report.worst.is_none() || rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some((p.name.clone(), i));
            }
        }
    }
    Ok(report)
}
