use super::params::{Binder, ParamStore};
use super::tape::{Tape, Var};
use crate::error::Result;

/// Denominator floor for relative errors.
pub const REL_ERR_FLOOR: f64 = 1e-12;

/// Outcome of comparing tape gradients with central differences.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(parameter name, flat index, analytic, numeric)` at the worst coordinate.
    pub worst: Option<(String, usize, f64, f64)>,
    pub coordinates: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error < tol
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

/// Compares reverse-mode gradients of a scalar loss against
/// `(f(p+h) − f(p−h)) / 2h` for every coordinate of every parameter in
/// `store`.
///
/// `loss_fn` builds the loss on the given tape, binding parameters through
/// the given binder; it must be deterministic.
pub fn finite_diff_check<F>(store: &ParamStore<f64>, h: f64, loss_fn: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &mut Binder<f64>) -> Result<Var>,
{
    let mut analytic = store.clone();
    analytic.zero_grad();
    {
        let mut tape = Tape::new();
        let mut binder = Binder::trainable(store);
        let loss = loss_fn(&mut tape, &mut binder)?;
        let bindings = binder.finish();
        let grads = tape.backward(loss)?;
        analytic.accumulate(&bindings, &grads);
    }

    let eval = |s: &ParamStore<f64>| -> Result<f64> {
        let mut tape = Tape::new();
        let mut binder = Binder::frozen(s);
        let loss = loss_fn(&mut tape, &mut binder)?;
        Ok(tape.value(loss).item())
    };

    let mut work = store.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        coordinates: 0,
    };
    for id in store.ids() {
        let n = store.get(id).len();
        let grad = analytic.grad(id).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; n]);
        for (j, &a) in grad.iter().enumerate() {
            let orig = store.get(id).data()[j];
            work.get_mut(id).data_mut()[j] = orig + h;
            let plus = eval(&work)?;
            work.get_mut(id).data_mut()[j] = orig - h;
            let minus = eval(&work)?;
            work.get_mut(id).data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let err = relative_error(a, numeric);
            report.coordinates += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                report.worst = Some((store.name(id).to_string(), j, a, numeric));
            }
        }
    }
    Ok(report)
}
