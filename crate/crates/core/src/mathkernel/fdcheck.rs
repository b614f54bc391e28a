use super::params::ParamStore;
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

/// Outcome of comparing analytic and central-difference gradients.
#[derive(Debug, Clone)]
pub struct FdReport {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub checked: usize,
    /// L2 norm of the analytic gradient over frozen parameters, which are
    /// excluded from the comparison.
    pub frozen_grad_norm: f64,
}

/// Denominator floor for the relative error, so near-zero gradients are judged absolutely.
const REL_FLOOR: f64 = 1e-6;

/// Checks `forward`'s analytic gradients against central differences with step `h`.
///
/// `forward` must be deterministic given the parameter values and return a
/// scalar loss node. Parameters marked frozen are not perturbed.
pub fn finite_difference_check<F>(store: &mut ParamStore, h: f64, forward: F) -> Result<FdReport>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    if !(h > 0.0) {
        return Err(Error::invalid(format!("step must be positive, got {h}")));
    }
    let eval = |store: &ParamStore| -> Result<f64> {
        let mut tape = Tape::new();
        let loss = forward(&mut tape, store)?;
        let v = tape.value(loss).item()?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFinite("loss during finite-difference check".into()))
        }
    };

    let mut tape = Tape::new();
    let loss = forward(&mut tape, store)?;
    if !tape.value(loss).item()?.is_finite() {
        return Err(Error::NonFinite("loss during finite-difference check".into()));
    }
    tape.backward(loss, store)?;
    let analytic: Vec<(String, bool, Vec<f64>)> = store
        .iter()
        .map(|(n, p)| (n.to_string(), p.frozen, p.grad.data().to_vec()))
        .collect();

    let mut report = FdReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        checked: 0,
        frozen_grad_norm: 0.0,
    };
    for (name, frozen, grad) in analytic {
        if frozen {
            report.frozen_grad_norm += grad.iter().map(|g| g * g).sum::<f64>();
            continue;
        }
        for (i, &a) in grad.iter().enumerate() {
            let orig = store.value(&name)?.data()[i];
            store.get_mut(&name)?.value.data_mut()[i] = orig + h;
            let plus = eval(store);
            store.get_mut(&name)?.value.data_mut()[i] = orig - h;
            let minus = eval(store);
            store.get_mut(&name)?.value.data_mut()[i] = orig;
            let numeric = (plus? - minus?) / (2.0 * h);
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
            report.checked += 1;
            if err > report.max_rel_error || report.worst_param.is_empty() {
                report.max_rel_error = err;
                report.worst_param = name.clone();
                report.worst_index = i;
            }
        }
    }
    report.frozen_grad_norm = report.frozen_grad_norm.sqrt();
    store.zero_grad();
    Ok(report)
}
