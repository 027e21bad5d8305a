//! Central finite-difference gradient checking.
//!
//! The numeric side only ever evaluates forward values, so it stays
//! independent of every backward rule it is used to verify.

use super::graph::{Graph, Var};
use super::params::ParamStore;
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    /// Largest `|analytic − numeric| / max(|analytic|, |numeric|, floor)` with
    /// `floor = 1e-6 · max(1, |loss|)`, below which central differences are
    /// dominated by rounding in the loss.
    pub max_relative_error: f64,
    pub max_absolute_error: f64,
    pub checked: usize,
}

/// Compares backpropagated gradients of the scalar built by `build` with
/// central differences of step `h`, over at most `max_per_param` entries of
/// every parameter (evenly strided).
pub fn check_gradients<F>(
    store: &mut ParamStore,
    h: f64,
    max_per_param: usize,
    build: F,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph) -> Result<Var>,
{
    store.zero_grad();
    let base = {
        let (values, grads) = store.split();
        let mut g = Graph::new(values);
        let loss = build(&mut g)?;
        g.backward(loss, grads);
        g.scalar(loss)
    };
    let floor = 1e-6 * base.abs().max(1.0);
    let eval = |store: &ParamStore| -> Result<f64> {
        let mut g = Graph::new(store.values());
        let loss = build(&mut g)?;
        Ok(g.scalar(loss))
    };

    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        max_absolute_error: 0.0,
        checked: 0,
    };
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let len = store.value(id).len();
        let stride = (len / max_per_param.max(1)).max(1);
        for k in (0..len).step_by(stride) {
            let original = store.value(id).data()[k];
            store.value_mut(id).data_mut()[k] = original + h;
            let plus = eval(store)?;
            store.value_mut(id).data_mut()[k] = original - h;
            let minus = eval(store)?;
            store.value_mut(id).data_mut()[k] = original;

            let numeric = (plus - minus) / (2.0 * h);
            let analytic = store.grad(id).data()[k];
            let abs = (analytic - numeric).abs();
            let rel = abs / analytic.abs().max(numeric.abs()).max(floor);
            report.max_absolute_error = report.max_absolute_error.max(abs);
            report.max_relative_error = report.max_relative_error.max(rel);
            report.checked += 1;
        }
    }
    Ok(report)
}
