//! Central finite-difference checks of analytic gradients.

use super::params::{Grads, ParamStore};
use super::tensor::Tensor2;
use crate::error::Result;

/// Gradients whose analytic and numeric values are both below this are
/// compared absolutely rather than relatively; central differences carry
/// roundoff of order 1e-10 for losses of order one.
const FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub checked: usize,
}

fn rel_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(FLOOR)
}

/// Evenly spaced entry indices, at most `limit` of them.
fn sample(len: usize, limit: usize) -> Vec<usize> {
    if len <= limit {
        return (0..len).collect();
    }
    (0..limit).map(|i| i * len / limit).collect()
}

/// Compares the gradients returned by `f` with central differences of its
/// loss, checking up to `per_param` entries of every parameter.
pub fn check_params<F>(store: &ParamStore, h: f64, per_param: usize, f: F) -> Result<GradCheck>
where
    F: Fn(&ParamStore) -> Result<(f64, Grads)>,
{
    let (_, grads) = f(store)?;
    let mut probe = store.clone();
    let mut out = GradCheck {
        max_rel_error: 0.0,
        checked: 0,
    };
    for id in 0..store.len() {
        let len = store.value(id).data().len();
        for i in sample(len, per_param) {
            let x = store.value(id).data()[i];
            probe.value_mut(id).data_mut()[i] = x + h;
            let up = f(&probe)?.0;
            probe.value_mut(id).data_mut()[i] = x - h;
            let down = f(&probe)?.0;
            probe.value_mut(id).data_mut()[i] = x;
            let numeric = (up - down) / (2.0 * h);
            let analytic = grads.get(id).map_or(0.0, |g| g.data()[i]);
            out.max_rel_error = out.max_rel_error.max(rel_error(analytic, numeric));
            out.checked += 1;
        }
    }
    Ok(out)
}

/// Same check for the gradient with respect to an input tensor.
pub fn check_input<F>(x: &Tensor2, h: f64, f: F) -> Result<GradCheck>
where
    F: Fn(&Tensor2) -> Result<(f64, Tensor2)>,
{
    let (_, grad) = f(x)?;
    let mut probe = x.clone();
    let mut out = GradCheck {
        max_rel_error: 0.0,
        checked: 0,
    };
    for i in 0..x.data().len() {
        let v = x.data()[i];
        probe.data_mut()[i] = v + h;
        let up = f(&probe)?.0;
        probe.data_mut()[i] = v - h;
        let down = f(&probe)?.0;
        probe.data_mut()[i] = v;
        let numeric = (up - down) / (2.0 * h);
        out.max_rel_error = out.max_rel_error.max(rel_error(grad.data()[i], numeric));
        out.checked += 1;
    }
    Ok(out)
}
