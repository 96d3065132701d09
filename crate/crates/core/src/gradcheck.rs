//! Finite-difference verification of tape gradients.

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tape::{Tape, Var};

/// Compares tape gradients of `f` against central differences, one
/// coordinate at a time, and returns the largest
/// `|analytic − numeric| / (|analytic| + |numeric| + 1e-12)`.
///
/// `f` must be deterministic: it is re-evaluated twice per coordinate on
/// perturbed copies of `store`.
pub fn grad_check<F>(store: &ParamStore, step: f64, f: F) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, &ParamStore) -> Result<Var<'t>>,
{
    if !(step > 0.0 && step <= 1e-2) {
        return Err(Error::Invalid(format!("finite-difference step {step} outside (0, 1e-2]")));
    }
    let mut work = store.clone();
    let tape = Tape::new();
    let loss = f(&tape, &work)?;
    tape.backward(loss, &mut work)?;
    let analytic: Vec<Vec<f64>> = work
        .entries()
        .iter()
        .map(|e| e.tensor.grad().map(<[f64]>::to_vec).unwrap_or_default())
        .collect();
    work.clear_grad();

    let eval = |s: &ParamStore| -> Result<f64> {
        let tape = Tape::new();
        let v = f(&tape, s)?.item()?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFinite("grad_check probe".into()))
        }
    };

    let mut worst = 0.0f64;
    let ids: Vec<_> = work.ids().collect();
    for (k, id) in ids.into_iter().enumerate() {
        for i in 0..work.get(id).len() {
            let orig = work.get(id).data()[i];
            work.get_mut(id).data_mut()[i] = orig + step;
            let up = eval(&work)?;
            work.get_mut(id).data_mut()[i] = orig - step;
            let down = eval(&work)?;
            work.get_mut(id).data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * step);
            let a = analytic[k][i];
            let err = (a - numeric).abs() / (a.abs() + numeric.abs() + 1e-12);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}
