//! Central finite differences over parameter entries.
//!
//! Only forward evaluations of the loss are used here, so the result is an
//! oracle that is independent of the reverse sweep it is compared against.

use super::{ParamId, ParamStore};

#[derive(Clone, Debug)]
pub struct GradCheckEntry {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl GradCheckEntry {
    /// `|a - n| / max(|a|, |n|, floor)`.
    pub fn relative_error(&self, floor: f64) -> f64 {
        let denom = self.analytic.abs().max(self.numeric.abs()).max(floor);
        (self.analytic - self.numeric).abs() / denom
    }
}

/// Numerical derivative of `loss` with respect to every entry of one parameter.
pub fn numeric_gradient<F>(store: &mut ParamStore, id: ParamId, h: f64, mut loss: F) -> Vec<f64>
where
    F: FnMut(&ParamStore) -> f64,
{
    let n = store.value(id).len();
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let orig = store.value(id).data()[k];
        store.value_mut(id).data_mut()[k] = orig + h;
        let up = loss(store);
        store.value_mut(id).data_mut()[k] = orig - h;
        let down = loss(store);
        store.value_mut(id).data_mut()[k] = orig;
        out.push((up - down) / (2.0 * h));
    }
    out
}

/// Compares analytic gradients already accumulated in `store` with central
/// differences of `loss`.
pub fn compare<F>(store: &mut ParamStore, ids: &[ParamId], h: f64, mut loss: F) -> Vec<GradCheckEntry>
where
    F: FnMut(&ParamStore) -> f64,
{
    let mut entries = Vec::new();
    for &id in ids {
        let analytic = store
            .grad(id)
            .map(|g| g.data().to_vec())
            .unwrap_or_else(|| vec![0.0; store.value(id).len()]);
        let numeric = numeric_gradient(store, id, h, &mut loss);
        let name = store.get(id).name.clone();
        for (index, (a, n)) in analytic.into_iter().zip(numeric).enumerate() {
            entries.push(GradCheckEntry {
                param: name.clone(),
                index,
                analytic: a,
                numeric: n,
            });
        }
    }
    entries
}
