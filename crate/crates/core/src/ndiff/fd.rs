use std::collections::BTreeMap;

use super::ParamStore;

/// Central-difference gradient of `loss_fn` with respect to every scalar in `store`.
///
/// `store` is perturbed in place and restored before returning.
pub fn finite_difference<F>(mut loss_fn: F, store: &mut ParamStore, h: f64) -> BTreeMap<String, Vec<f64>>
where
    F: FnMut(&ParamStore) -> f64,
{
    let names: Vec<String> = store.names().cloned().collect();
    let mut out = BTreeMap::new();
    for name in names {
        let n = store.get(&name).unwrap().value.len();
        let mut grad = vec![0.0; n];
        for (i, g) in grad.iter_mut().enumerate() {
            let orig = store.get(&name).unwrap().value.data()[i];
            store.get_mut(&name).unwrap().value.data_mut()[i] = orig + h;
            let up = loss_fn(store);
            store.get_mut(&name).unwrap().value.data_mut()[i] = orig - h;
            let down = loss_fn(store);
            store.get_mut(&name).unwrap().value.data_mut()[i] = orig;
            *g = (up - down) / (2.0 * h);
        }
        out.insert(name, grad);
    }
    out
}

/// Central differences for a function of a plain vector.
pub fn finite_difference_vec<F>(mut f: F, x: &[f64], h: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut x = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + h;
            let up = f(&x);
            x[i] = orig - h;
            let down = f(&x);
            x[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Relative error with the denominator `max(|a|, |b|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}
