//! Central finite-difference checks of analytic parameter gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::{Float, ParamStore};

#[derive(Clone, Debug)]
pub struct GradCheckEntry {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

/// Relative error `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares `grad_fn` against central differences of `loss_fn` on
/// `samples` randomly chosen scalar weights of `store`.
///
/// `grad_fn` returns one gradient tensor (or `None`) per stored parameter.
pub fn check_param_gradients(
    store: &mut ParamStore<f64>,
    samples: usize,
    step: f64,
    seed: u64,
    loss_fn: &mut dyn FnMut(&ParamStore<f64>) -> f64,
    grad_fn: &mut dyn FnMut(&ParamStore<f64>) -> Vec<Option<crate::Tensor<f64>>>,
) -> Vec<GradCheckEntry> {
    let grads = grad_fn(store);
    let total = store.num_elements();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut flat: Vec<(usize, usize)> = Vec::with_capacity(total);
    for id in store.ids() {
        if grads[id.0].is_none() {
            continue;
        }
        for j in 0..store.get(id).len() {
            flat.push((id.0, j));
        }
    }
    let picks = sample(&mut rng, flat.len(), samples.min(flat.len()));
    let mut out = Vec::new();
    for pi in picks.iter() {
        let (pid, j) = flat[pi];
        let id = crate::ParamId(pid);
        let orig = store.get(id).data()[j];
        store.get_mut(id).data_mut()[j] = orig + step;
        let lp = loss_fn(store);
        store.get_mut(id).data_mut()[j] = orig - step;
        let lm = loss_fn(store);
        store.get_mut(id).data_mut()[j] = orig;
        let numeric = (lp - lm) / (2.0 * step);
        let analytic = grads[pid]
            .as_ref()
            .map(|g| g.data()[j].as_f64())
            .unwrap_or(0.0);
        out.push(GradCheckEntry {
            param: store.name(id).to_string(),
            index: j,
            analytic,
            numeric,
            rel_error: relative_error(analytic, numeric, 1e-6),
        });
    }
    out
}
