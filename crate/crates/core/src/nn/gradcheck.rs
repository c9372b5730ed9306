//! Finite-difference verification of analytic gradients.

use rand::seq::index::sample;

use super::graph::{Graph, Var};
use super::optim::ParamStore;
use crate::rng::rng_from_seed;

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    pub eps: f64,
    /// Coordinates checked per parameter tensor; `None` checks all of them.
    pub per_param: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            eps: 1e-5,
            per_param: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckEntry {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.entries.iter().map(|e| e.rel_err).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&GradCheckEntry> {
        self.entries
            .iter()
            .max_by(|a, b| a.rel_err.total_cmp(&b.rel_err))
    }
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Compares backprop gradients of `loss_fn` against central differences.
/// `loss_fn` must build the scalar loss deterministically from the store.
pub fn check(
    store: &mut ParamStore,
    cfg: &GradCheckConfig,
    loss_fn: impl Fn(&mut Graph, &ParamStore) -> Var,
) -> GradCheckReport {
    let mut g = Graph::new();
    let loss = loss_fn(&mut g, store);
    let analytic = g.backward(loss).for_params(store);
    drop(g);

    let eval = |store: &ParamStore| {
        let mut g = Graph::new();
        let l = loss_fn(&mut g, store);
        g.value(l).item()
    };

    let mut rng = rng_from_seed(cfg.seed);
    let mut report = GradCheckReport::default();
    let ids: Vec<_> = store.ids().collect();
    for (k, id) in ids.into_iter().enumerate() {
        let n = store.get(id).len();
        let coords: Vec<usize> = match cfg.per_param {
            Some(m) if m < n => sample(&mut rng, n, m).into_vec(),
            _ => (0..n).collect(),
        };
        for i in coords {
            let orig = store.get(id).data()[i];
            store.get_mut(id).data_mut()[i] = orig + cfg.eps;
            let plus = eval(store);
            store.get_mut(id).data_mut()[i] = orig - cfg.eps;
            let minus = eval(store);
            store.get_mut(id).data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * cfg.eps);
            let a = analytic.0[k].data()[i];
            report.entries.push(GradCheckEntry {
                param: store.name(id).to_string(),
                index: i,
                analytic: a,
                numeric,
                rel_err: relative_error(a, numeric),
            });
        }
    }
    report
}
