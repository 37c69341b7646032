//! Central finite-difference verification of analytic gradients.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Graph, ParamId, ParamStore, Result, TensorError, Var};

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckEntry {
    pub name: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.entries.iter().map(|e| e.rel_error).fold(0.0, f64::max)
    }

    /// Largest relative error per parameter name, sorted by name.
    pub fn per_parameter(&self) -> BTreeMap<String, f64> {
        let mut out = BTreeMap::new();
        for e in &self.entries {
            let v = out.entry(e.name.clone()).or_insert(0.0f64);
            *v = v.max(e.rel_error);
        }
        out
    }

    pub fn passed(&self, tolerance: f64) -> bool {
        self.max_rel_error() < tolerance
    }
}

#[derive(Debug, Clone, Copy)]
pub enum Sampling {
    /// Every scalar of every parameter.
    All,
    /// `count` scalars, cycling through parameters in a seeded order so
    /// every parameter is visited when `count >= store.len()`.
    Random { count: usize, seed: u64 },
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares backward-pass gradients of `loss_fn` against central
/// differences with the given `step`. `loss_fn` must build a scalar loss
/// from the store's current values and must be deterministic.
pub fn gradient_check<F>(
    store: &mut ParamStore,
    step: f64,
    sampling: Sampling,
    mut loss_fn: F,
) -> Result<GradCheckReport>
where
    F: FnMut(&ParamStore, &mut Graph) -> Result<Var>,
{
    fn eval<F>(loss_fn: &mut F, store: &ParamStore) -> Result<f64>
    where
        F: FnMut(&ParamStore, &mut Graph) -> Result<Var>,
    {
        let mut g = Graph::new();
        let l = loss_fn(store, &mut g)?;
        Ok(g.value(l).item())
    }

    let mut g = Graph::new();
    let loss = loss_fn(store, &mut g)?;
    let first = g.value(loss).item();
    let second = eval(&mut loss_fn, store)?;
    if first.to_bits() != second.to_bits() {
        return Err(TensorError::NonDeterministic { first, second });
    }
    let grads = g.backward(loss)?;
    store.zero_grad();
    grads.accumulate_into(store);

    let targets: Vec<(ParamId, usize)> = match sampling {
        Sampling::All => store
            .ids()
            .flat_map(|id| (0..store.get(id).tensor.shape().numel()).map(move |i| (id, i)))
            .collect(),
        Sampling::Random { count, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut order: Vec<ParamId> = store.ids().collect();
            order.shuffle(&mut rng);
            (0..count)
                .filter_map(|k| {
                    let id = *order.get(k % order.len().max(1))?;
                    let n = store.get(id).tensor.shape().numel();
                    Some((id, rng.gen_range(0..n)))
                })
                .collect()
        }
    };

    let mut entries = Vec::with_capacity(targets.len());
    for (id, i) in targets {
        let analytic = store.get(id).tensor.grad().map_or(0.0, |g| g[i]);
        let orig = store.get(id).tensor.data()[i];
        store.get_mut(id).tensor.data_mut()[i] = orig + step;
        let plus = eval(&mut loss_fn, store)?;
        store.get_mut(id).tensor.data_mut()[i] = orig - step;
        let minus = eval(&mut loss_fn, store)?;
        store.get_mut(id).tensor.data_mut()[i] = orig;
        let numeric = (plus - minus) / (2.0 * step);
        entries.push(GradCheckEntry {
            name: store.get(id).name.clone(),
            index: i,
            analytic,
            numeric,
            rel_error: relative_error(analytic, numeric),
        });
    }
    store.zero_grad();
    Ok(GradCheckReport { entries })
}
