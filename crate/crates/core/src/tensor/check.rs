//! Finite-difference gradient checking.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Graph, ParamId, ParamStore, Result, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub coords_checked: usize,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }
}

/// Compares analytic gradients against central differences with step `h`.
///
/// `f` must build a scalar from the store's parameters on the given graph.
/// At most `max_coords` coordinates are checked, sampled deterministically
/// and covering every parameter at least once. The relative error of a
/// coordinate is `|a - n| / max(|a|, |n|, 1e-6)`. The floor sits near the
/// round-off of a central difference, so gradients that are exactly zero
/// (a key bias under softmax, say) do not report noise as error.
pub fn grad_check<F>(store: &mut ParamStore, mut f: F, h: f64, max_coords: usize) -> Result<GradCheckReport>
where
    F: FnMut(&mut Graph, &ParamStore) -> Result<Tensor>,
{
    store.zero_grad();
    let mut g = Graph::new();
    let loss = f(&mut g, store)?;
    g.backward(loss)?;
    g.accumulate_param_grads(store);
    let analytic: Vec<Vec<f64>> =
        store.iter().map(|p| p.grad.clone().unwrap_or_else(|| vec![0.0; p.data.len()])).collect();
    store.zero_grad();

    let mut rng = ChaCha8Rng::seed_from_u64(0x9e37_79b9);
    let mut firsts = Vec::new();
    let mut rest = Vec::new();
    for (pi, p) in store.iter().enumerate() {
        let mut idx: Vec<usize> = (0..p.data.len()).collect();
        idx.shuffle(&mut rng);
        if let Some((&first, others)) = idx.split_first() {
            firsts.push((pi, first));
            rest.extend(others.iter().map(|&k| (pi, k)));
        }
    }
    rest.shuffle(&mut rng);
    let mut coords = firsts;
    coords.extend(rest);
    coords.truncate(max_coords.max(store.len()));

    let mut eval = |store: &ParamStore| -> Result<f64> {
        let mut g = Graph::new();
        let t = f(&mut g, store)?;
        Ok(g.scalar(t))
    };

    let mut report = GradCheckReport { max_rel_err: 0.0, coords_checked: 0, worst: None };
    for (pi, k) in coords {
        let id = ParamId(pi);
        let orig = store.get(id).data[k];
        store.get_mut(id).data[k] = orig + h;
        let up = eval(store)?;
        store.get_mut(id).data[k] = orig - h;
        let down = eval(store)?;
        store.get_mut(id).data[k] = orig;
        let numeric = (up - down) / (2.0 * h);
        let a = analytic[pi][k];
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
        report.coords_checked += 1;
        if err > report.max_rel_err || report.worst.is_none() {
            report.max_rel_err = report.max_rel_err.max(err);
            if err >= report.max_rel_err {
                report.worst = Some((store.get(id).name.clone(), k));
            }
        }
    }
    Ok(report)
}
