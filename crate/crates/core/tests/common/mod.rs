//! Helpers shared by the integration test targets.

#![allow(dead_code)]

use kar_core::nn::{Graph, ParamId, ParamStore, Tensor, Var};
use kar_core::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const H: f64 = 1e-4;
pub const REL_TOL: f64 = 1e-4;
pub const MAX_ENTRIES: usize = 40;

pub fn loss_value(store: &ParamStore, f: &dyn Fn(&mut Graph) -> Result<Var>) -> f64 {
    let mut g = Graph::new(store);
    let v = f(&mut g).unwrap();
    g.value(v).data()[0]
}

/// Checks every parameter (a sample of entries for large ones) and returns
/// the number of entries compared.
pub fn gradcheck(store: &mut ParamStore, f: &dyn Fn(&mut Graph) -> Result<Var>) -> usize {
    let grads = {
        let mut g = Graph::new(store);
        let loss = f(&mut g).unwrap();
        g.backward(loss).unwrap().into_params()
    };
    let ids: Vec<ParamId> = store.ids().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut checked = 0;
    for id in ids {
        let n = store.get(id).len();
        let entries: Vec<usize> = if n <= MAX_ENTRIES {
            (0..n).collect()
        } else {
            (0..MAX_ENTRIES).map(|_| rng.random_range(0..n)).collect()
        };
        for e in entries {
            let orig = store.get(id).data()[e];
            store.get_mut(id).data_mut()[e] = orig + H;
            let up = loss_value(store, f);
            store.get_mut(id).data_mut()[e] = orig - H;
            let down = loss_value(store, f);
            store.get_mut(id).data_mut()[e] = orig;
            let numeric = (up - down) / (2.0 * H);
            let auto = grads.get(&id).map_or(0.0, |t| t.data()[e]);
            let scale = auto.abs().max(numeric.abs());
            let ok = (auto - numeric).abs() <= 1e-8 || (auto - numeric).abs() / scale < REL_TOL;
            assert!(
                ok,
                "{}[{e}]: autodiff {auto:e} vs numeric {numeric:e}",
                store.name(id)
            );
            checked += 1;
        }
    }
    checked
}

pub fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    // Keep values away from zero so ReLU kinks are not straddled by ±h.
    let data = (0..n)
        .map(|_| {
            let v: f64 = rng.random_range(0.05..1.0);
            if rng.random_bool(0.5) { v } else { -v }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

// Reduces any tensor to a scalar through a fixed random projection, so that
// every output element carries a distinct weight.
pub fn project(g: &mut Graph, x: Var, seed: u64) -> Result<Var> {
    let shape = g.shape(x).to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = g.constant(random(&mut rng, &shape));
    let p = g.mul(x, w)?;
    Ok(g.sum_all(p))
}
