//! Central finite-difference checks of reverse-mode gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::graph::{Graph, NodeId};
use crate::autodiff::tensor::Tensor;
use crate::error::Result;

pub const FD_EPS: f64 = 1e-4;

/// Normwise relative error `max|a − n| / max|n|`, with the denominator floored at 1e-10.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let num = analytic.iter().zip(numeric).fold(0.0f64, |m, (a, n)| m.max((a - n).abs()));
    let den = numeric.iter().fold(0.0f64, |m, n| m.max(n.abs())).max(1e-10);
    num / den
}

pub fn random_tensor(shape: &[usize], rng: &mut impl Rng, scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-scale..scale)).collect()).expect("sized")
}

/// Entries probed per parameter tensor when parameters are checked.
pub const PARAM_PROBES: usize = 4;

/// Checks the gradient of `⟨f(inputs), u⟩` for a random cotangent `u` with
/// respect to every input by central differences with step `eps`, returning
/// the worst relative error.
///
/// `build` records the computation on a fresh graph whose leaves are the
/// given inputs; `faulty` optionally corrupts one op's rule. With `params`,
/// a few random entries of every registered parameter are probed too, pooled
/// into one normwise error.
#[allow(clippy::too_many_arguments)]
pub fn check_graph<F>(
    build: F,
    inputs: &[Tensor],
    seed: u64,
    faulty: Option<(&str, f64)>,
    params: bool,
    eps: f64,
) -> Result<f64>
where
    F: Fn(&mut Graph, &[NodeId]) -> Result<NodeId>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut graph = Graph::new();
    if let Some((name, factor)) = faulty {
        graph.inject_fault(name, factor);
    }
    let ids: Vec<NodeId> = inputs.iter().map(|t| graph.input(t.clone())).collect();
    let out = build(&mut graph, &ids)?;
    let u = random_tensor(graph.value(out).shape(), &mut rng, 1.0);
    let grads = graph.backward(out, &u)?;
    let mut worst = 0.0f64;
    for (k, &id) in ids.iter().enumerate() {
        let analytic = grads
            .wrt(id)
            .map(|t| t.data().to_vec())
            .unwrap_or_else(|| vec![0.0; inputs[k].len()]);
        let mut numeric = vec![0.0; inputs[k].len()];
        for (i, slot) in numeric.iter_mut().enumerate() {
            let mut eval = |delta: f64| -> Result<f64> {
                let mut x = inputs[k].clone();
                x.data_mut()[i] += delta;
                graph.set_leaf(id, x)?;
                graph.replay()?;
                Ok(graph.value(out).dot(&u))
            };
            let plus = eval(eps)?;
            let minus = eval(-eps)?;
            *slot = (plus - minus) / (2.0 * eps);
        }
        graph.set_leaf(id, inputs[k].clone())?;
        graph.replay()?;
        worst = worst.max(relative_error(&analytic, &numeric));
    }
    if params {
        let names: Vec<String> = graph.param_names().map(str::to_string).collect();
        let (mut analytic, mut numeric) = (Vec::new(), Vec::new());
        for name in names {
            let id = graph.param_id(&name).expect("registered");
            let base = graph.value(id).clone();
            let g = grads.param(&name).cloned().unwrap_or_else(|| Tensor::zeros(base.shape()));
            for _ in 0..PARAM_PROBES.min(base.len()) {
                let i = rng.random_range(0..base.len());
                let mut eval = |delta: f64| -> Result<f64> {
                    let mut x = base.clone();
                    x.data_mut()[i] += delta;
                    graph.set_leaf(id, x)?;
                    graph.replay()?;
                    Ok(graph.value(out).dot(&u))
                };
                let plus = eval(eps)?;
                let minus = eval(-eps)?;
                numeric.push((plus - minus) / (2.0 * eps));
                analytic.push(g.data()[i]);
            }
            graph.set_leaf(id, base)?;
            graph.replay()?;
        }
        worst = worst.max(relative_error(&analytic, &numeric));
    }
    Ok(worst)
}

/// Finite-difference gradient of a scalar function of a flat vector.
pub fn numeric_gradient(x: &[f64], mut f: impl FnMut(&[f64]) -> Result<f64>) -> Result<Vec<f64>> {
    let mut probe = x.to_vec();
    let mut out = vec![0.0; x.len()];
    for i in 0..x.len() {
        probe[i] = x[i] + FD_EPS;
        let plus = f(&probe)?;
        probe[i] = x[i] - FD_EPS;
        let minus = f(&probe)?;
        probe[i] = x[i];
        out[i] = (plus - minus) / (2.0 * FD_EPS);
    }
    Ok(out)
}
