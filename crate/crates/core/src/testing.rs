//! Shared helpers for unit tests (compiled only under `cfg(test)`).

use indexmap::IndexMap;

use crate::graph::{Graph, Var};
use crate::rng::RandomStream;
use crate::tensor::Tensor;

/// Central-difference gradient check: every analytic partial from
/// `Graph::backward` must match the numerical derivative to a relative
/// error of 1e-4 (h = 1e-5).
pub(crate) fn gradcheck(
    params: &IndexMap<String, Tensor>,
    build: impl Fn(&mut Graph, &IndexMap<String, Tensor>) -> Var,
) {
    let eval = |p: &IndexMap<String, Tensor>| -> f64 {
        let mut g = Graph::new();
        let loss = build(&mut g, p);
        g.value(loss).item()
    };
    let mut g = Graph::new();
    let loss = build(&mut g, params);
    let grads: IndexMap<String, Tensor> = g.backward(loss).unwrap().into_iter().collect();

    let h = 1e-5;
    for (name, value) in params {
        let analytic = grads
            .get(name)
            .unwrap_or_else(|| panic!("no gradient for {name}"));
        for i in 0..value.numel() {
            let mut plus = params.clone();
            plus[name].data_mut()[i] += h;
            let mut minus = params.clone();
            minus[name].data_mut()[i] -= h;
            let fd = (eval(&plus) - eval(&minus)) / (2.0 * h);
            let a = analytic.data()[i];
            let denom = (a.abs() + fd.abs()).max(1e-6);
            let rel = (a - fd).abs() / denom;
            assert!(
                rel <= 1e-4,
                "{name}[{i}]: analytic {a} vs numeric {fd} (rel {rel:.2e})"
            );
        }
    }
}

/// Named standard-normal tensors for gradcheck scenarios.
pub(crate) fn mk_params(specs: &[(&str, Vec<usize>)], seed: u64) -> IndexMap<String, Tensor> {
    let mut rng = RandomStream::seed(seed);
    specs
        .iter()
        .map(|(n, s)| (n.to_string(), rng.standard_normal(s.clone())))
        .collect()
}
