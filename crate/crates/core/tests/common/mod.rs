#![allow(dead_code)]

use copsd::diffcore::{Array, Graph, Var};

/// Central finite differences of `f` with respect to every entry of every
/// input array. Knows nothing about the backward pass.
pub fn numeric_grads(inputs: &[Array], f: &dyn Fn(&[Array]) -> f64, h: f64) -> Vec<Array> {
    let mut work: Vec<Array> = inputs.to_vec();
    let mut out = Vec::with_capacity(inputs.len());
    for a in 0..inputs.len() {
        let mut grad = Array::zeros(inputs[a].shape());
        for i in 0..inputs[a].len() {
            let orig = work[a].data()[i];
            work[a].data_mut()[i] = orig + h;
            let plus = f(&work);
            work[a].data_mut()[i] = orig - h;
            let minus = f(&work);
            work[a].data_mut()[i] = orig;
            grad.data_mut()[i] = (plus - minus) / (2.0 * h);
        }
        out.push(grad);
    }
    out
}

/// `‖a − b‖ / max(‖a‖, ‖b‖, floor)`
pub fn rel_err(a: &Array, b: &Array) -> f64 {
    let diff: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let na = a.data().iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.data().iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(1e-8)
}

/// Builds the graph once with trainable leaves and returns analytic grads.
pub fn analytic_grads(
    inputs: &[Array],
    build: &dyn Fn(&mut Graph, &[Var]) -> Var,
) -> (f64, Vec<Array>) {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|a| g.leaf(a.clone(), true)).collect();
    let root = build(&mut g, &vars);
    let value = g.value(root).item();
    g.backward(root).unwrap();
    (value, vars.iter().map(|&v| g.grad_or_zeros(v)).collect())
}

pub fn forward_value(inputs: &[Array], build: &dyn Fn(&mut Graph, &[Var]) -> Var) -> f64 {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|a| g.constant(a.clone())).collect();
    let root = build(&mut g, &vars);
    g.value(root).item()
}
