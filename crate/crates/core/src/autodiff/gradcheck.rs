//! Central finite differences, used to verify every tape rule.

use crate::error::Result;
use crate::rng::Rng;
use crate::tensor::Tensor;

use super::{Tape, Var};

/// `(f(x + εe_i) - f(x - εe_i)) / 2ε` for every element `i`.
pub fn finite_diff_grad(f: impl Fn(&Tensor) -> f64, x: &Tensor, eps: f64) -> Tensor {
    assert!(eps > 0.0, "finite difference step must be positive");
    let mut probe = x.clone();
    let mut grad = Tensor::zeros(x.dims());
    for i in 0..x.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let up = f(&probe);
        probe.data_mut()[i] = orig - eps;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        grad.data_mut()[i] = (up - down) / (2.0 * eps);
    }
    grad
}

/// Normwise relative error `‖a - b‖ / max(‖a‖, ‖b‖, 1e-12)`.
pub fn relative_error(a: &Tensor, b: &Tensor) -> f64 {
    let diff: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    diff.sqrt() / a.norm().max(b.norm()).max(1e-12)
}

/// Checks the tape gradient of `build` against finite differences for every
/// input. The graph output is contracted with a fixed random projection so
/// every output element contributes. Returns the worst relative error.
pub fn gradient_check<F>(build: F, inputs: &[Tensor], eps: f64, seed: u64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let probe_shape = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
        let out = build(&mut tape, &vars)?;
        tape.value(out).dims().to_vec()
    };
    let mut rng = Rng::new(seed);
    let projection = Tensor::from_fn(&probe_shape, |_| rng.normal());

    let scalar_loss = |tape: &mut Tape, vars: &[Var]| -> Result<Var> {
        let out = build(tape, vars)?;
        let w = tape.constant(projection.clone());
        let prod = tape.mul(out, w)?;
        Ok(tape.sum(prod))
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let loss = scalar_loss(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;

    let mut worst = 0.0f64;
    for (i, input) in inputs.iter().enumerate() {
        let analytic = grads
            .get(vars[i])
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(input.dims()));
        let numeric = finite_diff_grad(
            |x| {
                let mut t = Tape::new();
                let vs: Vec<Var> = inputs
                    .iter()
                    .enumerate()
                    .map(|(j, v)| t.constant(if j == i { x.clone() } else { v.clone() }))
                    .collect();
                let l = scalar_loss(&mut t, &vs).expect("graph rebuild");
                t.value(l).item()
            },
            input,
            eps,
        );
        worst = worst.max(relative_error(&analytic, &numeric));
    }
    Ok(worst)
}
