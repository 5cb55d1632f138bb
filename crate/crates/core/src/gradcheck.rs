//! Central finite differences for checking analytic gradients.

use rand::Rng as _;

use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::rng::substream;
use crate::tensor::Tensor;

/// Step used by the gradient checks throughout the crate.
pub const FD_STEP: f64 = 1e-5;

/// Central-difference estimate of `∂f/∂x[i]` for each requested index.
pub fn central_difference(
    f: &mut dyn FnMut(&[f64]) -> f64,
    x: &[f64],
    indices: &[usize],
    h: f64,
) -> Vec<f64> {
    let mut probe = x.to_vec();
    indices
        .iter()
        .map(|&i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `‖a − b‖₂ / max(‖a‖₂, ‖b‖₂)`, or 0 when both vectors are zero.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let diff = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = na.max(nb);
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Largest relative error, over every argument, between the analytic
/// gradient of `Σ r ⊙ build(inputs)` and its central-difference estimate.
/// `r` is a random projection drawn from `seed`.
pub fn op_gradient_error(
    inputs: &[Tensor],
    build: &dyn Fn(&mut Tape, &[Var]) -> Result<Var>,
    seed: u64,
) -> Result<f64> {
    let probe = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = build(&mut tape, &vars)?;
        tape.value(out).shape().to_vec()
    };
    let mut rng = substream(seed, "gradcheck");
    let weights = Tensor::from_fn(&probe, |_| rng.random_range(-1.0..1.0));
    let eval = |tape: &mut Tape, vars: &[Var]| -> Result<Var> {
        let out = build(tape, vars)?;
        let r = tape.leaf(weights.clone());
        let prod = tape.mul(out, r)?;
        Ok(tape.sum(prod))
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|t| tape.leaf(t.clone().with_requires_grad(true)))
        .collect();
    let loss = eval(&mut tape, &vars)?;
    tape.backward(loss)?;

    let mut worst = 0.0f64;
    for (arg, input) in inputs.iter().enumerate() {
        let analytic = tape.grad(vars[arg]).expect("leaf requires grad").to_vec();
        let mut f = |x: &[f64]| {
            let mut t = Tape::new();
            let vs: Vec<Var> = inputs
                .iter()
                .enumerate()
                .map(|(i, orig)| {
                    if i == arg {
                        t.leaf(Tensor::new(orig.shape().to_vec(), x.to_vec()).expect("same shape"))
                    } else {
                        t.leaf(orig.clone())
                    }
                })
                .collect();
            let l = eval(&mut t, &vs).expect("succeeded once already");
            t.value(l).data()[0]
        };
        let idx: Vec<usize> = (0..input.numel()).collect();
        let numeric = central_difference(&mut f, input.data(), &idx, FD_STEP);
        worst = worst.max(relative_error(&analytic, &numeric));
    }
    Ok(worst)
}
