use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{contract, Result};
use crate::tensor::Tensor;

use super::{Tape, Var};

/// Symmetric relative error `|a − n| / max(1e-8, |a| + |n|)`.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    rel_err_floored(analytic, numeric, 1e-8)
}

/// [`rel_err`] with a caller-chosen denominator floor. Gradients smaller than
/// the floor are effectively compared in absolute terms, which keeps
/// central-difference roundoff on near-zero gradients from dominating.
pub fn rel_err_floored(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(floor)
}

/// Largest relative error between tape gradients and central differences
/// over every element of every input.
pub fn grad_check<F>(builder: F, inputs: &[Tensor<f64>], eps: f64) -> Result<f64>
where
    F: Fn(&Tape<f64>, &[Var<f64>]) -> Result<Var<f64>>,
{
    grad_check_sampled(builder, inputs, eps, usize::MAX, 0)
}

/// Like [`grad_check`], but probes at most `per_input` randomly chosen
/// elements of each input (chosen from `seed`).
pub fn grad_check_sampled<F>(builder: F, inputs: &[Tensor<f64>], eps: f64, per_input: usize, seed: u64) -> Result<f64>
where
    F: Fn(&Tape<f64>, &[Var<f64>]) -> Result<Var<f64>>,
{
    grad_check_floored(builder, inputs, eps, per_input, seed, 1e-8)
}

/// [`grad_check_sampled`] scored with [`rel_err_floored`].
pub fn grad_check_floored<F>(
    builder: F,
    inputs: &[Tensor<f64>],
    eps: f64,
    per_input: usize,
    seed: u64,
    floor: f64,
) -> Result<f64>
where
    F: Fn(&Tape<f64>, &[Var<f64>]) -> Result<Var<f64>>,
{
    let tape = Tape::new();
    let vars: Vec<Var<f64>> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = builder(&tape, &vars)?;
    if loss.value().numel() != 1 {
        contract!("grad_check builder must return a scalar, got {:?}", loss.shape());
    }
    let grads = tape.backward(&loss)?;
    drop(loss);

    let eval = |probe: &[Tensor<f64>]| -> Result<f64> {
        let tape = Tape::inference();
        let vars: Vec<Var<f64>> = probe.iter().map(|t| tape.constant(t.clone())).collect();
        Ok(builder(&tape, &vars)?.value().data()[0])
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let mut probe: Vec<Tensor<f64>> = inputs.to_vec();
    for (k, var) in vars.iter().enumerate() {
        let numel = inputs[k].numel();
        let analytic = grads.wrt(var).cloned().unwrap_or_else(|| Tensor::zeros(inputs[k].shape()));
        let coords: Vec<usize> =
            if per_input >= numel { (0..numel).collect() } else { sample(&mut rng, numel, per_input).into_vec() };
        for i in coords {
            let original = inputs[k].data()[i];
            probe[k].data_mut()[i] = original + eps;
            let plus = eval(&probe)?;
            probe[k].data_mut()[i] = original - eps;
            let minus = eval(&probe)?;
            probe[k].data_mut()[i] = original;
            let numeric = (plus - minus) / (2.0 * eps);
            worst = worst.max(rel_err_floored(analytic.data()[i], numeric, floor));
        }
    }
    Ok(worst)
}
