//! Finite-difference verification of tape gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{NnError, Result};
use crate::nnkit::{Tape, Tensor, Var};

/// Relative disagreement floor: `|a - b| / max(|a|, |b|, FLOOR)`.
pub const REL_FLOOR: f64 = 1e-12;

fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

fn eval<F>(f: &F, inputs: &[Tensor]) -> Result<(f64, Vec<Tensor>)>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let value = tape.value(out).item();
    let grads = tape.backward(out)?;
    Ok((value, vars.iter().map(|&v| grads.get(v)).collect()))
}

fn eval_value<F>(f: &F, inputs: &[Tensor]) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let v = tape.value(out).item();
    if !v.is_finite() {
        return Err(NnError::NonFinite { op: "grad_check" });
    }
    Ok(v)
}

/// Max relative error between central differences and reverse-mode
/// gradients of the scalar `f`, over every input coordinate.
pub fn grad_check<F>(f: F, inputs: &[Tensor], eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    grad_check_sampled(f, inputs, eps, usize::MAX, 0)
}

/// As [`grad_check`], but checks at most `per_input` randomly chosen
/// coordinates of each input.
pub fn grad_check_sampled<F>(f: F, inputs: &[Tensor], eps: f64, per_input: usize, seed: u64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(NnError::Parameter(format!(
            "epsilon must lie in [1e-7, 1e-3], got {eps}"
        )));
    }
    let (_, analytic) = eval(&f, inputs)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut work: Vec<Tensor> = inputs.to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..inputs.len() {
        let n = inputs[i].len();
        let coords: Vec<usize> = if per_input >= n {
            (0..n).collect()
        } else {
            sample(&mut rng, n, per_input).into_vec()
        };
        for j in coords {
            let x0 = inputs[i].data()[j];
            work[i].data_mut()[j] = x0 + eps;
            let up = eval_value(&f, &work)?;
            work[i].data_mut()[j] = x0 - eps;
            let down = eval_value(&f, &work)?;
            work[i].data_mut()[j] = x0;
            let fd = (up - down) / (2.0 * eps);
            worst = worst.max(relative_error(fd, analytic[i].data()[j]));
        }
    }
    Ok(worst)
}
