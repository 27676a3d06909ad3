//! Central finite-difference gradient checking.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::ndcore::tape::{Tape, Var};
use crate::ndcore::tensor::Tensor;

pub const ABS_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Per input: `max |analytic - numeric| / max(max |analytic|, max |numeric|, ABS_FLOOR)`.
    pub rel_errors: Vec<f64>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.rel_errors.iter().copied().fold(0.0, f64::max)
    }
}

/// Compare backward() against central differences with step `h`.
///
/// The (possibly tensor-valued) output of `build` is contracted with a fixed
/// random projection so every Jacobian row contributes to the check.
pub fn check<F>(inputs: &[Tensor<f64>], h: f64, seed: u64, build: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<'_, f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::<f64>::new();
    let leaves: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = build(&mut tape, &leaves)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let proj = Tensor::from_fn(tape.shape(out).to_vec(), |_| rng.random_range(-1.0..1.0));
    let projected = {
        let r = tape.constant(proj.clone());
        let prod = tape.mul(out, r)?;
        tape.sum(prod)
    };
    let grads = tape.backward(projected)?;

    let objective = |vals: &[Tensor<f64>]| -> Result<f64> {
        let mut t = Tape::<f64>::new().no_grad();
        let vars: Vec<Var> = vals.iter().map(|v| t.constant(v.clone())).collect();
        let o = build(&mut t, &vars)?;
        Ok(t.value(o).data().iter().zip(proj.data()).map(|(a, b)| a * b).sum())
    };

    let mut rel_errors = Vec::with_capacity(inputs.len());
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (i, leaf) in leaves.iter().enumerate() {
        let analytic = grads
            .wrt(*leaf)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(inputs[i].shape().to_vec()));
        let mut max_diff = 0.0f64;
        let mut max_mag = 0.0f64;
        for j in 0..inputs[i].len() {
            let orig = work[i].data()[j];
            work[i].data_mut()[j] = orig + h;
            let plus = objective(&work)?;
            work[i].data_mut()[j] = orig - h;
            let minus = objective(&work)?;
            work[i].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic.data()[j];
            max_diff = max_diff.max((a - numeric).abs());
            max_mag = max_mag.max(a.abs()).max(numeric.abs());
        }
        // Gradients that vanish analytically (e.g. attention key biases)
        // are compared absolutely below the floor.
        rel_errors.push(max_diff / max_mag.max(ABS_FLOOR));
    }
    Ok(GradCheckReport { rel_errors })
}
