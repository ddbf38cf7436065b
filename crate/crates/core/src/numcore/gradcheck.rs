use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Gradients with magnitude below this are compared absolutely.
const REL_FLOOR: f64 = 1e-2;

/// Largest relative error between the analytic gradient of `f` and central
/// finite differences, over every entry of every input (or an evenly strided
/// subset of at most `max_entries` per input).
pub fn max_relative_error<F>(inputs: &[Tensor], f: F, max_entries: usize) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let eval = |xs: &[Tensor]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = xs.iter().map(|x| tape.param(x.clone())).collect();
        let out = f(&tape, &vars)?.value();
        if !out.is_scalar() {
            return Err(Error::Contract("gradient check needs a scalar".into()));
        }
        Ok(out.item())
    };

    let tape = Tape::new();
    let vars: Vec<Var<'_>> = inputs.iter().map(|x| tape.param(x.clone())).collect();
    let loss = f(&tape, &vars)?;
    let grads = tape.backward(loss)?;

    let mut worst = 0.0f64;
    let mut work = inputs.to_vec();
    for (k, var) in vars.iter().enumerate() {
        let analytic = grads.wrt(*var);
        let n = inputs[k].len();
        let stride = n.div_ceil(max_entries.max(1)).max(1);
        for i in (0..n).step_by(stride) {
            let orig = work[k].data()[i];
            work[k].data_mut()[i] = orig + FD_STEP;
            let up = eval(&work)?;
            work[k].data_mut()[i] = orig - FD_STEP;
            let down = eval(&work)?;
            work[k].data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            let a = analytic.data()[i];
            let denom = a.abs().max(numeric.abs()).max(REL_FLOOR);
            worst = worst.max((a - numeric).abs() / denom);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn random_three_layer_mlp() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = Tensor::randn(&[4, 5], 0.0, 1.0, &mut rng);
        let inputs = vec![
            Tensor::glorot(5, 6, &mut rng),
            Tensor::randn(&[1, 6], 0.0, 0.1, &mut rng),
            Tensor::glorot(6, 6, &mut rng),
            Tensor::glorot(6, 2, &mut rng),
        ];
        let err = max_relative_error(
            &inputs,
            |tape, p| {
                let x = tape.constant(x.clone());
                let h = x.matmul(p[0])?.add_bias(p[1])?.relu();
                let h = h.matmul(p[2])?.sigmoid();
                let y = h.matmul(p[3])?;
                Ok(y.mul(y)?.mean())
            },
            usize::MAX,
        )
        .unwrap();
        assert!(err < 1e-4, "max relative error {err}");
    }
}
