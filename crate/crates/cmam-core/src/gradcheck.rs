//! Finite-difference verification of tape gradients.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::params::TensorData;
use crate::tensor::{Result, Tape, Var};

/// Relative error between an analytic and a numeric derivative.
fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

fn eval<F>(f: &F, point: &[TensorData]) -> Result<f64>
where
    F: Fn(&Tape, &[Var]) -> Result<Var>,
{
    let tape = Tape::new();
    let vars: Vec<Var> = point
        .iter()
        .map(|t| tape.leaf(&t.shape, t.values.clone()))
        .collect::<Result<_>>()?;
    let loss = f(&tape, &vars)?;
    Ok(tape.value_scalar(loss))
}

fn analytic_grads<F>(f: &F, point: &[TensorData]) -> Result<Vec<Vec<f64>>>
where
    F: Fn(&Tape, &[Var]) -> Result<Var>,
{
    let tape = Tape::new();
    let vars: Vec<Var> = point
        .iter()
        .map(|t| tape.leaf(&t.shape, t.values.clone()))
        .collect::<Result<_>>()?;
    let loss = f(&tape, &vars)?;
    tape.backward(loss)?;
    Ok(vars.iter().map(|v| tape.grad(*v)).collect())
}

/// Compares the tape gradient of the scalar function `f` against central
/// differences `(f(p+h) - f(p-h)) / 2h` at every coordinate of `point`.
/// Returns the maximum relative error.
pub fn gradcheck<F>(f: F, point: &[TensorData], step: f64) -> Result<f64>
where
    F: Fn(&Tape, &[Var]) -> Result<Var>,
{
    let grads = analytic_grads(&f, point)?;
    let mut worst = 0.0f64;
    let mut probe: Vec<TensorData> = point.to_vec();
    for (ti, t) in point.iter().enumerate() {
        for ci in 0..t.numel() {
            let orig = t.values[ci];
            probe[ti].values[ci] = orig + step;
            let up = eval(&f, &probe)?;
            probe[ti].values[ci] = orig - step;
            let down = eval(&f, &probe)?;
            probe[ti].values[ci] = orig;
            let numeric = (up - down) / (2.0 * step);
            worst = worst.max(rel_err(grads[ti][ci], numeric));
        }
    }
    Ok(worst)
}

/// Central-difference noise floor used by the composite checks: with
/// `h = 1e-5` and losses of magnitude ~10, `(f(p+h) - f(p-h))` carries
/// cancellation noise around `ulp(f)/2h ~ 1e-10`, so differences below
/// this are not measurable and count as agreement.
pub const NOISE_FLOOR: f64 = 1e-9;

/// Same as [`gradcheck`] but probes at most `max_per_tensor` coordinates of
/// each tensor, sampled without replacement from a seeded stream, and
/// absolves differences below `absolute_floor`. Used for composites whose
/// full coordinate sweep would not fit the runtime budget and whose loss
/// magnitude puts the difference noise above the plain formula's floor.
pub fn gradcheck_sampled<F>(
    f: F,
    point: &[TensorData],
    step: f64,
    max_per_tensor: usize,
    seed: u64,
    absolute_floor: f64,
) -> Result<f64>
where
    F: Fn(&Tape, &[Var]) -> Result<Var>,
{
    let grads = analytic_grads(&f, point)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let mut probe: Vec<TensorData> = point.to_vec();
    for (ti, t) in point.iter().enumerate() {
        let n = t.numel();
        let mut coords: Vec<usize> = (0..n).collect();
        if n > max_per_tensor {
            coords.shuffle(&mut rng);
            coords.truncate(max_per_tensor);
            coords.sort_unstable();
        }
        for ci in coords {
            let orig = t.values[ci];
            probe[ti].values[ci] = orig + step;
            let up = eval(&f, &probe)?;
            probe[ti].values[ci] = orig - step;
            let down = eval(&f, &probe)?;
            probe[ti].values[ci] = orig;
            let numeric = (up - down) / (2.0 * step);
            let analytic = grads[ti][ci];
            if (analytic - numeric).abs() <= absolute_floor {
                continue;
            }
            worst = worst.max(rel_err(analytic, numeric));
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::UnaryFn;

    #[test]
    fn constant_function_has_zero_error() {
        let point = [TensorData::new(vec![3], vec![0.5, -1.0, 2.0])];
        let err = gradcheck(
            |tape, _| Ok(tape.scalar(4.2)),
            &point,
            1e-5,
        )
        .unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn sum_of_sigmoid_checks_tightly() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let point = [TensorData::uniform(&[6], 2.0, &mut rng)];
        let err = gradcheck(
            |tape, vars| {
                let y = tape.unary(vars[0], UnaryFn::Sigmoid)?;
                Ok(tape.sum(y))
            },
            &point,
            1e-5,
        )
        .unwrap();
        assert!(err <= 1e-7, "max rel err {err}");
    }

    #[test]
    fn matmul_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let point = [
            TensorData::uniform(&[3, 4], 1.0, &mut rng),
            TensorData::uniform(&[4, 2], 1.0, &mut rng),
        ];
        let err = gradcheck(
            |tape, vars| {
                let c = tape.matmul(vars[0], vars[1])?;
                let sq = tape.mul(c, c)?;
                Ok(tape.sum(sq))
            },
            &point,
            1e-5,
        )
        .unwrap();
        assert!(err <= 1e-6, "max rel err {err}");
    }

    #[test]
    fn tanh_gradient_at_random_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let point = [TensorData::uniform(&[4], 2.5, &mut rng)];
            let err = gradcheck(
                |tape, vars| {
                    let y = tape.tanh(vars[0]);
                    let w = tape.mul(y, y)?;
                    Ok(tape.sum(w))
                },
                &point,
                1e-5,
            )
            .unwrap();
            assert!(err <= 1e-6, "max rel err {err}");
        }
    }
}
