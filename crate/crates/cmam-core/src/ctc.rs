//! Connectionist temporal classification: log-space forward/backward loss,
//! an enumeration oracle for testing, and greedy best-path decoding.
//!
//! Class 0 is the blank; labels use indices `1..=V`.

use std::fmt;

use crate::tensor::{Tape, TensorError, Var};

#[derive(Debug, Clone, PartialEq)]
pub enum CtcError {
    /// The label cannot be emitted in the given number of timesteps.
    Infeasible { time_steps: usize, needed: usize },
    /// A label index is 0 (reserved for blank) or out of vocabulary.
    BadLabel { index: usize, classes: usize },
    /// Brute-force enumeration would exceed the configured cap.
    SearchSpace { size: f64 },
    Tensor(TensorError),
}

impl fmt::Display for CtcError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CtcError::Infeasible { time_steps, needed } => write!(
                f,
                "label needs at least {needed} timesteps but logits provide {time_steps}"
            ),
            CtcError::BadLabel { index, classes } => {
                write!(f, "label index {index} invalid for {classes} classes (0 is blank)")
            }
            CtcError::SearchSpace { size } => {
                write!(f, "brute-force search space of {size} paths exceeds the cap")
            }
            CtcError::Tensor(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for CtcError {}

impl From<TensorError> for CtcError {
    fn from(e: TensorError) -> Self {
        CtcError::Tensor(e)
    }
}

/// Minimum number of timesteps that can emit `label`: its length plus one
/// blank between each adjacent duplicate pair.
pub fn min_time_steps(label: &[usize]) -> usize {
    let repeats = label.windows(2).filter(|w| w[0] == w[1]).count();
    label.len() + repeats
}

fn validate_label(label: &[usize], classes: usize) -> Result<(), CtcError> {
    for &l in label {
        if l == 0 || l >= classes {
            return Err(CtcError::BadLabel { index: l, classes });
        }
    }
    Ok(())
}

const NEG_INF: f64 = f64::NEG_INFINITY;

fn logsumexp2(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == NEG_INF {
        NEG_INF
    } else {
        m + ((a - m).exp() + (b - m).exp()).ln()
    }
}

/// Blank-interleaved state classes: even states are blank, odd states are
/// the label characters.
fn state_class(label: &[usize], s: usize) -> usize {
    if s % 2 == 0 {
        0
    } else {
        label[(s - 1) / 2]
    }
}

/// Whether a skip transition `s-2 -> s` is allowed: only into a character
/// state that differs from the character two states back.
fn skip_allowed(label: &[usize], s: usize) -> bool {
    s >= 2 && s % 2 == 1 && state_class(label, s) != state_class(label, s - 2)
}

/// Alpha/beta recursions over log-probabilities `logp[t*classes + k]`.
/// Returns (total log-probability, gradient of -log p w.r.t. logp).
fn forward_backward(
    logp: &[f64],
    time_steps: usize,
    classes: usize,
    label: &[usize],
) -> (f64, Vec<f64>) {
    let states = 2 * label.len() + 1;
    let lp = |t: usize, k: usize| logp[t * classes + k];

    let mut alpha = vec![NEG_INF; time_steps * states];
    alpha[0] = lp(0, 0);
    if states > 1 {
        alpha[1] = lp(0, state_class(label, 1));
    }
    for t in 1..time_steps {
        for s in 0..states {
            let mut best = alpha[(t - 1) * states + s];
            if s >= 1 {
                best = logsumexp2(best, alpha[(t - 1) * states + s - 1]);
            }
            if skip_allowed(label, s) {
                best = logsumexp2(best, alpha[(t - 1) * states + s - 2]);
            }
            alpha[t * states + s] = best + lp(t, state_class(label, s));
        }
    }
    let last = (time_steps - 1) * states;
    let total = if states > 1 {
        logsumexp2(alpha[last + states - 1], alpha[last + states - 2])
    } else {
        alpha[last + states - 1]
    };

    // beta excludes the emission at its own timestep
    let mut beta = vec![NEG_INF; time_steps * states];
    beta[(time_steps - 1) * states + states - 1] = 0.0;
    if states > 1 {
        beta[(time_steps - 1) * states + states - 2] = 0.0;
    }
    for t in (0..time_steps - 1).rev() {
        for s in 0..states {
            let mut acc = beta[(t + 1) * states + s] + lp(t + 1, state_class(label, s));
            if s + 1 < states {
                acc = logsumexp2(
                    acc,
                    beta[(t + 1) * states + s + 1] + lp(t + 1, state_class(label, s + 1)),
                );
            }
            if s + 2 < states && skip_allowed(label, s + 2) {
                acc = logsumexp2(
                    acc,
                    beta[(t + 1) * states + s + 2] + lp(t + 1, state_class(label, s + 2)),
                );
            }
            beta[t * states + s] = acc;
        }
    }

    // d(-log p)/d logp[t,k] = -sum_{s: class(s)=k} exp(alpha + beta - total)
    let mut grad = vec![0.0; time_steps * classes];
    for t in 0..time_steps {
        let mut occ = vec![NEG_INF; classes];
        for s in 0..states {
            let k = state_class(label, s);
            let ab = alpha[t * states + s] + beta[t * states + s];
            occ[k] = logsumexp2(occ[k], ab);
        }
        for k in 0..classes {
            if occ[k] > NEG_INF {
                grad[t * classes + k] = -(occ[k] - total).exp();
            }
        }
    }
    (total, grad)
}

/// Negative log-likelihood of `label` under per-timestep logits
/// `[T x (V+1)]`, differentiable through the tape. The logits are
/// log-softmaxed internally.
pub fn ctc_loss(tape: &Tape, logits: Var, label: &[usize]) -> Result<Var, CtcError> {
    let shape = tape.shape(logits);
    if shape.len() != 2 {
        return Err(CtcError::Tensor(TensorError::ShapeMismatch {
            op: "ctc_loss",
            detail: format!("expected T x classes logits, got {shape:?}"),
        }));
    }
    let (time_steps, classes) = (shape[0], shape[1]);
    validate_label(label, classes)?;
    let needed = min_time_steps(label);
    if time_steps < needed {
        return Err(CtcError::Infeasible { time_steps, needed });
    }

    let logp = tape.log_softmax_rows(logits)?;
    let (total, grad) = {
        let values = tape.values(logp);
        forward_backward(&values, time_steps, classes, label)
    };
    let loss = tape.opaque_scalar(logp, -total, grad)?;
    Ok(loss)
}

/// Loss value without a tape, for oracles and decoding-side checks.
pub fn ctc_loss_value(
    logits: &[f64],
    time_steps: usize,
    classes: usize,
    label: &[usize],
) -> Result<f64, CtcError> {
    validate_label(label, classes)?;
    let needed = min_time_steps(label);
    if time_steps < needed {
        return Err(CtcError::Infeasible { time_steps, needed });
    }
    let logp = log_softmax(logits, time_steps, classes);
    let (total, _) = forward_backward(&logp, time_steps, classes, label);
    Ok(-total)
}

fn log_softmax(logits: &[f64], time_steps: usize, classes: usize) -> Vec<f64> {
    let mut out = vec![0.0; logits.len()];
    for t in 0..time_steps {
        let row = &logits[t * classes..(t + 1) * classes];
        let m = row.iter().cloned().fold(NEG_INF, f64::max);
        let z: f64 = row.iter().map(|v| (v - m).exp()).sum();
        let lse = m + z.ln();
        for (o, v) in out[t * classes..(t + 1) * classes].iter_mut().zip(row) {
            *o = v - lse;
        }
    }
    out
}

/// Collapse rule shared by decoding and the brute-force oracle: remove
/// adjacent repeats, then drop blanks.
pub fn collapse(path: &[usize]) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = usize::MAX;
    for &p in path {
        if p != prev && p != 0 {
            out.push(p);
        }
        prev = p;
    }
    out
}

/// Enumerates every length-T path over the classes and sums the
/// probabilities of the ones that collapse to `label`. Testing oracle for
/// [`ctc_loss`]; refuses search spaces above 10^7 paths.
pub fn ctc_brute_force(
    logits: &[f64],
    time_steps: usize,
    classes: usize,
    label: &[usize],
) -> Result<f64, CtcError> {
    validate_label(label, classes)?;
    let size = (classes as f64).powi(time_steps as i32);
    if size > 1e7 {
        return Err(CtcError::SearchSpace { size });
    }
    let logp = log_softmax(logits, time_steps, classes);
    let probs: Vec<f64> = logp.iter().map(|v| v.exp()).collect();

    let mut total = 0.0f64;
    let mut path = vec![0usize; time_steps];
    let count = (classes as u64).pow(time_steps as u32);
    for mut code in 0..count {
        for slot in path.iter_mut() {
            *slot = (code % classes as u64) as usize;
            code /= classes as u64;
        }
        if collapse(&path) == label {
            let mut p = 1.0;
            for (t, &k) in path.iter().enumerate() {
                p *= probs[t * classes + k];
            }
            total += p;
        }
    }
    if total == 0.0 {
        return Err(CtcError::Infeasible {
            time_steps,
            needed: min_time_steps(label),
        });
    }
    Ok(-total.ln())
}

/// Best-path decoding: per-timestep argmax (ties to the lower index),
/// collapse repeats, drop blanks.
pub fn greedy_decode(logits: &[f64], time_steps: usize, classes: usize) -> Vec<usize> {
    let mut path = Vec::with_capacity(time_steps);
    for t in 0..time_steps {
        let row = &logits[t * classes..(t + 1) * classes];
        let mut best = 0usize;
        for (k, v) in row.iter().enumerate() {
            if *v > row[best] {
                best = k;
            }
        }
        path.push(best);
    }
    collapse(&path)
}

/// Tape-free softmax probabilities of one timestep, for reporting.
pub fn row_argmax(row: &[f64]) -> usize {
    let mut best = 0usize;
    for (k, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = k;
        }
    }
    best
}

#[allow(dead_code)]
fn _assert_send() {
    fn is_send<T: Send>() {}
    is_send::<CtcError>();
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::gradcheck;
    use crate::params::TensorData;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_step_single_label() {
        let logits = vec![0.3, 1.7]; // classes: blank, a
        let loss = ctc_loss_value(&logits, 1, 2, &[1]).unwrap();
        let logp = log_softmax(&logits, 1, 2);
        assert!((loss + logp[1]).abs() < 1e-12);
    }

    #[test]
    fn two_steps_one_label_enumerates_three_paths() {
        let logits = vec![0.2, -0.4, 1.1, 0.9, -0.3, 0.05];
        let classes = 3;
        let logp = log_softmax(&logits, 2, classes);
        let p = |t: usize, k: usize| logp[t * classes + k].exp();
        let expect = p(0, 1) * p(1, 1) + p(0, 1) * p(1, 0) + p(0, 0) * p(1, 1);
        let loss = ctc_loss_value(&logits, 2, classes, &[1]).unwrap();
        assert!((loss + expect.ln()).abs() < 1e-12);
    }

    #[test]
    fn empty_label_is_all_blank_path() {
        let logits = vec![0.6, -0.2, 1.4, 0.3, 0.9, -1.0];
        let classes = 3;
        let logp = log_softmax(&logits, 2, classes);
        let loss = ctc_loss_value(&logits, 2, classes, &[]).unwrap();
        let expect = -(logp[0] + logp[classes]);
        assert!((loss - expect).abs() < 1e-12);
    }

    #[test]
    fn uniform_single_step_two_classes() {
        let logits = vec![0.0, 0.0];
        let loss = ctc_loss_value(&logits, 1, 2, &[1]).unwrap();
        assert!((loss - 0.5f64.recip().ln()).abs() < 1e-12);
    }

    #[test]
    fn infeasible_signaled_by_both_routes() {
        let logits = vec![0.1; 2 * 3];
        let label = vec![1, 1, 2]; // needs 3 + 1 = 4 steps
        assert!(matches!(
            ctc_loss_value(&logits, 2, 3, &label),
            Err(CtcError::Infeasible { needed: 4, .. })
        ));
        assert!(matches!(
            ctc_brute_force(&logits, 2, 3, &label),
            Err(CtcError::Infeasible { .. })
        ));
    }

    #[test]
    fn label_index_zero_rejected() {
        let logits = vec![0.0; 4];
        assert!(matches!(
            ctc_loss_value(&logits, 2, 2, &[0]),
            Err(CtcError::BadLabel { .. })
        ));
    }

    #[test]
    fn matches_brute_force_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(71);
        for _ in 0..60 {
            let t = rng.gen_range(1..=5);
            let v = rng.gen_range(1..=3);
            let classes = v + 1;
            let label_len = rng.gen_range(0..=3usize.min(t));
            let label: Vec<usize> = (0..label_len).map(|_| rng.gen_range(1..=v)).collect();
            let logits: Vec<f64> = (0..t * classes).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let a = ctc_loss_value(&logits, t, classes, &label);
            let b = ctc_brute_force(&logits, t, classes, &label);
            match (a, b) {
                (Ok(x), Ok(y)) => assert!((x - y).abs() <= 1e-8, "{x} vs {y}"),
                (Err(CtcError::Infeasible { .. }), Err(CtcError::Infeasible { .. })) => {}
                (a, b) => panic!("routes disagree: {a:?} vs {b:?}"),
            }
        }
    }

    #[test]
    fn loss_gradcheck_t4_v3() {
        let mut rng = ChaCha8Rng::seed_from_u64(73);
        let label = vec![2, 1, 2];
        let point = [TensorData::uniform(&[4, 4], 1.5, &mut rng)];
        let err = gradcheck(
            |tape, vars| {
                ctc_loss(tape, vars[0], &label).map_err(|e| match e {
                    CtcError::Tensor(t) => t,
                    other => TensorError::Domain {
                        op: "ctc_loss",
                        detail: other.to_string(),
                    },
                })
            },
            &point,
            1e-5,
        )
        .unwrap();
        assert!(err <= 1e-5, "max rel err {err}");
    }

    #[test]
    fn shift_invariance_per_timestep() {
        let mut rng = ChaCha8Rng::seed_from_u64(79);
        let t = 5;
        let classes = 4;
        let label = vec![1, 3];
        let logits: Vec<f64> = (0..t * classes).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let base = ctc_loss_value(&logits, t, classes, &label).unwrap();
        let mut shifted = logits.clone();
        for v in shifted[2 * classes..3 * classes].iter_mut() {
            *v += 13.7;
        }
        let moved = ctc_loss_value(&shifted, t, classes, &label).unwrap();
        assert!((base - moved).abs() <= 1e-10);
    }

    #[test]
    fn greedy_collapses_repeats_and_blanks() {
        // argmax path: blank, a, a, blank, b
        let logits = vec![
            9.0, 0.0, 0.0, //
            0.0, 9.0, 0.0, //
            0.0, 9.0, 0.0, //
            9.0, 0.0, 0.0, //
            0.0, 0.0, 9.0,
        ];
        assert_eq!(greedy_decode(&logits, 5, 3), vec![1, 2]);
    }

    #[test]
    fn greedy_all_blank_is_empty() {
        let logits = vec![5.0, 0.0, 5.0, 0.0];
        assert_eq!(greedy_decode(&logits, 2, 2), Vec::<usize>::new());
    }

    #[test]
    fn greedy_blank_separates_repeats() {
        // argmax path: a, blank, a
        let logits = vec![0.0, 9.0, 9.0, 0.0, 0.0, 9.0];
        assert_eq!(greedy_decode(&logits, 3, 2), vec![1, 1]);
    }

    #[test]
    fn greedy_ties_go_to_lower_index() {
        let logits = vec![1.0, 1.0, 1.0];
        assert_eq!(greedy_decode(&logits, 1, 3), Vec::<usize>::new());
    }
}
