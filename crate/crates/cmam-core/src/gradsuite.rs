//! The full gradient-fidelity suite: every registered op against central
//! differences at its stated tolerance, from elementwise primitives up to
//! whole-model composites. Shared by the CLI `gradcheck` subcommand and
//! the acceptance tests.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::ctc::{ctc_loss, CtcError};
use crate::gradcheck::{gradcheck, gradcheck_sampled, NOISE_FLOOR};
use crate::memory::{mam_step, TapeMemoryState};
use crate::model::{
    backward_sweep, cmam_forward, crnn_forward, default_cmam, forward_sweep, init_cmam_params,
    init_crnn_params, output_project, run_refinements, tiny_cmam, CrnnConfig,
};
use crate::nn::{conv2d, linear, lstm_step, maxpool2d, LstmDims};
use crate::params::{Binder, ParamStore, TensorData};
use crate::tensor::{Result as TResult, Tape, TensorError, UnaryFn, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Profile {
    Tiny,
    Default,
}

impl Profile {
    pub fn parse(name: &str) -> Option<Profile> {
        match name {
            "tiny" => Some(Profile::Tiny),
            "default" => Some(Profile::Default),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: String,
    pub max_rel_err: f64,
    pub tolerance: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= self.tolerance
    }
}

#[derive(Debug, Clone, Default)]
pub struct SuiteReport {
    pub checks: Vec<CheckResult>,
}

impl SuiteReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed())
    }
}

const STEP: f64 = 1e-5;

fn sum_of_squares(tape: &Tape, x: Var) -> TResult<Var> {
    let sq = tape.mul(x, x)?;
    Ok(tape.sum(sq))
}

fn push<F>(report: &mut SuiteReport, name: &str, tolerance: f64, run: F)
where
    F: FnOnce() -> TResult<f64>,
{
    let max_rel_err = run().unwrap_or(f64::INFINITY);
    report.checks.push(CheckResult { name: name.to_string(), max_rel_err, tolerance });
}

/// Runs every check and returns the per-check worst errors. All inputs are
/// drawn from fixed seeds so reruns are bit-identical.
pub fn run_suite(profile: Profile) -> SuiteReport {
    let mut report = SuiteReport::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0xC0FFEE);

    // ---- elementwise and matmul primitives: 1e-6 ----
    push(&mut report, "matmul", 1e-6, || {
        let mut worst = 0.0f64;
        for _ in 0..5 {
            let point = [
                TensorData::uniform(&[3, 4], 1.0, &mut rng),
                TensorData::uniform(&[4, 2], 1.0, &mut rng),
            ];
            let err = gradcheck(
                |tape, v| {
                    let c = tape.matmul(v[0], v[1])?;
                    sum_of_squares(tape, c)
                },
                &point,
                STEP,
            )?;
            worst = worst.max(err);
        }
        Ok(worst)
    });

    for (name, f) in [
        ("sigmoid", UnaryFn::Sigmoid),
        ("tanh", UnaryFn::Tanh),
        ("softplus", UnaryFn::Softplus),
        ("oneplus", UnaryFn::Oneplus),
        ("exp", UnaryFn::Exp),
    ] {
        push(&mut report, name, 1e-6, || {
            let mut worst = 0.0f64;
            for _ in 0..20 {
                let point = [TensorData::uniform(&[5], 2.0, &mut rng)];
                let err = gradcheck(
                    |tape, v| {
                        let y = tape.unary(v[0], f)?;
                        sum_of_squares(tape, y)
                    },
                    &point,
                    STEP,
                )?;
                worst = worst.max(err);
            }
            Ok(worst)
        });
    }
    push(&mut report, "relu", 1e-6, || {
        // keep points away from the kink at 0
        let mut worst = 0.0f64;
        for _ in 0..20 {
            let vals: Vec<f64> = (0..5)
                .map(|_| {
                    let v: f64 = rng.gen_range(0.2..2.0);
                    if rng.gen_bool(0.5) {
                        v
                    } else {
                        -v
                    }
                })
                .collect();
            let point = [TensorData::new(vec![5], vals)];
            let err = gradcheck(
                |tape, v| {
                    let y = tape.relu(v[0]);
                    sum_of_squares(tape, y)
                },
                &point,
                STEP,
            )?;
            worst = worst.max(err);
        }
        Ok(worst)
    });
    push(&mut report, "log", 1e-6, || {
        let mut worst = 0.0f64;
        for _ in 0..20 {
            let vals: Vec<f64> = (0..5).map(|_| rng.gen_range(0.2..3.0)).collect();
            let point = [TensorData::new(vec![5], vals)];
            let err = gradcheck(
                |tape, v| {
                    let y = tape.unary(v[0], UnaryFn::Log)?;
                    sum_of_squares(tape, y)
                },
                &point,
                STEP,
            )?;
            worst = worst.max(err);
        }
        Ok(worst)
    });

    push(&mut report, "softmax_rows", 1e-6, || {
        let point = [TensorData::uniform(&[3, 5], 2.0, &mut rng)];
        gradcheck(
            |tape, v| {
                let y = tape.softmax_rows(v[0])?;
                let w = tape.affine(y, 1.0, 0.3);
                let sq = tape.mul(w, y)?;
                Ok(tape.sum(sq))
            },
            &point,
            STEP,
        )
    });
    push(&mut report, "log_softmax_rows", 1e-6, || {
        let point = [TensorData::uniform(&[3, 5], 2.0, &mut rng)];
        gradcheck(
            |tape, v| {
                let y = tape.log_softmax_rows(v[0])?;
                sum_of_squares(tape, y)
            },
            &point,
            STEP,
        )
    });
    push(&mut report, "concat_slice_gather", 1e-6, || {
        let point = [
            TensorData::uniform(&[4], 1.0, &mut rng),
            TensorData::uniform(&[3], 1.0, &mut rng),
        ];
        gradcheck(
            |tape, v| {
                let joined = tape.concat(&[v[0], v[1]], 0)?;
                let mid = tape.slice(joined, 2, 4)?;
                let picked = tape.gather(joined, &[0, 6, 3, 3])?;
                let both = tape.concat(&[mid, picked], 0)?;
                sum_of_squares(tape, both)
            },
            &point,
            STEP,
        )
    });
    push(&mut report, "outer_vecmat_scale", 1e-6, || {
        let point = [
            TensorData::uniform(&[4], 1.0, &mut rng),
            TensorData::uniform(&[3], 1.0, &mut rng),
            TensorData::uniform(&[1], 1.0, &mut rng),
        ];
        gradcheck(
            |tape, v| {
                let o = tape.outer(v[0], v[1])?;
                let scaled = tape.scale_by(o, v[2])?;
                let back = tape.vecmat(v[0], scaled)?;
                sum_of_squares(tape, back)
            },
            &point,
            STEP,
        )
    });
    push(&mut report, "cosine_rows", 1e-6, || {
        let point = [
            TensorData::uniform(&[4, 6], 1.0, &mut rng),
            TensorData::uniform(&[6], 1.0, &mut rng),
        ];
        gradcheck(
            |tape, v| {
                let sims = tape.cosine_rows(v[0], v[1])?;
                sum_of_squares(tape, sims)
            },
            &point,
            STEP,
        )
    });
    push(&mut report, "linear", 1e-6, || {
        let point = [
            TensorData::uniform(&[4, 3], 1.0, &mut rng),
            TensorData::uniform(&[4], 1.0, &mut rng),
            TensorData::uniform(&[3], 1.0, &mut rng),
        ];
        gradcheck(
            |tape, v| {
                let y = linear(tape, v[0], v[1], v[2])?;
                sum_of_squares(tape, y)
            },
            &point,
            STEP,
        )
    });

    // ---- layer composites ----
    push(&mut report, "lstm_3step", 1e-5, || {
        let dims = LstmDims { input: 4, hidden: 5 };
        let [rows, cols] = dims.weight_shape();
        let point = [
            TensorData::uniform(&[rows, cols], 0.5, &mut rng),
            TensorData::uniform(&[rows], 0.5, &mut rng),
            TensorData::uniform(&[4], 1.0, &mut rng),
            TensorData::uniform(&[4], 1.0, &mut rng),
            TensorData::uniform(&[4], 1.0, &mut rng),
        ];
        gradcheck(
            |tape, v| {
                let mut h = tape.zeros(&[5]);
                let mut c = tape.zeros(&[5]);
                for x in &v[2..5] {
                    let out = lstm_step(tape, dims, v[0], v[1], *x, h, c)?;
                    h = out.h;
                    c = out.c;
                }
                sum_of_squares(tape, h)
            },
            &point,
            STEP,
        )
    });
    push(&mut report, "conv2d", 1e-5, || {
        let point = [
            TensorData::uniform(&[2, 1, 3, 3], 0.8, &mut rng),
            TensorData::uniform(&[2], 0.5, &mut rng),
            TensorData::uniform(&[1, 5, 5], 1.0, &mut rng),
        ];
        gradcheck(
            |tape, v| {
                let y = conv2d(tape, v[0], v[1], v[2], (1, 1), (1, 1))?;
                sum_of_squares(tape, y)
            },
            &point,
            STEP,
        )
    });
    push(&mut report, "maxpool2d", 1e-6, || {
        let vals: Vec<f64> = (0..36).map(|i| (i as f64) * 0.613 + ((i * 11) % 7) as f64).collect();
        let point = [TensorData::new(vec![1, 6, 6], vals)];
        gradcheck(
            |tape, v| {
                let y = maxpool2d(tape, (2, 2), (2, 2), v[0])?;
                sum_of_squares(tape, y)
            },
            &point,
            STEP,
        )
    });
    push(&mut report, "ctc_loss", 1e-5, || {
        let label = vec![2, 1, 1];
        let point = [TensorData::uniform(&[5, 4], 1.5, &mut rng)];
        gradcheck(
            |tape, v| {
                ctc_loss(tape, v[0], &label).map_err(|e| match e {
                    CtcError::Tensor(t) => t,
                    other => TensorError::Domain { op: "ctc_loss", detail: other.to_string() },
                })
            },
            &point,
            STEP,
        )
    });

    // ---- memory and model composites at the profile size ----
    let (cfg, stack) = match profile {
        Profile::Tiny => tiny_cmam(1, 3),
        Profile::Default => default_cmam(1, 3),
    };

    push(&mut report, "mam_step", 1e-4, || {
        let mem = cfg.mem;
        let simplex = {
            let mut v: Vec<f64> = (0..mem.slots).map(|_| rng.gen_range(0.0..1.0)).collect();
            let s: f64 = v.iter().sum();
            v.iter_mut().for_each(|x| *x /= s);
            v
        };
        let point = [
            TensorData::uniform(&[mem.interface_width()], 1.0, &mut rng),
            TensorData::uniform(&[mem.slots, mem.width], 1.0, &mut rng),
            TensorData::new(
                vec![mem.slots],
                (0..mem.slots).map(|i| 0.05 + 0.9 * i as f64 / mem.slots as f64).collect(),
            ),
            TensorData::new(vec![mem.slots], simplex),
        ];
        gradcheck(
            |tape, v| {
                let state = TapeMemoryState {
                    memory: v[1],
                    usage: v[2],
                    read_weights: vec![v[3]; mem.read_heads],
                    write_weight: v[3],
                    read_values: (0..mem.read_heads).map(|_| tape.zeros(&[mem.width])).collect(),
                };
                let (next, readout) = mam_step(tape, mem, &state, v[0])?;
                let a = sum_of_squares(tape, readout)?;
                let b = sum_of_squares(tape, next.memory)?;
                tape.add(a, b)
            },
            &point,
            STEP,
        )
    });

    let check_named_model = |report: &mut SuiteReport,
                             name: &str,
                             store: &ParamStore,
                             per_tensor: usize,
                             f: &dyn Fn(&Tape, &Binder) -> TResult<Var>| {
        let names: Vec<String> = store.names().cloned().collect();
        let point: Vec<TensorData> = store.iter().map(|(_, t)| t.clone()).collect();
        let run = || {
            gradcheck_sampled(
                |tape, vars| {
                    let bind =
                        Binder::from_vars(tape, names.iter().cloned().zip(vars.iter().copied()));
                    f(tape, &bind)
                },
                &point,
                STEP,
                per_tensor,
                gradsuite_seed(name),
                NOISE_FLOOR,
            )
        };
        let max_rel_err = run().unwrap_or(f64::INFINITY);
        report
            .checks
            .push(CheckResult { name: name.to_string(), max_rel_err, tolerance: 1e-4 });
    };

    // sweeps and heads on a small sequence config
    let seq_cfg = {
        let mut c = cfg;
        c.refinements = 1;
        c
    };
    let seq_store = init_cmam_params(&seq_cfg, &stack, 0xA11CE);
    let t_steps = 3;
    let mut xin_rng = ChaCha8Rng::seed_from_u64(0xBEE);
    let xs_data: Vec<Vec<f64>> = (0..t_steps)
        .map(|_| (0..seq_cfg.feature).map(|_| xin_rng.gen_range(-1.0..1.0)).collect())
        .collect();

    {
        let xs_data = xs_data.clone();
        let seq_cfg2 = seq_cfg;
        check_named_model(
            &mut report,
            "backward_sweep_t3",
            &seq_store,
            30,
            &move |tape, bind| {
                let xs: Vec<Var> = xs_data
                    .iter()
                    .map(|v| tape.leaf(&[seq_cfg2.feature], v.clone()))
                    .collect::<TResult<_>>()?;
                let outs = backward_sweep(tape, bind, &seq_cfg2, &xs)?;
                let cat = tape.concat(&outs, 0)?;
                sum_of_squares(tape, cat)
            },
        );
    }
    {
        let xs_data = xs_data.clone();
        let seq_cfg2 = seq_cfg;
        check_named_model(
            &mut report,
            "forward_sweep_t3",
            &seq_store,
            30,
            &move |tape, bind| {
                let xs: Vec<Var> = xs_data
                    .iter()
                    .map(|v| tape.leaf(&[seq_cfg2.feature], v.clone()))
                    .collect::<TResult<_>>()?;
                let obs = backward_sweep(tape, bind, &seq_cfg2, &xs)?;
                let fresh = crate::memory::MemoryState::fresh(
                    seq_cfg2.mem,
                    vec![vec![0.0; seq_cfg2.mem.width]; seq_cfg2.mem.read_heads],
                );
                let mut state = TapeMemoryState::from_values(tape, seq_cfg2.mem, &fresh)?;
                state.read_values = (0..seq_cfg2.mem.read_heads)
                    .map(|j| bind.var(&format!("mem.r0.{j}")))
                    .collect();
                let out = forward_sweep(tape, bind, &seq_cfg2, &xs, &obs, state, None)?;
                let ys = tape.concat(&out.short_term, 0)?;
                let rs = tape.concat(&out.readouts, 0)?;
                let a = sum_of_squares(tape, ys)?;
                let b = sum_of_squares(tape, rs)?;
                tape.add(a, b)
            },
        );
    }
    {
        let xs_data = xs_data.clone();
        let seq_cfg2 = seq_cfg;
        check_named_model(
            &mut report,
            "output_project",
            &seq_store,
            30,
            &move |tape, bind| {
                let xs: Vec<Var> = xs_data
                    .iter()
                    .map(|v| tape.leaf(&[seq_cfg2.feature], v.clone()))
                    .collect::<TResult<_>>()?;
                let (ys, rs, _) = run_refinements(tape, bind, &seq_cfg2, &xs)?;
                let logits = output_project(tape, bind, &seq_cfg2, &ys, &rs)?;
                sum_of_squares(tape, logits)
            },
        );
    }

    // full models on an image sized for T = 3 columns
    let image_w = 12;
    let mut img_rng = ChaCha8Rng::seed_from_u64(0xD1CE);
    let image: Vec<f64> = (0..32 * image_w).map(|_| img_rng.gen_range(0.0..1.0)).collect();
    let label = vec![1, 2];

    {
        let image = image.clone();
        let label = label.clone();
        let cfg2 = seq_cfg;
        let stack2 = stack.clone();
        let full_store = init_cmam_params(&cfg2, &stack2, 0xFEED);
        check_named_model(
            &mut report,
            "cmam_full_T3_L1",
            &full_store,
            12,
            &move |tape, bind| {
                let img = tape.leaf(&[1, 32, image_w], image.clone())?;
                let logits = cmam_forward(tape, bind, &cfg2, &stack2, img)?;
                ctc_loss(tape, logits, &label).map_err(|e| match e {
                    CtcError::Tensor(t) => t,
                    other => TensorError::Domain { op: "ctc_loss", detail: other.to_string() },
                })
            },
        );
    }
    {
        let crnn_cfg = CrnnConfig {
            feature: cfg.feature,
            hidden: cfg.hidden.min(24),
            layers: 2,
            vocab: cfg.vocab,
        };
        let crnn_store = init_crnn_params(&crnn_cfg, &stack, 0xFACE);
        let image = image.clone();
        let label = label.clone();
        let stack2 = stack.clone();
        check_named_model(
            &mut report,
            "crnn_full_T3",
            &crnn_store,
            12,
            &move |tape, bind| {
                let img = tape.leaf(&[1, 32, image_w], image.clone())?;
                let logits = crnn_forward(tape, bind, &crnn_cfg, &stack2, img)?;
                ctc_loss(tape, logits, &label).map_err(|e| match e {
                    CtcError::Tensor(t) => t,
                    other => TensorError::Domain { op: "ctc_loss", detail: other.to_string() },
                })
            },
        );
    }

    report
}

/// Stable per-check seed so sampled coordinate sets do not shift between
/// runs.
fn gradsuite_seed(name: &str) -> u64 {
    let mut h = 0xcbf29ce484222325u64;
    for b in name.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}
