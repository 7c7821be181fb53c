//! Sequence models: the memory-augmented network with bidirectional
//! controllers and multi-pass refinement, and a CRNN (BiLSTM) baseline.
//! Both consume the CNN encoder's column features and emit per-timestep
//! logits over vocabulary plus blank.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::memory::{mam_step, MemoryConfig, MemoryState, TapeMemoryState};
use crate::nn::{init_lstm, linear, lstm_step, ConvStack, LstmDims};
use crate::params::{Binder, ParamStore};
use crate::tensor::{Result, Tape, TensorError, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CmamConfig {
    /// Width of the encoder features and of the short-term outputs; the
    /// refinement feedback requires these to be equal.
    pub feature: usize,
    pub hidden: usize,
    pub mem: MemoryConfig,
    /// Number of refinement steps L; the sequence is swept L+1 times.
    pub refinements: usize,
    pub vocab: usize,
}

impl CmamConfig {
    pub fn forward_dims(&self) -> LstmDims {
        LstmDims { input: self.feature + self.mem.readout_width(), hidden: self.hidden }
    }

    pub fn backward_dims(&self) -> LstmDims {
        LstmDims { input: self.feature, hidden: self.hidden }
    }

    pub fn classes(&self) -> usize {
        self.vocab + 1
    }
}

/// Per-run instrumentation of the refinement loop.
#[derive(Debug, Clone, Default)]
pub struct RefineTrace {
    pub forward_passes: usize,
    pub backward_passes: usize,
    /// Memory values observed when each forward pass starts.
    pub memory_entering_pass: Vec<Vec<f64>>,
    /// Memory values observed when each forward pass ends.
    pub memory_exiting_pass: Vec<Vec<f64>>,
    /// The sequence-input vector fed to the controllers at t = 0 of each
    /// pass (x at pass 0, the previous short-term outputs afterwards).
    pub first_step_inputs: Vec<Vec<f64>>,
    /// Forward-controller hidden values at the start of each pass.
    pub hidden_at_pass_start: Vec<Vec<f64>>,
}

pub fn init_cmam_params(cfg: &CmamConfig, stack: &ConvStack, seed: u64) -> ParamStore {
    assert_eq!(
        stack.feature_width, cfg.feature,
        "encoder projection must match the model feature width"
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    stack.init_params(&mut store, "cnn", &mut rng);
    init_lstm(&mut store, "fwd", cfg.forward_dims(), &mut rng);
    init_lstm(&mut store, "bwd", cfg.backward_dims(), &mut rng);

    let both = 2 * cfg.hidden;
    let xi_width = cfg.mem.interface_width();
    let scale = (1.0 / both as f64).sqrt();
    store.insert("wxi.w", crate::params::TensorData::uniform(&[xi_width, both], scale, &mut rng));
    store.insert("wxi.b", crate::params::TensorData::zeros(&[xi_width]));
    store.insert("ws.w", crate::params::TensorData::uniform(&[cfg.feature, both], scale, &mut rng));
    store.insert("ws.b", crate::params::TensorData::zeros(&[cfg.feature]));

    let wy_in = cfg.feature + cfg.mem.readout_width();
    let scale = (1.0 / wy_in as f64).sqrt();
    store.insert("wy.w", crate::params::TensorData::uniform(&[cfg.feature, wy_in], scale, &mut rng));
    store.insert("wy.b", crate::params::TensorData::zeros(&[cfg.feature]));

    let scale = (1.0 / cfg.feature as f64).sqrt();
    store.insert(
        "cls.w",
        crate::params::TensorData::uniform(&[cfg.classes(), cfg.feature], scale, &mut rng),
    );
    store.insert("cls.b", crate::params::TensorData::zeros(&[cfg.classes()]));

    for j in 0..cfg.mem.read_heads {
        store.insert(
            format!("mem.r0.{j}"),
            crate::params::TensorData::uniform(&[cfg.mem.width], 0.1, &mut rng),
        );
    }
    store
}

/// Runs the backward controller from t = T down to 1 over the previous
/// pass's short-term outputs alone (it never reads the memory) and returns
/// its outputs in forward index order.
pub fn backward_sweep(
    tape: &Tape,
    bind: &Binder,
    cfg: &CmamConfig,
    inputs: &[Var],
) -> Result<Vec<Var>> {
    let dims = cfg.backward_dims();
    let w = bind.var("bwd.w");
    let b = bind.var("bwd.b");
    let mut h = bind.var("bwd.h0");
    let mut c = bind.var("bwd.c0");
    let mut out = vec![None; inputs.len()];
    for t in (0..inputs.len()).rev() {
        let step = lstm_step(tape, dims, w, b, inputs[t], h, c)?;
        h = step.h;
        c = step.c;
        out[t] = Some(step.o);
    }
    Ok(out.into_iter().map(|o| o.expect("all timesteps visited")).collect())
}

pub struct SweepOutput {
    pub short_term: Vec<Var>,
    pub readouts: Vec<Var>,
    pub state: TapeMemoryState,
}

/// One forward pass over the sequence: the forward controller consumes the
/// previous short-term output together with the last read values, the
/// buffered backward outputs join it to form the interface and short-term
/// emissions, and every timestep writes to then reads from the memory.
pub fn forward_sweep(
    tape: &Tape,
    bind: &Binder,
    cfg: &CmamConfig,
    inputs: &[Var],
    backward_outs: &[Var],
    state: TapeMemoryState,
    trace: Option<&mut RefineTrace>,
) -> Result<SweepOutput> {
    if inputs.len() != backward_outs.len() {
        return Err(TensorError::ShapeMismatch {
            op: "forward_sweep",
            detail: format!(
                "{} inputs vs {} buffered backward outputs",
                inputs.len(),
                backward_outs.len()
            ),
        });
    }
    let dims = cfg.forward_dims();
    let w = bind.var("fwd.w");
    let b = bind.var("fwd.b");
    let wxi_w = bind.var("wxi.w");
    let wxi_b = bind.var("wxi.b");
    let ws_w = bind.var("ws.w");
    let ws_b = bind.var("ws.b");
    let mut h = bind.var("fwd.h0");
    let mut c = bind.var("fwd.c0");

    if let Some(trace) = trace {
        trace.forward_passes += 1;
        trace.memory_entering_pass.push(tape.value_vec(state.memory));
        trace.first_step_inputs.push(tape.value_vec(inputs[0]));
        trace.hidden_at_pass_start.push(tape.value_vec(h));
    }

    let mut state = state;
    let mut short_term = Vec::with_capacity(inputs.len());
    let mut readouts = Vec::with_capacity(inputs.len());
    for (x, ob) in inputs.iter().zip(backward_outs) {
        let read_cat = tape.concat(&state.read_values, 0)?;
        let ctrl_in = tape.concat(&[*x, read_cat], 0)?;
        let step = lstm_step(tape, dims, w, b, ctrl_in, h, c)?;
        h = step.h;
        c = step.c;
        let both = tape.concat(&[step.o, *ob], 0)?;
        let xi = linear(tape, wxi_w, wxi_b, both)?;
        let ys = linear(tape, ws_w, ws_b, both)?;
        let (next_state, readout) = mam_step(tape, cfg.mem, &state, xi)?;
        state = next_state;
        short_term.push(ys);
        readouts.push(readout);
    }
    Ok(SweepOutput { short_term, readouts, state })
}

/// Executes L+1 backward+forward passes. The memory, usage, and read/write
/// weightings persist across passes; controller states and the initial
/// read values reset to their learned values at each pass start.
pub fn run_refinements(
    tape: &Tape,
    bind: &Binder,
    cfg: &CmamConfig,
    xs: &[Var],
) -> Result<(Vec<Var>, Vec<Var>, RefineTrace)> {
    if xs.is_empty() {
        return Err(TensorError::ShapeMismatch {
            op: "run_refinements",
            detail: "empty input sequence".into(),
        });
    }
    for x in xs {
        let s = tape.shape(*x);
        if s != [cfg.feature] {
            return Err(TensorError::ShapeMismatch {
                op: "run_refinements",
                detail: format!("input width {s:?} vs feature width {}", cfg.feature),
            });
        }
    }
    let r0: Vec<Var> = (0..cfg.mem.read_heads)
        .map(|j| bind.var(&format!("mem.r0.{j}")))
        .collect();
    let fresh = MemoryState::fresh(cfg.mem, vec![vec![0.0; cfg.mem.width]; cfg.mem.read_heads]);
    let mut state = TapeMemoryState::from_values(tape, cfg.mem, &fresh)?;
    state.read_values = r0.clone();

    let mut trace = RefineTrace::default();
    let mut inputs: Vec<Var> = xs.to_vec();
    let mut last = None;
    for _pass in 0..=cfg.refinements {
        trace.backward_passes += 1;
        let backward_outs = backward_sweep(tape, bind, cfg, &inputs)?;
        state.read_values = r0.clone();
        let out = forward_sweep(tape, bind, cfg, &inputs, &backward_outs, state, Some(&mut trace))?;
        trace.memory_exiting_pass.push(tape.value_vec(out.state.memory));
        inputs = out.short_term.clone();
        state = TapeMemoryState {
            memory: out.state.memory,
            usage: out.state.usage,
            read_weights: out.state.read_weights.clone(),
            write_weight: out.state.write_weight,
            read_values: out.state.read_values.clone(),
        };
        last = Some((out.short_term, out.readouts));
    }
    let (ys, rs) = last.expect("at least one pass runs");
    Ok((ys, rs, trace))
}

/// Output head: `y_t = W_y [y^s_t, r_t]` followed by the classification
/// projection to vocabulary+blank logits, stacked into a `T x (V+1)` node.
pub fn output_project(
    tape: &Tape,
    bind: &Binder,
    cfg: &CmamConfig,
    short_term: &[Var],
    readouts: &[Var],
) -> Result<Var> {
    let wy_w = bind.var("wy.w");
    let wy_b = bind.var("wy.b");
    let cls_w = bind.var("cls.w");
    let cls_b = bind.var("cls.b");
    let mut rows = Vec::with_capacity(short_term.len());
    for (ys, r) in short_term.iter().zip(readouts) {
        let joined = tape.concat(&[*ys, *r], 0)?;
        let y = linear(tape, wy_w, wy_b, joined)?;
        rows.push(linear(tape, cls_w, cls_b, y)?);
    }
    let flat = tape.concat(&rows, 0)?;
    tape.reshape(flat, &[short_term.len(), cfg.classes()])
}

/// Full model: encode the image, refine, project. Returns the logits and
/// the refinement instrumentation.
pub fn cmam_forward_traced(
    tape: &Tape,
    bind: &Binder,
    cfg: &CmamConfig,
    stack: &ConvStack,
    image: Var,
) -> Result<(Var, RefineTrace)> {
    let xs = stack.encode(tape, bind, "cnn", image)?;
    let (ys, rs, trace) = run_refinements(tape, bind, cfg, &xs)?;
    let logits = output_project(tape, bind, cfg, &ys, &rs)?;
    Ok((logits, trace))
}

pub fn cmam_forward(
    tape: &Tape,
    bind: &Binder,
    cfg: &CmamConfig,
    stack: &ConvStack,
    image: Var,
) -> Result<Var> {
    cmam_forward_traced(tape, bind, cfg, stack, image).map(|(logits, _)| logits)
}

// ---- CRNN baseline --------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CrnnConfig {
    pub feature: usize,
    pub hidden: usize,
    /// Number of stacked bidirectional layers.
    pub layers: usize,
    pub vocab: usize,
}

impl CrnnConfig {
    pub fn classes(&self) -> usize {
        self.vocab + 1
    }

    fn layer_dims(&self, layer: usize) -> LstmDims {
        let input = if layer == 0 { self.feature } else { 2 * self.hidden };
        LstmDims { input, hidden: self.hidden }
    }
}

pub fn init_crnn_params(cfg: &CrnnConfig, stack: &ConvStack, seed: u64) -> ParamStore {
    assert_eq!(stack.feature_width, cfg.feature);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    stack.init_params(&mut store, "cnn", &mut rng);
    for layer in 0..cfg.layers {
        let dims = cfg.layer_dims(layer);
        init_lstm(&mut store, &format!("bl{layer}.fwd"), dims, &mut rng);
        init_lstm(&mut store, &format!("bl{layer}.bwd"), dims, &mut rng);
    }
    let scale = (1.0 / (2 * cfg.hidden) as f64).sqrt();
    store.insert(
        "cls.w",
        crate::params::TensorData::uniform(&[cfg.classes(), 2 * cfg.hidden], scale, &mut rng),
    );
    store.insert("cls.b", crate::params::TensorData::zeros(&[cfg.classes()]));
    store
}

fn bilstm_layer(
    tape: &Tape,
    bind: &Binder,
    prefix: &str,
    dims: LstmDims,
    inputs: &[Var],
) -> Result<Vec<Var>> {
    let fw = bind.var(&format!("{prefix}.fwd.w"));
    let fb = bind.var(&format!("{prefix}.fwd.b"));
    let mut h = bind.var(&format!("{prefix}.fwd.h0"));
    let mut c = bind.var(&format!("{prefix}.fwd.c0"));
    let mut fwd = Vec::with_capacity(inputs.len());
    for x in inputs {
        let step = lstm_step(tape, dims, fw, fb, *x, h, c)?;
        h = step.h;
        c = step.c;
        fwd.push(step.o);
    }
    let bw = bind.var(&format!("{prefix}.bwd.w"));
    let bb = bind.var(&format!("{prefix}.bwd.b"));
    let mut h = bind.var(&format!("{prefix}.bwd.h0"));
    let mut c = bind.var(&format!("{prefix}.bwd.c0"));
    let mut bwd = vec![None; inputs.len()];
    for t in (0..inputs.len()).rev() {
        let step = lstm_step(tape, dims, bw, bb, inputs[t], h, c)?;
        h = step.h;
        c = step.c;
        bwd[t] = Some(step.o);
    }
    fwd.into_iter()
        .zip(bwd)
        .map(|(f, b)| tape.concat(&[f, b.expect("visited")], 0))
        .collect()
}

/// CNN encoder followed by stacked bidirectional LSTM layers and the
/// classification projection.
pub fn crnn_forward(
    tape: &Tape,
    bind: &Binder,
    cfg: &CrnnConfig,
    stack: &ConvStack,
    image: Var,
) -> Result<Var> {
    let xs = stack.encode(tape, bind, "cnn", image)?;
    let mut seq = xs;
    for layer in 0..cfg.layers {
        seq = bilstm_layer(tape, bind, &format!("bl{layer}"), cfg.layer_dims(layer), &seq)?;
    }
    let cls_w = bind.var("cls.w");
    let cls_b = bind.var("cls.b");
    let rows: Vec<Var> = seq
        .iter()
        .map(|s| linear(tape, cls_w, cls_b, *s))
        .collect::<Result<_>>()?;
    let flat = tape.concat(&rows, 0)?;
    tape.reshape(flat, &[rows.len(), cfg.classes()])
}

/// Small configuration used by the fast test profile.
pub fn tiny_cmam(refinements: usize, vocab: usize) -> (CmamConfig, ConvStack) {
    (
        CmamConfig {
            feature: 16,
            hidden: 32,
            mem: MemoryConfig { slots: 4, width: 8, read_heads: 2 },
            refinements,
            vocab,
        },
        ConvStack::tiny(),
    )
}

/// Full-scale configuration: 16x16 memory with 4 read heads and a
/// 196-wide controller.
pub fn default_cmam(refinements: usize, vocab: usize) -> (CmamConfig, ConvStack) {
    (
        CmamConfig {
            feature: 64,
            hidden: 196,
            mem: MemoryConfig { slots: 16, width: 16, read_heads: 4 },
            refinements,
            vocab,
        },
        ConvStack::default_ocr(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::TensorData;
    use rand::Rng;

    fn tiny_cfg(l: usize) -> CmamConfig {
        CmamConfig {
            feature: 6,
            hidden: 8,
            mem: MemoryConfig { slots: 4, width: 5, read_heads: 2 },
            refinements: l,
            vocab: 3,
        }
    }

    fn seq_store(cfg: &CmamConfig, seed: u64) -> ParamStore {
        // parameters for the sequence part only (no CNN)
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        init_lstm(&mut store, "fwd", cfg.forward_dims(), &mut rng);
        init_lstm(&mut store, "bwd", cfg.backward_dims(), &mut rng);
        let both = 2 * cfg.hidden;
        store.insert("wxi.w", TensorData::uniform(&[cfg.mem.interface_width(), both], 0.3, &mut rng));
        store.insert("wxi.b", TensorData::zeros(&[cfg.mem.interface_width()]));
        store.insert("ws.w", TensorData::uniform(&[cfg.feature, both], 0.3, &mut rng));
        store.insert("ws.b", TensorData::zeros(&[cfg.feature]));
        let wy_in = cfg.feature + cfg.mem.readout_width();
        store.insert("wy.w", TensorData::uniform(&[cfg.feature, wy_in], 0.3, &mut rng));
        store.insert("wy.b", TensorData::zeros(&[cfg.feature]));
        store.insert("cls.w", TensorData::uniform(&[cfg.classes(), cfg.feature], 0.3, &mut rng));
        store.insert("cls.b", TensorData::zeros(&[cfg.classes()]));
        for j in 0..cfg.mem.read_heads {
            store.insert(format!("mem.r0.{j}"), TensorData::uniform(&[cfg.mem.width], 0.1, &mut rng));
        }
        store
    }

    fn rand_inputs(tape: &Tape, cfg: &CmamConfig, t: usize, seed: u64) -> Vec<Var> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..t)
            .map(|_| {
                tape.leaf(
                    &[cfg.feature],
                    (0..cfg.feature).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                )
                .unwrap()
            })
            .collect()
    }

    #[test]
    fn backward_sweep_single_step_runs_from_learned_state() {
        let cfg = tiny_cfg(0);
        let store = seq_store(&cfg, 1);
        let tape = Tape::new();
        let bind = Binder::new(&tape, &store);
        let xs = rand_inputs(&tape, &cfg, 1, 2);
        let outs = backward_sweep(&tape, &bind, &cfg, &xs).unwrap();
        assert_eq!(outs.len(), 1);
        assert_eq!(tape.shape(outs[0]), vec![cfg.hidden]);
    }

    #[test]
    fn backward_sweep_output_ignores_earlier_inputs() {
        let cfg = tiny_cfg(0);
        let store = seq_store(&cfg, 3);
        let tape = Tape::new();
        let bind = Binder::new(&tape, &store);
        let xs = rand_inputs(&tape, &cfg, 3, 4);
        let outs = backward_sweep(&tape, &bind, &cfg, &xs).unwrap();
        let loss = tape.sum(outs[2]);
        tape.backward(loss).unwrap();
        assert!(tape.grad(xs[0]).iter().all(|g| *g == 0.0));
        assert!(tape.grad(xs[1]).iter().all(|g| *g == 0.0));
        assert!(tape.grad(xs[2]).iter().any(|g| *g != 0.0));
    }

    #[test]
    fn refinement_pass_counts() {
        for l in 0..3 {
            let cfg = tiny_cfg(l);
            let store = seq_store(&cfg, 5);
            let tape = Tape::new();
            let bind = Binder::new(&tape, &store);
            let xs = rand_inputs(&tape, &cfg, 3, 6);
            let (_, _, trace) = run_refinements(&tape, &bind, &cfg, &xs).unwrap();
            assert_eq!(trace.forward_passes, l + 1);
            assert_eq!(trace.backward_passes, l + 1);
        }
    }

    #[test]
    fn memory_persists_across_passes_bit_for_bit() {
        let cfg = tiny_cfg(2);
        let store = seq_store(&cfg, 7);
        let tape = Tape::new();
        let bind = Binder::new(&tape, &store);
        let xs = rand_inputs(&tape, &cfg, 4, 8);
        let (_, _, trace) = run_refinements(&tape, &bind, &cfg, &xs).unwrap();
        for l in 0..cfg.refinements {
            let exiting = &trace.memory_exiting_pass[l];
            let entering = &trace.memory_entering_pass[l + 1];
            assert_eq!(exiting.len(), entering.len());
            assert!(
                exiting.iter().zip(entering).all(|(a, b)| a.to_bits() == b.to_bits()),
                "memory was reset between passes {l} and {}",
                l + 1
            );
        }
    }

    #[test]
    fn controller_hidden_resets_to_learned_value_each_pass() {
        let cfg = tiny_cfg(2);
        let store = seq_store(&cfg, 9);
        let tape = Tape::new();
        let bind = Binder::new(&tape, &store);
        let xs = rand_inputs(&tape, &cfg, 3, 10);
        let (_, _, trace) = run_refinements(&tape, &bind, &cfg, &xs).unwrap();
        let h0 = store.get("fwd.h0").unwrap().values.clone();
        for h in &trace.hidden_at_pass_start {
            assert_eq!(*h, h0);
        }
    }

    #[test]
    fn second_pass_consumes_short_term_not_x() {
        let cfg = tiny_cfg(1);
        let store = seq_store(&cfg, 11);
        let tape = Tape::new();
        let bind = Binder::new(&tape, &store);
        let xs = rand_inputs(&tape, &cfg, 1, 12);
        let (ys, _, trace) = run_refinements(&tape, &bind, &cfg, &xs).unwrap();
        assert_eq!(trace.first_step_inputs.len(), 2);
        assert_eq!(trace.first_step_inputs[0], tape.value_vec(xs[0]));
        assert_ne!(trace.first_step_inputs[1], tape.value_vec(xs[0]));
        // final outputs come from the second pass, which consumed pass 0's
        // short-term output; ys holds pass 1's own emissions
        assert_eq!(tape.shape(ys[0]), vec![cfg.feature]);
    }

    #[test]
    fn output_shapes_across_t_l_grid() {
        for t in 1..=5 {
            for l in 0..=2 {
                let cfg = tiny_cfg(l);
                let store = seq_store(&cfg, 13);
                let tape = Tape::new();
                let bind = Binder::new(&tape, &store);
                let xs = rand_inputs(&tape, &cfg, t, 14 + t as u64);
                let (ys, rs, _) = run_refinements(&tape, &bind, &cfg, &xs).unwrap();
                assert_eq!(ys.len(), t);
                assert_eq!(rs.len(), t);
                for y in &ys {
                    assert_eq!(tape.shape(*y), vec![cfg.feature]);
                }
                for r in &rs {
                    assert_eq!(tape.shape(*r), vec![cfg.mem.readout_width()]);
                }
            }
        }
    }

    #[test]
    fn short_term_at_first_step_sees_future_through_backward_controller() {
        let cfg = tiny_cfg(0);
        let store = seq_store(&cfg, 15);
        let tape = Tape::new();
        let bind = Binder::new(&tape, &store);
        let xs = rand_inputs(&tape, &cfg, 3, 16);
        let (ys, _, _) = run_refinements(&tape, &bind, &cfg, &xs).unwrap();
        let loss = tape.sum(ys[0]);
        tape.backward(loss).unwrap();
        assert!(
            tape.grad(xs[1]).iter().any(|g| g.abs() > 0.0),
            "y^s at t=0 must depend on x at t=1 through the backward controller"
        );
    }

    #[test]
    fn future_reaches_past_through_memory_when_refining() {
        // zero the backward controller's contribution to the short-term
        // output so the only future-to-past route is a memory read
        let cfg = tiny_cfg(1);
        let mut store = seq_store(&cfg, 17);
        {
            let ws = store.get_mut("ws.w").unwrap();
            let cols = 2 * cfg.hidden;
            for row in 0..cfg.feature {
                for col in cfg.hidden..cols {
                    ws.values[row * cols + col] = 0.0;
                }
            }
        }
        let tape = Tape::new();
        let bind = Binder::new(&tape, &store);
        let xs = rand_inputs(&tape, &cfg, 4, 18);
        let (ys, rs, _) = run_refinements(&tape, &bind, &cfg, &xs).unwrap();
        let logits = output_project(&tape, &bind, &cfg, &ys, &rs).unwrap();
        let first_row = tape.slice(tape.reshape(logits, &[4 * cfg.classes()]).unwrap(), 0, cfg.classes()).unwrap();
        let loss = tape.sum(first_row);
        tape.backward(loss).unwrap();
        let g = tape.grad(xs[3]);
        assert!(
            g.iter().any(|v| v.abs() > 1e-12),
            "no gradient path from the last input to the first output"
        );
    }

    #[test]
    fn output_project_zero_wy_gives_constant_logits() {
        let cfg = tiny_cfg(0);
        let mut store = seq_store(&cfg, 19);
        {
            let wy = store.get_mut("wy.w").unwrap();
            wy.values.iter_mut().for_each(|v| *v = 0.0);
        }
        let bias: Vec<f64> = (0..cfg.classes()).map(|i| i as f64 * 0.25 - 0.5).collect();
        store.get_mut("cls.b").unwrap().values = bias.clone();
        {
            let wy_b = store.get_mut("wy.b").unwrap();
            wy_b.values.iter_mut().for_each(|v| *v = 0.0);
        }
        let tape = Tape::new();
        let bind = Binder::new(&tape, &store);
        let xs = rand_inputs(&tape, &cfg, 3, 20);
        let (ys, rs, _) = run_refinements(&tape, &bind, &cfg, &xs).unwrap();
        let logits = output_project(&tape, &bind, &cfg, &ys, &rs).unwrap();
        assert_eq!(tape.shape(logits), vec![3, cfg.classes()]);
        let v = tape.value_vec(logits);
        for t in 0..3 {
            for (k, b) in bias.iter().enumerate() {
                assert!((v[t * cfg.classes() + k] - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn cmam_forward_t_is_width_over_four_and_deterministic() {
        let (cfg, stack) = tiny_cmam(1, 3);
        let store = init_cmam_params(&cfg, &stack, 21);
        let run = || {
            let tape = Tape::new();
            let bind = Binder::new(&tape, &store);
            let img = tape
                .leaf(&[1, 32, 16], (0..32 * 16).map(|i| ((i * 3) % 13) as f64 / 13.0).collect())
                .unwrap();
            let logits = cmam_forward(&tape, &bind, &cfg, &stack, img).unwrap();
            (tape.shape(logits), tape.value_vec(logits))
        };
        let (shape, v1) = run();
        assert_eq!(shape, vec![4, cfg.classes()]);
        let (_, v2) = run();
        assert!(v1.iter().zip(&v2).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn crnn_matches_cmam_output_shape_and_sees_future() {
        let (cfg, stack) = tiny_cmam(0, 3);
        let crnn = CrnnConfig { feature: 16, hidden: 12, layers: 2, vocab: 3 };
        let cmam_store = init_cmam_params(&cfg, &stack, 23);
        let crnn_store = init_crnn_params(&crnn, &stack, 23);
        let img: Vec<f64> = (0..32 * 16).map(|i| ((i * 7) % 19) as f64 / 19.0).collect();

        let tape = Tape::new();
        let bind = Binder::new(&tape, &cmam_store);
        let iv = tape.leaf(&[1, 32, 16], img.clone()).unwrap();
        let a = cmam_forward(&tape, &bind, &cfg, &stack, iv).unwrap();

        let tape2 = Tape::new();
        let bind2 = Binder::new(&tape2, &crnn_store);
        let iv2 = tape2.leaf(&[1, 32, 16], img).unwrap();
        let b = crnn_forward(&tape2, &bind2, &crnn, &stack, iv2).unwrap();
        assert_eq!(tape.shape(a), tape2.shape(b));

        // bidirectionality: early logits depend on late pixels
        let classes = crnn.classes();
        let flat = tape2.reshape(b, &[4 * classes]).unwrap();
        let first_row = tape2.slice(flat, 0, classes).unwrap();
        let loss = tape2.sum(first_row);
        tape2.backward(loss).unwrap();
        let g = tape2.grad(iv2);
        let late_pixels = &g[32 * 16 - 64..];
        assert!(late_pixels.iter().any(|v| v.abs() > 0.0));
    }
}
