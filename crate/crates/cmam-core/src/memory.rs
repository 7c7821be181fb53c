//! Multi-way associative external memory: interface parsing, content-based
//! reading, three-strategy gated writing, and the write-then-read step that
//! combines them.

use crate::tensor::{Result, Tape, TensorError, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MemoryConfig {
    /// Number of slots N.
    pub slots: usize,
    /// Slot width D.
    pub width: usize,
    /// Read heads R.
    pub read_heads: usize,
}

impl MemoryConfig {
    /// Width of the raw interface emission:
    /// `R*(D+2) + 3*D + 5` for keys, strengths, free gates, write key and
    /// strength, write/erase values, mode gate, and write gate.
    pub fn interface_width(&self) -> usize {
        self.read_heads * (self.width + 2) + 3 * self.width + 5
    }

    /// Width of the concatenated read-out `[r^1, ..., r^R]`.
    pub fn readout_width(&self) -> usize {
        self.read_heads * self.width
    }
}

/// Byte offsets of each interface field inside the raw emission, in the
/// frozen order `[k^r1..k^rR | beta^r | f | k^w | beta^w | v | e | g_mode | g_w]`.
#[derive(Debug, Clone, Copy)]
pub struct InterfaceLayout {
    pub r: usize,
    pub d: usize,
}

impl InterfaceLayout {
    pub fn new(cfg: MemoryConfig) -> Self {
        InterfaceLayout { r: cfg.read_heads, d: cfg.width }
    }

    pub fn read_key(&self, j: usize) -> (usize, usize) {
        (j * self.d, self.d)
    }

    pub fn read_strengths(&self) -> (usize, usize) {
        (self.r * self.d, self.r)
    }

    pub fn free_gates(&self) -> (usize, usize) {
        (self.r * self.d + self.r, self.r)
    }

    pub fn write_key(&self) -> (usize, usize) {
        (self.r * (self.d + 2), self.d)
    }

    pub fn write_strength(&self) -> (usize, usize) {
        (self.r * (self.d + 2) + self.d, 1)
    }

    pub fn write_value(&self) -> (usize, usize) {
        (self.r * (self.d + 2) + self.d + 1, self.d)
    }

    pub fn erase(&self) -> (usize, usize) {
        (self.r * (self.d + 2) + 2 * self.d + 1, self.d)
    }

    pub fn mode_gate(&self) -> (usize, usize) {
        (self.r * (self.d + 2) + 3 * self.d + 1, 3)
    }

    pub fn write_gate(&self) -> (usize, usize) {
        (self.r * (self.d + 2) + 3 * self.d + 4, 1)
    }

    pub fn total(&self) -> usize {
        self.r * (self.d + 2) + 3 * self.d + 5
    }
}

/// Parsed, normalized memory-control emissions.
#[derive(Debug)]
pub struct InterfaceVars {
    /// Read keys, untransformed.
    pub read_keys: Vec<Var>,
    /// Read strengths after oneplus, one scalar per head.
    pub read_strengths: Vec<Var>,
    /// Free gates after sigmoid, one scalar per head.
    pub free_gates: Vec<Var>,
    pub write_key: Var,
    pub write_strength: Var,
    pub write_value: Var,
    /// Erase values in [0,1] after sigmoid.
    pub erase: Var,
    /// Write-mode distribution over (allocation, last-read, content).
    pub mode_gate: Var,
    /// Scalar write gate in [0,1].
    pub write_gate: Var,
}

/// Splits and normalizes a raw interface emission: strengths pass through
/// oneplus, free/erase/write gates through sigmoid, the mode gate through
/// softmax; keys and the write value stay untransformed.
pub fn parse_interface(tape: &Tape, cfg: MemoryConfig, raw: Var) -> Result<InterfaceVars> {
    let layout = InterfaceLayout::new(cfg);
    let shape = tape.shape(raw);
    if shape != [layout.total()] {
        return Err(TensorError::ShapeMismatch {
            op: "parse_interface",
            detail: format!(
                "interface width: expected {} for R={} D={}, got {:?}",
                layout.total(),
                cfg.read_heads,
                cfg.width,
                shape
            ),
        });
    }
    let mut read_keys = Vec::with_capacity(cfg.read_heads);
    for j in 0..cfg.read_heads {
        let (s, l) = layout.read_key(j);
        read_keys.push(tape.slice(raw, s, l)?);
    }
    let (s, l) = layout.read_strengths();
    let strengths = tape.oneplus(tape.slice(raw, s, l)?);
    let mut read_strengths = Vec::with_capacity(cfg.read_heads);
    for j in 0..cfg.read_heads {
        read_strengths.push(tape.slice(strengths, j, 1)?);
    }
    let (s, l) = layout.free_gates();
    let frees = tape.sigmoid(tape.slice(raw, s, l)?);
    let mut free_gates = Vec::with_capacity(cfg.read_heads);
    for j in 0..cfg.read_heads {
        free_gates.push(tape.slice(frees, j, 1)?);
    }
    let (s, l) = layout.write_key();
    let write_key = tape.slice(raw, s, l)?;
    let (s, l) = layout.write_strength();
    let write_strength = tape.oneplus(tape.slice(raw, s, l)?);
    let (s, l) = layout.write_value();
    let write_value = tape.slice(raw, s, l)?;
    let (s, l) = layout.erase();
    let erase = tape.sigmoid(tape.slice(raw, s, l)?);
    let (s, l) = layout.mode_gate();
    let mode_gate = tape.softmax_rows(tape.slice(raw, s, l)?)?;
    let (s, l) = layout.write_gate();
    let write_gate = tape.sigmoid(tape.slice(raw, s, l)?);
    Ok(InterfaceVars {
        read_keys,
        read_strengths,
        free_gates,
        write_key,
        write_strength,
        write_value,
        erase,
        mode_gate,
        write_gate,
    })
}

/// Content addressing: softmax over slots of cosine similarity sharpened
/// by the strength.
pub fn content_weights(tape: &Tape, memory: Var, key: Var, strength: Var) -> Result<Var> {
    let sims = tape.cosine_rows(memory, key)?;
    let scaled = tape.scale_by(sims, strength)?;
    tape.softmax_rows(scaled)
}

/// Content reads for all heads against the given memory. Returns the new
/// read weights and read values.
pub fn memory_read(
    tape: &Tape,
    memory: Var,
    iface: &InterfaceVars,
) -> Result<(Vec<Var>, Vec<Var>)> {
    let mut weights = Vec::with_capacity(iface.read_keys.len());
    let mut values = Vec::with_capacity(iface.read_keys.len());
    for (key, strength) in iface.read_keys.iter().zip(&iface.read_strengths) {
        let w = content_weights(tape, memory, *key, *strength)?;
        values.push(tape.vecmat(w, memory)?);
        weights.push(w);
    }
    Ok((weights, values))
}

/// Retention `psi = prod_j (1 - f^j w^rj_prev)` and the usage update
/// `u = (u_prev + w^w_prev - u_prev o w^w_prev) o psi`.
pub fn retention_and_usage(
    tape: &Tape,
    free_gates: &[Var],
    prev_read_weights: &[Var],
    prev_usage: Var,
    prev_write_weight: Var,
) -> Result<(Var, Var)> {
    let n = tape.shape(prev_usage)[0];
    let mut psi = tape.leaf(&[n], vec![1.0; n])?;
    for (f, w) in free_gates.iter().zip(prev_read_weights) {
        let fw = tape.scale_by(*w, *f)?;
        let keep = tape.affine(fw, -1.0, 1.0);
        psi = tape.mul(psi, keep)?;
    }
    // u_prev + w_prev(1 - u_prev)
    let one_minus_u = tape.affine(prev_usage, -1.0, 1.0);
    let gain = tape.mul(prev_write_weight, one_minus_u)?;
    let grown = tape.add(prev_usage, gain)?;
    let usage = tape.mul(grown, psi)?;
    Ok((psi, usage))
}

/// Allocation weights over slots from the usage vector. Slots are visited
/// in ascending usage (stable; ties by lower index); the permutation is a
/// constant with respect to differentiation.
pub fn allocation(tape: &Tape, usage: Var) -> Result<Var> {
    let u = tape.value_vec(usage);
    let n = u.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| u[a].partial_cmp(&u[b]).unwrap().then(a.cmp(&b)));

    let sorted = tape.gather(usage, &order)?;
    let mut terms = Vec::with_capacity(n);
    let mut running = tape.scalar(1.0);
    for k in 0..n {
        let uk = tape.slice(sorted, k, 1)?;
        let headroom = tape.affine(uk, -1.0, 1.0);
        terms.push(tape.mul(headroom, running)?);
        if k + 1 < n {
            running = tape.mul(running, uk)?;
        }
    }
    let alloc_sorted = tape.concat(&terms, 0)?;
    // scatter back: inverse permutation
    let mut inverse = vec![0usize; n];
    for (k, &slot) in order.iter().enumerate() {
        inverse[slot] = k;
    }
    tape.gather(alloc_sorted, &inverse)
}

/// Final write weight: the gated convex mixture of allocation, last-read
/// average, and content-based weights.
pub fn write_weight(
    tape: &Tape,
    alloc: Var,
    prev_read_weights: &[Var],
    content: Var,
    mode_gate: Var,
    write_gate: Var,
) -> Result<Var> {
    let r = prev_read_weights.len();
    let mut summed = prev_read_weights[0];
    for w in &prev_read_weights[1..] {
        summed = tape.add(summed, *w)?;
    }
    let last_read = tape.affine(summed, 1.0 / r as f64, 0.0);

    let g_alloc = tape.slice(mode_gate, 0, 1)?;
    let g_last = tape.slice(mode_gate, 1, 1)?;
    let g_content = tape.slice(mode_gate, 2, 1)?;
    let a_term = tape.scale_by(alloc, g_alloc)?;
    let l_term = tape.scale_by(last_read, g_last)?;
    let c_term = tape.scale_by(content, g_content)?;
    let mixed = tape.add(tape.add(a_term, l_term)?, c_term)?;
    tape.scale_by(mixed, write_gate)
}

/// Erase-then-add memory update `M' = M o (E - w e^T) + w v^T`.
pub fn memory_write(tape: &Tape, memory: Var, ww: Var, erase: Var, value: Var) -> Result<Var> {
    let we = tape.outer(ww, erase)?;
    let keep = tape.affine(we, -1.0, 1.0);
    let retained = tape.mul(memory, keep)?;
    let added = tape.outer(ww, value)?;
    tape.add(retained, added)
}

/// Memory carry between timesteps, as plain values.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryState {
    pub memory: Vec<f64>,
    pub usage: Vec<f64>,
    pub read_weights: Vec<Vec<f64>>,
    pub write_weight: Vec<f64>,
    pub read_values: Vec<Vec<f64>>,
}

impl MemoryState {
    /// Fresh state: zero memory, usage, and weightings; the initial read
    /// values are the supplied (learned) vectors, one per head.
    pub fn fresh(cfg: MemoryConfig, read_values: Vec<Vec<f64>>) -> Self {
        assert_eq!(read_values.len(), cfg.read_heads);
        MemoryState {
            memory: vec![0.0; cfg.slots * cfg.width],
            usage: vec![0.0; cfg.slots],
            read_weights: vec![vec![0.0; cfg.slots]; cfg.read_heads],
            write_weight: vec![0.0; cfg.slots],
            read_values,
        }
    }
}

/// Memory carry as tape nodes, used while a sequence is being recorded.
pub struct TapeMemoryState {
    pub memory: Var,
    pub usage: Var,
    pub read_weights: Vec<Var>,
    pub write_weight: Var,
    pub read_values: Vec<Var>,
}

impl TapeMemoryState {
    pub fn from_values(tape: &Tape, cfg: MemoryConfig, state: &MemoryState) -> Result<Self> {
        Ok(TapeMemoryState {
            memory: tape.leaf(&[cfg.slots, cfg.width], state.memory.clone())?,
            usage: tape.leaf(&[cfg.slots], state.usage.clone())?,
            read_weights: state
                .read_weights
                .iter()
                .map(|w| tape.leaf(&[cfg.slots], w.clone()))
                .collect::<Result<_>>()?,
            write_weight: tape.leaf(&[cfg.slots], state.write_weight.clone())?,
            read_values: state
                .read_values
                .iter()
                .map(|r| tape.leaf(&[cfg.width], r.clone()))
                .collect::<Result<_>>()?,
        })
    }

    pub fn snapshot(&self, tape: &Tape) -> MemoryState {
        MemoryState {
            memory: tape.value_vec(self.memory),
            usage: tape.value_vec(self.usage),
            read_weights: self.read_weights.iter().map(|w| tape.value_vec(*w)).collect(),
            write_weight: tape.value_vec(self.write_weight),
            read_values: self.read_values.iter().map(|r| tape.value_vec(*r)).collect(),
        }
    }
}

/// One full memory transaction: parse the raw interface, free and update
/// usage, mix the write weight, write, then read from the updated memory.
/// Returns the new state and the concatenated read-out of width `R*D`.
pub fn mam_step(
    tape: &Tape,
    cfg: MemoryConfig,
    state: &TapeMemoryState,
    raw_interface: Var,
) -> Result<(TapeMemoryState, Var)> {
    let iface = parse_interface(tape, cfg, raw_interface)?;

    let (_psi, usage) = retention_and_usage(
        tape,
        &iface.free_gates,
        &state.read_weights,
        state.usage,
        state.write_weight,
    )?;
    let alloc = allocation(tape, usage)?;
    // write addressing looks at the memory as it stands before this write
    let content = content_weights(tape, state.memory, iface.write_key, iface.write_strength)?;
    let ww = write_weight(
        tape,
        alloc,
        &state.read_weights,
        content,
        iface.mode_gate,
        iface.write_gate,
    )?;
    let memory = memory_write(tape, state.memory, ww, iface.erase, iface.write_value)?;

    let (read_weights, read_values) = memory_read(tape, memory, &iface)?;
    let readout = tape.concat(&read_values, 0)?;

    let new_state = TapeMemoryState {
        memory,
        usage,
        read_weights,
        write_weight: ww,
        read_values,
    };
    Ok((new_state, readout))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::gradcheck;
    use crate::params::TensorData;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    const CFG: MemoryConfig = MemoryConfig { slots: 4, width: 8, read_heads: 2 };

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn interface_width_for_paper_config() {
        let cfg = MemoryConfig { slots: 16, width: 16, read_heads: 4 };
        assert_eq!(cfg.interface_width(), 125);
    }

    #[test]
    fn parse_all_zero_raw_gives_activation_midpoints() {
        let tape = Tape::new();
        let raw = tape.zeros(&[CFG.interface_width()]);
        let iface = parse_interface(&tape, CFG, raw).unwrap();
        let one_ln2 = 1.0 + std::f64::consts::LN_2;
        for s in &iface.read_strengths {
            assert!((tape.value_scalar(*s) - one_ln2).abs() < 1e-12);
        }
        assert!((tape.value_scalar(iface.write_strength) - one_ln2).abs() < 1e-12);
        for f in &iface.free_gates {
            assert_eq!(tape.value_scalar(*f), 0.5);
        }
        for e in tape.value_vec(iface.erase) {
            assert_eq!(e, 0.5);
        }
        for g in tape.value_vec(iface.mode_gate) {
            assert!((g - 1.0 / 3.0).abs() < 1e-12);
        }
        assert_eq!(tape.value_scalar(iface.write_gate), 0.5);
    }

    #[test]
    fn parse_rejects_wrong_width() {
        let tape = Tape::new();
        let raw = tape.zeros(&[CFG.interface_width() + 1]);
        let err = parse_interface(&tape, CFG, raw).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains(&CFG.interface_width().to_string()), "{msg}");
    }

    #[test]
    fn parse_recovers_serialized_fields() {
        // pack pre-activations through the layout, parse, and compare
        // against directly activated values
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let layout = InterfaceLayout::new(CFG);
        let raw: Vec<f64> = (0..layout.total()).map(|_| rng.gen_range(-2.0..2.0)).collect();

        let tape = Tape::new();
        let rawv = tape.leaf(&[layout.total()], raw.clone()).unwrap();
        let iface = parse_interface(&tape, CFG, rawv).unwrap();

        for j in 0..CFG.read_heads {
            let (s, l) = layout.read_key(j);
            assert_eq!(tape.value_vec(iface.read_keys[j]), raw[s..s + l].to_vec());
        }
        let (s, _) = layout.read_strengths();
        for j in 0..CFG.read_heads {
            let expect = 1.0 + crate::tensor::softplus(raw[s + j]);
            assert!((tape.value_scalar(iface.read_strengths[j]) - expect).abs() < 1e-12);
        }
        let (s, l) = layout.write_value();
        assert_eq!(tape.value_vec(iface.write_value), raw[s..s + l].to_vec());
        let (s, _) = layout.write_gate();
        let expect = crate::tensor::sigmoid(raw[s]);
        assert!((tape.value_scalar(iface.write_gate) - expect).abs() < 1e-12);
    }

    #[test]
    fn content_weights_orthonormal_rows_beta_large() {
        let tape = Tape::new();
        let m = tape
            .leaf(&[2, 2], vec![1.0, 0.0, 0.0, 1.0])
            .unwrap();
        let k = tape.leaf(&[2], vec![1.0, 0.0]).unwrap();
        let beta = tape.scalar(60.0);
        let w = content_weights(&tape, m, k, beta).unwrap();
        let v = tape.value_vec(w);
        assert!((v[0] - 1.0).abs() < 1e-9);
        assert!(v[1] < 1e-9);
    }

    #[test]
    fn content_weights_identical_rows_uniform() {
        let tape = Tape::new();
        let m = tape.leaf(&[3, 2], vec![0.5, 0.5, 0.5, 0.5, 0.5, 0.5]).unwrap();
        let k = tape.leaf(&[2], vec![1.0, -2.0]).unwrap();
        for beta in [1.0, 10.0, 100.0] {
            let b = tape.scalar(beta);
            let w = content_weights(&tape, m, k, b).unwrap();
            for v in tape.value_vec(w) {
                assert!((v - 1.0 / 3.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn content_weights_two_slot_hand_case() {
        let tape = Tape::new();
        let m = tape.leaf(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let k = tape.leaf(&[2], vec![1.0, 0.0]).unwrap();
        let beta = tape.scalar(1.0);
        let w = content_weights(&tape, m, k, beta).unwrap();
        let v = tape.value_vec(w);
        let e = std::f64::consts::E;
        assert!((v[0] - e / (e + 1.0)).abs() < 1e-6, "{v:?}");
        assert!((v[1] - 1.0 / (e + 1.0)).abs() < 1e-6, "{v:?}");
    }

    #[test]
    fn read_one_hot_weight_recovers_slot() {
        let tape = Tape::new();
        let m = tape
            .leaf(&[3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0])
            .unwrap();
        let w = tape.leaf(&[3], vec![0.0, 1.0, 0.0]).unwrap();
        let r = tape.vecmat(w, m).unwrap();
        assert_eq!(tape.value_vec(r), vec![3.0, 4.0]);
    }

    #[test]
    fn read_uniform_weight_is_column_mean() {
        let tape = Tape::new();
        let m = tape
            .leaf(&[3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0])
            .unwrap();
        let w = tape.leaf(&[3], vec![1.0 / 3.0; 3]).unwrap();
        let r = tape.vecmat(w, m).unwrap();
        assert!(close(&tape.value_vec(r), &[3.0, 4.0], 1e-12));
    }

    #[test]
    fn read_matches_bruteforce_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let n = 4;
        let d = 3;
        let mv: Vec<f64> = (0..n * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let wv: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
        let mut expect = vec![0.0; d];
        for i in 0..n {
            for j in 0..d {
                expect[j] += wv[i] * mv[i * d + j];
            }
        }
        let tape = Tape::new();
        let m = tape.leaf(&[n, d], mv).unwrap();
        let w = tape.leaf(&[n], wv).unwrap();
        let r = tape.vecmat(w, m).unwrap();
        assert!(close(&tape.value_vec(r), &expect, 1e-12));
    }

    #[test]
    fn retention_with_zero_free_gates_keeps_usage() {
        let tape = Tape::new();
        let f = vec![tape.scalar(0.0), tape.scalar(0.0)];
        let rw = vec![
            tape.leaf(&[4], vec![0.5, 0.5, 0.0, 0.0]).unwrap(),
            tape.leaf(&[4], vec![0.0, 0.0, 1.0, 0.0]).unwrap(),
        ];
        let u = tape.leaf(&[4], vec![0.2, 0.4, 0.6, 0.8]).unwrap();
        let ww = tape.zeros(&[4]);
        let (psi, usage) = retention_and_usage(&tape, &f, &rw, u, ww).unwrap();
        assert_eq!(tape.value_vec(psi), vec![1.0; 4]);
        assert!(close(&tape.value_vec(usage), &[0.2, 0.4, 0.6, 0.8], 1e-15));
    }

    #[test]
    fn retention_full_free_gate_frees_read_slot() {
        let tape = Tape::new();
        let f = vec![tape.scalar(1.0)];
        let rw = vec![tape.leaf(&[4], vec![0.0, 0.0, 0.0, 1.0]).unwrap()];
        let u = tape.leaf(&[4], vec![0.3, 0.3, 0.3, 0.9]).unwrap();
        let ww = tape.zeros(&[4]);
        let (psi, usage) = retention_and_usage(&tape, &f, &rw, u, ww).unwrap();
        assert_eq!(tape.value_vec(psi)[3], 0.0);
        assert_eq!(tape.value_vec(usage)[3], 0.0);
    }

    #[test]
    fn usage_stays_in_unit_interval_under_fuzzing() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let n = 5;
        let mut usage: Vec<f64> = vec![0.0; n];
        let mut ww: Vec<f64> = vec![0.0; n];
        let mut rw: Vec<Vec<f64>> = vec![vec![0.0; n]; 2];
        for _ in 0..1000 {
            let tape = Tape::new();
            let f: Vec<Var> = (0..2).map(|_| tape.scalar(rng.gen_range(0.0..1.0))).collect();
            let rwv: Vec<Var> = rw.iter().map(|w| tape.leaf(&[n], w.clone()).unwrap()).collect();
            let u = tape.leaf(&[n], usage.clone()).unwrap();
            let w = tape.leaf(&[n], ww.clone()).unwrap();
            let (_, new_u) = retention_and_usage(&tape, &f, &rwv, u, w).unwrap();
            usage = tape.value_vec(new_u);
            for v in &usage {
                assert!((0.0..=1.0).contains(v), "usage {v} escaped [0,1]");
            }
            // random simplex weights for the next round
            let mut raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
            let s: f64 = raw.iter().sum();
            raw.iter_mut().for_each(|v| *v /= s);
            ww = raw;
            for w in rw.iter_mut() {
                let mut raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
                let s: f64 = raw.iter().sum();
                raw.iter_mut().for_each(|v| *v /= s);
                *w = raw;
            }
        }
    }

    #[test]
    fn allocation_all_zero_usage_is_one_hot_first_slot() {
        let tape = Tape::new();
        let u = tape.zeros(&[4]);
        let a = allocation(&tape, u).unwrap();
        assert_eq!(tape.value_vec(a), vec![1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn allocation_full_usage_is_zero() {
        let tape = Tape::new();
        let u = tape.leaf(&[4], vec![1.0; 4]).unwrap();
        let a = allocation(&tape, u).unwrap();
        assert_eq!(tape.value_vec(a), vec![0.0; 4]);
    }

    #[test]
    fn allocation_hand_case() {
        let tape = Tape::new();
        let u = tape.leaf(&[2], vec![0.5, 0.1]).unwrap();
        let a = allocation(&tape, u).unwrap();
        let v = tape.value_vec(a);
        assert!((v[0] - 0.05).abs() <= 1e-12, "{v:?}");
        assert!((v[1] - 0.9).abs() <= 1e-12, "{v:?}");
    }

    #[test]
    fn allocation_argsort_invariant_to_common_shift() {
        let mut rng = ChaCha8Rng::seed_from_u64(47);
        for _ in 0..50 {
            let u: Vec<f64> = (0..6).map(|_| rng.gen_range(0.0..0.7)).collect();
            let headroom = 1.0 - u.iter().cloned().fold(0.0, f64::max);
            let shift = rng.gen_range(0.0..headroom);
            let argsort = |vals: &[f64]| {
                let mut idx: Vec<usize> = (0..vals.len()).collect();
                idx.sort_by(|&a, &b| vals[a].partial_cmp(&vals[b]).unwrap().then(a.cmp(&b)));
                idx
            };
            let shifted: Vec<f64> = u.iter().map(|v| v + shift).collect();
            assert_eq!(argsort(&u), argsort(&shifted));
        }
    }

    #[test]
    fn write_weight_refused_when_gate_closed() {
        let tape = Tape::new();
        let a = tape.leaf(&[3], vec![1.0, 0.0, 0.0]).unwrap();
        let rw = vec![tape.leaf(&[3], vec![0.0, 1.0, 0.0]).unwrap()];
        let c = tape.leaf(&[3], vec![0.0, 0.0, 1.0]).unwrap();
        let mode = tape.leaf(&[3], vec![0.3, 0.3, 0.4]).unwrap();
        let gw = tape.scalar(0.0);
        let w = write_weight(&tape, a, &rw, c, mode, gw).unwrap();
        assert_eq!(tape.value_vec(w), vec![0.0; 3]);
    }

    #[test]
    fn write_weight_pure_allocation_mode() {
        let tape = Tape::new();
        let a = tape.leaf(&[3], vec![0.2, 0.5, 0.3]).unwrap();
        let rw = vec![tape.leaf(&[3], vec![0.0, 1.0, 0.0]).unwrap()];
        let c = tape.leaf(&[3], vec![0.0, 0.0, 1.0]).unwrap();
        let mode = tape.leaf(&[3], vec![1.0, 0.0, 0.0]).unwrap();
        let gw = tape.scalar(1.0);
        let w = write_weight(&tape, a, &rw, c, mode, gw).unwrap();
        assert!(close(&tape.value_vec(w), &[0.2, 0.5, 0.3], 1e-15));
    }

    #[test]
    fn write_weight_mass_bounded_by_gate() {
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        for _ in 0..1000 {
            let n = 4;
            let simplex = |rng: &mut ChaCha8Rng| {
                let mut v: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
                let s: f64 = v.iter().sum();
                v.iter_mut().for_each(|x| *x /= s);
                v
            };
            let tape = Tape::new();
            let a = tape.leaf(&[n], simplex(&mut rng)).unwrap();
            let rw = vec![
                tape.leaf(&[n], simplex(&mut rng)).unwrap(),
                tape.leaf(&[n], simplex(&mut rng)).unwrap(),
            ];
            let c = tape.leaf(&[n], simplex(&mut rng)).unwrap();
            let mut mode = simplex(&mut rng);
            mode.truncate(3);
            let ms: f64 = mode.iter().sum();
            mode.iter_mut().for_each(|x| *x /= ms);
            let mode = tape.leaf(&[3], mode).unwrap();
            let g = rng.gen_range(0.0..1.0);
            let gw = tape.scalar(g);
            let w = write_weight(&tape, a, &rw, c, mode, gw).unwrap();
            let total: f64 = tape.value_vec(w).iter().sum();
            assert!(total <= g + 1e-9, "write mass {total} exceeds gate {g}");
        }
    }

    #[test]
    fn memory_write_zero_weight_is_identity() {
        let tape = Tape::new();
        let m = tape.leaf(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let w = tape.zeros(&[2]);
        let e = tape.leaf(&[3], vec![1.0, 1.0, 1.0]).unwrap();
        let v = tape.leaf(&[3], vec![9.0, 9.0, 9.0]).unwrap();
        let out = memory_write(&tape, m, w, e, v).unwrap();
        assert_eq!(tape.value_vec(out), tape.value_vec(m));
    }

    #[test]
    fn memory_write_one_hot_full_erase_replaces_slot() {
        let tape = Tape::new();
        let m = tape.leaf(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let w = tape.leaf(&[2], vec![0.0, 1.0]).unwrap();
        let e = tape.leaf(&[3], vec![1.0, 1.0, 1.0]).unwrap();
        let v = tape.leaf(&[3], vec![-7.0, 8.0, 0.5]).unwrap();
        let out = memory_write(&tape, m, w, e, v).unwrap();
        assert_eq!(tape.value_vec(out), vec![1.0, 2.0, 3.0, -7.0, 8.0, 0.5]);
    }

    #[test]
    fn memory_write_entry_growth_triangle_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(59);
        let tape = Tape::new();
        let n = 3;
        let d = 4;
        let mv: Vec<f64> = (0..n * d).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let vv: Vec<f64> = (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let m = tape.leaf(&[n, d], mv.clone()).unwrap();
        let mut wv: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
        let s: f64 = wv.iter().sum();
        wv.iter_mut().for_each(|x| *x /= s);
        let w = tape.leaf(&[n], wv).unwrap();
        let e = tape.leaf(&[d], (0..d).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap();
        let v = tape.leaf(&[d], vv.clone()).unwrap();
        let out = memory_write(&tape, m, w, e, v).unwrap();
        for i in 0..n {
            for j in 0..d {
                let lhs = tape.value_vec(out)[i * d + j].abs();
                assert!(lhs <= mv[i * d + j].abs() + vv[j].abs() + 1e-12);
            }
        }
    }

    #[test]
    fn read_is_linear_in_memory_for_fixed_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(61);
        let n = 4;
        let d = 3;
        let m1: Vec<f64> = (0..n * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let m2: Vec<f64> = (0..n * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let wv: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();

        let read = |mv: &[f64]| {
            let tape = Tape::new();
            let m = tape.leaf(&[n, d], mv.to_vec()).unwrap();
            let w = tape.leaf(&[n], wv.clone()).unwrap();
            tape.value_vec(tape.vecmat(w, m).unwrap())
        };
        let sum: Vec<f64> = m1.iter().zip(&m2).map(|(a, b)| a + b).collect();
        let r1 = read(&m1);
        let r2 = read(&m2);
        let rs = read(&sum);
        for j in 0..d {
            assert!((rs[j] - (r1[j] + r2[j])).abs() < 1e-12);
        }
    }

    #[test]
    fn mam_step_refused_write_reads_known_slot() {
        // memory holds a known unit row; g_w = 0 and a strong key on it
        let cfg = MemoryConfig { slots: 4, width: 4, read_heads: 1 };
        let layout = InterfaceLayout::new(cfg);
        let tape = Tape::new();

        let mut state = MemoryState::fresh(cfg, vec![vec![0.0; 4]]);
        state.memory[0..4].copy_from_slice(&[0.0, 1.0, 0.0, 0.0]);
        let tstate = TapeMemoryState::from_values(&tape, cfg, &state).unwrap();

        let mut raw = vec![0.0; layout.total()];
        let (s, _) = layout.read_key(0);
        raw[s..s + 4].copy_from_slice(&[0.0, 1.0, 0.0, 0.0]);
        let (bs, _) = layout.read_strengths();
        raw[bs] = 60.0; // oneplus -> ~61
        let (gs, _) = layout.write_gate();
        raw[gs] = -60.0; // sigmoid -> ~0
        let rawv = tape.leaf(&[layout.total()], raw).unwrap();

        let (new_state, readout) = mam_step(&tape, cfg, &tstate, rawv).unwrap();
        let r = tape.value_vec(readout);
        assert!(close(&r, &[0.0, 1.0, 0.0, 0.0], 1e-6), "{r:?}");
        // memory essentially unchanged (write gate ~ 1e-26)
        let m = tape.value_vec(new_state.memory);
        assert!(close(&m, &tape.value_vec(tstate.memory), 1e-12));
    }

    #[test]
    fn mam_step_fresh_state_write_then_read_roundtrip() {
        let cfg = MemoryConfig { slots: 4, width: 4, read_heads: 1 };
        let layout = InterfaceLayout::new(cfg);
        let tape = Tape::new();
        let state = MemoryState::fresh(cfg, vec![vec![0.0; 4]]);
        let tstate = TapeMemoryState::from_values(&tape, cfg, &state).unwrap();

        let value = [0.8, -0.3, 0.5, 0.1];
        let mut raw = vec![0.0; layout.total()];
        let (vs, _) = layout.write_value();
        raw[vs..vs + 4].copy_from_slice(&value);
        let (es, el) = layout.erase();
        raw[es..es + el].fill(60.0); // sigmoid -> ~1
        let (ms, _) = layout.mode_gate();
        raw[ms] = 60.0; // softmax -> allocation mode
        let (gs, _) = layout.write_gate();
        raw[gs] = 60.0; // sigmoid -> ~1
        let (ks, _) = layout.read_key(0);
        raw[ks..ks + 4].copy_from_slice(&value);
        let (bs, _) = layout.read_strengths();
        raw[bs] = 60.0;
        let rawv = tape.leaf(&[layout.total()], raw).unwrap();

        let (new_state, readout) = mam_step(&tape, cfg, &tstate, rawv).unwrap();
        // allocation on fresh state is one-hot at slot 0
        let m = tape.value_vec(new_state.memory);
        assert!(close(&m[0..4], &value, 1e-9), "slot 0 = {:?}", &m[0..4]);
        let r = tape.value_vec(readout);
        assert!(close(&r, &value, 1e-6), "readout {r:?}");
    }

    #[test]
    fn mam_step_gradcheck() {
        let mut rng = ChaCha8Rng::seed_from_u64(67);
        let cfg = CFG;
        let n = cfg.slots;
        let d = cfg.width;
        let point = [
            TensorData::uniform(&[cfg.interface_width()], 1.0, &mut rng),
            TensorData::uniform(&[n, d], 1.0, &mut rng),
            TensorData::new(
                vec![n],
                (0..n).map(|_| rng.gen_range(0.05..0.95)).collect(),
            ),
            TensorData::new(vec![n], {
                let mut v: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
                let s: f64 = v.iter().sum();
                v.iter_mut().for_each(|x| *x /= s);
                v
            }),
        ];
        let err = gradcheck(
            |tape, vars| {
                let state = TapeMemoryState {
                    memory: vars[1],
                    usage: vars[2],
                    read_weights: vec![vars[3]; cfg.read_heads],
                    write_weight: vars[3],
                    read_values: (0..cfg.read_heads).map(|_| tape.zeros(&[d])).collect(),
                };
                let (new_state, readout) = mam_step(tape, cfg, &state, vars[0])?;
                let a = tape.mul(readout, readout)?;
                let b = tape.mul(new_state.memory, new_state.memory)?;
                let la = tape.sum(a);
                let lb = tape.sum(b);
                tape.add(la, lb)
            },
            &point,
            1e-5,
        )
        .unwrap();
        assert!(err <= 1e-4, "max rel err {err}");
    }
}
