//! Neural network layers: linear, LSTM cell, convolution/pooling, and the
//! column-wise CNN encoder that turns a line image into a feature sequence.

use rand::Rng;

use crate::params::{Binder, ParamStore, TensorData};
use crate::tensor::{Result, Tape, TensorError, Var};

/// `w . x + b`.
pub fn linear(tape: &Tape, w: Var, b: Var, x: Var) -> Result<Var> {
    let wx = tape.matvec(w, x)?;
    tape.add(wx, b)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LstmDims {
    pub input: usize,
    pub hidden: usize,
}

impl LstmDims {
    /// Shape of the packed gate weight matrix: one row block per gate in
    /// the fixed order input, forget, candidate, output.
    pub fn weight_shape(&self) -> [usize; 2] {
        [4 * self.hidden, self.input + self.hidden]
    }
}

pub struct LstmStepOut {
    pub h: Var,
    pub c: Var,
    /// Controller output; identical to `h` by convention.
    pub o: Var,
}

/// One LSTM recurrence step with sigmoid gates and tanh squashing.
pub fn lstm_step(
    tape: &Tape,
    dims: LstmDims,
    w: Var,
    b: Var,
    x: Var,
    h_prev: Var,
    c_prev: Var,
) -> Result<LstmStepOut> {
    let hs = dims.hidden;
    let xs = tape.shape(x);
    if xs != [dims.input] {
        return Err(TensorError::ShapeMismatch {
            op: "lstm_step",
            detail: format!("input width {:?} vs configured {}", xs, dims.input),
        });
    }
    let z = tape.concat(&[x, h_prev], 0)?;
    let pre = linear(tape, w, b, z)?;
    let i_gate = tape.sigmoid(tape.slice(pre, 0, hs)?);
    let f_gate = tape.sigmoid(tape.slice(pre, hs, hs)?);
    let g_cand = tape.tanh(tape.slice(pre, 2 * hs, hs)?);
    let o_gate = tape.sigmoid(tape.slice(pre, 3 * hs, hs)?);
    let keep = tape.mul(f_gate, c_prev)?;
    let write = tape.mul(i_gate, g_cand)?;
    let c = tape.add(keep, write)?;
    let h = tape.mul(o_gate, tape.tanh(c))?;
    Ok(LstmStepOut { h, c, o: h })
}

/// Cross-correlation with bias (nonlinearity is a separate stack layer).
pub fn conv2d(
    tape: &Tape,
    kernel: Var,
    bias: Var,
    image: Var,
    stride: (usize, usize),
    pad: (usize, usize),
) -> Result<Var> {
    tape.conv2d(image, kernel, bias, stride, pad)
}

pub fn maxpool2d(tape: &Tape, win: (usize, usize), stride: (usize, usize), image: Var) -> Result<Var> {
    tape.maxpool2d(image, win, stride)
}

#[derive(Debug, Clone, Copy)]
pub struct ConvSpec {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: (usize, usize),
    pub pad: (usize, usize),
}

#[derive(Debug, Clone, Copy)]
pub enum StackLayer {
    Conv(ConvSpec),
    Relu,
    /// Window and stride are equal; trailing rows/columns that do not fill
    /// a window are truncated.
    Pool { win: (usize, usize) },
}

/// Ordered convolution/pooling layers plus the final per-column linear
/// projection onto the sequence feature width.
#[derive(Debug, Clone)]
pub struct ConvStack {
    pub input_height: usize,
    pub layers: Vec<StackLayer>,
    pub feature_width: usize,
}

impl ConvStack {
    /// Stack used at full scale: four 3x3 conv blocks that collapse a
    /// 32-row line to a 2-row map with T = W/4 columns of length 128,
    /// projected to 64 features per column.
    pub fn default_ocr() -> Self {
        ConvStack {
            input_height: 32,
            layers: Self::block_layers(&[16, 32, 48, 64]),
            feature_width: 64,
        }
    }

    /// Quarter-width stack for fast tests; same geometry, 16-wide features.
    pub fn tiny() -> Self {
        ConvStack {
            input_height: 32,
            layers: Self::block_layers(&[4, 8, 12, 16]),
            feature_width: 16,
        }
    }

    fn block_layers(channels: &[usize; 4]) -> Vec<StackLayer> {
        let conv = |in_ch, out_ch| {
            StackLayer::Conv(ConvSpec {
                in_ch,
                out_ch,
                kh: 3,
                kw: 3,
                stride: (1, 1),
                pad: (1, 1),
            })
        };
        vec![
            conv(1, channels[0]),
            StackLayer::Relu,
            StackLayer::Pool { win: (2, 2) },
            conv(channels[0], channels[1]),
            StackLayer::Relu,
            StackLayer::Pool { win: (2, 2) },
            conv(channels[1], channels[2]),
            StackLayer::Relu,
            StackLayer::Pool { win: (2, 1) },
            conv(channels[2], channels[3]),
            StackLayer::Relu,
            StackLayer::Pool { win: (2, 1) },
        ]
    }

    /// Output geometry (channels, rows, columns) for an input of the
    /// configured height and the given width.
    pub fn geometry(&self, width: usize) -> (usize, usize, usize) {
        let (mut ch, mut h, mut w) = (1usize, self.input_height, width);
        for layer in &self.layers {
            match layer {
                StackLayer::Conv(c) => {
                    h = (h + 2 * c.pad.0 - c.kh) / c.stride.0 + 1;
                    w = (w + 2 * c.pad.1 - c.kw) / c.stride.1 + 1;
                    ch = c.out_ch;
                }
                StackLayer::Relu => {}
                StackLayer::Pool { win } => {
                    h = (h - win.0) / win.0 + 1;
                    w = (w - win.1) / win.1 + 1;
                }
            }
        }
        (ch, h, w)
    }

    /// Length of one flattened column before projection.
    pub fn column_len(&self, width: usize) -> usize {
        let (ch, h, _) = self.geometry(width);
        ch * h
    }

    pub fn output_columns(&self, width: usize) -> usize {
        self.geometry(width).2
    }

    /// Minimum image width the pooling chain accepts.
    pub fn min_width(&self) -> usize {
        4
    }

    pub fn init_params<R: Rng>(&self, store: &mut ParamStore, prefix: &str, rng: &mut R) {
        let mut conv_idx = 0;
        for layer in &self.layers {
            if let StackLayer::Conv(c) = layer {
                conv_idx += 1;
                let fan_in = (c.in_ch * c.kh * c.kw) as f64;
                let scale = (1.0 / fan_in).sqrt();
                store.insert(
                    format!("{prefix}.conv{conv_idx}.weight"),
                    TensorData::uniform(&[c.out_ch, c.in_ch, c.kh, c.kw], scale, rng),
                );
                store.insert(
                    format!("{prefix}.conv{conv_idx}.bias"),
                    TensorData::zeros(&[c.out_ch]),
                );
            }
        }
        // projection needs a width-independent input length; height 32
        // collapses to 2 rows regardless of width
        let col = self.column_len(self.min_width());
        let scale = (1.0 / col as f64).sqrt();
        store.insert(
            format!("{prefix}.proj.weight"),
            TensorData::uniform(&[self.feature_width, col], scale, rng),
        );
        store.insert(format!("{prefix}.proj.bias"), TensorData::zeros(&[self.feature_width]));
    }

    /// Applies the stack to a `1 x H x W` image node and reads the final
    /// map column by column (all channels, all rows), projecting each
    /// flattened column to the feature width.
    pub fn encode(&self, tape: &Tape, bind: &Binder, prefix: &str, image: Var) -> Result<Vec<Var>> {
        let shape = tape.shape(image);
        if shape.len() != 3 || shape[0] != 1 || shape[1] != self.input_height {
            return Err(TensorError::ShapeMismatch {
                op: "cnn_encode",
                detail: format!(
                    "expected 1x{}xW image, got {:?}",
                    self.input_height, shape
                ),
            });
        }
        let mut x = image;
        let mut conv_idx = 0;
        for layer in &self.layers {
            match layer {
                StackLayer::Conv(c) => {
                    conv_idx += 1;
                    let w = bind.var(&format!("{prefix}.conv{conv_idx}.weight"));
                    let b = bind.var(&format!("{prefix}.conv{conv_idx}.bias"));
                    x = conv2d(tape, w, b, x, c.stride, c.pad)?;
                }
                StackLayer::Relu => x = tape.relu(x),
                StackLayer::Pool { win } => x = maxpool2d(tape, *win, *win, x)?,
            }
        }
        let map_shape = tape.shape(x);
        let (ch, h, t) = (map_shape[0], map_shape[1], map_shape[2]);
        let pw = bind.var(&format!("{prefix}.proj.weight"));
        let pb = bind.var(&format!("{prefix}.proj.bias"));
        let mut out = Vec::with_capacity(t);
        let mut idx = Vec::with_capacity(ch * h);
        for col in 0..t {
            idx.clear();
            for c in 0..ch {
                for row in 0..h {
                    idx.push(c * h * t + row * t + col);
                }
            }
            let column = tape.gather(x, &idx)?;
            out.push(linear(tape, pw, pb, column)?);
        }
        Ok(out)
    }
}

/// Initializes one LSTM's packed weight, bias, and learned initial state.
/// The forget-gate bias block starts at 1.
pub fn init_lstm<R: Rng>(store: &mut ParamStore, prefix: &str, dims: LstmDims, rng: &mut R) {
    let [rows, cols] = dims.weight_shape();
    let scale = (1.0 / cols as f64).sqrt();
    store.insert(format!("{prefix}.w"), TensorData::uniform(&[rows, cols], scale, rng));
    let mut bias = vec![0.0; rows];
    for v in bias.iter_mut().skip(dims.hidden).take(dims.hidden) {
        *v = 1.0;
    }
    store.insert(format!("{prefix}.b"), TensorData::new(vec![rows], bias));
    store.insert(format!("{prefix}.h0"), TensorData::zeros(&[dims.hidden]));
    store.insert(format!("{prefix}.c0"), TensorData::zeros(&[dims.hidden]));
}
