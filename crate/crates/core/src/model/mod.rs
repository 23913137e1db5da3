//! HistLSTM: a frozen post encoder, a single-layer LSTM over the user's
//! history, and a dense ReLU + softmax head.
//!
//! Post-level samples concatenate the current post's embedding with the final
//! hidden state before the head; user-level samples feed the hidden state
//! alone.
//!
//! # Parameter layout
//!
//! All parameters live in one flat vector, in this canonical order (every
//! matrix row-major):
//!
//! | block | shape          | notes                                  |
//! |-------|----------------|----------------------------------------|
//! | `w_x` | `4H × d`       | gate rows stacked as input, forget, cell, output |
//! | `w_h` | `4H × H`       | same gate order                        |
//! | `b`   | `4H`           | same gate order                        |
//! | `w_y` | `classes × K`  | `K = d + H` post-level (current post first), `K = H` user-level |
//! | `b_y` | `classes`      |                                        |
//!
//! Gradients returned by [`HistLstm::backward`] use the same order.

pub mod encoder;

use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use encoder::{encode_post, EncoderConfig, EncoderKind};

use crate::error::{invalid, Error, Result};
use crate::loss::{cb_focal_grad, cb_focal_loss, CbFocalConfig};
use crate::numerics::{axpy, gemv_acc, gemv_t_acc, outer_acc, sigmoid, softmax, RngStream, Vector};

/// Whether the label belongs to the latest post or to the whole timeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    PostLevel,
    UserLevel,
}

/// A sample after encoding: embedded history in chronological order, the
/// embedded post under assessment (post-level only) and the label.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedSample {
    pub history: Vec<Vector>,
    pub current: Option<Vector>,
    pub label: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub task: TaskKind,
    pub encoder: EncoderConfig,
    pub hidden: usize,
    pub classes: usize,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.encoder.dim == 0 || self.hidden == 0 {
            return Err(invalid("model dims must be positive"));
        }
        if self.classes < 2 {
            return Err(invalid("need at least two classes"));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.encoder.dim
    }

    pub fn head_input_dim(&self) -> usize {
        match self.task {
            TaskKind::PostLevel => self.encoder.dim + self.hidden,
            TaskKind::UserLevel => self.hidden,
        }
    }

    pub fn layout(&self) -> Layout {
        let (d, h, c, k) = (
            self.input_dim(),
            self.hidden,
            self.classes,
            self.head_input_dim(),
        );
        let w_x = 0..4 * h * d;
        let w_h = w_x.end..w_x.end + 4 * h * h;
        let b = w_h.end..w_h.end + 4 * h;
        let w_y = b.end..b.end + c * k;
        let b_y = w_y.end..w_y.end + c;
        Layout {
            w_x,
            w_h,
            b,
            w_y,
            b_y,
        }
    }

    pub fn param_count(&self) -> usize {
        self.layout().b_y.end
    }
}

/// Offsets of each parameter block inside the flat vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub w_x: Range<usize>,
    pub w_h: Range<usize>,
    pub b: Range<usize>,
    pub w_y: Range<usize>,
    pub b_y: Range<usize>,
}

impl Layout {
    /// Range covering every LSTM parameter.
    pub fn lstm(&self) -> Range<usize> {
        self.w_x.start..self.b.end
    }

    pub fn head(&self) -> Range<usize> {
        self.w_y.start..self.b_y.end
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistLstm {
    config: ModelConfig,
    params: Vec<f64>,
}

/// Per-step activations kept for backpropagation.
struct LstmTrace {
    hidden: usize,
    /// Post-activation gates `[i, f, g, o]` per step.
    gates: Vec<f64>,
    cell: Vec<f64>,
    tanh_cell: Vec<f64>,
    /// `h_t` per step.
    out: Vec<f64>,
}

impl LstmTrace {
    fn steps(&self) -> usize {
        self.cell.len() / self.hidden
    }

    fn final_hidden(&self) -> Vector {
        let h = self.hidden;
        match self.steps() {
            0 => vec![0.0; h],
            n => self.out[(n - 1) * h..n * h].to_vec(),
        }
    }
}

struct HeadTrace {
    input: Vector,
    pre: Vector,
    probs: Vector,
}

/// Initial forget-gate bias. Long noisy histories need the cell state to
/// carry evidence across many steps from the first update on.
pub const FORGET_BIAS: f64 = 2.0;

impl HistLstm {
    /// Uniform(-k, k) initialization with `k = 1/sqrt(fan_in)`, forget-gate
    /// bias set to [`FORGET_BIAS`] and head bias set to 1 so no ReLU logit starts dead.
    pub fn new(config: ModelConfig, rng: &mut RngStream) -> Result<Self> {
        config.validate()?;
        let layout = config.layout();
        let h = config.hidden;
        let mut params = vec![0.0; config.param_count()];
        let k_lstm = 1.0 / ((config.input_dim() + h) as f64).sqrt();
        for p in &mut params[layout.lstm()] {
            *p = rng.uniform_range(-k_lstm, k_lstm);
        }
        for p in &mut params[layout.b.start + h..layout.b.start + 2 * h] {
            *p = FORGET_BIAS;
        }
        let k_head = 1.0 / (config.head_input_dim() as f64).sqrt();
        for p in &mut params[layout.w_y.clone()] {
            *p = rng.uniform_range(-k_head, k_head);
        }
        for p in &mut params[layout.b_y.clone()] {
            *p = 1.0;
        }
        Ok(Self { config, params })
    }

    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            params: vec![0.0; config.param_count()],
            config,
        })
    }

    pub fn from_params(config: ModelConfig, params: Vec<f64>) -> Result<Self> {
        config.validate()?;
        if params.len() != config.param_count() {
            return Err(Error::DimensionMismatch {
                expected: config.param_count(),
                got: params.len(),
            });
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn layout(&self) -> Layout {
        self.config.layout()
    }

    fn trace_lstm(&self, history: &[Vector]) -> Result<LstmTrace> {
        let d = self.config.input_dim();
        let h = self.config.hidden;
        let layout = self.layout();
        let w_x = &self.params[layout.w_x];
        let w_h = &self.params[layout.w_h];
        let bias = &self.params[layout.b];
        let n = history.len();
        let mut trace = LstmTrace {
            hidden: h,
            gates: Vec::with_capacity(n * 4 * h),
            cell: Vec::with_capacity(n * h),
            tanh_cell: Vec::with_capacity(n * h),
            out: Vec::with_capacity(n * h),
        };
        let mut pre = vec![0.0; 4 * h];
        let zeros = vec![0.0; h];
        for (t, x) in history.iter().enumerate() {
            if x.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: x.len(),
                });
            }
            pre.copy_from_slice(bias);
            gemv_acc(&mut pre, w_x, d, x);
            let (h_prev, c_prev) = if t == 0 {
                (&zeros[..], &zeros[..])
            } else {
                (
                    &trace.out[(t - 1) * h..t * h],
                    &trace.cell[(t - 1) * h..t * h],
                )
            };
            gemv_acc(&mut pre, w_h, h, h_prev);
            let mut c_new = Vec::with_capacity(h);
            for j in 0..h {
                let i = sigmoid(pre[j]);
                let f = sigmoid(pre[h + j]);
                let g = pre[2 * h + j].tanh();
                let o = sigmoid(pre[3 * h + j]);
                c_new.push(f * c_prev[j] + i * g);
                pre[j] = i;
                pre[h + j] = f;
                pre[2 * h + j] = g;
                pre[3 * h + j] = o;
            }
            for j in 0..h {
                let tc = c_new[j].tanh();
                trace.tanh_cell.push(tc);
                trace.out.push(pre[3 * h + j] * tc);
            }
            trace.gates.extend_from_slice(&pre);
            trace.cell.extend_from_slice(&c_new);
        }
        if trace.out.iter().any(|v| !v.is_finite()) || trace.cell.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteIn { layer: "lstm" });
        }
        Ok(trace)
    }

    /// Final hidden state after feeding `history` in order; the zero state for
    /// an empty history.
    pub fn lstm_forward(&self, history: &[Vector]) -> Result<Vector> {
        Ok(self.trace_lstm(history)?.final_hidden())
    }

    fn head_forward(&self, input: Vector) -> Result<HeadTrace> {
        let k = self.config.head_input_dim();
        if input.len() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                got: input.len(),
            });
        }
        let layout = self.layout();
        let mut pre = self.params[layout.b_y].to_vec();
        gemv_acc(&mut pre, &self.params[layout.w_y], k, &input);
        if pre.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteIn { layer: "head" });
        }
        let logits: Vector = pre.iter().map(|&a| a.max(0.0)).collect();
        let probs = softmax(&logits);
        Ok(HeadTrace { input, pre, probs })
    }

    /// `softmax(ReLU(W_y (current ⊕ hidden) + b_y))`.
    pub fn classify_post_level(&self, current: &[f64], hidden: &[f64]) -> Result<Vector> {
        if self.config.task != TaskKind::PostLevel {
            return Err(invalid("post-level head called on a user-level model"));
        }
        self.check_hidden(hidden)?;
        if current.len() != self.config.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.config.input_dim(),
                got: current.len(),
            });
        }
        let mut input = current.to_vec();
        input.extend_from_slice(hidden);
        Ok(self.head_forward(input)?.probs)
    }

    /// `softmax(ReLU(W_y hidden + b_y))`.
    pub fn classify_user_level(&self, hidden: &[f64]) -> Result<Vector> {
        if self.config.task != TaskKind::UserLevel {
            return Err(invalid("user-level head called on a post-level model"));
        }
        self.check_hidden(hidden)?;
        Ok(self.head_forward(hidden.to_vec())?.probs)
    }

    fn check_hidden(&self, hidden: &[f64]) -> Result<()> {
        if hidden.len() != self.config.hidden {
            return Err(Error::DimensionMismatch {
                expected: self.config.hidden,
                got: hidden.len(),
            });
        }
        Ok(())
    }

    fn head_input(&self, sample: &EncodedSample, hidden: Vector) -> Result<Vector> {
        match self.config.task {
            TaskKind::UserLevel => Ok(hidden),
            TaskKind::PostLevel => {
                let current = sample
                    .current
                    .as_ref()
                    .ok_or_else(|| invalid("post-level sample without a current post"))?;
                if current.len() != self.config.input_dim() {
                    return Err(Error::DimensionMismatch {
                        expected: self.config.input_dim(),
                        got: current.len(),
                    });
                }
                let mut input = current.clone();
                input.extend_from_slice(&hidden);
                Ok(input)
            }
        }
    }

    pub fn predict_proba(&self, sample: &EncodedSample) -> Result<Vector> {
        let hidden = self.lstm_forward(&sample.history)?;
        let input = self.head_input(sample, hidden)?;
        Ok(self.head_forward(input)?.probs)
    }

    /// Arg-max class; ties resolve to the lowest index.
    pub fn predict(&self, sample: &EncodedSample) -> Result<usize> {
        let probs = self.predict_proba(sample)?;
        Ok(argmax(&probs))
    }

    pub fn sample_loss(&self, sample: &EncodedSample, loss: &CbFocalConfig) -> Result<f64> {
        let probs = self.predict_proba(sample)?;
        cb_focal_loss(&probs, sample.label, loss)
    }

    /// Loss and its exact gradient with respect to every parameter, in the
    /// canonical flat order.
    pub fn backward(&self, sample: &EncodedSample, loss: &CbFocalConfig) -> Result<(f64, Vector)> {
        let d = self.config.input_dim();
        let h = self.config.hidden;
        let k = self.config.head_input_dim();
        let layout = self.layout();

        let trace = self.trace_lstm(&sample.history)?;
        let input = self.head_input(sample, trace.final_hidden())?;
        let head = self.head_forward(input)?;
        let value = cb_focal_loss(&head.probs, sample.label, loss)?;
        let d_logits = cb_focal_grad(&head.probs, sample.label, loss)?;

        let mut grad = vec![0.0; self.config.param_count()];

        // Head: ReLU passes gradient only where the pre-activation is positive.
        let d_pre: Vector = d_logits
            .iter()
            .zip(&head.pre)
            .map(|(&g, &a)| if a > 0.0 { g } else { 0.0 })
            .collect();
        outer_acc(&mut grad[layout.w_y.clone()], &d_pre, &head.input);
        axpy(&mut grad[layout.b_y.clone()], 1.0, &d_pre);
        let mut d_input = vec![0.0; k];
        gemv_t_acc(&mut d_input, &self.params[layout.w_y.clone()], k, &d_pre);
        let mut d_h: Vector = match self.config.task {
            TaskKind::PostLevel => d_input[d..].to_vec(),
            TaskKind::UserLevel => d_input,
        };

        // Backpropagation through time.
        let w_h = &self.params[layout.w_h.clone()];
        let mut d_c = vec![0.0; h];
        let mut d_pre_gates = vec![0.0; 4 * h];
        let zeros = vec![0.0; h];
        for t in (0..trace.steps()).rev() {
            let gates = &trace.gates[t * 4 * h..(t + 1) * 4 * h];
            let tanh_c = &trace.tanh_cell[t * h..(t + 1) * h];
            let c_prev = if t == 0 {
                &zeros[..]
            } else {
                &trace.cell[(t - 1) * h..t * h]
            };
            let h_prev = if t == 0 {
                &zeros[..]
            } else {
                &trace.out[(t - 1) * h..t * h]
            };
            for j in 0..h {
                let (i, f, g, o) = (gates[j], gates[h + j], gates[2 * h + j], gates[3 * h + j]);
                let tc = tanh_c[j];
                let d_o = d_h[j] * tc;
                d_c[j] += d_h[j] * o * (1.0 - tc * tc);
                d_pre_gates[j] = d_c[j] * g * i * (1.0 - i);
                d_pre_gates[h + j] = d_c[j] * c_prev[j] * f * (1.0 - f);
                d_pre_gates[2 * h + j] = d_c[j] * i * (1.0 - g * g);
                d_pre_gates[3 * h + j] = d_o * o * (1.0 - o);
                d_c[j] *= f;
            }
            outer_acc(
                &mut grad[layout.w_x.clone()],
                &d_pre_gates,
                &sample.history[t],
            );
            outer_acc(&mut grad[layout.w_h.clone()], &d_pre_gates, h_prev);
            axpy(&mut grad[layout.b.clone()], 1.0, &d_pre_gates);
            d_h.iter_mut().for_each(|v| *v = 0.0);
            gemv_t_acc(&mut d_h, w_h, h, &d_pre_gates);
        }

        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteIn { layer: "gradient" });
        }
        Ok((value, grad))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(file, &Checkpoint::from_model(self))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::io::BufReader::new(std::fs::File::open(path)?);
        let ckpt: Checkpoint = serde_json::from_reader(file)?;
        ckpt.into_model()
    }
}

pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

pub const CHECKPOINT_FORMAT: &str = "histdp-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// On-disk model container (JSON).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config: ModelConfig,
    pub param_count: usize,
    pub params: Vec<f64>,
}

impl Checkpoint {
    pub fn from_model(model: &HistLstm) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            config: model.config,
            param_count: model.params.len(),
            params: model.params.clone(),
        }
    }

    pub fn into_model(self) -> Result<HistLstm> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(invalid(format!(
                "not a checkpoint: format {:?}",
                self.format
            )));
        }
        if self.version != CHECKPOINT_VERSION {
            return Err(invalid(format!(
                "unsupported checkpoint version {}",
                self.version
            )));
        }
        if self.param_count != self.params.len() {
            return Err(Error::DimensionMismatch {
                expected: self.param_count,
                got: self.params.len(),
            });
        }
        HistLstm::from_params(self.config, self.params)
    }
}
