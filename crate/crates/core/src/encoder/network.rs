//! Whole-encoder forward and backward passes.

use std::cell::Cell;

use rand::Rng as _;

use super::lstm::{layer_backward, layer_forward, LayerTrace, LstmParams};
use super::{cross_entropy_from_logits, softmax, EncoderConfig};
use crate::rng::{self, Rng};

/// Affine map, row-major `outputs x inputs`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            w: vec![0.0; inputs * outputs],
            b: vec![0.0; outputs],
        }
    }

    fn init(inputs: usize, outputs: usize, rng: &mut Rng) -> Self {
        let mut d = Self::zeros(inputs, outputs);
        let r = 1.0 / (inputs as f64).sqrt();
        for w in d.w.iter_mut() {
            *w = rng.random_range(-r..=r);
        }
        d
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.b
            .iter()
            .enumerate()
            .map(|(r, b)| {
                b + self.w[r * self.inputs..(r + 1) * self.inputs]
                    .iter()
                    .zip(x)
                    .map(|(w, v)| w * v)
                    .sum::<f64>()
            })
            .collect()
    }

    /// Accumulates parameter gradients and returns the input gradient.
    fn backward(&self, x: &[f64], dy: &[f64], grad: &mut Dense) -> Vec<f64> {
        let mut dx = vec![0.0; self.inputs];
        for (r, &d) in dy.iter().enumerate() {
            grad.b[r] += d;
            let row = &self.w[r * self.inputs..(r + 1) * self.inputs];
            let grow = &mut grad.w[r * self.inputs..(r + 1) * self.inputs];
            for j in 0..self.inputs {
                grow[j] += d * x[j];
                dx[j] += row[j] * d;
            }
        }
        dx
    }

    fn zeros_like(&self) -> Self {
        Self::zeros(self.inputs, self.outputs)
    }
}

/// All trainable tensors of an encoder and its head.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    /// One LSTM per input channel (channel_common only).
    pub channel: Vec<LstmParams>,
    pub common: Vec<LstmParams>,
    pub output: Option<Dense>,
    pub head: Dense,
}

/// Named view of one tensor, in canonical serialization order.
pub struct TensorRef<'a> {
    pub name: String,
    pub dims: Vec<usize>,
    pub values: &'a [f64],
}

impl EncoderParams {
    fn build(
        cfg: &EncoderConfig,
        mut lstm: impl FnMut(usize, usize) -> LstmParams,
        mut dense: impl FnMut(usize, usize) -> Dense,
    ) -> Self {
        let layout = &cfg.layout;
        let channel: Vec<LstmParams> = match layout.channel_hidden {
            Some(h) => (0..cfg.channel_count).map(|_| lstm(1, h)).collect(),
            None => Vec::new(),
        };
        let mut input = match layout.channel_hidden {
            Some(h) => h * cfg.channel_count,
            None => cfg.channel_count,
        };
        let mut common = Vec::with_capacity(layout.common.len());
        for &h in &layout.common {
            common.push(lstm(input, h));
            input = h;
        }
        let output = layout.output.map(|o| dense(input, o));
        let head = dense(layout.feature_dim(), cfg.class_count);
        Self {
            channel,
            common,
            output,
            head,
        }
    }

    pub fn zeros(cfg: &EncoderConfig) -> Self {
        Self::build(cfg, LstmParams::zeros, Dense::zeros)
    }

    /// Seeded initialization; every tensor group draws from its own substream.
    pub fn init(cfg: &EncoderConfig, seed: u64) -> Self {
        let counter = Cell::new(0u64);
        let next = || {
            counter.set(counter.get() + 1);
            rng::stream(seed, &[0xe1c0, counter.get()])
        };
        let fb = cfg.forget_bias;
        Self::build(
            cfg,
            |i, h| LstmParams::init(i, h, fb, &mut next()),
            |i, o| Dense::init(i, o, &mut next()),
        )
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            channel: self.channel.iter().map(LstmParams::zeros_like).collect(),
            common: self.common.iter().map(LstmParams::zeros_like).collect(),
            output: self.output.as_ref().map(Dense::zeros_like),
            head: self.head.zeros_like(),
        }
    }

    pub fn tensors(&self) -> Vec<TensorRef<'_>> {
        let mut out = Vec::new();
        for (i, p) in self.channel.iter().enumerate() {
            push_lstm(&mut out, format!("channel.{i}"), p);
        }
        for (i, p) in self.common.iter().enumerate() {
            push_lstm(&mut out, format!("common.{i}"), p);
        }
        if let Some(d) = &self.output {
            push_dense(&mut out, "output".into(), d);
        }
        push_dense(&mut out, "head".into(), &self.head);
        out
    }

    /// Mutable slices in the same order as [`EncoderParams::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for p in self.channel.iter_mut().chain(self.common.iter_mut()) {
            out.push(&mut p.w);
            out.push(&mut p.b);
        }
        if let Some(d) = &mut self.output {
            out.push(&mut d.w);
            out.push(&mut d.b);
        }
        out.push(&mut self.head.w);
        out.push(&mut self.head.b);
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.values.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|t| t.values.iter().all(|v| v.is_finite()))
    }

    /// `self += scale * other`, tensor by tensor.
    pub fn add_scaled(&mut self, other: &EncoderParams, scale: f64) {
        let src: Vec<Vec<f64>> = other.tensors().iter().map(|t| t.values.to_vec()).collect();
        for (dst, src) in self.tensors_mut().into_iter().zip(src) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += scale * s;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            for v in t.iter_mut() {
                *v *= factor;
            }
        }
    }

    /// Encoder output for a time-major input.
    pub fn features(&self, cfg: &EncoderConfig, input: &[Vec<f64>]) -> Vec<f64> {
        self.forward(cfg, input, false).features
    }

    pub(crate) fn forward(&self, cfg: &EncoderConfig, input: &[Vec<f64>], keep: bool) -> Forward {
        let steps = input.len();
        let mut channel_traces = Vec::new();
        let mut layer_input: Vec<Vec<f64>> = if self.channel.is_empty() {
            input.to_vec()
        } else {
            let h = cfg.layout.channel_hidden.unwrap_or(0);
            let mut concat = vec![Vec::with_capacity(h * self.channel.len()); steps];
            for (c, p) in self.channel.iter().enumerate() {
                let xs: Vec<Vec<f64>> = input.iter().map(|x| vec![x[c]]).collect();
                let trace = layer_forward(p, &xs, keep);
                for (t, row) in concat.iter_mut().enumerate() {
                    row.extend_from_slice(&trace.outputs[t]);
                }
                channel_traces.push(trace);
            }
            concat
        };
        let mut common_traces = Vec::with_capacity(self.common.len());
        for p in &self.common {
            let trace = layer_forward(p, &layer_input, keep);
            layer_input = trace.outputs.clone();
            common_traces.push(trace);
        }
        let last = layer_input.last().cloned().unwrap_or_else(|| {
            vec![0.0; self.common.last().map_or(0, |p| p.hidden_size)]
        });
        let (features, pre_output) = match &self.output {
            Some(d) => {
                let pre = d.apply(&last);
                (pre.iter().map(|v| v.max(0.0)).collect(), Some(pre))
            }
            None => (last.clone(), None),
        };
        let logits = self.head.apply(&features);
        Forward {
            steps,
            channel_traces,
            common_traces,
            last_hidden: last,
            pre_output,
            features,
            logits,
        }
    }

    /// Loss and full parameter gradient for one labelled input.
    pub fn loss_and_grad(&self, cfg: &EncoderConfig, input: &[Vec<f64>], label: usize) -> (f64, EncoderParams) {
        let fwd = self.forward(cfg, input, true);
        let loss = cross_entropy_from_logits(&fwd.logits, label);
        let mut grad = self.zeros_like();
        let mut dlogits = softmax(&fwd.logits);
        dlogits[label] -= 1.0;
        let dfeat = self.head.backward(&fwd.features, &dlogits, &mut grad.head);
        let dlast = match (&self.output, &fwd.pre_output) {
            (Some(d), Some(pre)) => {
                let dpre: Vec<f64> = dfeat
                    .iter()
                    .zip(pre)
                    .map(|(g, p)| if *p > 0.0 { *g } else { 0.0 })
                    .collect();
                d.backward(&fwd.last_hidden, &dpre, grad.output.as_mut().expect("output grad"))
            }
            _ => dfeat,
        };
        if fwd.steps == 0 {
            return (loss, grad);
        }
        let top = self.common.len() - 1;
        let mut d_out = vec![vec![0.0; self.common[top].hidden_size]; fwd.steps];
        d_out[fwd.steps - 1] = dlast;
        for l in (0..self.common.len()).rev() {
            d_out = layer_backward(&self.common[l], &fwd.common_traces[l], &d_out, &mut grad.common[l]);
        }
        if !self.channel.is_empty() {
            let h = self.channel[0].hidden_size;
            for (c, p) in self.channel.iter().enumerate() {
                let d_c: Vec<Vec<f64>> = d_out.iter().map(|row| row[c * h..(c + 1) * h].to_vec()).collect();
                layer_backward(p, &fwd.channel_traces[c], &d_c, &mut grad.channel[c]);
            }
        }
        (loss, grad)
    }

    pub fn loss(&self, cfg: &EncoderConfig, input: &[Vec<f64>], label: usize) -> f64 {
        cross_entropy_from_logits(&self.forward(cfg, input, false).logits, label)
    }
}

fn push_lstm<'a>(out: &mut Vec<TensorRef<'a>>, prefix: String, p: &'a LstmParams) {
    let cols = p.input_size + p.hidden_size;
    out.push(TensorRef {
        name: format!("{prefix}.w"),
        dims: vec![4 * p.hidden_size, cols],
        values: &p.w,
    });
    out.push(TensorRef {
        name: format!("{prefix}.b"),
        dims: vec![4 * p.hidden_size],
        values: &p.b,
    });
}

fn push_dense<'a>(out: &mut Vec<TensorRef<'a>>, prefix: String, d: &'a Dense) {
    out.push(TensorRef {
        name: format!("{prefix}.w"),
        dims: vec![d.outputs, d.inputs],
        values: &d.w,
    });
    out.push(TensorRef {
        name: format!("{prefix}.b"),
        dims: vec![d.outputs],
        values: &d.b,
    });
}

pub(crate) struct Forward {
    steps: usize,
    channel_traces: Vec<LayerTrace>,
    common_traces: Vec<LayerTrace>,
    last_hidden: Vec<f64>,
    pre_output: Option<Vec<f64>>,
    pub features: Vec<f64>,
    pub logits: Vec<f64>,
}
