//! LSTM cell and layer recurrences with hand-written backward passes.

use rand::Rng as _;

use crate::rng::Rng;

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Gate weights over the concatenated `[input, previous hidden]` vector.
///
/// `w` is row-major `(4 * hidden) x (input + hidden)` with gate blocks in the
/// order input, forget, cell candidate, output; `b` has `4 * hidden` entries.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    pub input_size: usize,
    pub hidden_size: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl LstmParams {
    pub fn zeros(input_size: usize, hidden_size: usize) -> Self {
        Self {
            input_size,
            hidden_size,
            w: vec![0.0; 4 * hidden_size * (input_size + hidden_size)],
            b: vec![0.0; 4 * hidden_size],
        }
    }

    /// Uniform weights in `[-r, r]`, `r = 1 / sqrt(hidden)`; forget-gate
    /// biases set to `forget_bias`, other biases zero.
    pub fn init(input_size: usize, hidden_size: usize, forget_bias: f64, rng: &mut Rng) -> Self {
        let mut p = Self::zeros(input_size, hidden_size);
        let r = 1.0 / (hidden_size as f64).sqrt();
        for w in p.w.iter_mut() {
            *w = rng.random_range(-r..=r);
        }
        p.b[hidden_size..2 * hidden_size].fill(forget_bias);
        p
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.input_size, self.hidden_size)
    }

    fn cols(&self) -> usize {
        self.input_size + self.hidden_size
    }

    #[cfg(test)]
    pub(crate) fn shape_ok(&self) -> bool {
        self.w.len() == 4 * self.hidden_size * self.cols() && self.b.len() == 4 * self.hidden_size
    }
}

/// Activations of one time step kept for the backward pass.
#[derive(Debug, Clone)]
pub(crate) struct StepCache {
    /// `[x, h_prev]`
    xh: Vec<f64>,
    c_prev: Vec<f64>,
    i: Vec<f64>,
    f: Vec<f64>,
    g: Vec<f64>,
    o: Vec<f64>,
    tanh_c: Vec<f64>,
}

fn step_cached(p: &LstmParams, x: &[f64], h: &[f64], c: &[f64]) -> (Vec<f64>, Vec<f64>, StepCache) {
    let hs = p.hidden_size;
    let cols = p.cols();
    let mut xh = Vec::with_capacity(cols);
    xh.extend_from_slice(x);
    xh.extend_from_slice(h);
    let mut z = p.b.clone();
    for (r, zr) in z.iter_mut().enumerate() {
        let row = &p.w[r * cols..(r + 1) * cols];
        *zr += row.iter().zip(&xh).map(|(w, v)| w * v).sum::<f64>();
    }
    let i: Vec<f64> = z[..hs].iter().map(|&v| sigmoid(v)).collect();
    let f: Vec<f64> = z[hs..2 * hs].iter().map(|&v| sigmoid(v)).collect();
    let g: Vec<f64> = z[2 * hs..3 * hs].iter().map(|&v| v.tanh()).collect();
    let o: Vec<f64> = z[3 * hs..].iter().map(|&v| sigmoid(v)).collect();
    let c_new: Vec<f64> = (0..hs).map(|k| f[k] * c[k] + i[k] * g[k]).collect();
    let tanh_c: Vec<f64> = c_new.iter().map(|v| v.tanh()).collect();
    let h_new: Vec<f64> = (0..hs).map(|k| o[k] * tanh_c[k]).collect();
    let cache = StepCache {
        xh,
        c_prev: c.to_vec(),
        i,
        f,
        g,
        o,
        tanh_c,
    };
    (h_new, c_new, cache)
}

/// One recurrence step: returns `(h', c')`.
pub fn lstm_step(p: &LstmParams, x: &[f64], h: &[f64], c: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let (h, c, _) = step_cached(p, x, h, c);
    (h, c)
}

/// Forward pass of a layer over a whole sequence from zero state.
#[derive(Debug, Clone)]
pub(crate) struct LayerTrace {
    pub outputs: Vec<Vec<f64>>,
    steps: Vec<StepCache>,
}

pub(crate) fn layer_forward(p: &LstmParams, inputs: &[Vec<f64>], keep: bool) -> LayerTrace {
    let mut h = vec![0.0; p.hidden_size];
    let mut c = vec![0.0; p.hidden_size];
    let mut outputs = Vec::with_capacity(inputs.len());
    let mut steps = Vec::with_capacity(if keep { inputs.len() } else { 0 });
    for x in inputs {
        let (h_new, c_new, cache) = step_cached(p, x, &h, &c);
        if keep {
            steps.push(cache);
        }
        outputs.push(h_new.clone());
        h = h_new;
        c = c_new;
    }
    LayerTrace { outputs, steps }
}

/// Backpropagation through time. `d_outputs[t]` is the loss gradient with
/// respect to the layer output at step `t`; returns gradients with respect to
/// the layer inputs and accumulates parameter gradients into `grad`.
pub(crate) fn layer_backward(
    p: &LstmParams,
    trace: &LayerTrace,
    d_outputs: &[Vec<f64>],
    grad: &mut LstmParams,
) -> Vec<Vec<f64>> {
    let hs = p.hidden_size;
    let ins = p.input_size;
    let cols = p.cols();
    let steps = trace.steps.len();
    let mut d_inputs = vec![vec![0.0; ins]; steps];
    let mut dh_next = vec![0.0; hs];
    let mut dc_next = vec![0.0; hs];
    let mut dz = vec![0.0; 4 * hs];
    for t in (0..steps).rev() {
        let s = &trace.steps[t];
        for k in 0..hs {
            let dh = d_outputs[t][k] + dh_next[k];
            let dc = dh * s.o[k] * (1.0 - s.tanh_c[k] * s.tanh_c[k]) + dc_next[k];
            let (i, f, g, o) = (s.i[k], s.f[k], s.g[k], s.o[k]);
            dz[k] = dc * g * i * (1.0 - i);
            dz[hs + k] = dc * s.c_prev[k] * f * (1.0 - f);
            dz[2 * hs + k] = dc * i * (1.0 - g * g);
            dz[3 * hs + k] = dh * s.tanh_c[k] * o * (1.0 - o);
            dc_next[k] = dc * f;
        }
        let mut dxh = vec![0.0; cols];
        for (r, &d) in dz.iter().enumerate() {
            grad.b[r] += d;
            if d == 0.0 {
                continue;
            }
            let row = &p.w[r * cols..(r + 1) * cols];
            let grow = &mut grad.w[r * cols..(r + 1) * cols];
            for j in 0..cols {
                grow[j] += d * s.xh[j];
                dxh[j] += row[j] * d;
            }
        }
        d_inputs[t].copy_from_slice(&dxh[..ins]);
        dh_next.copy_from_slice(&dxh[ins..]);
    }
    d_inputs
}
