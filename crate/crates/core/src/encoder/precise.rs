//! Loss evaluation in double-double arithmetic for finite differences.
//!
//! A central difference of an f64 loss near 1.0 loses about `1e-16 / eps` of
//! absolute accuracy, which swamps parameters whose gradient is ~1e-9. The
//! reference loss here carries ~32 significant digits, so the difference
//! quotient is limited by truncation error alone.

use std::ops::{Add, Div, Mul, Neg, Sub};

use super::network::EncoderParams;

pub(crate) trait Real:
    Copy + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> + Div<Output = Self> + Neg<Output = Self>
{
    fn of(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn tanh(self) -> Self;
}

impl Real for f64 {
    fn of(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn tanh(self) -> Self {
        f64::tanh(self)
    }
}

/// Unevaluated sum `hi + lo` with `|lo| <= ulp(hi) / 2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Dd {
    pub hi: f64,
    pub lo: f64,
}

#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

#[inline]
fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (s, b - (s - a))
}

/// Exact product `a * b = p + e` by Dekker splitting (no fused multiply-add).
#[inline]
fn two_prod(a: f64, b: f64) -> (f64, f64) {
    const SPLIT: f64 = 134_217_729.0; // 2^27 + 1
    let split = |v: f64| {
        let c = SPLIT * v;
        let hi = c - (c - v);
        (hi, v - hi)
    };
    let p = a * b;
    let (ah, al) = split(a);
    let (bh, bl) = split(b);
    (p, ((ah * bh - p) + ah * bl + al * bh) + al * bl)
}

/// `1 / n!` for `n = 0..=EXP_TERMS`.
const EXP_TERMS: usize = 11;

fn inverse_factorials() -> &'static [Dd; EXP_TERMS + 1] {
    static TABLE: std::sync::OnceLock<[Dd; EXP_TERMS + 1]> = std::sync::OnceLock::new();
    TABLE.get_or_init(|| {
        let mut t = [Dd::ONE; EXP_TERMS + 1];
        for n in 1..=EXP_TERMS {
            t[n] = t[n - 1] / Dd::of(n as f64);
        }
        t
    })
}

const EXP_STEPS: f64 = 256.0;
const EXP_TABLE_HALF: i32 = 90;

/// `expm1(r)` for `|r| <= 1/512` by Taylor series; the first omitted term
/// is below 1e-33 relative.
fn expm1_series(r: Dd) -> Dd {
    let inv = inverse_factorials();
    let mut s = inv[EXP_TERMS];
    for n in (1..EXP_TERMS).rev() {
        s = s * r + inv[n];
    }
    s * r
}

/// `exp(m / 256)` for `|m| <= 90`.
fn exp_table(m: i32) -> Dd {
    static TABLE: std::sync::OnceLock<Vec<Dd>> = std::sync::OnceLock::new();
    let t = TABLE.get_or_init(|| {
        // expm1(x / 2^9) from the series, then expm1(2y) = 2 expm1(y) + expm1(y)^2
        let entry = |m: i32| {
            let mut s = expm1_series(Dd::of(m as f64 / EXP_STEPS).ldexp(-9));
            for _ in 0..9 {
                s = s.ldexp(1) + s * s;
            }
            s + Dd::ONE
        };
        (-EXP_TABLE_HALF..=EXP_TABLE_HALF).map(entry).collect()
    });
    t[(m + EXP_TABLE_HALF) as usize]
}

const LN2: Dd = Dd {
    hi: std::f64::consts::LN_2,
    lo: 2.319_046_813_846_299_6e-17,
};

impl Dd {
    const ONE: Dd = Dd { hi: 1.0, lo: 0.0 };

    fn norm(hi: f64, lo: f64) -> Self {
        let (hi, lo) = quick_two_sum(hi, lo);
        Dd { hi, lo }
    }

    /// Exact multiplication by a power of two.
    fn ldexp(self, k: i32) -> Self {
        let s = 2f64.powi(k);
        Dd {
            hi: self.hi * s,
            lo: self.lo * s,
        }
    }

    fn abs(self) -> Self {
        if self.hi < 0.0 {
            -self
        } else {
            self
        }
    }
}

impl Add for Dd {
    type Output = Dd;
    fn add(self, y: Dd) -> Dd {
        // absolute error ~1e-32 * (|x| + |y|), which is what a difference
        // quotient needs; relative accuracy under cancellation is not kept
        let (s, e) = two_sum(self.hi, y.hi);
        Dd::norm(s, e + self.lo + y.lo)
    }
}

impl Sub for Dd {
    type Output = Dd;
    fn sub(self, y: Dd) -> Dd {
        self + (-y)
    }
}

impl Neg for Dd {
    type Output = Dd;
    fn neg(self) -> Dd {
        Dd {
            hi: -self.hi,
            lo: -self.lo,
        }
    }
}

impl Mul for Dd {
    type Output = Dd;
    fn mul(self, y: Dd) -> Dd {
        let (p, e) = two_prod(self.hi, y.hi);
        Dd::norm(p, e + (self.hi * y.lo + self.lo * y.hi))
    }
}

impl Div for Dd {
    type Output = Dd;
    fn div(self, y: Dd) -> Dd {
        let q1 = self.hi / y.hi;
        let r = self - y * Dd::of(q1);
        let q2 = r.hi / y.hi;
        let r = r - y * Dd::of(q2);
        let q3 = r.hi / y.hi;
        Dd::norm(q1, q2) + Dd::of(q3)
    }
}

impl Real for Dd {
    fn of(v: f64) -> Self {
        Dd { hi: v, lo: 0.0 }
    }

    fn to_f64(self) -> f64 {
        self.hi + self.lo
    }

    fn exp(self) -> Self {
        if self.hi > 709.0 {
            return Dd::of(f64::INFINITY);
        }
        if self.hi < -700.0 {
            // below ~1e-304 only the absolute value matters
            return Dd::of(self.hi.exp());
        }
        let k = (self.hi / LN2.hi).round();
        let r = self - LN2 * Dd::of(k);
        // |r| <= ln2 / 2 = 0.347; split off m / 256 so |r'| <= 1 / 512
        let m = (r.hi * EXP_STEPS).round();
        let e = exp_table(m as i32);
        (e + e * expm1_series(r - Dd::of(m / EXP_STEPS))).ldexp(k as i32)
    }

    fn ln(self) -> Self {
        let mut y = Dd::of(self.hi.ln());
        for _ in 0..2 {
            y = y + self * (-y).exp() - Dd::ONE;
        }
        y
    }

    fn tanh(self) -> Self {
        let a = self.abs();
        let t = if a.hi > 40.0 {
            Dd::ONE
        } else {
            let e = (-a.ldexp(1)).exp();
            (Dd::ONE - e) / (Dd::ONE + e)
        };
        if self.hi < 0.0 {
            -t
        } else {
            t
        }
    }
}

fn sigmoid<R: Real>(x: R) -> R {
    if x.to_f64() >= 0.0 {
        R::of(1.0) / (R::of(1.0) + (-x).exp())
    } else {
        let e = x.exp();
        e / (R::of(1.0) + e)
    }
}

struct Lstm<R> {
    inputs: usize,
    hidden: usize,
    w: Vec<R>,
    b: Vec<R>,
}

struct Affine<R> {
    inputs: usize,
    w: Vec<R>,
    b: Vec<R>,
}

fn lift<R: Real>(v: &[f64]) -> Vec<R> {
    v.iter().map(|&x| R::of(x)).collect()
}

impl<R: Real> Lstm<R> {
    fn run(&self, xs: &[Vec<R>]) -> Vec<Vec<R>> {
        let hs = self.hidden;
        let cols = self.inputs + hs;
        let mut h = vec![R::of(0.0); hs];
        let mut c = vec![R::of(0.0); hs];
        let mut out = Vec::with_capacity(xs.len());
        let mut xh = Vec::with_capacity(cols);
        for x in xs {
            xh.clear();
            xh.extend_from_slice(x);
            xh.extend_from_slice(&h);
            let z: Vec<R> = (0..4 * hs)
                .map(|r| {
                    let row = &self.w[r * cols..(r + 1) * cols];
                    row.iter().zip(&xh).fold(self.b[r], |acc, (&w, &v)| acc + w * v)
                })
                .collect();
            for k in 0..hs {
                let i = sigmoid(z[k]);
                let f = sigmoid(z[hs + k]);
                let g = z[2 * hs + k].tanh();
                let o = sigmoid(z[3 * hs + k]);
                c[k] = f * c[k] + i * g;
                h[k] = o * c[k].tanh();
            }
            out.push(h.clone());
        }
        out
    }
}

impl<R: Real> Affine<R> {
    fn apply(&self, x: &[R]) -> Vec<R> {
        self.b
            .iter()
            .enumerate()
            .map(|(r, &b)| {
                let row = &self.w[r * self.inputs..(r + 1) * self.inputs];
                row.iter().zip(x).fold(b, |acc, (&w, &v)| acc + w * v)
            })
            .collect()
    }
}

/// Where a flat tensor index of [`EncoderParams::tensors`] lives.
#[derive(Clone, Copy)]
enum Stage {
    Channel(usize),
    Common(usize),
    Output,
    Head,
}

/// Cross-entropy evaluator that caches every intermediate activation so a
/// single perturbed parameter only recomputes the stages downstream of it.
pub(crate) struct LossEvaluator<R> {
    channel: Vec<Lstm<R>>,
    common: Vec<Lstm<R>>,
    output: Option<Affine<R>>,
    head: Affine<R>,
    input: Vec<Vec<R>>,
    label: usize,
    stages: Vec<Stage>,
    channel_out: Vec<Vec<Vec<R>>>,
    common_out: Vec<Vec<Vec<R>>>,
}

impl<R: Real> LossEvaluator<R> {
    pub fn new(params: &EncoderParams, input: &[Vec<f64>], label: usize) -> Self {
        let lstm = |p: &super::lstm::LstmParams| Lstm {
            inputs: p.input_size,
            hidden: p.hidden_size,
            w: lift(&p.w),
            b: lift(&p.b),
        };
        let affine = |d: &super::network::Dense| Affine {
            inputs: d.inputs,
            w: lift(&d.w),
            b: lift(&d.b),
        };
        let mut stages = Vec::new();
        for i in 0..params.channel.len() {
            stages.extend([Stage::Channel(i); 2]);
        }
        for i in 0..params.common.len() {
            stages.extend([Stage::Common(i); 2]);
        }
        if params.output.is_some() {
            stages.extend([Stage::Output; 2]);
        }
        stages.extend([Stage::Head; 2]);
        let mut ev = Self {
            channel: params.channel.iter().map(lstm).collect(),
            common: params.common.iter().map(lstm).collect(),
            output: params.output.as_ref().map(affine),
            head: affine(&params.head),
            input: input.iter().map(|x| lift(x)).collect(),
            label,
            stages,
            channel_out: Vec::new(),
            common_out: Vec::new(),
        };
        ev.channel_out = (0..ev.channel.len()).map(|c| ev.run_channel(c)).collect();
        ev.common_out = Vec::new();
        for l in 0..ev.common.len() {
            let out = ev.common[l].run(&ev.common_input(l));
            ev.common_out.push(out);
        }
        ev
    }

    fn run_channel(&self, c: usize) -> Vec<Vec<R>> {
        let xs: Vec<Vec<R>> = self.input.iter().map(|x| vec![x[c]]).collect();
        self.channel[c].run(&xs)
    }

    fn common_input(&self, l: usize) -> Vec<Vec<R>> {
        if l > 0 {
            return self.common_out[l - 1].clone();
        }
        if self.channel.is_empty() {
            return self.input.clone();
        }
        (0..self.input.len())
            .map(|t| self.channel_out.iter().flat_map(|o| o[t].iter().copied()).collect())
            .collect()
    }

    fn tensor(&mut self, ti: usize) -> &mut Vec<R> {
        let (w, b) = match self.stages[ti] {
            Stage::Channel(i) => {
                let p = &mut self.channel[i];
                (&mut p.w, &mut p.b)
            }
            Stage::Common(i) => {
                let p = &mut self.common[i];
                (&mut p.w, &mut p.b)
            }
            Stage::Output => {
                let d = self.output.as_mut().expect("output stage");
                (&mut d.w, &mut d.b)
            }
            Stage::Head => (&mut self.head.w, &mut self.head.b),
        };
        if ti.is_multiple_of(2) {
            w
        } else {
            b
        }
    }

    /// Loss with parameter `k` of tensor `ti` replaced by `value`; cached
    /// activations are left untouched.
    pub fn loss_with(&mut self, ti: usize, k: usize, value: R) -> R {
        let original = std::mem::replace(&mut self.tensor(ti)[k], value);
        let loss = self.loss_from(self.stages[ti]);
        self.tensor(ti)[k] = original;
        loss
    }

    #[cfg(test)]
    pub fn loss(&self) -> R {
        self.loss_from(Stage::Head)
    }

    fn loss_from(&self, stage: Stage) -> R {
        let top: Option<Vec<Vec<R>>> = match stage {
            Stage::Channel(c) => {
                let mut outs = self.channel_out.clone();
                outs[c] = self.run_channel(c);
                let mut layer: Vec<Vec<R>> = (0..self.input.len())
                    .map(|t| outs.iter().flat_map(|o| o[t].iter().copied()).collect())
                    .collect();
                for p in &self.common {
                    layer = p.run(&layer);
                }
                Some(layer)
            }
            Stage::Common(l) => {
                let mut layer = self.common[l].run(&self.common_input(l));
                for p in &self.common[l + 1..] {
                    layer = p.run(&layer);
                }
                Some(layer)
            }
            Stage::Output | Stage::Head => None,
        };
        let top = top.as_ref().or(self.common_out.last());
        let zero = vec![R::of(0.0); self.common.last().map_or(0, |p| p.hidden)];
        let last = top.and_then(|t| t.last()).unwrap_or(&zero);
        let features = match &self.output {
            Some(d) => d
                .apply(last)
                .into_iter()
                .map(|v| if v.to_f64() > 0.0 { v } else { R::of(0.0) })
                .collect(),
            None => last.clone(),
        };
        let logits = self.head.apply(&features);
        let m = logits.iter().map(|v| v.to_f64()).fold(f64::NEG_INFINITY, f64::max);
        let m = R::of(m);
        let sum = logits.iter().fold(R::of(0.0), |acc, &z| acc + (z - m).exp());
        m + sum.ln() - logits[self.label]
    }
}
