//! Small residual convolutional denoiser with hand-written backpropagation.
//!
//! ```text
//! h_0     = conv_in(x) + b_in + E_0 e(t)
//! h_{i+1} = h_i + conv_i(act(h_i)) + b_i + E_{i+1} e(t)      i < blocks
//! y       = c(t) x + conv_out(act(h_blocks)) + b_out
//! ```
//!
//! All convolutions are 3x3 with zero padding. `e(t)` holds `sin` and `cos`
//! of `pi * 2^j * t / T` for `j < TIME_FREQS`. The output skip `c(t)` is
//! either 0 or `sqrt(abar(t / T))` on the cosine curve, which is the best
//! linear estimate of `x_0` when the noise covariance equals the data
//! covariance; the network then only learns the residual.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{Denoiser, Trainable};
use crate::error::{Error, Result};
use crate::field::{PixelField, Shape};
use crate::rng;
use crate::schedule::cosine_alpha_bar;

pub const TIME_FREQS: usize = 8;
const EMBED: usize = 2 * TIME_FREQS;
const MAX_PARAMS: usize = 100_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Silu,
    /// No nonlinearity; the whole network is affine in its input.
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Silu => x / (1.0 + (-x).exp()),
            Activation::Identity => x,
        }
    }

    #[inline]
    fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Silu => {
                let s = 1.0 / (1.0 + (-x).exp());
                s * (1.0 + x * (1.0 - s))
            }
            Activation::Identity => 1.0,
        }
    }
}

/// Input-to-output shortcut of the denoiser.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputSkip {
    #[default]
    None,
    /// `sqrt(abar)` of the cosine curve at `t / T`.
    Cosine,
}

impl OutputSkip {
    pub fn weight(self, t: usize, steps: usize) -> f64 {
        match self {
            OutputSkip::None => 0.0,
            OutputSkip::Cosine => cosine_alpha_bar(t as f64 / steps.max(1) as f64).sqrt(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    pub shape: Shape,
    pub hidden: usize,
    pub blocks: usize,
    pub activation: Activation,
    #[serde(default)]
    pub skip: OutputSkip,
}

impl Architecture {
    pub fn new(shape: Shape, hidden: usize, blocks: usize, activation: Activation) -> Result<Self> {
        let arch = Architecture {
            shape,
            hidden,
            blocks,
            activation,
            skip: OutputSkip::None,
        };
        arch.validate()?;
        Ok(arch)
    }

    pub fn with_skip(self, skip: OutputSkip) -> Self {
        Architecture { skip, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 {
            return Err(Error::InvalidParameter("hidden width must be positive".into()));
        }
        if self.blocks > 2 {
            return Err(Error::InvalidParameter(format!(
                "at most 2 residual blocks (4 conv stages), got {}",
                self.blocks
            )));
        }
        // bounded first so the count itself cannot overflow
        let count = if self.hidden > MAX_PARAMS || self.shape.channels > MAX_PARAMS {
            usize::MAX
        } else {
            self.param_count()
        };
        if count > MAX_PARAMS {
            return Err(Error::InvalidParameter(format!(
                "{count} parameters exceeds the {MAX_PARAMS} budget"
            )));
        }
        Ok(())
    }

    fn layout(&self) -> Layout {
        let (c, h) = (self.shape.channels, self.hidden);
        let mut next = 0;
        let mut take = |n: usize| {
            let r = next..next + n;
            next += n;
            r
        };
        let input = Stage {
            weight: take(h * c * 9),
            bias: take(h),
            embed: take(h * EMBED),
        };
        let blocks = (0..self.blocks)
            .map(|_| Stage {
                weight: take(h * h * 9),
                bias: take(h),
                embed: take(h * EMBED),
            })
            .collect();
        let out_weight = take(c * h * 9);
        let out_bias = take(c);
        Layout {
            input,
            blocks,
            out_weight,
            out_bias,
            total: next,
        }
    }

    pub fn param_count(&self) -> usize {
        self.layout().total
    }
}

type Span = std::ops::Range<usize>;

struct Stage {
    weight: Span,
    bias: Span,
    embed: Span,
}

struct Layout {
    input: Stage,
    blocks: Vec<Stage>,
    out_weight: Span,
    out_bias: Span,
    total: usize,
}

pub(crate) fn time_embedding(t: usize, steps: usize) -> [f64; EMBED] {
    let tau = t as f64 / steps.max(1) as f64;
    let mut e = [0.0; EMBED];
    for j in 0..TIME_FREQS {
        let arg = PI * (1u64 << j) as f64 * tau;
        e[2 * j] = arg.sin();
        e[2 * j + 1] = arg.cos();
    }
    e
}

/// `out[o] += sum_i w[o, i] * in[i]` with 3x3 kernels, zero padded.
fn conv_forward(input: &[f64], weight: &[f64], cin: usize, cout: usize, h: usize, w: usize, out: &mut [f64]) {
    let plane = h * w;
    for o in 0..cout {
        let dst = &mut out[o * plane..(o + 1) * plane];
        for i in 0..cin {
            let src = &input[i * plane..(i + 1) * plane];
            for k in 0..9 {
                let wv = weight[(o * cin + i) * 9 + k];
                let (dy, dx) = (k / 3, k % 3);
                let (r0, r1) = (1usize.saturating_sub(dy), (h + 1 - dy).min(h));
                let (c0, c1) = (1usize.saturating_sub(dx), (w + 1 - dx).min(w));
                for r in r0..r1 {
                    let sr = r + dy - 1;
                    let d = &mut dst[r * w + c0..r * w + c1];
                    let s = &src[sr * w + c0 + dx - 1..sr * w + c1 + dx - 1];
                    for (d, s) in d.iter_mut().zip(s) {
                        *d += wv * s;
                    }
                }
            }
        }
    }
}

/// Gradients of [`conv_forward`]: accumulates into `grad_in` (if given) and
/// `grad_w`.
#[allow(clippy::too_many_arguments)]
fn conv_backward(
    input: &[f64],
    weight: &[f64],
    grad_out: &[f64],
    cin: usize,
    cout: usize,
    h: usize,
    w: usize,
    mut grad_in: Option<&mut [f64]>,
    grad_w: &mut [f64],
) {
    let plane = h * w;
    for o in 0..cout {
        let g = &grad_out[o * plane..(o + 1) * plane];
        for i in 0..cin {
            let src = &input[i * plane..(i + 1) * plane];
            for k in 0..9 {
                let idx = (o * cin + i) * 9 + k;
                let wv = weight[idx];
                let (dy, dx) = (k / 3, k % 3);
                let (r0, r1) = (1usize.saturating_sub(dy), (h + 1 - dy).min(h));
                let (c0, c1) = (1usize.saturating_sub(dx), (w + 1 - dx).min(w));
                let mut acc = 0.0;
                for r in r0..r1 {
                    let sr = r + dy - 1;
                    let gs = &g[r * w + c0..r * w + c1];
                    let ss = sr * w + c0 + dx - 1..sr * w + c1 + dx - 1;
                    for (gv, sv) in gs.iter().zip(&src[ss.clone()]) {
                        acc += gv * sv;
                    }
                    if let Some(gi) = grad_in.as_deref_mut() {
                        let gi = &mut gi[i * plane..(i + 1) * plane][ss];
                        for (d, gv) in gi.iter_mut().zip(gs) {
                            *d += wv * gv;
                        }
                    }
                }
                grad_w[idx] += acc;
            }
        }
    }
}

fn add_channel_bias(x: &mut [f64], bias: &[f64], embed: &[f64], e: &[f64; EMBED], plane: usize) {
    for (ch, dst) in x.chunks_exact_mut(plane).enumerate() {
        let row = &embed[ch * EMBED..(ch + 1) * EMBED];
        let shift = bias[ch] + row.iter().zip(e).map(|(a, b)| a * b).sum::<f64>();
        for v in dst {
            *v += shift;
        }
    }
}

fn bias_grads(grad: &[f64], e: &[f64; EMBED], plane: usize, gb: &mut [f64], ge: &mut [f64]) {
    for (ch, g) in grad.chunks_exact(plane).enumerate() {
        let s: f64 = g.iter().sum();
        gb[ch] += s;
        for (k, ev) in e.iter().enumerate() {
            ge[ch * EMBED + k] += s * ev;
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BuiltinDenoiser {
    arch: Architecture,
    params: Vec<f64>,
}

struct Activations {
    /// Pre-activation hidden states `h_0 ..= h_blocks`.
    hidden: Vec<Vec<f64>>,
    /// `act(h_i)` for the same states.
    post: Vec<Vec<f64>>,
    output: Vec<f64>,
}

impl BuiltinDenoiser {
    /// Random initialization: conv weights `N(0, 1/fan_in)`, output
    /// convolution scaled down by 10 so untrained outputs start near zero,
    /// timestep embeddings `N(0, 1/16)`, biases zero.
    pub fn new(arch: Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let layout = arch.layout();
        let mut params = vec![0.0; layout.total];
        let mut r = rng::stream(seed, "init", 0);
        let (c, h) = (arch.shape.channels, arch.hidden);
        let mut fill = |span: &Span, fan_in: usize, gain: f64| {
            let std = gain / (fan_in as f64).sqrt();
            for p in &mut params[span.clone()] {
                *p = std * rng::normal(&mut r);
            }
        };
        fill(&layout.input.weight, c * 9, 1.0);
        fill(&layout.input.embed, EMBED, 1.0);
        for b in &layout.blocks {
            fill(&b.weight, h * 9, 1.0);
            fill(&b.embed, EMBED, 1.0);
        }
        fill(&layout.out_weight, h * 9, 0.1);
        Ok(BuiltinDenoiser { arch, params })
    }

    pub fn from_params(arch: Architecture, params: Vec<f64>) -> Result<Self> {
        arch.validate()?;
        if params.len() != arch.param_count() {
            return Err(Error::InvalidParameter(format!(
                "architecture needs {} parameters, got {}",
                arch.param_count(),
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidParameter("non-finite parameter".into()));
        }
        Ok(BuiltinDenoiser { arch, params })
    }

    pub fn architecture(&self) -> Architecture {
        self.arch
    }

    fn forward(&self, x: &[f64], t: usize, steps: usize) -> Activations {
        let layout = self.arch.layout();
        let (c, hid) = (self.arch.shape.channels, self.arch.hidden);
        let (h, w) = (self.arch.shape.height, self.arch.shape.width);
        let plane = h * w;
        let act = self.arch.activation;
        let e = time_embedding(t, steps);
        let p = &self.params;

        let mut h0 = vec![0.0; hid * plane];
        conv_forward(x, &p[layout.input.weight.clone()], c, hid, h, w, &mut h0);
        add_channel_bias(
            &mut h0,
            &p[layout.input.bias.clone()],
            &p[layout.input.embed.clone()],
            &e,
            plane,
        );
        let mut hidden = vec![h0];
        let mut post: Vec<Vec<f64>> = Vec::with_capacity(self.arch.blocks + 1);
        for stage in &layout.blocks {
            let cur = hidden.last().unwrap();
            let u: Vec<f64> = cur.iter().map(|&v| act.apply(v)).collect();
            let mut next = cur.clone();
            conv_forward(&u, &p[stage.weight.clone()], hid, hid, h, w, &mut next);
            add_channel_bias(&mut next, &p[stage.bias.clone()], &p[stage.embed.clone()], &e, plane);
            post.push(u);
            hidden.push(next);
        }
        let u: Vec<f64> = hidden.last().unwrap().iter().map(|&v| act.apply(v)).collect();
        let mut output = vec![0.0; x.len()];
        conv_forward(&u, &p[layout.out_weight.clone()], hid, c, h, w, &mut output);
        let ob = &p[layout.out_bias.clone()];
        for (ch, dst) in output.chunks_exact_mut(plane).enumerate() {
            for v in dst {
                *v += ob[ch];
            }
        }
        let skip = self.arch.skip.weight(t, steps);
        if skip != 0.0 {
            for (o, xv) in output.iter_mut().zip(x) {
                *o += skip * xv;
            }
        }
        post.push(u);
        Activations { hidden, post, output }
    }

    fn backward(&self, x: &[f64], t: usize, steps: usize, acts: &Activations, grad_out: &[f64]) -> Vec<f64> {
        let layout = self.arch.layout();
        let (c, hid) = (self.arch.shape.channels, self.arch.hidden);
        let (h, w) = (self.arch.shape.height, self.arch.shape.width);
        let plane = h * w;
        let act = self.arch.activation;
        let e = time_embedding(t, steps);
        let p = &self.params;
        let mut g = vec![0.0; layout.total];

        for (ch, go) in grad_out.chunks_exact(plane).enumerate() {
            g[layout.out_bias.start + ch] += go.iter().sum::<f64>();
        }
        let last = self.arch.blocks;
        let mut du = vec![0.0; hid * plane];
        conv_backward(
            &acts.post[last],
            &p[layout.out_weight.clone()],
            grad_out,
            hid,
            c,
            h,
            w,
            Some(&mut du),
            &mut g[layout.out_weight.clone()],
        );
        // d loss / d h_blocks
        let mut dh: Vec<f64> = du
            .iter()
            .zip(&acts.hidden[last])
            .map(|(d, hv)| d * act.derivative(*hv))
            .collect();

        for (i, stage) in layout.blocks.iter().enumerate().rev() {
            {
                let (gb, ge) = split_pair(&mut g, &stage.bias, &stage.embed);
                bias_grads(&dh, &e, plane, gb, ge);
            }
            let mut du = vec![0.0; hid * plane];
            conv_backward(
                &acts.post[i],
                &p[stage.weight.clone()],
                &dh,
                hid,
                hid,
                h,
                w,
                Some(&mut du),
                &mut g[stage.weight.clone()],
            );
            for ((d, u), hv) in dh.iter_mut().zip(&du).zip(&acts.hidden[i]) {
                *d += u * act.derivative(*hv);
            }
        }

        {
            let (gb, ge) = split_pair(&mut g, &layout.input.bias, &layout.input.embed);
            bias_grads(&dh, &e, plane, gb, ge);
        }
        conv_backward(
            x,
            &p[layout.input.weight.clone()],
            &dh,
            c,
            hid,
            h,
            w,
            None,
            &mut g[layout.input.weight.clone()],
        );
        g
    }
}

/// Two disjoint mutable sub-slices; `a` must precede `b`.
fn split_pair<'a>(g: &'a mut [f64], a: &Span, b: &Span) -> (&'a mut [f64], &'a mut [f64]) {
    debug_assert!(a.end <= b.start);
    let (lo, hi) = g.split_at_mut(b.start);
    (&mut lo[a.clone()], &mut hi[..b.len()])
}

impl Denoiser for BuiltinDenoiser {
    fn predict(&self, x: &PixelField, t: usize, steps: usize) -> PixelField {
        assert_eq!(x.shape(), self.arch.shape, "denoiser input shape");
        let acts = self.forward(x.values(), t, steps);
        PixelField::from_raw(x.shape(), acts.output)
    }
}

impl Trainable for BuiltinDenoiser {
    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn loss_and_grad(
        &self,
        x: &PixelField,
        t: usize,
        steps: usize,
        head: &mut dyn FnMut(&PixelField) -> Result<(f64, PixelField)>,
    ) -> Result<(f64, Vec<f64>)> {
        self.arch.shape.expect(x.shape())?;
        let acts = self.forward(x.values(), t, steps);
        let pred = PixelField::from_raw(x.shape(), acts.output.clone());
        let (loss, grad_pred) = head(&pred)?;
        self.arch.shape.expect(grad_pred.shape())?;
        Ok((loss, self.backward(x.values(), t, steps, &acts, grad_pred.values())))
    }
}
