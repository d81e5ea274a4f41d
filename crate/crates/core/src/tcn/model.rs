use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::normalize::Normalizer;
use super::train::{ModelInit, TrainConfig};
use super::{N_FEATURES, N_PRED};
use crate::error::{Error, Result};

pub const LN_EPS: f64 = 1e-5;

/// Layer-norm bias of the residual-identity start.
pub const IDENTITY_LN_BIAS: f64 = 0.01;

/// One residual block: causal dilated conv → layer norm → ReLU, plus a skip
/// path (1×1 projection when channel counts differ).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub dilation: usize,
    pub projection: bool,
}

impl BlockSpec {
    const fn new(in_channels: usize, out_channels: usize, kernel: usize, dilation: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel,
            dilation,
            projection: in_channels != out_channels,
        }
    }

    /// Causal left padding of the convolution.
    pub fn padding(&self) -> usize {
        (self.kernel - 1) * self.dilation
    }

    fn conv_len(&self) -> usize {
        self.out_channels * self.kernel * self.in_channels
    }
}

pub const ARCHITECTURE: [BlockSpec; 4] = [
    BlockSpec::new(N_FEATURES, 32, 1, 1),
    BlockSpec::new(32, 32, 9, 2),
    BlockSpec::new(32, 32, 9, 4),
    BlockSpec::new(32, N_FEATURES, 9, 8),
];

/// Offsets of one block's tensors in the flat parameter vector.
///
/// Conv weights are stored `[out][kernel tap][in]`; tap `kernel − 1` reads the
/// current frame and tap `j` reads `(kernel − 1 − j)·dilation` frames back.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct BlockLayout {
    pub spec: BlockSpec,
    pub conv_w: usize,
    pub conv_b: usize,
    pub ln_gain: usize,
    pub ln_bias: usize,
    pub skip_w: Option<usize>,
    pub skip_b: Option<usize>,
    pub end: usize,
}

impl BlockLayout {
    fn new(spec: BlockSpec, start: usize) -> Self {
        let conv_w = start;
        let conv_b = conv_w + spec.conv_len();
        let ln_gain = conv_b + spec.out_channels;
        let ln_bias = ln_gain + spec.out_channels;
        let mut end = ln_bias + spec.out_channels;
        let (skip_w, skip_b) = if spec.projection {
            let w = end;
            let b = w + spec.out_channels * spec.in_channels;
            end = b + spec.out_channels;
            (Some(w), Some(b))
        } else {
            (None, None)
        };
        Self {
            spec,
            conv_w,
            conv_b,
            ln_gain,
            ln_bias,
            skip_w,
            skip_b,
            end,
        }
    }

    /// Named tensors as `(name, start, len, fan_in)`.
    pub fn tensors(&self) -> Vec<(&'static str, usize, usize, usize)> {
        let s = &self.spec;
        let mut t = vec![
            ("conv_w", self.conv_w, s.conv_len(), s.in_channels * s.kernel),
            ("conv_b", self.conv_b, s.out_channels, 0),
            ("ln_gain", self.ln_gain, s.out_channels, 0),
            ("ln_bias", self.ln_bias, s.out_channels, 0),
        ];
        if let (Some(w), Some(b)) = (self.skip_w, self.skip_b) {
            t.push(("skip_w", w, s.out_channels * s.in_channels, s.in_channels));
            t.push(("skip_b", b, s.out_channels, 0));
        }
        t
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TcnModel {
    pub(crate) layout: Vec<BlockLayout>,
    pub params: Vec<f64>,
    pub normalizer: Normalizer,
}

/// Intermediate activations of one forward pass, kept for backprop.
#[derive(Debug, Clone, Default)]
pub struct ForwardCache {
    len: usize,
    /// Block inputs; `inputs[b]` has `len × in_channels` entries.
    inputs: Vec<Vec<f64>>,
    /// Layer-normalized conv outputs.
    normed: Vec<Vec<f64>>,
    /// Per-frame inverse standard deviation of the conv output.
    inv_std: Vec<Vec<f64>>,
    /// Post-gain pre-ReLU activations.
    pre_relu: Vec<Vec<f64>>,
    pub output: Vec<f64>,
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

impl TcnModel {
    /// Zero-initialized model with identity normalizer.
    pub fn new() -> Self {
        let mut layout = Vec::with_capacity(ARCHITECTURE.len());
        let mut start = 0;
        for spec in ARCHITECTURE {
            let l = BlockLayout::new(spec, start);
            start = l.end;
            layout.push(l);
        }
        let mut model = Self {
            layout,
            params: vec![0.0; start],
            normalizer: Normalizer::identity(),
        };
        model.reset_layer_norm();
        model
    }

    fn reset_layer_norm(&mut self) {
        for l in &self.layout {
            let n = l.spec.out_channels;
            self.params[l.ln_gain..l.ln_gain + n].fill(1.0);
            self.params[l.ln_bias..l.ln_bias + n].fill(0.0);
        }
    }

    pub fn blocks(&self) -> Vec<BlockSpec> {
        self.layout.iter().map(|l| l.spec).collect()
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    /// Every named tensor as `(block, name, start, len)`.
    pub fn tensors(&self) -> Vec<(usize, &'static str, usize, usize)> {
        self.layout
            .iter()
            .enumerate()
            .flat_map(|(b, l)| {
                l.tensors()
                    .into_iter()
                    .map(move |(name, start, len, _)| (b, name, start, len))
            })
            .collect()
    }

    /// He-normal conv and projection weights, zero biases, unit layer-norm gains.
    pub fn init_he_normal(mut self, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.params.fill(0.0);
        for l in self.layout.clone() {
            for (name, start, len, fan_in) in l.tensors() {
                if name.ends_with("_w") {
                    let std = (2.0 / fan_in as f64).sqrt();
                    let normal = Normal::new(0.0, std).expect("positive std");
                    for p in &mut self.params[start..start + len] {
                        *p = normal.sample(&mut rng);
                    }
                }
            }
        }
        self.reset_layer_norm();
        self
    }

    /// Residual-identity start: projection skips copy the input features,
    /// layer-norm gains are zero and a small layer-norm bias keeps every ReLU
    /// active, so the untrained network returns its input (persistence)
    /// while all branch weights still receive gradient.
    pub fn with_identity_residuals(mut self) -> Self {
        let b = IDENTITY_LN_BIAS;
        let last = self.layout.len() - 1;
        let mut offset = 0.0;
        for (i, l) in self.layout.clone().into_iter().enumerate() {
            let s = l.spec;
            self.params[l.ln_gain..l.ln_gain + s.out_channels].fill(0.0);
            self.params[l.ln_bias..l.ln_bias + s.out_channels].fill(b);
            offset += b;
            if let (Some(w), Some(sb)) = (l.skip_w, l.skip_b) {
                let weights = &mut self.params[w..w + s.out_channels * s.in_channels];
                for r in 0..s.out_channels {
                    for c in 0..s.in_channels {
                        weights[r * s.in_channels + c] = if r == c { 1.0 } else { 0.0 };
                    }
                }
                let shift = if i == last { -offset } else { 0.0 };
                self.params[sb..sb + s.out_channels].fill(shift);
            }
        }
        self
    }

    /// Untrained model for `config`.
    pub fn for_training(config: &TrainConfig) -> Self {
        let m = Self::new().init_he_normal(config.seed);
        match config.init {
            ModelInit::HeNormal => m,
            ModelInit::IdentityResidual => m.with_identity_residuals(),
        }
    }

    /// Frames of input history that can influence one output frame.
    pub fn receptive_field(&self) -> usize {
        1 + self.layout.iter().map(|l| l.spec.padding()).sum::<usize>()
    }

    fn check_input(&self, input: &[f64]) -> Result<usize> {
        if input.len() % N_FEATURES != 0 || input.is_empty() {
            return Err(Error::Shape(format!(
                "input of {} values is not a whole number of {}-feature frames",
                input.len(),
                N_FEATURES
            )));
        }
        Ok(input.len() / N_FEATURES)
    }

    /// Forward pass on a normalized `98 × 6` window.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        let len = self.check_input(input)?;
        if len != N_PRED {
            return Err(Error::Shape(format!(
                "model input must have {N_PRED} frames, got {len}"
            )));
        }
        Ok(self.forward_cached(input, len).output)
    }

    /// Forward pass over any causal sequence length, keeping activations.
    pub fn forward_cached(&self, input: &[f64], len: usize) -> ForwardCache {
        let mut cache = ForwardCache {
            len,
            ..Default::default()
        };
        let mut x = input.to_vec();
        for l in &self.layout {
            let mut normed = vec![0.0; len * l.spec.out_channels];
            let mut inv_std = vec![0.0; len];
            let mut pre = vec![0.0; len * l.spec.out_channels];
            let mut out = vec![0.0; len * l.spec.out_channels];
            self.block_forward(l, &x, len, None, &mut normed, &mut inv_std, &mut pre, &mut out);
            cache.inputs.push(x);
            cache.normed.push(normed);
            cache.inv_std.push(inv_std);
            cache.pre_relu.push(pre);
            x = out;
        }
        cache.output = x;
        cache
    }

    /// Last output frame only; bitwise equal to the last frame of [`forward`].
    pub fn forward_last(&self, input: &[f64]) -> Result<[f64; N_FEATURES]> {
        let len = self.check_input(input)?;
        // Rows each block must produce, walking back from the final frame.
        let mut needed: Vec<Vec<bool>> = vec![vec![false; len]; self.layout.len()];
        needed[self.layout.len() - 1][len - 1] = true;
        for b in (1..self.layout.len()).rev() {
            let spec = self.layout[b].spec;
            let (head, tail) = needed.split_at_mut(b);
            let (src, dst) = (&tail[0], &mut head[b - 1]);
            for t in (0..len).filter(|&t| src[t]) {
                dst[t] = true;
                for j in 0..spec.kernel {
                    let shift = (spec.kernel - 1 - j) * spec.dilation;
                    if shift <= t {
                        dst[t - shift] = true;
                    }
                }
            }
        }
        let mut x = input.to_vec();
        let mut inv_std = vec![0.0; len];
        for (l, rows) in self.layout.iter().zip(&needed) {
            let n = len * l.spec.out_channels;
            let mut normed = vec![0.0; n];
            let mut pre = vec![0.0; n];
            let mut out = vec![0.0; n];
            self.block_forward(l, &x, len, Some(rows), &mut normed, &mut inv_std, &mut pre, &mut out);
            x = out;
        }
        let mut last = [0.0; N_FEATURES];
        last.copy_from_slice(&x[(len - 1) * N_FEATURES..]);
        Ok(last)
    }

    #[allow(clippy::too_many_arguments)]
    fn block_forward(
        &self,
        l: &BlockLayout,
        x: &[f64],
        len: usize,
        rows: Option<&[bool]>,
        normed: &mut [f64],
        inv_std: &mut [f64],
        pre: &mut [f64],
        out: &mut [f64],
    ) {
        let s = l.spec;
        let (cin, cout, k) = (s.in_channels, s.out_channels, s.kernel);
        let p = &self.params;
        let w = &p[l.conv_w..l.conv_b];
        let bias = &p[l.conv_b..l.conv_b + cout];
        let gain = &p[l.ln_gain..l.ln_gain + cout];
        let beta = &p[l.ln_bias..l.ln_bias + cout];
        let mut conv = vec![0.0; cout];
        for t in 0..len {
            if let Some(r) = rows {
                if !r[t] {
                    continue;
                }
            }
            conv.copy_from_slice(bias);
            for j in 0..k {
                let shift = (k - 1 - j) * s.dilation;
                if shift > t {
                    continue;
                }
                let src = &x[(t - shift) * cin..(t - shift + 1) * cin];
                for (o, c) in conv.iter_mut().enumerate() {
                    *c += dot(&w[(o * k + j) * cin..(o * k + j + 1) * cin], src);
                }
            }
            let mean = conv.iter().sum::<f64>() / cout as f64;
            let var = conv.iter().map(|c| (c - mean) * (c - mean)).sum::<f64>() / cout as f64;
            let inv = 1.0 / (var + LN_EPS).sqrt();
            inv_std[t] = inv;
            let row = t * cout..(t + 1) * cout;
            let xrow = &x[t * cin..(t + 1) * cin];
            for o in 0..cout {
                let n = (conv[o] - mean) * inv;
                let y = gain[o] * n + beta[o];
                normed[row.start + o] = n;
                pre[row.start + o] = y;
                let skip = match (l.skip_w, l.skip_b) {
                    (Some(sw), Some(sb)) => p[sb + o] + dot(&p[sw + o * cin..sw + (o + 1) * cin], xrow),
                    _ => xrow[o],
                };
                out[row.start + o] = y.max(0.0) + skip;
            }
        }
    }

    /// Backprop of `d loss / d output` through a cached forward pass; adds the
    /// parameter gradient into `grad`.
    pub fn backward(&self, cache: &ForwardCache, d_output: &[f64], grad: &mut [f64]) {
        let len = cache.len;
        let p = &self.params;
        let mut d_out = d_output.to_vec();
        for (b, l) in self.layout.iter().enumerate().rev() {
            let s = l.spec;
            let (cin, cout, k) = (s.in_channels, s.out_channels, s.kernel);
            let x = &cache.inputs[b];
            let normed = &cache.normed[b];
            let pre = &cache.pre_relu[b];
            let inv_std = &cache.inv_std[b];
            let mut d_x = vec![0.0; len * cin];

            // skip path
            match (l.skip_w, l.skip_b) {
                (Some(sw), Some(sb)) => {
                    for t in 0..len {
                        let xrow = &x[t * cin..(t + 1) * cin];
                        for o in 0..cout {
                            let g = d_out[t * cout + o];
                            grad[sb + o] += g;
                            axpy(g, xrow, &mut grad[sw + o * cin..sw + (o + 1) * cin]);
                            axpy(g, &p[sw + o * cin..sw + (o + 1) * cin], &mut d_x[t * cin..(t + 1) * cin]);
                        }
                    }
                }
                _ => {
                    for (dx, g) in d_x.iter_mut().zip(&d_out) {
                        *dx += g;
                    }
                }
            }

            let mut d_conv = vec![0.0; cout];
            let mut d_n = vec![0.0; cout];
            for t in 0..len {
                let row = t * cout..(t + 1) * cout;
                let mut mean_dn = 0.0;
                let mut mean_dn_n = 0.0;
                for o in 0..cout {
                    let dy = if pre[row.start + o] > 0.0 { d_out[row.start + o] } else { 0.0 };
                    let n = normed[row.start + o];
                    grad[l.ln_gain + o] += dy * n;
                    grad[l.ln_bias + o] += dy;
                    d_n[o] = dy * p[l.ln_gain + o];
                    mean_dn += d_n[o];
                    mean_dn_n += d_n[o] * n;
                }
                mean_dn /= cout as f64;
                mean_dn_n /= cout as f64;
                for o in 0..cout {
                    d_conv[o] = inv_std[t] * (d_n[o] - mean_dn - normed[row.start + o] * mean_dn_n);
                    grad[l.conv_b + o] += d_conv[o];
                }
                for j in 0..k {
                    let shift = (k - 1 - j) * s.dilation;
                    if shift > t {
                        continue;
                    }
                    let src_row = (t - shift) * cin..(t - shift + 1) * cin;
                    for (o, &g) in d_conv.iter().enumerate() {
                        let w_off = l.conv_w + (o * k + j) * cin;
                        axpy(g, &x[src_row.clone()], &mut grad[w_off..w_off + cin]);
                        axpy(g, &p[w_off..w_off + cin], &mut d_x[src_row.clone()]);
                    }
                }
            }
            d_out = d_x;
        }
    }
}

impl Default for TcnModel {
    fn default() -> Self {
        Self::new()
    }
}
