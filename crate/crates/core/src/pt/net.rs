//! The localization network: conv+ReLU stages, global average pooling
//! and the fully connected affine head.

use alloc::vec;
use alloc::vec::Vec;

use rand_core::RngCore;

use crate::affine::AffineParams;
use crate::math;
use crate::raster::Heatmap;
use crate::rng;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

/// Default conv-stage widths (one entry per 3x3 stride-2 stage).
pub const DEFAULT_CHANNELS: &[usize] = &[8, 16, 32, 32];

const THETA_LEN: usize = 6;
const IDENTITY_THETA: [f64; THETA_LEN] = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0];

/// A C x H x W activation volume, row-major within each channel.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Self { c, h, w, data: vec![0.0; c * h * w] }
    }

    #[inline]
    pub fn idx(&self, c: usize, y: usize, x: usize) -> usize {
        (c * self.h + y) * self.w + x
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[self.idx(c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        let i = self.idx(c, y, x);
        self.data[i] = v;
    }

    pub fn from_channels(maps: &[&Heatmap]) -> Self {
        let (h, w) = (maps[0].h(), maps[0].w());
        let mut t = Tensor::zeros(maps.len(), h, w);
        for (c, m) in maps.iter().enumerate() {
            debug_assert_eq!((m.h(), m.w()), (h, w));
            t.data[c * h * w..(c + 1) * h * w].copy_from_slice(m.data());
        }
        t
    }

    /// Splits a 2-channel tensor into two heatmaps.
    pub fn into_two_heatmaps(self) -> (Heatmap, Heatmap) {
        assert_eq!(self.c, 2);
        let plane = self.h * self.w;
        let mut first = Heatmap::zeros(self.h, self.w);
        let mut second = Heatmap::zeros(self.h, self.w);
        first.data_mut().copy_from_slice(&self.data[..plane]);
        second.data_mut().copy_from_slice(&self.data[plane..]);
        (first, second)
    }
}

/// 3x3 convolution, stride 2, zero padding 1, fused with ReLU.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct ConvLayer {
    pub in_ch: usize,
    pub out_ch: usize,
    /// Row-major `[out_ch][in_ch][3][3]`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

const K: usize = 3;
const STRIDE: usize = 2;
const PAD: i64 = 1;

fn conv_out_dim(n: usize) -> usize {
    (n + 2 * PAD as usize - K) / STRIDE + 1
}

impl ConvLayer {
    fn new<R: RngCore + ?Sized>(in_ch: usize, out_ch: usize, rng_handle: &mut R) -> Self {
        // He initialization for the rectifier stages.
        let fan_in = (in_ch * K * K) as f64;
        let std = math::sqrt(2.0 / fan_in);
        let weights = (0..out_ch * in_ch * K * K)
            .map(|_| rng::normal(rng_handle, 0.0, std))
            .collect();
        Self { in_ch, out_ch, weights, bias: vec![0.0; out_ch] }
    }

    #[inline]
    fn w(&self, oc: usize, ic: usize, ky: usize, kx: usize) -> f64 {
        self.weights[((oc * self.in_ch + ic) * K + ky) * K + kx]
    }

    /// Forward with ReLU; returns the post-activation volume.
    pub fn forward(&self, input: &Tensor) -> Tensor {
        debug_assert_eq!(input.c, self.in_ch);
        let (oh, ow) = (conv_out_dim(input.h), conv_out_dim(input.w));
        let mut out = Tensor::zeros(self.out_ch, oh, ow);
        for oc in 0..self.out_ch {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = self.bias[oc];
                    for ic in 0..self.in_ch {
                        for ky in 0..K {
                            let iy = (oy * STRIDE) as i64 + ky as i64 - PAD;
                            if iy < 0 || iy >= input.h as i64 {
                                continue;
                            }
                            for kx in 0..K {
                                let ix = (ox * STRIDE) as i64 + kx as i64 - PAD;
                                if ix < 0 || ix >= input.w as i64 {
                                    continue;
                                }
                                acc += self.w(oc, ic, ky, kx)
                                    * input.get(ic, iy as usize, ix as usize);
                            }
                        }
                    }
                    out.set(oc, oy, ox, acc.max(0.0));
                }
            }
        }
        out
    }

    /// Backward through ReLU and the convolution. `output` is the
    /// cached post-activation volume; `grad_out` is dL/d(output).
    /// Returns dL/d(input) and appends dL/d(weights), dL/d(bias) into
    /// the provided slices.
    pub fn backward(
        &self,
        input: &Tensor,
        output: &Tensor,
        grad_out: &Tensor,
        grad_w: &mut [f64],
        grad_b: &mut [f64],
    ) -> Tensor {
        let mut grad_in = Tensor::zeros(input.c, input.h, input.w);
        for oc in 0..self.out_ch {
            for oy in 0..output.h {
                for ox in 0..output.w {
                    // ReLU gate: post-activation > 0 iff pre-activation > 0
                    if output.get(oc, oy, ox) <= 0.0 {
                        continue;
                    }
                    let g = grad_out.get(oc, oy, ox);
                    if g == 0.0 {
                        continue;
                    }
                    grad_b[oc] += g;
                    for ic in 0..self.in_ch {
                        for ky in 0..K {
                            let iy = (oy * STRIDE) as i64 + ky as i64 - PAD;
                            if iy < 0 || iy >= input.h as i64 {
                                continue;
                            }
                            for kx in 0..K {
                                let ix = (ox * STRIDE) as i64 + kx as i64 - PAD;
                                if ix < 0 || ix >= input.w as i64 {
                                    continue;
                                }
                                let widx = ((oc * self.in_ch + ic) * K + ky) * K + kx;
                                grad_w[widx] += g * input.get(ic, iy as usize, ix as usize);
                                let iidx = grad_in.idx(ic, iy as usize, ix as usize);
                                grad_in.data[iidx] += g * self.weights[widx];
                            }
                        }
                    }
                }
            }
        }
        grad_in
    }

    fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

/// Fully connected head: pooled features -> 6 affine offsets added to
/// the identity theta.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct Dense {
    pub in_dim: usize,
    /// Row-major `[THETA_LEN][in_dim]`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    fn identity_head(in_dim: usize) -> Self {
        Self {
            in_dim,
            weights: vec![0.0; THETA_LEN * in_dim],
            bias: IDENTITY_THETA.to_vec(),
        }
    }

    fn forward(&self, feat: &[f64]) -> [f64; THETA_LEN] {
        let mut out = [0.0; THETA_LEN];
        for (r, o) in out.iter_mut().enumerate() {
            let row = &self.weights[r * self.in_dim..(r + 1) * self.in_dim];
            *o = self.bias[r] + row.iter().zip(feat).map(|(w, f)| w * f).sum::<f64>();
        }
        out
    }
}

/// Localization-net parameters; interpreted as an [`AffineParams`] over
/// normalized grid coordinates after the identity-biased head.
///
/// A freshly constructed model has a zero-weight head with identity
/// bias, so it emits the exact identity affine for every input.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct PtModel {
    pub convs: Vec<ConvLayer>,
    pub fc: Dense,
}

/// Forward-pass cache used by backpropagation.
pub(crate) struct LocalizeCache {
    /// Input plus each stage's post-activation volume.
    pub activations: Vec<Tensor>,
    pub features: Vec<f64>,
    pub theta: [f64; THETA_LEN],
}

impl PtModel {
    /// Builds a model with the given conv-stage widths. Conv stages are
    /// He-initialized from `rng_handle`; the head starts at identity.
    pub fn new<R: RngCore + ?Sized>(channels: &[usize], rng_handle: &mut R) -> Self {
        assert!(!channels.is_empty(), "at least one conv stage required");
        let mut convs = Vec::with_capacity(channels.len());
        let mut in_ch = 2;
        for &out_ch in channels {
            convs.push(ConvLayer::new(in_ch, out_ch, rng_handle));
            in_ch = out_ch;
        }
        Self { convs, fc: Dense::identity_head(in_ch) }
    }

    /// Perturbs the head with small random weights; test helper for
    /// exercising non-identity transforms.
    pub fn randomize_head<R: RngCore + ?Sized>(&mut self, rng_handle: &mut R, std: f64) {
        for w in &mut self.fc.weights {
            *w = rng::normal(rng_handle, 0.0, std);
        }
        for (i, b) in self.fc.bias.iter_mut().enumerate() {
            *b = IDENTITY_THETA[i] + rng::normal(rng_handle, 0.0, std);
        }
    }

    /// Runs the localization net; returns the predicted affine and the
    /// cache needed for backpropagation.
    pub(crate) fn localize_cached(&self, input: &Tensor) -> (AffineParams, LocalizeCache) {
        let mut activations = Vec::with_capacity(self.convs.len() + 1);
        activations.push(input.clone());
        for conv in &self.convs {
            let next = conv.forward(activations.last().unwrap());
            activations.push(next);
        }
        let last = activations.last().unwrap();
        let plane = (last.h * last.w) as f64;
        let features: Vec<f64> = (0..last.c)
            .map(|c| {
                last.data[c * last.h * last.w..(c + 1) * last.h * last.w]
                    .iter()
                    .sum::<f64>()
                    / plane
            })
            .collect();
        let theta = self.fc.forward(&features);
        let affine = AffineParams {
            m: [[theta[0], theta[1], theta[2]], [theta[3], theta[4], theta[5]]],
        };
        (affine, LocalizeCache { activations, features, theta })
    }

    /// Predicted affine for a 2-channel input.
    pub fn localize(&self, input: &Tensor) -> (AffineParams, [f64; THETA_LEN]) {
        let (affine, cache) = self.localize_cached(input);
        (affine, cache.theta)
    }

    /// Total parameter count, conv stages first, then the head.
    pub fn param_count(&self) -> usize {
        self.convs.iter().map(ConvLayer::param_count).sum::<usize>()
            + self.fc.weights.len()
            + self.fc.bias.len()
    }

    /// Flattens all parameters: per conv stage weights then bias, then
    /// head weights and bias. The checkpoint format and the gradient
    /// vector share this layout.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for conv in &self.convs {
            out.extend_from_slice(&conv.weights);
            out.extend_from_slice(&conv.bias);
        }
        out.extend_from_slice(&self.fc.weights);
        out.extend_from_slice(&self.fc.bias);
        out
    }

    /// Writes back a flat parameter vector in [`PtModel::params`] order.
    pub fn set_params(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.param_count());
        let mut off = 0;
        for conv in &mut self.convs {
            let nw = conv.weights.len();
            conv.weights.copy_from_slice(&flat[off..off + nw]);
            off += nw;
            let nb = conv.bias.len();
            conv.bias.copy_from_slice(&flat[off..off + nb]);
            off += nb;
        }
        let nw = self.fc.weights.len();
        self.fc.weights.copy_from_slice(&flat[off..off + nw]);
        off += nw;
        self.fc.bias.copy_from_slice(&flat[off..]);
    }

    /// Backward from dL/dtheta to a flat gradient vector (same layout
    /// as [`PtModel::params`]).
    pub(crate) fn backward_from_theta(
        &self,
        cache: &LocalizeCache,
        grad_theta: &[f64; THETA_LEN],
    ) -> Vec<f64> {
        let mut flat = vec![0.0; self.param_count()];
        // slice offsets per layer
        let mut offsets = Vec::with_capacity(self.convs.len() + 1);
        let mut off = 0;
        for conv in &self.convs {
            offsets.push(off);
            off += conv.param_count();
        }
        let fc_off = off;

        // head
        let nfeat = self.fc.in_dim;
        let mut grad_feat = vec![0.0; nfeat];
        for r in 0..THETA_LEN {
            let g = grad_theta[r];
            for i in 0..nfeat {
                flat[fc_off + r * nfeat + i] += g * cache.features[i];
                grad_feat[i] += g * self.fc.weights[r * nfeat + i];
            }
            flat[fc_off + THETA_LEN * nfeat + r] += g;
        }

        // global average pool
        let last = cache.activations.last().unwrap();
        let plane = last.h * last.w;
        let mut grad_act = Tensor::zeros(last.c, last.h, last.w);
        for c in 0..last.c {
            let g = grad_feat[c] / plane as f64;
            for v in &mut grad_act.data[c * plane..(c + 1) * plane] {
                *v = g;
            }
        }

        // conv stack, last to first
        for (li, conv) in self.convs.iter().enumerate().rev() {
            let off = offsets[li];
            let (gw, gb) = flat[off..off + conv.param_count()].split_at_mut(conv.weights.len());
            grad_act = conv.backward(
                &cache.activations[li],
                &cache.activations[li + 1],
                &grad_act,
                gw,
                gb,
            );
        }
        flat
    }
}
