//! Untrained hourglass generator with frozen convolutions.
//!
//! Only the latent input `z` and the batch-norm affine parameters are trainable.
//! They live in one flat [`ParamVector`] laid out as:
//!
//! 1. `z`, `latent_channels x H x W`, row-major per channel;
//! 2. every batch-norm scale `gamma`, layer by layer;
//! 3. every batch-norm shift `beta`, layer by layer.
//!
//! Batch-norm layers are ordered as they run: for each encoder level the skip
//! branch (when `skip_channels > 0`) then the downsampling branch, followed by
//! the decoder levels from deepest to shallowest.

pub mod checkpoint;
pub mod layers;

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::ops::Range;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::optimize::tv::{tv, tv_accumulate_grad};
use crate::scalar::{lit, Scalar};
use layers::{
    batch_norm_backward, batch_norm_forward, leaky_relu_backward_inplace, leaky_relu_inplace, sigmoid,
    upsample_bilinear2x, upsample_bilinear2x_backward, BnCache, Conv, FeatureMap,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    LeakyRelu(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Upsample {
    Bilinear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputNonlinearity {
    Sigmoid,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HourglassConfig {
    pub scales: usize,
    pub channels: usize,
    pub skip_channels: usize,
    pub kernel: usize,
    pub latent_channels: usize,
    pub activation: Activation,
    pub upsample: Upsample,
    pub output_nonlinearity: OutputNonlinearity,
}

impl Default for HourglassConfig {
    fn default() -> Self {
        HourglassConfig {
            scales: 3,
            channels: 32,
            skip_channels: 4,
            kernel: 3,
            latent_channels: 16,
            activation: Activation::LeakyRelu(0.1),
            upsample: Upsample::Bilinear,
            output_nonlinearity: OutputNonlinearity::Sigmoid,
        }
    }
}

impl HourglassConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.scales == 0 || self.scales > 16 {
            return bad("scales must be in 1..=16");
        }
        if self.channels == 0 || self.latent_channels == 0 {
            return bad("channels and latent_channels must be positive");
        }
        if self.kernel == 0 || self.kernel.is_multiple_of(2) {
            return bad("kernel must be odd and positive");
        }
        let Activation::LeakyRelu(slope) = self.activation;
        if !(slope.is_finite() && slope > 0.0) {
            return bad("leaky relu slope must be positive");
        }
        Ok(())
    }

    /// Spatial dims must be multiples of this.
    pub fn divisor(&self) -> usize {
        1 << self.scales
    }

    fn slope(&self) -> f64 {
        let Activation::LeakyRelu(s) = self.activation;
        s
    }

    /// Widths of all batch-norm layers in parameter-vector order.
    pub fn bn_widths(&self) -> Vec<usize> {
        let mut v = Vec::new();
        for _ in 0..self.scales {
            if self.skip_channels > 0 {
                v.push(self.skip_channels);
            }
            v.push(self.channels);
        }
        v.extend(std::iter::repeat_n(self.channels, self.scales));
        v
    }
}

/// Flat vector of trainable values; see the module docs for the layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector<S>(Vec<S>);

impl<S: Scalar> ParamVector<S> {
    pub fn new(v: Vec<S>) -> Self {
        ParamVector(v)
    }

    pub fn zeros(n: usize) -> Self {
        ParamVector(vec![S::zero(); n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[S] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [S] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<S> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BnSlot {
    pub width: usize,
    pub gamma: Range<usize>,
    pub beta: Range<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamLayout {
    pub z: Range<usize>,
    pub bn: Vec<BnSlot>,
    skip_bn: Vec<Option<usize>>,
    down_bn: Vec<usize>,
    up_bn: Vec<usize>,
}

impl ParamLayout {
    fn new(cfg: &HourglassConfig, dims: (usize, usize)) -> Self {
        let z_len = cfg.latent_channels * dims.0 * dims.1;
        let widths = cfg.bn_widths();
        let total_bn: usize = widths.iter().sum();
        let mut bn = Vec::with_capacity(widths.len());
        let mut g = z_len;
        let mut b = z_len + total_bn;
        for &w in &widths {
            bn.push(BnSlot {
                width: w,
                gamma: g..g + w,
                beta: b..b + w,
            });
            g += w;
            b += w;
        }
        let mut idx = 0;
        let mut skip_bn = Vec::new();
        let mut down_bn = Vec::new();
        for _ in 0..cfg.scales {
            if cfg.skip_channels > 0 {
                skip_bn.push(Some(idx));
                idx += 1;
            } else {
                skip_bn.push(None);
            }
            down_bn.push(idx);
            idx += 1;
        }
        // decoder slots are stored deepest first
        let up_bn = (0..cfg.scales).map(|l| idx + (cfg.scales - 1 - l)).collect();
        ParamLayout {
            z: 0..z_len,
            bn,
            skip_bn,
            down_bn,
            up_bn,
        }
    }

    pub fn len(&self) -> usize {
        self.bn.last().map(|s| s.beta.end).unwrap_or(self.z.end)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of batch-norm affine parameters.
    pub fn bn_param_count(&self) -> usize {
        self.len() - self.z.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrozenWeights<S> {
    pub skip: Vec<Option<Conv<S>>>,
    pub down: Vec<Conv<S>>,
    pub up: Vec<Conv<S>>,
    pub out: Conv<S>,
}

impl<S: Scalar> FrozenWeights<S> {
    fn convs(&self) -> impl Iterator<Item = &Conv<S>> {
        self.skip
            .iter()
            .flatten()
            .chain(&self.down)
            .chain(&self.up)
            .chain(std::iter::once(&self.out))
    }

    pub fn param_count(&self) -> usize {
        self.convs().map(Conv::param_count).sum()
    }

    /// Hash of every frozen weight bit pattern.
    pub fn checksum(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for c in self.convs() {
            for v in c.weight.iter().chain(&c.bias) {
                v.to_f64_lossy().to_bits().hash(&mut h);
            }
        }
        h.finish()
    }
}

/// Per-channel batch statistics of one batch-norm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct BnStats<S> {
    pub mean: Vec<S>,
    pub var: Vec<S>,
}

#[derive(Debug, Clone)]
pub struct GeneratorState<S> {
    pub config: HourglassConfig,
    /// Spatial dims `(H, W)` of the latent input and the output.
    pub dims: (usize, usize),
    pub seed: u64,
    pub frozen: FrozenWeights<S>,
    pub layout: ParamLayout,
    params: ParamVector<S>,
    /// Running batch-norm statistics, kept for checkpointing only.
    pub bn_stats: Vec<BnStats<S>>,
}

/// Result of one loss evaluation.
#[derive(Debug, Clone)]
pub struct LossEval<S> {
    pub loss: S,
    pub data_loss: S,
    pub tv: S,
    pub grad: ParamVector<S>,
    pub output: Array2<S>,
    pub batch_stats: Vec<BnStats<S>>,
}

struct EncLevel<S> {
    in_dims: (usize, usize),
    skip: Option<(BnCache<S>, FeatureMap<S>)>,
    down_cache: BnCache<S>,
    down_act: FeatureMap<S>,
}

struct DecLevel<S> {
    u_dims: (usize, usize),
    cat_dims: (usize, usize),
    cache: BnCache<S>,
    act: FeatureMap<S>,
}

struct Tape<S> {
    enc: Vec<EncLevel<S>>,
    dec: Vec<DecLevel<S>>,
    output: Vec<S>,
}

pub fn init_generator<S: Scalar>(cfg: HourglassConfig, dims: (usize, usize), seed: u64) -> Result<GeneratorState<S>> {
    GeneratorState::new(cfg, dims, seed)
}

/// Fresh trainables: `z ~ U[0, 0.1]`, `gamma = 1`, `beta = 0`.
fn draw_params<S: Scalar, R: Rng>(layout: &ParamLayout, rng: &mut R) -> ParamVector<S> {
    let mut p = vec![S::zero(); layout.len()];
    for v in &mut p[layout.z.clone()] {
        *v = S::from_f64_lossy(rng.random_range(0.0..0.1));
    }
    for slot in &layout.bn {
        p[slot.gamma.clone()].fill(S::one());
    }
    ParamVector(p)
}

impl<S: Scalar> GeneratorState<S> {
    /// Kernels from `N(0, 2 / fan_in)`, then fresh trainables, all from one seeded stream.
    pub fn new(config: HourglassConfig, dims: (usize, usize), seed: u64) -> Result<Self> {
        config.validate()?;
        let d = config.divisor();
        if dims.0 == 0 || dims.1 == 0 || !dims.0.is_multiple_of(d) || !dims.1.is_multiple_of(d) {
            return Err(Error::DimensionMismatch(format!(
                "generator dims {}x{} must be positive multiples of {d}",
                dims.0, dims.1
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (c, k) = (config.channels, config.kernel);
        let mut skip = Vec::with_capacity(config.scales);
        let mut down = Vec::with_capacity(config.scales);
        for l in 0..config.scales {
            let cin = if l == 0 { config.latent_channels } else { c };
            skip.push(if config.skip_channels > 0 {
                Some(Conv::he_init(cin, config.skip_channels, 1, 1, &mut rng))
            } else {
                None
            });
            down.push(Conv::he_init(cin, c, k, 2, &mut rng));
        }
        let mut up: Vec<Conv<S>> = (0..config.scales)
            .map(|_| Conv::he_init(c + config.skip_channels, c, k, 1, &mut rng))
            .collect();
        // drawn deepest first
        up.reverse();
        let out = Conv::he_init(c, 1, 1, 1, &mut rng);
        let layout = ParamLayout::new(&config, dims);
        let params = draw_params(&layout, &mut rng);
        let bn_stats = layout
            .bn
            .iter()
            .map(|s| BnStats {
                mean: vec![S::zero(); s.width],
                var: vec![S::one(); s.width],
            })
            .collect();
        Ok(GeneratorState {
            config,
            dims,
            seed,
            frozen: FrozenWeights { skip, down, up, out },
            layout,
            params,
            bn_stats,
        })
    }

    pub fn trainable_count(&self) -> usize {
        self.layout.len()
    }

    pub fn get_params(&self) -> ParamVector<S> {
        self.params.clone()
    }

    pub fn params(&self) -> &ParamVector<S> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamVector<S> {
        &mut self.params
    }

    pub fn set_params(&mut self, p: &ParamVector<S>) -> Result<()> {
        if p.len() != self.layout.len() {
            return Err(Error::LengthMismatch {
                expected: self.layout.len(),
                got: p.len(),
            });
        }
        self.params.0.copy_from_slice(&p.0);
        Ok(())
    }

    /// Fresh trainables from their own seeded stream; frozen weights untouched.
    pub fn fresh_params(&self, seed: u64) -> ParamVector<S> {
        draw_params(&self.layout, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn frozen_checksum(&self) -> u64 {
        self.frozen.checksum()
    }

    /// Exponential update of the running statistics from one batch.
    pub fn update_running_stats(&mut self, batch: &[BnStats<S>], momentum: S) {
        for (run, b) in self.bn_stats.iter_mut().zip(batch) {
            for (r, &v) in run.mean.iter_mut().zip(&b.mean) {
                *r = (S::one() - momentum) * *r + momentum * v;
            }
            for (r, &v) in run.var.iter_mut().zip(&b.var) {
                *r = (S::one() - momentum) * *r + momentum * v;
            }
        }
    }

    fn gamma(&self, slot: usize) -> &[S] {
        &self.params.0[self.layout.bn[slot].gamma.clone()]
    }

    fn beta(&self, slot: usize) -> &[S] {
        &self.params.0[self.layout.bn[slot].beta.clone()]
    }

    fn bn_act(&self, pre: &FeatureMap<S>, slot: usize, slope: S) -> (BnCache<S>, FeatureMap<S>) {
        let (mut y, cache) = batch_norm_forward(pre, self.gamma(slot), self.beta(slot));
        leaky_relu_inplace(&mut y, slope);
        (cache, y)
    }

    fn forward_tape(&self) -> Tape<S> {
        let cfg = &self.config;
        let slope = lit::<S>(cfg.slope());
        let (h, w) = self.dims;
        let z = FeatureMap::from_vec(cfg.latent_channels, h, w, self.params.0[self.layout.z.clone()].to_vec());

        let mut enc: Vec<EncLevel<S>> = Vec::with_capacity(cfg.scales);
        for l in 0..cfg.scales {
            let input = if l == 0 { &z } else { &enc[l - 1].down_act };
            let skip = self.frozen.skip[l]
                .as_ref()
                .map(|conv| self.bn_act(&conv.forward(input), self.layout.skip_bn[l].expect("skip slot"), slope));
            let (down_cache, down_act) =
                self.bn_act(&self.frozen.down[l].forward(input), self.layout.down_bn[l], slope);
            let level = EncLevel {
                in_dims: (input.h, input.w),
                skip,
                down_cache,
                down_act,
            };
            enc.push(level);
        }

        let mut dec: Vec<Option<DecLevel<S>>> = (0..cfg.scales).map(|_| None).collect();
        for l in (0..cfg.scales).rev() {
            let u = if l + 1 == cfg.scales {
                &enc[l].down_act
            } else {
                &dec[l + 1].as_ref().expect("deeper level").act
            };
            let up = upsample_bilinear2x(u);
            let cat = match &enc[l].skip {
                Some((_, s)) => up.concat(s),
                None => up,
            };
            let (cache, act) = self.bn_act(&self.frozen.up[l].forward(&cat), self.layout.up_bn[l], slope);
            let level = DecLevel {
                u_dims: (u.h, u.w),
                cat_dims: (cat.h, cat.w),
                cache,
                act,
            };
            dec[l] = Some(level);
        }
        let dec: Vec<DecLevel<S>> = dec.into_iter().map(|d| d.expect("decoder level")).collect();

        let pre = self.frozen.out.forward(&dec[0].act);
        let output = pre.data.into_iter().map(sigmoid).collect();
        Tape { enc, dec, output }
    }

    /// Which side of every non-differentiable point the current trainables sit
    /// on: the sign of each leaky-relu input, then the sign of each horizontal
    /// and vertical output difference seen by the total-variation term. The
    /// loss is smooth along any segment over which this stays constant.
    pub fn kink_signature(&self) -> Vec<bool> {
        let t = self.forward_tape();
        let pos = |m: &FeatureMap<S>| m.data.iter().map(|&v| v > S::zero()).collect::<Vec<_>>();
        let mut sig = Vec::new();
        for l in &t.enc {
            if let Some((_, s)) = &l.skip {
                sig.extend(pos(s));
            }
            sig.extend(pos(&l.down_act));
        }
        for l in &t.dec {
            sig.extend(pos(&l.act));
        }
        let (h, w) = self.dims;
        let o = &t.output;
        for i in 0..h {
            for j in 0..w {
                if j + 1 < w {
                    sig.push(o[i * w + j + 1] > o[i * w + j]);
                }
                if i + 1 < h {
                    sig.push(o[(i + 1) * w + j] > o[i * w + j]);
                }
            }
        }
        sig
    }

    /// `x = G(z)`, an `H x W` image with values in `(0, 1)`.
    pub fn forward(&self) -> Array2<S> {
        let t = self.forward_tape();
        Array2::from_shape_vec(self.dims, t.output).expect("output dims")
    }

    fn batch_stats(&self, tape: &Tape<S>) -> Vec<BnStats<S>> {
        let mut stats: Vec<Option<BnStats<S>>> = vec![None; self.layout.bn.len()];
        let grab = |c: &BnCache<S>| BnStats {
            mean: c.mean.clone(),
            var: c.var.clone(),
        };
        for (l, e) in tape.enc.iter().enumerate() {
            if let (Some(slot), Some((c, _))) = (self.layout.skip_bn[l], &e.skip) {
                stats[slot] = Some(grab(c));
            }
            stats[self.layout.down_bn[l]] = Some(grab(&e.down_cache));
        }
        for (l, d) in tape.dec.iter().enumerate() {
            stats[self.layout.up_bn[l]] = Some(grab(&d.cache));
        }
        stats.into_iter().map(|s| s.expect("every slot visited")).collect()
    }

    fn store_bn_grad(&self, grad: &mut [S], slot: usize, dgamma: &[S], dbeta: &[S]) {
        let s = &self.layout.bn[slot];
        grad[s.gamma.clone()].copy_from_slice(dgamma);
        grad[s.beta.clone()].copy_from_slice(dbeta);
    }

    /// Reverse pass from `d loss / d output` to the trainable parameters.
    fn backward(&self, tape: &Tape<S>, grad_output: &[S]) -> ParamVector<S> {
        let cfg = &self.config;
        let slope = lit::<S>(cfg.slope());
        let (h, w) = self.dims;
        let mut grad = vec![S::zero(); self.layout.len()];

        let g_pre: Vec<S> = grad_output
            .iter()
            .zip(&tape.output)
            .map(|(&g, &s)| g * s * (S::one() - s))
            .collect();
        let mut g_u = self
            .frozen
            .out
            .backward_input(&FeatureMap::from_vec(1, h, w, g_pre), h, w);

        let mut g_skip: Vec<Option<FeatureMap<S>>> = (0..cfg.scales).map(|_| None).collect();
        for (l, d) in tape.dec.iter().enumerate() {
            leaky_relu_backward_inplace(&mut g_u, &d.act, slope);
            let slot = self.layout.up_bn[l];
            let (dx, dg, db) = batch_norm_backward(&g_u, &d.cache, self.gamma(slot));
            self.store_bn_grad(&mut grad, slot, &dg, &db);
            let g_cat = self.frozen.up[l].backward_input(&dx, d.cat_dims.0, d.cat_dims.1);
            let g_up = if cfg.skip_channels > 0 {
                let (g_up, g_s) = g_cat.split(cfg.channels);
                g_skip[l] = Some(g_s);
                g_up
            } else {
                g_cat
            };
            g_u = upsample_bilinear2x_backward(&g_up, d.u_dims.0, d.u_dims.1);
        }

        let mut g_a = g_u;
        for l in (0..cfg.scales).rev() {
            let e = &tape.enc[l];
            let (ih, iw) = e.in_dims;
            leaky_relu_backward_inplace(&mut g_a, &e.down_act, slope);
            let slot = self.layout.down_bn[l];
            let (dx, dg, db) = batch_norm_backward(&g_a, &e.down_cache, self.gamma(slot));
            self.store_bn_grad(&mut grad, slot, &dg, &db);
            let mut g_in = self.frozen.down[l].backward_input(&dx, ih, iw);
            if let (Some((cache, act)), Some(conv)) = (&e.skip, &self.frozen.skip[l]) {
                let mut gs = g_skip[l].take().expect("skip gradient");
                leaky_relu_backward_inplace(&mut gs, act, slope);
                let slot = self.layout.skip_bn[l].expect("skip slot");
                let (dx, dg, db) = batch_norm_backward(&gs, cache, self.gamma(slot));
                self.store_bn_grad(&mut grad, slot, &dg, &db);
                let g2 = conv.backward_input(&dx, ih, iw);
                for (a, b) in g_in.data.iter_mut().zip(&g2.data) {
                    *a += *b;
                }
            }
            g_a = g_in;
        }
        grad[self.layout.z.clone()].copy_from_slice(&g_a.data);
        ParamVector(grad)
    }

    /// `loss = sum((G(z) - y)^2) + lambda * TV(G(z))` and its exact gradient with
    /// respect to the trainable parameters.
    pub fn loss_and_gradients(&self, target: &Array2<S>, lambda: S) -> Result<LossEval<S>> {
        if target.dim() != self.dims {
            return Err(Error::DimensionMismatch(format!(
                "target {:?} vs generator {:?}",
                target.dim(),
                self.dims
            )));
        }
        let tape = self.forward_tape();
        let (h, w) = self.dims;
        let output = Array2::from_shape_vec(self.dims, tape.output.clone()).expect("output dims");
        let two = lit::<S>(2.0);
        let mut data_loss = S::zero();
        let mut g_out = Vec::with_capacity(h * w);
        for (&x, &y) in tape.output.iter().zip(target.iter()) {
            let d = x - y;
            data_loss += d * d;
            g_out.push(two * d);
        }
        let tv_val = tv(&output);
        if lambda != S::zero() {
            tv_accumulate_grad(&tape.output, h, w, lambda, &mut g_out);
        }
        let loss = data_loss + lambda * tv_val;
        if !loss.is_finite() {
            return Err(Error::NonFinite {
                what: "loss",
                iter: 0,
                context: String::new(),
            });
        }
        let grad = self.backward(&tape, &g_out);
        let batch_stats = self.batch_stats(&tape);
        Ok(LossEval {
            loss,
            data_loss,
            tv: tv_val,
            grad,
            output,
            batch_stats,
        })
    }
}
