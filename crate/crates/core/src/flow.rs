//! Flow matching on toy latents: the conditional velocity network with its
//! backward pass, the multi-task trainer (Adam + one-cycle), Euler sampling
//! with classifier-free guidance, and a versioned checkpoint format.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::camera::{EulerCamera, RelPoseDescriptor};
use crate::conditioning::{
    align_source, assemble_from_view, drop_camera_condition, ConditioningTuple, EncoderStrides, LatentGrid, PairView, PoseCondition,
    PoseEncoder, PoseEncoderCache, Task, DESCRIPTOR_LEN,
};
use crate::error::{Error, Result};
use crate::imageio::RgbImage;
use crate::mask::BinaryMaskVolume;
use crate::nn::{add_col_sums, add_row, cast, col2im, im2col, silu, silu_grad, Linear, Scalar};
use crate::synth::SamplePair;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetConfig {
    /// Side of the (square) training images.
    pub image_size: usize,
    /// Side of the reference crop.
    pub ref_size: usize,
    /// Space-to-depth stride shared by the image and mask encoders.
    pub stride: usize,
    pub width: usize,
    pub hidden: usize,
    pub blocks: usize,
    pub token_dim: usize,
    pub pose_freqs: usize,
    pub time_freqs: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            image_size: 64,
            ref_size: 32,
            stride: 4,
            width: 64,
            hidden: 128,
            blocks: 4,
            token_dim: 64,
            pose_freqs: 6,
            time_freqs: 6,
        }
    }
}

impl NetConfig {
    /// A network small enough for exhaustive finite-difference checks.
    pub fn probe() -> Self {
        Self {
            image_size: 4,
            ref_size: 4,
            stride: 2,
            width: 3,
            hidden: 4,
            blocks: 2,
            token_dim: 4,
            pose_freqs: 2,
            time_freqs: 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("image_size", self.image_size),
            ("ref_size", self.ref_size),
            ("stride", self.stride),
            ("width", self.width),
            ("hidden", self.hidden),
            ("token_dim", self.token_dim),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::config(name, "must be positive"));
            }
        }
        if self.image_size % self.stride != 0 {
            return Err(Error::config("stride", "must divide image_size"));
        }
        if self.ref_size % self.stride != 0 {
            return Err(Error::config("stride", "must divide ref_size"));
        }
        Ok(())
    }

    pub fn strides(&self) -> EncoderStrides {
        EncoderStrides {
            latent: self.stride,
            mask: self.stride,
        }
    }
    pub fn latent_channels(&self) -> usize {
        3 * self.stride * self.stride
    }
    pub fn mask_channels(&self) -> usize {
        self.stride * self.stride
    }
    pub fn grid(&self) -> usize {
        self.image_size / self.stride
    }
    /// Channels of the spatial condition: source latent, both mask codes,
    /// then the source object moved into the target box (latent + mask).
    pub fn cond_channels(&self) -> usize {
        2 * self.latent_channels() + 3 * self.mask_channels()
    }
    fn time_features(&self) -> usize {
        2 * self.time_freqs + 1
    }
}

/// Parameter groups: the denoising backbone, and everything that reads the
/// condition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Group {
    Backbone,
    Control,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block<F> {
    pub w1: Linear<F>,
    /// Time modulation added before the nonlinearity.
    pub t_mod: Linear<F>,
    pub w2: Linear<F>,
}

/// Residual per-position backbone over the latent grid, plus a control
/// branch (pose tokens, global pooled condition, two 3×3 convolutions over
/// the spatial condition) injected before every block through
/// zero-initialised projections.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityNet<F> {
    pub cfg: NetConfig,
    pub t_embed: Linear<F>,
    pub t_in: Linear<F>,
    pub input: Linear<F>,
    pub blocks: Vec<Block<F>>,
    pub output: Linear<F>,
    pub pose: PoseEncoder<F>,
    pub cond_global: Linear<F>,
    pub ref_proj: Linear<F>,
    pub token_proj: Linear<F>,
    pub conv1: Linear<F>,
    pub conv2: Linear<F>,
    pub inject: Vec<Linear<F>>,
}

fn time_features(t: f64, n: usize) -> Vec<f64> {
    let mut v = vec![t];
    for k in 0..n {
        let a = std::f64::consts::PI * (1u64 << k) as f64 * t;
        v.push(a.sin());
        v.push(a.cos());
    }
    v
}

fn push_lin<'a, F>(out: &mut Vec<(String, Group, &'a mut Vec<F>)>, name: &str, g: Group, l: &'a mut Linear<F>) {
    out.push((format!("{name}.w"), g, &mut l.w));
    out.push((format!("{name}.b"), g, &mut l.b));
}

impl<F: Scalar> VelocityNet<F> {
    /// All-zero parameters with the shapes implied by `cfg`.
    pub fn zeros(cfg: &NetConfig) -> Result<Self> {
        cfg.validate()?;
        let (c, hd) = (cfg.width, cfg.hidden);
        Ok(Self {
            cfg: cfg.clone(),
            t_embed: Linear::zeros(cfg.time_features(), c),
            t_in: Linear::zeros(c, c),
            input: Linear::zeros(cfg.latent_channels(), c),
            blocks: (0..cfg.blocks)
                .map(|_| Block {
                    w1: Linear::zeros(c, hd),
                    t_mod: Linear::zeros(c, hd),
                    w2: Linear::zeros(hd, c),
                })
                .collect(),
            output: Linear::zeros(c, cfg.latent_channels()),
            pose: PoseEncoder::zeros(cfg.pose_freqs, cfg.token_dim),
            cond_global: Linear::zeros(cfg.cond_channels(), c),
            ref_proj: Linear::zeros(cfg.latent_channels(), c),
            token_proj: Linear::zeros(DESCRIPTOR_LEN * cfg.token_dim, c),
            conv1: Linear::zeros(9 * cfg.cond_channels(), c),
            conv2: Linear::zeros(9 * c, c),
            inject: (0..cfg.blocks).map(|_| Linear::zeros(c, c)).collect(),
        })
    }

    /// Random initialisation; the injection projections start at zero.
    pub fn init(cfg: &NetConfig, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        let (c, hd) = (cfg.width, cfg.hidden);
        let scale = 1.0 / cfg.blocks.max(1) as f64;
        Ok(Self {
            cfg: cfg.clone(),
            t_embed: Linear::init(cfg.time_features(), c, 2.0, rng),
            t_in: Linear::init(c, c, 1.0, rng),
            input: Linear::init(cfg.latent_channels(), c, 1.0, rng),
            blocks: (0..cfg.blocks)
                .map(|_| Block {
                    w1: Linear::init(c, hd, 2.0, rng),
                    t_mod: Linear::init(c, hd, 1.0, rng),
                    w2: Linear::init(hd, c, scale, rng),
                })
                .collect(),
            output: Linear::init(c, cfg.latent_channels(), 1.0, rng),
            pose: PoseEncoder::init(cfg.pose_freqs, cfg.token_dim, rng),
            cond_global: Linear::init(cfg.cond_channels(), c, 1.0, rng),
            ref_proj: Linear::init(cfg.latent_channels(), c, 1.0, rng),
            token_proj: Linear::init(DESCRIPTOR_LEN * cfg.token_dim, c, 1.0, rng),
            conv1: Linear::init(9 * cfg.cond_channels(), c, 2.0, rng),
            conv2: Linear::init(9 * c, c, 1.0, rng),
            inject: (0..cfg.blocks).map(|_| Linear::zeros(c, c)).collect(),
        })
    }

    /// Every parameter tensor with a stable name, in checkpoint order.
    pub fn tensors_mut(&mut self) -> Vec<(String, Group, &mut Vec<F>)> {
        use Group::*;
        let mut out = Vec::new();
        let VelocityNet {
            cfg: _,
            t_embed,
            t_in,
            input,
            blocks,
            output,
            pose,
            cond_global,
            ref_proj,
            token_proj,
            conv1,
            conv2,
            inject,
        } = self;
        push_lin(&mut out, "t_embed", Backbone, t_embed);
        push_lin(&mut out, "t_in", Backbone, t_in);
        push_lin(&mut out, "input", Backbone, input);
        for (k, b) in blocks.iter_mut().enumerate() {
            push_lin(&mut out, &format!("block{k}.w1"), Backbone, &mut b.w1);
            push_lin(&mut out, &format!("block{k}.t_mod"), Backbone, &mut b.t_mod);
            push_lin(&mut out, &format!("block{k}.w2"), Backbone, &mut b.w2);
        }
        push_lin(&mut out, "output", Backbone, output);
        push_lin(&mut out, "pose.l1", Control, &mut pose.l1);
        push_lin(&mut out, "pose.l2", Control, &mut pose.l2);
        push_lin(&mut out, "pose.l3", Control, &mut pose.l3);
        out.push(("pose.emb".into(), Control, &mut pose.emb));
        out.push(("pose.null".into(), Control, &mut pose.null));
        push_lin(&mut out, "cond_global", Control, cond_global);
        push_lin(&mut out, "ref_proj", Control, ref_proj);
        push_lin(&mut out, "token_proj", Control, token_proj);
        push_lin(&mut out, "conv1", Control, conv1);
        push_lin(&mut out, "conv2", Control, conv2);
        for (k, l) in inject.iter_mut().enumerate() {
            push_lin(&mut out, &format!("inject{k}"), Control, l);
        }
        out
    }

    /// Read-only view of [`Self::tensors_mut`].
    pub fn tensors(&self) -> Vec<(String, Group, Vec<F>)> {
        let mut copy = self.clone();
        copy.tensors_mut().into_iter().map(|(n, g, v)| (n, g, v.clone())).collect()
    }

    pub fn num_params(&self) -> usize {
        self.clone().tensors_mut().iter().map(|(_, _, v)| v.len()).sum()
    }

    pub fn convert<G: Scalar>(&self) -> VelocityNet<G> {
        VelocityNet {
            cfg: self.cfg.clone(),
            t_embed: self.t_embed.convert(),
            t_in: self.t_in.convert(),
            input: self.input.convert(),
            blocks: self
                .blocks
                .iter()
                .map(|b| Block {
                    w1: b.w1.convert(),
                    t_mod: b.t_mod.convert(),
                    w2: b.w2.convert(),
                })
                .collect(),
            output: self.output.convert(),
            pose: self.pose.convert(),
            cond_global: self.cond_global.convert(),
            ref_proj: self.ref_proj.convert(),
            token_proj: self.token_proj.convert(),
            conv1: self.conv1.convert(),
            conv2: self.conv2.convert(),
            inject: self.inject.iter().map(|l| l.convert()).collect(),
        }
    }

    /// Flatten a tuple into network inputs, checking every slot's shape.
    pub fn prepare(&self, cond: &ConditioningTuple) -> Result<CondInputs<F>> {
        let cfg = &self.cfg;
        let g = cfg.grid();
        let expect_latent = (cfg.latent_channels(), g, g);
        if cond.src_latent.shape() != expect_latent {
            return Err(Error::ShapeMismatch(format!(
                "source latent {:?}, expected {expect_latent:?}",
                cond.src_latent.shape()
            )));
        }
        let rs = cfg.ref_size / cfg.stride;
        if cond.ref_latent.shape() != (cfg.latent_channels(), rs, rs) {
            return Err(Error::ShapeMismatch(format!(
                "reference latent {:?}, expected {:?}",
                cond.ref_latent.shape(),
                (cfg.latent_channels(), rs, rs)
            )));
        }
        let expect_code = (1, cfg.mask_channels(), g, g);
        for code in [&cond.src_mask_code, &cond.tgt_mask_code] {
            if code.shape() != expect_code {
                return Err(Error::ShapeMismatch(format!(
                    "mask code {:?}, expected {expect_code:?}",
                    code.shape()
                )));
            }
        }
        let (cz, cm, cx) = (cfg.latent_channels(), cfg.mask_channels(), cfg.cond_channels());
        let p = g * g;
        let src = cond.src_latent.to_rows::<F>();
        let aligned = align_source(cond, cfg.strides())?;
        let moved = aligned.latent.to_rows::<F>();
        let mut xc = vec![F::zero(); p * cx];
        for i in 0..p {
            let row = &mut xc[i * cx..(i + 1) * cx];
            row[..cz].copy_from_slice(&src[i * cz..(i + 1) * cz]);
            let (r, c) = (i / g, i % g);
            for ch in 0..cm {
                row[cz + ch] = cast(cond.src_mask_code.get(0, ch, r, c) as f64);
                row[cz + cm + ch] = cast(cond.tgt_mask_code.get(0, ch, r, c) as f64);
            }
            let base = cz + 2 * cm;
            row[base..base + cz].copy_from_slice(&moved[i * cz..(i + 1) * cz]);
            for ch in 0..cm {
                row[base + cz + ch] = cast(aligned.mask_code.get(0, ch, r, c) as f64);
            }
        }
        let mut xc_mean = vec![F::zero(); cx];
        add_col_sums(&xc, cx, &mut xc_mean);
        let inv = cast::<F>(1.0 / p as f64);
        xc_mean.iter_mut().for_each(|v| *v *= inv);
        let ref_mean = cond.ref_latent.channel_means().into_iter().map(cast).collect();
        let pose = match cond.pose {
            PoseCondition::Descriptor(f) => Some(f.to_array()),
            PoseCondition::Null => None,
        };
        Ok(CondInputs {
            xc,
            xc_mean,
            ref_mean,
            pose,
        })
    }

    /// `v_θ(z_t, c, t)` on position-major rows.
    pub fn forward(&self, zt: &[F], t: f64, cond: &CondInputs<F>) -> (Vec<F>, ForwardCache<F>) {
        let cfg = &self.cfg;
        let (g, c) = (cfg.grid(), cfg.width);
        let p = g * g;
        let tf: Vec<F> = time_features(t, cfg.time_freqs).into_iter().map(cast).collect();
        let u = self.t_embed.forward(&tf, 1);
        let te: Vec<F> = u.iter().map(|&v| silu(v)).collect();

        let (tokens, pose_cache) = match &cond.pose {
            Some(f) => {
                let (tok, cache) = self.pose.forward(f);
                (tok, Some(cache))
            }
            None => (self.pose.null.clone(), None),
        };
        let mut gvec = self.cond_global.forward(&cond.xc_mean, 1);
        for (a, b) in gvec.iter_mut().zip(self.ref_proj.forward(&cond.ref_mean, 1)) {
            *a += b;
        }
        for (a, b) in gvec.iter_mut().zip(self.token_proj.forward(&tokens, 1)) {
            *a += b;
        }
        let col1 = im2col(&cond.xc, g, g, cfg.cond_channels());
        let mut pre1 = self.conv1.forward(&col1, p);
        add_row(&mut pre1, &gvec);
        let c1: Vec<F> = pre1.iter().map(|&v| silu(v)).collect();
        let col2 = im2col(&c1, g, g, c);
        let pre2 = self.conv2.forward(&col2, p);
        let c2: Vec<F> = c1.iter().zip(&pre2).map(|(a, b)| *a + silu(*b)).collect();

        let mut h = self.input.forward(zt, p);
        add_row(&mut h, &self.t_in.forward(&te, 1));
        let mut block_caches = Vec::with_capacity(self.blocks.len());
        for (blk, inj) in self.blocks.iter().zip(&self.inject) {
            for (a, b) in h.iter_mut().zip(inj.forward(&c2, p)) {
                *a += b;
            }
            let mut ap = blk.w1.forward(&h, p);
            add_row(&mut ap, &blk.t_mod.forward(&te, 1));
            let a: Vec<F> = ap.iter().map(|&v| silu(v)).collect();
            let h_mid = h.clone();
            for (x, y) in h.iter_mut().zip(blk.w2.forward(&a, p)) {
                *x += y;
            }
            block_caches.push(BlockCache { h_mid, ap, a });
        }
        let v = self.output.forward(&h, p);
        (
            v,
            ForwardCache {
                zt: zt.to_vec(),
                tf,
                u,
                te,
                tokens,
                pose_cache,
                col1,
                pre1,
                c1,
                col2,
                pre2,
                c2,
                blocks: block_caches,
                h_out: h,
            },
        )
    }

    /// Accumulate `∂L/∂θ` into `grad` given `dv = ∂L/∂v`.
    pub fn backward(&self, cache: &ForwardCache<F>, cond: &CondInputs<F>, dv: &[F], grad: &mut VelocityNet<F>) {
        let cfg = &self.cfg;
        let (g, c) = (cfg.grid(), cfg.width);
        let p = g * g;
        let mut dh = self.output.backward(&cache.h_out, dv, p, &mut grad.output, true).unwrap();
        let mut dte = vec![F::zero(); c];
        let mut dc2 = vec![F::zero(); p * c];
        for k in (0..self.blocks.len()).rev() {
            let (blk, bc) = (&self.blocks[k], &cache.blocks[k]);
            let gb = &mut grad.blocks[k];
            let da = blk.w2.backward(&bc.a, &dh, p, &mut gb.w2, true).unwrap();
            let dap: Vec<F> = da.iter().zip(&bc.ap).map(|(d, x)| *d * silu_grad(*x)).collect();
            let dh_mid = blk.w1.backward(&bc.h_mid, &dap, p, &mut gb.w1, true).unwrap();
            let mut dmod = vec![F::zero(); cfg.hidden];
            add_col_sums(&dap, cfg.hidden, &mut dmod);
            let dte_k = blk.t_mod.backward(&cache.te, &dmod, 1, &mut gb.t_mod, true).unwrap();
            for (a, b) in dte.iter_mut().zip(dte_k) {
                *a += b;
            }
            for (a, b) in dh.iter_mut().zip(dh_mid) {
                *a += b;
            }
            let dc2_k = self.inject[k].backward(&cache.c2, &dh, p, &mut grad.inject[k], true).unwrap();
            for (a, b) in dc2.iter_mut().zip(dc2_k) {
                *a += b;
            }
        }
        let mut dtin = vec![F::zero(); c];
        add_col_sums(&dh, c, &mut dtin);
        self.input.backward(&cache.zt, &dh, p, &mut grad.input, false);
        let dte_in = self.t_in.backward(&cache.te, &dtin, 1, &mut grad.t_in, true).unwrap();
        for (a, b) in dte.iter_mut().zip(dte_in) {
            *a += b;
        }
        let du: Vec<F> = dte.iter().zip(&cache.u).map(|(d, x)| *d * silu_grad(*x)).collect();
        self.t_embed.backward(&cache.tf, &du, 1, &mut grad.t_embed, false);

        // Control branch.
        let dpre2: Vec<F> = dc2.iter().zip(&cache.pre2).map(|(d, x)| *d * silu_grad(*x)).collect();
        let dcol2 = self.conv2.backward(&cache.col2, &dpre2, p, &mut grad.conv2, true).unwrap();
        let mut dc1 = col2im(&dcol2, g, g, c);
        for (a, b) in dc1.iter_mut().zip(&dc2) {
            *a += *b;
        }
        let dpre1: Vec<F> = dc1.iter().zip(&cache.pre1).map(|(d, x)| *d * silu_grad(*x)).collect();
        self.conv1.backward(&cache.col1, &dpre1, p, &mut grad.conv1, false);
        let mut dg = vec![F::zero(); c];
        add_col_sums(&dpre1, c, &mut dg);
        self.cond_global.backward(&cond.xc_mean, &dg, 1, &mut grad.cond_global, false);
        self.ref_proj.backward(&cond.ref_mean, &dg, 1, &mut grad.ref_proj, false);
        let dtok = self.token_proj.backward(&cache.tokens, &dg, 1, &mut grad.token_proj, true).unwrap();
        match &cache.pose_cache {
            Some(pc) => self.pose.backward(pc, &dtok, &mut grad.pose),
            None => {
                for (a, b) in grad.pose.null.iter_mut().zip(&dtok) {
                    *a += *b;
                }
            }
        }
    }

    /// Set every gradient in `group` to zero.
    pub fn zero_group(&mut self, group: Group) {
        for (_, g, v) in self.tensors_mut() {
            if g == group {
                v.iter_mut().for_each(|x| *x = F::zero());
            }
        }
    }
}

/// Network-ready condition.
#[derive(Debug, Clone)]
pub struct CondInputs<F> {
    /// `P × (latent + 2·mask)` spatial condition.
    pub xc: Vec<F>,
    pub xc_mean: Vec<F>,
    pub ref_mean: Vec<F>,
    pub pose: Option<[f64; DESCRIPTOR_LEN]>,
}

struct BlockCache<F> {
    h_mid: Vec<F>,
    ap: Vec<F>,
    a: Vec<F>,
}

pub struct ForwardCache<F> {
    zt: Vec<F>,
    tf: Vec<F>,
    u: Vec<F>,
    te: Vec<F>,
    tokens: Vec<F>,
    pose_cache: Option<PoseEncoderCache<F>>,
    col1: Vec<F>,
    pre1: Vec<F>,
    c1: Vec<F>,
    col2: Vec<F>,
    pre2: Vec<F>,
    c2: Vec<F>,
    blocks: Vec<BlockCache<F>>,
    h_out: Vec<F>,
}

impl<F> ForwardCache<F> {
    /// Output of the control branch, before injection.
    pub fn control_features(&self) -> &[F] {
        &self.c2
    }
    pub fn first_control_activation(&self) -> &[F] {
        &self.c1
    }
}

/// One point on the straight path from data to noise.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowSample {
    pub z0: LatentGrid,
    pub eps: LatentGrid,
    pub t: f64,
    pub zt: LatentGrid,
    pub v_star: LatentGrid,
}

pub fn standard_normal_grid(shape: (usize, usize, usize), rng: &mut impl Rng) -> LatentGrid {
    let (c, h, w) = shape;
    let data = (0..c * h * w).map(|_| StandardNormal.sample(rng)).collect();
    LatentGrid::new(c, h, w, data).expect("finite normal draws")
}

/// `z_t = (1−t)·z0 + t·ε`, `v* = ε − z0`.
pub fn make_flow_sample(z0: &LatentGrid, rng: &mut impl Rng, t: f64) -> Result<FlowSample> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::BadParams(format!("t must be in [0,1], got {t}")));
    }
    let eps = standard_normal_grid(z0.shape(), rng);
    let (c, h, w) = z0.shape();
    let zt = z0.data().iter().zip(eps.data()).map(|(a, e)| (1.0 - t) * a + t * e).collect();
    let v = z0.data().iter().zip(eps.data()).map(|(a, e)| e - a).collect();
    Ok(FlowSample {
        z0: z0.clone(),
        t,
        zt: LatentGrid::new(c, h, w, zt)?,
        v_star: LatentGrid::new(c, h, w, v)?,
        eps,
    })
}

/// Mean squared difference.
pub fn fm_loss(pred_v: &LatentGrid, sample: &FlowSample) -> Result<f64> {
    if pred_v.shape() != sample.v_star.shape() {
        return Err(Error::ShapeMismatch(format!(
            "prediction {:?} vs target {:?}",
            pred_v.shape(),
            sample.v_star.shape()
        )));
    }
    let n = pred_v.data().len() as f64;
    Ok(pred_v.data().iter().zip(sample.v_star.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n)
}

/// One supervised example: condition plus flow sample of the task target.
#[derive(Debug, Clone)]
pub struct TrainingExample {
    pub cond: ConditioningTuple,
    pub sample: FlowSample,
}

/// Mean flow-matching loss over `batch`, per-example losses and the
/// analytic gradient. Fails with `NonFinite` on any non-finite value.
pub fn batch_gradients<F: Scalar>(net: &VelocityNet<F>, batch: &[TrainingExample]) -> Result<(f64, Vec<f64>, VelocityNet<F>)> {
    let mut grad = VelocityNet::zeros(&net.cfg)?;
    let mut losses = Vec::with_capacity(batch.len());
    let nb = batch.len().max(1) as f64;
    for ex in batch {
        let cond = net.prepare(&ex.cond)?;
        let zt = ex.sample.zt.to_rows::<F>();
        let vs = ex.sample.v_star.to_rows::<F>();
        let (v, cache) = net.forward(&zt, ex.sample.t, &cond);
        let n = v.len() as f64;
        let mut loss = 0.0;
        let scale = cast::<F>(2.0 / (n * nb));
        let dv: Vec<F> = v
            .iter()
            .zip(&vs)
            .map(|(a, b)| {
                let r = *a - *b;
                loss += r.to_f64().unwrap().powi(2);
                r * scale
            })
            .collect();
        let loss = loss / n;
        if !loss.is_finite() {
            return Err(Error::NonFinite { step: None });
        }
        losses.push(loss);
        net.backward(&cache, &cond, &dv, &mut grad);
    }
    if grad
        .clone()
        .tensors_mut()
        .iter()
        .any(|(_, _, v)| v.iter().any(|x| !x.is_finite()))
    {
        return Err(Error::NonFinite { step: None });
    }
    let mean = losses.iter().sum::<f64>() / nb;
    Ok((mean, losses, grad))
}

/// Categorical draw proportional to `(main, removal, inpaint)` weights.
/// Always consumes one draw.
pub fn sample_task(rng: &mut impl Rng, weights: [f64; 3]) -> Task {
    let total: f64 = weights.iter().sum();
    let u: f64 = rng.random::<f64>() * total;
    if u < weights[0] {
        Task::Main
    } else if u < weights[0] + weights[1] || weights[2] == 0.0 {
        Task::Removal
    } else {
        Task::Inpaint
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    /// Everything trains.
    #[serde(rename = "I")]
    One,
    /// Backbone frozen; only the control branch trains.
    #[serde(rename = "II")]
    Two,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub task_weights: [f64; 3],
    pub dropout: f64,
    pub stage: Stage,
    pub seed: u64,
    pub pct_start: f64,
    pub div_factor: f64,
    pub final_div_factor: f64,
    /// Global gradient-norm clip; 0 disables.
    pub grad_clip: f64,
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            batch_size: 8,
            lr: 1e-3,
            task_weights: [8.0, 1.0, 1.0],
            dropout: 0.1,
            stage: Stage::One,
            seed: 0,
            pct_start: 0.3,
            div_factor: 25.0,
            final_div_factor: 1e4,
            grad_clip: 1.0,
            log_every: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be >= 1"));
        }
        if !(self.lr > 0.0) {
            return Err(Error::config("lr", "must be > 0"));
        }
        if self.task_weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) || self.task_weights.iter().sum::<f64>() <= 0.0 {
            return Err(Error::config("task_weights", "must be non-negative with a positive sum"));
        }
        if !(0.0..=1.0).contains(&self.dropout) {
            return Err(Error::config("dropout", "must be in [0, 1]"));
        }
        if !(self.pct_start > 0.0 && self.pct_start < 1.0) {
            return Err(Error::config("pct_start", "must be in (0, 1)"));
        }
        if !(self.div_factor >= 1.0 && self.final_div_factor >= 1.0) {
            return Err(Error::config("div_factor", "divisors must be >= 1"));
        }
        Ok(())
    }

    /// One-cycle learning rate at `step`: cosine warm-up from `lr/div`
    /// to `lr`, then cosine decay to `lr/(div·final_div)`.
    pub fn lr_at(&self, step: usize) -> f64 {
        let total = self.steps.max(1) as f64;
        let warm = (self.pct_start * total).max(1.0);
        let lo = self.lr / self.div_factor;
        let end = lo / self.final_div_factor;
        let anneal = |a: f64, b: f64, frac: f64| b + (a - b) * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos());
        let s = step as f64;
        if s < warm {
            anneal(lo, self.lr, s / warm)
        } else {
            anneal(self.lr, end, ((s - warm) / (total - warm).max(1.0)).min(1.0))
        }
    }
}

/// Adam state.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: i32,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(net: &mut VelocityNet<f32>) -> Self {
        let shapes: Vec<usize> = net.tensors_mut().iter().map(|(_, _, v)| v.len()).collect();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    /// Update every tensor not in `frozen`.
    pub fn step(&mut self, net: &mut VelocityNet<f32>, grad: &mut VelocityNet<f32>, lr: f64, frozen: Option<Group>) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        let (b1, b2) = (self.beta1 as f32, self.beta2 as f32);
        let step = (lr * bc2.sqrt() / bc1) as f32;
        let eps = (self.eps * bc2.sqrt()) as f32;
        for (k, ((_, group, w), (_, _, g))) in net.tensors_mut().into_iter().zip(grad.tensors_mut()).enumerate() {
            if Some(group) == frozen {
                continue;
            }
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for i in 0..w.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                w[i] -= step * m[i] / (v[i].sqrt() + eps);
            }
        }
    }
}

/// Training pair kept as 8-bit images.
#[derive(Debug, Clone)]
pub struct TrainPair {
    pub size: usize,
    pub ref_size: usize,
    pub x_src: Vec<u8>,
    pub x_tgt: Vec<u8>,
    pub x_bg: Option<Vec<u8>>,
    pub i_ref: Vec<u8>,
    pub m_src: BinaryMaskVolume,
    pub f: RelPoseDescriptor,
    pub s_src: EulerCamera,
    pub s_tgt: EulerCamera,
}

impl From<&SamplePair> for TrainPair {
    fn from(p: &SamplePair) -> Self {
        Self {
            size: p.x_src.height(),
            ref_size: p.i_ref.height(),
            x_src: p.x_src.to_u8(),
            x_tgt: p.x_tgt.to_u8(),
            x_bg: p.x_bg.as_ref().map(|x| x.to_u8()),
            i_ref: p.i_ref.to_u8(),
            m_src: p.m_src.clone(),
            f: p.f,
            s_src: p.s_src,
            s_tgt: p.s_tgt,
        }
    }
}

impl TrainPair {
    /// Condition and target image for `task`.
    pub fn materialize(&self, task: Task, strides: EncoderStrides) -> Result<(ConditioningTuple, RgbImage)> {
        let img = |b: &[u8], s: usize| RgbImage::from_u8(s, s, b);
        let x_src = img(&self.x_src, self.size)?;
        let i_ref = img(&self.i_ref, self.ref_size)?;
        let x_bg = self.x_bg.as_ref().map(|b| img(b, self.size)).transpose()?;
        let view = PairView {
            x_src: &x_src,
            i_ref: &i_ref,
            x_bg: x_bg.as_ref(),
            m_src: &self.m_src,
            f: &self.f,
            d_src: self.s_src.d(),
            d_tgt: self.s_tgt.d(),
        };
        if task == Task::Removal && x_bg.is_none() {
            return Err(Error::MissingBackground("removal"));
        }
        let cond = assemble_from_view(view, task, strides)?;
        let target = match task {
            Task::Main | Task::Inpaint => img(&self.x_tgt, self.size)?,
            Task::Removal => x_bg.expect("checked above"),
        };
        Ok((cond, target))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossRow {
    pub step: usize,
    pub task: Task,
    pub loss: f64,
}

/// Write `(step, task, loss)` rows.
pub fn write_loss_trace(path: &Path, rows: &[LossRow]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::format(path, e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Mean loss per step of a trace.
pub fn step_means(rows: &[LossRow]) -> Vec<f64> {
    let steps = rows.iter().map(|r| r.step + 1).max().unwrap_or(0);
    let mut sum = vec![0.0; steps];
    let mut n = vec![0usize; steps];
    for r in rows {
        sum[r.step] += r.loss;
        n[r.step] += 1;
    }
    sum.iter().zip(&n).map(|(s, &c)| if c == 0 { f64::NAN } else { s / c as f64 }).collect()
}

/// Train `net` in place and return the per-example loss trace.
pub fn train(net: &mut VelocityNet<f32>, data: &[TrainPair], cfg: &TrainConfig) -> Result<Vec<LossRow>> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::config("dataset", "training set is empty"));
    }
    let strides = net.cfg.strides();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut opt = Adam::new(net);
    let frozen = (cfg.stage == Stage::Two).then_some(Group::Backbone);
    let mut trace = Vec::with_capacity(cfg.steps * cfg.batch_size);
    for step in 0..cfg.steps {
        let mut batch = Vec::with_capacity(cfg.batch_size);
        for _ in 0..cfg.batch_size {
            let idx = rng.random_range(0..data.len());
            let task = sample_task(&mut rng, cfg.task_weights);
            let (cond, target) = data[idx].materialize(task, strides)?;
            let cond = drop_camera_condition(cond, &mut rng, cfg.dropout);
            let z0 = crate::conditioning::toy_encode(&target, strides.latent)?;
            let t: f64 = rng.random();
            let sample = make_flow_sample(&z0, &mut rng, t)?;
            batch.push(TrainingExample { cond, sample });
        }
        let (mean, losses, mut grad) = batch_gradients(net, &batch).map_err(|e| match e {
            Error::NonFinite { .. } => Error::NonFinite { step: Some(step) },
            other => other,
        })?;
        if let Some(g) = frozen {
            grad.zero_group(g);
        }
        if cfg.grad_clip > 0.0 {
            let norm = grad
                .tensors_mut()
                .iter()
                .flat_map(|(_, _, v)| v.iter())
                .map(|x| (*x as f64).powi(2))
                .sum::<f64>()
                .sqrt();
            if norm > cfg.grad_clip {
                let k = (cfg.grad_clip / norm) as f32;
                for (_, _, v) in grad.tensors_mut() {
                    v.iter_mut().for_each(|x| *x *= k);
                }
            }
        }
        opt.step(net, &mut grad, cfg.lr_at(step), frozen);
        for (ex, loss) in batch.iter().zip(losses) {
            trace.push(LossRow {
                step,
                task: ex.cond.task,
                loss,
            });
        }
        if cfg.log_every > 0 && (step + 1) % cfg.log_every == 0 {
            log::info!("step {} loss {:.4} lr {:.2e}", step + 1, mean, cfg.lr_at(step));
        }
    }
    Ok(trace)
}

/// Anything that predicts a velocity for a latent under a condition.
pub trait VelocityField {
    fn velocity(&self, z: &LatentGrid, t: f64, cond: &ConditioningTuple) -> Result<LatentGrid>;
}

impl<F: Scalar> VelocityField for VelocityNet<F> {
    fn velocity(&self, z: &LatentGrid, t: f64, cond: &ConditioningTuple) -> Result<LatentGrid> {
        let inputs = self.prepare(cond)?;
        let (c, h, w) = z.shape();
        if (c, h, w) != (self.cfg.latent_channels(), self.cfg.grid(), self.cfg.grid()) {
            return Err(Error::ShapeMismatch(format!("latent {:?} does not fit the network", z.shape())));
        }
        let (v, _) = self.forward(&z.to_rows::<F>(), t, &inputs);
        LatentGrid::from_rows(c, h, w, &v).map_err(|_| Error::NonFinite { step: None })
    }
}

/// Classifier-free guidance over the camera condition:
/// `v = v_null + scale·(v_cond − v_null)`.
pub struct Guided<'a, V> {
    pub field: &'a V,
    pub scale: f64,
}

impl<V: VelocityField> VelocityField for Guided<'_, V> {
    fn velocity(&self, z: &LatentGrid, t: f64, cond: &ConditioningTuple) -> Result<LatentGrid> {
        let vc = self.field.velocity(z, t, cond)?;
        if self.scale == 1.0 {
            return Ok(vc);
        }
        let mut null = cond.clone();
        null.pose = PoseCondition::Null;
        let vn = self.field.velocity(z, t, &null)?;
        let (c, h, w) = vc.shape();
        let data = vn.data().iter().zip(vc.data()).map(|(n, c)| n + self.scale * (c - n)).collect();
        LatentGrid::new(c, h, w, data)
    }
}

/// Integrate from `z(1) = ε` to `t = 0` with `steps` Euler steps.
pub fn euler_sample<V: VelocityField>(
    field: &V,
    cond: &ConditioningTuple,
    steps: usize,
    rng: &mut impl Rng,
) -> Result<LatentGrid> {
    let eps = standard_normal_grid(cond.src_latent.shape(), rng);
    euler_from(field, cond, steps, eps)
}

/// Euler integration from a given `z(1)`.
pub fn euler_from<V: VelocityField>(field: &V, cond: &ConditioningTuple, steps: usize, eps: LatentGrid) -> Result<LatentGrid> {
    if steps == 0 {
        return Err(Error::BadParams("steps must be >= 1".into()));
    }
    let dt = 1.0 / steps as f64;
    let mut z = eps;
    for i in 0..steps {
        let t = 1.0 - i as f64 * dt;
        let v = field.velocity(&z, t, cond)?;
        for (a, b) in z.data_mut().iter_mut().zip(v.data()) {
            *a -= dt * b;
        }
        if z.data().iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite { step: Some(i) });
        }
    }
    Ok(z)
}

const MAGIC: &[u8; 8] = b"GEOEDIT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

fn config_digest(json: &str) -> [u8; 32] {
    Sha256::digest(json.as_bytes()).into()
}

/// Header (magic, version, SHA-256 of the config JSON, config JSON) then
/// named little-endian `f32` tensors in [`VelocityNet::tensors_mut`] order.
pub fn save_checkpoint(net: &VelocityNet<f32>, path: &Path) -> Result<()> {
    let json = serde_json::to_string(&net.cfg)?;
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&config_digest(&json));
    buf.extend_from_slice(&(json.len() as u32).to_le_bytes());
    buf.extend_from_slice(json.as_bytes());
    let tensors = net.tensors();
    buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, _, data) in &tensors {
        buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(data.len() as u64).to_le_bytes());
        for v in data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::File::create(path)
        .and_then(|mut f| f.write_all(&buf))
        .map_err(|e| Error::io(path, e))
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::IncompatibleCheckpoint("truncated file".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn load_checkpoint(path: &Path) -> Result<VelocityNet<f32>> {
    let mut buf = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| Error::io(path, e))?;
    let mut cur = Cursor { buf: &buf, pos: 0 };
    if cur.take(MAGIC.len()).ok() != Some(&MAGIC[..]) {
        return Err(Error::IncompatibleCheckpoint(format!("{} is not a checkpoint", path.display())));
    }
    let version = cur.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::IncompatibleCheckpoint(format!(
            "version {version}, this build reads version {CHECKPOINT_VERSION}"
        )));
    }
    let digest = cur.take(32)?.to_vec();
    let len = cur.u32()? as usize;
    let json = std::str::from_utf8(cur.take(len)?).map_err(|_| Error::IncompatibleCheckpoint("config is not UTF-8".into()))?;
    if config_digest(json)[..] != digest[..] {
        return Err(Error::IncompatibleCheckpoint("config digest mismatch".into()));
    }
    let cfg: NetConfig = serde_json::from_str(json).map_err(|e| Error::IncompatibleCheckpoint(format!("config: {e}")))?;
    let mut net = VelocityNet::<f32>::zeros(&cfg)?;
    let count = cur.u32()? as usize;
    let mut slots = net.tensors_mut();
    if count != slots.len() {
        return Err(Error::IncompatibleCheckpoint(format!(
            "{count} tensors stored, network has {}",
            slots.len()
        )));
    }
    for (name, _, dst) in slots.iter_mut() {
        let n = cur.u16()? as usize;
        let stored = cur.take(n)?;
        if stored != name.as_bytes() {
            return Err(Error::IncompatibleCheckpoint(format!(
                "expected tensor {name}, found {}",
                String::from_utf8_lossy(stored)
            )));
        }
        let len = cur.u64()? as usize;
        if len != dst.len() {
            return Err(Error::IncompatibleCheckpoint(format!("tensor {name} has {len} values, expected {}", dst.len())));
        }
        for (v, b) in dst.iter_mut().zip(cur.take(4 * len)?.chunks_exact(4)) {
            *v = f32::from_le_bytes(b.try_into().unwrap());
        }
    }
    drop(slots);
    Ok(net)
}
