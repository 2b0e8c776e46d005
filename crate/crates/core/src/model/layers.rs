//! Network building blocks. Layers hold parameter ids; tensors live in a [`ParamStore`].

use rand::Rng;
use vivat_autograd::{Graph, PadMode, Scalar, Var};

use super::params::{Binding, Init, ParamId, ParamStore};
use crate::error::{validation, Result};

pub const NORM_EPS: f64 = 1e-6;

/// Per-forward context shared by all layers.
#[derive(Clone, Copy)]
pub struct Ctx<'a> {
    pub binding: &'a Binding,
    pub pad: PadMode,
    /// Latent sample conditioning spatial normalization (decoder only).
    pub cond: Option<Var>,
}

#[derive(Debug, Clone)]
pub struct Conv {
    weight: ParamId,
    bias: Option<ParamId>,
    stride: usize,
    pad: usize,
}

#[derive(Debug, Clone, Copy)]
pub enum ConvInit {
    FanIn,
    Zero,
}

pub struct ConvSpec {
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub bias: bool,
    pub init: ConvInit,
}

impl ConvSpec {
    /// Same-size convolution (stride 1, pad k/2).
    pub fn same(c_in: usize, c_out: usize, kernel: usize) -> Self {
        Self { c_in, c_out, kernel, stride: 1, pad: kernel / 2, bias: true, init: ConvInit::FanIn }
    }

    pub fn zero_init(mut self) -> Self {
        self.init = ConvInit::Zero;
        self
    }
}

impl Conv {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, spec: ConvSpec, rng: &mut impl Rng) -> Self {
        let fan_in = spec.c_in * spec.kernel * spec.kernel;
        let init = match spec.init {
            ConvInit::FanIn => Init::FanIn { fan_in, gain: 1.0 },
            ConvInit::Zero => Init::Zeros,
        };
        let weight = store.create(
            format!("{name}.weight"),
            &[spec.c_out, spec.c_in, spec.kernel, spec.kernel],
            init,
            rng,
        );
        let bias = spec
            .bias
            .then(|| store.create(format!("{name}.bias"), &[spec.c_out], Init::Zeros, rng));
        Self { weight, bias, stride: spec.stride, pad: spec.pad }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, ctx: &Ctx<'_>, x: Var) -> Result<Var> {
        self.forward_with(g, ctx.binding, x, ctx.pad)
    }

    pub fn forward_with<T: Scalar>(&self, g: &mut Graph<T>, b: &Binding, x: Var, pad: PadMode) -> Result<Var> {
        let p = g.pad(x, self.pad, pad)?;
        let y = g.conv2d(p, b.var(self.weight), self.stride)?;
        match self.bias {
            Some(bias) => Ok(g.channel_bias(y, b.var(bias))?),
            None => Ok(y),
        }
    }
}

#[derive(Debug, Clone)]
pub struct GroupNormAffine {
    groups: usize,
    gamma: ParamId,
    beta: ParamId,
}

impl GroupNormAffine {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, channels: usize, groups: usize, rng: &mut impl Rng) -> Self {
        let gamma = store.create(format!("{name}.gamma"), &[channels], Init::Ones, rng);
        let beta = store.create(format!("{name}.beta"), &[channels], Init::Zeros, rng);
        Self { groups, gamma, beta }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, b: &Binding, x: Var) -> Result<Var> {
        let n = g.group_norm(x, self.groups, NORM_EPS)?;
        let s = g.channel_scale(n, b.var(self.gamma))?;
        Ok(g.channel_bias(s, b.var(self.beta))?)
    }
}

/// Spatially conditional normalization:
/// `group_norm(h) * (1 + gamma(up(z))) + beta(up(z))`, identity-modulated at init.
#[derive(Debug, Clone)]
pub struct Scn {
    groups: usize,
    gamma: Conv,
    beta: Conv,
}

impl Scn {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        channels: usize,
        cond_channels: usize,
        groups: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let gamma = Conv::new(store, &format!("{name}.gamma"), ConvSpec::same(cond_channels, channels, 3).zero_init(), rng);
        let beta = Conv::new(store, &format!("{name}.beta"), ConvSpec::same(cond_channels, channels, 3).zero_init(), rng);
        Self { groups, gamma, beta }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, ctx: &Ctx<'_>, h: Var, z: Var) -> Result<Var> {
        let (hs, zs) = (g.shape(h).to_vec(), g.shape(z).to_vec());
        if hs.len() != 4 || zs.len() != 4 || hs[0] != zs[0] {
            return Err(validation(format!("scn: incompatible activation {hs:?} and latent {zs:?}")));
        }
        if hs[2] % zs[2] != 0 || hs[3] % zs[3] != 0 || hs[2] / zs[2] != hs[3] / zs[3] {
            return Err(validation(format!(
                "scn: activation {}x{} is not an integer multiple of latent {}x{}",
                hs[2], hs[3], zs[2], zs[3]
            )));
        }
        let normalized = g.group_norm(h, self.groups, NORM_EPS)?;
        let up = g.upsample_nearest(z, hs[2] / zs[2])?;
        let gamma = self.gamma.forward(g, ctx, up)?;
        let beta = self.beta.forward(g, ctx, up)?;
        let scale = g.add_scalar(gamma, 1.0);
        let modulated = g.mul(normalized, scale)?;
        Ok(g.add(modulated, beta)?)
    }
}

#[derive(Debug, Clone)]
pub enum Norm {
    Group(GroupNormAffine),
    Spatial(Scn),
}

/// Which normalization a block should build.
#[derive(Debug, Clone, Copy)]
pub enum NormKind {
    Group { groups: usize },
    Spatial { groups: usize, cond_channels: usize },
}

impl Norm {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, channels: usize, kind: NormKind, rng: &mut impl Rng) -> Self {
        match kind {
            NormKind::Group { groups } => Norm::Group(GroupNormAffine::new(store, name, channels, groups, rng)),
            NormKind::Spatial { groups, cond_channels } => {
                Norm::Spatial(Scn::new(store, name, channels, cond_channels, groups, rng))
            }
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, ctx: &Ctx<'_>, x: Var) -> Result<Var> {
        match self {
            Norm::Group(n) => n.forward(g, ctx.binding, x),
            Norm::Spatial(n) => {
                let z = ctx.cond.ok_or_else(|| validation("spatial normalization needs a latent condition"))?;
                n.forward(g, ctx, x, z)
            }
        }
    }
}

/// Pre-activation residual block; the last convolution starts at zero.
#[derive(Debug, Clone)]
pub struct ResBlock {
    norm1: Norm,
    conv1: Conv,
    norm2: Norm,
    conv2: Conv,
    skip: Option<Conv>,
}

impl ResBlock {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        c_in: usize,
        c_out: usize,
        norm: NormKind,
        rng: &mut impl Rng,
    ) -> Self {
        let norm1 = Norm::new(store, &format!("{name}.norm1"), c_in, norm, rng);
        let conv1 = Conv::new(store, &format!("{name}.conv1"), ConvSpec::same(c_in, c_out, 3), rng);
        let norm2 = Norm::new(store, &format!("{name}.norm2"), c_out, norm, rng);
        let conv2 = Conv::new(store, &format!("{name}.conv2"), ConvSpec::same(c_out, c_out, 3).zero_init(), rng);
        let skip = (c_in != c_out)
            .then(|| Conv::new(store, &format!("{name}.skip"), ConvSpec::same(c_in, c_out, 1), rng));
        Self { norm1, conv1, norm2, conv2, skip }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, ctx: &Ctx<'_>, x: Var) -> Result<Var> {
        let h = self.norm1.forward(g, ctx, x)?;
        let h = g.silu(h);
        let h = self.conv1.forward(g, ctx, h)?;
        let h = self.norm2.forward(g, ctx, h)?;
        let h = g.silu(h);
        let h = self.conv2.forward(g, ctx, h)?;
        let skip = match &self.skip {
            Some(conv) => conv.forward(g, ctx, x)?,
            None => x,
        };
        Ok(g.add(skip, h)?)
    }
}

/// Single-head spatial self-attention with a residual connection.
#[derive(Debug, Clone)]
pub struct AttnBlock {
    norm: Norm,
    q: Conv,
    k: Conv,
    v: Conv,
    proj: Conv,
}

impl AttnBlock {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, channels: usize, norm: NormKind, rng: &mut impl Rng) -> Self {
        let norm = Norm::new(store, &format!("{name}.norm"), channels, norm, rng);
        let mut pw = |suffix: &str| Conv::new(store, &format!("{name}.{suffix}"), ConvSpec::same(channels, channels, 1), rng);
        let (q, k, v, proj) = (pw("q"), pw("k"), pw("v"), pw("proj"));
        Self { norm, q, k, v, proj }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, ctx: &Ctx<'_>, x: Var) -> Result<Var> {
        let s = g.shape(x).to_vec();
        let (n, c, hw) = (s[0], s[1], s[2] * s[3]);
        let h = self.norm.forward(g, ctx, x)?;
        let q = self.q.forward(g, ctx, h)?;
        let k = self.k.forward(g, ctx, h)?;
        let v = self.v.forward(g, ctx, h)?;
        let q = g.reshape(q, &[n, c, hw])?;
        let k = g.reshape(k, &[n, c, hw])?;
        let v = g.reshape(v, &[n, c, hw])?;
        let scores = g.bmm(q, k, true, false)?;
        let scores = g.scale(scores, 1.0 / (c as f64).sqrt());
        let attn = g.softmax_last(scores);
        let out = g.bmm(v, attn, false, true)?;
        let out = g.reshape(out, &s)?;
        let out = self.proj.forward(g, ctx, out)?;
        Ok(g.add(x, out)?)
    }
}

/// Stride-2 3x3 convolution.
#[derive(Debug, Clone)]
pub struct Downsample {
    conv: Conv,
}

impl Downsample {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, channels: usize, rng: &mut impl Rng) -> Self {
        let spec = ConvSpec { stride: 2, ..ConvSpec::same(channels, channels, 3) };
        Self { conv: Conv::new(store, &format!("{name}.conv"), spec, rng) }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, ctx: &Ctx<'_>, x: Var) -> Result<Var> {
        self.conv.forward(g, ctx, x)
    }
}

/// Nearest 2x upsampling followed by a 3x3 convolution.
#[derive(Debug, Clone)]
pub struct Upsample {
    conv: Conv,
}

impl Upsample {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, channels: usize, rng: &mut impl Rng) -> Self {
        Self { conv: Conv::new(store, &format!("{name}.conv"), ConvSpec::same(channels, channels, 3), rng) }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, ctx: &Ctx<'_>, x: Var) -> Result<Var> {
        let up = g.upsample_nearest(x, 2)?;
        self.conv.forward(g, ctx, up)
    }
}
