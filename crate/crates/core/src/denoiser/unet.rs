#[cfg(not(feature = "std"))]
use num_traits::Float;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::autodiff::{attention_probs, ParamId, ParamStore, Tape, Tensor, Var};
use crate::{Error, ImageTensor, RandomSource, Real, Result, Shape4};

use super::config::ArchitectureConfig;
use super::embedding::sinusoidal_embedding;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Init {
    /// Normal with variance `1 / fan_in`.
    Fan(usize),
    Zeros,
    Ones,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    init: Init,
}

#[derive(Default)]
struct Builder {
    specs: Vec<ParamSpec>,
}

impl Builder {
    fn add(&mut self, name: String, shape: Vec<usize>, init: Init) -> ParamId {
        self.specs.push(ParamSpec { name, shape, init });
        ParamId(self.specs.len() - 1)
    }

    fn conv(&mut self, name: &str, cin: usize, cout: usize, k: usize) -> Conv {
        Conv {
            w: self.add(alloc::format!("{name}.weight"), vec![cout, cin, k, k], Init::Fan(cin * k * k)),
            b: self.add(alloc::format!("{name}.bias"), vec![cout], Init::Zeros),
        }
    }

    fn linear(&mut self, name: &str, fin: usize, fout: usize) -> Linear {
        Linear {
            w: self.add(alloc::format!("{name}.weight"), vec![fout, fin], Init::Fan(fin)),
            b: self.add(alloc::format!("{name}.bias"), vec![fout], Init::Zeros),
        }
    }

    fn norm(&mut self, name: &str, c: usize, groups: usize) -> Norm {
        Norm {
            gamma: self.add(alloc::format!("{name}.gamma"), vec![c], Init::Ones),
            beta: self.add(alloc::format!("{name}.beta"), vec![c], Init::Zeros),
            groups: gcd(groups, c),
        }
    }

    fn res_block(&mut self, name: &str, cin: usize, cout: usize, temb: usize, groups: usize, dilation: usize) -> ResBlock {
        ResBlock {
            norm1: self.norm(&alloc::format!("{name}.norm1"), cin, groups),
            conv1: self.conv(&alloc::format!("{name}.conv1"), cin, cout, 3),
            emb: self.linear(&alloc::format!("{name}.emb"), temb, cout),
            norm2: self.norm(&alloc::format!("{name}.norm2"), cout, groups),
            conv2: self.conv(&alloc::format!("{name}.conv2"), cout, cout, 3),
            skip: (cin != cout).then(|| self.conv(&alloc::format!("{name}.skip"), cin, cout, 1)),
            dilation,
        }
    }

    fn attn_block(&mut self, name: &str, c: usize, groups: usize, local: bool) -> AttnBlock {
        AttnBlock {
            norm: self.norm(&alloc::format!("{name}.norm"), c, groups),
            q: self.conv(&alloc::format!("{name}.q"), c, c, 1),
            k: self.conv(&alloc::format!("{name}.k"), c, c, 1),
            v: self.conv(&alloc::format!("{name}.v"), c, c, 1),
            proj: self.conv(&alloc::format!("{name}.proj"), c, c, 1),
            local,
        }
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

#[derive(Debug, Clone)]
struct Conv {
    w: ParamId,
    b: ParamId,
}

#[derive(Debug, Clone)]
struct Linear {
    w: ParamId,
    b: ParamId,
}

#[derive(Debug, Clone)]
struct Norm {
    gamma: ParamId,
    beta: ParamId,
    groups: usize,
}

#[derive(Debug, Clone)]
struct ResBlock {
    norm1: Norm,
    conv1: Conv,
    emb: Linear,
    norm2: Norm,
    conv2: Conv,
    skip: Option<Conv>,
    dilation: usize,
}

#[derive(Debug, Clone)]
struct AttnBlock {
    norm: Norm,
    q: Conv,
    k: Conv,
    v: Conv,
    proj: Conv,
    local: bool,
}

type Stage = Vec<(ResBlock, Option<AttnBlock>)>;

type Probe<T> = Option<Vec<(usize, Vec<T>)>>;

/// U-Net epsilon-predictor `f(x, y_noisy, gamma)`. The conditioning image is
/// concatenated with the noisy target along channels; the noise level is
/// injected into every residual block through a learned embedding.
///
/// The struct holds only the architecture; parameters live in a separate
/// [`ParamStore`] so raw and EMA weights share one network.
#[derive(Debug, Clone)]
pub struct UNet {
    config: ArchitectureConfig,
    specs: Vec<ParamSpec>,
    temb_dim: usize,
    in_conv: Conv,
    emb1: Linear,
    emb2: Linear,
    down: Vec<Stage>,
    mid: Stage,
    up: Vec<Stage>,
    out_norm: Norm,
    out_conv: Conv,
}

impl UNet {
    pub fn new(config: ArchitectureConfig) -> Result<Self> {
        config.validate()?;
        let mut b = Builder::default();
        let g = config.norm_groups;
        let levels = config.levels();
        let temb_dim = 4 * config.base_channels;
        let ch0 = config.level_channels(0);
        let in_conv = b.conv("in_conv", config.cond_channels + config.target_channels, ch0, 3);
        let emb1 = b.linear("emb.fc1", config.embedding_dim, temb_dim);
        let emb2 = b.linear("emb.fc2", temb_dim, temb_dim);
        let attn_here = |l: usize| config.variant.uses_attention() && config.is_attention_level(l);
        let local = config.variant == super::Variant::LocalSelfAttention;

        let mut down = Vec::with_capacity(levels);
        let mut cur = ch0;
        for l in 0..levels {
            let ch = config.level_channels(l);
            let mut stage = Vec::new();
            for (j, d) in config.block_dilations(l).into_iter().enumerate() {
                let name = alloc::format!("down.{l}.block.{j}");
                let rb = b.res_block(&name, cur, ch, temb_dim, g, d);
                let at = attn_here(l).then(|| b.attn_block(&alloc::format!("{name}.attn"), ch, g, local));
                stage.push((rb, at));
                cur = ch;
            }
            down.push(stage);
        }

        let deepest = levels - 1;
        let mut mid = Vec::new();
        if config.variant.uses_attention() {
            mid.push((b.res_block("mid.0", cur, cur, temb_dim, g, 1), None));
            let at = attn_here(deepest).then(|| b.attn_block("mid.attn", cur, g, local));
            mid.push((b.res_block("mid.1", cur, cur, temb_dim, g, 1), at));
        } else {
            let d = if config.variant == super::Variant::DilatedConvolutions { 2 } else { 1 };
            mid.push((b.res_block("mid.0", cur, cur, temb_dim, g, 1), None));
            mid.push((b.res_block("mid.1", cur, cur, temb_dim, g, d), None));
        }

        let mut up: Vec<Stage> = (0..levels).map(|_| Vec::new()).collect();
        for l in (0..levels).rev() {
            let ch = config.level_channels(l);
            let mut stage = Vec::new();
            for (j, d) in config.block_dilations(l).into_iter().enumerate() {
                let name = alloc::format!("up.{l}.block.{j}");
                let cin = if j == 0 { cur + ch } else { ch };
                let rb = b.res_block(&name, cin, ch, temb_dim, g, d);
                let at = attn_here(l).then(|| b.attn_block(&alloc::format!("{name}.attn"), ch, g, local));
                stage.push((rb, at));
                cur = ch;
            }
            up[l] = stage;
        }
        let out_norm = b.norm("out.norm", cur, g);
        let out_conv = b.conv("out.conv", cur, config.target_channels, 3);

        Ok(Self {
            config,
            specs: b.specs,
            temb_dim,
            in_conv,
            emb1,
            emb2,
            down,
            mid,
            up,
            out_norm,
            out_conv,
        })
    }

    pub fn config(&self) -> &ArchitectureConfig {
        &self.config
    }

    pub fn param_specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn parameter_count(&self) -> usize {
        self.specs.iter().map(|s| s.shape.iter().product::<usize>()).sum()
    }

    /// Parameter ids of the final output convolution (weight, bias).
    pub fn output_layer(&self) -> (ParamId, ParamId) {
        (self.out_conv.w, self.out_conv.b)
    }

    pub fn init_params<T: Real>(&self, rng: &mut RandomSource) -> ParamStore<T> {
        let mut store = ParamStore::new();
        for s in &self.specs {
            let len: usize = s.shape.iter().product();
            let data = match s.init {
                Init::Zeros => vec![T::zero(); len],
                Init::Ones => vec![T::one(); len],
                Init::Fan(fan) => {
                    let std = 1.0 / (fan as f64).sqrt();
                    (0..len).map(|_| T::lit(rng.normal() * std)).collect()
                }
            };
            store.add(s.name.clone(), s.shape.clone(), data);
        }
        store
    }

    /// Checks that `params` was built for this architecture.
    pub fn check_params<T: Real>(&self, params: &ParamStore<T>) -> Result<()> {
        let ok = params.len() == self.specs.len()
            && params.iter().zip(&self.specs).all(|(p, s)| p.name == s.name && p.shape == s.shape);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig("parameter store does not match architecture".into()))
        }
    }

    pub(crate) fn validate_inputs(&self, x: Shape4, y: Shape4, gammas: &[f64]) -> Result<()> {
        let c = &self.config;
        if x.c != c.cond_channels {
            return Err(Error::shape(alloc::format!("{} conditioning channels", c.cond_channels), x));
        }
        if y.c != c.target_channels {
            return Err(Error::shape(alloc::format!("{} target channels", c.target_channels), y));
        }
        if x.n != y.n || x.h != y.h || x.w != y.w {
            return Err(Error::shape(x.with_c(y.c), y));
        }
        let m = c.spatial_multiple();
        if y.h % m != 0 || y.w % m != 0 {
            return Err(Error::InvalidShape(alloc::format!(
                "spatial size {}x{} not divisible by {m}",
                y.h,
                y.w
            )));
        }
        if gammas.len() != y.n {
            return Err(Error::shape(y.n, gammas.len()));
        }
        Ok(())
    }

    fn conv<T: Real>(&self, tape: &mut Tape<'_, T>, layer: &Conv, x: Var, dilation: usize) -> Var {
        let (w, b) = (tape.param(layer.w), tape.param(layer.b));
        tape.conv2d(x, w, Some(b), dilation, self.config.padding)
    }

    fn norm<T: Real>(&self, tape: &mut Tape<'_, T>, layer: &Norm, x: Var) -> Var {
        let (g, b) = (tape.param(layer.gamma), tape.param(layer.beta));
        tape.group_norm(x, g, b, layer.groups)
    }

    fn linear<T: Real>(&self, tape: &mut Tape<'_, T>, layer: &Linear, x: Var) -> Var {
        let (w, b) = (tape.param(layer.w), tape.param(layer.b));
        tape.linear(x, w, b)
    }

    fn res_block<T: Real>(&self, tape: &mut Tape<'_, T>, rb: &ResBlock, x: Var, temb: Var) -> Var {
        let h = self.norm(tape, &rb.norm1, x);
        let h = tape.silu(h);
        let h = self.conv(tape, &rb.conv1, h, rb.dilation);
        let e = self.linear(tape, &rb.emb, temb);
        let h = tape.add_channel(h, e);
        let h = self.norm(tape, &rb.norm2, h);
        let h = tape.silu(h);
        let h = self.conv(tape, &rb.conv2, h, rb.dilation);
        let skip = match &rb.skip {
            Some(s) => self.conv(tape, s, x, 1),
            None => x,
        };
        tape.add(skip, h)
    }

    fn attn_block<T: Real>(&self, tape: &mut Tape<'_, T>, ab: &AttnBlock, x: Var, probe: &mut Probe<T>) -> Var {
        let h = self.norm(tape, &ab.norm, x);
        let q = self.conv(tape, &ab.q, h, 1);
        let k = self.conv(tape, &ab.k, h, 1);
        if let Some(out) = probe {
            let s = tape.shape(q).to_vec();
            let (c, hh, ww) = (s[1], s[2], s[3]);
            let item = c * hh * ww;
            for i in 0..s[0] {
                let qv = &tape.value(q)[i * item..(i + 1) * item];
                let kv = &tape.value(k)[i * item..(i + 1) * item];
                for g in attention_probs(qv, kv, c, hh, ww, ab.local) {
                    let m = (g.len() as f64).sqrt() as usize;
                    out.push((m, g));
                }
            }
        }
        let v = self.conv(tape, &ab.v, h, 1);
        let a = tape.attention(q, k, v, ab.local);
        let a = self.conv(tape, &ab.proj, a, 1);
        tape.add(x, a)
    }

    fn stage<T: Real>(&self, tape: &mut Tape<'_, T>, stage: &Stage, mut h: Var, temb: Var, probe: &mut Probe<T>) -> Var {
        for (rb, at) in stage {
            h = self.res_block(tape, rb, h, temb);
            if let Some(at) = at {
                h = self.attn_block(tape, at, h, probe);
            }
        }
        h
    }

    /// Learned noise-level embedding, `[n, temb_dim]`, before the per-block
    /// activation.
    pub fn embed_gammas<T: Real>(&self, tape: &mut Tape<'_, T>, gammas: &[f64]) -> Result<Var> {
        let dim = self.config.embedding_dim;
        let mut feats = Vec::with_capacity(gammas.len() * dim);
        for &g in gammas {
            feats.extend(sinusoidal_embedding(g, dim)?.into_iter().map(T::lit));
        }
        let e = tape.input(Tensor::new(vec![gammas.len(), dim], feats)?);
        let e = self.linear(tape, &self.emb1, e);
        let e = tape.silu(e);
        Ok(self.linear(tape, &self.emb2, e))
    }

    /// Records the forward pass on `tape`. `x` is `[n, cond, h, w]`, `y` is
    /// `[n, target, h, w]`; `gammas` holds one noise level per batch item.
    pub fn forward_tape<T: Real>(&self, tape: &mut Tape<'_, T>, x: Var, y: Var, gammas: &[f64]) -> Result<Var> {
        self.forward_probed(tape, x, y, gammas, &mut None)
    }

    fn forward_probed<T: Real>(
        &self,
        tape: &mut Tape<'_, T>,
        x: Var,
        y: Var,
        gammas: &[f64],
        probe: &mut Probe<T>,
    ) -> Result<Var> {
        let xs = tape.shape(x).to_vec();
        let ys = tape.shape(y).to_vec();
        if xs.len() != 4 || ys.len() != 4 {
            return Err(Error::InvalidShape("denoiser inputs must be NCHW".into()));
        }
        self.validate_inputs(
            Shape4::new(xs[0], xs[1], xs[2], xs[3]),
            Shape4::new(ys[0], ys[1], ys[2], ys[3]),
            gammas,
        )?;
        let temb = self.embed_gammas(tape, gammas)?;
        let temb = tape.silu(temb);

        let h = tape.concat_channels(x, y);
        let mut h = self.conv(tape, &self.in_conv, h, 1);
        let levels = self.config.levels();
        let mut skips = Vec::with_capacity(levels);
        for (l, stage) in self.down.iter().enumerate() {
            h = self.stage(tape, stage, h, temb, probe);
            skips.push(h);
            if l + 1 < levels {
                h = tape.avg_pool2(h);
            }
        }
        h = self.stage(tape, &self.mid, h, temb, probe);
        for l in (0..levels).rev() {
            h = tape.concat_channels(h, skips[l]);
            h = self.stage(tape, &self.up[l], h, temb, probe);
            if l > 0 {
                h = tape.upsample2(h);
            }
        }
        let h = self.norm(tape, &self.out_norm, h);
        let h = tape.silu(h);
        Ok(self.conv(tape, &self.out_conv, h, 1))
    }

    /// Inference-only forward pass.
    pub fn forward<T: Real>(
        &self,
        params: &ParamStore<T>,
        x: &ImageTensor<T>,
        y: &ImageTensor<T>,
        gammas: &[f64],
    ) -> Result<ImageTensor<T>> {
        self.validate_inputs(x.shape(), y.shape(), gammas)?;
        let mut tape = Tape::new(params);
        let xv = tape.input_image(x.clone());
        let yv = tape.input_image(y.clone());
        let out = self.forward_tape(&mut tape, xv, yv, gammas)?;
        tape.image(out)
    }

    /// Attention matrices of every attention layer during a forward pass,
    /// as `(positions, row-major m x m probabilities)` per group.
    pub fn probe_attention_probs<T: Real>(
        &self,
        params: &ParamStore<T>,
        x: &ImageTensor<T>,
        y: &ImageTensor<T>,
        gamma: f64,
    ) -> Result<Vec<(usize, Vec<T>)>> {
        let gammas = vec![gamma; y.shape().n];
        self.validate_inputs(x.shape(), y.shape(), &gammas)?;
        let mut tape = Tape::new(params);
        let xv = tape.input_image(x.clone());
        let yv = tape.input_image(y.clone());
        let mut out = Some(Vec::new());
        self.forward_probed(&mut tape, xv, yv, &gammas, &mut out)?;
        Ok(out.unwrap_or_default())
    }

    /// Projected embedding vector for a single noise level.
    pub fn gamma_embedding<T: Real>(&self, params: &ParamStore<T>, gamma: f64) -> Result<Vec<T>> {
        let mut tape = Tape::new(params);
        let e = self.embed_gammas(&mut tape, &[gamma])?;
        Ok(tape.value(e).to_vec())
    }

    pub fn temb_dim(&self) -> usize {
        self.temb_dim
    }
}
