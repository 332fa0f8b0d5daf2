//! Road-UNet: a 1D encoder-decoder over road-point sequences with residual
//! blocks, an attention transition, additive time/attribute conditioning and
//! optional decoder feature rebalancing.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::embedding::sinusoidal_time_embedding;
use super::freeu::FreeUConfig;
use super::graph::{NodeId, Tape};
use super::params::{Init, ParamSpec, ParamStore};
use crate::error::{Error, Result};
use crate::geo::ConditionVector;
use crate::real::Real;
use crate::rng;
use crate::tensor::Tensor;

/// Architecture descriptor; stored alongside weights in checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UNetConfig {
    /// Input/output channels, `2 * roads`.
    pub in_channels: usize,
    /// Points per road.
    pub seq_len: usize,
    pub base_channels: usize,
    pub channel_mults: Vec<usize>,
    pub res_blocks: usize,
    /// Number of deepest encoder stages ending in an attention block.
    pub attention_stages: usize,
    pub mid_attention: bool,
    pub groups: usize,
    pub time_dim: usize,
    pub emb_dim: usize,
    pub cond_hidden: usize,
}

impl UNetConfig {
    /// Full-size network: 4 stages over base 64, 2 residual blocks per stage,
    /// 3 attention blocks.
    pub fn full(roads: usize, points: usize) -> Self {
        Self {
            in_channels: 2 * roads,
            seq_len: points,
            base_channels: 64,
            channel_mults: vec![1, 2, 4, 8],
            res_blocks: 2,
            attention_stages: 2,
            mid_attention: true,
            groups: 8,
            time_dim: 64,
            emb_dim: 256,
            cond_hidden: 64,
        }
    }

    /// Small network for desk-scale training.
    pub fn toy(roads: usize, points: usize) -> Self {
        Self {
            in_channels: 2 * roads,
            seq_len: points,
            base_channels: 32,
            channel_mults: vec![1, 2],
            res_blocks: 1,
            attention_stages: 1,
            mid_attention: true,
            groups: 8,
            time_dim: 32,
            emb_dim: 64,
            cond_hidden: 64,
        }
    }

    /// Two stages over four base channels; used for gradient checks.
    pub fn reduced(roads: usize, points: usize) -> Self {
        Self {
            in_channels: 2 * roads,
            seq_len: points,
            base_channels: 4,
            channel_mults: vec![1, 2],
            res_blocks: 1,
            attention_stages: 1,
            mid_attention: true,
            groups: 8,
            time_dim: 8,
            emb_dim: 8,
            cond_hidden: 8,
        }
    }

    pub fn stages(&self) -> usize {
        self.channel_mults.len()
    }

    pub fn roads(&self) -> usize {
        self.in_channels / 2
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if self.in_channels == 0 || self.in_channels % 2 != 0 {
            return err(format!("in_channels must be a positive even number, got {}", self.in_channels));
        }
        if self.channel_mults.is_empty() || self.channel_mults.contains(&0) {
            return err("channel_mults must be non-empty and positive".into());
        }
        if self.base_channels == 0 || self.res_blocks == 0 || self.groups == 0 {
            return err("base_channels, res_blocks and groups must be positive".into());
        }
        let down = 1usize << (self.stages() - 1);
        if self.seq_len < 2 || self.seq_len % down != 0 {
            return err(format!("seq_len {} must be divisible by {down}", self.seq_len));
        }
        if self.time_dim < 2 || self.time_dim % 2 != 0 || self.emb_dim == 0 || self.cond_hidden == 0 {
            return err("time_dim must be even, emb_dim and cond_hidden positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct Conv {
    w: usize,
    b: usize,
    stride: usize,
    pad: usize,
}

#[derive(Debug, Clone, Copy)]
struct Norm {
    g: usize,
    b: usize,
    groups: usize,
}

#[derive(Debug, Clone)]
struct Res {
    n1: Norm,
    c1: Conv,
    emb: Conv,
    n2: Norm,
    c2: Conv,
    skip: Option<Conv>,
}

#[derive(Debug, Clone)]
struct Attn {
    norm: Norm,
    q: Conv,
    k: Conv,
    v: Conv,
    proj: Conv,
}

#[derive(Debug, Clone)]
struct EncStage {
    res: Vec<Res>,
    attn: Option<Attn>,
    down: Option<Conv>,
}

#[derive(Debug, Clone)]
struct DecStage {
    up: Option<Conv>,
    res: Vec<Res>,
}

#[derive(Debug, Clone)]
struct Layout {
    wide: Conv,
    deep1: Conv,
    deep2: Conv,
    fc1: Conv,
    fc2: Conv,
    conv_in: Conv,
    enc: Vec<EncStage>,
    mid: (Res, Option<Attn>, Res),
    dec: Vec<DecStage>,
    out_norm: Norm,
    conv_out: Conv,
}

struct Builder {
    specs: Vec<ParamSpec>,
    groups: usize,
}

impl Builder {
    fn add(&mut self, name: String, dims: [usize; 3], init: Init) -> usize {
        self.specs.push(ParamSpec { name, dims, init });
        self.specs.len() - 1
    }

    fn conv(&mut self, name: &str, cin: usize, cout: usize, kernel: usize, stride: usize) -> Conv {
        let fan = cin * kernel;
        Conv {
            w: self.add(format!("{name}.w"), [cout, cin, kernel], Init::FanIn(fan)),
            b: self.add(format!("{name}.b"), [1, cout, 1], Init::FanIn(fan)),
            stride,
            pad: kernel / 2,
        }
    }

    fn norm(&mut self, name: &str, ch: usize) -> Norm {
        Norm {
            g: self.add(format!("{name}.g"), [1, ch, 1], Init::Ones),
            b: self.add(format!("{name}.b"), [1, ch, 1], Init::Zeros),
            groups: gcd(self.groups, ch),
        }
    }

    fn res(&mut self, name: &str, cin: usize, cout: usize, emb: usize) -> Res {
        Res {
            n1: self.norm(&format!("{name}.norm1"), cin),
            c1: self.conv(&format!("{name}.conv1"), cin, cout, 3, 1),
            emb: self.conv(&format!("{name}.emb"), emb, cout, 1, 1),
            n2: self.norm(&format!("{name}.norm2"), cout),
            c2: self.conv(&format!("{name}.conv2"), cout, cout, 3, 1),
            skip: (cin != cout).then(|| self.conv(&format!("{name}.skip"), cin, cout, 1, 1)),
        }
    }

    fn attn(&mut self, name: &str, ch: usize) -> Attn {
        Attn {
            norm: self.norm(&format!("{name}.norm"), ch),
            q: self.conv(&format!("{name}.q"), ch, ch, 1, 1),
            k: self.conv(&format!("{name}.k"), ch, ch, 1, 1),
            v: self.conv(&format!("{name}.v"), ch, ch, 1, 1),
            proj: self.conv(&format!("{name}.proj"), ch, ch, 1, 1),
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

fn build_layout(cfg: &UNetConfig) -> (Layout, Vec<ParamSpec>) {
    let mut b = Builder {
        specs: Vec::new(),
        groups: cfg.groups,
    };
    let cdim = ConditionVector::DIM;
    let wide = b.conv("cond.wide", cdim, cfg.time_dim, 1, 1);
    let deep1 = b.conv("cond.deep1", cdim, cfg.cond_hidden, 1, 1);
    let deep2 = b.conv("cond.deep2", cfg.cond_hidden, cfg.time_dim, 1, 1);
    let fc1 = b.conv("emb.fc1", cfg.time_dim, cfg.emb_dim, 1, 1);
    let fc2 = b.conv("emb.fc2", cfg.emb_dim, cfg.emb_dim, 1, 1);
    let conv_in = b.conv("conv_in", cfg.in_channels, cfg.base_channels, 3, 1);
    let chans: Vec<usize> = cfg.channel_mults.iter().map(|m| m * cfg.base_channels).collect();
    let stages = chans.len();
    let mut enc = Vec::new();
    let mut ch = cfg.base_channels;
    for (s, &out) in chans.iter().enumerate() {
        let mut res = Vec::new();
        for r in 0..cfg.res_blocks {
            res.push(b.res(&format!("enc{s}.res{r}"), ch, out, cfg.emb_dim));
            ch = out;
        }
        let attn = (s + cfg.attention_stages >= stages).then(|| b.attn(&format!("enc{s}.attn"), ch));
        let down = (s + 1 < stages).then(|| b.conv(&format!("enc{s}.down"), ch, ch, 3, 2));
        enc.push(EncStage { res, attn, down });
    }
    let mid = (
        b.res("mid.res0", ch, ch, cfg.emb_dim),
        cfg.mid_attention.then(|| b.attn("mid.attn", ch)),
        b.res("mid.res1", ch, ch, cfg.emb_dim),
    );
    let mut dec = Vec::new();
    for s in (0..stages).rev() {
        let up = (s + 1 < stages).then(|| b.conv(&format!("dec{s}.up"), ch, ch, 3, 1));
        let mut res = Vec::new();
        let mut cin = ch + chans[s];
        for r in 0..cfg.res_blocks {
            res.push(b.res(&format!("dec{s}.res{r}"), cin, chans[s], cfg.emb_dim));
            cin = chans[s];
        }
        ch = chans[s];
        dec.push(DecStage { up, res });
    }
    let out_norm = b.norm("out.norm", ch);
    let conv_out = b.conv("conv_out", ch, cfg.in_channels, 3, 1);
    (
        Layout {
            wide,
            deep1,
            deep2,
            fc1,
            fc2,
            conv_in,
            enc,
            mid,
            dec,
            out_norm,
            conv_out,
        },
        b.specs,
    )
}

/// Parameters plus the wiring that interprets them.
#[derive(Debug, Clone)]
pub struct RoadUNet<T> {
    config: UNetConfig,
    params: ParamStore<T>,
    layout: Layout,
}

impl<T: Real> RoadUNet<T> {
    /// Fresh network with deterministic initialisation from `seed`.
    pub fn new(config: UNetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let (layout, specs) = build_layout(&config);
        let mut params = ParamStore::new();
        for (i, spec) in specs.iter().enumerate() {
            let [a, b, c] = spec.dims;
            let mut t = Tensor::<T>::zeros(a, b, c);
            match spec.init {
                Init::Zeros => {}
                Init::Ones => t.data_mut().fill(T::one()),
                Init::FanIn(fan) => {
                    let bound = 1.0 / (fan as f64).sqrt();
                    let mut r = rng::stream(seed, rng::DOMAIN_INIT, i as u64);
                    for v in t.data_mut() {
                        *v = T::of(r.random_range(-bound..bound));
                    }
                }
            }
            params.push(spec.name.clone(), t);
        }
        Ok(Self { config, params, layout })
    }

    /// Wraps existing weights after checking names and shapes against the
    /// architecture.
    pub fn from_params(config: UNetConfig, params: ParamStore<T>) -> Result<Self> {
        config.validate()?;
        let (layout, specs) = build_layout(&config);
        if specs.len() != params.len() {
            return Err(Error::Config(format!(
                "architecture expects {} tensors, found {}",
                specs.len(),
                params.len()
            )));
        }
        for (i, spec) in specs.iter().enumerate() {
            if params.name(i) != spec.name || params.get(i).dims() != spec.dims {
                return Err(Error::Config(format!(
                    "tensor {i}: expected {} {:?}, found {} {:?}",
                    spec.name,
                    spec.dims,
                    params.name(i),
                    params.get(i).dims()
                )));
            }
            if !params.get(i).is_finite() {
                return Err(Error::Config(format!("tensor {} holds non-finite values", spec.name)));
            }
        }
        Ok(Self { config, params, layout })
    }

    pub fn config(&self) -> &UNetConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn into_params(self) -> ParamStore<T> {
        self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.count()
    }

    pub fn cast<U: Real>(&self) -> RoadUNet<U> {
        RoadUNet {
            config: self.config.clone(),
            params: self.params.cast(),
            layout: self.layout.clone(),
        }
    }

    pub fn check_input(&self, x: &Tensor<T>, steps: usize, conds: usize) -> Result<()> {
        let want = [x.batch(), self.config.in_channels, self.config.seq_len];
        if x.dims() != want || steps != x.batch() || conds != x.batch() {
            return Err(Error::Shape {
                expected: want,
                found: [steps.max(conds), x.channels(), x.len()],
            });
        }
        Ok(())
    }

    /// Predicted noise for a batch; `freeu = None` skips rebalancing entirely.
    pub fn predict_noise(&self, x_t: &Tensor<T>, t: &[usize], c: &[ConditionVector], freeu: Option<&FreeUConfig>) -> Result<Tensor<T>> {
        let cond: Vec<[f64; ConditionVector::DIM]> = c.iter().map(ConditionVector::as_array).collect();
        self.predict_noise_raw(x_t, t, &cond, freeu)
    }

    /// As [`RoadUNet::predict_noise`], with raw attribute arrays (an all-zero
    /// array is the dropped-condition input).
    pub fn predict_noise_raw(&self, x_t: &Tensor<T>, t: &[usize], cond: &[[f64; ConditionVector::DIM]], freeu: Option<&FreeUConfig>) -> Result<Tensor<T>> {
        self.check_input(x_t, t.len(), cond.len())?;
        let mut tape = Tape::new(&self.params);
        let x = tape.input(x_t.clone());
        let out = self.forward(&mut tape, x, t, cond, freeu)?;
        Ok(tape.value(out).clone())
    }

    /// Time-plus-attribute embedding before the shared layers.
    fn embed(&self, tape: &mut Tape<'_, T>, t: &[usize], cond: &[[f64; ConditionVector::DIM]]) -> Result<NodeId> {
        let b = t.len();
        let mut temb = Vec::with_capacity(b * self.config.time_dim);
        for &step in t {
            temb.extend(sinusoidal_time_embedding(step as f64, self.config.time_dim)?.into_iter().map(T::of));
        }
        let temb = tape.input(Tensor::from_vec(b, self.config.time_dim, 1, temb));
        let c = self.condition_embedding(tape, cond);
        Ok(tape.add(temb, c))
    }

    fn condition_embedding(&self, tape: &mut Tape<'_, T>, cond: &[[f64; ConditionVector::DIM]]) -> NodeId {
        let data = cond.iter().flat_map(|c| c.iter().map(|v| T::of(*v))).collect();
        let c = tape.input(Tensor::from_vec(cond.len(), ConditionVector::DIM, 1, data));
        let l = &self.layout;
        let wide = conv(tape, c, l.wide);
        let h = conv(tape, c, l.deep1);
        let h = tape.silu(h);
        let deep = conv(tape, h, l.deep2);
        tape.add(wide, deep)
    }

    /// Wide-and-deep embedding of the road attributes, one row per condition.
    pub fn encode_condition_embedding(&self, c: &[ConditionVector]) -> Tensor<T> {
        let cond: Vec<_> = c.iter().map(ConditionVector::as_array).collect();
        let mut tape = Tape::new(&self.params);
        let out = self.condition_embedding(&mut tape, &cond);
        tape.value(out).clone()
    }

    /// Records the network on `tape`; `x` has dims `[batch, 2n, k]`.
    pub fn forward(&self, tape: &mut Tape<'_, T>, x: NodeId, t: &[usize], cond: &[[f64; ConditionVector::DIM]], freeu: Option<&FreeUConfig>) -> Result<NodeId> {
        let l = &self.layout;
        let e = self.embed(tape, t, cond)?;
        let h = conv(tape, e, l.fc1);
        let h = tape.silu(h);
        let h = conv(tape, h, l.fc2);
        let emb = tape.silu(h);

        let mut h = conv(tape, x, l.conv_in);
        let mut skips = Vec::new();
        for stage in &l.enc {
            for r in &stage.res {
                h = res_block(tape, h, emb, r);
            }
            if let Some(a) = &stage.attn {
                h = attn_block(tape, h, a);
            }
            skips.push(h);
            if let Some(d) = stage.down {
                h = conv(tape, h, d);
            }
        }
        h = res_block(tape, h, emb, &l.mid.0);
        if let Some(a) = &l.mid.1 {
            h = attn_block(tape, h, a);
        }
        h = res_block(tape, h, emb, &l.mid.2);
        for (z, stage) in l.dec.iter().enumerate() {
            if let Some(u) = stage.up {
                let up = tape.upsample2(h);
                h = conv(tape, up, u);
            }
            let mut skip = skips.pop().expect("one skip per stage");
            if let Some(f) = freeu {
                if z < f.stages() {
                    h = tape.backbone_scale(h, f.b[z]);
                    skip = tape.spectral(skip, f.s[z], f.r_thresh);
                }
            }
            h = tape.concat(h, skip);
            for r in &stage.res {
                h = res_block(tape, h, emb, r);
            }
        }
        let h = norm(tape, h, l.out_norm);
        let h = tape.silu(h);
        Ok(conv(tape, h, l.conv_out))
    }
}

fn conv<T: Real>(tape: &mut Tape<'_, T>, x: NodeId, c: Conv) -> NodeId {
    let (w, b) = (tape.param(c.w), tape.param(c.b));
    tape.conv1d(x, w, Some(b), c.stride, c.pad)
}

fn norm<T: Real>(tape: &mut Tape<'_, T>, x: NodeId, n: Norm) -> NodeId {
    let (g, b) = (tape.param(n.g), tape.param(n.b));
    tape.group_norm(x, g, b, n.groups)
}

fn res_block<T: Real>(tape: &mut Tape<'_, T>, x: NodeId, emb: NodeId, r: &Res) -> NodeId {
    let h = norm(tape, x, r.n1);
    let h = tape.silu(h);
    let h = conv(tape, h, r.c1);
    let e = conv(tape, emb, r.emb);
    let h = tape.add_channel_bias(h, e);
    let h = norm(tape, h, r.n2);
    let h = tape.silu(h);
    let h = conv(tape, h, r.c2);
    let skip = match r.skip {
        Some(s) => conv(tape, x, s),
        None => x,
    };
    tape.add(h, skip)
}

fn attn_block<T: Real>(tape: &mut Tape<'_, T>, x: NodeId, a: &Attn) -> NodeId {
    let h = norm(tape, x, a.norm);
    let q = conv(tape, h, a.q);
    let k = conv(tape, h, a.k);
    let v = conv(tape, h, a.v);
    let o = tape.attention(q, k, v);
    let o = conv(tape, o, a.proj);
    tape.add(x, o)
}

/// Runs one isolated attention block (normalization, projections,
/// residual) with the named weights of `net`.
pub fn attention_block_only<T: Real>(net: &RoadUNet<T>, x: &Tensor<T>) -> Tensor<T> {
    let a = net
        .layout
        .mid
        .1
        .as_ref()
        .or_else(|| net.layout.enc.iter().find_map(|s| s.attn.as_ref()))
        .expect("network has an attention block");
    let mut tape = Tape::new(&net.params);
    let xi = tape.input(x.clone());
    let out = attn_block(&mut tape, xi, a);
    tape.value(out).clone()
}

/// Channel count entering the first attention block used by
/// [`attention_block_only`].
pub fn attention_channels(cfg: &UNetConfig) -> usize {
    cfg.base_channels * cfg.channel_mults.last().copied().unwrap_or(1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::ScenarioType;

    fn input(seed: u64, b: usize, cfg: &UNetConfig) -> Tensor<f64> {
        let mut r = rng::stream(seed, 0, 0);
        let mut t = Tensor::zeros(b, cfg.in_channels, cfg.seq_len);
        rng::fill_normal(&mut r, t.data_mut());
        t
    }

    fn conds(b: usize) -> Vec<ConditionVector> {
        (0..b)
            .map(|i| ConditionVector::new(ScenarioType::ALL[i % 4], 200.0, i % 3))
            .collect()
    }

    #[test]
    fn full_architecture_counts() {
        let cfg = UNetConfig::full(12, 64);
        let (layout, specs) = build_layout(&cfg);
        let attn = layout.enc.iter().filter(|s| s.attn.is_some()).count() + layout.mid.1.is_some() as usize;
        assert_eq!(attn, 3);
        assert_eq!(layout.enc.len(), 4);
        assert!(layout.enc.iter().all(|s| s.res.len() == 2));
        let net = RoadUNet::<f32>::new(cfg, 0).unwrap();
        let count: usize = specs.iter().map(|s| s.dims.iter().product::<usize>()).sum();
        assert_eq!(net.parameter_count(), count);
        assert_eq!(net.parameter_count(), RoadUNet::<f32>::new(UNetConfig::full(12, 64), 1).unwrap().parameter_count());
    }

    #[test]
    fn output_shape_matches_input() {
        for cfg in [UNetConfig::reduced(2, 16), UNetConfig::toy(4, 16)] {
            let net = RoadUNet::<f64>::new(cfg.clone(), 3).unwrap();
            let x = input(1, 3, &cfg);
            let y = net.predict_noise(&x, &[1, 250, 500], &conds(3), None).unwrap();
            assert_eq!(y.dims(), x.dims());
            assert!(y.is_finite());
        }
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let cfg = UNetConfig::reduced(2, 16);
        let net = RoadUNet::<f64>::new(cfg, 3).unwrap();
        let x = Tensor::<f64>::zeros(1, 6, 16);
        assert!(matches!(net.predict_noise(&x, &[1], &conds(1), None), Err(Error::Shape { .. })));
        let x = Tensor::<f64>::zeros(2, 4, 16);
        assert!(matches!(net.predict_noise(&x, &[1], &conds(2), None), Err(Error::Shape { .. })));
    }

    #[test]
    fn neutral_freeu_matches_plain_path() {
        let cfg = UNetConfig::toy(4, 16);
        let net = RoadUNet::<f64>::new(cfg.clone(), 5).unwrap();
        let x = input(2, 2, &cfg);
        let plain = net.predict_noise(&x, &[10, 300], &conds(2), None).unwrap();
        let neutral = net.predict_noise(&x, &[10, 300], &conds(2), Some(&FreeUConfig::neutral(2))).unwrap();
        for (a, b) in plain.data().iter().zip(neutral.data()) {
            assert!((a - b).abs() < 1e-6);
        }
        let active = net.predict_noise(&x, &[10, 300], &conds(2), Some(&FreeUConfig::default())).unwrap();
        assert_ne!(plain, active);
    }

    #[test]
    fn zero_network_outputs_final_bias() {
        let cfg = UNetConfig::reduced(2, 16);
        let mut net = RoadUNet::<f64>::new(cfg.clone(), 5).unwrap();
        for t in net.params_mut().tensors_mut() {
            t.data_mut().fill(0.0);
        }
        let b = net.params().index_of("conv_out.b").unwrap();
        net.params_mut().get_mut(b).data_mut().copy_from_slice(&[0.5, -0.25, 1.5, 2.0]);
        let y = net.predict_noise(&input(4, 2, &cfg), &[3, 7], &conds(2), None).unwrap();
        for bi in 0..2 {
            for (c, want) in [0.5, -0.25, 1.5, 2.0].iter().enumerate() {
                assert!(y.row(bi, c).iter().all(|v| v == want));
            }
        }
    }

    #[test]
    fn condition_embedding_properties() {
        let cfg = UNetConfig::reduced(2, 16);
        let mut net = RoadUNet::<f64>::new(cfg, 9).unwrap();
        let cs = [ConditionVector::new(ScenarioType::Pudo, 100.0, 1), ConditionVector::new(ScenarioType::Flyover, 300.0, 0)];
        let e = net.encode_condition_embedding(&cs);
        assert_ne!(e.sample(0), e.sample(1));
        // Deep path and wide bias off: the embedding is linear in c.
        for name in ["cond.deep1.w", "cond.deep1.b", "cond.deep2.w", "cond.deep2.b", "cond.wide.b"] {
            net.params_mut().by_name_mut(name).unwrap().data_mut().fill(0.0);
        }
        let mix = ConditionVector {
            type_onehot: [0.0, 0.5, 0.0, 0.5],
            scale: 0.4,
            junction_count: 0.0625,
        };
        let e = net.encode_condition_embedding(&[cs[0], cs[1], mix]);
        for j in 0..e.channels() {
            let want = 0.5 * e.sample(0)[j] + 0.5 * e.sample(1)[j];
            assert!((e.sample(2)[j] - want).abs() < 1e-12);
        }
        for t in net.params_mut().tensors_mut() {
            t.data_mut().fill(0.0);
        }
        assert!(net.encode_condition_embedding(&cs).data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn attention_block_is_permutation_equivariant() {
        let cfg = UNetConfig::reduced(2, 16);
        let net = RoadUNet::<f64>::new(cfg.clone(), 11).unwrap();
        let ch = attention_channels(&cfg);
        let len = 8;
        let mut r = rng::stream(5, 0, 0);
        let mut x = Tensor::<f64>::zeros(1, ch, len);
        rng::fill_normal(&mut r, x.data_mut());
        let perm = [3, 0, 7, 1, 6, 2, 5, 4];
        let mut xp = x.clone();
        for c in 0..ch {
            for (i, &p) in perm.iter().enumerate() {
                xp.row_mut(0, c)[i] = x.row(0, c)[p];
            }
        }
        let y = attention_block_only(&net, &x);
        let yp = attention_block_only(&net, &xp);
        for c in 0..ch {
            for (i, &p) in perm.iter().enumerate() {
                assert!((yp.row(0, c)[i] - y.row(0, c)[p]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn batch_rows_are_independent() {
        let cfg = UNetConfig::toy(4, 16);
        let net = RoadUNet::<f32>::new(cfg.clone(), 2).unwrap();
        let x = input(8, 3, &cfg).cast::<f32>();
        let all = net.predict_noise(&x, &[5, 50, 500], &conds(3), Some(&FreeUConfig::default())).unwrap();
        for b in 0..3 {
            let single = Tensor::from_vec(1, cfg.in_channels, cfg.seq_len, x.sample(b).to_vec());
            let one = net.predict_noise(&single, &[[5, 50, 500][b]], &conds(3)[b..b + 1], Some(&FreeUConfig::default())).unwrap();
            assert_eq!(one.data(), all.sample(b));
        }
    }
}
