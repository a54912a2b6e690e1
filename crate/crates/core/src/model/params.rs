use std::collections::HashMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use crate::autodiff::{Graph, Tensor, Var};
use crate::data::{encode_header, mix_seed, push_f64s, read_header, take_f64s, write_atomic};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Init {
    /// Uniform in `+-1/sqrt(fan_in)`.
    FanIn(usize),
    /// LSTM bias: zero except the forget block at 1.
    ForgetBias(usize),
    Zeros,
    Ones,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    /// Layer-norm gains and offsets are excluded from weight decay.
    pub layer_norm: bool,
}

/// Every learnable tensor of the model, in a fixed order.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    params: Vec<Param>,
    index: HashMap<String, usize>,
}

fn fnv(name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Names, shapes and init rules for `cfg`, in parameter order.
fn layout(cfg: &ModelConfig) -> Vec<(String, Vec<usize>, Init, bool)> {
    let mut out = Vec::new();
    let mut push = |name: String, shape: Vec<usize>, init: Init| {
        let ln = matches!(init, Init::Ones) || name.ends_with(".offset");
        out.push((name, shape, init, ln));
    };
    let layer_norm = |push: &mut dyn FnMut(String, Vec<usize>, Init), p: &str, c: usize| {
        push(format!("{p}.gain"), vec![c], Init::Ones);
        push(format!("{p}.offset"), vec![c], Init::Zeros);
    };
    let mut cin = cfg.emg_channels;
    for (i, c) in cfg.conv.iter().enumerate() {
        let p = format!("enc.conv{i}");
        let fan = cin * c.kernel;
        push(format!("{p}.weight"), vec![c.out_channels, cin, c.kernel], Init::FanIn(fan));
        push(format!("{p}.bias"), vec![c.out_channels], Init::FanIn(fan));
        layer_norm(&mut push, &format!("{p}.ln"), c.out_channels);
        cin = c.out_channels;
    }
    for (s, st) in cfg.tds.iter().enumerate() {
        let p = format!("enc.tds{s}");
        let fan = cin * st.subsample_kernel;
        let c = st.channels;
        push(format!("{p}.sub.weight"), vec![c, cin, st.subsample_kernel], Init::FanIn(fan));
        push(format!("{p}.sub.bias"), vec![c], Init::FanIn(fan));
        layer_norm(&mut push, &format!("{p}.sub.ln"), c);
        for b in 0..st.blocks {
            let q = format!("{p}.block{b}");
            push(format!("{q}.dw.weight"), vec![c, st.block_kernel], Init::FanIn(st.block_kernel));
            push(format!("{q}.dw.bias"), vec![c], Init::FanIn(st.block_kernel));
            layer_norm(&mut push, &format!("{q}.ln1"), c);
            push(format!("{q}.fc1.weight"), vec![c, c], Init::FanIn(c));
            push(format!("{q}.fc1.bias"), vec![c], Init::FanIn(c));
            push(format!("{q}.fc2.weight"), vec![c, c], Init::FanIn(c));
            push(format!("{q}.fc2.bias"), vec![c], Init::FanIn(c));
            layer_norm(&mut push, &format!("{q}.ln2"), c);
        }
        cin = c;
    }
    let h = cfg.lstm_hidden;
    for l in 0..cfg.lstm_layers {
        let d = if l == 0 { cfg.feature_dim + cfg.joints } else { h };
        push(format!("dec.lstm{l}.w_ih"), vec![4 * h, d], Init::FanIn(h));
        push(format!("dec.lstm{l}.w_hh"), vec![4 * h, h], Init::FanIn(h));
        push(format!("dec.lstm{l}.bias"), vec![4 * h], Init::ForgetBias(h));
    }
    let mut head = |p: &str| {
        push(format!("{p}.fc1.weight"), vec![cfg.head_hidden, h], Init::FanIn(h));
        push(format!("{p}.fc1.bias"), vec![cfg.head_hidden], Init::FanIn(h));
        push(format!("{p}.fc2.weight"), vec![cfg.joints, cfg.head_hidden], Init::FanIn(cfg.head_hidden));
        push(format!("{p}.fc2.bias"), vec![cfg.joints], Init::FanIn(cfg.head_hidden));
    };
    head("head");
    if cfg.has_position_head() {
        head("pos_head");
    }
    if cfg.regression {
        push("p_init".into(), vec![cfg.joints], Init::Zeros);
    }
    out
}

impl ModelParams {
    /// Fresh parameters. Each tensor draws from its own stream keyed by
    /// `(seed, name)`, so adding optional heads does not perturb the rest.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let params = layout(cfg)
            .into_iter()
            .map(|(name, shape, init, layer_norm)| {
                let n: usize = shape.iter().product();
                let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, fnv(&name)]));
                let data = match init {
                    Init::FanIn(fan) => {
                        let b = 1.0 / (fan as f64).sqrt();
                        (0..n).map(|_| rng.random_range(-b..b)).collect()
                    }
                    Init::ForgetBias(h) => (0..n).map(|i| if (h..2 * h).contains(&i) { 1.0 } else { 0.0 }).collect(),
                    Init::Zeros => vec![0.0; n],
                    Init::Ones => vec![1.0; n],
                };
                Ok(Param { name, value: Tensor::new(shape, data)?, layer_norm })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::from_params(params))
    }

    fn from_params(params: Vec<Param>) -> Self {
        let index = params.iter().enumerate().map(|(i, p)| (p.name.clone(), i)).collect();
        Self { params, index }
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.params[i].value)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.index.get(name).map(|&i| &mut self.params[i].value)
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    /// Checks names and shapes against the layout `cfg` would produce.
    pub fn check_layout(&self, cfg: &ModelConfig) -> Result<()> {
        let want = layout(cfg);
        if want.len() != self.params.len() {
            return Err(Error::Config(format!("model has {} tensors, config expects {}", self.params.len(), want.len())));
        }
        for ((name, shape, _, _), p) in want.iter().zip(&self.params) {
            if *name != p.name || shape.as_slice() != p.value.shape() {
                return Err(Error::Config(format!("tensor {} {:?} does not match expected {name} {shape:?}", p.name, p.value.shape())));
            }
        }
        Ok(())
    }

    /// Places every tensor on `g`, as trainable leaves or as constants.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Result<Bound<'_>> {
        let vars = self
            .params
            .iter()
            .map(|p| if trainable { g.param(p.value.clone()) } else { g.constant(p.value.clone()) })
            .collect::<Result<Vec<_>>>()?;
        Ok(Bound { vars, index: &self.index })
    }

    /// Wraps vars already placed on a graph, one per tensor in order.
    pub fn bound_from(&self, vars: Vec<Var>) -> Result<Bound<'_>> {
        if vars.len() != self.params.len() {
            return Err(Error::InvalidArgument(format!("{} vars for {} tensors", vars.len(), self.params.len())));
        }
        Ok(Bound { vars, index: &self.index })
    }

    pub fn tensors(&self) -> Vec<Tensor> {
        self.params.iter().map(|p| p.value.clone()).collect()
    }

    pub fn save(&self, path: &Path, cfg: &ModelConfig) -> Result<()> {
        write_atomic(path, &self.encode(cfg)?)
    }

    pub fn encode(&self, cfg: &ModelConfig) -> Result<Vec<u8>> {
        let header = CheckpointHeader {
            format_version: CKPT_VERSION,
            config: cfg.clone(),
            tensors: self
                .params
                .iter()
                .map(|p| TensorEntry { name: p.name.clone(), shape: p.value.shape().to_vec(), layer_norm: p.layer_norm })
                .collect(),
        };
        let mut buf = encode_header(CKPT_MAGIC, &header)?;
        for p in &self.params {
            push_f64s(&mut buf, p.value.data());
        }
        Ok(buf)
    }

    pub fn decode(bytes: &[u8]) -> Result<(ModelConfig, Self)> {
        let (h, mut pos): (CheckpointHeader, usize) = read_header(bytes, CKPT_MAGIC)?;
        if h.format_version != CKPT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {}", h.format_version)));
        }
        h.config.validate()?;
        let mut params = Vec::with_capacity(h.tensors.len());
        for t in h.tensors {
            let n = t.shape.iter().product();
            let data = take_f64s(bytes, &mut pos, n)?;
            params.push(Param { name: t.name, value: Tensor::new(t.shape, data)?, layer_norm: t.layer_norm });
        }
        if pos != bytes.len() {
            return Err(Error::Format("trailing bytes after checkpoint tensors".into()));
        }
        let out = Self::from_params(params);
        out.check_layout(&h.config)?;
        Ok((h.config, out))
    }

    pub fn load(path: &Path) -> Result<(ModelConfig, Self)> {
        Self::decode(&std::fs::read(path)?)
    }
}

const CKPT_MAGIC: &[u8; 8] = b"EMGCKPT1";
const CKPT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    layer_norm: bool,
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    format_version: u32,
    config: ModelConfig,
    tensors: Vec<TensorEntry>,
}

/// Parameters placed on a graph, in [`ModelParams`] order.
pub struct Bound<'a> {
    pub vars: Vec<Var>,
    index: &'a HashMap<String, usize>,
}

impl Bound<'_> {
    pub fn var(&self, name: &str) -> Result<Var> {
        self.index
            .get(name)
            .map(|&i| self.vars[i])
            .ok_or_else(|| Error::Config(format!("model has no parameter {name}")))
    }

    pub fn has(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }
}
