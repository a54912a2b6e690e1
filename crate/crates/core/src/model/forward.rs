use std::f64::consts::PI;

use super::config::{ModelConfig, OutputParam, RolloutSpec, Task};
use super::params::{Bound, ModelParams};
use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{shape_err, Error, Result};

const DEG: f64 = 180.0 / PI;

fn conv_ln_leaky(g: &mut Graph, b: &Bound, cfg: &ModelConfig, x: Var, p: &str, stride: usize) -> Result<Var> {
    let y = g.conv1d_causal(x, b.var(&format!("{p}.weight"))?, b.var(&format!("{p}.bias"))?, stride)?;
    let y = g.layer_norm(y, b.var(&format!("{p}.ln.gain"))?, b.var(&format!("{p}.ln.offset"))?)?;
    g.leaky_relu(y, cfg.leaky_slope)
}

/// Causal encoder: `[C, T]` EMG to `[F, T / stride]` features.
pub fn encode(g: &mut Graph, b: &Bound, cfg: &ModelConfig, emg: Var) -> Result<Var> {
    let (c, t) = g.value(emg).dims2()?;
    if c != cfg.emg_channels {
        return Err(shape_err(format!("model expects {} EMG channels, got {c}", cfg.emg_channels)));
    }
    cfg.feature_frames(t)?;
    let mut x = emg;
    for (i, spec) in cfg.conv.iter().enumerate() {
        x = conv_ln_leaky(g, b, cfg, x, &format!("enc.conv{i}"), spec.stride)?;
    }
    for (s, st) in cfg.tds.iter().enumerate() {
        let p = format!("enc.tds{s}");
        x = conv_ln_leaky(g, b, cfg, x, &format!("{p}.sub"), st.subsample_stride)?;
        for k in 0..st.blocks {
            let q = format!("{p}.block{k}");
            let v = |n: &str| b.var(&format!("{q}.{n}"));
            let y = g.depthwise_conv1d_causal(x, v("dw.weight")?, v("dw.bias")?)?;
            let y = g.leaky_relu(y, cfg.leaky_slope)?;
            let y = g.add(x, y)?;
            x = g.layer_norm(y, v("ln1.gain")?, v("ln1.offset")?)?;
            let y = g.linear(x, v("fc1.weight")?, v("fc1.bias")?)?;
            let y = g.leaky_relu(y, cfg.leaky_slope)?;
            let y = g.linear(y, v("fc2.weight")?, v("fc2.bias")?)?;
            let y = g.add(x, y)?;
            x = g.layer_norm(y, v("ln2.gain")?, v("ln2.offset")?)?;
        }
    }
    Ok(x)
}

struct Head {
    w1: Var,
    b1: Var,
    w2: Var,
    b2: Var,
}

impl Head {
    fn bind(b: &Bound, p: &str) -> Result<Self> {
        Ok(Self {
            w1: b.var(&format!("{p}.fc1.weight"))?,
            b1: b.var(&format!("{p}.fc1.bias"))?,
            w2: b.var(&format!("{p}.fc2.weight"))?,
            b2: b.var(&format!("{p}.fc2.bias"))?,
        })
    }

    fn apply(&self, g: &mut Graph, h: Var, slope: f64) -> Result<Var> {
        let y = g.linear(h, self.w1, self.b1)?;
        let y = g.leaky_relu(y, slope)?;
        g.linear(y, self.w2, self.b2)
    }
}

/// Autoregressive decoding of `[F, M]` rollout-rate features to a `[J, M]`
/// pose trajectory in degrees.
///
/// Step `t` feeds `[f_t; y_{t-1}]` to the LSTM, with `y_{-1}` the initial
/// pose. Position decoding emits `y_t = s g(h_t)`. Velocity decoding pins
/// `y_0` to the initial pose and integrates `y_t = y_{t-1} + s g(h_t)`. The
/// hybrid Regression rollout uses `y_t = g_pos(h_t)` for the warm-start steps
/// and integrates from the last of them. Poses are carried in radians.
///
/// `init_deg` is required for Tracking and ignored for Regression, which
/// starts from the learned `p_init`.
pub fn rollout(g: &mut Graph, b: &Bound, cfg: &ModelConfig, features: Var, init_deg: Option<&[f64]>, spec: &RolloutSpec) -> Result<Var> {
    cfg.check_spec(spec)?;
    let (f, m) = g.value(features).dims2()?;
    if f != cfg.feature_dim || g.shape(features).len() != 2 {
        return Err(shape_err(format!("rollout expects [{}, M] features, got {:?}", cfg.feature_dim, g.shape(features))));
    }
    let j = cfg.joints;
    let init = match spec.task {
        Task::Tracking => {
            let y0 = init_deg.ok_or_else(|| Error::InvalidArgument("tracking rollout needs an initial pose".into()))?;
            if y0.len() != j {
                return Err(shape_err(format!("initial pose has {} joints, model has {j}", y0.len())));
            }
            g.constant(Tensor::vector(y0.iter().map(|v| v / DEG).collect()))?
        }
        Task::Regression => b.var("p_init")?,
    };
    let head = Head::bind(b, "head")?;
    let pos_head = if spec.hybrid() { Some(Head::bind(b, "pos_head")?) } else { None };
    let warm = spec.warm_start_steps(cfg.rollout_rate_hz);
    let layers = (0..cfg.lstm_layers)
        .map(|l| {
            Ok((
                b.var(&format!("dec.lstm{l}.w_ih"))?,
                b.var(&format!("dec.lstm{l}.w_hh"))?,
                b.var(&format!("dec.lstm{l}.bias"))?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let zero = g.constant(Tensor::zeros(vec![cfg.lstm_hidden]))?;
    let mut state: Vec<(Var, Var)> = vec![(zero, zero); cfg.lstm_layers];

    let mut prev = init;
    let mut outputs = Vec::with_capacity(m);
    for t in 0..m {
        let ft = g.column(features, t)?;
        let mut x = g.concat(&[ft, prev])?;
        for (l, &(w_ih, w_hh, bias)) in layers.iter().enumerate() {
            let (h, c) = g.lstm_cell(x, state[l].0, state[l].1, w_ih, w_hh, bias)?;
            state[l] = (h, c);
            x = h;
        }
        let y = match (&pos_head, spec.output_param) {
            (Some(ph), _) if t < warm => ph.apply(g, x, cfg.leaky_slope)?,
            (_, OutputParam::Position) => {
                let o = head.apply(g, x, cfg.leaky_slope)?;
                g.scale(o, cfg.output_scalar)?
            }
            (_, OutputParam::Velocity) if t == 0 => init,
            (_, OutputParam::Velocity) => {
                let o = head.apply(g, x, cfg.leaky_slope)?;
                let o = g.scale(o, cfg.output_scalar)?;
                g.add(prev, o)?
            }
        };
        outputs.push(y);
        prev = y;
    }
    let stacked = g.stack_columns(&outputs)?;
    g.scale(stacked, DEG)
}

/// Full window: encode, interpolate features to the rollout rate, roll out,
/// and interpolate back to `T` samples. Returns `[J, T]` degrees.
pub fn predict(g: &mut Graph, b: &Bound, cfg: &ModelConfig, emg: Var, init_deg: Option<&[f64]>, spec: &RolloutSpec) -> Result<Var> {
    let t = g.value(emg).dims2()?.1;
    let feats = encode(g, b, cfg, emg)?;
    let k = g.value(feats).dims2()?.1;
    let m = k * cfg.rollout_ratio();
    let feats = if m == k { feats } else { g.interpolate_linear_time(feats, m)? };
    let traj = rollout(g, b, cfg, feats, init_deg, spec)?;
    g.interpolate_linear_time(traj, t)
}

impl ModelParams {
    /// Inference on one window without gradients.
    pub fn predict_window(&self, cfg: &ModelConfig, emg: &Tensor, init_deg: Option<&[f64]>, spec: &RolloutSpec) -> Result<Tensor> {
        let mut g = Graph::new();
        let b = self.bind(&mut g, false)?;
        let x = g.constant(emg.clone())?;
        let y = predict(&mut g, &b, cfg, x, init_deg, spec)?;
        Ok(g.value(y).clone())
    }

    /// Rollout-rate trajectory `[J, M]` for one window, without gradients.
    pub fn rollout_window(&self, cfg: &ModelConfig, emg: &Tensor, init_deg: Option<&[f64]>, spec: &RolloutSpec) -> Result<Tensor> {
        let mut g = Graph::new();
        let b = self.bind(&mut g, false)?;
        let x = g.constant(emg.clone())?;
        let feats = encode(&mut g, &b, cfg, x)?;
        let k = g.value(feats).dims2()?.1;
        let feats = g.interpolate_linear_time(feats, k * cfg.rollout_ratio())?;
        let y = rollout(&mut g, &b, cfg, feats, init_deg, spec)?;
        Ok(g.value(y).clone())
    }
}
