//! Tape of executed operations and reverse accumulation over it.
//!
//! Every op appends one node; a node's inputs always have smaller indices
//! than the node itself, so walking the tape backwards is a valid reverse
//! topological order. A graph supports exactly one backward pass.

use super::tensor::Tensor;
use crate::error::{shape_err, Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv1d { input: Var, weight: Var, bias: Var, stride: usize },
    DepthwiseConv1d { input: Var, weight: Var, bias: Var },
    Linear { input: Var, weight: Var, bias: Var },
    LeakyRelu { input: Var, slope: f64 },
    LayerNorm { input: Var, gain: Var, offset: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
    Interp { input: Var },
    Lstm { x: Var, h: Var, c: Var, w_ih: Var, w_hh: Var, bias: Var, gates: Vec<f64> },
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Concat(Vec<Var>),
    Slice { input: Var, start: usize },
    Column { input: Var, index: usize },
    StackColumns(Vec<Var>),
    /// Scalar whose gradient with respect to `input` was computed during the
    /// forward pass.
    ScalarFn { input: Var, local_grad: Vec<f64> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    backward_done: bool,
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Neumaier summation; keeps loss reductions accurate enough for
/// finite-difference checks over thousands of terms.
pub fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for v in values {
        let t = sum + v;
        comp += if sum.abs() >= v.abs() { (sum - t) + v } else { (v - t) + sum };
        sum = t;
    }
    sum + comp
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool, name: &str) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(name.to_string()));
        }
        self.nodes.push(Node { value, requires_grad, grad: None, op });
        Ok(Var(self.nodes.len() - 1))
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// A leaf that does not receive gradients.
    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.push(value, Op::Leaf, false, "constant")
    }

    /// A leaf that accumulates gradients.
    pub fn param(&mut self, value: Tensor) -> Result<Var> {
        self.push(value, Op::Leaf, true, "param")
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Gradient of the last backward pass with respect to `v`, if it was reached.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Causal strided convolution. `input` is `[Cin, T]`, `weight` is
    /// `[Cout, Cin, K]`, `bias` is `[Cout]`. The input is left-padded with
    /// `K - 1` zeros, so output frame `i` only reads samples `<= i * stride`.
    pub fn conv1d_causal(&mut self, input: Var, weight: Var, bias: Var, stride: usize) -> Result<Var> {
        if stride == 0 {
            return Err(Error::InvalidArgument("conv stride must be positive".into()));
        }
        let (cin, t) = self.value(input).dims2()?;
        let (cout, wcin, k) = match self.shape(weight) {
            [o, i, k] => (*o, *i, *k),
            s => return Err(shape_err(format!("conv weight must be [Cout, Cin, K], got {s:?}"))),
        };
        if wcin != cin || k == 0 || self.shape(bias) != [cout] || self.shape(input).len() != 2 {
            return Err(shape_err(format!(
                "conv1d: input {:?}, weight {:?}, bias {:?}",
                self.shape(input),
                self.shape(weight),
                self.shape(bias)
            )));
        }
        let tout = t.div_ceil(stride);
        let x = self.value(input).data();
        let w = self.value(weight).data();
        let b = self.value(bias).data();
        let mut out = vec![0.0; cout * tout];
        for o in 0..cout {
            let row = &mut out[o * tout..(o + 1) * tout];
            row.iter_mut().for_each(|v| *v = b[o]);
            for c in 0..cin {
                let xr = &x[c * t..(c + 1) * t];
                let wr = &w[(o * cin + c) * k..(o * cin + c + 1) * k];
                for (i, acc) in row.iter_mut().enumerate() {
                    let end = i * stride; // inclusive, input index of tap k-1
                    let first = (end + 1).saturating_sub(k);
                    let woff = k - 1 - (end - first);
                    let mut s = 0.0;
                    for (wv, xv) in wr[woff..].iter().zip(&xr[first..=end]) {
                        s += wv * xv;
                    }
                    *acc += s;
                }
            }
        }
        let rg = self.rg(&[input, weight, bias]);
        self.push(
            Tensor::new(vec![cout, tout], out)?,
            Op::Conv1d { input, weight, bias, stride },
            rg,
            "conv1d_causal",
        )
    }

    /// Causal per-channel temporal convolution with stride 1. `weight` is `[C, K]`.
    pub fn depthwise_conv1d_causal(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let (c, t) = self.value(input).dims2()?;
        let (wc, k) = self.value(weight).dims2()?;
        if wc != c || self.shape(bias) != [c] || self.shape(input).len() != 2 || k == 0 {
            return Err(shape_err(format!(
                "depthwise conv: input {:?}, weight {:?}, bias {:?}",
                self.shape(input),
                self.shape(weight),
                self.shape(bias)
            )));
        }
        let x = self.value(input).data();
        let w = self.value(weight).data();
        let b = self.value(bias).data();
        let mut out = vec![0.0; c * t];
        for ch in 0..c {
            let xr = &x[ch * t..(ch + 1) * t];
            let wr = &w[ch * k..(ch + 1) * k];
            for i in 0..t {
                let first = (i + 1).saturating_sub(k);
                let woff = k - 1 - (i - first);
                let mut s = b[ch];
                for (wv, xv) in wr[woff..].iter().zip(&xr[first..=i]) {
                    s += wv * xv;
                }
                out[ch * t + i] = s;
            }
        }
        let rg = self.rg(&[input, weight, bias]);
        self.push(
            Tensor::new(vec![c, t], out)?,
            Op::DepthwiseConv1d { input, weight, bias },
            rg,
            "depthwise_conv1d_causal",
        )
    }

    /// Affine map over the leading (channel) axis: `[Cin]` or `[Cin, T]` in,
    /// `[Cout]` or `[Cout, T]` out.
    pub fn linear(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let (cin, t) = self.value(input).dims2()?;
        let (cout, wcin) = match self.shape(weight) {
            [o, i] => (*o, *i),
            s => return Err(shape_err(format!("linear weight must be 2-D, got {s:?}"))),
        };
        if wcin != cin || self.shape(bias) != [cout] {
            return Err(shape_err(format!(
                "linear: input {:?}, weight {:?}, bias {:?}",
                self.shape(input),
                self.shape(weight),
                self.shape(bias)
            )));
        }
        let x = self.value(input).data();
        let w = self.value(weight).data();
        let b = self.value(bias).data();
        let mut out = vec![0.0; cout * t];
        for o in 0..cout {
            let row = &mut out[o * t..(o + 1) * t];
            row.iter_mut().for_each(|v| *v = b[o]);
            for c in 0..cin {
                let wv = w[o * cin + c];
                if wv == 0.0 {
                    continue;
                }
                for (acc, xv) in row.iter_mut().zip(&x[c * t..(c + 1) * t]) {
                    *acc += wv * xv;
                }
            }
        }
        let shape = if self.shape(input).len() == 1 { vec![cout] } else { vec![cout, t] };
        let rg = self.rg(&[input, weight, bias]);
        self.push(Tensor::new(shape, out)?, Op::Linear { input, weight, bias }, rg, "linear")
    }

    pub fn leaky_relu(&mut self, input: Var, slope: f64) -> Result<Var> {
        let v = self.value(input);
        let data = v.data().iter().map(|&x| if x > 0.0 { x } else { slope * x }).collect();
        let t = Tensor::new(v.shape().to_vec(), data)?;
        let rg = self.rg(&[input]);
        self.push(t, Op::LeakyRelu { input, slope }, rg, "leaky_relu")
    }

    /// Normalizes over the channel axis independently for every frame.
    pub fn layer_norm(&mut self, input: Var, gain: Var, offset: Var) -> Result<Var> {
        let (c, t) = self.value(input).dims2()?;
        if self.shape(gain) != [c] || self.shape(offset) != [c] {
            return Err(shape_err(format!(
                "layer_norm: input {:?}, gain {:?}, offset {:?}",
                self.shape(input),
                self.shape(gain),
                self.shape(offset)
            )));
        }
        let x = self.value(input).data();
        let g = self.value(gain).data();
        let b = self.value(offset).data();
        let mut xhat = vec![0.0; c * t];
        let mut inv_std = vec![0.0; t];
        let mut out = vec![0.0; c * t];
        for f in 0..t {
            let mean = (0..c).map(|ch| x[ch * t + f]).sum::<f64>() / c as f64;
            let var = (0..c).map(|ch| (x[ch * t + f] - mean).powi(2)).sum::<f64>() / c as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std[f] = is;
            for ch in 0..c {
                let xh = (x[ch * t + f] - mean) * is;
                xhat[ch * t + f] = xh;
                out[ch * t + f] = g[ch] * xh + b[ch];
            }
        }
        let shape = self.shape(input).to_vec();
        let rg = self.rg(&[input, gain, offset]);
        self.push(
            Tensor::new(shape, out)?,
            Op::LayerNorm { input, gain, offset, xhat, inv_std },
            rg,
            "layer_norm",
        )
    }

    /// Resamples `[C, K]` to `[C, out_len]` along time with endpoints pinned:
    /// output `j` sits at input position `j * (K - 1) / (out_len - 1)`.
    pub fn interpolate_linear_time(&mut self, input: Var, out_len: usize) -> Result<Var> {
        let (c, k) = self.value(input).dims2()?;
        if self.shape(input).len() != 2 {
            return Err(shape_err("interpolation input must be [C, K]"));
        }
        if k < 2 {
            return Err(Error::InvalidArgument(format!("interpolation needs at least 2 frames, got {k}")));
        }
        if out_len == 0 {
            return Err(Error::InvalidArgument("interpolation output length must be positive".into()));
        }
        let x = self.value(input).data();
        let mut out = vec![0.0; c * out_len];
        for j in 0..out_len {
            let (lo, w) = interp_position(j, k, out_len);
            for ch in 0..c {
                let a = x[ch * k + lo];
                out[ch * out_len + j] = if w > 0.0 { a + w * (x[ch * k + lo + 1] - a) } else { a };
            }
        }
        let rg = self.rg(&[input]);
        self.push(Tensor::new(vec![c, out_len], out)?, Op::Interp { input }, rg, "interpolate_linear_time")
    }

    /// One LSTM step. Gate rows of the weights are ordered input, forget,
    /// cell, output. Returns a `[2, H]` node holding `h` in row 0 and `c` in
    /// row 1; see [`Graph::lstm_cell`] for the split form.
    pub fn lstm_step(
        &mut self,
        x: Var,
        h: Var,
        c: Var,
        w_ih: Var,
        w_hh: Var,
        bias: Var,
    ) -> Result<Var> {
        let d = self.value(x).numel();
        let hd = self.value(h).numel();
        if self.value(c).numel() != hd
            || self.shape(w_ih) != [4 * hd, d]
            || self.shape(w_hh) != [4 * hd, hd]
            || self.shape(bias) != [4 * hd]
        {
            return Err(shape_err(format!(
                "lstm: x {:?}, h {:?}, c {:?}, w_ih {:?}, w_hh {:?}, bias {:?}",
                self.shape(x),
                self.shape(h),
                self.shape(c),
                self.shape(w_ih),
                self.shape(w_hh),
                self.shape(bias)
            )));
        }
        let xv = self.value(x).data();
        let hv = self.value(h).data();
        let cv = self.value(c).data();
        let wi = self.value(w_ih).data();
        let wh = self.value(w_hh).data();
        let b = self.value(bias).data();
        let mut gates = vec![0.0; 4 * hd];
        for (r, gate) in gates.iter_mut().enumerate() {
            let mut s = b[r];
            for (w, v) in wi[r * d..(r + 1) * d].iter().zip(xv) {
                s += w * v;
            }
            for (w, v) in wh[r * hd..(r + 1) * hd].iter().zip(hv) {
                s += w * v;
            }
            let block = r / hd;
            *gate = if block == 2 { s.tanh() } else { sigmoid(s) };
        }
        let mut out = vec![0.0; 2 * hd];
        for u in 0..hd {
            let (i, f, g, o) = (gates[u], gates[hd + u], gates[2 * hd + u], gates[3 * hd + u]);
            let cn = f * cv[u] + i * g;
            out[hd + u] = cn;
            out[u] = o * cn.tanh();
        }
        let rg = self.rg(&[x, h, c, w_ih, w_hh, bias]);
        self.push(
            Tensor::new(vec![2, hd], out)?,
            Op::Lstm { x, h, c, w_ih, w_hh, bias, gates },
            rg,
            "lstm_cell",
        )
    }

    /// One LSTM step returning `(h, c)` as separate `[H]` vectors.
    pub fn lstm_cell(
        &mut self,
        x: Var,
        h: Var,
        c: Var,
        w_ih: Var,
        w_hh: Var,
        bias: Var,
    ) -> Result<(Var, Var)> {
        let hd = self.value(h).numel();
        let both = self.lstm_step(x, h, c, w_ih, w_hh, bias)?;
        let h_new = self.slice(both, 0, hd)?;
        let c_new = self.slice(both, hd, hd)?;
        Ok((h_new, c_new))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(format!("add: {:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| x + y).collect();
        let t = Tensor::new(self.shape(a).to_vec(), data)?;
        let rg = self.rg(&[a, b]);
        self.push(t, Op::Add(a, b), rg, "add")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(format!("mul: {:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| x * y).collect();
        let t = Tensor::new(self.shape(a).to_vec(), data)?;
        let rg = self.rg(&[a, b]);
        self.push(t, Op::Mul(a, b), rg, "mul")
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let data = self.value(a).data().iter().map(|x| x * factor).collect();
        let t = Tensor::new(self.shape(a).to_vec(), data)?;
        let rg = self.rg(&[a]);
        self.push(t, Op::Scale(a, factor), rg, "scale")
    }

    /// Concatenates tensors as flat vectors.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let mut data = Vec::new();
        for p in parts {
            data.extend_from_slice(self.value(*p).data());
        }
        let rg = self.rg(parts);
        self.push(Tensor::vector(data), Op::Concat(parts.to_vec()), rg, "concat")
    }

    /// Flat sub-vector `[start, start + len)`.
    pub fn slice(&mut self, input: Var, start: usize, len: usize) -> Result<Var> {
        let n = self.value(input).numel();
        if start + len > n {
            return Err(shape_err(format!("slice {start}..{} out of {n}", start + len)));
        }
        let data = self.value(input).data()[start..start + len].to_vec();
        let rg = self.rg(&[input]);
        self.push(Tensor::vector(data), Op::Slice { input, start }, rg, "slice")
    }

    /// Column `index` of a `[C, T]` tensor as a `[C]` vector.
    pub fn column(&mut self, input: Var, index: usize) -> Result<Var> {
        let (c, t) = self.value(input).dims2()?;
        if index >= t || self.shape(input).len() != 2 {
            return Err(shape_err(format!("column {index} of {:?}", self.shape(input))));
        }
        let x = self.value(input).data();
        let data = (0..c).map(|ch| x[ch * t + index]).collect();
        let rg = self.rg(&[input]);
        self.push(Tensor::vector(data), Op::Column { input, index }, rg, "column")
    }

    /// Stacks equal-length `[C]` vectors as the columns of a `[C, M]` tensor.
    pub fn stack_columns(&mut self, cols: &[Var]) -> Result<Var> {
        let m = cols.len();
        if m == 0 {
            return Err(Error::InvalidArgument("stack_columns needs at least one column".into()));
        }
        let c = self.value(cols[0]).numel();
        let mut out = vec![0.0; c * m];
        for (j, v) in cols.iter().enumerate() {
            let d = self.value(*v).data();
            if d.len() != c {
                return Err(shape_err("stack_columns: columns differ in length"));
            }
            for ch in 0..c {
                out[ch * m + j] = d[ch];
            }
        }
        let rg = self.rg(cols);
        self.push(Tensor::new(vec![c, m], out)?, Op::StackColumns(cols.to_vec()), rg, "stack_columns")
    }

    /// Records a scalar function of `input` whose value and input gradient
    /// were computed by the caller.
    pub fn scalar_fn(&mut self, input: Var, value: f64, local_grad: Vec<f64>) -> Result<Var> {
        if local_grad.len() != self.value(input).numel() {
            return Err(shape_err("scalar_fn: local gradient does not match input"));
        }
        let rg = self.rg(&[input]);
        self.push(Tensor::scalar(value), Op::ScalarFn { input, local_grad }, rg, "scalar_fn")
    }

    /// Sum of all elements, with compensated accumulation.
    pub fn sum(&mut self, input: Var) -> Result<Var> {
        let v = compensated_sum(self.value(input).data().iter().copied());
        let n = self.value(input).numel();
        self.scalar_fn(input, v, vec![1.0; n])
    }

    /// Reverse accumulation from a scalar `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::BackwardTwice);
        }
        if !self.value(loss).is_scalar() {
            return Err(Error::NonScalarLoss(self.shape(loss).to_vec()));
        }
        self.backward_done = true;
        for n in &mut self.nodes {
            n.grad = None;
        }
        self.nodes[loss.0].grad = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(g) = self.nodes[idx].grad.take() else { continue };
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("gradient at node {idx}")));
            }
            self.propagate(idx, &g)?;
            self.nodes[idx].grad = Some(g);
        }
        Ok(())
    }

    fn acc(&mut self, v: Var) -> Option<&mut Vec<f64>> {
        let node = &mut self.nodes[v.0];
        if !node.requires_grad {
            return None;
        }
        let n = node.value.numel();
        Some(node.grad.get_or_insert_with(|| vec![0.0; n]))
    }

    fn propagate(&mut self, idx: usize, g: &[f64]) -> Result<()> {
        // Temporarily move the op out so input nodes can be borrowed mutably.
        let op = std::mem::replace(&mut self.nodes[idx].op, Op::Leaf);
        match &op {
            Op::Leaf => {}
            Op::Conv1d { input, weight, bias, stride } => {
                let (cin, t) = self.value(*input).dims2()?;
                let (cout, tout) = self.value(Var(idx)).dims2()?;
                let k = self.shape(*weight)[2];
                let x = self.value(*input).data().to_vec();
                let w = self.value(*weight).data().to_vec();
                if let Some(gx) = self.acc(*input) {
                    for o in 0..cout {
                        for c in 0..cin {
                            let wr = &w[(o * cin + c) * k..(o * cin + c + 1) * k];
                            for i in 0..tout {
                                let gv = g[o * tout + i];
                                let end = i * stride;
                                let first = (end + 1).saturating_sub(k);
                                let woff = k - 1 - (end - first);
                                for (wv, gxv) in wr[woff..].iter().zip(&mut gx[c * t + first..=c * t + end]) {
                                    *gxv += gv * wv;
                                }
                            }
                        }
                    }
                }
                if let Some(gw) = self.acc(*weight) {
                    for o in 0..cout {
                        for c in 0..cin {
                            let xr = &x[c * t..(c + 1) * t];
                            let gwr = &mut gw[(o * cin + c) * k..(o * cin + c + 1) * k];
                            for i in 0..tout {
                                let gv = g[o * tout + i];
                                let end = i * stride;
                                let first = (end + 1).saturating_sub(k);
                                let woff = k - 1 - (end - first);
                                for (gwv, xv) in gwr[woff..].iter_mut().zip(&xr[first..=end]) {
                                    *gwv += gv * xv;
                                }
                            }
                        }
                    }
                }
                if let Some(gb) = self.acc(*bias) {
                    for o in 0..cout {
                        gb[o] += g[o * tout..(o + 1) * tout].iter().sum::<f64>();
                    }
                }
            }
            Op::DepthwiseConv1d { input, weight, bias } => {
                let (c, t) = self.value(*input).dims2()?;
                let k = self.shape(*weight)[1];
                let x = self.value(*input).data().to_vec();
                let w = self.value(*weight).data().to_vec();
                if let Some(gx) = self.acc(*input) {
                    for ch in 0..c {
                        for i in 0..t {
                            let gv = g[ch * t + i];
                            let first = (i + 1).saturating_sub(k);
                            let woff = k - 1 - (i - first);
                            for (wv, gxv) in w[ch * k + woff..(ch + 1) * k].iter().zip(&mut gx[ch * t + first..=ch * t + i]) {
                                *gxv += gv * wv;
                            }
                        }
                    }
                }
                if let Some(gw) = self.acc(*weight) {
                    for ch in 0..c {
                        for i in 0..t {
                            let gv = g[ch * t + i];
                            let first = (i + 1).saturating_sub(k);
                            let woff = k - 1 - (i - first);
                            for (gwv, xv) in gw[ch * k + woff..(ch + 1) * k].iter_mut().zip(&x[ch * t + first..=ch * t + i]) {
                                *gwv += gv * xv;
                            }
                        }
                    }
                }
                if let Some(gb) = self.acc(*bias) {
                    for ch in 0..c {
                        gb[ch] += g[ch * t..(ch + 1) * t].iter().sum::<f64>();
                    }
                }
            }
            Op::Linear { input, weight, bias } => {
                let (cin, t) = self.value(*input).dims2()?;
                let cout = self.shape(*weight)[0];
                let x = self.value(*input).data().to_vec();
                let w = self.value(*weight).data().to_vec();
                if let Some(gx) = self.acc(*input) {
                    for o in 0..cout {
                        let gr = &g[o * t..(o + 1) * t];
                        for c in 0..cin {
                            let wv = w[o * cin + c];
                            for (gxv, gv) in gx[c * t..(c + 1) * t].iter_mut().zip(gr) {
                                *gxv += wv * gv;
                            }
                        }
                    }
                }
                if let Some(gw) = self.acc(*weight) {
                    for o in 0..cout {
                        let gr = &g[o * t..(o + 1) * t];
                        for c in 0..cin {
                            let s: f64 = gr.iter().zip(&x[c * t..(c + 1) * t]).map(|(a, b)| a * b).sum();
                            gw[o * cin + c] += s;
                        }
                    }
                }
                if let Some(gb) = self.acc(*bias) {
                    for o in 0..cout {
                        gb[o] += g[o * t..(o + 1) * t].iter().sum::<f64>();
                    }
                }
            }
            Op::LeakyRelu { input, slope } => {
                let x = self.value(*input).data().to_vec();
                if let Some(gx) = self.acc(*input) {
                    for ((gxv, gv), xv) in gx.iter_mut().zip(g).zip(&x) {
                        *gxv += if *xv > 0.0 { *gv } else { slope * gv };
                    }
                }
            }
            Op::LayerNorm { input, gain, offset, xhat, inv_std } => {
                let (c, t) = self.value(*input).dims2()?;
                let gn = self.value(*gain).data().to_vec();
                if let Some(gg) = self.acc(*gain) {
                    for ch in 0..c {
                        for f in 0..t {
                            gg[ch] += g[ch * t + f] * xhat[ch * t + f];
                        }
                    }
                }
                if let Some(go) = self.acc(*offset) {
                    for ch in 0..c {
                        go[ch] += g[ch * t..(ch + 1) * t].iter().sum::<f64>();
                    }
                }
                if let Some(gx) = self.acc(*input) {
                    let cf = c as f64;
                    for f in 0..t {
                        let mut s1 = 0.0;
                        let mut s2 = 0.0;
                        for ch in 0..c {
                            let dxh = g[ch * t + f] * gn[ch];
                            s1 += dxh;
                            s2 += dxh * xhat[ch * t + f];
                        }
                        for ch in 0..c {
                            let dxh = g[ch * t + f] * gn[ch];
                            gx[ch * t + f] += inv_std[f] / cf * (cf * dxh - s1 - xhat[ch * t + f] * s2);
                        }
                    }
                }
            }
            Op::Interp { input } => {
                let (c, k) = self.value(*input).dims2()?;
                let out_len = self.shape(Var(idx))[1];
                if let Some(gx) = self.acc(*input) {
                    for j in 0..out_len {
                        let (lo, w) = interp_position(j, k, out_len);
                        for ch in 0..c {
                            let gv = g[ch * out_len + j];
                            if w > 0.0 {
                                gx[ch * k + lo] += (1.0 - w) * gv;
                                gx[ch * k + lo + 1] += w * gv;
                            } else {
                                gx[ch * k + lo] += gv;
                            }
                        }
                    }
                }
            }
            Op::Lstm { x, h, c, w_ih, w_hh, bias, gates } => {
                let hd = self.value(*h).numel();
                let d = self.value(*x).numel();
                let cprev = self.value(*c).data().to_vec();
                let cnew: Vec<f64> = self.value(Var(idx)).data()[hd..].to_vec();
                let mut da = vec![0.0; 4 * hd];
                let mut dc_prev = vec![0.0; hd];
                for u in 0..hd {
                    let (i, f, gg, o) = (gates[u], gates[hd + u], gates[2 * hd + u], gates[3 * hd + u]);
                    let tc = cnew[u].tanh();
                    let dh = g[u];
                    let dc = g[hd + u] + dh * o * (1.0 - tc * tc);
                    da[u] = dc * gg * i * (1.0 - i);
                    da[hd + u] = dc * cprev[u] * f * (1.0 - f);
                    da[2 * hd + u] = dc * i * (1.0 - gg * gg);
                    da[3 * hd + u] = dh * tc * o * (1.0 - o);
                    dc_prev[u] = dc * f;
                }
                let xv = self.value(*x).data().to_vec();
                let hv = self.value(*h).data().to_vec();
                let wi = self.value(*w_ih).data().to_vec();
                let wh = self.value(*w_hh).data().to_vec();
                if let Some(gc) = self.acc(*c) {
                    for (a, b) in gc.iter_mut().zip(&dc_prev) {
                        *a += b;
                    }
                }
                if let Some(gx) = self.acc(*x) {
                    for (r, dav) in da.iter().enumerate() {
                        for (gxv, w) in gx.iter_mut().zip(&wi[r * d..(r + 1) * d]) {
                            *gxv += dav * w;
                        }
                    }
                }
                if let Some(gh) = self.acc(*h) {
                    for (r, dav) in da.iter().enumerate() {
                        for (ghv, w) in gh.iter_mut().zip(&wh[r * hd..(r + 1) * hd]) {
                            *ghv += dav * w;
                        }
                    }
                }
                if let Some(gw) = self.acc(*w_ih) {
                    for (r, dav) in da.iter().enumerate() {
                        for (gwv, xvv) in gw[r * d..(r + 1) * d].iter_mut().zip(&xv) {
                            *gwv += dav * xvv;
                        }
                    }
                }
                if let Some(gw) = self.acc(*w_hh) {
                    for (r, dav) in da.iter().enumerate() {
                        for (gwv, hvv) in gw[r * hd..(r + 1) * hd].iter_mut().zip(&hv) {
                            *gwv += dav * hvv;
                        }
                    }
                }
                if let Some(gb) = self.acc(*bias) {
                    for (a, b) in gb.iter_mut().zip(&da) {
                        *a += b;
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if let Some(gx) = self.acc(v) {
                        for (x, y) in gx.iter_mut().zip(g) {
                            *x += y;
                        }
                    }
                }
            }
            Op::Mul(a, b) => {
                let av = self.value(*a).data().to_vec();
                let bv = self.value(*b).data().to_vec();
                if let Some(ga) = self.acc(*a) {
                    for ((x, gv), y) in ga.iter_mut().zip(g).zip(&bv) {
                        *x += gv * y;
                    }
                }
                if let Some(gb) = self.acc(*b) {
                    for ((x, gv), y) in gb.iter_mut().zip(g).zip(&av) {
                        *x += gv * y;
                    }
                }
            }
            Op::Scale(a, factor) => {
                if let Some(ga) = self.acc(*a) {
                    for (x, gv) in ga.iter_mut().zip(g) {
                        *x += factor * gv;
                    }
                }
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for p in parts {
                    let n = self.value(*p).numel();
                    if let Some(gp) = self.acc(*p) {
                        for (x, gv) in gp.iter_mut().zip(&g[off..off + n]) {
                            *x += gv;
                        }
                    }
                    off += n;
                }
            }
            Op::Slice { input, start } => {
                if let Some(gx) = self.acc(*input) {
                    for (x, gv) in gx[*start..*start + g.len()].iter_mut().zip(g) {
                        *x += gv;
                    }
                }
            }
            Op::Column { input, index } => {
                let t = self.shape(*input)[1];
                if let Some(gx) = self.acc(*input) {
                    for (ch, gv) in g.iter().enumerate() {
                        gx[ch * t + index] += gv;
                    }
                }
            }
            Op::StackColumns(cols) => {
                let m = cols.len();
                for (j, v) in cols.iter().enumerate() {
                    if let Some(gc) = self.acc(*v) {
                        for (ch, x) in gc.iter_mut().enumerate() {
                            *x += g[ch * m + j];
                        }
                    }
                }
            }
            Op::ScalarFn { input, local_grad } => {
                let gv = g[0];
                if let Some(gx) = self.acc(*input) {
                    for (x, l) in gx.iter_mut().zip(local_grad) {
                        *x += gv * l;
                    }
                }
            }
        }
        self.nodes[idx].op = op;
        Ok(())
    }
}

/// Lower source index and blend weight for output `j` of an endpoint-pinned
/// resampling from `k` to `out_len` points.
pub(crate) fn interp_position(j: usize, k: usize, out_len: usize) -> (usize, f64) {
    if out_len == 1 {
        return (0, 0.0);
    }
    let num = j * (k - 1);
    let den = out_len - 1;
    let lo = num / den;
    let rem = num % den;
    if rem == 0 || lo >= k - 1 {
        (lo.min(k - 1), 0.0)
    } else {
        (lo, rem as f64 / den as f64)
    }
}
