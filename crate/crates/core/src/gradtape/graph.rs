use std::collections::BTreeMap;

use super::kernels::{self, ConvGeom, Wrap};
use super::{TapeError, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Input(String),
    Constant(Tensor),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f32),
    Clamp(NodeId, f32, f32),
    Sigmoid(NodeId),
    Tanh(NodeId),
    LeakyRelu(NodeId, f32),
    Normalize3(NodeId),
    Dot3(NodeId, NodeId),
    Pow(NodeId, f32),
    Mix(NodeId, NodeId, NodeId),
    BilinearSample {
        texture: NodeId,
        uv: NodeId,
        wrap: Wrap,
    },
    Conv2d {
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
        stride: usize,
        pad: usize,
    },
    Upsample2x(NodeId),
    DownsampleBox(NodeId, usize),
    Concat(Vec<NodeId>),
    ReduceMean(NodeId),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Input(_) => "input",
            Op::Constant(_) => "constant",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Clamp(..) => "clamp",
            Op::Sigmoid(_) => "sigmoid",
            Op::Tanh(_) => "tanh",
            Op::LeakyRelu(..) => "leaky_relu",
            Op::Normalize3(_) => "normalize3",
            Op::Dot3(..) => "dot3",
            Op::Pow(..) => "pow",
            Op::Mix(..) => "mix",
            Op::BilinearSample { .. } => "bilinear_sample",
            Op::Conv2d { .. } => "conv2d",
            Op::Upsample2x(_) => "upsample2x",
            Op::DownsampleBox(..) => "downsample_box",
            Op::Concat(_) => "concat",
            Op::ReduceMean(_) => "reduce_mean",
        }
    }

    fn inputs(&self) -> Vec<NodeId> {
        match self {
            Op::Input(_) | Op::Constant(_) => vec![],
            Op::Scale(a, _)
            | Op::Clamp(a, ..)
            | Op::Sigmoid(a)
            | Op::Tanh(a)
            | Op::LeakyRelu(a, _)
            | Op::Normalize3(a)
            | Op::Pow(a, _)
            | Op::Upsample2x(a)
            | Op::DownsampleBox(a, _)
            | Op::ReduceMean(a) => vec![*a],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Dot3(a, b) => vec![*a, *b],
            Op::Mix(a, b, t) => vec![*a, *b, *t],
            Op::BilinearSample { texture, uv, .. } => vec![*texture, *uv],
            Op::Conv2d {
                input, weight, bias, ..
            } => vec![*input, *weight, *bias],
            Op::Concat(v) => v.clone(),
        }
    }
}

/// How the right-hand operand of a binary elementwise op maps onto the output.
#[derive(Clone, Copy, Debug)]
enum Bcast {
    Same,
    Scalar,
    /// Operand has trailing extent 1 where the output has `channels`.
    Channel(usize),
}

impl Bcast {
    fn resolve(out: &[usize], operand: &[usize]) -> Option<Self> {
        if out == operand {
            return Some(Bcast::Same);
        }
        if operand.iter().product::<usize>() == 1 {
            return Some(Bcast::Scalar);
        }
        let n = out.len();
        if n > 0 && operand.len() == n && operand[n - 1] == 1 && out[..n - 1] == operand[..n - 1] {
            return Some(Bcast::Channel(out[n - 1]));
        }
        None
    }

    #[inline]
    fn index(self, i: usize) -> usize {
        match self {
            Bcast::Same => i,
            Bcast::Scalar => 0,
            Bcast::Channel(c) => i / c,
        }
    }
}

/// Computation graph over [`Tensor`]s with cached forward activations.
#[derive(Clone, Debug, Default)]
pub struct Graph {
    ops: Vec<Op>,
    outputs: Vec<NodeId>,
    values: Vec<Option<Tensor>>,
    forwarded: bool,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, op: Op) -> NodeId {
        self.ops.push(op);
        self.values.push(None);
        self.forwarded = false;
        NodeId(self.ops.len() - 1)
    }

    pub fn input(&mut self, name: &str) -> NodeId {
        self.push(Op::Input(name.to_string()))
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Constant(value))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: NodeId, s: f32) -> NodeId {
        self.push(Op::Scale(a, s))
    }

    pub fn clamp(&mut self, a: NodeId, lo: f32, hi: f32) -> NodeId {
        self.push(Op::Clamp(a, lo, hi))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Tanh(a))
    }

    pub fn leaky_relu(&mut self, a: NodeId, slope: f32) -> NodeId {
        self.push(Op::LeakyRelu(a, slope))
    }

    /// Normalizes the trailing 3-vector of every element.
    pub fn normalize3(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Normalize3(a))
    }

    /// Dot product over the trailing 3-vector; output has trailing extent 1.
    pub fn dot3(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Dot3(a, b))
    }

    pub fn pow(&mut self, a: NodeId, exponent: f32) -> NodeId {
        self.push(Op::Pow(a, exponent))
    }

    /// `a + t · (b − a)`, with `t` broadcast like a right-hand operand.
    pub fn mix(&mut self, a: NodeId, b: NodeId, t: NodeId) -> NodeId {
        self.push(Op::Mix(a, b, t))
    }

    /// Samples an `[H, W, C]` texture at `[N, 2]` coordinates, producing `[N, C]`.
    pub fn bilinear_sample(&mut self, texture: NodeId, uv: NodeId, wrap: Wrap) -> NodeId {
        self.push(Op::BilinearSample { texture, uv, wrap })
    }

    /// `[H, W, Cin]` input, `[KH, KW, Cin, Cout]` weight, `[Cout]` bias.
    pub fn conv2d(&mut self, input: NodeId, weight: NodeId, bias: NodeId, stride: usize, pad: usize) -> NodeId {
        self.push(Op::Conv2d {
            input,
            weight,
            bias,
            stride,
            pad,
        })
    }

    pub fn upsample2x(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Upsample2x(a))
    }

    pub fn downsample_box(&mut self, a: NodeId, factor: usize) -> NodeId {
        self.push(Op::DownsampleBox(a, factor))
    }

    /// Concatenates along the trailing axis.
    pub fn concat(&mut self, parts: &[NodeId]) -> NodeId {
        self.push(Op::Concat(parts.to_vec()))
    }

    pub fn reduce_mean(&mut self, a: NodeId) -> NodeId {
        self.push(Op::ReduceMean(a))
    }

    pub fn set_outputs(&mut self, outputs: &[NodeId]) {
        self.outputs = outputs.to_vec();
    }

    pub fn outputs(&self) -> &[NodeId] {
        &self.outputs
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    /// Cached forward value of any node.
    pub fn value(&self, node: NodeId) -> Option<&Tensor> {
        self.values.get(node.0).and_then(|v| v.as_ref())
    }

    fn val(&self, id: NodeId) -> &Tensor {
        self.values[id.0].as_ref().expect("inputs precede their consumers")
    }

    /// Evaluates every node and returns the outputs in [`Graph::set_outputs`] order.
    pub fn forward(&mut self, inputs: &BTreeMap<String, Tensor>) -> Result<Vec<Tensor>, TapeError> {
        self.forwarded = false;
        for i in 0..self.ops.len() {
            let value = self.eval(i, inputs)?;
            if !value.all_finite() {
                return Err(TapeError::NonFinite {
                    node: i,
                    op: self.ops[i].name(),
                });
            }
            self.values[i] = Some(value);
        }
        self.forwarded = true;
        Ok(self.outputs.iter().map(|&o| self.val(o).clone()).collect())
    }

    fn shape_err(&self, node: usize, detail: String) -> TapeError {
        TapeError::Shape {
            node,
            op: self.ops[node].name(),
            detail,
        }
    }

    fn binary(&self, node: usize, a: NodeId, b: NodeId, f: impl Fn(f32, f32) -> f32) -> Result<Tensor, TapeError> {
        let (ta, tb) = (self.val(a), self.val(b));
        let bc = Bcast::resolve(ta.shape(), tb.shape())
            .ok_or_else(|| self.shape_err(node, format!("cannot broadcast {:?} onto {:?}", tb.shape(), ta.shape())))?;
        let db = tb.data();
        let data = ta
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| f(x, db[bc.index(i)]))
            .collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    fn trailing3(&self, node: usize, t: &Tensor) -> Result<(), TapeError> {
        if t.shape().last() != Some(&3) {
            return Err(self.shape_err(node, format!("expected trailing extent 3, got {:?}", t.shape())));
        }
        Ok(())
    }

    fn eval(&self, node: usize, inputs: &BTreeMap<String, Tensor>) -> Result<Tensor, TapeError> {
        let op = &self.ops[node];
        match op {
            Op::Input(name) => inputs
                .get(name)
                .cloned()
                .ok_or_else(|| TapeError::MissingInput(name.clone())),
            Op::Constant(t) => Ok(t.clone()),
            Op::Add(a, b) => self.binary(node, *a, *b, |x, y| x + y),
            Op::Sub(a, b) => self.binary(node, *a, *b, |x, y| x - y),
            Op::Mul(a, b) => self.binary(node, *a, *b, |x, y| x * y),
            Op::Scale(a, s) => Ok(self.val(*a).map(|x| x * s)),
            Op::Clamp(a, lo, hi) => Ok(self.val(*a).map(|x| x.clamp(*lo, *hi))),
            Op::Sigmoid(a) => Ok(self.val(*a).map(kernels::sigmoid)),
            Op::Tanh(a) => Ok(self.val(*a).map(f32::tanh)),
            Op::LeakyRelu(a, s) => Ok(self.val(*a).map(|x| if x > 0.0 { x } else { s * x })),
            Op::Pow(a, p) => Ok(self.val(*a).map(|x| x.powf(*p))),
            Op::Normalize3(a) => {
                let t = self.val(*a);
                self.trailing3(node, t)?;
                let mut out = t.clone();
                out.set_requires_grad(false);
                for v in out.data_mut().chunks_exact_mut(3) {
                    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
                    let inv = 1.0 / n;
                    v.iter_mut().for_each(|x| *x *= inv);
                }
                Ok(out)
            }
            Op::Dot3(a, b) => {
                let (ta, tb) = (self.val(*a), self.val(*b));
                self.trailing3(node, ta)?;
                if ta.shape() != tb.shape() {
                    return Err(self.shape_err(node, format!("{:?} vs {:?}", ta.shape(), tb.shape())));
                }
                let mut shape = ta.shape().to_vec();
                *shape.last_mut().unwrap() = 1;
                let data = ta
                    .data()
                    .chunks_exact(3)
                    .zip(tb.data().chunks_exact(3))
                    .map(|(x, y)| x[0] * y[0] + x[1] * y[1] + x[2] * y[2])
                    .collect();
                Tensor::new(shape, data)
            }
            Op::Mix(a, b, t) => {
                let (ta, tb, tt) = (self.val(*a), self.val(*b), self.val(*t));
                if ta.shape() != tb.shape() {
                    return Err(self.shape_err(node, format!("{:?} vs {:?}", ta.shape(), tb.shape())));
                }
                let bc = Bcast::resolve(ta.shape(), tt.shape()).ok_or_else(|| {
                    self.shape_err(node, format!("cannot broadcast {:?} onto {:?}", tt.shape(), ta.shape()))
                })?;
                let (da, db, dt) = (ta.data(), tb.data(), tt.data());
                let data = (0..da.len())
                    .map(|i| {
                        let w = dt[bc.index(i)];
                        da[i] + w * (db[i] - da[i])
                    })
                    .collect();
                Tensor::new(ta.shape().to_vec(), data)
            }
            Op::BilinearSample { texture, uv, wrap } => {
                let (tex, uvs) = (self.val(*texture), self.val(*uv));
                let (h, w, c) = tex
                    .hwc()
                    .map_err(|_| self.shape_err(node, format!("texture shape {:?}", tex.shape())))?;
                let n = match uvs.shape() {
                    &[n, 2] => n,
                    s => return Err(self.shape_err(node, format!("uv shape {s:?}, expected [N, 2]"))),
                };
                let mut out = vec![0.0; n * c];
                for (i, p) in uvs.data().chunks_exact(2).enumerate() {
                    let fp = kernels::footprint(h, w, p[0], p[1], *wrap);
                    kernels::gather(tex.data(), c, &fp, &mut out[i * c..(i + 1) * c]);
                }
                Tensor::new(vec![n, c], out)
            }
            Op::Conv2d {
                input,
                weight,
                bias,
                stride,
                pad,
            } => {
                let geom = self.conv_geom(node, *input, *weight, *bias, *stride, *pad)?;
                let mut out = vec![0.0; geom.out_height() * geom.out_width() * geom.out_channels];
                kernels::conv2d_forward(
                    &geom,
                    self.val(*input).data(),
                    self.val(*weight).data(),
                    self.val(*bias).data(),
                    &mut out,
                );
                Tensor::new(vec![geom.out_height(), geom.out_width(), geom.out_channels], out)
            }
            Op::Upsample2x(a) => {
                let t = self.val(*a);
                let (h, w, c) = t.hwc().map_err(|e| self.shape_err(node, e.to_string()))?;
                Tensor::new(vec![2 * h, 2 * w, c], kernels::upsample_bilinear(t.data(), h, w, c, 2))
            }
            Op::DownsampleBox(a, f) => {
                let t = self.val(*a);
                let (h, w, c) = t.hwc().map_err(|e| self.shape_err(node, e.to_string()))?;
                if *f == 0 || h % f != 0 || w % f != 0 {
                    return Err(self.shape_err(node, format!("{h}x{w} not divisible by {f}")));
                }
                Tensor::new(vec![h / f, w / f, c], kernels::downsample_box(t.data(), h, w, c, *f))
            }
            Op::Concat(parts) => {
                let first = self.val(parts[0]);
                let prefix = &first.shape()[..first.shape().len() - 1];
                let mut widths = Vec::with_capacity(parts.len());
                for p in parts {
                    let s = self.val(*p).shape();
                    if &s[..s.len() - 1] != prefix {
                        return Err(self.shape_err(node, format!("{:?} vs {:?}", first.shape(), s)));
                    }
                    widths.push(s[s.len() - 1]);
                }
                let total: usize = widths.iter().sum();
                let rows: usize = prefix.iter().product();
                let mut data = Vec::with_capacity(rows * total);
                for r in 0..rows {
                    for (p, &wd) in parts.iter().zip(&widths) {
                        data.extend_from_slice(&self.val(*p).data()[r * wd..(r + 1) * wd]);
                    }
                }
                let mut shape = prefix.to_vec();
                shape.push(total);
                Tensor::new(shape, data)
            }
            Op::ReduceMean(a) => Ok(Tensor::scalar(self.val(*a).mean() as f32)),
        }
    }

    fn conv_geom(
        &self,
        node: usize,
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
        stride: usize,
        pad: usize,
    ) -> Result<ConvGeom, TapeError> {
        let (ti, tw, tb) = (self.val(input), self.val(weight), self.val(bias));
        let (h, w, cin) = ti.hwc().map_err(|e| self.shape_err(node, e.to_string()))?;
        let (kh, kw, kc, cout) = match tw.shape() {
            &[a, b, c, d] => (a, b, c, d),
            s => return Err(self.shape_err(node, format!("weight shape {s:?}, expected 4-D"))),
        };
        if kc != cin {
            return Err(self.shape_err(node, format!("weight expects {kc} input channels, input has {cin}")));
        }
        if tb.shape() != [cout] {
            return Err(self.shape_err(node, format!("bias shape {:?}, expected [{cout}]", tb.shape())));
        }
        if stride == 0 || h + 2 * pad < kh || w + 2 * pad < kw {
            return Err(self.shape_err(node, "kernel larger than padded input".into()));
        }
        Ok(ConvGeom {
            height: h,
            width: w,
            in_channels: cin,
            out_channels: cout,
            kernel_h: kh,
            kernel_w: kw,
            stride,
            pad,
        })
    }

    /// Backpropagates a single-output graph.
    pub fn backward(&self, output_grad: &Tensor) -> Result<BTreeMap<String, Tensor>, TapeError> {
        self.backward_multi(std::slice::from_ref(output_grad))
    }

    /// Gradient of `Σ_k ⟨output_grads[k], outputs[k]⟩` with respect to every
    /// input bound with `requires_grad`. Unreached inputs receive zeros.
    pub fn backward_multi(&self, output_grads: &[Tensor]) -> Result<BTreeMap<String, Tensor>, TapeError> {
        if !self.forwarded {
            return Err(TapeError::BackwardBeforeForward);
        }
        if output_grads.len() != self.outputs.len() {
            return Err(TapeError::OutputGradCount {
                expected: self.outputs.len(),
                got: output_grads.len(),
            });
        }
        let n = self.ops.len();
        let mut needs = vec![false; n];
        for i in 0..n {
            needs[i] = match &self.ops[i] {
                Op::Input(_) => self.val(NodeId(i)).requires_grad(),
                Op::Constant(_) => false,
                op => op.inputs().iter().any(|p| needs[p.0]),
            };
        }
        let mut grads: Vec<Option<Vec<f32>>> = vec![None; n];
        for (k, (&o, g)) in self.outputs.iter().zip(output_grads).enumerate() {
            let out = self.val(o);
            if out.shape() != g.shape() {
                return Err(TapeError::OutputGradShape {
                    index: k,
                    expected: out.shape().to_vec(),
                    got: g.shape().to_vec(),
                });
            }
            accumulate(&mut grads[o.0], g.data());
        }
        for i in (0..n).rev() {
            if !needs[i] {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            if let Op::Input(_) = self.ops[i] {
                grads[i] = Some(g);
                continue;
            }
            self.propagate(i, &g, &needs, &mut grads);
        }
        let mut result = BTreeMap::new();
        for (i, op) in self.ops.iter().enumerate() {
            if let Op::Input(name) = op {
                let v = self.val(NodeId(i));
                if v.requires_grad() {
                    let data = grads[i].take().unwrap_or_else(|| vec![0.0; v.len()]);
                    result.insert(name.clone(), Tensor::new(v.shape().to_vec(), data)?);
                }
            }
        }
        Ok(result)
    }

    fn propagate(&self, node: usize, g: &[f32], needs: &[bool], grads: &mut [Option<Vec<f32>>]) {
        let out = self.val(NodeId(node)).data();
        let send = |id: NodeId, contrib: Vec<f32>, grads: &mut [Option<Vec<f32>>]| {
            if needs[id.0] {
                accumulate(&mut grads[id.0], &contrib);
            }
        };
        match &self.ops[node] {
            Op::Input(_) | Op::Constant(_) => {}
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(self.ops[node], Op::Sub(..)) {
                    -1.0
                } else {
                    1.0
                };
                send(*a, g.to_vec(), grads);
                if needs[b.0] {
                    let tb = self.val(*b);
                    let bc = Bcast::resolve(self.val(*a).shape(), tb.shape()).unwrap();
                    let mut gb = vec![0.0; tb.len()];
                    for (i, &gi) in g.iter().enumerate() {
                        gb[bc.index(i)] += sign * gi;
                    }
                    send(*b, gb, grads);
                }
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.val(*a), self.val(*b));
                let bc = Bcast::resolve(ta.shape(), tb.shape()).unwrap();
                let (da, db) = (ta.data(), tb.data());
                if needs[a.0] {
                    let ga = g.iter().enumerate().map(|(i, &gi)| gi * db[bc.index(i)]).collect();
                    send(*a, ga, grads);
                }
                if needs[b.0] {
                    let mut gb = vec![0.0; tb.len()];
                    for (i, &gi) in g.iter().enumerate() {
                        gb[bc.index(i)] += gi * da[i];
                    }
                    send(*b, gb, grads);
                }
            }
            Op::Scale(a, s) => send(*a, g.iter().map(|&x| x * s).collect(), grads),
            Op::Clamp(a, lo, hi) => {
                let da = self.val(*a).data();
                let ga = g
                    .iter()
                    .zip(da)
                    .map(|(&gi, &x)| if x >= *lo && x <= *hi { gi } else { 0.0 })
                    .collect();
                send(*a, ga, grads);
            }
            Op::Sigmoid(a) => {
                let ga = g.iter().zip(out).map(|(&gi, &y)| gi * y * (1.0 - y)).collect();
                send(*a, ga, grads);
            }
            Op::Tanh(a) => {
                let ga = g.iter().zip(out).map(|(&gi, &y)| gi * (1.0 - y * y)).collect();
                send(*a, ga, grads);
            }
            Op::LeakyRelu(a, s) => {
                let da = self.val(*a).data();
                let ga = g
                    .iter()
                    .zip(da)
                    .map(|(&gi, &x)| if x > 0.0 { gi } else { s * gi })
                    .collect();
                send(*a, ga, grads);
            }
            Op::Pow(a, p) => {
                let da = self.val(*a).data();
                let ga = g.iter().zip(da).map(|(&gi, &x)| gi * p * x.powf(p - 1.0)).collect();
                send(*a, ga, grads);
            }
            Op::Normalize3(a) => {
                let da = self.val(*a).data();
                let mut ga = vec![0.0; da.len()];
                for ((gx, x), (gi, n)) in ga
                    .chunks_exact_mut(3)
                    .zip(da.chunks_exact(3))
                    .zip(g.chunks_exact(3).zip(out.chunks_exact(3)))
                {
                    let len = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
                    let ng = n[0] * gi[0] + n[1] * gi[1] + n[2] * gi[2];
                    for k in 0..3 {
                        gx[k] = (gi[k] - n[k] * ng) / len;
                    }
                }
                send(*a, ga, grads);
            }
            Op::Dot3(a, b) => {
                let (da, db) = (self.val(*a).data(), self.val(*b).data());
                let spread = |other: &[f32]| -> Vec<f32> {
                    let mut r = vec![0.0; other.len()];
                    for (i, &gi) in g.iter().enumerate() {
                        for k in 0..3 {
                            r[3 * i + k] = gi * other[3 * i + k];
                        }
                    }
                    r
                };
                if needs[a.0] {
                    send(*a, spread(db), grads);
                }
                if needs[b.0] {
                    send(*b, spread(da), grads);
                }
            }
            Op::Mix(a, b, t) => {
                let (da, db, tt) = (self.val(*a).data(), self.val(*b).data(), self.val(*t));
                let bc = Bcast::resolve(self.val(*a).shape(), tt.shape()).unwrap();
                let dt = tt.data();
                if needs[a.0] {
                    let ga = g
                        .iter()
                        .enumerate()
                        .map(|(i, &gi)| gi * (1.0 - dt[bc.index(i)]))
                        .collect();
                    send(*a, ga, grads);
                }
                if needs[b.0] {
                    let gb = g.iter().enumerate().map(|(i, &gi)| gi * dt[bc.index(i)]).collect();
                    send(*b, gb, grads);
                }
                if needs[t.0] {
                    let mut gt = vec![0.0; dt.len()];
                    for (i, &gi) in g.iter().enumerate() {
                        gt[bc.index(i)] += gi * (db[i] - da[i]);
                    }
                    send(*t, gt, grads);
                }
            }
            Op::BilinearSample { texture, uv, wrap } => {
                let (tex, uvs) = (self.val(*texture), self.val(*uv));
                let (h, w, c) = tex.hwc().unwrap();
                let fps: Vec<_> = uvs
                    .data()
                    .chunks_exact(2)
                    .map(|p| kernels::footprint(h, w, p[0], p[1], *wrap))
                    .collect();
                if needs[texture.0] {
                    let mut gt = vec![0.0; tex.len()];
                    for (i, fp) in fps.iter().enumerate() {
                        kernels::scatter(&mut gt, c, fp, &g[i * c..(i + 1) * c]);
                    }
                    send(*texture, gt, grads);
                }
                if needs[uv.0] {
                    let mut gu = vec![0.0; uvs.len()];
                    for (i, fp) in fps.iter().enumerate() {
                        let (du, dv) = kernels::uv_grad(tex.data(), c, fp, &g[i * c..(i + 1) * c]);
                        gu[2 * i] = du;
                        gu[2 * i + 1] = dv;
                    }
                    send(*uv, gu, grads);
                }
            }
            Op::Conv2d {
                input,
                weight,
                bias,
                stride,
                pad,
            } => {
                let geom = self
                    .conv_geom(node, *input, *weight, *bias, *stride, *pad)
                    .expect("validated in forward");
                let (ti, tw, tb) = (self.val(*input), self.val(*weight), self.val(*bias));
                let mut gi = needs[input.0].then(|| vec![0.0; ti.len()]);
                let mut gw = needs[weight.0].then(|| vec![0.0; tw.len()]);
                let mut gb = needs[bias.0].then(|| vec![0.0; tb.len()]);
                kernels::conv2d_backward(
                    &geom,
                    ti.data(),
                    tw.data(),
                    g,
                    gi.as_deref_mut(),
                    gw.as_deref_mut(),
                    gb.as_deref_mut(),
                );
                if let Some(v) = gi {
                    send(*input, v, grads);
                }
                if let Some(v) = gw {
                    send(*weight, v, grads);
                }
                if let Some(v) = gb {
                    send(*bias, v, grads);
                }
            }
            Op::Upsample2x(a) => {
                let (h, w, c) = self.val(*a).hwc().unwrap();
                send(*a, kernels::upsample_bilinear_adjoint(g, h, w, c, 2), grads);
            }
            Op::DownsampleBox(a, f) => {
                let (h, w, c) = self.val(*a).hwc().unwrap();
                send(*a, kernels::downsample_box_adjoint(g, h, w, c, *f), grads);
            }
            Op::Concat(parts) => {
                let widths: Vec<usize> = parts.iter().map(|p| *self.val(*p).shape().last().unwrap()).collect();
                let total: usize = widths.iter().sum();
                let rows = g.len() / total.max(1);
                let mut offset = 0;
                for (p, &wd) in parts.iter().zip(&widths) {
                    if needs[p.0] {
                        let mut gp = Vec::with_capacity(rows * wd);
                        for r in 0..rows {
                            gp.extend_from_slice(&g[r * total + offset..r * total + offset + wd]);
                        }
                        send(*p, gp, grads);
                    }
                    offset += wd;
                }
            }
            Op::ReduceMean(a) => {
                let n = self.val(*a).len();
                send(*a, vec![g[0] / n as f32; n], grads);
            }
        }
    }
}

fn accumulate(slot: &mut Option<Vec<f32>>, contrib: &[f32]) {
    match slot {
        Some(acc) => acc.iter_mut().zip(contrib).for_each(|(a, &c)| *a += c),
        None => *slot = Some(contrib.to_vec()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bind(pairs: &[(&str, Tensor)]) -> BTreeMap<String, Tensor> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
    }

    #[test]
    fn add_is_elementwise() {
        let mut g = Graph::new();
        let (x, y) = (g.input("x"), g.input("y"));
        let s = g.add(x, y);
        g.set_outputs(&[s]);
        let out = g
            .forward(&bind(&[
                ("x", Tensor::new(vec![2], vec![1.0, 2.0]).unwrap()),
                ("y", Tensor::new(vec![2], vec![3.0, 4.0]).unwrap()),
            ]))
            .unwrap();
        assert_eq!(out[0].data(), &[4.0, 6.0]);
    }

    #[test]
    fn square_value_and_gradient() {
        let mut g = Graph::new();
        let x = g.input("x");
        let y = g.mul(x, x);
        g.set_outputs(&[y]);
        let out = g.forward(&bind(&[("x", Tensor::scalar(2.0))])).unwrap();
        assert_eq!(out[0].data(), &[4.0]);
        g.forward(&bind(&[("x", Tensor::scalar(3.0).with_grad())])).unwrap();
        let grads = g.backward(&Tensor::scalar(1.0)).unwrap();
        assert_eq!(grads["x"].data(), &[6.0]);
    }

    #[test]
    fn unused_input_is_dead_and_gets_zero_gradient() {
        let mut g = Graph::new();
        let x = g.input("x");
        let _z = g.input("z");
        let y = g.scale(x, 2.0);
        g.set_outputs(&[y]);
        let a = g
            .forward(&bind(&[
                ("x", Tensor::scalar(1.5).with_grad()),
                ("z", Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap().with_grad()),
            ]))
            .unwrap();
        let grads = g.backward(&Tensor::scalar(1.0)).unwrap();
        assert_eq!(grads["z"].data(), &[0.0, 0.0, 0.0]);
        let b = g
            .forward(&bind(&[
                ("x", Tensor::scalar(1.5).with_grad()),
                ("z", Tensor::new(vec![3], vec![-9.0, 7.0, 0.0]).unwrap()),
            ]))
            .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn backward_before_forward_fails() {
        let mut g = Graph::new();
        let x = g.input("x");
        g.set_outputs(&[x]);
        assert!(matches!(
            g.backward(&Tensor::scalar(1.0)),
            Err(TapeError::BackwardBeforeForward)
        ));
    }

    #[test]
    fn shape_mismatch_names_node() {
        let mut g = Graph::new();
        let x = g.input("x");
        let y = g.input("y");
        let s = g.add(x, y);
        g.set_outputs(&[s]);
        let err = g
            .forward(&bind(&[
                ("x", Tensor::zeros(vec![2, 3])),
                ("y", Tensor::zeros(vec![3, 2])),
            ]))
            .unwrap_err();
        match err {
            TapeError::Shape { node, op, .. } => {
                assert_eq!(node, s.index());
                assert_eq!(op, "add");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn non_finite_reports_node() {
        let mut g = Graph::new();
        let x = g.input("x");
        let y = g.pow(x, 0.5);
        g.set_outputs(&[y]);
        let err = g.forward(&bind(&[("x", Tensor::scalar(-1.0))])).unwrap_err();
        assert!(matches!(err, TapeError::NonFinite { node, op: "pow" } if node == y.index()));
    }

    #[test]
    fn missing_input_reported() {
        let mut g = Graph::new();
        let x = g.input("x");
        g.set_outputs(&[x]);
        assert!(matches!(g.forward(&BTreeMap::new()), Err(TapeError::MissingInput(n)) if n == "x"));
    }

    #[test]
    fn channel_broadcast_mul() {
        let mut g = Graph::new();
        let a = g.input("a");
        let b = g.input("b");
        let m = g.mul(a, b);
        g.set_outputs(&[m]);
        let out = g
            .forward(&bind(&[
                (
                    "a",
                    Tensor::new(vec![2, 3], vec![1., 2., 3., 4., 5., 6.])
                        .unwrap()
                        .with_grad(),
                ),
                ("b", Tensor::new(vec![2, 1], vec![2., 10.]).unwrap().with_grad()),
            ]))
            .unwrap();
        assert_eq!(out[0].data(), &[2., 4., 6., 40., 50., 60.]);
        let grads = g.backward(&Tensor::full(vec![2, 3], 1.0)).unwrap();
        assert_eq!(grads["b"].data(), &[6.0, 15.0]);
        assert_eq!(grads["a"].data(), &[2., 2., 2., 10., 10., 10.]);
    }
}
