//! Reverse-mode differentiation over a recorded tape of tensor ops.
//!
//! Nodes are appended in evaluation order, so walking the tape backwards is a
//! valid topological order. Parameters are copied in from a [`ParamSet`] and
//! their gradients copied back out with [`Graph::accumulate_into`].

use super::conv::{self, ConvGeom};
use super::params::ParamSet;
use super::tensor::{Shape, Tensor};
use crate::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// Pointwise nonlinearities with closed-form derivatives.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Unary {
    LeakyRelu(f64),
    Relu,
    Sigmoid,
    Tanh,
    Abs,
    Ln,
    /// `ln(clamp(x, lo, hi))`, zero derivative outside the interval.
    LnClamped(f64, f64),
    /// `max(x, floor)`.
    Floor(f64),
    /// Inverse of the Lab companding function.
    LabFInv,
    /// Linear → sRGB transfer curve.
    SrgbEncode,
}

const LAB_DELTA: f64 = 6.0 / 29.0;

impl Unary {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Unary::LeakyRelu(s) => if x > 0.0 { x } else { s * x },
            Unary::Relu => x.max(0.0),
            Unary::Sigmoid => 1.0 / (1.0 + (-x).exp()),
            Unary::Tanh => x.tanh(),
            Unary::Abs => x.abs(),
            Unary::Ln => x.ln(),
            Unary::LnClamped(lo, hi) => x.clamp(lo, hi).ln(),
            Unary::Floor(f) => x.max(f),
            Unary::LabFInv => crate::colorspace::lab_f_inv(x),
            Unary::SrgbEncode => crate::colorspace::srgb_encode(x),
        }
    }

    /// `dy/dx` from input `x` and output `y`.
    #[inline]
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Unary::LeakyRelu(s) => if x > 0.0 { 1.0 } else { s },
            Unary::Relu => if x > 0.0 { 1.0 } else { 0.0 },
            Unary::Sigmoid => y * (1.0 - y),
            Unary::Tanh => 1.0 - y * y,
            Unary::Abs => {
                if x > 0.0 {
                    1.0
                } else if x < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
            Unary::Ln => 1.0 / x,
            Unary::LnClamped(lo, hi) => if x > lo && x < hi { 1.0 / x } else { 0.0 },
            Unary::Floor(f) => if x > f { 1.0 } else { 0.0 },
            Unary::LabFInv => {
                if x > LAB_DELTA {
                    3.0 * x * x
                } else {
                    3.0 * LAB_DELTA * LAB_DELTA
                }
            }
            Unary::SrgbEncode => {
                if x <= 0.0031308 {
                    12.92
                } else {
                    1.055 / 2.4 * x.powf(1.0 / 2.4 - 1.0)
                }
            }
        }
    }

    fn name(self) -> &'static str {
        match self {
            Unary::LeakyRelu(_) => "leaky_relu",
            Unary::Relu => "relu",
            Unary::Sigmoid => "sigmoid",
            Unary::Tanh => "tanh",
            Unary::Abs => "abs",
            Unary::Ln => "ln",
            Unary::LnClamped(..) => "ln_clamped",
            Unary::Floor(_) => "floor",
            Unary::LabFInv => "lab_f_inv",
            Unary::SrgbEncode => "srgb_encode",
        }
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Param { set: u64, index: usize },
    Conv { x: Var, w: Var, b: Option<Var>, geom: ConvGeom },
    Unary { x: Var, f: Unary },
    Upsample2 { x: Var },
    Concat { a: Var, b: Var },
    Slice { x: Var, start: usize },
    ChannelMix { x: Var, m: Vec<f64> },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Affine { x: Var, scale: f64 },
    Mean { x: Var },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "input",
            Op::Param { .. } => "parameter",
            Op::Conv { .. } => "conv2d",
            Op::Unary { f, .. } => f.name(),
            Op::Upsample2 { .. } => "upsample2x",
            Op::Concat { .. } => "concat",
            Op::Slice { .. } => "slice",
            Op::ChannelMix { .. } => "channel_mix",
            Op::Add { .. } => "add",
            Op::Sub { .. } => "sub",
            Op::Mul { .. } => "mul",
            Op::Affine { .. } => "affine",
            Op::Mean { .. } => "mean",
        }
    }
}

#[derive(Debug)]
struct Node {
    tensor: Tensor,
    op: Op,
    label: Option<String>,
}

/// A single forward/backward tape.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    backward_done: bool,
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

    fn push(&mut self, shape: Shape, values: Vec<f64>, op: Op) -> Result<Var> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("output {i} of {} (node {})", op.name(), self.nodes.len())));
        }
        self.nodes.push(Node { tensor: Tensor::from_parts(shape, values), op, label: None });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].tensor
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].tensor.shape()
    }

    pub fn grad(&self, v: Var) -> &[f64] {
        self.nodes[v.0].tensor.grad()
    }

    /// Names a node for diagnostics.
    pub fn set_label(&mut self, v: Var, label: impl Into<String>) {
        self.nodes[v.0].label = Some(label.into());
    }

    pub fn input(&mut self, t: Tensor) -> Result<Var> {
        let shape = t.shape();
        self.push(shape, t.into_values(), Op::Leaf)
    }

    pub fn param(&mut self, set: &ParamSet, index: usize) -> Result<Var> {
        let p = set.get(index);
        let v = self.push(p.tensor.shape(), p.tensor.values().to_vec(), Op::Param { set: set.id(), index })?;
        self.nodes[v.0].label = Some(p.name.clone());
        Ok(v)
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let xs = self.shape(x);
        let ws = self.shape(w);
        if ws.c != xs.c || ws.h != ws.w {
            return Err(Error::Shape(format!("conv weight {:?} against input {:?}", ws.dims(), xs.dims())));
        }
        if let Some(b) = b {
            if self.shape(b).len() != ws.n {
                return Err(Error::Shape(format!("conv bias has {} entries for {} outputs", self.shape(b).len(), ws.n)));
            }
        }
        let geom = ConvGeom::new(xs.n, xs.c, xs.h, xs.w, ws.n, ws.h, stride, pad)
            .ok_or_else(|| Error::Shape(format!("kernel {} does not fit input {}x{} with pad {pad}", ws.h, xs.h, xs.w)))?;
        let out = conv::forward(
            self.value(x).values(),
            self.value(w).values(),
            b.map(|b| self.value(b).values()),
            &geom,
        );
        self.push(Shape::new(xs.n, ws.n, geom.oh, geom.ow), out, Op::Conv { x, w, b, geom })
    }

    pub fn unary(&mut self, x: Var, f: Unary) -> Result<Var> {
        let t = self.value(x);
        let out = t.values().iter().map(|&v| f.apply(v)).collect();
        self.push(t.shape(), out, Op::Unary { x, f })
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var> {
        self.unary(x, Unary::LeakyRelu(slope))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Unary::Sigmoid)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Unary::Tanh)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Unary::Relu)
    }

    pub fn abs(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Unary::Abs)
    }

    /// Nearest-neighbour ×2 upsampling.
    pub fn upsample2(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        let (oh, ow) = (2 * s.h, 2 * s.w);
        let src = self.value(x).values();
        let mut out = vec![0.0; s.n * s.c * oh * ow];
        for nc in 0..s.n * s.c {
            let plane = &src[nc * s.plane()..(nc + 1) * s.plane()];
            let dst = &mut out[nc * oh * ow..(nc + 1) * oh * ow];
            for i in 0..oh {
                for j in 0..ow {
                    dst[i * ow + j] = plane[(i / 2) * s.w + j / 2];
                }
            }
        }
        self.push(Shape::new(s.n, s.c, oh, ow), out, Op::Upsample2 { x })
    }

    /// Channel-wise concatenation.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.n != sb.n || sa.h != sb.h || sa.w != sb.w {
            return Err(Error::Shape(format!("concat {:?} with {:?}", sa.dims(), sb.dims())));
        }
        let (va, vb) = (self.value(a).values(), self.value(b).values());
        let mut out = Vec::with_capacity(sa.len() + sb.len());
        for n in 0..sa.n {
            out.extend_from_slice(&va[n * sa.c * sa.plane()..(n + 1) * sa.c * sa.plane()]);
            out.extend_from_slice(&vb[n * sb.c * sb.plane()..(n + 1) * sb.c * sb.plane()]);
        }
        self.push(Shape::new(sa.n, sa.c + sb.c, sa.h, sa.w), out, Op::Concat { a, b })
    }

    /// Channels `start..start + len`.
    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(x);
        if start + len > s.c || len == 0 {
            return Err(Error::Shape(format!("channel slice {start}..{} of {}", start + len, s.c)));
        }
        let src = self.value(x).values();
        let p = s.plane();
        let mut out = Vec::with_capacity(s.n * len * p);
        for n in 0..s.n {
            out.extend_from_slice(&src[(n * s.c + start) * p..(n * s.c + start + len) * p]);
        }
        self.push(Shape::new(s.n, len, s.h, s.w), out, Op::Slice { x, start })
    }

    /// Per-pixel linear map across channels: `out[o] = Σ_c m[o][c]·x[c] + bias[o]`.
    pub fn channel_mix(&mut self, x: Var, m: &[Vec<f64>], bias: &[f64]) -> Result<Var> {
        let s = self.shape(x);
        let cout = m.len();
        if cout == 0 || bias.len() != cout || m.iter().any(|r| r.len() != s.c) {
            return Err(Error::Shape(format!("channel mix {}x? against {} channels", cout, s.c)));
        }
        let flat: Vec<f64> = m.iter().flatten().copied().collect();
        let src = self.value(x).values();
        let p = s.plane();
        let mut out = vec![0.0; s.n * cout * p];
        for n in 0..s.n {
            for o in 0..cout {
                let dst = &mut out[(n * cout + o) * p..(n * cout + o + 1) * p];
                dst.iter_mut().for_each(|d| *d = bias[o]);
                for c in 0..s.c {
                    let k = flat[o * s.c + c];
                    if k == 0.0 {
                        continue;
                    }
                    let plane = &src[(n * s.c + c) * p..(n * s.c + c + 1) * p];
                    dst.iter_mut().zip(plane).for_each(|(d, v)| *d += k * v);
                }
            }
        }
        self.push(Shape::new(s.n, cout, s.h, s.w), out, Op::ChannelMix { x, m: flat })
    }

    fn binary(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::Shape(format!("{} of {:?} and {:?}", op.name(), sa.dims(), sb.dims())));
        }
        let out = self
            .value(a)
            .values()
            .iter()
            .zip(self.value(b).values())
            .map(|(&x, &y)| f(x, y))
            .collect();
        self.push(sa, out, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Add { a, b }, |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Sub { a, b }, |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Mul { a, b }, |x, y| x * y)
    }

    /// `scale · x + shift`.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Result<Var> {
        let t = self.value(x);
        let out = t.values().iter().map(|&v| scale * v + shift).collect();
        self.push(t.shape(), out, Op::Affine { x, scale })
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let m = t.values().iter().sum::<f64>() / t.values().len() as f64;
        self.push(Shape::scalar(), vec![m], Op::Mean { x })
    }

    /// Fills gradients for every node reachable from the scalar `loss`.
    /// A graph can be differentiated once.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::BackwardTwice);
        }
        if self.shape(loss).len() != 1 {
            return Err(Error::Shape(format!("backward needs a scalar loss, got {:?}", self.shape(loss).dims())));
        }
        self.backward_done = true;
        self.nodes[loss.0].tensor.grad_mut()[0] = 1.0;
        for i in (0..=loss.0).rev() {
            let gout = self.nodes[i].tensor.take_grad();
            if gout.iter().all(|&g| g == 0.0) {
                self.nodes[i].tensor.set_grad(gout);
                continue;
            }
            let op = self.nodes[i].op.clone();
            self.propagate(i, &op, &gout);
            self.nodes[i].tensor.set_grad(gout);
            for input in inputs(&op) {
                if self.grad(input).iter().any(|g| !g.is_finite()) {
                    let node = &self.nodes[input.0];
                    let name = node.label.clone().unwrap_or_else(|| node.op.name().to_string());
                    return Err(Error::NonFinite(format!("gradient of {name}")));
                }
            }
        }
        Ok(())
    }

    fn grad_of(&mut self, v: Var) -> &mut [f64] {
        self.nodes[v.0].tensor.grad_mut()
    }

    fn propagate(&mut self, i: usize, op: &Op, gout: &[f64]) {
        match *op {
            Op::Leaf | Op::Param { .. } => {}
            Op::Conv { x, w, b, geom } => {
                // inputs precede node i, so split the tape to borrow them apart
                let (head, _) = self.nodes.split_at_mut(i);
                let xv = head[x.0].tensor.values().to_vec();
                let wv = head[w.0].tensor.values().to_vec();
                let mut dx = vec![0.0; xv.len()];
                let mut dw = vec![0.0; wv.len()];
                let mut db = b.map(|b| vec![0.0; head[b.0].tensor.values().len()]);
                conv::backward(&xv, &wv, gout, &geom, Some(&mut dx), Some(&mut dw), db.as_deref_mut());
                add_into(self.grad_of(x), &dx);
                add_into(self.grad_of(w), &dw);
                if let (Some(b), Some(db)) = (b, db) {
                    add_into(self.grad_of(b), &db);
                }
            }
            Op::Unary { x, f } => {
                let (head, tail) = self.nodes.split_at_mut(i);
                let y = tail[0].tensor.values();
                let (xv, dx) = head[x.0].tensor.split_mut();
                for k in 0..gout.len() {
                    dx[k] += gout[k] * f.derivative(xv[k], y[k]);
                }
            }
            Op::Upsample2 { x } => {
                let s = self.shape(x);
                let (oh, ow) = (2 * s.h, 2 * s.w);
                let dx = self.grad_of(x);
                for nc in 0..s.n * s.c {
                    let go = &gout[nc * oh * ow..(nc + 1) * oh * ow];
                    let d = &mut dx[nc * s.h * s.w..(nc + 1) * s.h * s.w];
                    for ii in 0..oh {
                        for jj in 0..ow {
                            d[(ii / 2) * s.w + jj / 2] += go[ii * ow + jj];
                        }
                    }
                }
            }
            Op::Concat { a, b } => {
                let (sa, sb) = (self.shape(a), self.shape(b));
                let (la, lb) = (sa.c * sa.plane(), sb.c * sb.plane());
                for n in 0..sa.n {
                    let base = n * (la + lb);
                    add_into(&mut self.grad_of(a)[n * la..(n + 1) * la], &gout[base..base + la]);
                    add_into(&mut self.grad_of(b)[n * lb..(n + 1) * lb], &gout[base + la..base + la + lb]);
                }
            }
            Op::Slice { x, start } => {
                let s = self.shape(x);
                let len = self.nodes[i].tensor.shape().c;
                let p = s.plane();
                let dx = self.grad_of(x);
                for n in 0..s.n {
                    add_into(
                        &mut dx[(n * s.c + start) * p..(n * s.c + start + len) * p],
                        &gout[n * len * p..(n + 1) * len * p],
                    );
                }
            }
            Op::ChannelMix { x, ref m } => {
                let s = self.shape(x);
                let cout = self.nodes[i].tensor.shape().c;
                let p = s.plane();
                let dx = self.grad_of(x);
                for n in 0..s.n {
                    for o in 0..cout {
                        let go = &gout[(n * cout + o) * p..(n * cout + o + 1) * p];
                        for c in 0..s.c {
                            let k = m[o * s.c + c];
                            if k == 0.0 {
                                continue;
                            }
                            let d = &mut dx[(n * s.c + c) * p..(n * s.c + c + 1) * p];
                            d.iter_mut().zip(go).for_each(|(d, g)| *d += k * g);
                        }
                    }
                }
            }
            Op::Add { a, b } => {
                add_into(self.grad_of(a), gout);
                add_into(self.grad_of(b), gout);
            }
            Op::Sub { a, b } => {
                add_into(self.grad_of(a), gout);
                self.grad_of(b).iter_mut().zip(gout).for_each(|(d, g)| *d -= g);
            }
            Op::Mul { a, b } => {
                let av = self.value(a).values().to_vec();
                let bv = self.value(b).values().to_vec();
                self.grad_of(a).iter_mut().zip(gout.iter().zip(&bv)).for_each(|(d, (g, y))| *d += g * y);
                self.grad_of(b).iter_mut().zip(gout.iter().zip(&av)).for_each(|(d, (g, x))| *d += g * x);
            }
            Op::Affine { x, scale } => {
                self.grad_of(x).iter_mut().zip(gout).for_each(|(d, g)| *d += scale * g);
            }
            Op::Mean { x } => {
                let dx = self.grad_of(x);
                let k = gout[0] / dx.len() as f64;
                dx.iter_mut().for_each(|d| *d += k);
            }
        }
    }

    /// Adds parameter-node gradients into the matching entries of `set`.
    pub fn accumulate_into(&self, set: &mut ParamSet) {
        for node in &self.nodes {
            if let Op::Param { set: id, index } = node.op {
                if id == set.id() {
                    add_into(set.get_mut(index).tensor.grad_mut(), node.tensor.grad());
                }
            }
        }
    }
}

fn inputs(op: &Op) -> Vec<Var> {
    match *op {
        Op::Leaf | Op::Param { .. } => vec![],
        Op::Conv { x, w, b, .. } => {
            let mut v = vec![x, w];
            v.extend(b);
            v
        }
        Op::Unary { x, .. }
        | Op::Upsample2 { x }
        | Op::Slice { x, .. }
        | Op::ChannelMix { x, .. }
        | Op::Affine { x, .. }
        | Op::Mean { x } => vec![x],
        Op::Concat { a, b } | Op::Add { a, b } | Op::Sub { a, b } | Op::Mul { a, b } => vec![a, b],
    }
}

#[inline]
fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}
