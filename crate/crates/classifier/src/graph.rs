//! A small static computation graph over single-sample `C x H x W` feature
//! maps, with hand-written backward passes.
//!
//! Parameters live in one flat vector; each parametrised node records its
//! offsets. Gradients accumulate with `+=`, so nodes may feed several
//! consumers (dense concatenation, residual shortcuts).

use serde::{Deserialize, Serialize};

use crate::real::{gemm, Mat, Real};

pub type NodeId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shape {
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub fn new(c: usize, h: usize, w: usize) -> Self {
        Self { c, h, w }
    }

    pub fn len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn plane(&self) -> usize {
        self.h * self.w
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Op {
    Input,
    Conv {
        src: NodeId,
        k: usize,
        stride: usize,
        pad: usize,
        w_off: usize,
        b_off: usize,
    },
    Relu(NodeId),
    AvgPool2(NodeId),
    GlobalAvgPool(NodeId),
    Linear {
        src: NodeId,
        w_off: usize,
        b_off: usize,
    },
    Sigmoid(NodeId),
    Concat(NodeId, NodeId),
    Add(NodeId, NodeId),
    /// `x[c, p] * gate[c]`
    ScaleChannels { src: NodeId, gate: NodeId },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub op: Op,
    pub shape: Shape,
}

/// A contiguous block of parameters with its initialisation fan-in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamBlock {
    pub name: String,
    pub offset: usize,
    pub len: usize,
    /// 0 for biases.
    pub fan_in: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    pub nodes: Vec<Node>,
    pub params: Vec<ParamBlock>,
    pub param_len: usize,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: Vec::new(),
            param_len: 0,
        }
    }

    fn push(&mut self, op: Op, shape: Shape) -> NodeId {
        assert!(!shape.is_empty(), "empty feature map for {op:?}");
        self.nodes.push(Node { op, shape });
        self.nodes.len() - 1
    }

    fn alloc(&mut self, name: String, len: usize, fan_in: usize) -> usize {
        let offset = self.param_len;
        self.params.push(ParamBlock {
            name,
            offset,
            len,
            fan_in,
        });
        self.param_len += len;
        offset
    }

    pub fn shape(&self, id: NodeId) -> Shape {
        self.nodes[id].shape
    }

    pub fn output(&self) -> NodeId {
        self.nodes.len() - 1
    }

    pub fn input_shape(&self) -> Shape {
        self.nodes[0].shape
    }

    pub fn input(&mut self, shape: Shape) -> NodeId {
        assert!(self.nodes.is_empty(), "the input must be the first node");
        self.push(Op::Input, shape)
    }

    /// `k x k` convolution with `k / 2` zero padding.
    pub fn conv(&mut self, name: &str, src: NodeId, cout: usize, k: usize, stride: usize) -> NodeId {
        let s = self.shape(src);
        let pad = k / 2;
        let out = Shape::new(cout, (s.h + 2 * pad - k) / stride + 1, (s.w + 2 * pad - k) / stride + 1);
        let fan_in = s.c * k * k;
        let w_off = self.alloc(format!("{name}.weight"), cout * fan_in, fan_in);
        let b_off = self.alloc(format!("{name}.bias"), cout, 0);
        self.push(
            Op::Conv {
                src,
                k,
                stride,
                pad,
                w_off,
                b_off,
            },
            out,
        )
    }

    pub fn relu(&mut self, src: NodeId) -> NodeId {
        let s = self.shape(src);
        self.push(Op::Relu(src), s)
    }

    pub fn avg_pool2(&mut self, src: NodeId) -> NodeId {
        let s = self.shape(src);
        self.push(Op::AvgPool2(src), Shape::new(s.c, s.h / 2, s.w / 2))
    }

    pub fn global_avg_pool(&mut self, src: NodeId) -> NodeId {
        let s = self.shape(src);
        self.push(Op::GlobalAvgPool(src), Shape::new(s.c, 1, 1))
    }

    pub fn linear(&mut self, name: &str, src: NodeId, dout: usize) -> NodeId {
        let din = self.shape(src).len();
        let w_off = self.alloc(format!("{name}.weight"), dout * din, din);
        let b_off = self.alloc(format!("{name}.bias"), dout, 0);
        self.push(Op::Linear { src, w_off, b_off }, Shape::new(dout, 1, 1))
    }

    pub fn sigmoid(&mut self, src: NodeId) -> NodeId {
        let s = self.shape(src);
        self.push(Op::Sigmoid(src), s)
    }

    pub fn concat(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (sa, sb) = (self.shape(a), self.shape(b));
        assert_eq!((sa.h, sa.w), (sb.h, sb.w), "concat needs equal spatial size");
        self.push(Op::Concat(a, b), Shape::new(sa.c + sb.c, sa.h, sa.w))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let sa = self.shape(a);
        assert_eq!(sa, self.shape(b), "add needs equal shapes");
        self.push(Op::Add(a, b), sa)
    }

    pub fn scale_channels(&mut self, src: NodeId, gate: NodeId) -> NodeId {
        let s = self.shape(src);
        assert_eq!(self.shape(gate).len(), s.c, "gate must have one value per channel");
        self.push(Op::ScaleChannels { src, gate }, s)
    }

    /// Evaluate all nodes for one sample.
    pub fn forward<T: Real>(&self, params: &[T], input: &[T]) -> Tape<T> {
        assert_eq!(params.len(), self.param_len, "parameter vector length");
        assert_eq!(input.len(), self.input_shape().len(), "input length");
        let mut acts: Vec<Vec<T>> = Vec::with_capacity(self.nodes.len());
        let mut cols: Vec<Vec<T>> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let out_shape = node.shape;
            let mut col = Vec::new();
            let out = match node.op {
                Op::Input => input.to_vec(),
                Op::Conv {
                    src,
                    k,
                    stride,
                    pad,
                    w_off,
                    b_off,
                } => {
                    let s = self.shape(src);
                    col = im2col(&acts[src], s, k, stride, pad, out_shape);
                    let rows = s.c * k * k;
                    let mut out = vec![T::zero(); out_shape.len()];
                    for (c, chunk) in out.chunks_mut(out_shape.plane()).enumerate() {
                        chunk.fill(params[b_off + c]);
                    }
                    gemm(
                        Mat::new(&params[w_off..w_off + out_shape.c * rows], out_shape.c, rows),
                        Mat::new(&col, rows, out_shape.plane()),
                        T::one(),
                        &mut out,
                    );
                    out
                }
                Op::Relu(src) => acts[src].iter().map(|&v| v.max(T::zero())).collect(),
                Op::AvgPool2(src) => avg_pool2(&acts[src], self.shape(src)),
                Op::GlobalAvgPool(src) => {
                    let s = self.shape(src);
                    let n = T::from_usize(s.plane()).unwrap();
                    acts[src]
                        .chunks(s.plane())
                        .map(|p| p.iter().copied().sum::<T>() / n)
                        .collect()
                }
                Op::Linear { src, w_off, b_off } => {
                    let din = self.shape(src).len();
                    let dout = out_shape.c;
                    let mut out = params[b_off..b_off + dout].to_vec();
                    gemm(
                        Mat::new(&params[w_off..w_off + dout * din], dout, din),
                        Mat::new(&acts[src], din, 1),
                        T::one(),
                        &mut out,
                    );
                    out
                }
                Op::Sigmoid(src) => acts[src].iter().map(|&v| sigmoid(v)).collect(),
                Op::Concat(a, b) => {
                    let mut out = acts[a].clone();
                    out.extend_from_slice(&acts[b]);
                    out
                }
                Op::Add(a, b) => acts[a].iter().zip(&acts[b]).map(|(&x, &y)| x + y).collect(),
                Op::ScaleChannels { src, gate } => {
                    let p = self.shape(src).plane();
                    let g = &acts[gate];
                    acts[src]
                        .chunks(p)
                        .enumerate()
                        .flat_map(|(c, chunk)| chunk.iter().map(move |&v| v * g[c]))
                        .collect()
                }
            };
            debug_assert_eq!(out.len(), out_shape.len());
            acts.push(out);
            cols.push(col);
        }
        Tape {
            acts,
            cols,
            input_grad: false,
        }
    }

    /// Back-propagate `grad_out` (gradient w.r.t. the output node) through the
    /// tape. Parameter gradients are added into `grad_params`; the returned
    /// vector holds the gradient w.r.t. every node's activation (empty where
    /// no gradient flows).
    pub fn backward<T: Real>(&self, params: &[T], tape: &Tape<T>, grad_out: &[T], grad_params: &mut [T]) -> Vec<Vec<T>> {
        assert_eq!(grad_params.len(), self.param_len);
        let n = self.nodes.len();
        assert_eq!(grad_out.len(), self.nodes[n - 1].shape.len());
        let mut grads: Vec<Vec<T>> = vec![Vec::new(); n];
        grads[n - 1] = grad_out.to_vec();
        for id in (0..n).rev() {
            if grads[id].is_empty() {
                continue;
            }
            let dy = std::mem::take(&mut grads[id]);
            let shape = self.nodes[id].shape;
            match self.nodes[id].op {
                Op::Input => {}
                Op::Conv {
                    src,
                    k,
                    stride,
                    pad,
                    w_off,
                    b_off,
                } => {
                    let s = self.shape(src);
                    let rows = s.c * k * k;
                    let plane = shape.plane();
                    let col = &tape.cols[id];
                    for (c, chunk) in dy.chunks(plane).enumerate() {
                        grad_params[b_off + c] += chunk.iter().copied().sum::<T>();
                    }
                    gemm(
                        Mat::new(&dy, shape.c, plane),
                        Mat::t(col, rows, plane),
                        T::one(),
                        &mut grad_params[w_off..w_off + shape.c * rows],
                    );
                    if src != 0 || tape.input_grad {
                        let mut dcol = vec![T::zero(); rows * plane];
                        gemm(
                            Mat::t(&params[w_off..w_off + shape.c * rows], shape.c, rows),
                            Mat::new(&dy, shape.c, plane),
                            T::zero(),
                            &mut dcol,
                        );
                        col2im_add(&dcol, s, k, stride, pad, shape, grad_of(&mut grads, src, s));
                    }
                }
                Op::Relu(src) => {
                    let x = &tape.acts[src];
                    let g = grad_of(&mut grads, src, shape);
                    for ((g, &d), &x) in g.iter_mut().zip(&dy).zip(x) {
                        if x > T::zero() {
                            *g += d;
                        }
                    }
                }
                Op::AvgPool2(src) => {
                    let s = self.shape(src);
                    avg_pool2_backward(&dy, s, shape, grad_of(&mut grads, src, s));
                }
                Op::GlobalAvgPool(src) => {
                    let s = self.shape(src);
                    let inv = T::one() / T::from_usize(s.plane()).unwrap();
                    let g = grad_of(&mut grads, src, s);
                    for (c, chunk) in g.chunks_mut(s.plane()).enumerate() {
                        let v = dy[c] * inv;
                        chunk.iter_mut().for_each(|x| *x += v);
                    }
                }
                Op::Linear { src, w_off, b_off } => {
                    let s = self.shape(src);
                    let din = s.len();
                    let dout = shape.c;
                    for (o, &d) in dy.iter().enumerate() {
                        grad_params[b_off + o] += d;
                    }
                    gemm(
                        Mat::new(&dy, dout, 1),
                        Mat::new(&tape.acts[src], 1, din),
                        T::one(),
                        &mut grad_params[w_off..w_off + dout * din],
                    );
                    let g = grad_of(&mut grads, src, s);
                    gemm(
                        Mat::t(&params[w_off..w_off + dout * din], dout, din),
                        Mat::new(&dy, dout, 1),
                        T::one(),
                        g,
                    );
                }
                Op::Sigmoid(src) => {
                    let y = &tape.acts[id];
                    let g = grad_of(&mut grads, src, shape);
                    for ((g, &d), &y) in g.iter_mut().zip(&dy).zip(y) {
                        *g += d * y * (T::one() - y);
                    }
                }
                Op::Concat(a, b) => {
                    let (sa, sb) = (self.shape(a), self.shape(b));
                    for (g, &d) in grad_of(&mut grads, a, sa).iter_mut().zip(&dy[..sa.len()]) {
                        *g += d;
                    }
                    for (g, &d) in grad_of(&mut grads, b, sb).iter_mut().zip(&dy[sa.len()..]) {
                        *g += d;
                    }
                }
                Op::Add(a, b) => {
                    for src in [a, b] {
                        for (g, &d) in grad_of(&mut grads, src, shape).iter_mut().zip(&dy) {
                            *g += d;
                        }
                    }
                }
                Op::ScaleChannels { src, gate } => {
                    let p = shape.plane();
                    let x = &tape.acts[src];
                    let gv = &tape.acts[gate];
                    {
                        let gx = grad_of(&mut grads, src, shape);
                        for (i, (g, &d)) in gx.iter_mut().zip(&dy).enumerate() {
                            *g += d * gv[i / p];
                        }
                    }
                    let gs = self.shape(gate);
                    let gg = grad_of(&mut grads, gate, gs);
                    for c in 0..shape.c {
                        let mut acc = T::zero();
                        for i in c * p..(c + 1) * p {
                            acc += dy[i] * x[i];
                        }
                        gg[c] += acc;
                    }
                }
            }
            grads[id] = dy;
        }
        grads
    }
}

fn grad_of<'a, T: Real>(grads: &'a mut [Vec<T>], id: NodeId, shape: Shape) -> &'a mut [T] {
    if grads[id].is_empty() {
        grads[id] = vec![T::zero(); shape.len()];
    }
    &mut grads[id]
}

/// Activations (and convolution column buffers) of one forward pass.
#[derive(Debug, Clone)]
pub struct Tape<T> {
    pub acts: Vec<Vec<T>>,
    cols: Vec<Vec<T>>,
    /// Also propagate into the input node. Off by default, which lets the
    /// first convolution skip its `col2im` pass during training.
    pub input_grad: bool,
}

impl<T: Real> Tape<T> {
    pub fn output(&self) -> &[T] {
        self.acts.last().expect("graph has nodes")
    }

    pub fn with_input_grad(mut self) -> Self {
        self.input_grad = true;
        self
    }
}

pub fn sigmoid<T: Real>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

fn im2col<T: Real>(x: &[T], s: Shape, k: usize, stride: usize, pad: usize, out: Shape) -> Vec<T> {
    let plane = out.plane();
    let mut col = vec![T::zero(); s.c * k * k * plane];
    for c in 0..s.c {
        let xc = &x[c * s.plane()..(c + 1) * s.plane()];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let dst = &mut col[row * plane..(row + 1) * plane];
                for oy in 0..out.h {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= s.h as isize {
                        continue;
                    }
                    let src_row = &xc[iy as usize * s.w..(iy as usize + 1) * s.w];
                    let dst_row = &mut dst[oy * out.w..(oy + 1) * out.w];
                    for (ox, d) in dst_row.iter_mut().enumerate() {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix >= 0 && ix < s.w as isize {
                            *d = src_row[ix as usize];
                        }
                    }
                }
            }
        }
    }
    col
}

fn col2im_add<T: Real>(col: &[T], s: Shape, k: usize, stride: usize, pad: usize, out: Shape, dx: &mut [T]) {
    let plane = out.plane();
    for c in 0..s.c {
        let xc = &mut dx[c * s.plane()..(c + 1) * s.plane()];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let src = &col[row * plane..(row + 1) * plane];
                for oy in 0..out.h {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= s.h as isize {
                        continue;
                    }
                    let dst_row = &mut xc[iy as usize * s.w..(iy as usize + 1) * s.w];
                    for ox in 0..out.w {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix >= 0 && ix < s.w as isize {
                            dst_row[ix as usize] += src[oy * out.w + ox];
                        }
                    }
                }
            }
        }
    }
}

fn avg_pool2<T: Real>(x: &[T], s: Shape) -> Vec<T> {
    let (oh, ow) = (s.h / 2, s.w / 2);
    let quarter = T::lit(0.25);
    let mut out = Vec::with_capacity(s.c * oh * ow);
    for c in 0..s.c {
        let xc = &x[c * s.plane()..(c + 1) * s.plane()];
        for oy in 0..oh {
            let r0 = &xc[2 * oy * s.w..];
            let r1 = &xc[(2 * oy + 1) * s.w..];
            for ox in 0..ow {
                out.push((r0[2 * ox] + r0[2 * ox + 1] + r1[2 * ox] + r1[2 * ox + 1]) * quarter);
            }
        }
    }
    out
}

fn avg_pool2_backward<T: Real>(dy: &[T], s: Shape, out: Shape, dx: &mut [T]) {
    let quarter = T::lit(0.25);
    for c in 0..s.c {
        for oy in 0..out.h {
            for ox in 0..out.w {
                let g = dy[(c * out.h + oy) * out.w + ox] * quarter;
                for (dy_, dx_) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                    dx[c * s.plane() + (2 * oy + dy_) * s.w + 2 * ox + dx_] += g;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_matches_direct_sum() {
        let mut g = Graph::new();
        let x = g.input(Shape::new(2, 5, 4));
        let y = g.conv("c", x, 3, 3, 2);
        assert_eq!(g.shape(y), Shape::new(3, 3, 2));
        let params: Vec<f64> = (0..g.param_len).map(|i| ((i * 7) % 11) as f64 / 10.0 - 0.5).collect();
        let input: Vec<f64> = (0..40).map(|i| ((i * 5) % 13) as f64 / 13.0).collect();
        let tape = g.forward(&params, &input);
        let out = tape.output();
        for co in 0..3 {
            for oy in 0..3 {
                for ox in 0..2 {
                    let mut acc = params[3 * 18 + co];
                    for ci in 0..2 {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let iy = (oy * 2 + ky) as i64 - 1;
                                let ix = (ox * 2 + kx) as i64 - 1;
                                if iy >= 0 && iy < 5 && ix >= 0 && ix < 4 {
                                    acc += params[co * 18 + ci * 9 + ky * 3 + kx]
                                        * input[ci * 20 + iy as usize * 4 + ix as usize];
                                }
                            }
                        }
                    }
                    assert!((out[co * 6 + oy * 2 + ox] - acc).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn pooling_and_concat_shapes() {
        let mut g = Graph::new();
        let x = g.input(Shape::new(2, 4, 6));
        let p = g.avg_pool2(x);
        let c = g.concat(p, p);
        let gap = g.global_avg_pool(c);
        assert_eq!(g.shape(p), Shape::new(2, 2, 3));
        assert_eq!(g.shape(c), Shape::new(4, 2, 3));
        let input: Vec<f32> = (0..48).map(|i| i as f32).collect();
        let tape = g.forward::<f32>(&[], &input);
        assert_eq!(tape.acts[p][0], (0.0 + 1.0 + 6.0 + 7.0) / 4.0);
        assert_eq!(tape.acts[gap].len(), 4);
        assert_eq!(tape.acts[gap][0], tape.acts[gap][2]);
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(0.0f64), 0.5);
        assert!(sigmoid(-800.0f64) >= 0.0);
        assert_eq!(sigmoid(800.0f64), 1.0);
    }
}
