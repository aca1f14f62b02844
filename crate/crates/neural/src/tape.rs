//! Gradient tape: every forward op appends a node that keeps what its
//! backward rule needs, and [`Tape::backward`] walks the nodes in reverse.

use rand::Rng;

use crate::error::{arg_err, shape_err, Result};
use crate::kernels::{adaptive_bounds, conv_backward, conv_forward, ConvGeometry};
use crate::scalar::{gemm, Scalar};
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    Conv2d { input: Var, weight: Var, bias: Var, geometry: ConvGeometry },
    Relu(Var),
    Sigmoid(Var),
    MaxPool2 { input: Var, argmax: Vec<u32> },
    AdaptiveAvgPool { input: Var },
    GlobalAvgPool(Var),
    GlobalMaxPool { input: Var, argmax: Vec<u32> },
    ChannelMean(Var),
    ChannelMax { input: Var, argmax: Vec<u32> },
    ConcatChannels(Vec<Var>),
    Linear { input: Var, weight: Var, bias: Var },
    Dropout { input: Var, scale: Vec<T> },
    Mul(Var, Var),
    Add(Var, Var),
    Reshape(Var),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Leaf gradients produced by [`Tape::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    visited: usize,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, var: Var) -> Option<&Tensor<T>> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }

    /// Number of non-leaf nodes whose backward rule ran.
    pub fn ops_visited(&self) -> usize {
        self.visited
    }
}

#[derive(Default)]
pub struct Tape<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a constant input (no gradient is produced for it).
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, needs_grad: false });
        Var(self.nodes.len() - 1)
    }

    /// Records a trainable leaf whose gradient [`Tape::backward`] returns.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, needs_grad: true });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, var: Var) -> &Tensor<T> {
        &self.nodes[var.0].value
    }

    fn needs(&self, var: Var) -> bool {
        self.nodes[var.0].needs_grad
    }

    fn push(&mut self, op_name: &'static str, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Result<Var> {
        value.ensure_finite(op_name)?;
        let needs_grad = inputs.iter().any(|&v| self.needs(v));
        self.nodes.push(Node { value, op, needs_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Cross-correlation of `input [N,C,H,W]` with `weight [K,C,k,k]` plus `bias [K]`.
    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var, padding: usize, stride: usize) -> Result<Var> {
        const OP: &str = "conv2d";
        let [n, c, h, w] = self.value(input).dims4(OP)?;
        let [k, wc, kh, kw] = self.value(weight).dims4(OP)?;
        if wc != c {
            return shape_err(OP, format!("input has {c} channels, weight expects {wc}"));
        }
        if kh != kw || !matches!(kh, 1 | 3 | 5 | 7) {
            return shape_err(OP, format!("unsupported kernel {kh}x{kw}"));
        }
        if self.value(bias).dims() != [k] {
            return shape_err(OP, format!("bias dims {:?}, expected [{k}]", self.value(bias).dims()));
        }
        if stride == 0 {
            return arg_err(OP, "stride must be positive");
        }
        let (ph, pw) = (h + 2 * padding, w + 2 * padding);
        if ph < kh || pw < kw || (ph - kh) % stride != 0 || (pw - kw) % stride != 0 {
            return shape_err(OP, format!("{h}x{w} input with padding {padding} and stride {stride} does not tile a {kh}x{kw} kernel"));
        }
        let geometry = ConvGeometry {
            channels: c,
            height: h,
            width: w,
            kernel: kh,
            padding,
            stride,
            out_height: (ph - kh) / stride + 1,
            out_width: (pw - kw) / stride + 1,
        };
        let mut out = vec![T::zero(); n * k * geometry.out_len()];
        conv_forward(
            &geometry,
            n,
            k,
            self.value(input).data(),
            self.value(weight).data(),
            self.value(bias).data(),
            &mut out,
        );
        let value = Tensor::new([n, k, geometry.out_height, geometry.out_width], out)?;
        self.push(OP, value, Op::Conv2d { input, weight, bias, geometry }, &[input, weight, bias])
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x).map(|v| if v > T::zero() { v } else { T::zero() });
        self.push("relu", value, Op::Relu(x), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x).map(|v| T::one() / (T::one() + (-v).exp()));
        self.push("sigmoid", value, Op::Sigmoid(x), &[x])
    }

    /// 2×2 max pooling with stride 2. Backward routes to the first maximum.
    pub fn maxpool2(&mut self, x: Var) -> Result<Var> {
        const OP: &str = "maxpool2";
        let [n, c, h, w] = self.value(x).dims4(OP)?;
        if h % 2 != 0 || w % 2 != 0 {
            return shape_err(OP, format!("spatial dims {h}x{w} must be even"));
        }
        let (oh, ow) = (h / 2, w / 2);
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(n * c * oh * ow);
        let mut argmax = Vec::with_capacity(n * c * oh * ow);
        for plane in 0..n * c {
            let base = plane * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = base + 2 * oy * w + 2 * ox;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                        if src[idx] > src[best] {
                            best = idx;
                        }
                    }
                    out.push(src[best]);
                    argmax.push(best as u32);
                }
            }
        }
        let value = Tensor::new([n, c, oh, ow], out)?;
        self.push(OP, value, Op::MaxPool2 { input: x, argmax }, &[x])
    }

    /// Averages each cell of an `out×out` partition of the spatial plane.
    pub fn adaptive_avg_pool(&mut self, x: Var, out: usize) -> Result<Var> {
        const OP: &str = "adaptive_avg_pool";
        let [n, c, h, w] = self.value(x).dims4(OP)?;
        if out == 0 {
            return arg_err(OP, "output size must be positive");
        }
        let src = self.value(x).data();
        let mut dst = Vec::with_capacity(n * c * out * out);
        for plane in 0..n * c {
            let base = plane * h * w;
            for oy in 0..out {
                let (y0, y1) = adaptive_bounds(oy, h, out);
                for ox in 0..out {
                    let (x0, x1) = adaptive_bounds(ox, w, out);
                    let mut sum = T::zero();
                    for yy in y0..y1 {
                        for xx in x0..x1 {
                            sum += src[base + yy * w + xx];
                        }
                    }
                    dst.push(sum / T::of(((y1 - y0) * (x1 - x0)) as f64));
                }
            }
        }
        let value = Tensor::new([n, c, out, out], dst)?;
        self.push(OP, value, Op::AdaptiveAvgPool { input: x }, &[x])
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        const OP: &str = "global_avg_pool";
        let [n, c, h, w] = self.value(x).dims4(OP)?;
        let area = T::of((h * w) as f64);
        let out = self.value(x).data().chunks_exact(h * w).map(|p| p.iter().copied().sum::<T>() / area).collect();
        let value = Tensor::new([n, c, 1, 1], out)?;
        self.push(OP, value, Op::GlobalAvgPool(x), &[x])
    }

    pub fn global_max_pool(&mut self, x: Var) -> Result<Var> {
        const OP: &str = "global_max_pool";
        let [n, c, h, w] = self.value(x).dims4(OP)?;
        let mut out = Vec::with_capacity(n * c);
        let mut argmax = Vec::with_capacity(n * c);
        for (plane, p) in self.value(x).data().chunks_exact(h * w).enumerate() {
            let mut best = 0;
            for (i, &v) in p.iter().enumerate() {
                if v > p[best] {
                    best = i;
                }
            }
            out.push(p[best]);
            argmax.push((plane * h * w + best) as u32);
        }
        let value = Tensor::new([n, c, 1, 1], out)?;
        self.push(OP, value, Op::GlobalMaxPool { input: x, argmax }, &[x])
    }

    /// Mean across channels: `[N,C,H,W] -> [N,1,H,W]`.
    pub fn channel_mean(&mut self, x: Var) -> Result<Var> {
        const OP: &str = "channel_mean";
        let [n, c, h, w] = self.value(x).dims4(OP)?;
        let src = self.value(x).data();
        let hw = h * w;
        let inv = T::one() / T::of(c as f64);
        let mut out = vec![T::zero(); n * hw];
        for b in 0..n {
            let dst = &mut out[b * hw..(b + 1) * hw];
            for ch in 0..c {
                let plane = &src[(b * c + ch) * hw..(b * c + ch + 1) * hw];
                dst.iter_mut().zip(plane).for_each(|(d, &s)| *d += s);
            }
            dst.iter_mut().for_each(|d| *d *= inv);
        }
        let value = Tensor::new([n, 1, h, w], out)?;
        self.push(OP, value, Op::ChannelMean(x), &[x])
    }

    /// Max across channels: `[N,C,H,W] -> [N,1,H,W]`, first channel wins ties.
    pub fn channel_max(&mut self, x: Var) -> Result<Var> {
        const OP: &str = "channel_max";
        let [n, c, h, w] = self.value(x).dims4(OP)?;
        let src = self.value(x).data();
        let hw = h * w;
        let mut out = Vec::with_capacity(n * hw);
        let mut argmax = Vec::with_capacity(n * hw);
        for b in 0..n {
            for i in 0..hw {
                let mut best = b * c * hw + i;
                for ch in 1..c {
                    let idx = (b * c + ch) * hw + i;
                    if src[idx] > src[best] {
                        best = idx;
                    }
                }
                out.push(src[best]);
                argmax.push(best as u32);
            }
        }
        let value = Tensor::new([n, 1, h, w], out)?;
        self.push(OP, value, Op::ChannelMax { input: x, argmax }, &[x])
    }

    /// Concatenates rank-4 tensors along the channel axis.
    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        const OP: &str = "concat_channels";
        if parts.is_empty() {
            return arg_err(OP, "nothing to concatenate");
        }
        let [n, _, h, w] = self.value(parts[0]).dims4(OP)?;
        let mut total = 0;
        for &p in parts {
            let [pn, pc, ph, pw] = self.value(p).dims4(OP)?;
            if (pn, ph, pw) != (n, h, w) {
                return shape_err(OP, format!("part dims {:?} incompatible", self.value(p).dims()));
            }
            total += pc;
        }
        let mut out = Vec::with_capacity(n * total * h * w);
        for b in 0..n {
            for &p in parts {
                let t = self.value(p);
                let per = t.dims()[1] * h * w;
                out.extend_from_slice(&t.data()[b * per..(b + 1) * per]);
            }
        }
        let value = Tensor::new([n, total, h, w], out)?;
        self.push(OP, value, Op::ConcatChannels(parts.to_vec()), parts)
    }

    /// `x [N,D] · weight [D,O] + bias [O]`.
    pub fn linear(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var> {
        const OP: &str = "linear";
        let [n, d] = self.value(x).dims2(OP)?;
        let [wd, o] = self.value(weight).dims2(OP)?;
        if wd != d {
            return shape_err(OP, format!("input width {d} but weight is {wd}x{o}"));
        }
        if self.value(bias).dims() != [o] {
            return shape_err(OP, format!("bias dims {:?}, expected [{o}]", self.value(bias).dims()));
        }
        let mut out = vec![T::zero(); n * o];
        gemm(false, false, n, d, o, self.value(x).data(), self.value(weight).data(), &mut out, false);
        let b = self.value(bias).data();
        for row in out.chunks_exact_mut(o) {
            row.iter_mut().zip(b).for_each(|(v, &bb)| *v += bb);
        }
        let value = Tensor::new([n, o], out)?;
        self.push(OP, value, Op::Linear { input: x, weight, bias }, &[x, weight, bias])
    }

    /// Inverted dropout: in training each element is zeroed with probability
    /// `p` and survivors are scaled by `1/(1-p)`; otherwise the identity.
    pub fn dropout(&mut self, x: Var, p: f64, training: bool, rng: &mut impl Rng) -> Result<Var> {
        const OP: &str = "dropout";
        if !(0.0..1.0).contains(&p) {
            return arg_err(OP, format!("probability {p} outside [0, 1)"));
        }
        let len = self.value(x).len();
        let scale: Vec<T> = if training && p > 0.0 {
            let keep = T::of(1.0 / (1.0 - p));
            (0..len).map(|_| if rng.gen::<f64>() < p { T::zero() } else { keep }).collect()
        } else {
            vec![T::one(); len]
        };
        let src = self.value(x);
        let data = src.data().iter().zip(&scale).map(|(&v, &s)| v * s).collect();
        let value = Tensor::new(src.dims().to_vec(), data)?;
        self.push(OP, value, Op::Dropout { input: x, scale }, &[x])
    }

    /// Elementwise product where `b` broadcasts against `a` (each axis of `b`
    /// is either 1 or equal to the matching axis of `a`).
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        const OP: &str = "mul";
        let (ad, bd) = (self.value(a).dims(), self.value(b).dims());
        if ad.len() != bd.len() || ad.iter().zip(bd).any(|(&x, &y)| y != 1 && y != x) {
            return shape_err(OP, format!("{bd:?} does not broadcast to {ad:?}"));
        }
        let strides = broadcast_strides(ad, bd);
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let mut out = Vec::with_capacity(av.len());
        for_each_broadcast(ad, &strides, |i, j| out.push(av[i] * bv[j]));
        let value = Tensor::new(ad.to_vec(), out)?;
        self.push(OP, value, Op::Mul(a, b), &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        const OP: &str = "add";
        if !self.value(a).same_shape(self.value(b)) {
            return shape_err(OP, format!("{:?} vs {:?}", self.value(a).dims(), self.value(b).dims()));
        }
        let mut value = self.value(a).clone();
        value.add_assign(self.value(b));
        self.push(OP, value, Op::Add(a, b), &[a, b])
    }

    pub fn reshape(&mut self, x: Var, dims: impl Into<Vec<usize>>) -> Result<Var> {
        let value = self.value(x).clone().reshape(dims)?;
        self.push("reshape", value, Op::Reshape(x), &[x])
    }

    /// Reverse sweep from `root`, seeded with `d(objective)/d(root)`.
    ///
    /// Each recorded op is visited once, newest first; gradients flowing into
    /// the same value from several consumers are summed.
    pub fn backward(&self, root: Var, seed: Tensor<T>) -> Result<Gradients<T>> {
        if !self.value(root).same_shape(&seed) {
            return shape_err(
                "backward",
                format!("seed dims {:?} vs root dims {:?}", seed.dims(), self.value(root).dims()),
            );
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut visited = 0;
        if !self.needs(root) {
            return Ok(Gradients { grads, visited });
        }
        grads[root.0] = Some(seed);
        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(dy) = grads[idx].take() else { continue };
            visited += 1;
            self.backward_node(node, &dy, &mut grads)?;
        }
        Ok(Gradients { grads, visited })
    }

    fn backward_node(&self, node: &Node<T>, dy: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let mut accumulate = |var: Var, g: Tensor<T>| match &mut grads[var.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        };
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { input, weight, bias, geometry } => {
                let (x, w) = (self.value(*input), self.value(*weight));
                let (n, k) = (x.dims()[0], w.dims()[0]);
                let mut dx = self.needs(*input).then(|| Tensor::zeros(x.dims().to_vec()));
                let mut dw = self.needs(*weight).then(|| Tensor::zeros(w.dims().to_vec()));
                let mut db = self.needs(*bias).then(|| Tensor::zeros([k]));
                conv_backward(
                    geometry,
                    n,
                    k,
                    x.data(),
                    w.data(),
                    dy.data(),
                    dx.as_mut().map(|t| t.data_mut()),
                    dw.as_mut().map(|t| t.data_mut()),
                    db.as_mut().map(|t| t.data_mut()),
                );
                for (var, g) in [(*input, dx), (*weight, dw), (*bias, db)] {
                    if let Some(g) = g {
                        accumulate(var, g);
                    }
                }
            }
            Op::Relu(x) => {
                if self.needs(*x) {
                    let xv = self.value(*x).data();
                    let data = dy.data().iter().zip(xv).map(|(&g, &v)| if v > T::zero() { g } else { T::zero() });
                    accumulate(*x, Tensor::new(dy.dims().to_vec(), data.collect())?);
                }
            }
            Op::Sigmoid(x) => {
                if self.needs(*x) {
                    let s = node.value.data();
                    let data = dy.data().iter().zip(s).map(|(&g, &sv)| g * sv * (T::one() - sv));
                    accumulate(*x, Tensor::new(dy.dims().to_vec(), data.collect())?);
                }
            }
            Op::MaxPool2 { input, argmax } | Op::GlobalMaxPool { input, argmax } | Op::ChannelMax { input, argmax } => {
                if self.needs(*input) {
                    let mut g = Tensor::zeros(self.value(*input).dims().to_vec());
                    let gd = g.data_mut();
                    for (&src, &d) in argmax.iter().zip(dy.data()) {
                        gd[src as usize] += d;
                    }
                    accumulate(*input, g);
                }
            }
            Op::AdaptiveAvgPool { input } => {
                if self.needs(*input) {
                    let dims = self.value(*input).dims().to_vec();
                    let (h, w) = (dims[2], dims[3]);
                    let out = node.value.dims()[2];
                    let mut g = Tensor::zeros(dims);
                    let gd = g.data_mut();
                    for (plane, dplane) in dy.data().chunks_exact(out * out).enumerate() {
                        let base = plane * h * w;
                        for oy in 0..out {
                            let (y0, y1) = adaptive_bounds(oy, h, out);
                            for ox in 0..out {
                                let (x0, x1) = adaptive_bounds(ox, w, out);
                                let share = dplane[oy * out + ox] / T::of(((y1 - y0) * (x1 - x0)) as f64);
                                for yy in y0..y1 {
                                    for xx in x0..x1 {
                                        gd[base + yy * w + xx] += share;
                                    }
                                }
                            }
                        }
                    }
                    accumulate(*input, g);
                }
            }
            Op::GlobalAvgPool(x) => {
                if self.needs(*x) {
                    let dims = self.value(*x).dims().to_vec();
                    let hw = dims[2] * dims[3];
                    let area = T::of(hw as f64);
                    let mut g = Tensor::zeros(dims);
                    for (plane, &d) in g.data_mut().chunks_exact_mut(hw).zip(dy.data()) {
                        plane.iter_mut().for_each(|v| *v = d / area);
                    }
                    accumulate(*x, g);
                }
            }
            Op::ChannelMean(x) => {
                if self.needs(*x) {
                    let dims = self.value(*x).dims().to_vec();
                    let (c, hw) = (dims[1], dims[2] * dims[3]);
                    let inv = T::one() / T::of(c as f64);
                    let mut g = Tensor::zeros(dims);
                    for (b, chunk) in g.data_mut().chunks_exact_mut(c * hw).enumerate() {
                        let src = &dy.data()[b * hw..(b + 1) * hw];
                        for plane in chunk.chunks_exact_mut(hw) {
                            plane.iter_mut().zip(src).for_each(|(v, &d)| *v = d * inv);
                        }
                    }
                    accumulate(*x, g);
                }
            }
            Op::ConcatChannels(parts) => {
                let [n, total, h, w] = dy.dims4("concat_channels")?;
                let mut offset = 0;
                for &p in parts {
                    let pc = self.value(p).dims()[1];
                    if self.needs(p) {
                        let mut data = Vec::with_capacity(n * pc * h * w);
                        for b in 0..n {
                            let start = (b * total + offset) * h * w;
                            data.extend_from_slice(&dy.data()[start..start + pc * h * w]);
                        }
                        accumulate(p, Tensor::new([n, pc, h, w], data)?);
                    }
                    offset += pc;
                }
            }
            Op::Linear { input, weight, bias } => {
                let (x, w) = (self.value(*input), self.value(*weight));
                let ([n, d], o) = (x.dims2("linear")?, w.dims()[1]);
                if self.needs(*input) {
                    let mut g = Tensor::zeros([n, d]);
                    gemm(false, true, n, o, d, dy.data(), w.data(), g.data_mut(), false);
                    accumulate(*input, g);
                }
                if self.needs(*weight) {
                    let mut g = Tensor::zeros([d, o]);
                    gemm(true, false, d, n, o, x.data(), dy.data(), g.data_mut(), false);
                    accumulate(*weight, g);
                }
                if self.needs(*bias) {
                    let mut g = Tensor::zeros([o]);
                    for row in dy.data().chunks_exact(o) {
                        g.data_mut().iter_mut().zip(row).for_each(|(a, &b)| *a += b);
                    }
                    accumulate(*bias, g);
                }
            }
            Op::Dropout { input, scale } => {
                if self.needs(*input) {
                    let data = dy.data().iter().zip(scale).map(|(&g, &s)| g * s).collect();
                    accumulate(*input, Tensor::new(dy.dims().to_vec(), data)?);
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let strides = broadcast_strides(av.dims(), bv.dims());
                if self.needs(*a) {
                    let mut g = Vec::with_capacity(av.len());
                    let (bd, d) = (bv.data(), dy.data());
                    let mut k = 0;
                    for_each_broadcast(av.dims(), &strides, |_, j| {
                        g.push(d[k] * bd[j]);
                        k += 1;
                    });
                    accumulate(*a, Tensor::new(av.dims().to_vec(), g)?);
                }
                if self.needs(*b) {
                    let mut g = Tensor::zeros(bv.dims().to_vec());
                    let gd = g.data_mut();
                    let (ad, d) = (av.data(), dy.data());
                    for_each_broadcast(av.dims(), &strides, |i, j| gd[j] += d[i] * ad[i]);
                    accumulate(*b, g);
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if self.needs(v) {
                        accumulate(v, dy.clone());
                    }
                }
            }
            Op::Reshape(x) => {
                if self.needs(*x) {
                    accumulate(*x, dy.clone().reshape(self.value(*x).dims().to_vec())?);
                }
            }
        }
        Ok(())
    }
}

/// Row-major strides of `small` with zero stride on broadcast axes.
fn broadcast_strides(full: &[usize], small: &[usize]) -> Vec<usize> {
    let mut strides = vec![0; full.len()];
    let mut acc = 1;
    for axis in (0..small.len()).rev() {
        if small[axis] != 1 {
            strides[axis] = acc;
        }
        acc *= small[axis];
    }
    strides
}

/// Visits every flat index of `full` in row-major order together with the
/// matching flat index of the broadcast operand.
fn for_each_broadcast(full: &[usize], strides: &[usize], mut f: impl FnMut(usize, usize)) {
    let rank = full.len();
    let total: usize = full.iter().product();
    let inner = full[rank - 1];
    let inner_stride = strides[rank - 1];
    let mut index = vec![0usize; rank];
    let mut i = 0;
    while i < total {
        let base: usize = index[..rank - 1].iter().zip(strides).map(|(a, b)| a * b).sum();
        for x in 0..inner {
            f(i + x, base + x * inner_stride);
        }
        i += inner;
        for axis in (0..rank - 1).rev() {
            index[axis] += 1;
            if index[axis] < full[axis] {
                break;
            }
            index[axis] = 0;
        }
    }
}
