//! A small reverse-mode engine over the handful of ops the network needs.
//!
//! Nodes are appended in topological order, so [`Graph::forward`] is a single
//! sweep and [`Graph::backward`] the reverse sweep. Values are only computed by
//! `forward`; asking for gradients first is an error.

use crate::conv::{conv2d_kernel_grad, conv2d_transposed, conv2d_valid, valid_output_len, KernelsRef};
use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::{pad_reflect_adjoint, pad_reflect_with, Padding, Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

/// Kernel layout for conv ops whose weights live in another node.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub out_ch: usize,
    pub in_ch: usize,
    pub size: usize,
    pub stride: usize,
}

#[derive(Clone, Debug)]
pub enum Op {
    /// Leaf. `requires_grad` decides whether a gradient is accumulated.
    Leaf { requires_grad: bool },
    /// Reflect pad, then strided valid cross-correlation.
    Conv { input: NodeId, kernel: NodeId, spec: ConvSpec, pad: Padding },
    /// Adjoint of an unpadded `Conv` with the same kernel, producing `(h, w)`.
    ConvTransposed { input: NodeId, kernel: NodeId, spec: ConvSpec, out_hw: (usize, usize) },
    Relu(NodeId),
    Add(NodeId, NodeId),
    /// `scalars[index] * input`.
    Scale { input: NodeId, scalars: NodeId, index: usize },
    /// Per-channel bias.
    Bias { input: NodeId, bias: NodeId },
    /// `input / (factor * ||kernel||^2)`.
    EnergyNorm { input: NodeId, kernel: NodeId, factor: f64 },
}

struct Node<T> {
    op: Op,
    shape: Shape,
    value: Option<Tensor<T>>,
    /// Reflect-padded conv input kept for the backward pass.
    padded: Option<Tensor<T>>,
}

pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Tensor<T>>>,
    evaluated: bool,
    /// When set, ReLUs apply this pattern instead of their own signs.
    frozen_pattern: Option<Vec<bool>>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn graph_err<R>(msg: impl Into<String>) -> Result<R> {
    Err(Error::Graph(msg.into()))
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            evaluated: false,
            frozen_pattern: None,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn shape(&self, id: NodeId) -> Shape {
        self.nodes[id.0].shape
    }

    fn push(&mut self, op: Op, shape: Shape, value: Option<Tensor<T>>) -> NodeId {
        self.evaluated = false;
        self.nodes.push(Node {
            op,
            shape,
            value,
            padded: None,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn check(&self, id: NodeId) -> Result<Shape> {
        match self.nodes.get(id.0) {
            Some(n) => Ok(n.shape),
            None => graph_err(format!("unknown node {}", id.0)),
        }
    }

    /// Constant input (no gradient).
    pub fn input(&mut self, value: Tensor<T>) -> NodeId {
        let shape = value.shape();
        self.push(Op::Leaf { requires_grad: false }, shape, Some(value))
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> NodeId {
        let shape = value.shape();
        self.push(Op::Leaf { requires_grad: true }, shape, Some(value))
    }

    fn kernel_len(&self, kernel: NodeId, spec: ConvSpec) -> Result<()> {
        let ks = self.check(kernel)?;
        if ks.len() != spec.out_ch * spec.in_ch * spec.size * spec.size {
            return graph_err(format!("kernel node {ks} does not hold a {spec:?} stack"));
        }
        Ok(())
    }

    pub fn conv(&mut self, input: NodeId, kernel: NodeId, spec: ConvSpec, pad: Padding) -> Result<NodeId> {
        let s = self.check(input)?;
        self.kernel_len(kernel, spec)?;
        if s.channels != spec.in_ch {
            return graph_err(format!("conv input {s} has wrong channel count for {spec:?}"));
        }
        let p = pad.padded(s);
        let h = valid_output_len(p.height, spec.size, spec.stride)?;
        let w = valid_output_len(p.width, spec.size, spec.stride)?;
        Ok(self.push(
            Op::Conv { input, kernel, spec, pad },
            Shape::new(spec.out_ch, h, w),
            None,
        ))
    }

    pub fn conv_transposed(
        &mut self,
        input: NodeId,
        kernel: NodeId,
        spec: ConvSpec,
        out_hw: (usize, usize),
    ) -> Result<NodeId> {
        let s = self.check(input)?;
        self.kernel_len(kernel, spec)?;
        let h = valid_output_len(out_hw.0, spec.size, spec.stride)?;
        let w = valid_output_len(out_hw.1, spec.size, spec.stride)?;
        if s != Shape::new(spec.out_ch, h, w) {
            return graph_err(format!("transposed conv input {s} inconsistent with output {out_hw:?}"));
        }
        Ok(self.push(
            Op::ConvTransposed { input, kernel, spec, out_hw },
            Shape::new(spec.in_ch, out_hw.0, out_hw.1),
            None,
        ))
    }

    pub fn relu(&mut self, input: NodeId) -> Result<NodeId> {
        let s = self.check(input)?;
        Ok(self.push(Op::Relu(input), s, None))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.check(a)?, self.check(b)?);
        if sa != sb {
            return graph_err(format!("add of {sa} and {sb}"));
        }
        Ok(self.push(Op::Add(a, b), sa, None))
    }

    pub fn scale(&mut self, input: NodeId, scalars: NodeId, index: usize) -> Result<NodeId> {
        let s = self.check(input)?;
        if index >= self.check(scalars)?.len() {
            return graph_err(format!("scalar index {index} out of range"));
        }
        Ok(self.push(Op::Scale { input, scalars, index }, s, None))
    }

    pub fn bias(&mut self, input: NodeId, bias: NodeId) -> Result<NodeId> {
        let s = self.check(input)?;
        if self.check(bias)?.len() != s.channels {
            return graph_err(format!("bias length does not match {s}"));
        }
        Ok(self.push(Op::Bias { input, bias }, s, None))
    }

    pub fn energy_norm(&mut self, input: NodeId, kernel: NodeId, factor: f64) -> Result<NodeId> {
        let s = self.check(input)?;
        self.check(kernel)?;
        if !(factor > 0.0) {
            return graph_err("energy normalisation factor must be positive");
        }
        Ok(self.push(Op::EnergyNorm { input, kernel, factor }, s, None))
    }

    fn val(&self, id: NodeId) -> &Tensor<T> {
        self.nodes[id.0]
            .value
            .as_ref()
            .expect("operands are evaluated before their consumers")
    }

    fn spec_view<'a>(&'a self, kernel: NodeId, spec: ConvSpec) -> KernelsRef<'a, T> {
        KernelsRef {
            out_ch: spec.out_ch,
            in_ch: spec.in_ch,
            size: spec.size,
            data: self.val(kernel).data(),
        }
    }

    /// Make every ReLU gate with a fixed pattern (as returned by
    /// [`activation_pattern`](Self::activation_pattern)) instead of the sign
    /// of its input. The network is then smooth in its parameters, with the
    /// same derivative as the free network at the point the pattern came from.
    pub fn freeze_activations(&mut self, pattern: Vec<bool>) {
        self.frozen_pattern = Some(pattern);
        self.evaluated = false;
    }

    /// Evaluate every node.
    pub fn forward(&mut self) -> Result<()> {
        let mut cursor = 0;
        for i in 0..self.nodes.len() {
            let op = self.nodes[i].op.clone();
            let mut padded = None;
            let value = match op {
                Op::Leaf { .. } => continue,
                Op::Conv { input, kernel, spec, pad } => {
                    let p = pad_reflect_with(self.val(input), pad)?;
                    let out = conv2d_valid(&p, self.spec_view(kernel, spec), spec.stride)?;
                    if !pad.is_zero() {
                        padded = Some(p);
                    }
                    out
                }
                Op::ConvTransposed { input, kernel, spec, out_hw } => {
                    conv2d_transposed(self.val(input), self.spec_view(kernel, spec), spec.stride, out_hw)?
                }
                Op::Relu(a) => match &self.frozen_pattern {
                    None => self.val(a).map(|v| if v > T::zero() { v } else { T::zero() }),
                    Some(pattern) => {
                        let x = self.val(a);
                        let gate = pattern.get(cursor..cursor + x.data().len()).ok_or_else(|| {
                            Error::Graph("frozen activation pattern is too short".into())
                        })?;
                        cursor += x.data().len();
                        let data = x.data().iter().zip(gate).map(|(&v, &on)| if on { v } else { T::zero() }).collect();
                        Tensor::from_vec(x.shape(), data)?
                    }
                },
                Op::Add(a, b) => self.val(a).add(self.val(b))?,
                Op::Scale { input, scalars, index } => {
                    let s = self.val(scalars).data()[index];
                    self.val(input).scale(s)
                }
                Op::Bias { input, bias } => {
                    let mut out = self.val(input).clone();
                    let b = self.val(bias).data().to_vec();
                    for (c, &bc) in b.iter().enumerate() {
                        out.channel_mut(c).iter_mut().for_each(|v| *v += bc);
                    }
                    out
                }
                Op::EnergyNorm { input, kernel, factor } => {
                    let e = self.val(kernel).norm_sq();
                    if !(e > T::zero()) {
                        return graph_err("energy normalisation of an all-zero kernel");
                    }
                    self.val(input).scale(T::one() / (T::from_f64_lossy(factor) * e))
                }
            };
            self.nodes[i].value = Some(value);
            self.nodes[i].padded = padded;
        }
        if let Some(p) = &self.frozen_pattern {
            if cursor != p.len() {
                return graph_err("frozen activation pattern is too long");
            }
        }
        self.evaluated = true;
        Ok(())
    }

    /// Value of a node after [`forward`](Self::forward).
    pub fn value(&self, id: NodeId) -> Result<&Tensor<T>> {
        self.check(id)?;
        match &self.nodes[id.0].value {
            Some(v) if self.evaluated => Ok(v),
            _ => graph_err(format!("node {} has not been evaluated; run forward first", id.0)),
        }
    }

    /// Sign pattern (`input > 0`) of every ReLU, concatenated in node order.
    pub fn activation_pattern(&self) -> Result<Vec<bool>> {
        if !self.evaluated {
            return graph_err("activation pattern requested before forward");
        }
        let mut out = Vec::new();
        for n in &self.nodes {
            if let Op::Relu(a) = n.op {
                out.extend(self.val(a).data().iter().map(|&v| v > T::zero()));
            }
        }
        Ok(out)
    }

    /// Accumulated gradient of a trainable leaf after [`backward`](Self::backward).
    pub fn grad(&self, id: NodeId) -> Result<&Tensor<T>> {
        self.check(id)?;
        match self.grads.get(id.0) {
            Some(Some(g)) => Ok(g),
            _ => graph_err(format!("no gradient recorded for node {}", id.0)),
        }
    }

    fn accumulate(grads: &mut [Option<Tensor<T>>], id: NodeId, g: Tensor<T>) -> Result<()> {
        match &mut grads[id.0] {
            Some(acc) => acc.add_assign(&g),
            slot => {
                *slot = Some(g);
                Ok(())
            }
        }
    }

    fn needs_grad(&self, flags: &[bool], id: NodeId) -> bool {
        flags[id.0]
    }

    /// Propagate `seed` (the gradient of a scalar loss with respect to
    /// `output`) back to every trainable leaf. Leaves that do not influence
    /// the output receive exact zeros.
    pub fn backward(&mut self, output: NodeId, seed: Tensor<T>) -> Result<()> {
        if !self.evaluated {
            return graph_err("backward called before forward");
        }
        if seed.shape() != self.check(output)? {
            return graph_err(format!(
                "seed gradient {} does not match output {}",
                seed.shape(),
                self.shape(output)
            ));
        }
        // which nodes lie on a path from a trainable leaf
        let mut flags = vec![false; self.nodes.len()];
        for (i, n) in self.nodes.iter().enumerate() {
            flags[i] = match n.op {
                Op::Leaf { requires_grad } => requires_grad,
                Op::Conv { input, kernel, .. }
                | Op::ConvTransposed { input, kernel, .. }
                | Op::EnergyNorm { input, kernel, .. } => flags[input.0] || flags[kernel.0],
                Op::Relu(a) => flags[a.0],
                Op::Add(a, b) => flags[a.0] || flags[b.0],
                Op::Scale { input, scalars, .. } => flags[input.0] || flags[scalars.0],
                Op::Bias { input, bias } => flags[input.0] || flags[bias.0],
            };
        }

        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(seed);
        for i in (0..=output.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let op = self.nodes[i].op.clone();
            match op {
                Op::Leaf { requires_grad } => {
                    if requires_grad {
                        grads[i] = Some(g);
                    }
                    continue;
                }
                Op::Conv { input, kernel, spec, pad } => {
                    let x_pad = self.nodes[i].padded.as_ref().unwrap_or_else(|| self.val(input));
                    if self.needs_grad(&flags, kernel) {
                        let gk = conv2d_kernel_grad(x_pad, &g, spec.size, spec.stride)?;
                        let gk = Tensor::from_vec(self.shape(kernel), gk.into_vec())?;
                        Self::accumulate(&mut grads, kernel, gk)?;
                    }
                    if self.needs_grad(&flags, input) {
                        let hw = (x_pad.height(), x_pad.width());
                        let gp = conv2d_transposed(&g, self.spec_view(kernel, spec), spec.stride, hw)?;
                        let gx = pad_reflect_adjoint(&gp, pad)?;
                        Self::accumulate(&mut grads, input, gx)?;
                    }
                }
                Op::ConvTransposed { input, kernel, spec, .. } => {
                    if self.needs_grad(&flags, kernel) {
                        // <convT(x, K), g> = <x, conv(g, K)>
                        let gk = conv2d_kernel_grad(&g, self.val(input), spec.size, spec.stride)?;
                        let gk = Tensor::from_vec(self.shape(kernel), gk.into_vec())?;
                        Self::accumulate(&mut grads, kernel, gk)?;
                    }
                    if self.needs_grad(&flags, input) {
                        let gx = conv2d_valid(&g, self.spec_view(kernel, spec), spec.stride)?;
                        Self::accumulate(&mut grads, input, gx)?;
                    }
                }
                Op::Relu(a) => {
                    if self.needs_grad(&flags, a) {
                        // subgradient 0 at the kink
                        let gx = self.val(a).zip_with(&g, |x, gv| if x > T::zero() { gv } else { T::zero() })?;
                        Self::accumulate(&mut grads, a, gx)?;
                    }
                }
                Op::Add(a, b) => {
                    if self.needs_grad(&flags, a) {
                        Self::accumulate(&mut grads, a, g.clone())?;
                    }
                    if self.needs_grad(&flags, b) {
                        Self::accumulate(&mut grads, b, g)?;
                    }
                }
                Op::Scale { input, scalars, index } => {
                    if self.needs_grad(&flags, scalars) {
                        let mut gs = Tensor::zeros(self.shape(scalars));
                        gs.data_mut()[index] = self.val(input).dot(&g)?;
                        Self::accumulate(&mut grads, scalars, gs)?;
                    }
                    if self.needs_grad(&flags, input) {
                        let s = self.val(scalars).data()[index];
                        Self::accumulate(&mut grads, input, g.scale(s))?;
                    }
                }
                Op::Bias { input, bias } => {
                    if self.needs_grad(&flags, bias) {
                        let sums: Vec<T> = (0..g.channels())
                            .map(|c| g.channel(c).iter().fold(T::zero(), |a, &v| a + v))
                            .collect();
                        let gb = Tensor::from_vec(self.shape(bias), sums)?;
                        Self::accumulate(&mut grads, bias, gb)?;
                    }
                    if self.needs_grad(&flags, input) {
                        Self::accumulate(&mut grads, input, g)?;
                    }
                }
                Op::EnergyNorm { input, kernel, factor } => {
                    let k = self.val(kernel);
                    let e = k.norm_sq();
                    let f = T::from_f64_lossy(factor);
                    if self.needs_grad(&flags, kernel) {
                        // d/dK (1 / (f |K|^2)) = -2 K / (f |K|^4)
                        let c = -(T::one() + T::one()) * self.val(input).dot(&g)? / (f * e * e);
                        Self::accumulate(&mut grads, kernel, k.scale(c))?;
                    }
                    if self.needs_grad(&flags, input) {
                        Self::accumulate(&mut grads, input, g.scale(T::one() / (f * e)))?;
                    }
                }
            }
        }
        // trainable leaves untouched by the output get exact zeros
        for (i, n) in self.nodes.iter().enumerate() {
            if matches!(n.op, Op::Leaf { requires_grad: true }) && grads[i].is_none() {
                grads[i] = Some(Tensor::zeros(n.shape));
            }
        }
        self.grads = grads;
        Ok(())
    }
}
