use super::conv::{conv3d_backward, conv3d_transpose_backward};
use super::{conv3d, conv3d_transpose, ConvSpec, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Conv3d { input: Var, weight: Var, bias: Option<Var>, spec: ConvSpec },
    ConvTranspose3d { input: Var, weight: Var, bias: Option<Var>, spec: ConvSpec, target: [usize; 3] },
    Affine { input: Var, weight: Var, bias: Var },
    Activation(Var, Activation),
    Exp(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f32),
    AddScalar(Var),
    Reshape(Var),
    Sum(Var),
    SumSquares(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Define-by-run record of a forward pass. Nodes are appended in execution
/// order, so walking them backwards is a reverse topological order.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Records an input. Its gradient is tracked iff the tensor's
    /// `requires_grad` flag is set.
    pub fn leaf(&mut self, tensor: Tensor) -> Var {
        let requires_grad = tensor.requires_grad();
        self.push(tensor, Op::Leaf, requires_grad)
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn tracks(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn conv3d(&mut self, input: Var, weight: Var, bias: Option<Var>, spec: ConvSpec) -> Result<Var> {
        let out = conv3d(self.value(input), self.value(weight), bias.map(|b| self.value(b)), &spec)?;
        let rg = self.tracks(&[input, weight]) || bias.is_some_and(|b| self.tracks(&[b]));
        Ok(self.push(out, Op::Conv3d { input, weight, bias, spec }, rg))
    }

    pub fn conv3d_transpose(
        &mut self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        spec: ConvSpec,
        target: [usize; 3],
    ) -> Result<Var> {
        let out = conv3d_transpose(self.value(input), self.value(weight), bias.map(|b| self.value(b)), &spec, target)?;
        let rg = self.tracks(&[input, weight]) || bias.is_some_and(|b| self.tracks(&[b]));
        Ok(self.push(out, Op::ConvTranspose3d { input, weight, bias, spec, target }, rg))
    }

    /// `out[o] = Σ_i w[o,i]·x[i] + b[o]` on the flattened input.
    pub fn affine(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let out = affine(self.value(input), self.value(weight), self.value(bias))?;
        let rg = self.tracks(&[input, weight, bias]);
        Ok(self.push(out, Op::Affine { input, weight, bias }, rg))
    }

    pub fn activation(&mut self, input: Var, kind: Activation) -> Var {
        let x = self.value(input);
        let data = match kind {
            Activation::Relu => x.data().iter().map(|&v| v.max(0.0)).collect(),
            Activation::Tanh => x.data().iter().map(|&v| v.tanh()).collect(),
        };
        let out = Tensor::new(x.shape().to_vec(), data).expect("same shape");
        let rg = self.tracks(&[input]);
        self.push(out, Op::Activation(input, kind), rg)
    }

    pub fn relu(&mut self, input: Var) -> Var {
        self.activation(input, Activation::Relu)
    }

    pub fn tanh(&mut self, input: Var) -> Var {
        self.activation(input, Activation::Tanh)
    }

    pub fn exp(&mut self, input: Var) -> Var {
        let out = self.map(input, f32::exp);
        let rg = self.tracks(&[input]);
        self.push(out, Op::Exp(input), rg)
    }

    pub fn scale(&mut self, input: Var, factor: f32) -> Var {
        let out = self.map(input, |v| v * factor);
        let rg = self.tracks(&[input]);
        self.push(out, Op::Scale(input, factor), rg)
    }

    pub fn add_scalar(&mut self, input: Var, offset: f32) -> Var {
        let out = self.map(input, |v| v + offset);
        let rg = self.tracks(&[input]);
        self.push(out, Op::AddScalar(input), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip(a, b, "add", |x, y| x + y)?;
        let rg = self.tracks(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip(a, b, "sub", |x, y| x - y)?;
        let rg = self.tracks(&[a, b]);
        Ok(self.push(out, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip(a, b, "mul", |x, y| x * y)?;
        let rg = self.tracks(&[a, b]);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    pub fn reshape(&mut self, input: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(input).reshape(shape)?;
        let rg = self.tracks(&[input]);
        Ok(self.push(out, Op::Reshape(input), rg))
    }

    pub fn sum(&mut self, input: Var) -> Var {
        let out = Tensor::scalar(self.value(input).sum() as f32);
        let rg = self.tracks(&[input]);
        self.push(out, Op::Sum(input), rg)
    }

    pub fn sum_squares(&mut self, input: Var) -> Var {
        let s: f64 = self.value(input).data().iter().map(|&v| v as f64 * v as f64).sum();
        let rg = self.tracks(&[input]);
        self.push(Tensor::scalar(s as f32), Op::SumSquares(input), rg)
    }

    fn map(&self, input: Var, f: impl Fn(f32) -> f32) -> Tensor {
        let x = self.value(input);
        Tensor::new(x.shape().to_vec(), x.data().iter().map(|&v| f(v)).collect()).expect("same shape")
    }

    fn zip(&self, a: Var, b: Var, op: &str, f: impl Fn(f32, f32) -> f32) -> Result<Tensor> {
        let (x, y) = (self.value(a), self.value(b));
        x.expect_same_shape(y, op)?;
        Tensor::new(x.shape().to_vec(), x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect())
    }

    /// Reverse sweep from a scalar `loss`. Every leaf that requires a
    /// gradient receives one; leaves the loss does not depend on get zeros.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let root = &self.nodes[loss.0];
        if !root.value.is_scalar() {
            return Err(Error::Shape(format!(
                "backward needs a scalar loss, got shape {:?}",
                root.value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f32>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                }
                Op::Conv3d { input, weight, bias, spec } => {
                    let go = Tensor::new(node.value.shape().to_vec(), g)?;
                    let need = self.nodes[input.0].requires_grad;
                    let cg = conv3d_backward(self.value(*input), self.value(*weight), spec, &go, need)?;
                    self.accumulate_conv(&mut grads, *input, *weight, *bias, cg);
                }
                Op::ConvTranspose3d { input, weight, bias, spec, target } => {
                    let go = Tensor::new(node.value.shape().to_vec(), g)?;
                    let need = self.nodes[input.0].requires_grad;
                    let cg = conv3d_transpose_backward(
                        self.value(*input),
                        self.value(*weight),
                        spec,
                        *target,
                        &go,
                        need,
                    )?;
                    self.accumulate_conv(&mut grads, *input, *weight, *bias, cg);
                }
                Op::Affine { input, weight, bias } => {
                    let x = self.value(*input).data();
                    let w = self.value(*weight).data();
                    let n_in = x.len();
                    if self.nodes[input.0].requires_grad {
                        let mut gx = vec![0.0f64; n_in];
                        for (o, &go) in g.iter().enumerate() {
                            let row = &w[o * n_in..(o + 1) * n_in];
                            for (acc, &wv) in gx.iter_mut().zip(row) {
                                *acc += go as f64 * wv as f64;
                            }
                        }
                        let gx: Vec<f32> = gx.into_iter().map(|v| v as f32).collect();
                        self.accumulate(&mut grads, *input, &gx);
                    }
                    if self.nodes[weight.0].requires_grad {
                        let mut gw = vec![0.0f32; w.len()];
                        for (o, &go) in g.iter().enumerate() {
                            for (dst, &xv) in gw[o * n_in..(o + 1) * n_in].iter_mut().zip(x) {
                                *dst = go * xv;
                            }
                        }
                        self.accumulate(&mut grads, *weight, &gw);
                    }
                    self.accumulate(&mut grads, *bias, &g);
                }
                Op::Activation(input, kind) => {
                    let gx: Vec<f32> = match kind {
                        Activation::Relu => self
                            .value(*input)
                            .data()
                            .iter()
                            .zip(&g)
                            .map(|(&x, &gv)| if x > 0.0 { gv } else { 0.0 })
                            .collect(),
                        Activation::Tanh => node
                            .value
                            .data()
                            .iter()
                            .zip(&g)
                            .map(|(&y, &gv)| gv * (1.0 - y * y))
                            .collect(),
                    };
                    self.accumulate(&mut grads, *input, &gx);
                }
                Op::Exp(input) => {
                    let gx: Vec<f32> = node.value.data().iter().zip(&g).map(|(&y, &gv)| y * gv).collect();
                    self.accumulate(&mut grads, *input, &gx);
                }
                Op::Add(a, b) => {
                    self.accumulate(&mut grads, *a, &g);
                    self.accumulate(&mut grads, *b, &g);
                }
                Op::Sub(a, b) => {
                    self.accumulate(&mut grads, *a, &g);
                    let neg: Vec<f32> = g.iter().map(|v| -v).collect();
                    self.accumulate(&mut grads, *b, &neg);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                    let ga: Vec<f32> = g.iter().zip(bv).map(|(gv, y)| gv * y).collect();
                    let gb: Vec<f32> = g.iter().zip(av).map(|(gv, x)| gv * x).collect();
                    self.accumulate(&mut grads, *a, &ga);
                    self.accumulate(&mut grads, *b, &gb);
                }
                Op::Scale(input, factor) => {
                    let gx: Vec<f32> = g.iter().map(|v| v * factor).collect();
                    self.accumulate(&mut grads, *input, &gx);
                }
                Op::AddScalar(input) | Op::Reshape(input) => {
                    self.accumulate(&mut grads, *input, &g);
                }
                Op::Sum(input) => {
                    let gx = vec![g[0]; self.value(*input).numel()];
                    self.accumulate(&mut grads, *input, &gx);
                }
                Op::SumSquares(input) => {
                    let gx: Vec<f32> = self.value(*input).data().iter().map(|&x| 2.0 * x * g[0]).collect();
                    self.accumulate(&mut grads, *input, &gx);
                }
            }
        }

        let mut out = Vec::with_capacity(self.nodes.len());
        for (node, g) in self.nodes.iter().zip(grads) {
            let t = match (&node.op, node.requires_grad) {
                (Op::Leaf, true) => {
                    let data = g.unwrap_or_else(|| vec![0.0; node.value.numel()]);
                    Some(Tensor::new(node.value.shape().to_vec(), data)?)
                }
                _ => None,
            };
            out.push(t);
        }
        Ok(Gradients { grads: out })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f32>>], target: Var, g: &[f32]) {
        if !self.nodes[target.0].requires_grad {
            return;
        }
        match &mut grads[target.0] {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
            slot @ None => *slot = Some(g.to_vec()),
        }
    }

    fn accumulate_conv(
        &self,
        grads: &mut [Option<Vec<f32>>],
        input: Var,
        weight: Var,
        bias: Option<Var>,
        cg: super::conv::ConvGrads,
    ) {
        if let Some(gx) = cg.input {
            self.accumulate(grads, input, gx.data());
        }
        self.accumulate(grads, weight, cg.weight.data());
        if let (Some(b), Some(gb)) = (bias, cg.bias) {
            self.accumulate(grads, b, gb.data());
        }
    }
}

fn affine(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    let n_in = x.numel();
    if w.shape().len() != 2 || w.shape()[1] != n_in {
        return Err(Error::Shape(format!(
            "affine: input has {n_in} values but weight shape is {:?}",
            w.shape()
        )));
    }
    let n_out = w.shape()[0];
    if b.shape() != [n_out] {
        return Err(Error::Shape(format!("affine: bias shape {:?}, expected [{n_out}]", b.shape())));
    }
    let xd = x.data();
    let out = (0..n_out)
        .map(|o| {
            let row = &w.data()[o * n_in..(o + 1) * n_in];
            let acc: f64 = row.iter().zip(xd).map(|(&a, &c)| a as f64 * c as f64).sum();
            (acc + b.data()[o] as f64) as f32
        })
        .collect();
    Tensor::new(vec![n_out], out)
}

/// Leaf gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of a leaf recorded with `requires_grad`; `None` for
    /// intermediate values and untracked leaves.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}
