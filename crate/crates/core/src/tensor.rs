//! Dense f64 tensors and a linear-tape reverse-mode autodiff engine.
//!
//! The op set is exactly what the grid detector and the attack losses need:
//! conv2d, leaky_relu, sigmoid, elementwise arithmetic, clamp, gather,
//! max/sum reductions, a dot-with-constants reduction and a fused
//! binary-cross-entropy-with-logits loss. Each op records itself on the
//! tape; [`Tape::backward_seeded`] walks the tape in reverse recording
//! order and accumulates gradients additively, so a value used twice
//! receives the sum of both path gradients.
//!
//! Every op validates shapes up front and checks its output for NaN/Inf;
//! non-finite values are an error state, never silently propagated.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;

/// Dense row-major tensor. Immutable once an op has produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Dimension(format!(
                "shape {:?} wants {} values, got {}",
                shape,
                n,
                data.len()
            )));
        }
        let t = Tensor { shape, data };
        t.check_finite("tensor construction")?;
        Ok(t)
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![v],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Scalar value of a single-element tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn check_finite(&self, ctx: &str) -> Result<()> {
        for &v in &self.data {
            if !v.is_finite() {
                return Err(Error::NonFinite(ctx.into()));
            }
        }
        Ok(())
    }
}

/// Handle to a tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

/// Value/gradient pair plus the op that produced the value.
struct Node {
    value: Tensor,
    grad: Tensor,
    op: Op,
}

enum Op {
    Leaf,
    Conv2d {
        input: NodeId,
        kernel: NodeId,
        bias: Option<NodeId>,
        stride: usize,
        pad: usize,
    },
    LeakyRelu {
        input: NodeId,
        slope: f64,
    },
    Sigmoid {
        input: NodeId,
    },
    Add {
        lhs: NodeId,
        rhs: NodeId,
    },
    Mul {
        lhs: NodeId,
        rhs: NodeId,
    },
    Affine {
        input: NodeId,
        scale: f64,
    },
    Offset {
        input: NodeId,
    },
    Clamp01 {
        input: NodeId,
    },
    Gather {
        input: NodeId,
        indices: Vec<usize>,
    },
    ReduceMax {
        input: NodeId,
        argmax: usize,
    },
    Sum {
        input: NodeId,
    },
    Dot {
        input: NodeId,
        weights: Vec<f64>,
    },
    BceWithLogits {
        input: NodeId,
        targets: Vec<f64>,
        weights: Vec<f64>,
    },
}

/// Linear gradient tape. Single-owner; recording order is topological order.
pub struct Tape {
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

#[inline]
fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + math::exp(-x))
    } else {
        let e = math::exp(x);
        e / (1.0 + e)
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn grad(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].grad
    }

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        let grad = Tensor::zeros(value.shape.clone());
        self.nodes.push(Node { value, grad, op });
        NodeId(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor) -> Result<NodeId> {
        value.check_finite("leaf")?;
        Ok(self.push(value, Op::Leaf))
    }

    /// Cross-correlation of `input [C,H,W]` with `kernel [K,C,kh,kw]`,
    /// plus an optional per-output-channel bias `[K]`.
    pub fn conv2d(
        &mut self,
        input: NodeId,
        kernel: NodeId,
        bias: Option<NodeId>,
        stride: usize,
        pad: usize,
    ) -> Result<NodeId> {
        let ishape = self.value(input).shape().to_vec();
        let kshape = self.value(kernel).shape().to_vec();
        if ishape.len() != 3 || kshape.len() != 4 {
            return Err(Error::Dimension(format!(
                "conv2d wants input [C,H,W] and kernel [K,C,kh,kw], got {ishape:?} and {kshape:?}"
            )));
        }
        let (c, h, w) = (ishape[0], ishape[1], ishape[2]);
        let (k, kc, kh, kw) = (kshape[0], kshape[1], kshape[2], kshape[3]);
        if kc != c {
            return Err(Error::Dimension(format!(
                "conv2d channel mismatch: input has {c}, kernel expects {kc}"
            )));
        }
        if stride < 1 {
            return Err(Error::Domain("conv2d stride must be >= 1".into()));
        }
        if kh > h + 2 * pad || kw > w + 2 * pad {
            return Err(Error::Dimension(format!(
                "conv2d kernel {kh}x{kw} larger than padded input {}x{}",
                h + 2 * pad,
                w + 2 * pad
            )));
        }
        if let Some(b) = bias {
            let bs = self.value(b).shape();
            if bs != [k] {
                return Err(Error::Dimension(format!(
                    "conv2d bias shape {bs:?}, expected [{k}]"
                )));
            }
        }
        let oh = (h + 2 * pad - kh) / stride + 1;
        let ow = (w + 2 * pad - kw) / stride + 1;

        let mut out = vec![0.0; k * oh * ow];
        {
            let idata = self.value(input).data();
            let kdata = self.value(kernel).data();
            for ok in 0..k {
                let bias_v = bias.map(|b| self.value(b).data()[ok]).unwrap_or(0.0);
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = bias_v;
                        for ic in 0..c {
                            let iplane = &idata[ic * h * w..(ic + 1) * h * w];
                            let kplane =
                                &kdata[(ok * c + ic) * kh * kw..(ok * c + ic + 1) * kh * kw];
                            for ky in 0..kh {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                let irow = &iplane[iy as usize * w..(iy as usize + 1) * w];
                                let krow = &kplane[ky * kw..(ky + 1) * kw];
                                for kx in 0..kw {
                                    let ix = (ox * stride + kx) as isize - pad as isize;
                                    if ix < 0 || ix >= w as isize {
                                        continue;
                                    }
                                    acc += irow[ix as usize] * krow[kx];
                                }
                            }
                        }
                        out[(ok * oh + oy) * ow + ox] = acc;
                    }
                }
            }
        }
        let value = Tensor::new(vec![k, oh, ow], out)?;
        Ok(self.push(
            value,
            Op::Conv2d {
                input,
                kernel,
                bias,
                stride,
                pad,
            },
        ))
    }

    pub fn leaky_relu(&mut self, input: NodeId, slope: f64) -> Result<NodeId> {
        if !(0.0..1.0).contains(&slope) {
            return Err(Error::Domain(format!("leaky_relu slope {slope} not in [0,1)")));
        }
        let v = self.value(input);
        let data: Vec<f64> = v
            .data()
            .iter()
            .map(|&x| if x >= 0.0 { x } else { slope * x })
            .collect();
        let value = Tensor::new(v.shape.clone(), data)?;
        Ok(self.push(value, Op::LeakyRelu { input, slope }))
    }

    pub fn sigmoid(&mut self, input: NodeId) -> Result<NodeId> {
        let v = self.value(input);
        let data: Vec<f64> = v.data().iter().map(|&x| sigmoid_scalar(x)).collect();
        let value = Tensor::new(v.shape.clone(), data)?;
        Ok(self.push(value, Op::Sigmoid { input }))
    }

    pub fn add(&mut self, lhs: NodeId, rhs: NodeId) -> Result<NodeId> {
        self.same_shape(lhs, rhs, "add")?;
        let data: Vec<f64> = self
            .value(lhs)
            .data()
            .iter()
            .zip(self.value(rhs).data())
            .map(|(a, b)| a + b)
            .collect();
        let value = Tensor::new(self.value(lhs).shape.clone(), data)?;
        Ok(self.push(value, Op::Add { lhs, rhs }))
    }

    pub fn mul(&mut self, lhs: NodeId, rhs: NodeId) -> Result<NodeId> {
        self.same_shape(lhs, rhs, "mul")?;
        let data: Vec<f64> = self
            .value(lhs)
            .data()
            .iter()
            .zip(self.value(rhs).data())
            .map(|(a, b)| a * b)
            .collect();
        let value = Tensor::new(self.value(lhs).shape.clone(), data)?;
        Ok(self.push(value, Op::Mul { lhs, rhs }))
    }

    /// `scale * x + shift` elementwise with scalar coefficients.
    pub fn affine(&mut self, input: NodeId, scale: f64, shift: f64) -> Result<NodeId> {
        let v = self.value(input);
        let data: Vec<f64> = v.data().iter().map(|&x| scale * x + shift).collect();
        let value = Tensor::new(v.shape.clone(), data)?;
        Ok(self.push(value, Op::Affine { input, scale }))
    }

    /// `x + constants` elementwise; the constants are not differentiated.
    pub fn offset(&mut self, input: NodeId, constants: &[f64]) -> Result<NodeId> {
        let v = self.value(input);
        if v.len() != constants.len() {
            return Err(Error::Dimension(format!(
                "offset wants {} constants, got {}",
                v.len(),
                constants.len()
            )));
        }
        let data: Vec<f64> = v
            .data()
            .iter()
            .zip(constants)
            .map(|(a, b)| a + b)
            .collect();
        let value = Tensor::new(v.shape.clone(), data)?;
        Ok(self.push(value, Op::Offset { input }))
    }

    /// Clamp to [0,1]. Gradient passes only where the input is strictly
    /// inside (0,1); at and beyond the boundary it is zero.
    pub fn clamp01(&mut self, input: NodeId) -> Result<NodeId> {
        let v = self.value(input);
        let data: Vec<f64> = v.data().iter().map(|&x| x.clamp(0.0, 1.0)).collect();
        let value = Tensor::new(v.shape.clone(), data)?;
        Ok(self.push(value, Op::Clamp01 { input }))
    }

    /// Pick flat-indexed elements; backward scatter-adds.
    pub fn gather(&mut self, input: NodeId, indices: &[usize]) -> Result<NodeId> {
        let v = self.value(input);
        let mut data = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= v.len() {
                return Err(Error::Index(format!(
                    "gather index {i} out of range for {} elements",
                    v.len()
                )));
            }
            data.push(v.data()[i]);
        }
        let value = Tensor::new(vec![indices.len()], data)?;
        Ok(self.push(
            value,
            Op::Gather {
                input,
                indices: indices.to_vec(),
            },
        ))
    }

    /// Max over all elements. Returns the node and the argmax flat index
    /// (first index on ties). Backward routes everything to the argmax.
    pub fn reduce_max(&mut self, input: NodeId) -> Result<(NodeId, usize)> {
        let v = self.value(input);
        if v.is_empty() {
            return Err(Error::Domain("reduce_max of an empty tensor".into()));
        }
        let mut best = 0usize;
        for (i, &x) in v.data().iter().enumerate() {
            if x > v.data()[best] {
                best = i;
            }
        }
        let value = Tensor::scalar(v.data()[best]);
        let id = self.push(value, Op::ReduceMax { input, argmax: best });
        Ok((id, best))
    }

    pub fn sum(&mut self, input: NodeId) -> Result<NodeId> {
        let total: f64 = self.value(input).data().iter().sum();
        let value = Tensor::scalar(total);
        value.check_finite("sum")?;
        Ok(self.push(value, Op::Sum { input }))
    }

    /// Weighted sum with constant weights: `Σ w_i · x_i`.
    pub fn dot(&mut self, input: NodeId, weights: &[f64]) -> Result<NodeId> {
        let v = self.value(input);
        if v.len() != weights.len() {
            return Err(Error::Dimension(format!(
                "dot wants {} weights, got {}",
                v.len(),
                weights.len()
            )));
        }
        let total: f64 = v.data().iter().zip(weights).map(|(a, b)| a * b).sum();
        let value = Tensor::scalar(total);
        value.check_finite("dot")?;
        Ok(self.push(
            value,
            Op::Dot {
                input,
                weights: weights.to_vec(),
            },
        ))
    }

    /// Numerically stable `Σ w_i · bce(logit_i, target_i)` where
    /// `bce(l, y) = max(l,0) − l·y + ln(1 + exp(−|l|))`.
    /// Backward is `w_i · (σ(l_i) − y_i)`.
    pub fn bce_with_logits(
        &mut self,
        input: NodeId,
        targets: &[f64],
        weights: &[f64],
    ) -> Result<NodeId> {
        let v = self.value(input);
        if v.len() != targets.len() || v.len() != weights.len() {
            return Err(Error::Dimension(format!(
                "bce_with_logits: {} logits, {} targets, {} weights",
                v.len(),
                targets.len(),
                weights.len()
            )));
        }
        let mut total = 0.0;
        for ((&l, &y), &w) in v.data().iter().zip(targets).zip(weights) {
            let term = l.max(0.0) - l * y + math::ln(1.0 + math::exp(-math::abs(l)));
            total += w * term;
        }
        let value = Tensor::scalar(total);
        value.check_finite("bce_with_logits")?;
        Ok(self.push(
            value,
            Op::BceWithLogits {
                input,
                targets: targets.to_vec(),
                weights: weights.to_vec(),
            },
        ))
    }

    fn same_shape(&self, a: NodeId, b: NodeId, op: &str) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::Dimension(format!(
                "{op}: shapes {:?} and {:?} differ",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        Ok(())
    }

    /// Backward from a scalar node, seeding gradient 1.
    pub fn backward_scalar(&mut self, root: NodeId) -> Result<()> {
        if self.value(root).len() != 1 {
            return Err(Error::Dimension(format!(
                "backward_scalar root has {} elements",
                self.value(root).len()
            )));
        }
        self.backward_seeded(root, &[1.0])
    }

    /// Backward with an explicit seed gradient at `root`. Gradients
    /// accumulate additively into every node reachable from `root`.
    pub fn backward_seeded(&mut self, root: NodeId, seed: &[f64]) -> Result<()> {
        if seed.len() != self.value(root).len() {
            return Err(Error::Dimension(format!(
                "seed has {} values, root has {}",
                seed.len(),
                self.value(root).len()
            )));
        }
        for (g, &s) in self.nodes[root.0].grad.data_mut().iter_mut().zip(seed) {
            *g += s;
        }
        for i in (0..=root.0).rev() {
            self.backprop_node(i)?;
        }
        Ok(())
    }

    fn backprop_node(&mut self, i: usize) -> Result<()> {
        // Split off this node's grad to appease the borrow checker; ops
        // never read their own grad.
        let shape = self.nodes[i].value.shape.clone();
        let grad = core::mem::replace(&mut self.nodes[i].grad, Tensor::zeros(shape));
        grad.check_finite("gradient")?;
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                kernel,
                bias,
                stride,
                pad,
            } => {
                let (input, kernel, bias, stride, pad) = (*input, *kernel, *bias, *stride, *pad);
                self.conv2d_backward(i, grad.data(), input, kernel, bias, stride, pad);
            }
            Op::LeakyRelu { input, slope } => {
                let (input, slope) = (*input, *slope);
                let xs: Vec<f64> = self.nodes[input.0].value.data().to_vec();
                let gout = self.nodes[input.0].grad.data_mut();
                for (j, (&g, &x)) in grad.data().iter().zip(&xs).enumerate() {
                    gout[j] += if x >= 0.0 { g } else { slope * g };
                }
            }
            Op::Sigmoid { input } => {
                let input = *input;
                let ys: Vec<f64> = self.nodes[i].value.data().to_vec();
                let gout = self.nodes[input.0].grad.data_mut();
                for (j, (&g, &y)) in grad.data().iter().zip(&ys).enumerate() {
                    gout[j] += g * y * (1.0 - y);
                }
            }
            Op::Add { lhs, rhs } => {
                let (lhs, rhs) = (*lhs, *rhs);
                for (j, &g) in grad.data().iter().enumerate() {
                    self.nodes[lhs.0].grad.data_mut()[j] += g;
                }
                for (j, &g) in grad.data().iter().enumerate() {
                    self.nodes[rhs.0].grad.data_mut()[j] += g;
                }
            }
            Op::Mul { lhs, rhs } => {
                let (lhs, rhs) = (*lhs, *rhs);
                let a: Vec<f64> = self.nodes[lhs.0].value.data().to_vec();
                let b: Vec<f64> = self.nodes[rhs.0].value.data().to_vec();
                for (j, &g) in grad.data().iter().enumerate() {
                    self.nodes[lhs.0].grad.data_mut()[j] += g * b[j];
                }
                for (j, &g) in grad.data().iter().enumerate() {
                    self.nodes[rhs.0].grad.data_mut()[j] += g * a[j];
                }
            }
            Op::Affine { input, scale } => {
                let (input, scale) = (*input, *scale);
                let gout = self.nodes[input.0].grad.data_mut();
                for (j, &g) in grad.data().iter().enumerate() {
                    gout[j] += scale * g;
                }
            }
            Op::Offset { input } => {
                let input = *input;
                let gout = self.nodes[input.0].grad.data_mut();
                for (j, &g) in grad.data().iter().enumerate() {
                    gout[j] += g;
                }
            }
            Op::Clamp01 { input } => {
                let input = *input;
                let xs: Vec<f64> = self.nodes[input.0].value.data().to_vec();
                let gout = self.nodes[input.0].grad.data_mut();
                for (j, (&g, &x)) in grad.data().iter().zip(&xs).enumerate() {
                    if x > 0.0 && x < 1.0 {
                        gout[j] += g;
                    }
                }
            }
            Op::Gather { input, indices } => {
                let input = *input;
                let indices = indices.clone();
                let gout = self.nodes[input.0].grad.data_mut();
                for (&idx, &g) in indices.iter().zip(grad.data()) {
                    gout[idx] += g;
                }
            }
            Op::ReduceMax { input, argmax } => {
                let (input, argmax) = (*input, *argmax);
                self.nodes[input.0].grad.data_mut()[argmax] += grad.item();
            }
            Op::Sum { input } => {
                let input = *input;
                let g = grad.item();
                for go in self.nodes[input.0].grad.data_mut() {
                    *go += g;
                }
            }
            Op::Dot { input, weights } => {
                let input = *input;
                let weights = weights.clone();
                let g = grad.item();
                let gout = self.nodes[input.0].grad.data_mut();
                for (go, &w) in gout.iter_mut().zip(&weights) {
                    *go += g * w;
                }
            }
            Op::BceWithLogits {
                input,
                targets,
                weights,
            } => {
                let input = *input;
                let targets = targets.clone();
                let weights = weights.clone();
                let g = grad.item();
                let ls: Vec<f64> = self.nodes[input.0].value.data().to_vec();
                let gout = self.nodes[input.0].grad.data_mut();
                for (j, ((&l, &y), &w)) in ls.iter().zip(&targets).zip(&weights).enumerate() {
                    gout[j] += g * w * (sigmoid_scalar(l) - y);
                }
            }
        }
        self.nodes[i].grad = grad;
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn conv2d_backward(
        &mut self,
        out_idx: usize,
        gout: &[f64],
        input: NodeId,
        kernel: NodeId,
        bias: Option<NodeId>,
        stride: usize,
        pad: usize,
    ) {
        let oshape = self.nodes[out_idx].value.shape().to_vec();
        let (k, oh, ow) = (oshape[0], oshape[1], oshape[2]);
        let ishape = self.nodes[input.0].value.shape().to_vec();
        let (c, h, w) = (ishape[0], ishape[1], ishape[2]);
        let kshape = self.nodes[kernel.0].value.shape().to_vec();
        let (kh, kw) = (kshape[2], kshape[3]);

        let idata: Vec<f64> = self.nodes[input.0].value.data().to_vec();
        let kdata: Vec<f64> = self.nodes[kernel.0].value.data().to_vec();
        let mut dinput = vec![0.0; idata.len()];
        let mut dkernel = vec![0.0; kdata.len()];
        let mut dbias = vec![0.0; k];

        for ok in 0..k {
            for oy in 0..oh {
                for ox in 0..ow {
                    let g = gout[(ok * oh + oy) * ow + ox];
                    if g == 0.0 {
                        continue;
                    }
                    dbias[ok] += g;
                    for ic in 0..c {
                        let ibase = ic * h * w;
                        let kbase = (ok * c + ic) * kh * kw;
                        for ky in 0..kh {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..kw {
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                let ii = ibase + iy as usize * w + ix as usize;
                                let ki = kbase + ky * kw + kx;
                                dinput[ii] += g * kdata[ki];
                                dkernel[ki] += g * idata[ii];
                            }
                        }
                    }
                }
            }
        }

        for (go, d) in self.nodes[input.0].grad.data_mut().iter_mut().zip(&dinput) {
            *go += d;
        }
        for (go, d) in self.nodes[kernel.0].grad.data_mut().iter_mut().zip(&dkernel) {
            *go += d;
        }
        if let Some(b) = bias {
            for (go, d) in self.nodes[b.0].grad.data_mut().iter_mut().zip(&dbias) {
                *go += d;
            }
        }
    }
}
