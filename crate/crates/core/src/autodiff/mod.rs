//! Reverse-mode automatic differentiation over dense real arrays.
//!
//! A [`Tape`] records every operation as a node holding its forward value.
//! Node inputs always precede the node, so [`Tape::backward`] is a single
//! reverse sweep. Complex quantities travel as `[2, H, W]` arrays (real
//! channel, imaginary channel); the FFT nodes interpret them that way.

mod kernels;
mod optim;

pub use kernels::conv2d;
pub use optim::{adamw_step, AdamW, OptimizerState};

use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64;

use crate::array::RealArray;
use crate::error::{shape_err, Error, Result};
use crate::physics::transform_centered;
use kernels::ConvGeometry;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Pointwise operation tags.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Elementwise {
    Add,
    Sub,
    Mul,
    Scale(f64),
    Relu,
    Square,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    Scale(NodeId, f64),
    AddScalar(NodeId),
    ScaleBy(NodeId, NodeId),
    Relu(NodeId),
    Square(NodeId),
    Abs(NodeId),
    Mean(NodeId),
    Conv2d {
        input: NodeId,
        kernel: NodeId,
        geometry: ConvGeometry,
        cols: Vec<f64>,
    },
    BiasAdd(NodeId, NodeId),
    Fft(NodeId, bool),
    Magnitude(NodeId),
    BoxMean(NodeId, usize),
    Concat(NodeId, NodeId),
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: RealArray,
    needs_grad: bool,
}

/// Append-only record of a forward computation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar loss with respect to every node that needs one.
#[derive(Debug)]
pub struct Gradients {
    slots: Vec<Option<RealArray>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&RealArray> {
        self.slots.get(id.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, id: NodeId) -> Option<RealArray> {
        self.slots.get_mut(id.0).and_then(Option::take)
    }
}

fn complex_transform(data: &[f64], h: usize, w: usize, inverse: bool) -> Vec<f64> {
    let n = h * w;
    let values: Vec<Complex64> = (0..n).map(|i| Complex64::new(data[i], data[n + i])).collect();
    let out = transform_centered(&values, h, w, inverse);
    let mut flat = vec![0.0; 2 * n];
    for (i, z) in out.iter().enumerate() {
        flat[i] = z.re;
        flat[n + i] = z.im;
    }
    flat
}

fn plane_dims(dims: &[usize]) -> Result<(usize, usize, usize)> {
    match *dims {
        [h, w] => Ok((1, h, w)),
        [p, h, w] => Ok((p, h, w)),
        _ => Err(shape_err!("expected [H, W] or [C, H, W], got {:?}", dims)),
    }
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

    pub fn value(&self, id: NodeId) -> &RealArray {
        &self.nodes[id.0].value
    }

    fn push(&mut self, op: Op, value: RealArray, needs_grad: bool, name: &'static str) -> Result<NodeId> {
        if !value.is_finite() {
            return Err(Error::NonFinite(name));
        }
        self.nodes.push(Node {
            op,
            value,
            needs_grad,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    fn grad_flag(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].needs_grad)
    }

    /// Differentiable input (a trainable parameter).
    pub fn parameter(&mut self, value: RealArray) -> Result<NodeId> {
        self.push(Op::Leaf, value, true, "parameter")
    }

    /// Input that receives no gradient.
    pub fn constant(&mut self, value: RealArray) -> Result<NodeId> {
        self.push(Op::Leaf, value, false, "constant")
    }

    fn binary(
        &mut self,
        a: NodeId,
        b: NodeId,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<NodeId> {
        let value = self.value(a).zip_map(self.value(b), f)?;
        let flag = self.grad_flag(&[a, b]);
        self.push(op, value, flag, name)
    }

    fn unary(&mut self, a: NodeId, name: &'static str, f: impl Fn(f64) -> f64, op: Op) -> Result<NodeId> {
        let value = self.value(a).map(f);
        let flag = self.grad_flag(&[a]);
        self.push(op, value, flag, name)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(a, b, "div", |x, y| x / y, Op::Div(a, b))
    }

    pub fn scale(&mut self, a: NodeId, s: f64) -> Result<NodeId> {
        self.unary(a, "scale", |x| x * s, Op::Scale(a, s))
    }

    pub fn add_scalar(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        self.unary(a, "add_scalar", |x| x + c, Op::AddScalar(a))
    }

    /// Array times a one-element node.
    pub fn scale_by(&mut self, a: NodeId, s: NodeId) -> Result<NodeId> {
        let factor = self
            .value(s)
            .item()
            .ok_or_else(|| shape_err!("scale_by needs a one-element factor, got {:?}", self.value(s).dims()))?;
        let value = self.value(a).map(|x| x * factor);
        let flag = self.grad_flag(&[a, s]);
        self.push(Op::ScaleBy(a, s), value, flag, "scale_by")
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(a, "relu", |x| x.max(0.0), Op::Relu(a))
    }

    pub fn square(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(a, "square", |x| x * x, Op::Square(a))
    }

    pub fn abs(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(a, "abs", f64::abs, Op::Abs(a))
    }

    /// Dispatch by tag; binary tags take two operands, the rest one.
    pub fn elementwise(&mut self, op: Elementwise, operands: &[NodeId]) -> Result<NodeId> {
        let arity = match op {
            Elementwise::Add | Elementwise::Sub | Elementwise::Mul => 2,
            _ => 1,
        };
        if operands.len() != arity {
            return Err(shape_err!("{:?} takes {} operands, got {}", op, arity, operands.len()));
        }
        match op {
            Elementwise::Add => self.add(operands[0], operands[1]),
            Elementwise::Sub => self.sub(operands[0], operands[1]),
            Elementwise::Mul => self.mul(operands[0], operands[1]),
            Elementwise::Scale(s) => self.scale(operands[0], s),
            Elementwise::Relu => self.relu(operands[0]),
            Elementwise::Square => self.square(operands[0]),
        }
    }

    /// Arithmetic mean of all entries, as a one-element node.
    pub fn reduce_mean(&mut self, a: NodeId) -> Result<NodeId> {
        let mean = self.value(a).mean()?;
        let flag = self.grad_flag(&[a]);
        self.push(Op::Mean(a), RealArray::scalar(mean), flag, "reduce_mean")
    }

    pub fn conv2d(&mut self, input: NodeId, kernel: NodeId, pad: usize) -> Result<NodeId> {
        let geometry = ConvGeometry::new(self.value(input).dims(), self.value(kernel).dims(), pad)?;
        let (out, cols) =
            kernels::conv2d_forward(self.value(input).data(), self.value(kernel).data(), &geometry);
        let value = RealArray::new(&[geometry.c_out, geometry.h_out, geometry.w_out], out)?;
        let flag = self.grad_flag(&[input, kernel]);
        self.push(
            Op::Conv2d {
                input,
                kernel,
                geometry,
                cols,
            },
            value,
            flag,
            "conv2d",
        )
    }

    /// `[C, H, W] + bias[C]`, broadcast over pixels.
    pub fn bias_add(&mut self, input: NodeId, bias: NodeId) -> Result<NodeId> {
        let (dims, b) = (self.value(input).dims(), self.value(bias));
        if dims.len() != 3 || b.len() != dims[0] {
            return Err(shape_err!("bias of {} entries for input {:?}", b.len(), dims));
        }
        let plane = dims[1] * dims[2];
        let out = kernels::bias_add(self.value(input).data(), b.data(), plane);
        let value = RealArray::new(dims, out)?;
        let flag = self.grad_flag(&[input, bias]);
        self.push(Op::BiasAdd(input, bias), value, flag, "bias_add")
    }

    fn fft_node(&mut self, a: NodeId, inverse: bool) -> Result<NodeId> {
        let dims = self.value(a).dims();
        if dims.len() != 3 || dims[0] != 2 || !dims[1].is_power_of_two() || !dims[2].is_power_of_two() {
            return Err(shape_err!("FFT needs [2, H, W] with power-of-two extents, got {:?}", dims));
        }
        let (h, w) = (dims[1], dims[2]);
        let value = RealArray::new(&[2, h, w], complex_transform(self.value(a).data(), h, w, inverse))?;
        let flag = self.grad_flag(&[a]);
        self.push(Op::Fft(a, inverse), value, flag, "fft")
    }

    /// Centered unitary FFT of a `[2, H, W]` complex array.
    pub fn fft2c(&mut self, a: NodeId) -> Result<NodeId> {
        self.fft_node(a, false)
    }

    pub fn ifft2c(&mut self, a: NodeId) -> Result<NodeId> {
        self.fft_node(a, true)
    }

    /// Pixel-wise modulus `[2, H, W] -> [H, W]`.
    pub fn magnitude(&mut self, a: NodeId) -> Result<NodeId> {
        let dims = self.value(a).dims();
        if dims.len() != 3 || dims[0] != 2 {
            return Err(shape_err!("magnitude needs [2, H, W], got {:?}", dims));
        }
        let (h, w) = (dims[1], dims[2]);
        let n = h * w;
        let d = self.value(a).data();
        let out = (0..n)
            .map(|i| libm::sqrt(d[i] * d[i] + d[n + i] * d[n + i]))
            .collect();
        let value = RealArray::new(&[h, w], out)?;
        let flag = self.grad_flag(&[a]);
        self.push(Op::Magnitude(a), value, flag, "magnitude")
    }

    /// Uniform `window x window` mean over every fully contained patch of
    /// each trailing `[H, W]` plane.
    pub fn box_mean(&mut self, a: NodeId, window: usize) -> Result<NodeId> {
        let dims = self.value(a).dims().to_vec();
        let (p, h, w) = plane_dims(&dims)?;
        if window == 0 || window > h || window > w {
            return Err(shape_err!("window {window} does not fit a {h}x{w} image"));
        }
        let out = kernels::box_mean(self.value(a).data(), p, h, w, window);
        let (ho, wo) = (h - window + 1, w - window + 1);
        let value = if dims.len() == 2 {
            RealArray::new(&[ho, wo], out)?
        } else {
            RealArray::new(&[p, ho, wo], out)?
        };
        let flag = self.grad_flag(&[a]);
        self.push(Op::BoxMean(a, window), value, flag, "box_mean")
    }

    /// Stacks `[Ca, H, W]` and `[Cb, H, W]` along channels.
    pub fn concat_channels(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (da, db) = (self.value(a).dims(), self.value(b).dims());
        if da.len() != 3 || db.len() != 3 || da[1..] != db[1..] {
            return Err(shape_err!("cannot concatenate {:?} and {:?}", da, db));
        }
        let dims = [da[0] + db[0], da[1], da[2]];
        let mut data = self.value(a).data().to_vec();
        data.extend_from_slice(self.value(b).data());
        let value = RealArray::new(&dims, data)?;
        let flag = self.grad_flag(&[a, b]);
        self.push(Op::Concat(a, b), value, flag, "concat")
    }

    /// Reverse sweep from a one-element loss node.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(alloc::format!(
                "backward needs a scalar loss, node has dims {:?}",
                self.value(loss).dims()
            )));
        }
        let mut slots: Vec<Option<RealArray>> = (0..self.nodes.len()).map(|_| None).collect();
        slots[loss.0] = Some(RealArray::scalar(1.0));
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(grad) = slots[idx].take() else {
                continue;
            };
            self.propagate(&node.op, &node.value, &grad, &mut slots)?;
            slots[idx] = Some(grad);
        }
        Ok(Gradients { slots })
    }

    fn accumulate(&self, slots: &mut [Option<RealArray>], id: NodeId, contribution: RealArray) {
        if !self.nodes[id.0].needs_grad {
            return;
        }
        match &mut slots[id.0] {
            Some(existing) => existing.add_assign(&contribution),
            slot => *slot = Some(contribution),
        }
    }

    fn wants(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    fn propagate(
        &self,
        op: &Op,
        out: &RealArray,
        g: &RealArray,
        slots: &mut [Option<RealArray>],
    ) -> Result<()> {
        match *op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(slots, a, g.clone());
                self.accumulate(slots, b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(slots, a, g.clone());
                if self.wants(b) {
                    self.accumulate(slots, b, g.map(|v| -v));
                }
            }
            Op::Mul(a, b) => {
                if self.wants(a) {
                    self.accumulate(slots, a, g.zip_map(self.value(b), |gv, bv| gv * bv)?);
                }
                if self.wants(b) {
                    self.accumulate(slots, b, g.zip_map(self.value(a), |gv, av| gv * av)?);
                }
            }
            Op::Div(a, b) => {
                let bv = self.value(b);
                if self.wants(a) {
                    self.accumulate(slots, a, g.zip_map(bv, |gv, d| gv / d)?);
                }
                if self.wants(b) {
                    // d(a/b)/db = -(a/b)/b
                    let q = out.zip_map(bv, |o, d| -o / d)?;
                    self.accumulate(slots, b, g.zip_map(&q, |gv, qv| gv * qv)?);
                }
            }
            Op::Scale(a, s) => self.accumulate(slots, a, g.map(|v| v * s)),
            Op::AddScalar(a) => self.accumulate(slots, a, g.clone()),
            Op::ScaleBy(a, s) => {
                let factor = self.value(s).data()[0];
                if self.wants(a) {
                    self.accumulate(slots, a, g.map(|v| v * factor));
                }
                if self.wants(s) {
                    let dot: f64 = g.data().iter().zip(self.value(a).data()).map(|(x, y)| x * y).sum();
                    self.accumulate(slots, s, RealArray::scalar(dot));
                }
            }
            Op::Relu(a) => {
                let d = g.zip_map(self.value(a), |gv, x| if x > 0.0 { gv } else { 0.0 })?;
                self.accumulate(slots, a, d);
            }
            Op::Square(a) => {
                let d = g.zip_map(self.value(a), |gv, x| 2.0 * x * gv)?;
                self.accumulate(slots, a, d);
            }
            Op::Abs(a) => {
                let d = g.zip_map(self.value(a), |gv, x| {
                    if x > 0.0 {
                        gv
                    } else if x < 0.0 {
                        -gv
                    } else {
                        0.0
                    }
                })?;
                self.accumulate(slots, a, d);
            }
            Op::Mean(a) => {
                let input = self.value(a);
                let share = g.data()[0] / input.len() as f64;
                self.accumulate(slots, a, RealArray::filled(input.dims(), share));
            }
            Op::Conv2d {
                input,
                kernel,
                ref geometry,
                ref cols,
            } => {
                if self.wants(kernel) {
                    let dk = kernels::conv2d_grad_kernel(g.data(), cols, geometry);
                    self.accumulate(slots, kernel, RealArray::new(self.value(kernel).dims(), dk)?);
                }
                if self.wants(input) {
                    let di = kernels::conv2d_grad_input(g.data(), self.value(kernel).data(), geometry);
                    self.accumulate(slots, input, RealArray::new(self.value(input).dims(), di)?);
                }
            }
            Op::BiasAdd(input, bias) => {
                self.accumulate(slots, input, g.clone());
                if self.wants(bias) {
                    let c = self.value(bias).len();
                    let plane = g.len() / c;
                    let db = g.data().chunks_exact(plane).map(|ch| ch.iter().sum()).collect();
                    self.accumulate(slots, bias, RealArray::new(self.value(bias).dims(), db)?);
                }
            }
            Op::Fft(a, inverse) => {
                // The centered transform is unitary; its adjoint is the inverse.
                let (h, w) = (g.dims()[1], g.dims()[2]);
                let d = complex_transform(g.data(), h, w, !inverse);
                self.accumulate(slots, a, RealArray::new(g.dims(), d)?);
            }
            Op::Magnitude(a) => {
                let x = self.value(a).data();
                let n = out.len();
                let mut d = vec![0.0; 2 * n];
                for i in 0..n {
                    let m = out.data()[i];
                    if m > 0.0 {
                        d[i] = g.data()[i] * x[i] / m;
                        d[n + i] = g.data()[i] * x[n + i] / m;
                    }
                }
                self.accumulate(slots, a, RealArray::new(self.value(a).dims(), d)?);
            }
            Op::BoxMean(a, window) => {
                let dims = self.value(a).dims();
                let (p, h, w) = plane_dims(dims)?;
                let d = kernels::box_mean_adjoint(g.data(), p, h, w, window);
                self.accumulate(slots, a, RealArray::new(dims, d)?);
            }
            Op::Concat(a, b) => {
                let split = self.value(a).len();
                if self.wants(a) {
                    let da = RealArray::new(self.value(a).dims(), g.data()[..split].to_vec())?;
                    self.accumulate(slots, a, da);
                }
                if self.wants(b) {
                    let db = RealArray::new(self.value(b).dims(), g.data()[split..].to_vec())?;
                    self.accumulate(slots, b, db);
                }
            }
        }
        Ok(())
    }
}
