//! The K-cascade unrolled network.
//!
//! Cascade `k` maps a k-space estimate `x_k` to
//!
//! ```text
//! x_{k+1} = x_k - eta_k A^T (A x_k - y) + eta_k mu F f_theta(F^-1 x_k)
//! ```
//!
//! where `f_theta` is a small convolutional network on the two-channel
//! image. With grounded parameters `eta_k = delta_k lambda / sigma^2` and
//! `mu = sigma^2`, which makes the update one forward Euler step of the
//! conditional velocity field `lambda f_theta - lambda A^T (A x - y) / sigma^2`.
//!
//! Every forward pass is recorded on a [`Tape`]; the plain functions bind
//! the parameters as constants, so plain and differentiable evaluations run
//! the same arithmetic and agree bit for bit.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::array::RealArray;
use crate::autodiff::{NodeId, Tape};
use crate::error::{config_err, shape_err, Error, Result};
use crate::flow::CascadeSchedule;
use crate::grid::ComplexGrid;
use crate::physics::SamplingMask;
use crate::rng::Rng;

/// One `conv -> bias -> (relu)` block.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    /// `[C_out, C_in, k, k]`, `k` odd.
    pub kernel: RealArray,
    /// `[C_out]`.
    pub bias: RealArray,
    pub relu: bool,
}

impl ConvLayer {
    fn in_channels(&self) -> usize {
        self.kernel.dims()[1]
    }

    fn pad(&self) -> usize {
        (self.kernel.dims()[2] - 1) / 2
    }
}

/// Shape-preserving image-space regularizer `f_theta`. The output has two
/// channels (real, imaginary); the input has two, or three when the cascade
/// time is appended as a constant channel.
#[derive(Debug, Clone, PartialEq)]
pub struct RegularizerNet {
    layers: Vec<ConvLayer>,
}

impl RegularizerNet {
    pub fn new(layers: Vec<ConvLayer>) -> Result<Self> {
        let Some(first) = layers.first() else {
            return Err(config_err!("regularizer needs at least one layer"));
        };
        if !matches!(first.in_channels(), 2 | 3) {
            return Err(shape_err!("regularizer input must have 2 or 3 channels"));
        }
        let mut channels = first.in_channels();
        for (i, layer) in layers.iter().enumerate() {
            let d = layer.kernel.dims();
            if d.len() != 4 || d[2] != d[3] || d[2] % 2 == 0 {
                return Err(shape_err!("layer {i}: kernel must be [C_out, C_in, k, k] with odd k, got {d:?}"));
            }
            if d[1] != channels {
                return Err(shape_err!("layer {i}: expects {} input channels, previous layer gives {channels}", d[1]));
            }
            if layer.bias.dims() != [d[0]] {
                return Err(shape_err!("layer {i}: bias {:?} does not match {} outputs", layer.bias.dims(), d[0]));
            }
            channels = d[0];
        }
        if channels != 2 {
            return Err(shape_err!("regularizer must output 2 channels, got {channels}"));
        }
        Ok(Self { layers })
    }

    /// `in -> hidden -> hidden -> 2`, 3x3 kernels, relu between layers.
    /// Kernels and biases start uniform in `+-1/sqrt(fan_in)`.
    pub fn standard(in_channels: usize, hidden: usize, rng: &mut Rng) -> Result<Self> {
        let plan = [(in_channels, hidden, true), (hidden, hidden, true), (hidden, 2, false)];
        let layers = plan
            .iter()
            .map(|&(c_in, c_out, relu)| {
                let bound = 1.0 / libm::sqrt((c_in * 9) as f64);
                let kernel = (0..c_out * c_in * 9).map(|_| rng.uniform_in(-bound, bound)).collect();
                let bias = (0..c_out).map(|_| rng.uniform_in(-bound, bound)).collect();
                Ok(ConvLayer {
                    kernel: RealArray::new(&[c_out, c_in, 3, 3], kernel)?,
                    bias: RealArray::new(&[c_out], bias)?,
                    relu,
                })
            })
            .collect::<Result<_>>()?;
        Self::new(layers)
    }

    /// Single 1x1 layer passing both channels through unchanged.
    pub fn identity() -> Self {
        let kernel = RealArray::new(&[2, 2, 1, 1], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        Self::new(vec![ConvLayer {
            kernel,
            bias: RealArray::zeros(&[2]),
            relu: false,
        }])
        .unwrap()
    }

    pub fn layers(&self) -> &[ConvLayer] {
        &self.layers
    }

    pub fn in_channels(&self) -> usize {
        self.layers[0].in_channels()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.kernel.len() + l.bias.len()).sum()
    }

    /// Same architecture with every weight and bias set to zero.
    pub fn zeroed(&self) -> Self {
        let layers = self
            .layers
            .iter()
            .map(|l| ConvLayer {
                kernel: RealArray::zeros(l.kernel.dims()),
                bias: RealArray::zeros(l.bias.dims()),
                relu: l.relu,
            })
            .collect();
        Self { layers }
    }

    fn same_architecture(&self, other: &Self) -> bool {
        self.layers.len() == other.layers.len()
            && self.layers.iter().zip(&other.layers).all(|(a, b)| {
                a.kernel.dims() == b.kernel.dims() && a.relu == b.relu
            })
    }
}

/// Where `eta_k` and `mu` come from.
#[derive(Debug, Clone, PartialEq)]
pub enum StepParameters {
    /// Taken from the grounded schedule; not trained.
    Grounded,
    /// Trained scalars.
    Learnable { eta: Vec<f64>, mu: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnrolledModel {
    schedule: CascadeSchedule,
    regularizers: Vec<RegularizerNet>,
    weight_sharing: bool,
    steps: StepParameters,
}

/// Options for [`UnrolledModel::standard`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelOptions {
    pub hidden: usize,
    pub weight_sharing: bool,
    /// Use the schedule's `eta_k`, `mu`; otherwise learn them from 1.0.
    pub grounded: bool,
    pub seed: u64,
}

impl Default for ModelOptions {
    fn default() -> Self {
        Self {
            hidden: 16,
            weight_sharing: false,
            grounded: true,
            seed: 0,
        }
    }
}

impl UnrolledModel {
    pub fn new(
        schedule: CascadeSchedule,
        regularizers: Vec<RegularizerNet>,
        weight_sharing: bool,
        steps: StepParameters,
    ) -> Result<Self> {
        let k = schedule.cascades();
        let expected = if weight_sharing { 1 } else { k };
        if regularizers.len() != expected {
            return Err(config_err!(
                "{} regularizers for {k} cascades (weight sharing: {weight_sharing})",
                regularizers.len()
            ));
        }
        let want_channels = if weight_sharing { 3 } else { 2 };
        for net in &regularizers {
            if net.in_channels() != want_channels {
                return Err(shape_err!(
                    "regularizer takes {} channels, expected {want_channels}",
                    net.in_channels()
                ));
            }
            if !net.same_architecture(&regularizers[0]) {
                return Err(shape_err!("regularizers differ in architecture"));
            }
        }
        if let StepParameters::Learnable { eta, mu } = &steps {
            if eta.len() != k || !mu.is_finite() || eta.iter().any(|e| !e.is_finite()) {
                return Err(Error::Contract(format!(
                    "learnable step parameters need {k} finite step sizes and a finite weight"
                )));
            }
        }
        Ok(Self {
            schedule,
            regularizers,
            weight_sharing,
            steps,
        })
    }

    /// Standard regularizers per cascade (or one shared, with a time
    /// channel), seeded from `options.seed`.
    pub fn standard(schedule: CascadeSchedule, options: ModelOptions) -> Result<Self> {
        let k = schedule.cascades();
        let mut rng = Rng::new(options.seed);
        let (count, channels) = if options.weight_sharing { (1, 3) } else { (k, 2) };
        let regularizers = (0..count)
            .map(|_| RegularizerNet::standard(channels, options.hidden, &mut rng))
            .collect::<Result<_>>()?;
        let steps = if options.grounded {
            StepParameters::Grounded
        } else {
            StepParameters::Learnable {
                eta: vec![1.0; k],
                mu: 1.0,
            }
        };
        Self::new(schedule, regularizers, options.weight_sharing, steps)
    }

    pub fn schedule(&self) -> &CascadeSchedule {
        &self.schedule
    }

    pub fn cascades(&self) -> usize {
        self.schedule.cascades()
    }

    pub fn regularizers(&self) -> &[RegularizerNet] {
        &self.regularizers
    }

    pub fn weight_sharing(&self) -> bool {
        self.weight_sharing
    }

    pub fn steps(&self) -> &StepParameters {
        &self.steps
    }

    pub fn is_grounded(&self) -> bool {
        self.steps == StepParameters::Grounded
    }

    /// Regularizer used by cascade `k`.
    pub fn regularizer(&self, k: usize) -> &RegularizerNet {
        if self.weight_sharing {
            &self.regularizers[0]
        } else {
            &self.regularizers[k]
        }
    }

    /// `(eta_k, mu)` as used by cascade `k`.
    pub fn step(&self, k: usize) -> (f64, f64) {
        match &self.steps {
            StepParameters::Grounded => (self.schedule.eta()[k], self.schedule.mu()),
            StepParameters::Learnable { eta, mu } => (eta[k], *mu),
        }
    }

    fn time_channel(&self, k: usize) -> Option<f64> {
        self.weight_sharing.then(|| self.schedule.t()[k])
    }

    /// Every trainable array in a fixed order: regularizer layers (kernel,
    /// bias) by store entry, then the learnable step sizes, then `mu`.
    /// Names are `cascadeNN.layerL.kernel`, `shared.layerL.bias`, `eta`, `mu`.
    pub fn named_parameters(&self) -> Vec<(String, RealArray)> {
        let mut out = Vec::new();
        for (i, net) in self.regularizers.iter().enumerate() {
            let key = if self.weight_sharing {
                String::from("shared")
            } else {
                format!("cascade{i:02}")
            };
            for (l, layer) in net.layers.iter().enumerate() {
                out.push((format!("{key}.layer{l}.kernel"), layer.kernel.clone()));
                out.push((format!("{key}.layer{l}.bias"), layer.bias.clone()));
            }
        }
        if let StepParameters::Learnable { eta, mu } = &self.steps {
            out.push((String::from("eta"), RealArray::from_slice(eta)));
            out.push((String::from("mu"), RealArray::scalar(*mu)));
        }
        out
    }

    pub fn parameters(&self) -> Vec<RealArray> {
        self.named_parameters().into_iter().map(|(_, a)| a).collect()
    }

    /// Replaces every trainable array, in [`Self::named_parameters`] order.
    pub fn set_parameters(&mut self, values: Vec<RealArray>) -> Result<()> {
        let current = self.parameters();
        if values.len() != current.len() {
            return Err(shape_err!("expected {} parameter arrays, got {}", current.len(), values.len()));
        }
        for (i, (new, old)) in values.iter().zip(&current).enumerate() {
            if new.dims() != old.dims() {
                return Err(shape_err!("parameter {i}: {:?} != {:?}", new.dims(), old.dims()));
            }
        }
        let mut it = values.into_iter();
        for net in &mut self.regularizers {
            for layer in &mut net.layers {
                layer.kernel = it.next().unwrap();
                layer.bias = it.next().unwrap();
            }
        }
        if let StepParameters::Learnable { eta, mu } = &mut self.steps {
            *eta = it.next().unwrap().into_data();
            *mu = it.next().unwrap().data()[0];
        }
        Ok(())
    }

    pub fn parameter_count(&self) -> usize {
        self.parameters().iter().map(RealArray::len).sum()
    }

    /// Registers the parameters on `tape`: as trainable leaves when
    /// `trainable`, otherwise as constants.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Result<ModelBinding> {
        let leaf = |tape: &mut Tape, a: &RealArray| {
            if trainable {
                tape.parameter(a.clone())
            } else {
                tape.constant(a.clone())
            }
        };
        let mut regularizers = Vec::new();
        for net in &self.regularizers {
            let mut layers = Vec::new();
            for layer in &net.layers {
                let k = leaf(tape, &layer.kernel)?;
                let b = leaf(tape, &layer.bias)?;
                layers.push((k, b));
            }
            regularizers.push(layers);
        }
        let steps = match &self.steps {
            StepParameters::Grounded => None,
            StepParameters::Learnable { eta, mu } => {
                let eta_nodes = eta
                    .iter()
                    .map(|&e| leaf(tape, &RealArray::scalar(e)))
                    .collect::<Result<Vec<_>>>()?;
                let mu_node = leaf(tape, &RealArray::scalar(*mu))?;
                Some((eta_nodes, mu_node))
            }
        };
        Ok(ModelBinding { regularizers, steps })
    }
}

/// Node handles of a model's parameters on one tape.
#[derive(Debug, Clone)]
pub struct ModelBinding {
    regularizers: Vec<Vec<(NodeId, NodeId)>>,
    steps: Option<(Vec<NodeId>, NodeId)>,
}

impl ModelBinding {
    /// Gradients in [`UnrolledModel::named_parameters`] order. Parameters
    /// that did not influence the loss get zeros.
    pub fn collect_gradients(
        &self,
        grads: &mut crate::autodiff::Gradients,
        model: &UnrolledModel,
    ) -> Vec<RealArray> {
        let params = model.parameters();
        let mut out = Vec::with_capacity(params.len());
        let mut p = params.iter();
        for layers in &self.regularizers {
            for &(k, b) in layers {
                for id in [k, b] {
                    let shape = p.next().unwrap();
                    out.push(grads.take(id).unwrap_or_else(|| RealArray::zeros(shape.dims())));
                }
            }
        }
        if let Some((eta, mu)) = &self.steps {
            let data = eta
                .iter()
                .map(|&id| grads.get(id).map_or(0.0, |g| g.data()[0]))
                .collect::<Vec<_>>();
            out.push(RealArray::from_slice(&data));
            out.push(RealArray::scalar(grads.get(*mu).map_or(0.0, |g| g.data()[0])));
        }
        out
    }
}

/// `[2, H, W]` array with ones on kept columns.
pub fn mask_channels(mask: &SamplingMask, height: usize) -> RealArray {
    let w = mask.width;
    let mut data = vec![0.0; 2 * height * w];
    for (i, v) in data.iter_mut().enumerate() {
        if mask.kept_columns[i % w] {
            *v = 1.0;
        }
    }
    RealArray::new(&[2, height, w], data).unwrap()
}

fn divergence_at(cascade: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::NonFinite(_) => Error::Divergence { cascade },
        other => other,
    }
}

/// Records `F f_theta(F^-1 x)` for a `[2, H, W]` k-space node.
pub fn regularizer_on_tape(
    tape: &mut Tape,
    x: NodeId,
    layers: &[(NodeId, NodeId)],
    net: &RegularizerNet,
    time_channel: Option<f64>,
) -> Result<NodeId> {
    let dims = tape.value(x).dims().to_vec();
    if dims.len() != 3 || dims[0] != 2 {
        return Err(shape_err!("expected a [2, H, W] k-space array, got {dims:?}"));
    }
    let wanted = 2 + usize::from(time_channel.is_some());
    if net.in_channels() != wanted {
        return Err(shape_err!(
            "regularizer takes {} channels but the input provides {wanted}",
            net.in_channels()
        ));
    }
    let image = tape.ifft2c(x)?;
    let mut h = match time_channel {
        Some(t) => {
            let plane = tape.constant(RealArray::filled(&[1, dims[1], dims[2]], t))?;
            tape.concat_channels(image, plane)?
        }
        None => image,
    };
    for (layer, &(k, b)) in net.layers.iter().zip(layers) {
        h = tape.conv2d(h, k, layer.pad())?;
        h = tape.bias_add(h, b)?;
        if layer.relu {
            h = tape.relu(h)?;
        }
    }
    tape.fft2c(h)
}

/// Constant inputs of one reconstruction, as tape nodes.
#[derive(Debug, Clone, Copy)]
pub struct Observation {
    pub y: NodeId,
    pub mask: NodeId,
}

impl Observation {
    pub fn bind(tape: &mut Tape, y: &ComplexGrid, mask: &SamplingMask) -> Result<Self> {
        if y.width() != mask.width {
            return Err(shape_err!("mask width {} != grid width {}", mask.width, y.width()));
        }
        Ok(Self {
            y: tape.constant(y.to_channels())?,
            mask: tape.constant(mask_channels(mask, y.height()))?,
        })
    }
}

/// Records cascade `k` on the tape and returns `x_{k+1}`.
pub fn cascade_on_tape(
    tape: &mut Tape,
    x: NodeId,
    obs: Observation,
    k: usize,
    model: &UnrolledModel,
    binding: &ModelBinding,
) -> Result<NodeId> {
    if k >= model.cascades() {
        return Err(Error::Contract(format!(
            "cascade {k} out of range for {} cascades",
            model.cascades()
        )));
    }
    let record = |tape: &mut Tape| -> Result<NodeId> {
        let store = if model.weight_sharing { 0 } else { k };
        let masked = tape.mul(x, obs.mask)?;
        let residual = tape.sub(masked, obs.y)?;
        let dc = tape.mul(residual, obs.mask)?;
        let phi = regularizer_on_tape(
            tape,
            x,
            &binding.regularizers[store],
            model.regularizer(k),
            model.time_channel(k),
        )?;
        let (step_dc, step_phi) = match &binding.steps {
            None => {
                let (eta, mu) = model.step(k);
                (tape.scale(dc, eta)?, tape.scale(phi, eta * mu)?)
            }
            Some((eta, mu)) => {
                let eta_mu = tape.mul(eta[k], *mu)?;
                (tape.scale_by(dc, eta[k])?, tape.scale_by(phi, eta_mu)?)
            }
        };
        let moved = tape.sub(x, step_dc)?;
        tape.add(moved, step_phi)
    };
    record(tape).map_err(divergence_at(k))
}

/// Records all cascades from `x_0 = A^T y`; returns the K+1 state nodes.
pub fn unrolled_on_tape(
    tape: &mut Tape,
    obs: Observation,
    model: &UnrolledModel,
    binding: &ModelBinding,
) -> Result<Vec<NodeId>> {
    let x0 = tape.mul(obs.y, obs.mask)?;
    let mut states = vec![x0];
    for k in 0..model.cascades() {
        let next = cascade_on_tape(tape, states[k], obs, k, model, binding)?;
        states.push(next);
    }
    Ok(states)
}

fn grid_of(tape: &Tape, id: NodeId) -> Result<ComplexGrid> {
    ComplexGrid::from_channels(tape.value(id))
}

/// `F f_theta(F^-1 x)` for a k-space grid. `time_channel` must be given
/// exactly when the network takes three input channels.
pub fn regularizer_apply(
    x: &ComplexGrid,
    net: &RegularizerNet,
    time_channel: Option<f64>,
) -> Result<ComplexGrid> {
    let mut tape = Tape::new();
    let input = tape.constant(x.to_channels())?;
    let mut layers = Vec::new();
    for layer in &net.layers {
        let k = tape.constant(layer.kernel.clone())?;
        let b = tape.constant(layer.bias.clone())?;
        layers.push((k, b));
    }
    let out = regularizer_on_tape(&mut tape, input, &layers, net, time_channel)?;
    grid_of(&tape, out)
}

/// One cascade: `x_k - eta_k A^T(A x_k - y) + eta_k mu Phi_k(x_k)`.
pub fn cascade_update(
    x_k: &ComplexGrid,
    y: &ComplexGrid,
    mask: &SamplingMask,
    k: usize,
    model: &UnrolledModel,
) -> Result<ComplexGrid> {
    x_k.expect_same_shape(y)?;
    let mut tape = Tape::new();
    let binding = model.bind(&mut tape, false)?;
    let obs = Observation::bind(&mut tape, y, mask)?;
    let x = tape.constant(x_k.to_channels())?;
    let next = cascade_on_tape(&mut tape, x, obs, k, model, &binding)?;
    grid_of(&tape, next)
}

/// Runs every cascade from the zero-filled estimate and returns
/// `x_0, ..., x_K`.
pub fn forward_unrolled(
    y: &ComplexGrid,
    mask: &SamplingMask,
    model: &UnrolledModel,
) -> Result<Vec<ComplexGrid>> {
    let mut tape = Tape::new();
    let binding = model.bind(&mut tape, false)?;
    let obs = Observation::bind(&mut tape, y, mask)?;
    let states = unrolled_on_tape(&mut tape, obs, model, &binding)?;
    states.iter().map(|&id| grid_of(&tape, id)).collect()
}
