//! The learned skinning-weight field: a small MLP over the rig-agnostic
//! pose encoding, with a softmax head and hand-written backpropagation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{homogeneous, HomogeneousTransform, Point2};

/// Negative-side slope of the hidden activations.
pub const LEAKY_SLOPE: f64 = 0.1;

/// Default hidden layer widths.
pub const HIDDEN_LAYERS: [usize; 3] = [64, 64, 64];

#[inline]
fn leaky(z: f64) -> f64 {
    if z > 0.0 {
        z
    } else {
        LEAKY_SLOPE * z
    }
}

#[inline]
fn leaky_slope(z: f64) -> f64 {
    if z > 0.0 {
        1.0
    } else {
        LEAKY_SLOPE
    }
}

/// A query point expressed in every real bone's posed local frame,
/// `(x, y, z)` of `posed_b^-1 x` concatenated over bones.
#[derive(Clone, Debug, PartialEq)]
pub struct PoseEncoding(pub Vec<f64>);

impl PoseEncoding {
    pub fn from_frames(frames: &[HomogeneousTransform], x: Point2) -> Result<Self> {
        let inverses = frames.iter().map(|f| f.inverse()).collect::<Result<Vec<_>>>()?;
        Ok(Self::from_inverses(&inverses, x))
    }

    /// Encode with frames that are already inverted.
    pub fn from_inverses(inverse_frames: &[HomogeneousTransform], x: Point2) -> Self {
        let h = homogeneous(x);
        let mut out = Vec::with_capacity(3 * inverse_frames.len());
        for inv in inverse_frames {
            let p = inv.apply(h);
            out.extend_from_slice(&p[..3]);
        }
        Self(out)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// One affine layer; `w` is `outputs x inputs`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Layer {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            w: vec![0.0; inputs * outputs],
            b: vec![0.0; outputs],
        }
    }

    fn affine(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.w.chunks_exact(self.inputs).zip(&self.b).map(|(row, b)| {
            let mut acc = *b;
            for (wi, xi) in row.iter().zip(x) {
                acc += wi * xi;
            }
            acc
        }));
    }
}

/// Activations cached by a forward pass.
#[derive(Clone, Debug, Default)]
pub struct Tape {
    /// Input to each layer; entry 0 is the encoding.
    inputs: Vec<Vec<f64>>,
    /// Pre-activation output of each layer; the last one is the logits.
    pre: Vec<Vec<f64>>,
}

impl Tape {
    pub fn logits(&self) -> &[f64] {
        self.pre.last().map(Vec::as_slice).unwrap_or(&[])
    }

    /// Pre-activations of the hidden layers, for kink diagnostics.
    pub fn hidden_pre_activations(&self) -> impl Iterator<Item = f64> + '_ {
        self.pre[..self.pre.len().saturating_sub(1)].iter().flatten().copied()
    }
}

/// MLP parameters mapping a `3B` encoding to `B + 1` logits (or `B` when the
/// ghost channel is disabled).
#[derive(Clone, Debug, PartialEq)]
pub struct WeightNet {
    layers: Vec<Layer>,
    seed: u64,
}

/// Parameter gradients with the same shape as a [`WeightNet`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Layer>,
}

impl Gradients {
    pub fn zeros_like(net: &WeightNet) -> Self {
        Self {
            layers: net.layers.iter().map(|l| Layer::zeros(l.inputs, l.outputs)).collect(),
        }
    }

    pub fn clear(&mut self) {
        for l in &mut self.layers {
            l.w.iter_mut().for_each(|v| *v = 0.0);
            l.b.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for l in &mut self.layers {
            l.w.iter_mut().chain(l.b.iter_mut()).for_each(|v| *v *= s);
        }
    }

    pub fn add_scaled(&mut self, s: f64, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.w.iter_mut().zip(&b.w).for_each(|(x, y)| *x += s * y);
            a.b.iter_mut().zip(&b.b).for_each(|(x, y)| *x += s * y);
        }
    }

    /// All entries in the flat order used by [`WeightNet::param`].
    pub fn flat(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.w.iter().chain(&l.b).copied())
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.w.iter().chain(&l.b).all(|v| v.is_finite()))
    }
}

impl WeightNet {
    /// Fan-balanced uniform initialization, zero biases.
    pub fn new(layer_sizes: &[usize], seed: u64) -> Result<Self> {
        if layer_sizes.len() < 2 || layer_sizes.contains(&0) {
            return Err(Error::invalid(format!("bad layer sizes {layer_sizes:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = layer_sizes
            .windows(2)
            .map(|pair| {
                let (fan_in, fan_out) = (pair[0], pair[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let mut layer = Layer::zeros(fan_in, fan_out);
                layer.w.iter_mut().for_each(|w| *w = rng.gen_range(-limit..limit));
                layer
            })
            .collect();
        Ok(Self { layers, seed })
    }

    /// The default architecture for a rig with `bone_count` bones.
    pub fn for_rig(bone_count: usize, ghost: bool, seed: u64) -> Result<Self> {
        let mut sizes = vec![3 * bone_count];
        sizes.extend_from_slice(&HIDDEN_LAYERS);
        sizes.push(bone_count + usize::from(ghost));
        Self::new(&sizes, seed)
    }

    /// Rebuild from explicit layers, checking that dimensions chain and values are finite.
    pub fn from_layers(layers: Vec<Layer>, seed: u64) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("network has no layers"));
        }
        for (k, l) in layers.iter().enumerate() {
            if l.inputs == 0 || l.outputs == 0 || l.inputs.checked_mul(l.outputs) != Some(l.w.len()) || l.b.len() != l.outputs {
                return Err(Error::invalid(format!("layer {k} has inconsistent shape")));
            }
            if !l.w.iter().chain(&l.b).all(|v| v.is_finite()) {
                return Err(Error::invalid(format!("layer {k} has non-finite parameters")));
            }
        }
        for (k, pair) in layers.windows(2).enumerate() {
            if pair[0].outputs != pair[1].inputs {
                return Err(Error::invalid(format!(
                    "layer {k} outputs {} but layer {} takes {}",
                    pair[0].outputs,
                    k + 1,
                    pair[1].inputs
                )));
            }
        }
        Ok(Self { layers, seed })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.layers[0].inputs];
        sizes.extend(self.layers.iter().map(|l| l.outputs));
        sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs
    }

    /// Number of real bones the input encoding covers.
    pub fn bone_count(&self) -> usize {
        self.input_dim() / 3
    }

    /// Whether the output carries the extra background channel.
    pub fn has_ghost(&self) -> bool {
        self.output_dim() == self.bone_count() + 1
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    fn locate_param(&self, mut index: usize) -> (usize, bool, usize) {
        for (k, l) in self.layers.iter().enumerate() {
            if index < l.w.len() {
                return (k, true, index);
            }
            index -= l.w.len();
            if index < l.b.len() {
                return (k, false, index);
            }
            index -= l.b.len();
        }
        panic!("parameter index out of range");
    }

    /// Parameter by flat index: each layer's weights then biases, in layer order.
    pub fn param(&self, index: usize) -> f64 {
        let (k, is_w, i) = self.locate_param(index);
        if is_w {
            self.layers[k].w[i]
        } else {
            self.layers[k].b[i]
        }
    }

    pub fn set_param(&mut self, index: usize, value: f64) {
        let (k, is_w, i) = self.locate_param(index);
        if is_w {
            self.layers[k].w[i] = value;
        } else {
            self.layers[k].b[i] = value;
        }
    }

    /// Logits for one encoding, plus the activations needed for backprop.
    pub fn forward(&self, encoding: &[f64]) -> Result<(Vec<f64>, Tape)> {
        if encoding.len() != self.input_dim() {
            return Err(Error::invalid(format!(
                "encoding has length {}, network expects {}",
                encoding.len(),
                self.input_dim()
            )));
        }
        let depth = self.layers.len();
        let mut tape = Tape {
            inputs: Vec::with_capacity(depth),
            pre: Vec::with_capacity(depth),
        };
        let mut x = encoding.to_vec();
        for (k, layer) in self.layers.iter().enumerate() {
            let mut z = Vec::with_capacity(layer.outputs);
            layer.affine(&x, &mut z);
            if !z.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFiniteActivation { layer: k });
            }
            let next = if k + 1 < depth { z.iter().map(|v| leaky(*v)).collect() } else { Vec::new() };
            tape.inputs.push(std::mem::replace(&mut x, next));
            tape.pre.push(z);
        }
        Ok((tape.logits().to_vec(), tape))
    }

    /// Reverse pass: accumulate parameter gradients of `<upstream, logits>`
    /// into `grads` and return the gradient with respect to the encoding.
    pub fn backward_into(&self, tape: &Tape, upstream: &[f64], grads: &mut Gradients) -> Vec<f64> {
        debug_assert_eq!(upstream.len(), self.output_dim());
        let mut delta = upstream.to_vec();
        for k in (0..self.layers.len()).rev() {
            let layer = &self.layers[k];
            let g = &mut grads.layers[k];
            let input = &tape.inputs[k];
            let mut d_in = vec![0.0; layer.inputs];
            for (o, d) in delta.iter().enumerate() {
                g.b[o] += d;
                if *d == 0.0 {
                    continue;
                }
                let row = o * layer.inputs;
                let w_row = &layer.w[row..row + layer.inputs];
                let g_row = &mut g.w[row..row + layer.inputs];
                for i in 0..layer.inputs {
                    g_row[i] += d * input[i];
                    d_in[i] += w_row[i] * d;
                }
            }
            if k > 0 {
                for (di, z) in d_in.iter_mut().zip(&tape.pre[k - 1]) {
                    *di *= leaky_slope(*z);
                }
            }
            delta = d_in;
        }
        delta
    }

    /// Gradients of `<upstream, logits>` with respect to every parameter and the input.
    pub fn backward(&self, tape: &Tape, upstream: &[f64]) -> (Gradients, Vec<f64>) {
        let mut grads = Gradients::zeros_like(self);
        let input_grad = self.backward_into(tape, upstream, &mut grads);
        (grads, input_grad)
    }

    /// Softmax weights at a posed query: `W(x | theta)`.
    pub fn weights_at(&self, posed_frames: &[HomogeneousTransform], x: Point2) -> Result<Vec<f64>> {
        let enc = PoseEncoding::from_frames(posed_frames, x)?;
        let (logits, _) = self.forward(enc.as_slice())?;
        Ok(softmax(&logits))
    }
}

/// Numerically stable softmax (max subtracted before exponentiating).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= sum);
    out
}

/// Pull a gradient on softmax outputs back to the logits.
pub fn softmax_backward(weights: &[f64], d_weights: &[f64]) -> Vec<f64> {
    let dot: f64 = weights.iter().zip(d_weights).map(|(w, d)| w * d).sum();
    weights.iter().zip(d_weights).map(|(w, d)| w * (d - dot)).collect()
}
