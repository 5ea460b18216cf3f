use serde::{Deserialize, Serialize};

use super::init::orthogonal;
use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    fn apply<S: Scalar>(self, x: S) -> S {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the activation's output.
    #[inline]
    fn grad_from_output<S: Scalar>(self, y: S) -> S {
        match self {
            Activation::Tanh => S::one() - y * y,
            Activation::Identity => S::one(),
        }
    }
}

/// Dense affine layer; `weights` is `outputs x inputs`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer<S> {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<S>,
    pub bias: Vec<S>,
}

impl<S: Scalar> Layer<S> {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Layer {
            inputs,
            outputs,
            weights: vec![S::zero(); inputs * outputs],
            bias: vec![S::zero(); outputs],
        }
    }

    #[inline]
    fn affine_row(&self, x: &[S], out: &mut [S]) {
        for (o, y) in out.iter_mut().enumerate() {
            let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
            let mut acc = self.bias[o];
            for (w, xi) in row.iter().zip(x) {
                acc += *w * *xi;
            }
            *y = acc;
        }
    }
}

/// Parameter gradients aligned with a network's tensor order
/// (`w0, b0, w1, b1, ...` plus any head-specific tensors appended).
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<S> {
    pub tensors: Vec<Vec<S>>,
}

impl<S: Scalar> Gradients<S> {
    pub fn zeros_like(shapes: &[usize]) -> Self {
        Gradients {
            tensors: shapes.iter().map(|&n| vec![S::zero(); n]).collect(),
        }
    }

    pub fn scale(&mut self, factor: S) {
        for t in &mut self.tensors {
            for g in t.iter_mut() {
                *g *= factor;
            }
        }
    }

    pub fn norm(&self) -> S {
        self.tensors
            .iter()
            .flat_map(|t| t.iter())
            .map(|g| *g * *g)
            .sum::<S>()
            .sqrt()
    }

    /// Rescales so the global L2 norm is at most `max_norm`; returns the pre-clip norm.
    pub fn clip_global_norm(&mut self, max_norm: S) -> S {
        let norm = self.norm();
        if norm > max_norm && norm > S::zero() {
            self.scale(max_norm / norm);
        }
        norm
    }

    pub fn is_zero(&self) -> bool {
        self.tensors.iter().flat_map(|t| t.iter()).all(|g| *g == S::zero())
    }

    pub fn as_slices(&self) -> Vec<&[S]> {
        self.tensors.iter().map(|t| t.as_slice()).collect()
    }
}

/// Activations recorded by a forward pass, consumed by [`FeedforwardNet::backward`].
/// `acts[0]` is the input batch, `acts[k]` the output of layer `k`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Tape<S> {
    batch: usize,
    acts: Vec<Vec<S>>,
}

impl<S: Scalar> Tape<S> {
    pub fn batch(&self) -> usize {
        self.batch
    }

    /// Output rows, `batch x output_dim`.
    pub fn output(&self) -> &[S] {
        self.acts.last().map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn is_empty(&self) -> bool {
        self.acts.is_empty()
    }
}

/// Multilayer perceptron with a shared hidden activation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedforwardNet<S> {
    layers: Vec<Layer<S>>,
    hidden: Activation,
    output: Activation,
}

impl<S: Scalar> FeedforwardNet<S> {
    /// All-zero parameters.
    pub fn zeros(layer_sizes: &[usize], hidden: Activation, output: Activation) -> Result<Self> {
        if layer_sizes.len() < 2 || layer_sizes.contains(&0) {
            return Err(Error::contract(format!(
                "layer sizes {layer_sizes:?}: need at least two positive sizes"
            )));
        }
        Ok(FeedforwardNet {
            layers: layer_sizes
                .windows(2)
                .map(|w| Layer::zeros(w[0], w[1]))
                .collect(),
            hidden,
            output,
        })
    }

    /// Tanh hidden layers, identity output; orthogonal weights with `hidden_gain`
    /// on hidden layers and `output_gain` on the last; zero biases.
    pub fn orthogonal(
        layer_sizes: &[usize],
        hidden_gain: f64,
        output_gain: f64,
        rng: &mut RngStream,
    ) -> Result<Self> {
        let mut net = Self::zeros(layer_sizes, Activation::Tanh, Activation::Identity)?;
        let last = net.layers.len() - 1;
        for (k, layer) in net.layers.iter_mut().enumerate() {
            let gain = if k == last { output_gain } else { hidden_gain };
            let w = orthogonal(layer.outputs, layer.inputs, gain, rng);
            layer.weights = w.into_iter().map(S::lit).collect();
        }
        Ok(net)
    }

    pub fn from_layers(layers: Vec<Layer<S>>, hidden: Activation, output: Activation) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::contract("network needs at least one layer"));
        }
        for l in &layers {
            if l.weights.len() != l.inputs * l.outputs || l.bias.len() != l.outputs {
                return Err(Error::contract("layer tensor shapes inconsistent"));
            }
        }
        for w in layers.windows(2) {
            if w[0].outputs != w[1].inputs {
                return Err(Error::contract(format!(
                    "layer dimensions incompatible: {} -> {}",
                    w[0].outputs, w[1].inputs
                )));
            }
        }
        Ok(FeedforwardNet {
            layers,
            hidden,
            output,
        })
    }

    pub fn layers(&self) -> &[Layer<S>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<S>] {
        &mut self.layers
    }

    pub fn hidden_activation(&self) -> Activation {
        self.hidden
    }

    pub fn output_activation(&self) -> Activation {
        self.output
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
        self.layers.last().map(|l| l.outputs).unwrap_or(0)
    }

    pub fn tensor_shapes(&self) -> Vec<usize> {
        self.layers
            .iter()
            .flat_map(|l| [l.weights.len(), l.bias.len()])
            .collect()
    }

    pub fn tensor_labels(&self) -> Vec<String> {
        (0..self.layers.len())
            .flat_map(|k| [format!("layer {k} weights"), format!("layer {k} bias")])
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [S]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weights.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }

    pub fn tensors(&self) -> Vec<&[S]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weights.as_slice(), l.bias.as_slice()])
            .collect()
    }

    pub fn zero_gradients(&self) -> Gradients<S> {
        Gradients::zeros_like(&self.tensor_shapes())
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    fn activation(&self, k: usize) -> Activation {
        if k + 1 == self.layers.len() {
            self.output
        } else {
            self.hidden
        }
    }

    fn check_input(&self, len: usize, batch: usize) -> Result<()> {
        if len != batch * self.input_dim() {
            return Err(Error::contract(format!(
                "input has {len} values, expected {batch} x {}",
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Single-sample evaluation without recording activations.
    pub fn forward(&self, input: &[S]) -> Result<Vec<S>> {
        self.check_input(input.len(), 1)?;
        let mut cur = input.to_vec();
        for (k, layer) in self.layers.iter().enumerate() {
            let mut next = vec![S::zero(); layer.outputs];
            layer.affine_row(&cur, &mut next);
            let act = self.activation(k);
            for v in &mut next {
                *v = act.apply(*v);
            }
            cur = next;
        }
        Ok(cur)
    }

    /// Batched evaluation of `batch` row-major inputs, recording activations.
    pub fn forward_tape(&self, inputs: &[S], batch: usize) -> Result<Tape<S>> {
        self.check_input(inputs.len(), batch)?;
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(inputs.to_vec());
        for (k, layer) in self.layers.iter().enumerate() {
            let prev = &acts[k];
            let mut out = vec![S::zero(); batch * layer.outputs];
            let act = self.activation(k);
            for b in 0..batch {
                let x = &prev[b * layer.inputs..(b + 1) * layer.inputs];
                let y = &mut out[b * layer.outputs..(b + 1) * layer.outputs];
                layer.affine_row(x, y);
                for v in y.iter_mut() {
                    *v = act.apply(*v);
                }
            }
            acts.push(out);
        }
        Ok(Tape { batch, acts })
    }

    /// Reverse-mode pass over a recorded batch. Parameter gradients are summed
    /// over the batch into `grads`; the returned vector holds per-row input
    /// gradients.
    pub fn backward_into(
        &self,
        tape: &Tape<S>,
        output_grad: &[S],
        grads: &mut Gradients<S>,
    ) -> Result<Vec<S>> {
        if tape.acts.is_empty() {
            return Err(Error::contract("backward called without a recorded forward pass"));
        }
        if tape.acts.len() != self.layers.len() + 1
            || tape.acts[0].len() != tape.batch * self.input_dim()
        {
            return Err(Error::contract("tape was recorded by a different architecture"));
        }
        let batch = tape.batch;
        if output_grad.len() != batch * self.output_dim() {
            return Err(Error::contract(format!(
                "output gradient has {} values, expected {batch} x {}",
                output_grad.len(),
                self.output_dim()
            )));
        }
        if grads.tensors.len() < 2 * self.layers.len() {
            return Err(Error::contract("gradient buffer has too few tensors"));
        }

        let last = self.layers.len() - 1;
        let out_act = self.activation(last);
        let mut delta: Vec<S> = output_grad
            .iter()
            .zip(&tape.acts[last + 1])
            .map(|(g, y)| *g * out_act.grad_from_output(*y))
            .collect();

        for k in (0..self.layers.len()).rev() {
            let layer = &self.layers[k];
            let (n_in, n_out) = (layer.inputs, layer.outputs);
            let input = &tape.acts[k];
            {
                let (gw, rest) = grads.tensors[2 * k..].split_at_mut(1);
                let gw = &mut gw[0];
                let gb = &mut rest[0];
                for b in 0..batch {
                    let d = &delta[b * n_out..(b + 1) * n_out];
                    let x = &input[b * n_in..(b + 1) * n_in];
                    for (o, &dv) in d.iter().enumerate() {
                        if dv == S::zero() {
                            continue;
                        }
                        gb[o] += dv;
                        let row = &mut gw[o * n_in..(o + 1) * n_in];
                        for (g, &xi) in row.iter_mut().zip(x) {
                            *g += dv * xi;
                        }
                    }
                }
            }
            let mut din = vec![S::zero(); batch * n_in];
            for b in 0..batch {
                let d = &delta[b * n_out..(b + 1) * n_out];
                let out = &mut din[b * n_in..(b + 1) * n_in];
                for (o, &dv) in d.iter().enumerate() {
                    if dv == S::zero() {
                        continue;
                    }
                    let row = &layer.weights[o * n_in..(o + 1) * n_in];
                    for (g, &w) in out.iter_mut().zip(row) {
                        *g += dv * w;
                    }
                }
            }
            if k > 0 {
                let act = self.activation(k - 1);
                for (g, y) in din.iter_mut().zip(input) {
                    *g *= act.grad_from_output(*y);
                }
            }
            delta = din;
        }
        Ok(delta)
    }

    /// Convenience wrapper returning fresh gradients and the input gradient.
    pub fn backward(&self, tape: &Tape<S>, output_grad: &[S]) -> Result<(Gradients<S>, Vec<S>)> {
        let mut grads = self.zero_gradients();
        let input_grad = self.backward_into(tape, output_grad, &mut grads)?;
        Ok((grads, input_grad))
    }
}
