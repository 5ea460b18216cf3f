use serde::{Deserialize, Serialize};

use super::dense::{FeedforwardNet, Gradients, Tape};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Encoder into a low-dimensional latent followed by a decoder back to the
/// full output. Downstream consumers read the latent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BottleneckNet<S> {
    pub encoder: FeedforwardNet<S>,
    pub decoder: FeedforwardNet<S>,
}

#[derive(Debug, Clone, Default)]
pub struct BottleneckTape<S> {
    pub encoder: Tape<S>,
    pub decoder: Tape<S>,
}

impl<S: Scalar> BottleneckNet<S> {
    pub fn new(encoder: FeedforwardNet<S>, decoder: FeedforwardNet<S>) -> Result<Self> {
        if encoder.output_dim() != decoder.input_dim() {
            return Err(Error::contract("encoder output must feed the decoder"));
        }
        if encoder.output_dim() >= decoder.output_dim() {
            return Err(Error::contract(format!(
                "latent dimension {} must be below the output dimension {}",
                encoder.output_dim(),
                decoder.output_dim()
            )));
        }
        Ok(BottleneckNet { encoder, decoder })
    }

    pub fn latent_dim(&self) -> usize {
        self.encoder.output_dim()
    }

    pub fn latent(&self, input: &[S]) -> Result<Vec<S>> {
        self.encoder.forward(input)
    }

    pub fn forward(&self, input: &[S]) -> Result<Vec<S>> {
        let z = self.encoder.forward(input)?;
        self.decoder.forward(&z)
    }

    pub fn forward_tape(&self, inputs: &[S], batch: usize) -> Result<BottleneckTape<S>> {
        let encoder = self.encoder.forward_tape(inputs, batch)?;
        let decoder = self.decoder.forward_tape(encoder.output(), batch)?;
        Ok(BottleneckTape { encoder, decoder })
    }

    pub fn tensor_shapes(&self) -> Vec<usize> {
        let mut s = self.encoder.tensor_shapes();
        s.extend(self.decoder.tensor_shapes());
        s
    }

    pub fn tensor_labels(&self) -> Vec<String> {
        let mut l: Vec<String> = self
            .encoder
            .tensor_labels()
            .into_iter()
            .map(|s| format!("encoder {s}"))
            .collect();
        l.extend(self.decoder.tensor_labels().into_iter().map(|s| format!("decoder {s}")));
        l
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [S]> {
        let mut t = self.encoder.tensors_mut();
        t.extend(self.decoder.tensors_mut());
        t
    }

    pub fn all_finite(&self) -> bool {
        self.encoder.all_finite() && self.decoder.all_finite()
    }

    /// Gradients (encoder tensors, then decoder tensors) and the input gradient.
    pub fn backward(&self, tape: &BottleneckTape<S>, output_grad: &[S]) -> Result<(Gradients<S>, Vec<S>)> {
        let (dec, d_latent) = self.decoder.backward(&tape.decoder, output_grad)?;
        let (mut enc, d_input) = self.encoder.backward(&tape.encoder, &d_latent)?;
        enc.tensors.extend(dec.tensors);
        Ok((enc, d_input))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;

    #[test]
    fn latent_must_be_narrower_than_output() {
        let mut rng = RngStream::from_seed(0);
        let enc = FeedforwardNet::<f64>::orthogonal(&[5, 8, 4], 1.0, 1.0, &mut rng).unwrap();
        let dec = FeedforwardNet::<f64>::orthogonal(&[4, 8, 4], 1.0, 1.0, &mut rng).unwrap();
        assert!(BottleneckNet::new(enc, dec).is_err());
    }

    #[test]
    fn latent_has_configured_width() {
        let mut rng = RngStream::from_seed(1);
        let enc = FeedforwardNet::<f64>::orthogonal(&[9, 32, 16, 2], 1.0, 1.0, &mut rng).unwrap();
        let dec = FeedforwardNet::<f64>::orthogonal(&[2, 16, 4], 1.0, 1.0, &mut rng).unwrap();
        let net = BottleneckNet::new(enc, dec).unwrap();
        assert_eq!(net.latent(&[0.1; 9]).unwrap().len(), 2);
        assert_eq!(net.forward(&[0.1; 9]).unwrap().len(), 4);
    }
}
