//! Shared network building blocks: the dilated residual encoder, the
//! four-stage decoder, and the convolutional LSTM with its bi-directional
//! sequence driver.

mod convlstm;
mod decoder;
mod encoder;

pub use convlstm::{bidirectional_pass, ConvLstm, LstmState};
pub use decoder::{Decoder, DecoderConfig};
pub use encoder::{DilatedEncoder, EncoderConfig, EncoderOut};

use crate::params::{he_normal, Bound, ParamId, ParamStore};
use crate::tensor::{Graph, Var};
use ndarray::{ArrayD, IxDyn};
use rand_chacha::ChaCha8Rng;

const BN_EPS: f64 = 1e-5;

/// A single 2-D convolution with bias.
pub(crate) struct ConvLayer {
    w: ParamId,
    b: ParamId,
    stride: usize,
    pad: usize,
    dilation: usize,
}

impl ConvLayer {
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        k: usize,
        stride: usize,
        pad: usize,
        dilation: usize,
    ) -> Self {
        let w = store.add(format!("{name}.w"), he_normal(rng, &[out_ch, in_ch, k, k]));
        let b = store.add(format!("{name}.b"), ArrayD::zeros(IxDyn(&[out_ch])));
        ConvLayer {
            w,
            b,
            stride,
            pad,
            dilation,
        }
    }

    pub(crate) fn forward(&self, g: &mut Graph, bound: &Bound, x: Var) -> Var {
        g.conv2d(
            x,
            bound.var(self.w),
            Some(bound.var(self.b)),
            self.stride,
            self.pad,
            self.dilation,
        )
    }
}

/// Per-channel normalization with learnable scale and shift. With batches of
/// one it normalizes over the sample's spatial extent, in training and
/// inference alike, which keeps repeated forward passes bit-identical.
pub(crate) struct NormLayer {
    gamma: ParamId,
    beta: ParamId,
}

impl NormLayer {
    pub(crate) fn new(store: &mut ParamStore, name: &str, channels: usize) -> Self {
        let gamma = store.add(format!("{name}.gamma"), ArrayD::from_elem(IxDyn(&[channels]), 1.0));
        let beta = store.add(format!("{name}.beta"), ArrayD::zeros(IxDyn(&[channels])));
        NormLayer { gamma, beta }
    }

    pub(crate) fn forward(&self, g: &mut Graph, bound: &Bound, x: Var) -> Var {
        g.batch_norm(x, bound.var(self.gamma), bound.var(self.beta), BN_EPS)
    }
}

/// Convolution -> normalization -> rectifier.
pub(crate) struct ConvBlock {
    conv: ConvLayer,
    norm: NormLayer,
}

impl ConvBlock {
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        k: usize,
        stride: usize,
        pad: usize,
        dilation: usize,
    ) -> Self {
        ConvBlock {
            conv: ConvLayer::new(store, rng, &format!("{name}.conv"), in_ch, out_ch, k, stride, pad, dilation),
            norm: NormLayer::new(store, &format!("{name}.norm"), out_ch),
        }
    }

    pub(crate) fn forward(&self, g: &mut Graph, bound: &Bound, x: Var) -> Var {
        let x = self.conv.forward(g, bound, x);
        let x = self.norm.forward(g, bound, x);
        g.relu(x)
    }
}
