//! Convolutional LSTM cell and the bi-directional sequence driver.

use super::ConvLayer;
use crate::error::{Error, Result};
use crate::params::{Bound, ParamStore};
use crate::tensor::{Graph, Var};
use ndarray::{ArrayD, IxDyn};
use rand_chacha::ChaCha8Rng;

/// Hidden/cell pair of one direction.
#[derive(Clone, Copy)]
pub struct LstmState {
    pub hidden: Var,
    pub cell: Var,
}

/// ConvLSTM cell: gate pre-activations are one 3x3 convolution over the
/// channel concatenation `[x, h]`, split into input/forget/cell/output gates.
pub struct ConvLstm {
    gates: ConvLayer,
    in_channels: usize,
    hidden_channels: usize,
}

impl ConvLstm {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        in_channels: usize,
        hidden_channels: usize,
    ) -> Self {
        let gates = ConvLayer::new(
            store,
            rng,
            &format!("{name}.gates"),
            in_channels + hidden_channels,
            4 * hidden_channels,
            3,
            1,
            1,
            1,
        );
        ConvLstm {
            gates,
            in_channels,
            hidden_channels,
        }
    }

    pub fn hidden_channels(&self) -> usize {
        self.hidden_channels
    }

    pub fn zero_state(&self, g: &mut Graph, h: usize, w: usize) -> LstmState {
        LstmState {
            hidden: g.constant(ArrayD::zeros(IxDyn(&[self.hidden_channels, h, w]))),
            cell: g.constant(ArrayD::zeros(IxDyn(&[self.hidden_channels, h, w]))),
        }
    }

    /// One recurrence step: `i,f,o = logistic`, `g = tanh`,
    /// `c' = f (.) c + i (.) g`, `h' = o (.) tanh(c')`.
    pub fn step(&self, g: &mut Graph, bound: &Bound, x: Var, state: LstmState) -> Result<LstmState> {
        let xs = g.shape(x).to_vec();
        let hs = g.shape(state.hidden).to_vec();
        if xs.len() != 3 || xs[0] != self.in_channels || xs[1..] != hs[1..] {
            return Err(Error::shape(
                "convlstm step",
                format!("[{},{},{}] input", self.in_channels, hs[1], hs[2]),
                format!("{xs:?}"),
            ));
        }
        let ch = self.hidden_channels;
        let xh = g.concat_c(&[x, state.hidden]);
        let z = self.gates.forward(g, bound, xh);
        let zi = g.slice_c(z, 0, ch);
        let zf = g.slice_c(z, ch, ch);
        let zg = g.slice_c(z, 2 * ch, ch);
        let zo = g.slice_c(z, 3 * ch, ch);
        let i = g.sigmoid(zi);
        let f = g.sigmoid(zf);
        let gg = g.tanh(zg);
        let o = g.sigmoid(zo);
        let fc = g.mul(f, state.cell);
        let ig = g.mul(i, gg);
        let cell = g.add(fc, ig);
        let tc = g.tanh(cell);
        let hidden = g.mul(o, tc);
        Ok(LstmState { hidden, cell })
    }
}

/// Runs a forward-direction and a backward-direction cell over a feature
/// sequence, both from zero states. Returns per-frame hidden states aligned
/// with the input order: `fwd[n]` consumed frames `1..=n`, `bwd[n]` consumed
/// frames `N..=n+1`.
pub fn bidirectional_pass(
    g: &mut Graph,
    bound: &Bound,
    forward: &ConvLstm,
    backward: &ConvLstm,
    features: &[Var],
) -> Result<(Vec<Var>, Vec<Var>)> {
    if features.is_empty() {
        return Err(Error::InvalidArgument("bidirectional pass over an empty sequence".into()));
    }
    let shape = g.shape(features[0]).to_vec();
    for &f in features {
        if g.shape(f) != shape.as_slice() {
            return Err(Error::shape(
                "bidirectional pass",
                format!("{shape:?}"),
                format!("{:?}", g.shape(f)),
            ));
        }
    }
    let (h, w) = (shape[1], shape[2]);
    let mut fwd = Vec::with_capacity(features.len());
    let mut state = forward.zero_state(g, h, w);
    for &x in features {
        state = forward.step(g, bound, x, state)?;
        fwd.push(state.hidden);
    }
    let mut bwd_rev = Vec::with_capacity(features.len());
    let mut state = backward.zero_state(g, h, w);
    for &x in features.iter().rev() {
        state = backward.step(g, bound, x, state)?;
        bwd_rev.push(state.hidden);
    }
    bwd_rev.reverse();
    Ok((fwd, bwd_rev))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::Bound;
    use rand::SeedableRng;

    fn cell(in_ch: usize, hid: usize, seed: u64) -> (ParamStore, ConvLstm) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cell = ConvLstm::new(&mut store, &mut rng, "lstm", in_ch, hid);
        (store, cell)
    }

    fn rand_input(c: usize, h: usize, w: usize, phase: f64) -> ArrayD<f64> {
        ArrayD::from_shape_vec(
            IxDyn(&[c, h, w]),
            (0..c * h * w).map(|i| (i as f64 * 0.7 + phase).sin()).collect(),
        )
        .unwrap()
    }

    #[test]
    fn zero_weights_zero_state_give_zero_output() {
        let (mut store, cell) = cell(2, 3, 0);
        for e in store.entries_mut() {
            e.value.fill(0.0);
        }
        let mut g = Graph::new();
        let bound = Bound::bind(&mut g, &store, false);
        let x = g.constant(rand_input(2, 4, 4, 0.3));
        let s0 = cell.zero_state(&mut g, 4, 4);
        let s1 = cell.step(&mut g, &bound, x, s0).unwrap();
        assert!(g.value(s1.hidden).iter().all(|&v| v == 0.0));
        assert!(g.value(s1.cell).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_biases_zero_inputs_keep_zero_hidden_state() {
        // Freshly initialized gate biases are zero, so an all-zero input
        // sequence from a zero state stays at zero for every step.
        let (store, cell) = cell(2, 3, 5);
        let mut g = Graph::new();
        let bound = Bound::bind(&mut g, &store, false);
        let zeros = ArrayD::zeros(IxDyn(&[2, 4, 4]));
        let mut state = cell.zero_state(&mut g, 4, 4);
        for _ in 0..4 {
            let x = g.constant(zeros.clone());
            state = cell.step(&mut g, &bound, x, state).unwrap();
            assert!(g.value(state.hidden).iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn output_state_shape_matches_input_state() {
        let (store, cell) = cell(3, 5, 7);
        let mut g = Graph::new();
        let bound = Bound::bind(&mut g, &store, false);
        let x = g.constant(rand_input(3, 6, 4, 0.0));
        let s0 = cell.zero_state(&mut g, 6, 4);
        let s1 = cell.step(&mut g, &bound, x, s0).unwrap();
        assert_eq!(g.shape(s1.hidden), &[5, 6, 4]);
        assert_eq!(g.shape(s1.cell), &[5, 6, 4]);
    }

    #[test]
    fn shape_mismatch_errors() {
        let (store, cell) = cell(3, 5, 7);
        let mut g = Graph::new();
        let bound = Bound::bind(&mut g, &store, false);
        let x = g.constant(rand_input(3, 4, 4, 0.0));
        let s0 = cell.zero_state(&mut g, 6, 4);
        assert!(cell.step(&mut g, &bound, x, s0).is_err());
    }

    #[test]
    fn single_frame_reduces_to_one_step() {
        let (mut store, fwd_cell) = cell(2, 3, 11);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let bwd_cell = ConvLstm::new(&mut store, &mut rng, "bwd", 2, 3);
        let mut g = Graph::new();
        let bound = Bound::bind(&mut g, &store, false);
        let x = g.constant(rand_input(2, 4, 4, 0.9));
        let (f, b) = bidirectional_pass(&mut g, &bound, &fwd_cell, &bwd_cell, &[x]).unwrap();
        assert_eq!(f.len(), 1);
        assert_eq!(b.len(), 1);
        let s0 = fwd_cell.zero_state(&mut g, 4, 4);
        let expect = fwd_cell.step(&mut g, &bound, x, s0).unwrap();
        assert_eq!(g.value(f[0]), g.value(expect.hidden));
    }

    #[test]
    fn swapping_directions_and_reversing_input_swaps_roles() {
        let (mut store, fwd_cell) = cell(2, 3, 21);
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let bwd_cell = ConvLstm::new(&mut store, &mut rng, "bwd", 2, 3);
        let xs_data: Vec<_> = (0..3).map(|i| rand_input(2, 4, 4, i as f64)).collect();

        let mut g = Graph::new();
        let bound = Bound::bind(&mut g, &store, false);
        let xs: Vec<Var> = xs_data.iter().map(|d| g.constant(d.clone())).collect();
        let (f1, b1) = bidirectional_pass(&mut g, &bound, &fwd_cell, &bwd_cell, &xs).unwrap();
        let rev: Vec<Var> = xs.iter().rev().copied().collect();
        let (f2, b2) = bidirectional_pass(&mut g, &bound, &bwd_cell, &fwd_cell, &rev).unwrap();

        for n in 0..3 {
            assert_eq!(g.value(b1[n]), g.value(f2[2 - n]));
            assert_eq!(g.value(f1[n]), g.value(b2[2 - n]));
        }
    }

    #[test]
    fn empty_sequence_errors() {
        let (mut store, fwd_cell) = cell(2, 3, 31);
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let bwd_cell = ConvLstm::new(&mut store, &mut rng, "bwd", 2, 3);
        let mut g = Graph::new();
        let bound = Bound::bind(&mut g, &store, false);
        assert!(bidirectional_pass(&mut g, &bound, &fwd_cell, &bwd_cell, &[]).is_err());
    }
}
