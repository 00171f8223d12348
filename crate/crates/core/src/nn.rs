//! Fully connected and LSTM layers, with plain and taped forward passes.
//!
//! Both paths run the same kernels in the same order, so a taped forward
//! reproduces the plain one bit for bit.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{Tape, Var, linear_forward, relu, sigmoid};
use crate::error::{Result, dim_err};
use crate::rng::stream;
use crate::tensor::Tensor;

/// Samples a `fan_in × fan_out` Glorot-normal matrix.
pub fn glorot_init(shape: &[usize], seed: u64) -> Result<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    glorot_with(shape, &mut rng)
}

pub(crate) fn glorot_with(shape: &[usize], rng: &mut ChaCha8Rng) -> Result<Tensor> {
    let [fan_in, fan_out] = shape else {
        return dim_err(format!("glorot_init needs a 2-D shape, got {shape:?}"));
    };
    let std = (2.0 / (fan_in + fan_out) as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("finite std");
    let data = (0..fan_in * fan_out).map(|_| normal.sample(rng)).collect();
    Tensor::matrix(*fan_in, *fan_out, data)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    /// `in × out`
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Dense {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self { weight: Tensor::zeros(&[input, output]), bias: Tensor::zeros(&[output]) }
    }

    fn glorot(input: usize, output: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            weight: glorot_with(&[input, output], rng).expect("2-D shape"),
            bias: Tensor::zeros(&[output]),
        }
    }

    pub fn input_width(&self) -> usize {
        self.weight.rows()
    }

    pub fn output_width(&self) -> usize {
        self.weight.cols()
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        linear_forward(x, &self.weight, &self.bias)
    }
}

/// Multilayer perceptron: ReLU on hidden layers, linear output.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams {
    pub layers: Vec<Dense>,
}

/// Tape handles for one binding of an [`MlpParams`].
#[derive(Clone, Debug)]
pub struct MlpVars {
    pub layers: Vec<(Var, Var)>,
}

impl MlpParams {
    /// `widths = [in, h1, …, out]`, Glorot-normal weights, zero biases.
    pub fn new(widths: &[usize], seed: u64) -> Result<Self> {
        if widths.len() < 2 {
            return dim_err("an MLP needs at least input and output widths");
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = widths.windows(2).map(|w| Dense::glorot(w[0], w[1], &mut rng)).collect();
        Ok(Self { layers })
    }

    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return dim_err("an MLP needs at least one layer");
        }
        for (l, pair) in layers.windows(2).enumerate() {
            if pair[0].output_width() != pair[1].input_width() {
                return dim_err(format!(
                    "layer {} outputs {} but layer {} expects {}",
                    l,
                    pair[0].output_width(),
                    l + 1,
                    pair[1].input_width()
                ));
            }
        }
        Ok(Self { layers })
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].input_width()
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().expect("non-empty").output_width()
    }

    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        let mut h = self.layers[0].forward(input)?;
        for layer in &self.layers[1..] {
            relu_in_place(&mut h);
            h = layer.forward(&h)?;
        }
        Ok(h)
    }

    /// Forward pass from the second layer on, given the first layer's
    /// pre-activation. Lets callers assemble layer 0 themselves.
    pub fn forward_from_first(&self, mut pre: Tensor) -> Result<Tensor> {
        for layer in &self.layers[1..] {
            relu_in_place(&mut pre);
            pre = layer.forward(&pre)?;
        }
        Ok(pre)
    }

    pub fn bind(&self, tape: &mut Tape) -> MlpVars {
        let layers = self.layers.iter().map(|l| (tape.param(&l.weight), tape.param(&l.bias))).collect();
        MlpVars { layers }
    }

    pub fn named_params(&self, prefix: &str) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            out.push((format!("{prefix}.{i}.weight"), &l.weight));
            out.push((format!("{prefix}.{i}.bias"), &l.bias));
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weight, &mut l.bias]).collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }
}

impl MlpVars {
    pub fn forward(&self, tape: &mut Tape, input: Var) -> Result<Var> {
        let (w, b) = self.layers[0];
        let pre = tape.linear(input, w, b)?;
        self.forward_from_first(tape, pre)
    }

    pub fn forward_from_first(&self, tape: &mut Tape, mut pre: Var) -> Result<Var> {
        for &(w, b) in &self.layers[1..] {
            let h = tape.relu(pre);
            pre = tape.linear(h, w, b)?;
        }
        Ok(pre)
    }

    /// Flattened handles in the order of [`MlpParams::params_mut`].
    pub fn vars(&self) -> Vec<Var> {
        self.layers.iter().flat_map(|&(w, b)| [w, b]).collect()
    }
}

/// Evaluates an MLP on `input`.
pub fn mlp_forward(params: &MlpParams, input: &Tensor) -> Result<Tensor> {
    params.forward(input)
}

fn relu_in_place(t: &mut Tensor) {
    for x in t.data_mut() {
        *x = relu(*x);
    }
}

/// One LSTM layer. Gate blocks are packed column-wise as `[i | f | g | o]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmLayer {
    /// `in × 4h`
    pub w_input: Tensor,
    /// `h × 4h`
    pub w_hidden: Tensor,
    /// `4h`
    pub bias: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LstmParams {
    pub layers: Vec<LstmLayer>,
    pub hidden: usize,
    /// Maps the last layer's hidden state to the output.
    pub projection: Dense,
    /// Applied to hidden outputs between layers while training.
    pub dropout: f64,
}

/// Per-layer hidden and cell states, each `batch × hidden`.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmState {
    pub hidden: Vec<Tensor>,
    pub cell: Vec<Tensor>,
}

impl LstmState {
    pub fn zeros(layers: usize, batch: usize, width: usize) -> Self {
        Self {
            hidden: vec![Tensor::zeros(&[batch, width]); layers],
            cell: vec![Tensor::zeros(&[batch, width]); layers],
        }
    }
}

impl LstmParams {
    pub fn new(input: usize, hidden: usize, layers: usize, output: usize, dropout: f64, seed: u64) -> Result<Self> {
        if layers == 0 || hidden == 0 {
            return dim_err("an LSTM needs at least one layer of positive width");
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = (0..layers)
            .map(|l| {
                let inp = if l == 0 { input } else { hidden };
                Ok(LstmLayer {
                    w_input: glorot_with(&[inp, 4 * hidden], &mut rng)?,
                    w_hidden: glorot_with(&[hidden, 4 * hidden], &mut rng)?,
                    bias: Tensor::zeros(&[4 * hidden]),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let projection = Dense::glorot(hidden, output, &mut rng);
        Ok(Self { layers, hidden, projection, dropout })
    }

    /// All-zero parameters with the given widths.
    pub fn zeros(input: usize, hidden: usize, layers: usize, output: usize) -> Self {
        let layers = (0..layers)
            .map(|l| LstmLayer {
                w_input: Tensor::zeros(&[if l == 0 { input } else { hidden }, 4 * hidden]),
                w_hidden: Tensor::zeros(&[hidden, 4 * hidden]),
                bias: Tensor::zeros(&[4 * hidden]),
            })
            .collect();
        Self { layers, hidden, projection: Dense::zeros(hidden, output), dropout: 0.0 }
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].w_input.rows()
    }

    pub fn output_width(&self) -> usize {
        self.projection.output_width()
    }

    pub fn initial_state(&self, batch: usize) -> LstmState {
        LstmState::zeros(self.layers.len(), batch, self.hidden)
    }

    pub fn named_params(&self, prefix: &str) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            out.push((format!("{prefix}.{i}.w_input"), &l.w_input));
            out.push((format!("{prefix}.{i}.w_hidden"), &l.w_hidden));
            out.push((format!("{prefix}.{i}.bias"), &l.bias));
        }
        out.push((format!("{prefix}.proj.weight"), &self.projection.weight));
        out.push((format!("{prefix}.proj.bias"), &self.projection.bias));
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = Vec::new();
        for l in &mut self.layers {
            out.push(&mut l.w_input);
            out.push(&mut l.w_hidden);
            out.push(&mut l.bias);
        }
        out.push(&mut self.projection.weight);
        out.push(&mut self.projection.bias);
        out
    }

    pub fn bind(&self, tape: &mut Tape) -> LstmVars {
        let layers = self
            .layers
            .iter()
            .map(|l| (tape.param(&l.w_input), tape.param(&l.w_hidden), tape.param(&l.bias)))
            .collect();
        let projection = (tape.param(&self.projection.weight), tape.param(&self.projection.bias));
        LstmVars { layers, projection, hidden: self.hidden }
    }

    fn check(&self, input: &Tensor, state: &LstmState) -> Result<()> {
        if input.cols() != self.input_width() {
            return dim_err(format!(
                "LSTM input width {} (expected {})",
                input.cols(),
                self.input_width()
            ));
        }
        if state.hidden.len() != self.layers.len() || state.cell.len() != self.layers.len() {
            return dim_err("LSTM state layer count differs from the parameters");
        }
        for (h, c) in state.hidden.iter().zip(&state.cell) {
            if h.cols() != self.hidden || c.cols() != self.hidden || h.rows() != input.rows() || c.rows() != input.rows() {
                return dim_err("LSTM state shape does not match batch × hidden");
            }
        }
        Ok(())
    }
}

/// One time step through every layer (evaluation mode, no dropout).
pub fn lstm_step(params: &LstmParams, input: &Tensor, state: &LstmState) -> Result<(Tensor, LstmState)> {
    params.check(input, state)?;
    let hw = params.hidden;
    let rows = input.rows();
    let mut x = input.clone();
    let mut next = LstmState { hidden: Vec::new(), cell: Vec::new() };
    for (l, layer) in params.layers.iter().enumerate() {
        let mut gates = linear_forward(&x, &layer.w_input, &layer.bias)?;
        let rec = state.hidden[l].matmul(&layer.w_hidden)?;
        for (g, r) in gates.data_mut().iter_mut().zip(rec.data()) {
            *g += r;
        }
        let mut h = vec![0.0; rows * hw];
        let mut c = vec![0.0; rows * hw];
        for r in 0..rows {
            let gr = gates.row(r);
            let cp = state.cell[l].row(r);
            for j in 0..hw {
                let i_g = sigmoid(gr[j]);
                let f_g = sigmoid(gr[hw + j]);
                let g_g = gr[2 * hw + j].tanh();
                let o_g = sigmoid(gr[3 * hw + j]);
                let cn = f_g * cp[j] + i_g * g_g;
                c[r * hw + j] = cn;
                h[r * hw + j] = o_g * cn.tanh();
            }
        }
        let h = Tensor::matrix(rows, hw, h)?;
        next.cell.push(Tensor::matrix(rows, hw, c)?);
        x = h.clone();
        next.hidden.push(h);
    }
    let out = params.projection.forward(&x)?;
    Ok((out, next))
}

/// Tape handles for an [`LstmParams`] binding.
#[derive(Clone, Debug)]
pub struct LstmVars {
    pub layers: Vec<(Var, Var, Var)>,
    pub projection: (Var, Var),
    pub hidden: usize,
}

/// Taped recurrent state.
#[derive(Clone, Debug)]
pub struct LstmTapeState {
    pub hidden: Vec<Var>,
    pub cell: Vec<Var>,
}

impl LstmVars {
    pub fn initial_state(&self, tape: &mut Tape, batch: usize) -> LstmTapeState {
        let n = self.layers.len();
        let mk = |tape: &mut Tape| tape.constant(Tensor::zeros(&[batch, self.hidden]));
        LstmTapeState {
            hidden: (0..n).map(|_| mk(tape)).collect(),
            cell: (0..n).map(|_| mk(tape)).collect(),
        }
    }

    /// One taped step. `masks[l]` (if given) multiplies layer `l`'s hidden
    /// output before it feeds layer `l + 1`; the recurrent state itself is
    /// never masked.
    pub fn step(
        &self,
        tape: &mut Tape,
        input: Var,
        state: &LstmTapeState,
        masks: Option<&[Tensor]>,
    ) -> Result<(Var, LstmTapeState)> {
        let hw = self.hidden;
        let mut x = input;
        let mut next = LstmTapeState { hidden: Vec::new(), cell: Vec::new() };
        for (l, &(wi, wh, b)) in self.layers.iter().enumerate() {
            let lin = tape.linear(x, wi, b)?;
            let rec = tape.matmul(state.hidden[l], wh)?;
            let gates = tape.add(lin, rec)?;
            let gi = tape.slice_cols(gates, 0, hw)?;
            let gf = tape.slice_cols(gates, hw, 2 * hw)?;
            let gg = tape.slice_cols(gates, 2 * hw, 3 * hw)?;
            let go = tape.slice_cols(gates, 3 * hw, 4 * hw)?;
            let i_g = tape.sigmoid(gi);
            let f_g = tape.sigmoid(gf);
            let g_g = tape.tanh(gg);
            let o_g = tape.sigmoid(go);
            let keep = tape.mul(f_g, state.cell[l])?;
            let write = tape.mul(i_g, g_g)?;
            let c = tape.add(keep, write)?;
            let tc = tape.tanh(c);
            let h = tape.mul(o_g, tc)?;
            next.hidden.push(h);
            next.cell.push(c);
            x = match masks.and_then(|m| m.get(l)) {
                Some(mask) if l + 1 < self.layers.len() => tape.mul_const(h, mask.clone())?,
                _ => h,
            };
        }
        let (pw, pb) = self.projection;
        let out = tape.linear(x, pw, pb)?;
        Ok((out, next))
    }

    pub fn vars(&self) -> Vec<Var> {
        let mut out = Vec::new();
        for &(a, b, c) in &self.layers {
            out.extend([a, b, c]);
        }
        out.extend([self.projection.0, self.projection.1]);
        out
    }
}

/// Inverted-dropout masks for the hidden outputs between LSTM layers.
pub fn dropout_masks(params: &LstmParams, batch: usize, seed: u64, tags: &[u64]) -> Option<Vec<Tensor>> {
    use rand::Rng;
    if params.dropout <= 0.0 || params.layers.len() < 2 {
        return None;
    }
    let keep = 1.0 - params.dropout;
    let mut rng = stream(seed, tags);
    let masks = (0..params.layers.len() - 1)
        .map(|_| {
            let data = (0..batch * params.hidden)
                .map(|_| if rng.r#gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
                .collect();
            Tensor::matrix(batch, params.hidden, data).expect("shape")
        })
        .collect();
    Some(masks)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_mlp_gives_zero() {
        let mlp = MlpParams::from_layers(vec![Dense::zeros(3, 4), Dense::zeros(4, 2)]).unwrap();
        let x = Tensor::matrix(2, 3, vec![1., -2., 3., 0.5, 0.1, 9.]).unwrap();
        assert!(mlp.forward(&x).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_layer() {
        let mut d = Dense::zeros(3, 3);
        for i in 0..3 {
            d.weight.data_mut()[i * 3 + i] = 1.0;
        }
        let mlp = MlpParams::from_layers(vec![d]).unwrap();
        let x = Tensor::matrix(1, 3, vec![1.5, -2.0, 7.0]).unwrap();
        assert_eq!(mlp.forward(&x).unwrap().data(), x.data());
    }

    #[test]
    fn mlp_rejects_width_mismatch() {
        let mlp = MlpParams::new(&[3, 5, 2], 1).unwrap();
        assert!(mlp.forward(&Tensor::zeros(&[1, 4])).is_err());
        assert!(MlpParams::from_layers(vec![Dense::zeros(3, 4), Dense::zeros(5, 2)]).is_err());
    }

    #[test]
    fn taped_mlp_matches_plain_bitwise() {
        let mlp = MlpParams::new(&[4, 16, 16, 3], 7).unwrap();
        let x = Tensor::matrix(5, 4, (0..20).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
        let plain = mlp.forward(&x).unwrap();
        let mut tape = Tape::new();
        let vars = mlp.bind(&mut tape);
        let xv = tape.constant(x);
        let out = vars.forward(&mut tape, xv).unwrap();
        assert_eq!(tape.value(out), &plain);
    }

    #[test]
    fn glorot_same_seed_same_tensor() {
        let a = glorot_init(&[7, 5], 42).unwrap();
        let b = glorot_init(&[7, 5], 42).unwrap();
        assert_eq!(a, b);
        assert!(glorot_init(&[2, 2, 2], 1).is_err());
    }

    #[test]
    fn zero_lstm_has_zero_state() {
        let p = LstmParams::zeros(3, 4, 2, 5);
        let x = Tensor::matrix(2, 3, vec![1., 2., 3., -1., -2., -3.]).unwrap();
        let (out, st) = lstm_step(&p, &x, &p.initial_state(2)).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
        for (h, c) in st.hidden.iter().zip(&st.cell) {
            assert!(h.data().iter().all(|&v| v == 0.0));
            assert!(c.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn scalar_lstm_hand_computed() {
        // width-1 cell: gates i, f, g, o pre-activations = w_in * x + w_h * h + b
        let mut p = LstmParams::zeros(1, 1, 1, 1);
        p.layers[0].w_input = Tensor::matrix(1, 4, vec![0.5, -0.25, 1.0, 0.75]).unwrap();
        p.layers[0].w_hidden = Tensor::matrix(1, 4, vec![0.1, 0.2, -0.3, 0.4]).unwrap();
        p.layers[0].bias = Tensor::vector(vec![0.0, 1.0, 0.0, -0.5]);
        p.projection.weight = Tensor::matrix(1, 1, vec![2.0]).unwrap();
        let x = 0.8;
        let (h0, c0) = (0.3, -0.6);
        let s = |z: f64| 1.0 / (1.0 + (-z).exp());
        let i = s(0.5 * x + 0.1 * h0);
        let f = s(-0.25 * x + 0.2 * h0 + 1.0);
        let g = (1.0 * x - 0.3 * h0).tanh();
        let o = s(0.75 * x + 0.4 * h0 - 0.5);
        let c1 = f * c0 + i * g;
        let h1 = o * c1.tanh();

        let state = LstmState {
            hidden: vec![Tensor::matrix(1, 1, vec![h0]).unwrap()],
            cell: vec![Tensor::matrix(1, 1, vec![c0]).unwrap()],
        };
        let (out, st) = lstm_step(&p, &Tensor::matrix(1, 1, vec![x]).unwrap(), &state).unwrap();
        assert!((st.cell[0].data()[0] - c1).abs() < 1e-15);
        assert!((st.hidden[0].data()[0] - h1).abs() < 1e-15);
        assert!((out.data()[0] - 2.0 * h1).abs() < 1e-15);
    }

    #[test]
    fn lstm_rejects_bad_input_width() {
        let p = LstmParams::new(3, 4, 1, 2, 0.0, 0).unwrap();
        assert!(lstm_step(&p, &Tensor::zeros(&[1, 2]), &p.initial_state(1)).is_err());
    }
}
