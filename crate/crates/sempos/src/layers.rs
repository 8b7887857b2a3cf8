//! Neural building blocks on top of the autodiff graph: fully-connected
//! maps, single-direction and bidirectional LSTMs, additive attention, and a
//! trainable embedding table.
//!
//! Every parameter tensor is initialized from a stream keyed by its own
//! dotted name (`"verb.lstm.fwd.w_i"`), so adding or removing one layer
//! never changes the starting values of any other.

use rand::Rng;

use crate::autodiff::{Error as GraphError, Tensor, Var};
use crate::rng::named_stream;

#[derive(Debug, thiserror::Error)]
pub enum LayerError {
    #[error(transparent)]
    Graph(#[from] GraphError),

    #[error("token id {id} outside vocabulary of size {vocab}")]
    OutOfVocabulary { id: usize, vocab: usize },
}

/// Seeded parameter factory. Draws each tensor uniformly from
/// `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` using a stream keyed by the
/// parameter's name.
#[derive(Clone, Copy)]
pub struct Init {
    seed: u64,
}

impl Init {
    pub fn new(seed: u64) -> Self {
        Init { seed }
    }

    pub fn uniform(&self, name: &str, shape: Vec<usize>, fan_in: usize) -> Var {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let mut rng = named_stream(self.seed, name);
        let n: usize = shape.iter().product();
        let data: Vec<f64> = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
        Var::parameter(Tensor::new(shape, data).expect("generated data matches shape"))
    }
}

/// Affine map `y = W x + b` with `W: [out, in]`, `b: [out]`. Accepts a
/// rank-1 input (single vector) or a rank-2 input (one vector per row).
pub struct Fc {
    name: String,
    pub weight: Var,
    pub bias: Var,
}

impl Fc {
    pub fn new(init: &Init, name: &str, in_dim: usize, out_dim: usize) -> Self {
        Fc {
            name: name.to_string(),
            weight: init.uniform(&format!("{name}.weight"), vec![out_dim, in_dim], in_dim),
            bias: init.uniform(&format!("{name}.bias"), vec![out_dim], in_dim),
        }
    }

    pub fn apply(&self, x: &Var) -> Result<Var, GraphError> {
        match x.shape().len() {
            1 => self.weight.matvec(x)?.add(&self.bias),
            2 => x.matmul(&self.weight.transpose()?)?.add_bias(&self.bias),
            _ => Err(GraphError::DimensionMismatch {
                op: "fc",
                detail: format!("need rank 1 or 2, got {:?}", x.shape()),
            }),
        }
    }

    pub fn collect_params(&self, out: &mut Vec<(String, Var)>) {
        out.push((format!("{}.weight", self.name), self.weight.clone()));
        out.push((format!("{}.bias", self.name), self.bias.clone()));
    }
}

/// One direction of an LSTM over a sequence of rank-1 inputs.
///
/// Gates follow the standard cell: `i`, `f`, `o` sigmoid, candidate `g`
/// tanh, `c' = f⊙c + i⊙g`, `h' = o⊙tanh(c')`. Initial `h` and `c` are zero.
pub struct LstmCell {
    name: String,
    pub hidden: usize,
    pub input: usize,
    w: [Var; 4], // input->gate maps, order i, f, o, g
    u: [Var; 4], // hidden->gate maps
    b: [Var; 4],
}

const GATE_NAMES: [&str; 4] = ["i", "f", "o", "g"];

impl LstmCell {
    pub fn new(init: &Init, name: &str, input: usize, hidden: usize) -> Self {
        let mk_w = |g: &str| init.uniform(&format!("{name}.w_{g}"), vec![hidden, input], input);
        let mk_u = |g: &str| init.uniform(&format!("{name}.u_{g}"), vec![hidden, hidden], hidden);
        let mk_b = |g: &str| init.uniform(&format!("{name}.b_{g}"), vec![hidden], hidden);
        LstmCell {
            name: name.to_string(),
            hidden,
            input,
            w: GATE_NAMES.map(mk_w),
            u: GATE_NAMES.map(mk_u),
            b: GATE_NAMES.map(mk_b),
        }
    }

    pub fn zero_state(&self) -> (Var, Var) {
        (
            Var::leaf(Tensor::zeros(vec![self.hidden])),
            Var::leaf(Tensor::zeros(vec![self.hidden])),
        )
    }

    /// One step: `(h, c) -> (h', c')` for input `x`.
    pub fn step(&self, x: &Var, h: &Var, c: &Var) -> Result<(Var, Var), GraphError> {
        let pre = |k: usize| -> Result<Var, GraphError> {
            self.w[k]
                .matvec(x)?
                .add(&self.u[k].matvec(h)?)?
                .add(&self.b[k])
        };
        let i = pre(0)?.sigmoid();
        let f = pre(1)?.sigmoid();
        let o = pre(2)?.sigmoid();
        let g = pre(3)?.tanh();
        let c_next = f.mul(c)?.add(&i.mul(&g)?)?;
        let h_next = o.mul(&c_next.tanh())?;
        Ok((h_next, c_next))
    }

    /// Runs the cell over `xs` in order, returning the hidden state at every
    /// step.
    pub fn run(&self, xs: &[Var]) -> Result<Vec<Var>, GraphError> {
        let (mut h, mut c) = self.zero_state();
        let mut out = Vec::with_capacity(xs.len());
        for x in xs {
            let (h2, c2) = self.step(x, &h, &c)?;
            h = h2;
            c = c2;
            out.push(h.clone());
        }
        Ok(out)
    }

    pub fn collect_params(&self, out: &mut Vec<(String, Var)>) {
        for (k, g) in GATE_NAMES.iter().enumerate() {
            out.push((format!("{}.w_{}", self.name, g), self.w[k].clone()));
            out.push((format!("{}.u_{}", self.name, g), self.u[k].clone()));
            out.push((format!("{}.b_{}", self.name, g), self.b[k].clone()));
        }
    }
}

/// Bidirectional LSTM over a `[t, d]` sequence. The output at step `t`
/// concatenates the forward hidden state at `t` with the backward hidden
/// state at `t`, giving `[t, 2*hidden]`.
pub struct BiLstm {
    pub fwd: LstmCell,
    pub bwd: LstmCell,
}

impl BiLstm {
    pub fn new(init: &Init, name: &str, input: usize, hidden: usize) -> Self {
        BiLstm {
            fwd: LstmCell::new(init, &format!("{name}.fwd"), input, hidden),
            bwd: LstmCell::new(init, &format!("{name}.bwd"), input, hidden),
        }
    }

    pub fn out_dim(&self) -> usize {
        2 * self.fwd.hidden
    }

    pub fn apply(&self, x: &Var) -> Result<Var, GraphError> {
        let shape = x.shape();
        if shape.len() != 2 || shape[0] == 0 {
            return Err(GraphError::DimensionMismatch {
                op: "bilstm",
                detail: format!("need non-empty rank 2, got {shape:?}"),
            });
        }
        let t = shape[0];
        let steps: Vec<Var> = (0..t)
            .map(|i| x.select_row(i))
            .collect::<Result<_, _>>()?;
        let forward = self.fwd.run(&steps)?;
        let mut reversed = steps.clone();
        reversed.reverse();
        let mut backward = self.bwd.run(&reversed)?;
        backward.reverse();

        let rows: Vec<Var> = forward
            .iter()
            .zip(backward.iter())
            .map(|(f, b)| Var::concat(&[f.clone(), b.clone()], 0))
            .collect::<Result<_, _>>()?;
        Var::stack_rows(&rows)
    }

    pub fn collect_params(&self, out: &mut Vec<(String, Var)>) {
        self.fwd.collect_params(out);
        self.bwd.collect_params(out);
    }
}

/// Additive attention of a query vector over a sequence.
///
/// For query `x: [dx]` and sequence `y: [t, dy]`, the score at step `t` is
/// `w · tanh(Wx x + Uy y_t + b)`; weights are the softmax of the scores and
/// the attended output is the weight-averaged sequence row, `[dy]`.
pub struct Attention {
    name: String,
    pub w: Var,  // [a]
    pub wx: Var, // [a, dx]
    pub uy: Var, // [a, dy]
    pub b: Var,  // [a]
}

impl Attention {
    pub fn new(init: &Init, name: &str, query_dim: usize, seq_dim: usize, attn_dim: usize) -> Self {
        Attention {
            name: name.to_string(),
            w: init.uniform(&format!("{name}.w"), vec![attn_dim], attn_dim),
            wx: init.uniform(&format!("{name}.wx"), vec![attn_dim, query_dim], query_dim),
            uy: init.uniform(&format!("{name}.uy"), vec![attn_dim, seq_dim], seq_dim),
            b: init.uniform(&format!("{name}.b"), vec![attn_dim], attn_dim),
        }
    }

    /// Returns `(weights: [t], attended: [dy])`.
    pub fn apply(&self, query: &Var, seq: &Var) -> Result<(Var, Var), GraphError> {
        let shape = seq.shape();
        if shape.len() != 2 || shape[0] == 0 {
            return Err(GraphError::DimensionMismatch {
                op: "attention",
                detail: format!("sequence must be non-empty rank 2, got {shape:?}"),
            });
        }
        let t = shape[0];
        let dy = shape[1];
        let query_proj = self.wx.matvec(query)?.add(&self.b)?; // [a]
        let seq_proj = seq.matmul(&self.uy.transpose()?)?; // [t, a]
        let scores = seq_proj.add_bias(&query_proj)?.tanh().matvec(&self.w)?; // [t]
        let weights = scores.softmax()?;
        let attended = weights.reshape(&[1, t])?.matmul(seq)?.reshape(&[dy])?;
        Ok((weights, attended))
    }

    pub fn collect_params(&self, out: &mut Vec<(String, Var)>) {
        out.push((format!("{}.w", self.name), self.w.clone()));
        out.push((format!("{}.wx", self.name), self.wx.clone()));
        out.push((format!("{}.uy", self.name), self.uy.clone()));
        out.push((format!("{}.b", self.name), self.b.clone()));
    }
}

/// Trainable token embedding table `[vocab, dim]`.
pub struct Embedding {
    name: String,
    pub table: Var,
    pub vocab: usize,
    pub dim: usize,
}

impl Embedding {
    pub fn new(init: &Init, name: &str, vocab: usize, dim: usize) -> Self {
        Embedding {
            name: name.to_string(),
            table: init.uniform(&format!("{name}.table"), vec![vocab, dim], dim),
            vocab,
            dim,
        }
    }

    pub fn lookup(&self, id: usize) -> Result<Var, LayerError> {
        if id >= self.vocab {
            return Err(LayerError::OutOfVocabulary {
                id,
                vocab: self.vocab,
            });
        }
        Ok(self.table.select_row(id)?)
    }

    pub fn collect_params(&self, out: &mut Vec<(String, Var)>) {
        out.push((format!("{}.table", self.name), self.table.clone()));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{grad_check, DEFAULT_STEP, DEFAULT_TOLERANCE};

    fn set(var: &Var, data: &[f64]) {
        var.with_value_mut(|t| t.data_mut().copy_from_slice(data));
    }

    /// Scalar reference LSTM for hidden size 1 / input size 1, written with
    /// plain arithmetic as an independent path to the same definition.
    fn scalar_lstm(
        xs: &[f64],
        w: [f64; 4],
        u: [f64; 4],
        b: [f64; 4],
    ) -> Vec<f64> {
        let sigma = |z: f64| 1.0 / (1.0 + (-z).exp());
        let (mut h, mut c) = (0.0f64, 0.0f64);
        let mut out = Vec::new();
        for &x in xs {
            let i = sigma(w[0] * x + u[0] * h + b[0]);
            let f = sigma(w[1] * x + u[1] * h + b[1]);
            let o = sigma(w[2] * x + u[2] * h + b[2]);
            let g = (w[3] * x + u[3] * h + b[3]).tanh();
            c = f * c + i * g;
            h = o * c.tanh();
            out.push(h);
        }
        out
    }

    #[test]
    fn lstm_matches_scalar_reference() {
        let init = Init::new(0);
        let cell = LstmCell::new(&init, "t", 1, 1);
        let w = [0.5, -0.3, 0.4, 1.0];
        let u = [0.1, 0.2, -0.1, 0.3];
        let b = [0.0, 0.1, -0.2, 0.0];
        for k in 0..4 {
            set(&cell.w[k], &[w[k]]);
            set(&cell.u[k], &[u[k]]);
            set(&cell.b[k], &[b[k]]);
        }
        let xs = [1.0, -0.5, 0.25];
        let inputs: Vec<Var> = xs
            .iter()
            .map(|&x| Var::leaf(Tensor::new(vec![1], vec![x]).unwrap()))
            .collect();
        let states = cell.run(&inputs).unwrap();
        let expect = scalar_lstm(&xs, w, u, b);
        for (s, e) in states.iter().zip(expect.iter()) {
            assert!((s.value().data()[0] - e).abs() < 1e-12);
        }
    }

    #[test]
    fn all_zero_lstm_outputs_zero_sequence() {
        let init = Init::new(0);
        let cell = LstmCell::new(&init, "z", 3, 2);
        let mut params = Vec::new();
        cell.collect_params(&mut params);
        for (_, p) in &params {
            p.with_value_mut(|t| t.data_mut().fill(0.0));
        }
        let xs: Vec<Var> = (0..4)
            .map(|i| Var::leaf(Tensor::new(vec![3], vec![i as f64, 1.0, -2.0]).unwrap()))
            .collect();
        for h in cell.run(&xs).unwrap() {
            assert!(h.value().data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn bilstm_output_shape_and_direction_split() {
        let init = Init::new(5);
        let net = BiLstm::new(&init, "b", 3, 4);
        let x = Var::leaf(Tensor::new(vec![5, 3], (0..15).map(|i| i as f64 * 0.1).collect()).unwrap());
        let y = net.apply(&x).unwrap();
        assert_eq!(y.shape(), vec![5, 8]);

        // Zeroing only the backward cell zeroes exactly the last 4 columns.
        let mut params = Vec::new();
        net.bwd.collect_params(&mut params);
        for (_, p) in &params {
            p.with_value_mut(|t| t.data_mut().fill(0.0));
        }
        let y = net.apply(&x).unwrap().value();
        for row in 0..5 {
            assert!(y.row_slice(row)[4..].iter().all(|&v| v == 0.0));
            assert!(y.row_slice(row)[..4].iter().any(|&v| v != 0.0));
        }
    }

    #[test]
    fn bilstm_gradients_check_out() {
        let init = Init::new(11);
        let net = BiLstm::new(&init, "g", 2, 3);
        let x = Var::leaf(Tensor::new(vec![3, 2], vec![0.1, -0.2, 0.5, 0.3, -0.4, 0.2]).unwrap());
        let mut params = Vec::new();
        net.collect_params(&mut params);
        let vars: Vec<Var> = params.iter().map(|(_, v)| v.clone()).collect();
        let f = || net.apply(&x)?.mul(&net.apply(&x)?)?.mean_all();
        let err = grad_check(f, &vars, DEFAULT_STEP).unwrap();
        assert!(err < DEFAULT_TOLERANCE, "relative error {err}");
    }

    #[test]
    fn attention_weights_form_a_distribution() {
        let init = Init::new(3);
        let attn = Attention::new(&init, "a", 4, 6, 5);
        let q = Var::leaf(Tensor::new(vec![4], vec![0.5, -0.1, 0.2, 0.9]).unwrap());
        let y = Var::leaf(
            Tensor::new(vec![3, 6], (0..18).map(|i| (i as f64).sin()).collect()).unwrap(),
        );
        let (weights, attended) = attn.apply(&q, &y).unwrap();
        let wv = weights.value();
        assert_eq!(wv.shape(), &[3]);
        assert!((wv.data().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(wv.data().iter().all(|&w| w > 0.0));
        assert_eq!(attended.shape(), vec![6]);
    }

    #[test]
    fn attention_matches_scalar_reference() {
        // attn_dim 1, query_dim 1, seq_dim 1 collapses every product to
        // plain arithmetic.
        let init = Init::new(9);
        let attn = Attention::new(&init, "s", 1, 1, 1);
        set(&attn.w, &[0.8]);
        set(&attn.wx, &[0.5]);
        set(&attn.uy, &[-0.4]);
        set(&attn.b, &[0.1]);
        let q = Var::leaf(Tensor::new(vec![1], vec![2.0]).unwrap());
        let ys = [0.3f64, -0.6, 1.2];
        let y = Var::leaf(Tensor::new(vec![3, 1], ys.to_vec()).unwrap());
        let (weights, attended) = attn.apply(&q, &y).unwrap();

        let scores: Vec<f64> = ys
            .iter()
            .map(|&yt| 0.8 * (0.5 * 2.0 + (-0.4) * yt + 0.1).tanh())
            .collect();
        let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
        let denom: f64 = exps.iter().sum();
        let expect_w: Vec<f64> = exps.iter().map(|e| e / denom).collect();
        let expect_a: f64 = expect_w.iter().zip(ys.iter()).map(|(w, y)| w * y).sum();

        for (got, want) in weights.value().data().iter().zip(expect_w.iter()) {
            assert!((got - want).abs() < 1e-12);
        }
        assert!((attended.value().data()[0] - expect_a).abs() < 1e-12);
    }

    #[test]
    fn attention_gradients_check_out() {
        let init = Init::new(21);
        let attn = Attention::new(&init, "ga", 3, 4, 3);
        let q = Var::leaf(Tensor::new(vec![3], vec![0.2, -0.5, 0.7]).unwrap());
        let y = Var::leaf(
            Tensor::new(vec![4, 4], (0..16).map(|i| (i as f64 * 0.37).cos()).collect()).unwrap(),
        );
        let mut params = Vec::new();
        attn.collect_params(&mut params);
        let vars: Vec<Var> = params.iter().map(|(_, v)| v.clone()).collect();
        let f = || {
            let (_, attended) = attn.apply(&q, &y)?;
            attended.mul(&attended)?.mean_all()
        };
        let err = grad_check(f, &vars, DEFAULT_STEP).unwrap();
        assert!(err < DEFAULT_TOLERANCE, "relative error {err}");
    }

    #[test]
    fn fc_applies_to_vectors_and_matrices() {
        let init = Init::new(2);
        let fc = Fc::new(&init, "f", 2, 3);
        set(&fc.weight, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        set(&fc.bias, &[0.5, -0.5, 0.0]);
        let v = Var::leaf(Tensor::new(vec![2], vec![2.0, 3.0]).unwrap());
        assert_eq!(fc.apply(&v).unwrap().value().data(), &[2.5, 2.5, 5.0]);
        let m = Var::leaf(Tensor::new(vec![2, 2], vec![2.0, 3.0, 1.0, 1.0]).unwrap());
        let out = fc.apply(&m).unwrap().value();
        assert_eq!(out.shape(), &[2, 3]);
        assert_eq!(out.row_slice(0), &[2.5, 2.5, 5.0]);
        assert_eq!(out.row_slice(1), &[1.5, 0.5, 2.0]);
    }

    #[test]
    fn embedding_rejects_out_of_vocabulary() {
        let init = Init::new(4);
        let emb = Embedding::new(&init, "e", 10, 3);
        assert!(emb.lookup(9).is_ok());
        assert!(matches!(
            emb.lookup(10),
            Err(LayerError::OutOfVocabulary { id: 10, vocab: 10 })
        ));
    }

    #[test]
    fn embedding_gradient_touches_only_used_rows() {
        let init = Init::new(4);
        let emb = Embedding::new(&init, "e2", 5, 2);
        let loss = emb.lookup(2).unwrap().sum_all();
        loss.backward().unwrap();
        let g = emb.table.grad().unwrap();
        for row in 0..5 {
            let expect = if row == 2 { 1.0 } else { 0.0 };
            assert!(g.row_slice(row).iter().all(|&v| v == expect));
        }
    }

    #[test]
    fn init_is_deterministic_and_name_scoped() {
        let a = Init::new(7).uniform("x.weight", vec![4], 4);
        let b = Init::new(7).uniform("x.weight", vec![4], 4);
        let c = Init::new(7).uniform("y.weight", vec![4], 4);
        assert_eq!(a.value().data(), b.value().data());
        assert_ne!(a.value().data(), c.value().data());
        let bound = 1.0 / 2.0;
        assert!(a.value().data().iter().all(|v| v.abs() < bound));
    }
}
