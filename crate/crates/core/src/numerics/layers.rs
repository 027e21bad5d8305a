//! Neural layers built on the tape: linear maps, embeddings, LSTMs,
//! the character CNN with highway layers, feedforward heads and dropout.
//!
//! Layers own only [`ParamId`]s. Before use they are bound to a graph,
//! which places each parameter on the tape once per example.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::graph::{Graph, Var};
use super::params::{ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub input: usize,
    pub output: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct BoundLinear {
    pub w: Var,
    pub b: Option<Var>,
}

impl Linear {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        output: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let w = store.glorot(format!("{name}.w"), output, input, rng);
        let b = bias.then(|| store.zeros(format!("{name}.b"), &[output]));
        Linear {
            w,
            b,
            input,
            output,
        }
    }

    pub fn bind(&self, g: &mut Graph) -> BoundLinear {
        BoundLinear {
            w: g.param(self.w),
            b: self.b.map(|b| g.param(b)),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let bound = self.bind(g);
        bound.apply(g, x)
    }
}

impl BoundLinear {
    pub fn apply(&self, g: &mut Graph, x: Var) -> Result<Var> {
        g.affine(self.w, x, self.b)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Embedding {
    pub table: ParamId,
    pub rows: usize,
    pub dim: usize,
}

impl Embedding {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        rows: usize,
        dim: usize,
        rng: &mut R,
    ) -> Self {
        // unit expected squared norm per row, independent of table size
        let limit = (3.0 / dim as f64).sqrt();
        let table = store.uniform(name, &[rows, dim], limit, rng);
        Embedding { table, rows, dim }
    }

    pub fn lookup(&self, g: &mut Graph, row: usize) -> Var {
        g.lookup(self.table, row)
    }
}

/// Inverted dropout. Identity when `rate` is zero or outside training.
pub fn dropout<R: Rng>(
    g: &mut Graph,
    x: Var,
    rate: f64,
    rng: Option<&mut R>,
) -> Result<Var> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Argument(format!(
            "dropout rate must be in [0, 1), got {rate}"
        )));
    }
    match rng {
        Some(rng) if rate > 0.0 => {
            let keep = 1.0 / (1.0 - rate);
            let mask = (0..g.value(x).len())
                .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
                .collect();
            g.mask(x, mask)
        }
        _ => Ok(x),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LstmLayer {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub hidden: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct BoundLstm {
    w_ih: Var,
    w_hh: Var,
    b: Var,
    hidden: usize,
}

impl LstmLayer {
    /// Glorot weights, zero biases except the forget gate, which starts at 1.
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        let w_ih = store.glorot(format!("{name}.w_ih"), 4 * hidden, input, rng);
        let w_hh = store.glorot(format!("{name}.w_hh"), 4 * hidden, hidden, rng);
        let mut bias = vec![0.0; 4 * hidden];
        bias[hidden..2 * hidden].fill(1.0);
        let b = store.add(format!("{name}.b"), Tensor::vector(bias));
        LstmLayer {
            w_ih,
            w_hh,
            b,
            input,
            hidden,
        }
    }

    pub fn bind(&self, g: &mut Graph) -> BoundLstm {
        BoundLstm {
            w_ih: g.param(self.w_ih),
            w_hh: g.param(self.w_hh),
            b: g.param(self.b),
            hidden: self.hidden,
        }
    }

    /// Runs the recurrence over `xs` (right to left when `reverse`) and
    /// returns the hidden state for every position in input order.
    pub fn run(&self, g: &mut Graph, xs: &[Var], reverse: bool) -> Result<Vec<Var>> {
        let bound = self.bind(g);
        let mut h = g.zeros(self.hidden);
        let mut c = g.zeros(self.hidden);
        let mut out = vec![h; xs.len()];
        let order: Vec<usize> = if reverse {
            (0..xs.len()).rev().collect()
        } else {
            (0..xs.len()).collect()
        };
        for t in order {
            let (h_new, c_new) = bound.step(g, xs[t], h, c)?;
            out[t] = h_new;
            h = h_new;
            c = c_new;
        }
        Ok(out)
    }
}

impl BoundLstm {
    pub fn step(&self, g: &mut Graph, x: Var, h: Var, c: Var) -> Result<(Var, Var)> {
        let hc = g.lstm_cell(x, h, c, self.w_ih, self.w_hh, self.b)?;
        let h_new = g.slice(hc, 0, self.hidden);
        let c_new = g.slice(hc, self.hidden, self.hidden);
        Ok((h_new, c_new))
    }
}

/// Stacked bidirectional LSTM. Layer `l + 1` reads the concatenated
/// forward/backward states of layer `l`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BiLstm {
    pub layers: Vec<(LstmLayer, LstmLayer)>,
    pub hidden: usize,
}

impl BiLstm {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: usize,
        layers: usize,
        rng: &mut R,
    ) -> Self {
        let layers = (0..layers)
            .map(|l| {
                let in_dim = if l == 0 { input } else { 2 * hidden };
                (
                    LstmLayer::new(store, &format!("{name}.l{l}.fwd"), in_dim, hidden, rng),
                    LstmLayer::new(store, &format!("{name}.l{l}.bwd"), in_dim, hidden, rng),
                )
            })
            .collect();
        BiLstm { layers, hidden }
    }

    pub fn output_dim(&self) -> usize {
        2 * self.hidden
    }

    /// Per-layer outputs; element `l` holds `[h_f; h_b]` at every position
    /// after layer `l`.
    pub fn forward_layers(&self, g: &mut Graph, xs: &[Var]) -> Result<Vec<Vec<Var>>> {
        if xs.is_empty() {
            return Err(Error::Argument("bi-LSTM over an empty sequence".into()));
        }
        let mut outputs = Vec::with_capacity(self.layers.len());
        let mut current = xs.to_vec();
        for (fwd, bwd) in &self.layers {
            let hf = fwd.run(g, &current, false)?;
            let hb = bwd.run(g, &current, true)?;
            current = hf
                .iter()
                .zip(&hb)
                .map(|(&f, &b)| g.concat(&[f, b]))
                .collect();
            outputs.push(current.clone());
        }
        Ok(outputs)
    }

    pub fn forward(&self, g: &mut Graph, xs: &[Var]) -> Result<Vec<Var>> {
        Ok(self.forward_layers(g, xs)?.pop().unwrap_or_default())
    }

    /// Concatenation of the last forward state and the last backward state
    /// (the one at position 0) of the top layer.
    pub fn final_states(&self, g: &mut Graph, xs: &[Var]) -> Result<Var> {
        if xs.is_empty() {
            return Err(Error::Argument("bi-LSTM over an empty sequence".into()));
        }
        let mut current = xs.to_vec();
        let last = self.layers.len() - 1;
        for (l, (fwd, bwd)) in self.layers.iter().enumerate() {
            let hf = fwd.run(g, &current, false)?;
            let hb = bwd.run(g, &current, true)?;
            if l == last {
                return Ok(g.concat(&[hf[hf.len() - 1], hb[0]]));
            }
            current = hf
                .iter()
                .zip(&hb)
                .map(|(&f, &b)| g.concat(&[f, b]))
                .collect();
        }
        unreachable!("bi-LSTM without layers")
    }
}

/// `y = t ⊙ relu(W_H x + b_H) + (1 − t) ⊙ x` with `t = σ(W_T x + b_T)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Highway {
    pub transform: Linear,
    pub gate: Linear,
}

impl Highway {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, dim: usize, rng: &mut R) -> Self {
        let transform = Linear::new(store, &format!("{name}.h"), dim, dim, true, rng);
        let gate = Linear::new(store, &format!("{name}.t"), dim, dim, true, rng);
        // carry-biased start
        if let Some(b) = gate.b {
            store.value_mut(b).fill(-2.0);
        }
        Highway { transform, gate }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let pre = self.transform.forward(g, x)?;
        let h = g.relu(pre);
        let t_pre = self.gate.forward(g, x)?;
        let t = g.sigmoid(t_pre);
        let carry = g.one_minus(t);
        let a = g.mul(t, h)?;
        let b = g.mul(carry, x)?;
        g.add(a, b)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CharCnnConfig {
    pub char_dim: usize,
    pub widths: Vec<usize>,
    pub filters_per_width: usize,
    pub highway_layers: usize,
}

impl Default for CharCnnConfig {
    fn default() -> Self {
        CharCnnConfig {
            char_dim: 15,
            widths: (1..=6).collect(),
            filters_per_width: 25,
            highway_layers: 1,
        }
    }
}

impl CharCnnConfig {
    /// Width `w` gets `filters_per_width · w` filters.
    pub fn total_filters(&self) -> usize {
        self.widths.iter().map(|w| self.filters_per_width * w).sum()
    }

    pub fn max_width(&self) -> usize {
        self.widths.iter().copied().max().unwrap_or(1)
    }
}

/// Multi-width convolution over character embeddings, tanh, max-pool over
/// positions, highway layers and a projection to the output width.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CharCnn {
    pub convs: Vec<(usize, ParamId, ParamId)>,
    pub highways: Vec<Highway>,
    pub projection: Linear,
}

impl CharCnn {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        config: &CharCnnConfig,
        output: usize,
        rng: &mut R,
    ) -> Self {
        let convs = config
            .widths
            .iter()
            .map(|&w| {
                let filters = config.filters_per_width * w;
                let weights =
                    store.glorot(format!("{name}.conv{w}.w"), filters, w * config.char_dim, rng);
                let bias = store.zeros(format!("{name}.conv{w}.b"), &[filters]);
                (w, weights, bias)
            })
            .collect();
        let total = config.total_filters();
        let highways = (0..config.highway_layers)
            .map(|l| Highway::new(store, &format!("{name}.highway{l}"), total, rng))
            .collect();
        let projection = Linear::new(store, &format!("{name}.proj"), total, output, true, rng);
        CharCnn {
            convs,
            highways,
            projection,
        }
    }

    pub fn forward(&self, g: &mut Graph, units: &[Var]) -> Result<Var> {
        let padded: Vec<Option<Var>> = units.iter().map(|&u| Some(u)).collect();
        self.forward_padded(g, &padded, units.len())
    }

    /// `units` may carry arbitrary trailing padding (`None`); windows only
    /// start at the first `len` real positions.
    pub fn forward_padded(&self, g: &mut Graph, units: &[Option<Var>], len: usize) -> Result<Var> {
        if len == 0 {
            return Err(Error::Argument("char-CNN over an empty form".into()));
        }
        let mut pooled = Vec::with_capacity(self.convs.len());
        for &(width, w, b) in &self.convs {
            let wv = g.param(w);
            let bv = g.param(b);
            let pre = g.conv_max(units, len, wv, bv, width)?;
            pooled.push(g.tanh(pre));
        }
        let mut x = g.concat(&pooled);
        for hw in &self.highways {
            x = hw.forward(g, x)?;
        }
        self.projection.forward(g, x)
    }
}

/// Feedforward classifier: ReLU hidden layers with dropout, linear output.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Mlp {
    pub hidden: Vec<Linear>,
    pub output: Linear,
    pub dropout: f64,
}

impl Mlp {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: &[usize],
        output: usize,
        dropout: f64,
        rng: &mut R,
    ) -> Self {
        let mut layers = Vec::new();
        let mut in_dim = input;
        for (l, &h) in hidden.iter().enumerate() {
            layers.push(Linear::new(store, &format!("{name}.hidden{l}"), in_dim, h, true, rng));
            in_dim = h;
        }
        let out = Linear::new(store, &format!("{name}.out"), in_dim, output, true, rng);
        Mlp {
            hidden: layers,
            output: out,
            dropout,
        }
    }

    pub fn forward<R: Rng>(&self, g: &mut Graph, x: Var, mut rng: Option<&mut R>) -> Result<Var> {
        let mut h = x;
        for layer in &self.hidden {
            let pre = layer.forward(g, h)?;
            h = g.relu(pre);
            h = dropout(g, h, self.dropout, rng.as_deref_mut())?;
        }
        self.output.forward(g, h)
    }
}
