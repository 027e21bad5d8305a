//! Tape-based reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Graph`] is built fresh for every example. Operations append nodes to
//! the tape in topological order; [`Graph::backward`] walks the tape in
//! reverse and accumulates parameter gradients into caller-provided buffers.
//! Parameters are referenced by [`ParamId`] and read in place, so large
//! embedding tables are never copied onto the tape.

use super::params::ParamId;
use super::tensor::{
    axpy, dot, matvec_acc, matvec_t_acc, outer_acc, sigmoid, softmax, Tensor,
};
use crate::error::{Error, Result};

/// Handle to a node on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Input,
    Param(ParamId),
    Lookup {
        param: ParamId,
        row: usize,
    },
    Affine {
        w: Var,
        x: Var,
        b: Option<Var>,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    ScaleShift {
        x: Var,
        scale: f64,
    },
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    Concat(Vec<Var>),
    Slice {
        x: Var,
        start: usize,
    },
    Gather {
        x: Var,
        indices: Vec<usize>,
    },
    Dot(Var, Var),
    Sum(Var),
    Softmax(Var),
    SoftmaxCrossEntropy {
        logits: Var,
        gold: usize,
        probs: Vec<f64>,
    },
    Mask {
        x: Var,
        mask: Vec<f64>,
    },
    WeightedSum {
        weights: Var,
        items: Vec<Var>,
    },
    Lstm {
        x: Var,
        h: Var,
        c: Var,
        w_ih: Var,
        w_hh: Var,
        b: Var,
        // i, f, g, o, tanh(c') stacked, each of hidden width
        cache: Vec<f64>,
    },
    PairScores {
        deps: Vec<Var>,
        heads: Vec<Var>,
        v: Var,
        // tanh(dep_i + head_j) for every pair, row-major
        cache: Vec<f64>,
    },
    ConvMax {
        units: Vec<Option<Var>>,
        w: Var,
        b: Var,
        width: usize,
        // window start selected by the max for each filter
        argmax: Vec<usize>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
}

/// A computation tape bound to a set of parameter values.
pub struct Graph<'p> {
    params: &'p [Tensor],
    nodes: Vec<Node>,
}

fn check_len(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::shape(op, a.shape(), b.shape()));
    }
    Ok(())
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p [Tensor]) -> Self {
        Graph {
            params,
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        match self.nodes[v.0].op {
            Op::Param(p) => &self.params[p.0],
            _ => &self.nodes[v.0].value,
        }
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v).scalar_value()
    }

    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Input)
    }

    pub fn zeros(&mut self, len: usize) -> Var {
        self.input(Tensor::zeros(&[len]))
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.push(Tensor::zeros(&[0]), Op::Param(id))
    }

    /// Copies one row of an embedding table onto the tape.
    pub fn lookup(&mut self, param: ParamId, row: usize) -> Var {
        let table = &self.params[param.0];
        assert!(
            row < table.rows(),
            "embedding row {row} out of range for table with {} rows",
            table.rows()
        );
        let value = Tensor::vector(table.row(row).to_vec());
        self.push(value, Op::Lookup { param, row })
    }

    /// `W x + b` for a matrix `W` and vector `x`.
    pub fn affine(&mut self, w: Var, x: Var, b: Option<Var>) -> Result<Var> {
        let wv = self.value(w);
        let xv = self.value(x);
        if wv.shape().len() != 2 || wv.cols() != xv.len() {
            return Err(Error::shape("affine", wv.shape(), xv.shape()));
        }
        let mut out = vec![0.0; wv.rows()];
        if let Some(b) = b {
            let bv = self.value(b);
            if bv.len() != wv.rows() {
                return Err(Error::shape("affine bias", wv.shape(), bv.shape()));
            }
            out.copy_from_slice(bv.data());
        }
        matvec_acc(wv.data(), xv.data(), &mut out);
        Ok(self.push(Tensor::vector(out), Op::Affine { w, x, b }))
    }

    fn zip_with(
        &mut self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        let av = self.value(a);
        let bv = self.value(b);
        check_len(op, av, bv)?;
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| f(*x, *y)).collect();
        Ok(Tensor::new(av.shape().to_vec(), data).unwrap())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip_with("add", a, b, |x, y| x + y)?;
        Ok(self.push(value, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip_with("sub", a, b, |x, y| x - y)?;
        Ok(self.push(value, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip_with("mul", a, b, |x, y| x * y)?;
        Ok(self.push(value, Op::Mul(a, b)))
    }

    /// `scale * x + shift`.
    pub fn scale_shift(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        let xv = self.value(x);
        let data = xv.data().iter().map(|v| scale * v + shift).collect();
        let value = Tensor::new(xv.shape().to_vec(), data).unwrap();
        self.push(value, Op::ScaleShift { x, scale })
    }

    /// `1 - x`, elementwise.
    pub fn one_minus(&mut self, x: Var) -> Var {
        self.scale_shift(x, -1.0, 1.0)
    }

    fn map(&mut self, x: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let xv = self.value(x);
        let data = xv.data().iter().map(|v| f(*v)).collect();
        Tensor::new(xv.shape().to_vec(), data).unwrap()
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let value = self.map(x, f64::tanh);
        self.push(value, Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self.map(x, sigmoid);
        self.push(value, Op::Sigmoid(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.map(x, |v| v.max(0.0));
        self.push(value, Op::Relu(x))
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let mut data = Vec::new();
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        self.push(Tensor::vector(data), Op::Concat(parts.to_vec()))
    }

    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Var {
        let data = self.value(x).data()[start..start + len].to_vec();
        self.push(Tensor::vector(data), Op::Slice { x, start })
    }

    /// Picks elements of the flattened `x` at the given positions.
    pub fn gather(&mut self, x: Var, indices: Vec<usize>) -> Var {
        let xv = self.value(x).data();
        let data = indices.iter().map(|&i| xv[i]).collect();
        self.push(Tensor::vector(data), Op::Gather { x, indices })
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let av = self.value(a);
        let bv = self.value(b);
        check_len("dot", av, bv)?;
        let value = Tensor::scalar(dot(av.data(), bv.data()));
        Ok(self.push(value, Op::Dot(a, b)))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).data().iter().sum());
        self.push(value, Op::Sum(x))
    }

    /// Sums a list of scalars (or equally shaped tensors).
    pub fn add_all(&mut self, items: &[Var]) -> Result<Var> {
        let mut iter = items.iter();
        let first = *iter
            .next()
            .ok_or_else(|| Error::Argument("add_all of empty list".into()))?;
        iter.try_fold(first, |acc, &x| self.add(acc, x))
    }

    pub fn softmax(&mut self, x: Var) -> Var {
        let value = Tensor::vector(softmax(self.value(x).data()));
        self.push(value, Op::Softmax(x))
    }

    /// `-log softmax(logits)[gold]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, gold: usize) -> Result<Var> {
        let lv = self.value(logits);
        if gold >= lv.len() {
            return Err(Error::Argument(format!(
                "gold index {gold} out of range for {} logits",
                lv.len()
            )));
        }
        let max = lv.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let log_z = max + lv.data().iter().map(|x| (x - max).exp()).sum::<f64>().ln();
        let loss = log_z - lv.data()[gold];
        let probs = lv.data().iter().map(|x| (x - log_z).exp()).collect();
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftmaxCrossEntropy {
                logits,
                gold,
                probs,
            },
        ))
    }

    /// Elementwise multiplication by a constant mask.
    pub fn mask(&mut self, x: Var, mask: Vec<f64>) -> Result<Var> {
        let xv = self.value(x);
        if xv.len() != mask.len() {
            return Err(Error::shape("mask", xv.shape(), &[mask.len()]));
        }
        let data = xv.data().iter().zip(&mask).map(|(a, m)| a * m).collect();
        let value = Tensor::new(xv.shape().to_vec(), data).unwrap();
        Ok(self.push(value, Op::Mask { x, mask }))
    }

    /// `Σ_t weights[t] · items[t]`.
    pub fn weighted_sum(&mut self, weights: Var, items: &[Var]) -> Result<Var> {
        let wv = self.value(weights).data().to_vec();
        if wv.len() != items.len() || items.is_empty() {
            return Err(Error::shape(
                "weighted_sum",
                self.value(weights).shape(),
                &[items.len()],
            ));
        }
        let width = self.value(items[0]).len();
        let mut out = vec![0.0; width];
        for (&w, &item) in wv.iter().zip(items) {
            let iv = self.value(item);
            if iv.len() != width {
                return Err(Error::shape("weighted_sum", &[width], iv.shape()));
            }
            axpy(w, iv.data(), &mut out);
        }
        Ok(self.push(
            Tensor::vector(out),
            Op::WeightedSum {
                weights,
                items: items.to_vec(),
            },
        ))
    }

    /// One LSTM step. Returns a node holding `[h'; c']`; gate order in the
    /// weight rows is input, forget, candidate, output.
    #[allow(clippy::too_many_arguments)]
    pub fn lstm_cell(
        &mut self,
        x: Var,
        h: Var,
        c: Var,
        w_ih: Var,
        w_hh: Var,
        b: Var,
    ) -> Result<Var> {
        let hidden = self.value(h).len();
        let (wi, wh, bv) = (self.value(w_ih), self.value(w_hh), self.value(b));
        let xv = self.value(x);
        let cv = self.value(c);
        if wi.rows() != 4 * hidden || wi.cols() != xv.len() {
            return Err(Error::shape("lstm input weights", wi.shape(), xv.shape()));
        }
        if wh.rows() != 4 * hidden || wh.cols() != hidden {
            return Err(Error::shape(
                "lstm recurrent weights",
                wh.shape(),
                self.value(h).shape(),
            ));
        }
        if cv.len() != hidden || bv.len() != 4 * hidden {
            return Err(Error::shape("lstm state", cv.shape(), bv.shape()));
        }
        let mut z = bv.data().to_vec();
        matvec_acc(wi.data(), xv.data(), &mut z);
        matvec_acc(wh.data(), self.value(h).data(), &mut z);
        let mut cache = vec![0.0; 5 * hidden];
        let mut out = vec![0.0; 2 * hidden];
        let c_prev = cv.data();
        for k in 0..hidden {
            let i = sigmoid(z[k]);
            let f = sigmoid(z[hidden + k]);
            let g = z[2 * hidden + k].tanh();
            let o = sigmoid(z[3 * hidden + k]);
            let c_new = f * c_prev[k] + i * g;
            let tc = c_new.tanh();
            out[k] = o * tc;
            out[hidden + k] = c_new;
            cache[k] = i;
            cache[hidden + k] = f;
            cache[2 * hidden + k] = g;
            cache[3 * hidden + k] = o;
            cache[4 * hidden + k] = tc;
        }
        Ok(self.push(
            Tensor::vector(out),
            Op::Lstm {
                x,
                h,
                c,
                w_ih,
                w_hh,
                b,
                cache,
            },
        ))
    }

    /// `S[i][j] = v · tanh(deps[i] + heads[j])` as a `deps × heads` matrix.
    pub fn pair_scores(&mut self, deps: &[Var], heads: &[Var], v: Var) -> Result<Var> {
        let width = self.value(v).len();
        for &t in deps.iter().chain(heads) {
            if self.value(t).len() != width {
                return Err(Error::shape(
                    "pair_scores",
                    self.value(v).shape(),
                    self.value(t).shape(),
                ));
            }
        }
        let (n, m) = (deps.len(), heads.len());
        let mut cache = vec![0.0; n * m * width];
        let mut out = vec![0.0; n * m];
        let vv = self.value(v).data();
        for (i, &d) in deps.iter().enumerate() {
            let dv = self.value(d).data();
            for (j, &hd) in heads.iter().enumerate() {
                let hv = self.value(hd).data();
                let slot = &mut cache[(i * m + j) * width..(i * m + j + 1) * width];
                for k in 0..width {
                    slot[k] = (dv[k] + hv[k]).tanh();
                }
                out[i * m + j] = dot(vv, slot);
            }
        }
        let value = Tensor::new(vec![n, m], out).unwrap();
        Ok(self.push(
            value,
            Op::PairScores {
                deps: deps.to_vec(),
                heads: heads.to_vec(),
                v,
                cache,
            },
        ))
    }

    /// Narrow convolution of `width` over the unit sequence followed by a
    /// max over window positions, returning one pre-activation per filter.
    ///
    /// Windows start at every position `0..starts`; units past the end of
    /// the list, and `None` entries, read as zero padding.
    pub fn conv_max(
        &mut self,
        units: &[Option<Var>],
        starts: usize,
        w: Var,
        b: Var,
        width: usize,
    ) -> Result<Var> {
        let wv = self.value(w);
        let filters = wv.rows();
        let unit_dim = wv.cols() / width;
        if wv.cols() != unit_dim * width || self.value(b).len() != filters || starts == 0 {
            return Err(Error::shape("conv_max", wv.shape(), self.value(b).shape()));
        }
        for u in units.iter().flatten() {
            if self.value(*u).len() != unit_dim {
                return Err(Error::shape("conv_max unit", &[unit_dim], self.value(*u).shape()));
            }
        }
        let mut best = vec![f64::NEG_INFINITY; filters];
        let mut argmax = vec![0; filters];
        let mut window = vec![0.0; unit_dim * width];
        for p in 0..starts {
            window.fill(0.0);
            for k in 0..width {
                if let Some(Some(u)) = units.get(p + k) {
                    window[k * unit_dim..(k + 1) * unit_dim]
                        .copy_from_slice(self.value(*u).data());
                }
            }
            let mut pre = self.value(b).data().to_vec();
            matvec_acc(self.value(w).data(), &window, &mut pre);
            for f in 0..filters {
                if pre[f] > best[f] {
                    best[f] = pre[f];
                    argmax[f] = p;
                }
            }
        }
        Ok(self.push(
            Tensor::vector(best),
            Op::ConvMax {
                units: units.to_vec(),
                w,
                b,
                width,
                argmax,
            },
        ))
    }

    /// Backpropagates from the scalar `loss`, adding `d loss / d param` into
    /// `param_grads` (indexed by [`ParamId`]).
    pub fn backward(&self, loss: Var, param_grads: &mut [Tensor]) {
        self.backward_scaled(loss, 1.0, param_grads)
    }

    /// Like [`Graph::backward`] but seeds the output gradient with `seed`.
    pub fn backward_scaled(&self, loss: Var, seed: f64, param_grads: &mut [Tensor]) {
        assert_eq!(self.value(loss).len(), 1, "backward needs a scalar loss");
        let mut grads: Vec<Option<Vec<f64>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![seed]);

        fn acc(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut Vec<f64> {
            grads[v.0].get_or_insert_with(|| vec![0.0; len])
        }

        for idx in (0..=loss.0).rev() {
            let dy = match grads[idx].take() {
                Some(d) => d,
                None => continue,
            };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Input => {}
                Op::Param(p) => {
                    let g = param_grads[p.0].data_mut();
                    for (gi, di) in g.iter_mut().zip(&dy) {
                        *gi += di;
                    }
                }
                Op::Lookup { param, row } => {
                    let g = param_grads[param.0].row_mut(*row);
                    for (gi, di) in g.iter_mut().zip(&dy) {
                        *gi += di;
                    }
                }
                Op::Affine { w, x, b } => {
                    let wv = self.value(*w).data();
                    let xv = self.value(*x).data();
                    let xlen = xv.len();
                    matvec_t_acc(wv, &dy, acc(&mut grads, *x, xlen));
                    let wlen = wv.len();
                    outer_acc(&dy, xv, acc(&mut grads, *w, wlen));
                    if let Some(b) = b {
                        axpy(1.0, &dy, acc(&mut grads, *b, dy.len()));
                    }
                }
                Op::Add(a, b) => {
                    axpy(1.0, &dy, acc(&mut grads, *a, dy.len()));
                    axpy(1.0, &dy, acc(&mut grads, *b, dy.len()));
                }
                Op::Sub(a, b) => {
                    axpy(1.0, &dy, acc(&mut grads, *a, dy.len()));
                    axpy(-1.0, &dy, acc(&mut grads, *b, dy.len()));
                }
                Op::Mul(a, b) => {
                    let av = self.value(*a).data();
                    let bv = self.value(*b).data();
                    let ga = acc(&mut grads, *a, dy.len());
                    for k in 0..dy.len() {
                        ga[k] += dy[k] * bv[k];
                    }
                    let gb = acc(&mut grads, *b, dy.len());
                    for k in 0..dy.len() {
                        gb[k] += dy[k] * av[k];
                    }
                }
                Op::ScaleShift { x, scale } => {
                    axpy(*scale, &dy, acc(&mut grads, *x, dy.len()));
                }
                Op::Tanh(x) => {
                    let y = node.value.data();
                    let gx = acc(&mut grads, *x, dy.len());
                    for k in 0..dy.len() {
                        gx[k] += dy[k] * (1.0 - y[k] * y[k]);
                    }
                }
                Op::Sigmoid(x) => {
                    let y = node.value.data();
                    let gx = acc(&mut grads, *x, dy.len());
                    for k in 0..dy.len() {
                        gx[k] += dy[k] * y[k] * (1.0 - y[k]);
                    }
                }
                Op::Relu(x) => {
                    let xv = self.value(*x).data();
                    let gx = acc(&mut grads, *x, dy.len());
                    for k in 0..dy.len() {
                        if xv[k] > 0.0 {
                            gx[k] += dy[k];
                        }
                    }
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let len = self.value(*p).len();
                        axpy(1.0, &dy[offset..offset + len], acc(&mut grads, *p, len));
                        offset += len;
                    }
                }
                Op::Slice { x, start } => {
                    let len = self.value(*x).len();
                    let gx = acc(&mut grads, *x, len);
                    axpy(1.0, &dy, &mut gx[*start..*start + dy.len()]);
                }
                Op::Gather { x, indices } => {
                    let len = self.value(*x).len();
                    let gx = acc(&mut grads, *x, len);
                    for (d, &i) in dy.iter().zip(indices) {
                        gx[i] += d;
                    }
                }
                Op::Dot(a, b) => {
                    let av = self.value(*a).data();
                    let bv = self.value(*b).data();
                    axpy(dy[0], bv, acc(&mut grads, *a, av.len()));
                    axpy(dy[0], av, acc(&mut grads, *b, bv.len()));
                }
                Op::Sum(x) => {
                    let len = self.value(*x).len();
                    let gx = acc(&mut grads, *x, len);
                    gx.iter_mut().for_each(|g| *g += dy[0]);
                }
                Op::Softmax(x) => {
                    let p = node.value.data();
                    let inner = dot(&dy, p);
                    let gx = acc(&mut grads, *x, p.len());
                    for k in 0..p.len() {
                        gx[k] += p[k] * (dy[k] - inner);
                    }
                }
                Op::SoftmaxCrossEntropy {
                    logits,
                    gold,
                    probs,
                } => {
                    let gx = acc(&mut grads, *logits, probs.len());
                    for k in 0..probs.len() {
                        let target = if k == *gold { 1.0 } else { 0.0 };
                        gx[k] += dy[0] * (probs[k] - target);
                    }
                }
                Op::Mask { x, mask } => {
                    let gx = acc(&mut grads, *x, mask.len());
                    for k in 0..mask.len() {
                        gx[k] += dy[k] * mask[k];
                    }
                }
                Op::WeightedSum { weights, items } => {
                    let wv = self.value(*weights).data();
                    let mut gw = vec![0.0; items.len()];
                    for (t, &item) in items.iter().enumerate() {
                        let iv = self.value(item).data();
                        gw[t] = dot(&dy, iv);
                        axpy(wv[t], &dy, acc(&mut grads, item, dy.len()));
                    }
                    axpy(1.0, &gw, acc(&mut grads, *weights, items.len()));
                }
                Op::Lstm {
                    x,
                    h,
                    c,
                    w_ih,
                    w_hh,
                    b,
                    cache,
                } => {
                    let hidden = dy.len() / 2;
                    let (dh, dc) = dy.split_at(hidden);
                    let c_prev = self.value(*c).data();
                    let mut dz = vec![0.0; 4 * hidden];
                    let mut dc_prev = vec![0.0; hidden];
                    for k in 0..hidden {
                        let i = cache[k];
                        let f = cache[hidden + k];
                        let g = cache[2 * hidden + k];
                        let o = cache[3 * hidden + k];
                        let tc = cache[4 * hidden + k];
                        let dct = dc[k] + dh[k] * o * (1.0 - tc * tc);
                        dz[k] = dct * g * i * (1.0 - i);
                        dz[hidden + k] = dct * c_prev[k] * f * (1.0 - f);
                        dz[2 * hidden + k] = dct * i * (1.0 - g * g);
                        dz[3 * hidden + k] = dh[k] * tc * o * (1.0 - o);
                        dc_prev[k] = dct * f;
                    }
                    axpy(1.0, &dc_prev, acc(&mut grads, *c, hidden));
                    let wi = self.value(*w_ih).data();
                    let wh = self.value(*w_hh).data();
                    let xv = self.value(*x).data();
                    let hv = self.value(*h).data();
                    matvec_t_acc(wi, &dz, acc(&mut grads, *x, xv.len()));
                    matvec_t_acc(wh, &dz, acc(&mut grads, *h, hidden));
                    outer_acc(&dz, xv, acc(&mut grads, *w_ih, wi.len()));
                    outer_acc(&dz, hv, acc(&mut grads, *w_hh, wh.len()));
                    axpy(1.0, &dz, acc(&mut grads, *b, 4 * hidden));
                }
                Op::PairScores {
                    deps,
                    heads,
                    v,
                    cache,
                } => {
                    let width = self.value(*v).len();
                    let vv = self.value(*v).data().to_vec();
                    let m = heads.len();
                    let mut gv = vec![0.0; width];
                    let mut gdeps = vec![vec![0.0; width]; deps.len()];
                    let mut gheads = vec![vec![0.0; width]; m];
                    for i in 0..deps.len() {
                        for j in 0..m {
                            let d = dy[i * m + j];
                            if d == 0.0 {
                                continue;
                            }
                            let t = &cache[(i * m + j) * width..(i * m + j + 1) * width];
                            for k in 0..width {
                                gv[k] += d * t[k];
                                let pre = d * vv[k] * (1.0 - t[k] * t[k]);
                                gdeps[i][k] += pre;
                                gheads[j][k] += pre;
                            }
                        }
                    }
                    axpy(1.0, &gv, acc(&mut grads, *v, width));
                    for (d, g) in deps.iter().zip(&gdeps) {
                        axpy(1.0, g, acc(&mut grads, *d, width));
                    }
                    for (h, g) in heads.iter().zip(&gheads) {
                        axpy(1.0, g, acc(&mut grads, *h, width));
                    }
                }
                Op::ConvMax {
                    units,
                    w,
                    b,
                    width,
                    argmax,
                } => {
                    let wv = self.value(*w);
                    let cols = wv.cols();
                    let unit_dim = cols / width;
                    let wdata = wv.data();
                    let mut gw = vec![0.0; wdata.len()];
                    for (f, &p) in argmax.iter().enumerate() {
                        let d = dy[f];
                        if d == 0.0 {
                            continue;
                        }
                        for k in 0..*width {
                            if let Some(Some(u)) = units.get(p + k) {
                                let uv = self.value(*u).data();
                                let off = f * cols + k * unit_dim;
                                axpy(d, uv, &mut gw[off..off + unit_dim]);
                                let wrow = &wdata[off..off + unit_dim];
                                axpy(d, wrow, acc(&mut grads, *u, unit_dim));
                            }
                        }
                    }
                    axpy(1.0, &gw, acc(&mut grads, *w, wdata.len()));
                    axpy(1.0, &dy, acc(&mut grads, *b, dy.len()));
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::params::ParamStore;

    #[test]
    fn affine_identity_and_hand_example() {
        let mut store = ParamStore::new();
        let eye = store.add("eye", Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let w = store.add("w", Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let mut g = Graph::new(store.values());
        let pe = g.param(eye);
        let pw = g.param(w);
        let x = g.input(Tensor::vector(vec![3.0, -1.0]));
        let y = g.affine(pe, x, None).unwrap();
        assert_eq!(g.value(y).data(), &[3.0, -1.0]);
        let ones = g.input(Tensor::vector(vec![1.0, 1.0]));
        let y = g.affine(pw, ones, None).unwrap();
        assert_eq!(g.value(y).data(), &[3.0, 7.0]);
    }

    #[test]
    fn affine_shape_error_names_both_shapes() {
        let mut store = ParamStore::new();
        let w = store.zeros("w", &[2, 3]);
        let mut g = Graph::new(store.values());
        let pw = g.param(w);
        let x = g.input(Tensor::vector(vec![1.0, 2.0]));
        let err = g.affine(pw, x, None).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[2]"), "{msg}");
    }

    #[test]
    fn softmax_cross_entropy_values() {
        let store = ParamStore::new();
        let mut g = Graph::new(store.values());
        let uniform = g.input(Tensor::vector(vec![0.5; 4]));
        let l = g.softmax_cross_entropy(uniform, 2).unwrap();
        assert!((g.scalar(l) - 4f64.ln()).abs() < 1e-12);

        let logits = g.input(Tensor::vector(vec![1.0, 2.0, 3.0]));
        let l = g.softmax_cross_entropy(logits, 2).unwrap();
        let e = std::f64::consts::E;
        let expected = -(e.powi(3) / (e + e * e + e.powi(3))).ln();
        assert!((g.scalar(l) - expected).abs() < 1e-12);

        let saturated = g.input(Tensor::vector(vec![0.0, 1000.0, 0.0]));
        let l = g.softmax_cross_entropy(saturated, 1).unwrap();
        assert!(g.scalar(l).abs() < 1e-12);

        assert!(g.softmax_cross_entropy(logits, 3).is_err());
    }

    #[test]
    fn lstm_zero_weights_and_inputs_give_zero_state() {
        let mut store = ParamStore::new();
        let wi = store.zeros("wi", &[8, 3]);
        let wh = store.zeros("wh", &[8, 2]);
        let b = store.zeros("b", &[8]);
        let mut g = Graph::new(store.values());
        let (wi, wh, b) = (g.param(wi), g.param(wh), g.param(b));
        let x = g.zeros(3);
        let h = g.zeros(2);
        let c = g.zeros(2);
        let hc = g.lstm_cell(x, h, c, wi, wh, b).unwrap();
        assert_eq!(g.value(hc).data(), &[0.0; 4]);
    }

    #[test]
    fn lstm_saturated_gates_add_candidate_to_cell() {
        // input and forget gates fully open: c' = c + tanh(candidate)
        let mut store = ParamStore::new();
        let wi = store.add("wi", Tensor::matrix(4, 1, vec![0.0, 0.0, 1.0, 0.0]).unwrap());
        let wh = store.zeros("wh", &[4, 1]);
        let b = store.add("b", Tensor::vector(vec![60.0, 60.0, 0.0, 60.0]));
        let mut g = Graph::new(store.values());
        let (wi, wh, b) = (g.param(wi), g.param(wh), g.param(b));
        let x = g.input(Tensor::vector(vec![0.7]));
        let h = g.zeros(1);
        let c = g.input(Tensor::vector(vec![0.25]));
        let hc = g.lstm_cell(x, h, c, wi, wh, b).unwrap();
        let c_new = g.value(hc).data()[1];
        assert!((c_new - (0.25 + 0.7f64.tanh())).abs() < 1e-12);
        assert!((g.value(hc).data()[0] - c_new.tanh()).abs() < 1e-12);
    }

    #[test]
    fn affine_gradient_of_sum_is_column_sums() {
        let mut store = ParamStore::new();
        let w = store.add(
            "w",
            Tensor::matrix(2, 3, vec![1.0, 2.0, 3.0, -4.0, 5.0, 0.5]).unwrap(),
        );
        let x_id = store.add("x", Tensor::vector(vec![0.1, 0.2, 0.3]));
        let (values, grads) = store.split();
        let mut g = Graph::new(values);
        let pw = g.param(w);
        let px = g.param(x_id);
        let y = g.affine(pw, px, None).unwrap();
        let s = g.sum(y);
        g.backward(s, grads);
        assert_eq!(store.grad(x_id).data(), &[-3.0, 7.0, 3.5]);
    }
}
