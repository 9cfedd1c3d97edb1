//! A small reverse-mode autodiff engine.
//!
//! Operations are coarse (a whole convolution, a whole LSTM pass over a
//! sequence) and each carries a hand-written backward rule. A [`Graph`] is a
//! tape: every op appends a node holding its output and whatever the
//! backward pass needs, and [`Graph::backward`] walks the tape in reverse.
//! Trainable tensors live in a [`ParamStore`]; a graph reads them through
//! [`Graph::param`] and [`Graph::param_grads`] sums the gradients back per
//! parameter.
//!
//! Sequence tensors use the `[batch, time, channels]` layout.
//!
//! ```
//! use wavecast::nn::{Graph, ParamStore, Tensor};
//!
//! let mut store = ParamStore::default();
//! let w = store.add("w", Tensor::scalar(3.0));
//! let mut g = Graph::new();
//! let wv = g.param(&store, w);
//! let sq = g.mul(wv, wv).unwrap();
//! let loss = g.sum(sq);
//! g.backward(loss).unwrap();
//! assert_eq!(g.param_grads(&store)[w.0], vec![6.0]);
//! ```

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Tensor> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::Shape(format!("shape {shape:?} needs {} values, got {}", shape.iter().product::<usize>(), data.len())));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn scalar(v: f64) -> Tensor {
        Tensor {
            shape: vec![1],
            data: vec![v],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(pub usize);

/// Named trainable tensors.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    pub names: Vec<String>,
    pub tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn add(&mut self, name: impl Into<String>, t: Tensor) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(t);
        ParamId(self.tensors.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalars.
    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }
}

/// Uniform `±sqrt(6 / fan_in)`.
pub fn he_uniform(shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> Tensor {
    uniform(shape, (6.0 / fan_in as f64).sqrt(), rng)
}

pub fn uniform(shape: &[usize], bound: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor {
        shape: shape.to_vec(),
        data: (0..n).map(|_| rng.random_range(-bound..=bound)).collect(),
    }
}

/// Running statistics of a batch-norm layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchNormState {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNormState {
    pub fn new(channels: usize) -> Self {
        BatchNormState {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
            momentum: 0.1,
            eps: 1e-5,
        }
    }
}

pub type Var = usize;

#[derive(Clone, Debug)]
struct LstmCache {
    batch: usize,
    steps: usize,
    hidden: usize,
    input: usize,
    /// Per (b, t): `[h_{t-1}, x_t]`.
    hx: Vec<f64>,
    /// Per (b, t): activated gates `f, i, g, o`, each of width `hidden`.
    gates: Vec<f64>,
    /// Per (b, t): `c_t`.
    cell: Vec<f64>,
}

#[derive(Clone, Debug)]
enum Op {
    Input,
    Param(ParamId),
    Conv1d { x: Var, w: Var, b: Var, dilation: usize },
    BatchNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, inv_std: Vec<f64>, batch_stats: bool },
    Relu(Var),
    Dropout { x: Var, mask: Vec<f64> },
    Add(Var, Var),
    Mul(Var, Var),
    Sum(Var),
    Lstm { x: Var, w: Var, b: Var, cache: Box<LstmCache> },
    LastStep(Var),
    Dense { x: Var, w: Var, b: Var },
    Mse { pred: Var, target: Vec<f64> },
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Tape of recorded operations.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

fn dims3(t: &Tensor, what: &str) -> Result<(usize, usize, usize)> {
    match t.shape() {
        [a, b, c] => Ok((*a, *b, *c)),
        s => Err(Error::Shape(format!("{what} must be 3-D, got {s:?}"))),
    }
}

/// Core of the causal convolution: `y[b,t,o] += Σ_i Σ_c w[i,c,o] x[b,t-d·i,c]`.
fn conv_accumulate(x: &[f64], (batch, steps, cin): (usize, usize, usize), w: &[f64], k: usize, cout: usize, d: usize, y: &mut [f64]) {
    for b in 0..batch {
        for t in 0..steps {
            let yrow = &mut y[(b * steps + t) * cout..(b * steps + t + 1) * cout];
            for i in 0..k {
                let Some(src) = t.checked_sub(d * i) else { break };
                let xrow = &x[(b * steps + src) * cin..(b * steps + src + 1) * cin];
                for (c, &xv) in xrow.iter().enumerate() {
                    if xv == 0.0 {
                        continue;
                    }
                    let wrow = &w[(i * cin + c) * cout..(i * cin + c + 1) * cout];
                    for (yo, wo) in yrow.iter_mut().zip(wrow) {
                        *yo += xv * wo;
                    }
                }
            }
        }
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// One LSTM pass over `x` (`[batch, steps, input]`) from zero state.
/// `w` is `[4H, H + input]` with row blocks `f, i, g, o` acting on
/// `[h_{t-1}, x_t]`; `b` is `[4H]`. Returns `h` for every step.
fn lstm_run(x: &[f64], (batch, steps, input): (usize, usize, usize), w: &[f64], bias: &[f64], hidden: usize) -> (Vec<f64>, LstmCache) {
    let width = hidden + input;
    let mut cache = LstmCache {
        batch,
        steps,
        hidden,
        input,
        hx: vec![0.0; batch * steps * width],
        gates: vec![0.0; batch * steps * 4 * hidden],
        cell: vec![0.0; batch * steps * hidden],
    };
    let mut out = vec![0.0; batch * steps * hidden];
    let mut z = vec![0.0; 4 * hidden];
    for b in 0..batch {
        let mut h = vec![0.0; hidden];
        let mut c = vec![0.0; hidden];
        for t in 0..steps {
            let bt = b * steps + t;
            let hx = &mut cache.hx[bt * width..(bt + 1) * width];
            hx[..hidden].copy_from_slice(&h);
            hx[hidden..].copy_from_slice(&x[bt * input..(bt + 1) * input]);
            for (r, zr) in z.iter_mut().enumerate() {
                let row = &w[r * width..(r + 1) * width];
                *zr = bias[r] + row.iter().zip(hx.iter()).map(|(a, b)| a * b).sum::<f64>();
            }
            let gates = &mut cache.gates[bt * 4 * hidden..(bt + 1) * 4 * hidden];
            for j in 0..hidden {
                let f = sigmoid(z[j]);
                let i = sigmoid(z[hidden + j]);
                let g = z[2 * hidden + j].tanh();
                let o = sigmoid(z[3 * hidden + j]);
                c[j] = f * c[j] + i * g;
                h[j] = o * c[j].tanh();
                gates[j] = f;
                gates[hidden + j] = i;
                gates[2 * hidden + j] = g;
                gates[3 * hidden + j] = o;
            }
            cache.cell[bt * hidden..(bt + 1) * hidden].copy_from_slice(&c);
            out[bt * hidden..(bt + 1) * hidden].copy_from_slice(&h);
        }
    }
    (out, cache)
}

impl Graph {
    pub fn new() -> Graph {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        self.nodes.len() - 1
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v].value
    }

    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Input)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.get(id).clone(), Op::Param(id))
    }

    /// Causal dilated convolution. `x` is `[B, T, Cin]`, `w` is
    /// `[k, Cin, Cout]`, `b` is `[Cout]`; the output keeps length `T`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var, dilation: usize) -> Result<Var> {
        let (batch, steps, cin) = dims3(self.value(x), "conv input")?;
        let (k, wc, cout) = dims3(self.value(w), "conv kernel")?;
        if wc != cin || self.value(b).len() != cout || dilation == 0 {
            return Err(Error::Shape(format!(
                "conv kernel {:?} / bias {:?} / dilation {dilation} do not fit input {:?}",
                self.value(w).shape(),
                self.value(b).shape(),
                self.value(x).shape()
            )));
        }
        let mut y = Vec::with_capacity(batch * steps * cout);
        for _ in 0..batch * steps {
            y.extend_from_slice(self.value(b).data());
        }
        conv_accumulate(self.value(x).data(), (batch, steps, cin), self.value(w).data(), k, cout, dilation, &mut y);
        Ok(self.push(Tensor { shape: vec![batch, steps, cout], data: y }, Op::Conv1d { x, w, b, dilation }))
    }

    /// Batch normalisation over batch and time, per channel. With
    /// `training` and more than one sample the batch statistics are used and
    /// folded into `state`; otherwise the running statistics are used.
    pub fn batch_norm(&mut self, x: Var, gamma: Var, beta: Var, state: &mut BatchNormState, training: bool) -> Result<Var> {
        let (batch, steps, ch) = dims3(self.value(x), "batch-norm input")?;
        if self.value(gamma).len() != ch || self.value(beta).len() != ch || state.mean.len() != ch {
            return Err(Error::Shape(format!("batch-norm parameters do not match {ch} channels")));
        }
        let n = batch * steps;
        let batch_stats = training && batch > 1;
        if training && batch == 1 {
            warn!("batch norm on a single-sample batch; using running statistics");
        }
        let xd = self.value(x).data();
        let (mean, var) = if batch_stats {
            let mut mean = vec![0.0; ch];
            let mut var = vec![0.0; ch];
            for r in 0..n {
                for c in 0..ch {
                    mean[c] += xd[r * ch + c];
                }
            }
            mean.iter_mut().for_each(|m| *m /= n as f64);
            for r in 0..n {
                for c in 0..ch {
                    let d = xd[r * ch + c] - mean[c];
                    var[c] += d * d;
                }
            }
            var.iter_mut().for_each(|v| *v /= n as f64);
            let m = state.momentum;
            let unbias = if n > 1 { n as f64 / (n - 1) as f64 } else { 1.0 };
            for c in 0..ch {
                state.mean[c] = (1.0 - m) * state.mean[c] + m * mean[c];
                state.var[c] = (1.0 - m) * state.var[c] + m * var[c] * unbias;
            }
            (mean, var)
        } else {
            (state.mean.clone(), state.var.clone())
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + state.eps).sqrt()).collect();
        let g = self.value(gamma).data();
        let bt = self.value(beta).data();
        let mut xhat = vec![0.0; n * ch];
        let mut y = vec![0.0; n * ch];
        for r in 0..n {
            for c in 0..ch {
                let h = (xd[r * ch + c] - mean[c]) * inv_std[c];
                xhat[r * ch + c] = h;
                y[r * ch + c] = g[c] * h + bt[c];
            }
        }
        let shape = self.value(x).shape().to_vec();
        Ok(self.push(
            Tensor { shape, data: y },
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            },
        ))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let t = Tensor {
            shape: v.shape.clone(),
            data: v.data.iter().map(|a| a.max(0.0)).collect(),
        };
        self.push(t, Op::Relu(x))
    }

    /// Inverted dropout: kept units are scaled by `1 / (1 - p)`. Without a
    /// random source the op is the identity.
    pub fn dropout(&mut self, x: Var, p: f64, rng: Option<&mut ChaCha8Rng>) -> Var {
        let n = self.value(x).len();
        let mask: Vec<f64> = match rng {
            Some(rng) if p > 0.0 => {
                let keep = 1.0 / (1.0 - p);
                (0..n).map(|_| if rng.random::<f64>() < p { 0.0 } else { keep }).collect()
            }
            _ => vec![1.0; n],
        };
        let v = self.value(x);
        let t = Tensor {
            shape: v.shape.clone(),
            data: v.data.iter().zip(&mask).map(|(a, m)| a * m).collect(),
        };
        self.push(t, Op::Dropout { x, mask })
    }

    fn same_shape(&self, a: Var, b: Var) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::Shape(format!("{:?} vs {:?}", self.value(a).shape(), self.value(b).shape())));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b)?;
        let data = self.value(a).data.iter().zip(&self.value(b).data).map(|(x, y)| x + y).collect();
        let shape = self.value(a).shape.clone();
        Ok(self.push(Tensor { shape, data }, Op::Add(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b)?;
        let data = self.value(a).data.iter().zip(&self.value(b).data).map(|(x, y)| x * y).collect();
        let shape = self.value(a).shape.clone();
        Ok(self.push(Tensor { shape, data }, Op::Mul(a, b)))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data.iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    /// LSTM over `[B, T, D]` from zero state; returns `[B, T, H]`.
    pub fn lstm(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (batch, steps, input) = dims3(self.value(x), "lstm input")?;
        let (rows, width) = match self.value(w).shape() {
            [r, c] => (*r, *c),
            s => return Err(Error::Shape(format!("lstm weights must be 2-D, got {s:?}"))),
        };
        if rows % 4 != 0 || width != rows / 4 + input || self.value(b).len() != rows {
            return Err(Error::Shape(format!(
                "lstm weights {:?} / bias {:?} do not fit input width {input}",
                self.value(w).shape(),
                self.value(b).shape()
            )));
        }
        let hidden = rows / 4;
        let (out, cache) = lstm_run(self.value(x).data(), (batch, steps, input), self.value(w).data(), self.value(b).data(), hidden);
        Ok(self.push(
            Tensor {
                shape: vec![batch, steps, hidden],
                data: out,
            },
            Op::Lstm {
                x,
                w,
                b,
                cache: Box::new(cache),
            },
        ))
    }

    /// `[B, T, C] -> [B, C]`, the last time step.
    pub fn last_step(&mut self, x: Var) -> Result<Var> {
        let (batch, steps, ch) = dims3(self.value(x), "sequence")?;
        let d = self.value(x).data();
        let mut out = Vec::with_capacity(batch * ch);
        for b in 0..batch {
            let r = (b * steps + steps - 1) * ch;
            out.extend_from_slice(&d[r..r + ch]);
        }
        Ok(self.push(Tensor { shape: vec![batch, ch], data: out }, Op::LastStep(x)))
    }

    /// `[B, I] x [I, O] + [O]`.
    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (batch, inp) = match self.value(x).shape() {
            [a, c] => (*a, *c),
            s => return Err(Error::Shape(format!("dense input must be 2-D, got {s:?}"))),
        };
        let (wi, out) = match self.value(w).shape() {
            [a, c] => (*a, *c),
            s => return Err(Error::Shape(format!("dense weights must be 2-D, got {s:?}"))),
        };
        if wi != inp || self.value(b).len() != out {
            return Err(Error::Shape("dense weights do not fit input".into()));
        }
        let xd = self.value(x).data();
        let wd = self.value(w).data();
        let mut y = Vec::with_capacity(batch * out);
        for r in 0..batch {
            y.extend_from_slice(self.value(b).data());
            let yr = &mut y[r * out..];
            for i in 0..inp {
                let xv = xd[r * inp + i];
                for (yo, wo) in yr.iter_mut().zip(&wd[i * out..(i + 1) * out]) {
                    *yo += xv * wo;
                }
            }
        }
        Ok(self.push(Tensor { shape: vec![batch, out], data: y }, Op::Dense { x, w, b }))
    }

    /// Mean squared error against a constant target of the same length.
    pub fn mse(&mut self, pred: Var, target: &[f64]) -> Result<Var> {
        let p = self.value(pred).data();
        if p.len() != target.len() || p.is_empty() {
            return Err(Error::LengthMismatch {
                left: p.len(),
                right: target.len(),
            });
        }
        let loss = p.iter().zip(target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / p.len() as f64;
        Ok(self.push(
            Tensor::scalar(loss),
            Op::Mse {
                pred,
                target: target.to_vec(),
            },
        ))
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.nodes.is_empty() || root >= self.nodes.len() {
            return Err(Error::NoForward);
        }
        if self.nodes[root].value.len() != 1 {
            return Err(Error::Shape("backward needs a scalar root".into()));
        }
        self.grads = vec![None; self.nodes.len()];
        self.grads[root] = Some(vec![1.0]);
        for v in (0..=root).rev() {
            let Some(dy) = self.grads[v].take() else { continue };
            let op = std::mem::replace(&mut self.nodes[v].op, Op::Input);
            self.backward_op(v, &op, &dy)?;
            self.nodes[v].op = op;
            self.grads[v] = Some(dy);
        }
        Ok(())
    }

    fn backward_op(&mut self, v: Var, op: &Op, dy: &[f64]) -> Result<()> {
        match *op {
            Op::Input | Op::Param(_) => {}
            Op::Conv1d { x, w, b, dilation } => {
                let (batch, steps, cin) = dims3(&self.nodes[x].value, "conv input")?;
                let (k, _, cout) = dims3(&self.nodes[w].value, "conv kernel")?;
                let xd = &self.nodes[x].value.data;
                let wd = &self.nodes[w].value.data;
                let mut dx = vec![0.0; xd.len()];
                let mut dw = vec![0.0; wd.len()];
                let mut db = vec![0.0; cout];
                for bb in 0..batch {
                    for t in 0..steps {
                        let dyr = &dy[(bb * steps + t) * cout..(bb * steps + t + 1) * cout];
                        for (o, g) in dyr.iter().enumerate() {
                            db[o] += g;
                        }
                        for i in 0..k {
                            let Some(src) = t.checked_sub(dilation * i) else { break };
                            let xo = (bb * steps + src) * cin;
                            for c in 0..cin {
                                let wo = (i * cin + c) * cout;
                                let wrow = &wd[wo..wo + cout];
                                let dwrow = &mut dw[wo..wo + cout];
                                let xv = xd[xo + c];
                                let mut s = 0.0;
                                for o in 0..cout {
                                    s += dyr[o] * wrow[o];
                                    dwrow[o] += xv * dyr[o];
                                }
                                dx[xo + c] += s;
                            }
                        }
                    }
                }
                self.acc_vec(x, dx);
                self.acc_vec(w, dw);
                self.acc_vec(b, db);
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                ref xhat,
                ref inv_std,
                batch_stats,
            } => {
                let ch = inv_std.len();
                let n = xhat.len() / ch;
                let g = &self.nodes[gamma].value.data;
                let mut dgamma = vec![0.0; ch];
                let mut dbeta = vec![0.0; ch];
                for r in 0..n {
                    for c in 0..ch {
                        dbeta[c] += dy[r * ch + c];
                        dgamma[c] += dy[r * ch + c] * xhat[r * ch + c];
                    }
                }
                let mut dx = vec![0.0; n * ch];
                if batch_stats {
                    let nf = n as f64;
                    for r in 0..n {
                        for c in 0..ch {
                            // dxhat = dy * gamma; its channel sums are dbeta*gamma and dgamma*gamma
                            let dxhat = dy[r * ch + c] * g[c];
                            dx[r * ch + c] =
                                inv_std[c] / nf * (nf * dxhat - dbeta[c] * g[c] - xhat[r * ch + c] * dgamma[c] * g[c]);
                        }
                    }
                } else {
                    for r in 0..n {
                        for c in 0..ch {
                            dx[r * ch + c] = dy[r * ch + c] * g[c] * inv_std[c];
                        }
                    }
                }
                self.acc_vec(x, dx);
                self.acc_vec(gamma, dgamma);
                self.acc_vec(beta, dbeta);
            }
            Op::Relu(x) => {
                let out = &self.nodes[v].value.data;
                let dx = dy.iter().zip(out).map(|(g, y)| if *y > 0.0 { *g } else { 0.0 }).collect();
                self.acc_vec(x, dx);
            }
            Op::Dropout { x, ref mask } => {
                let dx = dy.iter().zip(mask).map(|(g, m)| g * m).collect();
                self.acc_vec(x, dx);
            }
            Op::Add(a, b) => {
                self.acc_vec(a, dy.to_vec());
                self.acc_vec(b, dy.to_vec());
            }
            Op::Mul(a, b) => {
                let da = dy.iter().zip(&self.nodes[b].value.data).map(|(g, y)| g * y).collect();
                let db = dy.iter().zip(&self.nodes[a].value.data).map(|(g, x)| g * x).collect();
                self.acc_vec(a, da);
                self.acc_vec(b, db);
            }
            Op::Sum(a) => {
                let n = self.nodes[a].value.len();
                self.acc_vec(a, vec![dy[0]; n]);
            }
            Op::Lstm { x, w, b, ref cache } => {
                let (dx, dw, db) = lstm_backward(cache, &self.nodes[w].value.data, dy);
                self.acc_vec(x, dx);
                self.acc_vec(w, dw);
                self.acc_vec(b, db);
            }
            Op::LastStep(x) => {
                let (batch, steps, ch) = dims3(&self.nodes[x].value, "sequence")?;
                let mut dx = vec![0.0; batch * steps * ch];
                for bb in 0..batch {
                    let r = (bb * steps + steps - 1) * ch;
                    dx[r..r + ch].copy_from_slice(&dy[bb * ch..(bb + 1) * ch]);
                }
                self.acc_vec(x, dx);
            }
            Op::Dense { x, w, b } => {
                let inp = self.nodes[x].value.shape[1];
                let batch = self.nodes[x].value.shape[0];
                let out = self.nodes[b].value.len();
                let xd = &self.nodes[x].value.data;
                let wd = &self.nodes[w].value.data;
                let mut dx = vec![0.0; batch * inp];
                let mut dw = vec![0.0; inp * out];
                let mut db = vec![0.0; out];
                for r in 0..batch {
                    let dyr = &dy[r * out..(r + 1) * out];
                    for (o, g) in dyr.iter().enumerate() {
                        db[o] += g;
                    }
                    for i in 0..inp {
                        let xv = xd[r * inp + i];
                        let mut s = 0.0;
                        for o in 0..out {
                            s += dyr[o] * wd[i * out + o];
                            dw[i * out + o] += xv * dyr[o];
                        }
                        dx[r * inp + i] = s;
                    }
                }
                self.acc_vec(x, dx);
                self.acc_vec(w, dw);
                self.acc_vec(b, db);
            }
            Op::Mse { pred, ref target } => {
                let p = &self.nodes[pred].value.data;
                let scale = 2.0 * dy[0] / p.len() as f64;
                let dp = p.iter().zip(target).map(|(a, b)| scale * (a - b)).collect();
                self.acc_vec(pred, dp);
            }
        }
        Ok(())
    }

    fn acc_vec(&mut self, v: Var, g: Vec<f64>) {
        match &mut self.grads[v] {
            Some(slot) => slot.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
            None => self.grads[v] = Some(g),
        }
    }

    /// Gradient of the last backward pass with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v)?.as_deref()
    }

    /// Gradients per parameter of `store`, zero for unused ones.
    pub fn param_grads(&self, store: &ParamStore) -> Vec<Vec<f64>> {
        let mut out: Vec<Vec<f64>> = store.tensors.iter().map(|t| vec![0.0; t.len()]).collect();
        for (v, node) in self.nodes.iter().enumerate() {
            if let (Op::Param(id), Some(g)) = (&node.op, self.grad(v)) {
                out[id.0].iter_mut().zip(g).for_each(|(a, b)| *a += b);
            }
        }
        out
    }
}

/// Backpropagation through time for [`lstm_run`]. `dh` is `[B, T, H]`.
fn lstm_backward(cache: &LstmCache, w: &[f64], dh: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (batch, steps, hidden, input) = (cache.batch, cache.steps, cache.hidden, cache.input);
    let width = hidden + input;
    let mut dx = vec![0.0; batch * steps * input];
    let mut dw = vec![0.0; w.len()];
    let mut db = vec![0.0; 4 * hidden];
    let mut dz = vec![0.0; 4 * hidden];
    let mut dhx = vec![0.0; width];
    for b in 0..batch {
        let mut dh_next = vec![0.0; hidden];
        let mut dc_next = vec![0.0; hidden];
        for t in (0..steps).rev() {
            let bt = b * steps + t;
            let gates = &cache.gates[bt * 4 * hidden..(bt + 1) * 4 * hidden];
            let c = &cache.cell[bt * hidden..(bt + 1) * hidden];
            for j in 0..hidden {
                let (f, i, g, o) = (gates[j], gates[hidden + j], gates[2 * hidden + j], gates[3 * hidden + j]);
                let c_prev = if t > 0 { cache.cell[(bt - 1) * hidden + j] } else { 0.0 };
                let tc = c[j].tanh();
                let dhj = dh[bt * hidden + j] + dh_next[j];
                let dc = dc_next[j] + dhj * o * (1.0 - tc * tc);
                dz[j] = dc * c_prev * f * (1.0 - f);
                dz[hidden + j] = dc * g * i * (1.0 - i);
                dz[2 * hidden + j] = dc * i * (1.0 - g * g);
                dz[3 * hidden + j] = dhj * tc * o * (1.0 - o);
                dc_next[j] = dc * f;
            }
            let hx = &cache.hx[bt * width..(bt + 1) * width];
            dhx.iter_mut().for_each(|v| *v = 0.0);
            for (r, &g) in dz.iter().enumerate() {
                db[r] += g;
                if g == 0.0 {
                    continue;
                }
                let row = &w[r * width..(r + 1) * width];
                let drow = &mut dw[r * width..(r + 1) * width];
                for k in 0..width {
                    drow[k] += g * hx[k];
                    dhx[k] += g * row[k];
                }
            }
            dh_next.copy_from_slice(&dhx[..hidden]);
            dx[bt * input..(bt + 1) * input].copy_from_slice(&dhx[hidden..]);
        }
    }
    (dx, dw, db)
}

/// Causal dilated convolution of one sequence, `[T, Cin] -> [T, Cout]`,
/// with zero left padding and no bias.
pub fn causal_conv1d(x: &Tensor, kernel: &Tensor, dilation: usize) -> Result<Tensor> {
    let (steps, cin) = match x.shape() {
        [t, c] if *t > 0 => (*t, *c),
        s => return Err(Error::Shape(format!("input must be [T, C] with T >= 1, got {s:?}"))),
    };
    let (k, kc, cout) = dims3(kernel, "kernel")?;
    if kc != cin || k == 0 || dilation == 0 {
        return Err(Error::Shape(format!("kernel {:?} does not fit input {:?}", kernel.shape(), x.shape())));
    }
    let mut y = vec![0.0; steps * cout];
    conv_accumulate(x.data(), (1, steps, cin), kernel.data(), k, cout, dilation, &mut y);
    Tensor::new(vec![steps, cout], y)
}

/// Runs an LSTM over one sequence `[T, D]` from zero state and returns the
/// hidden sequence `[T, H]`, the final hidden state and the final cell
/// state. Weights are `[4H, H + D]` with gate blocks forget, input,
/// candidate, output.
pub fn lstm_forward(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<(Tensor, Vec<f64>, Vec<f64>)> {
    let (steps, input) = match x.shape() {
        [t, d] => (*t, *d),
        s => return Err(Error::Shape(format!("input must be [T, D], got {s:?}"))),
    };
    let (rows, width) = match w.shape() {
        [r, c] => (*r, *c),
        s => return Err(Error::Shape(format!("weights must be 2-D, got {s:?}"))),
    };
    if rows % 4 != 0 || width != rows / 4 + input || b.len() != rows {
        return Err(Error::Shape(format!("weights {:?} do not fit input width {input}", w.shape())));
    }
    let hidden = rows / 4;
    let (out, cache) = lstm_run(x.data(), (1, steps, input), w.data(), b.data(), hidden);
    let (h_t, c_t) = if steps == 0 {
        (vec![0.0; hidden], vec![0.0; hidden])
    } else {
        (out[(steps - 1) * hidden..].to_vec(), cache.cell[(steps - 1) * hidden..].to_vec())
    };
    Ok((Tensor::new(vec![steps, hidden], out)?, h_t, c_t))
}

/// Mean squared error and its gradient with respect to `pred`.
pub fn mse_loss(pred: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(Error::LengthMismatch {
            left: pred.len(),
            right: target.len(),
        });
    }
    let n = pred.len() as f64;
    let loss = pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / n;
    Ok((loss, pred.iter().zip(target).map(|(p, t)| 2.0 * (p - t) / n).collect()))
}

/// Adam with bias-corrected moments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(store: &ParamStore, lr: f64) -> AdamState {
        let zeros: Vec<Vec<f64>> = store.tensors.iter().map(|t| vec![0.0; t.len()]).collect();
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &[Vec<f64>]) -> Result<()> {
        if grads.len() != store.len() || grads.iter().zip(&store.tensors).any(|(g, t)| g.len() != t.len()) {
            return Err(Error::Shape("gradients do not match parameters".into()));
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for (p, g) in grads.iter().enumerate() {
            let (m, v) = (&mut self.m[p], &mut self.v[p]);
            for (j, w) in store.tensors[p].data.iter_mut().enumerate() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let mhat = m[j] / c1;
                let vhat = v[j] / c2;
                *w -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Training flag and randomness for one forward pass.
pub struct ForwardCtx {
    pub training: bool,
    /// Dropout masks are drawn from here while training.
    pub rng: ChaCha8Rng,
}

impl ForwardCtx {
    pub fn inference() -> ForwardCtx {
        ForwardCtx {
            training: false,
            rng: ChaCha8Rng::seed_from_u64(0),
        }
    }

    pub fn training(seed: u64) -> ForwardCtx {
        ForwardCtx {
            training: true,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

/// Two causal convolutions, each followed by batch norm, ReLU and dropout,
/// plus a residual path (1×1 convolution when the widths differ).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TcnBlockParams {
    pub conv1: (ParamId, ParamId),
    pub bn1: (ParamId, ParamId),
    pub conv2: (ParamId, ParamId),
    pub bn2: (ParamId, ParamId),
    pub projection: Option<(ParamId, ParamId)>,
    pub bn1_state: BatchNormState,
    pub bn2_state: BatchNormState,
    pub kernel: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub dilation: usize,
    pub dropout: f64,
    /// Apply ReLU after the residual addition instead of adding the
    /// residual to the activated branch.
    pub canonical_residual: bool,
}

impl TcnBlockParams {
    #[allow(clippy::too_many_arguments)]
    pub fn init(
        store: &mut ParamStore,
        prefix: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        dilation: usize,
        dropout: f64,
        canonical_residual: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<TcnBlockParams> {
        if kernel == 0 || dilation == 0 || in_channels == 0 || out_channels == 0 {
            return Err(Error::Config("kernel, dilation and channels must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&dropout) {
            return Err(Error::Config(format!("dropout {dropout} outside [0, 1)")));
        }
        let mut conv = |store: &mut ParamStore, name: &str, k: usize, cin: usize| {
            let w = store.add(format!("{prefix}.{name}.w"), he_uniform(&[k, cin, out_channels], k * cin, rng));
            let b = store.add(format!("{prefix}.{name}.b"), Tensor::zeros(&[out_channels]));
            (w, b)
        };
        let conv1 = conv(store, "conv1", kernel, in_channels);
        let conv2 = conv(store, "conv2", kernel, out_channels);
        let projection = (in_channels != out_channels).then(|| conv(store, "proj", 1, in_channels));
        let mut bn = |name: &str| {
            (
                store.add(format!("{prefix}.{name}.gamma"), Tensor::new(vec![out_channels], vec![1.0; out_channels]).expect("shape")),
                store.add(format!("{prefix}.{name}.beta"), Tensor::zeros(&[out_channels])),
            )
        };
        let bn1 = bn("bn1");
        let bn2 = bn("bn2");
        Ok(TcnBlockParams {
            conv1,
            bn1,
            conv2,
            bn2,
            projection,
            bn1_state: BatchNormState::new(out_channels),
            bn2_state: BatchNormState::new(out_channels),
            kernel,
            in_channels,
            out_channels,
            dilation,
            dropout,
            canonical_residual,
        })
    }

    pub fn param_count(&self) -> usize {
        let conv = |k: usize, cin: usize| k * cin * self.out_channels + self.out_channels;
        conv(self.kernel, self.in_channels)
            + conv(self.kernel, self.out_channels)
            + 4 * self.out_channels
            + if self.projection.is_some() { conv(1, self.in_channels) } else { 0 }
    }
}

/// `x` is `[B, T, in_channels]`.
pub fn tcn_block_forward(g: &mut Graph, store: &ParamStore, block: &mut TcnBlockParams, x: Var, ctx: &mut ForwardCtx) -> Result<Var> {
    let mut h = x;
    for stage in 0..2 {
        let (conv, bn) = if stage == 0 { (block.conv1, block.bn1) } else { (block.conv2, block.bn2) };
        let state = if stage == 0 { &mut block.bn1_state } else { &mut block.bn2_state };
        let w = g.param(store, conv.0);
        let b = g.param(store, conv.1);
        h = g.conv1d(h, w, b, block.dilation)?;
        let gamma = g.param(store, bn.0);
        let beta = g.param(store, bn.1);
        h = g.batch_norm(h, gamma, beta, state, ctx.training)?;
        h = g.relu(h);
        h = g.dropout(h, block.dropout, ctx.training.then_some(&mut ctx.rng));
    }
    let residual = match block.projection {
        Some((pw, pb)) => {
            let w = g.param(store, pw);
            let b = g.param(store, pb);
            g.conv1d(x, w, b, 1)?
        }
        None => x,
    };
    let out = g.add(h, residual)?;
    Ok(if block.canonical_residual { g.relu(out) } else { out })
}

/// LSTM weights `[4H, H + D]` (gate blocks forget, input, candidate,
/// output) and bias `[4H]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LstmParams {
    pub w: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl LstmParams {
    /// Uniform `±1/sqrt(H + D)` weights; forget-gate bias 1.
    pub fn init(store: &mut ParamStore, prefix: &str, input: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Result<LstmParams> {
        if input == 0 || hidden == 0 {
            return Err(Error::Config("lstm sizes must be at least 1".into()));
        }
        let width = hidden + input;
        let w = store.add(format!("{prefix}.w"), uniform(&[4 * hidden, width], 1.0 / (width as f64).sqrt(), rng));
        let mut bias = vec![0.0; 4 * hidden];
        bias[..hidden].iter_mut().for_each(|v| *v = 1.0);
        let b = store.add(format!("{prefix}.b"), Tensor::new(vec![4 * hidden], bias)?);
        Ok(LstmParams { w, b, input, hidden })
    }

    pub fn param_count(&self) -> usize {
        4 * self.hidden * (self.hidden + self.input) + 4 * self.hidden
    }
}

/// Largest relative difference between `analytic` and central finite
/// differences of `loss` over every parameter scalar, using
/// `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn gradient_check(store: &ParamStore, analytic: &[Vec<f64>], step: f64, mut loss: impl FnMut(&ParamStore) -> f64) -> f64 {
    let mut probe = store.clone();
    let mut worst = 0.0f64;
    for p in 0..store.len() {
        for j in 0..store.tensors[p].len() {
            let orig = store.tensors[p].data[j];
            probe.tensors[p].data[j] = orig + step;
            let up = loss(&probe);
            probe.tensors[p].data[j] = orig - step;
            let down = loss(&probe);
            probe.tensors[p].data[j] = orig;
            let numeric = (up - down) / (2.0 * step);
            let a = analytic[p][j];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(rel);
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(data: Vec<f64>, c: usize) -> Tensor {
        let t = data.len() / c;
        Tensor::new(vec![t, c], data).unwrap()
    }

    #[test]
    fn tensor_shape_checked() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert_eq!(Tensor::zeros(&[2, 3]).len(), 6);
    }

    #[test]
    fn conv_identity_and_delay() {
        let x = seq(vec![1.0, 2.0, 3.0, 4.0, 5.0], 1);
        let id = Tensor::new(vec![1, 1, 1], vec![1.0]).unwrap();
        assert_eq!(causal_conv1d(&x, &id, 1).unwrap(), x);
        let delay = Tensor::new(vec![2, 1, 1], vec![0.0, 1.0]).unwrap();
        assert_eq!(causal_conv1d(&x, &delay, 2).unwrap().data(), &[0.0, 0.0, 1.0, 2.0, 3.0]);
        let wide = Tensor::new(vec![2, 2, 1], vec![0.0; 4]).unwrap();
        assert!(causal_conv1d(&x, &wide, 1).is_err());
    }

    #[test]
    fn stacked_receptive_field_is_29() {
        let t = 64;
        let mut x = vec![0.0; t];
        x[10] = 1.0;
        let mut y = seq(x, 1);
        let k = Tensor::new(vec![3, 1, 1], vec![1.0; 3]).unwrap();
        for d in [1, 2, 4] {
            for _ in 0..2 {
                y = causal_conv1d(&y, &k, d).unwrap();
            }
        }
        let support: Vec<usize> = (0..t).filter(|&i| y.data()[i] != 0.0).collect();
        assert_eq!(support.len(), 29);
        assert_eq!((support[0], *support.last().unwrap()), (10, 38));
    }

    fn block(cin: usize, cout: usize, p: f64, seed: u64) -> (ParamStore, TcnBlockParams) {
        let mut store = ParamStore::default();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = TcnBlockParams::init(&mut store, "b", cin, cout, 3, 2, p, false, &mut rng).unwrap();
        (store, b)
    }

    fn run_block(store: &ParamStore, b: &mut TcnBlockParams, x: Tensor, ctx: &mut ForwardCtx) -> Tensor {
        let mut g = Graph::new();
        let xv = g.input(x);
        let y = tcn_block_forward(&mut g, store, b, xv, ctx).unwrap();
        g.value(y).clone()
    }

    #[test]
    fn tcn_block_zero_in_zero_out() {
        let (store, mut b) = block(3, 4, 0.2, 1);
        assert_eq!(b.param_count(), store.count());
        let zero = Tensor::zeros(&[2, 10, 3]);
        for mut ctx in [ForwardCtx::training(3), ForwardCtx::inference()] {
            let y = run_block(&store, &mut b, zero.clone(), &mut ctx);
            assert!(y.data().iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn inference_is_deterministic_and_single_samples_use_running_stats() {
        let (store, mut b) = block(2, 2, 0.0, 5);
        let x = Tensor::new(vec![1, 6, 2], (0..12).map(|v| (v as f64 * 0.37).sin()).collect()).unwrap();
        let a = run_block(&store, &mut b, x.clone(), &mut ForwardCtx::inference());
        let c = run_block(&store, &mut b, x.clone(), &mut ForwardCtx::inference());
        assert_eq!(a, c);
        let before = b.bn1_state.clone();
        let t = run_block(&store, &mut b, x, &mut ForwardCtx::training(9));
        assert_eq!(t, a);
        assert_eq!(b.bn1_state, before);
    }

    #[test]
    fn dropout_masks_follow_the_seed() {
        let (store, mut b) = block(2, 3, 0.5, 2);
        let x = Tensor::new(vec![4, 8, 2], (0..64).map(|v| (v as f64).cos()).collect()).unwrap();
        let a = run_block(&store, &mut b.clone(), x.clone(), &mut ForwardCtx::training(11));
        let c = run_block(&store, &mut b.clone(), x.clone(), &mut ForwardCtx::training(11));
        let d = run_block(&store, &mut b, x, &mut ForwardCtx::training(12));
        assert_eq!(a, c);
        assert_ne!(a, d);
    }

    #[test]
    fn lstm_zero_weights() {
        let x = seq(vec![0.3, -2.0, 5.0, 1.0], 2);
        let (h, ht, ct) = lstm_forward(&x, &Tensor::zeros(&[12, 5]), &Tensor::zeros(&[12])).unwrap();
        assert!(h.data().iter().chain(&ht).chain(&ct).all(|v| *v == 0.0));
    }

    #[test]
    fn lstm_hand_computed_step() {
        let x = seq(vec![1.0], 1);
        let (_, h, c) = lstm_forward(&x, &Tensor::new(vec![4, 2], vec![1.0; 8]).unwrap(), &Tensor::zeros(&[4])).unwrap();
        let s = 1.0 / (1.0 + (-1.0f64).exp());
        let c_ref = s * 1.0f64.tanh();
        assert!((c[0] - c_ref).abs() < 1e-15);
        assert!((h[0] - s * c_ref.tanh()).abs() < 1e-15);
        // exact h is 0.36961; the commonly quoted 0.3687 is a rounding slip
        assert!((c[0] - 0.5568).abs() < 1e-4 && (h[0] - 0.3687).abs() < 1e-3);
    }

    #[test]
    fn lstm_state_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = uniform(&[30, 3], 5.0, &mut rng);
        let w = uniform(&[8, 5], 3.0, &mut rng);
        let b = uniform(&[8], 3.0, &mut rng);
        let (h, _, c) = lstm_forward(&x, &w, &b).unwrap();
        assert!(h.data().iter().all(|v| v.abs() < 1.0));
        assert!(c.iter().all(|v| v.abs() <= 30.0));
    }

    #[test]
    fn backward_needs_a_forward() {
        assert!(matches!(Graph::new().backward(0), Err(Error::NoForward)));
    }

    #[test]
    fn square_gradient() {
        let mut store = ParamStore::default();
        let w = store.add("w", Tensor::scalar(3.0));
        let mut g = Graph::new();
        let v = g.param(&store, w);
        let sq = g.mul(v, v).unwrap();
        let s = g.sum(sq);
        g.backward(s).unwrap();
        assert_eq!(g.param_grads(&store)[0], vec![6.0]);
    }

    #[test]
    fn mse_examples() {
        let (l, g) = mse_loss(&[1.0, 2.0], &[1.0, 2.0]).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.iter().all(|v| *v == 0.0));
        assert!(mse_loss(&[1.0], &[]).is_err());
    }

    fn adam_on(f: impl Fn(f64) -> f64, w0: f64, lr: f64, steps: usize) -> f64 {
        let mut store = ParamStore::default();
        let w = store.add("w", Tensor::scalar(w0));
        let mut adam = AdamState::new(&store, lr);
        for _ in 0..steps {
            let x = store.get(w).data()[0];
            adam.step(&mut store, &[vec![f(x)]]).unwrap();
        }
        store.get(w).data()[0]
    }

    #[test]
    fn adam_examples() {
        let w = adam_on(|w| 2.0 * w, 1.0, 0.001, 1);
        assert!((w - 0.999).abs() < 1e-9);
        let w = adam_on(|w| 2.0 * (w - 2.0), 0.0, 0.1, 200);
        assert!((w - 2.0).abs() < 1e-2, "{w}");
    }

    /// conv -> bn -> relu -> dropout -> residual -> lstm -> dense -> mse
    fn tiny_loss(store: &ParamStore, block: &TcnBlockParams, lstm: &LstmParams, dense: (ParamId, ParamId), x: &Tensor, y: &[f64]) -> (f64, Vec<Vec<f64>>) {
        let mut g = Graph::new();
        let mut block = block.clone();
        let mut ctx = ForwardCtx::training(77);
        let xv = g.input(x.clone());
        let h = tcn_block_forward(&mut g, store, &mut block, xv, &mut ctx).unwrap();
        let (w, b) = (g.param(store, lstm.w), g.param(store, lstm.b));
        let hs = g.lstm(h, w, b).unwrap();
        let last = g.last_step(hs).unwrap();
        let (dw, db) = (g.param(store, dense.0), g.param(store, dense.1));
        let out = g.dense(last, dw, db).unwrap();
        let loss = g.mse(out, y).unwrap();
        g.backward(loss).unwrap();
        (g.value(loss).data()[0], g.param_grads(store))
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut store = ParamStore::default();
        let block = TcnBlockParams::init(&mut store, "tcn", 2, 3, 2, 1, 0.2, false, &mut rng).unwrap();
        let lstm = LstmParams::init(&mut store, "lstm", 3, 4, &mut rng).unwrap();
        let dw = store.add("dense.w", he_uniform(&[4, 1], 4, &mut rng));
        let db = store.add("dense.b", Tensor::zeros(&[1]));
        let x = uniform(&[3, 8, 2], 1.0, &mut rng);
        let y = [0.3, -0.2, 0.5];
        let (_, grads) = tiny_loss(&store, &block, &lstm, (dw, db), &x, &y);
        let err = gradient_check(&store, &grads, 1e-5, |s| tiny_loss(s, &block, &lstm, (dw, db), &x, &y).0);
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn perturbing_the_future_leaves_the_past_alone() {
        let (store, mut b) = block(2, 3, 0.2, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = uniform(&[2, 20, 2], 1.0, &mut rng);
        let mut x2 = x.clone();
        x2.data_mut()[(12 * 2)..(13 * 2)].iter_mut().for_each(|v| *v += 3.0);
        let a = run_block(&store, &mut b, x, &mut ForwardCtx::inference());
        let c = run_block(&store, &mut b, x2, &mut ForwardCtx::inference());
        for bb in 0..2 {
            for t in 0..12 {
                for ch in 0..3 {
                    let i = (bb * 20 + t) * 3 + ch;
                    assert_eq!(a.data()[i], c.data()[i]);
                }
            }
        }
    }
}
