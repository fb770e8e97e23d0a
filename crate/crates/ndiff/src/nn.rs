//! Layers built on the tape. Each layer owns [`ParamId`]s into a shared
//! [`ParamStore`]; forward passes bind those parameters onto a [`Graph`].

use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::param::{ParamId, ParamStore};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Uniform in ±√(1/fan_in).
pub fn uniform_init(shape: &[usize], fan_in: usize, rng: &mut Rng) -> Tensor {
    let bound = (1.0 / fan_in as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::new(shape, data).expect("init shape")
}

pub fn normal_init(shape: &[usize], std: f64, rng: &mut Rng) -> Tensor {
    let dist = Normal::new(0.0, std).expect("std must be finite and non-negative");
    let n = shape.iter().product();
    let data = (0..n).map(|_| dist.sample(rng)).collect();
    Tensor::new(shape, data).expect("init shape")
}

/// `y = x W (+ b)` with `W` stored as [in, out].
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, inputs: usize, outputs: usize, bias: bool, rng: &mut Rng) -> Self {
        let weight = store.add(format!("{name}.weight"), uniform_init(&[inputs, outputs], inputs, rng));
        let bias = bias.then(|| store.add(format!("{name}.bias"), uniform_init(&[outputs], inputs, rng)));
        Linear { weight, bias }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight);
        let y = g.matmul(x, w)?;
        match self.bias {
            Some(b) => {
                let b = g.param(store, b);
                g.add_row(y, b)
            }
            None => Ok(y),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Conv1d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: usize,
    pub padding: usize,
}

impl Conv1d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut Rng,
    ) -> Self {
        let fan_in = in_channels * kernel;
        let weight = store.add(
            format!("{name}.weight"),
            uniform_init(&[out_channels, in_channels, kernel], fan_in, rng),
        );
        let bias = store.add(format!("{name}.bias"), uniform_init(&[out_channels], fan_in, rng));
        Conv1d {
            weight,
            bias,
            stride,
            padding,
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        g.conv1d(x, w, Some(b), self.stride, self.padding)
    }
}

#[derive(Debug, Clone)]
pub struct ConvTranspose1d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: usize,
    pub padding: usize,
}

impl ConvTranspose1d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut Rng,
    ) -> Self {
        let fan_in = in_channels * kernel;
        let weight = store.add(
            format!("{name}.weight"),
            uniform_init(&[in_channels, out_channels, kernel], fan_in, rng),
        );
        let bias = store.add(format!("{name}.bias"), uniform_init(&[out_channels], fan_in, rng));
        ConvTranspose1d {
            weight,
            bias,
            stride,
            padding,
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        g.conv_transpose1d(x, w, Some(b), self.stride, self.padding)
    }
}

#[derive(Debug, Clone)]
pub struct Embedding {
    pub table: ParamId,
}

impl Embedding {
    pub fn new(store: &mut ParamStore, name: &str, vocab: usize, dim: usize, rng: &mut Rng) -> Self {
        let table = store.add(format!("{name}.table"), normal_init(&[vocab, dim], 0.02, rng));
        Embedding { table }
    }
}

/// One LSTM layer; gate blocks are ordered input, forget, cell, output.
#[derive(Debug, Clone)]
pub struct LstmLayer {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub bias: ParamId,
    pub hidden: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct BoundLstmLayer {
    pub w_ih: Var,
    pub w_hh: Var,
    pub bias: Var,
    pub hidden: usize,
}

impl LstmLayer {
    pub fn new(store: &mut ParamStore, name: &str, inputs: usize, hidden: usize, rng: &mut Rng) -> Self {
        let w_ih = store.add(format!("{name}.w_ih"), uniform_init(&[inputs, 4 * hidden], hidden, rng));
        let w_hh = store.add(format!("{name}.w_hh"), uniform_init(&[hidden, 4 * hidden], hidden, rng));
        let bias = store.add(format!("{name}.bias"), uniform_init(&[4 * hidden], hidden, rng));
        LstmLayer {
            w_ih,
            w_hh,
            bias,
            hidden,
        }
    }

    /// Binds the weights once so a whole sequence shares one copy on the tape.
    pub fn bind(&self, g: &mut Graph, store: &ParamStore) -> BoundLstmLayer {
        BoundLstmLayer {
            w_ih: g.param(store, self.w_ih),
            w_hh: g.param(store, self.w_hh),
            bias: g.param(store, self.bias),
            hidden: self.hidden,
        }
    }
}

impl BoundLstmLayer {
    /// One time step: returns `(h', c')` for input `x` [n, in] and state [n, hidden].
    pub fn step(&self, g: &mut Graph, x: Var, h: Var, c: Var) -> Result<(Var, Var)> {
        lstm_cell(g, x, h, c, self.w_ih, self.w_hh, self.bias)
    }
}

pub fn lstm_cell(g: &mut Graph, x: Var, h: Var, c: Var, w_ih: Var, w_hh: Var, bias: Var) -> Result<(Var, Var)> {
    let hidden = g.shape(h)[1];
    let xi = g.matmul(x, w_ih)?;
    let hh = g.matmul(h, w_hh)?;
    let pre = g.add(xi, hh)?;
    let gates = g.add_row(pre, bias)?;
    let i = g.slice_cols(gates, 0, hidden)?;
    let f = g.slice_cols(gates, hidden, 2 * hidden)?;
    let u = g.slice_cols(gates, 2 * hidden, 3 * hidden)?;
    let o = g.slice_cols(gates, 3 * hidden, 4 * hidden)?;
    let i = g.sigmoid(i)?;
    let f = g.sigmoid(f)?;
    let u = g.tanh(u)?;
    let o = g.sigmoid(o)?;
    let keep = g.mul(f, c)?;
    let write = g.mul(i, u)?;
    let c_next = g.add(keep, write)?;
    let squashed = g.tanh(c_next)?;
    let h_next = g.mul(o, squashed)?;
    Ok((h_next, c_next))
}
