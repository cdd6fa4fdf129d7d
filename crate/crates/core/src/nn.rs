//! Affine layers and stacked GRUs on top of the autodiff tape.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{gru_forward, Graph, ParamId, ParamStore, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// How parameters enter a graph.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Bind {
    /// Tracked; gradients are produced.
    Train,
    /// Constants; gradients still flow through to the inputs.
    Frozen,
}

fn bind<T: Scalar>(g: &mut Graph<T>, store: &ParamStore<T>, id: ParamId, mode: Bind) -> Var {
    match mode {
        Bind::Train => g.param(store, id),
        Bind::Frozen => g.frozen(store, id),
    }
}

/// `U(-k, k)` initialisation.
pub fn uniform_tensor<T: Scalar, R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize, k: f64) -> Tensor<T> {
    let data = (0..rows * cols)
        .map(|_| T::lit(rng.random_range(-k..=k)))
        .collect();
    Tensor::from_vec(rows, cols, data).expect("sized by construction")
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        input: usize,
        output: usize,
        rng: &mut R,
    ) -> Self {
        let k = 1.0 / (input.max(1) as f64).sqrt();
        let w = store.add(format!("{name}.weight"), uniform_tensor(rng, input, output, k));
        let b = store.add(format!("{name}.bias"), uniform_tensor(rng, 1, output, k));
        Self { w, b, input, output }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var, mode: Bind) -> Result<Var> {
        let w = bind(g, store, self.w, mode);
        let b = bind(g, store, self.b, mode);
        g.affine(x, w, b)
    }

    /// Forward on already-bound weights.
    fn apply<T: Scalar>(g: &mut Graph<T>, x: Var, wb: (Var, Var)) -> Result<Var> {
        g.affine(x, wb.0, wb.1)
    }

    fn bind<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, mode: Bind) -> (Var, Var) {
        (bind(g, store, self.w, mode), bind(g, store, self.b, mode))
    }
}

/// Weights of one GRU layer; gate blocks are ordered reset, update, candidate.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GruLayer {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub b_ih: ParamId,
    pub b_hh: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl GruLayer {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        input: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        let k = 1.0 / (hidden as f64).sqrt();
        Self {
            w_ih: store.add(format!("{name}.w_ih"), uniform_tensor(rng, input, 3 * hidden, k)),
            w_hh: store.add(format!("{name}.w_hh"), uniform_tensor(rng, hidden, 3 * hidden, k)),
            b_ih: store.add(format!("{name}.b_ih"), uniform_tensor(rng, 1, 3 * hidden, k)),
            b_hh: store.add(format!("{name}.b_hh"), uniform_tensor(rng, 1, 3 * hidden, k)),
            input,
            hidden,
        }
    }

    /// Single unbatched step outside any graph.
    pub fn step<T: Scalar>(&self, store: &ParamStore<T>, x: &[T], h: &[T]) -> Result<Vec<T>> {
        if x.len() != self.input || h.len() != self.hidden {
            return Err(Error::Dimension {
                context: "gru_layer_step",
                expected: format!("input {}, state {}", self.input, self.hidden),
                actual: format!("input {}, state {}", x.len(), h.len()),
            });
        }
        let (out, _) = gru_forward(
            &Tensor::row_vector(x.to_vec()),
            &Tensor::row_vector(h.to_vec()),
            store.get(self.w_ih),
            store.get(self.w_hh),
            store.get(self.b_ih),
            store.get(self.b_hh),
        )?;
        Ok(out.into_vec())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GruStack {
    pub layers: Vec<GruLayer>,
}

impl GruStack {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        input: usize,
        hidden: usize,
        num_layers: usize,
        rng: &mut R,
    ) -> Self {
        let layers = (0..num_layers)
            .map(|l| {
                let width = if l == 0 { input } else { hidden };
                GruLayer::new(store, &format!("{name}.{l}"), width, hidden, rng)
            })
            .collect();
        Self { layers }
    }

    pub fn hidden(&self) -> usize {
        self.layers.last().map_or(0, |l| l.hidden)
    }

    pub fn input(&self) -> usize {
        self.layers.first().map_or(0, |l| l.input)
    }

    /// Unrolls the stack over `inputs` (one `B × input` node per step) from
    /// zero initial states and returns the top-layer state at every step.
    pub fn run<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        inputs: &[Var],
        mode: Bind,
    ) -> Result<Vec<Var>> {
        let Some(&first) = inputs.first() else {
            return Err(Error::validation("GRU stack needs at least one time step"));
        };
        let batch = g.value(first).rows();
        let bound: Vec<[Var; 4]> = self
            .layers
            .iter()
            .map(|l| {
                [
                    bind(g, store, l.w_ih, mode),
                    bind(g, store, l.w_hh, mode),
                    bind(g, store, l.b_ih, mode),
                    bind(g, store, l.b_hh, mode),
                ]
            })
            .collect();
        let mut states: Vec<Var> = self
            .layers
            .iter()
            .map(|l| g.constant(Tensor::zeros(batch, l.hidden)))
            .collect();
        let mut tops = Vec::with_capacity(inputs.len());
        for &x in inputs {
            let mut below = x;
            for (l, w) in bound.iter().enumerate() {
                states[l] = g.gru(below, states[l], w[0], w[1], w[2], w[3])?;
                below = states[l];
            }
            tops.push(below);
        }
        Ok(tops)
    }
}

/// Per-step affine head applied to a list of nodes with one weight binding.
pub fn map_affine<T: Scalar>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    head: &Linear,
    xs: &[Var],
    mode: Bind,
) -> Result<Vec<Var>> {
    let wb = head.bind(g, store, mode);
    xs.iter().map(|&x| Linear::apply(g, x, wb)).collect()
}
