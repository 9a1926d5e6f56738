use rand::Rng;

use super::graph::{Graph, Var};
use super::params::{xavier_uniform, ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::Result;

/// Fully connected layer `x W + b`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        in_dim: usize,
        out_dim: usize,
    ) -> Result<Self> {
        let weight = store.add(format!("{name}.weight"), xavier_uniform(rng, in_dim, out_dim))?;
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[out_dim]))?;
        Ok(Self {
            weight,
            bias,
            in_dim,
            out_dim,
        })
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        g.affine(x, w, b)
    }
}

/// Stack of linear layers with ReLU between them. The last layer is
/// linear unless `relu_output` is set.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub relu_output: bool,
}

impl Mlp {
    /// `dims` lists every width including input and output, e.g. `[m, 128, 32, q]`.
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        dims: &[usize],
        relu_output: bool,
    ) -> Result<Self> {
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, rng, &format!("{name}.{i}"), w[0], w[1]))
            .collect::<Result<_>>()?;
        Ok(Self {
            layers,
            relu_output,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.in_dim)
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_dim)
    }

    pub fn forward(&self, g: &mut Graph, mut x: Var) -> Result<Var> {
        let last = self.layers.len().saturating_sub(1);
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer.forward(g, x)?;
            if i < last || self.relu_output {
                x = g.relu(x);
            }
        }
        Ok(x)
    }

    /// Plain forward for a single input row, without recording a graph.
    pub fn forward_row(&self, store: &ParamStore, input: &[f64]) -> Vec<f64> {
        let last = self.layers.len().saturating_sub(1);
        let mut x = input.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            let w = store.get(layer.weight).data();
            let b = store.get(layer.bias).data();
            let mut y = b.to_vec();
            for (k, xv) in x.iter().enumerate() {
                let row = &w[k * layer.out_dim..(k + 1) * layer.out_dim];
                for (o, wv) in y.iter_mut().zip(row) {
                    *o += xv * wv;
                }
            }
            if i < last || self.relu_output {
                y.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            x = y;
        }
        x
    }
}
