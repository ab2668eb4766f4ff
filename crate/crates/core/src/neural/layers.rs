use rand::Rng;

use super::graph::{Graph, NodeId};
use super::params::{ParamId, ParamStore};
use crate::error::{Error, Result};

/// Fully connected layer `x · W + b`; parameters are `<name>.w` and `<name>.b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dense {
    pub w: ParamId,
    pub b: ParamId,
}

impl Dense {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut R) -> Result<Self> {
        Ok(Dense {
            w: store.add_weight(&format!("{name}.w"), fan_in, fan_out, rng)?,
            b: store.add_zeros(&format!("{name}.b"), 1, fan_out)?,
        })
    }

    /// Looks up an existing layer by name.
    pub fn find(store: &ParamStore, name: &str) -> Result<Self> {
        let get = |suffix: &str| {
            store
                .id(&format!("{name}.{suffix}"))
                .ok_or_else(|| Error::Shape(format!("parameter {name}.{suffix} missing")))
        };
        Ok(Dense { w: get("w")?, b: get("b")? })
    }

    pub fn forward(&self, g: &mut Graph, x: NodeId) -> Result<NodeId> {
        g.linear(x, self.w, self.b)
    }

    pub fn fan_out(&self, store: &ParamStore) -> usize {
        store.value(self.w).cols()
    }
}

/// Dense layers with ReLU after every layer but the last.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

impl Mlp {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, prefix: &str, sizes: &[usize], rng: &mut R) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(Error::Shape("an MLP needs input and output sizes".into()));
        }
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| Dense::new(store, &format!("{prefix}.{i}"), w[0], w[1], rng))
            .collect::<Result<_>>()?;
        Ok(Mlp { layers })
    }

    pub fn find(store: &ParamStore, prefix: &str, depth: usize) -> Result<Self> {
        let layers = (0..depth)
            .map(|i| Dense::find(store, &format!("{prefix}.{i}")))
            .collect::<Result<_>>()?;
        Ok(Mlp { layers })
    }

    pub fn forward(&self, g: &mut Graph, x: NodeId) -> Result<NodeId> {
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(g, h)?;
            if i + 1 < self.layers.len() {
                h = g.relu(h);
            }
        }
        Ok(h)
    }

    /// Forward pass with ReLU after every layer, including the last.
    pub fn forward_hidden(&self, g: &mut Graph, x: NodeId) -> Result<NodeId> {
        let mut h = x;
        for layer in &self.layers {
            h = layer.forward(g, h)?;
            h = g.relu(h);
        }
        Ok(h)
    }
}

/// Multi-head self-attention: Q/K/V projections, scaled dot-product
/// attention per head, heads concatenated and projected back to the width.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MultiHeadAttention {
    pub q: Dense,
    pub k: Dense,
    pub v: Dense,
    pub o: Dense,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, prefix: &str, width: usize, heads: usize, rng: &mut R) -> Result<Self> {
        if heads == 0 || width % heads != 0 {
            return Err(Error::Shape(format!("width {width} not divisible by {heads} heads")));
        }
        Ok(MultiHeadAttention {
            q: Dense::new(store, &format!("{prefix}.q"), width, width, rng)?,
            k: Dense::new(store, &format!("{prefix}.k"), width, width, rng)?,
            v: Dense::new(store, &format!("{prefix}.v"), width, width, rng)?,
            o: Dense::new(store, &format!("{prefix}.o"), width, width, rng)?,
            heads,
        })
    }

    pub fn find(store: &ParamStore, prefix: &str, heads: usize) -> Result<Self> {
        Ok(MultiHeadAttention {
            q: Dense::find(store, &format!("{prefix}.q"))?,
            k: Dense::find(store, &format!("{prefix}.k"))?,
            v: Dense::find(store, &format!("{prefix}.v"))?,
            o: Dense::find(store, &format!("{prefix}.o"))?,
            heads,
        })
    }

    /// `x` holds consecutive groups of `seq` token rows.
    pub fn forward(&self, g: &mut Graph, x: NodeId, seq: usize) -> Result<NodeId> {
        let q = self.q.forward(g, x)?;
        let k = self.k.forward(g, x)?;
        let v = self.v.forward(g, x)?;
        let a = g.attention(q, k, v, self.heads, seq)?;
        self.o.forward(g, a)
    }
}
