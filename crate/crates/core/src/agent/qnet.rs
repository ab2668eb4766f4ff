//! The Q-network: per-step tokens, embedding with a per-slot bias,
//! multi-head self-attention with a residual path, fully connected trunk and
//! one linear head per device.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::space::ActionSpace;
use crate::encoding::TaskLayout;
use crate::error::{Error, Result};
use crate::model::{QosObservation, SchedulingAction, Window};
use crate::neural::{Dense, Grads, Graph, Mlp, MultiHeadAttention, NodeId, ParamId, ParamStore, Tensor2};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QNetConfig {
    /// Number N of past periods in the extended state.
    pub history: usize,
    pub width: usize,
    pub heads: usize,
    pub hidden: usize,
    pub fc_layers: usize,
    /// Total number of regions over all traffic patterns.
    pub regions: usize,
    /// RTT multiples above this are clipped in the tokens.
    pub beta: f64,
    /// Start every head at zero so untried local actions read Q = 0 instead
    /// of a random value.
    pub zero_heads: bool,
}

impl Default for QNetConfig {
    fn default() -> Self {
        QNetConfig {
            history: 4,
            width: 64,
            heads: 2,
            hidden: 256,
            fc_layers: 3,
            regions: 1,
            beta: 3.0,
            zero_heads: true,
        }
    }
}

/// One past period: region index (over all patterns), observation, action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Triple {
    pub region: usize,
    pub observation: QosObservation,
    pub action: SchedulingAction,
}

/// The last N periods, oldest first.
pub type ExtendedState = Window<Triple>;

/// A transition with both states already encoded as token rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Vec<usize>,
    pub cost: f64,
    pub next: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct QNetwork {
    pub cfg: QNetConfig,
    pub space: ActionSpace,
    pub layout: TaskLayout,
    /// Online parameters φ.
    pub params: ParamStore,
    /// Target parameters φ̄.
    pub target: ParamStore,
    embed: Dense,
    slot: ParamId,
    attn: MultiHeadAttention,
    fc: Mlp,
    heads: Dense,
}

impl QNetwork {
    pub fn new(cfg: QNetConfig, space: ActionSpace, layout: TaskLayout, seed: u64) -> Result<Self> {
        if cfg.history == 0 || cfg.regions == 0 || cfg.fc_layers == 0 {
            return Err(Error::Config("history, regions and layer count must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let token = cfg.regions + layout.obs_dim() + layout.action_dim();
        Dense::new(&mut params, "q.embed", token, cfg.width, &mut rng)?;
        params.add_zeros("q.slot", cfg.history, cfg.width)?;
        MultiHeadAttention::new(&mut params, "q.attn", cfg.width, cfg.heads, &mut rng)?;
        let mut sizes = vec![cfg.history * cfg.width];
        sizes.extend(std::iter::repeat(cfg.hidden).take(cfg.fc_layers));
        Mlp::new(&mut params, "q.fc", &sizes, &mut rng)?;
        Dense::new(&mut params, "q.heads", cfg.hidden, space.total(), &mut rng)?;
        let mut net = Self::from_params(cfg, space, layout, params.clone(), params)?;
        if cfg.zero_heads {
            net.zero_heads();
        }
        Ok(net)
    }

    pub fn from_params(cfg: QNetConfig, space: ActionSpace, layout: TaskLayout, params: ParamStore, target: ParamStore) -> Result<Self> {
        let heads = Dense::find(&params, "q.heads")?;
        if heads.fan_out(&params) != space.total() {
            return Err(Error::Shape(format!(
                "head width {} does not match {} local actions",
                heads.fan_out(&params),
                space.total()
            )));
        }
        if target.num_values() != params.num_values() {
            return Err(Error::Shape("target and online parameters differ in size".into()));
        }
        Ok(QNetwork {
            embed: Dense::find(&params, "q.embed")?,
            slot: params.id("q.slot").ok_or_else(|| Error::Shape("parameter q.slot missing".into()))?,
            attn: MultiHeadAttention::find(&params, "q.attn", cfg.heads)?,
            fc: Mlp::find(&params, "q.fc", cfg.fc_layers)?,
            heads,
            cfg,
            space,
            layout,
            params,
            target,
        })
    }

    pub fn token_dim(&self) -> usize {
        self.cfg.regions + self.layout.obs_dim() + self.layout.action_dim()
    }

    /// Token rows of a state, `history × token_dim` values row-major.
    pub fn encode_state(&self, es: &ExtendedState) -> Result<Vec<f64>> {
        if es.len() != self.cfg.history {
            return Err(Error::Shape(format!("state has {} steps, expected {}", es.len(), self.cfg.history)));
        }
        let mut out = Vec::with_capacity(es.len() * self.token_dim());
        for step in es.iter() {
            if step.region >= self.cfg.regions {
                return Err(Error::Shape(format!("region {} of {}", step.region, self.cfg.regions)));
            }
            out.extend((0..self.cfg.regions).map(|r| if r == step.region { 1.0 } else { 0.0 }));
            out.extend(self.layout.clipped_obs(&step.observation, self.cfg.beta)?);
            out.extend(self.layout.encode_action(&step.action)?);
        }
        Ok(out)
    }

    fn trunk(&self, g: &mut Graph, states: &[&[f64]]) -> Result<NodeId> {
        let n = self.cfg.history;
        let td = self.token_dim();
        let mut data = Vec::with_capacity(states.len() * n * td);
        for s in states {
            if s.len() != n * td {
                return Err(Error::Shape(format!("encoded state has {} values, expected {}", s.len(), n * td)));
            }
            data.extend_from_slice(s);
        }
        let x = g.input(Tensor2::from_vec(states.len() * n, td, data)?);
        let e = self.embed.forward(g, x)?;
        let e = g.slot_bias(e, self.slot)?;
        let a = self.attn.forward(g, e, n)?;
        let r = g.add(e, a)?;
        let flat = g.reshape(r, states.len(), n * self.cfg.width)?;
        self.fc.forward_hidden(g, flat)
    }

    /// Head outputs for a batch of encoded states under `params`,
    /// `batch × total local actions`.
    pub fn head_values(&self, params: &ParamStore, states: &[&[f64]]) -> Result<Tensor2> {
        let mut g = Graph::new(params);
        let h = self.trunk(&mut g, states)?;
        let q = self.heads.forward(&mut g, h)?;
        Ok(g.value(q).clone())
    }

    /// Per-device Q tables of one encoded state.
    pub fn tables_encoded(&self, params: &ParamStore, state: &[f64]) -> Result<Vec<Vec<f64>>> {
        let q = self.head_values(params, &[state])?;
        Ok(split_tables(q.row(0), &self.space))
    }

    pub fn q_tables(&self, es: &ExtendedState) -> Result<Vec<Vec<f64>>> {
        self.tables_encoded(&self.params, &self.encode_state(es)?)
    }

    /// `Σ_i min_{a ∈ allowed_i} Q^i(s, a)` for each state of the batch.
    pub fn min_sum(&self, params: &ParamStore, states: &[&[f64]]) -> Result<Vec<f64>> {
        let q = self.head_values(params, states)?;
        Ok((0..q.rows())
            .map(|r| {
                let row = q.row(r);
                self.space
                    .offsets()
                    .iter()
                    .enumerate()
                    .map(|(i, off)| self.space.allowed(i).iter().map(|a| row[off + a]).fold(f64::INFINITY, f64::min))
                    .sum()
            })
            .collect())
    }

    /// Copies φ into φ̄.
    pub fn sync_target(&mut self) -> Result<()> {
        self.target.copy_values_from(&self.params)
    }

    /// Sets the head weights and biases to zero (both parameter copies).
    pub fn zero_heads(&mut self) {
        for store in [&mut self.params, &mut self.target] {
            for id in [self.heads.w, self.heads.b] {
                store.value_mut(id).data_mut().fill(0.0);
            }
        }
    }

    pub fn head_ids(&self) -> (ParamId, ParamId) {
        (self.heads.w, self.heads.b)
    }
}

fn split_tables(row: &[f64], space: &ActionSpace) -> Vec<Vec<f64>> {
    space
        .offsets()
        .iter()
        .zip(space.sizes())
        .map(|(&off, size)| row[off..off + size].to_vec())
        .collect()
}

pub fn q_forward(net: &QNetwork, es: &ExtendedState) -> Result<Vec<Vec<f64>>> {
    net.q_tables(es)
}

/// Joint Q of a factored action: the sum of the selected entries.
pub fn joint_q(tables: &[Vec<f64>], idx: &[usize]) -> f64 {
    tables.iter().zip(idx).map(|(t, &a)| t[a]).sum()
}

/// Smallest entry among `allowed`, ties to the lowest index.
pub(crate) fn argmin_over(table: &[f64], allowed: &[usize]) -> usize {
    let mut best = allowed[0];
    for &a in &allowed[1..] {
        if table[a] < table[best] {
            best = a;
        }
    }
    best
}

pub fn greedy_indices(tables: &[Vec<f64>], space: &ActionSpace) -> Vec<usize> {
    tables.iter().enumerate().map(|(i, t)| argmin_over(t, space.allowed(i))).collect()
}

pub fn greedy_action(tables: &[Vec<f64>], space: &ActionSpace) -> Result<SchedulingAction> {
    space.decode(&greedy_indices(tables, space))
}

/// Mean squared TD error of the batch and its gradient with respect to φ.
/// Targets `g + γ Σ_i min Q^i(s', ·; φ̄)` are constants.
pub fn td_loss(net: &QNetwork, batch: &[&Transition], gamma: f64) -> Result<(f64, Grads)> {
    if batch.is_empty() {
        return Err(Error::InsufficientData("empty TD batch".into()));
    }
    let next: Vec<&[f64]> = batch.iter().map(|t| t.next.as_slice()).collect();
    let targets: Vec<f64> = if gamma == 0.0 {
        batch.iter().map(|t| t.cost).collect()
    } else {
        let m = net.min_sum(&net.target, &next)?;
        batch.iter().zip(m).map(|(t, v)| t.cost + gamma * v).collect()
    };
    let offsets = net.space.offsets();
    let idx = batch
        .iter()
        .map(|t| {
            if t.action.len() != offsets.len() {
                return Err(Error::Shape(format!("{} local actions for {} devices", t.action.len(), offsets.len())));
            }
            Ok(t.action.iter().zip(offsets).map(|(a, o)| a + o).collect())
        })
        .collect::<Result<Vec<Vec<usize>>>>()?;
    let states: Vec<&[f64]> = batch.iter().map(|t| t.state.as_slice()).collect();
    let mut g = Graph::new(&net.params);
    let h = net.trunk(&mut g, &states)?;
    let q = g.gather_heads(h, net.heads.w, net.heads.b, idx)?;
    let loss = g.mse(q, Tensor2::from_vec(batch.len(), 1, targets)?)?;
    let value = g.value(loss).get(0, 0);
    Ok((value, g.backward(loss)?.params))
}
