//! Per-region QoS imitators: networks mapping an encoded scheduling action
//! to a normalized QoS observation, trained on the preliminary dataset.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoding::TaskLayout;
use crate::error::{Error, Result};
use crate::model::{QosObservation, SchedulingAction, TaskId};
use crate::neural::{AdamConfig, Graph, Mlp, ParamStore, Tensor2};
use crate::quantizer::{region_index, RegionModel};

/// One period of the collection protocol: the testing action and its
/// observation, then a random action and its observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreliminaryRecord {
    pub scenario: String,
    pub pattern: u32,
    pub seed: u64,
    pub interference_bps: Vec<f64>,
    pub testing_action: SchedulingAction,
    pub testing_observation: QosObservation,
    pub random_action: SchedulingAction,
    pub observation: QosObservation,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ImitatorHyper {
    pub hidden_layers: usize,
    pub width: usize,
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub alpha: f64,
    pub beta: f64,
    pub holdout_fraction: f64,
    /// Holdout loss is evaluated every this many steps (and at the end).
    pub eval_every: usize,
}

impl Default for ImitatorHyper {
    fn default() -> Self {
        ImitatorHyper {
            hidden_layers: 10,
            width: 256,
            steps: 300,
            batch: 32,
            lr: 1e-3,
            alpha: 1.0,
            beta: 3.0,
            holdout_fraction: 0.1,
            eval_every: 50,
        }
    }
}

/// Loss on normalized vectors: files first (`n_files` of them), then delay
/// tasks. Target RTT multiples are clipped at `beta` before comparison.
pub fn imitator_loss(pred: &[f64], target: &[f64], n_files: usize, alpha: f64, beta: f64) -> f64 {
    if pred.is_empty() {
        return 0.0;
    }
    let mut total = 0.0;
    for (i, (p, t)) in pred.iter().zip(target).enumerate() {
        total += if i < n_files {
            alpha * (p - t).powi(2)
        } else {
            (p - t.min(beta)).powi(2)
        };
    }
    total / pred.len() as f64
}

/// Splits records by traffic pattern and region of their testing
/// observation.
pub fn partition<'a>(
    records: &'a [PreliminaryRecord],
    models: &BTreeMap<u32, RegionModel>,
) -> Result<BTreeMap<u32, BTreeMap<usize, Vec<&'a PreliminaryRecord>>>> {
    let mut out: BTreeMap<u32, BTreeMap<usize, Vec<&PreliminaryRecord>>> = BTreeMap::new();
    for r in records {
        let rm = models
            .get(&r.pattern)
            .ok_or_else(|| Error::Contract(format!("no region model for pattern {}", r.pattern)))?;
        let k = region_index(&r.testing_observation, rm)?;
        out.entry(r.pattern).or_default().entry(k).or_default().push(r);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossRow {
    pub step: usize,
    pub train_loss: f64,
    pub holdout_loss: Option<f64>,
}

/// A plain regression network with its training record.
#[derive(Debug, Clone)]
pub struct FittedNet {
    pub params: ParamStore,
    pub net: Mlp,
    pub curve: Vec<LossRow>,
    pub holdout_loss: Option<f64>,
    pub train_loss: f64,
}

fn batch_loss(
    params: &ParamStore,
    net: &Mlp,
    inputs: &[&Vec<f64>],
    targets: &[&Vec<f64>],
    weights: &[f64],
    active: usize,
    grad: bool,
) -> Result<(f64, Option<crate::neural::Grads>)> {
    let mut g = Graph::new(params);
    let x = g.input(Tensor2::from_rows(&inputs.iter().map(|v| v.to_vec()).collect::<Vec<_>>())?);
    let y = net.forward(&mut g, x)?;
    let t = Tensor2::from_rows(&targets.iter().map(|v| v.to_vec()).collect::<Vec<_>>())?;
    let denom = (inputs.len() * active.max(1)) as f64;
    let loss = g.weighted_sq_error(y, t, weights.to_vec(), denom)?;
    let value = g.value(loss).get(0, 0);
    let grads = if grad { Some(g.backward(loss)?.params) } else { None };
    Ok((value, grads))
}

/// Fits an MLP with `hyper.hidden_layers` ReLU layers to (input, target)
/// pairs under per-output loss weights. Targets must already be clipped.
pub fn fit_network(inputs: &[Vec<f64>], targets: &[Vec<f64>], weights: &[f64], hyper: &ImitatorHyper, seed: u64) -> Result<FittedNet> {
    if inputs.is_empty() || inputs.len() != targets.len() {
        return Err(Error::InsufficientData("no training pairs".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let in_dim = inputs[0].len();
    let out_dim = weights.len();
    let mut sizes = vec![in_dim];
    sizes.extend(std::iter::repeat(hyper.width).take(hyper.hidden_layers));
    sizes.push(out_dim);
    let mut params = ParamStore::new();
    let net = Mlp::new(&mut params, "imitator", &sizes, &mut rng)?;
    let active = weights.iter().filter(|w| **w > 0.0).count();

    let mut order: Vec<usize> = (0..inputs.len()).collect();
    order.shuffle(&mut rng);
    let n_hold = if inputs.len() >= 10 {
        ((inputs.len() as f64 * hyper.holdout_fraction).round() as usize).min(inputs.len() - 1)
    } else {
        0
    };
    let (hold, train) = order.split_at(n_hold);
    let mut train = train.to_vec();
    let batch = if train.len() < hyper.batch {
        log::warn!("{} training pairs is less than one batch; training full-batch", train.len());
        train.len()
    } else {
        hyper.batch
    };
    let adam = AdamConfig::with_lr(hyper.lr);
    let pick = |idx: &[usize]| -> (Vec<&Vec<f64>>, Vec<&Vec<f64>>) {
        (idx.iter().map(|&i| &inputs[i]).collect(), idx.iter().map(|&i| &targets[i]).collect())
    };
    let holdout = |params: &ParamStore| -> Result<Option<f64>> {
        if hold.is_empty() {
            return Ok(None);
        }
        let (x, t) = pick(hold);
        Ok(Some(batch_loss(params, &net, &x, &t, weights, active, false)?.0))
    };
    let mut curve = Vec::new();
    let mut cursor = train.len();
    let mut last = f64::NAN;
    for step in 1..=hyper.steps {
        if cursor + batch > train.len() {
            train.shuffle(&mut rng);
            cursor = 0;
        }
        let idx = &train[cursor..cursor + batch];
        cursor += batch;
        let (x, t) = pick(idx);
        let (loss, grads) = batch_loss(&params, &net, &x, &t, weights, active, true)?;
        params.adam_step(&grads.expect("gradients requested"), &adam)?;
        last = loss;
        let eval = step % hyper.eval_every.max(1) == 0 || step == hyper.steps;
        curve.push(LossRow {
            step,
            train_loss: loss,
            holdout_loss: if eval { holdout(&params)? } else { None },
        });
    }
    let (x, t) = pick(&train);
    let train_loss = if hyper.steps > 0 {
        batch_loss(&params, &net, &x, &t, weights, active, false)?.0
    } else {
        last
    };
    let holdout_loss = holdout(&params)?;
    Ok(FittedNet {
        params,
        net,
        curve,
        holdout_loss,
        train_loss,
    })
}

/// Serializable description of a trained imitator (parameters are stored
/// next to it in binary form).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImitatorMeta {
    pub pattern: u32,
    pub region: usize,
    pub layout: TaskLayout,
    pub active: Vec<TaskId>,
    pub hyper: ImitatorHyper,
    pub samples: usize,
    pub train_loss: f64,
    pub holdout_loss: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct ImitatorModel {
    pub meta: ImitatorMeta,
    pub params: ParamStore,
    net: Mlp,
}

/// Training pairs of a record subset: the random action and its
/// observation, plus the testing action and its observation.
fn training_pairs(subset: &[&PreliminaryRecord], layout: &TaskLayout, beta: f64) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let mut inputs = Vec::new();
    let mut targets = Vec::new();
    for r in subset {
        for (a, o) in [(&r.random_action, &r.observation), (&r.testing_action, &r.testing_observation)] {
            inputs.push(layout.encode_action(a)?);
            targets.push(layout.clipped_obs(o, beta)?);
        }
    }
    Ok((inputs, targets))
}

pub fn train_imitator(
    subset: &[&PreliminaryRecord],
    layout: &TaskLayout,
    active: &[TaskId],
    region: usize,
    hyper: &ImitatorHyper,
    seed: u64,
) -> Result<(ImitatorModel, Vec<LossRow>)> {
    let pattern = subset
        .first()
        .map(|r| r.pattern)
        .ok_or_else(|| Error::InsufficientData(format!("region {region} has no records")))?;
    let (inputs, targets) = training_pairs(subset, layout, hyper.beta)?;
    let weights = layout.loss_weights(active, hyper.alpha);
    let fitted = fit_network(&inputs, &targets, &weights, hyper, seed)?;
    let model = ImitatorModel {
        meta: ImitatorMeta {
            pattern,
            region,
            layout: layout.clone(),
            active: active.to_vec(),
            hyper: *hyper,
            samples: inputs.len(),
            train_loss: fitted.train_loss,
            holdout_loss: fitted.holdout_loss,
        },
        params: fitted.params,
        net: fitted.net,
    };
    Ok((model, fitted.curve))
}

impl ImitatorModel {
    pub fn from_parts(meta: ImitatorMeta, params: ParamStore) -> Result<Self> {
        let net = Mlp::find(&params, "imitator", meta.hyper.hidden_layers + 1)?;
        Ok(ImitatorModel { meta, params, net })
    }

    /// Raw network output in normalized units.
    pub fn predict_normalized(&self, action: &SchedulingAction) -> Result<Vec<f64>> {
        let x = self.meta.layout.encode_action(action)?;
        let mut g = Graph::new(&self.params);
        let xi = g.input(Tensor2::from_vec(1, x.len(), x)?);
        let y = self.net.forward(&mut g, xi)?;
        Ok(g.value(y).data().to_vec())
    }

    pub fn file_stem(pattern: u32, region: usize) -> String {
        format!("imitator_p{pattern}_r{region}")
    }

    pub fn paths(dir: &Path, pattern: u32, region: usize) -> (PathBuf, PathBuf) {
        let stem = Self::file_stem(pattern, region);
        (dir.join(format!("{stem}.json")), dir.join(format!("{stem}.bin")))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let (meta, bin) = Self::paths(dir, self.meta.pattern, self.meta.region);
        std::fs::write(&meta, serde_json::to_string_pretty(&self.meta)?).map_err(|e| Error::io(&meta, e))?;
        self.params.save(&bin, false)
    }

    pub fn load(dir: &Path, pattern: u32, region: usize) -> Result<Self> {
        let (meta, bin) = Self::paths(dir, pattern, region);
        if !meta.exists() {
            return Err(Error::MissingCheckpoint(meta));
        }
        let text = std::fs::read_to_string(&meta).map_err(|e| Error::io(&meta, e))?;
        Self::from_parts(serde_json::from_str(&text)?, ParamStore::load(&bin)?)
    }
}

/// Predicted observation for `action`: de-normalized, throughputs clamped
/// to the caps, RTTs positive, inactive tasks at their fixed values.
pub fn imitate(model: &ImitatorModel, action: &SchedulingAction) -> Result<QosObservation> {
    let pred = model.predict_normalized(action)?;
    model.meta.layout.decode_obs(&pred, action, &model.meta.active)
}
