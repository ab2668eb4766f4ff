//! Normalization of QoS observations and K-means performance regions.
//!
//! Vectors list file-task throughputs followed by delay-task RTTs, each in
//! task-id order (the iteration order of the observation maps).

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{QosObservation, TaskId};

const MAX_ITERS: usize = 200;
const TOLERANCE: f64 = 1e-6;
const RESTARTS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub throughput_mean: f64,
    pub throughput_std: f64,
    pub rtt_mean: f64,
    pub rtt_std: f64,
}

impl NormStats {
    pub const IDENTITY: NormStats = NormStats {
        throughput_mean: 0.0,
        throughput_std: 1.0,
        rtt_mean: 0.0,
        rtt_std: 1.0,
    };

    /// Pooled statistics over the entries of `active` tasks only; a zero
    /// standard deviation is replaced by 1.
    pub fn from_observations(obs: &[QosObservation], active: &[TaskId]) -> Result<Self> {
        let mut thr = Vec::new();
        let mut rtt = Vec::new();
        for o in obs {
            for id in active {
                if id.is_file() {
                    thr.push(o.throughput(id)?);
                } else {
                    rtt.push(o.rtt(id)?);
                }
            }
        }
        let (tm, ts) = mean_std(&thr);
        let (rm, rs) = mean_std(&rtt);
        Ok(NormStats {
            throughput_mean: tm,
            throughput_std: ts,
            rtt_mean: rm,
            rtt_std: rs,
        })
    }
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 1.0);
    }
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let s = (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt();
    (m, if s > 0.0 && s.is_finite() { s } else { 1.0 })
}

pub fn vectorize(obs: &QosObservation, ns: &NormStats) -> Vec<f64> {
    let thr = obs
        .throughput_bits
        .values()
        .map(|r| (r - ns.throughput_mean) / ns.throughput_std);
    let rtt = obs.rtt_s.values().map(|t| (t - ns.rtt_mean) / ns.rtt_std);
    thr.chain(rtt).collect()
}

/// Inverse of [`vectorize`] for the given file and delay task ids.
pub fn devectorize(v: &[f64], ns: &NormStats, files: &[TaskId], delays: &[TaskId]) -> Result<QosObservation> {
    if v.len() != files.len() + delays.len() {
        return Err(Error::Shape(format!(
            "vector of length {} for {} tasks",
            v.len(),
            files.len() + delays.len()
        )));
    }
    let mut sorted_files = files.to_vec();
    sorted_files.sort();
    let mut sorted_delays = delays.to_vec();
    sorted_delays.sort();
    let mut obs = QosObservation::default();
    for (id, x) in sorted_files.iter().zip(v) {
        obs.throughput_bits.insert(*id, x * ns.throughput_std + ns.throughput_mean);
    }
    for (id, x) in sorted_delays.iter().zip(&v[files.len()..]) {
        obs.rtt_s.insert(*id, x * ns.rtt_std + ns.rtt_mean);
    }
    Ok(obs)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest center; ties go to the smallest index.
fn nearest(point: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (k, c) in centers.iter().enumerate() {
        let d = sq_dist(point, c);
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

/// Result of one K-means run on raw vectors.
#[derive(Debug, Clone)]
pub struct KMeansFit {
    pub centers: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub inertia: f64,
    /// Inertia after each assignment step.
    pub inertia_trace: Vec<f64>,
}

fn seed_centers(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut centers = vec![points[rng.gen_range(0..points.len())].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.gen::<f64>() * total;
            let mut idx = points.len() - 1;
            for (i, w) in d2.iter().enumerate() {
                if u < *w {
                    idx = i;
                    break;
                }
                u -= w;
            }
            idx
        } else {
            rng.gen_range(0..points.len())
        };
        centers.push(points[pick].clone());
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &centers[centers.len() - 1]));
        }
    }
    centers
}

fn lloyd(points: &[Vec<f64>], mut centers: Vec<Vec<f64>>) -> KMeansFit {
    let dim = points[0].len();
    let k = centers.len();
    let mut labels = vec![0; points.len()];
    let mut trace = Vec::new();
    for _ in 0..MAX_ITERS {
        let mut inertia = 0.0;
        for (l, p) in labels.iter_mut().zip(points) {
            let (idx, d) = nearest(p, &centers);
            *l = idx;
            inertia += d;
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (l, p) in labels.iter().zip(points) {
            counts[*l] += 1;
            for (s, x) in sums[*l].iter_mut().zip(p) {
                *s += x;
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                // Re-seed at the point farthest from its own center, taking
                // it only from a cluster that keeps other members.
                let far = (0..points.len())
                    .filter(|&a| counts[labels[a]] > 1)
                    .max_by(|&a, &b| {
                        sq_dist(&points[a], &centers[labels[a]]).total_cmp(&sq_dist(&points[b], &centers[labels[b]]))
                    });
                let Some(far) = far else { continue };
                let old = labels[far];
                counts[old] -= 1;
                for (s, x) in sums[old].iter_mut().zip(&points[far]) {
                    *s -= x;
                }
                inertia -= sq_dist(&points[far], &centers[old]);
                labels[far] = c;
                counts[c] = 1;
                sums[c] = points[far].clone();
            }
        }
        trace.push(inertia);
        let mut moved: f64 = 0.0;
        for c in (0..k).filter(|&c| counts[c] > 0) {
            let new: Vec<f64> = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            moved = moved.max(sq_dist(&new, &centers[c]).sqrt());
            centers[c] = new;
        }
        if moved < TOLERANCE {
            break;
        }
    }
    let mut inertia = 0.0;
    for (l, p) in labels.iter_mut().zip(points) {
        let (idx, d) = nearest(p, &centers);
        *l = idx;
        inertia += d;
    }
    trace.push(inertia);
    KMeansFit {
        centers,
        labels,
        inertia,
        inertia_trace: trace,
    }
}

/// K-means with k-means++ seeding; best of several restarts by inertia.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64) -> Result<KMeansFit> {
    if k == 0 || points.len() < k {
        return Err(Error::InsufficientData(format!("{} points for K = {k}", points.len())));
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::Shape("points of differing dimension".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<KMeansFit> = None;
    for _ in 0..RESTARTS {
        let fit = lloyd(points, seed_centers(points, k, &mut rng));
        if best.as_ref().map_or(true, |b| fit.inertia < b.inertia) {
            best = Some(fit);
        }
    }
    Ok(best.expect("at least one restart"))
}

/// Performance regions of one traffic pattern. Regions are numbered from 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionModel {
    pub pattern: u32,
    pub centers: Vec<Vec<f64>>,
    pub stats: NormStats,
}

impl RegionModel {
    pub fn k(&self) -> usize {
        self.centers.len()
    }

    pub fn dim(&self) -> usize {
        self.centers.first().map_or(0, Vec::len)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Centers closer than this (in normalized units) are merged.
const MERGE_DISTANCE: f64 = 1e-9;

/// Fits K regions to testing-action observations. Coinciding centers are
/// merged, so the returned model may hold fewer than `k` regions.
pub fn fit(testing_obs: &[QosObservation], k: usize, ns: &NormStats, pattern: u32, seed: u64) -> Result<RegionModel> {
    let points: Vec<Vec<f64>> = testing_obs.iter().map(|o| vectorize(o, ns)).collect();
    let result = kmeans(&points, k, seed)?;
    let mut centers: Vec<Vec<f64>> = Vec::new();
    for c in result.centers {
        if !centers.iter().any(|d| sq_dist(d, &c).sqrt() < MERGE_DISTANCE) {
            centers.push(c);
        }
    }
    Ok(RegionModel {
        pattern,
        centers,
        stats: *ns,
    })
}

pub fn region_index(obs: &QosObservation, rm: &RegionModel) -> Result<usize> {
    let v = vectorize(obs, &rm.stats);
    if v.len() != rm.dim() {
        return Err(Error::Shape(format!(
            "observation has {} entries, region model expects {}",
            v.len(),
            rm.dim()
        )));
    }
    Ok(nearest(&v, &rm.centers).0)
}
