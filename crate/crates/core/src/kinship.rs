//! Weight deltas against a shared base and the similarity between them.
//!
//! Deltas are streamed chunk by chunk; nothing the size of a whole model is
//! materialized. Each tensor is reduced independently (in parallel) and the
//! partial results are combined in canonical tensor order, so results do not
//! depend on thread scheduling.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor_store::{check_compatible, TensorMap};

const CHUNK: usize = 1 << 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimMetric {
    Pcc,
    Cs,
    Ed,
}

impl SimMetric {
    pub const ALL: [SimMetric; 3] = [SimMetric::Pcc, SimMetric::Cs, SimMetric::Ed];

    pub fn as_str(self) -> &'static str {
        match self {
            SimMetric::Pcc => "pcc",
            SimMetric::Cs => "cs",
            SimMetric::Ed => "ed",
        }
    }

    /// Value of `sim(δ, δ)`.
    pub fn self_similarity(self) -> f64 {
        match self {
            SimMetric::Pcc | SimMetric::Cs => 1.0,
            SimMetric::Ed => 0.0,
        }
    }

    /// True if `a` indicates closer relatedness than `b`.
    pub fn more_related(self, a: f64, b: f64) -> bool {
        match self {
            SimMetric::Pcc | SimMetric::Cs => a > b,
            SimMetric::Ed => a < b,
        }
    }
}

impl fmt::Display for SimMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SimMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pcc" => Ok(SimMetric::Pcc),
            "cs" => Ok(SimMetric::Cs),
            "ed" => Ok(SimMetric::Ed),
            other => Err(Error::InvalidParam(format!(
                "unknown similarity metric `{other}` (expected pcc, cs or ed)"
            ))),
        }
    }
}

#[derive(Clone)]
enum Source {
    Streamed {
        model: Arc<TensorMap>,
        base: Arc<TensorMap>,
    },
    Values(Arc<Vec<f64>>),
}

/// `θ − θ_base` in canonical flatten order, produced lazily.
#[derive(Clone)]
pub struct DeltaVector {
    pub model_id: String,
    pub base_id: String,
    /// Element count of each tensor, in canonical order.
    segments: Vec<usize>,
    dim: usize,
    source: Source,
}

impl fmt::Debug for DeltaVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DeltaVector")
            .field("model_id", &self.model_id)
            .field("base_id", &self.base_id)
            .field("dim", &self.dim)
            .finish()
    }
}

impl DeltaVector {
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// In-memory delta treated as a single segment.
    pub fn from_values(model_id: &str, base_id: &str, values: Vec<f64>) -> Self {
        let dim = values.len();
        Self {
            model_id: model_id.to_string(),
            base_id: base_id.to_string(),
            segments: vec![dim],
            dim,
            source: Source::Values(Arc::new(values)),
        }
    }

    pub fn comparable(&self, other: &DeltaVector) -> Result<()> {
        if self.base_id != other.base_id {
            return Err(Error::InvalidParam(format!(
                "deltas `{}` and `{}` use different bases (`{}` vs `{}`)",
                self.model_id, other.model_id, self.base_id, other.base_id
            )));
        }
        if self.dim != other.dim || self.segments != other.segments {
            return Err(Error::InvalidParam(format!(
                "deltas `{}` and `{}` have different layouts ({} vs {} values)",
                self.model_id, other.model_id, self.dim, other.dim
            )));
        }
        Ok(())
    }

    /// Fills `out` with the delta values of `segment` starting at `start`.
    fn fill(&self, segment: usize, start: usize, out: &mut [f64], scratch: &mut Scratch) {
        match &self.source {
            Source::Streamed { model, base } => {
                let n = out.len();
                scratch.a.resize(n, 0.0);
                scratch.b.resize(n, 0.0);
                model.decode_range(segment, start, &mut scratch.a[..n]);
                base.decode_range(segment, start, &mut scratch.b[..n]);
                for ((o, &m), &b) in out.iter_mut().zip(&scratch.a).zip(&scratch.b) {
                    *o = m as f64 - b as f64;
                }
            }
            Source::Values(v) => out.copy_from_slice(&v[start..start + out.len()]),
        }
    }

    /// Materializes the full delta. Meant for small models and tests.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        let mut scratch = Scratch::default();
        let mut offset = 0;
        for (seg, &n) in self.segments.iter().enumerate() {
            self.fill(seg, 0, &mut out[offset..offset + n], &mut scratch);
            offset += n;
        }
        out
    }
}

#[derive(Default)]
struct Scratch {
    a: Vec<f32>,
    b: Vec<f32>,
}

/// Streamed `δ = model − base`. The maps are shared, not copied.
pub fn compute_delta(
    model_id: &str,
    model: Arc<TensorMap>,
    base_id: &str,
    base: Arc<TensorMap>,
) -> Result<DeltaVector> {
    check_compatible(&[&model, &base])?;
    let segments: Vec<usize> = base.metas().iter().map(|m| m.numel()).collect();
    Ok(DeltaVector {
        model_id: model_id.to_string(),
        base_id: base_id.to_string(),
        dim: segments.iter().sum(),
        segments,
        source: Source::Streamed { model, base },
    })
}

/// Neumaier-compensated running sum.
#[derive(Clone, Copy, Debug, Default)]
struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    fn merge(&mut self, other: &CompensatedSum) {
        self.add(other.sum);
        self.add(other.comp);
    }

    fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Mergeable sufficient statistics for all three metrics.
///
/// Raw moments (`Σxy`, `Σx²`, `Σy²`, `Σ(x−y)²`) use compensated summation
/// across chunks. Centered moments are computed two-pass inside each chunk
/// and merged with the pairwise update of Chan, Golub & LeVeque.
#[derive(Clone, Debug)]
pub struct SimAccumulator {
    n: u64,
    mean_x: f64,
    mean_y: f64,
    m2x: f64,
    m2y: f64,
    cxy: f64,
    sxy: CompensatedSum,
    sxx: CompensatedSum,
    syy: CompensatedSum,
    sdd: CompensatedSum,
    min_x: f64,
    max_x: f64,
    min_y: f64,
    max_y: f64,
}

impl SimAccumulator {
    pub fn new() -> Self {
        Self {
            n: 0,
            mean_x: 0.0,
            mean_y: 0.0,
            m2x: 0.0,
            m2y: 0.0,
            cxy: 0.0,
            sxy: CompensatedSum::default(),
            sxx: CompensatedSum::default(),
            syy: CompensatedSum::default(),
            sdd: CompensatedSum::default(),
            min_x: f64::INFINITY,
            max_x: f64::NEG_INFINITY,
            min_y: f64::INFINITY,
            max_y: f64::NEG_INFINITY,
        }
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn push_chunk(&mut self, x: &[f64], y: &[f64]) {
        assert_eq!(x.len(), y.len(), "chunk lengths differ");
        if x.is_empty() {
            return;
        }
        let n = x.len() as f64;
        let (mut sx, mut sy) = (0.0, 0.0);
        let (mut sxy, mut sxx, mut syy, mut sdd) = (0.0, 0.0, 0.0, 0.0);
        let mut chunk = SimAccumulator::new();
        for (&a, &b) in x.iter().zip(y) {
            sx += a;
            sy += b;
            sxy += a * b;
            sxx += a * a;
            syy += b * b;
            let d = a - b;
            sdd += d * d;
            chunk.min_x = chunk.min_x.min(a);
            chunk.max_x = chunk.max_x.max(a);
            chunk.min_y = chunk.min_y.min(b);
            chunk.max_y = chunk.max_y.max(b);
        }
        let (mx, my) = (sx / n, sy / n);
        let (mut m2x, mut m2y, mut cxy) = (0.0, 0.0, 0.0);
        for (&a, &b) in x.iter().zip(y) {
            let (da, db) = (a - mx, b - my);
            m2x += da * da;
            m2y += db * db;
            cxy += da * db;
        }
        chunk.n = x.len() as u64;
        chunk.mean_x = mx;
        chunk.mean_y = my;
        chunk.m2x = m2x;
        chunk.m2y = m2y;
        chunk.cxy = cxy;
        chunk.sxy.add(sxy);
        chunk.sxx.add(sxx);
        chunk.syy.add(syy);
        chunk.sdd.add(sdd);
        self.merge(&chunk);
    }

    pub fn merge(&mut self, other: &SimAccumulator) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = other.clone();
            return;
        }
        let (na, nb) = (self.n as f64, other.n as f64);
        let n = na + nb;
        let dx = other.mean_x - self.mean_x;
        let dy = other.mean_y - self.mean_y;
        let w = na * nb / n;
        self.m2x += other.m2x + dx * dx * w;
        self.m2y += other.m2y + dy * dy * w;
        self.cxy += other.cxy + dx * dy * w;
        self.mean_x += dx * nb / n;
        self.mean_y += dy * nb / n;
        self.n += other.n;
        self.sxy.merge(&other.sxy);
        self.sxx.merge(&other.sxx);
        self.syy.merge(&other.syy);
        self.sdd.merge(&other.sdd);
        self.min_x = self.min_x.min(other.min_x);
        self.max_x = self.max_x.max(other.max_x);
        self.min_y = self.min_y.min(other.min_y);
        self.max_y = self.max_y.max(other.max_y);
    }

    /// Similarity from the accumulated statistics. `label` names the pair in
    /// error messages.
    pub fn finish(&self, metric: SimMetric, label: &str) -> Result<f64> {
        if self.n == 0 {
            return Err(Error::UndefinedSimilarity(format!(
                "{metric} of {label}: empty deltas"
            )));
        }
        match metric {
            SimMetric::Pcc => {
                if self.min_x == self.max_x || self.min_y == self.max_y {
                    return Err(Error::UndefinedSimilarity(format!(
                        "pcc of {label}: a delta is constant (zero variance)"
                    )));
                }
                let denom = (self.m2x * self.m2y).sqrt();
                if denom.is_nan() || denom <= 0.0 {
                    return Err(Error::UndefinedSimilarity(format!(
                        "pcc of {label}: variance underflows to zero"
                    )));
                }
                Ok((self.cxy / denom).clamp(-1.0, 1.0))
            }
            SimMetric::Cs => {
                let (xx, yy) = (self.sxx.value(), self.syy.value());
                if xx == 0.0 || yy == 0.0 {
                    return Err(Error::UndefinedSimilarity(format!(
                        "cs of {label}: a delta has zero norm"
                    )));
                }
                Ok((self.sxy.value() / (xx.sqrt() * yy.sqrt())).clamp(-1.0, 1.0))
            }
            SimMetric::Ed => Ok(self.sdd.value().max(0.0).sqrt()),
        }
    }
}

impl Default for SimAccumulator {
    fn default() -> Self {
        Self::new()
    }
}

/// Accumulates statistics for a comparable pair, one tensor per task.
pub fn accumulate_pair(d1: &DeltaVector, d2: &DeltaVector) -> Result<SimAccumulator> {
    d1.comparable(d2)?;
    let parts: Vec<SimAccumulator> = (0..d1.segments.len())
        .into_par_iter()
        .map(|seg| {
            let n = d1.segments[seg];
            let mut acc = SimAccumulator::new();
            let mut scratch = Scratch::default();
            let len = n.min(CHUNK);
            let mut x = vec![0.0f64; len];
            let mut y = vec![0.0f64; len];
            let mut start = 0;
            while start < n {
                let m = (n - start).min(CHUNK);
                d1.fill(seg, start, &mut x[..m], &mut scratch);
                d2.fill(seg, start, &mut y[..m], &mut scratch);
                acc.push_chunk(&x[..m], &y[..m]);
                start += m;
            }
            acc
        })
        .collect();
    let mut total = SimAccumulator::new();
    for p in &parts {
        total.merge(p);
    }
    Ok(total)
}

pub fn sim_pair(d1: &DeltaVector, d2: &DeltaVector, metric: SimMetric) -> Result<f64> {
    let label = format!("`{}` and `{}`", d1.model_id, d2.model_id);
    accumulate_pair(d1, d2)?.finish(metric, &label)
}

/// Mean of `sim_pair` over all unordered pairs.
pub fn kinship_group(deltas: &[DeltaVector], metric: SimMetric) -> Result<f64> {
    if deltas.len() < 2 {
        return Err(Error::InvalidParam(format!(
            "group kinship needs at least 2 models, got {}",
            deltas.len()
        )));
    }
    let pairs = unordered_pairs(deltas.len());
    let sims: Vec<f64> = pairs
        .par_iter()
        .map(|&(i, j)| sim_pair(&deltas[i], &deltas[j], metric))
        .collect::<Result<_>>()?;
    Ok(sims.iter().sum::<f64>() / sims.len() as f64)
}

fn unordered_pairs(n: usize) -> Vec<(usize, usize)> {
    (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KinshipMatrix {
    pub metric: SimMetric,
    pub model_ids: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

impl KinshipMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i][j]
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("model");
        for id in &self.model_ids {
            out.push(',');
            out.push_str(id);
        }
        out.push('\n');
        for (id, row) in self.model_ids.iter().zip(&self.values) {
            out.push_str(id);
            for v in row {
                out.push(',');
                out.push_str(&v.to_string());
            }
            out.push('\n');
        }
        out
    }
}

/// Symmetric matrix of pairwise similarities over precomputed deltas.
pub fn kinship_matrix(deltas: &[DeltaVector], metric: SimMetric) -> Result<KinshipMatrix> {
    let n = deltas.len();
    let mut values = vec![vec![metric.self_similarity(); n]; n];
    let sims: Vec<((usize, usize), f64)> = unordered_pairs(n)
        .into_par_iter()
        .map(|(i, j)| sim_pair(&deltas[i], &deltas[j], metric).map(|v| ((i, j), v)))
        .collect::<Result<_>>()?;
    for ((i, j), v) in sims {
        values[i][j] = v;
        values[j][i] = v;
    }
    Ok(KinshipMatrix {
        metric,
        model_ids: deltas.iter().map(|d| d.model_id.clone()).collect(),
        values,
    })
}

/// Builds deltas for `models` against `base` and returns their matrix.
pub fn kinship_matrix_for(
    models: &[(String, Arc<TensorMap>)],
    base: (&str, Arc<TensorMap>),
    metric: SimMetric,
) -> Result<KinshipMatrix> {
    let deltas = models
        .iter()
        .map(|(id, m)| compute_delta(id, Arc::clone(m), base.0, Arc::clone(&base.1)))
        .collect::<Result<Vec<_>>>()?;
    kinship_matrix(&deltas, metric)
}
