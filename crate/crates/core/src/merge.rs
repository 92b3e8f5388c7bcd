//! Weight-space merge operators: linear averaging, SLERP, TIES and DARE-TIES.
//!
//! All arithmetic runs in `f64` on values widened from storage; results are
//! rounded once into the element type of the first parent.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::CounterRng;
use crate::tensor_store::{check_compatible, TensorMap};

/// `|sin Ω|` below this falls back to linear interpolation.
pub const SLERP_EPSILON: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MergeOperator {
    Linear,
    Slerp,
    Ties,
    DareTies,
}

impl MergeOperator {
    pub fn as_str(self) -> &'static str {
        match self {
            MergeOperator::Linear => "linear",
            MergeOperator::Slerp => "slerp",
            MergeOperator::Ties => "ties",
            MergeOperator::DareTies => "dare_ties",
        }
    }

    pub fn needs_base(self) -> bool {
        matches!(self, MergeOperator::Ties | MergeOperator::DareTies)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MergeParams {
    /// Per-parent weights for `linear`; normalized to sum to 1.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    /// SLERP interpolation parameter.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t: Option<f64>,
    /// Fraction of task-vector entries kept by TIES / DARE.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub density: Option<f64>,
    /// Scale applied to the merged task vector before adding it to the base.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

/// Operator, hyperparameters and ordered parents: enough to reproduce a
/// merged artifact from its inputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MergeRecipe {
    pub operator: MergeOperator,
    pub parents: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base: Option<String>,
    #[serde(default)]
    pub params: MergeParams,
}

pub const DEFAULT_SLERP_T: f64 = 0.5;
pub const DEFAULT_TASK_WEIGHT: f64 = 1.0;

impl MergeRecipe {
    pub fn slerp_t(&self) -> f64 {
        self.params.t.unwrap_or(DEFAULT_SLERP_T)
    }

    pub fn task_weight(&self) -> f64 {
        self.params.weight.unwrap_or(DEFAULT_TASK_WEIGHT)
    }

    pub fn linear_weights(&self) -> Vec<f64> {
        self.params
            .weights
            .clone()
            .unwrap_or_else(|| vec![1.0; self.parents.len()])
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |msg: String| Err(Error::InvalidParam(msg));
        match self.operator {
            MergeOperator::Linear => {
                if self.parents.is_empty() {
                    return invalid("linear merge needs at least one parent".into());
                }
                let w = self.linear_weights();
                if w.len() != self.parents.len() {
                    return invalid(format!(
                        "linear merge has {} weights for {} parents",
                        w.len(),
                        self.parents.len()
                    ));
                }
                validate_weights(&w)?;
            }
            MergeOperator::Slerp => {
                if self.parents.len() != 2 {
                    return invalid(format!(
                        "slerp needs exactly 2 parents, got {}",
                        self.parents.len()
                    ));
                }
                validate_t(self.slerp_t())?;
            }
            MergeOperator::Ties | MergeOperator::DareTies => {
                if self.base.is_none() {
                    return invalid(format!("{} requires a base model", self.operator.as_str()));
                }
                if self.parents.len() < 2 {
                    return invalid(format!(
                        "{} needs at least 2 parents, got {}",
                        self.operator.as_str(),
                        self.parents.len()
                    ));
                }
                let density = self.params.density.ok_or_else(|| {
                    Error::InvalidParam(format!("{} requires `density`", self.operator.as_str()))
                })?;
                validate_density(density)?;
                validate_task_weight(self.task_weight())?;
                if self.operator == MergeOperator::DareTies && self.params.seed.is_none() {
                    return invalid("dare_ties requires `seed`".into());
                }
            }
        }
        Ok(())
    }
}

fn validate_weights(weights: &[f64]) -> Result<()> {
    match weights.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
        Some(w) => Err(Error::InvalidParam(format!(
            "linear weights must be positive and finite, got {w}"
        ))),
        None => Ok(()),
    }
}

fn validate_t(t: f64) -> Result<()> {
    if (0.0..=1.0).contains(&t) {
        Ok(())
    } else {
        Err(Error::InvalidParam(format!(
            "slerp t must lie in [0, 1], got {t}"
        )))
    }
}

fn validate_density(density: f64) -> Result<()> {
    if density > 0.0 && density <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidParam(format!(
            "density must lie in (0, 1], got {density}"
        )))
    }
}

fn validate_task_weight(weight: f64) -> Result<()> {
    if weight.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParam(format!(
            "task weight must be finite, got {weight}"
        )))
    }
}

/// Runs `recipe` on already loaded maps. `parents` follows `recipe.parents`.
pub fn apply_recipe(
    recipe: &MergeRecipe,
    parents: &[&TensorMap],
    base: Option<&TensorMap>,
) -> Result<TensorMap> {
    recipe.validate()?;
    if parents.len() != recipe.parents.len() {
        return Err(Error::InvalidParam(format!(
            "recipe names {} parents but {} maps were supplied",
            recipe.parents.len(),
            parents.len()
        )));
    }
    let need_base = || {
        base.ok_or_else(|| {
            Error::InvalidParam(format!(
                "{} requires a base model",
                recipe.operator.as_str()
            ))
        })
    };
    match recipe.operator {
        MergeOperator::Linear => merge_linear(parents, &recipe.linear_weights()),
        MergeOperator::Slerp => merge_slerp(parents[0], parents[1], recipe.slerp_t()),
        MergeOperator::Ties => merge_ties(
            parents,
            need_base()?,
            recipe.params.density.unwrap_or(1.0),
            recipe.task_weight(),
        ),
        MergeOperator::DareTies => merge_dare_ties(
            parents,
            need_base()?,
            recipe.params.density.unwrap_or(1.0),
            recipe.task_weight(),
            recipe.params.seed.unwrap_or(0),
        ),
    }
}

fn assemble(template: &TensorMap, tensors: Vec<Vec<f32>>) -> Result<TensorMap> {
    let mut tensors = tensors.into_iter();
    template.map_like(|_, _| Ok(tensors.next().expect("one buffer per tensor")))
}

fn ensure_compatible(maps: &[&TensorMap]) -> Result<()> {
    if maps.len() >= 2 {
        check_compatible(maps)?;
    }
    Ok(())
}

/// Weighted average `Σ ŵ_i θ_i` with `ŵ` normalized to sum to one.
pub fn merge_linear(parents: &[&TensorMap], weights: &[f64]) -> Result<TensorMap> {
    if parents.is_empty() {
        return Err(Error::InvalidParam(
            "linear merge needs at least one parent".into(),
        ));
    }
    if weights.len() != parents.len() {
        return Err(Error::InvalidParam(format!(
            "{} weights for {} parents",
            weights.len(),
            parents.len()
        )));
    }
    validate_weights(weights)?;
    ensure_compatible(parents)?;
    let total: f64 = weights.iter().sum();
    let norm: Vec<f64> = weights.iter().map(|w| w / total).collect();

    let template = parents[0];
    let tensors: Vec<Vec<f32>> = (0..template.len())
        .into_par_iter()
        .map(|idx| {
            let mut acc = vec![0.0f64; template.metas()[idx].numel()];
            for (p, w) in parents.iter().zip(&norm) {
                for (a, v) in acc.iter_mut().zip(p.values(idx)) {
                    *a += w * v as f64;
                }
            }
            acc.into_iter().map(|v| v as f32).collect()
        })
        .collect();
    assemble(template, tensors)
}

/// Spherical interpolation of one flattened tensor pair.
pub fn slerp_values(a: &[f32], b: &[f32], t: f64) -> Vec<f32> {
    debug_assert_eq!(a.len(), b.len());
    if t == 0.0 {
        return a.to_vec();
    }
    if t == 1.0 {
        return b.to_vec();
    }
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x as f64, y as f64);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    let lerp = || {
        a.iter()
            .zip(b)
            .map(|(&x, &y)| ((1.0 - t) * x as f64 + t * y as f64) as f32)
            .collect()
    };
    if na == 0.0 || nb == 0.0 {
        return lerp();
    }
    let cos = (dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0);
    let omega = cos.acos();
    let sin = omega.sin();
    if sin.abs() < SLERP_EPSILON {
        return lerp();
    }
    let ca = ((1.0 - t) * omega).sin() / sin;
    let cb = (t * omega).sin() / sin;
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (ca * x as f64 + cb * y as f64) as f32)
        .collect()
}

/// SLERP between `a` and `b`, with the angle taken per tensor.
pub fn merge_slerp(a: &TensorMap, b: &TensorMap, t: f64) -> Result<TensorMap> {
    validate_t(t)?;
    check_compatible(&[a, b])?;
    let tensors: Vec<Vec<f32>> = (0..a.len())
        .into_par_iter()
        .map(|idx| slerp_values(&a.values(idx), &b.values(idx), t))
        .collect();
    assemble(a, tensors)
}

/// Flattened task vector `θ − θ_base` in canonical order.
pub fn task_vector(model: &TensorMap, base: &TensorMap) -> Vec<f64> {
    let mut out = Vec::with_capacity(base.numel());
    for idx in 0..base.len() {
        let m = model.values(idx);
        let b = base.values(idx);
        out.extend(m.iter().zip(&b).map(|(&x, &y)| x as f64 - y as f64));
    }
    out
}

/// Number of entries TIES keeps at `density` out of `len`.
pub fn kept_count(density: f64, len: usize) -> usize {
    if len == 0 {
        return 0;
    }
    // The small slack keeps exact fractions like 2/3 · 3 from rounding up.
    let k = (density * len as f64 - 1e-9).ceil();
    (k.max(1.0) as usize).min(len)
}

/// Zeroes all but the `kept_count(density)` largest-magnitude entries.
/// Equal magnitudes at the cut are kept in index order.
pub fn trim_top_magnitude(tau: &mut [f64], density: f64) {
    let k = kept_count(density, tau.len());
    if k == tau.len() {
        return;
    }
    let mut mags: Vec<f64> = tau.iter().map(|v| v.abs()).collect();
    let (_, kth, _) = mags.select_nth_unstable_by(k - 1, |x, y| y.total_cmp(x));
    let threshold = *kth;
    let above = tau.iter().filter(|v| v.abs() > threshold).count();
    let mut ties_left = k - above;
    for v in tau.iter_mut() {
        let m = v.abs();
        if m > threshold {
            continue;
        }
        if m == threshold && ties_left > 0 {
            ties_left -= 1;
            continue;
        }
        *v = 0.0;
    }
}

/// DARE: drop each entry with probability `1 − density`, rescale survivors
/// by `1 / density`. Draw `j` of stream `stream` decides coordinate `j`.
pub fn dare_drop(tau: &mut [f64], density: f64, seed: u64, stream: u64) {
    let p = 1.0 - density;
    let rng = CounterRng::new(seed, stream);
    for (j, v) in tau.iter_mut().enumerate() {
        if rng.unit(j as u64) < p {
            *v = 0.0;
        } else {
            *v /= density;
        }
    }
}

/// TIES sign election and disjoint mean over (already sparsified) task
/// vectors. Positive wins ties in summed mass; coordinates with no agreeing
/// entry yield 0.
pub fn elect_and_merge(taus: &[Vec<f64>]) -> Vec<f64> {
    let d = taus.first().map_or(0, Vec::len);
    (0..d)
        .into_par_iter()
        .with_min_len(4096)
        .map(|j| {
            let mass: f64 = taus.iter().map(|t| t[j]).sum();
            let positive = mass >= 0.0;
            let (mut sum, mut count) = (0.0f64, 0u32);
            for t in taus {
                let v = t[j];
                if (positive && v > 0.0) || (!positive && v < 0.0) {
                    sum += v;
                    count += 1;
                }
            }
            if count == 0 {
                0.0
            } else {
                sum / count as f64
            }
        })
        .collect()
}

fn rebase(base: &TensorMap, merged_tau: &[f64], weight: f64) -> Result<TensorMap> {
    let mut offset = 0;
    base.map_like(|idx, meta| {
        let n = meta.numel();
        let b = base.values(idx);
        let out = b
            .iter()
            .zip(&merged_tau[offset..offset + n])
            .map(|(&x, &d)| (x as f64 + weight * d) as f32)
            .collect();
        offset += n;
        Ok(out)
    })
}

fn check_task_merge_inputs(parents: &[&TensorMap], base: &TensorMap, density: f64) -> Result<()> {
    if parents.len() < 2 {
        return Err(Error::InvalidParam(format!(
            "task-vector merge needs at least 2 parents, got {}",
            parents.len()
        )));
    }
    validate_density(density)?;
    let mut all: Vec<&TensorMap> = vec![base];
    all.extend_from_slice(parents);
    check_compatible(&all)
}

/// Output keeps the base's element types, which equal the parents' by the
/// compatibility precondition.
pub fn merge_ties(
    parents: &[&TensorMap],
    base: &TensorMap,
    density: f64,
    weight: f64,
) -> Result<TensorMap> {
    check_task_merge_inputs(parents, base, density)?;
    validate_task_weight(weight)?;
    let taus: Vec<Vec<f64>> = parents
        .par_iter()
        .map(|p| {
            let mut tau = task_vector(p, base);
            trim_top_magnitude(&mut tau, density);
            tau
        })
        .collect();
    rebase(base, &elect_and_merge(&taus), weight)
}

pub fn merge_dare_ties(
    parents: &[&TensorMap],
    base: &TensorMap,
    density: f64,
    weight: f64,
    seed: u64,
) -> Result<TensorMap> {
    check_task_merge_inputs(parents, base, density)?;
    validate_task_weight(weight)?;
    let taus: Vec<Vec<f64>> = parents
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let mut tau = task_vector(p, base);
            dare_drop(&mut tau, density, seed, i as u64);
            tau
        })
        .collect();
    rebase(base, &elect_and_merge(&taus), weight)
}
