//! Iterative merging: a pool of models, selection strategies, stopping rules
//! and the lineage they produce.
//!
//! Every generation runs the same way. Pairs are chosen, children are merged
//! and evaluated (in parallel, bounded by the worker count), and then the pool,
//! the top-k set and the log are updated in a fixed order, so the log does not
//! depend on scheduling.

mod config;
mod log;
mod report;
mod tree;

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::Evaluator;
use crate::kinship::{compute_delta, sim_pair, DeltaVector, SimMetric};
use crate::merge::{apply_recipe, MergeOperator, MergeParams, MergeRecipe};
use crate::metrics::{average_task_performance, EvalResult};
use crate::rng::SplitMix64;
use crate::tensor_store::{check_compatible, load_tensor_map, save_tensor_map, TensorMap};

pub use config::{
    load_run_config, run_from_config, EvaluatorConfig, ModelSpec, RunConfig, RunOutcome,
    SyntheticTaskConfig,
};
pub use log::{EvolutionLog, LogEvent, StopReason};
pub use report::{report_csv, report_rows, ReportRow, REPORT_HEADER};
pub use tree::{export_family_tree, FamilyTree, TreeEdge, TreeFormat, TreeNode};

/// Children closer than this to a parent everywhere are flagged degenerate.
pub const DEGENERATE_TOLERANCE: f32 = 1e-7;
pub const DEFAULT_MAX_GENERATIONS: u32 = 10;
pub const DEFAULT_KINSHIP_THRESHOLD: f64 = 0.9;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelRecord {
    pub id: String,
    pub path: PathBuf,
    /// Generation in which the model was created; 0 for foundations.
    pub generation: u32,
    pub parents: Vec<String>,
    pub recipe: Option<MergeRecipe>,
    pub eval: Option<EvalResult>,
    pub atp: Option<f64>,
    #[serde(skip)]
    pub weights: Option<Arc<TensorMap>>,
}

impl ModelRecord {
    fn weights(&self) -> Result<Arc<TensorMap>> {
        match &self.weights {
            Some(w) => Ok(Arc::clone(w)),
            None => Ok(Arc::new(load_tensor_map(&self.path)?)),
        }
    }
}

/// Models keyed by id, in insertion order, sharing one base.
pub struct Pool {
    pub base_id: String,
    pub base_path: PathBuf,
    base: Arc<TensorMap>,
    records: Vec<ModelRecord>,
    index: HashMap<String, usize>,
}

impl Pool {
    pub fn new(base_id: &str, base_path: impl Into<PathBuf>, base: Arc<TensorMap>) -> Self {
        Self {
            base_id: base_id.to_string(),
            base_path: base_path.into(),
            base,
            records: Vec::new(),
            index: HashMap::new(),
        }
    }

    /// Loads the base and foundations from disk.
    pub fn load(base: &ModelSpec, foundations: &[ModelSpec]) -> Result<Self> {
        let mut pool = Pool::new(&base.id, &base.path, Arc::new(load_tensor_map(&base.path)?));
        for f in foundations {
            let w = Arc::new(load_tensor_map(&f.path)?);
            pool.add_foundation(&f.id, &f.path, w)?;
        }
        Ok(pool)
    }

    pub fn base(&self) -> &Arc<TensorMap> {
        &self.base
    }

    pub fn add_foundation(
        &mut self,
        id: &str,
        path: impl Into<PathBuf>,
        weights: Arc<TensorMap>,
    ) -> Result<()> {
        self.insert(ModelRecord {
            id: id.to_string(),
            path: path.into(),
            generation: 0,
            parents: Vec::new(),
            recipe: None,
            eval: None,
            atp: None,
            weights: Some(weights),
        })
    }

    fn insert(&mut self, record: ModelRecord) -> Result<()> {
        if self.index.contains_key(&record.id) || record.id == self.base_id {
            return Err(Error::NameCollision(record.id));
        }
        if let Some(w) = &record.weights {
            check_compatible(&[w, &self.base])?;
        }
        self.index.insert(record.id.clone(), self.records.len());
        self.records.push(record);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[ModelRecord] {
        &self.records
    }

    pub fn get(&self, id: &str) -> Option<&ModelRecord> {
        self.index.get(id).map(|&i| &self.records[i])
    }

    fn get_mut(&mut self, id: &str) -> Option<&mut ModelRecord> {
        self.index.get(id).map(|&i| &mut self.records[i])
    }

    fn require(&self, id: &str) -> Result<&ModelRecord> {
        self.get(id)
            .ok_or_else(|| Error::InvalidParam(format!("unknown model `{id}`")))
    }

    pub fn atp(&self, id: &str) -> Option<f64> {
        self.get(id).and_then(|r| r.atp)
    }

    /// The `k` best evaluated models by (ATP desc, id asc).
    pub fn top_k(&self, k: usize) -> Vec<String> {
        let mut ranked: Vec<(&str, f64)> = self
            .records
            .iter()
            .filter_map(|r| r.atp.map(|a| (r.id.as_str(), a)))
            .collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        ranked
            .into_iter()
            .take(k)
            .map(|(id, _)| id.to_string())
            .collect()
    }

    pub fn delta(&self, id: &str) -> Result<DeltaVector> {
        let rec = self.require(id)?;
        compute_delta(id, rec.weights()?, &self.base_id, Arc::clone(&self.base))
    }

    pub fn best_atp(&self) -> Option<f64> {
        self.records.iter().filter_map(|r| r.atp).reduce(f64::max)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    TopkGreedy,
    TopkGreedyKinship,
    Random,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopKind {
    TopkStable,
    HighKinship,
    MaxGenerations,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StopCriterion {
    pub kind: StopKind,
    /// PCC threshold for `high_kinship`.
    #[serde(default = "default_threshold")]
    pub kinship_threshold: f64,
}

fn default_threshold() -> f64 {
    DEFAULT_KINSHIP_THRESHOLD
}

impl Default for StopCriterion {
    fn default() -> Self {
        Self {
            kind: StopKind::TopkStable,
            kinship_threshold: DEFAULT_KINSHIP_THRESHOLD,
        }
    }
}

/// Operator and hyperparameters applied to every selected pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MergeTemplate {
    pub operator: MergeOperator,
    #[serde(default)]
    pub params: MergeParams,
}

impl Default for MergeTemplate {
    fn default() -> Self {
        Self {
            operator: MergeOperator::Slerp,
            params: MergeParams {
                t: Some(crate::merge::DEFAULT_SLERP_T),
                ..MergeParams::default()
            },
        }
    }
}

impl MergeTemplate {
    pub fn recipe(&self, parents: &[&str], base_id: &str) -> MergeRecipe {
        MergeRecipe {
            operator: self.operator,
            parents: parents.iter().map(|p| p.to_string()).collect(),
            base: self.operator.needs_base().then(|| base_id.to_string()),
            params: self.params.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategyConfig {
    pub kind: StrategyKind,
    pub k: usize,
    #[serde(default = "default_metric")]
    pub metric: SimMetric,
    #[serde(default)]
    pub merge: MergeTemplate,
    #[serde(default)]
    pub stop: StopCriterion,
    #[serde(default = "default_max_generations")]
    pub max_generations: u32,
    #[serde(default)]
    pub rng_seed: u64,
}

fn default_metric() -> SimMetric {
    SimMetric::Pcc
}

fn default_max_generations() -> u32 {
    DEFAULT_MAX_GENERATIONS
}

impl StrategyConfig {
    pub fn new(kind: StrategyKind, k: usize) -> Self {
        Self {
            kind,
            k,
            metric: SimMetric::Pcc,
            merge: MergeTemplate::default(),
            stop: StopCriterion::default(),
            max_generations: DEFAULT_MAX_GENERATIONS,
            rng_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidParam("k must be positive".into()));
        }
        if self.max_generations == 0 {
            return Err(Error::InvalidParam(
                "max_generations must be positive".into(),
            ));
        }
        let t = self.stop.kinship_threshold;
        if !(t > -1.0 && t <= 1.0) {
            return Err(Error::InvalidParam(format!(
                "kinship threshold must lie in (-1, 1], got {t}"
            )));
        }
        self.merge.recipe(&["a", "b"], "base").validate()
    }
}

/// True iff every unordered pair of `deltas` has PCC above `threshold`.
pub fn check_early_stop_deltas(deltas: &[DeltaVector], threshold: f64) -> Result<bool> {
    if deltas.len() < 2 {
        return Err(Error::InvalidParam(
            "early stop check needs at least 2 models".into(),
        ));
    }
    for i in 0..deltas.len() {
        for j in i + 1..deltas.len() {
            if sim_pair(&deltas[i], &deltas[j], SimMetric::Pcc)? <= threshold {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// True iff every pair among `top_models` has PCC kinship above `threshold`.
pub fn check_early_stop(
    top_models: &[(String, Arc<TensorMap>)],
    base: (&str, Arc<TensorMap>),
    threshold: f64,
) -> Result<bool> {
    let deltas = top_models
        .iter()
        .map(|(id, w)| compute_delta(id, Arc::clone(w), base.0, Arc::clone(&base.1)))
        .collect::<Result<Vec<_>>>()?;
    check_early_stop_deltas(&deltas, threshold)
}

#[derive(Clone, Debug)]
pub struct RunOptions {
    /// Where children are written as `<id>.safetensors`. Without it children
    /// stay in memory, which only works with evaluators that use weights.
    pub models_dir: Option<PathBuf>,
    pub workers: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            models_dir: None,
            workers: 1,
        }
    }
}

struct Child {
    record: ModelRecord,
    parent_kinship: Option<f64>,
    degenerate: bool,
}

/// A run in progress. The log stays readable after a failure.
pub struct Evolution<'a> {
    pub pool: Pool,
    cfg: StrategyConfig,
    evaluator: &'a dyn Evaluator,
    opts: RunOptions,
    threads: rayon::ThreadPool,
    rng: SplitMix64,
    log: EvolutionLog,
}

impl<'a> Evolution<'a> {
    pub fn new(
        pool: Pool,
        cfg: StrategyConfig,
        evaluator: &'a dyn Evaluator,
        opts: RunOptions,
    ) -> Result<Self> {
        cfg.validate()?;
        if pool.len() < 2 {
            return Err(Error::InvalidParam(format!(
                "evolution needs at least 2 foundation models, got {}",
                pool.len()
            )));
        }
        let threads = rayon::ThreadPoolBuilder::new()
            .num_threads(opts.workers.max(1))
            .build()
            .map_err(|e| Error::InvalidParam(format!("worker pool: {e}")))?;
        Ok(Self {
            rng: SplitMix64::new(cfg.rng_seed),
            pool,
            cfg,
            evaluator,
            opts,
            threads,
            log: EvolutionLog::default(),
        })
    }

    pub fn log(&self) -> &EvolutionLog {
        &self.log
    }

    pub fn into_parts(self) -> (Pool, EvolutionLog) {
        (self.pool, self.log)
    }

    /// Runs the configured strategy to completion.
    pub fn run(&mut self) -> Result<()> {
        let kind = self.cfg.kind;
        self.generation_zero()?;

        let mut generation = 1;
        self.log.push(LogEvent::GenerationStarted { generation });
        let pairs = match kind {
            StrategyKind::Random => self.random_pairs(),
            _ => {
                let ranked = self.pool.top_k(self.pool.len());
                all_pairs(&ranked)
            }
        };
        let mut last_gen = self.merge_and_evaluate(generation, &pairs, None)?;
        let mut s = self.update_top_k(generation);
        let mut s_prev: Option<Vec<String>> = None;

        loop {
            let stable = s_prev.as_ref() == Some(&s);
            if self.cfg.stop.kind != StopKind::MaxGenerations && stable {
                self.stop(generation, StopReason::TopkStable);
                break;
            }
            if self.cfg.stop.kind == StopKind::HighKinship && self.high_kinship(generation, &s) {
                self.stop(generation, StopReason::HighKinship);
                break;
            }
            if generation >= self.cfg.max_generations {
                self.stop(generation, StopReason::MaxGenerations);
                break;
            }

            generation += 1;
            self.log.push(LogEvent::GenerationStarted { generation });
            let pairs = match kind {
                StrategyKind::Random => self.random_pairs(),
                _ => all_pairs(&s),
            };
            let exploration = if kind == StrategyKind::TopkGreedyKinship {
                Some((s.as_slice(), last_gen.as_slice()))
            } else {
                None
            };
            let children = self.merge_and_evaluate(generation, &pairs, exploration)?;
            last_gen = children;
            s_prev = Some(s);
            s = self.update_top_k(generation);
        }
        Ok(())
    }

    fn stop(&mut self, generation: u32, reason: StopReason) {
        self.log.push(LogEvent::Stopped { generation, reason });
    }

    fn warn(&mut self, generation: u32, message: String) {
        self.log.push(LogEvent::Warning {
            generation,
            message,
        });
    }

    fn high_kinship(&mut self, generation: u32, s: &[String]) -> bool {
        if s.len() < 2 {
            return false;
        }
        let deltas: Result<Vec<DeltaVector>> = s.iter().map(|id| self.pool.delta(id)).collect();
        match deltas.and_then(|d| check_early_stop_deltas(&d, self.cfg.stop.kinship_threshold)) {
            Ok(v) => v,
            Err(e) => {
                self.warn(generation, format!("early stop check skipped: {e}"));
                false
            }
        }
    }

    fn generation_zero(&mut self) -> Result<()> {
        self.log.push(LogEvent::GenerationStarted { generation: 0 });
        let ids: Vec<String> = self.pool.records.iter().map(|r| r.id.clone()).collect();
        for id in &ids {
            self.log.push(LogEvent::FoundationAdded { id: id.clone() });
        }
        let pending: Vec<String> = ids
            .iter()
            .filter(|id| self.pool.atp(id).is_none())
            .cloned()
            .collect();
        self.evaluate_ids(&pending)?;
        for id in &ids {
            self.log_evaluation(id);
        }
        Ok(())
    }

    fn log_evaluation(&mut self, id: &str) {
        let rec = self.pool.get(id).expect("evaluated model is pooled");
        self.log.push(LogEvent::Evaluated {
            id: id.to_string(),
            generation: rec.generation,
            atp: rec.atp.expect("model evaluated"),
            scores: rec
                .eval
                .as_ref()
                .map(|e| e.task_scores.clone())
                .unwrap_or_default(),
        });
    }

    fn evaluate_ids(&mut self, ids: &[String]) -> Result<()> {
        let evaluator = self.evaluator;
        let jobs: Vec<(String, PathBuf, Arc<TensorMap>)> = ids
            .iter()
            .map(|id| {
                let r = self.pool.require(id)?;
                Ok((id.clone(), r.path.clone(), r.weights()?))
            })
            .collect::<Result<_>>()?;
        let results: Vec<Result<EvalResult>> = self.threads.install(|| {
            jobs.par_iter()
                .map(|(id, path, w)| {
                    let r = evaluator.evaluate(id, path, w)?;
                    evaluator.tasks().validate(&r)?;
                    Ok(r)
                })
                .collect()
        });
        for ((id, _, _), r) in jobs.iter().zip(results) {
            let r = r?;
            let atp = average_task_performance(&r)?;
            let rec = self.pool.get_mut(id).expect("job ids are pooled");
            rec.atp = Some(atp);
            rec.eval = Some(r);
        }
        Ok(())
    }

    fn update_top_k(&mut self, generation: u32) -> Vec<String> {
        let s = self.pool.top_k(self.cfg.k);
        self.log.push(LogEvent::TopkUpdated {
            generation,
            ids: s.clone(),
        });
        s
    }

    /// Draws `min(k, #pairs)` distinct pairs from the whole pool, in
    /// insertion order, by a partial Fisher-Yates shuffle.
    fn random_pairs(&mut self) -> Vec<(String, String)> {
        let ids: Vec<String> = self.pool.records.iter().map(|r| r.id.clone()).collect();
        let mut all = all_pairs(&ids);
        let n = self.cfg.k.min(all.len());
        for m in 0..n {
            let j = m + self.rng.below((all.len() - m) as u64) as usize;
            all.swap(m, j);
        }
        all.truncate(n);
        all
    }

    fn exploration_partner(&self, best: &str, candidates: &[String]) -> Result<(String, f64)> {
        let db = self.pool.delta(best)?;
        let scored = candidates
            .iter()
            .map(|c| {
                Ok((
                    c.clone(),
                    sim_pair(&db, &self.pool.delta(c)?, self.cfg.metric)?,
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        least_related(self.cfg.metric, &scored)
            .ok_or_else(|| Error::InvalidParam("no exploration candidates".into()))
    }

    fn merge_and_evaluate(
        &mut self,
        generation: u32,
        pairs: &[(String, String)],
        exploration: Option<(&[String], &[String])>,
    ) -> Result<Vec<String>> {
        let jobs: Vec<(String, [String; 2])> = pairs
            .iter()
            .enumerate()
            .map(|(i, (a, b))| {
                (
                    format!("model-{generation}-{}", i + 1),
                    [a.clone(), b.clone()],
                )
            })
            .collect();
        let built = self.build_children(generation, &jobs);
        let select = |log: &mut EvolutionLog, parents: &[String; 2]| {
            log.push(LogEvent::PairSelected {
                generation,
                parents: parents.clone(),
            })
        };
        let mut children = match built {
            Ok(children) => children,
            Err(e) => {
                for (_, parents) in &jobs {
                    select(&mut self.log, parents);
                }
                return Err(e);
            }
        };
        let greedy_count = jobs.len();
        for ((_, parents), c) in jobs.iter().zip(&children) {
            select(&mut self.log, parents);
            self.log_merge(generation, c);
        }

        if let Some((s_prev, last_gen)) = exploration {
            let best = s_prev[0].clone();
            let mut candidates: Vec<String> = last_gen
                .iter()
                .filter(|c| !s_prev.contains(c))
                .cloned()
                .collect();
            candidates.sort();
            if candidates.is_empty() {
                self.warn(
                    generation,
                    "exploration skipped: no candidates from the previous generation outside the top-k set".into(),
                );
            } else {
                match self.exploration_partner(&best, &candidates) {
                    Ok((partner, kinship)) => {
                        self.log.push(LogEvent::ExplorationMerge {
                            generation,
                            best: best.clone(),
                            partner: partner.clone(),
                            kinship,
                        });
                        let id = format!("model-{generation}-{}", greedy_count + 1);
                        let mut extra =
                            self.build_children(generation, &[(id, [best, partner])])?;
                        self.log_merge(generation, &extra[0]);
                        children.append(&mut extra);
                    }
                    Err(e) => self.warn(generation, format!("exploration skipped: {e}")),
                }
            }
        }

        let ids: Vec<String> = children.iter().map(|c| c.record.id.clone()).collect();
        for c in children {
            self.pool.insert(c.record)?;
        }
        self.evaluate_ids(&ids)?;
        for id in &ids {
            self.log_evaluation(id);
        }
        Ok(ids)
    }

    fn log_merge(&mut self, generation: u32, c: &Child) {
        self.log.push(LogEvent::Merged {
            generation,
            child: c.record.id.clone(),
            parents: c.record.parents.clone(),
            recipe: c.record.recipe.clone().expect("children carry recipes"),
            parent_kinship: c.parent_kinship,
            degenerate: c.degenerate,
        });
    }

    fn build_children(
        &self,
        generation: u32,
        jobs: &[(String, [String; 2])],
    ) -> Result<Vec<Child>> {
        let pool = &self.pool;
        let template = &self.cfg.merge;
        let metric = self.cfg.metric;
        let models_dir = self.opts.models_dir.as_deref();
        if let Some(dir) = models_dir {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        self.threads.install(|| {
            jobs.par_iter()
                .map(|(id, [a, b])| {
                    let recipe = template.recipe(&[a, b], &pool.base_id);
                    build_child(pool, id, generation, recipe, metric, models_dir)
                })
                .collect()
        })
    }
}

fn build_child(
    pool: &Pool,
    id: &str,
    generation: u32,
    recipe: MergeRecipe,
    metric: SimMetric,
    models_dir: Option<&Path>,
) -> Result<Child> {
    let fail = |e: Error, recipe: &MergeRecipe| Error::MergeFailed {
        recipe: serde_json::to_string(recipe).unwrap_or_default(),
        source: Box::new(e),
    };
    let parents: Vec<Arc<TensorMap>> = recipe
        .parents
        .iter()
        .map(|p| pool.require(p)?.weights())
        .collect::<Result<_>>()
        .map_err(|e| fail(e, &recipe))?;
    let refs: Vec<&TensorMap> = parents.iter().map(|p| p.as_ref()).collect();
    let merged = apply_recipe(&recipe, &refs, Some(pool.base())).map_err(|e| fail(e, &recipe))?;
    let degenerate = refs
        .iter()
        .any(|p| max_abs_diff(p, &merged) < DEGENERATE_TOLERANCE);

    let parent_kinship = {
        let d: Result<Vec<DeltaVector>> = recipe.parents.iter().map(|p| pool.delta(p)).collect();
        d.and_then(|d| sim_pair(&d[0], &d[1], metric)).ok()
    };

    let (path, weights) = match models_dir {
        Some(dir) => {
            let path = dir.join(format!("{id}.safetensors"));
            save_tensor_map(&merged, &path)?;
            (path.clone(), Arc::new(load_tensor_map(&path)?))
        }
        None => (PathBuf::new(), Arc::new(merged)),
    };
    Ok(Child {
        record: ModelRecord {
            id: id.to_string(),
            path,
            generation,
            parents: recipe.parents.clone(),
            recipe: Some(recipe),
            eval: None,
            atp: None,
            weights: Some(weights),
        },
        parent_kinship,
        degenerate,
    })
}

fn max_abs_diff(a: &TensorMap, b: &TensorMap) -> f32 {
    let mut m = 0.0f32;
    for idx in 0..a.len() {
        for (x, y) in a.values(idx).iter().zip(b.values(idx)) {
            m = m.max((x - y).abs());
        }
    }
    m
}

/// The candidate least related under `metric`: lowest similarity for
/// pcc/cs, largest distance for ed. Ties go to the lowest id.
pub fn least_related(metric: SimMetric, scored: &[(String, f64)]) -> Option<(String, f64)> {
    let mut chosen: Option<&(String, f64)> = None;
    for cand in scored {
        chosen = match chosen {
            None => Some(cand),
            Some(cur) => {
                let less = metric.more_related(cur.1, cand.1);
                let tie = cur.1 == cand.1 && cand.0 < cur.0;
                Some(if less || tie { cand } else { cur })
            }
        };
    }
    chosen.cloned()
}

fn all_pairs(ids: &[String]) -> Vec<(String, String)> {
    let mut out = Vec::new();
    for i in 0..ids.len() {
        for j in i + 1..ids.len() {
            out.push((ids[i].clone(), ids[j].clone()));
        }
    }
    out
}

fn run_kind(
    kind: StrategyKind,
    pool: Pool,
    cfg: &StrategyConfig,
    evaluator: &dyn Evaluator,
    opts: &RunOptions,
) -> Result<(Pool, EvolutionLog)> {
    let cfg = StrategyConfig {
        kind,
        ..cfg.clone()
    };
    let mut evo = Evolution::new(pool, cfg, evaluator, opts.clone())?;
    evo.run()?;
    Ok(evo.into_parts())
}

/// Top-k greedy: merge every pair of the current top-k set until it stops
/// changing.
pub fn run_topk_greedy(
    pool: Pool,
    cfg: &StrategyConfig,
    evaluator: &dyn Evaluator,
    opts: &RunOptions,
) -> Result<(Pool, EvolutionLog)> {
    run_kind(StrategyKind::TopkGreedy, pool, cfg, evaluator, opts)
}

/// Top-k greedy plus one exploration merge per generation between the best
/// model and its least related recent peer.
pub fn run_topk_greedy_kinship(
    pool: Pool,
    cfg: &StrategyConfig,
    evaluator: &dyn Evaluator,
    opts: &RunOptions,
) -> Result<(Pool, EvolutionLog)> {
    run_kind(StrategyKind::TopkGreedyKinship, pool, cfg, evaluator, opts)
}

/// Merges `k` random distinct pairs drawn from the whole pool per generation.
pub fn run_random(
    pool: Pool,
    cfg: &StrategyConfig,
    evaluator: &dyn Evaluator,
    opts: &RunOptions,
) -> Result<(Pool, EvolutionLog)> {
    run_kind(StrategyKind::Random, pool, cfg, evaluator, opts)
}
