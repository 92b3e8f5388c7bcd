use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{
    Evaluator, ExternalEvaluator, SyntheticSpec, SyntheticTask, DEFAULT_TIMEOUT_SECS,
};
use crate::evolution::log::EvolutionLog;
use crate::evolution::report::report_csv;
use crate::evolution::tree::FamilyTree;
use crate::evolution::{Evolution, Pool, RunOptions, StrategyConfig};
use crate::metrics::TaskGroup;
use crate::tensor_store::load_tensor_map;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub id: String,
    pub path: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticTaskConfig {
    pub name: String,
    pub target: PathBuf,
    pub sigma: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EvaluatorConfig {
    Synthetic {
        tasks: Vec<SyntheticTaskConfig>,
    },
    External {
        /// Argument vector; `{model}` is replaced by the model path.
        command: Vec<String>,
        #[serde(default = "default_timeout")]
        timeout_secs: u64,
        tasks: Vec<String>,
    },
}

fn default_timeout() -> u64 {
    DEFAULT_TIMEOUT_SECS
}

fn default_workers() -> usize {
    1
}

/// Everything `evolve` needs. Relative paths are resolved against the
/// directory of the config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub base: ModelSpec,
    pub foundations: Vec<ModelSpec>,
    pub strategy: StrategyConfig,
    pub evaluator: EvaluatorConfig,
    pub output_dir: PathBuf,
    #[serde(default = "default_workers")]
    pub workers: usize,
}

impl RunConfig {
    pub fn resolve_paths(&mut self, root: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = root.join(&*p);
            }
        };
        fix(&mut self.base.path);
        for f in &mut self.foundations {
            fix(&mut f.path);
        }
        fix(&mut self.output_dir);
        match &mut self.evaluator {
            EvaluatorConfig::Synthetic { tasks } => {
                for t in tasks {
                    fix(&mut t.target);
                }
            }
            EvaluatorConfig::External { command, .. } => {
                if let Some(program) = command.first_mut() {
                    let p = Path::new(program.as_str());
                    if p.is_relative() && p.components().count() > 1 {
                        *program = root.join(p).to_string_lossy().into_owned();
                    }
                }
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.strategy.validate()?;
        if self.foundations.len() < 2 {
            return Err(Error::Validation(format!(
                "at least 2 foundation models are required, got {}",
                self.foundations.len()
            )));
        }
        if self.workers == 0 {
            return Err(Error::Validation("workers must be positive".into()));
        }
        Ok(())
    }

    pub fn build_evaluator(&self) -> Result<Box<dyn Evaluator>> {
        match &self.evaluator {
            EvaluatorConfig::Synthetic { tasks } => {
                let tasks = tasks
                    .iter()
                    .map(|t| {
                        Ok(SyntheticTask {
                            name: t.name.clone(),
                            target: Arc::new(load_tensor_map(&t.target)?),
                            sigma: t.sigma,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(Box::new(SyntheticSpec::new(tasks)?))
            }
            EvaluatorConfig::External {
                command,
                timeout_secs,
                tasks,
            } => Ok(Box::new(ExternalEvaluator::new(
                command.clone(),
                Duration::from_secs(*timeout_secs),
                TaskGroup::new(tasks.iter().cloned())?,
            )?)),
        }
    }
}

pub fn load_run_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut cfg: RunConfig = serde_json::from_str(&text)
        .map_err(|e| Error::Validation(format!("run config {}: {e}", path.display())))?;
    let root = path.parent().unwrap_or(Path::new("."));
    cfg.resolve_paths(root);
    cfg.validate()?;
    Ok(cfg)
}

pub struct RunOutcome {
    pub log: EvolutionLog,
    pub pool: Pool,
    pub output_dir: PathBuf,
}

/// Runs a configured evolution and writes `log.jsonl`, `tree.json`,
/// `tree.dot`, `report.csv` and `models/` under the output directory. The
/// log is written even if the run fails.
pub fn run_from_config(cfg: &RunConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    let out = &cfg.output_dir;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let evaluator = cfg.build_evaluator()?;
    let pool = Pool::load(&cfg.base, &cfg.foundations)?;
    let opts = RunOptions {
        models_dir: Some(out.join("models")),
        workers: cfg.workers,
    };
    let mut evo = Evolution::new(pool, cfg.strategy.clone(), evaluator.as_ref(), opts)?;
    let result = evo.run();
    let (pool, log) = evo.into_parts();
    log.write(&out.join("log.jsonl"))?;
    result?;

    let tree = FamilyTree::from_log(&log)?;
    write(&out.join("tree.json"), &tree.to_json())?;
    write(&out.join("tree.dot"), &tree.to_dot())?;
    write(&out.join("report.csv"), &report_csv(&pool, &log)?)?;
    Ok(RunOutcome {
        log,
        pool,
        output_dir: out.clone(),
    })
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
