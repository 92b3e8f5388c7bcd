//! Model scoring: a subprocess protocol for real benchmark harnesses and a
//! synthetic Gaussian-distance evaluator for desk-scale runs.
//!
//! An external evaluator is any command that, given a model path, prints
//! `{"tasks": {"<name>": <score>, ...}}` on stdout and exits 0.

use std::collections::{BTreeMap, HashMap};
use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use sha2::{Digest, Sha256};
use wait_timeout::ChildExt;

use crate::error::{Error, Result};
use crate::metrics::{EvalResult, TaskGroup};
use crate::tensor_store::{check_compatible, TensorMap};

/// Directory for the on-disk evaluation cache.
pub const CACHE_DIR_ENV: &str = "MERGEKIN_CACHE_DIR";
pub const DEFAULT_TIMEOUT_SECS: u64 = 3600;
pub const MODEL_PLACEHOLDER: &str = "{model}";

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("evaluator command must contain the `{MODEL_PLACEHOLDER}` placeholder: {0:?}")]
    MissingPlaceholder(Vec<String>),

    #[error("failed to start evaluator `{program}`: {source}")]
    Spawn {
        program: String,
        #[source]
        source: std::io::Error,
    },

    #[error("evaluator for `{model}` exited with {status}; stderr: {stderr}")]
    NonZeroExit {
        model: String,
        status: String,
        stderr: String,
    },

    #[error("evaluator for `{model}` timed out after {secs}s; stderr: {stderr}")]
    Timeout {
        model: String,
        secs: u64,
        stderr: String,
    },

    #[error("evaluator for `{model}` printed malformed output ({detail}); stdout: {stdout}; stderr: {stderr}")]
    MalformedOutput {
        model: String,
        detail: String,
        stdout: String,
        stderr: String,
    },

    #[error("evaluator for `{model}` reported tasks {got:?}, expected {expected:?}")]
    TaskMismatch {
        model: String,
        expected: Vec<String>,
        got: Vec<String>,
    },

    #[error("evaluator for `{model}` reported score {score} for task `{task}`, outside [0, 100]")]
    ScoreOutOfRange {
        model: String,
        task: String,
        score: f64,
    },
}

/// Anything that can score a model on a fixed task group.
pub trait Evaluator: Send + Sync {
    fn tasks(&self) -> &TaskGroup;

    /// Scores the model stored at `path` whose weights are `weights`.
    fn evaluate(&self, model_id: &str, path: &Path, weights: &TensorMap) -> Result<EvalResult>;
}

#[derive(Clone, Debug)]
pub struct SyntheticTask {
    pub name: String,
    pub target: Arc<TensorMap>,
    pub sigma: f64,
}

/// Scores `100 · exp(−‖θ − t_j‖² / σ_j²)` per task.
#[derive(Clone, Debug)]
pub struct SyntheticSpec {
    pub tasks: Vec<SyntheticTask>,
    group: TaskGroup,
}

impl SyntheticSpec {
    pub fn new(tasks: Vec<SyntheticTask>) -> Result<Self> {
        let group = TaskGroup::new(tasks.iter().map(|t| t.name.clone()))?;
        for t in &tasks {
            if !(t.sigma.is_finite() && t.sigma > 0.0) {
                return Err(Error::InvalidParam(format!(
                    "sigma for task `{}` must be positive, got {}",
                    t.name, t.sigma
                )));
            }
        }
        let targets: Vec<&TensorMap> = tasks.iter().map(|t| t.target.as_ref()).collect();
        if targets.len() >= 2 {
            check_compatible(&targets)?;
        }
        Ok(Self { tasks, group })
    }
}

fn squared_distance(a: &TensorMap, b: &TensorMap) -> f64 {
    let mut total = 0.0;
    for idx in 0..a.len() {
        let x = a.values(idx);
        let y = b.values(idx);
        for (p, q) in x.iter().zip(&y) {
            let d = *p as f64 - *q as f64;
            total += d * d;
        }
    }
    total
}

pub fn evaluate_synthetic(
    model_id: &str,
    model: &TensorMap,
    spec: &SyntheticSpec,
) -> Result<EvalResult> {
    let mut scores = BTreeMap::new();
    for t in &spec.tasks {
        check_compatible(&[model, &t.target])?;
        let d2 = squared_distance(model, &t.target);
        let s = (100.0 * (-d2 / (t.sigma * t.sigma)).exp()).clamp(0.0, 100.0);
        scores.insert(t.name.clone(), s);
    }
    Ok(EvalResult {
        model_id: model_id.to_string(),
        task_scores: scores,
        timestamp: None,
    })
}

impl Evaluator for SyntheticSpec {
    fn tasks(&self) -> &TaskGroup {
        &self.group
    }

    fn evaluate(&self, model_id: &str, _path: &Path, weights: &TensorMap) -> Result<EvalResult> {
        evaluate_synthetic(model_id, weights, self)
    }
}

type Scores = BTreeMap<String, f64>;

/// Subprocess evaluator with a content-addressed cache.
///
/// Results are memoized per SHA-256 of the model file, in memory and, when a
/// cache directory is set, on disk. Concurrent requests for the same content
/// wait for a single subprocess.
pub struct ExternalEvaluator {
    command: Vec<String>,
    timeout: Duration,
    group: TaskGroup,
    cache_dir: Option<PathBuf>,
    memo: Mutex<HashMap<String, Arc<Mutex<Option<Scores>>>>>,
    invocations: AtomicUsize,
}

impl ExternalEvaluator {
    pub fn new(command: Vec<String>, timeout: Duration, group: TaskGroup) -> Result<Self> {
        if command.is_empty() || !command.iter().any(|a| a.contains(MODEL_PLACEHOLDER)) {
            return Err(EvalError::MissingPlaceholder(command).into());
        }
        Ok(Self {
            command,
            timeout,
            group,
            cache_dir: std::env::var_os(CACHE_DIR_ENV).map(PathBuf::from),
            memo: Mutex::new(HashMap::new()),
            invocations: AtomicUsize::new(0),
        })
    }

    pub fn with_cache_dir(mut self, dir: Option<PathBuf>) -> Self {
        self.cache_dir = dir;
        self
    }

    /// Number of subprocesses started so far.
    pub fn invocations(&self) -> usize {
        self.invocations.load(Ordering::SeqCst)
    }

    pub fn evaluate_path(&self, model_id: &str, path: &Path) -> Result<EvalResult> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let hash = format!("{:x}", Sha256::digest(&bytes));
        let slot = {
            let mut memo = self.memo.lock().expect("cache lock poisoned");
            Arc::clone(memo.entry(hash.clone()).or_default())
        };
        let mut slot = slot.lock().expect("cache slot poisoned");
        let scores = match slot.as_ref() {
            Some(s) => s.clone(),
            None => {
                let s = match self.read_disk_cache(&hash) {
                    Some(s) => s,
                    None => {
                        let s = self.run(model_id, path)?;
                        self.write_disk_cache(&hash, &s);
                        s
                    }
                };
                *slot = Some(s.clone());
                s
            }
        };
        let timestamp = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .ok();
        Ok(EvalResult {
            model_id: model_id.to_string(),
            task_scores: scores,
            timestamp,
        })
    }

    fn cache_file(&self, hash: &str) -> Option<PathBuf> {
        self.cache_dir
            .as_ref()
            .map(|d| d.join(format!("{hash}.json")))
    }

    fn read_disk_cache(&self, hash: &str) -> Option<Scores> {
        let text = std::fs::read_to_string(self.cache_file(hash)?).ok()?;
        let scores = parse_tasks(&text).ok()?;
        let valid = scores.len() == self.group.tasks.len()
            && self.group.tasks.iter().all(|t| scores.contains_key(t))
            && scores.values().all(|s| (0.0..=100.0).contains(s));
        valid.then_some(scores)
    }

    fn write_disk_cache(&self, hash: &str, scores: &Scores) {
        let Some(file) = self.cache_file(hash) else {
            return;
        };
        let body = serde_json::json!({ "tasks": scores }).to_string();
        if let Some(dir) = file.parent() {
            let _ = std::fs::create_dir_all(dir);
        }
        let tmp = file.with_extension("json.tmp");
        if std::fs::write(&tmp, body).is_ok() {
            let _ = std::fs::rename(&tmp, &file);
        }
    }

    fn run(&self, model_id: &str, path: &Path) -> Result<Scores> {
        let path_str = path.to_string_lossy();
        let argv: Vec<String> = self
            .command
            .iter()
            .map(|a| a.replace(MODEL_PLACEHOLDER, &path_str))
            .collect();
        self.invocations.fetch_add(1, Ordering::SeqCst);
        let mut child = Command::new(&argv[0])
            .args(&argv[1..])
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|source| EvalError::Spawn {
                program: argv[0].clone(),
                source,
            })?;
        let out = drain(child.stdout.take().expect("stdout piped"));
        let err = drain(child.stderr.take().expect("stderr piped"));
        let status = match child.wait_timeout(self.timeout) {
            Ok(Some(status)) => status,
            Ok(None) => {
                let _ = child.kill();
                let _ = child.wait();
                // Grandchildren may still hold the pipes open, so the readers
                // are not joined here.
                return Err(EvalError::Timeout {
                    model: model_id.to_string(),
                    secs: self.timeout.as_secs(),
                    stderr: String::new(),
                }
                .into());
            }
            Err(e) => return Err(Error::io(&argv[0], e)),
        };
        let stdout = out.join().unwrap_or_default();
        let stderr = err.join().unwrap_or_default();
        if !status.success() {
            return Err(EvalError::NonZeroExit {
                model: model_id.to_string(),
                status: status.to_string(),
                stderr: stderr.trim().to_string(),
            }
            .into());
        }
        let scores = parse_tasks(&stdout).map_err(|detail| EvalError::MalformedOutput {
            model: model_id.to_string(),
            detail,
            stdout: stdout.trim().to_string(),
            stderr: stderr.trim().to_string(),
        })?;
        self.check(model_id, &scores)?;
        Ok(scores)
    }

    fn check(&self, model_id: &str, scores: &Scores) -> Result<()> {
        let mut expected = self.group.tasks.clone();
        expected.sort();
        let got: Vec<String> = scores.keys().cloned().collect();
        if got != expected {
            return Err(EvalError::TaskMismatch {
                model: model_id.to_string(),
                expected,
                got,
            }
            .into());
        }
        if let Some((task, &score)) = scores
            .iter()
            .find(|(_, s)| !(s.is_finite() && (0.0..=100.0).contains(*s)))
        {
            return Err(EvalError::ScoreOutOfRange {
                model: model_id.to_string(),
                task: task.clone(),
                score,
            }
            .into());
        }
        Ok(())
    }
}

fn drain<R: Read + Send + 'static>(mut r: R) -> thread::JoinHandle<String> {
    thread::spawn(move || {
        let mut buf = Vec::new();
        let _ = r.read_to_end(&mut buf);
        String::from_utf8_lossy(&buf).into_owned()
    })
}

/// Parses `{"tasks": {name: number, ...}}`.
fn parse_tasks(text: &str) -> std::result::Result<Scores, String> {
    let value: serde_json::Value =
        serde_json::from_str(text.trim()).map_err(|e| format!("invalid JSON: {e}"))?;
    let tasks = value
        .get("tasks")
        .and_then(|t| t.as_object())
        .ok_or_else(|| "missing object field `tasks`".to_string())?;
    tasks
        .iter()
        .map(|(k, v)| {
            v.as_f64()
                .map(|s| (k.clone(), s))
                .ok_or_else(|| format!("score for `{k}` is not a number"))
        })
        .collect()
}

impl Evaluator for ExternalEvaluator {
    fn tasks(&self) -> &TaskGroup {
        &self.group
    }

    fn evaluate(&self, model_id: &str, path: &Path, _weights: &TensorMap) -> Result<EvalResult> {
        self.evaluate_path(model_id, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::average_task_performance;
    use crate::tensor_store::{Dtype, TensorMapBuilder};

    fn map(v: &[f32]) -> Arc<TensorMap> {
        Arc::new(
            TensorMapBuilder::new()
                .insert("w", Dtype::F32, vec![v.len()], v)
                .unwrap()
                .build()
                .unwrap(),
        )
    }

    fn task(name: &str, v: &[f32], sigma: f64) -> SyntheticTask {
        SyntheticTask {
            name: name.into(),
            target: map(v),
            sigma,
        }
    }

    #[test]
    fn synthetic_examples() {
        let spec = SyntheticSpec::new(vec![
            task("a", &[0.0, 0.0], 1.0),
            task("b", &[1.0, 0.0], 1.0),
        ])
        .unwrap();
        let at_a = evaluate_synthetic("m", &map(&[0.0, 0.0]), &spec).unwrap();
        assert_eq!(at_a.task_scores["a"], 100.0);
        let mid = evaluate_synthetic("m", &map(&[0.5, 0.0]), &spec).unwrap();
        let want = 100.0 * (-0.25f64).exp();
        assert!((mid.task_scores["a"] - want).abs() < 1e-12);
        assert!((mid.task_scores["b"] - want).abs() < 1e-12);
        assert!((want - 77.88).abs() < 0.005);
        let far = evaluate_synthetic("m", &map(&[1e18, 0.0]), &spec).unwrap();
        assert_eq!(far.task_scores["a"], 0.0);
        assert!(evaluate_synthetic("m", &map(&[0.0]), &spec).is_err());
    }

    #[test]
    fn synthetic_spec_validation() {
        assert!(SyntheticSpec::new(vec![task("a", &[0.0], 0.0)]).is_err());
        assert!(SyntheticSpec::new(vec![task("a", &[0.0], 1.0), task("a", &[0.0], 1.0)]).is_err());
        assert!(
            SyntheticSpec::new(vec![task("a", &[0.0], 1.0), task("b", &[0.0, 1.0], 1.0)]).is_err()
        );
    }

    #[test]
    fn parse_protocol() {
        let s = parse_tasks(r#" {"tasks":{"a":50,"b":60.5}} "#).unwrap();
        assert_eq!(s["b"], 60.5);
        assert!(parse_tasks("nope").is_err());
        assert!(parse_tasks(r#"{"scores":{}}"#).is_err());
        assert!(parse_tasks(r#"{"tasks":{"a":"x"}}"#).is_err());
    }

    #[cfg(unix)]
    mod subprocess {
        use super::*;
        use std::os::unix::fs::PermissionsExt;

        fn script(dir: &Path, name: &str, body: &str) -> String {
            let p = dir.join(name);
            std::fs::write(&p, format!("#!/bin/sh\n{body}\n")).unwrap();
            std::fs::set_permissions(&p, std::fs::Permissions::from_mode(0o755)).unwrap();
            p.to_string_lossy().into_owned()
        }

        fn setup(body: &str) -> (tempfile::TempDir, ExternalEvaluator, PathBuf) {
            let dir = tempfile::tempdir().unwrap();
            let s = script(dir.path(), "eval.sh", body);
            let model = dir.path().join("m.safetensors");
            std::fs::write(&model, b"weights").unwrap();
            let ev = ExternalEvaluator::new(
                vec![s, "{model}".into()],
                Duration::from_secs(20),
                TaskGroup::new(["a", "b"]).unwrap(),
            )
            .unwrap()
            .with_cache_dir(None);
            (dir, ev, model)
        }

        #[test]
        fn round_trip_and_cache() {
            let (dir, ev, model) = setup(r#"echo '{"tasks":{"a":50,"b":60}}'"#);
            let r = ev.evaluate_path("m", &model).unwrap();
            assert_eq!(average_task_performance(&r).unwrap(), 55.0);
            let copy = dir.path().join("copy.safetensors");
            std::fs::copy(&model, &copy).unwrap();
            ev.evaluate_path("copy", &copy).unwrap();
            assert_eq!(ev.invocations(), 1);
        }

        #[test]
        fn failure_modes_are_distinct() {
            let (_d, ev, m) = setup("echo broken >&2; exit 1");
            match ev.evaluate_path("m", &m) {
                Err(Error::Evaluator(EvalError::NonZeroExit { stderr, .. })) => {
                    assert_eq!(stderr, "broken")
                }
                other => panic!("{other:?}"),
            }
            let (_d, ev, m) = setup(r#"echo '{"tasks":{"a":101,"b":60}}'"#);
            assert!(matches!(
                ev.evaluate_path("m", &m),
                Err(Error::Evaluator(EvalError::ScoreOutOfRange { .. }))
            ));
            let (_d, ev, m) = setup(r#"echo '{"tasks":{"a":1}}'"#);
            assert!(matches!(
                ev.evaluate_path("m", &m),
                Err(Error::Evaluator(EvalError::TaskMismatch { .. }))
            ));
            let (_d, ev, m) = setup("echo hello");
            assert!(matches!(
                ev.evaluate_path("m", &m),
                Err(Error::Evaluator(EvalError::MalformedOutput { .. }))
            ));
        }

        #[test]
        fn timeout_fails_instead_of_scoring() {
            let (_d, ev, m) = setup("exec sleep 30");
            let ev = ExternalEvaluator {
                timeout: Duration::from_millis(200),
                ..ev
            };
            assert!(matches!(
                ev.evaluate_path("m", &m),
                Err(Error::Evaluator(EvalError::Timeout { .. }))
            ));
        }

        #[test]
        fn disk_cache_survives_new_evaluator() {
            let (dir, ev, m) = setup(r#"echo '{"tasks":{"a":10,"b":20}}'"#);
            let cache = dir.path().join("cache");
            let ev = ev.with_cache_dir(Some(cache.clone()));
            ev.evaluate_path("m", &m).unwrap();
            let (_d2, ev2, _) = setup("exit 1");
            let ev2 = ev2.with_cache_dir(Some(cache));
            let r = ev2.evaluate_path("m", &m).unwrap();
            assert_eq!(r.task_scores["b"], 20.0);
            assert_eq!(ev2.invocations(), 0);
        }

        #[test]
        fn placeholder_required() {
            assert!(ExternalEvaluator::new(
                vec!["echo".into()],
                Duration::from_secs(1),
                TaskGroup::new(["a"]).unwrap()
            )
            .is_err());
        }
    }
}
