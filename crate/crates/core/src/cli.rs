//! Command-line front end. `cli_main` returns the process exit code:
//! 0 success, 1 usage error, 2 data or validation error, 3 evaluator failure.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::evolution::{
    export_family_tree, load_run_config, run_from_config, EvolutionLog, TreeFormat,
};
use crate::kinship::{compute_delta, kinship_group, kinship_matrix, DeltaVector, SimMetric};
use crate::merge::{apply_recipe, MergeRecipe};
use crate::metrics::{
    atpd, average_task_performance, correlation_row, merge_gain, CorrelationRow, EvalResult,
};
use crate::tensor_store::{load_tensor_map, save_tensor_map, TensorMap};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_EVALUATOR: i32 = 3;

#[derive(Parser, Debug)]
#[command(
    name = "mergekin",
    version,
    about = "Model merging and kinship analysis over safetensors checkpoints"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Merge checkpoints according to a JSON recipe.
    Merge {
        /// Recipe file: {"operator", "parents", "base", "params"}.
        #[arg(long)]
        recipe: PathBuf,
        /// Base checkpoint, required by ties and dare_ties.
        #[arg(long)]
        base: Option<PathBuf>,
        #[arg(long, short)]
        out: PathBuf,
        /// Parent checkpoints in the order the recipe lists them.
        #[arg(required = true)]
        models: Vec<PathBuf>,
    },
    /// Similarity of two models, or mean pairwise similarity of a group.
    Kinship {
        #[arg(long, default_value = "pcc")]
        metric: SimMetric,
        #[arg(long)]
        base: PathBuf,
        #[arg(long, value_enum, default_value_t = TextOrJson::Text)]
        format: TextOrJson,
        #[arg(required = true, num_args = 2..)]
        models: Vec<PathBuf>,
    },
    /// Pairwise similarity matrix for a group of models.
    Matrix {
        #[arg(long, default_value = "pcc")]
        metric: SimMetric,
        #[arg(long)]
        base: PathBuf,
        #[arg(long, value_enum, default_value_t = CsvOrJson::Csv)]
        format: CsvOrJson,
        #[arg(required = true, num_args = 2..)]
        models: Vec<PathBuf>,
    },
    /// ATP, merge gain and pairwise ATPD from an evaluation CSV.
    Metrics {
        /// CSV with a `model` column, optional `parent_*` columns and one
        /// column per task. Lines starting with `#` are skipped.
        input: PathBuf,
        /// Comma-separated task columns; defaults to every other column.
        #[arg(long, value_delimiter = ',')]
        tasks: Option<Vec<String>>,
    },
    /// Correlation of kinship with merge gain.
    Analyze {
        /// CSV or JSON files of rows with a `gain` field and `pcc`/`cs`/`ed`
        /// or `kinship` fields. Rows of all files are pooled.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// Metric label for a generic `kinship` column.
        #[arg(long, default_value = "pcc")]
        metric: SimMetric,
    },
    /// Run an iterative merging experiment from a config file.
    Evolve {
        config: PathBuf,
        #[arg(long)]
        output_dir: Option<PathBuf>,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Render the family tree recorded in an evolution log.
    ExportTree {
        log: PathBuf,
        #[arg(long, value_enum, default_value_t = TreeOut::Dot)]
        format: TreeOut,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum TextOrJson {
    Text,
    Json,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum CsvOrJson {
    Csv,
    Json,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum TreeOut {
    Dot,
    Json,
}

/// Parses `argv` (including the program name) and runs the command, writing
/// results to stdout and diagnostics to stderr.
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run_with(argv, &mut stdout.lock(), &mut stderr.lock())
}

pub fn run_with<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() {
                err.write_all(text.as_bytes())
            } else {
                out.write_all(text.as_bytes())
            };
            return code;
        }
    };
    match dispatch(cli.command, out) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {}", chain(&e));
            exit_code(&e)
        }
    }
}

/// Exit code for a failed command.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Evaluator(_) => EXIT_EVALUATOR,
        Error::MergeFailed { source, .. } => exit_code(source),
        _ => EXIT_DATA,
    }
}

fn chain(e: &dyn std::error::Error) -> String {
    let mut s = e.to_string();
    let mut cur = e.source();
    while let Some(next) = cur {
        let msg = next.to_string();
        if !s.contains(&msg) {
            s.push_str(": ");
            s.push_str(&msg);
        }
        cur = next.source();
    }
    s
}

fn dispatch(cmd: Command, out: &mut dyn Write) -> Result<()> {
    match cmd {
        Command::Merge {
            recipe,
            base,
            out: dest,
            models,
        } => {
            let text = read(&recipe)?;
            let recipe: MergeRecipe = serde_json::from_str(&text)
                .map_err(|e| Error::Validation(format!("recipe {}: {e}", recipe.display())))?;
            let parents = models
                .iter()
                .map(load_tensor_map)
                .collect::<Result<Vec<_>>>()?;
            let base = base.map(load_tensor_map).transpose()?;
            let refs: Vec<&TensorMap> = parents.iter().collect();
            let merged = apply_recipe(&recipe, &refs, base.as_ref())?;
            save_tensor_map(&merged, &dest)?;
            emit_json(
                out,
                &json!({
                    "operator": recipe.operator.as_str(),
                    "parents": recipe.parents,
                    "output": dest.display().to_string(),
                    "tensors": merged.len(),
                    "parameters": merged.numel(),
                }),
            )
        }
        Command::Kinship {
            metric,
            base,
            format,
            models,
        } => {
            let deltas = load_deltas(&base, &models)?;
            let value = kinship_group(&deltas, metric)?;
            match format {
                TextOrJson::Text => write_out(out, &format!("{value:?}\n")),
                TextOrJson::Json => emit_json(
                    out,
                    &json!({
                        "metric": metric.as_str(),
                        "models": deltas.iter().map(|d| d.model_id.clone()).collect::<Vec<_>>(),
                        "value": value,
                    }),
                ),
            }
        }
        Command::Matrix {
            metric,
            base,
            format,
            models,
        } => {
            let deltas = load_deltas(&base, &models)?;
            let m = kinship_matrix(&deltas, metric)?;
            match format {
                CsvOrJson::Csv => write_out(out, &m.to_csv()),
                CsvOrJson::Json => emit_json(out, &m),
            }
        }
        Command::Metrics { input, tasks } => {
            let report = metrics_report(&read(&input)?, tasks.as_deref())?;
            emit_json(out, &report)
        }
        Command::Analyze { inputs, metric } => {
            let mut rows = Vec::new();
            for input in &inputs {
                let text = read(input)?;
                if input
                    .extension()
                    .is_some_and(|e| e.eq_ignore_ascii_case("json"))
                {
                    rows.extend(rows_from_json(&text)?);
                } else {
                    rows.extend(rows_from_csv(&text)?);
                }
            }
            let report = analyze_rows(&rows, metric)?;
            emit_json(out, &report)
        }
        Command::Evolve {
            config,
            output_dir,
            workers,
        } => {
            let mut cfg = load_run_config(&config)?;
            if let Some(dir) = output_dir {
                cfg.output_dir = dir;
            }
            if let Some(w) = workers {
                cfg.workers = w;
            }
            let outcome = run_from_config(&cfg)?;
            let best = outcome
                .pool
                .records()
                .iter()
                .filter_map(|r| r.atp.map(|a| (r.id.clone(), a)))
                .max_by(|a, b| a.1.total_cmp(&b.1).then_with(|| b.0.cmp(&a.0)));
            emit_json(
                out,
                &json!({
                    "output_dir": outcome.output_dir.display().to_string(),
                    "generations": outcome.log.final_generation(),
                    "stop_reason": outcome.log.stop_reason(),
                    "models": outcome.pool.len(),
                    "best": best.map(|(id, atp)| json!({"id": id, "atp": atp})),
                }),
            )
        }
        Command::ExportTree {
            log,
            format,
            out: dest,
        } => {
            let log = EvolutionLog::read(&log)?;
            let format = match format {
                TreeOut::Dot => TreeFormat::Dot,
                TreeOut::Json => TreeFormat::Json,
            };
            let text = export_family_tree(&log, format)?;
            match dest {
                Some(p) => std::fs::write(&p, text).map_err(|e| Error::io(&p, e)),
                None => write_out(out, &text),
            }
        }
    }
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_out(out: &mut dyn Write, text: &str) -> Result<()> {
    out.write_all(text.as_bytes())
        .map_err(|e| Error::io("<stdout>", e))
}

fn emit_json<T: Serialize + ?Sized>(out: &mut dyn Write, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).expect("report serializes");
    s.push('\n');
    write_out(out, &s)
}

fn model_id(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

fn load_deltas(base: &Path, models: &[PathBuf]) -> Result<Vec<DeltaVector>> {
    let base_map = Arc::new(load_tensor_map(base)?);
    let base_id = model_id(base);
    models
        .iter()
        .map(|p| {
            compute_delta(
                &model_id(p),
                Arc::new(load_tensor_map(p)?),
                &base_id,
                Arc::clone(&base_map),
            )
        })
        .collect()
}

fn csv_reader(text: &str) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes())
}

fn csv_error(e: csv::Error) -> Error {
    Error::Validation(format!("CSV: {e}"))
}

fn parse_number(field: &str, column: &str, row: usize) -> Result<f64> {
    field
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| {
            Error::Validation(format!(
                "row {row}, column `{column}`: `{field}` is not a number"
            ))
        })
}

#[derive(Debug, Serialize)]
pub struct ModelMetrics {
    pub model: String,
    pub atp: f64,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub parents: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gain: Option<f64>,
}

#[derive(Debug, Serialize)]
pub struct AtpdEntry {
    pub model_1: String,
    pub model_2: String,
    pub atpd: f64,
}

#[derive(Debug, Serialize)]
pub struct MetricsReport {
    pub tasks: Vec<String>,
    pub models: Vec<ModelMetrics>,
    pub atpd: Vec<AtpdEntry>,
}

/// Builds the `metrics` report from CSV text. Gains are filled in for rows
/// whose `parent_*` columns name models that appear in the same file.
pub fn metrics_report(text: &str, tasks: Option<&[String]>) -> Result<MetricsReport> {
    let mut rdr = csv_reader(text);
    let headers = rdr.headers().map_err(csv_error)?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let model_col =
        col("model").ok_or_else(|| Error::Validation("CSV lacks a `model` column".into()))?;
    let parent_cols: Vec<usize> = headers
        .iter()
        .enumerate()
        .filter(|(_, h)| h.starts_with("parent"))
        .map(|(i, _)| i)
        .collect();
    let task_cols: Vec<(String, usize)> = match tasks {
        Some(names) => names
            .iter()
            .map(|t| {
                col(t)
                    .map(|i| (t.clone(), i))
                    .ok_or_else(|| Error::Validation(format!("CSV lacks task column `{t}`")))
            })
            .collect::<Result<_>>()?,
        None => headers
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != model_col && !parent_cols.contains(i))
            .map(|(i, h)| (h.to_string(), i))
            .collect(),
    };
    if task_cols.is_empty() {
        return Err(Error::Validation("no task columns".into()));
    }

    let mut results: Vec<(EvalResult, Vec<String>)> = Vec::new();
    for (n, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_error)?;
        let model = rec.get(model_col).unwrap_or_default().to_string();
        let scores = task_cols
            .iter()
            .map(|(name, i)| {
                Ok((
                    name.clone(),
                    parse_number(rec.get(*i).unwrap_or_default(), name, n + 1)?,
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        let parents = parent_cols
            .iter()
            .filter_map(|i| rec.get(*i))
            .filter(|p| !p.is_empty())
            .map(String::from)
            .collect();
        let r = EvalResult::new(&model, scores);
        r.validate_scores()?;
        results.push((r, parents));
    }

    let atps: BTreeMap<&str, f64> = results
        .iter()
        .map(|(r, _)| Ok((r.model_id.as_str(), average_task_performance(r)?)))
        .collect::<Result<_>>()?;
    let mut models = Vec::with_capacity(results.len());
    for (r, parents) in &results {
        let atp = atps[r.model_id.as_str()];
        let parent_atps: Option<Vec<f64>> = parents
            .iter()
            .map(|p| atps.get(p.as_str()).copied())
            .collect();
        let gain = match parent_atps {
            Some(p) if !p.is_empty() => Some(merge_gain(atp, &p)?),
            _ => None,
        };
        models.push(ModelMetrics {
            model: r.model_id.clone(),
            atp,
            parents: parents.clone(),
            gain,
        });
    }
    let mut pairs = Vec::new();
    for i in 0..results.len() {
        for j in i + 1..results.len() {
            pairs.push(AtpdEntry {
                model_1: results[i].0.model_id.clone(),
                model_2: results[j].0.model_id.clone(),
                atpd: atpd(&results[i].0, &results[j].0)?,
            });
        }
    }
    Ok(MetricsReport {
        tasks: task_cols.into_iter().map(|(n, _)| n).collect(),
        models,
        atpd: pairs,
    })
}

/// One input row for `analyze`: named numeric fields.
pub type AnalyzeRow = BTreeMap<String, f64>;

pub fn rows_from_csv(text: &str) -> Result<Vec<AnalyzeRow>> {
    let mut rdr = csv_reader(text);
    let headers = rdr.headers().map_err(csv_error)?.clone();
    let wanted: Vec<(usize, &str)> = headers
        .iter()
        .enumerate()
        .filter(|(_, h)| is_analyze_field(h))
        .collect();
    let mut rows = Vec::new();
    for (n, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_error)?;
        let mut row = AnalyzeRow::new();
        for (i, name) in &wanted {
            let field = rec.get(*i).unwrap_or_default();
            if !field.is_empty() {
                row.insert(name.to_string(), parse_number(field, name, n + 1)?);
            }
        }
        rows.push(row);
    }
    Ok(rows)
}

pub fn rows_from_json(text: &str) -> Result<Vec<AnalyzeRow>> {
    let v: Value =
        serde_json::from_str(text).map_err(|e| Error::Validation(format!("analyze input: {e}")))?;
    let items = v
        .as_array()
        .ok_or_else(|| Error::Validation("analyze input must be a JSON array of objects".into()))?;
    items
        .iter()
        .enumerate()
        .map(|(n, item)| {
            let obj = item
                .as_object()
                .ok_or_else(|| Error::Validation(format!("row {}: not an object", n + 1)))?;
            let mut row = AnalyzeRow::new();
            for (k, v) in obj
                .iter()
                .filter(|(k, v)| is_analyze_field(k) && !v.is_null())
            {
                let x = v.as_f64().ok_or_else(|| {
                    Error::Validation(format!("row {}, field `{k}`: not a number", n + 1))
                })?;
                row.insert(k.clone(), x);
            }
            Ok(row)
        })
        .collect()
}

fn is_analyze_field(name: &str) -> bool {
    matches!(name, "gain" | "kinship" | "atp") || name.parse::<SimMetric>().is_ok()
}

#[derive(Debug, Serialize)]
pub struct AnalyzeReport {
    pub n: usize,
    pub rows: Vec<CorrelationRow>,
}

/// Correlates each available kinship column with gain. Rows missing either
/// value are skipped for that metric.
pub fn analyze_rows(rows: &[AnalyzeRow], generic: SimMetric) -> Result<AnalyzeReport> {
    let mut columns: Vec<(String, SimMetric)> = SimMetric::ALL
        .iter()
        .filter(|m| rows.iter().any(|r| r.contains_key(m.as_str())))
        .map(|m| (m.as_str().to_string(), *m))
        .collect();
    if columns.is_empty() && rows.iter().any(|r| r.contains_key("kinship")) {
        columns.push(("kinship".to_string(), generic));
    }
    if columns.is_empty() {
        return Err(Error::Validation(
            "no kinship column (pcc, cs, ed or kinship)".into(),
        ));
    }
    let out = columns
        .iter()
        .map(|(col, metric)| {
            let (xs, gains): (Vec<f64>, Vec<f64>) = rows
                .iter()
                .filter_map(|r| Some((*r.get(col)?, *r.get("gain")?)))
                .unzip();
            correlation_row(metric.as_str(), &xs, &gains)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AnalyzeReport {
        n: rows.len(),
        rows: out,
    })
}
