#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

pub fn fixture(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("fixtures")
        .join(rel)
}

pub fn schema_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("schemas")
        .join(format!("{name}.schema.json"))
}

/// Panics with every violation if `instance` does not match the schema.
pub fn assert_schema(name: &str, instance: &Value) {
    let schema: Value =
        serde_json::from_str(&std::fs::read_to_string(schema_path(name)).unwrap()).unwrap();
    let compiled = jsonschema::JSONSchema::compile(&schema).expect("schema compiles");
    if let Err(errors) = compiled.validate(instance) {
        let msgs: Vec<String> = errors
            .map(|e| format!("{} at {}", e, e.instance_path))
            .collect();
        panic!(
            "{name} schema violations:\n{}\ninstance: {instance:#}",
            msgs.join("\n")
        );
    };
}

pub fn mergekin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mergekin"))
        .args(args)
        .output()
        .expect("binary runs")
}

pub fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!(
            "stdout is not JSON ({e}): {}\nstderr: {}",
            String::from_utf8_lossy(&out.stdout),
            String::from_utf8_lossy(&out.stderr)
        )
    })
}

/// Rows of a fixture table as column → raw field, `#` lines skipped.
pub fn table(rel: &str) -> Vec<BTreeMap<String, String>> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(fixture(rel))
        .unwrap();
    let headers = rdr.headers().unwrap().clone();
    rdr.records()
        .map(|r| {
            let r = r.unwrap();
            headers
                .iter()
                .map(String::from)
                .zip(r.iter().map(String::from))
                .collect()
        })
        .collect()
}

pub fn num(row: &BTreeMap<String, String>, col: &str) -> f64 {
    row[col]
        .parse()
        .unwrap_or_else(|_| panic!("column {col}: `{}` is not a number", row[col]))
}

/// Collects named checks and prints one summary line for a criterion.
pub struct Criterion {
    id: u32,
    title: &'static str,
    failures: Vec<String>,
    checks: usize,
}

impl Criterion {
    pub fn new(id: u32, title: &'static str) -> Self {
        Self {
            id,
            title,
            failures: Vec::new(),
            checks: 0,
        }
    }

    pub fn check(&mut self, ok: bool, what: impl FnOnce() -> String) {
        self.checks += 1;
        if !ok {
            self.failures.push(what());
        }
    }

    pub fn finish(self) {
        if self.failures.is_empty() {
            println!(
                "criterion {:>2} PASS  {} ({} checks)",
                self.id, self.title, self.checks
            );
        } else {
            println!(
                "criterion {:>2} FAIL  {} ({} of {} checks failed: {})",
                self.id,
                self.title,
                self.failures.len(),
                self.checks,
                self.failures.join("; ")
            );
            panic!("criterion {} failed", self.id);
        }
    }
}
