use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::merge::MergeRecipe;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    TopkStable,
    HighKinship,
    MaxGenerations,
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StopReason::TopkStable => "topk_stable",
            StopReason::HighKinship => "high_kinship",
            StopReason::MaxGenerations => "max_generations",
        })
    }
}

/// One entry of an evolution log. Serialized as a JSON object tagged by
/// `"event"`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum LogEvent {
    GenerationStarted {
        generation: u32,
    },
    FoundationAdded {
        id: String,
    },
    PairSelected {
        generation: u32,
        parents: [String; 2],
    },
    Merged {
        generation: u32,
        child: String,
        parents: Vec<String>,
        recipe: MergeRecipe,
        /// Similarity of the parents' deltas under the run's metric.
        #[serde(default)]
        parent_kinship: Option<f64>,
        /// Child within 1e-7 of a parent everywhere.
        degenerate: bool,
    },
    ExplorationMerge {
        generation: u32,
        best: String,
        partner: String,
        kinship: f64,
    },
    Evaluated {
        id: String,
        generation: u32,
        atp: f64,
        scores: BTreeMap<String, f64>,
    },
    TopkUpdated {
        generation: u32,
        ids: Vec<String>,
    },
    Warning {
        generation: u32,
        message: String,
    },
    Stopped {
        generation: u32,
        reason: StopReason,
    },
}

/// Append-only, ordered record of a run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvolutionLog {
    pub events: Vec<LogEvent>,
}

impl EvolutionLog {
    pub fn push(&mut self, event: LogEvent) {
        self.events.push(event);
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            out.push_str(&serde_json::to_string(e).expect("log events serialize"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let events = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                serde_json::from_str(l)
                    .map_err(|e| Error::Validation(format!("log line {}: {e}", i + 1)))
            })
            .collect::<Result<_>>()?;
        Ok(Self { events })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_jsonl(&text)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_jsonl().as_bytes())
            .map_err(|e| Error::io(path, e))
    }

    pub fn stop_reason(&self) -> Option<StopReason> {
        self.events.iter().rev().find_map(|e| match e {
            LogEvent::Stopped { reason, .. } => Some(*reason),
            _ => None,
        })
    }

    pub fn final_generation(&self) -> u32 {
        self.events
            .iter()
            .filter_map(|e| match e {
                LogEvent::GenerationStarted { generation } => Some(*generation),
                _ => None,
            })
            .max()
            .unwrap_or(0)
    }

    /// Highest ATP among evaluated models.
    pub fn best_atp(&self) -> Option<f64> {
        self.events
            .iter()
            .filter_map(|e| match e {
                LogEvent::Evaluated { atp, .. } => Some(*atp),
                _ => None,
            })
            .reduce(f64::max)
    }
}
