use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evolution::log::{EvolutionLog, LogEvent};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    pub id: String,
    pub generation: u32,
    pub atp: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeEdge {
    pub parent: String,
    pub child: String,
    pub operator: String,
}

/// Lineage DAG: foundations are roots, every merge adds one node and an edge
/// per parent. Nodes and edges keep log order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FamilyTree {
    pub nodes: Vec<TreeNode>,
    pub edges: Vec<TreeEdge>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TreeFormat {
    Dot,
    Json,
}

impl FromStr for TreeFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dot" => Ok(TreeFormat::Dot),
            "json" => Ok(TreeFormat::Json),
            other => Err(Error::InvalidParam(format!(
                "unknown tree format `{other}` (expected dot or json)"
            ))),
        }
    }
}

impl FamilyTree {
    /// Replays `log` into a tree.
    pub fn from_log(log: &EvolutionLog) -> Result<Self> {
        let mut tree = FamilyTree::default();
        let mut seen: BTreeSet<String> = BTreeSet::new();
        let mut add = |tree: &mut FamilyTree, id: &str, generation: u32| -> Result<()> {
            if !seen.insert(id.to_string()) {
                return Err(Error::Validation(format!("model `{id}` added twice")));
            }
            tree.nodes.push(TreeNode {
                id: id.to_string(),
                generation,
                atp: None,
            });
            Ok(())
        };
        for event in &log.events {
            match event {
                LogEvent::FoundationAdded { id } => add(&mut tree, id, 0)?,
                LogEvent::Merged {
                    generation,
                    child,
                    parents,
                    recipe,
                    ..
                } => {
                    for p in parents {
                        if !tree.nodes.iter().any(|n| &n.id == p) {
                            return Err(Error::Validation(format!(
                                "merge into `{child}` names unknown parent `{p}`"
                            )));
                        }
                    }
                    add(&mut tree, child, *generation)?;
                    for p in parents {
                        tree.edges.push(TreeEdge {
                            parent: p.clone(),
                            child: child.clone(),
                            operator: recipe.operator.as_str().to_string(),
                        });
                    }
                }
                LogEvent::Evaluated { id, atp, .. } => {
                    let i = tree.nodes.iter().position(|n| &n.id == id).ok_or_else(|| {
                        Error::Validation(format!("evaluation of unknown model `{id}`"))
                    })?;
                    tree.nodes[i].atp = Some(*atp);
                }
                _ => {}
            }
        }
        Ok(tree)
    }

    pub fn node(&self, id: &str) -> Option<&TreeNode> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn parents_of(&self, id: &str) -> Vec<&str> {
        self.edges
            .iter()
            .filter(|e| e.child == id)
            .map(|e| e.parent.as_str())
            .collect()
    }

    /// Every model `id` descends from, excluding itself.
    pub fn ancestors(&self, id: &str) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        let mut stack = vec![id.to_string()];
        while let Some(cur) = stack.pop() {
            for p in self.parents_of(&cur) {
                if out.insert(p.to_string()) {
                    stack.push(p.to_string());
                }
            }
        }
        out
    }

    /// Parent lists for every node, which fully determine ancestry.
    pub fn lineage(&self) -> BTreeMap<String, BTreeSet<String>> {
        self.nodes
            .iter()
            .map(|n| {
                (
                    n.id.clone(),
                    self.parents_of(&n.id)
                        .into_iter()
                        .map(String::from)
                        .collect(),
                )
            })
            .collect()
    }

    /// Longest parent-to-child path from any root to `id`, in edges.
    pub fn depth(&self, id: &str) -> usize {
        let mut memo: HashMap<String, usize> = HashMap::new();
        self.depth_inner(id, &mut memo)
    }

    fn depth_inner(&self, id: &str, memo: &mut HashMap<String, usize>) -> usize {
        if let Some(&d) = memo.get(id) {
            return d;
        }
        let d = self
            .parents_of(id)
            .into_iter()
            .map(|p| 1 + self.depth_inner(p, memo))
            .max()
            .unwrap_or(0);
        memo.insert(id.to_string(), d);
        d
    }

    pub fn max_depth(&self) -> usize {
        let mut memo = HashMap::new();
        self.nodes
            .iter()
            .map(|n| self.depth_inner(&n.id, &mut memo))
            .max()
            .unwrap_or(0)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("tree serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Validation(format!("family tree JSON: {e}")))
    }

    pub fn to_dot(&self) -> String {
        let mut s = String::from("digraph family_tree {\n  rankdir=TB;\n  node [shape=box];\n");
        for n in &self.nodes {
            let atp = n
                .atp
                .map_or_else(|| "n/a".to_string(), |a| format!("{a:.4}"));
            let _ = writeln!(
                s,
                "  \"{}\" [label=\"{}\\ngen {}\\natp {}\"];",
                escape(&n.id),
                escape(&n.id),
                n.generation,
                atp
            );
        }
        for e in &self.edges {
            let _ = writeln!(
                s,
                "  \"{}\" -> \"{}\" [label=\"{}\"];",
                escape(&e.parent),
                escape(&e.child),
                escape(&e.operator)
            );
        }
        s.push_str("}\n");
        s
    }

    pub fn render(&self, format: TreeFormat) -> String {
        match format {
            TreeFormat::Dot => self.to_dot(),
            TreeFormat::Json => self.to_json(),
        }
    }
}

fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

/// Renders the family tree recorded in `log`.
pub fn export_family_tree(log: &EvolutionLog, format: TreeFormat) -> Result<String> {
    Ok(FamilyTree::from_log(log)?.render(format))
}
