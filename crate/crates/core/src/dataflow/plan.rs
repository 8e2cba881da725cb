//! Execution plans and their line-oriented text dump.
//!
//! ```text
//! node 0 Source:CustomSource parallelism=1
//! node 1 Filter parallelism=1
//! node 2 Sink:Unnamed parallelism=1
//! edge 0 1
//! edge 1 2
//! ```
//!
//! Micro-batch plans append a `mode=microbatch` attribute to each node line.

use std::fmt::Write;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlanNode {
    pub index: usize,
    pub name: String,
    pub parallelism: usize,
    pub annotation: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExecutionPlan {
    pub engine: String,
    pub nodes: Vec<PlanNode>,
    pub edges: Vec<(usize, usize)>,
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("plan line {line}: {message}")]
pub struct PlanParseError {
    pub line: usize,
    pub message: String,
}

impl ExecutionPlan {
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn node_names(&self) -> Vec<&str> {
        self.nodes.iter().map(|n| n.name.as_str()).collect()
    }

    /// Renders the plan in the line format. Whitespace inside names becomes `_`.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for n in &self.nodes {
            let name: String = n
                .name
                .chars()
                .map(|c| if c.is_whitespace() { '_' } else { c })
                .collect();
            write!(out, "node {} {} parallelism={}", n.index, name, n.parallelism).unwrap();
            if let Some(a) = &n.annotation {
                write!(out, " {a}").unwrap();
            }
            out.push('\n');
        }
        for (from, to) in &self.edges {
            writeln!(out, "edge {from} {to}").unwrap();
        }
        out
    }

    pub fn parse(text: &str) -> Result<ExecutionPlan, PlanParseError> {
        let mut nodes = Vec::new();
        let mut edges = Vec::new();
        let mut engine = "tuple".to_string();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let err = |message: String| PlanParseError { line, message };
            let fields: Vec<&str> = raw.split_whitespace().collect();
            match fields.as_slice() {
                [] => continue,
                ["node", index, name, par, rest @ ..] => {
                    let index: usize = index.parse().map_err(|_| err(format!("bad node index `{index}`")))?;
                    if index != nodes.len() {
                        return Err(err(format!("node index {index} out of order")));
                    }
                    let parallelism = par
                        .strip_prefix("parallelism=")
                        .and_then(|p| p.parse().ok())
                        .ok_or_else(|| err(format!("bad parallelism `{par}`")))?;
                    let annotation = if rest.is_empty() {
                        None
                    } else {
                        Some(rest.join(" "))
                    };
                    if let Some(mode) = rest.iter().find_map(|a| a.strip_prefix("mode=")) {
                        engine = mode.to_string();
                    }
                    nodes.push(PlanNode {
                        index,
                        name: name.to_string(),
                        parallelism,
                        annotation,
                    });
                }
                ["edge", from, to] => {
                    let from: usize = from.parse().map_err(|_| err(format!("bad edge source `{from}`")))?;
                    let to: usize = to.parse().map_err(|_| err(format!("bad edge target `{to}`")))?;
                    if from >= nodes.len() || to >= nodes.len() || from >= to {
                        return Err(err(format!("edge {from}->{to} violates topological order")));
                    }
                    edges.push((from, to));
                }
                _ => return Err(err(format!("unrecognized line `{raw}`"))),
            }
        }
        Ok(ExecutionPlan { engine, nodes, edges })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ExecutionPlan {
        ExecutionPlan {
            engine: "tuple".into(),
            nodes: ["Source:CustomSource", "Filter", "Sink:Unnamed"]
                .iter()
                .enumerate()
                .map(|(index, n)| PlanNode {
                    index,
                    name: n.to_string(),
                    parallelism: 1,
                    annotation: None,
                })
                .collect(),
            edges: vec![(0, 1), (1, 2)],
        }
    }

    #[test]
    fn dump_format() {
        assert_eq!(
            sample().dump(),
            "node 0 Source:CustomSource parallelism=1\nnode 1 Filter parallelism=1\n\
             node 2 Sink:Unnamed parallelism=1\nedge 0 1\nedge 1 2\n"
        );
    }

    #[test]
    fn parse_round_trip() {
        let plan = sample();
        assert_eq!(ExecutionPlan::parse(&plan.dump()).unwrap(), plan);
        let mut mb = sample();
        mb.engine = "microbatch".into();
        for n in &mut mb.nodes {
            n.annotation = Some("mode=microbatch".into());
        }
        assert_eq!(ExecutionPlan::parse(&mb.dump()).unwrap(), mb);
    }

    #[test]
    fn parse_rejects_garbage() {
        assert!(ExecutionPlan::parse("node x Foo parallelism=1").is_err());
        assert!(ExecutionPlan::parse("node 0 Foo par=1").is_err());
        assert!(ExecutionPlan::parse("node 0 A parallelism=1\nedge 0 3").is_err());
        assert!(ExecutionPlan::parse("vertex 0").is_err());
    }

    #[test]
    fn whitespace_in_names_is_escaped() {
        let mut plan = sample();
        plan.nodes[0].name = "Source: Custom Source".into();
        assert!(plan.dump().starts_with("node 0 Source:_Custom_Source parallelism=1\n"));
    }
}
