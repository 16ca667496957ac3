//! Dataflow graph recovered from the `hls.dataflow` regions of a kernel:
//! one node per region, one FIFO edge per stream shared between two regions.

use std::collections::HashMap;
use std::fmt;

use crate::ir::{FunctionDef, IRModule, Region, Type, ValueId};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageKind {
    Load,
    ShiftBuffer,
    Duplicate,
    Extract,
    Compute,
    Write,
    Generic,
}

impl StageKind {
    fn from_stage_name(name: &str) -> StageKind {
        if name.starts_with("load") {
            StageKind::Load
        } else if name.starts_with("shift") {
            StageKind::ShiftBuffer
        } else if name.starts_with("dup") {
            StageKind::Duplicate
        } else if name.starts_with("extract") {
            StageKind::Extract
        } else if name.starts_with("compute") {
            StageKind::Compute
        } else if name.starts_with("write") {
            StageKind::Write
        } else {
            StageKind::Generic
        }
    }
}

#[derive(Debug, Clone)]
pub struct GraphNode {
    pub index: usize,
    pub name: String,
    pub kind: StageKind,
}

#[derive(Debug, Clone)]
pub struct GraphEdge {
    pub from: usize,
    pub to: usize,
    pub stream: String,
    pub depth: u32,
}

#[derive(Debug, Clone, Default)]
pub struct DataflowGraph {
    pub nodes: Vec<GraphNode>,
    pub edges: Vec<GraphEdge>,
}

#[derive(Debug, Clone)]
pub struct GraphError(pub String);

impl fmt::Display for GraphError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "dataflow graph: {}", self.0)
    }
}

impl std::error::Error for GraphError {}

/// Stream endpoint roles a runtime helper's parameters play, derived from
/// the callee name.
pub fn callee_stream_roles(callee: &str, n_streams: usize) -> Option<Vec<bool /* produces */>> {
    if callee == "dummy_load_data" || callee.starts_with("load_data_") {
        Some(vec![true; n_streams])
    } else if callee.starts_with("shift_buffer_") {
        // (input stream, output stream, box parameters...)
        Some(vec![false, true])
    } else if callee == "write_data" {
        Some(vec![false])
    } else {
        None
    }
}

pub fn build_dataflow_graph(m: &IRModule) -> Result<DataflowGraph, GraphError> {
    let mut kernels = m.functions.iter().filter(|f| f.body.is_some());
    let kernel: &FunctionDef = match (kernels.next(), kernels.next()) {
        (Some(k), None) => k,
        _ => return Err(GraphError("expected exactly one kernel function".into())),
    };
    let body = kernel.body.as_ref().unwrap();

    // Stream table from kernel-top create_stream ops.
    let mut stream_depth: HashMap<&ValueId, u32> = HashMap::new();
    for op in &body.ops {
        if op.name == "hls.create_stream" {
            if let Type::Stream { depth, .. } = &op.results[0].ty {
                stream_depth.insert(&op.results[0].value, *depth);
            }
        }
    }

    let mut nodes = Vec::new();
    let mut producer: HashMap<&ValueId, Vec<usize>> = HashMap::new();
    let mut consumer: HashMap<&ValueId, Vec<usize>> = HashMap::new();

    for op in &body.ops {
        if op.name != "hls.dataflow" {
            continue;
        }
        let index = nodes.len();
        let name = op
            .attr("stage")
            .and_then(|a| a.as_str())
            .map(|s| s.to_string())
            .unwrap_or_else(|| format!("stage_{index}"));
        nodes.push(GraphNode {
            index,
            kind: StageKind::from_stage_name(&name),
            name,
        });
        let region = op
            .regions
            .first()
            .ok_or_else(|| GraphError("hls.dataflow without a region".into()))?;
        scan_region(region, index, &stream_depth, &mut producer, &mut consumer)?;
    }

    let mut edges = Vec::new();
    for (stream, depth) in stream_depth.iter() {
        let prods = producer.get(stream).cloned().unwrap_or_default();
        let cons = consumer.get(stream).cloned().unwrap_or_default();
        if prods.len() != 1 || cons.len() != 1 {
            return Err(GraphError(format!(
                "stream {stream} has {} producer(s) and {} consumer(s); expected exactly one of each",
                prods.len(),
                cons.len()
            )));
        }
        edges.push(GraphEdge {
            from: prods[0],
            to: cons[0],
            stream: stream.0.clone(),
            depth: *depth,
        });
    }
    edges.sort_by(|a, b| (a.from, a.to, &a.stream).cmp(&(b.from, b.to, &b.stream)));

    let g = DataflowGraph { nodes, edges };
    if g.topo_order().is_none() {
        return Err(GraphError("dataflow graph contains a cycle".into()));
    }
    Ok(g)
}

fn scan_region<'a>(
    r: &'a Region,
    node: usize,
    streams: &HashMap<&ValueId, u32>,
    producer: &mut HashMap<&'a ValueId, Vec<usize>>,
    consumer: &mut HashMap<&'a ValueId, Vec<usize>>,
) -> Result<(), GraphError> {
    for op in &r.ops {
        match op.name.as_str() {
            "hls.read" => {
                record(&op.operands[0], node, streams, consumer);
            }
            "hls.write" => {
                record(&op.operands[1], node, streams, producer);
            }
            "func.call" => {
                let callee = op.symbol.as_deref().unwrap_or("");
                let stream_args: Vec<&ValueId> = op
                    .operands
                    .iter()
                    .filter(|v| streams.contains_key(*v))
                    .collect();
                if stream_args.is_empty() {
                    continue;
                }
                let roles = callee_stream_roles(callee, stream_args.len()).ok_or_else(|| {
                    GraphError(format!(
                        "call to @{callee} passes streams but has no known stage signature"
                    ))
                })?;
                if roles.len() != stream_args.len() {
                    return Err(GraphError(format!(
                        "@{callee} takes {} stream parameters, {} passed",
                        roles.len(),
                        stream_args.len()
                    )));
                }
                for (v, produces) in stream_args.iter().zip(roles) {
                    if produces {
                        record(v, node, streams, producer);
                    } else {
                        record(v, node, streams, consumer);
                    }
                }
            }
            _ => {}
        }
        for nested in &op.regions {
            scan_region(nested, node, streams, producer, consumer)?;
        }
    }
    Ok(())
}

fn record<'a>(
    v: &'a ValueId,
    node: usize,
    streams: &HashMap<&ValueId, u32>,
    map: &mut HashMap<&'a ValueId, Vec<usize>>,
) {
    if streams.contains_key(v) {
        let entry = map.entry(v).or_default();
        if !entry.contains(&node) {
            entry.push(node);
        }
    }
}

impl DataflowGraph {
    /// Kahn topological order; `None` when the graph has a cycle.
    pub fn topo_order(&self) -> Option<Vec<usize>> {
        let n = self.nodes.len();
        let mut indeg = vec![0usize; n];
        for e in &self.edges {
            indeg[e.to] += 1;
        }
        let mut queue: Vec<usize> = (0..n).filter(|i| indeg[*i] == 0).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(i) = queue.pop() {
            order.push(i);
            for e in self.edges.iter().filter(|e| e.from == i) {
                indeg[e.to] -= 1;
                if indeg[e.to] == 0 {
                    queue.push(e.to);
                }
            }
        }
        // Stable order for determinism.
        if order.len() == n {
            let mut seen = vec![false; n];
            let mut stable = Vec::with_capacity(n);
            // Repeated sweeps in node order, emitting ready nodes.
            let mut emitted = 0usize;
            let mut indeg = vec![0usize; n];
            for e in &self.edges {
                indeg[e.to] += 1;
            }
            while emitted < n {
                let before = emitted;
                for i in 0..n {
                    if !seen[i] && indeg[i] == 0 {
                        seen[i] = true;
                        stable.push(i);
                        emitted += 1;
                        for e in self.edges.iter().filter(|e| e.from == i) {
                            indeg[e.to] -= 1;
                        }
                    }
                }
                if emitted == before {
                    return None;
                }
            }
            Some(stable)
        } else {
            None
        }
    }

    pub fn source_nodes(&self) -> Vec<usize> {
        (0..self.nodes.len())
            .filter(|i| self.edges.iter().all(|e| e.to != *i))
            .collect()
    }

    pub fn to_dot(&self) -> String {
        let mut s = String::from("digraph dataflow {\n  rankdir=LR;\n");
        for n in &self.nodes {
            s.push_str(&format!(
                "  n{} [label=\"{}\", shape=box];\n",
                n.index, n.name
            ));
        }
        for e in &self.edges {
            s.push_str(&format!(
                "  n{} -> n{} [label=\"{} (d={})\"];\n",
                e.from, e.to, e.stream, e.depth
            ));
        }
        s.push_str("}\n");
        s
    }
}
