//! Hardware-adapted task graph and its JSON document format.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TaskGraphError {
    #[error("task graph parse error: {0}")]
    Parse(String),
    #[error("task at position {position} has id {id}; ids must be dense and ordered")]
    NonDenseId { position: usize, id: u32 },
    #[error("task {id}: {kind} must run on {expected}")]
    WrongResource {
        id: u32,
        kind: TaskKind,
        expected: Resource,
    },
    #[error("edge [{0}, {1}] references a missing task")]
    DanglingEdge(u32, u32),
    #[error("self-loop on task {0}")]
    SelfLoop(u32),
    #[error("task graph has a cycle through task {0}")]
    Cycle(u32),
    #[error("compute task {0} has no DmaLoad predecessor")]
    ComputeWithoutLoad(u32),
    #[error("compute task {0} does not reach a DmaStore of its tile")]
    ComputeWithoutStore(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Resource {
    #[serde(rename = "NCE")]
    Nce,
    #[serde(rename = "BUS")]
    Bus,
}

impl Resource {
    pub const ALL: [Resource; 2] = [Resource::Nce, Resource::Bus];

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Resource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Resource::Nce => "NCE",
            Resource::Bus => "BUS",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TaskKind {
    DmaLoad,
    Compute,
    DmaStore,
}

impl TaskKind {
    pub fn resource(self) -> Resource {
        match self {
            TaskKind::Compute => Resource::Nce,
            TaskKind::DmaLoad | TaskKind::DmaStore => Resource::Bus,
        }
    }

    pub fn is_dma(self) -> bool {
        self.resource() == Resource::Bus
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// A task graph node. `cost` is bytes for DMA kinds and NCE cycles for
/// `Compute`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Task {
    pub id: u32,
    pub kind: TaskKind,
    pub resource: Resource,
    pub cost: u64,
    pub layer: String,
    pub tile: u32,
}

impl Task {
    pub fn new(id: u32, kind: TaskKind, cost: u64, layer: impl Into<String>, tile: u32) -> Self {
        Task {
            id,
            kind,
            resource: kind.resource(),
            cost,
            layer: layer.into(),
            tile,
        }
    }
}

/// Acyclic graph of tasks. Edges are kept sorted and deduplicated.
#[derive(Debug, Clone)]
pub struct TaskGraph {
    tasks: Vec<Task>,
    edges: Vec<(u32, u32)>,
    succ: Vec<Vec<u32>>,
    pred: Vec<Vec<u32>>,
}

impl PartialEq for TaskGraph {
    fn eq(&self, other: &Self) -> bool {
        self.tasks == other.tasks && self.edges == other.edges
    }
}

impl Eq for TaskGraph {}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TaskGraphDoc {
    tasks: Vec<Task>,
    edges: Vec<(u32, u32)>,
}

impl TaskGraph {
    /// Build a graph, checking ids, resources, edge endpoints and acyclicity.
    pub fn new(tasks: Vec<Task>, edges: impl IntoIterator<Item = (u32, u32)>) -> Result<Self, TaskGraphError> {
        for (position, t) in tasks.iter().enumerate() {
            if t.id as usize != position {
                return Err(TaskGraphError::NonDenseId { position, id: t.id });
            }
            if t.resource != t.kind.resource() {
                return Err(TaskGraphError::WrongResource {
                    id: t.id,
                    kind: t.kind,
                    expected: t.kind.resource(),
                });
            }
        }
        let n = tasks.len();
        let edges: BTreeSet<(u32, u32)> = edges.into_iter().collect();
        let mut succ = vec![Vec::new(); n];
        let mut pred = vec![Vec::new(); n];
        for &(p, s) in &edges {
            if p as usize >= n || s as usize >= n {
                return Err(TaskGraphError::DanglingEdge(p, s));
            }
            if p == s {
                return Err(TaskGraphError::SelfLoop(p));
            }
            succ[p as usize].push(s);
            pred[s as usize].push(p);
        }
        let graph = TaskGraph {
            tasks,
            edges: edges.into_iter().collect(),
            succ,
            pred,
        };
        graph.topo_order()?;
        Ok(graph)
    }

    pub fn empty() -> Self {
        TaskGraph {
            tasks: Vec::new(),
            edges: Vec::new(),
            succ: Vec::new(),
            pred: Vec::new(),
        }
    }

    pub fn tasks(&self) -> &[Task] {
        &self.tasks
    }

    pub fn task(&self, id: u32) -> &Task {
        &self.tasks[id as usize]
    }

    pub fn edges(&self) -> &[(u32, u32)] {
        &self.edges
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn successors(&self, id: u32) -> &[u32] {
        &self.succ[id as usize]
    }

    pub fn predecessors(&self, id: u32) -> &[u32] {
        &self.pred[id as usize]
    }

    /// Kahn order, smallest id first among ready tasks.
    pub fn topo_order(&self) -> Result<Vec<u32>, TaskGraphError> {
        let n = self.tasks.len();
        let mut indegree: Vec<usize> = self.pred.iter().map(Vec::len).collect();
        let mut ready: VecDeque<u32> = (0..n as u32).filter(|&i| indegree[i as usize] == 0).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(t) = ready.pop_front() {
            order.push(t);
            for &s in &self.succ[t as usize] {
                indegree[s as usize] -= 1;
                if indegree[s as usize] == 0 {
                    ready.push_back(s);
                }
            }
        }
        if order.len() < n {
            let stuck = (0..n).find(|&i| indegree[i] > 0).expect("stuck task") as u32;
            return Err(TaskGraphError::Cycle(stuck));
        }
        Ok(order)
    }

    /// Dataflow invariants of compiled graphs: every compute task is fed by
    /// at least one load and reaches a store of the same layer tile.
    pub fn check_dataflow(&self) -> Result<(), TaskGraphError> {
        for t in self.tasks.iter().filter(|t| t.kind == TaskKind::Compute) {
            let fed = self
                .predecessors(t.id)
                .iter()
                .any(|&p| self.task(p).kind == TaskKind::DmaLoad);
            if !fed {
                return Err(TaskGraphError::ComputeWithoutLoad(t.id));
            }
            let same_tile = |o: &Task| o.layer == t.layer && o.tile == t.tile;
            let mut stack = vec![t.id];
            let mut seen = BTreeSet::new();
            let mut stored = false;
            while let Some(cur) = stack.pop() {
                for &s in self.successors(cur) {
                    let st = self.task(s);
                    if !same_tile(st) || !seen.insert(s) {
                        continue;
                    }
                    if st.kind == TaskKind::DmaStore {
                        stored = true;
                        break;
                    }
                    stack.push(s);
                }
                if stored {
                    break;
                }
            }
            if !stored {
                return Err(TaskGraphError::ComputeWithoutStore(t.id));
            }
        }
        Ok(())
    }

    /// Serialize with one task and one edge per line, in id / edge order.
    pub fn to_document(&self) -> String {
        let mut out = String::from("{\n  \"tasks\": [");
        for (i, t) in self.tasks.iter().enumerate() {
            out += if i == 0 { "\n    " } else { ",\n    " };
            out += &serde_json::to_string(t).expect("task serializes");
        }
        out += if self.tasks.is_empty() { "],\n  \"edges\": [" } else { "\n  ],\n  \"edges\": [" };
        for (i, (p, s)) in self.edges.iter().enumerate() {
            out += if i == 0 { "\n    " } else { ",\n    " };
            out += &format!("[{p}, {s}]");
        }
        out += if self.edges.is_empty() { "]\n}\n" } else { "\n  ]\n}\n" };
        out
    }
}

/// Parse a task graph document and check it, including dataflow invariants.
pub fn load_taskgraph(text: &str) -> Result<TaskGraph, TaskGraphError> {
    let doc: TaskGraphDoc =
        serde_json::from_str(text).map_err(|e| TaskGraphError::Parse(e.to_string()))?;
    let tg = TaskGraph::new(doc.tasks, doc.edges)?;
    tg.check_dataflow()?;
    Ok(tg)
}

pub fn save_taskgraph(tg: &TaskGraph) -> String {
    tg.to_document()
}
