//! Deep-learning compiler stage: tile every layer against the on-chip
//! buffers and lower the network into a hardware-adapted [`TaskGraph`].
//!
//! Each reduction chunk of an output tile becomes DMA loads (one per data
//! input, plus one for weights) feeding a `Compute` task; chunks of the same output
//! tile accumulate in place and the tile ends with one `DmaStore`.
//!
//! Three kinds of edges are emitted:
//! * intra-tile: loads -> compute -> ... -> store;
//! * cross-layer: a consumer load depends on every producer store whose
//!   output tile overlaps the region it reads;
//! * buffer reuse: with `buffer_depth` banks per buffer, the loads of
//!   compute step `s` wait for compute step `s - depth`, and the first
//!   compute of output tile `k` waits for store `k - depth`.
//!
//! Task ids increase along every edge, so compiled graphs are acyclic by
//! construction.

use std::collections::{BTreeSet, HashMap};

use thiserror::Error;

use crate::graph::{DnnGraph, LayerNode};
use crate::sysdesc::SystemDescription;

mod taskgraph;
mod tiling;

pub use taskgraph::{load_taskgraph, save_taskgraph, Resource, Task, TaskGraph, TaskGraphError, TaskKind};
pub use tiling::{
    compute_cycles, tile_layer, Buffer, GreedyHalving, Region, TileBox, TileExtent, Tiling, TilingStrategy,
};

pub(crate) use tiling::Geometry;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CompileError {
    #[error("layer `{layer}` cannot be tiled: a minimal tile needs {required} B of {buffer} buffer, capacity is {capacity} B")]
    Infeasible {
        layer: String,
        buffer: Buffer,
        required: u64,
        capacity: u64,
    },
    #[error(transparent)]
    TaskGraph(#[from] TaskGraphError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CompileOptions {
    /// Banks per on-chip buffer; 2 is double buffering.
    pub buffer_depth: usize,
}

impl Default for CompileOptions {
    fn default() -> Self {
        CompileOptions { buffer_depth: 2 }
    }
}

struct Lowered {
    tiling: Tiling,
    stores: Vec<u32>,
}

struct Builder<'a> {
    graph: &'a DnnGraph,
    sys: &'a SystemDescription,
    opts: CompileOptions,
    tasks: Vec<Task>,
    edges: BTreeSet<(u32, u32)>,
    lowered: HashMap<&'a str, Lowered>,
    compute_steps: Vec<u32>,
    stores: Vec<u32>,
}

impl<'a> Builder<'a> {
    fn new(graph: &'a DnnGraph, sys: &'a SystemDescription, opts: CompileOptions) -> Self {
        assert!(opts.buffer_depth >= 1, "buffer depth must be at least 1");
        Builder {
            graph,
            sys,
            opts,
            tasks: Vec::new(),
            edges: BTreeSet::new(),
            lowered: HashMap::new(),
            compute_steps: Vec::new(),
            stores: Vec::new(),
        }
    }

    fn push(&mut self, kind: TaskKind, cost: u64, layer: &str, tile: u32) -> u32 {
        let id = self.tasks.len() as u32;
        self.tasks.push(Task::new(id, kind, cost, layer, tile));
        id
    }

    fn lower(&mut self, layer: &'a LayerNode, tiling: Tiling) {
        let geo = Geometry::new(self.graph, layer);
        let depth = self.opts.buffer_depth;
        let mut stores = Vec::new();
        for (t_idx, out) in tiling.output_tiles().enumerate() {
            let tile_id = t_idx as u32;
            let mut prev_compute = None;
            for chunk in tiling.chunks(&out) {
                let mut loads = Vec::new();
                for (i, input) in geo.inputs.iter().enumerate() {
                    let (region, bytes) = geo.ifmap(i, &chunk);
                    let id = self.push(TaskKind::DmaLoad, bytes, &layer.name, tile_id);
                    loads.push(id);
                    let producer = self.graph.producer(input.name());
                    if let Some(p) = producer.and_then(|l| self.lowered.get(l.name.as_str())) {
                        for pt in p.tiling.tiles_intersecting(&region) {
                            self.edges.insert((p.stores[pt as usize], id));
                        }
                    }
                }
                // Layers without weights still get a (zero-byte) weight load.
                let bytes = geo.weight_bytes(&chunk);
                loads.push(self.push(TaskKind::DmaLoad, bytes, &layer.name, tile_id));
                let cycles = compute_cycles(layer, &chunk.extent(), self.sys);
                let compute = self.push(TaskKind::Compute, cycles, &layer.name, tile_id);
                self.edges.extend(loads.iter().map(|&l| (l, compute)));

                let step = self.compute_steps.len();
                if step >= depth {
                    let freed = self.compute_steps[step - depth];
                    self.edges.extend(loads.iter().map(|&l| (freed, l)));
                }
                match prev_compute {
                    Some(prev) => {
                        self.edges.insert((prev, compute));
                    }
                    None if self.stores.len() >= depth => {
                        self.edges.insert((self.stores[self.stores.len() - depth], compute));
                    }
                    None => {}
                }
                self.compute_steps.push(compute);
                prev_compute = Some(compute);
            }
            let store = self.push(TaskKind::DmaStore, geo.ofmap_bytes(&out), &layer.name, tile_id);
            self.edges.insert((prev_compute.expect("at least one chunk"), store));
            self.stores.push(store);
            stores.push(store);
        }
        self.lowered.insert(&layer.name, Lowered { tiling, stores });
    }

    fn finish(self) -> TaskGraph {
        TaskGraph::new(self.tasks, self.edges).expect("lowering emits ids increasing along edges")
    }
}

/// Lower a single layer in isolation (no cross-layer edges).
pub fn lower_layer(graph: &DnnGraph, layer: &LayerNode, tiling: &Tiling, sys: &SystemDescription) -> TaskGraph {
    let mut b = Builder::new(graph, sys, CompileOptions::default());
    b.lower(layer, tiling.clone());
    b.finish()
}

/// Compile a network with the default options and tiling strategy.
pub fn compile(graph: &DnnGraph, sys: &SystemDescription) -> Result<TaskGraph, CompileError> {
    compile_with(graph, sys, CompileOptions::default(), &GreedyHalving)
}

pub fn compile_with(
    graph: &DnnGraph,
    sys: &SystemDescription,
    opts: CompileOptions,
    strategy: &dyn TilingStrategy,
) -> Result<TaskGraph, CompileError> {
    let mut b = Builder::new(graph, sys, opts);
    for layer in graph.layers() {
        let tiling = strategy.tile(layer, graph, sys)?;
        b.lower(layer, tiling);
    }
    Ok(b.finish())
}
