//! Performance estimation for DNN inference on a virtual hardware model.
//!
//! A network ([`graph`]) and a hardware description ([`sysdesc`]) are
//! lowered by the [`compiler`] into a task graph of DMA loads, NCE
//! computations and DMA stores. The discrete-event engine ([`simengine`])
//! schedules those tasks on a shared bus and a single compute engine, and
//! [`analysis`] turns the resulting trace into per-layer reports, roofline
//! points and a Gantt chart. [`cli`] wires the stages together.
//!
//! ```
//! use dnnperf::{analysis, compiler, graph, simengine, sysdesc};
//!
//! let net = graph::dilated_vgg();
//! let sys = sysdesc::paper_like();
//! let tg = compiler::compile(&net, &sys).unwrap();
//! let trace = simengine::simulate(&tg, &sys);
//! let result = analysis::analyze(&trace, &tg, &net, &sys, 0.9).unwrap();
//! assert_eq!(result.layers.len(), net.layers().len());
//! ```

pub mod analysis;
pub mod cli;
pub mod compiler;
pub mod graph;
pub mod simengine;
pub mod sysdesc;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Graph(#[from] graph::GraphError),
    #[error(transparent)]
    System(#[from] sysdesc::SysError),
    #[error(transparent)]
    Compile(#[from] compiler::CompileError),
    #[error(transparent)]
    TaskGraph(#[from] compiler::TaskGraphError),
    #[error(transparent)]
    Analysis(#[from] analysis::AnalysisError),
    #[error("{context}: {source}")]
    Context {
        context: String,
        source: Box<Error>,
    },
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        source: std::io::Error,
    },
}
