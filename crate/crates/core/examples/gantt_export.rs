//! Write a Gantt chart of the DilatedVGG run that chrome://tracing or
//! Perfetto can open.
//!
//! Usage: `cargo run --example gantt_export [out.json]`

use dnnperf::{analysis, compiler, graph, simengine, sysdesc};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = std::env::args().nth(1).unwrap_or_else(|| "gantt.json".into());
    let net = graph::dilated_vgg();
    let sys = sysdesc::paper_like();
    let tg = compiler::compile(&net, &sys)?;
    let trace = simengine::simulate(&tg, &sys);
    std::fs::write(&path, analysis::export_gantt(&trace, &tg))?;
    println!("{} events written to {path}", trace.intervals().len());
    Ok(())
}
