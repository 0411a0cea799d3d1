//! Build a small task graph by hand and simulate it.
//!
//! Two loads share the bus, so the second waits; the compute needs both.

use dnnperf::compiler::{Task, TaskGraph, TaskKind};
use dnnperf::simengine::{critical_path_time, simulate};
use dnnperf::sysdesc;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let sys = sysdesc::paper_like();
    let tasks = vec![
        Task::new(0, TaskKind::DmaLoad, 4096, "demo", 0),
        Task::new(1, TaskKind::DmaLoad, 2048, "demo", 0),
        Task::new(2, TaskKind::Compute, 1000, "demo", 0),
        Task::new(3, TaskKind::DmaStore, 1024, "demo", 0),
    ];
    let tg = TaskGraph::new(tasks, [(0, 2), (1, 2), (2, 3)])?;
    let trace = simulate(&tg, &sys);

    for iv in trace.intervals() {
        let t = tg.task(iv.task_id);
        println!(
            "task {} {:<9} {:>4} {:>9} ns .. {:>9} ns",
            t.id,
            format!("{:?}", t.kind),
            iv.resource,
            iv.start.ps() as f64 / 1e3,
            iv.end.ps() as f64 / 1e3
        );
    }
    println!(
        "makespan {} ps, critical path {} ps",
        trace.makespan().ps(),
        critical_path_time(&tg, &sys).ps()
    );
    Ok(())
}
