//! Tile and lower every layer of a network, then summarize the task graph.
//!
//! Prints the tile grid chosen for each layer and the number of loads,
//! computes and stores it became. Pass `--dump` to print the task graph
//! document instead.

use std::collections::BTreeMap;

use dnnperf::compiler::{self, TaskKind};
use dnnperf::{graph, sysdesc};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let net = graph::dilated_vgg();
    let sys = sysdesc::paper_like();
    let tg = compiler::compile(&net, &sys)?;
    if std::env::args().any(|a| a == "--dump") {
        println!("{}", compiler::save_taskgraph(&tg));
        return Ok(());
    }

    let mut counts: BTreeMap<&str, [usize; 3]> = BTreeMap::new();
    for t in tg.tasks() {
        let slot = match t.kind {
            TaskKind::DmaLoad => 0,
            TaskKind::Compute => 1,
            TaskKind::DmaStore => 2,
        };
        counts.entry(&t.layer).or_default()[slot] += 1;
    }
    println!("{:<12} {:>22} {:>6} {:>8} {:>7}", "layer", "tile (c,h,w,in)", "loads", "computes", "stores");
    for layer in net.layers() {
        let tiling = compiler::tile_layer(layer, &net, &sys)?;
        let t = tiling.tile;
        let [l, c, s] = counts[layer.name.as_str()];
        println!(
            "{:<12} {:>22} {l:>6} {c:>8} {s:>7}",
            layer.name,
            format!("{},{},{},{}", t.out_c, t.out_h, t.out_w, t.in_c)
        );
    }
    println!("{} tasks, {} edges", tg.len(), tg.edges().len());
    Ok(())
}
