//! Simulate the bundled DilatedVGG network on the bundled system and print
//! where each layer lands on the roofline.
//!
//! Usage: `cargo run --release --example roofline_dilated_vgg [system.sys]`

use dnnperf::analysis::{self, DEFAULT_THETA};
use dnnperf::{compiler, graph, simengine, sysdesc};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let sys = match std::env::args().nth(1) {
        Some(path) => sysdesc::load_system(&std::fs::read_to_string(path)?)?,
        None => sysdesc::paper_like(),
    };
    let net = graph::dilated_vgg();
    let tg = compiler::compile(&net, &sys)?;
    let trace = simengine::simulate(&tg, &sys);
    let result = analysis::analyze(&trace, &tg, &net, &sys, DEFAULT_THETA)?;

    let roof = &result.roofline;
    println!(
        "peak {:.3e} ops/s, bandwidth {:.3e} B/s, ridge {:.1} ops/B",
        roof.peak_ops_per_sec, roof.peak_bandwidth_bytes_per_sec, roof.ridge_intensity
    );
    println!(
        "{:<12} {:>10} {:>10} {:>12} {:>6} {:>6}  class",
        "layer", "latency_us", "ops/B", "ops/s", "nce", "bus"
    );
    for ((r, p), class) in result.layers.iter().zip(&roof.points).zip(&result.classes) {
        println!(
            "{:<12} {:>10.1} {:>10.2} {:>12.3e} {:>6.3} {:>6.3}  {:?}",
            r.layer,
            r.latency.as_us_f64(),
            p.x,
            p.y,
            r.nce_busy_fraction,
            r.bus_busy_fraction,
            class
        );
    }
    println!("{} tasks, makespan {:.3} ms", tg.len(), trace.makespan().as_secs_f64() * 1e3);
    Ok(())
}
