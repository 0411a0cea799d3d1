//! Sweep bus width and NCE clock over a grid and report DilatedVGG
//! latency and how many layers stay compute-bound. Points run in parallel.

use dnnperf::analysis::{self, Boundedness, DEFAULT_THETA};
use dnnperf::sysdesc::SystemDescription;
use dnnperf::{compiler, graph, simengine, sysdesc};
use rayon::prelude::*;

fn point(net: &graph::DnnGraph, sys: &SystemDescription) -> Result<(f64, usize), dnnperf::Error> {
    let tg = compiler::compile(net, sys)?;
    let trace = simengine::simulate(&tg, sys);
    let a = analysis::analyze(&trace, &tg, net, sys, DEFAULT_THETA)?;
    let bound = a.classes.iter().filter(|&&c| c == Boundedness::ComputeBound).count();
    Ok((trace.makespan().as_secs_f64() * 1e3, bound))
}

fn main() -> Result<(), dnnperf::Error> {
    let net = graph::dilated_vgg();
    let base = sysdesc::paper_like();
    let widths = [4u64, 8, 16, 32];
    let clocks = [125_000_000u64, 250_000_000, 500_000_000];

    let grid: Vec<(u64, u64)> = widths.iter().flat_map(|&w| clocks.iter().map(move |&c| (w, c))).collect();
    let results: Vec<_> = grid
        .par_iter()
        .map(|&(width, clock)| {
            let mut sys = base.clone();
            sys.bus.bytes_per_cycle = width;
            sys.nce.freq_hz = clock;
            point(&net, &sys)
        })
        .collect::<Result<_, _>>()?;

    println!("{:>8} {:>9} {:>11} {:>14}", "bus_B", "nce_MHz", "latency_ms", "compute_bound");
    for ((width, clock), (ms, bound)) in grid.iter().zip(results) {
        println!("{width:>8} {:>9} {ms:>11.3} {bound:>14}", clock / 1_000_000);
    }
    Ok(())
}
