//! Parse a network document, then list each layer with its output shape,
//! MAC count and minimum DRAM traffic.
//!
//! Usage: `cargo run --example load_network [network.toml]`

use dnnperf::graph;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let net = match std::env::args().nth(1) {
        Some(path) => graph::load_network(&std::fs::read_to_string(path)?)?,
        None => graph::dilated_vgg(),
    };
    println!("{:<12} {:<12} {:>18} {:>14} {:>12}", "layer", "kind", "output", "macs", "min_bytes");
    for layer in net.layers() {
        let out = net.output_of(layer);
        println!(
            "{:<12} {:<12} {:>18} {:>14} {:>12}",
            layer.name,
            layer.kind,
            format!("{:?}", out.shape()),
            net.mac_count(layer),
            net.min_dram_traffic_bytes(layer)
        );
    }
    let macs: u64 = net.layers().iter().map(|l| net.mac_count(l)).sum();
    println!("{} layers, {:.3} GMAC", net.layers().len(), macs as f64 / 1e9);
    Ok(())
}
