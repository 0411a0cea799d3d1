//! Load a system description and print its derived peaks.

use dnnperf::sysdesc;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let sys = match std::env::args().nth(1) {
        Some(path) => sysdesc::load_system(&std::fs::read_to_string(path)?)?,
        None => sysdesc::paper_like(),
    };
    print!("{}", sys.render());
    println!();
    println!("macs/cycle  {}", sys.nce.macs_per_cycle());
    println!("peak        {:.3e} ops/s", sys.peak_ops_per_sec());
    println!("bandwidth   {:.3e} B/s", sys.peak_bandwidth_bytes_per_sec());
    println!("ridge       {:.1} ops/B", sys.peak_ops_per_sec() / sys.peak_bandwidth_bytes_per_sec());
    Ok(())
}
