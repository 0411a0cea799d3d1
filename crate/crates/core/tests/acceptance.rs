//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails.

mod support;

use std::collections::HashMap;
use std::fs;
use std::process::Command;
use std::time::{Duration, Instant};

use dnnperf::analysis::{analyze, layer_reports, Boundedness, ROOFLINE_EPSILON};
use dnnperf::compiler::{compile, tile_layer, TaskKind};
use dnnperf::graph::{dilated_vgg, load_network, LayerKind};
use dnnperf::simengine::simulate;
use dnnperf::sysdesc::{paper_like, SystemDescription};
use proptest::test_runner::{Config, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use support::*;

type Outcome = Result<String, String>;
type Criterion = (&'static str, &'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn determinism() -> Outcome {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let mut slowest = Duration::ZERO;
    for d in &dirs {
        let t = Instant::now();
        let o = Command::new(env!("CARGO_BIN_EXE_dnnperf"))
            .args(["simulate", "--network", "dilated_vgg", "--system", "paper-like.sys"])
            .args(["--dump-taskgraph", "--gantt", "--reports", "--roofline", "--out"])
            .arg(d.path())
            .output()
            .map_err(|e| e.to_string())?;
        slowest = slowest.max(t.elapsed());
        ensure(o.status.success(), || String::from_utf8_lossy(&o.stderr).into_owned())?;
    }
    let names = ["taskgraph.json", "trace.json", "gantt.json", "reports.csv", "reports.json", "roofline.json"];
    for n in names {
        let a = fs::read(dirs[0].path().join(n)).map_err(|e| format!("{n}: {e}"))?;
        let b = fs::read(dirs[1].path().join(n)).map_err(|e| format!("{n}: {e}"))?;
        ensure(a == b, || format!("{n} differs between runs"))?;
    }
    ensure(slowest < Duration::from_secs(60), || format!("run took {slowest:?}"))?;
    Ok(format!("{} artifacts identical, slowest run {:.2} s", names.len(), slowest.as_secs_f64()))
}

fn peak_and_roof() -> Outcome {
    let sys = paper_like();
    ensure((sys.nce.rows, sys.nce.cols, sys.nce.freq_hz) == (32, 64, 250_000_000), || {
        "bundled system is not 32x64 @ 250 MHz".into()
    })?;
    ensure(sys.peak_ops_per_sec_exact() == 1_024_000_000_000, || {
        format!("peak {} ops/s", sys.peak_ops_per_sec_exact())
    })?;
    ensure(sys.peak_ops_per_sec() == 1.024e12, || "f64 peak is not exact".into())?;
    let net = dilated_vgg();
    let tg = compile(&net, &sys).map_err(|e| e.to_string())?;
    let a = analyze(&simulate(&tg, &sys), &tg, &net, &sys, 0.9).map_err(|e| e.to_string())?;
    for p in &a.roofline.points {
        let roof = p.x * sys.peak_bandwidth_bytes_per_sec();
        let bound = sys.peak_ops_per_sec().min(roof);
        ensure(p.y <= bound * (1.0 + ROOFLINE_EPSILON), || {
            format!("{} at {} ops/s above roof {}", p.layer, p.y, bound)
        })?;
    }
    Ok(format!("peak 1.024e12 ops/s, {} points under the roof", a.roofline.points.len()))
}

struct Layer {
    toml: String,
    /// (bytes of each input read, weight bytes, ofmap bytes, cycles)
    expect: (Vec<u64>, u64, u64, u64),
}

fn span(out: u64, stride: u64, pad: u64, dil: u64, k: u64, extent: u64) -> u64 {
    // Rows read from the unpadded input; the window starts at -pad, clipped to 0.
    ((out - 1) * stride + dil * (k - 1) + 1).saturating_sub(pad).min(extent)
}

fn out_extent(input: u64, k: u64, stride: u64, pad: u64, dil: u64) -> u64 {
    (input + 2 * pad - dil * (k - 1) - 1) / stride + 1
}

fn ceil(a: u64, b: u64) -> u64 {
    a.div_ceil(b)
}

fn random_layer<R: Rng>(rng: &mut R, sys: &SystemDescription) -> Layer {
    let eb = [1u64, 2, 4][rng.random_range(0..3)];
    let c = rng.random_range(1..=96);
    let h = rng.random_range(4..=24);
    let w = rng.random_range(4..=24);
    let x = format!("[[tensors]]\nname = \"x\"\nshape = [{c}, {h}, {w}]\nelement_bytes = {eb}\n");
    let (rows, cols) = (sys.nce.rows, sys.nce.cols);
    match rng.random_range(0..5) {
        0 => {
            let oc = rng.random_range(1..=128);
            let k = rng.random_range(1..=3);
            let stride = rng.random_range(1..=2);
            let dil = rng.random_range(1..=2);
            let pad = rng.random_range(0..=2);
            let (oh, ow) = (out_extent(h, k, stride, pad, dil), out_extent(w, k, stride, pad, dil));
            let read = c * span(oh, stride, pad, dil, k, h) * span(ow, stride, pad, dil, k, w) * eb;
            Layer {
                toml: format!(
                    "{x}[[tensors]]\nname = \"k\"\nshape = [{oc}, {c}, {k}, {k}]\nelement_bytes = {eb}\n\
                     [[layers]]\nname = \"L\"\nkind = \"Conv2d\"\n\
                     attrs = {{ kernel_h = {k}, kernel_w = {k}, stride = {stride}, dilation = {dil}, padding = {pad}, in_channels = {c}, out_channels = {oc} }}\n\
                     inputs = [\"x\", \"k\"]\noutput = \"y\"\n"
                ),
                expect: (
                    vec![read],
                    oc * c * k * k * eb,
                    oc * oh * ow * eb,
                    ceil(c, rows) * ceil(oc, cols) * oh * ow * k * k,
                ),
            }
        }
        1 => {
            let out = rng.random_range(1..=200);
            let n = c * h * w;
            Layer {
                toml: format!(
                    "{x}[[tensors]]\nname = \"k\"\nshape = [{out}, {n}]\nelement_bytes = {eb}\n\
                     [[layers]]\nname = \"L\"\nkind = \"Dense\"\n\
                     attrs = {{ in_channels = {n}, out_channels = {out} }}\ninputs = [\"x\", \"k\"]\noutput = \"y\"\n"
                ),
                expect: (vec![n * eb], out * n * eb, out * eb, ceil(n, rows) * ceil(out, cols)),
            }
        }
        2 => {
            let k = rng.random_range(2..=3);
            let stride = rng.random_range(1..=3);
            let (oh, ow) = (out_extent(h, k, stride, 0, 1), out_extent(w, k, stride, 0, 1));
            let read = c * span(oh, stride, 0, 1, k, h) * span(ow, stride, 0, 1, k, w) * eb;
            Layer {
                toml: format!(
                    "{x}[[layers]]\nname = \"L\"\nkind = \"Pooling\"\n\
                     attrs = {{ kernel_h = {k}, kernel_w = {k}, stride = {stride} }}\ninputs = [\"x\"]\noutput = \"y\"\n"
                ),
                expect: (vec![read], 0, c * oh * ow * eb, ceil(c * oh * ow, cols)),
            }
        }
        3 => {
            let f = rng.random_range(1..=4);
            Layer {
                toml: format!(
                    "{x}[[layers]]\nname = \"L\"\nkind = \"Upscaling\"\nattrs = {{ factor = {f} }}\n\
                     inputs = [\"x\"]\noutput = \"y\"\n"
                ),
                expect: (vec![c * h * w * eb], 0, c * h * w * f * f * eb, ceil(c * h * w * f * f, cols)),
            }
        }
        _ => {
            let n = c * h * w;
            Layer {
                toml: format!(
                    "{x}[[tensors]]\nname = \"x2\"\nshape = [{c}, {h}, {w}]\nelement_bytes = {eb}\n\
                     [[layers]]\nname = \"L\"\nkind = \"Elementwise\"\ninputs = [\"x\", \"x2\"]\noutput = \"y\"\n"
                ),
                expect: (vec![n * eb, n * eb], 0, n * eb, ceil(n, cols)),
            }
        }
    }
}

fn closed_form() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for case in 0..20 {
        let sys = system(
            rng.random_range(1..=64),
            rng.random_range(1..=128),
            [100_000_000, 250_000_000, 333_000_000][rng.random_range(0..3)],
            1 << rng.random_range(0..5),
            [100_000_000, 250_000_000, 400_000_000][rng.random_range(0..3)],
            rng.random_range(0..8),
            rng.random_range(0..8),
            1 << 40,
        );
        let layer = random_layer(&mut rng, &sys);
        let net = load_network(&layer.toml).map_err(|e| format!("case {case}: {e}"))?;
        let tiling = tile_layer(&net.layers()[0], &net, &sys).map_err(|e| e.to_string())?;
        ensure(tiling.tile == tiling.full, || format!("case {case}: not a single tile"))?;

        let (reads, weights, ofmap, cycles) = layer.expect;
        let dma = |bytes: u64| ps(sys.dma.setup_cycles + ceil(bytes, sys.bus.bytes_per_cycle), sys.bus.freq_hz);
        let overhead = ps(sys.hkp.dispatch_overhead_cycles, sys.bus.freq_hz);
        let tasks = reads.len() as u64 + 3;
        // Serialized loads, then compute, then store; the window opens at
        // the first task's start, after one dispatch overhead.
        let expected = reads.iter().map(|&b| dma(b)).sum::<u64>()
            + dma(weights)
            + ps(cycles, sys.nce.freq_hz)
            + dma(ofmap)
            + (tasks - 1) * overhead;

        let tg = compile(&net, &sys).map_err(|e| e.to_string())?;
        let trace = simulate(&tg, &sys);
        let reports = layer_reports(&trace, &tg, &net, &sys).map_err(|e| e.to_string())?;
        let got = reports[0].latency.ps();
        ensure(got == expected, || {
            format!("case {case} ({:?}): simulated {got} ps, closed form {expected} ps", net.layers()[0].kind)
        })?;
    }
    Ok("20 single-tile layers match to the picosecond".into())
}

fn scheduler_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for case in 0..1000 {
        let tg = random_taskgraph(&mut rng, 8);
        let sys = random_system(&mut rng);
        let engine = simulate(&tg, &sys).makespan().ps();
        let reference = brute_force_makespan(&tg, &sys);
        ensure(engine == reference, || format!("graph {case}: engine {engine} ps, reference {reference} ps"))?;
    }
    Ok("1000 graphs, makespans identical".into())
}

fn invariants() -> Outcome {
    let mut runner = TestRunner::new(Config {
        cases: 1000,
        failure_persistence: None,
        ..Config::default()
    });
    let counter = std::cell::Cell::new(0u32);
    runner
        .run(&proptest::num::u64::ANY, |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let tg = random_taskgraph(&mut rng, 12);
            let sys = random_system(&mut rng);
            let free = is_uncontended(&tg);
            counter.set(counter.get() + u32::from(free));
            check_trace(&tg, &sys, &simulate(&tg, &sys), free)
                .map_err(proptest::test_runner::TestCaseError::fail)?;
            let chain = random_chain(&mut rng, 10);
            check_trace(&chain, &sys, &simulate(&chain, &sys), true)
                .map_err(proptest::test_runner::TestCaseError::fail)
        })
        .map_err(|e| e.to_string())?;
    Ok(format!("1000 cases (+1000 chains), {} naturally uncontended graphs", counter.get()))
}

fn accounting() -> Outcome {
    let net = dilated_vgg();
    let sys = paper_like();
    let tg = compile(&net, &sys).map_err(|e| e.to_string())?;
    let mut stored: HashMap<&str, u64> = HashMap::new();
    let mut cycles: HashMap<&str, u64> = HashMap::new();
    for t in tg.tasks() {
        match t.kind {
            TaskKind::DmaStore => *stored.entry(&t.layer).or_default() += t.cost,
            TaskKind::Compute => *cycles.entry(&t.layer).or_default() += t.cost,
            TaskKind::DmaLoad => {}
        }
    }
    let array = sys.nce.rows * sys.nce.cols;
    let mut exact = 0;
    for layer in net.layers() {
        let name = layer.name.as_str();
        let ofmap = net.output_of(layer).bytes();
        ensure(stored.get(name) == Some(&ofmap), || format!("{name}: stored {:?} of {ofmap} B", stored.get(name)))?;
        let implied = cycles[name] * array;
        let macs = net.mac_count(layer);
        ensure(implied >= macs, || format!("{name}: implied {implied} < {macs} MACs"))?;
        if matches!(layer.kind, LayerKind::Conv2d | LayerKind::Dense) {
            let tiling = tile_layer(layer, &net, &sys).map_err(|e| e.to_string())?;
            let aligned = tiling.output_tiles().all(|o| {
                tiling.chunks(&o).iter().all(|c| {
                    let e = c.extent();
                    e.in_c % sys.nce.rows == 0 && e.out_c % sys.nce.cols == 0
                })
            });
            if aligned {
                ensure(implied == macs, || format!("{name}: aligned tiles but {implied} != {macs}"))?;
                exact += 1;
            }
        }
    }
    Ok(format!("{} layers covered, {exact} aligned layers exact", net.layers().len()))
}

fn qualitative() -> Outcome {
    let net = dilated_vgg();
    let sys = paper_like();
    let tg = compile(&net, &sys).map_err(|e| e.to_string())?;
    let a = analyze(&simulate(&tg, &sys), &tg, &net, &sys, 0.9).map_err(|e| e.to_string())?;
    let class: HashMap<&str, Boundedness> =
        a.layers.iter().zip(&a.classes).map(|(r, &c)| (r.layer.as_str(), c)).collect();
    let deep: Vec<_> = (0..=5)
        .map(|i| format!("Conv4_{i}"))
        .filter(|n| class.get(n.as_str()) == Some(&Boundedness::ComputeBound))
        .collect();
    let neither: Vec<_> = ["Dense1", "Upscaling", "Conv1_1"]
        .into_iter()
        .filter(|n| class.get(n) == Some(&Boundedness::Neither))
        .collect();
    ensure(!deep.is_empty() && !neither.is_empty(), || format!("compute-bound {deep:?}, neither {neither:?}"))?;
    Ok(format!("compute-bound {}; neither {}", deep.join(","), neither.join(",")))
}

fn main() {
    let criteria: [Criterion; 7] = [
        ("AC1", "end-to-end determinism and runtime", determinism),
        ("AC2", "peak ops and roofline ceiling", peak_and_roof),
        ("AC3", "single-layer closed form", closed_form),
        ("AC4", "brute-force scheduler equivalence", scheduler_oracle),
        ("AC5", "trace invariants", invariants),
        ("AC6", "compiler accounting", accounting),
        ("AC7", "qualitative roofline classes", qualitative),
    ];
    let mut failed = 0;
    for (id, name, check) in criteria {
        match check() {
            Ok(detail) => println!("{id} PASS {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("{id} FAIL {name}: {why}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
