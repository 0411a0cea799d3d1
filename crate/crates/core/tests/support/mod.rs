//! Shared generators and reference models for the integration tests.

#![allow(dead_code)]

use dnnperf::compiler::{Resource, Task, TaskGraph, TaskKind};
use dnnperf::sysdesc::{load_system, SystemDescription};
use rand::Rng;

#[allow(clippy::too_many_arguments)]
pub fn system(
    rows: u64,
    cols: u64,
    nce_hz: u64,
    bytes_per_cycle: u64,
    bus_hz: u64,
    setup: u64,
    overhead: u64,
    buffers: u64,
) -> SystemDescription {
    load_system(&format!(
        "[nce]\nrows = {rows}\ncols = {cols}\nfreq_hz = {nce_hz}\n\
         ifmap_buffer_bytes = {buffers}\nweight_buffer_bytes = {buffers}\nofmap_buffer_bytes = {buffers}\n\
         [bus]\nbytes_per_cycle = {bytes_per_cycle}\nfreq_hz = {bus_hz}\n\
         [dma]\nsetup_cycles = {setup}\n\
         [hkp]\ndispatch_overhead_cycles = {overhead}\n"
    ))
    .expect("generated system is valid")
}

const FREQS: [u64; 5] = [100_000_000, 200_000_000, 250_000_000, 333_000_000, 1_000_000_000];

pub fn random_system<R: Rng>(rng: &mut R) -> SystemDescription {
    system(
        rng.random_range(1..=64),
        rng.random_range(1..=128),
        FREQS[rng.random_range(0..FREQS.len())],
        1 << rng.random_range(0..5),
        FREQS[rng.random_range(0..FREQS.len())],
        rng.random_range(0..4),
        rng.random_range(0..4),
        1 << 30,
    )
}

/// Random DAG with `1..=max_tasks` tasks, every cost at least 1 and edges
/// only from lower to higher ids.
pub fn random_taskgraph<R: Rng>(rng: &mut R, max_tasks: usize) -> TaskGraph {
    let n = rng.random_range(1..=max_tasks);
    let density: f64 = rng.random_range(0.0..0.6);
    let tasks = (0..n as u32)
        .map(|id| {
            let kind = match rng.random_range(0..3) {
                0 => TaskKind::DmaLoad,
                1 => TaskKind::Compute,
                _ => TaskKind::DmaStore,
            };
            Task::new(id, kind, rng.random_range(1..=5_000), "l", 0)
        })
        .collect();
    let mut edges = Vec::new();
    for j in 0..n as u32 {
        for i in 0..j {
            if rng.random_bool(density) {
                edges.push((i, j));
            }
        }
    }
    TaskGraph::new(tasks, edges).expect("generated graph is valid")
}

/// Chain where consecutive tasks depend on each other: nothing ever waits
/// for a resource.
pub fn random_chain<R: Rng>(rng: &mut R, max_tasks: usize) -> TaskGraph {
    let n = rng.random_range(1..=max_tasks);
    let tasks = (0..n as u32)
        .map(|id| {
            let kind = if rng.random_bool(0.5) { TaskKind::Compute } else { TaskKind::DmaLoad };
            Task::new(id, kind, rng.random_range(1..=5_000), "l", 0)
        })
        .collect();
    TaskGraph::new(tasks, (1..n as u32).map(|i| (i - 1, i))).expect("chain is valid")
}

fn ceil_div(a: u128, b: u128) -> u128 {
    a.div_ceil(b)
}

/// Picoseconds for `cycles` at `hz`, rounded up.
pub fn ps(cycles: u64, hz: u64) -> u64 {
    ceil_div(u128::from(cycles) * 1_000_000_000_000, u128::from(hz)) as u64
}

/// (dispatch overhead, service) in picoseconds, from the timing rules.
pub fn reference_timing(task: &Task, sys: &SystemDescription) -> (u64, u64) {
    let overhead = ps(sys.hkp.dispatch_overhead_cycles, sys.bus.freq_hz);
    let service = match task.kind {
        TaskKind::Compute => ps(task.cost, sys.nce.freq_hz),
        _ => ps(
            sys.dma.setup_cycles + ceil_div(task.cost.into(), sys.bus.bytes_per_cycle.into()) as u64,
            sys.bus.freq_hz,
        ),
    };
    (overhead, service)
}

fn permutations(items: &[u32]) -> Vec<Vec<u32>> {
    if items.is_empty() {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        let mut rest = items.to_vec();
        let head = rest.remove(i);
        for mut tail in permutations(&rest) {
            tail.insert(0, head);
            out.push(tail);
        }
    }
    out
}

/// Per-task (ready, dispatch, end) for fixed per-resource service orders.
/// `None` when the orders contradict the dependencies.
fn evaluate(
    tg: &TaskGraph,
    timing: &[(u64, u64)],
    orders: &[Vec<u32>; 2],
) -> Option<Vec<(u64, u64, u64)>> {
    let n = tg.len();
    let mut done: Vec<Option<(u64, u64, u64)>> = vec![None; n];
    let mut head = [0usize; 2];
    let mut free_at = [0u64; 2];
    let mut progressed = true;
    while progressed {
        progressed = false;
        for r in 0..2 {
            let Some(&x) = orders[r].get(head[r]) else { continue };
            let preds = tg.predecessors(x);
            if preds.iter().any(|&p| done[p as usize].is_none()) {
                continue;
            }
            let ready = preds.iter().map(|&p| done[p as usize].unwrap().2).max().unwrap_or(0);
            let dispatch = ready.max(free_at[r]);
            let (o, s) = timing[x as usize];
            let end = dispatch + o + s;
            done[x as usize] = Some((ready, dispatch, end));
            free_at[r] = end;
            head[r] += 1;
            progressed = true;
        }
    }
    done.into_iter().collect()
}

/// Every task dispatched while an earlier-keyed task sat in the same queue
/// breaks FIFO by (ready time, id).
fn fifo_consistent(orders: &[Vec<u32>; 2], times: &[(u64, u64, u64)]) -> bool {
    orders.iter().all(|order| {
        order.iter().enumerate().all(|(i, &x)| {
            let (ready_x, dispatch_x, _) = times[x as usize];
            order[i + 1..].iter().all(|&y| {
                let ready_y = times[y as usize].0;
                !(ready_y <= dispatch_x && (ready_y, y) < (ready_x, x))
            })
        })
    })
}

/// Makespan by exhaustive search over per-resource dispatch orders,
/// keeping only those a FIFO-by-(ready time, id) dispatcher could produce.
pub fn brute_force_makespan(tg: &TaskGraph, sys: &SystemDescription) -> u64 {
    let timing: Vec<(u64, u64)> = tg.tasks().iter().map(|t| reference_timing(t, sys)).collect();
    let on = |r: Resource| -> Vec<u32> { tg.tasks().iter().filter(|t| t.resource == r).map(|t| t.id).collect() };
    let nce = permutations(&on(Resource::Nce));
    let bus = permutations(&on(Resource::Bus));
    let mut best: Option<u64> = None;
    for a in &nce {
        for b in &bus {
            let orders = [a.clone(), b.clone()];
            let Some(times) = evaluate(tg, &timing, &orders) else { continue };
            if !fifo_consistent(&orders, &times) {
                continue;
            }
            let makespan = times.iter().map(|t| t.2).max().unwrap_or(0);
            best = Some(best.map_or(makespan, |m| m.min(makespan)));
        }
    }
    best.expect("the FIFO schedule itself is always among the candidates")
}

/// Causality, per-resource exclusivity and the makespan bounds. With
/// `uncontended`, also requires the makespan to equal the critical path.
pub fn check_trace(
    tg: &TaskGraph,
    sys: &SystemDescription,
    trace: &dnnperf::simengine::SimTrace,
    uncontended: bool,
) -> Result<(), String> {
    use dnnperf::simengine::critical_path_time;
    if trace.intervals().len() != tg.len() {
        return Err(format!("{} intervals for {} tasks", trace.intervals().len(), tg.len()));
    }
    for &(p, s) in tg.edges() {
        let (pe, ss) = (trace.interval(p).unwrap().end, trace.interval(s).unwrap().start);
        if ss < pe {
            return Err(format!("task {s} starts at {ss} before predecessor {p} ends at {pe}"));
        }
    }
    for r in Resource::ALL {
        let mut iv: Vec<_> = trace.intervals().iter().filter(|i| i.resource == r).collect();
        iv.sort_by_key(|i| (i.start, i.end));
        for w in iv.windows(2) {
            if w[1].start < w[0].end {
                return Err(format!("tasks {} and {} overlap on {r}", w[0].task_id, w[1].task_id));
            }
        }
    }
    let makespan = trace.makespan();
    let busiest = trace.busy(Resource::Nce).max(trace.busy(Resource::Bus));
    if makespan < busiest {
        return Err(format!("makespan {makespan} below busiest resource {busiest}"));
    }
    let cp = critical_path_time(tg, sys);
    if makespan < cp {
        return Err(format!("makespan {makespan} below critical path {cp}"));
    }
    if uncontended && makespan != cp {
        return Err(format!("uncontended makespan {makespan} differs from critical path {cp}"));
    }
    Ok(())
}

/// Whether every pair of tasks on the same resource is ordered by the
/// dependencies, so no task ever waits for a busy resource.
pub fn is_uncontended(tg: &TaskGraph) -> bool {
    let n = tg.len();
    let mut reach = vec![vec![false; n]; n];
    for id in tg.topo_order().unwrap().into_iter().rev() {
        for &s in tg.successors(id) {
            reach[id as usize][s as usize] = true;
            let row = reach[s as usize].clone();
            for (k, r) in row.into_iter().enumerate() {
                reach[id as usize][k] |= r;
            }
        }
    }
    (0..n).all(|a| {
        (a + 1..n).all(|b| tg.tasks()[a].resource != tg.tasks()[b].resource || reach[a][b] || reach[b][a])
    })
}
