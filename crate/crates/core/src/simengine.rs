//! Discrete-event execution of a task graph on the NCE and BUS resources.
//!
//! The house-keeping processor dispatches ready tasks FIFO by
//! `(ready time, task id)`, one task per resource at a time. A dispatched
//! task reserves its resource immediately, waits the HKP dispatch overhead
//! and then occupies the resource for its service time:
//!
//! * DMA tasks: `setup_cycles + ceil(bytes / bytes_per_cycle)` bus cycles;
//! * compute tasks: their cycle cost at the NCE clock.
//!
//! Events at equal time are processed completions first (in task id
//! order), then dispatches. All time is integer picoseconds and every
//! cycle-to-time conversion rounds up.

use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap};
use std::fmt;
use std::ops::{Add, Sub};

use serde::{Deserialize, Serialize};

use crate::compiler::{Resource, Task, TaskGraph, TaskKind};
use crate::sysdesc::SystemDescription;

/// Simulated time in picoseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SimTime(pub u64);

const PS_PER_SEC: u128 = 1_000_000_000_000;

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);

    pub fn from_ps(ps: u64) -> Self {
        SimTime(ps)
    }

    pub fn from_ns(ns: u64) -> Self {
        SimTime(ns * 1000)
    }

    /// `ceil(cycles * 1e12 / freq_hz)` picoseconds.
    pub fn from_cycles(cycles: u64, freq_hz: u64) -> Self {
        let ps = (u128::from(cycles) * PS_PER_SEC).div_ceil(u128::from(freq_hz));
        SimTime(u64::try_from(ps).expect("simulated time overflows u64 picoseconds"))
    }

    pub fn ps(self) -> u64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 * 1e-12
    }

    pub fn as_us_f64(self) -> f64 {
        self.0 as f64 * 1e-6
    }
}

impl Add for SimTime {
    type Output = SimTime;
    fn add(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 + rhs.0)
    }
}

impl Sub for SimTime {
    type Output = SimTime;
    fn sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 - rhs.0)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.3} us", self.as_us_f64())
    }
}

/// Occupancy of one resource by one task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interval {
    pub task_id: u32,
    pub resource: Resource,
    pub start: SimTime,
    pub end: SimTime,
}

impl Interval {
    pub fn duration(&self) -> SimTime {
        self.end - self.start
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SimTrace {
    /// One interval per task, indexed by task id.
    intervals: Vec<Interval>,
    makespan: SimTime,
    busy: [SimTime; 2],
}

impl SimTrace {
    pub fn from_intervals(intervals: Vec<Interval>) -> Self {
        let makespan = intervals.iter().map(|i| i.end).max().unwrap_or(SimTime::ZERO);
        let mut busy = [SimTime::ZERO; 2];
        for i in &intervals {
            busy[i.resource.index()] = busy[i.resource.index()] + i.duration();
        }
        SimTrace {
            intervals,
            makespan,
            busy,
        }
    }

    pub fn intervals(&self) -> &[Interval] {
        &self.intervals
    }

    pub fn interval(&self, task_id: u32) -> Option<&Interval> {
        self.intervals.get(task_id as usize)
    }

    pub fn makespan(&self) -> SimTime {
        self.makespan
    }

    /// Total occupied time of a resource.
    pub fn busy(&self, resource: Resource) -> SimTime {
        self.busy[resource.index()]
    }

    /// JSON document, one interval per line.
    pub fn to_document(&self) -> String {
        let mut out = format!(
            "{{\n  \"makespan_ps\": {},\n  \"busy_ps\": {{\"NCE\": {}, \"BUS\": {}}},\n  \"intervals\": [",
            self.makespan.0,
            self.busy(Resource::Nce).0,
            self.busy(Resource::Bus).0
        );
        for (i, iv) in self.intervals.iter().enumerate() {
            out += if i == 0 { "\n    " } else { ",\n    " };
            out += &format!(
                "{{\"task\": {}, \"resource\": \"{}\", \"start_ps\": {}, \"end_ps\": {}}}",
                iv.task_id, iv.resource, iv.start.0, iv.end.0
            );
        }
        out += if self.intervals.is_empty() { "]\n}\n" } else { "\n  ]\n}\n" };
        out
    }
}

/// Dispatch overhead and service time of a task.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TaskTiming {
    pub overhead: SimTime,
    pub service: SimTime,
}

impl TaskTiming {
    pub fn total(&self) -> SimTime {
        self.overhead + self.service
    }
}

pub fn task_timing(task: &Task, sys: &SystemDescription) -> TaskTiming {
    let overhead = SimTime::from_cycles(sys.hkp.dispatch_overhead_cycles, sys.bus.freq_hz);
    let service = match task.kind {
        TaskKind::Compute => SimTime::from_cycles(task.cost, sys.nce.freq_hz),
        TaskKind::DmaLoad | TaskKind::DmaStore => {
            let cycles = sys.dma.setup_cycles + task.cost.div_ceil(sys.bus.bytes_per_cycle);
            SimTime::from_cycles(cycles, sys.bus.freq_hz)
        }
    };
    TaskTiming { overhead, service }
}

/// Run the task graph to completion. Deterministic for identical inputs.
pub fn simulate(tg: &TaskGraph, sys: &SystemDescription) -> SimTrace {
    let n = tg.len();
    let timing: Vec<TaskTiming> = tg.tasks().iter().map(|t| task_timing(t, sys)).collect();
    let resource = |id: u32| tg.task(id).resource.index();

    let mut waiting: Vec<usize> = (0..n as u32).map(|i| tg.predecessors(i).len()).collect();
    let mut ready_at = vec![SimTime::ZERO; n];
    let mut queues: [BTreeSet<(SimTime, u32)>; 2] = Default::default();
    let mut free = [true; 2];
    let mut completions: BinaryHeap<Reverse<(SimTime, u32)>> = BinaryHeap::new();
    let mut intervals: Vec<Option<Interval>> = vec![None; n];

    for id in (0..n as u32).filter(|&i| waiting[i as usize] == 0) {
        queues[resource(id)].insert((SimTime::ZERO, id));
    }

    let mut now = SimTime::ZERO;
    loop {
        for r in Resource::ALL {
            let ri = r.index();
            if !free[ri] {
                continue;
            }
            if let Some((_, id)) = queues[ri].pop_first() {
                let t = timing[id as usize];
                let start = now + t.overhead;
                let end = start + t.service;
                intervals[id as usize] = Some(Interval {
                    task_id: id,
                    resource: r,
                    start,
                    end,
                });
                free[ri] = false;
                completions.push(Reverse((end, id)));
            }
        }
        let Some(&Reverse((t, _))) = completions.peek() else { break };
        now = t;
        while let Some(&Reverse((t, id))) = completions.peek() {
            if t != now {
                break;
            }
            completions.pop();
            free[resource(id)] = true;
            for &s in tg.successors(id) {
                let si = s as usize;
                waiting[si] -= 1;
                ready_at[si] = ready_at[si].max(now);
                if waiting[si] == 0 {
                    queues[resource(s)].insert((ready_at[si], s));
                }
            }
        }
    }

    let intervals = intervals
        .into_iter()
        .map(|i| i.expect("an acyclic task graph runs every task"))
        .collect();
    SimTrace::from_intervals(intervals)
}

/// Longest path through the graph using uncontended task durations
/// (overhead included). A lower bound on the makespan.
pub fn critical_path_time(tg: &TaskGraph, sys: &SystemDescription) -> SimTime {
    let order = tg.topo_order().expect("task graphs are acyclic");
    let mut finish = vec![SimTime::ZERO; tg.len()];
    for id in order {
        let start = tg
            .predecessors(id)
            .iter()
            .map(|&p| finish[p as usize])
            .max()
            .unwrap_or(SimTime::ZERO);
        finish[id as usize] = start + task_timing(tg.task(id), sys).total();
    }
    finish.into_iter().max().unwrap_or(SimTime::ZERO)
}
