//! Per-layer reports, roofline placement, boundedness classification and
//! trace export.
//!
//! A layer's window spans from the earliest start to the latest end of its
//! tasks. Busy fractions count every interval on a resource that falls
//! inside the window, whichever layer it belongs to, so they describe how
//! occupied the hardware was while the layer ran. Windows of pipelined
//! layers overlap and per-layer latencies may sum above the makespan.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::Serialize;
use thiserror::Error;

use crate::compiler::{Resource, TaskGraph};
use crate::graph::DnnGraph;
use crate::simengine::{SimTime, SimTrace};
use crate::sysdesc::SystemDescription;

/// Default busy-fraction threshold for [`classify`].
pub const DEFAULT_THETA: f64 = 0.9;

/// Relative slack allowed above the roofline for floating-point rounding.
pub const ROOFLINE_EPSILON: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("trace has {trace} intervals but the task graph has {tasks} tasks")]
    TaskCountMismatch { trace: usize, tasks: usize },
    #[error("trace interval for unknown task {0}")]
    UnknownTask(u32),
    #[error("task {task} belongs to unknown layer `{layer}`")]
    UnknownLayer { task: u32, layer: String },
    #[error("layer `{0}` has no tasks in the task graph")]
    MissingLayer(String),
    #[error("threshold must be in (0, 1], got {0}")]
    InvalidTheta(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Boundedness {
    ComputeBound,
    CommunicationBound,
    Neither,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerReport {
    pub layer: String,
    pub start: SimTime,
    pub end: SimTime,
    pub latency: SimTime,
    pub macs: u64,
    /// Two operations per MAC.
    pub ops: u64,
    /// Bytes actually moved by the layer's DMA tasks.
    pub dram_bytes: u64,
    /// Bytes if every tensor crossed the bus once.
    pub min_dram_bytes: u64,
    pub achieved_ops_per_sec: f64,
    /// ops per DRAM byte; infinite when no bytes move.
    pub operational_intensity: f64,
    pub nce_busy: SimTime,
    pub bus_busy: SimTime,
    pub nce_busy_fraction: f64,
    pub bus_busy_fraction: f64,
}

fn ratio(num: SimTime, den: SimTime) -> f64 {
    if den == SimTime::ZERO {
        0.0
    } else {
        num.ps() as f64 / den.ps() as f64
    }
}

fn achieved(ops: u64, latency: SimTime) -> f64 {
    match (ops, latency.ps()) {
        (0, _) => 0.0,
        (_, 0) => f64::INFINITY,
        (ops, ps) => ops as f64 / (ps as f64 * 1e-12),
    }
}

fn intensity(ops: u64, bytes: u64) -> f64 {
    if bytes == 0 {
        f64::INFINITY
    } else {
        ops as f64 / bytes as f64
    }
}

/// Resource occupancy clipped to `[start, end)`, per resource.
fn busy_within(trace: &SimTrace, start: SimTime, end: SimTime) -> [SimTime; 2] {
    let mut busy = [SimTime::ZERO; 2];
    for iv in trace.intervals() {
        let lo = iv.start.max(start);
        let hi = iv.end.min(end);
        if hi > lo {
            busy[iv.resource.index()] = busy[iv.resource.index()] + (hi - lo);
        }
    }
    busy
}

fn build_report(
    layer: String,
    start: SimTime,
    end: SimTime,
    macs: u64,
    dram_bytes: u64,
    min_dram_bytes: u64,
    trace: &SimTrace,
) -> LayerReport {
    let latency = end - start;
    let ops = 2 * macs;
    let [nce_busy, bus_busy] = busy_within(trace, start, end);
    LayerReport {
        layer,
        start,
        end,
        latency,
        macs,
        ops,
        dram_bytes,
        min_dram_bytes,
        achieved_ops_per_sec: achieved(ops, latency),
        operational_intensity: intensity(ops, dram_bytes),
        nce_busy,
        bus_busy,
        nce_busy_fraction: ratio(nce_busy, latency),
        bus_busy_fraction: ratio(bus_busy, latency),
    }
}

/// One report per layer, in graph order.
pub fn layer_reports(
    trace: &SimTrace,
    tg: &TaskGraph,
    graph: &DnnGraph,
    sys: &SystemDescription,
) -> Result<Vec<LayerReport>, AnalysisError> {
    let _ = sys;
    if trace.intervals().len() != tg.len() {
        return Err(AnalysisError::TaskCountMismatch {
            trace: trace.intervals().len(),
            tasks: tg.len(),
        });
    }
    let index: HashMap<&str, usize> = graph
        .layers()
        .iter()
        .enumerate()
        .map(|(i, l)| (l.name.as_str(), i))
        .collect();
    // (start, end, dram bytes) per layer
    let mut acc: Vec<Option<(SimTime, SimTime, u64)>> = vec![None; graph.layers().len()];
    for iv in trace.intervals() {
        if iv.task_id as usize >= tg.len() {
            return Err(AnalysisError::UnknownTask(iv.task_id));
        }
        let task = tg.task(iv.task_id);
        let &li = index.get(task.layer.as_str()).ok_or_else(|| AnalysisError::UnknownLayer {
            task: task.id,
            layer: task.layer.clone(),
        })?;
        let bytes = if task.kind.is_dma() { task.cost } else { 0 };
        let entry = acc[li].get_or_insert((iv.start, iv.end, 0));
        entry.0 = entry.0.min(iv.start);
        entry.1 = entry.1.max(iv.end);
        entry.2 += bytes;
    }
    graph
        .layers()
        .iter()
        .zip(acc)
        .map(|(layer, a)| {
            let (start, end, bytes) = a.ok_or_else(|| AnalysisError::MissingLayer(layer.name.clone()))?;
            Ok(build_report(
                layer.name.clone(),
                start,
                end,
                graph.mac_count(layer),
                bytes,
                graph.min_dram_traffic_bytes(layer),
                trace,
            ))
        })
        .collect()
}

/// Whole-inference row: window `[0, makespan]`.
pub fn total_report(trace: &SimTrace, reports: &[LayerReport]) -> LayerReport {
    build_report(
        "TOTAL".to_string(),
        SimTime::ZERO,
        trace.makespan(),
        reports.iter().map(|r| r.macs).sum(),
        reports.iter().map(|r| r.dram_bytes).sum(),
        reports.iter().map(|r| r.min_dram_bytes).sum(),
        trace,
    )
}

/// ComputeBound when the NCE is busy for at least `theta` of the window
/// and at least as much as the bus; CommunicationBound when the bus is
/// busy for at least `theta` and strictly more than the NCE; Neither
/// otherwise.
pub fn classify(report: &LayerReport, theta: f64) -> Result<Boundedness, AnalysisError> {
    if !(theta > 0.0 && theta <= 1.0) {
        return Err(AnalysisError::InvalidTheta(theta));
    }
    let (nce, bus) = (report.nce_busy_fraction, report.bus_busy_fraction);
    Ok(if nce >= theta && nce >= bus {
        Boundedness::ComputeBound
    } else if bus >= theta && bus > nce {
        Boundedness::CommunicationBound
    } else {
        Boundedness::Neither
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RooflinePoint {
    pub layer: String,
    /// Operational intensity, ops/byte.
    pub x: f64,
    /// Achieved ops/s.
    pub y: f64,
    /// Share of the summed layer latencies.
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Roofline {
    pub peak_ops_per_sec: f64,
    pub peak_bandwidth_bytes_per_sec: f64,
    /// Intensity where the bandwidth slope meets the compute ceiling.
    pub ridge_intensity: f64,
    pub points: Vec<RooflinePoint>,
}

impl Roofline {
    /// `min(peak, intensity * bandwidth)`.
    pub fn attainable(&self, intensity: f64) -> f64 {
        attainable(self.peak_ops_per_sec, self.peak_bandwidth_bytes_per_sec, intensity)
    }

    /// Whether every point lies under the roof, with relative slack `eps`.
    pub fn points_under_roof(&self, eps: f64) -> bool {
        self.points.iter().all(|p| p.y <= self.attainable(p.x) * (1.0 + eps))
    }
}

pub fn attainable(peak_ops: f64, bandwidth: f64, intensity: f64) -> f64 {
    if intensity.is_infinite() {
        peak_ops
    } else {
        peak_ops.min(intensity * bandwidth)
    }
}

/// Place each layer on the roofline. Weights are latency shares and sum
/// to one.
pub fn roofline(reports: &[LayerReport], sys: &SystemDescription) -> Roofline {
    let peak = sys.peak_ops_per_sec();
    let bw = sys.peak_bandwidth_bytes_per_sec();
    let total: u64 = reports.iter().map(|r| r.latency.ps()).sum();
    let points = reports
        .iter()
        .map(|r| RooflinePoint {
            layer: r.layer.clone(),
            x: r.operational_intensity,
            y: r.achieved_ops_per_sec,
            weight: if total == 0 {
                1.0 / reports.len() as f64
            } else {
                r.latency.ps() as f64 / total as f64
            },
        })
        .collect();
    Roofline {
        peak_ops_per_sec: peak,
        peak_bandwidth_bytes_per_sec: bw,
        ridge_intensity: peak / bw,
        points,
    }
}

/// Everything the analysis stage derives from one simulation run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Analysis {
    pub theta: f64,
    pub layers: Vec<LayerReport>,
    pub classes: Vec<Boundedness>,
    pub total: LayerReport,
    pub roofline: Roofline,
}

pub fn analyze(
    trace: &SimTrace,
    tg: &TaskGraph,
    graph: &DnnGraph,
    sys: &SystemDescription,
    theta: f64,
) -> Result<Analysis, AnalysisError> {
    let layers = layer_reports(trace, tg, graph, sys)?;
    let classes = layers
        .iter()
        .map(|r| classify(r, theta))
        .collect::<Result<Vec<_>, _>>()?;
    let total = total_report(trace, &layers);
    let roofline = roofline(&layers, sys);
    Ok(Analysis {
        theta,
        layers,
        classes,
        total,
        roofline,
    })
}

const CSV_HEADER: &str = "layer,start_ps,end_ps,latency_ps,macs,ops,dram_bytes,min_dram_bytes,\
achieved_ops_per_sec,operational_intensity,nce_busy_fraction,bus_busy_fraction,class";

fn csv_row(out: &mut String, r: &LayerReport, class: Boundedness) {
    writeln!(
        out,
        "{},{},{},{},{},{},{},{},{},{},{},{},{:?}",
        r.layer,
        r.start.ps(),
        r.end.ps(),
        r.latency.ps(),
        r.macs,
        r.ops,
        r.dram_bytes,
        r.min_dram_bytes,
        r.achieved_ops_per_sec,
        r.operational_intensity,
        r.nce_busy_fraction,
        r.bus_busy_fraction,
        class
    )
    .expect("writing to a String");
}

/// Report table (CSV, one row per layer plus a TOTAL row) and its JSON
/// mirror.
pub fn export_reports(analysis: &Analysis) -> (String, String) {
    let mut csv = String::from(CSV_HEADER);
    csv.push('\n');
    for (r, &c) in analysis.layers.iter().zip(&analysis.classes) {
        csv_row(&mut csv, r, c);
    }
    let total_class = classify(&analysis.total, analysis.theta).unwrap_or(Boundedness::Neither);
    csv_row(&mut csv, &analysis.total, total_class);

    #[derive(Serialize)]
    struct Row<'a> {
        #[serde(flatten)]
        report: &'a LayerReport,
        class: Boundedness,
    }
    #[derive(Serialize)]
    struct Doc<'a> {
        theta: f64,
        layers: Vec<Row<'a>>,
        total: Row<'a>,
    }
    let doc = Doc {
        theta: analysis.theta,
        layers: analysis
            .layers
            .iter()
            .zip(&analysis.classes)
            .map(|(report, &class)| Row { report, class })
            .collect(),
        total: Row {
            report: &analysis.total,
            class: total_class,
        },
    };
    let json = serde_json::to_string_pretty(&doc).expect("reports serialize") + "\n";
    (csv, json)
}

/// Plot-ready roofline document: roof parameters plus one point per layer.
pub fn export_roofline(analysis: &Analysis) -> String {
    #[derive(Serialize)]
    struct Point<'a> {
        #[serde(flatten)]
        point: &'a RooflinePoint,
        attainable: f64,
        class: Boundedness,
    }
    #[derive(Serialize)]
    struct Doc<'a> {
        peak_ops_per_sec: f64,
        peak_bandwidth_bytes_per_sec: f64,
        ridge_intensity: f64,
        points: Vec<Point<'a>>,
    }
    let r = &analysis.roofline;
    let doc = Doc {
        peak_ops_per_sec: r.peak_ops_per_sec,
        peak_bandwidth_bytes_per_sec: r.peak_bandwidth_bytes_per_sec,
        ridge_intensity: r.ridge_intensity,
        points: r
            .points
            .iter()
            .zip(&analysis.classes)
            .map(|(point, &class)| Point {
                point,
                attainable: r.attainable(point.x),
                class,
            })
            .collect(),
    };
    serde_json::to_string_pretty(&doc).expect("roofline serializes") + "\n"
}

/// Lane (thread id) of a resource in the Gantt export.
pub fn lane(resource: Resource) -> u32 {
    match resource {
        Resource::Nce => 1,
        Resource::Bus => 2,
    }
}

/// Trace Event Format document: a JSON array with one complete ("X")
/// event per interval. Timestamps and durations are microseconds; each
/// resource is a thread lane of process 1.
pub fn export_gantt(trace: &SimTrace, tg: &TaskGraph) -> String {
    let mut out = String::from("[");
    for (i, iv) in trace.intervals().iter().enumerate() {
        let task = tg.task(iv.task_id);
        let event = serde_json::json!({
            "name": format!("{} {}", task.layer, task.kind),
            "cat": task.layer,
            "ph": "X",
            "ts": iv.start.as_us_f64(),
            "dur": iv.duration().as_us_f64(),
            "pid": 1,
            "tid": lane(iv.resource),
            "args": {
                "task": task.id,
                "kind": task.kind,
                "layer": task.layer,
                "tile": task.tile,
                "cost": task.cost,
                "resource": iv.resource,
            },
        });
        out += if i == 0 { "\n  " } else { ",\n  " };
        out += &event.to_string();
    }
    out += if trace.intervals().is_empty() { "]\n" } else { "\n]\n" };
    out
}
