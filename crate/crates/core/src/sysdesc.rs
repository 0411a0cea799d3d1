//! System description: virtual hardware topology and physical annotations.
//!
//! The file is TOML with sections `nce`, `bus`, `dma` and `hkp`. All
//! frequencies are integer Hz, sizes are bytes, widths are bytes/cycle.
//!
//! ```toml
//! label = "example"
//!
//! [nce]
//! rows = 32
//! cols = 64
//! freq_hz = 250000000
//! ifmap_buffer_bytes = 262144
//! weight_buffer_bytes = 262144
//! ofmap_buffer_bytes = 131072
//!
//! [bus]
//! bytes_per_cycle = 8
//! freq_hz = 250000000
//!
//! [dma]
//! setup_cycles = 0
//!
//! [hkp]
//! dispatch_overhead_cycles = 0
//! ```

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Illustrative system with the 32x64 array at 250 MHz.
pub const PAPER_LIKE_SYS: &str = include_str!("../data/paper-like.sys");

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SysError {
    #[error("system description parse error: {0}")]
    Parse(String),
    #[error("missing field `{0}`")]
    Missing(&'static str),
    #[error("field `{field}` must be {expected}, got {value}")]
    Invalid {
        field: &'static str,
        expected: &'static str,
        value: i128,
    },
}

/// Neural compute engine: a `rows x cols` MAC array. Rows consume input
/// channels, columns produce output channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NceConfig {
    pub rows: u64,
    pub cols: u64,
    pub freq_hz: u64,
    pub ifmap_buffer_bytes: u64,
    pub weight_buffer_bytes: u64,
    pub ofmap_buffer_bytes: u64,
}

impl NceConfig {
    pub fn macs_per_cycle(&self) -> u64 {
        self.rows * self.cols
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BusConfig {
    pub bytes_per_cycle: u64,
    pub freq_hz: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DmaConfig {
    /// Per-transfer setup, in bus cycles.
    pub setup_cycles: u64,
}

impl DmaConfig {
    /// Transactions in flight on the interconnect. Fixed.
    pub const MAX_OUTSTANDING: u64 = 1;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct HkpConfig {
    /// Bus-clock cycles spent by the control processor before each task.
    pub dispatch_overhead_cycles: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SystemDescription {
    pub label: String,
    pub nce: NceConfig,
    pub bus: BusConfig,
    pub dma: DmaConfig,
    pub hkp: HkpConfig,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSystem {
    #[serde(default)]
    label: String,
    nce: Option<RawNce>,
    bus: Option<RawBus>,
    #[serde(default)]
    dma: RawDma,
    #[serde(default)]
    hkp: RawHkp,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNce {
    rows: Option<i128>,
    cols: Option<i128>,
    freq_hz: Option<i128>,
    ifmap_buffer_bytes: Option<i128>,
    weight_buffer_bytes: Option<i128>,
    ofmap_buffer_bytes: Option<i128>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBus {
    bytes_per_cycle: Option<i128>,
    freq_hz: Option<i128>,
}

#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDma {
    setup_cycles: Option<i128>,
    max_outstanding: Option<i128>,
}

#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawHkp {
    dispatch_overhead_cycles: Option<i128>,
}

fn positive(field: &'static str, v: Option<i128>) -> Result<u64, SysError> {
    let v = v.ok_or(SysError::Missing(field))?;
    match u64::try_from(v) {
        Ok(x) if x >= 1 => Ok(x),
        _ => Err(SysError::Invalid {
            field,
            expected: "a positive integer",
            value: v,
        }),
    }
}

fn nonnegative(field: &'static str, v: Option<i128>) -> Result<u64, SysError> {
    let v = v.unwrap_or(0);
    u64::try_from(v).map_err(|_| SysError::Invalid {
        field,
        expected: "a nonnegative integer",
        value: v,
    })
}

/// Parse and validate a system description document.
pub fn load_system(text: &str) -> Result<SystemDescription, SysError> {
    let raw: RawSystem = toml::from_str(text).map_err(|e| SysError::Parse(e.to_string()))?;
    let nce = raw.nce.ok_or(SysError::Missing("nce"))?;
    let bus = raw.bus.ok_or(SysError::Missing("bus"))?;
    if let Some(n) = raw.dma.max_outstanding {
        if n != 1 {
            return Err(SysError::Invalid {
                field: "dma.max_outstanding",
                expected: "1",
                value: n,
            });
        }
    }
    Ok(SystemDescription {
        label: raw.label,
        nce: NceConfig {
            rows: positive("nce.rows", nce.rows)?,
            cols: positive("nce.cols", nce.cols)?,
            freq_hz: positive("nce.freq_hz", nce.freq_hz)?,
            ifmap_buffer_bytes: positive("nce.ifmap_buffer_bytes", nce.ifmap_buffer_bytes)?,
            weight_buffer_bytes: positive("nce.weight_buffer_bytes", nce.weight_buffer_bytes)?,
            ofmap_buffer_bytes: positive("nce.ofmap_buffer_bytes", nce.ofmap_buffer_bytes)?,
        },
        bus: BusConfig {
            bytes_per_cycle: positive("bus.bytes_per_cycle", bus.bytes_per_cycle)?,
            freq_hz: positive("bus.freq_hz", bus.freq_hz)?,
        },
        dma: DmaConfig {
            setup_cycles: nonnegative("dma.setup_cycles", raw.dma.setup_cycles)?,
        },
        hkp: HkpConfig {
            dispatch_overhead_cycles: nonnegative(
                "hkp.dispatch_overhead_cycles",
                raw.hkp.dispatch_overhead_cycles,
            )?,
        },
    })
}

/// The bundled illustrative system.
pub fn paper_like() -> SystemDescription {
    load_system(PAPER_LIKE_SYS).expect("bundled system is valid")
}

impl SystemDescription {
    /// Render back to the document format accepted by [`load_system`].
    pub fn render(&self) -> String {
        let n = &self.nce;
        format!(
            "label = {label}\n\n\
             [nce]\nrows = {}\ncols = {}\nfreq_hz = {}\n\
             ifmap_buffer_bytes = {}\nweight_buffer_bytes = {}\nofmap_buffer_bytes = {}\n\n\
             [bus]\nbytes_per_cycle = {}\nfreq_hz = {}\n\n\
             [dma]\nsetup_cycles = {}\nmax_outstanding = {}\n\n\
             [hkp]\ndispatch_overhead_cycles = {}\n",
            n.rows,
            n.cols,
            n.freq_hz,
            n.ifmap_buffer_bytes,
            n.weight_buffer_bytes,
            n.ofmap_buffer_bytes,
            self.bus.bytes_per_cycle,
            self.bus.freq_hz,
            self.dma.setup_cycles,
            DmaConfig::MAX_OUTSTANDING,
            self.hkp.dispatch_overhead_cycles,
            label = toml::Value::String(self.label.clone()),
        )
    }

    /// `2 * rows * cols * nce.freq_hz`, exact.
    pub fn peak_ops_per_sec_exact(&self) -> u128 {
        2 * u128::from(self.nce.rows) * u128::from(self.nce.cols) * u128::from(self.nce.freq_hz)
    }

    /// Compute ceiling in ops/s, counting a MAC as two operations.
    pub fn peak_ops_per_sec(&self) -> f64 {
        self.peak_ops_per_sec_exact() as f64
    }

    /// `bus.bytes_per_cycle * bus.freq_hz`, exact.
    pub fn peak_bandwidth_exact(&self) -> u128 {
        u128::from(self.bus.bytes_per_cycle) * u128::from(self.bus.freq_hz)
    }

    /// Bandwidth ceiling in bytes/s.
    pub fn peak_bandwidth_bytes_per_sec(&self) -> f64 {
        self.peak_bandwidth_exact() as f64
    }
}
