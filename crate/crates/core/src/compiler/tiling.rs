//! Per-layer tiling against the on-chip buffer sizes.

use std::fmt;
use std::ops::Range;

use serde::Serialize;

use super::CompileError;
use crate::graph::{DnnGraph, LayerKind, LayerNode, Tensor, Window};
use crate::sysdesc::SystemDescription;

/// Extents of a tile (or of a whole layer) in the loop-nest dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct TileExtent {
    pub out_c: u64,
    pub out_h: u64,
    pub out_w: u64,
    /// Reduction channels. Mirrors `out_c` for kinds without a reduction.
    pub in_c: u64,
}

/// Concrete index ranges of one tile.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TileBox {
    pub oc: Range<u64>,
    pub oh: Range<u64>,
    pub ow: Range<u64>,
    pub ic: Range<u64>,
}

impl TileBox {
    pub fn extent(&self) -> TileExtent {
        TileExtent {
            out_c: len(&self.oc),
            out_h: len(&self.oh),
            out_w: len(&self.ow),
            in_c: len(&self.ic),
        }
    }
}

/// A box in `(channel, row, column)` coordinates of a tensor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Region {
    pub c: Range<u64>,
    pub h: Range<u64>,
    pub w: Range<u64>,
}

impl Region {
    pub fn is_empty(&self) -> bool {
        self.c.is_empty() || self.h.is_empty() || self.w.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Buffer {
    Ifmap,
    Weight,
    Ofmap,
}

impl fmt::Display for Buffer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Buffer::Ifmap => "ifmap",
            Buffer::Weight => "weight",
            Buffer::Ofmap => "ofmap",
        })
    }
}

/// Partition of a layer's output (and reduction channels) into tiles.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Tiling {
    pub layer: String,
    /// Full layer extents.
    pub full: TileExtent,
    /// Nominal tile extents; edge tiles may be smaller.
    pub tile: TileExtent,
    /// Whether `in_c` is a reduction dimension split into chunks.
    pub reduces: bool,
}

fn len(r: &Range<u64>) -> u64 {
    r.end - r.start
}

fn split(full: u64, tile: u64, i: u64) -> Range<u64> {
    let start = i * tile;
    start..(start + tile).min(full)
}

impl Tiling {
    pub fn count_out_c(&self) -> u64 {
        self.full.out_c.div_ceil(self.tile.out_c)
    }

    pub fn count_out_h(&self) -> u64 {
        self.full.out_h.div_ceil(self.tile.out_h)
    }

    pub fn count_out_w(&self) -> u64 {
        self.full.out_w.div_ceil(self.tile.out_w)
    }

    /// Reduction chunks per output tile.
    pub fn count_in_c(&self) -> u64 {
        if self.reduces {
            self.full.in_c.div_ceil(self.tile.in_c)
        } else {
            1
        }
    }

    pub fn output_tile_count(&self) -> u64 {
        self.count_out_c() * self.count_out_h() * self.count_out_w()
    }

    /// Output tiles in channel-major order; the position is the tile index.
    pub fn output_tiles(&self) -> impl Iterator<Item = TileBox> + '_ {
        let (nc, nh, nw) = (self.count_out_c(), self.count_out_h(), self.count_out_w());
        (0..nc).flat_map(move |c| {
            (0..nh).flat_map(move |h| {
                (0..nw).map(move |w| {
                    let oc = split(self.full.out_c, self.tile.out_c, c);
                    TileBox {
                        ic: oc.clone(),
                        oc,
                        oh: split(self.full.out_h, self.tile.out_h, h),
                        ow: split(self.full.out_w, self.tile.out_w, w),
                    }
                })
            })
        })
    }

    /// Reduction chunks of an output tile.
    pub fn chunks(&self, out: &TileBox) -> Vec<TileBox> {
        if !self.reduces {
            return vec![out.clone()];
        }
        (0..self.count_in_c())
            .map(|i| TileBox {
                ic: split(self.full.in_c, self.tile.in_c, i),
                ..out.clone()
            })
            .collect()
    }

    /// Indices of output tiles intersecting `region` of the output tensor.
    pub fn tiles_intersecting(&self, region: &Region) -> Vec<u32> {
        if region.is_empty() {
            return Vec::new();
        }
        let idx = |r: &Range<u64>, t: u64| (r.start / t)..=((r.end - 1) / t);
        let (nh, nw) = (self.count_out_h(), self.count_out_w());
        let mut out = Vec::new();
        for c in idx(&region.c, self.tile.out_c) {
            for h in idx(&region.h, self.tile.out_h) {
                for w in idx(&region.w, self.tile.out_w) {
                    out.push(((c * nh + h) * nw + w) as u32);
                }
            }
        }
        out
    }
}

/// `(c, h, w)` view of an arbitrary-rank tensor shape.
pub(crate) fn chw_of(shape: &[u64]) -> (u64, u64, u64) {
    match *shape {
        [n] => (n, 1, 1),
        [a, b] => (a, b, 1),
        [c, h, w] => (c, h, w),
        ref s => {
            let k = s.len();
            (s[..k - 2].iter().product(), s[k - 2], s[k - 1])
        }
    }
}

/// Input range touched by a sliding window over output range `o`.
fn window_range(o: &Range<u64>, input: u64, kernel: u64, win: &Window) -> Range<u64> {
    let lo = (o.start * win.stride) as i128 - win.padding as i128;
    let hi = ((o.end - 1) * win.stride) as i128 - win.padding as i128
        + (win.dilation * (kernel - 1)) as i128
        + 1;
    let lo = lo.clamp(0, input as i128) as u64;
    let hi = hi.clamp(0, input as i128) as u64;
    lo..hi.max(lo)
}

/// Loop-nest view of a layer used by tiling and lowering.
pub(crate) struct Geometry<'a> {
    pub layer: &'a LayerNode,
    pub full: TileExtent,
    pub reduces: bool,
    pub inputs: Vec<&'a Tensor>,
    pub weights: Option<&'a Tensor>,
    pub out_eb: u64,
}

impl<'a> Geometry<'a> {
    pub fn new(graph: &'a DnnGraph, layer: &'a LayerNode) -> Self {
        let out = graph.output_of(layer);
        let (c, h, w) = chw_of(out.shape());
        let inputs: Vec<&Tensor> = layer
            .data_inputs()
            .iter()
            .map(|n| graph.tensor(n).expect("validated graph"))
            .collect();
        let weights = layer.weights().map(|n| graph.tensor(n).expect("validated graph"));
        let (in_c, reduces) = match layer.kind {
            LayerKind::Conv2d | LayerKind::Dense => {
                (layer.attrs.in_channels.expect("validated graph"), true)
            }
            _ => (c, false),
        };
        Geometry {
            layer,
            full: TileExtent {
                out_c: c,
                out_h: h,
                out_w: w,
                in_c,
            },
            reduces,
            inputs,
            weights,
            out_eb: u64::from(out.element_bytes()),
        }
    }

    /// Region of data input `i` read by a tile, and its size in bytes.
    pub fn ifmap(&self, i: usize, tile: &TileBox) -> (Region, u64) {
        let input = self.inputs[i];
        let eb = u64::from(input.element_bytes());
        let (c, h, w) = chw_of(input.shape());
        let region = match self.layer.kind {
            LayerKind::Conv2d | LayerKind::Pooling => {
                let win = self.layer.window().expect("validated graph");
                let ch = if self.layer.kind == LayerKind::Conv2d {
                    tile.ic.clone()
                } else {
                    tile.oc.clone()
                };
                Region {
                    c: ch,
                    h: window_range(&tile.oh, h, win.kernel_h, &win),
                    w: window_range(&tile.ow, w, win.kernel_w, &win),
                }
            }
            LayerKind::Upscaling => {
                let f = self.layer.attrs.factor.expect("validated graph");
                Region {
                    c: tile.oc.clone(),
                    h: tile.oh.start / f..tile.oh.end.div_ceil(f),
                    w: tile.ow.start / f..tile.ow.end.div_ceil(f),
                }
            }
            LayerKind::Elementwise => Region {
                c: tile.oc.clone(),
                h: tile.oh.clone(),
                w: tile.ow.clone(),
            },
            LayerKind::Dense => {
                // Flattened input features; the dependency box covers every
                // channel touched by the feature range.
                let plane = h * w;
                let region = Region {
                    c: tile.ic.start / plane..tile.ic.end.div_ceil(plane).min(c),
                    h: 0..h,
                    w: 0..w,
                };
                return (region, len(&tile.ic) * eb);
            }
        };
        let bytes = len(&region.c) * len(&region.h) * len(&region.w) * eb;
        (region, bytes)
    }

    pub fn weight_bytes(&self, tile: &TileBox) -> u64 {
        let Some(w) = self.weights else { return 0 };
        let eb = u64::from(w.element_bytes());
        let k = match self.layer.window() {
            Some(win) => win.kernel_h * win.kernel_w,
            None => 1,
        };
        len(&tile.oc) * len(&tile.ic) * k * eb
    }

    pub fn ofmap_bytes(&self, tile: &TileBox) -> u64 {
        len(&tile.oc) * len(&tile.oh) * len(&tile.ow) * self.out_eb
    }

    /// Upper bound of a tile's footprint in each buffer, for nominal
    /// extents `t`. Every concrete tile with extents `<= t` fits in it.
    pub fn footprint(&self, t: &TileExtent) -> [u64; 3] {
        let ifmap: u64 = self
            .inputs
            .iter()
            .map(|input| {
                let eb = u64::from(input.element_bytes());
                let (_, h, w) = chw_of(input.shape());
                match self.layer.kind {
                    LayerKind::Conv2d | LayerKind::Pooling => {
                        let win = self.layer.window().expect("validated graph");
                        let rows = ((t.out_h - 1) * win.stride + win.dilation * (win.kernel_h - 1) + 1).min(h);
                        let cols = ((t.out_w - 1) * win.stride + win.dilation * (win.kernel_w - 1) + 1).min(w);
                        let ch = if self.reduces { t.in_c } else { t.out_c };
                        ch * rows * cols * eb
                    }
                    LayerKind::Upscaling => {
                        let f = self.layer.attrs.factor.expect("validated graph");
                        let span = |t: u64, full: u64| {
                            let s = if t.is_multiple_of(f) { t / f } else { t.div_ceil(f) + 1 };
                            s.min(full)
                        };
                        t.out_c * span(t.out_h, h) * span(t.out_w, w) * eb
                    }
                    LayerKind::Elementwise => t.out_c * t.out_h * t.out_w * eb,
                    LayerKind::Dense => t.in_c * eb,
                }
            })
            .sum();
        let weight = self.weights.map_or(0, |w| {
            let k = self.layer.window().map_or(1, |win| win.kernel_h * win.kernel_w);
            t.out_c * t.in_c * k * u64::from(w.element_bytes())
        });
        let ofmap = t.out_c * t.out_h * t.out_w * self.out_eb;
        [ifmap, weight, ofmap]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Dim {
    OutC,
    OutH,
    OutW,
    InC,
}

impl Dim {
    fn value(self, t: &TileExtent) -> u64 {
        match self {
            Dim::OutC => t.out_c,
            Dim::OutH => t.out_h,
            Dim::OutW => t.out_w,
            Dim::InC => t.in_c,
        }
    }

    fn get(self, t: &mut TileExtent) -> &mut u64 {
        match self {
            Dim::OutC => &mut t.out_c,
            Dim::OutH => &mut t.out_h,
            Dim::OutW => &mut t.out_w,
            Dim::InC => &mut t.in_c,
        }
    }
}

/// Seam for alternative tiling algorithms.
pub trait TilingStrategy {
    fn tile(&self, layer: &LayerNode, graph: &DnnGraph, sys: &SystemDescription) -> Result<Tiling, CompileError>;
}

/// Halve the first dimension (priority out_c, out_h, out_w, in_c) that is
/// larger than one and feeds a violated buffer, until every buffer fits.
#[derive(Debug, Clone, Copy, Default)]
pub struct GreedyHalving;

impl TilingStrategy for GreedyHalving {
    fn tile(&self, layer: &LayerNode, graph: &DnnGraph, sys: &SystemDescription) -> Result<Tiling, CompileError> {
        let geo = Geometry::new(graph, layer);
        let caps = [
            sys.nce.ifmap_buffer_bytes,
            sys.nce.weight_buffer_bytes,
            sys.nce.ofmap_buffer_bytes,
        ];
        let buffers = [Buffer::Ifmap, Buffer::Weight, Buffer::Ofmap];
        // Which dimensions each buffer's footprint depends on.
        let deps: [&[Dim]; 3] = match layer.kind {
            LayerKind::Conv2d => [
                &[Dim::OutH, Dim::OutW, Dim::InC],
                &[Dim::OutC, Dim::InC],
                &[Dim::OutC, Dim::OutH, Dim::OutW],
            ],
            LayerKind::Dense => [&[Dim::InC], &[Dim::OutC, Dim::InC], &[Dim::OutC]],
            _ => [
                &[Dim::OutC, Dim::OutH, Dim::OutW],
                &[],
                &[Dim::OutC, Dim::OutH, Dim::OutW],
            ],
        };
        let priority = [Dim::OutC, Dim::OutH, Dim::OutW, Dim::InC];
        let mut tile = geo.full;
        loop {
            let fp = geo.footprint(&tile);
            let violated: Vec<usize> = (0..3).filter(|&b| fp[b] > caps[b]).collect();
            let Some(&first) = violated.first() else { break };
            let dim = priority.iter().copied().find(|&d| {
                d.value(&tile) > 1 && violated.iter().any(|&b| deps[b].contains(&d))
            });
            match dim {
                Some(d) => {
                    let v = d.get(&mut tile);
                    *v = v.div_ceil(2);
                    if !geo.reduces {
                        tile.in_c = tile.out_c;
                    }
                }
                None => {
                    return Err(CompileError::Infeasible {
                        layer: layer.name.clone(),
                        buffer: buffers[first],
                        required: fp[first],
                        capacity: caps[first],
                    })
                }
            }
        }
        Ok(Tiling {
            layer: layer.name.clone(),
            full: geo.full,
            tile,
            reduces: geo.reduces,
        })
    }
}

/// Tile a layer with the default greedy-halving strategy.
pub fn tile_layer(layer: &LayerNode, graph: &DnnGraph, sys: &SystemDescription) -> Result<Tiling, CompileError> {
    GreedyHalving.tile(layer, graph, sys)
}

/// NCE cycles for one tile. Rows consume input channels, columns produce
/// output channels, one kernel position per cycle. Kinds without a
/// reduction process `cols` output elements per cycle.
pub fn compute_cycles(layer: &LayerNode, tile: &TileExtent, sys: &SystemDescription) -> u64 {
    let (rows, cols) = (sys.nce.rows, sys.nce.cols);
    match layer.kind {
        LayerKind::Conv2d => {
            let win = layer.window().expect("validated layer");
            tile.in_c.div_ceil(rows)
                * tile.out_c.div_ceil(cols)
                * tile.out_h
                * tile.out_w
                * win.kernel_h
                * win.kernel_w
        }
        LayerKind::Dense => tile.in_c.div_ceil(rows) * tile.out_c.div_ceil(cols),
        LayerKind::Pooling | LayerKind::Upscaling | LayerKind::Elementwise => {
            (tile.out_c * tile.out_h * tile.out_w).div_ceil(cols)
        }
    }
}
