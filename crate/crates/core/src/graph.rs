//! Input network representation.
//!
//! A [`DnnGraph`] is a set of named tensors plus a list of layers connected
//! through tensor producer/consumer links. Graphs are built from a TOML
//! network document (see [`load_network`]); every tensor shape is inferred
//! and checked during construction, so a `DnnGraph` value is always valid.

use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap};
use std::cmp::Reverse;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Bundled DilatedVGG-style network description.
pub const DILATED_VGG_TOML: &str = include_str!("../data/dilated_vgg.toml");

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GraphError {
    #[error("network parse error: {0}")]
    Parse(String),
    #[error("duplicate tensor `{0}`")]
    DuplicateTensor(String),
    #[error("duplicate layer `{0}`")]
    DuplicateLayer(String),
    #[error("tensor `{tensor}` is produced by both `{first}` and `{second}`")]
    MultipleProducers {
        tensor: String,
        first: String,
        second: String,
    },
    #[error("tensor `{tensor}` consumed by layer `{layer}` is never declared or produced")]
    DanglingTensor { tensor: String, layer: String },
    #[error("input tensor `{0}` has no shape or element size")]
    MissingShape(String),
    #[error("tensor `{tensor}`: {reason}")]
    InvalidTensor { tensor: String, reason: String },
    #[error("layer `{layer}`: {reason}")]
    InvalidLayer { layer: String, reason: String },
    #[error("cycle in network through layer `{0}`")]
    Cycle(String),
    #[error("layer `{layer}`: shape conflict on `{tensor}`, expected {expected:?}, found {found:?}")]
    ShapeConflict {
        layer: String,
        tensor: String,
        expected: Vec<u64>,
        found: Vec<u64>,
    },
    #[error("unknown layer `{0}`")]
    UnknownLayer(String),
}

/// A named tensor with a concrete shape.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Tensor {
    name: String,
    shape: Vec<u64>,
    element_bytes: u32,
    bytes: u64,
}

impl Tensor {
    pub fn new(
        name: impl Into<String>,
        shape: Vec<u64>,
        element_bytes: u32,
    ) -> Result<Self, GraphError> {
        let name = name.into();
        let invalid = |reason: String| GraphError::InvalidTensor {
            tensor: name.clone(),
            reason,
        };
        if shape.is_empty() {
            return Err(invalid("shape must have at least one extent".into()));
        }
        if let Some(e) = shape.iter().find(|&&e| e == 0) {
            return Err(invalid(format!("extent {e} must be >= 1")));
        }
        if element_bytes == 0 {
            return Err(invalid("element_bytes must be >= 1".into()));
        }
        let bytes = shape
            .iter()
            .try_fold(u64::from(element_bytes), |acc, &e| acc.checked_mul(e))
            .ok_or_else(|| invalid("byte size overflows u64".into()))?;
        Ok(Tensor {
            name,
            shape,
            element_bytes,
            bytes,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn shape(&self) -> &[u64] {
        &self.shape
    }

    pub fn element_bytes(&self) -> u32 {
        self.element_bytes
    }

    pub fn elements(&self) -> u64 {
        self.bytes / u64::from(self.element_bytes)
    }

    /// `product(shape) * element_bytes`.
    pub fn bytes(&self) -> u64 {
        self.bytes
    }

    /// `(channels, height, width)` of a rank-3 feature map.
    pub fn chw(&self) -> Option<(u64, u64, u64)> {
        match self.shape[..] {
            [c, h, w] => Some((c, h, w)),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LayerKind {
    Conv2d,
    Dense,
    Upscaling,
    Pooling,
    Elementwise,
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Layer attributes as written in the network document. Which fields are
/// required or allowed depends on the layer kind.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerAttrs {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel_h: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel_w: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stride: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dilation: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub padding: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub in_channels: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_channels: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub factor: Option<u64>,
}

/// Sliding-window parameters shared by convolution and pooling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub kernel_h: u64,
    pub kernel_w: u64,
    pub stride: u64,
    pub dilation: u64,
    pub padding: u64,
}

impl Window {
    /// Output extent along one spatial axis, `None` if the dilated kernel
    /// does not fit into the padded input.
    pub fn out_extent(&self, input: u64, kernel: u64) -> Option<u64> {
        let span = self.dilation * (kernel - 1) + 1;
        let padded = input + 2 * self.padding;
        (padded >= span).then(|| (padded - span) / self.stride + 1)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerNode {
    pub name: String,
    pub kind: LayerKind,
    #[serde(default)]
    pub attrs: LayerAttrs,
    pub inputs: Vec<String>,
    pub output: String,
}

impl LayerNode {
    /// Window parameters for `Conv2d` and `Pooling`; defaults are stride 1,
    /// dilation 1, padding 0.
    pub fn window(&self) -> Option<Window> {
        match self.kind {
            LayerKind::Conv2d | LayerKind::Pooling => Some(Window {
                kernel_h: self.attrs.kernel_h?,
                kernel_w: self.attrs.kernel_w?,
                stride: self.attrs.stride.unwrap_or(1),
                dilation: self.attrs.dilation.unwrap_or(1),
                padding: self.attrs.padding.unwrap_or(0),
            }),
            _ => None,
        }
    }

    /// Whether `inputs[1]` is a weight tensor.
    pub fn has_weights(&self) -> bool {
        matches!(self.kind, LayerKind::Conv2d | LayerKind::Dense)
    }

    /// Feature-map inputs, i.e. everything except weights.
    pub fn data_inputs(&self) -> &[String] {
        if self.has_weights() {
            &self.inputs[..1]
        } else {
            &self.inputs
        }
    }

    pub fn weights(&self) -> Option<&str> {
        self.has_weights().then(|| self.inputs[1].as_str())
    }

    fn invalid(&self, reason: impl Into<String>) -> GraphError {
        GraphError::InvalidLayer {
            layer: self.name.clone(),
            reason: reason.into(),
        }
    }

    fn check_attrs(&self) -> Result<(), GraphError> {
        let a = &self.attrs;
        let present = [
            ("kernel_h", a.kernel_h),
            ("kernel_w", a.kernel_w),
            ("stride", a.stride),
            ("dilation", a.dilation),
            ("padding", a.padding),
            ("in_channels", a.in_channels),
            ("out_channels", a.out_channels),
            ("factor", a.factor),
        ];
        let (required, optional): (&[&str], &[&str]) = match self.kind {
            LayerKind::Conv2d => (
                &["kernel_h", "kernel_w", "in_channels", "out_channels"],
                &["stride", "dilation", "padding"],
            ),
            LayerKind::Pooling => (&["kernel_h", "kernel_w"], &["stride", "padding"]),
            LayerKind::Dense => (&["in_channels", "out_channels"], &[]),
            LayerKind::Upscaling => (&["factor"], &[]),
            LayerKind::Elementwise => (&[], &[]),
        };
        for (key, value) in present {
            match value {
                None if required.contains(&key) => {
                    return Err(self.invalid(format!("missing attribute `{key}`")))
                }
                Some(_) if !required.contains(&key) && !optional.contains(&key) => {
                    return Err(self.invalid(format!(
                        "attribute `{key}` does not apply to {}",
                        self.kind
                    )))
                }
                Some(0) if key != "padding" => {
                    return Err(self.invalid(format!("attribute `{key}` must be >= 1")))
                }
                _ => {}
            }
        }
        let arity_ok = match self.kind {
            LayerKind::Conv2d | LayerKind::Dense => self.inputs.len() == 2,
            LayerKind::Pooling | LayerKind::Upscaling => self.inputs.len() == 1,
            LayerKind::Elementwise => !self.inputs.is_empty(),
        };
        if !arity_ok {
            return Err(self.invalid(format!(
                "{} layer cannot take {} inputs",
                self.kind,
                self.inputs.len()
            )));
        }
        Ok(())
    }

    /// Infer the output shape from the input tensors (in `inputs` order).
    fn infer_output(&self, inputs: &[&Tensor]) -> Result<Vec<u64>, GraphError> {
        let feature_map = |t: &Tensor| {
            t.chw().ok_or_else(|| {
                self.invalid(format!(
                    "input `{}` must be a (channels, height, width) feature map, got {:?}",
                    t.name(),
                    t.shape()
                ))
            })
        };
        let conflict = |tensor: &Tensor, expected: Vec<u64>| GraphError::ShapeConflict {
            layer: self.name.clone(),
            tensor: tensor.name().to_string(),
            expected,
            found: tensor.shape().to_vec(),
        };
        match self.kind {
            LayerKind::Conv2d => {
                let win = self.window().expect("checked attrs");
                let (c, h, w) = feature_map(inputs[0])?;
                let in_c = self.attrs.in_channels.expect("checked attrs");
                let out_c = self.attrs.out_channels.expect("checked attrs");
                if c != in_c {
                    return Err(conflict(inputs[0], vec![in_c, h, w]));
                }
                let wshape = vec![out_c, in_c, win.kernel_h, win.kernel_w];
                if inputs[1].shape() != wshape.as_slice() {
                    return Err(conflict(inputs[1], wshape));
                }
                let oh = win.out_extent(h, win.kernel_h);
                let ow = win.out_extent(w, win.kernel_w);
                match (oh, ow) {
                    (Some(oh), Some(ow)) => Ok(vec![out_c, oh, ow]),
                    _ => Err(self.invalid("dilated kernel larger than padded input")),
                }
            }
            LayerKind::Pooling => {
                let win = self.window().expect("checked attrs");
                let (c, h, w) = feature_map(inputs[0])?;
                match (win.out_extent(h, win.kernel_h), win.out_extent(w, win.kernel_w)) {
                    (Some(oh), Some(ow)) => Ok(vec![c, oh, ow]),
                    _ => Err(self.invalid("pooling window larger than padded input")),
                }
            }
            LayerKind::Dense => {
                let in_f = self.attrs.in_channels.expect("checked attrs");
                let out_f = self.attrs.out_channels.expect("checked attrs");
                if inputs[0].elements() != in_f {
                    return Err(self.invalid(format!(
                        "input `{}` has {} elements, expected {in_f}",
                        inputs[0].name(),
                        inputs[0].elements()
                    )));
                }
                let wshape = vec![out_f, in_f];
                if inputs[1].shape() != wshape.as_slice() {
                    return Err(conflict(inputs[1], wshape));
                }
                Ok(vec![out_f, 1, 1])
            }
            LayerKind::Upscaling => {
                let f = self.attrs.factor.expect("checked attrs");
                let (c, h, w) = feature_map(inputs[0])?;
                let oh = h.checked_mul(f);
                let ow = w.checked_mul(f);
                match (oh, ow) {
                    (Some(oh), Some(ow)) => Ok(vec![c, oh, ow]),
                    _ => Err(self.invalid("upscaled extent overflows")),
                }
            }
            LayerKind::Elementwise => {
                let first = inputs[0].shape().to_vec();
                if let Some(other) = inputs.iter().find(|t| t.shape() != first.as_slice()) {
                    return Err(conflict(other, first));
                }
                Ok(first)
            }
        }
    }
}

/// A tensor entry of the network document. Shapes of produced tensors may
/// be omitted and are then inferred.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorDecl {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shape: Option<Vec<u64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub element_bytes: Option<u32>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkDoc {
    #[serde(default)]
    pub tensors: Vec<TensorDecl>,
    #[serde(default)]
    pub layers: Vec<LayerNode>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DnnGraph {
    tensors: BTreeMap<String, Tensor>,
    layers: Vec<LayerNode>,
    producer: HashMap<String, usize>,
    /// Element size declared for produced tensors, if any.
    declared_bytes: BTreeMap<String, u32>,
}

/// Parse and validate a TOML network document.
pub fn load_network(text: &str) -> Result<DnnGraph, GraphError> {
    let doc: NetworkDoc = toml::from_str(text).map_err(|e| GraphError::Parse(e.to_string()))?;
    DnnGraph::from_doc(doc)
}

/// The bundled DilatedVGG-style example network.
pub fn dilated_vgg() -> DnnGraph {
    load_network(DILATED_VGG_TOML).expect("bundled network is valid")
}

/// Re-run shape inference on a graph. Idempotent on valid graphs.
pub fn infer_shapes(graph: &DnnGraph) -> Result<DnnGraph, GraphError> {
    let inputs = graph
        .tensors
        .values()
        .filter(|t| !graph.producer.contains_key(t.name()))
        .map(|t| TensorDecl {
            name: t.name.clone(),
            shape: Some(t.shape.clone()),
            element_bytes: Some(t.element_bytes),
        });
    let produced = graph
        .tensors
        .values()
        .filter(|t| graph.producer.contains_key(t.name()))
        .map(|t| TensorDecl {
            name: t.name.clone(),
            shape: Some(t.shape.clone()),
            element_bytes: graph.declared_bytes.get(t.name()).copied(),
        });
    DnnGraph::from_parts(inputs.chain(produced).collect(), graph.layers.clone())
}

impl DnnGraph {
    pub fn from_doc(doc: NetworkDoc) -> Result<Self, GraphError> {
        Self::from_parts(doc.tensors, doc.layers)
    }

    /// Validate a set of declarations and infer every tensor shape. Layers
    /// are stored in a topological order that is stable with respect to
    /// declaration order.
    pub fn from_parts(decls: Vec<TensorDecl>, layers: Vec<LayerNode>) -> Result<Self, GraphError> {
        let mut declared: BTreeMap<String, TensorDecl> = BTreeMap::new();
        for d in decls {
            if declared.contains_key(&d.name) {
                return Err(GraphError::DuplicateTensor(d.name));
            }
            declared.insert(d.name.clone(), d);
        }

        let mut seen_layers = BTreeSet::new();
        let mut producer_idx: HashMap<&str, usize> = HashMap::new();
        for (i, layer) in layers.iter().enumerate() {
            if !seen_layers.insert(layer.name.as_str()) {
                return Err(GraphError::DuplicateLayer(layer.name.clone()));
            }
            layer.check_attrs()?;
            if let Some(&j) = producer_idx.get(layer.output.as_str()) {
                return Err(GraphError::MultipleProducers {
                    tensor: layer.output.clone(),
                    first: layers[j].name.clone(),
                    second: layer.name.clone(),
                });
            }
            producer_idx.insert(&layer.output, i);
        }
        for layer in &layers {
            for input in &layer.inputs {
                if !declared.contains_key(input) && !producer_idx.contains_key(input.as_str()) {
                    return Err(GraphError::DanglingTensor {
                        tensor: input.clone(),
                        layer: layer.name.clone(),
                    });
                }
            }
        }

        let order = topo_order(&layers, &producer_idx)?;

        let mut tensors = BTreeMap::new();
        for d in declared.values() {
            if producer_idx.contains_key(d.name.as_str()) {
                continue;
            }
            match (&d.shape, d.element_bytes) {
                (Some(shape), Some(eb)) => {
                    tensors.insert(d.name.clone(), Tensor::new(&d.name, shape.clone(), eb)?);
                }
                _ => return Err(GraphError::MissingShape(d.name.clone())),
            }
        }

        let mut declared_bytes = BTreeMap::new();
        let mut ordered = Vec::with_capacity(layers.len());
        for &i in &order {
            let layer = &layers[i];
            let ins: Vec<&Tensor> = layer.inputs.iter().map(|n| &tensors[n]).collect();
            let shape = layer.infer_output(&ins)?;
            let decl = declared.get(&layer.output);
            if let Some(eb) = decl.and_then(|d| d.element_bytes) {
                declared_bytes.insert(layer.output.clone(), eb);
            }
            let eb = decl
                .and_then(|d| d.element_bytes)
                .unwrap_or_else(|| ins[0].element_bytes());
            let out = Tensor::new(&layer.output, shape, eb)?;
            if let Some(found) = decl.and_then(|d| d.shape.as_ref()) {
                if found.as_slice() != out.shape() {
                    return Err(GraphError::ShapeConflict {
                        layer: layer.name.clone(),
                        tensor: layer.output.clone(),
                        expected: out.shape().to_vec(),
                        found: found.clone(),
                    });
                }
            }
            tensors.insert(layer.output.clone(), out);
            ordered.push(layer.clone());
        }

        let producer = ordered
            .iter()
            .enumerate()
            .map(|(i, l)| (l.output.clone(), i))
            .collect();
        Ok(DnnGraph {
            tensors,
            layers: ordered,
            producer,
            declared_bytes,
        })
    }

    /// Layers in topological order.
    pub fn layers(&self) -> &[LayerNode] {
        &self.layers
    }

    pub fn layer(&self, name: &str) -> Option<&LayerNode> {
        self.layers.iter().find(|l| l.name == name)
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.tensors.values()
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    /// Layer producing `tensor`, `None` for graph inputs and weights.
    pub fn producer(&self, tensor: &str) -> Option<&LayerNode> {
        self.producer.get(tensor).map(|&i| &self.layers[i])
    }

    pub fn output_of(&self, layer: &LayerNode) -> &Tensor {
        &self.tensors[&layer.output]
    }

    pub fn input_of(&self, layer: &LayerNode, idx: usize) -> &Tensor {
        &self.tensors[&layer.inputs[idx]]
    }

    /// Multiply-accumulate count of a layer. Pooling, Upscaling and
    /// Elementwise count one operation per output element.
    pub fn mac_count(&self, layer: &LayerNode) -> u64 {
        let out = self.output_of(layer);
        match layer.kind {
            LayerKind::Conv2d => {
                let win = layer.window().expect("validated");
                let in_c = layer.attrs.in_channels.expect("validated");
                out.elements() * in_c * win.kernel_h * win.kernel_w
            }
            LayerKind::Dense => {
                layer.attrs.in_channels.expect("validated")
                    * layer.attrs.out_channels.expect("validated")
            }
            LayerKind::Pooling | LayerKind::Upscaling | LayerKind::Elementwise => out.elements(),
        }
    }

    /// Bytes moved if every distinct tensor of the layer crosses the bus
    /// exactly once.
    pub fn min_dram_traffic_bytes(&self, layer: &LayerNode) -> u64 {
        let names: BTreeSet<&str> = layer
            .inputs
            .iter()
            .map(String::as_str)
            .chain(std::iter::once(layer.output.as_str()))
            .collect();
        names.into_iter().map(|n| self.tensors[n].bytes()).sum()
    }
}

fn topo_order(layers: &[LayerNode], producer: &HashMap<&str, usize>) -> Result<Vec<usize>, GraphError> {
    let n = layers.len();
    let mut indegree = vec![0usize; n];
    let mut succs: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (i, layer) in layers.iter().enumerate() {
        let preds: BTreeSet<usize> = layer
            .inputs
            .iter()
            .filter_map(|t| producer.get(t.as_str()).copied())
            .collect();
        for p in preds {
            indegree[i] += 1;
            succs[p].push(i);
        }
    }
    let mut ready: BinaryHeap<Reverse<usize>> =
        (0..n).filter(|&i| indegree[i] == 0).map(Reverse).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(Reverse(i)) = ready.pop() {
        order.push(i);
        for &s in &succs[i] {
            indegree[s] -= 1;
            if indegree[s] == 0 {
                ready.push(Reverse(s));
            }
        }
    }
    if order.len() < n {
        let stuck = (0..n).find(|&i| indegree[i] > 0).expect("some layer is stuck");
        return Err(GraphError::Cycle(layers[stuck].name.clone()));
    }
    Ok(order)
}
