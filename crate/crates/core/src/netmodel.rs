//! Dense feed-forward networks.
//!
//! Layers are indexed from the output: layer `0` holds the single output node
//! and layer `L` is the input layer. The weight matrix stored for layer `l`
//! maps activations of layer `l + 1` onto the pre-activations of layer `l`,
//! so it has shape `N_l x N_{l+1}`. Node indices in [`NodeRef`] are 1-based.
//!
//! On disk a network is a JSON weight file whose `layers` array runs from the
//! input towards the output (see [`WeightFile`]); the loader reverses it.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("cannot read weight file: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot parse weight file: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("unsupported format_version {0} (expected {FORMAT_VERSION})")]
    Version(u32),
    #[error("weight file has no layers")]
    Empty,
    #[error("unknown activation `{0}` (expected identity, sigmoid, relu or elu)")]
    UnknownActivation(String),
    #[error("shape mismatch in {field}: expected {expected}, found {found}")]
    Shape {
        field: String,
        expected: usize,
        found: usize,
    },
    #[error("non-finite value in {field}")]
    NonFinite { field: String },
    #[error("output layer must have exactly one node, found {0}")]
    OutputSize(usize),
    #[error("layer sizes must be positive ({field})")]
    ZeroSize { field: String },
    #[error("input vector has length {found}, network expects {expected}")]
    InputLength { expected: usize, found: usize },
    #[error("input vector contains a non-finite value")]
    NonFiniteInput,
    #[error("node ({layer}, {index}) is outside the network")]
    NodeOutOfRange { layer: usize, index: usize },
    #[error("gradient of a layer-{target} node needs a strictly lower layer, got layer {wrt}")]
    LayerOrder { target: usize, wrt: usize },
}

/// Address of a network node: `layer` counts up from the output, `index` is 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeRef {
    pub layer: usize,
    pub index: usize,
}

impl NodeRef {
    pub fn new(layer: usize, index: usize) -> Self {
        NodeRef { layer, index }
    }

    /// The single output node `n_{0,1}`.
    pub fn output() -> Self {
        NodeRef { layer: 0, index: 1 }
    }
}

impl fmt::Display for NodeRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.layer, self.index)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Sigmoid,
    Relu,
    /// Exponential linear unit with alpha = 1.
    Elu,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Sigmoid => "sigmoid",
            Activation::Relu => "relu",
            Activation::Elu => "elu",
        }
    }

    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
            Activation::Relu => z.max(0.0),
            Activation::Elu => {
                if z > 0.0 {
                    z
                } else {
                    z.exp_m1()
                }
            }
        }
    }

    /// Derivative at pre-activation `z`. ReLU uses 0 at exactly `z == 0`.
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Sigmoid => {
                let s = self.apply(z);
                s * (1.0 - s)
            }
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Elu => {
                if z > 0.0 {
                    1.0
                } else {
                    z.exp()
                }
            }
        }
    }
}

impl FromStr for Activation {
    type Err = NetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "identity" => Ok(Activation::Identity),
            "sigmoid" => Ok(Activation::Sigmoid),
            "relu" => Ok(Activation::Relu),
            "elu" => Ok(Activation::Elu),
            other => Err(NetError::UnknownActivation(other.to_string())),
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One affine map plus activation, producing layer `l` from layer `l + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    rows: usize,
    cols: usize,
    /// Row-major `rows x cols`.
    weights: Vec<f64>,
    bias: Vec<f64>,
    activation: Activation,
}

impl DenseLayer {
    pub fn new(
        weights: Vec<Vec<f64>>,
        bias: Vec<f64>,
        activation: Activation,
    ) -> Result<Self, NetError> {
        let rows = weights.len();
        if rows == 0 {
            return Err(NetError::ZeroSize {
                field: "weights".into(),
            });
        }
        let cols = weights[0].len();
        if cols == 0 {
            return Err(NetError::ZeroSize {
                field: "weights[0]".into(),
            });
        }
        for (r, row) in weights.iter().enumerate() {
            if row.len() != cols {
                return Err(NetError::Shape {
                    field: format!("weights[{r}]"),
                    expected: cols,
                    found: row.len(),
                });
            }
        }
        if bias.len() != rows {
            return Err(NetError::Shape {
                field: "bias".into(),
                expected: rows,
                found: bias.len(),
            });
        }
        let flat: Vec<f64> = weights.into_iter().flatten().collect();
        if flat.iter().any(|w| !w.is_finite()) {
            return Err(NetError::NonFinite {
                field: "weights".into(),
            });
        }
        if bias.iter().any(|b| !b.is_finite()) {
            return Err(NetError::NonFinite {
                field: "bias".into(),
            });
        }
        Ok(DenseLayer {
            rows,
            cols,
            weights: flat,
            bias,
            activation,
        })
    }

    pub fn out_size(&self) -> usize {
        self.rows
    }

    pub fn in_size(&self) -> usize {
        self.cols
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    /// Weights feeding output node `row` (0-based), one entry per input node.
    pub fn row(&self, row: usize) -> &[f64] {
        &self.weights[row * self.cols..(row + 1) * self.cols]
    }

    fn pre_activation(&self, input: &[f64]) -> Vec<f64> {
        (0..self.rows)
            .map(|r| {
                self.row(r)
                    .iter()
                    .zip(input)
                    .map(|(w, x)| w * x)
                    .sum::<f64>()
                    + self.bias[r]
            })
            .collect()
    }
}

/// A validated network in output-first layer order.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    /// `layers[l]` produces layer `l` from layer `l + 1`.
    layers: Vec<DenseLayer>,
}

impl Network {
    /// Builds a network from layers given output-first (`layers[0]` produces the output).
    pub fn from_layers(layers: Vec<DenseLayer>) -> Result<Self, NetError> {
        if layers.is_empty() {
            return Err(NetError::Empty);
        }
        if layers[0].out_size() != 1 {
            return Err(NetError::OutputSize(layers[0].out_size()));
        }
        for l in 1..layers.len() {
            if layers[l].out_size() != layers[l - 1].in_size() {
                return Err(NetError::Shape {
                    field: format!("layer {l} output size"),
                    expected: layers[l - 1].in_size(),
                    found: layers[l].out_size(),
                });
            }
        }
        Ok(Network { layers })
    }

    /// Number of weight layers `L`; the input layer has index `L`.
    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    /// `N_0 .. N_L`, output first.
    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes: Vec<usize> = self.layers.iter().map(DenseLayer::out_size).collect();
        sizes.push(self.input_size());
        sizes
    }

    pub fn layer_size(&self, layer: usize) -> Option<usize> {
        match layer.cmp(&self.depth()) {
            std::cmp::Ordering::Less => Some(self.layers[layer].out_size()),
            std::cmp::Ordering::Equal => Some(self.input_size()),
            std::cmp::Ordering::Greater => None,
        }
    }

    pub fn input_size(&self) -> usize {
        self.layers[self.depth() - 1].in_size()
    }

    /// The map producing layer `l` from layer `l + 1`.
    pub fn layer(&self, l: usize) -> &DenseLayer {
        &self.layers[l]
    }

    /// `W_{l,l+1}(i, j)` with 1-based `i` (layer `l`) and `j` (layer `l + 1`).
    pub fn weight(&self, l: usize, i: usize, j: usize) -> f64 {
        self.layers[l].row(i - 1)[j - 1]
    }

    pub fn check_node(&self, node: NodeRef) -> Result<(), NetError> {
        match self.layer_size(node.layer) {
            Some(n) if node.index >= 1 && node.index <= n => Ok(()),
            _ => Err(NetError::NodeOutOfRange {
                layer: node.layer,
                index: node.index,
            }),
        }
    }

    fn check_input(&self, x: &[f64]) -> Result<(), NetError> {
        if x.len() != self.input_size() {
            return Err(NetError::InputLength {
                expected: self.input_size(),
                found: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(NetError::NonFiniteInput);
        }
        Ok(())
    }

    /// Activations of every layer; index `l` of the result is layer `l`
    /// (so the last entry is `x` itself and the first is the output).
    pub fn forward(&self, x: &[f64]) -> Result<Vec<Vec<f64>>, NetError> {
        Ok(self.forward_full(x)?.activations)
    }

    fn forward_full(&self, x: &[f64]) -> Result<ForwardPass, NetError> {
        self.check_input(x)?;
        let depth = self.depth();
        let mut activations = vec![Vec::new(); depth + 1];
        let mut pre = vec![Vec::new(); depth];
        activations[depth] = x.to_vec();
        for l in (0..depth).rev() {
            let layer = &self.layers[l];
            let z = layer.pre_activation(&activations[l + 1]);
            activations[l] = z.iter().map(|&v| layer.activation.apply(v)).collect();
            pre[l] = z;
        }
        Ok(ForwardPass { activations, pre })
    }

    /// Signed gradient of `a_target` with respect to every node of `wrt_layer`,
    /// evaluated at input `x` by reverse accumulation.
    pub fn gradient(
        &self,
        target: NodeRef,
        wrt_layer: usize,
        x: &[f64],
    ) -> Result<Vec<f64>, NetError> {
        self.check_node(target)?;
        if wrt_layer <= target.layer || wrt_layer > self.depth() {
            return Err(NetError::LayerOrder {
                target: target.layer,
                wrt: wrt_layer,
            });
        }
        let pass = self.forward_full(x)?;
        let mut grad = vec![0.0; self.layers[target.layer].out_size()];
        grad[target.index - 1] = 1.0;
        for l in target.layer..wrt_layer {
            let layer = &self.layers[l];
            let delta: Vec<f64> = grad
                .iter()
                .zip(&pass.pre[l])
                .map(|(g, &z)| g * layer.activation.derivative(z))
                .collect();
            let mut next = vec![0.0; layer.in_size()];
            for (r, d) in delta.iter().enumerate() {
                if *d == 0.0 {
                    continue;
                }
                for (acc, w) in next.iter_mut().zip(layer.row(r)) {
                    *acc += d * w;
                }
            }
            grad = next;
        }
        Ok(grad)
    }

    /// SHA-256 of the canonical weight-file serialization, hex encoded.
    pub fn digest(&self) -> String {
        let canonical =
            serde_json::to_vec(&WeightFile::from(self)).expect("weight file always serializes");
        hex::encode(Sha256::digest(&canonical))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&WeightFile::from(self))
            .expect("weight file always serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, NetError> {
        let file: WeightFile = serde_json::from_str(text)?;
        Network::try_from(file)
    }
}

struct ForwardPass {
    activations: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
}

/// Reads and validates a weight file.
pub fn load_network(path: impl AsRef<Path>) -> Result<Network, NetError> {
    let text = fs::read_to_string(path)?;
    Network::from_json(&text)
}

/// On-disk weight file. `layers` runs input to output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightFile {
    pub format_version: u32,
    pub layers: Vec<WeightFileLayer>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightFileLayer {
    pub in_size: usize,
    pub out_size: usize,
    /// `out_size` rows of `in_size` entries each.
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    pub activation: String,
}

impl TryFrom<WeightFile> for Network {
    type Error = NetError;

    fn try_from(file: WeightFile) -> Result<Self, NetError> {
        if file.format_version != FORMAT_VERSION {
            return Err(NetError::Version(file.format_version));
        }
        if file.layers.is_empty() {
            return Err(NetError::Empty);
        }
        let count = file.layers.len();
        let mut layers = Vec::with_capacity(count);
        // File position k (input-first) becomes paper layer count - 1 - k.
        for (k, entry) in file.layers.into_iter().enumerate() {
            let ctx = format!("layers[{k}]");
            if entry.in_size == 0 {
                return Err(NetError::ZeroSize {
                    field: format!("{ctx}.in_size"),
                });
            }
            if entry.out_size == 0 {
                return Err(NetError::ZeroSize {
                    field: format!("{ctx}.out_size"),
                });
            }
            if entry.weights.len() != entry.out_size {
                return Err(NetError::Shape {
                    field: format!("{ctx}.weights rows"),
                    expected: entry.out_size,
                    found: entry.weights.len(),
                });
            }
            for (r, row) in entry.weights.iter().enumerate() {
                if row.len() != entry.in_size {
                    return Err(NetError::Shape {
                        field: format!("{ctx}.weights[{r}] columns"),
                        expected: entry.in_size,
                        found: row.len(),
                    });
                }
                if row.iter().any(|w| !w.is_finite()) {
                    return Err(NetError::NonFinite {
                        field: format!("{ctx}.weights[{r}]"),
                    });
                }
            }
            if entry.bias.len() != entry.out_size {
                return Err(NetError::Shape {
                    field: format!("{ctx}.bias"),
                    expected: entry.out_size,
                    found: entry.bias.len(),
                });
            }
            if entry.bias.iter().any(|b| !b.is_finite()) {
                return Err(NetError::NonFinite {
                    field: format!("{ctx}.bias"),
                });
            }
            if let Some(prev) = layers.last().map(|l: &DenseLayer| l.out_size()) {
                if entry.in_size != prev {
                    return Err(NetError::Shape {
                        field: format!("{ctx}.in_size"),
                        expected: prev,
                        found: entry.in_size,
                    });
                }
            }
            let activation: Activation = entry.activation.parse()?;
            layers.push(DenseLayer::new(entry.weights, entry.bias, activation)?);
        }
        layers.reverse();
        Network::from_layers(layers)
    }
}

impl From<&Network> for WeightFile {
    fn from(net: &Network) -> Self {
        let layers = net
            .layers
            .iter()
            .rev()
            .map(|layer| WeightFileLayer {
                in_size: layer.cols,
                out_size: layer.rows,
                weights: (0..layer.rows).map(|r| layer.row(r).to_vec()).collect(),
                bias: layer.bias.clone(),
                activation: layer.activation.name().to_string(),
            })
            .collect();
        WeightFile {
            format_version: FORMAT_VERSION,
            layers,
        }
    }
}
