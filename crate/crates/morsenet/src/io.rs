//! Strict JSON file formats for networks and analysis reports.
//!
//! Networks travel as [`NetworkDocument`] (schema version 1, kind `"mlp"`
//! or `"node"`); analyses travel as [`ReportDocument`]. Parsing is strict:
//! unknown fields are rejected, shapes are validated with the offending
//! field named, and activation names are lowercase strings. Emission is
//! deterministic — struct fields serialize in a fixed order and every float
//! is printed with 17 significant digits, so identical inputs produce
//! byte-identical files and loading an emitted document reproduces the
//! in-memory value exactly.

use crate::linalg::{LinalgError, Matrix};
use crate::mlp::{Activation, ArchitectureReport, MLPNetwork, MlpError};
use crate::morse::{ClassReport, CriticalPoint};
use crate::node::{
    EmbeddingTarget, IntegratorConfig, NeuralODE, NodeError, NodePartition, VectorField,
};
use crate::normal_form::ReductionStep;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::io::Write as _;
use std::path::Path;
use thiserror::Error;

/// Errors from loading and emitting documents.
#[derive(Debug, Error)]
pub enum IoError {
    /// The file could not be read.
    #[error("cannot read {path}: {source}")]
    Read {
        path: String,
        #[source]
        source: std::io::Error,
    },
    /// The file could not be written.
    #[error("cannot write {path}: {source}")]
    Write {
        path: String,
        #[source]
        source: std::io::Error,
    },
    /// The text is not valid JSON or violates the schema.
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    /// A field's declared shape disagrees with its data.
    #[error("shape error in field {field}: {message}")]
    Shape { field: String, message: String },
    /// A schema-level constraint failed (version, kind, missing payload).
    #[error("schema violation: {0}")]
    Schema(String),
    /// Network validation rejected the parsed matrices.
    #[error(transparent)]
    Mlp(#[from] MlpError),
    /// Neural ODE validation rejected the parsed document.
    #[error(transparent)]
    Node(#[from] NodeError),
    /// Matrix construction rejected the parsed entries.
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

fn parse_error(err: &serde_json::Error) -> IoError {
    IoError::Parse { line: err.line(), column: err.column(), message: err.to_string() }
}

/// A matrix as stored on disk: explicit shape plus a flat row-major array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixDocument {
    /// Row count.
    pub rows: usize,
    /// Column count.
    pub cols: usize,
    /// Entries in row-major order; must have length rows·cols.
    pub data: Vec<f64>,
}

impl MatrixDocument {
    /// Encodes an in-memory matrix.
    pub fn from_matrix(m: &Matrix) -> Self {
        Self { rows: m.rows(), cols: m.cols(), data: m.entries().to_vec() }
    }

    /// Decodes into a validated matrix, naming `field` on shape errors.
    pub fn to_matrix(&self, field: &str) -> Result<Matrix, IoError> {
        if self.data.len() != self.rows * self.cols {
            return Err(IoError::Shape {
                field: field.to_string(),
                message: format!(
                    "declared {}×{} but data has {} entries",
                    self.rows,
                    self.cols,
                    self.data.len()
                ),
            });
        }
        Matrix::new(self.rows, self.cols, self.data.clone()).map_err(IoError::from)
    }
}

/// One MLP layer: inner weight/bias, activations, outer weight/bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpLayerDocument {
    /// Inner weight W_l (m_l × n_{l−1}).
    pub w: MatrixDocument,
    /// Inner bias b_l (length m_l).
    pub b: Vec<f64>,
    /// Lowercase activation names, one per hidden unit.
    pub activations: Vec<String>,
    /// Outer weight W̃_l (n_l × m_l).
    pub w_tilde: MatrixDocument,
    /// Outer bias b̃_l (length n_l).
    pub b_tilde: Vec<f64>,
}

/// Serialized scalar MLP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpDocument {
    /// Number of layers L; must equal the length of `layers`.
    #[serde(rename = "L")]
    pub layer_count: usize,
    /// Per-layer weights, biases, and activations.
    pub layers: Vec<MlpLayerDocument>,
}

impl MlpDocument {
    /// Encodes an in-memory network.
    pub fn from_network(net: &MLPNetwork) -> Self {
        let layers = (1..=net.layer_count())
            .map(|l| MlpLayerDocument {
                w: MatrixDocument::from_matrix(net.inner_weight(l)),
                b: net.inner_bias(l).to_vec(),
                activations: net
                    .layer_activations(l)
                    .iter()
                    .map(|a| a.name().to_string())
                    .collect(),
                w_tilde: MatrixDocument::from_matrix(net.outer_weight(l)),
                b_tilde: net.outer_bias(l).to_vec(),
            })
            .collect();
        Self { layer_count: net.layer_count(), layers }
    }

    /// Decodes and validates into an in-memory network.
    pub fn to_network(&self) -> Result<MLPNetwork, IoError> {
        if self.layer_count != self.layers.len() {
            return Err(IoError::Schema(format!(
                "L = {} but {} layers are present",
                self.layer_count,
                self.layers.len()
            )));
        }
        let mut inner_weights = Vec::new();
        let mut outer_weights = Vec::new();
        let mut inner_biases = Vec::new();
        let mut outer_biases = Vec::new();
        let mut activations = Vec::new();
        for (idx, layer) in self.layers.iter().enumerate() {
            let l = idx + 1;
            inner_weights.push(layer.w.to_matrix(&format!("W{l}"))?);
            outer_weights.push(layer.w_tilde.to_matrix(&format!("W_tilde{l}"))?);
            inner_biases.push(layer.b.clone());
            outer_biases.push(layer.b_tilde.clone());
            let parsed: Result<Vec<Activation>, IoError> = layer
                .activations
                .iter()
                .map(|name| {
                    Activation::from_name(name).ok_or_else(|| {
                        IoError::Schema(format!("unknown activation \"{name}\" in layer {l}"))
                    })
                })
                .collect();
            activations.push(parsed?);
        }
        Ok(MLPNetwork::new(
            inner_weights,
            outer_weights,
            inner_biases,
            outer_biases,
            activations,
        )?)
    }
}

/// Serialized embedding target Ψ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, tag = "kind", rename_all = "snake_case")]
pub enum TargetDocument {
    /// Ψ given by an MLP.
    Mlp {
        /// The target network.
        network: MlpDocument,
    },
    /// Ψ(x) = Σ (x_i − c_i)².
    SquaredDistance {
        /// The center c.
        center: Vec<f64>,
    },
    /// Ψ(x) = sin(k·x), one-dimensional.
    SineScaled {
        /// The frequency k.
        frequency: f64,
    },
    /// Ψ ≡ c.
    Constant {
        /// The constant value.
        value: f64,
        /// The input dimension.
        dim: usize,
    },
}

impl TargetDocument {
    /// Encodes an in-memory target.
    pub fn from_target(target: &EmbeddingTarget) -> Self {
        match target {
            EmbeddingTarget::Mlp(net) => {
                TargetDocument::Mlp { network: MlpDocument::from_network(net) }
            }
            EmbeddingTarget::SquaredDistance { center } => {
                TargetDocument::SquaredDistance { center: center.clone() }
            }
            EmbeddingTarget::SineScaled { frequency } => {
                TargetDocument::SineScaled { frequency: *frequency }
            }
            EmbeddingTarget::Constant { value, dim } => {
                TargetDocument::Constant { value: *value, dim: *dim }
            }
        }
    }

    /// Decodes into an in-memory target.
    pub fn to_target(&self) -> Result<EmbeddingTarget, IoError> {
        Ok(match self {
            TargetDocument::Mlp { network } => EmbeddingTarget::Mlp(network.to_network()?),
            TargetDocument::SquaredDistance { center } => {
                EmbeddingTarget::SquaredDistance { center: center.clone() }
            }
            TargetDocument::SineScaled { frequency } => {
                EmbeddingTarget::SineScaled { frequency: *frequency }
            }
            TargetDocument::Constant { value, dim } => {
                EmbeddingTarget::Constant { value: *value, dim: *dim }
            }
        })
    }
}

/// Serialized vector field of a neural ODE.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, tag = "kind", rename_all = "snake_case")]
pub enum FieldDocument {
    /// f(h) = A·h + c.
    AffineLinear {
        /// The matrix A.
        matrix: MatrixDocument,
        /// The offset c.
        offset: Vec<f64>,
    },
    /// f(h₁, h₂) = (0, exp(h₁)).
    ZeroExp,
    /// f(h) = h.
    Identity {
        /// State dimension.
        dim: usize,
    },
    /// f ≡ 0.
    Zero {
        /// State dimension.
        dim: usize,
    },
    /// One scalar MLP per component.
    MlpField {
        /// The component networks, each mapping the full state to ℝ.
        components: Vec<MlpDocument>,
    },
    /// (0, …, 0, Ψ(h₁,…,h_n)/T).
    Embedding {
        /// The embedded target map.
        target: TargetDocument,
        /// State dimension m.
        state_dim: usize,
        /// Final time T the last component is scaled by.
        final_time: f64,
    },
}

impl FieldDocument {
    /// Encodes an in-memory vector field.
    pub fn from_field(field: &VectorField) -> Self {
        match field {
            VectorField::AffineLinear { matrix, offset } => FieldDocument::AffineLinear {
                matrix: MatrixDocument::from_matrix(matrix),
                offset: offset.clone(),
            },
            VectorField::ZeroExp => FieldDocument::ZeroExp,
            VectorField::Identity { dim } => FieldDocument::Identity { dim: *dim },
            VectorField::Zero { dim } => FieldDocument::Zero { dim: *dim },
            VectorField::MlpField { components } => FieldDocument::MlpField {
                components: components.iter().map(MlpDocument::from_network).collect(),
            },
            VectorField::Embedding { target, state_dim, final_time } => {
                FieldDocument::Embedding {
                    target: TargetDocument::from_target(target),
                    state_dim: *state_dim,
                    final_time: *final_time,
                }
            }
        }
    }

    /// Decodes into an in-memory vector field.
    pub fn to_field(&self) -> Result<VectorField, IoError> {
        Ok(match self {
            FieldDocument::AffineLinear { matrix, offset } => VectorField::AffineLinear {
                matrix: matrix.to_matrix("field.matrix")?,
                offset: offset.clone(),
            },
            FieldDocument::ZeroExp => VectorField::ZeroExp,
            FieldDocument::Identity { dim } => VectorField::Identity { dim: *dim },
            FieldDocument::Zero { dim } => VectorField::Zero { dim: *dim },
            FieldDocument::MlpField { components } => VectorField::MlpField {
                components: components
                    .iter()
                    .map(MlpDocument::to_network)
                    .collect::<Result<_, _>>()?,
            },
            FieldDocument::Embedding { target, state_dim, final_time } => {
                VectorField::Embedding {
                    target: target.to_target()?,
                    state_dim: *state_dim,
                    final_time: *final_time,
                }
            }
        })
    }
}

/// Serialized neural ODE.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeDocument {
    /// Input dimension n.
    pub n: usize,
    /// State dimension m.
    pub m: usize,
    /// Inner weight W (m×n).
    pub w: MatrixDocument,
    /// Inner bias b (length m).
    pub b: Vec<f64>,
    /// Outer weight W̃ (1×m).
    pub w_tilde: MatrixDocument,
    /// Outer bias b̃.
    pub b_tilde: f64,
    /// Final time T.
    #[serde(rename = "T")]
    pub final_time: f64,
    /// The vector field of the initial value problem.
    pub field: FieldDocument,
}

impl NodeDocument {
    /// Encodes an in-memory neural ODE.
    pub fn from_node(node: &NeuralODE) -> Self {
        Self {
            n: node.input_dim(),
            m: node.state_dim(),
            w: MatrixDocument::from_matrix(node.inner_weight()),
            b: node.inner_bias().to_vec(),
            w_tilde: MatrixDocument::from_matrix(node.outer_weight()),
            b_tilde: node.outer_bias(),
            final_time: node.final_time(),
            field: FieldDocument::from_field(node.field()),
        }
    }

    /// Decodes and validates into an in-memory neural ODE with the default
    /// integrator configuration.
    pub fn to_node(&self) -> Result<NeuralODE, IoError> {
        let w = self.w.to_matrix("W")?;
        if w.rows() != self.m || w.cols() != self.n {
            return Err(IoError::Shape {
                field: "W".into(),
                message: format!(
                    "declared n = {}, m = {} but W is {}×{}",
                    self.n,
                    self.m,
                    w.rows(),
                    w.cols()
                ),
            });
        }
        let w_tilde = self.w_tilde.to_matrix("W_tilde")?;
        Ok(NeuralODE::new(
            w,
            self.b.clone(),
            w_tilde,
            self.b_tilde,
            self.final_time,
            self.field.to_field()?,
            IntegratorConfig::default(),
        )?)
    }
}

/// Top-level network file: schema version, kind, and the matching payload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkDocument {
    /// Schema version; only 1 is accepted.
    pub schema_version: u32,
    /// `"mlp"` or `"node"`; must match the payload that is present.
    pub kind: String,
    /// MLP payload, present exactly when kind = "mlp".
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mlp: Option<MlpDocument>,
    /// Neural ODE payload, present exactly when kind = "node".
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node: Option<NodeDocument>,
    /// Optional analysis box, one (lo, hi) pair per input coordinate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<Vec<(f64, f64)>>,
}

/// A loaded network: either kind, plus the optional domain from the file.
#[derive(Debug, Clone)]
pub enum NetworkObject {
    /// A scalar MLP.
    Mlp(MLPNetwork),
    /// A scalar neural ODE.
    Node(NeuralODE),
}

impl NetworkObject {
    /// Input dimension of either kind.
    pub fn input_dim(&self) -> usize {
        match self {
            NetworkObject::Mlp(net) => net.input_dim(),
            NetworkObject::Node(node) => node.input_dim(),
        }
    }
}

impl NetworkDocument {
    /// Wraps an MLP in a version-1 document.
    pub fn from_mlp(net: &MLPNetwork) -> Self {
        Self {
            schema_version: 1,
            kind: "mlp".into(),
            mlp: Some(MlpDocument::from_network(net)),
            node: None,
            domain: None,
        }
    }

    /// Wraps a neural ODE in a version-1 document.
    pub fn from_node(node: &NeuralODE) -> Self {
        Self {
            schema_version: 1,
            kind: "node".into(),
            mlp: None,
            node: Some(NodeDocument::from_node(node)),
            domain: None,
        }
    }

    /// Validates version, kind, and payload consistency, returning the
    /// in-memory network.
    pub fn to_object(&self) -> Result<NetworkObject, IoError> {
        if self.schema_version != 1 {
            return Err(IoError::Schema(format!(
                "unsupported schema version {}; only 1 is accepted",
                self.schema_version
            )));
        }
        match self.kind.as_str() {
            "mlp" => {
                let doc = self
                    .mlp
                    .as_ref()
                    .ok_or_else(|| IoError::Schema("kind is \"mlp\" but no mlp payload".into()))?;
                if self.node.is_some() {
                    return Err(IoError::Schema("kind is \"mlp\" but a node payload is present".into()));
                }
                Ok(NetworkObject::Mlp(doc.to_network()?))
            }
            "node" => {
                let doc = self.node.as_ref().ok_or_else(|| {
                    IoError::Schema("kind is \"node\" but no node payload".into())
                })?;
                if self.mlp.is_some() {
                    return Err(IoError::Schema("kind is \"node\" but an mlp payload is present".into()));
                }
                Ok(NetworkObject::Node(doc.to_node()?))
            }
            other => Err(IoError::Schema(format!(
                "unknown kind \"{other}\"; expected \"mlp\" or \"node\""
            ))),
        }
    }
}

/// Parses a network document from JSON text.
pub fn parse_network(text: &str) -> Result<NetworkDocument, IoError> {
    serde_json::from_str(text).map_err(|e| parse_error(&e))
}

/// Loads and validates a network file, returning the in-memory object and
/// the optional domain box stored alongside it.
pub fn load_network(path: &Path) -> Result<(NetworkObject, Option<Vec<(f64, f64)>>), IoError> {
    let text = std::fs::read_to_string(path).map_err(|source| IoError::Read {
        path: path.display().to_string(),
        source,
    })?;
    let doc = parse_network(&text)?;
    let object = doc.to_object()?;
    Ok((object, doc.domain))
}

/// Flow summary embedded in reports by the ode-flow command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowSummary {
    /// Evaluation point x.
    pub point: Vec<f64>,
    /// Terminal state h_{Wx+b}(T).
    pub terminal_state: Vec<f64>,
    /// Variational Jacobian Y(T).
    pub jacobian: MatrixDocument,
    /// ∫₀ᵀ tr(∂f/∂h) dr.
    pub trace_integral: f64,
    /// Accepted integration steps.
    pub steps: usize,
    /// Relative deviation of det Y(T) from exp(∫tr).
    pub liouville_residual: f64,
}

/// Analysis report written by the command-line tool.
///
/// Field order is fixed and floats are printed with 17 significant digits,
/// so identical analyses emit byte-identical files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct ReportDocument {
    /// SHA-256 hex digest of the input file's bytes.
    pub input_digest: String,
    /// Architecture partition of the input MLP, when applicable.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub architecture: Option<ArchitectureReport>,
    /// Architecture partition of the input neural ODE, when applicable.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node_partition: Option<NodePartition>,
    /// Class verdict with certification and search notes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class: Option<ClassReport>,
    /// Critical points found, annotated with spectra and regularity.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub critical_points: Vec<CriticalPoint>,
    /// Normal-form reduction steps, in application order.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub normal_form_steps: Vec<ReductionStep>,
    /// Flow summaries from ode-flow invocations.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flows: Vec<FlowSummary>,
    /// Wall-clock milliseconds; omitted by default so that reruns of the
    /// same analysis stay byte-identical.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timing_ms: Option<f64>,
}

/// SHA-256 digest of raw bytes as a lowercase hex string.
pub fn digest_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for byte in digest {
        out.push_str(&format!("{byte:02x}"));
    }
    out
}

/// JSON formatter printing every float with 17 significant digits, which
/// round-trips IEEE-754 doubles exactly and is independent of the shortest-
/// representation heuristics of the default printer.
struct SignificantDigitsFormatter;

impl serde_json::ser::Formatter for SignificantDigitsFormatter {
    fn write_f64<W>(&mut self, writer: &mut W, value: f64) -> std::io::Result<()>
    where
        W: ?Sized + std::io::Write,
    {
        write!(writer, "{value:.16e}")
    }
}

/// Serializes any value with the deterministic float formatting.
fn to_deterministic_json<T: Serialize>(value: &T) -> Result<String, IoError> {
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, SignificantDigitsFormatter);
    value
        .serialize(&mut ser)
        .map_err(|e| parse_error(&e))?;
    out.push(b'\n');
    String::from_utf8(out).map_err(|e| IoError::Schema(format!("non-UTF-8 output: {e}")))
}

/// Renders a network document deterministically.
pub fn emit_network(doc: &NetworkDocument) -> Result<String, IoError> {
    to_deterministic_json(doc)
}

/// Renders a report deterministically.
pub fn emit_report(report: &ReportDocument) -> Result<String, IoError> {
    to_deterministic_json(report)
}

/// Writes a network document to a file.
pub fn save_network(doc: &NetworkDocument, path: &Path) -> Result<(), IoError> {
    write_text(&emit_network(doc)?, path)
}

/// Writes a report to a file.
pub fn save_report(report: &ReportDocument, path: &Path) -> Result<(), IoError> {
    write_text(&emit_report(report)?, path)
}

/// Parses a report back from JSON text.
pub fn parse_report(text: &str) -> Result<ReportDocument, IoError> {
    serde_json::from_str(text).map_err(|e| parse_error(&e))
}

fn write_text(text: &str, path: &Path) -> Result<(), IoError> {
    let mut file = std::fs::File::create(path).map_err(|source| IoError::Write {
        path: path.display().to_string(),
        source,
    })?;
    file.write_all(text.as_bytes()).map_err(|source| IoError::Write {
        path: path.display().to_string(),
        source,
    })
}
