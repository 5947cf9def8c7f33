//! Morse-function analysis for scalar-valued neural networks.
//!
//! This crate classifies the scalar maps realized by multilayer perceptrons
//! (MLPs) and neural ODEs into three regularity classes:
//!
//! * **C1** — no critical points at all,
//! * **C2** — critical points exist and every one is non-degenerate
//!   (the map is a Morse function),
//! * **C3** — at least one degenerate critical point exists.
//!
//! The classification is driven by the network architecture: the sequence of
//! layer widths splits the weight maps into widening, width-preserving, and
//! narrowing steps, and the position of the last widening step relative to
//! the narrowing steps decides which classes are reachable. Where the
//! architecture alone decides the class (non-augmented networks, certain
//! bottleneck configurations) we certify the verdict symbolically; otherwise
//! we fall back to a multistart Newton search on the gradient.
//!
//! Module map:
//!
//! * [`linalg`] — dense matrices, SVD-based numerical rank, left null rows,
//!   minimum-norm solves, and the full-rank factor construction used by the
//!   critical-weight builder.
//! * [`mlp`] — scalar MLPs with smooth activations: forward traces, analytic
//!   gradients/Hessians, mixed second derivatives with respect to weights,
//!   and the architecture partition.
//! * [`normal_form`] — rank-based reduction of an MLP to an equivalent
//!   network with full-rank weights, tracking the input coordinate change.
//! * [`morse`] — critical-point search, class reports, the critical-weight
//!   construction, and the Morse rank condition on mixed derivatives.
//! * [`node`] — neural ODEs: flows with Jacobians via the variational
//!   equation, gradients/Hessians of the realized scalar map, the rank-based
//!   partition, and the universal embedding of a scalar field as a NODE.
//! * [`io`] — strict JSON (de)serialization of networks and deterministic
//!   report emission.

pub mod io;
pub mod linalg;
pub mod mlp;
pub mod morse;
pub mod node;
pub mod normal_form;
pub(crate) mod sampling;

pub use linalg::Matrix;
