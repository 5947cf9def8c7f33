//! Scalar multilayer perceptrons with smooth activations.
//!
//! A network with L layers maps x = h_0 through
//!
//! ```text
//! h_l = W̃_l σ_l(W_l h_{l−1} + b_l) + b̃_l,        l = 1..L,  h_L ∈ ℝ,
//! ```
//!
//! so each layer contributes an inner weight W_l (m_l × n_{l−1}) and an
//! outer weight W̃_l (n_l × m_l). The width sequence
//! d_0, d_1, …, d_{2L} with d_{2l−1} = m_l and d_{2l} = n_l drives the
//! architecture partition, and the gradient factorizes as
//!
//! ```text
//! ∇Φ(x) = [W̃_L Ψ_L(a_L) W_L ⋯ W̃_1 Ψ_1(a_1) W_1]ᵀ,
//! ```
//!
//! with Ψ_l = diag(σ_l′) evaluated on the pre-activations a_l. All second
//! derivatives (the x-Hessian and the mixed weight–input derivatives) come
//! from product-rule expansions of this factorization.

use crate::linalg::{product_chain, LinalgError, Matrix};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors from MLP construction and evaluation.
#[derive(Debug, Error)]
pub enum MlpError {
    /// Weight / bias / activation shapes do not chain.
    #[error("shape error in layer {layer}: {message}")]
    Shape { layer: usize, message: String },
    /// The network output must be scalar.
    #[error("output width must be 1, got {0}")]
    NonScalarOutput(usize),
    /// A layer has an empty width.
    #[error("layer widths must be at least 1 (layer {0})")]
    EmptyLayer(usize),
    /// Input vector has the wrong dimension.
    #[error("input has dimension {got}, network expects {expected}")]
    InputDimension { expected: usize, got: usize },
    /// Input contains NaN or infinity.
    #[error("input contains a non-finite component")]
    NonFiniteInput,
    /// A layer or width index is out of range.
    #[error("index {index} out of range: {context}")]
    IndexOutOfRange { index: usize, context: String },
    /// Underlying linear-algebra failure.
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Smooth scalar activation functions. All are C^∞ and strictly monotone
/// (identity included); ReLU is deliberately absent because the analysis
/// requires two continuous derivatives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    /// σ(x) = ln(1 + eˣ)
    Softplus,
    /// σ(x) = tanh(x)
    Tanh,
    /// σ(x) = 1/(1 + e⁻ˣ)
    Sigmoid,
    /// σ(x) = x
    Identity,
}

impl Activation {
    /// σ(x).
    pub fn value(self, x: f64) -> f64 {
        match self {
            // Stable softplus: avoids overflow of eˣ for large x.
            Activation::Softplus => {
                if x > 0.0 {
                    x + (-x).exp().ln_1p()
                } else {
                    x.exp().ln_1p()
                }
            }
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => sigmoid(x),
            Activation::Identity => x,
        }
    }

    /// σ′(x).
    pub fn first_derivative(self, x: f64) -> f64 {
        match self {
            Activation::Softplus => sigmoid(x),
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            Activation::Sigmoid => {
                let s = sigmoid(x);
                s * (1.0 - s)
            }
            Activation::Identity => 1.0,
        }
    }

    /// σ″(x).
    pub fn second_derivative(self, x: f64) -> f64 {
        match self {
            Activation::Softplus => {
                let s = sigmoid(x);
                s * (1.0 - s)
            }
            Activation::Tanh => {
                let t = x.tanh();
                -2.0 * t * (1.0 - t * t)
            }
            Activation::Sigmoid => {
                let s = sigmoid(x);
                s * (1.0 - s) * (1.0 - 2.0 * s)
            }
            Activation::Identity => 0.0,
        }
    }

    /// Lowercase name used in serialized documents.
    pub fn name(self) -> &'static str {
        match self {
            Activation::Softplus => "softplus",
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
            Activation::Identity => "identity",
        }
    }

    /// Parses a lowercase activation name.
    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "softplus" => Some(Activation::Softplus),
            "tanh" => Some(Activation::Tanh),
            "sigmoid" => Some(Activation::Sigmoid),
            "identity" => Some(Activation::Identity),
            _ => None,
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Scalar MLP with per-layer inner/outer weights, biases, and per-component
/// activations. Immutable after construction; all evaluation is pure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MLPNetwork {
    inner_weights: Vec<Matrix>,
    outer_weights: Vec<Matrix>,
    inner_biases: Vec<Vec<f64>>,
    outer_biases: Vec<Vec<f64>>,
    activations: Vec<Vec<Activation>>,
}

impl MLPNetwork {
    /// Builds a network from per-layer weights, biases, and activations,
    /// validating every shape in the chain and the scalar output.
    pub fn new(
        inner_weights: Vec<Matrix>,
        outer_weights: Vec<Matrix>,
        inner_biases: Vec<Vec<f64>>,
        outer_biases: Vec<Vec<f64>>,
        activations: Vec<Vec<Activation>>,
    ) -> Result<Self, MlpError> {
        let layers = inner_weights.len();
        if layers == 0 {
            return Err(MlpError::EmptyLayer(0));
        }
        let consistent = outer_weights.len() == layers
            && inner_biases.len() == layers
            && outer_biases.len() == layers
            && activations.len() == layers;
        if !consistent {
            return Err(MlpError::Shape {
                layer: 0,
                message: format!(
                    "expected {layers} entries in every per-layer list, got outer weights {}, inner biases {}, outer biases {}, activations {}",
                    outer_weights.len(),
                    inner_biases.len(),
                    outer_biases.len(),
                    activations.len()
                ),
            });
        }
        let mut width = inner_weights[0].cols();
        if width == 0 {
            return Err(MlpError::EmptyLayer(0));
        }
        for l in 0..layers {
            let w = &inner_weights[l];
            let wt = &outer_weights[l];
            let m = w.rows();
            let n = wt.rows();
            if m == 0 || n == 0 {
                return Err(MlpError::EmptyLayer(l + 1));
            }
            if w.cols() != width {
                return Err(MlpError::Shape {
                    layer: l + 1,
                    message: format!("inner weight expects input width {width}, has {} columns", w.cols()),
                });
            }
            if wt.cols() != m {
                return Err(MlpError::Shape {
                    layer: l + 1,
                    message: format!("outer weight has {} columns but the layer has {m} hidden units", wt.cols()),
                });
            }
            if inner_biases[l].len() != m {
                return Err(MlpError::Shape {
                    layer: l + 1,
                    message: format!("inner bias has length {}, expected {m}", inner_biases[l].len()),
                });
            }
            if outer_biases[l].len() != n {
                return Err(MlpError::Shape {
                    layer: l + 1,
                    message: format!("outer bias has length {}, expected {n}", outer_biases[l].len()),
                });
            }
            if activations[l].len() != m {
                return Err(MlpError::Shape {
                    layer: l + 1,
                    message: format!("activation list has length {}, expected {m}", activations[l].len()),
                });
            }
            width = n;
        }
        if width != 1 {
            return Err(MlpError::NonScalarOutput(width));
        }
        Ok(Self { inner_weights, outer_weights, inner_biases, outer_biases, activations })
    }

    /// Convenience constructor: one activation function shared by every
    /// hidden unit, all biases zero.
    pub fn with_uniform_activation(
        inner_weights: Vec<Matrix>,
        outer_weights: Vec<Matrix>,
        inner_biases: Vec<Vec<f64>>,
        outer_biases: Vec<Vec<f64>>,
        activation: Activation,
    ) -> Result<Self, MlpError> {
        let activations = inner_weights.iter().map(|w| vec![activation; w.rows()]).collect();
        Self::new(inner_weights, outer_weights, inner_biases, outer_biases, activations)
    }

    /// Number of layers L.
    pub fn layer_count(&self) -> usize {
        self.inner_weights.len()
    }

    /// Input dimension n = d_0.
    pub fn input_dim(&self) -> usize {
        self.inner_weights[0].cols()
    }

    /// Width sequence d_0, …, d_{2L} with d_{2l−1} = m_l and d_{2l} = n_l.
    pub fn dims(&self) -> Vec<usize> {
        let mut dims = Vec::with_capacity(2 * self.layer_count() + 1);
        dims.push(self.input_dim());
        for l in 0..self.layer_count() {
            dims.push(self.inner_weights[l].rows());
            dims.push(self.outer_weights[l].rows());
        }
        dims
    }

    /// Inner weight W_l of layer l (1-based).
    pub fn inner_weight(&self, l: usize) -> &Matrix {
        &self.inner_weights[l - 1]
    }

    /// Outer weight W̃_l of layer l (1-based).
    pub fn outer_weight(&self, l: usize) -> &Matrix {
        &self.outer_weights[l - 1]
    }

    /// Inner bias b_l of layer l (1-based).
    pub fn inner_bias(&self, l: usize) -> &[f64] {
        &self.inner_biases[l - 1]
    }

    /// Outer bias b̃_l of layer l (1-based).
    pub fn outer_bias(&self, l: usize) -> &[f64] {
        &self.outer_biases[l - 1]
    }

    /// Activations of layer l (1-based), one per hidden unit.
    pub fn layer_activations(&self, l: usize) -> &[Activation] {
        &self.activations[l - 1]
    }

    /// Weight map V_j in the alternating enumeration V_{2l−1} = W_l,
    /// V_{2l} = W̃_l, for j in 1..=2L.
    pub fn v_matrix(&self, j: usize) -> Result<&Matrix, MlpError> {
        if j == 0 || j > 2 * self.layer_count() {
            return Err(MlpError::IndexOutOfRange {
                index: j,
                context: format!("weight maps are numbered 1..={}", 2 * self.layer_count()),
            });
        }
        Ok(if j % 2 == 1 { &self.inner_weights[(j - 1) / 2] } else { &self.outer_weights[j / 2 - 1] })
    }

    /// Replaces the weight map V_j, checking that the shape is preserved.
    pub fn set_v_matrix(&mut self, j: usize, value: Matrix) -> Result<(), MlpError> {
        let current = self.v_matrix(j)?;
        if current.rows() != value.rows() || current.cols() != value.cols() {
            return Err(MlpError::Shape {
                layer: j.div_ceil(2),
                message: format!(
                    "replacement for weight map {j} has shape {}x{}, expected {}x{}",
                    value.rows(),
                    value.cols(),
                    current.rows(),
                    current.cols()
                ),
            });
        }
        if j % 2 == 1 {
            self.inner_weights[(j - 1) / 2] = value;
        } else {
            self.outer_weights[j / 2 - 1] = value;
        }
        Ok(())
    }

    /// Total number of weight entries N_W.
    pub fn weight_parameter_count(&self) -> usize {
        self.inner_weights
            .iter()
            .chain(&self.outer_weights)
            .map(|w| w.rows() * w.cols())
            .sum()
    }

    /// Total number of bias entries N_B.
    pub fn bias_parameter_count(&self) -> usize {
        self.inner_biases.iter().chain(&self.outer_biases).map(Vec::len).sum()
    }
}

/// Full record of a forward evaluation: pre-activations, post-layer values,
/// and the activation derivative diagonals needed by every derivative
/// formula.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalTrace {
    /// h_0 = x, h_1, …, h_L.
    pub post_layers: Vec<Vec<f64>>,
    /// a_1, …, a_L (pre-activations).
    pub pre_activations: Vec<Vec<f64>>,
    /// Diagonals of Ψ_l = diag(σ_l′(a_l)).
    pub psi: Vec<Vec<f64>>,
    /// Diagonals of Ψ_l′ = diag(σ_l″(a_l)).
    pub psi_prime: Vec<Vec<f64>>,
}

impl EvalTrace {
    /// Network output h_L.
    pub fn output(&self) -> f64 {
        self.post_layers.last().expect("trace has at least the input layer")[0]
    }
}

fn check_input(net: &MLPNetwork, x: &[f64]) -> Result<(), MlpError> {
    if x.len() != net.input_dim() {
        return Err(MlpError::InputDimension { expected: net.input_dim(), got: x.len() });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(MlpError::NonFiniteInput);
    }
    Ok(())
}

/// Evaluates the network at x, returning the scalar output and the trace.
pub fn forward(net: &MLPNetwork, x: &[f64]) -> Result<(f64, EvalTrace), MlpError> {
    check_input(net, x)?;
    let layers = net.layer_count();
    let mut post_layers = Vec::with_capacity(layers + 1);
    let mut pre_activations = Vec::with_capacity(layers);
    let mut psi = Vec::with_capacity(layers);
    let mut psi_prime = Vec::with_capacity(layers);
    post_layers.push(x.to_vec());
    let mut h = x.to_vec();
    for l in 1..=layers {
        let mut a = net.inner_weight(l).matvec(&h)?;
        for (ai, bi) in a.iter_mut().zip(net.inner_bias(l)) {
            *ai += bi;
        }
        let acts = net.layer_activations(l);
        let mut sigma = Vec::with_capacity(a.len());
        let mut d1 = Vec::with_capacity(a.len());
        let mut d2 = Vec::with_capacity(a.len());
        for (ai, act) in a.iter().zip(acts) {
            sigma.push(act.value(*ai));
            d1.push(act.first_derivative(*ai));
            d2.push(act.second_derivative(*ai));
        }
        let mut next = net.outer_weight(l).matvec(&sigma)?;
        for (hi, bi) in next.iter_mut().zip(net.outer_bias(l)) {
            *hi += bi;
        }
        pre_activations.push(a);
        psi.push(d1);
        psi_prime.push(d2);
        post_layers.push(next.clone());
        h = next;
    }
    let trace = EvalTrace { post_layers, pre_activations, psi, psi_prime };
    Ok((trace.output(), trace))
}

fn diag_matrix(values: &[f64]) -> Matrix {
    let mut m = Matrix::zeros(values.len(), values.len());
    for (i, v) in values.iter().enumerate() {
        m.set(i, i, *v);
    }
    m
}

/// Ordered factor list of the gradient row
/// W̃_L, Ψ_L, W_L, W̃_{L−1}, …, W̃_1, Ψ_1, W_1 (left to right).
pub fn gradient_factors(net: &MLPNetwork, trace: &EvalTrace) -> Vec<Matrix> {
    let layers = net.layer_count();
    let mut factors = Vec::with_capacity(3 * layers);
    for l in (1..=layers).rev() {
        factors.push(net.outer_weight(l).clone());
        factors.push(diag_matrix(&trace.psi[l - 1]));
        factors.push(net.inner_weight(l).clone());
    }
    factors
}

/// Analytic gradient ∇Φ(x), the transpose of the factored product row.
pub fn gradient(net: &MLPNetwork, x: &[f64]) -> Result<Vec<f64>, MlpError> {
    let (_, trace) = forward(net, x)?;
    gradient_from_trace(net, &trace)
}

/// Gradient from an existing trace (avoids re-evaluating the forward pass).
pub fn gradient_from_trace(net: &MLPNetwork, trace: &EvalTrace) -> Result<Vec<f64>, MlpError> {
    let row = product_chain(&gradient_factors(net, trace))?;
    Ok(row.row(0))
}

/// Shared second-derivative machinery: the prefix transposes
/// R_k = W_1ᵀΨ_1W̃_1ᵀ ⋯ W_kᵀΨ_kW̃_kᵀ, the suffix rows
/// q_k = W̃_LΨ_LW_L ⋯ Ψ_{k+1}W_{k+1}W̃_k and p_k = W̃_LΨ_LW_L ⋯ Ψ_{k+1}W_{k+1},
/// and the input sensitivities D_k = ∂a_k/∂x.
struct DerivativeProducts {
    /// R_0..R_L, with R_0 = Id_n; R_k is n × n_k.
    prefixes: Vec<Matrix>,
    /// q_1..q_L as 1 × m_k rows.
    suffix_q: Vec<Matrix>,
    /// p_1..p_L as 1 × n_k rows; p_L = (1).
    suffix_p: Vec<Matrix>,
    /// D_1..D_L with D_k = ∂a_k/∂x, an m_k × n matrix.
    input_sensitivities: Vec<Matrix>,
    /// M_k = R_{k−1} W_kᵀ diag(ψ_k′ ⊙ q_k), an n × m_k matrix; the common
    /// left factor of every second-derivative term of index k.
    term_left: Vec<Matrix>,
}

impl DerivativeProducts {
    fn build(net: &MLPNetwork, trace: &EvalTrace) -> Result<Self, MlpError> {
        let layers = net.layer_count();
        let n = net.input_dim();
        let mut prefixes = Vec::with_capacity(layers + 1);
        prefixes.push(Matrix::identity(n));
        for l in 1..=layers {
            let step = net
                .inner_weight(l)
                .transpose()
                .matmul(&diag_matrix(&trace.psi[l - 1]))?
                .matmul(&net.outer_weight(l).transpose())?;
            let next = prefixes[l - 1].matmul(&step)?;
            prefixes.push(next);
        }
        let mut suffix_p = vec![Matrix::zeros(0, 0); layers];
        let mut suffix_q = vec![Matrix::zeros(0, 0); layers];
        suffix_p[layers - 1] = Matrix::identity(1);
        suffix_q[layers - 1] = net.outer_weight(layers).clone();
        for l in (1..layers).rev() {
            // p_l = q_{l+1} Ψ_{l+1} W_{l+1}; q_l = p_l W̃_l.
            let p = suffix_q[l]
                .matmul(&diag_matrix(&trace.psi[l]))?
                .matmul(net.inner_weight(l + 1))?;
            suffix_q[l - 1] = p.matmul(net.outer_weight(l))?;
            suffix_p[l - 1] = p;
        }
        let mut input_sensitivities = Vec::with_capacity(layers);
        input_sensitivities.push(net.inner_weight(1).clone());
        for l in 2..=layers {
            let prev = &input_sensitivities[l - 2];
            let next = net
                .inner_weight(l)
                .matmul(net.outer_weight(l - 1))?
                .matmul(&diag_matrix(&trace.psi[l - 2]))?
                .matmul(prev)?;
            input_sensitivities.push(next);
        }
        let mut term_left = Vec::with_capacity(layers);
        for l in 1..=layers {
            let weights: Vec<f64> = trace.psi_prime[l - 1]
                .iter()
                .zip(suffix_q[l - 1].entries())
                .map(|(pp, q)| pp * q)
                .collect();
            let m = prefixes[l - 1]
                .matmul(&net.inner_weight(l).transpose())?
                .matmul(&diag_matrix(&weights))?;
            term_left.push(m);
        }
        Ok(Self { prefixes, suffix_q, suffix_p, input_sensitivities, term_left })
    }

    /// Σ_{k=start}^L M_k · E_k where E_k is the forward propagation of the
    /// seed sensitivity of a_start through a_k. The seed has shape
    /// m_start × w for w simultaneous directions; the result is n × w.
    fn propagate_and_sum(
        &self,
        net: &MLPNetwork,
        trace: &EvalTrace,
        start: usize,
        seed: Matrix,
    ) -> Result<Matrix, MlpError> {
        let layers = net.layer_count();
        let n = net.input_dim();
        let width = seed.cols();
        let mut total = Matrix::zeros(n, width);
        let mut e = seed;
        for k in start..=layers {
            total = total.add(&self.term_left[k - 1].matmul(&e)?)?;
            if k < layers {
                e = net
                    .inner_weight(k + 1)
                    .matmul(net.outer_weight(k))?
                    .matmul(&diag_matrix(&trace.psi[k - 1]))?
                    .matmul(&e)?;
            }
        }
        Ok(total)
    }
}

/// Analytic Hessian of Φ at x.
///
/// Column i is the derivative of the gradient along x_i, obtained from the
/// same product-rule expansion as the mixed bias derivatives with
/// ∂a_k/∂x_i in place of ∂a_k/∂[b_l]_i:
///
/// ```text
/// H = Σ_k R_{k−1} W_kᵀ diag(ψ_k′ ⊙ q_k) D_k,
/// ```
///
/// where D_k = ∂a_k/∂x. The result is symmetrized after a symmetry check.
pub fn hessian(net: &MLPNetwork, x: &[f64]) -> Result<Matrix, MlpError> {
    let (_, trace) = forward(net, x)?;
    hessian_from_trace(net, &trace)
}

/// Hessian from an existing trace.
pub fn hessian_from_trace(net: &MLPNetwork, trace: &EvalTrace) -> Result<Matrix, MlpError> {
    let products = DerivativeProducts::build(net, trace)?;
    let n = net.input_dim();
    let mut h = Matrix::zeros(n, n);
    for k in 1..=net.layer_count() {
        let term = products.term_left[k - 1].matmul(&products.input_sensitivities[k - 1])?;
        h = h.add(&term)?;
    }
    // The expansion is symmetric in exact arithmetic; enforce it exactly
    // after verifying round-off stayed small.
    let asym = h.sub(&h.transpose())?.max_abs();
    debug_assert!(asym <= 1e-9 * h.max_abs().max(1.0), "Hessian asymmetry {asym}");
    Ok(h.add(&h.transpose())?.scale(0.5))
}

/// Mixed second derivatives ∂²Φ/∂θ∂x as an n×p matrix, p = N_W + N_B.
///
/// Column order follows the parameter vectorization: first the weight block
/// (vec(W_1), vec(W̃_1), …, vec(W_L), vec(W̃_L)) with column-major vec, then
/// the bias block (b_1, b̃_1, …, b_L, b̃_L). Each column is the derivative
/// of ∇Φ(x) with respect to one scalar parameter.
pub fn mixed_second_derivatives(net: &MLPNetwork, x: &[f64]) -> Result<Matrix, MlpError> {
    let (_, trace) = forward(net, x)?;
    let products = DerivativeProducts::build(net, &trace)?;
    let layers = net.layer_count();
    let n = net.input_dim();
    let p = net.weight_parameter_count() + net.bias_parameter_count();
    let mut out = Matrix::zeros(n, p);
    let mut col = 0;

    // Pre-compute the bias-style blocks: chain_b[l] = Σ_{k=l}^L M_k E_k with
    // seed Id_{m_l} (sensitivity of a_l to b_l), and chain_bt[l] with seed
    // W_{l+1} (sensitivity of a_{l+1} to b̃_l); chain_bt[L] = 0.
    let mut chain_b = Vec::with_capacity(layers);
    let mut chain_bt = Vec::with_capacity(layers);
    for l in 1..=layers {
        let m_l = net.inner_weight(l).rows();
        chain_b.push(products.propagate_and_sum(net, &trace, l, Matrix::identity(m_l))?);
        if l < layers {
            chain_bt.push(products.propagate_and_sum(net, &trace, l + 1, net.inner_weight(l + 1).clone())?);
        } else {
            chain_bt.push(Matrix::zeros(n, 1));
        }
    }

    // Weight block: for each layer, vec(W_l) then vec(W̃_l), column-major.
    for l in 1..=layers {
        let w = net.inner_weight(l);
        let h_prev = &trace.post_layers[l - 1];
        // ∂²Φ/∂[W_l]_{ij}∂x = [h_{l−1}]_j · (b_l column i)
        //                    + [ψ_l ⊙ q_l]_i · (column j of R_{l−1}).
        let psi_q: Vec<f64> = trace.psi[l - 1]
            .iter()
            .zip(products.suffix_q[l - 1].entries())
            .map(|(s, q)| s * q)
            .collect();
        for j in 0..w.cols() {
            let r_col = products.prefixes[l - 1].column(j);
            for i in 0..w.rows() {
                for row in 0..n {
                    let value = h_prev[j] * chain_b[l - 1].get(row, i) + psi_q[i] * r_col[row];
                    out.set(row, col, value);
                }
                col += 1;
            }
        }
        let wt = net.outer_weight(l);
        let sigma: Vec<f64> = trace.pre_activations[l - 1]
            .iter()
            .zip(net.layer_activations(l))
            .map(|(a, act)| act.value(*a))
            .collect();
        // Direct factor (R_{l−1} W_lᵀ Ψ_l) for the W̃_l family.
        let direct = products.prefixes[l - 1]
            .matmul(&w.transpose())?
            .matmul(&diag_matrix(&trace.psi[l - 1]))?;
        // ∂²Φ/∂[W̃_l]_{ij}∂x = [σ_l(a_l)]_j · (b̃_l column i)
        //                     + [p_l]_i · (column j of R_{l−1}W_lᵀΨ_l).
        for j in 0..wt.cols() {
            let direct_col = direct.column(j);
            for i in 0..wt.rows() {
                let p_i = products.suffix_p[l - 1].get(0, i);
                for row in 0..n {
                    let chain = if l < layers { sigma[j] * chain_bt[l - 1].get(row, i) } else { 0.0 };
                    out.set(row, col, chain + p_i * direct_col[row]);
                }
                col += 1;
            }
        }
    }

    // Bias block: b_1, b̃_1, …, b_L, b̃_L.
    for l in 1..=layers {
        let m_l = net.inner_weight(l).rows();
        for i in 0..m_l {
            for row in 0..n {
                out.set(row, col, chain_b[l - 1].get(row, i));
            }
            col += 1;
        }
        let n_l = net.outer_weight(l).rows();
        for i in 0..n_l {
            for row in 0..n {
                let value = if l < layers { chain_bt[l - 1].get(row, i) } else { 0.0 };
                out.set(row, col, value);
            }
            col += 1;
        }
    }
    debug_assert_eq!(col, p);
    Ok(out)
}

/// Verdict of the architecture partition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ArchitectureVerdict {
    /// Widths never increase: the dimension sequence is non-increasing.
    NonAugmented,
    /// Widths rise monotonically to the last widening step and never widen
    /// again afterwards.
    Augmented,
    /// Some width strictly between two larger widths: a strict narrowing
    /// occurs before the last widening step.
    Bottleneck,
}

/// Shape of the first (innermost) bottleneck: whether the widths before it
/// are non-increasing or contain a strictly wider intermediate layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BottleneckFlavor {
    /// d_0 ≥ d_1 ≥ … ≥ d_{j*}: the prefix narrows from the input.
    NonAugmentedPrefix,
    /// Some earlier width exceeds the input width before the bottleneck.
    AugmentedPrefix,
}

/// Witness indices for a bottleneck architecture.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BottleneckWitness {
    /// Layer index just before the narrowing step: i* = j* − 1.
    pub i_star: usize,
    /// Last strict narrowing step at or before the last widening step.
    pub j_star: usize,
    /// Last widening step l* = max{j : d_{j−1} < d_j}.
    pub l_star: usize,
}

/// Data about the first bottleneck layer, which decides the theorem case
/// used by the class analysis.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FirstBottleneck {
    /// Smallest index j with d_i > d_j < d_l for some i < j < l.
    pub layer: usize,
    /// Whether the widths before the bottleneck ever exceed the input width.
    pub flavor: BottleneckFlavor,
    /// For an augmented prefix: the first index attaining the prefix
    /// maximum width; for a non-augmented prefix this equals 0.
    pub prefix_witness: usize,
}

/// Result of the architecture partition over the width sequence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchitectureReport {
    /// Which of the three disjoint classes the width sequence falls into.
    pub verdict: ArchitectureVerdict,
    /// The width sequence d_0..d_{2L} the verdict was computed from.
    pub dims: Vec<usize>,
    /// Augmented case: index of the first maximal-width layer.
    pub l_star: Option<usize>,
    /// Bottleneck case: the witness triple (i*, j*, l*).
    pub bottleneck: Option<BottleneckWitness>,
    /// Bottleneck case: data about the innermost bottleneck layer.
    pub first_bottleneck: Option<FirstBottleneck>,
}

/// Partitions the width sequence into the three architecture classes.
///
/// With J_< = {j : d_{j−1} < d_j} (widening steps) and J_> the narrowing
/// steps: J_< empty gives NonAugmented; otherwise let l* = max J_<. If no
/// narrowing step occurs before l* the widths rise monotonically to the
/// maximum and the network is Augmented; otherwise it is a Bottleneck with
/// j* = max{j ≤ l* : j ∈ J_>} and i* = j* − 1.
pub fn classify_architecture(net: &MLPNetwork) -> ArchitectureReport {
    classify_dims(&net.dims())
}

/// Architecture partition on a raw width sequence.
pub fn classify_dims(dims: &[usize]) -> ArchitectureReport {
    let widening: Vec<usize> = (1..dims.len()).filter(|&j| dims[j - 1] < dims[j]).collect();
    if widening.is_empty() {
        return ArchitectureReport {
            verdict: ArchitectureVerdict::NonAugmented,
            dims: dims.to_vec(),
            l_star: None,
            bottleneck: None,
            first_bottleneck: None,
        };
    }
    let l_star = *widening.last().expect("non-empty widening set");
    let narrowing_before: Vec<usize> =
        (1..=l_star).filter(|&j| dims[j - 1] > dims[j]).collect();
    if narrowing_before.is_empty() {
        // Monotone rise to the maximum width, never widening again: the
        // first maximal-width layer is where the rise ends.
        let max_width = *dims.iter().max().expect("non-empty dims");
        let first_max = dims.iter().position(|&d| d == max_width).expect("max exists");
        return ArchitectureReport {
            verdict: ArchitectureVerdict::Augmented,
            dims: dims.to_vec(),
            l_star: Some(first_max),
            bottleneck: None,
            first_bottleneck: None,
        };
    }
    let j_star = *narrowing_before.last().expect("non-empty narrowing set");
    // Innermost bottleneck: the first index that is strictly below both an
    // earlier and a later width.
    let mut first_bottleneck = None;
    'outer: for j in 1..dims.len() - 1 {
        let lower_before = dims[..j].iter().any(|&d| d > dims[j]);
        let higher_after = dims[j + 1..].iter().any(|&d| d > dims[j]);
        if lower_before && higher_after {
            let prefix = &dims[..j];
            let non_increasing = prefix.windows(2).all(|w| w[0] >= w[1]);
            let (flavor, prefix_witness) = if non_increasing {
                (BottleneckFlavor::NonAugmentedPrefix, 0)
            } else {
                let prefix_max = *prefix.iter().max().expect("non-empty prefix");
                let witness = prefix.iter().position(|&d| d == prefix_max).expect("max exists");
                (BottleneckFlavor::AugmentedPrefix, witness)
            };
            first_bottleneck = Some(FirstBottleneck { layer: j, flavor, prefix_witness });
            break 'outer;
        }
    }
    ArchitectureReport {
        verdict: ArchitectureVerdict::Bottleneck,
        dims: dims.to_vec(),
        l_star: Some(l_star),
        bottleneck: Some(BottleneckWitness { i_star: j_star - 1, j_star, l_star }),
        first_bottleneck,
    }
}

/// Partial gradient product Z_l(x) = W̃_L Ψ_L W_L ⋯ V_{l+1}, a 1×d_l row.
///
/// For even l the product ends with Ψ_{l/2+1} W_{l/2+1}; for odd l it ends
/// with W̃_{(l+1)/2} and excludes that layer's Ψ. The complementary product
/// Y_l satisfies ∇Φ(x)ᵀ = Z_l(x)·Y_l(x).
pub fn z_product(net: &MLPNetwork, x: &[f64], l: usize) -> Result<Matrix, MlpError> {
    let (_, trace) = forward(net, x)?;
    z_product_from_trace(net, &trace, l)
}

/// Z_l from an existing trace.
pub fn z_product_from_trace(net: &MLPNetwork, trace: &EvalTrace, l: usize) -> Result<Matrix, MlpError> {
    let (z, _) = split_gradient_product(net, trace, l)?;
    Ok(z)
}

/// Complementary product Y_l(x) = V_l ⋯ W̃_1 Ψ_1 W_1, a d_l×n matrix.
pub fn y_product_from_trace(net: &MLPNetwork, trace: &EvalTrace, l: usize) -> Result<Matrix, MlpError> {
    let (_, y) = split_gradient_product(net, trace, l)?;
    Ok(y)
}

/// Splits the gradient factorization at weight map l: returns (Z_l, Y_l)
/// with ∇Φᵀ = Z_l·Y_l.
pub fn split_gradient_product(
    net: &MLPNetwork,
    trace: &EvalTrace,
    l: usize,
) -> Result<(Matrix, Matrix), MlpError> {
    let layers = net.layer_count();
    if l == 0 || l >= 2 * layers {
        return Err(MlpError::IndexOutOfRange {
            index: l,
            context: format!("split index must lie in 1..={}", 2 * layers - 1),
        });
    }
    // Factor list left to right with each factor tagged by the weight map
    // index it belongs to; Ψ_t travels with V_{2t−1} = W_t (it sits
    // immediately left of W_t in the product).
    let mut z_factors = Vec::new();
    let mut y_factors = Vec::new();
    for t in (1..=layers).rev() {
        let entries: [(usize, Matrix); 3] = [
            (2 * t, net.outer_weight(t).clone()),
            (2 * t - 1, diag_matrix(&trace.psi[t - 1])),
            (2 * t - 1, net.inner_weight(t).clone()),
        ];
        for (idx, factor) in entries {
            if idx > l {
                z_factors.push(factor);
            } else {
                y_factors.push(factor);
            }
        }
    }
    Ok((product_chain(&z_factors)?, product_chain(&y_factors)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    /// Φ(x₁,x₂) = 2 ln(1+e^{x₁+2x₂}) − ln(1+e^{2x₁+4x₂}): one softplus
    /// layer with rank-1 inner weight and a line of degenerate critical
    /// points at x₁ + 2x₂ = 0.
    fn classes_example() -> MLPNetwork {
        MLPNetwork::with_uniform_activation(
            vec![mat(&[&[1.0, 2.0], &[2.0, 4.0]])],
            vec![mat(&[&[2.0, -1.0]])],
            vec![vec![0.0, 0.0]],
            vec![vec![0.0]],
            Activation::Softplus,
        )
        .unwrap()
    }

    /// One-layer augmented net: n = 1, m₁ = 2, weights w = (1,1)ᵀ,
    /// w̃ = (2,−1), softplus, zero biases.
    fn augmented_example() -> MLPNetwork {
        MLPNetwork::with_uniform_activation(
            vec![mat(&[&[1.0], &[1.0]])],
            vec![mat(&[&[2.0, -1.0]])],
            vec![vec![0.0, 0.0]],
            vec![vec![0.0]],
            Activation::Softplus,
        )
        .unwrap()
    }

    fn fd_gradient(net: &MLPNetwork, x: &[f64], step: f64) -> Vec<f64> {
        (0..x.len())
            .map(|i| {
                let mut plus = x.to_vec();
                let mut minus = x.to_vec();
                plus[i] += step;
                minus[i] -= step;
                (forward(net, &plus).unwrap().0 - forward(net, &minus).unwrap().0) / (2.0 * step)
            })
            .collect()
    }

    #[test]
    fn forward_matches_closed_form_at_origin() {
        let (value, _) = forward(&classes_example(), &[0.0, 0.0]).unwrap();
        assert!((value - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn forward_one_layer_augmented() {
        let (value, _) = forward(&augmented_example(), &[0.0]).unwrap();
        assert!((value - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn constant_network_outputs_bias() {
        let net = MLPNetwork::with_uniform_activation(
            vec![Matrix::zeros(2, 2)],
            vec![Matrix::zeros(1, 2)],
            vec![vec![0.0, 0.0]],
            vec![vec![3.5]],
            Activation::Softplus,
        )
        .unwrap();
        for x in [[0.0, 0.0], [1.0, -2.0], [5.0, 5.0]] {
            assert_eq!(forward(&net, &x).unwrap().0, 3.5);
        }
        assert_eq!(gradient(&net, &[1.0, 1.0]).unwrap(), vec![0.0, 0.0]);
        assert_eq!(hessian(&net, &[1.0, 1.0]).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn gradient_vanishes_on_equilibrium_line() {
        let net = classes_example();
        for x in [[2.0, -1.0], [-4.0, 2.0], [0.0, 0.0]] {
            let g = gradient(&net, &x).unwrap();
            assert!(g[0].abs() < 1e-12 && g[1].abs() < 1e-12, "gradient {g:?} at {x:?}");
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let net = classes_example();
        for x in [[0.3, 0.7], [-1.1, 0.2], [2.0, 1.5]] {
            let g = gradient(&net, &x).unwrap();
            let fd = fd_gradient(&net, &x, 1e-5);
            for (a, b) in g.iter().zip(&fd) {
                assert!((a - b).abs() <= 1e-6 * b.abs().max(1.0), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn gradient_closed_form_one_layer() {
        // ∇Φ(x) = w₁w̃₁σ'(a₁) + w₂w̃₂σ'(a₂) with σ' the logistic function.
        let net = augmented_example();
        let g = gradient(&net, &[0.0]).unwrap();
        let expected = 2.0 * 0.5 - 1.0 * 0.5;
        assert!((g[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn hessian_closed_form_one_layer() {
        // H(x) = w₁²w̃₁σ''(a₁) + w₂²w̃₂σ''(a₂); at x = 0 both σ'' = 1/4.
        let net = augmented_example();
        let h = hessian(&net, &[0.0]).unwrap();
        assert!((h.get(0, 0) - (2.0 * 0.25 - 1.0 * 0.25)).abs() < 1e-12);
    }

    #[test]
    fn hessian_matches_finite_differences() {
        let net = classes_example();
        let x = [0.4, -0.3];
        let h = hessian(&net, &x).unwrap();
        let step = 1e-5;
        for i in 0..2 {
            let mut plus = x.to_vec();
            let mut minus = x.to_vec();
            plus[i] += step;
            minus[i] -= step;
            let gp = gradient(&net, &plus).unwrap();
            let gm = gradient(&net, &minus).unwrap();
            for row in 0..2 {
                let fd = (gp[row] - gm[row]) / (2.0 * step);
                assert!((h.get(row, i) - fd).abs() <= 1e-5 * fd.abs().max(1.0));
            }
        }
    }

    #[test]
    fn hessian_is_symmetric() {
        let net = classes_example();
        let h = hessian(&net, &[0.9, -1.7]).unwrap();
        assert!(h.sub(&h.transpose()).unwrap().max_abs() <= 1e-9);
    }

    #[test]
    fn final_outer_bias_column_is_zero() {
        let net = classes_example();
        let mixed = mixed_second_derivatives(&net, &[0.3, 0.1]).unwrap();
        // Last column corresponds to b̃_L.
        let last = mixed.column(mixed.cols() - 1);
        assert!(last.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn mixed_derivatives_match_finite_differences() {
        let net = classes_example();
        let x = [0.25, -0.5];
        let mixed = mixed_second_derivatives(&net, &x).unwrap();
        let step = 1e-5;
        let mut col = 0;
        // Weight block: vec(W₁) column-major, then vec(W̃₁).
        for j in 0..2 {
            for i in 0..2 {
                let mut plus = net.clone();
                let mut minus = net.clone();
                let mut wp = plus.inner_weight(1).clone();
                wp.set(i, j, wp.get(i, j) + step);
                plus.set_v_matrix(1, wp).unwrap();
                let mut wm = minus.inner_weight(1).clone();
                wm.set(i, j, wm.get(i, j) - step);
                minus.set_v_matrix(1, wm).unwrap();
                let gp = gradient(&plus, &x).unwrap();
                let gm = gradient(&minus, &x).unwrap();
                for row in 0..2 {
                    let fd = (gp[row] - gm[row]) / (2.0 * step);
                    let analytic = mixed.get(row, col);
                    assert!(
                        (analytic - fd).abs() <= 1e-4 * fd.abs().max(1.0),
                        "W column {col} row {row}: {analytic} vs {fd}"
                    );
                }
                col += 1;
            }
        }
        for j in 0..2 {
            let i = 0;
            let mut plus = net.clone();
            let mut minus = net.clone();
            let mut wp = plus.outer_weight(1).clone();
            wp.set(i, j, wp.get(i, j) + step);
            plus.set_v_matrix(2, wp).unwrap();
            let mut wm = minus.outer_weight(1).clone();
            wm.set(i, j, wm.get(i, j) - step);
            minus.set_v_matrix(2, wm).unwrap();
            let gp = gradient(&plus, &x).unwrap();
            let gm = gradient(&minus, &x).unwrap();
            for row in 0..2 {
                let fd = (gp[row] - gm[row]) / (2.0 * step);
                let analytic = mixed.get(row, col);
                assert!(
                    (analytic - fd).abs() <= 1e-4 * fd.abs().max(1.0),
                    "W̃ column {col} row {row}: {analytic} vs {fd}"
                );
            }
            col += 1;
        }
        assert_eq!(col, net.weight_parameter_count());
    }

    #[test]
    fn architecture_examples() {
        let non_aug = classify_dims(&[3, 2, 2, 1]);
        assert_eq!(non_aug.verdict, ArchitectureVerdict::NonAugmented);

        let aug = classify_dims(&[1, 2, 2, 1]);
        assert_eq!(aug.verdict, ArchitectureVerdict::Augmented);
        assert_eq!(aug.l_star, Some(1));

        let bottleneck = classify_dims(&[2, 1, 2, 1, 1]);
        assert_eq!(bottleneck.verdict, ArchitectureVerdict::Bottleneck);
        let witness = bottleneck.bottleneck.unwrap();
        assert_eq!(witness.j_star, 1);
        assert_eq!(witness.i_star, 0);
        let first = bottleneck.first_bottleneck.unwrap();
        assert_eq!(first.layer, 1);
        assert_eq!(first.flavor, BottleneckFlavor::NonAugmentedPrefix);
    }

    #[test]
    fn augmented_prefix_bottleneck() {
        let report = classify_dims(&[1, 2, 1, 2, 1]);
        assert_eq!(report.verdict, ArchitectureVerdict::Bottleneck);
        let first = report.first_bottleneck.unwrap();
        assert_eq!(first.layer, 2);
        assert_eq!(first.flavor, BottleneckFlavor::AugmentedPrefix);
        assert_eq!(first.prefix_witness, 1);
    }

    #[test]
    fn gradient_factorizes_through_every_split() {
        let net = MLPNetwork::with_uniform_activation(
            vec![mat(&[&[0.5, -1.0], &[0.3, 0.8]]), mat(&[&[1.0, -0.2]])],
            vec![mat(&[&[1.0, 0.4], &[-0.7, 0.2]]), mat(&[&[0.9]])],
            vec![vec![0.1, -0.2], vec![0.05]],
            vec![vec![0.0, 0.3], vec![-0.1]],
            Activation::Tanh,
        )
        .unwrap();
        let x = [0.7, -0.4];
        let (_, trace) = forward(&net, &x).unwrap();
        let grad_row = Matrix::row_vector(&gradient_from_trace(&net, &trace).unwrap()).unwrap();
        for l in 1..4 {
            let (z, y) = split_gradient_product(&net, &trace, l).unwrap();
            let recomposed = z.matmul(&y).unwrap();
            assert!(
                recomposed.sub(&grad_row).unwrap().max_abs() <= 1e-10,
                "split at {l} deviates"
            );
        }
    }

    #[test]
    fn z_product_split_on_one_layer_net() {
        // For a one-layer net the only split is l = 1 (odd), so Z₁ = W̃₁
        // and Y₁ = Ψ₁W₁ carries the activation diagonal.
        let net = augmented_example();
        let x = [0.3];
        let (_, trace) = forward(&net, &x).unwrap();
        let (z, y) = split_gradient_product(&net, &trace, 1).unwrap();
        assert!(z.sub(net.outer_weight(1)).unwrap().max_abs() <= 1e-14);
        let expected_y = diag_matrix(&trace.psi[0]).matmul(net.inner_weight(1)).unwrap();
        assert!(y.sub(&expected_y).unwrap().max_abs() <= 1e-14);
    }

    #[test]
    fn shape_validation_rejects_mismatches() {
        let err = MLPNetwork::with_uniform_activation(
            vec![mat(&[&[1.0, 2.0]])],
            vec![mat(&[&[1.0, 1.0]])],
            vec![vec![0.0]],
            vec![vec![0.0]],
            Activation::Softplus,
        );
        assert!(err.is_err());
    }

    #[test]
    fn activation_derivatives_consistent() {
        for act in [Activation::Softplus, Activation::Tanh, Activation::Sigmoid, Activation::Identity] {
            for k in -50..50 {
                let x = k as f64 / 10.0;
                let step = 1e-5;
                let fd1 = (act.value(x + step) - act.value(x - step)) / (2.0 * step);
                let fd2 =
                    (act.first_derivative(x + step) - act.first_derivative(x - step)) / (2.0 * step);
                assert!((fd1 - act.first_derivative(x)).abs() <= 1e-5 * fd1.abs().max(1.0));
                assert!((fd2 - act.second_derivative(x)).abs() <= 1e-5 * fd2.abs().max(1.0));
            }
        }
    }
}
