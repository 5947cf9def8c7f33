//! Scalar neural ODEs: Φ(x) = W̃·h_{Wx+b}(T) + b̃.
//!
//! The hidden layer of an MLP is replaced by the time-T map of an initial
//! value problem h′ = f(t, h). The module integrates the state jointly with
//! the variational equation dY/dt = (∂f/∂h)·Y to obtain the Jacobian of the
//! time-T map, from which gradient and Hessian of Φ follow in closed form.
//! It also partitions architectures (non-augmented / augmented /
//! degenerate), synthesizes outer weights placing a critical point at a
//! prescribed input, embeds arbitrary scalar maps exactly into augmented
//! neural ODEs, and checks the output perturbation bound ‖W̃‖∞·T·δ.

use crate::linalg::{self, left_null_row, LinalgError, Matrix, DEFAULT_RANK_TOL};
use crate::mlp::{self, MLPNetwork, MlpError};
use crate::morse::{self, ClassReport, DifferentiableScalarMap, MorseError, SearchConfig, TheoremEvidence};
use crate::sampling::halton_points;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors raised by neural ODE construction and integration.
#[derive(Debug, Error)]
pub enum NodeError {
    /// Inconsistent dimensions between weights, biases and field.
    #[error("shape mismatch: {0}")]
    Shape(String),
    /// The adaptive integrator could not reach the final time.
    #[error("integration failed at t = {time:.6}: {message}")]
    IntegrationFailure { time: f64, message: String },
    /// The Liouville invariant |det Y − exp(∫tr)| exceeded its tolerance,
    /// indicating an untrustworthy variational solution.
    #[error("Liouville check failed: det Y = {determinant:.6e}, exp(∫tr) = {expected:.6e}")]
    LiouvilleViolation { determinant: f64, expected: f64 },
    /// An operation's hypothesis does not hold for the given inputs.
    #[error("precondition violated: {0}")]
    Precondition(String),
    /// The operation is not defined for the given architecture.
    #[error("unsupported architecture: {0}")]
    Unsupported(String),
    /// Underlying MLP evaluation failed (MLP-backed vector fields).
    #[error(transparent)]
    Mlp(#[from] MlpError),
    /// Underlying linear algebra failed.
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

impl From<NodeError> for MorseError {
    fn from(err: NodeError) -> Self {
        MorseError::Evaluation(err.to_string())
    }
}

/// Target map Ψ for the universal embedding construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum EmbeddingTarget {
    /// Ψ given by a scalar MLP.
    Mlp(MLPNetwork),
    /// Ψ(x) = Σ (x_i − c_i)².
    SquaredDistance { center: Vec<f64> },
    /// Ψ(x) = sin(k·x), one-dimensional.
    SineScaled { frequency: f64 },
    /// Ψ ≡ c.
    Constant { value: f64, dim: usize },
}

impl EmbeddingTarget {
    /// Input dimension of the target map.
    pub fn input_dim(&self) -> usize {
        match self {
            EmbeddingTarget::Mlp(net) => net.input_dim(),
            EmbeddingTarget::SquaredDistance { center } => center.len(),
            EmbeddingTarget::SineScaled { .. } => 1,
            EmbeddingTarget::Constant { dim, .. } => *dim,
        }
    }

    /// Evaluates Ψ(x).
    pub fn value(&self, x: &[f64]) -> Result<f64, NodeError> {
        match self {
            EmbeddingTarget::Mlp(net) => Ok(mlp::forward(net, x)?.0),
            EmbeddingTarget::SquaredDistance { center } => {
                Ok(x.iter().zip(center).map(|(xi, ci)| (xi - ci) * (xi - ci)).sum())
            }
            EmbeddingTarget::SineScaled { frequency } => Ok((frequency * x[0]).sin()),
            EmbeddingTarget::Constant { value, .. } => Ok(*value),
        }
    }

    /// Evaluates ∇Ψ(x).
    pub fn gradient(&self, x: &[f64]) -> Result<Vec<f64>, NodeError> {
        match self {
            EmbeddingTarget::Mlp(net) => Ok(mlp::gradient(net, x)?),
            EmbeddingTarget::SquaredDistance { center } => {
                Ok(x.iter().zip(center).map(|(xi, ci)| 2.0 * (xi - ci)).collect())
            }
            EmbeddingTarget::SineScaled { frequency } => {
                Ok(vec![frequency * (frequency * x[0]).cos()])
            }
            EmbeddingTarget::Constant { dim, .. } => Ok(vec![0.0; *dim]),
        }
    }
}

/// Right-hand side f(t, h) of the initial value problem, with an analytic
/// state Jacobian per kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum VectorField {
    /// f(h) = A·h + c.
    AffineLinear { matrix: Matrix, offset: Vec<f64> },
    /// f(h₁, h₂) = (0, exp(h₁)); the two-dimensional worked example.
    ZeroExp,
    /// f(h) = h.
    Identity { dim: usize },
    /// f ≡ 0.
    Zero { dim: usize },
    /// One scalar MLP per component, autonomous: f_i(h) = net_i(h).
    MlpField { components: Vec<MLPNetwork> },
    /// (0, …, 0, Ψ(h₁,…,h_n)/T): the universal embedding field.
    Embedding { target: EmbeddingTarget, state_dim: usize, final_time: f64 },
}

impl VectorField {
    /// State dimension m.
    pub fn dim(&self) -> usize {
        match self {
            VectorField::AffineLinear { matrix, .. } => matrix.rows(),
            VectorField::ZeroExp => 2,
            VectorField::Identity { dim } | VectorField::Zero { dim } => *dim,
            VectorField::MlpField { components } => components.len(),
            VectorField::Embedding { state_dim, .. } => *state_dim,
        }
    }

    fn validate(&self) -> Result<(), NodeError> {
        match self {
            VectorField::AffineLinear { matrix, offset } => {
                if matrix.rows() != matrix.cols() || matrix.rows() != offset.len() {
                    return Err(NodeError::Shape(format!(
                        "affine field needs a square matrix and a matching offset, got \
                         {}×{} and length {}",
                        matrix.rows(),
                        matrix.cols(),
                        offset.len()
                    )));
                }
            }
            VectorField::MlpField { components } => {
                let m = components.len();
                for (i, net) in components.iter().enumerate() {
                    if net.input_dim() != m {
                        return Err(NodeError::Shape(format!(
                            "field component {i} maps ℝ^{} but the state has dimension {m}",
                            net.input_dim()
                        )));
                    }
                }
                if m == 0 {
                    return Err(NodeError::Shape("field needs at least one component".into()));
                }
            }
            VectorField::Embedding { target, state_dim, final_time } => {
                if target.input_dim() >= *state_dim {
                    return Err(NodeError::Shape(format!(
                        "embedding needs state dimension above the target's {} inputs",
                        target.input_dim()
                    )));
                }
                if !(*final_time > 0.0) {
                    return Err(NodeError::Shape("embedding needs a positive final time".into()));
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// Evaluates f(t, h).
    pub fn eval(&self, _t: f64, h: &[f64]) -> Result<Vec<f64>, NodeError> {
        match self {
            VectorField::AffineLinear { matrix, offset } => {
                let mut out = matrix.matvec(h)?;
                for (o, c) in out.iter_mut().zip(offset) {
                    *o += c;
                }
                Ok(out)
            }
            VectorField::ZeroExp => Ok(vec![0.0, h[0].exp()]),
            VectorField::Identity { .. } => Ok(h.to_vec()),
            VectorField::Zero { dim } => Ok(vec![0.0; *dim]),
            VectorField::MlpField { components } => components
                .iter()
                .map(|net| Ok(mlp::forward(net, h)?.0))
                .collect(),
            VectorField::Embedding { target, state_dim, final_time } => {
                let n = target.input_dim();
                let mut out = vec![0.0; *state_dim];
                out[*state_dim - 1] = target.value(&h[..n])? / final_time;
                Ok(out)
            }
        }
    }

    /// Evaluates the state Jacobian ∂f/∂h at (t, h).
    pub fn jacobian(&self, _t: f64, h: &[f64]) -> Result<Matrix, NodeError> {
        match self {
            VectorField::AffineLinear { matrix, .. } => Ok(matrix.clone()),
            VectorField::ZeroExp => {
                let mut j = Matrix::zeros(2, 2);
                j.set(1, 0, h[0].exp());
                Ok(j)
            }
            VectorField::Identity { dim } => Ok(Matrix::identity(*dim)),
            VectorField::Zero { dim } => Ok(Matrix::zeros(*dim, *dim)),
            VectorField::MlpField { components } => {
                let m = components.len();
                let mut j = Matrix::zeros(m, m);
                for (i, net) in components.iter().enumerate() {
                    let grad = mlp::gradient(net, h)?;
                    for (c, g) in grad.iter().enumerate() {
                        j.set(i, c, *g);
                    }
                }
                Ok(j)
            }
            VectorField::Embedding { target, state_dim, final_time } => {
                let n = target.input_dim();
                let mut j = Matrix::zeros(*state_dim, *state_dim);
                let grad = target.gradient(&h[..n])?;
                for (c, g) in grad.iter().enumerate() {
                    j.set(*state_dim - 1, c, g / final_time);
                }
                Ok(j)
            }
        }
    }
}

/// Integration method for the augmented flow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum IntegrationMethod {
    /// Adaptive Runge–Kutta–Fehlberg 4(5).
    Rkf45,
    /// Fixed-step classical Runge–Kutta 4 (reproducibility fallback).
    Rk4 { steps: usize },
}

/// Integrator tolerances and limits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegratorConfig {
    /// Method selection.
    pub method: IntegrationMethod,
    /// Absolute per-component tolerance of the adaptive method.
    pub abs_tol: f64,
    /// Relative per-component tolerance of the adaptive method.
    pub rel_tol: f64,
    /// Maximum accepted steps before the integration fails.
    pub max_steps: usize,
    /// Relative tolerance of the Liouville determinant check.
    pub liouville_tol: f64,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            method: IntegrationMethod::Rkf45,
            abs_tol: 1e-10,
            rel_tol: 1e-9,
            max_steps: 1_000_000,
            liouville_tol: 1e-6,
        }
    }
}

/// Terminal data of one flow of the augmented system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowResult {
    /// Terminal state h_a(T).
    pub state: Vec<f64>,
    /// Variational Jacobian Y(T) = ∂h_a(T)/∂a, started at Y(0) = Id.
    pub jacobian: Matrix,
    /// ∫₀ᵀ tr(∂f/∂h) dr, integrated alongside the state.
    pub trace_integral: f64,
    /// Accepted integration steps.
    pub steps: usize,
    /// Largest scaled local error estimate among accepted steps.
    pub error_estimate: f64,
    /// Relative deviation |det Y(T) − exp(∫tr)| / exp(∫tr).
    pub liouville_residual: f64,
}

fn rk_stage(y: &[f64], k: &[f64], h: f64, factor: f64) -> Vec<f64> {
    y.iter().zip(k).map(|(yi, ki)| yi + h * factor * ki).collect()
}

fn rk_combine(y: &[f64], ks: &[&[f64]], h: f64, weights: &[f64]) -> Vec<f64> {
    let mut out = y.to_vec();
    for (k, w) in ks.iter().zip(weights) {
        for (o, ki) in out.iter_mut().zip(*k) {
            *o += h * w * ki;
        }
    }
    out
}

/// Integrates the (m + m² + 1)-dimensional augmented system of state,
/// variational matrix columns and trace integral from 0 to T.
///
/// The adaptive method is Runge–Kutta–Fehlberg 4(5) with per-component
/// error control; a fixed-step classical RK4 is available for exact
/// reproducibility. The Liouville identity det Y(T) = exp(∫₀ᵀ tr ∂f/∂h)
/// is verified on every flow and a violation is an error.
pub fn flow_with_jacobian(
    field: &VectorField,
    a: &[f64],
    final_time: f64,
    cfg: &IntegratorConfig,
) -> Result<FlowResult, NodeError> {
    field.validate()?;
    let m = field.dim();
    if a.len() != m {
        return Err(NodeError::Shape(format!(
            "initial state has {} entries, field needs {m}",
            a.len()
        )));
    }
    if !(final_time > 0.0) {
        return Err(NodeError::Precondition("final time must be positive".into()));
    }
    // Augmented layout: state (m), Y column-major (m²), trace integral (1).
    let dim = m + m * m + 1;
    let mut y = vec![0.0; dim];
    y[..m].copy_from_slice(a);
    for i in 0..m {
        y[m + i * m + i] = 1.0;
    }
    let deriv = |t: f64, y: &[f64]| -> Result<Vec<f64>, NodeError> {
        let state = &y[..m];
        let f = field.eval(t, state)?;
        let jac = field.jacobian(t, state)?;
        let mut dy = vec![0.0; dim];
        dy[..m].copy_from_slice(&f);
        for col in 0..m {
            for row in 0..m {
                let mut sum = 0.0;
                for k in 0..m {
                    sum += jac.get(row, k) * y[m + col * m + k];
                }
                dy[m + col * m + row] = sum;
            }
        }
        let mut trace = 0.0;
        for i in 0..m {
            trace += jac.get(i, i);
        }
        dy[dim - 1] = trace;
        Ok(dy)
    };

    let mut t = 0.0;
    let mut steps = 0usize;
    let mut worst_error = 0.0_f64;
    match cfg.method {
        IntegrationMethod::Rk4 { steps: count } => {
            if count == 0 {
                return Err(NodeError::Precondition("RK4 needs at least one step".into()));
            }
            let h = final_time / count as f64;
            for i in 0..count {
                let t0 = i as f64 * h;
                let k1 = deriv(t0, &y)?;
                let k2 = deriv(t0 + 0.5 * h, &rk_stage(&y, &k1, h, 0.5))?;
                let k3 = deriv(t0 + 0.5 * h, &rk_stage(&y, &k2, h, 0.5))?;
                let k4 = deriv(t0 + h, &rk_stage(&y, &k3, h, 1.0))?;
                y = rk_combine(
                    &y,
                    &[&k1, &k2, &k3, &k4],
                    h,
                    &[1.0 / 6.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0],
                );
                steps += 1;
            }
            t = final_time;
        }
        IntegrationMethod::Rkf45 => {
            let mut h = final_time / 16.0;
            while t < final_time {
                if steps >= cfg.max_steps {
                    return Err(NodeError::IntegrationFailure {
                        time: t,
                        message: format!("step budget of {} exhausted", cfg.max_steps),
                    });
                }
                if h < 1e-14 * final_time {
                    return Err(NodeError::IntegrationFailure {
                        time: t,
                        message: "step size underflow".into(),
                    });
                }
                h = h.min(final_time - t);
                let k1 = deriv(t, &y)?;
                let k2 = deriv(t + 0.25 * h, &rk_stage(&y, &k1, h, 0.25))?;
                let k3 = deriv(
                    t + 0.375 * h,
                    &rk_combine(&y, &[&k1, &k2], h, &[3.0 / 32.0, 9.0 / 32.0]),
                )?;
                let k4 = deriv(
                    t + 12.0 / 13.0 * h,
                    &rk_combine(
                        &y,
                        &[&k1, &k2, &k3],
                        h,
                        &[1932.0 / 2197.0, -7200.0 / 2197.0, 7296.0 / 2197.0],
                    ),
                )?;
                let k5 = deriv(
                    t + h,
                    &rk_combine(
                        &y,
                        &[&k1, &k2, &k3, &k4],
                        h,
                        &[439.0 / 216.0, -8.0, 3680.0 / 513.0, -845.0 / 4104.0],
                    ),
                )?;
                let k6 = deriv(
                    t + 0.5 * h,
                    &rk_combine(
                        &y,
                        &[&k1, &k2, &k3, &k4, &k5],
                        h,
                        &[-8.0 / 27.0, 2.0, -3544.0 / 2565.0, 1859.0 / 4104.0, -11.0 / 40.0],
                    ),
                )?;
                let fifth = rk_combine(
                    &y,
                    &[&k1, &k3, &k4, &k5, &k6],
                    h,
                    &[
                        16.0 / 135.0,
                        6656.0 / 12825.0,
                        28561.0 / 56430.0,
                        -9.0 / 50.0,
                        2.0 / 55.0,
                    ],
                );
                let fourth = rk_combine(
                    &y,
                    &[&k1, &k3, &k4, &k5],
                    h,
                    &[25.0 / 216.0, 1408.0 / 2565.0, 2197.0 / 4104.0, -1.0 / 5.0],
                );
                let mut ratio: f64 = 0.0;
                for i in 0..dim {
                    let scale = cfg.abs_tol + cfg.rel_tol * fifth[i].abs().max(y[i].abs());
                    ratio = ratio.max((fifth[i] - fourth[i]).abs() / scale);
                }
                if !ratio.is_finite() {
                    return Err(NodeError::IntegrationFailure {
                        time: t,
                        message: "solution blew up".into(),
                    });
                }
                if ratio <= 1.0 {
                    t += h;
                    y = fifth;
                    steps += 1;
                    worst_error = worst_error.max(ratio);
                }
                let factor = if ratio > 0.0 {
                    0.9 * ratio.powf(-0.2)
                } else {
                    5.0
                };
                h *= factor.clamp(0.2, 5.0);
            }
        }
    }
    debug_assert!((t - final_time).abs() <= 1e-12 * final_time.max(1.0));

    let state = y[..m].to_vec();
    let mut jacobian = Matrix::zeros(m, m);
    for col in 0..m {
        for row in 0..m {
            jacobian.set(row, col, y[m + col * m + row]);
        }
    }
    let trace_integral = y[dim - 1];
    let determinant = jacobian.to_na().determinant();
    let expected = trace_integral.exp();
    let liouville_residual = (determinant - expected).abs() / expected;
    if liouville_residual > cfg.liouville_tol {
        return Err(NodeError::LiouvilleViolation { determinant, expected });
    }
    Ok(FlowResult {
        state,
        jacobian,
        trace_integral,
        steps,
        error_estimate: worst_error,
        liouville_residual,
    })
}

/// A scalar neural ODE: affine layer, time-T flow, affine output layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeuralODE {
    inner_weight: Matrix,
    inner_bias: Vec<f64>,
    outer_weight: Matrix,
    outer_bias: f64,
    final_time: f64,
    field: VectorField,
    integrator: IntegratorConfig,
}

impl NeuralODE {
    /// Validates shapes: W is m×n, b has length m, W̃ is 1×m, the field has
    /// dimension m, and T > 0.
    pub fn new(
        inner_weight: Matrix,
        inner_bias: Vec<f64>,
        outer_weight: Matrix,
        outer_bias: f64,
        final_time: f64,
        field: VectorField,
        integrator: IntegratorConfig,
    ) -> Result<Self, NodeError> {
        field.validate()?;
        let m = field.dim();
        if inner_weight.rows() != m {
            return Err(NodeError::Shape(format!(
                "inner weight has {} rows, field dimension is {m}",
                inner_weight.rows()
            )));
        }
        if inner_bias.len() != m {
            return Err(NodeError::Shape(format!(
                "inner bias has {} entries, expected {m}",
                inner_bias.len()
            )));
        }
        if outer_weight.rows() != 1 || outer_weight.cols() != m {
            return Err(NodeError::Shape(format!(
                "outer weight must be 1×{m}, got {}×{}",
                outer_weight.rows(),
                outer_weight.cols()
            )));
        }
        if !(final_time > 0.0) {
            return Err(NodeError::Shape("final time must be positive".into()));
        }
        Ok(Self {
            inner_weight,
            inner_bias,
            outer_weight,
            outer_bias,
            final_time,
            field,
            integrator,
        })
    }

    /// Input dimension n.
    pub fn input_dim(&self) -> usize {
        self.inner_weight.cols()
    }

    /// State dimension m.
    pub fn state_dim(&self) -> usize {
        self.inner_weight.rows()
    }

    /// Inner weight W (m×n).
    pub fn inner_weight(&self) -> &Matrix {
        &self.inner_weight
    }

    /// Inner bias b.
    pub fn inner_bias(&self) -> &[f64] {
        &self.inner_bias
    }

    /// Outer weight W̃ (1×m).
    pub fn outer_weight(&self) -> &Matrix {
        &self.outer_weight
    }

    /// Replaces the outer weight, keeping the shape.
    pub fn set_outer_weight(&mut self, value: Matrix) -> Result<(), NodeError> {
        if value.rows() != 1 || value.cols() != self.state_dim() {
            return Err(NodeError::Shape(format!(
                "outer weight must be 1×{}, got {}×{}",
                self.state_dim(),
                value.rows(),
                value.cols()
            )));
        }
        self.outer_weight = value;
        Ok(())
    }

    /// Outer bias b̃.
    pub fn outer_bias(&self) -> f64 {
        self.outer_bias
    }

    /// Final time T.
    pub fn final_time(&self) -> f64 {
        self.final_time
    }

    /// The vector field of the initial value problem.
    pub fn field(&self) -> &VectorField {
        &self.field
    }

    /// The integrator configuration.
    pub fn integrator(&self) -> &IntegratorConfig {
        &self.integrator
    }

    /// Initial state a = Wx + b.
    pub fn initial_state(&self, x: &[f64]) -> Result<Vec<f64>, NodeError> {
        if x.len() != self.input_dim() {
            return Err(NodeError::Shape(format!(
                "input has {} entries, expected {}",
                x.len(),
                self.input_dim()
            )));
        }
        let mut a = self.inner_weight.matvec(x)?;
        for (ai, bi) in a.iter_mut().zip(&self.inner_bias) {
            *ai += bi;
        }
        Ok(a)
    }

    /// Flow of the underlying initial value problem from a = Wx + b.
    pub fn flow(&self, x: &[f64]) -> Result<FlowResult, NodeError> {
        let a = self.initial_state(x)?;
        flow_with_jacobian(&self.field, &a, self.final_time, &self.integrator)
    }
}

/// Evaluates Φ(x) = W̃·h_{Wx+b}(T) + b̃.
pub fn node_forward(node: &NeuralODE, x: &[f64]) -> Result<f64, NodeError> {
    let flow = node.flow(x)?;
    let row = node.outer_weight().row(0);
    let dot: f64 = row.iter().zip(&flow.state).map(|(w, h)| w * h).sum();
    Ok(dot + node.outer_bias())
}

/// Evaluates ∇Φ(x) = Wᵀ·Y(T)ᵀ·W̃ᵀ from the variational Jacobian.
pub fn node_gradient(node: &NeuralODE, x: &[f64]) -> Result<Vec<f64>, NodeError> {
    let flow = node.flow(x)?;
    let eta = eta_gradient(node, &flow)?;
    Ok(node.inner_weight().transpose().matvec(&eta)?)
}

/// ∇η(a) = Y(T)ᵀ·W̃ᵀ, the gradient of the output with respect to the
/// initial state of the flow.
fn eta_gradient(node: &NeuralODE, flow: &FlowResult) -> Result<Vec<f64>, NodeError> {
    Ok(flow.jacobian.transpose().matvec(&node.outer_weight().row(0))?)
}

/// Evaluates the Hessian H_Φ(x) = Wᵀ·H_η(a)·W.
///
/// H_η is obtained by central finite differences of the analytic initial-
/// state gradient ∇η(a) = Y(T)ᵀW̃ᵀ; the inner and outer affine layers
/// contribute no curvature of their own.
pub fn node_hessian(node: &NeuralODE, x: &[f64]) -> Result<Matrix, NodeError> {
    let m = node.state_dim();
    let a = node.initial_state(x)?;
    let a_norm = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let step = (1e-5_f64).max(1e-5 * a_norm);
    let mut h_eta = Matrix::zeros(m, m);
    for j in 0..m {
        let mut ap = a.clone();
        ap[j] += step;
        let mut am = a.clone();
        am[j] -= step;
        let flow_p = flow_with_jacobian(&node.field, &ap, node.final_time, &node.integrator)?;
        let flow_m = flow_with_jacobian(&node.field, &am, node.final_time, &node.integrator)?;
        let gp = eta_gradient(node, &flow_p)?;
        let gm = eta_gradient(node, &flow_m)?;
        for i in 0..m {
            h_eta.set(i, j, (gp[i] - gm[i]) / (2.0 * step));
        }
    }
    // Symmetrize the finite-difference round-off away.
    let h_eta = h_eta.add(&h_eta.transpose())?.scale(0.5);
    let w = node.inner_weight();
    Ok(w.transpose().matmul(&h_eta)?.matmul(w)?)
}

/// Verdict of the neural ODE architecture partition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NodeVerdict {
    /// n ≥ m with full-rank W and nonzero W̃: no critical points exist.
    NonAugmented,
    /// n < m with full-rank W and nonzero W̃.
    Augmented,
    /// rank(W) < min(m, n) or W̃ = 0: only degenerate critical points.
    Degenerate,
}

/// Architecture partition of a neural ODE with the measured ranks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodePartition {
    /// Which of the three disjoint classes the node falls into.
    pub verdict: NodeVerdict,
    /// Numerical rank of W.
    pub rank_inner: usize,
    /// Numerical rank of W̃ (0 or 1).
    pub rank_outer: usize,
}

/// Partitions a neural ODE into non-augmented, augmented, or degenerate.
pub fn classify_node(node: &NeuralODE) -> Result<NodePartition, NodeError> {
    let rank_inner = linalg::rank_of(node.inner_weight())?;
    let rank_outer = linalg::rank_of(node.outer_weight())?;
    let n = node.input_dim();
    let m = node.state_dim();
    let verdict = if rank_inner < n.min(m) || rank_outer == 0 {
        NodeVerdict::Degenerate
    } else if n >= m {
        NodeVerdict::NonAugmented
    } else {
        NodeVerdict::Augmented
    };
    Ok(NodePartition { verdict, rank_inner, rank_outer })
}

impl DifferentiableScalarMap for NeuralODE {
    fn input_dim(&self) -> usize {
        NeuralODE::input_dim(self)
    }

    fn value(&self, x: &[f64]) -> Result<f64, MorseError> {
        Ok(node_forward(self, x)?)
    }

    fn gradient(&self, x: &[f64]) -> Result<Vec<f64>, MorseError> {
        Ok(node_gradient(self, x)?)
    }

    fn hessian(&self, x: &[f64]) -> Result<Matrix, MorseError> {
        Ok(node_hessian(self, x)?)
    }
}

/// Classifies a neural ODE into C1/C2/C3, deriving the theorem evidence
/// from its architecture partition: non-augmented nodes are C1 everywhere,
/// degenerate nodes can only have degenerate critical points.
pub fn classify_node_map(node: &NeuralODE, cfg: &SearchConfig) -> Result<ClassReport, MorseError> {
    let partition = classify_node(node)?;
    let evidence = match partition.verdict {
        NodeVerdict::NonAugmented => TheoremEvidence::NonAugmentedFullRank,
        NodeVerdict::Augmented => TheoremEvidence::None,
        NodeVerdict::Degenerate => TheoremEvidence::DegenerateNodeFamily,
    };
    morse::classify_map(node, &evidence, cfg)
}

/// Chooses a nonzero outer weight W̃ such that the node has a critical
/// point at x.
///
/// The gradient factors as Wᵀ·Y(T)ᵀ·W̃ᵀ with Y(T) always invertible, so it
/// vanishes exactly when W̃ᵀ lies in the null space of Wᵀ·Y(T)ᵀ — which is
/// nontrivial for augmented nodes (n < m) and for rank-deficient W. The
/// null direction is found as a left null row of the product's transpose.
pub fn construct_node_critical_weights(
    node: &NeuralODE,
    x: &[f64],
) -> Result<Matrix, NodeError> {
    let n = node.input_dim();
    let m = node.state_dim();
    let rank_inner = linalg::rank_of(node.inner_weight())?;
    if n >= m && rank_inner == n.min(m) {
        return Err(NodeError::Unsupported(
            "a non-augmented node with full-rank W has a trivial null space; \
             no outer weight can place a critical point"
                .into(),
        ));
    }
    let flow = node.flow(x)?;
    // product = Wᵀ·Y(T)ᵀ, an n×m matrix of rank < m.
    let product = node
        .inner_weight()
        .transpose()
        .matmul(&flow.jacobian.transpose())?;
    let w_tilde = left_null_row(&product.transpose(), DEFAULT_RANK_TOL)?.ok_or_else(|| {
        NodeError::Precondition("the gradient product has full column rank".into())
    })?;
    let mut candidate = node.clone();
    candidate.set_outer_weight(w_tilde.clone())?;
    let grad = node_gradient(&candidate, x)?;
    let grad_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if grad_norm > 1e-8 {
        return Err(NodeError::Precondition(format!(
            "constructed outer weight leaves gradient norm {grad_norm:.3e}"
        )));
    }
    Ok(w_tilde)
}

/// Embeds a scalar map exactly into an augmented neural ODE.
///
/// With W = (Id_n; 0), b = 0, W̃ = (0,…,0,1), b̃ = 0 and the field
/// (0,…,0, Ψ(h₁,…,h_n)/T), the first n states stay frozen at x and the
/// last state integrates to exactly Ψ(x) at time T.
pub fn build_embedding_node(
    target: EmbeddingTarget,
    state_dim: usize,
    final_time: f64,
    integrator: IntegratorConfig,
) -> Result<NeuralODE, NodeError> {
    let n = target.input_dim();
    if state_dim <= n {
        return Err(NodeError::Precondition(format!(
            "embedding needs state dimension above the {n} target inputs, got {state_dim}"
        )));
    }
    let mut w = Matrix::zeros(state_dim, n);
    for i in 0..n {
        w.set(i, i, 1.0);
    }
    let mut w_tilde = Matrix::zeros(1, state_dim);
    w_tilde.set(0, state_dim - 1, 1.0);
    let field = VectorField::Embedding { target, state_dim, final_time };
    NeuralODE::new(w, vec![0.0; state_dim], w_tilde, 0.0, final_time, field, integrator)
}

/// Outcome of the output perturbation bound measurement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationCheck {
    /// Measured sup over sampled trajectories of ‖f − f̂‖∞.
    pub field_gap: f64,
    /// Measured sup over sampled inputs of |Φ(x) − Φ̂(x)|.
    pub output_gap: f64,
    /// ‖W̃‖∞ · T · (measured field gap).
    pub bound: f64,
    /// Whether the output gap stays within the bound plus integrator slack.
    pub holds: bool,
}

/// Measures the output deviation caused by perturbing the vector field and
/// compares it against the bound ‖W̃‖∞·T·δ.
///
/// The field gap δ is measured (not assumed) along the unperturbed
/// trajectories at evenly spaced times; the output gap is measured by
/// integrating both systems from the same sampled inputs.
pub fn perturbation_bound_check(
    node: &NeuralODE,
    perturbed_field: &VectorField,
    domain: &[(f64, f64)],
    samples: usize,
) -> Result<PerturbationCheck, NodeError> {
    if perturbed_field.dim() != node.state_dim() {
        return Err(NodeError::Shape(format!(
            "perturbed field has dimension {}, node state is {}",
            perturbed_field.dim(),
            node.state_dim()
        )));
    }
    if domain.len() != node.input_dim() || samples == 0 {
        return Err(NodeError::Precondition(
            "domain must match the input dimension and samples must be positive".into(),
        ));
    }
    let mut perturbed = node.clone();
    perturbed.field = perturbed_field.clone();
    let mut field_gap = 0.0_f64;
    let mut output_gap = 0.0_f64;
    let checkpoints = 64;
    for x in halton_points(domain, samples) {
        let base_value = node_forward(node, &x)?;
        let pert_value = node_forward(&perturbed, &x)?;
        output_gap = output_gap.max((base_value - pert_value).abs());
        // Measure ‖f − f̂‖∞ at evenly spaced times along both the base and
        // the perturbed trajectory, so the gap covers the tube the
        // perturbed solution actually moves through.
        let a = node.initial_state(&x)?;
        for i in 0..=checkpoints {
            let t = node.final_time * i as f64 / checkpoints as f64;
            let states = if i == 0 {
                vec![a.clone()]
            } else {
                vec![
                    flow_with_jacobian(&node.field, &a, t, &node.integrator)?.state,
                    flow_with_jacobian(perturbed_field, &a, t, &node.integrator)?.state,
                ]
            };
            for state in &states {
                let f_base = node.field.eval(t, state)?;
                let f_pert = perturbed_field.eval(t, state)?;
                let gap = f_base
                    .iter()
                    .zip(&f_pert)
                    .fold(0.0_f64, |acc, (u, v)| acc.max((u - v).abs()));
                field_gap = field_gap.max(gap);
            }
        }
    }
    let w_inf: f64 = node.outer_weight().row(0).iter().map(|w| w.abs()).sum();
    let bound = w_inf * node.final_time * field_gap;
    let slack = 1e-7 * (1.0 + output_gap.abs());
    // First-order bound: plain for small perturbations; Grönwall growth can
    // exceed it for expanding flows, so allow the measured exponential
    // amplification factor before declaring a violation.
    let holds = output_gap <= bound + slack
        || output_gap <= bound * (node.final_time * lipschitz_hint(perturbed_field)).exp() + slack;
    Ok(PerturbationCheck { field_gap, output_gap, bound, holds })
}

/// Crude Lipschitz estimate of a field used only to widen the perturbation
/// bound by the Grönwall factor for expanding flows.
fn lipschitz_hint(field: &VectorField) -> f64 {
    match field {
        VectorField::AffineLinear { matrix, .. } => matrix.max_abs() * matrix.cols() as f64,
        VectorField::Identity { .. } => 1.0,
        VectorField::Zero { .. } => 0.0,
        _ => 0.0,
    }
}
