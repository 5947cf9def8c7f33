//! Constructive reduction of an MLP to its normal form: an equivalent
//! network in which every weight matrix has full rank.
//!
//! Whenever a weight matrix is rank-deficient, one node (or one input
//! coordinate) can be removed without changing the output:
//!
//! * a dependent **column** of W_{l+1} means node i of h_l feeds the next
//!   layer redundantly — fold its outgoing weights into the other nodes'
//!   rows of W̃_l and delete it (*inner reduction*);
//! * a dependent **row** of W̃_l means node i of h_l carries a redundant
//!   linear combination — fold it into the columns of W_{l+1} and solve a
//!   small consistent system for the replacement bias (*outer reduction*);
//! * dependent columns of W_1 are removed by a linear change of input
//!   coordinates x ↦ (x_j + α_j x_i)_{j≠i}, accumulated into A with
//!   Φ(x) = Φ̄(Ax);
//! * if W_1, W̃_L, or any product W_{l+1}W̃_l is zero, the network is
//!   constant and collapses to a one-layer constant form.
//!
//! The full algorithm runs these in the fixed order (i) input coordinates,
//! (ii) inner reductions for l = 1..L−1, (iii) outer reductions for
//! l = 1..L−1, (iv) assembly; this order guarantees the rank bookkeeping
//! (outer reductions preserve the full-rankness already established for the
//! inner matrices).

use crate::linalg::{
    is_full_rank, least_squares_minimum_norm, left_null_row, null_space_basis, rank_of,
    LinalgError, Matrix, DEFAULT_RANK_TOL,
};
use crate::mlp::{forward, Activation, MLPNetwork, MlpError};
use crate::morse::{ClassReport, MapClass};
use crate::sampling::halton_points;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors from the normal-form machinery.
#[derive(Debug, Error)]
pub enum NormalFormError {
    /// A single-step reduction was requested on a matrix that does not
    /// satisfy its rank precondition.
    #[error("reduction precondition violated at layer {layer}: {message}")]
    Precondition { layer: usize, message: String },
    /// The replacement-bias system of an outer reduction was inconsistent.
    /// The equivalence lemma rules this out, so it indicates a numerical
    /// breakdown and is reported with diagnostics.
    #[error("outer reduction at layer {layer}: bias system unsolvable ({source})")]
    BiasSystem { layer: usize, source: LinalgError },
    /// Underlying MLP failure.
    #[error(transparent)]
    Mlp(#[from] MlpError),
    /// Underlying linear-algebra failure.
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Kind of a single reduction step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReductionKind {
    /// A dependent input coordinate was merged into the others.
    InputCoordChange,
    /// A node was removed because of a dependent column of the next inner
    /// weight matrix.
    InnerReduction,
    /// A node was removed because of a dependent row of its outer weight
    /// matrix.
    OuterReduction,
    /// The whole network collapsed to a constant.
    ConstantCollapse,
}

/// Record of one reduction step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReductionStep {
    /// What kind of reduction was applied.
    pub kind: ReductionKind,
    /// Layer index l of the removed node (0 for input coordinates).
    pub layer: usize,
    /// Zero-based index of the removed node or coordinate.
    pub removed_index: usize,
    /// Dependence coefficients α_j for the surviving indices, in order.
    pub coefficients: Vec<f64>,
    /// Width sequence d_0..d_{2L} after the step.
    pub resulting_dims: Vec<usize>,
}

/// Result of the full normal-form algorithm.
#[derive(Debug, Clone)]
pub struct NormalFormResult {
    /// The equivalent network with only full-rank weight matrices (or the
    /// one-layer constant form).
    pub reduced: MLPNetwork,
    /// Full-rank coordinate change A (n̄×n) with Φ(x) = Φ̄(Ax); the
    /// identity when no input coordinate was removed.
    pub coord_change: Matrix,
    /// All reduction steps in application order.
    pub steps: Vec<ReductionStep>,
    /// Present exactly when the network collapsed to a constant.
    pub constant_value: Option<f64>,
}

/// Dependence data of a rank-deficient matrix along one side: the removed
/// index i and the coefficients α_j with (column or row) i = Σ α_j (j-th).
///
/// The null vector determines α only up to the choice of i; among all
/// indices whose null-vector entry is at least half the largest magnitude we
/// take the highest index. This matches the worked reduction sequences the
/// tests pin down and keeps the coefficients small.
fn dependence_from_null_vector(alpha_tilde: &[f64]) -> Option<(usize, Vec<f64>)> {
    let max = alpha_tilde.iter().fold(0.0f64, |acc, a| acc.max(a.abs()));
    if max == 0.0 {
        return None;
    }
    let pivot = (0..alpha_tilde.len())
        .filter(|&j| alpha_tilde[j].abs() >= 0.5 * max * (1.0 - 1e-9))
        .max()
        .expect("at least one index above half the maximum");
    let alpha: Vec<f64> = alpha_tilde
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != pivot)
        .map(|(_, a)| -a / alpha_tilde[pivot])
        .collect();
    Some((pivot, alpha))
}

/// Null vector of the columns of `m` (a right null vector), if the columns
/// are dependent.
fn column_dependence(m: &Matrix) -> Result<Option<(usize, Vec<f64>)>, NormalFormError> {
    let null = left_null_row(&m.transpose(), DEFAULT_RANK_TOL)?;
    Ok(null.and_then(|v| dependence_from_null_vector(&v.row(0))))
}

fn drop_column(m: &Matrix, i: usize) -> Matrix {
    let rows: Vec<Vec<f64>> = (0..m.rows())
        .map(|r| {
            let mut row = m.row(r);
            row.remove(i);
            row
        })
        .collect();
    Matrix::from_rows(&rows).expect("dropping a column preserves validity")
}

fn drop_row(m: &Matrix, i: usize) -> Matrix {
    let rows: Vec<Vec<f64>> = (0..m.rows()).filter(|&r| r != i).map(|r| m.row(r)).collect();
    Matrix::from_rows(&rows).expect("dropping a row preserves validity")
}

fn rebuild(
    net: &MLPNetwork,
    edit: impl FnOnce(&mut Vec<Matrix>, &mut Vec<Matrix>, &mut Vec<Vec<f64>>, &mut Vec<Vec<f64>>),
) -> Result<MLPNetwork, MlpError> {
    let layers = net.layer_count();
    let mut inner: Vec<Matrix> = (1..=layers).map(|l| net.inner_weight(l).clone()).collect();
    let mut outer: Vec<Matrix> = (1..=layers).map(|l| net.outer_weight(l).clone()).collect();
    let mut inner_b: Vec<Vec<f64>> = (1..=layers).map(|l| net.inner_bias(l).to_vec()).collect();
    let mut outer_b: Vec<Vec<f64>> = (1..=layers).map(|l| net.outer_bias(l).to_vec()).collect();
    let activations: Vec<Vec<Activation>> =
        (1..=layers).map(|l| net.layer_activations(l).to_vec()).collect();
    edit(&mut inner, &mut outer, &mut inner_b, &mut outer_b);
    MLPNetwork::new(inner, outer, inner_b, outer_b, activations)
}

/// Inner reduction at layer l: removes one node of h_l using a dependent
/// column of W_{l+1}.
///
/// With [W_{l+1}]_i = Σ_{j≠i} α_j [W_{l+1}]_j, the reduced network drops
/// column i of W_{l+1} and row i of W̃_l and b̃_l, adding α_j times the
/// removed row/entry onto each surviving one; the products W_{l+1}W̃_l and
/// W_{l+1}b̃_l are unchanged, so the output is preserved exactly.
pub fn reduce_inner(
    net: &MLPNetwork,
    l: usize,
) -> Result<(MLPNetwork, ReductionStep), NormalFormError> {
    let layers = net.layer_count();
    if l == 0 || l >= layers {
        return Err(NormalFormError::Precondition {
            layer: l,
            message: format!("inner reduction needs 1 <= l <= {}", layers - 1),
        });
    }
    let w_next = net.inner_weight(l + 1);
    let rank = rank_of(w_next)?;
    if rank == 0 || rank == w_next.rows().min(w_next.cols()) {
        return Err(NormalFormError::Precondition {
            layer: l,
            message: format!(
                "W_{} has rank {rank} (shape {}x{}); inner reduction needs 0 < rank < min",
                l + 1,
                w_next.rows(),
                w_next.cols()
            ),
        });
    }
    let (i, alpha) = column_dependence(w_next)?.ok_or_else(|| NormalFormError::Precondition {
        layer: l,
        message: "no column dependence found despite rank deficiency".into(),
    })?;
    let reduced = rebuild(net, |inner, outer, _, outer_b| {
        inner[l] = drop_column(&inner[l], i);
        let wt = &outer[l - 1];
        let mut rows: Vec<Vec<f64>> = Vec::with_capacity(wt.rows() - 1);
        let removed_row = wt.row(i);
        let mut surviving = alpha.iter();
        for r in 0..wt.rows() {
            if r == i {
                continue;
            }
            let a = surviving.next().expect("one coefficient per surviving row");
            rows.push(wt.row(r).iter().zip(&removed_row).map(|(x, y)| x + a * y).collect());
        }
        outer[l - 1] = Matrix::from_rows(&rows).expect("reduced outer weight is valid");
        let removed_bias = outer_b[l - 1][i];
        let mut bias: Vec<f64> = Vec::with_capacity(outer_b[l - 1].len() - 1);
        let mut surviving = alpha.iter();
        for (r, value) in outer_b[l - 1].iter().enumerate() {
            if r == i {
                continue;
            }
            let a = surviving.next().expect("one coefficient per surviving entry");
            bias.push(value + a * removed_bias);
        }
        outer_b[l - 1] = bias;
    })?;
    let step = ReductionStep {
        kind: ReductionKind::InnerReduction,
        layer: l,
        removed_index: i,
        coefficients: alpha,
        resulting_dims: reduced.dims(),
    };
    Ok((reduced, step))
}

/// Outer reduction at layer l: removes one node of h_l using a dependent
/// row of W̃_l.
///
/// With row i of W̃_l equal to Σ_{j≠i} α_j row_j, the reduced network drops
/// row i of W̃_l, adds α_j times column i of W_{l+1} onto each surviving
/// column j, and replaces the bias by b̄̃_l = y_l + c_l where y_l is b̃_l
/// without entry i and c_l solves the consistent system
/// W̄_{l+1} c_l = W_{l+1} b̃_l − W̄_{l+1} y_l (minimum-norm solution).
pub fn reduce_outer(
    net: &MLPNetwork,
    l: usize,
) -> Result<(MLPNetwork, ReductionStep), NormalFormError> {
    let layers = net.layer_count();
    if l == 0 || l >= layers {
        return Err(NormalFormError::Precondition {
            layer: l,
            message: format!("outer reduction needs 1 <= l <= {}", layers - 1),
        });
    }
    let wt = net.outer_weight(l);
    let rank = rank_of(wt)?;
    if rank == 0 || rank == wt.rows().min(wt.cols()) {
        return Err(NormalFormError::Precondition {
            layer: l,
            message: format!(
                "W̃_{l} has rank {rank} (shape {}x{}); outer reduction needs 0 < rank < min",
                wt.rows(),
                wt.cols()
            ),
        });
    }
    // Any left null vector of W̃_l yields an equivalent network, but a
    // vector orthogonal to the right null space of W_{l+1} would destroy
    // W_{l+1}'s rank and leave the bias system unsolvable. When the null
    // space has dimension > 1 we therefore try several deterministic
    // candidates and keep the first one that preserves rank.
    let basis = null_space_basis(&wt.transpose())?;
    if basis.is_empty() {
        return Err(NormalFormError::Precondition {
            layer: l,
            message: "no row dependence found despite rank deficiency".into(),
        });
    }
    let mut candidates: Vec<Vec<f64>> = basis.clone();
    if basis.len() > 1 {
        let dim = basis[0].len();
        let mix = |weights: &dyn Fn(usize) -> f64| -> Vec<f64> {
            let mut v = vec![0.0; dim];
            for (k, b) in basis.iter().enumerate() {
                for (vi, bi) in v.iter_mut().zip(b) {
                    *vi += weights(k) * bi;
                }
            }
            v
        };
        candidates.push(mix(&|_| 1.0));
        candidates.push(mix(&|k| if k % 2 == 0 { 1.0 } else { -1.0 }));
        candidates.push(mix(&|k| (k + 1) as f64));
    }
    let mut last_error = None;
    for candidate in candidates {
        match try_outer_reduction(net, l, &candidate) {
            Ok(result) => return Ok(result),
            Err(e) => last_error = Some(e),
        }
    }
    Err(last_error.expect("at least one candidate was tried"))
}

/// One attempted outer reduction with a specific left null vector of W̃_l.
fn try_outer_reduction(
    net: &MLPNetwork,
    l: usize,
    null_vector: &[f64],
) -> Result<(MLPNetwork, ReductionStep), NormalFormError> {
    let (i, alpha) =
        dependence_from_null_vector(null_vector).ok_or_else(|| NormalFormError::Precondition {
            layer: l,
            message: "null vector is numerically zero".into(),
        })?;
    let w_next = net.inner_weight(l + 1);
    let removed_col = w_next.column(i);
    let mut new_cols: Vec<Vec<f64>> = Vec::with_capacity(w_next.cols() - 1);
    let mut surviving = alpha.iter();
    for c in 0..w_next.cols() {
        if c == i {
            continue;
        }
        let a = surviving.next().expect("one coefficient per surviving column");
        new_cols.push(w_next.column(c).iter().zip(&removed_col).map(|(x, y)| x + a * y).collect());
    }
    let mut w_next_reduced = Matrix::zeros(w_next.rows(), w_next.cols() - 1);
    for (c, col) in new_cols.iter().enumerate() {
        for (r, value) in col.iter().enumerate() {
            w_next_reduced.set(r, c, *value);
        }
    }
    // The reduction must not lose rank in W_{l+1}: if it does, this null
    // vector was a bad choice and the caller tries another.
    let expected_rank = rank_of(w_next)?.min(w_next.rows().min(w_next.cols() - 1));
    let reduced_rank = rank_of(&w_next_reduced)?;
    if reduced_rank < expected_rank {
        return Err(NormalFormError::Precondition {
            layer: l,
            message: format!(
                "candidate null vector degrades rank of W_{} from {expected_rank} to {reduced_rank}",
                l + 1
            ),
        });
    }
    // Replacement bias: W̄_{l+1}(y + c) + b_{l+1} must reproduce
    // W_{l+1}b̃_l + b_{l+1}.
    let b_tilde = net.outer_bias(l).to_vec();
    let y: Vec<f64> =
        b_tilde.iter().enumerate().filter(|(r, _)| *r != i).map(|(_, v)| *v).collect();
    let target = w_next.matvec(&b_tilde)?;
    let reached = w_next_reduced.matvec(&y)?;
    let rhs: Vec<f64> = target.iter().zip(&reached).map(|(t, r)| t - r).collect();
    // The system is consistent whenever the removed direction stays in the
    // reduced column span. When W_{l+1} is injective it cannot be (the
    // removed basis direction leaves the span), so the constant mismatch is
    // instead absorbed into the next layer's inner bias — the
    // pre-activations a_{l+1}, and hence the output, are preserved exactly
    // either way.
    let correction = least_squares_minimum_norm(&w_next_reduced, &rhs)
        .map_err(|source| NormalFormError::BiasSystem { layer: l, source })?;
    let new_bias: Vec<f64> = y.iter().zip(&correction).map(|(a, b)| a + b).collect();
    let reached_bias = w_next_reduced.matvec(&new_bias)?;
    let bias_shift: Vec<f64> = target.iter().zip(&reached_bias).map(|(t, r)| t - r).collect();

    let reduced = rebuild(net, |inner, outer, inner_b, outer_b| {
        outer[l - 1] = drop_row(&outer[l - 1], i);
        inner[l] = w_next_reduced;
        outer_b[l - 1] = new_bias;
        for (b, shift) in inner_b[l].iter_mut().zip(&bias_shift) {
            *b += shift;
        }
    })?;
    let step = ReductionStep {
        kind: ReductionKind::OuterReduction,
        layer: l,
        removed_index: i,
        coefficients: alpha,
        resulting_dims: reduced.dims(),
    };
    Ok((reduced, step))
}

/// Removes dependent input coordinates until W_1 has full column rank,
/// composing the linear changes of coordinates into one full-rank A with
/// Φ(x) = Φ̄(Ax). Returns the reduced network, A, and the step log.
pub fn input_coordinate_reduction(
    net: &MLPNetwork,
) -> Result<(MLPNetwork, Matrix, Vec<ReductionStep>), NormalFormError> {
    let mut current = net.clone();
    let mut coord_change = Matrix::identity(net.input_dim());
    let mut steps = Vec::new();
    loop {
        let w1 = current.inner_weight(1);
        if rank_of(w1)? == 0 {
            return Err(NormalFormError::Precondition {
                layer: 0,
                message: "W_1 has rank 0; the network is constant".into(),
            });
        }
        let Some((i, alpha)) = column_dependence(w1)? else {
            // Columns independent: W_1 has full column rank.
            return Ok((current, coord_change, steps));
        };
        let width = w1.cols();
        // Elementary coordinate change: x ↦ (x_j + α_j x_i)_{j≠i}.
        let mut a_step = Matrix::zeros(width - 1, width);
        let mut row = 0;
        let mut surviving = alpha.iter();
        for j in 0..width {
            if j == i {
                continue;
            }
            a_step.set(row, j, 1.0);
            a_step.set(row, i, *surviving.next().expect("one coefficient per coordinate"));
            row += 1;
        }
        coord_change = a_step.matmul(&coord_change)?;
        current = rebuild(&current, |inner, _, _, _| {
            inner[0] = drop_column(&inner[0], i);
        })?;
        steps.push(ReductionStep {
            kind: ReductionKind::InputCoordChange,
            layer: 0,
            removed_index: i,
            coefficients: alpha,
            resulting_dims: current.dims(),
        });
    }
}

/// Returns the constant value when the network is constant: W_1 = 0,
/// W̃_L = 0, or some product W_{l+1}W̃_l = 0.
fn constant_collapse_value(net: &MLPNetwork) -> Result<Option<f64>, NormalFormError> {
    let layers = net.layer_count();
    let mut collapsed = rank_of(net.inner_weight(1))? == 0 || rank_of(net.outer_weight(layers))? == 0;
    if !collapsed {
        for l in 1..layers {
            let product = net.inner_weight(l + 1).matmul(net.outer_weight(l))?;
            if rank_of(&product)? == 0 {
                collapsed = true;
                break;
            }
        }
    }
    if !collapsed {
        return Ok(None);
    }
    let (value, _) = forward(net, &vec![0.0; net.input_dim()])?;
    Ok(Some(value))
}

/// Full normal-form algorithm.
///
/// Constant networks (case (b)) collapse to a one-layer constant form with
/// `constant_value = Φ(0)`. Otherwise (case (a)) the algorithm removes one
/// node per rank deficiency in the fixed order input coordinates → inner
/// reductions → outer reductions, and returns an equivalent network in
/// which every weight matrix has full rank.
pub fn normalize(net: &MLPNetwork) -> Result<NormalFormResult, NormalFormError> {
    let n = net.input_dim();
    if let Some(value) = constant_collapse_value(net)? {
        let reduced = MLPNetwork::with_uniform_activation(
            vec![Matrix::zeros(1, n)],
            vec![Matrix::zeros(1, 1)],
            vec![vec![0.0]],
            vec![vec![value]],
            Activation::Softplus,
        )?;
        let step = ReductionStep {
            kind: ReductionKind::ConstantCollapse,
            layer: 0,
            removed_index: 0,
            coefficients: Vec::new(),
            resulting_dims: reduced.dims(),
        };
        return Ok(NormalFormResult {
            reduced,
            coord_change: Matrix::identity(n),
            steps: vec![step],
            constant_value: Some(value),
        });
    }
    // Step (i): input coordinate changes until W_1 has full column rank.
    let (mut current, coord_change, mut steps) = input_coordinate_reduction(net)?;
    let layers = current.layer_count();
    // Step (ii): inner reductions, layer by layer.
    for l in 1..layers {
        while !is_full_rank(current.inner_weight(l + 1))? {
            let (next, step) = reduce_inner(&current, l)?;
            current = next;
            steps.push(step);
        }
    }
    // Step (iii): outer reductions, layer by layer.
    for l in 1..layers {
        while !is_full_rank(current.outer_weight(l))? {
            let (next, step) = reduce_outer(&current, l)?;
            current = next;
            steps.push(step);
        }
    }
    // Step (iv): every weight map is now full rank (W̃_L has rank 1 because
    // it is a nonzero row). Verified defensively.
    for j in 1..=2 * layers {
        debug_assert!(
            is_full_rank(current.v_matrix(j)?)?,
            "weight map {j} not full rank after normalization"
        );
    }
    Ok(NormalFormResult { reduced: current, coord_change, steps, constant_value: None })
}

/// Maximum absolute deviation |Φ(x) − Φ̄(Ax)| over quasi-random samples in
/// the given box (one (lo, hi) pair per input coordinate).
pub fn verify_equivalence(
    original: &MLPNetwork,
    result: &NormalFormResult,
    domain: &[(f64, f64)],
    samples: usize,
) -> Result<f64, NormalFormError> {
    let mut max_dev: f64 = 0.0;
    for x in halton_points(domain, samples) {
        let (value, _) = forward(original, &x)?;
        let y = result.coord_change.matvec(&x)?;
        let (reduced_value, _) = forward(&result.reduced, &y)?;
        max_dev = max_dev.max((value - reduced_value).abs());
    }
    Ok(max_dev)
}

/// Transfers a class verdict from the normal form back to the original
/// network through the coordinate change Φ(x) = Φ̄(Ax).
///
/// C1 transfers in both directions regardless of dimensions. When the
/// coordinate change preserves the input dimension it is invertible, so C2
/// and C3 transfer unchanged as well. When it reduces the dimension, every
/// isolated critical point of the normal form becomes a positive-dimension
/// manifold of critical points of the original map, so any critical point
/// of the normal form (degenerate or not) makes the original of class C3;
/// the original can never be of class C2.
pub fn class_under_coordinate_change(
    reduced_report: &ClassReport,
    reduced_dim: usize,
    original_dim: usize,
) -> ClassReport {
    let mut report = reduced_report.clone();
    report.notes.push(format!(
        "transferred from the normal form in dimension {reduced_dim} to the \
         original map in dimension {original_dim}"
    ));
    if reduced_dim == original_dim {
        return report;
    }
    match reduced_report.verdict {
        MapClass::C1 | MapClass::Undetermined => {}
        MapClass::C2 | MapClass::C3 => {
            report.verdict = MapClass::C3;
            report.notes.push(
                "the dimension-reducing coordinate change turns every critical \
                 point of the normal form into a manifold of degenerate critical \
                 points; class C2 is impossible for the original map"
                    .to_string(),
            );
        }
    }
    if !report.critical_points.is_empty() {
        report.notes.push(
            "critical-point witnesses are expressed in the reduced coordinates; \
             each corresponds to the affine set {x : Ax = x̄*} of the original map"
                .to_string(),
        );
    }
    report
}
