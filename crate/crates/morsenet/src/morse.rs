//! Critical-point search and regularity classification.
//!
//! A scalar map is of class C1 when it has no critical points, C2 when all
//! critical points are non-degenerate (a Morse function with equilibria),
//! and C3 when at least one critical point is degenerate. This module finds
//! critical points by damped Newton iteration from quasi-random starts,
//! classifies the map using theorem shortcuts where the architecture
//! certifies the verdict, analyzes bottleneck networks through the partial
//! gradient product Z_l, synthesizes weights that place a critical point at
//! a prescribed input, and measures the quadratic approximation lower bound
//! for maps without critical points.

use crate::linalg::{
    self, least_squares_minimum_norm, left_null_row, product_chain, LinalgError, Matrix,
    DEFAULT_RANK_TOL,
};
use crate::mlp::{
    self, classify_architecture, ArchitectureVerdict, BottleneckFlavor, MLPNetwork, MlpError,
};
use crate::sampling::halton_points;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors raised by critical-point search and class analysis.
#[derive(Debug, Error)]
pub enum MorseError {
    /// A search configuration field is out of range.
    #[error("invalid search configuration: {0}")]
    InvalidConfig(String),
    /// An operation's hypothesis does not hold for the given inputs.
    #[error("precondition violated: {0}")]
    Precondition(String),
    /// The operation is not defined for the given architecture.
    #[error("unsupported architecture: {0}")]
    Unsupported(String),
    /// An iterative construction failed to reach its tolerance.
    #[error("iteration limit reached after {iterations} steps (residual {residual:.3e})")]
    IterationLimit { iterations: usize, residual: f64 },
    /// Requested evaluation point violates a domain requirement.
    #[error("domain violation: {0}")]
    Domain(String),
    /// Evaluating the map itself failed (e.g. the underlying flow diverged).
    #[error("map evaluation failed: {0}")]
    Evaluation(String),
    /// Underlying network evaluation failed.
    #[error(transparent)]
    Mlp(#[from] MlpError),
    /// Underlying linear algebra failed.
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Abstract provider of a twice-differentiable scalar map Φ: ℝⁿ → ℝ.
///
/// Implemented by MLP networks and neural ODEs; the search and
/// classification routines only consume this interface.
pub trait DifferentiableScalarMap {
    /// Input dimension n.
    fn input_dim(&self) -> usize;
    /// Evaluates Φ(x).
    fn value(&self, x: &[f64]) -> Result<f64, MorseError>;
    /// Evaluates ∇Φ(x) as an n-vector.
    fn gradient(&self, x: &[f64]) -> Result<Vec<f64>, MorseError>;
    /// Evaluates the Hessian H_Φ(x) as a symmetric n×n matrix.
    fn hessian(&self, x: &[f64]) -> Result<Matrix, MorseError>;
}

impl DifferentiableScalarMap for MLPNetwork {
    fn input_dim(&self) -> usize {
        MLPNetwork::input_dim(self)
    }

    fn value(&self, x: &[f64]) -> Result<f64, MorseError> {
        Ok(mlp::forward(self, x)?.0)
    }

    fn gradient(&self, x: &[f64]) -> Result<Vec<f64>, MorseError> {
        Ok(mlp::gradient(self, x)?)
    }

    fn hessian(&self, x: &[f64]) -> Result<Matrix, MorseError> {
        Ok(mlp::hessian(self, x)?)
    }
}

/// Regularity of a critical point, decided by the Hessian spectrum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regularity {
    /// All Hessian eigenvalues are bounded away from zero.
    NonDegenerate,
    /// At least one Hessian eigenvalue sits below the degeneracy threshold.
    Degenerate,
    /// The Hessian could not be evaluated at the point.
    Indeterminate,
}

/// A converged critical point with its local second-order data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalPoint {
    /// Location x* with ‖∇Φ(x*)‖ within the Newton tolerance.
    pub location: Vec<f64>,
    /// Independently re-evaluated gradient norm at the location.
    pub gradient_norm: f64,
    /// Hessian eigenvalues in ascending order (empty when Indeterminate).
    pub hessian_eigenvalues: Vec<f64>,
    /// Non-degenerate, degenerate, or indeterminate.
    pub regularity: Regularity,
    /// Number of negative Hessian eigenvalues.
    pub morse_index: usize,
}

/// Verdict of the class analysis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MapClass {
    /// No critical points.
    C1,
    /// Critical points exist and all are non-degenerate.
    C2,
    /// At least one degenerate critical point.
    C3,
    /// The evidence does not support any of the three classes.
    Undetermined,
}

/// How the verdict was established.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Certification {
    /// A structural theorem applies to the verified architecture and rank
    /// facts; the verdict holds on the whole input space.
    TheoremCertified,
    /// The verdict summarizes the numerical search on the given box only.
    SearchBased,
}

/// Outcome of classifying a scalar map into C1/C2/C3.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    /// The class verdict.
    pub verdict: MapClass,
    /// Whether a theorem or only the search backs the verdict.
    pub certification: Certification,
    /// Critical points found by the search, sorted by first coordinate.
    pub critical_points: Vec<CriticalPoint>,
    /// The box the search ran on.
    pub domain: Vec<(f64, f64)>,
    /// Human-readable caveats and supporting facts.
    pub notes: Vec<String>,
}

/// Parameters of the multistart Newton search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    /// Axis-aligned search box, one (lo, hi) pair per input coordinate.
    pub domain: Vec<(f64, f64)>,
    /// Number of quasi-random starting points.
    pub start_count: usize,
    /// Gradient-norm tolerance for convergence.
    pub newton_tol: f64,
    /// Maximum Newton iterations per start.
    pub max_iterations: usize,
    /// Two converged points closer than this are reported once.
    pub dedupe_radius: f64,
    /// Relative eigenvalue threshold separating degenerate from
    /// non-degenerate Hessians.
    pub degeneracy_threshold: f64,
}

impl SearchConfig {
    /// Configuration with default tolerances over the given box.
    pub fn new(domain: Vec<(f64, f64)>) -> Self {
        Self {
            domain,
            start_count: 64,
            newton_tol: 1e-10,
            max_iterations: 100,
            dedupe_radius: 1e-6,
            degeneracy_threshold: 1e-6,
        }
    }

    fn validate(&self, n: usize) -> Result<(), MorseError> {
        if self.domain.len() != n {
            return Err(MorseError::InvalidConfig(format!(
                "domain has {} axes but the map has {} inputs",
                self.domain.len(),
                n
            )));
        }
        for &(lo, hi) in &self.domain {
            if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(MorseError::InvalidConfig(format!(
                    "domain axis ({lo}, {hi}) is not a finite non-empty interval"
                )));
            }
        }
        let positive = [
            ("start_count", self.start_count as f64),
            ("newton_tol", self.newton_tol),
            ("max_iterations", self.max_iterations as f64),
            ("dedupe_radius", self.dedupe_radius),
            ("degeneracy_threshold", self.degeneracy_threshold),
        ];
        for (name, value) in positive {
            if !(value > 0.0) {
                return Err(MorseError::InvalidConfig(format!("{name} must be positive")));
            }
        }
        Ok(())
    }

    fn contains(&self, x: &[f64]) -> bool {
        x.iter().zip(&self.domain).all(|(&xi, &(lo, hi))| xi >= lo && xi <= hi)
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Eigenvalues of a symmetric matrix in ascending order.
fn symmetric_eigenvalues(h: &Matrix) -> Vec<f64> {
    let eig = nalgebra::SymmetricEigen::new(h.to_na());
    let mut values: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    values.sort_by(|a, b| a.partial_cmp(b).expect("finite eigenvalues"));
    values
}

/// Damped Newton iteration on ∇Φ = 0 from a single start; returns the
/// converged point or None when the start does not converge.
fn newton_from(
    map: &dyn DifferentiableScalarMap,
    start: &[f64],
    tol: f64,
    max_iterations: usize,
) -> Result<Option<Vec<f64>>, MorseError> {
    let mut x = start.to_vec();
    let mut grad = map.gradient(&x)?;
    let mut grad_norm = norm(&grad);
    for _ in 0..max_iterations {
        if grad_norm <= tol {
            return Ok(Some(x));
        }
        let hess = map.hessian(&x)?;
        let rhs: Vec<f64> = grad.iter().map(|g| -g).collect();
        // The pseudo-inverse step keeps the iteration defined when the
        // Hessian is singular along the path.
        let delta = least_squares_minimum_norm(&hess, &rhs)?;
        if norm(&delta) <= 1e-16 * (1.0 + norm(&x)) {
            return Ok(None);
        }
        // Backtracking damping: halve the step until the gradient norm
        // strictly decreases.
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let candidate: Vec<f64> =
                x.iter().zip(&delta).map(|(xi, di)| xi + step * di).collect();
            let g = map.gradient(&candidate)?;
            let gn = norm(&g);
            if gn < grad_norm {
                x = candidate;
                grad = g;
                grad_norm = gn;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            return Ok(None);
        }
    }
    if grad_norm <= tol {
        Ok(Some(x))
    } else {
        Ok(None)
    }
}

/// Builds the annotated critical point at a converged location.
fn annotate_point(
    map: &dyn DifferentiableScalarMap,
    x: Vec<f64>,
    cfg: &SearchConfig,
) -> Result<CriticalPoint, MorseError> {
    let gradient_norm = norm(&map.gradient(&x)?);
    match map.hessian(&x) {
        Ok(h) => {
            let eigenvalues = symmetric_eigenvalues(&h);
            let max_abs = eigenvalues.iter().fold(0.0_f64, |acc, e| acc.max(e.abs()));
            let min_abs = eigenvalues.iter().fold(f64::INFINITY, |acc, e| acc.min(e.abs()));
            let regularity = if min_abs <= cfg.degeneracy_threshold * max_abs.max(1.0) {
                Regularity::Degenerate
            } else {
                Regularity::NonDegenerate
            };
            let morse_index = eigenvalues.iter().filter(|&&e| e < 0.0).count();
            Ok(CriticalPoint {
                location: x,
                gradient_norm,
                hessian_eigenvalues: eigenvalues,
                regularity,
                morse_index,
            })
        }
        Err(_) => Ok(CriticalPoint {
            location: x,
            gradient_norm,
            hessian_eigenvalues: Vec::new(),
            regularity: Regularity::Indeterminate,
            morse_index: 0,
        }),
    }
}

/// Finds critical points of the map on the configured box.
///
/// Runs damped Newton from quasi-random starts, keeps converged points with
/// ‖∇Φ‖ within tolerance that lie inside the box, deduplicates by radius
/// and reports the points sorted by first coordinate, each annotated with
/// its Hessian spectrum and Morse index.
pub fn find_critical_points(
    map: &dyn DifferentiableScalarMap,
    cfg: &SearchConfig,
) -> Result<Vec<CriticalPoint>, MorseError> {
    cfg.validate(map.input_dim())?;
    let starts = halton_points(&cfg.domain, cfg.start_count);
    let mut converged: Vec<Vec<f64>> = Vec::new();
    for start in &starts {
        if let Some(x) = newton_from(map, start, cfg.newton_tol, cfg.max_iterations)? {
            if cfg.contains(&x) {
                converged.push(x);
            }
        }
    }
    converged.sort_by(|a, b| a.partial_cmp(b).expect("finite coordinates"));
    let mut kept: Vec<Vec<f64>> = Vec::new();
    for x in converged {
        if kept.iter().all(|k| distance(k, &x) > cfg.dedupe_radius) {
            kept.push(x);
        }
    }
    kept.into_iter().map(|x| annotate_point(map, x, cfg)).collect()
}

/// Bottleneck theorem case decided by the Z-product analysis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BottleneckCase {
    /// Non-augmented first bottleneck, Z_{j*} nonzero on all samples: no
    /// critical points.
    A,
    /// Non-augmented first bottleneck with zeros of Z_{j*}: every critical
    /// point is degenerate.
    B,
    /// Augmented first bottleneck, Z_{i*} nonzero on all samples: class C1
    /// or C2.
    C,
    /// Augmented first bottleneck with zeros of Z_{i*}: class C2 or C3.
    D,
}

/// Evidence gathered for a bottleneck case verdict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BottleneckCaseReport {
    /// Which theorem case the evidence supports.
    pub case: BottleneckCase,
    /// Split index l used for Z_l: j* for a non-augmented first
    /// bottleneck, i* for an augmented one.
    pub split_index: usize,
    /// Smallest ‖Z_l(x)‖² found by the multistart minimization.
    pub min_squared_norm: f64,
    /// Zeros of Z_l found inside the box (empty for cases a and c).
    pub witnesses: Vec<Vec<f64>>,
    /// True when the verdict rests on the absence of zeros in the sampled
    /// minimization only (cases a and c).
    pub sample_based: bool,
}

/// Squared-norm threshold under which a minimized Z-product counts as zero.
const Z_ZERO_TOL: f64 = 1e-12;

/// Gauss–Newton iteration driving the residual Z_l(x) to zero from one
/// start; returns the final point and its squared residual norm.
fn gauss_newton_z(
    net: &MLPNetwork,
    l: usize,
    start: &[f64],
    max_iterations: usize,
) -> Result<(Vec<f64>, f64), MorseError> {
    let residual = |x: &[f64]| -> Result<Vec<f64>, MorseError> {
        Ok(mlp::z_product(net, x, l)?.row(0))
    };
    let mut x = start.to_vec();
    let mut f = residual(&x)?;
    let mut sq = f.iter().map(|v| v * v).sum::<f64>();
    for _ in 0..max_iterations {
        if sq < Z_ZERO_TOL {
            break;
        }
        // Central-difference Jacobian of the residual.
        let mut jac = Matrix::zeros(f.len(), x.len());
        for j in 0..x.len() {
            let h = 1e-6 * (1.0 + x[j].abs());
            let mut xp = x.clone();
            xp[j] += h;
            let mut xm = x.clone();
            xm[j] -= h;
            let fp = residual(&xp)?;
            let fm = residual(&xm)?;
            for i in 0..f.len() {
                jac.set(i, j, (fp[i] - fm[i]) / (2.0 * h));
            }
        }
        let rhs: Vec<f64> = f.iter().map(|v| -v).collect();
        let delta = least_squares_minimum_norm(&jac, &rhs)?;
        if norm(&delta) <= 1e-15 * (1.0 + norm(&x)) {
            break;
        }
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let candidate: Vec<f64> =
                x.iter().zip(&delta).map(|(xi, di)| xi + step * di).collect();
            let fc = residual(&candidate)?;
            let sc = fc.iter().map(|v| v * v).sum::<f64>();
            if sc < sq {
                x = candidate;
                f = fc;
                sq = sc;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    Ok((x, sq))
}

/// Decides which bottleneck theorem case applies by searching for zeros of
/// the relevant Z-product over the configured box.
///
/// The split index is the first bottleneck layer j* when the widths narrow
/// monotonically from the input, and the prefix maximum index i* when the
/// prefix is augmented. Zeros are located by multistart Gauss–Newton on the
/// residual Z_l(x); a squared norm below 1e-12 counts as a zero.
pub fn bottleneck_case_analysis(
    net: &MLPNetwork,
    cfg: &SearchConfig,
) -> Result<BottleneckCaseReport, MorseError> {
    cfg.validate(net.input_dim())?;
    let arch = classify_architecture(net);
    if arch.verdict != ArchitectureVerdict::Bottleneck {
        return Err(MorseError::Precondition(format!(
            "bottleneck case analysis requires a bottleneck architecture, got {:?}",
            arch.verdict
        )));
    }
    let first = arch
        .first_bottleneck
        .ok_or_else(|| MorseError::Precondition("missing first-bottleneck data".into()))?;
    let (split_index, augmented_prefix) = match first.flavor {
        BottleneckFlavor::NonAugmentedPrefix => (first.layer, false),
        BottleneckFlavor::AugmentedPrefix => (first.prefix_witness, true),
    };
    let starts = halton_points(&cfg.domain, cfg.start_count);
    let mut witnesses: Vec<Vec<f64>> = Vec::new();
    let mut min_sq = f64::INFINITY;
    for start in &starts {
        let (x, sq) = gauss_newton_z(net, split_index, start, 60)?;
        min_sq = min_sq.min(sq);
        if sq < Z_ZERO_TOL && cfg.contains(&x) {
            if witnesses.iter().all(|w| distance(w, &x) > cfg.dedupe_radius) {
                witnesses.push(x);
            }
        }
    }
    witnesses.sort_by(|a, b| a.partial_cmp(b).expect("finite coordinates"));
    let case = match (augmented_prefix, witnesses.is_empty()) {
        (false, true) => BottleneckCase::A,
        (false, false) => BottleneckCase::B,
        (true, true) => BottleneckCase::C,
        (true, false) => BottleneckCase::D,
    };
    Ok(BottleneckCaseReport {
        case,
        split_index,
        min_squared_norm: min_sq,
        witnesses,
        sample_based: matches!(case, BottleneckCase::A | BottleneckCase::C),
    })
}

/// Structural facts handed to the classifier; a theorem shortcut fires when
/// the facts certify the verdict independently of the search.
#[derive(Debug, Clone, PartialEq)]
pub enum TheoremEvidence {
    /// No structural shortcut: the verdict comes from the search alone.
    None,
    /// Non-augmented MLP with all weight matrices full rank: no critical
    /// points exist anywhere.
    NonAugmentedFullRank,
    /// Bottleneck MLP with its Z-product case evidence.
    Bottleneck(BottleneckCaseReport),
    /// Degenerate neural ODE family: every critical point is degenerate.
    DegenerateNodeFamily,
}

/// Classifies a scalar map into C1/C2/C3 from theorem evidence and search.
///
/// Theorem shortcuts are applied first; otherwise the verdict summarizes
/// the critical points found on the box: none gives a domain-limited C1,
/// all non-degenerate gives C2, any degenerate gives C3.
pub fn classify_map(
    map: &dyn DifferentiableScalarMap,
    evidence: &TheoremEvidence,
    cfg: &SearchConfig,
) -> Result<ClassReport, MorseError> {
    let critical_points = find_critical_points(map, cfg)?;
    let mut notes = Vec::new();
    let (verdict, certification) = match evidence {
        TheoremEvidence::NonAugmentedFullRank => {
            notes.push(
                "non-augmented architecture with full-rank weights: the gradient \
                 factorization has full rank everywhere, so no critical point exists"
                    .to_string(),
            );
            if !critical_points.is_empty() {
                notes.push(format!(
                    "warning: search reported {} point(s) despite the theorem",
                    critical_points.len()
                ));
            }
            (MapClass::C1, Certification::TheoremCertified)
        }
        TheoremEvidence::Bottleneck(report) => match report.case {
            BottleneckCase::A => {
                notes.push(format!(
                    "non-augmented first bottleneck with Z_{} nonzero on all samples \
                     (min ‖Z‖² = {:.3e}); the nonvanishing hypothesis is sample-based",
                    report.split_index, report.min_squared_norm
                ));
                (MapClass::C1, Certification::TheoremCertified)
            }
            BottleneckCase::B => {
                notes.push(format!(
                    "non-augmented first bottleneck with zeros of Z_{} found: every \
                     critical point is degenerate",
                    report.split_index
                ));
                (MapClass::C3, Certification::TheoremCertified)
            }
            BottleneckCase::C => {
                notes.push(format!(
                    "augmented first bottleneck with Z_{} nonzero on all samples: \
                     class C1 or C2; verdict taken from the search",
                    report.split_index
                ));
                (search_verdict(&critical_points, &mut notes), Certification::SearchBased)
            }
            BottleneckCase::D => {
                notes.push(format!(
                    "augmented first bottleneck with zeros of Z_{}: class C2 or C3; \
                     verdict taken from the search",
                    report.split_index
                ));
                (search_verdict(&critical_points, &mut notes), Certification::SearchBased)
            }
        },
        TheoremEvidence::DegenerateNodeFamily => {
            if critical_points.is_empty() {
                notes.push(
                    "degenerate neural ODE: no critical point found on the box \
                     (the verdict is domain-limited)"
                        .to_string(),
                );
                (MapClass::C1, Certification::SearchBased)
            } else {
                notes.push(
                    "degenerate neural ODE with a critical point found: every \
                     critical point is degenerate"
                        .to_string(),
                );
                (MapClass::C3, Certification::TheoremCertified)
            }
        }
        TheoremEvidence::None => {
            (search_verdict(&critical_points, &mut notes), Certification::SearchBased)
        }
    };
    Ok(ClassReport {
        verdict,
        certification,
        critical_points,
        domain: cfg.domain.clone(),
        notes,
    })
}

fn search_verdict(points: &[CriticalPoint], notes: &mut Vec<String>) -> MapClass {
    if points.is_empty() {
        notes.push("no critical point found on the box; C1 is domain-limited".to_string());
        return MapClass::C1;
    }
    if points.iter().any(|p| p.regularity == Regularity::Degenerate) {
        return MapClass::C3;
    }
    if points.iter().any(|p| p.regularity == Regularity::Indeterminate) {
        notes.push("some points have an indeterminate Hessian".to_string());
        return MapClass::Undetermined;
    }
    MapClass::C2
}

/// Classifies an MLP, deriving the theorem evidence from its architecture.
pub fn classify_mlp(net: &MLPNetwork, cfg: &SearchConfig) -> Result<ClassReport, MorseError> {
    let arch = classify_architecture(net);
    let evidence = match arch.verdict {
        ArchitectureVerdict::NonAugmented => {
            let mut all_full_rank = true;
            for j in 1..=2 * net.layer_count() {
                if !linalg::is_full_rank(net.v_matrix(j)?)? {
                    all_full_rank = false;
                    break;
                }
            }
            if all_full_rank {
                TheoremEvidence::NonAugmentedFullRank
            } else {
                TheoremEvidence::None
            }
        }
        ArchitectureVerdict::Augmented => TheoremEvidence::None,
        ArchitectureVerdict::Bottleneck => {
            TheoremEvidence::Bottleneck(bottleneck_case_analysis(net, cfg)?)
        }
    };
    classify_map(net, &evidence, cfg)
}

/// Rank of the mixed second derivatives ∂²Φ/∂θ∂x at x, and whether it
/// attains the full input dimension n (the surjectivity hypothesis of the
/// genericity argument).
pub fn morse_rank_condition(net: &MLPNetwork, x: &[f64]) -> Result<(usize, bool), MorseError> {
    let mixed = mlp::mixed_second_derivatives(net, x)?;
    let rank = linalg::rank_of(&mixed)?;
    Ok((rank, rank == net.input_dim()))
}

/// Synthesizes full-rank weights placing a critical point at x.
///
/// For an augmented or bottleneck network the layer of maximal width l*
/// has a dependent row system: a left null row v of V_{l*} kills the Y-side
/// product. The weight V_{l*+1} is then chosen as a full-rank solution of
/// [W̃_L ⋯] V_{l*+1} = v (with the diagonal Ψ inverse absorbed into the
/// right-hand side when l* is odd), so the gradient product vanishes at x.
/// Because the left factor depends on the activations downstream of l*, the
/// linear solve is iterated to a fixed point.
pub fn construct_critical_weights(
    net: &MLPNetwork,
    x: &[f64],
) -> Result<MLPNetwork, MorseError> {
    let arch = classify_architecture(net);
    let l_star = match arch.verdict {
        ArchitectureVerdict::NonAugmented => {
            return Err(MorseError::Unsupported(
                "a non-augmented network admits no critical-point construction \
                 (full-rank weights give a nonvanishing gradient)"
                    .into(),
            ));
        }
        ArchitectureVerdict::Augmented => {
            arch.l_star.ok_or_else(|| MorseError::Precondition("missing l*".into()))?
        }
        ArchitectureVerdict::Bottleneck => {
            arch.bottleneck
                .as_ref()
                .ok_or_else(|| MorseError::Precondition("missing bottleneck witness".into()))?
                .l_star
        }
    };
    let layers = net.layer_count();
    for j in 1..=2 * layers {
        if j == l_star + 1 {
            continue;
        }
        if !linalg::is_full_rank(net.v_matrix(j)?)? {
            return Err(MorseError::Precondition(format!(
                "base weight V_{j} must have full rank"
            )));
        }
    }
    let v_row = left_null_row(net.v_matrix(l_star)?, DEFAULT_RANK_TOL)?.ok_or_else(|| {
        MorseError::Precondition(format!(
            "V_{l_star} has full row rank; no dependent row combination exists"
        ))
    })?;
    let mut result = net.clone();
    let mut best_norm = f64::INFINITY;
    for iteration in 0..100 {
        let (_, trace) = mlp::forward(&result, x)?;
        // Left factor: the Z-side product above V_{l*+1}. For even l* = 2t
        // it ends with Ψ_{t+1}; for odd l* = 2t−1 it ends with W_{t+1} and
        // the layer-t Ψ moves into the right-hand side as its inverse.
        let (factors, target) = if l_star % 2 == 0 {
            let t = l_star / 2;
            let mut factors = Vec::new();
            for s in (t + 1..=layers).rev() {
                factors.push(result.outer_weight(s).clone());
                factors.push(diag_from(&trace.psi[s - 1]));
                if s > t + 1 {
                    factors.push(result.inner_weight(s).clone());
                }
            }
            (factors, v_row.clone())
        } else {
            let t = (l_star + 1) / 2;
            let mut factors = Vec::new();
            for s in (t + 1..=layers).rev() {
                factors.push(result.outer_weight(s).clone());
                factors.push(diag_from(&trace.psi[s - 1]));
                factors.push(result.inner_weight(s).clone());
            }
            let scaled: Vec<f64> = v_row
                .row(0)
                .iter()
                .zip(&trace.psi[t - 1])
                .map(|(v, psi)| v / psi)
                .collect();
            (factors, Matrix::row_vector(&scaled)?)
        };
        let left = if factors.is_empty() {
            Matrix::identity(1)
        } else {
            product_chain(&factors)?
        };
        let solution = linalg::full_rank_solution(&left, &target)?;
        result.set_v_matrix(l_star + 1, solution)?;
        let grad_norm = norm(&mlp::gradient(&result, x)?);
        best_norm = best_norm.min(grad_norm);
        if grad_norm <= 1e-10 {
            break;
        }
        if iteration == 99 && best_norm > 1e-9 {
            return Err(MorseError::IterationLimit { iterations: 100, residual: best_norm });
        }
    }
    let final_norm = norm(&mlp::gradient(&result, x)?);
    if final_norm > 1e-9 {
        return Err(MorseError::IterationLimit { iterations: 100, residual: final_norm });
    }
    for j in 1..=2 * layers {
        if !linalg::is_full_rank(result.v_matrix(j)?)? {
            return Err(MorseError::Precondition(format!(
                "constructed weight V_{j} lost full rank"
            )));
        }
    }
    Ok(result)
}

fn diag_from(entries: &[f64]) -> Matrix {
    let mut m = Matrix::zeros(entries.len(), entries.len());
    for (i, &e) in entries.iter().enumerate() {
        m.set(i, i, e);
    }
    m
}

/// Verifies that a non-degenerate critical point persists under small
/// weight perturbations.
///
/// For 20 random perturbations of the stacked weight entries with norm ε
/// (default 1e-3·‖w‖), Newton started at the unperturbed critical point
/// must converge to a nearby non-degenerate critical point within radius
/// 10·ε·κ, where κ = 1/min|λ| bounds the inverse-Hessian norm.
pub fn persistence_check(
    net: &MLPNetwork,
    x_star: &[f64],
    epsilon: Option<f64>,
    seed: u64,
) -> Result<bool, MorseError> {
    let grad_norm = norm(&mlp::gradient(net, x_star)?);
    if grad_norm > 1e-8 {
        return Err(MorseError::Precondition(format!(
            "x* is not a critical point (‖∇Φ‖ = {grad_norm:.3e})"
        )));
    }
    let eigenvalues = symmetric_eigenvalues(&mlp::hessian(net, x_star)?);
    let max_abs = eigenvalues.iter().fold(0.0_f64, |acc, e| acc.max(e.abs()));
    let min_abs = eigenvalues.iter().fold(f64::INFINITY, |acc, e| acc.min(e.abs()));
    if min_abs <= 1e-6 * max_abs.max(1.0) {
        return Err(MorseError::Precondition(
            "x* is a degenerate critical point; persistence requires non-degeneracy".into(),
        ));
    }
    let layers = net.layer_count();
    let mut weight_norm_sq = 0.0;
    for j in 1..=2 * layers {
        weight_norm_sq += net.v_matrix(j)?.entries().iter().map(|e| e * e).sum::<f64>();
    }
    let eps = epsilon.unwrap_or(1e-3 * weight_norm_sq.sqrt());
    if eps == 0.0 {
        return Ok(true);
    }
    if !(eps > 0.0) {
        return Err(MorseError::Precondition("perturbation scale must be non-negative".into()));
    }
    let radius = 10.0 * eps / min_abs;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..20 {
        // Random direction over all weight entries, scaled to norm ε.
        let mut direction: Vec<Vec<f64>> = Vec::with_capacity(2 * layers);
        let mut dir_norm_sq = 0.0;
        for j in 1..=2 * layers {
            let count = net.v_matrix(j)?.entries().len();
            let entries: Vec<f64> =
                (0..count).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
            dir_norm_sq += entries.iter().map(|e| e * e).sum::<f64>();
            direction.push(entries);
        }
        let scale = eps / dir_norm_sq.sqrt();
        let mut perturbed = net.clone();
        for j in 1..=2 * layers {
            let base = net.v_matrix(j)?;
            let mut m = base.clone();
            for r in 0..m.rows() {
                for c in 0..m.cols() {
                    let delta = direction[j - 1][r * m.cols() + c] * scale;
                    m.set(r, c, base.get(r, c) + delta);
                }
            }
            perturbed.set_v_matrix(j, m)?;
        }
        let converged = newton_from(&perturbed, x_star, 1e-10, 100)?;
        let Some(x_new) = converged else {
            return Ok(false);
        };
        if distance(&x_new, x_star) > radius {
            return Ok(false);
        }
        let eig = symmetric_eigenvalues(&mlp::hessian(&perturbed, &x_new)?);
        let new_max = eig.iter().fold(0.0_f64, |acc, e| acc.max(e.abs()));
        let new_min = eig.iter().fold(f64::INFINITY, |acc, e| acc.min(e.abs()));
        if new_min <= 1e-6 * new_max.max(1.0) {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Measures the best possible approximation of the shifted squared norm
/// Ψ_y(x) = Σ (x_i − y_i)² by a map without critical points.
///
/// Returns the maximum of |Φ(x) − Ψ_y(x)| over quasi-random samples in the
/// closed ball of radius r around y (interior points plus their radial
/// projections to the sphere). For a map of class C1 the theorem bounds the
/// supremum from below by r²/2.
pub fn approximation_lower_bound_experiment(
    map: &dyn DifferentiableScalarMap,
    y: &[f64],
    r: f64,
    samples: usize,
    domain: &[(f64, f64)],
) -> Result<f64, MorseError> {
    let n = map.input_dim();
    if y.len() != n {
        return Err(MorseError::Precondition(format!(
            "center has {} coordinates, map expects {n}",
            y.len()
        )));
    }
    if !(r > 0.0) || samples == 0 {
        return Err(MorseError::Precondition("radius and sample count must be positive".into()));
    }
    if domain.len() != n {
        return Err(MorseError::Domain("domain dimension mismatch".into()));
    }
    for (i, &(lo, hi)) in domain.iter().enumerate() {
        if y[i] - r < lo || y[i] + r > hi {
            return Err(MorseError::Domain(format!(
                "ball of radius {r} around the center leaves the domain on axis {i}"
            )));
        }
    }
    let cube: Vec<(f64, f64)> = y.iter().map(|&yi| (yi - r, yi + r)).collect();
    let mut max_dev = 0.0_f64;
    let mut check = |x: &[f64]| -> Result<(), MorseError> {
        let target: f64 = x.iter().zip(y).map(|(xi, yi)| (xi - yi) * (xi - yi)).sum();
        let dev = (map.value(x)? - target).abs();
        max_dev = max_dev.max(dev);
        Ok(())
    };
    check(y)?;
    for point in halton_points(&cube, samples) {
        let dist = distance(&point, y);
        if dist <= r {
            check(&point)?;
        }
        // Radial projection puts a sample on the sphere, where the target
        // attains its maximum r².
        if dist > 0.0 {
            let boundary: Vec<f64> = point
                .iter()
                .zip(y)
                .map(|(pi, yi)| yi + (pi - yi) * r / dist)
                .collect();
            check(&boundary)?;
        }
    }
    Ok(max_dev)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mlp::Activation;

    fn mat(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    /// Reduced map of the rank-one softplus example: Φ̄(y) = 2 ln(1+e^y) −
    /// ln(1+e^{2y}), with a single non-degenerate critical point at y = 0
    /// and Hessian value −1/2.
    fn reduced_classes_example() -> MLPNetwork {
        MLPNetwork::with_uniform_activation(
            vec![mat(&[&[1.0], &[2.0]])],
            vec![mat(&[&[2.0, -1.0]])],
            vec![vec![0.0, 0.0]],
            vec![vec![0.0]],
            Activation::Softplus,
        )
        .unwrap()
    }

    /// Full-rank non-augmented net: dims (3, 2, 1), no critical points.
    fn non_augmented_example() -> MLPNetwork {
        MLPNetwork::with_uniform_activation(
            vec![mat(&[&[1.0, 0.5, -0.25], &[-0.5, 1.0, 0.75]])],
            vec![mat(&[&[1.0, -2.0]])],
            vec![vec![0.1, -0.2]],
            vec![vec![0.3]],
            Activation::Softplus,
        )
        .unwrap()
    }

    /// Two-layer bottleneck with dims (2, 1, 2, 1, 1): W₁ = (1,1),
    /// W̃₁ = (1,1)ᵀ, W₂ = (1,1), W̃₂ = 1. Z₁ = 2σ₂′(a₂) never vanishes.
    fn bottleneck_case_a() -> MLPNetwork {
        MLPNetwork::with_uniform_activation(
            vec![mat(&[&[1.0, 1.0]]), mat(&[&[1.0, 1.0]])],
            vec![mat(&[&[1.0], &[1.0]]), mat(&[&[1.0]])],
            vec![vec![0.0], vec![0.1]],
            vec![vec![0.0, 0.0], vec![0.0]],
            Activation::Softplus,
        )
        .unwrap()
    }

    /// Same dims with W̃₁ = (1,0)ᵀ and W₂ = (0,1): Z₁ ≡ 0 and the gradient
    /// vanishes identically.
    fn bottleneck_case_b() -> MLPNetwork {
        MLPNetwork::with_uniform_activation(
            vec![mat(&[&[1.0, 1.0]]), mat(&[&[0.0, 1.0]])],
            vec![mat(&[&[1.0], &[0.0]]), mat(&[&[1.0]])],
            vec![vec![0.0], vec![0.1]],
            vec![vec![0.0, 0.0], vec![0.0]],
            Activation::Softplus,
        )
        .unwrap()
    }

    /// Scalar-input augmented bottleneck with dims (1, 2, 1, 2, 1, 1):
    /// W₁ = (1,1)ᵀ, W̃₁ = (1,α), W₂ = (1,1)ᵀ, W̃₂ = (1,β).
    fn bottleneck_alpha_beta(alpha: f64, beta: f64) -> MLPNetwork {
        MLPNetwork::with_uniform_activation(
            vec![mat(&[&[1.0], &[1.0]]), mat(&[&[1.0], &[1.0]])],
            vec![mat(&[&[1.0, alpha]]), mat(&[&[1.0, beta]])],
            vec![vec![0.0, 1.0], vec![-2.0, 2.0]],
            vec![vec![0.0], vec![0.0]],
            Activation::Softplus,
        )
        .unwrap()
    }

    fn box_domain(n: usize, half_width: f64) -> Vec<(f64, f64)> {
        vec![(-half_width, half_width); n]
    }

    #[test]
    fn reduced_classes_example_has_single_nondegenerate_point() {
        let net = reduced_classes_example();
        let mut cfg = SearchConfig::new(vec![(-3.0, 3.0)]);
        cfg.start_count = 32;
        let points = find_critical_points(&net, &cfg).unwrap();
        assert_eq!(points.len(), 1);
        let p = &points[0];
        assert!(p.location[0].abs() <= 1e-8, "critical point at {}", p.location[0]);
        assert!(p.gradient_norm <= cfg.newton_tol);
        assert_eq!(p.regularity, Regularity::NonDegenerate);
        assert_eq!(p.hessian_eigenvalues.len(), 1);
        assert!((p.hessian_eigenvalues[0] + 0.5).abs() <= 1e-8);
        assert_eq!(p.morse_index, 1);
    }

    #[test]
    fn non_augmented_full_rank_has_no_critical_points() {
        let net = non_augmented_example();
        let cfg = SearchConfig::new(box_domain(3, 2.0));
        let points = find_critical_points(&net, &cfg).unwrap();
        assert!(points.is_empty());
        let report = classify_mlp(&net, &cfg).unwrap();
        assert_eq!(report.verdict, MapClass::C1);
        assert_eq!(report.certification, Certification::TheoremCertified);
    }

    #[test]
    fn bottleneck_case_a_detected_and_certified() {
        let net = bottleneck_case_a();
        let cfg = SearchConfig::new(box_domain(2, 2.0));
        let report = bottleneck_case_analysis(&net, &cfg).unwrap();
        assert_eq!(report.case, BottleneckCase::A);
        assert_eq!(report.split_index, 1);
        assert!(report.witnesses.is_empty());
        assert!(report.sample_based);
        assert!(report.min_squared_norm > 1e-6);
        let class = classify_mlp(&net, &cfg).unwrap();
        assert_eq!(class.verdict, MapClass::C1);
        assert_eq!(class.certification, Certification::TheoremCertified);
    }

    #[test]
    fn bottleneck_case_b_gives_degenerate_class() {
        let net = bottleneck_case_b();
        let cfg = SearchConfig::new(box_domain(2, 2.0));
        let report = bottleneck_case_analysis(&net, &cfg).unwrap();
        assert_eq!(report.case, BottleneckCase::B);
        assert!(!report.witnesses.is_empty());
        assert!(report.min_squared_norm < 1e-12);
        let class = classify_mlp(&net, &cfg).unwrap();
        assert_eq!(class.verdict, MapClass::C3);
        assert_eq!(class.certification, Certification::TheoremCertified);
        // The gradient vanishes identically, so every search start is a
        // critical point and every Hessian is zero.
        assert!(!class.critical_points.is_empty());
        for p in &class.critical_points {
            assert_eq!(p.regularity, Regularity::Degenerate);
        }
    }

    #[test]
    fn bottleneck_case_c_nonzero_z_for_positive_alpha() {
        // α > 0 keeps Z₁ and the gradient bounded away from zero: softplus
        // derivatives are positive, so both factors stay positive.
        let net = bottleneck_alpha_beta(0.5, 1.0);
        let cfg = SearchConfig::new(box_domain(1, 3.0));
        let report = bottleneck_case_analysis(&net, &cfg).unwrap();
        assert_eq!(report.case, BottleneckCase::C);
        let class = classify_mlp(&net, &cfg).unwrap();
        assert_eq!(class.verdict, MapClass::C1);
        assert_eq!(class.certification, Certification::SearchBased);
    }

    #[test]
    fn bottleneck_case_d_found_with_negative_beta() {
        // σ₂′ is a sigmoid, so the ratio σ₂₁′/σ₂₂′ of the shifted copies
        // sweeps (e⁻⁴, 1); β = −1/2 puts a zero of σ₂₁′ + β σ₂₂′ inside the
        // box, so Z₁ has a root and case (d) applies.
        let net = bottleneck_alpha_beta(0.5, -0.5);
        let cfg = SearchConfig::new(box_domain(1, 6.0));
        let report = bottleneck_case_analysis(&net, &cfg).unwrap();
        assert_eq!(report.case, BottleneckCase::D);
        assert!(!report.witnesses.is_empty());
        // With α ∉ S (α > 0), every critical point is non-degenerate and
        // the class is C2.
        let class = classify_mlp(&net, &cfg).unwrap();
        assert_eq!(class.verdict, MapClass::C2);
        for p in &class.critical_points {
            assert_eq!(p.regularity, Regularity::NonDegenerate);
        }
    }

    #[test]
    fn construct_critical_weights_augmented_scalar() {
        // dims (1, 2, 1): augmented, l* = 1.
        let net = MLPNetwork::with_uniform_activation(
            vec![mat(&[&[1.0], &[-0.5]])],
            vec![mat(&[&[0.75, 1.25]])],
            vec![vec![0.2, -0.1]],
            vec![vec![0.05]],
            Activation::Softplus,
        )
        .unwrap();
        let built = construct_critical_weights(&net, &[0.3]).unwrap();
        let grad = mlp::gradient(&built, &[0.3]).unwrap();
        assert!(norm(&grad) <= 1e-9, "gradient norm {}", norm(&grad));
        for j in 1..=2 * built.layer_count() {
            assert!(linalg::is_full_rank(built.v_matrix(j).unwrap()).unwrap());
        }
    }

    #[test]
    fn construct_critical_weights_bottleneck() {
        // dims (2, 1, 2, 1, 1): bottleneck with l* = 2.
        let net = MLPNetwork::with_uniform_activation(
            vec![mat(&[&[1.0, 0.5]]), mat(&[&[0.8, -0.6]])],
            vec![mat(&[&[1.0], &[-1.0]]), mat(&[&[1.0]])],
            vec![vec![0.1], vec![0.2]],
            vec![vec![0.0, -0.1], vec![0.0]],
            Activation::Softplus,
        )
        .unwrap();
        let built = construct_critical_weights(&net, &[0.0, 0.0]).unwrap();
        let grad = mlp::gradient(&built, &[0.0, 0.0]).unwrap();
        assert!(norm(&grad) <= 1e-9, "gradient norm {}", norm(&grad));
        for j in 1..=2 * built.layer_count() {
            assert!(linalg::is_full_rank(built.v_matrix(j).unwrap()).unwrap());
        }
    }

    #[test]
    fn construct_critical_weights_rejects_non_augmented() {
        let net = non_augmented_example();
        let err = construct_critical_weights(&net, &[0.0, 0.0, 0.0]).unwrap_err();
        assert!(matches!(err, MorseError::Unsupported(_)));
    }

    #[test]
    fn constructed_point_recovered_by_perturbed_newton() {
        let net = MLPNetwork::with_uniform_activation(
            vec![mat(&[&[1.0], &[-0.5]])],
            vec![mat(&[&[0.75, 1.25]])],
            vec![vec![0.2, -0.1]],
            vec![vec![0.05]],
            Activation::Softplus,
        )
        .unwrap();
        let built = construct_critical_weights(&net, &[0.3]).unwrap();
        let found = newton_from(&built, &[0.3 + 1e-3], 1e-10, 100).unwrap().unwrap();
        assert!((found[0] - 0.3).abs() <= 1e-6, "recovered {}", found[0]);
    }

    #[test]
    fn morse_rank_condition_on_augmented_and_constant_nets() {
        // Augmented full-rank net at a generic point: rank n.
        let net = MLPNetwork::with_uniform_activation(
            vec![mat(&[&[1.0], &[-0.5]])],
            vec![mat(&[&[0.75, 1.25]])],
            vec![vec![0.2, -0.1]],
            vec![vec![0.05]],
            Activation::Softplus,
        )
        .unwrap();
        let (rank, ok) = morse_rank_condition(&net, &[0.4]).unwrap();
        assert_eq!(rank, 1);
        assert!(ok);
        // Zero inner and outer weights give a constant map whose mixed
        // second derivatives vanish identically: rank 0.
        let constant = MLPNetwork::with_uniform_activation(
            vec![mat(&[&[0.0], &[0.0]])],
            vec![mat(&[&[0.0, 0.0]])],
            vec![vec![0.2, -0.1]],
            vec![vec![0.05]],
            Activation::Softplus,
        )
        .unwrap();
        let (rank, ok) = morse_rank_condition(&constant, &[0.4]).unwrap();
        assert_eq!(rank, 0);
        assert!(!ok);
    }

    /// One-layer augmented net with w̃₁w̃₂ > 0 tuned to have a critical
    /// point: ∇Φ = w₁w̃₁σ′(a₁) + w₂w̃₂σ′(a₂) with w₁w̃₁ > 0 > w₂w̃₂.
    fn augmented_with_nondegenerate_point() -> MLPNetwork {
        MLPNetwork::with_uniform_activation(
            vec![mat(&[&[1.0], &[-2.0]])],
            vec![mat(&[&[1.0, 1.0]])],
            vec![vec![0.0, 0.5]],
            vec![vec![0.0]],
            Activation::Softplus,
        )
        .unwrap()
    }

    #[test]
    fn persistence_holds_for_nondegenerate_point() {
        let net = augmented_with_nondegenerate_point();
        let cfg = SearchConfig::new(box_domain(1, 4.0));
        let points = find_critical_points(&net, &cfg).unwrap();
        assert_eq!(points.len(), 1);
        let p = &points[0];
        assert_eq!(p.regularity, Regularity::NonDegenerate);
        assert!(persistence_check(&net, &p.location, None, 7).unwrap());
    }

    #[test]
    fn persistence_rejects_degenerate_point() {
        let net = bottleneck_case_b();
        let err = persistence_check(&net, &[0.0, 0.0], None, 7).unwrap_err();
        assert!(matches!(err, MorseError::Precondition(_)));
    }

    #[test]
    fn persistence_with_zero_epsilon_is_trivial() {
        let net = augmented_with_nondegenerate_point();
        let cfg = SearchConfig::new(box_domain(1, 4.0));
        let points = find_critical_points(&net, &cfg).unwrap();
        assert!(persistence_check(&net, &points[0].location, Some(0.0), 7).unwrap());
    }

    #[test]
    fn approximation_bound_holds_for_maps_without_critical_points() {
        let net = non_augmented_example();
        let domain = box_domain(3, 2.0);
        let measured =
            approximation_lower_bound_experiment(&net, &[0.0, 0.0, 0.0], 1.0, 400, &domain)
                .unwrap();
        assert!(measured >= 0.45, "measured sup {measured}");
        let small =
            approximation_lower_bound_experiment(&net, &[0.0, 0.0, 0.0], 0.1, 400, &domain)
                .unwrap();
        assert!(small >= 0.0045, "measured sup {small}");
    }

    #[test]
    fn approximation_bound_rejects_ball_outside_domain() {
        let net = non_augmented_example();
        let domain = box_domain(3, 0.5);
        let err =
            approximation_lower_bound_experiment(&net, &[0.0, 0.0, 0.0], 1.0, 100, &domain)
                .unwrap_err();
        assert!(matches!(err, MorseError::Domain(_)));
    }

    #[test]
    fn search_config_validation() {
        let mut cfg = SearchConfig::new(vec![(1.0, -1.0)]);
        let net = reduced_classes_example();
        assert!(matches!(
            find_critical_points(&net, &cfg),
            Err(MorseError::InvalidConfig(_))
        ));
        cfg = SearchConfig::new(vec![(-1.0, 1.0), (-1.0, 1.0)]);
        assert!(matches!(
            find_critical_points(&net, &cfg),
            Err(MorseError::InvalidConfig(_))
        ));
    }
}
