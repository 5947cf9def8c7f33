//! Property-based tests for the structural invariants: rank behaviour of
//! the linear-algebra helpers, architecture classification on width
//! sequences, derivative consistency of random networks, and the flow
//! Jacobian of random linear fields.

use morsenet::linalg::{
    self, rank_of, Matrix,
};
use morsenet::mlp::{self, Activation, ArchitectureVerdict, MLPNetwork};
use morsenet::node::{self, IntegratorConfig, VectorField};
use proptest::prelude::*;

fn matrix_strategy(rows: usize, cols: usize) -> impl Strategy<Value = Matrix> {
    proptest::collection::vec(-2.0..2.0f64, rows * cols)
        .prop_map(move |data| Matrix::new(rows, cols, data).unwrap())
}

fn vector_strategy(len: usize) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(-1.0..1.0f64, len)
}

/// Random single-hidden-layer softplus network with widths (n, m, 1).
fn net_strategy(n: usize, m: usize) -> impl Strategy<Value = MLPNetwork> {
    (matrix_strategy(m, n), matrix_strategy(1, m), vector_strategy(m), vector_strategy(1))
        .prop_map(|(w, w_tilde, b, b_tilde)| {
            MLPNetwork::with_uniform_activation(
                vec![w],
                vec![w_tilde],
                vec![b],
                vec![b_tilde],
                Activation::Softplus,
            )
            .unwrap()
        })
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    /// Row permutation and transposition leave the numerical rank unchanged.
    #[test]
    fn rank_invariant_under_permutation_and_transpose(
        m in matrix_strategy(3, 4),
        perm in Just([2usize, 0, 1]),
    ) {
        let rank = rank_of(&m).unwrap();
        let permuted = Matrix::from_rows(
            &perm.iter().map(|&i| m.row(i)).collect::<Vec<_>>(),
        ).unwrap();
        prop_assert_eq!(rank_of(&permuted).unwrap(), rank);
        let transposed = Matrix::from_rows(
            &(0..m.cols())
                .map(|j| (0..m.rows()).map(|i| m.get(i, j)).collect())
                .collect::<Vec<_>>(),
        ).unwrap();
        prop_assert_eq!(rank_of(&transposed).unwrap(), rank);
    }

    /// The explicit solution B of A·B = C has full rank and solves the
    /// system whenever A and C are nonzero rows with n <= m.
    #[test]
    fn full_rank_solution_solves_the_system(
        n in 1usize..=4,
        extra in 0usize..=3,
        seed_data in proptest::collection::vec(0.2..2.0f64, 16),
        signs in proptest::collection::vec(proptest::bool::ANY, 16),
    ) {
        let m = n + extra;
        let entry = |k: usize| if signs[k] { seed_data[k] } else { -seed_data[k] };
        let a = Matrix::new(n, 1, (0..n).map(entry).collect()).unwrap();
        let a = Matrix::from_rows(&[a.entries().to_vec()]).unwrap();
        let c = Matrix::from_rows(&[(n..n + m).map(entry).collect()]).unwrap();
        let b = linalg::full_rank_solution(&a, &c).unwrap();
        prop_assert_eq!(rank_of(&b).unwrap(), n);
        let product = a.matmul(&b).unwrap();
        for j in 0..m {
            prop_assert!((product.get(0, j) - c.get(0, j)).abs() <= 1e-9);
        }
    }

    /// Non-increasing width sequences are never classified as augmented,
    /// and strictly increasing front-loaded ones never as non-augmented.
    #[test]
    fn width_monotonicity_determines_verdict(
        start in 2usize..=5,
        depth in 1usize..=3,
    ) {
        let decreasing: Vec<usize> = (0..=2 * depth)
            .map(|i| start.saturating_sub(i / 2).max(1))
            .collect();
        let verdict = mlp::classify_dims(&decreasing).verdict;
        prop_assert_ne!(verdict, ArchitectureVerdict::Augmented);

        let mut increasing: Vec<usize> = (0..=2 * depth).map(|i| start + i).collect();
        *increasing.last_mut().unwrap() = 1;
        // Widths grow before the scalar output, so some width must shrink
        // later: the sequence has a bottleneck or stays augmented.
        let verdict = mlp::classify_dims(&increasing).verdict;
        prop_assert_ne!(verdict, ArchitectureVerdict::NonAugmented);
    }

    /// Analytic gradients agree with central finite differences.
    #[test]
    fn gradient_matches_finite_differences(
        net in net_strategy(2, 3),
        x in vector_strategy(2),
    ) {
        let grad = mlp::gradient(&net, &x).unwrap();
        let h = 1e-6;
        for j in 0..2 {
            let mut xp = x.clone();
            xp[j] += h;
            let mut xm = x.clone();
            xm[j] -= h;
            let fd = (mlp::forward(&net, &xp).unwrap().0
                - mlp::forward(&net, &xm).unwrap().0) / (2.0 * h);
            prop_assert!((grad[j] - fd).abs() <= 1e-6 * (1.0 + fd.abs()));
        }
    }

    /// The Hessian is symmetric.
    #[test]
    fn hessian_is_symmetric(
        net in net_strategy(3, 4),
        x in vector_strategy(3),
    ) {
        let h = mlp::hessian(&net, &x).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                prop_assert!((h.get(i, j) - h.get(j, i)).abs() <= 1e-10);
            }
        }
    }

    /// The gradient splits as (partial product) x (remaining product) at
    /// every interior index.
    #[test]
    fn gradient_product_splits_consistently(
        net in net_strategy(2, 3),
        x in vector_strategy(2),
    ) {
        let grad = mlp::gradient(&net, &x).unwrap();
        let (_, trace) = mlp::forward(&net, &x).unwrap();
        for split in 1..2 * net.layer_count() {
            let (z, y) = mlp::split_gradient_product(&net, &trace, split).unwrap();
            let recombined = z.matmul(&y).unwrap();
            for j in 0..2 {
                prop_assert!((recombined.get(0, j) - grad[j]).abs() <= 1e-9);
            }
        }
    }

    /// Non-augmented full-rank networks have nowhere-vanishing gradients.
    #[test]
    fn non_augmented_gradient_never_vanishes(
        net in net_strategy(3, 2),
        x in vector_strategy(3),
    ) {
        let full_rank = (1..=2).all(|j| {
            linalg::is_full_rank(net.v_matrix(j).unwrap()).unwrap()
        });
        if full_rank {
            prop_assert!(norm(&mlp::gradient(&net, &x).unwrap()) > 0.0);
        }
    }

    /// On augmented networks the mixed second derivatives with respect to
    /// the outermost weights span the whole input space.
    #[test]
    fn mixed_derivatives_have_full_rank_on_augmented_nets(
        net in net_strategy(2, 4),
        x in vector_strategy(2),
    ) {
        let mixed = mlp::mixed_second_derivatives(&net, &x).unwrap();
        prop_assert_eq!(rank_of(&mixed).unwrap(), 2);
    }

    /// For linear fields the flow Jacobian matches finite differences and
    /// its determinant matches the integrated trace.
    #[test]
    fn flow_jacobian_and_liouville_hold_for_linear_fields(
        a_mat in matrix_strategy(2, 2),
        start in vector_strategy(2),
    ) {
        let field = VectorField::AffineLinear { matrix: a_mat, offset: vec![0.0, 0.0] };
        let cfg = IntegratorConfig::default();
        let flow = node::flow_with_jacobian(&field, &start, 0.5, &cfg).unwrap();
        prop_assert!(flow.liouville_residual <= 1e-6);
        let h = 1e-6;
        for j in 0..2 {
            let mut sp = start.clone();
            sp[j] += h;
            let mut sm = start.clone();
            sm[j] -= h;
            let fp = node::flow_with_jacobian(&field, &sp, 0.5, &cfg).unwrap().state;
            let fm = node::flow_with_jacobian(&field, &sm, 0.5, &cfg).unwrap().state;
            for i in 0..2 {
                let fd = (fp[i] - fm[i]) / (2.0 * h);
                prop_assert!((flow.jacobian.get(i, j) - fd).abs() <= 1e-4 * (1.0 + fd.abs()));
            }
        }
    }
}
